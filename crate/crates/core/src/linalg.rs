//! Small dense linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen, SVD};

use crate::error::{Error, Result};

pub fn identity(n: usize) -> DMatrix<f64> {
    DMatrix::identity(n, n)
}

/// `A ⊗ B`, tolerating zero-sized operands.
pub fn kron(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    if a.is_empty() || b.is_empty() {
        return DMatrix::zeros(a.nrows() * b.nrows(), a.ncols() * b.ncols());
    }
    a.kronecker(b)
}

pub fn kron_vec(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(a.len() * b.len());
    for (i, ai) in a.iter().enumerate() {
        for (j, bj) in b.iter().enumerate() {
            out[i * b.len() + j] = ai * bj;
        }
    }
    out
}

/// Stack column vectors side by side.
pub fn hstack_cols(cols: &[DVector<f64>], nrows: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(nrows, cols.len());
    for (j, c) in cols.iter().enumerate() {
        m.set_column(j, c);
    }
    m
}

pub fn vstack(parts: &[&DMatrix<f64>]) -> DMatrix<f64> {
    let ncols = parts.first().map_or(0, |m| m.ncols());
    let nrows = parts.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(nrows, ncols);
    let mut r = 0;
    for m in parts {
        assert_eq!(m.ncols(), ncols, "vstack column mismatch");
        out.view_mut((r, 0), (m.nrows(), ncols)).copy_from(*m);
        r += m.nrows();
    }
    out
}

pub fn vstack_vec(parts: &[&DVector<f64>]) -> DVector<f64> {
    let n = parts.iter().map(|v| v.len()).sum();
    let mut out = DVector::zeros(n);
    let mut r = 0;
    for v in parts {
        out.rows_mut(r, v.len()).copy_from(*v);
        r += v.len();
    }
    out
}

/// Assemble a block matrix from a grid of blocks. Every block row must
/// agree in height and every block column in width.
pub fn block(rows: &[Vec<DMatrix<f64>>]) -> Result<DMatrix<f64>> {
    let ncols_blocks = rows.first().map_or(0, |r| r.len());
    let heights: Vec<usize> = rows.iter().map(|r| r[0].nrows()).collect();
    let widths: Vec<usize> = (0..ncols_blocks).map(|j| rows[0][j].ncols()).collect();
    for (i, row) in rows.iter().enumerate() {
        if row.len() != ncols_blocks {
            return Err(Error::dim(format!("block row {i}"), ncols_blocks, row.len()));
        }
        for (j, b) in row.iter().enumerate() {
            if b.shape() != (heights[i], widths[j]) {
                return Err(Error::dim(
                    format!("block ({i},{j})"),
                    format!("{}x{}", heights[i], widths[j]),
                    format!("{}x{}", b.nrows(), b.ncols()),
                ));
            }
        }
    }
    let mut out = DMatrix::zeros(heights.iter().sum(), widths.iter().sum());
    let mut r = 0;
    for (i, row) in rows.iter().enumerate() {
        let mut c = 0;
        for (j, b) in row.iter().enumerate() {
            out.view_mut((r, c), (heights[i], widths[j])).copy_from(b);
            c += widths[j];
        }
        r += heights[i];
    }
    Ok(out)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues
}

pub fn min_sym_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max_sym_eig(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Principal square root of a symmetric positive semidefinite matrix.
pub fn sym_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(symmetrize(m));
    let scale = eig.eigenvalues.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&l| l < -1e-12 * scale) {
        return Err(Error::Parameter("matrix is not positive semidefinite".into()));
    }
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    if m.is_empty() {
        return DVector::zeros(0);
    }
    SVD::new(m.clone(), false, false).singular_values
}

/// Number of singular values above `rel_tol` times the largest.
pub fn numerical_rank(m: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = singular_values(m);
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

/// Minimum-norm least-squares solution of `A X = B` using a truncated SVD.
pub fn min_norm_solve(a: &DMatrix<f64>, b: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if a.is_empty() {
        return DMatrix::zeros(a.ncols(), b.ncols());
    }
    let svd = SVD::new(a.clone(), true, true);
    let smax = svd.singular_values.iter().copied().fold(0.0, f64::max);
    let eps = (rel_tol * smax).max(f64::MIN_POSITIVE);
    svd.solve(b, eps).expect("SVD computed with both factors")
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn all_finite(m: &DMatrix<f64>) -> bool {
    m.iter().all(|v| v.is_finite())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kron_of_identity_blocks() {
        let a = DMatrix::from_row_slice(2, 1, &[1.0, 2.0]);
        let b = identity(2);
        let k = kron(&a, &b);
        assert_eq!(k, DMatrix::from_row_slice(4, 2, &[1., 0., 0., 1., 2., 0., 0., 2.]));
        assert_eq!(kron(&DMatrix::zeros(0, 0), &b).shape(), (0, 0));
    }

    #[test]
    fn kron_vec_matches_matrix_kron() {
        let a = DVector::from_vec(vec![1.0, -2.0]);
        let b = DVector::from_vec(vec![3.0, 4.0, 5.0]);
        let m = kron(&DMatrix::from_column_slice(2, 1, a.as_slice()), &DMatrix::from_column_slice(3, 1, b.as_slice()));
        assert_eq!(kron_vec(&a, &b).as_slice(), m.as_slice());
    }

    #[test]
    fn block_rejects_ragged_grid() {
        let ok = block(&[
            vec![identity(2), DMatrix::zeros(2, 1)],
            vec![DMatrix::zeros(1, 2), identity(1)],
        ])
        .unwrap();
        assert_eq!(ok, identity(3));
        let bad = block(&[
            vec![identity(2), DMatrix::zeros(2, 1)],
            vec![DMatrix::zeros(1, 3), identity(1)],
        ]);
        assert!(bad.is_err());
    }

    #[test]
    fn sqrt_and_radius() {
        let m = DMatrix::from_row_slice(2, 2, &[4.0, 0.0, 0.0, 9.0]);
        let s = sym_sqrt(&m).unwrap();
        assert!((s[(0, 0)] - 2.0).abs() < 1e-14 && (s[(1, 1)] - 3.0).abs() < 1e-14);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -0.5, 0.5, 0.0]);
        assert!((spectral_radius(&rot) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn min_norm_solution_of_underdetermined_system() {
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let b = DMatrix::from_row_slice(1, 1, &[2.0]);
        let x = min_norm_solve(&a, &b, 1e-12);
        assert!((x[(0, 0)] - 1.0).abs() < 1e-14 && (x[(1, 0)] - 1.0).abs() < 1e-14);
    }
}

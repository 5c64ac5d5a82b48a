//! Data matrices, persistency of excitation, and the data-based
//! closed-loop representation of an LPV state-feedback interconnection.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::{SchedulingArgs, SchedulingBasis};
use crate::dictionary::{format_float, NlDataDictionary};
use crate::error::{Error, Result};
use crate::linalg::{self, kron, kron_vec};
use crate::velocity::VelocityDictionary;

pub const DEFAULT_RANK_TOL: f64 = 1e-8;

/// Data matrices of an LPV data dictionary.
///
/// Column `j` pairs the signals at sample `j` with the state at `j + 1`:
/// `x_next[:, j]` is the successor of `x[:, j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrices {
    pub u: DMatrix<f64>,
    pub up: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub xp: DMatrix<f64>,
    pub x_next: DMatrix<f64>,
    /// `[X; X^p; U; U^p]`.
    pub g: DMatrix<f64>,
    /// Scheduling sample attached to each column.
    pub p: Vec<DVector<f64>>,
    n_x: usize,
    n_u: usize,
    n_p: usize,
}

impl DataMatrices {
    /// Build from aligned sequences of length `M ≥ 2`; the result has
    /// `M − 1` columns.
    pub fn from_sequences(x: &[DVector<f64>], p: &[DVector<f64>], u: &[DVector<f64>]) -> Result<Self> {
        let m = x.len();
        if p.len() != m || u.len() != m {
            return Err(Error::dim("data sequences (x, p, u)", m, format!("({}, {})", p.len(), u.len())));
        }
        if m < 2 {
            return Err(Error::InsufficientData(format!(
                "data matrices need at least 2 samples, got {m}"
            )));
        }
        let (n_x, n_p, n_u) = (x[0].len(), p[0].len(), u[0].len());
        for j in 0..m {
            if x[j].len() != n_x || p[j].len() != n_p || u[j].len() != n_u {
                return Err(Error::dim(format!("data sample {j}"), format!("({n_x}, {n_p}, {n_u})"), format!("({}, {}, {})", x[j].len(), p[j].len(), u[j].len())));
            }
        }
        let cols = m - 1;
        let xs = linalg::hstack_cols(&x[..cols], n_x);
        let us = linalg::hstack_cols(&u[..cols], n_u);
        let xp_cols: Vec<_> = (0..cols).map(|j| kron_vec(&p[j], &x[j])).collect();
        let up_cols: Vec<_> = (0..cols).map(|j| kron_vec(&p[j], &u[j])).collect();
        let xp = linalg::hstack_cols(&xp_cols, n_x * n_p);
        let up = linalg::hstack_cols(&up_cols, n_u * n_p);
        let x_next = linalg::hstack_cols(&x[1..], n_x);
        let g = linalg::vstack(&[&xs, &xp, &us, &up]);
        Ok(Self {
            u: us,
            up,
            x: xs,
            xp,
            x_next,
            g,
            p: p[..cols].to_vec(),
            n_x,
            n_u,
            n_p,
        })
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn n_cols(&self) -> usize {
        self.x.ncols()
    }

    /// `(1 + n_p)(n_x + n_u)`, the row count of `G` and the rank needed
    /// for persistency of excitation.
    pub fn required_rank(&self) -> usize {
        (1 + self.n_p) * (self.n_x + self.n_u)
    }

    /// Rebuild the Kronecker blocks from the stored scheduling and check
    /// them against the stored matrices.
    pub fn kronecker_structure_holds(&self) -> bool {
        (0..self.n_cols()).all(|j| {
            let x = self.x.column(j).into_owned();
            let u = self.u.column(j).into_owned();
            kron_vec(&self.p[j], &x) == self.xp.column(j).into_owned()
                && kron_vec(&self.p[j], &u) == self.up.column(j).into_owned()
        })
    }

    /// CSV export of `G` followed by `X_next`, one labeled row per matrix row.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::WriterBuilder::new().flexible(true).from_writer(w);
        let mut header = vec!["matrix".to_string(), "row".to_string()];
        header.extend((1..=self.n_cols()).map(|j| format!("c{j}")));
        wr.write_record(&header)?;
        for (label, m) in [("G", &self.g), ("X_next", &self.x_next)] {
            for (i, row) in m.row_iter().enumerate() {
                let mut rec = vec![label.to_string(), (i + 1).to_string()];
                rec.extend(row.iter().map(|v| format_float(*v)));
                wr.write_record(&rec)?;
            }
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Data matrices of a velocity dictionary (`N − 1` columns).
pub fn build_data_matrices(vd: &VelocityDictionary) -> Result<DataMatrices> {
    if vd.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "velocity dictionary needs N ≥ 2 increments, got {}",
            vd.len()
        )));
    }
    DataMatrices::from_sequences(&vd.dx, &vd.p, &vd.du)
}

/// Data matrices of the raw (non-differenced) signals for a direct LPV
/// embedding (`N` columns from `N + 1` samples). The basis may only read
/// the current sample.
pub fn build_raw_data_matrices(d: &NlDataDictionary, basis: &SchedulingBasis) -> Result<DataMatrices> {
    if basis.depends_on_previous() {
        return Err(Error::Parameter(format!(
            "direct embedding needs a basis of the current sample only; `{}` reads the previous one",
            basis.kind_name()
        )));
    }
    let (xs, us) = (d.states(), d.inputs());
    let p = xs
        .iter()
        .zip(us)
        .map(|(x, u)| basis.eval(&SchedulingArgs { x, u, x_prev: x, u_prev: u }))
        .collect::<Result<Vec<_>>>()?;
    DataMatrices::from_sequences(xs, &p, us)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PeReport {
    pub rank: usize,
    pub required: usize,
    pub is_pe: bool,
}

/// Rank of `G` counting singular values above `rank_tol` times the largest.
pub fn check_pe(dm: &DataMatrices, rank_tol: f64) -> PeReport {
    let rank = linalg::numerical_rank(&dm.g, rank_tol);
    let required = dm.required_rank();
    PeReport {
        rank,
        required,
        is_pe: rank == required,
    }
}

/// Affine scheduling-dependent gain `K(p) = K_0 + Σ K_i p_i`, stored as
/// `K_0` and `K̄ = [K_1 … K_{n_p}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityGains {
    pub k0: DMatrix<f64>,
    pub kbar: DMatrix<f64>,
}

impl VelocityGains {
    pub fn new(k0: DMatrix<f64>, kbar: DMatrix<f64>) -> Result<Self> {
        if kbar.nrows() != k0.nrows() || (k0.ncols() > 0 && kbar.ncols() % k0.ncols() != 0) {
            return Err(Error::dim(
                "scheduled gain blocks",
                format!("{} x multiple of {}", k0.nrows(), k0.ncols()),
                format!("{}x{}", kbar.nrows(), kbar.ncols()),
            ));
        }
        if !linalg::all_finite(&k0) || !linalg::all_finite(&kbar) {
            return Err(Error::NonFinite("velocity gains".into()));
        }
        Ok(Self { k0, kbar })
    }

    pub fn zeros(n_u: usize, n_x: usize, n_p: usize) -> Self {
        Self {
            k0: DMatrix::zeros(n_u, n_x),
            kbar: DMatrix::zeros(n_u, n_x * n_p),
        }
    }

    pub fn n_x(&self) -> usize {
        self.k0.ncols()
    }

    pub fn n_u(&self) -> usize {
        self.k0.nrows()
    }

    pub fn n_p(&self) -> usize {
        if self.n_x() == 0 {
            0
        } else {
            self.kbar.ncols() / self.n_x()
        }
    }

    /// `K_i` for `i ≥ 1`.
    pub fn scheduled_block(&self, i: usize) -> DMatrix<f64> {
        let n_x = self.n_x();
        self.kbar.columns((i - 1) * n_x, n_x).into_owned()
    }

    /// Evaluate `K(p)`.
    pub fn eval(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
        if p.len() != self.n_p() {
            return Err(Error::dim("scheduling vector for gain", self.n_p(), p.len()));
        }
        let mut k = self.k0.clone();
        for (i, &pi) in p.iter().enumerate() {
            k += self.scheduled_block(i + 1) * pi;
        }
        Ok(k)
    }
}

/// Left-hand side of the consistency equation for given gains:
/// `[I 0 0; 0 I 0; K_0 K̄ 0; 0 I⊗K_0 I⊗K̄]`.
pub fn consistency_lhs(gains: &VelocityGains) -> Result<DMatrix<f64>> {
    let (n_x, n_u, n_p) = (gains.n_x(), gains.n_u(), gains.n_p());
    let (nxp, nxpp) = (n_x * n_p, n_x * n_p * n_p);
    let ip = linalg::identity(n_p);
    linalg::block(&[
        vec![linalg::identity(n_x), DMatrix::zeros(n_x, nxp), DMatrix::zeros(n_x, nxpp)],
        vec![DMatrix::zeros(nxp, n_x), linalg::identity(nxp), DMatrix::zeros(nxp, nxpp)],
        vec![gains.k0.clone(), gains.kbar.clone(), DMatrix::zeros(n_u, nxpp)],
        vec![DMatrix::zeros(n_u * n_p, n_x), kron(&ip, &gains.k0), kron(&ip, &gains.kbar)],
    ])
}

/// A matrix `V` with `G V` equal to the consistency left-hand side.
#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyMatrix {
    pub v: DMatrix<f64>,
    /// `max |LHS − G V|`.
    pub residual: f64,
}

/// Minimum-norm solution of the consistency equation.
pub fn closed_loop_consistency(dm: &DataMatrices, gains: &VelocityGains) -> Result<ConsistencyMatrix> {
    if gains.n_x() != dm.n_x() || gains.n_u() != dm.n_u() || gains.n_p() != dm.n_p() {
        return Err(Error::dim(
            "gains vs data (n_x, n_u, n_p)",
            format!("({}, {}, {})", dm.n_x(), dm.n_u(), dm.n_p()),
            format!("({}, {}, {})", gains.n_x(), gains.n_u(), gains.n_p()),
        ));
    }
    let lhs = consistency_lhs(gains)?;
    let v = linalg::min_norm_solve(&dm.g, &lhs, 1e-12);
    let residual = linalg::max_abs(&(&lhs - &dm.g * &v));
    if !check_pe(dm, DEFAULT_RANK_TOL).is_pe {
        return Err(Error::Representability { residual });
    }
    log::debug!("consistency residual {residual:e}");
    Ok(ConsistencyMatrix { v, residual })
}

/// `[Δx; p⊗Δx; p⊗p⊗Δx]`.
pub fn scheduled_lift(dx: &DVector<f64>, p: &DVector<f64>) -> DVector<f64> {
    let pdx = kron_vec(p, dx);
    let ppdx = kron_vec(p, &pdx);
    linalg::vstack_vec(&[dx, &pdx, &ppdx])
}

/// One step of the data-based closed loop `Δx⁺ = X_next V [Δx; p⊗Δx; p⊗p⊗Δx]`.
pub fn closed_loop_step(
    dm: &DataMatrices,
    cm: &ConsistencyMatrix,
    dx: &DVector<f64>,
    p: &DVector<f64>,
) -> Result<DVector<f64>> {
    if dx.len() != dm.n_x() || p.len() != dm.n_p() {
        return Err(Error::dim(
            "closed-loop step (Δx, p)",
            format!("({}, {})", dm.n_x(), dm.n_p()),
            format!("({}, {})", dx.len(), p.len()),
        ));
    }
    let lift = scheduled_lift(dx, p);
    if cm.v.ncols() != lift.len() || cm.v.nrows() != dm.n_cols() {
        return Err(Error::dim("consistency matrix", format!("{}x{}", dm.n_cols(), lift.len()), format!("{}x{}", cm.v.nrows(), cm.v.ncols())));
    }
    Ok(&dm.x_next * (&cm.v * lift))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dictionary::NlDataDictionary;
    use crate::velocity::difference_dictionary;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn toy() -> VelocityDictionary {
        VelocityDictionary {
            dx: vec![v(&[1.0]), v(&[2.0]), v(&[3.0])],
            p: vec![v(&[10.0]), v(&[20.0]), v(&[30.0])],
            du: vec![v(&[0.0]), v(&[0.0]), v(&[0.0])],
            n_x: 1,
            n_u: 1,
            n_p: 1,
            first_index: 2,
        }
    }

    #[test]
    fn scalar_toy_kronecker_block() {
        let dm = build_data_matrices(&toy()).unwrap();
        assert_eq!(dm.xp, DMatrix::from_row_slice(1, 2, &[10.0, 40.0]));
        assert_eq!(dm.x_next, DMatrix::from_row_slice(1, 2, &[2.0, 3.0]));
        assert_eq!(dm.g.shape(), (4, 2));
        assert!(dm.kronecker_structure_holds());
    }

    #[test]
    fn too_short_velocity_dictionary() {
        let mut vd = toy();
        vd.dx.truncate(1);
        vd.p.truncate(1);
        vd.du.truncate(1);
        assert!(matches!(build_data_matrices(&vd), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn empty_basis_gives_classical_matrices() {
        let d = NlDataDictionary::new(
            (0..6).map(|k| v(&[(k as f64).sin()])).collect(),
            (0..6).map(|k| v(&[k as f64, 0.5 * k as f64])).collect(),
        )
        .unwrap();
        let vd = difference_dictionary(&d, &SchedulingBasis::empty(2, 1)).unwrap();
        let dm = build_data_matrices(&vd).unwrap();
        assert_eq!(dm.g, linalg::vstack(&[&dm.x, &dm.u]));
        assert_eq!(dm.required_rank(), 3);
    }

    #[test]
    fn all_zero_data_has_rank_zero() {
        let d = NlDataDictionary::new(vec![v(&[0.0]); 12], vec![v(&[0.0, 0.0]); 12]).unwrap();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let dm = build_data_matrices(&difference_dictionary(&d, &basis).unwrap()).unwrap();
        assert_eq!(check_pe(&dm, DEFAULT_RANK_TOL), PeReport { rank: 0, required: 6, is_pe: false });
    }

    #[test]
    fn too_few_columns_cannot_be_pe() {
        let vd = VelocityDictionary {
            dx: (0..5).map(|k| v(&[k as f64 + 1.0, (k * k) as f64])).collect(),
            p: (0..5).map(|k| v(&[(k as f64).cos()])).collect(),
            du: (0..5).map(|k| v(&[(3.0 * k as f64).sin()])).collect(),
            n_x: 2,
            n_u: 1,
            n_p: 1,
            first_index: 2,
        };
        let dm = build_data_matrices(&vd).unwrap();
        let pe = check_pe(&dm, DEFAULT_RANK_TOL);
        assert!(pe.rank <= 4 && !pe.is_pe);
    }

    #[test]
    fn gain_blocks_and_evaluation() {
        let g = VelocityGains::new(
            DMatrix::from_row_slice(1, 2, &[1.0, 2.0]),
            DMatrix::from_row_slice(1, 4, &[10.0, 20.0, 30.0, 40.0]),
        )
        .unwrap();
        assert_eq!(g.n_p(), 2);
        assert_eq!(g.eval(&v(&[0.0, 0.0])).unwrap(), g.k0);
        assert_eq!(g.eval(&v(&[0.0, 1.0])).unwrap(), DMatrix::from_row_slice(1, 2, &[31.0, 42.0]));
        assert!(g.eval(&v(&[1.0])).is_err());
        assert!(VelocityGains::new(DMatrix::zeros(1, 2), DMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn consistency_lhs_shape() {
        let lhs = consistency_lhs(&VelocityGains::zeros(1, 2, 1)).unwrap();
        assert_eq!(lhs.shape(), (6, 6));
        let lhs2 = consistency_lhs(&VelocityGains::zeros(2, 3, 2)).unwrap();
        assert_eq!(lhs2.shape(), ((1 + 2) * (3 + 2), 3 * (1 + 2 + 4)));
    }

    #[test]
    fn non_pe_data_is_not_representable() {
        let d = NlDataDictionary::new(vec![v(&[0.0]); 12], vec![v(&[0.0, 0.0]); 12]).unwrap();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let dm = build_data_matrices(&difference_dictionary(&d, &basis).unwrap()).unwrap();
        let err = closed_loop_consistency(&dm, &VelocityGains::zeros(1, 2, 1)).unwrap_err();
        assert!(matches!(err, Error::Representability { .. }));
    }

    #[test]
    fn raw_matrices_reject_history_dependent_basis() {
        let d = NlDataDictionary::new(vec![v(&[0.0]); 4], vec![v(&[0.0, 1.0]); 4]).unwrap();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        assert!(build_raw_data_matrices(&d, &basis).is_err());
        let ratio = SchedulingBasis::sinc_ratio(vec![0], 2, 1).unwrap();
        assert_eq!(build_raw_data_matrices(&d, &ratio).unwrap().n_cols(), 3);
    }
}

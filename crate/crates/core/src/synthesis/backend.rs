//! Semidefinite solver backends.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT, SupportedConeT::*,
};
use nalgebra::{DMatrix, DVector};

use super::program::{ConstraintKind, SdpProgram};
use crate::error::{Error, Result};
use crate::linalg;

/// Strict constraints are handed to a backend with their margin scaled by
/// this factor, so the independent check against the nominal margin does
/// not hinge on the last digits of the solver's accuracy.
pub const DEFAULT_MARGIN_FACTOR: f64 = 2.0;

#[derive(Debug, Clone, PartialEq)]
pub enum BackendStatus {
    Solved,
    Infeasible,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackendOutcome {
    pub status: BackendStatus,
    pub x: DVector<f64>,
    /// Raw status text from the solver.
    pub detail: String,
    pub iterations: u32,
}

pub trait SdpBackend: Send + Sync {
    fn name(&self) -> &str;
    fn supports_psd(&self) -> bool;
    fn supports_equalities(&self) -> bool;
    /// Whether the objective is honored (feasibility-only backends ignore it).
    fn optimizes(&self) -> bool;
    fn solve(&self, program: &SdpProgram) -> Result<BackendOutcome>;
}

/// Look a backend up by its command-line name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn SdpBackend>> {
    match name {
        "clarabel" => Ok(Box::new(ClarabelBackend::default())),
        "projection" => Ok(Box::new(ProjectionBackend::default())),
        other => Err(Error::Parameter(format!(
            "unknown SDP backend `{other}` (expected `clarabel` or `projection`)"
        ))),
    }
}

/// Interior-point backend.
#[derive(Debug, Clone)]
pub struct ClarabelBackend {
    pub margin_factor: f64,
    pub max_iter: u32,
    pub verbose: bool,
}

impl Default for ClarabelBackend {
    fn default() -> Self {
        Self {
            margin_factor: DEFAULT_MARGIN_FACTOR,
            max_iter: 400,
            verbose: false,
        }
    }
}

/// Upper triangle stacked by columns, off-diagonals scaled by √2.
fn svec(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for j in 0..n {
        for i in 0..=j {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            out.push(if i == j { v } else { v * std::f64::consts::SQRT_2 });
        }
    }
    out
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl SdpBackend for ClarabelBackend {
    fn name(&self) -> &str {
        "clarabel"
    }

    fn supports_psd(&self) -> bool {
        true
    }

    fn supports_equalities(&self) -> bool {
        true
    }

    fn optimizes(&self) -> bool {
        true
    }

    fn solve(&self, program: &SdpProgram) -> Result<BackendOutcome> {
        let n = program.n_vars();
        let (mut ri, mut ci, mut vals) = (Vec::new(), Vec::new(), Vec::new());
        let mut b = Vec::new();
        let mut cones: Vec<SupportedConeT<f64>> = Vec::new();
        let mut row = 0usize;
        // Equalities first, compressed to an independent set of rows.
        let eq: Vec<_> = program
            .constraints
            .iter()
            .filter(|c| matches!(c.kind, ConstraintKind::Zero))
            .collect();
        let m_eq: usize = eq.iter().map(|c| c.expr.nrows() * c.expr.ncols()).sum();
        if m_eq > 0 {
            let mut coef = DMatrix::zeros(m_eq, n);
            let mut rhs = DVector::zeros(m_eq);
            let mut r0 = 0;
            for c in &eq {
                let len = c.expr.nrows() * c.expr.ncols();
                for (k, m) in c.expr.terms() {
                    for (r, v) in row_major(m).into_iter().enumerate() {
                        coef[(r0 + r, k)] += v;
                    }
                }
                for (r, v) in row_major(c.expr.constant_part()).into_iter().enumerate() {
                    rhs[r0 + r] = v;
                }
                r0 += len;
            }
            let (basis, inconsistency) = independent_rows(&coef, &rhs);
            if inconsistency > 1e-8 * rhs.amax().max(1.0) {
                return Ok(BackendOutcome {
                    status: BackendStatus::Infeasible,
                    x: DVector::zeros(n),
                    detail: format!("inconsistent equalities (residual {inconsistency:.3e})"),
                    iterations: 0,
                });
            }
            let reduced = basis.transpose() * &coef;
            let reduced_rhs = basis.transpose() * &rhs;
            for r in 0..reduced.nrows() {
                for k in 0..n {
                    let v = reduced[(r, k)];
                    if v != 0.0 {
                        ri.push(r);
                        ci.push(k);
                        vals.push(-v);
                    }
                }
            }
            b.extend(reduced_rhs.iter().copied());
            if reduced.nrows() > 0 {
                cones.push(ZeroConeT(reduced.nrows()));
            }
            row = reduced.nrows();
        }
        for c in program.constraints.iter().filter(|c| matches!(c.kind, ConstraintKind::Psd { .. })) {
            let k = c.expr.nrows();
            if k == 0 {
                continue;
            }
            let margin = match c.kind {
                ConstraintKind::Psd { margin } => margin,
                ConstraintKind::Zero => unreachable!(),
            };
            for (var, m) in c.expr.terms() {
                for (r, v) in svec(m).into_iter().enumerate() {
                    if v != 0.0 {
                        ri.push(row + r);
                        ci.push(var);
                        vals.push(-v);
                    }
                }
            }
            let shifted = c.expr.constant_part() - linalg::identity(k) * (margin * self.margin_factor);
            b.extend(svec(&shifted));
            cones.push(PSDTriangleConeT(k));
            row += k * (k + 1) / 2;
        }
        let a = CscMatrix::new_from_triplets(row, n, ri, ci, vals);
        let p = CscMatrix::zeros((n, n));
        let q: Vec<f64> = program.objective.iter().copied().collect();
        let settings = DefaultSettingsBuilder::default()
            .verbose(self.verbose)
            .max_iter(self.max_iter)
            .build()
            .map_err(|e| Error::Backend {
                backend: "clarabel".into(),
                detail: format!("{e:?}"),
            })?;
        let mut solver = DefaultSolver::new(&p, &q, &a, &b, &cones, settings).map_err(|e| Error::Backend {
            backend: "clarabel".into(),
            detail: format!("{e:?}"),
        })?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            SolverStatus::Solved | SolverStatus::AlmostSolved => BackendStatus::Solved,
            SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => BackendStatus::Infeasible,
            other => BackendStatus::Failed(format!("{other:?}")),
        };
        log::debug!(
            "clarabel: {:?} after {} iterations, objective {}",
            sol.status,
            sol.iterations,
            sol.obj_val
        );
        Ok(BackendOutcome {
            status,
            x: DVector::from_vec(sol.x.clone()),
            detail: format!("{:?}", sol.status),
            iterations: sol.iterations,
        })
    }
}

/// Orthonormal basis of the column space of `coef` and the norm of the
/// part of `rhs` outside it.
fn independent_rows(coef: &DMatrix<f64>, rhs: &DVector<f64>) -> (DMatrix<f64>, f64) {
    let svd = coef.clone().svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let smax = svd.singular_values.amax();
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&i| smax > 0.0 && svd.singular_values[i] > 1e-10 * smax)
        .collect();
    let basis = DMatrix::from_fn(coef.nrows(), keep.len(), |r, j| u[(r, keep[j])]);
    let residual = rhs - &basis * (basis.transpose() * rhs);
    (basis, residual.norm())
}

/// Feasibility by alternating projections between the affine constraint set
/// and the PSD cones, in a lifted space holding one slack matrix per PSD
/// constraint. Only suitable for small problems; the objective is ignored.
#[derive(Debug, Clone)]
pub struct ProjectionBackend {
    pub margin_factor: f64,
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for ProjectionBackend {
    fn default() -> Self {
        Self {
            margin_factor: 4.0,
            max_iter: 20_000,
            tol: 1e-9,
        }
    }
}

impl SdpBackend for ProjectionBackend {
    fn name(&self) -> &str {
        "projection"
    }

    fn supports_psd(&self) -> bool {
        true
    }

    fn supports_equalities(&self) -> bool {
        true
    }

    fn optimizes(&self) -> bool {
        false
    }

    fn solve(&self, program: &SdpProgram) -> Result<BackendOutcome> {
        let n = program.n_vars();
        // Lifted vector z = (x, s_1, …, s_m) with s_c = svec(S_c).
        // Affine set: svec(expr_c(x) − μ_c I) − s_c = 0, vec(eq(x)) = 0.
        let psd: Vec<_> = program
            .constraints
            .iter()
            .filter_map(|c| match c.kind {
                ConstraintKind::Psd { margin } => Some((c, margin * self.margin_factor)),
                ConstraintKind::Zero => None,
            })
            .collect();
        let slack_len: usize = psd.iter().map(|(c, _)| c.expr.nrows() * (c.expr.nrows() + 1) / 2).sum();
        let total = n + slack_len;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut rhs: Vec<f64> = Vec::new();
        let mut offset = n;
        for (c, margin) in &psd {
            let k = c.expr.nrows();
            let len = k * (k + 1) / 2;
            let shifted = c.expr.constant_part() - linalg::identity(k) * *margin;
            let base = svec(&shifted);
            let coeffs: Vec<(usize, Vec<f64>)> = c.expr.terms().map(|(v, m)| (v, svec(m))).collect();
            for r in 0..len {
                let mut row = vec![0.0; total];
                for (v, s) in &coeffs {
                    row[*v] += s[r];
                }
                row[offset + r] = -1.0;
                rows.push(row);
                rhs.push(-base[r]);
            }
            offset += len;
        }
        for c in program.constraints.iter().filter(|c| matches!(c.kind, ConstraintKind::Zero)) {
            let base = row_major(c.expr.constant_part());
            let coeffs: Vec<(usize, Vec<f64>)> = c.expr.terms().map(|(v, m)| (v, row_major(m))).collect();
            for r in 0..base.len() {
                let mut row = vec![0.0; total];
                for (v, s) in &coeffs {
                    row[*v] += s[r];
                }
                rows.push(row);
                rhs.push(-base[r]);
            }
        }
        let cm = DMatrix::from_row_iterator(rows.len(), total, rows.into_iter().flatten());
        let d = DVector::from_vec(rhs);
        let pinv = cm.clone().pseudo_inverse(1e-12).map_err(|e| Error::Backend {
            backend: "projection".into(),
            detail: e.to_string(),
        })?;
        let project_affine = |z: &DVector<f64>| -> DVector<f64> { z - &pinv * (&cm * z - &d) };
        let mut z = project_affine(&DVector::zeros(total));
        let mut iterations = 0;
        let mut converged = false;
        for it in 0..self.max_iter {
            iterations = it as u32 + 1;
            let mut w = z.clone();
            let mut off = n;
            let mut gap: f64 = 0.0;
            for (c, _) in &psd {
                let k = c.expr.nrows();
                let len = k * (k + 1) / 2;
                let s = unsvec(&z.as_slice()[off..off + len], k);
                let eig = s.clone().symmetric_eigen();
                gap = gap.max(-eig.eigenvalues.min());
                let clipped = &eig.eigenvectors
                    * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0)))
                    * eig.eigenvectors.transpose();
                w.rows_mut(off, len).copy_from_slice(&svec(&clipped));
                off += len;
            }
            if gap <= self.tol {
                converged = true;
                break;
            }
            z = project_affine(&w);
        }
        let x = z.rows(0, n).into_owned();
        let status = if converged {
            BackendStatus::Solved
        } else {
            BackendStatus::Failed(format!("no feasible point after {iterations} projections"))
        };
        Ok(BackendOutcome {
            status,
            x,
            detail: if converged { "Feasible".into() } else { "MaxIterations".into() },
            iterations,
        })
    }
}

fn unsvec(v: &[f64], n: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let val = if i == j { v[k] } else { v[k] / std::f64::consts::SQRT_2 };
            m[(i, j)] = val;
            m[(j, i)] = val;
            k += 1;
        }
    }
    m
}

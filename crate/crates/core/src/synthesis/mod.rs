//! LMI-based synthesis of scheduled velocity gains from data.
//!
//! [`assemble`] builds the semidefinite program over the vertices of the
//! scheduling box, [`solve`] hands it to an [`SdpBackend`], re-verifies the
//! returned point independently, and recovers the gains.

pub mod backend;
pub mod program;

use std::io::Write;

use nalgebra::{DMatrix, DVector};

pub use backend::{backend_by_name, BackendOutcome, BackendStatus, ClarabelBackend, ProjectionBackend, SdpBackend};
pub use program::{AffineMatrix, BlockId, BlockShape, ConstraintKind, SdpProgram, VarLayout};

use crate::datarep::{check_pe, DataMatrices, VelocityGains, DEFAULT_RANK_TOL};
use crate::error::{Error, InfeasibilityReport, Result};
use crate::linalg::{self, identity, kron};
use crate::pbox::PBox;

pub const DEFAULT_EPSILON: f64 = 1e-6;
pub const EQUALITY_TOL: f64 = 1e-6;
pub const PERMUTATION_TOL: f64 = 1e-10;
pub const MIN_Z_EIG: f64 = 1e-9;
/// Extra margin asked of the backend in the normalized solve, where `Z` is
/// of order one and the nominal margin sits near the solver's accuracy.
pub const SCALED_MARGIN_BUFFER: f64 = 1e3;

/// What the program minimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Objective {
    /// `trace(Z)`. Its infimum is zero and not attained, so the solver
    /// returns a point near the margin boundary.
    TraceZ,
    /// `trace(Z⁻¹)` through an auxiliary `X` with `[X I; I Z] ⪰ 0`, which
    /// bounds the average of the guaranteed cost over unit initial increments.
    #[default]
    TraceZInverse,
    /// No objective.
    Feasibility,
}

impl Objective {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "trace-z" => Ok(Self::TraceZ),
            "trace-z-inverse" => Ok(Self::TraceZInverse),
            "feasibility" => Ok(Self::Feasibility),
            other => Err(Error::Parameter(format!(
                "unknown objective `{other}` (expected trace-z, trace-z-inverse or feasibility)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::TraceZ => "trace-z",
            Self::TraceZInverse => "trace-z-inverse",
            Self::Feasibility => "feasibility",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthesisOptions {
    /// Margin turning strict inequalities into `⪰ εI` / `⪯ −εI`.
    pub epsilon: f64,
    pub objective: Objective,
    /// Interior points of the scheduling box checked after solving.
    pub interior_samples: usize,
    /// Rescale the cost weights before handing the program to the backend
    /// (see [`solve`]).
    pub normalize: bool,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            objective: Objective::default(),
            interior_samples: 100,
            normalize: true,
        }
    }
}

/// Constant outer factors of the main LMI.
#[derive(Debug, Clone, PartialEq)]
pub struct LBlocks {
    pub l11: DMatrix<f64>,
    pub l12: DMatrix<f64>,
    pub l21: DMatrix<f64>,
    pub l22: DMatrix<f64>,
}

impl LBlocks {
    pub fn new(n_x: usize, n_u: usize, n_p: usize) -> Self {
        let nxp = n_x * n_p;
        let nxu = n_x + n_u;
        let gamma1 = linalg::block(&[vec![identity(n_x), DMatrix::zeros(n_x, n_x)]]).expect("Γ1");
        let gamma2 = linalg::block(&[vec![DMatrix::zeros(n_x, n_x), identity(n_x)]]).expect("Γ2");
        let ip = identity(n_p);
        let ones = DMatrix::from_element(n_p, 1, 1.0);
        let l11 = DMatrix::zeros(2 * nxp, 2 * nxp);
        let l12 = linalg::block(&[vec![kron(&ones, &identity(2 * n_x)), DMatrix::zeros(2 * nxp, nxu)]]).expect("L12");
        let l21 = linalg::vstack(&[
            &DMatrix::zeros(n_x, 2 * nxp),
            &kron(&ip, &gamma1),
            &DMatrix::zeros(n_x, 2 * nxp),
            &kron(&ip, &gamma2),
            &DMatrix::zeros(nxu, 2 * nxp),
        ]);
        let l22 = linalg::block(&[
            vec![gamma1, DMatrix::zeros(n_x, nxu)],
            vec![DMatrix::zeros(nxp, 2 * n_x), DMatrix::zeros(nxp, nxu)],
            vec![gamma2, DMatrix::zeros(n_x, nxu)],
            vec![DMatrix::zeros(nxp, 2 * n_x), DMatrix::zeros(nxp, nxu)],
            vec![DMatrix::zeros(nxu, 2 * n_x), identity(nxu)],
        ])
        .expect("L22");
        Self { l11, l12, l21, l22 }
    }

    /// `[L11 L12; I 0; L21 L22]`.
    pub fn outer_factor(&self) -> DMatrix<f64> {
        let (w, rest) = (self.l11.ncols(), self.l12.ncols());
        linalg::block(&[
            vec![self.l11.clone(), self.l12.clone()],
            vec![identity(w), DMatrix::zeros(w, rest)],
            vec![self.l21.clone(), self.l22.clone()],
        ])
        .expect("outer factor")
    }
}

/// `P(v) = diag(v) ⊗ I_{2n_x}`.
pub fn scheduling_block(p: &DVector<f64>, n_x: usize) -> DMatrix<f64> {
    kron(&DMatrix::from_diagonal(p), &identity(2 * n_x))
}

/// Expand `F_Q` into the multiplier `F = [F_1 F_2 F_3]` so that
/// `F [I; p⊗I; p⊗p⊗I] = [I; p⊗I]ᵀ F_Q [I; p⊗I]` holds for every `p`.
pub fn fq_to_f(f_q: &DMatrix<f64>, n_x: usize, n_p: usize, n_cols: usize) -> Result<DMatrix<f64>> {
    if f_q.shape() != (n_cols * (1 + n_p), n_x * (1 + n_p)) {
        return Err(Error::dim(
            "F_Q",
            format!("{}x{}", n_cols * (1 + n_p), n_x * (1 + n_p)),
            format!("{}x{}", f_q.nrows(), f_q.ncols()),
        ));
    }
    let mut f = DMatrix::zeros(n_cols, n_x * (1 + n_p + n_p * n_p));
    f.view_mut((0, 0), (n_cols, n_x)).copy_from(&f_q.view((0, 0), (n_cols, n_x)));
    for i in 0..n_p {
        let f12_i = f_q.view((0, n_x * (1 + i)), (n_cols, n_x));
        let f21_i = f_q.view((n_cols * (1 + i), 0), (n_cols, n_x));
        f.view_mut((0, n_x * (1 + i)), (n_cols, n_x)).copy_from(&(f12_i + f21_i));
        for j in 0..n_p {
            let f22_ij = f_q.view((n_cols * (1 + i), n_x * (1 + j)), (n_cols, n_x));
            f.view_mut((0, n_x * (1 + n_p + i * n_p + j)), (n_cols, n_x)).copy_from(&f22_ij);
        }
    }
    Ok(f)
}

/// `max |F [I; p⊗I; p⊗p⊗I] − [I; p⊗I]ᵀ F_Q [I; p⊗I]|`.
pub fn permutation_residual(f: &DMatrix<f64>, f_q: &DMatrix<f64>, n_x: usize, p: &DVector<f64>) -> f64 {
    let n_cols = f.nrows();
    let pm = DMatrix::from_column_slice(p.len(), 1, p.as_slice());
    let ix = identity(n_x);
    let px = kron(&pm, &ix);
    let ppx = kron(&pm, &px);
    let lhs = f * linalg::vstack(&[&ix, &px, &ppx]);
    let left = linalg::vstack(&[&identity(n_cols), &kron(&pm, &identity(n_cols))]);
    let rhs = left.transpose() * f_q * linalg::vstack(&[&ix, &px]);
    linalg::max_abs(&(lhs - rhs))
}

/// Handles to the decision-variable blocks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthesisVars {
    pub z: BlockId,
    pub f_q: BlockId,
    pub xi: Option<BlockId>,
    pub y0: BlockId,
    pub ybar: BlockId,
    pub x_aux: Option<BlockId>,
}

#[derive(Debug, Clone)]
pub struct SynthesisProblem {
    pub program: SdpProgram,
    pub vars: SynthesisVars,
    pub data: DataMatrices,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub pbox: PBox,
    pub l: LBlocks,
    pub options: SynthesisOptions,
}

impl SynthesisProblem {
    pub fn n_x(&self) -> usize {
        self.data.n_x()
    }

    pub fn n_u(&self) -> usize {
        self.data.n_u()
    }

    pub fn n_p(&self) -> usize {
        self.data.n_p()
    }

    /// Structured text export of the problem data, one labeled row-major
    /// block per matrix.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let mut blocks: Vec<(String, DMatrix<f64>)> = vec![
            ("G".into(), self.data.g.clone()),
            ("X_next".into(), self.data.x_next.clone()),
            ("Q".into(), self.q.clone()),
            ("R".into(), self.r.clone()),
            ("L11".into(), self.l.l11.clone()),
            ("L12".into(), self.l.l12.clone()),
            ("L21".into(), self.l.l21.clone()),
            ("L22".into(), self.l.l22.clone()),
            ("P_lower".into(), DMatrix::from_column_slice(1, self.pbox.n_p(), self.pbox.lower().as_slice())),
            ("P_upper".into(), DMatrix::from_column_slice(1, self.pbox.n_p(), self.pbox.upper().as_slice())),
        ];
        for c in &self.program.constraints {
            blocks.push((format!("constraint {} constant", c.name()), c.expr.constant_part().clone()));
        }
        writeln!(
            w,
            "# objective {} epsilon {:e} variables {}",
            self.options.objective.name(),
            self.options.epsilon,
            self.program.n_vars()
        )
        .map_err(io_err)?;
        for b in self.program.layout.blocks() {
            writeln!(w, "# variable {} {:?} offset {}", b.name, b.shape, b.offset).map_err(io_err)?;
        }
        write_blocks(&mut w, &blocks)
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::Io {
        path: "<text export>".into(),
        source: e,
    }
}

/// Write labeled row-major matrix blocks.
pub fn write_blocks<W: Write>(w: &mut W, blocks: &[(String, DMatrix<f64>)]) -> Result<()> {
    for (name, m) in blocks {
        writeln!(w, "[{}] {}x{}", name, m.nrows(), m.ncols()).map_err(io_err)?;
        for row in m.row_iter() {
            let line: Vec<String> = row.iter().map(|v| crate::dictionary::format_float(*v)).collect();
            writeln!(w, "{}", line.join(" ")).map_err(io_err)?;
        }
    }
    Ok(())
}

fn check_weights(q: &DMatrix<f64>, r: &DMatrix<f64>, n_x: usize, n_u: usize) -> Result<()> {
    if q.shape() != (n_x, n_x) {
        return Err(Error::dim("Q", format!("{n_x}x{n_x}"), format!("{}x{}", q.nrows(), q.ncols())));
    }
    if r.shape() != (n_u, n_u) {
        return Err(Error::dim("R", format!("{n_u}x{n_u}"), format!("{}x{}", r.nrows(), r.ncols())));
    }
    if !linalg::all_finite(q) || !linalg::all_finite(r) {
        return Err(Error::NonFinite("weights Q, R".into()));
    }
    if linalg::max_abs(&(q - q.transpose())) > 1e-12 || linalg::min_sym_eig(q) < -1e-12 {
        return Err(Error::Parameter("Q must be symmetric positive semidefinite".into()));
    }
    if linalg::max_abs(&(r - r.transpose())) > 1e-12 || linalg::min_sym_eig(r) <= 0.0 {
        return Err(Error::Parameter("R must be symmetric positive definite".into()));
    }
    Ok(())
}

fn sym_err(block: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| Error::Assembly {
        block: block.to_string(),
        detail: e.to_string(),
    }
}

/// Assemble the synthesis program. With `n_p = 0` the scheduling blocks
/// vanish and the program is the classical data-driven LQR design.
pub fn assemble(
    dm: &DataMatrices,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    pbox: &PBox,
    options: &SynthesisOptions,
) -> Result<SynthesisProblem> {
    let (n_x, n_u, n_p, n_cols) = (dm.n_x(), dm.n_u(), dm.n_p(), dm.n_cols());
    let pe = check_pe(dm, DEFAULT_RANK_TOL);
    if !pe.is_pe {
        return Err(Error::NotPersistentlyExciting {
            rank: pe.rank,
            required: pe.required,
        });
    }
    check_weights(q, r, n_x, n_u)?;
    if pbox.n_p() != n_p {
        return Err(Error::dim("scheduling box", n_p, pbox.n_p()));
    }
    if !(options.epsilon.is_finite() && options.epsilon > 0.0) {
        return Err(Error::Parameter(format!("margin must be positive, got {}", options.epsilon)));
    }
    let eps = options.epsilon;
    let nxp = n_x * n_p;

    let mut layout = VarLayout::new();
    let z_id = layout.add("Z", BlockShape::Symmetric(n_x));
    let fq_id = layout.add("F_Q", BlockShape::Full(n_cols * (1 + n_p), n_x * (1 + n_p)));
    let xi_id = (n_p > 0).then(|| layout.add("Xi", BlockShape::Symmetric(4 * nxp)));
    let y0_id = layout.add("Y0", BlockShape::Full(n_u, n_x));
    let ybar_id = layout.add("Ybar", BlockShape::Full(n_u, nxp));
    let x_id = (options.objective == Objective::TraceZInverse).then(|| layout.add("X", BlockShape::Symmetric(n_x)));

    let z = layout.matrix(z_id);
    let f_q = layout.matrix(fq_id);
    let y0 = layout.matrix(y0_id);
    let ybar = layout.matrix(ybar_id);
    let zero = AffineMatrix::zeros;

    // W
    let z0 = AffineMatrix::block_diag(&[z.clone(), zero(nxp, nxp)]).map_err(sym_err("Z0"))?;
    let ip = identity(n_p);
    let xcal = linalg::block(&[
        vec![dm.x_next.clone(), DMatrix::zeros(n_x, n_cols * n_p)],
        vec![DMatrix::zeros(nxp, n_cols), kron(&ip, &dm.x_next)],
    ])?;
    let xf = f_q.lmul(&xcal);
    let q_half = linalg::sym_sqrt(q)?;
    let r_half = linalg::sym_sqrt(r)?;
    let qz = AffineMatrix::block(&[vec![z.lmul(&q_half), zero(n_x, nxp)]]).map_err(sym_err("Q^1/2 Z"))?;
    let ycal = AffineMatrix::block(&[vec![y0.clone(), ybar.clone()]]).map_err(sym_err("Y"))?;
    let ry = ycal.lmul(&r_half);
    let nz = n_x * (1 + n_p);
    let w = AffineMatrix::block(&[
        vec![z0.clone(), xf.transpose(), qz.transpose(), ry.transpose()],
        vec![xf, z0, zero(nz, n_x), zero(nz, n_u)],
        vec![qz, zero(n_x, nz), AffineMatrix::constant(identity(n_x)), zero(n_x, n_u)],
        vec![ry, zero(n_u, nz), zero(n_u, n_x), AffineMatrix::constant(identity(n_u))],
    ])
    .map_err(sym_err("W"))?;

    let l = LBlocks::new(n_x, n_u, n_p);
    let mut program = SdpProgram::new(layout);
    let main = match xi_id {
        Some(id) => {
            let xi = program.layout.matrix(id);
            AffineMatrix::block_diag(&[xi, w]).map_err(sym_err("blkdiag(Xi, W)"))?
        }
        None => w,
    };
    let outer = l.outer_factor();
    if outer.nrows() != main.nrows() {
        return Err(Error::Assembly {
            block: "outer factor".into(),
            detail: format!("{} rows against a {}-dimensional multiplier", outer.nrows(), main.nrows()),
        });
    }
    program.add_psd("main", "", main.congruence(&outer), eps)?;

    if let Some(id) = xi_id {
        let xi = program.layout.matrix(id);
        for (k, v) in pbox.vertices().iter().enumerate() {
            let nv = linalg::vstack(&[&identity(2 * nxp), &scheduling_block(v, n_x)]);
            let label = format!("vertex {} p={:?}", k + 1, v.as_slice());
            program.add_psd("vertex", &label, xi.congruence(&nv).scale(-1.0), eps)?;
        }
        program.add_psd("Xi22", "", xi.view(2 * nxp, 2 * nxp, 2 * nxp, 2 * nxp), eps)?;
    }
    program.add_psd("Z", "", z.clone(), eps)?;

    // G F = [Z 0 0; 0 I⊗Z 0; Y0 Ybar 0; 0 I⊗Y0 I⊗Ybar]
    let f = f_q.map_linear(|m| fq_to_f(m, n_x, n_p, n_cols).expect("F_Q shape fixed by layout"));
    let nxpp = n_x * n_p * n_p;
    let rhs = AffineMatrix::block(&[
        vec![z.clone(), zero(n_x, nxp), zero(n_x, nxpp)],
        vec![zero(nxp, n_x), z.kron_identity(n_p), zero(nxp, nxpp)],
        vec![y0.clone(), ybar.clone(), zero(n_u, nxpp)],
        vec![zero(n_u * n_p, n_x), y0.kron_identity(n_p), ybar.kron_identity(n_p)],
    ])
    .map_err(sym_err("consistency right-hand side"))?;
    program.add_zero("consistency", "", f.lmul(&dm.g).sub(&rhs).map_err(sym_err("consistency"))?);

    program.objective = match (options.objective, x_id) {
        (Objective::TraceZInverse, Some(id)) => {
            let x = program.layout.matrix(id);
            let schur = AffineMatrix::block(&[
                vec![x.clone(), AffineMatrix::constant(identity(n_x))],
                vec![AffineMatrix::constant(identity(n_x)), z.clone()],
            ])?;
            program.add_psd("objective", "", schur, 0.0)?;
            program.constraints.last_mut().expect("just pushed").auxiliary = true;
            x.trace_coefficients(program.n_vars())
        }
        (Objective::TraceZ, _) => z.trace_coefficients(program.n_vars()),
        _ => DVector::zeros(program.n_vars()),
    };

    Ok(SynthesisProblem {
        program,
        vars: SynthesisVars {
            z: z_id,
            f_q: fq_id,
            xi: xi_id,
            y0: y0_id,
            ybar: ybar_id,
            x_aux: x_id,
        },
        data: dm.clone(),
        q: q.clone(),
        r: r.clone(),
        pbox: pbox.clone(),
        l,
        options: *options,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationCheck {
    pub name: String,
    /// Measured value (eigenvalue margin or residual).
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct VerificationReport {
    pub checks: Vec<VerificationCheck>,
}

impl VerificationReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&VerificationCheck> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    fn push(&mut self, name: impl Into<String>, value: f64, threshold: f64, passed: bool) {
        self.checks.push(VerificationCheck {
            name: name.into(),
            value,
            threshold,
            passed,
        });
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverDiagnostics {
    pub backend: String,
    pub status: String,
    pub iterations: u32,
    pub objective: f64,
    pub max_violation: f64,
    pub equality_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSolution {
    pub z: DMatrix<f64>,
    pub f_q: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub xi: DMatrix<f64>,
    pub y0: DMatrix<f64>,
    pub ybar: DMatrix<f64>,
    pub gains: VelocityGains,
    pub diagnostics: SolverDiagnostics,
    pub verification: VerificationReport,
    /// The verified point in the layout of the original program.
    pub x: DVector<f64>,
    /// Strictness margin the point was verified with: the configured one,
    /// divided by the cost scale when the program was normalized.
    pub epsilon: f64,
}

impl SynthesisSolution {
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let d = &self.diagnostics;
        writeln!(
            w,
            "# backend {} status {} iterations {} objective {:e} max_violation {:e} equality_residual {:e}",
            d.backend, d.status, d.iterations, d.objective, d.max_violation, d.equality_residual
        )
        .map_err(io_err)?;
        let blocks = vec![
            ("Z".to_string(), self.z.clone()),
            ("F_Q".to_string(), self.f_q.clone()),
            ("F".to_string(), self.f.clone()),
            ("Xi".to_string(), self.xi.clone()),
            ("Y0".to_string(), self.y0.clone()),
            ("Ybar".to_string(), self.ybar.clone()),
            ("K0".to_string(), self.gains.k0.clone()),
            ("Kbar".to_string(), self.gains.kbar.clone()),
        ];
        write_blocks(&mut w, &blocks)
    }
}

/// `K_0 = Y_0 Z⁻¹`, `K̄ = Ȳ (I ⊗ Z)⁻¹`.
pub fn recover_gains(z: &DMatrix<f64>, y0: &DMatrix<f64>, ybar: &DMatrix<f64>) -> Result<VelocityGains> {
    let min_eig = linalg::min_sym_eig(z);
    if !(min_eig > MIN_Z_EIG) {
        return Err(Error::Conditioning { min_eig });
    }
    let cond = linalg::max_sym_eig(z) / min_eig;
    log::debug!("condition number of Z: {cond:e}");
    let z_inv = linalg::symmetrize(&z.clone().try_inverse().ok_or(Error::Conditioning { min_eig })?);
    let n_x = z.nrows();
    if n_x == 0 || ybar.ncols() % n_x != 0 {
        return Err(Error::dim("Ybar columns", format!("multiple of {n_x}"), ybar.ncols()));
    }
    let n_p = ybar.ncols() / n_x;
    let kbar = ybar * kron(&identity(n_p), &z_inv);
    VelocityGains::new(y0 * &z_inv, kbar)
}

/// Deterministic low-discrepancy points in `[0,1]^d`.
fn halton(index: usize, dim: usize) -> DVector<f64> {
    const PRIMES: [usize; 8] = [2, 3, 5, 7, 11, 13, 17, 19];
    DVector::from_iterator(
        dim,
        (0..dim).map(|d| {
            let base = PRIMES[d % PRIMES.len()];
            let (mut f, mut r, mut i) = (1.0, 0.0, index + 1);
            while i > 0 {
                f /= base as f64;
                r += f * (i % base) as f64;
                i /= base;
            }
            r
        }),
    )
}

/// Re-check a candidate point against every constraint and the structural
/// identities, independently of what the backend claims.
pub fn verify(problem: &SynthesisProblem, x: &DVector<f64>) -> VerificationReport {
    let mut rep = VerificationReport::default();
    let eps = problem.options.epsilon;
    for c in &problem.program.constraints {
        match c.kind {
            ConstraintKind::Psd { margin } => {
                let m = linalg::symmetrize(&c.expr.eval(x));
                let min_eig = linalg::min_sym_eig(&m);
                let threshold = if c.auxiliary { -1e-7 } else { margin };
                rep.push(format!("{} min eigenvalue", c.name()), min_eig, threshold, min_eig >= threshold);
            }
            ConstraintKind::Zero => {
                let res = linalg::max_abs(&c.expr.eval(x));
                rep.push(format!("{} residual", c.name()), res, EQUALITY_TOL, res <= EQUALITY_TOL);
            }
        }
    }
    let (n_x, n_p) = (problem.n_x(), problem.n_p());
    let f_q = problem.program.layout.extract(problem.vars.f_q, x);
    if let Ok(f) = fq_to_f(&f_q, n_x, n_p, problem.data.n_cols()) {
        let worst = (0..problem.options.interior_samples.max(1))
            .map(|k| permutation_residual(&f, &f_q, n_x, &problem.pbox.interpolate(&halton(k, n_p))))
            .fold(0.0, f64::max);
        rep.push("F/F_Q identity residual", worst, PERMUTATION_TOL, worst <= PERMUTATION_TOL);
    }
    if let Some(id) = problem.vars.xi {
        let xi = problem.program.layout.extract(id, x);
        let nxp = n_x * n_p;
        let worst = (0..problem.options.interior_samples)
            .map(|k| {
                let p = problem.pbox.interpolate(&halton(k, n_p));
                let nv = linalg::vstack(&[&identity(2 * nxp), &scheduling_block(&p, n_x)]);
                linalg::max_sym_eig(&linalg::symmetrize(&(nv.transpose() * &xi * nv)))
            })
            .fold(f64::NEG_INFINITY, f64::max);
        if worst.is_finite() {
            rep.push("multiplier condition at interior points (max eigenvalue)", worst, -eps, worst <= -eps * (1.0 - 1e-9));
        }
    }
    rep
}

/// Relax every non-auxiliary PSD constraint by a nonnegative slack and
/// minimize the total slack, to locate which constraints cannot be met.
fn infeasibility_report(problem: &SynthesisProblem, backend: &dyn SdpBackend, status: &str) -> InfeasibilityReport {
    let base = &problem.program;
    let mut layout = base.layout.clone();
    let psd_idx: Vec<usize> = base
        .constraints
        .iter()
        .enumerate()
        .filter(|(_, c)| !c.auxiliary && matches!(c.kind, ConstraintKind::Psd { .. }))
        .map(|(i, _)| i)
        .collect();
    let slacks: Vec<BlockId> = psd_idx
        .iter()
        .map(|i| layout.add(&format!("slack {i}"), BlockShape::Full(1, 1)))
        .collect();
    let mut relaxed = SdpProgram::new(layout.clone());
    for (i, c) in base.constraints.iter().enumerate() {
        if c.auxiliary {
            continue;
        }
        let mut c = c.clone();
        if let Some(pos) = psd_idx.iter().position(|&j| j == i) {
            let t = layout.matrix(slacks[pos]);
            let n = c.expr.nrows();
            c.expr = c.expr.add(&t.kron_identity(n)).expect("square constraint");
        }
        relaxed.constraints.push(c);
    }
    for (k, s) in slacks.iter().enumerate() {
        let t = layout.matrix(*s);
        relaxed
            .add_psd("slack", &k.to_string(), t.clone(), 0.0)
            .expect("scalar slack");
        relaxed.objective += t.trace_coefficients(layout.n_vars());
    }
    let mut violations = Vec::new();
    if let Ok(out) = backend.solve(&relaxed) {
        if out.status == BackendStatus::Solved {
            for (k, &i) in psd_idx.iter().enumerate() {
                let t = layout.extract(slacks[k], &out.x)[(0, 0)];
                if t > 1e-7 {
                    violations.push((base.constraints[i].name(), t));
                }
            }
        }
    }
    InfeasibilityReport {
        backend_status: status.to_string(),
        violations,
    }
}

fn backend_point(problem: &SynthesisProblem, backend: &dyn SdpBackend) -> Result<BackendOutcome> {
    let out = backend.solve(&problem.program)?;
    match &out.status {
        BackendStatus::Solved => Ok(out),
        BackendStatus::Infeasible => Err(Error::Infeasible(infeasibility_report(problem, backend, &out.detail))),
        BackendStatus::Failed(detail) => {
            // a relaxation that needs positive slack certifies infeasibility
            // even when the backend could not
            let report = infeasibility_report(problem, backend, detail);
            if report.violations.is_empty() {
                Err(Error::Backend {
                    backend: backend.name().into(),
                    detail: detail.clone(),
                })
            } else {
                Err(Error::Infeasible(report))
            }
        }
    }
}

/// Scale `s` of the guaranteed cost, estimated as `trace(Z⁻¹)/n_x` at a
/// feasible point. The feasibility solve runs on weights of unit size and
/// the estimate is scaled back, so heavy weights do not squeeze `Z`
/// against the margin.
fn cost_scale(problem: &SynthesisProblem, backend: &dyn SdpBackend) -> Result<f64> {
    let options = SynthesisOptions {
        objective: Objective::Feasibility,
        normalize: false,
        ..problem.options
    };
    let c = linalg::max_sym_eig(&problem.q).max(linalg::max_sym_eig(&problem.r));
    let c = if c.is_finite() && c > 0.0 { c } else { 1.0 };
    let feas = assemble(&problem.data, &(&problem.q / c), &(&problem.r / c), &problem.pbox, &options)?;
    let out = backend_point(&feas, backend)?;
    let z = linalg::symmetrize(&feas.program.layout.extract(feas.vars.z, &out.x));
    let p = z.try_inverse().ok_or(Error::Conditioning { min_eig: 0.0 })?;
    let s = c * p.trace() / problem.n_x() as f64;
    Ok(if s.is_finite() { s.clamp(1e-6, 1e6) } else { 1.0 })
}

/// Solve with weights `Q/s`, `R/s` and map the point back. The map
/// `Z = Z'/s` (likewise `F_Q`, `Ξ`, `Y_0`, `Ȳ`) carries solutions of the
/// scaled program to solutions of the original one and divides every
/// margin by `s`; the scaled program therefore gets `epsilon · s`, padded by
/// [`SCALED_MARGIN_BUFFER`].
fn scaled_point(problem: &SynthesisProblem, backend: &dyn SdpBackend, s: f64, epsilon: f64) -> Result<BackendOutcome> {
    let options = SynthesisOptions {
        epsilon: epsilon * s * SCALED_MARGIN_BUFFER,
        normalize: false,
        ..problem.options
    };
    let scaled = assemble(&problem.data, &(&problem.q / s), &(&problem.r / s), &problem.pbox, &options)?;
    let mut out = backend_point(&scaled, backend)?;
    let layout = &scaled.program.layout;
    let v = &scaled.vars;
    let mut factors = vec![(v.z, 1.0 / s), (v.f_q, 1.0 / s), (v.y0, 1.0 / s), (v.ybar, 1.0 / s)];
    if let Some(id) = v.xi {
        factors.push((id, 1.0 / s));
    }
    if let Some(id) = v.x_aux {
        factors.push((id, s));
    }
    for (id, f) in factors {
        let b = layout.block(id);
        let len = b.shape.len();
        out.x.rows_mut(b.offset, len).scale_mut(f);
    }
    Ok(out)
}

/// Solve the program, re-verify the returned point, and recover the gains.
///
/// With `normalize` set and a cost objective, a feasibility solve first
/// estimates the cost scale `s`; the cost-minimizing program is then solved
/// with `Q/s`, `R/s`, which keeps `Z` of order one for the backend, and the
/// point is mapped back. Verification always runs on the original program,
/// with the margin divided by `max(1, s)` so strictness is measured
/// relative to the size of `Z`.
pub fn solve(problem: &SynthesisProblem, backend: &dyn SdpBackend) -> Result<SynthesisSolution> {
    if !(backend.supports_psd() && backend.supports_equalities()) {
        return Err(Error::Backend {
            backend: backend.name().into(),
            detail: "backend lacks PSD cones or equality constraints".into(),
        });
    }
    let wants_scale = problem.options.normalize && problem.options.objective != Objective::Feasibility && backend.optimizes();
    let (out, epsilon) = if wants_scale {
        let s = cost_scale(problem, backend)?;
        let epsilon = problem.options.epsilon / s.max(1.0);
        log::debug!("cost scale {s:e}, margin {epsilon:e}");
        (scaled_point(problem, backend, s, epsilon)?, epsilon)
    } else {
        (backend_point(problem, backend)?, problem.options.epsilon)
    };
    let x = &out.x;
    let rescaled;
    let reference = if epsilon == problem.options.epsilon {
        problem
    } else {
        let options = SynthesisOptions {
            epsilon,
            ..problem.options
        };
        rescaled = assemble(&problem.data, &problem.q, &problem.r, &problem.pbox, &options)?;
        &rescaled
    };
    let verification = verify(reference, x);
    if !verification.all_passed() {
        let msg: Vec<String> = verification
            .failures()
            .iter()
            .map(|c| format!("{}: {:e} (threshold {:e})", c.name, c.value, c.threshold))
            .collect();
        return Err(Error::Verification(msg.join("; ")));
    }
    let layout = &problem.program.layout;
    let (n_x, n_p) = (problem.n_x(), problem.n_p());
    let z = linalg::symmetrize(&layout.extract(problem.vars.z, x));
    let f_q = layout.extract(problem.vars.f_q, x);
    let f = fq_to_f(&f_q, n_x, n_p, problem.data.n_cols())?;
    let xi = problem
        .vars
        .xi
        .map(|id| layout.extract(id, x))
        .unwrap_or_else(|| DMatrix::zeros(0, 0));
    let y0 = layout.extract(problem.vars.y0, x);
    let ybar = layout.extract(problem.vars.ybar, x);
    let gains = recover_gains(&z, &y0, &ybar)?;
    let equality_residual = problem
        .program
        .constraints
        .iter()
        .filter(|c| matches!(c.kind, ConstraintKind::Zero))
        .map(|c| c.violation(x))
        .fold(0.0, f64::max);
    Ok(SynthesisSolution {
        z,
        f_q,
        f,
        xi,
        y0,
        ybar,
        gains,
        diagnostics: SolverDiagnostics {
            backend: backend.name().into(),
            status: out.detail.clone(),
            iterations: out.iterations,
            objective: problem.program.objective.dot(x),
            max_violation: problem.program.max_violation(x),
            equality_residual,
        },
        verification,
        epsilon,
        x: out.x.clone(),
    })
}

/// Data-driven LTI state feedback: the `n_p = 0` case of the same program.
pub fn synth_lti(
    dm: &DataMatrices,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    backend: &dyn SdpBackend,
    options: &SynthesisOptions,
) -> Result<(DMatrix<f64>, SynthesisSolution)> {
    if dm.n_p() != 0 {
        return Err(Error::Parameter(format!(
            "LTI design needs data without scheduling, got n_p = {}",
            dm.n_p()
        )));
    }
    let problem = assemble(dm, q, r, &PBox::empty(), options)?;
    let sol = solve(&problem, backend)?;
    Ok((sol.gains.k0.clone(), sol))
}

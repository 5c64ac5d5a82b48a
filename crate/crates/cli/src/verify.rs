//! Invariant suite behind `ddvel verify`.

use ddvel::basis::{SchedulingArgs, SchedulingBasis};
use ddvel::control::{ControllerState, FixedPointOptions, VelocityController};
use ddvel::datarep::{build_data_matrices, check_pe, closed_loop_consistency, closed_loop_step, VelocityGains, DEFAULT_RANK_TOL};
use ddvel::dictionary::NlDataDictionary;
use ddvel::linalg;
use ddvel::synthesis::{self, fq_to_f, permutation_residual};
use ddvel::velocity::{
    difference_dictionary, disc_lpv_coefficients, disc_velocity_analytic, lpv_eval, velocity_matrices_quadrature,
    DEFAULT_QUADRATURE_NODES,
};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::archive::{self, Archive};
use crate::config::RunConfig;
use crate::error::CliResult;
use crate::pipeline::{self, ControllerKind};
use crate::seeds::{stream_rng, Stream};

pub const QUADRATURE_TOL: f64 = 1e-10;
pub const FTC_TOL: f64 = 1e-8;
pub const PERMUTATION_TOL: f64 = 1e-10;
pub const COROLLARY_TOL: f64 = 1e-8;
pub const REALIZATION_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Line {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }

    fn bound(name: impl Into<String>, value: f64, tol: f64) -> Self {
        Self::new(name, value <= tol, format!("{value:.3e} <= {tol:.0e}"))
    }

    pub fn render(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, half_width: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-half_width..half_width))
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

/// Quadrature velocity matrices against the closed form on random segments.
pub fn quadrature(cfg: &RunConfig, rng: &mut ChaCha8Rng, samples: usize) -> CliResult<Line> {
    let plant = pipeline::plant(cfg);
    let params = cfg.disc_params();
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let (x, xp) = (uniform(rng, 2, 4.0), uniform(rng, 2, 4.0));
        let (u, up) = (uniform(rng, 1, 3.0), uniform(rng, 1, 3.0));
        let args = SchedulingArgs {
            x: &x,
            u: &u,
            x_prev: &xp,
            u_prev: &up,
        };
        let q = velocity_matrices_quadrature(&plant, &args, DEFAULT_QUADRATURE_NODES)?;
        let a = disc_velocity_analytic(x[0], xp[0], &params)?;
        worst = worst.max(linalg::max_abs(&(q.a - a.a))).max(linalg::max_abs(&(q.b - a.b)));
    }
    Ok(Line::bound("quadrature matches closed-form velocity matrices", worst, QUADRATURE_TOL))
}

/// Recorded increments obey the velocity form exactly.
pub fn ftc(cfg: &RunConfig, d: &NlDataDictionary) -> CliResult<Line> {
    let params = cfg.disc_params();
    let (xs, us) = (d.states(), d.inputs());
    let mut worst: f64 = 0.0;
    for k in 1..d.len() - 1 {
        let m = disc_velocity_analytic(xs[k][0], xs[k - 1][0], &params)?;
        let lhs = &xs[k + 1] - &xs[k];
        let rhs = &m.a * (&xs[k] - &xs[k - 1]) + &m.b * (&us[k] - &us[k - 1]);
        worst = worst.max((lhs - rhs).amax() / (1.0 + xs[k + 1].amax()));
    }
    Ok(Line::bound("recorded increments satisfy the velocity form", worst, FTC_TOL))
}

pub fn permutation(rng: &mut ChaCha8Rng, cases: usize) -> CliResult<Line> {
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (n_x, n_p, n_cols) = (rng.gen_range(1..4), rng.gen_range(1..3), rng.gen_range(1..8));
        let f_q = uniform_matrix(rng, n_cols * (1 + n_p), n_x * (1 + n_p));
        let f = fq_to_f(&f_q, n_x, n_p, n_cols)?;
        let p = uniform(rng, n_p, 2.0);
        worst = worst.max(permutation_residual(&f, &f_q, n_x, &p));
    }
    Ok(Line::bound("multiplier permutation identity", worst, PERMUTATION_TOL))
}

/// The data-based closed loop of random gains against the disc's velocity
/// model, on the unaugmented velocity data.
pub fn corollary(cfg: &RunConfig, d: &NlDataDictionary, rng: &mut ChaCha8Rng) -> CliResult<Vec<Line>> {
    let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1)?;
    let dm = build_data_matrices(&difference_dictionary(d, &basis)?)?;
    let pe = check_pe(&dm, DEFAULT_RANK_TOL);
    let pe_line = Line::new(
        "velocity data persistently exciting",
        pe.is_pe,
        format!("rank {} of {}", pe.rank, pe.required),
    );
    if !pe.is_pe {
        return Ok(vec![pe_line, Line::new("data-based closed loop matches the model", false, "skipped: data not PE")]);
    }
    let coef = disc_lpv_coefficients(&cfg.disc_params());
    let gains = VelocityGains::new(uniform_matrix(rng, 1, 2), uniform_matrix(rng, 1, 2))?;
    let cm = closed_loop_consistency(&dm, &gains)?;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = uniform(rng, 1, 1.0);
        let dx = uniform(rng, 2, 1.0);
        let m = lpv_eval(&coef, &p)?;
        let model = (&m.a + &m.b * gains.eval(&p)?) * &dx;
        let data = closed_loop_step(&dm, &cm, &dx, &p)?;
        worst = worst.max((model - data).amax());
    }
    Ok(vec![pe_line, Line::bound("data-based closed loop matches the model", worst, COROLLARY_TOL)])
}

/// Re-run the independent certificate checks on the archived solver point.
pub fn archive_certificates(cfg: &RunConfig, d: &NlDataDictionary, a: &Archive) -> CliResult<Line> {
    let kind = ControllerKind::parse(&a.controller).ok_or_else(|| crate::CliError::Config(format!("unknown controller `{}`", a.controller)))?;
    let np = Some(a.n_p);
    let mut s = pipeline::setup(cfg, d, kind, np)?;
    s.q = archive::matrix(&a.q, a.n_x)?;
    s.r = archive::matrix(&a.r, a.n_u)?;
    s.pbox = pipeline::archive_pbox(a)?;
    let mut opts = pipeline::options(cfg)?;
    opts.epsilon = a.epsilon;
    opts.objective = synthesis::Objective::parse(&a.objective)?;
    opts.normalize = a.normalize;
    let problem = synthesis::assemble(&s.data, &s.q, &s.r, &s.pbox, &opts)?;
    let x = a.solver_point();
    if x.len() != problem.program.n_vars() {
        return Ok(Line::new(
            format!("{} certificate", a.controller),
            false,
            format!("archive point has {} entries, program has {}", x.len(), problem.program.n_vars()),
        ));
    }
    let report = synthesis::verify(&problem, &x);
    let failures: Vec<String> = report.failures().iter().map(|c| format!("{} ({:.3e})", c.name, c.value)).collect();
    let detail = if failures.is_empty() {
        format!("{} checks", report.checks.len())
    } else {
        failures.join("; ")
    };
    Ok(Line::new(format!("{} certificate re-verified", a.controller), failures.is_empty(), detail))
}

/// Closed-loop spectral radius of the augmented disc velocity model at the
/// vertices of the archived box.
pub fn vertex_radius(cfg: &RunConfig, a: &Archive) -> CliResult<Line> {
    let coef = disc_lpv_coefficients(&cfg.disc_params());
    let gains = VelocityGains::new(a.k0()?, a.kbar()?)?;
    let alpha = a.alpha.unwrap_or(1.0);
    let c_r = archive::matrix(&a.c_r, 2)?;
    let pbox = pipeline::archive_pbox(a)?;
    let mut worst: f64 = 0.0;
    for v in pbox.vertices() {
        let m = lpv_eval(&coef, v)?;
        let (aa, bb) = if a.n_x == 3 {
            let mut aa = DMatrix::zeros(3, 3);
            aa.view_mut((0, 0), (2, 2)).copy_from(&m.a);
            aa.view_mut((2, 0), (1, 2)).copy_from(&(-&c_r));
            aa[(2, 2)] = alpha;
            let mut bb = DMatrix::zeros(3, 1);
            bb.view_mut((0, 0), (2, 1)).copy_from(&m.b);
            (aa, bb)
        } else {
            (m.a, m.b)
        };
        worst = worst.max(linalg::spectral_radius(&(aa + bb * gains.eval(v)?)));
    }
    Ok(Line::new(
        "velocity closed loop contractive at the vertices",
        worst < 1.0,
        format!("max spectral radius {worst:.6}"),
    ))
}

/// One realized step satisfies `Δu = K(p) Δx̃` from a random memory.
pub fn realization(a: &Archive, rng: &mut ChaCha8Rng) -> CliResult<Line> {
    let gains = VelocityGains::new(a.k0()?, a.kbar()?)?;
    let basis = SchedulingBasis::sinc_difference(a.states.clone(), a.n_x, a.n_u)?;
    let integrator = match a.alpha {
        Some(alpha) => Some(ddvel::control::Integrator::new(alpha, archive::matrix(&a.c_r, 2)?)?),
        None => None,
    };
    let n_i = a.n_x - 2;
    let ctrl = VelocityController::new(gains.clone(), basis, integrator, FixedPointOptions::default())?;
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let state = ControllerState {
            x_prev: uniform(rng, a.n_x, 2.0),
            u_prev: uniform(rng, a.n_u, 2.0),
            x_i: uniform(rng, n_i, 2.0),
        };
        let x = uniform(rng, 2, 2.0);
        let r = uniform(rng, 1, 2.0);
        let (out, _) = ctrl.controller_step(&state, &x, &r, 1)?;
        let xa = if n_i == 0 {
            x.clone()
        } else {
            linalg::vstack_vec(&[&x, &state.x_i])
        };
        let expect = &state.u_prev + gains.eval(&out.p)? * (xa - &state.x_prev);
        worst = worst.max((out.u - expect).amax());
    }
    Ok(Line::bound("realized input increments follow K(p)", worst, REALIZATION_TOL))
}

/// The whole suite. Archive checks run for every archive given.
pub fn run(cfg: &RunConfig, d: &NlDataDictionary, archives: &[Archive]) -> CliResult<Vec<Line>> {
    let mut rng = stream_rng(cfg.seed, Stream::Verification);
    let mut lines = vec![quadrature(cfg, &mut rng, 200)?];
    if d.len() >= 3 {
        lines.push(ftc(cfg, d)?);
    }
    lines.push(permutation(&mut rng, 50)?);
    lines.extend(corollary(cfg, d, &mut rng)?);
    for a in archives {
        lines.push(archive_certificates(cfg, d, a)?);
        if a.controller == ControllerKind::Velocity.name() && a.basis == "sinc-difference" {
            lines.push(vertex_radius(cfg, a)?);
            lines.push(realization(a, &mut rng)?);
        }
    }
    Ok(lines)
}

//! The collect → synth → simulate pipeline.

use std::path::Path;

use ddvel::basis::SchedulingBasis;
use ddvel::control::{
    augment_integrator, collect_open_loop, simulate, Controller, FixedPointOptions, Integrator,
    StateFeedbackController, Trajectory, TrajectoryMetrics, VelocityController,
};
use ddvel::datarep::{build_data_matrices, build_raw_data_matrices, check_pe, DataMatrices, PeReport, VelocityGains, DEFAULT_RANK_TOL};
use ddvel::dictionary::{load_dictionary, ColumnMap, NlDataDictionary};
use ddvel::pbox::{build_pbox, PBox, DEFAULT_FLOOR};
use ddvel::plant::DiscPlant;
use ddvel::synthesis::{
    assemble, backend_by_name, solve, ClarabelBackend, Objective, SdpBackend, SynthesisOptions, SynthesisProblem,
};
use ddvel::velocity::difference_dictionary;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::archive::{self, Archive};
use crate::config::{DesignConfig, RunConfig, ScenarioConfig};
use crate::error::{CliError, CliResult};
use crate::seeds::{stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ControllerKind {
    Velocity,
    DirectLpv,
    Lti,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::Velocity, ControllerKind::DirectLpv, ControllerKind::Lti];

    pub fn name(&self) -> &'static str {
        match self {
            ControllerKind::Velocity => "velocity",
            ControllerKind::DirectLpv => "direct-lpv",
            ControllerKind::Lti => "lti",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    /// The velocity controller is designed on increments; the baselines on
    /// the raw signals.
    pub fn uses_increments(&self) -> bool {
        matches!(self, ControllerKind::Velocity)
    }
}

/// The tracked output `θ`.
pub fn tracked_output() -> DMatrix<f64> {
    DMatrix::from_row_slice(1, 2, &[1.0, 0.0])
}

pub fn plant(cfg: &RunConfig) -> DiscPlant {
    DiscPlant::new(cfg.disc_params())
}

/// Open-loop data: from `data.file` if given, otherwise simulated with the
/// configured excitation from the collection stream.
pub fn collect(cfg: &RunConfig) -> CliResult<NlDataDictionary> {
    if let Some(file) = &cfg.data.file {
        return Ok(load_dictionary(file, &ColumnMap::standard(1, 2))?.with_sample_time(cfg.plant.ts));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Collection);
    let d = &cfg.data;
    let x1 = DVector::from_fn(2, |i, _| {
        if d.x1_low[i] < d.x1_high[i] {
            rng.gen_range(d.x1_low[i]..d.x1_high[i])
        } else {
            d.x1_low[i]
        }
    });
    let noise = Normal::new(0.0, d.input_std).map_err(|e| CliError::Config(format!("data.input_std: {e}")))?;
    let inputs: Vec<_> = (0..=d.n).map(|_| DVector::from_element(1, noise.sample(&mut rng))).collect();
    Ok(collect_open_loop(&plant(cfg), &x1, &inputs)?)
}

/// Everything a design needs besides the solver.
pub struct DesignSetup {
    pub kind: ControllerKind,
    pub basis: SchedulingBasis,
    pub integrator: Option<Integrator>,
    pub data: DataMatrices,
    pub pbox: PBox,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

fn basis_for(design: &DesignConfig, n_x: usize, n_u: usize, np: Option<usize>) -> CliResult<SchedulingBasis> {
    let basis = match (np, design.basis.as_str()) {
        (Some(0), _) | (_, "none") => SchedulingBasis::empty(n_x, n_u),
        (_, "sinc-difference") => SchedulingBasis::sinc_difference(design.states.clone(), n_x, n_u)?,
        (_, "sinc-ratio") => SchedulingBasis::sinc_ratio(design.states.clone(), n_x, n_u)?,
        (_, "polynomial-identity") => SchedulingBasis::identity(n_x, n_u),
        (_, other) => return Err(CliError::Config(format!("unknown basis `{other}`"))),
    };
    if let Some(n) = np {
        if n != basis.n_p() {
            return Err(CliError::Config(format!(
                "--np {n} does not match the `{}` basis, which has n_p = {}",
                design.basis,
                basis.n_p()
            )));
        }
    }
    Ok(basis)
}

fn diagonal(values: &[f64], n: usize, name: &str) -> CliResult<DMatrix<f64>> {
    match values.len() {
        1 => Ok(DMatrix::from_diagonal_element(n, n, values[0])),
        len if len == n => Ok(DMatrix::from_diagonal(&DVector::from_column_slice(values))),
        len => Err(CliError::Config(format!("weights.{name} has {len} entries, the design needs {n} (or 1)"))),
    }
}

/// Basis, integrator and data matrices of a design.
pub fn design_data(
    cfg: &RunConfig,
    d: &NlDataDictionary,
    kind: ControllerKind,
    np: Option<usize>,
) -> CliResult<(SchedulingBasis, Option<Integrator>, DataMatrices)> {
    let design = cfg.design(kind);
    let integrator = match design.alpha {
        Some(a) => Some(Integrator::new(a, tracked_output())?),
        None => None,
    };
    let da = match &integrator {
        Some(i) => augment_integrator(d, i)?,
        None => d.clone(),
    };
    let basis = basis_for(design, da.n_x(), da.n_u(), np)?;
    let data = if kind.uses_increments() {
        build_data_matrices(&difference_dictionary(&da, &basis)?)?
    } else {
        build_raw_data_matrices(&da, &basis)?
    };
    Ok((basis, integrator, data))
}

pub fn setup(cfg: &RunConfig, d: &NlDataDictionary, kind: ControllerKind, np: Option<usize>) -> CliResult<DesignSetup> {
    let design = cfg.design(kind);
    let (basis, integrator, data) = design_data(cfg, d, kind, np)?;
    let (n_x, n_u) = (data.n_x(), data.n_u());
    let pbox = if basis.n_p() == 0 {
        PBox::empty()
    } else {
        match (&design.p_lower, &design.p_upper) {
            (Some(lo), Some(hi)) => {
                if lo.len() != basis.n_p() || hi.len() != basis.n_p() {
                    return Err(CliError::Config(format!(
                        "{}: scheduling bounds need {} entries",
                        kind.name(),
                        basis.n_p()
                    )));
                }
                PBox::from_bounds(DVector::from_column_slice(lo), DVector::from_column_slice(hi))?
            }
            _ => build_pbox(&data.p, design.margin, DEFAULT_FLOOR)?,
        }
    };
    let q = diagonal(&cfg.weights.q, n_x, "q")?;
    let r = diagonal(&cfg.weights.r, n_u, "r")?;
    Ok(DesignSetup {
        kind,
        basis,
        integrator,
        data,
        pbox,
        q,
        r,
    })
}

/// PE of the data as the design sees them; with `plant_only` the
/// integrator state is left out.
pub fn pe_report(
    cfg: &RunConfig,
    d: &NlDataDictionary,
    kind: ControllerKind,
    np: Option<usize>,
    plant_only: bool,
) -> CliResult<PeReport> {
    let s = if plant_only {
        let mut c = cfg.clone();
        match kind {
            ControllerKind::Velocity => c.velocity.alpha = None,
            ControllerKind::DirectLpv => c.direct_lpv.alpha = None,
            ControllerKind::Lti => c.lti.alpha = None,
        }
        design_data(&c, d, kind, np)?
    } else {
        design_data(cfg, d, kind, np)?
    };
    Ok(check_pe(&s.2, DEFAULT_RANK_TOL))
}

pub fn options(cfg: &RunConfig) -> CliResult<SynthesisOptions> {
    Ok(SynthesisOptions {
        epsilon: cfg.solver.epsilon,
        objective: Objective::parse(&cfg.solver.objective)?,
        normalize: cfg.solver.normalize,
        ..SynthesisOptions::default()
    })
}

pub fn backend(cfg: &RunConfig, name: Option<&str>) -> CliResult<Box<dyn SdpBackend>> {
    let name = name.unwrap_or(&cfg.solver.backend);
    if name == "clarabel" {
        return Ok(Box::new(ClarabelBackend {
            max_iter: cfg.solver.max_iter,
            ..ClarabelBackend::default()
        }));
    }
    backend_by_name(name).map_err(|e| CliError::Config(e.to_string()))
}

pub fn problem(cfg: &RunConfig, s: &DesignSetup) -> CliResult<SynthesisProblem> {
    Ok(assemble(&s.data, &s.q, &s.r, &s.pbox, &options(cfg)?)?)
}

/// Synthesize one controller. With `emit` set, the assembled program and
/// the solution are written there as text.
pub fn synthesize(
    cfg: &RunConfig,
    d: &NlDataDictionary,
    kind: ControllerKind,
    np: Option<usize>,
    backend: &dyn SdpBackend,
    emit: Option<&Path>,
) -> CliResult<Archive> {
    let s = setup(cfg, d, kind, np)?;
    let pe = check_pe(&s.data, DEFAULT_RANK_TOL);
    if !pe.is_pe {
        return Err(CliError::NotPe(format!(
            "{} data are not persistently exciting: rank {} < {} (increase data.n)",
            kind.name(),
            pe.rank,
            pe.required
        )));
    }
    let prob = problem(cfg, &s)?;
    if let Some(dir) = emit {
        let path = dir.join(format!("problem_{}.txt", kind.name()));
        let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        prob.write_text(std::io::BufWriter::new(f))?;
    }
    let sol = solve(&prob, backend)?;
    if let Some(dir) = emit {
        let path = dir.join(format!("solution_{}.txt", kind.name()));
        let f = std::fs::File::create(&path).map_err(|e| CliError::io(&path, e))?;
        sol.write_text(std::io::BufWriter::new(f))?;
    }
    let mut a = Archive {
        controller: kind.name().into(),
        seed: cfg.seed,
        basis: if s.basis.n_p() == 0 { "none".into() } else { cfg.design(kind).basis.clone() },
        states: cfg.design(kind).states.clone(),
        n_x: s.data.n_x(),
        n_u: s.data.n_u(),
        n_p: s.basis.n_p(),
        alpha: s.integrator.as_ref().map(|i| i.alpha),
        c_r: archive::rows(&tracked_output()),
        p_lower: s.pbox.lower().iter().copied().collect(),
        p_upper: s.pbox.upper().iter().copied().collect(),
        q: archive::rows(&s.q),
        r: archive::rows(&s.r),
        objective: cfg.solver.objective.clone(),
        epsilon: cfg.solver.epsilon,
        normalize: cfg.solver.normalize,
        pe_rank: pe.rank,
        pe_required: pe.required,
        k0: vec![],
        kbar: vec![],
        diagnostics: Default::default(),
        verification: vec![],
        solver_point: vec![],
    };
    a.fill_solution(&sol);
    Ok(a)
}

/// Controller realized from an archive.
pub fn controller(a: &Archive) -> CliResult<Box<dyn Controller>> {
    let kind = ControllerKind::parse(&a.controller)
        .ok_or_else(|| CliError::Config(format!("archive names unknown controller `{}`", a.controller)))?;
    let gains = VelocityGains::new(a.k0()?, a.kbar()?)?;
    let design = DesignConfig {
        basis: a.basis.clone(),
        states: a.states.clone(),
        ..DesignConfig::default()
    };
    let basis = basis_for(&design, a.n_x, a.n_u, None)?;
    let integrator = match a.alpha {
        Some(alpha) => Some(Integrator::new(alpha, archive::matrix(&a.c_r, 2)?)?),
        None => None,
    };
    Ok(match kind {
        ControllerKind::Velocity => Box::new(VelocityController::new(gains, basis, integrator, FixedPointOptions::default())?),
        _ => Box::new(StateFeedbackController::new(kind.name(), gains, basis, integrator)?),
    })
}

pub fn archive_pbox(a: &Archive) -> CliResult<PBox> {
    Ok(PBox::from_bounds(
        DVector::from_column_slice(&a.p_lower),
        DVector::from_column_slice(&a.p_upper),
    )?)
}

#[derive(Debug, Clone)]
pub struct Run {
    pub scenario: String,
    pub controller: String,
    pub trajectory: Trajectory,
    pub metrics: TrajectoryMetrics,
    pub expected: Option<String>,
}

impl Run {
    /// Divergence that the scenario did not announce.
    pub fn unexpected_divergence(&self) -> bool {
        self.trajectory.diverged && self.expected.as_deref() != Some("diverged")
    }

    pub fn matches_expectation(&self) -> Option<bool> {
        self.expected.as_ref().map(|e| e == self.metrics.outcome.as_str())
    }
}

pub fn run_scenario(cfg: &RunConfig, a: &Archive, sc: &ScenarioConfig) -> CliResult<Run> {
    let plant = plant(cfg);
    let mut ctrl = controller(a)?;
    let ts = cfg.plant.ts;
    let reference = |k: usize| DVector::from_element(1, sc.reference_at(k, ts));
    let pbox = archive_pbox(a)?;
    let x0 = DVector::from_column_slice(&sc.x_init);
    let trajectory = simulate(&plant, ctrl.as_mut(), &reference, &x0, sc.steps(ts).max(1), Some(&pbox))?;
    let metrics = trajectory.metrics(&tracked_output(), cfg.metrics.settle_tol, cfg.metrics.window);
    let kind = ControllerKind::parse(&a.controller);
    Ok(Run {
        scenario: sc.name.clone(),
        controller: a.controller.clone(),
        expected: kind.and_then(|k| sc.expects(k)).map(str::to_string),
        trajectory,
        metrics,
    })
}

/// Every scenario against every archive, scenario-major, in parallel with
/// the input order preserved.
pub fn run_all(cfg: &RunConfig, archives: &[Archive]) -> CliResult<Vec<Run>> {
    let jobs: Vec<(&ScenarioConfig, &Archive)> = cfg
        .scenarios
        .iter()
        .flat_map(|s| archives.iter().map(move |a| (s, a)))
        .collect();
    jobs.into_par_iter().map(|(s, a)| run_scenario(cfg, a, s)).collect()
}

pub fn archive_path(out: &Path, kind: ControllerKind) -> std::path::PathBuf {
    out.join(format!("{}.json", kind.name()))
}

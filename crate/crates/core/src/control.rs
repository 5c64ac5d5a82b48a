//! Controller realization, closed-loop simulation and trajectory metrics.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::SchedulingBasis;
use crate::datarep::{build_data_matrices, build_raw_data_matrices, VelocityGains};
use crate::dictionary::{format_float, NlDataDictionary};
use crate::error::{Error, Result};
use crate::linalg;
use crate::pbox::PBox;
use crate::plant::Plant;
use crate::synthesis::{assemble, solve, SdpBackend, SynthesisOptions, SynthesisSolution};
use crate::velocity::difference_dictionary;

pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// `K(p) = K_0 + Σ K_i p_i`.
pub fn eval_gain(g: &VelocityGains, p: &DVector<f64>) -> Result<DMatrix<f64>> {
    g.eval(p)
}

/// Leaky integrator `x_I⁺ = α x_I + r − C_r x`.
#[derive(Debug, Clone, PartialEq)]
pub struct Integrator {
    pub alpha: f64,
    /// Selects the tracked outputs from the plant state.
    pub c_r: DMatrix<f64>,
}

impl Integrator {
    pub fn new(alpha: f64, c_r: DMatrix<f64>) -> Result<Self> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::Parameter(format!("integrator leakage must lie in (0, 1], got {alpha}")));
        }
        if !linalg::all_finite(&c_r) {
            return Err(Error::NonFinite("integrator output selector".into()));
        }
        Ok(Self { alpha, c_r })
    }

    pub fn n_i(&self) -> usize {
        self.c_r.nrows()
    }

    pub fn n_x(&self) -> usize {
        self.c_r.ncols()
    }

    pub fn step(&self, x_i: &DVector<f64>, r: &DVector<f64>, x: &DVector<f64>) -> DVector<f64> {
        x_i * self.alpha + r - &self.c_r * x
    }
}

/// Append the integrator state, generated from the recorded states with a
/// zero reference and `x_I = 0` at the first sample.
pub fn augment_integrator(d: &NlDataDictionary, integrator: &Integrator) -> Result<NlDataDictionary> {
    if integrator.n_x() != d.n_x() {
        return Err(Error::dim("integrator selector columns", d.n_x(), integrator.n_x()));
    }
    let zero_ref = DVector::zeros(integrator.n_i());
    let mut x_i = DVector::zeros(integrator.n_i());
    let mut states = Vec::with_capacity(d.len());
    for x in d.states() {
        states.push(linalg::vstack_vec(&[x, &x_i]));
        x_i = integrator.step(&x_i, &zero_ref, x);
    }
    let mut out = NlDataDictionary::new(d.inputs().to_vec(), states)?;
    out.first_index = d.first_index;
    if let Some(ts) = d.sample_time {
        out = out.with_sample_time(ts);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FixedPointOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Damping θ in `u ← (1−θ) u + θ g(u)`.
    pub damping: f64,
    /// On non-convergence, schedule with `u_{k-1}` instead of failing.
    pub fallback: bool,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            damping: 1.0,
            fallback: true,
        }
    }
}

/// Controller memory `χ_k = (x_{k-1}, u_{k-1})` plus the integrator state.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub x_prev: DVector<f64>,
    pub u_prev: DVector<f64>,
    pub x_i: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlOutput {
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    /// Scheduling used `u_{k-1}` because the fixed point did not converge.
    pub fallback: bool,
    pub fixed_point_iterations: usize,
}

pub trait Controller: Send {
    fn name(&self) -> &str;
    fn n_u(&self) -> usize;
    /// Clear the memory before a run starting at plant state `x_init`.
    fn reset(&mut self, x_init: &DVector<f64>);
    /// Input at step `k` for plant state `x` and reference `r`.
    fn control(&mut self, k: usize, x: &DVector<f64>, r: &DVector<f64>) -> Result<ControlOutput>;
}

fn integrator_part(integrator: &Option<Integrator>) -> usize {
    integrator.as_ref().map_or(0, Integrator::n_i)
}

fn augmented(x: &DVector<f64>, x_i: &DVector<f64>) -> DVector<f64> {
    if x_i.is_empty() {
        x.clone()
    } else {
        linalg::vstack_vec(&[x, x_i])
    }
}

/// Realization of a velocity gain:
/// `u_k = u_{k-1} + K(p_k)(x̃_k − x̃_{k-1})` with `x̃` the plant state,
/// optionally extended by an integrator.
#[derive(Debug, Clone)]
pub struct VelocityController {
    pub gains: VelocityGains,
    pub basis: SchedulingBasis,
    pub integrator: Option<Integrator>,
    pub options: FixedPointOptions,
    state: Option<ControllerState>,
}

impl VelocityController {
    pub fn new(
        gains: VelocityGains,
        basis: SchedulingBasis,
        integrator: Option<Integrator>,
        options: FixedPointOptions,
    ) -> Result<Self> {
        let n_aug = basis.n_x();
        if gains.n_x() != n_aug || gains.n_p() != basis.n_p() || gains.n_u() != basis.n_u() {
            return Err(Error::dim(
                "velocity gains vs basis (n_x, n_u, n_p)",
                format!("({}, {}, {})", n_aug, basis.n_u(), basis.n_p()),
                format!("({}, {}, {})", gains.n_x(), gains.n_u(), gains.n_p()),
            ));
        }
        if let Some(i) = &integrator {
            if i.n_x() + i.n_i() != n_aug {
                return Err(Error::dim("integrator vs augmented state", n_aug, i.n_x() + i.n_i()));
            }
        }
        Ok(Self {
            gains,
            basis,
            integrator,
            options,
            state: None,
        })
    }

    pub fn state(&self) -> Option<&ControllerState> {
        self.state.as_ref()
    }

    /// Seed the memory explicitly, e.g. at a forced equilibrium.
    pub fn set_state(&mut self, state: ControllerState) {
        self.state = Some(state);
    }

    /// One controller update from the given memory; returns the input and
    /// the memory for the next step.
    pub fn controller_step(
        &self,
        state: &ControllerState,
        x: &DVector<f64>,
        r: &DVector<f64>,
        step: usize,
    ) -> Result<(ControlOutput, ControllerState)> {
        let xa = augmented(x, &state.x_i);
        let dx = &xa - &state.x_prev;
        let law = |p: &DVector<f64>| -> Result<DVector<f64>> { Ok(&state.u_prev + self.gains.eval(p)? * &dx) };
        let (u, p, fallback, iters) = if !self.basis.depends_on_current_input() {
            let p = self.basis.eval_at(&xa, &state.u_prev, &state.x_prev, &state.u_prev)?;
            (law(&p)?, p, false, 0)
        } else {
            let mut u = state.u_prev.clone();
            let mut done = None;
            let mut last = f64::INFINITY;
            for j in 1..=self.options.max_iter {
                let p = self.basis.eval_at(&xa, &u, &state.x_prev, &state.u_prev)?;
                let g = law(&p)?;
                let next = &u * (1.0 - self.options.damping) + g * self.options.damping;
                last = (&next - &u).amax();
                u = next;
                if last <= self.options.tol {
                    let p = self.basis.eval_at(&xa, &u, &state.x_prev, &state.u_prev)?;
                    done = Some((u.clone(), p, j));
                    break;
                }
            }
            match done {
                Some((u, p, j)) => (u, p, false, j),
                None if self.options.fallback => {
                    let p = self.basis.eval_at(&xa, &state.u_prev, &state.x_prev, &state.u_prev)?;
                    (law(&p)?, p, true, self.options.max_iter)
                }
                None => {
                    return Err(Error::FixedPoint {
                        step,
                        last_update: last,
                    })
                }
            }
        };
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("control input at step {step}")));
        }
        let x_i = match &self.integrator {
            Some(i) => i.step(&state.x_i, r, x),
            None => DVector::zeros(0),
        };
        let next = ControllerState {
            x_prev: xa,
            u_prev: u.clone(),
            x_i,
        };
        Ok((
            ControlOutput {
                u,
                p,
                fallback,
                fixed_point_iterations: iters,
            },
            next,
        ))
    }
}

impl Controller for VelocityController {
    fn name(&self) -> &str {
        "velocity"
    }

    fn n_u(&self) -> usize {
        self.gains.n_u()
    }

    /// `χ_1 = (x̃_1, 0)` with the integrator starting at zero.
    fn reset(&mut self, x_init: &DVector<f64>) {
        let x_i = DVector::zeros(integrator_part(&self.integrator));
        self.state = Some(ControllerState {
            x_prev: augmented(x_init, &x_i),
            u_prev: DVector::zeros(self.gains.n_u()),
            x_i,
        });
    }

    fn control(&mut self, k: usize, x: &DVector<f64>, r: &DVector<f64>) -> Result<ControlOutput> {
        if self.state.is_none() {
            self.reset(x);
        }
        let state = self.state.as_ref().expect("initialized above");
        let (out, next) = self.controller_step(state, x, r, k)?;
        self.state = Some(next);
        Ok(out)
    }
}

/// Static scheduled state feedback `u_k = K(p_k) x̃_k` on the plant state
/// extended by an integrator. With an empty basis this is LTI feedback.
#[derive(Debug, Clone)]
pub struct StateFeedbackController {
    pub label: String,
    pub gains: VelocityGains,
    pub basis: SchedulingBasis,
    pub integrator: Option<Integrator>,
    x_i: DVector<f64>,
}

impl StateFeedbackController {
    pub fn new(
        label: &str,
        gains: VelocityGains,
        basis: SchedulingBasis,
        integrator: Option<Integrator>,
    ) -> Result<Self> {
        if basis.depends_on_previous() || basis.depends_on_current_input() {
            return Err(Error::Parameter(format!(
                "static feedback needs a basis of the current state only; `{}` reads more",
                basis.kind_name()
            )));
        }
        if gains.n_x() != basis.n_x() || gains.n_p() != basis.n_p() {
            return Err(Error::dim(
                "feedback gains vs basis (n_x, n_p)",
                format!("({}, {})", basis.n_x(), basis.n_p()),
                format!("({}, {})", gains.n_x(), gains.n_p()),
            ));
        }
        let n_i = integrator_part(&integrator);
        Ok(Self {
            label: label.into(),
            gains,
            basis,
            integrator,
            x_i: DVector::zeros(n_i),
        })
    }
}

impl Controller for StateFeedbackController {
    fn name(&self) -> &str {
        &self.label
    }

    fn n_u(&self) -> usize {
        self.gains.n_u()
    }

    fn reset(&mut self, _x_init: &DVector<f64>) {
        self.x_i = DVector::zeros(integrator_part(&self.integrator));
    }

    fn control(&mut self, k: usize, x: &DVector<f64>, r: &DVector<f64>) -> Result<ControlOutput> {
        let xa = augmented(x, &self.x_i);
        let zero_u = DVector::zeros(self.gains.n_u());
        let p = self.basis.eval_at(&xa, &zero_u, &xa, &zero_u)?;
        let u = self.gains.eval(&p)? * &xa;
        if !u.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("control input at step {k}")));
        }
        if let Some(i) = &self.integrator {
            self.x_i = i.step(&self.x_i, r, x);
        }
        Ok(ControlOutput {
            u,
            p,
            fallback: false,
            fixed_point_iterations: 0,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RecordFlags {
    pub fallback: bool,
    pub p_outside: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub k: usize,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub p: DVector<f64>,
    pub r: DVector<f64>,
    pub flags: RecordFlags,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub controller: String,
    pub sample_time: f64,
    pub records: Vec<Record>,
    /// The state norm exceeded the divergence threshold; the run stopped.
    pub diverged: bool,
    /// State after the last recorded input.
    pub final_state: DVector<f64>,
}

/// A reference signal indexed by step.
pub type Reference<'a> = dyn Fn(usize) -> DVector<f64> + Sync + 'a;

/// Simulate a closed loop for `steps` steps starting at `k = 1`.
pub fn simulate(
    plant: &dyn Plant,
    controller: &mut dyn Controller,
    reference: &Reference<'_>,
    x_init: &DVector<f64>,
    steps: usize,
    pbox: Option<&PBox>,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(Error::Parameter("simulation needs at least one step".into()));
    }
    if x_init.len() != plant.n_x() {
        return Err(Error::dim("initial state", plant.n_x(), x_init.len()));
    }
    controller.reset(x_init);
    let mut x = x_init.clone();
    let mut records = Vec::with_capacity(steps);
    let mut diverged = false;
    for k in 1..=steps {
        let r = reference(k);
        let out = controller.control(k, &x, &r).map_err(|e| Error::Simulation {
            step: k,
            detail: e.to_string(),
        })?;
        let p_outside = pbox.is_some_and(|b| !b.contains(&out.p));
        let next = plant.step(&x, &out.u);
        records.push(Record {
            k,
            x: x.clone(),
            u: out.u,
            p: out.p,
            r,
            flags: RecordFlags {
                fallback: out.fallback,
                p_outside,
            },
        });
        if !next.iter().all(|v| v.is_finite()) || next.norm() > DIVERGENCE_THRESHOLD {
            diverged = true;
            x = next;
            break;
        }
        x = next;
    }
    Ok(Trajectory {
        controller: controller.name().to_string(),
        sample_time: plant.sample_time().unwrap_or(1.0),
        records,
        diverged,
        final_state: x,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Settled,
    LimitCycle,
    Diverged,
    Unsettled,
}

impl Outcome {
    pub fn as_str(&self) -> &'static str {
        match self {
            Outcome::Settled => "settled",
            Outcome::LimitCycle => "limit-cycle",
            Outcome::Diverged => "diverged",
            Outcome::Unsettled => "unsettled",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryMetrics {
    pub outcome: Outcome,
    /// `|C_r x − r|_∞` at the last recorded step.
    pub final_error: f64,
    /// First step from which the tracking error stays below the tolerance.
    pub settling_step: Option<usize>,
    pub max_abs_state: f64,
    pub limit_cycle: bool,
    pub input_energy: f64,
    pub fallback_steps: usize,
    pub p_outside_steps: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn states(&self) -> Vec<DVector<f64>> {
        self.records.iter().map(|r| r.x.clone()).collect()
    }

    /// Tracking error `C_r x_k − r_k` per step.
    pub fn tracking_errors(&self, c_r: &DMatrix<f64>) -> Vec<f64> {
        self.records.iter().map(|r| (c_r * &r.x - &r.r).amax()).collect()
    }

    pub fn metrics(&self, c_r: &DMatrix<f64>, settle_tol: f64, window: usize) -> TrajectoryMetrics {
        let errors = self.tracking_errors(c_r);
        let final_error = errors.last().copied().unwrap_or(f64::NAN);
        let settling_step = if self.diverged {
            None
        } else {
            let mut first = None;
            for (rec, e) in self.records.iter().zip(&errors).rev() {
                if *e < settle_tol {
                    first = Some(rec.k);
                } else {
                    break;
                }
            }
            first
        };
        let limit_cycle = detect_limit_cycle(self, window, settle_tol);
        let outcome = if self.diverged {
            Outcome::Diverged
        } else if limit_cycle {
            Outcome::LimitCycle
        } else if settling_step.is_some() {
            Outcome::Settled
        } else {
            Outcome::Unsettled
        };
        TrajectoryMetrics {
            outcome,
            final_error,
            settling_step,
            max_abs_state: self.records.iter().map(|r| r.x.amax()).fold(0.0, f64::max),
            limit_cycle,
            input_energy: self.records.iter().map(|r| r.u.norm_squared()).sum(),
            fallback_steps: self.records.iter().filter(|r| r.flags.fallback).count(),
            p_outside_steps: self.records.iter().filter(|r| r.flags.p_outside).count(),
        }
    }

    /// CSV with columns `k,t,x1..,u1..,p1..,ref,flags`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let first = match self.records.first() {
            Some(r) => r,
            None => return Ok(()),
        };
        let mut header = vec!["k".to_string(), "t".to_string()];
        header.extend((1..=first.x.len()).map(|i| format!("x{i}")));
        header.extend((1..=first.u.len()).map(|i| format!("u{i}")));
        header.extend((1..=first.p.len()).map(|i| format!("p{i}")));
        if first.r.len() == 1 {
            header.push("ref".into());
        } else {
            header.extend((1..=first.r.len()).map(|i| format!("ref{i}")));
        }
        header.push("flags".into());
        wr.write_record(&header)?;
        for rec in &self.records {
            let mut row = vec![rec.k.to_string(), format_float((rec.k - 1) as f64 * self.sample_time)];
            for v in rec.x.iter().chain(rec.u.iter()).chain(rec.p.iter()).chain(rec.r.iter()) {
                row.push(format_float(*v));
            }
            let mut flags = Vec::new();
            if rec.flags.fallback {
                flags.push("fallback");
            }
            if rec.flags.p_outside {
                flags.push("p-outside");
            }
            if self.diverged && rec.k == self.records.last().map_or(0, |l| l.k) {
                flags.push("diverged");
            }
            row.push(flags.join("|"));
            wr.write_record(&row)?;
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Normalized autocorrelation of a de-meaned multichannel signal.
fn autocorrelation(signal: &[DVector<f64>], lag: usize) -> f64 {
    let n = signal.len();
    let dim = signal[0].len();
    let mean = signal.iter().fold(DVector::zeros(dim), |acc, s| acc + s) / n as f64;
    let c: Vec<DVector<f64>> = signal.iter().map(|s| s - &mean).collect();
    let var: f64 = c.iter().map(|v| v.norm_squared()).sum();
    if var == 0.0 {
        return 0.0;
    }
    let cov: f64 = (0..n - lag).map(|i| c[i].dot(&c[i + lag])).sum();
    cov / var * n as f64 / (n - lag) as f64
}

/// Amplitude ratio between consecutive windows below which an oscillation
/// counts as decaying.
pub const LIMIT_CYCLE_AMPLITUDE_RATIO: f64 = 0.8;

/// Flag a bounded, non-decaying, near-periodic tail.
///
/// The last `2·window` states are split in halves; the tail counts as a
/// limit cycle when the peak-to-peak amplitude exceeds `tol`, the second
/// half keeps at least `LIMIT_CYCLE_AMPLITUDE_RATIO` of the amplitude of
/// the first, and the
/// autocorrelation exceeds 0.9 at some lag after its first sign change.
pub fn detect_limit_cycle(traj: &Trajectory, window: usize, tol: f64) -> bool {
    if traj.diverged || window < 2 || traj.len() <= 2 * window {
        return false;
    }
    let states = traj.states();
    let tail = &states[states.len() - 2 * window..];
    if !tail.iter().all(|x| x.iter().all(|v| v.is_finite()) && x.amax() < DIVERGENCE_THRESHOLD) {
        return false;
    }
    let amplitude = |seg: &[DVector<f64>]| -> f64 {
        let dim = seg[0].len();
        (0..dim)
            .map(|i| {
                let (lo, hi) = seg
                    .iter()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), s| (lo.min(s[i]), hi.max(s[i])));
                hi - lo
            })
            .fold(0.0, f64::max)
    };
    let (first, second) = tail.split_at(window);
    let (a1, a2) = (amplitude(first), amplitude(second));
    if a2 <= tol || a2 < LIMIT_CYCLE_AMPLITUDE_RATIO * a1 {
        return false;
    }
    let mut crossed = false;
    for lag in 1..window {
        let r = autocorrelation(tail, lag);
        if !crossed {
            crossed = r < 0.0;
        } else if r > 0.9 {
            return true;
        }
    }
    false
}

/// Cumulative shifted supply `Σ −(x−x*)ᵀQ(x−x*) − (u−u*)ᵀR(u−u*)` along a
/// trajectory. A diagnostic only.
pub fn shifted_supply(
    traj: &Trajectory,
    x_star: &DVector<f64>,
    u_star: &DVector<f64>,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
) -> Vec<f64> {
    let mut acc = 0.0;
    traj.records
        .iter()
        .map(|rec| {
            let dx = &rec.x - x_star;
            let du = &rec.u - u_star;
            acc -= dx.dot(&(q * &dx)) + du.dot(&(r * &du));
            acc
        })
        .collect()
}

/// Apply the input sequence open loop from `x1` and record the `N + 1`
/// samples `(u_k, x_k)`; the input paired with the last state is the last
/// element of `inputs`.
pub fn collect_open_loop(plant: &dyn Plant, x1: &DVector<f64>, inputs: &[DVector<f64>]) -> Result<NlDataDictionary> {
    if x1.len() != plant.n_x() {
        return Err(Error::dim("initial state", plant.n_x(), x1.len()));
    }
    let mut states = Vec::with_capacity(inputs.len());
    let mut x = x1.clone();
    for (k, u) in inputs.iter().enumerate() {
        if u.len() != plant.n_u() {
            return Err(Error::dim(format!("input {}", k + 1), plant.n_u(), u.len()));
        }
        if !x.iter().all(|v| v.is_finite()) || x.norm() > DIVERGENCE_THRESHOLD {
            return Err(Error::Simulation {
                step: k + 1,
                detail: "plant diverged during data collection; shorten N or reduce the excitation".into(),
            });
        }
        states.push(x.clone());
        x = plant.step(&x, u);
    }
    let d = NlDataDictionary::new(inputs.to_vec(), states)?;
    Ok(match plant.sample_time() {
        Some(ts) => d.with_sample_time(ts),
        None => d,
    })
}

/// Velocity design: difference the dictionary, build the data matrices and
/// solve the synthesis program.
pub fn design_velocity(
    d: &NlDataDictionary,
    basis: &SchedulingBasis,
    pbox: &PBox,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    backend: &dyn SdpBackend,
    options: &SynthesisOptions,
) -> Result<SynthesisSolution> {
    let vd = difference_dictionary(d, basis)?;
    let dm = build_data_matrices(&vd)?;
    let problem = assemble(&dm, q, r, pbox, options)?;
    solve(&problem, backend)
}

/// Direct design on the raw signals, giving `u = K(p) x`. With an empty
/// basis this is the LTI design on the same data.
pub fn direct_lpv_baseline(
    d: &NlDataDictionary,
    basis: &SchedulingBasis,
    pbox: &PBox,
    q: &DMatrix<f64>,
    r: &DMatrix<f64>,
    backend: &dyn SdpBackend,
    options: &SynthesisOptions,
) -> Result<SynthesisSolution> {
    let dm = build_raw_data_matrices(d, basis)?;
    let problem = assemble(&dm, q, r, pbox, options)?;
    solve(&problem, backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{DiscPlant, LtiPlant};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn gains_1x2() -> VelocityGains {
        VelocityGains::new(
            DMatrix::from_row_slice(1, 2, &[-1.0, -0.5]),
            DMatrix::from_row_slice(1, 2, &[0.3, 0.1]),
        )
        .unwrap()
    }

    #[test]
    fn open_loop_collection() {
        let plant = LtiPlant {
            a: DMatrix::from_element(1, 1, 0.5),
            b: DMatrix::from_element(1, 1, 1.0),
        };
        let d = collect_open_loop(&plant, &v(&[0.0]), &[v(&[1.0]), v(&[0.0]), v(&[0.0])]).unwrap();
        let xs: Vec<f64> = d.states().iter().map(|x| x[0]).collect();
        assert_eq!(xs, vec![0.0, 1.0, 0.5]);
        let blowup = LtiPlant {
            a: DMatrix::from_element(1, 1, 1e4),
            b: DMatrix::from_element(1, 1, 1.0),
        };
        let inputs = vec![v(&[1.0]); 6];
        assert!(matches!(collect_open_loop(&blowup, &v(&[1.0]), &inputs), Err(Error::Simulation { .. })));
    }

    #[test]
    fn gain_evaluation() {
        let g = gains_1x2();
        assert_eq!(eval_gain(&g, &v(&[0.0])).unwrap(), g.k0);
        assert_eq!(eval_gain(&g, &v(&[1.0])).unwrap(), &g.k0 + &g.kbar);
        let (p1, p2) = (v(&[0.3]), v(&[-1.7]));
        let mid = eval_gain(&g, &((&p1 + &p2) * 0.5)).unwrap();
        let avg = (eval_gain(&g, &p1).unwrap() + eval_gain(&g, &p2).unwrap()) * 0.5;
        assert!((mid - avg).amax() < 1e-15);
    }

    #[test]
    fn integrator_augmentation() {
        let d = NlDataDictionary::new(vec![v(&[0.0]); 5], vec![v(&[2.0, 7.0]); 5]).unwrap();
        let c_r = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let a = augment_integrator(&d, &Integrator::new(1.0, c_r.clone()).unwrap()).unwrap();
        let xi: Vec<f64> = a.states().iter().map(|s| s[2]).collect();
        assert_eq!(xi, vec![0.0, -2.0, -4.0, -6.0, -8.0]);
        let z = NlDataDictionary::new(vec![v(&[1.0]); 4], vec![v(&[0.0, 3.0]); 4]).unwrap();
        let a = augment_integrator(&z, &Integrator::new(0.9, c_r).unwrap()).unwrap();
        assert!(a.states().iter().all(|s| s[2] == 0.0));
        assert!(Integrator::new(0.0, DMatrix::zeros(1, 2)).is_err());
        assert!(Integrator::new(1.5, DMatrix::zeros(1, 2)).is_err());
    }

    #[test]
    fn zero_increment_keeps_input() {
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let c = VelocityController::new(gains_1x2(), basis, None, FixedPointOptions::default()).unwrap();
        let state = ControllerState {
            x_prev: v(&[0.4, 1.0]),
            u_prev: v(&[2.5]),
            x_i: DVector::zeros(0),
        };
        let (out, next) = c.controller_step(&state, &v(&[0.4, 1.0]), &DVector::zeros(1), 3).unwrap();
        assert_eq!(out.u, v(&[2.5]));
        assert_eq!(out.fixed_point_iterations, 0);
        assert_eq!(next.u_prev, v(&[2.5]));
    }

    #[test]
    fn constant_gain_is_incremental_lti_law() {
        let g = VelocityGains::new(DMatrix::from_row_slice(1, 2, &[-2.0, -1.0]), DMatrix::zeros(1, 0)).unwrap();
        let c = VelocityController::new(g, SchedulingBasis::empty(2, 1), None, FixedPointOptions::default()).unwrap();
        let state = ControllerState {
            x_prev: v(&[1.0, 0.0]),
            u_prev: v(&[0.5]),
            x_i: DVector::zeros(0),
        };
        let (out, _) = c.controller_step(&state, &v(&[1.5, 1.0]), &DVector::zeros(1), 2).unwrap();
        assert!((out.u[0] - (0.5 - 2.0 * 0.5 - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn fixed_point_with_input_dependent_basis() {
        use crate::basis::{BasisKind, CustomBasis};
        use std::sync::Arc;
        let custom = CustomBasis {
            name: "tanh(u)".into(),
            n_p: 1,
            uses_current_input: true,
            uses_previous: false,
            f: Arc::new(|a| DVector::from_element(1, 0.5 * a.u[0].tanh())),
        };
        let basis = SchedulingBasis::new(BasisKind::Custom(custom), 2, 1).unwrap();
        let c = VelocityController::new(gains_1x2(), basis.clone(), None, FixedPointOptions::default()).unwrap();
        let state = ControllerState {
            x_prev: v(&[0.0, 0.0]),
            u_prev: v(&[0.2]),
            x_i: DVector::zeros(0),
        };
        let x = v(&[0.3, -0.2]);
        let (out, _) = c.controller_step(&state, &x, &DVector::zeros(1), 2).unwrap();
        assert!(!out.fallback && out.fixed_point_iterations > 0);
        let p = basis.eval_at(&x, &out.u, &state.x_prev, &state.u_prev).unwrap();
        let again = &state.u_prev + gains_1x2().eval(&p).unwrap() * (&x - &state.x_prev);
        assert!((again - &out.u).amax() < 1e-9);

        let strict = FixedPointOptions {
            max_iter: 1,
            tol: 0.0,
            fallback: false,
            ..FixedPointOptions::default()
        };
        let c = VelocityController::new(gains_1x2(), basis.clone(), None, strict).unwrap();
        assert!(matches!(
            c.controller_step(&state, &x, &DVector::zeros(1), 2),
            Err(Error::FixedPoint { .. })
        ));
        let c = VelocityController::new(gains_1x2(), basis, None, FixedPointOptions { fallback: true, ..strict }).unwrap();
        assert!(c.controller_step(&state, &x, &DVector::zeros(1), 2).unwrap().0.fallback);
    }

    #[test]
    fn equilibrium_is_invariant() {
        let plant = DiscPlant::default();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let mut c = VelocityController::new(gains_1x2(), basis, None, FixedPointOptions::default()).unwrap();
        let zero = DVector::zeros(2);
        let traj = simulate(&plant, &mut c, &|_| DVector::zeros(1), &zero, 50, None).unwrap();
        assert!(traj.records.iter().all(|r| r.x == zero && r.u[0] == 0.0));

        let theta = 0.6;
        let x_star = v(&[theta, 0.0]);
        let u_star = v(&[plant.params.equilibrium_input(theta)]);
        c.set_state(ControllerState {
            x_prev: x_star.clone(),
            u_prev: u_star.clone(),
            x_i: DVector::zeros(0),
        });
        let mut x = x_star.clone();
        for k in 1..30 {
            let u = c.control(k, &x, &DVector::zeros(1)).unwrap().u;
            assert_eq!(u, u_star);
            x = plant.step(&x, &u);
            assert!((&x - &x_star).amax() < 1e-14);
        }
    }

    #[test]
    fn divergence_guard_stops_run() {
        let plant = LtiPlant {
            a: DMatrix::from_element(1, 1, 10.0),
            b: DMatrix::from_element(1, 1, 1.0),
        };
        let g = VelocityGains::new(DMatrix::zeros(1, 1), DMatrix::zeros(1, 0)).unwrap();
        let mut c = StateFeedbackController::new("lti", g, SchedulingBasis::empty(1, 1), None).unwrap();
        let traj = simulate(&plant, &mut c, &|_| DVector::zeros(1), &v(&[1.0]), 100, None).unwrap();
        assert!(traj.diverged);
        assert_eq!(traj.len(), 7);
        assert!(!detect_limit_cycle(&traj, 2, 1e-3));
        let m = traj.metrics(&DMatrix::identity(1, 1), 0.01, 2);
        assert_eq!(m.outcome, Outcome::Diverged);
    }

    fn synthetic(xs: Vec<DVector<f64>>) -> Trajectory {
        Trajectory {
            controller: "test".into(),
            sample_time: 0.01,
            records: xs
                .into_iter()
                .enumerate()
                .map(|(k, x)| Record {
                    k: k + 1,
                    x,
                    u: DVector::zeros(1),
                    p: DVector::zeros(0),
                    r: DVector::zeros(1),
                    flags: RecordFlags::default(),
                })
                .collect(),
            diverged: false,
            final_state: DVector::zeros(1),
        }
    }

    #[test]
    fn limit_cycle_classification() {
        let constant = synthetic(vec![v(&[0.3]); 400]);
        assert!(!detect_limit_cycle(&constant, 100, 1e-3));
        let sine = synthetic((0..400).map(|k| v(&[(k as f64 * 0.2).sin()])).collect());
        assert!(detect_limit_cycle(&sine, 100, 1e-3));
        let decaying = synthetic((0..400).map(|k| v(&[(-0.02 * k as f64).exp() * (k as f64 * 0.2).sin()])).collect());
        assert!(!detect_limit_cycle(&decaying, 100, 1e-3));
        // loses about 40% of its amplitude per window
        let slow = synthetic((0..400).map(|k| v(&[(-0.005 * k as f64).exp() * (k as f64 * 0.15).sin()])).collect());
        assert!(!detect_limit_cycle(&slow, 100, 1e-3));
        let short = synthetic(vec![v(&[0.0]); 10]);
        assert!(!detect_limit_cycle(&short, 100, 1e-3));
    }

    #[test]
    fn csv_header_and_flags() {
        let mut t = synthetic(vec![v(&[1.0, 2.0]); 2]);
        t.records[1].flags.p_outside = true;
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "k,t,x1,x2,u1,ref,flags");
        assert_eq!(lines[1], "1,0.0,1.0,2.0,0.0,0.0,");
        assert!(lines[2].ends_with(",p-outside"));
    }

    #[test]
    fn supply_is_zero_at_equilibrium() {
        let t = synthetic(vec![v(&[0.5]); 5]);
        let s = shifted_supply(&t, &v(&[0.5]), &v(&[0.0]), &DMatrix::identity(1, 1), &DMatrix::identity(1, 1));
        assert!(s.iter().all(|&v| v == 0.0));
    }
}

//! Discrete-time plants `x_{k+1} = f(x_k, u_k)` with Jacobians.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

/// A discrete-time state-space plant with full state measurement.
pub trait Plant: Send + Sync {
    fn n_x(&self) -> usize;
    fn n_u(&self) -> usize;
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64>;
    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn jacobian_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64>;
    fn sample_time(&self) -> Option<f64> {
        None
    }
}

/// Physical parameters of the unbalanced disc.
///
/// The defaults are representative of a laboratory unbalanced-disc setup
/// and are not normative; the qualitative behavior (tracking, limit cycle,
/// divergence) is what downstream checks rely on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscParams {
    /// Mass of the unbalance [kg].
    pub m: f64,
    /// Gravitational acceleration [m/s²].
    pub g: f64,
    /// Distance of the mass to the rotation axis [m].
    pub l: f64,
    /// Inertia [kg m²].
    pub j: f64,
    /// Motor time constant [s].
    pub tau: f64,
    /// Motor gain [rad/(V s²)].
    pub km: f64,
    /// Sample time [s].
    pub ts: f64,
}

impl Default for DiscParams {
    fn default() -> Self {
        Self {
            m: 0.076,
            g: 9.81,
            l: 0.041,
            j: 2.4e-4,
            tau: 0.4,
            km: 11.0,
            ts: 0.01,
        }
    }
}

impl DiscParams {
    /// `T_s·m·g·l / J`, the gain on `sin(θ)` in the sampled dynamics.
    pub fn gravity_gain(&self) -> f64 {
        self.ts * self.m * self.g * self.l / self.j
    }

    /// `T_s·K_m / τ`.
    pub fn input_gain(&self) -> f64 {
        self.ts * self.km / self.tau
    }

    /// `1 − T_s / τ`.
    pub fn velocity_retention(&self) -> f64 {
        1.0 - self.ts / self.tau
    }

    /// Constant input holding the disc at angle `theta`.
    pub fn equilibrium_input(&self, theta: f64) -> f64 {
        self.gravity_gain() * theta.sin() / self.input_gain()
    }

    pub fn validate(&self) -> crate::Result<()> {
        let named = [
            ("m", self.m),
            ("g", self.g),
            ("l", self.l),
            ("J", self.j),
            ("tau", self.tau),
            ("K_m", self.km),
            ("T_s", self.ts),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(crate::Error::Parameter(format!("disc parameter {name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Forward-Euler sampled unbalanced disc, state `(θ, θ̇)`, input voltage.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiscPlant {
    pub params: DiscParams,
}

impl DiscPlant {
    pub fn new(params: DiscParams) -> Self {
        Self { params }
    }
}

impl Plant for DiscPlant {
    fn n_x(&self) -> usize {
        2
    }

    fn n_u(&self) -> usize {
        1
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        let p = &self.params;
        DVector::from_vec(vec![
            x[0] + p.ts * x[1],
            p.velocity_retention() * x[1] - p.gravity_gain() * x[0].sin() + p.input_gain() * u[0],
        ])
    }

    fn jacobian_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        let p = &self.params;
        DMatrix::from_row_slice(2, 2, &[1.0, p.ts, -p.gravity_gain() * x[0].cos(), p.velocity_retention()])
    }

    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 1, &[0.0, self.params.input_gain()])
    }

    fn sample_time(&self) -> Option<f64> {
        Some(self.params.ts)
    }
}

/// `x_{k+1} = A x_k + B u_k`.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

impl Plant for LtiPlant {
    fn n_x(&self) -> usize {
        self.a.nrows()
    }

    fn n_u(&self) -> usize {
        self.b.ncols()
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }

    fn jacobian_x(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.a.clone()
    }

    fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
        self.b.clone()
    }
}

pub type StepFn = dyn Fn(&DVector<f64>, &DVector<f64>) -> DVector<f64> + Send + Sync;

/// Plant given only by its step map; Jacobians by central differences.
#[derive(Clone)]
pub struct FnPlant {
    pub n_x: usize,
    pub n_u: usize,
    pub f: Arc<StepFn>,
    pub fd_step: f64,
}

impl FnPlant {
    pub fn new(n_x: usize, n_u: usize, f: Arc<StepFn>) -> Self {
        Self { n_x, n_u, f, fd_step: 1e-6 }
    }

    fn central_difference(&self, x: &DVector<f64>, u: &DVector<f64>, wrt_state: bool) -> DMatrix<f64> {
        let n = if wrt_state { self.n_x } else { self.n_u };
        let mut jac = DMatrix::zeros(self.n_x, n);
        for i in 0..n {
            let (mut xp, mut xm, mut up, mut um) = (x.clone(), x.clone(), u.clone(), u.clone());
            let target = if wrt_state { x[i] } else { u[i] };
            let h = self.fd_step * (1.0 + target.abs());
            if wrt_state {
                xp[i] += h;
                xm[i] -= h;
            } else {
                up[i] += h;
                um[i] -= h;
            }
            let col = ((self.f)(&xp, &up) - (self.f)(&xm, &um)) / (2.0 * h);
            jac.set_column(i, &col);
        }
        jac
    }
}

impl Plant for FnPlant {
    fn n_x(&self) -> usize {
        self.n_x
    }

    fn n_u(&self) -> usize {
        self.n_u
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        (self.f)(x, u)
    }

    fn jacobian_x(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.central_difference(x, u, true)
    }

    fn jacobian_u(&self, x: &DVector<f64>, u: &DVector<f64>) -> DMatrix<f64> {
        self.central_difference(x, u, false)
    }
}

//! Scheduling basis functions `p_k = ψ(x_k, u_k, x_{k-1}, u_{k-1})`.

use std::fmt;
use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};

/// Arguments of a scheduling map: current and previous state/input.
#[derive(Debug, Clone, Copy)]
pub struct SchedulingArgs<'a> {
    pub x: &'a DVector<f64>,
    pub u: &'a DVector<f64>,
    pub x_prev: &'a DVector<f64>,
    pub u_prev: &'a DVector<f64>,
}

const SINC_SERIES_BELOW: f64 = 5e-7;

/// `sin(h) / h` with the removable singularity at zero filled in.
pub fn sinc(h: f64) -> f64 {
    if h.abs() < SINC_SERIES_BELOW {
        1.0 - h * h / 6.0
    } else {
        h.sin() / h
    }
}

/// Divided difference of the sine, `(sin a − sin b) / (a − b)`, and its
/// limit `cos a` when `a = b`.
///
/// Evaluated as `cos((a+b)/2) · sinc((a−b)/2)`, which never subtracts two
/// nearly equal sines; the series branch kicks in for `|a − b| < 1e-6`.
pub fn sind(a: f64, b: f64) -> f64 {
    (0.5 * (a + b)).cos() * sinc(0.5 * (a - b))
}

pub type CustomFn = dyn Fn(&SchedulingArgs<'_>) -> DVector<f64> + Send + Sync;

/// User-supplied scheduling map.
#[derive(Clone)]
pub struct CustomBasis {
    pub name: String,
    pub n_p: usize,
    /// Whether the map reads `u_k`; if so the realized controller has to
    /// solve a fixed-point problem.
    pub uses_current_input: bool,
    pub uses_previous: bool,
    pub f: Arc<CustomFn>,
}

impl fmt::Debug for CustomBasis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomBasis")
            .field("name", &self.name)
            .field("n_p", &self.n_p)
            .field("uses_current_input", &self.uses_current_input)
            .finish()
    }
}

#[derive(Debug, Clone)]
pub enum BasisKind {
    /// One function `sind(x_{i,k}, x_{i,k-1})` per listed state index.
    SincDifference { states: Vec<usize> },
    /// One function `sin(x_{i,k}) / x_{i,k}` per listed state index.
    SincRatio { states: Vec<usize> },
    /// Monomials in `z = (x_k, u_k, x_{k-1}, u_{k-1})`; each entry holds
    /// one exponent per component of `z`.
    Polynomial { monomials: Vec<Vec<u32>> },
    Custom(CustomBasis),
}

#[derive(Debug, Clone)]
pub struct SchedulingBasis {
    kind: BasisKind,
    n_x: usize,
    n_u: usize,
}

impl SchedulingBasis {
    pub fn new(kind: BasisKind, n_x: usize, n_u: usize) -> Result<Self> {
        match &kind {
            BasisKind::SincDifference { states } | BasisKind::SincRatio { states } => {
                if let Some(&i) = states.iter().find(|&&i| i >= n_x) {
                    return Err(Error::dim("sinc basis state index", format!("< {n_x}"), i));
                }
            }
            BasisKind::Polynomial { monomials } => {
                let width = 2 * (n_x + n_u);
                if let Some(m) = monomials.iter().find(|m| m.len() != width) {
                    return Err(Error::dim("monomial exponent vector", width, m.len()));
                }
            }
            BasisKind::Custom(_) => {}
        }
        Ok(Self { kind, n_x, n_u })
    }

    pub fn sinc_difference(states: Vec<usize>, n_x: usize, n_u: usize) -> Result<Self> {
        Self::new(BasisKind::SincDifference { states }, n_x, n_u)
    }

    pub fn sinc_ratio(states: Vec<usize>, n_x: usize, n_u: usize) -> Result<Self> {
        Self::new(BasisKind::SincRatio { states }, n_x, n_u)
    }

    /// The degree-one polynomial basis `{ξ_k, ξ_{k-1}}`.
    pub fn identity(n_x: usize, n_u: usize) -> Self {
        let w = 2 * (n_x + n_u);
        let monomials = (0..w)
            .map(|i| (0..w).map(|j| u32::from(i == j)).collect())
            .collect();
        Self {
            kind: BasisKind::Polynomial { monomials },
            n_x,
            n_u,
        }
    }

    /// The empty basis (`n_p = 0`), which degenerates everything to LTI.
    pub fn empty(n_x: usize, n_u: usize) -> Self {
        Self {
            kind: BasisKind::Polynomial { monomials: vec![] },
            n_x,
            n_u,
        }
    }

    pub fn custom(custom: CustomBasis, n_x: usize, n_u: usize) -> Self {
        Self {
            kind: BasisKind::Custom(custom),
            n_x,
            n_u,
        }
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    pub fn kind_name(&self) -> &str {
        match &self.kind {
            BasisKind::SincDifference { .. } => "sinc-difference",
            BasisKind::SincRatio { .. } => "sinc-ratio",
            BasisKind::Polynomial { .. } => "polynomial",
            BasisKind::Custom(c) => &c.name,
        }
    }

    pub fn n_p(&self) -> usize {
        match &self.kind {
            BasisKind::SincDifference { states } | BasisKind::SincRatio { states } => states.len(),
            BasisKind::Polynomial { monomials } => monomials.len(),
            BasisKind::Custom(c) => c.n_p,
        }
    }

    pub fn n_x(&self) -> usize {
        self.n_x
    }

    pub fn n_u(&self) -> usize {
        self.n_u
    }

    pub fn depends_on_current_input(&self) -> bool {
        match &self.kind {
            BasisKind::SincDifference { .. } | BasisKind::SincRatio { .. } => false,
            BasisKind::Polynomial { monomials } => {
                let (lo, hi) = (self.n_x, self.n_x + self.n_u);
                monomials.iter().any(|m| m[lo..hi].iter().any(|&e| e > 0))
            }
            BasisKind::Custom(c) => c.uses_current_input,
        }
    }

    pub fn depends_on_previous(&self) -> bool {
        match &self.kind {
            BasisKind::SincDifference { .. } => true,
            BasisKind::SincRatio { .. } => false,
            BasisKind::Polynomial { monomials } => {
                let start = self.n_x + self.n_u;
                monomials.iter().any(|m| m[start..].iter().any(|&e| e > 0))
            }
            BasisKind::Custom(c) => c.uses_previous,
        }
    }

    pub fn eval(&self, args: &SchedulingArgs<'_>) -> Result<DVector<f64>> {
        let dims = [
            ("x_k", args.x.len(), self.n_x),
            ("u_k", args.u.len(), self.n_u),
            ("x_{k-1}", args.x_prev.len(), self.n_x),
            ("u_{k-1}", args.u_prev.len(), self.n_u),
        ];
        for (name, got, want) in dims {
            if got != want {
                return Err(Error::dim(format!("scheduling argument {name}"), want, got));
            }
        }
        let finite = [args.x, args.u, args.x_prev, args.u_prev]
            .iter()
            .all(|v| v.iter().all(|e| e.is_finite()));
        if !finite {
            return Err(Error::NonFinite("scheduling arguments".into()));
        }

        let p = match &self.kind {
            BasisKind::SincDifference { states } => {
                DVector::from_iterator(states.len(), states.iter().map(|&i| sind(args.x[i], args.x_prev[i])))
            }
            BasisKind::SincRatio { states } => {
                DVector::from_iterator(states.len(), states.iter().map(|&i| sinc(args.x[i])))
            }
            BasisKind::Polynomial { monomials } => {
                let z: Vec<f64> = args
                    .x
                    .iter()
                    .chain(args.u.iter())
                    .chain(args.x_prev.iter())
                    .chain(args.u_prev.iter())
                    .copied()
                    .collect();
                DVector::from_iterator(
                    monomials.len(),
                    monomials.iter().map(|m| {
                        m.iter()
                            .zip(&z)
                            .filter(|(e, _)| **e > 0)
                            .map(|(&e, &v)| v.powi(e as i32))
                            .product::<f64>()
                    }),
                )
            }
            BasisKind::Custom(c) => {
                let p = (c.f)(args);
                if p.len() != c.n_p {
                    return Err(Error::dim(format!("custom basis `{}` output", c.name), c.n_p, p.len()));
                }
                p
            }
        };
        if !p.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite(format!("{} basis output", self.kind_name())));
        }
        Ok(p)
    }

    /// Convenience wrapper around [`SchedulingBasis::eval`].
    pub fn eval_at(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        x_prev: &DVector<f64>,
        u_prev: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.eval(&SchedulingArgs { x, u, x_prev, u_prev })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn sind_at_quarter_turn() {
        let b = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let p = b.eval_at(&v(&[FRAC_PI_2, 0.0]), &v(&[0.0]), &v(&[0.0, 0.0]), &v(&[0.0])).unwrap();
        assert!((p[0] - 2.0 / PI).abs() < 1e-15);
    }

    #[test]
    fn sind_coincident_arguments_give_cosine() {
        for a in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            assert!((sind(a, a) - f64::cos(a)).abs() < 1e-15);
        }
    }

    #[test]
    fn sind_is_continuous_across_the_series_branch() {
        for a in [-2.0, -0.3, 0.0, 1.1, 3.0] {
            for eps in [1e-8, -1e-8, 4.9e-7, 5.1e-7, 1e-6, 2e-6] {
                assert!((sind(a, a + eps) - a.cos()).abs() < 1e-6, "a={a} eps={eps}");
            }
        }
    }

    #[test]
    fn sind_matches_naive_quotient_away_from_diagonal() {
        for (a, b) in [(0.3, -1.2), (2.0, 2.1), (-3.0, 1.0)] {
            let naive = (f64::sin(a) - f64::sin(b)) / (a - b);
            assert!((sind(a, b) - naive).abs() < 1e-13);
        }
    }

    #[test]
    fn sinc_ratio_is_one_at_origin() {
        let b = SchedulingBasis::sinc_ratio(vec![0], 3, 1).unwrap();
        let z3 = v(&[0.0, 0.0, 0.0]);
        let p = b.eval_at(&z3, &v(&[0.0]), &z3, &v(&[0.0])).unwrap();
        assert_eq!(p[0], 1.0);
    }

    #[test]
    fn identity_polynomial_on_scalars() {
        let b = SchedulingBasis::identity(1, 0);
        let p = b.eval_at(&v(&[2.0]), &v(&[]), &v(&[3.0]), &v(&[])).unwrap();
        assert_eq!(p.as_slice(), &[2.0, 3.0]);
        assert!(!b.depends_on_current_input());
    }

    #[test]
    fn polynomial_input_dependence_is_detected() {
        // u_k^2 with n_x = 1, n_u = 1: z = (x, u, x_prev, u_prev)
        let b = SchedulingBasis::new(BasisKind::Polynomial { monomials: vec![vec![0, 2, 0, 0]] }, 1, 1).unwrap();
        assert!(b.depends_on_current_input());
        let p = b.eval_at(&v(&[5.0]), &v(&[3.0]), &v(&[0.0]), &v(&[0.0])).unwrap();
        assert_eq!(p[0], 9.0);
    }

    #[test]
    fn non_finite_argument_is_rejected() {
        let b = SchedulingBasis::sinc_difference(vec![0], 1, 0).unwrap();
        let err = b.eval_at(&v(&[f64::NAN]), &v(&[]), &v(&[0.0]), &v(&[])).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let b = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        assert!(b.eval_at(&v(&[0.0]), &v(&[0.0]), &v(&[0.0, 0.0]), &v(&[0.0])).is_err());
        assert!(SchedulingBasis::sinc_difference(vec![2], 2, 1).is_err());
    }

    #[test]
    fn sinc_difference_stays_in_unit_interval() {
        let mut a = -10.0;
        while a < 10.0 {
            let mut b = -10.0;
            while b < 10.0 {
                let s = sind(a, b);
                assert!((-1.0..=1.0).contains(&s));
                b += 0.37;
            }
            a += 0.29;
        }
    }
}

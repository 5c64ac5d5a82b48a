//! Velocity-form of a nonlinear plant: model-based oracles, the LPV
//! coefficient decomposition, and conversion of raw data into increments.

use std::io::Write;

use nalgebra::{DMatrix, DVector};

use crate::basis::{sind, SchedulingArgs, SchedulingBasis};
use crate::dictionary::{format_float, increments, NlDataDictionary};
use crate::error::{Error, Result};
use crate::linalg;
use crate::plant::{DiscParams, Plant};

pub const DEFAULT_QUADRATURE_NODES: usize = 10;

/// `(A_v, B_v)` at one pair of consecutive samples.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityMatrices {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
}

/// `A_0..A_{n_p}`, `B_0..B_{n_p}` of the affine scheduling dependence.
#[derive(Debug, Clone, PartialEq)]
pub struct LpvCoefficients {
    pub a: Vec<DMatrix<f64>>,
    pub b: Vec<DMatrix<f64>>,
}

impl LpvCoefficients {
    pub fn new(a: Vec<DMatrix<f64>>, b: Vec<DMatrix<f64>>) -> Result<Self> {
        if a.is_empty() || a.len() != b.len() {
            return Err(Error::dim("LPV coefficient families", a.len(), b.len()));
        }
        let (n_x, n_u) = (a[0].nrows(), b[0].ncols());
        for (i, (ai, bi)) in a.iter().zip(&b).enumerate() {
            if ai.shape() != (n_x, n_x) || bi.shape() != (n_x, n_u) {
                return Err(Error::dim(
                    format!("LPV coefficient {i}"),
                    format!("{n_x}x{n_x} / {n_x}x{n_u}"),
                    format!("{:?} / {:?}", ai.shape(), bi.shape()),
                ));
            }
        }
        Ok(Self { a, b })
    }

    pub fn n_p(&self) -> usize {
        self.a.len() - 1
    }

    pub fn n_x(&self) -> usize {
        self.a[0].nrows()
    }

    pub fn n_u(&self) -> usize {
        self.b[0].ncols()
    }
}

/// `Ā_v(p) = A_0 + Σ A_i p_i`, `B̄_v(p) = B_0 + Σ B_i p_i`.
pub fn lpv_eval(c: &LpvCoefficients, p: &DVector<f64>) -> Result<VelocityMatrices> {
    if p.len() != c.n_p() {
        return Err(Error::dim("scheduling vector", c.n_p(), p.len()));
    }
    let mut a = c.a[0].clone();
    let mut b = c.b[0].clone();
    for (i, &pi) in p.iter().enumerate() {
        a += &c.a[i + 1] * pi;
        b += &c.b[i + 1] * pi;
    }
    Ok(VelocityMatrices { a, b })
}

/// Increment data `{Δx_k, p_k, Δu_k}` for `k = 2..N+1`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityDictionary {
    pub dx: Vec<DVector<f64>>,
    pub p: Vec<DVector<f64>>,
    pub du: Vec<DVector<f64>>,
    pub n_x: usize,
    pub n_u: usize,
    pub n_p: usize,
    /// Time index of the first increment.
    pub first_index: i64,
}

impl VelocityDictionary {
    /// `N`, the number of increment triples.
    pub fn len(&self) -> usize {
        self.dx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dx.is_empty()
    }

    /// CSV export with columns `k,dx*,du*,p*`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["k".to_string()];
        header.extend((1..=self.n_x).map(|i| format!("dx{i}")));
        header.extend((1..=self.n_u).map(|i| format!("du{i}")));
        header.extend((1..=self.n_p).map(|i| format!("p{i}")));
        wr.write_record(&header)?;
        for j in 0..self.len() {
            let mut rec = vec![(self.first_index + j as i64).to_string()];
            rec.extend(self.dx[j].iter().map(|v| format_float(*v)));
            rec.extend(self.du[j].iter().map(|v| format_float(*v)));
            rec.extend(self.p[j].iter().map(|v| format_float(*v)));
            wr.write_record(&rec)?;
        }
        wr.flush().map_err(|e| Error::Io {
            path: "<csv writer>".into(),
            source: e,
        })?;
        Ok(())
    }
}

/// Difference a raw dictionary and attach the scheduling signal.
pub fn difference_dictionary(d: &NlDataDictionary, basis: &SchedulingBasis) -> Result<VelocityDictionary> {
    if d.n_x() != basis.n_x() || d.n_u() != basis.n_u() {
        return Err(Error::dim(
            "dictionary vs basis (n_x, n_u)",
            format!("({}, {})", basis.n_x(), basis.n_u()),
            format!("({}, {})", d.n_x(), d.n_u()),
        ));
    }
    let (xs, us) = (d.states(), d.inputs());
    let p = (1..d.len())
        .map(|k| {
            basis.eval(&SchedulingArgs {
                x: &xs[k],
                u: &us[k],
                x_prev: &xs[k - 1],
                u_prev: &us[k - 1],
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(VelocityDictionary {
        dx: increments(xs),
        p,
        du: increments(us),
        n_x: d.n_x(),
        n_u: d.n_u(),
        n_p: basis.n_p(),
        first_index: d.first_index + 1,
    })
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[0, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut rule = Vec::with_capacity(n);
    for i in 0..n {
        // Chebyshev-like initial guess, refined by Newton on P_n.
        let mut t = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, t);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * t * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            // p1 = P_n(t), p0 = P_{n-1}(t)
            dp = n as f64 * (t * p1 - p0) / (t * t - 1.0);
            let step = p1 / dp;
            t -= step;
            if step.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - t * t) * dp * dp);
        rule.push((0.5 * (1.0 - t), 0.5 * w));
    }
    rule
}

/// Line integral of the plant Jacobians along the segment from
/// `ξ_{k-1}` to `ξ_k`, by Gauss–Legendre quadrature.
pub fn velocity_matrices_quadrature(
    plant: &dyn Plant,
    args: &SchedulingArgs<'_>,
    nodes: usize,
) -> Result<VelocityMatrices> {
    if nodes < 2 {
        return Err(Error::Parameter(format!("quadrature needs at least 2 nodes, got {nodes}")));
    }
    let (n_x, n_u) = (plant.n_x(), plant.n_u());
    if args.x.len() != n_x || args.x_prev.len() != n_x || args.u.len() != n_u || args.u_prev.len() != n_u {
        return Err(Error::dim("quadrature segment endpoints", format!("n_x={n_x}, n_u={n_u}"), "other"));
    }
    let dx = args.x - args.x_prev;
    let du = args.u - args.u_prev;
    let mut a = DMatrix::zeros(n_x, n_x);
    let mut b = DMatrix::zeros(n_x, n_u);
    for (lambda, w) in gauss_legendre(nodes) {
        let xl = args.x_prev + &dx * lambda;
        let ul = args.u_prev + &du * lambda;
        let ja = plant.jacobian_x(&xl, &ul);
        let jb = plant.jacobian_u(&xl, &ul);
        if !linalg::all_finite(&ja) || !linalg::all_finite(&jb) {
            return Err(Error::NonFinite(format!("plant Jacobian at λ = {lambda}")));
        }
        a += ja * w;
        b += jb * w;
    }
    Ok(VelocityMatrices { a, b })
}

/// Closed-form velocity matrices of the sampled unbalanced disc.
pub fn disc_velocity_analytic(theta: f64, theta_prev: f64, params: &DiscParams) -> Result<VelocityMatrices> {
    if !(theta.is_finite() && theta_prev.is_finite()) {
        return Err(Error::NonFinite("disc angles".into()));
    }
    let a = DMatrix::from_row_slice(
        2,
        2,
        &[
            1.0,
            params.ts,
            -params.gravity_gain() * sind(theta, theta_prev),
            params.velocity_retention(),
        ],
    );
    let b = DMatrix::from_row_slice(2, 1, &[0.0, params.input_gain()]);
    Ok(VelocityMatrices { a, b })
}

/// Exact affine decomposition of the disc velocity form in the
/// sinc-difference basis of the angle.
pub fn disc_lpv_coefficients(params: &DiscParams) -> LpvCoefficients {
    let a0 = DMatrix::from_row_slice(2, 2, &[1.0, params.ts, 0.0, params.velocity_retention()]);
    let a1 = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, -params.gravity_gain(), 0.0]);
    let b0 = DMatrix::from_row_slice(2, 1, &[0.0, params.input_gain()]);
    LpvCoefficients::new(vec![a0, a1], vec![b0, DMatrix::zeros(2, 1)]).expect("consistent disc shapes")
}

/// One sampled segment with its velocity matrices.
#[derive(Debug, Clone)]
pub struct VelocitySample {
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub x_prev: DVector<f64>,
    pub u_prev: DVector<f64>,
    pub matrices: VelocityMatrices,
}

/// Entrywise least-squares fit of the affine decomposition on the
/// regressor `(1, p)`. Returns the coefficients and the max abs residual.
pub fn fit_coefficients(basis: &SchedulingBasis, samples: &[VelocitySample]) -> Result<(LpvCoefficients, f64)> {
    let n_p = basis.n_p();
    let cols = 1 + n_p;
    let first = samples.first().ok_or(Error::IllPosedFit { rank: 0, required: cols })?;
    let (n_x, n_u) = (first.matrices.a.nrows(), first.matrices.b.ncols());

    let mut phi = DMatrix::zeros(samples.len(), cols);
    for (r, s) in samples.iter().enumerate() {
        if s.matrices.a.shape() != (n_x, n_x) || s.matrices.b.shape() != (n_x, n_u) {
            return Err(Error::dim(format!("velocity sample {r}"), format!("{n_x}x{n_x}"), format!("{:?}", s.matrices.a.shape())));
        }
        let p = basis.eval(&SchedulingArgs {
            x: &s.x,
            u: &s.u,
            x_prev: &s.x_prev,
            u_prev: &s.u_prev,
        })?;
        phi[(r, 0)] = 1.0;
        phi.view_mut((r, 1), (1, n_p)).copy_from(&p.transpose());
    }
    let rank = linalg::numerical_rank(&phi, 1e-10);
    if rank < cols {
        return Err(Error::IllPosedFit { rank, required: cols });
    }

    // Targets: every entry of [A_v B_v] stacked as columns.
    let n_entries = n_x * (n_x + n_u);
    let mut y = DMatrix::zeros(samples.len(), n_entries);
    for (r, s) in samples.iter().enumerate() {
        let ab = linalg::block(&[vec![s.matrices.a.clone(), s.matrices.b.clone()]])?;
        for (c, v) in ab.iter().enumerate() {
            y[(r, c)] = *v;
        }
    }
    let theta = linalg::min_norm_solve(&phi, &y, 1e-12);
    let residual = linalg::max_abs(&(&phi * &theta - &y));

    let unpack = |i: usize| -> (DMatrix<f64>, DMatrix<f64>) {
        let ab = DMatrix::from_iterator(n_x, n_x + n_u, theta.row(i).iter().copied());
        (ab.columns(0, n_x).into_owned(), ab.columns(n_x, n_u).into_owned())
    };
    let (a, b): (Vec<_>, Vec<_>) = (0..cols).map(unpack).unzip();
    Ok((LpvCoefficients::new(a, b)?, residual))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::{DiscPlant, LtiPlant};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    struct Square;
    impl Plant for Square {
        fn n_x(&self) -> usize {
            1
        }
        fn n_u(&self) -> usize {
            0
        }
        fn step(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DVector<f64> {
            x.map(|e| e * e)
        }
        fn jacobian_x(&self, x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 2.0 * x[0])
        }
        fn jacobian_u(&self, _x: &DVector<f64>, _u: &DVector<f64>) -> DMatrix<f64> {
            DMatrix::zeros(1, 0)
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        for n in 2..=12 {
            let rule = gauss_legendre(n);
            assert!((rule.iter().map(|(_, w)| w).sum::<f64>() - 1.0).abs() < 1e-14);
            for deg in 0..(2 * n) {
                let q: f64 = rule.iter().map(|(t, w)| w * t.powi(deg as i32)).sum();
                assert!((q - 1.0 / (deg as f64 + 1.0)).abs() < 1e-14, "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn constant_differences_give_zero_increments() {
        let d = NlDataDictionary::new(vec![v(&[0.4]); 5], vec![v(&[1.0, -2.0]); 5]).unwrap();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let vd = difference_dictionary(&d, &basis).unwrap();
        assert_eq!(vd.len(), 4);
        assert!(vd.dx.iter().all(|dx| dx.amax() == 0.0));
        assert!(vd.du.iter().all(|du| du.amax() == 0.0));
    }

    #[test]
    fn scalar_increments() {
        let d = NlDataDictionary::new(vec![v(&[]); 3], vec![v(&[0.0]), v(&[1.0]), v(&[3.0])]).unwrap();
        let vd = difference_dictionary(&d, &SchedulingBasis::empty(1, 0)).unwrap();
        assert_eq!(vd.dx, vec![v(&[1.0]), v(&[2.0])]);
        assert_eq!(vd.first_index, 2);
    }

    #[test]
    fn basis_dimension_mismatch() {
        let d = NlDataDictionary::new(vec![v(&[0.0]); 3], vec![v(&[0.0]); 3]).unwrap();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        assert!(difference_dictionary(&d, &basis).is_err());
    }

    #[test]
    fn lti_quadrature_is_exact() {
        let plant = LtiPlant {
            a: DMatrix::from_row_slice(2, 2, &[0.5, 1.0, -0.3, 0.9]),
            b: DMatrix::from_row_slice(2, 1, &[0.0, 2.0]),
        };
        let vm = velocity_matrices_quadrature(
            &plant,
            &SchedulingArgs { x: &v(&[1.0, 2.0]), u: &v(&[3.0]), x_prev: &v(&[-1.0, 0.5]), u_prev: &v(&[0.0]) },
            DEFAULT_QUADRATURE_NODES,
        )
        .unwrap();
        assert!((vm.a - &plant.a).amax() < 1e-15);
        assert!((vm.b - &plant.b).amax() < 1e-15);
    }

    #[test]
    fn square_map_on_unit_segment() {
        let vm = velocity_matrices_quadrature(
            &Square,
            &SchedulingArgs { x: &v(&[1.0]), u: &v(&[]), x_prev: &v(&[0.0]), u_prev: &v(&[]) },
            2,
        )
        .unwrap();
        assert!((vm.a[(0, 0)] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn too_few_nodes() {
        let args = SchedulingArgs { x: &v(&[1.0]), u: &v(&[]), x_prev: &v(&[0.0]), u_prev: &v(&[]) };
        assert!(velocity_matrices_quadrature(&Square, &args, 1).is_err());
    }

    #[test]
    fn disc_quadrature_matches_closed_form() {
        let params = DiscParams::default();
        let plant = DiscPlant::new(params);
        let vm = velocity_matrices_quadrature(
            &plant,
            &SchedulingArgs { x: &v(&[0.2, 0.0]), u: &v(&[0.0]), x_prev: &v(&[0.1, 0.0]), u_prev: &v(&[0.0]) },
            DEFAULT_QUADRATURE_NODES,
        )
        .unwrap();
        // Oracle: direct evaluation of the divided difference of the sine.
        let expected = -params.gravity_gain() * (f64::sin(0.2) - f64::sin(0.1)) / 0.1;
        assert!((vm.a[(1, 0)] - expected).abs() < 1e-10);
    }

    #[test]
    fn disc_analytic_entries() {
        let p = DiscParams::default();
        let at_rest = disc_velocity_analytic(0.0, 0.0, &p).unwrap();
        assert!((at_rest.a[(1, 0)] + p.gravity_gain()).abs() < 1e-15);
        assert_eq!(at_rest.a[(0, 0)], 1.0);
        assert_eq!(at_rest.a[(0, 1)], 0.01);
        let quarter = disc_velocity_analytic(std::f64::consts::FRAC_PI_2, 0.0, &p).unwrap();
        assert!((quarter.a[(1, 0)] + p.gravity_gain() * 2.0 / std::f64::consts::PI).abs() < 1e-14);
        assert_eq!(at_rest.b, DMatrix::from_row_slice(2, 1, &[0.0, p.input_gain()]));
    }

    fn disc_samples(params: &DiscParams, n: usize) -> Vec<VelocitySample> {
        (0..n)
            .map(|i| {
                let t = i as f64;
                let x = v(&[1.3 * (0.7 * t).sin(), 0.2 * t]);
                let x_prev = v(&[-0.4 + 0.21 * t, (0.3 * t).cos()]);
                let matrices = disc_velocity_analytic(x[0], x_prev[0], params).unwrap();
                VelocitySample { x, u: v(&[0.1 * t]), x_prev, u_prev: v(&[0.0]), matrices }
            })
            .collect()
    }

    #[test]
    fn fit_recovers_disc_decomposition() {
        let params = DiscParams::default();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let (c, res) = fit_coefficients(&basis, &disc_samples(&params, 12)).unwrap();
        assert!(res <= 1e-10);
        let oracle = disc_lpv_coefficients(&params);
        for i in 0..2 {
            assert!((&c.a[i] - &oracle.a[i]).amax() < 1e-10);
            assert!((&c.b[i] - &oracle.b[i]).amax() < 1e-10);
        }
    }

    #[test]
    fn fit_of_lti_samples_has_zero_scheduled_part() {
        let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.1, 0.0, 0.7]);
        let b = DMatrix::from_row_slice(2, 1, &[1.0, 0.5]);
        let basis = SchedulingBasis::identity(2, 1);
        let samples: Vec<_> = (0..10)
            .map(|i| {
                let t = i as f64;
                VelocitySample {
                    x: v(&[t.sin(), (2.0 * t).cos()]),
                    u: v(&[(0.3 * t).sin() + 0.1 * t * t]),
                    x_prev: v(&[(1.7 * t).cos(), t.sqrt()]),
                    u_prev: v(&[(t * 1.1).sin()]),
                    matrices: VelocityMatrices { a: a.clone(), b: b.clone() },
                }
            })
            .collect();
        // 6 basis functions + intercept needs at least 7 generic samples.
        let (c, res) = fit_coefficients(&basis, &samples).unwrap();
        assert!(res < 1e-10);
        assert!((&c.a[0] - &a).amax() < 1e-9);
        for i in 1..=6 {
            assert!(c.a[i].amax() < 1e-9 && c.b[i].amax() < 1e-9);
        }
    }

    #[test]
    fn single_sample_fit_is_ill_posed() {
        let params = DiscParams::default();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let err = fit_coefficients(&basis, &disc_samples(&params, 1)).unwrap_err();
        assert!(matches!(err, Error::IllPosedFit { rank: 1, required: 2 }));
    }

    #[test]
    fn lpv_eval_anchor_and_unit() {
        let c = disc_lpv_coefficients(&DiscParams::default());
        let at0 = lpv_eval(&c, &v(&[0.0])).unwrap();
        assert_eq!(at0.a, c.a[0]);
        let at1 = lpv_eval(&c, &v(&[1.0])).unwrap();
        assert_eq!(at1.a, &c.a[0] + &c.a[1]);
        assert_eq!(at1.b, &c.b[0] + &c.b[1]);
        assert!(lpv_eval(&c, &v(&[1.0, 2.0])).is_err());
    }

    #[test]
    fn lpv_eval_agrees_with_closed_form() {
        let params = DiscParams::default();
        let c = disc_lpv_coefficients(&params);
        let got = lpv_eval(&c, &v(&[sind(0.2, 0.1)])).unwrap();
        let want = disc_velocity_analytic(0.2, 0.1, &params).unwrap();
        assert!((got.a - want.a).amax() < 1e-15);
        assert!((got.b - want.b).amax() < 1e-15);
    }

    #[test]
    fn velocity_csv_header() {
        let d = NlDataDictionary::new(vec![v(&[0.0]), v(&[1.0])], vec![v(&[0.0, 0.0]), v(&[0.1, 0.2])]).unwrap();
        let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
        let vd = difference_dictionary(&d, &basis).unwrap();
        let mut out = Vec::new();
        vd.write_csv(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.starts_with("k,dx1,dx2,du1,p1\n2,"));
    }
}

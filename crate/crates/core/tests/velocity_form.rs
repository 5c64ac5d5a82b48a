mod common;

use common::{rand_vector, v};
use ddvel::basis::{sind, SchedulingArgs, SchedulingBasis};
use ddvel::plant::{DiscParams, DiscPlant, FnPlant, Plant};
use ddvel::velocity::*;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::Arc;

fn args<'a>(x: &'a DVector<f64>, u: &'a DVector<f64>, xp: &'a DVector<f64>, up: &'a DVector<f64>) -> SchedulingArgs<'a> {
    SchedulingArgs { x, u, x_prev: xp, u_prev: up }
}

fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).amax() / b.amax().max(1e-300)
}

#[test]
fn disc_quadrature_matches_closed_form() {
    let plant = DiscPlant::default();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let (x, xp) = (rand_vector(&mut rng, 2, 4.0), rand_vector(&mut rng, 2, 4.0));
        let (u, up) = (rand_vector(&mut rng, 1, 3.0), rand_vector(&mut rng, 1, 3.0));
        let q = velocity_matrices_quadrature(&plant, &args(&x, &u, &xp, &up), DEFAULT_QUADRATURE_NODES).unwrap();
        let exact = disc_velocity_analytic(x[0], xp[0], &plant.params).unwrap();
        assert!(rel_err(&q.a, &exact.a) <= 1e-10);
        assert!(rel_err(&q.b, &exact.b) <= 1e-10);
    }
}

#[test]
fn disc_increments_satisfy_velocity_form() {
    let plant = DiscPlant::default();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let (x, xp) = (rand_vector(&mut rng, 2, 3.0), rand_vector(&mut rng, 2, 3.0));
        let (u, up) = (rand_vector(&mut rng, 1, 3.0), rand_vector(&mut rng, 1, 3.0));
        let m = velocity_matrices_quadrature(&plant, &args(&x, &u, &xp, &up), DEFAULT_QUADRATURE_NODES).unwrap();
        let lhs = plant.step(&x, &u) - plant.step(&xp, &up);
        let rhs = &m.a * (&x - &xp) + &m.b * (&u - &up);
        assert!((lhs - rhs).amax() <= 1e-8);
    }
}

#[test]
fn closed_form_entries() {
    let p = DiscParams::default();
    let m = disc_velocity_analytic(0.0, 0.0, &p).unwrap();
    assert_eq!(m.a[(0, 0)], 1.0);
    assert_eq!(m.a[(0, 1)], 0.01);
    assert!((m.a[(1, 0)] + p.ts * p.m * p.g * p.l / p.j).abs() < 1e-12);
    let half_pi = disc_velocity_analytic(std::f64::consts::FRAC_PI_2, 0.0, &p).unwrap();
    let expected = -(p.ts * p.m * p.g * p.l / p.j) * 2.0 / std::f64::consts::PI;
    assert!((half_pi.a[(1, 0)] - expected).abs() < 1e-12);
    assert!((m.b[(1, 0)] - p.ts * p.km / p.tau).abs() < 1e-15);
}

#[test]
fn disc_coefficients_reproduce_closed_form() {
    let p = DiscParams::default();
    let c = disc_lpv_coefficients(&p);
    let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut samples = Vec::new();
    for _ in 0..30 {
        let (x, xp) = (rand_vector(&mut rng, 2, 3.0), rand_vector(&mut rng, 2, 3.0));
        let (u, up) = (v(&[0.0]), v(&[0.0]));
        let matrices = disc_velocity_analytic(x[0], xp[0], &p).unwrap();
        let at = lpv_eval(&c, &v(&[sind(x[0], xp[0])])).unwrap();
        assert!((at.a - &matrices.a).amax() < 1e-14);
        samples.push(VelocitySample { x, u, x_prev: xp, u_prev: up, matrices });
    }
    let (fit, residual) = fit_coefficients(&basis, &samples).unwrap();
    assert!(residual <= 1e-10);
    for i in 0..2 {
        assert!((&fit.a[i] - &c.a[i]).amax() <= 1e-10);
        assert!((&fit.b[i] - &c.b[i]).amax() <= 1e-10);
    }
}

#[test]
fn embedding_holds_on_recorded_disc_data() {
    let plant = DiscPlant::default();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let d = common::disc_data(&plant, 20, 3f64.sqrt(), &mut rng);
    let basis = SchedulingBasis::sinc_difference(vec![0], 2, 1).unwrap();
    let vd = difference_dictionary(&d, &basis).unwrap();
    let c = disc_lpv_coefficients(&plant.params);
    for k in 0..vd.len() - 1 {
        let m = lpv_eval(&c, &vd.p[k]).unwrap();
        let pred = &m.a * &vd.dx[k] + &m.b * &vd.du[k];
        assert!((pred - &vd.dx[k + 1]).amax() <= 1e-8, "k = {k}");
    }
}

// Cubic map: Jacobian entries are quadratic along the segment, so two
// Gauss nodes already integrate them exactly.
fn cubic_plant(c: [f64; 4]) -> FnPlant {
    FnPlant::new(
        1,
        1,
        Arc::new(move |x: &DVector<f64>, u: &DVector<f64>| {
            v(&[c[0] * x[0].powi(3) + c[1] * x[0] * x[0] + c[2] * x[0] * u[0] + c[3] * u[0].powi(3)])
        }),
    )
}

proptest! {
    #[test]
    fn quadrature_exact_for_polynomials(
        c in prop::array::uniform4(-2.0f64..2.0),
        x in -2.0f64..2.0, xp in -2.0f64..2.0, u in -2.0f64..2.0, up in -2.0f64..2.0,
    ) {
        let plant = cubic_plant(c);
        let (x, xp, u, up) = (v(&[x]), v(&[xp]), v(&[u]), v(&[up]));
        let m = velocity_matrices_quadrature(&plant, &args(&x, &u, &xp, &up), 2).unwrap();
        // Increment identity is exact for the true line integral.
        let lhs = plant.step(&x, &u) - plant.step(&xp, &up);
        let rhs = &m.a * (&x - &xp) + &m.b * (&u - &up);
        // central differences contribute O(h²) error to the Jacobians
        prop_assert!((lhs - rhs).amax() <= 1e-7);
    }

    #[test]
    fn sind_limit_is_continuous(a in -10.0f64..10.0, sign in prop::bool::ANY) {
        let eps = if sign { 1e-8 } else { -1e-8 };
        prop_assert!((sind(a, a + eps) - a.cos()).abs() <= 1e-6);
    }

    #[test]
    fn increments_round_trip(seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(2..20);
        let seq: Vec<_> = (0..n).map(|_| rand_vector(&mut rng, 3, 10.0)).collect();
        let rebuilt = ddvel::dictionary::accumulate(&seq[0], &ddvel::dictionary::increments(&seq));
        prop_assert_eq!(rebuilt.len(), seq.len());
        for (a, b) in rebuilt.iter().zip(&seq) {
            prop_assert!((a - b).amax() <= 1e-12);
        }
    }
}

#[test]
fn lti_plant_velocity_form_is_constant() {
    let a = DMatrix::from_row_slice(2, 2, &[0.9, 0.2, -0.1, 0.7]);
    let b = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
    let plant = ddvel::plant::LtiPlant { a: a.clone(), b: b.clone() };
    let (x, xp, u, up) = (v(&[1.0, -2.0]), v(&[0.3, 0.5]), v(&[0.7]), v(&[-1.0]));
    let m = velocity_matrices_quadrature(&plant, &args(&x, &u, &xp, &up), 3).unwrap();
    assert!((m.a - a).amax() < 1e-14);
    assert!((m.b - b).amax() < 1e-14);
}

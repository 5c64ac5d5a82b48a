#![allow(dead_code)]

use ddvel::control::collect_open_loop;
use ddvel::dictionary::NlDataDictionary;
use ddvel::plant::DiscPlant;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

pub fn v(xs: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(xs)
}

pub fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-scale..scale))
}

pub fn rand_vector(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.gen_range(-scale..scale))
}

/// Open-loop disc data: uniform initial state on [0, 1]², Gaussian input
/// with standard deviation `std`.
pub fn disc_data(plant: &DiscPlant, n: usize, std: f64, rng: &mut ChaCha8Rng) -> NlDataDictionary {
    let x1 = v(&[rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)]);
    let noise = Normal::new(0.0, std).unwrap();
    let inputs: Vec<_> = (0..=n).map(|_| v(&[noise.sample(rng)])).collect();
    collect_open_loop(plant, &x1, &inputs).unwrap()
}

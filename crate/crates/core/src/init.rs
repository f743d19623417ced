use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::autodiff::Array;

pub fn uniform<R: Rng + ?Sized>(rows: usize, cols: usize, bound: f64, rng: &mut R) -> Array {
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..=bound)).collect();
    Array::new(rows, cols, data).expect("finite uniform draws")
}

pub fn normal<R: Rng + ?Sized>(rows: usize, cols: usize, std: f64, rng: &mut R) -> Array {
    let data = (0..rows * cols)
        .map(|_| std * Distribution::<f64>::sample(&StandardNormal, rng))
        .collect();
    Array::new(rows, cols, data).expect("finite normal draws")
}

/// Normal with standard deviation `1/sqrt(fan_in)`.
pub fn scaled_normal<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array {
    normal(rows, cols, 1.0 / (cols.max(1) as f64).sqrt(), rng)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

/// Bound of the uniform init used for recurrent and factor matrices.
pub const RECURRENT_INIT: f64 = 0.05;

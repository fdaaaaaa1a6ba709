//! Seeded weight initializers. All randomness flows through the caller's
//! ChaCha RNG, so a run seed fully determines every weight.

use ndarray::Array2;
use rand::distributions::{Distribution, Uniform};
use rand::Rng;

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-a, a);
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

/// Small uniform noise for embedding tables.
pub fn embedding_init<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let dist = Uniform::new_inclusive(-0.05, 0.05);
    Array2::from_shape_fn((rows, cols), |_| dist.sample(rng))
}

pub fn zeros(rows: usize, cols: usize) -> Array2<f64> {
    Array2::zeros((rows, cols))
}

/// All-ones row, the identity gain for layer norm.
pub fn ones_row(cols: usize) -> Array2<f64> {
    Array2::from_elem((1, cols), 1.0)
}

//! Pairwise InfoNCE over attribute embeddings.
//!
//! The batch holds B terms as 2B interleaved rows: rows 2i and 2i+1 are two
//! attributes of term i and form each other's positive. For row i the score
//! against every other row is its dot product divided by the temperature; the
//! denominator runs over all rows except i itself (the positive stays in),
//! and the total is averaged over all 2B anchors.

use ndarray::Array2;

use crate::autodiff::{Tape, Var, MASK_VALUE};
use crate::error::{Error, Result};

/// How far a row norm may drift from 1 before the input is rejected. Loose
/// enough that finite-difference probes on raw embeddings stay legal.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-3;

pub(crate) fn validate_unit_rows(z: &Array2<f64>, what: &str) -> Result<()> {
    for (i, row) in z.rows().into_iter().enumerate() {
        let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
            return Err(Error::Parameter(format!(
                "{what}: row {i} has norm {norm}, expected 1"
            )));
        }
    }
    Ok(())
}

/// Partner of row i under the interleaved pairing: 2k <-> 2k+1.
fn partner(i: usize) -> usize {
    i ^ 1
}

/// Tape version: `z` is (2B, d) with unit rows. Returns the scalar loss var.
pub fn knowledge_infonce_tape(tape: &mut Tape, z: Var, tau: f64) -> Var {
    let n = tape.value(z).nrows();
    assert!(n >= 2 && n % 2 == 0, "need an even number of rows, got {n}");
    assert!(tau > 0.0, "temperature must be positive");
    let scores = tape.matmul_trans_b(z, z);
    let scaled = tape.scale(scores, 1.0 / tau);
    let mut diag_mask = Array2::zeros((n, n));
    for i in 0..n {
        diag_mask[[i, i]] = MASK_VALUE;
    }
    let mask = tape.leaf(diag_mask);
    let masked = tape.add(scaled, mask);
    let denom = tape.logsumexp_rows(masked);
    let pos = tape.select_per_row(scaled, (0..n).map(partner).collect());
    let per_row = tape.sub(denom, pos);
    tape.mean_all(per_row)
}

/// Value-only wrapper with input validation.
pub fn knowledge_infonce_loss(z: &Array2<f64>, tau: f64) -> Result<f64> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Parameter(format!("temperature {tau} must be positive")));
    }
    let n = z.nrows();
    if n < 2 || n % 2 != 0 {
        return Err(Error::Parameter(format!(
            "knowledge batch must have an even row count of at least 2, got {n}"
        )));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("non-finite embedding".into()));
    }
    validate_unit_rows(z, "knowledge batch")?;
    let mut tape = Tape::new();
    let leaf = tape.leaf(z.clone());
    let loss = knowledge_infonce_tape(&mut tape, leaf, tau);
    Ok(tape.value(loss)[[0, 0]])
}

#[cfg(test)]
mod tests {
    use rand::distributions::{Distribution, Uniform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    pub(crate) fn random_unit_rows(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Array2<f64> {
        let dist = Uniform::new(-1.0, 1.0);
        let mut z = Array2::from_shape_fn((n, d), |_| dist.sample(rng));
        for mut row in z.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.mapv_inplace(|v| v / norm);
        }
        z
    }

    /// Independent O(n^2) reimplementation with explicit loops.
    fn brute_force(z: &Array2<f64>, tau: f64) -> f64 {
        let n = z.nrows();
        let sim = |a: usize, b: usize| -> f64 {
            z.row(a).iter().zip(z.row(b).iter()).map(|(x, y)| x * y).sum::<f64>() / tau
        };
        let mut total = 0.0;
        for i in 0..n {
            let mut denom = 0.0;
            for k in 0..n {
                if k != i {
                    denom += sim(i, k).exp();
                }
            }
            total += denom.ln() - sim(i, partner(i));
        }
        total / n as f64
    }

    #[test]
    fn matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for &(b, d, tau) in &[(2usize, 4usize, 0.07), (4, 8, 0.07), (8, 16, 0.5), (3, 5, 1.0)] {
            let z = random_unit_rows(&mut rng, 2 * b, d);
            let fast = knowledge_infonce_loss(&z, tau).unwrap();
            let slow = brute_force(&z, tau);
            assert!((fast - slow).abs() < 1e-9, "B={b}: {fast} vs {slow}");
        }
    }

    #[test]
    fn single_pair_is_exactly_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let z = random_unit_rows(&mut rng, 2, 6);
        assert_eq!(knowledge_infonce_loss(&z, 0.07).unwrap(), 0.0);
    }

    #[test]
    fn identical_rows_give_log_2b_minus_1() {
        for b in [2usize, 4, 16] {
            let mut z = Array2::zeros((2 * b, 3));
            for mut row in z.rows_mut() {
                row[0] = 1.0;
            }
            let loss = knowledge_infonce_loss(&z, 0.07).unwrap();
            let expect = ((2 * b - 1) as f64).ln();
            assert!((loss - expect).abs() < 1e-9, "B={b}: {loss} vs {expect}");
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let z = random_unit_rows(&mut rng, 4, 4);
        assert!(knowledge_infonce_loss(&z, 0.0).is_err());
        assert!(knowledge_infonce_loss(&z, -1.0).is_err());
        let odd = random_unit_rows(&mut rng, 3, 4);
        assert!(knowledge_infonce_loss(&odd, 0.07).is_err());
        let unnormalized = &z * 2.0;
        assert!(knowledge_infonce_loss(&unnormalized, 0.07).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let z = random_unit_rows(&mut rng, 6, 5);
        let tau = 0.2;
        let mut tape = Tape::new();
        let leaf = tape.leaf(z.clone());
        let loss = knowledge_infonce_tape(&mut tape, leaf, tau);
        tape.backward(loss);
        let grad = tape.grad(leaf).unwrap().clone();
        let eps = 1e-5;
        for i in 0..z.nrows() {
            for j in 0..z.ncols() {
                let mut plus = z.clone();
                plus[[i, j]] += eps;
                let mut minus = z.clone();
                minus[[i, j]] -= eps;
                let eval = |m: &Array2<f64>| {
                    let mut t = Tape::new();
                    let l = t.leaf(m.clone());
                    let v = knowledge_infonce_tape(&mut t, l, tau);
                    t.value(v)[[0, 0]]
                };
                let numeric = (eval(&plus) - eval(&minus)) / (2.0 * eps);
                let a = grad[[i, j]];
                let denom = a.abs().max(numeric.abs()).max(1.0);
                assert!(
                    (a - numeric).abs() / denom < 1e-6,
                    "({i},{j}): analytic {a}, numeric {numeric}"
                );
            }
        }
    }
}

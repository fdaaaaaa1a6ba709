//! Linear probing: train a single softmax layer on frozen features at a
//! stratified fraction of the training set and report test accuracy.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LabeledFeatureSet {
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_names: Vec<String>,
}

impl LabeledFeatureSet {
    pub fn validate(&self) -> Result<()> {
        if self.features.nrows() != self.labels.len() {
            return Err(Error::Parameter(format!(
                "{} feature rows for {} labels",
                self.features.nrows(),
                self.labels.len()
            )));
        }
        if self.labels.is_empty() || self.class_names.is_empty() {
            return Err(Error::Parameter("empty feature set".into()));
        }
        if let Some(&l) = self.labels.iter().max() {
            if l >= self.class_names.len() {
                return Err(Error::Parameter(format!(
                    "label {l} outside {} classes",
                    self.class_names.len()
                )));
            }
        }
        if self.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Parameter("non-finite feature".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub weight_decay: f64,
    pub max_steps: usize,
    pub tol: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig { weight_decay: 1e-4, max_steps: 1000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub ratio: f64,
    pub accuracy: f64,
    pub n_train: usize,
}

/// Per-class shuffled subsample keeping `ceil(ratio * n_c)` examples (at
/// least one per represented class).
fn stratified_indices(labels: &[usize], n_classes: usize, ratio: f64, seed: u64) -> Vec<usize> {
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &l) in labels.iter().enumerate() {
        by_class.entry(l).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for c in 0..n_classes {
        let Some(members) = by_class.get(&c) else { continue };
        let mut members = members.clone();
        members.shuffle(&mut rng);
        let take = ((members.len() as f64 * ratio).ceil() as usize).clamp(1, members.len());
        out.extend(members.into_iter().take(take));
    }
    out.sort_unstable();
    out
}

fn softmax_rows(z: &Array2<f64>) -> Array2<f64> {
    let mut p = z.clone();
    for mut row in p.rows_mut() {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row /= s;
    }
    p
}

/// Mean cross-entropy plus L2 penalty on the weights.
fn objective(x: &Array2<f64>, y: &[usize], w: &Array2<f64>, b: &Array1<f64>, wd: f64) -> f64 {
    let z = x.dot(w) + b;
    let n = x.nrows() as f64;
    let mut loss = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let row = z.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        loss += lse - z[[i, yi]];
    }
    loss / n + 0.5 * wd * w.iter().map(|v| v * v).sum::<f64>()
}

/// Full-batch gradient descent with backtracking on the convex softmax
/// objective; stops when the loss improvement falls below `tol`.
fn fit_softmax(
    x: &Array2<f64>,
    y: &[usize],
    n_classes: usize,
    cfg: &ProbeConfig,
) -> (Array2<f64>, Array1<f64>) {
    let d = x.ncols();
    let n = x.nrows() as f64;
    let mut w = Array2::zeros((d, n_classes));
    let mut b = Array1::zeros(n_classes);
    let mut lr = 1.0;
    let mut loss = objective(x, y, &w, &b, cfg.weight_decay);
    for _ in 0..cfg.max_steps {
        let z = x.dot(&w) + &b;
        let mut p = softmax_rows(&z);
        for (i, &yi) in y.iter().enumerate() {
            p[[i, yi]] -= 1.0;
        }
        let gw = x.t().dot(&p) / n + &(&w * cfg.weight_decay);
        let gb = p.sum_axis(Axis(0)) / n;
        // Backtrack until the step is an improvement.
        let mut stepped = false;
        for _ in 0..40 {
            let w2 = &w - &(&gw * lr);
            let b2 = &b - &(&gb * lr);
            let l2 = objective(x, y, &w2, &b2, cfg.weight_decay);
            if l2 <= loss {
                let improved = loss - l2;
                w = w2;
                b = b2;
                loss = l2;
                stepped = true;
                if improved < cfg.tol {
                    return (w, b);
                }
                lr *= 1.1;
                break;
            }
            lr *= 0.5;
        }
        if !stepped {
            break;
        }
    }
    (w, b)
}

/// Train the probe on a stratified `ratio` of `train` and score on `test`.
/// Classes with no training examples stay in the output space; a warning
/// records them. Deterministic given the seed.
pub fn linear_probe(
    train: &LabeledFeatureSet,
    test: &LabeledFeatureSet,
    ratio: f64,
    seed: u64,
    cfg: &ProbeConfig,
    warnings: &mut Vec<String>,
) -> Result<ProbeResult> {
    train.validate()?;
    test.validate()?;
    if !(0.0 < ratio && ratio <= 1.0) {
        return Err(Error::Parameter(format!("ratio {ratio} outside (0, 1]")));
    }
    if train.class_names != test.class_names {
        return Err(Error::Parameter("train and test class spaces differ".into()));
    }
    if train.features.ncols() != test.features.ncols() {
        return Err(Error::Parameter("feature widths differ".into()));
    }
    let n_classes = train.class_names.len();
    let idx = stratified_indices(&train.labels, n_classes, ratio, seed);
    for c in 0..n_classes {
        if !idx.iter().any(|&i| train.labels[i] == c) {
            warnings.push(format!(
                "class {:?} has no training examples in the subsample",
                train.class_names[c]
            ));
        }
    }
    let x = train.features.select(Axis(0), &idx);
    let y: Vec<usize> = idx.iter().map(|&i| train.labels[i]).collect();
    let (w, b) = fit_softmax(&x, &y, n_classes, cfg);

    let z = test.features.dot(&w) + &b;
    let mut correct = 0usize;
    for (i, &yi) in test.labels.iter().enumerate() {
        let row = z.row(i);
        let mut best = 0usize;
        for j in 1..n_classes {
            if row[j] > row[best] {
                best = j;
            }
        }
        if best == yi {
            correct += 1;
        }
    }
    Ok(ProbeResult {
        ratio,
        accuracy: correct as f64 / test.labels.len() as f64,
        n_train: idx.len(),
    })
}

#[cfg(test)]
mod tests {
    use rand::distributions::{Distribution, Uniform};
    use rand::Rng;

    use super::*;

    fn blob_set(
        centers: &[[f64; 4]],
        per_class: usize,
        spread: f64,
        seed: u64,
    ) -> LabeledFeatureSet {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(-spread, spread);
        let n = centers.len() * per_class;
        let mut features = Array2::zeros((n, 4));
        let mut labels = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for i in 0..per_class {
                let r = c * per_class + i;
                for j in 0..4 {
                    features[[r, j]] = center[j] + dist.sample(&mut rng);
                }
                labels.push(c);
            }
        }
        LabeledFeatureSet {
            features,
            labels,
            class_names: (0..centers.len()).map(|c| format!("class{c}")).collect(),
        }
    }

    const FAR: &[[f64; 4]] = &[[3.0, 0.0, 0.0, 0.0], [-3.0, 0.0, 0.0, 0.0]];

    #[test]
    fn separable_classes_reach_perfect_accuracy_at_all_ratios() {
        let train = blob_set(FAR, 200, 0.5, 1);
        let test = blob_set(FAR, 40, 0.5, 2);
        let mut w = Vec::new();
        for ratio in [0.01, 0.1, 1.0] {
            let got = linear_probe(&train, &test, ratio, 0, &ProbeConfig::default(), &mut w)
                .unwrap();
            assert_eq!(got.accuracy, 1.0, "ratio {ratio}");
        }
        assert!(w.is_empty());
        let one_percent =
            linear_probe(&train, &test, 0.01, 0, &ProbeConfig::default(), &mut w).unwrap();
        assert_eq!(one_percent.n_train, 4, "ceil(0.01 * 200) per class");
    }

    #[test]
    fn same_seed_same_result() {
        let train = blob_set(FAR, 50, 2.0, 3);
        let test = blob_set(FAR, 30, 2.0, 4);
        let mut w = Vec::new();
        let a = linear_probe(&train, &test, 0.5, 9, &ProbeConfig::default(), &mut w).unwrap();
        let b = linear_probe(&train, &test, 0.5, 9, &ProbeConfig::default(), &mut w).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn probe_tracks_the_nearest_centroid_oracle_on_gaussian_blobs() {
        // Equal spherical classes: the best linear rule is nearest centroid.
        let centers: &[[f64; 4]] =
            &[[2.0, 0.0, 0.0, 0.0], [-1.0, 1.8, 0.0, 0.0], [-1.0, -1.8, 0.0, 0.0]];
        let train = blob_set(centers, 300, 1.6, 5);
        let test = blob_set(centers, 200, 1.6, 6);
        let mut w = Vec::new();
        let got =
            linear_probe(&train, &test, 1.0, 0, &ProbeConfig::default(), &mut w).unwrap();
        let mut oracle_correct = 0;
        for (i, &yi) in test.labels.iter().enumerate() {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d: f64 = (0..4)
                    .map(|j| (test.features[[i, j]] - center[j]).powi(2))
                    .sum();
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if best == yi {
                oracle_correct += 1;
            }
        }
        let oracle = oracle_correct as f64 / test.labels.len() as f64;
        assert!(
            (got.accuracy - oracle).abs() <= 0.02,
            "probe {} vs oracle {oracle}",
            got.accuracy
        );
    }

    #[test]
    fn missing_class_keeps_the_output_space_and_warns() {
        let mut train = blob_set(FAR, 20, 0.5, 7);
        train.class_names.push("ghost".into());
        let mut test = blob_set(FAR, 10, 0.5, 8);
        test.class_names.push("ghost".into());
        let mut w = Vec::new();
        let got =
            linear_probe(&train, &test, 1.0, 0, &ProbeConfig::default(), &mut w).unwrap();
        assert_eq!(w.len(), 1);
        assert!(w[0].contains("ghost"));
        assert_eq!(got.accuracy, 1.0, "the ghost class never wins the argmax");
    }

    #[test]
    fn rejects_invalid_inputs() {
        let train = blob_set(FAR, 10, 0.5, 1);
        let test = blob_set(FAR, 10, 0.5, 2);
        let mut w = Vec::new();
        assert!(linear_probe(&train, &test, 0.0, 0, &ProbeConfig::default(), &mut w).is_err());
        assert!(linear_probe(&train, &test, 1.5, 0, &ProbeConfig::default(), &mut w).is_err());
        let mut bad = train.clone();
        bad.labels[0] = 9;
        assert!(bad.validate().is_err());
        let mut nan = train.clone();
        nan.features[[0, 0]] = f64::NAN;
        assert!(nan.validate().is_err());
    }

    #[test]
    fn subsample_is_stratified() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let labels: Vec<usize> = (0..90).map(|_| rng.gen_range(0..3)).collect();
        let idx = stratified_indices(&labels, 3, 0.1, 4);
        for c in 0..3 {
            let total = labels.iter().filter(|&&l| l == c).count();
            let taken = idx.iter().filter(|&&i| labels[i] == c).count();
            assert_eq!(taken, ((total as f64) * 0.1).ceil() as usize, "class {c}");
        }
    }
}

//! Two-level k-means image filter.
//!
//! Images are embedded, clustered into k1 groups, each group clustered again
//! into k2 subgroups, and a human-audited keep-list of `l1:l2` leaf ids
//! decides which images survive. The keep-list file stands in for the manual
//! cluster screening step.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, Axis};
use rand::distributions::{Distribution, Uniform, WeightedIndex};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const KMEANS_MAX_ITER: usize = 100;
const KMEANS_TOL: f64 = 1e-4;

/// Embeds a batch of grayscale images, one `(1, pixels)` matrix per image,
/// into fixed-width row vectors for clustering.
pub trait ImageEmbedder {
    fn embed_dim(&self) -> usize;
    fn embed(&self, images: &[Array2<f64>]) -> Result<Array2<f64>>;
}

/// Default embedder: block-mean statistics pushed through a fixed random
/// projection. No learned weights, deterministic for a given seed.
pub struct PixelStatEmbedder {
    projection: Array2<f64>,
    grid: usize,
}

impl PixelStatEmbedder {
    pub fn new(seed: u64, out_dim: usize) -> Self {
        use rand::SeedableRng;
        let grid = 8;
        let in_dim = grid * grid + 2;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let projection = crate::nn::xavier_uniform(&mut rng, in_dim, out_dim);
        PixelStatEmbedder { projection, grid }
    }

    fn stats(&self, image: &Array2<f64>) -> Array1<f64> {
        let pixels = image.row(0);
        let n = pixels.len();
        let side = (n as f64).sqrt().round() as usize;
        assert_eq!(side * side, n, "filter embedder expects square images");
        let g = self.grid;
        let mut out = Array1::zeros(g * g + 2);
        let mut counts = vec![0usize; g * g];
        for y in 0..side {
            for x in 0..side {
                let by = (y * g / side).min(g - 1);
                let bx = (x * g / side).min(g - 1);
                out[by * g + bx] += pixels[y * side + x];
                counts[by * g + bx] += 1;
            }
        }
        for i in 0..g * g {
            if counts[i] > 0 {
                out[i] /= counts[i] as f64;
            }
        }
        let mean = pixels.mean().unwrap_or(0.0);
        let var = pixels.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        out[g * g] = mean;
        out[g * g + 1] = var.sqrt();
        out
    }
}

impl ImageEmbedder for PixelStatEmbedder {
    fn embed_dim(&self) -> usize {
        self.projection.ncols()
    }

    fn embed(&self, images: &[Array2<f64>]) -> Result<Array2<f64>> {
        let mut feats = Array2::zeros((images.len(), self.grid * self.grid + 2));
        for (i, img) in images.iter().enumerate() {
            feats.row_mut(i).assign(&self.stats(img));
        }
        Ok(feats.dot(&self.projection))
    }
}

fn sq_dist(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(point: ndarray::ArrayView1<f64>, centroids: &Array2<f64>) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in centroids.axis_iter(Axis(0)).enumerate() {
        let d = sq_dist(point, c);
        if d < best_d {
            best_d = d;
            best = i;
        }
    }
    best
}

/// Lloyd's algorithm with k-means++ seeding, iteration cap 100, and
/// convergence tolerance 1e-4 on the largest centroid shift. A cluster that
/// empties keeps its previous centroid.
pub fn kmeans<R: Rng>(data: &Array2<f64>, k: usize, rng: &mut R) -> Result<(Array2<f64>, Vec<usize>)> {
    let n = data.nrows();
    if k == 0 || n < k {
        return Err(Error::Parameter(format!("kmeans needs at least k={k} points, got {n}")));
    }
    for v in data.iter() {
        if !v.is_finite() {
            return Err(Error::Parameter("kmeans input contains non-finite values".into()));
        }
    }

    let mut centroids = Array2::zeros((k, data.ncols()));
    let first = Uniform::new(0, n).sample(rng);
    centroids.row_mut(0).assign(&data.row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(data.row(i), centroids.row(0))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            WeightedIndex::new(&d2)
                .map_err(|e| Error::Parameter(format!("kmeans++ weights: {e}")))?
                .sample(rng)
        } else {
            // All points coincide with chosen centroids; any point works.
            Uniform::new(0, n).sample(rng)
        };
        centroids.row_mut(c).assign(&data.row(pick));
        for i in 0..n {
            d2[i] = d2[i].min(sq_dist(data.row(i), centroids.row(c)));
        }
    }

    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITER {
        for i in 0..n {
            assign[i] = nearest(data.row(i), &centroids);
        }
        let mut sums = Array2::<f64>::zeros((k, data.ncols()));
        let mut counts = vec![0usize; k];
        for i in 0..n {
            let mut row = sums.row_mut(assign[i]);
            row += &data.row(i);
            counts[assign[i]] += 1;
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            if counts[c] == 0 {
                continue;
            }
            let new = &sums.row(c) / counts[c] as f64;
            shift = shift.max(sq_dist(new.view(), centroids.row(c)).sqrt());
            centroids.row_mut(c).assign(&new);
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    for i in 0..n {
        assign[i] = nearest(data.row(i), &centroids);
    }
    Ok((centroids, assign))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClusterFilterModel {
    pub level1_centroids: Array2<f64>,
    /// Indexed by level-1 cluster id.
    pub level2_centroids: Vec<Array2<f64>>,
    /// Leaf ids `(level1, level2)` that survive screening.
    pub keep_set: BTreeSet<(usize, usize)>,
}

impl ClusterFilterModel {
    /// Leaf assignment of one embedded image.
    pub fn assign(&self, point: ndarray::ArrayView1<f64>) -> (usize, usize) {
        let l1 = nearest(point, &self.level1_centroids);
        let l2 = nearest(point, &self.level2_centroids[l1]);
        (l1, l2)
    }

    pub fn save_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer(w, self)?;
        Ok(())
    }

    pub fn load_json<R: std::io::Read>(r: R) -> Result<Self> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// Fit the two-level model. A level-1 cluster with fewer members than k2
/// gets one centroid per member; an empty one degenerates to its own
/// level-1 centroid so assignment stays total.
pub fn fit_cluster_filter<R: Rng>(
    embeddings: &Array2<f64>,
    k1: usize,
    k2: usize,
    rng: &mut R,
) -> Result<ClusterFilterModel> {
    if k2 == 0 {
        return Err(Error::Parameter("k2 must be positive".into()));
    }
    let (level1_centroids, assign1) = kmeans(embeddings, k1, rng)?;
    let mut level2_centroids = Vec::with_capacity(k1);
    for c in 0..k1 {
        let members: Vec<usize> = (0..embeddings.nrows()).filter(|&i| assign1[i] == c).collect();
        if members.is_empty() {
            level2_centroids.push(
                level1_centroids.row(c).to_owned().insert_axis(Axis(0)),
            );
            continue;
        }
        let mut sub = Array2::zeros((members.len(), embeddings.ncols()));
        for (r, &i) in members.iter().enumerate() {
            sub.row_mut(r).assign(&embeddings.row(i));
        }
        let k = k2.min(members.len());
        let (cents, _) = kmeans(&sub, k, rng)?;
        level2_centroids.push(cents);
    }
    Ok(ClusterFilterModel { level1_centroids, level2_centroids, keep_set: BTreeSet::new() })
}

/// Indices of embeddings whose leaf assignment is in the keep-set,
/// ascending. An empty keep-set keeps nothing.
pub fn apply_cluster_filter(model: &ClusterFilterModel, embeddings: &Array2<f64>) -> Vec<usize> {
    (0..embeddings.nrows())
        .filter(|&i| model.keep_set.contains(&model.assign(embeddings.row(i))))
        .collect()
}

/// Keep-list file: one `l1:l2` per line, `#` starts a comment.
pub fn read_keep_list<R: BufRead>(r: R, k1: usize, k2: usize) -> Result<BTreeSet<(usize, usize)>> {
    let mut out = BTreeSet::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        let body = line.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (a, b) = body.split_once(':').ok_or_else(|| {
            Error::Parse(format!("keep-list line {}: expected l1:l2", lineno + 1))
        })?;
        let l1: usize = a.trim().parse().map_err(|_| {
            Error::Parse(format!("keep-list line {}: bad level-1 id {a:?}", lineno + 1))
        })?;
        let l2: usize = b.trim().parse().map_err(|_| {
            Error::Parse(format!("keep-list line {}: bad level-2 id {b:?}", lineno + 1))
        })?;
        if l1 >= k1 || l2 >= k2 {
            return Err(Error::Parse(format!(
                "keep-list line {}: {l1}:{l2} outside the {k1}x{k2} grid",
                lineno + 1
            )));
        }
        out.insert((l1, l2));
    }
    Ok(out)
}

pub fn write_keep_list<W: Write>(keep: &BTreeSet<(usize, usize)>, mut w: W) -> Result<()> {
    for (l1, l2) in keep {
        writeln!(w, "{l1}:{l2}")?;
    }
    Ok(())
}

//! Reverse-mode automatic differentiation over `f64` matrices.
//!
//! A [`Tape`] is a freshly built expression graph per training step. Ops push
//! nodes and return [`Var`] handles; [`Tape::backward`] walks the nodes in
//! reverse creation order, which is a valid topological order because inputs
//! always precede outputs. Everything is dense `Array2<f64>`: at the scales
//! this crate trains (tiny encoders, desk-size corpora) clarity and exact
//! reproducibility beat throughput.

mod params;

pub use params::{ParamSet, TapeBinding};

use ndarray::{Array2, Axis};

/// Handle to a node on a specific tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op {
    Leaf,
    /// Elementwise sum of two same-shape matrices.
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise (Hadamard) product.
    Mul(Var, Var),
    /// Row-broadcast sum: (n,d) + (1,d).
    AddRow(Var, Var),
    /// Row-broadcast product: (n,d) * (1,d).
    MulRow(Var, Var),
    MatMul(Var, Var),
    /// A * B^T without materializing the transpose.
    MatMulTransB(Var, Var),
    Transpose(Var),
    Scale(Var, f64),
    AddConst(Var),
    Relu(Var),
    /// Softmax independently over each row.
    SoftmaxRows(Var),
    /// Row-wise log(sum(exp)), (n,m) -> (n,1), computed with the max trick.
    LogSumExpRows(Var),
    /// Gather one column per row, (n,m) -> (n,1).
    SelectPerRow(Var, Vec<usize>),
    /// L2-normalize each row.
    RowNormalize(Var),
    /// Per-row standardization (mean 0, variance 1, no affine).
    LayerNormRows(Var),
    /// Mean over rows, (n,d) -> (1,d).
    MeanRows(Var),
    /// Mean over all entries, -> (1,1).
    MeanAll(Var),
    /// Gather rows of a table, (vocab,d) + indices -> (len,d).
    EmbedGather(Var, Vec<usize>),
    /// Stack inputs vertically; all must share the column count.
    ConcatRows(Vec<Var>),
    /// Unfold an image stored as (channels, h*w) into convolution patches
    /// (channels*k*k, out_h*out_w). Padding is implicit zeros.
    Im2Col { src: Var, h: usize, w: usize, k: usize, stride: usize },
    /// Identity forward, blocks the gradient.
    StopGrad,
}

struct Node {
    op: Op,
    value: Array2<f64>,
}

/// Numeric floor used instead of -inf when masking logits, so that backward
/// passes never multiply 0 by inf.
pub const MASK_VALUE: f64 = -1e9;

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Array2<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, op: Op, value: Array2<f64>) -> Var {
        assert!(
            value.iter().all(|x| x.is_finite()),
            "non-finite value produced by node {}",
            self.nodes.len()
        );
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Gradient of the last `backward` root with respect to `v`, if any
    /// reached it.
    pub fn grad(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn leaf(&mut self, value: Array2<f64>) -> Var {
        self.push(Op::Leaf, value)
    }

    fn shape(&self, v: Var) -> (usize, usize) {
        let s = self.nodes[v.0].value.dim();
        (s.0, s.1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "add: shape mismatch");
        let value = &self.nodes[a.0].value + &self.nodes[b.0].value;
        self.push(Op::Add(a, b), value)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "sub: shape mismatch");
        let value = &self.nodes[a.0].value - &self.nodes[b.0].value;
        self.push(Op::Sub(a, b), value)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b), "mul: shape mismatch");
        let value = &self.nodes[a.0].value * &self.nodes[b.0].value;
        self.push(Op::Mul(a, b), value)
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row: rhs must be a single row");
        assert_eq!(self.shape(a).1, self.shape(row).1, "add_row: width mismatch");
        let value = &self.nodes[a.0].value + &self.nodes[row.0].value;
        self.push(Op::AddRow(a, row), value)
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "mul_row: rhs must be a single row");
        assert_eq!(self.shape(a).1, self.shape(row).1, "mul_row: width mismatch");
        let value = &self.nodes[a.0].value * &self.nodes[row.0].value;
        self.push(Op::MulRow(a, row), value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).1, self.shape(b).0, "matmul: inner dim mismatch");
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value);
        self.push(Op::MatMul(a, b), value)
    }

    pub fn matmul_trans_b(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a).1, self.shape(b).1, "matmul_trans_b: width mismatch");
        let value = self.nodes[a.0].value.dot(&self.nodes[b.0].value.t());
        self.push(Op::MatMulTransB(a, b), value)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.t().to_owned();
        self.push(Op::Transpose(a), value)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value * c;
        self.push(Op::Scale(a, c), value)
    }

    pub fn add_const(&mut self, a: Var, c: f64) -> Var {
        let value = &self.nodes[a.0].value + c;
        self.push(Op::AddConst(a), value)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.mapv(|x| x.max(0.0));
        self.push(Op::Relu(a), value)
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|v| (v - max).exp());
            let sum: f64 = row.sum();
            row.mapv_inplace(|v| v / sum);
        }
        self.push(Op::SoftmaxRows(a), value)
    }

    pub fn logsumexp_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut value = Array2::zeros((x.nrows(), 1));
        for (i, row) in x.rows().into_iter().enumerate() {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            value[[i, 0]] = max + sum.ln();
        }
        self.push(Op::LogSumExpRows(a), value)
    }

    pub fn select_per_row(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let x = &self.nodes[a.0].value;
        assert_eq!(cols.len(), x.nrows(), "select_per_row: one index per row");
        let mut value = Array2::zeros((x.nrows(), 1));
        for (i, &c) in cols.iter().enumerate() {
            assert!(c < x.ncols(), "select_per_row: column {c} out of range");
            value[[i, 0]] = x[[i, c]];
        }
        self.push(Op::SelectPerRow(a, cols), value)
    }

    pub fn row_normalize(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(norm > 1e-12, "row_normalize: zero-norm row");
            row.mapv_inplace(|v| v / norm);
        }
        self.push(Op::RowNormalize(a), value)
    }

    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let d = x.ncols() as f64;
        let mut value = x.clone();
        for mut row in value.rows_mut() {
            let mean = row.sum() / d;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
            let denom = (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| (v - mean) / denom);
        }
        self.push(Op::LayerNormRows(a), value)
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let value = x
            .mean_axis(Axis(0))
            .expect("mean_rows: empty input")
            .insert_axis(Axis(0));
        self.push(Op::MeanRows(a), value)
    }

    pub fn mean_all(&mut self, a: Var) -> Var {
        let x = &self.nodes[a.0].value;
        let value = Array2::from_elem((1, 1), x.mean().expect("mean_all: empty input"));
        self.push(Op::MeanAll(a), value)
    }

    pub fn embed_gather(&mut self, table: Var, indices: Vec<usize>) -> Var {
        let t = &self.nodes[table.0].value;
        let mut value = Array2::zeros((indices.len(), t.ncols()));
        for (i, &idx) in indices.iter().enumerate() {
            assert!(idx < t.nrows(), "embed_gather: index {idx} out of range");
            value.row_mut(i).assign(&t.row(idx));
        }
        self.push(Op::EmbedGather(table, indices), value)
    }

    pub fn concat_rows(&mut self, parts: Vec<Var>) -> Var {
        assert!(!parts.is_empty(), "concat_rows: no inputs");
        let d = self.shape(parts[0]).1;
        let total: usize = parts.iter().map(|&p| self.shape(p).0).sum();
        let mut value = Array2::zeros((total, d));
        let mut at = 0;
        for &p in &parts {
            let (n, pd) = self.shape(p);
            assert_eq!(pd, d, "concat_rows: width mismatch");
            value
                .slice_mut(ndarray::s![at..at + n, ..])
                .assign(&self.nodes[p.0].value);
            at += n;
        }
        self.push(Op::ConcatRows(parts), value)
    }

    /// `src` is (channels, h*w) row-major per channel. Produces the patch
    /// matrix for a k-by-k convolution with the given stride and same-style
    /// zero padding of `k / 2` on each side.
    pub fn im2col(&mut self, src: Var, h: usize, w: usize, k: usize, stride: usize) -> Var {
        let x = &self.nodes[src.0].value;
        let c = x.nrows();
        assert_eq!(x.ncols(), h * w, "im2col: source is not (channels, h*w)");
        assert!(k >= 1 && stride >= 1, "im2col: degenerate geometry");
        let pad = k / 2;
        let out_h = (h + 2 * pad - k) / stride + 1;
        let out_w = (w + 2 * pad - k) / stride + 1;
        let mut value = Array2::zeros((c * k * k, out_h * out_w));
        for ch in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = ch * k * k + ky * k + kx;
                    for oy in 0..out_h {
                        for ox in 0..out_w {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            let ix = (ox * stride + kx) as isize - pad as isize;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            value[[row, oy * out_w + ox]] =
                                x[[ch, iy as usize * w + ix as usize]];
                        }
                    }
                }
            }
        }
        self.push(Op::Im2Col { src, h, w, k, stride }, value)
    }

    pub fn stop_grad(&mut self, a: Var) -> Var {
        let value = self.nodes[a.0].value.clone();
        self.push(Op::StopGrad, value)
    }

    /// Backpropagate from a scalar root. Gradients accumulate across shared
    /// subexpressions and are readable via [`Tape::grad`] afterwards.
    pub fn backward(&mut self, root: Var) {
        assert_eq!(self.shape(root), (1, 1), "backward: root must be scalar");
        self.grads = vec![None; self.nodes.len()];
        self.grads[root.0] = Some(Array2::from_elem((1, 1), 1.0));

        for i in (0..=root.0).rev() {
            let Some(g) = self.grads[i].take() else { continue };
            self.propagate(i, &g);
            self.grads[i] = Some(g);
        }
    }

    fn accumulate(&mut self, v: Var, delta: Array2<f64>) {
        match &mut self.grads[v.0] {
            Some(g) => *g += &delta,
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, node: usize, g: &Array2<f64>) {
        match &self.nodes[node].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, g.clone());
            }
            Op::Sub(a, b) => {
                let (a, b) = (*a, *b);
                self.accumulate(a, g.clone());
                self.accumulate(b, -g.clone());
            }
            Op::Mul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g * &self.nodes[b.0].value;
                let gb = g * &self.nodes[a.0].value;
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::AddRow(a, row) => {
                let (a, row) = (*a, *row);
                let grow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                self.accumulate(a, g.clone());
                self.accumulate(row, grow);
            }
            Op::MulRow(a, row) => {
                let (a, row) = (*a, *row);
                let ga = g * &self.nodes[row.0].value;
                let grow = (g * &self.nodes[a.0].value)
                    .sum_axis(Axis(0))
                    .insert_axis(Axis(0));
                self.accumulate(a, ga);
                self.accumulate(row, grow);
            }
            Op::MatMul(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.dot(&self.nodes[b.0].value.t());
                let gb = self.nodes[a.0].value.t().dot(g);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::MatMulTransB(a, b) => {
                let (a, b) = (*a, *b);
                let ga = g.dot(&self.nodes[b.0].value);
                let gb = g.t().dot(&self.nodes[a.0].value);
                self.accumulate(a, ga);
                self.accumulate(b, gb);
            }
            Op::Transpose(a) => {
                let a = *a;
                self.accumulate(a, g.t().to_owned());
            }
            Op::Scale(a, c) => {
                let (a, c) = (*a, *c);
                self.accumulate(a, g * c);
            }
            Op::AddConst(a) => {
                let a = *a;
                self.accumulate(a, g.clone());
            }
            Op::Relu(a) => {
                let a = *a;
                let mask = self.nodes[a.0].value.mapv(|x| if x > 0.0 { 1.0 } else { 0.0 });
                self.accumulate(a, g * &mask);
            }
            Op::SoftmaxRows(a) => {
                let a = *a;
                let y = &self.nodes[node].value;
                let mut gx = g * y;
                for (i, mut row) in gx.rows_mut().into_iter().enumerate() {
                    let dot: f64 = row.sum();
                    let yrow = y.row(i);
                    row.iter_mut()
                        .zip(yrow.iter())
                        .for_each(|(r, &yv)| *r -= dot * yv);
                }
                self.accumulate(a, gx);
            }
            Op::LogSumExpRows(a) => {
                let a = *a;
                let x = &self.nodes[a.0].value;
                let mut gx = Array2::zeros(x.dim());
                for (i, row) in x.rows().into_iter().enumerate() {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    for (j, &v) in row.iter().enumerate() {
                        gx[[i, j]] = g[[i, 0]] * (v - max).exp() / sum;
                    }
                }
                self.accumulate(a, gx);
            }
            Op::SelectPerRow(a, cols) => {
                let a = *a;
                let cols = cols.clone();
                let mut gx = Array2::zeros(self.nodes[a.0].value.dim());
                for (i, &c) in cols.iter().enumerate() {
                    gx[[i, c]] += g[[i, 0]];
                }
                self.accumulate(a, gx);
            }
            Op::RowNormalize(a) => {
                let a = *a;
                let x = &self.nodes[a.0].value;
                let y = &self.nodes[node].value;
                let mut gx = Array2::zeros(x.dim());
                for i in 0..x.nrows() {
                    let norm = x.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let dot: f64 = g.row(i).iter().zip(y.row(i).iter()).map(|(a, b)| a * b).sum();
                    for j in 0..x.ncols() {
                        gx[[i, j]] = (g[[i, j]] - y[[i, j]] * dot) / norm;
                    }
                }
                self.accumulate(a, gx);
            }
            Op::LayerNormRows(a) => {
                let a = *a;
                let x = &self.nodes[a.0].value;
                let y = &self.nodes[node].value;
                let d = x.ncols() as f64;
                let mut gx = Array2::zeros(x.dim());
                for i in 0..x.nrows() {
                    let mean = x.row(i).sum() / d;
                    let var = x.row(i).iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
                    let denom = (var + LAYER_NORM_EPS).sqrt();
                    let gmean: f64 = g.row(i).sum() / d;
                    let gdot: f64 =
                        g.row(i).iter().zip(y.row(i).iter()).map(|(a, b)| a * b).sum::<f64>() / d;
                    for j in 0..x.ncols() {
                        gx[[i, j]] = (g[[i, j]] - gmean - y[[i, j]] * gdot) / denom;
                    }
                }
                self.accumulate(a, gx);
            }
            Op::MeanRows(a) => {
                let a = *a;
                let n = self.nodes[a.0].value.nrows() as f64;
                let shape = self.nodes[a.0].value.dim();
                let mut gx = Array2::zeros(shape);
                for mut row in gx.rows_mut() {
                    row.assign(&(g.row(0).to_owned() / n));
                }
                self.accumulate(a, gx);
            }
            Op::MeanAll(a) => {
                let a = *a;
                let shape = self.nodes[a.0].value.dim();
                let scale = g[[0, 0]] / (shape.0 * shape.1) as f64;
                self.accumulate(a, Array2::from_elem(shape, scale));
            }
            Op::EmbedGather(table, indices) => {
                let table = *table;
                let indices = indices.clone();
                let mut gt = Array2::zeros(self.nodes[table.0].value.dim());
                for (i, &idx) in indices.iter().enumerate() {
                    let mut row = gt.row_mut(idx);
                    row += &g.row(i);
                }
                self.accumulate(table, gt);
            }
            Op::ConcatRows(parts) => {
                let parts = parts.clone();
                let mut at = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.nrows();
                    let slice = g.slice(ndarray::s![at..at + n, ..]).to_owned();
                    self.accumulate(p, slice);
                    at += n;
                }
            }
            Op::Im2Col { src, h, w, k, stride } => {
                let (src, h, w, k, stride) = (*src, *h, *w, *k, *stride);
                let c = self.nodes[src.0].value.nrows();
                let pad = k / 2;
                let out_h = (h + 2 * pad - k) / stride + 1;
                let out_w = (w + 2 * pad - k) / stride + 1;
                let mut gx = Array2::zeros((c, h * w));
                for ch in 0..c {
                    for ky in 0..k {
                        for kx in 0..k {
                            let row = ch * k * k + ky * k + kx;
                            for oy in 0..out_h {
                                for ox in 0..out_w {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    gx[[ch, iy as usize * w + ix as usize]] +=
                                        g[[row, oy * out_w + ox]];
                                }
                            }
                        }
                    }
                }
                self.accumulate(src, gx);
            }
            Op::StopGrad => {}
        }
    }
}

#[cfg(test)]
mod tests;

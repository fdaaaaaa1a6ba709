//! Four-layer strided convnet (3x3 kernels, stride 2, ReLU) implemented as
//! im2col plus matmul, with global average pooling and a unit-norm
//! projection. Feature maps travel as (channels, h*w) matrices.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, TapeBinding, Var};

use super::init::{xavier_uniform, zeros};

const KERNEL: usize = 3;
const STRIDE: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VisionEncoderConfig {
    pub in_channels: usize,
    /// Square input edge in pixels; callers resize images to this.
    pub image_size: usize,
    pub channels: [usize; 4],
    pub output_dim: usize,
}

impl Default for VisionEncoderConfig {
    fn default() -> Self {
        VisionEncoderConfig {
            in_channels: 1,
            image_size: 32,
            channels: [8, 16, 16, 32],
            output_dim: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VisionEncoder {
    cfg: VisionEncoderConfig,
    prefix: String,
}

impl VisionEncoder {
    pub fn new(cfg: VisionEncoderConfig, prefix: &str) -> Self {
        assert!(cfg.image_size >= 16, "input too small for four stride-2 layers");
        VisionEncoder { cfg, prefix: prefix.to_string() }
    }

    pub fn config(&self) -> &VisionEncoderConfig {
        &self.cfg
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{}", self.prefix, suffix)
    }

    pub fn init_params<R: Rng>(&self, rng: &mut R, params: &mut ParamSet) {
        let mut c_in = self.cfg.in_channels;
        for (i, &c_out) in self.cfg.channels.iter().enumerate() {
            params.insert(
                &self.name(&format!("conv{i}.w")),
                xavier_uniform(rng, c_out, c_in * KERNEL * KERNEL),
            );
            params.insert(&self.name(&format!("conv{i}.b")), zeros(1, c_out));
            c_in = c_out;
        }
        params.insert(
            &self.name("proj"),
            xavier_uniform(rng, self.cfg.channels[3], self.cfg.output_dim),
        );
    }

    fn encode_one(&self, tape: &mut Tape, binding: &TapeBinding, image: Var) -> Var {
        let (mut h, mut w) = (self.cfg.image_size, self.cfg.image_size);
        let mut x = image;
        for i in 0..self.cfg.channels.len() {
            let patches = tape.im2col(x, h, w, KERNEL, STRIDE);
            let convolved = tape.matmul(binding.var(&self.name(&format!("conv{i}.w"))), patches);
            // Bias is per channel; flip to (locations, channels) to broadcast.
            let flipped = tape.transpose(convolved);
            let biased = tape.add_row(flipped, binding.var(&self.name(&format!("conv{i}.b"))));
            let active = tape.relu(biased);
            x = tape.transpose(active);
            let pad = KERNEL / 2;
            h = (h + 2 * pad - KERNEL) / STRIDE + 1;
            w = (w + 2 * pad - KERNEL) / STRIDE + 1;
        }
        // Global average pool over the remaining locations.
        let per_location = tape.transpose(x);
        let pooled = tape.mean_rows(per_location);
        tape.matmul(pooled, binding.var(&self.name("proj")))
    }

    /// Encode a batch of images, each given as (in_channels, image_size^2)
    /// with values in [0, 1]. Returns unit-norm rows (B, output_dim).
    pub fn forward(&self, tape: &mut Tape, binding: &TapeBinding, images: &[Array2<f64>]) -> Var {
        assert!(!images.is_empty(), "empty batch");
        let expect = (self.cfg.in_channels, self.cfg.image_size * self.cfg.image_size);
        let rows: Vec<Var> = images
            .iter()
            .map(|img| {
                assert_eq!(img.dim(), expect, "image matrix has wrong shape");
                let leaf = tape.leaf(img.clone());
                self.encode_one(tape, binding, leaf)
            })
            .collect();
        let stacked = tape.concat_rows(rows);
        tape.row_normalize(stacked)
    }

    /// Inference-only embedding.
    pub fn embed_images(&self, params: &ParamSet, images: &[Array2<f64>]) -> Array2<f64> {
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let out = self.forward(&mut tape, &binding, images);
        tape.value(out).clone()
    }
}

#[cfg(test)]
mod tests {
    use rand::distributions::{Distribution, Uniform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn tiny() -> (VisionEncoder, ParamSet) {
        let cfg = VisionEncoderConfig {
            in_channels: 1,
            image_size: 16,
            channels: [4, 4, 8, 8],
            output_dim: 6,
        };
        let enc = VisionEncoder::new(cfg, "img");
        let mut params = ParamSet::new();
        enc.init_params(&mut ChaCha8Rng::seed_from_u64(7), &mut params);
        (enc, params)
    }

    fn random_images(n: usize, size: usize, seed: u64) -> Vec<Array2<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Uniform::new(0.0, 1.0);
        (0..n)
            .map(|_| Array2::from_shape_fn((1, size * size), |_| dist.sample(&mut rng)))
            .collect()
    }

    #[test]
    fn output_rows_are_unit_norm() {
        let (enc, params) = tiny();
        let images = random_images(3, 16, 1);
        let out = enc.embed_images(&params, &images);
        assert_eq!(out.dim(), (3, 6));
        for row in out.rows() {
            let norm: f64 = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn batch_order_does_not_change_rows() {
        let (enc, params) = tiny();
        let images = random_images(2, 16, 2);
        let fwd = enc.embed_images(&params, &images);
        let rev: Vec<Array2<f64>> = images.iter().rev().cloned().collect();
        let bwd = enc.embed_images(&params, &rev);
        assert_eq!(fwd.row(0), bwd.row(1));
        assert_eq!(fwd.row(1), bwd.row(0));
    }

    #[test]
    fn distinct_images_get_distinct_embeddings() {
        let (enc, params) = tiny();
        let images = random_images(2, 16, 3);
        let out = enc.embed_images(&params, &images);
        let dot: f64 = out.row(0).iter().zip(out.row(1).iter()).map(|(a, b)| a * b).sum();
        assert!(dot < 1.0 - 1e-6, "embeddings collapsed: cos = {dot}");
    }

    #[test]
    fn gradients_reach_every_parameter() {
        let (enc, params) = tiny();
        let images = random_images(2, 16, 4);
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let out = enc.forward(&mut tape, &binding, &images);
        let loss = tape.mean_all(out);
        tape.backward(loss);
        for (name, var) in binding.iter() {
            let g = tape
                .grad(var)
                .unwrap_or_else(|| panic!("no gradient for {name}"));
            assert!(g.iter().all(|v| v.is_finite()), "non-finite gradient in {name}");
        }
    }
}

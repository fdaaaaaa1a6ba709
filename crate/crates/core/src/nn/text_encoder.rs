//! Two-block single-head transformer over hashed tokens, mean-pooled and
//! projected onto the unit sphere. Sequences are encoded one at a time and
//! stacked, so no padding or attention masks exist anywhere.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape, TapeBinding, Var};

use super::init::{embedding_init, ones_row, xavier_uniform, zeros};
use super::tokenizer::HashTokenizer;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextEncoderConfig {
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub model_dim: usize,
    pub blocks: usize,
    pub output_dim: usize,
}

impl Default for TextEncoderConfig {
    fn default() -> Self {
        TextEncoderConfig {
            vocab_size: 512,
            max_tokens: 64,
            model_dim: 32,
            blocks: 2,
            output_dim: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TextEncoder {
    cfg: TextEncoderConfig,
    prefix: String,
    tokenizer: HashTokenizer,
}

impl TextEncoder {
    pub fn new(cfg: TextEncoderConfig, prefix: &str) -> Self {
        assert!(cfg.blocks >= 1 && cfg.model_dim >= 1 && cfg.output_dim >= 1);
        let tokenizer = HashTokenizer::new(cfg.vocab_size, cfg.max_tokens);
        TextEncoder { cfg, prefix: prefix.to_string(), tokenizer }
    }

    pub fn config(&self) -> &TextEncoderConfig {
        &self.cfg
    }

    pub fn tokenize(&self, text: &str) -> Vec<usize> {
        self.tokenizer.encode(text)
    }

    fn name(&self, suffix: &str) -> String {
        format!("{}.{}", self.prefix, suffix)
    }

    /// Register all weights under this encoder's prefix.
    pub fn init_params<R: Rng>(&self, rng: &mut R, params: &mut ParamSet) {
        let d = self.cfg.model_dim;
        params.insert(&self.name("tok"), embedding_init(rng, self.cfg.vocab_size, d));
        params.insert(&self.name("pos"), embedding_init(rng, self.cfg.max_tokens, d));
        for b in 0..self.cfg.blocks {
            for ln in ["ln1", "ln2"] {
                params.insert(&self.name(&format!("b{b}.{ln}.g")), ones_row(d));
                params.insert(&self.name(&format!("b{b}.{ln}.b")), zeros(1, d));
            }
            for w in ["wq", "wk", "wv", "wo"] {
                params.insert(&self.name(&format!("b{b}.{w}")), xavier_uniform(rng, d, d));
            }
            params.insert(&self.name(&format!("b{b}.mlp.w1")), xavier_uniform(rng, d, 4 * d));
            params.insert(&self.name(&format!("b{b}.mlp.b1")), zeros(1, 4 * d));
            params.insert(&self.name(&format!("b{b}.mlp.w2")), xavier_uniform(rng, 4 * d, d));
            params.insert(&self.name(&format!("b{b}.mlp.b2")), zeros(1, d));
        }
        params.insert(&self.name("lnf.g"), ones_row(d));
        params.insert(&self.name("lnf.b"), zeros(1, d));
        params.insert(&self.name("proj"), xavier_uniform(rng, d, self.cfg.output_dim));
    }

    fn affine_norm(&self, tape: &mut Tape, binding: &TapeBinding, x: Var, ln: &str) -> Var {
        let normed = tape.layer_norm_rows(x);
        let gained = tape.mul_row(normed, binding.var(&self.name(&format!("{ln}.g"))));
        tape.add_row(gained, binding.var(&self.name(&format!("{ln}.b"))))
    }

    fn encode_one(&self, tape: &mut Tape, binding: &TapeBinding, ids: &[usize]) -> Var {
        assert!(!ids.is_empty(), "empty token sequence");
        assert!(ids.len() <= self.cfg.max_tokens, "sequence exceeds max_tokens");
        let tok = tape.embed_gather(binding.var(&self.name("tok")), ids.to_vec());
        let pos = tape.embed_gather(binding.var(&self.name("pos")), (0..ids.len()).collect());
        let mut x = tape.add(tok, pos);
        let scale = 1.0 / (self.cfg.model_dim as f64).sqrt();
        for b in 0..self.cfg.blocks {
            let h = self.affine_norm(tape, binding, x, &format!("b{b}.ln1"));
            let q = tape.matmul(h, binding.var(&self.name(&format!("b{b}.wq"))));
            let k = tape.matmul(h, binding.var(&self.name(&format!("b{b}.wk"))));
            let v = tape.matmul(h, binding.var(&self.name(&format!("b{b}.wv"))));
            let scores = tape.matmul_trans_b(q, k);
            let scaled = tape.scale(scores, scale);
            let attn = tape.softmax_rows(scaled);
            let ctx = tape.matmul(attn, v);
            let proj = tape.matmul(ctx, binding.var(&self.name(&format!("b{b}.wo"))));
            x = tape.add(x, proj);

            let h2 = self.affine_norm(tape, binding, x, &format!("b{b}.ln2"));
            let m1 = tape.matmul(h2, binding.var(&self.name(&format!("b{b}.mlp.w1"))));
            let m1 = tape.add_row(m1, binding.var(&self.name(&format!("b{b}.mlp.b1"))));
            let act = tape.relu(m1);
            let m2 = tape.matmul(act, binding.var(&self.name(&format!("b{b}.mlp.w2"))));
            let m2 = tape.add_row(m2, binding.var(&self.name(&format!("b{b}.mlp.b2"))));
            x = tape.add(x, m2);
        }
        let fin = self.affine_norm(tape, binding, x, "lnf");
        let pooled = tape.mean_rows(fin);
        tape.matmul(pooled, binding.var(&self.name("proj")))
    }

    /// Encode a batch of token sequences into unit-norm rows, (B, output_dim).
    pub fn forward(&self, tape: &mut Tape, binding: &TapeBinding, batch: &[Vec<usize>]) -> Var {
        assert!(!batch.is_empty(), "empty batch");
        let rows: Vec<Var> = batch.iter().map(|ids| self.encode_one(tape, binding, ids)).collect();
        let stacked = tape.concat_rows(rows);
        tape.row_normalize(stacked)
    }

    /// Inference-only embedding of raw strings.
    pub fn embed_texts(&self, params: &ParamSet, texts: &[String]) -> Array2<f64> {
        let batch: Vec<Vec<usize>> = texts.iter().map(|t| self.tokenize(t)).collect();
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let out = self.forward(&mut tape, &binding, &batch);
        tape.value(out).clone()
    }
}

//! Stage two: train the dual encoder on curated pairs, optionally distilling
//! from a frozen knowledge teacher.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::nn::{xavier_uniform, AdamW, AdamWConfig};
use crate::vlp::loss::{knowledge_distillation_tape, multimodal_contrastive_tape, VlpLossConfig};

use super::model::{VlModel, VlModelConfig};
use super::schedule::lr_schedule;
use super::teacher::TeacherHandle;

/// Name of the learned projection bridging the student text space to a
/// teacher of a different width. Only exists when distillation is active
/// and the widths differ.
pub const KD_BRIDGE_PARAM: &str = "kd.bridge";

/// One curated training example, image already decoded to a matrix.
#[derive(Debug, Clone)]
pub struct VlpPair {
    /// (in_channels, image_size^2), values in [0, 1].
    pub image: Array2<f64>,
    pub caption: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VlpTrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub epochs: u64,
    pub warmup_steps: u64,
    pub base_lr: f64,
    pub tau_multimodal: f64,
    pub tau_distill: f64,
    /// Distillation weight; zero disables the teacher entirely.
    pub alpha: f64,
    pub model: VlModelConfig,
    pub optimizer: AdamWConfig,
}

impl Default for VlpTrainConfig {
    fn default() -> Self {
        VlpTrainConfig {
            seed: 0,
            batch_size: 256,
            epochs: 10,
            warmup_steps: 500,
            base_lr: 1e-5,
            tau_multimodal: 0.07,
            tau_distill: 0.07,
            alpha: 0.3,
            model: VlModelConfig::default(),
            optimizer: AdamWConfig::default(),
        }
    }
}

impl VlpTrainConfig {
    fn loss_config(&self) -> VlpLossConfig {
        VlpLossConfig {
            tau_multimodal: self.tau_multimodal,
            tau_distill: self.tau_distill,
            alpha: self.alpha,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Parameter("batch_size and epochs must be positive".into()));
        }
        if self.tau_multimodal <= 0.0 || self.tau_distill <= 0.0 {
            return Err(Error::Parameter("temperatures must be positive".into()));
        }
        if self.alpha < 0.0 || !self.alpha.is_finite() {
            return Err(Error::Parameter("alpha must be non-negative".into()));
        }
        if self.base_lr <= 0.0 {
            return Err(Error::Parameter("base_lr must be positive".into()));
        }
        self.model.validate()
    }
}

/// Per-step record: (step, lr, multimodal, distillation, total). The
/// distillation column is zero when the teacher is off.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VlpStepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss_multimodal: f64,
    pub loss_distill: f64,
    pub loss_total: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VlpTrainReport {
    pub steps: u64,
    pub final_loss: f64,
    pub history: Vec<VlpStepRecord>,
}

impl VlpTrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,lr,loss_multimodal,loss_distill,loss_total")?;
        for r in &self.history {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step, r.lr, r.loss_multimodal, r.loss_distill, r.loss_total
            )?;
        }
        Ok(())
    }
}

/// Run stage two from random initialization. Pairs are shuffled each epoch;
/// trailing partial batches are dropped so every step sees a full batch.
/// With distillation on, the teacher embeds each distinct caption once up
/// front.
pub fn train_vlp(
    pairs: &[VlpPair],
    teacher: Option<&dyn TeacherHandle>,
    cfg: &VlpTrainConfig,
    out_dir: Option<&Path>,
) -> Result<(VlModel, VlpTrainReport)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = VlModel::init(&cfg.model, &mut rng)?;
    run_vlp(model, pairs, teacher, cfg, out_dir, rng)
}

/// [`train_vlp`] warm-started from an existing model (typically a loaded
/// checkpoint) whose architecture must match `cfg.model`.
pub fn train_vlp_from(
    model: VlModel,
    pairs: &[VlpPair],
    teacher: Option<&dyn TeacherHandle>,
    cfg: &VlpTrainConfig,
    out_dir: Option<&Path>,
) -> Result<(VlModel, VlpTrainReport)> {
    cfg.validate()?;
    if model.config() != cfg.model {
        return Err(Error::Parameter(format!(
            "warm-start model {:?} does not match the configured architecture {:?}",
            model.config(),
            cfg.model
        )));
    }
    let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    run_vlp(model, pairs, teacher, cfg, out_dir, rng)
}

fn run_vlp(
    mut model: VlModel,
    pairs: &[VlpPair],
    teacher: Option<&dyn TeacherHandle>,
    cfg: &VlpTrainConfig,
    out_dir: Option<&Path>,
    mut rng: ChaCha8Rng,
) -> Result<(VlModel, VlpTrainReport)> {
    if pairs.is_empty() {
        return Err(Error::Parameter("no training pairs".into()));
    }
    let distill = cfg.alpha > 0.0;
    if distill && teacher.is_none() {
        return Err(Error::Parameter(
            "alpha is positive but no teacher was supplied".into(),
        ));
    }
    let expect_shape = (cfg.model.vision.in_channels, cfg.model.vision.image_size.pow(2));
    for (i, p) in pairs.iter().enumerate() {
        if p.image.dim() != expect_shape {
            return Err(Error::Parameter(format!(
                "pair {i}: image shape {:?} does not match the encoder {:?}",
                p.image.dim(),
                expect_shape
            )));
        }
    }

    let batch_size = cfg.batch_size.min(pairs.len());
    let steps_per_epoch = (pairs.len() / batch_size).max(1) as u64;
    let total_steps = cfg.epochs * steps_per_epoch;
    if cfg.warmup_steps > total_steps {
        return Err(Error::Parameter(format!(
            "warmup_steps {} exceeds the {} total steps ({} epochs x {} steps)",
            cfg.warmup_steps, total_steps, cfg.epochs, steps_per_epoch
        )));
    }

    // Teacher rows per pair, embedded once: the teacher is frozen, its
    // output cannot change mid-run.
    let mut teacher_rows: Option<Array2<f64>> = None;
    if distill {
        let teacher = teacher.unwrap();
        // A warm-started model may already carry a bridge; keep it when it
        // fits this teacher.
        if model.params.contains(KD_BRIDGE_PARAM) {
            let have = model.params.get(KD_BRIDGE_PARAM).dim();
            let need = (model.joint_dim(), teacher.output_dim());
            if have != need {
                return Err(Error::Parameter(format!(
                    "existing distillation bridge is {have:?}, this teacher needs {need:?}"
                )));
            }
        } else if teacher.output_dim() != model.joint_dim() {
            model.params.insert(
                KD_BRIDGE_PARAM,
                xavier_uniform(&mut rng, model.joint_dim(), teacher.output_dim()),
            );
        }
        let captions: Vec<String> = pairs.iter().map(|p| p.caption.clone()).collect();
        let rows = teacher.embed(&captions)?;
        if rows.dim() != (pairs.len(), teacher.output_dim()) {
            return Err(Error::Invariant(format!(
                "teacher returned {:?}, expected ({}, {})",
                rows.dim(),
                pairs.len(),
                teacher.output_dim()
            )));
        }
        teacher_rows = Some(rows);
    }

    let token_lists: Vec<Vec<usize>> =
        pairs.iter().map(|p| model.text.tokenize(&p.caption)).collect();
    let mut opt = AdamW::new(cfg.optimizer);
    let loss_cfg = cfg.loss_config();
    let mut history = Vec::with_capacity(total_steps as usize);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut step: u64 = 0;

    'epochs: for _epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks_exact(batch_size) {
            let images: Vec<Array2<f64>> =
                chunk.iter().map(|&i| pairs[i].image.clone()).collect();
            let texts: Vec<Vec<usize>> =
                chunk.iter().map(|&i| token_lists[i].clone()).collect();

            let mut tape = Tape::new();
            let binding = model.params.bind(&mut tape);
            let v = model.vision.forward(&mut tape, &binding, &images);
            let t = model.text.forward(&mut tape, &binding, &texts);
            let m_loss = multimodal_contrastive_tape(&mut tape, v, t, loss_cfg.tau_multimodal);

            let (total, kd_value) = if let Some(rows) = &teacher_rows {
                let mut k_batch = Array2::zeros((chunk.len(), rows.ncols()));
                for (bi, &i) in chunk.iter().enumerate() {
                    k_batch.row_mut(bi).assign(&rows.row(i));
                }
                let k = tape.leaf(k_batch);
                let student = if model.params.contains(KD_BRIDGE_PARAM) {
                    let bridged = tape.matmul(t, binding.var(KD_BRIDGE_PARAM));
                    tape.row_normalize(bridged)
                } else {
                    t
                };
                let kd = knowledge_distillation_tape(&mut tape, student, k, loss_cfg.tau_distill);
                let kd_value = tape.value(kd)[[0, 0]];
                let weighted = tape.scale(kd, loss_cfg.alpha);
                (tape.add(m_loss, weighted), kd_value)
            } else {
                (m_loss, 0.0)
            };

            let m_value = tape.value(m_loss)[[0, 0]];
            let total_value = tape.value(total)[[0, 0]];
            if !total_value.is_finite() {
                if let Some(dir) = out_dir {
                    fs::create_dir_all(dir)?;
                    let dump = serde_json::json!({
                        "step": step,
                        "pair_indices": chunk,
                        "captions": chunk.iter().map(|&i| &pairs[i].caption).collect::<Vec<_>>(),
                    });
                    fs::write(dir.join("nan_batch.json"), serde_json::to_string_pretty(&dump)?)?;
                }
                return Err(Error::NonFinite(format!("vlp loss at step {step}")));
            }

            tape.backward(total);
            let lr = lr_schedule(step, total_steps, cfg.warmup_steps, cfg.base_lr);
            opt.step(&mut model.params, &tape, &binding, lr);
            history.push(VlpStepRecord {
                step,
                lr,
                loss_multimodal: m_value,
                loss_distill: kd_value,
                loss_total: total_value,
            });
            step += 1;
            if step >= total_steps {
                break 'epochs;
            }
        }
    }

    let final_loss = history.last().map(|r| r.loss_total).unwrap_or(f64::NAN);
    let report = VlpTrainReport { steps: step, final_loss, history };
    if let Some(dir) = out_dir {
        model.save(dir)?;
        let file = fs::File::create(dir.join("loss_history.csv"))?;
        report.write_csv(BufWriter::new(file))?;
    }
    Ok((model, report))
}

//! Stage one: train the knowledge encoder on attribute pairs.

use std::fs;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{ParamSet, Tape};
use crate::error::{Error, Result};
use crate::nn::{AdamW, AdamWConfig, TextEncoder, TextEncoderConfig};
use crate::ontology::{AttributeOptions, PhenotypeGraph};
use crate::vlp::lr_schedule;

use super::batch::build_knowledge_batch_with;
use super::loss::knowledge_infonce_tape;

pub const KNOWLEDGE_PARAM_PREFIX: &str = "kenc";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KnowledgeTrainConfig {
    pub seed: u64,
    /// Terms per batch; clamped to the graph size.
    pub batch_size: usize,
    pub total_steps: u64,
    pub warmup_steps: u64,
    pub base_lr: f64,
    /// Contrastive temperature.
    pub tau: f64,
    /// Attribute families the sampler may draw from.
    #[serde(default)]
    pub attributes: AttributeOptions,
    pub encoder: TextEncoderConfig,
    pub optimizer: AdamWConfig,
}

impl Default for KnowledgeTrainConfig {
    fn default() -> Self {
        KnowledgeTrainConfig {
            seed: 0,
            batch_size: 256,
            total_steps: 1000,
            warmup_steps: 500,
            base_lr: 1e-5,
            tau: 0.07,
            attributes: AttributeOptions::default(),
            encoder: TextEncoderConfig::default(),
            optimizer: AdamWConfig::default(),
        }
    }
}

impl KnowledgeTrainConfig {
    fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Parameter("batch_size must be positive".into()));
        }
        if self.total_steps == 0 {
            return Err(Error::Parameter("total_steps must be positive".into()));
        }
        if self.warmup_steps > self.total_steps {
            return Err(Error::Parameter(format!(
                "warmup_steps {} exceeds total_steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if self.tau <= 0.0 || self.base_lr <= 0.0 {
            return Err(Error::Parameter("tau and base_lr must be positive".into()));
        }
        Ok(())
    }
}

/// Trained attribute encoder: weights plus the architecture they fit.
pub struct KnowledgeEncoder {
    pub encoder: TextEncoder,
    pub params: ParamSet,
}

impl KnowledgeEncoder {
    pub fn output_dim(&self) -> usize {
        self.encoder.config().output_dim
    }

    /// Unit-norm rows, one per text.
    pub fn embed(&self, texts: &[String]) -> Array2<f64> {
        self.encoder.embed_texts(&self.params, texts)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let file = fs::File::create(dir.join("weights.json"))?;
        self.params.save_json(BufWriter::new(file))?;
        let meta = serde_json::json!({
            "kind": "knowledge_encoder",
            "encoder": self.encoder.config(),
            "checksum": format!("{:016x}", self.params.checksum()),
        });
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value =
            serde_json::from_reader(BufReader::new(fs::File::open(dir.join("meta.json"))?))?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("knowledge_encoder") {
            return Err(Error::Parse(format!(
                "{} does not hold a knowledge encoder checkpoint",
                dir.display()
            )));
        }
        let cfg: TextEncoderConfig = serde_json::from_value(
            meta.get("encoder")
                .cloned()
                .ok_or_else(|| Error::Parse("meta.json missing encoder config".into()))?,
        )?;
        let file = fs::File::open(dir.join("weights.json"))?;
        let params = ParamSet::load_json(BufReader::new(file))?;
        Ok(KnowledgeEncoder { encoder: TextEncoder::new(cfg, KNOWLEDGE_PARAM_PREFIX), params })
    }
}

/// Per-step training record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: u64,
    pub final_loss: f64,
    /// (step, learning rate, loss) per step.
    pub history: Vec<(u64, f64, f64)>,
}

impl TrainReport {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,lr,loss")?;
        for (step, lr, loss) in &self.history {
            writeln!(w, "{step},{lr},{loss}")?;
        }
        Ok(())
    }
}

/// Run stage one. When `out_dir` is given, writes `weights.json`,
/// `meta.json` and `loss_history.csv` there; a non-finite loss dumps the
/// offending batch to `nan_batch.json` before failing.
pub fn train_knowledge_encoder(
    graph: &PhenotypeGraph,
    cfg: &KnowledgeTrainConfig,
    out_dir: Option<&Path>,
) -> Result<(KnowledgeEncoder, TrainReport)> {
    cfg.validate()?;
    if graph.term_count() == 0 {
        return Err(Error::Parameter("cannot train on an empty graph".into()));
    }
    let batch_size = cfg.batch_size.min(graph.term_count());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let encoder = TextEncoder::new(cfg.encoder, KNOWLEDGE_PARAM_PREFIX);
    let mut params = ParamSet::new();
    encoder.init_params(&mut rng, &mut params);
    let mut opt = AdamW::new(cfg.optimizer);
    let mut history = Vec::with_capacity(cfg.total_steps as usize);

    for step in 0..cfg.total_steps {
        let batch = build_knowledge_batch_with(graph, batch_size, cfg.attributes, &mut rng)?;
        let token_lists: Vec<Vec<usize>> =
            batch.texts.iter().map(|t| encoder.tokenize(t)).collect();
        let mut tape = Tape::new();
        let binding = params.bind(&mut tape);
        let z = encoder.forward(&mut tape, &binding, &token_lists);
        let loss = knowledge_infonce_tape(&mut tape, z, cfg.tau);
        let loss_val = tape.value(loss)[[0, 0]];
        if !loss_val.is_finite() {
            if let Some(dir) = out_dir {
                fs::create_dir_all(dir)?;
                let dump = serde_json::json!({
                    "step": step,
                    "term_ids": batch.term_ids,
                    "texts": batch.texts,
                });
                fs::write(dir.join("nan_batch.json"), serde_json::to_string_pretty(&dump)?)?;
            }
            return Err(Error::NonFinite(format!("knowledge loss at step {step}")));
        }
        tape.backward(loss);
        let lr = lr_schedule(step, cfg.total_steps, cfg.warmup_steps, cfg.base_lr);
        opt.step(&mut params, &tape, &binding, lr);
        history.push((step, lr, loss_val));
    }

    let final_loss = history.last().map(|(_, _, l)| *l).unwrap_or(f64::NAN);
    let report = TrainReport { steps: cfg.total_steps, final_loss, history };
    let trained = KnowledgeEncoder { encoder, params };
    if let Some(dir) = out_dir {
        trained.save(dir)?;
        let file = fs::File::create(dir.join("loss_history.csv"))?;
        report.write_csv(BufWriter::new(file))?;
    }
    Ok((trained, report))
}

#[cfg(test)]
mod tests {
    use tempfile::tempdir;

    use super::*;
    use crate::ontology::{attributes_of, parse_obo};

    fn toy() -> PhenotypeGraph {
        let src = include_str!("../../tests/fixtures/toy.obo");
        parse_obo(src.as_bytes()).unwrap().0
    }

    fn tiny_cfg(steps: u64) -> KnowledgeTrainConfig {
        KnowledgeTrainConfig {
            seed: 3,
            batch_size: 7,
            total_steps: steps,
            warmup_steps: steps / 10,
            base_lr: 3e-3,
            tau: 0.07,
            attributes: AttributeOptions::default(),
            encoder: TextEncoderConfig {
                vocab_size: 128,
                max_tokens: 16,
                model_dim: 16,
                blocks: 2,
                output_dim: 8,
            },
            optimizer: AdamWConfig { weight_decay: 0.001, ..AdamWConfig::default() },
        }
    }

    #[test]
    fn untrained_loss_sits_near_uniform_value() {
        // At unit temperature a fresh encoder embeds every sentence almost
        // identically, so the loss starts near ln(2B - 1).
        let graph = toy();
        let cfg = KnowledgeTrainConfig { tau: 1.0, total_steps: 1, ..tiny_cfg(1) };
        let (_, report) = train_knowledge_encoder(&graph, &cfg, None).unwrap();
        let expect = (2.0 * 7.0 - 1.0_f64).ln();
        let got = report.history[0].2;
        assert!(
            (got - expect).abs() / expect < 0.10,
            "initial loss {got}, uniform value {expect}"
        );
    }

    #[test]
    fn training_reduces_loss_and_separates_terms() {
        let graph = toy();
        let (model, report) = train_knowledge_encoder(&graph, &tiny_cfg(220), None).unwrap();
        let early: f64 =
            report.history[..20].iter().map(|(_, _, l)| l).sum::<f64>() / 20.0;
        let late: f64 =
            report.history[report.history.len() - 20..].iter().map(|(_, _, l)| l).sum::<f64>()
                / 20.0;
        assert!(late < early, "loss did not decrease: {early} -> {late}");

        // Two attributes of one term should now be closer than attributes of
        // different terms, on average.
        let ids: Vec<String> = graph.terms().map(|t| t.term_id.clone()).collect();
        let mut intra = Vec::new();
        let mut per_term_first = Vec::new();
        for id in &ids {
            let attrs = attributes_of(&graph, id).unwrap();
            let texts: Vec<String> = attrs.iter().take(2).map(|a| a.text.clone()).collect();
            assert!(texts.len() == 2, "toy terms all have at least two attributes");
            let z = model.embed(&texts);
            intra.push(z.row(0).dot(&z.row(1)));
            per_term_first.push(z.row(0).to_owned());
        }
        let mut inter = Vec::new();
        for i in 0..per_term_first.len() {
            for j in i + 1..per_term_first.len() {
                inter.push(per_term_first[i].dot(&per_term_first[j]));
            }
        }
        let intra_mean: f64 = intra.iter().sum::<f64>() / intra.len() as f64;
        let inter_mean: f64 = inter.iter().sum::<f64>() / inter.len() as f64;
        assert!(
            intra_mean > inter_mean + 0.15,
            "no separation: intra {intra_mean:.3}, inter {inter_mean:.3}"
        );
    }

    #[test]
    fn checkpoint_round_trip_preserves_embeddings_exactly() {
        let graph = toy();
        let dir = tempdir().unwrap();
        let (model, _) = train_knowledge_encoder(&graph, &tiny_cfg(10), Some(dir.path())).unwrap();
        assert!(dir.path().join("weights.json").is_file());
        assert!(dir.path().join("meta.json").is_file());
        assert!(dir.path().join("loss_history.csv").is_file());

        let reloaded = KnowledgeEncoder::load(dir.path()).unwrap();
        assert_eq!(model.params.checksum(), reloaded.params.checksum());
        let texts = vec!["Spider fingers".to_string(), "Tapered finger".to_string()];
        assert_eq!(model.embed(&texts), reloaded.embed(&texts));
    }

    #[test]
    fn same_seed_reproduces_training_bit_for_bit() {
        let graph = toy();
        let (a, ra) = train_knowledge_encoder(&graph, &tiny_cfg(12), None).unwrap();
        let (b, rb) = train_knowledge_encoder(&graph, &tiny_cfg(12), None).unwrap();
        assert_eq!(a.params.checksum(), b.params.checksum());
        assert_eq!(ra.history, rb.history);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let graph = toy();
        let bad = KnowledgeTrainConfig { warmup_steps: 50, total_steps: 10, ..tiny_cfg(10) };
        assert!(train_knowledge_encoder(&graph, &bad, None).is_err());
        let bad = KnowledgeTrainConfig { tau: 0.0, ..tiny_cfg(10) };
        assert!(train_knowledge_encoder(&graph, &bad, None).is_err());
    }
}

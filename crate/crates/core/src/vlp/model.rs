//! The dual encoder trained in stage two.

use std::fs;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
use crate::error::{Error, Result};
use crate::nn::{TextEncoder, TextEncoderConfig, VisionEncoder, VisionEncoderConfig};

pub const VISION_PARAM_PREFIX: &str = "img";
pub const TEXT_PARAM_PREFIX: &str = "txt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VlModelConfig {
    pub vision: VisionEncoderConfig,
    pub text: TextEncoderConfig,
}

impl Default for VlModelConfig {
    fn default() -> Self {
        VlModelConfig {
            vision: VisionEncoderConfig::default(),
            text: TextEncoderConfig::default(),
        }
    }
}

impl VlModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vision.output_dim != self.text.output_dim {
            return Err(Error::Parameter(format!(
                "vision and text encoders must share a joint dimension ({} vs {})",
                self.vision.output_dim, self.text.output_dim
            )));
        }
        Ok(())
    }
}

/// Vision and text towers sharing one parameter set (under distinct
/// prefixes), embedding into a common unit sphere.
pub struct VlModel {
    pub vision: VisionEncoder,
    pub text: TextEncoder,
    pub params: ParamSet,
}

impl VlModel {
    pub fn init<R: Rng>(cfg: &VlModelConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let vision = VisionEncoder::new(cfg.vision, VISION_PARAM_PREFIX);
        let text = TextEncoder::new(cfg.text, TEXT_PARAM_PREFIX);
        let mut params = ParamSet::new();
        vision.init_params(rng, &mut params);
        text.init_params(rng, &mut params);
        Ok(VlModel { vision, text, params })
    }

    pub fn config(&self) -> VlModelConfig {
        VlModelConfig { vision: *self.vision.config(), text: *self.text.config() }
    }

    pub fn joint_dim(&self) -> usize {
        self.text.config().output_dim
    }

    /// Unit-norm rows, one per image matrix (in_channels, image_size^2).
    pub fn embed_images(&self, images: &[Array2<f64>]) -> Array2<f64> {
        self.vision.embed_images(&self.params, images)
    }

    /// Unit-norm rows, one per text.
    pub fn embed_texts(&self, texts: &[String]) -> Array2<f64> {
        self.text.embed_texts(&self.params, texts)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let file = fs::File::create(dir.join("weights.json"))?;
        self.params.save_json(BufWriter::new(file))?;
        let meta = serde_json::json!({
            "kind": "vl_model",
            "config": self.config(),
            "checksum": format!("{:016x}", self.params.checksum()),
        });
        fs::write(dir.join("meta.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta: serde_json::Value =
            serde_json::from_reader(BufReader::new(fs::File::open(dir.join("meta.json"))?))?;
        if meta.get("kind").and_then(|k| k.as_str()) != Some("vl_model") {
            return Err(Error::Parse(format!(
                "{} does not hold a dual-encoder checkpoint",
                dir.display()
            )));
        }
        let cfg: VlModelConfig = serde_json::from_value(
            meta.get("config")
                .cloned()
                .ok_or_else(|| Error::Parse("meta.json missing model config".into()))?,
        )?;
        cfg.validate()?;
        let file = fs::File::open(dir.join("weights.json"))?;
        let params = ParamSet::load_json(BufReader::new(file))?;
        Ok(VlModel {
            vision: VisionEncoder::new(cfg.vision, VISION_PARAM_PREFIX),
            text: TextEncoder::new(cfg.text, TEXT_PARAM_PREFIX),
            params,
        })
    }
}

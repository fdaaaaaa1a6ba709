//! Zero-shot classification and phenotype retrieval built on prompt
//! ensembles. The metric cores work on plain embedding matrices so they
//! can be checked against brute-force oracles; thin wrappers run the
//! encoders.

use std::collections::BTreeSet;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::vlp::VlModel;

use super::metrics::{recall_report, RetrievalReport};
use super::prompts::PromptTemplateSet;

fn unit(v: ArrayView1<f64>) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if !norm.is_finite() || norm < 1e-12 {
        return Err(Error::Parameter("cannot normalize a zero or non-finite vector".into()));
    }
    Ok(&v / norm)
}

fn unit_rows(m: &Array2<f64>) -> Result<Array2<f64>> {
    let mut out = m.clone();
    for mut row in out.rows_mut() {
        let norm = row.dot(&row).sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::Parameter("cannot normalize a zero or non-finite row".into()));
        }
        row /= norm;
    }
    Ok(out)
}

/// Ensemble a class name over the templates: embed every instantiated
/// prompt, average, re-normalize.
pub fn class_embedding(
    model: &VlModel,
    class_name: &str,
    templates: &PromptTemplateSet,
) -> Result<Array1<f64>> {
    let prompts = templates.instantiate(class_name);
    let embeds = model.embed_texts(&prompts);
    let mean = embeds.mean_axis(ndarray::Axis(0)).expect("non-empty template set");
    unit(mean.view())
}

/// One ensembled row per class, in input order.
pub fn class_embeddings(
    model: &VlModel,
    class_names: &[String],
    templates: &PromptTemplateSet,
) -> Result<Array2<f64>> {
    if class_names.is_empty() {
        return Err(Error::Parameter("no classes".into()));
    }
    let mut out = Array2::zeros((class_names.len(), model.joint_dim()));
    for (i, name) in class_names.iter().enumerate() {
        out.row_mut(i).assign(&class_embedding(model, name, templates)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroShotReport {
    pub predictions: Vec<usize>,
    pub accuracy: f64,
    pub n_classes: usize,
}

/// Argmax of cosine similarity against the class matrix; ties break to the
/// lowest class index. A prediction is correct when it lies in the image's
/// truth set.
pub fn zero_shot_from_embeddings(
    image_embeds: &Array2<f64>,
    class_embeds: &Array2<f64>,
    truth: &[BTreeSet<usize>],
) -> Result<ZeroShotReport> {
    let n_classes = class_embeds.nrows();
    if n_classes == 0 {
        return Err(Error::Parameter("no classes".into()));
    }
    if image_embeds.ncols() != class_embeds.ncols() {
        return Err(Error::Parameter(format!(
            "embedding widths differ: {} vs {}",
            image_embeds.ncols(),
            class_embeds.ncols()
        )));
    }
    if truth.len() != image_embeds.nrows() {
        return Err(Error::Parameter(format!(
            "{} truth sets for {} images",
            truth.len(),
            image_embeds.nrows()
        )));
    }
    for t in truth {
        if let Some(&c) = t.iter().next_back() {
            if c >= n_classes {
                return Err(Error::Parameter(format!("truth class {c} of {n_classes}")));
            }
        }
    }
    // Cosine: normalize both sides so callers may pass rescaled embeddings.
    let v = unit_rows(image_embeds)?;
    let c = unit_rows(class_embeds)?;
    let s = v.dot(&c.t());
    let mut predictions = Vec::with_capacity(v.nrows());
    let mut correct = 0usize;
    for (i, t) in truth.iter().enumerate() {
        let mut best = 0usize;
        for j in 1..n_classes {
            if s[[i, j]] > s[[i, best]] {
                best = j;
            }
        }
        if t.contains(&best) {
            correct += 1;
        }
        predictions.push(best);
    }
    let accuracy =
        if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 };
    Ok(ZeroShotReport { predictions, accuracy, n_classes })
}

/// End-to-end zero-shot classification: encode images, ensemble classes,
/// classify.
pub fn zero_shot_classify(
    model: &VlModel,
    images: &[Array2<f64>],
    truth: &[BTreeSet<usize>],
    class_names: &[String],
    templates: &PromptTemplateSet,
) -> Result<ZeroShotReport> {
    let image_embeds = model.embed_images(images);
    let class_embeds = class_embeddings(model, class_names, templates)?;
    zero_shot_from_embeddings(&image_embeds, &class_embeds, truth)
}

/// Image-to-phenotype and phenotype-to-image retrieval over embedding
/// matrices. I2P queries are images against the phenotype gallery; P2I
/// queries are phenotypes with at least one linked image against the image
/// gallery (unlinked phenotypes are excluded and counted).
pub fn phenotype_retrieval_from_embeddings(
    image_embeds: &Array2<f64>,
    class_embeds: &Array2<f64>,
    image_phenotypes: &[BTreeSet<usize>],
    k_values: &[usize],
) -> Result<(RetrievalReport, RetrievalReport)> {
    let s = image_embeds.dot(&class_embeds.t());
    let i2p = recall_report("i2p", &s, image_phenotypes, k_values, 0)?;

    let n_phenotypes = class_embeds.nrows();
    let mut linked: Vec<(usize, BTreeSet<usize>)> = Vec::new();
    let mut excluded = 0usize;
    for p in 0..n_phenotypes {
        let images: BTreeSet<usize> = image_phenotypes
            .iter()
            .enumerate()
            .filter(|(_, t)| t.contains(&p))
            .map(|(i, _)| i)
            .collect();
        if images.is_empty() {
            excluded += 1;
        } else {
            linked.push((p, images));
        }
    }
    if linked.is_empty() {
        return Err(Error::Parameter("no phenotype is linked to any image".into()));
    }
    let st = s.t();
    let mut sq = Array2::zeros((linked.len(), image_embeds.nrows()));
    let mut truth = Vec::with_capacity(linked.len());
    for (row, (p, images)) in linked.iter().enumerate() {
        sq.row_mut(row).assign(&st.row(*p));
        truth.push(images.clone());
    }
    let p2i = recall_report("p2i", &sq, &truth, k_values, excluded)?;
    Ok((i2p, p2i))
}

/// End-to-end phenotype retrieval: encode images, ensemble the phenotype
/// names, run both directions.
pub fn phenotype_retrieval(
    model: &VlModel,
    images: &[Array2<f64>],
    image_phenotypes: &[BTreeSet<usize>],
    phenotype_names: &[String],
    templates: &PromptTemplateSet,
    k_values: &[usize],
) -> Result<(RetrievalReport, RetrievalReport)> {
    let image_embeds = model.embed_images(images);
    let class_embeds = class_embeddings(model, phenotype_names, templates)?;
    phenotype_retrieval_from_embeddings(&image_embeds, &class_embeds, image_phenotypes, k_values)
}

#[cfg(test)]
mod tests {
    use rand::distributions::{Distribution, Uniform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::nn::{TextEncoderConfig, VisionEncoderConfig};
    use crate::vlp::VlModelConfig;

    fn tiny_model() -> VlModel {
        let cfg = VlModelConfig {
            vision: VisionEncoderConfig {
                in_channels: 1,
                image_size: 16,
                channels: [2, 4, 4, 4],
                output_dim: 8,
            },
            text: TextEncoderConfig {
                vocab_size: 64,
                max_tokens: 8,
                model_dim: 8,
                blocks: 1,
                output_dim: 8,
            },
        };
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        VlModel::init(&cfg, &mut rng).unwrap()
    }

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn single_template_ensemble_is_the_prompt_embedding() {
        let model = tiny_model();
        let set = PromptTemplateSet::new(vec!["A case of [CLASS_NAME].".into()]).unwrap();
        let ce = class_embedding(&model, "melanoma", &set).unwrap();
        let direct = model.embed_texts(&["A case of melanoma.".to_string()]);
        for j in 0..ce.len() {
            assert!((ce[j] - direct[[0, j]]).abs() < 1e-12);
        }
    }

    #[test]
    fn ensemble_is_invariant_to_template_order() {
        let model = tiny_model();
        let fwd = PromptTemplateSet::default();
        let mut rev_templates: Vec<String> = fwd.templates().to_vec();
        rev_templates.reverse();
        let rev = PromptTemplateSet::new(rev_templates).unwrap();
        let a = class_embedding(&model, "arachnodactyly", &fwd).unwrap();
        let b = class_embedding(&model, "arachnodactyly", &rev).unwrap();
        for j in 0..a.len() {
            assert!((a[j] - b[j]).abs() < 1e-12);
        }
        let norm = a.dot(&a).sqrt();
        assert!((norm - 1.0).abs() < 1e-12, "re-normalized to unit length");
    }

    #[test]
    fn planted_image_embeddings_classify_perfectly() {
        let model = tiny_model();
        let classes = names(&["alpha", "beta", "gamma", "delta"]);
        let c = class_embeddings(&model, &classes, &PromptTemplateSet::default()).unwrap();
        // Image i IS class (i % 4)'s embedding.
        let mut v = Array2::zeros((8, c.ncols()));
        let mut truth = Vec::new();
        for i in 0..8 {
            v.row_mut(i).assign(&c.row(i % 4));
            truth.push(BTreeSet::from([i % 4]));
        }
        let got = zero_shot_from_embeddings(&v, &c, &truth).unwrap();
        assert_eq!(got.accuracy, 1.0);
        assert_eq!(got.predictions, vec![0, 1, 2, 3, 0, 1, 2, 3]);
    }

    #[test]
    fn classification_invariant_to_positive_rescaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dist = Uniform::new(-1.0, 1.0);
        let v = Array2::from_shape_fn((6, 5), |_| dist.sample(&mut rng));
        let c = Array2::from_shape_fn((3, 5), |_| dist.sample(&mut rng));
        let truth: Vec<BTreeSet<usize>> = (0..6).map(|i| BTreeSet::from([i % 3])).collect();
        let base = zero_shot_from_embeddings(&v, &c, &truth).unwrap();
        let scaled = zero_shot_from_embeddings(&(&v * 37.5), &c, &truth).unwrap();
        assert_eq!(base.predictions, scaled.predictions);
        assert_eq!(base.accuracy, scaled.accuracy);
    }

    #[test]
    fn one_class_is_trivially_perfect_and_ties_pick_lowest() {
        let v = Array2::from_elem((3, 4), 0.5);
        let c1 = Array2::from_elem((1, 4), 0.5);
        let truth: Vec<BTreeSet<usize>> = (0..3).map(|_| BTreeSet::from([0])).collect();
        let got = zero_shot_from_embeddings(&v, &c1, &truth).unwrap();
        assert_eq!(got.accuracy, 1.0);
        // Identical class rows tie; the lowest index wins.
        let c2 = ndarray::concatenate![ndarray::Axis(0), c1, c1];
        let got = zero_shot_from_embeddings(&v, &c2, &truth).unwrap();
        assert_eq!(got.predictions, vec![0, 0, 0]);
    }

    #[test]
    fn model_level_zero_shot_runs_end_to_end() {
        let model = tiny_model();
        let images: Vec<Array2<f64>> =
            (0..4).map(|i| Array2::from_elem((1, 256), (i + 1) as f64 / 5.0)).collect();
        let truth: Vec<BTreeSet<usize>> = (0..4).map(|i| BTreeSet::from([i % 2])).collect();
        let got = zero_shot_classify(
            &model,
            &images,
            &truth,
            &names(&["first", "second"]),
            &PromptTemplateSet::default(),
        )
        .unwrap();
        assert_eq!(got.predictions.len(), 4);
        assert!((0.0..=1.0).contains(&got.accuracy));
        assert_eq!(got.n_classes, 2);
    }

    #[test]
    fn planted_phenotype_retrieval_is_perfect_and_counts_unlinked() {
        let model = tiny_model();
        let classes = names(&["one", "two", "three", "four", "orphan"]);
        let c = class_embeddings(&model, &classes, &PromptTemplateSet::default()).unwrap();
        let mut v = Array2::zeros((4, c.ncols()));
        let mut truth = Vec::new();
        for i in 0..4 {
            v.row_mut(i).assign(&c.row(i));
            truth.push(BTreeSet::from([i]));
        }
        let (i2p, p2i) =
            phenotype_retrieval_from_embeddings(&v, &c, &truth, &[1, 2]).unwrap();
        assert_eq!(i2p.metrics["R@1"], 1.0);
        assert_eq!(p2i.metrics["R@1"], 1.0);
        assert_eq!(i2p.n_queries, 4);
        assert_eq!(p2i.n_queries, 4, "the orphan phenotype is not a P2I query");
        assert_eq!(p2i.excluded_queries, 1);
        assert_eq!(i2p.excluded_queries, 0);

        // Brute-force check of I2P on a noisy variant.
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let dist = Uniform::new(-0.5, 0.5);
        let noisy = &v + &Array2::from_shape_fn(v.dim(), |_| dist.sample(&mut rng));
        let s = noisy.dot(&c.t());
        let (i2p, _) =
            phenotype_retrieval_from_embeddings(&noisy, &c, &truth, &[2]).unwrap();
        let mut hits = 0;
        for i in 0..4 {
            let mut order: Vec<usize> = (0..5).collect();
            order.sort_by(|&a, &b| s[[i, b]].partial_cmp(&s[[i, a]]).unwrap().then(a.cmp(&b)));
            if order[..2].contains(&i) {
                hits += 1;
            }
        }
        assert_eq!(i2p.metrics["R@2"], hits as f64 / 4.0);
    }

    #[test]
    fn single_pair_phenotype_retrieval_is_trivially_perfect() {
        let v = Array2::from_elem((1, 3), 0.6);
        let c = Array2::from_elem((1, 3), 0.1);
        let truth = vec![BTreeSet::from([0])];
        let (i2p, p2i) = phenotype_retrieval_from_embeddings(&v, &c, &truth, &[1]).unwrap();
        assert_eq!(i2p.metrics["R@1"], 1.0);
        assert_eq!(p2i.metrics["R@1"], 1.0);
    }
}

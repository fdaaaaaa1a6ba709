//! Stage-two objectives: bidirectional image-text InfoNCE plus knowledge
//! distillation toward a frozen teacher.
//!
//! Both losses share one form. Given score matrix S = A B^T / tau over B
//! row-aligned pairs, the loss is the mean over rows of (logsumexp of the
//! row minus its diagonal entry), computed in both directions and summed
//! with no halving. A batch of one is exactly zero; identical rows give
//! exactly 2 ln B.

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::knowledge::validate_unit_rows;

/// Bidirectional InfoNCE between two row-aligned unit-row matrices.
fn bidirectional_infonce_tape(tape: &mut Tape, a: Var, b: Var, tau: f64) -> Var {
    assert!(tau > 0.0, "temperature must be positive");
    let n = tape.value(a).nrows();
    assert_eq!(n, tape.value(b).nrows(), "batch sizes differ");
    assert!(n >= 1, "empty batch");
    let scores = tape.matmul_trans_b(a, b);
    let scaled = tape.scale(scores, 1.0 / tau);
    let diag: Vec<usize> = (0..n).collect();

    let lse_fwd = tape.logsumexp_rows(scaled);
    let pos_fwd = tape.select_per_row(scaled, diag.clone());
    let fwd = tape.sub(lse_fwd, pos_fwd);
    let fwd_mean = tape.mean_all(fwd);

    let flipped = tape.transpose(scaled);
    let lse_bwd = tape.logsumexp_rows(flipped);
    let pos_bwd = tape.select_per_row(flipped, diag);
    let bwd = tape.sub(lse_bwd, pos_bwd);
    let bwd_mean = tape.mean_all(bwd);

    tape.add(fwd_mean, bwd_mean)
}

/// Image-to-text and text-to-image contrastive loss over aligned rows.
pub fn multimodal_contrastive_tape(tape: &mut Tape, v: Var, t: Var, tau: f64) -> Var {
    bidirectional_infonce_tape(tape, v, t, tau)
}

/// Same form between student text rows and a frozen teacher: the teacher
/// matrix is wrapped in a stop-gradient, so backward never touches it.
pub fn knowledge_distillation_tape(tape: &mut Tape, t_student: Var, k_teacher: Var, tau: f64) -> Var {
    let frozen = tape.stop_grad(k_teacher);
    bidirectional_infonce_tape(tape, t_student, frozen, tau)
}

fn validate_pairing(a: &Array2<f64>, b: &Array2<f64>, tau: f64, what: &str) -> Result<()> {
    if tau <= 0.0 || !tau.is_finite() {
        return Err(Error::Parameter(format!("{what}: temperature {tau} must be positive")));
    }
    if a.nrows() == 0 {
        return Err(Error::Parameter(format!("{what}: empty batch")));
    }
    if a.nrows() != b.nrows() {
        return Err(Error::Parameter(format!(
            "{what}: row counts differ ({} vs {})",
            a.nrows(),
            b.nrows()
        )));
    }
    if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("{what}: non-finite embedding")));
    }
    validate_unit_rows(a, what)?;
    validate_unit_rows(b, what)?;
    Ok(())
}

/// Value-only multimodal loss with validation. Row i of `v` pairs with row i
/// of `t`; the two sides may have different widths only if equal, since the
/// score matrix needs a shared embedding dimension.
pub fn multimodal_contrastive_loss(v: &Array2<f64>, t: &Array2<f64>, tau: f64) -> Result<f64> {
    if v.ncols() != t.ncols() {
        return Err(Error::Parameter(format!(
            "embedding dims differ ({} vs {})",
            v.ncols(),
            t.ncols()
        )));
    }
    validate_pairing(v, t, tau, "multimodal batch")?;
    let mut tape = Tape::new();
    let vv = tape.leaf(v.clone());
    let tv = tape.leaf(t.clone());
    let loss = multimodal_contrastive_tape(&mut tape, vv, tv, tau);
    Ok(tape.value(loss)[[0, 0]])
}

/// Value-only distillation loss with validation.
pub fn knowledge_distillation_loss(
    t_student: &Array2<f64>,
    k_teacher: &Array2<f64>,
    tau: f64,
) -> Result<f64> {
    if t_student.ncols() != k_teacher.ncols() {
        return Err(Error::Parameter(format!(
            "student dim {} does not match teacher dim {}",
            t_student.ncols(),
            k_teacher.ncols()
        )));
    }
    validate_pairing(t_student, k_teacher, tau, "distillation batch")?;
    let mut tape = Tape::new();
    let tv = tape.leaf(t_student.clone());
    let kv = tape.leaf(k_teacher.clone());
    let loss = knowledge_distillation_tape(&mut tape, tv, kv, tau);
    Ok(tape.value(loss)[[0, 0]])
}

#[derive(Debug, Clone, Copy)]
pub struct VlpLossConfig {
    pub tau_multimodal: f64,
    pub tau_distill: f64,
    /// Weight on the distillation term.
    pub alpha: f64,
}

impl Default for VlpLossConfig {
    fn default() -> Self {
        VlpLossConfig { tau_multimodal: 0.07, tau_distill: 0.07, alpha: 0.3 }
    }
}

/// Combined objective on the tape. With `alpha` zero (or no teacher rows)
/// this returns the multimodal node itself, so the result is bit-for-bit the
/// pure contrastive loss.
pub fn total_vlp_tape(
    tape: &mut Tape,
    v: Var,
    t: Var,
    k_teacher: Option<Var>,
    cfg: &VlpLossConfig,
) -> Var {
    let multimodal = multimodal_contrastive_tape(tape, v, t, cfg.tau_multimodal);
    let Some(k) = k_teacher else {
        return multimodal;
    };
    if cfg.alpha == 0.0 {
        return multimodal;
    }
    let distill = knowledge_distillation_tape(tape, t, k, cfg.tau_distill);
    let weighted = tape.scale(distill, cfg.alpha);
    tape.add(multimodal, weighted)
}

/// Value-only combined objective.
pub fn total_vlp_loss(
    v: &Array2<f64>,
    t: &Array2<f64>,
    k_teacher: Option<&Array2<f64>>,
    cfg: &VlpLossConfig,
) -> Result<f64> {
    if cfg.alpha < 0.0 || !cfg.alpha.is_finite() {
        return Err(Error::Parameter(format!("alpha {} must be non-negative", cfg.alpha)));
    }
    if k_teacher.is_none() && cfg.alpha > 0.0 {
        return Err(Error::Parameter(
            "alpha is positive but no teacher embeddings were given".into(),
        ));
    }
    let m = multimodal_contrastive_loss(v, t, cfg.tau_multimodal)?;
    match k_teacher {
        Some(k) if cfg.alpha > 0.0 => {
            let kd = knowledge_distillation_loss(t, k, cfg.tau_distill)?;
            Ok(m + cfg.alpha * kd)
        }
        _ => Ok(m),
    }
}

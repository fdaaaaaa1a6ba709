//! Linear warmup into cosine decay.

/// Learning rate at `step` of `total_steps`: ramps linearly from zero over
/// `warmup_steps`, then follows half a cosine down to zero at `total_steps`.
/// The two branches agree at the joint (both give `base_lr`).
pub fn lr_schedule(step: u64, total_steps: u64, warmup_steps: u64, base_lr: f64) -> f64 {
    assert!(total_steps > 0, "schedule needs at least one step");
    assert!(warmup_steps <= total_steps, "warmup longer than the run");
    let step = step.min(total_steps);
    if step < warmup_steps {
        return base_lr * step as f64 / warmup_steps as f64;
    }
    if total_steps == warmup_steps {
        return base_lr;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

use super::tensor::Tensor;
use super::DiffError;

/// AdamW hyperparameters. Weight decay is decoupled: it shrinks parameters
/// directly instead of entering the moment estimates.
#[derive(Debug, Clone, Copy)]
pub struct AdamHyper {
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            betas: (0.9, 0.95),
            eps: 1e-8,
            weight_decay: 0.5,
        }
    }
}

/// First/second moment buffers and step counter for one parameter tensor.
#[derive(Debug, Clone)]
pub struct MomentState {
    pub m: Tensor,
    pub v: Tensor,
    pub step: u64,
}

impl MomentState {
    pub fn new(shape: &[usize]) -> Self {
        MomentState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            step: 0,
        }
    }
}

/// One bias-corrected AdamW update of `param` in place.
pub fn adamw_step(
    state: &mut MomentState,
    param: &mut Tensor,
    grad: &Tensor,
    lr: f64,
    hyper: &AdamHyper,
) -> Result<(), DiffError> {
    if param.shape() != grad.shape() || param.shape() != state.m.shape() {
        return Err(DiffError::GradShape {
            param: param.shape().to_vec(),
            grad: grad.shape().to_vec(),
        });
    }
    assert!(lr >= 0.0, "adamw_step: negative learning rate");
    let (b1, b2) = hyper.betas;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let decay = 1.0 - lr * hyper.weight_decay;
    let (m, v) = (state.m.data_mut(), state.v.data_mut());
    for (i, p) in param.data_mut().iter_mut().enumerate() {
        let g = grad.data()[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + hyper.eps);
    }
    Ok(())
}

/// Scale `grads` so their global L2 norm does not exceed `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_grad_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "clip_grad_norm: max_norm must be positive");
    let sq: f64 = grads.iter().map(|g| g.sq_norm()).sum();
    let norm = sq.sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            for v in g.data_mut() {
                *v *= scale;
            }
        }
    }
    norm
}

/// Linear warmup from 0 to `lr_max` over `warmup_steps`, then cosine decay
/// to 0 at `total_steps`.
pub fn cosine_warmup_lr(step: usize, warmup_steps: usize, total_steps: usize, lr_max: f64) -> f64 {
    assert!(warmup_steps < total_steps, "warmup must end before the schedule");
    assert!(step <= total_steps, "step {step} past total {total_steps}");
    if step < warmup_steps {
        return lr_max * step as f64 / warmup_steps as f64;
    }
    let progress = (step - warmup_steps) as f64 / (total_steps - warmup_steps) as f64;
    lr_max * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

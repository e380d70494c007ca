//! Training objectives: masked prior regression, variance and covariance
//! feature regularization, the gated adversarial style loss, their weighted
//! sum, and the class-distribution KL regularizer used at recognition time.

use crate::diffcore::{DiffError, Tape, Tensor, Var};

/// Loss weighting factors and target scales. Defaults follow the pretraining
/// recipe: angles and keypoints weighted 10, displacement priors 20,
/// activity 0.2; variance 1.0, covariance 0.004, adversarial 2.0; hand
/// keypoint targets scaled by 2 and hand displacement targets by 4.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct LossWeights {
    pub w_angle: f64,
    pub w_kpt: f64,
    pub w_dist: f64,
    pub w_act: f64,
    pub w_var: f64,
    pub w_cov: f64,
    pub w_adv: f64,
    pub psi_hand_kpt: f64,
    pub psi_hand_dist: f64,
    pub kappa: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            w_angle: 10.0,
            w_kpt: 10.0,
            w_dist: 20.0,
            w_act: 0.2,
            w_var: 1.0,
            w_cov: 0.004,
            w_adv: 2.0,
            psi_hand_kpt: 2.0,
            psi_hand_dist: 4.0,
            kappa: 0.2,
        }
    }
}

/// Mean smooth-L1 over unmasked elements; exactly 0 when nothing is
/// unmasked. Mask entries are 0/1 with the same extents as the prediction.
pub fn smooth_l1_masked(tape: &mut Tape, pred: Var, target: &Tensor, mask: &Tensor) -> Var {
    assert_eq!(target.shape(), mask.shape(), "target/mask extents");
    let count = mask.data().iter().filter(|&&m| m != 0.0).count();
    if count == 0 {
        return tape.constant(Tensor::scalar(0.0));
    }
    let tgt = tape.constant(target.clone());
    let el = tape.smooth_l1(pred, tgt);
    let m = tape.constant(mask.clone());
    let masked = tape.mul(el, m);
    let total = tape.sum_all(masked);
    tape.scale(total, 1.0 / count as f64)
}

/// One weighted term of the prior regression loss.
pub struct ReconTerm<'a> {
    pub pred: Var,
    pub target: &'a Tensor,
    pub mask: &'a Tensor,
    pub weight: f64,
}

/// Weighted sum of masked smooth-L1 means, one term per prior.
pub fn recon_loss(tape: &mut Tape, terms: &[ReconTerm<'_>]) -> Var {
    let mut acc: Option<Var> = None;
    for term in terms {
        let l = smooth_l1_masked(tape, term.pred, term.target, term.mask);
        let w = tape.scale(l, term.weight);
        acc = Some(match acc {
            Some(a) => tape.add(a, w),
            None => w,
        });
    }
    acc.unwrap_or_else(|| tape.leaf(Tensor::scalar(0.0)))
}

/// Hinge on the per-dimension standard deviation of a batch: sum over
/// dimensions of max(0, 1 - sigma_j), sigma with the N-1 denominator.
pub fn variance_loss(tape: &mut Tape, batch: Var) -> Result<Var, DiffError> {
    let (n, d) = {
        let v = tape.value(batch);
        assert_eq!(v.shape().len(), 2, "variance_loss: rank-2 batch");
        (v.rows(), v.cols())
    };
    if n < 2 {
        return Err(DiffError::Invalid(format!(
            "variance_loss needs at least 2 rows, got {n}"
        )));
    }
    let mean = tape.mean_axis(batch, 0);
    let neg_mean = tape.scale(mean, -1.0);
    let centered = tape.add_row_broadcast(batch, neg_mean);
    let sq = tape.square(centered);
    let ssum = tape.sum_axis(sq, 0);
    let var = tape.scale(ssum, 1.0 / (n as f64 - 1.0));
    let sd = tape.sqrt(var);
    let ones = tape.constant(Tensor::full(&[d], 1.0));
    let gap = tape.sub(ones, sd);
    let hinge = tape.max_const(gap, 0.0);
    Ok(tape.sum_all(hinge))
}

/// Sum of squared off-diagonal entries of the batch covariance matrix
/// (N denominator).
pub fn covariance_loss(tape: &mut Tape, batch: Var) -> Result<Var, DiffError> {
    let (n, d) = {
        let v = tape.value(batch);
        assert_eq!(v.shape().len(), 2, "covariance_loss: rank-2 batch");
        (v.rows(), v.cols())
    };
    if n < 2 {
        return Err(DiffError::Invalid(format!(
            "covariance_loss needs at least 2 rows, got {n}"
        )));
    }
    let mean = tape.mean_axis(batch, 0);
    let neg_mean = tape.scale(mean, -1.0);
    let centered = tape.add_row_broadcast(batch, neg_mean);
    let ct = tape.transpose(centered);
    let cov = tape.matmul(ct, centered);
    let cov = tape.scale(cov, 1.0 / n as f64);
    let sq = tape.square(cov);
    let mut off = vec![1.0; d * d];
    for j in 0..d {
        off[j * d + j] = 0.0;
    }
    let mask = tape.constant(Tensor::from_vec(&[d, d], off));
    let masked = tape.mul(sq, mask);
    Ok(tape.sum_all(masked))
}

/// Gated hinge loss that pushes matched-pair discriminator outputs down to
/// the unmatched expectation and unmatched outputs up to the matched
/// expectation. Active only while the discriminator separates the pools
/// (e_matched > e_unmatched); otherwise exactly 0.
pub fn adversarial_loss(d_matched: f64, d_unmatched: f64, e_matched: f64, e_unmatched: f64) -> f64 {
    if e_matched <= e_unmatched {
        return 0.0;
    }
    let l_pos = (d_matched - e_unmatched).max(0.0);
    let l_neg = (e_matched - d_unmatched).max(0.0);
    l_pos * l_pos + l_neg * l_neg
}

/// Tape form of [`adversarial_loss`] for one matched/unmatched pair of
/// scalar discriminator outputs. The expectations are running constants,
/// not differentiated through.
pub fn adversarial_loss_pair(
    tape: &mut Tape,
    d_matched: Var,
    d_unmatched: Var,
    e_matched: f64,
    e_unmatched: f64,
) -> Var {
    if e_matched <= e_unmatched {
        return tape.leaf(Tensor::scalar(0.0));
    }
    let shape = tape.value(d_matched).shape().to_vec();
    let eu = tape.constant(Tensor::full(&shape, e_unmatched));
    let em = tape.constant(Tensor::full(&shape, e_matched));
    let pos_gap = tape.sub(d_matched, eu);
    let l_pos = tape.max_const(pos_gap, 0.0);
    let neg_gap = tape.sub(em, d_unmatched);
    let l_neg = tape.max_const(neg_gap, 0.0);
    let p2 = tape.square(l_pos);
    let n2 = tape.square(l_neg);
    let s = tape.add(p2, n2);
    tape.sum_all(s)
}

/// recon + w_var * var + w_cov * cov + w_adv * adv
pub fn total_loss(
    tape: &mut Tape,
    recon: Var,
    var: Var,
    cov: Var,
    adv: Var,
    weights: &LossWeights,
) -> Var {
    let v = tape.scale(var, weights.w_var);
    let c = tape.scale(cov, weights.w_cov);
    let a = tape.scale(adv, weights.w_adv);
    let s = tape.add(recon, v);
    let s = tape.add(s, c);
    tape.add(s, a)
}

pub fn total_loss_value(recon: f64, var: f64, cov: f64, adv: f64, weights: &LossWeights) -> f64 {
    recon + weights.w_var * var + weights.w_cov * cov + weights.w_adv * adv
}

/// kappa * phi_c[c] * KL(phi_c || predicted), natural log. Zero-probability
/// entries of phi contribute nothing; a zero predicted probability at a
/// supported class is an error (the caller must smooth first).
pub fn class_distribution_kl(
    predicted: &[f64],
    phi_row: &[f64],
    class: usize,
    kappa: f64,
) -> Result<f64, DiffError> {
    assert_eq!(predicted.len(), phi_row.len(), "distribution extents");
    for (name, dist) in [("predicted", predicted), ("phi row", phi_row)] {
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(DiffError::Invalid(format!("{name} sums to {sum}, not 1")));
        }
    }
    let mut kl = 0.0;
    for (j, (&p, &q)) in phi_row.iter().zip(predicted).enumerate() {
        if p <= 0.0 {
            continue;
        }
        if q <= 0.0 {
            return Err(DiffError::Invalid(format!(
                "predicted probability 0 at supported class {j}"
            )));
        }
        kl += p * (p / q).ln();
    }
    Ok(kappa * phi_row[class] * kl)
}

/// Tape form of [`class_distribution_kl`] against a predicted distribution
/// node (rank-2, one row). phi is a constant.
pub fn class_distribution_kl_tape(
    tape: &mut Tape,
    predicted: Var,
    phi_row: &[f64],
    class: usize,
    kappa: f64,
) -> Var {
    let c = phi_row.len();
    assert_eq!(tape.value(predicted).shape(), &[1, c], "predicted extents");
    let log_pred = tape.log(predicted);
    let phi = tape.constant(Tensor::from_vec(&[1, c], phi_row.to_vec()));
    let cross = tape.mul(phi, log_pred);
    let cross_sum = tape.sum_all(cross);
    let neg_cross = tape.scale(cross_sum, -1.0);
    let entropy: f64 = phi_row
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| p * p.ln())
        .sum();
    let ent = tape.constant(Tensor::scalar(entropy));
    let kl = tape.add(ent, neg_cross);
    tape.scale(kl, kappa * phi_row[class])
}

/// Cross entropy against a label-smoothed one-hot target:
/// q_j = (1 - s) [j == class] + s / C.
pub fn label_smoothed_cross_entropy(
    tape: &mut Tape,
    log_probs: Var,
    class: usize,
    smoothing: f64,
) -> Var {
    let c = tape.value(log_probs).numel();
    let mut q = vec![-smoothing / c as f64; c];
    q[class] -= 1.0 - smoothing;
    let shape = tape.value(log_probs).shape().to_vec();
    let w = tape.constant(Tensor::from_vec(&shape, q));
    let term = tape.mul(w, log_probs);
    tape.sum_all(term)
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::TrainError;
use crate::diffcore::{adamw_step, AdamHyper, MomentState, Tape, Tensor};
use crate::objectives::{class_distribution_kl_tape, label_smoothed_cross_entropy};
use crate::retrieval::ClassDistribution;

/// Linear softmax classifier over frozen video features.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub w: Tensor,
    pub b: Tensor,
    pub classes: usize,
}

impl Classifier {
    pub fn logits(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        let c = self.classes;
        let mut out = self.b.data().to_vec();
        for (j, o) in out.iter_mut().enumerate() {
            for (i, &xi) in x.iter().enumerate() {
                *o += xi * self.w.data()[i * c + j];
            }
        }
        let _ = d;
        out
    }

    pub fn top_k(&self, x: &[f64], k: usize) -> Vec<usize> {
        let logits = self.logits(x);
        let mut order: Vec<usize> = (0..logits.len()).collect();
        order.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
        order.truncate(k);
        order
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FinetuneConfig {
    pub steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub label_smoothing: f64,
    pub kappa: f64,
    pub seed: u64,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            steps: 400,
            lr: 5e-2,
            batch: 32,
            label_smoothing: 0.1,
            kappa: 0.2,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RecognitionReport {
    pub top1: f64,
    pub top5: f64,
    pub final_loss: f64,
}

/// Per-sample recognition loss: label-smoothed cross entropy plus the
/// class-distribution KL regularizer when a distribution is supplied.
pub fn recognition_loss(
    tape: &mut Tape,
    logits: crate::diffcore::Var,
    class: usize,
    smoothing: f64,
    phi: Option<&ClassDistribution>,
    kappa: f64,
) -> crate::diffcore::Var {
    let probs = tape.softmax_t(logits, 1.0);
    let log_probs = tape.log(probs);
    let ce = label_smoothed_cross_entropy(tape, log_probs, class, smoothing);
    match phi {
        Some(dist) if kappa != 0.0 => {
            let kl = class_distribution_kl_tape(tape, probs, &dist.phi[class], class, kappa);
            tape.add(ce, kl)
        }
        _ => ce,
    }
}

/// Train a linear classifier on frozen features and report test accuracy.
pub fn finetune_recognition(
    train: &[(u32, Vec<f64>)],
    test: &[(u32, Vec<f64>)],
    classes: usize,
    phi: Option<&ClassDistribution>,
    cfg: &FinetuneConfig,
) -> Result<(Classifier, RecognitionReport), TrainError> {
    if train.is_empty() {
        return Err(TrainError::Invalid("no training features".into()));
    }
    let d = train[0].1.len();
    if let Some(dist) = phi {
        if dist.classes() != classes {
            return Err(TrainError::Invalid(format!(
                "class distribution has {} rows for {} classes",
                dist.classes(),
                classes
            )));
        }
    }
    let mut w = Tensor::zeros(&[d, classes]);
    let mut b = Tensor::zeros(&[classes]);
    let mut st_w = MomentState::new(&[d, classes]);
    let mut st_b = MomentState::new(&[classes]);
    let hyper = AdamHyper {
        betas: (0.9, 0.95),
        eps: 1e-8,
        weight_decay: 0.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut final_loss = f64::NAN;
    for _step in 0..cfg.steps {
        let mut tape = Tape::new();
        let wv = tape.leaf(w.clone());
        let bv = tape.leaf(b.clone());
        let mut acc = None;
        let batch = cfg.batch.min(train.len());
        for _ in 0..batch {
            let (label, x) = &train[rng.gen_range(0..train.len() as u64) as usize];
            let xv = tape.constant(Tensor::from_vec(&[1, d], x.clone()));
            let logits = tape.matmul(xv, wv);
            let logits = tape.add_row_broadcast(logits, bv);
            let loss = recognition_loss(
                &mut tape,
                logits,
                *label as usize,
                cfg.label_smoothing,
                phi,
                cfg.kappa,
            );
            acc = Some(match acc {
                Some(a) => tape.add(a, loss),
                None => loss,
            });
        }
        let total = acc.unwrap();
        let mean = tape.scale(total, 1.0 / batch as f64);
        final_loss = tape.value(mean).item();
        let grads = tape.backward(mean);
        let gw = grads.get_or_zeros(wv, w.shape());
        let gb = grads.get_or_zeros(bv, b.shape());
        adamw_step(&mut st_w, &mut w, &gw, cfg.lr, &hyper)?;
        adamw_step(&mut st_b, &mut b, &gb, cfg.lr, &hyper)?;
    }
    let clf = Classifier { w, b, classes };
    let mut top1 = 0usize;
    let mut top5 = 0usize;
    for (label, x) in test {
        let top = clf.top_k(x, 5);
        if top.first() == Some(&(*label as usize)) {
            top1 += 1;
        }
        if top.contains(&(*label as usize)) {
            top5 += 1;
        }
    }
    let n = test.len().max(1) as f64;
    Ok((
        clf,
        RecognitionReport {
            top1: top1 as f64 / n,
            top5: top5 as f64 / n,
            final_loss,
        },
    ))
}

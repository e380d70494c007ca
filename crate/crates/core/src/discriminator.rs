//! Style-match discriminator. A two-layer MLP projects the (x100 scaled)
//! style vector to the embedding width, layer norm follows, and the
//! projected style concatenated with the clip embedding feeds a four-layer
//! spectral-normalized MLP ending in a sigmoid. Trained with binary cross
//! entropy to output 1 on matched (same-video) pairs and 0 on unmatched
//! pairs; running expectations of both pools are tracked with an EMA.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::diffcore::{adamw_step, AdamHyper, MomentState, Tape, Tensor, Var};
use crate::model::{ParamStore, Staged};

#[derive(Debug, Error)]
pub enum DiscError {
    #[error("spectral normalization of an all-zero matrix")]
    ZeroMatrix,
    #[error("batch item {item} has {found} same-video mates, expected exactly 1")]
    BadPairing { item: usize, found: usize },
    #[error("batch item {item} has no different-video partner")]
    NoContrast { item: usize },
}

/// Persistent left/right power-iteration vectors for one weight matrix.
#[derive(Debug, Clone)]
pub struct SpectralState {
    u: Vec<f64>,
    v: Vec<f64>,
}

impl SpectralState {
    pub fn new(rows: usize, cols: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u: Vec<f64> = (0..rows).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut v: Vec<f64> = (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        normalize(&mut u);
        normalize(&mut v);
        SpectralState { u, v }
    }

    /// Run `iters` power iterations against `w` ([rows, cols]) and return
    /// the spectral-norm estimate u^T W v.
    pub fn iterate(&mut self, w: &Tensor, iters: usize) -> Result<f64, DiscError> {
        let (r, c) = (w.rows(), w.cols());
        assert_eq!((self.u.len(), self.v.len()), (r, c), "spectral state extents");
        if w.data().iter().all(|&x| x == 0.0) {
            return Err(DiscError::ZeroMatrix);
        }
        for _ in 0..iters {
            // v <- normalize(W^T u)
            for j in 0..c {
                let mut s = 0.0;
                for i in 0..r {
                    s += w.data()[i * c + j] * self.u[i];
                }
                self.v[j] = s;
            }
            normalize(&mut self.v);
            // u <- normalize(W v)
            for i in 0..r {
                let mut s = 0.0;
                for j in 0..c {
                    s += w.data()[i * c + j] * self.v[j];
                }
                self.u[i] = s;
            }
            normalize(&mut self.u);
        }
        let mut sigma = 0.0;
        for i in 0..r {
            let mut s = 0.0;
            for j in 0..c {
                s += w.data()[i * c + j] * self.v[j];
            }
            sigma += self.u[i] * s;
        }
        Ok(sigma.abs())
    }
}

fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 1e-12 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

/// Divide a weight matrix by its power-iterated top singular value.
pub fn spectral_normalize(
    w: &Tensor,
    state: &mut SpectralState,
    iters: usize,
) -> Result<Tensor, DiscError> {
    let sigma = state.iterate(w, iters)?;
    let data = w.data().iter().map(|&x| x / sigma).collect();
    Ok(Tensor::new(w.shape().to_vec(), data).unwrap())
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct DiscConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub style_scale: f64,
}

impl DiscConfig {
    pub fn with_dim(embed_dim: usize) -> Self {
        DiscConfig {
            embed_dim,
            hidden: embed_dim,
            style_scale: 100.0,
        }
    }
}

// Names of the spectral-normalized main-head matrices.
const SPECTRAL_LAYERS: [&str; 4] = ["main.w1", "main.w2", "main.w3", "main.w4"];

pub struct Discriminator {
    pub cfg: DiscConfig,
    pub params: ParamStore,
    spectral: Vec<SpectralState>,
    sigmas: Vec<f64>,
}

impl Discriminator {
    pub fn new(cfg: DiscConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(0.0, 0.05).unwrap();
        let mut normal = |shape: &[usize]| {
            let n: usize = shape.iter().product();
            Tensor::from_vec(shape, (0..n).map(|_| dist.sample(&mut rng)).collect())
        };
        let (d, h) = (cfg.embed_dim, cfg.hidden);
        let mut p = ParamStore::new();
        p.add("proj.w1", normal(&[d, h]));
        p.add("proj.b1", Tensor::zeros(&[h]));
        p.add("proj.w2", normal(&[h, d]));
        p.add("proj.b2", Tensor::zeros(&[d]));
        p.add("proj.ln.g", Tensor::full(&[d], 1.0));
        p.add("proj.ln.b", Tensor::zeros(&[d]));
        p.add("main.w1", normal(&[2 * d, h]));
        p.add("main.b1", Tensor::zeros(&[h]));
        p.add("main.w2", normal(&[h, h]));
        p.add("main.b2", Tensor::zeros(&[h]));
        p.add("main.w3", normal(&[h, h]));
        p.add("main.b3", Tensor::zeros(&[h]));
        p.add("main.w4", normal(&[h, 1]));
        p.add("main.b4", Tensor::zeros(&[1]));
        let spectral = SPECTRAL_LAYERS
            .iter()
            .enumerate()
            .map(|(i, name)| {
                let t = p.get(name);
                SpectralState::new(t.rows(), t.cols(), seed ^ (0x51ac + i as u64))
            })
            .collect();
        let sigmas = vec![1.0; SPECTRAL_LAYERS.len()];
        let mut disc = Discriminator {
            cfg,
            params: p,
            spectral,
            sigmas,
        };
        // settle the estimates so the very first forward is normalized
        disc.power_iterate(5).expect("fresh weights are nonzero");
        disc
    }

    /// Rebuild a discriminator from checkpoint tensors stored under the
    /// "disc." prefix.
    pub fn from_checkpoint(
        cfg: DiscConfig,
        tensors: &[(String, Tensor)],
    ) -> Result<Self, crate::model::ModelError> {
        let mut disc = Discriminator::new(cfg, 0);
        crate::model::restore_into(&mut disc.params, tensors, "disc.")?;
        disc.power_iterate(5).map_err(|e| {
            crate::model::ModelError::BadConfig(format!("restored discriminator: {e}"))
        })?;
        Ok(disc)
    }

    /// Refresh the spectral-norm estimates from the current weights: one
    /// iteration per training step, five or more in tests.
    pub fn power_iterate(&mut self, iters: usize) -> Result<(), DiscError> {
        for (i, name) in SPECTRAL_LAYERS.iter().enumerate() {
            let w = self.params.get(name).clone();
            self.sigmas[i] = self.spectral[i].iterate(&w, iters)?;
        }
        Ok(())
    }

    pub fn sigma(&self, layer: usize) -> f64 {
        self.sigmas[layer]
    }

    /// Forward pass on a tape. Pass `staged = Some(..)` when discriminator
    /// parameters should be trainable leaves (BCE updates); `None` stages
    /// them as fresh constants, which keeps encoder-side losses from
    /// touching discriminator gradients.
    pub fn forward(
        &self,
        tape: &mut Tape,
        staged: Option<&Staged>,
        z_avg: Var,
        z_style: Var,
    ) -> Var {
        let own;
        let staged = match staged {
            Some(s) => s,
            None => {
                own = self.params.stage_const(tape);
                &own
            }
        };
        let p = |t: &mut Tape, name: &str| -> Var {
            let v = staged.get(&self.params, name);
            if let Some(i) = SPECTRAL_LAYERS.iter().position(|&n| n == name) {
                // sigma is a per-step constant; gradients scale by 1/sigma
                t.scale(v, 1.0 / self.sigmas[i])
            } else {
                v
            }
        };
        let scaled = tape.scale(z_style, self.cfg.style_scale);
        let w1 = p(tape, "proj.w1");
        let b1 = staged.get(&self.params, "proj.b1");
        let h = tape.matmul(scaled, w1);
        let h = tape.add_row_broadcast(h, b1);
        let h = tape.gelu(h);
        let w2 = p(tape, "proj.w2");
        let b2 = staged.get(&self.params, "proj.b2");
        let h = tape.matmul(h, w2);
        let h = tape.add_row_broadcast(h, b2);
        let g = staged.get(&self.params, "proj.ln.g");
        let b = staged.get(&self.params, "proj.ln.b");
        let style = tape.layer_norm(h, g, b, 1e-5);

        let mut x = tape.concat(&[z_avg, style], 1);
        for (i, (wn, bn)) in [
            ("main.w1", "main.b1"),
            ("main.w2", "main.b2"),
            ("main.w3", "main.b3"),
            ("main.w4", "main.b4"),
        ]
        .into_iter()
        .enumerate()
        {
            let w = p(tape, wn);
            let b = staged.get(&self.params, bn);
            x = tape.matmul(x, w);
            x = tape.add_row_broadcast(x, b);
            if i < 3 {
                x = tape.gelu(x);
            }
        }
        tape.sigmoid(x)
    }
}

/// Matched and unmatched pair assignments over a batch, by item index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairAssignment {
    /// (item, same-video mate): the item's embedding with the mate's style
    pub matched: Vec<(usize, usize)>,
    /// (item, different-video partner)
    pub unmatched: Vec<(usize, usize)>,
}

/// Pair every batch item with its unique same-video mate and a seeded
/// random different-video partner.
pub fn make_pairs(video_ids: &[u64], seed: u64) -> Result<PairAssignment, DiscError> {
    let n = video_ids.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut matched = Vec::with_capacity(n);
    let mut unmatched = Vec::with_capacity(n);
    for i in 0..n {
        let mates: Vec<usize> = (0..n)
            .filter(|&j| j != i && video_ids[j] == video_ids[i])
            .collect();
        if mates.len() != 1 {
            return Err(DiscError::BadPairing {
                item: i,
                found: mates.len(),
            });
        }
        matched.push((i, mates[0]));
        let others: Vec<usize> = (0..n).filter(|&j| video_ids[j] != video_ids[i]).collect();
        if others.is_empty() {
            return Err(DiscError::NoContrast { item: i });
        }
        unmatched.push((i, others[rng.gen_range(0..others.len() as u64) as usize]));
    }
    Ok(PairAssignment { matched, unmatched })
}

/// Exponential moving averages of the matched and unmatched discriminator
/// output pools.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmaPair {
    pub matched: f64,
    pub unmatched: f64,
    pub momentum: f64,
}

impl EmaPair {
    pub fn new(momentum: f64) -> Self {
        EmaPair {
            matched: 0.5,
            unmatched: 0.5,
            momentum,
        }
    }

    /// E <- (1 - m) E + m x for both pools.
    pub fn update(&mut self, matched_mean: f64, unmatched_mean: f64) {
        let m = self.momentum;
        self.matched = (1.0 - m) * self.matched + m * matched_mean;
        self.unmatched = (1.0 - m) * self.unmatched + m * unmatched_mean;
    }
}

/// Optimizer bundle for the discriminator.
pub struct DiscOptimizer {
    pub hyper: AdamHyper,
    pub states: Vec<MomentState>,
}

impl DiscOptimizer {
    pub fn new(disc: &Discriminator) -> Self {
        DiscOptimizer {
            hyper: AdamHyper {
                betas: (0.5, 0.9),
                eps: 1e-8,
                weight_decay: 1e-3,
            },
            states: (0..disc.params.len())
                .map(|i| MomentState::new(disc.params.tensor(i).shape()))
                .collect(),
        }
    }
}

/// Outcome of one BCE update pass.
pub struct BceReport {
    pub loss: f64,
    pub matched_mean: f64,
    pub unmatched_mean: f64,
}

/// One binary-cross-entropy training step of the discriminator on detached
/// embedding/style pairs: matched pairs are labeled 1, unmatched 0.
/// Gradients flow only into discriminator parameters.
pub fn bce_update(
    disc: &mut Discriminator,
    opt: &mut DiscOptimizer,
    z_avg: &[Vec<f64>],
    z_style: &[Vec<f64>],
    pairs: &PairAssignment,
    lr: f64,
) -> BceReport {
    let d = disc.cfg.embed_dim;
    let mut tape = Tape::new();
    let staged = disc.params.stage(&mut tape);
    let mut total: Option<Var> = None;
    let mut matched_sum = 0.0;
    let mut unmatched_sum = 0.0;
    let n_pairs = pairs.matched.len() + pairs.unmatched.len();
    for (list, label) in [(&pairs.matched, 1.0), (&pairs.unmatched, 0.0)] {
        for &(item, partner) in list.iter() {
            let za = tape.constant(Tensor::from_vec(&[1, d], z_avg[item].clone()));
            let zs = tape.constant(Tensor::from_vec(&[1, d], z_style[partner].clone()));
            let out = disc.forward(&mut tape, Some(&staged), za, zs);
            let v = tape.value(out).item();
            if label == 1.0 {
                matched_sum += v;
            } else {
                unmatched_sum += v;
            }
            // -(y ln p + (1-y) ln(1-p)), clamped away from log(0)
            let term = if label == 1.0 {
                let p = tape.max_const(out, 1e-12);
                let lp = tape.log(p);
                tape.scale(lp, -1.0)
            } else {
                let one = tape.constant(Tensor::full(&[1, 1], 1.0));
                let q = tape.sub(one, out);
                let q = tape.max_const(q, 1e-12);
                let lq = tape.log(q);
                tape.scale(lq, -1.0)
            };
            let term = tape.sum_all(term);
            total = Some(match total {
                Some(t) => tape.add(t, term),
                None => term,
            });
        }
    }
    let total = total.expect("non-empty batch");
    let loss = tape.scale(total, 1.0 / n_pairs as f64);
    let loss_val = tape.value(loss).item();
    let grads = tape.backward(loss);
    for i in 0..disc.params.len() {
        let g = grads.get_or_zeros(staged.var(i), disc.params.tensor(i).shape());
        adamw_step(&mut opt.states[i], disc.params.tensor_mut(i), &g, lr, &opt.hyper)
            .expect("aligned extents");
    }
    BceReport {
        loss: loss_val,
        matched_mean: matched_sum / pairs.matched.len() as f64,
        unmatched_mean: unmatched_sum / pairs.unmatched.len() as f64,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn spectral_normalize_diagonal() {
        let w = Tensor::from_vec(&[2, 2], vec![3.0, 0.0, 0.0, 1.0]);
        let mut st = SpectralState::new(2, 2, 1);
        let n = spectral_normalize(&w, &mut st, 50).unwrap();
        assert!((n.data()[0] - 1.0).abs() < 1e-9);
        assert!((n.data()[3] - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn spectral_normalize_is_near_fixed_point() {
        let w = Tensor::from_vec(&[2, 2], vec![0.8, 0.1, -0.2, 0.5]);
        let mut st = SpectralState::new(2, 2, 2);
        let n1 = spectral_normalize(&w, &mut st, 50).unwrap();
        let mut st2 = SpectralState::new(2, 2, 3);
        let n2 = spectral_normalize(&n1, &mut st2, 50).unwrap();
        for (a, b) in n1.data().iter().zip(n2.data()) {
            assert!((a - b).abs() < 0.05);
        }
    }

    #[test]
    fn spectral_normalize_zero_matrix_errors() {
        let w = Tensor::zeros(&[3, 3]);
        let mut st = SpectralState::new(3, 3, 4);
        assert!(matches!(
            spectral_normalize(&w, &mut st, 5),
            Err(DiscError::ZeroMatrix)
        ));
    }

    #[test]
    fn normalized_top_singular_value_vs_svd_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let data: Vec<f64> = (0..16 * 16).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = Tensor::from_vec(&[16, 16], data.clone());
            let mut st = SpectralState::new(16, 16, trial);
            let n = spectral_normalize(&w, &mut st, 40).unwrap();
            let m = nalgebra::DMatrix::from_row_slice(16, 16, n.data());
            let sigma = m.svd(false, false).singular_values[0];
            assert!(
                (0.95..=1.05).contains(&sigma),
                "trial {trial}: sigma {sigma}"
            );
        }
    }

    #[test]
    fn make_pairs_batch_of_two_videos() {
        // items 0,1 from video A; 2,3 from video B
        let pairs = make_pairs(&[7, 7, 9, 9], 1).unwrap();
        assert_eq!(pairs.matched, vec![(0, 1), (1, 0), (2, 3), (3, 2)]);
        for &(i, j) in &pairs.unmatched {
            assert_ne!([7, 7, 9, 9][i], [7, 7, 9, 9][j], "unmatched same video");
        }
        assert_eq!(pairs, make_pairs(&[7, 7, 9, 9], 1).unwrap());
        // a triple from one video is rejected
        assert!(matches!(
            make_pairs(&[7, 7, 7, 9], 1),
            Err(DiscError::BadPairing { .. })
        ));
        // all items from one video: no contrast available
        assert!(make_pairs(&[7, 7], 1).is_err());
    }

    #[test]
    fn forward_output_in_unit_interval_and_differentiable() {
        let disc = Discriminator::new(DiscConfig::with_dim(8), 11);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let style: Vec<f64> = (0..8).map(|_| rng.gen_range(-0.01..0.01)).collect();
        for _ in 0..10 {
            let avg: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut tape = Tape::new();
            let za = tape.leaf(Tensor::from_vec(&[1, 8], avg.clone()));
            let zs = tape.leaf(Tensor::from_vec(&[1, 8], style.clone()));
            let out = disc.forward(&mut tape, None, za, zs);
            let v = tape.value(out).item();
            assert!(v > 0.0 && v < 1.0);
        }
        // gradient with respect to the clip embedding
        let point = Tensor::from_vec(&[1, 8], (0..8).map(|i| 0.1 * i as f64 - 0.3).collect());
        let report = crate::diffcore::grad_check(
            |tape, za| {
                let zs = tape.leaf(Tensor::from_vec(&[1, 8], style.clone()));
                let out = disc.forward(tape, None, za, zs);
                tape.sum_all(out)
            },
            &point,
            1e-5,
        )
        .unwrap();
        assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
    }

    #[test]
    fn style_scale_multiplies_projector_input() {
        let disc = Discriminator::new(DiscConfig::with_dim(4), 13);
        let mut tape = Tape::new();
        let z = tape.leaf(Tensor::from_vec(&[1, 4], vec![0.01, -0.02, 0.03, 0.0]));
        let scaled = tape.scale(z, disc.cfg.style_scale);
        assert_eq!(tape.value(scaled).data(), &[1.0, -2.0, 3.0, 0.0]);
    }

    #[test]
    fn bce_at_half_is_ln2_and_perfect_outputs_vanish() {
        // -(ln 0.5) = ln 2 per pair regardless of label
        let p: f64 = 0.5;
        assert!(((-p.ln()) - std::f64::consts::LN_2).abs() < 1e-15);
        let nearly_one: f64 = 1.0 - 1e-12;
        assert!((-nearly_one.ln()) < 1e-11);
    }

    #[test]
    fn bce_update_trains_only_the_discriminator_and_ema_tracks() {
        let mut disc = Discriminator::new(DiscConfig::with_dim(8), 14);
        let mut opt = DiscOptimizer::new(&disc);
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        // synthetic pools: style vectors share a video-specific offset
        let video_ids = [1u64, 1, 2, 2, 3, 3];
        let styles: Vec<Vec<f64>> = video_ids
            .iter()
            .map(|&vid| {
                (0..8)
                    .map(|i| 0.02 * vid as f64 * ((i + 1) as f64 * 0.4).sin() + rng.gen_range(-0.002..0.002))
                    .collect()
            })
            .collect();
        let avgs: Vec<Vec<f64>> = video_ids
            .iter()
            .map(|&vid| {
                (0..8)
                    .map(|i| 0.5 * vid as f64 * ((i + 2) as f64 * 0.9).cos() + rng.gen_range(-0.05..0.05))
                    .collect()
            })
            .collect();

        let mut ema = EmaPair::new(0.1);
        let before_loss = {
            let pairs = make_pairs(&video_ids, 0).unwrap();
            let snapshot: Vec<Tensor> = (0..disc.params.len())
                .map(|i| disc.params.tensor(i).clone())
                .collect();
            let report = bce_update(&mut disc, &mut opt, &avgs, &styles, &pairs, 1e-3);
            // all discriminator parameters moved
            let moved = (0..disc.params.len())
                .filter(|&i| disc.params.tensor(i) != &snapshot[i])
                .count();
            assert!(moved > 0);
            ema.update(report.matched_mean, report.unmatched_mean);
            report.loss
        };
        let mut last = before_loss;
        for step in 1..500 {
            disc.power_iterate(1).unwrap();
            let pairs = make_pairs(&video_ids, step as u64).unwrap();
            let report = bce_update(&mut disc, &mut opt, &avgs, &styles, &pairs, 1e-3);
            ema.update(report.matched_mean, report.unmatched_mean);
            last = report.loss;
            if ema.matched > ema.unmatched + 0.1 {
                break;
            }
        }
        assert!(last < before_loss, "loss should decrease: {before_loss} -> {last}");
        assert!(
            ema.matched > ema.unmatched,
            "matched pool should separate: {} vs {}",
            ema.matched,
            ema.unmatched
        );
        assert!((0.0..=1.0).contains(&ema.matched) && (0.0..=1.0).contains(&ema.unmatched));
    }

    #[test]
    fn ema_examples() {
        let mut e = EmaPair::new(0.1);
        e.update(1.0, 0.5);
        assert!((e.matched - 0.55).abs() < 1e-15);
        assert!((e.unmatched - 0.5).abs() < 1e-15);
        // fixed point
        let snapshot = e;
        e.update(snapshot.matched, snapshot.unmatched);
        assert_eq!(e, snapshot);
        // geometric approach to a constant stream
        let mut e = EmaPair::new(0.1);
        for _ in 0..200 {
            e.update(0.9, 0.2);
        }
        assert!((e.matched - 0.9).abs() < 1e-8);
        assert!((e.unmatched - 0.2).abs() < 1e-8);
    }

    #[test]
    fn ema_stays_in_unit_interval() {
        use proptest::prelude::*;
        proptest!(|(xs in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..50))| {
            let mut e = EmaPair::new(0.1);
            for (a, b) in xs {
                e.update(a, b);
                prop_assert!((0.0..=1.0).contains(&e.matched));
                prop_assert!((0.0..=1.0).contains(&e.unmatched));
            }
        });
    }
}

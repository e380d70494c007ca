//! Pretraining loop and the recognition fine-tune harness. Each step runs
//! the masked encoder on a batch of same-video clip pairs, regresses the
//! sign priors, regularizes the batch of clip embeddings, plays the
//! adversarial game against the style discriminator, then trains the
//! discriminator itself with BCE and refreshes the output-pool EMAs.

mod data;
mod features;
mod finetune;

pub use data::{load_dataset, video_window, LoadedDataset, LoadedItem};
pub use features::{aggregate, evaluate_retrieval, extract_segments, extract_video_segments, segment_embeddings};
pub use finetune::{finetune_recognition, recognition_loss, Classifier, FinetuneConfig, RecognitionReport};

use rayon::prelude::*;
use thiserror::Error;

use crate::diffcore::{
    adamw_step, clip_grad_norm, cosine_warmup_lr, AdamHyper, MomentState, Tape, Tensor, Var,
};
use crate::discriminator::{
    bce_update, make_pairs, DiscConfig, DiscOptimizer, Discriminator, EmaPair,
};
use crate::model::{random_mask, DecoderConfig, EncoderConfig, ParamStore, SignModel};
use crate::objectives::{
    adversarial_loss_pair, covariance_loss, recon_loss, total_loss_value, variance_loss,
    LossWeights, ReconTerm,
};
use crate::pose::confidence_mask;
use crate::priors::{prior_targets, ActivityOptions, PriorKind};
use crate::synth::{derive_seed, Split};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },
    #[error("pose: {0}")]
    Pose(#[from] crate::pose::PoseError),
    #[error("model: {0}")]
    Model(#[from] crate::model::ModelError),
    #[error("discriminator: {0}")]
    Disc(#[from] crate::discriminator::DiscError),
    #[error("synth: {0}")]
    Synth(#[from] crate::synth::SynthError),
    #[error("diff: {0}")]
    Diff(#[from] crate::diffcore::DiffError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy)]
pub struct PretrainConfig {
    pub steps: usize,
    pub batch_pairs: usize,
    pub warmup_frac: f64,
    pub lr_max: f64,
    pub weight_decay: f64,
    pub betas: (f64, f64),
    pub layerwise_decay: f64,
    pub clip_norm: f64,
    pub weights: LossWeights,
    pub seed: u64,
    pub eval_every: usize,
    pub eval_stride: usize,
    /// dictionary subsample for the selection metric; 0 keeps every video
    pub eval_dict_per_class: usize,
    pub disc_lr: f64,
    pub ema_momentum: f64,
    pub adversarial_enabled: bool,
    pub confidence_threshold: f64,
    pub activity: ActivityOptions,
    /// 0 uses the global rayon pool
    pub threads: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            steps: 2000,
            batch_pairs: 8,
            warmup_frac: 0.1,
            lr_max: 1e-4,
            weight_decay: 0.5,
            betas: (0.9, 0.95),
            layerwise_decay: 0.85,
            clip_norm: 1.0,
            weights: LossWeights::default(),
            seed: 7,
            eval_every: 250,
            eval_stride: 8,
            eval_dict_per_class: 5,
            disc_lr: 1e-4,
            ema_momentum: 0.1,
            adversarial_enabled: true,
            confidence_threshold: 0.5,
            activity: ActivityOptions {
                y_down: true,
                still_threshold: 0.26,
                use_hand_centroid: false,
            },
            threads: 0,
        }
    }
}

/// One training-log row. Serialized with shortest-round-trip float
/// formatting so the CSV reproduces the exact f64 values.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub lr: f64,
    pub recon: f64,
    pub var: f64,
    pub cov: f64,
    pub adv: f64,
    pub total: f64,
    pub e_matched: f64,
    pub e_unmatched: f64,
}

impl StepRecord {
    pub fn csv_header() -> &'static str {
        "step,lr,recon,var,cov,adv,total,e_m,e_u"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.step,
            self.lr,
            self.recon,
            self.var,
            self.cov,
            self.adv,
            self.total,
            self.e_matched,
            self.e_unmatched
        )
    }
}

pub struct PretrainOutput {
    pub model: SignModel,
    pub disc: Discriminator,
    pub ema: EmaPair,
    pub log: Vec<StepRecord>,
    pub best_params: ParamStore,
    pub best_dcg: f64,
    pub best_step: usize,
}

struct ClipResult {
    tape: Tape,
    recon_node: Var,
    z_avg_node: Var,
    z_style_node: Var,
    recon_value: f64,
    z_avg: Vec<f64>,
    z_style: Vec<f64>,
    staged_len: usize,
    staged: crate::model::Staged,
}

/// Forward one clip on its own tape: masked encoder, pooling, style
/// vector, decoder and the weighted prior regression loss.
fn forward_clip(
    model: &SignModel,
    video_clip: &[f32],
    priors: &crate::priors::PriorSet,
    mask_seed: u64,
    weights: &LossWeights,
) -> ClipResult {
    let mut tape = Tape::with_capacity(512);
    let staged = model.params.stage(&mut tape);
    let pv = model.patch_vectors(video_clip);
    let tokens = model.patchify(&mut tape, &staged, &pv);
    let sel = random_mask(model.encoder.n_tokens(), model.encoder.mask_ratio, mask_seed);
    let visible = tape.row_gather(tokens, &sel.visible);
    let z_emb = model.encode(&mut tape, &staged, visible);
    let z_avg = model.pool(&mut tape, &staged, z_emb);
    let z_style = SignModel::style_vector(&mut tape, z_emb);
    let decoded = model.decode(&mut tape, &staged, z_avg);

    let act_target = Tensor::from_vec(&[1, 2], priors.activity.to_vec());
    let act_mask = Tensor::full(&[1, 2], 1.0);
    let act_prob = tape.sigmoid(decoded.activity_logits);
    let mut terms = Vec::with_capacity(PriorKind::ALL.len() + 1);
    for (i, kind) in PriorKind::ALL.iter().enumerate() {
        terms.push(ReconTerm {
            pred: decoded.priors[i],
            target: priors.target(*kind),
            mask: priors.mask(*kind),
            weight: kind.weight(weights),
        });
    }
    terms.push(ReconTerm {
        pred: act_prob,
        target: &act_target,
        mask: &act_mask,
        weight: weights.w_act,
    });
    let recon = recon_loss(&mut tape, &terms);

    ClipResult {
        recon_value: tape.value(recon).item(),
        z_avg: tape.value(z_avg).data().to_vec(),
        z_style: tape.value(z_style).data().to_vec(),
        staged_len: model.params.len(),
        recon_node: recon,
        z_avg_node: z_avg,
        z_style_node: z_style,
        staged,
        tape,
    }
}

/// Pick `pairs` distinct training videos and two distinct window starts in
/// each, seeded per step.
fn sample_batch(
    train: &[&LoadedItem],
    pairs: usize,
    clip_frames: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    assert!(train.len() >= pairs, "not enough training videos for the batch");
    let mut order: Vec<usize> = (0..train.len()).collect();
    for i in 0..pairs {
        let j = i + rng.gen_range(0..(order.len() - i) as u64) as usize;
        order.swap(i, j);
    }
    let mut out = Vec::with_capacity(pairs * 2);
    for &vi in order.iter().take(pairs) {
        let max_start = train[vi].video.frames.saturating_sub(clip_frames);
        let a = rng.gen_range(0..=max_start as u64) as usize;
        let b = loop {
            let b = rng.gen_range(0..=max_start as u64) as usize;
            if b != a || max_start == 0 {
                break b;
            }
        };
        out.push((vi, a));
        out.push((vi, b));
    }
    out
}

fn eval_dcg(model: &SignModel, data: &LoadedDataset, stride: usize, dict_per_class: usize) -> f64 {
    let mut train = data.split(Split::Train);
    if dict_per_class > 0 {
        let mut kept = Vec::new();
        let mut counts = std::collections::BTreeMap::new();
        for item in train {
            let c = counts.entry(item.class_id).or_insert(0usize);
            if *c < dict_per_class {
                kept.push(item);
                *c += 1;
            }
        }
        train = kept;
    }
    let test = data.split(Split::Test);
    let dict = aggregate(&extract_segments(model, &train, stride), true);
    let queries = aggregate(&extract_segments(model, &test, stride), true);
    let (_, metrics) = evaluate_retrieval(&dict, &queries);
    metrics.dcg
}

pub fn pretrain(
    data: &LoadedDataset,
    encoder_cfg: EncoderConfig,
    decoder_cfg: DecoderConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput, TrainError> {
    if cfg.threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build()
            .map_err(|e| TrainError::Invalid(e.to_string()))?;
        pool.install(|| pretrain_inner(data, encoder_cfg, decoder_cfg, cfg))
    } else {
        pretrain_inner(data, encoder_cfg, decoder_cfg, cfg)
    }
}

fn pretrain_inner(
    data: &LoadedDataset,
    encoder_cfg: EncoderConfig,
    decoder_cfg: DecoderConfig,
    cfg: &PretrainConfig,
) -> Result<PretrainOutput, TrainError> {
    let mut model = SignModel::new(encoder_cfg, decoder_cfg, derive_seed(cfg.seed, 0x0de1, 0))?;
    let mut disc = Discriminator::new(
        DiscConfig::with_dim(encoder_cfg.embed_dim),
        derive_seed(cfg.seed, 0xd15c, 0),
    );
    let mut disc_opt = DiscOptimizer::new(&disc);
    let mut ema = EmaPair::new(cfg.ema_momentum);

    let hyper = AdamHyper {
        betas: cfg.betas,
        eps: 1e-8,
        weight_decay: cfg.weight_decay,
    };
    let mut opt_states: Vec<MomentState> = (0..model.params.len())
        .map(|i| MomentState::new(model.params.tensor(i).shape()))
        .collect();
    let lr_mults: Vec<f64> = (0..model.params.len())
        .map(|i| {
            let depth = model.layer_depth(model.params.name(i));
            cfg.layerwise_decay.powi((model.max_depth() - depth) as i32)
        })
        .collect();

    let train = data.split(Split::Train);
    let warmup = ((cfg.steps as f64) * cfg.warmup_frac).round() as usize;
    let clip_frames = encoder_cfg.frames;
    let mut log = Vec::with_capacity(cfg.steps);
    let mut best_params = model.params.clone();
    let mut best_dcg = f64::NEG_INFINITY;
    let mut best_step = 0;

    for step in 0..cfg.steps {
        // spectral estimates track the current discriminator weights
        disc.power_iterate(1)?;

        let batch = sample_batch(&train, cfg.batch_pairs, clip_frames, derive_seed(cfg.seed, 0xba7c, step as u64));
        let video_ids: Vec<u64> = batch.iter().map(|&(vi, _)| train[vi].video_id).collect();

        // phase 1: per-clip forwards, parallel, deterministic per clip
        let clips: Vec<ClipResult> = batch
            .par_iter()
            .enumerate()
            .map(|(j, &(vi, start))| {
                let item = train[vi];
                let window = item.stream.window(start, clip_frames);
                let mask = confidence_mask(&window, cfg.confidence_threshold);
                let priors = prior_targets(&window, &mask, &cfg.weights, &cfg.activity);
                let video_clip = video_window(&item.video, start, clip_frames);
                forward_clip(
                    &model,
                    &video_clip,
                    &priors,
                    derive_seed(cfg.seed, 0x3a5c, (step * 4096 + j) as u64),
                    &cfg.weights,
                )
            })
            .collect();

        let n_clips = clips.len();
        let d = encoder_cfg.embed_dim;

        // phase 2: batch losses over the clip embeddings
        let mut batch_tape = Tape::with_capacity(256);
        let z_avg_leaves: Vec<Var> = clips
            .iter()
            .map(|c| batch_tape.leaf(Tensor::from_vec(&[1, d], c.z_avg.clone())))
            .collect();
        let z_style_leaves: Vec<Var> = clips
            .iter()
            .map(|c| batch_tape.leaf(Tensor::from_vec(&[1, d], c.z_style.clone())))
            .collect();
        let stacked = batch_tape.concat(&z_avg_leaves, 0);
        let var_node = variance_loss(&mut batch_tape, stacked)?;
        let cov_node = covariance_loss(&mut batch_tape, stacked)?;

        let pairs = make_pairs(&video_ids, derive_seed(cfg.seed, 0x9a12, step as u64))?;
        let adv_node = if cfg.adversarial_enabled {
            let mut acc: Option<Var> = None;
            for (&(i, mate), &(_, contrast)) in pairs.matched.iter().zip(&pairs.unmatched) {
                let d_matched =
                    disc.forward(&mut batch_tape, None, z_avg_leaves[i], z_style_leaves[mate]);
                let d_unmatched =
                    disc.forward(&mut batch_tape, None, z_avg_leaves[i], z_style_leaves[contrast]);
                let dm = batch_tape.sum_all(d_matched);
                let du = batch_tape.sum_all(d_unmatched);
                let pair_loss =
                    adversarial_loss_pair(&mut batch_tape, dm, du, ema.matched, ema.unmatched);
                acc = Some(match acc {
                    Some(a) => batch_tape.add(a, pair_loss),
                    None => pair_loss,
                });
            }
            let total = acc.expect("non-empty batch");
            batch_tape.scale(total, 1.0 / n_clips as f64)
        } else {
            batch_tape.leaf(Tensor::scalar(0.0))
        };

        let wv = batch_tape.scale(var_node, cfg.weights.w_var);
        let wc = batch_tape.scale(cov_node, cfg.weights.w_cov);
        let wa = batch_tape.scale(adv_node, cfg.weights.w_adv);
        let s = batch_tape.add(wv, wc);
        let batch_loss = batch_tape.add(s, wa);

        let recon_mean = clips.iter().map(|c| c.recon_value).sum::<f64>() / n_clips as f64;
        let var_value = batch_tape.value(var_node).item();
        let cov_value = batch_tape.value(cov_node).item();
        let adv_value = batch_tape.value(adv_node).item();
        let total_value = total_loss_value(recon_mean, var_value, cov_value, adv_value, &cfg.weights);
        if !total_value.is_finite() {
            return Err(TrainError::NonFinite { step });
        }

        let mut batch_grads = batch_tape.backward(batch_loss);

        // phase 3: per-clip backward with injected cotangents, parallel
        let seed_grads: Vec<(Tensor, Tensor)> = (0..n_clips)
            .map(|i| {
                (
                    batch_grads
                        .take(z_avg_leaves[i])
                        .unwrap_or_else(|| Tensor::zeros(&[1, d])),
                    batch_grads
                        .take(z_style_leaves[i])
                        .unwrap_or_else(|| Tensor::zeros(&[1, d])),
                )
            })
            .collect();
        let recon_seed = Tensor::scalar(1.0 / n_clips as f64);
        let per_clip_grads: Vec<Vec<Tensor>> = clips
            .into_par_iter()
            .zip(seed_grads)
            .map(|(mut clip, (g_avg, g_style))| {
                let seeds = [
                    (clip.recon_node, recon_seed.clone()),
                    (clip.z_avg_node, g_avg),
                    (clip.z_style_node, g_style),
                ];
                let grads = clip.tape.backward_seeded(&seeds);
                (0..clip.staged_len)
                    .map(|i| {
                        grads.get_or_zeros(clip.staged.var(i), model.params.tensor(i).shape())
                    })
                    .collect()
            })
            .collect();

        // fixed-order reduction over clips keeps runs bit-reproducible
        let mut grads: Vec<Tensor> = (0..model.params.len())
            .map(|i| Tensor::zeros(model.params.tensor(i).shape()))
            .collect();
        for clip_grads in &per_clip_grads {
            for (g, cg) in grads.iter_mut().zip(clip_grads) {
                for (a, b) in g.data_mut().iter_mut().zip(cg.data()) {
                    *a += b;
                }
            }
        }

        clip_grad_norm(&mut grads, cfg.clip_norm);
        let lr = cosine_warmup_lr(step, warmup, cfg.steps, cfg.lr_max);
        for i in 0..model.params.len() {
            adamw_step(
                &mut opt_states[i],
                model.params.tensor_mut(i),
                &grads[i],
                lr * lr_mults[i],
                &hyper,
            )?;
        }

        // discriminator update on detached embeddings, then the EMA
        let z_avgs: Vec<Vec<f64>> = z_avg_leaves
            .iter()
            .map(|&v| batch_tape.value(v).data().to_vec())
            .collect();
        let z_styles: Vec<Vec<f64>> = z_style_leaves
            .iter()
            .map(|&v| batch_tape.value(v).data().to_vec())
            .collect();
        let disc_lr = cosine_warmup_lr(step, warmup, cfg.steps, cfg.disc_lr);
        let report = bce_update(&mut disc, &mut disc_opt, &z_avgs, &z_styles, &pairs, disc_lr);
        ema.update(report.matched_mean, report.unmatched_mean);

        log.push(StepRecord {
            step,
            lr,
            recon: recon_mean,
            var: var_value,
            cov: cov_value,
            adv: adv_value,
            total: total_value,
            e_matched: ema.matched,
            e_unmatched: ema.unmatched,
        });

        let is_eval = cfg.eval_every > 0
            && ((step + 1) % cfg.eval_every == 0 || step + 1 == cfg.steps);
        if is_eval {
            let dcg = eval_dcg(&model, data, cfg.eval_stride, cfg.eval_dict_per_class);
            if dcg > best_dcg {
                best_dcg = dcg;
                best_params = model.params.clone();
                best_step = step + 1;
            }
        }
    }

    if best_dcg == f64::NEG_INFINITY {
        best_params = model.params.clone();
    }
    Ok(PretrainOutput {
        model,
        disc,
        ema,
        log,
        best_params,
        best_dcg,
        best_step,
    })
}

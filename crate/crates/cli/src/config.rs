//! Flat key=value run configuration. Every key has a documented default;
//! unknown keys are rejected so typos cannot silently fall back.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context, Result};
use signrep_core::model::{DecoderConfig, EncoderConfig};
use signrep_core::objectives::LossWeights;
use signrep_core::priors::ActivityOptions;
use signrep_core::synth::SynthConfig;
use signrep_core::trainer::PretrainConfig;

macro_rules! run_config {
    ($(($field:ident, $key:literal, $ty:ty, $default:expr, $doc:literal)),* $(,)?) => {
        /// Resolved run configuration.
        #[derive(Debug, Clone)]
        pub struct RunConfig {
            $(pub $field: $ty,)*
        }

        impl Default for RunConfig {
            fn default() -> Self {
                RunConfig { $($field: $default,)* }
            }
        }

        impl RunConfig {
            fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
                match key {
                    $($key => {
                        self.$field = value.parse::<$ty>().with_context(|| {
                            format!("line {line}: key {key} expects a {}", stringify!($ty))
                        })?;
                    })*
                    _ => bail!("line {line}: unknown configuration key {key}"),
                }
                Ok(())
            }

            /// Full resolved configuration, one key per line.
            pub fn to_text(&self) -> String {
                let mut out = String::new();
                $(writeln!(out, "{} = {}", $key, self.$field).unwrap();)*
                out
            }

            /// The default configuration with per-key documentation.
            pub fn documented_defaults() -> String {
                let d = RunConfig::default();
                let mut out = String::new();
                $(
                    writeln!(out, "# {}", $doc).unwrap();
                    writeln!(out, "{} = {}\n", $key, d.$field).unwrap();
                )*
                out
            }
        }
    };
}

run_config! {
    (seed, "seed", u64, 7, "master seed for data generation and training"),
    (threads, "threads", usize, 0, "worker cap; 0 uses all cores (SIGNREP_THREADS overrides)"),
    (data_dir, "data_dir", String, "data/synth".to_string(), "dataset directory (generate writes here, other commands read)"),
    (out_dir, "out_dir", String, "runs/default".to_string(), "run output directory"),
    (classes, "classes", usize, 10, "number of synthetic sign classes"),
    (samples_per_class, "samples_per_class", usize, 20, "videos per class"),
    (video_frames, "video_frames", usize, 32, "frames per generated video"),
    (frame_height, "frame_height", usize, 32, "rendered frame height"),
    (frame_width, "frame_width", usize, 32, "rendered frame width"),
    (train_fraction, "train_fraction", f64, 0.75, "per-class fraction of videos in the train split"),
    (clip_frames, "clip_frames", usize, 16, "encoder clip length T"),
    (patch_t, "patch_t", usize, 2, "temporal patch size"),
    (patch_s, "patch_s", usize, 4, "spatial patch size"),
    (embed_dim, "embed_dim", usize, 64, "encoder embedding width D"),
    (blocks, "blocks", usize, 2, "transformer blocks"),
    (heads, "heads", usize, 4, "attention heads"),
    (mask_ratio, "mask_ratio", f64, 0.8, "fraction of tokens masked during pretraining"),
    (decoder_hidden, "decoder_hidden", usize, 64, "sign decoder hidden width"),
    (decoder_dim, "decoder_dim", usize, 32, "sign decoder per-frame feature width D'"),
    (confidence_threshold, "confidence_threshold", f64, 0.5, "keypoints must exceed this confidence to enter the loss"),
    (activity_still_threshold, "activity_still_threshold", f64, 0.26, "summed keypoint std below which a lowered hand is inactive"),
    (w_angle, "w_angle", f64, 10.0, "loss weight for angle priors"),
    (w_kpt, "w_kpt", f64, 10.0, "loss weight for keypoint priors"),
    (w_dist, "w_dist", f64, 20.0, "loss weight for displacement priors"),
    (w_act, "w_act", f64, 0.2, "loss weight for the activity prior"),
    (w_var, "w_var", f64, 1.0, "variance regularizer weight"),
    (w_cov, "w_cov", f64, 0.004, "covariance regularizer weight"),
    (w_adv, "w_adv", f64, 2.0, "adversarial style loss weight"),
    (psi_hand_kpt, "psi_hand_kpt", f64, 2.0, "target scale for hand keypoint priors"),
    (psi_hand_dist, "psi_hand_dist", f64, 4.0, "target scale for hand displacement priors"),
    (kappa, "kappa", f64, 0.2, "class-distribution KL weight in recognition"),
    (label_smoothing, "label_smoothing", f64, 0.1, "label smoothing for recognition cross entropy"),
    (steps, "steps", usize, 2000, "pretraining steps"),
    (batch_pairs, "batch_pairs", usize, 8, "same-video clip pairs per batch"),
    (warmup_frac, "warmup_frac", f64, 0.1, "fraction of steps spent in linear warmup"),
    (lr_max, "lr_max", f64, 1e-4, "peak learning rate"),
    (weight_decay, "weight_decay", f64, 0.5, "decoupled weight decay"),
    (layerwise_decay, "layerwise_decay", f64, 0.85, "per-depth learning-rate decay factor"),
    (clip_norm, "clip_norm", f64, 1.0, "global gradient-norm cap"),
    (beta1, "beta1", f64, 0.9, "first-moment decay"),
    (beta2, "beta2", f64, 0.95, "second-moment decay"),
    (disc_lr, "disc_lr", f64, 1e-4, "discriminator peak learning rate"),
    (ema_momentum, "ema_momentum", f64, 0.1, "momentum of the matched/unmatched output EMAs"),
    (eval_every, "eval_every", usize, 250, "steps between retrieval-based model selection"),
    (eval_stride, "eval_stride", usize, 8, "sliding stride for the selection metric"),
    (eval_dict_per_class, "eval_dict_per_class", usize, 5, "dictionary videos per class during selection (0 = all)"),
    (stride, "stride", usize, 2, "sliding stride for feature extraction"),
    (weighted, "weighted", bool, true, "activity-weighted video representations"),
    (topk, "topk", usize, 5, "entries per query in the retrieval dump"),
    (tau_grid_start, "tau_grid_start", f64, 0.001, "temperature grid start"),
    (tau_grid_stop, "tau_grid_stop", f64, 0.1, "temperature grid stop (inclusive)"),
    (tau_grid_step, "tau_grid_step", f64, 0.001, "temperature grid step"),
    (finetune_steps, "finetune_steps", usize, 400, "classifier training steps"),
    (finetune_lr, "finetune_lr", f64, 5e-2, "classifier learning rate"),
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .with_context(|| format!("reading config {}", path.as_ref().display()))?;
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .with_context(|| format!("line {}: expected key = value", i + 1))?;
            cfg.set(key.trim(), value.trim(), i + 1)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder_config()
            .validate()
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        if self.batch_pairs * 2 > self.classes * ((self.samples_per_class as f64 * self.train_fraction).ceil() as usize) {
            bail!("batch_pairs too large for the training split");
        }
        if self.clip_frames > self.video_frames {
            bail!("clip_frames must not exceed video_frames");
        }
        Ok(())
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            frames: self.clip_frames,
            height: self.frame_height,
            width: self.frame_width,
            channels: 3,
            patch_t: self.patch_t,
            patch_s: self.patch_s,
            embed_dim: self.embed_dim,
            blocks: self.blocks,
            heads: self.heads,
            mask_ratio: self.mask_ratio,
        }
    }

    pub fn decoder_config(&self) -> DecoderConfig {
        DecoderConfig {
            hidden: self.decoder_hidden,
            out_dim: self.decoder_dim,
        }
    }

    pub fn synth_config(&self) -> SynthConfig {
        SynthConfig {
            classes: self.classes,
            samples_per_class: self.samples_per_class,
            frames: self.video_frames,
            height: self.frame_height,
            width: self.frame_width,
            train_fraction: self.train_fraction,
            seed: self.seed,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            w_angle: self.w_angle,
            w_kpt: self.w_kpt,
            w_dist: self.w_dist,
            w_act: self.w_act,
            w_var: self.w_var,
            w_cov: self.w_cov,
            w_adv: self.w_adv,
            psi_hand_kpt: self.psi_hand_kpt,
            psi_hand_dist: self.psi_hand_dist,
            kappa: self.kappa,
        }
    }

    pub fn pretrain_config(&self) -> PretrainConfig {
        PretrainConfig {
            steps: self.steps,
            batch_pairs: self.batch_pairs,
            warmup_frac: self.warmup_frac,
            lr_max: self.lr_max,
            weight_decay: self.weight_decay,
            betas: (self.beta1, self.beta2),
            layerwise_decay: self.layerwise_decay,
            clip_norm: self.clip_norm,
            weights: self.loss_weights(),
            seed: self.seed,
            eval_every: self.eval_every,
            eval_stride: self.eval_stride,
            eval_dict_per_class: self.eval_dict_per_class,
            disc_lr: self.disc_lr,
            ema_momentum: self.ema_momentum,
            adversarial_enabled: true,
            confidence_threshold: self.confidence_threshold,
            activity: self.activity_options(),
            threads: self.threads,
        }
    }

    pub fn activity_options(&self) -> ActivityOptions {
        ActivityOptions {
            y_down: true,
            still_threshold: self.activity_still_threshold,
            use_hand_centroid: false,
        }
    }
}

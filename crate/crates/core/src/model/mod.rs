//! Toy masked video encoder and the sign decoder. The encoder is a small
//! self-attention transformer over spatiotemporal patch tokens with learned
//! positional embeddings; the decoder pools tokens into a clip embedding,
//! upsamples it back to the clip length and regresses every prior family
//! through per-prior linear heads.

mod checkpoint;
mod inflate;
mod params;

pub use checkpoint::{load_checkpoint, restore_into, save_checkpoint, CheckpointMeta, CHECKPOINT_MAGIC};
pub use inflate::inflate_patch_kernel;
pub use params::{ParamStore, Staged};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::diffcore::{Tape, Tensor, Var};
use crate::priors::PriorKind;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("bad checkpoint magic")]
    BadMagic,
    #[error("checkpoint truncated")]
    Truncated,
    #[error("checkpoint is missing parameter {name}")]
    MissingParam { name: String },
    #[error("parameter {name}: stored shape {stored:?} does not match model shape {expected:?}")]
    ParamShape {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Encoder geometry. Frame extents must divide by the patch sizes and the
/// embedding width by the head count.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EncoderConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub patch_t: usize,
    pub patch_s: usize,
    pub embed_dim: usize,
    pub blocks: usize,
    pub heads: usize,
    pub mask_ratio: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            frames: 16,
            height: 32,
            width: 32,
            channels: 3,
            patch_t: 2,
            patch_s: 4,
            embed_dim: 64,
            blocks: 2,
            heads: 4,
            mask_ratio: 0.8,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let ok = self.height % self.patch_s == 0
            && self.width % self.patch_s == 0
            && self.frames % self.patch_t == 0
            && self.embed_dim % self.heads == 0
            && (0.0..1.0).contains(&self.mask_ratio);
        if ok {
            Ok(())
        } else {
            Err(ModelError::BadConfig(format!("{self:?}")))
        }
    }

    pub fn n_tokens(&self) -> usize {
        (self.frames / self.patch_t) * (self.height / self.patch_s) * (self.width / self.patch_s)
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_t * self.patch_s * self.patch_s * self.channels
    }
}

/// Sign decoder geometry: hidden width of the kernel-1 convolution and the
/// upsampled per-frame feature width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DecoderConfig {
    pub hidden: usize,
    pub out_dim: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            hidden: 64,
            out_dim: 32,
        }
    }
}

/// Seeded token masking: exactly round(ratio * count) tokens are dropped,
/// chosen uniformly without replacement; both lists are in original token
/// order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskSelection {
    pub visible: Vec<usize>,
    pub masked: Vec<usize>,
}

pub fn random_mask(n_tokens: usize, ratio: f64, seed: u64) -> MaskSelection {
    assert!((0.0..1.0).contains(&ratio), "mask ratio {ratio}");
    let n_masked = (ratio * n_tokens as f64).round() as usize;
    let mut order: Vec<usize> = (0..n_tokens).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // partial Fisher-Yates: the first n_masked entries are the sample
    for i in 0..n_masked {
        let j = i + (rand::Rng::gen_range(&mut rng, 0..(n_tokens - i) as u64) as usize);
        order.swap(i, j);
    }
    let mut masked = order[..n_masked].to_vec();
    masked.sort_unstable();
    let mut is_masked = vec![false; n_tokens];
    for &m in &masked {
        is_masked[m] = true;
    }
    let visible = (0..n_tokens).filter(|&i| !is_masked[i]).collect();
    MaskSelection { visible, masked }
}

/// Per-frame prior predictions plus the activity logits for one clip.
pub struct DecodeOutput {
    /// aligned with [`PriorKind::ALL`], each [frames, dim]
    pub priors: Vec<Var>,
    /// [1, 2] raw logits (left, right)
    pub activity_logits: Var,
}

/// Encoder, pooling path, sign decoder and activity head over one shared
/// parameter store.
pub struct SignModel {
    pub encoder: EncoderConfig,
    pub decoder: DecoderConfig,
    pub params: ParamStore,
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor {
    let dist = Normal::new(0.0, std).unwrap();
    let n: usize = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

impl SignModel {
    pub fn new(encoder: EncoderConfig, decoder: DecoderConfig, seed: u64) -> Result<Self, ModelError> {
        encoder.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamStore::new();
        let d = encoder.embed_dim;
        let dh = d / encoder.heads;
        let std = 0.02;

        p.add("patch.w", normal_tensor(&mut rng, &[encoder.patch_dim(), d], std));
        p.add("patch.b", Tensor::zeros(&[d]));
        p.add("patch.pos", normal_tensor(&mut rng, &[encoder.n_tokens(), d], std));
        for b in 0..encoder.blocks {
            p.add(&format!("block{b}.ln1.g"), Tensor::full(&[d], 1.0));
            p.add(&format!("block{b}.ln1.b"), Tensor::zeros(&[d]));
            for h in 0..encoder.heads {
                p.add(&format!("block{b}.attn.q{h}"), normal_tensor(&mut rng, &[d, dh], std));
                p.add(&format!("block{b}.attn.k{h}"), normal_tensor(&mut rng, &[d, dh], std));
                p.add(&format!("block{b}.attn.v{h}"), normal_tensor(&mut rng, &[d, dh], std));
            }
            p.add(&format!("block{b}.attn.out.w"), normal_tensor(&mut rng, &[d, d], std));
            p.add(&format!("block{b}.attn.out.b"), Tensor::zeros(&[d]));
            p.add(&format!("block{b}.ln2.g"), Tensor::full(&[d], 1.0));
            p.add(&format!("block{b}.ln2.b"), Tensor::zeros(&[d]));
            p.add(&format!("block{b}.mlp.w1"), normal_tensor(&mut rng, &[d, 2 * d], std));
            p.add(&format!("block{b}.mlp.b1"), Tensor::zeros(&[2 * d]));
            p.add(&format!("block{b}.mlp.w2"), normal_tensor(&mut rng, &[2 * d, d], std));
            p.add(&format!("block{b}.mlp.b2"), Tensor::zeros(&[d]));
        }
        p.add("pool.ln.g", Tensor::full(&[d], 1.0));
        p.add("pool.ln.b", Tensor::zeros(&[d]));
        p.add("pool.w", normal_tensor(&mut rng, &[d, d], std));
        p.add("pool.b", Tensor::zeros(&[d]));

        p.add("dec.conv.w", normal_tensor(&mut rng, &[decoder.hidden, d, 1], std));
        p.add("dec.conv.b", Tensor::zeros(&[decoder.hidden]));
        p.add(
            "dec.tconv.w",
            normal_tensor(&mut rng, &[decoder.hidden, decoder.out_dim, encoder.frames], std),
        );
        p.add("dec.tconv.b", Tensor::zeros(&[decoder.out_dim]));
        for kind in PriorKind::ALL {
            p.add(
                &format!("dec.head.{}.w", kind.name()),
                normal_tensor(&mut rng, &[decoder.out_dim, kind.dim()], std),
            );
            p.add(&format!("dec.head.{}.b", kind.name()), Tensor::zeros(&[kind.dim()]));
        }
        p.add("dec.act.w1", normal_tensor(&mut rng, &[d, d], std));
        p.add("dec.act.b1", Tensor::zeros(&[d]));
        p.add("dec.act.w2", normal_tensor(&mut rng, &[d, 2], std));
        p.add("dec.act.b2", Tensor::zeros(&[2]));

        Ok(SignModel {
            encoder,
            decoder,
            params: p,
        })
    }

    /// Rebuild a model from checkpoint tensors (unprefixed names).
    pub fn from_checkpoint(
        meta: &CheckpointMeta,
        tensors: &[(String, Tensor)],
    ) -> Result<Self, ModelError> {
        let mut model = SignModel::new(meta.encoder, meta.decoder, 0)?;
        checkpoint::restore_into(&mut model.params, tensors, "")?;
        Ok(model)
    }

    /// Layer index used for layer-wise learning-rate decay: patch/positional
    /// embeddings sit at depth 0, each transformer block one deeper, and the
    /// pooling path, decoder and heads at the top.
    pub fn layer_depth(&self, name: &str) -> usize {
        if name.starts_with("patch.") {
            return 0;
        }
        for b in 0..self.encoder.blocks {
            if name.starts_with(&format!("block{b}.")) {
                return b + 1;
            }
        }
        self.encoder.blocks + 1
    }

    pub fn max_depth(&self) -> usize {
        self.encoder.blocks + 1
    }

    /// Flattened patch vectors for one clip stored as T x H x W x C f32
    /// values: one row per spatiotemporal patch, (dt, dy, dx, c) order.
    pub fn patch_vectors(&self, video: &[f32]) -> Tensor {
        let c = &self.encoder;
        assert_eq!(
            video.len(),
            c.frames * c.height * c.width * c.channels,
            "video extents"
        );
        let (tp, sp) = (c.patch_t, c.patch_s);
        let (gt, gh, gw) = (c.frames / tp, c.height / sp, c.width / sp);
        let mut data = Vec::with_capacity(c.n_tokens() * c.patch_dim());
        for tt in 0..gt {
            for hh in 0..gh {
                for ww in 0..gw {
                    for dt in 0..tp {
                        let t = tt * tp + dt;
                        for dy in 0..sp {
                            let y = hh * sp + dy;
                            for dx in 0..sp {
                                let x = ww * sp + dx;
                                let at = ((t * c.height + y) * c.width + x) * c.channels;
                                for ch in 0..c.channels {
                                    data.push(video[at + ch] as f64);
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::from_vec(&[c.n_tokens(), c.patch_dim()], data)
    }

    /// Token sequence with positional encodings: linear patch embedding of
    /// every patch plus the learned positional table.
    pub fn patchify(&self, tape: &mut Tape, staged: &Staged, patch_vecs: &Tensor) -> Var {
        let raw = tape.constant(patch_vecs.clone());
        let w = staged.get(&self.params, "patch.w");
        let b = staged.get(&self.params, "patch.b");
        let pos = staged.get(&self.params, "patch.pos");
        let emb = tape.matmul(raw, w);
        let emb = tape.add_row_broadcast(emb, b);
        tape.add(emb, pos)
    }

    /// Transformer over the (visible) token rows: pre-norm attention and
    /// MLP blocks with residual connections.
    pub fn encode(&self, tape: &mut Tape, staged: &Staged, tokens: Var) -> Var {
        let c = &self.encoder;
        let dh = c.embed_dim / c.heads;
        // score scaling folded into the softmax temperature
        let temp = (dh as f64).sqrt();
        let mut x = tokens;
        for b in 0..c.blocks {
            let g1 = staged.get(&self.params, &format!("block{b}.ln1.g"));
            let b1 = staged.get(&self.params, &format!("block{b}.ln1.b"));
            let h_in = tape.layer_norm(x, g1, b1, 1e-5);
            let mut heads = Vec::with_capacity(c.heads);
            for h in 0..c.heads {
                let wq = staged.get(&self.params, &format!("block{b}.attn.q{h}"));
                let wk = staged.get(&self.params, &format!("block{b}.attn.k{h}"));
                let wv = staged.get(&self.params, &format!("block{b}.attn.v{h}"));
                let q = tape.matmul(h_in, wq);
                let k = tape.matmul(h_in, wk);
                let v = tape.matmul(h_in, wv);
                let kt = tape.transpose(k);
                let scores = tape.matmul(q, kt);
                let attn = tape.softmax_t(scores, temp);
                heads.push(tape.matmul(attn, v));
            }
            let cat = tape.concat(&heads, 1);
            let wo = staged.get(&self.params, &format!("block{b}.attn.out.w"));
            let bo = staged.get(&self.params, &format!("block{b}.attn.out.b"));
            let proj = tape.matmul(cat, wo);
            let proj = tape.add_row_broadcast(proj, bo);
            x = tape.add(x, proj);

            let g2 = staged.get(&self.params, &format!("block{b}.ln2.g"));
            let b2 = staged.get(&self.params, &format!("block{b}.ln2.b"));
            let h2 = tape.layer_norm(x, g2, b2, 1e-5);
            let w1 = staged.get(&self.params, &format!("block{b}.mlp.w1"));
            let bb1 = staged.get(&self.params, &format!("block{b}.mlp.b1"));
            let w2 = staged.get(&self.params, &format!("block{b}.mlp.w2"));
            let bb2 = staged.get(&self.params, &format!("block{b}.mlp.b2"));
            let m = tape.matmul(h2, w1);
            let m = tape.add_row_broadcast(m, bb1);
            let m = tape.gelu(m);
            let m = tape.matmul(m, w2);
            let m = tape.add_row_broadcast(m, bb2);
            x = tape.add(x, m);
        }
        x
    }

    /// Token mean, layer norm, then a fully connected layer: the clip
    /// embedding.
    pub fn pool(&self, tape: &mut Tape, staged: &Staged, z_emb: Var) -> Var {
        let mean = tape.mean_axis(z_emb, 0);
        let row = tape.reshape(mean, &[1, self.encoder.embed_dim]);
        let g = staged.get(&self.params, "pool.ln.g");
        let b = staged.get(&self.params, "pool.ln.b");
        let normed = tape.layer_norm(row, g, b, 1e-5);
        let w = staged.get(&self.params, "pool.w");
        let bias = staged.get(&self.params, "pool.b");
        let out = tape.matmul(normed, w);
        tape.add_row_broadcast(out, bias)
    }

    /// Gram-matrix style summary of the encoder tokens: G = Z^T Z / K,
    /// reduced by a column-wise mean. Invariant to token order.
    pub fn style_vector(tape: &mut Tape, z_emb: Var) -> Var {
        let k = tape.value(z_emb).rows();
        let d = tape.value(z_emb).cols();
        let zt = tape.transpose(z_emb);
        let gram = tape.matmul(zt, z_emb);
        let gram = tape.scale(gram, 1.0 / k as f64);
        let mean = tape.mean_axis(gram, 0);
        tape.reshape(mean, &[1, d])
    }

    /// Upsample the clip embedding back to the clip length and regress all
    /// prior heads, plus the activity logits from the clip embedding.
    pub fn decode(&self, tape: &mut Tape, staged: &Staged, z_avg: Var) -> DecodeOutput {
        let d = self.encoder.embed_dim;
        let chan = tape.reshape(z_avg, &[d, 1]);
        let cw = staged.get(&self.params, "dec.conv.w");
        let cb = staged.get(&self.params, "dec.conv.b");
        let hidden = tape.conv1d(chan, cw, cb);
        let hidden = tape.gelu(hidden);
        let tw = staged.get(&self.params, "dec.tconv.w");
        let tb = staged.get(&self.params, "dec.tconv.b");
        let up = tape.conv1d_transpose(hidden, tw, tb); // [out_dim, frames]
        let z_up = tape.transpose(up); // [frames, out_dim]
        let priors = PriorKind::ALL
            .iter()
            .map(|kind| {
                let w = staged.get(&self.params, &format!("dec.head.{}.w", kind.name()));
                let b = staged.get(&self.params, &format!("dec.head.{}.b", kind.name()));
                let y = tape.matmul(z_up, w);
                tape.add_row_broadcast(y, b)
            })
            .collect();
        let activity_logits = self.activity_logits(tape, staged, z_avg);
        DecodeOutput {
            priors,
            activity_logits,
        }
    }

    /// Two-layer MLP from the clip embedding to the (left, right) hand
    /// activity logits.
    pub fn activity_logits(&self, tape: &mut Tape, staged: &Staged, z_avg: Var) -> Var {
        let w1 = staged.get(&self.params, "dec.act.w1");
        let b1 = staged.get(&self.params, "dec.act.b1");
        let w2 = staged.get(&self.params, "dec.act.w2");
        let b2 = staged.get(&self.params, "dec.act.b2");
        let h = tape.matmul(z_avg, w1);
        let h = tape.add_row_broadcast(h, b1);
        let h = tape.gelu(h);
        let logits = tape.matmul(h, w2);
        tape.add_row_broadcast(logits, b2)
    }
}

#[cfg(test)]
mod tests;

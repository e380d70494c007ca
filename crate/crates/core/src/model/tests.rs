use super::*;
use crate::diffcore::{grad_check, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config() -> EncoderConfig {
    EncoderConfig {
        frames: 4,
        height: 8,
        width: 8,
        channels: 3,
        patch_t: 2,
        patch_s: 4,
        embed_dim: 8,
        blocks: 2,
        heads: 4,
        mask_ratio: 0.8,
    }
}

fn random_video(cfg: &EncoderConfig, seed: u64) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..cfg.frames * cfg.height * cfg.width * cfg.channels)
        .map(|_| rng.gen_range(0.0..1.0))
        .collect()
}

#[test]
fn default_config_token_arithmetic() {
    let cfg = EncoderConfig::default();
    assert_eq!(cfg.n_tokens(), 8 * 8 * 8);
    assert_eq!(cfg.patch_dim(), 2 * 4 * 4 * 3);
}

#[test]
fn config_validation_rejects_bad_extents() {
    let mut cfg = EncoderConfig::default();
    cfg.height = 33;
    assert!(cfg.validate().is_err());
    let mut cfg = EncoderConfig::default();
    cfg.embed_dim = 62;
    assert!(cfg.validate().is_err());
}

#[test]
fn patchify_is_deterministic_and_embeds_to_d() {
    let cfg = tiny_config();
    let model = SignModel::new(cfg, DecoderConfig { hidden: 8, out_dim: 8 }, 7).unwrap();
    let video = random_video(&cfg, 1);
    let pv = model.patch_vectors(&video);
    assert_eq!(pv.shape(), &[cfg.n_tokens(), cfg.patch_dim()]);
    let run = || {
        let mut tape = Tape::new();
        let staged = model.params.stage(&mut tape);
        let tokens = model.patchify(&mut tape, &staged, &pv);
        tape.value(tokens).clone()
    };
    let a = run();
    let b = run();
    assert_eq!(a, b);
    assert_eq!(a.shape(), &[cfg.n_tokens(), cfg.embed_dim]);
}

#[test]
fn random_mask_exact_counts() {
    let m = random_mask(512, 0.8, 42);
    assert_eq!(m.masked.len(), 410, "round(0.8 * 512)");
    assert_eq!(m.visible.len(), 102);
    // disjoint and ordered
    let mut all: Vec<usize> = m.visible.iter().chain(&m.masked).copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..512).collect::<Vec<_>>());
    assert!(m.visible.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn random_mask_ratio_zero_keeps_everything() {
    let m = random_mask(64, 0.0, 1);
    assert_eq!(m.visible.len(), 64);
    assert!(m.masked.is_empty());
}

#[test]
fn random_mask_same_seed_same_mask() {
    assert_eq!(random_mask(128, 0.5, 9), random_mask(128, 0.5, 9));
    assert_ne!(random_mask(128, 0.5, 9), random_mask(128, 0.5, 10));
}

#[test]
fn encode_output_shape_and_determinism() {
    let cfg = tiny_config();
    let model = SignModel::new(cfg, DecoderConfig { hidden: 8, out_dim: 8 }, 3).unwrap();
    let video = random_video(&cfg, 2);
    let pv = model.patch_vectors(&video);
    let run = || {
        let mut tape = Tape::new();
        let staged = model.params.stage(&mut tape);
        let tokens = model.patchify(&mut tape, &staged, &pv);
        let mask = random_mask(cfg.n_tokens(), 0.5, 11);
        let visible = tape.row_gather(tokens, &mask.visible);
        let z = model.encode(&mut tape, &staged, visible);
        tape.value(z).clone()
    };
    let a = run();
    assert_eq!(a.shape(), &[4, cfg.embed_dim]); // round(0.5*8)=4 masked
    assert_eq!(a, run());
}

#[test]
fn encode_gradient_wrt_input_tokens() {
    let cfg = tiny_config();
    let model = SignModel::new(cfg, DecoderConfig { hidden: 8, out_dim: 8 }, 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let k = 3;
    let point = Tensor::from_vec(
        &[k, cfg.embed_dim],
        (0..k * cfg.embed_dim).map(|_| rng.gen_range(-0.5..0.5)).collect(),
    );
    let report = grad_check(
        |tape, tokens| {
            let staged = model.params.stage(tape);
            let z = model.encode(tape, &staged, tokens);
            let n = tape.value(z).numel();
            let w = tape.leaf(Tensor::from_vec(
                &[k, cfg.embed_dim],
                (0..n).map(|i| (i as f64 * 0.37).sin()).collect(),
            ));
            let p = tape.mul(z, w);
            tape.sum_all(p)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
}

#[test]
fn pool_mean_idempotence_and_gradient() {
    let cfg = tiny_config();
    let model = SignModel::new(cfg, DecoderConfig { hidden: 8, out_dim: 8 }, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let token: Vec<f64> = (0..cfg.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    // K identical tokens pool to the same embedding as K = 1
    let pool_of = |rows: usize| {
        let mut tape = Tape::new();
        let staged = model.params.stage(&mut tape);
        let mut data = Vec::new();
        for _ in 0..rows {
            data.extend_from_slice(&token);
        }
        let z = tape.leaf(Tensor::from_vec(&[rows, cfg.embed_dim], data));
        let out = model.pool(&mut tape, &staged, z);
        tape.value(out).clone()
    };
    let one = pool_of(1);
    let five = pool_of(5);
    assert_eq!(one.shape(), &[1, cfg.embed_dim]);
    for (a, b) in one.data().iter().zip(five.data()) {
        assert!((a - b).abs() < 1e-12);
    }

    let point = Tensor::from_vec(
        &[3, cfg.embed_dim],
        (0..3 * cfg.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let report = grad_check(
        |tape, z| {
            let staged = model.params.stage(tape);
            let out = model.pool(tape, &staged, z);
            let w = tape.leaf(Tensor::from_vec(
                &[1, cfg.embed_dim],
                (0..cfg.embed_dim).map(|i| (i as f64 * 0.7).cos()).collect(),
            ));
            let p = tape.mul(out, w);
            tape.sum_all(p)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
}

#[test]
fn style_vector_hand_example_and_permutation_invariance() {
    // rows (1,0) and (0,1): G = I/2, column mean = (0.25, 0.25)
    let mut tape = Tape::new();
    let z = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]));
    let s = SignModel::style_vector(&mut tape, z);
    assert_eq!(tape.value(s).data(), &[0.25, 0.25]);

    let zero = tape.leaf(Tensor::zeros(&[3, 2]));
    let s0 = SignModel::style_vector(&mut tape, zero);
    assert!(tape.value(s0).data().iter().all(|&v| v == 0.0));

    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let rows = 5;
    let d = 4;
    let data: Vec<f64> = (0..rows * d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let style_of = |perm: &[usize]| {
        let mut tape = Tape::new();
        let mut permuted = Vec::new();
        for &r in perm {
            permuted.extend_from_slice(&data[r * d..(r + 1) * d]);
        }
        let z = tape.leaf(Tensor::from_vec(&[rows, d], permuted));
        let s = SignModel::style_vector(&mut tape, z);
        tape.value(s).data().to_vec()
    };
    let a = style_of(&[0, 1, 2, 3, 4]);
    let b = style_of(&[4, 2, 0, 3, 1]);
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn decode_head_extents_match_prior_families() {
    use crate::priors::PriorKind;
    let cfg = EncoderConfig::default();
    let model = SignModel::new(cfg, DecoderConfig::default(), 1).unwrap();
    let mut tape = Tape::new();
    let staged = model.params.stage(&mut tape);
    let z = tape.leaf(Tensor::zeros(&[1, cfg.embed_dim]));
    let out = model.decode(&mut tape, &staged, z);
    for (kind, head) in PriorKind::ALL.iter().zip(&out.priors) {
        assert_eq!(
            tape.value(*head).shape(),
            &[cfg.frames, kind.dim()],
            "{}",
            kind.name()
        );
    }
    // hand-angle heads regress 41 sine/cosine pairs per frame
    assert_eq!(
        tape.value(out.priors[PriorKind::HandAngleLeft as usize]).cols(),
        82
    );
    assert_eq!(tape.value(out.activity_logits).shape(), &[1, 2]);
}

#[test]
fn transposed_conv_from_length_one_spans_the_clip() {
    let mut tape = Tape::new();
    let x = tape.leaf(Tensor::full(&[2, 1], 1.0));
    let w = tape.leaf(Tensor::full(&[2, 3, 16], 0.5));
    let b = tape.leaf(Tensor::zeros(&[3]));
    let y = tape.conv1d_transpose(x, w, b);
    assert_eq!(tape.value(y).shape(), &[3, 16]);
}

#[test]
fn decode_gradient_wrt_clip_embedding() {
    let cfg = tiny_config();
    let model = SignModel::new(cfg, DecoderConfig { hidden: 8, out_dim: 8 }, 13).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let point = Tensor::from_vec(
        &[1, cfg.embed_dim],
        (0..cfg.embed_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    );
    let report = grad_check(
        |tape, z| {
            let staged = model.params.stage(tape);
            let out = model.decode(tape, &staged, z);
            // scalarize all heads plus the activity logits
            let mut acc = None;
            for (i, head) in out.priors.iter().enumerate() {
                let shape = tape.value(*head).shape().to_vec();
                let n: usize = shape.iter().product();
                let w = tape.leaf(Tensor::from_vec(
                    &shape,
                    (0..n).map(|e| ((e + i) as f64 * 0.13).sin()).collect(),
                ));
                let p = tape.mul(*head, w);
                let s = tape.sum_all(p);
                acc = Some(match acc {
                    None => s,
                    Some(a) => tape.add(a, s),
                });
            }
            let al = tape.sum_all(out.activity_logits);
            tape.add(acc.unwrap(), al)
        },
        &point,
        1e-5,
    )
    .unwrap();
    assert!(report.passes(1e-4), "max rel err {}", report.max_rel_err);
}

#[test]
fn full_pipeline_gradient_spot_checks_on_parameters() {
    // patchify -> mask -> encode -> pool -> decode, differentiated with
    // respect to sampled parameter elements across all depths
    let cfg = tiny_config();
    let dec = DecoderConfig { hidden: 8, out_dim: 8 };
    let model = SignModel::new(cfg, dec, 17).unwrap();
    let video = random_video(&cfg, 18);
    let pv = model.patch_vectors(&video);
    let mask = random_mask(cfg.n_tokens(), cfg.mask_ratio, 19);

    let run = |model: &SignModel| -> f64 {
        let mut tape = Tape::new();
        let staged = model.params.stage(&mut tape);
        let tokens = model.patchify(&mut tape, &staged, &pv);
        let visible = tape.row_gather(tokens, &mask.visible);
        let z_emb = model.encode(&mut tape, &staged, visible);
        let z_avg = model.pool(&mut tape, &staged, z_emb);
        let out = model.decode(&mut tape, &staged, z_avg);
        let mut acc = None;
        for head in &out.priors {
            let s = tape.sum_all(*head);
            acc = Some(match acc {
                None => s,
                Some(a) => tape.add(a, s),
            });
        }
        let al = tape.sum_all(out.activity_logits);
        let root = tape.add(acc.unwrap(), al);
        tape.value(root).item()
    };

    for target in [
        "patch.w",
        "patch.pos",
        "block0.attn.q1",
        "block0.mlp.w1",
        "block1.ln1.g",
        "block1.attn.out.w",
        "pool.w",
        "dec.conv.w",
        "dec.tconv.w",
        "dec.head.left_hand_angles.w",
        "dec.act.w1",
    ] {
        let idx = model.params.idx(target);
        let point = model.params.tensor(idx).clone();
        let stride = (point.numel() / 5).max(1);
        let elements: Vec<usize> = (0..point.numel().min(5)).map(|i| i * stride % point.numel()).collect();
        let mut tape = Tape::new();
        let staged = model.params.stage(&mut tape);
        let tokens = model.patchify(&mut tape, &staged, &pv);
        let visible = tape.row_gather(tokens, &mask.visible);
        let z_emb = model.encode(&mut tape, &staged, visible);
        let z_avg = model.pool(&mut tape, &staged, z_emb);
        let out = model.decode(&mut tape, &staged, z_avg);
        let mut acc = None;
        for head in &out.priors {
            let s = tape.sum_all(*head);
            acc = Some(match acc {
                None => s,
                Some(a) => tape.add(a, s),
            });
        }
        let al = tape.sum_all(out.activity_logits);
        let root = tape.add(acc.unwrap(), al);
        let grads = tape.backward(root);
        let analytic = grads.get_or_zeros(staged.var(idx), point.shape());

        for &e in &elements {
            let mut m2 = SignModel::new(cfg, dec, 17).unwrap();
            m2.params.tensor_mut(idx).data_mut()[e] = point.data()[e] + 1e-5;
            let fp = run(&m2);
            m2.params.tensor_mut(idx).data_mut()[e] = point.data()[e] - 1e-5;
            let fm = run(&m2);
            let fd = (fp - fm) / 2e-5;
            let a = analytic.data()[e];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            assert!(rel <= 1e-4, "{target}[{e}]: analytic {a} vs fd {fd} (rel {rel})");
        }
    }
}

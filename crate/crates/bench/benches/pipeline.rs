use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use signrep_core::diffcore::{Tape, Tensor};
use signrep_core::model::{random_mask, DecoderConfig, EncoderConfig, SignModel};
use signrep_core::pose::confidence_mask;
use signrep_core::retrieval::RetrievalIndex;
use signrep_core::synth::{class_table, generate_sign_clip, render_video, StyleSpec};
use signrep_core::{objectives::LossWeights, priors};

fn bench_matmul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::from_vec(&[102, 64], (0..102 * 64).map(|_| rng.gen_range(-1.0..1.0)).collect());
    let b = Tensor::from_vec(&[64, 128], (0..64 * 128).map(|_| rng.gen_range(-1.0..1.0)).collect());
    c.bench_function("matmul_102x64x128", |bench| {
        bench.iter_batched(
            Tape::new,
            |mut tape| {
                let av = tape.leaf(a.clone());
                let bv = tape.leaf(b.clone());
                let y = tape.matmul(av, bv);
                tape.value(y).data()[0]
            },
            BatchSize::SmallInput,
        )
    });
}

fn bench_masked_encode(c: &mut Criterion) {
    let cfg = EncoderConfig::default();
    let model = SignModel::new(cfg, DecoderConfig::default(), 3).unwrap();
    let spec = &class_table(4, 9)[0];
    let style = StyleSpec::sample(5);
    let stream = generate_sign_clip(spec, &style, 32);
    let video = render_video(&stream, cfg.height, cfg.width, &style);
    let clip: Vec<f32> = video.data[..cfg.frames * cfg.height * cfg.width * 3].to_vec();
    let pv = model.patch_vectors(&clip);
    c.bench_function("masked_encode_pool", |bench| {
        bench.iter(|| {
            let mut tape = Tape::with_capacity(256);
            let staged = model.params.stage_const(&mut tape);
            let tokens = model.patchify(&mut tape, &staged, &pv);
            let sel = random_mask(cfg.n_tokens(), cfg.mask_ratio, 7);
            let visible = tape.row_gather(tokens, &sel.visible);
            let z = model.encode(&mut tape, &staged, visible);
            let pooled = model.pool(&mut tape, &staged, z);
            tape.value(pooled).data()[0]
        })
    });
}

fn bench_priors(c: &mut Criterion) {
    let spec = &class_table(4, 9)[1];
    let style = StyleSpec::sample(6);
    let stream = generate_sign_clip(spec, &style, 32);
    let window = stream.window(4, 16);
    let weights = LossWeights::default();
    let opts = priors::ActivityOptions::default();
    c.bench_function("prior_targets_16_frames", |bench| {
        bench.iter(|| {
            let mask = confidence_mask(&window, 0.5);
            priors::prior_targets(&window, &mask, &weights, &opts).activity
        })
    });
}

fn bench_query(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rows: Vec<(u32, u32, Vec<f64>)> = (0..1000)
        .map(|i| {
            (
                (i % 10) as u32,
                i as u32,
                (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            )
        })
        .collect();
    let index = RetrievalIndex::build(&rows).unwrap();
    let q: Vec<f64> = (0..64).map(|_| rng.gen_range(-1.0..1.0)).collect();
    c.bench_function("cosine_query_1000x64", |bench| {
        bench.iter(|| index.query(&q, 5))
    });
}

criterion_group!(benches, bench_matmul, bench_masked_encode, bench_priors, bench_query);
criterion_main!(benches);

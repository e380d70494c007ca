//! Recognition harness on real pipeline features at a tiny scale: short
//! pretrain, feature extraction, class probability distribution, then the
//! linear classifier with and without the KL regularizer.

use signrep_core::model::{DecoderConfig, EncoderConfig};
use signrep_core::retrieval::ClassDistribution;
use signrep_core::synth::{make_dataset, Split, SynthConfig};
use signrep_core::trainer::{
    aggregate, extract_segments, finetune_recognition, load_dataset, pretrain, FinetuneConfig,
    PretrainConfig,
};

#[test]
fn recognition_pipeline_with_class_distribution() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SynthConfig {
        classes: 3,
        samples_per_class: 6,
        frames: 32,
        height: 16,
        width: 16,
        train_fraction: 0.75,
        seed: 31,
    };
    let manifest = make_dataset(&synth, dir.path()).unwrap();
    let data = load_dataset(dir.path(), &manifest).unwrap();

    let encoder = EncoderConfig {
        frames: 8,
        height: 16,
        width: 16,
        channels: 3,
        patch_t: 2,
        patch_s: 4,
        embed_dim: 16,
        blocks: 1,
        heads: 4,
        mask_ratio: 0.75,
    };
    let decoder = DecoderConfig { hidden: 16, out_dim: 8 };
    let cfg = PretrainConfig {
        steps: 60,
        batch_pairs: 3,
        eval_every: 0,
        seed: 31,
        ..PretrainConfig::default()
    };
    let out = pretrain(&data, encoder, decoder, &cfg).unwrap();

    let train_items = data.split(Split::Train);
    let test_items = data.split(Split::Test);
    let train_rows = aggregate(&extract_segments(&out.model, &train_items, 4), true);
    let test_rows = aggregate(&extract_segments(&out.model, &test_items, 4), true);

    let feats: Vec<Vec<f64>> = train_rows.iter().map(|(_, _, v)| v.clone()).collect();
    let labels: Vec<u32> = train_rows.iter().map(|(l, _, _)| *l).collect();
    let phi = ClassDistribution::build(&feats, &labels);
    phi.validate().unwrap();
    assert_eq!(phi.classes(), 3);

    let train: Vec<(u32, Vec<f64>)> =
        train_rows.iter().map(|(l, _, v)| (*l, v.clone())).collect();
    let test: Vec<(u32, Vec<f64>)> =
        test_rows.iter().map(|(l, _, v)| (*l, v.clone())).collect();
    let ft = FinetuneConfig {
        steps: 120,
        kappa: 0.2,
        seed: 5,
        ..FinetuneConfig::default()
    };
    let (_, with_kl) = finetune_recognition(&train, &test, 3, Some(&phi), &ft).unwrap();
    assert!(with_kl.top1 <= with_kl.top5);
    assert!((0.0..=1.0).contains(&with_kl.top1));
    assert!(with_kl.final_loss.is_finite());

    // kappa = 0 must run the same harness without the regularizer
    let ft0 = FinetuneConfig { kappa: 0.0, ..ft };
    let (_, plain) = finetune_recognition(&train, &test, 3, Some(&phi), &ft0).unwrap();
    assert!(plain.top1 <= plain.top5);
}

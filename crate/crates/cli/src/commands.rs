use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use signrep_core::model::{load_checkpoint, save_checkpoint, CheckpointMeta, SignModel};
use signrep_core::retrieval::{
    temperature_search_on_grid, class_similarity_matrix, FeatureStore, RetrievalIndex,
};
use signrep_core::synth::{make_dataset, Manifest, Split};
use signrep_core::trainer::{
    aggregate, evaluate_retrieval, extract_video_segments, load_dataset, pretrain, StepRecord,
};

use crate::config::RunConfig;

fn ensure_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Every command records the configuration it actually ran with.
pub fn log_resolved_config(cfg: &RunConfig, out_dir: &Path) -> Result<()> {
    ensure_out(out_dir)?;
    let text = cfg.to_text();
    print!("{text}");
    std::fs::write(out_dir.join("resolved_config.txt"), text)?;
    Ok(())
}

pub fn cmd_generate(cfg: &RunConfig, dump_priors: bool) -> Result<()> {
    let data_dir = PathBuf::from(&cfg.data_dir);
    ensure_out(&data_dir)?;
    let manifest = make_dataset(&cfg.synth_config(), &data_dir)?;
    println!(
        "generated {} videos over {} classes into {}",
        manifest.items.len(),
        manifest.classes,
        data_dir.display()
    );
    if dump_priors {
        dump_first_priors(cfg, &data_dir, &manifest)?;
    }
    Ok(())
}

// Debug dump: the first item's prior targets in JSON form.
fn dump_first_priors(cfg: &RunConfig, data_dir: &Path, manifest: &Manifest) -> Result<()> {
    use signrep_core::pose::{confidence_mask, load_pose_stream};
    use signrep_core::priors::{prior_targets, PriorKind};
    let item = manifest.items.first().context("empty manifest")?;
    let stream = load_pose_stream(data_dir.join(&item.pose_path))?;
    let mask = confidence_mask(&stream, cfg.confidence_threshold);
    let set = prior_targets(&stream, &mask, &cfg.loss_weights(), &cfg.activity_options());
    let mut families = serde_json::Map::new();
    for kind in PriorKind::ALL {
        families.insert(
            kind.name().to_string(),
            serde_json::json!({
                "frames": set.frames,
                "dim": kind.dim(),
                "targets": set.target(kind).data(),
                "mask": set.mask(kind).data(),
            }),
        );
    }
    let doc = serde_json::json!({
        "item": item.id,
        "activity": set.activity,
        "priors": families,
    });
    let path = data_dir.join(format!("priors_{:04}.json", item.id));
    std::fs::write(&path, serde_json::to_vec_pretty(&doc)?)?;
    println!("dumped priors for item {} to {}", item.id, path.display());
    Ok(())
}

pub fn cmd_pretrain(cfg: &RunConfig) -> Result<()> {
    let data_dir = PathBuf::from(&cfg.data_dir);
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_out(&out_dir)?;
    let manifest = Manifest::load(data_dir.join("manifest.json"))
        .with_context(|| format!("loading manifest from {}", data_dir.display()))?;
    let data = load_dataset(&data_dir, &manifest)?;
    let out = pretrain(
        &data,
        cfg.encoder_config(),
        cfg.decoder_config(),
        &cfg.pretrain_config(),
    )?;

    let mut log_text = String::from(StepRecord::csv_header());
    log_text.push('\n');
    for rec in &out.log {
        log_text.push_str(&rec.to_csv_row());
        log_text.push('\n');
    }
    std::fs::write(out_dir.join("training_log.csv"), log_text)?;

    let meta = CheckpointMeta {
        encoder: cfg.encoder_config(),
        decoder: cfg.decoder_config(),
        disc_hidden: out.disc.cfg.hidden,
        step: cfg.steps,
    };
    save_checkpoint(
        out_dir.join("checkpoint_last.srck"),
        &meta,
        &[("", &out.model.params), ("disc.", &out.disc.params)],
    )?;
    let best_meta = CheckpointMeta {
        step: out.best_step,
        ..meta
    };
    save_checkpoint(
        out_dir.join("checkpoint_best.srck"),
        &best_meta,
        &[("", &out.best_params), ("disc.", &out.disc.params)],
    )?;
    let last = out.log.last().context("no steps ran")?;
    println!(
        "pretrained {} steps: final total {:.4}, recon {:.4}; best selection DCG {:.4} at step {}",
        cfg.steps, last.total, last.recon, out.best_dcg, out.best_step
    );
    Ok(())
}

fn load_model(checkpoint: &Path) -> Result<(CheckpointMeta, SignModel)> {
    let (meta, tensors) = load_checkpoint(checkpoint)?;
    let model = SignModel::from_checkpoint(&meta, &tensors)?;
    Ok((meta, model))
}

fn load_split_videos(
    data_dir: &Path,
    manifest: &Manifest,
    split: Split,
) -> Result<Vec<(u32, u32, signrep_core::synth::VideoTensor)>> {
    let mut out = Vec::new();
    for item in manifest.split_items(split) {
        let video = signrep_core::synth::load_video(data_dir.join(&item.video_path))?;
        out.push((item.class_id, item.id, video));
    }
    Ok(out)
}

pub fn cmd_extract(
    cfg: &RunConfig,
    checkpoint: &Path,
    manifest_path: &Path,
    splits: &[Split],
) -> Result<()> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_out(&out_dir)?;
    let (meta, model) = load_model(checkpoint)?;
    if meta.encoder != cfg.encoder_config() {
        bail!(
            "checkpoint encoder configuration {:?} does not match the run configuration {:?}",
            meta.encoder,
            cfg.encoder_config()
        );
    }
    let manifest = Manifest::load(manifest_path)?;
    let data_dir = manifest_path.parent().context("manifest path has no parent")?;
    for &split in splits {
        let videos = load_split_videos(data_dir, &manifest, split)?;
        let refs: Vec<(u32, u32, &signrep_core::synth::VideoTensor)> =
            videos.iter().map(|(l, i, v)| (*l, *i, v)).collect();
        let segments = extract_video_segments(&model, &refs, cfg.stride);
        for (weighted, tag) in [(true, "weighted"), (false, "avg")] {
            let rows = aggregate(&segments, weighted);
            let store = FeatureStore {
                dim: model.encoder.embed_dim,
                rows,
            };
            let name = format!(
                "features_{}_{tag}.srft",
                match split {
                    Split::Train => "train",
                    Split::Test => "test",
                }
            );
            store.save(out_dir.join(&name))?;
            println!("wrote {} ({} rows)", out_dir.join(&name).display(), store.rows.len());
        }
    }
    Ok(())
}

fn variant(weighted: bool) -> &'static str {
    if weighted {
        "weighted"
    } else {
        "avg"
    }
}

pub fn cmd_retrieve(cfg: &RunConfig, features_dir: &Path) -> Result<()> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_out(&out_dir)?;
    let tag = variant(cfg.weighted);
    let dict = FeatureStore::load(features_dir.join(format!("features_train_{tag}.srft")))?;
    let queries = FeatureStore::load(features_dir.join(format!("features_test_{tag}.srft")))?;
    let (ranks, metrics) = evaluate_retrieval(&dict.rows, &queries.rows);

    let metrics_csv = format!(
        "dcg,mrr,rec1,rec5\n{},{},{},{}\n",
        metrics.dcg, metrics.mrr, metrics.rec1, metrics.rec5
    );
    std::fs::write(out_dir.join("metrics.csv"), &metrics_csv)?;

    let index = RetrievalIndex::build(&dict.rows)?;
    let mut topk = String::from("query_id,rank,label,score\n");
    for (label, id, z) in &queries.rows {
        for (rank, (hit_label, _, score)) in index.query(z, cfg.topk).iter().enumerate() {
            topk.push_str(&format!("{id},{},{hit_label},{score}\n", rank + 1));
        }
        let _ = label;
    }
    std::fs::write(out_dir.join("topk.csv"), topk)?;
    let _ = ranks;
    println!(
        "retrieval ({tag}): dcg {:.4} mrr {:.4} rec@1 {:.4} rec@5 {:.4}",
        metrics.dcg, metrics.mrr, metrics.rec1, metrics.rec5
    );
    Ok(())
}

pub fn cmd_classdist(cfg: &RunConfig, features: &Path) -> Result<()> {
    let out_dir = PathBuf::from(&cfg.out_dir);
    ensure_out(&out_dir)?;
    let store = FeatureStore::load(features)?;
    let feats: Vec<Vec<f64>> = store.rows.iter().map(|(_, _, v)| v.clone()).collect();
    let labels: Vec<u32> = store.rows.iter().map(|(l, _, _)| *l).collect();
    let sim = class_similarity_matrix(&feats, &labels);
    let classes = sim.len();
    let mut phi_csv = String::from("class");
    for j in 0..classes {
        phi_csv.push_str(&format!(",p{j}"));
    }
    phi_csv.push('\n');
    let mut tau_csv = String::from("class,tau\n");
    for (c, row) in sim.iter().enumerate() {
        let (tau, dist) = temperature_search_on_grid(
            row,
            cfg.tau_grid_start,
            cfg.tau_grid_stop,
            cfg.tau_grid_step,
        );
        phi_csv.push_str(&c.to_string());
        for p in &dist {
            phi_csv.push_str(&format!(",{p}"));
        }
        phi_csv.push('\n');
        tau_csv.push_str(&format!("{c},{tau}\n"));
    }
    std::fs::write(out_dir.join("phi.csv"), phi_csv)?;
    std::fs::write(out_dir.join("tau.csv"), tau_csv)?;
    println!("wrote phi.csv and tau.csv for {classes} classes");
    Ok(())
}

pub fn cmd_report(run_dir: &Path) -> Result<()> {
    let log_path = run_dir.join("training_log.csv");
    let log = std::fs::read_to_string(&log_path)
        .with_context(|| format!("reading {}", log_path.display()))?;
    let mut lines = log.lines();
    let header = lines.next().context("empty training log")?;
    let cols: Vec<&str> = header.split(',').collect();
    let col = |name: &str| {
        cols.iter()
            .position(|&c| c == name)
            .with_context(|| format!("training log lacks column {name}"))
    };
    let (c_step, c_total, c_recon, c_var, c_cov, c_adv) = (
        col("step")?,
        col("total")?,
        col("recon")?,
        col("var")?,
        col("cov")?,
        col("adv")?,
    );
    let mut curve = String::from("step,total,recon,var,cov,adv\n");
    let mut first: Option<Vec<String>> = None;
    let mut last: Option<Vec<String>> = None;
    let mut count = 0usize;
    for line in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<String> = line.split(',').map(|s| s.to_string()).collect();
        curve.push_str(&format!(
            "{},{},{},{},{},{}\n",
            f[c_step], f[c_total], f[c_recon], f[c_var], f[c_cov], f[c_adv]
        ));
        if first.is_none() {
            first = Some(f.clone());
        }
        last = Some(f);
        count += 1;
    }
    std::fs::write(run_dir.join("loss_curve.csv"), curve)?;
    let mut summary = String::new();
    summary.push_str(&format!("steps logged: {count}\n"));
    if let (Some(first), Some(last)) = (first, last) {
        summary.push_str(&format!(
            "total: {} -> {}\nrecon: {} -> {}\n",
            first[c_total], last[c_total], first[c_recon], last[c_recon]
        ));
    }
    if let Ok(metrics) = std::fs::read_to_string(run_dir.join("metrics.csv")) {
        summary.push_str("retrieval metrics:\n");
        summary.push_str(&metrics);
    }
    std::fs::write(run_dir.join("summary.txt"), &summary)?;
    print!("{summary}");
    Ok(())
}

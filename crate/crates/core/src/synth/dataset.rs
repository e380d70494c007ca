use std::path::Path;

use rayon::prelude::*;

use super::render::{render_video, save_video};
use super::{class_table, derive_seed, generate_sign_clip, SignClassSpec, StyleSpec, SynthError};
use crate::pose::save_pose_stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ManifestItem {
    pub id: u32,
    pub class_id: u32,
    pub style_seed: u64,
    pub split: Split,
    pub pose_path: String,
    pub video_path: String,
    pub frames: usize,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Manifest {
    pub classes: usize,
    pub samples_per_class: usize,
    pub seed: u64,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub fps: f32,
    pub items: Vec<ManifestItem>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, SynthError> {
        Ok(serde_json::from_slice(&std::fs::read(path.as_ref())?)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SynthError> {
        let bytes = serde_json::to_vec_pretty(self)?;
        std::fs::write(path.as_ref(), bytes)?;
        Ok(())
    }

    pub fn split_items(&self, split: Split) -> impl Iterator<Item = &ManifestItem> {
        self.items.iter().filter(move |i| i.split == split)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthConfig {
    pub classes: usize,
    pub samples_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            classes: 10,
            samples_per_class: 20,
            frames: 32,
            height: 32,
            width: 32,
            train_fraction: 0.75,
            seed: 7,
        }
    }
}

/// Generate the dataset under `out_dir`: pose streams, rendered videos and
/// a manifest with a class-stratified train/test split. Deterministic for
/// a given config; videos are generated in parallel with per-item seeds so
/// the output does not depend on the worker count.
pub fn make_dataset(cfg: &SynthConfig, out_dir: impl AsRef<Path>) -> Result<Manifest, SynthError> {
    if cfg.classes < 2 {
        return Err(SynthError::Invalid("need at least 2 classes".into()));
    }
    if cfg.frames < 32 {
        return Err(SynthError::Invalid(
            "clips must allow two distinct windows (at least 32 frames)".into(),
        ));
    }
    let out_dir = out_dir.as_ref();
    std::fs::create_dir_all(out_dir.join("pose"))?;
    std::fs::create_dir_all(out_dir.join("video"))?;

    let classes = class_table(cfg.classes, cfg.seed);
    assert_distinct(&classes);

    let train_per_class = ((cfg.samples_per_class as f64) * cfg.train_fraction).ceil() as usize;
    let mut items = Vec::with_capacity(cfg.classes * cfg.samples_per_class);
    for c in 0..cfg.classes {
        for s in 0..cfg.samples_per_class {
            let id = (c * cfg.samples_per_class + s) as u32;
            items.push(ManifestItem {
                id,
                class_id: c as u32,
                style_seed: derive_seed(cfg.seed, 0x57e1, id as u64),
                split: if s < train_per_class { Split::Train } else { Split::Test },
                pose_path: format!("pose/{id:04}.srps"),
                video_path: format!("video/{id:04}.srvd"),
                frames: cfg.frames,
            });
        }
    }

    items
        .par_iter()
        .map(|item| -> Result<(), SynthError> {
            let spec = &classes[item.class_id as usize];
            let style = StyleSpec::sample(item.style_seed);
            let stream = generate_sign_clip(spec, &style, cfg.frames);
            let video = render_video(&stream, cfg.height, cfg.width, &style);
            save_pose_stream(&stream, out_dir.join(&item.pose_path))?;
            save_video(&video, out_dir.join(&item.video_path))?;
            Ok(())
        })
        .collect::<Result<Vec<_>, _>>()?;

    let manifest = Manifest {
        classes: cfg.classes,
        samples_per_class: cfg.samples_per_class,
        seed: cfg.seed,
        frames: cfg.frames,
        height: cfg.height,
        width: cfg.width,
        fps: 12.0,
        items,
    };
    manifest.save(out_dir.join("manifest.json"))?;
    Ok(manifest)
}

fn assert_distinct(classes: &[SignClassSpec]) {
    for a in 0..classes.len() {
        for b in (a + 1)..classes.len() {
            let (x, y) = (&classes[a], &classes[b]);
            let dist = (x.right.frequency[0] - y.right.frequency[0]).abs()
                + (x.right.center[0] - y.right.center[0]).abs()
                + (x.right.amplitude[0] - y.right.amplitude[0]).abs()
                + (x.right.phase[0] - y.right.phase[0]).abs()
                + x.shape_base
                    .iter()
                    .zip(&y.shape_base)
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>();
            assert!(dist > 0.0, "classes {a} and {b} share parameters");
        }
    }
}

use std::path::Path;

use super::TrainError;
use crate::pose::{load_pose_stream, median_bone_lengths, normalize_bones, BoneLengths, PoseStream};
use crate::synth::{load_video, Manifest, Split, VideoTensor};

/// One dataset item held in memory: the rendered video and its
/// bone-normalized pose stream.
pub struct LoadedItem {
    pub id: u32,
    pub class_id: u32,
    pub video_id: u64,
    pub split: Split,
    pub stream: PoseStream,
    pub video: VideoTensor,
}

pub struct LoadedDataset {
    pub manifest: Manifest,
    pub items: Vec<LoadedItem>,
    pub bones: BoneLengths,
}

impl LoadedDataset {
    pub fn split(&self, split: Split) -> Vec<&LoadedItem> {
        self.items.iter().filter(|i| i.split == split).collect()
    }
}

/// Load every stream and video referenced by the manifest, derive the
/// median bone lengths from the training split, and normalize all streams
/// with them.
pub fn load_dataset(dir: impl AsRef<Path>, manifest: &Manifest) -> Result<LoadedDataset, TrainError> {
    let dir = dir.as_ref();
    let mut raw = Vec::with_capacity(manifest.items.len());
    for item in &manifest.items {
        let stream = load_pose_stream(dir.join(&item.pose_path))?;
        let video = load_video(dir.join(&item.video_path))?;
        if video.frames != stream.frames {
            return Err(TrainError::Invalid(format!(
                "item {}: video has {} frames but the pose stream has {}",
                item.id, video.frames, stream.frames
            )));
        }
        raw.push((item, stream, video));
    }
    let train_streams: Vec<&PoseStream> = raw
        .iter()
        .filter(|(i, _, _)| i.split == Split::Train)
        .map(|(_, s, _)| s)
        .collect();
    let bones = median_bone_lengths(&train_streams)?;
    let mut items = Vec::with_capacity(raw.len());
    for (item, stream, video) in raw {
        items.push(LoadedItem {
            id: item.id,
            class_id: item.class_id,
            video_id: item.id as u64,
            split: item.split,
            stream: normalize_bones(&stream, &bones)?,
            video,
        });
    }
    Ok(LoadedDataset {
        manifest: manifest.clone(),
        items,
        bones,
    })
}

/// Copy of frames [start, start + len) of a video, repeating the final
/// frame when the video is shorter.
pub fn video_window(video: &VideoTensor, start: usize, len: usize) -> Vec<f32> {
    let stride = video.height * video.width * video.channels;
    let mut out = Vec::with_capacity(len * stride);
    for t in 0..len {
        let src = (start + t).min(video.frames - 1);
        out.extend_from_slice(&video.data[src * stride..(src + 1) * stride]);
    }
    out
}

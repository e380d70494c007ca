use rayon::prelude::*;

use super::data::LoadedItem;
use crate::model::SignModel;
use crate::retrieval::{
    retrieval_metrics, sliding_segments, video_representation, RetrievalIndex, RetrievalMetrics,
    SegmentEmbedding,
};
use crate::synth::VideoTensor;

fn clip_of(video: &VideoTensor, start: usize, len: usize) -> Vec<f32> {
    let stride = video.height * video.width * video.channels;
    let mut out = Vec::with_capacity(len * stride);
    for t in 0..len {
        let src = (start + t).min(video.frames - 1);
        out.extend_from_slice(&video.data[src * stride..(src + 1) * stride]);
    }
    out
}

/// Sliding-window segment embeddings for one video, computed without
/// masking. The activity gate is the larger of the two sigmoid hand
/// activities. Videos shorter than the window repeat their last frame.
pub fn segment_embeddings(
    model: &SignModel,
    video: &VideoTensor,
    stride: usize,
) -> Vec<SegmentEmbedding> {
    let frames = model.encoder.frames;
    sliding_segments(video.frames, frames, stride)
        .into_iter()
        .map(|start| {
            let clip = clip_of(video, start, frames);
            let pv = model.patch_vectors(&clip);
            let mut tape = crate::diffcore::Tape::with_capacity(256);
            let staged = model.params.stage_const(&mut tape);
            let tokens = model.patchify(&mut tape, &staged, &pv);
            let z_emb = model.encode(&mut tape, &staged, tokens);
            let z_avg = model.pool(&mut tape, &staged, z_emb);
            let logits = model.activity_logits(&mut tape, &staged, z_avg);
            let probs = tape.sigmoid(logits);
            let p = tape.value(probs).data();
            let gamma = p[0].max(p[1]);
            SegmentEmbedding {
                z_avg: tape.value(z_avg).data().to_vec(),
                gamma,
                start,
            }
        })
        .collect()
}

/// Per-video segments for a set of labeled videos, parallel over videos.
pub fn extract_video_segments(
    model: &SignModel,
    videos: &[(u32, u32, &VideoTensor)],
    stride: usize,
) -> Vec<(u32, u32, Vec<SegmentEmbedding>)> {
    videos
        .par_iter()
        .map(|(label, id, video)| (*label, *id, segment_embeddings(model, video, stride)))
        .collect()
}

/// Per-video features for loaded dataset items.
pub fn extract_segments(
    model: &SignModel,
    items: &[&LoadedItem],
    stride: usize,
) -> Vec<(u32, u32, Vec<SegmentEmbedding>)> {
    let videos: Vec<(u32, u32, &VideoTensor)> = items
        .iter()
        .map(|i| (i.class_id, i.id, &i.video))
        .collect();
    extract_video_segments(model, &videos, stride)
}

pub fn aggregate(
    segments: &[(u32, u32, Vec<SegmentEmbedding>)],
    weighted: bool,
) -> Vec<(u32, u32, Vec<f64>)> {
    segments
        .iter()
        .map(|(label, id, segs)| (*label, *id, video_representation(segs, weighted)))
        .collect()
}

/// Dictionary retrieval of the query set against the dictionary rows:
/// correct-class ranks and the aggregate metrics.
pub fn evaluate_retrieval(
    dictionary: &[(u32, u32, Vec<f64>)],
    queries: &[(u32, u32, Vec<f64>)],
) -> (Vec<usize>, RetrievalMetrics) {
    let index = RetrievalIndex::build(dictionary).expect("dictionary rows");
    let ranks: Vec<usize> = queries
        .iter()
        .map(|(label, _, z)| index.class_rank(z, *label))
        .collect();
    let metrics = retrieval_metrics(&ranks);
    (ranks, metrics)
}

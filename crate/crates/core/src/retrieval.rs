//! Dictionary retrieval: sliding-window segment embeddings, activity-
//! weighted video representations, exact cosine top-k over a normalized
//! index, rank metrics, and the temperature-scaled class probability
//! distribution.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("feature store truncated")]
    Truncated,
    #[error("bad feature store magic")]
    BadMagic,
    #[error("embedding row {row} has near-zero norm")]
    ZeroRow { row: usize },
    #[error("{0}")]
    Invalid(String),
}

/// One sliding-window embedding: the unnormalized clip embedding, the
/// activity gate (max of the two sigmoid hand-activity outputs) and the
/// window's start frame.
#[derive(Debug, Clone)]
pub struct SegmentEmbedding {
    pub z_avg: Vec<f64>,
    pub gamma: f64,
    pub start: usize,
}

/// Window start offsets {0, stride, ...}; count floor((len - window)/stride) + 1.
/// A video shorter than the window yields a single start at 0 (the caller
/// pads by repeating the last frame).
pub fn sliding_segments(len: usize, window: usize, stride: usize) -> Vec<usize> {
    assert!(stride >= 1, "stride {stride}");
    if len < window {
        return vec![0];
    }
    (0..=(len - window) / stride).map(|i| i * stride).collect()
}

/// Activity-weighted mean of segment embeddings; plain mean when
/// `weighted` is false or the gates vanish.
pub fn video_representation(segments: &[SegmentEmbedding], weighted: bool) -> Vec<f64> {
    assert!(!segments.is_empty(), "no segments");
    let d = segments[0].z_avg.len();
    let mut out = vec![0.0; d];
    let gate = |s: &SegmentEmbedding| if weighted { s.gamma } else { 1.0 };
    let total: f64 = segments.iter().map(gate).sum();
    if weighted && total < 1e-6 {
        return video_representation(segments, false);
    }
    for s in segments {
        let g = gate(s);
        for (o, &v) in out.iter_mut().zip(&s.z_avg) {
            *o += g * v;
        }
    }
    for o in out.iter_mut() {
        *o /= total;
    }
    out
}

/// L2-normalized dictionary with a label and sample id per row.
#[derive(Debug, Clone)]
pub struct RetrievalIndex {
    rows: Vec<Vec<f64>>,
    labels: Vec<u32>,
    sample_ids: Vec<u32>,
    dim: usize,
}

fn normalized(v: &[f64], row: usize) -> Result<Vec<f64>, RetrievalError> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm < 1e-12 {
        return Err(RetrievalError::ZeroRow { row });
    }
    Ok(v.iter().map(|x| x / norm).collect())
}

impl RetrievalIndex {
    pub fn build(entries: &[(u32, u32, Vec<f64>)]) -> Result<Self, RetrievalError> {
        if entries.is_empty() {
            return Err(RetrievalError::Invalid("empty index".into()));
        }
        let dim = entries[0].2.len();
        let mut rows = Vec::with_capacity(entries.len());
        let mut labels = Vec::with_capacity(entries.len());
        let mut sample_ids = Vec::with_capacity(entries.len());
        for (i, (label, sample, v)) in entries.iter().enumerate() {
            if v.len() != dim {
                return Err(RetrievalError::Invalid(format!(
                    "row {i} has dim {} instead of {dim}",
                    v.len()
                )));
            }
            rows.push(normalized(v, i)?);
            labels.push(*label);
            sample_ids.push(*sample);
        }
        Ok(RetrievalIndex {
            rows,
            labels,
            sample_ids,
            dim,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    fn scores(&self, query: &[f64]) -> Vec<f64> {
        let q = normalized(query, usize::MAX).expect("query with zero norm");
        self.rows
            .iter()
            .map(|r| r.iter().zip(&q).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Top-k rows by descending cosine similarity; ties broken by lower
    /// row id. Returns (label, sample id, score).
    pub fn query(&self, query: &[f64], k: usize) -> Vec<(u32, u32, f64)> {
        assert!(k >= 1, "k must be at least 1");
        let scores = self.scores(query);
        let mut order: Vec<usize> = (0..self.rows.len()).collect();
        order.sort_by(|&a, &b| {
            scores[b]
                .partial_cmp(&scores[a])
                .unwrap()
                .then(a.cmp(&b))
        });
        order
            .into_iter()
            .take(k)
            .map(|i| (self.labels[i], self.sample_ids[i], scores[i]))
            .collect()
    }

    /// 1-based rank of `true_label` when classes are ordered by their
    /// best-scoring sample (ties by that sample's row id).
    pub fn class_rank(&self, query: &[f64], true_label: u32) -> usize {
        let scores = self.scores(query);
        // best row per class, first-lowest row wins ties within a class
        let mut best: std::collections::BTreeMap<u32, (f64, usize)> = Default::default();
        for (i, &label) in self.labels.iter().enumerate() {
            let entry = best.entry(label).or_insert((f64::NEG_INFINITY, usize::MAX));
            if scores[i] > entry.0 {
                *entry = (scores[i], i);
            }
        }
        let mut classes: Vec<(u32, f64, usize)> =
            best.into_iter().map(|(l, (s, i))| (l, s, i)).collect();
        classes.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.2.cmp(&b.2)));
        classes
            .iter()
            .position(|&(l, _, _)| l == true_label)
            .expect("label present in index")
            + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RetrievalMetrics {
    pub dcg: f64,
    pub mrr: f64,
    pub rec1: f64,
    pub rec5: f64,
}

/// Single-relevant-item metrics over per-query correct-class ranks.
pub fn retrieval_metrics(ranks: &[usize]) -> RetrievalMetrics {
    assert!(!ranks.is_empty(), "no ranks");
    assert!(ranks.iter().all(|&r| r >= 1), "ranks are 1-based");
    let n = ranks.len() as f64;
    let dcg = ranks.iter().map(|&r| 1.0 / ((r as f64) + 1.0).log2()).sum::<f64>() / n;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    let rec1 = ranks.iter().filter(|&&r| r <= 1).count() as f64 / n;
    let rec5 = ranks.iter().filter(|&&r| r <= 5).count() as f64 / n;
    RetrievalMetrics { dcg, mrr, rec1, rec5 }
}

/// Mean cosine similarity between samples of class a and class b over all
/// cross pairs; within a class, self-pairs are excluded unless the class
/// has a single sample.
pub fn class_similarity_matrix(features: &[Vec<f64>], labels: &[u32]) -> Vec<Vec<f64>> {
    assert_eq!(features.len(), labels.len());
    let classes: Vec<u32> = {
        let mut c: Vec<u32> = labels.to_vec();
        c.sort_unstable();
        c.dedup();
        c
    };
    let normed: Vec<Vec<f64>> = features
        .iter()
        .enumerate()
        .map(|(i, f)| normalized(f, i).expect("zero-norm feature"))
        .collect();
    let cos = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let c = classes.len();
    let mut out = vec![vec![0.0; c]; c];
    for (ai, &ca) in classes.iter().enumerate() {
        let rows_a: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == ca).collect();
        for (bi, &cb) in classes.iter().enumerate() {
            let rows_b: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == cb).collect();
            let mut sum = 0.0;
            let mut count = 0usize;
            for &i in &rows_a {
                for &j in &rows_b {
                    if ai == bi && i == j && rows_a.len() > 1 {
                        continue;
                    }
                    sum += cos(&normed[i], &normed[j]);
                    count += 1;
                }
            }
            out[ai][bi] = sum / count as f64;
        }
    }
    out
}

/// Default temperature grid: {0.001, 0.002, ..., 0.100}.
pub const TAU_GRID: (f64, f64, f64) = (0.001, 0.1, 0.001);

fn softmax(row: &[f64], tau: f64) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|&v| ((v - max) / tau).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Pick the temperature on the default grid {0.001, ..., 0.100} whose
/// softmax has the largest class probability below 0.5 and as close to it
/// as possible; fall back to the grid maximum when no point achieves a
/// maximum under 0.5. Returns the temperature and the scaled row.
pub fn temperature_search(row: &[f64]) -> (f64, Vec<f64>) {
    let (start, stop, step) = TAU_GRID;
    temperature_search_on_grid(row, start, stop, step)
}

/// [`temperature_search`] over an explicit inclusive grid.
pub fn temperature_search_on_grid(
    row: &[f64],
    start: f64,
    stop: f64,
    step: f64,
) -> (f64, Vec<f64>) {
    assert!(start > 0.0 && stop >= start && step > 0.0, "temperature grid");
    let points = ((stop - start) / step).round() as usize + 1;
    let tau_at = |i: usize| start + i as f64 * step;
    let mut best: Option<(f64, f64, Vec<f64>)> = None; // (max_prob, tau, dist)
    for i in 0..points {
        let tau = tau_at(i);
        let dist = softmax(row, tau);
        let max = dist.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if max < 0.5 {
            let better = match &best {
                None => true,
                Some((bm, _, _)) => max > *bm, // closest to 0.5 from below
            };
            if better {
                best = Some((max, tau, dist));
            }
        }
    }
    match best {
        Some((_, tau, dist)) => (tau, dist),
        None => {
            let tau = tau_at(points - 1);
            let dist = softmax(row, tau);
            (tau, dist)
        }
    }
}

/// Row-stochastic class probability distribution with its per-class
/// temperatures.
#[derive(Debug, Clone)]
pub struct ClassDistribution {
    pub phi: Vec<Vec<f64>>,
    pub tau: Vec<f64>,
}

impl ClassDistribution {
    /// Build from per-video features and labels: inter-class cosine
    /// similarities, then a per-row temperature search.
    pub fn build(features: &[Vec<f64>], labels: &[u32]) -> Self {
        let sim = class_similarity_matrix(features, labels);
        let mut phi = Vec::with_capacity(sim.len());
        let mut tau = Vec::with_capacity(sim.len());
        for row in &sim {
            let (t, dist) = temperature_search(row);
            tau.push(t);
            phi.push(dist);
        }
        ClassDistribution { phi, tau }
    }

    pub fn classes(&self) -> usize {
        self.phi.len()
    }

    pub fn validate(&self) -> Result<(), RetrievalError> {
        for (i, row) in self.phi.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(RetrievalError::Invalid(format!("phi row {i} sums to {sum}")));
            }
            if row.iter().any(|&p| !(0.0..1.0).contains(&p) || p == 0.0) {
                return Err(RetrievalError::Invalid(format!(
                    "phi row {i} has entries outside (0,1)"
                )));
            }
        }
        if self.tau.iter().any(|&t| !(0.001..=0.1).contains(&t)) {
            return Err(RetrievalError::Invalid("tau outside [0.001, 0.1]".into()));
        }
        Ok(())
    }
}

pub const FEATURE_MAGIC: &[u8; 8] = b"SRFT0001";

/// Per-video features with labels and sample ids, as stored on disk:
/// magic, u32 row count, u32 dim, then per row a u32 label, u32 sample id
/// and the f32 embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    pub dim: usize,
    pub rows: Vec<(u32, u32, Vec<f64>)>,
}

impl FeatureStore {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), RetrievalError> {
        let mut w = BufWriter::new(File::create(path.as_ref())?);
        w.write_all(FEATURE_MAGIC)?;
        w.write_all(&(self.rows.len() as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for (label, sample, v) in &self.rows {
            w.write_all(&label.to_le_bytes())?;
            w.write_all(&sample.to_le_bytes())?;
            for &x in v {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, RetrievalError> {
        let mut r = BufReader::new(File::open(path.as_ref())?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| RetrievalError::Truncated)?;
        if &magic != FEATURE_MAGIC {
            return Err(RetrievalError::BadMagic);
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4).map_err(|_| RetrievalError::Truncated)?;
        let count = u32::from_le_bytes(b4) as usize;
        r.read_exact(&mut b4).map_err(|_| RetrievalError::Truncated)?;
        let dim = u32::from_le_bytes(b4) as usize;
        let mut rows = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut b4).map_err(|_| RetrievalError::Truncated)?;
            let label = u32::from_le_bytes(b4);
            r.read_exact(&mut b4).map_err(|_| RetrievalError::Truncated)?;
            let sample = u32::from_le_bytes(b4);
            let mut bytes = vec![0u8; dim * 4];
            r.read_exact(&mut bytes).map_err(|_| RetrievalError::Truncated)?;
            let v = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            rows.push((label, sample, v));
        }
        Ok(FeatureStore { dim, rows })
    }
}

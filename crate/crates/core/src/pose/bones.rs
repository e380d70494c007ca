//! Bone-length statistics and skeleton renormalization. Replacing every
//! bone with its corpus-median length gives all signers the same body
//! shape, which keeps person-specific proportions out of the keypoint
//! targets.

use super::layout::{bone, bone_name, parent, BONE_COUNT, KEYPOINT_COUNT};
use super::stream::PoseStream;
use super::PoseError;

/// Median length per kinematic edge, indexed by child keypoint minus one.
#[derive(Debug, Clone, PartialEq)]
pub struct BoneLengths(pub Vec<f64>);

impl BoneLengths {
    pub fn get(&self, bone_index: usize) -> f64 {
        self.0[bone_index]
    }
}

fn distance(a: [f64; 3], b: [f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Median over the two central values when the count is even.
fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

/// Per-bone median length over every frame, in any stream, where both
/// endpoints have confidence above 0.5.
pub fn median_bone_lengths(streams: &[&PoseStream]) -> Result<BoneLengths, PoseError> {
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); BONE_COUNT];
    for s in streams {
        for t in 0..s.frames {
            for b in 0..BONE_COUNT {
                let (child, par) = bone(b);
                if s.conf(t, child) > 0.5 && s.conf(t, par) > 0.5 {
                    samples[b].push(distance(s.kpt(t, child), s.kpt(t, par)));
                }
            }
        }
    }
    let mut out = Vec::with_capacity(BONE_COUNT);
    for (b, mut lens) in samples.into_iter().enumerate() {
        if lens.is_empty() {
            return Err(PoseError::NoBoneObservations { bone: bone_name(b) });
        }
        lens.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = median(&lens);
        if m <= 0.0 {
            return Err(PoseError::NoBoneObservations { bone: bone_name(b) });
        }
        out.push(m);
    }
    Ok(BoneLengths(out))
}

/// Reposition every keypoint so each bone has exactly its median length,
/// walking the kinematic tree from the root. Directions, the root position,
/// angles and confidences are unchanged. A coincident parent/child pair
/// reuses the bone's direction from the previous frame; on the first frame
/// that is an error.
pub fn normalize_bones(stream: &PoseStream, bones: &BoneLengths) -> Result<PoseStream, PoseError> {
    assert_eq!(bones.0.len(), BONE_COUNT, "bone table extent");
    assert!(bones.0.iter().all(|&l| l > 0.0), "bone lengths must be positive");
    let mut out = stream.clone();
    let mut last_dir = vec![[0.0f64; 3]; BONE_COUNT];
    for t in 0..stream.frames {
        // parents precede children in index order
        for child in 1..KEYPOINT_COUNT {
            let par = parent(child).unwrap();
            let b = child - 1;
            let old_child = stream.kpt(t, child);
            let old_parent = stream.kpt(t, par);
            let d = [
                old_child[0] - old_parent[0],
                old_child[1] - old_parent[1],
                old_child[2] - old_parent[2],
            ];
            let len = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
            let dir = if len < 1e-12 {
                if t == 0 {
                    return Err(PoseError::DegenerateBone {
                        frame: t,
                        bone: bone_name(b),
                    });
                }
                last_dir[b]
            } else {
                [d[0] / len, d[1] / len, d[2] / len]
            };
            last_dir[b] = dir;
            let new_parent = out.kpt(t, par);
            let l = bones.0[b];
            out.set_kpt(
                t,
                child,
                [
                    new_parent[0] + dir[0] * l,
                    new_parent[1] + dir[1] * l,
                    new_parent[2] + dir[2] * l,
                ],
            );
        }
    }
    Ok(out)
}

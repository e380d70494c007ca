//! Sign-prior regression targets computed from a pose-stream clip: wrist-
//! relative hand keypoints, raw body keypoints, sine/cosine joint angles,
//! per-axis displacement matrices and the per-clip hand activity pair,
//! together with confidence-derived loss masks and target scales.

use crate::diffcore::Tensor;
use crate::objectives::LossWeights;
use crate::pose::layout::{
    Hand, BODY_ANGLE_COUNT, HAND_ANGLE_COUNT, HAND_COUNT, HAND_DIST_DESTINATIONS_LOCAL,
    HAND_FINGERTIPS_LOCAL, INTERACTION_DESTINATIONS, INTERACTION_SOURCES, KEYPOINT_COUNT,
    STOMACH_REFERENCE,
};
use crate::pose::PoseStream;

/// The prior families regressed per frame, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    HandKptLeft,
    HandKptRight,
    BodyKpt,
    HandAngleLeft,
    HandAngleRight,
    BodyAngle,
    HandDistLeft,
    HandDistRight,
    BodyDist,
}

impl PriorKind {
    pub const ALL: [PriorKind; 9] = [
        PriorKind::HandKptLeft,
        PriorKind::HandKptRight,
        PriorKind::BodyKpt,
        PriorKind::HandAngleLeft,
        PriorKind::HandAngleRight,
        PriorKind::BodyAngle,
        PriorKind::HandDistLeft,
        PriorKind::HandDistRight,
        PriorKind::BodyDist,
    ];

    /// Flattened per-frame extent.
    pub fn dim(self) -> usize {
        match self {
            PriorKind::HandKptLeft | PriorKind::HandKptRight => HAND_COUNT * 3,
            PriorKind::BodyKpt => KEYPOINT_COUNT * 3,
            PriorKind::HandAngleLeft | PriorKind::HandAngleRight => HAND_ANGLE_COUNT * 2,
            PriorKind::BodyAngle => BODY_ANGLE_COUNT * 2,
            PriorKind::HandDistLeft | PriorKind::HandDistRight => 5 * 11 * 3,
            PriorKind::BodyDist => 12 * 22 * 3,
        }
    }

    /// Target scale factor.
    pub fn psi(self, w: &LossWeights) -> f64 {
        match self {
            PriorKind::HandKptLeft | PriorKind::HandKptRight => w.psi_hand_kpt,
            PriorKind::HandDistLeft | PriorKind::HandDistRight => w.psi_hand_dist,
            _ => 1.0,
        }
    }

    /// Loss weighting factor.
    pub fn weight(self, w: &LossWeights) -> f64 {
        match self {
            PriorKind::HandKptLeft | PriorKind::HandKptRight | PriorKind::BodyKpt => w.w_kpt,
            PriorKind::HandAngleLeft | PriorKind::HandAngleRight | PriorKind::BodyAngle => {
                w.w_angle
            }
            _ => w.w_dist,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PriorKind::HandKptLeft => "left_hand_keypoints",
            PriorKind::HandKptRight => "right_hand_keypoints",
            PriorKind::BodyKpt => "body_keypoints",
            PriorKind::HandAngleLeft => "left_hand_angles",
            PriorKind::HandAngleRight => "right_hand_angles",
            PriorKind::BodyAngle => "body_angles",
            PriorKind::HandDistLeft => "left_hand_distances",
            PriorKind::HandDistRight => "right_hand_distances",
            PriorKind::BodyDist => "hand_interaction_distances",
        }
    }
}

/// Assembled targets for one clip: per-frame flattened tensors [T, dim] per
/// prior family (already scaled by psi), matching 0/1 loss masks, and the
/// per-clip activity pair.
#[derive(Debug, Clone)]
pub struct PriorSet {
    pub frames: usize,
    pub targets: Vec<Tensor>,
    pub masks: Vec<Tensor>,
    /// [left, right], 1.0 = active
    pub activity: [f64; 2],
}

impl PriorSet {
    pub fn target(&self, kind: PriorKind) -> &Tensor {
        &self.targets[kind as usize]
    }

    pub fn mask(&self, kind: PriorKind) -> &Tensor {
        &self.masks[kind as usize]
    }
}

/// Options for the signer-activity heuristic. `y_down` selects the image
/// convention where "below" means larger y. The anchor deciding the
/// position condition is the wrist trajectory by default.
#[derive(Debug, Clone, Copy)]
pub struct ActivityOptions {
    pub y_down: bool,
    pub still_threshold: f64,
    pub use_hand_centroid: bool,
}

impl Default for ActivityOptions {
    fn default() -> Self {
        ActivityOptions {
            y_down: true,
            still_threshold: 0.26,
            use_hand_centroid: false,
        }
    }
}

/// Hand keypoints with the wrist as origin: 21 x 3, wrist row all zeros.
pub fn hand_keypoint_prior(stream: &PoseStream, t: usize, hand: Hand) -> Vec<f64> {
    let wrist = stream.kpt(t, hand.wrist());
    let start = hand.start();
    let mut out = Vec::with_capacity(HAND_COUNT * 3);
    for k in 0..HAND_COUNT {
        let p = stream.kpt(t, start + k);
        out.extend_from_slice(&[p[0] - wrist[0], p[1] - wrist[1], p[2] - wrist[2]]);
    }
    out
}

/// All 61 keypoints in body space: 61 x 3 pass-through.
pub fn body_keypoint_prior(stream: &PoseStream, t: usize) -> Vec<f64> {
    let at = t * KEYPOINT_COUNT * 3;
    stream.keypoints[at..at + KEYPOINT_COUNT * 3].to_vec()
}

fn sin_cos(angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len() * 2);
    for &a in angles {
        out.push(a.sin());
        out.push(a.cos());
    }
    out
}

/// Hand joint angles as interleaved (sin, cos) rows: 41 x 2.
pub fn hand_angle_prior(stream: &PoseStream, t: usize, hand: Hand) -> Vec<f64> {
    let src = match hand {
        Hand::Left => &stream.left_angles,
        Hand::Right => &stream.right_angles,
    };
    sin_cos(&src[t * HAND_ANGLE_COUNT..(t + 1) * HAND_ANGLE_COUNT])
}

/// Body joint angles as interleaved (sin, cos) rows: 22 x 2.
pub fn body_angle_prior(stream: &PoseStream, t: usize) -> Vec<f64> {
    sin_cos(&stream.body_angles[t * BODY_ANGLE_COUNT..(t + 1) * BODY_ANGLE_COUNT])
}

fn displacement(stream: &PoseStream, t: usize, src: usize, dst: usize) -> [f64; 3] {
    let a = stream.kpt(t, src);
    let b = stream.kpt(t, dst);
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

/// Per-axis displacements from each fingertip to the wrist, knuckles and
/// fingertips of the same hand: 5 x 11 x 3.
pub fn fingertip_distance_prior(stream: &PoseStream, t: usize, hand: Hand) -> Vec<f64> {
    let start = hand.start();
    let mut out = Vec::with_capacity(5 * 11 * 3);
    for &src_local in &HAND_FINGERTIPS_LOCAL {
        for &dst_local in &HAND_DIST_DESTINATIONS_LOCAL {
            out.extend_from_slice(&displacement(stream, t, start + src_local, start + dst_local));
        }
    }
    out
}

/// Per-axis displacements from both wrists and all fingertips to the
/// trunk/face/hand destination set: 12 x 22 x 3.
pub fn interaction_distance_prior(stream: &PoseStream, t: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(12 * 22 * 3);
    for &src in &INTERACTION_SOURCES {
        for &dst in &INTERACTION_DESTINATIONS {
            out.extend_from_slice(&displacement(stream, t, src, dst));
        }
    }
    out
}

fn wrist_anchor_y(stream: &PoseStream, t: usize, hand: Hand, opts: &ActivityOptions) -> f64 {
    if opts.use_hand_centroid {
        let start = hand.start();
        (0..HAND_COUNT).map(|k| stream.kpt(t, start + k)[1]).sum::<f64>() / HAND_COUNT as f64
    } else {
        stream.kpt(t, hand.wrist())[1]
    }
}

fn hand_active(stream: &PoseStream, hand: Hand, opts: &ActivityOptions) -> bool {
    let t_count = stream.frames;
    assert!(t_count >= 2, "activity heuristic needs at least 2 frames");
    // condition (a): mean anchor height vs the stomach reference line
    let mut anchor_y = 0.0;
    let mut ref_y = 0.0;
    for t in 0..t_count {
        anchor_y += wrist_anchor_y(stream, t, hand, opts);
        ref_y += STOMACH_REFERENCE
            .iter()
            .map(|&k| stream.kpt(t, k)[1])
            .sum::<f64>()
            / STOMACH_REFERENCE.len() as f64;
    }
    anchor_y /= t_count as f64;
    ref_y /= t_count as f64;
    let below = if opts.y_down {
        anchor_y > ref_y
    } else {
        anchor_y < ref_y
    };
    if !below {
        return true;
    }
    // condition (b): summed temporal standard deviation of the 21 hand
    // keypoints over all three axes (N-1 denominator)
    let start = hand.start();
    let mut std_sum = 0.0;
    for k in 0..HAND_COUNT {
        for axis in 0..3 {
            let mut mean = 0.0;
            for t in 0..t_count {
                mean += stream.kpt(t, start + k)[axis];
            }
            mean /= t_count as f64;
            let mut var = 0.0;
            for t in 0..t_count {
                let d = stream.kpt(t, start + k)[axis] - mean;
                var += d * d;
            }
            std_sum += (var / (t_count as f64 - 1.0)).sqrt();
        }
    }
    std_sum >= opts.still_threshold
}

/// Per-clip activity bits (left, right): a hand is inactive (0) only when
/// it stays below the stomach reference line and its summed keypoint motion
/// is under the stillness threshold.
pub fn activity_prior(stream: &PoseStream, opts: &ActivityOptions) -> (u8, u8) {
    (
        hand_active(stream, Hand::Left, opts) as u8,
        hand_active(stream, Hand::Right, opts) as u8,
    )
}

// Keypoints each prior element depends on; an element is masked out of the
// loss when any of its inputs is low-confidence.
fn element_dependencies(kind: PriorKind, element: usize) -> Vec<usize> {
    match kind {
        PriorKind::HandKptLeft | PriorKind::HandKptRight => {
            let hand = if kind == PriorKind::HandKptLeft { Hand::Left } else { Hand::Right };
            let k = element / 3;
            vec![hand.wrist(), hand.start() + k]
        }
        PriorKind::BodyKpt => vec![element / 3],
        PriorKind::HandAngleLeft | PriorKind::HandAngleRight | PriorKind::BodyAngle => vec![],
        PriorKind::HandDistLeft | PriorKind::HandDistRight => {
            let hand = if kind == PriorKind::HandDistLeft { Hand::Left } else { Hand::Right };
            let pair = element / 3;
            let (src, dst) = (pair / 11, pair % 11);
            vec![
                hand.start() + HAND_FINGERTIPS_LOCAL[src],
                hand.start() + HAND_DIST_DESTINATIONS_LOCAL[dst],
            ]
        }
        PriorKind::BodyDist => {
            let pair = element / 3;
            let (src, dst) = (pair / 22, pair % 22);
            vec![INTERACTION_SOURCES[src], INTERACTION_DESTINATIONS[dst]]
        }
    }
}

fn frame_values(stream: &PoseStream, t: usize, kind: PriorKind) -> Vec<f64> {
    match kind {
        PriorKind::HandKptLeft => hand_keypoint_prior(stream, t, Hand::Left),
        PriorKind::HandKptRight => hand_keypoint_prior(stream, t, Hand::Right),
        PriorKind::BodyKpt => body_keypoint_prior(stream, t),
        PriorKind::HandAngleLeft => hand_angle_prior(stream, t, Hand::Left),
        PriorKind::HandAngleRight => hand_angle_prior(stream, t, Hand::Right),
        PriorKind::BodyAngle => body_angle_prior(stream, t),
        PriorKind::HandDistLeft => fingertip_distance_prior(stream, t, Hand::Left),
        PriorKind::HandDistRight => fingertip_distance_prior(stream, t, Hand::Right),
        PriorKind::BodyDist => interaction_distance_prior(stream, t),
    }
}

/// Assemble every prior target for a clip, scaled by psi, with loss masks
/// propagated from the confidence mask by dependency closure.
pub fn prior_targets(
    stream: &PoseStream,
    confidence_mask: &[bool],
    weights: &LossWeights,
    opts: &ActivityOptions,
) -> PriorSet {
    let t_count = stream.frames;
    assert_eq!(
        confidence_mask.len(),
        t_count * KEYPOINT_COUNT,
        "mask extents"
    );
    let mut targets = Vec::with_capacity(PriorKind::ALL.len());
    let mut masks = Vec::with_capacity(PriorKind::ALL.len());
    for kind in PriorKind::ALL {
        let dim = kind.dim();
        let psi = kind.psi(weights);
        let mut data = Vec::with_capacity(t_count * dim);
        let mut mask = Vec::with_capacity(t_count * dim);
        // dependency lists are frame-independent
        let deps: Vec<Vec<usize>> = (0..dim).map(|e| element_dependencies(kind, e)).collect();
        for t in 0..t_count {
            let vals = frame_values(stream, t, kind);
            debug_assert_eq!(vals.len(), dim);
            for (e, v) in vals.into_iter().enumerate() {
                data.push(v * psi);
                let ok = deps[e]
                    .iter()
                    .all(|&k| confidence_mask[t * KEYPOINT_COUNT + k]);
                mask.push(if ok { 1.0 } else { 0.0 });
            }
        }
        targets.push(Tensor::from_vec(&[t_count, dim], data));
        masks.push(Tensor::from_vec(&[t_count, dim], mask));
    }
    let (left, right) = activity_prior(stream, opts);
    PriorSet {
        frames: t_count,
        targets,
        masks,
        activity: [left as f64, right as f64],
    }
}

//! Deterministic synthetic signer. Each sign class is a parametric wrist
//! trajectory plus a hand-shape envelope; arms follow by two-bone inverse
//! kinematics, hands by forward kinematics from 41 joint angles, so the
//! angle and keypoint channels of the generated streams are mutually
//! consistent. A style carries the per-video nuisance factors (position
//! offset, scale, background, blob size) and videos are rendered as
//! per-channel Gaussian blobs: body, left hand, right hand.

mod dataset;
mod render;
mod skeleton;

pub use dataset::{make_dataset, Manifest, ManifestItem, Split, SynthConfig};
pub use render::{load_video, render_video, save_video, VideoTensor, VIDEO_MAGIC};
pub use skeleton::rest_pose;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::pose::layout::{
    Hand, BODY_ANGLE_COUNT, HAND_ANGLE_COUNT, HAND_COUNT, KEYPOINT_COUNT, LEFT_HAND_START,
    LEFT_WRIST, RIGHT_HAND_START, RIGHT_WRIST,
};
use crate::pose::PoseStream;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("pose: {0}")]
    Pose(#[from] crate::pose::PoseError),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Handedness {
    Right,
    Left,
    Both,
}

/// Per-axis sinusoid parameters for a wrist trajectory, in signing-space
/// units and Hz.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrajectoryParams {
    pub center: [f64; 3],
    pub amplitude: [f64; 3],
    pub frequency: [f64; 3],
    pub phase: [f64; 3],
}

/// One parametric sign class.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SignClassSpec {
    pub class_id: u32,
    pub handedness: Handedness,
    pub right: TrajectoryParams,
    pub left: TrajectoryParams,
    /// resting hand-shape angles (41)
    pub shape_base: Vec<f64>,
    /// per-angle oscillation amplitudes (41)
    pub shape_motion: Vec<f64>,
    pub shape_frequency: f64,
}

/// Per-video nuisance factors.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StyleSpec {
    pub offset: [f64; 2],
    pub scale: f64,
    pub background: f64,
    pub blob: f64,
    pub seed: u64,
}

impl StyleSpec {
    pub fn sample(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        StyleSpec {
            offset: [rng.gen_range(-0.04..0.04), rng.gen_range(-0.04..0.04)],
            scale: rng.gen_range(0.92..1.08),
            background: rng.gen_range(0.0..0.25),
            blob: rng.gen_range(0.8..1.3),
            seed,
        }
    }
}

const ARM_UPPER: f64 = 0.17;
const ARM_LOWER: f64 = 0.17;
const REST_WRIST_RIGHT: [f64; 3] = [0.42, 0.80, 0.50];
const REST_WRIST_LEFT: [f64; 3] = [0.58, 0.80, 0.50];
const CONFIDENCE_DROPOUT: f64 = 0.02;

fn splitmix(state: u64) -> u64 {
    let mut z = state.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derived seed for sub-tasks; keeps per-video randomness independent of
/// generation order.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    splitmix(base ^ splitmix(stream.wrapping_mul(0x2545f4914f6cdd1d) ^ index))
}

/// Deterministic class table for a dataset seed. Classes differ pairwise in
/// trajectory and hand-shape parameters.
pub fn class_table(classes: usize, seed: u64) -> Vec<SignClassSpec> {
    assert!(classes >= 2, "need at least two classes");
    let mut out = Vec::with_capacity(classes);
    for c in 0..classes {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0xc1a5, c as u64));
        let jitter = |rng: &mut ChaCha8Rng, s: f64| rng.gen_range(-s..s);
        let handedness = match c % 3 {
            0 => Handedness::Right,
            1 => Handedness::Left,
            _ => Handedness::Both,
        };
        let make_traj = |rng: &mut ChaCha8Rng, mirror: bool, c: usize| {
            let cx = 0.31 + 0.035 * (c % 3) as f64 + jitter(rng, 0.01);
            let center = [
                if mirror { 1.0 - cx } else { cx },
                0.38 + 0.04 * ((c / 3) % 3) as f64 + jitter(rng, 0.01),
                0.5 + jitter(rng, 0.02),
            ];
            TrajectoryParams {
                center,
                amplitude: [
                    0.045 + 0.02 * (c % 4) as f64 + jitter(rng, 0.004),
                    0.04 + 0.018 * ((c + 2) % 4) as f64 + jitter(rng, 0.004),
                    0.012 + jitter(rng, 0.003),
                ],
                frequency: [
                    0.55 + 0.24 * (c % 7) as f64 + jitter(rng, 0.02),
                    0.7 + 0.21 * ((c * 3 + 1) % 7) as f64 + jitter(rng, 0.02),
                    0.4 + jitter(rng, 0.05),
                ],
                phase: [
                    std::f64::consts::TAU * (c as f64) / classes as f64 + jitter(rng, 0.05),
                    std::f64::consts::TAU * (c as f64 * 2.0 + 1.0) / classes as f64,
                    0.0,
                ],
            }
        };
        let right = make_traj(&mut rng, false, c);
        let left = make_traj(&mut rng, true, c + 1);
        // five base hand shapes cycled by class
        let mut shape_base = vec![0.0; HAND_ANGLE_COUNT];
        let mut shape_motion = vec![0.0; HAND_ANGLE_COUNT];
        let pattern = c % 5;
        for f in 0..5 {
            shape_base[f] = -0.9 + 0.35 * f as f64; // splay fan
            for s in 0..3 {
                let flex = match pattern {
                    0 => 1.1,                              // fist
                    1 => 0.05,                             // open
                    2 => if f == 1 { 0.05 } else { 1.0 },  // point
                    3 => if f <= 1 { 0.7 } else { 0.15 },  // pinch
                    _ => 0.45,                             // curve
                };
                shape_base[5 + 3 * f + s] = flex + jitter(&mut rng, 0.03);
                shape_motion[5 + 3 * f + s] = 0.25 + 0.1 * ((c + s) % 3) as f64;
                shape_base[20 + 3 * f + s] = jitter(&mut rng, 0.1);
            }
            shape_base[35 + f] = 0.1 * pattern as f64;
        }
        shape_base[40] = jitter(&mut rng, 0.2);
        out.push(SignClassSpec {
            class_id: c as u32,
            handedness,
            right,
            left,
            shape_base,
            shape_motion,
            shape_frequency: 0.8 + 0.25 * (c % 4) as f64,
        });
    }
    out
}

fn smoothstep(x: f64) -> f64 {
    let x = x.clamp(0.0, 1.0);
    x * x * (3.0 - 2.0 * x)
}

/// Activity envelope: 0 during the rest head/tail, 1 in the active span,
/// with 3-frame ramps.
fn envelope(t: usize, rest_head: usize, active_end: usize) -> f64 {
    let t = t as f64;
    let (head, tail) = (rest_head as f64, active_end as f64);
    let ramp = 3.0;
    if t < head {
        0.0
    } else if t < head + ramp {
        smoothstep((t - head) / ramp)
    } else if t < tail - ramp {
        1.0
    } else if t < tail {
        smoothstep((tail - t) / ramp)
    } else {
        0.0
    }
}

/// Two-bone inverse kinematics: elbow position for a shoulder, wrist
/// target and a lateral bend direction. The target is pulled into reach
/// when necessary.
fn solve_elbow(shoulder: [f64; 3], wrist: &mut [f64; 3], outward_sign: f64) -> [f64; 3] {
    let mut d = [
        wrist[0] - shoulder[0],
        wrist[1] - shoulder[1],
        wrist[2] - shoulder[2],
    ];
    let mut dist = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let max_reach = ARM_UPPER + ARM_LOWER - 0.005;
    if dist < 0.02 || dist > max_reach {
        let target = dist.clamp(0.02, max_reach);
        let s = if dist < 1e-12 { 0.0 } else { target / dist };
        for (w, (sh, dd)) in wrist.iter_mut().zip(shoulder.iter().zip(&d)) {
            *w = sh + dd * s;
        }
        for dd in d.iter_mut() {
            *dd *= s;
        }
        dist = target;
    }
    let unit = [d[0] / dist, d[1] / dist, d[2] / dist];
    let a = (ARM_UPPER * ARM_UPPER - ARM_LOWER * ARM_LOWER + dist * dist) / (2.0 * dist);
    let r = (ARM_UPPER * ARM_UPPER - a * a).max(0.0).sqrt();
    // lateral direction in the image plane, pointing outward for the side
    let mut n = [outward_sign * unit[1], -outward_sign * unit[0], 0.0];
    let nn = (n[0] * n[0] + n[1] * n[1]).sqrt();
    if nn < 1e-9 {
        n = [outward_sign, 0.0, 0.0];
    } else {
        n[0] /= nn;
        n[1] /= nn;
    }
    [
        shoulder[0] + unit[0] * a + n[0] * r,
        shoulder[1] + unit[1] * a + n[1] * r,
        shoulder[2] + unit[2] * a + n[2] * r,
    ]
}

// Segment lengths per finger (4 segments: wrist->knuckle, then phalanges).
const FINGER_SEGMENTS: [[f64; 4]; 5] = [
    [0.026, 0.018, 0.013, 0.010], // thumb
    [0.036, 0.020, 0.014, 0.011],
    [0.038, 0.022, 0.015, 0.012],
    [0.036, 0.020, 0.014, 0.011],
    [0.032, 0.017, 0.012, 0.010],
];

/// Forward kinematics of one hand from its 41 angles: 21 local keypoint
/// offsets relative to the wrist. `mirror` flips x for the left hand.
fn hand_local(angles: &[f64], mirror: bool) -> [[f64; 3]; HAND_COUNT] {
    debug_assert_eq!(angles.len(), HAND_ANGLE_COUNT);
    let mut out = [[0.0; 3]; HAND_COUNT];
    let roll = angles[40];
    for f in 0..5 {
        let mut dir = -std::f64::consts::FRAC_PI_2 + angles[f] + roll; // base ray, pointing up
        let mut pitch_sum = 0.0;
        let mut p = [0.0; 3];
        for s in 0..4 {
            if s >= 1 {
                let mut flex = angles[5 + 3 * f + (s - 1)];
                if s == 3 {
                    flex += angles[35 + f];
                }
                dir += flex;
                pitch_sum += angles[20 + 3 * f + (s - 1)];
            }
            let len = FINGER_SEGMENTS[f][s];
            let (dz, planar) = (pitch_sum.sin() * len, pitch_sum.cos() * len);
            p = [
                p[0] + dir.cos() * planar,
                p[1] + dir.sin() * planar,
                p[2] + dz,
            ];
            out[1 + f * 4 + s] = p;
        }
    }
    if mirror {
        for p in out.iter_mut() {
            p[0] = -p[0];
        }
    }
    out
}

struct HandState {
    wrist: [f64; 3],
    angles: Vec<f64>,
}

fn hand_at_frame(
    spec: &SignClassSpec,
    hand: Hand,
    t: usize,
    fps: f64,
    env: f64,
) -> HandState {
    let active_side = match (spec.handedness, hand) {
        (Handedness::Right, Hand::Right) | (Handedness::Left, Hand::Left) => true,
        (Handedness::Both, _) => true,
        _ => false,
    };
    let rest = match hand {
        Hand::Right => REST_WRIST_RIGHT,
        Hand::Left => REST_WRIST_LEFT,
    };
    let mut angles = vec![0.0; HAND_ANGLE_COUNT];
    // relaxed shape at rest
    for f in 0..5 {
        angles[f] = -0.9 + 0.35 * f as f64;
        for s in 0..3 {
            angles[5 + 3 * f + s] = 0.3;
        }
    }
    if !active_side || env == 0.0 {
        return HandState { wrist: rest, angles };
    }
    let traj = match hand {
        Hand::Right => &spec.right,
        Hand::Left => &spec.left,
    };
    let tau = t as f64 / fps;
    let mut target = [0.0; 3];
    for axis in 0..3 {
        target[axis] = traj.center[axis]
            + traj.amplitude[axis]
                * (std::f64::consts::TAU * traj.frequency[axis] * tau + traj.phase[axis]).sin();
    }
    let wrist = [
        rest[0] + env * (target[0] - rest[0]),
        rest[1] + env * (target[1] - rest[1]),
        rest[2] + env * (target[2] - rest[2]),
    ];
    let osc = (std::f64::consts::TAU * spec.shape_frequency * tau).sin();
    for i in 0..HAND_ANGLE_COUNT {
        let active_angle = spec.shape_base[i] + spec.shape_motion[i] * osc;
        angles[i] += env * (active_angle - angles[i]);
    }
    HandState { wrist, angles }
}

/// Generate one pose stream. Deterministic in (class, style, frames):
/// trajectory timing comes from the style seed, confidence dropout from a
/// derived stream. Values are quantized through f32 so the binary pose
/// format round-trips losslessly.
pub fn generate_sign_clip(spec: &SignClassSpec, style: &StyleSpec, frames: usize) -> PoseStream {
    assert!(frames >= 16, "clips shorter than 16 frames");
    let fps = 12.0;
    let mut timing_rng = ChaCha8Rng::seed_from_u64(derive_seed(style.seed, 0x717e, 0));
    let rest_head = timing_rng.gen_range(10..=16usize).min(frames / 2);
    let rest_tail = timing_rng.gen_range(2..=5usize);
    let active_end = frames - rest_tail;

    let mut out = PoseStream::zeros(frames, fps as f32);
    let rest = rest_pose();
    for t in 0..frames {
        let env = envelope(t, rest_head, active_end);
        let mut kpts = [[0.0f64; 3]; KEYPOINT_COUNT];
        kpts[..19].copy_from_slice(&rest[..19]);

        for hand in [Hand::Right, Hand::Left] {
            let state = hand_at_frame(spec, hand, t, fps, env);
            let (shoulder, outward, start, wrist_idx, mirror) = match hand {
                Hand::Right => (rest[6], -1.0, RIGHT_HAND_START, RIGHT_WRIST, false),
                Hand::Left => (rest[7], 1.0, LEFT_HAND_START, LEFT_WRIST, true),
            };
            let mut wrist = state.wrist;
            let elbow = solve_elbow(shoulder, &mut wrist, outward);
            let elbow_idx = if hand == Hand::Right { 10 } else { 13 };
            kpts[elbow_idx] = elbow;
            let local = hand_local(&state.angles, mirror);
            for (k, off) in local.iter().enumerate() {
                kpts[start + k] = [wrist[0] + off[0], wrist[1] + off[1], wrist[2] + off[2]];
            }
            kpts[wrist_idx] = wrist;
            let dst = match hand {
                Hand::Left => &mut out.left_angles,
                Hand::Right => &mut out.right_angles,
            };
            dst[t * HAND_ANGLE_COUNT..(t + 1) * HAND_ANGLE_COUNT].copy_from_slice(&state.angles);
        }

        // style: uniform scale about the torso center, then the offset
        let center = [0.5, 0.6, 0.5];
        for p in kpts.iter_mut() {
            for axis in 0..3 {
                p[axis] = center[axis] + (p[axis] - center[axis]) * style.scale;
            }
            p[0] += style.offset[0];
            p[1] += style.offset[1];
        }

        // body angles derived from the final keypoints: image-plane bone
        // directions for the 18 body bones and both forearm-to-wrist
        // bones, plus the two wrist rolls driving the hands
        let mut body_angles = [0.0f64; BODY_ANGLE_COUNT];
        for child in 1..19 {
            let parent = crate::pose::layout::parent(child).unwrap();
            let d = [
                kpts[child][0] - kpts[parent][0],
                kpts[child][1] - kpts[parent][1],
            ];
            body_angles[child - 1] = d[0].atan2(d[1]);
        }
        for (slot, (wrist_idx, elbow_idx)) in
            [(RIGHT_WRIST, 10usize), (LEFT_WRIST, 13usize)].iter().enumerate()
        {
            let d = [
                kpts[*wrist_idx][0] - kpts[*elbow_idx][0],
                kpts[*wrist_idx][1] - kpts[*elbow_idx][1],
            ];
            body_angles[18 + slot] = d[0].atan2(d[1]);
        }
        body_angles[20] = out.right_angles[t * HAND_ANGLE_COUNT + 40];
        body_angles[21] = out.left_angles[t * HAND_ANGLE_COUNT + 40];
        out.body_angles[t * BODY_ANGLE_COUNT..(t + 1) * BODY_ANGLE_COUNT]
            .copy_from_slice(&body_angles);

        for (k, p) in kpts.iter().enumerate() {
            out.set_kpt(t, k, [p[0] as f32 as f64, p[1] as f32 as f64, p[2] as f32 as f64]);
        }
    }
    // quantize the angle channels as well
    for v in out
        .left_angles
        .iter_mut()
        .chain(out.right_angles.iter_mut())
        .chain(out.body_angles.iter_mut())
    {
        *v = *v as f32 as f64;
    }
    // seeded 2% confidence dropout
    let mut drop_rng = ChaCha8Rng::seed_from_u64(derive_seed(style.seed, 0xd404, 1));
    for c in out.confidence.iter_mut() {
        if drop_rng.gen_range(0.0..1.0) < CONFIDENCE_DROPOUT {
            *c = 0.0;
        }
    }
    out
}

use super::layout::{BODY_ANGLE_COUNT, HAND_ANGLE_COUNT, KEYPOINT_COUNT};
use super::PoseError;

/// One pose recording: per-frame 3D keypoints in signing-space units,
/// per-keypoint confidence in [0, 1], and the joint-angle channels.
/// Immutable after load; cheap to window.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseStream {
    pub frames: usize,
    pub fps: f32,
    /// frames x 61 x 3, row-major
    pub keypoints: Vec<f64>,
    /// frames x 61
    pub confidence: Vec<f64>,
    /// frames x 41
    pub left_angles: Vec<f64>,
    /// frames x 41
    pub right_angles: Vec<f64>,
    /// frames x 22
    pub body_angles: Vec<f64>,
}

impl PoseStream {
    pub fn zeros(frames: usize, fps: f32) -> Self {
        PoseStream {
            frames,
            fps,
            keypoints: vec![0.0; frames * KEYPOINT_COUNT * 3],
            confidence: vec![1.0; frames * KEYPOINT_COUNT],
            left_angles: vec![0.0; frames * HAND_ANGLE_COUNT],
            right_angles: vec![0.0; frames * HAND_ANGLE_COUNT],
            body_angles: vec![0.0; frames * BODY_ANGLE_COUNT],
        }
    }

    pub fn validate(&self) -> Result<(), PoseError> {
        let t = self.frames;
        let extents = [
            ("keypoints", self.keypoints.len(), t * KEYPOINT_COUNT * 3),
            ("confidence", self.confidence.len(), t * KEYPOINT_COUNT),
            ("left_hand_angles", self.left_angles.len(), t * HAND_ANGLE_COUNT),
            ("right_hand_angles", self.right_angles.len(), t * HAND_ANGLE_COUNT),
            ("body_angles", self.body_angles.len(), t * BODY_ANGLE_COUNT),
        ];
        for (section, got, want) in extents {
            if got != want {
                return Err(PoseError::ExtentMismatch {
                    section,
                    got,
                    want,
                });
            }
        }
        for (section, data) in [
            ("keypoints", &self.keypoints),
            ("confidence", &self.confidence),
            ("left_hand_angles", &self.left_angles),
            ("right_hand_angles", &self.right_angles),
            ("body_angles", &self.body_angles),
        ] {
            if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
                let stride = data.len() / t;
                return Err(PoseError::NonFinite {
                    section,
                    frame: pos / stride,
                });
            }
        }
        for (i, &c) in self.confidence.iter().enumerate() {
            if !(0.0..=1.0).contains(&c) {
                return Err(PoseError::ConfidenceRange {
                    frame: i / KEYPOINT_COUNT,
                    keypoint: i % KEYPOINT_COUNT,
                    value: c,
                });
            }
        }
        Ok(())
    }

    #[inline]
    pub fn kpt(&self, t: usize, k: usize) -> [f64; 3] {
        let at = (t * KEYPOINT_COUNT + k) * 3;
        [self.keypoints[at], self.keypoints[at + 1], self.keypoints[at + 2]]
    }

    #[inline]
    pub fn set_kpt(&mut self, t: usize, k: usize, p: [f64; 3]) {
        let at = (t * KEYPOINT_COUNT + k) * 3;
        self.keypoints[at..at + 3].copy_from_slice(&p);
    }

    #[inline]
    pub fn conf(&self, t: usize, k: usize) -> f64 {
        self.confidence[t * KEYPOINT_COUNT + k]
    }

    /// Copy of frames `[start, start + len)`.
    pub fn window(&self, start: usize, len: usize) -> PoseStream {
        assert!(start + len <= self.frames, "window past end of stream");
        let slice = |data: &[f64], stride: usize| {
            data[start * stride..(start + len) * stride].to_vec()
        };
        PoseStream {
            frames: len,
            fps: self.fps,
            keypoints: slice(&self.keypoints, KEYPOINT_COUNT * 3),
            confidence: slice(&self.confidence, KEYPOINT_COUNT),
            left_angles: slice(&self.left_angles, HAND_ANGLE_COUNT),
            right_angles: slice(&self.right_angles, HAND_ANGLE_COUNT),
            body_angles: slice(&self.body_angles, BODY_ANGLE_COUNT),
        }
    }

    /// Window that repeats the last frame when the stream is shorter than
    /// `len`.
    pub fn window_padded(&self, start: usize, len: usize) -> PoseStream {
        if start + len <= self.frames {
            return self.window(start, len);
        }
        let avail = self.frames - start;
        let mut out = self.window(start, avail);
        let last = out.window(avail - 1, 1);
        for _ in avail..len {
            out.keypoints.extend_from_slice(&last.keypoints);
            out.confidence.extend_from_slice(&last.confidence);
            out.left_angles.extend_from_slice(&last.left_angles);
            out.right_angles.extend_from_slice(&last.right_angles);
            out.body_angles.extend_from_slice(&last.body_angles);
        }
        out.frames = len;
        out
    }
}

/// True where confidence is strictly above `threshold` ("over" the cut, so
/// a value exactly at the threshold is excluded).
pub fn confidence_mask(stream: &PoseStream, threshold: f64) -> Vec<bool> {
    assert!((0.0..=1.0).contains(&threshold), "threshold {threshold}");
    stream.confidence.iter().map(|&c| c > threshold).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn confidence_mask_is_strict() {
        let mut s = PoseStream::zeros(1, 10.0);
        s.confidence[0] = 0.5;
        s.confidence[1] = 0.500001;
        s.confidence[2] = 0.499999;
        let m = confidence_mask(&s, 0.5);
        assert!(!m[0], "exactly 0.5 is not over 50%");
        assert!(m[1]);
        assert!(!m[2]);
    }

    #[test]
    fn confidence_mask_all_ones() {
        let s = PoseStream::zeros(3, 10.0);
        assert!(confidence_mask(&s, 0.5).iter().all(|&b| b));
    }

    #[test]
    fn confidence_mask_count_matches_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let mut s = PoseStream::zeros(5, 10.0);
        for c in s.confidence.iter_mut() {
            *c = rng.gen_range(0.0..1.0);
        }
        let mask = confidence_mask(&s, 0.5);
        let brute = s.confidence.iter().filter(|&&c| c > 0.5).count();
        assert_eq!(mask.iter().filter(|&&b| b).count(), brute);
    }

    #[test]
    fn window_padded_repeats_last_frame() {
        let mut s = PoseStream::zeros(3, 10.0);
        s.set_kpt(2, 7, [0.1, 0.2, 0.3]);
        let w = s.window_padded(0, 6);
        assert_eq!(w.frames, 6);
        assert_eq!(w.kpt(5, 7), [0.1, 0.2, 0.3]);
        assert_eq!(w.kpt(3, 7), [0.1, 0.2, 0.3]);
    }

    #[test]
    fn validate_rejects_bad_confidence() {
        let mut s = PoseStream::zeros(2, 10.0);
        s.confidence[61 + 5] = 1.2;
        match s.validate() {
            Err(PoseError::ConfidenceRange { frame, keypoint, .. }) => {
                assert_eq!((frame, keypoint), (1, 5));
            }
            other => panic!("expected confidence error, got {other:?}"),
        }
    }
}

//! Canonical 61-keypoint skeleton: 19 body keypoints, then the right hand
//! (21 keypoints, wrist first), then the left hand.
//!
//! The kinematic tree is rooted at the pelvis (index 0). Every keypoint's
//! parent has a smaller index, so walking indices in increasing order visits
//! parents before children. Hands use the standard 21-keypoint topology:
//! wrist, then four joints per finger (thumb, index, middle, ring, pinky)
//! with fingertips at local indices {4, 8, 12, 16, 20}. Hand wrists attach
//! to the body elbows.
//!
//! Coordinates are signing-space units in [0, 1] with image conventions:
//! x grows rightward, y grows downward ("below" means larger y).

pub const KEYPOINT_COUNT: usize = 61;
pub const BODY_COUNT: usize = 19;
pub const HAND_COUNT: usize = 21;
pub const HAND_ANGLE_COUNT: usize = 41;
pub const BODY_ANGLE_COUNT: usize = 22;
pub const BONE_COUNT: usize = KEYPOINT_COUNT - 1;

pub const RIGHT_HAND_START: usize = 19;
pub const LEFT_HAND_START: usize = 40;
pub const RIGHT_WRIST: usize = 19;
pub const LEFT_WRIST: usize = 40;

pub const RIGHT_FINGERTIPS: [usize; 5] = [23, 27, 31, 35, 39];
pub const LEFT_FINGERTIPS: [usize; 5] = [44, 48, 52, 56, 60];

/// Keypoints whose mean y approximates the middle of the stomach: pelvis,
/// neck and both shoulders. Reference line for the hand activity heuristic.
pub const STOMACH_REFERENCE: [usize; 4] = [0, 3, 6, 7];

/// Sources for the hand-interaction displacement prior: left wrist, right
/// wrist, then left and right fingertips.
pub const INTERACTION_SOURCES: [usize; 12] =
    [40, 19, 44, 48, 52, 56, 60, 23, 27, 31, 35, 39];

/// Destinations for the hand-interaction prior: trunk, arm and facial
/// keypoints plus both wrists and all fingertips.
pub const INTERACTION_DESTINATIONS: [usize; 22] = [
    0, 3, 6, 7, 10, 13, 15, 16, 17, 18, 19, 23, 27, 31, 35, 39, 40, 44, 48, 52, 56, 60,
];

/// Hand-local destination indices for the fingertip displacement prior:
/// wrist, per-finger knuckle and per-finger tip.
pub const HAND_DIST_DESTINATIONS_LOCAL: [usize; 11] = [0, 1, 4, 5, 8, 9, 12, 13, 16, 17, 20];

pub const HAND_FINGERTIPS_LOCAL: [usize; 5] = [4, 8, 12, 16, 20];

const BODY_NAMES: [&str; BODY_COUNT] = [
    "pelvis",
    "spine",
    "chest",
    "neck",
    "head",
    "nose",
    "right_shoulder",
    "left_shoulder",
    "right_hip",
    "left_hip",
    "right_elbow",
    "mouth",
    "chin",
    "left_elbow",
    "forehead",
    "right_eye",
    "left_eye",
    "right_ear",
    "left_ear",
];

// Parent of each body keypoint; -1 marks the root.
const BODY_PARENT: [i32; BODY_COUNT] = [
    -1, // pelvis
    0,  // spine
    1,  // chest
    2,  // neck
    3,  // head
    4,  // nose
    3,  // right_shoulder
    3,  // left_shoulder
    0,  // right_hip
    0,  // left_hip
    6,  // right_elbow
    5,  // mouth
    5,  // chin
    7,  // left_elbow
    4,  // forehead
    5,  // right_eye
    5,  // left_eye
    4,  // right_ear
    4,  // left_ear
];

// Hand-local parents (wrist itself attaches to a body elbow).
const HAND_PARENT_LOCAL: [i32; HAND_COUNT] = [
    -1, // wrist
    0, 1, 2, 3, // thumb
    0, 5, 6, 7, // index
    0, 9, 10, 11, // middle
    0, 13, 14, 15, // ring
    0, 17, 18, 19, // pinky
];

const FINGER_NAMES: [&str; 5] = ["thumb", "index", "middle", "ring", "pinky"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Hand {
    Left,
    Right,
}

impl Hand {
    pub fn start(self) -> usize {
        match self {
            Hand::Left => LEFT_HAND_START,
            Hand::Right => RIGHT_HAND_START,
        }
    }

    pub fn wrist(self) -> usize {
        match self {
            Hand::Left => LEFT_WRIST,
            Hand::Right => RIGHT_WRIST,
        }
    }

    pub fn fingertips(self) -> [usize; 5] {
        match self {
            Hand::Left => LEFT_FINGERTIPS,
            Hand::Right => RIGHT_FINGERTIPS,
        }
    }
}

/// Kinematic parent of a keypoint; `None` for the pelvis root.
pub fn parent(k: usize) -> Option<usize> {
    assert!(k < KEYPOINT_COUNT, "keypoint index {k}");
    if k < BODY_COUNT {
        let p = BODY_PARENT[k];
        (p >= 0).then(|| p as usize)
    } else if k < LEFT_HAND_START {
        let local = k - RIGHT_HAND_START;
        let p = HAND_PARENT_LOCAL[local];
        Some(if p < 0 {
            10 // right elbow
        } else {
            RIGHT_HAND_START + p as usize
        })
    } else {
        let local = k - LEFT_HAND_START;
        let p = HAND_PARENT_LOCAL[local];
        Some(if p < 0 {
            13 // left elbow
        } else {
            LEFT_HAND_START + p as usize
        })
    }
}

pub fn keypoint_name(k: usize) -> String {
    assert!(k < KEYPOINT_COUNT, "keypoint index {k}");
    if k < BODY_COUNT {
        BODY_NAMES[k].to_string()
    } else {
        let (side, local) = if k < LEFT_HAND_START {
            ("right_hand", k - RIGHT_HAND_START)
        } else {
            ("left_hand", k - LEFT_HAND_START)
        };
        if local == 0 {
            format!("{side}_wrist")
        } else {
            let finger = FINGER_NAMES[(local - 1) / 4];
            format!("{side}_{finger}_{}", (local - 1) % 4 + 1)
        }
    }
}

/// Bones indexed by child keypoint: bone `i` joins child `i + 1` to its parent.
pub fn bone(index: usize) -> (usize, usize) {
    let child = index + 1;
    (child, parent(child).expect("non-root"))
}

pub fn bone_name(index: usize) -> String {
    let (child, p) = bone(index);
    format!("{}->{}", keypoint_name(p), keypoint_name(child))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tree_is_well_formed() {
        assert_eq!(parent(0), None);
        let mut non_root = 0;
        for k in 1..KEYPOINT_COUNT {
            let p = parent(k).expect("every non-root keypoint has a parent");
            assert!(p < k, "parent {p} of {k} must precede it");
            non_root += 1;
        }
        assert_eq!(non_root, BONE_COUNT);
    }

    #[test]
    fn hand_blocks_partition_the_skeleton() {
        assert_eq!(RIGHT_HAND_START, BODY_COUNT);
        assert_eq!(LEFT_HAND_START, BODY_COUNT + HAND_COUNT);
        assert_eq!(LEFT_HAND_START + HAND_COUNT, KEYPOINT_COUNT);
        assert_eq!(RIGHT_FINGERTIPS.map(|k| k - RIGHT_HAND_START), HAND_FINGERTIPS_LOCAL);
        assert_eq!(LEFT_FINGERTIPS.map(|k| k - LEFT_HAND_START), HAND_FINGERTIPS_LOCAL);
    }

    #[test]
    fn wrists_attach_to_elbows() {
        assert_eq!(parent(RIGHT_WRIST), Some(10));
        assert_eq!(parent(LEFT_WRIST), Some(13));
        assert_eq!(keypoint_name(10), "right_elbow");
        assert_eq!(keypoint_name(13), "left_elbow");
    }

    #[test]
    fn interaction_destination_list_has_22_entries() {
        assert_eq!(INTERACTION_DESTINATIONS.len(), 22);
        let mut sorted = INTERACTION_DESTINATIONS;
        sorted.sort_unstable();
        assert_eq!(sorted, INTERACTION_DESTINATIONS, "list is ascending");
    }
}

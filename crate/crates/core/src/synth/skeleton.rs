use crate::pose::layout::KEYPOINT_COUNT;

/// Rest positions of the 19 body keypoints in signing-space units
/// (x right, y down, z toward the camera at 0.5). Hand blocks are filled
/// by the generator; the table still spans all 61 slots.
pub fn rest_pose() -> [[f64; 3]; KEYPOINT_COUNT] {
    let mut p = [[0.0; 3]; KEYPOINT_COUNT];
    let body: [[f64; 3]; 19] = [
        [0.50, 0.82, 0.50], // pelvis
        [0.50, 0.70, 0.50], // spine
        [0.50, 0.58, 0.50], // chest
        [0.50, 0.46, 0.50], // neck
        [0.50, 0.38, 0.50], // head
        [0.50, 0.33, 0.52], // nose
        [0.38, 0.48, 0.50], // right shoulder
        [0.62, 0.48, 0.50], // left shoulder
        [0.44, 0.82, 0.50], // right hip
        [0.56, 0.82, 0.50], // left hip
        [0.34, 0.62, 0.50], // right elbow (rest; overwritten by IK)
        [0.50, 0.36, 0.52], // mouth
        [0.50, 0.39, 0.52], // chin
        [0.66, 0.62, 0.50], // left elbow (rest; overwritten by IK)
        [0.50, 0.29, 0.52], // forehead
        [0.47, 0.31, 0.52], // right eye
        [0.53, 0.31, 0.52], // left eye
        [0.44, 0.33, 0.50], // right ear
        [0.56, 0.33, 0.50], // left ear
    ];
    p[..19].copy_from_slice(&body);
    p
}

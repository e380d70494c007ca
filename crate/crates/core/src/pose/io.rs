//! Pose-stream files. The binary format is an 8-byte magic "SRPS0001", a
//! little-endian header (u32 frame count, f32 fps), then contiguous
//! little-endian f32 blocks in order: keypoints [T x 61 x 3], confidence
//! [T x 61], left hand angles [T x 41], right hand angles [T x 41], body
//! angles [T x 22]. A JSON sidecar with the same field names is accepted
//! for hand-editable fixtures.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layout::{BODY_ANGLE_COUNT, HAND_ANGLE_COUNT, KEYPOINT_COUNT};
use super::stream::PoseStream;
use super::PoseError;

pub const POSE_MAGIC: &[u8; 8] = b"SRPS0001";

fn read_block(
    r: &mut impl Read,
    section: &'static str,
    count: usize,
    per_frame: usize,
) -> Result<Vec<f64>, PoseError> {
    let mut bytes = vec![0u8; count * 4];
    let mut filled = 0;
    while filled < bytes.len() {
        match r.read(&mut bytes[filled..]) {
            Ok(0) => {
                return Err(PoseError::Truncated {
                    section,
                    frame: filled / 4 / per_frame,
                })
            }
            Ok(n) => filled += n,
            Err(e) => return Err(PoseError::Io(e)),
        }
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

fn write_block(w: &mut impl Write, data: &[f64]) -> std::io::Result<()> {
    let mut bytes = Vec::with_capacity(data.len() * 4);
    for &v in data {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    w.write_all(&bytes)
}

#[derive(Serialize, Deserialize)]
struct PoseStreamJson {
    fps: f32,
    keypoints: Vec<Vec<[f64; 3]>>,
    confidence: Vec<Vec<f64>>,
    left_hand_angles: Vec<Vec<f64>>,
    right_hand_angles: Vec<Vec<f64>>,
    body_angles: Vec<Vec<f64>>,
}

pub fn load_pose_stream(path: impl AsRef<Path>) -> Result<PoseStream, PoseError> {
    let mut file = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    let got = file.read(&mut magic)?;
    if got == 8 && &magic == POSE_MAGIC {
        return load_binary(&mut file);
    }
    // Not the binary magic: retry the whole file as the JSON sidecar.
    let mut rest = Vec::new();
    file.read_to_end(&mut rest)?;
    let mut all = magic[..got].to_vec();
    all.extend(rest);
    let parsed: PoseStreamJson = serde_json::from_slice(&all)?;
    from_json(parsed)
}

fn load_binary(r: &mut impl Read) -> Result<PoseStream, PoseError> {
    let mut header = [0u8; 8];
    r.read_exact(&mut header).map_err(|_| PoseError::Truncated {
        section: "header",
        frame: 0,
    })?;
    let frames = u32::from_le_bytes(header[0..4].try_into().unwrap()) as usize;
    let fps = f32::from_le_bytes(header[4..8].try_into().unwrap());
    let stream = PoseStream {
        frames,
        fps,
        keypoints: read_block(r, "keypoints", frames * KEYPOINT_COUNT * 3, KEYPOINT_COUNT * 3)?,
        confidence: read_block(r, "confidence", frames * KEYPOINT_COUNT, KEYPOINT_COUNT)?,
        left_angles: read_block(r, "left_hand_angles", frames * HAND_ANGLE_COUNT, HAND_ANGLE_COUNT)?,
        right_angles: read_block(r, "right_hand_angles", frames * HAND_ANGLE_COUNT, HAND_ANGLE_COUNT)?,
        body_angles: read_block(r, "body_angles", frames * BODY_ANGLE_COUNT, BODY_ANGLE_COUNT)?,
    };
    stream.validate()?;
    Ok(stream)
}

pub fn save_pose_stream(stream: &PoseStream, path: impl AsRef<Path>) -> Result<(), PoseError> {
    stream.validate()?;
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(POSE_MAGIC)?;
    w.write_all(&(stream.frames as u32).to_le_bytes())?;
    w.write_all(&stream.fps.to_le_bytes())?;
    write_block(&mut w, &stream.keypoints)?;
    write_block(&mut w, &stream.confidence)?;
    write_block(&mut w, &stream.left_angles)?;
    write_block(&mut w, &stream.right_angles)?;
    write_block(&mut w, &stream.body_angles)?;
    w.flush()?;
    Ok(())
}

pub fn save_pose_stream_json(stream: &PoseStream, path: impl AsRef<Path>) -> Result<(), PoseError> {
    stream.validate()?;
    let chunk2 = |data: &[f64], stride: usize| -> Vec<Vec<f64>> {
        data.chunks_exact(stride).map(|c| c.to_vec()).collect()
    };
    let keypoints = stream
        .keypoints
        .chunks_exact(KEYPOINT_COUNT * 3)
        .map(|frame| {
            frame
                .chunks_exact(3)
                .map(|p| [p[0], p[1], p[2]])
                .collect()
        })
        .collect();
    let json = PoseStreamJson {
        fps: stream.fps,
        keypoints,
        confidence: chunk2(&stream.confidence, KEYPOINT_COUNT),
        left_hand_angles: chunk2(&stream.left_angles, HAND_ANGLE_COUNT),
        right_hand_angles: chunk2(&stream.right_angles, HAND_ANGLE_COUNT),
        body_angles: chunk2(&stream.body_angles, BODY_ANGLE_COUNT),
    };
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    serde_json::to_writer_pretty(&mut w, &json)?;
    w.flush()?;
    Ok(())
}

fn from_json(j: PoseStreamJson) -> Result<PoseStream, PoseError> {
    let frames = j.keypoints.len();
    let flat3 = |rows: Vec<Vec<[f64; 3]>>| -> Vec<f64> {
        rows.into_iter()
            .flat_map(|frame| frame.into_iter().flatten())
            .collect()
    };
    let flat = |rows: Vec<Vec<f64>>| -> Vec<f64> { rows.into_iter().flatten().collect() };
    let stream = PoseStream {
        frames,
        fps: j.fps,
        keypoints: flat3(j.keypoints),
        confidence: flat(j.confidence),
        left_angles: flat(j.left_hand_angles),
        right_angles: flat(j.right_hand_angles),
        body_angles: flat(j.body_angles),
    };
    stream.validate()?;
    Ok(stream)
}

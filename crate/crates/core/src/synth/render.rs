//! Blob renderer and the raw video tensor format: magic "SRVD0001",
//! little-endian u32 extents (frames, height, width, channels), then f32
//! values in T x H x W x C order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{StyleSpec, SynthError};
use crate::pose::layout::{KEYPOINT_COUNT, LEFT_HAND_START, RIGHT_HAND_START};
use crate::pose::PoseStream;

pub const VIDEO_MAGIC: &[u8; 8] = b"SRVD0001";

/// Dense T x H x W x C f32 video.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoTensor {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl VideoTensor {
    pub fn frame(&self, t: usize) -> &[f32] {
        let stride = self.height * self.width * self.channels;
        &self.data[t * stride..(t + 1) * stride]
    }
}

/// Render a pose stream: channel 0 holds body blobs, 1 the left hand,
/// 2 the right hand. Each confident keypoint is an isotropic Gaussian;
/// the style adds a flat background intensity and values clamp to [0, 1].
/// Out-of-frame keypoints are clamped onto the border with a warning.
pub fn render_video(stream: &PoseStream, height: usize, width: usize, style: &StyleSpec) -> VideoTensor {
    let channels = 3;
    let mut data = vec![style.background as f32; stream.frames * height * width * channels];
    let sigma = 1.1 * style.blob;
    let radius = (3.0 * sigma).ceil() as i64;
    let mut warned = false;
    for t in 0..stream.frames {
        let base = t * height * width * channels;
        for k in 0..KEYPOINT_COUNT {
            if stream.conf(t, k) <= 0.0 {
                continue;
            }
            let (channel, amp) = if k >= LEFT_HAND_START {
                (1, 0.9)
            } else if k >= RIGHT_HAND_START {
                (2, 0.9)
            } else {
                (0, 0.8)
            };
            let p = stream.kpt(t, k);
            let mut px = p[0] * (width - 1) as f64;
            let mut py = p[1] * (height - 1) as f64;
            if !(0.0..=(width - 1) as f64).contains(&px) || !(0.0..=(height - 1) as f64).contains(&py)
            {
                if !warned {
                    log::warn!("keypoint outside the frame at t={t}, k={k}; clamping");
                    warned = true;
                }
                px = px.clamp(0.0, (width - 1) as f64);
                py = py.clamp(0.0, (height - 1) as f64);
            }
            let (cx, cy) = (px.round() as i64, py.round() as i64);
            for y in (cy - radius).max(0)..=(cy + radius).min(height as i64 - 1) {
                for x in (cx - radius).max(0)..=(cx + radius).min(width as i64 - 1) {
                    let d2 = (x as f64 - px) * (x as f64 - px) + (y as f64 - py) * (y as f64 - py);
                    let v = amp * (-d2 / (2.0 * sigma * sigma)).exp();
                    let at = base + ((y as usize * width) + x as usize) * channels + channel;
                    data[at] += v as f32;
                }
            }
        }
    }
    for v in data.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
    VideoTensor {
        frames: stream.frames,
        height,
        width,
        channels,
        data,
    }
}

pub fn save_video(video: &VideoTensor, path: impl AsRef<Path>) -> Result<(), SynthError> {
    let mut w = BufWriter::new(File::create(path.as_ref())?);
    w.write_all(VIDEO_MAGIC)?;
    for e in [video.frames, video.height, video.width, video.channels] {
        w.write_all(&(e as u32).to_le_bytes())?;
    }
    let mut bytes = Vec::with_capacity(video.data.len() * 4);
    for &v in &video.data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&bytes)?;
    w.flush()?;
    Ok(())
}

pub fn load_video(path: impl AsRef<Path>) -> Result<VideoTensor, SynthError> {
    let mut r = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != VIDEO_MAGIC {
        return Err(SynthError::Invalid("bad video magic".into()));
    }
    let mut dims = [0usize; 4];
    for d in dims.iter_mut() {
        let mut b = [0u8; 4];
        r.read_exact(&mut b)?;
        *d = u32::from_le_bytes(b) as usize;
    }
    let n = dims.iter().product::<usize>();
    let mut bytes = vec![0u8; n * 4];
    r.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(VideoTensor {
        frames: dims[0],
        height: dims[1],
        width: dims[2],
        channels: dims[3],
        data,
    })
}

use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use dcoach::env::Observation;

use crate::error::Result;
use crate::protocol::Frame;

/// Bounded frame buffer between the training loop and the connection
/// handler. Pushing never blocks; when full the oldest frame is discarded.
#[derive(Debug)]
pub struct FrameQueue {
    frames: Mutex<VecDeque<Frame>>,
    capacity: usize,
    dropped: AtomicU64,
}

impl FrameQueue {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "frame queue needs room for one frame");
        Self {
            frames: Mutex::new(VecDeque::with_capacity(capacity)),
            capacity,
            dropped: AtomicU64::new(0),
        }
    }

    pub fn push(&self, frame: Frame) {
        let mut frames = self.frames.lock().expect("frame queue poisoned");
        if frames.len() == self.capacity {
            frames.pop_front();
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        frames.push_back(frame);
    }

    pub fn pop(&self) -> Option<Frame> {
        self.frames.lock().expect("frame queue poisoned").pop_front()
    }

    /// Discards everything pending without counting it as dropped.
    pub fn clear(&self) {
        self.frames.lock().expect("frame queue poisoned").clear();
    }

    pub fn len(&self) -> usize {
        self.frames.lock().expect("frame queue poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

/// 8-bit grayscale PNG of an observation.
pub fn encode_png(obs: &Observation) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, obs.width() as u32, obs.height() as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let bytes: Vec<u8> = obs
        .pixels()
        .iter()
        .map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut writer = encoder.write_header()?;
    writer.write_image_data(&bytes)?;
    writer.finish()?;
    Ok(out)
}

pub fn encode_png_b64(obs: &Observation) -> Result<String> {
    Ok(STANDARD.encode(encode_png(obs)?))
}

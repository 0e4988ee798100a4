use std::collections::VecDeque;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::Observation;
use crate::error::{Error, Result};

/// A corrected state and the action the teacher's advice pointed to.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrectionRecord {
    pub state: Observation,
    pub y_label: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BufferConfig {
    /// Maximum number of records kept.
    pub capacity: usize,
    /// Minimum number of records before batch updates run.
    pub min_size: usize,
    /// Records drawn per batch update.
    pub sample_size: usize,
    /// Timesteps between periodic batch updates.
    pub update_interval: u64,
}

impl Default for BufferConfig {
    fn default() -> Self {
        Self {
            capacity: 1000,
            min_size: 20,
            sample_size: 8,
            update_interval: 10,
        }
    }
}

impl BufferConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sample_size == 0 || self.min_size == 0 || self.min_size > self.capacity {
            return Err(Error::InvalidConfig(format!(
                "buffer needs 1 <= sample_size and 1 <= min_size <= capacity, got {self:?}"
            )));
        }
        if self.update_interval == 0 {
            return Err(Error::InvalidConfig("buffer update_interval must be >= 1".into()));
        }
        Ok(())
    }
}

/// Bounded FIFO of corrections. Appending past capacity drops the oldest.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    config: BufferConfig,
    records: VecDeque<CorrectionRecord>,
}

impl ReplayBuffer {
    pub fn new(config: BufferConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            records: VecDeque::with_capacity(config.capacity.min(4096) + 1),
        })
    }

    pub fn config(&self) -> &BufferConfig {
        &self.config
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Whether batch updates have enough data to run.
    pub fn is_ready(&self) -> bool {
        self.records.len() >= self.config.min_size
    }

    pub fn records(&self) -> impl ExactSizeIterator<Item = &CorrectionRecord> {
        self.records.iter()
    }

    pub fn append_trim(&mut self, record: CorrectionRecord) {
        self.records.push_back(record);
        if self.records.len() > self.config.capacity {
            self.records.pop_front();
        }
    }

    /// `sample_size` indices drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<usize> {
        if self.records.is_empty() {
            return Vec::new();
        }
        (0..self.config.sample_size)
            .map(|_| rng.gen_range(0..self.records.len()))
            .collect()
    }

    pub fn get(&self, index: usize) -> Option<&CorrectionRecord> {
        self.records.get(index)
    }

    /// Session file: record count, image height, width and action dims (u32
    /// each), then per record the 8-bit image followed by the label as f64.
    /// All little-endian. Images are quantised to 8 bits.
    pub fn write_session<W: Write>(&self, mut w: W) -> Result<()> {
        let (h, wd, dims) = match self.records.front() {
            Some(r) => (r.state.height(), r.state.width(), r.y_label.len()),
            None => (0, 0, 0),
        };
        w.write_u32::<LittleEndian>(self.records.len() as u32)?;
        w.write_u32::<LittleEndian>(h as u32)?;
        w.write_u32::<LittleEndian>(wd as u32)?;
        w.write_u32::<LittleEndian>(dims as u32)?;
        for r in &self.records {
            w.write_all(&r.state.to_bytes())?;
            for v in &r.y_label {
                w.write_f64::<LittleEndian>(*v)?;
            }
        }
        Ok(())
    }

    pub fn read_session<R: Read>(mut r: R, config: BufferConfig) -> Result<Self> {
        let count = r.read_u32::<LittleEndian>()? as usize;
        let h = r.read_u32::<LittleEndian>()? as usize;
        let w = r.read_u32::<LittleEndian>()? as usize;
        let dims = r.read_u32::<LittleEndian>()? as usize;
        if count > 0 && (h == 0 || w == 0 || dims == 0 || h * w > 1 << 24 || dims > 1 << 16) {
            return Err(Error::Checkpoint("implausible session header".into()));
        }
        let mut buffer = Self::new(config)?;
        let mut bytes = vec![0u8; h * w];
        for _ in 0..count {
            r.read_exact(&mut bytes)?;
            let state = Observation::from_bytes(h, w, &bytes)?;
            let y_label = (0..dims)
                .map(|_| r.read_f64::<LittleEndian>())
                .collect::<std::io::Result<Vec<f64>>>()?;
            buffer.append_trim(CorrectionRecord { state, y_label });
        }
        Ok(buffer)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(tag: f64) -> CorrectionRecord {
        CorrectionRecord {
            state: Observation::new(2, 2, vec![tag / 10.0; 4]).unwrap(),
            y_label: vec![tag],
        }
    }

    fn config(capacity: usize) -> BufferConfig {
        BufferConfig {
            capacity,
            min_size: 1,
            ..Default::default()
        }
    }

    #[test]
    fn trims_oldest() {
        let mut b = ReplayBuffer::new(config(3)).unwrap();
        assert!(b.is_empty());
        b.append_trim(record(1.0));
        assert_eq!(b.len(), 1);
        for t in 2..=4 {
            b.append_trim(record(t as f64));
        }
        let kept: Vec<f64> = b.records().map(|r| r.y_label[0]).collect();
        assert_eq!(kept, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn capacity_one_keeps_newest() {
        let mut b = ReplayBuffer::new(config(1)).unwrap();
        for t in 0..5 {
            b.append_trim(record(t as f64));
            assert_eq!(b.records().next().unwrap().y_label[0], t as f64);
        }
    }

    #[test]
    fn rejects_bad_config() {
        let bad = BufferConfig {
            min_size: 5,
            capacity: 4,
            ..Default::default()
        };
        assert!(ReplayBuffer::new(bad).is_err());
        let bad = BufferConfig {
            sample_size: 0,
            ..Default::default()
        };
        assert!(ReplayBuffer::new(bad).is_err());
    }

    #[test]
    fn session_round_trip() {
        let mut b = ReplayBuffer::new(config(10)).unwrap();
        for t in 0..4 {
            b.append_trim(record(t as f64 * 2.0));
        }
        let mut bytes = Vec::new();
        b.write_session(&mut bytes).unwrap();
        assert_eq!(bytes.len(), 16 + 4 * (4 + 8));
        let back = ReplayBuffer::read_session(bytes.as_slice(), config(10)).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in back.records().zip(b.records()) {
            assert_eq!(a.y_label, b.y_label);
            assert_eq!(a.state.to_bytes(), b.state.to_bytes());
        }
    }
}

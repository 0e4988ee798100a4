//! Binary checkpoint format.
//!
//! ```text
//! "DCOACH-CKPT"            11 bytes
//! version                  u32
//! section count            u32
//! per section:
//!   name length, name      u32, utf-8 bytes
//!   layer count            u32   (layers in the owning NetworkSpec)
//!   record count           u32
//!   per record:
//!     layer index          u32
//!     kind tag             u8
//!     trainable            u8
//!     weight, bias         each: rank u32, extents u32 * rank, f64 * n
//! ```
//! All integers and reals are little-endian.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::network::{LayerParams, NetworkParams, NetworkSpec};
use super::tensor::Tensor;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 11] = b"DCOACH-CKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerRecord {
    pub index: u32,
    pub kind_tag: u8,
    pub trainable: bool,
    pub weight: Tensor,
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub layer_count: u32,
    pub records: Vec<LayerRecord>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub sections: Vec<Section>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: &str, spec: &NetworkSpec, params: &NetworkParams) -> Result<()> {
        spec.check_params(params)?;
        let records = spec
            .layers()
            .iter()
            .zip(&params.layers)
            .enumerate()
            .filter_map(|(i, (layer, p))| {
                p.as_ref().map(|p| LayerRecord {
                    index: i as u32,
                    kind_tag: layer.kind_tag(),
                    trainable: p.trainable,
                    weight: p.weight.clone(),
                    bias: p.bias.clone(),
                })
            })
            .collect();
        self.sections.push(Section {
            name: name.to_string(),
            layer_count: spec.layers().len() as u32,
            records,
        });
        Ok(())
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn has_section(&self, name: &str) -> bool {
        self.section(name).is_some()
    }

    /// Rebuilds the parameters of section `name`, validating every record
    /// against `spec`.
    pub fn params_for(&self, name: &str, spec: &NetworkSpec) -> Result<NetworkParams> {
        let section = self
            .section(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing section {name:?}")))?;
        if section.layer_count as usize != spec.layers().len() {
            return Err(Error::Checkpoint(format!(
                "section {name:?} has {} layers, network has {}",
                section.layer_count,
                spec.layers().len()
            )));
        }
        let mut layers: Vec<Option<LayerParams>> = vec![None; spec.layers().len()];
        for rec in &section.records {
            let idx = rec.index as usize;
            let layer = spec.layers().get(idx).ok_or_else(|| {
                Error::Checkpoint(format!("section {name:?}: record for missing layer {idx}"))
            })?;
            if layer.kind_tag() != rec.kind_tag {
                return Err(Error::Checkpoint(format!(
                    "section {name:?}: layer {idx} is {} but record has kind tag {}",
                    layer.kind_name(),
                    rec.kind_tag
                )));
            }
            let (w, b, _, _) = layer.param_shapes().ok_or_else(|| {
                Error::Checkpoint(format!("section {name:?}: layer {idx} has no parameters"))
            })?;
            if rec.weight.shape() != w.as_slice() || rec.bias.shape() != b.as_slice() {
                return Err(Error::ShapeMismatch {
                    context: format!("checkpoint section {name:?} layer {idx}"),
                    expected: w,
                    found: rec.weight.shape().to_vec(),
                });
            }
            layers[idx] = Some(LayerParams {
                weight: rec.weight.clone(),
                bias: rec.bias.clone(),
                trainable: rec.trainable,
            });
        }
        let params = NetworkParams { layers };
        spec.check_params(&params)
            .map_err(|e| Error::Checkpoint(format!("section {name:?}: {e}")))?;
        Ok(params)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_u32::<LittleEndian>(VERSION)?;
        w.write_u32::<LittleEndian>(self.sections.len() as u32)?;
        for s in &self.sections {
            w.write_u32::<LittleEndian>(s.name.len() as u32)?;
            w.write_all(s.name.as_bytes())?;
            w.write_u32::<LittleEndian>(s.layer_count)?;
            w.write_u32::<LittleEndian>(s.records.len() as u32)?;
            for r in &s.records {
                w.write_u32::<LittleEndian>(r.index)?;
                w.write_u8(r.kind_tag)?;
                w.write_u8(r.trainable as u8)?;
                write_tensor(&mut w, &r.weight)?;
                write_tensor(&mut w, &r.bias)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 11];
        r.read_exact(&mut magic)
            .map_err(|_| Error::Checkpoint("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.read_u32::<LittleEndian>()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let n_sections = r.read_u32::<LittleEndian>()?;
        let mut sections = Vec::with_capacity(n_sections as usize);
        for _ in 0..n_sections {
            let name_len = r.read_u32::<LittleEndian>()? as usize;
            if name_len > 4096 {
                return Err(Error::Checkpoint("section name too long".into()));
            }
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name)?;
            let name = String::from_utf8(name)
                .map_err(|_| Error::Checkpoint("section name is not utf-8".into()))?;
            let layer_count = r.read_u32::<LittleEndian>()?;
            let n_records = r.read_u32::<LittleEndian>()?;
            let mut records = Vec::new();
            for _ in 0..n_records {
                let index = r.read_u32::<LittleEndian>()?;
                let kind_tag = r.read_u8()?;
                let trainable = r.read_u8()? != 0;
                let weight = read_tensor(&mut r)?;
                let bias = read_tensor(&mut r)?;
                records.push(LayerRecord {
                    index,
                    kind_tag,
                    trainable,
                    weight,
                    bias,
                });
            }
            sections.push(Section {
                name,
                layer_count,
                records,
            });
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(BufReader::new(File::open(path)?))
    }
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    w.write_u32::<LittleEndian>(t.shape().len() as u32)?;
    for &d in t.shape() {
        w.write_u32::<LittleEndian>(d as u32)?;
    }
    for &v in t.data() {
        w.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor<R: Read>(r: &mut R) -> Result<Tensor> {
    let rank = r.read_u32::<LittleEndian>()? as usize;
    if rank == 0 || rank > 8 {
        return Err(Error::Checkpoint(format!("implausible tensor rank {rank}")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.read_u32::<LittleEndian>()? as usize);
    }
    let n: usize = shape.iter().product();
    if n > 1 << 28 {
        return Err(Error::Checkpoint(format!("implausible tensor size {shape:?}")));
    }
    let mut data = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut data)?;
    Tensor::new(shape, data).map_err(|e| Error::Checkpoint(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, LayerSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small() -> NetworkSpec {
        NetworkSpec::new(
            vec![1, 4, 4],
            vec![
                LayerSpec::conv(1, 2, 3, 2),
                LayerSpec::act(Activation::Relu),
                LayerSpec::Flatten,
                LayerSpec::dense(8, 2),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let spec = small();
        let mut params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(4));
        params.layers[0].as_mut().unwrap().trainable = false;
        let mut ck = Checkpoint::new();
        ck.push("policy", &spec, &params).unwrap();
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..11], MAGIC);
        assert_eq!(&bytes[11..15], &1u32.to_le_bytes());
        let back = Checkpoint::read_from(bytes.as_slice()).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.params_for("policy", &spec).unwrap(), params);
    }

    #[test]
    fn load_validates_against_spec() {
        let spec = small();
        let params = NetworkParams::init(&spec, &mut ChaCha8Rng::seed_from_u64(4));
        let mut ck = Checkpoint::new();
        ck.push("policy", &spec, &params).unwrap();
        let other = NetworkSpec::new(
            vec![1, 4, 4],
            vec![
                LayerSpec::conv(1, 3, 3, 2),
                LayerSpec::act(Activation::Relu),
                LayerSpec::Flatten,
                LayerSpec::dense(12, 2),
            ],
        )
        .unwrap();
        assert!(ck.params_for("policy", &other).is_err());
        assert!(ck.params_for("decoder", &spec).is_err());
    }

    #[test]
    fn corrupt_header_rejected() {
        assert!(Checkpoint::read_from(&b"NOT-A-CKPT!\x01\0\0\0"[..]).is_err());
        assert!(Checkpoint::read_from(&b"DCOACH"[..]).is_err());
    }
}

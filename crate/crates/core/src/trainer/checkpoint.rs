//! Checkpoint file format.
//!
//! Little-endian throughout: the magic `MSMS1`, a `u32` format version, a
//! `u32`-length-prefixed JSON header (configuration, schedule, step, name
//! tables, normalization mode), then for every parameter tensor its name,
//! `u32` rows, `u32` cols and `f64` data, followed by the Adam first and
//! second moments in the same order.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};

use super::schedule::{AdamState, TrainingSchedule};
use crate::error::{Error, Result};
use crate::features::PhonemeInventory;
use crate::model::{AcousticModel, ModelConfig, Parameters};
use crate::normalize::NormMode;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"MSMS1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    schedule: TrainingSchedule,
    step: u64,
    speakers: Vec<String>,
    styles: Vec<String>,
    phonemes: Vec<String>,
    norm_mode: NormMode,
}

/// Everything needed to resume training or run inference.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub model: AcousticModel,
    pub adam: AdamState,
    pub step: u64,
    pub schedule: TrainingSchedule,
    pub speakers: Vec<String>,
    pub styles: Vec<String>,
    pub phonemes: Vec<String>,
    pub norm_mode: NormMode,
}

impl Checkpoint {
    pub fn inventory(&self) -> PhonemeInventory {
        PhonemeInventory::new(&self.phonemes)
    }

    pub fn speaker_id(&self, name: &str) -> Result<usize> {
        self.speakers
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownName {
                kind: "speaker",
                name: name.to_string(),
            })
    }

    pub fn style_id(&self, name: &str) -> Result<usize> {
        self.styles
            .iter()
            .position(|s| s == name)
            .ok_or_else(|| Error::UnknownName {
                kind: "style",
                name: name.to_string(),
            })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.model.config.clone(),
            schedule: self.schedule.clone(),
            step: self.step,
            speakers: self.speakers.clone(),
            styles: self.styles.clone(),
            phonemes: self.phonemes.clone(),
            norm_mode: self.norm_mode,
        })?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.write_u32::<LittleEndian>(CHECKPOINT_VERSION)?;
        out.write_u32::<LittleEndian>(header.len() as u32)?;
        out.extend_from_slice(&header);
        let params = &self.model.params;
        for (name, t) in params.iter() {
            out.write_u32::<LittleEndian>(name.len() as u32)?;
            out.extend_from_slice(name.as_bytes());
            write_tensor(&mut out, t)?;
        }
        for t in self.adam.m.iter().chain(&self.adam.v) {
            write_tensor(&mut out, t)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < CHECKPOINT_MAGIC.len() || &bytes[..CHECKPOINT_MAGIC.len()] != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let mut r = Cursor::new(&bytes[CHECKPOINT_MAGIC.len()..]);
        let version = r.read_u32::<LittleEndian>().map_err(truncated)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let header_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
        let header_bytes = read_bytes(&mut r, header_len)?;
        let header: Header = serde_json::from_slice(&header_bytes)
            .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
        header.config.validate()?;

        let n = crate::model::Parameters::init(&header.config, 0).1.len();
        let mut named = Vec::with_capacity(n);
        for _ in 0..n {
            let len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
            let name = String::from_utf8(read_bytes(&mut r, len)?)
                .map_err(|_| Error::Checkpoint("tensor name is not UTF-8".into()))?;
            named.push((name, read_tensor(&mut r)?));
        }
        let params = Parameters::from_named(named);
        let mut moments = Vec::with_capacity(2 * n);
        for i in 0..2 * n {
            let t = read_tensor(&mut r)?;
            if t.shape() != params.tensors()[i % n].shape() {
                return Err(Error::Checkpoint(format!("optimizer moment {i} has the wrong shape")));
            }
            moments.push(t);
        }
        if (r.position() as usize) != bytes.len() - CHECKPOINT_MAGIC.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let v = moments.split_off(n);
        let model = AcousticModel::from_parameters(header.config, params)?;
        if header.speakers.len() != model.config.n_speakers
            || header.styles.len() != model.config.n_styles
            || header.phonemes.len() != model.config.phoneme_vocab_size
        {
            return Err(Error::Checkpoint("name tables do not match the configuration".into()));
        }
        Ok(Self {
            model,
            adam: AdamState { m: moments, v },
            step: header.step,
            schedule: header.schedule,
            speakers: header.speakers,
            styles: header.styles,
            phonemes: header.phonemes,
            norm_mode: header.norm_mode,
        })
    }
}

fn truncated(_: std::io::Error) -> Error {
    Error::Checkpoint("truncated file".into())
}

fn read_bytes(r: &mut Cursor<&[u8]>, len: usize) -> Result<Vec<u8>> {
    let remaining = r.get_ref().len() - r.position() as usize;
    if len > remaining {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf).map_err(truncated)?;
    Ok(buf)
}

fn write_tensor(out: &mut Vec<u8>, t: &Tensor) -> Result<()> {
    out.write_u32::<LittleEndian>(t.rows() as u32)?;
    out.write_u32::<LittleEndian>(t.cols() as u32)?;
    for &v in t.data() {
        out.write_f64::<LittleEndian>(v)?;
    }
    Ok(())
}

fn read_tensor(r: &mut Cursor<&[u8]>) -> Result<Tensor> {
    let rows = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let cols = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
    let remaining = r.get_ref().len() - r.position() as usize;
    if n.saturating_mul(8) > remaining {
        return Err(Error::Checkpoint("truncated file".into()));
    }
    let mut data = vec![0.0; n];
    r.read_f64_into::<LittleEndian>(&mut data).map_err(truncated)?;
    Ok(Tensor::from_vec(rows, cols, data))
}

/// Writes atomically: a temporary sibling file is renamed over `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<()> {
    let bytes = ckpt.to_bytes()?;
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Checkpoint {
        let model = AcousticModel::new(ModelConfig::tiny(4, 2, 2), 3).unwrap();
        let mut adam = AdamState::zeros_like(model.params.tensors());
        adam.m[0].data_mut()[0] = 0.125;
        adam.v[1].data_mut()[0] = f64::MIN_POSITIVE;
        Checkpoint {
            model,
            adam,
            step: 17,
            schedule: TrainingSchedule::default(),
            speakers: vec!["a".into(), "b".into()],
            styles: vec!["rising".into(), "falling".into()],
            phonemes: ["p", "q", "r", "s"].iter().map(|s| s.to_string()).collect(),
            norm_mode: NormMode::Spk,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.ckpt");
        save_checkpoint(&p, &c).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back.model.params, c.model.params);
        assert_eq!(back.adam, c.adam);
        assert_eq!(back.step, 17);
        assert_eq!(back.norm_mode, NormMode::Spk);
        assert_eq!(back.to_bytes().unwrap(), c.to_bytes().unwrap());
        assert_eq!(back.style_id("falling").unwrap(), 1);
        assert!(back.speaker_id("zed").is_err());
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad).is_err());
        let mut ver = bytes.clone();
        ver[5] = 9;
        assert!(Checkpoint::from_bytes(&ver).unwrap_err().to_string().contains("version"));
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err());
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(Checkpoint::from_bytes(&long).is_err());
    }
}

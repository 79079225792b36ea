//! Binary per-utterance feature cache.
//!
//! Layout, all little-endian: the 9-byte magic `MSMSFEAT1`; `u32` id length
//! and UTF-8 id; `u32` phoneme count, frame count, mel bands, speaker id,
//! style id; then `u32` phoneme ids, `i32` durations, `f32` pitch, `f32`
//! energy and the `f32` mel matrix in row-major order.

use std::fs;
use std::io::{Cursor, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::AlignedUtterance;
use crate::error::{Error, Result};
use crate::model::PhonemeSequence;

pub const CACHE_MAGIC: &[u8; 9] = b"MSMSFEAT1";

pub fn encode_utterance(u: &AlignedUtterance) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CACHE_MAGIC);
    let id = u.id.as_bytes();
    let w = &mut out;
    w.write_u32::<LittleEndian>(id.len() as u32).unwrap();
    w.write_all(id).unwrap();
    for v in [
        u.phonemes.len(),
        u.frames(),
        u.n_mel,
        u.speaker_id,
        u.style_id,
    ] {
        w.write_u32::<LittleEndian>(v as u32).unwrap();
    }
    for &p in u.phonemes.ids() {
        w.write_u32::<LittleEndian>(p).unwrap();
    }
    for &d in &u.durations {
        w.write_i32::<LittleEndian>(d as i32).unwrap();
    }
    for v in u.pitch.iter().chain(&u.energy).chain(&u.mel) {
        w.write_f32::<LittleEndian>(*v).unwrap();
    }
    out
}

pub fn decode_utterance(bytes: &[u8]) -> Result<AlignedUtterance> {
    let truncated = |_| Error::Cache("truncated file".into());
    if bytes.len() < CACHE_MAGIC.len() || &bytes[..CACHE_MAGIC.len()] != CACHE_MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let mut r = Cursor::new(&bytes[CACHE_MAGIC.len()..]);
    let id_len = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    let remaining = bytes.len() - CACHE_MAGIC.len() - 4;
    if id_len > remaining {
        return Err(Error::Cache("truncated file".into()));
    }
    let mut id = vec![0u8; id_len];
    r.read_exact(&mut id).map_err(truncated)?;
    let id = String::from_utf8(id).map_err(|_| Error::Cache("id is not UTF-8".into()))?;
    let mut header = [0usize; 5];
    for h in &mut header {
        *h = r.read_u32::<LittleEndian>().map_err(truncated)? as usize;
    }
    let [n_ph, n_frames, n_mel, speaker_id, style_id] = header;
    let body = 4 * (2 * n_ph + 2 * n_frames + n_frames * n_mel);
    if (bytes.len() - r.position() as usize - CACHE_MAGIC.len()) != body {
        return Err(Error::Cache("truncated file".into()));
    }
    let ids = (0..n_ph)
        .map(|_| r.read_u32::<LittleEndian>())
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(truncated)?;
    let durations = (0..n_ph)
        .map(|_| r.read_i32::<LittleEndian>().map(|d| d.max(0) as u32))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(truncated)?;
    let mut floats = |n: usize| {
        (0..n)
            .map(|_| r.read_f32::<LittleEndian>())
            .collect::<std::io::Result<Vec<_>>>()
            .map_err(truncated)
    };
    let pitch = floats(n_frames)?;
    let energy = floats(n_frames)?;
    let mel = floats(n_frames * n_mel)?;
    let u = AlignedUtterance {
        id,
        phonemes: PhonemeSequence::new(ids)?,
        durations,
        pitch,
        energy,
        mel,
        n_mel,
        speaker_id,
        style_id,
    };
    u.validate()?;
    Ok(u)
}

pub fn write_cache(path: &Path, u: &AlignedUtterance) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(&encode_utterance(u))?;
        f.sync_all()?;
    }
    fs::rename(tmp, path)?;
    Ok(())
}

pub fn read_cache(path: &Path) -> Result<AlignedUtterance> {
    decode_utterance(&fs::read(path)?)
}

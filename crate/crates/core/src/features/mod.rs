//! Audio and alignment front-end.
//!
//! Waveforms are conditioned to 16 kHz at a -6 dBFS peak, then analysed at
//! a 12 ms hop with 48 ms windows into an 80-band log-mel spectrogram,
//! per-frame spectral energy and autocorrelation F0. Phoneme durations come
//! from precomputed alignment boundaries.

pub mod alignment;
pub mod audio;
pub mod cache;
pub mod pitch;
pub mod spectral;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

pub use alignment::{format_alignment, intervals_to_durations, parse_alignment, AlignmentIntervals, Interval};
pub use audio::{condition_wave, read_wav, write_wav};
pub use cache::{read_cache, write_cache};
pub use pitch::estimate_f0;
pub use spectral::{frame_energy, mel_spectrogram};

use crate::error::{Error, Result};
use crate::model::PhonemeSequence;
use crate::tensor::Tensor;

pub const SAMPLE_RATE: u32 = 16000;
pub const HOP: usize = 192;
pub const WIN: usize = 768;
pub const N_FFT: usize = 1024;
pub const N_MEL: usize = 80;
pub const HOP_SECONDS: f64 = 0.012;

#[derive(Clone, Debug, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

/// Symbol table mapping phoneme strings to dense ids.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PhonemeInventory {
    symbols: Vec<String>,
    index: HashMap<String, u32>,
}

impl PhonemeInventory {
    pub fn new<S: AsRef<str>>(symbols: &[S]) -> Self {
        let mut inv = Self::default();
        for s in symbols {
            inv.insert(s.as_ref());
        }
        inv
    }

    /// Id of `symbol`, adding it if new.
    pub fn insert(&mut self, symbol: &str) -> u32 {
        if let Some(&id) = self.index.get(symbol) {
            return id;
        }
        let id = self.symbols.len() as u32;
        self.symbols.push(symbol.to_string());
        self.index.insert(symbol.to_string(), id);
        id
    }

    pub fn id(&self, symbol: &str) -> Result<u32> {
        self.index
            .get(symbol)
            .copied()
            .ok_or_else(|| Error::UnknownPhoneme(symbol.to_string()))
    }

    /// Parses a whitespace-separated phoneme string.
    pub fn encode(&self, text: &str) -> Result<PhonemeSequence> {
        PhonemeSequence::new(text.split_whitespace().map(|s| self.id(s)).collect::<Result<_>>()?)
    }

    pub fn symbols(&self) -> &[String] {
        &self.symbols
    }

    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }
}

/// One training example. Pitch is in Hz (0 = unvoiced) straight out of the
/// front-end and in normalized units after [`crate::normalize::apply_norm`].
#[derive(Clone, Debug, PartialEq)]
pub struct AlignedUtterance {
    pub id: String,
    pub phonemes: PhonemeSequence,
    pub durations: Vec<u32>,
    pub pitch: Vec<f32>,
    pub energy: Vec<f32>,
    /// Row-major `(frames, n_mel)`.
    pub mel: Vec<f32>,
    pub n_mel: usize,
    pub speaker_id: usize,
    pub style_id: usize,
}

impl AlignedUtterance {
    pub fn frames(&self) -> usize {
        self.pitch.len()
    }

    pub fn validate(&self) -> Result<()> {
        let total: usize = self.durations.iter().map(|&d| d as usize).sum();
        let f = self.frames();
        if self.durations.len() != self.phonemes.len() {
            return Err(Error::InvalidArgument(format!(
                "{}: {} durations for {} phonemes",
                self.id,
                self.durations.len(),
                self.phonemes.len()
            )));
        }
        if total != f || self.energy.len() != f || self.mel.len() != f * self.n_mel {
            return Err(Error::InvalidArgument(format!(
                "{}: durations sum to {total}, pitch {f}, energy {}, mel rows {}",
                self.id,
                self.energy.len(),
                self.mel.len() / self.n_mel.max(1)
            )));
        }
        if total == 0 {
            return Err(Error::EmptyOutput);
        }
        Ok(())
    }

    pub fn mel_tensor(&self) -> Tensor {
        Tensor::from_vec(
            self.frames(),
            self.n_mel,
            self.mel.iter().map(|&v| v as f64).collect(),
        )
    }

    pub fn pitch_f64(&self) -> Vec<f64> {
        self.pitch.iter().map(|&v| v as f64).collect()
    }

    pub fn energy_f64(&self) -> Vec<f64> {
        self.energy.iter().map(|&v| v as f64).collect()
    }
}

/// Features of an already-conditioned waveform: `(mel, energy, f0)`.
pub fn analyze(w: &Waveform) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let mel = mel_spectrogram(w)?;
    let energy = frame_energy(w)?;
    let f0 = estimate_f0(w);
    Ok((mel, energy, f0))
}

/// Conditions the audio, extracts features and reconciles the alignment
/// into per-phoneme frame counts.
pub fn build_utterance(
    id: &str,
    wav_path: &Path,
    alignment_path: &Path,
    inventory: &PhonemeInventory,
    speaker_id: usize,
    style_id: usize,
) -> Result<AlignedUtterance> {
    let (raw, rate) = read_wav(wav_path)?;
    let text = fs::read_to_string(alignment_path)?;
    let iv = parse_alignment(&text)?;
    let ids = iv.phonemes().map(|p| inventory.id(p)).collect::<Result<Vec<_>>>()?;
    let wave = condition_wave(&raw, rate)?;
    utterance_from_parts(id, &wave, &iv, PhonemeSequence::new(ids)?, speaker_id, style_id)
}

pub fn utterance_from_parts(
    id: &str,
    wave: &Waveform,
    iv: &AlignmentIntervals,
    phonemes: PhonemeSequence,
    speaker_id: usize,
    style_id: usize,
) -> Result<AlignedUtterance> {
    let (mel, energy, f0) = analyze(wave)?;
    let frames = f0.len();
    let durations = intervals_to_durations(iv, frames)?;
    let u = AlignedUtterance {
        id: id.to_string(),
        phonemes,
        durations,
        pitch: f0.iter().map(|&v| v as f32).collect(),
        energy: energy.iter().map(|&v| v as f32).collect(),
        mel: mel.iter().map(|&v| v as f32).collect(),
        n_mel: N_MEL,
        speaker_id,
        style_id,
    };
    u.validate()?;
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_pair(dir: &Path, phonemes: &[&str]) -> (std::path::PathBuf, std::path::PathBuf) {
        let frames_each = 10;
        let n = frames_each * HOP * phonemes.len();
        let samples: Vec<f64> = (0..n)
            .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 150.0 * i as f64 / 16000.0).sin())
            .collect();
        let wav = dir.join("a.wav");
        write_wav(
            &wav,
            &Waveform {
                samples,
                sample_rate: SAMPLE_RATE,
            },
        )
        .unwrap();
        let mut text = String::new();
        for (i, p) in phonemes.iter().enumerate() {
            let s = (i * frames_each) as f64 * HOP_SECONDS;
            let e = ((i + 1) * frames_each) as f64 * HOP_SECONDS;
            text.push_str(&format!("{p}\t{s}\t{e}\n"));
        }
        let ali = dir.join("a.tsv");
        fs::write(&ali, text).unwrap();
        (wav, ali)
    }

    #[test]
    fn builds_consistent_record() {
        let dir = tempfile::tempdir().unwrap();
        let (wav, ali) = write_pair(dir.path(), &["a", "b", "a"]);
        let inv = PhonemeInventory::new(&["a", "b"]);
        let u = build_utterance("x", &wav, &ali, &inv, 1, 1).unwrap();
        assert_eq!(u.durations, vec![10, 10, 10]);
        assert_eq!(u.frames(), 30);
        assert_eq!(u.mel.len(), 30 * N_MEL);
        assert!(u.pitch.iter().all(|&p| p >= 0.0));
        assert!(u.energy.iter().all(|&e| e >= 0.0));
        let voiced: Vec<f32> = u.pitch[3..27].to_vec();
        assert!(voiced.iter().all(|&p| (p - 150.0).abs() < 1.5));

        let cached = dir.path().join("x.feat");
        write_cache(&cached, &u).unwrap();
        assert_eq!(read_cache(&cached).unwrap(), u);
    }

    #[test]
    fn unknown_phoneme_is_named() {
        let dir = tempfile::tempdir().unwrap();
        let (wav, ali) = write_pair(dir.path(), &["a", "zz"]);
        let inv = PhonemeInventory::new(&["a", "b"]);
        let e = build_utterance("x", &wav, &ali, &inv, 0, 0).unwrap_err();
        assert!(matches!(e, Error::UnknownPhoneme(ref s) if s == "zz"));
    }

    #[test]
    fn inventory_encoding() {
        let inv = PhonemeInventory::new(&["a", "b", "c"]);
        assert_eq!(inv.encode("c a  b").unwrap().ids(), &[2, 0, 1]);
        assert!(inv.encode("a q").is_err());
        assert!(inv.encode("   ").is_err());
    }
}

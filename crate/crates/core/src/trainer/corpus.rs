//! Deterministic synthetic corpus: harmonic-tone "speakers" with a fixed
//! spectral envelope and base F0, each reading in one pitch-contour style.

use std::f64::consts::PI;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{format_entry, ManifestEntry};
use crate::error::{Error, Result};
use crate::features::{
    format_alignment, write_wav, AlignmentIntervals, Interval, Waveform, HOP, HOP_SECONDS, SAMPLE_RATE,
};

pub const TOY_INVENTORY: [&str; 16] = [
    "a", "e", "i", "o", "u", "m", "n", "l", "r", "w", "y", "b", "d", "g", "v", "z",
];

const BASE_F0: [f64; 6] = [110.0, 220.0, 160.0, 135.0, 190.0, 250.0];
const RESONANCE: [f64; 6] = [700.0, 1800.0, 1200.0, 2600.0, 950.0, 2200.0];
const PEAK: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Contour {
    Rising,
    Falling,
    Flat,
}

impl Contour {
    pub const ALL: [Contour; 3] = [Contour::Rising, Contour::Falling, Contour::Flat];

    pub fn name(self) -> &'static str {
        match self {
            Contour::Rising => "rising",
            Contour::Falling => "falling",
            Contour::Flat => "flat",
        }
    }

    /// Sign of the generator's F0 slope.
    pub fn slope_sign(self) -> f64 {
        match self {
            Contour::Rising => 1.0,
            Contour::Falling => -1.0,
            Contour::Flat => 0.0,
        }
    }

    fn duration_scale(self) -> f64 {
        match self {
            Contour::Rising => 1.0,
            Contour::Falling => 1.35,
            Contour::Flat => 0.8,
        }
    }

    /// F0 multiplier at normalized time `x` in [0, 1] and absolute time `t`.
    fn factor(self, x: f64, t: f64) -> f64 {
        match self {
            Contour::Rising => 0.8 * (1.25f64 / 0.8).powf(x),
            Contour::Falling => 1.25 * (0.8f64 / 1.25).powf(x),
            Contour::Flat => 1.0 + 0.03 * (2.0 * PI * 5.0 * t).sin(),
        }
    }
}

impl fmt::Display for Contour {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorpusSpec {
    pub n_speakers: usize,
    /// Number of contour families cycled over speakers (1 to 3).
    pub n_contours: usize,
    pub utterances_each: usize,
    pub seed: u64,
    pub min_phonemes: usize,
    pub max_phonemes: usize,
}

impl CorpusSpec {
    pub fn new(n_speakers: usize, n_contours: usize, utterances_each: usize, seed: u64) -> Self {
        Self {
            n_speakers,
            n_contours,
            utterances_each,
            seed,
            min_phonemes: 6,
            max_phonemes: 10,
        }
    }

    pub fn contour_of(&self, speaker: usize) -> Contour {
        Contour::ALL[speaker % self.n_contours]
    }

    /// Style names: the contour name, suffixed when a contour repeats.
    pub fn style_name(&self, speaker: usize) -> String {
        let base = self.contour_of(speaker).name();
        match speaker / self.n_contours {
            0 => base.to_string(),
            k => format!("{base}{}", k + 1),
        }
    }
}

/// Voice parameters of a synthetic speaker.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Voice {
    pub base_f0: f64,
    pub resonance: f64,
}

pub fn voice(speaker: usize) -> Voice {
    let k = speaker % BASE_F0.len();
    let round = (speaker / BASE_F0.len()) as f64;
    Voice {
        base_f0: BASE_F0[k] * (1.0 + 0.07 * round),
        resonance: RESONANCE[k] + 150.0 * round,
    }
}

/// One generated utterance before it is written to disk.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticUtterance {
    pub id: String,
    pub speaker: usize,
    pub phonemes: Vec<&'static str>,
    pub frames: Vec<usize>,
    pub f0: Vec<f64>,
    pub samples: Vec<f64>,
}

impl SyntheticUtterance {
    pub fn intervals(&self) -> AlignmentIntervals {
        let mut start = 0usize;
        let entries = self
            .phonemes
            .iter()
            .zip(&self.frames)
            .map(|(p, &n)| {
                let iv = Interval {
                    phoneme: p.to_string(),
                    start: start as f64 * HOP_SECONDS,
                    end: (start + n) as f64 * HOP_SECONDS,
                };
                start += n;
                iv
            })
            .collect();
        AlignmentIntervals::new(entries).expect("generated intervals are contiguous")
    }
}

fn bump(f: f64, center: f64, width: f64) -> f64 {
    let z = (f - center) / width;
    (-z * z).exp()
}

fn phoneme_resonance(symbol_index: usize) -> f64 {
    300.0 + 220.0 * symbol_index as f64
}

pub fn synthesize_utterance(spec: &CorpusSpec, speaker: usize, index: usize, rng: &mut ChaCha8Rng) -> SyntheticUtterance {
    let contour = spec.contour_of(speaker);
    let v = voice(speaker);
    let n_ph = rng.gen_range(spec.min_phonemes..=spec.max_phonemes);
    let symbols: Vec<usize> = (0..n_ph).map(|_| rng.gen_range(0..TOY_INVENTORY.len())).collect();
    let frames: Vec<usize> = symbols
        .iter()
        .map(|_| {
            let base = rng.gen_range(4..=7) as f64;
            ((base * contour.duration_scale()).round() as usize).max(1)
        })
        .collect();
    let shift = rng.gen_range(0.85..1.15);
    let gain_jitter: Vec<f64> = symbols.iter().map(|_| rng.gen_range(0.6..1.0)).collect();

    let total_frames: usize = frames.iter().sum();
    let n = total_frames * HOP;
    let sr = SAMPLE_RATE as f64;
    let mut owner = Vec::with_capacity(n);
    for (p, &f) in frames.iter().enumerate() {
        owner.extend(std::iter::repeat(p).take(f * HOP));
    }
    let f0: Vec<f64> = (0..n)
        .map(|i| {
            let x = i as f64 / (n - 1).max(1) as f64;
            v.base_f0 * shift * contour.factor(x, i as f64 / sr)
        })
        .collect();

    let max_harmonics = (8000.0 / f0.iter().cloned().fold(f64::INFINITY, f64::min)).floor() as usize;
    let mut phase = vec![0.0; max_harmonics + 1];
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let p = owner[i];
        let ph_center = phoneme_resonance(symbols[p]);
        let mut s = 0.0;
        for k in 1..=max_harmonics {
            let fk = k as f64 * f0[i];
            if fk >= 7800.0 {
                break;
            }
            phase[k] += 2.0 * PI * fk / sr;
            let amp = (k as f64).powf(-0.8)
                * (0.5 + bump(fk, v.resonance, 300.0) + 0.8 * bump(fk, ph_center, 250.0));
            s += amp * phase[k].sin();
        }
        samples.push(s * gain_jitter[p]);
    }
    let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    samples.iter_mut().for_each(|s| *s *= PEAK / peak);

    let frame_f0 = (0..total_frames).map(|t| f0[(t * HOP).min(n - 1)]).collect();
    SyntheticUtterance {
        id: format!("spk{speaker}_{index:03}"),
        speaker,
        phonemes: symbols.iter().map(|&s| TOY_INVENTORY[s]).collect(),
        frames,
        f0: frame_f0,
        samples,
    }
}

/// Every utterance of the corpus, speaker-major, without touching disk.
pub fn generate_utterances(spec: &CorpusSpec) -> Result<Vec<SyntheticUtterance>> {
    if spec.n_speakers < 2 {
        return Err(Error::InvalidArgument("a synthetic corpus needs at least 2 speakers".into()));
    }
    if !(1..=3).contains(&spec.n_contours) {
        return Err(Error::InvalidArgument("n_contours must be 1, 2 or 3".into()));
    }
    if spec.utterances_each == 0 || spec.min_phonemes == 0 || spec.min_phonemes > spec.max_phonemes {
        return Err(Error::InvalidArgument("empty utterance specification".into()));
    }
    let mut out = Vec::with_capacity(spec.n_speakers * spec.utterances_each);
    for speaker in 0..spec.n_speakers {
        for index in 0..spec.utterances_each {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(((speaker as u64) << 32) | index as u64);
            out.push(synthesize_utterance(spec, speaker, index, &mut rng));
        }
    }
    Ok(out)
}

/// Writes `wavs/`, `alignments/` and `manifest.tsv` under `out`; returns the
/// manifest path.
pub fn generate_synthetic_corpus(spec: &CorpusSpec, out: &Path) -> Result<PathBuf> {
    let utts = generate_utterances(spec)?;
    fs::create_dir_all(out.join("wavs"))?;
    fs::create_dir_all(out.join("alignments"))?;
    let mut manifest = String::new();
    for u in &utts {
        let wav = out.join("wavs").join(format!("{}.wav", u.id));
        let ali = out.join("alignments").join(format!("{}.tsv", u.id));
        write_wav(
            &wav,
            &Waveform {
                samples: u.samples.clone(),
                sample_rate: SAMPLE_RATE,
            },
        )?;
        fs::write(&ali, format_alignment(&u.intervals()))?;
        let entry = ManifestEntry {
            id: u.id.clone(),
            wav,
            alignment: ali,
            phonemes: u.phonemes.iter().map(|s| s.to_string()).collect(),
            speaker: format!("spk{}", u.speaker),
            style: spec.style_name(u.speaker),
        };
        manifest.push_str(&format_entry(&entry, out));
        manifest.push('\n');
    }
    let path = out.join("manifest.tsv");
    fs::write(&path, manifest)?;
    Ok(path)
}

/// Least-squares slope of `values` against normalized time in [0, 1].
pub fn fitted_slope(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let xs: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
    let mx = xs.iter().sum::<f64>() / n as f64;
    let my = values.iter().sum::<f64>() / n as f64;
    let sxy: f64 = xs.iter().zip(values).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{estimate_f0, intervals_to_durations};
    use crate::trainer::manifest::load_manifest;

    #[test]
    fn regeneration_is_byte_identical() {
        let spec = CorpusSpec::new(2, 2, 2, 9);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_synthetic_corpus(&spec, a.path()).unwrap();
        generate_synthetic_corpus(&spec, b.path()).unwrap();
        for sub in ["wavs/spk1_001.wav", "alignments/spk0_000.tsv"] {
            assert_eq!(fs::read(a.path().join(sub)).unwrap(), fs::read(b.path().join(sub)).unwrap());
        }
        let ma = fs::read_to_string(a.path().join("manifest.tsv")).unwrap();
        let mb = fs::read_to_string(b.path().join("manifest.tsv")).unwrap();
        assert_eq!(ma, mb);
        let m = load_manifest(&a.path().join("manifest.tsv")).unwrap();
        assert_eq!(m.speakers, vec!["spk0", "spk1"]);
        assert_eq!(m.styles, vec!["rising", "falling"]);
    }

    #[test]
    fn rising_speaker_has_positive_slope() {
        let spec = CorpusSpec::new(3, 3, 3, 4);
        for u in generate_utterances(&spec).unwrap() {
            let w = Waveform {
                samples: u.samples.clone(),
                sample_rate: SAMPLE_RATE,
            };
            let voiced: Vec<f64> = estimate_f0(&w).into_iter().filter(|&f| f > 0.0).collect();
            let slope = fitted_slope(&voiced);
            match spec.contour_of(u.speaker) {
                Contour::Rising => assert!(slope > 0.0, "{} slope {slope}", u.id),
                Contour::Falling => assert!(slope < 0.0, "{} slope {slope}", u.id),
                Contour::Flat => {}
            }
        }
    }

    #[test]
    fn alignments_match_frames() {
        let spec = CorpusSpec::new(3, 3, 2, 1);
        for u in generate_utterances(&spec).unwrap() {
            let total: usize = u.frames.iter().sum();
            assert_eq!(u.samples.len(), total * HOP);
            let d = intervals_to_durations(&u.intervals(), total).unwrap();
            assert_eq!(d.iter().map(|&x| x as usize).collect::<Vec<_>>(), u.frames);
        }
    }

    #[test]
    fn style_names_and_validation() {
        let spec = CorpusSpec::new(5, 2, 1, 0);
        let names: Vec<String> = (0..5).map(|s| spec.style_name(s)).collect();
        assert_eq!(names, ["rising", "falling", "rising2", "falling2", "rising3"]);
        assert!(generate_utterances(&CorpusSpec::new(1, 1, 1, 0)).is_err());
    }

    #[test]
    fn slope_of_line() {
        let v: Vec<f64> = (0..11).map(|i| 3.0 + 2.0 * i as f64 / 10.0).collect();
        assert!((fitted_slope(&v) - 2.0).abs() < 1e-12);
    }
}

//! Inference from a checkpoint, Griffin-Lim inversion and artifact export.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rustfft::num_complex::Complex;

use crate::error::{Error, Result};
use crate::features::audio::{peak_normalize, peak_target};
use crate::features::spectral::{Stft, MEL_FLOOR, N_BINS};
use crate::features::{write_wav, Waveform, HOP, N_MEL, SAMPLE_RATE};
use crate::model::VarianceOutputs;
use crate::tensor::Tensor;
use crate::trainer::Checkpoint;

pub const GRIFFIN_LIM_ITERATIONS: usize = 60;

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisRequest {
    /// Whitespace-separated phoneme symbols.
    pub phonemes: String,
    pub speaker: String,
    pub style: String,
    pub source_style: Option<String>,
    /// Weight of `style` against `source_style`; 1 means pure target style.
    pub style_weight: f64,
    /// Seeds the Griffin-Lim phase initialisation.
    pub seed: u64,
}

impl SynthesisRequest {
    pub fn new(phonemes: &str, speaker: &str, style: &str) -> Self {
        Self {
            phonemes: phonemes.to_string(),
            speaker: speaker.to_string(),
            style: style.to_string(),
            source_style: None,
            style_weight: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Synthesis {
    /// `(frames, n_mel)` log-mel prediction.
    pub mel: Tensor,
    pub prosody: VarianceOutputs,
    pub style_vector: Tensor,
}

/// Runs inference. With a source style the style vector is the affine blend
/// `(1 - w)·source + w·target`; otherwise it is the target row.
pub fn synthesize(req: &SynthesisRequest, ckpt: &Checkpoint) -> Result<Synthesis> {
    if !(0.0..=1.0).contains(&req.style_weight) {
        return Err(Error::InvalidArgument(format!(
            "style weight {} outside [0, 1]",
            req.style_weight
        )));
    }
    let phonemes = ckpt.inventory().encode(&req.phonemes)?;
    let speaker = ckpt.speaker_id(&req.speaker)?;
    let target = ckpt.style_id(&req.style)?;
    let style_vector = match &req.source_style {
        Some(src) => ckpt
            .model
            .interpolate_style(ckpt.style_id(src)?, target, req.style_weight)?,
        None => ckpt.model.style_row(target)?,
    };
    let (mel, prosody) = ckpt.model.forward_infer(&phonemes, speaker, &style_vector)?;
    Ok(Synthesis {
        mel,
        prosody,
        style_vector,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GriffinLimOutput {
    pub wave: Waveform,
    /// Spectral convergence `‖S − |X|‖ / ‖S‖` after each iteration.
    pub convergence: Vec<f64>,
}

/// Least-squares inverse of the mel filterbank, `(N_BINS, N_MEL)` row-major.
pub fn filterbank_pseudo_inverse(stft: &Stft) -> Result<Vec<f64>> {
    let fb = DMatrix::from_row_slice(N_MEL, N_BINS, stft.filterbank());
    let pinv = fb
        .pseudo_inverse(1e-10)
        .map_err(|e| Error::InvalidArgument(format!("filterbank pseudo-inverse: {e}")))?;
    let mut out = Vec::with_capacity(N_BINS * N_MEL);
    for r in 0..N_BINS {
        for c in 0..N_MEL {
            out.push(pinv[(r, c)]);
        }
    }
    Ok(out)
}

fn spectral_convergence(target: &[Vec<f64>], estimate: &[Vec<Complex<f64>>]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (s, x) in target.iter().zip(estimate) {
        for (a, b) in s.iter().zip(x) {
            let d = a - b.norm();
            num += d * d;
            den += a * a;
        }
    }
    (num / den.max(f64::MIN_POSITIVE)).sqrt()
}

/// Inverts a `(F, 80)` log-mel spectrogram to `F·192` samples at a -6 dBFS
/// peak.
pub fn griffin_lim(mel: &Tensor, iterations: usize, seed: u64) -> Result<GriffinLimOutput> {
    if mel.cols() != N_MEL || mel.rows() == 0 {
        return Err(Error::DimensionMismatch {
            what: "mel bands for griffin-lim",
            expected: N_MEL,
            got: mel.cols(),
        });
    }
    if !mel.is_finite() {
        return Err(Error::NonFinite("mel spectrogram".into()));
    }
    let floor = MEL_FLOOR.ln() + 1e-9;
    if mel.data().iter().all(|&v| v <= floor) {
        return Err(Error::SilentSpectrogram);
    }
    let stft = Stft::new();
    let pinv = filterbank_pseudo_inverse(&stft)?;
    let target: Vec<Vec<f64>> = (0..mel.rows())
        .map(|t| {
            let m: Vec<f64> = mel.row(t).iter().map(|v| v.exp()).collect();
            (0..N_BINS)
                .map(|k| {
                    let row = &pinv[k * N_MEL..(k + 1) * N_MEL];
                    row.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>().max(0.0)
                })
                .collect()
        })
        .collect();

    let len = mel.rows() * HOP;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut spec: Vec<Vec<Complex<f64>>> = target
        .iter()
        .map(|frame| {
            frame
                .iter()
                .map(|&a| Complex::from_polar(a, rng.gen_range(0.0..std::f64::consts::TAU)))
                .collect()
        })
        .collect();
    let mut convergence = Vec::with_capacity(iterations);
    let mut x = stft.synthesize(&spec, len);
    for _ in 0..iterations {
        let rebuilt = stft.analyze(&x);
        convergence.push(spectral_convergence(&target, &rebuilt));
        for (frame, (est, mag)) in spec.iter_mut().zip(rebuilt.iter().zip(&target)) {
            for ((c, e), &a) in frame.iter_mut().zip(est).zip(mag) {
                let n = e.norm();
                *c = if n > 0.0 { e * (a / n) } else { Complex::new(a, 0.0) };
            }
        }
        x = stft.synthesize(&spec, len);
    }
    let samples = peak_normalize(x, peak_target()).map_err(|_| Error::SilentSpectrogram)?;
    Ok(GriffinLimOutput {
        wave: Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        },
        convergence,
    })
}

/// Files written by [`export_artifacts`].
#[derive(Clone, Debug, PartialEq)]
pub struct ArtifactPaths {
    pub pitch: PathBuf,
    pub energy: PathBuf,
    pub durations: PathBuf,
    pub mel: PathBuf,
    pub wav: Option<PathBuf>,
}

/// `index,value` rows with 9 significant digits.
pub fn trajectory_csv(values: &[f64]) -> String {
    let mut s = String::new();
    for (i, v) in values.iter().enumerate() {
        writeln!(s, "{i},{v:.8e}").unwrap();
    }
    s
}

pub fn parse_trajectory_csv(text: &str) -> Result<Vec<f64>> {
    text.lines()
        .enumerate()
        .map(|(n, line)| {
            let value = line.split(',').nth(1).and_then(|v| v.trim().parse::<f64>().ok());
            value.ok_or_else(|| Error::InvalidArgument(format!("bad trajectory row {}", n + 1)))
        })
        .collect()
}

/// Binary PGM with one row per mel band (highest band first) and one column
/// per frame, min-max scaled to 0..=255.
pub fn mel_graymap(mel: &Tensor) -> Vec<u8> {
    let (frames, bands) = mel.shape();
    let lo = mel.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = mel.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let mut out = format!("P5\n{frames} {bands}\n255\n").into_bytes();
    for b in (0..bands).rev() {
        for t in 0..frames {
            let v = if span > 0.0 { (mel.get(t, b) - lo) / span } else { 0.0 };
            out.push((v * 255.0).round() as u8);
        }
    }
    out
}

/// Writes `<stem>.pitch.csv`, `.energy.csv`, `.durations.csv`, `.mel.pgm`
/// and, when `audio` is given, `.wav` into `dir`.
pub fn export_artifacts(syn: &Synthesis, audio: Option<&Waveform>, dir: &Path, stem: &str) -> Result<ArtifactPaths> {
    fs::create_dir_all(dir)?;
    let paths = ArtifactPaths {
        pitch: dir.join(format!("{stem}.pitch.csv")),
        energy: dir.join(format!("{stem}.energy.csv")),
        durations: dir.join(format!("{stem}.durations.csv")),
        mel: dir.join(format!("{stem}.mel.pgm")),
        wav: audio.map(|_| dir.join(format!("{stem}.wav"))),
    };
    fs::write(&paths.pitch, trajectory_csv(&syn.prosody.pitch_hat))?;
    fs::write(&paths.energy, trajectory_csv(&syn.prosody.energy_hat))?;
    let durations: Vec<f64> = syn.prosody.durations.iter().map(|&d| d as f64).collect();
    fs::write(&paths.durations, trajectory_csv(&durations))?;
    fs::write(&paths.mel, mel_graymap(&syn.mel))?;
    if let (Some(w), Some(p)) = (audio, &paths.wav) {
        write_wav(p, w)?;
    }
    Ok(paths)
}

#[derive(Clone, Debug)]
pub struct SweepItem {
    pub weight: f64,
    pub synthesis: Synthesis,
    pub paths: Option<ArtifactPaths>,
}

/// One synthesis per weight, all sharing `req.seed`. With `out` set, writes
/// artifacts per weight plus `sweep.csv` mapping weight to files.
pub fn transition_sweep(
    req: &SynthesisRequest,
    weights: &[f64],
    ckpt: &Checkpoint,
    out: Option<&Path>,
    with_audio: bool,
) -> Result<Vec<SweepItem>> {
    if let Some(w) = weights.iter().find(|w| !(0.0..=1.0).contains(*w)) {
        return Err(Error::InvalidArgument(format!("sweep weight {w} outside [0, 1]")));
    }
    if req.source_style.is_none() {
        return Err(Error::InvalidArgument("a sweep needs a source style".into()));
    }
    let mut items = Vec::with_capacity(weights.len());
    let mut index = String::from("weight,pitch,energy,durations,mel,wav\n");
    for (i, &weight) in weights.iter().enumerate() {
        let r = SynthesisRequest {
            style_weight: weight,
            ..req.clone()
        };
        let synthesis = synthesize(&r, ckpt)?;
        let paths = match out {
            Some(dir) => {
                let audio = if with_audio {
                    Some(griffin_lim(&synthesis.mel, GRIFFIN_LIM_ITERATIONS, req.seed)?.wave)
                } else {
                    None
                };
                let p = export_artifacts(&synthesis, audio.as_ref(), dir, &format!("w{i:02}"))?;
                let name = |p: &Path| p.file_name().unwrap().to_string_lossy().into_owned();
                writeln!(
                    index,
                    "{weight},{},{},{},{},{}",
                    name(&p.pitch),
                    name(&p.energy),
                    name(&p.durations),
                    name(&p.mel),
                    p.wav.as_deref().map(name).unwrap_or_default()
                )
                .unwrap();
                Some(p)
            }
            None => None,
        };
        items.push(SweepItem {
            weight,
            synthesis,
            paths,
        });
    }
    if let Some(dir) = out {
        fs::write(dir.join("sweep.csv"), index)?;
    }
    Ok(items)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::spectral::mel_spectrogram;
    use crate::model::{AcousticModel, ModelConfig};
    use crate::normalize::NormMode;
    use crate::trainer::{AdamState, TrainingSchedule};

    fn checkpoint() -> Checkpoint {
        let mut config = ModelConfig::desk(4, 2, 3);
        config.hidden_dim = 16;
        config.ffn_dim = 16;
        config.variance_filter_dim = 16;
        config.encoder_layers = 1;
        config.decoder_layers = 1;
        let model = AcousticModel::new(config, 7).unwrap();
        let adam = AdamState::zeros_like(model.params.tensors());
        Checkpoint {
            model,
            adam,
            step: 0,
            schedule: TrainingSchedule::default(),
            speakers: vec!["ann".into(), "bob".into()],
            styles: vec!["rising".into(), "falling".into(), "flat".into()],
            phonemes: ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect(),
            norm_mode: NormMode::Utt,
        }
    }

    fn tone(freq: f64, n: usize) -> Waveform {
        Waveform {
            samples: (0..n)
                .map(|i| 0.5 * (2.0 * std::f64::consts::PI * freq * i as f64 / 16000.0).sin())
                .collect(),
            sample_rate: SAMPLE_RATE,
        }
    }

    fn dominant_frequency(x: &[f64]) -> f64 {
        let stft = Stft::new();
        let mags = stft.magnitudes(x);
        let mut acc = vec![0.0; N_BINS];
        for f in &mags {
            acc.iter_mut().zip(f).for_each(|(a, b)| *a += b);
        }
        let k = (1..N_BINS - 1).max_by(|&a, &b| acc[a].total_cmp(&acc[b])).unwrap();
        let (l, c, r) = (acc[k - 1], acc[k], acc[k + 1]);
        let delta = 0.5 * (l - r) / (l - 2.0 * c + r);
        (k as f64 + delta) * 16000.0 / 1024.0
    }

    #[test]
    fn endpoint_weights_are_exact() {
        let ckpt = checkpoint();
        let plain = synthesize(&SynthesisRequest::new("a b c d a", "ann", "rising"), &ckpt).unwrap();
        let w0 = SynthesisRequest {
            source_style: Some("rising".into()),
            style: "falling".into(),
            style_weight: 0.0,
            ..SynthesisRequest::new("a b c d a", "ann", "rising")
        };
        assert_eq!(synthesize(&w0, &ckpt).unwrap(), plain);
        let w1 = SynthesisRequest {
            source_style: Some("falling".into()),
            style: "rising".into(),
            style_weight: 1.0,
            ..w0.clone()
        };
        assert_eq!(synthesize(&w1, &ckpt).unwrap(), plain);
    }

    #[test]
    fn speakers_share_prosody() {
        let ckpt = checkpoint();
        let a = synthesize(&SynthesisRequest::new("a c b", "ann", "flat"), &ckpt).unwrap();
        let b = synthesize(&SynthesisRequest::new("a c b", "bob", "flat"), &ckpt).unwrap();
        assert_eq!(a.prosody, b.prosody);
        assert!(a.mel.max_abs_diff(&b.mel) > 0.0);
    }

    #[test]
    fn unknown_names_are_errors() {
        let ckpt = checkpoint();
        assert!(matches!(
            synthesize(&SynthesisRequest::new("a", "zed", "flat"), &ckpt),
            Err(Error::UnknownName { kind: "speaker", .. })
        ));
        assert!(synthesize(&SynthesisRequest::new("a", "ann", "loud"), &ckpt).is_err());
        assert!(synthesize(&SynthesisRequest::new("a q", "ann", "flat"), &ckpt).is_err());
    }

    #[test]
    fn griffin_lim_recovers_tone() {
        let w = tone(400.0, 16000);
        let mel = mel_spectrogram(&w).unwrap();
        let frames = mel.len() / N_MEL;
        let out = griffin_lim(&Tensor::from_vec(frames, N_MEL, mel), GRIFFIN_LIM_ITERATIONS, 1).unwrap();
        assert_eq!(out.wave.samples.len(), frames * HOP);
        assert!((out.wave.samples.len() as i64 - 16000).abs() <= 768);
        let f = dominant_frequency(&out.wave.samples);
        assert!((f - 400.0).abs() <= 10.0, "{f}");
        assert!(out.convergence.last().unwrap() <= &out.convergence[0]);
        let peak = out.wave.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - peak_target()).abs() < 1e-12);
    }

    #[test]
    fn silent_spectrogram_is_rejected() {
        let mel = Tensor::filled(10, N_MEL, MEL_FLOOR.ln());
        assert!(matches!(griffin_lim(&mel, 5, 0), Err(Error::SilentSpectrogram)));
    }

    #[test]
    fn exports_reparse() {
        let ckpt = checkpoint();
        let syn = synthesize(&SynthesisRequest::new("a b d", "bob", "falling"), &ckpt).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let audio = tone(200.0, syn.mel.rows() * HOP);
        let p = export_artifacts(&syn, Some(&audio), dir.path(), "x").unwrap();
        let pitch = parse_trajectory_csv(&fs::read_to_string(&p.pitch).unwrap()).unwrap();
        assert_eq!(pitch.len(), syn.prosody.frame_count);
        for (a, b) in pitch.iter().zip(&syn.prosody.pitch_hat) {
            assert!((a - b).abs() <= 1e-8 * b.abs().max(1e-300));
        }
        let pgm = fs::read(&p.mel).unwrap();
        let header = format!("P5\n{} 80\n255\n", syn.mel.rows());
        assert!(pgm.starts_with(header.as_bytes()));
        assert_eq!(pgm.len(), header.len() + 80 * syn.mel.rows());
        let spec = hound::WavReader::open(p.wav.unwrap()).unwrap().spec();
        assert_eq!((spec.sample_rate, spec.channels, spec.bits_per_sample), (16000, 1, 16));
    }

    #[test]
    fn sweep_writes_index() {
        let mut ckpt = checkpoint();
        ckpt.model.config.n_mel = 80;
        let req = SynthesisRequest {
            source_style: Some("rising".into()),
            ..SynthesisRequest::new("a b c", "ann", "falling")
        };
        let dir = tempfile::tempdir().unwrap();
        let weights = [0.0, 0.25, 0.5, 0.75, 1.0];
        let items = transition_sweep(&req, &weights, &ckpt, Some(dir.path()), false).unwrap();
        assert_eq!(items.len(), 5);
        let index = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        assert_eq!(index.lines().count(), 6);
        let src = synthesize(&SynthesisRequest::new("a b c", "ann", "rising"), &ckpt).unwrap();
        let tgt = synthesize(&SynthesisRequest::new("a b c", "ann", "falling"), &ckpt).unwrap();
        assert_eq!(items[0].synthesis.mel, src.mel);
        assert_eq!(items[4].synthesis.mel, tgt.mel);
        assert!(transition_sweep(&req, &[1.5], &ckpt, None, false).is_err());
    }
}

//! Browser bindings: analyse a synthetic tone, compare pitch normalization
//! scopes on the toy corpus, and plot the learning-rate schedule.
//!
//! Each export is a thin wrapper over a plain function so the logic can be
//! tested natively.

use std::f64::consts::PI;

use wasm_bindgen::prelude::*;

use msms::features::{analyze, condition_wave, utterance_from_parts, PhonemeInventory, Waveform, N_MEL, SAMPLE_RATE};
use msms::normalize::{apply_norm, compute_stats, Scope};
use msms::trainer::corpus::TOY_INVENTORY;
use msms::trainer::{generate_utterances, noam_lr, CorpusSpec};

fn js(e: msms::Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct ToneAnalysis {
    frames: usize,
    mel: Vec<f32>,
    pitch: Vec<f64>,
    energy: Vec<f64>,
}

#[wasm_bindgen]
impl ToneAnalysis {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    #[wasm_bindgen(getter)]
    pub fn bands(&self) -> usize {
        N_MEL
    }

    /// Log-mel values, frame-major.
    pub fn mel(&self) -> Vec<f32> {
        self.mel.clone()
    }

    /// F0 in Hz per frame, 0 when unvoiced.
    pub fn pitch(&self) -> Vec<f64> {
        self.pitch.clone()
    }

    pub fn energy(&self) -> Vec<f64> {
        self.energy.clone()
    }
}

/// A three-harmonic tone gliding exponentially from `f0_start` to `f0_end`.
pub fn glide(f0_start: f64, f0_end: f64, seconds: f64) -> Vec<f64> {
    let n = (seconds * SAMPLE_RATE as f64).round() as usize;
    let mut phase = 0.0;
    (0..n)
        .map(|i| {
            let t = i as f64 / n.max(1) as f64;
            let f = f0_start * (f0_end / f0_start).powf(t);
            phase += 2.0 * PI * f / SAMPLE_RATE as f64;
            (phase.sin() + 0.5 * (2.0 * phase).sin() + 0.25 * (3.0 * phase).sin()) / 1.75
        })
        .collect()
}

pub fn tone_analysis(f0_start: f64, f0_end: f64, seconds: f64) -> msms::Result<ToneAnalysis> {
    if !(f0_start > 0.0 && f0_end > 0.0 && seconds > 0.0 && seconds <= 10.0) {
        return Err(msms::Error::InvalidArgument("frequencies must be positive and duration in (0, 10] s".into()));
    }
    let wave = condition_wave(&glide(f0_start, f0_end, seconds), SAMPLE_RATE)?;
    let (mel, energy, pitch) = analyze(&wave)?;
    Ok(ToneAnalysis {
        frames: pitch.len(),
        mel: mel.iter().map(|&v| v as f32).collect(),
        pitch,
        energy,
    })
}

#[wasm_bindgen(js_name = analyzeTone)]
pub fn analyze_tone(f0_start: f64, f0_end: f64, seconds: f64) -> Result<ToneAnalysis, JsError> {
    tone_analysis(f0_start, f0_end, seconds).map_err(js)
}

#[wasm_bindgen]
pub struct NormComparison {
    raw: Vec<f64>,
    utterance: Vec<f64>,
    speaker: Vec<f64>,
}

#[wasm_bindgen]
impl NormComparison {
    /// Voiced F0 in Hz, one value per voiced frame.
    pub fn raw(&self) -> Vec<f64> {
        self.raw.clone()
    }

    /// The same frames z-scored with the utterance's own statistics.
    pub fn utterance(&self) -> Vec<f64> {
        self.utterance.clone()
    }

    /// The same frames z-scored with statistics pooled over the speaker.
    pub fn speaker(&self) -> Vec<f64> {
        self.speaker.clone()
    }
}

/// Normalizes the first utterance of `speaker` in a three-speaker toy
/// corpus at both scopes.
pub fn normalization_comparison(speaker: usize, seed: u64) -> msms::Result<NormComparison> {
    let spec = CorpusSpec::new(3, 3, 3, seed);
    if speaker >= spec.n_speakers {
        return Err(msms::Error::InvalidArgument(format!("speaker {speaker} (toy corpus has 3)")));
    }
    let inventory = PhonemeInventory::new(&TOY_INVENTORY);
    let utts = generate_utterances(&spec)?
        .into_iter()
        .filter(|u| u.speaker == speaker)
        .map(|u| {
            let wave = Waveform {
                samples: u.samples.clone(),
                sample_rate: SAMPLE_RATE,
            };
            let phonemes = inventory.encode(&u.phonemes.join(" "))?;
            utterance_from_parts(&u.id, &wave, &u.intervals(), phonemes, speaker, speaker)
        })
        .collect::<msms::Result<Vec<_>>>()?;
    let refs: Vec<_> = utts.iter().collect();
    let first = &utts[0];
    let by_utt = apply_norm(first, &compute_stats(&refs[..1], Scope::Utterance)?);
    let by_spk = apply_norm(first, &compute_stats(&refs, Scope::Speaker)?);
    let voiced: Vec<usize> = (0..first.frames()).filter(|&i| first.pitch[i] > 0.0).collect();
    let pick = |v: &[f32]| voiced.iter().map(|&i| v[i] as f64).collect();
    Ok(NormComparison {
        raw: pick(&first.pitch),
        utterance: pick(&by_utt.pitch),
        speaker: pick(&by_spk.pitch),
    })
}

#[wasm_bindgen(js_name = compareNormalization)]
pub fn compare_normalization(speaker: usize, seed: u64) -> Result<NormComparison, JsError> {
    normalization_comparison(speaker, seed).map_err(js)
}

/// Learning rate at steps `1..=steps`.
pub fn lr_curve(peak_lr: f64, warmup_steps: u64, steps: u64) -> msms::Result<Vec<f64>> {
    if steps == 0 || steps > 1_000_000 {
        return Err(msms::Error::InvalidArgument("steps must be in 1..=1000000".into()));
    }
    (1..=steps).map(|s| noam_lr(s, peak_lr, warmup_steps)).collect()
}

#[wasm_bindgen(js_name = noamCurve)]
pub fn noam_curve(peak_lr: f64, warmup_steps: u64, steps: u64) -> Result<Vec<f64>, JsError> {
    lr_curve(peak_lr, warmup_steps, steps).map_err(js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_pitch_follows_glide() {
        let t = tone_analysis(150.0, 300.0, 1.0).unwrap();
        assert_eq!(t.mel.len(), t.frames * N_MEL);
        let voiced: Vec<f64> = t.pitch.iter().copied().filter(|&f| f > 0.0).collect();
        assert!(voiced.len() > t.frames / 2);
        assert!(voiced.first().unwrap() < voiced.last().unwrap());
        assert!((voiced[voiced.len() / 2] - 212.0).abs() < 15.0);
    }

    #[test]
    fn utterance_scope_is_standardized() {
        let c = normalization_comparison(1, 7).unwrap();
        let n = c.utterance.len() as f64;
        let mean = c.utterance.iter().sum::<f64>() / n;
        let var = c.utterance.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-4);
        assert_eq!(c.raw.len(), c.speaker.len());
        assert!(normalization_comparison(3, 7).is_err());
    }

    #[test]
    fn curve_peaks_at_warmup() {
        let c = lr_curve(1e-3, 100, 400).unwrap();
        let argmax = c.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0 + 1;
        assert_eq!(argmax, 100);
        assert!((c[99] - 1e-3).abs() < 1e-15);
        assert!(lr_curve(1e-3, 100, 0).is_err());
    }
}

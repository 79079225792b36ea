use std::path::Path;

use super::{Waveform, SAMPLE_RATE};
use crate::error::{Error, Result};

pub const SUPPORTED_RATES: [u32; 5] = [16000, 22050, 24000, 44100, 48000];

/// Peak level after conditioning: -6 dBFS.
pub fn peak_target() -> f64 {
    10f64.powf(-6.0 / 20.0)
}

/// Half-width of the resampling kernel in zero crossings.
const SINC_ZEROS: f64 = 32.0;

/// Resample to 16 kHz if needed and scale so the peak sits at -6 dBFS.
pub fn condition_wave(samples: &[f64], rate: u32) -> Result<Waveform> {
    if samples.is_empty() {
        return Err(Error::TooShort { samples: 0, needed: 1 });
    }
    if !SUPPORTED_RATES.contains(&rate) {
        return Err(Error::UnsupportedSampleRate(rate));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("input samples".into()));
    }
    let resampled = if rate == SAMPLE_RATE {
        samples.to_vec()
    } else {
        resample(samples, rate, SAMPLE_RATE)
    };
    let samples = peak_normalize(resampled, peak_target())?;
    Ok(Waveform {
        samples,
        sample_rate: SAMPLE_RATE,
    })
}

pub fn peak_normalize(mut samples: Vec<f64>, target: f64) -> Result<Vec<f64>> {
    let peak = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::Silence);
    }
    let g = target / peak;
    for v in &mut samples {
        *v *= g;
    }
    Ok(samples)
}

/// Band-limited resampling with a Hann-windowed sinc kernel.
pub fn resample(x: &[f64], from: u32, to: u32) -> Vec<f64> {
    let ratio = to as f64 / from as f64;
    let out_len = ((x.len() as f64) * ratio).ceil() as usize;
    // Cutoff relative to the input Nyquist; below 1 when downsampling.
    let fc = ratio.min(1.0);
    let half_width = SINC_ZEROS / fc;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let t = j as f64 / ratio;
        let lo = (t - half_width).ceil().max(0.0) as usize;
        let hi = ((t + half_width).floor() as usize).min(x.len() - 1);
        let mut acc = 0.0;
        for (i, &xi) in x.iter().enumerate().take(hi + 1).skip(lo) {
            let d = t - i as f64;
            let w = 0.5 + 0.5 * (std::f64::consts::PI * d / half_width).cos();
            acc += xi * fc * sinc(fc * d) * w;
        }
        out.push(acc);
    }
    out
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Reads a mono 16-bit PCM RIFF file as samples in [-1, 1] plus its rate.
pub fn read_wav(path: &Path) -> Result<(Vec<f64>, u32)> {
    let mut reader = hound::WavReader::open(path)?;
    let spec = reader.spec();
    if spec.channels != 1 || spec.bits_per_sample != 16 || spec.sample_format != hound::SampleFormat::Int {
        return Err(Error::InvalidArgument(format!(
            "{}: expected mono 16-bit PCM, found {} channel(s) at {} bits",
            path.display(),
            spec.channels,
            spec.bits_per_sample
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    Ok((samples, spec.sample_rate))
}

/// Writes mono 16-bit PCM; samples are clipped to [-1, 1].
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut w = hound::WavWriter::create(path, spec)?;
    for &s in &wave.samples {
        w.write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)?;
    }
    w.finalize()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sine(freq: f64, rate: u32, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / rate as f64).sin())
            .collect()
    }

    #[test]
    fn peak_is_minus_six_dbfs() {
        let mut x = sine(300.0, 16000, 4000, 0.3);
        x[100] = 0.9;
        let w = condition_wave(&x, 16000).unwrap();
        let peak = w.samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((peak - 0.5012).abs() < 1e-4);
        assert_eq!(w.samples.len(), 4000);
        assert_eq!(w.sample_rate, 16000);
    }

    #[test]
    fn silence_and_bad_rates_are_rejected() {
        assert!(matches!(condition_wave(&[0.0; 500], 16000), Err(Error::Silence)));
        assert!(matches!(
            condition_wave(&[0.1; 500], 8000),
            Err(Error::UnsupportedSampleRate(8000))
        ));
        assert!(condition_wave(&[], 16000).is_err());
    }

    #[test]
    fn resampling_preserves_tone_frequency() {
        let x = sine(440.0, 48000, 48000, 0.5);
        let w = condition_wave(&x, 48000).unwrap();
        assert_eq!(w.samples.len(), 16000);
        let reference = sine(440.0, 16000, 16000, 1.0);
        // correlate away from the edges
        let (a, b) = (&w.samples[1000..15000], &reference[1000..15000]);
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!(dot / (na * nb) > 0.999);
    }

    #[test]
    fn downsampling_removes_content_above_nyquist() {
        // 10 kHz is above the 8 kHz output Nyquist
        let x: Vec<f64> = sine(10000.0, 44100, 44100, 0.5)
            .iter()
            .zip(sine(200.0, 44100, 44100, 0.5))
            .map(|(a, b)| a + b)
            .collect();
        let y = resample(&x, 44100, 16000);
        let reference = sine(200.0, 16000, y.len(), 0.5);
        let err: f64 = y[800..y.len() - 800]
            .iter()
            .zip(&reference[800..])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 0.02, "residual {err}");
    }

    #[test]
    fn wav_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.wav");
        let wave = Waveform {
            samples: sine(200.0, 16000, 1600, 0.5),
            sample_rate: 16000,
        };
        write_wav(&path, &wave).unwrap();
        let (back, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 16000);
        assert_eq!(back.len(), 1600);
        for (a, b) in back.iter().zip(&wave.samples) {
            assert!((a - b).abs() < 1.0 / 16000.0);
        }
    }
}

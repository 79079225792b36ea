//! Frame-wise F0 by normalized autocorrelation.
//!
//! For each 48 ms segment the normalized correlation
//! `r(τ) = Σ x[n]x[n+τ] / sqrt(Σ x[n]² · Σ x[n+τ]²)` is evaluated over the
//! lags covering 50–600 Hz. A frame is voiced when the best peak reaches
//! 0.3. To avoid picking a multiple of the period, the smallest-lag local
//! maximum within 85% of the best peak wins; its position is refined with
//! a parabola through the neighbouring lags.

use super::spectral::{frame_count, Stft};
use super::{Waveform, SAMPLE_RATE};

pub const F0_MIN: f64 = 50.0;
pub const F0_MAX: f64 = 600.0;
pub const VOICING_THRESHOLD: f64 = 0.3;
const OCTAVE_TOLERANCE: f64 = 0.85;
/// Segments quieter than this (RMS) are treated as unvoiced.
const SILENCE_RMS: f64 = 1e-6;

/// F0 in Hz per frame, 0 for unvoiced frames.
pub fn estimate_f0(w: &Waveform) -> Vec<f64> {
    let stft = Stft::new();
    (0..frame_count(w.samples.len()))
        .map(|t| frame_f0(&stft.segment(&w.samples, t)))
        .collect()
}

/// F0 of a single segment, 0 when unvoiced.
pub fn frame_f0(seg: &[f64]) -> f64 {
    let sr = SAMPLE_RATE as f64;
    let min_lag = (sr / F0_MAX).floor() as usize;
    let max_lag = ((sr / F0_MIN).ceil() as usize).min(seg.len() / 2);
    let energy: f64 = seg.iter().map(|v| v * v).sum();
    if (energy / seg.len() as f64).sqrt() < SILENCE_RMS || max_lag <= min_lag + 2 {
        return 0.0;
    }

    // one lag either side of the search band so parabolic fits have neighbours
    let lo = min_lag - 1;
    let hi = max_lag + 1;
    let r: Vec<f64> = (lo..=hi).map(|lag| normalized_correlation(seg, lag)).collect();
    let at = |lag: usize| r[lag - lo];

    let mut best = f64::NEG_INFINITY;
    for lag in min_lag..=max_lag {
        best = best.max(at(lag));
    }
    if best < VOICING_THRESHOLD {
        return 0.0;
    }
    let chosen = (min_lag..=max_lag)
        .find(|&lag| {
            let v = at(lag);
            v >= OCTAVE_TOLERANCE * best && v >= at(lag - 1) && v >= at(lag + 1)
        })
        .unwrap_or_else(|| {
            (min_lag..=max_lag)
                .max_by(|&a, &b| at(a).total_cmp(&at(b)))
                .expect("non-empty lag range")
        });

    let (a, b, c) = (at(chosen - 1), at(chosen), at(chosen + 1));
    let denom = a - 2.0 * b + c;
    let shift = if denom.abs() > 1e-12 {
        (0.5 * (a - c) / denom).clamp(-0.5, 0.5)
    } else {
        0.0
    };
    sr / (chosen as f64 + shift)
}

fn normalized_correlation(x: &[f64], lag: usize) -> f64 {
    let n = x.len() - lag;
    let (mut xy, mut xx, mut yy) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (a, b) = (x[i], x[i + lag]);
        xy += a * b;
        xx += a * a;
        yy += b * b;
    }
    let d = (xx * yy).sqrt();
    if d <= 0.0 {
        0.0
    } else {
        xy / d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform {
            samples,
            sample_rate: SAMPLE_RATE,
        }
    }

    fn sine(freq: f64, n: usize, amp: f64) -> Vec<f64> {
        (0..n)
            .map(|i| amp * (2.0 * std::f64::consts::PI * freq * i as f64 / SAMPLE_RATE as f64).sin())
            .collect()
    }

    #[test]
    fn sine_220_is_tracked() {
        let f0 = estimate_f0(&wave(sine(220.0, 16000, 1.0)));
        for &f in &f0[3..f0.len() - 3] {
            assert!((f - 220.0).abs() <= 2.0, "{f}");
        }
    }

    #[test]
    fn sines_across_the_range_within_one_percent() {
        for freq in [80.0, 113.0, 160.0, 247.0, 330.0, 415.0, 500.0] {
            let f0 = estimate_f0(&wave(sine(freq, 8000, 0.5)));
            for &f in &f0[3..f0.len() - 3] {
                assert!((f - freq).abs() <= 0.01 * freq, "{freq}: {f}");
            }
        }
    }

    #[test]
    fn harmonic_tone_tracks_fundamental() {
        let n = 8000;
        let f = 140.0;
        let x: Vec<f64> = (0..n)
            .map(|i| {
                let t = i as f64 / SAMPLE_RATE as f64;
                (1..12)
                    .map(|k| (2.0 * std::f64::consts::PI * f * k as f64 * t).sin() / k as f64)
                    .sum::<f64>()
            })
            .collect();
        let f0 = estimate_f0(&wave(x));
        for &v in &f0[3..f0.len() - 3] {
            assert!((v - f).abs() <= 0.01 * f, "{v}");
        }
    }

    #[test]
    fn quiet_white_noise_is_mostly_unvoiced() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Vec<f64> = (0..16000).map(|_| rng.gen_range(-0.01..0.01)).collect();
        let f0 = estimate_f0(&wave(x));
        let unvoiced = f0.iter().filter(|&&f| f == 0.0).count();
        assert!(unvoiced as f64 >= 0.9 * f0.len() as f64, "{unvoiced}/{}", f0.len());
    }

    #[test]
    fn silence_is_unvoiced() {
        assert!(estimate_f0(&wave(vec![0.0; 3000])).iter().all(|&f| f == 0.0));
    }
}

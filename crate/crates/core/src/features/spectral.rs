//! Short-time analysis at the model's frame geometry: 48 ms Hann windows
//! every 12 ms, zero-padded to a 1024-point FFT, frames centred on
//! multiples of the hop with reflect padding at the edges.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{Waveform, HOP, N_FFT, N_MEL, SAMPLE_RATE, WIN};
use crate::error::{Error, Result};

pub const MEL_FLOOR: f64 = 1e-5;
pub const MEL_FMAX: f64 = 8000.0;
pub const N_BINS: usize = N_FFT / 2 + 1;

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Number of analysis frames for `n` samples.
pub fn frame_count(n: usize) -> usize {
    n.div_ceil(HOP)
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut i = i.rem_euclid(period);
    if i >= n as isize {
        i = period - i;
    }
    i as usize
}

pub fn hann(len: usize) -> Vec<f64> {
    // periodic Hann, as used for STFT analysis
    (0..len)
        .map(|i| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / len as f64).cos())
        .collect()
}

/// 80 triangular filters with unit peaks, equally spaced on the HTK mel
/// scale between 0 Hz and 8 kHz. Row-major `(N_MEL, N_BINS)`.
pub fn mel_filterbank() -> Vec<f64> {
    let top = hz_to_mel(MEL_FMAX);
    let edges: Vec<f64> = (0..N_MEL + 2)
        .map(|i| mel_to_hz(top * i as f64 / (N_MEL + 1) as f64))
        .collect();
    let mut fb = vec![0.0; N_MEL * N_BINS];
    for m in 0..N_MEL {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for k in 0..N_BINS {
            let f = k as f64 * SAMPLE_RATE as f64 / N_FFT as f64;
            let w = if f > lo && f <= mid {
                (f - lo) / (mid - lo)
            } else if f > mid && f < hi {
                (hi - f) / (hi - mid)
            } else {
                0.0
            };
            fb[m * N_BINS + k] = w;
        }
    }
    fb
}

/// Centre frequency of each mel filter in Hz.
pub fn mel_centers() -> Vec<f64> {
    let top = hz_to_mel(MEL_FMAX);
    (1..=N_MEL)
        .map(|i| mel_to_hz(top * i as f64 / (N_MEL + 1) as f64))
        .collect()
}

/// Reusable analysis/synthesis state (FFT plans, window, filterbank).
pub struct Stft {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    window: Vec<f64>,
    filterbank: Vec<f64>,
}

impl Default for Stft {
    fn default() -> Self {
        Self::new()
    }
}

impl Stft {
    pub fn new() -> Self {
        let mut planner = FftPlanner::new();
        Self {
            forward: planner.plan_fft_forward(N_FFT),
            inverse: planner.plan_fft_inverse(N_FFT),
            window: hann(WIN),
            filterbank: mel_filterbank(),
        }
    }

    pub fn filterbank(&self) -> &[f64] {
        &self.filterbank
    }

    pub fn window(&self) -> &[f64] {
        &self.window
    }

    /// Un-windowed 768-sample segment centred on frame `t`.
    pub fn segment(&self, x: &[f64], t: usize) -> Vec<f64> {
        let start = (t * HOP) as isize - (WIN / 2) as isize;
        (0..WIN).map(|i| x[reflect(start + i as isize, x.len())]).collect()
    }

    /// Complex spectrum of every frame, `N_BINS` bins each.
    pub fn analyze(&self, x: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let offset = (N_FFT - WIN) / 2;
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        (0..frame_count(x.len()))
            .map(|t| {
                buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
                for (i, s) in self.segment(x, t).into_iter().enumerate() {
                    buf[offset + i] = Complex::new(s * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..N_BINS].to_vec()
            })
            .collect()
    }

    /// Linear magnitude spectrogram, one row of `N_BINS` per frame.
    pub fn magnitudes(&self, x: &[f64]) -> Vec<Vec<f64>> {
        self.analyze(x)
            .into_iter()
            .map(|frame| frame.iter().map(|c| c.norm()).collect())
            .collect()
    }

    /// Weighted overlap-add inverse of [`Stft::analyze`], trimmed to `len`.
    pub fn synthesize(&self, frames: &[Vec<Complex<f64>>], len: usize) -> Vec<f64> {
        let offset = (N_FFT - WIN) / 2;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let mut buf = vec![Complex::new(0.0, 0.0); N_FFT];
        for (t, frame) in frames.iter().enumerate() {
            buf[..N_BINS].copy_from_slice(frame);
            for k in 1..N_FFT - N_BINS + 1 {
                buf[N_FFT - k] = frame[k].conj();
            }
            self.inverse.process(&mut buf);
            let start = (t * HOP) as isize - (WIN / 2) as isize;
            for i in 0..WIN {
                let n = start + i as isize;
                if n < 0 || n as usize >= len {
                    continue;
                }
                let w = self.window[i];
                out[n as usize] += buf[offset + i].re / N_FFT as f64 * w;
                norm[n as usize] += w * w;
            }
        }
        for (o, n) in out.iter_mut().zip(&norm) {
            if *n > 1e-10 {
                *o /= n;
            }
        }
        out
    }

    /// Projects magnitude frames onto the mel filterbank.
    pub fn mel_from_magnitudes(&self, mags: &[Vec<f64>]) -> Vec<f64> {
        let mut out = Vec::with_capacity(mags.len() * N_MEL);
        for frame in mags {
            for m in 0..N_MEL {
                let row = &self.filterbank[m * N_BINS..(m + 1) * N_BINS];
                let v: f64 = row.iter().zip(frame).map(|(a, b)| a * b).sum();
                out.push(v.max(MEL_FLOOR).ln());
            }
        }
        out
    }
}

fn check_length(w: &Waveform) -> Result<()> {
    if w.samples.len() < HOP {
        return Err(Error::TooShort {
            samples: w.samples.len(),
            needed: HOP,
        });
    }
    Ok(())
}

/// Log-mel spectrogram, row-major `(F, 80)` with `F = ceil(N / 192)`.
pub fn mel_spectrogram(w: &Waveform) -> Result<Vec<f64>> {
    check_length(w)?;
    let stft = Stft::new();
    Ok(stft.mel_from_magnitudes(&stft.magnitudes(&w.samples)))
}

/// L2 norm of each frame's linear magnitude spectrum.
pub fn frame_energy(w: &Waveform) -> Result<Vec<f64>> {
    check_length(w)?;
    let stft = Stft::new();
    Ok(stft
        .magnitudes(&w.samples)
        .iter()
        .map(|f| f.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn frame_count_is_ceil_of_hops() {
        let m = mel_spectrogram(&wave(sine(440.0, 16000, 0.5))).unwrap();
        assert_eq!(m.len(), 84 * N_MEL);
        assert_eq!(frame_count(192 * 50), 50);
        assert_eq!(frame_count(192 * 50 + 1), 51);
        assert!(mel_spectrogram(&wave(vec![0.1; 191])).is_err());
    }

    #[test]
    fn silence_hits_the_floor() {
        let m = mel_spectrogram(&wave(vec![0.0; 4000])).unwrap();
        assert!(m.iter().all(|&v| v == MEL_FLOOR.ln()));
        let e = frame_energy(&wave(vec![0.0; 4000])).unwrap();
        assert!(e.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_khz_tone_lands_near_its_filter() {
        let m = mel_spectrogram(&wave(sine(1000.0, 8000, 0.5))).unwrap();
        let centers = mel_centers();
        let expected = centers
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().total_cmp(&(b.1 - 1000.0).abs()))
            .unwrap()
            .0;
        let frames = m.len() / N_MEL;
        for t in 2..frames - 2 {
            let row = &m[t * N_MEL..(t + 1) * N_MEL];
            let argmax = (0..N_MEL).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            assert!((argmax as isize - expected as isize).abs() <= 2);
        }
    }

    #[test]
    fn energy_is_linear_in_amplitude() {
        let x = sine(300.0, 6000, 0.2);
        let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
        let e1 = frame_energy(&wave(x)).unwrap();
        let e2 = frame_energy(&wave(x2)).unwrap();
        assert_eq!(e1.len(), frame_count(6000));
        for (a, b) in e1.iter().zip(&e2) {
            assert!((b - 2.0 * a).abs() <= 1e-6 * b.abs().max(1e-12));
        }
    }

    #[test]
    fn shift_by_one_hop_shifts_interior_frames() {
        let s: Vec<f64> = (0..8000)
            .map(|i| ((i as f64) * 0.031).sin() * 0.3 + ((i as f64) * 0.0071).cos() * 0.2)
            .collect();
        let full = mel_spectrogram(&wave(s.clone())).unwrap();
        let shifted = mel_spectrogram(&wave(s[HOP..].to_vec())).unwrap();
        let frames = shifted.len() / N_MEL;
        for t in 3..frames - 3 {
            for m in 0..N_MEL {
                let a = shifted[t * N_MEL + m];
                let b = full[(t + 1) * N_MEL + m];
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn analysis_synthesis_round_trip() {
        let stft = Stft::new();
        let x = sine(523.0, 5000, 0.4);
        let y = stft.synthesize(&stft.analyze(&x), x.len());
        let err = x
            .iter()
            .zip(&y)
            .skip(WIN)
            .take(x.len() - 2 * WIN)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "reconstruction error {err}");
    }

    #[test]
    fn reflect_indexing() {
        assert_eq!(reflect(-1, 5), 1);
        assert_eq!(reflect(-4, 5), 4);
        assert_eq!(reflect(5, 5), 3);
        assert_eq!(reflect(12, 5), 4);
        assert_eq!(reflect(3, 1), 0);
    }
}

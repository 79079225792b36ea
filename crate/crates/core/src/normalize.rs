//! Pitch and energy z-normalization at utterance scope (UttNorm) or pooled
//! over a speaker (SpkNorm).
//!
//! Pitch statistics use voiced frames only; energy statistics use every
//! frame. Variances are population variances. Unvoiced frames stay exactly
//! zero after normalization.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::AlignedUtterance;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scope {
    Utterance,
    Speaker,
}

/// Which statistics scope training targets are normalized with.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NormMode {
    Utt,
    Spk,
}

impl FromStr for NormMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "utt" => Ok(NormMode::Utt),
            "spk" => Ok(NormMode::Spk),
            other => Err(Error::InvalidArgument(format!("norm mode {other:?} (expected utt or spk)"))),
        }
    }
}

impl fmt::Display for NormMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NormMode::Utt => "utt",
            NormMode::Spk => "spk",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub pitch_mean: f64,
    pub pitch_std: f64,
    pub energy_mean: f64,
    pub energy_std: f64,
    pub scope: Scope,
    pub voiced_frames_used: usize,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64, usize) {
    let (sum, n) = values.clone().fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        return (0.0, 0.0, 0);
    }
    let mean = sum / n as f64;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

fn degenerate(std: f64, mean: f64) -> bool {
    !(std > 1e-12 * mean.abs().max(1.0))
}

/// Statistics over one utterance (`Scope::Utterance`) or every utterance of
/// one speaker (`Scope::Speaker`), folded in utterance-id order.
pub fn compute_stats(utterances: &[&AlignedUtterance], scope: Scope) -> Result<NormStats> {
    match scope {
        Scope::Utterance if utterances.len() != 1 => {
            return Err(Error::InvalidArgument(format!(
                "utterance scope needs exactly one utterance, got {}",
                utterances.len()
            )))
        }
        _ if utterances.is_empty() => return Err(Error::InvalidArgument("no utterances".into())),
        Scope::Speaker => {
            let spk = utterances[0].speaker_id;
            if utterances.iter().any(|u| u.speaker_id != spk) {
                return Err(Error::InvalidArgument("speaker scope mixes speakers".into()));
            }
        }
        _ => {}
    }
    let mut ordered: Vec<&AlignedUtterance> = utterances.to_vec();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));

    let voiced = ordered
        .iter()
        .flat_map(|u| u.pitch.iter())
        .filter(|&&p| p > 0.0)
        .map(|&p| p as f64);
    let (pitch_mean, pitch_std, n_voiced) = mean_std(voiced);
    if n_voiced < 2 {
        return Err(Error::InsufficientVoiced(n_voiced));
    }
    if degenerate(pitch_std, pitch_mean) {
        return Err(Error::DegenerateStats("pitch has zero variance"));
    }
    let energy = ordered.iter().flat_map(|u| u.energy.iter()).map(|&e| e as f64);
    let (energy_mean, energy_std, _) = mean_std(energy);
    if degenerate(energy_std, energy_mean) {
        return Err(Error::DegenerateStats("energy has zero variance"));
    }
    Ok(NormStats {
        pitch_mean,
        pitch_std,
        energy_mean,
        energy_std,
        scope,
        voiced_frames_used: n_voiced,
    })
}

/// Normalized copy of `utt`: voiced pitch and all energy frames z-scored,
/// unvoiced pitch left at exactly 0.
pub fn apply_norm(utt: &AlignedUtterance, stats: &NormStats) -> AlignedUtterance {
    let mut out = utt.clone();
    out.pitch = utt
        .pitch
        .iter()
        .map(|&p| {
            if p > 0.0 {
                ((p as f64 - stats.pitch_mean) / stats.pitch_std) as f32
            } else {
                0.0
            }
        })
        .collect();
    out.energy = utt
        .energy
        .iter()
        .map(|&e| ((e as f64 - stats.energy_mean) / stats.energy_std) as f32)
        .collect();
    out
}

impl NormStats {
    pub fn denormalize_pitch(&self, values: &[f64]) -> Vec<f64> {
        denormalize(values, self.pitch_mean, self.pitch_std)
    }

    pub fn denormalize_energy(&self, values: &[f64]) -> Vec<f64> {
        denormalize(values, self.energy_mean, self.energy_std)
    }

    /// Tab-separated report row: id, scope, four statistics, voiced count.
    pub fn to_row(&self, id: &str) -> String {
        let scope = match self.scope {
            Scope::Utterance => "utterance",
            Scope::Speaker => "speaker",
        };
        format!(
            "{id}\t{scope}\t{:.9e}\t{:.9e}\t{:.9e}\t{:.9e}\t{}",
            self.pitch_mean, self.pitch_std, self.energy_mean, self.energy_std, self.voiced_frames_used
        )
    }
}

pub fn denormalize(values: &[f64], mean: f64, std: f64) -> Vec<f64> {
    values.iter().map(|v| v * std + mean).collect()
}

/// Normalizes every utterance under `mode`. Returns the normalized
/// utterances (input order) and the statistics used, keyed by utterance id
/// for `Utt` and by `spk<id>` for `Spk`.
pub fn normalize_corpus(
    utterances: &[AlignedUtterance],
    mode: NormMode,
) -> Result<(Vec<AlignedUtterance>, BTreeMap<String, NormStats>)> {
    let mut report = BTreeMap::new();
    match mode {
        NormMode::Utt => {
            let mut out = Vec::with_capacity(utterances.len());
            for u in utterances {
                let s = compute_stats(&[u], Scope::Utterance)?;
                out.push(apply_norm(u, &s));
                report.insert(u.id.clone(), s);
            }
            Ok((out, report))
        }
        NormMode::Spk => {
            let mut by_speaker: BTreeMap<usize, Vec<&AlignedUtterance>> = BTreeMap::new();
            for u in utterances {
                by_speaker.entry(u.speaker_id).or_default().push(u);
            }
            let mut stats = BTreeMap::new();
            for (spk, utts) in &by_speaker {
                stats.insert(*spk, compute_stats(utts, Scope::Speaker)?);
            }
            let out = utterances.iter().map(|u| apply_norm(u, &stats[&u.speaker_id])).collect();
            for (spk, s) in stats {
                report.insert(format!("spk{spk}"), s);
            }
            Ok((out, report))
        }
    }
}

/// Voiced-frame mean and population std of `normalized` pitch, using the
/// voicing of the `raw` utterance it came from.
pub fn voiced_moments(raw: &AlignedUtterance, normalized: &AlignedUtterance) -> (f64, f64) {
    let vals = raw
        .pitch
        .iter()
        .zip(&normalized.pitch)
        .filter(|(r, _)| **r > 0.0)
        .map(|(_, n)| *n as f64);
    let (m, s, _) = mean_std(vals);
    (m, s)
}

pub fn energy_moments(normalized: &AlignedUtterance) -> (f64, f64) {
    let (m, s, _) = mean_std(normalized.energy.iter().map(|&e| e as f64));
    (m, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::PhonemeSequence;
    use proptest::prelude::*;

    fn utt(id: &str, speaker: usize, pitch: &[f32], energy: &[f32]) -> AlignedUtterance {
        AlignedUtterance {
            id: id.into(),
            phonemes: PhonemeSequence::new(vec![0]).unwrap(),
            durations: vec![pitch.len() as u32],
            pitch: pitch.to_vec(),
            energy: energy.to_vec(),
            mel: vec![0.0; pitch.len() * 2],
            n_mel: 2,
            speaker_id: speaker,
            style_id: speaker,
        }
    }

    // Direct evaluation: mean 150, population variance (2500 + 0 + 2500)/3.
    const STD_100_150_200: f64 = 40.824829046386306;

    #[test]
    fn utterance_stats_of_three_frames() {
        let u = utt("a", 0, &[100.0, 150.0, 200.0], &[1.0, 2.0, 3.0]);
        let s = compute_stats(&[&u], Scope::Utterance).unwrap();
        assert!((s.pitch_mean - 150.0).abs() < 1e-12);
        assert!((s.pitch_std - STD_100_150_200).abs() < 1e-9);
        assert!((s.pitch_std - 40.82).abs() < 5e-3);
        assert_eq!(s.voiced_frames_used, 3);

        let n = apply_norm(&u, &s);
        let expected = [-1.2247, 0.0, 1.2247];
        for (a, b) in n.pitch.iter().zip(expected) {
            assert!((*a as f64 - b).abs() < 1e-4);
        }
    }

    #[test]
    fn unvoiced_frames_are_skipped_and_stay_zero() {
        let u = utt("a", 0, &[0.0, 120.0, 130.0, 0.0], &[1.0, 2.0, 3.0, 4.0]);
        let s = compute_stats(&[&u], Scope::Utterance).unwrap();
        assert_eq!(s.voiced_frames_used, 2);
        assert!((s.pitch_mean - 125.0).abs() < 1e-12);
        let n = apply_norm(&u, &s);
        assert_eq!(n.pitch[0], 0.0);
        assert_eq!(n.pitch[3], 0.0);

        let flat = utt("b", 0, &[0.0, 120.0, 120.0, 0.0], &[1.0, 2.0, 3.0, 4.0]);
        let s = compute_stats(&[&flat], Scope::Utterance);
        assert!(matches!(s, Err(Error::DegenerateStats(_))));
        assert_eq!(s.unwrap_err().to_string(), "degenerate stats: pitch has zero variance");
    }

    #[test]
    fn error_cases() {
        let one = utt("a", 0, &[0.0, 120.0, 0.0], &[1.0, 2.0, 3.0]);
        assert!(matches!(
            compute_stats(&[&one], Scope::Utterance),
            Err(Error::InsufficientVoiced(1))
        ));
        let flat_energy = utt("b", 0, &[100.0, 120.0], &[2.0, 2.0]);
        assert!(matches!(
            compute_stats(&[&flat_energy], Scope::Utterance),
            Err(Error::DegenerateStats(_))
        ));
        let a = utt("a", 0, &[100.0, 120.0], &[1.0, 2.0]);
        let b = utt("b", 1, &[100.0, 120.0], &[1.0, 2.0]);
        assert!(compute_stats(&[&a, &b], Scope::Utterance).is_err());
        assert!(compute_stats(&[&a, &b], Scope::Speaker).is_err());
    }

    #[test]
    fn denormalize_basics() {
        let s = NormStats {
            pitch_mean: 200.0,
            pitch_std: 25.0,
            energy_mean: 1.0,
            energy_std: 0.5,
            scope: Scope::Utterance,
            voiced_frames_used: 10,
        };
        assert_eq!(s.denormalize_pitch(&[0.0, 1.0]), vec![200.0, 225.0]);
        assert_eq!(s.denormalize_energy(&[0.0, 1.0]), vec![1.0, 1.5]);
    }

    #[test]
    fn speaker_scope_pools_but_utterances_drift() {
        let low = utt("a", 0, &[100.0, 110.0, 120.0, 0.0], &[1.0, 2.0, 1.5, 0.2]);
        let high = utt("b", 0, &[180.0, 190.0, 200.0, 0.0], &[1.0, 2.5, 1.0, 0.1]);
        let (spk, _) = normalize_corpus(&[low.clone(), high.clone()], NormMode::Spk).unwrap();
        let (m0, _) = voiced_moments(&low, &spk[0]);
        let (m1, _) = voiced_moments(&high, &spk[1]);
        assert!(m0 < -0.1 && m1 > 0.1);
        assert!((m0 + m1).abs() < 1e-6);

        let (utt_norm, stats) = normalize_corpus(&[low.clone(), high.clone()], NormMode::Utt).unwrap();
        assert_eq!(stats.len(), 2);
        for (raw, n) in [(&low, &utt_norm[0]), (&high, &utt_norm[1])] {
            let (m, s) = voiced_moments(raw, n);
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
            let (m, s) = energy_moments(n);
            assert!(m.abs() < 1e-6 && (s - 1.0).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn normalize_then_denormalize_round_trips(
            pitch in proptest::collection::vec(prop_oneof![Just(0.0f32), 60.0f32..400.0], 4..60),
            energy in proptest::collection::vec(0.0f32..50.0, 60),
        ) {
            let voiced: Vec<f32> = pitch.iter().cloned().filter(|p| *p > 0.0).collect();
            prop_assume!(voiced.len() >= 2 && voiced.iter().any(|v| (v - voiced[0]).abs() > 1.0));
            let energy = &energy[..pitch.len()];
            prop_assume!(energy.iter().any(|e| (e - energy[0]).abs() > 0.1));
            let u = utt("p", 0, &pitch, energy);
            let s = compute_stats(&[&u], Scope::Utterance).unwrap();
            let n = apply_norm(&u, &s);
            let back = s.denormalize_pitch(&n.pitch_f64());
            for (i, (orig, b)) in pitch.iter().zip(&back).enumerate() {
                if *orig > 0.0 {
                    // f32 storage of the normalized value bounds the round trip
                    prop_assert!((*orig as f64 - b).abs() <= 1e-6 * (*orig as f64));
                } else {
                    prop_assert_eq!(n.pitch[i], 0.0);
                }
            }
            let (m, sd) = voiced_moments(&u, &n);
            prop_assert!(m.abs() < 1e-6 && (sd - 1.0).abs() < 1e-6);
        }
    }
}

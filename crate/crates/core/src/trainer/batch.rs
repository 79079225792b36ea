//! Padded batches and the training loss.

use crate::error::{Error, Result};
use crate::features::AlignedUtterance;
use crate::graph::{Graph, Var};
use crate::model::{PhonemeSequence, Session, TeacherTargets, VarianceOutputs, VarianceVars};
use crate::tensor::Tensor;

/// Utterances padded to common phoneme and frame lengths. Padded cells are
/// zero and excluded by the masks.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub ids: Vec<String>,
    pub max_phonemes: usize,
    pub max_frames: usize,
    pub n_mel: usize,
    /// `(B, max_phonemes)`, row-major.
    pub phonemes: Vec<u32>,
    pub phoneme_lengths: Vec<usize>,
    pub durations: Vec<u32>,
    pub phoneme_mask: Vec<bool>,
    /// `(B, max_frames)`, row-major.
    pub pitch: Vec<f64>,
    pub energy: Vec<f64>,
    pub frame_lengths: Vec<usize>,
    pub frame_mask: Vec<bool>,
    /// `(B, max_frames, n_mel)`.
    pub mel: Vec<f64>,
    pub speaker_ids: Vec<usize>,
    pub style_ids: Vec<usize>,
}

pub fn collate(utts: &[&AlignedUtterance]) -> Result<Batch> {
    collate_padded(utts, 0, 0)
}

/// Like [`collate`] but pads to at least the given widths.
pub fn collate_padded(utts: &[&AlignedUtterance], min_phonemes: usize, min_frames: usize) -> Result<Batch> {
    let first = utts
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot collate an empty batch".into()))?;
    let n_mel = first.n_mel;
    for u in utts {
        u.validate()?;
        if u.n_mel != n_mel {
            return Err(Error::DimensionMismatch {
                what: "mel bands in batch",
                expected: n_mel,
                got: u.n_mel,
            });
        }
    }
    let b = utts.len();
    let max_phonemes = utts.iter().map(|u| u.phonemes.len()).max().unwrap().max(min_phonemes);
    let max_frames = utts.iter().map(|u| u.frames()).max().unwrap().max(min_frames);
    let mut batch = Batch {
        ids: utts.iter().map(|u| u.id.clone()).collect(),
        max_phonemes,
        max_frames,
        n_mel,
        phonemes: vec![0; b * max_phonemes],
        phoneme_lengths: utts.iter().map(|u| u.phonemes.len()).collect(),
        durations: vec![0; b * max_phonemes],
        phoneme_mask: vec![false; b * max_phonemes],
        pitch: vec![0.0; b * max_frames],
        energy: vec![0.0; b * max_frames],
        frame_lengths: utts.iter().map(|u| u.frames()).collect(),
        frame_mask: vec![false; b * max_frames],
        mel: vec![0.0; b * max_frames * n_mel],
        speaker_ids: utts.iter().map(|u| u.speaker_id).collect(),
        style_ids: utts.iter().map(|u| u.style_id).collect(),
    };
    for (i, u) in utts.iter().enumerate() {
        let p0 = i * max_phonemes;
        for (j, (&id, &d)) in u.phonemes.ids().iter().zip(&u.durations).enumerate() {
            batch.phonemes[p0 + j] = id;
            batch.durations[p0 + j] = d;
            batch.phoneme_mask[p0 + j] = true;
        }
        let f0 = i * max_frames;
        for t in 0..u.frames() {
            batch.pitch[f0 + t] = u.pitch[t] as f64;
            batch.energy[f0 + t] = u.energy[t] as f64;
            batch.frame_mask[f0 + t] = true;
        }
        let m0 = f0 * n_mel;
        for (k, &v) in u.mel.iter().enumerate() {
            batch.mel[m0 + k] = v as f64;
        }
    }
    Ok(batch)
}

impl Batch {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn item_phonemes(&self, i: usize) -> PhonemeSequence {
        let p0 = i * self.max_phonemes;
        PhonemeSequence::new(self.phonemes[p0..p0 + self.phoneme_lengths[i]].to_vec())
            .expect("collated utterances are non-empty")
    }

    pub fn item_durations(&self, i: usize) -> &[u32] {
        let p0 = i * self.max_phonemes;
        &self.durations[p0..p0 + self.phoneme_lengths[i]]
    }

    pub fn item_pitch(&self, i: usize) -> &[f64] {
        let f0 = i * self.max_frames;
        &self.pitch[f0..f0 + self.frame_lengths[i]]
    }

    pub fn item_energy(&self, i: usize) -> &[f64] {
        let f0 = i * self.max_frames;
        &self.energy[f0..f0 + self.frame_lengths[i]]
    }

    pub fn targets(&self, i: usize) -> TeacherTargets<'_> {
        TeacherTargets {
            durations: self.item_durations(i),
            pitch: self.item_pitch(i),
            energy: self.item_energy(i),
        }
    }

    pub fn total_frames(&self) -> usize {
        self.frame_mask.iter().filter(|&&m| m).count()
    }

    pub fn total_phonemes(&self) -> usize {
        self.phoneme_mask.iter().filter(|&&m| m).count()
    }
}

/// Per-term loss values.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub mel: f64,
    pub duration: f64,
    pub pitch: f64,
    pub energy: f64,
}

/// Graph nodes of the loss terms.
#[derive(Clone, Copy, Debug)]
pub struct LossVars {
    pub total: Var,
    pub mel: Var,
    pub duration: Var,
    pub pitch: Var,
    pub energy: Var,
}

impl LossVars {
    pub fn values(&self, g: &Graph) -> Result<LossBreakdown> {
        let out = LossBreakdown {
            total: g.value(self.total).item(),
            mel: g.value(self.mel).item(),
            duration: g.value(self.duration).item(),
            pitch: g.value(self.pitch).item(),
            energy: g.value(self.energy).item(),
        };
        for (name, v) in [
            ("mel", out.mel),
            ("duration", out.duration),
            ("pitch", out.pitch),
            ("energy", out.energy),
        ] {
            if !v.is_finite() {
                return Err(Error::NonFiniteLoss(name));
            }
        }
        Ok(out)
    }
}

fn mask_tensor(mask: &[bool], rows: usize, cols: usize) -> Tensor {
    let mut t = Tensor::zeros(rows, cols);
    for r in 0..rows {
        if mask[r] {
            t.row_mut(r).iter_mut().for_each(|v| *v = 1.0);
        }
    }
    t
}

enum Penalty {
    Abs,
    Square,
}

/// Masked sum of `penalty(pad(pred) - target)` for one item.
fn masked_term(
    g: &mut Graph,
    pred: Var,
    target: &[f64],
    mask: &[bool],
    rows: usize,
    cols: usize,
    penalty: Penalty,
) -> Var {
    let padded = g.pad_rows(pred, rows);
    let t = g.constant(Tensor::from_vec(rows, cols, target.to_vec()));
    let diff = g.sub(padded, t);
    let p = match penalty {
        Penalty::Abs => g.abs(diff),
        Penalty::Square => g.square(diff),
    };
    let masked = g.mul_const(p, mask_tensor(mask, rows, cols));
    g.sum(masked)
}

fn sum_all(g: &mut Graph, vars: &[Var]) -> Var {
    let mut acc = vars[0];
    for &v in &vars[1..] {
        acc = g.add(acc, v);
    }
    acc
}

/// Masked-mean L1 on mel plus masked-mean squared error on log durations
/// (target `log(d + 1)`), normalized pitch and normalized energy.
pub fn loss_graph(g: &mut Graph, preds: &[(Var, &VarianceVars)], batch: &Batch) -> Result<LossVars> {
    if preds.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            what: "predictions in batch",
            expected: batch.len(),
            got: preds.len(),
        });
    }
    let (lp, lf, nm) = (batch.max_phonemes, batch.max_frames, batch.n_mel);
    let mut mel_terms = Vec::new();
    let mut dur_terms = Vec::new();
    let mut pitch_terms = Vec::new();
    let mut energy_terms = Vec::new();
    for (i, (mel, vars)) in preds.iter().enumerate() {
        let (fr, ph) = (batch.frame_lengths[i], batch.phoneme_lengths[i]);
        let shape_ok = g.value(*mel).shape() == (fr, nm)
            && g.value(vars.log_durations).rows() == ph
            && g.value(vars.pitch).rows() == fr
            && g.value(vars.energy).rows() == fr;
        if !shape_ok {
            return Err(Error::InvalidArgument(format!(
                "prediction {i} does not match its targets ({fr} frames, {ph} phonemes)"
            )));
        }
        let fmask = &batch.frame_mask[i * lf..(i + 1) * lf];
        let pmask = &batch.phoneme_mask[i * lp..(i + 1) * lp];
        let mel_target = &batch.mel[i * lf * nm..(i + 1) * lf * nm];
        mel_terms.push(masked_term(g, *mel, mel_target, fmask, lf, nm, Penalty::Abs));

        let log_d: Vec<f64> = batch.durations[i * lp..(i + 1) * lp]
            .iter()
            .map(|&d| (d as f64 + 1.0).ln())
            .zip(pmask)
            .map(|(v, &m)| if m { v } else { 0.0 })
            .collect();
        dur_terms.push(masked_term(g, vars.log_durations, &log_d, pmask, lp, 1, Penalty::Square));
        let pitch = &batch.pitch[i * lf..(i + 1) * lf];
        pitch_terms.push(masked_term(g, vars.pitch, pitch, fmask, lf, 1, Penalty::Square));
        let energy = &batch.energy[i * lf..(i + 1) * lf];
        energy_terms.push(masked_term(g, vars.energy, energy, fmask, lf, 1, Penalty::Square));
    }
    let frames = batch.total_frames() as f64;
    let phonemes = batch.total_phonemes() as f64;
    let mel = sum_all(g, &mel_terms);
    let mel = g.scale(mel, 1.0 / (frames * nm as f64));
    let duration = sum_all(g, &dur_terms);
    let duration = g.scale(duration, 1.0 / phonemes);
    let pitch = sum_all(g, &pitch_terms);
    let pitch = g.scale(pitch, 1.0 / frames);
    let energy = sum_all(g, &energy_terms);
    let energy = g.scale(energy, 1.0 / frames);
    let total = sum_all(g, &[mel, duration, pitch, energy]);
    Ok(LossVars {
        total,
        mel,
        duration,
        pitch,
        energy,
    })
}

/// Loss of already-computed predictions (one `(mel, prosody)` per item).
pub fn loss_total(preds: &[(Tensor, VarianceOutputs)], batch: &Batch) -> Result<LossBreakdown> {
    let mut g = Graph::new();
    let vars: Vec<(Var, VarianceVars)> = preds
        .iter()
        .map(|(mel, v)| {
            let mel = g.constant(mel.clone());
            let log_durations = g.constant(Tensor::column(v.log_durations.clone()));
            let pitch = g.constant(Tensor::column(v.pitch_hat.clone()));
            let energy = g.constant(Tensor::column(v.energy_hat.clone()));
            (
                mel,
                VarianceVars {
                    log_durations,
                    pitch,
                    energy,
                    durations: v.durations.clone(),
                },
            )
        })
        .collect();
    let refs: Vec<(Var, &VarianceVars)> = vars.iter().map(|(m, v)| (*m, v)).collect();
    loss_graph(&mut g, &refs, batch)?.values(&g)
}

/// Teacher-forced forward over every batch item plus the loss, on one session.
pub fn forward_batch(session: &mut Session<'_>, batch: &Batch) -> Result<LossVars> {
    let mut outs = Vec::with_capacity(batch.len());
    for i in 0..batch.len() {
        let phonemes = batch.item_phonemes(i);
        let targets = batch.targets(i);
        outs.push(session.forward_teacher(&phonemes, &targets, batch.speaker_ids[i], batch.style_ids[i])?);
    }
    let refs: Vec<(Var, &VarianceVars)> = outs.iter().map(|(m, v)| (*m, v)).collect();
    loss_graph(&mut session.graph, &refs, batch)
}

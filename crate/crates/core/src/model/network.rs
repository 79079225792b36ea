use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{FftBlockIds, ParamId, PredictorIds};
use super::{AcousticModel, ModelConfig, PhonemeSequence, VarianceOutputs};
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum VarianceKind {
    Duration,
    Pitch,
    Energy,
}

/// Ground-truth prosody used under teacher forcing. Pitch and energy are
/// already normalized.
#[derive(Clone, Copy, Debug)]
pub struct TeacherTargets<'t> {
    pub durations: &'t [u32],
    pub pitch: &'t [f64],
    pub energy: &'t [f64],
}

#[derive(Clone, Copy, Debug)]
pub enum AdaptMode<'t> {
    Teacher(TeacherTargets<'t>),
    Infer,
}

#[derive(Clone, Copy, Debug)]
pub enum StyleInput<'s> {
    /// Row of the style embedding table; differentiable.
    Id(usize),
    /// Arbitrary `(1, hidden)` vector, e.g. an interpolated style.
    Vector(&'s Tensor),
}

/// Graph handles for the variance adaptor outputs of one utterance.
#[derive(Clone, Debug)]
pub struct VarianceVars {
    pub log_durations: Var,
    pub pitch: Var,
    pub energy: Var,
    pub durations: Vec<u32>,
}

impl VarianceVars {
    pub fn outputs(&self, graph: &Graph) -> VarianceOutputs {
        let pitch_hat = graph.value(self.pitch).data().to_vec();
        VarianceOutputs {
            log_durations: graph.value(self.log_durations).data().to_vec(),
            durations: self.durations.clone(),
            frame_count: pitch_hat.len(),
            energy_hat: graph.value(self.energy).data().to_vec(),
            pitch_hat,
        }
    }
}

/// Quantization bin of a normalized value: linear bins over `bin_range`,
/// clamped at both ends.
pub fn bin_index(value: f64, config: &ModelConfig) -> usize {
    let (low, high) = config.bin_range;
    let v = value.clamp(low, high);
    let b = ((v - low) / (high - low) * config.n_bins as f64).floor();
    if b.is_nan() {
        return 0;
    }
    (b.max(0.0) as usize).min(config.n_bins - 1)
}

/// Index list that repeats position `i` `durations[i]` times.
pub fn length_regulate(durations: &[u32]) -> Result<Vec<usize>> {
    let idx: Vec<usize> = durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat(i).take(d as usize))
        .collect();
    if idx.is_empty() {
        return Err(Error::EmptyOutput);
    }
    Ok(idx)
}

/// Standard sinusoidal position table, `(len, dim)`.
pub fn sinusoidal_positions(len: usize, dim: usize) -> Tensor {
    let mut t = Tensor::zeros(len, dim);
    for pos in 0..len {
        for i in 0..dim {
            let exponent = (2 * (i / 2)) as f64 / dim as f64;
            let angle = pos as f64 / 10000f64.powf(exponent);
            t.set(pos, i, if i % 2 == 0 { angle.sin() } else { angle.cos() });
        }
    }
    t
}

/// One forward pass over the model, recording onto a fresh [`Graph`].
pub struct Session<'m> {
    pub graph: Graph,
    model: &'m AcousticModel,
    leaves: Vec<Option<Var>>,
    trainable: bool,
    dropout: Option<ChaCha8Rng>,
    style_leak: bool,
}

impl<'m> Session<'m> {
    /// Inference: no dropout, parameters recorded as constants.
    pub fn eval(model: &'m AcousticModel) -> Self {
        Self {
            graph: Graph::new(),
            model,
            leaves: vec![None; model.params.len()],
            trainable: false,
            dropout: None,
            style_leak: false,
        }
    }

    /// Training: parameters are differentiable leaves; dropout is drawn from
    /// `dropout_seed` when given.
    pub fn train(model: &'m AcousticModel, dropout_seed: Option<u64>) -> Self {
        Self {
            trainable: true,
            dropout: dropout_seed.map(ChaCha8Rng::seed_from_u64),
            ..Self::eval(model)
        }
    }

    /// Test fixture: additionally adds the style vector to the residual
    /// stream entering the decoder, breaking style isolation.
    pub fn with_style_leak(mut self) -> Self {
        self.style_leak = true;
        self
    }

    pub fn config(&self) -> &'m ModelConfig {
        &self.model.config
    }

    pub fn model(&self) -> &'m AcousticModel {
        self.model
    }

    /// Graph leaf for a parameter, created on first use.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let v = self
            .graph
            .leaf(self.model.params.tensor(id).clone(), self.trainable);
        self.leaves[id.0] = Some(v);
        v
    }

    /// `(param id, leaf)` for every parameter touched so far.
    pub fn param_leaves(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.leaves
            .iter()
            .enumerate()
            .filter_map(|(i, v)| v.map(|v| (ParamId(i), v)))
    }

    fn dropout(&mut self, x: Var) -> Var {
        let p = self.model.config.dropout;
        let Some(rng) = self.dropout.as_mut() else {
            return x;
        };
        if p <= 0.0 {
            return x;
        }
        let (r, c) = self.graph.value(x).shape();
        let keep = 1.0 - p;
        let mask: Vec<f64> = (0..r * c)
            .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        self.graph.mul_const(x, Tensor::from_vec(r, c, mask))
    }

    fn linear(&mut self, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = self.param(w);
        let b = self.param(b);
        let y = self.graph.matmul(x, w);
        self.graph.add_row(y, b)
    }

    fn conv1d(&mut self, x: Var, kernel: usize, w: ParamId, b: ParamId) -> Var {
        let x = if kernel == 1 { x } else { self.graph.unfold(x, kernel) };
        self.linear(x, w, b)
    }

    fn layer_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId) -> Var {
        let g = self.param(gamma);
        let b = self.param(beta);
        self.graph.layer_norm(x, g, b)
    }

    fn attention(&mut self, x: Var, ids: &FftBlockIds) -> Var {
        let cfg = self.config();
        let heads = cfg.attention_heads;
        let d = cfg.hidden_dim / heads;
        let q = self.linear(x, ids.wq, ids.bq);
        let k = self.linear(x, ids.wk, ids.bk);
        let v = self.linear(x, ids.wv, ids.bv);
        let scale = 1.0 / (d as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        for h in 0..heads {
            let g = &mut self.graph;
            let qh = g.slice_cols(q, h * d, d);
            let kh = g.slice_cols(k, h * d, d);
            let vh = g.slice_cols(v, h * d, d);
            let scores = g.matmul_nt(qh, kh);
            let scores = g.scale(scores, scale);
            let probs = g.softmax_rows(scores);
            outs.push(g.matmul(probs, vh));
        }
        let cat = if heads == 1 { outs[0] } else { self.graph.concat_cols(&outs) };
        self.linear(cat, ids.wo, ids.bo)
    }

    /// Post-norm feed-forward transformer block: self-attention then a
    /// two-layer 1-D convolution, each with a residual connection.
    fn fft_block(&mut self, x: Var, ids: &FftBlockIds) -> Var {
        let a = self.attention(x, ids);
        let a = self.dropout(a);
        let x = self.graph.add(x, a);
        let x = self.layer_norm(x, ids.ln1_gamma, ids.ln1_beta);
        let k = self.config().conv_kernel;
        let f = self.conv1d(x, k, ids.ffn_w1, ids.ffn_b1);
        let f = self.graph.relu(f);
        let f = self.conv1d(f, 1, ids.ffn_w2, ids.ffn_b2);
        let f = self.dropout(f);
        let x = self.graph.add(x, f);
        self.layer_norm(x, ids.ln2_gamma, ids.ln2_beta)
    }

    fn add_positions(&mut self, x: Var) -> Var {
        let (len, dim) = self.graph.value(x).shape();
        let pe = self.graph.constant(sinusoidal_positions(len, dim));
        self.graph.add(x, pe)
    }

    /// Phoneme encoder: embedding lookup, sinusoidal positions, FFT blocks.
    pub fn encode(&mut self, phonemes: &PhonemeSequence) -> Result<Var> {
        let cfg = self.config();
        phonemes.check_vocab(cfg.phoneme_vocab_size)?;
        if phonemes.len() > cfg.max_frames {
            return Err(Error::InvalidArgument(format!(
                "phoneme sequence of length {} exceeds limit {}",
                phonemes.len(),
                cfg.max_frames
            )));
        }
        let layout = &self.model().layout;
        let table = self.param(layout.phoneme_embedding);
        let idx = phonemes.ids().iter().map(|&i| i as usize).collect();
        let x = self.graph.gather_rows(table, idx);
        let mut x = self.add_positions(x);
        for block in &layout.encoder {
            x = self.fft_block(x, block);
        }
        Ok(x)
    }

    /// `(1, hidden)` style vector as a graph node.
    pub fn style_vector(&mut self, style: StyleInput<'_>) -> Result<Var> {
        let h = self.config().hidden_dim;
        match style {
            StyleInput::Id(id) => {
                self.model.check_style(id)?;
                let table = self.param(self.model.layout.style_embedding);
                Ok(self.graph.gather_rows(table, vec![id]))
            }
            StyleInput::Vector(t) => {
                if t.shape() != (1, h) {
                    return Err(Error::DimensionMismatch {
                        what: "style vector width",
                        expected: h,
                        got: t.len(),
                    });
                }
                if !t.is_finite() {
                    return Err(Error::NonFinite("style vector".into()));
                }
                Ok(self.graph.constant(t.clone()))
            }
        }
    }

    /// Variance predictor: style added to every input position, then two
    /// conv → ReLU → layer norm → dropout stages and a scalar projection.
    /// Returns an `(L, 1)` column.
    pub fn predict_variance(&mut self, hidden: Var, style: Var, which: VarianceKind) -> Result<Var> {
        let h = self.config().hidden_dim;
        let (hw, sw) = (self.graph.value(hidden).cols(), self.graph.value(style).cols());
        if hw != h {
            return Err(Error::DimensionMismatch {
                what: "predictor input width",
                expected: h,
                got: hw,
            });
        }
        if sw != h || self.graph.value(style).rows() != 1 {
            return Err(Error::DimensionMismatch {
                what: "style vector width",
                expected: h,
                got: sw,
            });
        }
        let layout = &self.model().layout;
        let ids: &PredictorIds = match which {
            VarianceKind::Duration => &layout.duration_predictor,
            VarianceKind::Pitch => &layout.pitch_predictor,
            VarianceKind::Energy => &layout.energy_predictor,
        };
        let k = self.config().variance_kernel;
        let x = self.graph.add_row(hidden, style);
        let x = self.conv1d(x, k, ids.conv1_w, ids.conv1_b);
        let x = self.graph.relu(x);
        let x = self.layer_norm(x, ids.ln1_gamma, ids.ln1_beta);
        let x = self.dropout(x);
        let x = self.conv1d(x, k, ids.conv2_w, ids.conv2_b);
        let x = self.graph.relu(x);
        let x = self.layer_norm(x, ids.ln2_gamma, ids.ln2_beta);
        let x = self.dropout(x);
        Ok(self.linear(x, ids.proj_w, ids.proj_b))
    }

    /// Bin-embedding lookup of a normalized trajectory.
    pub fn quantize_embed(&mut self, values: &[f64], table: ParamId) -> Var {
        let cfg = self.config();
        let idx = values.iter().map(|&v| bin_index(v, cfg)).collect();
        let t = self.param(table);
        self.graph.gather_rows(t, idx)
    }

    /// Duration prediction, length regulation, then pitch and energy
    /// prediction and embedding at frame level. Style enters only the
    /// predictor inputs.
    pub fn variance_adapt(&mut self, hidden: Var, style: Var, mode: AdaptMode<'_>) -> Result<(Var, VarianceVars)> {
        let n_phonemes = self.graph.value(hidden).rows();
        let log_durations = self.predict_variance(hidden, style, VarianceKind::Duration)?;
        let durations = match mode {
            AdaptMode::Teacher(t) => {
                if t.durations.len() != n_phonemes {
                    return Err(Error::DimensionMismatch {
                        what: "target durations",
                        expected: n_phonemes,
                        got: t.durations.len(),
                    });
                }
                let frames: usize = t.durations.iter().map(|&d| d as usize).sum();
                if frames != t.pitch.len() || frames != t.energy.len() {
                    return Err(Error::InvalidArgument(format!(
                        "teacher targets disagree: durations sum to {frames}, pitch has {}, energy has {}",
                        t.pitch.len(),
                        t.energy.len()
                    )));
                }
                t.durations.to_vec()
            }
            AdaptMode::Infer => {
                let d: Vec<u32> = self
                    .graph
                    .value(log_durations)
                    .data()
                    .iter()
                    .map(|&l| frames_from_log_duration(l))
                    .collect();
                let total: usize = d.iter().map(|&v| v as usize).sum();
                if total > self.config().max_frames {
                    return Err(Error::RunawayDuration {
                        frames: total,
                        limit: self.config().max_frames,
                    });
                }
                d
            }
        };
        let idx = length_regulate(&durations)?;
        let mut x = self.graph.gather_rows(hidden, idx);

        let layout = &self.model().layout;
        let pitch = self.predict_variance(x, style, VarianceKind::Pitch)?;
        let pitch_values = match mode {
            AdaptMode::Teacher(t) => t.pitch.to_vec(),
            AdaptMode::Infer => self.graph.value(pitch).data().to_vec(),
        };
        let pe = self.quantize_embed(&pitch_values, layout.pitch_bins);
        x = self.graph.add(x, pe);

        let energy = self.predict_variance(x, style, VarianceKind::Energy)?;
        let energy_values = match mode {
            AdaptMode::Teacher(t) => t.energy.to_vec(),
            AdaptMode::Infer => self.graph.value(energy).data().to_vec(),
        };
        let ee = self.quantize_embed(&energy_values, layout.energy_bins);
        x = self.graph.add(x, ee);

        Ok((
            x,
            VarianceVars {
                log_durations,
                pitch,
                energy,
                durations,
            },
        ))
    }

    /// Speaker embedding added to the frame hidden, positions, decoder
    /// blocks, mel projection.
    pub fn decode(&mut self, frame_hidden: Var, speaker_id: usize) -> Result<Var> {
        self.model.check_speaker(speaker_id)?;
        let h = self.config().hidden_dim;
        let w = self.graph.value(frame_hidden).cols();
        if w != h {
            return Err(Error::DimensionMismatch {
                what: "decoder input width",
                expected: h,
                got: w,
            });
        }
        let layout = &self.model().layout;
        let table = self.param(layout.speaker_embedding);
        let spk = self.graph.gather_rows(table, vec![speaker_id]);
        let x = self.graph.add_row(frame_hidden, spk);
        let mut x = self.add_positions(x);
        for block in &layout.decoder {
            x = self.fft_block(x, block);
        }
        Ok(self.linear(x, layout.mel_w, layout.mel_b))
    }

    fn run(
        &mut self,
        phonemes: &PhonemeSequence,
        speaker_id: usize,
        style: StyleInput<'_>,
        mode: AdaptMode<'_>,
    ) -> Result<(Var, VarianceVars)> {
        let hidden = self.encode(phonemes)?;
        let style = self.style_vector(style)?;
        let (mut frames, vars) = self.variance_adapt(hidden, style, mode)?;
        if self.style_leak {
            frames = self.graph.add_row(frames, style);
        }
        let mel = self.decode(frames, speaker_id)?;
        Ok((mel, vars))
    }

    pub fn forward_teacher(
        &mut self,
        phonemes: &PhonemeSequence,
        targets: &TeacherTargets<'_>,
        speaker_id: usize,
        style_id: usize,
    ) -> Result<(Var, VarianceVars)> {
        self.run(phonemes, speaker_id, StyleInput::Id(style_id), AdaptMode::Teacher(*targets))
    }

    pub fn forward_infer(
        &mut self,
        phonemes: &PhonemeSequence,
        speaker_id: usize,
        style: StyleInput<'_>,
    ) -> Result<(Var, VarianceVars)> {
        self.run(phonemes, speaker_id, style, AdaptMode::Infer)
    }
}

/// Inverts the `log(d + 1)` duration target, keeping at least one frame.
pub(crate) fn frames_from_log_duration(log_d: f64) -> u32 {
    let d = (log_d.exp() - 1.0).round();
    if d.is_nan() || d < 1.0 {
        1
    } else {
        d.min(u32::MAX as f64) as u32
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> AcousticModel {
        let mut c = ModelConfig::desk(16, 3, 3);
        c.hidden_dim = 32;
        AcousticModel::new(c, 11).unwrap()
    }

    fn seq(ids: &[u32]) -> PhonemeSequence {
        PhonemeSequence::new(ids.to_vec()).unwrap()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let m = model();
        let s = seq(&[1, 4, 2, 7, 7, 3, 0]);
        let a = m.encode(&s).unwrap();
        assert_eq!(a.shape(), (7, 32));
        assert_eq!(a, m.encode(&s).unwrap());
        let b = m.encode(&seq(&[4, 1, 2, 7, 7, 3, 0])).unwrap();
        assert!(a.max_abs_diff(&b) > 1e-6);
    }

    #[test]
    fn predictor_shape_and_style_sensitivity() {
        let m = model();
        let mut s = m.session();
        let h = s.encode(&seq(&[1, 4, 2, 7, 7, 3, 0])).unwrap();
        let st0 = s.style_vector(StyleInput::Id(0)).unwrap();
        let st1 = s.style_vector(StyleInput::Id(1)).unwrap();
        let p0 = s.predict_variance(h, st0, VarianceKind::Pitch).unwrap();
        let p1 = s.predict_variance(h, st1, VarianceKind::Pitch).unwrap();
        assert_eq!(s.graph.value(p0).shape(), (7, 1));
        assert!(s.graph.value(p0).max_abs_diff(s.graph.value(p1)) > 1e-6);

        // a zero style vector is the same as not conditioning at all
        let zero = s.graph.constant(Tensor::zeros(1, 32));
        let with_zero = s.predict_variance(h, zero, VarianceKind::Duration).unwrap();
        let ids = &m.layout.duration_predictor;
        let k = m.config.variance_kernel;
        let x = s.conv1d(h, k, ids.conv1_w, ids.conv1_b);
        let x = s.graph.relu(x);
        let x = s.layer_norm(x, ids.ln1_gamma, ids.ln1_beta);
        let x = s.conv1d(x, k, ids.conv2_w, ids.conv2_b);
        let x = s.graph.relu(x);
        let x = s.layer_norm(x, ids.ln2_gamma, ids.ln2_beta);
        let plain = s.linear(x, ids.proj_w, ids.proj_b);
        assert_eq!(s.graph.value(with_zero), s.graph.value(plain));

        let bad = s.graph.constant(Tensor::zeros(1, 31));
        assert!(s.predict_variance(h, bad, VarianceKind::Energy).is_err());
    }

    #[test]
    fn length_regulation() {
        assert_eq!(length_regulate(&[2, 0, 3]).unwrap(), vec![0, 0, 2, 2, 2]);
        assert_eq!(length_regulate(&[1, 1, 1]).unwrap(), vec![0, 1, 2]);
        assert!(matches!(length_regulate(&[0, 0]), Err(Error::EmptyOutput)));

        let mut g = Graph::new();
        let rows = g.constant(Tensor::from_vec(3, 2, vec![1., 2., 3., 4., 5., 6.]));
        let out = g.gather_rows(rows, length_regulate(&[2, 0, 3]).unwrap());
        assert_eq!(
            g.value(out).data(),
            &[1., 2., 1., 2., 5., 6., 5., 6., 5., 6.]
        );
    }

    #[test]
    fn quantization_bins() {
        let c = ModelConfig::desk(16, 1, 1);
        assert_eq!(bin_index(-4.0, &c), 0);
        assert_eq!(bin_index(-10.0, &c), 0);
        assert_eq!(bin_index(4.0, &c), 31);
        assert_eq!(bin_index(7.5, &c), 31);
        // (0 - (-4)) / 8 * 32 = 16
        assert_eq!(bin_index(0.0, &c), 16);
        assert_eq!(bin_index(0.24, &c), 16);
        assert_eq!(bin_index(0.26, &c), 17);
    }

    #[test]
    fn constant_values_share_one_embedding_row() {
        let m = model();
        let mut s = m.session();
        let e = s.quantize_embed(&[0.3; 5], m.layout.pitch_bins);
        let v = s.graph.value(e);
        for r in 1..5 {
            assert_eq!(v.row(r), v.row(0));
        }
    }

    #[test]
    fn decode_shape_and_speaker_sensitivity() {
        let m = model();
        let mut s = m.session();
        let x = s.graph.constant(Tensor::from_vec(25, 32, (0..800).map(|i| (i as f64 * 0.1).sin()).collect()));
        let a = s.decode(x, 0).unwrap();
        let b = s.decode(x, 1).unwrap();
        assert_eq!(s.graph.value(a).shape(), (25, 80));
        assert!(s.graph.value(a).max_abs_diff(s.graph.value(b)) > 1e-6);
        let c = s.decode(x, 0).unwrap();
        assert_eq!(s.graph.value(a), s.graph.value(c));
        assert!(s.decode(x, 3).is_err());
        let narrow = s.graph.constant(Tensor::zeros(4, 16));
        assert!(s.decode(narrow, 0).is_err());
    }

    #[test]
    fn teacher_frame_count_and_style_isolation() {
        let m = model();
        let p = seq(&[3, 1, 4, 1, 5]);
        let durations = [2u32, 0, 3, 1, 4];
        let pitch: Vec<f64> = (0..10).map(|i| (i as f64 * 0.4).sin()).collect();
        let energy: Vec<f64> = (0..10).map(|i| (i as f64 * 0.3).cos()).collect();
        let t = TeacherTargets {
            durations: &durations,
            pitch: &pitch,
            energy: &energy,
        };
        let (mel0, v0) = m.forward_teacher(&p, &t, 1, 0).unwrap();
        let (mel1, v1) = m.forward_teacher(&p, &t, 1, 2).unwrap();
        assert_eq!(mel0.shape(), (10, 80));
        assert_eq!(v0.frame_count, 10);
        assert_eq!(mel0.max_abs_diff(&mel1), 0.0);
        assert_ne!(v0.pitch_hat, v1.pitch_hat);

        let short = [1.0; 9];
        let bad = TeacherTargets {
            pitch: &short,
            ..t
        };
        assert!(m.forward_teacher(&p, &bad, 1, 0).is_err());
    }

    #[test]
    fn style_leak_fixture_breaks_isolation() {
        let m = model();
        let p = seq(&[3, 1, 4]);
        let durations = [2u32, 2, 2];
        let z = [0.0; 6];
        let t = TeacherTargets {
            durations: &durations,
            pitch: &z,
            energy: &z,
        };
        let run = |style| {
            let mut s = Session::eval(&m).with_style_leak();
            let (mel, _) = s.forward_teacher(&p, &t, 0, style).unwrap();
            s.graph.value(mel).clone()
        };
        assert!(run(0).max_abs_diff(&run(1)) > 1e-6);
    }

    #[test]
    fn infer_frames_follow_rounded_durations() {
        let m = model();
        let p = seq(&[3, 1, 4, 1, 5, 9]);
        let style = m.style_row(1).unwrap();
        let (mel, v) = m.forward_infer(&p, 0, &style).unwrap();
        let expected: usize = v
            .log_durations
            .iter()
            .map(|&l| frames_from_log_duration(l) as usize)
            .sum();
        assert_eq!(v.frame_count, expected);
        assert_eq!(mel.rows(), expected);
        assert!(v.durations.iter().all(|&d| d >= 1));

        let (_, other) = m.forward_infer(&p, 2, &style).unwrap();
        assert_eq!(v, other);
    }

    #[test]
    fn runaway_duration_is_rejected() {
        let mut c = ModelConfig::tiny(8, 1, 1);
        c.max_frames = 40;
        let mut m = AcousticModel::new(c, 2).unwrap();
        let bias = m.layout.duration_predictor.proj_b;
        m.params.tensor_mut(bias).data_mut()[0] = 51f64.ln();
        let p = PhonemeSequence::new(vec![1, 2, 3, 4]).unwrap();
        let style = m.style_row(0).unwrap();
        assert!(matches!(
            m.forward_infer(&p, 0, &style),
            Err(Error::RunawayDuration { .. })
        ));
    }

    #[test]
    fn log_duration_inverse() {
        assert_eq!(frames_from_log_duration((5.0f64 + 1.0).ln()), 5);
        assert_eq!(frames_from_log_duration(0.0), 1);
        assert_eq!(frames_from_log_duration(-3.0), 1);
        assert_eq!(frames_from_log_duration(f64::NAN), 1);
    }
}

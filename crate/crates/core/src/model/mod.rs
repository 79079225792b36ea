//! The acoustic model: phoneme encoder, style-conditioned variance adaptor,
//! length regulator and speaker-conditioned mel decoder.
//!
//! Conditioning is asymmetric on purpose. The style embedding is added only
//! to the inputs of the three variance predictors and never reaches the
//! residual stream; the speaker embedding is added only at the decoder
//! input. Under teacher forcing the predictor outputs are bypassed, so the
//! mel path does not depend on the style id at all.

mod network;
mod params;

pub use network::{
    bin_index, length_regulate, sinusoidal_positions, AdaptMode, Session, StyleInput, TeacherTargets,
    VarianceKind, VarianceVars,
};
pub use params::{family, FftBlockIds, Layout, ParamId, Parameters, PredictorIds};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub phoneme_vocab_size: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub attention_heads: usize,
    /// Kernel of the first convolution in each feed-forward block.
    pub conv_kernel: usize,
    /// Inner width of the feed-forward blocks.
    pub ffn_dim: usize,
    pub variance_filter_dim: usize,
    pub variance_kernel: usize,
    pub dropout: f64,
    pub n_mel: usize,
    pub n_speakers: usize,
    pub n_styles: usize,
    pub n_bins: usize,
    pub bin_range: (f64, f64),
    pub max_frames: usize,
}

impl ModelConfig {
    /// Desk-scale defaults: hidden 64, two blocks each side, 32 bins over (-4, 4).
    pub fn desk(phoneme_vocab_size: usize, n_speakers: usize, n_styles: usize) -> Self {
        Self {
            phoneme_vocab_size,
            hidden_dim: 64,
            encoder_layers: 2,
            decoder_layers: 2,
            attention_heads: 2,
            conv_kernel: 3,
            ffn_dim: 128,
            variance_filter_dim: 64,
            variance_kernel: 3,
            dropout: 0.1,
            n_mel: 80,
            n_speakers,
            n_styles,
            n_bins: 32,
            bin_range: (-4.0, 4.0),
            max_frames: 1000,
        }
    }

    /// A one-layer configuration small enough for finite-difference checks.
    pub fn tiny(phoneme_vocab_size: usize, n_speakers: usize, n_styles: usize) -> Self {
        Self {
            hidden_dim: 8,
            encoder_layers: 1,
            decoder_layers: 1,
            attention_heads: 2,
            ffn_dim: 12,
            variance_filter_dim: 8,
            n_mel: 6,
            n_bins: 8,
            dropout: 0.0,
            ..Self::desk(phoneme_vocab_size, n_speakers, n_styles)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.to_string()));
        if self.hidden_dim == 0 || self.attention_heads == 0 {
            return bad("hidden_dim and attention_heads must be positive");
        }
        if self.hidden_dim % self.attention_heads != 0 {
            return bad("hidden_dim must be divisible by attention_heads");
        }
        if self.n_bins < 2 {
            return bad("n_bins must be at least 2");
        }
        if !(self.bin_range.0 < self.bin_range.1) {
            return bad("bin_range low must be below high");
        }
        if !(0.0..=1.0).contains(&self.dropout) {
            return bad("dropout must lie in [0, 1]");
        }
        if self.conv_kernel == 0 || self.variance_kernel == 0 {
            return bad("kernels must be positive");
        }
        if self.phoneme_vocab_size == 0 || self.n_speakers == 0 || self.n_styles == 0 || self.n_mel == 0 {
            return bad("vocabulary, speaker, style and mel counts must be positive");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhonemeSequence {
    ids: Vec<u32>,
}

impl PhonemeSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::InvalidArgument("phoneme sequence is empty".into()));
        }
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn check_vocab(&self, vocab: usize) -> Result<()> {
        match self.ids.iter().position(|&id| id as usize >= vocab) {
            Some(position) => Err(Error::OutOfVocabulary {
                position,
                id: self.ids[position],
                vocab,
            }),
            None => Ok(()),
        }
    }
}

/// Predicted prosody for one utterance.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceOutputs {
    /// Phoneme-level, in the `log(d + 1)` domain the duration loss uses.
    pub log_durations: Vec<f64>,
    /// Frame counts actually used for length regulation.
    pub durations: Vec<u32>,
    pub pitch_hat: Vec<f64>,
    pub energy_hat: Vec<f64>,
    pub frame_count: usize,
}

/// Model configuration plus parameters; the unit that inference runs on.
#[derive(Clone, Debug)]
pub struct AcousticModel {
    pub config: ModelConfig,
    pub params: Parameters,
    pub layout: Layout,
}

impl AcousticModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (layout, params) = Parameters::init(&config, seed);
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn from_parameters(config: ModelConfig, params: Parameters) -> Result<Self> {
        config.validate()?;
        let layout = params.check_layout(&config)?;
        Ok(Self {
            config,
            params,
            layout,
        })
    }

    pub fn session(&self) -> Session<'_> {
        Session::eval(self)
    }

    pub fn encode(&self, phonemes: &PhonemeSequence) -> Result<Tensor> {
        let mut s = self.session();
        let h = s.encode(phonemes)?;
        Ok(s.graph.value(h).clone())
    }

    pub fn style_row(&self, style_id: usize) -> Result<Tensor> {
        self.check_style(style_id)?;
        let table = self.params.tensor(self.layout.style_embedding);
        Ok(Tensor::row_vector(table.row(style_id).to_vec()))
    }

    /// Affine blend `(1 - w)·e_src + w·e_tgt` of two style table rows.
    pub fn interpolate_style(&self, src: usize, tgt: usize, w: f64) -> Result<Tensor> {
        if !(0.0..=1.0).contains(&w) {
            return Err(Error::InvalidArgument(format!("style weight {w} outside [0, 1]")));
        }
        let a = self.style_row(src)?;
        let b = self.style_row(tgt)?;
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| (1.0 - w) * x + w * y)
            .collect();
        Ok(Tensor::row_vector(data))
    }

    /// Full inference path with an arbitrary style vector.
    pub fn forward_infer(
        &self,
        phonemes: &PhonemeSequence,
        speaker_id: usize,
        style: &Tensor,
    ) -> Result<(Tensor, VarianceOutputs)> {
        let mut s = self.session();
        let (mel, vars) = s.forward_infer(phonemes, speaker_id, StyleInput::Vector(style))?;
        let out = vars.outputs(&s.graph);
        Ok((s.graph.value(mel).clone(), out))
    }

    /// Teacher-forced forward pass in eval mode.
    pub fn forward_teacher(
        &self,
        phonemes: &PhonemeSequence,
        targets: &TeacherTargets<'_>,
        speaker_id: usize,
        style_id: usize,
    ) -> Result<(Tensor, VarianceOutputs)> {
        let mut s = self.session();
        let (mel, vars) = s.forward_teacher(phonemes, targets, speaker_id, style_id)?;
        let out = vars.outputs(&s.graph);
        Ok((s.graph.value(mel).clone(), out))
    }

    pub(crate) fn check_style(&self, style_id: usize) -> Result<()> {
        if style_id >= self.config.n_styles {
            return Err(Error::InvalidArgument(format!(
                "style id {style_id} out of range ({} styles)",
                self.config.n_styles
            )));
        }
        Ok(())
    }

    pub(crate) fn check_speaker(&self, speaker_id: usize) -> Result<()> {
        if speaker_id >= self.config.n_speakers {
            return Err(Error::InvalidArgument(format!(
                "speaker id {speaker_id} out of range ({} speakers)",
                self.config.n_speakers
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::desk(16, 3, 3);
        assert!(c.validate().is_ok());
        c.attention_heads = 3;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(16, 3, 3);
        c.n_bins = 1;
        assert!(c.validate().is_err());
        let mut c = ModelConfig::desk(16, 3, 3);
        c.bin_range = (1.0, 1.0);
        assert!(c.validate().is_err());
    }

    #[test]
    fn interpolation_endpoints_and_midpoint() {
        let m = AcousticModel::new(ModelConfig::tiny(8, 2, 3), 5).unwrap();
        let a = m.style_row(0).unwrap();
        let b = m.style_row(2).unwrap();
        assert_eq!(m.interpolate_style(0, 2, 0.0).unwrap(), a);
        assert_eq!(m.interpolate_style(0, 2, 1.0).unwrap(), b);
        let mid = m.interpolate_style(0, 2, 0.5).unwrap();
        for i in 0..a.len() {
            assert!((mid.data()[i] - 0.5 * (a.data()[i] + b.data()[i])).abs() < 1e-15);
        }
        assert!(m.interpolate_style(0, 2, 1.5).is_err());
        assert!(m.interpolate_style(0, 2, -0.1).is_err());
        assert!(m.interpolate_style(0, 3, 0.5).is_err());
    }

    #[test]
    fn out_of_vocabulary_reports_position() {
        let m = AcousticModel::new(ModelConfig::tiny(8, 2, 2), 1).unwrap();
        let seq = PhonemeSequence::new(vec![1, 2, 9, 3]).unwrap();
        match m.encode(&seq) {
            Err(Error::OutOfVocabulary { position, id, .. }) => {
                assert_eq!((position, id), (2, 9));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(PhonemeSequence::new(vec![]).is_err());
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const EMBEDDING_STD: f64 = 0.3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug)]
enum Init {
    /// Glorot-uniform over `(fan_in, fan_out)`.
    Glorot,
    Normal,
    Zeros,
    Ones,
}

#[derive(Clone, Debug)]
pub struct FftBlockIds {
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub ffn_w1: ParamId,
    pub ffn_b1: ParamId,
    pub ffn_w2: ParamId,
    pub ffn_b2: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
}

#[derive(Clone, Debug)]
pub struct PredictorIds {
    pub conv1_w: ParamId,
    pub conv1_b: ParamId,
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub conv2_w: ParamId,
    pub conv2_b: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
}

/// Where each named tensor lives inside [`Parameters`].
#[derive(Clone, Debug)]
pub struct Layout {
    pub phoneme_embedding: ParamId,
    pub speaker_embedding: ParamId,
    pub style_embedding: ParamId,
    pub encoder: Vec<FftBlockIds>,
    pub duration_predictor: PredictorIds,
    pub pitch_predictor: PredictorIds,
    pub energy_predictor: PredictorIds,
    pub pitch_bins: ParamId,
    pub energy_bins: ParamId,
    pub decoder: Vec<FftBlockIds>,
    pub mel_w: ParamId,
    pub mel_b: ParamId,
}

struct Spec {
    name: String,
    rows: usize,
    cols: usize,
    init: Init,
}

#[derive(Default)]
struct Builder {
    specs: Vec<Spec>,
}

impl Builder {
    fn add(&mut self, name: String, rows: usize, cols: usize, init: Init) -> ParamId {
        self.specs.push(Spec {
            name,
            rows,
            cols,
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    fn fft_block(&mut self, prefix: &str, c: &ModelConfig) -> FftBlockIds {
        let h = c.hidden_dim;
        let mut w = |name: &str, rows, cols, init| self.add(format!("{prefix}.{name}"), rows, cols, init);
        FftBlockIds {
            wq: w("attn.wq", h, h, Init::Glorot),
            bq: w("attn.bq", 1, h, Init::Zeros),
            wk: w("attn.wk", h, h, Init::Glorot),
            bk: w("attn.bk", 1, h, Init::Zeros),
            wv: w("attn.wv", h, h, Init::Glorot),
            bv: w("attn.bv", 1, h, Init::Zeros),
            wo: w("attn.wo", h, h, Init::Glorot),
            bo: w("attn.bo", 1, h, Init::Zeros),
            ln1_gamma: w("ln1.gamma", 1, h, Init::Ones),
            ln1_beta: w("ln1.beta", 1, h, Init::Zeros),
            ffn_w1: w("ffn.w1", c.conv_kernel * h, c.ffn_dim, Init::Glorot),
            ffn_b1: w("ffn.b1", 1, c.ffn_dim, Init::Zeros),
            ffn_w2: w("ffn.w2", c.ffn_dim, h, Init::Glorot),
            ffn_b2: w("ffn.b2", 1, h, Init::Zeros),
            ln2_gamma: w("ln2.gamma", 1, h, Init::Ones),
            ln2_beta: w("ln2.beta", 1, h, Init::Zeros),
        }
    }

    fn predictor(&mut self, prefix: &str, c: &ModelConfig) -> PredictorIds {
        let (h, f, k) = (c.hidden_dim, c.variance_filter_dim, c.variance_kernel);
        let mut w = |name: &str, rows, cols, init| self.add(format!("{prefix}.{name}"), rows, cols, init);
        PredictorIds {
            conv1_w: w("conv1.w", k * h, f, Init::Glorot),
            conv1_b: w("conv1.b", 1, f, Init::Zeros),
            ln1_gamma: w("ln1.gamma", 1, f, Init::Ones),
            ln1_beta: w("ln1.beta", 1, f, Init::Zeros),
            conv2_w: w("conv2.w", k * f, f, Init::Glorot),
            conv2_b: w("conv2.b", 1, f, Init::Zeros),
            ln2_gamma: w("ln2.gamma", 1, f, Init::Ones),
            ln2_beta: w("ln2.beta", 1, f, Init::Zeros),
            proj_w: w("proj.w", f, 1, Init::Glorot),
            proj_b: w("proj.b", 1, 1, Init::Zeros),
        }
    }
}

fn build(c: &ModelConfig) -> (Layout, Vec<Spec>) {
    let mut b = Builder::default();
    let h = c.hidden_dim;
    let phoneme_embedding = b.add("phoneme_embedding".into(), c.phoneme_vocab_size, h, Init::Normal);
    let speaker_embedding = b.add("speaker_embedding".into(), c.n_speakers, h, Init::Normal);
    let style_embedding = b.add("style_embedding".into(), c.n_styles, h, Init::Normal);
    let encoder = (0..c.encoder_layers)
        .map(|i| b.fft_block(&format!("encoder.{i}"), c))
        .collect();
    let duration_predictor = b.predictor("duration_predictor", c);
    let pitch_predictor = b.predictor("pitch_predictor", c);
    let energy_predictor = b.predictor("energy_predictor", c);
    let pitch_bins = b.add("pitch_bin_embedding".into(), c.n_bins, h, Init::Normal);
    let energy_bins = b.add("energy_bin_embedding".into(), c.n_bins, h, Init::Normal);
    let decoder = (0..c.decoder_layers)
        .map(|i| b.fft_block(&format!("decoder.{i}"), c))
        .collect();
    let mel_w = b.add("mel_proj.w".into(), h, c.n_mel, Init::Glorot);
    let mel_b = b.add("mel_proj.b".into(), 1, c.n_mel, Init::Zeros);
    let layout = Layout {
        phoneme_embedding,
        speaker_embedding,
        style_embedding,
        encoder,
        duration_predictor,
        pitch_predictor,
        energy_predictor,
        pitch_bins,
        energy_bins,
        decoder,
        mel_w,
        mel_b,
    };
    (layout, b.specs)
}

/// Named weight tensors, in a fixed order determined by [`ModelConfig`].
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl Parameters {
    pub fn init(config: &ModelConfig, seed: u64) -> (Layout, Self) {
        let (layout, specs) = build(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, EMBEDDING_STD).expect("valid std");
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for s in specs {
            let n = s.rows * s.cols;
            let data: Vec<f64> = match s.init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Normal => (0..n).map(|_| normal.sample(&mut rng)).collect(),
                Init::Glorot => {
                    let a = (6.0 / (s.rows + s.cols) as f64).sqrt();
                    (0..n).map(|_| rng.gen_range(-a..a)).collect()
                }
            };
            names.push(s.name);
            tensors.push(Tensor::from_vec(s.rows, s.cols, data));
        }
        (layout, Self { names, tensors })
    }

    /// Builds a parameter set from `(name, tensor)` pairs, e.g. read from disk.
    pub fn from_named(entries: Vec<(String, Tensor)>) -> Self {
        let (names, tensors) = entries.into_iter().unzip();
        Self { names, tensors }
    }

    /// Verifies names and shapes against the layout implied by `config`.
    pub fn check_layout(&self, config: &ModelConfig) -> Result<Layout> {
        let (layout, specs) = build(config);
        if specs.len() != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for (i, s) in specs.iter().enumerate() {
            if self.names[i] != s.name || self.tensors[i].shape() != (s.rows, s.cols) {
                return Err(Error::Checkpoint(format!(
                    "tensor {i} is {} {:?}, expected {} {:?}",
                    self.names[i],
                    self.tensors[i].shape(),
                    s.name,
                    (s.rows, s.cols)
                )));
            }
            if !self.tensors[i].is_finite() {
                return Err(Error::Checkpoint(format!("tensor {} has non-finite values", s.name)));
            }
        }
        Ok(layout)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn tensor_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Total number of scalar weights.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Zeroed tensors with the same shapes, e.g. for optimizer moments.
    pub fn zeros_like(&self) -> Vec<Tensor> {
        self.tensors.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect()
    }
}

/// The family a tensor belongs to: the part of its name before the first
/// dot, e.g. `encoder`, `pitch_predictor` or `style_embedding`.
pub fn family(name: &str) -> &str {
    name.split('.').next().unwrap_or(name)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let c = ModelConfig::desk(16, 3, 4);
        let (layout, p) = Parameters::init(&c, 0);
        assert_eq!(p.tensor(layout.phoneme_embedding).shape(), (16, 64));
        assert_eq!(p.tensor(layout.speaker_embedding).shape(), (3, 64));
        assert_eq!(p.tensor(layout.style_embedding).shape(), (4, 64));
        assert_eq!(p.tensor(layout.pitch_bins).shape(), (32, 64));
        assert_eq!(p.tensor(layout.mel_w).shape(), (64, 80));
        assert_eq!(layout.encoder.len(), 2);
        assert_eq!(p.tensor(layout.encoder[0].ffn_w1).shape(), (3 * 64, 128));
        assert!(p.iter().all(|(_, t)| t.is_finite()));
        assert!(p.check_layout(&c).is_ok());
        let mut other = c.clone();
        other.hidden_dim = 32;
        assert!(p.check_layout(&other).is_err());
    }

    #[test]
    fn init_is_seeded() {
        let c = ModelConfig::tiny(8, 2, 2);
        assert_eq!(Parameters::init(&c, 3).1, Parameters::init(&c, 3).1);
        assert_ne!(Parameters::init(&c, 3).1, Parameters::init(&c, 4).1);
    }

    #[test]
    fn family_is_name_prefix() {
        assert_eq!(family("encoder.0.attn.wq"), "encoder");
        assert_eq!(family("style_embedding"), "style_embedding");
    }
}

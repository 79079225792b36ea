use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::{collate, forward_batch, LossBreakdown};
use super::checkpoint::{save_checkpoint, Checkpoint};
use super::manifest::{load_manifest, Manifest};
use super::schedule::{optimizer_step, AdamState, TrainingSchedule};
use crate::error::{Error, Result};
use crate::features::{build_utterance, read_cache, write_cache, AlignedUtterance, PhonemeInventory};
use crate::model::{AcousticModel, ModelConfig, Session};
use crate::normalize::{normalize_corpus, NormMode};
use crate::tensor::Tensor;

/// Training run configuration as read from a `--config` JSON file. Speaker,
/// style and vocabulary counts in `model` are replaced by the corpus values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub model: Option<ModelConfig>,
    pub schedule: TrainingSchedule,
}

impl TrainConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn model_for(&self, vocab: usize, n_speakers: usize, n_styles: usize) -> ModelConfig {
        match &self.model {
            Some(m) => ModelConfig {
                phoneme_vocab_size: vocab,
                n_speakers,
                n_styles,
                ..m.clone()
            },
            None => ModelConfig::desk(vocab, n_speakers, n_styles),
        }
    }
}

/// A loaded corpus: manifest, symbol table and raw (unnormalized) features.
#[derive(Clone, Debug)]
pub struct Corpus {
    pub manifest: Manifest,
    pub inventory: PhonemeInventory,
    pub utterances: Vec<AlignedUtterance>,
}

impl Corpus {
    /// Extracts features for every manifest entry, reusing `<id>.feat` files
    /// under `cache_dir` when present.
    pub fn load(manifest_path: &Path, cache_dir: Option<&Path>) -> Result<Self> {
        let manifest = load_manifest(manifest_path)?;
        let inventory = manifest.inventory();
        if let Some(dir) = cache_dir {
            fs::create_dir_all(dir)?;
        }
        let mut utterances = Vec::with_capacity(manifest.entries.len());
        for e in &manifest.entries {
            let speaker = manifest.speaker_id(&e.speaker).expect("speaker registered by parse");
            let style = manifest.style_id(&e.style).expect("style registered by parse");
            let cached = cache_dir.map(|d| d.join(format!("{}.feat", e.id)));
            let utt = match cached.as_deref().filter(|p| p.exists()) {
                Some(p) => read_cache(p)?,
                None => {
                    let u = build_utterance(&e.id, &e.wav, &e.alignment, &inventory, speaker, style)?;
                    let listed = e.phonemes.iter().map(|p| inventory.id(p)).collect::<Result<Vec<_>>>()?;
                    if listed != u.phonemes.ids() {
                        return Err(Error::InvalidArgument(format!(
                            "{}: manifest phonemes differ from the alignment",
                            e.id
                        )));
                    }
                    if let Some(p) = &cached {
                        write_cache(p, &u)?;
                    }
                    u
                }
            };
            utterances.push(utt);
        }
        Ok(Self {
            manifest,
            inventory,
            utterances,
        })
    }
}

/// One loss-log row.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub lr: f64,
    pub loss: LossBreakdown,
}

impl LossRow {
    /// `step,lr,total,mel,duration,pitch,energy`.
    pub fn to_csv(&self) -> String {
        let l = &self.loss;
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step, self.lr, l.total, l.mel, l.duration, l.pitch, l.energy
        )
    }
}

fn mix(seed: u64, step: u64) -> u64 {
    let mut z = seed ^ step.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Single-writer optimization loop. Batch order and dropout masks depend only
/// on `(seed, step)`, so a run restored from a checkpoint continues exactly.
pub struct Trainer {
    pub model: AcousticModel,
    pub adam: AdamState,
    pub schedule: TrainingSchedule,
    pub step: u64,
    pub norm_mode: NormMode,
    pub speakers: Vec<String>,
    pub styles: Vec<String>,
    pub phonemes: Vec<String>,
    data: Vec<AlignedUtterance>,
}

impl Trainer {
    /// `data` must already be normalized.
    pub fn new(model: AcousticModel, schedule: TrainingSchedule, norm_mode: NormMode, data: Vec<AlignedUtterance>) -> Result<Self> {
        schedule.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidArgument("no training utterances".into()));
        }
        let c = &model.config;
        for u in &data {
            u.phonemes.check_vocab(c.phoneme_vocab_size)?;
            if u.n_mel != c.n_mel {
                return Err(Error::DimensionMismatch {
                    what: "mel bands",
                    expected: c.n_mel,
                    got: u.n_mel,
                });
            }
            model.check_speaker(u.speaker_id)?;
            model.check_style(u.style_id)?;
        }
        let adam = AdamState::zeros_like(model.params.tensors());
        let names = |p: &str, n: usize| (0..n).map(|i| format!("{p}{i}")).collect();
        Ok(Self {
            speakers: names("speaker", c.n_speakers),
            styles: names("style", c.n_styles),
            phonemes: names("p", c.phoneme_vocab_size),
            model,
            adam,
            schedule,
            step: 0,
            norm_mode,
            data,
        })
    }

    /// Normalizes a corpus and builds a freshly initialized model for it.
    pub fn from_corpus(corpus: &Corpus, config: ModelConfig, schedule: TrainingSchedule, norm_mode: NormMode) -> Result<Self> {
        let (data, _) = normalize_corpus(&corpus.utterances, norm_mode)?;
        let model = AcousticModel::new(config, schedule.seed)?;
        let mut t = Self::new(model, schedule, norm_mode, data)?;
        t.speakers = corpus.manifest.speakers.clone();
        t.styles = corpus.manifest.styles.clone();
        t.phonemes = corpus.inventory.symbols().to_vec();
        Ok(t)
    }

    pub fn from_checkpoint(ckpt: Checkpoint, data: Vec<AlignedUtterance>) -> Result<Self> {
        let mut t = Self::new(ckpt.model, ckpt.schedule, ckpt.norm_mode, data)?;
        t.adam = ckpt.adam;
        t.step = ckpt.step;
        t.speakers = ckpt.speakers;
        t.styles = ckpt.styles;
        t.phonemes = ckpt.phonemes;
        Ok(t)
    }

    pub fn data(&self) -> &[AlignedUtterance] {
        &self.data
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            step: self.step,
            schedule: self.schedule.clone(),
            speakers: self.speakers.clone(),
            styles: self.styles.clone(),
            phonemes: self.phonemes.clone(),
            norm_mode: self.norm_mode,
        }
    }

    /// Utterance indices of the batch for 1-based `step`: consecutive slices
    /// of a stream of per-epoch permutations.
    pub fn batch_indices(&self, step: u64) -> Vec<usize> {
        let n = self.data.len();
        let b = self.schedule.batch_size.min(n);
        let start = (step - 1) as usize * b;
        let mut cached: Option<(usize, Vec<usize>)> = None;
        (start..start + b)
            .map(|pos| {
                let epoch = pos / n;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..n).collect();
                    let mut rng = ChaCha8Rng::seed_from_u64(self.schedule.seed);
                    rng.set_stream(epoch as u64 + 1);
                    perm.shuffle(&mut rng);
                    cached = Some((epoch, perm));
                }
                cached.as_ref().unwrap().1[pos % n]
            })
            .collect()
    }

    /// Runs one optimization step and returns its loss row. On error the
    /// model and optimizer state are left untouched.
    pub fn train_step(&mut self) -> Result<LossRow> {
        let step = self.step + 1;
        let lr = self.schedule.noam_lr(step)?;
        let idx = self.batch_indices(step);
        let utts: Vec<&AlignedUtterance> = idx.iter().map(|&i| &self.data[i]).collect();
        let batch = collate(&utts)?;

        let n_params = self.model.params.len();
        let (loss, grads) = {
            let mut session = Session::train(&self.model, Some(mix(self.schedule.seed, step)));
            let vars = forward_batch(&mut session, &batch)?;
            let loss = vars.values(&session.graph)?;
            let mut g = session.graph.backward(vars.total);
            let mut grads: Vec<Option<Tensor>> = vec![None; n_params];
            for (id, leaf) in session.param_leaves() {
                if let Some(t) = g.take(leaf) {
                    if !t.is_finite() {
                        return Err(Error::NonFiniteGradient(self.model.params.name(id).to_string()));
                    }
                    grads[id.0] = Some(t);
                }
            }
            (loss, grads)
        };
        optimizer_step(self.model.params.tensors_mut(), &grads, &mut self.adam, step, &self.schedule)?;
        self.step = step;
        Ok(LossRow { step, lr, loss })
    }

    /// Steps until `self.step == until`, collecting loss rows.
    pub fn run(&mut self, until: u64) -> Result<Vec<LossRow>> {
        let mut rows = Vec::new();
        while self.step < until {
            rows.push(self.train_step()?);
        }
        Ok(rows)
    }
}

/// Outcome of [`train`]: final checkpoint path and the loss curve.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub loss_log: PathBuf,
    pub rows: Vec<LossRow>,
}

/// Trains on a manifest, writing `loss.csv`, periodic `step-<k>.ckpt` and
/// `final.ckpt` into `out`. A non-finite loss or gradient aborts the run after
/// saving the last good state to `last-good.ckpt`.
pub fn train(
    manifest: &Path,
    config: &TrainConfig,
    norm_mode: NormMode,
    out: &Path,
    on_row: impl FnMut(&LossRow),
) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    let corpus = Corpus::load(manifest, Some(&out.join("features")))?;
    let model_config = config.model_for(
        corpus.inventory.len(),
        corpus.manifest.speakers.len(),
        corpus.manifest.styles.len(),
    );
    let trainer = Trainer::from_corpus(&corpus, model_config, config.schedule.clone(), norm_mode)?;
    run_to_completion(trainer, out, false, on_row)
}

/// Continues a checkpointed run on the same manifest up to `total_steps`,
/// appending to `loss.csv` in `out`.
pub fn resume(
    checkpoint: Checkpoint,
    manifest: &Path,
    total_steps: u64,
    out: &Path,
    on_row: impl FnMut(&LossRow),
) -> Result<TrainOutcome> {
    fs::create_dir_all(out)?;
    let corpus = Corpus::load(manifest, Some(&out.join("features")))?;
    if corpus.manifest.speakers != checkpoint.speakers || corpus.manifest.styles != checkpoint.styles {
        return Err(Error::Checkpoint("manifest speakers or styles differ from the checkpoint".into()));
    }
    if corpus.inventory.symbols() != checkpoint.phonemes.as_slice() {
        return Err(Error::Checkpoint("manifest phoneme inventory differs from the checkpoint".into()));
    }
    let (data, _) = normalize_corpus(&corpus.utterances, checkpoint.norm_mode)?;
    let mut trainer = Trainer::from_checkpoint(checkpoint, data)?;
    trainer.schedule.total_steps = total_steps;
    run_to_completion(trainer, out, true, on_row)
}

fn run_to_completion(
    mut trainer: Trainer,
    out: &Path,
    append: bool,
    mut on_row: impl FnMut(&LossRow),
) -> Result<TrainOutcome> {
    let schedule = trainer.schedule.clone();
    let loss_log = out.join("loss.csv");
    let mut log = fs::OpenOptions::new()
        .create(true)
        .write(true)
        .append(append)
        .truncate(!append)
        .open(&loss_log)?;
    let mut rows = Vec::new();
    while trainer.step < schedule.total_steps {
        let row = match trainer.train_step() {
            Ok(r) => r,
            Err(e @ (Error::NonFiniteLoss(_) | Error::NonFiniteGradient(_) | Error::NonFinite(_))) => {
                save_checkpoint(&out.join("last-good.ckpt"), &trainer.checkpoint())?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        writeln!(log, "{}", row.to_csv())?;
        on_row(&row);
        rows.push(row);
        if schedule.checkpoint_every > 0 && trainer.step % schedule.checkpoint_every == 0 {
            save_checkpoint(&out.join(format!("step-{}.ckpt", trainer.step)), &trainer.checkpoint())?;
        }
    }
    log.flush()?;
    let checkpoint = out.join("final.ckpt");
    save_checkpoint(&checkpoint, &trainer.checkpoint())?;
    Ok(TrainOutcome {
        checkpoint,
        loss_log,
        rows,
    })
}

//! Machine-checkable disentanglement properties, finite-difference gradient
//! validation, cross-style transfer and the normalization ablation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::features::AlignedUtterance;
use crate::model::{family, AcousticModel, ModelConfig, ParamId, PhonemeSequence, Session, VarianceOutputs};
use crate::normalize::{normalize_corpus, voiced_moments, NormMode};
use crate::tensor::Tensor;
use crate::trainer::corpus::fitted_slope;
use crate::trainer::{collate, forward_batch, Batch, Checkpoint};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    Skip,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Skip => "skip",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub status: Status,
    pub value: f64,
    pub threshold: f64,
    /// Number of comparisons behind `value`.
    pub samples: usize,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, value: f64, threshold: f64, samples: usize, detail: String) -> Self {
        Self {
            name: name.to_string(),
            status: if passed { Status::Pass } else { Status::Fail },
            value,
            threshold,
            samples,
            detail,
        }
    }

    fn skipped(name: &str, detail: &str) -> Self {
        Self {
            name: name.to_string(),
            status: Status::Skip,
            value: f64::NAN,
            threshold: f64::NAN,
            samples: 0,
            detail: detail.to_string(),
        }
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

/// Checks ordered by name. Skipped checks do not fail the report.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct VerificationReport {
    pub checks: Vec<CheckResult>,
}

impl VerificationReport {
    pub fn push(&mut self, c: CheckResult) {
        let at = self.checks.partition_point(|x| x.name <= c.name);
        self.checks.insert(at, c);
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }

    pub fn to_text(&self) -> String {
        let width = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let mut s = format!("{:<width$}  {:<6}  {:>12}  {:>12}  detail\n", "check", "status", "value", "threshold");
        for c in &self.checks {
            writeln!(
                s,
                "{:<width$}  {:<6}  {:>12.4e}  {:>12.4e}  {}",
                c.name,
                c.status.as_str(),
                c.value,
                c.threshold,
                c.detail
            )
            .unwrap();
        }
        writeln!(s, "overall: {}", if self.passed() { "pass" } else { "fail" }).unwrap();
        s
    }

    /// `check,status,value,threshold` rows.
    pub fn to_rows(&self) -> String {
        let mut s = String::from("check,status,value,threshold\n");
        for c in &self.checks {
            writeln!(s, "{},{},{:e},{:e}", c.name, c.status.as_str(), c.value, c.threshold).unwrap();
        }
        s
    }
}

/// Which network build a check runs against. `StyleLeak` is the mutation
/// fixture that adds the style vector to the decoder input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Build {
    Standard,
    StyleLeak,
}

fn session(model: &AcousticModel, build: Build) -> Session<'_> {
    match build {
        Build::Standard => Session::eval(model),
        Build::StyleLeak => Session::eval(model).with_style_leak(),
    }
}

pub const ISOLATION_TOLERANCE: f64 = 1e-9;
pub const MEL_DISTINCT_THRESHOLD: f64 = 1e-3;

/// Teacher-forced mel for every style id, compared across all style pairs.
pub fn check_style_isolation(model: &AcousticModel, utts: &[AlignedUtterance], build: Build) -> Result<CheckResult> {
    if utts.is_empty() {
        return Err(Error::InvalidArgument("style isolation needs at least one utterance".into()));
    }
    let n = model.config.n_styles;
    let mut worst = 0.0f64;
    let mut pairs = 0;
    for u in utts {
        let pitch = u.pitch_f64();
        let energy = u.energy_f64();
        let targets = crate::model::TeacherTargets {
            durations: &u.durations,
            pitch: &pitch,
            energy: &energy,
        };
        let mels = (0..n)
            .map(|style| {
                let mut s = session(model, build);
                let (mel, _) = s.forward_teacher(&u.phonemes, &targets, u.speaker_id, style)?;
                Ok(s.graph.value(mel).clone())
            })
            .collect::<Result<Vec<Tensor>>>()?;
        for a in 0..n {
            for b in a + 1..n {
                worst = worst.max(mels[a].max_abs_diff(&mels[b]));
                pairs += 1;
            }
        }
    }
    Ok(CheckResult::new(
        "style_isolation",
        worst <= ISOLATION_TOLERANCE,
        worst,
        ISOLATION_TOLERANCE,
        pairs,
        format!("{pairs} style pairs over {} utterances", utts.len()),
    ))
}

fn prosody_diff(a: &VarianceOutputs, b: &VarianceOutputs) -> f64 {
    if a.durations != b.durations || a.frame_count != b.frame_count {
        return f64::INFINITY;
    }
    let d = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
    d(&a.log_durations, &b.log_durations)
        .max(d(&a.pitch_hat, &b.pitch_hat))
        .max(d(&a.energy_hat, &b.energy_hat))
}

/// Inference prosody must not depend on the speaker id; with
/// `require_distinct_mel` the mels of different speakers must also differ.
pub fn check_speaker_isolation(
    model: &AcousticModel,
    texts: &[PhonemeSequence],
    style_id: usize,
    require_distinct_mel: bool,
) -> Result<CheckResult> {
    if texts.is_empty() {
        return Err(Error::InvalidArgument("speaker isolation needs at least one text".into()));
    }
    let n = model.config.n_speakers;
    if n < 2 {
        return Ok(CheckResult::skipped("speaker_isolation", "single-speaker checkpoint"));
    }
    let style = model.style_row(style_id)?;
    let mut worst = 0.0f64;
    let mut min_mel = f64::INFINITY;
    let mut pairs = 0;
    for text in texts {
        let outs = (0..n)
            .map(|spk| model.forward_infer(text, spk, &style))
            .collect::<Result<Vec<_>>>()?;
        for a in 0..n {
            for b in a + 1..n {
                worst = worst.max(prosody_diff(&outs[a].1, &outs[b].1));
                let mel = if outs[a].0.shape() == outs[b].0.shape() {
                    outs[a].0.max_abs_diff(&outs[b].0)
                } else {
                    f64::INFINITY
                };
                min_mel = min_mel.min(mel);
                pairs += 1;
            }
        }
    }
    let mel_ok = !require_distinct_mel || min_mel > MEL_DISTINCT_THRESHOLD;
    Ok(CheckResult::new(
        "speaker_isolation",
        worst <= ISOLATION_TOLERANCE && mel_ok,
        worst,
        ISOLATION_TOLERANCE,
        pairs,
        format!(
            "{pairs} speaker pairs over {} texts; min mel diff {min_mel:.3e}{}",
            texts.len(),
            if require_distinct_mel { "" } else { " (distinctness waived)" }
        ),
    ))
}

/// Random utterances shaped for `config`, for gradient checks.
pub fn random_utterances(config: &ModelConfig, count: usize, seed: u64) -> Vec<AlignedUtterance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let n_ph = rng.gen_range(3..=5);
            let ids = (0..n_ph).map(|_| rng.gen_range(0..config.phoneme_vocab_size as u32)).collect();
            let durations: Vec<u32> = (0..n_ph).map(|_| rng.gen_range(1..=3)).collect();
            let frames: usize = durations.iter().map(|&d| d as usize).sum();
            let mut normal = |scale: f64, shift: f64| -> Vec<f32> {
                (0..frames)
                    .map(|_| (shift + scale * rng.sample::<f64, _>(StandardNormal)) as f32)
                    .collect()
            };
            let pitch = normal(1.0, 0.0);
            let energy = normal(1.0, 0.0);
            let mel = (0..config.n_mel)
                .flat_map(|_| normal(1.0, -3.0))
                .collect();
            AlignedUtterance {
                id: format!("probe{i}"),
                phonemes: PhonemeSequence::new(ids).unwrap(),
                durations,
                pitch,
                energy,
                mel,
                n_mel: config.n_mel,
                speaker_id: i % config.n_speakers,
                style_id: i % config.n_styles,
            }
        })
        .collect()
}

pub const GRADCHECK_STEP: f64 = 1e-5;
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;
/// Denominator floor of the relative error, so that derivatives at
/// rounding-noise magnitude are compared absolutely.
pub const GRADCHECK_FLOOR: f64 = 1e-5;
pub const STYLE_FD_TOLERANCE: f64 = 1e-7;

/// Which term of the loss a gradient check differentiates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Term {
    Total,
    Mel,
}

/// Mutation fixture for [`gradcheck_fd`]: adds a `Σ b²` term on
/// `mel_proj.w` whose backward rule is deliberately wrong.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradFixture {
    None,
    WrongGradient,
}

fn loss_and_grads(model: &AcousticModel, batch: &Batch, term: Term, fixture: GradFixture, grads: bool) -> Result<(f64, Vec<Option<Tensor>>)> {
    let mut s = Session::train(model, None);
    let vars = forward_batch(&mut s, batch)?;
    let mut out = match term {
        Term::Total => vars.total,
        Term::Mel => vars.mel,
    };
    if fixture == GradFixture::WrongGradient {
        let id = model.params.find("mel_proj.w").expect("mel_proj.w exists");
        let b = s.param(id);
        let v: f64 = s.graph.value(b).data().iter().map(|x| x * x).sum();
        let wrong: crate::graph::CustomBackward =
            Box::new(|g, inputs, _| vec![inputs[0].map(|x| 3.0 * x * g.item())]);
        let extra = s.graph.custom(&[b], Tensor::scalar(v), wrong);
        out = s.graph.add(out, extra);
    }
    let value = s.graph.value(out).item();
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss(match term {
            Term::Total => "total",
            Term::Mel => "mel",
        }));
    }
    if !grads {
        return Ok((value, Vec::new()));
    }
    let mut g = s.graph.backward(out);
    let mut all = vec![None; model.params.len()];
    for (id, leaf) in s.param_leaves() {
        all[id.0] = g.take(leaf);
    }
    Ok((value, all))
}

fn central_difference(model: &AcousticModel, batch: &Batch, term: Term, fixture: GradFixture, id: ParamId, k: usize) -> Result<f64> {
    let mut m = model.clone();
    let x0 = m.params.tensor(id).data()[k];
    m.params.tensor_mut(id).data_mut()[k] = x0 + GRADCHECK_STEP;
    let (plus, _) = loss_and_grads(&m, batch, term, fixture, false)?;
    m.params.tensor_mut(id).data_mut()[k] = x0 - GRADCHECK_STEP;
    let (minus, _) = loss_and_grads(&m, batch, term, fixture, false)?;
    Ok((plus - minus) / (2.0 * GRADCHECK_STEP))
}

/// One finite-difference comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct Probe {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub relative_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckOutcome {
    pub check: CheckResult,
    pub style_check: CheckResult,
    pub probes: Vec<Probe>,
    pub families: Vec<String>,
}

/// Chooses `n` `(tensor, element)` probes, round-robin over tensor families
/// and over tensors within a family. Elements come from rows that received
/// gradient when any did, so embedding tables are probed at active rows.
fn choose_probes(model: &AcousticModel, grads: &[Option<Tensor>], n: usize, rng: &mut ChaCha8Rng) -> Vec<(ParamId, usize)> {
    let mut families: Vec<(String, Vec<ParamId>)> = Vec::new();
    for id in model.params.ids() {
        let f = family(model.params.name(id)).to_string();
        match families.iter_mut().find(|(name, _)| *name == f) {
            Some((_, ids)) => ids.push(id),
            None => families.push((f, vec![id])),
        }
    }
    let mut cursor = vec![0usize; families.len()];
    (0..n)
        .map(|i| {
            let fi = i % families.len();
            let ids = &families[fi].1;
            let id = ids[cursor[fi] % ids.len()];
            cursor[fi] += 1;
            let t = model.params.tensor(id);
            let active: Vec<usize> = match &grads[id.0] {
                Some(g) => (0..t.rows()).filter(|&r| g.row(r).iter().any(|&v| v != 0.0)).collect(),
                None => Vec::new(),
            };
            let row = *active.choose(rng).unwrap_or(&rng.gen_range(0..t.rows()));
            (id, row * t.cols() + rng.gen_range(0..t.cols()))
        })
        .collect()
}

pub fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRADCHECK_FLOOR)
}

/// Central differences on the training loss of one random batch against the
/// tape gradients, plus the mel-term gradient of the style table, which
/// must vanish under teacher forcing.
pub fn gradcheck_fd(config: &ModelConfig, seed: u64, n_probes: usize, fixture: GradFixture) -> Result<GradcheckOutcome> {
    if config.hidden_dim > 16 || config.encoder_layers > 1 || config.decoder_layers > 1 {
        return Err(Error::InvalidArgument("gradient checks expect a tiny configuration".into()));
    }
    let mut config = config.clone();
    config.dropout = 0.0;
    let model = AcousticModel::new(config.clone(), seed)?;
    let utts = random_utterances(&config, 2, seed ^ 0x5eed);
    let refs: Vec<&AlignedUtterance> = utts.iter().collect();
    let batch = collate(&refs)?;

    let (_, grads) = loss_and_grads(&model, &batch, Term::Total, fixture, true)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probes = Vec::with_capacity(n_probes);
    for (id, k) in choose_probes(&model, &grads, n_probes, &mut rng) {
        let analytic = grads[id.0].as_ref().map_or(0.0, |g| g.data()[k]);
        let numeric = central_difference(&model, &batch, Term::Total, fixture, id, k)?;
        probes.push(Probe {
            tensor: model.params.name(id).to_string(),
            index: k,
            analytic,
            numeric,
            relative_error: relative_error(analytic, numeric),
        });
    }
    let mut families: Vec<String> = probes.iter().map(|p| family(&p.tensor).to_string()).collect();
    families.sort();
    families.dedup();
    let worst = probes.iter().map(|p| p.relative_error).fold(0.0, f64::max);
    let check = CheckResult::new(
        "gradcheck",
        worst <= GRADCHECK_TOLERANCE,
        worst,
        GRADCHECK_TOLERANCE,
        probes.len(),
        format!("{} probes over {} tensor families", probes.len(), families.len()),
    );

    let style_id = model.layout.style_embedding;
    let (_, mel_grads) = loss_and_grads(&model, &batch, Term::Mel, GradFixture::None, true)?;
    let analytic_max = mel_grads[style_id.0]
        .as_ref()
        .map_or(0.0, |g| g.data().iter().fold(0.0f64, |m, v| m.max(v.abs())));
    let mut fd_max = 0.0f64;
    let cols = model.params.tensor(style_id).cols();
    let used: Vec<usize> = utts.iter().map(|u| u.style_id).collect();
    for (j, &row) in used.iter().enumerate() {
        for c in [j % cols, (j + cols / 2) % cols] {
            let fd = central_difference(&model, &batch, Term::Mel, GradFixture::None, style_id, row * cols + c)?;
            fd_max = fd_max.max(fd.abs());
        }
    }
    let style_check = CheckResult::new(
        "gradcheck_style_table",
        analytic_max == 0.0 && fd_max <= STYLE_FD_TOLERANCE,
        fd_max,
        STYLE_FD_TOLERANCE,
        2 * used.len(),
        format!("mel-term analytic gradient max {analytic_max:e}"),
    );
    Ok(GradcheckOutcome {
        check,
        style_check,
        probes,
        families,
    })
}

pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n < 2 {
        return f64::NAN;
    }
    let ma = a[..n].iter().sum::<f64>() / n as f64;
    let mb = b[..n].iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for i in 0..n {
        let (x, y) = (a[i] - ma, b[i] - mb);
        sab += x * y;
        saa += x * x;
        sbb += y * y;
    }
    sab / (saa * sbb).sqrt()
}

pub const TRANSFER_CORRELATION: f64 = 0.9;

/// Slopes and correlations behind the transfer checks.
#[derive(Clone, Debug, PartialEq)]
pub struct TransferOutcome {
    pub cross: CheckResult,
    pub own: CheckResult,
    pub flat: CheckResult,
    /// Mean fitted pitch slope per style (`rising`, `falling`, `flat`) when
    /// rendered by the rising speaker.
    pub slopes: [f64; 3],
    pub min_correlation: f64,
}

/// Mean fitted slope of predicted pitch over `texts`.
pub fn mean_pitch_slope(model: &AcousticModel, texts: &[PhonemeSequence], speaker: usize, style: &Tensor) -> Result<f64> {
    let mut total = 0.0;
    for t in texts {
        let (_, out) = model.forward_infer(t, speaker, style)?;
        total += fitted_slope(&out.pitch_hat);
    }
    Ok(total / texts.len() as f64)
}

/// Cross-style transfer on a checkpoint trained on the synthetic corpus,
/// where speaker `i` recorded only style `i`: the rising speaker rendered in
/// the falling style must fall and track the native falling speaker.
pub fn transfer_experiment(ckpt: &Checkpoint, texts: &[PhonemeSequence]) -> Result<TransferOutcome> {
    let style = |name: &str| {
        ckpt.style_id(name)
            .map_err(|_| Error::InvalidArgument(format!("transfer needs a {name:?} style in the checkpoint")))
    };
    let (rising, falling, flat) = (style("rising")?, style("falling")?, style("flat")?);
    if ckpt.speakers.len() != ckpt.styles.len() {
        return Err(Error::InvalidArgument(
            "transfer needs one style per speaker (speaker i recorded style i)".into(),
        ));
    }
    if texts.is_empty() {
        return Err(Error::InvalidArgument("transfer needs at least one text".into()));
    }
    let model = &ckpt.model;
    let speaker_a = rising;
    let native = falling;
    let rows = [model.style_row(rising)?, model.style_row(falling)?, model.style_row(flat)?];

    let mut min_corr = f64::INFINITY;
    for t in texts {
        let (_, cross) = model.forward_infer(t, speaker_a, &rows[1])?;
        let (_, own) = model.forward_infer(t, native, &rows[1])?;
        min_corr = min_corr.min(pearson(&cross.pitch_hat, &own.pitch_hat));
    }
    let slopes = [
        mean_pitch_slope(model, texts, speaker_a, &rows[0])?,
        mean_pitch_slope(model, texts, speaker_a, &rows[1])?,
        mean_pitch_slope(model, texts, speaker_a, &rows[2])?,
    ];
    let cross = CheckResult::new(
        "transfer_cross",
        slopes[1] < 0.0 && min_corr >= TRANSFER_CORRELATION,
        min_corr,
        TRANSFER_CORRELATION,
        texts.len(),
        format!("rising speaker in falling style: slope {:.4}, min correlation {min_corr:.4}", slopes[1]),
    );
    let own = CheckResult::new(
        "transfer_own",
        slopes[0] > 0.0,
        slopes[0],
        0.0,
        texts.len(),
        "rising speaker in own style: slope must be positive".into(),
    );
    let bound = slopes[0].abs().min(slopes[1].abs());
    let flat_check = CheckResult::new(
        "transfer_flat",
        slopes[2].abs() < bound,
        slopes[2].abs(),
        bound,
        texts.len(),
        "flat style |slope| below the rising and falling magnitudes".into(),
    );
    Ok(TransferOutcome {
        cross,
        own,
        flat: flat_check,
        slopes,
        min_correlation: min_corr,
    })
}

pub const UTTNORM_TOLERANCE: f64 = 1e-6;
pub const SPKNORM_WITNESS: f64 = 0.1;

/// UttNorm must give each utterance voiced pitch mean 0 and std 1 while
/// SpkNorm leaves some utterance with `|mean| > 0.1`. A corpus whose
/// utterances share their statistics is reported as not discriminative.
pub fn uttnorm_ablation(raw: &[AlignedUtterance]) -> Result<CheckResult> {
    let (utt, _) = normalize_corpus(raw, NormMode::Utt)?;
    let (spk, _) = normalize_corpus(raw, NormMode::Spk)?;
    let mut utt_dev = 0.0f64;
    let mut utt_max_mean = 0.0f64;
    let mut spk_max_mean = 0.0f64;
    for ((r, u), s) in raw.iter().zip(&utt).zip(&spk) {
        let (m, sd) = voiced_moments(r, u);
        utt_dev = utt_dev.max(m.abs()).max((sd - 1.0).abs());
        utt_max_mean = utt_max_mean.max(m.abs());
        spk_max_mean = spk_max_mean.max(voiced_moments(r, s).0.abs());
    }
    let utt_ok = utt_dev <= UTTNORM_TOLERANCE;
    let discriminative = spk_max_mean > SPKNORM_WITNESS;
    let mut detail = format!("max |mean| utt {utt_max_mean:.3e}, spk {spk_max_mean:.4}; utt deviation {utt_dev:.3e}");
    if !discriminative {
        detail.push_str("; not discriminative");
    }
    Ok(CheckResult::new(
        "uttnorm_ablation",
        utt_ok && discriminative,
        spk_max_mean,
        SPKNORM_WITNESS,
        raw.len(),
        detail,
    ))
}

/// Runs every check that applies to a checkpoint and its (raw) corpus.
pub fn verify_all(ckpt: &Checkpoint, raw: &[AlignedUtterance], seed: u64, n_probes: usize) -> Result<VerificationReport> {
    let mut report = VerificationReport::default();
    let (normalized, _) = normalize_corpus(raw, ckpt.norm_mode)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked: Vec<AlignedUtterance> = normalized.clone();
    picked.shuffle(&mut rng);
    picked.truncate(20);
    report.push(check_style_isolation(&ckpt.model, &picked, Build::Standard)?);
    let texts: Vec<PhonemeSequence> = picked.iter().map(|u| u.phonemes.clone()).collect();
    report.push(check_speaker_isolation(&ckpt.model, &texts, 0, ckpt.step > 0)?);
    let tiny = ModelConfig::tiny(ckpt.model.config.phoneme_vocab_size.min(8), 2, 2);
    let g = gradcheck_fd(&tiny, seed, n_probes, GradFixture::None)?;
    report.push(g.check);
    report.push(g.style_check);
    let has = |s: &str| ckpt.styles.iter().any(|x| x == s);
    if has("rising") && has("falling") && has("flat") && ckpt.speakers.len() == ckpt.styles.len() {
        let t = transfer_experiment(ckpt, &texts)?;
        report.push(t.cross);
        report.push(t.own);
        report.push(t.flat);
    } else {
        report.push(CheckResult::skipped("transfer_cross", "corpus lacks rising/falling/flat styles"));
    }
    report.push(uttnorm_ablation(raw)?);
    Ok(report)
}

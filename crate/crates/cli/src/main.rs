use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use msms::features::write_cache;
use msms::normalize::{normalize_corpus, NormMode};
use msms::synth::{export_artifacts, griffin_lim, synthesize, transition_sweep, SynthesisRequest};
use msms::trainer::{generate_synthetic_corpus, load_checkpoint, resume, train, Corpus, CorpusSpec, TrainConfig};
use msms::verify::verify_all;

#[derive(Parser, Debug)]
#[command(name = "msms", version, about = "Multi-speaker multi-style acoustic model toolkit")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON training configuration (`{"model": {...}, "schedule": {...}}`).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct Voice {
    /// Whitespace-separated phoneme symbols.
    #[arg(long)]
    text_phonemes: String,
    #[arg(long)]
    speaker: String,
    #[arg(long)]
    style: String,
    #[arg(long)]
    source_style: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model on a manifest, or resume from --checkpoint.
    Train {
        #[arg(long, default_value = "utt")]
        norm_mode: NormMode,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Synthesize one utterance and export its artifacts.
    Synth {
        #[command(flatten)]
        voice: Voice,
        #[arg(long, default_value_t = 1.0)]
        style_weight: f64,
        /// Skip Griffin-Lim and the WAV file.
        #[arg(long)]
        no_audio: bool,
    },
    /// Synthesize a style transition over a list of weights.
    Sweep {
        #[command(flatten)]
        voice: Voice,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        weights: Vec<f64>,
        #[arg(long)]
        no_audio: bool,
    },
    /// Extract and cache features for every manifest entry.
    Features {
        #[arg(long, default_value = "utt")]
        norm_mode: NormMode,
    },
    /// Run the verification checks against a checkpoint and its corpus.
    Verify {
        #[arg(long, default_value_t = 50)]
        probes: usize,
    },
    /// Generate a synthetic multi-speaker corpus.
    GenCorpus {
        #[arg(long, default_value_t = 3)]
        speakers: usize,
        #[arg(long, default_value_t = 3)]
        contours: usize,
        #[arg(long, default_value_t = 8)]
        per_speaker: usize,
    },
}

fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, String> {
    v.as_deref().ok_or_else(|| format!("{flag} is required"))
}

fn request(voice: Voice, weight: f64, seed: u64) -> SynthesisRequest {
    SynthesisRequest {
        phonemes: voice.text_phonemes,
        speaker: voice.speaker,
        style: voice.style,
        source_style: voice.source_style,
        style_weight: weight,
        seed,
    }
}

fn run(cli: Cli) -> Result<bool, String> {
    let c = cli.common;
    let seed = c.seed.unwrap_or(0);
    let err = |e: msms::Error| e.to_string();
    match cli.command {
        Command::Train {
            norm_mode,
            steps,
            batch_size,
        } => {
            let manifest = required(&c.manifest, "--manifest")?;
            let out = required(&c.out, "--out")?;
            let print = |r: &msms::trainer::LossRow| {
                if r.step % 50 == 0 || r.step == 1 {
                    println!("{}", r.to_csv());
                }
            };
            let outcome = match &c.checkpoint {
                Some(path) => {
                    let ckpt = load_checkpoint(path).map_err(err)?;
                    let total = steps.unwrap_or(ckpt.schedule.total_steps);
                    resume(ckpt, manifest, total, out, print).map_err(err)?
                }
                None => {
                    let mut config = match &c.config {
                        Some(p) => TrainConfig::load(p).map_err(err)?,
                        None => TrainConfig::default(),
                    };
                    if let Some(s) = steps {
                        config.schedule.total_steps = s;
                    }
                    if let Some(b) = batch_size {
                        config.schedule.batch_size = b;
                    }
                    if let Some(s) = c.seed {
                        config.schedule.seed = s;
                    }
                    train(manifest, &config, norm_mode, out, print).map_err(err)?
                }
            };
            println!("checkpoint {}", outcome.checkpoint.display());
            println!("loss log {}", outcome.loss_log.display());
        }
        Command::Synth {
            voice,
            style_weight,
            no_audio,
        } => {
            let ckpt = load_checkpoint(required(&c.checkpoint, "--checkpoint")?).map_err(err)?;
            let out = required(&c.out, "--out")?;
            let syn = synthesize(&request(voice, style_weight, seed), &ckpt).map_err(err)?;
            let audio = if no_audio {
                None
            } else {
                Some(griffin_lim(&syn.mel, msms::synth::GRIFFIN_LIM_ITERATIONS, seed).map_err(err)?.wave)
            };
            let paths = export_artifacts(&syn, audio.as_ref(), out, "synth").map_err(err)?;
            println!("{} frames", syn.prosody.frame_count);
            for p in [&paths.pitch, &paths.energy, &paths.durations, &paths.mel].into_iter().chain(paths.wav.as_ref()) {
                println!("{}", p.display());
            }
        }
        Command::Sweep {
            voice,
            weights,
            no_audio,
        } => {
            let ckpt = load_checkpoint(required(&c.checkpoint, "--checkpoint")?).map_err(err)?;
            let out = required(&c.out, "--out")?;
            let items = transition_sweep(&request(voice, 1.0, seed), &weights, &ckpt, Some(out), !no_audio).map_err(err)?;
            println!("{} syntheses, index {}", items.len(), out.join("sweep.csv").display());
        }
        Command::Features { norm_mode } => {
            let manifest = required(&c.manifest, "--manifest")?;
            let out = required(&c.out, "--out")?;
            let corpus = Corpus::load(manifest, None).map_err(err)?;
            fs::create_dir_all(out).map_err(|e| e.to_string())?;
            for u in &corpus.utterances {
                write_cache(&out.join(format!("{}.feat", u.id)), u).map_err(err)?;
            }
            let (_, stats) = normalize_corpus(&corpus.utterances, norm_mode).map_err(err)?;
            let rows: String = stats.iter().map(|(id, s)| s.to_row(id) + "\n").collect();
            fs::write(out.join("stats.tsv"), rows).map_err(|e| e.to_string())?;
            println!("{} utterances cached in {}", corpus.utterances.len(), out.display());
        }
        Command::Verify { probes } => {
            let ckpt = load_checkpoint(required(&c.checkpoint, "--checkpoint")?).map_err(err)?;
            let corpus = Corpus::load(required(&c.manifest, "--manifest")?, None).map_err(err)?;
            let report = verify_all(&ckpt, &corpus.utterances, seed, probes).map_err(err)?;
            print!("{}", report.to_text());
            if let Some(out) = &c.out {
                fs::create_dir_all(out).map_err(|e| e.to_string())?;
                fs::write(out.join("verify.csv"), report.to_rows()).map_err(|e| e.to_string())?;
            }
            return Ok(report.passed());
        }
        Command::GenCorpus {
            speakers,
            contours,
            per_speaker,
        } => {
            let out = required(&c.out, "--out")?;
            let spec = CorpusSpec::new(speakers, contours, per_speaker, seed);
            let manifest = generate_synthetic_corpus(&spec, out).map_err(err)?;
            println!("{}", manifest.display());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

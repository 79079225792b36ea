use std::fs;

use msms::features::read_wav;
use msms::model::ModelConfig;
use msms::normalize::NormMode;
use msms::synth::{export_artifacts, griffin_lim, parse_trajectory_csv, synthesize, SynthesisRequest};
use msms::trainer::{generate_synthetic_corpus, load_checkpoint, train, CorpusSpec, TrainConfig, TrainingSchedule};

#[test]
fn corpus_to_audio() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = generate_synthetic_corpus(&CorpusSpec::new(2, 2, 2, 9), &dir.path().join("corpus")).unwrap();

    let config = TrainConfig {
        model: Some(ModelConfig {
            n_mel: 80,
            ..ModelConfig::tiny(1, 1, 1)
        }),
        schedule: TrainingSchedule {
            warmup_steps: 20,
            total_steps: 6,
            batch_size: 2,
            checkpoint_every: 3,
            ..TrainingSchedule::default()
        },
    };
    let run = dir.path().join("run");
    let mut seen = 0;
    let outcome = train(&manifest, &config, NormMode::Utt, &run, |_| seen += 1).unwrap();
    assert_eq!(seen, 6);
    assert_eq!(outcome.rows.len(), 6);
    assert!(outcome.rows.iter().all(|r| r.loss.total.is_finite()));
    assert!(run.join("step-3.ckpt").exists());

    let ckpt = load_checkpoint(&outcome.checkpoint).unwrap();
    assert_eq!(ckpt.step, 6);
    assert_eq!(ckpt.speakers, ["spk0", "spk1"]);
    assert_eq!(ckpt.styles, ["rising", "falling"]);

    let text = fs::read_to_string(&manifest).unwrap().lines().next().unwrap().split('\t').nth(3).unwrap().to_string();
    let syn = synthesize(&SynthesisRequest::new(&text, "spk1", "rising"), &ckpt).unwrap();
    let frames = syn.prosody.frame_count;
    assert_eq!(syn.mel.rows(), frames);
    assert_eq!(syn.prosody.durations.iter().sum::<u32>() as usize, frames);

    let audio = griffin_lim(&syn.mel, 8, 0).unwrap();
    let paths = export_artifacts(&syn, Some(&audio.wave), &dir.path().join("out"), "utt").unwrap();
    let pitch = parse_trajectory_csv(&fs::read_to_string(&paths.pitch).unwrap()).unwrap();
    assert_eq!(pitch.len(), frames);
    for (a, b) in pitch.iter().zip(&syn.prosody.pitch_hat) {
        assert!((a - b).abs() <= 1e-7 * b.abs().max(1e-300));
    }
    let (samples, rate) = read_wav(paths.wav.as_ref().unwrap()).unwrap();
    assert_eq!(rate, 16000);
    assert!(!samples.is_empty());
    let pgm = fs::read(&paths.mel).unwrap();
    assert!(pgm.starts_with(format!("P5\n{frames} 80\n255\n").as_bytes()));
}

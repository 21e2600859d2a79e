use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use modspec::corpus::write_wav;
use modspec::predictor::{export_encoder, init_params, load_params, PredictorConfig, TrainHyper, TrainState};
use modspec::synth::{SpeechLike, SynthConfig};

const TOY: &str = "[model]\nmodel_dim = 32\nlayer_count = 2\nhead_count = 4\nffn_dim = 64\nmax_frames = 400\n\
                   [train]\nlearning_rate = 0.001\nlog_every = 0\n[augment]\napply_probability = 0.0\n";

fn modspec(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_modspec"))
        .args(args)
        .env("MODSPEC_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    /// `count` synthetic utterances of `seconds` each, scanned into a manifest,
    /// plus a toy model configuration.
    fn new(count: u64, seconds: f64) -> Self {
        let dir = tempfile::tempdir().unwrap();
        let synth = SpeechLike::new(SynthConfig::default());
        let wavs = dir.path().join("wavs");
        std::fs::create_dir_all(wavs.join("nested")).unwrap();
        for i in 0..count {
            let sub = if i % 2 == 0 { "" } else { "nested/" };
            write_wav(&wavs.join(format!("{sub}utt{i}.wav")), &synth.utterance(seconds, 500 + i)).unwrap();
        }
        std::fs::write(dir.path().join("toy.toml"), TOY).unwrap();
        let f = Fixture { dir };
        let o = modspec(&["scan", s(&wavs), "--out", s(&f.manifest())]);
        assert!(o.status.success(), "{}", stderr(&o));
        f
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn manifest(&self) -> PathBuf {
        self.path("corpus.jsonl")
    }

    fn toy(&self) -> PathBuf {
        self.path("toy.toml")
    }

    fn wav(&self, i: u64) -> PathBuf {
        let sub = if i % 2 == 0 { "" } else { "nested/" };
        self.path(&format!("wavs/{sub}utt{i}.wav"))
    }
}

#[test]
fn scan_lists_every_wav_sorted() {
    let f = Fixture::new(3, 1.0);
    let text = std::fs::read_to_string(f.manifest()).unwrap();
    let ids: Vec<String> = text
        .lines()
        .map(|l| l.split("\"id\":\"").nth(1).unwrap().split('"').next().unwrap().to_string())
        .collect();
    assert_eq!(ids, vec!["nested/utt1", "utt0", "utt2"]);
}

#[test]
fn extract_writes_masked_and_clean() {
    let f = Fixture::new(1, 3.0);
    let out = f.path("feats");
    let o = modspec(&["extract", s(&f.wav(0)), "--mask", "2:8", "--seed", "7", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let masked = std::fs::read(out.join("utt0.masked.fdlp")).unwrap();
    let clean = std::fs::read(out.join("utt0.clean.fdlp")).unwrap();
    assert_ne!(masked, clean);
    let line = stdout(&o);
    assert!(line.starts_with("utt0 windows=3 masked_window="), "{line}");

    let again = modspec(&["extract", s(&f.wav(0)), "--mask", "2:8", "--seed", "7", "--out", s(&f.path("f2"))]);
    assert_eq!(stdout(&again), line);
    assert_eq!(std::fs::read(f.path("f2/utt0.masked.fdlp")).unwrap(), masked);
}

#[test]
fn extract_without_mask_is_identity() {
    let f = Fixture::new(1, 2.0);
    let out = f.path("feats");
    let o = modspec(&["extract", s(&f.wav(0)), "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("masked_window=none"));
    assert_eq!(
        std::fs::read(out.join("utt0.masked.fdlp")).unwrap(),
        std::fs::read(out.join("utt0.clean.fdlp")).unwrap()
    );
}

#[test]
fn extract_manifest_handles_nested_ids() {
    let f = Fixture::new(2, 2.0);
    let out = f.path("feats");
    let o = modspec(&["extract", s(&f.manifest()), "--mask", "2:8", "--out", s(&out)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("nested/utt1.clean.fdlp").exists());
    assert!(out.join("utt0.masked.fdlp").exists());
}

#[test]
fn bad_mask_is_usage_error() {
    let f = Fixture::new(1, 2.0);
    let o = modspec(&["extract", s(&f.wav(0)), "--mask", "8:2", "--out", s(&f.path("x"))]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(modspec(&[]).status.code(), Some(1));
    assert_eq!(modspec(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(modspec(&["train"]).status.code(), Some(1));
    assert_eq!(modspec(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_probe_export_round_trip() {
    let f = Fixture::new(10, 2.0);
    let ckpt = f.path("model.modp");
    let o = modspec(&[
        "train",
        s(&f.manifest()),
        "--config",
        s(&f.toy()),
        "--steps",
        "200",
        "--out",
        s(&ckpt),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let metrics = std::fs::read_to_string(f.path("model.metrics.csv")).unwrap();
    let mut lines = metrics.lines();
    assert_eq!(lines.next(), Some("step,loss,lr"));
    assert_eq!(lines.count(), 200);

    let encoder = f.path("encoder.modp");
    let o = modspec(&["export", s(&ckpt), "--out", s(&encoder)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let params = load_params(&encoder, None).unwrap();
    assert_eq!(params, load_params(&ckpt, None).unwrap());

    let probe = f.path("probe");
    let o = modspec(&["probe", s(&encoder), s(&f.manifest()), "--utterances", "4", "--out", s(&probe)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let spectra = std::fs::read_to_string(probe.join("layer_spectra.csv")).unwrap();
    assert_eq!(spectra.lines().next(), Some("freq_hz,layer_1,layer_2"));
    let summary = std::fs::read_to_string(probe.join("layer_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    assert!(stdout(&o).contains("4 utterances"));

    // A configuration that disagrees with the checkpoint names the tensor.
    let o = modspec(&[
        "probe",
        s(&encoder),
        s(&f.manifest()),
        "--config",
        s(&f.toy()),
        "--set",
        "model.ffn_dim=48",
        "--out",
        s(&probe),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("layers.0.ffn.in.weight"), "{}", stderr(&o));
}

#[test]
fn zero_steps_gives_initialization() {
    let f = Fixture::new(2, 2.0);
    let ckpt = f.path("model.modp");
    let o = modspec(&[
        "train",
        s(&f.manifest()),
        "--config",
        s(&f.toy()),
        "--seed",
        "42",
        "--steps",
        "0",
        "--out",
        s(&ckpt),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let encoder = f.path("encoder.modp");
    assert!(modspec(&["export", s(&ckpt), "--out", s(&encoder)]).status.success());

    let config = PredictorConfig {
        model_dim: 32,
        layer_count: 2,
        head_count: 4,
        ffn_dim: 64,
        max_frames: 400,
        seed: 42,
        ..PredictorConfig::default()
    };
    assert_eq!(load_params(&encoder, None).unwrap(), init_params::<f32>(&config).unwrap());
    let reference = f.path("reference.modp");
    export_encoder(&TrainState::new(&config, &TrainHyper::default()).unwrap(), &reference).unwrap();
    assert_eq!(std::fs::read(&encoder).unwrap(), std::fs::read(&reference).unwrap());
}

#[test]
fn augmentation_without_noise_fails_fast() {
    let f = Fixture::new(2, 2.0);
    let o = modspec(&[
        "train",
        s(&f.manifest()),
        "--config",
        s(&f.toy()),
        "--set",
        "augment.apply_probability=0.8",
        "--out",
        s(&f.path("m.modp")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("noise"), "{}", stderr(&o));
    assert!(!f.path("m.modp").exists());
}

#[test]
fn augmented_training_with_noise_manifest() {
    let f = Fixture::new(2, 2.0);
    let noise = SpeechLike::new(SynthConfig::default()).noise(1.0, 3);
    write_wav(&f.path("noise.wav"), &noise).unwrap();
    std::fs::write(f.path("noise.txt"), "# noises\nnoise.wav\n").unwrap();
    let o = modspec(&[
        "train",
        s(&f.manifest()),
        "--config",
        s(&f.toy()),
        "--set",
        "augment.apply_probability=0.8",
        "--noise-manifest",
        s(&f.path("noise.txt")),
        "--steps",
        "5",
        "--out",
        s(&f.path("m.modp")),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn divergence_exits_two_with_snapshot() {
    let f = Fixture::new(2, 2.0);
    let ckpt = f.path("m.modp");
    let o = modspec(&[
        "train",
        s(&f.manifest()),
        "--config",
        s(&f.toy()),
        "--set",
        "train.learning_rate=1e30",
        "--set",
        "train.warmup_fraction=0.0",
        "--steps",
        "50",
        "--out",
        s(&ckpt),
    ]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("diverged"), "{}", stderr(&o));
    assert!(load_params(&ckpt, None).unwrap().is_finite());
}

#[test]
fn single_utterance_probe_of_untrained_model() {
    let f = Fixture::new(2, 2.0);
    let ckpt = f.path("m.modp");
    assert!(modspec(&[
        "train",
        s(&f.manifest()),
        "--config",
        s(&f.toy()),
        "--steps",
        "0",
        "--out",
        s(&ckpt)
    ])
    .status
    .success());
    let o = modspec(&["probe", s(&ckpt), s(&f.manifest()), "--utterances", "1", "--out", s(&f.path("p"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("1 utterances"));
}

#[test]
fn bad_thread_count_is_config_error() {
    let o = Command::new(env!("CARGO_BIN_EXE_modspec"))
        .args(["export", "missing.modp", "--out", "x.modp"])
        .env("MODSPEC_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("MODSPEC_THREADS"));
}

use modspec::augment::{AugmentPolicy, NoiseBank};
use modspec::corpus::{read_features, scan_corpus, write_features, write_wav, CorpusManifest};
use modspec::predictor::{
    export_encoder, load_params, load_train_state, masked_l1_loss, predict, save_train_state, train, train_from,
    PredictorConfig, SnapshotTarget, TrainCorpus, TrainHyper,
};
use modspec::probe::{collect_traces, emit_report, layer_modulation_spectra};
use modspec::synth::{SpeechLike, SynthConfig};
use modspec::{extract_features, ExtractMode, MaskSpec};

fn small() -> PredictorConfig {
    PredictorConfig {
        model_dim: 16,
        layer_count: 2,
        head_count: 2,
        ffn_dim: 32,
        max_frames: 400,
        seed: 5,
        ..PredictorConfig::default()
    }
}

#[test]
fn wav_corpus_to_probe_report() {
    let dir = tempfile::tempdir().unwrap();
    let synth = SpeechLike::new(SynthConfig::default());
    for i in 0..4 {
        let path = dir.path().join(format!("spk{}/u{i}.wav", i % 2));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_wav(&path, &synth.utterance(2.0 + i as f64 * 0.25, i)).unwrap();
    }
    let manifest = scan_corpus(dir.path(), "*.wav").unwrap();
    let list = dir.path().join("lists/train.jsonl");
    std::fs::create_dir_all(list.parent().unwrap()).unwrap();
    manifest.write_jsonl(&list).unwrap();
    let manifest = CorpusManifest::read_jsonl(&list).unwrap();
    assert_eq!(manifest.len(), 4);

    let corpus = TrainCorpus::from_manifest(&manifest).unwrap();
    let hyper = TrainHyper {
        steps: 30,
        learning_rate: 1e-3,
        log_every: 0,
        ..TrainHyper::default()
    };
    let outcome = train(
        &corpus,
        &small(),
        &AugmentPolicy::disabled(),
        &NoiseBank::new(),
        &hyper,
        &SnapshotTarget::default(),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(outcome.metrics.len(), 30);

    let encoder = dir.path().join("enc.modp");
    export_encoder(&outcome.state, &encoder).unwrap();
    let params = load_params(&encoder, Some(&small())).unwrap();

    let mut spectra = Vec::new();
    for (i, utt) in corpus.utterances.iter().enumerate() {
        let pair = extract_features(&utt.audio, Some(&MaskSpec::syllabic()), i as u64, ExtractMode::Training).unwrap();
        let path = dir.path().join(format!("feats/{i}.fdlp"));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        write_features(&path, &pair.masked).unwrap();
        let masked = read_features(&path).unwrap();
        assert_eq!(masked, pair.masked);
        let pred = predict(&params, masked.mean_normalized().frames.view()).unwrap();
        let target = pair.clean.mean_normalized();
        let mut scored = target.clone();
        scored.masked_frame_range = masked.masked_frame_range.clone();
        assert!(masked_l1_loss(&pred, &scored).unwrap().is_finite());
        spectra.push(pair.clean);
    }

    let traces = collect_traces(&params, &spectra).unwrap();
    let report = layer_modulation_spectra(&traces, 100.0).unwrap();
    assert_eq!(report.layer_count(), 2);
    let (a, b) = emit_report(&report, &dir.path().join("probe")).unwrap();
    assert!(a.exists() && b.exists());
}

#[test]
fn interrupted_training_resumes_from_snapshot() {
    let synth = SpeechLike::new(SynthConfig::default());
    let corpus = TrainCorpus {
        utterances: (0..3)
            .map(|i| modspec::predictor::Utterance {
                id: format!("u{i}"),
                audio: synth.utterance(2.0, 70 + i),
            })
            .collect(),
    };
    // No warmup, so the six-step run follows the same schedule as the full one.
    let hyper = |steps| TrainHyper {
        steps,
        learning_rate: 1e-3,
        warmup_fraction: 0.0,
        log_every: 0,
        ..TrainHyper::default()
    };
    let run = |steps| {
        train(
            &corpus,
            &small(),
            &AugmentPolicy::disabled(),
            &NoiseBank::new(),
            &hyper(steps),
            &SnapshotTarget::default(),
            &mut |_| {},
        )
        .unwrap()
    };
    let whole = run(12);
    let half = run(6);

    let dir = tempfile::tempdir().unwrap();
    let snap = dir.path().join("half.modp");
    save_train_state(&half.state, &snap).unwrap();
    let restored = load_train_state(&snap).unwrap();
    let rest = train_from(
        restored,
        &corpus,
        &AugmentPolicy::disabled(),
        &NoiseBank::new(),
        &hyper(12),
        &SnapshotTarget::default(),
        &mut |_| {},
    )
    .unwrap();
    assert_eq!(rest.state.params, whole.state.params);
    assert_eq!(rest.metrics, whole.metrics[6..].to_vec());
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use modspec::augment::NoiseBank;
use modspec::corpus::{read_wav, scan_corpus, write_features, CorpusManifest, ManifestEntry};
use modspec::predictor::{
    export_encoder, load_params, load_train_state, save_train_state, train_from, write_metrics, SnapshotTarget,
    TrainCorpus, TrainEvent, TrainState,
};
use modspec::probe::{collect_traces, emit_report, layer_modulation_spectra, pick_utterances};
use modspec::rng::{derive_seed, stream};
use modspec::{ExtractMode, FeatureConfig, FeatureExtractor, MaskSpec};
use rayon::prelude::*;

mod config;

#[derive(Debug, Parser)]
#[command(name = "modspec", version, about = "Self-supervised speech modulation learning")]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a JSON-lines manifest of the WAV files under a directory.
    Scan {
        root: PathBuf,
        /// Glob matched against paths relative to the root.
        #[arg(long, default_value = "**/*.wav")]
        pattern: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute masked and clean FDLP spectrograms.
    Extract {
        /// A WAV file or a JSON-lines manifest.
        input: PathBuf,
        /// Modulation band to drop, in Hz, as `lo:hi`.
        #[arg(long)]
        mask: Option<MaskSpec>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the modulation predictor.
    Train {
        manifest: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
        /// Newline-separated list of noise WAVs for augmentation.
        #[arg(long)]
        noise_manifest: Option<PathBuf>,
        #[arg(long)]
        steps: Option<u64>,
        /// Continue from a training snapshot.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Training snapshot to write.
        #[arg(long)]
        out: PathBuf,
        /// Metrics CSV; defaults to the snapshot path with `.metrics.csv`.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Measure the temporal modulation spectra of every layer's output.
    Probe {
        checkpoint: PathBuf,
        manifest: PathBuf,
        #[arg(long, default_value_t = 50)]
        utterances: usize,
        /// Check the checkpoint against this model configuration.
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write the encoder weights of a training snapshot.
    Export {
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a configuration key, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn given(&self) -> bool {
        self.config.is_some() || !self.overrides.is_empty() || self.seed.is_some()
    }

    fn load(&self) -> Result<config::RunConfig> {
        config::load(self.config.as_deref(), &self.overrides, self.seed)
    }
}

fn setup_threads() -> Result<()> {
    if let Ok(raw) = std::env::var("MODSPEC_THREADS") {
        let n: usize = raw
            .trim()
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .with_context(|| format!("MODSPEC_THREADS must be a positive integer, got `{raw}`"))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn read_manifest(path: &Path) -> Result<CorpusManifest> {
    CorpusManifest::read_jsonl(path).with_context(|| format!("loading manifest {}", path.display()))
}

/// A lone WAV becomes a one-entry manifest keyed by its file stem.
fn manifest_or_wav(path: &Path) -> Result<CorpusManifest> {
    let is_wav = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
    if !is_wav {
        return read_manifest(path);
    }
    let audio = read_wav(path)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "utterance".into());
    Ok(CorpusManifest {
        entries: vec![ManifestEntry {
            id,
            path: path.file_name().expect("file name").to_string_lossy().into_owned(),
            duration_s: audio.duration_s(),
        }],
        corpus_root: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    })
}

fn cmd_scan(root: &Path, pattern: &str, out: &Path) -> Result<()> {
    let manifest = scan_corpus(root, pattern)?;
    manifest.write_jsonl(out)?;
    let total: f64 = manifest.entries.iter().map(|e| e.duration_s).sum();
    println!("{} utterances, {:.1} s, manifest {}", manifest.len(), total, out.display());
    Ok(())
}

fn cmd_extract(input: &Path, mask: Option<&MaskSpec>, seed: u64, out: &Path) -> Result<()> {
    let manifest = manifest_or_wav(input)?;
    let extractor = FeatureExtractor::new(FeatureConfig::default())?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let results: Vec<Result<String>> = manifest
        .entries
        .par_iter()
        .enumerate()
        .map(|(i, entry)| {
            let audio = read_wav(&manifest.resolve(entry))?;
            let utt_seed = derive_seed(seed, stream::UTTERANCE, i as u64);
            let pair = extractor.extract(&audio, mask, utt_seed, ExtractMode::Analysis)?;
            let masked_path = out.join(format!("{}.masked.fdlp", entry.id));
            if let Some(parent) = masked_path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_features(&masked_path, &pair.masked)?;
            write_features(&out.join(format!("{}.clean.fdlp", entry.id)), &pair.clean)?;
            let masked = pair
                .masked_window
                .map_or_else(|| "none".to_string(), |w| w.to_string());
            Ok(format!(
                "{} windows={} masked_window={} frames={}",
                entry.id,
                pair.window_count,
                masked,
                pair.clean.frame_count()
            ))
        })
        .collect();
    let mut failures = Vec::new();
    for (entry, r) in manifest.entries.iter().zip(results) {
        match r {
            Ok(line) => println!("{line}"),
            Err(e) => {
                eprintln!("{}: {e:#}", entry.id);
                failures.push(e);
            }
        }
    }
    if let Some(first) = failures.into_iter().next() {
        return Err(first.context("one or more utterances failed"));
    }
    Ok(())
}

struct TrainArgs<'a> {
    manifest: &'a Path,
    config: &'a ConfigArgs,
    noise_manifest: Option<&'a Path>,
    steps: Option<u64>,
    resume: Option<&'a Path>,
    out: &'a Path,
    metrics: Option<&'a Path>,
}

fn cmd_train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.config.load()?;
    if let Some(steps) = a.steps {
        cfg.train.steps = steps;
    }
    let (bank, noise_ids) = match a.noise_manifest {
        Some(path) => NoiseBank::load_manifest(path).with_context(|| format!("loading noise {}", path.display()))?,
        None => (NoiseBank::new(), Vec::new()),
    };
    let policy = cfg.augment.policy(noise_ids);
    policy.validate().context("augmentation needs --noise-manifest or augment.apply_probability = 0")?;

    let manifest = read_manifest(a.manifest)?;
    let corpus = TrainCorpus::from_manifest(&manifest)?;
    if corpus.is_empty() {
        bail!(modspec::Error::Config(format!("no usable utterances in {}", a.manifest.display())));
    }
    let state = match a.resume {
        Some(path) => {
            let state = load_train_state(path)?;
            if state.params.config != cfg.model {
                warn!("resuming with the snapshot's model configuration");
            }
            state
        }
        None => TrainState::new(&cfg.model, &cfg.train)?,
    };
    let snapshots = SnapshotTarget(Some(a.out.to_path_buf()));
    let outcome = train_from(state, &corpus, &policy, &bank, &cfg.train, &snapshots, &mut |e| {
        if let TrainEvent::Snapshot(p) = e {
            info!("snapshot written to {}", p.display());
        }
    })?;
    save_train_state(&outcome.state, a.out)?;
    let metrics_path = a
        .metrics
        .map(Path::to_path_buf)
        .unwrap_or_else(|| a.out.with_extension("metrics.csv"));
    write_metrics(&outcome.metrics, &metrics_path)?;
    let last = outcome.metrics.last().map_or(f64::NAN, |m| m.loss);
    println!(
        "trained to step {} on {} utterances, last loss {:.5}, snapshot {}, metrics {}",
        outcome.state.step(),
        corpus.len(),
        last,
        a.out.display(),
        metrics_path.display()
    );
    Ok(())
}

fn cmd_probe(checkpoint: &Path, manifest: &Path, count: usize, config: &ConfigArgs, out: &Path) -> Result<()> {
    if count == 0 {
        bail!(modspec::Error::Config("--utterances must be at least 1".into()));
    }
    let expected = if config.given() { Some(config.load()?.model) } else { None };
    let params = load_params(checkpoint, expected.as_ref())?;
    let manifest = read_manifest(manifest)?;
    if manifest.is_empty() {
        bail!(modspec::Error::Config("probe manifest is empty".into()));
    }
    let seed = config.seed.unwrap_or(0);
    let picked = pick_utterances(manifest.len(), count, seed);
    let extractor = FeatureExtractor::new(FeatureConfig::default())?;
    let max_frames = params.config.max_frames;
    let spectrograms = picked
        .par_iter()
        .map(|&i| {
            let entry = &manifest.entries[i];
            let audio = read_wav(&manifest.resolve(entry))?;
            let spec = extractor.extract(&audio, None, 0, ExtractMode::Analysis)?.clean;
            if spec.frame_count() > max_frames {
                warn!("{}: keeping the first {max_frames} of {} frames", entry.id, spec.frame_count());
                return Ok(spec.truncated(max_frames));
            }
            Ok(spec)
        })
        .collect::<Result<Vec<_>>>()?;
    let traces = collect_traces(&params, &spectrograms)?;
    let report = layer_modulation_spectra(&traces, modspec::dsp::FRAME_RATE_HZ as f64)?;
    let (spectra, summary) = emit_report(&report, out)?;
    println!("layer band_ratio_2_8 peak_hz");
    for (i, (r, p)) in report.band_ratio_2_8.iter().zip(&report.peak_hz).enumerate() {
        println!("{:>5} {r:>14.4} {p:>7.3}", i + 1);
    }
    println!(
        "{} utterances; spectra {}, summary {}",
        report.utterance_count,
        spectra.display(),
        summary.display()
    );
    Ok(())
}

fn cmd_export(checkpoint: &Path, out: &Path) -> Result<()> {
    let state = load_train_state(checkpoint)?;
    export_encoder(&state, out)?;
    println!(
        "exported {} parameters from step {} to {}",
        state.params.parameter_count(),
        state.step(),
        out.display()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    setup_threads()?;
    match &cli.command {
        Command::Scan { root, pattern, out } => cmd_scan(root, pattern, out),
        Command::Extract { input, mask, seed, out } => cmd_extract(input, mask.as_ref(), *seed, out),
        Command::Train {
            manifest,
            config,
            noise_manifest,
            steps,
            resume,
            out,
            metrics,
        } => cmd_train(TrainArgs {
            manifest,
            config,
            noise_manifest: noise_manifest.as_deref(),
            steps: *steps,
            resume: resume.as_deref(),
            out,
            metrics: metrics.as_deref(),
        }),
        Command::Probe {
            checkpoint,
            manifest,
            utterances,
            config,
            out,
        } => cmd_probe(checkpoint, manifest, *utterances, config, out),
        Command::Export { checkpoint, out } => cmd_export(checkpoint, out),
    }
}

/// 2 for numerical failure or divergence, 1 for everything else.
fn exit_code(err: &anyhow::Error) -> u8 {
    let numerical = err
        .chain()
        .filter_map(|e| e.downcast_ref::<modspec::Error>())
        .any(modspec::Error::is_numerical);
    if numerical {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

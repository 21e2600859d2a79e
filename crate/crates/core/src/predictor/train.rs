use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{maybe_augment, AugmentPolicy, NoiseBank};
use crate::corpus::{read_wav, CorpusManifest};
use crate::dsp::{
    AudioBuffer, ExtractMode, FeatureConfig, FeatureExtractor, MaskSpec, UtteranceModulations, WINDOW_SAMPLES,
};
use crate::error::{Error, Result};
use crate::predictor::{
    init_params, loss_and_gradients, save_train_state, Adam, AttentionMode, LearningRateSchedule, LossScope,
    PredictorConfig, PredictorParams,
};
use crate::rng::{derive_seed, derived_rng, stream};

#[derive(Debug, Clone)]
pub struct Utterance {
    pub id: String,
    pub audio: AudioBuffer,
}

/// Training utterances held in memory, in a fixed order.
#[derive(Debug, Clone, Default)]
pub struct TrainCorpus {
    pub utterances: Vec<Utterance>,
}

impl TrainCorpus {
    /// Loads every manifest entry, dropping utterances shorter than one
    /// analysis window with a warning.
    pub fn from_manifest(manifest: &CorpusManifest) -> Result<Self> {
        let loaded: Vec<Result<Utterance>> = manifest
            .entries
            .par_iter()
            .map(|e| {
                Ok(Utterance {
                    id: e.id.clone(),
                    audio: read_wav(&manifest.resolve(e))?,
                })
            })
            .collect();
        let mut utterances = Vec::with_capacity(loaded.len());
        for u in loaded {
            let u = u?;
            if u.audio.len() < WINDOW_SAMPLES {
                warn!("skipping `{}`: {} samples is shorter than one window", u.id, u.audio.len());
                continue;
            }
            utterances.push(u);
        }
        Ok(Self { utterances })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn total_seconds(&self) -> f64 {
        self.utterances.iter().map(|u| u.audio.duration_s()).sum()
    }
}

/// Optimization settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainHyper {
    pub steps: u64,
    pub learning_rate: f64,
    /// Share of `steps` spent on linear warmup.
    pub warmup_fraction: f64,
    /// Gradient norm cap; none disables clipping.
    pub clip_norm: Option<f64>,
    pub loss_scope: LossScope,
    pub mask_lo_hz: f64,
    pub mask_hi_hz: f64,
    /// Compute the target from the clean signal when the input is augmented.
    pub clean_target: bool,
    /// Snapshot interval in steps; 0 disables periodic snapshots.
    pub checkpoint_every: u64,
    pub log_every: u64,
    pub features: FeatureConfigToml,
}

impl Default for TrainHyper {
    fn default() -> Self {
        Self {
            steps: 10_000,
            learning_rate: 1e-4,
            warmup_fraction: 0.1,
            clip_norm: None,
            loss_scope: LossScope::MaskedFrames,
            mask_lo_hz: 2.0,
            mask_hi_hz: 8.0,
            clean_target: true,
            checkpoint_every: 0,
            log_every: 100,
            features: FeatureConfigToml::default(),
        }
    }
}

/// Serializable mirror of [`FeatureConfig`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfigToml {
    pub lp_order: usize,
    pub remove_window_modulation: bool,
}

impl Default for FeatureConfigToml {
    fn default() -> Self {
        let d = FeatureConfig::default();
        Self {
            lp_order: d.lp_order,
            remove_window_modulation: d.remove_window_modulation,
        }
    }
}

impl From<&FeatureConfigToml> for FeatureConfig {
    fn from(t: &FeatureConfigToml) -> Self {
        FeatureConfig {
            lp_order: t.lp_order,
            remove_window_modulation: t.remove_window_modulation,
            ..FeatureConfig::default()
        }
    }
}

impl TrainHyper {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::Config(format!("learning rate {} is invalid", self.learning_rate)));
        }
        if !(0.0..=1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config(format!("warmup fraction {} outside [0, 1]", self.warmup_fraction)));
        }
        if let Some(c) = self.clip_norm {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::Config(format!("clip norm {c} must be positive")));
            }
        }
        self.mask()?;
        Ok(())
    }

    pub fn mask(&self) -> Result<MaskSpec> {
        MaskSpec::new(self.mask_lo_hz, self.mask_hi_hz)
    }
}

/// Everything needed to resume training. The random stream of step `n` is
/// derived from `params.config.seed` and `n`, so the step counter is the whole
/// generator state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: PredictorParams,
    pub optimizer: Adam<f32>,
    pub schedule: LearningRateSchedule,
}

impl TrainState {
    pub fn new(config: &PredictorConfig, hyper: &TrainHyper) -> Result<Self> {
        let params = init_params::<f32>(config)?;
        let optimizer = Adam::new(&params);
        Ok(Self {
            params,
            optimizer,
            schedule: LearningRateSchedule::with_warmup_fraction(hyper.learning_rate, hyper.steps, hyper.warmup_fraction),
        })
    }

    pub fn step(&self) -> u64 {
        self.optimizer.step
    }

    pub fn master_seed(&self) -> u64 {
        self.params.config.seed
    }
}

/// One line of the metrics log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub enum TrainEvent<'a> {
    Step(&'a MetricsRow),
    Snapshot(&'a Path),
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: TrainState,
    pub metrics: Vec<MetricsRow>,
}

/// Where periodic and divergence snapshots go.
#[derive(Debug, Clone, Default)]
pub struct SnapshotTarget(pub Option<PathBuf>);

struct StepData {
    input: ndarray::Array2<f32>,
    target: ndarray::Array2<f32>,
    range: std::ops::Range<usize>,
}

struct Trainer<'a> {
    corpus: &'a TrainCorpus,
    clean: Vec<UtteranceModulations>,
    extractor: FeatureExtractor,
    policy: &'a AugmentPolicy,
    noise: &'a NoiseBank,
    hyper: &'a TrainHyper,
    mask: MaskSpec,
}

impl Trainer<'_> {
    fn step_data(&self, master: u64, step: u64) -> Result<StepData> {
        let index = derived_rng(master, stream::UTTERANCE_PICK, step).random_range(0..self.corpus.len());
        let seed = derive_seed(master, stream::STEP, step);
        let clean = &self.clean[index];
        let augmented = maybe_augment(&self.corpus.utterances[index].audio, self.policy, self.noise, seed)?;
        let (masked, target) = if augmented.applied {
            let noisy = self.extractor.modulation_spectra(&augmented.audio, ExtractMode::Training)?;
            let noisy_pair = self.extractor.pair_from_spectra(&noisy, Some(&self.mask), seed)?;
            let target = if self.hyper.clean_target {
                self.extractor.pair_from_spectra(clean, Some(&self.mask), seed)?.clean
            } else {
                noisy_pair.clean.clone()
            };
            (noisy_pair.masked, target)
        } else {
            let pair = self.extractor.pair_from_spectra(clean, Some(&self.mask), seed)?;
            (pair.masked, pair.clean)
        };
        let range = match self.hyper.loss_scope {
            LossScope::MaskedFrames => masked
                .masked_frame_range
                .clone()
                .ok_or_else(|| Error::Contract("masked spectrogram lacks a frame range".into()))?,
            LossScope::Utterance => 0..masked.frame_count(),
        };
        Ok(StepData {
            input: masked.mean_normalized().frames,
            target: target.mean_normalized().frames,
            range,
        })
    }
}

/// Trains from freshly initialized parameters for `hyper.steps` steps.
pub fn train(
    corpus: &TrainCorpus,
    config: &PredictorConfig,
    policy: &AugmentPolicy,
    noise: &NoiseBank,
    hyper: &TrainHyper,
    snapshots: &SnapshotTarget,
    observe: &mut dyn FnMut(TrainEvent),
) -> Result<TrainOutcome> {
    hyper.validate()?;
    let state = TrainState::new(config, hyper)?;
    train_from(state, corpus, policy, noise, hyper, snapshots, observe)
}

/// Continues training `state` until its step counter reaches `hyper.steps`.
///
/// Each step picks an utterance, maybe mixes in noise, drops the masked band
/// from one randomly chosen window, and takes one optimizer step on the L1
/// loss. The trajectory depends only on the master seed and corpus order.
pub fn train_from(
    mut state: TrainState,
    corpus: &TrainCorpus,
    policy: &AugmentPolicy,
    noise: &NoiseBank,
    hyper: &TrainHyper,
    snapshots: &SnapshotTarget,
    observe: &mut dyn FnMut(TrainEvent),
) -> Result<TrainOutcome> {
    hyper.validate()?;
    policy.validate()?;
    if corpus.is_empty() {
        return Err(Error::Config("training corpus is empty".into()));
    }
    let extractor = FeatureExtractor::new((&hyper.features).into())?;
    let clean = corpus
        .utterances
        .par_iter()
        .map(|u| extractor.modulation_spectra(&u.audio, ExtractMode::Training))
        .collect::<Result<Vec<_>>>()?;
    let trainer = Trainer {
        corpus,
        clean,
        extractor,
        policy,
        noise,
        hyper,
        mask: hyper.mask()?,
    };
    info!(
        "training on {} utterances ({:.1} s) from step {} to {}",
        corpus.len(),
        corpus.total_seconds(),
        state.step(),
        hyper.steps
    );

    let master = state.master_seed();
    let mut metrics = Vec::with_capacity(hyper.steps.saturating_sub(state.step()) as usize);
    while state.step() < hyper.steps {
        let step = state.step();
        let data = trainer.step_data(master, step)?;
        let result = loss_and_gradients(
            &state.params,
            data.input.view(),
            data.target.view(),
            data.range,
            AttentionMode::Full,
        );
        let (loss, mut grads) = match result {
            Ok(ok) => ok,
            Err(e) if e.is_numerical() => return diverge(&state, step, f64::NAN, snapshots),
            Err(e) => return Err(e),
        };
        if let Some(cap) = hyper.clip_norm {
            let norm = grads.norm();
            if norm > cap {
                let scale = (cap / norm) as f32;
                for (_, mut t) in grads.params.trainable_mut() {
                    t.mapv_inplace(|v| v * scale);
                }
            }
        }
        let lr = state.schedule.rate(step);
        let before = state.clone();
        state.optimizer.update(&mut state.params, &grads, lr);
        if !state.params.is_finite() {
            return diverge(&before, step, loss as f64, snapshots);
        }
        let row = MetricsRow {
            step,
            loss: loss as f64,
            lr,
        };
        observe(TrainEvent::Step(&row));
        if hyper.log_every > 0 && (step + 1) % hyper.log_every == 0 {
            info!("step {} loss {:.5} lr {:.2e}", step + 1, row.loss, lr);
        }
        metrics.push(row);
        if let Some(path) = &snapshots.0 {
            if hyper.checkpoint_every > 0 && state.step() % hyper.checkpoint_every == 0 {
                save_train_state(&state, path)?;
                observe(TrainEvent::Snapshot(path));
            }
        }
    }
    Ok(TrainOutcome { state, metrics })
}

fn diverge(last_good: &TrainState, step: u64, loss: f64, snapshots: &SnapshotTarget) -> Result<TrainOutcome> {
    if let Some(path) = &snapshots.0 {
        save_train_state(last_good, path)?;
        warn!("diverged at step {step}; last good state written to {}", path.display());
    }
    Err(Error::Diverged { step, loss })
}

/// Writes the metrics log as CSV with header `step,loss,lr`.
pub fn write_metrics(rows: &[MetricsRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(format!("writing {}", path.display()), e))
}

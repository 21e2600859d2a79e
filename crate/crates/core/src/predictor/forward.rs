use ndarray::{s, Array1, Array2, ArrayView2};

use crate::dsp::FdlpSpectrogram;
use crate::error::{Error, Result};
use crate::predictor::params::{LayerNorm, Linear};
use crate::predictor::{Params, PredictorParams, Scalar};

pub(crate) const LN_EPS: f64 = 1e-5;

/// How queries mix over frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionMode {
    /// Softmax attention over every frame of the utterance.
    #[default]
    Full,
    /// Each frame attends only to itself; an ablation that removes all
    /// temporal mixing.
    Identity,
}

/// Per-layer outputs of the encoder stack, `frames x model_dim` each.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub layers: Vec<Array2<f32>>,
}

impl ActivationTrace {
    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    pub fn frame_count(&self) -> usize {
        self.layers.first().map_or(0, |l| l.nrows())
    }
}

#[derive(Debug, Clone)]
pub(crate) struct NormCache<T> {
    pub normalized: Array2<T>,
    pub rstd: Array1<T>,
}

#[derive(Debug, Clone)]
pub(crate) struct LayerCache<T> {
    pub norm1: NormCache<T>,
    pub n1: Array2<T>,
    pub q: Array2<T>,
    pub k: Array2<T>,
    pub v: Array2<T>,
    /// Attention weights per head, `frames x frames`; empty for identity mode.
    pub probs: Vec<Array2<T>>,
    pub context: Array2<T>,
    pub norm2: NormCache<T>,
    pub n2: Array2<T>,
    pub hidden_pre: Array2<T>,
    pub hidden: Array2<T>,
    pub output: Array2<T>,
}

/// Everything the backward pass needs, plus the prediction itself.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    pub(crate) mode: AttentionMode,
    pub(crate) input: Array2<T>,
    pub(crate) layers: Vec<LayerCache<T>>,
    pub(crate) final_norm: NormCache<T>,
    pub(crate) final_out: Array2<T>,
    pub prediction: Array2<T>,
}

impl<T: Scalar> ForwardCache<T> {
    pub fn trace(&self) -> ActivationTrace {
        ActivationTrace {
            layers: self.layers.iter().map(|l| l.output.mapv(|v| v.as_f64() as f32)).collect(),
        }
    }

    /// Attention weights of one layer, one matrix per head.
    pub fn attention(&self, layer: usize) -> &[Array2<T>] {
        &self.layers[layer].probs
    }

    pub fn mode(&self) -> AttentionMode {
        self.mode
    }
}

pub(crate) fn linear<T: Scalar>(x: &ArrayView2<T>, l: &Linear<T>) -> Array2<T> {
    x.dot(&l.weight) + &l.bias
}

pub(crate) fn layer_norm<T: Scalar>(x: &Array2<T>, ln: &LayerNorm<T>) -> (Array2<T>, NormCache<T>) {
    let d = T::of(x.ncols() as f64);
    let eps = T::of(LN_EPS);
    let mut normalized = x.clone();
    let mut rstd = Array1::zeros(x.nrows());
    for (mut row, r) in normalized.rows_mut().into_iter().zip(rstd.iter_mut()) {
        let mean = row.sum() / d;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|&v| v * v).sum::<T>() / d;
        *r = T::one() / (var + eps).sqrt();
        let scale = *r;
        row.mapv_inplace(|v| v * scale);
    }
    let out = &normalized * &ln.scale + &ln.shift;
    (out, NormCache { normalized, rstd })
}

pub(crate) fn softmax_rows<T: Scalar>(scores: &mut Array2<T>) {
    for mut row in scores.rows_mut() {
        let max = row.fold(T::neg_infinity(), |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn attention<T: Scalar>(
    q: &Array2<T>,
    k: &Array2<T>,
    v: &Array2<T>,
    heads: usize,
    mode: AttentionMode,
) -> (Array2<T>, Vec<Array2<T>>) {
    if mode == AttentionMode::Identity {
        return (v.clone(), Vec::new());
    }
    let dh = q.ncols() / heads;
    let scale = T::of(1.0 / (dh as f64).sqrt());
    let mut context = Array2::zeros(v.raw_dim());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        softmax_rows(&mut p);
        context.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    (context, probs)
}

fn check_input<T: Scalar>(params: &Params<T>, input: &ArrayView2<T>) -> Result<()> {
    let cfg = &params.config;
    if input.ncols() != cfg.input_dim {
        return Err(Error::Contract(format!(
            "input has {} bands, model expects {}",
            input.ncols(),
            cfg.input_dim
        )));
    }
    if input.nrows() == 0 {
        return Err(Error::EmptyInput("spectrogram has no frames".into()));
    }
    if input.nrows() > cfg.max_frames {
        return Err(Error::Length {
            frames: input.nrows(),
            max_frames: cfg.max_frames,
        });
    }
    if input.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite value in predictor input".into()));
    }
    Ok(())
}

/// Forward pass that keeps every intermediate for backpropagation.
pub fn forward_cached<T: Scalar>(
    params: &Params<T>,
    input: ArrayView2<T>,
    mode: AttentionMode,
) -> Result<ForwardCache<T>> {
    check_input(params, &input)?;
    let cfg = &params.config;
    let frames = input.nrows();
    let embed_scale = T::of((cfg.model_dim as f64).sqrt());
    let mut h = linear(&input, &params.input) * embed_scale + &params.pos_table.slice(s![..frames, ..]);

    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (n1, norm1) = layer_norm(&h, &layer.norm1);
        let q = linear(&n1.view(), &layer.query);
        let k = linear(&n1.view(), &layer.key);
        let v = linear(&n1.view(), &layer.value);
        let (context, probs) = attention(&q, &k, &v, cfg.head_count, mode);
        let mid = &h + &linear(&context.view(), &layer.attn_out);
        let (n2, norm2) = layer_norm(&mid, &layer.norm2);
        let hidden_pre = linear(&n2.view(), &layer.ffn_in);
        let hidden = hidden_pre.mapv(|z| z.max(T::zero()));
        let output = &mid + &linear(&hidden.view(), &layer.ffn_out);
        layers.push(LayerCache {
            norm1,
            n1,
            q,
            k,
            v,
            probs,
            context,
            norm2,
            n2,
            hidden_pre,
            hidden,
            output: output.clone(),
        });
        h = output;
    }
    let (final_out, final_norm) = layer_norm(&h, &params.final_norm);
    let prediction = linear(&final_out.view(), &params.output);
    Ok(ForwardCache {
        mode,
        input: input.to_owned(),
        layers,
        final_norm,
        final_out,
        prediction,
    })
}

/// Prediction only, in the parameter precision.
pub fn predict<T: Scalar>(params: &Params<T>, input: ArrayView2<T>) -> Result<Array2<T>> {
    Ok(forward_cached(params, input, AttentionMode::Full)?.prediction)
}

/// Predicts a `frames x 20` spectrogram; with `capture` set, also returns every
/// layer's output.
pub fn forward(
    params: &PredictorParams,
    spectrogram: &FdlpSpectrogram,
    capture: bool,
) -> Result<(Array2<f32>, Option<ActivationTrace>)> {
    let cache = forward_cached(params, spectrogram.frames.view(), AttentionMode::Full)?;
    let trace = capture.then(|| cache.trace());
    Ok((cache.prediction, trace))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictor::{init_params, PredictorConfig};
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};

    fn small() -> PredictorConfig {
        PredictorConfig {
            model_dim: 16,
            layer_count: 2,
            head_count: 4,
            ffn_dim: 32,
            max_frames: 64,
            ..PredictorConfig::toy()
        }
    }

    fn random_input(frames: usize, seed: u64) -> Array2<f32> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_simple_fn((frames, 20), || rng.random_range(-1.0..1.0))
    }

    #[test]
    fn prediction_matches_input_shape() {
        let p = init_params::<f32>(&small()).unwrap();
        for frames in [1, 7, 14, 64] {
            let spec = FdlpSpectrogram::new(random_input(frames, 3), None);
            let (pred, trace) = forward(&p, &spec, true).unwrap();
            assert_eq!(pred.dim(), (frames, 20));
            let trace = trace.unwrap();
            assert_eq!(trace.layer_count(), 2);
            assert_eq!(trace.frame_count(), frames);
            assert_eq!(trace.layers[0].ncols(), 16);
        }
    }

    #[test]
    fn zero_input_and_output_projection() {
        let mut p = init_params::<f64>(&small()).unwrap();
        p.output.weight.fill(0.0);
        let pred = predict(&p, Array2::zeros((5, 20)).view()).unwrap();
        assert_eq!(pred.dim(), (5, 20));
        assert!(pred.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = init_params::<f32>(&small()).unwrap();
        let input = random_input(30, 1) * 5.0;
        let cache = forward_cached(&p, input.view(), AttentionMode::Full).unwrap();
        for layer in 0..2 {
            for probs in cache.attention(layer) {
                for row in probs.rows() {
                    assert!((row.sum() - 1.0).abs() < 1e-6);
                    assert!(row.iter().all(|&w| w >= 0.0));
                }
            }
        }
    }

    #[test]
    fn rejects_bad_input() {
        let p = init_params::<f32>(&small()).unwrap();
        let long = FdlpSpectrogram::new(random_input(65, 0), None);
        assert!(matches!(forward(&p, &long, false), Err(Error::Length { frames: 65, .. })));
        let mut bad = random_input(4, 0);
        bad[[2, 3]] = f32::NAN;
        let bad = FdlpSpectrogram::new(bad, None);
        assert!(matches!(forward(&p, &bad, false), Err(Error::Numerical(_))));
    }

    #[test]
    fn identity_attention_keeps_frames_independent() {
        let p = init_params::<f64>(&small()).unwrap();
        let a = random_input(10, 5).mapv(f64::from);
        let mut b = a.clone();
        b.row_mut(7).fill(3.0);
        let pa = forward_cached(&p, a.view(), AttentionMode::Identity).unwrap().prediction;
        let pb = forward_cached(&p, b.view(), AttentionMode::Identity).unwrap().prediction;
        for t in 0..10 {
            let same = pa.row(t) == pb.row(t);
            assert_eq!(same, t != 7, "frame {t}");
        }
    }

    #[test]
    fn layer_norm_output_is_standardized() {
        let x = random_input(6, 2).mapv(f64::from);
        let (y, _) = layer_norm(&x, &LayerNorm::<f64>::identity(20));
        for row in y.rows() {
            let mean = row.mean().unwrap();
            let var = row.mapv(|v| (v - mean).powi(2)).mean().unwrap();
            assert!(mean.abs() < 1e-12);
            assert!((var - 1.0).abs() < 1e-3);
        }
    }
}

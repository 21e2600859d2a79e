use std::ops::Range;

use ndarray::{s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::predictor::forward::NormCache;
use crate::predictor::params::{LayerNorm, Linear};
use crate::predictor::{forward_cached, l1_loss_and_grad, AttentionMode, ForwardCache, Params, Scalar};

/// Gradients of a scalar loss with respect to every trained tensor and to the
/// input spectrogram. `params.pos_table` is empty.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub params: Params<T>,
    pub input: Array2<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn check_finite(&self) -> Result<()> {
        for (name, tensor) in self.params.trainable() {
            if tensor.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("non-finite gradient in `{name}`")));
            }
        }
        Ok(())
    }

    /// Euclidean norm over all parameter gradients.
    pub fn norm(&self) -> f64 {
        self.params
            .trainable()
            .iter()
            .flat_map(|(_, t)| t.iter().map(|v| v.as_f64().powi(2)).collect::<Vec<_>>())
            .sum::<f64>()
            .sqrt()
    }
}

fn linear_backward<T: Scalar>(x: &Array2<T>, l: &Linear<T>, dy: &Array2<T>, grad: &mut Linear<T>) -> Array2<T> {
    grad.weight += &x.t().dot(dy);
    grad.bias += &dy.sum_axis(Axis(0));
    dy.dot(&l.weight.t())
}

fn layer_norm_backward<T: Scalar>(
    cache: &NormCache<T>,
    ln: &LayerNorm<T>,
    dy: &Array2<T>,
    grad: &mut LayerNorm<T>,
) -> Array2<T> {
    let xhat = &cache.normalized;
    grad.scale += &(dy * xhat).sum_axis(Axis(0));
    grad.shift += &dy.sum_axis(Axis(0));
    let dxhat = dy * &ln.scale;
    let d = T::of(xhat.ncols() as f64);
    let mut dx = Array2::zeros(dy.raw_dim());
    for (((mut out, g), x), &r) in dx
        .rows_mut()
        .into_iter()
        .zip(dxhat.rows())
        .zip(xhat.rows())
        .zip(cache.rstd.iter())
    {
        let mean_g = g.sum() / d;
        let mean_gx = g.iter().zip(x.iter()).map(|(&a, &b)| a * b).sum::<T>() / d;
        out.assign(&g.mapv(|v| v - mean_g));
        out.scaled_add(-mean_gx, &x);
        out.mapv_inplace(|v| v * r);
    }
    dx
}

/// Backpropagates `d_prediction` through a cached forward pass.
pub fn backward<T: Scalar>(params: &Params<T>, cache: &ForwardCache<T>, d_prediction: ArrayView2<T>) -> Gradients<T> {
    let cfg = &params.config;
    let mut grads = params.zeros_like();
    let dy = d_prediction.to_owned();

    let d_final = linear_backward(&cache.final_out, &params.output, &dy, &mut grads.output);
    let mut dh = layer_norm_backward(&cache.final_norm, &params.final_norm, &d_final, &mut grads.final_norm);

    for ((layer, lc), g) in params
        .layers
        .iter()
        .zip(&cache.layers)
        .zip(grads.layers.iter_mut())
        .rev()
    {
        // Feed-forward block.
        let d_hidden = linear_backward(&lc.hidden, &layer.ffn_out, &dh, &mut g.ffn_out);
        let d_pre = &d_hidden * &lc.hidden_pre.mapv(|z| if z > T::zero() { T::one() } else { T::zero() });
        let d_n2 = linear_backward(&lc.n2, &layer.ffn_in, &d_pre, &mut g.ffn_in);
        let d_mid = &dh + &layer_norm_backward(&lc.norm2, &layer.norm2, &d_n2, &mut g.norm2);

        // Attention block.
        let d_context = linear_backward(&lc.context, &layer.attn_out, &d_mid, &mut g.attn_out);
        let (dq, dk, dv) = match cache.mode {
            AttentionMode::Identity => (Array2::zeros(lc.q.raw_dim()), Array2::zeros(lc.k.raw_dim()), d_context),
            AttentionMode::Full => {
                let heads = cfg.head_count;
                let dh_ = cfg.head_dim();
                let scale = T::of(1.0 / (dh_ as f64).sqrt());
                let mut dq = Array2::zeros(lc.q.raw_dim());
                let mut dk = Array2::zeros(lc.k.raw_dim());
                let mut dv = Array2::zeros(lc.v.raw_dim());
                for (h, p) in lc.probs.iter().enumerate().take(heads) {
                    let cols = s![.., h * dh_..(h + 1) * dh_];
                    let dc = d_context.slice(cols);
                    let dp = dc.dot(&lc.v.slice(cols).t());
                    dv.slice_mut(cols).assign(&p.t().dot(&dc));
                    let row_dot = (&dp * p).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ds = p * &(&dp - &row_dot) * scale;
                    dq.slice_mut(cols).assign(&ds.dot(&lc.k.slice(cols)));
                    dk.slice_mut(cols).assign(&ds.t().dot(&lc.q.slice(cols)));
                }
                (dq, dk, dv)
            }
        };
        let mut d_n1 = linear_backward(&lc.n1, &layer.query, &dq, &mut g.query);
        d_n1 += &linear_backward(&lc.n1, &layer.key, &dk, &mut g.key);
        d_n1 += &linear_backward(&lc.n1, &layer.value, &dv, &mut g.value);
        dh = d_mid + layer_norm_backward(&lc.norm1, &layer.norm1, &d_n1, &mut g.norm1);
    }

    let embed_scale = T::of((cfg.model_dim as f64).sqrt());
    let d_embed = dh * embed_scale;
    let input = linear_backward(&cache.input, &params.input, &d_embed, &mut grads.input);
    Gradients { params: grads, input }
}

/// L1 loss over `range` and its gradients.
pub fn loss_and_gradients<T: Scalar>(
    params: &Params<T>,
    input: ArrayView2<T>,
    target: ArrayView2<T>,
    range: Range<usize>,
    mode: AttentionMode,
) -> Result<(T, Gradients<T>)> {
    let cache = forward_cached(params, input, mode)?;
    let (loss, d_pred) = l1_loss_and_grad(cache.prediction.view(), target, range)?;
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("loss is {loss}")));
    }
    let grads = backward(params, &cache, d_pred.view());
    grads.check_finite()?;
    Ok((loss, grads))
}

/// Compares analytic gradients of the L1 loss against central finite
/// differences, element by element. Returns the largest relative error per
/// trained tensor, where the error is `|a - n| / max(|a|, |n|, floor)`.
pub fn gradient_check(
    params: &Params<f64>,
    input: ArrayView2<f64>,
    target: ArrayView2<f64>,
    range: Range<usize>,
    step: f64,
    floor: f64,
) -> Result<Vec<(String, f64)>> {
    let (_, grads) = loss_and_gradients(params, input, target, range.clone(), AttentionMode::Full)?;
    let loss_at = |p: &Params<f64>| -> Result<f64> {
        let pred = forward_cached(p, input, AttentionMode::Full)?.prediction;
        Ok(l1_loss_and_grad(pred.view(), target, range.clone())?.0)
    };
    let analytic = grads.params.trainable();
    let mut report = Vec::with_capacity(analytic.len());
    let mut probe = params.clone();
    for (index, (name, grad)) in analytic.iter().enumerate() {
        let mut worst = 0.0f64;
        for (element, &a) in grad.iter().enumerate() {
            let original = *probe.trainable_mut()[index].1.iter_mut().nth(element).expect("element");
            let set = |p: &mut Params<f64>, v: f64| {
                *p.trainable_mut()[index].1.iter_mut().nth(element).expect("element") = v;
            };
            set(&mut probe, original + step);
            let up = loss_at(&probe)?;
            set(&mut probe, original - step);
            let down = loss_at(&probe)?;
            set(&mut probe, original);
            let numeric = (up - down) / (2.0 * step);
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(floor);
            worst = worst.max(err);
        }
        report.push((name.clone(), worst));
    }
    Ok(report)
}

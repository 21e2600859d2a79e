use std::ops::Range;

use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dsp::FdlpSpectrogram;
use crate::error::{Error, Result};
use crate::predictor::Scalar;

/// Which frames contribute to the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Only the frames of the window whose modulations were dropped.
    #[default]
    MaskedFrames,
    /// Every frame of the utterance.
    Utterance,
}

/// Mean absolute error over `range` (all columns) and its gradient with respect
/// to `prediction`. The subgradient at a tie is 0.
pub fn l1_loss_and_grad<T: Scalar>(
    prediction: ArrayView2<T>,
    target: ArrayView2<T>,
    range: Range<usize>,
) -> Result<(T, Array2<T>)> {
    if prediction.dim() != target.dim() {
        return Err(Error::Contract(format!(
            "prediction shape {:?} differs from target shape {:?}",
            prediction.dim(),
            target.dim()
        )));
    }
    if range.start >= range.end || range.end > prediction.nrows() {
        return Err(Error::Contract(format!(
            "loss range {range:?} invalid for {} frames",
            prediction.nrows()
        )));
    }
    let count = T::of(((range.end - range.start) * prediction.ncols()) as f64);
    let diff = &prediction.slice(s![range.clone(), ..]) - &target.slice(s![range.clone(), ..]);
    let loss = diff.iter().map(|d| d.abs()).sum::<T>() / count;
    let mut grad = Array2::zeros(prediction.raw_dim());
    grad.slice_mut(s![range, ..]).assign(&diff.mapv(|d| {
        if d > T::zero() {
            T::one() / count
        } else if d < T::zero() {
            -T::one() / count
        } else {
            T::zero()
        }
    }));
    Ok((loss, grad))
}

/// Mean absolute difference between `prediction` and `target` over the
/// target's masked frames, all bands.
pub fn masked_l1_loss(prediction: &Array2<f32>, target: &FdlpSpectrogram) -> Result<f32> {
    let range = target
        .masked_frame_range
        .clone()
        .ok_or_else(|| Error::Contract("target spectrogram has no masked frame range".into()))?;
    let (loss, _) = l1_loss_and_grad(prediction.view(), target.frames.view(), range)?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn target(frames: usize) -> FdlpSpectrogram {
        let values = Array2::from_shape_fn((frames, 20), |(t, b)| (t as f32 * 0.3 + b as f32).sin());
        FdlpSpectrogram::new(values, Some(10..25))
    }

    #[test]
    fn identity_gives_zero() {
        let t = target(40);
        assert_eq!(masked_l1_loss(&t.frames, &t).unwrap(), 0.0);
        let (_, grad) = l1_loss_and_grad(t.frames.view(), t.frames.view(), 10..25).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn constant_offset_gives_offset() {
        let t = target(40);
        let loss = masked_l1_loss(&(&t.frames + 1.0), &t).unwrap();
        assert!((loss - 1.0).abs() < 1e-6);
    }

    #[test]
    fn missing_range_is_contract_error() {
        let t = FdlpSpectrogram::new(Array2::zeros((5, 20)), None);
        assert!(matches!(masked_l1_loss(&t.frames, &t), Err(Error::Contract(_))));
    }

    #[test]
    fn gradient_outside_range_is_zero() {
        let t = target(40);
        let (_, grad) = l1_loss_and_grad((&t.frames + 0.5).view(), t.frames.view(), 10..25).unwrap();
        for (i, row) in grad.rows().into_iter().enumerate() {
            let inside = (10..25).contains(&i);
            assert_eq!(row.iter().all(|&g| g == 0.0), !inside);
        }
    }

    proptest! {
        #[test]
        fn outside_perturbation_is_ignored(noise in proptest::collection::vec(-100f32..100.0, 40 * 20)) {
            let t = target(40);
            let pred = &t.frames + 0.25;
            let base = masked_l1_loss(&pred, &t).unwrap();
            let mut perturbed = pred.clone();
            for ((i, j), v) in perturbed.indexed_iter_mut() {
                if !(10..25).contains(&i) {
                    *v += noise[i * 20 + j];
                }
            }
            prop_assert_eq!(masked_l1_loss(&perturbed, &t).unwrap(), base);
        }
    }
}

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::dsp::{BandSpectrum, ENERGY_FLOOR};
use crate::error::{Error, Result};

/// All-pole model `gain^2 / |A(e^{jw})|^2` with `A(z) = 1 + sum_i a[i] z^-i`.
///
/// For an FDLP fit the model is evaluated in the time direction: phase
/// `w = 2 pi t / T` gives the power envelope at time `t` of a window of
/// length `T`.
#[derive(Debug, Clone, PartialEq)]
pub struct LpModel {
    pub order: usize,
    /// `a[1..=order]`; `lp_coeffs[i]` holds `a[i + 1]`.
    pub lp_coeffs: Vec<Complex64>,
    /// Amplitude gain; the model's power scale is `gain^2`.
    pub gain: f64,
}

impl LpModel {
    pub fn new(lp_coeffs: Vec<Complex64>, gain: f64) -> Result<Self> {
        if !(gain > 0.0 && gain.is_finite()) {
            return Err(Error::Contract(format!("gain must be positive, got {gain}")));
        }
        if lp_coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numerical("non-finite prediction coefficient".into()));
        }
        Ok(Self {
            order: lp_coeffs.len(),
            lp_coeffs,
            gain,
        })
    }

    /// Order-zero model with a constant envelope of `gain^2`.
    pub fn flat(gain: f64) -> Self {
        Self {
            order: 0,
            lp_coeffs: Vec::new(),
            gain,
        }
    }

    /// `A(e^{jw})`.
    pub fn inverse_filter_at(&self, phase: f64) -> Complex64 {
        self.lp_coeffs
            .iter()
            .enumerate()
            .fold(Complex64::new(1.0, 0.0), |acc, (i, a)| {
                acc + a * Complex64::from_polar(1.0, -phase * (i + 1) as f64)
            })
    }

    pub fn power_envelope_at(&self, phase: f64) -> f64 {
        self.gain * self.gain / self.inverse_filter_at(phase).norm_sqr()
    }

    /// Power envelope sampled at `count` uniform instants over one period.
    pub fn power_envelope(&self, count: usize) -> Vec<f64> {
        (0..count)
            .map(|i| self.power_envelope_at(2.0 * PI * i as f64 / count as f64))
            .collect()
    }
}

/// Output of the Levinson-Durbin recursion.
#[derive(Debug, Clone)]
pub struct Levinson {
    /// `a[1..=p]` of the final order actually reached.
    pub coeffs: Vec<Complex64>,
    pub reflection: Vec<Complex64>,
    /// Prediction error power after each order, `errors[0] = r[0]`.
    pub errors: Vec<f64>,
}

/// Autocorrelation `r[m] = sum_k conj(x[k]) x[k - m]` for lags `0..=max_lag`.
///
/// Conjugating the spectral sequence before correlating orients the model so
/// that increasing phase corresponds to increasing time.
pub fn autocorrelation(seq: &[Complex64], max_lag: usize) -> Vec<Complex64> {
    (0..=max_lag)
        .map(|lag| {
            seq.iter()
                .skip(lag)
                .zip(seq)
                .map(|(x, x_lag)| x.conj() * x_lag)
                .sum()
        })
        .collect()
}

/// Solves the Hermitian Toeplitz normal equations given `r[0..=order]`.
///
/// Stops early if a reflection coefficient reaches unit magnitude, which only
/// happens when the autocorrelation is not positive definite to working
/// precision; the returned coefficients then belong to the last stable order.
pub fn levinson_durbin(r: &[Complex64], order: usize) -> Result<Levinson> {
    if r.len() <= order {
        return Err(Error::Contract(format!(
            "need {} autocorrelation lags, got {}",
            order + 1,
            r.len()
        )));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical("non-finite autocorrelation".into()));
    }
    let r0 = r[0].re;
    if r0 <= 0.0 {
        return Err(Error::Numerical(format!("autocorrelation r[0] = {r0} is not positive")));
    }

    let mut a: Vec<Complex64> = Vec::with_capacity(order);
    let mut reflection = Vec::with_capacity(order);
    let mut errors = Vec::with_capacity(order + 1);
    let mut err = r0;
    errors.push(err);

    for m in 1..=order {
        let acc = a
            .iter()
            .enumerate()
            .fold(r[m], |acc, (i, ai)| acc + ai * r[m - 1 - i]);
        let k = -acc / err;
        if !k.is_finite() || k.norm_sqr() >= 1.0 {
            log::debug!("levinson stopped at order {} (|k| = {})", m - 1, k.norm());
            break;
        }
        let prev = a.clone();
        for i in 0..m - 1 {
            a[i] = prev[i] + k * prev[m - 2 - i].conj();
        }
        a.push(k);
        reflection.push(k);
        err *= 1.0 - k.norm_sqr();
        errors.push(err);
    }
    Ok(Levinson {
        coeffs: a,
        reflection,
        errors,
    })
}

/// Fit result; `flat` marks a silent band replaced by a floor-level model.
#[derive(Debug, Clone, PartialEq)]
pub struct FdlpFit {
    pub model: LpModel,
    pub flat: bool,
}

/// Relative white-noise correction added to `r[0]` before the recursion.
const WHITE_NOISE_CORRECTION: f64 = 1e-9;

/// Complex FDLP: linear prediction across the band's spectral coefficients.
///
/// The all-pole model of the spectral sequence approximates, by time-frequency
/// duality, the squared Hilbert envelope of the band signal over the window.
/// Autocorrelations are scaled by `1 / fft_len^2` so the envelope is in units
/// of band-signal power.
pub fn fit_complex_fdlp(band: &BandSpectrum, order: usize) -> Result<FdlpFit> {
    if order == 0 {
        return Err(Error::Config("FDLP order must be at least 1".into()));
    }
    if order >= band.coeffs.len() {
        return Err(Error::Config(format!(
            "FDLP order {order} must be below band length {}",
            band.coeffs.len()
        )));
    }
    let scale = 1.0 / (band.fft_len as f64).powi(2);
    let mut r: Vec<Complex64> = autocorrelation(&band.coeffs, order)
        .into_iter()
        .map(|x| x * scale)
        .collect();
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numerical(format!(
            "non-finite autocorrelation in band {}",
            band.band
        )));
    }
    if r[0].re <= 0.0 {
        return Ok(FdlpFit {
            model: LpModel::flat(ENERGY_FLOOR.sqrt()),
            flat: true,
        });
    }
    r[0] *= 1.0 + WHITE_NOISE_CORRECTION;
    let lev = levinson_durbin(&r, order)?;
    let power = lev.errors.last().copied().unwrap_or(r[0].re).max(ENERGY_FLOOR);
    Ok(FdlpFit {
        model: LpModel::new(lev.coeffs, power.sqrt())?,
        flat: false,
    })
}

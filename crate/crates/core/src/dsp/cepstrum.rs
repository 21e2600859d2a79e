use num_complex::Complex64;

use crate::dsp::LpModel;

/// Modulation spectrum of an all-pole envelope via its complex cepstrum.
///
/// With `log(1 / A(z)) = sum_{n>=1} h[n] z^-n`, the coefficients follow the
/// recursion `h[n] = -a[n] - sum_{k=1}^{n-1} (k / n) h[k] a[n - k]`. The log
/// envelope is then `log gain^2 + 2 Re sum_n conj(h[n]) e^{jwn}`, so the
/// returned coefficients are `c[0] = log gain^2` and `c[m] = 2 conj(h[m])`,
/// giving `log envelope = Re sum_m c[m] e^{jwm}`.
pub fn lp_to_modulation_cepstrum(model: &LpModel, coeff_count: usize) -> Vec<Complex64> {
    let a = |n: usize| -> Complex64 {
        if n >= 1 && n <= model.order {
            model.lp_coeffs[n - 1]
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let mut h = vec![Complex64::new(0.0, 0.0); coeff_count.max(1)];
    for n in 1..coeff_count {
        let mut acc = -a(n);
        for k in n.saturating_sub(model.order).max(1)..n {
            acc -= h[k] * a(n - k) * (k as f64 / n as f64);
        }
        h[n] = acc;
    }
    let mut c: Vec<Complex64> = h.iter().map(|x| x.conj() * 2.0).collect();
    c[0] = Complex64::new((model.gain * model.gain).ln(), 0.0);
    c.truncate(coeff_count);
    c
}

//! Gamma and modified Bessel functions (DLMF conventions).
//!
//! `I_alpha` uses the ascending series below `asymptotic_switch` and the Hankel
//! expansion above it. `K_alpha` uses Temme's series for `x < 2` and Steed's
//! continued fraction otherwise, both at order `mu in [-1/2, 1/2)`, followed by
//! upward recurrence; integer orders need no special treatment.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

/// Largest argument with a finite `Gamma(x)`.
pub const GAMMA_MAX_ARG: f64 = 171.624_376_956_302_7;

/// Taylor coefficients of `1/Gamma(z) = sum_k c_k z^k`, `c_0 = 0`.
const RGAMMA_TAYLOR: [f64; 27] = [
    0.0,
    1.0,
    0.577_215_664_901_532_860_61,
    -0.655_878_071_520_253_881_08,
    -0.042_002_635_034_095_235_529,
    0.166_538_611_382_291_489_5,
    -0.042_197_734_555_544_336_748,
    -0.009_621_971_527_876_973_562_1,
    0.007_218_943_246_663_099_542_4,
    -0.001_165_167_591_859_065_112_1,
    -0.000_215_241_674_114_950_972_82,
    0.000_128_050_282_388_116_186_15,
    -0.000_020_134_854_780_788_238_656,
    -1.250_493_482_142_670_657_3e-6,
    1.133_027_231_981_695_882_4e-6,
    -2.056_338_416_977_607_103_5e-7,
    6.116_095_104_481_415_817_9e-9,
    5.002_007_644_469_222_930_1e-9,
    -1.181_274_570_487_020_144_6e-9,
    1.043_426_711_691_100_510_5e-10,
    7.782_263_439_905_071_254e-12,
    -3.696_805_618_642_205_708_2e-12,
    5.100_370_287_454_475_979e-13,
    -2.058_326_053_566_506_783_2e-14,
    -5.348_122_539_423_017_982_4e-15,
    1.226_778_628_238_260_790_2e-15,
    -1.181_259_301_697_458_769_5e-16,
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpecialFnConfig {
    pub series_tol: f64,
    pub max_terms: usize,
    pub asymptotic_switch: f64,
}

impl Default for SpecialFnConfig {
    fn default() -> Self {
        SpecialFnConfig { series_tol: 1e-17, max_terms: 1000, asymptotic_switch: 30.0 }
    }
}

impl SpecialFnConfig {
    pub fn new(series_tol: f64, max_terms: usize, asymptotic_switch: f64) -> Result<Self> {
        if !(series_tol > 0.0 && series_tol <= 1e-6) {
            return Err(Error::BadParams(format!("series_tol {series_tol} not in (0, 1e-6]")));
        }
        if max_terms < 50 {
            return Err(Error::BadParams(format!("max_terms {max_terms} < 50")));
        }
        if !(asymptotic_switch > 0.0) {
            return Err(Error::BadParams("asymptotic_switch must be positive".into()));
        }
        Ok(SpecialFnConfig { series_tol, max_terms, asymptotic_switch })
    }
}

fn lanczos_sum(z: f64) -> f64 {
    // z = x - 1
    let mut a = LANCZOS[0];
    for (i, &c) in LANCZOS.iter().enumerate().skip(1) {
        a += c / (z + i as f64);
    }
    a
}

pub fn gamma(x: f64) -> Result<f64> {
    if x.is_nan() {
        return Err(Error::Domain("gamma(NaN)".into()));
    }
    if x <= 0.0 && x == x.floor() {
        return Err(Error::Pole(x));
    }
    if x > GAMMA_MAX_ARG {
        return Err(Error::Overflow("gamma"));
    }
    if x == x.floor() && x <= 171.0 {
        let n = x as u32;
        return Ok((2..n).fold(1.0, |acc, k| acc * k as f64));
    }
    if x < 0.5 {
        let s = (PI * x).sin();
        return Ok(PI / (s * gamma(1.0 - x)?));
    }
    if x >= 2.0 {
        // Upward product from [1, 2): rounding errors add up far slower than the
        // error of exp and pow at large arguments.
        let f = 1.0 + x.fract();
        let mut acc = gamma(f)?;
        let mut t = f;
        while t < x - 0.5 {
            acc *= t;
            t += 1.0;
        }
        return Ok(acc);
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    // t^(z+1/2) split in two factors to stay finite up to GAMMA_MAX_ARG.
    let half = t.powf((z + 0.5) / 2.0);
    Ok((2.0 * PI).sqrt() * half * (-t).exp() * half * lanczos_sum(z))
}

/// `ln Gamma(x)` for `x > 0`.
pub fn ln_gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) {
        return Err(Error::Domain(format!("ln_gamma({x}) requires x > 0")));
    }
    if x < 0.5 {
        // Gamma(x) = Gamma(x + 1) / x keeps the Lanczos argument >= 1/2.
        return Ok(ln_gamma(x + 1.0)? - x.ln());
    }
    if x < 20.0 {
        return Ok(gamma(x)?.ln());
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    Ok(0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + lanczos_sum(z).ln())
}

/// `1/Gamma(1 + x)` by its Taylor series, for `|x| <= 1/2`.
fn rgamma1p(x: f64) -> f64 {
    // 1/Gamma(1+x) = (1/Gamma(x)) / x = sum_{k>=1} c_k x^{k-1}
    RGAMMA_TAYLOR.iter().skip(1).rev().fold(0.0, |acc, &c| acc * x + c)
}

/// Temme's auxiliary functions for `|mu| <= 1/2`:
/// `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    let mut gam1 = 0.0;
    let mut gam2 = 0.0;
    let mu2 = mu * mu;
    let mut p_even = 1.0; // mu^(k-2) for even k
    let mut p_odd = 1.0; // mu^(k-1) for odd k
    for k in 1..RGAMMA_TAYLOR.len() {
        if k % 2 == 0 {
            gam1 -= RGAMMA_TAYLOR[k] * p_even;
            p_even *= mu2;
        } else {
            gam2 += RGAMMA_TAYLOR[k] * p_odd;
            p_odd *= mu2;
        }
    }
    (gam1, gam2, rgamma1p(mu), rgamma1p(-mu))
}

fn check_i_args(alpha: f64, x: f64) -> Result<()> {
    if !(alpha > -1.0) || !alpha.is_finite() {
        return Err(Error::Domain(format!("bessel_i requires alpha > -1, got {alpha}")));
    }
    if !(x >= 0.0) || !x.is_finite() {
        return Err(Error::Domain(format!("bessel_i requires x >= 0, got {x}")));
    }
    Ok(())
}

/// Ascending series for `I_alpha(x)`, summed relative to its leading term and
/// returned as `(sum, ln(leading term))`.
fn bessel_i_series_parts(cfg: &SpecialFnConfig, alpha: f64, x: f64) -> Result<(f64, f64)> {
    let h2 = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for m in 0..cfg.max_terms {
        let mf = m as f64;
        term *= h2 / ((mf + 1.0) * (mf + 1.0 + alpha));
        sum += term;
        if term < cfg.series_tol * sum {
            let lead = alpha * (0.5 * x).ln() - ln_gamma(alpha + 1.0)?;
            return Ok((sum, lead));
        }
    }
    Err(Error::TruncationNotConverged { tail: term / sum, tol: cfg.series_tol, terms: cfg.max_terms })
}

/// `e^{-x} I_alpha(x)` from the Hankel expansion.
fn bessel_i_asymptotic_scaled(cfg: &SpecialFnConfig, alpha: f64, x: f64) -> f64 {
    let mu = 4.0 * alpha * alpha;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..cfg.max_terms {
        let kf = k as f64;
        let next = -term * (mu - (2.0 * kf - 1.0).powi(2)) / (kf * 8.0 * x);
        if next.abs() >= term.abs() && k > 1 {
            break;
        }
        term = next;
        sum += term;
        if term.abs() < cfg.series_tol * sum.abs() {
            break;
        }
    }
    sum / (2.0 * PI * x).sqrt()
}

fn use_asymptotic(cfg: &SpecialFnConfig, alpha: f64, x: f64) -> bool {
    x > cfg.asymptotic_switch && x > 2.0 * alpha * alpha + 10.0
}

pub fn bessel_i(alpha: f64, x: f64) -> Result<f64> {
    bessel_i_with(&SpecialFnConfig::default(), alpha, x)
}

/// Modified Bessel function of the first kind `I_alpha(x)`, `alpha > -1`, `x >= 0`.
pub fn bessel_i_with(cfg: &SpecialFnConfig, alpha: f64, x: f64) -> Result<f64> {
    check_i_args(alpha, x)?;
    if x == 0.0 {
        return if alpha == 0.0 {
            Ok(1.0)
        } else if alpha > 0.0 {
            Ok(0.0)
        } else {
            Err(Error::Overflow("bessel_i at x = 0 with alpha < 0"))
        };
    }
    let v = if use_asymptotic(cfg, alpha, x) {
        bessel_i_asymptotic_scaled(cfg, alpha, x) * x.exp()
    } else {
        let (s, lead) = bessel_i_series_parts(cfg, alpha, x)?;
        s * lead.exp()
    };
    if !v.is_finite() {
        return Err(Error::Overflow("bessel_i"));
    }
    Ok(v)
}

/// `e^{-x} I_alpha(x)`.
pub fn bessel_i_scaled(alpha: f64, x: f64) -> Result<f64> {
    let cfg = SpecialFnConfig::default();
    check_i_args(alpha, x)?;
    if x == 0.0 {
        return bessel_i_with(&cfg, alpha, x);
    }
    if use_asymptotic(&cfg, alpha, x) {
        return Ok(bessel_i_asymptotic_scaled(&cfg, alpha, x));
    }
    let (s, lead) = bessel_i_series_parts(&cfg, alpha, x)?;
    Ok(s * (lead - x).exp())
}

/// Entire function `sum_m t^m / (m! Gamma(m + alpha + 1))`, which equals
/// `(x/2)^{-alpha} I_alpha(x)` at `t = x^2/4` and continues it to complex `t`.
pub fn bessel_i_reduced(alpha: f64, t: Complex64) -> Result<Complex64> {
    if !(alpha > -1.0) {
        return Err(Error::Domain(format!("alpha must exceed -1, got {alpha}")));
    }
    let cfg = SpecialFnConfig::default();
    let mut term = Complex64::new((-ln_gamma(alpha + 1.0)?).exp(), 0.0);
    let mut sum = term;
    let mut abs_sum = term.norm();
    for m in 0..cfg.max_terms {
        let mf = m as f64;
        term *= t / ((mf + 1.0) * (mf + 1.0 + alpha));
        sum += term;
        abs_sum += term.norm();
        if mf > t.norm().sqrt() && term.norm() < cfg.series_tol * abs_sum {
            return Ok(sum);
        }
    }
    Err(Error::TruncationNotConverged { tail: term.norm() / abs_sum, tol: cfg.series_tol, terms: cfg.max_terms })
}

/// `(K_mu(x), K_{mu+1}(x))` scaled by `e^x`, for `|mu| <= 1/2`.
fn bessel_k_pair_scaled(mu: f64, x: f64) -> Result<(f64, f64)> {
    const EPS: f64 = 1e-17;
    const MAXIT: usize = 10_000;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;
    let mu2 = mu * mu;
    if x < 2.0 {
        // Temme's series.
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < 1e-15 { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < 1e-15 { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        let mut converged = false;
        for i in 1..=MAXIT {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::TruncationNotConverged { tail: f64::NAN, tol: EPS, terms: MAXIT });
        }
        let s = x.exp();
        Ok((sum * s, sum1 * xi2 * s))
    } else {
        // Steed's continued fraction CF2.
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut h = d;
        let mut delh = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        let mut converged = false;
        for i in 2..=MAXIT {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::TruncationNotConverged { tail: f64::NAN, tol: EPS, terms: MAXIT });
        }
        h *= a1;
        let kmu = (PI / (2.0 * x)).sqrt() / s;
        let k1 = kmu * (mu + x + 0.5 - h) * xi;
        Ok((kmu, k1))
    }
}

/// `e^x K_alpha(x)`; `K` is even in its order, so any real `alpha` is accepted.
pub fn bessel_k_scaled(alpha: f64, x: f64) -> Result<f64> {
    if !alpha.is_finite() || x.is_nan() || x < 0.0 {
        return Err(Error::Domain(format!("bessel_k requires x > 0, got alpha={alpha}, x={x}")));
    }
    if x == 0.0 {
        return Err(Error::SingularAtZero);
    }
    let nu = alpha.abs();
    let nl = (nu + 0.5).floor();
    let mu = nu - nl;
    let (mut kmu, mut k1) = bessel_k_pair_scaled(mu, x)?;
    let xi2 = 2.0 / x;
    for i in 1..=(nl as usize) {
        let next = (mu + i as f64) * xi2 * k1 + kmu;
        kmu = k1;
        k1 = next;
        if !kmu.is_finite() {
            return Err(Error::Overflow("bessel_k"));
        }
    }
    Ok(kmu)
}

/// Modified Bessel function of the second kind `K_alpha(x)`, `x > 0`.
pub fn bessel_k(alpha: f64, x: f64) -> Result<f64> {
    let v = bessel_k_scaled(alpha, x)? * (-x).exp();
    if !v.is_finite() {
        return Err(Error::Overflow("bessel_k"));
    }
    Ok(v)
}

//! Basis families: canonical monomials, Hermite, generalized Laguerre and the
//! two-index Hermite polynomials, all evaluated at quaternionic arguments.
//!
//! Every polynomial here has real coefficients in a single variable `q` (plus
//! `conj(q)` for the two-index family), so all powers that occur commute and the
//! value lies in the complex slice of `q`. This is what lets the real three-term
//! recurrences run verbatim on quaternions.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::{Complex, Complex64};
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::qlinalg::QMatrix;
use crate::quaternion::Quaternion;
use crate::special::ln_gamma;

/// Complex number in double-double precision.
pub type DdComplex = Complex<TwoFloat>;

/// Highest single index accepted by the one-index evaluators.
pub const MAX_INDEX: usize = 300;
/// Highest index accepted by the two-index Hermite evaluator.
pub const MAX_INDEX_TWO: usize = 100;

fn check_index(n: usize, max: usize) -> Result<()> {
    if n > max {
        Err(Error::IndexTooLarge { n, max })
    } else {
        Ok(())
    }
}

fn finite(q: Quaternion, what: &'static str) -> Result<Quaternion> {
    if q.is_finite() {
        Ok(q)
    } else {
        Err(Error::Overflow(what))
    }
}

/// Physicists' Hermite polynomial `H_n(q)` via `H_{n+1} = 2q H_n - 2n H_{n-1}`.
pub fn hermite(n: usize, q: Quaternion) -> Result<Quaternion> {
    check_index(n, MAX_INDEX)?;
    let mut prev = Quaternion::ONE;
    if n == 0 {
        return Ok(prev);
    }
    let mut cur = q * 2.0;
    for k in 1..n {
        let next = q * cur * 2.0 - prev * (2.0 * k as f64);
        prev = cur;
        cur = next;
    }
    finite(cur, "hermite")
}

/// Generalized Laguerre polynomial from its explicit sum
/// `sum_k Gamma(n+a+1) / (Gamma(k+a+1) Gamma(n-k+1) k!) (-q)^k`.
///
/// The sum alternates with large terms for big real arguments, so on the real
/// line it is evaluated in double-double arithmetic.
pub fn laguerre(alpha: f64, n: usize, q: Quaternion) -> Result<Quaternion> {
    check_alpha(alpha)?;
    check_index(n, MAX_INDEX)?;
    let coeffs = laguerre_coefficients(alpha, n);
    if q.is_real() {
        let x = TwoFloat::from(-q.x0);
        let mut acc = TwoFloat::from(0.0);
        for &c in coeffs.iter().rev() {
            acc = acc * x + c;
        }
        return finite(Quaternion::real(f64::from(acc)), "laguerre");
    }
    let mq = -q;
    let mut acc = Quaternion::ZERO;
    for &c in coeffs.iter().rev() {
        acc = acc * mq + Quaternion::real(f64::from(c));
    }
    finite(acc, "laguerre")
}

/// `c_k = Gamma(n+a+1) / (Gamma(k+a+1) (n-k)! k!)` via the ratio
/// `c_k / c_{k+1} = (k+1+a)(k+1) / (n-k)`, starting from `c_n = 1/n!`.
fn laguerre_coefficients(alpha: f64, n: usize) -> Vec<TwoFloat> {
    let mut fact = TwoFloat::from(1.0);
    for k in 2..=n {
        fact = fact * k as f64;
    }
    let mut c = vec![TwoFloat::from(0.0); n + 1];
    c[n] = TwoFloat::from(1.0) / fact;
    for k in (0..n).rev() {
        let kf = k as f64;
        c[k] = c[k + 1] * (TwoFloat::from(kf + 1.0) + alpha) * (kf + 1.0) / ((n - k) as f64);
    }
    c
}

/// Generalized Laguerre polynomial by
/// `(k+1) L_{k+1} = (2k+1+a-q) L_k - (k+a) L_{k-1}`.
pub fn laguerre_recurrence(alpha: f64, n: usize, q: Quaternion) -> Result<Quaternion> {
    check_alpha(alpha)?;
    check_index(n, MAX_INDEX)?;
    let mut prev = Quaternion::ONE;
    if n == 0 {
        return Ok(prev);
    }
    let mut cur = Quaternion::real(1.0 + alpha) - q;
    for k in 1..n {
        let kf = k as f64;
        let next = (Quaternion::real(2.0 * kf + 1.0 + alpha) - q) * cur - prev * (kf + alpha);
        prev = cur;
        cur = next / (kf + 1.0);
    }
    finite(cur, "laguerre")
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > -1.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!("Laguerre order alpha must exceed -1, got {alpha}")))
    }
}

/// Which closed formula is used for the two-index Hermite polynomials.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Hermite2Convention {
    /// `n! m! sum_j conj(q)^{n-j} q^{m-j} / ((n-j)! (m-j)!)`.
    AsDisplayed,
    /// `sum_j (-1)^j j! C(n,j) C(m,j) conj(q)^{n-j} q^{m-j}`, orthogonal for `e^{-|z|^2}/pi`.
    Signed,
}

/// Two-index Hermite polynomial `H_{n,m}(q, conj q)` in the as-displayed convention.
pub fn hermite2(n: usize, m: usize, q: Quaternion) -> Result<Quaternion> {
    hermite2_with(Hermite2Convention::AsDisplayed, n, m, q)
}

pub fn hermite2_with(conv: Hermite2Convention, n: usize, m: usize, q: Quaternion) -> Result<Quaternion> {
    let scale = 0.5 * (ln_gamma(n as f64 + 1.0)? + ln_gamma(m as f64 + 1.0)?);
    hermite2_scaled(conv, n, m, q, scale)
}

/// `H_{n,m}(q, conj q) / sqrt(n! m!)`.
pub fn hermite2_normalized(conv: Hermite2Convention, n: usize, m: usize, q: Quaternion) -> Result<Quaternion> {
    hermite2_scaled(conv, n, m, q, 0.0)
}

/// `H_{n,m} * exp(log_extra) / sqrt(n! m!)`; coefficients stay in log form until the end.
fn hermite2_scaled(conv: Hermite2Convention, n: usize, m: usize, q: Quaternion, log_extra: f64) -> Result<Quaternion> {
    check_index(n, MAX_INDEX_TWO)?;
    check_index(m, MAX_INDEX_TWO)?;
    let half = 0.5 * (ln_gamma(n as f64 + 1.0)? + ln_gamma(m as f64 + 1.0)?);
    let qb = q.conj();
    let mut acc = Quaternion::ZERO;
    for j in 0..=n.min(m) {
        let mut lc = half + log_extra - ln_gamma((n - j) as f64 + 1.0)? - ln_gamma((m - j) as f64 + 1.0)?;
        let mut sign = 1.0;
        if conv == Hermite2Convention::Signed {
            lc -= ln_gamma(j as f64 + 1.0)?;
            if j % 2 == 1 {
                sign = -1.0;
            }
        }
        // conjugate powers stay on the left of plain powers
        let term = qb.powi((n - j) as u32) * q.powi((m - j) as u32);
        acc += term * (sign * lc.exp());
    }
    finite(acc, "hermite2")
}

/// Which index of `H_{n,m}` is held fixed in a two-index family.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FixedIndex {
    /// `n` fixed; members run over `m`.
    First(usize),
    /// `m` fixed; members run over `n`.
    Second(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum FamilyKind {
    Monomial,
    Hermite,
    Laguerre,
    Hermite2 { fixed: FixedIndex, convention: Hermite2Convention },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Domain {
    RealLine,
    ComplexPlane,
    QuaternionSpace,
    PositiveHalfLine,
}

impl Domain {
    pub fn contains(self, q: Quaternion) -> bool {
        match self {
            Domain::QuaternionSpace => true,
            Domain::ComplexPlane => q.x2 == 0.0 && q.x3 == 0.0,
            Domain::RealLine => q.is_real(),
            Domain::PositiveHalfLine => q.is_real() && q.x0 >= 0.0,
        }
    }
}

/// A generating family `{f_i : X -> K}`, `i = 0..len()`, with values in `H^target_dim`.
pub trait Family: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn target_dim(&self) -> usize {
        1
    }

    /// All member values at `x`, member-major: entry `i * target_dim() + a` is
    /// component `a` of `f_i(x)`.
    fn values(&self, x: Quaternion) -> Result<Vec<Quaternion>>;

    /// Members as a `target_dim x len` matrix, column `i` being `f_i(x)`.
    fn value_matrix(&self, x: Quaternion) -> Result<QMatrix> {
        let v = self.values(x)?;
        let d = self.target_dim();
        Ok(QMatrix::from_fn(d, self.len(), |a, i| v[i * d + a]))
    }

    /// `N(x) = sum_i ||f_i(x)||^2`.
    fn norm_density(&self, x: Quaternion) -> Result<f64> {
        Ok(self.values(x)?.iter().map(|q| q.norm2()).sum())
    }
}

/// One of the scalar families with its weight and truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisFamily {
    pub kind: FamilyKind,
    pub epsilon: f64,
    pub alpha: Option<f64>,
    pub truncation: usize,
    pub domain: Domain,
}

impl BasisFamily {
    /// `f_n(q) = q^n / sqrt(n!)`.
    pub fn monomial(truncation: usize) -> Result<Self> {
        Self::build(FamilyKind::Monomial, 1.0, None, truncation)
    }

    /// `f_n(q) = eps^{n/2} H_n(q) / (sqrt(pi) 2^n n!)^{1/2}`.
    pub fn hermite(epsilon: f64, truncation: usize) -> Result<Self> {
        Self::build(FamilyKind::Hermite, epsilon, None, truncation)
    }

    /// `f_n(q) = eps^{n/2} (n! / Gamma(n+a+1))^{1/2} L^a_n(q)`.
    pub fn laguerre(alpha: f64, epsilon: f64, truncation: usize) -> Result<Self> {
        check_alpha(alpha)?;
        Self::build(FamilyKind::Laguerre, epsilon, Some(alpha), truncation)
    }

    /// `f_k(q) = H_{n,k}(q, conj q) / sqrt(n! k!)` (or with the roles swapped).
    pub fn hermite2(fixed: FixedIndex, convention: Hermite2Convention, truncation: usize) -> Result<Self> {
        let idx = match fixed {
            FixedIndex::First(n) | FixedIndex::Second(n) => n,
        };
        check_index(idx, MAX_INDEX_TWO)?;
        check_index(truncation, MAX_INDEX_TWO)?;
        Self::build(FamilyKind::Hermite2 { fixed, convention }, 1.0, None, truncation)
    }

    fn build(kind: FamilyKind, epsilon: f64, alpha: Option<f64>, truncation: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon <= 1.0) {
            return Err(Error::BadParams(format!("epsilon {epsilon} not in (0, 1]")));
        }
        if matches!(kind, FamilyKind::Hermite | FamilyKind::Laguerre) && epsilon >= 1.0 {
            return Err(Error::BadParams("Hermite and Laguerre families need epsilon < 1".into()));
        }
        check_index(truncation, MAX_INDEX)?;
        Ok(BasisFamily { kind, epsilon, alpha, truncation, domain: Domain::QuaternionSpace })
    }

    pub fn with_domain(mut self, domain: Domain) -> Self {
        self.domain = domain;
        self
    }

    pub fn with_truncation(mut self, truncation: usize) -> Result<Self> {
        let max = if matches!(self.kind, FamilyKind::Hermite2 { .. }) { MAX_INDEX_TWO } else { MAX_INDEX };
        check_index(truncation, max)?;
        self.truncation = truncation;
        Ok(self)
    }

    /// Single member `f_n(q)`.
    pub fn eval(&self, n: usize, q: Quaternion) -> Result<Quaternion> {
        if n > self.truncation {
            return Err(Error::IndexOutOfRange { n, truncation: self.truncation });
        }
        Ok(self.eval_upto(n, q)?[n])
    }

    /// Members `f_0(q), ..., f_N(q)`.
    pub fn eval_all(&self, q: Quaternion) -> Result<Vec<Quaternion>> {
        self.eval_upto(self.truncation, q)
    }

    fn eval_upto(&self, nmax: usize, q: Quaternion) -> Result<Vec<Quaternion>> {
        if !self.domain.contains(q) {
            return Err(Error::Domain(format!("{q} outside {:?}", self.domain)));
        }
        let mut out = Vec::with_capacity(nmax + 1);
        let se = self.epsilon.sqrt();
        match self.kind {
            FamilyKind::Monomial => {
                let mut cur = Quaternion::ONE;
                out.push(cur);
                for k in 0..nmax {
                    cur = q * cur / ((k + 1) as f64).sqrt();
                    out.push(cur);
                }
            }
            FamilyKind::Hermite => {
                // g_k = eps^{k/2} h_k with h_k the orthonormal Hermite functions' polynomial part
                let g0 = Quaternion::real(PI.powf(-0.25));
                out.push(g0);
                if nmax >= 1 {
                    out.push(q * g0 * (se * 2f64.sqrt()));
                }
                for k in 1..nmax {
                    let kf = k as f64;
                    let a = se * (2.0 / (kf + 1.0)).sqrt();
                    let b = self.epsilon * (kf / (kf + 1.0)).sqrt();
                    let next = q * out[k] * a - out[k - 1] * b;
                    out.push(next);
                }
            }
            FamilyKind::Laguerre => {
                let alpha = self.alpha.unwrap_or(0.0);
                let g0 = Quaternion::real((-0.5 * ln_gamma(alpha + 1.0)?).exp());
                out.push(g0);
                if nmax >= 1 {
                    let c = se / (1.0 + alpha).sqrt();
                    out.push((Quaternion::real(1.0 + alpha) - q) * g0 * c);
                }
                for k in 1..nmax {
                    let kf = k as f64;
                    let denom = ((kf + 1.0) * (kf + alpha + 1.0)).sqrt();
                    let a = Quaternion::real(2.0 * kf + 1.0 + alpha) - q;
                    let b = se * (kf * (kf + alpha)).sqrt();
                    let next = (a * out[k] - out[k - 1] * b) * (se / denom);
                    out.push(next);
                }
            }
            FamilyKind::Hermite2 { fixed, convention } => {
                for k in 0..=nmax {
                    let v = match fixed {
                        FixedIndex::First(n) => hermite2_normalized(convention, n, k, q)?,
                        FixedIndex::Second(m) => hermite2_normalized(convention, k, m, q)?,
                    };
                    out.push(v);
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow("family evaluation"));
        }
        Ok(out)
    }

    /// Members at the complex point `z` in double-double arithmetic, for the
    /// one-variable families (`None` for the two-index family). Since these
    /// polynomials have real coefficients, `f_n(a + bJ)` is this value lifted
    /// to the slice `C_J`.
    pub fn eval_complex_dd(&self, z: Complex64) -> Result<Option<Vec<DdComplex>>> {
        let nmax = self.truncation;
        let dd = |x: f64| TwoFloat::from(x);
        let zz = DdComplex::new(dd(z.re), dd(z.im));
        let eps = dd(self.epsilon);
        let mut out: Vec<DdComplex> = Vec::with_capacity(nmax + 1);
        match self.kind {
            FamilyKind::Hermite2 { .. } => return Ok(None),
            FamilyKind::Monomial => {
                out.push(DdComplex::new(dd(1.0), dd(0.0)));
                for k in 0..nmax {
                    let s = dd((k + 1) as f64).sqrt();
                    out.push(zz * out[k] / s);
                }
            }
            FamilyKind::Hermite => {
                out.push(DdComplex::new(dd(PI.powf(-0.25)), dd(0.0)));
                if nmax >= 1 {
                    out.push(zz * out[0] * (eps * 2.0).sqrt());
                }
                for k in 1..nmax {
                    let kf = k as f64;
                    let a = (eps * 2.0 / (kf + 1.0)).sqrt();
                    let b = eps * (dd(kf) / (kf + 1.0)).sqrt();
                    let next = zz * out[k] * a - out[k - 1] * b;
                    out.push(next);
                }
            }
            FamilyKind::Laguerre => {
                let alpha = self.alpha.unwrap_or(0.0);
                let se = eps.sqrt();
                out.push(DdComplex::new(dd((-0.5 * ln_gamma(alpha + 1.0)?).exp()), dd(0.0)));
                if nmax >= 1 {
                    let c = se / dd(1.0 + alpha).sqrt();
                    out.push((DdComplex::new(dd(1.0 + alpha), dd(0.0)) - zz) * out[0] * c);
                }
                for k in 1..nmax {
                    let kf = k as f64;
                    let denom = (dd(kf + 1.0) * (kf + alpha + 1.0)).sqrt();
                    let a = DdComplex::new(dd(2.0 * kf + 1.0 + alpha), dd(0.0)) - zz;
                    let b = se * (dd(kf) * (kf + alpha)).sqrt();
                    let next = (a * out[k] - out[k - 1] * b) * (se / denom);
                    out.push(next);
                }
            }
        }
        if out.iter().any(|v| !(v.re.hi().is_finite() && v.im.hi().is_finite())) {
            return Err(Error::Overflow("family evaluation"));
        }
        Ok(Some(out))
    }

    /// Smallest truncation at `q` for which the next ten terms of `N(q)` add
    /// less than `tol` times the partial sum, searching up to `cap`.
    pub fn choose_truncation(&self, q: Quaternion, tol: f64, cap: usize) -> Result<usize> {
        let wide = self.with_truncation(cap)?;
        let vals = wide.eval_all(q)?;
        let sq: Vec<f64> = vals.iter().map(|v| v.norm2()).collect();
        let mut partial = 0.0;
        for n in 0..=cap {
            partial += sq[n];
            if n + 10 > cap {
                break;
            }
            let next: f64 = sq[n + 1..=n + 10].iter().sum();
            if next < tol * partial {
                return Ok(n);
            }
        }
        let tail: f64 = sq[cap.saturating_sub(9)..=cap].iter().sum();
        Err(Error::TruncationNotConverged { tail: tail / partial, tol, terms: cap + 1 })
    }
}

impl Family for BasisFamily {
    fn len(&self) -> usize {
        self.truncation + 1
    }

    fn values(&self, x: Quaternion) -> Result<Vec<Quaternion>> {
        self.eval_all(x)
    }
}

pub fn family_eval(fam: &BasisFamily, n: usize, q: Quaternion) -> Result<Quaternion> {
    fam.eval(n, q)
}

/// `H^n`-valued family `f_{i,a}(x) = v_a * g_i(x)` built from a scalar family `g`
/// and fixed vectors `v_a`; member index is `i * vectors.len() + a`.
#[derive(Clone, Debug)]
pub struct VectorFamily {
    pub base: BasisFamily,
    pub vectors: Vec<Vec<Quaternion>>,
}

impl VectorFamily {
    pub fn new(base: BasisFamily, vectors: Vec<Vec<Quaternion>>) -> Result<Self> {
        let d = vectors.first().map_or(0, |v| v.len());
        if d == 0 {
            return Err(Error::BadParams("vector family needs at least one non-empty vector".into()));
        }
        if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
        }
        Ok(VectorFamily { base, vectors })
    }
}

impl Family for VectorFamily {
    fn len(&self) -> usize {
        self.base.len() * self.vectors.len()
    }

    fn target_dim(&self) -> usize {
        self.vectors[0].len()
    }

    fn values(&self, x: Quaternion) -> Result<Vec<Quaternion>> {
        let g = self.base.eval_all(x)?;
        let d = self.target_dim();
        let mut out = Vec::with_capacity(self.len() * d);
        for gi in &g {
            for v in &self.vectors {
                out.extend(v.iter().map(|&c| c * *gi));
            }
        }
        Ok(out)
    }
}

/// A family given by a closure; used for synthetic and deliberately defective families.
#[derive(Clone)]
pub struct FnFamily {
    len: usize,
    dim: usize,
    f: Arc<dyn Fn(Quaternion) -> Vec<Quaternion> + Send + Sync>,
}

impl FnFamily {
    pub fn new(len: usize, dim: usize, f: impl Fn(Quaternion) -> Vec<Quaternion> + Send + Sync + 'static) -> Self {
        FnFamily { len, dim, f: Arc::new(f) }
    }
}

impl Family for FnFamily {
    fn len(&self) -> usize {
        self.len
    }

    fn target_dim(&self) -> usize {
        self.dim
    }

    fn values(&self, x: Quaternion) -> Result<Vec<Quaternion>> {
        let v = (self.f)(x);
        if v.len() != self.len * self.dim {
            return Err(Error::DimensionMismatch { expected: self.len * self.dim, found: v.len() });
        }
        Ok(v)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub witness: f64,
    pub detail: String,
}

/// Numerical evidence for the three kernel-admissibility conditions:
/// finite `N(x)`, linear independence, and pointwise spanning of `K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmissibilityReport {
    pub finite_norm: CheckResult,
    pub independence: CheckResult,
    pub spanning: CheckResult,
}

impl AdmissibilityReport {
    pub fn all_passed(&self) -> bool {
        self.finite_norm.passed && self.independence.passed && self.spanning.passed
    }
}

pub fn admissibility_report(fam: &dyn Family, samples: &[Quaternion], tol: f64) -> Result<AdmissibilityReport> {
    let len = fam.len();
    if samples.len() < len {
        return Err(Error::InsufficientSamples { needed: len, got: samples.len() });
    }
    let d = fam.target_dim();
    let mut max_n: f64 = 0.0;
    let mut max_tail: f64 = 0.0;
    let mut all_finite = true;
    let mut min_span = f64::INFINITY;
    let mut rows: Vec<Quaternion> = Vec::with_capacity(samples.len() * d * len);
    for &x in samples {
        let vals = fam.values(x)?;
        let sq: Vec<f64> = (0..len).map(|i| (0..d).map(|a| vals[i * d + a].norm2()).sum()).collect();
        let total: f64 = sq.iter().sum();
        let tail: f64 = sq[len.saturating_sub(10)..].iter().sum();
        all_finite &= total.is_finite();
        max_n = max_n.max(total);
        if total > 0.0 {
            max_tail = max_tail.max(tail / total);
        }
        let fx = QMatrix::from_fn(d, len, |a, i| vals[i * d + a]);
        let s = fx.singular_values();
        min_span = min_span.min(s.get(d - 1).copied().unwrap_or(0.0));
        for a in 0..d {
            rows.extend((0..len).map(|i| vals[i * d + a]));
        }
    }
    let sample_matrix = QMatrix::from_rows(samples.len() * d, len, rows)?;
    let sv = sample_matrix.singular_values();
    let sigma_min = sv.last().copied().unwrap_or(0.0);
    Ok(AdmissibilityReport {
        finite_norm: CheckResult {
            name: "finite N(x)".into(),
            passed: all_finite,
            witness: max_tail,
            detail: format!("max N(x) = {max_n:e}, max tail ratio of last 10 terms = {max_tail:e}"),
        },
        independence: CheckResult {
            name: "linear independence".into(),
            passed: sigma_min > tol,
            witness: sigma_min,
            detail: format!("smallest singular value of sample matrix = {sigma_min:e}, tol = {tol:e}"),
        },
        spanning: CheckResult {
            name: "pointwise spanning".into(),
            passed: min_span > tol,
            witness: min_span,
            detail: format!("min over samples of the {d}-th singular value of [f_i(x)] = {min_span:e}"),
        },
    })
}

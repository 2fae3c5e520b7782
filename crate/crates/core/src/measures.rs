//! Measures on H, C, R and R+ and deterministic quadrature rules for them.
//!
//! Every quaternionic measure here factors as a planar density `rho(x, y) dx dy`
//! in the slice coordinates `q = x + yJ` times the normalized hemisphere measure
//! `sin(theta1) dtheta1 dphi / 2pi` for the axis `J`. The planar part is
//! integrated in polar coordinates `(r, theta2)`: Gauss-Legendre panels in `r`
//! and a periodic trapezoid in `theta2`.
//!
//! A reduced rule keeps only the planar nodes. It is exact for slice-intrinsic
//! integrands, i.e. `F(x + yJ) = A + B J` with real `A, B` independent of `J`:
//! evaluate at `J = i` and replace `i` by the hemisphere mean `<J> = k/2`.
//! The full rule is the 4D tensor product and makes no such assumption.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{kernel_series, Kernel};
use crate::poly::{hermite2_normalized, BasisFamily, Hermite2Convention};
use crate::qlinalg::QMatrix;
use crate::quaternion::{unit_axis, Quaternion};
use crate::special::{bessel_k_scaled, ln_gamma};

/// Format version written into serialized rules.
pub const RULE_VERSION: u32 = 1;
const BLOCK: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MeasureKind {
    /// `e^{-r^2}/(2 pi^2) r sin(theta1) dr dtheta1 dtheta2 dphi` on H.
    CanonicalGaussQ,
    HermiteComplex,
    HermiteQuat,
    LaguerreComplex,
    LaguerreQuat,
    /// `e^{-x^2} dx` on R.
    RealHermite,
    /// `x^alpha e^{-x} dx` on R+.
    RealLaguerre,
    /// `e^{-|z|^2}/pi d^2z` times the normalized hemisphere measure.
    TwoIndexGauss,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Real,
    Complex,
    Quaternionic,
}

impl MeasureKind {
    pub fn space(self) -> Space {
        match self {
            MeasureKind::RealHermite | MeasureKind::RealLaguerre => Space::Real,
            MeasureKind::HermiteComplex | MeasureKind::LaguerreComplex => Space::Complex,
            _ => Space::Quaternionic,
        }
    }

    fn needs_epsilon(self) -> bool {
        matches!(
            self,
            MeasureKind::HermiteComplex | MeasureKind::HermiteQuat | MeasureKind::LaguerreComplex | MeasureKind::LaguerreQuat
        )
    }

    fn needs_alpha(self) -> bool {
        matches!(self, MeasureKind::LaguerreComplex | MeasureKind::LaguerreQuat | MeasureKind::RealLaguerre)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MeasureParams {
    pub epsilon: Option<f64>,
    pub alpha: Option<f64>,
}

impl MeasureParams {
    pub fn none() -> Self {
        MeasureParams::default()
    }

    pub fn hermite(epsilon: f64) -> Self {
        MeasureParams { epsilon: Some(epsilon), alpha: None }
    }

    pub fn laguerre(alpha: f64, epsilon: f64) -> Self {
        MeasureParams { epsilon: Some(epsilon), alpha: Some(alpha) }
    }
}

/// Quadrature orders and sizing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadOrders {
    /// Gauss-Legendre nodes per radial panel.
    pub radial: usize,
    /// Trapezoid points in `theta2`.
    pub theta2: usize,
    /// Gauss-Legendre nodes in `cos(theta1)` (full rule only).
    pub theta1: usize,
    /// Trapezoid points in `phi` (full rule only).
    pub phi: usize,
    /// Polynomial degree of `|integrand|` the truncation radius must cover.
    pub degree: usize,
    /// Relative tail mass left beyond the truncation radius.
    pub tail: f64,
    pub max_nodes: usize,
}

impl Default for QuadOrders {
    fn default() -> Self {
        QuadOrders { radial: 24, theta2: 64, theta1: 1, phi: 2, degree: 12, tail: 1e-16, max_nodes: 8_000_000 }
    }
}

impl QuadOrders {
    /// Every order doubled; radius parameters unchanged.
    pub fn doubled(&self) -> Self {
        QuadOrders {
            radial: 2 * self.radial,
            theta2: 2 * self.theta2,
            theta1: 2 * self.theta1,
            phi: 2 * self.phi,
            ..*self
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Reduction {
    /// Planar nodes only, lifted with the hemisphere mean of `J`.
    Reduced,
    /// 4D tensor product over `(r, theta2, theta1, phi)`.
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanarNode {
    pub x: f64,
    pub y: f64,
    pub w: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngularNode {
    pub theta1: f64,
    pub phi: f64,
    pub w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeasureRule {
    pub version: u32,
    pub kind: MeasureKind,
    pub params: MeasureParams,
    pub orders: QuadOrders,
    pub reduction: Reduction,
    pub radius: f64,
    pub planar: Vec<PlanarNode>,
    /// Normalized hemisphere nodes; empty unless the rule is full and quaternionic.
    pub angular: Vec<AngularNode>,
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    let mut out = vec![(0.0, 0.0); n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 1.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            if n == 1 {
                p0 = 1.0;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        out[i] = (-x, w);
        out[n - 1 - i] = (x, w);
    }
    out
}

fn gl_on(a: f64, b: f64, gl: &[(f64, f64)], out: &mut Vec<(f64, f64)>) {
    let (m, h) = (0.5 * (a + b), 0.5 * (b - a));
    out.extend(gl.iter().map(|&(t, w)| (m + h * t, h * w)));
}

/// Radial nodes on `[0, r_max]`: an optional geometric grading toward 0, then
/// panels of width `h` that widen to a quarter of their left endpoint.
/// `graded` carries the exponent `p` of the `r^p` behaviour of the integrand at 0;
/// grading goes deep enough that the innermost panel holds about `1e-16` of it.
fn radial_nodes(r_max: f64, h: f64, graded: Option<f64>, order: usize) -> Vec<(f64, f64)> {
    let gl = gauss_legendre(order);
    let mut out = Vec::new();
    let mut a = 0.0;
    if let Some(p) = graded {
        let levels = (16.0 / (p + 1.0).max(0.05)).ceil().clamp(12.0, 300.0) as i32;
        let mut edges: Vec<f64> = (0..=levels).map(|j| h * 0.1f64.powi(levels - j)).collect();
        edges.insert(0, 0.0);
        for w in edges.windows(2) {
            gl_on(w[0], w[1], &gl, &mut out);
        }
        a = h;
    }
    while a < r_max {
        let b = (a + h.max(0.25 * a)).min(r_max);
        gl_on(a, b, &gl, &mut out);
        a = b;
    }
    out
}

/// Smallest `R` with `kappa R^p - deg ln R >= ln(1/tail)` (fixed-point iteration).
fn tail_radius(kappa: f64, p: f64, deg: f64, tail: f64) -> f64 {
    let target = (1.0 / tail).ln();
    let mut r: f64 = 1.0;
    for _ in 0..200 {
        r = ((target + deg * r.max(1.0).ln()) / kappa).powf(1.0 / p).max(1.0);
    }
    r
}

struct Density {
    kind: MeasureKind,
    eps: f64,
    alpha: f64,
}

impl Density {
    /// Planar (or linear) density at `(x, y)`, Lebesgue factor `dx dy` excluded.
    fn at(&self, x: f64, y: f64) -> Result<f64> {
        let (eps, alpha) = (self.eps, self.alpha);
        Ok(match self.kind {
            MeasureKind::CanonicalGaussQ | MeasureKind::TwoIndexGauss => (-(x * x + y * y)).exp() / PI,
            MeasureKind::HermiteComplex | MeasureKind::HermiteQuat => {
                // Normalized so that f_0 has unit norm; see `hermite_printed_constant`.
                let e = -2.0 * eps * (x * x / (1.0 + eps) + y * y / (1.0 - eps));
                2.0 * eps / (PI * (1.0 - eps * eps)).sqrt() * e.exp()
            }
            MeasureKind::LaguerreComplex | MeasureKind::LaguerreQuat => {
                let c = eps / (1.0 - eps);
                let r = x.hypot(y);
                let u = 2.0 * eps.sqrt() * r / (1.0 - eps);
                let ks = bessel_k_scaled(alpha, u)?;
                let pref = 2.0 * c * eps.powf(alpha / 2.0) / PI;
                pref * ks * (2.0 * c * x - u + alpha * r.ln()).exp()
            }
            MeasureKind::RealHermite => (-x * x).exp(),
            MeasureKind::RealLaguerre => (alpha * x.ln() - x).exp(),
        })
    }
}

/// The prefactor `sqrt(1 - e^2) / (2e)` often quoted for the complex Hermite
/// measure. It differs from the normalizing constant `2e / sqrt(pi (1 - e^2))`
/// used here by the factor `pi (1 - e^2) / (4 e^2) / sqrt(pi)` on every norm.
pub fn hermite_printed_constant(eps: f64) -> f64 {
    (1.0 - eps * eps).sqrt() / (2.0 * eps)
}

/// Builds a quadrature rule for `kind`.
pub fn build_rule(kind: MeasureKind, params: MeasureParams, orders: QuadOrders, reduction: Reduction) -> Result<MeasureRule> {
    let eps = match (kind.needs_epsilon(), params.epsilon) {
        (true, Some(e)) if e > 0.0 && e < 1.0 => e,
        (true, e) => return Err(Error::BadParams(format!("{kind:?} needs epsilon in (0, 1), got {e:?}"))),
        (false, _) => 1.0,
    };
    let alpha = match (kind.needs_alpha(), params.alpha) {
        (true, Some(a)) if a > -1.0 => a,
        (true, a) => return Err(Error::BadParams(format!("{kind:?} needs alpha > -1, got {a:?}"))),
        (false, _) => 0.0,
    };
    if orders.radial == 0 || orders.theta2 == 0 || orders.theta1 == 0 || orders.phi == 0 {
        return Err(Error::BadParams("quadrature orders must be positive".into()));
    }
    if !(orders.tail > 0.0 && orders.tail < 1.0) {
        return Err(Error::BadParams(format!("tail {} not in (0, 1)", orders.tail)));
    }
    let deg = orders.degree as f64;
    // radius, base panel width, grading toward 0
    let (radius, h, graded) = match kind {
        MeasureKind::CanonicalGaussQ | MeasureKind::TwoIndexGauss | MeasureKind::RealHermite => {
            (tail_radius(1.0, 2.0, deg, orders.tail), 0.5, None)
        }
        MeasureKind::HermiteComplex | MeasureKind::HermiteQuat => {
            let a = 2.0 * eps / (1.0 + eps);
            (tail_radius(a, 2.0, deg, orders.tail), 0.5 / a.sqrt(), None)
        }
        MeasureKind::LaguerreComplex | MeasureKind::LaguerreQuat => {
            // slowest decay is along the positive real axis, where exp(2cx) eats into K
            let c = eps / (1.0 - eps);
            let kappa = 2.0 * eps.sqrt() / (1.0 - eps) - 2.0 * c;
            // r dr times |z|^alpha K_alpha ~ r^{alpha - |alpha|}
            (tail_radius(kappa, 1.0, deg + alpha.max(0.0), orders.tail), 1.0, Some(1.0 + alpha.min(0.0) * 2.0))
        }
        MeasureKind::RealLaguerre => (tail_radius(1.0, 1.0, deg + alpha.max(0.0), orders.tail), 1.0, Some(alpha)),
    };
    let density = Density { kind, eps, alpha };
    let radial = radial_nodes(radius, h, graded, orders.radial);
    let space = kind.space();
    let planar_count = match space {
        Space::Real if kind == MeasureKind::RealHermite => 2 * radial.len(),
        Space::Real => radial.len(),
        _ => radial.len() * orders.theta2,
    };
    let angular_count = if space == Space::Quaternionic && reduction == Reduction::Full {
        orders.theta1 * orders.phi
    } else {
        1
    };
    let total = planar_count.saturating_mul(angular_count);
    if total > orders.max_nodes {
        return Err(Error::BudgetExceeded { nodes: total, limit: orders.max_nodes });
    }

    let mut planar = Vec::with_capacity(planar_count);
    match space {
        Space::Real => {
            for &(r, w) in &radial {
                planar.push(PlanarNode { x: r, y: 0.0, w: w * density.at(r, 0.0)? });
            }
            if kind == MeasureKind::RealHermite {
                let neg: Vec<PlanarNode> = planar.iter().map(|p| PlanarNode { x: -p.x, ..*p }).collect();
                planar.extend(neg);
            }
        }
        _ => {
            let m = orders.theta2;
            let dt = 2.0 * PI / m as f64;
            let rows: Vec<Vec<PlanarNode>> = radial
                .par_iter()
                .map(|&(r, wr)| {
                    (0..m)
                        .map(|k| {
                            let t = k as f64 * dt;
                            let (x, y) = (r * t.cos(), r * t.sin());
                            Ok(PlanarNode { x, y, w: wr * r * dt * density.at(x, y)? })
                        })
                        .collect::<Result<Vec<_>>>()
                })
                .collect::<Result<_>>()?;
            planar.extend(rows.into_iter().flatten());
        }
    }
    if let Some(bad) = planar.iter().find(|p| !(p.w >= 0.0 && p.w.is_finite())) {
        return Err(Error::BadParams(format!("invalid quadrature weight {} at ({}, {})", bad.w, bad.x, bad.y)));
    }

    let mut angular = Vec::new();
    if space == Space::Quaternionic && reduction == Reduction::Full {
        let gl = gauss_legendre(orders.theta1);
        for &(t, wt) in &gl {
            // t = cos(theta1) on [0, 1]
            let c = 0.5 * (t + 1.0);
            for k in 0..orders.phi {
                angular.push(AngularNode {
                    theta1: c.acos(),
                    phi: 2.0 * PI * k as f64 / orders.phi as f64,
                    w: 0.5 * wt / orders.phi as f64,
                });
            }
        }
    }
    Ok(MeasureRule { version: RULE_VERSION, kind, params, orders, reduction, radius, planar, angular })
}

/// Quaternionic rule with the default orders, or the given `theta2` order.
pub fn default_rule(kind: MeasureKind, params: MeasureParams, reduction: Reduction) -> Result<MeasureRule> {
    let mut orders = QuadOrders::default();
    if matches!(kind, MeasureKind::HermiteComplex | MeasureKind::HermiteQuat | MeasureKind::LaguerreComplex | MeasureKind::LaguerreQuat) {
        orders.theta2 = 256;
    }
    build_rule(kind, params, orders, reduction)
}

impl MeasureRule {
    pub fn node_count(&self) -> usize {
        self.planar.len() * self.angular.len().max(1)
    }

    /// True for reduced quaternionic rules, whose nodes carry the mean axis instead of a real one.
    pub fn lifts(&self) -> bool {
        self.kind.space() == Space::Quaternionic && self.reduction == Reduction::Reduced
    }

    /// Node `k` as a point and weight; ordering is planar-major.
    pub fn node(&self, k: usize) -> (Quaternion, f64) {
        if self.angular.is_empty() {
            let p = self.planar[k];
            return (Quaternion::new(p.x, p.y, 0.0, 0.0), p.w);
        }
        let na = self.angular.len();
        let (p, a) = (self.planar[k / na], self.angular[k % na]);
        let j = unit_axis(a.theta1, a.phi);
        (Quaternion::real(p.x) + j * p.y, p.w * a.w)
    }

    pub fn nodes(&self) -> Vec<(Quaternion, f64)> {
        (0..self.node_count()).map(|k| self.node(k)).collect()
    }

    pub fn total_weight(&self) -> f64 {
        let planar: f64 = self.planar.iter().map(|p| p.w).sum();
        if self.angular.is_empty() {
            planar
        } else {
            planar * self.angular.iter().map(|a| a.w).sum::<f64>()
        }
    }

    pub fn with_orders(&self, orders: QuadOrders) -> Result<MeasureRule> {
        build_rule(self.kind, self.params, orders, self.reduction)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::BadParams(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<MeasureRule> {
        let rule: MeasureRule = serde_json::from_str(s).map_err(|e| Error::BadParams(e.to_string()))?;
        if rule.version != RULE_VERSION {
            return Err(Error::BadParams(format!("unsupported rule version {}", rule.version)));
        }
        Ok(rule)
    }
}

fn sum_range<F>(rule: &MeasureRule, lo: usize, hi: usize, len: usize, f: &F) -> Result<Vec<Quaternion>>
where
    F: Fn(Quaternion) -> Result<Vec<Quaternion>> + Sync,
{
    if hi - lo <= BLOCK {
        let mut acc = vec![Quaternion::ZERO; len];
        for k in lo..hi {
            let (q, w) = rule.node(k);
            if w == 0.0 {
                continue;
            }
            let v = f(q)?;
            if v.len() != len {
                return Err(Error::DimensionMismatch { expected: len, found: v.len() });
            }
            for (a, b) in acc.iter_mut().zip(v) {
                *a += b * w;
            }
        }
        return Ok(acc);
    }
    let mid = lo + (hi - lo) / 2;
    let (a, b) = rayon::join(|| sum_range(rule, lo, mid, len, f), || sum_range(rule, mid, hi, len, f));
    let (mut a, b) = (a?, b?);
    for (x, y) in a.iter_mut().zip(b) {
        *x += y;
    }
    Ok(a)
}

/// `int F dnu` for a vector of `len` integrands at once. Summation is pairwise
/// over a fixed split of the node range, so results are reproducible bit for bit.
pub fn integrate_vec<F>(rule: &MeasureRule, len: usize, f: F) -> Result<Vec<Quaternion>>
where
    F: Fn(Quaternion) -> Result<Vec<Quaternion>> + Sync,
{
    let n = rule.node_count();
    if n == 0 {
        return Err(Error::EmptyRule);
    }
    let raw = sum_range(rule, 0, n, len, &f)?;
    if !rule.lifts() {
        return Ok(raw);
    }
    raw.into_iter()
        .map(|v| {
            if v.x2.abs().max(v.x3.abs()) > 1e-12 * v.norm().max(1e-300) {
                return Err(Error::SliceMismatch);
            }
            Ok(Quaternion::new(v.x0, 0.0, 0.0, 0.5 * v.x1))
        })
        .collect()
}

pub fn integrate<F>(rule: &MeasureRule, f: F) -> Result<Quaternion>
where
    F: Fn(Quaternion) -> Result<Quaternion> + Sync,
{
    Ok(integrate_vec(rule, 1, |q| Ok(vec![f(q)?]))?[0])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthogonalityReport {
    /// `M_mn = int conj(f_m) f_n dnu`.
    pub gram: QMatrix,
    /// `|M_mn - target_mn|`.
    pub residuals: Vec<Vec<f64>>,
    pub max_residual: f64,
}

fn report(gram: QMatrix, target: impl Fn(usize, usize) -> f64) -> OrthogonalityReport {
    let n = gram.rows();
    let residuals: Vec<Vec<f64>> =
        (0..n).map(|m| (0..n).map(|k| (gram[(m, k)] - Quaternion::real(target(m, k))).norm()).collect()).collect();
    let max_residual = residuals.iter().flatten().fold(0.0f64, |a, &b| a.max(b));
    OrthogonalityReport { gram, residuals, max_residual }
}

fn check_degree(rule: &MeasureRule, degree: usize) -> Result<()> {
    if degree > rule.orders.degree {
        return Err(Error::BudgetExceeded { nodes: degree, limit: rule.orders.degree });
    }
    Ok(())
}

/// Residuals of `int conj(f_m) f_n dnu` against `delta_mn` (against `eps^n delta_mn`
/// on the real line, where the weighted family is not normalized).
pub fn orthogonality_matrix(fam: &BasisFamily, rule: &MeasureRule, max_n: usize) -> Result<OrthogonalityReport> {
    if max_n > fam.truncation {
        return Err(Error::IndexOutOfRange { n: max_n, truncation: fam.truncation });
    }
    check_degree(rule, 2 * max_n)?;
    let fam = fam.with_truncation(max_n)?;
    let d = max_n + 1;
    let flat = integrate_vec(rule, d * d, |q| {
        let f = fam.eval_all(q)?;
        Ok((0..d * d).map(|k| f[k / d].conj() * f[k % d]).collect())
    })?;
    let gram = QMatrix::from_rows(d, d, flat)?;
    let real = rule.kind.space() == Space::Real;
    let eps = fam.epsilon;
    Ok(report(gram, |m, n| if m != n { 0.0 } else if real { eps.powi(n as i32) } else { 1.0 }))
}

/// Residuals of `int conj(H_{n,m}) H_{l,k} dnu / sqrt(n! m! l! k!)` against
/// `delta_nl delta_mk` for all index pairs up to `max_index`.
pub fn two_index_orthogonality(rule: &MeasureRule, conv: Hermite2Convention, max_index: usize) -> Result<OrthogonalityReport> {
    check_degree(rule, 4 * max_index)?;
    let p = max_index + 1;
    let d = p * p;
    let flat = integrate_vec(rule, d * d, |q| {
        let h: Vec<Quaternion> =
            (0..d).map(|k| hermite2_normalized(conv, k / p, k % p, q)).collect::<Result<_>>()?;
        Ok((0..d * d).map(|k| h[k / d].conj() * h[k % d]).collect())
    })?;
    let gram = QMatrix::from_rows(d, d, flat)?;
    Ok(report(gram, |a, b| if a == b { 1.0 } else { 0.0 }))
}

/// `|int K(x, z) K(z, y) dnu(z) - K(x, y)| / |K(x, y)|` with the kernel truncated
/// at its family's `N` on both sides.
pub fn kernel_square_integrability(ker: &Kernel, rule: &MeasureRule, x: Quaternion, y: Quaternion) -> Result<f64> {
    if rule.lifts() {
        return Err(Error::BadParams("K(x, z) K(z, y) is not slice-intrinsic; use the full rule".into()));
    }
    let fam = &ker.family;
    let fx = fam.eval_all(x)?;
    let fy = fam.eval_all(y)?;
    let lhs = integrate(rule, |z| {
        let fz = fam.eval_all(z)?;
        let kxz: Quaternion = fx.iter().zip(&fz).map(|(a, b)| *a * b.conj()).sum();
        let kzy: Quaternion = fz.iter().zip(&fy).map(|(a, b)| *a * b.conj()).sum();
        Ok(kxz * kzy)
    })?;
    let kxy = kernel_series(ker, x, y)?.value;
    Ok((lhs - kxy).norm() / kxy.norm())
}

/// `Gamma(n + alpha + 1) / n!`, the squared norm of `L^alpha_n` for `x^alpha e^{-x}`.
pub fn laguerre_norm2(alpha: f64, n: usize) -> Result<f64> {
    Ok((ln_gamma(n as f64 + alpha + 1.0)? - ln_gamma(n as f64 + 1.0)?).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::{hermite, laguerre};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn canonical(reduction: Reduction) -> MeasureRule {
        build_rule(MeasureKind::CanonicalGaussQ, MeasureParams::none(), QuadOrders::default(), reduction).unwrap()
    }

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 2, 5, 24, 48] {
            let gl = gauss_legendre(n);
            let s: f64 = gl.iter().map(|p| p.1).sum();
            assert!((s - 2.0).abs() < 1e-14);
            for k in 0..2 * n {
                let got: f64 = gl.iter().map(|&(x, w)| w * x.powi(k as i32)).sum();
                let expect = if k % 2 == 1 { 0.0 } else { 2.0 / (k as f64 + 1.0) };
                assert!((got - expect).abs() < 1e-14, "n {n} k {k}");
            }
        }
    }

    #[test]
    fn canonical_moments() {
        for red in [Reduction::Reduced, Reduction::Full] {
            let rule = canonical(red);
            let one = integrate(&rule, |_| Ok(Quaternion::ONE)).unwrap();
            assert!((one - Quaternion::ONE).norm() < 1e-12);
            let q = integrate(&rule, Ok).unwrap();
            assert!(q.norm() < 1e-13);
            let r2 = integrate(&rule, |q| Ok(Quaternion::real(q.norm2()))).unwrap();
            assert!((r2 - Quaternion::ONE).norm() < 1e-12);
        }
    }

    #[test]
    fn canonical_monomials_orthogonal() {
        let fam = BasisFamily::monomial(6).unwrap();
        for red in [Reduction::Reduced, Reduction::Full] {
            let rep = orthogonality_matrix(&fam, &canonical(red), 6).unwrap();
            assert!(rep.max_residual < 1e-10, "{red:?} {}", rep.max_residual);
        }
    }

    #[test]
    fn reduced_and_full_rules_agree() {
        let fam = BasisFamily::hermite(0.5, 6).unwrap();
        let p = MeasureParams::hermite(0.5);
        let red = default_rule(MeasureKind::HermiteQuat, p, Reduction::Reduced).unwrap();
        let full = default_rule(MeasureKind::HermiteQuat, p, Reduction::Full).unwrap();
        let a = orthogonality_matrix(&fam, &red, 6).unwrap();
        let b = orthogonality_matrix(&fam, &full, 6).unwrap();
        let scale = a.gram.max_abs();
        assert!((&a.gram - &b.gram).max_abs() < 1e-9 * scale);
        let one_r = integrate(&red, |_| Ok(Quaternion::ONE)).unwrap();
        let one_f = integrate(&full, |_| Ok(Quaternion::ONE)).unwrap();
        assert!((one_r - one_f).norm() < 1e-12);
        let cplx = default_rule(MeasureKind::HermiteComplex, p, Reduction::Reduced).unwrap();
        let one_c = integrate(&cplx, |_| Ok(Quaternion::ONE)).unwrap();
        assert!((one_r - one_c).norm() < 1e-12);
    }

    #[test]
    fn reduced_rule_rejects_non_intrinsic_integrands() {
        let rule = canonical(Reduction::Reduced);
        let r = integrate(&rule, |q| Ok(Quaternion::J * q * q));
        assert_eq!(r, Err(Error::SliceMismatch));
    }

    #[test]
    fn full_rule_handles_axis_dependent_integrands() {
        let orders = QuadOrders { theta1: 6, phi: 8, ..QuadOrders::default() };
        let fine = build_rule(MeasureKind::CanonicalGaussQ, MeasureParams::none(), orders, Reduction::Full).unwrap();
        // x1^2 over the hemisphere: (1/2pi) int sin^2 t cos^2 p sin t dt dp = 1/3, and int y^2 dnu = 1/2
        let got = integrate(&fine, |q| Ok(Quaternion::real(q.x1 * q.x1))).unwrap();
        assert!((got.x0 - 1.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn real_measures() {
        let orders = QuadOrders { radial: 60, ..QuadOrders::default() };
        let rl = build_rule(MeasureKind::RealLaguerre, MeasureParams { epsilon: None, alpha: Some(0.0) }, orders, Reduction::Reduced).unwrap();
        let one = integrate(&rl, |_| Ok(Quaternion::ONE)).unwrap();
        assert!((one.x0 - 1.0).abs() < 1e-12);
        for alpha in [-0.5, 0.5, 2.0] {
            let rl = build_rule(MeasureKind::RealLaguerre, MeasureParams { epsilon: None, alpha: Some(alpha) }, orders, Reduction::Reduced).unwrap();
            let raw = integrate_vec(&rl, 16, |q| {
                let l: Vec<Quaternion> = (0..4).map(|n| laguerre(alpha, n, q)).collect::<Result<_>>()?;
                Ok((0..16).map(|k| l[k / 4] * l[k % 4]).collect())
            })
            .unwrap();
            for j in 0..4 {
                for k in 0..4 {
                    let expect = if j == k { laguerre_norm2(alpha, k).unwrap() } else { 0.0 };
                    assert!((raw[j * 4 + k].x0 - expect).abs() < 1e-10 * expect.max(1.0), "alpha {alpha} {j} {k}");
                }
            }
        }
        let rh = build_rule(MeasureKind::RealHermite, MeasureParams::none(), QuadOrders::default(), Reduction::Reduced).unwrap();
        for m in 0..5 {
            for n in 0..5 {
                let got = integrate(&rh, |q| Ok(hermite(m, q)? * hermite(n, q)?)).unwrap().x0;
                let expect = if m == n { PI.sqrt() * 2f64.powi(n as i32) * (1..=n).product::<usize>() as f64 } else { 0.0 };
                assert!((got - expect).abs() < 1e-12 * expect.max(1.0));
            }
        }
        let fam = BasisFamily::hermite(0.4, 6).unwrap();
        assert!(orthogonality_matrix(&fam, &rh, 6).unwrap().max_residual < 1e-12);
    }

    #[test]
    fn complex_measures_orthonormalize_families() {
        for eps in [0.3, 0.7] {
            let p = MeasureParams::hermite(eps);
            let rule = default_rule(MeasureKind::HermiteComplex, p, Reduction::Reduced).unwrap();
            let fam = BasisFamily::hermite(eps, 6).unwrap();
            assert!(orthogonality_matrix(&fam, &rule, 6).unwrap().max_residual < 1e-9);
        }
        let p = MeasureParams::laguerre(0.5, 0.5);
        let rule = default_rule(MeasureKind::LaguerreComplex, p, Reduction::Reduced).unwrap();
        let fam = BasisFamily::laguerre(0.5, 0.5, 6).unwrap();
        let rep = orthogonality_matrix(&fam, &rule, 6).unwrap();
        assert!(rep.max_residual < 1e-8, "{}", rep.max_residual);
    }

    #[test]
    fn two_index_conventions() {
        let rule = build_rule(MeasureKind::TwoIndexGauss, MeasureParams::none(), QuadOrders { degree: 16, ..QuadOrders::default() }, Reduction::Reduced).unwrap();
        let signed = two_index_orthogonality(&rule, Hermite2Convention::Signed, 4).unwrap();
        assert!(signed.max_residual < 1e-8, "{}", signed.max_residual);
        let shown = two_index_orthogonality(&rule, Hermite2Convention::AsDisplayed, 1).unwrap();
        // <H00|H11> = int (|z|^2 + 1) = 2
        assert!((shown.gram[(0, 3)].x0 - 2.0).abs() < 1e-10);
        assert!(shown.max_residual > 1.0);
    }

    #[test]
    fn square_integrability_canonical_origin() {
        let rule = canonical(Reduction::Full);
        let k = Kernel::canonical();
        let r = kernel_square_integrability(&k, &rule, Quaternion::ZERO, Quaternion::ZERO).unwrap();
        assert!(r < 1e-10);
        assert!(kernel_square_integrability(&k, &canonical(Reduction::Reduced), Quaternion::ZERO, Quaternion::ZERO).is_err());
    }

    #[test]
    fn integration_is_deterministic() {
        let rule = canonical(Reduction::Full);
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let a = Quaternion::new(rng.gen(), rng.gen(), rng.gen(), rng.gen());
        let f = |q: Quaternion| Ok((q * a * q).conj() * q);
        let x = integrate(&rule, f).unwrap();
        let y = integrate(&rule, f).unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn rule_serialization_round_trip() {
        let rule = build_rule(MeasureKind::HermiteQuat, MeasureParams::hermite(0.5), QuadOrders { radial: 4, theta2: 8, ..QuadOrders::default() }, Reduction::Full).unwrap();
        let s = rule.to_json().unwrap();
        assert!(s.contains("\"version\":1"));
        assert_eq!(MeasureRule::from_json(&s).unwrap(), rule);
        let bumped = s.replacen("\"version\":1", "\"version\":9", 1);
        assert!(MeasureRule::from_json(&bumped).is_err());
    }

    #[test]
    fn build_rule_errors() {
        let o = QuadOrders::default();
        assert!(build_rule(MeasureKind::HermiteQuat, MeasureParams::none(), o, Reduction::Full).is_err());
        assert!(build_rule(MeasureKind::LaguerreQuat, MeasureParams::laguerre(-1.5, 0.5), o, Reduction::Full).is_err());
        let tiny = QuadOrders { max_nodes: 10, ..o };
        assert!(matches!(
            build_rule(MeasureKind::CanonicalGaussQ, MeasureParams::none(), tiny, Reduction::Full),
            Err(Error::BudgetExceeded { .. })
        ));
        let rule = canonical(Reduction::Reduced);
        assert!(rule.planar.iter().all(|p| p.w >= 0.0));
        let fam = BasisFamily::monomial(10).unwrap();
        assert!(matches!(orthogonality_matrix(&fam, &rule, 10), Err(Error::BudgetExceeded { .. })));
    }
}

//! Reproducing kernels `K(x, y) = sum_i f_i(x) f_i(y)^dagger` built from a
//! generating family, their closed forms, Gram matrices and coherent-state
//! coefficient vectors.
//!
//! A member of the kernel space is represented by its coefficients `c_i` in the
//! orthonormal basis `{f_i}`, so `phi(x) = sum_i f_i(x) c_i` and the kernel inner
//! product is the plain quaternionic inner product of coefficient vectors.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use twofloat::TwoFloat;

use crate::error::{Error, Result};
use crate::poly::{BasisFamily, Domain, Family, FamilyKind};
use crate::qlinalg::{inner, QMatrix, QVector};
use crate::quaternion::Quaternion;
use crate::special::bessel_i_reduced;

/// Largest point set accepted by [`gram_matrix`].
pub const GRAM_MAX_POINTS: usize = 200;
/// Default relative tail tolerance for series evaluation.
pub const DEFAULT_SERIES_TOL: f64 = 1e-13;
const TAIL_TERMS: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClosedForm {
    CanonicalSlice,
    HermiteReal,
    HermiteComplex,
    LaguerreReal,
    LaguerreComplex,
}

/// Scalar kernel backed by one of the built-in families.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Kernel {
    pub family: BasisFamily,
    pub closed_form: Option<ClosedForm>,
    /// Relative tail tolerance used by [`kernel_series`].
    pub tol: f64,
}

/// A truncated series value together with its tail estimate: the share of
/// `sum |f_i(x)| |f_i(y)|` carried by the last ten retained terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    pub value: Quaternion,
    pub tail: f64,
    pub terms: usize,
}

impl Kernel {
    /// Wraps a family, attaching the closed form its kind and domain warrant.
    pub fn new(family: BasisFamily) -> Self {
        let closed_form = match (family.kind, family.domain) {
            (FamilyKind::Monomial, _) => Some(ClosedForm::CanonicalSlice),
            (FamilyKind::Hermite, Domain::RealLine) => Some(ClosedForm::HermiteReal),
            (FamilyKind::Hermite, _) => Some(ClosedForm::HermiteComplex),
            (FamilyKind::Laguerre, Domain::RealLine | Domain::PositiveHalfLine) => Some(ClosedForm::LaguerreReal),
            (FamilyKind::Laguerre, _) => Some(ClosedForm::LaguerreComplex),
            (FamilyKind::Hermite2 { .. }, _) => None,
        };
        Kernel { family, closed_form, tol: DEFAULT_SERIES_TOL }
    }

    pub fn canonical() -> Self {
        Kernel::new(BasisFamily::monomial(60).expect("valid truncation"))
    }

    pub fn hermite(epsilon: f64) -> Result<Self> {
        Ok(Kernel::new(BasisFamily::hermite(epsilon, 120)?))
    }

    pub fn laguerre(alpha: f64, epsilon: f64) -> Result<Self> {
        Ok(Kernel::new(BasisFamily::laguerre(alpha, epsilon, 150)?))
    }

    pub fn with_truncation(mut self, n: usize) -> Result<Self> {
        self.family = self.family.with_truncation(n)?;
        Ok(self)
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn truncation(&self) -> usize {
        self.family.truncation
    }

    /// Series value, failing if the tail estimate exceeds the kernel tolerance.
    pub fn eval(&self, x: Quaternion, y: Quaternion) -> Result<Quaternion> {
        Ok(kernel_series(self, x, y)?.value)
    }

    /// `N(x) = K(x, x)`.
    pub fn diagonal(&self, x: Quaternion) -> Result<f64> {
        Ok(self.eval(x, x)?.x0)
    }
}

fn series_parts(fx: &[Quaternion], fy: &[Quaternion]) -> SeriesValue {
    let mut value = Quaternion::ZERO;
    let mut abs = 0.0;
    let mut tail = 0.0;
    let n = fx.len();
    for (i, (a, b)) in fx.iter().zip(fy).enumerate() {
        value += *a * b.conj();
        let m = a.norm() * b.norm();
        abs += m;
        if i + TAIL_TERMS >= n {
            tail += m;
        }
    }
    SeriesValue { value, tail: if abs > 0.0 { tail / abs } else { 0.0 }, terms: n }
}

/// Series in double-double arithmetic through the slice decomposition
/// `f_n(a + bJ) = p_n(a + bi)` lifted to `C_J`. Writing `p_n(zx) = a_n + i b_n`
/// and `p_n(zy) = c_n + i d_n`,
/// `sum f_n(x) conj f_n(y) = A - B Jy + C Jx - D Jx Jy` with
/// `A = sum a c`, `B = sum a d`, `C = sum b c`, `D = sum b d`.
fn series_dd(fam: &BasisFamily, x: Quaternion, y: Quaternion) -> Result<Option<SeriesValue>> {
    for q in [x, y] {
        if !fam.domain.contains(q) {
            return Err(Error::Domain(format!("{q} outside {:?}", fam.domain)));
        }
    }
    let (zx, jx) = x.slice_parts();
    let (zy, jy) = y.slice_parts();
    let Some(px) = fam.eval_complex_dd(zx)? else { return Ok(None) };
    let py = if x == y { px.clone() } else { fam.eval_complex_dd(zy)?.expect("same family") };
    let zero = TwoFloat::from(0.0);
    let (mut a, mut b, mut c, mut d) = (zero, zero, zero, zero);
    let n = px.len();
    let (mut abs, mut tail) = (0.0, 0.0);
    for (i, (u, v)) in px.iter().zip(&py).enumerate() {
        a += u.re * v.re;
        b += u.re * v.im;
        c += u.im * v.re;
        d += u.im * v.im;
        let m = u.re.hi().hypot(u.im.hi()) * v.re.hi().hypot(v.im.hi());
        abs += m;
        if i + TAIL_TERMS >= n {
            tail += m;
        }
    }
    let jxy = jx * jy;
    let comp = |k: usize| {
        let pick = |q: Quaternion| [q.x0, q.x1, q.x2, q.x3][k];
        let one = if k == 0 { 1.0 } else { 0.0 };
        f64::from(a * one - b * pick(jy) + c * pick(jx) - d * pick(jxy))
    };
    let value = Quaternion::new(comp(0), comp(1), comp(2), comp(3));
    Ok(Some(SeriesValue { value, tail: if abs > 0.0 { tail / abs } else { 0.0 }, terms: n }))
}

/// `sum_i f_i(x) conj(f_i(y))` with its tail estimate.
///
/// One-variable families are summed in double-double arithmetic, since the
/// kernel can be many orders of magnitude below its largest terms.
pub fn kernel_series(ker: &Kernel, x: Quaternion, y: Quaternion) -> Result<SeriesValue> {
    let s = match series_dd(&ker.family, x, y)? {
        Some(s) => s,
        None => {
            let fx = ker.family.eval_all(x)?;
            if x == y {
                series_parts(&fx, &fx)
            } else {
                series_parts(&fx, &ker.family.eval_all(y)?)
            }
        }
    };
    if x == y && !(s.value.x0 > 1e-300) {
        return Err(Error::DegenerateKernel(s.value.x0));
    }
    if s.tail > ker.tol {
        return Err(Error::TruncationNotConverged { tail: s.tail, tol: ker.tol, terms: s.terms });
    }
    Ok(s)
}

/// Kernel in the displayed canonical ordering `sum_n conj(q)^n q'^n / n!`,
/// i.e. `K(conj q, conj q')` in the convention used here.
pub fn kernel_displayed(ker: &Kernel, q: Quaternion, q2: Quaternion) -> Result<Quaternion> {
    ker.eval(q.conj(), q2.conj())
}

/// Complex coordinates of `x` and `y` in a slice `C_J` containing both.
fn common_slice(x: Quaternion, y: Quaternion) -> Result<(Complex64, Complex64, Quaternion)> {
    let (zx, ax) = x.slice_parts();
    let (zy, ay) = y.slice_parts();
    if x.is_real() {
        return Ok((zx, zy, ay));
    }
    if y.is_real() || (ax - ay).norm() < 1e-12 {
        return Ok((zx, zy, ax));
    }
    if (ax + ay).norm() < 1e-12 {
        return Ok((zx, zy.conj(), ax));
    }
    Err(Error::SliceMismatch)
}

/// Mehler kernel `(pi(1-e^2))^{-1/2} exp[-e^2/(1-e^2)(z^2 + w^2 - (2/e) z w)]`.
fn mehler(eps: f64, z: Complex64, w: Complex64) -> Complex64 {
    let e2 = eps * eps;
    let expo = -e2 / (1.0 - e2) * (z * z + w * w - z * w * (2.0 / eps));
    expo.exp() / (PI * (1.0 - e2)).sqrt()
}

/// Hille-Hardy kernel
/// `(1-e)^{-1} exp[-e(z+w)/(1-e)] (e z w)^{-a/2} I_a(2 sqrt(e z w)/(1-e))`,
/// written through the entire function `(u/2)^{-a} I_a(u)` so that `z w = 0`
/// and complex products need no special handling.
fn hille_hardy(alpha: f64, eps: f64, z: Complex64, w: Complex64) -> Result<Complex64> {
    let om = 1.0 - eps;
    let t = z * w * (eps / (om * om));
    let red = bessel_i_reduced(alpha, t)?;
    Ok((-(z + w) * (eps / om)).exp() * red * om.powf(-1.0 - alpha))
}

/// Closed-form kernel value where one exists.
pub fn kernel_closed(ker: &Kernel, x: Quaternion, y: Quaternion) -> Result<Quaternion> {
    let tag = ker.closed_form.ok_or(Error::NoClosedForm)?;
    let fam = &ker.family;
    if matches!(tag, ClosedForm::HermiteReal | ClosedForm::LaguerreReal) && !(x.is_real() && y.is_real()) {
        return Err(Error::Domain("real closed form needs real arguments".into()));
    }
    let (z, w, axis) = common_slice(x, y)?;
    // K(x, y) lifts the complex kernel evaluated at (z, conj w).
    let wb = w.conj();
    let v = match tag {
        ClosedForm::CanonicalSlice => (z * wb).exp(),
        ClosedForm::HermiteReal | ClosedForm::HermiteComplex => mehler(fam.epsilon, z, wb),
        ClosedForm::LaguerreReal | ClosedForm::LaguerreComplex => {
            hille_hardy(fam.alpha.unwrap_or(0.0), fam.epsilon, z, wb)?
        }
    };
    let q = Quaternion::in_slice(v, axis);
    if q.is_finite() {
        Ok(q)
    } else {
        Err(Error::Overflow("kernel_closed"))
    }
}

/// `K(x, y)` as a `d x d` matrix for an `H^d`-valued family, without tail checks.
pub fn family_kernel_matrix(fam: &dyn Family, x: Quaternion, y: Quaternion) -> Result<QMatrix> {
    let fx = fam.value_matrix(x)?;
    let fy = fam.value_matrix(y)?;
    fx.matmul(&fy.adjoint())
}

/// Gram matrix `G_ij = <v_i | K(x_i, x_j) v_j>` for any family; with no vectors
/// the family must be scalar and `G_ij = K(x_i, x_j)`.
pub fn family_gram(fam: &dyn Family, points: &[Quaternion], vectors: Option<&[Vec<Quaternion>]>) -> Result<QMatrix> {
    if points.len() > GRAM_MAX_POINTS {
        return Err(Error::BadParams(format!("at most {GRAM_MAX_POINTS} points, got {}", points.len())));
    }
    let d = fam.target_dim();
    if let Some(vs) = vectors {
        if vs.len() != points.len() {
            return Err(Error::DimensionMismatch { expected: points.len(), found: vs.len() });
        }
        if let Some(bad) = vs.iter().find(|v| v.len() != d) {
            return Err(Error::DimensionMismatch { expected: d, found: bad.len() });
        }
    } else if d != 1 {
        return Err(Error::BadParams("vector-valued family needs explicit vectors".into()));
    }
    // Coefficient vectors xi_i with <xi_i | xi_j> = <v_i | K(x_i, x_j) v_j>.
    let xis: Vec<QVector> = points
        .par_iter()
        .enumerate()
        .map(|(i, &x)| {
            let v = vectors.map_or_else(|| vec![Quaternion::ONE], |vs| vs[i].clone());
            family_cs_vector(fam, x, &v).map(|c| c.coeffs)
        })
        .collect::<Result<_>>()?;
    let n = points.len();
    let entries: Vec<Quaternion> = (0..n * n)
        .into_par_iter()
        .map(|k| inner(&xis[k / n], &xis[k % n]))
        .collect::<Result<_>>()?;
    QMatrix::from_rows(n, n, entries)
}

/// Gram matrix of a scalar kernel; optional `vectors` are the quaternions `v_i`.
pub fn gram_matrix(ker: &Kernel, points: &[Quaternion], vectors: Option<&[Quaternion]>) -> Result<QMatrix> {
    for &x in points {
        kernel_series(ker, x, x)?;
    }
    let vs: Option<Vec<Vec<Quaternion>>> = vectors.map(|v| v.iter().map(|&q| vec![q]).collect());
    family_gram(&ker.family, points, vs.as_deref())
}

/// Coordinates of a member of the kernel space in the basis `{f_i}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub coeffs: QVector,
}

impl CoefficientVector {
    pub fn new(coeffs: Vec<Quaternion>) -> Self {
        CoefficientVector { coeffs: QVector(coeffs) }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Kernel-space inner product.
    pub fn inner(&self, other: &CoefficientVector) -> Result<Quaternion> {
        inner(&self.coeffs, &other.coeffs)
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.norm()
    }

    pub fn scale_right(&self, q: Quaternion) -> CoefficientVector {
        CoefficientVector { coeffs: self.coeffs.scale_right(q) }
    }
}

/// `xi_x^v = K(., x) v`, i.e. coefficients `<f_i(x) | v>`.
pub fn family_cs_vector(fam: &dyn Family, x: Quaternion, v: &[Quaternion]) -> Result<CoefficientVector> {
    let d = fam.target_dim();
    if v.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: v.len() });
    }
    let vals = fam.values(x)?;
    let coeffs = (0..fam.len())
        .map(|i| (0..d).map(|a| vals[i * d + a].conj() * v[a]).sum())
        .collect();
    Ok(CoefficientVector::new(coeffs))
}

/// `phi(x) = sum_i f_i(x) c_i` in `H^d`.
pub fn family_evaluate(fam: &dyn Family, c: &CoefficientVector, x: Quaternion) -> Result<Vec<Quaternion>> {
    if c.len() != fam.len() {
        return Err(Error::DimensionMismatch { expected: fam.len(), found: c.len() });
    }
    let d = fam.target_dim();
    let vals = fam.values(x)?;
    Ok((0..d).map(|a| (0..fam.len()).map(|i| vals[i * d + a] * c.coeffs[i]).sum()).collect())
}

pub fn cs_vector(ker: &Kernel, x: Quaternion, v: Quaternion) -> Result<CoefficientVector> {
    family_cs_vector(&ker.family, x, &[v])
}

pub fn evaluate_member(c: &CoefficientVector, ker: &Kernel, x: Quaternion) -> Result<Quaternion> {
    Ok(family_evaluate(&ker.family, c, x)?[0])
}

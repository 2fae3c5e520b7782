//! Real quaternions `q = x0 + x1 i + x2 j + x3 k` and their polar (slice) form.

use std::f64::consts::PI;
use std::fmt;
use std::iter::Sum;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Quaternion {
    pub x0: f64,
    pub x1: f64,
    pub x2: f64,
    pub x3: f64,
}

impl Quaternion {
    pub const ZERO: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 0.0);
    pub const ONE: Quaternion = Quaternion::new(1.0, 0.0, 0.0, 0.0);
    pub const I: Quaternion = Quaternion::new(0.0, 1.0, 0.0, 0.0);
    pub const J: Quaternion = Quaternion::new(0.0, 0.0, 1.0, 0.0);
    pub const K: Quaternion = Quaternion::new(0.0, 0.0, 0.0, 1.0);

    #[inline]
    pub const fn new(x0: f64, x1: f64, x2: f64, x3: f64) -> Self {
        Quaternion { x0, x1, x2, x3 }
    }

    #[inline]
    pub const fn real(x: f64) -> Self {
        Quaternion::new(x, 0.0, 0.0, 0.0)
    }

    /// Embeds `z = a + ib` into the slice spanned by `1` and the unit imaginary `axis`.
    #[inline]
    pub fn in_slice(z: Complex64, axis: Quaternion) -> Self {
        Quaternion::real(z.re) + axis * z.im
    }

    /// `a + ib` read as a point of the standard slice `{a + i b}`.
    #[inline]
    pub fn from_complex(z: Complex64) -> Self {
        Quaternion::new(z.re, z.im, 0.0, 0.0)
    }

    #[inline]
    pub fn conj(self) -> Self {
        Quaternion::new(self.x0, -self.x1, -self.x2, -self.x3)
    }

    #[inline]
    pub fn norm2(self) -> f64 {
        self.x0 * self.x0 + self.x1 * self.x1 + self.x2 * self.x2 + self.x3 * self.x3
    }

    #[inline]
    pub fn norm(self) -> f64 {
        self.norm2().sqrt()
    }

    #[inline]
    pub fn re(self) -> f64 {
        self.x0
    }

    /// Imaginary part as a pure quaternion.
    #[inline]
    pub fn im(self) -> Quaternion {
        Quaternion::new(0.0, self.x1, self.x2, self.x3)
    }

    #[inline]
    pub fn is_real(self) -> bool {
        self.x1 == 0.0 && self.x2 == 0.0 && self.x3 == 0.0
    }

    #[inline]
    pub fn is_finite(self) -> bool {
        self.x0.is_finite() && self.x1.is_finite() && self.x2.is_finite() && self.x3.is_finite()
    }

    /// Largest absolute component.
    #[inline]
    pub fn max_abs(self) -> f64 {
        self.x0.abs().max(self.x1.abs()).max(self.x2.abs()).max(self.x3.abs())
    }

    pub fn inv(self) -> Option<Quaternion> {
        let n2 = self.norm2();
        if n2 == 0.0 {
            None
        } else {
            Some(self.conj() / n2)
        }
    }

    /// `q^n` by repeated squaring; `q^0 = 1`.
    pub fn powi(self, mut n: u32) -> Quaternion {
        let mut base = self;
        let mut acc = Quaternion::ONE;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            n >>= 1;
            if n > 0 {
                base = base * base;
            }
        }
        acc
    }

    /// Splits `q` into `(a + ib, J)` with `q = a + J b`, `b >= 0`, `J` unit imaginary.
    /// Real quaternions get `J = k`.
    pub fn slice_parts(self) -> (Complex64, Quaternion) {
        let v = self.im();
        let b = v.norm();
        if b == 0.0 {
            (Complex64::new(self.x0, 0.0), Quaternion::K)
        } else {
            (Complex64::new(self.x0, b), v / b)
        }
    }
}

impl fmt::Display for Quaternion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {:+}i {:+}j {:+}k", self.x0, self.x1, self.x2, self.x3)
    }
}

impl Add for Quaternion {
    type Output = Quaternion;
    #[inline]
    fn add(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.x0 + o.x0, self.x1 + o.x1, self.x2 + o.x2, self.x3 + o.x3)
    }
}

impl Sub for Quaternion {
    type Output = Quaternion;
    #[inline]
    fn sub(self, o: Quaternion) -> Quaternion {
        Quaternion::new(self.x0 - o.x0, self.x1 - o.x1, self.x2 - o.x2, self.x3 - o.x3)
    }
}

impl Neg for Quaternion {
    type Output = Quaternion;
    #[inline]
    fn neg(self) -> Quaternion {
        Quaternion::new(-self.x0, -self.x1, -self.x2, -self.x3)
    }
}

/// Hamilton product.
impl Mul for Quaternion {
    type Output = Quaternion;
    #[inline]
    fn mul(self, b: Quaternion) -> Quaternion {
        let a = self;
        Quaternion::new(
            a.x0 * b.x0 - a.x1 * b.x1 - a.x2 * b.x2 - a.x3 * b.x3,
            a.x0 * b.x1 + a.x1 * b.x0 + a.x2 * b.x3 - a.x3 * b.x2,
            a.x0 * b.x2 - a.x1 * b.x3 + a.x2 * b.x0 + a.x3 * b.x1,
            a.x0 * b.x3 + a.x1 * b.x2 - a.x2 * b.x1 + a.x3 * b.x0,
        )
    }
}

impl Mul<f64> for Quaternion {
    type Output = Quaternion;
    #[inline]
    fn mul(self, s: f64) -> Quaternion {
        Quaternion::new(self.x0 * s, self.x1 * s, self.x2 * s, self.x3 * s)
    }
}

impl Mul<Quaternion> for f64 {
    type Output = Quaternion;
    #[inline]
    fn mul(self, q: Quaternion) -> Quaternion {
        q * self
    }
}

impl Div<f64> for Quaternion {
    type Output = Quaternion;
    #[inline]
    fn div(self, s: f64) -> Quaternion {
        Quaternion::new(self.x0 / s, self.x1 / s, self.x2 / s, self.x3 / s)
    }
}

impl AddAssign for Quaternion {
    #[inline]
    fn add_assign(&mut self, o: Quaternion) {
        *self = *self + o;
    }
}

impl SubAssign for Quaternion {
    #[inline]
    fn sub_assign(&mut self, o: Quaternion) {
        *self = *self - o;
    }
}

impl MulAssign for Quaternion {
    #[inline]
    fn mul_assign(&mut self, o: Quaternion) {
        *self = *self * o;
    }
}

impl MulAssign<f64> for Quaternion {
    #[inline]
    fn mul_assign(&mut self, s: f64) {
        *self = *self * s;
    }
}

impl From<f64> for Quaternion {
    fn from(x: f64) -> Self {
        Quaternion::real(x)
    }
}

impl Sum for Quaternion {
    fn sum<I: Iterator<Item = Quaternion>>(iter: I) -> Quaternion {
        iter.fold(Quaternion::ZERO, |a, b| a + b)
    }
}

impl<'a> Sum<&'a Quaternion> for Quaternion {
    fn sum<I: Iterator<Item = &'a Quaternion>>(iter: I) -> Quaternion {
        iter.fold(Quaternion::ZERO, |a, b| a + *b)
    }
}

pub fn qmul(a: Quaternion, b: Quaternion) -> Quaternion {
    a * b
}

pub fn qconj(q: Quaternion) -> Quaternion {
    q.conj()
}

pub fn qnorm2(q: Quaternion) -> f64 {
    q.norm2()
}

pub fn qpow(q: Quaternion, n: u32) -> Quaternion {
    q.powi(n)
}

/// Unit imaginary quaternion on the upper hemisphere,
/// `J(θ1, φ) = i sinθ1 cosφ + j sinθ1 sinφ + k cosθ1`.
#[inline]
pub fn unit_axis(theta1: f64, phi: f64) -> Quaternion {
    let (s1, c1) = theta1.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Quaternion::new(0.0, s1 * cp, s1 * sp, c1)
}

/// `q = r (cos θ2 + J(θ1, φ) sin θ2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolarForm {
    pub r: f64,
    pub theta1: f64,
    pub theta2: f64,
    pub phi: f64,
    /// Set when `q` was real and the axis `J = k` is a convention, not data.
    pub degenerate_axis: bool,
}

impl PolarForm {
    pub fn axis(&self) -> Quaternion {
        unit_axis(self.theta1, self.phi)
    }
}

pub fn to_polar(q: Quaternion) -> Result<PolarForm> {
    let r = q.norm();
    if r == 0.0 || !r.is_finite() {
        return Err(Error::DegenerateModulus);
    }
    let mut v = [q.x1, q.x2, q.x3];
    let vn = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if vn == 0.0 {
        let theta2 = if q.x0 > 0.0 { 0.0 } else { PI };
        return Ok(PolarForm { r, theta1: 0.0, theta2, phi: 0.0, degenerate_axis: true });
    }
    // Keep J on the upper hemisphere; a flipped axis is absorbed by θ2 -> 2π - θ2.
    let flip = v[2] < 0.0;
    if flip {
        v = [-v[0], -v[1], -v[2]];
    }
    let theta1 = (v[2] / vn).clamp(-1.0, 1.0).acos();
    let mut phi = v[1].atan2(v[0]);
    if phi < 0.0 {
        phi += 2.0 * PI;
    }
    if phi >= 2.0 * PI {
        phi = 0.0;
    }
    let mut theta2 = vn.atan2(q.x0);
    if flip {
        theta2 = 2.0 * PI - theta2;
    }
    if theta2 >= 2.0 * PI {
        theta2 -= 2.0 * PI;
    }
    Ok(PolarForm { r, theta1, theta2, phi, degenerate_axis: false })
}

pub fn from_polar(p: &PolarForm) -> Quaternion {
    let (s, c) = p.theta2.sin_cos();
    Quaternion::real(p.r * c) + p.axis() * (p.r * s)
}

//! Dense quaternionic vectors and matrices.
//!
//! Vectors form a right module: scalars multiply from the right, operators act
//! from the left. Spectral questions (positivity, norms, inverse square roots)
//! go through the complex 2d x 2d embedding `q = z1 + z2 j -> [[z1, z2], [-conj z2, conj z1]]`,
//! which is a *-homomorphism and therefore preserves Hermiticity and spectra.

use std::ops::{Add, Index, IndexMut, Mul, Sub};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quaternion::Quaternion;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QVector(pub Vec<Quaternion>);

impl QVector {
    pub fn zeros(d: usize) -> Self {
        QVector(vec![Quaternion::ZERO; d])
    }

    pub fn basis(d: usize, i: usize) -> Self {
        let mut v = Self::zeros(d);
        v.0[i] = Quaternion::ONE;
        v
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Right scalar multiplication `(v q)_i = v_i q`.
    pub fn scale_right(&self, q: Quaternion) -> QVector {
        QVector(self.0.iter().map(|&x| x * q).collect())
    }

    pub fn norm2(&self) -> f64 {
        self.0.iter().map(|q| q.norm2()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm2().sqrt()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Quaternion> {
        self.0.iter()
    }
}

impl Index<usize> for QVector {
    type Output = Quaternion;
    fn index(&self, i: usize) -> &Quaternion {
        &self.0[i]
    }
}

impl IndexMut<usize> for QVector {
    fn index_mut(&mut self, i: usize) -> &mut Quaternion {
        &mut self.0[i]
    }
}

impl Add for &QVector {
    type Output = QVector;
    fn add(self, o: &QVector) -> QVector {
        assert_eq!(self.len(), o.len(), "vector dimension mismatch");
        QVector(self.0.iter().zip(&o.0).map(|(a, b)| *a + *b).collect())
    }
}

impl Sub for &QVector {
    type Output = QVector;
    fn sub(self, o: &QVector) -> QVector {
        assert_eq!(self.len(), o.len(), "vector dimension mismatch");
        QVector(self.0.iter().zip(&o.0).map(|(a, b)| *a - *b).collect())
    }
}

impl From<Vec<Quaternion>> for QVector {
    fn from(v: Vec<Quaternion>) -> Self {
        QVector(v)
    }
}

/// `<u|v> = sum_i conj(u_i) v_i`: conjugate-linear on the left, right-linear on the right.
pub fn inner(u: &QVector, v: &QVector) -> Result<Quaternion> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch { expected: u.len(), found: v.len() });
    }
    Ok(inner_slices(&u.0, &v.0))
}

#[inline]
pub(crate) fn inner_slices(u: &[Quaternion], v: &[Quaternion]) -> Quaternion {
    u.iter().zip(v).map(|(a, b)| a.conj() * *b).sum()
}

/// Row-major dense quaternionic matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QMatrix {
    rows: usize,
    cols: usize,
    data: Vec<Quaternion>,
}

impl QMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        QMatrix { rows, cols, data: vec![Quaternion::ZERO; rows * cols] }
    }

    pub fn identity(d: usize) -> Self {
        let mut m = Self::zeros(d, d);
        for i in 0..d {
            m[(i, i)] = Quaternion::ONE;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> Quaternion) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        QMatrix { rows, cols, data }
    }

    pub fn from_rows(rows: usize, cols: usize, data: Vec<Quaternion>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch { expected: rows * cols, found: data.len() });
        }
        Ok(QMatrix { rows, cols, data })
    }

    pub fn diagonal(d: &[Quaternion]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &x) in d.iter().enumerate() {
            m[(i, i)] = x;
        }
        m
    }

    /// Rank-one operator `|u><w|`, acting as `v -> u <w|v>`.
    pub fn outer(u: &QVector, w: &QVector) -> Self {
        Self::from_fn(u.len(), w.len(), |i, j| u[i] * w[j].conj())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn data(&self) -> &[Quaternion] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[Quaternion] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> QVector {
        QVector((0..self.rows).map(|i| self[(i, j)]).collect())
    }

    pub fn apply(&self, v: &QVector) -> Result<QVector> {
        if v.len() != self.cols {
            return Err(Error::DimensionMismatch { expected: self.cols, found: v.len() });
        }
        Ok(QVector(
            (0..self.rows)
                .map(|i| self.row(i).iter().zip(&v.0).map(|(a, b)| *a * *b).sum())
                .collect(),
        ))
    }

    pub fn matmul(&self, o: &QMatrix) -> Result<QMatrix> {
        if self.cols != o.rows {
            return Err(Error::DimensionMismatch { expected: self.cols, found: o.rows });
        }
        let mut out = QMatrix::zeros(self.rows, o.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == Quaternion::ZERO {
                    continue;
                }
                for j in 0..o.cols {
                    out.data[i * o.cols + j] += a * o.data[k * o.cols + j];
                }
            }
        }
        Ok(out)
    }

    /// `(A^dagger)_ij = conj(A_ji)`.
    pub fn adjoint(&self) -> QMatrix {
        QMatrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)].conj())
    }

    pub fn scale(&self, s: f64) -> QMatrix {
        QMatrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&q| q * s).collect() }
    }

    pub fn trace(&self) -> Quaternion {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// Largest absolute component over all entries.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, q| m.max(q.max_abs()))
    }

    /// `max |A - A^dagger|` over components.
    pub fn hermitian_defect(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut d: f64 = 0.0;
        for i in 0..self.rows {
            for j in i..self.cols {
                d = d.max((self[(i, j)] - self[(j, i)].conj()).max_abs());
            }
        }
        d
    }

    /// Scale- and dimension-aware tolerance `1e-10 * d * max|A|`.
    pub fn default_tol(&self) -> f64 {
        1e-10 * self.rows.max(1) as f64 * self.max_abs().max(f64::MIN_POSITIVE)
    }

    /// Complex `2r x 2c` image under `z1 + z2 j -> [[z1, z2], [-conj z2, conj z1]]`.
    pub fn embed_complex(&self) -> DMatrix<Complex64> {
        let mut m = DMatrix::<Complex64>::zeros(2 * self.rows, 2 * self.cols);
        for i in 0..self.rows {
            for j in 0..self.cols {
                let q = self[(i, j)];
                let z1 = Complex64::new(q.x0, q.x1);
                let z2 = Complex64::new(q.x2, q.x3);
                m[(2 * i, 2 * j)] = z1;
                m[(2 * i, 2 * j + 1)] = z2;
                m[(2 * i + 1, 2 * j)] = -z2.conj();
                m[(2 * i + 1, 2 * j + 1)] = z1.conj();
            }
        }
        m
    }

    /// Inverse of [`embed_complex`](Self::embed_complex), reading the upper row of each 2x2 block.
    pub fn from_embedded(m: &DMatrix<Complex64>) -> Result<QMatrix> {
        if m.nrows() % 2 != 0 || m.ncols() % 2 != 0 {
            return Err(Error::DimensionMismatch { expected: 2 * (m.nrows() / 2), found: m.nrows() });
        }
        Ok(QMatrix::from_fn(m.nrows() / 2, m.ncols() / 2, |i, j| {
            let z1 = m[(2 * i, 2 * j)];
            let z2 = m[(2 * i, 2 * j + 1)];
            Quaternion::new(z1.re, z1.im, z2.re, z2.im)
        }))
    }

    fn check_hermitian(&self, tol: f64) -> Result<()> {
        if !self.is_square() {
            return Err(Error::DimensionMismatch { expected: self.rows, found: self.cols });
        }
        let defect = self.hermitian_defect();
        if defect > tol {
            return Err(Error::NotHermitian { defect });
        }
        Ok(())
    }

    fn hermitian_eigen(&self) -> Result<SymmetricEigen<Complex64, nalgebra::Dyn>> {
        let mut e = self.embed_complex();
        // Symmetrize away rounding so the solver sees an exactly Hermitian input.
        let h = (&e + e.adjoint()) * Complex64::new(0.5, 0.0);
        e.copy_from(&h);
        SymmetricEigen::try_new(e, 1e-15, 0).ok_or(Error::EigenFailure)
    }

    /// All `2d` eigenvalues of the complex embedding, ascending. Each quaternionic
    /// eigenvalue appears twice.
    pub fn embedded_eigenvalues(&self, tol: f64) -> Result<Vec<f64>> {
        self.check_hermitian(tol)?;
        let eig = self.hermitian_eigen()?;
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        Ok(ev)
    }

    /// The `d` (standard) eigenvalues of a Hermitian quaternionic matrix, ascending.
    pub fn hermitian_eigenvalues(&self, tol: f64) -> Result<Vec<f64>> {
        Ok(self.embedded_eigenvalues(tol)?.into_iter().step_by(2).collect())
    }

    /// Positive semidefinite test: all embedding eigenvalues `>= -tol`.
    pub fn is_positive(&self, tol: f64) -> Result<bool> {
        let ev = self.embedded_eigenvalues(tol)?;
        Ok(ev.first().map_or(true, |&l| l >= -tol))
    }

    /// Operator norm of a Hermitian matrix: largest |eigenvalue| of the embedding.
    pub fn operator_norm(&self, tol: f64) -> Result<f64> {
        let ev = self.embedded_eigenvalues(tol)?;
        Ok(ev.iter().fold(0.0, |m: f64, l| m.max(l.abs())))
    }

    /// Singular values of the embedding, deduplicated to `min(r, c)` values, descending.
    pub fn singular_values(&self) -> Vec<f64> {
        if self.rows == 0 || self.cols == 0 {
            return Vec::new();
        }
        let svd = self.embed_complex().svd(false, false);
        let mut s: Vec<f64> = svd.singular_values.iter().copied().collect();
        s.sort_by(|a, b| b.total_cmp(a));
        s.into_iter().step_by(2).collect()
    }

    /// Numerical rank: singular values above `tol * s_max`.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let s = self.singular_values();
        let smax = s.first().copied().unwrap_or(0.0);
        s.iter().filter(|&&x| x > rel_tol * smax).count()
    }

    /// `A^{-1/2}` for Hermitian positive definite `A`, with the spectral condition number.
    pub fn inverse_sqrt(&self, tol: f64) -> Result<(QMatrix, f64)> {
        self.check_hermitian(tol)?;
        let eig = self.hermitian_eigen()?;
        let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
        let lmax = eig.eigenvalues.iter().copied().fold(0.0, f64::max);
        if lmin <= 0.0 {
            return Err(Error::IllConditionedBasis { cond: f64::INFINITY });
        }
        let v = &eig.eigenvectors;
        let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(1.0 / l.sqrt(), 0.0)));
        let m = v * d * v.adjoint();
        Ok((QMatrix::from_embedded(&m)?, lmax / lmin))
    }

    pub fn powi(&self, n: u32) -> Result<QMatrix> {
        let mut acc = QMatrix::identity(self.rows);
        for _ in 0..n {
            acc = acc.matmul(self)?;
        }
        Ok(acc)
    }
}

impl Index<(usize, usize)> for QMatrix {
    type Output = Quaternion;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Quaternion {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for QMatrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Quaternion {
        &mut self.data[i * self.cols + j]
    }
}

impl Add for &QMatrix {
    type Output = QMatrix;
    fn add(self, o: &QMatrix) -> QMatrix {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "matrix shape mismatch");
        QMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| *a + *b).collect(),
        }
    }
}

impl Sub for &QMatrix {
    type Output = QMatrix;
    fn sub(self, o: &QMatrix) -> QMatrix {
        assert_eq!((self.rows, self.cols), (o.rows, o.cols), "matrix shape mismatch");
        QMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&o.data).map(|(a, b)| *a - *b).collect(),
        }
    }
}

impl Mul for &QMatrix {
    type Output = QMatrix;
    fn mul(self, o: &QMatrix) -> QMatrix {
        self.matmul(o).expect("matrix shape mismatch")
    }
}

pub fn mat_apply(a: &QMatrix, v: &QVector) -> Result<QVector> {
    a.apply(v)
}

pub fn adjoint(a: &QMatrix) -> QMatrix {
    a.adjoint()
}

pub fn embed_complex(a: &QMatrix) -> DMatrix<Complex64> {
    a.embed_complex()
}

pub fn is_positive(a: &QMatrix, tol: f64) -> Result<bool> {
    a.is_positive(tol)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rq(rng: &mut impl Rng) -> Quaternion {
        Quaternion::new(
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        )
    }

    fn rv(rng: &mut impl Rng, d: usize) -> QVector {
        QVector((0..d).map(|_| rq(rng)).collect())
    }

    fn rm(rng: &mut impl Rng, d: usize) -> QMatrix {
        QMatrix::from_fn(d, d, |_, _| rq(rng))
    }

    fn close(a: Quaternion, b: Quaternion, tol: f64) -> bool {
        (a - b).max_abs() <= tol
    }

    #[test]
    fn inner_examples() {
        let e1 = QVector::basis(3, 0);
        assert_eq!(inner(&e1, &e1).unwrap(), Quaternion::ONE);
        let u = QVector(vec![Quaternion::I]);
        let v = QVector(vec![Quaternion::J]);
        assert_eq!(inner(&u, &v).unwrap(), -Quaternion::K);
        assert!(matches!(inner(&e1, &u), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn inner_is_right_linear() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (u, v, q) = (rv(&mut rng, 4), rv(&mut rng, 4), rq(&mut rng));
            let lhs = inner(&u, &v.scale_right(q)).unwrap();
            let rhs = inner(&u, &v).unwrap() * q;
            assert!(close(lhs, rhs, 1e-14));
            // left slot is conjugate-linear: <u q|v> = conj(q) <u|v>
            let lhs = inner(&u.scale_right(q), &v).unwrap();
            assert!(close(lhs, q.conj() * inner(&u, &v).unwrap(), 1e-14));
            // conjugate symmetry
            assert!(close(inner(&u, &v).unwrap(), inner(&v, &u).unwrap().conj(), 1e-15));
        }
    }

    #[test]
    fn apply_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v = rv(&mut rng, 3);
        assert_eq!(QMatrix::identity(3).apply(&v).unwrap(), v);
        let (u, w) = (rv(&mut rng, 3), rv(&mut rng, 3));
        let got = QMatrix::outer(&u, &w).apply(&v).unwrap();
        let expect = u.scale_right(inner(&w, &v).unwrap());
        for i in 0..3 {
            assert!(close(got[i], expect[i], 1e-14));
        }
        let a = QMatrix::diagonal(&[Quaternion::I]);
        assert_eq!(a.apply(&QVector(vec![Quaternion::J])).unwrap()[0], Quaternion::K);
    }

    #[test]
    fn right_linearity_of_operators() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = rm(&mut rng, 3);
        let (phi, psi, q, p) = (rv(&mut rng, 3), rv(&mut rng, 3), rq(&mut rng), rq(&mut rng));
        let lhs = a.apply(&(&phi.scale_right(q) + &psi.scale_right(p))).unwrap();
        let rhs = &a.apply(&phi).unwrap().scale_right(q) + &a.apply(&psi).unwrap().scale_right(p);
        for i in 0..3 {
            assert!(close(lhs[i], rhs[i], 1e-14));
        }
    }

    #[test]
    fn adjoint_examples() {
        assert_eq!(QMatrix::identity(4).adjoint(), QMatrix::identity(4));
        assert_eq!(QMatrix::diagonal(&[Quaternion::I]).adjoint(), QMatrix::diagonal(&[-Quaternion::I]));
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (u, w) = (rv(&mut rng, 3), rv(&mut rng, 3));
        let lhs = QMatrix::outer(&u, &w).adjoint();
        let rhs = QMatrix::outer(&w, &u);
        assert!((&lhs - &rhs).max_abs() < 1e-15);
    }

    #[test]
    fn adjoint_pairing() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let a = rm(&mut rng, 4);
            let (u, v) = (rv(&mut rng, 4), rv(&mut rng, 4));
            let lhs = inner(&a.adjoint().apply(&u).unwrap(), &v).unwrap();
            let rhs = inner(&u, &a.apply(&v).unwrap()).unwrap();
            assert!(close(lhs, rhs, 1e-12));
        }
    }

    #[test]
    fn embedding_examples() {
        let one = QMatrix::identity(1).embed_complex();
        assert_eq!(one, DMatrix::<Complex64>::identity(2, 2));
        let j = QMatrix::diagonal(&[Quaternion::J]).embed_complex();
        let c = |x: f64| Complex64::new(x, 0.0);
        assert_eq!(j, DMatrix::from_row_slice(2, 2, &[c(0.0), c(1.0), c(-1.0), c(0.0)]));
    }

    #[test]
    fn embedding_is_a_star_homomorphism() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..20 {
            let (a, b) = (rm(&mut rng, 3), rm(&mut rng, 3));
            let lhs = (&a * &b).embed_complex();
            let rhs = a.embed_complex() * b.embed_complex();
            assert!((lhs - rhs).camax() < 1e-14);
            let lhs = (&a + &b).embed_complex();
            assert!((lhs - (a.embed_complex() + b.embed_complex())).camax() < 1e-15);
            assert!((a.adjoint().embed_complex() - a.embed_complex().adjoint()).camax() == 0.0);
            assert_eq!(QMatrix::from_embedded(&a.embed_complex()).unwrap(), a);
        }
    }

    #[test]
    fn positivity_examples() {
        assert!(QMatrix::identity(3).is_positive(1e-12).unwrap());
        assert!(!QMatrix::diagonal(&[Quaternion::real(-1.0)]).is_positive(1e-12).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = rv(&mut rng, 4);
        let p = QMatrix::outer(&u, &u);
        assert!(p.is_positive(p.default_tol()).unwrap());
        assert!(matches!(
            QMatrix::diagonal(&[Quaternion::I]).is_positive(1e-12),
            Err(Error::NotHermitian { .. })
        ));
    }

    #[test]
    fn rank_one_projector_spectrum() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let u = rv(&mut rng, 4);
        let n2 = u.norm2();
        let ev = QMatrix::outer(&u, &u).hermitian_eigenvalues(1e-12).unwrap();
        assert!((ev[3] - n2).abs() < 1e-12);
        for l in &ev[..3] {
            assert!(l.abs() < 1e-12);
        }
    }

    #[test]
    fn inverse_sqrt_squares_to_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let b = rm(&mut rng, 4);
        let a = &(&b.adjoint() * &b) + &QMatrix::identity(4);
        let (s, cond) = a.inverse_sqrt(1e-12).unwrap();
        assert!(cond >= 1.0);
        let prod = &(&s * &a) * &s;
        assert!((&prod - &QMatrix::identity(4)).max_abs() < 1e-12);
    }

    #[test]
    fn singular_values_and_rank() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let u = rv(&mut rng, 3);
        let w = rv(&mut rng, 5);
        let m = QMatrix::outer(&u, &w);
        assert_eq!(m.singular_values().len(), 3);
        assert_eq!(m.rank(1e-10), 1);
        assert_eq!(QMatrix::identity(4).rank(1e-10), 4);
    }
}

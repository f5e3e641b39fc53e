//! Dense complex linear algebra for small Hilbert spaces.
//!
//! Everything here is generic over [`Real`]; the crate root exports `f64`
//! aliases ([`crate::ComplexMatrix`], [`crate::PureState`],
//! [`crate::DensityMatrix`]) which is what the rest of the library uses.

use std::fmt;
use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Unnormalized complex vector.
pub type CVector<T> = Vec<Complex<T>>;

#[inline]
pub fn c<T: Real>(re: f64, im: f64) -> Complex<T> {
    Complex::new(T::lit(re), T::lit(im))
}

#[inline]
pub fn re<T: Real>(x: T) -> Complex<T> {
    Complex::new(x, T::zero())
}

/// `<a|b>`, antilinear in the first argument.
pub fn inner<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
    a.iter().zip(b).fold(Complex::new(T::zero(), T::zero()), |acc, (x, y)| acc + x.conj() * y)
}

pub fn norm_sqr<T: Real>(v: &[Complex<T>]) -> T {
    v.iter().map(|x| x.norm_sqr()).sum()
}

pub fn scale_vec<T: Real>(v: &[Complex<T>], s: Complex<T>) -> CVector<T> {
    v.iter().map(|x| x * s).collect()
}

pub fn axpy<T: Real>(y: &mut [Complex<T>], a: Complex<T>, x: &[Complex<T>]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Square complex matrix stored row-major.
#[derive(Clone, PartialEq)]
pub struct Matrix<T: Real> {
    dim: usize,
    data: Vec<Complex<T>>,
}

impl<T: Real> fmt::Debug for Matrix<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix({}x{})", self.dim, self.dim)?;
        for i in 0..self.dim {
            let row: Vec<String> = (0..self.dim)
                .map(|j| {
                    let z = self[(i, j)];
                    format!("{:+.6}{:+.6}i", z.re, z.im)
                })
                .collect();
            writeln!(f, "  [{}]", row.join(", "))?;
        }
        Ok(())
    }
}

impl<T: Real> Matrix<T> {
    pub fn zeros(dim: usize) -> Self {
        assert!(dim >= 1, "matrix dimension must be positive");
        Self { dim, data: vec![Complex::new(T::zero(), T::zero()); dim * dim] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m[(i, i)] = re(T::one());
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> Complex<T>) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Builds a matrix from row-major entries; panics unless `data.len()` is a square.
    pub fn from_row_major(data: Vec<Complex<T>>) -> Self {
        let dim = (data.len() as f64).sqrt().round() as usize;
        assert!(dim >= 1 && dim * dim == data.len(), "row-major data is not square");
        Self { dim, data }
    }

    pub fn from_diagonal(diag: &[Complex<T>]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    /// `|a><b|`
    pub fn outer(a: &[Complex<T>], b: &[Complex<T>]) -> Self {
        assert_eq!(a.len(), b.len());
        Self::from_fn(a.len(), |i, j| a[i] * b[j].conj())
    }

    /// `|v><v|`
    pub fn projector(v: &[Complex<T>]) -> Self {
        Self::outer(v, v)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn as_slice(&self) -> &[Complex<T>] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<Complex<T>> {
        self.data
    }

    pub fn dagger(&self) -> Self {
        Self::from_fn(self.dim, |i, j| self[(j, i)].conj())
    }

    pub fn trace(&self) -> Complex<T> {
        (0..self.dim).fold(Complex::new(T::zero(), T::zero()), |acc, i| acc + self[(i, i)])
    }

    pub fn scale(&self, s: Complex<T>) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|x| x * s).collect() }
    }

    pub fn scale_re(&self, s: T) -> Self {
        self.scale(re(s))
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: Complex<T>, other: &Self) {
        debug_assert_eq!(self.dim, other.dim);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.dim, rhs.dim, "matmul dimension mismatch");
        let n = self.dim;
        let mut out = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a.re == T::zero() && a.im == T::zero() {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * rhs.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn apply(&self, v: &[Complex<T>]) -> CVector<T> {
        assert_eq!(self.dim, v.len(), "matrix-vector dimension mismatch");
        let n = self.dim;
        (0..n)
            .map(|i| {
                self.data[i * n..(i + 1) * n]
                    .iter()
                    .zip(v)
                    .fold(Complex::new(T::zero(), T::zero()), |acc, (a, x)| acc + a * x)
            })
            .collect()
    }

    /// `<a|M|b>`
    pub fn sandwich(&self, a: &[Complex<T>], b: &[Complex<T>]) -> Complex<T> {
        inner(a, &self.apply(b))
    }

    pub fn commutator(&self, rhs: &Self) -> Self {
        self.matmul(rhs) - rhs.matmul(self)
    }

    pub fn anticommutator(&self, rhs: &Self) -> Self {
        self.matmul(rhs) + rhs.matmul(self)
    }

    /// `A ⊗ B` with `A = self`.
    pub fn kron(&self, rhs: &Self) -> Self {
        let (n, m) = (self.dim, rhs.dim);
        Self::from_fn(n * m, |i, j| self[(i / m, j / m)] * rhs[(i % m, j % m)])
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().map(|z| z.norm()).fold(T::zero(), T::max)
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
    }

    /// Largest `|m_ij - conj(m_ji)|`.
    pub fn hermiticity_deviation(&self) -> T {
        let n = self.dim;
        let mut worst = T::zero();
        for i in 0..n {
            for j in i..n {
                worst = worst.max((self[(i, j)] - self[(j, i)].conj()).norm());
            }
        }
        worst
    }

    pub fn is_hermitian(&self, tol: T) -> bool {
        self.hermiticity_deviation() <= tol
    }

    /// `½(m + m†)`
    pub fn hermitian_part(&self) -> Self {
        let half = re(T::lit(0.5));
        Self::from_fn(self.dim, |i, j| (self[(i, j)] + self[(j, i)].conj()) * half)
    }

    pub fn ensure_hermitian(&self) -> Result<()> {
        let dev = self.hermiticity_deviation();
        if dev > T::hermitian_tol() {
            return Err(Error::NotHermitian { deviation: dev.to_f64().unwrap_or(f64::NAN) });
        }
        Ok(())
    }

    pub fn ensure_dim(&self, dim: usize) -> Result<()> {
        if self.dim != dim {
            return Err(Error::DimMismatch { expected: dim, found: self.dim });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    /// Spectral (operator) norm, the largest singular value.
    pub fn operator_norm(&self) -> T {
        let gram = self.dagger().matmul(self);
        eigh(&gram.hermitian_part())
            .map(|e| e.values.first().copied().unwrap_or(T::zero()).max(T::zero()).sqrt())
            .unwrap_or_else(|_| T::nan())
    }

    /// Column-stacked vectorization: `vec(m)[i + n*j] = m_ij`.
    pub fn vec_columns(&self) -> CVector<T> {
        let n = self.dim;
        let mut out = vec![Complex::new(T::zero(), T::zero()); n * n];
        for j in 0..n {
            for i in 0..n {
                out[i + n * j] = self[(i, j)];
            }
        }
        out
    }

    pub fn unvec_columns(v: &[Complex<T>]) -> Self {
        let n = (v.len() as f64).sqrt().round() as usize;
        assert_eq!(n * n, v.len());
        Self::from_fn(n, |i, j| v[i + n * j])
    }

    /// Casts entries to another scalar type.
    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            dim: self.dim,
            data: self
                .data
                .iter()
                .map(|z| Complex::new(U::lit(z.re.to_f64().unwrap()), U::lit(z.im.to_f64().unwrap())))
                .collect(),
        }
    }
}

impl<T: Real> Index<(usize, usize)> for Matrix<T> {
    type Output = Complex<T>;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &Complex<T> {
        &self.data[i * self.dim + j]
    }
}

impl<T: Real> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut Complex<T> {
        &mut self.data[i * self.dim + j]
    }
}

impl<T: Real> Add for Matrix<T> {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        self += &rhs;
        self
    }
}

impl<T: Real> Sub for Matrix<T> {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        self -= &rhs;
        self
    }
}

impl<T: Real> Add<&Matrix<T>> for &Matrix<T> {
    type Output = Matrix<T>;
    fn add(self, rhs: &Matrix<T>) -> Matrix<T> {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl<T: Real> Sub<&Matrix<T>> for &Matrix<T> {
    type Output = Matrix<T>;
    fn sub(self, rhs: &Matrix<T>) -> Matrix<T> {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl<T: Real> AddAssign<&Matrix<T>> for Matrix<T> {
    fn add_assign(&mut self, rhs: &Matrix<T>) {
        assert_eq!(self.dim, rhs.dim, "matrix add dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl<T: Real> SubAssign<&Matrix<T>> for Matrix<T> {
    fn sub_assign(&mut self, rhs: &Matrix<T>) {
        assert_eq!(self.dim, rhs.dim, "matrix sub dimension mismatch");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl<T: Real> Neg for Matrix<T> {
    type Output = Self;
    fn neg(self) -> Self {
        self.scale_re(-T::one())
    }
}

impl<T: Real> Mul for &Matrix<T> {
    type Output = Matrix<T>;
    fn mul(self, rhs: &Matrix<T>) -> Matrix<T> {
        self.matmul(rhs)
    }
}

/// Normalized pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket<T: Real> {
    amps: CVector<T>,
}

impl<T: Real> Ket<T> {
    /// Computational basis state `|index>`.
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut amps = vec![Complex::new(T::zero(), T::zero()); dim];
        amps[index] = re(T::one());
        Self { amps }
    }

    pub fn from_amplitudes(amps: CVector<T>) -> Result<Self> {
        normalize(amps).map(|(k, _)| k)
    }

    /// Wraps amplitudes that are already unit-norm; only checked in debug builds.
    pub fn from_normalized_unchecked(amps: CVector<T>) -> Self {
        debug_assert!((norm_sqr(&amps) - T::one()).abs() < T::lit(1e-6));
        Self { amps }
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amps
    }

    pub fn into_amplitudes(self) -> CVector<T> {
        self.amps
    }

    pub fn projector(&self) -> Matrix<T> {
        Matrix::projector(&self.amps)
    }

    /// `|<self|other>|²`
    pub fn fidelity(&self, other: &Self) -> T {
        inner(&self.amps, &other.amps).norm_sqr()
    }

    /// Same ray (equal up to global phase) within `1 - fidelity <= tol`.
    pub fn same_ray(&self, other: &Self, tol: T) -> bool {
        self.dim() == other.dim() && T::one() - self.fidelity(other) <= tol
    }

    /// Multiplies by the phase that makes the largest-magnitude amplitude real
    /// and non-negative (first such index on ties).
    pub fn phase_fixed(mut self) -> Self {
        fix_phase(&mut self.amps);
        self
    }
}

impl<T: Real> Index<usize> for Ket<T> {
    type Output = Complex<T>;
    fn index(&self, i: usize) -> &Complex<T> {
        &self.amps[i]
    }
}

fn fix_phase<T: Real>(v: &mut [Complex<T>]) {
    let max = v.iter().map(|z| z.norm()).fold(T::zero(), T::max);
    if max <= T::zero() {
        return;
    }
    let slack = max * T::lit(1e-9);
    let pivot = v.iter().position(|z| z.norm() >= max - slack).unwrap_or(0);
    let z = v[pivot];
    let phase = z.conj() / z.norm();
    for x in v.iter_mut() {
        *x *= phase;
    }
    // exact zero imaginary part on the pivot
    v[pivot] = re(v[pivot].norm());
}

/// Normalizes `v`, returning the state and the pre-normalization norm.
pub fn normalize<T: Real>(v: CVector<T>) -> Result<(Ket<T>, T)> {
    let norm = norm_sqr(&v).sqrt();
    if !(norm > T::zero_norm()) {
        return Err(Error::ZeroVector { norm: norm.to_f64().unwrap_or(f64::NAN) });
    }
    let inv = re(T::one() / norm);
    Ok((Ket { amps: v.into_iter().map(|x| x * inv).collect() }, norm))
}

/// Haar-random pure state (normalized complex Gaussian vector).
pub fn haar_state<T: Real, R: rand::Rng + ?Sized>(dim: usize, rng: &mut R) -> Ket<T> {
    use rand_distr::{Distribution, StandardNormal};
    loop {
        let v: CVector<T> = (0..dim)
            .map(|_| {
                let a: f64 = StandardNormal.sample(rng);
                let b: f64 = StandardNormal.sample(rng);
                Complex::new(T::lit(a), T::lit(b))
            })
            .collect();
        if let Ok((k, _)) = normalize(v) {
            return k;
        }
    }
}

/// Hermitian matrix, trace not enforced.
#[derive(Clone, Debug, PartialEq)]
pub struct Density<T: Real> {
    matrix: Matrix<T>,
}

impl<T: Real> Density<T> {
    pub fn new(matrix: Matrix<T>) -> Result<Self> {
        matrix.ensure_hermitian()?;
        Ok(Self { matrix })
    }

    /// Hermitizes without checking; used where the input is hermitian up to
    /// integration noise.
    pub fn from_hermitian_part(matrix: &Matrix<T>) -> Self {
        Self { matrix: matrix.hermitian_part() }
    }

    pub fn pure(state: &Ket<T>) -> Self {
        Self { matrix: state.projector() }
    }

    /// `𝟙/d`
    pub fn maximally_mixed(dim: usize) -> Self {
        Self { matrix: Matrix::identity(dim).scale_re(T::one() / T::lit(dim as f64)) }
    }

    pub fn dim(&self) -> usize {
        self.matrix.dim()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.matrix
    }

    pub fn trace(&self) -> T {
        self.matrix.trace().re
    }

    pub fn expectation(&self, observable: &Matrix<T>) -> T {
        self.matrix.matmul(observable).trace().re
    }
}

/// Eigendecomposition of a hermitian matrix.
#[derive(Clone, Debug)]
pub struct Eigh<T: Real> {
    /// Sorted descending.
    pub values: Vec<T>,
    /// Orthonormal, phase-fixed, in the order of `values`.
    pub vectors: Vec<Ket<T>>,
}

impl<T: Real> Eigh<T> {
    pub fn pairs(&self) -> impl Iterator<Item = (T, &Ket<T>)> {
        self.values.iter().copied().zip(&self.vectors)
    }

    pub fn min_value(&self) -> T {
        self.values.last().copied().unwrap_or(T::zero())
    }

    pub fn reconstruct(&self) -> Matrix<T> {
        let n = self.vectors.first().map_or(1, Ket::dim);
        let mut m = Matrix::zeros(n);
        for (l, v) in self.pairs() {
            m.add_scaled(re(l), &v.projector());
        }
        m
    }
}

/// Hermitian eigendecomposition by cyclic complex Jacobi rotations.
///
/// Eigenvalues come out sorted descending. Within a (numerically) degenerate
/// group the phase-fixed eigenvectors are ordered lexicographically, larger
/// leading components first, so degenerate jump menus are reproducible.
pub fn eigh<T: Real>(m: &Matrix<T>) -> Result<Eigh<T>> {
    m.ensure_hermitian()?;
    let n = m.dim();
    let mut a = m.hermitian_part();
    let mut v = Matrix::<T>::identity(n);
    let scale = a.frobenius_norm().max(T::min_positive_value());
    let tol = T::jacobi_tol() * scale;

    for _sweep in 0..64 {
        let mut off = T::zero();
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)].norm_sqr();
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= T::min_positive_value() {
                    continue;
                }
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (T::lit(2.0) * mag);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let cs = T::one() / (t * t + T::one()).sqrt();
                let sn = t * cs;
                // J = diag(1, conj(phase)) on (p,q) followed by the real rotation.
                let j_pp = re(cs);
                let j_pq = re(sn);
                let j_qp = re(-sn) * phase.conj();
                let j_qq = re(cs) * phase.conj();
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * j_pp + akq * j_qp;
                    a[(k, q)] = akp * j_pq + akq * j_qq;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * j_pp + vkq * j_qp;
                    v[(k, q)] = vkp * j_pq + vkq * j_qq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = j_pp.conj() * apk + j_qp.conj() * aqk;
                    a[(q, k)] = j_pq.conj() * apk + j_qq.conj() * aqk;
                }
                a[(p, q)] = re(T::zero());
                a[(q, p)] = re(T::zero());
                a[(p, p)] = re(a[(p, p)].re);
                a[(q, q)] = re(a[(q, q)].re);
            }
        }
    }

    let mut pairs: Vec<(T, CVector<T>)> = (0..n)
        .map(|j| {
            let mut col: CVector<T> = (0..n).map(|i| v[(i, j)]).collect();
            fix_phase(&mut col);
            (a[(j, j)].re, col)
        })
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));

    // Tie-break degenerate runs by eigenvector.
    let tie = T::sign_eps() * scale.max(T::one()) * T::lit(1e3);
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && (pairs[end - 1].0 - pairs[end].0).abs() <= tie {
            end += 1;
        }
        if end - start > 1 {
            pairs[start..end].sort_by(|x, y| lex_desc(&x.1, &y.1));
        }
        start = end;
    }

    let (values, vectors) =
        pairs.into_iter().map(|(l, v)| (l, Ket::from_normalized_unchecked(v))).unzip();
    Ok(Eigh { values, vectors })
}

fn lex_desc<T: Real>(a: &[Complex<T>], b: &[Complex<T>]) -> std::cmp::Ordering {
    use std::cmp::Ordering;
    let key_tol = T::lit(1e-9);
    for (x, y) in a.iter().zip(b) {
        for (u, w) in [(x.re, y.re), (x.im, y.im)] {
            if (u - w).abs() > key_tol {
                return if u > w { Ordering::Less } else { Ordering::Greater };
            }
        }
    }
    Ordering::Equal
}

/// `½ Σ |λ_i(a - b)|`
pub fn trace_distance<T: Real>(a: &Density<T>, b: &Density<T>) -> Result<T> {
    if a.dim() != b.dim() {
        return Err(Error::DimMismatch { expected: a.dim(), found: b.dim() });
    }
    let diff = a.matrix() - b.matrix();
    trace_norm_half(&diff)
}

/// `½ ‖m‖₁` of the hermitian part of `m`.
pub fn trace_norm_half<T: Real>(m: &Matrix<T>) -> Result<T> {
    let e = eigh(&m.hermitian_part())?;
    Ok(e.values.iter().map(|l| l.abs()).sum::<T>() * T::lit(0.5))
}

/// Principal square root of a positive semidefinite matrix.
///
/// Eigenvalues in `(-tol, 0)` are clipped to zero; anything below `-tol`
/// is reported as [`Error::NotPsd`].
pub fn sqrtm_psd<T: Real>(m: &Matrix<T>, tol: T) -> Result<Matrix<T>> {
    let e = eigh(m)?;
    let min = e.min_value();
    if min < -tol {
        return Err(Error::NotPsd { min_eigenvalue: min.to_f64().unwrap_or(f64::NAN) });
    }
    let mut out = Matrix::zeros(m.dim());
    for (l, v) in e.pairs() {
        out.add_scaled(re(l.max(T::zero()).sqrt()), &v.projector());
    }
    Ok(out)
}

/// Pauli and ladder operators in the convention `σ_z = |1><1| - |0><0|`,
/// `σ_+ = |1><0|`, `σ_- = |0><1|`.
pub mod pauli {
    use super::*;

    pub fn sigma_x<T: Real>() -> Matrix<T> {
        Matrix::from_row_major(vec![c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
    }

    pub fn sigma_y<T: Real>() -> Matrix<T> {
        // chosen so that σ_+ = (σ_x + iσ_y)/2 and [σ_x, σ_y] = 2iσ_z
        Matrix::from_row_major(vec![c(0., 0.), c(0., 1.), c(0., -1.), c(0., 0.)])
    }

    pub fn sigma_z<T: Real>() -> Matrix<T> {
        Matrix::from_row_major(vec![c(-1., 0.), c(0., 0.), c(0., 0.), c(1., 0.)])
    }

    pub fn sigma_plus<T: Real>() -> Matrix<T> {
        Matrix::from_row_major(vec![c(0., 0.), c(0., 0.), c(1., 0.), c(0., 0.)])
    }

    pub fn sigma_minus<T: Real>() -> Matrix<T> {
        Matrix::from_row_major(vec![c(0., 0.), c(1., 0.), c(0., 0.), c(0., 0.)])
    }

    pub fn plus<T: Real>() -> Ket<T> {
        let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        Ket::from_normalized_unchecked(vec![re(s), re(s)])
    }

    pub fn minus<T: Real>() -> Ket<T> {
        let s = T::lit(std::f64::consts::FRAC_1_SQRT_2);
        Ket::from_normalized_unchecked(vec![re(s), re(-s)])
    }
}

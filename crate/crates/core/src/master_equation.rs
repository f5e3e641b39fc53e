//! Time-local GKSL generators with signed, time-dependent rates.
//!
//! ```text
//! L_t[ρ] = -i[H(t), ρ] + Σ_α γ_α(t) ( L_α ρ L_α† - ½{L_α† L_α, ρ} )
//! ```
//!
//! Rates may be negative. Operators and rates are callables of time that are
//! evaluated lazily; [`Generator::at`] freezes everything at one instant into a
//! [`Snapshot`], which is what the steppers work with.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::{eigh, haar_state, inner, re, CVector, Ket, Matrix};
use crate::scalar::Real;

/// Time-dependent operator.
#[derive(Clone)]
pub enum OperatorFn<T: Real> {
    Constant(Matrix<T>),
    Dynamic(Arc<dyn Fn(T) -> Matrix<T> + Send + Sync>),
}

impl<T: Real> OperatorFn<T> {
    pub fn dynamic(f: impl Fn(T) -> Matrix<T> + Send + Sync + 'static) -> Self {
        Self::Dynamic(Arc::new(f))
    }

    pub fn eval(&self, t: T) -> Matrix<T> {
        match self {
            Self::Constant(m) => m.clone(),
            Self::Dynamic(f) => f(t),
        }
    }
}

impl<T: Real> From<Matrix<T>> for OperatorFn<T> {
    fn from(m: Matrix<T>) -> Self {
        Self::Constant(m)
    }
}

/// Time-dependent real rate.
#[derive(Clone)]
pub enum RateFn<T: Real> {
    Constant(T),
    Dynamic(Arc<dyn Fn(T) -> T + Send + Sync>),
}

impl<T: Real> RateFn<T> {
    pub fn dynamic(f: impl Fn(T) -> T + Send + Sync + 'static) -> Self {
        Self::Dynamic(Arc::new(f))
    }

    pub fn eval(&self, t: T) -> T {
        match self {
            Self::Constant(r) => *r,
            Self::Dynamic(f) => f(t),
        }
    }
}

/// One dissipative channel `(L_α(t), γ_α(t))`.
#[derive(Clone)]
pub struct Channel<T: Real> {
    pub jump_operator: OperatorFn<T>,
    pub rate: RateFn<T>,
}

impl<T: Real> Channel<T> {
    pub fn new(jump_operator: impl Into<OperatorFn<T>>, rate: RateFn<T>) -> Self {
        Self { jump_operator: jump_operator.into(), rate }
    }

    pub fn constant(jump_operator: Matrix<T>, rate: T) -> Self {
        Self::new(jump_operator, RateFn::Constant(rate))
    }
}

/// Master equation `dρ/dt = L_t[ρ]`, optionally with an overridden decay
/// operator Γ(t) (trace-non-preserving equations).
#[derive(Clone)]
pub struct Generator<T: Real> {
    dim: usize,
    hamiltonian: OperatorFn<T>,
    channels: Vec<Channel<T>>,
    trace_sink: Option<OperatorFn<T>>,
}

impl<T: Real> fmt::Debug for Generator<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Generator")
            .field("dim", &self.dim)
            .field("channels", &self.channels.len())
            .field("trace_sink", &self.trace_sink.is_some())
            .finish()
    }
}

impl<T: Real> Generator<T> {
    pub fn new(dim: usize, hamiltonian: impl Into<OperatorFn<T>>) -> Self {
        Self { dim, hamiltonian: hamiltonian.into(), channels: Vec::new(), trace_sink: None }
    }

    /// No Hamiltonian, no channels.
    pub fn trivial(dim: usize) -> Self {
        Self::new(dim, Matrix::zeros(dim))
    }

    pub fn with_channel(mut self, channel: Channel<T>) -> Self {
        self.channels.push(channel);
        self
    }

    /// Replaces `Γ(t) = Σ γ_α L_α† L_α` in the anticommutator by `sink(t)`.
    pub fn with_trace_sink(mut self, sink: impl Into<OperatorFn<T>>) -> Self {
        self.trace_sink = Some(sink.into());
        self
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn channels(&self) -> &[Channel<T>] {
        &self.channels
    }

    pub fn has_trace_sink(&self) -> bool {
        self.trace_sink.is_some()
    }

    pub fn hamiltonian(&self, t: T) -> Matrix<T> {
        self.hamiltonian.eval(t)
    }

    pub fn rates(&self, t: T) -> Vec<T> {
        self.channels.iter().map(|c| c.rate.eval(t)).collect()
    }

    pub fn min_rate(&self, t: T) -> T {
        self.rates(t).into_iter().fold(T::infinity(), T::min)
    }

    /// Freezes the generator at time `t`.
    ///
    /// Panics if a callable returns an operator of the wrong dimension.
    pub fn at(&self, t: T) -> Snapshot<T> {
        let h = self.hamiltonian.eval(t);
        assert_eq!(h.dim(), self.dim, "hamiltonian dimension");
        let channels: Vec<FrozenChannel<T>> = self
            .channels
            .iter()
            .map(|c| {
                let op = c.jump_operator.eval(t);
                assert_eq!(op.dim(), self.dim, "jump operator dimension");
                let op_dag = op.dagger();
                let op_dag_op = op_dag.matmul(&op);
                FrozenChannel { op, op_dag, op_dag_op, rate: c.rate.eval(t) }
            })
            .collect();
        let mut gamma_l = Matrix::zeros(self.dim);
        for ch in &channels {
            gamma_l.add_scaled(re(ch.rate), &ch.op_dag_op);
        }
        let gamma = match &self.trace_sink {
            Some(sink) => {
                let g = sink.eval(t);
                assert_eq!(g.dim(), self.dim, "trace sink dimension");
                g
            }
            None => gamma_l.clone(),
        };
        let k = &h - &gamma.scale(Complex::new(T::zero(), T::lit(0.5)));
        Snapshot { time: t, dim: self.dim, hamiltonian: h, channels, gamma_l, gamma, k }
    }

    /// `Γ(t)`
    pub fn gamma_big(&self, t: T) -> Matrix<T> {
        self.at(t).gamma
    }

    /// `K(t) = H(t) - (i/2)Γ(t)`
    pub fn effective_hamiltonian(&self, t: T) -> Matrix<T> {
        self.at(t).k
    }

    /// `J_t[ρ] = Σ γ_α L_α ρ L_α†`
    pub fn jump_superop_apply(&self, t: T, rho: &Matrix<T>) -> Result<Matrix<T>> {
        rho.ensure_dim(self.dim)?;
        Ok(self.at(t).jump_apply(rho))
    }

    /// `L_t[ρ]`
    pub fn lindblad_apply(&self, t: T, rho: &Matrix<T>) -> Result<Matrix<T>> {
        rho.ensure_dim(self.dim)?;
        Ok(self.at(t).lindblad_apply(rho))
    }

    /// CP divisibility at `t`: every rate `>= -ε`.
    pub fn is_cp_divisible_at(&self, t: T) -> bool {
        self.min_rate(t) >= -T::sign_eps()
    }

    /// Sampled P-divisibility test via positivity of `W_{ψ,t}`.
    ///
    /// One-sided: `false` certifies a violation, `true` only means none was
    /// found on the computational basis plus `sample_count` Haar-random
    /// states (each refined by a short local search).
    pub fn is_p_divisible_at(&self, t: T, sample_count: usize) -> bool {
        self.min_w_eigenvalue(t, sample_count) >= -T::sign_eps()
    }

    /// Smallest eigenvalue of `W_{ψ,t}` on `span{ψ}^⊥` found by sampling.
    pub fn min_w_eigenvalue(&self, t: T, sample_count: usize) -> T {
        let snap = self.at(t);
        if snap.channels.iter().all(|c| c.rate >= T::zero()) {
            // W is a compression of a CP map applied to a projector
            return snap.min_w_over_basis();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
        let mut seed: Option<(T, CVector<T>)> = None;
        for _ in 0..sample_count.max(1) {
            let psi = haar_state::<T, _>(self.dim, &mut rng);
            let w = snap.min_w_eigenvalue(psi.amplitudes());
            if seed.as_ref().map_or(true, |(bw, _)| w < *bw) {
                seed = Some((w, psi.into_amplitudes()));
            }
        }
        let mut best = snap.min_w_over_basis();
        // local refinement around the best sample
        if let Some((mut fx, mut x)) = seed {
            let mut step = T::lit(0.2);
            for _ in 0..200 {
                let dir = haar_state::<T, _>(self.dim, &mut rng);
                let trial_raw: CVector<T> =
                    x.iter().zip(dir.amplitudes()).map(|(a, b)| a + b * re(step)).collect();
                let Ok((trial, _)) = crate::linalg::normalize(trial_raw) else { continue };
                let ft = snap.min_w_eigenvalue(trial.amplitudes());
                if ft < fx {
                    x = trial.into_amplitudes();
                    fx = ft;
                } else {
                    step *= T::lit(0.9);
                }
            }
            best = best.min(fx);
        }
        best
    }

    pub fn divisibility_report(&self, t: T, sample_count: usize) -> DivisibilityReport {
        let min_rate = self.min_rate(t);
        let min_w = self.min_w_eigenvalue(t, sample_count);
        DivisibilityReport {
            time: t.to_f64().unwrap_or(f64::NAN),
            cp: min_rate >= -T::sign_eps(),
            p: min_w >= -T::sign_eps(),
            min_rate: if self.channels.is_empty() { 0.0 } else { min_rate.to_f64().unwrap_or(f64::NAN) },
            min_w_eigenvalue: min_w.to_f64().unwrap_or(f64::NAN),
        }
    }
}

/// Closed-form P-divisibility test for phase-covariant qubit dynamics:
/// `γ± >= 0` and `γ_z >= -½ √(γ₊ γ₋)`.
pub fn phase_covariant_p_divisible_at<T: Real>(gamma_plus: T, gamma_minus: T, gamma_z: T) -> bool {
    let eps = T::sign_eps();
    if gamma_plus < -eps || gamma_minus < -eps {
        return false;
    }
    let bound = (gamma_plus.max(T::zero()) * gamma_minus.max(T::zero())).sqrt() * T::lit(0.5);
    gamma_z >= -bound - eps
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivisibilityReport {
    pub time: f64,
    pub cp: bool,
    pub p: bool,
    pub min_rate: f64,
    pub min_w_eigenvalue: f64,
}

#[derive(Clone, Debug)]
pub struct FrozenChannel<T: Real> {
    pub op: Matrix<T>,
    pub op_dag: Matrix<T>,
    pub op_dag_op: Matrix<T>,
    pub rate: T,
}

/// The generator frozen at one time.
#[derive(Clone, Debug)]
pub struct Snapshot<T: Real> {
    pub time: T,
    pub dim: usize,
    pub hamiltonian: Matrix<T>,
    pub channels: Vec<FrozenChannel<T>>,
    /// `Σ γ_α L_α† L_α`
    pub gamma_l: Matrix<T>,
    /// `Γ(t)`: equals `gamma_l` unless a trace sink is set.
    pub gamma: Matrix<T>,
    /// `H - (i/2)Γ`
    pub k: Matrix<T>,
}

impl<T: Real> Snapshot<T> {
    pub fn jump_apply(&self, rho: &Matrix<T>) -> Matrix<T> {
        let mut out = Matrix::zeros(self.dim);
        for ch in &self.channels {
            if ch.rate == T::zero() {
                continue;
            }
            out.add_scaled(re(ch.rate), &ch.op.matmul(rho).matmul(&ch.op_dag));
        }
        out
    }

    /// `J_t[|ψ><ψ|]` without forming the projector products.
    pub fn jump_apply_pure(&self, psi: &[Complex<T>]) -> Matrix<T> {
        let mut out = Matrix::zeros(self.dim);
        for ch in &self.channels {
            if ch.rate == T::zero() {
                continue;
            }
            let l_psi = ch.op.apply(psi);
            out.add_scaled(re(ch.rate), &Matrix::projector(&l_psi));
        }
        out
    }

    pub fn lindblad_apply(&self, rho: &Matrix<T>) -> Matrix<T> {
        let mi = Complex::new(T::zero(), -T::one());
        let mut out = self.hamiltonian.commutator(rho).scale(mi);
        out += &self.jump_apply(rho);
        out.add_scaled(re(T::lit(-0.5)), &self.gamma.anticommutator(rho));
        out
    }

    pub fn min_rate(&self) -> T {
        self.channels.iter().map(|c| c.rate).fold(T::infinity(), T::min)
    }

    /// `W_{ψ,t} = (1 - |ψ><ψ|) J_t[|ψ><ψ|] (1 - |ψ><ψ|)`
    pub fn w_matrix(&self, psi: &[Complex<T>]) -> Matrix<T> {
        let j = self.jump_apply_pure(psi);
        let mut q = Matrix::identity(self.dim);
        q -= &Matrix::projector(psi);
        q.matmul(&j).matmul(&q)
    }

    /// W restricted to an orthonormal basis of `span{ψ}^⊥`; returns the
    /// compressed matrix and the basis.
    pub fn w_compressed(&self, psi: &[Complex<T>]) -> (Matrix<T>, Vec<CVector<T>>) {
        let basis = orthogonal_complement(psi);
        let m = basis.len().max(1);
        let j = self.jump_apply_pure(psi);
        let mut w = Matrix::zeros(m);
        for (a, ea) in basis.iter().enumerate() {
            let j_eb: Vec<CVector<T>> = basis.iter().map(|eb| j.apply(eb)).collect();
            for (b, jeb) in j_eb.iter().enumerate() {
                w[(a, b)] = inner(ea, jeb);
            }
        }
        (w, basis)
    }

    fn min_w_eigenvalue(&self, psi: &[Complex<T>]) -> T {
        if self.dim < 2 {
            return T::zero();
        }
        let (w, _) = self.w_compressed(psi);
        eigh(&w.hermitian_part()).map(|e| e.min_value()).unwrap_or(T::nan())
    }

    fn min_w_over_basis(&self) -> T {
        (0..self.dim)
            .map(|i| self.min_w_eigenvalue(Ket::<T>::basis(self.dim, i).amplitudes()))
            .fold(T::infinity(), T::min)
    }
}

/// Orthonormal basis of the complement of `psi` (Gram–Schmidt against the
/// computational basis, dropping the most parallel vector).
pub fn orthogonal_complement<T: Real>(psi: &[Complex<T>]) -> Vec<CVector<T>> {
    let n = psi.len();
    let mut basis: Vec<CVector<T>> = vec![psi.to_vec()];
    // visit basis vectors least parallel to psi first for stability
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| psi[a].norm_sqr().partial_cmp(&psi[b].norm_sqr()).unwrap_or(std::cmp::Ordering::Equal));
    for &i in &order {
        if basis.len() == n {
            break;
        }
        let mut v = Ket::<T>::basis(n, i).into_amplitudes();
        for _ in 0..2 {
            for b in &basis {
                let ov = inner(b, &v);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= ov * bi;
                }
            }
        }
        if let Ok((k, norm)) = crate::linalg::normalize(v) {
            if norm > T::lit(1e-6) {
                basis.push(k.into_amplitudes());
            }
        }
    }
    basis.remove(0);
    basis
}

/// Checks that a frozen snapshot is well formed (hermitian H and Γ, finite rates).
pub fn validate_snapshot<T: Real>(snap: &Snapshot<T>) -> Result<()> {
    snap.hamiltonian.ensure_hermitian()?;
    snap.gamma.ensure_hermitian()?;
    for (i, ch) in snap.channels.iter().enumerate() {
        if !ch.rate.is_finite() {
            return Err(Error::InvalidArgument(format!("rate of channel {i} is not finite")));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pauli::*;
    use crate::linalg::{c, Density};

    type G = Generator<f64>;

    fn spontaneous(omega0: f64, omega: f64, gamma: f64) -> G {
        let h = &sigma_z::<f64>().scale_re(omega0 / 2.0) + &sigma_x::<f64>().scale_re(omega);
        G::new(2, h).with_channel(Channel::constant(sigma_minus(), gamma))
    }

    fn eternal() -> G {
        G::trivial(2)
            .with_channel(Channel::constant(sigma_plus(), 1.0))
            .with_channel(Channel::constant(sigma_minus(), 1.0))
            .with_channel(Channel::new(sigma_z::<f64>(), RateFn::dynamic(|t: f64| -0.5 * t.tanh())))
    }

    #[test]
    fn gamma_big_examples() {
        let g = spontaneous(0.0, 0.0, 1.0).gamma_big(0.0);
        let one = Matrix::projector(Ket::<f64>::basis(2, 1).amplitudes());
        assert!((&g - &one).max_abs() < 1e-15);
        assert!(G::trivial(2).gamma_big(0.3).max_abs() == 0.0);

        // brute-force sum for the eternally non-Markovian model at t = 1
        let me = eternal();
        let mut want = Matrix::zeros(2);
        for (l, r) in [(sigma_plus::<f64>(), 1.0), (sigma_minus(), 1.0), (sigma_z(), -0.5 * 1f64.tanh())] {
            want.add_scaled(c(r, 0.0), &l.dagger().matmul(&l));
        }
        assert!((&me.gamma_big(1.0) - &want).max_abs() < 1e-15);
        assert!(me.gamma_big(1.0).is_hermitian(0.0));
    }

    #[test]
    fn effective_hamiltonian_examples() {
        let (w0, w, g) = (0.7, 0.3, 0.9);
        let k = spontaneous(w0, w, g).effective_hamiltonian(0.0);
        let mut want = &sigma_z::<f64>().scale_re(w0 / 2.0) + &sigma_x::<f64>().scale_re(w);
        want.add_scaled(c(0.0, -g / 2.0), &Matrix::projector(Ket::<f64>::basis(2, 1).amplitudes()));
        assert!((&k - &want).max_abs() < 1e-15);

        assert_eq!(G::trivial(2).effective_hamiltonian(0.0).max_abs(), 0.0);

        let deph = G::trivial(2).with_channel(Channel::constant(sigma_z(), 0.5));
        let k = deph.effective_hamiltonian(0.0);
        assert!((&k - &Matrix::identity(2).scale(c(0.0, -0.25))).max_abs() < 1e-15);
    }

    #[test]
    fn jump_superop_examples() {
        let me = spontaneous(0.0, 0.0, 1.0);
        let one = Matrix::projector(Ket::<f64>::basis(2, 1).amplitudes());
        let zero = Matrix::projector(Ket::<f64>::basis(2, 0).amplitudes());
        assert!((&me.jump_superop_apply(0.0, &one).unwrap() - &zero).max_abs() < 1e-15);

        let off = spontaneous(0.0, 0.0, 0.0);
        assert_eq!(off.jump_superop_apply(0.0, &one).unwrap().max_abs(), 0.0);

        let out = eternal().jump_superop_apply(0.0, &plus::<f64>().projector()).unwrap();
        assert!((&out - &Matrix::identity(2).scale_re(0.5)).max_abs() < 1e-15);

        assert!(matches!(me.jump_superop_apply(0.0, &Matrix::identity(3)), Err(Error::DimMismatch { .. })));
    }

    #[test]
    fn lindblad_examples() {
        // fixed point: ground state of undriven decay
        let me = spontaneous(0.0, 0.0, 1.0);
        let zero = Matrix::projector(Ket::<f64>::basis(2, 0).amplitudes());
        assert!(me.lindblad_apply(0.0, &zero).unwrap().max_abs() < 1e-15);

        let gamma = 0.8;
        let me = spontaneous(0.4, 0.0, gamma);
        let one = Matrix::projector(Ket::<f64>::basis(2, 1).amplitudes());
        let want = (&zero - &one).scale_re(gamma);
        assert!((&me.lindblad_apply(0.0, &one).unwrap() - &want).max_abs() < 1e-15);
    }

    #[test]
    fn lindblad_is_traceless_on_random_inputs() {
        let me = eternal();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for i in 0..100 {
            let psi = haar_state::<f64, _>(2, &mut rng);
            let phi = haar_state::<f64, _>(2, &mut rng);
            let rho = Density::from_hermitian_part(&(&psi.projector().scale_re(0.3) + &phi.projector().scale_re(0.7)));
            let out = me.lindblad_apply(0.05 * i as f64, rho.matrix()).unwrap();
            assert!(out.trace().norm() < 1e-10);
        }
    }

    #[test]
    fn cp_divisibility_examples() {
        let me = eternal();
        assert!(me.is_cp_divisible_at(0.0));
        assert!(!me.is_cp_divisible_at(1.0));
        assert!((me.min_rate(1.0) + 0.5 * 1f64.tanh()).abs() < 1e-15);
        assert!((me.min_rate(1.0) + 0.380797).abs() < 1e-6);
        assert!(spontaneous(0.0, 1.0, 1.0).is_cp_divisible_at(2.0));
    }

    #[test]
    fn p_divisibility_examples() {
        let me = eternal();
        for t in [0.0, 0.5, 1.0, 3.0, 10.0] {
            assert!(me.is_p_divisible_at(t, 200), "t = {t}");
        }
        assert!(spontaneous(1.0, 0.5, 1.0).is_p_divisible_at(0.0, 200));
        let nonp = G::trivial(2)
            .with_channel(Channel::constant(sigma_plus(), -0.1))
            .with_channel(Channel::constant(sigma_minus(), -0.1))
            .with_channel(Channel::constant(sigma_z(), 0.5));
        assert!(!nonp.is_p_divisible_at(0.0, 200));
    }

    #[test]
    fn phase_covariant_closed_form() {
        assert!(phase_covariant_p_divisible_at(1.0, 1.0, -0.49));
        assert!(!phase_covariant_p_divisible_at(1.0, 1.0, -0.51));
        assert!(!phase_covariant_p_divisible_at(-0.1, 1.0, 0.0));
    }

    #[test]
    fn w_matrix_projects_out_state() {
        let me = eternal();
        let snap = me.at(0.7);
        let psi = plus::<f64>();
        let w = snap.w_matrix(psi.amplitudes());
        assert!(w.apply(psi.amplitudes()).iter().all(|z| z.norm() < 1e-15));
        let (wc, basis) = snap.w_compressed(psi.amplitudes());
        assert_eq!(basis.len(), 1);
        assert!((wc[(0, 0)] - w.sandwich(&basis[0], &basis[0])).norm() < 1e-15);
    }

    #[test]
    fn trace_sink_overrides_gamma() {
        let sink = Matrix::identity(2).scale_re(0.25);
        let me = spontaneous(0.0, 0.0, 1.0).with_trace_sink(sink.clone());
        assert_eq!(me.gamma_big(0.0), sink);
        let snap = me.at(0.0);
        assert!((&snap.gamma_l - &Matrix::projector(Ket::<f64>::basis(2, 1).amplitudes())).max_abs() < 1e-15);
    }

    #[test]
    fn generator_in_single_precision() {
        let me = Generator::<f32>::new(2, sigma_x::<f32>()).with_channel(Channel::constant(sigma_minus(), 1.0f32));
        let rho = Matrix::projector(Ket::<f32>::basis(2, 1).amplitudes());
        assert!(me.lindblad_apply(0.0, &rho).unwrap().trace().norm() < 1e-6);
    }
}

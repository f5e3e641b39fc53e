//! Jump unravelings on the system Hilbert space: MCWF, waiting-time
//! distribution, non-Markovian quantum jumps and the rate-operator family.
//!
//! Every dt-stepped method is expressed as a list of [`Branch`]es (jump
//! targets with probabilities plus the deterministic branch). Samplers draw
//! one branch from it; tests enumerate it to get exact one-step expectations.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::linalg::{eigh, inner, norm_sqr, normalize, CVector, Matrix};
use crate::{ComplexMatrix, FrozenGenerator, MasterEquation, PureState};

/// Two states are the same ray when `1 - |<a|b>|² <= SAME_RAY_TOL`.
pub const SAME_RAY_TOL: f64 = 1e-9;
/// Threshold for sign tests on rates and eigenvalues.
pub const EPS: f64 = 1e-12;

const I: Complex64 = Complex64::new(0.0, 1.0);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Event {
    Deterministic,
    /// Channel index (MCWF, WTD) or eigenbranch index (rate-operator methods).
    Jump(usize),
    ReverseJump { source: usize, target: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: PureState,
    pub event: Event,
    /// Probability of the branch that was taken.
    pub probability: Option<f64>,
    /// Rate-operator eigenvalue of the branch taken (jumps only).
    pub eigenvalue: Option<f64>,
}

/// One possible outcome of a single step.
#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub probability: f64,
    pub state: PureState,
    pub event: Event,
    /// Multiplicative update of a trajectory weight (1 for plain methods).
    pub weight_factor: f64,
    pub eigenvalue: Option<f64>,
}

impl Branch {
    fn jump(probability: f64, state: PureState, event: Event) -> Self {
        Self { probability, state, event, weight_factor: 1.0, eigenvalue: None }
    }
}

/// Picks a branch with the uniform draw `u ∈ [0, 1)`: jumps are laid out
/// first in order, the last branch absorbs the remaining mass.
pub fn select_branch(branches: &[Branch], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, b) in branches.iter().enumerate().take(branches.len().saturating_sub(1)) {
        acc += b.probability;
        if u < acc {
            return i;
        }
    }
    branches.len() - 1
}

/// Exact expectation `Σ_b p_b w_b |ψ_b><ψ_b|` over a branch list.
pub fn branch_expectation(branches: &[Branch]) -> ComplexMatrix {
    let dim = branches.first().map_or(1, |b| b.state.dim());
    let mut m = Matrix::zeros(dim);
    for b in branches {
        m.add_scaled(Complex64::new(b.probability * b.weight_factor, 0.0), &b.state.projector());
    }
    m
}

fn into_outcome(mut branches: Vec<Branch>, u: f64) -> StepOutcome {
    let b = branches.swap_remove(select_branch(&branches, u));
    StepOutcome { state: b.state, event: b.event, probability: Some(b.probability), eigenvalue: b.eigenvalue }
}

fn check_total(total: f64) -> Result<()> {
    if total > 1.0 + EPS {
        Err(Error::StepTooLarge { total })
    } else {
        Ok(())
    }
}

/// `ψ - i dt Kψ`, unnormalized.
fn euler(k: &ComplexMatrix, psi: &PureState, dt: f64) -> CVector<f64> {
    let kpsi = k.apply(psi.amplitudes());
    psi.amplitudes().iter().zip(&kpsi).map(|(p, kp)| p - I * dt * kp).collect()
}

/// Normalized Euler step `normalize((1 - iK dt)ψ)`.
pub fn drift(k: &ComplexMatrix, psi: &PureState, dt: f64) -> Result<PureState> {
    Ok(normalize(euler(k, psi, dt))?.0)
}

fn ensure_rates_nonnegative(snap: &FrozenGenerator) -> Result<()> {
    for (i, ch) in snap.channels.iter().enumerate() {
        if ch.rate < -EPS {
            return Err(Error::NegativeRate { channel: i, rate: ch.rate, time: snap.time });
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- MCWF

/// MCWF branches: one jump per channel with nonzero probability, then the
/// deterministic branch.
pub fn mcwf_branches(snap: &FrozenGenerator, psi: &PureState, dt: f64) -> Result<Vec<Branch>> {
    ensure_rates_nonnegative(snap)?;
    let mut out = Vec::new();
    let mut total = 0.0;
    for (a, ch) in snap.channels.iter().enumerate() {
        let l_psi = ch.op.apply(psi.amplitudes());
        let p = ch.rate.max(0.0) * norm_sqr(&l_psi) * dt;
        if p > 0.0 {
            total += p;
            out.push(Branch::jump(p, normalize(l_psi)?.0, Event::Jump(a)));
        }
    }
    check_total(total)?;
    out.push(Branch::jump(1.0 - total, drift(&snap.k, psi, dt)?, Event::Deterministic));
    Ok(out)
}

pub fn mcwf_step_frozen(snap: &FrozenGenerator, psi: &PureState, dt: f64, u: f64) -> Result<StepOutcome> {
    Ok(into_outcome(mcwf_branches(snap, psi, dt)?, u))
}

pub fn mcwf_step(me: &MasterEquation, psi: &PureState, t: f64, dt: f64, u: f64) -> Result<StepOutcome> {
    mcwf_step_frozen(&me.at(t), psi, dt, u)
}

// ---------------------------------------------------------------- WTD

#[derive(Clone, Debug, PartialEq)]
pub struct WtdJump {
    /// Jump time, or `t_cap` when no jump occurs before it.
    pub time: f64,
    /// Normalized no-jump state at `time`.
    pub state: PureState,
    pub jumped: bool,
}

/// Source of frozen generators; lets the ensemble reuse precomputed grids.
pub trait SnapshotSource {
    fn snapshot(&self, t: f64) -> std::borrow::Cow<'_, FrozenGenerator>;
}

impl SnapshotSource for MasterEquation {
    fn snapshot(&self, t: f64) -> std::borrow::Cow<'_, FrozenGenerator> {
        std::borrow::Cow::Owned(self.at(t))
    }
}

fn rk4_schrodinger(
    src: &dyn SnapshotSource,
    t: f64,
    h: f64,
    psi: &[Complex64],
) -> Result<CVector<f64>> {
    let s0 = src.snapshot(t);
    let sm = src.snapshot(t + 0.5 * h);
    let s1 = src.snapshot(t + h);
    for s in [&*s0, &*sm, &*s1] {
        ensure_rates_nonnegative(s)?;
    }
    let f = |s: &FrozenGenerator, v: &[Complex64]| -> CVector<f64> { s.k.apply(v).into_iter().map(|x| -I * x).collect() };
    let add = |v: &[Complex64], k: &[Complex64], a: f64| -> CVector<f64> { v.iter().zip(k).map(|(x, y)| x + y * a).collect() };
    let k1 = f(&s0, psi);
    let k2 = f(&sm, &add(psi, &k1, 0.5 * h));
    let k3 = f(&sm, &add(psi, &k2, 0.5 * h));
    let k4 = f(&s1, &add(psi, &k3, h));
    Ok((0..psi.len()).map(|i| psi[i] + (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (h / 6.0)).collect())
}

/// Integrates `dψ̃/dt = -iK(t)ψ̃` from `t0` with RK4 steps aligned to
/// multiples of `h` (relative to `origin`) and returns the time at which
/// `‖ψ̃‖²` falls to `x`, located by bisection. `observe` is called with every
/// aligned grid time reached before the jump and the normalized state there.
pub fn wtd_evolve(
    src: &dyn SnapshotSource,
    psi0: &PureState,
    t0: f64,
    x: f64,
    t_cap: f64,
    h: f64,
    origin: f64,
    observe: &mut dyn FnMut(f64, &PureState),
) -> Result<WtdJump> {
    if !(h > 0.0) {
        return Err(Error::InvalidArgument(format!("step must be positive, got {h}")));
    }
    if !(0.0..1.0).contains(&x) || x == 0.0 {
        return Err(Error::InvalidArgument(format!("draw must lie in (0, 1), got {x}")));
    }
    let mut t = t0;
    let mut v: CVector<f64> = psi0.amplitudes().to_vec();
    let tol = 1e-10;
    while t < t_cap - 1e-12 {
        let k_next = ((t - origin) / h + 1e-9).floor() + 1.0;
        let t_next = (origin + k_next * h).min(t_cap);
        let step = t_next - t;
        let w = rk4_schrodinger(src, t, step, &v)?;
        let n_next = norm_sqr(&w);
        if n_next <= x {
            // bisection on the sub-step length
            let (mut lo, mut hi) = (0.0, step);
            while hi - lo > tol {
                let mid = 0.5 * (lo + hi);
                let trial = rk4_schrodinger(src, t, mid, &v)?;
                if norm_sqr(&trial) > x {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let tau = 0.5 * (lo + hi);
            let at = rk4_schrodinger(src, t, tau, &v)?;
            return Ok(WtdJump { time: t + tau, state: normalize(at)?.0, jumped: true });
        }
        v = w;
        t = t_next;
        let state = normalize(v.clone())?.0;
        observe(t, &state);
    }
    Ok(WtdJump { time: t_cap, state: normalize(v)?.0, jumped: false })
}

/// Next jump time from `(t0, ψ0)` for the draw `x ∈ (0, 1)`.
pub fn wtd_next_jump(me: &MasterEquation, psi0: &PureState, t0: f64, x: f64, t_cap: f64, h: f64) -> Result<WtdJump> {
    wtd_evolve(me, psi0, t0, x, t_cap, h, t0, &mut |_, _| {})
}

/// Channel selected at a jump with probability `γ_α‖L_αψ‖² / <ψ|Γψ>`.
pub fn wtd_select_channel_frozen(snap: &FrozenGenerator, psi: &PureState, u: f64) -> Result<usize> {
    ensure_rates_nonnegative(snap)?;
    let weights: Vec<f64> =
        snap.channels.iter().map(|ch| ch.rate.max(0.0) * norm_sqr(&ch.op.apply(psi.amplitudes()))).collect();
    let total: f64 = weights.iter().sum();
    if total <= EPS {
        return Err(Error::NoJumpPossible { value: total });
    }
    let mut acc = 0.0;
    let last = weights.iter().rposition(|&w| w > 0.0).unwrap_or(0);
    for (a, w) in weights.iter().enumerate() {
        acc += w / total;
        if u < acc && *w > 0.0 {
            return Ok(a);
        }
    }
    Ok(last)
}

pub fn wtd_select_channel(me: &MasterEquation, psi: &PureState, t1: f64, u: f64) -> Result<usize> {
    wtd_select_channel_frozen(&me.at(t1), psi, u)
}

// ---------------------------------------------------------------- rate operators

/// Eigenpairs of a rate operator, eigenvalues descending.
#[derive(Clone, Debug, PartialEq)]
pub struct RateOperatorSpectrum {
    pub pairs: Vec<(f64, PureState)>,
}

impl RateOperatorSpectrum {
    pub fn min_eigenvalue(&self) -> f64 {
        self.pairs.iter().map(|p| p.0).fold(f64::INFINITY, f64::min)
    }
}

type TimeOperator = Arc<dyn Fn(f64) -> ComplexMatrix + Send + Sync>;
type StateVector = Arc<dyn Fn(&FrozenGenerator, &PureState) -> CVector<f64> + Send + Sync>;

/// Gauge freedom of the rate operator.
#[derive(Clone, Default)]
pub enum GaugeTransform {
    #[default]
    None,
    /// `C_t`, giving `|φ> = C_t|ψ>`.
    TimeDependent(TimeOperator),
    /// `|φ_{ψ,t}>` computed from the frozen generator (which carries `t`) and `ψ`.
    StateDependent(StateVector),
}

impl std::fmt::Debug for GaugeTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::None => "None",
            Self::TimeDependent(_) => "TimeDependent",
            Self::StateDependent(_) => "StateDependent",
        })
    }
}

impl GaugeTransform {
    pub fn time_dependent(c: impl Fn(f64) -> ComplexMatrix + Send + Sync + 'static) -> Self {
        Self::TimeDependent(Arc::new(c))
    }

    pub fn state_dependent(phi: impl Fn(&FrozenGenerator, &PureState) -> CVector<f64> + Send + Sync + 'static) -> Self {
        Self::StateDependent(Arc::new(phi))
    }

    /// `|φ>` for the current state, or `None` for the trivial gauge.
    pub fn phi(&self, snap: &FrozenGenerator, psi: &PureState) -> Option<CVector<f64>> {
        match self {
            Self::None => None,
            Self::TimeDependent(c) => Some(c(snap.time).apply(psi.amplitudes())),
            Self::StateDependent(f) => {
                let v = f(snap, psi);
                assert_eq!(v.len(), psi.dim(), "gauge vector dimension");
                Some(v)
            }
        }
    }
}

/// State-dependent gauge for which the generalized rate operator equals
/// `W_{ψ,t} + λ|ψ><ψ|`: `|φ> = -2(1 - |ψ><ψ|)J[ψψ]|ψ> - (<ψ|J[ψψ]|ψ> - λ)|ψ>`.
pub fn w_embedding_gauge(lambda: f64) -> GaugeTransform {
    GaugeTransform::state_dependent(move |snap, psi| {
        let j = snap.jump_apply_pure(psi.amplitudes());
        let jpsi = j.apply(psi.amplitudes());
        let a = inner(psi.amplitudes(), &jpsi);
        // Q J ψ = Jψ - a ψ
        psi.amplitudes().iter().zip(&jpsi).map(|(p, jp)| -2.0 * (jp - a * p) - (a - lambda) * p).collect()
    })
}

/// Spectrum of `W_{ψ,t}` on the orthogonal complement of `ψ` (`d - 1` pairs,
/// all eigenvectors orthogonal to `ψ`).
pub fn w_spectrum(snap: &FrozenGenerator, psi: &PureState) -> Result<RateOperatorSpectrum> {
    let (w, basis) = snap.w_compressed(psi.amplitudes());
    if basis.is_empty() {
        return Ok(RateOperatorSpectrum { pairs: Vec::new() });
    }
    let e = eigh(&w.hermitian_part())?;
    let pairs = e
        .pairs()
        .map(|(l, c)| {
            let mut v = vec![Complex64::new(0.0, 0.0); psi.dim()];
            for (cb, eb) in c.amplitudes().iter().zip(&basis) {
                for (vi, ei) in v.iter_mut().zip(eb) {
                    *vi += cb * ei;
                }
            }
            Ok((l, normalize(v)?.0.phase_fixed()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RateOperatorSpectrum { pairs })
}

pub fn w_rate_operator(me: &MasterEquation, t: f64, psi: &PureState) -> Result<RateOperatorSpectrum> {
    w_spectrum(&me.at(t), psi)
}

/// `J_t[ψψ] + ½(|φ><ψ| + |ψ><φ|)`
pub fn rate_operator_matrix(snap: &FrozenGenerator, psi: &PureState, phi: Option<&[Complex64]>) -> ComplexMatrix {
    let mut r = snap.jump_apply_pure(psi.amplitudes());
    if let Some(phi) = phi {
        let half = Complex64::new(0.5, 0.0);
        r.add_scaled(half, &Matrix::outer(phi, psi.amplitudes()));
        r.add_scaled(half, &Matrix::outer(psi.amplitudes(), phi));
    }
    r
}

pub fn rate_operator_frozen(snap: &FrozenGenerator, psi: &PureState, g: &GaugeTransform) -> Result<RateOperatorSpectrum> {
    let phi = g.phi(snap, psi);
    let r = rate_operator_matrix(snap, psi, phi.as_deref());
    let e = eigh(&r.hermitian_part())?;
    Ok(RateOperatorSpectrum { pairs: e.pairs().map(|(l, v)| (l, v.clone())).collect() })
}

pub fn rate_operator(me: &MasterEquation, t: f64, psi: &PureState, g: &GaugeTransform) -> Result<RateOperatorSpectrum> {
    rate_operator_frozen(&me.at(t), psi, g)
}

/// Turns a spectrum into jump branches. Eigenvectors on the ray of `ψ` are
/// not jumps (landing on `ψ` differs from the deterministic branch only at
/// `O(dt)`), so their eigenvalue, whatever its sign, is absorbed into the
/// deterministic branch. Any other eigenvalue below `-EPS` is reported.
fn spectrum_branches(
    spectrum: &RateOperatorSpectrum,
    psi: &PureState,
    dt: f64,
    time: f64,
    negative: impl Fn(f64, f64) -> Error,
) -> Result<(Vec<Branch>, f64)> {
    let mut out = Vec::new();
    let mut total = 0.0;
    for (nu, (l, v)) in spectrum.pairs.iter().enumerate() {
        if v.same_ray(psi, SAME_RAY_TOL) {
            continue;
        }
        if *l < -EPS {
            return Err(negative(*l, time));
        }
        let p = l.max(0.0) * dt;
        if p > 0.0 {
            total += p;
            out.push(Branch { eigenvalue: Some(*l), ..Branch::jump(p, v.clone(), Event::Jump(nu)) });
        }
    }
    check_total(total)?;
    Ok((out, total))
}

/// W-ROQJ branches.
pub fn wroqj_branches(snap: &FrozenGenerator, psi: &PureState, dt: f64) -> Result<Vec<Branch>> {
    let spectrum = w_spectrum(snap, psi)?;
    let (mut out, total) = spectrum_branches(&spectrum, psi, dt, snap.time, |eigenvalue, time| {
        Error::NegativeWEigenvalue { eigenvalue, time }
    })?;
    // K^W ψ = Kψ + (i/2) Σ γ (2 ℓ* Lψ - |ℓ|² ψ)
    let mut kw_psi = snap.k.apply(psi.amplitudes());
    for ch in &snap.channels {
        let l_psi = ch.op.apply(psi.amplitudes());
        let ell = inner(psi.amplitudes(), &l_psi);
        for (o, (lp, p)) in kw_psi.iter_mut().zip(l_psi.iter().zip(psi.amplitudes())) {
            *o += 0.5 * I * ch.rate * (2.0 * ell.conj() * lp - ell.norm_sqr() * p);
        }
    }
    let det: CVector<f64> = psi.amplitudes().iter().zip(&kw_psi).map(|(p, k)| p - I * dt * k).collect();
    out.push(Branch::jump(1.0 - total, normalize(det)?.0, Event::Deterministic));
    Ok(out)
}

pub fn wroqj_step_frozen(snap: &FrozenGenerator, psi: &PureState, dt: f64, u: f64) -> Result<StepOutcome> {
    Ok(into_outcome(wroqj_branches(snap, psi, dt)?, u))
}

pub fn wroqj_step(me: &MasterEquation, psi: &PureState, t: f64, dt: f64, u: f64) -> Result<StepOutcome> {
    wroqj_step_frozen(&me.at(t), psi, dt, u)
}

/// R-ROQJ / Ψ-ROQJ branches. The deterministic branch uses
/// `K' = K - (i/2)C_t` or `K^Ψ = K - (i/2)|φ><ψ|`; both act on `ψ` as
/// `Kψ - (i/2)φ`.
pub fn roqj_branches(snap: &FrozenGenerator, psi: &PureState, dt: f64, g: &GaugeTransform) -> Result<Vec<Branch>> {
    let phi = g.phi(snap, psi);
    let r = rate_operator_matrix(snap, psi, phi.as_deref());
    let e = eigh(&r.hermitian_part())?;
    let spectrum = RateOperatorSpectrum { pairs: e.pairs().map(|(l, v)| (l, v.clone())).collect() };
    let (mut out, total) = spectrum_branches(&spectrum, psi, dt, snap.time, |eigenvalue, time| {
        Error::NegativeROEigenvalue { eigenvalue, time }
    })?;
    let mut det = euler(&snap.k, psi, dt);
    if let Some(phi) = &phi {
        for (d, f) in det.iter_mut().zip(phi) {
            *d -= 0.5 * dt * f;
        }
    }
    out.push(Branch::jump(1.0 - total, normalize(det)?.0, Event::Deterministic));
    Ok(out)
}

pub fn roqj_step_frozen(
    snap: &FrozenGenerator,
    psi: &PureState,
    dt: f64,
    g: &GaugeTransform,
    u: f64,
) -> Result<StepOutcome> {
    Ok(into_outcome(roqj_branches(snap, psi, dt, g)?, u))
}

pub fn roqj_step(me: &MasterEquation, psi: &PureState, t: f64, dt: f64, g: &GaugeTransform, u: f64) -> Result<StepOutcome> {
    roqj_step_frozen(&me.at(t), psi, dt, g, u)
}

// ---------------------------------------------------------------- NMQJ

/// `-(N_j/N_i) p` for the direct probability `p ≤ 0` evaluated at the target.
pub fn reverse_jump_probability(method_p: f64, n_i: u64, n_j: u64) -> Result<f64> {
    if n_i == 0 {
        return Err(Error::DivisionByZero);
    }
    Ok((-(n_j as f64 / n_i as f64) * method_p).max(0.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct NmqjBucket {
    /// Stable identifier, never reused.
    pub id: usize,
    pub count: u64,
    pub state: PureState,
    /// `(source bucket id, channel)` of every direct jump that landed here.
    pub provenance: Vec<(usize, usize)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NmqjEventKind {
    Direct { channel: usize },
    Reverse { channel: usize },
}

/// Members moved between buckets in one step.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NmqjEvent {
    pub step: usize,
    pub from: usize,
    pub to: usize,
    pub kind: NmqjEventKind,
    pub count: u64,
}

/// Effective ensemble `{(N_i, ψ_i)}`.
#[derive(Clone, Debug, PartialEq)]
pub struct NmqjEnsemble {
    pub buckets: Vec<NmqjBucket>,
    pub events: Vec<NmqjEvent>,
    total: u64,
    next_id: usize,
    steps: usize,
}

#[derive(Clone, Debug)]
enum Destination {
    Direct { channel: usize, state: PureState },
    Reverse { target: usize, channel: usize },
}

/// Per-bucket outcome plan: list of (per-member probability, destination).
type Plan = Vec<Vec<(f64, Destination)>>;

impl NmqjEnsemble {
    pub fn new(initial: PureState, n: u64) -> Self {
        Self {
            buckets: vec![NmqjBucket { id: 0, count: n, state: initial, provenance: Vec::new() }],
            events: Vec::new(),
            total: n,
            next_id: 1,
            steps: 0,
        }
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    /// `Σ_i (N_i/N)|ψ_i><ψ_i|`
    pub fn density(&self) -> ComplexMatrix {
        let dim = self.buckets[0].state.dim();
        let mut m = Matrix::zeros(dim);
        for b in self.buckets.iter().filter(|b| b.count > 0) {
            m.add_scaled(Complex64::new(b.count as f64 / self.total as f64, 0.0), &b.state.projector());
        }
        m
    }

    fn index_of(&self, id: usize) -> usize {
        self.buckets.iter().position(|b| b.id == id).expect("bucket id")
    }

    fn plan(&self, snap: &FrozenGenerator, dt: f64) -> Result<Plan> {
        let mut plan: Plan = vec![Vec::new(); self.buckets.len()];
        for (i, b) in self.buckets.iter().enumerate() {
            if b.count == 0 {
                continue;
            }
            for (a, ch) in snap.channels.iter().enumerate() {
                if ch.rate <= EPS {
                    continue;
                }
                let l_psi = ch.op.apply(b.state.amplitudes());
                let p = ch.rate * norm_sqr(&l_psi) * dt;
                if p > 0.0 {
                    plan[i].push((p, Destination::Direct { channel: a, state: normalize(l_psi)?.0 }));
                }
            }
        }
        // reverse jumps: for each populated j and negative channel, move
        // members from the bucket that recorded the jump (j, α) back to j
        for b_j in self.buckets.iter().filter(|b| b.count > 0) {
            for (a, ch) in snap.channels.iter().enumerate() {
                if ch.rate >= -EPS {
                    continue;
                }
                let l_psi = ch.op.apply(b_j.state.amplitudes());
                let weight = norm_sqr(&l_psi);
                if weight <= EPS {
                    continue;
                }
                let jumped = normalize(l_psi)?.0;
                if jumped.same_ray(&b_j.state, SAME_RAY_TOL) {
                    // self-map: accounted for by the normalized drift
                    continue;
                }
                let recorded: Vec<usize> = (0..self.buckets.len())
                    .filter(|&i| self.buckets[i].provenance.contains(&(b_j.id, a)))
                    .collect();
                let Some(&i) = recorded.iter().find(|&&i| self.buckets[i].count > 0) else {
                    if recorded.is_empty() {
                        return Err(Error::MissingTargetState { time: snap.time, channel: a });
                    }
                    continue;
                };
                let p = reverse_jump_probability(ch.rate * weight * dt, self.buckets[i].count, b_j.count)?;
                if p > 0.0 {
                    plan[i].push((p, Destination::Reverse { target: b_j.id, channel: a }));
                }
            }
        }
        for outcomes in &plan {
            check_total(outcomes.iter().map(|o| o.0).sum())?;
        }
        Ok(plan)
    }

    /// Exact expectation of [`NmqjEnsemble::density`] after one step.
    pub fn expected_next_density(&self, snap: &FrozenGenerator, dt: f64) -> Result<ComplexMatrix> {
        let plan = self.plan(snap, dt)?;
        let dim = self.buckets[0].state.dim();
        let evolved: Vec<PureState> =
            self.buckets.iter().map(|b| drift(&snap.k, &b.state, dt)).collect::<Result<_>>()?;
        let mut m = Matrix::zeros(dim);
        let n = self.total as f64;
        for (i, b) in self.buckets.iter().enumerate() {
            if b.count == 0 {
                continue;
            }
            let w = b.count as f64 / n;
            let mut stay = 1.0;
            for (p, dest) in &plan[i] {
                stay -= p;
                let target = match dest {
                    Destination::Direct { state, .. } => state.clone(),
                    Destination::Reverse { target, .. } => evolved[self.index_of(*target)].clone(),
                };
                m.add_scaled(Complex64::new(w * p, 0.0), &target.projector());
            }
            m.add_scaled(Complex64::new(w * stay, 0.0), &evolved[i].projector());
        }
        Ok(m)
    }

    fn bucket_for(&mut self, state: PureState, source: usize, channel: usize) -> usize {
        if let Some(b) = self.buckets.iter_mut().find(|b| b.state.same_ray(&state, SAME_RAY_TOL)) {
            if !b.provenance.contains(&(source, channel)) {
                b.provenance.push((source, channel));
            }
            return b.id;
        }
        let id = self.next_id;
        self.next_id += 1;
        self.buckets.push(NmqjBucket { id, count: 0, state, provenance: vec![(source, channel)] });
        id
    }
}

/// Advances the effective ensemble by one step; member counts for every
/// bucket are drawn from a multinomial with the planned probabilities.
pub fn nmqj_step<R: Rng + ?Sized>(
    snap: &FrozenGenerator,
    mut ens: NmqjEnsemble,
    dt: f64,
    rng: &mut R,
) -> Result<NmqjEnsemble> {
    let plan = ens.plan(snap, dt)?;
    // sample moves before mutating anything
    let mut moves: Vec<(usize, u64, Destination)> = Vec::new();
    for (i, outcomes) in plan.into_iter().enumerate() {
        let mut remaining = ens.buckets[i].count;
        let mut mass = 1.0;
        for (p, dest) in outcomes {
            if remaining == 0 {
                break;
            }
            let q = (p / mass).clamp(0.0, 1.0);
            let k = Binomial::new(remaining, q).expect("valid binomial").sample(rng);
            mass -= p;
            remaining -= k;
            if k > 0 {
                moves.push((i, k, dest));
            }
        }
    }
    for b in ens.buckets.iter_mut() {
        b.state = drift(&snap.k, &b.state, dt)?;
    }
    let step = ens.steps;
    for (i, k, dest) in moves {
        let from = ens.buckets[i].id;
        ens.buckets[i].count -= k;
        let (to, kind) = match dest {
            Destination::Direct { channel, state } => (ens.bucket_for(state, from, channel), NmqjEventKind::Direct { channel }),
            Destination::Reverse { target, channel } => (target, NmqjEventKind::Reverse { channel }),
        };
        let j = ens.index_of(to);
        ens.buckets[j].count += k;
        ens.events.push(NmqjEvent { step, from, to, kind, count: k });
    }
    ens.steps += 1;
    debug_assert_eq!(ens.buckets.iter().map(|b| b.count).sum::<u64>(), ens.total);
    Ok(ens)
}

//! Unravelings on enlarged state spaces: doubled Hilbert space, tripled
//! Hilbert space, influence martingale, pseudo-Lindblad sign bit, cloning
//! for trace-non-preserving equations, and the OPD splitting.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{eigh, norm_sqr, normalize, sqrtm_psd, CVector, Matrix};
use crate::local::{drift, Branch, Event, StepOutcome, EPS};
use crate::master_equation::{Channel, OperatorFn};
use crate::{ComplexMatrix, DensityMatrix, FrozenGenerator, MasterEquation, PureState};

const I: Complex64 = Complex64::new(0.0, 1.0);

fn cre(x: f64) -> Complex64 {
    Complex64::new(x, 0.0)
}

fn check_total(total: f64) -> Result<()> {
    if total > 1.0 + EPS {
        Err(Error::StepTooLarge { total })
    } else {
        Ok(())
    }
}

// ---------------------------------------------------------------- OPD

/// `Q = μ⁺Σ⁺ - μ⁻Σ⁻` with orthogonally supported unit-trace states.
#[derive(Clone, Debug, PartialEq)]
pub struct Opd {
    pub mu_plus: f64,
    pub sigma_plus: Option<DensityMatrix>,
    pub mu_minus: f64,
    pub sigma_minus: Option<DensityMatrix>,
}

pub fn opd_decompose(q: &ComplexMatrix) -> Result<Opd> {
    q.ensure_hermitian()?;
    let e = eigh(q)?;
    let mut plus = Matrix::zeros(q.dim());
    let mut minus = Matrix::zeros(q.dim());
    for (l, v) in e.pairs() {
        if l > 0.0 {
            plus.add_scaled(cre(l), &v.projector());
        } else if l < 0.0 {
            minus.add_scaled(cre(-l), &v.projector());
        }
    }
    let part = |m: ComplexMatrix| -> (f64, Option<DensityMatrix>) {
        let mu = m.trace().re;
        if mu <= EPS {
            (mu.max(0.0), None)
        } else {
            (mu, Some(DensityMatrix::from_hermitian_part(&m.scale_re(1.0 / mu))))
        }
    };
    let (mu_plus, sigma_plus) = part(plus);
    let (mu_minus, sigma_minus) = part(minus);
    Ok(Opd { mu_plus, sigma_plus, mu_minus, sigma_minus })
}

// ---------------------------------------------------------------- doubled space

/// `dρ/dt = Aρ + ρB† + Σ C_i ρ D_i†`
#[derive(Clone)]
pub struct DoubledModel {
    pub dim: usize,
    pub a: OperatorFn<f64>,
    pub b: OperatorFn<f64>,
    pub c: Vec<OperatorFn<f64>>,
    pub d: Vec<OperatorFn<f64>>,
}

impl std::fmt::Debug for DoubledModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DoubledModel").field("dim", &self.dim).field("pairs", &self.c.len()).finish()
    }
}

/// The doubled model frozen at one time.
#[derive(Clone, Debug)]
pub struct DoubledFrozen {
    pub time: f64,
    pub a: ComplexMatrix,
    pub b: ComplexMatrix,
    pub c: Vec<ComplexMatrix>,
    pub d: Vec<ComplexMatrix>,
}

impl DoubledModel {
    pub fn at(&self, t: f64) -> DoubledFrozen {
        DoubledFrozen {
            time: t,
            a: self.a.eval(t),
            b: self.b.eval(t),
            c: self.c.iter().map(|x| x.eval(t)).collect(),
            d: self.d.iter().map(|x| x.eval(t)).collect(),
        }
    }
}

/// Frozen doubled model of a GKSL-type generator without re-evaluating the
/// generator: `A = B = -iK`, `C_i = √|γ_i| L_i`, `D_i = sign(γ_i) C_i`.
pub fn doubled_from_snapshot(snap: &FrozenGenerator) -> DoubledFrozen {
    let a = snap.k.scale(-I);
    let mut c = Vec::new();
    let mut d = Vec::new();
    for ch in &snap.channels {
        if ch.rate == 0.0 {
            continue;
        }
        let ci = ch.op.scale_re(ch.rate.abs().sqrt());
        d.push(if ch.rate < 0.0 { ci.scale_re(-1.0) } else { ci.clone() });
        c.push(ci);
    }
    DoubledFrozen { time: snap.time, b: a.clone(), a, c, d }
}

pub fn gksl_to_doubled(me: &MasterEquation) -> DoubledModel {
    let n = me.channels().len();
    let me_a = me.clone();
    let a = OperatorFn::dynamic(move |t| me_a.at(t).k.scale(-I));
    let part = |i: usize, negate: bool| {
        let me = me.clone();
        OperatorFn::dynamic(move |t| {
            let ch = &me.channels()[i];
            let rate = ch.rate.eval(t);
            let s = rate.abs().sqrt() * if negate && rate < 0.0 { -1.0 } else { 1.0 };
            ch.jump_operator.eval(t).scale_re(s)
        })
    };
    DoubledModel {
        dim: me.dim(),
        b: a.clone(),
        a,
        c: (0..n).map(|i| part(i, false)).collect(),
        d: (0..n).map(|i| part(i, true)).collect(),
    }
}

/// `θ = (φ, ψ)`, both unnormalized.
#[derive(Clone, Debug, PartialEq)]
pub struct DoubledState {
    pub phi: CVector<f64>,
    pub psi: CVector<f64>,
}

impl DoubledState {
    pub fn new(phi: CVector<f64>, psi: CVector<f64>) -> Result<Self> {
        if phi.len() != psi.len() {
            return Err(Error::DimMismatch { expected: phi.len(), found: psi.len() });
        }
        let s = Self { phi, psi };
        if s.norm_sqr() <= 0.0 {
            return Err(Error::ZeroVector { norm: 0.0 });
        }
        Ok(s)
    }

    /// `(ψ0, ψ0)`, whose estimator `|φ><ψ|` starts at `|ψ0><ψ0|`.
    pub fn from_pure(psi0: &PureState) -> Self {
        Self { phi: psi0.amplitudes().to_vec(), psi: psi0.amplitudes().to_vec() }
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.phi) + norm_sqr(&self.psi)
    }

    /// `|φ><ψ|`
    pub fn estimator(&self) -> ComplexMatrix {
        Matrix::outer(&self.phi, &self.psi)
    }

    /// `‖φ‖ / ‖ψ‖`; diverges when the two components drift apart.
    pub fn norm_ratio(&self) -> f64 {
        (norm_sqr(&self.phi) / norm_sqr(&self.psi)).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DoubledBranch {
    pub probability: f64,
    pub state: DoubledState,
    pub event: Event,
}

pub fn doubled_branches(model: &DoubledFrozen, theta: &DoubledState, dt: f64) -> Result<Vec<DoubledBranch>> {
    let n2 = theta.norm_sqr();
    if !(n2 > 0.0) || !n2.is_finite() {
        return Err(Error::ZeroVector { norm: n2.sqrt() });
    }
    let mut out = Vec::new();
    let mut total = 0.0;
    for (i, (c, d)) in model.c.iter().zip(&model.d).enumerate() {
        let jphi = c.apply(&theta.phi);
        let jpsi = d.apply(&theta.psi);
        let j2 = norm_sqr(&jphi) + norm_sqr(&jpsi);
        let p = j2 / n2 * dt;
        if p > 0.0 {
            total += p;
            let s = cre((n2 / j2).sqrt());
            out.push(DoubledBranch {
                probability: p,
                state: DoubledState { phi: jphi.iter().map(|x| x * s).collect(), psi: jpsi.iter().map(|x| x * s).collect() },
                event: Event::Jump(i),
            });
        }
    }
    check_total(total)?;
    // θ + (F + ½ Σ p_i/dt) θ dt
    let g = 0.5 * total;
    let aphi = model.a.apply(&theta.phi);
    let bpsi = model.b.apply(&theta.psi);
    let phi = theta.phi.iter().zip(&aphi).map(|(x, ax)| x * (1.0 + g) + ax * dt).collect();
    let psi = theta.psi.iter().zip(&bpsi).map(|(x, bx)| x * (1.0 + g) + bx * dt).collect();
    out.push(DoubledBranch { probability: 1.0 - total, state: DoubledState { phi, psi }, event: Event::Deterministic });
    Ok(out)
}

pub fn doubled_step(model: &DoubledFrozen, theta: &DoubledState, dt: f64, u: f64) -> Result<(DoubledState, Event)> {
    let mut branches = doubled_branches(model, theta, dt)?;
    let mut acc = 0.0;
    let last = branches.len() - 1;
    let mut pick = last;
    for (i, b) in branches.iter().enumerate().take(last) {
        acc += b.probability;
        if u < acc {
            pick = i;
            break;
        }
    }
    let b = branches.swap_remove(pick);
    Ok((b.state, b.event))
}

// ---------------------------------------------------------------- tripled space

/// `dρ/dt = -i[H,ρ] + Σ_i (C_i ρ D_i† + D_i ρ C_i† - ½{D_i†C_i + C_i†D_i, ρ})`
#[derive(Clone)]
pub struct CdModel {
    pub dim: usize,
    pub hamiltonian: OperatorFn<f64>,
    pub pairs: Vec<(OperatorFn<f64>, OperatorFn<f64>)>,
}

impl CdModel {
    /// GKSL generator in this form: `C = √(|γ|/2) L`, `D = sign(γ) C`.
    pub fn from_gksl(me: &MasterEquation) -> Self {
        let me_h = me.clone();
        let pairs = (0..me.channels().len())
            .map(|i| {
                let part = |negate: bool| {
                    let me = me.clone();
                    OperatorFn::dynamic(move |t| {
                        let ch = &me.channels()[i];
                        let rate = ch.rate.eval(t);
                        let s = (0.5 * rate.abs()).sqrt() * if negate && rate < 0.0 { -1.0 } else { 1.0 };
                        ch.jump_operator.eval(t).scale_re(s)
                    })
                };
                (part(false), part(true))
            })
            .collect();
        Self { dim: me.dim(), hamiltonian: OperatorFn::dynamic(move |t| me_h.hamiltonian(t)), pairs }
    }

    /// The equation itself as a generator on the system space (for the oracle).
    pub fn to_generator(&self) -> MasterEquation {
        let model = self.clone();
        let h = OperatorFn::dynamic(move |t| {
            // -i[H, ρ] - ½{X, ρ} with X = Σ(D†C + C†D) hermitian: put X into the anticommutator via a trace sink
            model.hamiltonian.eval(t)
        });
        let mut me = MasterEquation::new(self.dim, h);
        // C ρ D† + D ρ C† = ½(C+D) ρ (C+D)† - ½(C-D) ρ (C-D)†
        for (c, d) in &self.pairs {
            let (c1, d1, c2, d2) = (c.clone(), d.clone(), c.clone(), d.clone());
            me = me
                .with_channel(Channel::new(
                    OperatorFn::dynamic(move |t| &c1.eval(t) + &d1.eval(t)),
                    crate::master_equation::RateFn::Constant(0.5),
                ))
                .with_channel(Channel::new(
                    OperatorFn::dynamic(move |t| &c2.eval(t) - &d2.eval(t)),
                    crate::master_equation::RateFn::Constant(-0.5),
                ));
        }
        me
    }
}

/// How `a(t)` is chosen for each pair.
#[derive(Clone, Default)]
pub enum AChoice {
    /// `‖C - D‖²_∞`, the smallest value keeping `Ω†Ω` PSD.
    #[default]
    Minimal,
    /// `a(t)` for pair `i`.
    Custom(Arc<dyn Fn(f64, usize) -> f64 + Send + Sync>),
}

#[derive(Clone)]
pub struct TripledEmbedding {
    pub base_dim: usize,
    pub model: CdModel,
    pub a_choice: AChoice,
}

fn block(d: usize, k: usize, l: usize, x: &ComplexMatrix) -> ComplexMatrix {
    let mut m = Matrix::zeros(3 * d);
    for i in 0..d {
        for j in 0..d {
            m[(k * d + i, l * d + j)] = x[(i, j)];
        }
    }
    m
}

impl TripledEmbedding {
    pub fn a(&self, t: f64, pair: usize) -> f64 {
        match &self.a_choice {
            AChoice::Minimal => {
                let (c, d) = &self.model.pairs[pair];
                let diff = &c.eval(t) - &d.eval(t);
                let op = diff.operator_norm();
                op * op
            }
            AChoice::Custom(f) => f(t, pair),
        }
    }

    /// `(C - D)`, `a` and `Ω = √(a𝟙 - (C-D)†(C-D))` for one pair.
    pub fn omega(&self, t: f64, pair: usize) -> Result<(ComplexMatrix, f64, ComplexMatrix)> {
        let (c, d) = &self.model.pairs[pair];
        let diff = &c.eval(t) - &d.eval(t);
        let a = self.a(t, pair);
        let mut arg = Matrix::identity(self.base_dim).scale_re(a);
        arg -= &diff.dagger().matmul(&diff);
        let om = sqrtm_psd(&arg.hermitian_part(), 1e-9)?;
        Ok((diff, a, om))
    }

    /// Markovian generator on the tripled space: `H ⊗ 𝟙` and the jumps
    /// `J_1..J_4` of every pair, all with unit rate.
    pub fn generator(&self) -> MasterEquation {
        let d = self.base_dim;
        let model = self.model.clone();
        let h = OperatorFn::dynamic(move |t| {
            let h = model.hamiltonian.eval(t);
            let mut m = Matrix::zeros(3 * d);
            for k in 0..3 {
                m += &block(d, k, k, &h);
            }
            m
        });
        let mut me = MasterEquation::new(3 * d, h);
        for i in 0..self.model.pairs.len() {
            let (c, dd) = self.model.pairs[i].clone();
            let (c2, d2) = (c.clone(), dd.clone());
            me = me.with_channel(Channel::new(
                OperatorFn::dynamic(move |t| &block(d, 0, 0, &c.eval(t)) + &block(d, 1, 1, &dd.eval(t))),
                crate::master_equation::RateFn::Constant(1.0),
            ));
            me = me.with_channel(Channel::new(
                OperatorFn::dynamic(move |t| &block(d, 0, 0, &d2.eval(t)) + &block(d, 1, 1, &c2.eval(t))),
                crate::master_equation::RateFn::Constant(1.0),
            ));
            for src in [0usize, 1] {
                let emb = self.clone();
                me = me.with_channel(Channel::new(
                    OperatorFn::dynamic(move |t| {
                        let (_, _, om) = emb.omega(t, i).expect("Ω argument stays PSD");
                        block(d, 2, src, &om)
                    }),
                    crate::master_equation::RateFn::Constant(1.0),
                ));
            }
        }
        me
    }

    /// `max_i ‖Ω_i†Ω_i + (C_i-D_i)†(C_i-D_i) - a_i𝟙‖_max` at `t`.
    pub fn omega_identity_residual(&self, t: f64) -> Result<f64> {
        let mut worst: f64 = 0.0;
        for i in 0..self.model.pairs.len() {
            let (diff, a, om) = self.omega(t, i)?;
            let mut r = om.dagger().matmul(&om);
            r += &diff.dagger().matmul(&diff);
            r -= &Matrix::identity(self.base_dim).scale_re(a);
            worst = worst.max(r.max_abs());
        }
        Ok(worst)
    }
}

/// `|χ> = (|1> + |2>)/√2` in the auxiliary factor.
fn chi_embed(psi: &[Complex64], d: usize) -> CVector<f64> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut v = vec![cre(0.0); 3 * d];
    for i in 0..d {
        v[i] = psi[i] * s;
        v[d + i] = psi[i] * s;
    }
    v
}

/// Builds the embedding and `W(0) = ρ(0) ⊗ |χ><χ|`; checks `Ω` at `t0`.
pub fn tripled_embed(
    model: CdModel,
    a_choice: AChoice,
    rho0: &DensityMatrix,
    t0: f64,
) -> Result<(TripledEmbedding, DensityMatrix)> {
    let d = model.dim;
    rho0.matrix().ensure_dim(d)?;
    let emb = TripledEmbedding { base_dim: d, model, a_choice };
    for i in 0..emb.model.pairs.len() {
        emb.omega(t0, i)?;
    }
    let mut w = Matrix::zeros(3 * d);
    for k in 0..2 {
        for l in 0..2 {
            w += &block(d, k, l, &rho0.matrix().scale_re(0.5));
        }
    }
    Ok((emb, DensityMatrix::from_hermitian_part(&w)))
}

/// Pure initial state `ψ0 ⊗ χ` of the embedded equation.
pub fn tripled_initial_state(psi0: &PureState) -> PureState {
    PureState::from_normalized_unchecked(chi_embed(psi0.amplitudes(), psi0.dim()))
}

/// `<1|W|2> / tr<1|W|2>`, hermitized.
pub fn tripled_extract(w: &ComplexMatrix) -> Result<DensityMatrix> {
    if w.dim() % 3 != 0 {
        return Err(Error::DimMismatch { expected: 3 * (w.dim() / 3 + 1), found: w.dim() });
    }
    let d = w.dim() / 3;
    let blk = Matrix::from_fn(d, |i, j| w[(i, d + j)]);
    let tr = blk.trace();
    if tr.norm() <= 1e-12 {
        return Err(Error::DegenerateBlock { trace: tr.norm() });
    }
    Ok(DensityMatrix::from_hermitian_part(&blk.scale(cre(1.0) / tr)))
}

// ---------------------------------------------------------------- weighted trajectories

/// Pure state with a real weight. The estimator is `weight * scale * |ψ><ψ|`:
/// the influence martingale keeps `scale = 1`; the pseudo-Lindblad method keeps
/// `weight = s = ±1` and accumulates the no-jump renormalization in `scale`.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightedTrajectory {
    pub state: PureState,
    pub weight: f64,
    pub scale: f64,
}

impl WeightedTrajectory {
    pub fn new(state: PureState) -> Self {
        Self { state, weight: 1.0, scale: 1.0 }
    }

    pub fn estimator_weight(&self) -> f64 {
        self.weight * self.scale
    }
}

/// Positive auxiliary jump rates `r_α(t)` of the influence martingale.
#[derive(Clone)]
pub enum RatePolicy {
    /// `r_α = max(|γ_α|, r_min)`
    AbsFloor(f64),
    /// `r_α(t)` from `(t, α, γ_α(t))`.
    Custom(Arc<dyn Fn(f64, usize, f64) -> f64 + Send + Sync>),
}

impl Default for RatePolicy {
    fn default() -> Self {
        Self::AbsFloor(0.05)
    }
}

impl std::fmt::Debug for RatePolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::AbsFloor(r) => write!(f, "AbsFloor({r})"),
            Self::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl RatePolicy {
    pub fn rates(&self, snap: &FrozenGenerator) -> Result<Vec<f64>> {
        snap.channels
            .iter()
            .enumerate()
            .map(|(a, ch)| {
                let r = match self {
                    Self::AbsFloor(min) => ch.rate.abs().max(*min),
                    Self::Custom(f) => f(snap.time, a, ch.rate),
                };
                if r > 0.0 && r.is_finite() {
                    Ok(r)
                } else {
                    Err(Error::InvalidRatePolicy { channel: a, rate: r })
                }
            })
            .collect()
    }
}

/// Influence-martingale branches; `weight_factor` multiplies `μ`.
pub fn im_branches(snap: &FrozenGenerator, psi: &PureState, dt: f64, policy: &RatePolicy) -> Result<Vec<Branch>> {
    let r = policy.rates(snap)?;
    let mut out = Vec::new();
    let mut total = 0.0;
    let mut physical = 0.0;
    for (a, ch) in snap.channels.iter().enumerate() {
        let l_psi = ch.op.apply(psi.amplitudes());
        let w = norm_sqr(&l_psi);
        physical += ch.rate * w * dt;
        let p = r[a] * w * dt;
        if p > 0.0 {
            total += p;
            out.push(Branch {
                probability: p,
                state: normalize(l_psi)?.0,
                event: Event::Jump(a),
                weight_factor: ch.rate / r[a],
                eigenvalue: None,
            });
        }
    }
    check_total(total)?;
    // exact martingale: the mean weight factor over all branches is 1
    let stay = 1.0 - total;
    out.push(Branch {
        probability: stay,
        state: drift(&snap.k, psi, dt)?,
        event: Event::Deterministic,
        weight_factor: if stay > 0.0 { (1.0 - physical) / stay } else { 0.0 },
        eigenvalue: None,
    });
    Ok(out)
}

fn apply_branch(wt: &WeightedTrajectory, b: Branch, scale_factor: f64) -> (WeightedTrajectory, Event) {
    (
        WeightedTrajectory { state: b.state, weight: wt.weight * b.weight_factor, scale: wt.scale * scale_factor },
        b.event,
    )
}

pub fn im_step(
    wt: &WeightedTrajectory,
    snap: &FrozenGenerator,
    dt: f64,
    policy: &RatePolicy,
    u: f64,
) -> Result<(WeightedTrajectory, Event)> {
    let mut branches = im_branches(snap, &wt.state, dt, policy)?;
    let b = branches.swap_remove(crate::local::select_branch(&branches, u));
    Ok(apply_branch(wt, b, 1.0))
}

/// Pseudo-Lindblad branches. Jumps use `|γ_α|`; `weight_factor` is the sign
/// flip for jumps and, for the deterministic branch, the renormalization
/// `‖(1 - iK dt)ψ‖² / (1 - Σ p)` that goes into `scale`.
pub fn plqt_branches(snap: &FrozenGenerator, psi: &PureState, dt: f64) -> Result<Vec<Branch>> {
    let mut out = Vec::new();
    let mut total = 0.0;
    let mut physical = 0.0;
    for (a, ch) in snap.channels.iter().enumerate() {
        let l_psi = ch.op.apply(psi.amplitudes());
        physical += ch.rate * norm_sqr(&l_psi) * dt;
        let p = ch.rate.abs() * norm_sqr(&l_psi) * dt;
        if p > 0.0 {
            total += p;
            out.push(Branch {
                probability: p,
                state: normalize(l_psi)?.0,
                event: Event::Jump(a),
                weight_factor: ch.rate.signum(),
                eigenvalue: None,
            });
        }
    }
    check_total(total)?;
    let kpsi = snap.k.apply(psi.amplitudes());
    let raw: CVector<f64> = psi.amplitudes().iter().zip(&kpsi).map(|(p, k)| p - I * dt * k).collect();
    let (state, _) = normalize(raw)?;
    let stay = 1.0 - total;
    // first-order no-jump norm over stay probability keeps E[s·scale] = 1 exactly
    let factor = if stay > 0.0 { (1.0 - physical) / stay } else { 0.0 };
    out.push(Branch { probability: stay, state, event: Event::Deterministic, weight_factor: factor, eigenvalue: None });
    Ok(out)
}

pub fn plqt_step(wt: &WeightedTrajectory, snap: &FrozenGenerator, dt: f64, u: f64) -> Result<(WeightedTrajectory, Event)> {
    if wt.weight.abs() != 1.0 {
        return Err(Error::InvalidArgument(format!("sign bit must be ±1, got {}", wt.weight)));
    }
    let mut branches = plqt_branches(snap, &wt.state, dt)?;
    let mut b = branches.swap_remove(crate::local::select_branch(&branches, u));
    if b.event == Event::Deterministic {
        let f = b.weight_factor;
        b.weight_factor = 1.0;
        Ok(apply_branch(wt, b, f))
    } else {
        Ok(apply_branch(wt, b, 1.0))
    }
}

// ---------------------------------------------------------------- cloning

#[derive(Clone, Debug, PartialEq)]
pub enum CloningOutcome {
    Step(StepOutcome),
    /// The member continues as the evolved state and spawns a copy of it.
    Clone(PureState),
    Destroy,
}

/// Cloning branches: MCWF jumps, deterministic, then clone or destroy. A
/// clone branch carries `weight_factor = 2` (two members), destroy `0`.
pub fn cloning_branches(snap: &FrozenGenerator, psi: &PureState, dt: f64) -> Result<Vec<Branch>> {
    let mut out = Vec::new();
    let mut total = 0.0;
    for (a, ch) in snap.channels.iter().enumerate() {
        if ch.rate < -EPS {
            return Err(Error::NegativeRate { channel: a, rate: ch.rate, time: snap.time });
        }
        let l_psi = ch.op.apply(psi.amplitudes());
        let p = ch.rate.max(0.0) * norm_sqr(&l_psi) * dt;
        if p > 0.0 {
            total += p;
            out.push(Branch { probability: p, state: normalize(l_psi)?.0, event: Event::Jump(a), weight_factor: 1.0, eigenvalue: None });
        }
    }
    let diff = &snap.gamma_l - &snap.gamma;
    let excess = diff.sandwich(psi.amplitudes(), psi.amplitudes()).re * dt;
    let p_c = excess.max(0.0);
    let p_d = (-excess).max(0.0);
    check_total(total + p_c + p_d)?;
    let evolved = drift(&snap.k, psi, dt)?;
    out.push(Branch {
        probability: 1.0 - total - p_c - p_d,
        state: evolved.clone(),
        event: Event::Deterministic,
        weight_factor: 1.0,
        eigenvalue: None,
    });
    if p_c > 0.0 {
        out.push(Branch { probability: p_c, state: evolved.clone(), event: Event::Deterministic, weight_factor: 2.0, eigenvalue: None });
    }
    if p_d > 0.0 {
        out.push(Branch { probability: p_d, state: evolved, event: Event::Deterministic, weight_factor: 0.0, eigenvalue: None });
    }
    Ok(out)
}

pub fn cloning_step(psi: &PureState, snap: &FrozenGenerator, dt: f64, u: f64) -> Result<CloningOutcome> {
    let branches = cloning_branches(snap, psi, dt)?;
    let n_jumps = branches.iter().take_while(|b| b.event != Event::Deterministic).count();
    let mut acc = 0.0;
    for (i, b) in branches.iter().enumerate() {
        acc += b.probability;
        let last = i + 1 == branches.len();
        if u < acc || last {
            if i < n_jumps || b.weight_factor == 1.0 {
                return Ok(CloningOutcome::Step(StepOutcome {
                    state: b.state.clone(),
                    event: b.event,
                    probability: Some(b.probability),
                    eigenvalue: None,
                }));
            }
            return Ok(if b.weight_factor == 2.0 { CloningOutcome::Clone(b.state.clone()) } else { CloningOutcome::Destroy });
        }
    }
    unreachable!("branch list is never empty")
}

/// Variable-size trajectory population.
#[derive(Clone, Debug, PartialEq)]
pub struct Population {
    /// Members with the batch label inherited from their ancestor.
    pub members: Vec<(PureState, usize)>,
    pub initial_count: usize,
    /// Product of the population ratios folded in at each resampling.
    pub trace_factor: f64,
}

impl Population {
    pub fn new(initial: &PureState, n: usize, batches: usize) -> Self {
        let members = (0..n).map(|k| (initial.clone(), k % batches.max(1))).collect();
        Self { members, initial_count: n, trace_factor: 1.0 }
    }

    /// Estimated trace `tr ρ(t)`.
    pub fn trace_estimate(&self) -> f64 {
        self.trace_factor * self.members.len() as f64 / self.initial_count as f64
    }

    /// Resamples to the initial size when the population has doubled or
    /// halved; `pick(m)` returns a uniform index below `m`.
    pub fn maybe_resample(&mut self, mut pick: impl FnMut(usize) -> usize) -> bool {
        let m = self.members.len();
        let n0 = self.initial_count;
        if m > 2 * n0 || 2 * m < n0 {
            if m == 0 {
                return false;
            }
            self.trace_factor *= m as f64 / n0 as f64;
            let old = std::mem::take(&mut self.members);
            self.members = (0..n0).map(|_| old[pick(m)].clone()).collect();
            true
        } else {
            false
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pauli::*;
    use crate::linalg::{c, Ket};
    use crate::master_equation::RateFn;
    use crate::propagator::{propagate, TimeGrid};

    fn phase_cov(gp: f64, gm: f64, gz: f64) -> MasterEquation {
        MasterEquation::trivial(2)
            .with_channel(Channel::constant(sigma_plus(), gp))
            .with_channel(Channel::constant(sigma_minus(), gm))
            .with_channel(Channel::constant(sigma_z(), gz))
    }

    fn spontaneous(omega0: f64, omega: f64, gamma: f64) -> MasterEquation {
        let h = &sigma_z::<f64>().scale_re(omega0 / 2.0) + &sigma_x::<f64>().scale_re(omega);
        MasterEquation::new(2, h).with_channel(Channel::constant(sigma_minus(), gamma))
    }

    fn k1() -> PureState {
        Ket::basis(2, 1)
    }

    #[test]
    fn opd_examples() {
        let o = opd_decompose(&sigma_z()).unwrap();
        assert!((o.mu_plus - 1.0).abs() < 1e-12 && (o.mu_minus - 1.0).abs() < 1e-12);
        assert!((o.sigma_plus.unwrap().matrix() - &k1().projector()).max_abs() < 1e-12);
        assert!((o.sigma_minus.unwrap().matrix() - &Ket::<f64>::basis(2, 0).projector()).max_abs() < 1e-12);
        let q = plus::<f64>().projector();
        let o = opd_decompose(&q).unwrap();
        assert!((o.mu_plus - 1.0).abs() < 1e-12 && o.mu_minus == 0.0 && o.sigma_minus.is_none());
        let o = opd_decompose(&sigma_x()).unwrap();
        assert!((o.sigma_plus.unwrap().matrix() - &plus::<f64>().projector()).max_abs() < 1e-12);
        assert!((o.sigma_minus.unwrap().matrix() - &minus::<f64>().projector()).max_abs() < 1e-12);
        let mut bad = sigma_x::<f64>();
        bad[(0, 1)] = c(2.0, 0.0);
        assert!(matches!(opd_decompose(&bad), Err(Error::NotHermitian { .. })));
    }

    #[test]
    fn doubled_examples() {
        let gamma = 0.6f64;
        let model = gksl_to_doubled(&spontaneous(1.0, 0.4, gamma)).at(0.3);
        let want_a = &(&sigma_z::<f64>().scale(c(0.0, -0.5)) + &sigma_x::<f64>().scale(c(0.0, -0.4)))
            - &k1().projector().scale_re(gamma / 2.0);
        assert!((&model.a - &want_a).max_abs() < 1e-14);
        assert!((&model.c[0] - &sigma_minus::<f64>().scale_re(gamma.sqrt())).max_abs() < 1e-14);
        assert_eq!(model.c[0], model.d[0]);
        assert!(gksl_to_doubled(&MasterEquation::trivial(2)).c.is_empty());

        let neg = gksl_to_doubled(&phase_cov(0.0, -0.5, 0.0)).at(0.0);
        let rho = plus::<f64>().projector();
        let cd = neg.c[1].matmul(&rho).matmul(&neg.d[1].dagger());
        let want = sigma_minus::<f64>().matmul(&rho).matmul(&sigma_plus()).scale_re(-0.5);
        assert!((&cd - &want).max_abs() < 1e-14);

        let theta = DoubledState::from_pure(&k1());
        let m = gksl_to_doubled(&MasterEquation::trivial(2).with_channel(Channel::constant(sigma_minus(), 1.0))).at(0.0);
        let b = doubled_branches(&m, &theta, 0.01).unwrap();
        assert!((b[0].probability - 0.01).abs() < 1e-15);
        let b = doubled_branches(&m, &DoubledState::from_pure(&Ket::basis(2, 0)), 0.01).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].event, Event::Deterministic);
    }

    #[test]
    fn doubled_one_step_is_unbiased() {
        let me = phase_cov(0.3, 0.8, 0.2);
        let model = gksl_to_doubled(&me).at(0.0);
        let snap = me.at(0.0);
        let dt = 1e-3;
        let psi = Ket::from_amplitudes(vec![c(0.6, 0.1), c(0.2, -0.7)]).unwrap();
        let theta = DoubledState::from_pure(&psi);
        let mut e = Matrix::zeros(2);
        for b in doubled_branches(&model, &theta, dt).unwrap() {
            e.add_scaled(cre(b.probability), &b.state.estimator());
        }
        let mut want = psi.projector();
        want += &snap.lindblad_apply(&psi.projector()).scale_re(dt);
        assert!((&e - &want).max_abs() < 10.0 * dt * dt);
    }

    #[test]
    fn tripled_examples() {
        let gamma = 0.7f64;
        let c_op = sigma_minus::<f64>().scale_re(gamma.sqrt());
        let model = CdModel {
            dim: 2,
            hamiltonian: OperatorFn::Constant(Matrix::zeros(2)),
            pairs: vec![(OperatorFn::Constant(c_op.clone()), OperatorFn::Constant(c_op))],
        };
        let rho0 = DensityMatrix::pure(&plus());
        let (emb, w0) = tripled_embed(model, AChoice::Minimal, &rho0, 0.0).unwrap();
        assert_eq!(emb.a(0.0, 0), 0.0);
        let (_, _, om) = emb.omega(0.0, 0).unwrap();
        assert!(om.max_abs() < 1e-15);
        assert!((tripled_extract(w0.matrix()).unwrap().matrix() - rho0.matrix()).max_abs() < 1e-15);
        assert!((&tripled_initial_state(&plus()).projector() - w0.matrix()).max_abs() < 1e-15);

        let model = CdModel {
            dim: 2,
            hamiltonian: OperatorFn::Constant(Matrix::zeros(2)),
            pairs: vec![(OperatorFn::Constant(sigma_minus()), OperatorFn::Constant(Matrix::zeros(2)))],
        };
        let (emb, _) = tripled_embed(model, AChoice::Custom(Arc::new(|_, _| 1.0)), &rho0, 0.0).unwrap();
        let (_, _, om) = emb.omega(0.0, 0).unwrap();
        assert!((&om - &Ket::<f64>::basis(2, 0).projector()).max_abs() < 1e-12);
        assert!(emb.omega_identity_residual(0.0).unwrap() < 1e-9);

        let small = CdModel {
            dim: 2,
            hamiltonian: OperatorFn::Constant(Matrix::zeros(2)),
            pairs: vec![(OperatorFn::Constant(sigma_minus()), OperatorFn::Constant(Matrix::zeros(2)))],
        };
        assert!(matches!(
            tripled_embed(small, AChoice::Custom(Arc::new(|_, _| 0.5)), &rho0, 0.0),
            Err(Error::NotPsd { .. })
        ));

        let w = block(2, 0, 0, &Matrix::identity(2).scale_re(0.5));
        assert!(matches!(tripled_extract(&w), Err(Error::DegenerateBlock { .. })));
    }

    #[test]
    fn tripled_generator_reproduces_the_equation() {
        let me = MasterEquation::trivial(2)
            .with_channel(Channel::constant(sigma_plus(), 1.0))
            .with_channel(Channel::constant(sigma_minus(), 1.0))
            .with_channel(Channel::new(sigma_z::<f64>(), RateFn::dynamic(|t: f64| -0.5 * t.tanh())));
        let model = CdModel::from_gksl(&me);
        let rho0 = DensityMatrix::pure(&plus());
        let (emb, w0) = tripled_embed(model.clone(), AChoice::Minimal, &rho0, 0.0).unwrap();
        let grid = TimeGrid::from_zero(2.0, 0.01).unwrap();
        let w = propagate(&emb.generator(), &w0, &grid).unwrap();
        let direct = propagate(&me, &rho0, &grid).unwrap();
        let via_cd = propagate(&model.to_generator(), &rho0, &grid).unwrap();
        for k in [50usize, 100, 200] {
            let ext = tripled_extract(w.states[k].matrix()).unwrap();
            assert!((ext.matrix() - direct.states[k].matrix()).max_abs() < 1e-8);
            assert!((via_cd.states[k].matrix() - direct.states[k].matrix()).max_abs() < 1e-8);
        }
        for k in 0..100 {
            assert!(emb.omega_identity_residual(0.05 * k as f64).unwrap() < 1e-9);
        }
    }

    #[test]
    fn im_examples() {
        let me = phase_cov(0.4, 0.9, 0.3);
        let snap = me.at(0.0);
        let policy = RatePolicy::Custom(Arc::new(|_, _, g| g));
        let b = im_branches(&snap, &plus(), 0.01, &policy).unwrap();
        assert!(b.iter().all(|b| (b.weight_factor - 1.0).abs() < 1e-15));
        let me = phase_cov(0.0, -0.5, 0.0);
        let b = im_branches(&me.at(0.0), &k1(), 0.01, &RatePolicy::AbsFloor(0.05)).unwrap();
        assert!((b[0].weight_factor + 1.0).abs() < 1e-15);
        assert!(matches!(
            im_branches(&me.at(0.0), &k1(), 0.01, &RatePolicy::Custom(Arc::new(|_, _, _| 0.0))),
            Err(Error::InvalidRatePolicy { .. })
        ));
    }

    #[test]
    fn plqt_examples() {
        let me = phase_cov(0.0, -0.5, 0.0);
        let b = plqt_branches(&me.at(0.0), &k1(), 0.01).unwrap();
        assert!((b[0].probability - 0.005).abs() < 1e-15);
        let wt = WeightedTrajectory::new(k1());
        let (next, ev) = plqt_step(&wt, &me.at(0.0), 0.01, 0.001).unwrap();
        assert_eq!(ev, Event::Jump(1));
        assert_eq!(next.weight, -1.0);
        assert_eq!(next.state.fidelity(&Ket::basis(2, 0)), 1.0);
        let flipped = WeightedTrajectory { state: k1(), weight: -1.0, scale: 1.0 };
        let (next, _) = plqt_step(&flipped, &me.at(0.0), 0.01, 0.001).unwrap();
        assert_eq!(next.weight, 1.0);
        // non-negative rates: same branches as MCWF with unit factors
        let me = phase_cov(0.4, 0.9, 0.3);
        let p = plqt_branches(&me.at(0.0), &plus(), 0.01).unwrap();
        let m = crate::local::mcwf_branches(&me.at(0.0), &plus(), 0.01).unwrap();
        for (a, b) in p.iter().zip(&m) {
            assert!((a.probability - b.probability).abs() < 1e-15);
            assert!(a.state.same_ray(&b.state, 1e-14));
            assert!((a.weight_factor - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn cloning_examples() {
        let me = spontaneous(0.0, 0.0, 1.0);
        let b = cloning_branches(&me.at(0.0), &plus(), 0.01).unwrap();
        assert_eq!(b.len(), 2);
        let lambda = 0.3;
        let sunk = spontaneous(0.0, 0.0, 1.0)
            .with_trace_sink(&k1().projector() - &Matrix::identity(2).scale_re(lambda));
        for psi in [plus(), k1(), Ket::basis(2, 0)] {
            let b = cloning_branches(&sunk.at(0.0), &psi, 0.01).unwrap();
            let clone = b.iter().find(|b| b.weight_factor == 2.0).unwrap();
            assert!((clone.probability - lambda * 0.01).abs() < 1e-15);
        }
        assert!(matches!(cloning_step(&plus(), &sunk.at(0.0), 0.01, 0.9999).unwrap(), CloningOutcome::Clone(_)));
        let mut pop = Population::new(&plus(), 4, 2);
        pop.members.truncate(1);
        assert!(pop.maybe_resample(|_| 0));
        assert_eq!(pop.members.len(), 4);
        assert!((pop.trace_estimate() - 0.25).abs() < 1e-15);
    }
}

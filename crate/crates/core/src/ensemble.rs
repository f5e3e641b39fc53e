//! Ensemble driver: runs trajectories of any method, reconstructs `ρ̂(t)`,
//! and estimates statistical errors. Results depend only on
//! `(method, model, grid, n_traj, seed)`, never on the worker count.

use std::borrow::Cow;
use std::collections::BTreeMap;
use std::time::Instant;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::extended::{
    doubled_from_snapshot, doubled_step, im_step, plqt_step, tripled_embed, tripled_extract, tripled_initial_state,
    AChoice, CdModel, CloningOutcome, DoubledState, Population, RatePolicy, WeightedTrajectory,
};
use crate::linalg::{normalize, trace_distance, Matrix};
use crate::local::{
    mcwf_step_frozen, nmqj_step, roqj_step_frozen, wroqj_step_frozen, wtd_evolve, wtd_select_channel_frozen, Event,
    GaugeTransform, NmqjEnsemble, NmqjEvent, NmqjEventKind, SnapshotSource, StepOutcome,
};
use crate::propagator::OracleSolution;
use crate::rng::{ensemble_stream, substream};
use crate::{ComplexMatrix, DensityMatrix, FrozenGenerator, MasterEquation, PureState, TimeGrid};

/// Number of batches used for batch-means error bars.
pub const BATCHES: usize = 20;
/// Trajectories per work unit; fixed so reduction order never depends on threads.
const CHUNK: usize = 64;

/// Unraveling method with its parameters.
#[derive(Clone, Debug)]
pub enum MethodId {
    Mcwf,
    Wtd,
    Nmqj,
    Wroqj,
    /// Rate-operator method with a time-dependent gauge `C_t`.
    Rroqj(GaugeTransform),
    /// Rate-operator method with a state-dependent gauge `|φ_{ψ,t}>`.
    PsiRoqj(GaugeTransform),
    Doubled,
    /// Tripled space; `None` recasts the generator channel by channel.
    Tripled(Option<CdModel>),
    Im(RatePolicy),
    Plqt,
    Cloning,
}

impl std::fmt::Debug for CdModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("CdModel").field("dim", &self.dim).field("pairs", &self.pairs.len()).finish()
    }
}

impl MethodId {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Mcwf => "mcwf",
            Self::Wtd => "wtd",
            Self::Nmqj => "nmqj",
            Self::Wroqj => "wroqj",
            Self::Rroqj(_) => "r_roqj",
            Self::PsiRoqj(_) => "psi_roqj",
            Self::Doubled => "doubled",
            Self::Tripled(_) => "tripled",
            Self::Im(_) => "im",
            Self::Plqt => "plqt",
            Self::Cloning => "cloning",
        }
    }
}

/// Statistical information kept per grid point for error bars.
#[derive(Clone, Debug)]
pub enum Spread {
    /// Independent batch estimates of `ρ̂`.
    Batches(Vec<ComplexMatrix>),
    /// Weighted members `(p_k, |ψ_k><ψ_k|)` of a correlated ensemble, plus the member count.
    Members(Vec<(f64, ComplexMatrix)>, u64),
}

#[derive(Clone, Debug)]
pub struct EnsembleResult {
    pub method: String,
    pub grid: TimeGrid,
    /// One estimate per grid point; shorter than the grid after an abort.
    pub rho_hat: Vec<DensityMatrix>,
    /// Trace-distance standard error per grid point.
    pub stderr: Vec<f64>,
    pub spread: Vec<Spread>,
    pub n_traj: usize,
    pub wall_clock_ms: f64,
    pub event_counts: BTreeMap<String, u64>,
    /// Mean `‖φ‖/‖ψ‖` per grid point (doubled space only).
    pub norm_ratio: Option<Vec<f64>>,
    /// Event log of the NMQJ effective ensemble.
    pub nmqj_events: Vec<NmqjEvent>,
}

/// Method error with the grid time at which it first occurred; `partial`
/// holds the estimates for all earlier grid points.
#[derive(Debug, Clone, thiserror::Error)]
#[error("{method} failed at t = {time}: {source}")]
pub struct EnsembleError {
    pub method: String,
    pub time: f64,
    #[source]
    pub source: Error,
    pub partial: Option<Box<EnsembleResult>>,
}

// ---------------------------------------------------------------- snapshot cache

/// Frozen generators at every grid point and half step.
pub struct SnapshotCache {
    me: MasterEquation,
    t0: f64,
    half: f64,
    snaps: Vec<FrozenGenerator>,
}

impl SnapshotCache {
    pub fn new(me: &MasterEquation, grid: &TimeGrid) -> Self {
        let half = 0.5 * grid.dt;
        let snaps = (0..=2 * grid.steps()).into_par_iter().map(|k| me.at(grid.t0 + half * k as f64)).collect();
        Self { me: me.clone(), t0: grid.t0, half, snaps }
    }

    /// Generator frozen at grid point `i`.
    pub fn at_step(&self, i: usize) -> &FrozenGenerator {
        &self.snaps[2 * i]
    }
}

impl SnapshotSource for SnapshotCache {
    fn snapshot(&self, t: f64) -> Cow<'_, FrozenGenerator> {
        let k = (t - self.t0) / self.half;
        let r = k.round();
        if (k - r).abs() < 1e-9 && r >= 0.0 && (r as usize) < self.snaps.len() {
            Cow::Borrowed(&self.snaps[r as usize])
        } else {
            Cow::Owned(self.me.at(t))
        }
    }
}

// ---------------------------------------------------------------- accumulation

#[derive(Clone, Debug)]
struct Accum {
    sums: Vec<ComplexMatrix>,
    ratio: Vec<f64>,
    events: BTreeMap<String, u64>,
    /// (grid index of the failing step, error)
    failure: Option<(usize, Error)>,
}

impl Accum {
    fn new(len: usize, dim: usize) -> Self {
        Self { sums: vec![Matrix::zeros(dim); len], ratio: vec![0.0; len], events: BTreeMap::new(), failure: None }
    }

    fn add(&mut self, i: usize, w: f64, m: &ComplexMatrix) {
        self.sums[i].add_scaled(Complex64::new(w, 0.0), m);
    }

    fn event(&mut self, key: String) {
        *self.events.entry(key).or_insert(0) += 1;
    }

    fn fail(&mut self, i: usize, e: Error) {
        if self.failure.as_ref().is_none_or(|(j, _)| i < *j) {
            self.failure = Some((i, e));
        }
    }

    fn merge(mut self, other: Self) -> Self {
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.ratio.iter_mut().zip(&other.ratio) {
            *a += b;
        }
        for (k, v) in other.events {
            *self.events.entry(k).or_insert(0) += v;
        }
        if let Some((i, e)) = other.failure {
            self.fail(i, e);
        }
        self
    }
}

/// Pairwise reduction in a fixed shape determined only by the input length.
fn tree_reduce<T>(mut v: Vec<T>, f: impl Fn(T, T) -> T) -> Option<T> {
    while v.len() > 1 {
        let mut next = Vec::with_capacity(v.len().div_ceil(2));
        let mut it = v.into_iter();
        while let Some(a) = it.next() {
            next.push(match it.next() {
                Some(b) => f(a, b),
                None => a,
            });
        }
        v = next;
    }
    v.pop()
}

fn event_key(ev: &Event) -> Option<String> {
    match ev {
        Event::Deterministic => None,
        Event::Jump(a) => Some(format!("jump[{a}]")),
        Event::ReverseJump { .. } => Some("reverse_jump".into()),
    }
}

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    rng.random::<f64>()
}

fn open_uniform(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x = rng.random::<f64>();
        if x > 0.0 {
            return x;
        }
    }
}

struct Ctx<'a> {
    method: &'a MethodId,
    cache: &'a SnapshotCache,
    doubled: &'a [crate::extended::DoubledFrozen],
    grid: TimeGrid,
    psi0: PureState,
    seed: u64,
}

fn step_pure(ctx: &Ctx, snap: &FrozenGenerator, psi: &PureState, u: f64) -> Result<StepOutcome> {
    let dt = ctx.grid.dt;
    match ctx.method {
        MethodId::Wroqj => wroqj_step_frozen(snap, psi, dt, u),
        MethodId::Rroqj(g) | MethodId::PsiRoqj(g) => roqj_step_frozen(snap, psi, dt, g, u),
        _ => mcwf_step_frozen(snap, psi, dt, u),
    }
}

/// Runs trajectory `k`, adding its contributions to `acc`.
fn run_trajectory(ctx: &Ctx, k: usize, acc: &mut Accum) {
    let mut rng = substream(ctx.seed, k as u64);
    let steps = ctx.grid.steps();
    let dt = ctx.grid.dt;
    match ctx.method {
        MethodId::Wtd => run_wtd(ctx, &mut rng, acc),
        MethodId::Doubled => {
            let mut theta = DoubledState::from_pure(&ctx.psi0);
            acc.add(0, 1.0, &theta.estimator());
            acc.ratio[0] += theta.norm_ratio();
            for i in 0..steps {
                match doubled_step(&ctx.doubled[i], &theta, dt, uniform(&mut rng)) {
                    Ok((next, ev)) => {
                        theta = next;
                        if let Some(key) = event_key(&ev) {
                            acc.event(key);
                        }
                    }
                    Err(e) => return acc.fail(i, e),
                }
                acc.add(i + 1, 1.0, &theta.estimator());
                acc.ratio[i + 1] += theta.norm_ratio();
            }
        }
        MethodId::Im(_) | MethodId::Plqt => {
            let mut wt = WeightedTrajectory::new(ctx.psi0.clone());
            acc.add(0, 1.0, &wt.state.projector());
            for i in 0..steps {
                let snap = ctx.cache.at_step(i);
                let u = uniform(&mut rng);
                let res = match ctx.method {
                    MethodId::Im(policy) => im_step(&wt, snap, dt, policy, u),
                    _ => plqt_step(&wt, snap, dt, u),
                };
                match res {
                    Ok((next, ev)) => {
                        if next.weight.signum() != wt.weight.signum() {
                            acc.event("sign_flip".into());
                        }
                        wt = next;
                        if let Some(key) = event_key(&ev) {
                            acc.event(key);
                        }
                    }
                    Err(e) => return acc.fail(i, e),
                }
                acc.add(i + 1, wt.estimator_weight(), &wt.state.projector());
            }
        }
        _ => {
            let mut psi = ctx.psi0.clone();
            acc.add(0, 1.0, &psi.projector());
            for i in 0..steps {
                match step_pure(ctx, ctx.cache.at_step(i), &psi, uniform(&mut rng)) {
                    Ok(out) => {
                        psi = out.state;
                        if let Some(key) = event_key(&out.event) {
                            acc.event(key);
                        }
                    }
                    Err(e) => return acc.fail(i, e),
                }
                acc.add(i + 1, 1.0, &psi.projector());
            }
        }
    }
}

fn run_wtd(ctx: &Ctx, rng: &mut ChaCha8Rng, acc: &mut Accum) {
    let grid = ctx.grid;
    let t_end = grid.time(grid.steps());
    let mut psi = ctx.psi0.clone();
    let mut t = grid.t0;
    acc.add(0, 1.0, &psi.projector());
    let mut next_idx = 1usize;
    loop {
        let x = open_uniform(rng);
        let mut observed = Vec::new();
        let res = wtd_evolve(ctx.cache, &psi, t, x, t_end, grid.dt, grid.t0, &mut |tt, s| {
            observed.push((((tt - grid.t0) / grid.dt).round() as usize, s.projector()));
        });
        for (i, m) in observed {
            if i >= next_idx && i < acc.sums.len() {
                acc.add(i, 1.0, &m);
                next_idx = i + 1;
            }
        }
        let jump = match res {
            Ok(j) => j,
            Err(e) => return acc.fail(next_idx - 1, e),
        };
        if !jump.jumped {
            break;
        }
        // grid points within the bisection tolerance of the jump time
        let reached = ((jump.time - grid.t0) / grid.dt + 1e-9).floor() as usize;
        while next_idx <= reached.min(acc.sums.len() - 1) {
            acc.add(next_idx, 1.0, &jump.state.projector());
            next_idx += 1;
        }
        let snap = ctx.cache.snapshot(jump.time);
        let channel = match wtd_select_channel_frozen(&snap, &jump.state, uniform(rng)) {
            Ok(a) => a,
            Err(e) => return acc.fail(next_idx - 1, e),
        };
        psi = match normalize(snap.channels[channel].op.apply(jump.state.amplitudes())) {
            Ok((s, _)) => s,
            Err(e) => return acc.fail(next_idx - 1, e),
        };
        acc.event(format!("jump[{channel}]"));
        t = jump.time;
    }
}

fn batch_ranges(n: usize) -> Vec<(usize, usize)> {
    let b = BATCHES.min(n);
    (0..b).map(|i| (i * n / b, (i + 1) * n / b)).collect()
}

fn reconstruct(method: &MethodId, sum: &ComplexMatrix, n: f64) -> Result<DensityMatrix> {
    match method {
        MethodId::Tripled(_) => tripled_extract(sum),
        _ => Ok(DensityMatrix::from_hermitian_part(&sum.scale_re(1.0 / n))),
    }
}

fn batch_stderr(rho: &DensityMatrix, batches: &[ComplexMatrix]) -> f64 {
    let b = batches.len();
    if b < 2 {
        return 0.0;
    }
    let s: f64 = batches
        .iter()
        .map(|m| trace_distance(&DensityMatrix::from_hermitian_part(m), rho).unwrap_or(0.0).powi(2))
        .sum();
    (s / (b * (b - 1)) as f64).sqrt()
}

fn member_stderr(rho: &DensityMatrix, members: &[(f64, ComplexMatrix)], n: u64) -> f64 {
    if n < 2 {
        return 0.0;
    }
    let s: f64 = members
        .iter()
        .map(|(p, m)| p * trace_distance(&DensityMatrix::from_hermitian_part(m), rho).unwrap_or(0.0).powi(2))
        .sum();
    (s / (n - 1) as f64).sqrt()
}

fn method_error(method: &MethodId, time: f64, source: Error) -> EnsembleError {
    EnsembleError { method: method.name().into(), time, source, partial: None }
}

/// Runs `n_traj` trajectories of `method` from `psi0` over `grid`.
pub fn run_ensemble(
    method: &MethodId,
    me: &MasterEquation,
    psi0: &PureState,
    grid: &TimeGrid,
    n_traj: usize,
    seed: u64,
) -> std::result::Result<EnsembleResult, EnsembleError> {
    let start = Instant::now();
    if n_traj == 0 {
        return Err(method_error(method, grid.t0, Error::InvalidArgument("n_traj must be at least 1".into())));
    }
    if psi0.dim() != me.dim() {
        return Err(method_error(method, grid.t0, Error::DimMismatch { expected: me.dim(), found: psi0.dim() }));
    }
    let (mut result, failure) = match method {
        MethodId::Nmqj => run_nmqj(me, psi0, grid, n_traj, seed),
        MethodId::Cloning => run_cloning(me, psi0, grid, n_traj, seed),
        _ => run_independent(method, me, psi0, grid, n_traj, seed).map_err(|e| method_error(method, grid.t0, e))?,
    };
    result.wall_clock_ms = start.elapsed().as_secs_f64() * 1e3;
    match failure {
        None => Ok(result),
        Some((i, e)) => Err(EnsembleError {
            method: method.name().into(),
            time: grid.time(i),
            source: e,
            partial: Some(Box::new(result)),
        }),
    }
}

type Outcome = (EnsembleResult, Option<(usize, Error)>);

fn empty_result(method: &MethodId, grid: &TimeGrid, n_traj: usize) -> EnsembleResult {
    EnsembleResult {
        method: method.name().into(),
        grid: *grid,
        rho_hat: Vec::new(),
        stderr: Vec::new(),
        spread: Vec::new(),
        n_traj,
        wall_clock_ms: 0.0,
        event_counts: BTreeMap::new(),
        norm_ratio: None,
        nmqj_events: Vec::new(),
    }
}

fn run_independent(
    method: &MethodId,
    me: &MasterEquation,
    psi0: &PureState,
    grid: &TimeGrid,
    n: usize,
    seed: u64,
) -> Result<Outcome> {
    let (generator, start) = match method {
        MethodId::Tripled(model) => {
            let model = model.clone().unwrap_or_else(|| CdModel::from_gksl(me));
            let (emb, _) = tripled_embed(model, AChoice::Minimal, &DensityMatrix::pure(psi0), grid.t0)?;
            (emb.generator(), tripled_initial_state(psi0))
        }
        _ => (me.clone(), psi0.clone()),
    };
    let cache = SnapshotCache::new(&generator, grid);
    let doubled: Vec<_> = if matches!(method, MethodId::Doubled) {
        (0..grid.steps()).map(|i| doubled_from_snapshot(cache.at_step(i))).collect()
    } else {
        Vec::new()
    };
    let ctx = Ctx { method, cache: &cache, doubled: &doubled, grid: *grid, psi0: start, seed };
    let len = grid.len();
    let dim = generator.dim();

    let ranges = batch_ranges(n);
    let units: Vec<(usize, usize, usize)> = ranges
        .iter()
        .enumerate()
        .flat_map(|(b, &(s, e))| (s..e).step_by(CHUNK).map(move |c| (b, c, (c + CHUNK).min(e))))
        .collect();
    let partials: Vec<(usize, Accum)> = units
        .par_iter()
        .map(|&(b, s, e)| {
            let mut acc = Accum::new(len, dim);
            for k in s..e {
                run_trajectory(&ctx, k, &mut acc);
            }
            (b, acc)
        })
        .collect();
    let mut per_batch: Vec<Vec<Accum>> = vec![Vec::new(); ranges.len()];
    for (b, acc) in partials {
        per_batch[b].push(acc);
    }
    let batches: Vec<Accum> =
        per_batch.into_iter().map(|v| tree_reduce(v, Accum::merge).expect("non-empty batch")).collect();

    let batch_sums: Vec<Vec<ComplexMatrix>> = batches.iter().map(|a| a.sums.clone()).collect();
    let total = tree_reduce(batches, Accum::merge).expect("at least one batch");

    let mut failure = total.failure.clone();
    let valid = failure.as_ref().map_or(len, |(i, _)| i + 1);
    let mut result = empty_result(method, grid, n);
    for i in 0..valid {
        let rho = match reconstruct(method, &total.sums[i], n as f64) {
            Ok(r) => r,
            Err(e) => {
                failure = Some((i, e));
                break;
            }
        };
        let estimates: Vec<ComplexMatrix> = batch_sums
            .iter()
            .zip(&ranges)
            .filter_map(|(s, &(a, b))| reconstruct(method, &s[i], (b - a) as f64).ok().map(|d| d.into_matrix()))
            .collect();
        result.stderr.push(batch_stderr(&rho, &estimates));
        result.spread.push(Spread::Batches(estimates));
        result.rho_hat.push(rho);
    }
    if matches!(method, MethodId::Doubled) {
        result.norm_ratio = Some(total.ratio[..result.rho_hat.len()].iter().map(|r| r / n as f64).collect());
    }
    result.event_counts = total.events;
    if let Some((i, _)) = &failure {
        // keep the failure index consistent with the rows actually produced
        if *i >= result.rho_hat.len() {
            failure = failure.map(|(_, e)| (result.rho_hat.len().saturating_sub(1).max(0), e));
        }
    }
    Ok((result, failure))
}

fn run_nmqj(me: &MasterEquation, psi0: &PureState, grid: &TimeGrid, n: usize, seed: u64) -> Outcome {
    let cache = SnapshotCache::new(me, grid);
    let mut rng = ensemble_stream(seed);
    let mut ens = NmqjEnsemble::new(psi0.clone(), n as u64);
    let mut result = empty_result(&MethodId::Nmqj, grid, n);
    let record = |ens: &NmqjEnsemble, result: &mut EnsembleResult| {
        let rho = DensityMatrix::from_hermitian_part(&ens.density());
        let members: Vec<(f64, ComplexMatrix)> = ens
            .buckets
            .iter()
            .filter(|b| b.count > 0)
            .map(|b| (b.count as f64 / ens.total() as f64, b.state.projector()))
            .collect();
        result.stderr.push(member_stderr(&rho, &members, ens.total()));
        result.spread.push(Spread::Members(members, ens.total()));
        result.rho_hat.push(rho);
    };
    record(&ens, &mut result);
    let mut failure = None;
    for i in 0..grid.steps() {
        match nmqj_step(cache.at_step(i), ens.clone(), grid.dt, &mut rng) {
            Ok(next) => ens = next,
            Err(e) => {
                failure = Some((i, e));
                break;
            }
        }
        record(&ens, &mut result);
    }
    for ev in &ens.events {
        let key = match ev.kind {
            NmqjEventKind::Direct { channel } => format!("jump[{channel}]"),
            NmqjEventKind::Reverse { channel } => format!("reverse_jump[{channel}]"),
        };
        *result.event_counts.entry(key).or_insert(0) += ev.count;
    }
    result.nmqj_events = ens.events;
    (result, failure)
}

/// Salt separating the per-step cloning streams from trajectory streams.
const CLONING_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

fn run_cloning(me: &MasterEquation, psi0: &PureState, grid: &TimeGrid, n: usize, seed: u64) -> Outcome {
    let cache = SnapshotCache::new(me, grid);
    let b = BATCHES.min(n);
    let mut pop = Population::new(psi0, n, b);
    let mut resample_rng = ensemble_stream(seed);
    let mut result = empty_result(&MethodId::Cloning, grid, n);
    let dim = me.dim();
    let record = |pop: &Population, result: &mut EnsembleResult| {
        let mut sums = vec![Matrix::zeros(dim); b];
        for (psi, label) in &pop.members {
            sums[*label] += &psi.projector();
        }
        let scale = pop.trace_factor / pop.initial_count as f64;
        let batch_est: Vec<ComplexMatrix> = sums.iter().map(|s| s.scale_re(scale * b as f64)).collect();
        let total = tree_reduce(sums, |x, y| &x + &y).expect("at least one batch");
        let rho = DensityMatrix::from_hermitian_part(&total.scale_re(scale));
        result.stderr.push(batch_stderr(&rho, &batch_est));
        result.spread.push(Spread::Batches(batch_est));
        result.rho_hat.push(rho);
    };
    record(&pop, &mut result);
    let mut failure = None;
    'steps: for i in 0..grid.steps() {
        let snap = cache.at_step(i);
        let outcomes: Vec<Result<CloningOutcome>> = pop
            .members
            .par_iter()
            .enumerate()
            .map(|(slot, (psi, _))| {
                let mut r = ChaCha8Rng::seed_from_u64(seed ^ CLONING_SALT);
                r.set_stream(i as u64);
                r.set_word_pos(2 * slot as u128);
                crate::extended::cloning_step(psi, snap, grid.dt, uniform(&mut r))
            })
            .collect();
        let mut next = Vec::with_capacity(pop.members.len());
        for ((_, label), out) in pop.members.iter().zip(outcomes) {
            match out {
                Ok(CloningOutcome::Step(s)) => {
                    if let Some(key) = event_key(&s.event) {
                        *result.event_counts.entry(key).or_insert(0) += 1;
                    }
                    next.push((s.state, *label));
                }
                Ok(CloningOutcome::Clone(s)) => {
                    *result.event_counts.entry("clone".into()).or_insert(0) += 1;
                    next.push((s.clone(), *label));
                    next.push((s, *label));
                }
                Ok(CloningOutcome::Destroy) => {
                    *result.event_counts.entry("destroy".into()).or_insert(0) += 1;
                }
                Err(e) => {
                    failure = Some((i, e));
                    break 'steps;
                }
            }
        }
        pop.members = next;
        if pop.maybe_resample(|m| resample_rng.random_range(0..m)) {
            *result.event_counts.entry("resample".into()).or_insert(0) += 1;
        }
        record(&pop, &mut result);
    }
    (result, failure)
}

/// Pointwise trace distance to the oracle.
pub fn error_vs_oracle(result: &EnsembleResult, oracle: &OracleSolution<f64>) -> Result<Vec<(f64, f64)>> {
    let (a, b) = (&result.grid, &oracle.grid);
    if a.len() != b.len() || (a.t0 - b.t0).abs() > 1e-12 || (a.dt - b.dt).abs() > 1e-12 {
        return Err(Error::GridMismatch);
    }
    result
        .rho_hat
        .iter()
        .zip(&oracle.states)
        .enumerate()
        .map(|(i, (r, o))| Ok((a.time(i), trace_distance(r, o)?)))
        .collect()
}

/// `(t, tr(Oρ̂), stderr)` at every grid point with an estimate.
pub fn observable_series(result: &EnsembleResult, o: &ComplexMatrix) -> Result<Vec<(f64, f64, f64)>> {
    o.ensure_hermitian()?;
    if let Some(r) = result.rho_hat.first() {
        o.ensure_dim(r.dim())?;
    }
    let ev = |m: &ComplexMatrix| o.matmul(m).trace().re;
    Ok(result
        .rho_hat
        .iter()
        .zip(&result.spread)
        .enumerate()
        .map(|(i, (rho, spread))| {
            let mean = ev(rho.matrix());
            let err = match spread {
                Spread::Batches(bs) if bs.len() >= 2 => {
                    let xs: Vec<f64> = bs.iter().map(ev).collect();
                    let m = xs.iter().sum::<f64>() / xs.len() as f64;
                    let b = xs.len() as f64;
                    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (b * (b - 1.0))).sqrt()
                }
                Spread::Members(ms, n) if *n >= 2 => {
                    (ms.iter().map(|(p, m)| p * (ev(m) - mean).powi(2)).sum::<f64>() / (*n - 1) as f64).sqrt()
                }
                _ => 0.0,
            };
            (result.grid.time(i), mean, err)
        })
        .collect())
}

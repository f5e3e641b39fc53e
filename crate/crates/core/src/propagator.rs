//! Reference density-matrix integrator and dynamical-map propagators.
//!
//! Classical fourth-order Runge–Kutta on `dρ/dt = L_t[ρ]`. Superoperators
//! use the column-stacking convention `vec(m)[i + d*j] = m_ij`, so that
//! `vec(A X B) = (Bᵀ ⊗ A) vec(X)`.

use num_complex::Complex;

use crate::error::{Error, Result};
use crate::linalg::{eigh, re, Density, Matrix};
use crate::master_equation::Generator;
use crate::scalar::Real;

/// Uniform time grid `t0, t0 + dt, ..., t0 + n*dt` with `n = round((t_max - t0)/dt)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid<T: Real> {
    pub t0: T,
    pub t_max: T,
    pub dt: T,
}

impl<T: Real> TimeGrid<T> {
    pub fn new(t0: T, t_max: T, dt: T) -> Result<Self> {
        if !(dt > T::zero()) || !dt.is_finite() {
            return Err(Error::InvalidGrid(format!("dt must be positive, got {dt}")));
        }
        if !(t_max > t0) {
            return Err(Error::InvalidGrid(format!("t_max ({t_max}) must exceed t0 ({t0})")));
        }
        let grid = Self { t0, t_max, dt };
        if grid.steps() == 0 {
            return Err(Error::InvalidGrid("grid has no steps".into()));
        }
        Ok(grid)
    }

    /// Grid starting at zero.
    pub fn from_zero(t_max: T, dt: T) -> Result<Self> {
        Self::new(T::zero(), t_max, dt)
    }

    pub fn steps(&self) -> usize {
        ((self.t_max - self.t0) / self.dt).round().to_usize().unwrap_or(0)
    }

    /// Number of grid points (`steps + 1`).
    pub fn len(&self) -> usize {
        self.steps() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, index: usize) -> T {
        self.t0 + self.dt * T::lit(index as f64)
    }

    pub fn times(&self) -> Vec<T> {
        (0..self.len()).map(|i| self.time(i)).collect()
    }

    /// Same grid with `dt / factor`.
    pub fn refined(&self, factor: usize) -> Self {
        Self { dt: self.dt / T::lit(factor as f64), ..*self }
    }
}

/// Reference trajectory `ρ(t_k)` on a grid.
#[derive(Clone, Debug)]
pub struct OracleSolution<T: Real> {
    pub grid: TimeGrid<T>,
    pub states: Vec<Density<T>>,
}

impl<T: Real> OracleSolution<T> {
    pub fn final_state(&self) -> &Density<T> {
        self.states.last().expect("non-empty solution")
    }
}

fn rk4_step<T: Real>(me: &Generator<T>, t: T, dt: T, rho: &Matrix<T>) -> Matrix<T> {
    let half = T::lit(0.5);
    let s0 = me.at(t);
    let sm = me.at(t + dt * half);
    let s1 = me.at(t + dt);
    let k1 = s0.lindblad_apply(rho);
    let mut y = rho.clone();
    y.add_scaled(re(dt * half), &k1);
    let k2 = sm.lindblad_apply(&y);
    let mut y = rho.clone();
    y.add_scaled(re(dt * half), &k2);
    let k3 = sm.lindblad_apply(&y);
    let mut y = rho.clone();
    y.add_scaled(re(dt), &k3);
    let k4 = s1.lindblad_apply(&y);
    let mut out = rho.clone();
    let sixth = dt / T::lit(6.0);
    out.add_scaled(re(sixth), &k1);
    out.add_scaled(re(sixth * T::lit(2.0)), &k2);
    out.add_scaled(re(sixth * T::lit(2.0)), &k3);
    out.add_scaled(re(sixth), &k4);
    out
}

/// Integrates an arbitrary (not necessarily hermitian) initial matrix and
/// returns the matrix at every grid point. Each grid interval is split into
/// `substeps` RK4 steps.
pub fn integrate_matrix<T: Real>(
    me: &Generator<T>,
    m0: &Matrix<T>,
    grid: &TimeGrid<T>,
    substeps: usize,
) -> Result<Vec<Matrix<T>>> {
    m0.ensure_dim(me.dim())?;
    let substeps = substeps.max(1);
    let h = grid.dt / T::lit(substeps as f64);
    let mut out = Vec::with_capacity(grid.len());
    let mut m = m0.clone();
    out.push(m.clone());
    for k in 0..grid.steps() {
        let t_start = grid.time(k);
        for s in 0..substeps {
            let t = t_start + h * T::lit(s as f64);
            m = rk4_step(me, t, h, &m);
        }
        out.push(m.clone());
    }
    Ok(out)
}

/// `ρ(t_k)` by RK4 with the grid step.
pub fn propagate<T: Real>(me: &Generator<T>, rho0: &Density<T>, grid: &TimeGrid<T>) -> Result<OracleSolution<T>> {
    propagate_refined(me, rho0, grid, 1)
}

/// Same as [`propagate`] but with `substeps` RK4 steps per grid interval;
/// used to validate the oracle against itself.
pub fn propagate_refined<T: Real>(
    me: &Generator<T>,
    rho0: &Density<T>,
    grid: &TimeGrid<T>,
    substeps: usize,
) -> Result<OracleSolution<T>> {
    if rho0.dim() != me.dim() {
        return Err(Error::DimMismatch { expected: me.dim(), found: rho0.dim() });
    }
    let mats = integrate_matrix(me, rho0.matrix(), grid, substeps)?;
    let mut states: Vec<Density<T>> = mats.iter().map(Density::from_hermitian_part).collect();
    states[0] = rho0.clone();
    Ok(OracleSolution { grid: *grid, states })
}

/// Column-stacked `d²×d²` matrix of `Λ_{t_k}` for every grid point.
pub fn propagator_maps<T: Real>(me: &Generator<T>, grid: &TimeGrid<T>) -> Result<Vec<Matrix<T>>> {
    let d = me.dim();
    let n = d * d;
    let mut maps = vec![Matrix::zeros(n); grid.len()];
    for j in 0..d {
        for i in 0..d {
            let mut unit = Matrix::zeros(d);
            unit[(i, j)] = re(T::one());
            let col = i + d * j;
            for (k, m) in integrate_matrix(me, &unit, grid, 1)?.into_iter().enumerate() {
                for (row, v) in m.vec_columns().into_iter().enumerate() {
                    maps[k][(row, col)] = v;
                }
            }
        }
    }
    Ok(maps)
}

/// Column-stacked `Λ_{t_index}`.
pub fn propagator_map<T: Real>(me: &Generator<T>, grid: &TimeGrid<T>, t_index: usize) -> Result<Matrix<T>> {
    if t_index >= grid.len() {
        return Err(Error::IndexOutOfRange { index: t_index, len: grid.len() });
    }
    let truncated = TimeGrid { t_max: grid.time(t_index.max(1)), ..*grid };
    let maps = propagator_maps(me, &truncated)?;
    Ok(maps[t_index].clone())
}

/// `V_{t,s} = Λ_t Λ_s⁻¹`.
pub fn intermediate_propagator<T: Real>(
    me: &Generator<T>,
    grid: &TimeGrid<T>,
    s_index: usize,
    t_index: usize,
) -> Result<Matrix<T>> {
    if t_index >= grid.len() {
        return Err(Error::IndexOutOfRange { index: t_index, len: grid.len() });
    }
    if s_index > t_index {
        return Err(Error::InvalidArgument(format!("s_index {s_index} > t_index {t_index}")));
    }
    let truncated = TimeGrid { t_max: grid.time(t_index.max(1)), ..*grid };
    let maps = propagator_maps(me, &truncated)?;
    let inv = invert(&maps[s_index], T::lit(1e12))?;
    Ok(maps[t_index].matmul(&inv))
}

/// Applies a column-stacked superoperator to a matrix.
pub fn apply_superop<T: Real>(superop: &Matrix<T>, m: &Matrix<T>) -> Matrix<T> {
    Matrix::unvec_columns(&superop.apply(&m.vec_columns()))
}

/// Choi matrix `Σ_ij E_ij ⊗ Φ(E_ij)` of a column-stacked superoperator.
pub fn choi_matrix<T: Real>(superop: &Matrix<T>) -> Matrix<T> {
    let n = superop.dim();
    let d = (n as f64).sqrt().round() as usize;
    let mut choi = Matrix::zeros(n);
    for i in 0..d {
        for j in 0..d {
            let mut unit = Matrix::zeros(d);
            unit[(i, j)] = re(T::one());
            let image = apply_superop(superop, &unit);
            for a in 0..d {
                for b in 0..d {
                    choi[(i * d + a, j * d + b)] = image[(a, b)];
                }
            }
        }
    }
    choi
}

pub fn choi_min_eigenvalue<T: Real>(superop: &Matrix<T>) -> Result<T> {
    let choi = choi_matrix(superop);
    Ok(eigh(&choi.hermitian_part())?.min_value())
}

/// Dual map applied to `m`: `Φ†(m)` with `tr(Φ†(A) B) = tr(A Φ(B))`.
pub fn apply_dual<T: Real>(superop: &Matrix<T>, m: &Matrix<T>) -> Matrix<T> {
    // vec(Φ†(A)) = S† vec(A) in the Hilbert–Schmidt inner product
    apply_superop(&superop.dagger(), m)
}

/// Gauss–Jordan inverse with partial pivoting. Fails with
/// [`Error::SingularMap`] when the 1-norm condition number exceeds `max_condition`.
pub fn invert<T: Real>(m: &Matrix<T>, max_condition: T) -> Result<Matrix<T>> {
    let n = m.dim();
    let mut a = m.clone();
    let mut inv = Matrix::identity(n);
    let norm1 = |x: &Matrix<T>| {
        (0..n).map(|j| (0..n).map(|i| x[(i, j)].norm()).sum::<T>()).fold(T::zero(), T::max)
    };
    let a_norm = norm1(m);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[(x, col)].norm().partial_cmp(&a[(y, col)].norm()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(col);
        let p = a[(pivot, col)];
        if p.norm() <= T::min_positive_value() * T::lit(1e6) {
            return Err(Error::SingularMap { condition: f64::INFINITY });
        }
        if pivot != col {
            for k in 0..n {
                let tmp = a[(col, k)];
                a[(col, k)] = a[(pivot, k)];
                a[(pivot, k)] = tmp;
                let tmp = inv[(col, k)];
                inv[(col, k)] = inv[(pivot, k)];
                inv[(pivot, k)] = tmp;
            }
        }
        let pinv = Complex::new(T::one(), T::zero()) / a[(col, col)];
        for k in 0..n {
            a[(col, k)] *= pinv;
            inv[(col, k)] *= pinv;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = a[(r, col)];
            if f.norm() == T::zero() {
                continue;
            }
            for k in 0..n {
                let ack = a[(col, k)];
                let ick = inv[(col, k)];
                a[(r, k)] -= f * ack;
                inv[(r, k)] -= f * ick;
            }
        }
    }
    let cond = a_norm * norm1(&inv);
    if !(cond <= max_condition) {
        return Err(Error::SingularMap { condition: cond.to_f64().unwrap_or(f64::INFINITY) });
    }
    Ok(inv)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::pauli::*;
    use crate::linalg::{c, Ket};
    use crate::master_equation::{Channel, RateFn};

    type G = Generator<f64>;

    fn decay(gamma: f64) -> G {
        G::trivial(2).with_channel(Channel::constant(sigma_minus(), gamma))
    }

    fn eternal() -> G {
        G::trivial(2)
            .with_channel(Channel::constant(sigma_plus(), 1.0))
            .with_channel(Channel::constant(sigma_minus(), 1.0))
            .with_channel(Channel::new(sigma_z::<f64>(), RateFn::dynamic(|t: f64| -0.5 * t.tanh())))
    }

    #[test]
    fn grid_basics() {
        let g = TimeGrid::from_zero(5.0f64, 0.01).unwrap();
        assert_eq!(g.steps(), 500);
        assert_eq!(g.len(), 501);
        assert!((g.time(500) - 5.0).abs() < 1e-12);
        assert!(TimeGrid::from_zero(1.0f64, 0.0).is_err());
        assert!(TimeGrid::new(1.0f64, 1.0, 0.1).is_err());
    }

    #[test]
    fn exponential_decay_matches_closed_form() {
        let gamma = 1.0;
        let grid = TimeGrid::from_zero(5.0, 0.01).unwrap();
        let sol = propagate(&decay(gamma), &Density::pure(&Ket::basis(2, 1)), &grid).unwrap();
        for (k, rho) in sol.states.iter().enumerate() {
            let want = (-gamma * grid.time(k)).exp();
            assert!((rho.matrix()[(1, 1)].re - want).abs() < 1e-6);
        }
    }

    #[test]
    fn no_dynamics_is_constant() {
        let grid = TimeGrid::from_zero(1.0, 0.1).unwrap();
        let rho0 = Density::pure(&plus());
        let sol = propagate(&G::trivial(2), &rho0, &grid).unwrap();
        assert!(sol.states.iter().all(|r| r == &rho0));
    }

    #[test]
    fn eternal_agrees_with_refined_grid() {
        let grid = TimeGrid::from_zero(3.0, 0.01).unwrap();
        let rho0 = Density::pure(&plus());
        let coarse = propagate(&eternal(), &rho0, &grid).unwrap();
        let fine = propagate_refined(&eternal(), &rho0, &grid, 10).unwrap();
        for (a, b) in coarse.states.iter().zip(&fine.states) {
            assert!((a.matrix() - b.matrix()).max_abs() < 1e-7);
        }
    }

    #[test]
    fn rk4_is_fourth_order() {
        // errors against a dt/64 reference at dt and dt/2
        let me = eternal();
        let rho0 = Density::pure(&plus());
        let grid = TimeGrid::from_zero(2.0, 0.2).unwrap();
        let reference = propagate_refined(&me, &rho0, &grid, 64).unwrap();
        let err = |sub: usize| {
            let sol = propagate_refined(&me, &rho0, &grid, sub).unwrap();
            sol.states.iter().zip(&reference.states).map(|(a, b)| (a.matrix() - b.matrix()).max_abs()).fold(0.0, f64::max)
        };
        let (e1, e2) = (err(1), err(2));
        assert!(e1 / e2 >= 8.0, "ratio {}", e1 / e2);
    }

    #[test]
    fn propagator_examples() {
        let me = G::new(2, sigma_x::<f64>().scale_re(0.3)).with_channel(Channel::constant(sigma_minus(), 0.7));
        let grid = TimeGrid::from_zero(1.0, 0.01).unwrap();
        let maps = propagator_maps(&me, &grid).unwrap();
        assert!((&maps[0] - &Matrix::identity(4)).max_abs() < 1e-15);
        // semigroup: Λ_{0.6} = Λ_{0.3} Λ_{0.3}
        assert!((&maps[60] - &maps[30].matmul(&maps[30])).max_abs() < 1e-6);
        // trace preservation: dual applied to the identity
        let dual = apply_dual(&maps[100], &Matrix::identity(2));
        assert!((&dual - &Matrix::identity(2)).max_abs() < 1e-7);
        assert!(matches!(propagator_map(&me, &grid, 1000), Err(Error::IndexOutOfRange { .. })));
        assert_eq!(propagator_map(&me, &grid, 37).unwrap(), maps[37]);
    }

    #[test]
    fn intermediate_propagator_examples() {
        let grid = TimeGrid::from_zero(1.0, 0.01).unwrap();
        let me = decay(1.0);
        let v = intermediate_propagator(&me, &grid, 40, 40).unwrap();
        assert!((&v - &Matrix::identity(4)).max_abs() < 1e-9);

        let v = intermediate_propagator(&me, &grid, 30, 90).unwrap();
        let maps = propagator_maps(&me, &grid).unwrap();
        assert!((&v.matmul(&maps[30]) - &maps[90]).max_abs() < 1e-6);
        assert!(choi_min_eigenvalue(&v).unwrap() >= -1e-8);

        let v = intermediate_propagator(&eternal(), &grid, 50, 100).unwrap();
        assert!(choi_min_eigenvalue(&v).unwrap() < -1e-4);
    }

    #[test]
    fn singular_map_is_reported() {
        let mut m = Matrix::<f64>::identity(2);
        m[(1, 1)] = c(0.0, 0.0);
        assert!(matches!(invert(&m, 1e12), Err(Error::SingularMap { .. })));
    }

    #[test]
    fn trace_sink_changes_trace_as_bookkept() {
        // d tr ρ/dt = tr((Γ_L - Γ) ρ)
        let lambda = 0.3;
        let me = decay(1.0).with_trace_sink(sink(lambda));
        let grid = TimeGrid::from_zero(1.0, 0.001).unwrap();
        let sol = propagate(&me, &Density::pure(&plus()), &grid).unwrap();
        for k in [100usize, 500, 900] {
            let fd = (sol.states[k + 1].trace() - sol.states[k - 1].trace()) / (2.0 * grid.dt);
            let snap = me.at(grid.time(k));
            let want = (&snap.gamma_l - &snap.gamma).matmul(sol.states[k].matrix()).trace().re;
            assert!((fd - want).abs() < 1e-6, "{fd} vs {want}");
        }
    }

    fn sink(lambda: f64) -> Matrix<f64> {
        let mut g = Matrix::projector(Ket::<f64>::basis(2, 1).amplitudes());
        g -= &Matrix::identity(2).scale_re(lambda);
        g
    }

    #[test]
    fn single_precision_propagation() {
        let me = Generator::<f32>::trivial(2).with_channel(Channel::constant(sigma_minus(), 1.0f32));
        let grid = TimeGrid::from_zero(1.0f32, 0.01).unwrap();
        let sol = propagate(&me, &Density::pure(&Ket::basis(2, 1)), &grid).unwrap();
        assert!((sol.final_state().matrix()[(1, 1)].re - (-1.0f32).exp()).abs() < 1e-4);
    }
}

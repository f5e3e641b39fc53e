//! Benchmark qubit master equations.

use std::sync::Arc;

use crate::linalg::pauli::{plus, sigma_minus, sigma_plus, sigma_x, sigma_z};
use crate::linalg::Matrix;
use crate::local::{w_embedding_gauge, GaugeTransform};
use crate::master_equation::{Channel, RateFn};
use crate::{MasterEquation, PureState};

pub type Rate = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Rates and frequency of the phase-covariant family.
#[derive(Clone)]
pub struct PhaseCovariantRates {
    pub gamma_plus: Rate,
    pub gamma_minus: Rate,
    pub gamma_z: Rate,
    pub omega0: f64,
}

impl PhaseCovariantRates {
    pub fn constant(gamma_plus: f64, gamma_minus: f64, gamma_z: f64, omega0: f64) -> Self {
        Self {
            gamma_plus: Arc::new(move |_| gamma_plus),
            gamma_minus: Arc::new(move |_| gamma_minus),
            gamma_z: Arc::new(move |_| gamma_z),
            omega0,
        }
    }

    pub fn at(&self, t: f64) -> (f64, f64, f64) {
        ((self.gamma_plus)(t), (self.gamma_minus)(t), (self.gamma_z)(t))
    }
}

fn rate(f: &Rate) -> RateFn<f64> {
    let f = f.clone();
    RateFn::dynamic(move |t| f(t))
}

/// `H = ω₀σ_z` with channels `(σ₊, γ₊)`, `(σ₋, γ₋)`, `(σ_z, γ_z)`.
pub fn phase_covariant(rates: &PhaseCovariantRates) -> MasterEquation {
    MasterEquation::new(2, sigma_z::<f64>().scale_re(rates.omega0))
        .with_channel(Channel::new(sigma_plus::<f64>(), rate(&rates.gamma_plus)))
        .with_channel(Channel::new(sigma_minus::<f64>(), rate(&rates.gamma_minus)))
        .with_channel(Channel::new(sigma_z::<f64>(), rate(&rates.gamma_z)))
}

pub fn eternally_nm_rates() -> PhaseCovariantRates {
    PhaseCovariantRates {
        gamma_plus: Arc::new(|_| 1.0),
        gamma_minus: Arc::new(|_| 1.0),
        gamma_z: Arc::new(|t: f64| -0.5 * t.tanh()),
        omega0: 0.0,
    }
}

/// `γ± = 1`, `γ_z = -½ tanh t`.
pub fn eternally_nm() -> MasterEquation {
    phase_covariant(&eternally_nm_rates())
}

pub fn non_p_divisible_rates(kappa: f64) -> PhaseCovariantRates {
    let g: Rate = Arc::new(move |t: f64| 0.5 * (-t / 10.0).exp() * (kappa + (1.0 - kappa) * (-t / 4.0).exp() * (2.0 * t).cos()));
    PhaseCovariantRates { gamma_plus: g.clone(), gamma_minus: g, gamma_z: Arc::new(|_| 0.5), omega0: 0.0 }
}

/// `γ± = ½e^{-t/10}[κ + (1-κ)e^{-t/4}cos 2t]`, `γ_z = ½`.
pub fn non_p_divisible(kappa: f64) -> MasterEquation {
    phase_covariant(&non_p_divisible_rates(kappa))
}

/// `H = (ω₀/2)σ_z + ωσ_x`, single channel `(σ₋, γ)`.
pub fn spontaneous_emission(omega0: f64, omega: f64, gamma: f64) -> MasterEquation {
    let h = &sigma_z::<f64>().scale_re(omega0 / 2.0) + &sigma_x::<f64>().scale_re(omega);
    MasterEquation::new(2, h).with_channel(Channel::constant(sigma_minus(), gamma))
}

pub fn delayed_negative_rates() -> PhaseCovariantRates {
    PhaseCovariantRates {
        gamma_plus: Arc::new(|_| 1.0),
        gamma_minus: Arc::new(|_| 1.0),
        gamma_z: Arc::new(|t: f64| 0.5 * (2.0 * t).cos()),
        omega0: 0.0,
    }
}

/// `γ± = 1`, `γ_z = ½cos 2t`: CP divisible up to `π/4`, P divisible always.
pub fn delayed_negative_phase_covariant() -> MasterEquation {
    phase_covariant(&delayed_negative_rates())
}

/// Gauge `C_t = γ_z(t)𝟙` of the rate-operator method on the phase-covariant family.
pub fn gamma_z_gauge(rates: &PhaseCovariantRates) -> GaugeTransform {
    let gz = rates.gamma_z.clone();
    GaugeTransform::time_dependent(move |t| Matrix::identity(2).scale_re(gz(t)))
}

/// Gauge making the rate operator equal `W + λ|ψ><ψ|`.
pub fn w_gauge(lambda: f64) -> GaugeTransform {
    w_embedding_gauge(lambda)
}

/// Benchmark initial state `|+>`.
pub fn benchmark_initial_state() -> PureState {
    plus()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{Density, Ket};
    use crate::master_equation::phase_covariant_p_divisible_at;
    use crate::propagator::{propagate, TimeGrid};

    fn trace_preserving(me: &MasterEquation) {
        let rho = Ket::<f64>::from_amplitudes(vec![crate::linalg::c(0.3, 0.2), crate::linalg::c(-0.5, 0.7)]).unwrap().projector();
        for k in 0..20 {
            let t = 0.25 * k as f64;
            assert!(me.lindblad_apply(t, &rho).unwrap().trace().norm() < 1e-10);
        }
    }

    #[test]
    fn constructors_are_trace_preserving() {
        for me in [eternally_nm(), non_p_divisible(0.25), spontaneous_emission(1.0, 0.5, 0.3), delayed_negative_phase_covariant()] {
            trace_preserving(&me);
        }
    }

    #[test]
    fn phase_covariant_examples() {
        let me = phase_covariant(&PhaseCovariantRates::constant(1.0, 1.0, 0.0, 0.0));
        let grid = TimeGrid::from_zero(2.0, 0.01).unwrap();
        let rho0 = Density::pure(&Ket::basis(2, 1));
        let sol = propagate(&me, &rho0, &grid).unwrap();
        for (k, s) in sol.states.iter().enumerate() {
            let z = s.expectation(&sigma_z());
            assert!((z - (-2.0 * grid.time(k)).exp()).abs() < 1e-8);
        }
        let me = phase_covariant(&PhaseCovariantRates::constant(0.0, 0.0, 0.0, 0.7));
        let sol = propagate(&me, &Density::pure(&plus()), &grid).unwrap();
        let p = sol.final_state().matrix().matmul(sol.final_state().matrix()).trace().re;
        assert!((p - 1.0).abs() < 1e-9);
        let hand = MasterEquation::new(2, sigma_z::<f64>().scale_re(0.7))
            .with_channel(Channel::constant(sigma_plus(), 0.0))
            .with_channel(Channel::constant(sigma_minus(), 0.0))
            .with_channel(Channel::constant(sigma_z(), 0.0));
        let (a, b) = (me.at(0.3), hand.at(0.3));
        assert_eq!(a.hamiltonian, b.hamiltonian);
        for (x, y) in a.channels.iter().zip(&b.channels) {
            assert_eq!(x.op, y.op);
        }
    }

    #[test]
    fn eternally_nm_examples() {
        let r = eternally_nm_rates();
        assert_eq!((r.gamma_z)(0.0), 0.0);
        assert!(((r.gamma_z)(40.0) + 0.5).abs() < 1e-12);
        for t in [0.5, 1.0, 2.0, 5.0] {
            let (p, m, z) = r.at(t);
            assert!(phase_covariant_p_divisible_at(p, m, z));
            assert!(!eternally_nm().is_cp_divisible_at(t));
        }
    }

    #[test]
    fn non_p_examples() {
        let r = non_p_divisible_rates(1.0);
        assert!((0..5000).all(|k| (r.gamma_plus)(k as f64 * 1e-3) >= 0.0));
        let r = non_p_divisible_rates(0.25);
        assert!((1..=5000).any(|k| (r.gamma_plus)(k as f64 * 1e-3) < 0.0));
        assert!((0..100).all(|k| (r.gamma_z)(k as f64 * 0.05) == 0.5));
    }

    #[test]
    fn spontaneous_emission_examples() {
        let grid = TimeGrid::from_zero(5.0, 0.01).unwrap();
        let sol = propagate(&spontaneous_emission(0.0, 0.0, 1.0), &Density::pure(&Ket::basis(2, 1)), &grid).unwrap();
        for (k, s) in sol.states.iter().enumerate() {
            assert!((s.matrix()[(1, 1)].re - (-grid.time(k)).exp()).abs() < 1e-6);
        }
        let sol = propagate(&spontaneous_emission(1.0, 0.6, 0.0), &Density::pure(&Ket::basis(2, 1)), &grid).unwrap();
        let f = sol.final_state().matrix();
        assert!((f.matmul(f).trace().re - 1.0).abs() < 1e-8);
        let me = spontaneous_emission(1.0, 0.6, 0.5);
        let snap = me.at(0.0);
        let psi = Ket::from_amplitudes(vec![crate::linalg::c(0.3, 0.1), crate::linalg::c(0.8, -0.2)]).unwrap();
        let b = crate::local::mcwf_branches(&snap, &psi, 0.01).unwrap();
        assert!(b[0].state.same_ray(&Ket::basis(2, 0), 1e-12));
    }

    #[test]
    fn delayed_negative_examples() {
        let me = delayed_negative_phase_covariant();
        assert!(me.is_cp_divisible_at(0.5));
        assert!(me.is_cp_divisible_at(std::f64::consts::FRAC_PI_4 - 1e-3));
        assert!(!me.is_cp_divisible_at(1.0));
        let r = delayed_negative_rates();
        for k in 0..100 {
            let (p, m, z) = r.at(0.05 * k as f64);
            assert!(phase_covariant_p_divisible_at(p, m, z));
        }
    }
}

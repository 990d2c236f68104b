//! Independent reference computations for checking `cfc-core`: seeded
//! parameter draws, dense-matrix and weak-coupling references, and a
//! time-domain integrator of the delayed linear dynamics.

use cfc_core::model::{LinearSystem, INPUT_DIM, STATE_DIM};
use cfc_core::units::TWO_PI;
use cfc_core::*;
use nalgebra::SMatrix;
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Parameters around the table defaults with every loop setting drawn at
/// random. The result is not checked for stability.
pub fn random_params(rng: &mut ChaCha8Rng) -> SystemParams {
    let mut p = SystemParams::table_defaults();
    p.set_kappa_scaled(TWO_PI * rng.gen_range(1.0e6..10.0e6));
    p.kappa_in = rng.gen_range(0.3..0.95) * p.kappa;
    p.delta_h = rng.gen_range(-1.0..0.2) * p.kappa;
    p.delta_v = rng.gen_range(-1.5..0.2) * p.kappa;
    p.g0_h = TWO_PI * rng.gen_range(1.0..10.0);
    p.g0_v = TWO_PI * rng.gen_range(1.0..10.0);
    p.set_probe_power(rng.gen_range(5e-6..100e-6));
    p.set_eta_loop(rng.gen_range(0.05..1.0));
    p.set_aux_power(rng.gen_range(20e-6..400e-6));
    p.tau = rng.gen_range(0.0..PI) / p.omega_m;
    p.phi = rng.gen_range(-PI..PI);
    p.displacement.psi = rng.gen_range(-PI..PI);
    p.gamma_target = Some(rng.gen_range(-PI..PI));
    p.set_detuning_noise(rng.gen_range(0.0..2.0) * cfc_core::params::DEFAULT_DETUNING_NOISE);
    p
}

/// Draws until the argument principle calls the point stable.
pub fn random_stable(rng: &mut ChaCha8Rng) -> SystemParams {
    loop {
        let p = random_params(rng);
        let Ok(ss) = solve_steady_state(&p) else { continue };
        if let Ok(r) = check_stability(&ss, &p, None, Method::ArgumentPrinciple) {
            if r.verdict == Verdict::Stable {
                return p;
            }
        }
    }
}

pub type M6 = SMatrix<C64, STATE_DIM, STATE_DIM>;

pub fn response_matrix(p: &SystemParams, omega: f64) -> (SteadyState, M6) {
    let ss = solve_steady_state(p).unwrap();
    let sys = LinearSystem::new(&ss, p);
    let m = sys.response(C64::new(omega, 0.0));
    (ss, M6::from_fn(|i, j| m[i][j]))
}

pub fn rel(a: C64, b: C64) -> f64 {
    (a - b).norm() / b.norm()
}

pub fn covariance_s_qq(p: &SystemParams, omega: f64) -> f64 {
    let (ss, m) = response_matrix(p, omega);
    let sys = LinearSystem::new(&ss, p);
    let b = sys.input(omega);
    let b = SMatrix::<C64, STATE_DIM, INPUT_DIM>::from_fn(|i, j| b[i][j]);
    let noise = default_noise(p).unwrap();
    let mxi = SMatrix::<C64, INPUT_DIM, INPUT_DIM>::from_fn(|i, j| noise.m_xi[i][j]);
    let g = -m.try_inverse().unwrap() * b;
    let cov = g * mxi * g.adjoint();
    cov[(0, 0)].re
}

/// Standard weak-coupling result for two red-detuned drives:
/// n̄ = (Γ_m n_th + Σ A⁺)/(Γ_m + Σ (A⁻ − A⁺)),
/// A∓ = G²κ/(κ²/4 + (Δ ± Ω_m)²).
pub fn weak_coupling_dbc(p: &SystemParams, ss: &SteadyState) -> f64 {
    let n_th = thermal_occupation(p.bath_temperature, p.omega_m).unwrap();
    let k = p.kappa;
    let rates = |g: f64, d: f64| {
        let am = g * g * k / (k * k / 4.0 + (d + p.omega_m).powi(2));
        let ap = g * g * k / (k * k / 4.0 + (d - p.omega_m).powi(2));
        (am, ap)
    };
    let (amh, aph) = rates(ss.g_h.norm(), ss.delta_h_eff);
    let (amv, apv) = rates(ss.g_v.norm(), ss.delta_v_eff);
    (p.gamma_m * n_th + aph + apv) / (p.gamma_m + amh - aph + amv - apv)
}

/// Outcome of a time-domain run.
#[derive(Debug, Clone, Copy)]
pub struct Trajectory {
    /// Mechanical energy (Q² + P²) averaged over the final period, relative
    /// to its initial value.
    pub energy_ratio: f64,
}

/// Integrates dX/dt = A0·X(t) + A1·X(t − τ) with classical RK4, using a
/// cubic Hermite interpolant of the stored history for the delayed state.
/// The history is X = X0 for t ≤ 0 with the mechanics displaced by Q = 1.
pub fn integrate_delay_system(p: &SystemParams, periods: f64, steps_per_period: usize) -> Trajectory {
    let ss = solve_steady_state(p).expect("steady state");
    let sys = LinearSystem::new(&ss, p);
    let (a0c, a1c) = sys.split();
    let re = |m: [[num_complex::Complex64; STATE_DIM]; STATE_DIM]| {
        let mut r = [[0.0; STATE_DIM]; STATE_DIM];
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                assert!(m[i][j].im == 0.0);
                r[i][j] = m[i][j].re;
            }
        }
        r
    };
    let (a0, a1) = (re(a0c), re(a1c));
    let period = TWO_PI / p.omega_m;
    let tau = p.tau;
    // The step divides τ exactly, so delayed nodes fall on stored nodes.
    let mut dt = period / steps_per_period as f64;
    let lag = if tau > 0.0 {
        let m = (tau / dt).ceil().max(1.0);
        dt = tau / m;
        m as usize
    } else {
        0
    };
    let n_steps = (periods * period / dt).ceil() as usize;
    let per_period = (period / dt).round() as usize;

    type V = [f64; STATE_DIM];
    let mul = |m: &[[f64; STATE_DIM]; STATE_DIM], x: &V| {
        let mut y = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            for j in 0..STATE_DIM {
                y[i] += m[i][j] * x[j];
            }
        }
        y
    };
    let rhs = |x: &V, xd: &V| {
        let a = mul(&a0, x);
        let b = mul(&a1, xd);
        let mut y = [0.0; STATE_DIM];
        for i in 0..STATE_DIM {
            y[i] = a[i] + b[i];
        }
        y
    };
    let axpy = |x: &V, k: &V, h: f64| {
        let mut y = *x;
        for i in 0..STATE_DIM {
            y[i] += h * k[i];
        }
        y
    };

    let mut x0 = [0.0; STATE_DIM];
    x0[0] = 1.0;
    let e0 = x0[0] * x0[0] + x0[1] * x0[1];
    // Ring buffer of the last `lag + 1` states and derivatives.
    let cap = lag + 2;
    let mut hist_x = vec![x0; cap];
    let mut hist_f = vec![[0.0; STATE_DIM]; cap];
    let mut x = x0;
    let mut tail_energy = 0.0;
    let mut tail_count = 0usize;
    let mut scale = 1.0f64;
    for n in 0..n_steps {
        // Delayed state at t_n − τ, t_n + dt/2 − τ and t_n + dt − τ. With
        // lag ≥ 1 the latest node needed is the current one, stored first.
        let node = |hx: &[V], hf: &[V], k: isize| -> (V, V) {
            if k < 0 {
                (x0, [0.0; STATE_DIM])
            } else {
                let i = k as usize % cap;
                (hx[i], hf[i])
            }
        };
        let k0 = n as isize - lag as isize;
        let xd0 = if lag == 0 { x } else { node(&hist_x, &hist_f, k0).0 };
        let k1 = rhs(&x, &xd0);
        let slot = n % cap;
        hist_x[slot] = x;
        hist_f[slot] = k1;
        let (xdh, xd1) = if lag == 0 {
            (x, x)
        } else {
            let (y0, f0) = node(&hist_x, &hist_f, k0);
            let (y1, f1) = node(&hist_x, &hist_f, k0 + 1);
            let mut mid = [0.0; STATE_DIM];
            for i in 0..STATE_DIM {
                mid[i] = 0.5 * (y0[i] + y1[i]) + dt / 8.0 * (f0[i] - f1[i]);
            }
            (mid, y1)
        };
        let k2 = rhs(&axpy(&x, &k1, dt / 2.0), &xdh);
        let k3 = rhs(&axpy(&x, &k2, dt / 2.0), &xdh);
        let k4 = rhs(&axpy(&x, &k3, dt), &xd1);
        for i in 0..STATE_DIM {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        // Rescale to keep growing solutions finite; the system is linear.
        let mag = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if mag > 1e100 {
            let s = 1.0 / mag;
            for v in x.iter_mut() {
                *v *= s;
            }
            for h in hist_x.iter_mut().chain(hist_f.iter_mut()) {
                for v in h.iter_mut() {
                    *v *= s;
                }
            }
            scale *= mag;
            tail_energy *= s * s;
        }
        if n + per_period >= n_steps {
            tail_energy += x[0] * x[0] + x[1] * x[1];
            tail_count += 1;
        }
    }
    let avg = tail_energy / tail_count.max(1) as f64;
    Trajectory {
        energy_ratio: avg * scale * scale / e0,
    }
}

//! Steady state, linearized drift matrix and input-noise correlations.
//!
//! State ordering is (Q, P, X_h, Y_h, X_v, Y_v); the input vector is
//! ξ = (P_in, X_h^in, Y_h^in, X_h^loss, Y_h^loss, X_v^loss, Y_v^loss, δΔ_h, δΔ_v).
//! Fourier convention Q(ω) = ∫Q(t)e^{iωt}dt, so a delay τ multiplies by e^{iωτ}.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};
use std::f64::consts::SQRT_2;

use crate::error::{Error, Result};
use crate::geometry::{self, displacement_amplitude};
use crate::linalg::Mat;
use crate::params::SystemParams;
use crate::units::{wrap_angle, HBAR, K_B};

pub const STATE_DIM: usize = 6;
pub const INPUT_DIM: usize = 9;

const DAMPING: f64 = 0.5;
const MAX_ITERATIONS: usize = 10_000;
const REL_TOL: f64 = 1e-12;

/// Bose occupation 1/(exp(ħΩ/k_BT) − 1) of the mechanical bath.
///
/// At room temperature this is k_BT/ħΩ − 1/2 to better than 1e-7 relative;
/// the exact form is evaluated with `exp_m1` so it stays accurate there.
pub fn thermal_occupation(temperature: f64, omega_m: f64) -> Result<f64> {
    if !temperature.is_finite() || temperature < 0.0 {
        return Err(Error::invalid("bath_temperature", "must be finite and >= 0"));
    }
    if !omega_m.is_finite() || omega_m <= 0.0 {
        return Err(Error::invalid("omega_m", "must be finite and > 0"));
    }
    if temperature == 0.0 {
        return Ok(0.0);
    }
    let x = HBAR * omega_m / (K_B * temperature);
    Ok(1.0 / x.exp_m1())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SteadyState {
    pub mean_h: C64,
    pub mean_v: C64,
    pub mean_q: f64,
    pub mean_p: f64,
    pub delta_h_eff: f64,
    pub delta_v_eff: f64,
    pub g_h: C64,
    pub g_v: C64,
    pub u: f64,
    pub x: f64,
    pub gamma_angle: f64,
    pub mean_h_in: f64,
    /// Interference angle actually used (solved for when γ is targeted).
    pub theta: f64,
    /// Coherent offset δ injected into the cooling mode.
    pub delta: C64,
    pub iterations: usize,
}

/// Solves the self-consistent mean-field equations by damped fixed-point
/// iteration on ⟨Q⟩.
pub fn solve_steady_state(params: &SystemParams) -> Result<SteadyState> {
    params.validate()?;
    let h_in = params.mean_h_in();
    let k2 = params.kappa / 2.0;
    let sqrt_kin = params.kappa_in.sqrt();

    let mut q = 0.0f64;
    let mut last_change = f64::INFINITY;
    for it in 1..=MAX_ITERATIONS {
        let st = evaluate(params, q, h_in, k2, sqrt_kin)?;
        let q_new = st.mean_q;
        let change = (q_new - q).abs();
        let scale = q_new.abs().max(q.abs());
        if change <= REL_TOL * scale || scale == 0.0 {
            // One more evaluation at the converged ⟨Q⟩ so every stored field
            // is mutually consistent.
            let mut st = evaluate(params, q_new, h_in, k2, sqrt_kin)?;
            st.mean_q = q_new;
            st.iterations = it;
            return Ok(st);
        }
        last_change = change / scale;
        q = (1.0 - DAMPING) * q + DAMPING * q_new;
    }
    Err(Error::NonConvergence {
        iterations: MAX_ITERATIONS,
        last_change,
    })
}

/// One pass of the mean-field map at a given ⟨Q⟩; the returned `mean_q`
/// is the image of `q` under the map.
fn evaluate(params: &SystemParams, q: f64, h_in: f64, k2: f64, sqrt_kin: f64) -> Result<SteadyState> {
    let dhe = params.delta_h - SQRT_2 * params.g0_h * q;
    let dve = params.delta_v - SQRT_2 * params.g0_v * q;
    let h = sqrt_kin / C64::new(k2, -dhe) * h_in;
    let carrier = geometry::feedback_carrier(params, dhe, h_in);
    let u = if h.norm() > 0.0 { h.arg() } else { 0.0 };
    let (theta, delta) = match params.gamma_target {
        Some(gamma) => geometry::theta_for_angle(params, dve, carrier, gamma - params.phi + u)?,
        None => (
            params.displacement.theta,
            displacement_amplitude(&params.displacement, params.eta_f).delta,
        ),
    };
    let v = sqrt_kin / C64::new(k2, -dve) * (delta + carrier);
    let q_next = -SQRT_2 / params.omega_m * (params.g0_h * h.norm_sqr() + params.g0_v * v.norm_sqr());
    let g_h = h * params.g0_h;
    let g_v = v * params.g0_v;
    let x = if v.norm() > 0.0 { v.arg() } else { 0.0 };
    Ok(SteadyState {
        mean_h: h,
        mean_v: v,
        mean_q: q_next,
        mean_p: 0.0,
        delta_h_eff: dhe,
        delta_v_eff: dve,
        g_h,
        g_v,
        u,
        x,
        gamma_angle: geometry::compose_gamma(params.phi, u, x),
        mean_h_in: h_in,
        theta: wrap_angle(theta),
        delta,
        iterations: 0,
    })
}

/// Residuals of the four mean-field equations at the stored values,
/// each relative to the size of its largest term.
pub fn steady_state_residuals(ss: &SteadyState, params: &SystemParams) -> [f64; 4] {
    let k2 = params.kappa / 2.0;
    let sqrt_kin = params.kappa_in.sqrt();
    let r_q = params.omega_m * ss.mean_p;
    let force = [
        -params.omega_m * ss.mean_q,
        -params.gamma_m * ss.mean_p,
        -SQRT_2 * params.g0_h * ss.mean_h.norm_sqr(),
        -SQRT_2 * params.g0_v * ss.mean_v.norm_sqr(),
    ];
    let r_p = force.iter().sum::<f64>().abs() / force.iter().map(|f| f.abs()).fold(1e-300, f64::max);
    let dhe = params.delta_h - SQRT_2 * params.g0_h * ss.mean_q;
    let dve = params.delta_v - SQRT_2 * params.g0_v * ss.mean_q;
    let th = [
        ss.mean_h * (-k2),
        ss.mean_h * C64::new(0.0, dhe),
        C64::new(sqrt_kin * ss.mean_h_in, 0.0),
    ];
    let fb = (C64::new(ss.mean_h_in, 0.0) - ss.mean_h * sqrt_kin)
        * C64::from_polar((params.kappa_in * params.eta_loop).sqrt(), -params.phi);
    let tv = [
        ss.mean_v * (-k2),
        ss.mean_v * C64::new(0.0, dve),
        fb,
        ss.delta * sqrt_kin,
    ];
    let rel = |t: &[C64]| {
        let s: C64 = t.iter().sum();
        let m = t.iter().map(|z| z.norm()).fold(1e-300, f64::max);
        s.norm() / m
    };
    [r_q.abs(), r_p, rel(&th), rel(&tv)]
}

/// The frequency-domain drift matrix A(ω).
#[derive(Debug, Clone, PartialEq)]
pub struct DriftMatrix {
    pub entries: Mat<STATE_DIM>,
    pub omega: f64,
}

/// Coefficients of the linearized dynamics, precomputed once per
/// operating point so that per-frequency assembly is cheap.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    pub omega_m: f64,
    pub gamma_m: f64,
    pub half_kappa: f64,
    pub delta_h_eff: f64,
    pub delta_v_eff: f64,
    pub gh: f64,
    pub gv: f64,
    pub tau: f64,
    /// √η·κ^in, the loop gain of the field feedback.
    pub loop_gain: f64,
    pub cos_gamma: f64,
    pub sin_gamma: f64,
    kappa: f64,
    kappa_in: f64,
    eta: f64,
    mean_h_abs: f64,
    mean_v_abs: f64,
}

impl LinearSystem {
    pub fn new(ss: &SteadyState, params: &SystemParams) -> Self {
        LinearSystem {
            omega_m: params.omega_m,
            gamma_m: params.gamma_m,
            half_kappa: params.kappa / 2.0,
            delta_h_eff: ss.delta_h_eff,
            delta_v_eff: ss.delta_v_eff,
            gh: ss.g_h.norm(),
            gv: ss.g_v.norm(),
            tau: params.tau,
            loop_gain: params.eta_loop.sqrt() * params.kappa_in,
            cos_gamma: ss.gamma_angle.cos(),
            sin_gamma: ss.gamma_angle.sin(),
            kappa: params.kappa,
            kappa_in: params.kappa_in,
            eta: params.eta_loop,
            mean_h_abs: ss.mean_h.norm(),
            mean_v_abs: ss.mean_v.norm(),
        }
    }

    /// Delay-free part A0 and delayed part A1 with A(ω) = A0 + e^{iωτ}A1.
    pub fn split(&self) -> (Mat<STATE_DIM>, Mat<STATE_DIM>) {
        let z = C64::new(0.0, 0.0);
        let r = |v: f64| C64::new(v, 0.0);
        let (om, gm, k2) = (self.omega_m, self.gamma_m, self.half_kappa);
        let (dh, dv, gh, gv) = (self.delta_h_eff, self.delta_v_eff, self.gh, self.gv);
        let a0 = [
            [z, r(om), z, z, z, z],
            [r(-om), r(-gm), r(-2.0 * gh), z, r(-2.0 * gv), z],
            [z, z, r(-k2), r(-dh), z, z],
            [r(-2.0 * gh), z, r(dh), r(-k2), z, z],
            [z, z, z, z, r(-k2), r(-dv)],
            [r(-2.0 * gv), z, z, z, r(dv), r(-k2)],
        ];
        let f = self.loop_gain;
        let (c, s) = (self.cos_gamma, self.sin_gamma);
        let mut a1 = [[z; STATE_DIM]; STATE_DIM];
        a1[4][2] = r(-f * c);
        a1[4][3] = r(-f * s);
        a1[5][2] = r(f * s);
        a1[5][3] = r(-f * c);
        (a0, a1)
    }

    /// A(ω) at a possibly complex frequency.
    pub fn drift(&self, omega: C64) -> Mat<STATE_DIM> {
        let (mut a, a1) = self.split();
        let e = (C64::new(0.0, 1.0) * omega * self.tau).exp();
        for i in 4..6 {
            for j in 2..4 {
                a[i][j] += e * a1[i][j];
            }
        }
        a
    }

    /// M(ω) = A(ω) + iωI, whose inverse maps inputs to the state.
    pub fn response(&self, omega: C64) -> Mat<STATE_DIM> {
        let mut a = self.drift(omega);
        let iw = C64::new(0.0, 1.0) * omega;
        for (i, row) in a.iter_mut().enumerate() {
            row[i] += iw;
        }
        a
    }

    /// dM/dω.
    pub fn response_derivative(&self, omega: C64) -> Mat<STATE_DIM> {
        let (_, a1) = self.split();
        let i = C64::new(0.0, 1.0);
        let e = (i * omega * self.tau).exp() * i * self.tau;
        let mut d = [[C64::new(0.0, 0.0); STATE_DIM]; STATE_DIM];
        for (k, row) in d.iter_mut().enumerate() {
            row[k] = i;
        }
        for r in 4..6 {
            for c in 2..4 {
                d[r][c] = e * a1[r][c];
            }
        }
        d
    }

    /// Input coupling matrix B(ω): the state equations read
    /// −iωX = A X + B ξ.
    pub fn input(&self, omega: f64) -> [[C64; INPUT_DIM]; STATE_DIM] {
        let z = C64::new(0.0, 0.0);
        let mut b = [[z; INPUT_DIM]; STATE_DIM];
        let e = C64::from_polar(1.0, omega * self.tau);
        let loss_h = (self.kappa - self.kappa_in).max(0.0).sqrt();
        let loss_v = (self.kappa - self.eta * self.kappa_in).max(0.0).sqrt();
        let fi = e * (self.eta * self.kappa_in).sqrt();
        let (c, s) = (self.cos_gamma, self.sin_gamma);
        b[1][0] = C64::new((2.0 * self.gamma_m).sqrt(), 0.0);
        b[2][1] = C64::new(self.kappa_in.sqrt(), 0.0);
        b[2][3] = C64::new(loss_h, 0.0);
        b[3][2] = C64::new(self.kappa_in.sqrt(), 0.0);
        b[3][4] = C64::new(loss_h, 0.0);
        b[3][7] = C64::new(-SQRT_2 * self.mean_h_abs, 0.0);
        b[4][1] = fi * c;
        b[4][2] = fi * s;
        b[4][5] = C64::new(loss_v, 0.0);
        b[5][1] = -fi * s;
        b[5][2] = fi * c;
        b[5][6] = C64::new(loss_v, 0.0);
        b[5][8] = C64::new(-SQRT_2 * self.mean_v_abs, 0.0);
        b
    }
}

pub fn drift_matrix(ss: &SteadyState, params: &SystemParams, omega: f64) -> DriftMatrix {
    DriftMatrix {
        entries: LinearSystem::new(ss, params).drift(C64::new(omega, 0.0)),
        omega,
    }
}

/// Input-noise correlation matrix ⟨ξ_j(ω) ξ_k(ω′)⟩ = 2πδ(ω+ω′)·M_ξ[j][k].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub m_xi: Mat<INPUT_DIM>,
    pub n_bar_in: f64,
}

pub fn noise_model(params: &SystemParams, n_bar_in: f64) -> NoiseModel {
    let z = C64::new(0.0, 0.0);
    let mut m = [[z; INPUT_DIM]; INPUT_DIM];
    m[0][0] = C64::new(n_bar_in + 0.5, 0.0);
    for i in [1, 3, 5] {
        m[i][i] = C64::new(0.5, 0.0);
        m[i + 1][i + 1] = C64::new(0.5, 0.0);
        m[i][i + 1] = C64::new(0.0, 0.5);
        m[i + 1][i] = C64::new(0.0, -0.5);
    }
    m[7][7] = C64::new(params.s_dd_h, 0.0);
    m[8][8] = C64::new(params.s_dd_v, 0.0);
    NoiseModel { m_xi: m, n_bar_in }
}

/// Noise model with the bath occupation taken from the parameters.
pub fn default_noise(params: &SystemParams) -> Result<NoiseModel> {
    Ok(noise_model(
        params,
        thermal_occupation(params.bath_temperature, params.omega_m)?,
    ))
}

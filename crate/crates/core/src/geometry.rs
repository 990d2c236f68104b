//! Displacement operation on the feedback path.
//!
//! The reflected probe is combined with a strong auxiliary beam on an
//! asymmetric beamsplitter. The auxiliary port contributes a coherent
//! offset δ to the field injected into the cooling mode, and the
//! interference angle θ between the two beams sets the angle x of the
//! cooling-mode amplitude, hence the displacement angle γ = φ − u + x.

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::SystemParams;
use crate::units::wrap_angle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisplacementSetup {
    /// Beamsplitter transmissivity T for the signal path.
    pub bs_transmissivity: f64,
    /// Local-oscillator amplitude |β_LO| in √(photons/s).
    pub lo_amplitude: f64,
    /// Interference angle θ, rad.
    pub theta: f64,
    /// Beamsplitter phase offset Ψ, rad.
    pub psi: f64,
}

impl DisplacementSetup {
    pub fn validate(&self) -> Result<()> {
        if !(self.bs_transmissivity > 0.0 && self.bs_transmissivity <= 1.0) {
            return Err(Error::invalid("bs_transmissivity", "must lie in (0, 1]"));
        }
        if self.lo_amplitude < 0.0 {
            return Err(Error::invalid("lo_amplitude", "must be non-negative"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisplacementAmplitude {
    /// Offset leaving the beamsplitter, δ₀ = √(1−T)|β_LO|e^{i(Ψ−θ)}.
    pub delta0: C64,
    /// Offset reaching the cavity after loss, δ = √η_f·δ₀.
    pub delta: C64,
}

pub fn displacement_amplitude(setup: &DisplacementSetup, eta_f: f64) -> DisplacementAmplitude {
    let mag = (1.0 - setup.bs_transmissivity).max(0.0).sqrt() * setup.lo_amplitude;
    let delta0 = C64::from_polar(mag, setup.psi - setup.theta);
    DisplacementAmplitude {
        delta0,
        delta: delta0 * eta_f.sqrt(),
    }
}

/// γ = φ − u + x wrapped to (−π, π].
pub fn compose_gamma(phi: f64, u: f64, x: f64) -> f64 {
    wrap_angle(phi - u + x)
}

/// Reflected-probe contribution to the cooling-mode drive,
/// √η·e^{−iφ}·(1 − κ^in/(κ/2 − iΔ_h^eff))·⟨h_in⟩.
pub(crate) fn feedback_carrier(params: &SystemParams, delta_h_eff: f64, mean_h_in: f64) -> C64 {
    let ch = C64::new(params.kappa / 2.0, -delta_h_eff);
    let g = C64::new(1.0, 0.0) - params.kappa_in / ch;
    C64::from_polar(params.eta_loop.sqrt(), -params.phi) * g * mean_h_in
}

/// Angle x = Arg(g_v) of the cooling-mode amplitude from the closed form,
/// written for φ = Ψ = 0 and applied to general φ, Ψ through the shifted
/// angle θ' = θ − Ψ − φ, with x = x(θ') − φ.
pub fn angle_x(
    setup: &DisplacementSetup,
    params: &SystemParams,
    delta_h_eff: f64,
    delta_v_eff: f64,
    mean_h_in: f64,
) -> Result<f64> {
    let theta_p = setup.theta - setup.psi - params.phi;
    let k2 = params.kappa / 2.0;
    let a = (params.eta_f * (1.0 - setup.bs_transmissivity)).max(0.0).sqrt() * setup.lo_amplitude;
    let nh = k2 * k2 + delta_h_eff * delta_h_eff;
    let sq_eta = params.eta_loop.sqrt();
    let re_f = sq_eta * (1.0 - params.kappa_in * k2 / nh) * mean_h_in;
    let im_f = -sq_eta * (params.kappa_in * delta_h_eff / nh) * mean_h_in;
    let r = a * theta_p.cos() + re_f;
    let i = -a * theta_p.sin() + im_f;
    let num = k2 * i + delta_v_eff * r;
    let den = k2 * r - delta_v_eff * i;
    if num == 0.0 && den == 0.0 {
        return Err(Error::DegenerateArgument);
    }
    Ok(wrap_angle(num.atan2(den) - params.phi))
}

/// Interference angle θ that places the cooling-mode amplitude at angle
/// `x_target`, given the feedback carrier. Returns the offset δ as well.
pub(crate) fn theta_for_angle(
    params: &SystemParams,
    delta_v_eff: f64,
    carrier: C64,
    x_target: f64,
) -> Result<(f64, C64)> {
    let d = displacement_amplitude(&params.displacement, params.eta_f).delta.norm();
    let pref = C64::new(params.kappa / 2.0, -delta_v_eff).inv();
    let psi = x_target - pref.arg();
    let rot = C64::from_polar(1.0, -psi) * carrier;
    if d == 0.0 {
        // Nothing to steer with. An undriven cooling mode has no angle to
        // meet; otherwise the carrier must already point along the target.
        if carrier.norm() == 0.0 || (rot.im.abs() <= 1e-12 * carrier.norm() && rot.re > 0.0) {
            return Ok((params.displacement.theta, C64::new(0.0, 0.0)));
        }
        return Err(Error::GammaUnreachable {
            required: f64::INFINITY,
        });
    }
    let s = rot.im / d;
    if s.abs() > 1.0 {
        return Err(Error::GammaUnreachable { required: s.abs() });
    }
    let along = d * (1.0 - s * s).sqrt() + rot.re;
    if along <= 0.0 {
        return Err(Error::GammaUnreachable { required: s.abs() });
    }
    let alpha = psi - s.asin();
    let theta = wrap_angle(params.displacement.psi - alpha);
    Ok((theta, C64::from_polar(d, alpha)))
}

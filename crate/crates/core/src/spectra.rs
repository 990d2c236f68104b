//! Frequency-domain response, position and detected spectra, and the
//! phonon occupation integral.
//!
//! All spectra are two-sided in angular frequency; ⟨ξ_j(ω)ξ_k(ω′)⟩ =
//! 2πδ(ω+ω′)M_ξ[j][k] so that S_QQ(ω) = q(ω)ᵀ M_ξ q(−ω) with q the
//! Q-row of −(A+iωI)⁻¹B. For real ω, q(−ω) = conj(q(ω)).

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::lm;
use crate::model::{LinearSystem, NoiseModel, SteadyState, INPUT_DIM, STATE_DIM};
use crate::params::SystemParams;
use crate::poles;
use crate::quadrature::{self, QuadError};

/// Pivot ratio below which the response matrix counts as singular.
const SINGULAR_PIVOT_RATIO: f64 = 1e-15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridKind {
    LinearWindow,
    LogAugmented,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyGrid {
    pub points: Vec<f64>,
    pub kind: GridKind,
    pub center: f64,
    pub halfwidth: f64,
}

impl FrequencyGrid {
    /// `n` evenly spaced points on [center − halfwidth, center + halfwidth].
    pub fn linear_window(center: f64, halfwidth: f64, n: usize) -> Result<Self> {
        if n < 2 || !(halfwidth > 0.0) || !center.is_finite() {
            return Err(Error::invalid("grid", "need n >= 2 and a positive finite halfwidth"));
        }
        let lo = center - halfwidth;
        let step = 2.0 * halfwidth / (n - 1) as f64;
        let points = (0..n).map(|i| lo + step * i as f64).collect();
        Ok(FrequencyGrid {
            points,
            kind: GridKind::LinearWindow,
            center,
            halfwidth,
        })
    }

    /// Linear window plus geometrically spaced points on both sides of the
    /// center down to `finest`, for resolving a narrow line on a wide span.
    pub fn log_augmented(center: f64, halfwidth: f64, n: usize, finest: f64) -> Result<Self> {
        let mut g = Self::linear_window(center, halfwidth, n)?;
        if !(finest > 0.0) {
            return Err(Error::invalid("grid", "finest spacing must be positive"));
        }
        let mut d = finest;
        while d < halfwidth {
            g.points.push(center - d);
            g.points.push(center + d);
            d *= 1.5;
        }
        g.points.sort_by(f64::total_cmp);
        g.points.dedup();
        g.kind = GridKind::LogAugmented;
        Ok(g)
    }

    pub fn from_points(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::invalid("grid", "need at least two points"));
        }
        if points.windows(2).any(|w| !(w[1] > w[0])) || points.iter().any(|p| !p.is_finite()) {
            return Err(Error::invalid("grid", "points must be finite and strictly increasing"));
        }
        let lo = points[0];
        let hi = points[points.len() - 1];
        Ok(FrequencyGrid {
            points,
            kind: GridKind::LinearWindow,
            center: 0.5 * (lo + hi),
            halfwidth: 0.5 * (hi - lo),
        })
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.points[0], self.points[self.points.len() - 1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    SnlHalf,
    Absolute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantity {
    #[serde(rename = "S_QQ")]
    Sqq,
    #[serde(rename = "S_Ydet")]
    SYdet,
}

impl Quantity {
    pub fn label(&self) -> &'static str {
        match self {
            Quantity::Sqq => "S_QQ",
            Quantity::SYdet => "S_Ydet",
        }
    }
}

impl Normalization {
    pub fn label(&self) -> &'static str {
        match self {
            Normalization::SnlHalf => "snl-half",
            Normalization::Absolute => "absolute",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub grid: FrequencyGrid,
    pub values: Vec<f64>,
    pub normalization: Normalization,
    pub quantity: Quantity,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow {
    pub omega: f64,
    /// Closed-loop mechanical susceptibility Ω_m·C_h·C_v/det(A+iωI), which
    /// reduces to Ω_m/(Ω_m²−ω²−iΓ_mω) without optomechanical coupling.
    pub chi_cf: C64,
    /// Q(ω) = Σ_j t_vector[j]·ξ_j(ω).
    pub t_vector: [C64; INPUT_DIM],
}

fn factor_at(sys: &LinearSystem, omega: f64) -> Result<Lu<STATE_DIM>> {
    let lu = Lu::factor(sys.response(C64::new(omega, 0.0))).ok_or(Error::SingularAt { omega })?;
    if !(lu.pivot_ratio() > SINGULAR_PIVOT_RATIO) {
        return Err(Error::SingularAt { omega });
    }
    Ok(lu)
}

/// Row `row` of −M⁻¹B.
fn state_row(lu: &Lu<STATE_DIM>, b: &[[C64; INPUT_DIM]; STATE_DIM], row: usize) -> [C64; INPUT_DIM] {
    let mut e = [C64::new(0.0, 0.0); STATE_DIM];
    e[row] = C64::new(1.0, 0.0);
    let y = lu.solve_transposed(&e);
    let mut q = [C64::new(0.0, 0.0); INPUT_DIM];
    for (i, yi) in y.iter().enumerate() {
        if *yi == C64::new(0.0, 0.0) {
            continue;
        }
        for (j, qj) in q.iter_mut().enumerate() {
            *qj -= yi * b[i][j];
        }
    }
    q
}

/// vᵀ M conj(v) for a Hermitian M; returns (real part, imaginary residue).
pub fn hermitian_form(v: &[C64; INPUT_DIM], m: &[[C64; INPUT_DIM]; INPUT_DIM]) -> (f64, f64) {
    let mut s = C64::new(0.0, 0.0);
    for j in 0..INPUT_DIM {
        if v[j] == C64::new(0.0, 0.0) {
            continue;
        }
        let mut t = C64::new(0.0, 0.0);
        for k in 0..INPUT_DIM {
            t += m[j][k] * v[k].conj();
        }
        s += v[j] * t;
    }
    (s.re, s.im)
}

fn chi_from(sys: &LinearSystem, det: C64, omega: f64) -> C64 {
    let i = C64::new(0.0, 1.0);
    let a = C64::new(sys.half_kappa, 0.0) - i * omega;
    let ch = a * a + sys.delta_h_eff * sys.delta_h_eff;
    let cv = a * a + sys.delta_v_eff * sys.delta_v_eff;
    ch * cv * sys.omega_m / det
}

pub fn solve_transfer(ss: &SteadyState, params: &SystemParams, omega: f64) -> Result<TransferRow> {
    let sys = LinearSystem::new(ss, params);
    transfer_with(&sys, omega)
}

pub(crate) fn transfer_with(sys: &LinearSystem, omega: f64) -> Result<TransferRow> {
    let lu = factor_at(sys, omega)?;
    let b = sys.input(omega);
    Ok(TransferRow {
        omega,
        chi_cf: chi_from(sys, lu.det(), omega),
        t_vector: state_row(&lu, &b, 0),
    })
}

/// The closed-form inverse susceptibility written in units where Ω_m = 1
/// (every rate and frequency divided by Ω_m). It equals 16i·det of the
/// normalised response matrix, so that
/// χ_cf = 16i·C̃_h·C̃_v / (Ω_m·[χ]⁻¹) with C̃ = ((κ̃/2 − iω̃)² + Δ̃²).
pub fn closed_form_inverse_susceptibility(ss: &SteadyState, params: &SystemParams, omega: f64) -> C64 {
    let om = params.omega_m;
    let w = omega / om;
    let gm = params.gamma_m / om;
    let k = params.kappa / om;
    let kin = params.kappa_in / om;
    let dh = ss.delta_h_eff / om;
    let dv = ss.delta_v_eff / om;
    let gh = ss.g_h.norm() / om;
    let gv = ss.g_v.norm() / om;
    let tau = params.tau * om;
    let eta = params.eta_loop;
    let gamma = ss.gamma_angle;
    let i = C64::new(0.0, 1.0);
    let kw = C64::new(k, 0.0) - 2.0 * i * w;
    let kw2 = kw * kw;
    let e = (i * tau * w).exp();
    let mech = C64::new(w * w - 1.0, gm * w);
    let t1 = i
        * (16.0 * dv * (4.0 * dh * dh + kw2) * gv * gv
            + (4.0 * dv * dv + kw2) * (16.0 * gh * gh * dh - (4.0 * dh * dh + kw2) * mech));
    let t2 = -32.0 * e * gh * gv * (dh + dv) * eta.sqrt() * kin * (i * k + 2.0 * w) * gamma.cos();
    let t3 = 16.0 * e * gh * gv * kin * (i * kw2 - 4.0 * i * dh * dv) * gamma.sin() * eta.sqrt();
    t1 + t2 + t3
}

/// Dimensional susceptibility from the closed form.
pub fn closed_form_susceptibility(ss: &SteadyState, params: &SystemParams, omega: f64) -> C64 {
    let om = params.omega_m;
    let i = C64::new(0.0, 1.0);
    let a = C64::new(params.kappa / (2.0 * om), -omega / om);
    let ch = a * a + (ss.delta_h_eff / om).powi(2);
    let cv = a * a + (ss.delta_v_eff / om).powi(2);
    16.0 * i * ch * cv / (om * closed_form_inverse_susceptibility(ss, params, omega))
}

pub fn s_qq(ss: &SteadyState, params: &SystemParams, noise: &NoiseModel, omega: f64) -> Result<f64> {
    let sys = LinearSystem::new(ss, params);
    s_qq_with(&sys, noise, omega)
}

pub(crate) fn s_qq_with(sys: &LinearSystem, noise: &NoiseModel, omega: f64) -> Result<f64> {
    let lu = factor_at(sys, omega)?;
    let q = state_row(&lu, &sys.input(omega), 0);
    let (re, _) = hermitian_form(&q, &noise.m_xi);
    Ok(re.max(0.0))
}

/// Settings for the phonon-occupation integral.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegrationPolicy {
    pub rel_tol: f64,
    /// Half-window beyond the mechanical line, in mechanical linewidths.
    pub window_linewidths: f64,
    /// Half-window beyond the mechanical line, in cavity linewidths.
    pub window_kappas: f64,
    pub max_evaluations: usize,
}

impl Default for IntegrationPolicy {
    fn default() -> Self {
        IntegrationPolicy {
            rel_tol: 1e-6,
            window_linewidths: 50.0,
            window_kappas: 10.0,
            max_evaluations: 400_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhononEstimate {
    pub value: f64,
    pub error: f64,
}

/// Breakpoints resolving a line at ±`center` with linewidth `lw` inside
/// [−w, w]: a geometric ladder center ± lw·2^k on each side.
pub(crate) fn line_breakpoints(center: f64, lw: f64, w: f64) -> Vec<f64> {
    let mut pts = vec![-w, 0.0, w];
    for c in [-center, center] {
        pts.push(c);
        let mut d = lw;
        while d < w {
            for p in [c - d, c + d] {
                if p > -w && p < w {
                    pts.push(p);
                }
            }
            d *= 2.0;
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

/// n̄ = (1/4π)∫(1+ω²/Ω_m²)S_QQ(ω)dω − 1/2.
///
/// The integral is taken adaptively over a finite window around the
/// mechanical line; beyond it the weighted integrand falls as 1/ω², and
/// f(W)·W is added for each tail.
pub fn phonon_occupation(
    ss: &SteadyState,
    params: &SystemParams,
    noise: &NoiseModel,
    policy: &IntegrationPolicy,
) -> Result<PhononEstimate> {
    let sys = LinearSystem::new(ss, params);
    let pole = poles::mechanical_pole(&sys).unwrap_or(C64::new(params.omega_m, -0.5 * params.gamma_m));
    let lw = (2.0 * pole.im.abs()).max(1e-3 * params.gamma_m);
    let center = pole.re.abs();
    let w = center + (policy.window_linewidths * lw).max(policy.window_kappas * params.kappa);
    let om2 = params.omega_m * params.omega_m;
    let f = |x: f64| s_qq_with(&sys, noise, x).map(|s| (1.0 + x * x / om2) * s);
    let pts = line_breakpoints(center, lw, w);
    let r = quadrature::integrate(f, &pts, policy.rel_tol, 0.0, policy.max_evaluations).map_err(|e| match e {
        QuadError::Integrand(e) => e,
        QuadError::Budget { value, abs_error } => {
            Error::IntegrationFailure(format!("budget exhausted at {value:e} +- {abs_error:e}"))
        }
    })?;
    let tail = f(w)? * w + f(-w)? * w;
    let total = r.value + tail;
    Ok(PhononEstimate {
        value: total / (4.0 * PI) - 0.5,
        error: (r.abs_error + 0.1 * tail) / (4.0 * PI),
    })
}

/// Output-quadrature coefficients for the detected phase quadrature.
fn detected_row(sys: &LinearSystem, params: &SystemParams, omega: f64) -> Result<[C64; INPUT_DIM]> {
    let carrier = C64::new(params.kappa_in - params.kappa / 2.0, sys.delta_h_eff);
    let a = carrier.arg();
    let lu = factor_at(sys, omega)?;
    let b = sys.input(omega);
    let xh = state_row(&lu, &b, 2);
    let yh = state_row(&lu, &b, 3);
    let sk = params.kappa_in.sqrt();
    let (c, s) = (a.cos(), a.sin());
    let mut r = [C64::new(0.0, 0.0); INPUT_DIM];
    for j in 0..INPUT_DIM {
        r[j] = yh[j] * (c * sk) - xh[j] * (s * sk);
    }
    // Promptly reflected input: Y_out ⊃ −cos(a)·Y_in + sin(a)·X_in.
    r[2] -= c;
    r[1] += s;
    Ok(r)
}

/// Detected homodyne PSD of the probe's phase quadrature, normalised so
/// the shot-noise level is 1/2.
pub fn detected_psd(ss: &SteadyState, params: &SystemParams, noise: &NoiseModel, omega: f64) -> Result<f64> {
    let sys = LinearSystem::new(ss, params);
    detected_psd_with(&sys, ss, params, noise, omega)
}

fn check_homodyne(ss: &SteadyState, params: &SystemParams) -> Result<()> {
    let carrier = C64::new(params.kappa_in - params.kappa / 2.0, ss.delta_h_eff);
    if ss.mean_h_in == 0.0 || carrier.norm() == 0.0 {
        return Err(Error::UndefinedHomodynePhase);
    }
    Ok(())
}

fn detected_psd_with(
    sys: &LinearSystem,
    ss: &SteadyState,
    params: &SystemParams,
    noise: &NoiseModel,
    omega: f64,
) -> Result<f64> {
    check_homodyne(ss, params)?;
    let r = detected_row(sys, params, omega)?;
    let (s, _) = hermitian_form(&r, &noise.m_xi);
    Ok(params.eta_det * s + 0.5 * (1.0 - params.eta_det))
}

/// Evaluates a spectrum over a grid. Points are computed in parallel; the
/// result does not depend on the evaluation order.
pub fn spectrum(
    ss: &SteadyState,
    params: &SystemParams,
    noise: &NoiseModel,
    grid: &FrequencyGrid,
    quantity: Quantity,
) -> Result<Spectrum> {
    let sys = LinearSystem::new(ss, params);
    if quantity == Quantity::SYdet {
        check_homodyne(ss, params)?;
    }
    let values: Result<Vec<f64>> = grid
        .points
        .par_iter()
        .map(|&w| match quantity {
            Quantity::Sqq => s_qq_with(&sys, noise, w),
            Quantity::SYdet => detected_psd_with(&sys, ss, params, noise, w),
        })
        .collect();
    Ok(Spectrum {
        grid: grid.clone(),
        values: values?,
        normalization: match quantity {
            Quantity::Sqq => Normalization::Absolute,
            Quantity::SYdet => Normalization::SnlHalf,
        },
        quantity,
    })
}

/// n̄ = (n̄_calib/A_calib)·A_det.
pub fn phonons_from_area_ratio(n_calib: f64, area_calib: f64, area_det: f64) -> Result<f64> {
    if !(area_calib > 0.0) || !area_calib.is_finite() {
        return Err(Error::invalid("area_calib", "must be positive"));
    }
    if !n_calib.is_finite() || !area_det.is_finite() {
        return Err(Error::invalid("area", "must be finite"));
    }
    Ok(n_calib / area_calib * area_det)
}

/// Offset plus Lorentzian fitted to a spectrum window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianFit {
    /// Integrated Lorentzian area, π·peak height·halfwidth.
    pub area: f64,
    pub area_error: f64,
    pub center: f64,
    pub halfwidth: f64,
    pub height: f64,
    pub offset: f64,
}

fn lorentz(p: &[f64], w: f64) -> f64 {
    // p = (offset, area, center, halfwidth)
    p[0] + p[1] * p[3] / PI / ((w - p[2]).powi(2) + p[3] * p[3])
}

/// Least-squares fit of offset + Lorentzian to the part of `spec` inside
/// `[lo, hi]`; returns the Lorentzian area.
pub fn lorentzian_area(spec: &Spectrum, lo: f64, hi: f64) -> Result<LorentzianFit> {
    let pts: Vec<(f64, f64)> = spec
        .grid
        .points
        .iter()
        .zip(&spec.values)
        .filter(|(w, _)| **w >= lo && **w <= hi)
        .map(|(w, v)| (*w, *v))
        .collect();
    if pts.len() < 8 {
        return Err(Error::FitDiverged("fewer than 8 points in the window".into()));
    }
    let mut sorted: Vec<f64> = pts.iter().map(|p| p.1).collect();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[sorted.len() / 2];
    let mut dev: Vec<f64> = sorted.iter().map(|v| (v - median).abs()).collect();
    dev.sort_by(f64::total_cmp);
    let sigma = 1.4826 * dev[dev.len() / 2];
    let (i_max, &(w_max, y_max)) = pts
        .iter()
        .enumerate()
        .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        .expect("non-empty");
    let prominence = y_max - median;
    if !(prominence > (5.0 * sigma).max(1e-9 * median.abs())) {
        return Err(Error::FitDiverged("no resolvable peak in the window".into()));
    }
    // Half-maximum width from the sampled points.
    let half = median + 0.5 * prominence;
    let mut l = i_max;
    while l > 0 && pts[l].1 > half {
        l -= 1;
    }
    let mut r = i_max;
    while r + 1 < pts.len() && pts[r].1 > half {
        r += 1;
    }
    let hw0 = (0.5 * (pts[r].0 - pts[l].0)).max(0.5 * (pts[1].0 - pts[0].0));
    let x0 = [median, PI * prominence * hw0, w_max, hw0];
    let off_scale = if median.abs() > 0.0 { median.abs() } else { y_max.abs() };
    // Parameters are scaled to order one for the solver.
    let unpack = |z: &[f64]| [z[0] * off_scale, z[1] * x0[1], x0[2] + z[2] * hw0, z[3] * hw0];
    let resid = |z: &[f64]| {
        let p = unpack(z);
        if !(p[3] > 0.0) {
            return None;
        }
        Some(
            pts.iter()
                .map(|(w, y)| (lorentz(&p, *w) - y) / y_max)
                .collect::<Vec<f64>>(),
        )
    };
    let z0 = [median / off_scale, 1.0, 0.0, 1.0];
    let res = lm::minimize(
        resid,
        &z0,
        &lm::LmOptions {
            max_iterations: 500,
            ..Default::default()
        },
    )
    .ok_or_else(|| Error::FitDiverged("model could not be evaluated".into()))?;
    let p = unpack(&res.x);
    if !(p[1] > 0.0) || p[2] < lo || p[2] > hi || !p.iter().all(|v| v.is_finite()) {
        return Err(Error::FitDiverged("fitted peak left the window".into()));
    }
    let dof = (pts.len() - 4) as f64;
    let s2 = 2.0 * res.cost / dof;
    let area_error = lm::spd_inverse(&res.jtj)
        .map(|c| (s2 * c[1][1]).sqrt() * x0[1].abs())
        .unwrap_or(f64::NAN);
    Ok(LorentzianFit {
        area: p[1],
        area_error,
        center: p[2],
        halfwidth: p[3],
        height: p[1] / (PI * p[3]),
        offset: p[0],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_lorentzian_area() {
        let grid = FrequencyGrid::linear_window(100.0, 20.0, 801).unwrap();
        let p = [0.5, 3.0, 100.7, 0.8];
        let values = grid.points.iter().map(|w| lorentz(&p, *w)).collect();
        let spec = Spectrum {
            grid,
            values,
            normalization: Normalization::SnlHalf,
            quantity: Quantity::SYdet,
        };
        let fit = lorentzian_area(&spec, 80.0, 120.0).unwrap();
        assert!((fit.area / 3.0 - 1.0).abs() < 1e-6, "{}", fit.area);
        assert!((fit.halfwidth - 0.8).abs() < 1e-6);
    }

    #[test]
    fn flat_spectrum_has_no_peak() {
        let grid = FrequencyGrid::linear_window(0.0, 1.0, 101).unwrap();
        let spec = Spectrum {
            values: vec![0.5; 101],
            grid,
            normalization: Normalization::SnlHalf,
            quantity: Quantity::SYdet,
        };
        assert!(matches!(lorentzian_area(&spec, -1.0, 1.0), Err(Error::FitDiverged(_))));
    }

    #[test]
    fn area_ratio_identity() {
        assert_eq!(phonons_from_area_ratio(444.0, 2.0, 2.0).unwrap(), 444.0);
        assert!(phonons_from_area_ratio(444.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn grid_validation() {
        assert!(FrequencyGrid::from_points(vec![1.0, 1.0]).is_err());
        let g = FrequencyGrid::log_augmented(10.0, 5.0, 11, 0.01).unwrap();
        assert!(g.points.windows(2).all(|w| w[1] > w[0]));
    }
}

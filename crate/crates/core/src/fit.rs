//! Staged least-squares fits of the detected-PSD model.
//!
//! The chain mirrors how the experiment is calibrated: the probe-only
//! spectrum (DBC1) fixes the probe detuning, probe coupling and probe-side
//! noise; adding the cooling beam with the loop blocked (DBC2) fixes the
//! cooling-mode coupling and noise; the closed-loop spectrum (CFC) then
//! has the displacement angle γ as its only physical unknown.
//!
//! Residuals are taken on ln(PSD), which keeps the shot-noise floor and
//! a peak several decades above it on an equal footing. An averaged
//! periodogram has a log-variance that is the same in every bin, so all
//! bins are weighted equally.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::lm;
use crate::model::{default_noise, solve_steady_state, LinearSystem};
use crate::params::SystemParams;
use crate::poles;
use crate::spectra::{self, lorentzian_area, phonon_occupation, IntegrationPolicy, PhononEstimate, Quantity, Spectrum};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageKind {
    /// Probe only.
    Dbc1,
    /// Probe and cooling beam, loop blocked.
    Dbc2,
    /// Closed loop.
    Cfc,
}

impl StageKind {
    pub fn label(&self) -> &'static str {
        match self {
            StageKind::Dbc1 => "dbc1",
            StageKind::Dbc2 => "dbc2",
            StageKind::Cfc => "cfc",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        match s {
            "dbc1" => Some(StageKind::Dbc1),
            "dbc2" => Some(StageKind::Dbc2),
            "cfc" => Some(StageKind::Cfc),
            _ => None,
        }
    }

    /// Puts a parameter set into the optical configuration of this stage.
    pub fn configure(&self, p: &mut SystemParams) {
        match self {
            StageKind::Dbc1 => {
                p.set_aux_power(0.0);
                p.block_feedback();
            }
            StageKind::Dbc2 => p.block_feedback(),
            StageKind::Cfc => {}
        }
    }

    pub fn default_free(&self) -> Vec<FitParam> {
        match self {
            StageKind::Dbc1 => vec![FitParam::DeltaH, FitParam::G0H, FitParam::SddH],
            StageKind::Dbc2 => vec![FitParam::G0V, FitParam::SddV],
            StageKind::Cfc => vec![FitParam::Gamma],
        }
    }
}

/// Fittable quantities. Nuisance terms act on the model spectrum as
/// S ↦ 1/2 + scale·(S − 1/2) + offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitParam {
    /// Δ_h/κ.
    DeltaH,
    /// Δ_v/κ.
    DeltaV,
    G0H,
    G0V,
    SddH,
    SddV,
    Gamma,
    Scale,
    Offset,
}

impl FitParam {
    pub fn name(&self) -> &'static str {
        match self {
            FitParam::DeltaH => "delta_h_over_kappa",
            FitParam::DeltaV => "delta_v_over_kappa",
            FitParam::G0H => "g0_h",
            FitParam::G0V => "g0_v",
            FitParam::SddH => "s_dd_h",
            FitParam::SddV => "s_dd_v",
            FitParam::Gamma => "gamma",
            FitParam::Scale => "scale",
            FitParam::Offset => "offset",
        }
    }

    fn is_nuisance(&self) -> bool {
        matches!(self, FitParam::Scale | FitParam::Offset)
    }

    /// Positive quantities are fitted in log space.
    fn is_log(&self) -> bool {
        matches!(
            self,
            FitParam::G0H | FitParam::G0V | FitParam::SddH | FitParam::SddV | FitParam::Scale
        )
    }

    fn bounds(&self) -> (f64, f64) {
        match self {
            FitParam::DeltaH | FitParam::DeltaV => (-3.0, 3.0),
            FitParam::G0H | FitParam::G0V => (1e-3, 1e5),
            FitParam::SddH | FitParam::SddV => (1e-8, 1e8),
            FitParam::Gamma => (-3.0 * PI, 3.0 * PI),
            FitParam::Scale => (1e-6, 1e6),
            FitParam::Offset => (-1e3, 1e3),
        }
    }

    fn get(&self, p: &SystemParams, nuisance: &Nuisance) -> f64 {
        match self {
            FitParam::DeltaH => p.delta_h / p.kappa,
            FitParam::DeltaV => p.delta_v / p.kappa,
            FitParam::G0H => p.g0_h,
            FitParam::G0V => p.g0_v,
            FitParam::SddH => p.s_dd_h,
            FitParam::SddV => p.s_dd_v,
            FitParam::Gamma => p.gamma_target.unwrap_or(0.0),
            FitParam::Scale => nuisance.scale,
            FitParam::Offset => nuisance.offset,
        }
    }

    fn set(&self, p: &mut SystemParams, nuisance: &mut Nuisance, v: f64) {
        match self {
            FitParam::DeltaH => p.delta_h = v * p.kappa,
            FitParam::DeltaV => p.delta_v = v * p.kappa,
            FitParam::G0H => p.g0_h = v,
            FitParam::G0V => p.g0_v = v,
            FitParam::SddH => p.s_dd_h = v,
            FitParam::SddV => p.s_dd_v = v,
            FitParam::Gamma => p.gamma_target = Some(v),
            FitParam::Scale => nuisance.scale = v,
            FitParam::Offset => nuisance.offset = v,
        }
    }

    fn encode(&self, v: f64) -> f64 {
        if self.is_log() {
            v.ln()
        } else {
            v
        }
    }

    fn decode(&self, z: f64) -> f64 {
        if self.is_log() {
            z.exp()
        } else {
            z
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nuisance {
    pub scale: f64,
    pub offset: f64,
}

impl Default for Nuisance {
    fn default() -> Self {
        Nuisance {
            scale: 1.0,
            offset: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitStage {
    pub stage: StageKind,
    pub free: Vec<FitParam>,
}

impl FitStage {
    /// Physical free parameters of the stage. The amplitude/offset
    /// nuisances are opt-in: on DBC1 they trade off against g0_h and s_dd_h
    /// and inflate those uncertainties several-fold on noisy data.
    pub fn new(stage: StageKind) -> Self {
        FitStage {
            stage,
            free: stage.default_free(),
        }
    }

    pub fn with_nuisance(mut self) -> Self {
        for f in [FitParam::Scale, FitParam::Offset] {
            if !self.free.contains(&f) {
                self.free.push(f);
            }
        }
        self
    }

    pub fn without_nuisance(mut self) -> Self {
        self.free.retain(|f| !f.is_nuisance());
        self
    }

    pub fn with_delta_v(mut self) -> Self {
        if !self.free.contains(&FitParam::DeltaV) {
            self.free.push(FitParam::DeltaV);
        }
        self
    }

    fn validate(&self) -> Result<()> {
        let physical = self.free.iter().filter(|f| !f.is_nuisance()).count();
        if physical == 0 {
            return Err(Error::invalid("free", "at least one physical parameter"));
        }
        if self.stage == StageKind::Cfc && (physical != 1 || !self.free.contains(&FitParam::Gamma)) {
            return Err(Error::invalid("free", "the CFC stage fits gamma only"));
        }
        for (i, f) in self.free.iter().enumerate() {
            if self.free[..i].contains(f) {
                return Err(Error::invalid("free", format!("duplicate {}", f.name())));
            }
        }
        Ok(())
    }
}

/// A physical parameter held fixed during a stage, with where its value came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrozenValue {
    pub name: String,
    pub value: f64,
    /// "input", or the stage whose fit produced the value.
    pub source: String,
}

const PHYSICAL: [FitParam; 7] = [
    FitParam::DeltaH,
    FitParam::DeltaV,
    FitParam::G0H,
    FitParam::G0V,
    FitParam::SddH,
    FitParam::SddV,
    FitParam::Gamma,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub stage: StageKind,
    pub names: Vec<String>,
    pub values: Vec<f64>,
    /// 1σ uncertainties, in the same units as `values`.
    pub sigmas: Vec<f64>,
    /// Covariance of `values`; `None` when JᵀJ was singular.
    pub covariance: Option<Vec<Vec<f64>>>,
    /// √(Σ r²) of the ln-PSD residuals.
    pub residual_norm: f64,
    pub n_bar: PhononEstimate,
    /// Fitted parameters in the stage's optical configuration.
    pub params: SystemParams,
    pub nuisance: Nuisance,
    pub iterations: usize,
    pub frozen: Vec<FrozenValue>,
    /// Free-form diagnostics, e.g. "no-signal" or "singular-covariance".
    pub flags: Vec<String>,
}

fn model_values(p: &SystemParams, nuisance: &Nuisance, grid: &[f64]) -> Result<Vec<f64>> {
    let ss = solve_steady_state(p)?;
    let noise = default_noise(p)?;
    let g = spectra::FrequencyGrid::from_points(grid.to_vec())?;
    let s = spectra::spectrum(&ss, p, &noise, &g, Quantity::SYdet)?;
    Ok(s.values
        .into_iter()
        .map(|v| 0.5 + nuisance.scale * (v - 0.5) + nuisance.offset)
        .collect())
}

/// Synthetic detected spectrum for a stage at the given parameters.
pub fn synthetic_spectrum(params: &SystemParams, stage: StageKind, grid: &spectra::FrequencyGrid) -> Result<Spectrum> {
    let mut p = params.clone();
    stage.configure(&mut p);
    let ss = solve_steady_state(&p)?;
    let noise = default_noise(&p)?;
    spectra::spectrum(&ss, &p, &noise, grid, Quantity::SYdet)
}

fn has_peak(data: &Spectrum) -> bool {
    let (lo, hi) = data.grid.bounds();
    lorentzian_area(data, lo, hi).is_ok()
}

/// Fits one stage. `init` supplies starting values for the free
/// parameters and fixed values for everything else.
pub fn fit_stage(data: &Spectrum, stage: &FitStage, init: &SystemParams) -> Result<FitResult> {
    stage.validate()?;
    if data.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::invalid("data", "PSD values must be positive and finite"));
    }
    let mut base = init.clone();
    stage.stage.configure(&mut base);
    let nuisance0 = Nuisance::default();
    let names: Vec<String> = stage.free.iter().map(|f| f.name().to_string()).collect();
    let frozen: Vec<FrozenValue> = PHYSICAL
        .iter()
        .filter(|f| !stage.free.contains(f))
        .filter(|f| **f != FitParam::Gamma || base.gamma_target.is_some())
        .map(|f| FrozenValue {
            name: f.name().into(),
            value: f.get(&base, &nuisance0),
            source: "input".into(),
        })
        .collect();

    if !has_peak(data) {
        let values: Vec<f64> = stage.free.iter().map(|f| f.get(&base, &nuisance0)).collect();
        return Ok(FitResult {
            stage: stage.stage,
            sigmas: vec![f64::INFINITY; values.len()],
            values,
            names,
            covariance: None,
            residual_norm: f64::NAN,
            n_bar: PhononEstimate {
                value: f64::NAN,
                error: f64::INFINITY,
            },
            params: base,
            nuisance: Nuisance {
                scale: 0.0,
                offset: 0.0,
            },
            iterations: 0,
            frozen,
            flags: vec!["no-signal".into()],
        });
    }

    let grid = data.grid.points.clone();
    let log_data: Vec<f64> = data.values.iter().map(|v| v.ln()).collect();
    let unpack = |z: &[f64]| -> (SystemParams, Nuisance) {
        let mut p = base.clone();
        let mut n = nuisance0;
        for (f, zi) in stage.free.iter().zip(z) {
            f.set(&mut p, &mut n, f.decode(*zi));
        }
        (p, n)
    };
    let resid = |z: &[f64]| -> Option<Vec<f64>> {
        let (p, n) = unpack(z);
        let m = model_values(&p, &n, &grid).ok()?;
        if m.iter().any(|v| !(*v > 0.0)) {
            return None;
        }
        Some(m.iter().zip(&log_data).map(|(a, b)| a.ln() - b).collect())
    };
    let z0: Vec<f64> = stage.free.iter().map(|f| f.encode(f.get(&base, &nuisance0))).collect();
    let res = lm::minimize(
        resid,
        &z0,
        &lm::LmOptions {
            max_iterations: 300,
            ..Default::default()
        },
    )
    .ok_or_else(|| Error::FitDiverged("model could not be evaluated at the initial guess".into()))?;
    let cost0 = {
        let r0 = resid(&z0).ok_or_else(|| Error::FitDiverged("initial residual".into()))?;
        0.5 * r0.iter().map(|v| v * v).sum::<f64>()
    };
    if !(res.cost <= cost0) || !res.cost.is_finite() {
        return Err(Error::FitDiverged("residual did not decrease".into()));
    }
    let values: Vec<f64> = stage.free.iter().zip(&res.x).map(|(f, z)| f.decode(*z)).collect();
    for (f, v) in stage.free.iter().zip(&values) {
        let (lo, hi) = f.bounds();
        if *v <= lo || *v >= hi {
            return Err(Error::BasinEscape(f.name().into()));
        }
    }

    let m = res.residuals.len();
    let k = values.len();
    let s2 = if m > k { 2.0 * res.cost / (m - k) as f64 } else { 0.0 };
    let mut flags = Vec::new();
    // Chain rule from internal to natural coordinates.
    let dv: Vec<f64> = stage
        .free
        .iter()
        .zip(&values)
        .map(|(f, v)| if f.is_log() { *v } else { 1.0 })
        .collect();
    let covariance = lm::spd_inverse(&res.jtj).map(|c| {
        (0..k)
            .map(|i| (0..k).map(|j| s2 * c[i][j] * dv[i] * dv[j]).collect())
            .collect::<Vec<Vec<f64>>>()
    });
    let sigmas: Vec<f64> = match &covariance {
        Some(c) => (0..k).map(|i| c[i][i].max(0.0).sqrt()).collect(),
        None => {
            flags.push("singular-covariance".into());
            (0..k)
                .map(|i| {
                    let d = res.jtj[i][i];
                    if d > 0.0 {
                        (s2 / d).sqrt() * dv[i]
                    } else {
                        f64::INFINITY
                    }
                })
                .collect()
        }
    };
    let (params, nuisance) = unpack(&res.x);
    if !res.converged {
        flags.push("iteration-limit".into());
    }
    let mut out = FitResult {
        stage: stage.stage,
        names,
        values,
        sigmas,
        covariance,
        residual_norm: (2.0 * res.cost).sqrt(),
        n_bar: PhononEstimate {
            value: f64::NAN,
            error: f64::NAN,
        },
        params,
        nuisance,
        iterations: res.iterations,
        frozen,
        flags,
    };
    out.n_bar = propagate_phonon_uncertainty(&out, &stage.free, None)?;
    Ok(out)
}

/// Inputs for the area-ratio estimate n̄ = n̄_calib·A_det/A_calib.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaRatio {
    pub n_calib: f64,
    pub n_calib_sigma: f64,
    pub area_calib: f64,
    pub area_calib_sigma: f64,
    pub area_det: f64,
    pub area_det_sigma: f64,
}

fn n_bar_at(p: &SystemParams) -> Result<PhononEstimate> {
    let ss = solve_steady_state(p)?;
    let noise = default_noise(p)?;
    phonon_occupation(&ss, p, &noise, &IntegrationPolicy::default())
}

/// First-order propagation of the fit covariance to n̄, or the area-ratio
/// estimate with relative errors added in quadrature when `areas` is set.
/// Without a covariance each parameter's own σ is propagated separately
/// and the contributions are added in quadrature.
pub fn propagate_phonon_uncertainty(
    fit: &FitResult,
    free: &[FitParam],
    areas: Option<&AreaRatio>,
) -> Result<PhononEstimate> {
    if let Some(a) = areas {
        let n = spectra::phonons_from_area_ratio(a.n_calib, a.area_calib, a.area_det)?;
        let rel = (a.n_calib_sigma / a.n_calib).powi(2)
            + (a.area_calib_sigma / a.area_calib).powi(2)
            + (a.area_det_sigma / a.area_det).powi(2);
        return Ok(PhononEstimate {
            value: n,
            error: n.abs() * rel.sqrt(),
        });
    }
    let center = n_bar_at(&fit.params)?;
    let physical: Vec<usize> = (0..free.len()).filter(|&i| !free[i].is_nuisance()).collect();
    if physical.is_empty() {
        return Ok(center);
    }
    let x: Vec<f64> = physical.iter().map(|&i| fit.values[i]).collect();
    let n_of = |y: &[f64]| -> Result<f64> {
        let mut p = fit.params.clone();
        let mut nuis = fit.nuisance;
        for (&i, v) in physical.iter().zip(y) {
            free[i].set(&mut p, &mut nuis, *v);
        }
        Ok(n_bar_at(&p)?.value)
    };
    let grad = central_gradient(n_of, &x)?;
    let var = match &fit.covariance {
        Some(c) => {
            let sub: Vec<Vec<f64>> = physical
                .iter()
                .map(|&i| physical.iter().map(|&j| c[i][j]).collect())
                .collect();
            quadratic_form(&grad, &sub)
        }
        None => physical
            .iter()
            .zip(&grad)
            .map(|(&i, g)| (g * fit.sigmas[i]).powi(2))
            .sum(),
    };
    Ok(PhononEstimate {
        value: center.value,
        error: var.max(0.0).sqrt(),
    })
}

/// Central-difference gradient with steps 1e-4·max(|x_i|, 1e-3).
pub fn central_gradient<F>(f: F, x: &[f64]) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = 1e-4 * x[i].abs().max(1e-3);
        let mut plus = x.to_vec();
        plus[i] += h;
        let mut minus = x.to_vec();
        minus[i] -= h;
        grad.push((f(&plus)? - f(&minus)?) / (2.0 * h));
    }
    Ok(grad)
}

/// gᵀCg, the first-order variance of a function with gradient g.
pub fn quadratic_form(grad: &[f64], cov: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    for (i, gi) in grad.iter().enumerate() {
        for (j, gj) in grad.iter().enumerate() {
            s += gi * cov[i][j] * gj;
        }
    }
    s
}

/// Starting values read off a DBC1 spectrum.
///
/// The fitted line gives the optically induced frequency shift δΩ and
/// damping Γ_opt. Both scale with g0², so their ratio fixes Δ_h, found by a
/// scan of the model's mechanical zero over Δ_h. g0 then follows from the
/// damping, and the detuning noise from the excess of the line wings over
/// the shot-noise floor, which is linear in s_dd.
pub fn initial_guess_dbc1(data: &Spectrum, template: &SystemParams) -> Result<SystemParams> {
    let (lo, hi) = data.grid.bounds();
    let line = lorentzian_area(data, lo, hi)?;
    let mut base = template.clone();
    StageKind::Dbc1.configure(&mut base);
    let shift = line.center - base.omega_m;
    let damping = (2.0 * line.halfwidth - base.gamma_m).max(1e-12);
    let target = shift / damping;

    let response = |d: f64| -> Option<(f64, f64)> {
        let mut p = base.clone();
        p.delta_h = d * p.kappa;
        let ss = solve_steady_state(&p).ok()?;
        let w = poles::mechanical_pole(&LinearSystem::new(&ss, &p)).ok()?;
        Some((w.re - p.omega_m, -2.0 * w.im - p.gamma_m))
    };
    let mut best = (f64::INFINITY, base.delta_h / base.kappa, 1.0);
    for i in 0..=200 {
        let d = -1.0 + 2.0 * i as f64 / 200.0;
        if let Some((s, g)) = response(d) {
            if g > 0.0 {
                let miss = (s / g - target).abs();
                if miss < best.0 {
                    best = (miss, d, g);
                }
            }
        }
    }
    let mut p = base.clone();
    p.delta_h = best.1 * p.kappa;
    p.g0_h *= (damping / best.2).sqrt();

    // Wing excess: model at two noise levels, solve the linear relation.
    let wings: Vec<f64> = data
        .grid
        .points
        .iter()
        .copied()
        .filter(|w| (w - line.center).abs() > 20.0 * line.halfwidth)
        .collect();
    if wings.len() >= 2 {
        let data_w: Vec<f64> = data
            .grid
            .points
            .iter()
            .zip(&data.values)
            .filter(|(w, _)| (*w - line.center).abs() > 20.0 * line.halfwidth)
            .map(|(_, v)| *v)
            .collect();
        let mut p0 = p.clone();
        p0.s_dd_h = 0.0;
        let mut p1 = p.clone();
        p1.s_dd_h = 1.0;
        let nuis = Nuisance::default();
        if let (Ok(m0), Ok(m1)) = (model_values(&p0, &nuis, &wings), model_values(&p1, &nuis, &wings)) {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..wings.len() {
                let slope = m1[i] - m0[i];
                num += slope * (data_w[i] - m0[i]);
                den += slope * slope;
            }
            if den > 0.0 {
                p.s_dd_h = (num / den).max(1e-3);
            }
        }
    }
    Ok(p)
}

fn mark_inherited(r: &mut FitResult, from: &FitResult) {
    let label = from.stage.label();
    for f in &mut r.frozen {
        if from.names.contains(&f.name) {
            f.source = label.into();
        }
    }
}

/// Results of the DBC1 → DBC2 → CFC chain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainResult {
    pub dbc1: FitResult,
    pub dbc2: FitResult,
    pub cfc: FitResult,
}

/// Runs the three stages, each inheriting the previous stage's values.
pub fn fit_chain(
    dbc1: &Spectrum,
    dbc2: &Spectrum,
    cfc: &Spectrum,
    init: &SystemParams,
    stages: [&FitStage; 3],
) -> Result<ChainResult> {
    let r1 = fit_stage(dbc1, stages[0], init)?;
    let mut p = init.clone();
    p.delta_h = r1.params.delta_h;
    p.g0_h = r1.params.g0_h;
    p.s_dd_h = r1.params.s_dd_h;
    let mut r2 = fit_stage(dbc2, stages[1], &p)?;
    mark_inherited(&mut r2, &r1);
    p.g0_v = r2.params.g0_v;
    p.s_dd_v = r2.params.s_dd_v;
    p.delta_v = r2.params.delta_v;
    let mut r3 = fit_stage(cfc, stages[2], &p)?;
    mark_inherited(&mut r3, &r1);
    mark_inherited(&mut r3, &r2);
    Ok(ChainResult {
        dbc1: r1,
        dbc2: r2,
        cfc: r3,
    })
}

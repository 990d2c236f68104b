//! Parameter sweeps and minimisation of the phonon occupation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::model::{default_noise, solve_steady_state};
use crate::params::SystemParams;
use crate::spectra::{phonon_occupation, IntegrationPolicy};
use crate::stability::{check_stability, CellState, Method, Verdict};

/// Which parameter an axis scans, and in what units.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AxisKind {
    /// Ω_m·τ, rad.
    OmegaTau,
    /// Displacement angle γ, rad (θ is solved for).
    Gamma,
    /// Interference angle θ, rad.
    Theta,
    /// Δ_h/κ.
    DeltaH,
    /// Δ_v/κ.
    DeltaV,
    /// κ in rad/s, escape efficiency and Δ/κ held fixed.
    Kappa,
    /// Probe power, W.
    PowerH,
    /// Auxiliary power, W.
    PowerV,
    /// Feedback-loop efficiency η.
    EtaLoop,
}

impl AxisKind {
    pub fn apply(&self, p: &mut SystemParams, v: f64) {
        match self {
            AxisKind::OmegaTau => p.tau = v / p.omega_m,
            AxisKind::Gamma => p.gamma_target = Some(v),
            AxisKind::Theta => {
                p.gamma_target = None;
                p.displacement.theta = v;
            }
            AxisKind::DeltaH => p.delta_h = v * p.kappa,
            AxisKind::DeltaV => p.delta_v = v * p.kappa,
            AxisKind::Kappa => p.set_kappa_scaled(v),
            AxisKind::PowerH => p.set_probe_power(v),
            AxisKind::PowerV => p.set_aux_power(v),
            AxisKind::EtaLoop => p.set_eta_loop(v),
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            AxisKind::OmegaTau => "omega_tau_rad",
            AxisKind::Gamma => "gamma_rad",
            AxisKind::Theta => "theta_rad",
            AxisKind::DeltaH => "delta_h_over_kappa",
            AxisKind::DeltaV => "delta_v_over_kappa",
            AxisKind::Kappa => "kappa_rad_per_s",
            AxisKind::PowerH => "p_h_in_w",
            AxisKind::PowerV => "p_v_aux_w",
            AxisKind::EtaLoop => "eta_loop",
        }
    }

    pub fn from_label(s: &str) -> Option<Self> {
        [
            AxisKind::OmegaTau,
            AxisKind::Gamma,
            AxisKind::Theta,
            AxisKind::DeltaH,
            AxisKind::DeltaV,
            AxisKind::Kappa,
            AxisKind::PowerH,
            AxisKind::PowerV,
            AxisKind::EtaLoop,
        ]
        .into_iter()
        .find(|k| k.label() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepAxis {
    pub kind: AxisKind,
    pub values: Vec<f64>,
}

impl SweepAxis {
    pub fn linspace(kind: AxisKind, lo: f64, hi: f64, n: usize) -> Result<Self> {
        if n < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::invalid("axis", "need n >= 2 and finite lo < hi"));
        }
        let values = (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect();
        Ok(SweepAxis { kind, values })
    }

    pub fn from_values(kind: AxisKind, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 || values.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid(
                "axis",
                "values must be strictly increasing, at least two",
            ));
        }
        Ok(SweepAxis { kind, values })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepOptions {
    pub method: Method,
    pub policy: IntegrationPolicy,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            method: Method::ArgumentPrinciple,
            policy: IntegrationPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResult {
    /// Phonon occupation, +∞ unless the cell is stable.
    pub n_bar: f64,
    pub state: CellState,
    pub error: Option<String>,
}

/// Steady state, stability verdict and, for stable points, n̄.
pub fn evaluate_point(params: &SystemParams, opts: &SweepOptions) -> CellResult {
    let fail = |e: Error| CellResult {
        n_bar: f64::INFINITY,
        state: CellState::Undetermined,
        error: Some(e.to_string()),
    };
    let ss = match solve_steady_state(params) {
        Ok(s) => s,
        Err(e) => return fail(e),
    };
    let report = match check_stability(&ss, params, None, opts.method) {
        Ok(r) => r,
        Err(e) => return fail(e),
    };
    if report.verdict != Verdict::Stable {
        return CellResult {
            n_bar: f64::INFINITY,
            state: report.verdict.into(),
            error: None,
        };
    }
    let n = default_noise(params).and_then(|noise| phonon_occupation(&ss, params, &noise, &opts.policy));
    match n {
        Ok(n) => CellResult {
            n_bar: n.value,
            state: CellState::Stable,
            error: None,
        },
        Err(e) => fail(e),
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SweepMetadata {
    /// SHA-256 of the serialized parameter template.
    pub template_hash: String,
    pub started_unix: f64,
    pub finished_unix: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub axis1: SweepAxis,
    pub axis2: SweepAxis,
    /// `n_bar[i][j]` for axis1 value i and axis2 value j.
    pub n_bar: Vec<Vec<f64>>,
    pub mask: Vec<Vec<CellState>>,
    /// (i, j, message) for every cell that failed to evaluate.
    pub errors: Vec<(usize, usize, String)>,
    pub metadata: SweepMetadata,
}

impl SweepResult {
    /// Stable cell with the lowest n̄: (i, j, n̄).
    pub fn argmin(&self) -> Option<(usize, usize, f64)> {
        let mut best: Option<(usize, usize, f64)> = None;
        for (i, row) in self.n_bar.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if v.is_finite() && best.is_none_or(|b| v < b.2) {
                    best = Some((i, j, v));
                }
            }
        }
        best
    }
}

pub fn template_hash(p: &SystemParams) -> String {
    let text = toml::to_string(p).unwrap_or_default();
    let digest = Sha256::digest(text.as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Evaluates every grid cell independently. The result matrices do not
/// depend on the evaluation order or thread count.
pub fn sweep_2d(template: &SystemParams, axis1: &SweepAxis, axis2: &SweepAxis, opts: &SweepOptions) -> SweepResult {
    let started = now();
    let (n1, n2) = (axis1.values.len(), axis2.values.len());
    let cells: Vec<CellResult> = (0..n1 * n2)
        .into_par_iter()
        .map(|k| {
            let mut p = template.clone();
            axis1.kind.apply(&mut p, axis1.values[k / n2]);
            axis2.kind.apply(&mut p, axis2.values[k % n2]);
            evaluate_point(&p, opts)
        })
        .collect();
    let mut n_bar = vec![vec![f64::INFINITY; n2]; n1];
    let mut mask = vec![vec![CellState::Undetermined; n2]; n1];
    let mut errors = Vec::new();
    for (k, c) in cells.into_iter().enumerate() {
        let (i, j) = (k / n2, k % n2);
        n_bar[i][j] = c.n_bar;
        mask[i][j] = c.state;
        if let Some(e) = c.error {
            errors.push((i, j, e));
        }
    }
    SweepResult {
        axis1: axis1.clone(),
        axis2: axis2.clone(),
        n_bar,
        mask,
        errors,
        metadata: SweepMetadata {
            template_hash: template_hash(template),
            started_unix: started,
            finished_unix: now(),
        },
    }
}

/// A free coordinate for the optimiser with its bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FreeParam {
    pub kind: AxisKind,
    pub lo: f64,
    pub hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeOptions {
    /// Coarse pre-scan points per free coordinate.
    pub coarse_points: usize,
    pub stability_constrained: bool,
    /// Pattern search stops once the step is below this fraction of each
    /// coordinate's range.
    pub step_tol: f64,
    pub sweep: SweepOptions,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            coarse_points: 11,
            stability_constrained: true,
            step_tol: 1e-6,
            sweep: SweepOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimumReport {
    pub argmin: Vec<f64>,
    pub n_bar_min: f64,
    /// Per coordinate, the smaller one-sided distance from the argmin to
    /// where n̄ first exceeds 1.1·n̄_min (capped by the bounds).
    pub flatness_radius: Vec<f64>,
    /// True when the coarse scan found no variation of n̄ at all.
    pub zero_sensitivity: bool,
    pub evaluations: usize,
}

pub fn minimize_phonons(template: &SystemParams, free: &[FreeParam], opts: &OptimizeOptions) -> Result<OptimumReport> {
    if free.is_empty() {
        return Err(Error::invalid("free", "at least one free parameter"));
    }
    for f in free {
        if !(f.hi > f.lo) || !f.lo.is_finite() || !f.hi.is_finite() {
            return Err(Error::invalid("bounds", "need finite lo < hi"));
        }
    }
    if opts.coarse_points < 2 {
        return Err(Error::invalid("coarse_points", "need at least 2"));
    }
    let objective = |x: &[f64]| -> f64 {
        let mut p = template.clone();
        for (f, v) in free.iter().zip(x) {
            f.kind.apply(&mut p, *v);
        }
        let c = evaluate_point(&p, &opts.sweep);
        if opts.stability_constrained || c.n_bar.is_finite() {
            c.n_bar
        } else {
            // Unconstrained: evaluate the integral regardless of stability.
            solve_steady_state(&p)
                .and_then(|ss| {
                    let noise = default_noise(&p)?;
                    phonon_occupation(&ss, &p, &noise, &opts.sweep.policy)
                })
                .map(|n| n.value)
                .unwrap_or(f64::INFINITY)
        }
    };

    // Coarse pre-scan over the full tensor grid.
    let m = opts.coarse_points;
    let total = m.pow(free.len() as u32);
    let coord = |k: usize| -> Vec<f64> {
        let mut idx = k;
        free.iter()
            .map(|f| {
                let i = idx % m;
                idx /= m;
                f.lo + (f.hi - f.lo) * i as f64 / (m - 1) as f64
            })
            .collect()
    };
    let scan: Vec<f64> = (0..total).into_par_iter().map(|k| objective(&coord(k))).collect();
    let mut evaluations = total;
    let finite: Vec<f64> = scan.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() {
        return Err(Error::NoStableRegion);
    }
    let (k_best, _) = scan
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let zero_sensitivity = (hi - lo).abs() <= 1e-9 * lo.abs().max(1e-300);

    let mut x = coord(k_best);
    let mut fx = scan[k_best];
    let ranges: Vec<f64> = free.iter().map(|f| f.hi - f.lo).collect();
    let mut steps: Vec<f64> = ranges.iter().map(|r| r / (m - 1) as f64).collect();
    if !zero_sensitivity {
        // Compass search.
        loop {
            let mut improved = false;
            for d in 0..free.len() {
                for sgn in [-1.0, 1.0] {
                    let mut y = x.clone();
                    y[d] = (x[d] + sgn * steps[d]).clamp(free[d].lo, free[d].hi);
                    if y[d] == x[d] {
                        continue;
                    }
                    let fy = objective(&y);
                    evaluations += 1;
                    if fy < fx {
                        x = y;
                        fx = fy;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                let mut done = true;
                for d in 0..free.len() {
                    steps[d] *= 0.5;
                    if steps[d] > opts.step_tol * ranges[d] {
                        done = false;
                    }
                }
                if done {
                    break;
                }
            }
        }
    }

    // Flatness: walk outward along each coordinate.
    let mut flatness_radius = Vec::with_capacity(free.len());
    for d in 0..free.len() {
        let h = ranges[d] / 200.0;
        let mut radius = f64::INFINITY;
        for sgn in [-1.0, 1.0] {
            let mut r = 0.0;
            loop {
                let next = r + h;
                let v = x[d] + sgn * next;
                if v < free[d].lo || v > free[d].hi {
                    break;
                }
                let mut y = x.clone();
                y[d] = v;
                evaluations += 1;
                if !(objective(&y) <= 1.1 * fx) {
                    break;
                }
                r = next;
            }
            radius = radius.min(r);
        }
        flatness_radius.push(radius);
    }

    Ok(OptimumReport {
        argmin: x,
        n_bar_min: fx,
        flatness_radius,
        zero_sensitivity,
        evaluations,
    })
}

/// DBC-only and full-CFC occupation versus probe detuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetuningCurve {
    pub delta_h_over_kappa: Vec<f64>,
    /// Feedback blocked; +∞ where unstable or undetermined.
    pub dbc: Vec<f64>,
    /// Full loop at the template's γ and τ; absent for DBC-only scans.
    pub cfc: Option<Vec<f64>>,
}

pub fn detuning_scan(template: &SystemParams, grid: &[f64], dbc_only: bool, opts: &SweepOptions) -> DetuningCurve {
    let run = |blocked: bool| -> Vec<f64> {
        grid.par_iter()
            .map(|&d| {
                let mut p = template.clone();
                p.delta_h = d * p.kappa;
                if blocked {
                    p.block_feedback();
                }
                evaluate_point(&p, opts).n_bar
            })
            .collect()
    };
    DetuningCurve {
        delta_h_over_kappa: grid.to_vec(),
        dbc: run(true),
        cfc: if dbc_only { None } else { Some(run(false)) },
    }
}

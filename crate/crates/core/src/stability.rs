//! Stability of the delayed feedback loop.
//!
//! Ground truth is a zero count of det(A(ω) + iωI) in the closed upper
//! half plane by the argument principle. A cheaper, conservative check
//! based on the open-loop transfer of the feedback path is also offered;
//! it may call a stable point unstable but never the reverse.

use num_complex::Complex64 as C64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::model::{solve_steady_state, LinearSystem, SteadyState, STATE_DIM};
use crate::params::SystemParams;
use crate::poles;
use crate::sweep::SweepAxis;

/// Zeros closer than this fraction of Γ_m to the real axis are marginal.
pub const MARGINAL_FRACTION: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Stable,
    Unstable,
    Marginal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LoopBound {
    /// Eigenvalue loci of the loop transfer L(ω) must not cross the real
    /// axis left of −1/margin.
    EigenLocus { margin: f64 },
    /// sup_ω σ_max(L(ω)) < 1/margin.
    SmallGain { margin: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    ArgumentPrinciple,
    SufficientBound(LoopBound),
}

impl Method {
    pub fn sufficient_default() -> Self {
        Method::SufficientBound(LoopBound::EigenLocus { margin: 1.0 })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Method::ArgumentPrinciple => "argument-principle",
            Method::SufficientBound(_) => "sufficient-bound",
        }
    }
}

/// Rectangle in the complex frequency plane, rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityReport {
    pub verdict: Verdict,
    /// Zero count in the region; `None` when the method does not count.
    pub pole_count_upper_half: Option<u32>,
    /// The tracked mechanical zero, which is the one nearest the real axis.
    pub nearest_pole: C64,
    pub method: Method,
    pub search_region: Region,
}

/// A rectangle [−B, B] × [0, B] that provably contains every zero with
/// Im ω ≥ 0.
pub fn default_region(ss: &SteadyState, params: &SystemParams) -> Region {
    let sys = LinearSystem::new(ss, params);
    bounding_region(&sys)
}

fn bounding_region(sys: &LinearSystem) -> Region {
    let b = 1.05 * poles::zero_radius_bound(sys) + sys.half_kappa;
    Region {
        re_min: -b,
        re_max: b,
        im_min: 0.0,
        im_max: b,
    }
}

pub fn check_stability(
    ss: &SteadyState,
    params: &SystemParams,
    region: Option<Region>,
    method: Method,
) -> Result<StabilityReport> {
    let sys = LinearSystem::new(ss, params);
    check_system(&sys, region, method)
}

pub(crate) fn check_system(sys: &LinearSystem, region: Option<Region>, method: Method) -> Result<StabilityReport> {
    let region = region.unwrap_or_else(|| bounding_region(sys));
    if !(region.re_max > region.re_min && region.im_max > region.im_min) {
        return Err(Error::invalid("region", "empty rectangle"));
    }
    let pole = poles::mechanical_pole(sys)?;
    let tol = MARGINAL_FRACTION * sys.gamma_m;
    let report = |verdict, count| StabilityReport {
        verdict,
        pole_count_upper_half: count,
        nearest_pole: pole,
        method,
        search_region: region,
    };
    if pole.im.abs() < tol {
        return Ok(report(Verdict::Marginal, None));
    }
    match method {
        Method::ArgumentPrinciple => {
            let n = count(sys, &region, pole)?;
            Ok(report(
                if n == 0 { Verdict::Stable } else { Verdict::Unstable },
                Some(n),
            ))
        }
        Method::SufficientBound(bound) => {
            let ok = loop_bound_holds(sys, bound)?;
            Ok(report(if ok { Verdict::Stable } else { Verdict::Unstable }, None))
        }
    }
}

fn count(sys: &LinearSystem, region: &Region, pole: C64) -> Result<u32> {
    let scale = pole.im.abs().max(MARGINAL_FRACTION * sys.gamma_m);
    poles::count_zeros_in_rectangle(
        sys,
        (region.re_min, region.re_max),
        (region.im_min, region.im_max),
        &[-pole.re, pole.re],
        scale,
    )
}

/// Loop transfer of the feedback path, L(ω) = e^{iωτ}·G(ω)·K with G the
/// (X_h,Y_h)×(X_v,Y_v) block of the open-loop inverse response.
fn loop_transfer(open: &LinearSystem, closed: &LinearSystem, omega: f64) -> Option<[[C64; 2]; 2]> {
    let lu = Lu::factor(open.response(C64::new(omega, 0.0)))?;
    let mut g = [[C64::new(0.0, 0.0); 2]; 2];
    for (c, col_idx) in [4usize, 5].iter().enumerate() {
        let mut e = [C64::new(0.0, 0.0); STATE_DIM];
        e[*col_idx] = C64::new(1.0, 0.0);
        let x = lu.solve(&e);
        g[0][c] = x[2];
        g[1][c] = x[3];
    }
    let (_, a1) = closed.split();
    let k = [[a1[4][2], a1[4][3]], [a1[5][2], a1[5][3]]];
    let e = C64::from_polar(1.0, omega * closed.tau);
    let mut l = [[C64::new(0.0, 0.0); 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            l[i][j] = e * (g[i][0] * k[0][j] + g[i][1] * k[1][j]);
        }
    }
    Some(l)
}

fn sigma_max(l: &[[C64; 2]; 2]) -> f64 {
    // Largest eigenvalue of LᴴL.
    let a = l[0][0].norm_sqr() + l[1][0].norm_sqr();
    let d = l[0][1].norm_sqr() + l[1][1].norm_sqr();
    let b = l[0][0].conj() * l[0][1] + l[1][0].conj() * l[1][1];
    let tr = a + d;
    let det = a * d - b.norm_sqr();
    (0.5 * tr + (0.25 * tr * tr - det).max(0.0).sqrt()).sqrt()
}

/// Both eigenvalues of a 2×2 matrix.
fn eigenvalues(l: &[[C64; 2]; 2]) -> [C64; 2] {
    let t = l[0][0] + l[1][1];
    let d = l[0][0] * l[1][1] - l[0][1] * l[1][0];
    let disc = (t * t - 4.0 * d).sqrt();
    [(t + disc) * 0.5, (t - disc) * 0.5]
}

/// Orders `next` so each entry continues the branch in `prev`.
fn match_branches(prev: &[C64; 2], next: [C64; 2]) -> [C64; 2] {
    let keep = (next[0] - prev[0]).norm() + (next[1] - prev[1]).norm();
    let swap = (next[1] - prev[0]).norm() + (next[0] - prev[1]).norm();
    if swap < keep {
        [next[1], next[0]]
    } else {
        next
    }
}

fn scan_grid(sys: &LinearSystem, open_pole: C64) -> Vec<f64> {
    let om = sys.omega_m;
    let w_max = 40.0 * (sys.half_kappa + sys.delta_h_eff.abs() + sys.delta_v_eff.abs() + om);
    let mut pts: Vec<f64> = (0..=4000).map(|i| w_max * i as f64 / 4000.0).collect();
    let lw = open_pole.im.abs().max(MARGINAL_FRACTION * sys.gamma_m);
    let c = open_pole.re.abs();
    let mut d = lw / 4.0;
    while d < om {
        for p in [c - d, c + d] {
            if p > 0.0 {
                pts.push(p);
            }
        }
        d *= 1.25;
    }
    for c in [sys.delta_h_eff.abs(), sys.delta_v_eff.abs()] {
        let mut d = sys.half_kappa / 64.0;
        while d < 4.0 * sys.half_kappa {
            for p in [c - d, c + d] {
                if p > 0.0 {
                    pts.push(p);
                }
            }
            d *= 1.25;
        }
    }
    pts.sort_by(f64::total_cmp);
    pts.dedup();
    pts
}

fn loop_bound_holds(sys: &LinearSystem, bound: LoopBound) -> Result<bool> {
    let mut open = sys.clone();
    open.loop_gain = 0.0;
    let open_pole = poles::mechanical_pole(&open)?;
    if open_pole.im >= -MARGINAL_FRACTION * sys.gamma_m {
        return Ok(false);
    }
    if sys.loop_gain == 0.0 {
        return Ok(count(&open, &bounding_region(&open), open_pole)? == 0);
    }
    if count(&open, &bounding_region(&open), open_pole)? != 0 {
        return Ok(false);
    }
    let grid = scan_grid(sys, open_pole);
    let eval = |w: f64| loop_transfer(&open, sys, w).ok_or(Error::SingularAt { omega: w });
    match bound {
        LoopBound::SmallGain { margin } => {
            for &w in &grid {
                if sigma_max(&eval(w)?) * margin >= 1.0 {
                    return Ok(false);
                }
            }
            Ok(true)
        }
        LoopBound::EigenLocus { margin } => {
            // A locus may not meet the real axis at or left of −1/margin.
            let limit = -1.0 / margin;
            let l0 = eval(0.0)?;
            for e in eigenvalues(&l0) {
                if e.im.abs() <= 1e-12 * e.norm() && e.re <= limit {
                    return Ok(false);
                }
            }
            let last = eval(*grid.last().expect("grid"))?;
            if sigma_max(&last) * margin >= 0.5 {
                // Loop gain has not decayed inside the scanned band.
                return Ok(false);
            }
            let mut prev_w = grid[0];
            let mut prev = eigenvalues(&eval(prev_w)?);
            for &w in &grid[1..] {
                let cur = match_branches(&prev, eigenvalues(&eval(w)?));
                for k in 0..2 {
                    let (e0, e1) = (prev[k], cur[k]);
                    if e0.im.signum() == e1.im.signum() && e0.im != 0.0 && e1.im != 0.0 {
                        continue;
                    }
                    // Crossings of the positive axis, and the numerically
                    // zero eigenvalue of a rank-one loop, are harmless.
                    if (e0.re >= 0.0 && e1.re >= 0.0) || e0.norm().max(e1.norm()) < 1e-6 * limit.abs() {
                        continue;
                    }
                    // Bisect along the branch for the axis crossing.
                    let (mut a, mut b) = (prev_w, w);
                    let (mut ea, mut eb) = (e0, e1);
                    for _ in 0..60 {
                        let m = 0.5 * (a + b);
                        let es = eigenvalues(&eval(m)?);
                        let near = |e: C64| (e - ea).norm() + (e - eb).norm();
                        let em = if near(es[0]) <= near(es[1]) { es[0] } else { es[1] };
                        if em.im.signum() == ea.im.signum() && em.im != 0.0 {
                            a = m;
                            ea = em;
                        } else {
                            b = m;
                            eb = em;
                        }
                    }
                    let x = 0.5 * (ea.re + eb.re);
                    if x <= limit {
                        return Ok(false);
                    }
                }
                prev_w = w;
                prev = cur;
            }
            Ok(true)
        }
    }
}

/// Per-cell state of a stability map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CellState {
    Stable = 0,
    Unstable = 1,
    Undetermined = 2,
    Marginal = 3,
}

impl From<Verdict> for CellState {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Stable => CellState::Stable,
            Verdict::Unstable => CellState::Unstable,
            Verdict::Marginal => CellState::Marginal,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityMap {
    pub axis1: SweepAxis,
    pub axis2: SweepAxis,
    /// `cells[i][j]` for axis1 value i and axis2 value j.
    pub cells: Vec<Vec<CellState>>,
    pub method: Method,
}

/// Verdict for one parameter set; errors become `Undetermined`.
pub fn cell_state(params: &SystemParams, method: Method) -> CellState {
    solve_steady_state(params)
        .and_then(|ss| check_stability(&ss, params, None, method))
        .map(|r| r.verdict.into())
        .unwrap_or(CellState::Undetermined)
}

pub fn stability_map(template: &SystemParams, axis1: &SweepAxis, axis2: &SweepAxis, method: Method) -> StabilityMap {
    let cells = axis1
        .values
        .par_iter()
        .map(|&a| {
            axis2
                .values
                .iter()
                .map(|&b| {
                    let mut p = template.clone();
                    axis1.kind.apply(&mut p, a);
                    axis2.kind.apply(&mut p, b);
                    cell_state(&p, method)
                })
                .collect()
        })
        .collect();
    StabilityMap {
        axis1: axis1.clone(),
        axis2: axis2.clone(),
        cells,
        method,
    }
}

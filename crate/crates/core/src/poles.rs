//! Zeros of the characteristic function det(A(ω) + iωI).
//!
//! A zero ω_p corresponds to a mode evolving as e^{−iω_p t}, so stability
//! requires every zero to sit in the lower half plane.

use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::linalg::Lu;
use crate::model::{LinearSystem, STATE_DIM};

pub fn characteristic(sys: &LinearSystem, omega: C64) -> C64 {
    match Lu::factor(sys.response(omega)) {
        Some(lu) => lu.det(),
        None => C64::new(0.0, 0.0),
    }
}

/// Newton step −det/det′ = −1/tr(M⁻¹M′).
fn newton_step(sys: &LinearSystem, omega: C64) -> Option<C64> {
    let lu = Lu::factor(sys.response(omega))?;
    let d = sys.response_derivative(omega);
    let mut tr = C64::new(0.0, 0.0);
    // tr(M⁻¹ D) = Σ_j (M⁻¹ D_{:,j})_j
    for j in 0..STATE_DIM {
        let mut col = [C64::new(0.0, 0.0); STATE_DIM];
        for (i, c) in col.iter_mut().enumerate() {
            *c = d[i][j];
        }
        if col.iter().all(|z| *z == C64::new(0.0, 0.0)) {
            continue;
        }
        tr += lu.solve(&col)[j];
    }
    if tr.norm() == 0.0 || !tr.is_finite() {
        return None;
    }
    Some(-tr.inv())
}

fn newton(sys: &LinearSystem, mut omega: C64, scale: f64) -> Option<C64> {
    for _ in 0..60 {
        let step = match newton_step(sys, omega) {
            Some(s) => s,
            // An exactly singular matrix means we landed on the zero.
            None => return Some(omega),
        };
        if !step.is_finite() || step.norm() > 0.5 * scale {
            return None;
        }
        omega += step;
        if step.norm() <= 1e-14 * omega.norm() + 1e-300 {
            return Some(omega);
        }
    }
    None
}

fn scaled(sys: &LinearSystem, s: f64) -> LinearSystem {
    let mut t = sys.clone();
    t.gh *= s;
    t.gv *= s;
    t
}

/// Tracks the mechanical zero (positive real part) from the bare
/// resonator, continuously switching on the optomechanical couplings.
pub fn mechanical_pole(sys: &LinearSystem) -> Result<C64> {
    let om = sys.omega_m;
    let gm = sys.gamma_m;
    let bare = C64::new((om * om - 0.25 * gm * gm).sqrt(), -0.5 * gm);
    if sys.gh == 0.0 && sys.gv == 0.0 {
        return Ok(bare);
    }
    let mut s = 0.0f64;
    let mut ds = 0.125f64;
    let mut w = bare;
    let mut w_prev = bare;
    let mut s_prev = 0.0;
    let mut shrinks = 0;
    while s < 1.0 {
        let s_next = (s + ds).min(1.0);
        // Linear predictor from the last two accepted points.
        let guess = if s > s_prev {
            w + (w - w_prev) * ((s_next - s) / (s - s_prev))
        } else {
            w
        };
        let t = scaled(sys, s_next);
        let scale = (0.05 * om).max(10.0 * (w - w_prev).norm());
        match newton(&t, guess, scale) {
            Some(z) if (z - w).norm() < 0.2 * om => {
                w_prev = w;
                s_prev = s;
                w = z;
                s = s_next;
                ds = (ds * 1.5).min(0.25);
            }
            _ => {
                ds *= 0.5;
                shrinks += 1;
                if ds < 1e-6 || shrinks > 80 {
                    return Err(Error::IntegrationFailure("mechanical zero could not be tracked".into()));
                }
            }
        }
    }
    Ok(w)
}

/// Upper bound on |ω| for any zero with Im ω ≥ 0: such a zero makes
/// −iω an eigenvalue of A(ω), whose norm is at most ‖A0‖_F + ‖A1‖_F
/// there because |e^{iωτ}| ≤ 1.
pub fn zero_radius_bound(sys: &LinearSystem) -> f64 {
    let (a0, a1) = sys.split();
    crate::linalg::frobenius(&a0) + crate::linalg::frobenius(&a1)
}

/// Characteristic function normalised by (ω + iR)⁶ so it tends to a
/// constant of unit modulus far from the origin.
fn normalised(sys: &LinearSystem, r: f64, omega: C64) -> C64 {
    characteristic(sys, omega) / (omega + C64::new(0.0, r)).powi(STATE_DIM as i32)
}

/// Counts zeros inside a rectangle by the argument principle.
///
/// `forced` lists real parts where the bottom edge gets extra
/// breakpoints, `ladder_scale` the finest spacing of the geometric
/// ladder placed around each of them.
pub fn count_zeros_in_rectangle(
    sys: &LinearSystem,
    re: (f64, f64),
    im: (f64, f64),
    forced: &[f64],
    ladder_scale: f64,
) -> Result<u32> {
    let r = zero_radius_bound(sys).max(re.1.abs()).max(re.0.abs()).max(im.1.abs());
    let f = |z: C64| normalised(sys, r, z);
    let size = (re.1 - re.0).max(im.1 - im.0);
    let min_len = 1e-13 * size.max(1.0);

    let mut horiz: Vec<f64> = vec![re.0, re.1];
    for &c in forced {
        if c > re.0 && c < re.1 {
            horiz.push(c);
        }
        let mut d = ladder_scale;
        while d < size {
            for p in [c - d, c + d] {
                if p > re.0 && p < re.1 {
                    horiz.push(p);
                }
            }
            d *= 2.0;
        }
    }
    horiz.sort_by(f64::total_cmp);
    horiz.dedup();

    let mut path: Vec<C64> = Vec::new();
    for &x in &horiz {
        path.push(C64::new(x, im.0));
    }
    path.push(C64::new(re.1, im.1));
    path.push(C64::new(re.0, im.1));
    path.push(C64::new(re.0, im.0));
    path.dedup();

    let mut total = 0.0;
    for w in path.windows(2) {
        total += edge_winding(&f, w[0], w[1], min_len)?;
    }
    let turns = total / std::f64::consts::TAU;
    let n = turns.round();
    if (turns - n).abs() > 0.05 || n < 0.0 {
        return Err(Error::ContourAmbiguous(format!(
            "winding number {turns:.4} is not a non-negative integer"
        )));
    }
    Ok(n as u32)
}

fn arg_change(a: C64, b: C64) -> f64 {
    (b / a).arg()
}

fn edge_winding<F: Fn(C64) -> C64>(f: &F, z0: C64, z1: C64, min_len: f64) -> Result<f64> {
    let limit = std::f64::consts::FRAC_PI_4;
    let mut total = 0.0;
    let mut stack = vec![(z0, f(z0), z1, f(z1))];
    while let Some((a, fa, b, fb)) = stack.pop() {
        if fa.norm() == 0.0 || fb.norm() == 0.0 || !fa.is_finite() || !fb.is_finite() {
            return Err(Error::ContourAmbiguous(format!("zero on the contour near {a}")));
        }
        let m = (a + b) * 0.5;
        let fm = f(m);
        let d1 = arg_change(fa, fm);
        let d2 = arg_change(fm, fb);
        let d = arg_change(fa, fb);
        let consistent = (d1 + d2 - d).abs() < 1e-9;
        if d1.abs() < limit && d2.abs() < limit && consistent {
            total += d;
            continue;
        }
        if (b - a).norm() < min_len {
            return Err(Error::ContourAmbiguous(format!("edge refinement stalled near {m}")));
        }
        // Push the right half first so the left is processed next.
        stack.push((m, fm, b, fb));
        stack.push((a, fa, m, fm));
    }
    Ok(total)
}

//! Independent reference computations checked against the library.

use cfc_validation as common;

use cfc_core::model::{LinearSystem, STATE_DIM};
use cfc_core::spectra::{closed_form_susceptibility, Normalization};
use cfc_core::units::{HBAR, K_B, TWO_PI};
use cfc_core::*;
use nalgebra::SVector;
use num_complex::Complex64 as C64;
use rand::Rng;
use std::f64::consts::{PI, SQRT_2};

#[test]
fn closed_form_susceptibility_matches_matrix_inverse() {
    let mut rng = common::rng(11);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let p = common::random_stable(&mut rng);
        let w = p.omega_m * rng.gen_range(0.8..1.2);
        let (ss, m) = common::response_matrix(&p, w);
        let inv = m.try_inverse().expect("invertible");
        // Q responds to a unit force on P through the (Q, P) element.
        let direct = -inv[(0, 1)];
        let closed = closed_form_susceptibility(&ss, &p, w);
        let row = solve_transfer(&ss, &p, w).unwrap();
        worst = worst
            .max(common::rel(closed, direct))
            .max(common::rel(row.chi_cf, direct));
    }
    assert!(worst < 1e-10, "worst relative mismatch {worst:e}");
}

#[test]
fn drift_matrix_hand_transcription() {
    let p = SystemParams::table_defaults();
    let ss = solve_steady_state(&p).unwrap();
    let w = 1.01 * p.omega_m;
    let a = drift_matrix(&ss, &p, w).entries;
    let (om, gm, k2) = (p.omega_m, p.gamma_m, p.kappa / 2.0);
    let (dh, dv) = (ss.delta_h_eff, ss.delta_v_eff);
    let (gh, gv) = (ss.g_h.norm(), ss.g_v.norm());
    let e = C64::from_polar(1.0, w * p.tau) * (p.eta_loop.sqrt() * p.kappa_in);
    let (c, s) = (ss.gamma_angle.cos(), ss.gamma_angle.sin());
    let z = C64::new(0.0, 0.0);
    let r = |v: f64| C64::new(v, 0.0);
    let expected = [
        [z, r(om), z, z, z, z],
        [r(-om), r(-gm), r(-2.0 * gh), z, r(-2.0 * gv), z],
        [z, z, r(-k2), r(-dh), z, z],
        [r(-2.0 * gh), z, r(dh), r(-k2), z, z],
        [z, z, -e * c, -e * s, r(-k2), r(-dv)],
        [r(-2.0 * gv), z, e * s, -e * c, r(dv), r(-k2)],
    ];
    for i in 0..STATE_DIM {
        for j in 0..STATE_DIM {
            let d = (a[i][j] - expected[i][j]).norm();
            let scale = expected[i][j].norm().max(1.0);
            assert!(d <= 1e-14 * scale, "entry ({i},{j}): {} vs {}", a[i][j], expected[i][j]);
        }
    }
}

#[test]
fn s_qq_matches_full_covariance_assembly() {
    let mut rng = common::rng(12);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let p = common::random_stable(&mut rng);
        let ss = solve_steady_state(&p).unwrap();
        let noise = default_noise(&p).unwrap();
        for f in [0.3, 0.97, 1.0, 1.03, 2.5] {
            let w = f * p.omega_m;
            let a = s_qq(&ss, &p, &noise, w).unwrap();
            let b = common::covariance_s_qq(&p, w);
            worst = worst.max((a - b).abs() / b.abs());
        }
    }
    assert!(worst < 1e-8, "worst relative mismatch {worst:e}");
}

#[test]
fn thermal_occupation_matches_bose_series() {
    for (t, f) in [(300.0, 1.14e6), (4.0, 1.14e6), (0.01, 5e9)] {
        let x = HBAR * TWO_PI * f / (K_B * t);
        // 1/(e^x − 1) = Σ_{k≥1} e^{−kx}, summed until the terms vanish.
        let series = if x > 1.0 {
            (1..200).map(|k| (-(k as f64) * x).exp()).sum::<f64>()
        } else {
            // Laurent series for small x.
            1.0 / x - 0.5 + x / 12.0 - x.powi(3) / 720.0 + x.powi(5) / 30240.0
        };
        let n = thermal_occupation(t, TWO_PI * f).unwrap();
        assert!(
            (n - series).abs() <= 1e-12 * series.max(1e-300),
            "T={t} f={f}: {n} vs {series}"
        );
    }
}

#[test]
fn closed_form_angle_matches_steady_state_argument() {
    let mut rng = common::rng(13);
    for _ in 0..200 {
        let mut p = common::random_params(&mut rng);
        p.gamma_target = None;
        p.displacement.theta = rng.gen_range(-PI..PI);
        let Ok(ss) = solve_steady_state(&p) else { continue };
        let x = angle_x(&p.displacement, &p, ss.delta_h_eff, ss.delta_v_eff, ss.mean_h_in).unwrap();
        let d = units::wrap_angle(x - ss.mean_v.arg());
        assert!(d.abs() < 1e-10, "x {x} vs arg {}", ss.mean_v.arg());
    }
}

#[test]
fn dbc_limit_matches_weak_coupling_formula() {
    let mut rng = common::rng(14);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let mut p = SystemParams::table_defaults();
        p.block_feedback();
        p.gamma_target = None;
        p.set_detuning_noise(0.0);
        p.delta_h = rng.gen_range(-1.5..-0.05) * p.kappa;
        p.delta_v = rng.gen_range(-1.5..-0.05) * p.kappa;
        p.set_probe_power(rng.gen_range(10e-6..100e-6));
        p.set_aux_power(rng.gen_range(50e-6..300e-6));
        let ss = solve_steady_state(&p).unwrap();
        assert!(ss.g_h.norm() < 0.05 * p.kappa && ss.g_v.norm() < 0.05 * p.kappa);
        let noise = default_noise(&p).unwrap();
        let n = phonon_occupation(&ss, &p, &noise, &IntegrationPolicy::default())
            .unwrap()
            .value;
        let reference = common::weak_coupling_dbc(&p, &ss);
        worst = worst.max((n / reference - 1.0).abs());
    }
    assert!(worst < 0.05, "worst relative deviation {worst}");
}

#[test]
fn lorentzian_area_matches_trapezoid() {
    let p = SystemParams::table_defaults();
    let ss = solve_steady_state(&p).unwrap();
    let noise = default_noise(&p).unwrap();
    let grid = FrequencyGrid::linear_window(p.omega_m, TWO_PI * 20e3, 8001).unwrap();
    let s = spectrum(&ss, &p, &noise, &grid, Quantity::SYdet).unwrap();
    assert_eq!(s.normalization, Normalization::SnlHalf);
    let (lo, hi) = grid.bounds();
    let fit = lorentzian_area(&s, lo, hi).unwrap();
    let step = grid.points[1] - grid.points[0];
    let above: Vec<f64> = s.values.iter().map(|v| v - fit.offset).collect();
    let mut trap = 0.0;
    for w in above.windows(2) {
        trap += 0.5 * step * (w[0] + w[1]);
    }
    // Add the Lorentzian tails outside the window.
    let hw = fit.halfwidth;
    let inside = (((hi - fit.center) / hw).atan() + ((fit.center - lo) / hw).atan()) / PI;
    let tails = fit.area * (1.0 - inside);
    let total = trap + tails.max(0.0);
    assert!((fit.area / total - 1.0).abs() < 0.01, "{} vs {}", fit.area, total);
}

#[test]
fn steady_state_is_consistent() {
    let mut rng = common::rng(15);
    for _ in 0..100 {
        let p = common::random_params(&mut rng);
        let Ok(ss) = solve_steady_state(&p) else { continue };
        for r in model::steady_state_residuals(&ss, &p) {
            assert!(r < 1e-9, "residual {r}");
        }
        let expected_q = -SQRT_2 / p.omega_m * (p.g0_h * ss.mean_h.norm_sqr() + p.g0_v * ss.mean_v.norm_sqr());
        assert!((ss.mean_q - expected_q).abs() <= 1e-9 * expected_q.abs());
    }
}

#[test]
fn mechanical_input_drives_only_momentum() {
    let p = SystemParams::table_defaults();
    let ss = solve_steady_state(&p).unwrap();
    let b = LinearSystem::new(&ss, &p).input(p.omega_m);
    let col: SVector<C64, STATE_DIM> = SVector::from_fn(|i, _| b[i][0]);
    assert_eq!(col.iter().filter(|z| z.norm() > 0.0).count(), 1);
    assert!((col[1].re - (2.0 * p.gamma_m).sqrt()).abs() < 1e-15);
}

//! Invariants checked over random parameter draws.

#![allow(clippy::needless_range_loop)]

use cfc_validation as common;

use cfc_core::config::RunConfig;
use cfc_core::io;
use cfc_core::model::{noise_model, LinearSystem, INPUT_DIM};
use cfc_core::spectra::{hermitian_form, Normalization};
use cfc_core::stability::CellState;
use cfc_core::sweep::SweepOptions;
use cfc_core::units::{wrap_angle, TWO_PI};
use cfc_core::*;
use proptest::prelude::*;
use std::f64::consts::PI;

fn config() -> ProptestConfig {
    ProptestConfig {
        cases: 48,
        ..ProptestConfig::default()
    }
}

fn stable(seed: u64) -> (SystemParams, SteadyState) {
    let p = common::random_stable(&mut common::rng(seed));
    let ss = solve_steady_state(&p).unwrap();
    (p, ss)
}

proptest! {
    #![proptest_config(config())]

    #[test]
    fn noise_correlations_are_hermitian_and_positive(n in 0.0f64..1e7, sh in 0.0f64..1e3, sv in 0.0f64..1e3) {
        let mut p = SystemParams::table_defaults();
        p.s_dd_h = sh;
        p.s_dd_v = sv;
        let m = noise_model(&p, n).m_xi;
        for j in 0..INPUT_DIM {
            for k in 0..INPUT_DIM {
                prop_assert_eq!(m[j][k], m[k][j].conj());
            }
            prop_assert!(m[j][j].re >= 0.0);
        }
        // Each vacuum pair has a 2×2 block with zero determinant, so the
        // matrix is positive semidefinite.
        for i in [1, 3, 5] {
            let det = m[i][i] * m[i + 1][i + 1] - m[i][i + 1] * m[i + 1][i];
            prop_assert!(det.norm() < 1e-15);
        }
    }

    #[test]
    fn loss_channels_add_up_to_kappa(seed in any::<u64>()) {
        let p = common::random_params(&mut common::rng(seed));
        let Ok(ss) = solve_steady_state(&p) else { return Ok(()) };
        let b = LinearSystem::new(&ss, &p).input(1.0 * p.omega_m);
        // Vacuum inputs only: δΔ columns 7 and 8 are classical.
        for row in 2..6 {
            let total: f64 = (0..7).map(|j| b[row][j].norm_sqr()).sum();
            prop_assert!((total / p.kappa - 1.0).abs() < 1e-12, "row {} sums to {}", row, total / p.kappa);
        }
        let combined = (p.kappa - p.kappa_in) + p.kappa_in * (1.0 - p.eta_loop);
        prop_assert!((combined - (p.kappa - p.eta_loop * p.kappa_in)).abs() <= 1e-9 * p.kappa);
    }

    #[test]
    fn common_phase_on_cooling_drive_is_a_gauge(seed in any::<u64>(), a in -PI..PI) {
        let mut p = common::random_params(&mut common::rng(seed));
        p.gamma_target = None;
        let Ok(s0) = solve_steady_state(&p) else { return Ok(()) };
        let mut q = p.clone();
        q.phi += a;
        q.displacement.psi -= a;
        let s1 = solve_steady_state(&q).unwrap();
        prop_assert!((s1.mean_h.norm() / s0.mean_h.norm() - 1.0).abs() < 1e-10);
        prop_assert!((s1.mean_v.norm() / s0.mean_v.norm() - 1.0).abs() < 1e-10);
        prop_assert!((s1.mean_q / s0.mean_q - 1.0).abs() < 1e-10);
        prop_assert!(wrap_angle(s1.mean_v.arg() - s0.mean_v.arg() + a).abs() < 1e-9);
        prop_assert!(wrap_angle(s1.gamma_angle - s0.gamma_angle).abs() < 1e-9);
    }

    #[test]
    fn targeted_gamma_is_independent_of_loop_phase(seed in any::<u64>(), a in -PI..PI) {
        let (p, ss) = stable(seed);
        let mut q = p.clone();
        q.phi = wrap_angle(q.phi + a);
        let Ok(s1) = solve_steady_state(&q) else { return Ok(()) };
        prop_assert!(wrap_angle(s1.gamma_angle - ss.gamma_angle).abs() < 1e-9);
        let n0 = default_noise(&p).unwrap();
        let n1 = default_noise(&q).unwrap();
        let w = p.omega_m;
        let x0 = s_qq(&ss, &p, &n0, w).unwrap();
        let x1 = s_qq(&s1, &q, &n1, w).unwrap();
        prop_assert!((x1 / x0 - 1.0).abs() < 1e-8);
    }

    #[test]
    fn s_qq_is_real_and_nonnegative(seed in any::<u64>(), f in 0.1f64..3.0) {
        let (p, ss) = stable(seed);
        let noise = default_noise(&p).unwrap();
        let row = solve_transfer(&ss, &p, f * p.omega_m).unwrap();
        let (re, im) = hermitian_form(&row.t_vector, &noise.m_xi);
        prop_assert!(re >= 0.0);
        prop_assert!(im.abs() <= 1e-10 * re.abs());
        // Real dynamics: the response at −ω is the conjugate of that at ω.
        let row2 = solve_transfer(&ss, &p, -f * p.omega_m).unwrap();
        let scale = row.t_vector.iter().map(|z| z.norm()).fold(0.0, f64::max);
        for (a, b) in row.t_vector.iter().zip(&row2.t_vector) {
            prop_assert!((a.conj() - b).norm() <= 1e-10 * scale);
        }
    }

    #[test]
    fn detected_spectrum_respects_snl_floor(seed in any::<u64>()) {
        let (mut p, _) = stable(seed);
        p.set_detuning_noise(0.0);
        let Ok(ss) = solve_steady_state(&p) else { return Ok(()) };
        let noise = default_noise(&p).unwrap();
        let grid = FrequencyGrid::linear_window(p.omega_m, 0.5 * p.omega_m, 201).unwrap();
        let s = spectrum(&ss, &p, &noise, &grid, Quantity::SYdet).unwrap();
        prop_assert_eq!(s.normalization, Normalization::SnlHalf);
        let floor = 0.5 * (1.0 - p.eta_det);
        for v in &s.values {
            prop_assert!(*v >= floor * (1.0 - 1e-12));
        }
    }

    #[test]
    fn sufficient_bound_is_one_sided(seed in any::<u64>()) {
        let p = common::random_params(&mut common::rng(seed));
        let Ok(ss) = solve_steady_state(&p) else { return Ok(()) };
        for m in [
            Method::sufficient_default(),
            Method::SufficientBound(stability::LoopBound::SmallGain { margin: 1.0 }),
        ] {
            let Ok(r) = check_stability(&ss, &p, None, m) else { continue };
            if r.verdict == Verdict::Stable {
                let exact = check_stability(&ss, &p, None, Method::ArgumentPrinciple).unwrap();
                prop_assert_eq!(exact.verdict, Verdict::Stable);
            }
        }
    }

    #[test]
    fn severed_loop_stability_ignores_delay_and_angle(seed in any::<u64>(), t in 0.0f64..PI, g in -PI..PI) {
        let mut p = common::random_params(&mut common::rng(seed));
        p.block_feedback();
        let Ok(ss) = solve_steady_state(&p) else { return Ok(()) };
        let base = check_stability(&ss, &p, None, Method::ArgumentPrinciple).unwrap().verdict;
        let mut q = p.clone();
        q.tau = t / q.omega_m;
        q.gamma_target = Some(g);
        let ss2 = solve_steady_state(&q).unwrap();
        prop_assert_eq!(check_stability(&ss2, &q, None, Method::ArgumentPrinciple).unwrap().verdict, base);
    }

    #[test]
    fn displacement_angle_tracks_interference_angle(theta in -PI..PI) {
        let mut p = SystemParams::table_defaults();
        p.set_probe_power(1e-15);
        p.set_aux_power(1e-3);
        p.gamma_target = None;
        let h = 1e-4;
        let gamma_at = |t: f64| {
            let mut q = p.clone();
            q.displacement.theta = t;
            solve_steady_state(&q).unwrap().gamma_angle
        };
        let d = wrap_angle(gamma_at(theta + h) - gamma_at(theta - h)) / (2.0 * h);
        prop_assert!((d + 1.0).abs() < 1e-6, "dγ/dθ = {}", d);
    }

    #[test]
    fn config_round_trip_is_idempotent(seed in any::<u64>(), locked in any::<bool>()) {
        let mut cfg = RunConfig::defaults();
        cfg.params = common::random_params(&mut common::rng(seed));
        if locked {
            cfg.params.gamma_target = None;
        }
        let text = cfg.to_toml().unwrap();
        let back = RunConfig::from_toml(&text).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_toml().unwrap(), text);
    }

    #[test]
    fn spectrum_file_round_trip(seed in any::<u64>()) {
        let (p, ss) = stable(seed);
        let noise = default_noise(&p).unwrap();
        let grid = FrequencyGrid::linear_window(p.omega_m, TWO_PI * 3e3, 64).unwrap();
        for q in [Quantity::Sqq, Quantity::SYdet] {
            let s = spectrum(&ss, &p, &noise, &grid, q).unwrap();
            let mut buf = Vec::new();
            io::write_spectrum(&mut buf, &s).unwrap();
            let back = io::read_spectrum(buf.as_slice()).unwrap();
            prop_assert_eq!(back.quantity, s.quantity);
            prop_assert_eq!(back.normalization, s.normalization);
            prop_assert_eq!(&back.values, &s.values);
            for (a, b) in back.grid.points.iter().zip(&s.grid.points) {
                prop_assert!((a / b - 1.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn table_and_grid_round_trip(rows in proptest::collection::vec(proptest::collection::vec(-1e9f64..1e9, 3), 1..20),
                                 codes in proptest::collection::vec(0u8..4, 12)) {
        let mut buf = Vec::new();
        io::write_table(&mut buf, &["a", "b", "c"], &rows).unwrap();
        let (cols, back) = io::read_table(buf.as_slice()).unwrap();
        prop_assert_eq!(cols, vec!["a", "b", "c"]);
        prop_assert_eq!(back, rows);

        let a1 = SweepAxis::linspace(AxisKind::OmegaTau, 0.0, PI, 3).unwrap();
        let a2 = SweepAxis::linspace(AxisKind::Gamma, -PI, PI, 4).unwrap();
        let state = |c: u8| match c {
            0 => CellState::Stable,
            1 => CellState::Unstable,
            2 => CellState::Undetermined,
            _ => CellState::Marginal,
        };
        let cells: Vec<Vec<CellState>> = codes.chunks(4).map(|r| r.iter().map(|c| state(*c)).collect()).collect();
        let mut buf = Vec::new();
        io::write_mask(&mut buf, &a1, &a2, &cells).unwrap();
        let g = io::read_mask(buf.as_slice()).unwrap();
        prop_assert_eq!(g.cells, cells);
        prop_assert_eq!(g.axis1, a1);
        prop_assert_eq!(g.axis2, a2);
    }
}

#[test]
fn escape_efficiency_of_defaults() {
    let p = SystemParams::table_defaults();
    assert!((p.escape_efficiency() - 0.68).abs() < 1e-15);
    // Ω_m/Q = 2π × 0.0104 Hz, which the table rounds to 0.01 Hz.
    assert!((p.gamma_m / TWO_PI / 0.01 - 1.0).abs() < 0.05);
}

#[test]
fn delay_period_leaves_resonant_spectrum_unchanged() {
    let mut p = recipes::ideal_resonant(&SystemParams::table_defaults());
    p.gamma_target = Some(-0.5 * PI);
    p.tau = 0.25 * PI / p.omega_m;
    let mut q = p.clone();
    q.tau += TWO_PI / p.omega_m;
    let (ss_p, ss_q) = (solve_steady_state(&p).unwrap(), solve_steady_state(&q).unwrap());
    let noise = default_noise(&p).unwrap();
    let a = s_qq(&ss_p, &p, &noise, p.omega_m).unwrap();
    let b = s_qq(&ss_q, &q, &noise, q.omega_m).unwrap();
    assert!((a / b - 1.0).abs() < 1e-9, "{a} vs {b}");
    let policy = IntegrationPolicy::default();
    let na = phonon_occupation(&ss_p, &p, &noise, &policy).unwrap().value;
    let nb = phonon_occupation(&ss_q, &q, &noise, &policy).unwrap().value;
    assert!((na / nb - 1.0).abs() < 0.01, "{na} vs {nb}");
}

#[test]
fn sweep_is_deterministic_and_order_independent() {
    let p = SystemParams::table_defaults();
    let a1 = SweepAxis::linspace(AxisKind::OmegaTau, 0.05 * PI, 0.9 * PI, 6).unwrap();
    let a2 = SweepAxis::linspace(AxisKind::Gamma, -PI, 0.0, 5).unwrap();
    let opts = SweepOptions::default();
    let r1 = sweep_2d(&p, &a1, &a2, &opts);
    let r2 = sweep_2d(&p, &a1, &a2, &opts);
    let bits = |r: &SweepResult| -> Vec<u64> { r.n_bar.iter().flatten().map(|v| v.to_bits()).collect() };
    assert_eq!(bits(&r1), bits(&r2));
    assert_eq!(r1.mask, r2.mask);
    // Sequential evaluation in reverse order gives the same cells.
    for i in (0..a1.values.len()).rev() {
        for j in (0..a2.values.len()).rev() {
            let mut q = p.clone();
            a1.kind.apply(&mut q, a1.values[i]);
            a2.kind.apply(&mut q, a2.values[j]);
            let c = sweep::evaluate_point(&q, &opts);
            assert_eq!(c.n_bar.to_bits(), r1.n_bar[i][j].to_bits());
            assert_eq!(c.state, r1.mask[i][j]);
            assert_eq!(c.n_bar.is_finite(), c.state == CellState::Stable);
        }
    }
}

//! Checks against values worked out by hand.

use std::f64::consts::PI;

use approx::assert_abs_diff_eq;
use nvdfs::experiments::{
    default_odmr_grid, fit_decay, run_gate_repetition, run_odmr_scan, run_storage_experiment, ExperimentConfig,
    FitModel, NoiseMode, StoredState,
};
use nvdfs::noise_models::stream_rng;
use nvdfs::nv_model::{odmr_frequencies, resonance_tau_seed, Branch, NvSystem};
use nvdfs::readout_model::{chain_contrast, chain_state, fidelity_bounds, InitPopulations, ScenarioFlag};
use nvdfs::spin_core::{state_fidelity, DensityMatrix, Operator, PureState};
use nvdfs::tomography::{mle_reconstruct, simulate_all};
use rand::Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn larmor_frequency() {
    let sys = NvSystem::default_register();
    assert_abs_diff_eq!(sys.field.omega_l(), 513.84, epsilon = 1e-9);
}

#[test]
fn resonance_seeds() {
    let sys = NvSystem::default_register();
    // (2k - 1) / (2 (2 wL + A_par)) in μs.
    let s1 = resonance_tau_seed(3, sys.spin(1).unwrap(), &sys.field).unwrap();
    assert_abs_diff_eq!(s1, 5.0e3 / (2.0 * (1027.68 - 77.02)), epsilon = 1e-12);
    let s2 = resonance_tau_seed(1, sys.spin(2).unwrap(), &sys.field).unwrap();
    assert_abs_diff_eq!(s2, 1.0e3 / (2.0 * (1027.68 + 71.03)), epsilon = 1e-12);
}

#[test]
fn odmr_lines_by_hand() {
    let sys = NvSystem::default_register();
    let f = odmr_frequencies(sys.spin(1).unwrap(), &sys.field);
    assert_abs_diff_eq!(f.omega_0, 513.84, epsilon = 1e-12);
    assert_abs_diff_eq!(
        f.omega_plus,
        ((-77.02f64 - 513.84).powi(2) + 114.5f64.powi(2)).sqrt(),
        epsilon = 1e-9
    );
    assert_abs_diff_eq!(
        f.omega_minus,
        ((-77.02f64 + 513.84).powi(2) + 114.5f64.powi(2)).sqrt(),
        epsilon = 1e-9
    );
}

#[test]
fn odmr_minus_one_line_center() {
    let cfg = ExperimentConfig {
        shots: 0,
        ..ExperimentConfig::default()
    };
    for spin in [1, 2] {
        let expect = odmr_frequencies(cfg.system.spin(spin).unwrap(), &cfg.system.field).omega_minus;
        // Offset grid: the line is not on a grid point.
        let grid: Vec<f64> = default_odmr_grid(spin, Branch::MinusOne, &cfg)
            .unwrap()
            .iter()
            .map(|f| f + 0.017)
            .collect();
        let scan = run_odmr_scan(spin, Branch::MinusOne, &grid, &cfg).unwrap();
        assert!(
            (scan.center_khz - expect).abs() < 0.01,
            "spin{spin}: {} vs {expect}",
            scan.center_khz
        );
    }
}

#[test]
fn fit_error_bars_cover_truth() {
    let (t_true, floor, amp, sigma) = (1.5, 0.35, 0.3, 0.01);
    let xs: Vec<f64> = (0..16).map(|i| 0.25 * i as f64).collect();
    let noise = Normal::new(0.0, sigma).unwrap();
    let trials = 1000;
    let mut covered = 0;
    for k in 0..trials {
        let mut rng = stream_rng(7, k, 99);
        let pts: Vec<(f64, f64)> = xs
            .iter()
            .map(|&x| (x, floor + amp * (-x / t_true).exp() + noise.sample(&mut rng)))
            .collect();
        let f = fit_decay(&pts, FitModel::ExpWithFloor).unwrap();
        // Student t, 13 degrees of freedom, two-sided 95 %.
        if (f.params[2] - t_true).abs() <= 2.160 * f.sigmas[2] {
            covered += 1;
        }
    }
    let rate = covered as f64 / trials as f64;
    // Nominal 95 %; Monte Carlo scatter is about 0.7 %.
    assert!(rate >= 0.93, "coverage {rate}");
}

#[test]
fn tomography_of_mixed_and_orthogonal_states() {
    let mixed = DensityMatrix::maximally_mixed(4);
    let rec = mle_reconstruct(&simulate_all(&mixed, 1_000_000, 3).unwrap()).unwrap();
    let f = state_fidelity(&PureState::singlet(), &rec.rho).unwrap();
    assert_abs_diff_eq!(f, 0.25, epsilon = 0.005);

    let s = DensityMatrix::from_pure(&PureState::singlet());
    let rec = mle_reconstruct(&simulate_all(&s, 1_000_000, 4).unwrap()).unwrap();
    assert!(state_fidelity(&PureState::triplet(), &rec.rho).unwrap() < 1e-3);
}

#[test]
fn singlet_correlations() {
    let s = DensityMatrix::from_pure(&PureState::singlet());
    for o in [Operator::sigma_x(), Operator::sigma_y(), Operator::sigma_z()] {
        assert_abs_diff_eq!(s.expectation(&o.kron(&o)).re, -1.0, epsilon = 1e-12);
    }
    let t = DensityMatrix::from_pure(&PureState::triplet());
    let (x, y, z) = (Operator::sigma_x(), Operator::sigma_y(), Operator::sigma_z());
    assert_abs_diff_eq!(t.expectation(&x.kron(&x)).re, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(t.expectation(&y.kron(&y)).re, 1.0, epsilon = 1e-12);
    assert_abs_diff_eq!(t.expectation(&z.kron(&z)).re, -1.0, epsilon = 1e-12);
}

#[test]
fn readout_bounds_typical() {
    let b = fidelity_bounds(&InitPopulations::typical()).unwrap();
    assert_abs_diff_eq!(b.contrast_max, 0.8, epsilon = 1e-12);
    assert_abs_diff_eq!(b.f_no_memory, 0.9, epsilon = 1e-12);
    assert_abs_diff_eq!(b.f_charge_preserving, 0.5 + 0.8 / 1.8, epsilon = 1e-12);
}

/// Enumerates both pump draws explicitly. The first draw sets the nucleus
/// (polarized only if the electron was in ms = 0); the second decides
/// whether the readout swap sees the qubit manifold.
fn enumerated_bright(p: &[f64; 4], charge_preserving: bool, flip: bool) -> f64 {
    let s = p[0] + p[1] + p[2];
    let mut bright = 0.0;
    for (e1, &w1) in p.iter().enumerate() {
        // Nuclear probability of reading bright after the second swap.
        let nuc_bright = match e1 {
            0 if flip => 0.0,
            0 => 1.0,
            _ => 0.5,
        };
        let draws: Vec<f64> = if charge_preserving {
            if e1 == 3 {
                vec![0.0, 0.0, 0.0, 1.0]
            } else {
                vec![p[0] / s, p[1] / s, p[2] / s, 0.0]
            }
        } else {
            p.to_vec()
        };
        // Only draws 0 and 1 (ms = 0 and the mixed qubit state) swap back.
        bright += w1 * (draws[0] + draws[1]) * nuc_bright;
    }
    bright
}

#[test]
fn readout_chain_matches_enumeration() {
    let mut rng = stream_rng(11, 0, 77);
    for _ in 0..50 {
        let v: [f64; 4] = [rng.random_range(0.05..1.0), rng.random(), rng.random(), rng.random()];
        let t: f64 = v.iter().sum();
        let p = InitPopulations::new(v[0] / t, v[1] / t, v[2] / t, 1.0 - (v[0] + v[1] + v[2]) / t).unwrap();
        let a = p.as_array();
        for (cp, sc) in [(false, ScenarioFlag::NoMemory), (true, ScenarioFlag::ChargePreserving)] {
            let direct = enumerated_bright(&a, cp, false);
            assert_abs_diff_eq!(chain_state(sc).bright_population(&p), direct, epsilon = 1e-12);
            let contrast = (direct - enumerated_bright(&a, cp, true)) / a[0];
            assert_abs_diff_eq!(chain_contrast(&p, sc).unwrap(), contrast, epsilon = 1e-12);
        }
        let b = fidelity_bounds(&p).unwrap();
        assert_abs_diff_eq!(
            b.f_no_memory,
            0.5 + chain_contrast(&p, ScenarioFlag::NoMemory).unwrap() / 2.0,
            epsilon = 1e-12
        );
    }
}

#[test]
fn repetition_sign_follows_electron_branch() {
    let cfg = ExperimentConfig {
        repetitions: 8,
        ..ExperimentConfig::noiseless()
    };
    for spin in [1, 2] {
        let up = run_gate_repetition(spin, Branch::Zero, &cfg).unwrap();
        let down = run_gate_repetition(spin, Branch::MinusOne, &cfg).unwrap();
        assert!(up.y[0].abs() > 0.9, "{:?}", up.y);
        assert!(up.y[0] * down.y[0] < 0.0, "{:?} vs {:?}", up.y, down.y);
    }
}

#[test]
fn protected_singlet_without_t1_does_not_decay() {
    let cfg = ExperimentConfig {
        t1: false,
        trajectories: 100,
        ..ExperimentConfig::default()
    };
    let r = run_storage_experiment(StoredState::Singlet, NoiseMode::GeneralCollective, &cfg).unwrap();
    let f0 = r.fidelity[0];
    assert!(r.fidelity.iter().all(|f| (f - f0).abs() < 1e-9), "{:?}", r.fidelity);
    let fit = r.fit.unwrap();
    assert!(fit.degenerate);
    assert_eq!(fit.t_est(), Some(f64::INFINITY));
}

#[test]
fn stored_state_phases() {
    assert_abs_diff_eq!(StoredState::Singlet.phi(), PI, epsilon = 0.0);
    assert_abs_diff_eq!(StoredState::Triplet.phi(), 0.0, epsilon = 0.0);
}

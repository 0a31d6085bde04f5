use std::f64::consts::PI;

use nvdfs::experiments::{fit_decay, FitModel};
use nvdfs::noise_models::{storage_channel, NoiseSet, RfNoiseSpec, StaticFieldNoise};
use nvdfs::nv_model::NvSystem;
use nvdfs::pulse_engine::{decoupling_block, PulseSequence};
use nvdfs::readout_model::{chain_contrast, fidelity_bounds, InitPopulations, ScenarioFlag};
use nvdfs::spin_core::{axis_angle, c, propagator, su2, CMatrix, CVector, DensityMatrix, Operator, PureState};
use nvdfs::tomography::{measurement_settings, mle_reconstruct, simulate_all};
use proptest::prelude::*;

/// exp(A) by scaling and squaring with a Taylor series.
fn expm_taylor(a: &CMatrix) -> CMatrix {
    let norm = a.iter().map(|z| z.norm()).sum::<f64>();
    let s = (norm / 0.25).log2().ceil().max(0.0) as i32;
    let b = a.map(|z| z / 2f64.powi(s));
    let n = a.nrows();
    let mut term = CMatrix::identity(n, n);
    let mut out = term.clone();
    for k in 1..30 {
        term = &term * &b / c(k as f64, 0.0);
        out += &term;
    }
    for _ in 0..s {
        out = &out * &out;
    }
    out
}

fn hermitian(dim: usize) -> impl Strategy<Value = Operator> {
    prop::collection::vec(-50.0..50.0f64, dim * dim * 2).prop_map(move |v| {
        let mut m = CMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in 0..dim {
                m[(i, j)] = c(v[2 * (i * dim + j)], v[2 * (i * dim + j) + 1]);
            }
        }
        let h = (&m + m.adjoint()).map(|z| z * 0.5);
        Operator::new(h).unwrap()
    })
}

fn pure_state(dim: usize) -> impl Strategy<Value = PureState> {
    prop::collection::vec(-1.0..1.0f64, 2 * dim)
        .prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
        .prop_map(move |v| {
            PureState::normalized(CVector::from_iterator(dim, (0..dim).map(|i| c(v[2 * i], v[2 * i + 1])))).unwrap()
        })
}

fn populations() -> impl Strategy<Value = InitPopulations> {
    (0.05..1.0f64, 0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64).prop_map(|(a, b, d, e)| {
        let s = a + b + d + e;
        InitPopulations::new(a / s, b / s, d / s, 1.0 - (a + b + d) / s).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn propagator_matches_series(h in hermitian(4), t in 0.0..0.05f64) {
        let u = propagator(&h, t).unwrap();
        let oracle = expm_taylor(&h.matrix().map(|z| z * c(0.0, -2.0 * PI * t)));
        let d = (u.matrix() - oracle).iter().map(|z| z.norm()).fold(0.0, f64::max);
        prop_assert!(d < 1e-9, "max diff {d}");
        prop_assert!(u.is_unitary(1e-10));
    }

    #[test]
    fn propagator_group_law(h in hermitian(8), t1 in 0.0..0.02f64, t2 in 0.0..0.02f64) {
        let a = propagator(&h, t1 + t2).unwrap();
        let b = &propagator(&h, t1).unwrap() * &propagator(&h, t2).unwrap();
        prop_assert!(a.max_abs_diff(&b) < 1e-9);
    }

    #[test]
    fn axis_angle_recomposes(x in -1.0..1.0f64, y in -1.0..1.0f64, z in -1.0..1.0f64, ang in 0.01..(2.0 * PI - 0.01)) {
        prop_assume!(x * x + y * y + z * z > 1e-2);
        let u = su2([x, y, z], ang);
        let (n, a) = axis_angle(&u);
        let back = su2(n, a);
        let d = (&u - &back).iter().map(|w| w.norm()).fold(0.0, f64::max);
        let d_neg = (&u + &back).iter().map(|w| w.norm()).fold(0.0, f64::max);
        prop_assert!(d.min(d_neg) < 1e-10);
        prop_assert!((0.0..=2.0 * PI).contains(&a));
    }

    #[test]
    fn p4_does_not_change_charge_preserving_bound(p in populations(), p4 in 0.0..0.9f64) {
        let s = p.p1 + p.p2 + p.p3;
        let k = (1.0 - p4) / s;
        let q = InitPopulations::new(p.p1 * k, p.p2 * k, p.p3 * k, p4).unwrap();
        let a = fidelity_bounds(&p).unwrap().f_charge_preserving;
        let b = fidelity_bounds(&q).unwrap().f_charge_preserving;
        prop_assert!((a - b).abs() < 1e-12);
        let ca = chain_contrast(&p, ScenarioFlag::ChargePreserving).unwrap();
        let cb = chain_contrast(&q, ScenarioFlag::ChargePreserving).unwrap();
        prop_assert!((ca - cb).abs() < 1e-12);
    }

    #[test]
    fn no_memory_bound_monotone(p in populations(), d in 0.0..0.5f64) {
        let f0 = fidelity_bounds(&p).unwrap().f_no_memory;
        // Move population from p3 into p1.
        let m = d * p.p3;
        let q = InitPopulations::new(p.p1 + m, p.p2, p.p3 - m, p.p4).unwrap();
        prop_assert!(fidelity_bounds(&q).unwrap().f_no_memory >= f0 - 1e-15);
        prop_assert!((0.5..=1.0).contains(&f0));
    }

    #[test]
    fn fit_recovers_exact_decay(t in 0.2..4.0f64, floor in 0.2..0.5f64, amp in 0.1..0.6f64) {
        let pts: Vec<(f64, f64)> = (0..15)
            .map(|i| {
                let x = 0.3 * t * i as f64;
                (x, floor + amp * (-x / t).exp())
            })
            .collect();
        let f = fit_decay(&pts, FitModel::ExpWithFloor).unwrap();
        prop_assert!((f.t_est().unwrap() - t).abs() < 1e-6 * t);
        prop_assert!((f.floor().unwrap() - floor).abs() < 1e-6);
    }

    #[test]
    fn pulse_text_roundtrip(tau in 0.01..20.0f64, n in 1u32..40) {
        let s = decoupling_block(tau, n);
        let back = PulseSequence::from_text(&s.to_text()).unwrap();
        prop_assert_eq!(&back, &s);
        prop_assert!((s.total_duration_us() - 2.0 * n as f64 * tau).abs() < 1e-9 * tau * n as f64);
        prop_assert_eq!(s.pi_count() % 2, 0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn tomography_physical_and_close(psi in pure_state(4), seed in 0u64..1000) {
        let shots = 100_000u64;
        let rho = DensityMatrix::from_pure(&psi);
        let rec = mle_reconstruct(&simulate_all(&rho, shots, seed).unwrap()).unwrap();
        prop_assert!(rec.rho.min_eigenvalue() > -1e-10);
        prop_assert!((rec.rho.trace().re - 1.0).abs() < 1e-10);
        prop_assert!(is_hermitian(rec.rho.matrix()));
        let tol = 5.0 / (shots as f64).sqrt();
        for s in measurement_settings() {
            let o = Operator::new(
                s.projectors()
                    .iter()
                    .enumerate()
                    .fold(CMatrix::zeros(4, 4), |acc, (k, p)| acc + p.map(|z| z * parity(k))),
            )
            .unwrap();
            let a = rho.expectation(&o).re;
            let b = rec.rho.expectation(&o).re;
            prop_assert!((a - b).abs() < tol, "{}: {a} vs {b}", s.label());
        }
    }

    #[test]
    fn storage_output_is_a_state(psi in pure_state(4), t in 0.0..2.0f64, seed in 0u64..100) {
        let sys = NvSystem::default_register();
        let noises = NoiseSet {
            field: Some(StaticFieldNoise::new(0.15, sys.field.gamma_c13).unwrap()),
            rf: Some(RfNoiseSpec::default()),
            t1: true,
        };
        let rho = storage_channel(&DensityMatrix::from_pure(&psi), t, &sys, &noises, 8, seed).unwrap();
        prop_assert!((rho.trace().re - 1.0).abs() < 1e-9);
        prop_assert!(rho.min_eigenvalue() > -1e-9);
    }
}

fn parity(k: usize) -> f64 {
    if k.count_ones().is_multiple_of(2) {
        1.0
    } else {
        -1.0
    }
}

fn is_hermitian(m: &CMatrix) -> bool {
    (m - m.adjoint()).iter().all(|z| z.norm() < 1e-12)
}

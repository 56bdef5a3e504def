use nalgebra::DMatrix;
use proptest::prelude::*;

use pnsim::channel::apply_phase_noise_in_place;
use pnsim::covariance::CovarianceSet;
use pnsim::engine::{SweepResult, SweepRow, TrialMetrics};
use pnsim::estimators::{unwrap_phases, wrap_angle, DctBasis, Method, PhaseTracker};
use pnsim::oracle::{decompose_dense, max_relative_deviation, Oracle};
use pnsim::pn_model::{generate_trace, wiener_trace, Corner, PsdSpec};
use pnsim::ptrs::{contiguous_pattern, distributed_pattern, pilot_sequence, PtrsPattern};
use pnsim::waveform::{qam_decide, random_block, FrameConfig};
use pnsim::C64;

fn check_pattern(p: &PtrsPattern) -> Result<(), TestCaseError> {
    let m = p.sampling_matrix().dense();
    prop_assert_eq!(m.nrows(), p.k());
    prop_assert_eq!(m.ncols(), p.n_active());
    for r in 0..m.nrows() {
        prop_assert_eq!(m.row(r).sum(), 1.0);
    }
    for c in 0..m.ncols() {
        let s = m.column(c).sum();
        prop_assert!(s == 0.0 || s == 1.0);
    }
    prop_assert_eq!(&m * m.transpose(), DMatrix::<f64>::identity(p.k(), p.k()));
    prop_assert!(p.indices().windows(2).all(|w| w[0] < w[1]));
    prop_assert_eq!(p.data_count() + p.k(), p.n_active());
    Ok(())
}

fn small_frame(n_fft: usize, n_active: usize) -> FrameConfig {
    FrameConfig { n_fft, n_active, n_symbols: 1, mod_order: 4, ..FrameConfig::default() }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn distributed_patterns_are_valid(log_na in 3u32..11, log_l in 1u32..6) {
        let n_a = 1usize << log_na;
        let l = 1usize << log_l.min(log_na);
        let p = distributed_pattern(n_a, l).unwrap();
        prop_assert_eq!(p.k(), n_a / l);
        prop_assert_eq!(p.indices()[0], 0);
        check_pattern(&p)?;
    }

    #[test]
    fn contiguous_patterns_are_valid(n_a in 8usize..300, ng in 1usize..6, ns in 1usize..5) {
        prop_assume!(ng * ns <= n_a);
        let p = contiguous_pattern(n_a, ng, ns).unwrap();
        prop_assert_eq!(p.k(), ng * ns);
        check_pattern(&p)?;
    }

    #[test]
    fn bad_spacing_is_rejected(n_a in 2usize..500, l in 2usize..70) {
        prop_assume!(n_a % l != 0);
        prop_assert!(distributed_pattern(n_a, l).is_err());
    }

    #[test]
    fn phase_noise_keeps_magnitudes(seed in any::<u64>(), n in 2usize..200) {
        let x = random_block(n, 6, seed).unwrap();
        let phi = wiener_trace(0.3, n, 1e6, seed).unwrap();
        let mut y = x.clone();
        apply_phase_noise_in_place(&mut y, phi.samples()).unwrap();
        for (a, b) in x.iter().zip(&y) {
            prop_assert!((a.norm() - b.norm()).abs() < 1e-15);
        }
    }

    #[test]
    fn psd_traces_are_real_and_finite(seed in any::<u64>(), n in 2usize..300, psd0 in -120.0f64..-60.0) {
        let spec = PsdSpec::new(psd0, 30e9, vec![Corner::new(2e6, 2.0)], vec![Corner::new(0.2e6, 2.0)]).unwrap();
        let t = generate_trace(&spec, n, 1e9, seed).unwrap();
        prop_assert_eq!(t.len(), n);
        prop_assert!(t.samples().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn wrap_and_unwrap(xs in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        for &x in &xs {
            let w = wrap_angle(x);
            prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
            prop_assert!(((x - w) / std::f64::consts::TAU - ((x - w) / std::f64::consts::TAU).round()).abs() < 1e-9);
        }
        let wrapped: Vec<f64> = xs.iter().map(|&x| wrap_angle(x)).collect();
        let u = unwrap_phases(&wrapped);
        for w in u.windows(2) {
            prop_assert!((w[1] - w[0]).abs() <= std::f64::consts::PI + 1e-12);
        }
    }

    #[test]
    fn decisions_are_always_valid(re in -1e6f64..1e6, im in -1e6f64..1e6, order in prop::sample::select(vec![2u32, 4, 6, 8])) {
        prop_assert!(qam_decide(C64::new(re, im), order) < 1 << order);
        prop_assert!(qam_decide(C64::new(f64::NAN, im), order) < 1 << order);
    }

    #[test]
    fn dct_columns_are_orthonormal(log_na in 3u32..9, log_l in 1u32..4, n_d in 1usize..6) {
        let n_a = 1usize << log_na;
        let p = distributed_pattern(n_a, 1 << log_l).unwrap();
        prop_assume!(n_d <= p.k());
        let b = DctBasis::new(n_a, p.indices(), n_d).unwrap();
        let g = b.psi_na.transpose() * &b.psi_na;
        prop_assert!((g - DMatrix::<f64>::identity(n_d, n_d)).amax() < 1e-12);
        prop_assert!(b.condition().is_finite());
    }

    #[test]
    fn dct_rejects_too_many_terms(n_a in 8usize..64, k in 1usize..8, extra in 1usize..4) {
        let chi: Vec<usize> = (0..k).map(|i| i * (n_a / 8)).collect();
        prop_assert!(DctBasis::new(n_a, &chi, k + extra).is_err());
    }

    #[test]
    fn fast_oracle_matches_dense(seed in any::<u64>(), var in 0.0f64..0.2) {
        let cfg = small_frame(16, 8);
        let phi = wiener_trace(var, 16, 1e6, seed).unwrap();
        let s = random_block(8, 4, seed ^ 1).unwrap();
        let dense = decompose_dense(phi.samples(), &s, &cfg).unwrap();
        let fast = Oracle::new(&cfg).unwrap().decompose(phi.samples(), &s).unwrap();
        prop_assert!(max_relative_deviation(&fast.alpha, &dense.alpha) < 1e-10);
        prop_assert!(max_relative_deviation(&fast.reconstruct(&s), &dense.reconstruct(&s)) < 1e-10);
        // unitary chain: energy is preserved
        let e_in: f64 = s.iter().map(|v| v.norm_sqr()).sum();
        let e_alpha: f64 = dense.alpha.iter().map(|a| a.norm_sqr()).sum();
        prop_assert!(e_alpha <= 8.0 + 1e-9 && e_in > 0.0);
    }

    #[test]
    fn estimates_are_finite(seed in any::<u64>(), theta in -3.0f64..3.0, sigma2 in 1e-4f64..1.0) {
        let p = distributed_pattern(32, 4).unwrap();
        let cov = CovarianceSet::common_phase(32, sigma2).unwrap();
        let pilots = pilot_sequence(p.k(), seed).unwrap();
        let mut r = random_block(32, 4, seed).unwrap();
        for (&i, &v) in p.indices().iter().zip(&pilots) {
            r[i] = v;
        }
        let rot = C64::from_polar(1.0, theta);
        r.iter_mut().for_each(|v| *v *= rot);
        for m in [Method::Cpee, Method::Ci, Method::Li, Method::Dct { n_d: 3, phi_av: Default::default() }, Method::If] {
            let est = PhaseTracker::new(m, &p, Some(&cov)).unwrap().estimate(&r, &pilots).unwrap();
            prop_assert!(est.phi_hat.iter().all(|v| v.is_finite()));
            // a common rotation is recovered by every method without noise
            for v in &est.phi_hat {
                prop_assert!((C64::from_polar(1.0, *v) - rot).norm() < 1e-8, "{}", m.label());
            }
        }
    }

    #[test]
    fn covariance_csv_round_trips(n in 1usize..12, sigma2 in 0.0f64..2.0) {
        let set = CovarianceSet::common_phase(n, sigma2).unwrap();
        let back = CovarianceSet::from_csv(&set.to_csv()).unwrap();
        prop_assert_eq!(back.r_phi, set.r_phi);
        prop_assert_eq!(back.r_w, set.r_w);
        prop_assert_eq!(back.meta.sigma2, sigma2);
    }

    #[test]
    fn sweep_csv_round_trips(ber in 0.0f64..0.5, bits in 1u64..10_000_000, snr in -10.0f64..40.0, seed in any::<u64>()) {
        let errors = (ber * bits as f64).floor() as u64;
        let metrics = TrialMetrics {
            ber: errors as f64 / bits as f64,
            ser: 0.5,
            phase_mse: ber / 7.0,
            evm: 0.1,
            bit_errors: errors,
            n_bits: bits,
            symbol_errors: errors / 2,
            n_symbols: bits / 4,
            n_frames: 3,
        };
        let row = SweepRow { estimator: "li".into(), pattern: "L8".into(), k: 4, snr_db: snr, metrics, seed, runtime_s: 0.0 };
        let res = SweepResult { rows: vec![row] };
        let text = res.to_csv();
        let back = SweepResult::from_csv(&text).unwrap();
        prop_assert_eq!(back.to_csv(), text);
        prop_assert!(back.rows[0].metrics.ber <= 1.0);
    }
}

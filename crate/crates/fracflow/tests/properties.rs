use proptest::prelude::*;
use rustfft::num_complex::Complex64;

use fracflow::diagnostics::{regularity_window, EnergyLedger};
use fracflow::fields::{
    drift_apply, frac_laplacian, mollify, random_bandlimited, transport_term, CustomSymbol, DriftSpec, Grid, Mollifier,
    SpectralField, SymbolEntry,
};
use fracflow::fraccalc::{l1_weights, ml_eval, FracOrder, MLParams, SampledPath};
use fracflow::kernels::{Family, KernelMultiplier};
use fracflow::solver_march::{alikhanov_check, march, MarchConfig};
use fracflow::solver_mild::{fixed_point_report, picard_solve, PicardConfig};

fn sqg_grid() -> Grid {
    Grid::new(2, 16, 2.0 * std::f64::consts::PI).unwrap()
}

fn max_abs(f: &SpectralField) -> f64 {
    f.coeffs.iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn max_gap(a: &SpectralField, b: &SpectralField) -> f64 {
    a.coeffs
        .iter()
        .zip(&b.coeffs)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn l1_weights_decrease_from_one(alpha in 0.001f64..0.999, count in 1usize..10_000) {
        let b = l1_weights(alpha, count);
        prop_assert_eq!(b[0], 1.0);
        prop_assert!(b.windows(2).all(|w| w[1] < w[0]));
        prop_assert!(*b.last().unwrap() > 0.0);
    }

    #[test]
    fn relaxation_function_is_monotone_in_unit_interval(alpha in 0.05f64..0.999) {
        let p = MLParams::new(alpha, 1.0).unwrap();
        let mut prev = 1.0;
        for i in 0..100 {
            let x = 50.0 * i as f64 / 99.0;
            let v = ml_eval(p, -x).unwrap();
            prop_assert!(v > 0.0 && v <= 1.0, "E({}) = {}", -x, v);
            prop_assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    #[test]
    fn order_rejects_closed_endpoints(alpha in prop_oneof![Just(0.0), Just(1.0), -1.0f64..0.0, 1.0f64..3.0]) {
        prop_assert!(FracOrder::new(alpha, 1.0, 0.1, 0.0).is_err());
        prop_assert!(FracOrder::new(0.5, 2.0 * alpha.abs() + 2.0, 0.1, 0.0).is_err());
    }

    #[test]
    fn physical_round_trip(seed in any::<u64>(), dim in 1usize..=3) {
        let n = if dim == 3 { 8 } else { 16 };
        let g = Grid::new(dim, n, 1.0).unwrap();
        let f = random_bandlimited(g, seed, None, 1.0).unwrap();
        let phys = f.to_physical();
        let back = SpectralField::from_physical(g, &phys).unwrap().to_physical();
        let scale = phys.iter().map(|v| v.abs()).fold(0.0, f64::max);
        let err = phys.iter().zip(&back).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-12 * scale);
        // Plancherel with the grid normalization
        let l2_phys = phys.iter().map(|v| v * v).sum::<f64>() * g.cell_volume();
        prop_assert!((l2_phys - f.l2_norm().powi(2)).abs() <= 1e-12 * l2_phys);
    }

    #[test]
    fn operations_keep_real_fields_real(seed in any::<u64>(), moll_eps in 0.0f64..0.3, s in 0.1f64..2.0) {
        let g = sqg_grid();
        let a = random_bandlimited(g, seed, None, 1.0).unwrap();
        let b = random_bandlimited(g, seed ^ 0x5555, None, 1.0).unwrap();
        let moll = Mollifier::new(moll_eps).unwrap();
        for u in drift_apply(&DriftSpec::Sqg, &a).unwrap() {
            prop_assert!(u.hermitian_defect() <= 1e-14 * max_abs(&u).max(1.0));
        }
        let t = transport_term(&DriftSpec::Sqg, &moll, &a, &b).unwrap();
        prop_assert!(t.hermitian_defect() <= 1e-13 * max_abs(&t).max(1.0));
        prop_assert!(mollify(&moll, &a).hermitian_defect() <= 1e-14);
        let lap = frac_laplacian(&a, s).unwrap();
        prop_assert!(lap.hermitian_defect() <= 1e-13 * max_abs(&lap).max(1.0));
        prop_assert_eq!(lap.coeffs[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn drift_is_linear_and_divergence_free(seed in any::<u64>(), lambda in -3.0f64..3.0) {
        let g = sqg_grid();
        let a = random_bandlimited(g, seed, None, 1.0).unwrap();
        let b = random_bandlimited(g, seed.wrapping_add(1), None, 1.0).unwrap();
        let sum = drift_apply(&DriftSpec::Sqg, &a.add(&b.scale(lambda))).unwrap();
        let (ua, ub) = (drift_apply(&DriftSpec::Sqg, &a).unwrap(), drift_apply(&DriftSpec::Sqg, &b).unwrap());
        for c in 0..2 {
            let lin = ua[c].add(&ub[c].scale(lambda));
            prop_assert!(max_gap(&sum[c], &lin) <= 1e-14 * max_abs(&lin).max(1.0));
        }
        let scale = (0..g.len()).map(|i| ua[0].coeffs[i].norm().max(ua[1].coeffs[i].norm())).fold(0.0, f64::max);
        for i in 0..g.len() {
            let k = g.wavevector(i);
            let div = ua[0].coeffs[i] * k[0] + ua[1].coeffs[i] * k[1];
            prop_assert!(div.norm() <= 1e-13 * scale);
        }
    }

    #[test]
    fn transport_term_is_bilinear(seed in any::<u64>(), s in -2.0f64..2.0, moll_eps in 0.0f64..0.2) {
        let g = sqg_grid();
        let moll = Mollifier::new(moll_eps).unwrap();
        let f = |k: u64| random_bandlimited(g, seed.wrapping_add(k), None, 1.0).unwrap();
        let (a, a2, b, b2) = (f(0), f(1), f(2), f(3));
        let bt = |x: &SpectralField, y: &SpectralField| transport_term(&DriftSpec::Sqg, &moll, x, y).unwrap();
        let left = bt(&a.add(&a2.scale(s)), &b);
        let left_lin = bt(&a, &b).add(&bt(&a2, &b).scale(s));
        let right = bt(&a, &b.add(&b2.scale(s)));
        let right_lin = bt(&a, &b).add(&bt(&a, &b2).scale(s));
        let scale = max_abs(&left_lin).max(max_abs(&right_lin)).max(1.0);
        prop_assert!(max_gap(&left, &left_lin) <= 1e-12 * scale);
        prop_assert!(max_gap(&right, &right_lin) <= 1e-12 * scale);
    }

    #[test]
    fn mollifier_profile_is_a_unit_nonincreasing_bump(eps in 0.0f64..2.0, k2 in 0.0f64..1e4, dk in 0.0f64..100.0) {
        let m = Mollifier::new(eps).unwrap();
        prop_assert_eq!(m.profile_hat(0.0), 1.0);
        let (v, w) = (m.profile_hat(k2), m.profile_hat(k2 + dk));
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert!(w <= v);
    }

    #[test]
    fn rotated_symbols_pass_validation_and_stay_divergence_free(turn in -1.0f64..1.0, scale in 0.1f64..3.0) {
        // m(ξ) = c·ξ^⊥/|ξ| for a handful of directions
        let dirs = [[1i64, 0], [0, 1], [1, 1], [1, -1], [2, 1], [1, 2]];
        let entries: Vec<SymbolEntry> = dirs
            .iter()
            .map(|d| {
                let r = ((d[0] * d[0] + d[1] * d[1]) as f64).sqrt();
                let c = Complex64::new(0.0, scale) * Complex64::from_polar(1.0, std::f64::consts::PI * turn);
                let m0 = c * (-(d[1] as f64) / r);
                let m1 = c * (d[0] as f64 / r);
                SymbolEntry { k: d.to_vec(), m: vec![[m0.re, m0.im], [m1.re, m1.im]] }
            })
            .collect();
        let sym = CustomSymbol::new(2, &entries).unwrap();
        let spec = DriftSpec::Custom(sym);
        let g = sqg_grid();
        prop_assert!(spec.bound() <= scale * (1.0 + 1e-12));
        for i in 0..g.len() {
            let k = g.wavevector(i);
            let m = spec.symbol(&g, i);
            prop_assert!((m[0] * k[0] + m[1] * k[1]).norm() <= 1e-13 * scale * (k[0].abs() + k[1].abs()).max(1.0));
        }
        // a tilted symbol is rejected
        let mut bad = entries.clone();
        bad[2].m[0][1] += 0.5;
        prop_assert!(CustomSymbol::new(2, &bad).is_err());
    }

    #[test]
    fn relaxation_multiplier_lies_in_unit_interval(
        alpha in 0.05f64..0.99,
        gamma in 0.1f64..1.99,
        eps in 0.01f64..2.0,
        tau in 1e-4f64..10.0,
        kmag in 0.0f64..50.0,
    ) {
        for fam in [Family::Z, Family::ZTilde] {
            let k = KernelMultiplier::new(fam, alpha, eps, gamma).unwrap();
            let z = k.hat(tau, kmag).unwrap();
            prop_assert!(z > 0.0 && z <= 1.0, "{:?}: {}", fam, z);
        }
        for fam in [Family::Y, Family::YTilde] {
            let k = KernelMultiplier::new(fam, alpha, eps, gamma).unwrap();
            prop_assert!(k.hat(tau, kmag).unwrap() > 0.0);
        }
    }

    #[test]
    fn multipliers_are_self_similar(alpha in 0.1f64..0.95, gamma in 0.3f64..1.9, tau in 1e-3f64..5.0, kmag in 0.0f64..20.0) {
        let z = KernelMultiplier::new(Family::Z, alpha, 1.0, gamma).unwrap();
        let a = z.hat(tau, kmag).unwrap();
        let b = z.hat(1.0, tau.powf(alpha / 2.0) * kmag).unwrap();
        prop_assert!((a - b).abs() <= 1e-10);
        let zt = KernelMultiplier::new(Family::ZTilde, alpha, 1.0, gamma).unwrap();
        let a = zt.hat(tau, kmag).unwrap();
        let b = zt.hat(1.0, tau.powf(alpha / gamma) * kmag).unwrap();
        prop_assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn fixed_point_report_is_consistent(
        alpha in 0.05f64..0.99,
        gamma in 0.05f64..1.99,
        eps in 0.01f64..10.0,
        norm in 0.0f64..5.0,
        horizon in 1e-6f64..10.0,
        c_cal in 0.1f64..3.0,
    ) {
        let order = FracOrder::new(alpha, gamma, eps, 0.0).unwrap();
        let r = fixed_point_report(&order, norm, horizon, c_cal, 1.0).unwrap();
        prop_assert!(r.consistent());
        if let Some(t) = r.t_admissible {
            let at = fixed_point_report(&order, norm, 0.999 * t, c_cal, 1.0).unwrap();
            prop_assert!(at.all_hold());
        }
    }

    #[test]
    fn regularity_exponent_lies_between_one_and_two(gamma in 0.01f64..1.99, frac in 0.01f64..0.99, alpha in 0.05f64..0.99) {
        let sigma = frac * gamma;
        let r = regularity_window(alpha, gamma, sigma).unwrap();
        prop_assert!(r.p_exponent > 1.0 && r.p_exponent < 2.0);
        // the equivalent form exceeds one exactly when γ clears its lower bound
        if alpha > 1.0 / 3.0 && (gamma - r.gamma_lower_bound).abs() > 1e-9 {
            prop_assert_eq!(r.equivalent_form > 1.0, gamma > r.gamma_lower_bound);
        }
    }

    #[test]
    fn alikhanov_inequality_on_random_paths(
        alpha in 0.05f64..0.99,
        values in proptest::collection::vec(-10.0f64..10.0, 2..200),
    ) {
        let path = SampledPath::new(0.01, values).unwrap();
        prop_assert!(alikhanov_check(&path, alpha).unwrap().passes());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn picard_keeps_trajectories_real(seed in any::<u64>(), alpha in 0.5f64..0.95) {
        let g = sqg_grid();
        let theta0 = random_bandlimited(g, seed, Some(3), 0.5).unwrap();
        let order = FracOrder::new(alpha, 1.5, 0.5, 0.1).unwrap();
        let cfg = PicardConfig::new(0.05, 0.005, 60, 1e-12).unwrap();
        let traj = picard_solve(&theta0, &order, &DriftSpec::Sqg, &Mollifier::new(0.1).unwrap(), &cfg).unwrap();
        for s in &traj.states {
            prop_assert!(s.hermitian_defect() <= 1e-13);
        }
    }

    #[test]
    fn march_does_not_grow_energy_and_ledger_dissipation_is_nonnegative(seed in any::<u64>(), alpha in 0.3f64..0.95) {
        let g = sqg_grid();
        let theta0 = random_bandlimited(g, seed, Some(4), 1.0).unwrap();
        let order = FracOrder::new(alpha, 1.3, 0.05, 0.05).unwrap();
        let moll = Mollifier::new(0.05).unwrap();
        // the plain scheme decreases step by step
        let mut plain = MarchConfig::new(0.2, 0.01);
        plain.start_correction = false;
        let state = march(&theta0, &order, &DriftSpec::Sqg, &moll, &plain).unwrap();
        let norms: Vec<f64> = state.history.iter().map(|s| s.l2_norm()).collect();
        prop_assert!(norms.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-10)));
        // the corrected start undershoots stiff modes, so only the bound by θ_0 survives
        let state = march(&theta0, &order, &DriftSpec::Sqg, &moll, &MarchConfig::new(0.2, 0.01)).unwrap();
        prop_assert!(state.history.iter().all(|s| s.l2_norm() <= norms[0] * (1.0 + 1e-10)));
        let led = EnergyLedger::from_states(&order, 0.01, &state.history).unwrap();
        prop_assert!(led.l2_sq.iter().chain(&led.hg_sq).all(|v| *v >= 0.0));
        // with a singular kernel D(t) decays once the dissipation has spent itself,
        // so only its sign is invariant
        prop_assert!(led.d_am1.iter().chain(&led.d_ma).all(|d| *d >= 0.0));
    }
}

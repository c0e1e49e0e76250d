use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use fkneq_core::equilibrium::*;
use fkneq_core::lattice::gaussian_dos;
use fkneq_core::propagators::fermi_beta;
use fkneq_core::Error;

/// Composite Gauss-Legendre rule on `[a, b]` split into `pieces` panels.
fn integrate(a: f64, b: f64, pieces: usize, f: impl Fn(f64) -> f64) -> f64 {
    let gl = GaussLegendre::new(NonZeroUsize::new(20).unwrap());
    let h = (b - a) / pieces as f64;
    (0..pieces).map(|k| gl.integrate(a + k as f64 * h, a + (k + 1) as f64 * h, &f)).sum()
}

fn solve(u: f64) -> EqSolution {
    eq_scf(&EqParams::half_filling(u), &EqOptions::default()).unwrap()
}

#[test]
fn hilbert_transform_examples() {
    let h = hilbert_gaussian(C64::new(0.0, 1e-14)).unwrap();
    assert!((h - C64::new(0.0, -std::f64::consts::PI.sqrt())).norm() < 1e-10);

    // far away the band looks like a point: 1/z + <e^2>/z^3
    let z = C64::new(0.0, 100.0);
    let h = hilbert_gaussian(z).unwrap();
    assert!((h - z.inv()).norm() < 1e-6);
    assert!((h - z.inv() - 0.5 * z.inv().powi(3)).norm() < 1e-9);

    let z = C64::new(1.0, 0.5);
    let re = integrate(-9.0, 9.0, 90, |e| (gaussian_dos(e) / (z - e)).re);
    let im = integrate(-9.0, 9.0, 90, |e| (gaussian_dos(e) / (z - e)).im);
    assert!((hilbert_gaussian(z).unwrap() - C64::new(re, im)).norm() < 1e-10);

    assert!(matches!(hilbert_gaussian(C64::new(0.3, -1.0)), Err(Error::InvalidParameter(_))));
}

#[test]
fn hilbert_boundary_value_is_the_density() {
    for &x in &[-2.0, -0.7, 0.0, 0.4, 1.5] {
        let h = hilbert_gaussian(C64::new(x, 1e-13)).unwrap();
        assert!((h.im + std::f64::consts::PI * gaussian_dos(x)).abs() < 1e-10);
    }
}

#[test]
fn noninteracting_solution_is_the_bare_band() {
    let s = solve(0.0);
    assert!((s.dos_near(0.0) - 1.0 / std::f64::consts::PI.sqrt()).abs() < 1e-5);
    assert!(s.sigma_r.iter().all(|x| x.norm() == 0.0));
    assert!((s.spectral_weight() - 1.0).abs() < 1e-10);
    for (&w, &a) in s.omega.iter().zip(&s.dos) {
        assert!((a - gaussian_dos(w)).abs() < 1e-9);
    }
}

#[test]
fn noninteracting_energy_matches_quadrature() {
    let s = solve(0.0);
    for &beta in &[0.5, 2.0, 10.0] {
        let want = integrate(-9.0, 9.0, 180, |w| w * fermi_beta(w, beta) * gaussian_dos(w));
        assert!((s.energy(beta) - want).abs() < 1e-10, "beta {beta}");
    }
    assert!((s.ground_energy() + 0.5 / std::f64::consts::PI.sqrt()).abs() < 1e-5);
    assert!(s.plateau_energy().abs() < 1e-12);
}

#[test]
fn metal_to_insulator_panels() {
    let metal = solve(0.5);
    let insulator = solve(2.0);
    assert!(metal.dos_near(0.0) > 0.4);
    assert!(insulator.dos_near(0.0) < 1e-3);
    for s in [&metal, &insulator] {
        assert!((s.spectral_weight() - 1.0).abs() < 1e-3);
        assert!(s.dos.iter().all(|&a| a >= 0.0));
        assert!(s.sigma_r.iter().all(|x| x.im <= 0.0));
        assert!(s.dos_asymmetry() < 1e-10);
        let (odd, even) = s.sigma_parity_violation();
        assert!(odd < 1e-8 && even < 1e-8);
    }
    // the Mott-Hubbard peaks of the insulator sit near +-U/2
    let peak = insulator.omega.iter().zip(&insulator.dos).filter(|(w, _)| **w > 0.0).max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    assert!((peak.0 - 1.0).abs() < 0.3);
}

#[test]
fn pointwise_solver_agrees_with_the_grid() {
    let p = EqParams::half_filling(1.0);
    let opts = EqOptions::default();
    let s = eq_scf(&p, &opts).unwrap();
    let picks = [100, 1500, 2048, 3000];
    let w: Vec<f64> = picks.iter().map(|&k| s.omega[k]).collect();
    let at = eq_sigma_at(&p, &w, &opts).unwrap();
    for (k, (sig, g)) in picks.iter().zip(at) {
        assert!((sig - s.sigma_r[*k]).norm() < 1e-12 && (g - s.g_r[*k]).norm() < 1e-12);
    }
}

#[test]
fn dyson_fixed_point_holds() {
    // Sigma = U^2/4 G_0 with G_0^-1 = G^-1 + Sigma, at half filling
    let s = solve(1.5);
    for k in (0..s.omega.len()).step_by(97) {
        let weiss_inv = s.g_r[k].inv() + s.sigma_r[k];
        assert!((s.sigma_r[k] - 0.5625 / weiss_inv).norm() < 1e-9 * s.sigma_r[k].norm().max(1.0));
    }
}

#[test]
fn narrow_band_reaches_the_atomic_limit() {
    // two levels at +-U/2, each with half the weight: E(beta) = -(U/4) tanh(beta U / 4)
    let p = EqParams { band_scale: 0.05, ..EqParams::half_filling(2.0) };
    let s = eq_scf(&p, &EqOptions::default()).unwrap();
    for &beta in &[0.3f64, 1.0, 3.0] {
        let want = -0.5 * (0.5 * beta).tanh();
        assert!((s.energy(beta) - want).abs() < 5e-3, "beta {beta}: {} vs {want}", s.energy(beta));
    }
    assert!((s.ground_energy() + 0.5).abs() < 5e-3);
    assert!(s.plateau_energy().abs() < 1e-10);
}

#[test]
fn calibration_round_trips() {
    let s = solve(1.0);
    let temps = geometric_temperatures(0.02, 50.0, 200);
    assert_eq!(temps.len(), 200);
    assert!((temps[0] - 0.02).abs() < 1e-15 && (temps[199] - 50.0).abs() < 1e-10);
    let table = energy_vs_temperature(&s, &temps).unwrap();

    // nodes invert exactly
    for k in (0..200).step_by(13) {
        match temperature_from_energy(&table, table.energies[k]).unwrap() {
            TemperatureEstimate::Finite(t) => assert_eq!(t, temps[k]),
            other => panic!("{other:?}"),
        }
    }
    // between nodes the forward and inverse interpolants agree to interpolation accuracy
    for &t in &[0.037, 0.25, 1.3, 7.7] {
        let e = table.energy_at(t);
        let back = temperature_from_energy(&table, e).unwrap().beta();
        assert!((back * t - 1.0).abs() < 1e-4, "T {t}");
        assert!((e - s.energy(1.0 / t)).abs() < 1e-5);
        let exact = temperature_from_energy(&table, s.energy(1.0 / t)).unwrap().beta();
        assert!((exact * t - 1.0).abs() < 1e-4);
    }
    assert_eq!(temperature_from_energy(&table, table.plateau + 1e-3).unwrap(), TemperatureEstimate::Saturated);
    assert_eq!(temperature_from_energy(&table, table.plateau).unwrap().beta(), 0.0);
    assert!(matches!(temperature_from_energy(&table, table.ground - 0.1), Err(Error::Calibration(_))));
    assert!(temperature_from_energy(&table, f64::NAN).is_err());
}

#[test]
fn calibration_rejects_bad_temperature_lists() {
    let s = solve(0.5);
    assert!(matches!(energy_vs_temperature(&s, &[0.5, 0.1]), Err(Error::Calibration(_))));
    assert!(energy_vs_temperature(&s, &[]).is_err());
    assert!(energy_vs_temperature(&s, &[0.0, 1.0]).is_err());
}

#[test]
fn steady_dressing_examples() {
    let g = [C64::new(0.0, -1.0), C64::new(0.3, -0.2)];
    assert_eq!(fk_dress_steady(&g, 0.5, 0.0).unwrap(), g.to_vec());
    assert_eq!(fk_dress_steady(&g, 0.0, 2.0).unwrap(), g.to_vec());
    let d = fk_dress_steady(&g[..1], 0.5, 1.0).unwrap();
    assert!((d[0] - C64::new(-0.25, -0.75)).norm() < 1e-15);
    assert!(fk_dress_steady(&[C64::new(0.0, 0.0)], 0.5, 1.0).is_err());
    assert!(matches!(fk_dress_steady(&[C64::new(1.0, 0.0)], 0.5, 1.0), Err(Error::Singular { .. })));
}

#[test]
fn invalid_parameters_are_rejected() {
    let opts = EqOptions::default();
    assert!(eq_scf(&EqParams { w1: 1.5, ..EqParams::half_filling(1.0) }, &opts).is_err());
    assert!(eq_scf(&EqParams { band_scale: 0.0, ..EqParams::half_filling(1.0) }, &opts).is_err());
    assert!(omega_grid(1, 1.0).is_err());
    assert!(!omega_grid(8, 1.0).unwrap().contains(&0.0));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hilbert_is_odd_under_reflection(x in -6.0f64..6.0, y in 1e-3f64..10.0) {
        // H(-conj z) = -conj H(z) for an even density
        let a = hilbert_gaussian(C64::new(x, y)).unwrap();
        let b = hilbert_gaussian(C64::new(-x, y)).unwrap();
        prop_assert!((a + b.conj()).norm() < 1e-12 * a.norm().max(1.0));
        prop_assert!(a.im < 0.0);
    }

    #[test]
    fn pchip_stays_within_bracketing_nodes(at in 0.0f64..10.0) {
        let x = [0.0, 0.5, 2.0, 3.0, 7.0, 10.0];
        let y = [-1.0, -0.9, -0.2, 0.0, 0.01, 0.5];
        let v = pchip(&x, &y, at);
        let k = x.partition_point(|&p| p <= at).clamp(1, x.len() - 1);
        prop_assert!(v >= y[k - 1] - 1e-15 && v <= y[k] + 1e-15);
    }
}

use std::sync::Arc;

use faer::Mat;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use fkneq_core::contour::{build_contour, extract_components, ComponentSet};
use fkneq_core::exec::Parallelism;
use fkneq_core::lattice::{FieldProtocol, QuadratureSpec};
use fkneq_core::propagators::{bare_local, ThermalState};
use fkneq_core::wigner::*;

const I: C64 = C64::new(0.0, 1.0);

fn plain() -> SpectrumSpec {
    SpectrumSpec { window: Window::None, pad: 8, max_rel: None }
}

/// Equilibrium local propagator of the free Gaussian band.
fn free_band(t_max: f64, temperature: f64, mu: f64, dt: f64) -> ComponentSet {
    let g = Arc::new(build_contour(0.0, t_max, 1.0 / temperature, dt, 8).unwrap());
    let ts = ThermalState::new(temperature, mu).unwrap();
    let q = QuadratureSpec::Midpoint { n_eps: 200, eps_max: 6.0, order_bar: 2 }.build().unwrap().collapse_velocity();
    extract_components(&bare_local(&g, &q, &FieldProtocol::off(), &ts, Parallelism::Sequential).unwrap())
}

#[test]
fn damped_pole_transforms_to_a_lorentzian() {
    // R(t) = -i e^{-i e0 t - g t} for t >= 0  ->  R(omega) = 1 / (omega - e0 + i g)
    let (e0, gam, dt) = (0.7, 0.3, 0.025);
    let n = 1601;
    let m = Mat::from_fn(n, n, |i, j| {
        if i >= j {
            let t = (i - j) as f64 * dt;
            -I * C64::from_polar((-gam * t).exp(), -e0 * t)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    let w = to_wigner(m.as_ref(), 0.0, dt, &FieldProtocol::off());
    let sp = wigner_to_frequency(&w, 20.0, Sidedness::Retarded, &plain()).unwrap();
    let peak = sp.band(3.0).max_by(|&a, &b| (-sp.values[a].im).total_cmp(&(-sp.values[b].im))).unwrap();
    assert!((sp.omega[peak] - e0).abs() <= sp.step());
    for k in sp.band(3.0).step_by(37) {
        let want = (C64::new(sp.omega[k] - e0, gam)).inv();
        assert!((sp.values[k] - want).norm() < 5e-3, "omega {}", sp.omega[k]);
    }
    // sum rule: int -Im R d omega / pi = 1
    let weight: f64 = sp.values.iter().map(|v| -v.im).sum::<f64>() * sp.step() / std::f64::consts::PI;
    assert!((weight - 1.0).abs() < 1e-2);
}

#[test]
fn equilibrium_spectra_satisfy_fluctuation_dissipation() {
    let c = free_band(16.0, 1.0, 0.0, 0.05);
    let r = to_wigner(c.retarded.as_ref(), 0.0, 0.05, &FieldProtocol::off());
    let l = to_wigner(c.lesser.as_ref(), 0.0, 0.05, &FieldProtocol::off());
    let spec = SpectrumSpec::default();
    let rs = wigner_to_frequency(&r, 8.0, Sidedness::Retarded, &spec).unwrap();
    let ls = wigner_to_frequency(&l, 8.0, Sidedness::TwoSided, &spec).unwrap();
    // the lesser function is skew-Hermitian, so its spectrum is imaginary
    assert!(ls.values.iter().all(|v| v.re.abs() < 1e-6));
    let ok = check_fdt(&rs, &ls, 1.0, 3.0).unwrap();
    assert!(ok.linf < 1e-3 && ok.l2 < 1e-3, "{ok:?}");
    // the wrong temperature is seen
    let bad = check_fdt(&rs, &ls, 4.0, 3.0).unwrap();
    assert!(bad.linf > 5e-2, "{bad:?}");
    assert!(check_fdt(&rs, &ls, -1.0, 3.0).is_err());
}

#[test]
fn half_relation_needs_particle_hole_symmetry() {
    // with an even density and mu = 0, Im G^< = -Im G^R / 2 at every temperature
    for t in [1e6, 0.5] {
        let c = free_band(8.0, t, 0.0, 0.1);
        let r = to_wigner(c.retarded.as_ref(), 0.0, 0.1, &FieldProtocol::off());
        let l = to_wigner(c.lesser.as_ref(), 0.0, 0.1, &FieldProtocol::off());
        assert!(half_relation_deviation(l.slice_at(4.0).unwrap(), r.slice_at(4.0).unwrap()).unwrap() < 1e-6);
    }
    // away from half filling it holds only in the infinite-temperature limit
    let hot = free_band(8.0, 1e6, 0.5, 0.1);
    let r = to_wigner(hot.retarded.as_ref(), 0.0, 0.1, &FieldProtocol::off());
    let l = to_wigner(hot.lesser.as_ref(), 0.0, 0.1, &FieldProtocol::off());
    assert!(half_relation_deviation(l.slice_at(4.0).unwrap(), r.slice_at(4.0).unwrap()).unwrap() < 1e-5);
    let cold = free_band(8.0, 0.5, 0.5, 0.1);
    let r = to_wigner(cold.retarded.as_ref(), 0.0, 0.1, &FieldProtocol::off());
    let l = to_wigner(cold.lesser.as_ref(), 0.0, 0.1, &FieldProtocol::off());
    assert!(half_relation_deviation(l.slice_at(4.0).unwrap(), r.slice_at(4.0).unwrap()).unwrap() > 1e-2);
    // slices of different average time are refused
    assert!(half_relation_deviation(l.slice_at(4.0).unwrap(), r.slice_at(3.0).unwrap()).is_err());
}

#[test]
fn inverse_transform_recovers_the_samples() {
    let dt = 0.05;
    let n = 201;
    let f = |t: f64| C64::new((-0.2 * t * t).exp(), 0.3 * t * (-0.1 * t * t).exp());
    let m = Mat::from_fn(n, n, |i, j| f((i as f64 - j as f64) * dt));
    let w = to_wigner(m.as_ref(), 0.0, dt, &FieldProtocol::off());
    let sp = wigner_to_frequency(&w, 5.0, Sidedness::TwoSided, &plain()).unwrap();
    let count = 100;
    let back = inverse_on_steps(&sp, dt, count).unwrap();
    assert_eq!(back.len(), 2 * count - 1);
    // even steps are the sampled points; odd ones are band-limited interpolation
    for (k, v) in back.iter().enumerate() {
        let t = (k as f64 - (count - 1) as f64) * dt;
        let tol = if (k + count - 1) % 2 == 0 { 1e-12 } else { 1e-6 };
        assert!((v - f(t)).norm() < tol, "t = {t}");
    }
    assert!(inverse_on_steps(&sp, 2.0 * dt, count).is_err());
    assert!(inverse_on_steps(&sp, dt, sp.omega.len() + 1).is_err());
}

#[test]
fn one_and_two_sided_spectra_share_a_grid() {
    let m = Mat::from_fn(81, 81, |i, j| C64::new((i as f64 - j as f64).cos(), 0.0));
    let w = to_wigner(m.as_ref(), 0.0, 0.1, &FieldProtocol::off());
    let spec = SpectrumSpec { max_rel: Some(3.0), ..SpectrumSpec::default() };
    let a = wigner_to_frequency(&w, 4.0, Sidedness::Retarded, &spec).unwrap();
    let b = wigner_to_frequency(&w, 4.0, Sidedness::TwoSided, &spec).unwrap();
    assert_eq!(a.omega, b.omega);
    assert_eq!(sample_span(3.0, 0.1), 32);
    assert!(wigner_to_frequency(&w, 4.0, Sidedness::TwoSided, &SpectrumSpec { pad: 0, ..spec }).is_err());
    assert!(wigner_to_frequency(&w, 40.0, Sidedness::TwoSided, &spec).is_err());
}

#[test]
fn window_shapes() {
    let w = Window::CosineTaper { fraction: 0.2 };
    assert_eq!(w.factor(0.0, 10.0), 1.0);
    assert_eq!(w.factor(-8.0, 10.0), 1.0);
    assert!((w.factor(9.0, 10.0) - 0.5).abs() < 1e-15);
    assert_eq!(w.factor(10.0, 10.0), 0.0);
    assert_eq!(Window::None.factor(1e9, 1.0), 1.0);
}

#[test]
fn particle_hole_relation_examples() {
    let gl = Mat::from_fn(3, 3, |i, j| C64::new(0.1 * (i as f64 - j as f64), 0.5));
    let gr = Mat::from_fn(3, 3, |i, j| if i >= j { gl[(i, j)].conj() - gl[(i, j)] } else { C64::new(0.0, 0.0) });
    assert_eq!(check_ph_relation(gr.as_ref(), gl.as_ref()), 0.0);
    let mut off = gr.clone();
    off[(2, 0)] += C64::new(0.25, 0.0);
    assert_eq!(check_ph_relation(off.as_ref(), gl.as_ref()), 0.25);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn wigner_round_trip(n in 1usize..24, seed in any::<u32>(), t_on in -1.0f64..3.0) {
        let m = Mat::from_fn(n, n, |i, j| C64::new((seed as f64 + i as f64).sin(), (j as f64 * 0.7 + seed as f64).cos()));
        let fp = FieldProtocol { e: 0.5, t_on };
        let w = to_wigner(m.as_ref(), 0.0, 0.1, &fp);
        prop_assert_eq!(w.slices.len(), 2 * n - 1);
        prop_assert_eq!(w.to_table(), m);
        // the mask is symmetric in the relative time
        for sl in &w.slices {
            let k = sl.mask.len();
            for a in 0..k {
                prop_assert_eq!(sl.mask[a], sl.mask[k - 1 - a]);
            }
        }
    }
}

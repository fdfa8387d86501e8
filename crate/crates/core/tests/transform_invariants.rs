//! Cross-module invariants of the transform: exact identity outside the
//! band, round trips, orientation invariance, C^1 matching across the
//! surface, monotonicity in 1D, continuity of the transformed drift, and
//! the Lipschitz upgrade.

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use pwsde_core::problems::{circle2d, step1d};
use pwsde_core::rng::{derive_key, keyed_uniform};
use pwsde_core::transform::{phi_bar, phi_bar_d1, phi_bar_d2};
use pwsde_core::{
    lipschitz_quotient_filtered, PairFilter, SampleRegion, Transform, TransformOptions,
};

fn band_point_circle(key: u64, i: u64, c: f64) -> DVector<f64> {
    let th = 2.0 * std::f64::consts::PI * keyed_uniform(key, 2 * i);
    let depth = (2.0 * keyed_uniform(key, 2 * i + 1) - 1.0) * 0.98 * c;
    let r = 1.0 + depth;
    DVector::from_vec(vec![r * th.cos(), r * th.sin()])
}

#[test]
fn identity_outside_band_is_exact() {
    let t = Transform::build(&circle2d()).unwrap();
    let c = t.band_halfwidth().unwrap();
    let key = derive_key(51, 0);
    for i in 0..2000u64 {
        let th = 2.0 * std::f64::consts::PI * keyed_uniform(key, 2 * i);
        // Radii clear of the band on both sides (and away from the center).
        let r = if i % 2 == 0 {
            (1.0 - c) * keyed_uniform(key, 2 * i + 1)
        } else {
            1.0 + c + 3.0 * keyed_uniform(key, 2 * i + 1)
        };
        let x = DVector::from_vec(vec![r * th.cos(), r * th.sin()]);
        if x.norm() < 1e-6 {
            continue;
        }
        let g = t.forward(&x).unwrap();
        assert_eq!(g, x, "identity must be exact outside the band");
    }
}

#[test]
fn round_trip_within_tolerance() {
    let t = Transform::build(&circle2d()).unwrap();
    let c = t.band_halfwidth().unwrap();
    let key = derive_key(52, 0);
    for i in 0..10_000u64 {
        let x = band_point_circle(key, i, c);
        let z = t.forward(&x).unwrap();
        let back = t.inverse(&z).unwrap();
        assert!(
            (&back - &x).norm() <= 1e-10,
            "inverse(forward(x)) drifted by {}",
            (&back - &x).norm()
        );
        let fwd = t.forward(&back).unwrap();
        assert!((&fwd - &z).norm() <= 1e-10);
    }
}

#[test]
fn normal_flip_leaves_the_transform_invariant() {
    for problem in [circle2d(), step1d()] {
        let t = Transform::build(&problem).unwrap();
        let flipped = Transform::build_with(
            &problem,
            TransformOptions {
                flip_normal: true,
                c_override: None,
            },
        )
        .unwrap();
        assert_eq!(t.band_halfwidth(), flipped.band_halfwidth());
        let c = t.band_halfwidth().unwrap();
        let key = derive_key(53, problem.dim as u64);
        for i in 0..2000u64 {
            let x = if problem.dim == 2 {
                band_point_circle(key, i, c)
            } else {
                DVector::from_element(1, (2.0 * keyed_uniform(key, i) - 1.0) * 0.98 * c)
            };
            let a = t.forward(&x).unwrap();
            let b = flipped.forward(&x).unwrap();
            assert!(
                (&a - &b).norm() <= 1e-12,
                "orientation leaked into G by {}",
                (&a - &b).norm()
            );
        }
    }
}

#[test]
fn jacobian_is_continuous_across_the_surface() {
    // One-sided finite-difference Jacobians of `forward` computed just
    // off either side of the surface must agree to 1e-5 (G is C^1; only
    // the second derivative jumps).
    let t = Transform::build(&circle2d()).unwrap();
    let surface = circle2d().surface.unwrap();
    let offset = 2e-7;
    let h = 1e-7;
    for k in 0..16 {
        let th = 2.0 * std::f64::consts::PI * k as f64 / 16.0;
        let xi = DVector::from_vec(vec![th.cos(), th.sin()]);
        let n = surface.unit_normal(&xi).unwrap();
        let mut sides = Vec::new();
        for sign in [1.0, -1.0] {
            let base = &xi + &n * (sign * offset);
            let mut jac = DMatrix::zeros(2, 2);
            for j in 0..2 {
                let mut xp = base.clone();
                xp[j] += h;
                let mut xm = base.clone();
                xm[j] -= h;
                let gp = t.forward(&xp).unwrap();
                let gm = t.forward(&xm).unwrap();
                for i in 0..2 {
                    jac[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
                }
            }
            sides.push(jac);
        }
        let gap = (&sides[0] - &sides[1]).norm();
        assert!(gap <= 1e-5, "jacobian jump {gap} at angle {th}");
    }
}

#[test]
fn one_dimensional_transform_is_monotone() {
    let t = Transform::build(&step1d()).unwrap();
    let c = t.band_halfwidth().unwrap();
    let n = 10_000;
    for i in 0..n {
        // Grid spanning the band, nudged off the exact surface point.
        let x = -1.2 * c + 2.4 * c * (i as f64 + 0.5) / n as f64;
        if x.abs() < 1e-12 {
            continue;
        }
        let g1 = t.jacobian(&DVector::from_element(1, x)).unwrap()[(0, 0)];
        assert!(g1 > 0.0, "G'({x}) = {g1}");
    }
}

#[test]
fn transformed_drift_is_continuous_across_the_surface() {
    // Two-sided gap of mu~ across the surface at offset 1e-6, measured in
    // transformed coordinates; the raw drift gap there is O(1).
    let h = 1e-6;
    for (problem, points) in [
        (
            circle2d(),
            (0..12)
                .map(|k| {
                    let th = 2.0 * std::f64::consts::PI * k as f64 / 12.0;
                    DVector::from_vec(vec![th.cos(), th.sin()])
                })
                .collect::<Vec<_>>(),
        ),
        (step1d(), vec![DVector::from_element(1, 0.0)]),
    ] {
        let t = Transform::build(&problem).unwrap();
        let surface = problem.surface.clone().unwrap();
        for xi in points {
            let n = surface.unit_normal(&xi).unwrap();
            let above = t.forward(&(&xi + &n * h)).unwrap();
            let below = t.forward(&(&xi - &n * h)).unwrap();
            let (mu_above, _) = t.transformed_coefficients(&above).unwrap();
            let (mu_below, _) = t.transformed_coefficients(&below).unwrap();
            let gap = (&mu_above - &mu_below).norm();
            assert!(
                gap <= 1e-3,
                "mu~ gap {gap} across {:?} for {}",
                xi.as_slice(),
                problem.name
            );
            let raw_gap = ((problem.drift)(&(&xi + &n * h)) - (problem.drift)(&(&xi - &n * h)))
                .norm();
            assert!(raw_gap > 0.4, "test expects an O(1) raw drift jump");
        }
    }
}

#[test]
fn transformed_drift_gains_the_lipschitz_upgrade() {
    // The straightened drift must be (numerically) Lipschitz across the
    // surface: the quotient over crossing pairs stays within twice the
    // non-crossing quotient.
    let problem = step1d();
    let t = Transform::build(&problem).unwrap();
    let surface = problem.surface.clone().unwrap();
    let mu_tilde = move |z: &DVector<f64>| t.transformed_drift(z).unwrap();
    let region = SampleRegion::new_box(vec![-0.2], vec![0.2]).unwrap();
    let non_crossing = lipschitz_quotient_filtered(
        &mu_tilde,
        &surface,
        &region,
        4000,
        77,
        PairFilter::NonCrossing,
    )
    .unwrap();
    let any_pairs =
        lipschitz_quotient_filtered(&mu_tilde, &surface, &region, 4000, 77, PairFilter::Any)
            .unwrap();
    assert!(any_pairs.is_finite());
    assert!(
        any_pairs <= 2.0 * non_crossing,
        "crossing quotient {any_pairs} vs non-crossing {non_crossing}"
    );
    // Sanity: the raw drift has no such bound (its crossing quotient
    // blows up as pairs tighten around the jump).
    let raw = move |x: &DVector<f64>| (step1d().drift)(x);
    let raw_any =
        lipschitz_quotient_filtered(&raw, &surface, &region, 4000, 77, PairFilter::Any).unwrap();
    assert!(raw_any > 2.0 * non_crossing);
}

#[test]
fn closed_form_phi_bar_derivatives_match_differences_of_forward() {
    // 1D: the implementation's derivatives are the closed forms; check
    // them against central differences of `forward` away from the jump.
    let t = Transform::build_with(
        &step1d(),
        TransformOptions {
            flip_normal: false,
            c_override: Some(0.1),
        },
    )
    .unwrap();
    let c = 0.1;
    let alpha = 1.0;
    let fwd = |x: f64| t.forward(&DVector::from_element(1, x)).unwrap()[0];
    let mut checked = 0;
    for i in 0..400 {
        let s = -1.4 * c + 2.8 * c * (i as f64 + 0.5) / 400.0;
        if s.abs() < 5e-3 || (s.abs() - c).abs() < 2e-4 {
            continue; // keep stencils clear of the G'' jump and the band edge
        }
        // phi_bar' via central differences, h = 1e-6.
        let h1 = 1e-6;
        let d1 = (fwd(s + h1) - fwd(s - h1)) / (2.0 * h1);
        let d1_closed = 1.0 + alpha * phi_bar_d1(s, c);
        assert!(
            (d1 - d1_closed).abs() <= 1e-6,
            "G'({s}): fd {d1} vs closed {d1_closed}"
        );
        // phi_bar'' via Richardson-extrapolated central differences.
        let h2 = 1e-4;
        let second = |h: f64| (fwd(s + h) - 2.0 * fwd(s) + fwd(s - h)) / (h * h);
        let d2 = (4.0 * second(h2 / 2.0) - second(h2)) / 3.0;
        let d2_closed = alpha * phi_bar_d2(s, c);
        assert!(
            (d2 - d2_closed).abs() <= 1e-6,
            "G''({s}): fd {d2} vs closed {d2_closed}"
        );
        checked += 1;
    }
    assert!(checked > 300);
}

#[test]
fn circle_drift_quotient_matches_dense_grid_oracle() {
    // Inside the circle the drift is an isometry-like field with unit
    // gradient norm; outside it is constant. Non-crossing quotients are
    // therefore exactly 0 or 1 and the estimate must be 1.
    let problem = circle2d();
    let surface = problem.surface.clone().unwrap();
    let drift = problem.drift.clone();
    let f = move |x: &DVector<f64>| drift(x);
    let region = SampleRegion::new_box(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let est = lipschitz_quotient_filtered(&f, &surface, &region, 2000, 5, PairFilter::NonCrossing)
        .unwrap();
    assert!((est - 1.0).abs() < 1e-12, "estimate {est}");

    // Dense-grid oracle: the same quotient over a deterministic lattice.
    let mut oracle = 0.0f64;
    let m = 24;
    let mut points = Vec::new();
    for a in 0..m {
        for b in 0..m {
            points.push(DVector::from_vec(vec![
                -2.0 + 4.0 * (a as f64 + 0.5) / m as f64,
                -2.0 + 4.0 * (b as f64 + 0.5) / m as f64,
            ]));
        }
    }
    let drift = problem.drift.clone();
    for (i, x) in points.iter().enumerate() {
        for y in points.iter().skip(i + 1) {
            if surface.segment_crosses(x, y) != 0 {
                continue;
            }
            let q = (drift(x) - drift(y)).norm() / (x - y).norm();
            oracle = oracle.max(q);
        }
    }
    assert!((est - oracle).abs() < 1e-12, "estimate {est} vs oracle {oracle}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prop_round_trip_1d(s in -0.2f64..0.2f64) {
        let t = Transform::build(&step1d()).unwrap();
        let x = DVector::from_element(1, s);
        let z = t.forward(&x).unwrap();
        let back = t.inverse(&z).unwrap();
        prop_assert!((back[0] - s).abs() <= 1e-10);
    }

    #[test]
    fn prop_identity_outside_band_1d(s in 0.15f64..5.0f64, sign in prop::bool::ANY) {
        let t = Transform::build(&step1d()).unwrap();
        let x = DVector::from_element(1, if sign { s } else { -s });
        prop_assert_eq!(t.forward(&x).unwrap()[0], x[0]);
    }

    #[test]
    fn prop_phi_bar_vanishes_outside_support(s in 1.0f64..100.0f64, c in 0.01f64..0.9f64) {
        prop_assert_eq!(phi_bar(s, c), 0.0);
        prop_assert_eq!(phi_bar_d1(s, c), 0.0);
        prop_assert_eq!(phi_bar_d2(s, c), 0.0);
    }
}

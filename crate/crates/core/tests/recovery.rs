//! Least-squares objective, the optimizer and the error metrics.

use std::f64::consts::PI;

use mtd2d::forward::{ForwardModel, ForwardPrediction};
use mtd2d::image_moments::FreqVectors;
use mtd2d::measurement::render_measurement;
use mtd2d::moments::{empirical_ac, MomentAccumulator};
use mtd2d::recovery::{
    align_rotation, minimize, minimize_objective, recover, relative_error_alpha, relative_error_gamma,
    MinimizeOptions, Objective, RecoveryOptions, SeparationKnowledge, StopReason,
};
use mtd2d::separation::separation_functions;
use mtd2d::{BasisSpec, BasisTables, CoefficientVector, MomentSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn setup(radius: f64, count: usize) -> FreqVectors {
    FreqVectors::new(&BasisTables::build(&BasisSpec::with_count(radius, count).unwrap()))
}

fn as_targets(p: &ForwardPrediction, radius: f64) -> MomentSet {
    let mut m = MomentSet::zeros(1000, radius);
    m.a1 = p.a1;
    m.a2 = p.a2.clone();
    m.a3 = p.a3.clone();
    m.count = 1;
    m
}

fn truth(fv: &FreqVectors, seed: u64) -> CoefficientVector {
    fv.tables.spec.random(&mut ChaCha8Rng::seed_from_u64(seed))
}

fn dense_placements(seed: u64) -> Vec<(i64, i64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..40).map(|_| (rng.gen_range(3..60), rng.gen_range(3..60))).collect()
}

#[test]
fn objective_vanishes_at_the_truth() {
    let fv = setup(2.5, 10);
    let alpha = truth(&fv, 1);
    let sep = separation_functions(&dense_placements(1), 2.5);
    let model = ForwardModel::new(2.5, 0.3, Some(&sep)).unwrap();
    let t = as_targets(&model.predict_ac(&fv, &alpha, 0.1), 2.5);
    let obj = Objective::new(&fv, &t, 0.3, Some(&sep)).unwrap();
    assert!(obj.value_at(&alpha, 0.1).unwrap() < 1e-20);
    assert!(obj.value_at(&alpha, 0.11).unwrap() > 1e-12);
}

#[test]
fn gradient_matches_central_differences() {
    let fv = setup(2.5, 10);
    let sep = separation_functions(&dense_placements(2), 2.5);
    let model = ForwardModel::new(2.5, 0.2, Some(&sep)).unwrap();
    let t = as_targets(&model.predict_ac(&fv, &truth(&fv, 2), 0.1), 2.5);
    let obj = Objective::new(&fv, &t, 0.2, Some(&sep)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..20 {
        let a = truth(&fv, rng.gen());
        let x = obj.pack(&a, rng.gen_range(0.03..0.3));
        let (_, g) = obj.value_grad(&x).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..x.len() {
            let h = 1e-5 * x[i].abs().max(1e-2);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += h;
            xm[i] -= h;
            let fd = (obj.value(&xp).unwrap() - obj.value(&xm).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * scale.max(1.0), "coord {i}: {fd} vs {}", g[i]);
        }
    }
}

#[test]
fn objective_is_rotation_invariant() {
    let fv = setup(2.5, 10);
    let t = as_targets(
        &ForwardModel::new(2.5, 0.0, None).unwrap().predict_ac(&fv, &truth(&fv, 4), 0.1),
        2.5,
    );
    let obj = Objective::new(&fv, &t, 0.0, None).unwrap();
    let a = truth(&fv, 5);
    let f0 = obj.value_at(&a, 0.12).unwrap();
    for phi in [0.3, 1.7, -2.9] {
        let f = obj.value_at(&fv.tables.spec.steer(&a, phi), 0.12).unwrap();
        assert!((f - f0).abs() <= 1e-10 * f0, "{f} vs {f0}");
    }
}

#[test]
fn objective_rejects_a_mismatched_window() {
    let fv = setup(2.5, 10);
    let t = MomentSet::zeros(100, 3.5);
    assert!(Objective::new(&fv, &t, 0.0, None).is_err());
}

#[test]
fn minimizer_solves_a_quadratic() {
    let diag = [1.0, 10.0, 100.0, 0.5];
    let fg = |x: &[f64]| {
        let f = x.iter().zip(&diag).map(|(v, d)| 0.5 * d * (v - 1.0) * (v - 1.0)).sum();
        let g = x.iter().zip(&diag).map(|(v, d)| d * (v - 1.0)).collect();
        Ok((f, g))
    };
    let out = minimize(fg, &[0.0; 4], &MinimizeOptions::default(), &mut |_, _| false).unwrap();
    assert!(out.x.iter().all(|v| (v - 1.0).abs() < 1e-8), "{:?}", out.x);
    assert_ne!(out.stop, StopReason::MaxIterations);
    assert_eq!(out.last_coordinate.len(), out.iterations + 1);
}

#[test]
fn monitor_stops_the_minimizer() {
    let fg = |x: &[f64]| Ok(((x[0] - 3.0).powi(4), vec![4.0 * (x[0] - 3.0).powi(3)]));
    let out = minimize(fg, &[0.0], &MinimizeOptions::default(), &mut |k, _| k >= 3).unwrap();
    assert_eq!(out.stop, StopReason::Monitor);
    assert_eq!(out.iterations, 3);
}

#[test]
fn a_nearby_start_converges_to_the_truth() {
    let fv = setup(2.5, 10);
    let alpha = truth(&fv, 6);
    let sep = separation_functions(&dense_placements(6), 2.5);
    let model = ForwardModel::new(2.5, 0.0, Some(&sep)).unwrap();
    let t = as_targets(&model.predict_ac(&fv, &alpha, 0.1), 2.5);
    let obj = Objective::new(&fv, &t, 0.0, Some(&sep)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let x: Vec<f64> = fv.tables.spec.to_free(&alpha).iter().map(|v| v + 1e-2 * rng.gen_range(-1.0..1.0)).collect();
    let start = fv.tables.spec.from_free(&x);
    let r = minimize_objective(&obj, &start, 0.105, &MinimizeOptions::default()).unwrap();
    assert!(relative_error_alpha(&fv.tables.spec, &alpha, &r.alpha()).unwrap() < 1e-6);
    assert!(relative_error_gamma(0.1, r.gamma).unwrap() < 1e-6);
}

#[test]
fn multi_start_recovery_is_deterministic_and_accurate() {
    let fv = setup(2.0, 6);
    let alpha = truth(&fv, 8);
    let sep = separation_functions(&dense_placements(8), 2.0);
    let model = ForwardModel::new(2.0, 0.0, Some(&sep)).unwrap();
    let t = as_targets(&model.predict_ac(&fv, &alpha, 0.08), 2.0);
    let opts = RecoveryOptions {
        starts: 3,
        seed: 11,
        ..RecoveryOptions::default()
    };
    let k = SeparationKnowledge::Known(sep);
    let a = recover(&fv, &t, 0.0, &k, &opts).unwrap();
    let b = recover(&fv, &t, 0.0, &k, &opts).unwrap();
    assert_eq!(a.coefficients, b.coefficients);
    assert_eq!(a.start, b.start);
    assert!(a.failure.is_none());
    assert!(relative_error_alpha(&fv.tables.spec, &alpha, &a.alpha()).unwrap() < 1e-4);
}

#[test]
fn alignment_recovers_a_known_rotation() {
    let fv = setup(2.5, 10);
    let spec = &fv.tables.spec;
    let a = truth(&fv, 9);
    let (err, phi) = align_rotation(spec, &a, &spec.steer(&a, 1.234)).unwrap();
    assert!(err < 1e-9);
    let d = (phi + 1.234).rem_euclid(2.0 * PI);
    assert!(d.min(2.0 * PI - d) < 1e-6, "phi {phi}");
    assert_eq!(relative_error_alpha(spec, &a, &CoefficientVector::zeros(spec)).unwrap(), 1.0);
    assert!(align_rotation(spec, &CoefficientVector::zeros(spec), &a).is_err());
}

#[test]
fn alignment_matches_a_dense_grid_search() {
    let fv = setup(2.5, 10);
    let spec = &fv.tables.spec;
    let a = truth(&fv, 10);
    let b = truth(&fv, 11);
    let (err, _) = align_rotation(spec, &a, &b).unwrap();
    let na = a.norm();
    let dense = (0..1_000_000)
        .map(|k| {
            let s = spec.steer(&b, 2.0 * PI * k as f64 / 1e6);
            a.values.iter().zip(&s.values).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt() / na
        })
        .fold(f64::INFINITY, f64::min);
    assert!(err <= dense + 1e-12);
    assert!(dense - err < 1e-7, "{err} vs {dense}");
}

#[test]
fn density_error_is_relative() {
    assert!((relative_error_gamma(0.1, 0.11).unwrap() - 0.1).abs() < 1e-12);
    assert!(relative_error_gamma(0.0, 0.1).is_err());
}

/// Noise enters the second moment at the origin and the third moment on the
/// three lines where two shifts coincide, scaled by the mean.
#[test]
fn noise_terms_match_a_monte_carlo_average() {
    let fv = setup(2.5, 10);
    let alpha = truth(&fv, 12);
    let side = 48;
    let locs = [(10, 10), (30, 20), (20, 33)];
    let angles = [0.4, 2.0, 4.1];
    let sigma = 1.0;
    let clean = empirical_ac(&render_measurement(side, &fv.tables, &alpha, &locs, Some(&angles), 0.0, 0).unwrap()).unwrap();
    let trials = 400;
    let mut acc = MomentAccumulator::new();
    let mut sq = vec![0.0; clean.a3.len()];
    for s in 0..trials {
        let m = empirical_ac(&render_measurement(side, &fv.tables, &alpha, &locs, Some(&angles), sigma, 100 + s).unwrap()).unwrap();
        for (q, (v, c)) in sq.iter_mut().zip(m.a3.iter().zip(&clean.a3)) {
            *q += (v - c) * (v - c);
        }
        acc.add(&m).unwrap();
    }
    let mean = acc.finish().unwrap();
    let l = clean.window;
    let shift = |i: usize| (i / l, i % l);
    for (i, (&m, &c)) in mean.a2.iter().zip(&clean.a2).enumerate() {
        let want = if i == 0 { sigma * sigma } else { 0.0 };
        assert!((m - c - want).abs() < 0.01, "a2[{i}]: {} vs {want}", m - c);
    }
    let mut worst: f64 = 0.0;
    for (i, q) in sq.iter().enumerate() {
        let (a, b) = (shift(i / (l * l)), shift(i % (l * l)));
        let hits = [a == (0, 0), b == (0, 0), a == b].iter().filter(|&&h| h).count() as f64;
        let want = sigma * sigma * clean.a1 * hits;
        let se = (q / trials as f64).sqrt() / (trials as f64).sqrt();
        worst = worst.max((mean.a3[i] - clean.a3[i] - want).abs() / se.max(1e-12));
    }
    assert!(worst < 5.0, "worst deviation {worst} standard errors");
}

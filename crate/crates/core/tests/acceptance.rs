//! Acceptance criteria 1 to 9, one PASS/FAIL line each.
//!
//! Failures are reported, not hidden. The process exits non-zero on a
//! failure only when `MTD2D_STRICT=1`, so the workspace test run records the
//! outcome without aborting. `MTD2D_CRITERIA=1,2,5` runs a subset.

mod common;

use std::f64::consts::PI;
use std::time::Instant;

use common::{averaged, max_rel, naive, oracle};
use mtd2d::ctf::{apply_ctf, deconvolve_moments, gaussian_ctf, moment_transforms, oscillating_ctf, transforms_relative_error};
use mtd2d::experiment::{loglog_slope, median, run_sweep, Case, ExperimentConfig, ExperimentKind, Setup, Snr, TrialRecord};
use mtd2d::forward::ForwardModel;
use mtd2d::image_moments::{FreqVectors, SpatialMoments};
use mtd2d::measurement::{
    count_to_density, place_occurrences, render_measurement, PlacementMode, PlacementPolicy, PlacementTarget,
};
use mtd2d::moments::{empirical_ac, empirical_ac_with, MomentPath};
use mtd2d::recovery::Objective;
use mtd2d::separation::separation_functions;
use mtd2d::{BasisSpec, BasisTables, Measurement, MomentSet};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn setup(radius: f64, count: usize) -> (BasisSpec, BasisTables, FreqVectors) {
    let spec = BasisSpec::with_count(radius, count).unwrap();
    let tables = BasisTables::build(&spec);
    let fv = FreqVectors::new(&tables);
    (spec, tables, fv)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn moment_diff(a: &MomentSet, b: &MomentSet) -> f64 {
    (a.a1 - b.a1).abs().max(max_abs_diff(&a.a2, &b.a2)).max(max_abs_diff(&a.a3, &b.a3))
}

fn spatial_parts(s: &SpatialMoments) -> [Vec<f64>; 6] {
    [vec![s.s1], s.s2.clone(), s.s2pair.clone(), s.s3.clone(), s.s3pair.clone(), s.s3trip.clone()]
}

fn criterion1() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..6 {
        let side = rng.gen_range(16..=32);
        let mut m = Measurement::zeros(side, 2.0);
        m.grid.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let reference = naive(&m);
        for path in [MomentPath::Fft, MomentPath::Direct] {
            worst = worst.max(moment_diff(&empirical_ac_with(&m, path).unwrap(), &reference));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-10 && secs < 60.0,
        format!("max |fft - loops| and |direct - loops| = {worst:.2e} (< 1e-10), {secs:.1}s (< 60s)"),
    )
}

fn criterion2() -> Outcome {
    let t = Instant::now();
    let (spec, tables, fv) = setup(2.0, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..2 {
        let alpha = spec.random(&mut rng);
        let ours = spatial_parts(&fv.spatial(&alpha));
        let reference = spatial_parts(&oracle(&tables, &alpha, fv.radius, 64));
        for (a, b) in ours.iter().zip(&reference) {
            worst = worst.max(max_rel(a, b));
        }
    }
    let secs = t.elapsed().as_secs_f64();
    outcome(
        worst < 1e-6 && secs < 300.0,
        format!("max relative error vs quadrature = {worst:.2e} (< 1e-6), {secs:.1}s (< 300s)"),
    )
}

fn criterion3() -> Outcome {
    let (spec, _, fv) = setup(2.0, 6);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-6;
    let mut tensors: f64 = 0.0;
    for _ in 0..20 {
        let alpha = spec.random(&mut rng);
        let x = spec.to_free(&alpha);
        let dx: Vec<f64> = (0..x.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let shifted = |s: f64| -> Vec<f64> { x.iter().zip(&dx).map(|(a, b)| a + s * b).collect() };
        let sp = spatial_parts(&fv.spatial(&spec.from_free(&shifted(h))));
        let sm = spatial_parts(&fv.spatial(&spec.from_free(&shifted(-h))));
        let dir = spatial_parts(&fv.spatial_directional(&fv.grad_moments(&alpha), &spec.from_free(&dx).values));
        for k in 1..6 {
            let fd: Vec<f64> = sp[k].iter().zip(&sm[k]).map(|(a, b)| (a - b) / (2.0 * h)).collect();
            tensors = tensors.max(max_rel(&dir[k], &fd));
        }
    }

    let (spec, _, fv) = setup(2.5, 10);
    let mut placements = ChaCha8Rng::seed_from_u64(4);
    let locs: Vec<(i64, i64)> = (0..40).map(|_| (placements.gen_range(3..60), placements.gen_range(3..60))).collect();
    let sep = separation_functions(&locs, 2.5);
    let model = ForwardModel::new(2.5, 0.2, Some(&sep)).unwrap();
    let p = model.predict_ac(&fv, &spec.random(&mut rng), 0.1);
    let mut targets = MomentSet::zeros(1000, 2.5);
    targets.a1 = p.a1;
    targets.a2 = p.a2;
    targets.a3 = p.a3;
    let obj = Objective::new(&fv, &targets, 0.2, Some(&sep)).unwrap();
    let mut objective: f64 = 0.0;
    for _ in 0..20 {
        let x = obj.pack(&spec.random(&mut rng), rng.gen_range(0.03..0.3));
        let (_, g) = obj.value_grad(&x).unwrap();
        let scale = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for i in 0..x.len() {
            let step = 1e-5 * x[i].abs().max(1e-2);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[i] += step;
            xm[i] -= step;
            let fd = (obj.value(&xp).unwrap() - obj.value(&xm).unwrap()) / (2.0 * step);
            objective = objective.max((fd - g[i]).abs() / scale);
        }
    }
    outcome(
        tensors < 1e-5 && objective < 1e-5,
        format!("moment tensors {tensors:.2e}, objective {objective:.2e} (both < 1e-5, 20 points each)"),
    )
}

fn criterion4() -> Outcome {
    let (spec, tables, fv) = setup(2.0, 6);
    let alpha = spec.random(&mut ChaCha8Rng::seed_from_u64(4));
    let side = 2048;
    let policy = PlacementPolicy {
        mode: PlacementMode::ArbitrarySpacing,
        target: PlacementTarget::Density(0.1),
    };
    let locs = place_occurrences(side, spec.radius, &policy, 4).unwrap();
    let m = render_measurement(side, &tables, &alpha, &locs, None, 0.0, 4).unwrap();
    let emp = empirical_ac(&m).unwrap();
    let sep = separation_functions(&locs, spec.radius);
    let count = locs.len();
    let gamma = count_to_density(count, side, spec.radius);
    let pred = ForwardModel::new(spec.radius, 0.0, Some(&sep)).unwrap().predict_ac(&fv, &alpha, gamma);
    let mut worst: f64 = 0.0;
    let mut entries = 0;
    let scaled = max_rel(&pred.a2, &emp.a2).max(max_rel(&pred.a3, &emp.a3));
    let emp_all = std::iter::once(&emp.a1).chain(&emp.a2).chain(&emp.a3);
    let pred_all = std::iter::once(&pred.a1).chain(&pred.a2).chain(&pred.a3);
    for (e, p) in emp_all.zip(pred_all) {
        if e.abs() > 1e-6 {
            worst = worst.max((p - e).abs() / e.abs());
            entries += 1;
        }
    }

    let locs = [(6, 6), (6, 10), (10, 7)];
    let micro_side = 18;
    let exact = averaged(micro_side, &tables, &alpha, &locs, 6 * spec.nu_max as usize + 1);
    let micro_sep = separation_functions(&locs, spec.radius);
    let micro_gamma = locs.len() as f64 * PI * spec.radius * spec.radius / (micro_side * micro_side) as f64;
    let micro = ForwardModel::new(spec.radius, 0.0, Some(&micro_sep)).unwrap().predict_ac(&fv, &alpha, micro_gamma);
    let micro_err = ((micro.a1 - exact.a1).abs() / exact.a1.abs())
        .max(max_rel(&micro.a2, &exact.a2))
        .max(max_rel(&micro.a3, &exact.a3));
    outcome(
        worst < 0.02 && micro_err < 1e-10,
        format!(
            "N = 2048, p = {count}: max relative error {worst:.2e} over {entries} entries > 1e-6 (< 2e-2), \
             {scaled:.2e} relative to the largest entry; micro-instance {micro_err:.2e} (< 1e-10)"
        ),
    )
}

fn criterion5() -> Outcome {
    let mut worst: f64 = 0.0;
    for (radius, count) in [(2.0, 6), (2.5, 10)] {
        let (spec, tables, fv) = setup(radius, count);
        let nu = spec.nu_max as usize;
        let dense = FreqVectors::with_angle_counts(&tables, 2 * (4 * nu + 1), 2 * 6 * nu);
        let alpha = spec.random(&mut ChaCha8Rng::seed_from_u64(5));
        for (a, b) in spatial_parts(&fv.spatial(&alpha)).iter().zip(&spatial_parts(&dense.spatial(&alpha))) {
            worst = worst.max(max_abs_diff(a, b));
        }
    }
    outcome(worst <= 1e-12, format!("largest change from doubled angle grids {worst:.2e} (<= 1e-12)"))
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn medians(records: &[TrialRecord], case: Case, size: usize, snr: &str) -> f64 {
    let errs: Vec<f64> = records
        .iter()
        .filter(|r| r.case == case.name() && r.size == size && r.snr == snr && r.failure.is_empty())
        .map(|r| r.err_alpha)
        .collect();
    median(&errs)
}

fn progress(r: &TrialRecord) {
    eprintln!(
        "  {} N={} snr={} trial={} err_alpha={:.3e} ({:.1}s)",
        r.case, r.size, r.snr, r.trial, r.err_alpha, r.seconds
    );
}

fn criterion6(setup: &Setup) -> Outcome {
    let t = Instant::now();
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::SizeSweep,
        sizes: vec![1000, 2000, 4000],
        cases: vec![Case::Known, Case::Ignored],
        trials: 10,
        ..ExperimentConfig::default()
    };
    let out = run_sweep(setup, &cfg, &progress).unwrap();
    let inf = Snr::NOISELESS.to_string();
    let known: Vec<f64> = cfg.sizes.iter().map(|&n| medians(&out.records, Case::Known, n, &inf)).collect();
    let ignored: Vec<f64> = cfg.sizes.iter().map(|&n| medians(&out.records, Case::Ignored, n, &inf)).collect();
    let xs: Vec<f64> = cfg.sizes.iter().map(|&n| n as f64).collect();
    let slope = loglog_slope(&xs, &known);
    let ratio = ignored[2] / known[2];
    let secs = t.elapsed().as_secs_f64();
    outcome(
        (slope + 1.0).abs() <= 0.25 && ratio > 10.0 && secs < 7200.0,
        format!(
            "known medians {}, slope {slope:.3} (-1 +- 0.25); ignored medians {}, \
             ratio at N = 4000 {ratio:.1} (> 10); {secs:.0}s (< 7200s)",
            sci(&known),
            sci(&ignored)
        ),
    )
}

fn criterion7(setup: &Setup) -> Outcome {
    let snrs = [0.25, 0.5, 1.0, 2.0];
    let cfg = ExperimentConfig {
        experiment: ExperimentKind::SnrSweep,
        sizes: vec![4000],
        snrs: snrs.iter().map(|&s| Snr(s)).collect(),
        cases: vec![Case::Known],
        trials: 10,
        ..ExperimentConfig::default()
    };
    let out = run_sweep(setup, &cfg, &progress).unwrap();
    let errs: Vec<f64> =
        snrs.iter().map(|&s| medians(&out.records, Case::Known, 4000, &Snr(s).to_string())).collect();
    let slope = loglog_slope(&snrs, &errs);
    let ordered = errs.windows(2).all(|w| w[0] > w[1]);
    outcome(
        (slope + 1.5).abs() <= 0.4,
        format!(
            "N = 4000 medians {} at SNR {snrs:?}, slope {slope:.3} (-1.5 +- 0.4); \
             decreasing with SNR: {ordered}",
            sci(&errs)
        ),
    )
}

fn criterion8() -> Outcome {
    let (spec, tables, _) = setup(2.5, 10);
    let side = 64;
    let alpha = spec.random(&mut ChaCha8Rng::seed_from_u64(8));
    let policy = PlacementPolicy {
        mode: PlacementMode::ArbitrarySpacing,
        target: PlacementTarget::Density(0.1),
    };
    let locs = place_occurrences(side, spec.radius, &policy, 8).unwrap();
    let m = render_measurement(side, &tables, &alpha, &locs, None, 0.0, 8).unwrap();
    let ctf = gaussian_ctf(side, 0.2, 0.05);
    let y = apply_ctf(&m.grid, side, &ctf).unwrap();
    let band = 6;
    let clean = moment_transforms(&m.grid, side, band).unwrap();
    let back = deconvolve_moments(&moment_transforms(&y, side, band).unwrap(), &ctf).unwrap();
    let err = transforms_relative_error(&back, &clean);
    let zero = oscillating_ctf(side, 0.25);
    let rejected = deconvolve_moments(&moment_transforms(&y, side, band).unwrap(), &zero).is_err();
    outcome(
        err < 1e-8 && rejected,
        format!("round-trip error {err:.2e} (< 1e-8); zero-crossing CTF rejected: {rejected}"),
    )
}

fn criterion9() -> Outcome {
    let (spec, _, fv) = setup(2.5, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = ForwardModel::new(2.5, 0.0, None).unwrap().predict_ac(&fv, &spec.random(&mut rng), 0.1);
    let mut targets = MomentSet::zeros(1000, 2.5);
    targets.a1 = p.a1;
    targets.a2 = p.a2;
    targets.a3 = p.a3;
    let obj = Objective::new(&fv, &targets, 0.0, None).unwrap();
    let mut gauge: f64 = 0.0;
    for _ in 0..20 {
        let a = spec.random(&mut rng);
        let g = rng.gen_range(0.03..0.3);
        let f0 = obj.value_at(&a, g).unwrap();
        let f = obj.value_at(&spec.steer(&a, rng.gen_range(-PI..PI)), g).unwrap();
        gauge = gauge.max((f - f0).abs() / f0);
    }

    let config = Config {
        cases: 64,
        failure_persistence: None,
        ..Config::default()
    };
    let arbitrary = (any::<u64>(), 0.01f64..0.2);
    let place = |mode, gamma, seed| {
        let policy = PlacementPolicy {
            mode,
            target: PlacementTarget::Density(gamma),
        };
        place_occurrences(200, 2.5, &policy, seed).unwrap()
    };
    let mass = TestRunner::new(config.clone()).run(&arbitrary, |(seed, gamma)| {
        let sep = separation_functions(&place(PlacementMode::ArbitrarySpacing, gamma, seed), 2.5);
        prop_assert!(sep.xi_mass() <= 1.0, "sum xi = {} at gamma {gamma}", sep.xi_mass());
        Ok(())
    });
    let symmetric = TestRunner::new(config.clone()).run(&arbitrary, |(seed, gamma)| {
        let sep = separation_functions(&place(PlacementMode::ArbitrarySpacing, gamma, seed), 2.5);
        let (lo, hi) = sep.range();
        for y in lo..=hi {
            for x in lo..=hi {
                prop_assert_eq!(sep.xi_at((y, x)), sep.xi_at((-y, -x)));
            }
        }
        Ok(())
    });
    let separated = TestRunner::new(config).run(&(any::<u64>(), 0.01f64..0.08), |(seed, gamma)| {
        let sep = separation_functions(&place(PlacementMode::WellSeparated, gamma, seed), 2.5);
        prop_assert_eq!(sep.xi_mass(), 0.0);
        Ok(())
    });
    let show = |r: &Result<(), _>| match r {
        Ok(()) => "holds".to_string(),
        Err(TestError::Fail(reason, input)) => format!("fails ({} for input {input:?})", reason.message()),
        Err(e) => format!("fails ({e})"),
    };
    outcome(
        gauge < 1e-10 && mass.is_ok() && symmetric.is_ok() && separated.is_ok(),
        format!(
            "gauge {gauge:.2e} (< 1e-10); sum xi <= 1 {}; xi symmetry {}; xi = 0 well separated {}",
            show(&mass),
            show(&symmetric),
            show(&separated)
        ),
    )
}

fn main() {
    let strict = std::env::var("MTD2D_STRICT").is_ok_and(|v| v == "1");
    let only: Option<Vec<usize>> = std::env::var("MTD2D_CRITERIA")
        .ok()
        .map(|v| v.split(',').filter_map(|c| c.trim().parse().ok()).collect());
    let sweep_setup = Setup::new(2.5, 10, None).unwrap();
    let criteria: Vec<Check> = vec![
        ("empirical moments: fft and direct vs loops", Box::new(criterion1)),
        ("image moments vs quadrature", Box::new(criterion2)),
        ("gradients vs central differences", Box::new(criterion3)),
        ("forward model vs simulation", Box::new(criterion4)),
        ("angle grid exactness", Box::new(criterion5)),
        ("error vs size", Box::new(|| criterion6(&sweep_setup))),
        ("error vs SNR", Box::new(|| criterion7(&sweep_setup))),
        ("CTF round trip", Box::new(criterion8)),
        ("gauge and separation invariants", Box::new(criterion9)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        if only.as_ref().is_some_and(|o| !o.contains(&(i + 1))) {
            println!("criterion {}: SKIP [{name}] not selected by MTD2D_CRITERIA", i + 1);
            continue;
        }
        let t = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {}: {} [{name}] {} ({:.1}s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {failed} of {} criteria failed", criteria.len());
    if strict && failed > 0 {
        std::process::exit(1);
    }
}

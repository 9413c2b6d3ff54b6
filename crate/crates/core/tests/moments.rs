//! Empirical autocorrelations against naive triple loops, accumulation and
//! file round trips.

mod common;

use common::naive;
use mtd2d::moments::{empirical_ac, empirical_ac_with, MomentAccumulator, MomentPath};
use mtd2d::{Error, Measurement, MomentSet};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_measurement(side: usize, radius: f64, seed: u64) -> Measurement {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = Measurement::zeros(side, radius);
    m.grid.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
    m
}

fn max_abs_diff(a: &MomentSet, b: &MomentSet) -> f64 {
    let d1 = (a.a1 - b.a1).abs();
    let d2 = a.a2.iter().zip(&b.a2).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    let d3 = a.a3.iter().zip(&b.a3).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    d1.max(d2).max(d3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn both_paths_match_naive_sums(side in 16usize..=32, seed in any::<u64>()) {
        let m = random_measurement(side, 2.0, seed);
        let reference = naive(&m);
        let direct = empirical_ac_with(&m, MomentPath::Direct).unwrap();
        let fft = empirical_ac_with(&m, MomentPath::Fft).unwrap();
        prop_assert!(max_abs_diff(&direct, &reference) < 1e-10);
        prop_assert!(max_abs_diff(&fft, &reference) < 1e-10);
    }
}

#[test]
fn third_moment_symmetry_under_swapping_shifts() {
    let m = random_measurement(40, 2.5, 4);
    let ms = empirical_ac(&m).unwrap();
    let l = ms.window;
    for a in 0..l * l {
        for b in 0..l * l {
            let x = ms.a3_at((a / l, a % l), (b / l, b % l));
            let y = ms.a3_at((b / l, b % l), (a / l, a % l));
            assert!((x - y).abs() < 1e-15);
        }
    }
}

#[test]
fn zero_measurement_gives_zero_moments() {
    let ms = empirical_ac(&Measurement::zeros(20, 2.0)).unwrap();
    assert_eq!(ms.a1, 0.0);
    assert!(ms.a2.iter().chain(&ms.a3).all(|&v| v == 0.0));
}

#[test]
fn constant_measurement_has_known_moments() {
    let mut m = Measurement::zeros(20, 2.0);
    m.grid.iter_mut().for_each(|v| *v = 2.0);
    let ms = empirical_ac(&m).unwrap();
    assert!((ms.a1 - 2.0).abs() < 1e-15);
    // zero padding: (N - ly)(N - lx) overlapping products
    assert!((ms.a2_at((1, 3)) - 4.0 * 19.0 * 17.0 / 400.0).abs() < 1e-14);
    let overlap = (20 - 2) * (20 - 3);
    assert!((ms.a3_at((1, 3), (2, 0)) - 8.0 * overlap as f64 / 400.0).abs() < 1e-14);
}

#[test]
fn window_must_fit_in_measurement() {
    assert!(matches!(
        empirical_ac(&Measurement::zeros(8, 2.0)),
        Err(Error::WindowTooLarge { .. })
    ));
}

#[test]
fn averaging_a_set_with_itself_is_idempotent() {
    let ms = empirical_ac(&random_measurement(24, 2.0, 1)).unwrap();
    let mut acc = MomentAccumulator::new();
    acc.add(&ms).unwrap();
    acc.add(&ms).unwrap();
    let avg = acc.finish().unwrap();
    assert!(max_abs_diff(&avg, &ms) < 1e-16);
    assert_eq!(avg.count, 2);
}

#[test]
fn accumulator_weights_by_count() {
    let a = empirical_ac(&random_measurement(24, 2.0, 1)).unwrap();
    let b = empirical_ac(&random_measurement(24, 2.0, 2)).unwrap();
    let c = empirical_ac(&random_measurement(24, 2.0, 3)).unwrap();
    let mut ab = MomentAccumulator::new();
    ab.add(&a).unwrap();
    ab.add(&b).unwrap();
    let mut all = MomentAccumulator::new();
    all.add(&ab.finish().unwrap()).unwrap();
    all.add(&c).unwrap();
    let all = all.finish().unwrap();
    assert!((all.a1 - (a.a1 + b.a1 + c.a1) / 3.0).abs() < 1e-15);
}

#[test]
fn mismatched_sets_are_not_averaged() {
    let mut acc = MomentAccumulator::new();
    acc.add(&MomentSet::zeros(24, 2.0)).unwrap();
    assert!(acc.add(&MomentSet::zeros(30, 2.0)).is_err());
    assert!(MomentAccumulator::new().finish().is_err());
}

#[test]
fn moment_file_round_trip() {
    let ms = empirical_ac(&random_measurement(24, 2.5, 7)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.bin");
    ms.save(&p).unwrap();
    assert_eq!(MomentSet::load(&p).unwrap(), ms);
    std::fs::write(&p, b"garbage").unwrap();
    assert!(MomentSet::load(&p).is_err());
}

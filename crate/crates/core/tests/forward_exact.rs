//! The forward model against empirical moments of tiny measurements,
//! averaged exactly over every combination of rotation angles.

mod common;

use std::f64::consts::PI;

use common::{averaged, max_rel};
use mtd2d::forward::ForwardModel;
use mtd2d::image_moments::FreqVectors;
use mtd2d::separation::separation_functions;
use mtd2d::{BasisSpec, BasisTables};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check(locs: &[(i64, i64)], side: usize, use_sep: bool) -> (f64, f64, f64) {
    let spec = BasisSpec::with_count(2.0, 6).unwrap();
    let tables = BasisTables::build(&spec);
    let fv = FreqVectors::new(&tables);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let alpha = spec.random(&mut rng);
    let m = 6 * spec.nu_max as usize + 1;
    let emp = averaged(side, &tables, &alpha, locs, m);
    let sep = separation_functions(locs, spec.radius);
    let gamma = locs.len() as f64 * PI * spec.radius * spec.radius / (side * side) as f64;
    let model = ForwardModel::new(spec.radius, 0.0, use_sep.then_some(&sep)).unwrap();
    let pred = model.predict_ac(&fv, &alpha, gamma);
    (
        (pred.a1 - emp.a1).abs() / emp.a1.abs(),
        max_rel(&pred.a2, &emp.a2),
        max_rel(&pred.a3, &emp.a3),
    )
}

#[test]
fn single_occurrence_matches_exactly() {
    let (e1, e2, e3) = check(&[(8, 8)], 18, false);
    assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10, "{e1} {e2} {e3}");
}

#[test]
fn separated_pair_matches_without_separation_terms() {
    let (e1, e2, e3) = check(&[(4, 4), (4, 13)], 18, false);
    assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10, "{e1} {e2} {e3}");
}

#[test]
fn close_pair_matches_with_separation_terms() {
    let (e1, e2, e3) = check(&[(6, 6), (8, 10)], 18, true);
    assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10, "{e1} {e2} {e3}");
}

#[test]
fn close_triple_matches_with_separation_terms() {
    let (e1, e2, e3) = check(&[(6, 6), (6, 10), (10, 7)], 18, true);
    assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10, "{e1} {e2} {e3}");
}

#[test]
fn close_triple_differs_without_separation_terms() {
    let (_, e2, e3) = check(&[(6, 6), (6, 10), (10, 7)], 18, false);
    assert!(e2 > 1e-3 && e3 > 1e-3, "{e2} {e3}");
}

#[test]
fn pair_at_the_window_edge_is_captured() {
    // n = 2: L = 4 and the window reaches 2L - 2 = 6; the image support is
    // +-1 pixel, so offset 5 is the farthest one that interacts
    let (e1, e2, e3) = check(&[(6, 4), (6, 10)], 18, true);
    assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10, "{e1} {e2} {e3}");
    let (e1, e2, e3) = check(&[(4, 4), (10, 10)], 18, true);
    assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10, "{e1} {e2} {e3}");
    let (e1, e2, e3) = check(&[(6, 4), (6, 9)], 18, true);
    assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10, "{e1} {e2} {e3}");
    let (_, e2, e3) = check(&[(6, 4), (6, 9)], 18, false);
    assert!(e2 > 1e-6 || e3 > 1e-6, "{e2} {e3}");
}

#[test]
fn pair_beyond_the_window_does_not_interact() {
    let (e1, e2, e3) = check(&[(6, 3), (6, 10)], 18, false);
    assert!(e1 < 1e-10 && e2 < 1e-10 && e3 < 1e-10, "{e1} {e2} {e3}");
}

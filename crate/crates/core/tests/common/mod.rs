//! Independent oracles shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use mtd2d::image_moments::SpatialMoments;
use mtd2d::measurement::render_measurement;
use mtd2d::moments::{empirical_ac, MomentAccumulator};
use mtd2d::{BasisTables, CoefficientVector, Complex64, Measurement, MomentSet};

/// Spatial moments from synthesized images on a dense angle grid.
pub fn oracle(tables: &BasisTables, alpha: &CoefficientVector, radius: usize, angles: usize) -> SpatialMoments {
    let n = tables.spec.radius;
    let c = 1.0 / (4.0 * n * n);
    let h = tables.half as i64;
    let r = radius as i64;
    let mut s = SpatialMoments::zeros(radius);
    let imgs: Vec<_> = (0..angles)
        .map(|a| tables.synthesize(alpha, 2.0 * PI * a as f64 / angles as f64).unwrap())
        .collect();
    // rotation average keeps only the nu = 0 part
    let mut bar_alpha = alpha.clone();
    for (v, idx) in tables.spec.indices.iter().enumerate() {
        if idx.nu != 0 {
            bar_alpha.values[v] = Complex64::new(0.0, 0.0);
        }
    }
    let bar = tables.synthesize(&bar_alpha, 0.0).unwrap();
    s.s1 = c * bar.sum();
    let px = |img: &mtd2d::ImageGrid, y: i64, x: i64| -> f64 {
        if y.abs() > h || x.abs() > h {
            0.0
        } else {
            img.at(y, x)
        }
    };
    let m = angles as f64;
    for ay in -r..=r {
        for ax in -r..=r {
            let i = s.index2((ay, ax)).unwrap();
            let mut acc = 0.0;
            for img in &imgs {
                for y in -h..=h {
                    for x in -h..=h {
                        acc += px(img, y, x) * px(img, y + ay, x + ax);
                    }
                }
            }
            s.s2[i] = c * acc / m;
            let mut accp = 0.0;
            for y in -h..=h {
                for x in -h..=h {
                    accp += px(&bar, y, x) * px(&bar, y + ay, x + ax);
                }
            }
            s.s2pair[i] = c * accp;
            for by in -r..=r {
                for bx in -r..=r {
                    let j = s.index4((ay, ax), (by, bx)).unwrap();
                    let (mut a3, mut ap, mut at) = (0.0, 0.0, 0.0);
                    for y in -h..=h {
                        for x in -h..=h {
                            let fb0 = px(&bar, y, x);
                            let fb1 = px(&bar, y + ay, x + ax);
                            let fb2 = px(&bar, y + by, x + bx);
                            at += fb0 * fb1 * fb2;
                            for img in &imgs {
                                let f0 = px(img, y, x);
                                let f1 = px(img, y + ay, x + ax);
                                a3 += f0 * f1 * px(img, y + by, x + bx);
                                ap += f0 * f1 * fb2;
                            }
                        }
                    }
                    s.s3[j] = c * a3 / m;
                    s.s3pair[j] = c * ap / m;
                    s.s3trip[j] = c * at;
                }
            }
        }
    }
    s
}

/// Empirical moments averaged over every combination of `m` equispaced
/// rotation angles, one per occurrence.
pub fn averaged(
    side: usize,
    tables: &BasisTables,
    alpha: &CoefficientVector,
    locs: &[(i64, i64)],
    m: usize,
) -> MomentSet {
    let grid: Vec<f64> = (0..m).map(|a| 2.0 * PI * a as f64 / m as f64).collect();
    let mut acc = MomentAccumulator::new();
    let k = locs.len();
    let total = m.pow(k as u32);
    for idx in 0..total {
        let mut r = idx;
        let angles: Vec<f64> = (0..k)
            .map(|_| {
                let a = grid[r % m];
                r /= m;
                a
            })
            .collect();
        let meas = render_measurement(side, tables, alpha, locs, Some(&angles), 0.0, 0).unwrap();
        acc.add(&empirical_ac(&meas).unwrap()).unwrap();
    }
    acc.finish().unwrap()
}

/// Zero-padded sums written out as plain loops.
pub fn naive(m: &Measurement) -> MomentSet {
    let n = m.side as i64;
    let mut out = MomentSet::zeros(m.side, m.radius);
    let l = out.window as i64;
    let at = |y: i64, x: i64| -> f64 {
        if y < n && x < n {
            m.grid[(y * n + x) as usize]
        } else {
            0.0
        }
    };
    let norm = 1.0 / (n * n) as f64;
    out.a1 = m.grid.iter().sum::<f64>() * norm;
    for a in 0..l * l {
        let (ay, ax) = (a / l, a % l);
        let mut acc = 0.0;
        for y in 0..n {
            for x in 0..n {
                acc += at(y, x) * at(y + ay, x + ax);
            }
        }
        out.a2[a as usize] = acc * norm;
        for b in 0..l * l {
            let (by, bx) = (b / l, b % l);
            let mut acc = 0.0;
            for y in 0..n {
                for x in 0..n {
                    acc += at(y, x) * at(y + ay, x + ax) * at(y + by, x + bx);
                }
            }
            out.a3[(a * l * l + b) as usize] = acc * norm;
        }
    }
    out
}

/// Largest absolute difference relative to the largest reference magnitude.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}


//! Predicted measurement autocorrelations from image moments, density,
//! noise level and separation functions.
//!
//! With `g = (4/pi) gamma` (the expected number of occurrences per `N^2`
//! pixels times `4 n^2`), for shifts `l, l1, l2` in `{0, .., L-1}^2`:
//!
//! ```text
//! a1        = g S1
//! a2[l]     = g (S2[l] + sum_u xi[u] S2pair[u - l]) + sigma^2 [l = 0]
//! a3[l1,l2] = g (S3[l1,l2]
//!               + sum_u xi[u] (S3pair[l2-l1, u-l1] + S3pair[l2, l1-u] + S3pair[l1, l2-u])
//!               + sum_{u,v} T[u,v] S3trip[l1+u, l2+v]
//!               + S1 sigma^2 ([l1 = 0] + [l2 = 0] + [l1 = l2]))
//! ```
//!
//! where `T[u,v] = p zeta[u,v] - [u = v] xi[u]` weighs configurations with
//! two distinct neighbors.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use num_complex::Complex64;

use crate::basis::CoefficientVector;
use crate::error::{Error, Result};
use crate::image_moments::{FreqVectors, SpatialMoments};
use crate::separation::{Offset, SeparationFunctions};

/// Converts the density `gamma = p pi n^2 / N^2` to the moment scale
/// `p 4 n^2 / N^2` implied by the `1/(4 n^2)` image-moment normalization.
pub const DENSITY_TO_OCCUPANCY: f64 = 4.0 / PI;

#[derive(Clone, Debug, PartialEq)]
pub struct ForwardPrediction {
    pub window: usize,
    pub a1: f64,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
}

impl ForwardPrediction {
    pub fn zeros(window: usize) -> Self {
        Self {
            window,
            a1: 0.0,
            a2: vec![0.0; window * window],
            a3: vec![0.0; window.pow(4)],
        }
    }
}

/// Partial derivatives of every predicted entry: one column per free real
/// parameter followed by one for `gamma`.
#[derive(Clone, Debug)]
pub struct PredictionJacobian {
    pub columns: Vec<ForwardPrediction>,
}

#[derive(Clone, Debug)]
pub struct ForwardModel {
    pub window: usize,
    pub sigma: f64,
    pairs: Vec<(Offset, f64)>,
    triplets: Vec<(Offset, Offset, f64)>,
}

fn span(center: i64, r: i64, l: i64) -> RangeInclusive<i64> {
    (center - r).max(0)..=(center + r).min(l - 1)
}

impl ForwardModel {
    /// `sep = None` gives the well-separated model.
    pub fn new(radius: f64, sigma: f64, sep: Option<&SeparationFunctions>) -> Result<Self> {
        let window = crate::moments::window_for_radius(radius);
        if !sigma.is_finite() || sigma < 0.0 {
            return Err(Error::InvalidParameter(format!("noise level {sigma}")));
        }
        let (pairs, triplets) = match sep {
            None => (Vec::new(), Vec::new()),
            Some(s) => {
                if s.window != window {
                    return Err(Error::SizeMismatch(format!(
                        "separation window {} but moment window {window}",
                        s.window
                    )));
                }
                (s.pair_weights(), s.triplet_weights())
            }
        };
        Ok(Self {
            window,
            sigma,
            pairs,
            triplets,
        })
    }

    pub fn is_well_separated(&self) -> bool {
        self.pairs.is_empty() && self.triplets.is_empty()
    }

    #[inline]
    fn a3_index(&self, l1: Offset, l2: Offset) -> usize {
        let l = self.window as i64;
        (((l1.0 * l + l1.1) * l + l2.0) * l + l2.1) as usize
    }

    /// Prediction without the constant `sigma^2` term in `a2`, scaled by `g`.
    fn linear(&self, g: f64, s: &SpatialMoments) -> ForwardPrediction {
        let l = self.window as i64;
        let r = s.radius as i64;
        let w = s.width as i64;
        let w2 = (w * w) as usize;
        let i2 = |a: Offset| ((a.0 + r) * w + a.1 + r) as usize;
        let mut out = ForwardPrediction::zeros(self.window);
        out.a1 = g * s.s1;
        let s2 = &s.s2;
        for ly in 0..l {
            for lx in 0..l {
                out.a2[(ly * l + lx) as usize] = s2[i2((ly, lx))];
            }
        }
        for &(u, xi) in &self.pairs {
            for ly in span(u.0, r, l) {
                for lx in span(u.1, r, l) {
                    out.a2[(ly * l + lx) as usize] += xi * s.s2pair[i2((u.0 - ly, u.1 - lx))];
                }
            }
        }
        for v in out.a2.iter_mut() {
            *v *= g;
        }

        let shifts: Vec<Offset> = (0..l).flat_map(|y| (0..l).map(move |x| (y, x))).collect();
        for &l1 in &shifts {
            for &l2 in &shifts {
                out.a3[self.a3_index(l1, l2)] = s.s3[i2(l1) * w2 + i2(l2)];
            }
        }
        let p = &s.s3pair;
        for &(u, xi) in &self.pairs {
            let (ry, rx) = (span(u.0, r, l), span(u.1, r, l));
            for l1y in ry.clone() {
                for l1x in rx.clone() {
                    let l1 = (l1y, l1x);
                    let b = i2((u.0 - l1y, u.1 - l1x));
                    for l2y in ry.clone() {
                        for l2x in rx.clone() {
                            let a = i2((l2y - l1y, l2x - l1x));
                            out.a3[self.a3_index(l1, (l2y, l2x))] += xi * p[a * w2 + b];
                        }
                    }
                    let b = i2((l1y - u.0, l1x - u.1));
                    for &l2 in &shifts {
                        out.a3[self.a3_index(l1, l2)] += xi * p[i2(l2) * w2 + b];
                    }
                }
            }
            for &l1 in &shifts {
                let a = i2(l1) * w2;
                for l2y in ry.clone() {
                    for l2x in rx.clone() {
                        let b = i2((l2y - u.0, l2x - u.1));
                        out.a3[self.a3_index(l1, (l2y, l2x))] += xi * p[a + b];
                    }
                }
            }
        }
        let t = &s.s3trip;
        for &(u, v, wt) in &self.triplets {
            for l1y in span(-u.0, r, l) {
                for l1x in span(-u.1, r, l) {
                    let a = i2((l1y + u.0, l1x + u.1)) * w2;
                    for l2y in span(-v.0, r, l) {
                        for l2x in span(-v.1, r, l) {
                            let b = i2((l2y + v.0, l2x + v.1));
                            out.a3[self.a3_index((l1y, l1x), (l2y, l2x))] += wt * t[a + b];
                        }
                    }
                }
            }
        }
        let spike = s.s1 * self.sigma * self.sigma;
        for &l1 in &shifts {
            for &l2 in &shifts {
                let mut k = 0.0;
                if l1 == (0, 0) {
                    k += 1.0;
                }
                if l2 == (0, 0) {
                    k += 1.0;
                }
                if l1 == l2 {
                    k += 1.0;
                }
                if k > 0.0 {
                    out.a3[self.a3_index(l1, l2)] += k * spike;
                }
            }
        }
        for v in out.a3.iter_mut() {
            *v *= g;
        }
        out
    }

    /// Predicted autocorrelations for density `gamma` and spatial moments `s`.
    pub fn predict(&self, gamma: f64, s: &SpatialMoments) -> ForwardPrediction {
        let mut out = self.linear(DENSITY_TO_OCCUPANCY * gamma, s);
        out.a2[0] += self.sigma * self.sigma;
        out
    }

    pub fn predict_ac(&self, fv: &FreqVectors, alpha: &CoefficientVector, gamma: f64) -> ForwardPrediction {
        self.predict(gamma, &fv.spatial(alpha))
    }

    /// Pulls adjoint weights on the predictions back to the spatial moments
    /// and `gamma`: with `df = r1 da1 + <r2, da2> + <r3, da3>`, returns the
    /// moment adjoint and `df/dgamma`.
    pub fn adjoint(&self, gamma: f64, s: &SpatialMoments, r: &ForwardPrediction) -> (SpatialMoments, f64) {
        let g = DENSITY_TO_OCCUPANCY * gamma;
        let unit = self.linear(1.0, s);
        let dgamma = DENSITY_TO_OCCUPANCY
            * (r.a1 * unit.a1
                + r.a2.iter().zip(&unit.a2).map(|(a, b)| a * b).sum::<f64>()
                + r.a3.iter().zip(&unit.a3).map(|(a, b)| a * b).sum::<f64>());

        let l = self.window as i64;
        let rad = s.radius as i64;
        let w = s.width as i64;
        let w2 = (w * w) as usize;
        let i2 = |a: Offset| ((a.0 + rad) * w + a.1 + rad) as usize;
        let mut adj = SpatialMoments::zeros(s.radius);
        adj.s1 = g * r.a1;
        for ly in 0..l {
            for lx in 0..l {
                adj.s2[i2((ly, lx))] += g * r.a2[(ly * l + lx) as usize];
            }
        }
        for &(u, xi) in &self.pairs {
            for ly in span(u.0, rad, l) {
                for lx in span(u.1, rad, l) {
                    adj.s2pair[i2((u.0 - ly, u.1 - lx))] += g * xi * r.a2[(ly * l + lx) as usize];
                }
            }
        }
        let shifts: Vec<Offset> = (0..l).flat_map(|y| (0..l).map(move |x| (y, x))).collect();
        let r3: Vec<f64> = r.a3.iter().map(|v| v * g).collect();
        for &l1 in &shifts {
            for &l2 in &shifts {
                adj.s3[i2(l1) * w2 + i2(l2)] += r3[self.a3_index(l1, l2)];
            }
        }
        let p = &mut adj.s3pair;
        for &(u, xi) in &self.pairs {
            let (ry, rx) = (span(u.0, rad, l), span(u.1, rad, l));
            for l1y in ry.clone() {
                for l1x in rx.clone() {
                    let l1 = (l1y, l1x);
                    let b = i2((u.0 - l1y, u.1 - l1x));
                    for l2y in ry.clone() {
                        for l2x in rx.clone() {
                            let a = i2((l2y - l1y, l2x - l1x));
                            p[a * w2 + b] += xi * r3[self.a3_index(l1, (l2y, l2x))];
                        }
                    }
                    let b = i2((l1y - u.0, l1x - u.1));
                    for &l2 in &shifts {
                        p[i2(l2) * w2 + b] += xi * r3[self.a3_index(l1, l2)];
                    }
                }
            }
            for &l1 in &shifts {
                let a = i2(l1) * w2;
                for l2y in ry.clone() {
                    for l2x in rx.clone() {
                        let b = i2((l2y - u.0, l2x - u.1));
                        p[a + b] += xi * r3[self.a3_index(l1, (l2y, l2x))];
                    }
                }
            }
        }
        let t = &mut adj.s3trip;
        for &(u, v, wt) in &self.triplets {
            for l1y in span(-u.0, rad, l) {
                for l1x in span(-u.1, rad, l) {
                    let a = i2((l1y + u.0, l1x + u.1)) * w2;
                    for l2y in span(-v.0, rad, l) {
                        for l2x in span(-v.1, rad, l) {
                            let b = i2((l2y + v.0, l2x + v.1));
                            t[a + b] += wt * r3[self.a3_index((l1y, l1x), (l2y, l2x))];
                        }
                    }
                }
            }
        }
        let s2 = self.sigma * self.sigma;
        for &l1 in &shifts {
            for &l2 in &shifts {
                let k = (l1 == (0, 0)) as u8 + (l2 == (0, 0)) as u8 + (l1 == l2) as u8;
                if k > 0 {
                    adj.s1 += k as f64 * s2 * r3[self.a3_index(l1, l2)];
                }
            }
        }
        (adj, dgamma)
    }

    /// Jacobian of the prediction with respect to the free real parameters
    /// of `alpha` and `gamma`, from the closed-form moment Jacobians.
    pub fn grad_predict(&self, fv: &FreqVectors, alpha: &CoefficientVector, gamma: f64) -> PredictionJacobian {
        let spec = &fv.tables.spec;
        let jac = fv.grad_moments(alpha);
        let g = DENSITY_TO_OCCUPANCY * gamma;
        let nf = spec.num_free();
        let mut unit = vec![0.0; nf];
        let mut columns = Vec::with_capacity(nf + 1);
        for j in 0..nf {
            unit[j] = 1.0;
            let dalpha: Vec<Complex64> = spec.from_free(&unit).values;
            unit[j] = 0.0;
            let ds = fv.spatial_directional(&jac, &dalpha);
            columns.push(self.linear(g, &ds));
        }
        let s = fv.spatial(alpha);
        columns.push(self.linear(DENSITY_TO_OCCUPANCY, &s));
        PredictionJacobian { columns }
    }
}

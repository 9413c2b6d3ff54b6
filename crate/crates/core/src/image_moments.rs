//! Rotationally averaged image moments evaluated in the Fourier domain.
//!
//! With `F_phi^[k] = sum_v alpha_v psi_hat_v[k] exp(i nu_v phi)` and the
//! rotation average `Fbar^[k] = sum_q alpha_{0,q} psi_hat_{0,q}[k]`:
//!
//! - `S2^[k]      = c avg_phi F^[k] F^[-k]`
//! - `S2pair^[k]  = c Fbar^[k] Fbar^[-k]`
//! - `S3^[k1,k2]  = c avg_phi F^[k1] F^[k2] F^[k3]`, `k3 = -k1-k2`
//! - `S3pair^     = c Fbar^[k2] avg_phi F^[k1] F^[k3]`
//! - `S3trip^     = c Fbar^[k1] Fbar^[k2] Fbar^[k3]`
//!
//! with `c = 1/(4 n^2)`. Averages use uniform angle grids with `4 nu_max + 1`
//! points (second order products) and `6 nu_max` points (third order), which
//! integrate the trigonometric polynomials exactly.
//!
//! Spatial tensors cover offsets `-R..=R` per axis, `R = ceil(2n) - 1`.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::basis::{BasisTables, CoefficientVector};
use crate::dft;

type C = Complex64;
const ZERO: C = C::new(0.0, 0.0);

/// Precomputed phases, index maps and inverse-DFT matrices for one basis.
#[derive(Clone, Debug)]
pub struct FreqVectors {
    pub tables: BasisTables,
    pub dft_len: usize,
    /// Spatial offset radius `R`.
    pub radius: usize,
    /// Spatial width `2R + 1`.
    pub width: usize,
    pub angles2: Vec<f64>,
    pub angles3: Vec<f64>,
    pub norm: f64,
    nus: Vec<i32>,
    neg: Vec<usize>,
    idft: Vec<C>,
    idft_t: Vec<C>,
}

/// Rotated image spectra on both angle grids plus the rotation average.
#[derive(Clone, Debug)]
pub struct Fields {
    pub rot2: Vec<Vec<C>>,
    pub rot3: Vec<Vec<C>>,
    pub bar: Vec<C>,
}

/// Moments on the `D x D` (or `D^4`) frequency lattice.
#[derive(Clone, Debug)]
pub struct ImageMomentSet {
    pub s1: f64,
    pub s2: Vec<C>,
    pub s2pair: Vec<C>,
    pub s3: Vec<C>,
    pub s3pair: Vec<C>,
    pub s3trip: Vec<C>,
}

/// Real spatial moments over offsets `-R..=R`.
///
/// 2-D index `(a.y + R) * W + (a.x + R)`; 4-D index
/// `((a.y * W + a.x) * W + b.y) * W + b.x` with shifted offsets.
#[derive(Clone, Debug, PartialEq)]
pub struct SpatialMoments {
    pub radius: usize,
    pub width: usize,
    pub s1: f64,
    pub s2: Vec<f64>,
    pub s2pair: Vec<f64>,
    pub s3: Vec<f64>,
    pub s3pair: Vec<f64>,
    pub s3trip: Vec<f64>,
}

impl SpatialMoments {
    pub fn zeros(radius: usize) -> Self {
        let w = 2 * radius + 1;
        Self {
            radius,
            width: w,
            s1: 0.0,
            s2: vec![0.0; w * w],
            s2pair: vec![0.0; w * w],
            s3: vec![0.0; w.pow(4)],
            s3pair: vec![0.0; w.pow(4)],
            s3trip: vec![0.0; w.pow(4)],
        }
    }

    #[inline]
    pub fn index2(&self, a: (i64, i64)) -> Option<usize> {
        let r = self.radius as i64;
        if a.0.abs() > r || a.1.abs() > r {
            return None;
        }
        Some(((a.0 + r) as usize) * self.width + (a.1 + r) as usize)
    }

    #[inline]
    pub fn index4(&self, a: (i64, i64), b: (i64, i64)) -> Option<usize> {
        let i = self.index2(a)?;
        let j = self.index2(b)?;
        Some(i * self.width * self.width + j)
    }

    pub fn s2_at(&self, a: (i64, i64)) -> f64 {
        self.index2(a).map_or(0.0, |i| self.s2[i])
    }

    pub fn s2pair_at(&self, a: (i64, i64)) -> f64 {
        self.index2(a).map_or(0.0, |i| self.s2pair[i])
    }

    pub fn s3_at(&self, a: (i64, i64), b: (i64, i64)) -> f64 {
        self.index4(a, b).map_or(0.0, |i| self.s3[i])
    }

    pub fn s3pair_at(&self, a: (i64, i64), b: (i64, i64)) -> f64 {
        self.index4(a, b).map_or(0.0, |i| self.s3pair[i])
    }

    pub fn s3trip_at(&self, a: (i64, i64), b: (i64, i64)) -> f64 {
        self.index4(a, b).map_or(0.0, |i| self.s3trip[i])
    }
}

/// Holomorphic Jacobians `d S^ / d alpha_v`, entry-major: `[entry * |V| + v]`.
#[derive(Clone, Debug)]
pub struct MomentJacobians {
    pub s1: Vec<C>,
    pub s2: Vec<C>,
    pub s2pair: Vec<C>,
    pub s3: Vec<C>,
    pub s3pair: Vec<C>,
    pub s3trip: Vec<C>,
}

fn uniform_angles(count: usize) -> Vec<f64> {
    (0..count)
        .map(|a| 2.0 * PI * a as f64 / count as f64)
        .collect()
}

impl FreqVectors {
    /// Angle grids at the default counts `4 nu_max + 1` and `6 nu_max`.
    pub fn new(tables: &BasisTables) -> Self {
        let nu_max = tables.spec.nu_max as usize;
        Self::with_angle_counts(tables, 4 * nu_max + 1, (6 * nu_max).max(1))
    }

    pub fn with_angle_counts(tables: &BasisTables, second: usize, third: usize) -> Self {
        assert!(second > 0 && third > 0, "angle counts must be positive");
        let d = tables.dft_len;
        let radius = tables.spec.window() - 1;
        let width = 2 * radius + 1;
        assert!(d >= width, "DFT length {d} aliases spatial width {width}");
        let neg = (0..d * d)
            .map(|k| {
                let (ky, kx) = (k / d, k % d);
                ((d - ky) % d) * d + (d - kx) % d
            })
            .collect();
        let idft = dft::idft_crop_matrix(d, radius);
        let idft_t = dft::transpose(&idft, width, d);
        let n = tables.spec.radius;
        Self {
            tables: tables.clone(),
            dft_len: d,
            radius,
            width,
            angles2: uniform_angles(second),
            angles3: uniform_angles(third),
            norm: 1.0 / (4.0 * n * n),
            nus: tables.spec.indices.iter().map(|i| i.nu).collect(),
            neg,
            idft,
            idft_t,
        }
    }

    pub fn len(&self) -> usize {
        self.nus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nus.is_empty()
    }

    #[inline]
    fn third(&self, k1: usize, k2: usize) -> usize {
        let d = self.dft_len;
        let y = (2 * d - k1 / d - k2 / d) % d;
        let x = (2 * d - k1 % d - k2 % d) % d;
        y * d + x
    }

    /// Entry `(k, phi, v)` of the frequency vectors: `psi_hat_v[k] exp(i nu phi)`.
    pub fn omega(&self, k: usize, phi: f64, v: usize) -> C {
        self.tables.psi_hat[v][k] * C::from_polar(1.0, self.nus[v] as f64 * phi)
    }

    fn rotated(&self, alpha: &CoefficientVector, angles: &[f64]) -> Vec<Vec<C>> {
        let d2 = self.dft_len * self.dft_len;
        let nu_max = self.tables.spec.nu_max as i32;
        let mut by_order = vec![vec![ZERO; d2]; (2 * nu_max + 1) as usize];
        for (v, &nu) in self.nus.iter().enumerate() {
            let a = alpha.values[v];
            if a == ZERO {
                continue;
            }
            let dst = &mut by_order[(nu + nu_max) as usize];
            for (o, p) in dst.iter_mut().zip(&self.tables.psi_hat[v]) {
                *o += a * p;
            }
        }
        angles
            .iter()
            .map(|&phi| {
                let mut f = vec![ZERO; d2];
                for (j, g) in by_order.iter().enumerate() {
                    let ph = C::from_polar(1.0, (j as i32 - nu_max) as f64 * phi);
                    for (o, x) in f.iter_mut().zip(g) {
                        *o += ph * x;
                    }
                }
                f
            })
            .collect()
    }

    pub fn fields(&self, alpha: &CoefficientVector) -> Fields {
        let d2 = self.dft_len * self.dft_len;
        let mut bar = vec![ZERO; d2];
        for (v, &nu) in self.nus.iter().enumerate() {
            if nu == 0 {
                for (o, p) in bar.iter_mut().zip(&self.tables.psi_hat[v]) {
                    *o += alpha.values[v] * p;
                }
            }
        }
        Fields {
            rot2: self.rotated(alpha, &self.angles2),
            rot3: self.rotated(alpha, &self.angles3),
            bar,
        }
    }

    /// Image mean `(1/4n^2) sum_q alpha_{0,q} psi_hat_{0,q}[0]`.
    pub fn s1(&self, alpha: &CoefficientVector) -> f64 {
        let mut s = ZERO;
        for (v, &nu) in self.nus.iter().enumerate() {
            if nu == 0 {
                s += alpha.values[v] * self.tables.psi_hat[v][0];
            }
        }
        self.norm * s.re
    }

    pub fn s2_hat(&self, f: &Fields) -> Vec<C> {
        let d2 = self.dft_len * self.dft_len;
        let c = self.norm / f.rot2.len() as f64;
        (0..d2)
            .map(|k| {
                let nk = self.neg[k];
                f.rot2.iter().map(|r| r[k] * r[nk]).sum::<C>() * c
            })
            .collect()
    }

    pub fn s2pair_hat(&self, f: &Fields) -> Vec<C> {
        (0..f.bar.len())
            .map(|k| f.bar[k] * f.bar[self.neg[k]] * self.norm)
            .collect()
    }

    pub fn s3_hat(&self, f: &Fields) -> Vec<C> {
        let d2 = self.dft_len * self.dft_len;
        let c = self.norm / f.rot3.len() as f64;
        let mut out = vec![ZERO; d2 * d2];
        for k1 in 0..d2 {
            for k2 in 0..d2 {
                let k3 = self.third(k1, k2);
                let s: C = f.rot3.iter().map(|r| r[k1] * r[k2] * r[k3]).sum();
                out[k1 * d2 + k2] = s * c;
            }
        }
        out
    }

    pub fn s3pair_hat(&self, f: &Fields) -> Vec<C> {
        let d2 = self.dft_len * self.dft_len;
        let c = self.norm / f.rot2.len() as f64;
        let mut out = vec![ZERO; d2 * d2];
        for k1 in 0..d2 {
            for k2 in 0..d2 {
                let k3 = self.third(k1, k2);
                let s: C = f.rot2.iter().map(|r| r[k1] * r[k3]).sum();
                out[k1 * d2 + k2] = s * f.bar[k2] * c;
            }
        }
        out
    }

    pub fn s3trip_hat(&self, f: &Fields) -> Vec<C> {
        let d2 = self.dft_len * self.dft_len;
        let mut out = vec![ZERO; d2 * d2];
        for k1 in 0..d2 {
            for k2 in 0..d2 {
                let k3 = self.third(k1, k2);
                out[k1 * d2 + k2] = f.bar[k1] * f.bar[k2] * f.bar[k3] * self.norm;
            }
        }
        out
    }

    pub fn moments(&self, alpha: &CoefficientVector) -> ImageMomentSet {
        self.moments_with_fields(alpha, &self.fields(alpha))
    }

    pub fn moments_with_fields(&self, alpha: &CoefficientVector, f: &Fields) -> ImageMomentSet {
        ImageMomentSet {
            s1: self.s1(alpha),
            s2: self.s2_hat(f),
            s2pair: self.s2pair_hat(f),
            s3: self.s3_hat(f),
            s3pair: self.s3pair_hat(f),
            s3trip: self.s3trip_hat(f),
        }
    }

    fn realize(&self, hat: &[C], rank: usize) -> (Vec<f64>, f64) {
        let sp = dft::apply_all_axes(hat, rank, self.dft_len, &self.idft, self.width);
        let max_imag = sp.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        (sp.into_iter().map(|z| z.re).collect(), max_imag)
    }

    /// Spatial moments and the largest discarded imaginary part.
    pub fn to_spatial(&self, m: &ImageMomentSet) -> (SpatialMoments, f64) {
        let (s2, i2) = self.realize(&m.s2, 2);
        let (s2pair, i2p) = self.realize(&m.s2pair, 2);
        let (s3, i3) = self.realize(&m.s3, 4);
        let (s3pair, i3p) = self.realize(&m.s3pair, 4);
        let (s3trip, i3t) = self.realize(&m.s3trip, 4);
        let imag = [i2, i2p, i3, i3p, i3t].into_iter().fold(0.0, f64::max);
        (
            SpatialMoments {
                radius: self.radius,
                width: self.width,
                s1: m.s1,
                s2,
                s2pair,
                s3,
                s3pair,
                s3trip,
            },
            imag,
        )
    }

    pub fn spatial(&self, alpha: &CoefficientVector) -> SpatialMoments {
        self.to_spatial(&self.moments(alpha)).0
    }

    /// Closed-form Jacobians of every frequency-domain moment.
    pub fn grad_moments(&self, alpha: &CoefficientVector) -> MomentJacobians {
        let f = self.fields(alpha);
        let nv = self.len();
        let d2 = self.dft_len * self.dft_len;
        let psi = &self.tables.psi_hat;
        let dc: Vec<bool> = self.nus.iter().map(|&nu| nu == 0).collect();
        let ph2 = self.phase_table(&self.angles2);
        let ph3 = self.phase_table(&self.angles3);
        let c = self.norm;
        let m2 = f.rot2.len() as f64;
        let m3 = f.rot3.len() as f64;

        let s1 = (0..nv)
            .map(|v| if dc[v] { psi[v][0] * c } else { ZERO })
            .collect();

        let mut s2 = vec![ZERO; d2 * nv];
        let mut s2pair = vec![ZERO; d2 * nv];
        for k in 0..d2 {
            let nk = self.neg[k];
            for v in 0..nv {
                let mut acc = ZERO;
                for (a, r) in f.rot2.iter().enumerate() {
                    acc += ph2[a][v] * (psi[v][k] * r[nk] + r[k] * psi[v][nk]);
                }
                s2[k * nv + v] = acc * (c / m2);
                if dc[v] {
                    s2pair[k * nv + v] = (psi[v][k] * f.bar[nk] + f.bar[k] * psi[v][nk]) * c;
                }
            }
        }

        let mut s3 = vec![ZERO; d2 * d2 * nv];
        let mut s3pair = vec![ZERO; d2 * d2 * nv];
        let mut s3trip = vec![ZERO; d2 * d2 * nv];
        for k1 in 0..d2 {
            for k2 in 0..d2 {
                let k3 = self.third(k1, k2);
                let e = (k1 * d2 + k2) * nv;
                let pair_sum: C = f.rot2.iter().map(|r| r[k1] * r[k3]).sum::<C>() / m2;
                for v in 0..nv {
                    let (p1, p2, p3) = (psi[v][k1], psi[v][k2], psi[v][k3]);
                    let mut acc = ZERO;
                    for (a, r) in f.rot3.iter().enumerate() {
                        acc += ph3[a][v] * (p1 * r[k2] * r[k3] + r[k1] * p2 * r[k3] + r[k1] * r[k2] * p3);
                    }
                    s3[e + v] = acc * (c / m3);

                    let mut pacc = ZERO;
                    for (a, r) in f.rot2.iter().enumerate() {
                        pacc += ph2[a][v] * (p1 * r[k3] + r[k1] * p3);
                    }
                    let mut jp = f.bar[k2] * pacc / m2;
                    if dc[v] {
                        jp += p2 * pair_sum;
                        s3trip[e + v] = (p1 * f.bar[k2] * f.bar[k3]
                            + f.bar[k1] * p2 * f.bar[k3]
                            + f.bar[k1] * f.bar[k2] * p3)
                            * c;
                    }
                    s3pair[e + v] = jp * c;
                }
            }
        }
        MomentJacobians {
            s1,
            s2,
            s2pair,
            s3,
            s3pair,
            s3trip,
        }
    }

    fn phase_table(&self, angles: &[f64]) -> Vec<Vec<C>> {
        angles
            .iter()
            .map(|&phi| {
                self.nus
                    .iter()
                    .map(|&nu| C::from_polar(1.0, nu as f64 * phi))
                    .collect()
            })
            .collect()
    }

    /// Spatial moment directional derivative along `dalpha`, from the
    /// Jacobians.
    pub fn spatial_directional(&self, jac: &MomentJacobians, dalpha: &[C]) -> SpatialMoments {
        let nv = self.len();
        let contract = |j: &[C]| -> Vec<C> {
            j.chunks_exact(nv)
                .map(|row| row.iter().zip(dalpha).map(|(a, b)| a * b).sum())
                .collect()
        };
        let s1: C = jac.s1.iter().zip(dalpha).map(|(a, b)| a * b).sum();
        let m = ImageMomentSet {
            s1: s1.re,
            s2: contract(&jac.s2),
            s2pair: contract(&jac.s2pair),
            s3: contract(&jac.s3),
            s3pair: contract(&jac.s3pair),
            s3trip: contract(&jac.s3trip),
        };
        self.to_spatial(&m).0
    }

    /// Reverse-mode product: given `adj` with `df = sum adj * dS` over all
    /// spatial moment entries, returns `g` with `df = Re sum_v g_v dalpha_v`.
    pub fn vjp(&self, alpha: &CoefficientVector, adj: &SpatialMoments) -> Vec<C> {
        let f = self.fields(alpha);
        self.vjp_with_fields(&f, adj)
    }

    pub fn vjp_with_fields(&self, f: &Fields, adj: &SpatialMoments) -> Vec<C> {
        let d = self.dft_len;
        let d2 = d * d;
        let w = self.width;
        let lift = |g: &[f64], rank: usize| -> Vec<C> {
            let gc: Vec<C> = g.iter().map(|&x| C::new(x, 0.0)).collect();
            dft::apply_all_axes(&gc, rank, w, &self.idft_t, d)
        };
        let h2 = lift(&adj.s2, 2);
        let h2p = lift(&adj.s2pair, 2);
        let h3 = lift(&adj.s3, 4);
        let h3p = lift(&adj.s3pair, 4);
        let h3t = lift(&adj.s3trip, 4);

        let c = self.norm;
        let m2 = f.rot2.len() as f64;
        let m3 = f.rot3.len() as f64;
        let mut q2 = vec![vec![ZERO; d2]; f.rot2.len()];
        let mut q3 = vec![vec![ZERO; d2]; f.rot3.len()];
        let mut qbar = vec![ZERO; d2];

        qbar[0] += C::new(adj.s1 * c, 0.0);
        for k in 0..d2 {
            let nk = self.neg[k];
            let hs = (h2[k] + h2[nk]) * (c / m2);
            for (a, r) in f.rot2.iter().enumerate() {
                q2[a][k] += hs * r[nk];
            }
            qbar[k] += (h2p[k] + h2p[nk]) * c * f.bar[nk];
        }
        for k1 in 0..d2 {
            for k2 in 0..d2 {
                let k3 = self.third(k1, k2);
                let e = k1 * d2 + k2;
                let g3 = h3[e] * (c / m3);
                if g3 != ZERO {
                    for (a, r) in f.rot3.iter().enumerate() {
                        let (x1, x2, x3) = (r[k1], r[k2], r[k3]);
                        let q = &mut q3[a];
                        q[k1] += g3 * x2 * x3;
                        q[k2] += g3 * x1 * x3;
                        q[k3] += g3 * x1 * x2;
                    }
                }
                let gp = h3p[e] * c;
                if gp != ZERO {
                    let mut pair_sum = ZERO;
                    let gb = gp * f.bar[k2] / m2;
                    for (a, r) in f.rot2.iter().enumerate() {
                        let (x1, x3) = (r[k1], r[k3]);
                        pair_sum += x1 * x3;
                        let q = &mut q2[a];
                        q[k1] += gb * x3;
                        q[k3] += gb * x1;
                    }
                    qbar[k2] += gp * pair_sum / m2;
                }
                let gt = h3t[e] * c;
                if gt != ZERO {
                    let (b1, b2, b3) = (f.bar[k1], f.bar[k2], f.bar[k3]);
                    qbar[k1] += gt * b2 * b3;
                    qbar[k2] += gt * b1 * b3;
                    qbar[k3] += gt * b1 * b2;
                }
            }
        }

        let psi = &self.tables.psi_hat;
        let mut g = vec![ZERO; self.len()];
        for (v, &nu) in self.nus.iter().enumerate() {
            let mut acc = ZERO;
            for (angles, qs) in [(&self.angles2, &q2), (&self.angles3, &q3)] {
                for (&phi, q) in angles.iter().zip(qs.iter()) {
                    let s: C = q.iter().zip(&psi[v]).map(|(a, b)| a * b).sum();
                    acc += s * C::from_polar(1.0, nu as f64 * phi);
                }
            }
            if nu == 0 {
                acc += qbar.iter().zip(&psi[v]).map(|(a, b)| a * b).sum::<C>();
            }
            g[v] = acc;
        }
        g
    }
}

//! Point-spread convolution `y = h * M` (circular) and recovery of the mean,
//! power spectrum and bispectrum of `M` from those of `y`.
//!
//! Bispectrum convention: `B[k1, k2] = y^[k1] conj(y^[k2]) y^[k2 - k1]`.
//! Under `y^ = h^ M^` it picks up the factor `h^[k1] conj(h^[k2]) h^[k2 - k1]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::binio;
use crate::dft::fft2;
use crate::error::{Error, Result};

/// Admissibility threshold relative to `max |h^|`.
pub const CTF_THRESHOLD: f64 = 1e-6;

/// A CTF on the `N x N` frequency lattice, DFT order (zero frequency first).
#[derive(Clone, Debug, PartialEq)]
pub struct CtfSpec {
    pub side: usize,
    pub hat: Vec<Complex64>,
}

fn signed(k: usize, side: usize) -> i64 {
    if 2 * k < side {
        k as i64
    } else {
        k as i64 - side as i64
    }
}

fn wrap(k: i64, side: usize) -> usize {
    k.rem_euclid(side as i64) as usize
}

impl CtfSpec {
    /// Identity kernel.
    pub fn delta(side: usize) -> Self {
        Self::constant(side, 1.0)
    }

    pub fn constant(side: usize, c: f64) -> Self {
        Self {
            side,
            hat: vec![Complex64::new(c, 0.0); side * side],
        }
    }

    /// From a real spatial kernel, row-major, origin at index 0.
    pub fn from_kernel(side: usize, h: &[f64]) -> Result<Self> {
        if h.len() != side * side {
            return Err(Error::SizeMismatch(format!(
                "kernel has {} entries, expected {}",
                h.len(),
                side * side
            )));
        }
        let mut hat: Vec<Complex64> = h.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        fft2(&mut hat, side, side, false);
        Ok(Self { side, hat })
    }

    /// From frequency values; they must be Hermitian so the kernel is real.
    pub fn from_hat(side: usize, hat: Vec<Complex64>) -> Result<Self> {
        if hat.len() != side * side {
            return Err(Error::SizeMismatch(format!(
                "CTF has {} entries, expected {}",
                hat.len(),
                side * side
            )));
        }
        let spec = Self { side, hat };
        let scale = spec.max_abs().max(f64::MIN_POSITIVE);
        let defect = spec.hermitian_defect();
        if defect > 1e-12 * scale {
            return Err(Error::InvalidParameter(format!(
                "CTF is not Hermitian (defect {defect:e})"
            )));
        }
        Ok(spec)
    }

    /// Radially symmetric CTF from `(frequency, value)` samples, frequency in
    /// cycles per pixel, linearly interpolated and held constant past the ends.
    pub fn radial(side: usize, profile: &[(f64, f64)]) -> Result<Self> {
        if profile.is_empty() {
            return Err(Error::InvalidParameter("empty CTF profile".into()));
        }
        if profile.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(Error::InvalidParameter(
                "CTF profile frequencies must increase".into(),
            ));
        }
        let eval = |f: f64| -> f64 {
            let i = profile.partition_point(|&(x, _)| x <= f);
            if i == 0 {
                profile[0].1
            } else if i == profile.len() {
                profile[i - 1].1
            } else {
                let (x0, y0) = profile[i - 1];
                let (x1, y1) = profile[i];
                y0 + (y1 - y0) * (f - x0) / (x1 - x0)
            }
        };
        let n = side as f64;
        let hat = (0..side * side)
            .map(|k| {
                let (ky, kx) = (signed(k / side, side) as f64, signed(k % side, side) as f64);
                Complex64::new(eval((ky * ky + kx * kx).sqrt() / n), 0.0)
            })
            .collect();
        Ok(Self { side, hat })
    }

    /// Reads a two-column whitespace-separated text profile; `#` starts a comment.
    pub fn load_profile(side: usize, path: &Path) -> Result<Self> {
        let mut profile = Vec::new();
        for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
            let line = line?;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let cols: Vec<&str> = body.split_whitespace().collect();
            let parse = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| Error::Format(format!("line {}: bad number {s:?}", i + 1)))
            };
            if cols.len() != 2 {
                return Err(Error::Format(format!("line {}: expected two columns", i + 1)));
            }
            profile.push((parse(cols[0])?, parse(cols[1])?));
        }
        Self::radial(side, &profile)
    }

    pub fn max_abs(&self) -> f64 {
        self.hat.iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    pub fn hermitian_defect(&self) -> f64 {
        let n = self.side;
        (0..n * n)
            .map(|k| {
                let m = ((n - k / n) % n) * n + (n - k % n) % n;
                (self.hat[k] - self.hat[m].conj()).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Real spatial kernel.
    pub fn kernel(&self) -> Vec<f64> {
        let mut h = self.hat.clone();
        fft2(&mut h, self.side, self.side, true);
        let s = 1.0 / (self.side * self.side) as f64;
        h.iter().map(|c| c.re * s).collect()
    }

    /// Frequencies (signed) where `|h^| <= CTF_THRESHOLD max |h^|`.
    pub fn offending(&self) -> Vec<(i64, i64)> {
        let t = CTF_THRESHOLD * self.max_abs();
        let n = self.side;
        (0..n * n)
            .filter(|&k| self.hat[k].norm() <= t)
            .map(|k| (signed(k / n, n), signed(k % n, n)))
            .collect()
    }

    pub fn check_admissible(&self) -> Result<()> {
        let bad = self.offending();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::InadmissibleCtf {
                threshold: CTF_THRESHOLD * self.max_abs(),
                offending: bad
                    .into_iter()
                    .map(|(y, x)| (wrap(y, self.side), wrap(x, self.side)))
                    .collect(),
            })
        }
    }

    const MAGIC: &'static [u8; 8] = b"MTDCTF\0\0";

    /// Full-grid binary format: side then `side^2` complex values.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, Self::MAGIC, 1)?;
        binio::write_u64(w, self.side as u64)?;
        binio::write_complexes(w, &self.hat)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, Self::MAGIC, 1)?;
        let side = binio::checked_len(binio::read_u64(r)?, 1 << 15, "CTF side")?;
        let hat = binio::read_complexes(r, side * side)?;
        Self::from_hat(side, hat)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load_grid(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Circular convolution `h * M` via the frequency-domain product.
pub fn apply_ctf(m: &[f64], side: usize, ctf: &CtfSpec) -> Result<Vec<f64>> {
    if m.len() != side * side || ctf.side != side {
        return Err(Error::SizeMismatch(format!(
            "measurement {side}x{side} ({} values), CTF side {}",
            m.len(),
            ctf.side
        )));
    }
    let mut buf: Vec<Complex64> = m.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut buf, side, side, false);
    for (b, h) in buf.iter_mut().zip(&ctf.hat) {
        *b *= h;
    }
    fft2(&mut buf, side, side, true);
    let s = 1.0 / (side * side) as f64;
    Ok(buf.iter().map(|c| c.re * s).collect())
}

/// Mean, power spectrum and a band of the bispectrum of a grid.
///
/// The bispectrum is kept for `k1, k2` with both signed components in
/// `[-band, band]`; the full tensor has `N^4` entries.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentTransforms {
    pub side: usize,
    pub band: usize,
    /// `y^[0]`.
    pub mean: Complex64,
    /// `|y^[k]|^2`, DFT order.
    pub power: Vec<f64>,
    /// `B[k1, k2]`, index `((k1y * b + k1x) * b + k2y) * b + k2x` with
    /// `b = 2 band + 1` and components offset by `band`.
    pub bispectrum: Vec<Complex64>,
}

impl MomentTransforms {
    pub fn band_width(&self) -> usize {
        2 * self.band + 1
    }

    pub fn bispectrum_at(&self, k1: (i64, i64), k2: (i64, i64)) -> Complex64 {
        let b = self.band as i64;
        let w = self.band_width() as i64;
        let i = (((k1.0 + b) * w + k1.1 + b) * w + k2.0 + b) * w + k2.1 + b;
        self.bispectrum[i as usize]
    }
}

fn band_pairs(band: usize) -> impl Iterator<Item = ((i64, i64), (i64, i64))> {
    let b = band as i64;
    let r = move || -b..=b;
    r().flat_map(move |a| {
        r().flat_map(move |c| r().flat_map(move |d| r().map(move |e| ((a, c), (d, e)))))
    })
}

fn checked_band(side: usize, band: usize) -> Result<()> {
    // k2 - k1 must stay distinct from its own alias
    if 4 * band >= side {
        return Err(Error::InvalidParameter(format!(
            "bispectrum band {band} too wide for side {side}"
        )));
    }
    Ok(())
}

pub fn moment_transforms(y: &[f64], side: usize, band: usize) -> Result<MomentTransforms> {
    if y.len() != side * side {
        return Err(Error::SizeMismatch(format!(
            "{} values for a {side}x{side} grid",
            y.len()
        )));
    }
    checked_band(side, band)?;
    let mut hat: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft2(&mut hat, side, side, false);
    let at = |k: (i64, i64)| hat[wrap(k.0, side) * side + wrap(k.1, side)];
    let bispectrum = band_pairs(band)
        .map(|(k1, k2)| at(k1) * at(k2).conj() * at((k2.0 - k1.0, k2.1 - k1.1)))
        .collect();
    Ok(MomentTransforms {
        side,
        band,
        mean: hat[0],
        power: hat.iter().map(|c| c.norm_sqr()).collect(),
        bispectrum,
    })
}

/// Divides out the CTF. Fails if any `|h^[k]|` is at or below the threshold.
pub fn deconvolve_moments(t: &MomentTransforms, ctf: &CtfSpec) -> Result<MomentTransforms> {
    if ctf.side != t.side {
        return Err(Error::SizeMismatch(format!(
            "CTF side {} but statistics side {}",
            ctf.side, t.side
        )));
    }
    ctf.check_admissible()?;
    let side = t.side;
    let h = |k: (i64, i64)| ctf.hat[wrap(k.0, side) * side + wrap(k.1, side)];
    let bispectrum = band_pairs(t.band)
        .zip(&t.bispectrum)
        .map(|((k1, k2), b)| b / (h(k1) * h(k2).conj() * h((k2.0 - k1.0, k2.1 - k1.1))))
        .collect();
    Ok(MomentTransforms {
        side,
        band: t.band,
        mean: t.mean / ctf.hat[0],
        power: t
            .power
            .iter()
            .zip(&ctf.hat)
            .map(|(p, h)| p / h.norm_sqr())
            .collect(),
        bispectrum,
    })
}

/// Largest entrywise error over all three statistics, each relative to the
/// largest magnitude of the reference statistic.
pub fn transforms_relative_error(a: &MomentTransforms, reference: &MomentTransforms) -> f64 {
    let mean = (a.mean - reference.mean).norm() / reference.mean.norm().max(f64::MIN_POSITIVE);
    let pmax = reference.power.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let power = a
        .power
        .iter()
        .zip(&reference.power)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
        / pmax.max(f64::MIN_POSITIVE);
    let bmax = reference.bispectrum.iter().fold(0.0f64, |m, v| m.max(v.norm()));
    let bis = a
        .bispectrum
        .iter()
        .zip(&reference.bispectrum)
        .map(|(x, y)| (x - y).norm())
        .fold(0.0, f64::max)
        / bmax.max(f64::MIN_POSITIVE);
    mean.max(power).max(bis)
}

/// A smooth strictly positive radial CTF, `floor + (1 - floor) exp(-(f/width)^2)`.
pub fn gaussian_ctf(side: usize, width: f64, floor: f64) -> CtfSpec {
    let n = side as f64;
    let hat = (0..side * side)
        .map(|k| {
            let (ky, kx) = (signed(k / side, side) as f64, signed(k % side, side) as f64);
            let f2 = (ky * ky + kx * kx) / (n * n);
            Complex64::new(floor + (1.0 - floor) * (-f2 / (width * width)).exp(), 0.0)
        })
        .collect();
    CtfSpec { side, hat }
}

/// A radial oscillating CTF `cos(pi/2 (f/f0)^2)`: one at zero frequency,
/// first zero at `f = f0` cycles per pixel.
pub fn oscillating_ctf(side: usize, f0: f64) -> CtfSpec {
    let n = side as f64;
    let hat = (0..side * side)
        .map(|k| {
            let (ky, kx) = (signed(k / side, side) as f64, signed(k % side, side) as f64);
            let f2 = (ky * ky + kx * kx) / (n * n);
            Complex64::new((std::f64::consts::FRAC_PI_2 * f2 / (f0 * f0)).cos(), 0.0)
        })
        .collect();
    CtfSpec { side, hat }
}

//! Empirical first, second and third order autocorrelations of a
//! measurement over the shift window `{0, .., L-1}^2`, zero-padded outside
//! the grid and normalized by `1/N^2`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::binio;
use crate::error::{Error, Result};
use crate::measurement::Measurement;

/// Autocorrelations over the window `{0, .., L-1}^2`.
///
/// `a2[l.y * L + l.x]`; `a3[(l1.y * L + l1.x) * L^2 + l2.y * L + l2.x]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentSet {
    pub side: usize,
    pub radius: f64,
    pub window: usize,
    pub a1: f64,
    pub a2: Vec<f64>,
    pub a3: Vec<f64>,
    /// Number of measurements averaged into this set.
    pub count: u64,
}

/// Which summation route computes the third-order moment.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MomentPath {
    /// Row-blocked direct sums.
    Direct,
    /// One zero-padded FFT cross-correlation per first shift.
    Fft,
    /// Pick whichever has the lower operation estimate.
    Auto,
}

/// Side of the shift window for image radius `n`: `ceil(2n)`.
pub fn window_for_radius(radius: f64) -> usize {
    (2.0 * radius - 1e-9).ceil() as usize
}

impl MomentSet {
    pub fn zeros(side: usize, radius: f64) -> Self {
        let l = window_for_radius(radius);
        Self {
            side,
            radius,
            window: l,
            a1: 0.0,
            a2: vec![0.0; l * l],
            a3: vec![0.0; l.pow(4)],
            count: 0,
        }
    }

    pub fn a2_at(&self, l: (usize, usize)) -> f64 {
        self.a2[l.0 * self.window + l.1]
    }

    pub fn a3_at(&self, l1: (usize, usize), l2: (usize, usize)) -> f64 {
        let w = self.window;
        self.a3[(l1.0 * w + l1.1) * w * w + l2.0 * w + l2.1]
    }

    pub fn is_finite(&self) -> bool {
        self.a1.is_finite()
            && self.a2.iter().all(|v| v.is_finite())
            && self.a3.iter().all(|v| v.is_finite())
    }
}

fn shifts(l: usize) -> Vec<(usize, usize)> {
    (0..l).flat_map(|y| (0..l).map(move |x| (y, x))).collect()
}

/// Autocorrelations of `m` for image radius `m.radius`.
pub fn empirical_ac(m: &Measurement) -> Result<MomentSet> {
    empirical_ac_with(m, MomentPath::Auto)
}

pub fn empirical_ac_with(m: &Measurement, path: MomentPath) -> Result<MomentSet> {
    let n = m.side;
    let l = window_for_radius(m.radius);
    if m.grid.len() != n * n {
        return Err(Error::SizeMismatch(format!(
            "grid has {} values for side {n}",
            m.grid.len()
        )));
    }
    if n <= 2 * l {
        return Err(Error::WindowTooLarge { window: l, side: n });
    }
    let mut out = MomentSet::zeros(n, m.radius);
    out.count = 1;
    let norm = 1.0 / (n * n) as f64;
    out.a1 = m.grid.chunks(n).map(|r| r.iter().sum::<f64>()).sum::<f64>() * norm;
    for (i, &(dy, dx)) in shifts(l).iter().enumerate() {
        let mut acc = 0.0;
        for y in 0..n - dy {
            let r0 = &m.grid[y * n..y * n + n - dx];
            let r1 = &m.grid[(y + dy) * n + dx..(y + dy) * n + n];
            acc += dot(r0, r1);
        }
        out.a2[i] = acc * norm;
    }
    let use_fft = match path {
        MomentPath::Direct => false,
        MomentPath::Fft => true,
        MomentPath::Auto => {
            let direct = (l.pow(4) / 2 + l * l) as f64;
            let k = fft_size(n + l) as f64;
            let fft = l as f64 * l as f64 * 2.0 * 5.0 * (k * k) / (n * n) as f64 * k.log2();
            fft < direct
        }
    };
    if use_fft {
        third_order_fft(&m.grid, n, l, &mut out.a3);
    } else {
        third_order_direct(&m.grid, n, l, &mut out.a3);
    }
    for v in out.a3.iter_mut() {
        *v *= norm;
    }
    Ok(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four lanes keep the compiler vectorizing and shorten the rounding chain
    let mut s = [0.0; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        s[0] += x[0] * y[0];
        s[1] += x[1] * y[1];
        s[2] += x[2] * y[2];
        s[3] += x[3] * y[3];
    }
    let mut tail = 0.0;
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        tail += x * y;
    }
    (s[0] + s[1]) + (s[2] + s[3]) + tail
}

/// Unnormalized third-order sums, accumulated per row then across rows.
fn third_order_direct(grid: &[f64], n: usize, l: usize, a3: &mut [f64]) {
    let sh = shifts(l);
    let l2 = l * l;
    let mut prod = vec![0.0; n];
    let mut row_acc = vec![0.0; l2 * l2];
    for y in 0..n {
        row_acc.iter_mut().for_each(|v| *v = 0.0);
        for (i, &(ay, ax)) in sh.iter().enumerate() {
            if y + ay >= n {
                continue;
            }
            let r0 = &grid[y * n..(y + 1) * n];
            let ra = &grid[(y + ay) * n..(y + ay + 1) * n];
            for x in 0..n - ax {
                prod[x] = r0[x] * ra[x + ax];
            }
            for (j, &(by, bx)) in sh.iter().enumerate().skip(i) {
                if y + by >= n {
                    continue;
                }
                let rb = &grid[(y + by) * n..(y + by + 1) * n];
                let len = n - ax.max(bx);
                row_acc[i * l2 + j] = dot(&prod[..len], &rb[bx..bx + len]);
            }
        }
        for i in 0..l2 {
            for j in i..l2 {
                a3[i * l2 + j] += row_acc[i * l2 + j];
            }
        }
    }
    for i in 0..l2 {
        for j in 0..i {
            a3[i * l2 + j] = a3[j * l2 + i];
        }
    }
}

/// Smallest size `>= min` with only factors 2, 3 and 5.
fn fft_size(min: usize) -> usize {
    let mut k = min.max(1);
    loop {
        let mut r = k;
        for p in [2, 3, 5] {
            while r.is_multiple_of(p) {
                r /= p;
            }
        }
        if r == 1 {
            return k;
        }
        k += 1;
    }
}

fn fft2_real(src: &[f64], n: usize, k: usize, planner: &mut FftPlanner<f64>, inverse: bool) -> Vec<Complex64> {
    let mut buf = vec![Complex64::new(0.0, 0.0); k * k];
    for y in 0..n {
        for x in 0..n {
            buf[y * k + x].re = src[y * n + x];
        }
    }
    fft2_inplace(&mut buf, k, planner, inverse);
    buf
}

fn fft2_inplace(buf: &mut [Complex64], k: usize, planner: &mut FftPlanner<f64>, inverse: bool) {
    let f = if inverse {
        planner.plan_fft_inverse(k)
    } else {
        planner.plan_fft_forward(k)
    };
    f.process(buf);
    let mut col = vec![Complex64::new(0.0, 0.0); k];
    for c in 0..k {
        for r in 0..k {
            col[r] = buf[r * k + c];
        }
        f.process(&mut col);
        for r in 0..k {
            buf[r * k + c] = col[r];
        }
    }
}

/// Third-order sums as cross-correlations of `M * shift(M, l1)` with `M`.
fn third_order_fft(grid: &[f64], n: usize, l: usize, a3: &mut [f64]) {
    let k = fft_size(n + l);
    let mut planner = FftPlanner::new();
    let m_hat = fft2_real(grid, n, k, &mut planner, false);
    let sh = shifts(l);
    let l2 = l * l;
    let scale = 1.0 / (k * k) as f64;
    let mut prod = vec![0.0; n * n];
    for (i, &(ay, ax)) in sh.iter().enumerate() {
        prod.iter_mut().for_each(|v| *v = 0.0);
        for y in 0..n - ay {
            for x in 0..n - ax {
                prod[y * n + x] = grid[y * n + x] * grid[(y + ay) * n + x + ax];
            }
        }
        let mut p_hat = fft2_real(&prod, n, k, &mut planner, false);
        for (p, m) in p_hat.iter_mut().zip(&m_hat) {
            *p = p.conj() * m;
        }
        fft2_inplace(&mut p_hat, k, &mut planner, true);
        for (j, &(by, bx)) in sh.iter().enumerate() {
            a3[i * l2 + j] = p_hat[by * k + bx].re * scale;
        }
    }
}

/// Equal-weight running average of moment sets from many measurements.
#[derive(Clone, Debug)]
pub struct MomentAccumulator {
    sum: Option<MomentSet>,
}

impl Default for MomentAccumulator {
    fn default() -> Self {
        Self::new()
    }
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self { sum: None }
    }

    pub fn add(&mut self, ms: &MomentSet) -> Result<()> {
        match &mut self.sum {
            None => {
                let mut s = ms.clone();
                let c = ms.count as f64;
                s.a1 *= c;
                s.a2.iter_mut().for_each(|v| *v *= c);
                s.a3.iter_mut().for_each(|v| *v *= c);
                self.sum = Some(s);
            }
            Some(s) => {
                if s.side != ms.side || s.radius != ms.radius || s.window != ms.window {
                    return Err(Error::SizeMismatch(format!(
                        "moments of ({}, {}) cannot be averaged with ({}, {})",
                        ms.side, ms.radius, s.side, s.radius
                    )));
                }
                let c = ms.count as f64;
                s.a1 += c * ms.a1;
                s.a2.iter_mut().zip(&ms.a2).for_each(|(a, b)| *a += c * b);
                s.a3.iter_mut().zip(&ms.a3).for_each(|(a, b)| *a += c * b);
                s.count += ms.count;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> Result<MomentSet> {
        let mut s = self
            .sum
            .ok_or_else(|| Error::InvalidParameter("no measurements to average".into()))?;
        let c = s.count as f64;
        s.a1 /= c;
        s.a2.iter_mut().for_each(|v| *v /= c);
        s.a3.iter_mut().for_each(|v| *v /= c);
        Ok(s)
    }
}

/// Deviations of the noise-carrying entries from a model prediction.
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseFloor {
    /// `a2[0] - (gamma S2[0] + sigma^2)` up to the model's scale factor.
    pub a2_zero: f64,
    /// Largest residual on the spikes `l1 = 0`, `l2 = 0` and `l1 = l2`.
    pub spikes: [f64; 3],
}

/// Compares the zero-shift second moment and the three third-order spike
/// lines with predicted values.
pub fn noise_floor_check(ms: &MomentSet, predicted_a2: &[f64], predicted_a3: &[f64]) -> Result<NoiseFloor> {
    if predicted_a2.len() != ms.a2.len() || predicted_a3.len() != ms.a3.len() {
        return Err(Error::SizeMismatch("prediction window differs".into()));
    }
    let l = ms.window;
    let l2 = l * l;
    let mut spikes = [0.0f64; 3];
    for i in 0..l2 {
        for j in 0..l2 {
            let r = (ms.a3[i * l2 + j] - predicted_a3[i * l2 + j]).abs();
            if i == 0 {
                spikes[0] = spikes[0].max(r);
            }
            if j == 0 {
                spikes[1] = spikes[1].max(r);
            }
            if i == j {
                spikes[2] = spikes[2].max(r);
            }
        }
    }
    Ok(NoiseFloor {
        a2_zero: ms.a2[0] - predicted_a2[0],
        spikes,
    })
}

const MOM_MAGIC: &[u8; 8] = b"MTDMOMS\0";
const MOM_VERSION: u32 = 1;

impl MomentSet {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, MOM_MAGIC, MOM_VERSION)?;
        binio::write_u64(w, self.side as u64)?;
        binio::write_f64(w, self.radius)?;
        binio::write_u32(w, self.window as u32)?;
        binio::write_u64(w, self.count)?;
        binio::write_f64(w, self.a1)?;
        binio::write_f64s(w, &self.a2)?;
        binio::write_f64s(w, &self.a3)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, MOM_MAGIC, MOM_VERSION)?;
        let side = binio::checked_len(binio::read_u64(r)?, 1 << 20, "side")?;
        let radius = binio::read_f64(r)?;
        let window = binio::read_u32(r)? as usize;
        if window != window_for_radius(radius) || window > 64 {
            return Err(Error::Format(format!("window {window} for radius {radius}")));
        }
        let count = binio::read_u64(r)?;
        let a1 = binio::read_f64(r)?;
        let a2 = binio::read_f64s(r, window * window)?;
        let a3 = binio::read_f64s(r, window.pow(4))?;
        Ok(Self {
            side,
            radius,
            window,
            a1,
            a2,
            a3,
            count,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

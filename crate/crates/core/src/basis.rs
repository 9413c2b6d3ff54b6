//! Steerable Fourier-Bessel basis on a disk of radius `n` pixels.
//!
//! Basis functions are `Psi[l] = J_nu(lambda_{nu,q} |l| / n) exp(i nu angle(l))`
//! sampled at integer pixel offsets from the disk center. Rotating the image by
//! `phi` multiplies coefficient `(nu, q)` by `exp(i nu phi)`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::dft;
use crate::error::{Error, Result};

const ROOT_SAMPLE_STEP: f64 = 0.01;
const ROOT_TOLERANCE: f64 = 1e-13;
const REALITY_TOLERANCE: f64 = 1e-9;
const PINV_CUTOFF: f64 = 1e-10;

/// Bessel function of the first kind, integer order.
pub fn bessel_j(order: i32, x: f64) -> f64 {
    libm::jn(order, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesselRoot {
    pub order: u32,
    pub index: u32,
    pub value: f64,
}

/// All positive roots `lambda_{nu,q}` of `J_nu` not exceeding a bandlimit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesselRootTable {
    pub bandlimit: f64,
    /// Sorted by order, then root index.
    pub entries: Vec<BesselRoot>,
}

impl BesselRootTable {
    pub fn max_order(&self) -> u32 {
        self.entries.iter().map(|e| e.order).max().unwrap_or(0)
    }

    pub fn roots_of(&self, order: u32) -> impl Iterator<Item = &BesselRoot> {
        self.entries.iter().filter(move |e| e.order == order)
    }
}

fn bisect_root(order: i32, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = bessel_j(order, lo);
    while hi - lo > ROOT_TOLERANCE {
        let mid = 0.5 * (lo + hi);
        let fm = bessel_j(order, mid);
        if fm == 0.0 {
            return mid;
        }
        if (fm > 0.0) == (flo > 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

fn roots_of_order(order: u32, bandlimit: f64) -> Vec<f64> {
    let nu = order as i32;
    let steps = (bandlimit / ROOT_SAMPLE_STEP).floor() as usize;
    let mut xs: Vec<f64> = (1..=steps).map(|i| i as f64 * ROOT_SAMPLE_STEP).collect();
    if xs.last().is_none_or(|&x| x < bandlimit) {
        xs.push(bandlimit);
    }
    let mut roots = Vec::new();
    let mut prev_x = xs[0];
    let mut prev_f = bessel_j(nu, prev_x);
    for &x in &xs[1..] {
        let f = bessel_j(nu, x);
        if f == 0.0 {
            roots.push(x);
        } else if prev_f != 0.0 && (f > 0.0) != (prev_f > 0.0) {
            roots.push(bisect_root(nu, prev_x, x));
        }
        prev_x = x;
        prev_f = f;
    }
    roots
}

/// Roots of `J_nu` for every order, sampled on a 0.01 grid and refined by
/// bisection.
pub fn compute_bessel_roots(bandlimit: f64) -> Result<BesselRootTable> {
    if !bandlimit.is_finite() || bandlimit <= 0.0 {
        return Err(Error::InvalidParameter(format!("bandlimit {bandlimit}")));
    }
    let mut entries = Vec::new();
    for order in 0u32.. {
        let roots = roots_of_order(order, bandlimit);
        if roots.is_empty() {
            break;
        }
        entries.extend(roots.into_iter().enumerate().map(|(i, value)| BesselRoot {
            order,
            index: i as u32 + 1,
            value,
        }));
    }
    if entries.is_empty() {
        return Err(Error::EmptyBasis { bandlimit });
    }
    Ok(BesselRootTable { bandlimit, entries })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisIndex {
    pub nu: i32,
    pub q: u32,
    pub lambda: f64,
}

/// Where a free real parameter lives in the complex coefficient vector.
#[derive(Clone, Copy, Debug, PartialEq)]
enum FreeSlot {
    Real(usize),
    Imag(usize),
}

/// Radius, bandlimit and the ordered index set `V`.
///
/// `V` is ordered by `nu` from `-nu_max` to `nu_max`, then by `q`. Free real
/// parameters are the `nu >= 0` entries: one real number for `nu = 0`, a
/// real/imaginary pair otherwise. The `nu < 0` entries follow from
/// `alpha_{-nu,q} = (-1)^nu conj(alpha_{nu,q})`.
#[derive(Clone, Debug)]
pub struct BasisSpec {
    pub radius: f64,
    pub bandlimit: f64,
    pub nu_max: u32,
    pub roots: BesselRootTable,
    pub indices: Vec<BasisIndex>,
    mirror: Vec<usize>,
    free: Vec<FreeSlot>,
}

impl BasisSpec {
    pub fn new(radius: f64, bandlimit: f64) -> Result<Self> {
        if !radius.is_finite() || radius < 1.0 {
            return Err(Error::InvalidParameter(format!("radius {radius} must be >= 1")));
        }
        let roots = compute_bessel_roots(bandlimit)?;
        let nu_max = roots.max_order();
        let mut indices = Vec::new();
        for nu in -(nu_max as i32)..=(nu_max as i32) {
            for r in roots.roots_of(nu.unsigned_abs()) {
                indices.push(BasisIndex {
                    nu,
                    q: r.index,
                    lambda: r.value,
                });
            }
        }
        let mirror = indices
            .iter()
            .map(|a| {
                indices
                    .iter()
                    .position(|b| b.nu == -a.nu && b.q == a.q)
                    .expect("mirror index present")
            })
            .collect();
        let mut free = Vec::new();
        for (v, idx) in indices.iter().enumerate() {
            match idx.nu {
                0 => free.push(FreeSlot::Real(v)),
                nu if nu > 0 => {
                    free.push(FreeSlot::Real(v));
                    free.push(FreeSlot::Imag(v));
                }
                _ => {}
            }
        }
        Ok(Self {
            radius,
            bandlimit,
            nu_max,
            roots,
            indices,
            mirror,
            free,
        })
    }

    /// Basis with exactly `count` coefficients (mirrors included). The
    /// bandlimit is placed halfway between the last included root and the
    /// next one.
    pub fn with_count(radius: f64, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::InvalidParameter("coefficient count 0".into()));
        }
        let mut limit = 8.0;
        loop {
            let table = compute_bessel_roots(limit)?;
            let mut all: Vec<&BesselRoot> = table.entries.iter().collect();
            all.sort_by(|a, b| a.value.total_cmp(&b.value));
            let total: usize = all.iter().map(|r| if r.order == 0 { 1 } else { 2 }).sum();
            if total > count {
                let mut acc = 0;
                for (i, r) in all.iter().enumerate() {
                    acc += if r.order == 0 { 1 } else { 2 };
                    if acc == count {
                        let bandlimit = 0.5 * (r.value + all[i + 1].value);
                        return Self::new(radius, bandlimit);
                    }
                    if acc > count {
                        return Err(Error::InvalidParameter(format!(
                            "no bandlimit yields exactly {count} coefficients (next sizes {} and {acc})",
                            acc - if r.order == 0 { 1 } else { 2 }
                        )));
                    }
                }
            }
            limit *= 1.5;
        }
    }

    /// Number of complex coefficients `|V|`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Number of free real parameters.
    pub fn num_free(&self) -> usize {
        self.free.len()
    }

    /// Position of `(-nu, q)` for each entry of `V`.
    pub fn mirror(&self, v: usize) -> usize {
        self.mirror[v]
    }

    /// Positions of the `nu = 0` entries.
    pub fn dc_indices(&self) -> Vec<usize> {
        (0..self.len()).filter(|&v| self.indices[v].nu == 0).collect()
    }

    /// Half-width of the bounding box, `floor(n)`.
    pub fn box_half(&self) -> usize {
        self.radius.floor() as usize
    }

    /// Side of the autocorrelation shift window, `ceil(2n)`.
    pub fn window(&self) -> usize {
        (2.0 * self.radius - 1e-9).ceil() as usize
    }

    /// DFT length: `4n` rounded up to an even integer.
    pub fn dft_len(&self) -> usize {
        let d = (4.0 * self.radius - 1e-9).ceil() as usize;
        d + d % 2
    }

    /// Number of pixels inside the disk `|l| <= n`.
    pub fn disk_area(&self) -> usize {
        let h = self.box_half() as i64;
        let mut count = 0;
        for y in -h..=h {
            for x in -h..=h {
                if in_disk(x, y, self.radius) {
                    count += 1;
                }
            }
        }
        count
    }

    /// Complex coefficients from a flat vector of free real parameters.
    pub fn from_free(&self, x: &[f64]) -> CoefficientVector {
        assert_eq!(x.len(), self.num_free(), "free parameter length");
        let mut a = vec![Complex64::new(0.0, 0.0); self.len()];
        for (slot, &val) in self.free.iter().zip(x) {
            match *slot {
                FreeSlot::Real(v) => a[v].re = val,
                FreeSlot::Imag(v) => a[v].im = val,
            }
        }
        for v in 0..self.len() {
            let nu = self.indices[v].nu;
            if nu < 0 {
                let src = a[self.mirror[v]];
                a[v] = parity(nu) * src.conj();
            }
        }
        CoefficientVector { values: a }
    }

    /// Free real parameters of a coefficient vector (reads the `nu >= 0` half).
    pub fn to_free(&self, a: &CoefficientVector) -> Vec<f64> {
        self.free
            .iter()
            .map(|slot| match *slot {
                FreeSlot::Real(v) => a.values[v].re,
                FreeSlot::Imag(v) => a.values[v].im,
            })
            .collect()
    }

    /// Gradient of a real function `f` with respect to the free parameters,
    /// given `g` such that `df = Re sum_v g_v dalpha_v` for holomorphic
    /// perturbations of the complex coefficients.
    pub fn realify_gradient(&self, g: &[Complex64]) -> Vec<f64> {
        self.free
            .iter()
            .map(|slot| match *slot {
                FreeSlot::Real(v) => {
                    let nu = self.indices[v].nu;
                    if nu == 0 {
                        g[v].re
                    } else {
                        g[v].re + parity(nu) * g[self.mirror[v]].re
                    }
                }
                FreeSlot::Imag(v) => {
                    let nu = self.indices[v].nu;
                    -g[v].im + parity(nu) * g[self.mirror[v]].im
                }
            })
            .collect()
    }

    /// Largest deviation from `alpha_{-nu,q} = (-1)^nu conj(alpha_{nu,q})`,
    /// including the imaginary part of `nu = 0` entries.
    pub fn reality_defect(&self, a: &CoefficientVector) -> f64 {
        let mut worst: f64 = 0.0;
        for v in 0..self.len() {
            let nu = self.indices[v].nu;
            let expect = parity(nu) * a.values[self.mirror[v]].conj();
            worst = worst.max((a.values[v] - expect).norm());
        }
        worst
    }

    /// Coefficients rotated by `phi`: entry `(nu, q)` times `exp(i nu phi)`.
    pub fn steer(&self, a: &CoefficientVector, phi: f64) -> CoefficientVector {
        CoefficientVector {
            values: a
                .values
                .iter()
                .zip(&self.indices)
                .map(|(c, idx)| c * Complex64::from_polar(1.0, idx.nu as f64 * phi))
                .collect(),
        }
    }

    /// Standard normal free parameters.
    pub fn random<R: Rng + ?Sized>(&self, rng: &mut R) -> CoefficientVector {
        let x: Vec<f64> = (0..self.num_free()).map(|_| rng.sample(StandardNormal)).collect();
        self.from_free(&x)
    }
}

fn parity(nu: i32) -> f64 {
    if nu.rem_euclid(2) == 0 {
        1.0
    } else {
        -1.0
    }
}

fn in_disk(x: i64, y: i64, radius: f64) -> bool {
    ((x * x + y * y) as f64) <= radius * radius + 1e-9
}

/// Complex expansion coefficients over the index set `V`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefficientVector {
    pub values: Vec<Complex64>,
}

impl CoefficientVector {
    pub fn zeros(spec: &BasisSpec) -> Self {
        Self {
            values: vec![Complex64::new(0.0, 0.0); spec.len()],
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            values: self.values.iter().map(|c| c * s).collect(),
        }
    }
}

/// Real image on the `(2h+1) x (2h+1)` box centered on the disk, row-major
/// with rows indexed by the vertical offset.
#[derive(Clone, Debug, PartialEq)]
pub struct ImageGrid {
    pub half: usize,
    pub data: Vec<f64>,
}

impl ImageGrid {
    pub fn zeros(half: usize) -> Self {
        let side = 2 * half + 1;
        Self {
            half,
            data: vec![0.0; side * side],
        }
    }

    pub fn side(&self) -> usize {
        2 * self.half + 1
    }

    /// Value at offset `(dy, dx)` from the center; zero outside the box.
    pub fn at(&self, dy: i64, dx: i64) -> f64 {
        let h = self.half as i64;
        if dy.abs() > h || dx.abs() > h {
            return 0.0;
        }
        self.data[((dy + h) as usize) * self.side() + (dx + h) as usize]
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn energy(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }
}

/// Sampled basis functions and their DFTs.
#[derive(Clone, Debug)]
pub struct BasisTables {
    pub spec: BasisSpec,
    pub half: usize,
    pub dft_len: usize,
    /// `psi[v]` on the `(2h+1)^2` box, row-major.
    pub psi: Vec<Vec<Complex64>>,
    /// `psi_hat[v][ky * D + kx]` with frequencies taken modulo `D`.
    pub psi_hat: Vec<Vec<Complex64>>,
}

impl BasisTables {
    pub fn build(spec: &BasisSpec) -> Self {
        let half = spec.box_half();
        let side = 2 * half + 1;
        let d = spec.dft_len();
        let h = half as i64;
        let mut psi = vec![Vec::new(); spec.len()];
        for (v, idx) in spec.indices.iter().enumerate() {
            if idx.nu < 0 {
                continue;
            }
            let mut grid = vec![Complex64::new(0.0, 0.0); side * side];
            for y in -h..=h {
                for x in -h..=h {
                    let r2 = (x * x + y * y) as f64;
                    if r2 >= spec.radius * spec.radius - 1e-9 {
                        continue;
                    }
                    let r = r2.sqrt();
                    let radial = bessel_j(idx.nu, idx.lambda * r / spec.radius);
                    let theta = (y as f64).atan2(x as f64);
                    grid[((y + h) as usize) * side + (x + h) as usize] =
                        Complex64::from_polar(1.0, idx.nu as f64 * theta) * radial;
                }
            }
            psi[v] = grid;
        }
        for v in 0..spec.len() {
            let nu = spec.indices[v].nu;
            if nu < 0 {
                let src = &psi[spec.mirror(v)];
                psi[v] = src.iter().map(|c| parity(nu) * c.conj()).collect();
            }
        }
        let psi_hat = psi.iter().map(|g| box_dft(g, half, d)).collect();
        Self {
            spec: spec.clone(),
            half,
            dft_len: d,
            psi,
            psi_hat,
        }
    }

    pub fn side(&self) -> usize {
        2 * self.half + 1
    }

    fn combine(&self, alpha: &CoefficientVector, phi: f64) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); self.side() * self.side()];
        for (v, idx) in self.spec.indices.iter().enumerate() {
            let c = alpha.values[v] * Complex64::from_polar(1.0, idx.nu as f64 * phi);
            if c == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (o, p) in out.iter_mut().zip(&self.psi[v]) {
                *o += c * p;
            }
        }
        out
    }

    /// Image of `alpha` rotated by `phi`. Fails when the synthesized grid
    /// has a non-negligible imaginary part.
    pub fn synthesize(&self, alpha: &CoefficientVector, phi: f64) -> Result<ImageGrid> {
        if alpha.values.len() != self.spec.len() {
            return Err(Error::SizeMismatch(format!(
                "{} coefficients for a basis of {}",
                alpha.values.len(),
                self.spec.len()
            )));
        }
        let c = self.combine(alpha, phi);
        let scale = c.iter().map(|z| z.re.abs()).fold(1.0, f64::max);
        let max_imag = c.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
        if max_imag >= REALITY_TOLERANCE * scale {
            return Err(Error::RealityViolation { max_imag });
        }
        Ok(ImageGrid {
            half: self.half,
            data: c.into_iter().map(|z| z.re).collect(),
        })
    }

    /// `sum_v alpha_v psi_hat_v exp(i nu phi)` on the `D x D` lattice.
    pub fn synthesize_hat(&self, alpha: &CoefficientVector, phi: f64) -> Vec<Complex64> {
        let d = self.dft_len;
        let mut out = vec![Complex64::new(0.0, 0.0); d * d];
        for (v, idx) in self.spec.indices.iter().enumerate() {
            let c = alpha.values[v] * Complex64::from_polar(1.0, idx.nu as f64 * phi);
            for (o, p) in out.iter_mut().zip(&self.psi_hat[v]) {
                *o += c * p;
            }
        }
        out
    }

    /// Least-squares projection of an image onto the span of the basis.
    pub fn expand_image(&self, image: &ImageGrid) -> Result<CoefficientVector> {
        if image.half != self.half {
            return Err(Error::SizeMismatch(format!(
                "image half-width {} but basis half-width {}",
                image.half, self.half
            )));
        }
        let pixels = self.side() * self.side();
        let nf = self.spec.num_free();
        let mut design = DMatrix::<f64>::zeros(pixels, nf);
        let mut unit = vec![0.0; nf];
        for j in 0..nf {
            unit[j] = 1.0;
            let col = self.combine(&self.spec.from_free(&unit), 0.0);
            for (i, z) in col.iter().enumerate() {
                design[(i, j)] = z.re;
            }
            unit[j] = 0.0;
        }
        let svd = design.svd(true, true);
        let smax = svd.singular_values.max();
        let cutoff = PINV_CUTOFF * smax;
        let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
        if rank < nf {
            return Err(Error::RankDeficient { rank, params: nf });
        }
        let rhs = nalgebra::DVector::from_column_slice(&image.data);
        let x = svd
            .solve(&rhs, cutoff)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?;
        Ok(self.spec.from_free(x.as_slice()))
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, CACHE_MAGIC, CACHE_VERSION)?;
        binio::write_f64(w, self.spec.radius)?;
        binio::write_f64(w, self.spec.bandlimit)?;
        binio::write_u32(w, GRID_CONVENTION)?;
        binio::write_u32(w, self.half as u32)?;
        binio::write_u32(w, self.dft_len as u32)?;
        binio::write_u32(w, self.spec.len() as u32)?;
        for idx in &self.spec.indices {
            binio::write_i32(w, idx.nu)?;
            binio::write_u32(w, idx.q)?;
            binio::write_f64(w, idx.lambda)?;
        }
        for g in &self.psi {
            binio::write_complexes(w, g)?;
        }
        for g in &self.psi_hat {
            binio::write_complexes(w, g)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, CACHE_MAGIC, CACHE_VERSION)?;
        let radius = binio::read_f64(r)?;
        let bandlimit = binio::read_f64(r)?;
        if binio::read_u32(r)? != GRID_CONVENTION {
            return Err(Error::Format("unknown grid convention".into()));
        }
        let half = binio::read_u32(r)? as usize;
        let dft_len = binio::read_u32(r)? as usize;
        let count = binio::read_u32(r)? as usize;
        let spec = BasisSpec::new(radius, bandlimit)?;
        if spec.box_half() != half || spec.dft_len() != dft_len || spec.len() != count {
            return Err(Error::Format("basis header inconsistent with spec".into()));
        }
        for idx in &spec.indices {
            let nu = binio::read_i32(r)?;
            let q = binio::read_u32(r)?;
            let lambda = binio::read_f64(r)?;
            if nu != idx.nu || q != idx.q || (lambda - idx.lambda).abs() > 1e-12 {
                return Err(Error::Format(format!("index ({nu},{q}) mismatch")));
            }
        }
        let side = 2 * half + 1;
        let mut psi = Vec::with_capacity(count);
        for _ in 0..count {
            psi.push(binio::read_complexes(r, side * side)?);
        }
        let mut psi_hat = Vec::with_capacity(count);
        for _ in 0..count {
            psi_hat.push(binio::read_complexes(r, dft_len * dft_len)?);
        }
        Ok(Self {
            spec,
            half,
            dft_len,
            psi,
            psi_hat,
        })
    }

    /// Cache file name keyed by radius, bandlimit and grid convention.
    pub fn cache_file_name(spec: &BasisSpec) -> String {
        format!(
            "basis_{:016x}_{:016x}_g{GRID_CONVENTION}.bin",
            spec.radius.to_bits(),
            spec.bandlimit.to_bits()
        )
    }

    /// Load tables from `dir` if cached there, otherwise build and store.
    pub fn load_or_build(spec: &BasisSpec, dir: Option<&Path>) -> Result<Self> {
        let Some(dir) = dir else {
            return Ok(Self::build(spec));
        };
        let path: PathBuf = dir.join(Self::cache_file_name(spec));
        if let Ok(f) = File::open(&path) {
            if let Ok(t) = Self::read_from(&mut BufReader::new(f)) {
                return Ok(t);
            }
        }
        let tables = Self::build(spec);
        std::fs::create_dir_all(dir)?;
        let mut w = BufWriter::new(File::create(&path)?);
        tables.write_to(&mut w)?;
        w.flush()?;
        Ok(tables)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"MTDBASIS";
const CACHE_VERSION: u32 = 1;
const GRID_CONVENTION: u32 = 1;

/// DFT of a box-supported grid on the `D x D` lattice, offsets wrapped mod `D`.
fn box_dft(grid: &[Complex64], half: usize, d: usize) -> Vec<Complex64> {
    let side = 2 * half + 1;
    let h = half as i64;
    let mut buf = vec![Complex64::new(0.0, 0.0); d * d];
    for y in -h..=h {
        for x in -h..=h {
            let iy = y.rem_euclid(d as i64) as usize;
            let ix = x.rem_euclid(d as i64) as usize;
            buf[iy * d + ix] += grid[((y + h) as usize) * side + (x + h) as usize];
        }
    }
    dft::fft2(&mut buf, d, d, false);
    buf
}

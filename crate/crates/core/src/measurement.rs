//! Synthetic measurements: rotated copies of the image dropped on a large grid
//! plus white Gaussian noise.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::basis::{BasisTables, CoefficientVector};
use crate::binio;
use crate::error::{Error, Result};

/// Attempts allowed per requested occurrence during dart throwing.
pub const ATTEMPTS_PER_OCCURRENCE: usize = 100;

const STREAM_PLACEMENT: u64 = 1;
const STREAM_ANGLES: u64 = 2;
const STREAM_NOISE: u64 = 3;

/// Seeded generator on a fixed stream, so placements, angles and noise do
/// not depend on each other's draw counts.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Occurrence count for a target density `gamma = p pi n^2 / N^2`.
pub fn density_to_count(gamma: f64, side: usize, radius: f64) -> Result<usize> {
    if !gamma.is_finite() || gamma <= 0.0 || gamma >= 1.0 {
        return Err(Error::InvalidParameter(format!(
            "density {gamma} must lie in (0, 1)"
        )));
    }
    let p = (gamma * (side * side) as f64 / (PI * radius * radius)).round();
    if p < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "density {gamma} gives no occurrence on a {side}x{side} grid"
        )));
    }
    let p = p as usize;
    let box_side = (2.0 * radius).ceil() as usize;
    let usable = side.saturating_sub(2 * radius.floor() as usize);
    if p * box_side * box_side > usable * usable {
        return Err(Error::InvalidParameter(format!(
            "density {gamma} ({p} occurrences) cannot be packed without overlap"
        )));
    }
    Ok(p)
}

/// Density implied by `count` occurrences.
pub fn count_to_density(count: usize, side: usize, radius: f64) -> f64 {
    count as f64 * PI * radius * radius / (side * side) as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementMode {
    /// Chebyshev distance at least `4n - 1` between any two centers.
    WellSeparated,
    /// Chebyshev distance at least `2n`: copies only need to not overlap.
    ArbitrarySpacing,
}

impl PlacementMode {
    /// Smallest allowed Chebyshev distance between two centers.
    pub fn min_separation(self, radius: f64) -> i64 {
        match self {
            PlacementMode::WellSeparated => (4.0 * radius - 1.0 - 1e-9).ceil() as i64,
            PlacementMode::ArbitrarySpacing => (2.0 * radius - 1e-9).ceil() as i64,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PlacementTarget {
    Density(f64),
    Count(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlacementPolicy {
    pub mode: PlacementMode,
    pub target: PlacementTarget,
}

impl PlacementPolicy {
    pub fn count(&self, side: usize, radius: f64) -> Result<usize> {
        match self.target {
            PlacementTarget::Density(g) => density_to_count(g, side, radius),
            PlacementTarget::Count(p) => Ok(p),
        }
    }
}

/// Range of valid centers (0-based, inclusive) so the image box stays inside.
pub fn center_range(side: usize, radius: f64) -> Result<(i64, i64)> {
    let h = radius.floor() as i64;
    let lo = h;
    let hi = side as i64 - 1 - h;
    if hi < lo {
        return Err(Error::WindowTooLarge {
            window: (2 * h + 1) as usize,
            side,
        });
    }
    Ok((lo, hi))
}

/// Random non-overlapping centers by uniform rejection sampling.
pub fn place_occurrences(
    side: usize,
    radius: f64,
    policy: &PlacementPolicy,
    seed: u64,
) -> Result<Vec<(i64, i64)>> {
    let count = policy.count(side, radius)?;
    let (lo, hi) = center_range(side, radius)?;
    let sep = policy.mode.min_separation(radius).max(1);
    let mut rng = stream_rng(seed, STREAM_PLACEMENT);
    let mut cells: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    let mut placed: Vec<(i64, i64)> = Vec::with_capacity(count);
    let budget = ATTEMPTS_PER_OCCURRENCE * count.max(1);
    let mut attempts = 0;
    while placed.len() < count && attempts < budget {
        attempts += 1;
        let c = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
        let cell = (c.0.div_euclid(sep), c.1.div_euclid(sep));
        let mut ok = true;
        'scan: for dy in -1..=1 {
            for dx in -1..=1 {
                if let Some(list) = cells.get(&(cell.0 + dy, cell.1 + dx)) {
                    for &j in list {
                        let o = placed[j];
                        if (o.0 - c.0).abs().max((o.1 - c.1).abs()) < sep {
                            ok = false;
                            break 'scan;
                        }
                    }
                }
            }
        }
        if ok {
            cells.entry(cell).or_default().push(placed.len());
            placed.push(c);
        }
    }
    if placed.len() < count {
        return Err(Error::PlacementInfeasible {
            requested: count,
            placed: placed.len(),
            attempts,
        });
    }
    Ok(placed)
}

/// Smallest pairwise Chebyshev distance, `None` for fewer than two centers.
pub fn min_pairwise_distance(locations: &[(i64, i64)]) -> Option<i64> {
    let mut best: Option<i64> = None;
    for i in 0..locations.len() {
        for j in i + 1..locations.len() {
            let (a, b) = (locations[i], locations[j]);
            let d = (a.0 - b.0).abs().max((a.1 - b.1).abs());
            best = Some(best.map_or(d, |x| x.min(d)));
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Placement {
    pub row: i64,
    pub col: i64,
    pub angle: f64,
}

/// An `N x N` measurement, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Measurement {
    pub side: usize,
    pub radius: f64,
    pub sigma: f64,
    pub seed: u64,
    pub grid: Vec<f64>,
    /// Ground truth, for validation only.
    pub placements: Option<Vec<Placement>>,
}

impl Measurement {
    pub fn zeros(side: usize, radius: f64) -> Self {
        Self {
            side,
            radius,
            sigma: 0.0,
            seed: 0,
            grid: vec![0.0; side * side],
            placements: None,
        }
    }

    pub fn mean(&self) -> f64 {
        self.grid.iter().sum::<f64>() / self.grid.len() as f64
    }
}

/// Uniform angles in `[0, 2 pi)`, one per occurrence.
pub fn draw_angles(count: usize, seed: u64) -> Vec<f64> {
    let mut rng = stream_rng(seed, STREAM_ANGLES);
    (0..count).map(|_| rng.gen_range(0.0..2.0 * PI)).collect()
}

/// Sum of rotated copies at `locations` plus iid `N(0, sigma^2)` noise.
pub fn render_measurement(
    side: usize,
    tables: &BasisTables,
    alpha: &CoefficientVector,
    locations: &[(i64, i64)],
    angles: Option<&[f64]>,
    sigma: f64,
    seed: u64,
) -> Result<Measurement> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!("noise level {sigma}")));
    }
    let radius = tables.spec.radius;
    let (lo, hi) = center_range(side, radius)?;
    let drawn;
    let angles = match angles {
        Some(a) => {
            if a.len() != locations.len() {
                return Err(Error::SizeMismatch(format!(
                    "{} angles for {} locations",
                    a.len(),
                    locations.len()
                )));
            }
            a
        }
        None => {
            drawn = draw_angles(locations.len(), seed);
            &drawn
        }
    };
    let mut grid = vec![0.0; side * side];
    let h = tables.half as i64;
    let bs = tables.side();
    let mut placements = Vec::with_capacity(locations.len());
    for (&(r, c), &phi) in locations.iter().zip(angles) {
        if r < lo || r > hi || c < lo || c > hi {
            return Err(Error::OutOfBounds(format!(
                "center ({r}, {c}) leaves the {side}x{side} grid"
            )));
        }
        let img = tables.synthesize(alpha, phi)?;
        for dy in 0..bs {
            let row = (r - h) as usize + dy;
            let dst = &mut grid[row * side + (c - h) as usize..][..bs];
            for (d, s) in dst.iter_mut().zip(&img.data[dy * bs..(dy + 1) * bs]) {
                *d += s;
            }
        }
        placements.push(Placement {
            row: r,
            col: c,
            angle: phi,
        });
    }
    if sigma > 0.0 {
        let mut rng = stream_rng(seed, STREAM_NOISE);
        for v in grid.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *v += sigma * e;
        }
    }
    Ok(Measurement {
        side,
        radius,
        sigma,
        seed,
        grid,
        placements: Some(placements),
    })
}

/// Noise level giving `snr = ||F||^2 / (A sigma^2)`, with `A` the disk area
/// in pixels. Infinite SNR maps to zero noise.
pub fn snr_to_sigma(tables: &BasisTables, alpha: &CoefficientVector, snr: f64) -> Result<f64> {
    if snr.is_nan() || snr <= 0.0 {
        return Err(Error::InvalidParameter(format!("snr {snr} must be positive")));
    }
    let energy = tables.synthesize(alpha, 0.0)?.energy();
    if energy <= 0.0 {
        return Err(Error::ZeroEnergy);
    }
    if snr.is_infinite() {
        return Ok(0.0);
    }
    Ok((energy / (tables.spec.disk_area() as f64 * snr)).sqrt())
}

const MEAS_MAGIC: &[u8; 8] = b"MTDMEAS\0";
const MEAS_VERSION: u32 = 1;

impl Measurement {
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, MEAS_MAGIC, MEAS_VERSION)?;
        binio::write_u64(w, self.side as u64)?;
        binio::write_f64(w, self.radius)?;
        binio::write_f64(w, self.sigma)?;
        binio::write_u64(w, self.seed)?;
        let count = self.placements.as_ref().map_or(0, |p| p.len());
        binio::write_u64(w, count as u64)?;
        binio::write_f64s(w, &self.grid)
    }

    /// Reads the grid; placements live in the JSON manifest.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, MEAS_MAGIC, MEAS_VERSION)?;
        let side = binio::checked_len(binio::read_u64(r)?, 1 << 20, "side")?;
        let radius = binio::read_f64(r)?;
        let sigma = binio::read_f64(r)?;
        let seed = binio::read_u64(r)?;
        let _count = binio::read_u64(r)?;
        let grid = binio::read_f64s(r, side * side)?;
        Ok(Self {
            side,
            radius,
            sigma,
            seed,
            grid,
            placements: None,
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

/// Sidecar JSON describing a simulated measurement.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub side: usize,
    pub radius: f64,
    pub sigma: f64,
    pub seed: u64,
    pub mode: PlacementMode,
    pub density: f64,
    pub count: usize,
    pub coefficients: Vec<[f64; 2]>,
    pub placements: Vec<Placement>,
}

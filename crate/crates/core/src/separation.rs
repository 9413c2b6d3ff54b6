//! Pair and triplet separation functions of a set of occurrence centers.
//!
//! `xi[u]      = (1/p)   sum_i sum_{j != i} [l_i - l_j = u]`
//! `zeta[u, v] = (1/p^2) sum_i sum_{j1 != i} sum_{j2 != i} [l_i - l_j1 = u][l_i - l_j2 = v]`
//!
//! Offsets are stored on the neighbor window `{-(2L-2), .., 2L-2}^2` with
//! `L = ceil(2n)`; everything farther away cannot touch the moments.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::binio;
use crate::error::{Error, Result};
use crate::measurement::{self, PlacementMode, PlacementPolicy, PlacementTarget};
use crate::moments::window_for_radius;

pub type Offset = (i64, i64);

#[derive(Clone, Debug, PartialEq)]
pub struct SeparationFunctions {
    pub window: usize,
    pub count: usize,
    /// Dense `U x U` grid, `U = 4L - 3`.
    pub xi: Vec<f64>,
    /// Dense `U^4` tensor, first pair is the offset to neighbor 1.
    pub zeta: Vec<f64>,
    /// Mass of ordered pairs outside the window, on the `xi` scale.
    pub xi_outside: f64,
    /// Mass of neighbor pairs outside the window, on the `zeta` scale.
    pub zeta_outside: f64,
}

/// Summary statistics recorded for a separation estimate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparationSummary {
    pub count: usize,
    pub xi_mass: f64,
    pub zeta_mass: f64,
    pub xi_outside: f64,
    pub zeta_outside: f64,
}

impl SeparationFunctions {
    /// Functions that vanish everywhere (the well-separated model).
    pub fn zeros(radius: f64) -> Self {
        let window = window_for_radius(radius);
        let u = 4 * window - 3;
        Self {
            window,
            count: 0,
            xi: vec![0.0; u * u],
            zeta: vec![0.0; u.pow(4)],
            xi_outside: 0.0,
            zeta_outside: 0.0,
        }
    }

    /// Inclusive offset range of the neighbor window.
    pub fn range(&self) -> (i64, i64) {
        neighbor_range(self.window)
    }

    pub fn side(&self) -> usize {
        4 * self.window - 3
    }

    fn index2(&self, u: Offset) -> Option<usize> {
        let (lo, hi) = self.range();
        if u.0 < lo || u.0 > hi || u.1 < lo || u.1 > hi {
            return None;
        }
        Some(((u.0 - lo) as usize) * self.side() + (u.1 - lo) as usize)
    }

    pub fn xi_at(&self, u: Offset) -> f64 {
        self.index2(u).map_or(0.0, |i| self.xi[i])
    }

    pub fn zeta_at(&self, u: Offset, v: Offset) -> f64 {
        match (self.index2(u), self.index2(v)) {
            (Some(i), Some(j)) => self.zeta[i * self.side() * self.side() + j],
            _ => 0.0,
        }
    }

    fn offset_of(&self, i: usize) -> Offset {
        let (lo, _) = self.range();
        let s = self.side();
        ((i / s) as i64 + lo, (i % s) as i64 + lo)
    }

    pub fn xi_mass(&self) -> f64 {
        self.xi.iter().sum()
    }

    pub fn zeta_mass(&self) -> f64 {
        self.zeta.iter().sum()
    }

    pub fn summary(&self) -> SeparationSummary {
        SeparationSummary {
            count: self.count,
            xi_mass: self.xi_mass(),
            zeta_mass: self.zeta_mass(),
            xi_outside: self.xi_outside,
            zeta_outside: self.zeta_outside,
        }
    }

    /// Nonzero `xi` entries.
    pub fn pair_weights(&self) -> Vec<(Offset, f64)> {
        self.xi
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(i, &w)| (self.offset_of(i), w))
            .collect()
    }

    /// Weights of configurations with two distinct neighbors:
    /// `p zeta[u, v] - [u = v] xi[u]`, nonzero entries only.
    pub fn triplet_weights(&self) -> Vec<(Offset, Offset, f64)> {
        let s2 = self.side() * self.side();
        let p = self.count as f64;
        let mut out = Vec::new();
        for (e, &z) in self.zeta.iter().enumerate() {
            if z == 0.0 {
                continue;
            }
            let (i, j) = (e / s2, e % s2);
            let mut w = p * z;
            if i == j {
                w -= self.xi[i];
            }
            if w.abs() > 1e-15 * p * z.abs() {
                out.push((self.offset_of(i), self.offset_of(j), w));
            }
        }
        out
    }
}

pub fn neighbor_range(window: usize) -> (i64, i64) {
    let l = window as i64;
    (-(2 * l - 2), 2 * l - 2)
}

/// For each center, the offsets `l_i - l_j` of other centers in the window.
fn neighbor_offsets(locations: &[Offset], window: usize) -> Vec<Vec<Offset>> {
    let (lo, hi) = neighbor_range(window);
    let cell = (hi - lo + 1).max(1);
    let mut grid: HashMap<Offset, Vec<usize>> = HashMap::new();
    for (i, &c) in locations.iter().enumerate() {
        grid.entry((c.0.div_euclid(cell), c.1.div_euclid(cell)))
            .or_default()
            .push(i);
    }
    locations
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let key = (c.0.div_euclid(cell), c.1.div_euclid(cell));
            let mut found = Vec::new();
            for dy in -1..=1 {
                for dx in -1..=1 {
                    if let Some(list) = grid.get(&(key.0 + dy, key.1 + dx)) {
                        for &j in list {
                            if j == i {
                                continue;
                            }
                            let o = locations[j];
                            let u = (c.0 - o.0, c.1 - o.1);
                            if u.0 >= lo && u.0 <= hi && u.1 >= lo && u.1 <= hi {
                                found.push(u);
                            }
                        }
                    }
                }
            }
            found
        })
        .collect()
}

/// Pair and triplet separation functions of `locations` for image radius `n`.
pub fn separation_functions(locations: &[Offset], radius: f64) -> SeparationFunctions {
    let mut sep = SeparationFunctions::zeros(radius);
    let p = locations.len();
    sep.count = p;
    if p < 2 {
        return sep;
    }
    let pf = p as f64;
    let nbs = neighbor_offsets(locations, sep.window);
    let s = sep.side();
    let mut in_pairs = 0usize;
    let mut in_triples = 0usize;
    for list in &nbs {
        in_pairs += list.len();
        in_triples += list.len() * list.len();
        let idx: Vec<usize> = list.iter().map(|&u| sep.index2(u).unwrap()).collect();
        for &i in &idx {
            sep.xi[i] += 1.0 / pf;
            for &j in &idx {
                sep.zeta[i * s * s + j] += 1.0 / (pf * pf);
            }
        }
    }
    let total_pairs = p * (p - 1);
    sep.xi_outside = (total_pairs - in_pairs) as f64 / pf;
    sep.zeta_outside = (p * (p - 1) * (p - 1) - in_triples) as f64 / (pf * pf);
    sep
}

/// Pair separation function alone, as a dense grid over the window.
pub fn psf(locations: &[Offset], radius: f64) -> Vec<f64> {
    separation_functions(locations, radius).xi
}

/// Triplet separation function alone, as a dense tensor over the window.
pub fn tsf(locations: &[Offset], radius: f64) -> Vec<f64> {
    separation_functions(locations, radius).zeta
}

/// Separation functions of a synthetic arbitrary-spacing placement at
/// density `gamma`. Only locations are drawn; nothing is rendered.
pub fn approximate_separation(
    gamma: f64,
    side: usize,
    radius: f64,
    seed: u64,
) -> Result<SeparationFunctions> {
    let policy = PlacementPolicy {
        mode: PlacementMode::ArbitrarySpacing,
        target: PlacementTarget::Density(gamma),
    };
    let locs = measurement::place_occurrences(side, radius, &policy, seed)?;
    Ok(separation_functions(&locs, radius))
}

const SEP_MAGIC: &[u8; 8] = b"MTDSEPF\0";
const SEP_VERSION: u32 = 1;

impl SeparationFunctions {
    /// Sparse coordinate format: nonzero entries only.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_magic(w, SEP_MAGIC, SEP_VERSION)?;
        binio::write_u32(w, self.window as u32)?;
        binio::write_u64(w, self.count as u64)?;
        binio::write_f64(w, self.xi_outside)?;
        binio::write_f64(w, self.zeta_outside)?;
        let xs = self.pair_weights();
        binio::write_u64(w, xs.len() as u64)?;
        for (u, val) in xs {
            binio::write_i32(w, u.0 as i32)?;
            binio::write_i32(w, u.1 as i32)?;
            binio::write_f64(w, val)?;
        }
        let s2 = self.side() * self.side();
        let zs: Vec<(usize, f64)> = self
            .zeta
            .iter()
            .enumerate()
            .filter(|(_, &z)| z != 0.0)
            .map(|(i, &z)| (i, z))
            .collect();
        binio::write_u64(w, zs.len() as u64)?;
        for (e, val) in zs {
            let (u, v) = (self.offset_of(e / s2), self.offset_of(e % s2));
            for c in [u.0, u.1, v.0, v.1] {
                binio::write_i32(w, c as i32)?;
            }
            binio::write_f64(w, val)?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        binio::read_magic(r, SEP_MAGIC, SEP_VERSION)?;
        let window = binio::read_u32(r)? as usize;
        if window == 0 || window > 64 {
            return Err(Error::Format(format!("window {window}")));
        }
        let u = 4 * window - 3;
        let mut sep = Self {
            window,
            count: binio::read_u64(r)? as usize,
            xi: vec![0.0; u * u],
            zeta: vec![0.0; u.pow(4)],
            xi_outside: binio::read_f64(r)?,
            zeta_outside: binio::read_f64(r)?,
        };
        let bad = || Error::Format("separation entry outside window".into());
        let nx = binio::checked_len(binio::read_u64(r)?, (u * u) as u64, "pair entries")?;
        for _ in 0..nx {
            let off = (binio::read_i32(r)? as i64, binio::read_i32(r)? as i64);
            let val = binio::read_f64(r)?;
            let i = sep.index2(off).ok_or_else(bad)?;
            sep.xi[i] = val;
        }
        let nz = binio::checked_len(binio::read_u64(r)?, u.pow(4) as u64, "triplet entries")?;
        for _ in 0..nz {
            let a = (binio::read_i32(r)? as i64, binio::read_i32(r)? as i64);
            let b = (binio::read_i32(r)? as i64, binio::read_i32(r)? as i64);
            let val = binio::read_f64(r)?;
            let i = sep.index2(a).ok_or_else(bad)?;
            let j = sep.index2(b).ok_or_else(bad)?;
            sep.zeta[i * u * u + j] = val;
        }
        Ok(sep)
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

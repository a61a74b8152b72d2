//! Weighted particle clouds: the discrete stand-in for a transported
//! probability density.
//!
//! A cloud is an immutable snapshot of positions and nonnegative weights.
//! Total weight is 1 for freshly sampled clouds; steering experiments may
//! absorb mass, after which the total drops below 1 and the deficit is the
//! absorbed amount. Densities and their L^p norms are only defined through a
//! compactly supported mollifier; see [`DensityReconstruction`].

use crate::error::{Error, Result};
use crate::math::{stream_rng, Vec3};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

/// Weighted particle snapshot. The stored seed records how the cloud was
/// generated, it does not affect any operation.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleCloud {
    pub positions: Vec<Vec3>,
    pub weights: Vec<f64>,
    pub generation_seed: u64,
}

/// Slack for "total mass is 1" checks.
pub const MASS_TOLERANCE: f64 = 1e-12;

impl ParticleCloud {
    /// Validating constructor: matching lengths, finite coordinates,
    /// nonnegative weights, total mass in (0, 1 + tolerance].
    pub fn new(positions: Vec<Vec3>, weights: Vec<f64>, generation_seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidParameter("empty cloud".into()));
        }
        if positions.len() != weights.len() {
            return Err(Error::InvalidParameter(format!(
                "{} positions vs {} weights",
                positions.len(),
                weights.len()
            )));
        }
        for p in &positions {
            if !(p.x.is_finite() && p.y.is_finite() && p.z.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "non-finite position {p:?}"
                )));
            }
        }
        let mut total = 0.0;
        for &w in &weights {
            if !w.is_finite() || w < 0.0 {
                return Err(Error::InvalidParameter(format!("bad weight {w}")));
            }
            total += w;
        }
        if !(total > 0.0) || total > 1.0 + MASS_TOLERANCE {
            return Err(Error::InvalidParameter(format!(
                "total mass {total} outside (0, 1]"
            )));
        }
        Ok(ParticleCloud {
            positions,
            weights,
            generation_seed,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    /// True when every weight equals `total/n` up to a relative 1e-12.
    pub fn has_uniform_weights(&self) -> bool {
        let w0 = self.total_mass() / self.len() as f64;
        self.weights.iter().all(|&w| (w - w0).abs() <= 1e-12 * w0)
    }

    pub fn centroid(&self) -> Vec3 {
        let total = self.total_mass();
        let mut c = Vec3::zeros();
        for (p, &w) in self.positions.iter().zip(&self.weights) {
            c += w * p;
        }
        c / total
    }

    /// i.i.d. uniform sample of the ball `|x - center| <= radius`, each
    /// particle carrying weight `1/n`. Rejection from the bounding cube keeps
    /// the law exactly uniform; the draw is fully determined by `seed`.
    pub fn sample_uniform_ball(center: Vec3, radius: f64, n: usize, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter("empty cloud: n = 0".into()));
        }
        if !(radius >= 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!("bad radius {radius}")));
        }
        let mut rng = stream_rng(seed, 0);
        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            let p = loop {
                let c = Vec3::new(
                    2.0 * rng.gen::<f64>() - 1.0,
                    2.0 * rng.gen::<f64>() - 1.0,
                    2.0 * rng.gen::<f64>() - 1.0,
                );
                if c.norm_squared() <= 1.0 {
                    break c;
                }
            };
            positions.push(center + radius * p);
        }
        let w = 1.0 / n as f64;
        ParticleCloud::new(positions, vec![w; n], seed)
    }

    /// Image measure under a pointwise map: positions move, weights are
    /// carried over bit-exactly, so `sum psi(new_i) w_i = sum psi(map(old_i)) w_i`
    /// holds by construction for every test function.
    pub fn push_forward(&self, map: impl Fn(&Vec3) -> Vec3) -> Result<Self> {
        let mut positions = Vec::with_capacity(self.len());
        for p in &self.positions {
            let q = map(p);
            if !(q.x.is_finite() && q.y.is_finite() && q.z.is_finite()) {
                return Err(Error::BlowUp {
                    context: format!("push-forward image of {p:?}"),
                    t: f64::NAN,
                });
            }
            positions.push(q);
        }
        Ok(ParticleCloud {
            positions,
            weights: self.weights.clone(),
            generation_seed: self.generation_seed,
        })
    }

    /// CSV with header `x,y,z,w`, one particle per row, 17 significant
    /// digits (round-trips f64 exactly).
    pub fn write_csv<W: Write>(&self, out: &mut W) -> Result<()> {
        writeln!(out, "x,y,z,w")?;
        for (p, w) in self.positions.iter().zip(&self.weights) {
            writeln!(out, "{:.16e},{:.16e},{:.16e},{:.16e}", p.x, p.y, p.z, w)?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(std::fs::File::create(path)?);
        self.write_csv(&mut f)
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let mut positions = Vec::new();
        let mut weights = Vec::new();
        for (lineno, line) in f.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "x,y,z,w" {
                    return Err(Error::Config(format!(
                        "unexpected CSV header {line:?}"
                    )));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(Error::Config(format!(
                    "line {}: expected 4 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let vals: Vec<f64> = fields
                .iter()
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        Error::Config(format!("line {}: {e}", lineno + 1))
                    })
                })
                .collect::<Result<_>>()?;
            positions.push(Vec3::new(vals[0], vals[1], vals[2]));
            weights.push(vals[3]);
        }
        ParticleCloud::new(positions, weights, 0)
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        let file = CloudFile {
            generation_seed: self.generation_seed,
            particles: self
                .positions
                .iter()
                .zip(&self.weights)
                .map(|(p, &w)| ParticleRow {
                    x: p.x,
                    y: p.y,
                    z: p.z,
                    w,
                })
                .collect(),
        };
        let f = BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, &file)?;
        Ok(())
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let f = BufReader::new(std::fs::File::open(path)?);
        let file: CloudFile = serde_json::from_reader(f)?;
        let (positions, weights) = file
            .particles
            .iter()
            .map(|r| (Vec3::new(r.x, r.y, r.z), r.w))
            .unzip();
        ParticleCloud::new(positions, weights, file.generation_seed)
    }
}

#[derive(Serialize, Deserialize)]
struct CloudFile {
    generation_seed: u64,
    particles: Vec<ParticleRow>,
}

#[derive(Serialize, Deserialize)]
struct ParticleRow {
    x: f64,
    y: f64,
    z: f64,
    w: f64,
}

/// Wendland C^2 radial profile on [0, 1], normalized to unit mass in 3D:
/// `phi(q) = 21/(2 pi) (1-q)^4 (4q+1)`.
fn wendland(q: f64) -> f64 {
    if q >= 1.0 {
        return 0.0;
    }
    let t = 1.0 - q;
    let t2 = t * t;
    21.0 / (2.0 * PI) * t2 * t2 * (4.0 * q + 1.0)
}

/// Kernel-density reconstruction of the cloud as an L^p function. The
/// mollifier is fixed (Wendland C^2); only the bandwidth varies.
#[derive(Clone, Copy, Debug)]
pub struct DensityReconstruction {
    pub bandwidth: f64,
}

impl DensityReconstruction {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(DensityReconstruction { bandwidth })
    }

    /// Mean-field consistent default: `n^{-1/6}` times the support radius.
    pub fn default_for(n: usize, support_radius: f64) -> Result<Self> {
        DensityReconstruction::new((n as f64).powf(-1.0 / 6.0) * support_radius)
    }

    /// Smoothed density at an arbitrary point.
    pub fn density_at(&self, cloud: &ParticleCloud, x: &Vec3) -> f64 {
        let h = self.bandwidth;
        let h3 = h * h * h;
        let grid = NeighborGrid::build(cloud, h);
        grid.fold_neighbors(x, 0.0, |acc, j| {
            let q = (x - cloud.positions[j]).norm() / h;
            acc + cloud.weights[j] * wendland(q) / h3
        })
    }
}

/// Uniform hash grid with cell size equal to the kernel support; all
/// interactions live in the 27 surrounding cells.
struct NeighborGrid<'a> {
    cloud: &'a ParticleCloud,
    cell: f64,
    map: HashMap<(i64, i64, i64), Vec<usize>>,
}

impl<'a> NeighborGrid<'a> {
    fn build(cloud: &'a ParticleCloud, cell: f64) -> Self {
        let mut map: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
        for (j, p) in cloud.positions.iter().enumerate() {
            map.entry(Self::key(p, cell)).or_default().push(j);
        }
        NeighborGrid { cloud, cell, map }
    }

    fn key(p: &Vec3, cell: f64) -> (i64, i64, i64) {
        (
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        )
    }

    fn fold_neighbors<T>(&self, x: &Vec3, init: T, mut f: impl FnMut(T, usize) -> T) -> T {
        let (cx, cy, cz) = Self::key(x, self.cell);
        let mut acc = init;
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(cellv) = self.map.get(&(cx + dx, cy + dy, cz + dz)) {
                        for &j in cellv {
                            acc = f(acc, j);
                        }
                    }
                }
            }
        }
        let _ = self.cloud;
        acc
    }
}

/// L^p norm of the mollified density, `p >= 1`.
///
/// `p = 1` returns the total mass exactly. Otherwise the integral
/// `int rho_h^p = int rho_h^{p-1} d rho` is evaluated by the particle
/// quadrature `sum_i w_i rho_h(x_i)^{p-1}` with the self term left out
/// (leave-one-out keeps the point value an unbiased density estimate).
pub fn lp_norm_estimate(
    cloud: &ParticleCloud,
    p: f64,
    recon: &DensityReconstruction,
) -> Result<f64> {
    if !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("p must be >= 1, got {p}")));
    }
    if !(recon.bandwidth > 0.0) {
        return Err(Error::InvalidParameter(
            "bandwidth must be positive".into(),
        ));
    }
    if p == 1.0 {
        return Ok(cloud.total_mass());
    }
    let h = recon.bandwidth;
    let h3 = h * h * h;
    let grid = NeighborGrid::build(cloud, h);
    let mut integral = 0.0;
    for (i, x) in cloud.positions.iter().enumerate() {
        let rho = grid.fold_neighbors(x, 0.0, |acc, j| {
            if j == i {
                return acc;
            }
            let q = (x - cloud.positions[j]).norm() / h;
            acc + cloud.weights[j] * wendland(q) / h3
        });
        integral += cloud.weights[i] * rho.powf(p - 1.0);
    }
    Ok(integral.powf(1.0 / p))
}

//! Larger experiments built on the steppers: fixed-point (Picard)
//! iteration of the transport map, stability of two nearby evolutions in
//! transport distance, and dyadic tracer pairs for measuring the flow's
//! effective Holder exponent.

use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::integrator::{simulate, DiagnosticsSpec, Stepper, Trajectory};
use crate::kernel::KernelConfig;
use crate::math::{stream_rng, unit_vector, Vec3};
use crate::velocity::{modulus_estimate, Backend, Exclusion, ModulusMode, VelocityField};
use crate::wasserstein::wasserstein1;
use rand::Rng;

/// Contraction record of the fixed-point iteration: `distances[m]` is the
/// sup over the time grid of the transport distance between iterates `m`
/// and `m+1`, and `ratios` are the consecutive quotients.
#[derive(Clone, Debug)]
pub struct PicardReport {
    pub distances: Vec<f64>,
    pub ratios: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
}

/// Transport `cloud0` along the velocity field induced by an existing
/// trajectory, frozen at the left endpoint of each grid interval. The
/// sources never move within a step, which is exactly the linearization
/// the fixed-point iteration calls for.
pub fn transport_frozen(
    prev: &Trajectory,
    cloud0: &ParticleCloud,
    kernel: &KernelConfig,
    backend: Backend,
) -> Result<Trajectory> {
    let mut snapshots = vec![cloud0.clone()];
    let mut current = cloud0.clone();
    for k in 0..prev.times.len() - 1 {
        let dt = prev.times[k + 1] - prev.times[k];
        let field = VelocityField::new(&prev.snapshots[k], *kernel, backend)?;
        let x0 = &current.positions;
        let k1 = field.eval_batch(x0, Exclusion::None)?;
        let mid1: Vec<Vec3> = x0.iter().zip(&k1).map(|(x, v)| x + 0.5 * dt * v).collect();
        let k2 = field.eval_batch(&mid1, Exclusion::None)?;
        let mid2: Vec<Vec3> = x0.iter().zip(&k2).map(|(x, v)| x + 0.5 * dt * v).collect();
        let k3 = field.eval_batch(&mid2, Exclusion::None)?;
        let end: Vec<Vec3> = x0.iter().zip(&k3).map(|(x, v)| x + dt * v).collect();
        let k4 = field.eval_batch(&end, Exclusion::None)?;
        let positions = (0..x0.len())
            .map(|i| x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        current = ParticleCloud {
            positions,
            weights: current.weights.clone(),
            generation_seed: current.generation_seed,
        };
        snapshots.push(current.clone());
    }
    Ok(Trajectory {
        times: prev.times.clone(),
        snapshots,
        diagnostics: Vec::new(),
    })
}

/// Fixed-point iteration for the self-consistent flow: start from the
/// constant-in-time trajectory, repeatedly transport the initial cloud
/// along the previous iterate's field, and record how fast consecutive
/// iterates approach each other in transport distance.
///
/// Requires a regularized kernel: the transported copy starts on top of
/// its frozen sources, which the singular kernel cannot evaluate.
pub fn picard_iterate(
    cloud0: &ParticleCloud,
    kernel: &KernelConfig,
    backend: Backend,
    t_final: f64,
    dt: f64,
    n_iters: usize,
) -> Result<PicardReport> {
    if kernel.is_singular() {
        return Err(Error::InvalidParameter(
            "fixed-point transport needs a regularized kernel; the transported copy \
             coincides with its frozen sources at t = 0"
                .into(),
        ));
    }
    if n_iters < 2 {
        return Err(Error::InvalidParameter(format!(
            "need at least 2 iterations, got {n_iters}"
        )));
    }
    if !(t_final > 0.0) || !(dt > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "need positive t_final and dt, got {t_final} and {dt}"
        )));
    }
    let steps = ((t_final / dt) - 1e-9).ceil().max(1.0) as usize;
    let times: Vec<f64> = (0..=steps)
        .map(|k| (k as f64 * dt).min(t_final))
        .collect();
    let constant = Trajectory {
        times,
        snapshots: vec![cloud0.clone(); steps + 1],
        diagnostics: Vec::new(),
    };

    let mut trajectories = vec![constant];
    let mut distances = Vec::new();
    for _ in 0..n_iters {
        let prev = trajectories.last().unwrap();
        let next = transport_frozen(prev, cloud0, kernel, backend)?;
        let mut d = 0.0f64;
        for (a, b) in prev.snapshots.iter().zip(&next.snapshots) {
            d = d.max(wasserstein1(a, b)?.value);
        }
        distances.push(d);
        trajectories.push(next);
    }
    let ratios = distances
        .windows(2)
        .map(|w| w[1] / w[0])
        .collect();
    Ok(PicardReport {
        distances,
        ratios,
        trajectories,
    })
}

pub const STABILITY_ENVELOPE_SLACK: f64 = 0.1;

/// Outcome of evolving two nearby clouds independently and tracking their
/// transport distance against the exponential envelope
/// `W(t) <= W(0) exp(lip_modulus * t) * (1 + slack)`.
#[derive(Clone, Debug)]
pub struct StabilityReport {
    pub times: Vec<f64>,
    pub w1: Vec<f64>,
    /// Log-linear growth rate fitted over the grid (NaN when the distances
    /// are too small to fit).
    pub fitted_rate: f64,
    /// Sampled Lipschitz modulus of the first cloud's field at t = 0.
    pub lip_modulus: f64,
    /// Max over the grid of `w1(t) / (w1(0) exp(lip_modulus t))`; zero when
    /// the clouds coincide for all time.
    pub envelope_factor: f64,
    pub envelope_ok: bool,
}

pub fn two_cloud_stability(
    a: &ParticleCloud,
    b: &ParticleCloud,
    kernel: &KernelConfig,
    backend: Backend,
    t_final: f64,
    dt: f64,
    moduli_pairs: usize,
    seed: u64,
) -> Result<StabilityReport> {
    let diag = DiagnosticsSpec::default();
    let traj_a = simulate(a, kernel, backend, t_final, dt, Stepper::Rk4, &diag)?;
    let traj_b = simulate(b, kernel, backend, t_final, dt, Stepper::Rk4, &diag)?;
    let times = traj_a.times.clone();
    let mut w1 = Vec::with_capacity(times.len());
    for (sa, sb) in traj_a.snapshots.iter().zip(&traj_b.snapshots) {
        w1.push(wasserstein1(sa, sb)?.value);
    }

    let field = VelocityField::new(a, *kernel, backend)?;
    let lip_modulus = modulus_estimate(
        &field,
        ModulusMode::Lipschitz,
        moduli_pairs,
        seed,
        (0.02, 1.0),
    )?;

    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(&w1)
        .filter(|(_, &d)| d > 1e-11)
        .map(|(&t, &d)| (t, d.ln()))
        .collect();
    let fitted_rate = if pts.len() >= 2 {
        let n = pts.len() as f64;
        let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let ym = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let num: f64 = pts.iter().map(|p| (p.0 - tm) * (p.1 - ym)).sum();
        let den: f64 = pts.iter().map(|p| (p.0 - tm) * (p.0 - tm)).sum();
        num / den
    } else {
        f64::NAN
    };

    let envelope_factor = if w1[0] > 0.0 {
        times
            .iter()
            .zip(&w1)
            .map(|(&t, &d)| d / (w1[0] * (lip_modulus * t).exp()))
            .fold(0.0f64, f64::max)
    } else if w1.iter().all(|&d| d <= 1e-12) {
        0.0
    } else {
        f64::INFINITY
    };
    let envelope_ok = envelope_factor <= 1.0 + STABILITY_ENVELOPE_SLACK;
    Ok(StabilityReport {
        times,
        w1,
        fitted_rate,
        lip_modulus,
        envelope_factor,
        envelope_ok,
    })
}

/// A pair of massless tracers embedded in a host cloud at indices `i`, `j`,
/// initially `scale` apart.
#[derive(Clone, Copy, Debug)]
pub struct TracerPair {
    pub i: usize,
    pub j: usize,
    pub scale: f64,
}

/// Host cloud with tracer pairs appended at zero weight, so the tracers
/// ride the flow without perturbing it or the total mass.
#[derive(Clone, Debug)]
pub struct TracerSet {
    pub cloud: ParticleCloud,
    pub pairs: Vec<TracerPair>,
}

/// Place `per_scale` tracer pairs at each separation in `scales`, anchored
/// at uniform random points inside the host's bounding ball (shrunk to 80%
/// so whole pairs start inside the support).
pub fn seed_tracer_pairs(
    host: &ParticleCloud,
    scales: &[f64],
    per_scale: usize,
    seed: u64,
) -> Result<TracerSet> {
    if scales.is_empty() || per_scale == 0 {
        return Err(Error::InvalidParameter(
            "need at least one scale and one pair per scale".into(),
        ));
    }
    if scales.iter().any(|&s| !(s > 0.0) || !s.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tracer scales must be positive and finite, got {scales:?}"
        )));
    }
    let centroid = host.centroid();
    let radius = host
        .positions
        .iter()
        .map(|p| (p - centroid).norm())
        .fold(0.0f64, f64::max)
        .max(1e-6);

    let mut rng = stream_rng(seed, 11);
    let mut positions = host.positions.clone();
    let mut weights = host.weights.clone();
    let mut pairs = Vec::with_capacity(scales.len() * per_scale);
    for &scale in scales {
        for _ in 0..per_scale {
            let r = 0.8 * radius * rng.gen::<f64>().cbrt();
            let base = centroid + r * unit_vector(&mut rng);
            let dir = unit_vector(&mut rng);
            let i = positions.len();
            positions.push(base);
            positions.push(base + scale * dir);
            weights.push(0.0);
            weights.push(0.0);
            pairs.push(TracerPair {
                i,
                j: i + 1,
                scale,
            });
        }
    }
    let cloud = ParticleCloud::new(positions, weights, host.generation_seed)?;
    Ok(TracerSet { cloud, pairs })
}

/// Pooled Holder exponent of the flow map at time `t` (nearest snapshot):
/// the least-squares slope of `ln` final separation against `ln` initial
/// separation over all tracer pairs. Equal to 1 at `t = 0` by construction;
/// values below 1 mean small separations stretch relatively faster.
pub fn holder_flow_probe(traj: &Trajectory, pairs: &[TracerPair], t: f64) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::InvalidParameter("no tracer pairs".into()));
    }
    let k = traj
        .times
        .iter()
        .enumerate()
        .min_by(|(_, a), (_, b)| {
            (**a - t).abs().partial_cmp(&(**b - t).abs()).unwrap()
        })
        .map(|(i, _)| i)
        .expect("trajectory has snapshots");
    let first = &traj.snapshots[0];
    let snap = &traj.snapshots[k];
    let mut xs = Vec::with_capacity(pairs.len());
    let mut ys = Vec::with_capacity(pairs.len());
    for p in pairs {
        let d0 = (first.positions[p.i] - first.positions[p.j]).norm();
        let dt = (snap.positions[p.i] - snap.positions[p.j]).norm();
        if d0 < 1e-14 || dt < 1e-14 {
            return Err(Error::DegenerateGeometry(format!(
                "tracer pair ({}, {}) collapsed: separations {d0:.3e} -> {dt:.3e}",
                p.i, p.j
            )));
        }
        xs.push(d0.ln());
        ys.push(dt.ln());
    }
    let n = xs.len() as f64;
    let xm = xs.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let den: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    if den < 1e-12 {
        return Err(Error::InvalidParameter(
            "tracer pairs need at least two distinct scales".into(),
        ));
    }
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    Ok(num / den)
}

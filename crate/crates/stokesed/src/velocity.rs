//! Mean-field settling velocity induced by a particle cloud:
//! `u(x) = sum_j w_j U_eps(x - x_j)(-e3)`, evaluated directly, or through a
//! centroid-multipole treecode when the quadratic sum is too slow.
//!
//! Every target is summed in a fixed order (source index order for the
//! direct backend, a fixed tree traversal for the treecode), so batch
//! results are bit-identical across thread counts; parallelism only spreads
//! whole targets over threads.

use crate::cloud::ParticleCloud;
use crate::error::{Error, Result};
use crate::kernel::{settling_contribution, settling_quadrupole, KernelConfig};
use crate::math::{ln_minus, stream_rng, unit_vector, Mat3, Vec3};
use rand::Rng;
use rayon::prelude::*;
use std::io::Write;
use std::time::Instant;

/// Summation strategy. `theta` is the opening parameter: a node is
/// summarized by its centroid expansion when `radius < theta * distance`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Backend {
    Direct,
    Treecode { theta: f64, leaf_size: usize },
}

/// Which source, if any, each batch target leaves out of its own sum.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Exclusion {
    None,
    /// Target `i` skips source `i`; requires one target per source.
    SelfIndex,
}

pub struct VelocityField<'a> {
    pub cloud: &'a ParticleCloud,
    pub kernel: KernelConfig,
    pub backend: Backend,
    tree: Option<Octree>,
}

impl<'a> VelocityField<'a> {
    pub fn new(cloud: &'a ParticleCloud, kernel: KernelConfig, backend: Backend) -> Result<Self> {
        let tree = match backend {
            Backend::Direct => None,
            Backend::Treecode { theta, leaf_size } => {
                if !(theta > 0.0 && theta < 1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "theta must lie in (0, 1), got {theta}"
                    )));
                }
                if leaf_size == 0 {
                    return Err(Error::InvalidParameter("leaf_size must be >= 1".into()));
                }
                Some(Octree::build(cloud, theta, leaf_size))
            }
        };
        Ok(VelocityField {
            cloud,
            kernel,
            backend,
            tree,
        })
    }

    pub fn tree(&self) -> Option<&Octree> {
        self.tree.as_ref()
    }

    /// Velocity at one point. `exclude` drops a single source index from
    /// the sum (the self term of a particle being advanced).
    pub fn eval(&self, x: &Vec3, exclude: Option<usize>) -> Result<Vec3> {
        match &self.tree {
            None => direct_sum(self.cloud, self.kernel.regularization_epsilon, x, exclude),
            Some(tree) => tree.eval(
                self.cloud,
                self.kernel.regularization_epsilon,
                x,
                exclude,
            ),
        }
    }

    /// Element-wise [`eval`](Self::eval) over many targets, parallel across
    /// targets only.
    pub fn eval_batch(&self, targets: &[Vec3], exclusion: Exclusion) -> Result<Vec<Vec3>> {
        if exclusion == Exclusion::SelfIndex && targets.len() != self.cloud.len() {
            return Err(Error::InvalidParameter(format!(
                "self-exclusion needs one target per source: {} targets vs {} sources",
                targets.len(),
                self.cloud.len()
            )));
        }
        targets
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let exclude = match exclusion {
                    Exclusion::None => None,
                    Exclusion::SelfIndex => Some(i),
                };
                self.eval(x, exclude)
            })
            .collect()
    }
}

fn direct_sum(
    cloud: &ParticleCloud,
    eps: f64,
    x: &Vec3,
    exclude: Option<usize>,
) -> Result<Vec3> {
    let mut acc = Vec3::zeros();
    for (j, p) in cloud.positions.iter().enumerate() {
        if Some(j) == exclude {
            continue;
        }
        let d = x - p;
        if eps == 0.0 && d.norm_squared() == 0.0 {
            return Err(Error::SingularEvaluation { at: *x });
        }
        acc += cloud.weights[j] * settling_contribution(&d, eps);
    }
    Ok(acc)
}

const TREE_MAX_DEPTH: usize = 48;

#[derive(Clone, Debug)]
pub struct TreeNode {
    /// Geometric box (cube) this node covers.
    pub center: Vec3,
    pub half: f64,
    /// Multipole data over the contained particles: total weight, weighted
    /// centroid, and the second moment about the centroid (the first moment
    /// is zero by construction).
    pub weight: f64,
    pub centroid: Vec3,
    pub quad: Mat3,
    /// Max distance from the centroid to a contained particle.
    pub radius: f64,
    /// Contiguous range in the permuted particle order.
    pub start: usize,
    pub end: usize,
    /// Node indices of children; 0 = absent (the root is never a child).
    pub children: [u32; 8],
}

impl TreeNode {
    pub fn is_leaf(&self) -> bool {
        self.children.iter().all(|&c| c == 0)
    }
}

/// Arena octree over a cloud snapshot. Particle indices are permuted into
/// `order` so every node covers one contiguous slice; the tree holds no
/// copies of positions or weights.
pub struct Octree {
    pub nodes: Vec<TreeNode>,
    /// Permutation: particle indices grouped by leaf.
    pub order: Vec<usize>,
    /// Inverse permutation, for O(1) "does this node contain index j".
    slot_of: Vec<usize>,
    theta: f64,
    max_depth: usize,
}

impl Octree {
    pub fn build(cloud: &ParticleCloud, theta: f64, leaf_size: usize) -> Octree {
        let n = cloud.len();
        let mut lo = cloud.positions[0];
        let mut hi = cloud.positions[0];
        for p in &cloud.positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let center = 0.5 * (lo + hi);
        // Cube with a hair of slack so boundary particles classify stably.
        let half = 0.5 * (hi - lo).amax().max(1e-12) * (1.0 + 1e-9);

        let mut tree = Octree {
            nodes: Vec::new(),
            order: (0..n).collect(),
            slot_of: vec![0; n],
            theta,
            max_depth: 0,
        };
        tree.build_node(cloud, center, half, 0, n, 0, leaf_size);
        for (slot, &j) in tree.order.iter().enumerate() {
            tree.slot_of[j] = slot;
        }
        tree
    }

    fn build_node(
        &mut self,
        cloud: &ParticleCloud,
        center: Vec3,
        half: f64,
        start: usize,
        end: usize,
        depth: usize,
        leaf_size: usize,
    ) -> u32 {
        let id = self.nodes.len() as u32;
        self.nodes.push(TreeNode {
            center,
            half,
            weight: 0.0,
            centroid: Vec3::zeros(),
            quad: Mat3::zeros(),
            radius: 0.0,
            start,
            end,
            children: [0; 8],
        });
        self.max_depth = self.max_depth.max(depth);

        let count = end - start;
        // Coincident particles cannot be separated; depth and size guards
        // force a (possibly oversized) leaf instead of infinite splitting.
        if count <= leaf_size || depth >= TREE_MAX_DEPTH || half < 1e-12 {
            let mut weight = 0.0;
            let mut centroid = Vec3::zeros();
            for &j in &self.order[start..end] {
                weight += cloud.weights[j];
                centroid += cloud.weights[j] * cloud.positions[j];
            }
            if weight > 0.0 {
                centroid /= weight;
            } else {
                centroid = center;
            }
            let mut quad = Mat3::zeros();
            for &j in &self.order[start..end] {
                let d = cloud.positions[j] - centroid;
                quad += cloud.weights[j] * d * d.transpose();
            }
            let node = &mut self.nodes[id as usize];
            node.weight = weight;
            node.centroid = centroid;
            node.quad = quad;
            node.radius = radius_of(cloud, &self.order[start..end], &centroid);
            return id;
        }

        // Stable partition of the slice into octants (bit 0: x, 1: y, 2: z).
        let mut buckets: [Vec<usize>; 8] = Default::default();
        for &j in &self.order[start..end] {
            let p = &cloud.positions[j];
            let mut o = 0usize;
            if p.x >= center.x {
                o |= 1;
            }
            if p.y >= center.y {
                o |= 2;
            }
            if p.z >= center.z {
                o |= 4;
            }
            buckets[o].push(j);
        }
        let mut cursor = start;
        let mut ranges = [(0usize, 0usize); 8];
        for (o, bucket) in buckets.iter().enumerate() {
            ranges[o] = (cursor, cursor + bucket.len());
            self.order[cursor..cursor + bucket.len()].copy_from_slice(bucket);
            cursor += bucket.len();
        }

        let quarter = 0.5 * half;
        let mut children = [0u32; 8];
        for o in 0..8 {
            let (s, e) = ranges[o];
            if s == e {
                continue;
            }
            let offset = Vec3::new(
                if o & 1 != 0 { quarter } else { -quarter },
                if o & 2 != 0 { quarter } else { -quarter },
                if o & 4 != 0 { quarter } else { -quarter },
            );
            children[o] =
                self.build_node(cloud, center + offset, quarter, s, e, depth + 1, leaf_size);
        }

        // Parent moments from the children, so weights aggregate exactly;
        // second moments shift by the parallel-axis term.
        let mut weight = 0.0;
        let mut centroid = Vec3::zeros();
        for &c in &children {
            if c != 0 {
                let ch = &self.nodes[c as usize];
                weight += ch.weight;
                centroid += ch.weight * ch.centroid;
            }
        }
        if weight > 0.0 {
            centroid /= weight;
        } else {
            centroid = center;
        }
        let mut quad = Mat3::zeros();
        for &c in &children {
            if c != 0 {
                let ch = &self.nodes[c as usize];
                let d = ch.centroid - centroid;
                quad += ch.quad + ch.weight * d * d.transpose();
            }
        }
        let radius = radius_of(cloud, &self.order[start..end], &centroid);
        let node = &mut self.nodes[id as usize];
        node.children = children;
        node.weight = weight;
        node.centroid = centroid;
        node.quad = quad;
        node.radius = radius;
        id
    }

    pub fn depth(&self) -> usize {
        self.max_depth
    }

    fn eval(
        &self,
        cloud: &ParticleCloud,
        eps: f64,
        x: &Vec3,
        exclude: Option<usize>,
    ) -> Result<Vec3> {
        let excluded_slot = exclude.map(|j| self.slot_of[j]);
        let theta2 = self.theta * self.theta;
        let mut acc = Vec3::zeros();
        let mut stack: Vec<u32> = vec![0];
        while let Some(id) = stack.pop() {
            let node = &self.nodes[id as usize];
            let holds_excluded = excluded_slot
                .map(|s| node.start <= s && s < node.end)
                .unwrap_or(false);
            let d = x - node.centroid;
            let d2 = d.norm_squared();
            if !holds_excluded && node.radius * node.radius < theta2 * d2 && node.weight > 0.0 {
                acc += node.weight * settling_contribution(&d, eps);
                acc += settling_quadrupole(&d, eps, &node.quad);
                continue;
            }
            if node.is_leaf() {
                for &j in &self.order[node.start..node.end] {
                    if Some(j) == exclude {
                        continue;
                    }
                    let d = x - cloud.positions[j];
                    if eps == 0.0 && d.norm_squared() == 0.0 {
                        return Err(Error::SingularEvaluation { at: *x });
                    }
                    acc += cloud.weights[j] * settling_contribution(&d, eps);
                }
            } else {
                // Reverse push keeps the traversal in child-index order.
                for &c in node.children.iter().rev() {
                    if c != 0 {
                        stack.push(c);
                    }
                }
            }
        }
        Ok(acc)
    }
}

fn radius_of(cloud: &ParticleCloud, indices: &[usize], centroid: &Vec3) -> f64 {
    let mut r2: f64 = 0.0;
    for &j in indices {
        r2 = r2.max((cloud.positions[j] - centroid).norm_squared());
    }
    r2.sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModulusMode {
    Lipschitz,
    LogLipschitz,
}

/// Empirical continuity modulus: the supremum over sampled pairs of
/// `|u(x) - u(y)| / |x - y|` (Lipschitz) or of the same quotient damped by
/// `1 + ln_-(|x - y|)` (log-Lipschitz). Pairs are drawn around the cloud
/// with separations log-uniform in `scale_range`; the estimate never
/// exceeds the true modulus and grows toward it with `n_pairs`.
pub fn modulus_estimate(
    field: &VelocityField,
    mode: ModulusMode,
    n_pairs: usize,
    seed: u64,
    scale_range: (f64, f64),
) -> Result<f64> {
    let (r_min, r_max) = scale_range;
    if n_pairs == 0 {
        return Err(Error::InvalidParameter("n_pairs must be >= 1".into()));
    }
    if !(r_min > 0.0 && r_min < r_max) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < r_min < r_max, got ({r_min}, {r_max})"
        )));
    }
    let cloud = field.cloud;
    let center = cloud.centroid();
    let mut support: f64 = 0.0;
    for p in &cloud.positions {
        support = support.max((p - center).norm());
    }
    let ball = 1.2 * support + r_max;

    let mut rng = stream_rng(seed, 1);
    let mut targets = Vec::with_capacity(2 * n_pairs);
    let mut seps = Vec::with_capacity(n_pairs);
    for _ in 0..n_pairs {
        let x = center + unit_vector(&mut rng) * (ball * rng.gen::<f64>().cbrt());
        let r = (rng.gen::<f64>() * (r_max.ln() - r_min.ln()) + r_min.ln()).exp();
        let y = x + unit_vector(&mut rng) * r;
        targets.push(x);
        targets.push(y);
        seps.push(r);
    }
    let values = field.eval_batch(&targets, Exclusion::None)?;
    let mut sup: f64 = 0.0;
    for (k, &r) in seps.iter().enumerate() {
        let du = (values[2 * k] - values[2 * k + 1]).norm();
        let q = match mode {
            ModulusMode::Lipschitz => du / r,
            ModulusMode::LogLipschitz => du / (r * (1.0 + ln_minus(r))),
        };
        sup = sup.max(q);
    }
    Ok(sup)
}

/// Empirical sup of `|u|` over points sampled in the cloud's bounding ball
/// (inflated 1.5x). Linear in the weights, like the field itself.
pub fn sup_velocity_estimate(field: &VelocityField, n_samples: usize, seed: u64) -> Result<f64> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("n_samples must be >= 1".into()));
    }
    let cloud = field.cloud;
    let center = cloud.centroid();
    let mut support: f64 = 0.0;
    for p in &cloud.positions {
        support = support.max((p - center).norm());
    }
    let ball = 1.5 * support.max(1e-6);
    let mut rng = stream_rng(seed, 2);
    let targets: Vec<Vec3> = (0..n_samples)
        .map(|_| center + unit_vector(&mut rng) * (ball * rng.gen::<f64>().cbrt()))
        .collect();
    let values = field.eval_batch(&targets, Exclusion::None)?;
    Ok(values.iter().map(|v| v.norm()).fold(0.0, f64::max))
}

/// Central-difference divergence of the field at `x` with step `h`.
///
/// Always sums directly (never through the treecode): the quotient divides
/// by `h`, which would amplify the treecode's opening-angle error past the
/// quantity being measured. For the singular kernel the stencil must stay
/// at least `10 h` away from every source.
pub fn divergence_probe(field: &VelocityField, x: &Vec3, h: f64) -> Result<f64> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter(format!("h must be positive, got {h}")));
    }
    let eps = field.kernel.regularization_epsilon;
    if eps == 0.0 {
        let mut min_dist = f64::INFINITY;
        for p in &field.cloud.positions {
            min_dist = min_dist.min((x - p).norm());
        }
        if min_dist < 10.0 * h {
            return Err(Error::IllConditionedProbe { h, min_dist });
        }
    }
    let mut div = 0.0;
    for i in 0..3 {
        let mut xp = *x;
        let mut xm = *x;
        xp[i] += h;
        xm[i] -= h;
        let up = direct_sum(field.cloud, eps, &xp, None)?;
        let um = direct_sum(field.cloud, eps, &xm, None)?;
        div += (up[i] - um[i]) / (2.0 * h);
    }
    Ok(div)
}

/// One row of the backend benchmark.
#[derive(Clone, Debug)]
pub struct BenchRow {
    pub n: usize,
    pub backend: String,
    pub theta: f64,
    pub seconds: f64,
    pub rel_err: f64,
}

/// Time direct summation against the treecode at each `theta` over a fresh
/// target set, reporting wall seconds (build + evaluation for the treecode)
/// and relative l2 error against the direct reference.
pub fn run_benchmark(
    cloud: &ParticleCloud,
    kernel: KernelConfig,
    thetas: &[f64],
    leaf_size: usize,
    n_targets: usize,
    seed: u64,
) -> Result<Vec<BenchRow>> {
    let center = cloud.centroid();
    let mut support: f64 = 0.0;
    for p in &cloud.positions {
        support = support.max((p - center).norm());
    }
    let mut rng = stream_rng(seed, 3);
    let targets: Vec<Vec3> = (0..n_targets)
        .map(|_| center + unit_vector(&mut rng) * (1.3 * support * rng.gen::<f64>().cbrt()))
        .collect();

    let direct = VelocityField::new(cloud, kernel, Backend::Direct)?;
    let t0 = Instant::now();
    let reference = direct.eval_batch(&targets, Exclusion::None)?;
    let direct_seconds = t0.elapsed().as_secs_f64();
    let ref_l2: f64 = reference.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();

    let mut rows = vec![BenchRow {
        n: cloud.len(),
        backend: "direct".into(),
        theta: 0.0,
        seconds: direct_seconds,
        rel_err: 0.0,
    }];
    for &theta in thetas {
        let t0 = Instant::now();
        let field = VelocityField::new(cloud, kernel, Backend::Treecode { theta, leaf_size })?;
        let approx = field.eval_batch(&targets, Exclusion::None)?;
        let seconds = t0.elapsed().as_secs_f64();
        let err_l2: f64 = approx
            .iter()
            .zip(&reference)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt();
        rows.push(BenchRow {
            n: cloud.len(),
            backend: "treecode".into(),
            theta,
            seconds,
            rel_err: if ref_l2 > 0.0 { err_l2 / ref_l2 } else { err_l2 },
        });
    }
    Ok(rows)
}

pub fn write_benchmark_csv<W: Write>(rows: &[BenchRow], out: &mut W) -> Result<()> {
    writeln!(out, "N,backend,theta,seconds,rel_err")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6e},{:.6e}",
            r.n, r.backend, r.theta, r.seconds, r.rel_err
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::E3;
    use std::f64::consts::PI;

    fn ball_cloud(n: usize, seed: u64) -> ParticleCloud {
        ParticleCloud::sample_uniform_ball(Vec3::zeros(), 1.0, n, seed).unwrap()
    }

    #[test]
    fn single_stokeslet_axis_value() {
        let c = ParticleCloud::new(vec![Vec3::zeros()], vec![1.0], 0).unwrap();
        let f = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        for d in [0.5, 1.0, 3.0] {
            let u = f.eval(&Vec3::new(d, 0.0, 0.0), None).unwrap();
            let expect = -1.0 / (8.0 * PI * d) * E3;
            assert!((u - expect).norm() < 1e-15 * expect.norm());
        }
    }

    #[test]
    fn two_particles_with_self_exclusion() {
        let d = 0.8;
        let c = ParticleCloud::new(
            vec![Vec3::zeros(), Vec3::new(d, 0.0, 0.0)],
            vec![0.5, 0.5],
            0,
        )
        .unwrap();
        let f = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        let u = f.eval(&c.positions[0], Some(0)).unwrap();
        let expect = -1.0 / (16.0 * PI * d) * E3;
        assert!((u - expect).norm() < 1e-15);

        // Same through the batch interface.
        let batch = f.eval_batch(&c.positions, Exclusion::SelfIndex).unwrap();
        assert_eq!(batch[0], u);

        // Unexcluded singular evaluation at a source fails loudly.
        assert!(matches!(
            f.eval(&c.positions[0], None),
            Err(Error::SingularEvaluation { .. })
        ));
    }

    #[test]
    fn far_field_is_monopole() {
        let c = ball_cloud(500, 31);
        let f = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        let x = Vec3::new(1200.0, -800.0, 1500.0);
        let u = f.eval(&x, None).unwrap();
        let r = x.norm();
        let cos = x.z / r;
        let expect_mag =
            c.total_mass() / (8.0 * PI * r) * (1.0 + 3.0 * cos * cos).sqrt();
        assert!(
            (u.norm() - expect_mag).abs() / expect_mag < 5e-3,
            "|u| = {} vs monopole {}",
            u.norm(),
            expect_mag
        );
    }

    #[test]
    fn batch_is_elementwise_and_permutation_equivariant() {
        let c = ball_cloud(64, 7);
        let f = VelocityField::new(&c, KernelConfig::regularized(0.1).unwrap(), Backend::Direct)
            .unwrap();
        let targets = vec![
            Vec3::new(0.3, 0.1, -0.2),
            Vec3::new(-0.5, 0.9, 0.4),
            Vec3::new(2.0, 0.0, 0.0),
        ];
        let batch = f.eval_batch(&targets, Exclusion::None).unwrap();
        for (x, u) in targets.iter().zip(&batch) {
            assert_eq!(*u, f.eval(x, None).unwrap());
        }
        let permuted = vec![targets[2], targets[0], targets[1]];
        let batch_p = f.eval_batch(&permuted, Exclusion::None).unwrap();
        assert_eq!(batch_p, vec![batch[2], batch[0], batch[1]]);

        assert!(f.eval_batch(&targets, Exclusion::SelfIndex).is_err());
    }

    #[test]
    fn weight_scaling_is_field_scaling() {
        let c = ball_cloud(128, 9);
        let scaled = ParticleCloud::new(
            c.positions.clone(),
            c.weights.iter().map(|w| 0.3 * w).collect(),
            c.generation_seed,
        )
        .unwrap();
        let f1 = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        let f2 = VelocityField::new(&scaled, KernelConfig::singular(), Backend::Direct).unwrap();
        let mut rng = stream_rng(10, 0);
        for _ in 0..50 {
            let x = unit_vector(&mut rng) * (1.5 * rng.gen::<f64>() + 0.1);
            let u1 = f1.eval(&x, None).unwrap();
            let u2 = f2.eval(&x, None).unwrap();
            assert!((u2 - 0.3 * u1).norm() <= 1e-14 * u1.norm());
        }
    }

    #[test]
    fn pair_contribution_symmetry() {
        // Evenness of the kernel: swapping the roles of source and target
        // (carrying the weight along) gives the bitwise same contribution.
        let mut rng = stream_rng(11, 0);
        for _ in 0..100 {
            let d = unit_vector(&mut rng) * (0.1 + rng.gen::<f64>());
            for eps in [0.0, 0.2] {
                assert_eq!(
                    settling_contribution(&d, eps),
                    settling_contribution(&-d, eps)
                );
            }
        }
    }

    #[test]
    fn tree_structure_invariants() {
        let c = ball_cloud(2000, 13);
        let tree = Octree::build(&c, 0.5, 16);

        // Root box contains all particles.
        let root = &tree.nodes[0];
        for p in &c.positions {
            let d = p - root.center;
            assert!(d.amax() <= root.half * (1.0 + 1e-12));
        }

        let mut leaf_particles = 0;
        for node in &tree.nodes {
            // Weight aggregation is exact by construction: parents sum
            // children, leaves sum their slice.
            if !node.is_leaf() {
                let sum: f64 = node
                    .children
                    .iter()
                    .filter(|&&cid| cid != 0)
                    .map(|&cid| tree.nodes[cid as usize].weight)
                    .sum();
                assert_eq!(node.weight, sum);
            } else {
                leaf_particles += node.end - node.start;
                assert!(node.end - node.start <= 16);
            }
            // Monopole radius covers the slice.
            for &j in &tree.order[node.start..node.end] {
                assert!(
                    (c.positions[j] - node.centroid).norm() <= node.radius * (1.0 + 1e-12)
                );
            }
        }
        // Every particle sits in exactly one leaf.
        assert_eq!(leaf_particles, c.len());
        let mut seen = vec![false; c.len()];
        for &j in &tree.order {
            assert!(!seen[j]);
            seen[j] = true;
        }
    }

    #[test]
    fn tree_single_particle_and_depth_bound() {
        let single = ParticleCloud::new(vec![Vec3::new(0.3, 0.3, 0.3)], vec![1.0], 0).unwrap();
        let tree = Octree::build(&single, 0.5, 8);
        assert_eq!(tree.nodes.len(), 1);
        assert!(tree.nodes[0].is_leaf());
        assert_eq!(tree.nodes[0].weight, 1.0);

        let c = ball_cloud(10_000, 17);
        let tree = Octree::build(&c, 0.5, 32);
        let bound = ((10_000.0f64 / 32.0).log(8.0)).ceil() as usize + 4;
        assert!(
            tree.depth() <= bound,
            "depth {} above uniform-occupancy bound {}",
            tree.depth(),
            bound
        );
    }

    #[test]
    fn coincident_particles_do_not_hang_tree_build() {
        let positions = vec![Vec3::new(0.1, 0.2, 0.3); 40];
        let c = ParticleCloud::new(positions, vec![1.0 / 40.0; 40], 0).unwrap();
        let tree = Octree::build(&c, 0.5, 8);
        assert!(tree.nodes[0].weight > 0.0);
        let f = VelocityField::new(
            &c,
            KernelConfig::regularized(0.1).unwrap(),
            Backend::Treecode {
                theta: 0.5,
                leaf_size: 8,
            },
        )
        .unwrap();
        let u = f.eval(&Vec3::new(1.0, 0.0, 0.0), None).unwrap();
        assert!(u.norm().is_finite());
    }

    #[test]
    fn treecode_error_envelope_and_convergence() {
        let n = 20_000;
        let c = ball_cloud(n, 23);
        let kernel = KernelConfig::singular();
        let direct = VelocityField::new(&c, kernel, Backend::Direct).unwrap();
        let mut rng = stream_rng(12, 0);
        let targets: Vec<Vec3> = (0..1000)
            .map(|_| unit_vector(&mut rng) * (1.4 * rng.gen::<f64>().cbrt()))
            .collect();
        let reference = direct.eval_batch(&targets, Exclusion::None).unwrap();
        let ref_l2: f64 = reference.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();

        let mut errs = Vec::new();
        for theta in [0.2, 0.4, 0.6] {
            let f = VelocityField::new(
                &c,
                kernel,
                Backend::Treecode {
                    theta,
                    leaf_size: 32,
                },
            )
            .unwrap();
            let approx = f.eval_batch(&targets, Exclusion::None).unwrap();
            let err: f64 = approx
                .iter()
                .zip(&reference)
                .map(|(a, b)| (a - b).norm_squared())
                .sum::<f64>()
                .sqrt()
                / ref_l2;
            assert!(
                err <= 10.0 * theta * theta * theta,
                "theta={theta}: rel l2 {err} above monopole envelope"
            );
            errs.push(err);
        }
        // Error shrinks with the opening angle; the second-moment correction
        // keeps the workhorse setting theta = 0.4 at three digits.
        assert!(errs[0] <= errs[2]);
        assert!(errs[1] <= 1e-3, "theta=0.4 error {}", errs[1]);
        assert!(errs[0] < 1e-3, "theta=0.2 error {}", errs[0]);
    }

    #[test]
    fn treecode_self_exclusion_matches_direct() {
        let c = ball_cloud(300, 29);
        let kernel = KernelConfig::singular();
        let direct = VelocityField::new(&c, kernel, Backend::Direct).unwrap();
        let tree = VelocityField::new(
            &c,
            kernel,
            Backend::Treecode {
                theta: 0.3,
                leaf_size: 8,
            },
        )
        .unwrap();
        // Self-exclusion on the treecode forces every node containing the
        // excluded source open; the result must stay close to direct.
        let d = direct.eval_batch(&c.positions, Exclusion::SelfIndex).unwrap();
        let t = tree.eval_batch(&c.positions, Exclusion::SelfIndex).unwrap();
        let ref_l2: f64 = d.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt();
        let err: f64 = d
            .iter()
            .zip(&t)
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            .sqrt()
            / ref_l2;
        assert!(err < 5e-3, "rel err {err}");
    }

    #[test]
    fn batch_reproducible_across_thread_counts() {
        let c = ball_cloud(1000, 37);
        let f = VelocityField::new(
            &c,
            KernelConfig::singular(),
            Backend::Treecode {
                theta: 0.4,
                leaf_size: 16,
            },
        )
        .unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| f.eval_batch(&c.positions, Exclusion::SelfIndex).unwrap())
        };
        let one = run(1);
        let four = run(4);
        assert_eq!(one, four);
    }

    #[test]
    fn divergence_probe_singular_and_regularized() {
        let c = ball_cloud(200, 41);
        let singular = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        // Far from all sources the probe sees only FD truncation.
        let div = divergence_probe(&singular, &Vec3::new(1.0, 1.0, 1.0), 1e-3).unwrap();
        assert!(div.abs() <= 1e-6, "divergence {div}");

        let blob =
            VelocityField::new(&c, KernelConfig::regularized(0.3).unwrap(), Backend::Direct)
                .unwrap();
        let div = divergence_probe(&blob, &Vec3::zeros(), 1e-3).unwrap();
        assert!(div.abs() <= 1e-6, "divergence {div}");
    }

    #[test]
    fn divergence_probe_is_second_order() {
        let c = ParticleCloud::new(vec![Vec3::zeros()], vec![1.0], 0).unwrap();
        let f = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        let x = Vec3::new(1.0, 1.0, 1.0);
        let coarse = divergence_probe(&f, &x, 2e-2).unwrap().abs();
        let fine = divergence_probe(&f, &x, 1e-2).unwrap().abs();
        // O(h^2): halving the step should shrink the residual ~4x; accept a
        // generous band around that.
        assert!(fine <= coarse / 2.5 + 1e-14, "coarse {coarse} fine {fine}");
    }

    #[test]
    fn divergence_probe_proximity_guard() {
        let c = ParticleCloud::new(vec![Vec3::zeros()], vec![1.0], 0).unwrap();
        let f = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        let err = divergence_probe(&f, &Vec3::new(5e-3, 0.0, 0.0), 1e-3);
        assert!(matches!(err, Err(Error::IllConditionedProbe { .. })));
        // The regularized field has no proximity restriction.
        let blob =
            VelocityField::new(&c, KernelConfig::regularized(0.2).unwrap(), Backend::Direct)
                .unwrap();
        assert!(divergence_probe(&blob, &Vec3::new(5e-3, 0.0, 0.0), 1e-3).is_ok());
    }

    #[test]
    fn modulus_modes_agree_at_unit_separation() {
        let c = ball_cloud(500, 43);
        let f = VelocityField::new(&c, KernelConfig::regularized(0.1).unwrap(), Backend::Direct)
            .unwrap();
        // ln_-(r) vanishes at r = 1, so the two quotients coincide there.
        let range = (1.0 - 1e-9, 1.0 + 1e-9);
        let lip = modulus_estimate(&f, ModulusMode::Lipschitz, 200, 5, range).unwrap();
        let log = modulus_estimate(&f, ModulusMode::LogLipschitz, 200, 5, range).unwrap();
        assert!((lip - log).abs() <= 1e-6 * lip);
    }

    #[test]
    fn modulus_dominates_directional_difference_quotients() {
        let c = ParticleCloud::new(vec![Vec3::zeros()], vec![1.0], 0).unwrap();
        let f = VelocityField::new(&c, KernelConfig::regularized(0.5).unwrap(), Backend::Direct)
            .unwrap();
        let lip =
            modulus_estimate(&f, ModulusMode::Lipschitz, 20_000, 6, (1e-3, 0.5)).unwrap();
        assert!(lip.is_finite() && lip > 0.0);
        // Finite-difference cross-check at scattered probe points: the
        // sampled supremum must dominate generic difference quotients up to
        // a small sampling slack.
        let mut rng = stream_rng(13, 0);
        for _ in 0..20 {
            let x = unit_vector(&mut rng) * rng.gen::<f64>();
            let dir = unit_vector(&mut rng);
            let delta = 0.05;
            let q = (f.eval(&(x + delta * dir), None).unwrap() - f.eval(&x, None).unwrap())
                .norm()
                / delta;
            assert!(lip >= 0.9 * q, "lip {lip} vs quotient {q}");
        }
    }

    #[test]
    fn modulus_parameter_validation() {
        let c = ball_cloud(10, 1);
        let f = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        assert!(modulus_estimate(&f, ModulusMode::Lipschitz, 0, 1, (0.1, 1.0)).is_err());
        assert!(modulus_estimate(&f, ModulusMode::Lipschitz, 10, 1, (0.0, 1.0)).is_err());
        assert!(modulus_estimate(&f, ModulusMode::Lipschitz, 10, 1, (1.0, 0.5)).is_err());
        assert!(VelocityField::new(
            &c,
            KernelConfig::singular(),
            Backend::Treecode {
                theta: 1.5,
                leaf_size: 8
            }
        )
        .is_err());
        assert!(VelocityField::new(
            &c,
            KernelConfig::singular(),
            Backend::Treecode {
                theta: 0.5,
                leaf_size: 0
            }
        )
        .is_err());
    }

    #[test]
    fn sup_velocity_scales_with_weights() {
        let c = ball_cloud(400, 47);
        let scaled = ParticleCloud::new(
            c.positions.clone(),
            c.weights.iter().map(|w| 0.5 * w).collect(),
            0,
        )
        .unwrap();
        let f1 = VelocityField::new(&c, KernelConfig::singular(), Backend::Direct).unwrap();
        let f2 = VelocityField::new(&scaled, KernelConfig::singular(), Backend::Direct).unwrap();
        let s1 = sup_velocity_estimate(&f1, 500, 8).unwrap();
        let s2 = sup_velocity_estimate(&f2, 500, 8).unwrap();
        assert!(s1.is_finite() && s1 > 0.0);
        assert!((s2 - 0.5 * s1).abs() <= 1e-12 * s1);
    }

    #[test]
    fn benchmark_reports_rows() {
        let c = ball_cloud(2000, 53);
        let rows = run_benchmark(&c, KernelConfig::singular(), &[0.4], 32, 200, 9).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].backend, "direct");
        assert_eq!(rows[1].backend, "treecode");
        assert!(rows[1].rel_err < 0.05);
        let mut buf = Vec::new();
        write_benchmark_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("N,backend,theta,seconds,rel_err\n"));
        assert_eq!(text.lines().count(), 3);
    }
}

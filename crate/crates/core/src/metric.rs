//! Euclidean metric, graph distance, balls, and sampled checks of the
//! continuity and volume-growth conditions.

use std::collections::VecDeque;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Site, Vertex};
use crate::error::{Error, Result};
use crate::rng::RootSeed;

/// Euclidean distance between two lattice points.
pub fn rho(x: &Vertex, y: &Vertex) -> Result<f64> {
    if x.dim() != y.dim() {
        return Err(Error::DimensionMismatch(y.clone()));
    }
    let s: i64 = x
        .0
        .iter()
        .zip(&y.0)
        .map(|(&a, &b)| {
            let d = i64::from(a) - i64::from(b);
            d * d
        })
        .sum();
    Ok((s as f64).sqrt())
}

/// Open Euclidean ball `{ y : rho(center, y) < radius }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ball {
    pub center: Vertex,
    pub radius: f64,
}

impl Ball {
    pub fn new(center: Vertex, radius: f64) -> Self {
        Self { center, radius }
    }

    pub fn contains(&self, y: &Vertex) -> bool {
        if y.dim() != self.center.dim() || self.radius <= 0.0 {
            return false;
        }
        let d2: i64 = self
            .center
            .0
            .iter()
            .zip(&y.0)
            .map(|(&a, &b)| {
                let d = i64::from(a) - i64::from(b);
                d * d
            })
            .sum();
        (d2 as f64) < crate::environment::radius_squared(self.radius)
    }

    /// Cluster vertices of `env` inside the ball.
    pub fn cluster_sites(&self, env: &Environment) -> Result<Vec<Site>> {
        let c = env.site(&self.center)?;
        Ok(env.ball_sites(c, self.radius))
    }
}

/// Breadth-first distances from `from` over open edges, up to `cutoff`.
/// Unreached sites hold `u32::MAX`.
pub fn bfs_distances(env: &Environment, from: Site, cutoff: Option<u32>) -> Vec<u32> {
    let mut dist = vec![u32::MAX; env.site_count()];
    let limit = cutoff.unwrap_or(u32::MAX - 1);
    let mut queue = VecDeque::new();
    dist[from.index()] = 0;
    queue.push_back(from);
    while let Some(s) = queue.pop_front() {
        let ds = dist[s.index()];
        if ds >= limit {
            continue;
        }
        for &t in env.neighbors(s) {
            if dist[t as usize] == u32::MAX {
                dist[t as usize] = ds + 1;
                queue.push_back(Site(t));
            }
        }
    }
    dist
}

/// Length of a shortest open path from `x` to `y`, or `None` if no path of
/// length at most `cutoff` exists.
pub fn graph_distance(
    env: &Environment,
    x: &Vertex,
    y: &Vertex,
    cutoff: Option<u32>,
) -> Result<Option<u32>> {
    let a = env.site(x)?;
    let b = env.site(y)?;
    if a == b {
        return Ok(Some(0));
    }
    let limit = cutoff.unwrap_or(u32::MAX - 1);
    let mut dist = vec![u32::MAX; env.site_count()];
    let mut queue = VecDeque::new();
    dist[a.index()] = 0;
    queue.push_back(a);
    while let Some(s) = queue.pop_front() {
        let ds = dist[s.index()];
        if ds >= limit {
            break;
        }
        for &t in env.neighbors(s) {
            if dist[t as usize] == u32::MAX {
                if t == b.0 {
                    return Ok(Some(ds + 1));
                }
                dist[t as usize] = ds + 1;
                queue.push_back(Site(t));
            }
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Continuity,
    VolumeGrowth,
}

/// One measured sample of a condition check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSample {
    pub x: Vertex,
    /// Second point for pair conditions.
    pub y: Option<Vertex>,
    pub r: f64,
    pub measured: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub condition: Condition,
    /// Smallest constant consistent with every sample.
    pub fitted_constant: f64,
    /// Constant the check was run against.
    pub tolerance: f64,
    /// Volume exponent (the lattice dimension) for volume growth.
    pub exponent: Option<usize>,
    pub seed: u64,
    pub sample_count: usize,
    pub samples: Vec<ConditionSample>,
    /// Samples breaking the bound at `tolerance`, with their witnesses.
    pub violations: Vec<ConditionSample>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContinuitySpec {
    pub centers: usize,
    pub pairs_per_center: usize,
    /// Centres are drawn from the cluster inside `B_o(center_radius)`.
    pub center_radius: f64,
    /// Partners are drawn from the cluster inside `B_x(max_separation)`.
    pub max_separation: f64,
    /// Constant `c` in `rho <= c * d_G`.
    pub constant: f64,
    pub seed: u64,
}

impl ContinuitySpec {
    pub fn new(pairs: usize, max_separation: f64, seed: u64) -> Self {
        Self {
            centers: pairs.div_ceil(10).max(1),
            pairs_per_center: 10.min(pairs.max(1)),
            center_radius: max_separation,
            max_separation,
            constant: 1.0,
            seed,
        }
    }
}

/// Check `rho(x, y) <= c * d_G(x, y)` on sampled pairs.
pub fn check_continuity(env: &Environment, spec: &ContinuitySpec) -> Result<ConditionReport> {
    let o = env.origin();
    let centers = env.ball_sites(o, spec.center_radius);
    if centers.is_empty() {
        return Err(Error::InvalidParameter("no cluster vertices to sample".into()));
    }
    let mut rng = RootSeed(spec.seed).auxiliary(0xC0);
    let mut samples = Vec::new();
    let mut fitted: f64 = 0.0;
    for _ in 0..spec.centers {
        let x = *centers.choose(&mut rng).expect("nonempty");
        let reach = env.ball_sites(x, spec.max_separation);
        let dist = bfs_distances(env, x, None);
        for _ in 0..spec.pairs_per_center {
            let y = *reach.choose(&mut rng).expect("x itself is in reach");
            let dg = dist[y.index()];
            if dg == u32::MAX {
                continue;
            }
            let r = (env.dist2(x, y) as f64).sqrt();
            if dg > 0 {
                fitted = fitted.max(r / f64::from(dg));
            }
            samples.push(ConditionSample {
                x: env.vertex(x),
                y: Some(env.vertex(y)),
                r,
                measured: r,
                bound: spec.constant * f64::from(dg),
            });
        }
    }
    let violations: Vec<_> = samples
        .iter()
        .filter(|s| s.measured > s.bound)
        .cloned()
        .collect();
    Ok(ConditionReport {
        condition: Condition::Continuity,
        fitted_constant: fitted,
        tolerance: spec.constant,
        exponent: None,
        seed: spec.seed,
        sample_count: samples.len(),
        pass: violations.is_empty(),
        samples,
        violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct VolumeGrowthSpec {
    pub radii: Vec<f64>,
    pub centers: usize,
    /// Admissible radius range; defaults to `[n^(1/d^3), n]`.
    pub range: Option<(f64, f64)>,
    /// Constant `c` the fitted value is compared against.
    pub tolerance: f64,
    pub seed: u64,
}

impl VolumeGrowthSpec {
    pub fn new(radii: Vec<f64>, centers: usize, tolerance: f64, seed: u64) -> Self {
        Self {
            radii,
            centers,
            range: None,
            tolerance,
            seed,
        }
    }
}

/// Default radius window `[n^(1/d^3), n]` for volume growth.
pub fn volume_growth_range(n: f64, dim: usize) -> (f64, f64) {
    let d3 = (dim * dim * dim) as f64;
    (n.powf(1.0 / d3), n)
}

/// Fit the smallest `c` with `r^d / c <= |B_x(r)| <= c r^d` over sampled
/// centres `x` in `B_o(n)` and the scheduled radii.
pub fn check_volume_growth(
    env: &Environment,
    n: f64,
    spec: &VolumeGrowthSpec,
) -> Result<ConditionReport> {
    let (lo, hi) = spec.range.unwrap_or_else(|| volume_growth_range(n, env.dim()));
    if let Some(r) = spec.radii.iter().find(|&&r| r < lo || r > hi) {
        return Err(Error::InvalidParameter(format!(
            "radius {r} outside the admissible range [{lo}, {hi}]"
        )));
    }
    let pool = env.ball_sites(env.origin(), n);
    if pool.is_empty() {
        return Err(Error::InvalidParameter("no cluster vertices to sample".into()));
    }
    let mut rng = RootSeed(spec.seed).auxiliary(0xD1);
    let d = env.dim() as i32;
    let mut samples = Vec::new();
    let mut violations = Vec::new();
    let mut fitted: f64 = 0.0;
    for i in 0..spec.centers {
        let x = if i == 0 {
            env.origin()
        } else {
            *pool.choose(&mut rng).expect("nonempty")
        };
        for &r in &spec.radii {
            let vol = r.powi(d);
            let b = env.ball_count(x, r) as f64;
            let need = if b == 0.0 {
                f64::INFINITY
            } else {
                (vol / b).max(b / vol)
            };
            fitted = fitted.max(need);
            let bound = if b < vol { vol / spec.tolerance } else { spec.tolerance * vol };
            let sample = ConditionSample {
                x: env.vertex(x),
                y: None,
                r,
                measured: b,
                bound,
            };
            if need > spec.tolerance {
                violations.push(sample.clone());
            }
            samples.push(sample);
        }
    }
    Ok(ConditionReport {
        condition: Condition::VolumeGrowth,
        fitted_constant: fitted,
        tolerance: spec.tolerance,
        exponent: Some(env.dim()),
        seed: spec.seed,
        sample_count: samples.len(),
        pass: violations.is_empty(),
        samples,
        violations,
    })
}

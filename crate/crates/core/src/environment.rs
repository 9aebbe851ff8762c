//! Finite realizations of `Z^d` boxes and bond-percolation clusters.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Added to the seed after each rejected sample.
pub const SEED_ADVANCE: u64 = 0x9E37_79B9_7F4A_7C15;

/// Default number of samples drawn before giving up on the conditioning.
pub const DEFAULT_RETRY_BUDGET: u32 = 64;

const MAX_SITES: usize = 1 << 28;
const MAX_DIM: usize = 8;

/// A lattice point in absolute coordinates.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Vertex(pub Vec<i32>);

impl Vertex {
    pub fn origin(dim: usize) -> Self {
        Vertex(vec![0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn coords(&self) -> &[i32] {
        &self.0
    }
}

impl From<Vec<i32>> for Vertex {
    fn from(v: Vec<i32>) -> Self {
        Vertex(v)
    }
}

impl<const N: usize> From<[i32; N]> for Vertex {
    fn from(v: [i32; N]) -> Self {
        Vertex(v.to_vec())
    }
}

impl fmt::Display for Vertex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, c) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{c}")?;
        }
        write!(f, ")")
    }
}

/// Dense index of a box vertex. Only meaningful for the environment that
/// produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Site(pub u32);

impl Site {
    #[inline]
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EnvironmentKind {
    FullLattice,
    Percolation,
}

/// The box `[-L, L]^d` with its open edges and the cluster of the origin.
///
/// Immutable after generation.
#[derive(Debug, Clone)]
pub struct Environment {
    dim: usize,
    half_extent: i32,
    p: f64,
    seed: u64,
    effective_seed: u64,
    attempts: u32,
    side: usize,
    strides: Vec<usize>,
    /// Bit `a` set when the edge to `+e_a` is open.
    plus_open: Vec<u16>,
    /// Open neighbours in canonical order, CSR layout.
    adj_start: Vec<u32>,
    adj: Vec<u32>,
    /// Index deltas in canonical neighbour order, as wrapping `u32`.
    offsets: Vec<u32>,
    in_cluster: Vec<bool>,
    cluster_size: usize,
    retained_edges: u64,
    box_edges: u64,
}

/// Generate an environment with the default retry budget.
/// `r * r`, snapped to the nearest integer when within rounding error so
/// that radii like `sqrt(10)` give exact strict-ball membership.
pub fn radius_squared(r: f64) -> f64 {
    let r2 = r * r;
    let k = r2.round();
    if k >= 1.0 && (r2 - k).abs() <= 1e-9 * k {
        k
    } else {
        r2
    }
}

pub fn generate(dim: usize, half_extent: i32, p: f64, seed: u64) -> Result<Environment> {
    generate_with_budget(dim, half_extent, p, seed, DEFAULT_RETRY_BUDGET)
}

/// Sample open edges of the box, keeping each independently with
/// probability `p`, and condition on the origin's cluster reaching every
/// face of the box. Rejected samples advance the seed by [`SEED_ADVANCE`].
pub fn generate_with_budget(
    dim: usize,
    half_extent: i32,
    p: f64,
    seed: u64,
    budget: u32,
) -> Result<Environment> {
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "dimension must be in 1..={MAX_DIM}, got {dim}"
        )));
    }
    if half_extent < 1 {
        return Err(Error::InvalidParameter(format!(
            "half extent must be positive, got {half_extent}"
        )));
    }
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::InvalidParameter(format!(
            "edge retention must lie in (0, 1], got {p}"
        )));
    }
    if budget == 0 {
        return Err(Error::InvalidParameter("retry budget must be positive".into()));
    }
    let side = 2 * half_extent as usize + 1;
    let sites = (0..dim).try_fold(1usize, |acc, _| acc.checked_mul(side));
    let sites = match sites {
        Some(s) if s <= MAX_SITES => s,
        _ => return Err(Error::TooLarge { dim, half_extent }),
    };
    let strides: Vec<usize> = (0..dim).map(|a| side.pow(a as u32)).collect();

    let mut current = seed;
    for attempt in 1..=budget {
        let mut env = Environment {
            dim,
            half_extent,
            p,
            seed,
            effective_seed: current,
            attempts: attempt,
            side,
            strides: strides.clone(),
            plus_open: Vec::new(),
            adj_start: Vec::new(),
            adj: Vec::new(),
            offsets: canonical_offsets(&strides),
            in_cluster: Vec::new(),
            cluster_size: 0,
            retained_edges: 0,
            box_edges: 0,
        };
        env.sample_edges(sites);
        env.build_adjacency();
        env.mark_cluster();
        if env.cluster_size > 1 && env.cluster_touches_every_face() {
            return Ok(env);
        }
        current = current.wrapping_add(SEED_ADVANCE);
    }
    Err(Error::RetryBudgetExhausted {
        dim,
        half_extent,
        p,
        attempts: budget,
    })
}

fn canonical_offsets(strides: &[usize]) -> Vec<u32> {
    let minus = strides.iter().map(|&s| (s as u32).wrapping_neg());
    let plus = strides.iter().rev().map(|&s| s as u32);
    minus.chain(plus).collect()
}

impl Environment {
    fn sample_edges(&mut self, sites: usize) {
        let l = self.half_extent;
        let mut rng = ChaCha8Rng::seed_from_u64(self.effective_seed);
        let keep_all = self.p >= 1.0;
        let mut plus_open = vec![0u16; sites];
        let mut coords = vec![-l; self.dim];
        let (mut retained, mut total) = (0u64, 0u64);
        for mask in plus_open.iter_mut() {
            for (axis, &c) in coords.iter().enumerate() {
                if c < l {
                    total += 1;
                    if keep_all || rng.random::<f64>() < self.p {
                        *mask |= 1 << axis;
                        retained += 1;
                    }
                }
            }
            advance_coords(&mut coords, l);
        }
        self.plus_open = plus_open;
        self.retained_edges = retained;
        self.box_edges = total;
    }

    fn build_adjacency(&mut self) {
        let sites = self.plus_open.len();
        let l = self.half_extent;
        let mut adj_start = Vec::with_capacity(sites + 1);
        let mut adj = Vec::with_capacity(sites * self.dim);
        let mut coords = vec![-l; self.dim];
        adj_start.push(0u32);
        for s in 0..sites {
            // Lexicographic order of offsets: -e_0, -e_1, .., -e_{d-1}, +e_{d-1}, .., +e_0.
            for axis in 0..self.dim {
                if coords[axis] > -l {
                    let t = s - self.strides[axis];
                    if self.plus_open[t] & (1 << axis) != 0 {
                        adj.push(t as u32);
                    }
                }
            }
            for axis in (0..self.dim).rev() {
                if self.plus_open[s] & (1 << axis) != 0 {
                    adj.push((s + self.strides[axis]) as u32);
                }
            }
            adj_start.push(adj.len() as u32);
            advance_coords(&mut coords, l);
        }
        self.adj_start = adj_start;
        self.adj = adj;
    }

    fn mark_cluster(&mut self) {
        let sites = self.plus_open.len();
        let mut in_cluster = vec![false; sites];
        let origin = self.origin().index();
        let mut queue = std::collections::VecDeque::new();
        in_cluster[origin] = true;
        queue.push_back(origin);
        let mut size = 1usize;
        while let Some(s) = queue.pop_front() {
            for &t in self.neighbors(Site(s as u32)) {
                let t = t as usize;
                if !in_cluster[t] {
                    in_cluster[t] = true;
                    size += 1;
                    queue.push_back(t);
                }
            }
        }
        self.in_cluster = in_cluster;
        self.cluster_size = size;
    }

    fn cluster_touches_every_face(&self) -> bool {
        let l = self.half_extent;
        let mut seen = vec![[false; 2]; self.dim];
        let mut coords = vec![0i32; self.dim];
        for s in 0..self.site_count() {
            if !self.in_cluster[s] {
                continue;
            }
            self.decode(Site(s as u32), &mut coords);
            for (axis, &c) in coords.iter().enumerate() {
                if c == -l {
                    seen[axis][0] = true;
                }
                if c == l {
                    seen[axis][1] = true;
                }
            }
        }
        seen.iter().all(|f| f[0] && f[1])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_extent(&self) -> i32 {
        self.half_extent
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn kind(&self) -> EnvironmentKind {
        if self.p >= 1.0 {
            EnvironmentKind::FullLattice
        } else {
            EnvironmentKind::Percolation
        }
    }

    /// The seed the caller asked for.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The seed of the accepted sample, after any rejections.
    pub fn effective_seed(&self) -> u64 {
        self.effective_seed
    }

    /// Samples drawn, including the accepted one.
    pub fn attempts(&self) -> u32 {
        self.attempts
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn site_count(&self) -> usize {
        self.plus_open.len()
    }

    pub fn cluster_size(&self) -> usize {
        self.cluster_size
    }

    pub fn retained_edges(&self) -> u64 {
        self.retained_edges
    }

    pub fn box_edges(&self) -> u64 {
        self.box_edges
    }

    pub fn origin(&self) -> Site {
        let l = self.half_extent as usize;
        Site(self.strides.iter().map(|s| s * l).sum::<usize>() as u32)
    }

    pub fn origin_vertex(&self) -> Vertex {
        Vertex::origin(self.dim)
    }

    pub fn contains(&self, v: &Vertex) -> bool {
        v.dim() == self.dim && v.0.iter().all(|c| c.abs() <= self.half_extent)
    }

    pub fn site(&self, v: &Vertex) -> Result<Site> {
        if v.dim() != self.dim {
            return Err(Error::DimensionMismatch(v.clone()));
        }
        if !self.contains(v) {
            return Err(Error::OutsideBox(v.clone()));
        }
        let l = self.half_extent;
        let idx: usize = v
            .0
            .iter()
            .zip(&self.strides)
            .map(|(&c, &s)| (c + l) as usize * s)
            .sum();
        Ok(Site(idx as u32))
    }

    /// Like [`Environment::site`] but additionally requires cluster membership.
    pub fn cluster_site(&self, v: &Vertex) -> Result<Site> {
        let s = self.site(v)?;
        if !self.in_cluster(s) {
            return Err(Error::NotInCluster(v.clone()));
        }
        Ok(s)
    }

    /// Write the coordinates of `s` into `out`.
    #[inline]
    pub fn decode(&self, s: Site, out: &mut [i32]) {
        let mut rem = s.index();
        for c in out.iter_mut().take(self.dim) {
            *c = (rem % self.side) as i32 - self.half_extent;
            rem /= self.side;
        }
    }

    pub fn vertex(&self, s: Site) -> Vertex {
        let mut c = vec![0; self.dim];
        self.decode(s, &mut c);
        Vertex(c)
    }

    #[inline]
    pub fn in_cluster(&self, s: Site) -> bool {
        self.in_cluster[s.index()]
    }

    pub fn cluster_sites(&self) -> impl Iterator<Item = Site> + '_ {
        self.in_cluster
            .iter()
            .enumerate()
            .filter(|(_, &c)| c)
            .map(|(i, _)| Site(i as u32))
    }

    /// Open neighbours of `s` in canonical order.
    #[inline]
    pub fn neighbors(&self, s: Site) -> &[u32] {
        let i = s.index();
        &self.adj[self.adj_start[i] as usize..self.adj_start[i + 1] as usize]
    }

    /// Neighbour `k` of a site whose `2d` edges are all open, without
    /// touching the adjacency list.
    #[inline]
    pub(crate) fn full_step(&self, s: Site, k: usize) -> Site {
        Site(s.0.wrapping_add(self.offsets[k]))
    }

    #[inline]
    pub fn degree(&self, s: Site) -> usize {
        let i = s.index();
        (self.adj_start[i + 1] - self.adj_start[i]) as usize
    }

    /// Vertices joined to `v` by open edges, ordered lexicographically by
    /// coordinate offset.
    pub fn open_neighbors(&self, v: &Vertex) -> Result<Vec<Vertex>> {
        let s = self.site(v)?;
        Ok(self
            .neighbors(s)
            .iter()
            .map(|&t| self.vertex(Site(t)))
            .collect())
    }

    /// Open edges as `(lower, upper)` site pairs, in the sampling order.
    pub fn open_edges(&self) -> impl Iterator<Item = (Site, Site)> + '_ {
        self.plus_open.iter().enumerate().flat_map(move |(s, &mask)| {
            (0..self.dim)
                .filter(move |a| mask & (1 << a) != 0)
                .map(move |a| (Site(s as u32), Site((s + self.strides[a]) as u32)))
        })
    }

    /// Squared Euclidean distance between two sites.
    #[inline]
    pub fn dist2(&self, a: Site, b: Site) -> i64 {
        let (mut x, mut y) = (a.index(), b.index());
        let mut acc = 0i64;
        for _ in 0..self.dim {
            let d = (x % self.side) as i64 - (y % self.side) as i64;
            acc += d * d;
            x /= self.side;
            y /= self.side;
        }
        acc
    }

    /// Squared distance from the origin.
    #[inline]
    pub fn norm2(&self, s: Site) -> i64 {
        self.dist2(s, self.origin())
    }

    /// Visit every box site within the cube of half-width `reach` around `center`.
    pub fn for_each_in_cube(&self, center: Site, reach: i32, mut f: impl FnMut(Site)) {
        let l = self.half_extent;
        let mut c = vec![0i32; self.dim];
        self.decode(center, &mut c);
        let lo: Vec<i32> = c.iter().map(|&x| (x - reach).max(-l)).collect();
        let hi: Vec<i32> = c.iter().map(|&x| (x + reach).min(l)).collect();
        let mut cur = lo.clone();
        loop {
            let idx: usize = cur
                .iter()
                .zip(&self.strides)
                .map(|(&x, &s)| (x + l) as usize * s)
                .sum();
            f(Site(idx as u32));
            let mut axis = 0;
            loop {
                if axis == self.dim {
                    return;
                }
                if cur[axis] < hi[axis] {
                    cur[axis] += 1;
                    break;
                }
                cur[axis] = lo[axis];
                axis += 1;
            }
        }
    }

    /// Cluster sites `y` with `rho(center, y) < radius`.
    pub fn ball_sites(&self, center: Site, radius: f64) -> Vec<Site> {
        let mut out = Vec::new();
        if radius <= 0.0 {
            return out;
        }
        let r2 = radius_squared(radius);
        let reach = radius.ceil() as i32;
        self.for_each_in_cube(center, reach, |s| {
            if self.in_cluster(s) && (self.dist2(center, s) as f64) < r2 {
                out.push(s);
            }
        });
        out
    }

    pub fn ball_count(&self, center: Site, radius: f64) -> usize {
        if radius <= 0.0 {
            return 0;
        }
        let r2 = radius_squared(radius);
        let mut n = 0;
        self.for_each_in_cube(center, radius.ceil() as i32, |s| {
            if self.in_cluster(s) && (self.dist2(center, s) as f64) < r2 {
                n += 1;
            }
        });
        n
    }

    /// Number of cluster vertices strictly within Euclidean distance `r` of `x`.
    pub fn cluster_ball_count(&self, x: &Vertex, r: f64) -> Result<usize> {
        let s = self.cluster_site(x)?;
        if r.is_nan() || r < 0.0 {
            return Err(Error::InvalidParameter(format!("radius must be nonnegative, got {r}")));
        }
        Ok(self.ball_count(s, r))
    }

    /// Distance from the origin to the `count`-th nearest cluster vertex:
    /// the radius at which the open ball around the origin first exceeds
    /// `count - 1` cluster vertices. `None` when the cluster is too small.
    pub fn radius_for_count(&self, count: usize) -> Option<f64> {
        if count == 0 {
            return Some(0.0);
        }
        let mut d2: Vec<i64> = self.cluster_sites().map(|s| self.norm2(s)).collect();
        if count > d2.len() {
            return None;
        }
        let (_, k, _) = d2.select_nth_unstable(count - 1);
        Some((*k as f64).sqrt())
    }

    pub fn manifest(&self) -> RunManifest {
        RunManifest {
            schema: MANIFEST_SCHEMA,
            version: crate::VERSION.to_string(),
            dim: self.dim,
            half_extent: self.half_extent,
            p: self.p,
            seed: self.seed,
            kind: self.kind(),
            effective_seed: self.effective_seed,
            attempts: self.attempts,
            cluster_size: self.cluster_size,
            touches_boundary: self.cluster_touches_every_face(),
            retained_edges: self.retained_edges,
            box_edges: self.box_edges,
        }
    }
}

fn advance_coords(coords: &mut [i32], l: i32) {
    for c in coords.iter_mut() {
        if *c < l {
            *c += 1;
            return;
        }
        *c = -l;
    }
}

pub const MANIFEST_SCHEMA: u32 = 1;

/// Serde helpers for `u64` fields in TOML, whose integers are `i64`. Values
/// above `i64::MAX` are written as decimal strings; both forms are read.
pub mod wide_u64 {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => s.serialize_i64(i),
            Err(_) => s.serialize_str(&v.to_string()),
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Int(u64),
            Text(String),
        }
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t.parse().map_err(de::Error::custom),
        }
    }
}

/// Everything needed to regenerate an environment, plus summary statistics.
/// Open edges are never stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub version: String,
    pub dim: usize,
    pub half_extent: i32,
    pub p: f64,
    #[serde(with = "wide_u64")]
    pub seed: u64,
    pub kind: EnvironmentKind,
    #[serde(with = "wide_u64")]
    pub effective_seed: u64,
    pub attempts: u32,
    pub cluster_size: usize,
    pub touches_boundary: bool,
    pub retained_edges: u64,
    pub box_edges: u64,
}

impl RunManifest {
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest fields are always representable")
    }

    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Rebuild the environment and check it matches the recorded sample.
    pub fn regenerate(&self) -> Result<Environment> {
        let env = generate(self.dim, self.half_extent, self.p, self.seed)?;
        if env.effective_seed != self.effective_seed || env.cluster_size != self.cluster_size {
            return Err(Error::Parse(format!(
                "manifest does not reproduce: expected effective seed {} and cluster size {}, got {} and {}",
                self.effective_seed, self.cluster_size, env.effective_seed, env.cluster_size
            )));
        }
        Ok(env)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_square_box_keeps_everything() {
        let env = generate(2, 5, 1.0, 17).unwrap();
        assert_eq!(env.cluster_size(), 121);
        assert_eq!(env.kind(), EnvironmentKind::FullLattice);
        assert_eq!(env.retained_edges(), env.box_edges());
        assert_eq!(env.box_edges(), 2 * 11 * 10);
    }

    #[test]
    fn full_line_box() {
        let env = generate(1, 3, 1.0, 0).unwrap();
        assert_eq!(env.cluster_size(), 7);
        let sites: Vec<Vertex> = env.cluster_sites().map(|s| env.vertex(s)).collect();
        let expect: Vec<Vertex> = (-3..=3).map(|x| Vertex(vec![x])).collect();
        assert_eq!(sites, expect);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(matches!(generate(0, 3, 1.0, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(generate(2, 0, 1.0, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(generate(2, 3, 0.0, 0), Err(Error::InvalidParameter(_))));
        assert!(matches!(generate(2, 3, 1.5, 0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn subcritical_exhausts_budget() {
        let err = generate(2, 30, 0.05, 1).unwrap_err();
        assert!(matches!(err, Error::RetryBudgetExhausted { attempts: 64, .. }));
    }

    #[test]
    fn interior_degree_and_box_edge() {
        let env = generate(2, 4, 1.0, 0).unwrap();
        let v = Vertex(vec![1, -2]);
        let n = env.open_neighbors(&v).unwrap();
        assert_eq!(
            n,
            vec![
                Vertex(vec![0, -2]),
                Vertex(vec![1, -3]),
                Vertex(vec![1, -1]),
                Vertex(vec![2, -2]),
            ]
        );
        let line = generate(1, 4, 1.0, 0).unwrap();
        assert_eq!(line.open_neighbors(&Vertex(vec![4])).unwrap(), vec![Vertex(vec![3])]);
        assert!(matches!(
            line.open_neighbors(&Vertex(vec![5])),
            Err(Error::OutsideBox(_))
        ));
    }

    #[test]
    fn ball_counts_on_full_plane() {
        let env = generate(2, 6, 1.0, 0).unwrap();
        let o = env.origin_vertex();
        assert_eq!(env.cluster_ball_count(&o, 2.0).unwrap(), 9);
        assert_eq!(env.cluster_ball_count(&o, 0.0).unwrap(), 0);
        assert_eq!(env.cluster_ball_count(&o, 1.0).unwrap(), 1);
        assert_eq!(env.cluster_ball_count(&o, 1.0001).unwrap(), 5);
    }

    #[test]
    fn radius_for_count_inverts_ball_count() {
        let env = generate(2, 20, 0.7, 3).unwrap();
        for count in [1usize, 5, 37, 300, 800] {
            let r = env.radius_for_count(count).unwrap();
            let o = env.origin();
            assert!(env.ball_count(o, r) < count, "count {count} r {r}");
            assert!(env.ball_count(o, r + 1e-6) >= count, "count {count} r {r}");
        }
    }

    #[test]
    fn manifest_round_trips() {
        let env = generate(2, 12, 0.65, 99).unwrap();
        let m = env.manifest();
        let text = m.to_toml();
        let back = RunManifest::from_toml(&text).unwrap();
        assert_eq!(m, back);
        let again = back.regenerate().unwrap();
        assert_eq!(again.open_edges().collect::<Vec<_>>(), env.open_edges().collect::<Vec<_>>());
    }

    #[test]
    fn manifest_keeps_seeds_beyond_i64() {
        let env = generate(2, 6, 1.0, u64::MAX).unwrap();
        let text = env.manifest().to_toml();
        assert!(text.contains(&format!("seed = \"{}\"", u64::MAX)));
        assert_eq!(RunManifest::from_toml(&text).unwrap().seed, u64::MAX);
        let small = generate(2, 6, 1.0, 7).unwrap().manifest().to_toml();
        assert!(small.contains("\nseed = 7\n"));
    }
}

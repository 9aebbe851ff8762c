//! Exact exit and pause laws of stopped walks, by solving the absorbing
//! chain's linear system.
//!
//! Transient states are the sites of `occupied ∩ region` reachable from the
//! start. From a transient site `v` with open degree `deg(v)`, each neighbour
//! `w` is taken with probability `1/deg(v)`; stepping out of the region ends
//! in a pause at `v` with pending step `w`, stepping out of the occupied set ends in absorption at
//! `w`. Writing `Q` for the transient block and `g` for the expected number of
//! visits from the start, `g (I - Q) = e_start` and the law of each outcome is
//! the `g`-weighted exit rate into it.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Site, Vertex};
use crate::error::{Error, Result};
use crate::linalg::{solve_cg, solve_dense, SparseSymmetric};
use crate::walk::{Occupancy, PauseRegion, SortedSites};

/// Systems up to this size are solved densely.
const DENSE_LIMIT: usize = 600;

/// Joint law of where a stopped walk ends and whether it paused.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WalkLaw {
    pub absorbed: BTreeMap<Site, f64>,
    /// Keyed by (pause position, attempted step).
    pub paused: BTreeMap<(Site, Site), f64>,
}

impl WalkLaw {
    pub fn total(&self) -> f64 {
        self.absorbed.values().sum::<f64>() + self.paused.values().sum::<f64>()
    }

    pub fn pause_probability(&self) -> f64 {
        self.paused.values().sum()
    }

    /// Pause probability at `v`, summed over attempted steps.
    pub fn paused_at(&self, v: Site) -> f64 {
        self.paused
            .range((v, Site(0))..=(v, Site(u32::MAX)))
            .map(|(_, p)| p)
            .sum()
    }

    fn point_absorbed(s: Site) -> Self {
        Self {
            absorbed: BTreeMap::from([(s, 1.0)]),
            paused: BTreeMap::new(),
        }
    }
}

struct Chain {
    states: Vec<Site>,
    index: HashMap<Site, usize>,
}

fn discover<S: Occupancy + ?Sized>(
    env: &Environment,
    start: Site,
    occupied: &S,
    region: &PauseRegion,
) -> Chain {
    let mut states = vec![start];
    let mut index = HashMap::from([(start, 0usize)]);
    let mut head = 0;
    while head < states.len() {
        let v = states[head];
        head += 1;
        for &w in env.neighbors(v) {
            let w = Site(w);
            if region.contains(w) && occupied.is_occupied(w) && !index.contains_key(&w) {
                index.insert(w, states.len());
                states.push(w);
            }
        }
    }
    Chain { states, index }
}

/// Some reachable state must border an exit, or the walk never stops.
fn ensure_escape<S: Occupancy + ?Sized>(
    env: &Environment,
    chain: &Chain,
    occupied: &S,
    region: &PauseRegion,
) -> Result<()> {
    let open = chain.states.iter().any(|&v| {
        env.neighbors(v)
            .iter()
            .any(|&w| !region.contains(Site(w)) || !occupied.is_occupied(Site(w)))
    });
    if open {
        Ok(())
    } else {
        Err(Error::NoEscape(env.vertex(chain.states[0])))
    }
}

fn check_start<S: Occupancy + ?Sized>(
    env: &Environment,
    start: Site,
    occupied: &S,
    region: &PauseRegion,
) -> Result<()> {
    if !region.contains(start) {
        return Err(Error::StartOutsidePauseRegion(env.vertex(start)));
    }
    if !occupied.is_occupied(start) {
        return Err(Error::InvalidParameter(format!(
            "walk start {} is not in the occupied set",
            env.vertex(start)
        )));
    }
    Ok(())
}

/// Exact law of [`crate::walk::walk_until`] from `start`.
pub fn exact_walk_law<S: Occupancy + ?Sized>(
    env: &Environment,
    start: Site,
    occupied: &S,
    region: &PauseRegion,
) -> Result<WalkLaw> {
    check_start(env, start, occupied, region)?;
    let chain = discover(env, start, occupied, region);
    ensure_escape(env, &chain, occupied, region)?;
    if chain.states.len() <= DENSE_LIMIT {
        dense_law(env, &chain, occupied, region, 0.0)
    } else {
        sparse_law(env, &chain, occupied, region)
    }
}

/// Exact law of [`crate::walk::resume_walk`]: a walk paused at `position`
/// that first replays its step to `attempted`.
pub fn exact_resume_law<S: Occupancy + ?Sized>(
    env: &Environment,
    position: Site,
    attempted: Site,
    occupied: &S,
    region: &PauseRegion,
) -> Result<WalkLaw> {
    check_start(env, position, occupied, region)?;
    if !region.contains(attempted) {
        return Ok(WalkLaw {
            absorbed: BTreeMap::new(),
            paused: BTreeMap::from([((position, attempted), 1.0)]),
        });
    }
    if !occupied.is_occupied(attempted) {
        return Ok(WalkLaw::point_absorbed(attempted));
    }
    exact_walk_law(env, attempted, occupied, region)
}

/// Same law for a lazy walk that holds with probability `holding` each
/// step. Always solved densely.
pub fn exact_walk_law_lazy<S: Occupancy + ?Sized>(
    env: &Environment,
    start: Site,
    occupied: &S,
    region: &PauseRegion,
    holding: f64,
) -> Result<WalkLaw> {
    if !(0.0..1.0).contains(&holding) {
        return Err(Error::InvalidParameter(format!(
            "holding probability must lie in [0, 1), got {holding}"
        )));
    }
    check_start(env, start, occupied, region)?;
    let chain = discover(env, start, occupied, region);
    ensure_escape(env, &chain, occupied, region)?;
    dense_law(env, &chain, occupied, region, holding)
}

fn accumulate_exits<S: Occupancy + ?Sized>(
    env: &Environment,
    chain: &Chain,
    occupied: &S,
    region: &PauseRegion,
    weight: impl Fn(usize, Site) -> f64,
) -> WalkLaw {
    let mut law = WalkLaw::default();
    for (i, &v) in chain.states.iter().enumerate() {
        let nbrs = env.neighbors(v);
        let w_v = weight(i, v);
        if w_v == 0.0 {
            continue;
        }
        for &w in nbrs {
            let w = Site(w);
            if !region.contains(w) {
                *law.paused.entry((v, w)).or_insert(0.0) += w_v;
            } else if !occupied.is_occupied(w) {
                *law.absorbed.entry(w).or_insert(0.0) += w_v;
            }
        }
    }
    law
}

fn dense_law<S: Occupancy + ?Sized>(
    env: &Environment,
    chain: &Chain,
    occupied: &S,
    region: &PauseRegion,
    holding: f64,
) -> Result<WalkLaw> {
    let n = chain.states.len();
    // Transpose of (I - Q): column v holds the row of state v.
    let mut mt = vec![0.0; n * n];
    for (i, &v) in chain.states.iter().enumerate() {
        let nbrs = env.neighbors(v);
        if nbrs.is_empty() {
            return Err(Error::Trapped(env.vertex(v)));
        }
        let step = (1.0 - holding) / nbrs.len() as f64;
        mt[i * n + i] += 1.0 - holding;
        for &w in nbrs {
            if let Some(&j) = chain.index.get(&Site(w)) {
                mt[j * n + i] -= step;
            }
        }
    }
    let mut e = vec![0.0; n];
    e[0] = 1.0;
    let g = solve_dense(mt, e).ok_or_else(|| Error::NoEscape(env.vertex(chain.states[0])))?;
    Ok(accumulate_exits(env, chain, occupied, region, |i, v| {
        g[i] * (1.0 - holding) / env.degree(v) as f64
    }))
}

fn sparse_law<S: Occupancy + ?Sized>(
    env: &Environment,
    chain: &Chain,
    occupied: &S,
    region: &PauseRegion,
) -> Result<WalkLaw> {
    // (D - A) y = e_start on transient states; visits are g_v = y_v deg(v),
    // so the flux into each exit edge of v is y_v.
    let n = chain.states.len();
    let mut m = SparseSymmetric {
        diag: Vec::with_capacity(n),
        rows: Vec::with_capacity(n),
    };
    for &v in &chain.states {
        m.diag.push(env.degree(v) as f64);
        m.rows.push(
            env.neighbors(v)
                .iter()
                .filter_map(|&w| chain.index.get(&Site(w)).map(|&j| (j, -1.0)))
                .collect(),
        );
    }
    let mut e = vec![0.0; n];
    e[0] = 1.0;
    let y = solve_cg(&m, &e, 1e-15, 20 * n + 1000)
        .ok_or_else(|| Error::NoEscape(env.vertex(chain.states[0])))?;
    Ok(accumulate_exits(env, chain, occupied, region, |i, _| y[i]))
}

/// Law of the first vertex outside a set for a walk started inside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitDistribution {
    pub start: Vertex,
    pub probabilities: BTreeMap<Vertex, f64>,
}

impl ExitDistribution {
    pub fn total(&self) -> f64 {
        self.probabilities.values().sum()
    }

    pub fn get(&self, v: &Vertex) -> f64 {
        self.probabilities.get(v).copied().unwrap_or(0.0)
    }
}

/// Exact harmonic measure of `set` seen from `start`.
pub fn exact_exit_distribution(
    env: &Environment,
    start: &Vertex,
    set: &[Vertex],
) -> Result<ExitDistribution> {
    let sites = set
        .iter()
        .map(|v| env.site(v))
        .collect::<Result<Vec<_>>>()?;
    let occupied = SortedSites::new(sites);
    let s = env.site(start)?;
    if !occupied.is_occupied(s) {
        return Err(Error::InvalidParameter(format!("start {start} is not in the set")));
    }
    let law = exact_walk_law(env, s, &occupied, &PauseRegion::Everywhere)?;
    Ok(ExitDistribution {
        start: start.clone(),
        probabilities: law
            .absorbed
            .into_iter()
            .map(|(s, p)| (env.vertex(s), p))
            .collect(),
    })
}

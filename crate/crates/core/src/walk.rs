//! Simple random walk on an environment with absorption and pausing.

use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Site};
use crate::error::{Error, Result};
use crate::rng::StepRng;

/// Per-particle step cap.
pub const DEFAULT_STEP_CAP: u64 = 1_000_000_000;

/// Membership queries for the set a walk is absorbed upon leaving.
pub trait Occupancy {
    fn is_occupied(&self, s: Site) -> bool;
}

/// A subset of the box sites, stored as a bitmap.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SiteSet {
    bits: Vec<bool>,
    len: usize,
}

impl SiteSet {
    pub fn empty(env: &Environment) -> Self {
        Self {
            bits: vec![false; env.site_count()],
            len: 0,
        }
    }

    pub fn from_sites(env: &Environment, sites: impl IntoIterator<Item = Site>) -> Self {
        let mut set = Self::empty(env);
        for s in sites {
            set.insert(s);
        }
        set
    }

    /// Cluster vertices in the open ball of `radius` around `center`.
    pub fn ball(env: &Environment, center: Site, radius: f64) -> Self {
        Self::from_sites(env, env.ball_sites(center, radius))
    }

    pub fn insert(&mut self, s: Site) -> bool {
        let slot = &mut self.bits[s.index()];
        if *slot {
            false
        } else {
            *slot = true;
            self.len += 1;
            true
        }
    }

    #[inline]
    pub fn contains(&self, s: Site) -> bool {
        self.bits[s.index()]
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = Site> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| Site(i as u32))
    }
}

impl Occupancy for SiteSet {
    #[inline]
    fn is_occupied(&self, s: Site) -> bool {
        self.contains(s)
    }
}

/// Sorted list of sites; convenient for small exact computations.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct SortedSites(pub Vec<Site>);

impl SortedSites {
    pub fn new(mut sites: Vec<Site>) -> Self {
        sites.sort_unstable();
        sites.dedup();
        Self(sites)
    }

    pub fn with(&self, s: Site) -> Self {
        let mut v = self.0.clone();
        if let Err(i) = v.binary_search(&s) {
            v.insert(i, s);
        }
        Self(v)
    }
}

impl Occupancy for SortedSites {
    fn is_occupied(&self, s: Site) -> bool {
        self.0.binary_search(&s).is_ok()
    }
}

/// Where a walk is paused: nowhere, or upon trying to leave a site set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PauseRegion {
    Everywhere,
    Within(SiteSet),
}

impl PauseRegion {
    /// Open ball of `radius` around `center`; an infinite radius disables pausing.
    pub fn ball(env: &Environment, center: Site, radius: f64) -> Self {
        if radius.is_infinite() {
            PauseRegion::Everywhere
        } else {
            PauseRegion::Within(SiteSet::ball(env, center, radius))
        }
    }

    #[inline]
    pub fn contains(&self, s: Site) -> bool {
        match self {
            PauseRegion::Everywhere => true,
            PauseRegion::Within(set) => set.contains(s),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkStatus {
    Absorbed,
    Paused,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkOutcome {
    pub status: WalkStatus,
    pub position: Site,
    /// For a pause, the step the walk was about to take. Resuming replays
    /// it, so the walk's trajectory is unaffected by the pause.
    pub attempted: Option<Site>,
    pub steps: u64,
}

/// Run a walk from `start` until it first leaves `occupied` (absorbed at the
/// first vertex outside) or tries to step out of `region` (paused at its
/// last position inside). A step leaving both at once counts as a pause.
pub fn walk_until<S: Occupancy + ?Sized>(
    env: &Environment,
    start: Site,
    occupied: &S,
    region: &PauseRegion,
    rng: &mut StepRng,
    step_cap: u64,
) -> Result<WalkOutcome> {
    check_start(env, start, occupied, region)?;
    launch(env, start, None, occupied, region, rng, step_cap)
}

/// Continue a walk paused at `position`, starting with the step to
/// `attempted` it was about to take.
pub fn resume_walk<S: Occupancy + ?Sized>(
    env: &Environment,
    position: Site,
    attempted: Site,
    occupied: &S,
    region: &PauseRegion,
    rng: &mut StepRng,
    step_cap: u64,
) -> Result<WalkOutcome> {
    check_start(env, position, occupied, region)?;
    if !env.neighbors(position).contains(&attempted.0) {
        return Err(Error::InvalidParameter(format!(
            "{} is not an open neighbour of {}",
            env.vertex(attempted),
            env.vertex(position)
        )));
    }
    launch(env, position, Some(attempted), occupied, region, rng, step_cap)
}

fn launch<S: Occupancy + ?Sized>(
    env: &Environment,
    start: Site,
    first: Option<Site>,
    occupied: &S,
    region: &PauseRegion,
    rng: &mut StepRng,
    step_cap: u64,
) -> Result<WalkOutcome> {
    match region {
        PauseRegion::Everywhere => {
            with_local(rng, |r| run(env, start, first, occupied, |_| true, r, step_cap))
        }
        PauseRegion::Within(set) => {
            with_local(rng, |r| run(env, start, first, occupied, |s| set.contains(s), r, step_cap))
        }
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

/// Work on a stack copy of the generator so its buffer stays in registers.
#[inline(always)]
fn with_local<T>(rng: &mut StepRng, f: impl FnOnce(&mut StepRng) -> T) -> T {
    let mut local = rng.clone();
    let out = f(&mut local);
    *rng = local;
    out
}

#[inline(always)]
#[allow(clippy::too_many_arguments)]
fn run<S: Occupancy + ?Sized>(
    env: &Environment,
    start: Site,
    first: Option<Site>,
    occupied: &S,
    inside: impl Fn(Site) -> bool,
    rng: &mut StepRng,
    step_cap: u64,
) -> Result<WalkOutcome> {
    let mut cur = start;
    let mut steps = 0u64;
    if let Some(next) = first {
        if let Some(out) = settle(cur, next, steps, occupied, &inside) {
            return Ok(out);
        }
        steps = 1;
        cur = next;
    }
    let full = 2 * env.dim();
    loop {
        if steps >= step_cap {
            return Err(Error::StepCapExceeded {
                start: env.vertex(start),
                last: env.vertex(cur),
                cap: step_cap,
            });
        }
        let deg = env.degree(cur);
        // Interior sites draw with a loop-invariant degree and skip the
        // adjacency lookup, which keeps the dependent chain per step short.
        let next = if deg == full {
            env.full_step(cur, rng.below(full as u32) as usize)
        } else if deg == 0 {
            return Err(Error::Trapped(env.vertex(cur)));
        } else {
            Site(env.neighbors(cur)[rng.below(deg as u32) as usize])
        };
        if let Some(out) = settle(cur, next, steps, occupied, &inside) {
            return Ok(out);
        }
        steps += 1;
        cur = next;
    }
}

/// Outcome of stepping from `cur` to `next`, or `None` to keep walking.
#[inline(always)]
fn settle<S: Occupancy + ?Sized>(
    cur: Site,
    next: Site,
    steps: u64,
    occupied: &S,
    inside: &impl Fn(Site) -> bool,
) -> Option<WalkOutcome> {
    if !inside(next) {
        return Some(WalkOutcome {
            status: WalkStatus::Paused,
            position: cur,
            attempted: Some(next),
            steps,
        });
    }
    if !occupied.is_occupied(next) {
        return Some(WalkOutcome {
            status: WalkStatus::Absorbed,
            position: next,
            attempted: None,
            steps: steps + 1,
        });
    }
    None
}

/// Whether a walk from `start`, stopped on leaving `inside`, visits `target`
/// (the start counts).
pub fn hits_before_exit(
    env: &Environment,
    start: Site,
    inside: &SiteSet,
    target: &SiteSet,
    rng: &mut StepRng,
    step_cap: u64,
) -> Result<bool> {
    if !inside.contains(start) {
        return Err(Error::InvalidParameter(format!(
            "walk start {} is outside the stopping set",
            env.vertex(start)
        )));
    }
    let mut cur = start;
    let mut steps = 0u64;
    loop {
        if target.contains(cur) {
            return Ok(true);
        }
        let nbrs = env.neighbors(cur);
        if nbrs.is_empty() {
            return Err(Error::Trapped(env.vertex(cur)));
        }
        if steps >= step_cap {
            return Err(Error::StepCapExceeded {
                start: env.vertex(start),
                last: env.vertex(cur),
                cap: step_cap,
            });
        }
        cur = Site(nbrs[rng.below(nbrs.len() as u32) as usize]);
        steps += 1;
        if !inside.contains(cur) {
            return Ok(false);
        }
    }
}

//! Aggregates, paused batches, restarts and the staged-radius construction.

use serde::{Deserialize, Serialize};

use crate::environment::{Environment, Site, Vertex};
use crate::error::{Error, Result};
use crate::rng::{ReplicaStreams, StepRng};
use crate::walk::{resume_walk, walk_until, Occupancy, PauseRegion, WalkStatus, DEFAULT_STEP_CAP};

/// Stage budget for [`staged_construction`].
pub const DEFAULT_STAGE_CAP: usize = 10_000;

/// The occupied set, in insertion order.
#[derive(Debug, Clone)]
pub struct Aggregate {
    origin: Site,
    occupied: Vec<bool>,
    history: Vec<Site>,
    initial: usize,
}

impl Aggregate {
    /// Empty aggregate around `origin`.
    pub fn new(env: &Environment, origin: Site) -> Self {
        Self {
            origin,
            occupied: vec![false; env.site_count()],
            history: Vec::new(),
            initial: 0,
        }
    }

    /// Aggregate seeded with an existing set. Seed sites count toward
    /// `len` but not toward `particles_settled`.
    pub fn with_sites(env: &Environment, origin: Site, sites: impl IntoIterator<Item = Site>) -> Self {
        let mut a = Self::new(env, origin);
        for s in sites {
            a.insert(s);
        }
        a.initial = a.history.len();
        a
    }

    fn insert(&mut self, s: Site) {
        let slot = &mut self.occupied[s.index()];
        debug_assert!(!*slot);
        *slot = true;
        self.history.push(s);
    }

    pub fn origin(&self) -> Site {
        self.origin
    }

    #[inline]
    pub fn contains(&self, s: Site) -> bool {
        self.occupied[s.index()]
    }

    pub fn len(&self) -> usize {
        self.history.len()
    }

    pub fn is_empty(&self) -> bool {
        self.history.is_empty()
    }

    /// Particles settled since construction.
    pub fn particles_settled(&self) -> usize {
        self.history.len() - self.initial
    }

    /// Sites in insertion order; seed sites first.
    pub fn history(&self) -> &[Site] {
        &self.history
    }

    pub fn sorted_sites(&self) -> Vec<Site> {
        let mut v = self.history.clone();
        v.sort_unstable();
        v
    }

    pub fn vertices(&self, env: &Environment) -> Vec<Vertex> {
        self.history.iter().map(|&s| env.vertex(s)).collect()
    }

    /// Largest Euclidean distance from the origin to an occupied site.
    pub fn outradius(&self, env: &Environment) -> f64 {
        self.history
            .iter()
            .map(|&s| env.dist2(self.origin, s))
            .max()
            .map_or(0.0, |d| (d as f64).sqrt())
    }
}

impl Occupancy for Aggregate {
    #[inline]
    fn is_occupied(&self, s: Site) -> bool {
        self.contains(s)
    }
}

/// A walker with its own random stream.
#[derive(Debug, Clone)]
pub struct Particle {
    pub id: u64,
    pub rng: StepRng,
    /// Step a paused walker was about to take; replayed when it resumes.
    pub attempted: Option<Site>,
}

impl Particle {
    pub fn new(id: u64, rng: StepRng) -> Self {
        Self {
            id,
            rng,
            attempted: None,
        }
    }
}

/// Draw `count` fresh particles from a replica's streams.
pub fn release(streams: &mut ReplicaStreams, count: usize) -> Vec<Particle> {
    (0..count)
        .map(|_| {
            let id = streams.released();
            Particle::new(id, streams.next_particle())
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct PausedParticle {
    pub position: Site,
    pub particle: Particle,
}

impl PausedParticle {
    /// The step out of the pause region that triggered the pause.
    pub fn attempted(&self) -> Site {
        self.particle.attempted.expect("paused particles record their step")
    }
}

/// Paused particles in the order they paused.
#[derive(Debug, Clone, Default)]
pub struct PausedLedger {
    entries: Vec<PausedParticle>,
}

impl PausedLedger {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn positions(&self) -> Vec<Site> {
        self.entries.iter().map(|e| e.position).collect()
    }

    pub fn entries(&self) -> &[PausedParticle] {
        &self.entries
    }

    pub fn push(&mut self, entry: PausedParticle) {
        self.entries.push(entry);
    }

    /// Hand the paused particles back as a batch, keeping their order and
    /// their partly consumed streams.
    pub fn into_batch(self) -> Vec<(Site, Particle)> {
        self.entries
            .into_iter()
            .map(|e| (e.position, e.particle))
            .collect()
    }
}

/// Move one particle from `start` until it settles or pauses.
///
/// A particle starting outside the aggregate settles where it stands. A
/// start outside the pause region is rejected. A particle that paused
/// earlier resumes with the step it was about to take.
pub fn add_particle(
    env: &Environment,
    aggregate: &mut Aggregate,
    start: Site,
    region: &PauseRegion,
    mut particle: Particle,
    step_cap: u64,
) -> Result<Option<PausedParticle>> {
    if !env.in_cluster(start) {
        return Err(Error::NotInCluster(env.vertex(start)));
    }
    if !region.contains(start) {
        return Err(Error::StartOutsidePauseRegion(env.vertex(start)));
    }
    if !aggregate.contains(start) {
        aggregate.insert(start);
        return Ok(None);
    }
    let out = match particle.attempted.take() {
        Some(next) => resume_walk(env, start, next, aggregate, region, &mut particle.rng, step_cap)?,
        None => walk_until(env, start, aggregate, region, &mut particle.rng, step_cap)?,
    };
    particle.attempted = out.attempted;
    match out.status {
        WalkStatus::Absorbed => {
            aggregate.insert(out.position);
            Ok(None)
        }
        WalkStatus::Paused => Ok(Some(PausedParticle {
            position: out.position,
            particle,
        })),
    }
}

/// Fold [`add_particle`] over a batch in order.
pub fn add_batch(
    env: &Environment,
    aggregate: &mut Aggregate,
    batch: Vec<(Site, Particle)>,
    region: &PauseRegion,
    step_cap: u64,
) -> Result<PausedLedger> {
    let mut ledger = PausedLedger::default();
    for (start, particle) in batch {
        if let Some(p) = add_particle(env, aggregate, start, region, particle, step_cap)? {
            ledger.push(p);
        }
    }
    Ok(ledger)
}

/// `n` particles from `x` on an empty aggregate, paused on leaving
/// `B_x(pause_radius)` when a radius is given.
pub fn idla(
    env: &Environment,
    x: Site,
    n: usize,
    pause_radius: Option<f64>,
    streams: &mut ReplicaStreams,
) -> Result<(Aggregate, PausedLedger)> {
    let region = match pause_radius {
        Some(r) => PauseRegion::ball(env, x, r),
        None => PauseRegion::Everywhere,
    };
    let mut aggregate = Aggregate::new(env, x);
    let batch = release(streams, n).into_iter().map(|p| (x, p)).collect();
    let ledger = add_batch(env, &mut aggregate, batch, &region, DEFAULT_STEP_CAP)?;
    Ok((aggregate, ledger))
}

/// Restart every paused particle, in pause order, with a new pause region.
pub fn abelian_restart(
    env: &Environment,
    aggregate: &mut Aggregate,
    ledger: PausedLedger,
    region: &PauseRegion,
) -> Result<PausedLedger> {
    add_batch(env, aggregate, ledger.into_batch(), region, DEFAULT_STEP_CAP)
}

/// One pause stage of the staged construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub j: usize,
    /// Pause radius used for this stage.
    pub radius: f64,
    /// Particles left paused at the end of the stage.
    pub paused: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTrace {
    pub n: f64,
    pub dim: usize,
    pub particles: usize,
    /// Stages stop once at most `n^(1/(d+1))` particles are paused.
    pub threshold: f64,
    pub stages: Vec<Stage>,
    /// Index of the last paused stage; its particles are then run unpaused.
    pub terminal: usize,
    pub final_radius: f64,
}

impl StageTrace {
    /// Radius growth and termination rules hold exactly.
    pub fn arithmetic_holds(&self) -> bool {
        let d = self.dim as f64;
        let Some(first) = self.stages.first() else {
            return false;
        };
        if first.radius != self.n || self.terminal + 1 != self.stages.len() {
            return false;
        }
        for w in self.stages.windows(2) {
            let grown = w[0].radius + (w[0].paused as f64).powf(1.0 / d);
            if w[1].radius != grown || w[0].paused as f64 <= self.threshold {
                return false;
            }
        }
        let last = self.stages[self.terminal];
        last.paused as f64 <= self.threshold && last.radius == self.final_radius
    }

    /// Decay rate `delta` with `k_j <= (1 - delta) k_{j-1}` at every stage,
    /// i.e. one minus the worst observed ratio. `None` without a ratio.
    pub fn fitted_decay(&self) -> Option<f64> {
        let worst = self
            .stages
            .windows(2)
            .filter(|w| w[0].paused > 0)
            .map(|w| w[1].paused as f64 / w[0].paused as f64)
            .fold(None, |acc: Option<f64>, r| Some(acc.map_or(r, |a| a.max(r))))?;
        Some(1.0 - worst)
    }

    /// `n + k_0^(1/d) / (1 - (1 - delta)^(1/d))`.
    pub fn radius_bound(&self, delta: f64) -> f64 {
        let d = self.dim as f64;
        let k0 = self.stages.first().map_or(0, |s| s.paused) as f64;
        let denom = 1.0 - (1.0 - delta).max(0.0).powf(1.0 / d);
        if denom <= 0.0 {
            return f64::INFINITY;
        }
        self.n + k0.powf(1.0 / d) / denom
    }
}

/// Release `b_o(n)` particles from the origin paused at `B_o(n)`, then keep
/// restarting the paused ones with the radius grown by `k^(1/d)` while more
/// than `n^(1/(d+1))` remain; the final restart is unpaused.
pub fn staged_construction(
    env: &Environment,
    n: f64,
    streams: &mut ReplicaStreams,
) -> Result<(Aggregate, StageTrace)> {
    staged_construction_with_cap(env, n, streams, DEFAULT_STAGE_CAP)
}

pub fn staged_construction_with_cap(
    env: &Environment,
    n: f64,
    streams: &mut ReplicaStreams,
    stage_cap: usize,
) -> Result<(Aggregate, StageTrace)> {
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {n}")));
    }
    let o = env.origin();
    let d = env.dim() as f64;
    let particles = env.ball_count(o, n);
    let threshold = n.powf(1.0 / (d + 1.0));
    let (mut aggregate, mut ledger) = idla(env, o, particles, Some(n), streams)?;
    let mut stages = vec![Stage {
        j: 0,
        radius: n,
        paused: ledger.len(),
    }];
    loop {
        let last = *stages.last().expect("at least one stage");
        if last.paused as f64 <= threshold {
            ledger = abelian_restart(env, &mut aggregate, ledger, &PauseRegion::Everywhere)?;
            debug_assert!(ledger.is_empty());
            let trace = StageTrace {
                n,
                dim: env.dim(),
                particles,
                threshold,
                terminal: last.j,
                final_radius: last.radius,
                stages,
            };
            return Ok((aggregate, trace));
        }
        if stages.len() > stage_cap {
            return Err(Error::StageCapExceeded(stage_cap));
        }
        let radius = last.radius + (last.paused as f64).powf(1.0 / d);
        let region = PauseRegion::ball(env, o, radius);
        ledger = abelian_restart(env, &mut aggregate, ledger, &region)?;
        stages.push(Stage {
            j: last.j + 1,
            radius,
            paused: ledger.len(),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::generate;
    use crate::rng::RootSeed;

    #[test]
    fn first_particle_settles_at_start() {
        let env = generate(2, 5, 1.0, 0).unwrap();
        let mut s = RootSeed(1).replica(0);
        let (a, l) = idla(&env, env.origin(), 1, None, &mut s).unwrap();
        assert_eq!(a.history(), &[env.origin()]);
        assert!(l.is_empty());
    }

    #[test]
    fn unpaused_aggregate_has_n_sites() {
        let env = generate(2, 30, 0.7, 4).unwrap();
        for n in [0usize, 1, 2, 17, 300] {
            let mut s = RootSeed(n as u64).replica(0);
            let (a, l) = idla(&env, env.origin(), n, None, &mut s).unwrap();
            assert_eq!(a.len(), n);
            assert_eq!(a.particles_settled(), n);
            assert!(l.is_empty());
            assert!(a.history().iter().all(|&x| env.in_cluster(x)));
        }
    }

    #[test]
    fn empty_batch_is_identity() {
        let env = generate(2, 5, 1.0, 0).unwrap();
        let mut a = Aggregate::with_sites(&env, env.origin(), [env.origin()]);
        let l = add_batch(&env, &mut a, Vec::new(), &PauseRegion::Everywhere, 10).unwrap();
        assert!(l.is_empty());
        assert_eq!(a.len(), 1);
        assert_eq!(a.particles_settled(), 0);
    }

    #[test]
    fn restart_of_empty_ledger_is_identity() {
        let env = generate(2, 5, 1.0, 0).unwrap();
        let mut a = Aggregate::with_sites(&env, env.origin(), [env.origin()]);
        let l = abelian_restart(&env, &mut a, PausedLedger::default(), &PauseRegion::Everywhere)
            .unwrap();
        assert!(l.is_empty());
        assert_eq!(a.history(), &[env.origin()]);
    }

    #[test]
    fn paused_positions_lie_in_region_and_particles_are_conserved() {
        let env = generate(2, 20, 0.75, 9).unwrap();
        let mut s = RootSeed(5).replica(2);
        let (a, l) = idla(&env, env.origin(), 400, Some(6.0), &mut s).unwrap();
        assert_eq!(a.particles_settled() + l.len(), 400);
        assert!(a.history().iter().all(|&x| env.dist2(env.origin(), x) < 36));
        for p in l.positions() {
            assert!(env.dist2(env.origin(), p) < 36);
            assert!(a.contains(p));
        }
    }

    #[test]
    fn staged_trace_arithmetic() {
        let env = generate(2, 40, 1.0, 0).unwrap();
        let mut s = RootSeed(8).replica(0);
        let (a, t) = staged_construction(&env, 15.0, &mut s).unwrap();
        assert_eq!(a.len(), t.particles);
        assert_eq!(t.particles, env.ball_count(env.origin(), 15.0));
        assert!(t.arithmetic_holds());
        assert!(t.stages.len() >= 2, "{t:?}");
    }

    #[test]
    fn staged_terminates_immediately_when_few_pause() {
        // n = 1: one particle, nothing can pause.
        let env = generate(2, 5, 1.0, 0).unwrap();
        let mut s = RootSeed(8).replica(0);
        let (a, t) = staged_construction(&env, 1.0, &mut s).unwrap();
        assert_eq!(t.terminal, 0);
        assert_eq!(t.stages.len(), 1);
        assert_eq!(a.len(), 1);
        assert!(t.arithmetic_holds());
    }

    #[test]
    fn stage_cap_is_enforced() {
        let env = generate(2, 40, 1.0, 0).unwrap();
        let mut s = RootSeed(8).replica(0);
        let err = staged_construction_with_cap(&env, 15.0, &mut s, 0).unwrap_err();
        assert!(matches!(err, Error::StageCapExceeded(0)));
    }
}

//! Exact distributions over final aggregates for small instances.
//!
//! A law is a map from (occupied set, paused positions) to probability.
//! Particles are pushed through one at a time; each particle branches on the
//! exact law of its stopped walk from [`crate::exit::exact_walk_law`].

use std::collections::{BTreeMap, HashMap};

use crate::environment::{Environment, Site};
use crate::error::{Error, Result};
use crate::exit::{exact_resume_law, exact_walk_law, WalkLaw};
use crate::walk::{Occupancy, PauseRegion, SortedSites};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LawState {
    pub occupied: SortedSites,
    /// Paused (position, attempted step) pairs in pause order; left empty
    /// when not tracked.
    pub ledger: Vec<(Site, Site)>,
}

pub type Law = BTreeMap<LawState, f64>;

/// Law concentrated on `initial` with an empty ledger.
pub fn point_law(initial: &[Site]) -> Law {
    Law::from([(
        LawState {
            occupied: SortedSites::new(initial.to_vec()),
            ledger: Vec::new(),
        },
        1.0,
    )])
}

/// Caches walk laws for one pause region.
struct Stepper<'a> {
    env: &'a Environment,
    region: &'a PauseRegion,
    track_ledger: bool,
    cache: HashMap<(SortedSites, Site), WalkLaw>,
}

impl<'a> Stepper<'a> {
    fn new(env: &'a Environment, region: &'a PauseRegion, track_ledger: bool) -> Self {
        Self {
            env,
            region,
            track_ledger,
            cache: HashMap::new(),
        }
    }

    fn add(&mut self, out: &mut Law, state: LawState, p: f64) {
        *out.entry(state).or_insert(0.0) += p;
    }

    fn fresh_law(&mut self, occupied: &SortedSites, x: Site) -> Result<WalkLaw> {
        let key = (occupied.clone(), x);
        if let Some(law) = self.cache.get(&key) {
            return Ok(law.clone());
        }
        let law = exact_walk_law(self.env, x, occupied, self.region)?;
        self.cache.insert(key, law.clone());
        Ok(law)
    }

    /// Push one particle through every state of `law`: a fresh one from
    /// `x`, or a paused one resuming at `x` with its attempted step.
    fn step(&mut self, law: Law, x: Site, attempted: Option<Site>) -> Result<Law> {
        if !self.region.contains(x) {
            return Err(Error::StartOutsidePauseRegion(self.env.vertex(x)));
        }
        let mut out = Law::new();
        for (state, p) in law {
            if !state.occupied.is_occupied(x) {
                let next = LawState {
                    occupied: state.occupied.with(x),
                    ledger: state.ledger,
                };
                self.add(&mut out, next, p);
                continue;
            }
            let walk = match attempted {
                // Replaying a step into the occupied region is a fresh walk
                // from its destination.
                Some(a) if self.region.contains(a) && state.occupied.is_occupied(a) => {
                    self.fresh_law(&state.occupied, a)?
                }
                Some(a) => exact_resume_law(self.env, x, a, &state.occupied, self.region)?,
                None => self.fresh_law(&state.occupied, x)?,
            };
            let absorbed: Vec<(Site, f64)> = walk.absorbed.iter().map(|(&s, &q)| (s, q)).collect();
            let paused: Vec<((Site, Site), f64)> = walk.paused.iter().map(|(&s, &q)| (s, q)).collect();
            for (y, q) in absorbed {
                let next = LawState {
                    occupied: state.occupied.with(y),
                    ledger: state.ledger.clone(),
                };
                self.add(&mut out, next, p * q);
            }
            for (v, q) in paused {
                let mut ledger = state.ledger.clone();
                if self.track_ledger {
                    ledger.push(v);
                }
                let next = LawState {
                    occupied: state.occupied.clone(),
                    ledger,
                };
                self.add(&mut out, next, p * q);
            }
        }
        Ok(out)
    }
}

/// Release particles from `starts`, in order, into every state of `law`.
pub fn release_law(
    env: &Environment,
    law: Law,
    starts: &[Site],
    region: &PauseRegion,
    track_ledger: bool,
) -> Result<Law> {
    let mut stepper = Stepper::new(env, region, track_ledger);
    starts.iter().try_fold(law, |acc, &x| stepper.step(acc, x, None))
}

/// Restart each state's ledger, in order, with a new pause region.
pub fn restart_law(env: &Environment, law: Law, region: &PauseRegion) -> Result<Law> {
    let mut stepper = Stepper::new(env, region, true);
    let mut out = Law::new();
    for (state, p) in law {
        let starts = state.ledger;
        let sub = point_law(&state.occupied.0);
        let sub = starts
            .iter()
            .try_fold(sub, |acc, &(x, a)| stepper.step(acc, x, Some(a)))?;
        for (s, q) in sub {
            *out.entry(s).or_insert(0.0) += p * q;
        }
    }
    Ok(out)
}

/// Law of the final occupied set when no particle is ever paused.
pub fn direct_law(env: &Environment, initial: &[Site], starts: &[Site]) -> Result<BTreeMap<SortedSites, f64>> {
    let law = release_law(env, point_law(initial), starts, &PauseRegion::Everywhere, false)?;
    Ok(marginal(law))
}

/// Law of pausing at `first`, then restarting the ledger with `then`.
pub fn pause_restart_law(
    env: &Environment,
    initial: &[Site],
    starts: &[Site],
    first: &PauseRegion,
    then: &PauseRegion,
) -> Result<Law> {
    let staged = release_law(env, point_law(initial), starts, first, true)?;
    restart_law(env, staged, then)
}

/// Forget the ledger.
pub fn marginal(law: Law) -> BTreeMap<SortedSites, f64> {
    let mut out = BTreeMap::new();
    for (s, p) in law {
        *out.entry(s.occupied).or_insert(0.0) += p;
    }
    out
}

/// Largest entrywise difference between two laws over occupied sets.
pub fn max_abs_difference(a: &BTreeMap<SortedSites, f64>, b: &BTreeMap<SortedSites, f64>) -> f64 {
    a.keys()
        .chain(b.keys())
        .map(|k| (a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0)).abs())
        .fold(0.0, f64::max)
}

/// Exact probability that `t` particles from `x`, paused on leaving
/// `region`, occupy every site of `target`.
pub fn fill_probability(
    env: &Environment,
    x: Site,
    t: usize,
    region: &PauseRegion,
    target: &[Site],
) -> Result<f64> {
    let starts = vec![x; t];
    let law = release_law(env, point_law(&[]), &starts, region, false)?;
    Ok(law
        .iter()
        .filter(|(s, _)| target.iter().all(|&y| s.occupied.is_occupied(y)))
        .map(|(_, p)| p)
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::{generate, Vertex};

    fn set(env: &Environment, xs: &[i32]) -> SortedSites {
        SortedSites::new(xs.iter().map(|&x| env.site(&Vertex(vec![x])).unwrap()).collect())
    }

    #[test]
    fn three_particles_on_the_line() {
        let env = generate(1, 6, 1.0, 0).unwrap();
        let o = env.origin();
        let law = direct_law(&env, &[], &[o, o, o]).unwrap();
        assert_eq!(law.len(), 3);
        assert!((law[&set(&env, &[-2, -1, 0])] - 1.0 / 6.0).abs() < 1e-14);
        assert!((law[&set(&env, &[-1, 0, 1])] - 2.0 / 3.0).abs() < 1e-14);
        assert!((law[&set(&env, &[0, 1, 2])] - 1.0 / 6.0).abs() < 1e-14);
    }

    #[test]
    fn laws_sum_to_one() {
        let env = generate(2, 3, 1.0, 0).unwrap();
        let o = env.origin();
        let t = PauseRegion::ball(&env, o, 1.5);
        let law = pause_restart_law(&env, &[], &[o; 4], &t, &PauseRegion::Everywhere).unwrap();
        let total: f64 = law.values().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(law.keys().all(|s| s.ledger.is_empty()));
    }

    #[test]
    fn untracked_ledger_merges_states() {
        let env = generate(1, 6, 1.0, 0).unwrap();
        let o = env.origin();
        let t = PauseRegion::ball(&env, o, 1.5);
        let tracked = release_law(&env, point_law(&[]), &[o; 4], &t, true).unwrap();
        let plain = release_law(&env, point_law(&[]), &[o; 4], &t, false).unwrap();
        assert!(plain.len() <= tracked.len());
        assert!(max_abs_difference(&marginal(tracked), &marginal(plain)) < 1e-15);
    }
}

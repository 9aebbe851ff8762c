//! Monte Carlo estimators for the shape statistics, the hitting and
//! absorption lemmas, and the lower-bound conditions.
//!
//! Constants in the underlying statements are existential, so every checker
//! fits or reports constants and tests the direction of an inequality.
//! Proportions get Wilson intervals; medians get basic bootstrap intervals.

use std::collections::BTreeMap;

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::environment::{Environment, Site};
use crate::error::{Error, Result};
use crate::exit::exact_walk_law;
use crate::idla::{
    abelian_restart, add_batch, idla, release, staged_construction, Aggregate, StageTrace,
};
use crate::law::{direct_law, marginal, max_abs_difference, pause_restart_law};
use crate::metric::{bfs_distances, volume_growth_range};
use crate::rng::RootSeed;
use crate::stats::{
    bootstrap_interval, median, quantile, wilson, BOOTSTRAP_RESAMPLES, Z95,
};
use crate::walk::{
    hits_before_exit, walk_until, PauseRegion, SiteSet, SortedSites, WalkStatus, DEFAULT_STEP_CAP,
};

/// Run `f` for replicas `0..count`, in parallel when enabled. Results keep
/// replica order.
pub fn map_replicas<T, F>(count: u64, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..count).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..count).map(f).collect()
    }
}

/// Replica-level tally of `settled + paused = released`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conservation {
    pub replicas: u64,
    pub violations: u64,
}

impl Conservation {
    pub fn record(&mut self, settled: usize, paused: usize, released: usize) {
        self.replicas += 1;
        if settled + paused != released {
            self.violations += 1;
        }
    }

    pub fn merge(&mut self, other: Conservation) {
        self.replicas += other.replicas;
        self.violations += other.violations;
    }

    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Claim {
    AtLeast,
    AtMost,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    /// The intervals separate in the claimed direction.
    Supported,
    /// The intervals overlap.
    Inconclusive,
    /// The intervals separate against the claim.
    Violated,
}

impl Verdict {
    pub fn derive(claim: Claim, estimate: (f64, f64), bound: (f64, f64)) -> Self {
        let ((lo, hi), (blo, bhi)) = (estimate, bound);
        match claim {
            Claim::AtLeast if lo >= bhi => Verdict::Supported,
            Claim::AtLeast if hi < blo => Verdict::Violated,
            Claim::AtMost if hi <= blo => Verdict::Supported,
            Claim::AtMost if lo > bhi => Verdict::Violated,
            _ => Verdict::Inconclusive,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaEstimate {
    pub lemma: String,
    pub parameters: BTreeMap<String, Value>,
    pub estimate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub half_width: f64,
    pub claim: Claim,
    pub bound: f64,
    pub bound_low: f64,
    pub bound_high: f64,
    pub samples: u64,
    pub verdict: Verdict,
    pub details: BTreeMap<String, Value>,
    pub conservation: Conservation,
}

impl LemmaEstimate {
    #[allow(clippy::too_many_arguments)]
    fn new(
        lemma: &str,
        parameters: BTreeMap<String, Value>,
        estimate: f64,
        ci: (f64, f64),
        claim: Claim,
        bound: f64,
        bound_ci: (f64, f64),
        samples: u64,
    ) -> Self {
        Self {
            lemma: lemma.to_string(),
            parameters,
            estimate,
            ci_low: ci.0,
            ci_high: ci.1,
            half_width: (ci.1 - ci.0) / 2.0,
            claim,
            bound,
            bound_low: bound_ci.0,
            bound_high: bound_ci.1,
            samples,
            verdict: Verdict::derive(claim, ci, bound_ci),
            details: BTreeMap::new(),
            conservation: Conservation::default(),
        }
    }

    /// Recompute the verdict from the stored numbers.
    pub fn rederive_verdict(&self) -> Verdict {
        Verdict::derive(
            self.claim,
            (self.ci_low, self.ci_high),
            (self.bound_low, self.bound_high),
        )
    }
}

fn params(pairs: &[(&str, Value)]) -> BTreeMap<String, Value> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.clone())).collect()
}

/// Cluster sites ordered by distance from the origin, grouped in shells.
#[derive(Debug, Clone)]
pub struct Shells {
    shells: Vec<(i64, Vec<Site>)>,
}

impl Shells {
    pub fn new(env: &Environment) -> Self {
        let mut sites: Vec<(i64, Site)> = env.cluster_sites().map(|s| (env.norm2(s), s)).collect();
        sites.sort_unstable();
        let mut shells: Vec<(i64, Vec<Site>)> = Vec::new();
        for (d2, s) in sites {
            match shells.last_mut() {
                Some((k, v)) if *k == d2 => v.push(s),
                _ => shells.push((d2, vec![s])),
            }
        }
        Self { shells }
    }

    /// Radius of the largest closed cluster ball around the origin made
    /// entirely of aggregate sites (0 when the origin is unoccupied).
    pub fn inradius(&self, aggregate: &Aggregate) -> f64 {
        let mut best = 0.0;
        for (d2, sites) in &self.shells {
            if sites.iter().all(|&s| aggregate.contains(s)) {
                best = (*d2 as f64).sqrt();
            } else {
                break;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub q05: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q95: f64,
}

impl Quantiles {
    pub fn of(values: &[f64]) -> Self {
        Self {
            q05: quantile(values, 0.05),
            q25: quantile(values, 0.25),
            q50: quantile(values, 0.5),
            q75: quantile(values, 0.75),
            q95: quantile(values, 0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapeStats {
    pub n: f64,
    pub replicas: u64,
    pub particles: usize,
    pub seed: u64,
    pub inradius: Vec<f64>,
    pub outradius: Vec<f64>,
    /// Quantiles of `inradius / n`.
    pub inner: Quantiles,
    /// Quantiles of `outradius / n`.
    pub outer: Quantiles,
    pub conservation: Conservation,
}

impl ShapeStats {
    pub fn median_inner(&self) -> f64 {
        self.inner.q50
    }

    pub fn median_outer(&self) -> f64 {
        self.outer.q50
    }
}

/// `A_{b_o(n)}(o)` per replica with its inradius and outradius.
pub fn shape_experiment(env: &Environment, n: f64, replicas: u64, seed: u64) -> Result<ShapeStats> {
    let o = env.origin();
    let particles = env.ball_count(o, n);
    let shells = Shells::new(env);
    let root = RootSeed(seed);
    let runs = map_replicas(replicas, |r| -> Result<(f64, f64, usize, usize)> {
        let mut streams = root.replica(r);
        let (agg, ledger) = idla(env, o, particles, None, &mut streams)?;
        Ok((shells.inradius(&agg), agg.outradius(env), agg.particles_settled(), ledger.len()))
    });
    let mut inradius = Vec::with_capacity(replicas as usize);
    let mut outradius = Vec::with_capacity(replicas as usize);
    let mut conservation = Conservation::default();
    for run in runs {
        let (i, o, settled, paused) = run?;
        inradius.push(i);
        outradius.push(o);
        conservation.record(settled, paused, particles);
    }
    let inner: Vec<f64> = inradius.iter().map(|r| r / n).collect();
    let outer: Vec<f64> = outradius.iter().map(|r| r / n).collect();
    Ok(ShapeStats {
        n,
        replicas,
        particles,
        seed,
        inner: Quantiles::of(&inner),
        outer: Quantiles::of(&outer),
        inradius,
        outradius,
        conservation,
    })
}

/// Medians of `inradius/n` and `outradius/n` both move strictly toward 1
/// along the schedule.
pub fn shape_trend_holds(stats: &[ShapeStats]) -> bool {
    stats.windows(2).all(|w| {
        (1.0 - w[1].median_inner()).abs() < (1.0 - w[0].median_inner()).abs()
            && (w[1].median_outer() - 1.0).abs() < (w[0].median_outer() - 1.0).abs()
    })
}

/// Compare the chance that a walk from `x`, stopped on leaving `ball`,
/// visits `target` against `P[ball ⊆ A_t(x ↦ ball)] |target| / t`.
pub fn hit_probability_check(
    env: &Environment,
    ball: &SiteSet,
    target: &SiteSet,
    x: Site,
    t: usize,
    samples: u64,
    seed: u64,
) -> Result<LemmaEstimate> {
    if !ball.contains(x) {
        return Err(Error::InvalidParameter("start must lie in the ball".into()));
    }
    if target.iter().any(|q| !ball.contains(q)) {
        return Err(Error::InvalidParameter("target must be a subset of the ball".into()));
    }
    if t == 0 {
        return Err(Error::InvalidParameter("t must be positive".into()));
    }
    let root = RootSeed(seed);
    let walks = root.derive(1);
    let hits = map_replicas(samples, |i| {
        let mut rng = walks.particle(i, 0);
        hits_before_exit(env, x, ball, target, &mut rng, DEFAULT_STEP_CAP)
    });
    let mut hit_count = 0u64;
    for h in hits {
        hit_count += u64::from(h?);
    }

    let fills = root.derive(2);
    let region = PauseRegion::Within(ball.clone());
    let runs = map_replicas(samples, |i| -> Result<(bool, usize, usize)> {
        let mut streams = fills.replica(i);
        let mut agg = Aggregate::new(env, x);
        let batch = release(&mut streams, t).into_iter().map(|p| (x, p)).collect();
        let ledger = add_batch(env, &mut agg, batch, &region, DEFAULT_STEP_CAP)?;
        let filled = ball.iter().all(|s| agg.contains(s));
        Ok((filled, agg.particles_settled(), ledger.len()))
    });
    let mut fill_count = 0u64;
    let mut conservation = Conservation::default();
    for run in runs {
        let (filled, settled, paused) = run?;
        fill_count += u64::from(filled);
        conservation.record(settled, paused, t);
    }

    let scale = target.len() as f64 / t as f64;
    let (lo, hi) = wilson(hit_count, samples, Z95);
    let (flo, fhi) = wilson(fill_count, samples, Z95);
    let fill = fill_count as f64 / samples as f64;
    let mut est = LemmaEstimate::new(
        "hit_probability",
        params(&[
            ("x", json!(env.vertex(x).0)),
            ("ball_size", json!(ball.len())),
            ("target_size", json!(target.len())),
            ("t", json!(t)),
            ("seed", json!(seed)),
        ]),
        hit_count as f64 / samples as f64,
        (lo, hi),
        Claim::AtLeast,
        fill * scale,
        (flo * scale, fhi * scale),
        samples,
    );
    est.details.insert("fill_probability".into(), json!(fill));
    est.conservation = conservation;
    Ok(est)
}

/// A randomized configuration for [`hit_probability_check`].
#[derive(Debug, Clone)]
pub struct HitConfig {
    pub center: Site,
    pub radius: f64,
    pub ball: SiteSet,
    pub target: SiteSet,
    pub x: Site,
    pub t: usize,
}

/// Ball `B_c(r)` with `c` near the origin and `r` in `[1.5, max_radius]`,
/// a start and a target drawn from the ball, and `t` between `|B|` and
/// `3|B|`.
pub fn random_hit_config<R: rand::Rng>(env: &Environment, max_radius: f64, rng: &mut R) -> HitConfig {
    let pool = env.ball_sites(env.origin(), (max_radius / 2.0).max(1.0));
    let center = *pool.choose(rng).expect("origin is in the cluster");
    let radius = rng.random_range(1.5..=max_radius.max(1.5));
    let members = env.ball_sites(center, radius);
    let x = *members.choose(rng).expect("centre is in its ball");
    let size = rng.random_range(1..=members.len());
    let target = SiteSet::from_sites(env, members.choose_multiple(rng, size).copied());
    let t = rng.random_range(members.len()..=3 * members.len());
    HitConfig {
        center,
        radius,
        ball: SiteSet::from_sites(env, members),
        target,
        x,
        t,
    }
}

/// Candidate `delta` values for the absorbed-fraction tail.
pub const ANNULUS_DELTAS: [f64; 5] = [0.01, 0.02, 0.05, 0.1, 0.2];

/// Release `k` particles from `starts` onto `initial`, paused on leaving
/// `B_o(n + k^(1/d))`, and study how many are absorbed.
///
/// The estimate is `P[absorbed <= delta k]`, claimed to stay below
/// `max_tail`.
#[allow(clippy::too_many_arguments)]
pub fn annulus_absorption_check(
    env: &Environment,
    n: f64,
    starts: &[Site],
    initial: &[Site],
    samples: u64,
    seed: u64,
    delta: f64,
    max_tail: f64,
) -> Result<LemmaEstimate> {
    let k = starts.len();
    if k == 0 {
        return Err(Error::InvalidParameter("at least one start is required".into()));
    }
    let o = env.origin();
    let d = env.dim() as f64;
    let n2 = n * n;
    if starts.iter().chain(initial).any(|&s| env.norm2(s) as f64 >= n2) {
        return Err(Error::InvalidParameter("starts and initial set must lie in B_o(n)".into()));
    }
    let radius = n + (k as f64).powf(1.0 / d);
    let region = PauseRegion::ball(env, o, radius);
    let root = RootSeed(seed);
    let runs = map_replicas(samples, |i| -> Result<(usize, usize)> {
        let mut streams = root.replica(i);
        let mut agg = Aggregate::with_sites(env, o, initial.iter().copied());
        let batch = starts
            .iter()
            .copied()
            .zip(release(&mut streams, k))
            .collect();
        let ledger = add_batch(env, &mut agg, batch, &region, DEFAULT_STEP_CAP)?;
        Ok((agg.particles_settled(), ledger.len()))
    });
    let mut absorbed = Vec::with_capacity(samples as usize);
    let mut conservation = Conservation::default();
    for run in runs {
        let (a, p) = run?;
        conservation.record(a, p, k);
        absorbed.push(a);
    }
    let fractions: Vec<f64> = absorbed.iter().map(|&a| a as f64 / k as f64).collect();
    let tail = |dl: f64| absorbed.iter().filter(|&&a| a as f64 <= dl * k as f64).count() as u64;
    let hits = tail(delta);
    let (lo, hi) = wilson(hits, samples, Z95);
    let lower_exp = 1.0 / (d + 1.0);
    let mut est = LemmaEstimate::new(
        "annulus_absorption",
        params(&[
            ("n", json!(n)),
            ("k", json!(k)),
            ("delta", json!(delta)),
            ("pause_radius", json!(radius)),
            ("initial_size", json!(initial.len())),
            ("seed", json!(seed)),
        ]),
        hits as f64 / samples as f64,
        (lo, hi),
        Claim::AtMost,
        max_tail,
        (max_tail, max_tail),
        samples,
    );
    est.details.insert("delta_hat".into(), json!(quantile(&fractions, 0.05)));
    est.details.insert("mean_absorbed".into(), json!(crate::stats::mean(&fractions) * k as f64));
    est.details.insert(
        "in_lemma_range".into(),
        json!((k as f64) > n.powf(lower_exp) && (k as f64) < n),
    );
    let tails: Vec<Value> = ANNULUS_DELTAS
        .iter()
        .map(|&dl| json!({"delta": dl, "frequency": tail(dl) as f64 / samples as f64}))
        .collect();
    est.details.insert("tails".into(), Value::Array(tails));
    est.conservation = conservation;
    Ok(est)
}

/// Exact probability that a single particle from `start` onto `initial`
/// is absorbed before pausing at `B_o(n + 1)`.
pub fn exact_single_absorption(env: &Environment, n: f64, start: Site, initial: &[Site]) -> Result<f64> {
    let occupied = SortedSites::new(initial.to_vec());
    if !occupied.0.contains(&start) {
        return Ok(1.0);
    }
    let region = PauseRegion::ball(env, env.origin(), n + 1.0);
    let law = exact_walk_law(env, start, &occupied, &region)?;
    Ok(law.absorbed.values().sum())
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlbSpec {
    pub alphas: Vec<f64>,
    pub radii: Vec<f64>,
    pub centers: usize,
    pub samples: u64,
    /// Admissible radius range; defaults to `[n^(1/d^3), n]`.
    pub range: Option<(f64, f64)>,
    pub seed: u64,
}

/// For each candidate `alpha`, estimate `P[B_x(r) ⊆ A_{b_x(r/alpha)}(x ↦ r)]`
/// over sampled centres `x ∈ B_o(n + r)` and report the largest `alpha`
/// whose every Wilson lower bound clears `alpha`.
pub fn wlb_check(env: &Environment, n: f64, spec: &WlbSpec) -> Result<LemmaEstimate> {
    let (lo_r, hi_r) = spec.range.unwrap_or_else(|| volume_growth_range(n, env.dim()));
    if let Some(r) = spec.radii.iter().find(|&&r| r < lo_r || r > hi_r) {
        return Err(Error::InvalidParameter(format!(
            "radius {r} outside the admissible range [{lo_r}, {hi_r}]"
        )));
    }
    if spec.alphas.iter().any(|&a| !(a > 0.0 && a <= 1.0)) {
        return Err(Error::InvalidParameter("alpha must lie in (0, 1]".into()));
    }
    let o = env.origin();
    let root = RootSeed(spec.seed);
    let mut pick = root.auxiliary(0x71B);
    let mut configs = Vec::new();
    for &r in &spec.radii {
        let pool = env.ball_sites(o, n + r);
        for c in 0..spec.centers {
            let x = if c == 0 { o } else { *pool.choose(&mut pick).expect("origin in pool") };
            configs.push((x, r));
        }
    }
    let mut alphas = spec.alphas.clone();
    alphas.sort_by(|a, b| b.total_cmp(a));
    let mut table = Vec::new();
    let mut best: Option<(f64, f64, (f64, f64))> = None;
    let mut weakest_any: Option<(f64, f64, (f64, f64))> = None;
    let mut conservation = Conservation::default();
    for (ai, &alpha) in alphas.iter().enumerate() {
        let mut all_pass = true;
        let mut worst: Option<(f64, (f64, f64))> = None;
        for (ci, &(x, r)) in configs.iter().enumerate() {
            let t = env.ball_count(x, r / alpha);
            let ball = SiteSet::ball(env, x, r);
            let region = PauseRegion::Within(ball.clone());
            let base = root.derive(((ai as u64) << 32) | ci as u64);
            let runs = map_replicas(spec.samples, |i| -> Result<(bool, usize, usize)> {
                let mut streams = base.replica(i);
                let mut agg = Aggregate::new(env, x);
                let batch = release(&mut streams, t).into_iter().map(|p| (x, p)).collect();
                let ledger = add_batch(env, &mut agg, batch, &region, DEFAULT_STEP_CAP)?;
                Ok((ball.iter().all(|s| agg.contains(s)), agg.particles_settled(), ledger.len()))
            });
            let mut fills = 0u64;
            for run in runs {
                let (f, s, p) = run?;
                fills += u64::from(f);
                conservation.record(s, p, t);
            }
            let freq = fills as f64 / spec.samples as f64;
            let ci = wilson(fills, spec.samples, Z95);
            if ci.0 < alpha {
                all_pass = false;
            }
            if worst.is_none_or(|(w, _)| freq < w) {
                worst = Some((freq, ci));
            }
            table.push(json!({
                "alpha": alpha, "x": env.vertex(x).0, "r": r, "particles": t,
                "fill": freq, "ci_low": ci.0, "ci_high": ci.1,
            }));
        }
        let (wf, wci) = worst.expect("at least one configuration");
        weakest_any = Some((alpha, wf, wci));
        if all_pass && best.is_none() {
            best = Some((alpha, wf, wci));
        }
    }
    let (alpha, freq, ci) = best.or(weakest_any).ok_or_else(|| {
        Error::InvalidParameter("at least one alpha and one radius are required".into())
    })?;
    let mut est = LemmaEstimate::new(
        "weak_lower_bound",
        params(&[
            ("n", json!(n)),
            ("radii", json!(spec.radii)),
            ("alphas", json!(spec.alphas)),
            ("centers", json!(spec.centers)),
            ("seed", json!(spec.seed)),
        ]),
        freq,
        ci,
        Claim::AtLeast,
        alpha,
        (alpha, alpha),
        spec.samples,
    );
    est.details.insert("best_alpha".into(), json!(best.map(|b| b.0)));
    est.details.insert("table".into(), Value::Array(table));
    est.conservation = conservation;
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LbReport {
    pub rows: Vec<LemmaEstimate>,
    pub medians: Vec<f64>,
    /// Medians are nondecreasing along the schedule.
    pub monotone: bool,
}

/// `|A_{b_o(n)}(o ↦ n)| / b_o(n)` per replica for each `n` in the schedule.
pub fn lb_check(env: &Environment, schedule: &[f64], replicas: u64, seed: u64) -> Result<LbReport> {
    if schedule.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidParameter("schedule must be increasing".into()));
    }
    let o = env.origin();
    let mut rows = Vec::new();
    let mut medians = Vec::new();
    let mut previous = 0.0;
    for (idx, &n) in schedule.iter().enumerate() {
        let b = env.ball_count(o, n);
        let root = RootSeed(seed).derive(idx as u64);
        let runs = map_replicas(replicas, |r| -> Result<(usize, usize)> {
            let mut streams = root.replica(r);
            let (agg, ledger) = idla(env, o, b, Some(n), &mut streams)?;
            Ok((agg.len(), ledger.len()))
        });
        let mut ratios = Vec::with_capacity(replicas as usize);
        let mut conservation = Conservation::default();
        for run in runs {
            let (a, p) = run?;
            conservation.record(a, p, b);
            ratios.push(a as f64 / b as f64);
        }
        let m = median(&ratios);
        let mut rng = RootSeed(seed).auxiliary(idx as u64);
        let ci = bootstrap_interval(&ratios, median, BOOTSTRAP_RESAMPLES, 0.95, &mut rng);
        let mut est = LemmaEstimate::new(
            "lower_bound",
            params(&[("n", json!(n)), ("particles", json!(b)), ("seed", json!(seed))]),
            m,
            ci,
            Claim::AtLeast,
            previous,
            (previous, previous),
            replicas,
        );
        est.details.insert("quantiles".into(), json!(Quantiles::of(&ratios)));
        est.conservation = conservation;
        rows.push(est);
        medians.push(m);
        previous = m;
    }
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    Ok(LbReport {
        rows,
        medians,
        monotone,
    })
}

/// Sample pairs in `B_o(n)` with `min_rho <= rho <= n`; verify
/// `rho <= d_G` and fit the smallest `c1` with `d_G <= c1 rho`.
///
/// `min_rho` defaults to `ln n`.
pub fn distance_comparison_check(
    env: &Environment,
    n: f64,
    pairs: usize,
    min_rho: Option<f64>,
    seed: u64,
) -> Result<LemmaEstimate> {
    let pool = env.ball_sites(env.origin(), n);
    if pool.len() < 2 {
        return Err(Error::InvalidParameter("ball holds fewer than two cluster vertices".into()));
    }
    let floor = min_rho.unwrap_or_else(|| n.ln().max(0.0));
    let (lo2, hi2) = (floor * floor, n * n);
    let mut rng = RootSeed(seed).auxiliary(0xD15);
    let per_center = 10usize;
    let mut ratios = Vec::with_capacity(pairs);
    let mut left_violations = 0u64;
    let mut unreachable = 0u64;
    let mut attempts = 0usize;
    while ratios.len() < pairs && attempts < pairs * 100 {
        let x = *pool.choose(&mut rng).expect("nonempty");
        let dist = bfs_distances(env, x, None);
        for _ in 0..per_center {
            attempts += 1;
            let y = *pool.choose(&mut rng).expect("nonempty");
            let d2 = env.dist2(x, y) as f64;
            if d2 < lo2 || d2 > hi2 || d2 == 0.0 {
                continue;
            }
            let dg = dist[y.index()];
            if dg == u32::MAX {
                unreachable += 1;
                continue;
            }
            let dg = f64::from(dg);
            if dg * dg < d2 {
                left_violations += 1;
            }
            ratios.push(dg / d2.sqrt());
            if ratios.len() == pairs {
                break;
            }
        }
    }
    if ratios.is_empty() {
        return Err(Error::InvalidParameter("no pair satisfies the distance window".into()));
    }
    let min_ratio = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let c1 = ratios.iter().copied().fold(0.0, f64::max);
    let mut est = LemmaEstimate::new(
        "distance_comparison",
        params(&[
            ("n", json!(n)),
            ("pairs", json!(pairs)),
            ("min_rho", json!(floor)),
            ("seed", json!(seed)),
        ]),
        min_ratio,
        (min_ratio, min_ratio),
        Claim::AtLeast,
        1.0,
        (1.0, 1.0),
        ratios.len() as u64,
    );
    est.details.insert("fitted_c1".into(), json!(c1));
    est.details.insert("median_ratio".into(), json!(median(&ratios)));
    est.details.insert("left_violations".into(), json!(left_violations));
    est.details.insert("unreachable".into(), json!(unreachable));
    Ok(est)
}

/// Monte Carlo exit law of `set` from `start` against the exact solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExitLawComparison {
    pub samples: u64,
    pub support: usize,
    pub total_variation: f64,
    /// Largest `|count - N p| / sqrt(N p (1 - p))` over exit sites.
    pub max_sigma: f64,
    pub exact_total: f64,
    pub seed: u64,
    pub conservation: Conservation,
}

pub fn exit_law_check(
    env: &Environment,
    start: Site,
    set: &[Site],
    samples: u64,
    seed: u64,
) -> Result<ExitLawComparison> {
    let occupied = SortedSites::new(set.to_vec());
    let exact = exact_walk_law(env, start, &occupied, &PauseRegion::Everywhere)?;
    let sites: Vec<Site> = exact.absorbed.keys().copied().collect();
    let root = RootSeed(seed);
    let chunk = 10_000u64;
    let chunks = samples.div_ceil(chunk);
    let partial = map_replicas(chunks, |c| -> Result<(BTreeMap<Site, u64>, Conservation)> {
        let mut counts = BTreeMap::new();
        let mut cons = Conservation::default();
        let lo = c * chunk;
        let hi = (lo + chunk).min(samples);
        for i in lo..hi {
            let mut rng = root.particle(i, 0);
            let out = walk_until(env, start, &occupied, &PauseRegion::Everywhere, &mut rng, DEFAULT_STEP_CAP)?;
            let absorbed = usize::from(out.status == WalkStatus::Absorbed);
            cons.record(absorbed, 1 - absorbed, 1);
            *counts.entry(out.position).or_insert(0u64) += 1;
        }
        Ok((counts, cons))
    });
    let mut counts: BTreeMap<Site, u64> = BTreeMap::new();
    let mut conservation = Conservation::default();
    for p in partial {
        let (c, cons) = p?;
        conservation.merge(cons);
        for (k, v) in c {
            *counts.entry(k).or_insert(0) += v;
        }
    }
    let n = samples as f64;
    let mut tv = 0.0;
    let mut max_sigma: f64 = 0.0;
    for (s, &p) in &exact.absorbed {
        let c = counts.get(s).copied().unwrap_or(0) as f64;
        tv += (c / n - p).abs();
        let sd = (n * p * (1.0 - p)).sqrt();
        if sd > 0.0 {
            max_sigma = max_sigma.max((c - n * p).abs() / sd);
        }
    }
    // Mass the exact law says is impossible.
    for (s, &c) in &counts {
        if !exact.absorbed.contains_key(s) {
            tv += c as f64 / n;
            max_sigma = f64::MAX;
        }
    }
    Ok(ExitLawComparison {
        samples,
        support: sites.len(),
        total_variation: tv / 2.0,
        max_sigma,
        exact_total: exact.total(),
        seed,
        conservation,
    })
}

/// Exact comparison of direct release against pause-then-restart.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbelianComparison {
    pub particles: usize,
    pub direct_states: usize,
    pub restarted_states: usize,
    pub max_abs_difference: f64,
    pub direct_total: f64,
    pub restarted_total: f64,
}

pub fn abelian_exact_check(
    env: &Environment,
    starts: &[Site],
    first: &PauseRegion,
) -> Result<AbelianComparison> {
    let direct = direct_law(env, &[], starts)?;
    let restarted = marginal(pause_restart_law(env, &[], starts, first, &PauseRegion::Everywhere)?);
    Ok(AbelianComparison {
        particles: starts.len(),
        direct_states: direct.len(),
        restarted_states: restarted.len(),
        max_abs_difference: max_abs_difference(&direct, &restarted),
        direct_total: direct.values().sum(),
        restarted_total: restarted.values().sum(),
    })
}

/// How the two sides of a comparison draw their randomness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Unrelated streams for the two sides.
    Independent,
    /// Replica `r` of both sides uses the same particle streams. Each side
    /// keeps its own law; only the noise in the difference shrinks.
    CommonStreams,
}

/// Per-site occupation frequencies of staged construction against direct
/// release of the same number of particles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationComparison {
    pub n: f64,
    pub replicas: u64,
    pub coupling: Coupling,
    pub particles: usize,
    pub sites_compared: usize,
    pub max_abs_difference: f64,
    pub total_variation_per_site: f64,
    pub mean_stages: f64,
    /// Replicas whose two aggregates coincide.
    pub identical: u64,
    /// Largest per-site standard deviation the difference would have with
    /// independent sides, `sqrt(2 p (1 - p) / replicas)`.
    pub independent_sd: f64,
    pub conservation: Conservation,
}

pub fn staged_vs_direct(
    env: &Environment,
    n: f64,
    replicas: u64,
    seed: u64,
    coupling: Coupling,
) -> Result<OccupationComparison> {
    let o = env.origin();
    let particles = env.ball_count(o, n);
    let sites = env.site_count();
    let staged_root = RootSeed(seed).derive(1);
    let direct_root = match coupling {
        Coupling::Independent => RootSeed(seed).derive(2),
        Coupling::CommonStreams => staged_root,
    };
    let chunk = 50u64;
    let chunks = replicas.div_ceil(chunk);
    type Tally = (Vec<u32>, Vec<u32>, u64, u64, Conservation);
    let partial = map_replicas(chunks, |c| -> Result<Tally> {
        let mut staged = vec![0u32; sites];
        let mut direct = vec![0u32; sites];
        let mut stages = 0u64;
        let mut same = 0u64;
        let mut cons = Conservation::default();
        for r in c * chunk..((c + 1) * chunk).min(replicas) {
            let mut s = staged_root.replica(r);
            let (a, trace) = staged_construction(env, n, &mut s)?;
            cons.record(a.particles_settled(), 0, particles);
            stages += trace.stages.len() as u64;
            for &x in a.history() {
                staged[x.index()] += 1;
            }
            let mut s = direct_root.replica(r);
            let (b, ledger) = idla(env, o, particles, None, &mut s)?;
            cons.record(b.particles_settled(), ledger.len(), particles);
            for &x in b.history() {
                direct[x.index()] += 1;
            }
            same += u64::from(a.sorted_sites() == b.sorted_sites());
        }
        Ok((staged, direct, stages, same, cons))
    });
    let mut staged = vec![0u64; sites];
    let mut direct = vec![0u64; sites];
    let mut stages = 0u64;
    let mut identical = 0u64;
    let mut conservation = Conservation::default();
    for p in partial {
        let (s, d, st, same, cons) = p?;
        for i in 0..sites {
            staged[i] += u64::from(s[i]);
            direct[i] += u64::from(d[i]);
        }
        stages += st;
        identical += same;
        conservation.merge(cons);
    }
    let r = replicas as f64;
    let mut max_diff: f64 = 0.0;
    let mut max_var: f64 = 0.0;
    let mut tv = 0.0;
    let mut compared = 0usize;
    for i in 0..sites {
        if staged[i] == 0 && direct[i] == 0 {
            continue;
        }
        compared += 1;
        let diff = (staged[i] as f64 - direct[i] as f64).abs() / r;
        max_diff = max_diff.max(diff);
        tv += diff;
        let p = (staged[i] + direct[i]) as f64 / (2.0 * r);
        max_var = max_var.max(p * (1.0 - p));
    }
    Ok(OccupationComparison {
        n,
        replicas,
        coupling,
        particles,
        sites_compared: compared,
        max_abs_difference: max_diff,
        total_variation_per_site: tv / (2.0 * particles as f64),
        mean_stages: stages as f64 / r,
        identical,
        independent_sd: (2.0 * max_var / r).sqrt(),
        conservation,
    })
}

/// Staged construction replicas with their traces.
pub fn staged_traces(env: &Environment, n: f64, replicas: u64, seed: u64) -> Result<Vec<StageTrace>> {
    let root = RootSeed(seed);
    map_replicas(replicas, |r| {
        let mut s = root.replica(r);
        staged_construction(env, n, &mut s).map(|(_, t)| t)
    })
    .into_iter()
    .collect()
}

/// Pause at `first`, restart with `then`, and report the final aggregate.
pub fn pause_and_restart(
    env: &Environment,
    x: Site,
    particles: usize,
    first: f64,
    then: &PauseRegion,
    seed: u64,
    replica: u64,
) -> Result<(Aggregate, usize)> {
    let mut s = RootSeed(seed).replica(replica);
    let (mut agg, ledger) = idla(env, x, particles, Some(first), &mut s)?;
    let left = abelian_restart(env, &mut agg, ledger, then)?;
    Ok((agg, left.len()))
}

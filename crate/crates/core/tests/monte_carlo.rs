//! Sampled behaviour against exact laws.

use std::collections::BTreeMap;

use idla_core::experiments::{exit_law_check, map_replicas, pause_and_restart};
use idla_core::law::direct_law;
use idla_core::walk::resume_walk;
use idla_core::{
    generate, walk_until, PauseRegion, RootSeed, SiteSet, SortedSites, Vertex, WalkStatus,
};

#[test]
fn pause_then_resume_matches_the_unpaused_ruin_law() {
    // Occupied {0, 1, 2}, first confined to {0, 1}: from 0 the walk should
    // still leave on the left three times in four.
    let env = generate(1, 6, 1.0, 0).unwrap();
    let at = |x: i32| env.site(&Vertex(vec![x])).unwrap();
    let s = SortedSites::new(vec![at(0), at(1), at(2)]);
    let t = PauseRegion::Within(SiteSet::from_sites(&env, [at(0), at(1)]));
    let n = 200_000u64;
    let root = RootSeed(11);
    let left: u64 = map_replicas(n, |i| {
        let mut rng = root.particle(i, 0);
        let first = walk_until(&env, at(0), &s, &t, &mut rng, 1 << 30).unwrap();
        let out = match first.status {
            WalkStatus::Paused => resume_walk(
                &env,
                first.position,
                first.attempted.unwrap(),
                &s,
                &PauseRegion::Everywhere,
                &mut rng,
                1 << 30,
            )
            .unwrap(),
            WalkStatus::Absorbed => first,
        };
        u64::from(out.position == at(-1))
    })
    .into_iter()
    .sum();
    let p = left as f64 / n as f64;
    let sd = (0.75 * 0.25 / n as f64).sqrt();
    assert!((p - 0.75).abs() < 4.0 * sd, "p = {p}");
}

#[test]
fn three_by_three_block_exit_law() {
    let env = generate(2, 6, 1.0, 0).unwrap();
    let block: Vec<_> = (-1..=1)
        .flat_map(|x| (-1..=1).map(move |y| Vertex(vec![x, y])))
        .map(|v| env.site(&v).unwrap())
        .collect();
    let cmp = exit_law_check(&env, env.origin(), &block, 1_000_000, 3).unwrap();
    assert_eq!(cmp.support, 12);
    assert!(cmp.max_sigma < 4.0, "{cmp:?}");
    assert!(cmp.conservation.holds());
}

#[test]
fn restarted_aggregates_follow_the_direct_law() {
    let env = generate(2, 2, 1.0, 0).unwrap();
    let o = env.origin();
    let exact = direct_law(&env, &[], &[o; 4]).unwrap();
    let n = 1_000_000u64;
    let chunk = 50_000u64;
    let counts = map_replicas(n / chunk, |c| {
        let mut counts = BTreeMap::new();
        for r in c * chunk..(c + 1) * chunk {
            let (agg, left) = pause_and_restart(&env, o, 4, 1.5, &PauseRegion::Everywhere, 5, r).unwrap();
            assert_eq!(left, 0);
            *counts.entry(SortedSites::new(agg.sorted_sites())).or_insert(0u64) += 1;
        }
        counts
    });
    let mut total = BTreeMap::new();
    for c in counts {
        for (k, v) in c {
            *total.entry(k).or_insert(0u64) += v;
        }
    }
    assert!(total.keys().all(|k| exact.contains_key(k)));
    let tv: f64 = exact
        .iter()
        .map(|(k, &p)| (total.get(k).copied().unwrap_or(0) as f64 / n as f64 - p).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.01, "tv = {tv}");
}

use std::collections::VecDeque;

use proptest::prelude::*;

use idla_core::experiments::Shells;
use idla_core::records::{read_stats, Record, StageRow, StatsHeader, StatsWriter};
use idla_core::walk::resume_walk;
use idla_core::{
    abelian_restart, exact_walk_law, generate, idla, staged_construction, walk_until, Aggregate,
    Environment, PauseRegion, RootSeed, Site, SortedSites, StepRng, WalkStatus,
};

fn env_strategy() -> impl Strategy<Value = Environment> {
    (1usize..=3, 0.6f64..=1.0, any::<u64>()).prop_map(|(d, p, seed)| {
        let half = match d {
            1 => 12,
            2 => 8,
            _ => 4,
        };
        // The line only percolates when every edge is kept.
        let p = if d == 1 { 1.0 } else { p };
        generate(d, half, p, seed).expect("supercritical")
    })
}

fn open_connected(env: &Environment, agg: &Aggregate) -> bool {
    let o = agg.origin();
    let mut seen = vec![false; env.site_count()];
    let mut queue = VecDeque::from([o]);
    seen[o.index()] = true;
    let mut reached = 0;
    while let Some(s) = queue.pop_front() {
        reached += 1;
        for &t in env.neighbors(s) {
            let t = Site(t);
            if agg.contains(t) && !seen[t.index()] {
                seen[t.index()] = true;
                queue.push_back(t);
            }
        }
    }
    reached == agg.len()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn aggregates_are_connected_and_conserve_particles(
        env in env_strategy(),
        frac in 0.0f64..0.6,
        pause in prop::option::of(0.5f64..4.0),
        seed in any::<u64>(),
    ) {
        let o = env.origin();
        let k = 1 + (frac * env.cluster_size() as f64) as usize;
        let (agg, ledger) = idla(&env, o, k, pause, &mut RootSeed(seed).replica(0)).unwrap();
        prop_assert_eq!(agg.particles_settled() + ledger.len(), k);
        prop_assert_eq!(agg.len(), agg.particles_settled());
        prop_assert!(agg.contains(o));
        prop_assert!(agg.sorted_sites().iter().all(|&s| env.in_cluster(s)));
        prop_assert!(open_connected(&env, &agg));
        if let Some(r) = pause {
            let region = PauseRegion::ball(&env, o, r);
            prop_assert!(ledger.entries().iter().all(|e| region.contains(e.position)));
            prop_assert!(ledger.entries().iter().all(|e| !region.contains(e.attempted())));
        } else {
            prop_assert!(ledger.is_empty());
        }
    }

    #[test]
    fn restarting_settles_everyone(
        env in env_strategy(),
        frac in 0.0f64..0.4,
        pause in 0.5f64..3.0,
        seed in any::<u64>(),
    ) {
        let o = env.origin();
        let k = 1 + (frac * env.cluster_size() as f64) as usize;
        let (mut agg, ledger) = idla(&env, o, k, Some(pause), &mut RootSeed(seed).replica(0)).unwrap();
        let left = abelian_restart(&env, &mut agg, ledger, &PauseRegion::Everywhere).unwrap();
        prop_assert!(left.is_empty());
        prop_assert_eq!(agg.len(), k);
        prop_assert!(open_connected(&env, &agg));
    }

    #[test]
    fn same_seed_same_aggregate(env in env_strategy(), seed in any::<u64>(), replica in 0u64..100) {
        let o = env.origin();
        let k = env.cluster_size() / 3 + 1;
        let a = idla(&env, o, k, None, &mut RootSeed(seed).replica(replica)).unwrap().0;
        let b = idla(&env, o, k, None, &mut RootSeed(seed).replica(replica)).unwrap().0;
        prop_assert_eq!(a.history(), b.history());
    }

    #[test]
    fn walks_stop_where_they_should(
        env in env_strategy(),
        occupied_frac in 0.0f64..0.5,
        radius in 0.5f64..5.0,
        seed in any::<u64>(),
    ) {
        let o = env.origin();
        let k = 1 + (occupied_frac * env.cluster_size() as f64) as usize;
        let (agg, _) = idla(&env, o, k, None, &mut RootSeed(seed).replica(1)).unwrap();
        let region = PauseRegion::ball(&env, o, radius);
        let mut rng = StepRng::from_seed_u64(seed);
        let out = walk_until(&env, o, &agg, &region, &mut rng, 100_000_000).unwrap();
        match out.status {
            WalkStatus::Absorbed => {
                prop_assert!(!agg.contains(out.position));
                prop_assert!(region.contains(out.position));
                prop_assert!(out.attempted.is_none());
            }
            WalkStatus::Paused => {
                let next = out.attempted.unwrap();
                prop_assert!(agg.contains(out.position));
                prop_assert!(region.contains(out.position));
                prop_assert!(!region.contains(next));
                prop_assert!(env.neighbors(out.position).contains(&next.0));
                // With the region lifted the walk goes on from the replayed step.
                let again = resume_walk(&env, out.position, next, &agg, &PauseRegion::Everywhere, &mut rng, 100_000_000).unwrap();
                prop_assert_eq!(again.status, WalkStatus::Absorbed);
                prop_assert!(!agg.contains(again.position));
            }
        }
    }

    #[test]
    fn exact_laws_are_distributions(
        env in env_strategy(),
        size in 1usize..25,
        radius in prop::option::of(1.0f64..4.0),
    ) {
        let o = env.origin();
        let mut near = env.ball_sites(o, 6.0);
        near.sort_by_key(|&s| (env.norm2(s), s));
        let sites: Vec<Site> = near.into_iter().take(size).collect();
        let occupied = SortedSites::new(sites.clone());
        let region = match radius {
            Some(r) => PauseRegion::ball(&env, o, r),
            None => PauseRegion::Everywhere,
        };
        match exact_walk_law(&env, o, &occupied, &region) {
            Ok(law) => {
                prop_assert!((law.total() - 1.0).abs() < 1e-9);
                prop_assert!(law.absorbed.keys().all(|s| occupied.0.binary_search(s).is_err()));
                prop_assert!(law.absorbed.values().chain(law.paused.values()).all(|&p| p >= 0.0));
            }
            // Only possible when the set swallows the whole cluster.
            Err(_) => prop_assert_eq!(sites.len(), env.cluster_size()),
        }
    }

    #[test]
    fn inradius_at_most_outradius(env in env_strategy(), frac in 0.0f64..0.7, seed in any::<u64>()) {
        let o = env.origin();
        let k = 1 + (frac * env.cluster_size() as f64) as usize;
        let (agg, _) = idla(&env, o, k, None, &mut RootSeed(seed).replica(0)).unwrap();
        let inner = Shells::new(&env).inradius(&agg);
        prop_assert!(inner <= agg.outradius(&env));
    }

    #[test]
    fn radius_for_count_is_the_closed_ball_radius(env in env_strategy(), frac in 0.0f64..1.0) {
        let o = env.origin();
        let k = 1 + (frac * (env.cluster_size() - 1) as f64) as usize;
        let r = env.radius_for_count(k).unwrap();
        prop_assert!(env.ball_count(o, r) < k);
        prop_assert!(env.ball_count(o, r + 1e-6) >= k);
    }

    #[test]
    fn stats_rows_round_trip(rows in prop::collection::vec((0u64..10, 0usize..8, 0.0f64..500.0, 0usize..5000), 0..20), seed in any::<u64>()) {
        let header = StatsHeader::new(seed, "simulate");
        let mut w = StatsWriter::with_timestamp(Vec::new(), &header, 1).unwrap();
        let records: Vec<Record> = rows
            .iter()
            .map(|&(replica, j, radius, paused)| Record::Stage(StageRow { replica, j, radius, paused }))
            .collect();
        for r in &records {
            w.write(r).unwrap();
        }
        let bytes = w.finish().unwrap();
        let parsed = read_stats(bytes.as_slice()).unwrap();
        prop_assert_eq!(parsed.header, header);
        prop_assert_eq!(parsed.records, records);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn staged_construction_conserves_and_steps_correctly(seed in any::<u64>(), n in 3.0f64..14.0, p in 0.6f64..=1.0) {
        let env = generate(2, 30, p, seed).unwrap();
        let (agg, trace) = staged_construction(&env, n, &mut RootSeed(seed).replica(0)).unwrap();
        prop_assert_eq!(agg.len(), env.ball_count(env.origin(), n));
        prop_assert!(trace.arithmetic_holds());
        prop_assert!(open_connected(&env, &agg));
    }
}

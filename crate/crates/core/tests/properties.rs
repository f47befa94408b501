mod common;

use common::*;
use focusfuzz::analysis::{assign_distances, program_graph, Analysis};
use focusfuzz::campaign::{run_campaign, CampaignConfig};
use focusfuzz::exec::{execute, Executor};
use focusfuzz::ir::{parse_program, serialize_program};
use focusfuzz::program::{BlockIdx, Program, SiteIdx};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeSet;

fn input() -> impl Strategy<Value = Vec<u8>> {
    props::input()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn distances_match_floyd_warshall(seed in any::<u64>()) {
        let (n, edges, targets) = random_graph(&mut ChaCha8Rng::seed_from_u64(seed), 50);
        let g = to_graph(n, &edges);
        let t: Vec<BlockIdx> = targets.iter().map(|&t| BlockIdx(t as u32)).collect();
        let got = assign_distances(&g, &t);
        let want = oracle_distances(n, &edges, &targets);
        prop_assert_eq!(got.as_slice(), want.as_slice());
    }

    #[test]
    fn program_distances_step_down_by_one(seed in any::<u64>()) {
        let p = Program::parse(&random_program(seed)).unwrap();
        let a = Analysis::new(&p, CRASH_LOCATIONS[0]).unwrap();
        let g = program_graph(&p);
        for b in 0..p.block_count() {
            let b = BlockIdx(b as u32);
            match a.block_distance(b) {
                Some(0) => prop_assert!(a.targets().contains(&b)),
                Some(d) => prop_assert!(
                    g.successors(b).iter().any(|&s| a.block_distance(s) == Some(d - 1))
                ),
                None => prop_assert!(g.successors(b).iter().all(|&s| a.block_distance(s).is_none())),
            }
        }
    }

    #[test]
    fn text_round_trip(seed in any::<u64>()) {
        let ir = parse_program(&random_program(seed)).unwrap();
        let text = serialize_program(&ir).unwrap();
        prop_assert_eq!(parse_program(&text).unwrap(), ir);
    }

    #[test]
    fn execution_is_deterministic_and_focus_is_passive(seed in any::<u64>(), bytes in input()) {
        let p = Program::parse(&random_program(seed)).unwrap();
        let mut ex = Executor::new(&p).with_step_budget(5_000);
        let plain = ex.run(&bytes, None);
        prop_assert_eq!(&plain, &ex.run(&bytes, None));
        prop_assert!(plain.focused.is_empty());
        let hit: BTreeSet<SiteIdx> = plain.sites_hit.iter().map(|h| h.site).collect();
        for s in hit {
            let f = ex.run(&bytes, Some(s));
            prop_assert_eq!(&f.path, &plain.path);
            prop_assert_eq!(&f.sites_hit, &plain.sites_hit);
            prop_assert_eq!(&f.crash, &plain.crash);
            prop_assert!(f.focused.iter().all(|c| c.site == s));
            prop_assert_eq!(f.focused.len(), plain.sites_hit.iter().filter(|h| h.site == s).count());
        }
    }

    #[test]
    fn offer_accepts_only_strict_improvements(case in props::offer_case()) {
        props::check_offer(case)?;
    }

    #[test]
    fn filter_keeps_at_most_three_nearest(case in props::filter_case()) {
        props::check_filter(case)?;
    }

    #[test]
    fn solving_clears_the_constraint_queue(case in props::campaign_case()) {
        props::check_early_exit(case)?;
    }

    #[test]
    fn reported_crashes_replay(seed in any::<u64>(), bytes in input()) {
        let p = Program::parse(&random_program(seed)).unwrap();
        let mut cfg = CampaignConfig::new(CRASH_LOCATIONS[0]);
        cfg.max_execs = 1_500;
        cfg.step_budget = 5_000;
        cfg.stop_at_target = false;
        let r = run_campaign(&p, &[bytes], &cfg).unwrap();
        let mut keys = BTreeSet::new();
        for c in &r.crashes {
            let t = execute(&p, &c.input, None, cfg.step_budget);
            prop_assert_eq!(t.crash, Some(c.record()));
            prop_assert!(keys.insert((c.location.clone(), c.crash_type.clone())));
        }
    }
}

//! Randomized checks of the loop's scheduling rules, shared by the
//! property suite and the acceptance harness.

use super::{random_program, CRASH_LOCATIONS};
use focusfuzz::analysis::Analysis;
use focusfuzz::benchgen::{generate_bench, BenchKind, BenchSpec};
use focusfuzz::campaign::{run_campaign, CampaignConfig};
use focusfuzz::exec::{execute, Coverage};
use focusfuzz::program::{Program, SiteIdx};
use focusfuzz::schedule::{filter_constraints, offer_seed, policy_cmp, SeedEntry, SeedPolicy, SeedQueue};
use proptest::prelude::*;
use std::cmp::Ordering;
use std::collections::BTreeSet;

pub fn input() -> impl Strategy<Value = Vec<u8>> {
    prop::collection::vec(any::<u8>(), 0..24)
}

pub fn entry() -> impl Strategy<Value = SeedEntry> {
    (prop::option::weighted(0.8, 0u32..6), 1u32..20, 0u32..20).prop_map(|(d, total, hit)| {
        SeedEntry::new(vec![], d, Coverage::new(hit.min(total), total))
    })
}

pub fn policy() -> impl Strategy<Value = SeedPolicy> {
    prop::sample::select(SeedPolicy::ALL.to_vec())
}

pub type OfferCase = (SeedPolicy, Vec<SeedEntry>, SeedEntry, SeedEntry);

pub fn offer_case() -> impl Strategy<Value = OfferCase> {
    (policy(), prop::collection::vec(entry(), 0..4), entry(), entry())
}

/// `offer_seed` enqueues exactly when the queue is empty or the candidate
/// orders strictly before the current seed.
pub fn check_offer((pol, queued, cand, current): OfferCase) -> Result<(), TestCaseError> {
    let mut q = SeedQueue::new(pol);
    for e in queued {
        q.push(e);
    }
    let before = q.len();
    let expect = before == 0 || policy_cmp(&cand, &current, pol) == Ordering::Less;
    prop_assert_eq!(offer_seed(&mut q, cand.clone(), &current), expect);
    prop_assert_eq!(q.len(), before + expect as usize);
    if before > 0 && expect {
        prop_assert_ne!(policy_cmp(&cand, &current, pol), Ordering::Greater);
    }
    Ok(())
}

pub type FilterCase = (u64, Vec<u8>, Vec<bool>);

pub fn filter_case() -> impl Strategy<Value = FilterCase> {
    (any::<u64>(), input(), prop::collection::vec(any::<bool>(), 16))
}

/// At most three candidates, nearest first, matching an independent
/// eligibility computation.
pub fn check_filter((seed, bytes, drop): FilterCase) -> Result<(), TestCaseError> {
    let p = Program::parse(&random_program(seed)).unwrap();
    let a = Analysis::new(&p, CRASH_LOCATIONS[0]).unwrap();
    let t = execute(&p, &bytes, None, 5_000);
    let attempted: BTreeSet<(SiteIdx, u32)> = t
        .sites_hit
        .iter()
        .zip(drop.iter().cycle())
        .filter(|(_, &d)| d)
        .map(|(h, _)| (h.site, h.edge))
        .collect();
    let got = filter_constraints(&p, &t, &a, &attempted);
    prop_assert!(got.len() <= 3);
    prop_assert!(got.windows(2).all(|w| w[0].distance <= w[1].distance));

    let mut seen = BTreeSet::new();
    let mut eligible = Vec::new();
    for h in &t.sites_hit {
        if !seen.insert(h.site) {
            continue;
        }
        let Some(d) = a.site_distance(h.site) else { continue };
        if a.is_invalid(h.site) || attempted.contains(&(h.site, h.edge)) {
            continue;
        }
        let key = |e: Option<u32>| e.map_or(u64::MAX, u64::from);
        let taken = key(a.successor_distance(h.site, h.edge));
        let n = a.successor_distances(h.site).len() as u32;
        if (0..n).any(|e| e != h.edge && key(a.successor_distance(h.site, e)) < taken) {
            eligible.push((d, h.site, h.edge));
        }
    }
    prop_assert_eq!(got.len(), eligible.len().min(3));
    for c in &got {
        prop_assert!(eligible.contains(&(c.distance, c.site, c.edge)));
    }
    if let Some(worst) = got.last() {
        let picked: BTreeSet<SiteIdx> = got.iter().map(|c| c.site).collect();
        for (d, s, _) in &eligible {
            if !picked.contains(s) {
                prop_assert!(*d >= worst.distance);
            }
        }
    }
    Ok(())
}

pub type CampaignCase = (u64, Vec<u8>);

pub fn campaign_case() -> impl Strategy<Value = CampaignCase> {
    (any::<u64>(), input())
}

/// After a solved constraint the rest of that seed's candidates are
/// dropped: nothing else is focused before the next pop. Returns the
/// number of solves seen.
pub fn check_early_exit((seed, mut bytes): CampaignCase) -> Result<usize, TestCaseError> {
    // Half the cases use gate benchmarks, where solves are common.
    let (p, location) = if seed % 2 == 0 {
        let b = generate_bench(&BenchSpec {
            kind: BenchKind::Mixed,
            depth: 1 + (seed / 2 % 4) as usize,
            input_len: 48,
            seed,
        })
        .unwrap();
        // Formatted seeds: long enough to pass the header check.
        bytes.resize(b.truth.input_len, 0);
        (Program::new(b.program).unwrap(), b.truth.location)
    } else {
        let p = Program::parse(&random_program(seed)).unwrap();
        (p, CRASH_LOCATIONS[0].to_string())
    };
    let mut cfg = CampaignConfig::new(location);
    cfg.max_execs = 1_500;
    cfg.step_budget = 5_000;
    cfg.rng_seed = seed;
    let r = run_campaign(&p, &[bytes], &cfg).unwrap();
    let ev: Vec<&str> = r.events.iter().map(|e| e.event.as_str()).collect();
    let mut solves = 0;
    for (i, e) in ev.iter().enumerate() {
        if !e.starts_with("solved") {
            continue;
        }
        solves += 1;
        let rest = &ev[i + 1..];
        let end = rest.iter().position(|e| e.starts_with("pop")).unwrap_or(rest.len());
        prop_assert!(rest[..end].iter().any(|e| e.starts_with("early-exit")));
        prop_assert!(!rest[..end].iter().any(|e| e.starts_with("focus")));
    }
    Ok(solves)
}

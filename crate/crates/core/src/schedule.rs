//! Seed ordering, the packed seed-priority value, and constraint filtering.

use crate::analysis::{dist_key, Analysis};
use crate::exec::{Coverage, ExecutionTrace};
use crate::program::{Program, SiteIdx};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::{BTreeSet, BinaryHeap};
use std::fmt;
use std::str::FromStr;

/// At most this many constraints are queued per seed.
pub const MAX_CANDIDATES: usize = 3;

const SCALE: u128 = 100_000_000;
const MODULUS: u128 = 10_000_000_000_000_000;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ScheduleError {
    #[error("coverage must be positive")]
    ZeroCoverage,
    #[error("unknown seed policy `{0}` (expected fifo, d, dc or dinvc)")]
    UnknownPolicy(String),
}

/// `(D * 10^8 + floor(10^8 / C)) mod 10^16`. Informational only: queue
/// order is decided by [`compare_seeds`], because the packed form lets the
/// coverage term spill into the distance digits once C < 0.5.
pub fn seed_priority(distance: u64, coverage: Coverage) -> Result<u64, ScheduleError> {
    if coverage.hit == 0 || coverage.total == 0 {
        return Err(ScheduleError::ZeroCoverage);
    }
    let inv = SCALE * coverage.total as u128 / coverage.hit as u128;
    Ok(((distance as u128 * SCALE + inv) % MODULUS) as u64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SeedPolicy {
    /// Arrival order.
    Fifo,
    /// Ascending distance.
    #[serde(rename = "d")]
    Distance,
    /// Ascending distance, then ascending coverage.
    #[serde(rename = "dc")]
    DistanceCoverage,
    /// Ascending distance, then descending coverage.
    #[default]
    #[serde(rename = "dinvc")]
    DistanceInvCoverage,
}

impl SeedPolicy {
    pub const ALL: [SeedPolicy; 4] = [
        SeedPolicy::Fifo,
        SeedPolicy::Distance,
        SeedPolicy::DistanceCoverage,
        SeedPolicy::DistanceInvCoverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SeedPolicy::Fifo => "fifo",
            SeedPolicy::Distance => "d",
            SeedPolicy::DistanceCoverage => "dc",
            SeedPolicy::DistanceInvCoverage => "dinvc",
        }
    }
}

impl fmt::Display for SeedPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SeedPolicy {
    type Err = ScheduleError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        SeedPolicy::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| ScheduleError::UnknownPolicy(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedEntry {
    pub bytes: Vec<u8>,
    /// `None` when the run hit no site with a finite distance.
    pub distance: Option<u32>,
    pub coverage: Coverage,
    pub priority: Option<u64>,
    /// Assigned by [`SeedQueue::push`].
    pub arrival: u64,
}

impl SeedEntry {
    pub fn new(bytes: Vec<u8>, distance: Option<u32>, coverage: Coverage) -> SeedEntry {
        let priority = distance.and_then(|d| seed_priority(d as u64, coverage).ok());
        SeedEntry {
            bytes,
            distance,
            coverage,
            priority,
            arrival: 0,
        }
    }

    pub fn from_trace(bytes: Vec<u8>, trace: &ExecutionTrace, analysis: &Analysis) -> SeedEntry {
        SeedEntry::new(bytes, analysis.seed_distance(trace), trace.coverage())
    }
}

/// Policy order ignoring arrival. Unreachable seeds come after reachable
/// ones under every distance-based policy and tie among themselves.
pub fn policy_cmp(a: &SeedEntry, b: &SeedEntry, policy: SeedPolicy) -> Ordering {
    if policy == SeedPolicy::Fifo {
        return Ordering::Equal;
    }
    let by_d = dist_key(a.distance).cmp(&dist_key(b.distance));
    if by_d != Ordering::Equal || a.distance.is_none() {
        return by_d;
    }
    match policy {
        SeedPolicy::DistanceCoverage => a.coverage.cmp_fraction(b.coverage),
        SeedPolicy::DistanceInvCoverage => b.coverage.cmp_fraction(a.coverage),
        _ => Ordering::Equal,
    }
}

/// `Less` means `a` is scheduled first.
pub fn compare_seeds(a: &SeedEntry, b: &SeedEntry, policy: SeedPolicy) -> Ordering {
    policy_cmp(a, b, policy).then(a.arrival.cmp(&b.arrival))
}

#[derive(Debug)]
struct Queued {
    entry: SeedEntry,
    policy: SeedPolicy,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Queued {}

impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Queued {
    // BinaryHeap is a max-heap; the seed ordered first must compare greatest.
    fn cmp(&self, other: &Self) -> Ordering {
        compare_seeds(&other.entry, &self.entry, self.policy)
    }
}

#[derive(Debug)]
pub struct SeedQueue {
    policy: SeedPolicy,
    heap: BinaryHeap<Queued>,
    next_arrival: u64,
}

impl SeedQueue {
    pub fn new(policy: SeedPolicy) -> SeedQueue {
        SeedQueue {
            policy,
            heap: BinaryHeap::new(),
            next_arrival: 0,
        }
    }

    pub fn policy(&self) -> SeedPolicy {
        self.policy
    }

    /// Stamps the entry with the next arrival number and enqueues it.
    pub fn push(&mut self, mut entry: SeedEntry) -> u64 {
        entry.arrival = self.next_arrival;
        self.next_arrival += 1;
        let arrival = entry.arrival;
        self.heap.push(Queued {
            entry,
            policy: self.policy,
        });
        arrival
    }

    pub fn pop(&mut self) -> Option<SeedEntry> {
        self.heap.pop().map(|q| q.entry)
    }

    pub fn peek(&self) -> Option<&SeedEntry> {
        self.heap.peek().map(|q| &q.entry)
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Best distance currently queued.
    pub fn best_distance(&self) -> Option<u32> {
        self.heap.iter().filter_map(|q| q.entry.distance).min()
    }
}

/// Enqueues `candidate` iff it orders strictly before `current` (arrival
/// aside) or the queue is empty.
pub fn offer_seed(queue: &mut SeedQueue, candidate: SeedEntry, current: &SeedEntry) -> bool {
    if queue.is_empty() || policy_cmp(&candidate, current, queue.policy) == Ordering::Less {
        queue.push(candidate);
        true
    } else {
        false
    }
}

/// A constraint selected for solving: the site, the edge the seed took, and
/// the site's distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Candidate {
    pub site: SiteIdx,
    pub edge: u32,
    pub distance: u32,
}

/// Selects up to three constraints from the first dynamic hit of each site,
/// nearest first. Skipped: invalid sites, sites without a finite distance,
/// (site, edge) pairs already attempted, and sites where no other edge leads
/// strictly closer than the one taken.
pub fn filter_constraints(
    p: &Program,
    trace: &ExecutionTrace,
    analysis: &Analysis,
    attempted: &BTreeSet<(SiteIdx, u32)>,
) -> Vec<Candidate> {
    let mut seen = BTreeSet::new();
    let mut out: Vec<Candidate> = Vec::new();
    for hit in &trace.sites_hit {
        if !seen.insert(hit.site) {
            continue;
        }
        if analysis.is_invalid(hit.site) || attempted.contains(&(hit.site, hit.edge)) {
            continue;
        }
        let Some(distance) = analysis.site_distance(hit.site) else {
            continue;
        };
        let succ = analysis.successor_distances(hit.site);
        let taken = dist_key(succ.get(hit.edge as usize).copied().flatten());
        let improvable = succ
            .iter()
            .enumerate()
            .any(|(e, d)| e as u32 != hit.edge && dist_key(*d) < taken);
        if improvable {
            out.push(Candidate {
                site: hit.site,
                edge: hit.edge,
                distance,
            });
        }
    }
    out.sort_by(|a, b| {
        a.distance
            .cmp(&b.distance)
            .then_with(|| p.site_name(a.site).cmp(p.site_name(b.site)))
            .then(a.edge.cmp(&b.edge))
    });
    out.truncate(MAX_CANDIDATES);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute;

    fn entry(d: Option<u32>, hit: u32, total: u32) -> SeedEntry {
        SeedEntry::new(vec![], d, Coverage::new(hit, total))
    }

    #[test]
    fn priority_values() {
        assert_eq!(seed_priority(1, Coverage::new(1, 2)), Ok(300_000_000));
        assert_eq!(seed_priority(0, Coverage::new(1, 1)), Ok(100_000_000));
        assert_eq!(seed_priority(100_000_000, Coverage::new(1, 1)), Ok(100_000_000));
        assert_eq!(
            seed_priority(0, Coverage::new(0, 4)),
            Err(ScheduleError::ZeroCoverage)
        );
    }

    #[test]
    fn comparator_examples() {
        let p = SeedPolicy::DistanceInvCoverage;
        let near_low = entry(Some(1), 2, 10);
        let far_high = entry(Some(2), 9, 10);
        assert_eq!(compare_seeds(&near_low, &far_high, p), Ordering::Less);
        let near_high = entry(Some(1), 9, 10);
        assert_eq!(compare_seeds(&near_high, &near_low, p), Ordering::Less);
        assert_eq!(
            compare_seeds(&near_low, &near_high, SeedPolicy::DistanceCoverage),
            Ordering::Less
        );
        let mut a = entry(Some(3), 1, 2);
        let mut b = a.clone();
        a.arrival = 4;
        b.arrival = 7;
        assert_eq!(compare_seeds(&a, &b, p), Ordering::Less);
    }

    #[test]
    fn unreachable_seeds_sort_last_in_arrival_order() {
        let mut q = SeedQueue::new(SeedPolicy::Distance);
        q.push(entry(None, 1, 2));
        q.push(entry(Some(7), 1, 2));
        q.push(entry(None, 2, 2));
        assert_eq!(q.pop().unwrap().distance, Some(7));
        assert_eq!(q.pop().unwrap().arrival, 0);
        assert_eq!(q.pop().unwrap().arrival, 2);
        assert!(q.pop().is_none());
    }

    #[test]
    fn fifo_pops_in_arrival_order() {
        let mut q = SeedQueue::new(SeedPolicy::Fifo);
        for d in [5, 1, 3] {
            q.push(entry(Some(d), 1, 1));
        }
        let order: Vec<_> = std::iter::from_fn(|| q.pop()).map(|e| e.distance).collect();
        assert_eq!(order, vec![Some(5), Some(1), Some(3)]);
    }

    #[test]
    fn offer_rules() {
        let current = entry(Some(2), 1, 2);
        let mut q = SeedQueue::new(SeedPolicy::DistanceInvCoverage);
        assert!(offer_seed(&mut q, entry(Some(9), 1, 9), &current));
        assert!(!offer_seed(&mut q, entry(Some(3), 1, 2), &current));
        assert!(!offer_seed(&mut q, entry(Some(2), 1, 2), &current));
        assert!(offer_seed(&mut q, entry(Some(2), 2, 3), &current));
        assert_eq!(q.len(), 2);
    }

    #[test]
    fn policy_names_round_trip() {
        for p in SeedPolicy::ALL {
            assert_eq!(p.name().parse::<SeedPolicy>(), Ok(p));
        }
        assert!("x".parse::<SeedPolicy>().is_err());
    }

    /// A ladder of sites at decreasing depth: site `S{i}` jumps toward the
    /// target when `in[i] == 1`, and the chain below its true edge is `len`
    /// blocks long.
    fn ladder(lens: &[u32]) -> String {
        let mut s = String::from("fn main() {\n");
        for (i, len) in lens.iter().enumerate() {
            s += &format!("block L{i}: br site=S{i} (in[{i}] == 1) -> P{i}_0, L{}\n", i + 1);
            for k in 0..*len {
                s += &format!("block P{i}_{k}: jmp P{i}_{}\n", k + 1);
            }
            s += &format!("block P{i}_{len}: jmp T\n");
        }
        s += &format!("block L{}: ret 0\n", lens.len());
        s += "block T: crash \"t.c:1\" \"abort\" ret 0\n}";
        s
    }

    #[test]
    fn keeps_the_three_nearest() {
        // Site distances come out as 2, 4, 6, 8, 10.
        let p = Program::parse(&ladder(&[0, 2, 4, 6, 8])).unwrap();
        let a = Analysis::new(&p, "t.c:1").unwrap();
        let t = execute(&p, &[0; 8], None, 10_000);
        let c = filter_constraints(&p, &t, &a, &BTreeSet::new());
        let names: Vec<&str> = c.iter().map(|c| p.site_name(c.site)).collect();
        assert_eq!(names, vec!["S0", "S1", "S2"]);
        let d: Vec<u32> = c.iter().map(|c| c.distance).collect();
        assert_eq!(d, vec![2, 4, 6]);

        let attempted: BTreeSet<_> = c.iter().map(|c| (c.site, c.edge)).collect();
        let rest = filter_constraints(&p, &t, &a, &attempted);
        assert_eq!(rest.len(), 2);
        assert!(rest.iter().all(|c| !attempted.contains(&(c.site, c.edge))));
    }

    #[test]
    fn optimal_edges_are_dropped() {
        let p = Program::parse(&ladder(&[0, 0])).unwrap();
        let a = Analysis::new(&p, "t.c:1").unwrap();
        // in[0] == 1 already takes S0's near edge; only S0 is hit.
        let t = execute(&p, &[1, 0], None, 10_000);
        assert!(filter_constraints(&p, &t, &a, &BTreeSet::new()).is_empty());
    }
}

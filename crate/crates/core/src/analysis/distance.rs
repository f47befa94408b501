use super::graph::Graph;
use crate::program::{BlockIdx, FuncIdx, Program, SiteIdx};
use std::collections::{BTreeSet, VecDeque};

/// Hop count from every block to its nearest target; `None` if no target is
/// reachable.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceMap {
    dist: Vec<Option<u32>>,
}

impl DistanceMap {
    pub fn get(&self, b: BlockIdx) -> Option<u32> {
        self.dist[b.index()]
    }

    pub fn as_slice(&self) -> &[Option<u32>] {
        &self.dist
    }

    pub fn len(&self) -> usize {
        self.dist.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dist.is_empty()
    }
}

/// Multi-source BFS over reversed edges.
pub fn assign_distances(g: &Graph, targets: &[BlockIdx]) -> DistanceMap {
    let mut dist = vec![None; g.node_count()];
    let mut queue = VecDeque::new();
    for &t in targets {
        if dist[t.index()].is_none() {
            dist[t.index()] = Some(0);
            queue.push_back(t);
        }
    }
    while let Some(b) = queue.pop_front() {
        let d = dist[b.index()].unwrap() + 1;
        for &p in g.predecessors(b) {
            if dist[p.index()].is_none() {
                dist[p.index()] = Some(d);
                queue.push_back(p);
            }
        }
    }
    DistanceMap { dist }
}

/// One schedulable view of a site. A site inside a function reached from
/// call block `c` is published once more with `c`'s distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SiteInfo {
    pub site: SiteIdx,
    pub distance: Option<u32>,
    pub via_call: Option<BlockIdx>,
    pub invalid: bool,
}

pub fn site_distances(p: &Program, dm: &DistanceMap, invalid: &BTreeSet<SiteIdx>) -> Vec<SiteInfo> {
    // For every function, the finite-distance call blocks that reach it
    // directly or transitively.
    let mut inherited: Vec<BTreeSet<BlockIdx>> = vec![BTreeSet::new(); p.function_count()];
    for i in 0..p.block_count() {
        let c = BlockIdx(i as u32);
        if dm.get(c).is_none() || p.callees(c).is_empty() {
            continue;
        }
        for f in transitive_callees(p, c) {
            inherited[f.index()].insert(c);
        }
    }

    let mut out = Vec::new();
    for (s, desc) in p.sites() {
        let bad = invalid.contains(&s);
        out.push(SiteInfo {
            site: s,
            distance: dm.get(desc.block),
            via_call: None,
            invalid: bad,
        });
        for &c in &inherited[p.function_of(desc.block).index()] {
            out.push(SiteInfo {
                site: s,
                distance: dm.get(c),
                via_call: Some(c),
                invalid: bad,
            });
        }
    }
    out
}

fn transitive_callees(p: &Program, c: BlockIdx) -> BTreeSet<FuncIdx> {
    let mut seen = BTreeSet::new();
    let mut stack = p.callees(c);
    while let Some(f) = stack.pop() {
        if seen.insert(f) {
            for &b in p.function_blocks(f) {
                stack.extend(p.callees(b));
            }
        }
    }
    seen
}

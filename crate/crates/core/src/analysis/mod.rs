//! Static facts a campaign needs before its first execution: the program
//! graph, block distances to the target, per-site distances and the set of
//! loop-control sites that are never scheduled.

mod distance;
mod dominators;
mod graph;

pub use distance::{assign_distances, site_distances, DistanceMap, SiteInfo};
pub use dominators::{mark_invalid, Dominators};
pub use graph::{build_graph, program_graph, AnalysisError, Graph, StaticGraph};

use crate::exec::ExecutionTrace;
use crate::program::{BlockIdx, Program, SiteIdx};
use std::collections::BTreeSet;
use std::fmt::Write;

/// Orders optional distances with `None` as infinity.
pub fn dist_key(d: Option<u32>) -> u64 {
    d.map_or(u64::MAX, u64::from)
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub graph: StaticGraph,
    pub distances: DistanceMap,
    pub sites: Vec<SiteInfo>,
    pub invalid: BTreeSet<SiteIdx>,
    min_distance: Vec<Option<u32>>,
    successor_distances: Vec<Vec<Option<u32>>>,
}

impl Analysis {
    pub fn new(p: &Program, location: &str) -> Result<Analysis, AnalysisError> {
        let graph = build_graph(p, location)?;
        let distances = assign_distances(&graph.graph, &graph.targets);
        let invalid = mark_invalid(p, &Dominators::compute(p));
        let sites = site_distances(p, &distances, &invalid);
        let mut min_distance = vec![None; p.site_count()];
        for info in &sites {
            let slot = &mut min_distance[info.site.index()];
            if dist_key(info.distance) < dist_key(*slot) {
                *slot = info.distance;
            }
        }
        let successor_distances = p
            .sites()
            .map(|(_, d)| d.successors.iter().map(|&b| distances.get(b)).collect())
            .collect();
        Ok(Analysis {
            graph,
            distances,
            sites,
            invalid,
            min_distance,
            successor_distances,
        })
    }

    pub fn block_distance(&self, b: BlockIdx) -> Option<u32> {
        self.distances.get(b)
    }

    /// Smallest distance among the site's published entries.
    pub fn site_distance(&self, s: SiteIdx) -> Option<u32> {
        self.min_distance[s.index()]
    }

    pub fn successor_distances(&self, s: SiteIdx) -> &[Option<u32>] {
        &self.successor_distances[s.index()]
    }

    pub fn successor_distance(&self, s: SiteIdx, edge: u32) -> Option<u32> {
        self.successor_distances[s.index()]
            .get(edge as usize)
            .copied()
            .flatten()
    }

    pub fn is_invalid(&self, s: SiteIdx) -> bool {
        self.invalid.contains(&s)
    }

    /// D of a seed: the smallest finite distance among the sites its run hit.
    pub fn seed_distance(&self, trace: &ExecutionTrace) -> Option<u32> {
        trace
            .sites_hit
            .iter()
            .filter_map(|h| self.site_distance(h.site))
            .min()
    }

    pub fn targets(&self) -> &[BlockIdx] {
        &self.graph.targets
    }

    /// Graphviz rendering annotated with distances; targets are drawn as
    /// double circles and invalid sites dashed.
    pub fn to_dot(&self, p: &Program) -> String {
        let mut out = String::from("digraph cfg {\n  node [shape=box];\n");
        for i in 0..p.block_count() {
            let b = BlockIdx(i as u32);
            let d = self
                .distances
                .get(b)
                .map_or_else(|| "inf".to_string(), |d| d.to_string());
            let mut label = format!("{}\\nd={d}", p.block_name(b));
            let mut style = String::new();
            if let Some(s) = p.site_of_block(b) {
                let _ = write!(label, "\\nsite {}", p.site_name(s));
                if self.is_invalid(s) {
                    style.push_str(", style=dashed");
                }
            }
            if self.graph.targets.contains(&b) {
                style.push_str(", shape=doublecircle");
            }
            let _ = writeln!(out, "  \"{}\" [label=\"{label}\"{style}];", p.block_name(b));
        }
        for (a, b) in self.graph.graph.edges() {
            let _ = writeln!(out, "  \"{}\" -> \"{}\";", p.block_name(a), p.block_name(b));
        }
        out.push_str("}\n");
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::execute;

    const DIAMOND: &str = "fn main() {
        block A: switch site=W (in[0]) [1 -> B, 2 -> C] default D
        block B: jmp T
        block C: jmp D
        block D: jmp C2
        block C2: jmp T
        block T: crash \"d.c:1\" \"abort\" ret 0 }";

    #[test]
    fn every_finite_node_has_a_descending_edge() {
        let p = Program::parse(DIAMOND).unwrap();
        let a = Analysis::new(&p, "d.c:1").unwrap();
        for i in 0..p.block_count() {
            let b = BlockIdx(i as u32);
            match a.block_distance(b) {
                Some(0) => assert!(a.targets().contains(&b)),
                Some(d) => assert!(a
                    .graph
                    .graph
                    .successors(b)
                    .iter()
                    .any(|&s| a.block_distance(s) == Some(d - 1))),
                None => {}
            }
        }
    }

    #[test]
    fn distance_follows_the_block_actually_executed() {
        // The default edge is not the nearest path, yet it still lands on a
        // block with a distance.
        let p = Program::parse(DIAMOND).unwrap();
        let a = Analysis::new(&p, "d.c:1").unwrap();
        let t = execute(&p, &[9], None, 1000);
        let w = p.site("W").unwrap();
        assert_eq!(t.first_edge(w), Some(2));
        assert_eq!(a.successor_distances(w), &[Some(1), Some(3), Some(2)]);
        assert!(t.crash.is_some());
        assert_eq!(a.seed_distance(&t), Some(2));
    }

    #[test]
    fn dot_export_mentions_every_block() {
        let p = Program::parse(DIAMOND).unwrap();
        let a = Analysis::new(&p, "d.c:1").unwrap();
        let dot = a.to_dot(&p);
        assert!(dot.starts_with("digraph"));
        for name in ["A", "B", "C", "D", "C2", "T"] {
            assert!(dot.contains(&format!("\"{name}\" [")));
        }
        assert!(dot.contains("doublecircle"));
    }
}

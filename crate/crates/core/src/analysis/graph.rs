use crate::program::{BlockIdx, Program};

/// Plain directed graph over dense block indices. Parallel edges are
/// collapsed.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Graph {
    succ: Vec<Vec<BlockIdx>>,
    pred: Vec<Vec<BlockIdx>>,
}

impl Graph {
    pub fn new(nodes: usize) -> Graph {
        Graph {
            succ: vec![Vec::new(); nodes],
            pred: vec![Vec::new(); nodes],
        }
    }

    /// Adds `from -> to`; returns false if the edge was already present.
    pub fn add_edge(&mut self, from: BlockIdx, to: BlockIdx) -> bool {
        if self.succ[from.index()].contains(&to) {
            return false;
        }
        self.succ[from.index()].push(to);
        self.pred[to.index()].push(from);
        true
    }

    pub fn node_count(&self) -> usize {
        self.succ.len()
    }

    pub fn edge_count(&self) -> usize {
        self.succ.iter().map(Vec::len).sum()
    }

    pub fn successors(&self, b: BlockIdx) -> &[BlockIdx] {
        &self.succ[b.index()]
    }

    pub fn predecessors(&self, b: BlockIdx) -> &[BlockIdx] {
        &self.pred[b.index()]
    }

    pub fn edges(&self) -> impl Iterator<Item = (BlockIdx, BlockIdx)> + '_ {
        self.succ
            .iter()
            .enumerate()
            .flat_map(|(i, s)| s.iter().map(move |t| (BlockIdx(i as u32), *t)))
    }
}

/// The program graph with its target blocks marked.
#[derive(Debug, Clone)]
pub struct StaticGraph {
    pub graph: Graph,
    pub targets: Vec<BlockIdx>,
    pub location: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AnalysisError {
    #[error("target location `{location}` matches no crash site (known: {})", known.join(", "))]
    UnknownLocation { location: String, known: Vec<String> },
}

/// Intra-function edges, plus call-block -> callee entry and callee return
/// blocks -> call block.
pub fn program_graph(p: &Program) -> Graph {
    let mut g = Graph::new(p.block_count());
    for i in 0..p.block_count() {
        let b = BlockIdx(i as u32);
        for t in p.successors(b) {
            g.add_edge(b, t);
        }
        for f in p.callees(b) {
            g.add_edge(b, p.function_entry(f));
            for &r in p.function_blocks(f) {
                if p.is_return_block(r) {
                    g.add_edge(r, b);
                }
            }
        }
    }
    g
}

pub fn build_graph(p: &Program, location: &str) -> Result<StaticGraph, AnalysisError> {
    let mut targets: Vec<BlockIdx> = p
        .crashes()
        .iter()
        .filter(|c| c.location == location)
        .map(|c| c.block)
        .collect();
    targets.sort();
    targets.dedup();
    if targets.is_empty() {
        let mut known: Vec<String> = p.crashes().iter().map(|c| c.location.clone()).collect();
        known.sort();
        known.dedup();
        return Err(AnalysisError::UnknownLocation {
            location: location.to_string(),
            known,
        });
    }
    Ok(StaticGraph {
        graph: program_graph(p),
        targets,
        location: location.to_string(),
    })
}

//! Per-function dominator trees (Cooper, Harvey and Kennedy's iterative
//! scheme) and loop-site detection.

use crate::ir::SiteKind;
use crate::program::{BlockIdx, Program, SiteIdx};
use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub struct Dominators {
    /// Immediate dominator; a function entry is its own idom, and blocks
    /// unreachable from their entry have none.
    idom: Vec<Option<BlockIdx>>,
}

impl Dominators {
    pub fn compute(p: &Program) -> Dominators {
        let mut idom = vec![None; p.block_count()];
        for f in 0..p.function_count() {
            let f = crate::program::FuncIdx(f as u32);
            compute_function(p, p.function_entry(f), &mut idom);
        }
        Dominators { idom }
    }

    pub fn idom(&self, b: BlockIdx) -> Option<BlockIdx> {
        self.idom[b.index()]
    }

    /// Reflexive: every reachable block dominates itself.
    pub fn dominates(&self, a: BlockIdx, b: BlockIdx) -> bool {
        let mut cur = b;
        loop {
            if cur == a {
                return true;
            }
            match self.idom[cur.index()] {
                Some(next) if next != cur => cur = next,
                _ => return false,
            }
        }
    }
}

fn compute_function(p: &Program, entry: BlockIdx, idom: &mut [Option<BlockIdx>]) {
    // Reverse postorder from the entry.
    let mut post = Vec::new();
    let mut visited = BTreeSet::new();
    let mut stack = vec![(entry, 0usize)];
    visited.insert(entry);
    while let Some((b, i)) = stack.pop() {
        let succ = p.successors(b);
        if i < succ.len() {
            stack.push((b, i + 1));
            let s = succ[i];
            if visited.insert(s) {
                stack.push((s, 0));
            }
        } else {
            post.push(b);
        }
    }
    let mut order = vec![usize::MAX; p.block_count()];
    for (i, b) in post.iter().enumerate() {
        order[b.index()] = i;
    }
    let mut preds: Vec<Vec<BlockIdx>> = vec![Vec::new(); p.block_count()];
    for &b in &post {
        for s in p.successors(b) {
            preds[s.index()].push(b);
        }
    }

    idom[entry.index()] = Some(entry);
    let mut changed = true;
    while changed {
        changed = false;
        for &b in post.iter().rev() {
            if b == entry {
                continue;
            }
            let mut new: Option<BlockIdx> = None;
            for &q in &preds[b.index()] {
                if idom[q.index()].is_none() {
                    continue;
                }
                new = Some(match new {
                    None => q,
                    Some(n) => intersect(idom, &order, q, n),
                });
            }
            if new.is_some() && idom[b.index()] != new {
                idom[b.index()] = new;
                changed = true;
            }
        }
    }
}

fn intersect(idom: &[Option<BlockIdx>], order: &[usize], mut a: BlockIdx, mut b: BlockIdx) -> BlockIdx {
    while a != b {
        while order[a.index()] < order[b.index()] {
            a = idom[a.index()].unwrap();
        }
        while order[b.index()] < order[a.index()] {
            b = idom[b.index()].unwrap();
        }
    }
    a
}

/// Conditional-branch sites with an out-edge whose target dominates the
/// branch block: comparisons that only decide whether a loop runs again.
pub fn mark_invalid(p: &Program, dom: &Dominators) -> BTreeSet<SiteIdx> {
    p.sites()
        .filter(|(_, d)| d.kind != SiteKind::Switch)
        .filter(|(_, d)| d.successors.iter().any(|&t| dom.dominates(t, d.block)))
        .map(|(s, _)| s)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn invalid_names(text: &str) -> Vec<String> {
        let p = Program::parse(text).unwrap();
        let d = Dominators::compute(&p);
        mark_invalid(&p, &d)
            .into_iter()
            .map(|s| p.site_name(s).to_string())
            .collect()
    }

    #[test]
    fn loop_header_is_invalid() {
        let names = invalid_names(
            "fn main() { block B0: i = 0 jmp B1
               block B1: i = i + 1 br site=L (i < 8) -> B1, B2
               block B2: br site=G (in[0] == 1) -> B3, B4
               block B3: ret 1 block B4: ret 0 }",
        );
        assert_eq!(names, vec!["L"]);
    }

    #[test]
    fn diamond_has_no_invalid_sites() {
        let names = invalid_names(
            "fn main() { block A: br site=X (in[0] == 1) -> B, C
               block B: jmp D block C: jmp D
               block D: br site=Y (in[1] == 2) -> E, F block E: ret 1 block F: ret 0 }",
        );
        assert!(names.is_empty());
    }

    #[test]
    fn nested_loops() {
        // Six blocks: E -> H1; H1 body -> H2; H2 loops on itself, exits to
        // L1 which jumps back to H1; H1 exits to X. Dominators by hand:
        // idom(H1)=E, idom(H2)=H1, idom(L1)=H2, idom(X)=H1.
        let text = "fn main() { block E: i = 0 jmp H1
               block H1: j = 0 br site=O (i < 3) -> H2, X
               block H2: j = j + 1 br site=I (j < 4) -> H2, L1
               block L1: i = i + 1 jmp H1b
               block H1b: br site=Q (i < 3) -> H2, X
               block X: ret 0 }";
        let p = Program::parse(text).unwrap();
        let d = Dominators::compute(&p);
        let b = |n: &str| p.block(n).unwrap();
        assert_eq!(d.idom(b("H1")), Some(b("E")));
        assert_eq!(d.idom(b("H2")), Some(b("H1")));
        assert_eq!(d.idom(b("L1")), Some(b("H2")));
        assert_eq!(d.idom(b("X")), Some(b("H1")));
        assert!(d.dominates(b("H1"), b("H1b")));
        // H1b -> H2 is a back edge since H2 dominates H1b.
        let mut names = invalid_names(text);
        names.sort();
        assert_eq!(names, vec!["I", "Q"]);
    }

    #[test]
    fn invariant_under_block_reordering() {
        let a = invalid_names(
            "fn main() { block B0: jmp B1 block B1: i = i + 1 br site=L (i < 8) -> B1, B2 block B2: ret 0 }",
        );
        let b = invalid_names(
            "fn main() { block B0: jmp B1 block B2: ret 0 block B1: i = i + 1 br site=L (i < 8) -> B1, B2 }",
        );
        assert_eq!(a, b);
    }
}

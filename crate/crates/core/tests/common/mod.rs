//! Helpers shared by the integration suites.
#![allow(dead_code)]

pub mod props;

use focusfuzz::analysis::Graph;
use focusfuzz::program::BlockIdx;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::fmt::Write;

/// An ELF-header check called twice after a counting loop.
pub const SAMPLE: &str = r#"
fn check(off) {
  block C0: br site=ID2 memeq(bytes(off, 3), x"7F454C") -> C1, C2
  block C1: crash "sample.c:6" "heap-buffer-overflow"
            ret 1
  block C2: ret 0
}

fn main() {
  block B0: i = 0
            jmp B1
  block B1: i = i + 1
            br site=ID3 (i < 8) -> B1, B2
  block B2: br site=ID1 (inlen >= 8) -> B3, B5
  block B3: r = call check(0)
            jmp B4
  block B4: q = call check(4)
            ret 0
  block B5: ret 0
}
entry main
"#;

pub const CRASH_LOCATIONS: [&str; 3] = ["r.c:1", "r.c:2", "r.c:3"];

/// A random valid program: up to three functions, calls only to
/// later-defined functions, branch and switch sites over input bytes, and
/// crashes drawn from `CRASH_LOCATIONS` (the first one always present).
pub fn random_program(seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nf = rng.gen_range(1..=3);
    let sizes: Vec<usize> = (0..nf).map(|_| rng.gen_range(2..=10)).collect();
    let ops = ["==", "!=", "<", "<=", ">", ">="];
    let mut text = String::new();
    let crash_at = (rng.gen_range(0..nf), 0usize);
    let crash_block = rng.gen_range(1..sizes[crash_at.0]);
    for (f, &n) in sizes.iter().enumerate() {
        let _ = writeln!(text, "fn f{f}() {{");
        for b in 0..n {
            let _ = writeln!(text, "  block f{f}b{b}:");
            if f + 1 < nf && rng.gen_bool(0.25) {
                let callee = rng.gen_range(f + 1..nf);
                let _ = writeln!(text, "    r{b} = call f{callee}()");
            }
            if (f, b) == (crash_at.0, crash_block) {
                let _ = writeln!(text, "    crash \"{}\" \"abort\"", CRASH_LOCATIONS[0]);
            } else if rng.gen_bool(0.1) {
                let loc = CRASH_LOCATIONS[rng.gen_range(0..3)];
                let _ = writeln!(text, "    crash \"{loc}\" \"assert\"");
            }
            let target = |rng: &mut ChaCha8Rng| format!("f{f}b{}", rng.gen_range(0..n));
            match rng.gen_range(0..10) {
                0..=4 => {
                    let t = target(&mut rng);
                    let e = target(&mut rng);
                    let off = rng.gen_range(0..16);
                    let op = ops[rng.gen_range(0..ops.len())];
                    let c: u8 = rng.gen();
                    let _ = writeln!(text, "    br site=s{f}_{b} (in[{off}] {op} {c}) -> {t}, {e}");
                }
                5 => {
                    let off = rng.gen_range(0..16);
                    let cases: Vec<String> = (0..rng.gen_range(1..=3))
                        .map(|i| format!("{} -> {}", i * 7 + 1, target(&mut rng)))
                        .collect();
                    let d = target(&mut rng);
                    let _ = writeln!(
                        text,
                        "    switch site=s{f}_{b} (in[{off}]) [{}] default {d}",
                        cases.join(", ")
                    );
                }
                6 => {
                    let t = target(&mut rng);
                    let _ = writeln!(text, "    jmp {t}");
                }
                _ => {
                    let _ = writeln!(text, "    ret {b}");
                }
            }
        }
        let _ = writeln!(text, "}}");
    }
    let _ = writeln!(text, "entry f0");
    text
}

/// All-pairs shortest paths by Floyd–Warshall; `d[i][j]` is the hop count
/// from i to j.
pub fn floyd_warshall(n: usize, edges: &[(usize, usize)]) -> Vec<Vec<Option<u32>>> {
    let mut d = vec![vec![None; n]; n];
    for (i, row) in d.iter_mut().enumerate() {
        row[i] = Some(0);
    }
    for &(a, b) in edges {
        if a != b {
            d[a][b] = Some(1);
        }
    }
    #[allow(clippy::needless_range_loop)]
    for k in 0..n {
        for i in 0..n {
            let Some(ik) = d[i][k] else { continue };
            for j in 0..n {
                if let Some(kj) = d[k][j] {
                    if d[i][j].is_none_or(|x| ik + kj < x) {
                        d[i][j] = Some(ik + kj);
                    }
                }
            }
        }
    }
    d
}

/// Distance to the nearest target per the oracle.
pub fn oracle_distances(n: usize, edges: &[(usize, usize)], targets: &[usize]) -> Vec<Option<u32>> {
    let d = floyd_warshall(n, edges);
    (0..n)
        .map(|i| targets.iter().filter_map(|&t| d[i][t]).min())
        .collect()
}

/// A random directed graph with up to `max_nodes` nodes and 1 to 3 targets.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> (usize, Vec<(usize, usize)>, Vec<usize>) {
    let n = rng.gen_range(1..=max_nodes);
    let m = rng.gen_range(0..=3 * n);
    let edges: Vec<(usize, usize)> = (0..m).map(|_| (rng.gen_range(0..n), rng.gen_range(0..n))).collect();
    let targets: Vec<usize> = (0..rng.gen_range(1..=3.min(n))).map(|_| rng.gen_range(0..n)).collect();
    (n, edges, targets)
}

pub fn to_graph(n: usize, edges: &[(usize, usize)]) -> Graph {
    let mut g = Graph::new(n);
    for &(a, b) in edges {
        g.add_edge(BlockIdx(a as u32), BlockIdx(b as u32));
    }
    g
}

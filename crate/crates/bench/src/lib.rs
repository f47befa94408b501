//! Fixtures shared by the criterion benches.

use focusfuzz::benchgen::{generate_bench, BenchKind, BenchSpec};
use focusfuzz::Program;
use std::fmt::Write;

/// A generated benchmark lowered and ready to run, with its target and a
/// starting seed.
pub struct Fixture {
    pub program: Program,
    pub location: String,
    pub seed: Vec<u8>,
    pub witness: Vec<u8>,
}

pub fn bench_fixture(kind: BenchKind, depth: usize, input_len: usize, seed: u64) -> Fixture {
    let b = generate_bench(&BenchSpec {
        kind,
        depth,
        input_len,
        seed,
    })
    .expect("fixture parameters are valid");
    Fixture {
        program: Program::new(b.program).expect("generated programs validate"),
        location: b.truth.location.clone(),
        seed: b.truth.partial_witness(0),
        witness: b.truth.witness,
    }
}

/// A straight chain of `n` one-byte branch sites ending in a crash, for
/// scaling the static analysis.
pub fn ladder(n: usize) -> Program {
    let mut text = String::from("fn main() {\n");
    for i in 0..n {
        let _ = writeln!(
            text,
            "  block L{i}: br site=s{i} (in[{}] == {}) -> L{}, X",
            i % 256,
            i % 251,
            i + 1
        );
    }
    let _ = writeln!(text, "  block L{n}: crash \"ladder.c:1\" \"abort\"\n    ret 0");
    text.push_str("  block X: ret 1\n}\n");
    Program::parse(&text).expect("ladder is well formed")
}

//! Synthetic targets with known answers: chains of input gates guarding a
//! single crash, plus small programs with known operand wiring.

use crate::exec::{execute, DEFAULT_STEP_BUDGET};
use crate::ir::{parse_program, TargetProgram};
use crate::program::Program;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::fmt::{self, Write};
use std::ops::Range;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BenchKind {
    MagicChain,
    ChecksumGate,
    SwitchMaze,
    LengthGate,
    Mixed,
}

impl BenchKind {
    pub const ALL: [BenchKind; 5] = [
        BenchKind::MagicChain,
        BenchKind::ChecksumGate,
        BenchKind::SwitchMaze,
        BenchKind::LengthGate,
        BenchKind::Mixed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            BenchKind::MagicChain => "magic-chain",
            BenchKind::ChecksumGate => "checksum-gate",
            BenchKind::SwitchMaze => "switch-maze",
            BenchKind::LengthGate => "length-gate",
            BenchKind::Mixed => "mixed",
        }
    }
}

impl fmt::Display for BenchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchKind {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        BenchKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| BenchError::UnknownKind(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchSpec {
    pub kind: BenchKind,
    /// Number of gates.
    pub depth: usize,
    pub input_len: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BenchError {
    #[error("unknown benchmark kind `{0}`")]
    UnknownKind(String),
    #[error("depth must be at least 1")]
    ZeroDepth,
    #[error("input length {have} is too small; this benchmark needs at least {need} bytes")]
    InputTooSmall { have: usize, need: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GateKind {
    /// Four-byte string compare.
    Magic,
    /// Two input bytes read as a 16-bit integer, either byte order.
    MagicInt,
    /// Sum of eight bytes plus a constant against a 16-bit little-endian
    /// field right after them.
    Checksum,
    /// Four-way switch on one byte; one case leads on.
    Switch,
    /// Minimum input length.
    Length,
}

impl GateKind {
    fn width(self) -> usize {
        match self {
            GateKind::Magic => 4,
            GateKind::MagicInt => 2,
            GateKind::Checksum => 10,
            GateKind::Switch => 1,
            GateKind::Length => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GateTruth {
    pub kind: GateKind,
    pub site_id: String,
    pub lhs_offsets: Vec<usize>,
    pub rhs_offsets: Vec<usize>,
    /// Bytes that pass the gate, written from `region.start`.
    pub solution: Vec<u8>,
    pub region: Range<usize>,
    /// For length gates, the minimum length.
    pub min_len: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub location: String,
    pub crash_type: String,
    pub gates: Vec<GateTruth>,
    pub input_len: usize,
    /// An input that reaches the crash.
    pub witness: Vec<u8>,
}

impl GroundTruth {
    /// A zero-filled input of the right length with only the first `k`
    /// gates solved.
    pub fn partial_witness(&self, k: usize) -> Vec<u8> {
        let len = self
            .gates
            .iter()
            .take(k)
            .map(|g| g.min_len)
            .max()
            .unwrap_or(0)
            .max(if self.gates.iter().any(|g| g.kind == GateKind::Length) {
                0
            } else {
                self.input_len
            });
        let mut out = vec![0u8; len];
        for g in self.gates.iter().take(k).filter(|g| !g.solution.is_empty()) {
            out[g.region.clone()].copy_from_slice(&g.solution);
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct Bench {
    pub spec: BenchSpec,
    pub text: String,
    pub program: TargetProgram,
    pub truth: GroundTruth,
}

const CRASH_TYPES: [&str; 4] = [
    "heap-buffer-overflow",
    "stack-buffer-overflow",
    "use-after-free",
    "null-deref",
];

fn gate_kinds(kind: BenchKind, depth: usize, rng: &mut ChaCha8Rng) -> Vec<GateKind> {
    (0..depth)
        .map(|_| match kind {
            BenchKind::MagicChain => GateKind::Magic,
            BenchKind::ChecksumGate => GateKind::Checksum,
            BenchKind::SwitchMaze => GateKind::Switch,
            BenchKind::LengthGate => GateKind::Length,
            BenchKind::Mixed => *[
                GateKind::Magic,
                GateKind::MagicInt,
                GateKind::Checksum,
                GateKind::Switch,
            ]
            .choose(rng)
            .unwrap(),
        })
        .collect()
}

/// Picks disjoint regions of the given widths at random positions.
fn place(widths: &[usize], input_len: usize, rng: &mut ChaCha8Rng) -> Result<Vec<Range<usize>>, BenchError> {
    let need: usize = widths.iter().sum();
    if need > input_len {
        return Err(BenchError::InputTooSmall {
            have: input_len,
            need,
        });
    }
    // Shuffle the gate order, then spread the slack randomly between them.
    let mut order: Vec<usize> = (0..widths.len()).collect();
    order.shuffle(rng);
    let slack = input_len - need;
    let mut cuts: Vec<usize> = (0..widths.len()).map(|_| rng.gen_range(0..=slack)).collect();
    cuts.sort_unstable();
    let mut out = vec![0..0; widths.len()];
    let mut pos = 0;
    let mut used_slack = 0;
    for (i, &g) in order.iter().enumerate() {
        pos += cuts[i] - used_slack;
        used_slack = cuts[i];
        out[g] = pos..pos + widths[g];
        pos += widths[g];
    }
    Ok(out)
}

fn nonzero_byte(rng: &mut ChaCha8Rng) -> u8 {
    rng.gen_range(1..=0xFF)
}

/// Builds the program text and ground truth for `spec`. The result is
/// checked: its witness input must reach the crash.
pub fn generate_bench(spec: &BenchSpec) -> Result<Bench, BenchError> {
    if spec.depth == 0 {
        return Err(BenchError::ZeroDepth);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x6265_6e63_6867_656e);
    let kinds = gate_kinds(spec.kind, spec.depth, &mut rng);
    let widths: Vec<usize> = kinds.iter().map(|k| k.width()).collect();
    let regions = place(&widths, spec.input_len, &mut rng)?;
    let location = format!("bench_{}.c:{}", spec.kind.name().replace('-', "_"), 100 + spec.seed % 900);
    let crash_type = CRASH_TYPES[rng.gen_range(0..CRASH_TYPES.len())].to_string();
    let guarded = spec.kind != BenchKind::LengthGate;
    if !guarded {
        let need = 8usize << (spec.depth - 1);
        if need > spec.input_len {
            return Err(BenchError::InputTooSmall {
                have: spec.input_len,
                need,
            });
        }
    }

    let mut text = String::new();
    let mut gates = Vec::new();
    let mut tail = String::new();
    let _ = writeln!(text, "// {} depth {} seed {}", spec.kind, spec.depth, spec.seed);
    let _ = writeln!(text, "fn main() {{");
    if guarded {
        let _ = writeln!(
            text,
            "  block start:\n    br site=hdr (inlen >= {}) -> gate0, reject",
            spec.input_len
        );
        tail.push_str("  block reject:\n    ret 255\n");
    }
    for (i, (&kind, region)) in kinds.iter().zip(&regions).enumerate() {
        let next = if i + 1 == spec.depth {
            "bug".to_string()
        } else {
            format!("gate{}", i + 1)
        };
        let fail = format!("fail{i}");
        let site = format!("g{i}");
        let o = region.start;
        let _ = writeln!(text, "  block gate{i}:");
        let (lhs, rhs, solution, min_len) = match kind {
            GateKind::Magic => {
                let lit: Vec<u8> = (0..4).map(|_| nonzero_byte(&mut rng)).collect();
                let hex: String = lit.iter().map(|b| format!("{b:02X}")).collect();
                let _ = writeln!(
                    text,
                    "    br site={site} memeq(bytes({o}, 4), x\"{hex}\") -> {next}, {fail}"
                );
                (region.clone().collect(), vec![], lit, 0)
            }
            GateKind::MagicInt => {
                let (a, b) = (nonzero_byte(&mut rng), nonzero_byte(&mut rng));
                let v = (a as u16) << 8 | b as u16;
                if rng.gen_bool(0.5) {
                    let _ = writeln!(
                        text,
                        "    br site={site} (in[{o}] | in[{}] << 8 == {v:#x}) -> {next}, {fail}",
                        o + 1
                    );
                    (vec![o, o + 1], vec![], vec![b, a], 0)
                } else {
                    let _ = writeln!(
                        text,
                        "    br site={site} (in[{o}] << 8 | in[{}] == {v:#x}) -> {next}, {fail}",
                        o + 1
                    );
                    (vec![o, o + 1], vec![], vec![a, b], 0)
                }
            }
            GateKind::Checksum => {
                let k: u16 = rng.gen_range(1..=1000);
                let data: Vec<u8> = (0..8).map(|_| rng.gen()).collect();
                let sum = data.iter().map(|&b| b as u16).sum::<u16>() + k;
                let terms: Vec<String> = (o..o + 8).map(|j| format!("in[{j}]")).collect();
                let _ = writeln!(
                    text,
                    "    br site={site} ({} + {k} == in[{}] | in[{}] << 8) -> {next}, {fail}",
                    terms.join(" + "),
                    o + 8,
                    o + 9
                );
                let mut sol = data;
                sol.extend_from_slice(&sum.to_le_bytes());
                ((o..o + 8).collect(), vec![o + 8, o + 9], sol, 0)
            }
            GateKind::Switch => {
                let mut values = BTreeSet::new();
                while values.len() < 4 {
                    values.insert(nonzero_byte(&mut rng));
                }
                let mut values: Vec<u8> = values.into_iter().collect();
                values.shuffle(&mut rng);
                let deeper = rng.gen_range(0..4);
                let cases: Vec<String> = values
                    .iter()
                    .enumerate()
                    .map(|(j, v)| {
                        if j == deeper {
                            format!("{v} -> {next}")
                        } else {
                            format!("{v} -> dead{i}_{j}")
                        }
                    })
                    .collect();
                let _ = writeln!(
                    text,
                    "    switch site={site} (in[{o}]) [{}] default {fail}",
                    cases.join(", ")
                );
                for j in (0..4).filter(|&j| j != deeper) {
                    let _ = writeln!(tail, "  block dead{i}_{j}:\n    ret {}", 100 + j);
                }
                (vec![o], vec![], vec![values[deeper]], 0)
            }
            GateKind::Length => {
                let need = 8usize << i;
                let _ = writeln!(
                    text,
                    "    br site={site} (inlen >= {need}) -> {next}, {fail}"
                );
                (vec![], vec![], vec![], need)
            }
        };
        let _ = writeln!(tail, "  block {fail}:\n    ret {i}");
        gates.push(GateTruth {
            kind,
            site_id: site,
            lhs_offsets: lhs,
            rhs_offsets: rhs,
            solution,
            region: if kind == GateKind::Length { 0..0 } else { region.clone() },
            min_len,
        });
    }
    let _ = writeln!(text, "  block bug:\n    crash \"{location}\" \"{crash_type}\"\n    ret 0");
    text.push_str(&tail);
    text.push_str("}\n");

    let program = parse_program(&text).expect("generated programs are well formed");
    let mut truth = GroundTruth {
        location,
        crash_type,
        gates,
        input_len: spec.input_len,
        witness: Vec::new(),
    };
    truth.witness = truth.partial_witness(spec.depth);
    let lowered = Program::new(program.clone()).expect("generated programs validate");
    let run = execute(&lowered, &truth.witness, None, DEFAULT_STEP_BUDGET);
    assert_eq!(
        run.crash.map(|c| c.location),
        Some(truth.location.clone()),
        "generator witness must reach the crash"
    );
    Ok(Bench {
        spec: *spec,
        text,
        program,
        truth,
    })
}

/// A one-site program comparing two little-endian packings of disjoint
/// input bytes.
#[derive(Debug, Clone)]
pub struct Wiring {
    pub text: String,
    pub program: TargetProgram,
    pub site_id: String,
    pub input_len: usize,
    pub lhs: BTreeSet<usize>,
    pub rhs: BTreeSet<usize>,
}

pub fn generate_wiring(seed: u64) -> Wiring {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7769_7269_6e67);
    let input_len = rng.gen_range(32..=256);
    let nl = rng.gen_range(1..=3);
    let nr = rng.gen_range(1..=3);
    let mut offsets: Vec<usize> = (0..input_len).collect();
    offsets.shuffle(&mut rng);
    let lhs: Vec<usize> = offsets[..nl].to_vec();
    let rhs: Vec<usize> = offsets[nl..nl + nr].to_vec();
    let pack = |offs: &[usize]| {
        offs.iter()
            .enumerate()
            .map(|(i, o)| {
                if i == 0 {
                    format!("in[{o}]")
                } else {
                    format!("in[{o}] << {}", 8 * i)
                }
            })
            .collect::<Vec<_>>()
            .join(" | ")
    };
    let text = format!(
        "fn main() {{\n  block w0:\n    br site=w (({}) == ({})) -> hit, miss\n  block hit:\n    crash \"wiring.c:1\" \"abort\"\n    ret 0\n  block miss:\n    ret 1\n}}\n",
        pack(&lhs),
        pack(&rhs)
    );
    let program = parse_program(&text).expect("wiring programs are well formed");
    Wiring {
        text,
        program,
        site_id: "w".into(),
        input_len,
        lhs: lhs.into_iter().collect(),
        rhs: rhs.into_iter().collect(),
    }
}

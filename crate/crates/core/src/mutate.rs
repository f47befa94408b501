//! Strategic mutation for one focused constraint.
//!
//! The byte map decides the condition class. Constant-versus-input
//! conditions are attacked by copying the constant into the mapped bytes
//! (in several encodings), input-versus-input integer conditions by a
//! descending power-of-two walk over one side's bytes, and anything left by
//! a short random search over the mapped bytes.

use crate::analysis::{dist_key, Analysis};
use crate::exec::{branch_distance, DataCondition, ExecutionTrace, Harness, Value};
use crate::ir::{CmpOp, SiteKind};
use crate::probe::ByteMap;
use crate::program::{Program, SiteIdx};
use rand::Rng;
use serde::Serialize;
use std::collections::BTreeSet;
use std::fmt;

pub const DEFAULT_CHECKSUM_BUDGET: u64 = 256;
pub const DEFAULT_RANDOM_BUDGET: u64 = 100;
/// Upper bound on overwrites per random mutant.
pub const MAX_HAVOC: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Lhs,
    Rhs,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConditionClass {
    FixedToFixed,
    FixedToMapped { fixed: Side, value: Value },
    MappedToMapped,
}

/// An operand is mapped iff probing found at least one offset feeding it.
/// Switch scrutinees have no right operand, so a mapped scrutinee counts as
/// fixed-to-mapped against its case constants (`value` is then the observed
/// scrutinee).
pub fn classify(map: &ByteMap, obs: &DataCondition) -> ConditionClass {
    match (map.lhs.is_empty(), map.rhs.is_empty(), &obs.rhs) {
        (true, true, _) | (true, _, None) => ConditionClass::FixedToFixed,
        (false, true, Some(r)) => ConditionClass::FixedToMapped {
            fixed: Side::Rhs,
            value: r.clone(),
        },
        (false, _, None) => ConditionClass::FixedToMapped {
            fixed: Side::Rhs,
            value: obs.lhs.clone(),
        },
        (true, false, Some(_)) => ConditionClass::FixedToMapped {
            fixed: Side::Lhs,
            value: obs.lhs.clone(),
        },
        (false, false, Some(_)) => ConditionClass::MappedToMapped,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    Copy,
    BinaryEnum,
    Random,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Copy => "copy",
            Strategy::BinaryEnum => "binary-enum",
            Strategy::Random => "random",
        })
    }
}

/// What solving a constraint means: leave `site` by an edge strictly nearer
/// to the target than the edge the seed took.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Goal {
    pub site: SiteIdx,
    pub taken: u32,
    pub successors: Vec<Option<u32>>,
}

impl Goal {
    pub fn new(analysis: &Analysis, site: SiteIdx, taken: u32) -> Goal {
        Goal {
            site,
            taken,
            successors: analysis.successor_distances(site).to_vec(),
        }
    }

    fn edge_key(&self, edge: u32) -> u64 {
        dist_key(self.successors.get(edge as usize).copied().flatten())
    }

    /// Edges that lead strictly nearer than the taken one.
    pub fn better_edges(&self) -> Vec<u32> {
        let taken = self.edge_key(self.taken);
        (0..self.successors.len() as u32)
            .filter(|&e| e != self.taken && self.edge_key(e) < taken)
            .collect()
    }

    /// Judged on the first dynamic hit of the site; missing the site
    /// altogether does not count.
    pub fn satisfied_by(&self, trace: &ExecutionTrace) -> bool {
        match trace.first_edge(self.site) {
            Some(e) => e != self.taken && self.edge_key(e) < self.edge_key(self.taken),
            None => false,
        }
    }
}

/// One equality per switch case whose target is nearer than the taken edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DerivedCase {
    pub edge: u32,
    pub value: i64,
}

/// Splits a switch into per-case equality constraints, nearest case first.
/// The default edge is never materialized.
pub fn split_switch(p: &Program, goal: &Goal) -> Vec<DerivedCase> {
    let desc = p.site_desc(goal.site);
    let better: BTreeSet<u32> = goal.better_edges().into_iter().collect();
    let mut out: Vec<DerivedCase> = desc
        .cases
        .iter()
        .enumerate()
        .filter(|(i, _)| better.contains(&(*i as u32)))
        .map(|(i, v)| DerivedCase {
            edge: i as u32,
            value: *v,
        })
        .collect();
    out.sort_by_key(|c| (goal.edge_key(c.edge), c.edge));
    out
}

/// Every case of a switch as an equality, regardless of distance.
pub fn all_cases(p: &Program, site: SiteIdx) -> Vec<DerivedCase> {
    p.site_desc(site)
        .cases
        .iter()
        .enumerate()
        .map(|(i, v)| DerivedCase {
            edge: i as u32,
            value: *v,
        })
        .collect()
}

/// Writes `bytes` over `offsets` pairwise, in offset order.
pub fn write_at(seed: &[u8], offsets: &[usize], bytes: &[u8]) -> Vec<u8> {
    let mut out = seed.to_vec();
    for (&o, &b) in offsets.iter().zip(bytes) {
        out[o] = b;
    }
    out
}

fn fit_digits(digits: &str, k: usize) -> Vec<u8> {
    let d = digits.as_bytes();
    if d.len() >= k {
        d[d.len() - k..].to_vec()
    } else {
        let mut v = vec![b'0'; k - d.len()];
        v.extend_from_slice(d);
        v
    }
}

/// The byte patterns tried when copying an integer constant onto `k`
/// mapped bytes: little-endian, big-endian, decimal text and hex text.
pub fn int_encodings(value: i64, k: usize) -> Vec<Vec<u8>> {
    let le = value.to_le_bytes();
    let mut little: Vec<u8> = le.iter().copied().take(k).collect();
    little.resize(k, 0);
    let mut big = little.clone();
    big.reverse();
    let mut out = vec![
        little,
        big,
        fit_digits(&value.to_string(), k),
        fit_digits(&format!("{:x}", value as u64), k),
    ];
    let mut seen = BTreeSet::new();
    out.retain(|v| seen.insert(v.clone()));
    out
}

/// Candidate seeds for a constant-versus-input condition. Every candidate
/// differs from `seed` only at `offsets`.
pub fn magic_candidates(seed: &[u8], offsets: &[usize], value: &Value) -> Vec<Vec<u8>> {
    if offsets.is_empty() {
        return Vec::new();
    }
    let patterns = match value {
        Value::Bytes(b) => vec![b.clone()],
        Value::Int(v) => int_encodings(*v, offsets.len()),
    };
    let mut out: Vec<Vec<u8>> = patterns
        .iter()
        .map(|p| write_at(seed, offsets, p))
        .filter(|c| c != seed)
        .collect();
    let mut seen = BTreeSet::new();
    out.retain(|v| seen.insert(v.clone()));
    out
}

/// Single-point mutants for every offset no byte map has claimed.
pub fn mutate_missed<'a>(
    seed: &'a [u8],
    covered: &'a BTreeSet<usize>,
) -> impl Iterator<Item = (usize, Vec<u8>)> + 'a {
    (0..seed.len())
        .filter(move |o| !covered.contains(o))
        .flat_map(move |o| {
            let b = seed[o];
            [b ^ 0xFF, b.wrapping_add(1), b.wrapping_sub(1), 0x00, 0xFF]
                .into_iter()
                .map(move |v| {
                    let mut m = seed.to_vec();
                    m[o] = v;
                    (o, m)
                })
        })
}

/// Havoc mutant into `out`: 1 to 32 single-byte overwrites, each changing
/// the byte it hits, length preserved.
pub fn random_mutate_into<R: Rng>(seed: &[u8], out: &mut Vec<u8>, rng: &mut R) {
    out.clear();
    out.extend_from_slice(seed);
    if seed.is_empty() {
        return;
    }
    let n = rng.gen_range(1..=MAX_HAVOC);
    for _ in 0..n {
        let o = rng.gen_range(0..seed.len());
        out[o] ^= rng.gen_range(1..=0xFFu8);
    }
    if out.as_slice() == seed {
        out[0] ^= 0xFF;
    }
}

pub fn random_mutate<R: Rng>(seed: &[u8], rng: &mut R) -> Vec<u8> {
    let mut out = Vec::with_capacity(seed.len());
    random_mutate_into(seed, &mut out, rng);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SolveConfig {
    /// Execution cap for one power-of-two walk.
    pub checksum_budget: u64,
    /// Executions for the final random search.
    pub random_budget: u64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            checksum_budget: DEFAULT_CHECKSUM_BUDGET,
            random_budget: DEFAULT_RANDOM_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Solution {
    pub input: Vec<u8>,
    pub trace: ExecutionTrace,
    pub strategy: Strategy,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SolveReport {
    pub class: ConditionClass,
    pub solution: Option<Solution>,
    pub execs: u64,
    /// Power-of-two rounds spent across all walks.
    pub rounds: u32,
}

/// The harness refused to run further inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("execution budget exhausted")]
pub struct Stopped;

/// Distance of an observation from the wanted outcome; 0 when reached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Compare { op: CmpOp, want: bool },
    Case(i64),
}

impl Objective {
    pub fn measure(self, obs: &DataCondition) -> u128 {
        match self {
            Objective::Compare { op, want } => {
                let r = obs.rhs.as_ref().map_or(0, Value::as_int);
                branch_distance(op, want, obs.lhs.as_int(), r)
            }
            Objective::Case(c) => branch_distance(CmpOp::Eq, true, obs.lhs.as_int(), c),
        }
    }
}

struct Solver<'a, H: Harness> {
    h: &'a mut H,
    goal: &'a Goal,
    execs: u64,
    rounds: u32,
}

impl<H: Harness> Solver<'_, H> {
    fn run(&mut self, input: &[u8]) -> Result<ExecutionTrace, Stopped> {
        self.execs += 1;
        self.h.run(input, Some(self.goal.site)).ok_or(Stopped)
    }

    fn try_all(&mut self, cands: Vec<Vec<u8>>, strategy: Strategy) -> Result<Option<Solution>, Stopped> {
        for input in cands {
            let trace = self.run(&input)?;
            if self.goal.satisfied_by(&trace) {
                return Ok(Some(Solution {
                    input,
                    trace,
                    strategy,
                }));
            }
        }
        Ok(None)
    }

    /// Treats the bytes at `offsets` as one little-endian integer and walks
    /// it by ±2^i for i from n-1 down to 0, keeping a step only when the
    /// objective strictly drops.
    fn binary_enum(
        &mut self,
        seed: &[u8],
        offsets: &[usize],
        base: &DataCondition,
        objective: Objective,
        budget: u64,
    ) -> Result<Option<Solution>, Stopped> {
        let offsets = &offsets[..offsets.len().min(8)];
        if offsets.is_empty() {
            return Ok(None);
        }
        let n = 8 * offsets.len() as u32;
        let mask = if n == 64 { u64::MAX } else { (1u64 << n) - 1 };
        let mut x = offsets
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &o)| acc | (seed[o] as u64) << (8 * i));
        let mut current = seed.to_vec();
        let mut best = objective.measure(base);
        let start = self.execs;
        for i in (0..n).rev() {
            if best == 0 {
                break;
            }
            self.rounds += 1;
            let step = 1u64 << i;
            for next in [x.wrapping_add(step) & mask, x.wrapping_sub(step) & mask] {
                if self.execs - start >= budget {
                    return Ok(None);
                }
                let input = write_at(&current, offsets, &next.to_le_bytes());
                let trace = self.run(&input)?;
                if self.goal.satisfied_by(&trace) {
                    return Ok(Some(Solution {
                        input,
                        trace,
                        strategy: Strategy::BinaryEnum,
                    }));
                }
                if let Some(obs) = trace.first_observation() {
                    let d = objective.measure(obs);
                    if d < best {
                        best = d;
                        x = next;
                        current = input;
                        break;
                    }
                }
            }
        }
        Ok(None)
    }

    fn random<R: Rng>(&mut self, seed: &[u8], offsets: &[usize], budget: u64, rng: &mut R) -> Result<Option<Solution>, Stopped> {
        if offsets.is_empty() {
            return Ok(None);
        }
        for _ in 0..budget {
            let mut input = seed.to_vec();
            for &o in offsets {
                if rng.gen_bool(0.5) {
                    input[o] = rng.gen();
                }
            }
            let o = offsets[rng.gen_range(0..offsets.len())];
            input[o] ^= rng.gen_range(1..=0xFFu8);
            let trace = self.run(&input)?;
            if self.goal.satisfied_by(&trace) {
                return Ok(Some(Solution {
                    input,
                    trace,
                    strategy: Strategy::Random,
                }));
            }
        }
        Ok(None)
    }
}

/// Side to walk when both operands depend on the input: prefer a side whose
/// value is exactly its mapped bytes read little-endian, then the side with
/// fewer mapped bytes; ties go to the left.
pub fn mutable_side(seed: &[u8], map: &ByteMap, obs: &DataCondition) -> Side {
    let identity = |offs: &BTreeSet<usize>, v: &Value| {
        if offs.is_empty() || offs.len() > 8 {
            return false;
        }
        let packed = offs
            .iter()
            .enumerate()
            .fold(0u64, |acc, (i, &o)| acc | (seed[o] as u64) << (8 * i));
        v.as_int() as u64 == packed
    };
    let rhs_val = obs.rhs.clone().unwrap_or(Value::Int(0));
    let (li, ri) = (identity(&map.lhs, &obs.lhs), identity(&map.rhs, &rhs_val));
    match (li, ri) {
        (true, false) => Side::Lhs,
        (false, true) => Side::Rhs,
        _ if map.rhs.len() < map.lhs.len() => Side::Rhs,
        _ => Side::Lhs,
    }
}

/// Tries to move `goal.site` onto a nearer edge by mutating the bytes in
/// `map`. `base` is the site's first observation on `seed`.
#[allow(clippy::too_many_arguments)]
pub fn solve<H: Harness, R: Rng>(
    h: &mut H,
    p: &Program,
    seed: &[u8],
    map: &ByteMap,
    base: &DataCondition,
    goal: &Goal,
    cfg: &SolveConfig,
    rng: &mut R,
) -> Result<SolveReport, Stopped> {
    let class = classify(map, base);
    let kind = p.site_desc(goal.site).kind;
    let mut s = Solver {
        h,
        goal,
        execs: 0,
        rounds: 0,
    };
    let lhs: Vec<usize> = map.lhs.iter().copied().collect();
    let rhs: Vec<usize> = map.rhs.iter().copied().collect();
    let mut all: Vec<usize> = map.covered().into_iter().collect();
    all.sort_unstable();

    let solution = match (&class, kind) {
        (ConditionClass::FixedToFixed, _) => None,
        (ConditionClass::FixedToMapped { .. }, SiteKind::Switch) => {
            let mut found = None;
            for case in split_switch(p, goal) {
                let cands = magic_candidates(seed, &lhs, &Value::Int(case.value));
                found = s.try_all(cands, Strategy::Copy)?;
                if found.is_none() {
                    found = s.binary_enum(seed, &lhs, base, Objective::Case(case.value), cfg.checksum_budget)?;
                }
                if found.is_some() {
                    break;
                }
            }
            found
        }
        (ConditionClass::FixedToMapped { fixed, value }, _) => {
            let mapped = match fixed {
                Side::Rhs => &lhs,
                Side::Lhs => &rhs,
            };
            let mut cands = magic_candidates(seed, mapped, value);
            if let (SiteKind::IntCompare(op), Value::Int(v)) = (kind, value) {
                // Strict orderings want a neighbour of the constant.
                if !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                    for w in [v.wrapping_add(1), v.wrapping_sub(1)] {
                        cands.extend(magic_candidates(seed, mapped, &Value::Int(w)));
                    }
                }
            }
            let mut found = s.try_all(cands, Strategy::Copy)?;
            if found.is_none() {
                if let SiteKind::IntCompare(op) = kind {
                    let want = goal.better_edges().contains(&0);
                    found = s.binary_enum(
                        seed,
                        mapped,
                        base,
                        Objective::Compare { op, want },
                        cfg.checksum_budget,
                    )?;
                }
            }
            found
        }
        (ConditionClass::MappedToMapped, SiteKind::IntCompare(op)) => {
            let want = goal.better_edges().contains(&0);
            let offsets = match mutable_side(seed, map, base) {
                Side::Lhs => &lhs,
                Side::Rhs => &rhs,
            };
            s.binary_enum(
                seed,
                offsets,
                base,
                Objective::Compare { op, want },
                cfg.checksum_budget,
            )?
        }
        (ConditionClass::MappedToMapped, _) => {
            // Byte strings: make one side a copy of the other's value.
            let rhs_val = base.rhs.clone().unwrap_or(Value::Bytes(Vec::new()));
            let side = mutable_side(seed, map, base);
            let mut cands = Vec::new();
            for side in [side, if side == Side::Lhs { Side::Rhs } else { Side::Lhs }] {
                let (offs, val) = match side {
                    Side::Lhs => (&lhs, &rhs_val),
                    Side::Rhs => (&rhs, &base.lhs),
                };
                cands.extend(magic_candidates(seed, offs, val));
            }
            s.try_all(cands, Strategy::Copy)?
        }
    };
    let solution = match solution {
        Some(sol) => Some(sol),
        None if class != ConditionClass::FixedToFixed => s.random(seed, &all, cfg.random_budget, rng)?,
        None => None,
    };
    Ok(SolveReport {
        class,
        solution,
        execs: s.execs,
        rounds: s.rounds,
    })
}

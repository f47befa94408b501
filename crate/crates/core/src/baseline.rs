//! Undirected reference fuzzers: blind havoc and coverage-guided havoc.

use crate::campaign::{CrashEntry, StopReason};
use crate::exec::{ExecutionTrace, Executor, DEFAULT_STEP_BUDGET};
use crate::mutate::random_mutate_into;
use crate::program::Program;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    /// Havoc over the initial seeds, nothing kept.
    Random,
    /// Havoc over a corpus that grows with every new block covered.
    Coverage,
}

impl BaselineKind {
    pub fn name(self) -> &'static str {
        match self {
            BaselineKind::Random => "random",
            BaselineKind::Coverage => "coverage",
        }
    }
}

impl fmt::Display for BaselineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BaselineError {
    #[error("unknown baseline fuzzer `{0}` (expected random or coverage)")]
    UnknownKind(String),
    #[error("at least one initial seed is required")]
    NoSeeds,
}

impl FromStr for BaselineKind {
    type Err = BaselineError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "random" => Ok(BaselineKind::Random),
            "coverage" => Ok(BaselineKind::Coverage),
            _ => Err(BaselineError::UnknownKind(s.to_string())),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BaselineConfig {
    /// Crash location that ends the run when found.
    pub location: String,
    pub max_execs: u64,
    pub wall_timeout: Option<Duration>,
    pub rng_seed: u64,
    pub step_budget: u64,
}

impl BaselineConfig {
    pub fn new(location: impl Into<String>) -> Self {
        BaselineConfig {
            location: location.into(),
            max_execs: 1_000_000,
            wall_timeout: None,
            rng_seed: 0,
            step_budget: DEFAULT_STEP_BUDGET,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BaselineReport {
    pub fuzzer: BaselineKind,
    pub location: String,
    pub rng_seed: u64,
    pub stop_reason: StopReason,
    pub total_execs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execs_to_target: Option<u64>,
    pub walltime_ms: u64,
    pub corpus_len: usize,
    pub crashes: Vec<CrashEntry>,
}

impl BaselineReport {
    pub fn target_reached(&self) -> bool {
        self.execs_to_target.is_some()
    }
}

pub fn run_baseline(
    kind: BaselineKind,
    p: &Program,
    seeds: &[Vec<u8>],
    cfg: &BaselineConfig,
) -> Result<BaselineReport, BaselineError> {
    if seeds.is_empty() {
        return Err(BaselineError::NoSeeds);
    }
    let start = Instant::now();
    let mut ex = Executor::new(p).with_step_budget(cfg.step_budget);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut corpus: Vec<Vec<u8>> = seeds.to_vec();
    let mut covered = vec![false; p.block_count()];
    let mut crashes: Vec<CrashEntry> = Vec::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut trace = ExecutionTrace::default();
    let mut buf = Vec::new();
    let mut execs = 0u64;
    let mut target = None;
    let mut next = 0usize;
    let mut stop = StopReason::ExecBudget;

    // Initial seeds run as-is first.
    let mut pending: Vec<Vec<u8>> = seeds.to_vec();
    pending.reverse();
    while execs < cfg.max_execs {
        if execs & 0x3FF == 0 {
            if let Some(t) = cfg.wall_timeout {
                if start.elapsed() >= t {
                    stop = StopReason::WallTimeout;
                    break;
                }
            }
        }
        let from_corpus = match pending.pop() {
            Some(s) => {
                buf = s;
                None
            }
            None => {
                let i = next % corpus.len();
                next = next.wrapping_add(1);
                random_mutate_into(&corpus[i], &mut buf, &mut rng);
                Some(i)
            }
        };
        ex.run_into(&buf, None, &mut trace);
        execs += 1;
        if kind == BaselineKind::Coverage {
            let mut fresh = false;
            for b in &trace.path {
                fresh |= !std::mem::replace(&mut covered[b.index()], true);
            }
            if fresh && from_corpus.is_some() {
                corpus.push(buf.clone());
            }
        }
        if let Some(c) = trace.crash.take() {
            if seen.insert((c.location.clone(), c.crash_type.clone())) {
                let hit = c.location == cfg.location;
                crashes.push(CrashEntry {
                    location: c.location,
                    crash_type: c.crash_type,
                    input: buf.clone(),
                    execs_at_discovery: execs,
                    walltime_ms: None,
                });
                if hit {
                    target = Some(execs);
                    stop = StopReason::TargetReached;
                    break;
                }
            }
        }
    }
    Ok(BaselineReport {
        fuzzer: kind,
        location: cfg.location.clone(),
        rng_seed: cfg.rng_seed,
        stop_reason: stop,
        total_execs: execs,
        execs_to_target: target,
        walltime_ms: start.elapsed().as_millis() as u64,
        corpus_len: corpus.len(),
        crashes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gate(cond: &str) -> Program {
        Program::parse(&format!(
            "fn main() {{ block A: br site=S {cond} -> B, C block B: crash \"t.c:1\" \"abort\" ret 0 block C: ret 0 }}"
        ))
        .unwrap()
    }

    #[test]
    fn random_finds_a_one_byte_gate() {
        let p = gate("(in[3] == 0x41)");
        let mut cfg = BaselineConfig::new("t.c:1");
        cfg.max_execs = 100_000;
        let r = run_baseline(BaselineKind::Random, &p, &[vec![0; 8]], &cfg).unwrap();
        assert!(r.target_reached());
        assert_eq!(r.stop_reason, StopReason::TargetReached);
        assert_eq!(r.crashes[0].input[3], 0x41);
    }

    #[test]
    fn random_misses_a_magic_word_and_is_deterministic() {
        let p = gate("memeq(bytes(0, 4), x\"DEADBEEF\")");
        let mut cfg = BaselineConfig::new("t.c:1");
        cfg.max_execs = 20_000;
        let a = run_baseline(BaselineKind::Random, &p, &[vec![0; 16]], &cfg).unwrap();
        assert!(!a.target_reached());
        assert_eq!(a.total_execs, 20_000);
        assert_eq!(a.stop_reason, StopReason::ExecBudget);
        let b = run_baseline(BaselineKind::Random, &p, &[vec![0; 16]], &cfg).unwrap();
        assert_eq!(a.total_execs, b.total_execs);
    }

    #[test]
    fn coverage_keeps_progress() {
        let p = Program::parse(
            "fn main() { block A: br site=S1 (in[0] == 7) -> B, X
               block B: br site=S2 (in[1] == 9) -> C, X
               block C: crash \"t.c:2\" \"abort\" ret 0 block X: ret 0 }",
        )
        .unwrap();
        let mut cfg = BaselineConfig::new("t.c:2");
        cfg.max_execs = 500_000;
        let r = run_baseline(BaselineKind::Coverage, &p, &[vec![0; 2]], &cfg).unwrap();
        assert!(r.target_reached());
        assert!(r.corpus_len >= 2);
    }

    #[test]
    fn needs_seeds() {
        let p = gate("(in[0] == 1)");
        let cfg = BaselineConfig::new("t.c:1");
        assert_eq!(
            run_baseline(BaselineKind::Random, &p, &[], &cfg).unwrap_err(),
            BaselineError::NoSeeds
        );
        assert_eq!("afl".parse::<BaselineKind>().unwrap_err(), BaselineError::UnknownKind("afl".into()));
    }
}

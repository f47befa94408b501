//! The two-loop driver: an outer loop over prioritized seeds and an inner
//! loop that focuses, maps and solves the nearest open constraints of the
//! current seed, leaving early as soon as one is satisfied.

use crate::analysis::{Analysis, AnalysisError};
use crate::exec::{Coverage, CrashRecord, ExecutionTrace, Executor, Harness, DEFAULT_STEP_BUDGET};
use crate::length::{detect_length, DEFAULT_MAX_LEN, MAX_LEN_CAP};
use crate::mutate::{mutate_missed, random_mutate, solve, Goal, SolveConfig, Stopped};
use crate::probe::{map_bytes, ProbeConfig, ProbeError};
use crate::program::{Program, SiteIdx};
use crate::schedule::{filter_constraints, offer_seed, policy_cmp, SeedEntry, SeedPolicy, SeedQueue};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};
use std::collections::{BTreeSet, HashSet, VecDeque};
use std::fmt;
use std::time::{Duration, Instant};

pub const DEFAULT_STAGNATION: u64 = 500;
pub const DEFAULT_RANDOM_BATCH: u64 = 256;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CampaignConfig {
    pub location: String,
    pub policy: SeedPolicy,
    pub max_execs: u64,
    #[serde(skip)]
    pub wall_timeout: Option<Duration>,
    pub max_len: usize,
    #[serde(skip)]
    pub probe: ProbeConfig,
    #[serde(skip)]
    pub solve: SolveConfig,
    /// Constraint attempts without a distance improvement before a batch of
    /// random mutants is tried.
    pub stagnation: u64,
    pub random_batch: u64,
    pub rng_seed: u64,
    pub step_budget: u64,
    /// Stop as soon as the target location crashes.
    pub stop_at_target: bool,
    /// Forget attempted constraints whenever a new seed is popped.
    pub retry_attempted: bool,
    /// Include wall-clock figures in the report (makes it nondeterministic).
    pub record_timing: bool,
}

impl CampaignConfig {
    pub fn new(location: impl Into<String>) -> CampaignConfig {
        CampaignConfig {
            location: location.into(),
            policy: SeedPolicy::default(),
            max_execs: 1_000_000,
            wall_timeout: None,
            max_len: DEFAULT_MAX_LEN,
            probe: ProbeConfig::default(),
            solve: SolveConfig::default(),
            stagnation: DEFAULT_STAGNATION,
            random_batch: DEFAULT_RANDOM_BATCH,
            rng_seed: 0,
            step_budget: DEFAULT_STEP_BUDGET,
            stop_at_target: true,
            retry_attempted: false,
            record_timing: false,
        }
    }

    fn check(&self) -> Result<(), CampaignError> {
        let bad = |m: &str| Err(CampaignError::InvalidConfig(m.to_string()));
        if self.max_execs == 0 {
            return bad("max_execs must be at least 1");
        }
        if self.max_len == 0 || self.max_len > MAX_LEN_CAP {
            return bad("max_len must be between 1 and 4 MiB");
        }
        if self.probe.segments < 2 || self.probe.leaf_len == 0 {
            return bad("probe segments must be >= 2 and leaf length >= 1");
        }
        if self.step_budget == 0 {
            return bad("step budget must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Setup(#[from] AnalysisError),
    #[error("at least one initial seed is required")]
    NoSeeds,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Baseline,
    Length,
    Probe,
    Solve,
    Missed,
    Random,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Baseline => "baseline",
            Phase::Length => "length",
            Phase::Probe => "probe",
            Phase::Solve => "solve",
            Phase::Missed => "missed",
            Phase::Random => "random",
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct PhaseCounts {
    pub baseline: u64,
    pub length: u64,
    pub probe: u64,
    pub solve: u64,
    pub missed: u64,
    pub random: u64,
}

impl PhaseCounts {
    fn bump(&mut self, p: Phase) {
        *match p {
            Phase::Baseline => &mut self.baseline,
            Phase::Length => &mut self.length,
            Phase::Probe => &mut self.probe,
            Phase::Solve => &mut self.solve,
            Phase::Missed => &mut self.missed,
            Phase::Random => &mut self.random,
        } += 1;
    }

    pub fn total(&self) -> u64 {
        self.baseline + self.length + self.probe + self.solve + self.missed + self.random
    }
}

/// One row of the event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Event {
    pub exec: u64,
    pub phase: Phase,
    pub site_id: String,
    #[serde(rename = "D_best")]
    pub d_best: String,
    #[serde(rename = "C_best")]
    pub c_best: String,
    pub event: String,
}

fn hex<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&to_hex(bytes))
}

pub fn to_hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrashEntry {
    pub location: String,
    pub crash_type: String,
    #[serde(serialize_with = "hex")]
    pub input: Vec<u8>,
    pub execs_at_discovery: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walltime_ms: Option<u64>,
}

impl CrashEntry {
    pub fn record(&self) -> CrashRecord {
        CrashRecord {
            location: self.location.clone(),
            crash_type: self.crash_type.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct BestSeed {
    #[serde(serialize_with = "hex")]
    pub input: Vec<u8>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub distance: Option<u32>,
    pub coverage_hit: u32,
    pub coverage_total: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum StopReason {
    TargetReached,
    ExecBudget,
    WallTimeout,
    QueueExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CampaignReport {
    pub location: String,
    pub policy: SeedPolicy,
    pub rng_seed: u64,
    pub stop_reason: StopReason,
    pub total_execs: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub execs_to_target: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub walltime_ms: Option<u64>,
    pub constraints_attempted: u64,
    pub constraints_solved: u64,
    pub phase_execs: PhaseCounts,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub best_seed: Option<BestSeed>,
    pub crashes: Vec<CrashEntry>,
    #[serde(skip)]
    pub events: Vec<Event>,
}

impl CampaignReport {
    pub fn target_reached(&self) -> bool {
        self.execs_to_target.is_some()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report is always representable as TOML")
    }

    pub fn write_events<W: std::io::Write>(&self, w: W) -> Result<(), csv::Error> {
        write_events(&self.events, w)
    }
}

pub fn write_events<W: std::io::Write>(events: &[Event], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    if events.is_empty() {
        out.write_record(["exec", "phase", "site_id", "D_best", "C_best", "event"])?;
    }
    for e in events {
        out.serialize(e)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SatisfactionJudgment {
    pub satisfied: bool,
    /// Edge taken at the site's first hit in the new run, if it was hit.
    pub new_edge: Option<u32>,
}

/// A constraint is satisfied when the new run leaves the site by a
/// different edge whose target is strictly nearer than the old one.
pub fn judge_satisfaction(
    before: &ExecutionTrace,
    after: &ExecutionTrace,
    site: SiteIdx,
    analysis: &Analysis,
) -> SatisfactionJudgment {
    let new_edge = after.first_edge(site);
    let satisfied = match before.first_edge(site) {
        Some(old) => Goal::new(analysis, site, old).satisfied_by(after),
        None => false,
    };
    SatisfactionJudgment {
        satisfied,
        new_edge,
    }
}

/// Executes inputs for the driver: counts executions per phase, keeps the
/// crash list, tracks the best seed, and feeds the seed queue according to
/// the phase that produced the input.
struct Engine<'a> {
    program: &'a Program,
    analysis: &'a Analysis,
    cfg: &'a CampaignConfig,
    ex: Executor<'a>,
    phase: Phase,
    counts: PhaseCounts,
    execs: u64,
    start: Instant,
    stop: Option<StopReason>,
    execs_to_target: Option<u64>,
    crashes: Vec<CrashEntry>,
    crash_keys: HashSet<(String, String)>,
    seen_edges: HashSet<(SiteIdx, u32)>,
    queue: SeedQueue,
    current: Option<SeedEntry>,
    goal: Option<Goal>,
    best: Option<SeedEntry>,
    events: Vec<Event>,
}

impl<'a> Engine<'a> {
    fn log(&mut self, site: Option<SiteIdx>, event: String) {
        let (d, c) = match &self.best {
            Some(b) => (
                b.distance.map_or_else(|| "inf".to_string(), |d| d.to_string()),
                format!("{:.6}", b.coverage.fraction()),
            ),
            None => ("inf".to_string(), "0.000000".to_string()),
        };
        self.events.push(Event {
            exec: self.execs,
            phase: self.phase,
            site_id: site.map_or_else(String::new, |s| self.program.site_name(s).to_string()),
            d_best: d,
            c_best: c,
            event,
        });
    }

    fn out_of_time(&self) -> bool {
        self.cfg
            .wall_timeout
            .is_some_and(|t| self.start.elapsed() >= t)
    }

    fn note_best(&mut self, entry: &SeedEntry) -> bool {
        let better = match &self.best {
            None => true,
            Some(b) => policy_cmp(entry, b, SeedPolicy::DistanceInvCoverage).is_lt(),
        };
        if better {
            self.best = Some(entry.clone());
        }
        better
    }
}

impl Harness for Engine<'_> {
    fn program(&self) -> &Program {
        self.program
    }

    fn run(&mut self, input: &[u8], focus: Option<SiteIdx>) -> Option<ExecutionTrace> {
        if self.stop.is_some() {
            return None;
        }
        if self.execs >= self.cfg.max_execs {
            self.stop = Some(StopReason::ExecBudget);
            return None;
        }
        if self.out_of_time() {
            self.stop = Some(StopReason::WallTimeout);
            return None;
        }
        self.execs += 1;
        self.counts.bump(self.phase);
        let trace = self.ex.run(input, focus);

        let mut new_edge = false;
        for h in &trace.sites_hit {
            new_edge |= self.seen_edges.insert((h.site, h.edge));
        }

        if let Some(c) = &trace.crash {
            let key = (c.location.clone(), c.crash_type.clone());
            if self.crash_keys.insert(key) {
                let walltime_ms = self
                    .cfg
                    .record_timing
                    .then(|| self.start.elapsed().as_millis() as u64);
                self.crashes.push(CrashEntry {
                    location: c.location.clone(),
                    crash_type: c.crash_type.clone(),
                    input: input.to_vec(),
                    execs_at_discovery: self.execs,
                    walltime_ms,
                });
                let msg = format!("crash {} {}", c.location, c.crash_type);
                self.log(None, msg);
            }
            if c.location == self.cfg.location && self.execs_to_target.is_none() {
                self.execs_to_target = Some(self.execs);
                if self.cfg.stop_at_target {
                    self.stop = Some(StopReason::TargetReached);
                }
            }
        }

        let entry = SeedEntry::from_trace(input.to_vec(), &trace, self.analysis);
        if self.note_best(&entry) {
            let msg = format!("best len={}", input.len());
            self.log(None, msg);
        }
        match self.phase {
            Phase::Solve => {
                let solves = self.goal.as_ref().is_some_and(|g| g.satisfied_by(&trace));
                if let (false, Some(cur)) = (solves, &self.current) {
                    if offer_seed(&mut self.queue, entry, cur) {
                        self.log(None, "offer-accepted".into());
                    }
                }
            }
            Phase::Missed => {
                if new_edge {
                    self.queue.push(entry);
                    self.log(None, "new-edge".into());
                } else if let Some(cur) = &self.current {
                    if offer_seed(&mut self.queue, entry, cur) {
                        self.log(None, "offer-accepted".into());
                    }
                }
            }
            Phase::Random => {
                if new_edge {
                    self.queue.push(entry);
                    self.log(None, "new-edge".into());
                }
            }
            Phase::Baseline | Phase::Length | Phase::Probe => {}
        }
        Some(trace)
    }
}

/// Runs one campaign toward `cfg.location`.
pub fn run_campaign(
    p: &Program,
    seeds: &[Vec<u8>],
    cfg: &CampaignConfig,
) -> Result<CampaignReport, CampaignError> {
    cfg.check()?;
    let analysis = Analysis::new(p, &cfg.location)?;
    if seeds.is_empty() {
        return Err(CampaignError::NoSeeds);
    }
    Ok(Driver::new(p, &analysis, cfg).run(seeds))
}

struct Driver<'a> {
    engine: Engine<'a>,
    rng: ChaCha8Rng,
    attempted: BTreeSet<(SiteIdx, u32)>,
    covered: BTreeSet<usize>,
    missed_done: HashSet<Vec<u8>>,
    stagnation: u64,
    attempts: u64,
    solved: u64,
}

impl<'a> Driver<'a> {
    fn new(p: &'a Program, analysis: &'a Analysis, cfg: &'a CampaignConfig) -> Self {
        Driver {
            engine: Engine {
                program: p,
                analysis,
                cfg,
                ex: Executor::new(p).with_step_budget(cfg.step_budget),
                phase: Phase::Baseline,
                counts: PhaseCounts::default(),
                execs: 0,
                start: Instant::now(),
                stop: None,
                execs_to_target: None,
                crashes: Vec::new(),
                crash_keys: HashSet::new(),
                seen_edges: HashSet::new(),
                queue: SeedQueue::new(cfg.policy),
                current: None,
                goal: None,
                best: None,
                events: Vec::new(),
            },
            rng: ChaCha8Rng::seed_from_u64(cfg.rng_seed),
            attempted: BTreeSet::new(),
            covered: BTreeSet::new(),
            missed_done: HashSet::new(),
            stagnation: 0,
            attempts: 0,
            solved: 0,
        }
    }

    fn run(mut self, seeds: &[Vec<u8>]) -> CampaignReport {
        let _ = self.main_loop(seeds);
        let e = &mut self.engine;
        let stop = e.stop.unwrap_or(StopReason::QueueExhausted);
        e.phase = Phase::Baseline;
        e.log(None, format!("done {}", stop_name(stop)));
        let walltime_ms = e
            .cfg
            .record_timing
            .then(|| e.start.elapsed().as_millis() as u64);
        CampaignReport {
            location: e.cfg.location.clone(),
            policy: e.cfg.policy,
            rng_seed: e.cfg.rng_seed,
            stop_reason: stop,
            total_execs: e.execs,
            execs_to_target: e.execs_to_target,
            walltime_ms,
            constraints_attempted: self.attempts,
            constraints_solved: self.solved,
            phase_execs: e.counts,
            best_seed: e.best.as_ref().map(|b| BestSeed {
                input: b.bytes.clone(),
                distance: b.distance,
                coverage_hit: b.coverage.hit,
                coverage_total: b.coverage.total,
            }),
            crashes: std::mem::take(&mut e.crashes),
            events: std::mem::take(&mut e.events),
        }
    }

    fn main_loop(&mut self, seeds: &[Vec<u8>]) -> Result<(), Stopped> {
        let analysis = self.engine.analysis;
        let program = self.engine.program;
        let cfg = self.engine.cfg;

        self.engine.phase = Phase::Baseline;
        for s in seeds {
            let t = self.engine.run(s, None).ok_or(Stopped)?;
            let entry = SeedEntry::from_trace(s.clone(), &t, analysis);
            self.engine.queue.push(entry);
        }

        while let Some(seed) = self.engine.queue.pop() {
            self.engine.phase = Phase::Length;
            let d = seed.distance.map_or_else(|| "inf".to_string(), |d| d.to_string());
            self.engine
                .log(None, format!("pop arrival={} D={d} len={}", seed.arrival, seed.bytes.len()));
            if cfg.retry_attempted {
                self.attempted.clear();
            }
            let bytes = detect_length(&mut self.engine, &seed.bytes, cfg.max_len.max(seed.bytes.len()), &mut self.rng)
                .ok_or(Stopped)?
                .bytes;
            if bytes.len() != seed.bytes.len() {
                self.engine
                    .log(None, format!("length {} -> {}", seed.bytes.len(), bytes.len()));
            }

            self.engine.phase = Phase::Baseline;
            let trace = self.engine.run(&bytes, None).ok_or(Stopped)?;
            let current = SeedEntry::from_trace(bytes.clone(), &trace, analysis);
            self.engine.current = Some(current.clone());
            let best_before = self.engine.best.as_ref().and_then(|b| b.distance);

            let mut queue: VecDeque<_> = filter_constraints(program, &trace, analysis, &self.attempted).into();
            if queue.is_empty() {
                self.stagnation += 1;
            }
            let mut satisfied = false;
            while let Some(c) = queue.pop_front() {
                self.attempted.insert((c.site, c.edge));
                self.attempts += 1;
                self.stagnation += 1;
                self.engine.phase = Phase::Probe;
                self.engine
                    .log(Some(c.site), format!("focus edge={} d={}", c.edge, c.distance));
                let (map, base) = match map_bytes(&mut self.engine, &bytes, c.site, &cfg.probe, &mut self.rng) {
                    Ok(x) => x,
                    Err(ProbeError::Stopped) => return Err(Stopped),
                    Err(ProbeError::SiteNotObserved) => {
                        self.engine.log(Some(c.site), "abandon unobserved".into());
                        continue;
                    }
                };
                self.covered.extend(map.covered());
                self.engine.log(
                    Some(c.site),
                    format!("map lhs={:?} rhs={:?} execs={}", map.lhs, map.rhs, map.probe_execs),
                );

                self.engine.phase = Phase::Solve;
                let goal = Goal::new(analysis, c.site, c.edge);
                self.engine.goal = Some(goal.clone());
                let report = solve(
                    &mut self.engine,
                    program,
                    &bytes,
                    &map,
                    &base,
                    &goal,
                    &cfg.solve,
                    &mut self.rng,
                );
                self.engine.goal = None;
                let report = report?;
                match report.solution {
                    Some(sol) => {
                        self.solved += 1;
                        self.engine.log(
                            Some(c.site),
                            format!("solved {} class={} execs={}", sol.strategy, class_name(&report.class), report.execs),
                        );
                        let entry = SeedEntry::from_trace(sol.input, &sol.trace, analysis);
                        self.engine.queue.push(entry);
                        let dropped = queue.len();
                        queue.clear();
                        self.engine.log(Some(c.site), format!("early-exit dropped={dropped}"));
                        satisfied = true;
                        break;
                    }
                    None => {
                        self.engine.log(
                            Some(c.site),
                            format!("abandon class={} execs={}", class_name(&report.class), report.execs),
                        );
                    }
                }
            }
            let best_after = self.engine.best.as_ref().and_then(|b| b.distance);
            if crate::analysis::dist_key(best_after) < crate::analysis::dist_key(best_before) {
                self.stagnation = 0;
            }

            if !satisfied && self.missed_done.insert(bytes.clone()) {
                self.engine.phase = Phase::Missed;
                let covered = std::mem::take(&mut self.covered);
                let mutants: Vec<_> = mutate_missed(&bytes, &covered).map(|(_, m)| m).collect();
                self.covered = covered;
                if !mutants.is_empty() {
                    self.engine.log(None, format!("missed mutants={}", mutants.len()));
                }
                for m in mutants {
                    self.engine.run(&m, None).ok_or(Stopped)?;
                }
            }

            if self.stagnation >= cfg.stagnation {
                self.engine.phase = Phase::Random;
                self.engine.log(None, format!("stagnation random={}", cfg.random_batch));
                for _ in 0..cfg.random_batch {
                    let m = random_mutate(&bytes, &mut self.rng);
                    self.engine.run(&m, None).ok_or(Stopped)?;
                }
                self.stagnation = 0;
            }

            if self.engine.queue.is_empty() && current.distance.is_some() {
                self.engine.phase = Phase::Baseline;
                self.engine.log(None, "requeue".into());
                self.engine.queue.push(current);
            }
            self.engine.current = None;
            if self.engine.stop.is_some() {
                return Err(Stopped);
            }
        }
        Ok(())
    }
}

fn stop_name(s: StopReason) -> &'static str {
    match s {
        StopReason::TargetReached => "target-reached",
        StopReason::ExecBudget => "exec-budget",
        StopReason::WallTimeout => "wall-timeout",
        StopReason::QueueExhausted => "queue-exhausted",
    }
}

fn class_name(c: &crate::mutate::ConditionClass) -> &'static str {
    use crate::mutate::ConditionClass::*;
    match c {
        FixedToFixed => "fixed-fixed",
        FixedToMapped { .. } => "fixed-mapped",
        MappedToMapped => "mapped-mapped",
    }
}

/// Coverage of a standalone run, for callers outside a campaign.
pub fn coverage_of_input(p: &Program, input: &[u8]) -> Coverage {
    Executor::new(p).run(input, None).coverage()
}

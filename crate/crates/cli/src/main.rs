use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use focusfuzz::baseline::{run_baseline, BaselineConfig, BaselineKind};
use focusfuzz::benchgen::{generate_bench, BenchKind, BenchSpec};
use focusfuzz::campaign::{run_campaign, CampaignConfig};
use focusfuzz::ir::{parse_program, validate};
use focusfuzz::{Analysis, Program, SeedPolicy};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

/// Directed fuzzing of IR programs toward a crash location.
#[derive(Parser)]
#[command(name = "focusfuzz", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a directed campaign against one program.
    Fuzz(FuzzArgs),
    /// Generate or compare synthetic benchmarks.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Print the program graph with distances to a location, in DOT.
    Graph {
        #[arg(long)]
        target: PathBuf,
        #[arg(long)]
        location: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check a program for structural errors.
    Validate {
        #[arg(long)]
        target: PathBuf,
    },
}

#[derive(Args)]
struct FuzzArgs {
    /// Program file in the textual IR.
    #[arg(long)]
    target: PathBuf,
    /// Crash location to reach, e.g. "decomp.c:104".
    #[arg(long)]
    location: String,
    /// Directory of raw seed files. Without it a single 64-byte zero seed
    /// is used.
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long, default_value_t = 1_000_000)]
    max_execs: u64,
    #[arg(long, default_value_t = SeedPolicy::default())]
    seed_policy: SeedPolicy,
    #[arg(long, default_value_t = focusfuzz::length::DEFAULT_MAX_LEN)]
    max_len: usize,
    #[arg(long, default_value_t = focusfuzz::probe::DEFAULT_SEGMENTS)]
    probe_m: usize,
    #[arg(long, default_value_t = focusfuzz::probe::DEFAULT_LEAF_LEN)]
    probe_leaf: usize,
    /// Drop probe segments whose flip makes the site unreachable instead of
    /// splitting them further.
    #[arg(long)]
    probe_discard_untracked: bool,
    #[arg(long, default_value_t = focusfuzz::campaign::DEFAULT_STAGNATION)]
    stagnation: u64,
    #[arg(long, default_value_t = focusfuzz::mutate::DEFAULT_CHECKSUM_BUDGET)]
    checksum_budget: u64,
    #[arg(long, default_value_t = 0)]
    rng: u64,
    /// Where to write the TOML report.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Where to write the CSV event log.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Keep fuzzing after the target crash is found.
    #[arg(long)]
    keep_going: bool,
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Write a generated program, and optionally its ground truth.
    Gen {
        #[arg(long)]
        kind: BenchKind,
        #[arg(long, default_value_t = 4)]
        depth: usize,
        #[arg(long, default_value_t = 64)]
        input_len: usize,
        #[arg(long, default_value_t = 0)]
        rng: u64,
        #[arg(long)]
        out: PathBuf,
        /// Ground truth as TOML.
        #[arg(long)]
        truth: Option<PathBuf>,
    },
    /// Run the directed engine and both baselines over generated programs
    /// and print a CSV table.
    Compare {
        /// Comma-separated benchmark kinds.
        #[arg(long, value_delimiter = ',', default_values_t = BenchKind::ALL)]
        kinds: Vec<BenchKind>,
        #[arg(long, default_value_t = 3)]
        depth: usize,
        #[arg(long, default_value_t = 64)]
        input_len: usize,
        /// Programs per kind.
        #[arg(long, default_value_t = 2)]
        count: u64,
        #[arg(long, default_value_t = 100_000)]
        max_execs: u64,
        #[arg(long, default_value_t = 0)]
        rng: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_program(path: &Path) -> Result<Program> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ir = parse_program(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Program::new(ir)?)
}

fn read_seeds(dir: &Path) -> Result<Vec<Vec<u8>>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading seed directory {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.retain(|p| p.is_file());
    // Sorted so that arrival order, and hence the whole run, is stable.
    paths.sort();
    paths
        .iter()
        .map(|p| fs::read(p).with_context(|| format!("reading seed {}", p.display())))
        .collect()
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            std::io::stdout().write_all(text.as_bytes())?;
            Ok(())
        }
    }
}

fn fuzz(a: FuzzArgs) -> Result<()> {
    let p = read_program(&a.target)?;
    let seeds = match &a.seeds {
        Some(d) => read_seeds(d)?,
        None => vec![vec![0u8; 64]],
    };
    let mut cfg = CampaignConfig::new(a.location);
    cfg.policy = a.seed_policy;
    cfg.max_execs = a.max_execs;
    cfg.max_len = a.max_len;
    cfg.probe.segments = a.probe_m;
    cfg.probe.leaf_len = a.probe_leaf;
    cfg.probe.split_untracked = !a.probe_discard_untracked;
    cfg.stagnation = a.stagnation;
    cfg.solve.checksum_budget = a.checksum_budget;
    cfg.rng_seed = a.rng;
    cfg.wall_timeout = a.timeout_secs.map(Duration::from_secs);
    cfg.stop_at_target = !a.keep_going;
    let report = run_campaign(&p, &seeds, &cfg)?;
    if let Some(path) = &a.report {
        fs::write(path, report.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(path) = &a.events {
        let f = fs::File::create(path).with_context(|| format!("writing {}", path.display()))?;
        report.write_events(f)?;
    }
    match report.execs_to_target {
        Some(n) => println!("target {} reached after {n} executions", report.location),
        None => println!(
            "target {} not reached ({} executions, stopped: {:?})",
            report.location, report.total_execs, report.stop_reason
        ),
    }
    for c in &report.crashes {
        println!("crash {} {} at exec {}", c.location, c.crash_type, c.execs_at_discovery);
    }
    Ok(())
}

fn compare(
    kinds: &[BenchKind],
    depth: usize,
    input_len: usize,
    count: u64,
    max_execs: u64,
    rng: u64,
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["program", "fuzzer", "execs_to_crash", "walltime_ms", "found"])?;
    for &kind in kinds {
        for i in 0..count {
            let spec = BenchSpec {
                kind,
                depth,
                input_len,
                seed: rng.wrapping_add(i),
            };
            let bench = generate_bench(&spec)?;
            let p = Program::new(bench.program)?;
            let seeds = vec![bench.truth.partial_witness(0)];
            let name = format!("{kind}-{}", spec.seed);
            let loc = bench.truth.location;

            let mut cfg = CampaignConfig::new(loc.clone());
            cfg.max_execs = max_execs;
            cfg.rng_seed = rng;
            let t = Instant::now();
            let r = run_campaign(&p, &seeds, &cfg)?;
            let ms = t.elapsed().as_millis().to_string();
            w.write_record([
                name.as_str(),
                "focusfuzz",
                &r.execs_to_target.unwrap_or(r.total_execs).to_string(),
                &ms,
                &r.target_reached().to_string(),
            ])?;

            for kind in [BaselineKind::Random, BaselineKind::Coverage] {
                let mut cfg = BaselineConfig::new(loc.clone());
                cfg.max_execs = max_execs;
                cfg.rng_seed = rng;
                let r = run_baseline(kind, &p, &seeds, &cfg)?;
                w.write_record([
                    name.as_str(),
                    kind.name(),
                    &r.execs_to_target.unwrap_or(r.total_execs).to_string(),
                    &r.walltime_ms.to_string(),
                    &r.target_reached().to_string(),
                ])?;
            }
        }
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Fuzz(a) => fuzz(a),
        Cmd::Bench(BenchCmd::Gen {
            kind,
            depth,
            input_len,
            rng,
            out,
            truth,
        }) => {
            let bench = generate_bench(&BenchSpec {
                kind,
                depth,
                input_len,
                seed: rng,
            })?;
            fs::write(&out, &bench.text).with_context(|| format!("writing {}", out.display()))?;
            if let Some(path) = truth {
                let text = toml::to_string(&bench.truth)?;
                fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
            }
            println!("target location: {}", bench.truth.location);
            Ok(())
        }
        Cmd::Bench(BenchCmd::Compare {
            kinds,
            depth,
            input_len,
            count,
            max_execs,
            rng,
            out,
        }) => {
            let table = compare(&kinds, depth, input_len, count, max_execs, rng)?;
            write_out(out.as_deref(), &table)
        }
        Cmd::Graph {
            target,
            location,
            out,
        } => {
            let p = read_program(&target)?;
            let a = Analysis::new(&p, &location)?;
            write_out(out.as_deref(), &a.to_dot(&p))
        }
        Cmd::Validate { target } => {
            let text = fs::read_to_string(&target)
                .with_context(|| format!("reading {}", target.display()))?;
            let ir = parse_program(&text).with_context(|| format!("parsing {}", target.display()))?;
            let diags = validate(&ir);
            if diags.is_empty() {
                println!(
                    "ok: {} functions, {} blocks, {} sites",
                    ir.functions.len(),
                    ir.total_block_count(),
                    ir.sites().count()
                );
                Ok(())
            } else {
                for d in &diags {
                    eprintln!("{d}");
                }
                bail!("{} problem(s) in {}", diags.len(), target.display())
            }
        }
    }
}

fn main() -> ExitCode {
    // Usage errors exit with 2 via clap; everything else that fails is a
    // setup error.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

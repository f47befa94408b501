//! A directed greybox fuzzer over a small control-flow IR.
//!
//! Each round picks the seed closest to the target crash, narrows its
//! branch conditions down to the few that lead closer, finds which input
//! bytes feed each one, and mutates only those bytes.
//!
//! ```
//! use focusfuzz::{run_campaign, CampaignConfig, Program};
//!
//! let p = Program::parse(r#"
//!     fn main() {
//!       block A: br site=L (inlen >= 6) -> M, C
//!       block M: br site=W memeq(bytes(2, 4), x"CAFEBABE") -> B, C
//!       block B: crash "demo.c:4" "abort"
//!                ret 0
//!       block C: ret 1
//!     }"#).unwrap();
//! let report = run_campaign(&p, &[vec![0; 16]], &CampaignConfig::new("demo.c:4")).unwrap();
//! assert!(report.target_reached());
//! ```

pub mod analysis;
pub mod baseline;
pub mod benchgen;
pub mod campaign;
pub mod exec;
pub mod ir;
pub mod length;
pub mod mutate;
pub mod probe;
pub mod program;
pub mod schedule;

pub use analysis::{Analysis, AnalysisError};
pub use baseline::{run_baseline, BaselineConfig, BaselineKind, BaselineReport};
pub use benchgen::{generate_bench, generate_wiring, Bench, BenchKind, BenchSpec, GroundTruth};
pub use campaign::{run_campaign, CampaignConfig, CampaignError, CampaignReport, StopReason};
pub use exec::{execute, ExecutionTrace, Executor, Harness, Value};
pub use ir::{parse_program, serialize_program, TargetProgram};
pub use probe::{map_bytes, ByteMap, ProbeConfig};
pub use program::{InvalidProgram, Program, SiteIdx};
pub use schedule::SeedPolicy;

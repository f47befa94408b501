use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion, Throughput};
use focusfuzz::benchgen::BenchKind;
use focusfuzz::exec::{ExecutionTrace, Executor};
use focusfuzz::probe::{map_bytes, ProbeConfig};
use focusfuzz::{run_campaign, Analysis, CampaignConfig};
use focusfuzz_bench::{bench_fixture, ladder};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn executor(c: &mut Criterion) {
    let f = bench_fixture(BenchKind::MagicChain, 4, 64, 0);
    let mut g = c.benchmark_group("executor");
    g.throughput(Throughput::Elements(1));
    g.bench_function("magic-chain witness", |b| {
        let mut ex = Executor::new(&f.program);
        let mut trace = ExecutionTrace::default();
        b.iter(|| ex.run_into(black_box(&f.witness), None, &mut trace))
    });
    let sum = bench_fixture(BenchKind::ChecksumGate, 4, 64, 0);
    g.bench_function("checksum witness", |b| {
        let mut ex = Executor::new(&sum.program);
        let mut trace = ExecutionTrace::default();
        b.iter(|| ex.run_into(black_box(&sum.witness), None, &mut trace))
    });
    g.finish();
}

fn analysis(c: &mut Criterion) {
    let mut g = c.benchmark_group("analysis");
    for n in [100, 1000] {
        let p = ladder(n);
        g.bench_function(format!("ladder {n}"), |b| {
            b.iter(|| Analysis::new(black_box(&p), "ladder.c:1").unwrap())
        });
    }
    g.finish();
}

fn probing(c: &mut Criterion) {
    let p = focusfuzz::Program::parse(
        "fn main() { block A: br site=S (in[611] | in[612] << 8 == 0xbeef) -> B, C
           block B: crash \"p.c:1\" \"abort\" ret 0 block C: ret 0 }",
    )
    .unwrap();
    let site = p.site("S").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let seed: Vec<u8> = (0..1024).map(|_| rng.gen()).collect();
    c.bench_function("probe 1024-byte seed", |b| {
        b.iter_batched(
            || ChaCha8Rng::seed_from_u64(2),
            |mut rng| {
                let mut ex = Executor::new(&p);
                map_bytes(&mut ex, &seed, site, &ProbeConfig::default(), &mut rng).unwrap()
            },
            BatchSize::SmallInput,
        )
    });
}

fn campaign(c: &mut Criterion) {
    let mut g = c.benchmark_group("campaign");
    g.sample_size(20);
    for kind in [BenchKind::MagicChain, BenchKind::ChecksumGate, BenchKind::Mixed] {
        let f = bench_fixture(kind, 4, 64, 0);
        let cfg = CampaignConfig::new(f.location.clone());
        g.bench_function(kind.name(), |b| {
            b.iter(|| run_campaign(&f.program, std::slice::from_ref(&f.seed), &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, executor, analysis, probing, campaign);
criterion_main!(benches);

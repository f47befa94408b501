//! Seed length adjustment: grow while longer inputs reach more sites, then
//! trim the tail as far as the reached-site count allows.

use crate::exec::Harness;
use rand::Rng;

pub const DEFAULT_MAX_LEN: usize = 4096;
/// Upper bound on any configured maximum length (4 MiB).
pub const MAX_LEN_CAP: usize = 4 << 20;
/// Length an empty seed grows to on its first doubling.
pub const EMPTY_GROWTH: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LengthOutcome {
    pub bytes: Vec<u8>,
    /// Distinct sites hit by `bytes`.
    pub sites: usize,
    pub execs: u64,
}

/// Returns `None` if the harness stops mid-way.
pub fn detect_length<H: Harness, R: Rng>(
    h: &mut H,
    seed: &[u8],
    max_len: usize,
    rng: &mut R,
) -> Option<LengthOutcome> {
    let max_len = max_len.clamp(seed.len(), MAX_LEN_CAP.max(seed.len()));
    let mut execs = 0u64;
    let mut count = |h: &mut H, input: &[u8]| -> Option<usize> {
        execs += 1;
        h.run(input, None).map(|t| t.distinct_sites())
    };

    let mut best = seed.to_vec();
    let mut sites = count(h, &best)?;
    while best.len() < max_len {
        let len = best.len();
        let target = if len == 0 {
            EMPTY_GROWTH.min(max_len)
        } else {
            (len * 2).min(max_len)
        };
        let mut cand = best.clone();
        if len == 0 {
            cand.resize(target, 0);
        } else {
            for _ in len..target {
                cand.push(best[rng.gen_range(0..len)]);
            }
        }
        let n = count(h, &cand)?;
        if n > sites {
            best = cand;
            sites = n;
        } else {
            break;
        }
    }

    // Shortest prefix that still reaches exactly as many sites.
    let (mut lo, mut hi) = (0usize, best.len());
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if count(h, &best[..mid])? == sites {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    best.truncate(hi);
    Some(LengthOutcome {
        bytes: best,
        sites,
        execs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Executor;
    use crate::program::Program;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn grows_through_length_gate() {
        let p = Program::parse(
            "fn main() { block A: br site=G (inlen >= 8) -> B, C
               block B: br site=H (in[7] == 1) -> C, C block C: ret 0 }",
        )
        .unwrap();
        let mut ex = Executor::new(&p);
        let out = detect_length(&mut ex, b"abcd", 4096, &mut rng()).unwrap();
        assert_eq!(out.bytes.len(), 8);
        assert_eq!(&out.bytes[..4], b"abcd");
        assert!(out.bytes[4..].iter().all(|b| b"abcd".contains(b)));
        assert_eq!(out.sites, 2);
    }

    #[test]
    fn empty_seed_grows_with_zeros() {
        let p = Program::parse(
            "fn main() { block A: br site=G (inlen >= 8) -> B, C
               block B: br site=H (in[0] == 1) -> C, C block C: ret 0 }",
        )
        .unwrap();
        let mut ex = Executor::new(&p);
        let out = detect_length(&mut ex, b"", 4096, &mut rng()).unwrap();
        assert_eq!(out.bytes, vec![0; 8]);
    }

    #[test]
    fn shrinks_to_the_bytes_read() {
        let p = Program::parse(
            "fn main() { block A: br site=G (inlen >= 4) -> B, C
               block B: br site=H (in[3] == 1) -> C, C block C: ret 0 }",
        )
        .unwrap();
        let mut ex = Executor::new(&p);
        let out = detect_length(&mut ex, &[9u8; 4096], 4096, &mut rng()).unwrap();
        assert_eq!(out.bytes.len(), 4);
        assert!(out.execs <= 2 + 13);
    }

    #[test]
    fn growth_stops_at_max_len() {
        // Site S{k} is reached only when inlen > 2^(k-1), so every doubling
        // exposes one more site and growth never reaches a fixed point.
        let mut text = String::from("fn main() {\n");
        for k in 0..12 {
            text += &format!(
                "block C{k}: br site=S{k} (inlen > {}) -> C{}, X\n",
                1usize << k,
                k + 1
            );
        }
        text += "block C12: ret 1\nblock X: ret 0 }";
        let p = Program::parse(&text).unwrap();
        let mut ex = Executor::new(&p);
        let out = detect_length(&mut ex, b"ab", 100, &mut rng()).unwrap();
        assert_eq!(out.sites, 8);
        assert_eq!(out.bytes.len(), 65);
    }
}

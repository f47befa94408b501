//! Recovering which seed bytes feed a focused site's operands.
//!
//! Stage one flips whole segments and recurses into those that move the
//! site's operands; stage two flips the surviving bytes one at a time.

use crate::exec::{DataCondition, Harness};
use crate::program::SiteIdx;
use rand::Rng;
use std::collections::BTreeSet;
use std::ops::Range;

pub const DEFAULT_SEGMENTS: usize = 4;
pub const DEFAULT_LEAF_LEN: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProbeConfig {
    /// Parts per split, at least 2.
    pub segments: usize,
    /// Segments this short are probed byte by byte.
    pub leaf_len: usize,
    /// Re-probe unchanged segments once with random values, in case the
    /// fixed flip happened to preserve the operands.
    pub random_pass: bool,
    /// Split segments whose flip knocks the path off the site instead of
    /// discarding them. A segment holding both a guard byte of an earlier
    /// branch and an operand byte is otherwise lost entirely.
    pub split_untracked: bool,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            segments: DEFAULT_SEGMENTS,
            leaf_len: DEFAULT_LEAF_LEN,
            random_pass: true,
            split_untracked: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbeOutcome {
    Unchanged,
    Changed { lhs: bool, rhs: bool },
    /// The site was not reached by the probe input.
    Untracked,
}

/// Seed offsets that influence each operand of one site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ByteMap {
    pub site: SiteIdx,
    pub lhs: BTreeSet<usize>,
    pub rhs: BTreeSet<usize>,
    /// Executions spent building the map, baseline included.
    pub probe_execs: u64,
}

impl ByteMap {
    pub fn covered(&self) -> BTreeSet<usize> {
        self.lhs.union(&self.rhs).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProbeError {
    #[error("the seed does not reach the focused site")]
    SiteNotObserved,
    #[error("execution budget exhausted")]
    Stopped,
}

/// Probing state for one (seed, site) pair.
pub struct Prober<'h, H: Harness> {
    harness: &'h mut H,
    seed: Vec<u8>,
    site: SiteIdx,
    base: DataCondition,
    pub execs: u64,
}

impl<'h, H: Harness> Prober<'h, H> {
    /// Runs the unmodified seed to capture the reference operands.
    pub fn new(harness: &'h mut H, seed: &[u8], site: SiteIdx) -> Result<Self, ProbeError> {
        let trace = harness.run(seed, Some(site)).ok_or(ProbeError::Stopped)?;
        let base = trace
            .focused
            .into_iter()
            .next()
            .ok_or(ProbeError::SiteNotObserved)?;
        Ok(Prober {
            harness,
            seed: seed.to_vec(),
            site,
            base,
            execs: 1,
        })
    }

    pub fn baseline(&self) -> &DataCondition {
        &self.base
    }

    /// Compares the first observation of the site under `input` with the
    /// baseline.
    pub fn outcome(&mut self, input: &[u8]) -> Result<ProbeOutcome, ProbeError> {
        self.execs += 1;
        let trace = self
            .harness
            .run(input, Some(self.site))
            .ok_or(ProbeError::Stopped)?;
        Ok(match trace.focused.first() {
            None => ProbeOutcome::Untracked,
            Some(obs) => {
                let lhs = obs.lhs != self.base.lhs;
                let rhs = obs.rhs != self.base.rhs;
                if lhs || rhs {
                    ProbeOutcome::Changed { lhs, rhs }
                } else {
                    ProbeOutcome::Unchanged
                }
            }
        })
    }

    fn flip(&mut self, ranges: &[Range<usize>]) -> Result<ProbeOutcome, ProbeError> {
        let mut input = self.seed.clone();
        for r in ranges {
            input[r.clone()].iter_mut().for_each(|b| *b ^= 0xFF);
        }
        self.outcome(&input)
    }

    fn scramble<R: Rng>(&mut self, ranges: &[Range<usize>], rng: &mut R) -> Result<ProbeOutcome, ProbeError> {
        let mut input = self.seed.clone();
        for r in ranges {
            for b in &mut input[r.clone()] {
                *b ^= rng.gen_range(1..=0xFEu8);
            }
        }
        self.outcome(&input)
    }

    /// Stage one: the leaf ranges that may influence the site, in offset
    /// order.
    pub fn multi_byte<R: Rng>(
        &mut self,
        cfg: &ProbeConfig,
        rng: &mut R,
    ) -> Result<Vec<Range<usize>>, ProbeError> {
        let m = cfg.segments.max(2);
        let leaf = cfg.leaf_len.max(1);
        let len = self.seed.len();
        if len == 0 {
            return Ok(Vec::new());
        }
        let whole = std::iter::once(0..len).collect::<Vec<_>>();
        if len <= leaf {
            return Ok(whole);
        }
        let mut leaves = Vec::new();
        let mut level = whole;
        while !level.is_empty() {
            let mut changed = Vec::new();
            let mut unchanged = Vec::new();
            for r in level {
                let part = r.len().div_ceil(m);
                let mut start = r.start;
                while start < r.end {
                    let seg = start..(start + part).min(r.end);
                    start = seg.end;
                    match self.flip(std::slice::from_ref(&seg))? {
                        ProbeOutcome::Changed { .. } => changed.push(seg),
                        ProbeOutcome::Unchanged => unchanged.push(seg),
                        ProbeOutcome::Untracked if cfg.split_untracked => changed.push(seg),
                        ProbeOutcome::Untracked => {}
                    }
                }
            }
            // One combined random probe over every unchanged segment; only
            // if it moves the operands are the segments retried one by one.
            if cfg.random_pass && !unchanged.is_empty() {
                if let ProbeOutcome::Changed { .. } = self.scramble(&unchanged, rng)? {
                    for seg in unchanged {
                        if let ProbeOutcome::Changed { .. } =
                            self.scramble(std::slice::from_ref(&seg), rng)?
                        {
                            changed.push(seg);
                        }
                    }
                }
            }
            level = Vec::new();
            for seg in changed {
                if seg.len() <= leaf {
                    leaves.push(seg);
                } else {
                    level.push(seg);
                }
            }
        }
        leaves.sort_by_key(|r| r.start);
        Ok(leaves)
    }

    /// Stage two: flips each candidate byte alone.
    pub fn single_byte(&mut self, candidates: &[Range<usize>]) -> Result<ByteMap, ProbeError> {
        let mut lhs = BTreeSet::new();
        let mut rhs = BTreeSet::new();
        let mut input = self.seed.clone();
        for r in candidates {
            for off in r.clone() {
                input[off] ^= 0xFF;
                let outcome = self.outcome(&input);
                input[off] ^= 0xFF;
                if let ProbeOutcome::Changed { lhs: l, rhs: r } = outcome? {
                    if l {
                        lhs.insert(off);
                    }
                    if r {
                        rhs.insert(off);
                    }
                }
            }
        }
        Ok(ByteMap {
            site: self.site,
            lhs,
            rhs,
            probe_execs: self.execs,
        })
    }
}

/// Both stages for one (seed, site) pair.
pub fn map_bytes<H: Harness, R: Rng>(
    harness: &mut H,
    seed: &[u8],
    site: SiteIdx,
    cfg: &ProbeConfig,
    rng: &mut R,
) -> Result<(ByteMap, DataCondition), ProbeError> {
    let mut prober = Prober::new(harness, seed, site)?;
    let ranges = prober.multi_byte(cfg, rng)?;
    let map = prober.single_byte(&ranges)?;
    Ok((map, prober.base))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Executor;
    use crate::program::Program;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(1)
    }

    fn program(cond: &str) -> Program {
        Program::parse(&format!(
            "fn main() {{ block A: br site=S {cond} -> B, C block B: ret 1 block C: ret 0 }}"
        ))
        .unwrap()
    }

    #[test]
    fn single_offset_in_64_bytes() {
        let p = program("(in[17] == 0x41)");
        let s = p.site("S").unwrap();
        let mut ex = Executor::new(&p);
        let seed = vec![0u8; 64];
        let mut pr = Prober::new(&mut ex, &seed, s).unwrap();
        let leaves = pr.multi_byte(&ProbeConfig::default(), &mut rng()).unwrap();
        assert_eq!(leaves, vec![16..20]);
        // Baseline, two levels of four flips, one random pass per level.
        assert!(pr.execs <= 4 * 2 + 4, "{} execs", pr.execs);
        let map = pr.single_byte(&leaves).unwrap();
        assert_eq!(map.lhs, BTreeSet::from([17]));
        assert!(map.rhs.is_empty());
    }

    #[test]
    fn constant_condition_maps_nothing() {
        let p = program("(3 == 4)");
        let s = p.site("S").unwrap();
        let mut ex = Executor::new(&p);
        let mut pr = Prober::new(&mut ex, &[1; 32], s).unwrap();
        assert!(pr.multi_byte(&ProbeConfig::default(), &mut rng()).unwrap().is_empty());
    }

    #[test]
    fn operands_mapped_separately() {
        let p = program("(in[5] == in[9])");
        let s = p.site("S").unwrap();
        let mut ex = Executor::new(&p);
        let (map, base) = map_bytes(&mut ex, &[7; 40], s, &ProbeConfig::default(), &mut rng()).unwrap();
        assert_eq!(map.lhs, BTreeSet::from([5]));
        assert_eq!(map.rhs, BTreeSet::from([9]));
        assert_eq!(base.lhs, crate::exec::Value::Int(7));
    }

    #[test]
    fn middle_byte_of_a_leaf() {
        let p = program("((in[6] & 0) + in[5] == 3)");
        let s = p.site("S").unwrap();
        let mut ex = Executor::new(&p);
        let mut pr = Prober::new(&mut ex, &[0; 8], s).unwrap();
        let map = pr.single_byte(std::slice::from_ref(&(4..8))).unwrap();
        assert_eq!(map.lhs, BTreeSet::from([5]));
    }

    #[test]
    fn unreached_site_is_an_error() {
        let p = Program::parse(
            "fn main() { block A: br site=G (inlen > 4) -> B, C block B: br site=S (in[0] == 1) -> C, C block C: ret 0 }",
        )
        .unwrap();
        let s = p.site("S").unwrap();
        let mut ex = Executor::new(&p);
        assert_eq!(
            Prober::new(&mut ex, b"ab", s).err(),
            Some(ProbeError::SiteNotObserved)
        );
    }

    #[test]
    fn operand_bytes_behind_a_guard_byte() {
        // Every segment holding in[9] also holds in[8], so each flip
        // leaves S unreached; splitting anyway still isolates in[9].
        let p = Program::parse(
            "fn main() { block A: br site=G (in[8] == 0) -> B, C
               block B: br site=S (in[9] == 5) -> C, C block C: ret 0 }",
        )
        .unwrap();
        let s = p.site("S").unwrap();
        let mut ex = Executor::new(&p);
        let cfg = ProbeConfig {
            segments: 2,
            leaf_len: 2,
            random_pass: false,
            split_untracked: true,
        };
        let (map, _) = map_bytes(&mut ex, &[0; 16], s, &cfg, &mut rng()).unwrap();
        assert_eq!(map.lhs, BTreeSet::from([9]));
        let cfg = ProbeConfig {
            split_untracked: false,
            ..cfg
        };
        let (map, _) = map_bytes(&mut ex, &[0; 16], s, &cfg, &mut rng()).unwrap();
        assert!(map.lhs.is_empty());
    }

    #[test]
    fn random_pass_catches_flip_invariant_bytes() {
        // Flipping both bytes cancels out in the xor; independent random
        // values do not.
        let p = program("((in[2] ^ in[3]) == 1)");
        let s = p.site("S").unwrap();
        let mut ex = Executor::new(&p);
        let cfg = ProbeConfig {
            segments: 2,
            leaf_len: 2,
            random_pass: true,
            split_untracked: true,
        };
        let mut pr = Prober::new(&mut ex, &[0; 8], s).unwrap();
        let leaves = pr.multi_byte(&cfg, &mut rng()).unwrap();
        assert_eq!(leaves, vec![2..4]);
        let mut ex = Executor::new(&p);
        let mut pr = Prober::new(&mut ex, &[0; 8], s).unwrap();
        let cfg = ProbeConfig {
            random_pass: false,
            ..cfg
        };
        assert!(pr.multi_byte(&cfg, &mut rng()).unwrap().is_empty());
    }
}

//! Index-resolved form of a validated [`TargetProgram`].
//!
//! Blocks, sites and functions get dense indices in program order; branch
//! targets, callees and registers are resolved once so the interpreter and
//! the static analyses never touch names on their hot paths.

use crate::ir::{
    self, ArithOp, CmpOp, Diagnostic, Expr, Instruction, SiteKind, TargetProgram, Terminator,
};
use std::collections::HashMap;

macro_rules! index_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub u32);

        impl $name {
            #[inline]
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

index_type!(
    /// Dense program-wide block index.
    BlockIdx
);
index_type!(
    /// Dense program-wide constraint-site index.
    SiteIdx
);
index_type!(FuncIdx);

#[derive(Debug, Clone)]
pub(crate) enum LExpr {
    Const(i64),
    ByteLit(Box<[u8]>),
    Reg(u16),
    InputByte(Box<LExpr>),
    InputLen,
    Arith(ArithOp, Box<LExpr>, Box<LExpr>),
    Slice(Box<LExpr>, u32),
}

#[derive(Debug, Clone)]
pub(crate) enum LInstr {
    Assign(u16, LExpr),
    Call {
        dest: u16,
        func: FuncIdx,
        args: Vec<LExpr>,
    },
    Crash(u32),
    Nop,
}

#[derive(Debug, Clone)]
pub(crate) enum LTerm {
    Jump(BlockIdx),
    Branch {
        site: SiteIdx,
        lhs: LExpr,
        rhs: LExpr,
        on_true: BlockIdx,
        on_false: BlockIdx,
    },
    Switch {
        site: SiteIdx,
        scrutinee: LExpr,
        cases: Vec<(i64, BlockIdx)>,
        default: BlockIdx,
    },
    Return(LExpr),
}

#[derive(Debug, Clone)]
pub(crate) struct LBlock {
    pub name: String,
    pub func: FuncIdx,
    pub body: Vec<LInstr>,
    pub term: LTerm,
}

#[derive(Debug, Clone)]
pub(crate) struct LFunc {
    pub name: String,
    pub entry: BlockIdx,
    pub params: u16,
    pub regs: u16,
    pub blocks: Vec<BlockIdx>,
}

/// A site's static facts.
#[derive(Debug, Clone)]
pub struct SiteDesc {
    pub id: String,
    pub kind: SiteKind,
    pub block: BlockIdx,
    /// Successor blocks in edge-index order (true edge first for branches,
    /// default edge last for switches).
    pub successors: Vec<BlockIdx>,
    /// Case constants of a switch, aligned with the leading successors.
    pub cases: Vec<i64>,
}

#[derive(Debug, Clone)]
pub struct CrashDesc {
    pub location: String,
    pub crash_type: String,
    pub block: BlockIdx,
}

/// A validated, index-resolved program. Immutable once built.
#[derive(Debug, Clone)]
pub struct Program {
    ir: TargetProgram,
    pub(crate) blocks: Vec<LBlock>,
    pub(crate) funcs: Vec<LFunc>,
    pub(crate) entry: FuncIdx,
    sites: Vec<SiteDesc>,
    crashes: Vec<CrashDesc>,
    block_by_name: HashMap<String, BlockIdx>,
    site_by_name: HashMap<String, SiteIdx>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid program: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
pub struct InvalidProgram(pub Vec<Diagnostic>);

impl Program {
    pub fn new(ir: TargetProgram) -> Result<Program, InvalidProgram> {
        let diags = ir::validate(&ir);
        if !diags.is_empty() {
            return Err(InvalidProgram(diags));
        }
        Ok(Lowering::run(ir))
    }

    /// Parses, validates and lowers program text.
    pub fn parse(text: &str) -> Result<Program, ir::ParseError> {
        let ir = ir::parse_program(text)?;
        Ok(Lowering::run(ir))
    }

    pub fn ir(&self) -> &TargetProgram {
        &self.ir
    }

    pub fn block_count(&self) -> usize {
        self.blocks.len()
    }

    pub fn site_count(&self) -> usize {
        self.sites.len()
    }

    pub fn block_name(&self, b: BlockIdx) -> &str {
        &self.blocks[b.index()].name
    }

    pub fn block(&self, name: &str) -> Option<BlockIdx> {
        self.block_by_name.get(name).copied()
    }

    pub fn site(&self, id: &str) -> Option<SiteIdx> {
        self.site_by_name.get(id).copied()
    }

    pub fn site_desc(&self, s: SiteIdx) -> &SiteDesc {
        &self.sites[s.index()]
    }

    pub fn site_name(&self, s: SiteIdx) -> &str {
        &self.sites[s.index()].id
    }

    pub fn sites(&self) -> impl Iterator<Item = (SiteIdx, &SiteDesc)> {
        self.sites
            .iter()
            .enumerate()
            .map(|(i, s)| (SiteIdx(i as u32), s))
    }

    pub fn crashes(&self) -> &[CrashDesc] {
        &self.crashes
    }

    pub fn crash(&self, id: u32) -> &CrashDesc {
        &self.crashes[id as usize]
    }

    pub fn entry_function(&self) -> FuncIdx {
        self.entry
    }

    pub fn function_name(&self, f: FuncIdx) -> &str {
        &self.funcs[f.index()].name
    }

    pub fn function_of(&self, b: BlockIdx) -> FuncIdx {
        self.blocks[b.index()].func
    }

    pub fn function_entry(&self, f: FuncIdx) -> BlockIdx {
        self.funcs[f.index()].entry
    }

    pub fn function_blocks(&self, f: FuncIdx) -> &[BlockIdx] {
        &self.funcs[f.index()].blocks
    }

    pub fn function_count(&self) -> usize {
        self.funcs.len()
    }

    /// The site guarding the end of block `b`, if its terminator is one.
    pub fn site_of_block(&self, b: BlockIdx) -> Option<SiteIdx> {
        match &self.blocks[b.index()].term {
            LTerm::Branch { site, .. } | LTerm::Switch { site, .. } => Some(*site),
            _ => None,
        }
    }

    /// Intra-function successors of `b`, in edge-index order.
    pub fn successors(&self, b: BlockIdx) -> Vec<BlockIdx> {
        match &self.blocks[b.index()].term {
            LTerm::Jump(t) => vec![*t],
            LTerm::Branch {
                on_true, on_false, ..
            } => vec![*on_true, *on_false],
            LTerm::Switch { cases, default, .. } => cases
                .iter()
                .map(|(_, t)| *t)
                .chain(std::iter::once(*default))
                .collect(),
            LTerm::Return(_) => Vec::new(),
        }
    }

    pub fn is_return_block(&self, b: BlockIdx) -> bool {
        matches!(self.blocks[b.index()].term, LTerm::Return(_))
    }

    /// Functions called from block `b`, in instruction order.
    pub fn callees(&self, b: BlockIdx) -> Vec<FuncIdx> {
        self.blocks[b.index()]
            .body
            .iter()
            .filter_map(|i| match i {
                LInstr::Call { func, .. } => Some(*func),
                _ => None,
            })
            .collect()
    }

    /// Crash descriptors whose instruction sits in block `b`.
    pub fn crashes_in(&self, b: BlockIdx) -> impl Iterator<Item = &CrashDesc> {
        self.crashes.iter().filter(move |c| c.block == b)
    }
}

struct Lowering<'a> {
    func_by_name: HashMap<&'a str, FuncIdx>,
    block_by_name: HashMap<&'a str, BlockIdx>,
    site_by_name: HashMap<&'a str, SiteIdx>,
    crashes: Vec<CrashDesc>,
}

impl<'a> Lowering<'a> {
    fn run(ir: TargetProgram) -> Program {
        let mut block_by_name = HashMap::new();
        let mut site_by_name = HashMap::new();
        let mut func_by_name = HashMap::new();
        for (fi, f) in ir.functions.iter().enumerate() {
            func_by_name.insert(f.name.as_str(), FuncIdx(fi as u32));
        }
        let mut n = 0u32;
        let mut s = 0u32;
        for f in &ir.functions {
            for b in ordered_blocks(f) {
                block_by_name.insert(b.id.as_str(), BlockIdx(n));
                n += 1;
                if let Some(site) = b.terminator.site() {
                    site_by_name.insert(site.id.as_str(), SiteIdx(s));
                    s += 1;
                }
            }
        }
        let mut lw = Lowering {
            func_by_name,
            block_by_name,
            site_by_name,
            crashes: Vec::new(),
        };

        let mut blocks = Vec::new();
        let mut funcs = Vec::new();
        let mut sites = Vec::new();
        for (fi, f) in ir.functions.iter().enumerate() {
            let fidx = FuncIdx(fi as u32);
            let mut regs: HashMap<&str, u16> = HashMap::new();
            for p in &f.params {
                let next = regs.len() as u16;
                regs.entry(p.as_str()).or_insert(next);
            }
            let mut members = Vec::new();
            for b in ordered_blocks(f) {
                let bidx = lw.block_by_name[b.id.as_str()];
                members.push(bidx);
                let body = b
                    .body
                    .iter()
                    .map(|i| lw.instr(i, &mut regs, bidx))
                    .collect();
                let term = lw.term(&b.terminator, &mut regs);
                if let Some(site) = b.terminator.site() {
                    let (successors, cases) = match &term {
                        LTerm::Branch {
                            on_true, on_false, ..
                        } => (vec![*on_true, *on_false], vec![]),
                        LTerm::Switch { cases, default, .. } => (
                            cases
                                .iter()
                                .map(|c| c.1)
                                .chain(std::iter::once(*default))
                                .collect(),
                            cases.iter().map(|c| c.0).collect(),
                        ),
                        _ => unreachable!(),
                    };
                    sites.push(SiteDesc {
                        id: site.id.clone(),
                        kind: site.kind,
                        block: bidx,
                        successors,
                        cases,
                    });
                }
                blocks.push(LBlock {
                    name: b.id.clone(),
                    func: fidx,
                    body,
                    term,
                });
            }
            funcs.push(LFunc {
                name: f.name.clone(),
                entry: lw.block_by_name[f.entry_block.as_str()],
                params: f.params.len() as u16,
                regs: regs.len().max(1) as u16,
                blocks: members,
            });
        }
        let entry = lw.func_by_name[ir.entry.as_str()];
        let crashes = std::mem::take(&mut lw.crashes);
        let block_by_name = lw
            .block_by_name
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        let site_by_name = lw
            .site_by_name
            .iter()
            .map(|(k, v)| (k.to_string(), *v))
            .collect();
        drop(lw);
        Program {
            blocks,
            funcs,
            entry,
            sites,
            crashes,
            block_by_name,
            site_by_name,
            ir,
        }
    }

    fn reg(regs: &mut HashMap<&'a str, u16>, name: &'a str) -> u16 {
        let next = regs.len() as u16;
        *regs.entry(name).or_insert(next)
    }

    fn expr(&self, e: &'a Expr, regs: &mut HashMap<&'a str, u16>) -> LExpr {
        match e {
            Expr::Const(v) => LExpr::Const(*v),
            Expr::ByteLit(b) => LExpr::ByteLit(b.clone().into_boxed_slice()),
            Expr::Reg(r) => LExpr::Reg(Self::reg(regs, r)),
            Expr::InputByte(i) => LExpr::InputByte(Box::new(self.expr(i, regs))),
            Expr::InputLen => LExpr::InputLen,
            Expr::Arith(op, a, b) => LExpr::Arith(
                *op,
                Box::new(self.expr(a, regs)),
                Box::new(self.expr(b, regs)),
            ),
            Expr::ByteSlice(off, len) => LExpr::Slice(Box::new(self.expr(off, regs)), *len),
        }
    }

    fn instr(
        &mut self,
        i: &'a Instruction,
        regs: &mut HashMap<&'a str, u16>,
        block: BlockIdx,
    ) -> LInstr {
        match i {
            Instruction::Assign { dest, expr } => {
                let e = self.expr(expr, regs);
                LInstr::Assign(Self::reg(regs, dest), e)
            }
            Instruction::Call { dest, func, args } => {
                let args = args.iter().map(|a| self.expr(a, regs)).collect();
                LInstr::Call {
                    dest: Self::reg(regs, dest),
                    func: self.func_by_name[func.as_str()],
                    args,
                }
            }
            Instruction::Crash {
                location,
                crash_type,
            } => {
                self.crashes.push(CrashDesc {
                    location: location.clone(),
                    crash_type: crash_type.clone(),
                    block,
                });
                LInstr::Crash(self.crashes.len() as u32 - 1)
            }
            Instruction::Nop => LInstr::Nop,
        }
    }

    fn term(&self, t: &'a Terminator, regs: &mut HashMap<&'a str, u16>) -> LTerm {
        let b = |name: &String| self.block_by_name[name.as_str()];
        match t {
            Terminator::Jump(target) => LTerm::Jump(b(target)),
            Terminator::Return(e) => LTerm::Return(self.expr(e, regs)),
            Terminator::CondBranch {
                site,
                on_true,
                on_false,
            } => LTerm::Branch {
                site: self.site_by_name[site.id.as_str()],
                lhs: self.expr(&site.lhs, regs),
                rhs: self.expr(site.rhs.as_ref().expect("validated"), regs),
                on_true: b(on_true),
                on_false: b(on_false),
            },
            Terminator::Switch {
                site,
                cases,
                default,
            } => LTerm::Switch {
                site: self.site_by_name[site.id.as_str()],
                scrutinee: self.expr(&site.lhs, regs),
                cases: cases.iter().map(|(v, t)| (*v, b(t))).collect(),
                default: b(default),
            },
        }
    }
}

/// Entry block first, then the rest in text order.
fn ordered_blocks(f: &ir::FunctionDef) -> impl Iterator<Item = &ir::BasicBlock> {
    f.blocks
        .iter()
        .filter(move |b| b.id == f.entry_block)
        .chain(f.blocks.iter().filter(move |b| b.id != f.entry_block))
}

/// Which comparison a branch site evaluates, if it is an integer compare.
pub fn site_cmp(kind: SiteKind) -> Option<CmpOp> {
    match kind {
        SiteKind::IntCompare(op) => Some(op),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn indices_follow_program_order() {
        let p = Program::parse(
            "fn main() { block A: r = call f() br site=S1 (r == 1) -> B, C block B: crash \"x.c:1\" \"t\" ret 0 block C: ret 0 }
             fn f() { block F: br site=S2 (in[0] == 2) -> G, G block G: ret 1 }",
        )
        .unwrap();
        assert_eq!(p.block_count(), 5);
        assert_eq!(p.block("F"), Some(BlockIdx(3)));
        assert_eq!(p.site("S2"), Some(SiteIdx(1)));
        let s1 = p.site_desc(SiteIdx(0));
        assert_eq!(s1.successors, vec![BlockIdx(1), BlockIdx(2)]);
        assert_eq!(p.callees(BlockIdx(0)), vec![FuncIdx(1)]);
        assert_eq!(p.crashes()[0].block, BlockIdx(1));
        assert!(p.is_return_block(BlockIdx(4)));
    }
}

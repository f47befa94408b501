//! Deterministic interpreter for [`Program`]s.
//!
//! One run produces an [`ExecutionTrace`]: the block path, every constraint
//! site hit with the edge it took, coverage, an optional crash, and the data
//! conditions of the single focused site. Only the focused site's operand
//! values are recorded; all other sites contribute only their taken edge.

use crate::ir::{CmpOp, SiteKind};
use crate::program::{BlockIdx, FuncIdx, LExpr, LInstr, LTerm, Program, SiteIdx};
use smallvec::SmallVec;
use std::cmp::Ordering;
use std::fmt;

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;
pub const MAX_CALL_DEPTH: usize = 1024;

/// An operand value observed at a focused site.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Value {
    Int(i64),
    Bytes(Vec<u8>),
}

impl Value {
    /// Byte strings are read as little-endian integers (first eight bytes).
    pub fn as_int(&self) -> i64 {
        match self {
            Value::Int(v) => *v,
            Value::Bytes(b) => pack_le(b),
        }
    }

    /// Integers become their eight little-endian bytes.
    pub fn to_bytes(&self) -> Vec<u8> {
        match self {
            Value::Int(v) => v.to_le_bytes().to_vec(),
            Value::Bytes(b) => b.clone(),
        }
    }

    pub fn byte_len(&self) -> Option<usize> {
        match self {
            Value::Bytes(b) => Some(b.len()),
            Value::Int(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v:#x}"),
            Value::Bytes(b) => {
                f.write_str("x\"")?;
                for x in b {
                    write!(f, "{x:02X}")?;
                }
                f.write_str("\"")
            }
        }
    }
}

fn pack_le(b: &[u8]) -> i64 {
    let mut buf = [0u8; 8];
    let n = b.len().min(8);
    buf[..n].copy_from_slice(&b[..n]);
    i64::from_le_bytes(buf)
}

/// Operand values of one dynamic hit of the focused site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataCondition {
    pub site: SiteIdx,
    pub lhs: Value,
    /// `None` for switches: the scrutinee is compared against case constants.
    pub rhs: Option<Value>,
    /// 0 for the first dynamic hit of the site in this run.
    pub occurrence: u32,
}

impl DataCondition {
    pub fn lhs_len(&self) -> Option<usize> {
        self.lhs.byte_len()
    }

    pub fn rhs_len(&self) -> Option<usize> {
        self.rhs.as_ref().and_then(Value::byte_len)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CrashRecord {
    pub location: String,
    pub crash_type: String,
}

impl CrashRecord {
    pub fn dedup_key(&self) -> (&str, &str) {
        (&self.location, &self.crash_type)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SiteHit {
    pub site: SiteIdx,
    /// Index into the site's successor list.
    pub edge: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Halt {
    Returned(i64),
    Crashed,
    BudgetExhausted,
    CallDepthExceeded,
}

/// Fraction of the program's blocks a run visited, kept as a ratio so that
/// comparisons stay exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Coverage {
    pub hit: u32,
    pub total: u32,
}

impl Coverage {
    pub fn new(hit: u32, total: u32) -> Coverage {
        Coverage { hit, total }
    }

    pub fn fraction(self) -> f64 {
        self.hit as f64 / self.total as f64
    }

    /// Compares the two fractions exactly.
    pub fn cmp_fraction(self, other: Coverage) -> Ordering {
        (self.hit as u64 * other.total as u64).cmp(&(other.hit as u64 * self.total as u64))
    }
}

impl fmt::Display for Coverage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6}", self.fraction())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExecutionTrace {
    pub path: Vec<BlockIdx>,
    pub sites_hit: Vec<SiteHit>,
    pub focused: Vec<DataCondition>,
    pub coverage_count: u32,
    pub total_blocks: u32,
    pub crash: Option<CrashRecord>,
    pub exec_steps: u64,
    pub halt: Halt,
}

impl Default for ExecutionTrace {
    fn default() -> Self {
        ExecutionTrace {
            path: Vec::new(),
            sites_hit: Vec::new(),
            focused: Vec::new(),
            coverage_count: 0,
            total_blocks: 0,
            crash: None,
            exec_steps: 0,
            halt: Halt::Returned(0),
        }
    }
}

impl ExecutionTrace {
    pub fn coverage(&self) -> Coverage {
        Coverage::new(self.coverage_count, self.total_blocks)
    }

    /// The first dynamic observation of the focused site.
    pub fn first_observation(&self) -> Option<&DataCondition> {
        self.focused.first()
    }

    /// The edge taken at the first dynamic hit of `site`.
    pub fn first_edge(&self, site: SiteIdx) -> Option<u32> {
        self.sites_hit
            .iter()
            .find(|h| h.site == site)
            .map(|h| h.edge)
    }

    pub fn hits(&self, site: SiteIdx) -> bool {
        self.sites_hit.iter().any(|h| h.site == site)
    }

    /// Number of distinct sites hit.
    pub fn distinct_sites(&self) -> usize {
        let mut ids: Vec<u32> = self.sites_hit.iter().map(|h| h.site.0).collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }
}

/// C = coverage_count / total_block_count.
pub fn coverage_of(trace: &ExecutionTrace) -> Coverage {
    trace.coverage()
}

/// Something that can run the target. Implementations may refuse (return
/// `None`) once an execution budget is spent; callers must then unwind.
pub trait Harness {
    fn program(&self) -> &Program;
    fn run(&mut self, input: &[u8], focus: Option<SiteIdx>) -> Option<ExecutionTrace>;
}

#[derive(Debug, Clone)]
enum Rt {
    Int(i64),
    Bytes(SmallVec<[u8; 16]>),
}

impl Rt {
    #[inline]
    fn int(&self) -> i64 {
        match self {
            Rt::Int(v) => *v,
            Rt::Bytes(b) => pack_le(b),
        }
    }

    fn into_bytes(self) -> SmallVec<[u8; 16]> {
        match self {
            Rt::Bytes(b) => b,
            Rt::Int(v) => SmallVec::from_slice(&v.to_le_bytes()),
        }
    }
}

struct Frame {
    block: BlockIdx,
    pc: usize,
    regs: Vec<Rt>,
    /// Register in this frame that receives the pending callee's result.
    ret_dest: u16,
}

/// Reusable interpreter state for one program.
pub struct Executor<'p> {
    program: &'p Program,
    step_budget: u64,
    stamps: Vec<u32>,
    epoch: u32,
    stack: Vec<Frame>,
    spare_regs: Vec<Vec<Rt>>,
}

impl<'p> Executor<'p> {
    pub fn new(program: &'p Program) -> Self {
        Executor {
            program,
            step_budget: DEFAULT_STEP_BUDGET,
            stamps: vec![0; program.block_count()],
            epoch: 0,
            stack: Vec::new(),
            spare_regs: Vec::new(),
        }
    }

    pub fn with_step_budget(mut self, budget: u64) -> Self {
        assert!(budget > 0, "step budget must be positive");
        self.step_budget = budget;
        self
    }

    pub fn program(&self) -> &'p Program {
        self.program
    }

    pub fn run(&mut self, input: &[u8], focus: Option<SiteIdx>) -> ExecutionTrace {
        let mut out = ExecutionTrace::default();
        self.run_into(input, focus, &mut out);
        out
    }

    /// Runs into an existing trace, reusing its allocations.
    pub fn run_into(&mut self, input: &[u8], focus: Option<SiteIdx>, out: &mut ExecutionTrace) {
        out.path.clear();
        out.sites_hit.clear();
        out.focused.clear();
        out.crash = None;
        out.coverage_count = 0;
        out.total_blocks = self.program.block_count() as u32;
        self.epoch = self.epoch.wrapping_add(1);
        if self.epoch == 0 {
            self.stamps.iter_mut().for_each(|s| *s = 0);
            self.epoch = 1;
        }
        for f in self.stack.drain(..) {
            self.spare_regs.push(f.regs);
        }

        let program = self.program;
        let mut frame = self.new_frame(program.entry, Vec::new());
        self.visit(frame.block, out);
        let mut steps = 0u64;
        let mut focus_hits = 0u32;

        let halt = 'run: loop {
            let block = &program.blocks[frame.block.index()];
            if frame.pc < block.body.len() {
                if steps == self.step_budget {
                    break Halt::BudgetExhausted;
                }
                steps += 1;
                match &block.body[frame.pc] {
                    LInstr::Assign(r, e) => {
                        let v = eval(e, &frame.regs, input);
                        frame.regs[*r as usize] = v;
                        frame.pc += 1;
                    }
                    LInstr::Nop => frame.pc += 1,
                    LInstr::Crash(id) => {
                        let c = program.crash(*id);
                        out.crash = Some(CrashRecord {
                            location: c.location.clone(),
                            crash_type: c.crash_type.clone(),
                        });
                        break Halt::Crashed;
                    }
                    LInstr::Call { dest, func, args } => {
                        if self.stack.len() + 1 >= MAX_CALL_DEPTH {
                            break Halt::CallDepthExceeded;
                        }
                        let args: Vec<Rt> = args.iter().map(|a| eval(a, &frame.regs, input)).collect();
                        frame.pc += 1;
                        frame.ret_dest = *dest;
                        let callee = self.new_frame(*func, args);
                        self.stack.push(std::mem::replace(&mut frame, callee));
                        self.visit(frame.block, out);
                    }
                }
                continue;
            }

            if steps == self.step_budget {
                break Halt::BudgetExhausted;
            }
            steps += 1;
            let next = match &block.term {
                LTerm::Jump(t) => *t,
                LTerm::Branch {
                    site,
                    lhs,
                    rhs,
                    on_true,
                    on_false,
                } => {
                    let l = eval(lhs, &frame.regs, input);
                    let r = eval(rhs, &frame.regs, input);
                    let kind = program.site_desc(*site).kind;
                    let taken = match kind {
                        SiteKind::BytesEq => {
                            let (l, r) = (l.into_bytes(), r.into_bytes());
                            let eq = l == r;
                            if focus == Some(*site) {
                                out.focused.push(DataCondition {
                                    site: *site,
                                    lhs: Value::Bytes(l.into_vec()),
                                    rhs: Some(Value::Bytes(r.into_vec())),
                                    occurrence: focus_hits,
                                });
                                focus_hits += 1;
                            }
                            eq
                        }
                        SiteKind::IntCompare(op) => {
                            let (l, r) = (l.int(), r.int());
                            if focus == Some(*site) {
                                out.focused.push(DataCondition {
                                    site: *site,
                                    lhs: Value::Int(l),
                                    rhs: Some(Value::Int(r)),
                                    occurrence: focus_hits,
                                });
                                focus_hits += 1;
                            }
                            op.holds(l, r)
                        }
                        SiteKind::Switch => unreachable!("branch sites are never switches"),
                    };
                    out.sites_hit.push(SiteHit {
                        site: *site,
                        edge: if taken { 0 } else { 1 },
                    });
                    if taken {
                        *on_true
                    } else {
                        *on_false
                    }
                }
                LTerm::Switch {
                    site,
                    scrutinee,
                    cases,
                    default,
                } => {
                    let v = eval(scrutinee, &frame.regs, input).int();
                    if focus == Some(*site) {
                        out.focused.push(DataCondition {
                            site: *site,
                            lhs: Value::Int(v),
                            rhs: None,
                            occurrence: focus_hits,
                        });
                        focus_hits += 1;
                    }
                    let (edge, target) = cases
                        .iter()
                        .enumerate()
                        .find(|(_, (c, _))| *c == v)
                        .map(|(i, (_, t))| (i as u32, *t))
                        .unwrap_or((cases.len() as u32, *default));
                    out.sites_hit.push(SiteHit { site: *site, edge });
                    target
                }
                LTerm::Return(e) => {
                    let v = eval(e, &frame.regs, input);
                    match self.stack.pop() {
                        None => break 'run Halt::Returned(v.int()),
                        Some(mut caller) => {
                            caller.regs[caller.ret_dest as usize] = v;
                            let done = std::mem::replace(&mut frame, caller);
                            self.spare_regs.push(done.regs);
                            // Re-entering the caller block follows the return edge.
                            out.path.push(frame.block);
                            continue;
                        }
                    }
                }
            };
            frame.block = next;
            frame.pc = 0;
            self.visit(next, out);
        };

        self.spare_regs.push(frame.regs);
        out.exec_steps = steps;
        out.halt = halt;
    }

    fn new_frame(&mut self, func: FuncIdx, args: Vec<Rt>) -> Frame {
        let f = &self.program.funcs[func.index()];
        let mut regs = self.spare_regs.pop().unwrap_or_default();
        regs.clear();
        regs.extend(args.into_iter().take(f.params as usize));
        regs.resize(f.regs as usize, Rt::Int(0));
        Frame {
            block: f.entry,
            pc: 0,
            regs,
            ret_dest: 0,
        }
    }

    #[inline]
    fn visit(&mut self, b: BlockIdx, out: &mut ExecutionTrace) {
        out.path.push(b);
        let stamp = &mut self.stamps[b.index()];
        if *stamp != self.epoch {
            *stamp = self.epoch;
            out.coverage_count += 1;
        }
    }
}

impl Harness for Executor<'_> {
    fn program(&self) -> &Program {
        self.program
    }

    fn run(&mut self, input: &[u8], focus: Option<SiteIdx>) -> Option<ExecutionTrace> {
        Some(Executor::run(self, input, focus))
    }
}

/// Runs `program` once on `input`.
pub fn execute(
    program: &Program,
    input: &[u8],
    focus: Option<SiteIdx>,
    step_budget: u64,
) -> ExecutionTrace {
    Executor::new(program)
        .with_step_budget(step_budget)
        .run(input, focus)
}

fn input_byte(input: &[u8], index: i64) -> u8 {
    usize::try_from(index)
        .ok()
        .and_then(|i| input.get(i))
        .copied()
        .unwrap_or(0)
}

fn eval(e: &LExpr, regs: &[Rt], input: &[u8]) -> Rt {
    match e {
        LExpr::Const(v) => Rt::Int(*v),
        LExpr::Reg(r) => regs[*r as usize].clone(),
        LExpr::InputByte(i) => Rt::Int(input_byte(input, eval(i, regs, input).int()) as i64),
        LExpr::InputLen => Rt::Int(input.len() as i64),
        LExpr::Arith(op, a, b) => {
            let a = eval(a, regs, input).int();
            let b = eval(b, regs, input).int();
            Rt::Int(op.apply(a, b))
        }
        LExpr::ByteLit(b) => Rt::Bytes(SmallVec::from_slice(b)),
        LExpr::Slice(off, len) => {
            let off = eval(off, regs, input).int();
            let mut out = SmallVec::with_capacity(*len as usize);
            match usize::try_from(off) {
                Ok(start) if start < input.len() => {
                    let end = start.saturating_add(*len as usize).min(input.len());
                    out.extend_from_slice(&input[start..end]);
                    out.resize(*len as usize, 0);
                }
                _ => out.resize(*len as usize, 0),
            }
            Rt::Bytes(out)
        }
    }
}

/// Branch distance toward making `op` evaluate to `want`: zero iff the
/// comparison already has that outcome. For `want == true` on `==` this is
/// `|lhs - rhs|`.
pub fn branch_distance(op: CmpOp, want: bool, lhs: i64, rhs: i64) -> u128 {
    let op = if want { op } else { op.negate() };
    let (l, r) = (lhs as i128, rhs as i128);
    let d = match op {
        CmpOp::Eq => (l - r).abs(),
        CmpOp::Ne => i128::from(l == r),
        CmpOp::Lt => (l - r + 1).max(0),
        CmpOp::Le => (l - r).max(0),
        CmpOp::Gt => (r - l + 1).max(0),
        CmpOp::Ge => (r - l).max(0),
    };
    d as u128
}

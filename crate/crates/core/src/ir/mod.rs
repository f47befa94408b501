//! Target-program representation.
//!
//! A [`TargetProgram`] is a set of functions made of basic blocks. Every
//! conditional control transfer is a [`ConstraintSite`] with an authored,
//! program-wide unique identifier; those identifiers are what the fuzzer
//! schedules, focuses and solves.
//!
//! The textual form is documented in `docs/ir.md` at the repository root;
//! [`parse_program`] and [`serialize_program`] convert between the two.

mod parse;
mod print;
mod validate;

pub use parse::{parse_program, ParseError};
pub use print::{serialize_program, SerializeError};
pub use validate::{validate, Diagnostic};

use std::fmt;

/// Binary arithmetic operators. All arithmetic is 64-bit wrapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArithOp {
    Add,
    Sub,
    Mul,
    Div,
    Mod,
    Xor,
    And,
    Or,
    Shl,
    Shr,
}

impl ArithOp {
    pub fn symbol(self) -> &'static str {
        match self {
            ArithOp::Add => "+",
            ArithOp::Sub => "-",
            ArithOp::Mul => "*",
            ArithOp::Div => "/",
            ArithOp::Mod => "%",
            ArithOp::Xor => "^",
            ArithOp::And => "&",
            ArithOp::Or => "|",
            ArithOp::Shl => "<<",
            ArithOp::Shr => ">>",
        }
    }

    /// Division and modulo by zero yield 0; shifts use the low six bits of
    /// the amount and `>>` is a logical shift.
    pub fn apply(self, a: i64, b: i64) -> i64 {
        match self {
            ArithOp::Add => a.wrapping_add(b),
            ArithOp::Sub => a.wrapping_sub(b),
            ArithOp::Mul => a.wrapping_mul(b),
            ArithOp::Div => {
                if b == 0 {
                    0
                } else {
                    a.wrapping_div(b)
                }
            }
            ArithOp::Mod => {
                if b == 0 {
                    0
                } else {
                    a.wrapping_rem(b)
                }
            }
            ArithOp::Xor => a ^ b,
            ArithOp::And => a & b,
            ArithOp::Or => a | b,
            ArithOp::Shl => a.wrapping_shl((b & 63) as u32),
            ArithOp::Shr => ((a as u64) >> (b & 63)) as i64,
        }
    }
}

/// Integer comparison operators (signed).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
        }
    }

    pub fn holds(self, a: i64, b: i64) -> bool {
        match self {
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
        }
    }

    /// The operator whose truth value is the negation of `self`.
    pub fn negate(self) -> CmpOp {
        match self {
            CmpOp::Eq => CmpOp::Ne,
            CmpOp::Ne => CmpOp::Eq,
            CmpOp::Lt => CmpOp::Ge,
            CmpOp::Le => CmpOp::Gt,
            CmpOp::Gt => CmpOp::Le,
            CmpOp::Ge => CmpOp::Lt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Expr {
    Const(i64),
    /// Byte-string literal, written `x"7F454C"`.
    ByteLit(Vec<u8>),
    Reg(String),
    /// `in[i]`; out-of-bounds reads yield 0.
    InputByte(Box<Expr>),
    /// `inlen`
    InputLen,
    Arith(ArithOp, Box<Expr>, Box<Expr>),
    /// `bytes(off, len)`: a byte string of exactly `len` bytes, zero-padded
    /// past the end of the input.
    ByteSlice(Box<Expr>, u32),
}

impl Expr {
    pub fn arith(op: ArithOp, lhs: Expr, rhs: Expr) -> Expr {
        Expr::Arith(op, Box::new(lhs), Box::new(rhs))
    }

    pub fn input_byte(index: Expr) -> Expr {
        Expr::InputByte(Box::new(index))
    }

    pub fn input_at(offset: usize) -> Expr {
        Expr::InputByte(Box::new(Expr::Const(offset as i64)))
    }

    pub fn slice(offset: usize, len: u32) -> Expr {
        Expr::ByteSlice(Box::new(Expr::Const(offset as i64)), len)
    }

    pub fn reg(name: impl Into<String>) -> Expr {
        Expr::Reg(name.into())
    }

    /// Visits every register name referenced by the expression.
    pub fn registers<'a>(&'a self, out: &mut Vec<&'a str>) {
        match self {
            Expr::Reg(r) => out.push(r),
            Expr::InputByte(e) | Expr::ByteSlice(e, _) => e.registers(out),
            Expr::Arith(_, a, b) => {
                a.registers(out);
                b.registers(out);
            }
            Expr::Const(_) | Expr::ByteLit(_) | Expr::InputLen => {}
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Instruction {
    Assign {
        dest: String,
        expr: Expr,
    },
    Call {
        dest: String,
        func: String,
        args: Vec<Expr>,
    },
    /// Halts execution with a crash attributed to `location` (a
    /// `file:line`-style label).
    Crash {
        location: String,
        crash_type: String,
    },
    Nop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SiteKind {
    IntCompare(CmpOp),
    /// Equality of two byte strings (the `memcmp`/`strcmp` family).
    BytesEq,
    Switch,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSite {
    pub id: String,
    pub kind: SiteKind,
    /// For switches this is the scrutinee.
    pub lhs: Expr,
    /// Absent for switches, which compare the scrutinee to case constants.
    pub rhs: Option<Expr>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Terminator {
    Jump(String),
    CondBranch {
        site: ConstraintSite,
        on_true: String,
        on_false: String,
    },
    Switch {
        site: ConstraintSite,
        cases: Vec<(i64, String)>,
        default: String,
    },
    Return(Expr),
}

impl Terminator {
    /// Successor block names, in edge-index order. For a conditional branch
    /// edge 0 is the true edge; for a switch the default edge comes last.
    pub fn successors(&self) -> Vec<&str> {
        match self {
            Terminator::Jump(t) => vec![t],
            Terminator::CondBranch {
                on_true, on_false, ..
            } => vec![on_true, on_false],
            Terminator::Switch { cases, default, .. } => cases
                .iter()
                .map(|(_, t)| t.as_str())
                .chain(std::iter::once(default.as_str()))
                .collect(),
            Terminator::Return(_) => Vec::new(),
        }
    }

    pub fn site(&self) -> Option<&ConstraintSite> {
        match self {
            Terminator::CondBranch { site, .. } | Terminator::Switch { site, .. } => Some(site),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BasicBlock {
    pub id: String,
    pub body: Vec<Instruction>,
    pub terminator: Terminator,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDef {
    pub name: String,
    pub params: Vec<String>,
    pub blocks: Vec<BasicBlock>,
    pub entry_block: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetProgram {
    pub functions: Vec<FunctionDef>,
    pub entry: String,
}

impl TargetProgram {
    pub fn total_block_count(&self) -> usize {
        self.functions.iter().map(|f| f.blocks.len()).sum()
    }

    pub fn function(&self, name: &str) -> Option<&FunctionDef> {
        self.functions.iter().find(|f| f.name == name)
    }

    pub fn blocks(&self) -> impl Iterator<Item = (&FunctionDef, &BasicBlock)> {
        self.functions
            .iter()
            .flat_map(|f| f.blocks.iter().map(move |b| (f, b)))
    }

    pub fn sites(&self) -> impl Iterator<Item = &ConstraintSite> {
        self.blocks().filter_map(|(_, b)| b.terminator.site())
    }

    /// Location labels of every `crash` instruction, in program order.
    pub fn crash_locations(&self) -> Vec<&str> {
        self.blocks()
            .flat_map(|(_, b)| b.body.iter())
            .filter_map(|i| match i {
                Instruction::Crash { location, .. } => Some(location.as_str()),
                _ => None,
            })
            .collect()
    }
}

impl fmt::Display for TargetProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match serialize_program(self) {
            Ok(text) => f.write_str(&text),
            Err(_) => write!(f, "<invalid program>"),
        }
    }
}

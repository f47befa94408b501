use super::{Expr, Instruction, SiteKind, TargetProgram, Terminator};
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("refusing to serialize an invalid program: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
pub struct SerializeError(pub Vec<super::Diagnostic>);

/// Renders a valid program in canonical text form. Arithmetic is fully
/// parenthesized so that parsing the output reproduces the same tree.
pub fn serialize_program(p: &TargetProgram) -> Result<String, SerializeError> {
    let diags = super::validate(p);
    if !diags.is_empty() {
        return Err(SerializeError(diags));
    }
    let mut out = String::new();
    let _ = writeln!(out, "entry {}", p.entry);
    for f in &p.functions {
        let _ = writeln!(out, "\nfn {}({}) {{", f.name, f.params.join(", "));
        // The parser takes the first block as the function entry.
        let ordered = f
            .blocks
            .iter()
            .filter(|b| b.id == f.entry_block)
            .chain(f.blocks.iter().filter(|b| b.id != f.entry_block));
        for b in ordered {
            let _ = writeln!(out, "  block {}:", b.id);
            for ins in &b.body {
                let _ = writeln!(out, "    {}", instruction(ins));
            }
            let _ = writeln!(out, "    {}", terminator(&b.terminator));
        }
        out.push_str("}\n");
    }
    Ok(out)
}

fn instruction(ins: &Instruction) -> String {
    match ins {
        Instruction::Assign { dest, expr: e } => format!("{dest} = {}", expr(e)),
        Instruction::Call { dest, func, args } => format!(
            "{dest} = call {func}({})",
            args.iter().map(expr).collect::<Vec<_>>().join(", ")
        ),
        Instruction::Crash {
            location,
            crash_type,
        } => format!("crash {} {}", quote(location), quote(crash_type)),
        Instruction::Nop => "nop".to_string(),
    }
}

fn terminator(t: &Terminator) -> String {
    match t {
        Terminator::Jump(b) => format!("jmp {b}"),
        Terminator::Return(e) => format!("ret {}", expr(e)),
        Terminator::CondBranch {
            site,
            on_true,
            on_false,
        } => {
            let rhs = site.rhs.as_ref().map(expr).unwrap_or_default();
            let cond = match site.kind {
                SiteKind::BytesEq => format!("memeq({}, {rhs})", expr(&site.lhs)),
                SiteKind::IntCompare(op) => format!("({} {} {rhs})", expr(&site.lhs), op.symbol()),
                SiteKind::Switch => unreachable!("validated: branch sites are never switch sites"),
            };
            format!("br site={} {cond} -> {on_true}, {on_false}", site.id)
        }
        Terminator::Switch {
            site,
            cases,
            default,
        } => format!(
            "switch site={} ({}) [{}] default {default}",
            site.id,
            expr(&site.lhs),
            cases
                .iter()
                .map(|(v, b)| format!("{v} -> {b}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    }
}

fn expr(e: &Expr) -> String {
    match e {
        Expr::Const(v) => v.to_string(),
        Expr::ByteLit(bytes) => {
            let mut s = String::from("x\"");
            for b in bytes {
                let _ = write!(s, "{b:02X}");
            }
            s.push('"');
            s
        }
        Expr::Reg(r) => r.clone(),
        Expr::InputByte(i) => format!("in[{}]", expr(i)),
        Expr::InputLen => "inlen".to_string(),
        Expr::Arith(op, a, b) => format!("({} {} {})", expr(a), op.symbol(), expr(b)),
        Expr::ByteSlice(off, len) => format!("bytes({}, {len})", expr(off)),
    }
}

fn quote(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        if c == '"' || c == '\\' {
            out.push('\\');
        }
        out.push(c);
    }
    out.push('"');
    out
}

use super::{
    ArithOp, BasicBlock, CmpOp, ConstraintSite, Expr, FunctionDef, Instruction, SiteKind,
    TargetProgram, Terminator,
};
use std::fmt;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ParseError {
    #[error("{line}:{col}: {msg}")]
    Syntax { line: u32, col: u32, msg: String },
    #[error("invalid program: {}", .0.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<super::Diagnostic>),
}

impl ParseError {
    fn at(pos: Pos, msg: impl Into<String>) -> Self {
        ParseError::Syntax {
            line: pos.line,
            col: pos.col,
            msg: msg.into(),
        }
    }
}

/// Parses and validates a program in the textual IR format.
pub fn parse_program(text: &str) -> Result<TargetProgram, ParseError> {
    let tokens = lex(text)?;
    let mut parser = Parser { tokens, pos: 0 };
    let program = parser.program()?;
    let diags = super::validate(&program);
    if diags.is_empty() {
        Ok(program)
    } else {
        Err(ParseError::Invalid(diags))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Pos {
    line: u32,
    col: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Tok {
    Ident(String),
    Int(u64),
    Str(String),
    Hex(Vec<u8>),
    Punct(&'static str),
    Eof,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Int(v) => write!(f, "integer {v}"),
            Tok::Str(s) => write!(f, "string {s:?}"),
            Tok::Hex(_) => write!(f, "byte literal"),
            Tok::Punct(p) => write!(f, "`{p}`"),
            Tok::Eof => write!(f, "end of input"),
        }
    }
}

// Longest match first.
const PUNCTS: &[&str] = &[
    "->", "==", "!=", "<=", ">=", "<<", ">>", "(", ")", "[", "]", "{", "}", ",", ":", ";", "=",
    "<", ">", "+", "-", "*", "/", "%", "^", "&", "|",
];

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseError> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1u32, 1u32);

    let advance = |i: &mut usize, line: &mut u32, col: &mut u32, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };

    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
            continue;
        }
        if c == '/' && chars.get(i + 1) == Some(&'/') {
            while i < chars.len() && chars[i] != '\n' {
                advance(&mut i, &mut line, &mut col, 1);
            }
            continue;
        }
        if c == 'x' && chars.get(i + 1) == Some(&'"') {
            let start = i + 2;
            let mut j = start;
            while j < chars.len() && chars[j] != '"' {
                j += 1;
            }
            if j >= chars.len() {
                return Err(ParseError::at(pos, "unterminated byte literal"));
            }
            let digits: String = chars[start..j].iter().collect();
            let bytes = decode_hex(&digits).ok_or_else(|| {
                ParseError::at(pos, format!("malformed byte literal x\"{digits}\""))
            })?;
            out.push((Tok::Hex(bytes), pos));
            let n = j + 1 - i;
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        if c.is_ascii_alphabetic() || c == '_' {
            let mut j = i;
            while j < chars.len()
                && (chars[j].is_ascii_alphanumeric() || chars[j] == '_' || chars[j] == '.')
            {
                j += 1;
            }
            out.push((Tok::Ident(chars[i..j].iter().collect()), pos));
            let n = j - i;
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        if c.is_ascii_digit() {
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                j += 1;
            }
            let raw: String = chars[i..j].iter().filter(|c| **c != '_').collect();
            let value = if let Some(hex) = raw.strip_prefix("0x").or(raw.strip_prefix("0X")) {
                u64::from_str_radix(hex, 16)
            } else {
                raw.parse::<u64>()
            }
            .map_err(|_| ParseError::at(pos, format!("malformed integer literal `{raw}`")))?;
            out.push((Tok::Int(value), pos));
            let n = j - i;
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        if c == '"' {
            let mut j = i + 1;
            let mut s = String::new();
            while j < chars.len() && chars[j] != '"' {
                if chars[j] == '\\' && j + 1 < chars.len() {
                    j += 1;
                }
                if chars[j] == '\n' {
                    return Err(ParseError::at(pos, "unterminated string literal"));
                }
                s.push(chars[j]);
                j += 1;
            }
            if j >= chars.len() {
                return Err(ParseError::at(pos, "unterminated string literal"));
            }
            out.push((Tok::Str(s), pos));
            let n = j + 1 - i;
            advance(&mut i, &mut line, &mut col, n);
            continue;
        }
        let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
        match PUNCTS.iter().find(|p| rest.starts_with(**p)) {
            Some(p) => {
                out.push((Tok::Punct(p), pos));
                advance(&mut i, &mut line, &mut col, p.len());
            }
            None => return Err(ParseError::at(pos, format!("unexpected character `{c}`"))),
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

pub(crate) fn decode_hex(digits: &str) -> Option<Vec<u8>> {
    let digits: Vec<char> = digits.chars().filter(|c| !c.is_whitespace()).collect();
    if !digits.len().is_multiple_of(2) {
        return None;
    }
    digits
        .chunks(2)
        .map(|pair| {
            let hi = pair[0].to_digit(16)?;
            let lo = pair[1].to_digit(16)?;
            Some((hi * 16 + lo) as u8)
        })
        .collect()
}

const KEYWORDS: &[&str] = &[
    "fn", "block", "entry", "jmp", "br", "switch", "ret", "crash", "nop", "call", "site", "memeq",
    "default", "in", "inlen", "bytes",
];

pub(crate) fn is_keyword(s: &str) -> bool {
    KEYWORDS.contains(&s)
}

struct Parser {
    tokens: Vec<(Tok, Pos)>,
    pos: usize,
}

impl Parser {
    fn peek(&self) -> &Tok {
        &self.tokens[self.pos].0
    }

    fn peek_at(&self, n: usize) -> &Tok {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)].0
    }

    fn here(&self) -> Pos {
        self.tokens[self.pos].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.tokens[self.pos].0.clone();
        if self.pos + 1 < self.tokens.len() {
            self.pos += 1;
        }
        t
    }

    fn unexpected<T>(&self, wanted: &str) -> Result<T, ParseError> {
        Err(ParseError::at(
            self.here(),
            format!("expected {wanted}, found {}", self.peek()),
        ))
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_kw(&self, kw: &str) -> bool {
        matches!(self.peek(), Tok::Ident(s) if s == kw)
    }

    fn eat_punct(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect_punct(&mut self, p: &str) -> Result<(), ParseError> {
        if self.eat_punct(p) {
            Ok(())
        } else {
            self.unexpected(&format!("`{p}`"))
        }
    }

    fn expect_kw(&mut self, kw: &str) -> Result<(), ParseError> {
        if self.is_kw(kw) {
            self.bump();
            Ok(())
        } else {
            self.unexpected(&format!("`{kw}`"))
        }
    }

    fn name(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Ident(s) if !is_keyword(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => self.unexpected(what),
        }
    }

    fn string(&mut self, what: &str) -> Result<String, ParseError> {
        match self.peek() {
            Tok::Str(s) => {
                let s = s.clone();
                self.bump();
                Ok(s)
            }
            _ => self.unexpected(what),
        }
    }

    fn skip_separators(&mut self) {
        while self.eat_punct(";") {}
    }

    fn program(&mut self) -> Result<TargetProgram, ParseError> {
        let mut entry = None;
        let mut functions = Vec::new();
        loop {
            self.skip_separators();
            if matches!(self.peek(), Tok::Eof) {
                break;
            }
            if self.is_kw("entry") {
                self.bump();
                entry = Some(self.name("entry function name")?);
            } else if self.is_kw("fn") {
                functions.push(self.function()?);
            } else {
                return self.unexpected("`fn` or `entry`");
            }
        }
        let entry = entry
            .or_else(|| functions.iter().find(|f| f.name == "main").map(|f| f.name.clone()))
            .or_else(|| functions.first().map(|f| f.name.clone()))
            .unwrap_or_default();
        Ok(TargetProgram { functions, entry })
    }

    fn function(&mut self) -> Result<FunctionDef, ParseError> {
        self.expect_kw("fn")?;
        let name = self.name("function name")?;
        self.expect_punct("(")?;
        let mut params = Vec::new();
        if !self.is_punct(")") {
            loop {
                params.push(self.name("parameter name")?);
                if !self.eat_punct(",") {
                    break;
                }
            }
        }
        self.expect_punct(")")?;
        self.expect_punct("{")?;
        let mut blocks = Vec::new();
        loop {
            self.skip_separators();
            if self.eat_punct("}") {
                break;
            }
            blocks.push(self.block()?);
        }
        let entry_block = blocks.first().map(|b| b.id.clone()).unwrap_or_default();
        Ok(FunctionDef {
            name,
            params,
            blocks,
            entry_block,
        })
    }

    fn block(&mut self) -> Result<BasicBlock, ParseError> {
        self.expect_kw("block")?;
        let id = self.name("block identifier")?;
        self.expect_punct(":")?;
        let mut body = Vec::new();
        loop {
            self.skip_separators();
            if let Some(terminator) = self.terminator()? {
                return Ok(BasicBlock {
                    id,
                    body,
                    terminator,
                });
            }
            body.push(self.instruction()?);
        }
    }

    fn instruction(&mut self) -> Result<Instruction, ParseError> {
        if self.is_kw("nop") {
            self.bump();
            return Ok(Instruction::Nop);
        }
        if self.is_kw("crash") {
            self.bump();
            let location = self.string("crash location string")?;
            let crash_type = self.string("crash type string")?;
            return Ok(Instruction::Crash {
                location,
                crash_type,
            });
        }
        let dest = match self.peek() {
            Tok::Ident(s) if !is_keyword(s) => self.name("register")?,
            _ => return self.unexpected("instruction or terminator"),
        };
        self.expect_punct("=")?;
        if self.is_kw("call") {
            self.bump();
            let func = self.name("function name")?;
            self.expect_punct("(")?;
            let mut args = Vec::new();
            if !self.is_punct(")") {
                loop {
                    args.push(self.expr()?);
                    if !self.eat_punct(",") {
                        break;
                    }
                }
            }
            self.expect_punct(")")?;
            return Ok(Instruction::Call { dest, func, args });
        }
        let expr = self.expr()?;
        Ok(Instruction::Assign { dest, expr })
    }

    fn site_id(&mut self) -> Result<String, ParseError> {
        self.expect_kw("site")?;
        self.expect_punct("=")?;
        self.name("site identifier")
    }

    fn terminator(&mut self) -> Result<Option<Terminator>, ParseError> {
        if self.is_kw("jmp") {
            self.bump();
            return Ok(Some(Terminator::Jump(self.name("jump target")?)));
        }
        if self.is_kw("ret") {
            self.bump();
            return Ok(Some(Terminator::Return(self.expr()?)));
        }
        if self.is_kw("br") {
            self.bump();
            let id = self.site_id()?;
            let (kind, lhs, rhs) = if self.is_kw("memeq") {
                self.bump();
                self.expect_punct("(")?;
                let lhs = self.expr()?;
                self.expect_punct(",")?;
                let rhs = self.expr()?;
                self.expect_punct(")")?;
                (SiteKind::BytesEq, lhs, rhs)
            } else {
                self.expect_punct("(")?;
                let lhs = self.expr()?;
                let op = match self.bump() {
                    Tok::Punct("==") => CmpOp::Eq,
                    Tok::Punct("!=") => CmpOp::Ne,
                    Tok::Punct("<") => CmpOp::Lt,
                    Tok::Punct("<=") => CmpOp::Le,
                    Tok::Punct(">") => CmpOp::Gt,
                    Tok::Punct(">=") => CmpOp::Ge,
                    _ => {
                        self.pos -= 1;
                        return self.unexpected("comparison operator");
                    }
                };
                let rhs = self.expr()?;
                self.expect_punct(")")?;
                (SiteKind::IntCompare(op), lhs, rhs)
            };
            self.expect_punct("->")?;
            let on_true = self.name("true-edge target")?;
            self.expect_punct(",")?;
            let on_false = self.name("false-edge target")?;
            return Ok(Some(Terminator::CondBranch {
                site: ConstraintSite {
                    id,
                    kind,
                    lhs,
                    rhs: Some(rhs),
                },
                on_true,
                on_false,
            }));
        }
        if self.is_kw("switch") {
            self.bump();
            let id = self.site_id()?;
            self.expect_punct("(")?;
            let scrutinee = self.expr()?;
            self.expect_punct(")")?;
            self.expect_punct("[")?;
            let mut cases = Vec::new();
            if !self.is_punct("]") {
                loop {
                    let value = self.signed_int()?;
                    self.expect_punct("->")?;
                    cases.push((value, self.name("case target")?));
                    if !self.eat_punct(",") {
                        break;
                    }
                }
            }
            self.expect_punct("]")?;
            self.expect_kw("default")?;
            let default = self.name("default target")?;
            return Ok(Some(Terminator::Switch {
                site: ConstraintSite {
                    id,
                    kind: SiteKind::Switch,
                    lhs: scrutinee,
                    rhs: None,
                },
                cases,
                default,
            }));
        }
        Ok(None)
    }

    fn signed_int(&mut self) -> Result<i64, ParseError> {
        let negative = self.eat_punct("-");
        match self.bump() {
            Tok::Int(v) => Ok(if negative {
                (v as i64).wrapping_neg()
            } else {
                v as i64
            }),
            _ => {
                self.pos -= 1;
                self.unexpected("integer constant")
            }
        }
    }

    // Precedence, loosest first: | ^ & (<< >>) (+ -) (* / %)
    fn expr(&mut self) -> Result<Expr, ParseError> {
        self.binary(0)
    }

    fn binary(&mut self, level: usize) -> Result<Expr, ParseError> {
        const LEVELS: &[&[(&str, ArithOp)]] = &[
            &[("|", ArithOp::Or)],
            &[("^", ArithOp::Xor)],
            &[("&", ArithOp::And)],
            &[("<<", ArithOp::Shl), (">>", ArithOp::Shr)],
            &[("+", ArithOp::Add), ("-", ArithOp::Sub)],
            &[("*", ArithOp::Mul), ("/", ArithOp::Div), ("%", ArithOp::Mod)],
        ];
        if level == LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        'outer: loop {
            for (sym, op) in LEVELS[level] {
                if self.is_punct(sym) {
                    self.bump();
                    let rhs = self.binary(level + 1)?;
                    lhs = Expr::arith(*op, lhs, rhs);
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> Result<Expr, ParseError> {
        if self.is_punct("-") {
            self.bump();
            if let Tok::Int(v) = self.peek().clone() {
                self.bump();
                return Ok(Expr::Const((v as i64).wrapping_neg()));
            }
            let operand = self.unary()?;
            return Ok(Expr::arith(ArithOp::Sub, Expr::Const(0), operand));
        }
        self.primary()
    }

    fn primary(&mut self) -> Result<Expr, ParseError> {
        match self.peek().clone() {
            Tok::Int(v) => {
                self.bump();
                Ok(Expr::Const(v as i64))
            }
            Tok::Hex(bytes) => {
                self.bump();
                Ok(Expr::ByteLit(bytes))
            }
            Tok::Punct("(") => {
                self.bump();
                let e = self.expr()?;
                self.expect_punct(")")?;
                Ok(e)
            }
            Tok::Ident(s) if s == "inlen" => {
                self.bump();
                Ok(Expr::InputLen)
            }
            Tok::Ident(s) if s == "in" && matches!(self.peek_at(1), Tok::Punct("[")) => {
                self.bump();
                self.bump();
                let index = self.expr()?;
                self.expect_punct("]")?;
                Ok(Expr::input_byte(index))
            }
            Tok::Ident(s) if s == "bytes" => {
                self.bump();
                self.expect_punct("(")?;
                let offset = self.expr()?;
                self.expect_punct(",")?;
                let len = match self.bump() {
                    Tok::Int(v) if v <= u32::MAX as u64 => v as u32,
                    _ => {
                        self.pos -= 1;
                        return self.unexpected("constant slice length");
                    }
                };
                self.expect_punct(")")?;
                Ok(Expr::ByteSlice(Box::new(offset), len))
            }
            Tok::Ident(s) if !is_keyword(&s) => {
                self.bump();
                Ok(Expr::Reg(s))
            }
            _ => self.unexpected("expression"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_program() {
        let p = parse_program("fn main() { block B0: ret 0 }").unwrap();
        assert_eq!(p.total_block_count(), 1);
        assert_eq!(p.entry, "main");
        assert_eq!(p.functions[0].entry_block, "B0");
    }

    #[test]
    fn undefined_branch_target_is_named() {
        let text = "fn main() {\n block B0:\n  br site=S1 (in[0] == 1) -> B1, B9\n block B1:\n  ret 0\n}";
        let err = parse_program(text).unwrap_err().to_string();
        assert!(err.contains("B9"), "{err}");
    }

    #[test]
    fn syntax_error_carries_position() {
        let err = parse_program("fn main() {\n  block B0:\n    r = (1 +\n}").unwrap_err();
        match err {
            ParseError::Syntax { line, col, .. } => {
                assert_eq!(line, 4);
                assert_eq!(col, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_site_rejected() {
        let text = "fn main() { block B0: br site=S1 (1 == 1) -> B1, B1 block B1: br site=S1 (1 == 2) -> B2, B2 block B2: ret 0 }";
        let err = parse_program(text).unwrap_err().to_string();
        assert!(err.contains("S1"), "{err}");
    }

    #[test]
    fn precedence_and_unary_minus() {
        let p = parse_program("fn main() { block B0: r = 1 + 2 * 3 | -4 ret r }").unwrap();
        let Instruction::Assign { expr, .. } = &p.functions[0].blocks[0].body[0] else {
            panic!()
        };
        let expected = Expr::arith(
            ArithOp::Or,
            Expr::arith(
                ArithOp::Add,
                Expr::Const(1),
                Expr::arith(ArithOp::Mul, Expr::Const(2), Expr::Const(3)),
            ),
            Expr::Const(-4),
        );
        assert_eq!(expr, &expected);
    }

    #[test]
    fn all_statement_forms() {
        let text = r#"
            entry main
            fn helper(a, b) {
              block H0:
                ret a + b
            }
            fn main() {
              block B0:
                x = call helper(in[0], 0x10); nop
                br site=S1 memeq(bytes(0, 3), x"7F454C") -> B1, B2
              block B1:
                crash "elf.c:12" "heap-buffer-overflow"
                ret 1
              block B2:
                switch site=S2 (in[x]) [0 -> B1, -5 -> B3] default B3
              block B3:
                jmp B4
              block B4:
                ret inlen
            }
        "#;
        let p = parse_program(text).unwrap();
        assert_eq!(p.total_block_count(), 6);
        assert_eq!(p.sites().count(), 2);
        assert_eq!(p.crash_locations(), vec!["elf.c:12"]);
        let Terminator::Switch { cases, .. } = &p.functions[1].blocks[2].terminator else {
            panic!()
        };
        assert_eq!(cases[1].0, -5);
    }

    #[test]
    fn hex_literals() {
        assert_eq!(decode_hex("7F454C"), Some(vec![0x7f, 0x45, 0x4c]));
        assert_eq!(decode_hex("7F4"), None);
        assert_eq!(decode_hex(""), Some(vec![]));
        let p = parse_program("fn main() { block B0: r = 0xFFFFFFFFFFFFFFFF ret r }").unwrap();
        let Instruction::Assign { expr, .. } = &p.functions[0].blocks[0].body[0] else {
            panic!()
        };
        assert_eq!(expr, &Expr::Const(-1));
    }
}

use super::{Instruction, TargetProgram, Terminator};
use std::collections::{HashMap, HashSet};
use std::fmt;

/// One violated program invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Diagnostic {
    NoFunctions,
    MissingEntry(String),
    DuplicateFunction(String),
    EmptyFunction(String),
    MissingEntryBlock { func: String, block: String },
    DuplicateBlock { block: String, first: String, second: String },
    UndefinedBlock { func: String, from: String, target: String },
    UndefinedFunction { func: String, block: String, callee: String },
    ArityMismatch { block: String, callee: String, expected: usize, found: usize },
    DuplicateSite { site: String, first: String, second: String },
    DuplicateCase { site: String, value: i64 },
    EmptyCrashLocation { block: String },
    KeywordName(String),
    SiteKindMismatch { site: String },
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diagnostic::NoFunctions => write!(f, "program has no functions"),
            Diagnostic::MissingEntry(e) => write!(f, "entry function `{e}` is not defined"),
            Diagnostic::DuplicateFunction(n) => write!(f, "function `{n}` is defined twice"),
            Diagnostic::EmptyFunction(n) => write!(f, "function `{n}` has no blocks"),
            Diagnostic::MissingEntryBlock { func, block } => {
                write!(f, "entry block `{block}` of `{func}` does not exist")
            }
            Diagnostic::DuplicateBlock {
                block,
                first,
                second,
            } => write!(f, "block `{block}` defined in `{first}` and again in `{second}`"),
            Diagnostic::UndefinedBlock { func, from, target } => {
                write!(f, "`{func}`: block `{from}` jumps to undefined block `{target}`")
            }
            Diagnostic::UndefinedFunction {
                func,
                block,
                callee,
            } => write!(f, "`{func}`: block `{block}` calls undefined function `{callee}`"),
            Diagnostic::ArityMismatch {
                block,
                callee,
                expected,
                found,
            } => write!(
                f,
                "block `{block}` calls `{callee}` with {found} arguments, expected {expected}"
            ),
            Diagnostic::DuplicateSite {
                site,
                first,
                second,
            } => write!(f, "site `{site}` used by block `{first}` and block `{second}`"),
            Diagnostic::DuplicateCase { site, value } => {
                write!(f, "switch `{site}` lists case {value} more than once")
            }
            Diagnostic::EmptyCrashLocation { block } => {
                write!(f, "crash in block `{block}` has an empty location label")
            }
            Diagnostic::KeywordName(n) => write!(f, "`{n}` is a reserved word"),
            Diagnostic::SiteKindMismatch { site } => {
                write!(f, "site `{site}` has a kind that does not match its terminator")
            }
        }
    }
}

/// Checks every structural invariant; an empty result means the program is
/// valid.
pub fn validate(p: &TargetProgram) -> Vec<Diagnostic> {
    let mut diags = Vec::new();
    if p.functions.is_empty() {
        diags.push(Diagnostic::NoFunctions);
        return diags;
    }

    let mut arity: HashMap<&str, usize> = HashMap::new();
    for f in &p.functions {
        if arity.insert(&f.name, f.params.len()).is_some() {
            diags.push(Diagnostic::DuplicateFunction(f.name.clone()));
        }
    }
    if !arity.contains_key(p.entry.as_str()) {
        diags.push(Diagnostic::MissingEntry(p.entry.clone()));
    }

    let mut owner: HashMap<&str, &str> = HashMap::new();
    for f in &p.functions {
        if f.blocks.is_empty() {
            diags.push(Diagnostic::EmptyFunction(f.name.clone()));
        }
        if !f.blocks.is_empty() && !f.blocks.iter().any(|b| b.id == f.entry_block) {
            diags.push(Diagnostic::MissingEntryBlock {
                func: f.name.clone(),
                block: f.entry_block.clone(),
            });
        }
        for b in &f.blocks {
            if let Some(first) = owner.insert(&b.id, &f.name) {
                diags.push(Diagnostic::DuplicateBlock {
                    block: b.id.clone(),
                    first: first.to_string(),
                    second: f.name.clone(),
                });
            }
        }
    }

    let mut site_owner: HashMap<&str, &str> = HashMap::new();
    for f in &p.functions {
        let local: HashSet<&str> = f.blocks.iter().map(|b| b.id.as_str()).collect();
        let mut names: Vec<&str> = f.params.iter().map(String::as_str).collect();
        names.push(&f.name);
        for b in &f.blocks {
            names.push(&b.id);
            for ins in &b.body {
                match ins {
                    Instruction::Call { dest, func, args } => {
                        names.push(dest);
                        match arity.get(func.as_str()) {
                            None => diags.push(Diagnostic::UndefinedFunction {
                                func: f.name.clone(),
                                block: b.id.clone(),
                                callee: func.clone(),
                            }),
                            Some(&n) if n != args.len() => diags.push(Diagnostic::ArityMismatch {
                                block: b.id.clone(),
                                callee: func.clone(),
                                expected: n,
                                found: args.len(),
                            }),
                            _ => {}
                        }
                        for a in args {
                            a.registers(&mut names);
                        }
                    }
                    Instruction::Assign { dest, expr } => {
                        names.push(dest);
                        expr.registers(&mut names);
                    }
                    Instruction::Crash { location, .. } if location.trim().is_empty() => {
                        diags.push(Diagnostic::EmptyCrashLocation {
                            block: b.id.clone(),
                        })
                    }
                    _ => {}
                }
            }
            // Branch targets are function-local.
            for target in b.terminator.successors() {
                if !local.contains(target) {
                    diags.push(Diagnostic::UndefinedBlock {
                        func: f.name.clone(),
                        from: b.id.clone(),
                        target: target.to_string(),
                    });
                }
            }
            match &b.terminator {
                Terminator::Return(e) => e.registers(&mut names),
                Terminator::CondBranch { site, .. } | Terminator::Switch { site, .. } => {
                    let is_switch = matches!(b.terminator, Terminator::Switch { .. });
                    let kind_ok = (site.kind == super::SiteKind::Switch) == is_switch
                        && site.rhs.is_some() != is_switch;
                    if !kind_ok {
                        diags.push(Diagnostic::SiteKindMismatch {
                            site: site.id.clone(),
                        });
                    }
                    names.push(&site.id);
                    site.lhs.registers(&mut names);
                    if let Some(rhs) = &site.rhs {
                        rhs.registers(&mut names);
                    }
                    if let Some(first) = site_owner.insert(&site.id, &b.id) {
                        diags.push(Diagnostic::DuplicateSite {
                            site: site.id.clone(),
                            first: first.to_string(),
                            second: b.id.clone(),
                        });
                    }
                }
                Terminator::Jump(_) => {}
            }
            if let Terminator::Switch { site, cases, .. } = &b.terminator {
                let mut seen = HashSet::new();
                for (v, _) in cases {
                    if !seen.insert(*v) {
                        diags.push(Diagnostic::DuplicateCase {
                            site: site.id.clone(),
                            value: *v,
                        });
                    }
                }
            }
        }
        for n in names {
            if super::parse::is_keyword(n) {
                diags.push(Diagnostic::KeywordName(n.to_string()));
            }
        }
    }
    diags.dedup();
    diags
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ir::{BasicBlock, ConstraintSite, Expr, FunctionDef, SiteKind};

    fn block(id: &str, terminator: Terminator) -> BasicBlock {
        BasicBlock {
            id: id.into(),
            body: vec![],
            terminator,
        }
    }

    fn program(blocks: Vec<BasicBlock>) -> TargetProgram {
        TargetProgram {
            functions: vec![FunctionDef {
                name: "main".into(),
                params: vec![],
                entry_block: blocks[0].id.clone(),
                blocks,
            }],
            entry: "main".into(),
        }
    }

    #[test]
    fn valid_program_has_no_diagnostics() {
        let p = program(vec![
            block("B0", Terminator::Jump("B1".into())),
            block("B1", Terminator::Return(Expr::Const(0))),
        ]);
        assert!(validate(&p).is_empty());
    }

    #[test]
    fn duplicate_block_cites_both_definitions() {
        let mut p = program(vec![block("B0", Terminator::Return(Expr::Const(0)))]);
        p.functions.push(FunctionDef {
            name: "g".into(),
            params: vec![],
            entry_block: "B0".into(),
            blocks: vec![block("B0", Terminator::Return(Expr::Const(1)))],
        });
        let d = validate(&p);
        assert_eq!(
            d,
            vec![Diagnostic::DuplicateBlock {
                block: "B0".into(),
                first: "main".into(),
                second: "g".into()
            }]
        );
        assert!(d[0].to_string().contains("main") && d[0].to_string().contains("`g`"));
    }

    #[test]
    fn duplicate_switch_case() {
        let site = ConstraintSite {
            id: "S1".into(),
            kind: SiteKind::Switch,
            lhs: Expr::input_at(0),
            rhs: None,
        };
        let p = program(vec![
            block(
                "B0",
                Terminator::Switch {
                    site,
                    cases: vec![(1, "B1".into()), (1, "B1".into())],
                    default: "B1".into(),
                },
            ),
            block("B1", Terminator::Return(Expr::Const(0))),
        ]);
        assert_eq!(
            validate(&p),
            vec![Diagnostic::DuplicateCase {
                site: "S1".into(),
                value: 1
            }]
        );
    }

    #[test]
    fn empty_program_and_missing_entry() {
        let empty = TargetProgram {
            functions: vec![],
            entry: "main".into(),
        };
        assert_eq!(validate(&empty), vec![Diagnostic::NoFunctions]);
        let mut p = program(vec![block("B0", Terminator::Return(Expr::Const(0)))]);
        p.entry = "start".into();
        assert_eq!(validate(&p), vec![Diagnostic::MissingEntry("start".into())]);
    }

    #[test]
    fn calls_are_checked() {
        let mut p = program(vec![block("B0", Terminator::Return(Expr::Const(0)))]);
        p.functions[0].blocks[0].body.push(Instruction::Call {
            dest: "r".into(),
            func: "nope".into(),
            args: vec![],
        });
        assert!(matches!(
            validate(&p)[0],
            Diagnostic::UndefinedFunction { .. }
        ));
    }

    #[test]
    fn empty_crash_label() {
        let mut p = program(vec![block("B0", Terminator::Return(Expr::Const(0)))]);
        p.functions[0].blocks[0].body.push(Instruction::Crash {
            location: " ".into(),
            crash_type: "x".into(),
        });
        assert_eq!(
            validate(&p),
            vec![Diagnostic::EmptyCrashLocation { block: "B0".into() }]
        );
    }
}

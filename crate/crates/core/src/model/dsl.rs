//! Model file format, one declaration per line, `#` starts a comment:
//!
//! ```text
//! model <name>
//! states <id>+
//! params <id>+
//! tvparams <id>*
//! ode <state> = <expression>
//! output <id> = <expression>
//! ```
//!
//! Names must be declared before they are used. Every state needs exactly
//! one `ode` line.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::expr::{syntax, tokenize, Expr, ParseError, ParseErrorKind, Parser, Symbol, SymbolTable, Tok};

use super::OdeModel;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("{line}:{column}: syntax error: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{line}:{column}: undeclared symbol `{name}`")]
    UndeclaredSymbol {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("{line}:{column}: `{name}` declared more than once")]
    DuplicateDeclaration {
        name: String,
        line: usize,
        column: usize,
    },
    #[error("state `{name}` has no ode line")]
    MissingOdeForState { name: String },
}

impl From<ParseError> for ModelError {
    fn from(e: ParseError) -> Self {
        match e.kind {
            ParseErrorKind::UndeclaredSymbol(name) => ModelError::UndeclaredSymbol {
                name,
                line: e.line,
                column: e.column,
            },
            ParseErrorKind::Syntax => ModelError::Syntax {
                line: e.line,
                column: e.column,
                message: e.message,
            },
        }
    }
}

#[derive(Default)]
struct Builder {
    name: Option<String>,
    table: SymbolTable,
    output_names: HashSet<String>,
    states: Vec<Symbol>,
    const_params: Vec<Symbol>,
    tv_params: Vec<Symbol>,
    rhs: HashMap<Symbol, Expr>,
    outputs: Vec<(String, Expr)>,
}

impl Builder {
    fn declare(&mut self, s: Symbol, line: usize, column: usize) -> Result<(), ModelError> {
        if self.output_names.contains(s.base()) || self.table.declare(s.clone()).is_err() {
            return Err(ModelError::DuplicateDeclaration {
                name: s.base().to_string(),
                line,
                column,
            });
        }
        Ok(())
    }
}

fn ident_list(toks: &[(Tok, usize)], line: usize) -> Result<Vec<(String, usize)>, ModelError> {
    toks.iter()
        .map(|(t, col)| match t {
            Tok::Ident(name, 0) => Ok((name.clone(), *col)),
            other => Err(syntax(line, *col, format!("expected an identifier, found {other}")).into()),
        })
        .collect()
}

/// Parses model source text. Positions in errors are `line:column`, both
/// 1-based.
pub fn parse_model(text: &str) -> Result<OdeModel, ModelError> {
    let mut b = Builder::default();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("");
        let toks = tokenize(content, line)?;
        let Some((Tok::Ident(keyword, 0), kw_col)) = toks.first().cloned() else {
            if let Some((t, col)) = toks.first() {
                return Err(syntax(line, *col, format!("expected a keyword, found {t}")).into());
            }
            continue;
        };
        let rest = &toks[1..];
        let end_col = content.chars().count() + 1;
        match keyword.as_str() {
            "model" => {
                let ids = ident_list(rest, line)?;
                if ids.len() != 1 {
                    return Err(syntax(line, kw_col, "`model` takes exactly one name").into());
                }
                if b.name.is_some() {
                    return Err(ModelError::DuplicateDeclaration {
                        name: "model".into(),
                        line,
                        column: kw_col,
                    });
                }
                b.name = Some(ids[0].0.clone());
            }
            "states" | "params" | "tvparams" => {
                let ids = ident_list(rest, line)?;
                if ids.is_empty() && keyword != "tvparams" {
                    return Err(syntax(line, end_col, format!("`{keyword}` needs at least one name")).into());
                }
                for (name, col) in ids {
                    let s = match keyword.as_str() {
                        "states" => Symbol::state(&name),
                        "params" => Symbol::const_param(&name),
                        _ => Symbol::tv_param(&name, 0),
                    };
                    b.declare(s.clone(), line, col)?;
                    match keyword.as_str() {
                        "states" => b.states.push(s),
                        "params" => b.const_params.push(s),
                        _ => b.tv_params.push(s),
                    }
                }
            }
            "ode" | "output" => {
                let (target, col) = match rest.first() {
                    Some((Tok::Ident(n, 0), c)) => (n.clone(), *c),
                    Some((t, c)) => {
                        return Err(syntax(line, *c, format!("expected a name, found {t}")).into())
                    }
                    None => return Err(syntax(line, end_col, "expected a name").into()),
                };
                match rest.get(1) {
                    Some((Tok::Equals, _)) => {}
                    Some((t, c)) => return Err(syntax(line, *c, format!("expected `=`, found {t}")).into()),
                    None => return Err(syntax(line, end_col, "expected `=`").into()),
                }
                let mut p = Parser::new(&rest[2..], line, end_col, &b.table);
                let e = p.expr()?;
                p.finish()?;
                if keyword == "ode" {
                    let state = match b.table.get(&target) {
                        Some(s) if s.is_state() => s.clone(),
                        Some(_) => {
                            return Err(syntax(line, col, format!("`{target}` is not a state")).into())
                        }
                        None => {
                            return Err(ModelError::UndeclaredSymbol {
                                name: target,
                                line,
                                column: col,
                            })
                        }
                    };
                    if b.rhs.insert(state, e).is_some() {
                        return Err(ModelError::DuplicateDeclaration {
                            name: format!("ode {target}"),
                            line,
                            column: col,
                        });
                    }
                } else {
                    if b.table.contains(&target) || !b.output_names.insert(target.clone()) {
                        return Err(ModelError::DuplicateDeclaration {
                            name: target,
                            line,
                            column: col,
                        });
                    }
                    if let Some(s) = e.free_symbols().into_iter().find(|s| !s.is_state() && s.kind() != &crate::expr::SymbolKind::ConstParam) {
                        return Err(syntax(line, col, format!("output may only use states and constant parameters, found `{s}`")).into());
                    }
                    b.outputs.push((target, e));
                }
            }
            other => {
                return Err(syntax(line, kw_col, format!("unknown keyword `{other}`")).into());
            }
        }
    }
    let Some(name) = b.name.take() else {
        let line = text.lines().count().max(1);
        return Err(syntax(line, 1, "missing `model <name>` declaration").into());
    };
    if b.states.is_empty() {
        return Err(syntax(1, 1, "model declares no states").into());
    }
    let mut rhs = Vec::with_capacity(b.states.len());
    for s in &b.states {
        match b.rhs.remove(s) {
            Some(e) => rhs.push(e),
            None => return Err(ModelError::MissingOdeForState { name: s.name() }),
        }
    }
    OdeModel::new(name, b.states, b.const_params, b.tv_params, rhs, b.outputs)
}

/// Writes a model in the DSL; `parse_model(&print_model(m))` reproduces it
/// up to rational-function equality of every expression.
pub fn print_model(m: &OdeModel) -> String {
    let join = |v: &[Symbol]| v.iter().map(|s| s.base().to_string()).collect::<Vec<_>>().join(" ");
    let mut out = String::new();
    writeln!(out, "model {}", m.name()).unwrap();
    writeln!(out, "states {}", join(m.states())).unwrap();
    if !m.const_params().is_empty() {
        writeln!(out, "params {}", join(m.const_params())).unwrap();
    }
    if !m.tv_params().is_empty() {
        writeln!(out, "tvparams {}", join(m.tv_params())).unwrap();
    }
    for (s, e) in m.states().iter().zip(m.rhs()) {
        writeln!(out, "ode {} = {e}", s.base()).unwrap();
    }
    for (n, e) in m.outputs() {
        writeln!(out, "output {n} = {e}").unwrap();
    }
    out
}

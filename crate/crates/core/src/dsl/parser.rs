use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::lexer::{Token, TokenKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum Value {
    Var(String),
    Str(String),
    Num(f64),
    Bool(bool),
}

impl Value {
    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_var(&self) -> Option<&str> {
        match self {
            Value::Var(v) => Some(v),
            _ => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Var(v) => f.write_str(v),
            Value::Str(s) if s.contains('\'') => write!(f, "\"{s}\""),
            Value::Str(s) => write!(f, "'{s}'"),
            Value::Num(n) => write!(f, "{n}"),
            Value::Bool(b) => write!(f, "{b}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    pub target: String,
    pub tool: String,
    pub args: Vec<(String, Value)>,
}

impl Assignment {
    pub fn arg(&self, name: &str) -> Option<&Value> {
        self.args.iter().find(|(n, _)| n == name).map(|(_, v)| v)
    }
}

impl fmt::Display for Assignment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}(", self.target, self.tool)?;
        for (i, (name, value)) in self.args.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{name}={value}")?;
        }
        f.write_str(")")
    }
}

/// A parsed straight-line program: one assignment per line, no control flow.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ProgramAst {
    pub steps: Vec<Assignment>,
}

impl ProgramAst {
    pub fn tools(&self) -> Vec<&str> {
        self.steps.iter().map(|s| s.tool.as_str()).collect()
    }
}

/// Canonical source form: one statement per line, no spaces, LF-terminated.
pub fn pretty_print(ast: &ProgramAst) -> String {
    let mut out = String::new();
    for step in &ast.steps {
        out.push_str(&step.to_string());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("parse error at {line}:{col}: expected {expected}, found {found}")]
pub struct ParseError {
    pub line: usize,
    pub col: usize,
    pub expected: String,
    pub found: String,
}

struct Cursor<'a> {
    tokens: &'a [Token],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn peek(&self) -> Option<&'a Token> {
        self.tokens.get(self.pos)
    }

    fn error(&self, expected: &str) -> ParseError {
        match self.peek() {
            Some(t) => ParseError {
                line: t.line,
                col: t.col,
                expected: expected.into(),
                found: describe(t),
            },
            None => {
                let (line, col) = self
                    .tokens
                    .last()
                    .map_or((1, 1), |t| (t.line, t.col + t.lexeme.chars().count()));
                ParseError {
                    line,
                    col,
                    expected: expected.into(),
                    found: "end of input".into(),
                }
            }
        }
    }

    fn expect(&mut self, kind: TokenKind, expected: &str) -> Result<&'a Token, ParseError> {
        match self.peek() {
            Some(t) if t.kind == kind => {
                self.pos += 1;
                Ok(t)
            }
            _ => Err(self.error(expected)),
        }
    }

    fn skip_newlines(&mut self) {
        while self.peek().is_some_and(|t| t.kind == TokenKind::Newline) {
            self.pos += 1;
        }
    }
}

fn describe(t: &Token) -> String {
    match t.kind {
        TokenKind::Newline => "newline".into(),
        TokenKind::StringLit => format!("string '{}'", t.lexeme),
        _ => format!("'{}'", t.lexeme),
    }
}

pub fn parse(tokens: &[Token]) -> Result<ProgramAst, ParseError> {
    let mut cur = Cursor { tokens, pos: 0 };
    let mut steps = Vec::new();
    let mut targets = BTreeSet::new();

    cur.skip_newlines();
    if cur.peek().is_none() {
        return Err(cur.error("an assignment"));
    }
    while cur.peek().is_some() {
        let target_tok = cur.expect(TokenKind::Ident, "an assignment target")?;
        if !targets.insert(target_tok.lexeme.clone()) {
            return Err(ParseError {
                line: target_tok.line,
                col: target_tok.col,
                expected: "a fresh target (single assignment)".into(),
                found: format!("'{}' assigned twice", target_tok.lexeme),
            });
        }
        cur.expect(TokenKind::Equals, "'='")?;
        let tool = cur.expect(TokenKind::ToolName, "a tool call")?.lexeme.clone();
        cur.expect(TokenKind::LParen, "'('")?;

        let mut args: Vec<(String, Value)> = Vec::new();
        if cur.peek().is_some_and(|t| t.kind != TokenKind::RParen) {
            loop {
                let name_tok = cur.expect(TokenKind::Ident, "an argument name")?;
                if args.iter().any(|(n, _)| *n == name_tok.lexeme) {
                    return Err(ParseError {
                        line: name_tok.line,
                        col: name_tok.col,
                        expected: "distinct argument names".into(),
                        found: format!("'{}' repeated", name_tok.lexeme),
                    });
                }
                cur.expect(TokenKind::Equals, "'='")?;
                let value = parse_value(&mut cur)?;
                args.push((name_tok.lexeme.clone(), value));
                match cur.peek() {
                    Some(t) if t.kind == TokenKind::Comma => cur.pos += 1,
                    _ => break,
                }
            }
        }
        cur.expect(TokenKind::RParen, "',' or ')'")?;
        match cur.peek() {
            None => {}
            Some(t) if t.kind == TokenKind::Newline => cur.skip_newlines(),
            Some(_) => return Err(cur.error("end of line")),
        }
        steps.push(Assignment {
            target: target_tok.lexeme.clone(),
            tool,
            args,
        });
    }
    Ok(ProgramAst { steps })
}

fn parse_value(cur: &mut Cursor<'_>) -> Result<Value, ParseError> {
    let Some(t) = cur.peek() else {
        return Err(cur.error("a value"));
    };
    let value = match t.kind {
        TokenKind::Ident => match t.lexeme.as_str() {
            "true" => Value::Bool(true),
            "false" => Value::Bool(false),
            _ => Value::Var(t.lexeme.clone()),
        },
        TokenKind::StringLit => Value::Str(t.lexeme.clone()),
        TokenKind::NumberLit => match t.lexeme.parse::<f64>() {
            Ok(n) => Value::Num(n),
            Err(_) => return Err(cur.error("a number")),
        },
        _ => return Err(cur.error("a value")),
    };
    cur.pos += 1;
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsl::tokenize;

    fn parse_src(src: &str) -> Result<ProgramAst, ParseError> {
        parse(&tokenize(src).unwrap())
    }

    #[test]
    fn one_step_per_line_with_arg_order() {
        let ast = parse_src("A=LOC(image=IMAGE,object='x')\n\nB=COUNT(box=A)\n").unwrap();
        assert_eq!(ast.steps.len(), 2);
        assert_eq!(ast.steps[0].args[0].0, "image");
        assert_eq!(ast.steps[0].args[1], ("object".into(), Value::Str("x".into())));
        assert_eq!(ast.steps[1].args[0].1, Value::Var("A".into()));
    }

    #[test]
    fn if_line_is_rejected() {
        let err = parse_src("IF(x=1)").unwrap_err();
        assert_eq!((err.line, err.col), (1, 1));
    }

    #[test]
    fn duplicate_target_is_rejected() {
        let err = parse_src("A=LOC(object='x')\nA=COUNT(box=A)").unwrap_err();
        assert_eq!(err.line, 2);
        assert!(err.found.contains("twice"));
    }

    #[test]
    fn empty_program_is_rejected() {
        assert!(parse(&[]).is_err());
    }

    #[test]
    fn two_statements_on_one_line_rejected() {
        assert!(parse_src("A=LOC(x=1) B=LOC(x=2)").is_err());
    }

    #[test]
    fn literals() {
        let ast = parse_src("A=T(a=true,b=false,c=-1.5,d=\"it's\")").unwrap();
        let args: Vec<&Value> = ast.steps[0].args.iter().map(|(_, v)| v).collect();
        assert_eq!(args, [&Value::Bool(true), &Value::Bool(false), &Value::Num(-1.5), &Value::Str("it's".into())]);
        assert_eq!(pretty_print(&ast), "A=T(a=true,b=false,c=-1.5,d=\"it's\")\n");
    }

    #[test]
    fn no_args() {
        let ast = parse_src("A=T()").unwrap();
        assert!(ast.steps[0].args.is_empty());
    }
}

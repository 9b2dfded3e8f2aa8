//! The closed expression language behind EVAL: literals, arithmetic,
//! comparisons, boolean connectives and `a if cond else b`.

use crate::model::format_number;

#[derive(Debug, Clone, PartialEq)]
pub enum ExprValue {
    Num(f64),
    Str(String),
    Bool(bool),
}

impl ExprValue {
    pub fn render(&self) -> String {
        match self {
            ExprValue::Num(n) => format_number(*n),
            ExprValue::Str(s) => s.clone(),
            ExprValue::Bool(b) => b.to_string(),
        }
    }

    fn truthy(&self) -> bool {
        match self {
            ExprValue::Num(n) => *n != 0.0,
            ExprValue::Str(s) => !s.is_empty(),
            ExprValue::Bool(b) => *b,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Str(String),
    Word(String),
    Op(&'static str),
}

fn lex(src: &str) -> Result<Vec<Tok>, String> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if c.is_whitespace() {
            i += 1;
        } else if c == '\'' || c == '"' {
            let end = chars[i + 1..]
                .iter()
                .position(|&x| x == c)
                .ok_or("unterminated string")?;
            out.push(Tok::Str(chars[i + 1..i + 1 + end].iter().collect()));
            i += end + 2;
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                i += 1;
            }
            let text: String = chars[start..i].iter().collect();
            out.push(Tok::Num(text.parse().map_err(|_| format!("bad number {text}"))?));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                i += 1;
            }
            out.push(Tok::Word(chars[start..i].iter().collect()));
        } else {
            let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let op = ["==", "!=", ">=", "<="]
                .into_iter()
                .find(|o| *o == two)
                .or_else(|| ["<", ">", "+", "-", "*", "/", "(", ")"].into_iter().find(|o| o.starts_with(c)))
                .ok_or_else(|| format!("unexpected character {c:?}"))?;
            i += op.len();
            out.push(Tok::Op(op));
        }
    }
    Ok(out)
}

struct Parser {
    toks: Vec<Tok>,
    pos: usize,
}

impl Parser {
    fn peek_word(&self, w: &str) -> bool {
        matches!(self.toks.get(self.pos), Some(Tok::Word(x)) if x == w)
    }

    fn peek_op(&self, ops: &[&str]) -> Option<&'static str> {
        match self.toks.get(self.pos) {
            Some(Tok::Op(o)) if ops.contains(o) => Some(o),
            _ => None,
        }
    }

    fn ternary(&mut self) -> Result<ExprValue, String> {
        let then = self.or()?;
        if self.peek_word("if") {
            self.pos += 1;
            let cond = self.or()?;
            if !self.peek_word("else") {
                return Err("expected 'else'".into());
            }
            self.pos += 1;
            let other = self.ternary()?;
            return Ok(if cond.truthy() { then } else { other });
        }
        Ok(then)
    }

    fn or(&mut self) -> Result<ExprValue, String> {
        let mut left = self.and()?;
        while self.peek_word("or") {
            self.pos += 1;
            let right = self.and()?;
            left = ExprValue::Bool(left.truthy() || right.truthy());
        }
        Ok(left)
    }

    fn and(&mut self) -> Result<ExprValue, String> {
        let mut left = self.not()?;
        while self.peek_word("and") {
            self.pos += 1;
            let right = self.not()?;
            left = ExprValue::Bool(left.truthy() && right.truthy());
        }
        Ok(left)
    }

    fn not(&mut self) -> Result<ExprValue, String> {
        if self.peek_word("not") {
            self.pos += 1;
            return Ok(ExprValue::Bool(!self.not()?.truthy()));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<ExprValue, String> {
        let left = self.sum()?;
        let Some(op) = self.peek_op(&["==", "!=", ">=", "<=", "<", ">"]) else {
            return Ok(left);
        };
        self.pos += 1;
        let right = self.sum()?;
        let result = match (op, &left, &right) {
            ("==", a, b) => a == b,
            ("!=", a, b) => a != b,
            (_, ExprValue::Num(a), ExprValue::Num(b)) => match op {
                ">" => a > b,
                "<" => a < b,
                ">=" => a >= b,
                _ => a <= b,
            },
            (_, ExprValue::Str(a), ExprValue::Str(b)) => match op {
                ">" => a > b,
                "<" => a < b,
                ">=" => a >= b,
                _ => a <= b,
            },
            _ => return Err(format!("cannot order {left:?} and {right:?}")),
        };
        Ok(ExprValue::Bool(result))
    }

    fn sum(&mut self) -> Result<ExprValue, String> {
        let mut left = self.product()?;
        while let Some(op) = self.peek_op(&["+", "-"]) {
            self.pos += 1;
            let right = self.product()?;
            left = match (op, left, right) {
                ("+", ExprValue::Num(a), ExprValue::Num(b)) => ExprValue::Num(a + b),
                ("-", ExprValue::Num(a), ExprValue::Num(b)) => ExprValue::Num(a - b),
                ("+", ExprValue::Str(a), ExprValue::Str(b)) => ExprValue::Str(a + &b),
                (op, a, b) => return Err(format!("cannot apply {op} to {a:?} and {b:?}")),
            };
        }
        Ok(left)
    }

    fn product(&mut self) -> Result<ExprValue, String> {
        let mut left = self.unary()?;
        while let Some(op) = self.peek_op(&["*", "/"]) {
            self.pos += 1;
            let right = self.unary()?;
            left = match (left, right) {
                (ExprValue::Num(a), ExprValue::Num(b)) => {
                    if op == "/" {
                        if b == 0.0 {
                            return Err("division by zero".into());
                        }
                        ExprValue::Num(a / b)
                    } else {
                        ExprValue::Num(a * b)
                    }
                }
                (a, b) => return Err(format!("cannot apply {op} to {a:?} and {b:?}")),
            };
        }
        Ok(left)
    }

    fn unary(&mut self) -> Result<ExprValue, String> {
        if self.peek_op(&["-"]).is_some() {
            self.pos += 1;
            return match self.unary()? {
                ExprValue::Num(n) => Ok(ExprValue::Num(-n)),
                other => Err(format!("cannot negate {other:?}")),
            };
        }
        self.atom()
    }

    fn atom(&mut self) -> Result<ExprValue, String> {
        let tok = self.toks.get(self.pos).cloned().ok_or("unexpected end of expression")?;
        self.pos += 1;
        match tok {
            Tok::Num(n) => Ok(ExprValue::Num(n)),
            Tok::Str(s) => Ok(ExprValue::Str(s)),
            Tok::Word(w) => match w.as_str() {
                "true" | "True" => Ok(ExprValue::Bool(true)),
                "false" | "False" => Ok(ExprValue::Bool(false)),
                _ => Err(format!("unknown name {w}")),
            },
            Tok::Op("(") => {
                let v = self.ternary()?;
                if self.peek_op(&[")"]).is_none() {
                    return Err("expected ')'".into());
                }
                self.pos += 1;
                Ok(v)
            }
            Tok::Op(o) => Err(format!("unexpected {o}")),
        }
    }
}

pub fn evaluate(src: &str) -> Result<ExprValue, String> {
    let mut p = Parser { toks: lex(src)?, pos: 0 };
    let v = p.ternary()?;
    if p.pos != p.toks.len() {
        return Err("trailing input".into());
    }
    Ok(v)
}

/// Literal form of an interpolated value: numbers stay bare, text is quoted.
pub fn literal(text: &str) -> String {
    if text.trim().parse::<f64>().is_ok() {
        text.trim().to_string()
    } else if text.contains('\'') {
        format!("\"{text}\"")
    } else {
        format!("'{text}'")
    }
}

/// Replaces `{NAME}` placeholders using `lookup`.
pub fn interpolate(src: &str, lookup: impl Fn(&str) -> Option<String>) -> Result<String, String> {
    let mut out = String::new();
    let mut rest = src;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = rest[start..].find('}').ok_or("unclosed '{'")? + start;
        let name = &rest[start + 1..end];
        let value = lookup(name).ok_or_else(|| format!("{name} is not defined"))?;
        out.push_str(&literal(&value));
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ternary_over_comparison() {
        assert_eq!(evaluate("'yes' if 2 > 1 else 'no'").unwrap().render(), "yes");
        assert_eq!(evaluate("'yes' if 2 > 3 else 'no'").unwrap().render(), "no");
    }

    #[test]
    fn arithmetic_and_logic() {
        assert_eq!(evaluate("1 + 2 * 3").unwrap(), ExprValue::Num(7.0));
        assert_eq!(evaluate("(1 + 2) * 3").unwrap(), ExprValue::Num(9.0));
        assert_eq!(evaluate("-4 / 2").unwrap(), ExprValue::Num(-2.0));
        assert_eq!(evaluate("1 > 0 and not 2 < 1").unwrap(), ExprValue::Bool(true));
        assert_eq!(evaluate("'a' == 'a' or 1 == 2").unwrap(), ExprValue::Bool(true));
        assert_eq!(evaluate("'a' + 'b'").unwrap().render(), "ab");
    }

    #[test]
    fn nested_ternary() {
        assert_eq!(evaluate("'a' if 0 else 'b' if 1 else 'c'").unwrap().render(), "b");
    }

    #[test]
    fn errors() {
        assert!(evaluate("1 / 0").is_err());
        assert!(evaluate("'a' < 1").is_err());
        assert!(evaluate("import os").is_err());
        assert!(evaluate("1 +").is_err());
        assert!(evaluate("1 2").is_err());
    }

    #[test]
    fn interpolation() {
        let e = interpolate("'yes' if {A} > {B} else 'no'", |n| match n {
            "A" => Some("3".into()),
            "B" => Some("1".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!(e, "'yes' if 3 > 1 else 'no'");
        assert_eq!(evaluate(&e).unwrap().render(), "yes");
        let e = interpolate("{A} == 'red'", |_| Some("red".into())).unwrap();
        assert_eq!(evaluate(&e).unwrap(), ExprValue::Bool(true));
        assert!(interpolate("{Z}", |_| None).is_err());
    }
}

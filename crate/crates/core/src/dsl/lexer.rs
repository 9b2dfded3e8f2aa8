use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenKind {
    Ident,
    ToolName,
    StringLit,
    NumberLit,
    Equals,
    LParen,
    RParen,
    Comma,
    Newline,
}

/// A lexeme with its 1-based position. String literal lexemes hold the inner
/// text without quotes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub kind: TokenKind,
    pub lexeme: String,
    pub line: usize,
    pub col: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("lex error at {line}:{col}: {found}")]
pub struct LexError {
    pub line: usize,
    pub col: usize,
    pub found: String,
}

pub fn tokenize(source: &str) -> Result<Vec<Token>, LexError> {
    let chars: Vec<char> = source.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    let (mut line, mut col) = (1usize, 1usize);

    while i < chars.len() {
        let c = chars[i];
        let (start_line, start_col) = (line, col);
        let mut push = |kind, lexeme: String| {
            tokens.push(Token {
                kind,
                lexeme,
                line: start_line,
                col: start_col,
            })
        };
        match c {
            '\n' => {
                push(TokenKind::Newline, "\n".into());
                i += 1;
                line += 1;
                col = 1;
                continue;
            }
            ' ' | '\t' | '\r' => {
                i += 1;
                col += 1;
                continue;
            }
            '=' => push(TokenKind::Equals, "=".into()),
            '(' => push(TokenKind::LParen, "(".into()),
            ')' => push(TokenKind::RParen, ")".into()),
            ',' => push(TokenKind::Comma, ",".into()),
            '\'' | '"' => {
                let quote = c;
                let mut j = i + 1;
                while j < chars.len() && chars[j] != quote && chars[j] != '\n' {
                    j += 1;
                }
                if j >= chars.len() || chars[j] != quote {
                    return Err(LexError {
                        line,
                        col,
                        found: "unterminated string".into(),
                    });
                }
                let inner: String = chars[i + 1..j].iter().collect();
                let consumed = j + 1 - i;
                push(TokenKind::StringLit, inner);
                i += consumed;
                col += consumed;
                continue;
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                let mut j = i + 1;
                while j < chars.len() && chars[j].is_ascii_digit() {
                    j += 1;
                }
                if j + 1 < chars.len() && chars[j] == '.' && chars[j + 1].is_ascii_digit() {
                    j += 1;
                    while j < chars.len() && chars[j].is_ascii_digit() {
                        j += 1;
                    }
                }
                let text: String = chars[i..j].iter().collect();
                let consumed = j - i;
                push(TokenKind::NumberLit, text);
                i += consumed;
                col += consumed;
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let text: String = chars[i..j].iter().collect();
                let mut k = j;
                while k < chars.len() && matches!(chars[k], ' ' | '\t') {
                    k += 1;
                }
                let kind = if chars.get(k) == Some(&'(') {
                    TokenKind::ToolName
                } else {
                    TokenKind::Ident
                };
                let consumed = j - i;
                push(kind, text);
                i += consumed;
                col += consumed;
                continue;
            }
            other => {
                return Err(LexError {
                    line,
                    col,
                    found: format!("illegal character {other:?}"),
                })
            }
        }
        i += 1;
        col += 1;
    }
    Ok(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn umbrella_line_has_twelve_tokens() {
        let toks = tokenize("BOX0=LOC(image=IMAGE,object='umbrella')").unwrap();
        assert_eq!(toks.len(), 12);
        assert_eq!(toks.last().unwrap().kind, TokenKind::RParen);
        assert_eq!(toks[2].kind, TokenKind::ToolName);
        assert_eq!(toks[10].kind, TokenKind::StringLit);
        assert_eq!(toks[10].lexeme, "umbrella");
        assert_eq!((toks[10].line, toks[10].col), (1, 29));
    }

    #[test]
    fn unterminated_string() {
        let err = tokenize("A=LOC(object='x").unwrap_err();
        assert_eq!((err.line, err.col), (1, 14));
    }

    #[test]
    fn empty_source() {
        assert!(tokenize("").unwrap().is_empty());
    }

    #[test]
    fn illegal_character() {
        let err = tokenize("A=LOC(x=1)\nB=$").unwrap_err();
        assert_eq!((err.line, err.col), (2, 3));
    }

    #[test]
    fn strings_preserve_inner_text() {
        let toks = tokenize("E=EVAL(expr=\"'yes' if {A} > 1 else 'no'\")").unwrap();
        assert_eq!(toks[6].lexeme, "'yes' if {A} > 1 else 'no'");
    }

    #[test]
    fn numbers() {
        let toks = tokenize("n=-2.5 m=10").unwrap();
        assert_eq!(toks[2].lexeme, "-2.5");
        assert_eq!(toks[5].lexeme, "10");
    }
}

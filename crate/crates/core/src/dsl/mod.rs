//! The straight-line tool-program language: lexer, parser, validator, interpreter.

mod exec;
mod lexer;
mod parser;
mod validate;

pub use exec::{execute, Env, PromptProvider, ZeroPrompts};
pub use lexer::{tokenize, LexError, Token, TokenKind};
pub use parser::{parse, pretty_print, Assignment, ParseError, ProgramAst, Value};
pub use validate::{validate, Diagnostic};

/// Canonical umbrella-question program: what is the person left of the umbrella doing.
pub const UMBRELLA_PROGRAM: &str = "BOX0=LOC(image=IMAGE,object='umbrella')
IMAGE0=CROP(image=IMAGE,box=BOX0,side='left')
BOX1=LOC(image=IMAGE0,object='person')
ANSWER0=VQA(image=IMAGE0,question='what is the person doing')
FINAL=RESULT(var=ANSWER0)
";

/// Tokenize and parse in one step.
pub fn parse_program(source: &str) -> crate::Result<ProgramAst> {
    Ok(parse(&tokenize(source)?)?)
}

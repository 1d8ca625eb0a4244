//! Lexing, parsing and pretty-printing of `.mc` sources.
pub mod ast;
mod lexer;
mod parser;
mod printer;

pub use parser::{parse_module, parse_selector};
pub use printer::{print_expr, print_module};

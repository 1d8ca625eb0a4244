//! Tokenizer. `#pragma omp` lines become a single token holding the
//! directive text, which the parser re-lexes on demand.
use crate::diag::{Diagnostic, Span};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Tok {
    Ident(String),
    /// Integer literal: value plus suffix flags (unsigned, long).
    Int(u64, bool, bool),
    Str(String),
    Punct(&'static str),
    /// Contents of a `#pragma omp` line after the `omp` keyword.
    Pragma(String),
    Eof,
}

#[derive(Debug, Clone)]
pub struct Token {
    pub tok: Tok,
    pub span: Span,
}

const PUNCTS: [&str; 43] = [
    "<<=", ">>=", "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "+=", "-=", "*=",
    "/=", "%=", "&=", "|=", "^=", "++", "--", "(", ")", "{", "}", "[", "]", ";", ",", "=", "<",
    ">", "+", "-", "*", "/", "%", "&", "|", "^", "!", "~", "?", ":",
];

/// Extra single-character punctuation only meaningful inside directives.
const PRAGMA_PUNCTS: [&str; 1] = ["."];

pub struct Lexer<'a> {
    src: &'a [u8],
    pos: usize,
    line: u32,
    col: u32,
    in_pragma: bool,
    base: Span,
}

impl<'a> Lexer<'a> {
    pub fn new(src: &'a str) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
            line: 1,
            col: 1,
            in_pragma: false,
            base: Span::new(1, 1),
        }
    }

    /// Lexer over directive text; all tokens report `at` as their position.
    pub fn for_pragma(src: &'a str, at: Span) -> Self {
        Self {
            in_pragma: true,
            base: at,
            ..Self::new(src)
        }
    }

    fn peek(&self, off: usize) -> u8 {
        self.src.get(self.pos + off).copied().unwrap_or(0)
    }

    fn bump(&mut self) -> u8 {
        let c = self.peek(0);
        self.pos += 1;
        if c == b'\n' {
            self.line += 1;
            self.col = 1;
        } else {
            self.col += 1;
        }
        c
    }

    fn span(&self) -> Span {
        if self.in_pragma {
            self.base
        } else {
            Span::new(self.line, self.col)
        }
    }

    fn skip_trivia(&mut self) -> Result<(), Diagnostic> {
        loop {
            match self.peek(0) {
                b' ' | b'\t' | b'\r' | b'\n' => {
                    self.bump();
                }
                b'\\' if self.peek(1) == b'\n' => {
                    self.bump();
                    self.bump();
                }
                b'/' if self.peek(1) == b'/' => {
                    while self.peek(0) != b'\n' && self.peek(0) != 0 {
                        self.bump();
                    }
                }
                b'/' if self.peek(1) == b'*' => {
                    let start = self.span();
                    self.bump();
                    self.bump();
                    loop {
                        if self.peek(0) == 0 {
                            return Err(Diagnostic::new(start, "unterminated comment"));
                        }
                        if self.peek(0) == b'*' && self.peek(1) == b'/' {
                            self.bump();
                            self.bump();
                            break;
                        }
                        self.bump();
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    /// Reads a preprocessor line (with `\` continuations) after `#`.
    fn directive_line(&mut self) -> String {
        let mut text = String::new();
        loop {
            match self.peek(0) {
                0 | b'\n' => break,
                b'\\' if self.peek(1) == b'\n' => {
                    self.bump();
                    self.bump();
                    text.push(' ');
                }
                b'\\' if self.peek(1) == b'\r' && self.peek(2) == b'\n' => {
                    self.bump();
                    self.bump();
                    self.bump();
                    text.push(' ');
                }
                _ => text.push(self.bump() as char),
            }
        }
        text
    }

    pub fn tokenize(mut self) -> Result<Vec<Token>, Diagnostic> {
        let mut out = Vec::new();
        loop {
            self.skip_trivia()?;
            let span = self.span();
            let c = self.peek(0);
            if c == 0 {
                out.push(Token { tok: Tok::Eof, span });
                return Ok(out);
            }
            if c == b'#' && !self.in_pragma {
                self.bump();
                let line = self.directive_line();
                let line = strip_comment(&line);
                let mut words = line.split_whitespace();
                match (words.next(), words.next()) {
                    (Some("pragma"), Some("omp")) => {
                        let rest = line
                            .trim_start()
                            .trim_start_matches("pragma")
                            .trim_start()
                            .trim_start_matches("omp")
                            .trim()
                            .to_string();
                        out.push(Token {
                            tok: Tok::Pragma(rest),
                            span,
                        });
                    }
                    (Some("pragma"), _) => {
                        return Err(Diagnostic::new(span, "unknown pragma"));
                    }
                    _ => {
                        return Err(Diagnostic::new(
                            span,
                            "preprocessor directives are not supported",
                        ));
                    }
                }
                continue;
            }
            if c.is_ascii_alphabetic() || c == b'_' {
                let mut s = String::new();
                while self.peek(0).is_ascii_alphanumeric() || self.peek(0) == b'_' {
                    s.push(self.bump() as char);
                }
                out.push(Token {
                    tok: Tok::Ident(s),
                    span,
                });
                continue;
            }
            if c.is_ascii_digit() {
                out.push(Token {
                    tok: self.number(span)?,
                    span,
                });
                continue;
            }
            if c == b'"' {
                self.bump();
                let mut s = String::new();
                loop {
                    match self.peek(0) {
                        0 | b'\n' => {
                            return Err(Diagnostic::new(span, "unterminated string literal"))
                        }
                        b'"' => {
                            self.bump();
                            break;
                        }
                        b'\\' => {
                            self.bump();
                            let e = self.bump();
                            s.push(match e {
                                b'n' => '\n',
                                b't' => '\t',
                                other => other as char,
                            });
                        }
                        _ => s.push(self.bump() as char),
                    }
                }
                out.push(Token {
                    tok: Tok::Str(s),
                    span,
                });
                continue;
            }
            let rest = &self.src[self.pos..];
            let punct = PUNCTS
                .iter()
                .chain(if self.in_pragma { &PRAGMA_PUNCTS[..] } else { &[] })
                .find(|p| rest.starts_with(p.as_bytes()));
            match punct {
                Some(p) => {
                    for _ in 0..p.len() {
                        self.bump();
                    }
                    out.push(Token {
                        tok: Tok::Punct(p),
                        span,
                    });
                }
                None => {
                    return Err(Diagnostic::new(
                        span,
                        format!("unexpected character `{}`", c as char),
                    ))
                }
            }
        }
    }

    fn number(&mut self, span: Span) -> Result<Tok, Diagnostic> {
        let mut digits = String::new();
        let hex = self.peek(0) == b'0' && matches!(self.peek(1), b'x' | b'X');
        if hex {
            self.bump();
            self.bump();
            while self.peek(0).is_ascii_hexdigit() {
                digits.push(self.bump() as char);
            }
        } else {
            while self.peek(0).is_ascii_digit() {
                digits.push(self.bump() as char);
            }
        }
        let (mut unsigned, mut long) = (false, false);
        loop {
            match self.peek(0) {
                b'u' | b'U' if !unsigned => {
                    unsigned = true;
                    self.bump();
                }
                b'l' | b'L' if !long => {
                    long = true;
                    self.bump();
                }
                _ => break,
            }
        }
        if self.peek(0).is_ascii_alphanumeric() || self.peek(0) == b'_' {
            return Err(Diagnostic::new(span, "invalid integer literal"));
        }
        let value = u64::from_str_radix(&digits, if hex { 16 } else { 10 })
            .map_err(|_| Diagnostic::new(span, "integer literal out of range"))?;
        Ok(Tok::Int(value, unsigned, long))
    }
}

fn strip_comment(line: &str) -> String {
    match line.find("//") {
        Some(i) => line[..i].to_string(),
        None => line.to_string(),
    }
}

//! Recursive-descent parser for the mini-language and its OpenMP directives.
use std::collections::{BTreeMap, BTreeSet};

use super::ast::*;
use super::lexer::{Lexer, Tok, Token};
use crate::diag::{Diagnostic, Span};
use crate::selectors::{ContextSelector, Extension};
use crate::target::Arch;
use crate::types::ScalarType;

type PResult<T> = Result<T, Diagnostic>;

/// Parses a translation unit.
pub fn parse_module(text: &str) -> Result<SourceModule, Vec<Diagnostic>> {
    let tokens = Lexer::new(text).tokenize().map_err(|d| vec![d])?;
    let mut p = Parser::new(tokens);
    match p.module() {
        Ok(()) => {}
        Err(d) => p.diags.push(d),
    }
    if p.diags.is_empty() {
        p.validate();
    }
    if p.diags.is_empty() {
        Ok(p.module)
    } else {
        p.diags.sort_by_key(|d| (d.line, d.col));
        Err(p.diags)
    }
}

/// Parses the contents of a `match(...)` clause.
pub fn parse_selector(text: &str) -> Result<ContextSelector, Vec<Diagnostic>> {
    parse_selector_at(text, Span::new(1, 1)).map_err(|d| vec![d])
}

fn parse_selector_at(text: &str, at: Span) -> PResult<ContextSelector> {
    let tokens = Lexer::for_pragma(text, at).tokenize()?;
    let mut p = Parser::new(tokens);
    let mut sel = ContextSelector::default();
    let mut seen = BTreeSet::new();
    while !p.at_eof() {
        let (set, span) = p.ident()?;
        if !seen.insert(set.clone()) {
            return Err(Diagnostic::new(span, format!("duplicate selector set `{set}`")));
        }
        p.expect("=")?;
        p.expect("{")?;
        match set.as_str() {
            "device" => {
                let (trait_name, tspan) = p.ident()?;
                if trait_name != "arch" {
                    return Err(Diagnostic::new(
                        tspan,
                        format!("unsupported device trait `{trait_name}`"),
                    ));
                }
                p.expect("(")?;
                let mut archs = Vec::new();
                while !p.is_punct(")") {
                    let (name, aspan) = p.ident()?;
                    let arch = name
                        .parse::<Arch>()
                        .map_err(|m| Diagnostic::new(aspan, m))?;
                    archs.push(arch);
                    if !p.eat(",") {
                        break;
                    }
                }
                p.expect(")")?;
                if archs.is_empty() {
                    return Err(Diagnostic::new(tspan, "empty arch list"));
                }
                sel.device_arch = Some(archs);
            }
            "implementation" => {
                let (trait_name, tspan) = p.ident()?;
                if trait_name != "extension" {
                    return Err(Diagnostic::new(
                        tspan,
                        format!("unsupported implementation trait `{trait_name}`"),
                    ));
                }
                p.expect("(")?;
                let (ext, espan) = p.ident()?;
                sel.extension = match ext.as_str() {
                    "match_any" => Extension::MatchAny,
                    "match_none" => Extension::MatchNone,
                    other => {
                        return Err(Diagnostic::new(
                            espan,
                            format!("unknown extension `{other}`"),
                        ))
                    }
                };
                p.expect(")")?;
            }
            other => {
                return Err(Diagnostic::new(span, format!("unknown selector set `{other}`")));
            }
        }
        p.expect("}")?;
        if !p.eat(",") {
            break;
        }
    }
    if !p.at_eof() {
        return Err(p.unexpected("end of selector"));
    }
    if sel.extension != Extension::None && sel.device_arch.is_none() {
        return Err(Diagnostic::new(at, "selector extension requires a device arch list"));
    }
    Ok(sel)
}

#[derive(Debug, Clone)]
enum Region {
    Target(Span),
    Variant(ContextSelector, Span),
}

#[derive(Debug, Clone, Copy)]
enum Binding {
    Scalar(ScalarType),
    Array(ScalarType, u32),
    BufferParam,
}

struct OpenTargetRegion {
    /// Scope depth at which the region body starts.
    depth: usize,
    captures: Vec<Capture>,
}

struct Parser {
    toks: Vec<Token>,
    pos: usize,
    diags: Vec<Diagnostic>,
    module: SourceModule,
    regions: Vec<Region>,
    scopes: Vec<Vec<(String, Binding)>>,
    open_target: Option<OpenTargetRegion>,
    in_device_function: bool,
    next_region: u32,
}

fn type_keyword(name: &str) -> Option<Type> {
    Some(match name {
        "void" => Type::Void,
        "i32" | "int" | "int32_t" => Type::Scalar(ScalarType::I32),
        "u32" | "unsigned" | "uint32_t" => Type::Scalar(ScalarType::U32),
        "i64" | "int64_t" => Type::Scalar(ScalarType::I64),
        "u64" | "uint64_t" => Type::Scalar(ScalarType::U64),
        "ident" => Type::Ident,
        _ => return None,
    })
}

fn assign_op(p: &str) -> Option<AssignOp> {
    Some(match p {
        "=" => AssignOp::Set,
        "+=" => AssignOp::Add,
        "-=" => AssignOp::Sub,
        "*=" => AssignOp::Mul,
        "/=" => AssignOp::Div,
        "%=" => AssignOp::Rem,
        "&=" => AssignOp::And,
        "|=" => AssignOp::Or,
        "^=" => AssignOp::Xor,
        "<<=" => AssignOp::Shl,
        ">>=" => AssignOp::Shr,
        _ => return None,
    })
}

/// Binary operators by precedence level, loosest first.
const BINARY_LEVELS: [&[(&str, BinaryOp)]; 10] = [
    &[("||", BinaryOp::LogicalOr)],
    &[("&&", BinaryOp::LogicalAnd)],
    &[("|", BinaryOp::BitOr)],
    &[("^", BinaryOp::BitXor)],
    &[("&", BinaryOp::BitAnd)],
    &[("==", BinaryOp::Eq), ("!=", BinaryOp::Ne)],
    &[
        ("<", BinaryOp::Lt),
        ("<=", BinaryOp::Le),
        (">", BinaryOp::Gt),
        (">=", BinaryOp::Ge),
    ],
    &[("<<", BinaryOp::Shl), (">>", BinaryOp::Shr)],
    &[("+", BinaryOp::Add), ("-", BinaryOp::Sub)],
    &[
        ("*", BinaryOp::Mul),
        ("/", BinaryOp::Div),
        ("%", BinaryOp::Rem),
    ],
];

/// C typing of an integer literal.
fn literal_type(value: u64, unsigned: bool, long: bool) -> Option<ScalarType> {
    let fits_i32 = value <= i32::MAX as u64;
    let fits_u32 = value <= u32::MAX as u64;
    let fits_i64 = value <= i64::MAX as u64;
    Some(match (unsigned, long) {
        (false, false) if fits_i32 => ScalarType::I32,
        (false, _) if fits_i64 => ScalarType::I64,
        (false, _) => ScalarType::U64,
        (true, false) if fits_u32 => ScalarType::U32,
        (true, _) => ScalarType::U64,
    })
}

impl Parser {
    fn new(toks: Vec<Token>) -> Self {
        Self {
            toks,
            pos: 0,
            diags: Vec::new(),
            module: SourceModule::default(),
            regions: Vec::new(),
            scopes: Vec::new(),
            open_target: None,
            in_device_function: false,
            next_region: 0,
        }
    }

    fn peek(&self) -> &Tok {
        &self.toks[self.pos].tok
    }

    fn peek_at(&self, off: usize) -> &Tok {
        let i = (self.pos + off).min(self.toks.len() - 1);
        &self.toks[i].tok
    }

    fn span(&self) -> Span {
        self.toks[self.pos].span
    }

    fn at_eof(&self) -> bool {
        matches!(self.peek(), Tok::Eof)
    }

    fn advance(&mut self) -> Token {
        let t = self.toks[self.pos].clone();
        if self.pos + 1 < self.toks.len() {
            self.pos += 1;
        }
        t
    }

    fn is_punct(&self, p: &str) -> bool {
        matches!(self.peek(), Tok::Punct(q) if *q == p)
    }

    fn is_ident(&self, name: &str) -> bool {
        matches!(self.peek(), Tok::Ident(n) if n == name)
    }

    fn eat(&mut self, p: &str) -> bool {
        if self.is_punct(p) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn eat_ident(&mut self, name: &str) -> bool {
        if self.is_ident(name) {
            self.advance();
            true
        } else {
            false
        }
    }

    fn describe(tok: &Tok) -> String {
        match tok {
            Tok::Ident(s) => format!("`{s}`"),
            Tok::Int(v, ..) => format!("`{v}`"),
            Tok::Str(_) => "string literal".into(),
            Tok::Punct(p) => format!("`{p}`"),
            Tok::Pragma(_) => "pragma".into(),
            Tok::Eof => "end of input".into(),
        }
    }

    fn unexpected(&self, expected: &str) -> Diagnostic {
        Diagnostic::new(
            self.span(),
            format!("expected {expected}, found {}", Self::describe(self.peek())),
        )
    }

    fn expect(&mut self, p: &str) -> PResult<()> {
        if self.eat(p) {
            Ok(())
        } else {
            Err(self.unexpected(&format!("`{p}`")))
        }
    }

    fn ident(&mut self) -> PResult<(String, Span)> {
        match self.peek().clone() {
            Tok::Ident(s) => {
                let span = self.span();
                self.advance();
                Ok((s, span))
            }
            _ => Err(self.unexpected("identifier")),
        }
    }

    fn int_literal(&mut self) -> PResult<u64> {
        match *self.peek() {
            Tok::Int(v, ..) => {
                self.advance();
                Ok(v)
            }
            _ => Err(self.unexpected("integer literal")),
        }
    }

    fn peek_type(&self) -> Option<Type> {
        match self.peek() {
            Tok::Ident(n) => type_keyword(n),
            _ => None,
        }
    }

    fn in_declare_target(&self) -> bool {
        self.regions.iter().any(|r| matches!(r, Region::Target(_)))
    }

    fn current_variant(&self) -> Option<ContextSelector> {
        self.regions.iter().rev().find_map(|r| match r {
            Region::Variant(sel, _) => Some(sel.clone()),
            Region::Target(_) => None,
        })
    }

    // ----------------------------------------------------------- top level

    fn module(&mut self) -> PResult<()> {
        while !self.at_eof() {
            if let Tok::Pragma(text) = self.peek().clone() {
                let span = self.span();
                self.advance();
                if let Err(d) = self.top_pragma(&text, span) {
                    self.diags.push(d);
                }
                continue;
            }
            self.declaration()?;
        }
        for region in self.regions.drain(..).rev() {
            let d = match region {
                Region::Target(span) => Diagnostic::new(span, "unbalanced declare target"),
                Region::Variant(_, span) => Diagnostic::new(span, "unbalanced declare variant"),
            };
            self.diags.push(d);
        }
        Ok(())
    }

    fn top_pragma(&mut self, text: &str, span: Span) -> PResult<()> {
        let words: Vec<&str> = text.split_whitespace().collect();
        match words.as_slice() {
            ["begin", "declare", "target"] | ["declare", "target"] => {
                self.regions.push(Region::Target(span));
                Ok(())
            }
            ["end", "declare", "target"] => match self.regions.last() {
                Some(Region::Target(_)) => {
                    self.regions.pop();
                    Ok(())
                }
                Some(Region::Variant(..)) => Err(Diagnostic::new(
                    span,
                    "unbalanced declare variant: `end declare target` inside declare variant",
                )),
                None => Err(Diagnostic::new(span, "unbalanced declare target")),
            },
            ["end", "declare", "variant"] => match self.regions.last() {
                Some(Region::Variant(..)) => {
                    self.regions.pop();
                    Ok(())
                }
                Some(Region::Target(_)) => Err(Diagnostic::new(
                    span,
                    "unbalanced declare target: `end declare variant` inside declare target",
                )),
                None => Err(Diagnostic::new(span, "unbalanced declare variant")),
            },
            ["begin", "declare", "variant", ..] => {
                let rest = text
                    .trim_start()
                    .strip_prefix("begin")
                    .map(str::trim_start)
                    .and_then(|t| t.strip_prefix("declare"))
                    .map(str::trim_start)
                    .and_then(|t| t.strip_prefix("variant"))
                    .unwrap_or("")
                    .trim();
                let inner = clause_body(rest, "match").ok_or_else(|| {
                    Diagnostic::new(span, "declare variant requires a match clause")
                })?;
                let sel = parse_selector_at(inner, span)?;
                if self.current_variant().is_some() {
                    return Err(Diagnostic::new(
                        span,
                        "nested declare variant regions are not supported",
                    ));
                }
                self.regions.push(Region::Variant(sel, span));
                Ok(())
            }
            ["declare", "variant", ..] => Err(Diagnostic::new(
                span,
                "only the begin/end form of declare variant is supported",
            )),
            [first, ..] if first.starts_with("allocate") => self.allocate_pragma(text, span),
            _ => Err(Diagnostic::new(
                span,
                format!("unknown pragma `omp {}`", text.trim()),
            )),
        }
    }

    fn allocate_pragma(&mut self, text: &str, span: Span) -> PResult<()> {
        let names_text = clause_body(text, "allocate")
            .ok_or_else(|| Diagnostic::new(span, "malformed allocate directive"))?;
        let allocator = match clause_body(text, "allocator") {
            Some(name) => Allocator::from_omp_name(name.trim()).ok_or_else(|| {
                Diagnostic::new(span, format!("unknown allocator `{}`", name.trim()))
            })?,
            None => Allocator::Default,
        };
        let device = self.in_declare_target();
        for name in names_text.split(',').map(str::trim) {
            let index = self
                .module
                .declarations
                .iter()
                .position(|d| matches!(d, Decl::Global(g) if g.name == name));
            let Some(index) = index else {
                return Err(Diagnostic::new(
                    span,
                    format!("allocate names undeclared variable `{name}`"),
                ));
            };
            if allocator != Allocator::Default && !(device && self.module.is_device(index)) {
                return Err(Diagnostic::new(span, "allocator outside declare target"));
            }
            if let Decl::Global(g) = &mut self.module.declarations[index] {
                g.allocator = allocator;
            }
        }
        Ok(())
    }

    fn push_decl(&mut self, decl: Decl) {
        let index = self.module.declarations.len();
        if self.in_declare_target() {
            self.module.device_span.insert(index);
        }
        self.module.declarations.push(decl);
    }

    fn declaration(&mut self) -> PResult<()> {
        let span = self.span();
        let is_extern = self.eat_ident("extern");
        let Some(ty) = self.peek_type() else {
            return Err(self.unexpected("declaration"));
        };
        self.advance();
        let (name, _) = self.ident()?;
        if self.is_punct("(") {
            return self.function(name, ty, is_extern, span);
        }
        let Some(value_type) = ty.carrier().filter(|_| ty != Type::Ident) else {
            return Err(Diagnostic::new(span, "global variables must have an integer type"));
        };
        if self.current_variant().is_some() {
            return Err(Diagnostic::new(
                span,
                "only functions may appear in a declare variant region",
            ));
        }
        let mut len = None;
        let attr_next = matches!(self.peek_at(1), Tok::Punct(q) if *q == "[");
        if self.is_punct("[") && !attr_next {
            self.advance();
            let n = self.int_literal()?;
            if n == 0 || n > u32::MAX as u64 {
                return Err(Diagnostic::new(span, "array length must be positive"));
            }
            len = Some(n as u32);
            self.expect("]")?;
        }
        let mut initializer = None;
        if self.eat("=") {
            let negative = self.eat("-");
            let v = self.int_literal()? as i64;
            initializer = Some(if negative { v.wrapping_neg() } else { v });
        }
        let mut loader_uninitialized = false;
        // `[[` is two tokens so that `a[b[i]]` lexes normally.
        if self.is_punct("[") && matches!(self.peek_at(1), Tok::Punct(q) if *q == "[") {
            self.advance();
            self.advance();
            let (attr, aspan) = self.ident()?;
            if attr != "loader_uninitialized" {
                return Err(Diagnostic::new(aspan, format!("unknown attribute `{attr}`")));
            }
            self.expect("]")?;
            self.expect("]")?;
            loader_uninitialized = true;
        }
        self.expect(";")?;
        if loader_uninitialized && initializer.is_some() {
            self.diags.push(Diagnostic::new(
                span,
                "loader_uninitialized variable cannot have an initializer",
            ));
        }
        if len.is_some() && initializer.is_some() {
            self.diags
                .push(Diagnostic::new(span, "array globals cannot have an initializer"));
        }
        self.push_decl(Decl::Global(GlobalDecl {
            name,
            value_type,
            len,
            initializer,
            allocator: Allocator::Default,
            loader_uninitialized,
            is_extern,
            span,
        }));
        Ok(())
    }

    fn function(&mut self, name: String, ret: Type, is_extern: bool, span: Span) -> PResult<()> {
        if matches!(ret, Type::Buffer(_)) {
            return Err(Diagnostic::new(span, "functions cannot return buffers"));
        }
        self.expect("(")?;
        let mut params = Vec::new();
        if self.is_ident("void") && matches!(self.peek_at(1), Tok::Punct(")")) {
            self.advance();
        }
        while !self.is_punct(")") {
            let Some(ty) = self.peek_type() else {
                return Err(self.unexpected("parameter type"));
            };
            self.advance();
            let pointer = self.eat("*");
            let (pname, pspan) = self.ident()?;
            let array = if self.eat("[") {
                self.expect("]")?;
                true
            } else {
                false
            };
            let ty = match (ty, pointer || array) {
                (Type::Scalar(s), true) => Type::Buffer(s),
                (Type::Void, _) | (Type::Ident, true) => {
                    return Err(Diagnostic::new(pspan, "invalid parameter type"))
                }
                (t, _) => t,
            };
            params.push(Param { name: pname, ty });
            if !self.eat(",") {
                break;
            }
        }
        self.expect(")")?;
        let variant_of = self.current_variant().map(|selector| VariantOf {
            base: name.clone(),
            selector,
        });
        let body = if self.eat(";") {
            None
        } else {
            if is_extern {
                return Err(Diagnostic::new(span, "extern function cannot have a body"));
            }
            self.in_device_function = self.in_declare_target();
            self.scopes.push(
                params
                    .iter()
                    .map(|p| {
                        let b = match p.ty {
                            Type::Buffer(_) => Binding::BufferParam,
                            t => Binding::Scalar(t.carrier().unwrap_or(ScalarType::U64)),
                        };
                        (p.name.clone(), b)
                    })
                    .collect(),
            );
            let body = self.block_body();
            self.scopes.pop();
            Some(body?)
        };
        if variant_of.is_some() && body.is_none() {
            return Err(Diagnostic::new(span, "declare variant functions need a body"));
        }
        self.push_decl(Decl::Function(FunctionDecl {
            name,
            ret,
            params,
            body,
            variant_of,
            span,
        }));
        Ok(())
    }

    // ---------------------------------------------------------- statements

    /// Parses `{ stmt* }` in a fresh scope.
    fn block_body(&mut self) -> PResult<Block> {
        self.expect("{")?;
        self.scopes.push(Vec::new());
        let mut out = Vec::new();
        while !self.is_punct("}") {
            if self.at_eof() {
                self.scopes.pop();
                return Err(self.unexpected("`}`"));
            }
            match self.statement() {
                Ok(s) => out.push(s),
                Err(e) => {
                    self.scopes.pop();
                    return Err(e);
                }
            }
        }
        self.advance();
        self.scopes.pop();
        Ok(out)
    }

    /// A statement used as the body of a control construct, as a block.
    fn sub_block(&mut self) -> PResult<Block> {
        if self.is_punct("{") {
            self.block_body()
        } else {
            self.scopes.push(Vec::new());
            let s = self.statement();
            self.scopes.pop();
            Ok(vec![s?])
        }
    }

    fn declare_local(&mut self, name: &str, binding: Binding) {
        if let Some(scope) = self.scopes.last_mut() {
            scope.push((name.to_string(), binding));
        }
    }

    fn statement(&mut self) -> PResult<Stmt> {
        let span = self.span();
        if let Tok::Pragma(text) = self.peek().clone() {
            self.advance();
            return self.stmt_pragma(&text, span);
        }
        if self.is_punct("{") {
            return Ok(Stmt::new(StmtKind::Block(self.block_body()?), span));
        }
        if let Tok::Ident(word) = self.peek().clone() {
            match word.as_str() {
                "if" => {
                    self.advance();
                    self.expect("(")?;
                    let cond = self.expr()?;
                    self.expect(")")?;
                    let then_block = self.sub_block()?;
                    let else_block = if self.eat_ident("else") {
                        Some(self.sub_block()?)
                    } else {
                        None
                    };
                    return Ok(Stmt::new(
                        StmtKind::If {
                            cond,
                            then_block,
                            else_block,
                        },
                        span,
                    ));
                }
                "while" => {
                    self.advance();
                    self.expect("(")?;
                    let cond = self.expr()?;
                    self.expect(")")?;
                    let body = self.sub_block()?;
                    return Ok(Stmt::new(StmtKind::While { cond, body }, span));
                }
                "for" => return self.for_stmt(span),
                "return" => {
                    self.advance();
                    let value = if self.is_punct(";") {
                        None
                    } else {
                        Some(self.expr()?)
                    };
                    self.expect(";")?;
                    return Ok(Stmt::new(StmtKind::Return(value), span));
                }
                "break" | "continue" => {
                    self.advance();
                    self.expect(";")?;
                    let kind = if word == "break" {
                        StmtKind::Break
                    } else {
                        StmtKind::Continue
                    };
                    return Ok(Stmt::new(kind, span));
                }
                "error" if matches!(self.peek_at(1), Tok::Punct("(")) => {
                    self.advance();
                    self.advance();
                    let msg = match self.peek().clone() {
                        Tok::Str(s) => {
                            self.advance();
                            s
                        }
                        _ => return Err(self.unexpected("string literal")),
                    };
                    self.expect(")")?;
                    self.expect(";")?;
                    return Ok(Stmt::new(StmtKind::Error(msg), span));
                }
                _ => {}
            }
        }
        let s = self.simple_statement()?;
        self.expect(";")?;
        Ok(s)
    }

    fn for_stmt(&mut self, span: Span) -> PResult<Stmt> {
        self.advance();
        self.expect("(")?;
        self.scopes.push(Vec::new());
        let result = (|| {
            let init = if self.is_punct(";") {
                None
            } else {
                Some(Box::new(self.simple_statement()?))
            };
            self.expect(";")?;
            let cond = if self.is_punct(";") {
                None
            } else {
                Some(self.expr()?)
            };
            self.expect(";")?;
            let step = if self.is_punct(")") {
                None
            } else {
                Some(Box::new(self.simple_statement()?))
            };
            self.expect(")")?;
            let body = self.sub_block()?;
            Ok(Stmt::new(
                StmtKind::For {
                    init,
                    cond,
                    step,
                    body,
                },
                span,
            ))
        })();
        self.scopes.pop();
        result
    }

    /// Local declaration, assignment, increment or call, without the `;`.
    fn simple_statement(&mut self) -> PResult<Stmt> {
        let span = self.span();
        if let Some(ty) = self.peek_type() {
            let Type::Scalar(ty) = ty else {
                return Err(Diagnostic::new(span, "local variables must have an integer type"));
            };
            self.advance();
            let (name, _) = self.ident()?;
            let mut len = None;
            if self.eat("[") {
                let n = self.int_literal()?;
                if n == 0 || n > u32::MAX as u64 {
                    return Err(Diagnostic::new(span, "array length must be positive"));
                }
                len = Some(n as u32);
                self.expect("]")?;
            }
            let init = if self.eat("=") {
                if len.is_some() {
                    return Err(Diagnostic::new(span, "array locals cannot have an initializer"));
                }
                Some(self.expr()?)
            } else {
                None
            };
            let binding = match len {
                Some(n) => Binding::Array(ty, n),
                None => Binding::Scalar(ty),
            };
            self.declare_local(&name, binding);
            return Ok(Stmt::new(StmtKind::Local { name, ty, len, init }, span));
        }
        for (p, op) in [("++", AssignOp::Add), ("--", AssignOp::Sub)] {
            if self.eat(p) {
                let target = self.unary()?;
                return Ok(Stmt::new(
                    StmtKind::Assign {
                        target,
                        op,
                        value: Expr::int(1),
                    },
                    span,
                ));
            }
        }
        let lhs = self.expr()?;
        if let Tok::Punct(p) = *self.peek() {
            if let Some(op) = assign_op(p) {
                self.advance();
                let value = self.expr()?;
                return Ok(Stmt::new(
                    StmtKind::Assign {
                        target: lhs,
                        op,
                        value,
                    },
                    span,
                ));
            }
            for (q, op) in [("++", AssignOp::Add), ("--", AssignOp::Sub)] {
                if p == q {
                    self.advance();
                    return Ok(Stmt::new(
                        StmtKind::Assign {
                            target: lhs,
                            op,
                            value: Expr::int(1),
                        },
                        span,
                    ));
                }
            }
        }
        Ok(Stmt::new(StmtKind::Expr(lhs), span))
    }

    fn stmt_pragma(&mut self, text: &str, span: Span) -> PResult<Stmt> {
        let words: Vec<String> = directive_words(text);
        match words.first().map(String::as_str) {
            Some("atomic") => self.atomic_construct(&words[1..], span),
            Some("target") => self.target_region(text, span),
            _ => Err(Diagnostic::new(
                span,
                format!("unknown pragma `omp {}`", text.trim()),
            )),
        }
    }

    fn atomic_construct(&mut self, clauses: &[String], span: Span) -> PResult<Stmt> {
        let (mut capture, mut compare, mut seq_cst) = (false, false, false);
        for clause in clauses {
            match clause.as_str() {
                "capture" => capture = true,
                "compare" => compare = true,
                "seq_cst" => seq_cst = true,
                "relaxed" | "acquire" | "release" | "acq_rel" => {
                    return Err(Diagnostic::new(
                        span,
                        format!("only seq_cst ordering is supported, found `{clause}`"),
                    ))
                }
                other => {
                    return Err(Diagnostic::new(
                        span,
                        format!("unsupported atomic clause `{other}`"),
                    ))
                }
            }
        }
        if !seq_cst {
            return Err(Diagnostic::new(
                span,
                "atomic construct requires seq_cst ordering",
            ));
        }
        let block = self.sub_block()?;
        let block = match block.as_slice() {
            [Stmt {
                kind: StmtKind::Block(inner),
                ..
            }] => inner.clone(),
            _ => block,
        };
        Ok(Stmt::new(
            StmtKind::Atomic(AtomicConstruct {
                has_capture: capture,
                has_compare: compare,
                ordering: AtomicOrdering::SeqCst,
                block,
                span,
            }),
            span,
        ))
    }

    fn target_region(&mut self, text: &str, span: Span) -> PResult<Stmt> {
        if self.in_device_function || self.open_target.is_some() {
            return Err(Diagnostic::new(span, "target region inside device code"));
        }
        let (teams, num_teams, thread_limit) = target_clauses(text, span)?;
        if !self.is_punct("{") {
            return Err(self.unexpected("`{` after target directive"));
        }
        let id = self.next_region;
        self.next_region += 1;
        self.open_target = Some(OpenTargetRegion {
            depth: self.scopes.len(),
            captures: Vec::new(),
        });
        self.in_device_function = true;
        let body = self.block_body();
        self.in_device_function = false;
        let open = self.open_target.take().expect("open target region");
        let body = body?;
        self.module.target_regions.push(TargetRegion {
            id,
            num_teams,
            thread_limit,
            teams,
            body,
            captured_args: open.captures,
            span,
        });
        Ok(Stmt::new(StmtKind::Target(id), span))
    }

    fn note_var_use(&mut self, name: &str, span: Span) -> PResult<()> {
        let Some(open) = &self.open_target else {
            return Ok(());
        };
        let found = self
            .scopes
            .iter()
            .enumerate()
            .rev()
            .find_map(|(depth, scope)| {
                scope
                    .iter()
                    .rev()
                    .find(|(n, _)| n == name)
                    .map(|(_, b)| (depth, *b))
            });
        let Some((depth, binding)) = found else {
            return Ok(());
        };
        if depth >= open.depth || open.captures.iter().any(|c| c.name == name) {
            return Ok(());
        }
        let kind = match binding {
            Binding::Scalar(ty) => CaptureKind::Scalar(ty),
            Binding::Array(elem, len) => CaptureKind::Buffer { elem, len },
            Binding::BufferParam => {
                return Err(Diagnostic::new(
                    span,
                    format!("cannot map buffer parameter `{name}` of unknown size into a target region"),
                ))
            }
        };
        if let Some(open) = &mut self.open_target {
            open.captures.push(Capture {
                name: name.to_string(),
                kind,
            });
        }
        Ok(())
    }

    // --------------------------------------------------------- expressions

    fn expr(&mut self) -> PResult<Expr> {
        let cond = self.binary(0)?;
        if self.eat("?") {
            let a = self.expr()?;
            self.expect(":")?;
            let b = self.expr()?;
            return Ok(Expr::Ternary(Box::new(cond), Box::new(a), Box::new(b)));
        }
        Ok(cond)
    }

    fn binary(&mut self, level: usize) -> PResult<Expr> {
        if level == BINARY_LEVELS.len() {
            return self.unary();
        }
        let mut lhs = self.binary(level + 1)?;
        'outer: loop {
            for (sym, op) in BINARY_LEVELS[level] {
                if self.is_punct(sym) {
                    self.advance();
                    let rhs = self.binary(level + 1)?;
                    lhs = Expr::Binary(*op, Box::new(lhs), Box::new(rhs));
                    continue 'outer;
                }
            }
            return Ok(lhs);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        for (sym, op) in [("-", UnaryOp::Neg), ("!", UnaryOp::Not), ("~", UnaryOp::BitNot)] {
            if self.eat(sym) {
                return Ok(Expr::Unary(op, Box::new(self.unary()?)));
            }
        }
        if self.eat("*") {
            return Ok(Expr::Deref(Box::new(self.unary()?)));
        }
        if self.is_punct("(") {
            if let Tok::Ident(n) = self.peek_at(1) {
                if let Some(Type::Scalar(ty)) = type_keyword(n) {
                    self.advance();
                    self.advance();
                    self.expect(")")?;
                    return Ok(Expr::Cast(ty, Box::new(self.unary()?)));
                }
            }
        }
        self.postfix()
    }

    fn postfix(&mut self) -> PResult<Expr> {
        let mut e = self.primary()?;
        while self.eat("[") {
            let idx = self.expr()?;
            self.expect("]")?;
            e = Expr::Index(Box::new(e), Box::new(idx));
        }
        Ok(e)
    }

    fn primary(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().clone() {
            Tok::Int(value, unsigned, long) => {
                self.advance();
                let ty = literal_type(value, unsigned, long)
                    .ok_or_else(|| Diagnostic::new(span, "integer literal out of range"))?;
                Ok(Expr::Int(Literal { value, ty }))
            }
            Tok::Ident(name) => {
                self.advance();
                if self.eat("(") {
                    let mut args = Vec::new();
                    while !self.is_punct(")") {
                        args.push(self.expr()?);
                        if !self.eat(",") {
                            break;
                        }
                    }
                    self.expect(")")?;
                    return Ok(Expr::Call(name, args));
                }
                self.note_var_use(&name, span)?;
                Ok(Expr::Var(name))
            }
            Tok::Punct("(") => {
                self.advance();
                let e = self.expr()?;
                self.expect(")")?;
                Ok(e)
            }
            _ => Err(self.unexpected("expression")),
        }
    }

    // ---------------------------------------------------------- validation

    fn validate(&mut self) {
        let mut functions: BTreeMap<&str, &FunctionDecl> = BTreeMap::new();
        let mut globals: BTreeMap<&str, &GlobalDecl> = BTreeMap::new();
        let mut diags = Vec::new();
        for decl in &self.module.declarations {
            match decl {
                Decl::Function(f) if f.variant_of.is_none() => {
                    if let Some(prev) = functions.get(f.name.as_str()) {
                        let both_defined = prev.body.is_some() && f.body.is_some();
                        if both_defined || !prev.same_signature(f) {
                            diags.push(Diagnostic::new(
                                f.span,
                                format!("redefinition of function `{}`", f.name),
                            ));
                        }
                        if prev.body.is_some() {
                            continue;
                        }
                    }
                    functions.insert(&f.name, f);
                }
                Decl::Global(g) => {
                    if globals.insert(&g.name, g).is_some() {
                        diags.push(Diagnostic::new(
                            g.span,
                            format!("redefinition of variable `{}`", g.name),
                        ));
                    }
                }
                Decl::Function(_) => {}
            }
        }
        for name in functions.keys() {
            if let Some(g) = globals.get(name) {
                diags.push(Diagnostic::new(
                    g.span,
                    format!("`{name}` redeclared as a different kind of symbol"),
                ));
            }
        }
        for f in self.module.functions() {
            let Some(v) = &f.variant_of else { continue };
            match functions.get(v.base.as_str()) {
                None => diags.push(Diagnostic::new(
                    f.span,
                    format!("declare variant `{}` has no base function", v.base),
                )),
                Some(base) if !base.same_signature(f) => diags.push(Diagnostic::new(
                    f.span,
                    format!("variant signature mismatch for `{}`", v.base),
                )),
                Some(_) => {}
            }
        }
        self.diags.extend(diags);
    }
}

/// Returns the text between the parentheses of `name(...)` in `text`.
fn clause_body<'t>(text: &'t str, name: &str) -> Option<&'t str> {
    let mut search = 0;
    while let Some(found) = text[search..].find(name) {
        let start = search + found;
        let before_ok = start == 0
            || !text.as_bytes()[start - 1].is_ascii_alphanumeric()
                && text.as_bytes()[start - 1] != b'_';
        let after = text[start + name.len()..].trim_start();
        if before_ok && after.starts_with('(') {
            let open = text.len() - after.len();
            let mut depth = 0;
            for (i, c) in text[open..].char_indices() {
                match c {
                    '(' => depth += 1,
                    ')' => {
                        depth -= 1;
                        if depth == 0 {
                            return Some(&text[open + 1..open + i]);
                        }
                    }
                    _ => {}
                }
            }
            return None;
        }
        search = start + name.len();
    }
    None
}

/// Splits a directive into words, dropping clause arguments.
fn directive_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut depth = 0;
    let mut cur = String::new();
    for c in text.chars() {
        match c {
            '(' => {
                depth += 1;
            }
            ')' => depth -= 1,
            c if depth > 0 => {
                let _ = c;
            }
            c if c.is_whitespace() || c == ',' => {
                if !cur.is_empty() {
                    words.push(std::mem::take(&mut cur));
                }
            }
            c => cur.push(c),
        }
    }
    if !cur.is_empty() {
        words.push(cur);
    }
    words
}

fn target_clauses(text: &str, span: Span) -> PResult<(bool, Option<u32>, Option<u32>)> {
    let words = directive_words(text);
    let mut teams = false;
    let mut num_teams = None;
    let mut thread_limit = None;
    for w in &words[1..] {
        match w.as_str() {
            "teams" => teams = true,
            "num_teams" | "thread_limit" => {
                let arg = clause_body(text, w)
                    .ok_or_else(|| Diagnostic::new(span, format!("malformed `{w}` clause")))?;
                let n: u32 = arg.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
                    Diagnostic::new(span, format!("`{w}` requires a positive integer constant"))
                })?;
                if w == "num_teams" {
                    num_teams = Some(n);
                } else {
                    thread_limit = Some(n);
                }
            }
            other => {
                return Err(Diagnostic::new(
                    span,
                    format!("unsupported target clause `{other}`"),
                ))
            }
        }
    }
    Ok((teams, num_teams, thread_limit))
}

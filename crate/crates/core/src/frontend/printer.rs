//! Pretty-printer. Output re-parses to a structurally equal module.
use std::fmt::Write;

use super::ast::*;
use crate::selectors::ContextSelector;
use crate::types::ScalarType;

pub fn print_module(m: &SourceModule) -> String {
    let mut p = Printer {
        out: String::new(),
        indent: 0,
        module: m,
    };
    p.module();
    p.out
}

struct Printer<'m> {
    out: String,
    indent: usize,
    module: &'m SourceModule,
}

fn type_name(t: Type) -> String {
    match t {
        Type::Void => "void".into(),
        Type::Scalar(s) => s.name().into(),
        Type::Ident => "ident".into(),
        Type::Buffer(s) => format!("{s}*"),
    }
}

fn literal(l: Literal) -> String {
    match l.ty {
        ScalarType::I32 => format!("{}", l.value),
        ScalarType::U32 => format!("{}u", l.value),
        ScalarType::I64 => format!("{}l", l.value),
        ScalarType::U64 => format!("{}ul", l.value),
    }
}

pub fn print_expr(e: &Expr) -> String {
    match e {
        Expr::Int(l) => literal(*l),
        Expr::Var(n) => n.clone(),
        Expr::Deref(e) => format!("*{}", print_operand(e)),
        Expr::Index(a, i) => format!("{}[{}]", print_operand(a), print_expr(i)),
        Expr::Unary(op, e) => format!("{}{}", op.symbol(), print_operand(e)),
        Expr::Binary(op, a, b) => format!(
            "{} {} {}",
            print_operand(a),
            op.symbol(),
            print_operand(b)
        ),
        Expr::Ternary(c, a, b) => format!(
            "{} ? {} : {}",
            print_operand(c),
            print_operand(a),
            print_operand(b)
        ),
        Expr::Call(name, args) => {
            let args: Vec<_> = args.iter().map(print_expr).collect();
            format!("{name}({})", args.join(", "))
        }
        Expr::Cast(ty, e) => format!("({ty}){}", print_operand(e)),
    }
}

/// Prints a subexpression, parenthesized unless it is atomic.
fn print_operand(e: &Expr) -> String {
    match e {
        Expr::Int(_) | Expr::Var(_) | Expr::Call(..) | Expr::Index(..) => print_expr(e),
        _ => format!("({})", print_expr(e)),
    }
}

impl Printer<'_> {
    fn line(&mut self, text: &str) {
        for _ in 0..self.indent {
            self.out.push_str("  ");
        }
        self.out.push_str(text);
        self.out.push('\n');
    }

    fn module(&mut self) {
        let mut in_target = false;
        let mut variant: Option<&ContextSelector> = None;
        for (i, decl) in self.module.declarations.iter().enumerate() {
            let device = self.module.is_device(i);
            let sel = match decl {
                Decl::Function(f) => f.variant_of.as_ref().map(|v| &v.selector),
                Decl::Global(_) => None,
            };
            if variant.is_some() && (variant != sel || device != in_target) {
                self.line("#pragma omp end declare variant");
                variant = None;
            }
            if device != in_target {
                if in_target {
                    self.line("#pragma omp end declare target");
                } else {
                    self.line("#pragma omp begin declare target");
                }
                in_target = device;
            }
            if sel.is_some() && variant != sel {
                let s = sel.expect("selector");
                self.line(&format!("#pragma omp begin declare variant match({s})"));
                variant = sel;
            }
            match decl {
                Decl::Global(g) => self.global(g),
                Decl::Function(f) => self.function(f),
            }
        }
        if variant.is_some() {
            self.line("#pragma omp end declare variant");
        }
        if in_target {
            self.line("#pragma omp end declare target");
        }
    }

    fn global(&mut self, g: &GlobalDecl) {
        let mut s = String::new();
        if g.is_extern {
            s.push_str("extern ");
        }
        write!(s, "{} {}", g.value_type, g.name).unwrap();
        if let Some(n) = g.len {
            write!(s, "[{n}]").unwrap();
        }
        if let Some(v) = g.initializer {
            write!(s, " = {v}").unwrap();
        }
        if g.loader_uninitialized {
            s.push_str(" [[loader_uninitialized]]");
        }
        s.push(';');
        self.line(&s);
        if g.allocator != Allocator::Default {
            self.line(&format!(
                "#pragma omp allocate({}) allocator({})",
                g.name,
                g.allocator.omp_name()
            ));
        }
    }

    fn function(&mut self, f: &FunctionDecl) {
        let params: Vec<String> = f
            .params
            .iter()
            .map(|p| match p.ty {
                Type::Buffer(s) => format!("{s} *{}", p.name),
                t => format!("{} {}", type_name(t), p.name),
            })
            .collect();
        let head = format!("{} {}({})", type_name(f.ret), f.name, params.join(", "));
        match &f.body {
            None => self.line(&format!("extern {head};")),
            Some(body) => {
                self.line(&format!("{head} {{"));
                self.indent += 1;
                self.block(body);
                self.indent -= 1;
                self.line("}");
            }
        }
    }

    fn block(&mut self, b: &Block) {
        for s in b {
            self.stmt(s);
        }
    }

    fn braced(&mut self, head: &str, b: &Block) {
        self.line(&format!("{head}{{"));
        self.indent += 1;
        self.block(b);
        self.indent -= 1;
        self.line("}");
    }

    fn simple(s: &Stmt) -> String {
        match &s.kind {
            StmtKind::Local { name, ty, len, init } => {
                let mut out = format!("{ty} {name}");
                if let Some(n) = len {
                    write!(out, "[{n}]").unwrap();
                }
                if let Some(e) = init {
                    write!(out, " = {}", print_expr(e)).unwrap();
                }
                out
            }
            StmtKind::Assign { target, op, value } => {
                format!("{} {} {}", print_expr(target), op.symbol(), print_expr(value))
            }
            StmtKind::Expr(e) => print_expr(e),
            other => unreachable!("not a simple statement: {other:?}"),
        }
    }

    fn stmt(&mut self, s: &Stmt) {
        match &s.kind {
            StmtKind::Local { .. } | StmtKind::Assign { .. } | StmtKind::Expr(_) => {
                let text = format!("{};", Self::simple(s));
                self.line(&text);
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                self.line(&format!("if ({}) {{", print_expr(cond)));
                self.indent += 1;
                self.block(then_block);
                self.indent -= 1;
                match else_block {
                    Some(b) => {
                        self.line("} else {");
                        self.indent += 1;
                        self.block(b);
                        self.indent -= 1;
                        self.line("}");
                    }
                    None => self.line("}"),
                }
            }
            StmtKind::While { cond, body } => {
                self.braced(&format!("while ({}) ", print_expr(cond)), body)
            }
            StmtKind::For {
                init,
                cond,
                step,
                body,
            } => {
                let init = init.as_deref().map(Self::simple).unwrap_or_default();
                let cond = cond.as_ref().map(print_expr).unwrap_or_default();
                let step = step.as_deref().map(Self::simple).unwrap_or_default();
                self.braced(&format!("for ({init}; {cond}; {step}) "), body)
            }
            StmtKind::Return(None) => self.line("return;"),
            StmtKind::Return(Some(e)) => self.line(&format!("return {};", print_expr(e))),
            StmtKind::Break => self.line("break;"),
            StmtKind::Continue => self.line("continue;"),
            StmtKind::Block(b) => self.braced("", b),
            StmtKind::Error(msg) => self.line(&format!("error({msg:?});")),
            StmtKind::Atomic(a) => {
                let mut clauses = vec!["atomic"];
                if a.has_compare {
                    clauses.push("compare");
                }
                if a.has_capture {
                    clauses.push("capture");
                }
                clauses.push("seq_cst");
                self.line(&format!("#pragma omp {}", clauses.join(" ")));
                self.braced("", &a.block);
            }
            StmtKind::AtomicOp(op) => {
                let mut args = vec![print_expr(&op.x), print_expr(&op.e)];
                if let Some(d) = &op.d {
                    args.push(print_expr(d));
                }
                self.line(&format!(
                    "{} = {}({});",
                    print_expr(&op.v),
                    op.kind.builtin_name(),
                    args.join(", ")
                ));
            }
            StmtKind::Target(id) => {
                let region = self.module.region(*id).expect("target region");
                let mut d = String::from("#pragma omp target");
                if region.teams {
                    d.push_str(" teams");
                }
                if let Some(n) = region.num_teams {
                    write!(d, " num_teams({n})").unwrap();
                }
                if let Some(n) = region.thread_limit {
                    write!(d, " thread_limit({n})").unwrap();
                }
                self.line(&d);
                let body = region.body.clone();
                self.braced("", &body);
            }
        }
    }
}

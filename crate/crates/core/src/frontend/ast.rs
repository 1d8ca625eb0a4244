//! Syntax tree of the mini-language.
use std::collections::BTreeSet;

use crate::diag::Span;
use crate::lowering::AtomicIntrinsic;
use crate::selectors::ContextSelector;
use crate::types::ScalarType;

/// A parsed translation unit.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SourceModule {
    pub declarations: Vec<Decl>,
    pub target_regions: Vec<TargetRegion>,
    /// Indices into `declarations` covered by a declare-target region.
    pub device_span: BTreeSet<usize>,
}

impl SourceModule {
    pub fn functions(&self) -> impl Iterator<Item = &FunctionDecl> {
        self.declarations.iter().filter_map(|d| match d {
            Decl::Function(f) => Some(f),
            Decl::Global(_) => None,
        })
    }

    pub fn globals(&self) -> impl Iterator<Item = &GlobalDecl> {
        self.declarations.iter().filter_map(|d| match d {
            Decl::Global(g) => Some(g),
            Decl::Function(_) => None,
        })
    }

    pub fn is_device(&self, index: usize) -> bool {
        self.device_span.contains(&index)
    }

    /// Looks up a base (non-variant) function by name.
    pub fn base_function(&self, name: &str) -> Option<&FunctionDecl> {
        self.functions()
            .find(|f| f.name == name && f.variant_of.is_none() && f.body.is_some())
            .or_else(|| {
                self.functions()
                    .find(|f| f.name == name && f.variant_of.is_none())
            })
    }

    pub fn global(&self, name: &str) -> Option<&GlobalDecl> {
        self.globals().find(|g| g.name == name)
    }

    pub fn region(&self, id: u32) -> Option<&TargetRegion> {
        self.target_regions.iter().find(|r| r.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Decl {
    Global(GlobalDecl),
    Function(FunctionDecl),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Allocator {
    #[default]
    Default,
    Pteam,
    Cgroup,
}

impl Allocator {
    pub fn omp_name(self) -> &'static str {
        match self {
            Allocator::Default => "omp_default_mem_alloc",
            Allocator::Pteam => "omp_pteam_mem_alloc",
            Allocator::Cgroup => "omp_cgroup_mem_alloc",
        }
    }

    pub fn from_omp_name(name: &str) -> Option<Self> {
        [Allocator::Default, Allocator::Pteam, Allocator::Cgroup]
            .into_iter()
            .find(|a| a.omp_name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GlobalDecl {
    pub name: String,
    pub value_type: ScalarType,
    /// Element count for array globals.
    pub len: Option<u32>,
    pub initializer: Option<i64>,
    pub allocator: Allocator,
    pub loader_uninitialized: bool,
    pub is_extern: bool,
    pub span: Span,
}

impl GlobalDecl {
    pub fn elements(&self) -> u32 {
        self.len.unwrap_or(1)
    }
}

/// Parameter and return types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Type {
    Void,
    Scalar(ScalarType),
    /// Opaque source-location token handed to runtime entry points.
    Ident,
    /// Reference to a device buffer of the element type.
    Buffer(ScalarType),
}

impl Type {
    /// The scalar type a value of this type is carried as.
    pub fn carrier(self) -> Option<ScalarType> {
        match self {
            Type::Scalar(s) => Some(s),
            Type::Ident => Some(ScalarType::U64),
            Type::Void | Type::Buffer(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Param {
    pub name: String,
    pub ty: Type,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VariantOf {
    pub base: String,
    pub selector: ContextSelector,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FunctionDecl {
    pub name: String,
    pub ret: Type,
    pub params: Vec<Param>,
    /// `None` for extern declarations.
    pub body: Option<Block>,
    pub variant_of: Option<VariantOf>,
    pub span: Span,
}

impl FunctionDecl {
    pub fn same_signature(&self, other: &FunctionDecl) -> bool {
        self.ret == other.ret
            && self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.ty == b.ty)
    }

    /// The symbol this function is emitted under: the base name for base
    /// functions, a mangled name for variants.
    pub fn symbol(&self) -> String {
        match &self.variant_of {
            Some(v) => crate::selectors::mangle_variant(&v.base, &v.selector),
            None => self.name.clone(),
        }
    }
}

pub type Block = Vec<Stmt>;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stmt {
    pub kind: StmtKind,
    pub span: Span,
}

impl Stmt {
    pub fn new(kind: StmtKind, span: Span) -> Self {
        Self { kind, span }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AssignOp {
    Set,
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    And,
    Or,
    Xor,
    Shl,
    Shr,
}

impl AssignOp {
    pub fn symbol(self) -> &'static str {
        match self {
            AssignOp::Set => "=",
            AssignOp::Add => "+=",
            AssignOp::Sub => "-=",
            AssignOp::Mul => "*=",
            AssignOp::Div => "/=",
            AssignOp::Rem => "%=",
            AssignOp::And => "&=",
            AssignOp::Or => "|=",
            AssignOp::Xor => "^=",
            AssignOp::Shl => "<<=",
            AssignOp::Shr => ">>=",
        }
    }

    pub fn binary(self) -> Option<BinaryOp> {
        Some(match self {
            AssignOp::Set => return None,
            AssignOp::Add => BinaryOp::Add,
            AssignOp::Sub => BinaryOp::Sub,
            AssignOp::Mul => BinaryOp::Mul,
            AssignOp::Div => BinaryOp::Div,
            AssignOp::Rem => BinaryOp::Rem,
            AssignOp::And => BinaryOp::BitAnd,
            AssignOp::Or => BinaryOp::BitOr,
            AssignOp::Xor => BinaryOp::BitXor,
            AssignOp::Shl => BinaryOp::Shl,
            AssignOp::Shr => BinaryOp::Shr,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StmtKind {
    Local {
        name: String,
        ty: ScalarType,
        len: Option<u32>,
        init: Option<Expr>,
    },
    Assign {
        target: Expr,
        op: AssignOp,
        value: Expr,
    },
    Expr(Expr),
    If {
        cond: Expr,
        then_block: Block,
        else_block: Option<Block>,
    },
    While {
        cond: Expr,
        body: Block,
    },
    For {
        init: Option<Box<Stmt>>,
        cond: Option<Expr>,
        step: Option<Box<Stmt>>,
        body: Block,
    },
    Return(Option<Expr>),
    Break,
    Continue,
    Block(Block),
    /// `error("...")`: compiling a function that contains this fails.
    Error(String),
    Atomic(AtomicConstruct),
    /// An atomic construct after lowering.
    AtomicOp(AtomicIntrinsic),
    /// Host-side launch of the target region with this id.
    Target(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomicOrdering {
    SeqCst,
}

/// `#pragma omp atomic [compare] capture seq_cst` and its structured block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomicConstruct {
    pub has_capture: bool,
    pub has_compare: bool,
    pub ordering: AtomicOrdering,
    pub block: Block,
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CaptureKind {
    Scalar(ScalarType),
    Buffer { elem: ScalarType, len: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Capture {
    pub name: String,
    pub kind: CaptureKind,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetRegion {
    pub id: u32,
    pub num_teams: Option<u32>,
    pub thread_limit: Option<u32>,
    /// Whether the directive was spelled `target teams`.
    pub teams: bool,
    pub body: Block,
    /// Kernel argument order.
    pub captured_args: Vec<Capture>,
    pub span: Span,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Rem,
    BitAnd,
    BitOr,
    BitXor,
    Shl,
    Shr,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    LogicalAnd,
    LogicalOr,
}

impl BinaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinaryOp::Add => "+",
            BinaryOp::Sub => "-",
            BinaryOp::Mul => "*",
            BinaryOp::Div => "/",
            BinaryOp::Rem => "%",
            BinaryOp::BitAnd => "&",
            BinaryOp::BitOr => "|",
            BinaryOp::BitXor => "^",
            BinaryOp::Shl => "<<",
            BinaryOp::Shr => ">>",
            BinaryOp::Eq => "==",
            BinaryOp::Ne => "!=",
            BinaryOp::Lt => "<",
            BinaryOp::Le => "<=",
            BinaryOp::Gt => ">",
            BinaryOp::Ge => ">=",
            BinaryOp::LogicalAnd => "&&",
            BinaryOp::LogicalOr => "||",
        }
    }

    pub fn is_comparison(self) -> bool {
        matches!(
            self,
            BinaryOp::Eq | BinaryOp::Ne | BinaryOp::Lt | BinaryOp::Le | BinaryOp::Gt | BinaryOp::Ge
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum UnaryOp {
    Neg,
    Not,
    BitNot,
}

impl UnaryOp {
    pub fn symbol(self) -> &'static str {
        match self {
            UnaryOp::Neg => "-",
            UnaryOp::Not => "!",
            UnaryOp::BitNot => "~",
        }
    }
}

/// Integer literal with its C type.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Literal {
    pub value: u64,
    pub ty: ScalarType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Expr {
    Int(Literal),
    Var(String),
    Deref(Box<Expr>),
    Index(Box<Expr>, Box<Expr>),
    Unary(UnaryOp, Box<Expr>),
    Binary(BinaryOp, Box<Expr>, Box<Expr>),
    Ternary(Box<Expr>, Box<Expr>, Box<Expr>),
    Call(String, Vec<Expr>),
    Cast(ScalarType, Box<Expr>),
}

impl Expr {
    pub fn int(value: i64) -> Self {
        Expr::Int(Literal {
            value: value as u64,
            ty: ScalarType::I32,
        })
    }

    pub fn var(name: &str) -> Self {
        Expr::Var(name.to_string())
    }

    /// Calls `f` on this expression and every subexpression.
    pub fn walk(&self, f: &mut impl FnMut(&Expr)) {
        f(self);
        match self {
            Expr::Int(_) | Expr::Var(_) => {}
            Expr::Deref(e) | Expr::Unary(_, e) | Expr::Cast(_, e) => e.walk(f),
            Expr::Index(a, b) | Expr::Binary(_, a, b) => {
                a.walk(f);
                b.walk(f);
            }
            Expr::Ternary(a, b, c) => {
                a.walk(f);
                b.walk(f);
                c.walk(f);
            }
            Expr::Call(_, args) => args.iter().for_each(|a| a.walk(f)),
        }
    }

    pub fn walk_mut(&mut self, f: &mut impl FnMut(&mut Expr)) {
        f(self);
        match self {
            Expr::Int(_) | Expr::Var(_) => {}
            Expr::Deref(e) | Expr::Unary(_, e) | Expr::Cast(_, e) => e.walk_mut(f),
            Expr::Index(a, b) | Expr::Binary(_, a, b) => {
                a.walk_mut(f);
                b.walk_mut(f);
            }
            Expr::Ternary(a, b, c) => {
                a.walk_mut(f);
                b.walk_mut(f);
                c.walk_mut(f);
            }
            Expr::Call(_, args) => args.iter_mut().for_each(|a| a.walk_mut(f)),
        }
    }
}

/// Visits every expression that appears in `block`, including nested
/// statements and lowered atomic operands.
pub fn walk_block_exprs(block: &Block, f: &mut impl FnMut(&Expr)) {
    for stmt in block {
        walk_stmt_exprs(stmt, f);
    }
}

pub fn walk_stmt_exprs(stmt: &Stmt, f: &mut impl FnMut(&Expr)) {
    match &stmt.kind {
        StmtKind::Local { init, .. } => {
            if let Some(e) = init {
                e.walk(f)
            }
        }
        StmtKind::Assign { target, value, .. } => {
            target.walk(f);
            value.walk(f);
        }
        StmtKind::Expr(e) => e.walk(f),
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            cond.walk(f);
            walk_block_exprs(then_block, f);
            if let Some(b) = else_block {
                walk_block_exprs(b, f);
            }
        }
        StmtKind::While { cond, body } => {
            cond.walk(f);
            walk_block_exprs(body, f);
        }
        StmtKind::For {
            init,
            cond,
            step,
            body,
        } => {
            if let Some(s) = init {
                walk_stmt_exprs(s, f);
            }
            if let Some(c) = cond {
                c.walk(f);
            }
            if let Some(s) = step {
                walk_stmt_exprs(s, f);
            }
            walk_block_exprs(body, f);
        }
        StmtKind::Return(e) => {
            if let Some(e) = e {
                e.walk(f)
            }
        }
        StmtKind::Block(b) => walk_block_exprs(b, f),
        StmtKind::Atomic(a) => walk_block_exprs(&a.block, f),
        StmtKind::AtomicOp(op) => {
            op.x.walk(f);
            op.e.walk(f);
            if let Some(d) = &op.d {
                d.walk(f);
            }
            op.v.walk(f);
        }
        StmtKind::Break | StmtKind::Continue | StmtKind::Error(_) | StmtKind::Target(_) => {}
    }
}

/// Mutable counterpart of [`walk_block_exprs`].
pub fn walk_block_exprs_mut(block: &mut Block, f: &mut impl FnMut(&mut Expr)) {
    for stmt in block {
        walk_stmt_exprs_mut(stmt, f);
    }
}

pub fn walk_stmt_exprs_mut(stmt: &mut Stmt, f: &mut impl FnMut(&mut Expr)) {
    match &mut stmt.kind {
        StmtKind::Local { init, .. } => {
            if let Some(e) = init {
                e.walk_mut(f)
            }
        }
        StmtKind::Assign { target, value, .. } => {
            target.walk_mut(f);
            value.walk_mut(f);
        }
        StmtKind::Expr(e) => e.walk_mut(f),
        StmtKind::If {
            cond,
            then_block,
            else_block,
        } => {
            cond.walk_mut(f);
            walk_block_exprs_mut(then_block, f);
            if let Some(b) = else_block {
                walk_block_exprs_mut(b, f);
            }
        }
        StmtKind::While { cond, body } => {
            cond.walk_mut(f);
            walk_block_exprs_mut(body, f);
        }
        StmtKind::For {
            init,
            cond,
            step,
            body,
        } => {
            if let Some(s) = init {
                walk_stmt_exprs_mut(s, f);
            }
            if let Some(c) = cond {
                c.walk_mut(f);
            }
            if let Some(s) = step {
                walk_stmt_exprs_mut(s, f);
            }
            walk_block_exprs_mut(body, f);
        }
        StmtKind::Return(e) => {
            if let Some(e) = e {
                e.walk_mut(f)
            }
        }
        StmtKind::Block(b) => walk_block_exprs_mut(b, f),
        StmtKind::Atomic(a) => walk_block_exprs_mut(&mut a.block, f),
        StmtKind::AtomicOp(op) => {
            op.x.walk_mut(f);
            op.e.walk_mut(f);
            if let Some(d) = &mut op.d {
                d.walk_mut(f);
            }
            op.v.walk_mut(f);
        }
        StmtKind::Break | StmtKind::Continue | StmtKind::Error(_) | StmtKind::Target(_) => {}
    }
}

/// Visits every statement in `block` recursively, pre-order.
pub fn walk_stmts_mut(block: &mut Block, f: &mut impl FnMut(&mut Stmt)) {
    for stmt in block.iter_mut() {
        f(stmt);
        match &mut stmt.kind {
            StmtKind::If {
                then_block,
                else_block,
                ..
            } => {
                walk_stmts_mut(then_block, f);
                if let Some(b) = else_block {
                    walk_stmts_mut(b, f);
                }
            }
            StmtKind::While { body, .. } | StmtKind::Block(body) => walk_stmts_mut(body, f),
            StmtKind::For { body, .. } => walk_stmts_mut(body, f),
            StmtKind::Atomic(a) => walk_stmts_mut(&mut a.block, f),
            _ => {}
        }
    }
}

//! Per-target specialization of a parsed module: variant resolution,
//! atomic-construct lowering and memory placement of globals.
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::diag::Span;
use crate::frontend::ast::*;
use crate::frontend::print_expr;
use crate::selectors::{resolve_variant, selector_matches, ResolveError};
use crate::target::{IntrinsicKind, TargetDesc};

/// The operation performed by a lowered atomic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AtomicKind {
    Add,
    Max,
    Min,
    Xchg,
    Cas,
    Inc,
}

impl AtomicKind {
    pub const ALL: [AtomicKind; 6] = [
        AtomicKind::Add,
        AtomicKind::Max,
        AtomicKind::Min,
        AtomicKind::Xchg,
        AtomicKind::Cas,
        AtomicKind::Inc,
    ];

    pub fn intrinsic(self) -> IntrinsicKind {
        match self {
            AtomicKind::Add => IntrinsicKind::AtomicAdd,
            AtomicKind::Max => IntrinsicKind::AtomicMax,
            AtomicKind::Min => IntrinsicKind::AtomicMin,
            AtomicKind::Xchg => IntrinsicKind::AtomicXchg,
            AtomicKind::Cas => IntrinsicKind::AtomicCas,
            AtomicKind::Inc => IntrinsicKind::AtomicInc,
        }
    }

    pub fn builtin_name(self) -> &'static str {
        self.intrinsic().builtin_name()
    }
}

impl fmt::Display for AtomicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.intrinsic().fmt(f)
    }
}

/// A lowered atomic: `v = old value of *x` and `*x` updated by `kind`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AtomicIntrinsic {
    pub kind: AtomicKind,
    pub ordering: AtomicOrdering,
    /// The memory location operated on.
    pub x: Expr,
    pub e: Expr,
    /// Desired value; present only for CAS.
    pub d: Option<Expr>,
    /// Where the captured old value is stored.
    pub v: Expr,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Space {
    Global,
    TeamShared,
}

impl Space {
    pub fn name(self) -> &'static str {
        match self {
            Space::Global => "global",
            Space::TeamShared => "team_shared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Init {
    Zero,
    Explicit(i64),
    /// Left uninitialized (`loader_uninitialized`).
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Placement {
    pub space: Space,
    pub init: Init,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LowerError {
    #[error(transparent)]
    Ambiguous(#[from] ResolveError),
    #[error("{line}:{col}: atomic construct in `{function}` is not representable: {reason}", line = .span.line, col = .span.col)]
    NotRepresentable {
        function: String,
        span: Span,
        reason: String,
    },
    #[error("{line}:{col}: `{name}`: {message}", line = .span.line, col = .span.col)]
    Placement {
        name: String,
        span: Span,
        message: String,
    },
}

/// Why an atomic block failed to match a canonical shape.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{0}")]
pub struct NotRepresentable(pub String);

fn reject<T>(reason: impl Into<String>) -> Result<T, NotRepresentable> {
    Err(NotRepresentable(reason.into()))
}

fn is_location(e: &Expr) -> bool {
    matches!(e, Expr::Var(_) | Expr::Deref(_) | Expr::Index(..))
}

fn mentions(haystack: &Expr, needle: &Expr) -> bool {
    let mut found = false;
    haystack.walk(&mut |e| found |= e == needle);
    found
}

/// Recognizes the five canonical atomic shapes:
///
/// ```text
/// capture          { v = x; x += e; }                    ADD
/// capture          { v = x; x = e; }                     XCHG
/// compare capture  { v = x; if (x < e) { x = e; } }      MAX
/// compare capture  { v = x; if (x > e) { x = e; } }      MIN
/// compare capture  { v = x; if (x == e) { x = d; } }     CAS
/// ```
///
/// Everything else is rejected, including the wrap-around increment
/// `x = x >= e ? 0 : x + 1`: the order operator must be `<` or `>` and the
/// alternative must leave `x` unchanged.
pub fn lower_atomic(c: &AtomicConstruct) -> Result<AtomicIntrinsic, NotRepresentable> {
    if !c.has_capture {
        return reject("only capture forms are supported");
    }
    let [first, second] = c.block.as_slice() else {
        return reject(format!(
            "expected a capture statement followed by an update, found {} statements",
            c.block.len()
        ));
    };
    let StmtKind::Assign {
        target: v,
        op: AssignOp::Set,
        value: x,
    } = &first.kind
    else {
        return reject("first statement must capture the old value (`v = x;`)");
    };
    if !is_location(x) || !is_location(v) {
        return reject("capture statement must copy a memory location into an lvalue");
    }
    if v == x {
        return reject("captured value and atomic location are the same");
    }
    let build = |kind, e: &Expr, d: Option<&Expr>| {
        if mentions(e, x) || d.is_some_and(|d| mentions(d, x)) {
            return reject(format!(
                "operand of {kind} references the atomic location `{}`",
                print_expr(x)
            ));
        }
        Ok(AtomicIntrinsic {
            kind,
            ordering: c.ordering,
            x: x.clone(),
            e: e.clone(),
            d: d.cloned(),
            v: v.clone(),
        })
    };
    if !c.has_compare {
        return match &second.kind {
            StmtKind::Assign { target, op, value } if target == x => match op {
                AssignOp::Add => build(AtomicKind::Add, value, None),
                AssignOp::Set => build(AtomicKind::Xchg, value, None),
                other => reject(format!("update operator `{}` is not supported", other.symbol())),
            },
            StmtKind::Assign { .. } => reject("update must assign the captured location"),
            _ => reject("capture form requires an update statement (`x += e;` or `x = e;`)"),
        };
    }
    let StmtKind::If {
        cond: Expr::Binary(op, lhs, rhs),
        then_block,
        else_block: None,
    } = &second.kind
    else {
        return reject("compare form requires `if (x OP e) { x = ...; }` without else");
    };
    if **lhs != *x {
        return reject("comparison must have the atomic location on the left");
    }
    let [Stmt {
        kind:
            StmtKind::Assign {
                target,
                op: AssignOp::Set,
                value,
            },
        ..
    }] = then_block.as_slice()
    else {
        return reject("conditional update must be a single assignment");
    };
    if target != x {
        return reject("conditional update must assign the atomic location");
    }
    match op {
        BinaryOp::Lt | BinaryOp::Gt => {
            if value != &**rhs {
                return reject("min/max update must store the compared operand");
            }
            let kind = if *op == BinaryOp::Lt {
                AtomicKind::Max
            } else {
                AtomicKind::Min
            };
            build(kind, rhs, None)
        }
        BinaryOp::Eq => build(AtomicKind::Cas, rhs, Some(value)),
        other => reject(format!(
            "order operator `{}` is not `<`, `>` or `==`",
            other.symbol()
        )),
    }
}

/// Memory placement of a global: `pteam` and `cgroup` allocators both place
/// it in team-shared memory.
pub fn place_global(g: &GlobalDecl) -> Result<Placement, LowerError> {
    let space = match g.allocator {
        Allocator::Pteam | Allocator::Cgroup => Space::TeamShared,
        Allocator::Default => Space::Global,
    };
    let init = match (g.loader_uninitialized, g.initializer) {
        (true, Some(_)) => {
            return Err(LowerError::Placement {
                name: g.name.clone(),
                span: g.span,
                message: "loader_uninitialized variable cannot have an initializer".into(),
            })
        }
        (true, None) => Init::None,
        (false, Some(v)) => Init::Explicit(v),
        (false, None) => Init::Zero,
    };
    Ok(Placement { space, init })
}

/// A module specialized for one target.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpecializedModule {
    pub module: SourceModule,
    pub target: TargetDesc,
    pub placements: BTreeMap<String, Placement>,
    /// Base functions replaced by a selected variant on this target.
    pub superseded: BTreeSet<String>,
    /// Chosen symbol for every function that has variants.
    pub resolutions: BTreeMap<String, String>,
}

impl SpecializedModule {
    /// Finds a function by emitted symbol.
    pub fn function(&self, symbol: &str) -> Option<&FunctionDecl> {
        self.module
            .functions()
            .filter(|f| f.symbol() == symbol)
            .max_by_key(|f| f.body.is_some())
    }
}

/// Resolves the variant each base function binds to on `target`.
pub fn resolve_all(
    module: &SourceModule,
    target: &TargetDesc,
) -> Result<BTreeMap<String, String>, ResolveError> {
    let mut out = BTreeMap::new();
    for base in module.functions().filter(|f| f.variant_of.is_none()) {
        if out.contains_key(&base.name) {
            continue;
        }
        let candidates: Vec<&FunctionDecl> = module
            .functions()
            .filter(|f| f.variant_of.as_ref().is_some_and(|v| v.base == base.name))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        out.insert(base.name.clone(), resolve_variant(base, &candidates, target)?);
    }
    Ok(out)
}

pub fn specialize(module: &SourceModule, target: &TargetDesc) -> Result<SpecializedModule, LowerError> {
    // Drop variants that do not apply to this target.
    let mut kept = SourceModule {
        declarations: Vec::new(),
        target_regions: module.target_regions.clone(),
        device_span: BTreeSet::new(),
    };
    for (i, decl) in module.declarations.iter().enumerate() {
        if let Decl::Function(f) = decl {
            if let Some(v) = &f.variant_of {
                if !selector_matches(&v.selector, target) {
                    continue;
                }
            }
        }
        if module.is_device(i) {
            kept.device_span.insert(kept.declarations.len());
        }
        kept.declarations.push(decl.clone());
    }

    let resolutions = resolve_all(&kept, target)?;
    let rewire: BTreeMap<String, String> = resolutions
        .iter()
        .filter(|(base, chosen)| base != chosen)
        .map(|(b, c)| (b.clone(), c.clone()))
        .collect();
    let superseded = rewire.keys().cloned().collect();

    let mut rename = |e: &mut Expr| {
        if let Expr::Call(name, _) = e {
            if let Some(to) = rewire.get(name) {
                *name = to.clone();
            }
        }
    };
    for decl in &mut kept.declarations {
        if let Decl::Function(f) = decl {
            if let Some(body) = &mut f.body {
                walk_block_exprs_mut(body, &mut rename);
            }
        }
    }
    for region in &mut kept.target_regions {
        walk_block_exprs_mut(&mut region.body, &mut rename);
    }

    for decl in &mut kept.declarations {
        if let Decl::Function(f) = decl {
            let name = f.symbol();
            if let Some(body) = &mut f.body {
                lower_block(body, &name)?;
            }
        }
    }
    for region in &mut kept.target_regions {
        lower_block(&mut region.body, &format!("target region {}", region.id))?;
    }

    let mut placements = BTreeMap::new();
    for g in kept.globals() {
        placements.insert(g.name.clone(), place_global(g)?);
    }

    Ok(SpecializedModule {
        module: kept,
        target: target.clone(),
        placements,
        superseded,
        resolutions,
    })
}

fn lower_block(block: &mut Block, function: &str) -> Result<(), LowerError> {
    let mut err = None;
    walk_stmts_mut(block, &mut |stmt| {
        if err.is_some() {
            return;
        }
        if let StmtKind::Atomic(c) = &stmt.kind {
            match lower_atomic(c) {
                Ok(op) => stmt.kind = StmtKind::AtomicOp(op),
                Err(NotRepresentable(reason)) => {
                    err = Some(LowerError::NotRepresentable {
                        function: function.to_string(),
                        span: stmt.span,
                        reason,
                    })
                }
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::frontend::parse_module;
    use crate::target::Arch;

    fn construct(clauses: &str, body: &str) -> AtomicConstruct {
        let src = format!(
            "void f(u32 *X, u32 *Y, u32 E, u32 D) {{\n u32 V;\n#pragma omp atomic {clauses} seq_cst\n{{ {body} }}\n}}\n"
        );
        let m = parse_module(&src).unwrap_or_else(|d| panic!("{src}: {d:?}"));
        let f = m.functions().next().unwrap();
        match &f.body.as_ref().unwrap()[1].kind {
            StmtKind::Atomic(c) => c.clone(),
            other => panic!("{other:?}"),
        }
    }

    fn kind_of(clauses: &str, body: &str) -> Result<AtomicKind, NotRepresentable> {
        lower_atomic(&construct(clauses, body)).map(|op| op.kind)
    }

    #[test]
    fn canonical_shapes() {
        assert_eq!(kind_of("capture", "V = *X; *X += E;"), Ok(AtomicKind::Add));
        assert_eq!(kind_of("capture", "V = *X; *X = E;"), Ok(AtomicKind::Xchg));
        assert_eq!(
            kind_of("compare capture", "V = *X; if (*X < E) { *X = E; }"),
            Ok(AtomicKind::Max)
        );
        assert_eq!(
            kind_of("compare capture", "V = *X; if (*X > E) { *X = E; }"),
            Ok(AtomicKind::Min)
        );
        let cas = lower_atomic(&construct(
            "compare capture",
            "V = *X; if (*X == E) { *X = D; }",
        ))
        .unwrap();
        assert_eq!(cas.kind, AtomicKind::Cas);
        assert_eq!(cas.d, Some(Expr::var("D")));
        assert_eq!(cas.e, Expr::var("E"));
    }

    #[test]
    fn increment_shape_is_not_representable() {
        assert!(kind_of("capture", "V = *X; *X = *X >= E ? 0u : *X + 1u;").is_err());
        assert!(kind_of("compare capture", "V = *X; *X = *X >= E ? 0u : *X + 1u;").is_err());
    }

    #[test]
    fn clause_mismatch_is_rejected() {
        assert!(kind_of("compare capture", "V = *X; *X += E;").is_err());
        assert!(kind_of("capture", "V = *X; if (*X < E) { *X = E; }").is_err());
    }

    #[test]
    fn placement_of_runtime_style_globals() {
        let src = "#pragma omp begin declare target\n\
                   int global_var;\n\
                   int shared_var;\n\
                   #pragma omp allocate(shared_var) allocator(omp_pteam_mem_alloc)\n\
                   u32 cg;\n\
                   #pragma omp allocate(cg) allocator(omp_cgroup_mem_alloc)\n\
                   u32 scratch[16] [[loader_uninitialized]];\n\
                   #pragma omp allocate(scratch) allocator(omp_pteam_mem_alloc)\n\
                   #pragma omp end declare target\n";
        let m = parse_module(src).unwrap();
        let p = |n: &str| place_global(m.global(n).unwrap()).unwrap();
        assert_eq!(p("shared_var"), Placement { space: Space::TeamShared, init: Init::Zero });
        assert_eq!(p("global_var"), Placement { space: Space::Global, init: Init::Zero });
        assert_eq!(p("scratch"), Placement { space: Space::TeamShared, init: Init::None });
        assert_eq!(p("cg"), p("shared_var"));
    }

    #[test]
    fn placement_rejects_initialized_uninit() {
        let g = GlobalDecl {
            name: "g".into(),
            value_type: crate::types::ScalarType::U32,
            len: None,
            initializer: Some(1),
            allocator: Allocator::Pteam,
            loader_uninitialized: true,
            is_extern: false,
            span: Span::default(),
        };
        assert!(matches!(place_global(&g), Err(LowerError::Placement { .. })));
    }

    const INC_VARIANTS: &str = r#"
#pragma omp begin declare target
u32 atomic_inc(u32 *X, u32 E) {
  error("target dependent implementation missing");
}
#pragma omp begin declare variant match(device={arch(amdgcn)})
u32 atomic_inc(u32 *X, u32 E) {
  return __builtin_amdgcn_atomic_inc32(X, E);
}
#pragma omp end declare variant
#pragma omp begin declare variant match(device={arch(nvptx,nvptx64)}, implementation={extension(match_any)})
u32 atomic_inc(u32 *X, u32 E) {
  return __nvvm_atom_inc_gen_ui(X, E);
}
#pragma omp end declare variant
u32 user(u32 *X) { return atomic_inc(X, 5u); }
#pragma omp end declare target
"#;

    fn call_target(spec: &SpecializedModule) -> String {
        let f = spec.function("user").unwrap();
        match &f.body.as_ref().unwrap()[0].kind {
            StmtKind::Return(Some(Expr::Call(name, _))) => name.clone(),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn call_sites_bind_to_selected_variant() {
        let m = parse_module(INC_VARIANTS).unwrap();
        let nv = specialize(&m, &TargetDesc::new(Arch::Nvptx64)).unwrap();
        assert_eq!(call_target(&nv), "atomic_inc$ompvariant$arch.nvptx.nvptx64$match_any");
        assert!(nv.superseded.contains("atomic_inc"));
        // the amdgcn variant is gone
        assert_eq!(nv.module.functions().count(), 3);

        let vg = specialize(&m, &TargetDesc::new(Arch::Vgpu)).unwrap();
        assert_eq!(call_target(&vg), "atomic_inc");
        assert!(vg.superseded.is_empty());
    }

    #[test]
    fn specialize_is_idempotent() {
        let m = parse_module(INC_VARIANTS).unwrap();
        for arch in Arch::ALL {
            let t = TargetDesc::new(arch);
            let once = specialize(&m, &t).unwrap();
            let twice = specialize(&once.module, &t).unwrap();
            assert_eq!(once, twice, "{arch}");
        }
    }

    #[test]
    fn no_variants_is_identity() {
        let src = "#pragma omp begin declare target\nu32 f(u32 x) { return x + 1u; }\n#pragma omp end declare target\n";
        let m = parse_module(src).unwrap();
        let s = specialize(&m, &TargetDesc::new(Arch::Amdgcn)).unwrap();
        assert_eq!(s.module, m);
    }

    #[test]
    fn ambiguous_variants_propagate() {
        let src = "#pragma omp begin declare target\n\
                   u32 f() { return 0u; }\n\
                   #pragma omp begin declare variant match(device={arch(vgpu)})\n\
                   u32 f() { return 1u; }\n\
                   u32 f() { return 2u; }\n\
                   #pragma omp end declare variant\n\
                   #pragma omp end declare target\n";
        let m = parse_module(src).unwrap();
        let err = specialize(&m, &TargetDesc::new(Arch::Vgpu)).unwrap_err();
        assert!(matches!(err, LowerError::Ambiguous(_)));
        assert!(specialize(&m, &TargetDesc::new(Arch::Amdgcn)).is_ok());
    }
}

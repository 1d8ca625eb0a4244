//! Lowering of specialized source to IR, for devices and for the host.
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

use super::ir::*;
use super::link::link_runtime;
use super::normalize::renumber;
use super::{fallback_name, kernel_name, map_intrinsic, CodegenError};
use crate::frontend::ast::*;
use crate::lowering::{specialize, Init, Space, SpecializedModule};
use crate::target::{vendor_intrinsic_kind, Arch, IntrinsicKind, TargetDesc};
use crate::types::ScalarType;

/// Source-level signature of a callable function.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Signature {
    pub ret: Type,
    pub params: Vec<Type>,
}

impl Signature {
    pub fn of(f: &FunctionDecl) -> Self {
        Self {
            ret: f.ret,
            params: f.params.iter().map(|p| p.ty).collect(),
        }
    }
}

#[derive(Debug, Clone)]
enum Binding {
    /// A scalar living in memory at `ptr`.
    Slot { ptr: Operand, ty: ScalarType },
    /// An array or buffer whose first element is at `ptr`.
    Array { ptr: Operand, elem: ScalarType },
}

#[derive(Debug, Clone)]
struct Value {
    op: Operand,
    ty: Ty,
}

/// Per-module emission context shared by all functions of one pass.
pub(crate) struct ModuleEmitter<'a> {
    pub spec: &'a SpecializedModule,
    target: &'a TargetDesc,
    /// Host code may print and launch target regions.
    host: bool,
    sigs: BTreeMap<String, Signature>,
    globals: BTreeMap<String, (ScalarType, bool)>,
    all_names: BTreeSet<String>,
}

impl<'a> ModuleEmitter<'a> {
    pub fn new(
        spec: &'a SpecializedModule,
        target: &'a TargetDesc,
        host: bool,
        extra: Option<&BTreeMap<String, Signature>>,
    ) -> Self {
        let mut sigs = BTreeMap::new();
        let mut globals = BTreeMap::new();
        let mut all_names = BTreeSet::new();
        let m = &spec.module;
        for (i, decl) in m.declarations.iter().enumerate() {
            let visible = host || m.is_device(i);
            match decl {
                Decl::Function(f) => {
                    all_names.insert(f.name.clone());
                    if visible {
                        let sig = Signature::of(f);
                        sigs.insert(f.symbol(), sig.clone());
                        sigs.entry(f.name.clone()).or_insert(sig);
                    }
                }
                Decl::Global(g) => {
                    all_names.insert(g.name.clone());
                    if visible {
                        globals.insert(g.name.clone(), (g.value_type, g.len.is_some()));
                    }
                }
            }
        }
        if let Some(extra) = extra {
            for (name, sig) in extra {
                sigs.entry(name.clone()).or_insert_with(|| sig.clone());
            }
        }
        Self {
            spec,
            target,
            host,
            sigs,
            globals,
            all_names,
        }
    }

    /// Globals this pass defines, with their placement.
    pub fn ir_globals(&self) -> Vec<IrGlobal> {
        let m = &self.spec.module;
        let mut out = Vec::new();
        for (i, decl) in m.declarations.iter().enumerate() {
            let Decl::Global(g) = decl else { continue };
            if g.is_extern || !(self.host || m.is_device(i)) {
                continue;
            }
            let placement = self.spec.placements.get(&g.name).copied().unwrap_or(
                crate::lowering::Placement {
                    space: Space::Global,
                    init: Init::Zero,
                },
            );
            out.push(IrGlobal {
                name: g.name.clone(),
                ty: g.value_type,
                count: g.elements(),
                space: placement.space,
                init: placement.init,
            });
        }
        out
    }

    pub fn emit_function(&self, f: &FunctionDecl) -> Result<IrFunction, CodegenError> {
        let body = f.body.as_ref().expect("function with body");
        let mut fe = FnEmitter::new(self, f.symbol(), f.ret.carrier(), f.params.len());
        fe.scopes.push(Vec::new());
        let mut params = Vec::new();
        for (i, p) in f.params.iter().enumerate() {
            let param = Operand::Temp(i as u32);
            match p.ty {
                Type::Buffer(elem) => {
                    params.push(Ty::Ptr(elem));
                    fe.bind(&p.name, Binding::Array { ptr: param, elem });
                }
                Type::Void => return Err(fe.err(format!("parameter `{}` has type void", p.name))),
                t => {
                    let ty = t.carrier().expect("scalar carrier");
                    params.push(Ty::Scalar(ty));
                    let slot = fe.local(ty, None);
                    fe.push(Inst::Store {
                        ty,
                        ptr: slot.clone(),
                        value: param,
                    });
                    fe.bind(&p.name, Binding::Slot { ptr: slot, ty });
                }
            }
        }
        fe.block(body)?;
        Ok(fe.finish(params))
    }

    /// The entry kernel for a target region: captures become parameters,
    /// buffers by reference and scalars by value.
    pub fn emit_kernel(&self, region: &TargetRegion) -> Result<IrFunction, CodegenError> {
        let mut fe = FnEmitter::new(self, kernel_name(region.id), None, region.captured_args.len());
        fe.scopes.push(Vec::new());
        let mut params = Vec::new();
        for (i, c) in region.captured_args.iter().enumerate() {
            let param = Operand::Temp(i as u32);
            match c.kind {
                CaptureKind::Buffer { elem, .. } => {
                    params.push(Ty::Ptr(elem));
                    fe.bind(&c.name, Binding::Array { ptr: param, elem });
                }
                CaptureKind::Scalar(ty) => {
                    params.push(Ty::Scalar(ty));
                    let slot = fe.local(ty, None);
                    fe.push(Inst::Store {
                        ty,
                        ptr: slot.clone(),
                        value: param,
                    });
                    fe.bind(&c.name, Binding::Slot { ptr: slot, ty });
                }
            }
        }
        fe.block(&region.body)?;
        Ok(fe.finish(params))
    }
}

/// Host fallback for a region: runs the host-compiled kernel for every
/// team, then every thread, sequentially.
fn emit_fallback(region: &TargetRegion) -> IrFunction {
    let mut params: Vec<Ty> = region
        .captured_args
        .iter()
        .map(|c| match c.kind {
            CaptureKind::Buffer { elem, .. } => Ty::Ptr(elem),
            CaptureKind::Scalar(ty) => Ty::Scalar(ty),
        })
        .collect();
    let n = params.len() as u32;
    let (teams, threads) = (Operand::Temp(n), Operand::Temp(n + 1));
    params.push(Ty::Scalar(ScalarType::U32));
    params.push(Ty::Scalar(ScalarType::U32));
    let u32t = ScalarType::U32;
    let mut t = n + 2;
    let mut next = || {
        t += 1;
        t - 1
    };
    let (team_slot, thread_slot) = (next(), next());
    let mut body = vec![
        Inst::Local {
            dst: team_slot,
            ty: u32t,
            count: None,
        },
        Inst::Local {
            dst: thread_slot,
            ty: u32t,
            count: None,
        },
        Inst::Store {
            ty: u32t,
            ptr: Operand::Temp(team_slot),
            value: Operand::Imm(0),
        },
        Inst::Label(0),
    ];
    let team = next();
    let more_teams = next();
    body.extend([
        Inst::Load {
            dst: team,
            ty: u32t,
            ptr: Operand::Temp(team_slot),
        },
        Inst::Cmp {
            dst: more_teams,
            pred: CmpPred::Lt,
            ty: u32t,
            lhs: Operand::Temp(team),
            rhs: teams.clone(),
        },
        Inst::CondBr {
            cond: Operand::Temp(more_teams),
            then_label: 1,
            else_label: 4,
        },
        Inst::Label(1),
        Inst::Intrinsic {
            dst: None,
            name: "host.team.begin".into(),
            ty: Some(u32t),
            args: vec![Operand::Temp(team), teams.clone(), threads.clone()],
        },
        Inst::Store {
            ty: u32t,
            ptr: Operand::Temp(thread_slot),
            value: Operand::Imm(0),
        },
        Inst::Label(2),
    ]);
    let thread = next();
    let more_threads = next();
    body.extend([
        Inst::Load {
            dst: thread,
            ty: u32t,
            ptr: Operand::Temp(thread_slot),
        },
        Inst::Cmp {
            dst: more_threads,
            pred: CmpPred::Lt,
            ty: u32t,
            lhs: Operand::Temp(thread),
            rhs: threads.clone(),
        },
        Inst::CondBr {
            cond: Operand::Temp(more_threads),
            then_label: 3,
            else_label: 5,
        },
        Inst::Label(3),
        Inst::Intrinsic {
            dst: None,
            name: "host.thread.begin".into(),
            ty: Some(u32t),
            args: vec![Operand::Temp(thread)],
        },
        Inst::Call {
            dst: None,
            ret: None,
            callee: kernel_name(region.id),
            args: params[..n as usize]
                .iter()
                .enumerate()
                .map(|(i, ty)| (*ty, Operand::Temp(i as u32)))
                .collect(),
        },
    ]);
    let (a, b) = (next(), next());
    body.extend([
        Inst::Bin {
            dst: a,
            op: BinOp::Add,
            ty: u32t,
            lhs: Operand::Temp(thread),
            rhs: Operand::Imm(1),
        },
        Inst::Store {
            ty: u32t,
            ptr: Operand::Temp(thread_slot),
            value: Operand::Temp(a),
        },
        Inst::Br(2),
        Inst::Label(5),
        Inst::Bin {
            dst: b,
            op: BinOp::Add,
            ty: u32t,
            lhs: Operand::Temp(team),
            rhs: Operand::Imm(1),
        },
        Inst::Store {
            ty: u32t,
            ptr: Operand::Temp(team_slot),
            value: Operand::Temp(b),
        },
        Inst::Br(0),
        Inst::Label(4),
        Inst::Ret(None),
    ]);
    let mut f = IrFunction {
        name: fallback_name(region.id),
        params,
        ret: None,
        body,
    };
    renumber(&mut f);
    f
}

struct FnEmitter<'e, 'a> {
    m: &'e ModuleEmitter<'a>,
    func: String,
    ret: Option<ScalarType>,
    next_temp: u32,
    next_label: u32,
    entry: Vec<Inst>,
    body: Vec<Inst>,
    scopes: Vec<Vec<(String, Binding)>>,
    /// (continue target, break target) of enclosing loops.
    loops: Vec<(u32, u32)>,
}

fn is_boolean(e: &Expr) -> bool {
    match e {
        Expr::Binary(op, ..) => {
            op.is_comparison() || matches!(op, BinaryOp::LogicalAnd | BinaryOp::LogicalOr)
        }
        Expr::Unary(UnaryOp::Not, _) => true,
        _ => false,
    }
}

fn bin_op(op: BinaryOp) -> Option<BinOp> {
    Some(match op {
        BinaryOp::Add => BinOp::Add,
        BinaryOp::Sub => BinOp::Sub,
        BinaryOp::Mul => BinOp::Mul,
        BinaryOp::Div => BinOp::Div,
        BinaryOp::Rem => BinOp::Rem,
        BinaryOp::BitAnd => BinOp::And,
        BinaryOp::BitOr => BinOp::Or,
        BinaryOp::BitXor => BinOp::Xor,
        BinaryOp::Shl => BinOp::Shl,
        BinaryOp::Shr => BinOp::Shr,
        _ => return None,
    })
}

fn cmp_pred(op: BinaryOp) -> Option<CmpPred> {
    Some(match op {
        BinaryOp::Eq => CmpPred::Eq,
        BinaryOp::Ne => CmpPred::Ne,
        BinaryOp::Lt => CmpPred::Lt,
        BinaryOp::Le => CmpPred::Le,
        BinaryOp::Gt => CmpPred::Gt,
        BinaryOp::Ge => CmpPred::Ge,
        _ => return None,
    })
}

const I32: ScalarType = ScalarType::I32;

impl<'e, 'a> FnEmitter<'e, 'a> {
    fn new(m: &'e ModuleEmitter<'a>, func: String, ret: Option<ScalarType>, nparams: usize) -> Self {
        Self {
            m,
            func,
            ret,
            next_temp: nparams as u32,
            next_label: 0,
            entry: Vec::new(),
            body: Vec::new(),
            scopes: Vec::new(),
            loops: Vec::new(),
        }
    }

    fn err(&self, message: impl Into<String>) -> CodegenError {
        CodegenError::Type {
            function: self.func.clone(),
            message: message.into(),
        }
    }

    fn finish(mut self, params: Vec<Ty>) -> IrFunction {
        if !matches!(self.body.last(), Some(Inst::Ret(_))) {
            let ret = self.ret.map(|t| (t, Operand::Imm(0)));
            self.body.push(Inst::Ret(ret));
        }
        let mut body = self.entry;
        body.append(&mut self.body);
        let mut f = IrFunction {
            name: self.func,
            params,
            ret: self.ret,
            body,
        };
        renumber(&mut f);
        f
    }

    fn temp(&mut self) -> u32 {
        self.next_temp += 1;
        self.next_temp - 1
    }

    fn label(&mut self) -> u32 {
        self.next_label += 1;
        self.next_label - 1
    }

    fn push(&mut self, inst: Inst) {
        self.body.push(inst);
    }

    fn local(&mut self, ty: ScalarType, count: Option<u32>) -> Operand {
        let dst = self.temp();
        self.entry.push(Inst::Local { dst, ty, count });
        Operand::Temp(dst)
    }

    fn bind(&mut self, name: &str, b: Binding) {
        self.scopes
            .last_mut()
            .expect("open scope")
            .push((name.to_string(), b));
    }

    fn lookup(&self, name: &str) -> Result<Binding, CodegenError> {
        for scope in self.scopes.iter().rev() {
            if let Some((_, b)) = scope.iter().rev().find(|(n, _)| n == name) {
                return Ok(b.clone());
            }
        }
        match self.m.globals.get(name) {
            Some(&(ty, false)) => Ok(Binding::Slot {
                ptr: Operand::Global(name.to_string()),
                ty,
            }),
            Some(&(elem, true)) => Ok(Binding::Array {
                ptr: Operand::Global(name.to_string()),
                elem,
            }),
            None if self.m.all_names.contains(name) => Err(self.err(format!(
                "`{name}` is not available here; device code may only use declare target variables"
            ))),
            None => Err(self.err(format!("use of undeclared variable `{name}`"))),
        }
    }

    // ------------------------------------------------------------- typing

    fn type_of(&self, e: &Expr) -> Result<Ty, CodegenError> {
        Ok(match e {
            Expr::Int(l) => Ty::Scalar(l.ty),
            Expr::Var(n) => match self.lookup(n)? {
                Binding::Slot { ty, .. } => Ty::Scalar(ty),
                Binding::Array { elem, .. } => Ty::Ptr(elem),
            },
            Expr::Deref(p) | Expr::Index(p, _) => Ty::Scalar(self.pointee(p)?),
            Expr::Unary(UnaryOp::Not, _) => Ty::Scalar(I32),
            Expr::Unary(_, x) => Ty::Scalar(self.scalar_type(x)?),
            Expr::Binary(op, a, b) => {
                if is_boolean(e) {
                    Ty::Scalar(I32)
                } else if matches!(op, BinaryOp::Shl | BinaryOp::Shr) {
                    Ty::Scalar(self.scalar_type(a)?)
                } else {
                    Ty::Scalar(ScalarType::common(self.scalar_type(a)?, self.scalar_type(b)?))
                }
            }
            Expr::Ternary(_, a, b) => {
                Ty::Scalar(ScalarType::common(self.scalar_type(a)?, self.scalar_type(b)?))
            }
            Expr::Call(name, args) => match self.call_type(name, args)? {
                Some(t) => Ty::Scalar(t),
                None => return Err(self.err(format!("void result of `{name}` used as a value"))),
            },
            Expr::Cast(t, _) => Ty::Scalar(*t),
        })
    }

    fn scalar_type(&self, e: &Expr) -> Result<ScalarType, CodegenError> {
        match self.type_of(e)? {
            Ty::Scalar(s) => Ok(s),
            Ty::Ptr(_) => Err(self.err("buffer used where an integer is required")),
        }
    }

    fn pointee(&self, e: &Expr) -> Result<ScalarType, CodegenError> {
        match self.type_of(e)? {
            Ty::Ptr(s) => Ok(s),
            Ty::Scalar(_) => Err(self.err("subscripted or dereferenced value is not a buffer")),
        }
    }

    fn intrinsic_kind(&self, name: &str) -> Option<IntrinsicKind> {
        IntrinsicKind::from_builtin_name(name).or_else(|| self.m.target.kind_of(name))
    }

    fn call_type(&self, name: &str, args: &[Expr]) -> Result<Option<ScalarType>, CodegenError> {
        if name == "print" {
            return Ok(None);
        }
        if let Some(kind) = self.intrinsic_kind(name).or_else(|| vendor_intrinsic_kind(name)) {
            return Ok(if kind.is_atomic() {
                let x = args
                    .first()
                    .ok_or_else(|| self.err(format!("`{name}` needs a buffer operand")))?;
                Some(self.pointee(x)?)
            } else if kind.returns_value() {
                Some(ScalarType::U32)
            } else {
                None
            });
        }
        match self.m.sigs.get(name) {
            Some(sig) => Ok(sig.ret.carrier()),
            None => Err(self.undefined_function(name)),
        }
    }

    fn undefined_function(&self, name: &str) -> CodegenError {
        if self.m.all_names.contains(name) {
            self.err(format!(
                "call to `{name}`, which is not declared target, from device code"
            ))
        } else {
            self.err(format!("call to undeclared function `{name}`"))
        }
    }

    // -------------------------------------------------------- expressions

    fn convert(&mut self, v: Value, to: ScalarType) -> Result<Operand, CodegenError> {
        let from = match v.ty {
            Ty::Scalar(s) => s,
            Ty::Ptr(_) => return Err(self.err("buffer used where an integer is required")),
        };
        if from == to {
            return Ok(v.op);
        }
        if let Operand::Imm(x) = v.op {
            return Ok(Operand::Imm(to.normalize(x)));
        }
        let dst = self.temp();
        self.push(Inst::Conv {
            dst,
            from,
            to,
            value: v.op,
        });
        Ok(Operand::Temp(dst))
    }

    fn scalar_value(&mut self, e: &Expr, to: ScalarType) -> Result<Operand, CodegenError> {
        let v = self.rvalue(e)?;
        self.convert(v, to)
    }

    fn load(&mut self, ty: ScalarType, ptr: Operand) -> Value {
        let dst = self.temp();
        self.push(Inst::Load { dst, ty, ptr });
        Value {
            op: Operand::Temp(dst),
            ty: Ty::Scalar(ty),
        }
    }

    fn bin(&mut self, op: BinOp, ty: ScalarType, lhs: Operand, rhs: Operand) -> Operand {
        let dst = self.temp();
        self.push(Inst::Bin {
            dst,
            op,
            ty,
            lhs,
            rhs,
        });
        Operand::Temp(dst)
    }

    fn cmp(&mut self, pred: CmpPred, ty: ScalarType, lhs: Operand, rhs: Operand) -> Operand {
        let dst = self.temp();
        self.push(Inst::Cmp {
            dst,
            pred,
            ty,
            lhs,
            rhs,
        });
        Operand::Temp(dst)
    }

    /// Evaluates `e` to an `i32` that is 0 or 1.
    fn boolean(&mut self, e: &Expr) -> Result<Operand, CodegenError> {
        if is_boolean(e) {
            return Ok(self.rvalue(e)?.op);
        }
        let ty = self.scalar_type(e)?;
        let v = self.scalar_value(e, ty)?;
        Ok(self.cmp(CmpPred::Ne, ty, v, Operand::Imm(0)))
    }

    /// Evaluates a branch condition; any nonzero value is true.
    fn condition(&mut self, e: &Expr) -> Result<Operand, CodegenError> {
        if is_boolean(e) {
            return Ok(self.rvalue(e)?.op);
        }
        let ty = self.scalar_type(e)?;
        self.scalar_value(e, ty)
    }

    fn rvalue(&mut self, e: &Expr) -> Result<Value, CodegenError> {
        let scalar = |op, ty| Value {
            op,
            ty: Ty::Scalar(ty),
        };
        Ok(match e {
            Expr::Int(l) => scalar(Operand::Imm(l.ty.normalize(l.value)), l.ty),
            Expr::Var(n) => match self.lookup(n)? {
                Binding::Slot { ptr, ty } => self.load(ty, ptr),
                Binding::Array { ptr, elem } => Value {
                    op: ptr,
                    ty: Ty::Ptr(elem),
                },
            },
            Expr::Deref(_) | Expr::Index(..) => {
                let (ptr, ty) = self.lvalue(e)?;
                self.load(ty, ptr)
            }
            Expr::Unary(op, x) => {
                let ty = self.scalar_type(x)?;
                let v = self.scalar_value(x, ty)?;
                match op {
                    UnaryOp::Neg => scalar(self.bin(BinOp::Sub, ty, Operand::Imm(0), v), ty),
                    UnaryOp::BitNot => {
                        let ones = Operand::Imm(ty.normalize(u64::MAX));
                        scalar(self.bin(BinOp::Xor, ty, v, ones), ty)
                    }
                    UnaryOp::Not => scalar(self.cmp(CmpPred::Eq, ty, v, Operand::Imm(0)), I32),
                }
            }
            Expr::Binary(op @ (BinaryOp::LogicalAnd | BinaryOp::LogicalOr), a, b) => {
                let slot = self.local(I32, None);
                let lhs = self.boolean(a)?;
                self.push(Inst::Store {
                    ty: I32,
                    ptr: slot.clone(),
                    value: lhs.clone(),
                });
                let (rhs_label, end) = (self.label(), self.label());
                let (then_label, else_label) = if *op == BinaryOp::LogicalAnd {
                    (rhs_label, end)
                } else {
                    (end, rhs_label)
                };
                self.push(Inst::CondBr {
                    cond: lhs,
                    then_label,
                    else_label,
                });
                self.push(Inst::Label(rhs_label));
                let rhs = self.boolean(b)?;
                self.push(Inst::Store {
                    ty: I32,
                    ptr: slot.clone(),
                    value: rhs,
                });
                self.push(Inst::Br(end));
                self.push(Inst::Label(end));
                self.load(I32, slot)
            }
            Expr::Binary(op, a, b) => {
                if let Some(pred) = cmp_pred(*op) {
                    let ty = ScalarType::common(self.scalar_type(a)?, self.scalar_type(b)?);
                    let l = self.scalar_value(a, ty)?;
                    let r = self.scalar_value(b, ty)?;
                    scalar(self.cmp(pred, ty, l, r), I32)
                } else {
                    let bop = bin_op(*op).expect("arithmetic operator");
                    let ty = match self.type_of(e)? {
                        Ty::Scalar(t) => t,
                        Ty::Ptr(_) => unreachable!("arithmetic yields integers"),
                    };
                    let l = self.scalar_value(a, ty)?;
                    let r = self.scalar_value(b, ty)?;
                    scalar(self.bin(bop, ty, l, r), ty)
                }
            }
            Expr::Ternary(c, a, b) => {
                let ty = ScalarType::common(self.scalar_type(a)?, self.scalar_type(b)?);
                let slot = self.local(ty, None);
                let cond = self.condition(c)?;
                let (l_then, l_else, end) = (self.label(), self.label(), self.label());
                self.push(Inst::CondBr {
                    cond,
                    then_label: l_then,
                    else_label: l_else,
                });
                for (label, arm) in [(l_then, a), (l_else, b)] {
                    self.push(Inst::Label(label));
                    let v = self.scalar_value(arm, ty)?;
                    self.push(Inst::Store {
                        ty,
                        ptr: slot.clone(),
                        value: v,
                    });
                    self.push(Inst::Br(end));
                }
                self.push(Inst::Label(end));
                self.load(ty, slot)
            }
            Expr::Call(name, args) => self
                .call(name, args)?
                .ok_or_else(|| self.err(format!("void result of `{name}` used as a value")))?,
            Expr::Cast(ty, x) => scalar(self.scalar_value(x, *ty)?, *ty),
        })
    }

    /// Address and element type of an assignable expression.
    fn lvalue(&mut self, e: &Expr) -> Result<(Operand, ScalarType), CodegenError> {
        match e {
            Expr::Var(n) => match self.lookup(n)? {
                Binding::Slot { ptr, ty } => Ok((ptr, ty)),
                Binding::Array { .. } => Err(self.err(format!("cannot assign to buffer `{n}`"))),
            },
            Expr::Deref(p) => match self.rvalue(p)? {
                Value {
                    op,
                    ty: Ty::Ptr(elem),
                } => Ok((op, elem)),
                _ => Err(self.err("dereferenced value is not a buffer")),
            },
            Expr::Index(a, i) => {
                let Value {
                    op: base,
                    ty: Ty::Ptr(elem),
                } = self.rvalue(a)?
                else {
                    return Err(self.err("subscripted value is not a buffer"));
                };
                let index = self.scalar_value(i, ScalarType::I64)?;
                let dst = self.temp();
                self.push(Inst::Gep {
                    dst,
                    ty: elem,
                    ptr: base,
                    index,
                });
                Ok((Operand::Temp(dst), elem))
            }
            _ => Err(self.err("expression is not assignable")),
        }
    }

    fn call(&mut self, name: &str, args: &[Expr]) -> Result<Option<Value>, CodegenError> {
        if name == "print" {
            if !self.m.host {
                return Err(self.err("`print` is only available in host code"));
            }
            let [arg] = args else {
                return Err(self.err("`print` takes one argument"));
            };
            let ty = self.scalar_type(arg)?;
            let v = self.scalar_value(arg, ty)?;
            self.push(Inst::Intrinsic {
                dst: None,
                name: "print".into(),
                ty: Some(ty),
                args: vec![v],
            });
            return Ok(None);
        }
        if let Some(kind) = IntrinsicKind::from_builtin_name(name) {
            let inst = map_intrinsic(kind, self.m.target)
                .map_err(|_| self.missing(kind))?
                .to_string();
            return self.intrinsic(kind, inst, name, args);
        }
        if let Some(kind) = self.m.target.kind_of(name) {
            return self.intrinsic(kind, name.to_string(), name, args);
        }
        if let Some(kind) = vendor_intrinsic_kind(name) {
            return Err(self.missing(kind));
        }
        let sig = self
            .m
            .sigs
            .get(name)
            .cloned()
            .ok_or_else(|| self.undefined_function(name))?;
        if sig.params.len() != args.len() {
            return Err(self.err(format!(
                "`{name}` takes {} arguments but {} were given",
                sig.params.len(),
                args.len()
            )));
        }
        let mut ir_args = Vec::new();
        for (p, a) in sig.params.iter().zip(args) {
            match p {
                Type::Buffer(elem) => match self.rvalue(a)? {
                    Value {
                        op,
                        ty: Ty::Ptr(e),
                    } if e == *elem => ir_args.push((Ty::Ptr(e), op)),
                    _ => {
                        return Err(self.err(format!(
                            "argument to `{name}` must be a {elem} buffer"
                        )))
                    }
                },
                t => {
                    let ty = t.carrier().expect("scalar parameter");
                    let v = self.scalar_value(a, ty)?;
                    ir_args.push((Ty::Scalar(ty), v));
                }
            }
        }
        let ret = sig.ret.carrier();
        let dst = ret.map(|_| self.temp());
        self.push(Inst::Call {
            dst,
            ret,
            callee: name.to_string(),
            args: ir_args,
        });
        Ok(dst.zip(ret).map(|(d, t)| Value {
            op: Operand::Temp(d),
            ty: Ty::Scalar(t),
        }))
    }

    fn missing(&self, kind: IntrinsicKind) -> CodegenError {
        CodegenError::MissingIntrinsic {
            kind,
            arch: self.m.target.arch,
            function: self.func.clone(),
        }
    }

    fn intrinsic(
        &mut self,
        kind: IntrinsicKind,
        inst: String,
        name: &str,
        args: &[Expr],
    ) -> Result<Option<Value>, CodegenError> {
        if args.len() != kind.arity() {
            return Err(self.err(format!(
                "`{name}` takes {} arguments but {} were given",
                kind.arity(),
                args.len()
            )));
        }
        if kind.is_atomic() {
            let Value {
                op: x,
                ty: Ty::Ptr(elem),
            } = self.rvalue(&args[0])?
            else {
                return Err(self.err(format!("first argument to `{name}` must be a buffer")));
            };
            let mut ops = vec![x];
            for a in &args[1..] {
                ops.push(self.scalar_value(a, elem)?);
            }
            let dst = self.temp();
            self.push(Inst::Intrinsic {
                dst: Some(dst),
                name: inst,
                ty: Some(elem),
                args: ops,
            });
            return Ok(Some(Value {
                op: Operand::Temp(dst),
                ty: Ty::Scalar(elem),
            }));
        }
        if kind == IntrinsicKind::Trap {
            let code = self.scalar_value(&args[0], ScalarType::U64)?;
            self.push(Inst::Intrinsic {
                dst: None,
                name: inst,
                ty: Some(ScalarType::U64),
                args: vec![code],
            });
            return Ok(None);
        }
        if !kind.returns_value() {
            self.push(Inst::Intrinsic {
                dst: None,
                name: inst,
                ty: None,
                args: vec![],
            });
            return Ok(None);
        }
        let dst = self.temp();
        self.push(Inst::Intrinsic {
            dst: Some(dst),
            name: inst,
            ty: Some(ScalarType::U32),
            args: vec![],
        });
        Ok(Some(Value {
            op: Operand::Temp(dst),
            ty: Ty::Scalar(ScalarType::U32),
        }))
    }

    // --------------------------------------------------------- statements

    fn block(&mut self, b: &Block) -> Result<(), CodegenError> {
        self.scopes.push(Vec::new());
        let r = b.iter().try_for_each(|s| self.stmt(s));
        self.scopes.pop();
        r
    }

    fn stmt(&mut self, s: &Stmt) -> Result<(), CodegenError> {
        match &s.kind {
            StmtKind::Local { name, ty, len, init } => {
                if let Some(n) = len {
                    let ptr = self.local(*ty, Some(*n));
                    self.bind(name, Binding::Array { ptr, elem: *ty });
                } else {
                    let value = match init {
                        Some(e) => self.scalar_value(e, *ty)?,
                        None => Operand::Imm(0),
                    };
                    let ptr = self.local(*ty, None);
                    self.push(Inst::Store {
                        ty: *ty,
                        ptr: ptr.clone(),
                        value,
                    });
                    self.bind(name, Binding::Slot { ptr, ty: *ty });
                }
            }
            StmtKind::Assign { target, op, value } => {
                let v = self.rvalue(value)?;
                let (ptr, ty) = self.lvalue(target)?;
                let rhs = self.convert(v, ty)?;
                let stored = match op.binary() {
                    None => rhs,
                    Some(b) => {
                        let old = self.load(ty, ptr.clone()).op;
                        self.bin(bin_op(b).expect("compound operator"), ty, old, rhs)
                    }
                };
                self.push(Inst::Store {
                    ty,
                    ptr,
                    value: stored,
                });
            }
            StmtKind::Expr(Expr::Call(name, args)) => {
                self.call(name, args)?;
            }
            StmtKind::Expr(e) => {
                self.rvalue(e)?;
            }
            StmtKind::If {
                cond,
                then_block,
                else_block,
            } => {
                let c = self.condition(cond)?;
                let l_then = self.label();
                let l_else = else_block.as_ref().map(|_| self.label());
                let end = self.label();
                self.push(Inst::CondBr {
                    cond: c,
                    then_label: l_then,
                    else_label: l_else.unwrap_or(end),
                });
                self.push(Inst::Label(l_then));
                self.block(then_block)?;
                self.push(Inst::Br(end));
                if let (Some(l), Some(b)) = (l_else, else_block) {
                    self.push(Inst::Label(l));
                    self.block(b)?;
                    self.push(Inst::Br(end));
                }
                self.push(Inst::Label(end));
            }
            StmtKind::While { cond, body } => {
                let (head, l_body, end) = (self.label(), self.label(), self.label());
                self.push(Inst::Br(head));
                self.push(Inst::Label(head));
                let c = self.condition(cond)?;
                self.push(Inst::CondBr {
                    cond: c,
                    then_label: l_body,
                    else_label: end,
                });
                self.push(Inst::Label(l_body));
                self.loops.push((head, end));
                self.block(body)?;
                self.loops.pop();
                self.push(Inst::Br(head));
                self.push(Inst::Label(end));
            }
            StmtKind::For {
                init,
                cond,
                step,
                body,
            } => {
                self.scopes.push(Vec::new());
                if let Some(i) = init {
                    self.stmt(i)?;
                }
                let (head, l_body, l_step, end) =
                    (self.label(), self.label(), self.label(), self.label());
                self.push(Inst::Br(head));
                self.push(Inst::Label(head));
                if let Some(c) = cond {
                    let c = self.condition(c)?;
                    self.push(Inst::CondBr {
                        cond: c,
                        then_label: l_body,
                        else_label: end,
                    });
                } else {
                    self.push(Inst::Br(l_body));
                }
                self.push(Inst::Label(l_body));
                self.loops.push((l_step, end));
                self.block(body)?;
                self.loops.pop();
                self.push(Inst::Br(l_step));
                self.push(Inst::Label(l_step));
                if let Some(s) = step {
                    self.stmt(s)?;
                }
                self.push(Inst::Br(head));
                self.push(Inst::Label(end));
                self.scopes.pop();
            }
            StmtKind::Return(e) => match (self.ret, e) {
                (None, None) => self.push(Inst::Ret(None)),
                (Some(ty), Some(e)) => {
                    let v = self.scalar_value(e, ty)?;
                    self.push(Inst::Ret(Some((ty, v))));
                }
                (None, Some(_)) => return Err(self.err("void function returns a value")),
                (Some(_), None) => return Err(self.err("non-void function returns no value")),
            },
            StmtKind::Break | StmtKind::Continue => {
                let &(cont, brk) = self
                    .loops
                    .last()
                    .ok_or_else(|| self.err("`break`/`continue` outside a loop"))?;
                let to = if matches!(s.kind, StmtKind::Break) { brk } else { cont };
                self.push(Inst::Br(to));
            }
            StmtKind::Block(b) => self.block(b)?,
            StmtKind::Error(msg) => {
                return Err(CodegenError::UserError {
                    function: self.func.clone(),
                    message: msg.clone(),
                })
            }
            StmtKind::Atomic(_) => return Err(self.err("atomic construct was not lowered")),
            StmtKind::AtomicOp(op) => {
                let (x, elem) = self.lvalue(&op.x)?;
                let mut args = vec![x, self.scalar_value(&op.e, elem)?];
                if let Some(d) = &op.d {
                    args.push(self.scalar_value(d, elem)?);
                }
                let kind = op.kind.intrinsic();
                let inst = map_intrinsic(kind, self.m.target)
                    .map_err(|_| self.missing(kind))?
                    .to_string();
                let dst = self.temp();
                self.push(Inst::Intrinsic {
                    dst: Some(dst),
                    name: inst,
                    ty: Some(elem),
                    args,
                });
                let (v, vty) = self.lvalue(&op.v)?;
                let old = self.convert(
                    Value {
                        op: Operand::Temp(dst),
                        ty: Ty::Scalar(elem),
                    },
                    vty,
                )?;
                self.push(Inst::Store {
                    ty: vty,
                    ptr: v,
                    value: old,
                });
            }
            StmtKind::Target(id) => self.target_call(*id)?,
        }
        Ok(())
    }

    /// `tgt_target`, then the fallback when it reports failure.
    fn target_call(&mut self, id: u32) -> Result<(), CodegenError> {
        if !self.m.host {
            return Err(self.err("target region in device code"));
        }
        let region = self
            .m
            .spec
            .module
            .region(id)
            .ok_or_else(|| self.err(format!("unknown target region {id}")))?
            .clone();
        let u32t = ScalarType::U32;
        let mut grid = Vec::new();
        for (name, default) in [
            ("host.grid.teams", region.num_teams.unwrap_or(1)),
            ("host.grid.threads", region.thread_limit.unwrap_or(1)),
        ] {
            let dst = self.temp();
            self.push(Inst::Intrinsic {
                dst: Some(dst),
                name: name.into(),
                ty: Some(u32t),
                args: vec![Operand::Imm(default as u64)],
            });
            grid.push(Operand::Temp(dst));
        }
        let mut args = Vec::new();
        let mut call_args = Vec::new();
        for c in &region.captured_args {
            match (c.kind.clone(), self.lookup(&c.name)?) {
                (CaptureKind::Buffer { elem, len }, Binding::Array { ptr, .. }) => {
                    call_args.push((Ty::Ptr(elem), ptr.clone()));
                    args.push(TgtArg::Buffer { elem, ptr, len });
                }
                (CaptureKind::Scalar(ty), Binding::Slot { ptr, .. }) => {
                    let v = self.load(ty, ptr).op;
                    call_args.push((Ty::Scalar(ty), v.clone()));
                    args.push(TgtArg::Value { ty, value: v });
                }
                _ => return Err(self.err(format!("cannot map `{}` into the target region", c.name))),
            }
        }
        let status = self.temp();
        self.push(Inst::TgtTarget {
            dst: status,
            region: id,
            teams: grid[0].clone(),
            threads: grid[1].clone(),
            args,
        });
        let failed = self.cmp(CmpPred::Ne, I32, Operand::Temp(status), Operand::Imm(0));
        let (l_fallback, end) = (self.label(), self.label());
        self.push(Inst::CondBr {
            cond: failed,
            then_label: l_fallback,
            else_label: end,
        });
        self.push(Inst::Label(l_fallback));
        call_args.push((Ty::Scalar(u32t), grid[0].clone()));
        call_args.push((Ty::Scalar(u32t), grid[1].clone()));
        self.push(Inst::Call {
            dst: None,
            ret: None,
            callee: fallback_name(id),
            args: call_args,
        });
        self.push(Inst::Br(end));
        self.push(Inst::Label(end));
        Ok(())
    }
}

fn is_superseded(spec: &SpecializedModule, f: &FunctionDecl) -> bool {
    f.variant_of.is_none() && spec.superseded.contains(&f.name)
}

/// Device code for one target: every declare-target function (bases
/// replaced by a selected variant are skipped) plus one entry kernel per
/// target region. Runtime functions are left as external calls.
pub fn emit_device_ir(spec: &SpecializedModule, target: &TargetDesc) -> Result<IrModule, CodegenError> {
    let protos = crate::devicert::prototypes();
    let em = ModuleEmitter::new(spec, target, false, Some(protos));
    let mut out = IrModule::new(target.arch);
    let m = &spec.module;
    for (i, decl) in m.declarations.iter().enumerate() {
        let Decl::Function(f) = decl else { continue };
        if !m.is_device(i) || f.body.is_none() || is_superseded(spec, f) {
            continue;
        }
        out.functions.push(em.emit_function(f)?);
    }
    for r in &m.target_regions {
        out.functions.push(em.emit_kernel(r)?);
    }
    out.globals = em.ir_globals();
    Ok(out)
}

/// How a kernel argument is passed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgDesc {
    /// A host buffer, mapped tofrom.
    Buffer {
        name: String,
        elem: ScalarType,
        len: u32,
    },
    /// A scalar passed by value.
    Scalar { name: String, ty: ScalarType },
}

impl ArgDesc {
    pub fn name(&self) -> &str {
        match self {
            ArgDesc::Buffer { name, .. } | ArgDesc::Scalar { name, .. } => name,
        }
    }
}

/// One `tgt_target` site.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetCall {
    pub region: u32,
    pub kernel: String,
    pub fallback: String,
    pub args: Vec<ArgDesc>,
    pub num_teams: u32,
    pub thread_limit: u32,
}

/// The host side of a compiled program.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostProgram {
    pub module: IrModule,
    pub target_calls: Vec<TargetCall>,
}

fn region_metadata(r: &TargetRegion) -> String {
    let mut s = format!(
        "region {} teams={} threads={} args=",
        r.id,
        r.num_teams.unwrap_or(1),
        r.thread_limit.unwrap_or(1)
    );
    let args: Vec<String> = r
        .captured_args
        .iter()
        .map(|c| match c.kind {
            CaptureKind::Buffer { elem, len } => format!("buf:{}:{elem}:{len}", c.name),
            CaptureKind::Scalar(ty) => format!("val:{}:{ty}", c.name),
        })
        .collect();
    write!(s, "{}", args.join(",")).unwrap();
    s
}

fn parse_region_metadata(line: &str) -> Option<TargetCall> {
    let mut words = line.split_whitespace();
    if words.next()? != "region" {
        return None;
    }
    let region: u32 = words.next()?.parse().ok()?;
    let num_teams = words.next()?.strip_prefix("teams=")?.parse().ok()?;
    let thread_limit = words.next()?.strip_prefix("threads=")?.parse().ok()?;
    let args_text = words.next()?.strip_prefix("args=")?;
    let mut args = Vec::new();
    for a in args_text.split(',').filter(|a| !a.is_empty()) {
        let parts: Vec<&str> = a.split(':').collect();
        args.push(match parts.as_slice() {
            ["buf", name, elem, len] => ArgDesc::Buffer {
                name: name.to_string(),
                elem: elem.parse().ok()?,
                len: len.parse().ok()?,
            },
            ["val", name, ty] => ArgDesc::Scalar {
                name: name.to_string(),
                ty: ty.parse().ok()?,
            },
            _ => return None,
        });
    }
    Some(TargetCall {
        region,
        kernel: kernel_name(region),
        fallback: fallback_name(region),
        args,
        num_teams,
        thread_limit,
    })
}

impl HostProgram {
    pub fn to_text(&self) -> String {
        self.module.to_text()
    }

    pub fn from_text(text: &str) -> Result<Self, CodegenError> {
        let module = IrModule::parse(text)?;
        if module.target != Arch::Host {
            return Err(CodegenError::IrParse {
                line: 1,
                message: format!("host program targets {}", module.target),
            });
        }
        let target_calls = module
            .metadata
            .iter()
            .filter_map(|m| parse_region_metadata(m))
            .collect();
        Ok(Self {
            module,
            target_calls,
        })
    }

    /// Host buffers mapped by any target call, with element type and count.
    pub fn buffers(&self) -> Vec<(String, ScalarType, u32)> {
        let mut out: Vec<(String, ScalarType, u32)> = Vec::new();
        for call in &self.target_calls {
            for a in &call.args {
                if let ArgDesc::Buffer { name, elem, len } = a {
                    if !out.iter().any(|(n, ..)| n == name) {
                        out.push((name.clone(), *elem, *len));
                    }
                }
            }
        }
        out
    }
}

/// The host pass: host functions, host-compiled kernels with their
/// sequential fallbacks, the device functions they reach, and the host
/// build of the runtime.
pub fn emit_host_program(module: &SourceModule) -> Result<HostProgram, CodegenError> {
    let target = TargetDesc::new(Arch::Host);
    let spec = specialize(module, &target)?;
    let protos = crate::devicert::prototypes();
    let em = ModuleEmitter::new(&spec, &target, true, Some(protos));
    let m = &spec.module;
    let mut out = IrModule::new(Arch::Host);
    for (i, decl) in m.declarations.iter().enumerate() {
        let Decl::Function(f) = decl else { continue };
        if m.is_device(i) || f.body.is_none() {
            continue;
        }
        out.functions.push(em.emit_function(f)?);
    }
    for r in &m.target_regions {
        out.functions.push(em.emit_kernel(r)?);
        out.functions.push(emit_fallback(r));
        out.metadata.push(region_metadata(r));
    }
    // Device functions are only compiled when host code reaches them.
    let mut i = 0;
    while i < out.functions.len() {
        let callees: Vec<String> = out.functions[i]
            .callees()
            .into_iter()
            .map(str::to_string)
            .collect();
        for callee in callees {
            if out.function(&callee).is_some() {
                continue;
            }
            let decl = m
                .functions()
                .find(|f| f.symbol() == callee && f.body.is_some() && !is_superseded(&spec, f));
            if let Some(f) = decl {
                out.functions.push(em.emit_function(f)?);
            }
        }
        i += 1;
    }
    out.globals = em.ir_globals();
    let linked = link_runtime(&out, &target)?;
    let target_calls = out
        .metadata
        .iter()
        .filter_map(|l| parse_region_metadata(l))
        .collect();
    Ok(HostProgram {
        module: linked,
        target_calls,
    })
}

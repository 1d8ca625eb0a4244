//! IR prepared for execution: labels resolved to instruction indices,
//! callees and globals to table indices, intrinsics to operations.
use std::collections::HashMap;

use crate::codegen::ir::{BinOp, CmpPred, Inst, IrGlobal, IrModule, Operand, TgtArg, Ty};
use crate::target::{Arch, IntrinsicKind, TargetDesc};
use crate::types::ScalarType;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Val {
    Temp(u32),
    Imm(u64),
    Global(u32),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Query {
    ThreadId,
    TeamId,
    NumThreads,
    NumTeams,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum AtomicOp {
    Add,
    Max,
    Min,
    Xchg,
    Cas,
    Inc,
}

impl AtomicOp {
    pub fn name(self) -> &'static str {
        match self {
            AtomicOp::Add => "add",
            AtomicOp::Max => "max",
            AtomicOp::Min => "min",
            AtomicOp::Xchg => "xchg",
            AtomicOp::Cas => "cas",
            AtomicOp::Inc => "inc",
        }
    }
}

/// Builtins only the host interpreter provides.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum HostOp {
    Print,
    GridTeams,
    GridThreads,
    TeamBegin,
    ThreadBegin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum TgtKind {
    Buffer { elem: ScalarType, len: u32 },
    Value(ScalarType),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Op {
    Local { dst: u32, size: usize },
    Load { dst: u32, ty: ScalarType, ptr: Val },
    Store { ty: ScalarType, ptr: Val, value: Val },
    Gep { dst: u32, size: u64, ptr: Val, index: Val },
    Bin { dst: u32, op: BinOp, ty: ScalarType, lhs: Val, rhs: Val },
    Cmp { dst: u32, pred: CmpPred, ty: ScalarType, lhs: Val, rhs: Val },
    Conv { dst: u32, to: ScalarType, value: Val },
    Br(usize),
    CondBr { cond: Val, then_pc: usize, else_pc: usize },
    Call { dst: Option<u32>, func: usize, args: Vec<Val> },
    Ret(Option<Val>),
    Atomic { dst: u32, op: AtomicOp, ty: ScalarType, args: Vec<Val> },
    Fence,
    Barrier,
    Query { dst: u32, q: Query },
    Trap(Val),
    Host { dst: Option<u32>, op: HostOp, ty: ScalarType, args: Vec<Val> },
    TgtTarget { dst: u32, region: u32, teams: Val, threads: Val, args: Vec<(TgtKind, Val)> },
}

#[derive(Debug, Clone)]
pub(crate) struct Func {
    pub params: Vec<Ty>,
    pub nregs: usize,
    pub code: Vec<Op>,
}

#[derive(Debug, Clone)]
pub(crate) struct Program {
    pub funcs: Vec<Func>,
    pub func_index: HashMap<String, usize>,
    pub globals: Vec<IrGlobal>,
}

fn host_op(name: &str) -> Option<HostOp> {
    Some(match name {
        "print" => HostOp::Print,
        "host.grid.teams" => HostOp::GridTeams,
        "host.grid.threads" => HostOp::GridThreads,
        "host.team.begin" => HostOp::TeamBegin,
        "host.thread.begin" => HostOp::ThreadBegin,
        _ => return None,
    })
}

impl Program {
    /// Prepares `m` for execution on its own target.
    pub fn prepare(m: &IrModule) -> Result<Self, String> {
        let desc = TargetDesc::new(m.target);
        let func_index: HashMap<String, usize> = m
            .functions
            .iter()
            .enumerate()
            .map(|(i, f)| (f.name.clone(), i))
            .collect();
        let global_index: HashMap<&str, u32> = m
            .globals
            .iter()
            .enumerate()
            .map(|(i, g)| (g.name.as_str(), i as u32))
            .collect();
        let mut funcs = Vec::new();
        for f in &m.functions {
            let ctx = |msg: String| format!("in @{}: {msg}", f.name);
            let mut label_pc = HashMap::new();
            let mut pc = 0;
            for inst in &f.body {
                match inst {
                    Inst::Label(l) => {
                        label_pc.insert(*l, pc);
                    }
                    _ => pc += 1,
                }
            }
            let mut nregs = f.params.len();
            let val = |o: &Operand| -> Result<Val, String> {
                Ok(match o {
                    Operand::Temp(t) => Val::Temp(*t),
                    Operand::Imm(v) => Val::Imm(*v),
                    Operand::Global(g) => Val::Global(
                        *global_index
                            .get(g.as_str())
                            .ok_or_else(|| ctx(format!("undefined global @{g}")))?,
                    ),
                })
            };
            let label = |l: &u32| -> Result<usize, String> {
                label_pc.get(l).copied().ok_or_else(|| ctx(format!("undefined label L{l}")))
            };
            let vals = |os: &[Operand]| os.iter().map(val).collect::<Result<Vec<_>, _>>();
            let mut code = Vec::new();
            for inst in &f.body {
                if let Some(d) = inst.dst() {
                    nregs = nregs.max(d as usize + 1);
                }
                for o in inst.operands() {
                    if let Operand::Temp(t) = o {
                        nregs = nregs.max(t as usize + 1);
                    }
                }
                code.push(match inst {
                    Inst::Label(_) => continue,
                    Inst::Local { dst, ty, count } => Op::Local {
                        dst: *dst,
                        size: ty.size() * count.unwrap_or(1) as usize,
                    },
                    Inst::Load { dst, ty, ptr } => Op::Load {
                        dst: *dst,
                        ty: *ty,
                        ptr: val(ptr)?,
                    },
                    Inst::Store { ty, ptr, value } => Op::Store {
                        ty: *ty,
                        ptr: val(ptr)?,
                        value: val(value)?,
                    },
                    Inst::Gep { dst, ty, ptr, index } => Op::Gep {
                        dst: *dst,
                        size: ty.size() as u64,
                        ptr: val(ptr)?,
                        index: val(index)?,
                    },
                    Inst::Bin { dst, op, ty, lhs, rhs } => Op::Bin {
                        dst: *dst,
                        op: *op,
                        ty: *ty,
                        lhs: val(lhs)?,
                        rhs: val(rhs)?,
                    },
                    Inst::Cmp { dst, pred, ty, lhs, rhs } => Op::Cmp {
                        dst: *dst,
                        pred: *pred,
                        ty: *ty,
                        lhs: val(lhs)?,
                        rhs: val(rhs)?,
                    },
                    Inst::Conv { dst, to, value, .. } => Op::Conv {
                        dst: *dst,
                        to: *to,
                        value: val(value)?,
                    },
                    Inst::Br(l) => Op::Br(label(l)?),
                    Inst::CondBr { cond, then_label, else_label } => Op::CondBr {
                        cond: val(cond)?,
                        then_pc: label(then_label)?,
                        else_pc: label(else_label)?,
                    },
                    Inst::Call { dst, callee, args, .. } => Op::Call {
                        dst: *dst,
                        func: *func_index
                            .get(callee)
                            .ok_or_else(|| ctx(format!("call to undefined function @{callee}")))?,
                        args: args.iter().map(|(_, a)| val(a)).collect::<Result<_, _>>()?,
                    },
                    Inst::Ret(v) => Op::Ret(v.as_ref().map(|(_, o)| val(o)).transpose()?),
                    Inst::Intrinsic { dst, name, ty, args } => {
                        let args = vals(args)?;
                        if let Some(kind) = desc.kind_of(name) {
                            intrinsic_op(kind, *dst, *ty, args).map_err(ctx)?
                        } else if let Some(op) = host_op(name).filter(|_| m.target == Arch::Host) {
                            Op::Host {
                                dst: *dst,
                                op,
                                ty: ty.unwrap_or(ScalarType::U32),
                                args,
                            }
                        } else {
                            return Err(ctx(format!(
                                "`{name}` is not an instruction of target {}",
                                m.target
                            )));
                        }
                    }
                    Inst::TgtTarget { dst, region, teams, threads, args } => {
                        if m.target != Arch::Host {
                            return Err(ctx("tgt_target outside host code".into()));
                        }
                        let mut out = Vec::new();
                        for a in args {
                            out.push(match a {
                                TgtArg::Buffer { elem, ptr, len } => {
                                    (TgtKind::Buffer { elem: *elem, len: *len }, val(ptr)?)
                                }
                                TgtArg::Value { ty, value } => (TgtKind::Value(*ty), val(value)?),
                            });
                        }
                        Op::TgtTarget {
                            dst: *dst,
                            region: *region,
                            teams: val(teams)?,
                            threads: val(threads)?,
                            args: out,
                        }
                    }
                });
            }
            funcs.push(Func {
                params: f.params.clone(),
                nregs,
                code,
            });
        }
        Ok(Program {
            funcs,
            func_index,
            globals: m.globals.clone(),
        })
    }
}

fn intrinsic_op(
    kind: IntrinsicKind,
    dst: Option<u32>,
    ty: Option<ScalarType>,
    args: Vec<Val>,
) -> Result<Op, String> {
    use IntrinsicKind::*;
    let need_dst = || dst.ok_or_else(|| format!("{kind} instruction without a result"));
    let op = match kind {
        AtomicAdd | AtomicMax | AtomicMin | AtomicXchg | AtomicCas | AtomicInc => {
            let op = match kind {
                AtomicAdd => AtomicOp::Add,
                AtomicMax => AtomicOp::Max,
                AtomicMin => AtomicOp::Min,
                AtomicXchg => AtomicOp::Xchg,
                AtomicCas => AtomicOp::Cas,
                _ => AtomicOp::Inc,
            };
            if args.len() != kind.arity() {
                return Err(format!("{kind} takes {} operands", kind.arity()));
            }
            Op::Atomic {
                dst: need_dst()?,
                op,
                ty: ty.ok_or_else(|| format!("{kind} without a type"))?,
                args,
            }
        }
        ThreadFence => Op::Fence,
        Barrier => Op::Barrier,
        ThreadId | TeamId | NumThreads | NumTeams => Op::Query {
            dst: need_dst()?,
            q: match kind {
                ThreadId => Query::ThreadId,
                TeamId => Query::TeamId,
                NumThreads => Query::NumThreads,
                _ => Query::NumTeams,
            },
        },
        Trap => Op::Trap(*args.first().ok_or("trap without a code")?),
    };
    Ok(op)
}

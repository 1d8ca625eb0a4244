//! The interpreter core shared by the simulated GPU and the host engine.
use crate::codegen::ir::{BinOp, CmpPred};
use crate::lowering::{Init, Space};
use crate::target::trap_code;
use crate::types::ScalarType;

use super::memory::{gep, show_ptr, Fill, Memory};
use super::program::{AtomicOp, HostOp, Op, Program, Query, TgtKind, Val};
use super::{EventKind, TraceEvent, TrapKind};

/// Simulated frames per thread before the call stack overflows.
const MAX_FRAMES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub(crate) struct Ctx {
    pub team: u32,
    pub tid: u32,
    pub num_teams: u32,
    pub num_threads: u32,
}

#[derive(Debug, Clone)]
struct Frame {
    func: usize,
    pc: usize,
    regs: Vec<u64>,
    locals: Vec<u64>,
    ret_dst: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum ThreadState {
    Running,
    AtBarrier,
    Done,
}

#[derive(Debug, Clone)]
pub(crate) struct Thread {
    pub ctx: Ctx,
    frames: Vec<Frame>,
    pub state: ThreadState,
    pub ret: Option<u64>,
}

pub(crate) enum Step {
    Continue,
    Barrier,
    Done,
}

/// Services only the host program needs.
pub(crate) trait HostEnv {
    fn print(&mut self, ty: ScalarType, value: u64);
    /// Replaces the grid every target region asks for.
    fn grid_override(&self) -> Option<(u32, u32)>;
    /// Offloads a region. `args` holds buffer pointers into `mem` or
    /// scalar values. Returns the status, or a trap to halt the program.
    fn tgt_target(
        &mut self,
        mem: &mut Memory,
        region: u32,
        teams: u32,
        threads: u32,
        args: &[(TgtKind, u64)],
    ) -> Result<u64, TrapKind>;
}

pub(crate) fn fill_of(init: Init) -> Fill {
    match init {
        Init::None => Fill::Poison,
        Init::Zero | Init::Explicit(_) => Fill::Zero,
    }
}

/// Allocates and initializes storage for global `g`.
pub(crate) fn alloc_global(mem: &mut Memory, g: &crate::codegen::ir::IrGlobal) -> u64 {
    let p = mem.alloc(g.size_bytes(), fill_of(g.init));
    init_global(mem, g, p);
    p
}

fn init_global(mem: &mut Memory, g: &crate::codegen::ir::IrGlobal, p: u64) {
    if let Init::Explicit(v) = g.init {
        for i in 0..g.count as i64 {
            mem.store(gep(p, g.ty.size() as u64, i), g.ty, g.ty.normalize(v as u64))
                .expect("global in bounds");
        }
    }
}

pub(crate) fn show_value(ty: ScalarType, v: u64) -> String {
    if ty.is_signed() {
        (v as i64).to_string()
    } else {
        v.to_string()
    }
}

pub(crate) fn eval_bin(op: BinOp, ty: ScalarType, a: u64, b: u64) -> Result<u64, TrapKind> {
    let (a, b) = (ty.normalize(a), ty.normalize(b));
    let signed = ty.is_signed();
    let mask = (ty.bits() - 1) as u64;
    let r = match op {
        BinOp::Add => a.wrapping_add(b),
        BinOp::Sub => a.wrapping_sub(b),
        BinOp::Mul => a.wrapping_mul(b),
        BinOp::Div | BinOp::Rem => {
            if b == 0 {
                return Err(TrapKind::DivisionByZero);
            }
            match (op, signed) {
                (BinOp::Div, true) => (a as i64).wrapping_div(b as i64) as u64,
                (BinOp::Rem, true) => (a as i64).wrapping_rem(b as i64) as u64,
                (BinOp::Div, false) => a / b,
                _ => a % b,
            }
        }
        BinOp::And => a & b,
        BinOp::Or => a | b,
        BinOp::Xor => a ^ b,
        BinOp::Shl => a << (b & mask),
        BinOp::Shr if signed => ((a as i64) >> (b & mask)) as u64,
        BinOp::Shr => a >> (b & mask),
    };
    Ok(ty.normalize(r))
}

pub(crate) fn eval_cmp(pred: CmpPred, ty: ScalarType, a: u64, b: u64) -> u64 {
    let (a, b) = (ty.normalize(a), ty.normalize(b));
    let ord = if ty.is_signed() {
        (a as i64).cmp(&(b as i64))
    } else {
        a.cmp(&b)
    };
    use std::cmp::Ordering::*;
    let r = match pred {
        CmpPred::Eq => ord == Equal,
        CmpPred::Ne => ord != Equal,
        CmpPred::Lt => ord == Less,
        CmpPred::Le => ord != Greater,
        CmpPred::Gt => ord == Greater,
        CmpPred::Ge => ord != Less,
    };
    r as u64
}

/// New value of an atomic location; `d` only for CAS.
pub(crate) fn atomic_update(op: AtomicOp, ty: ScalarType, old: u64, e: u64, d: u64) -> u64 {
    let less = eval_cmp(CmpPred::Lt, ty, old, e) == 1;
    let r = match op {
        AtomicOp::Add => old.wrapping_add(e),
        AtomicOp::Max => {
            if less {
                e
            } else {
                old
            }
        }
        AtomicOp::Min => {
            if eval_cmp(CmpPred::Gt, ty, old, e) == 1 {
                e
            } else {
                old
            }
        }
        AtomicOp::Xchg => e,
        AtomicOp::Cas => {
            if old == e {
                d
            } else {
                old
            }
        }
        AtomicOp::Inc => {
            if less {
                old.wrapping_add(1)
            } else {
                0
            }
        }
    };
    ty.normalize(r)
}

pub(crate) fn trap_kind(code: u64) -> TrapKind {
    match code {
        trap_code::SHARED_OVERFLOW => TrapKind::SharedOverflow,
        trap_code::NON_LIFO_FREE => TrapKind::NonLIFOFree,
        trap_code::NON_UNIFORM_ALLOC => TrapKind::NonUniformAlloc,
        c => TrapKind::Unknown(c),
    }
}

pub(crate) struct Engine<'a> {
    pub prog: &'a Program,
    pub mem: &'a mut Memory,
    /// Storage of global-space globals, by global index.
    pub globals: &'a [u64],
    /// Storage of team-shared globals: `[team][global index]`.
    pub team_globals: Vec<Vec<u64>>,
    pub trace: Vec<TraceEvent>,
    /// Whether atomics, fences and barriers are recorded.
    pub tracing: bool,
    pub count: u64,
    pub limit: u64,
    pub host: Option<&'a mut dyn HostEnv>,
    /// When set, the contents of the outermost frame's locals are kept
    /// here as the thread returns.
    pub final_locals: Option<Vec<Vec<u8>>>,
}

impl<'a> Engine<'a> {
    pub fn new(prog: &'a Program, mem: &'a mut Memory, globals: &'a [u64], limit: u64) -> Self {
        Self {
            prog,
            mem,
            globals,
            team_globals: Vec::new(),
            trace: Vec::new(),
            tracing: true,
            count: 0,
            limit,
            host: None,
            final_locals: None,
        }
    }

    /// Allocates team-shared globals for `teams` teams.
    pub fn alloc_team_globals(&mut self, teams: u32) {
        for _ in 0..teams {
            let row = self
                .prog
                .globals
                .iter()
                .map(|g| match g.space {
                    Space::TeamShared => alloc_global(self.mem, g),
                    Space::Global => 0,
                })
                .collect();
            self.team_globals.push(row);
        }
    }

    /// Resets a team's shared globals to their initial state.
    fn reset_team_globals(&mut self, team: usize) {
        for (i, g) in self.prog.globals.iter().enumerate() {
            if g.space == Space::TeamShared {
                let p = self.team_globals[team][i];
                self.mem.refill(p, fill_of(g.init));
                init_global(self.mem, g, p);
            }
        }
    }

    pub fn free_team_globals(&mut self) {
        for row in std::mem::take(&mut self.team_globals) {
            for p in row.into_iter().filter(|p| *p != 0) {
                self.mem.free(p);
            }
        }
    }

    pub fn spawn(&self, func: usize, args: &[u64], ctx: Ctx) -> Thread {
        let f = &self.prog.funcs[func];
        let mut regs = vec![0; f.nregs];
        regs[..args.len()].copy_from_slice(args);
        Thread {
            ctx,
            frames: vec![Frame {
                func,
                pc: 0,
                regs,
                locals: Vec::new(),
                ret_dst: None,
            }],
            state: ThreadState::Running,
            ret: None,
        }
    }

    fn event(&mut self, ctx: &Ctx, kind: EventKind, detail: String) {
        if self.tracing {
            self.trace.push(TraceEvent {
                seq: self.trace.len() as u64,
                team: ctx.team,
                thread: ctx.tid,
                kind,
                detail,
            });
        }
    }

    fn read(&self, frame: &Frame, ctx: &Ctx, v: Val) -> u64 {
        match v {
            Val::Temp(t) => frame.regs[t as usize],
            Val::Imm(x) => x,
            Val::Global(g) => {
                let g = g as usize;
                match self.prog.globals[g].space {
                    Space::Global => self.globals[g],
                    Space::TeamShared => {
                        let team = (ctx.team as usize).min(self.team_globals.len() - 1);
                        self.team_globals[team][g]
                    }
                }
            }
        }
    }

    /// Frees a thread's remaining frames, e.g. after a trap.
    pub fn unwind(&mut self, th: &mut Thread) {
        for f in th.frames.drain(..) {
            for p in f.locals {
                self.mem.free(p);
            }
        }
    }

    /// Executes one instruction of `th`.
    pub fn step(&mut self, th: &mut Thread) -> Result<Step, TrapKind> {
        self.count += 1;
        if self.count > self.limit {
            return Err(TrapKind::InstructionLimit);
        }
        let prog = self.prog;
        let ctx = th.ctx;
        let depth = th.frames.len();
        let frame = th.frames.last_mut().expect("live thread has a frame");
        let code = &prog.funcs[frame.func].code;
        let Some(op) = code.get(frame.pc) else {
            // Falling off the end behaves like `ret`.
            return self.ret(th, None);
        };
        frame.pc += 1;
        macro_rules! rd {
            ($v:expr) => {
                self.read(frame, &ctx, $v)
            };
        }
        match op {
            Op::Local { dst, size } => {
                let p = self.mem.alloc(*size, Fill::Zero);
                frame.locals.push(p);
                frame.regs[*dst as usize] = p;
            }
            Op::Load { dst, ty, ptr } => {
                let p = rd!(*ptr);
                frame.regs[*dst as usize] = self.mem.load(p, *ty)?;
            }
            Op::Store { ty, ptr, value } => {
                let (p, v) = (rd!(*ptr), rd!(*value));
                self.mem.store(p, *ty, ty.normalize(v))?;
            }
            Op::Gep { dst, size, ptr, index } => {
                let (p, i) = (rd!(*ptr), rd!(*index));
                frame.regs[*dst as usize] = gep(p, *size, i as i64);
            }
            Op::Bin { dst, op, ty, lhs, rhs } => {
                let (a, b) = (rd!(*lhs), rd!(*rhs));
                frame.regs[*dst as usize] = eval_bin(*op, *ty, a, b)?;
            }
            Op::Cmp { dst, pred, ty, lhs, rhs } => {
                let (a, b) = (rd!(*lhs), rd!(*rhs));
                frame.regs[*dst as usize] = eval_cmp(*pred, *ty, a, b);
            }
            Op::Conv { dst, to, value } => {
                let v = rd!(*value);
                frame.regs[*dst as usize] = to.normalize(v);
            }
            Op::Br(pc) => frame.pc = *pc,
            Op::CondBr { cond, then_pc, else_pc } => {
                frame.pc = if rd!(*cond) != 0 { *then_pc } else { *else_pc };
            }
            Op::Call { dst, func, args } => {
                if depth >= MAX_FRAMES {
                    return Err(TrapKind::StackOverflow);
                }
                let callee = &prog.funcs[*func];
                let mut regs = vec![0; callee.nregs];
                for (i, a) in args.iter().enumerate() {
                    regs[i] = rd!(*a);
                }
                let _ = frame;
                th.frames.push(Frame {
                    func: *func,
                    pc: 0,
                    regs,
                    locals: Vec::new(),
                    ret_dst: *dst,
                });
            }
            Op::Ret(v) => {
                let v = v.map(|v| rd!(v));
                return self.ret(th, v);
            }
            Op::Atomic { dst, op, ty, args } => {
                let p = rd!(args[0]);
                let e = ty.normalize(rd!(args[1]));
                let d = args.get(2).map(|d| ty.normalize(rd!(*d))).unwrap_or(0);
                let old = self.mem.load(p, *ty)?;
                let new = atomic_update(*op, *ty, old, e, d);
                self.mem.store(p, *ty, new)?;
                frame.regs[*dst as usize] = old;
                if self.tracing {
                    let mut detail = format!("{} {ty} {} {}", op.name(), show_ptr(p), show_value(*ty, e));
                    if *op == AtomicOp::Cas {
                        detail += &format!(" {}", show_value(*ty, d));
                    }
                    detail += &format!(" old={} new={}", show_value(*ty, old), show_value(*ty, new));
                    self.event(&ctx, EventKind::Atomic, detail);
                }
            }
            Op::Fence => {
                if self.host.is_none() {
                    self.event(&ctx, EventKind::Fence, String::new());
                }
            }
            Op::Barrier => {
                if self.host.is_none() {
                    self.event(&ctx, EventKind::Barrier, String::new());
                    return Ok(Step::Barrier);
                }
            }
            Op::Query { dst, q } => {
                frame.regs[*dst as usize] = match q {
                    Query::ThreadId => ctx.tid,
                    Query::TeamId => ctx.team,
                    Query::NumThreads => ctx.num_threads,
                    Query::NumTeams => ctx.num_teams,
                } as u64;
            }
            Op::Trap(code) => {
                let kind = trap_kind(rd!(*code));
                self.event(&ctx, EventKind::Trap, kind.to_string());
                return Err(kind);
            }
            Op::Host { dst, op, ty, args } => {
                let vals: Vec<u64> = args.iter().map(|a| rd!(*a)).collect();
                let arg = |i: usize| vals.get(i).copied().unwrap_or(0) as u32;
                let mut result = 0;
                match op {
                    HostOp::Print => {
                        if let Some(h) = self.host.as_mut() {
                            h.print(*ty, ty.normalize(vals.first().copied().unwrap_or(0)));
                        }
                    }
                    HostOp::GridTeams | HostOp::GridThreads => {
                        let over = self.host.as_ref().and_then(|h| h.grid_override());
                        result = match (op, over) {
                            (HostOp::GridTeams, Some((t, _))) => t,
                            (HostOp::GridThreads, Some((_, t))) => t,
                            _ => arg(0),
                        } as u64;
                    }
                    HostOp::TeamBegin => {
                        th.ctx.team = arg(0);
                        th.ctx.num_teams = arg(1);
                        th.ctx.num_threads = arg(2);
                        th.ctx.tid = 0;
                        if !self.team_globals.is_empty() {
                            self.reset_team_globals(0);
                        }
                    }
                    HostOp::ThreadBegin => th.ctx.tid = arg(0),
                }
                if let Some(d) = dst {
                    let frame = th.frames.last_mut().expect("frame");
                    frame.regs[*d as usize] = result;
                }
            }
            Op::TgtTarget { dst, region, teams, threads, args } => {
                let (teams, threads) = (rd!(*teams) as u32, rd!(*threads) as u32);
                let vals: Vec<(TgtKind, u64)> = args.iter().map(|(k, v)| (*k, rd!(*v))).collect();
                let host = self.host.as_mut().ok_or(TrapKind::Unknown(0))?;
                let status = host.tgt_target(self.mem, *region, teams, threads, &vals)?;
                let frame = th.frames.last_mut().expect("frame");
                frame.regs[*dst as usize] = status;
            }
        }
        Ok(Step::Continue)
    }

    fn ret(&mut self, th: &mut Thread, v: Option<u64>) -> Result<Step, TrapKind> {
        let frame = th.frames.pop().expect("frame");
        if th.frames.is_empty() {
            if let Some(keep) = self.final_locals.as_mut() {
                keep.extend(frame.locals.iter().map(|p| self.mem.bytes(*p).to_vec()));
            }
        }
        for p in frame.locals {
            self.mem.free(p);
        }
        match th.frames.last_mut() {
            None => {
                th.ret = v;
                th.state = ThreadState::Done;
                Ok(Step::Done)
            }
            Some(caller) => {
                if let Some(d) = frame.ret_dst {
                    caller.regs[d as usize] = v.unwrap_or(0);
                }
                Ok(Step::Continue)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inc_formula() {
        let u = ScalarType::U32;
        assert_eq!(atomic_update(AtomicOp::Inc, u, 5, 5, 0), 0);
        assert_eq!(atomic_update(AtomicOp::Inc, u, 3, 5, 0), 4);
        assert_eq!(atomic_update(AtomicOp::Inc, u, 7, 5, 0), 0);
    }

    #[test]
    fn signedness_matters() {
        let neg1 = ScalarType::I32.normalize(u64::MAX);
        assert_eq!(atomic_update(AtomicOp::Max, ScalarType::I32, neg1, 1, 0), 1);
        assert_eq!(
            atomic_update(AtomicOp::Max, ScalarType::U32, ScalarType::U32.normalize(neg1), 1, 0),
            0xFFFF_FFFF
        );
        assert_eq!(eval_bin(BinOp::Div, ScalarType::I32, neg1, 2), Ok(0));
        assert_eq!(eval_bin(BinOp::Shr, ScalarType::I32, neg1, 4), Ok(neg1));
        assert_eq!(eval_bin(BinOp::Shr, ScalarType::U32, 0xFFFF_FFFF, 4), Ok(0x0FFF_FFFF));
        assert_eq!(eval_bin(BinOp::Rem, ScalarType::U64, 1, 0), Err(TrapKind::DivisionByZero));
        assert_eq!(eval_cmp(CmpPred::Lt, ScalarType::I64, neg1, 0), 1);
        assert_eq!(eval_cmp(CmpPred::Lt, ScalarType::U64, neg1, 0), 0);
    }
}

//! The simulated GPU: runs vgpu IR over a teams × threads grid with
//! team-shared memory, sequentially consistent atomics, barriers and a
//! seeded interleaving scheduler.
pub(crate) mod machine;
pub(crate) mod memory;
pub(crate) mod program;

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::codegen::ir::{IrModule, Ty};
use crate::lowering::Space;
use crate::target::Arch;
use crate::types::ScalarType;

use machine::{alloc_global, Ctx, Engine, Step, ThreadState};
use memory::Memory;
use program::Program;

pub use memory::POISON;

pub const MAX_TEAMS: u32 = 1024;
pub const MAX_THREADS_PER_TEAM: u32 = 1024;
pub const DEFAULT_INSTRUCTION_LIMIT: u64 = 200_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct GridConfig {
    pub num_teams: u32,
    pub threads_per_team: u32,
    pub sched_seed: u64,
}

impl GridConfig {
    pub fn new(num_teams: u32, threads_per_team: u32, sched_seed: u64) -> Self {
        Self {
            num_teams,
            threads_per_team,
            sched_seed,
        }
    }

    pub fn validate(&self) -> Result<(), LaunchError> {
        if !(1..=MAX_TEAMS).contains(&self.num_teams) {
            return Err(LaunchError::BadGrid(format!(
                "num_teams {} outside 1..={MAX_TEAMS}",
                self.num_teams
            )));
        }
        if !(1..=MAX_THREADS_PER_TEAM).contains(&self.threads_per_team) {
            return Err(LaunchError::BadGrid(format!(
                "threads_per_team {} outside 1..={MAX_THREADS_PER_TEAM}",
                self.threads_per_team
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum KernelArg {
    /// Device buffer, copied in before and out after the launch.
    Buffer { elem: ScalarType, data: Vec<u8> },
    Scalar { ty: ScalarType, value: u64 },
}

impl KernelArg {
    pub fn buffer(elem: ScalarType, values: &[u64]) -> Self {
        KernelArg::Buffer {
            elem,
            data: values.iter().flat_map(|v| elem.to_le_bytes(*v)).collect(),
        }
    }

    pub fn scalar(ty: ScalarType, value: u64) -> Self {
        KernelArg::Scalar {
            ty,
            value: ty.normalize(value),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrapKind {
    SharedOverflow,
    NonLIFOFree,
    /// Shared allocation by a thread other than thread 0.
    NonUniformAlloc,
    UninitializedRead,
    OutOfBounds,
    Deadlock,
    DivisionByZero,
    StackOverflow,
    InstructionLimit,
    /// `trap` with a code the runtime does not define.
    Unknown(u64),
}

impl fmt::Display for TrapKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrapKind::Unknown(c) => write!(f, "Trap({c})"),
            other => write!(f, "{other:?}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Trap {
    pub kind: TrapKind,
    pub team: u32,
    pub thread: u32,
}

impl fmt::Display for Trap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} in team {} thread {}", self.kind, self.team, self.thread)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    Atomic,
    Fence,
    Barrier,
    Trap,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::Atomic => "atomic",
            EventKind::Fence => "fence",
            EventKind::Barrier => "barrier",
            EventKind::Trap => "trap",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TraceEvent {
    pub seq: u64,
    pub team: u32,
    pub thread: u32,
    pub kind: EventKind,
    pub detail: String,
}

impl fmt::Display for TraceEvent {
    /// `seq team thread kind detail`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {} {}", self.seq, self.team, self.thread, self.kind.name())?;
        if !self.detail.is_empty() {
            write!(f, " {}", self.detail)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ExecResult {
    /// Buffer arguments followed by global-space globals, in order.
    pub global_memory: Vec<u8>,
    /// Final contents of each buffer argument.
    pub buffers: Vec<Vec<u8>>,
    /// Entry return value per thread, team-major.
    pub returns: Vec<Option<u64>>,
    pub trap: Option<Trap>,
    pub instruction_count: u64,
    pub trace: Vec<TraceEvent>,
}

impl ExecResult {
    /// Elements of buffer argument `index`, read as `elem`.
    pub fn buffer_values(&self, index: usize, elem: ScalarType) -> Vec<u64> {
        self.buffers[index]
            .chunks_exact(elem.size())
            .map(|c| elem.from_le_bytes(c))
            .collect()
    }

    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn count_events(&self, kind: EventKind) -> usize {
        self.trace.iter().filter(|e| e.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LaunchError {
    #[error("invalid image: {0}")]
    Prepare(String),
    #[error("image targets {0}, not vgpu")]
    WrongTarget(Arch),
    #[error("no kernel named `{0}` in image")]
    UnknownEntry(String),
    #[error("`{entry}` takes {expected} arguments, {got} given")]
    ArgCount {
        entry: String,
        expected: usize,
        got: usize,
    },
    #[error("argument {index} of `{entry}`: expected {expected}, got {got}")]
    ArgType {
        entry: String,
        index: usize,
        expected: String,
        got: String,
    },
    #[error("bad grid: {0}")]
    BadGrid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VgpuOptions {
    /// Trap on reads of `loader_uninitialized` memory before any write.
    pub check_uninit: bool,
    /// Total dynamic instructions before a launch traps.
    pub instruction_limit: u64,
}

impl Default for VgpuOptions {
    fn default() -> Self {
        Self {
            check_uninit: false,
            instruction_limit: DEFAULT_INSTRUCTION_LIMIT,
        }
    }
}

/// A loaded device. Global-space globals persist across launches;
/// team-shared ones are fresh for every launch.
#[derive(Debug, Clone)]
pub struct Vgpu {
    prog: Program,
    mem: Memory,
    globals: Vec<u64>,
    opts: VgpuOptions,
}

fn arg_desc(a: &KernelArg) -> String {
    match a {
        KernelArg::Buffer { elem, .. } => format!("{elem}*"),
        KernelArg::Scalar { ty, .. } => ty.to_string(),
    }
}

impl Vgpu {
    pub fn new(image: &IrModule, opts: VgpuOptions) -> Result<Self, LaunchError> {
        if image.target != Arch::Vgpu {
            return Err(LaunchError::WrongTarget(image.target));
        }
        let prog = Program::prepare(image).map_err(LaunchError::Prepare)?;
        let mut mem = Memory::new(opts.check_uninit);
        let globals = prog
            .globals
            .iter()
            .map(|g| match g.space {
                Space::Global => alloc_global(&mut mem, g),
                Space::TeamShared => 0,
            })
            .collect();
        Ok(Self {
            prog,
            mem,
            globals,
            opts,
        })
    }

    pub fn has_entry(&self, name: &str) -> bool {
        self.prog.func_index.contains_key(name)
    }

    /// Parameter types of a function in the image.
    pub fn signature(&self, name: &str) -> Option<&[Ty]> {
        self.prog
            .func_index
            .get(name)
            .map(|i| self.prog.funcs[*i].params.as_slice())
    }

    pub fn launch(
        &mut self,
        entry: &str,
        grid: &GridConfig,
        args: &[KernelArg],
    ) -> Result<ExecResult, LaunchError> {
        grid.validate()?;
        let func = *self
            .prog
            .func_index
            .get(entry)
            .ok_or_else(|| LaunchError::UnknownEntry(entry.to_string()))?;
        let params = &self.prog.funcs[func].params;
        if params.len() != args.len() {
            return Err(LaunchError::ArgCount {
                entry: entry.to_string(),
                expected: params.len(),
                got: args.len(),
            });
        }
        for (index, (p, a)) in params.iter().zip(args).enumerate() {
            let ok = match (p, a) {
                (Ty::Ptr(e), KernelArg::Buffer { elem, data }) => {
                    e == elem && data.len() % elem.size() == 0
                }
                (Ty::Scalar(t), KernelArg::Scalar { ty, .. }) => t == ty,
                _ => false,
            };
            if !ok {
                return Err(LaunchError::ArgType {
                    entry: entry.to_string(),
                    index,
                    expected: p.to_string(),
                    got: arg_desc(a),
                });
            }
        }

        let mut values = Vec::new();
        let mut buffers = Vec::new();
        for a in args {
            match a {
                KernelArg::Buffer { data, .. } => {
                    let p = self.mem.alloc_bytes(data);
                    buffers.push(p);
                    values.push(p);
                }
                KernelArg::Scalar { ty, value } => values.push(ty.normalize(*value)),
            }
        }

        let mut engine = Engine::new(&self.prog, &mut self.mem, &self.globals, self.opts.instruction_limit);
        engine.alloc_team_globals(grid.num_teams);
        let (returns, trap) = schedule(&mut engine, func, &values, grid);
        engine.free_team_globals();
        let instruction_count = engine.count;
        let trace = std::mem::take(&mut engine.trace);
        drop(engine);

        let buffer_bytes: Vec<Vec<u8>> = buffers.iter().map(|p| self.mem.bytes(*p).to_vec()).collect();
        for p in buffers {
            self.mem.free(p);
        }
        let mut global_memory: Vec<u8> = buffer_bytes.concat();
        for (g, p) in self.prog.globals.iter().zip(&self.globals) {
            if g.space == Space::Global {
                global_memory.extend_from_slice(self.mem.bytes(*p));
            }
        }
        Ok(ExecResult {
            global_memory,
            buffers: buffer_bytes,
            returns,
            trap,
            instruction_count,
            trace,
        })
    }
}

#[derive(Default, Clone, Copy)]
struct TeamState {
    arrived: u32,
    exited: u32,
}

/// Runs every thread of the grid to completion or the first trap. Threads
/// take turns round-robin; each turn lasts a random quantum of 1..=8
/// instructions drawn from the seeded generator.
fn schedule(
    engine: &mut Engine<'_>,
    func: usize,
    args: &[u64],
    grid: &GridConfig,
) -> (Vec<Option<u64>>, Option<Trap>) {
    let tpt = grid.threads_per_team;
    let mut threads: Vec<_> = (0..grid.num_teams)
        .flat_map(|team| (0..tpt).map(move |tid| (team, tid)))
        .map(|(team, tid)| {
            engine.spawn(
                func,
                args,
                Ctx {
                    team,
                    tid,
                    num_teams: grid.num_teams,
                    num_threads: tpt,
                },
            )
        })
        .collect();
    let mut teams = vec![TeamState::default(); grid.num_teams as usize];
    let mut rng = ChaCha8Rng::seed_from_u64(grid.sched_seed);
    let n = threads.len();
    let mut remaining = n;
    let mut cursor = 0;
    let mut trap = None;
    'run: while remaining > 0 {
        let Some(i) = (0..n)
            .map(|k| (cursor + k) % n)
            .find(|&i| threads[i].state == ThreadState::Running)
        else {
            // Everyone left is waiting at a barrier that cannot complete.
            let t = threads.iter().find(|t| t.state == ThreadState::AtBarrier).expect("waiter");
            trap = Some(Trap {
                kind: TrapKind::Deadlock,
                team: t.ctx.team,
                thread: t.ctx.tid,
            });
            break;
        };
        let quantum = rng.gen_range(1..=8);
        for _ in 0..quantum {
            let th = &mut threads[i];
            let team = th.ctx.team as usize;
            let (team_id, tid) = (th.ctx.team, th.ctx.tid);
            let fault = |kind| Trap {
                kind,
                team: team_id,
                thread: tid,
            };
            match engine.step(th) {
                Ok(Step::Continue) => {}
                Ok(Step::Barrier) => {
                    th.state = ThreadState::AtBarrier;
                    let ts = &mut teams[team];
                    ts.arrived += 1;
                    if ts.exited > 0 {
                        trap = Some(fault(TrapKind::Deadlock));
                        break 'run;
                    }
                    if ts.arrived == tpt {
                        ts.arrived = 0;
                        let base = team * tpt as usize;
                        for t in &mut threads[base..base + tpt as usize] {
                            t.state = ThreadState::Running;
                        }
                    }
                    break;
                }
                Ok(Step::Done) => {
                    remaining -= 1;
                    let ts = &mut teams[team];
                    ts.exited += 1;
                    if ts.arrived > 0 {
                        trap = Some(fault(TrapKind::Deadlock));
                        break 'run;
                    }
                    break;
                }
                Err(kind) => {
                    trap = Some(fault(kind));
                    break 'run;
                }
            }
        }
        cursor = i + 1;
    }
    for th in &mut threads {
        engine.unwind(th);
    }
    (threads.iter().map(|t| t.ret).collect(), trap)
}

/// One-shot launch on a fresh device with default options.
pub fn launch(
    image: &IrModule,
    entry: &str,
    grid: &GridConfig,
    args: &[KernelArg],
) -> Result<ExecResult, LaunchError> {
    Vgpu::new(image, VgpuOptions::default())?.launch(entry, grid, args)
}

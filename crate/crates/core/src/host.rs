//! The host side of offloading: runs the host program of a bundle and
//! dispatches each target region to the selected device, falling back to
//! host execution whenever the device cannot run it.
use thiserror::Error;

use crate::bundler::{Bundle, BundleError};
use crate::codegen::{CodegenError, HostProgram, IrModule, TargetCall};
use crate::lowering::Space;
use crate::target::Arch;
use crate::types::ScalarType;
use crate::vgpu::machine::{alloc_global, show_value, Ctx, Engine, HostEnv, Step};
use crate::vgpu::memory::Memory;
use crate::vgpu::program::{Program, TgtKind};
use crate::vgpu::{
    ExecResult, GridConfig, KernelArg, TraceEvent, Trap, TrapKind, Vgpu, VgpuOptions,
    DEFAULT_INSTRUCTION_LIMIT,
};

/// Region ran on the device.
pub const OFFLOAD_OK: u64 = 0;
/// No usable image, kernel or grid; the caller must run the fallback.
pub const OFFLOAD_FAILED: u64 = 1;
/// The device trapped; the program halts.
pub const OFFLOAD_TRAPPED: u64 = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOptions {
    pub device: Arch,
    /// `(teams, threads)` replacing every region's own grid.
    pub grid: Option<(u32, u32)>,
    pub force_offload_fail: bool,
    pub sched_seed: u64,
    pub check_uninit: bool,
    /// Per device launch, and separately for the host program.
    pub instruction_limit: u64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            device: Arch::Vgpu,
            grid: None,
            force_offload_fail: false,
            sched_seed: 0,
            check_uninit: false,
            instruction_limit: DEFAULT_INSTRUCTION_LIMIT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Launch {
    pub region: u32,
    pub status: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RunOutput {
    pub stdout: String,
    /// 0 on normal completion, 2 after a trap.
    pub exit_status: i32,
    pub main_return: Option<u64>,
    pub trap: Option<Trap>,
    /// Whether `trap` happened on the device rather than in host code.
    pub device_trap: bool,
    /// Device trace events of every launch, renumbered consecutively.
    pub trace: Vec<TraceEvent>,
    pub launches: Vec<Launch>,
    /// `main`'s locals as it returned, followed by the host globals.
    pub host_memory: Vec<u8>,
    pub device_instructions: u64,
}

impl RunOutput {
    pub fn trace_text(&self) -> String {
        self.trace.iter().map(|e| format!("{e}\n")).collect()
    }
}

#[derive(Debug, Error)]
pub enum HostError {
    #[error(transparent)]
    Bundle(#[from] BundleError),
    #[error("host program: {0}")]
    HostImage(#[from] CodegenError),
    #[error("host program: {0}")]
    Prepare(String),
    #[error("host program has no `main`")]
    MissingMain,
    #[error("`main` must not take parameters")]
    MainParams,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OffloadOutcome {
    pub status: u64,
    /// Present whenever the device actually ran the kernel.
    pub result: Option<ExecResult>,
}

impl OffloadOutcome {
    fn failed() -> Self {
        Self {
            status: OFFLOAD_FAILED,
            result: None,
        }
    }
}

/// A lazily loaded device, kept for the whole run so device globals
/// persist across regions.
#[derive(Default)]
struct DeviceSlot {
    loaded: Option<Option<Vgpu>>,
}

impl DeviceSlot {
    fn get(&mut self, bundle: &Bundle, device: Arch, check_uninit: bool, limit: u64) -> Option<&mut Vgpu> {
        self.loaded
            .get_or_insert_with(|| {
                if device != Arch::Vgpu {
                    return None;
                }
                let text = std::str::from_utf8(bundle.image(device.name())?).ok()?;
                let image = IrModule::parse(text).ok()?;
                let opts = VgpuOptions {
                    check_uninit,
                    instruction_limit: limit,
                };
                Vgpu::new(&image, opts).ok()
            })
            .as_mut()
    }
}

#[allow(clippy::too_many_arguments)]
fn offload(
    slot: &mut DeviceSlot,
    bundle: &Bundle,
    device: Arch,
    force_fail: bool,
    check_uninit: bool,
    limit: u64,
    region: u32,
    grid: &GridConfig,
    args: &mut [KernelArg],
) -> OffloadOutcome {
    if force_fail {
        return OffloadOutcome::failed();
    }
    let Some(gpu) = slot.get(bundle, device, check_uninit, limit) else {
        return OffloadOutcome::failed();
    };
    let Ok(result) = gpu.launch(&crate::codegen::kernel_name(region), grid, args) else {
        return OffloadOutcome::failed();
    };
    if result.trap.is_some() {
        return OffloadOutcome {
            status: OFFLOAD_TRAPPED,
            result: Some(result),
        };
    }
    let mut bufs = result.buffers.iter();
    for a in args.iter_mut() {
        if let KernelArg::Buffer { data, .. } = a {
            data.clone_from(bufs.next().expect("one result per buffer"));
        }
    }
    OffloadOutcome {
        status: OFFLOAD_OK,
        result: Some(result),
    }
}

/// Offloads one region of `bundle` to `device` with a fresh device.
/// On status 0 the buffer arguments hold the results; otherwise they are
/// untouched.
pub fn tgt_target(
    call: &TargetCall,
    bundle: &Bundle,
    device: Arch,
    force_fail: bool,
    grid: &GridConfig,
    args: &mut [KernelArg],
) -> OffloadOutcome {
    let mut slot = DeviceSlot::default();
    offload(
        &mut slot,
        bundle,
        device,
        force_fail,
        false,
        DEFAULT_INSTRUCTION_LIMIT,
        call.region,
        grid,
        args,
    )
}

struct Env<'b> {
    bundle: &'b Bundle,
    opts: &'b RunOptions,
    slot: DeviceSlot,
    stdout: String,
    trace: Vec<TraceEvent>,
    launches: Vec<Launch>,
    device_trap: Option<Trap>,
    device_instructions: u64,
}

impl HostEnv for Env<'_> {
    fn print(&mut self, ty: ScalarType, value: u64) {
        self.stdout += &show_value(ty, value);
        self.stdout.push('\n');
    }

    fn grid_override(&self) -> Option<(u32, u32)> {
        self.opts.grid
    }

    fn tgt_target(
        &mut self,
        mem: &mut Memory,
        region: u32,
        teams: u32,
        threads: u32,
        args: &[(TgtKind, u64)],
    ) -> Result<u64, TrapKind> {
        let mut kargs = Vec::with_capacity(args.len());
        for (kind, v) in args {
            kargs.push(match kind {
                TgtKind::Buffer { elem, len } => KernelArg::Buffer {
                    elem: *elem,
                    data: mem.read_bytes(*v, elem.size() * *len as usize)?,
                },
                TgtKind::Value(ty) => KernelArg::scalar(*ty, *v),
            });
        }
        let grid = GridConfig::new(teams, threads, self.opts.sched_seed);
        let out = offload(
            &mut self.slot,
            self.bundle,
            self.opts.device,
            self.opts.force_offload_fail,
            self.opts.check_uninit,
            self.opts.instruction_limit,
            region,
            &grid,
            &mut kargs,
        );
        self.launches.push(Launch {
            region,
            status: out.status,
        });
        if let Some(res) = out.result {
            self.device_instructions += res.instruction_count;
            for mut e in res.trace {
                e.seq = self.trace.len() as u64;
                self.trace.push(e);
            }
            if let Some(t) = res.trap {
                self.device_trap = Some(t);
                return Err(t.kind);
            }
        }
        if out.status == OFFLOAD_OK {
            for ((kind, v), a) in args.iter().zip(&kargs) {
                if let (TgtKind::Buffer { .. }, KernelArg::Buffer { data, .. }) = (kind, a) {
                    mem.write_bytes(*v, data)?;
                }
            }
        }
        Ok(out.status)
    }
}

/// Runs the host program of a serialized bundle.
pub fn run_bundle(bytes: &[u8], opts: &RunOptions) -> Result<RunOutput, HostError> {
    run(&Bundle::from_bytes(bytes)?, opts)
}

pub fn run(bundle: &Bundle, opts: &RunOptions) -> Result<RunOutput, HostError> {
    let text = std::str::from_utf8(bundle.host())
        .map_err(|_| HostError::Prepare("host entry is not text".into()))?;
    let hp = HostProgram::from_text(text)?;
    let prog = Program::prepare(&hp.module).map_err(HostError::Prepare)?;
    let main = *prog.func_index.get("main").ok_or(HostError::MissingMain)?;
    if !prog.funcs[main].params.is_empty() {
        return Err(HostError::MainParams);
    }

    let mut mem = Memory::new(opts.check_uninit);
    let globals: Vec<u64> = prog
        .globals
        .iter()
        .map(|g| match g.space {
            Space::Global => alloc_global(&mut mem, g),
            Space::TeamShared => 0,
        })
        .collect();
    let mut env = Env {
        bundle,
        opts,
        slot: DeviceSlot::default(),
        stdout: String::new(),
        trace: Vec::new(),
        launches: Vec::new(),
        device_trap: None,
        device_instructions: 0,
    };

    let (main_return, host_trap, mut host_memory) = {
        let mut engine = Engine::new(&prog, &mut mem, &globals, opts.instruction_limit);
        engine.tracing = false;
        engine.host = Some(&mut env);
        engine.final_locals = Some(Vec::new());
        engine.alloc_team_globals(1);
        let ctx = Ctx {
            team: 0,
            tid: 0,
            num_teams: 1,
            num_threads: 1,
        };
        let mut th = engine.spawn(main, &[], ctx);
        let trap = loop {
            let (team, thread) = (th.ctx.team, th.ctx.tid);
            match engine.step(&mut th) {
                Ok(Step::Done) => break None,
                Ok(_) => {}
                Err(kind) => break Some(Trap { kind, team, thread }),
            }
        };
        engine.unwind(&mut th);
        engine.free_team_globals();
        let locals = engine.final_locals.take().unwrap_or_default();
        (th.ret, trap, locals.concat())
    };
    for (g, p) in prog.globals.iter().zip(&globals) {
        if g.space == Space::Global {
            host_memory.extend_from_slice(mem.bytes(*p));
        }
    }

    let device_trap = env.device_trap.is_some();
    let trap = env.device_trap.or(host_trap);
    Ok(RunOutput {
        stdout: env.stdout,
        exit_status: if trap.is_some() { 2 } else { 0 },
        main_return: if trap.is_some() { None } else { main_return },
        trap,
        device_trap,
        trace: env.trace,
        launches: env.launches,
        host_memory,
        device_instructions: env.device_instructions,
    })
}

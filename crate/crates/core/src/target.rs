//! Target descriptions and their intrinsic instruction tables.
use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Architectures known to the toolchain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Arch {
    Amdgcn,
    Nvptx,
    Nvptx64,
    Vgpu,
    Host,
}

impl Arch {
    pub const ALL: [Arch; 5] = [
        Arch::Amdgcn,
        Arch::Nvptx,
        Arch::Nvptx64,
        Arch::Vgpu,
        Arch::Host,
    ];

    /// Architectures a device image can be built for.
    pub const DEVICES: [Arch; 4] = [Arch::Amdgcn, Arch::Nvptx, Arch::Nvptx64, Arch::Vgpu];

    pub fn name(self) -> &'static str {
        match self {
            Arch::Amdgcn => "amdgcn",
            Arch::Nvptx => "nvptx",
            Arch::Nvptx64 => "nvptx64",
            Arch::Vgpu => "vgpu",
            Arch::Host => "host",
        }
    }
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Arch {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Arch::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| format!("unknown architecture `{s}`"))
    }
}

/// Target-dependent operations reachable from source through builtins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum IntrinsicKind {
    AtomicAdd,
    AtomicMax,
    AtomicMin,
    AtomicXchg,
    AtomicCas,
    AtomicInc,
    ThreadFence,
    Barrier,
    ThreadId,
    TeamId,
    NumThreads,
    NumTeams,
    Trap,
}

impl IntrinsicKind {
    pub const ALL: [IntrinsicKind; 13] = [
        IntrinsicKind::AtomicAdd,
        IntrinsicKind::AtomicMax,
        IntrinsicKind::AtomicMin,
        IntrinsicKind::AtomicXchg,
        IntrinsicKind::AtomicCas,
        IntrinsicKind::AtomicInc,
        IntrinsicKind::ThreadFence,
        IntrinsicKind::Barrier,
        IntrinsicKind::ThreadId,
        IntrinsicKind::TeamId,
        IntrinsicKind::NumThreads,
        IntrinsicKind::NumTeams,
        IntrinsicKind::Trap,
    ];

    /// The portable source-level builtin for this kind.
    pub fn builtin_name(self) -> &'static str {
        match self {
            Self::AtomicAdd => "__builtin_atomic_add",
            Self::AtomicMax => "__builtin_atomic_max",
            Self::AtomicMin => "__builtin_atomic_min",
            Self::AtomicXchg => "__builtin_atomic_xchg",
            Self::AtomicCas => "__builtin_atomic_cas",
            Self::AtomicInc => "__builtin_atomic_inc",
            Self::ThreadFence => "__builtin_threadfence",
            Self::Barrier => "__builtin_barrier",
            Self::ThreadId => "__builtin_thread_id",
            Self::TeamId => "__builtin_team_id",
            Self::NumThreads => "__builtin_num_threads",
            Self::NumTeams => "__builtin_num_teams",
            Self::Trap => "__builtin_trap",
        }
    }

    pub fn from_builtin_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.builtin_name() == name)
    }

    pub fn is_atomic(self) -> bool {
        matches!(
            self,
            Self::AtomicAdd
                | Self::AtomicMax
                | Self::AtomicMin
                | Self::AtomicXchg
                | Self::AtomicCas
                | Self::AtomicInc
        )
    }

    /// Number of value operands following the pointer for atomics, or the
    /// operand count for the rest.
    pub fn arity(self) -> usize {
        match self {
            Self::AtomicCas => 3,
            Self::AtomicAdd
            | Self::AtomicMax
            | Self::AtomicMin
            | Self::AtomicXchg
            | Self::AtomicInc => 2,
            Self::Trap => 1,
            _ => 0,
        }
    }

    pub fn returns_value(self) -> bool {
        !matches!(self, Self::ThreadFence | Self::Barrier | Self::Trap)
    }
}

impl fmt::Display for IntrinsicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Self::AtomicAdd => "ADD",
            Self::AtomicMax => "MAX",
            Self::AtomicMin => "MIN",
            Self::AtomicXchg => "XCHG",
            Self::AtomicCas => "CAS",
            Self::AtomicInc => "INC",
            Self::ThreadFence => "THREADFENCE",
            Self::Barrier => "BARRIER",
            Self::ThreadId => "THREAD_ID",
            Self::TeamId => "TEAM_ID",
            Self::NumThreads => "NUM_THREADS",
            Self::NumTeams => "NUM_TEAMS",
            Self::Trap => "TRAP",
        };
        f.write_str(s)
    }
}

/// Trap codes raised through `__builtin_trap(code)` by the device runtime.
pub mod trap_code {
    pub const SHARED_OVERFLOW: u64 = 1;
    pub const NON_LIFO_FREE: u64 = 2;
    pub const NON_UNIFORM_ALLOC: u64 = 3;
}

/// Per-team shared memory capacity of every simulated target, in bytes.
pub const SHARED_SPACE_CAPACITY: u64 = 65536;

/// What a compilation targets: the architecture, its intrinsic table and
/// the team-shared memory size.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetDesc {
    pub arch: Arch,
    pub intrinsic_table: BTreeMap<IntrinsicKind, String>,
    pub shared_space_capacity: u64,
}

const GENERIC_ATOMICS: [(IntrinsicKind, &str); 5] = [
    (IntrinsicKind::AtomicAdd, "atomic.add.seq_cst"),
    (IntrinsicKind::AtomicMax, "atomic.max.seq_cst"),
    (IntrinsicKind::AtomicMin, "atomic.min.seq_cst"),
    (IntrinsicKind::AtomicXchg, "atomic.xchg.seq_cst"),
    (IntrinsicKind::AtomicCas, "atomic.cas.seq_cst"),
];

fn table(entries: &[(IntrinsicKind, &str)]) -> BTreeMap<IntrinsicKind, String> {
    entries.iter().map(|(k, v)| (*k, v.to_string())).collect()
}

impl TargetDesc {
    pub fn new(arch: Arch) -> Self {
        use IntrinsicKind::*;
        let mut entries: Vec<(IntrinsicKind, &str)> = Vec::new();
        match arch {
            Arch::Vgpu => {
                entries.extend(GENERIC_ATOMICS);
                entries.extend([
                    (AtomicInc, "vgpu.atomic.inc"),
                    (ThreadFence, "vgpu.fence"),
                    (Barrier, "vgpu.barrier"),
                    (ThreadId, "vgpu.thread.id"),
                    (TeamId, "vgpu.team.id"),
                    (NumThreads, "vgpu.num.threads"),
                    (NumTeams, "vgpu.num.teams"),
                    (Trap, "vgpu.trap"),
                ]);
            }
            Arch::Amdgcn => {
                entries.extend(GENERIC_ATOMICS);
                entries.extend([
                    (AtomicInc, "__builtin_amdgcn_atomic_inc32"),
                    (ThreadFence, "__builtin_amdgcn_fence"),
                    (Barrier, "__builtin_amdgcn_s_barrier"),
                    (ThreadId, "__builtin_amdgcn_workitem_id_x"),
                    (TeamId, "__builtin_amdgcn_workgroup_id_x"),
                    (NumThreads, "__builtin_amdgcn_workgroup_size_x"),
                    (NumTeams, "__builtin_amdgcn_num_workgroups_x"),
                    (Trap, "__builtin_trap"),
                ]);
            }
            Arch::Nvptx | Arch::Nvptx64 => {
                entries.extend(GENERIC_ATOMICS);
                entries.extend([
                    (AtomicInc, "__nvvm_atom_inc_gen_ui"),
                    (ThreadFence, "__nvvm_membar_gl"),
                    (Barrier, "__nvvm_bar_sync"),
                    (ThreadId, "__nvvm_read_ptx_sreg_tid_x"),
                    (TeamId, "__nvvm_read_ptx_sreg_ctaid_x"),
                    (NumThreads, "__nvvm_read_ptx_sreg_ntid_x"),
                    (NumTeams, "__nvvm_read_ptx_sreg_nctaid_x"),
                    (Trap, "__builtin_trap"),
                ]);
            }
            Arch::Host => {
                entries.extend([
                    (AtomicAdd, "host.rmw.add"),
                    (AtomicMax, "host.rmw.max"),
                    (AtomicMin, "host.rmw.min"),
                    (AtomicXchg, "host.rmw.xchg"),
                    (AtomicCas, "host.rmw.cas"),
                    (AtomicInc, "host.rmw.inc"),
                    (ThreadFence, "host.fence"),
                    (Barrier, "host.barrier"),
                    (ThreadId, "host.thread.id"),
                    (TeamId, "host.team.id"),
                    (NumThreads, "host.num.threads"),
                    (NumTeams, "host.num.teams"),
                    (Trap, "host.trap"),
                ]);
            }
        }
        Self {
            arch,
            intrinsic_table: table(&entries),
            shared_space_capacity: SHARED_SPACE_CAPACITY,
        }
    }

    /// Returns a copy of this target with `kind` removed from its table.
    pub fn without(mut self, kind: IntrinsicKind) -> Self {
        self.intrinsic_table.remove(&kind);
        self
    }

    /// Finds the intrinsic kind implemented by the instruction `name` on this
    /// target.
    pub fn kind_of(&self, name: &str) -> Option<IntrinsicKind> {
        self.intrinsic_table
            .iter()
            .find(|(_, v)| v.as_str() == name)
            .map(|(k, _)| *k)
    }
}

/// True if `name` is a vendor intrinsic of any standard target, e.g.
/// `__builtin_amdgcn_atomic_inc32`.
pub fn is_vendor_intrinsic(name: &str) -> bool {
    Arch::ALL
        .into_iter()
        .any(|a| TargetDesc::new(a).kind_of(name).is_some())
}

/// The kind a vendor intrinsic name implements on whichever standard target
/// defines it.
pub fn vendor_intrinsic_kind(name: &str) -> Option<IntrinsicKind> {
    Arch::ALL
        .into_iter()
        .find_map(|a| TargetDesc::new(a).kind_of(name))
}

//! Device and host code generation, runtime linking and IR comparison.
mod emit;
pub mod ir;
mod link;
mod normalize;

use thiserror::Error;

use crate::lowering::LowerError;
use crate::target::{Arch, IntrinsicKind, TargetDesc};

pub use emit::{emit_device_ir, emit_host_program, ArgDesc, HostProgram, Signature, TargetCall};
pub use ir::{IrFunction, IrGlobal, IrModule};
pub use link::{compile_runtime, link_runtime};
pub use normalize::{diff_ir, normalize_ir, normalize_module, DiffReport, Difference};

/// Name of the device entry point generated for target region `id`.
pub fn kernel_name(id: u32) -> String {
    format!("__omp_offload_{id}")
}

/// Name of the host fallback generated for target region `id`.
pub fn fallback_name(id: u32) -> String {
    format!("__omp_fallback_{id}")
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodegenError {
    #[error("missing intrinsic: no {kind} instruction for target {arch}{}", context(.function))]
    MissingIntrinsic {
        kind: IntrinsicKind,
        arch: Arch,
        function: String,
    },
    #[error("`{function}`: {message}")]
    UserError { function: String, message: String },
    #[error("`{function}`: {message}")]
    Type { function: String, message: String },
    #[error("symbol `{name}` is defined by both the program and the device runtime")]
    SymbolCollision { name: String },
    #[error("undefined symbol `{name}` referenced from `{from}`")]
    UndefinedSymbol { name: String, from: String },
    #[error("cannot compare IR for different targets ({left} vs {right})")]
    TargetMismatch { left: Arch, right: Arch },
    #[error("IR line {line}: {message}")]
    IrParse { line: usize, message: String },
    #[error(transparent)]
    Lower(#[from] LowerError),
}

fn context(function: &str) -> String {
    if function.is_empty() {
        String::new()
    } else {
        format!(" (required by `{function}`)")
    }
}

/// The instruction implementing `kind` on `target`.
pub fn map_intrinsic(kind: IntrinsicKind, target: &TargetDesc) -> Result<&str, CodegenError> {
    target
        .intrinsic_table
        .get(&kind)
        .map(String::as_str)
        .ok_or(CodegenError::MissingIntrinsic {
            kind,
            arch: target.arch,
            function: String::new(),
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn inc_table() {
        let inc = IntrinsicKind::AtomicInc;
        assert_eq!(
            map_intrinsic(inc, &TargetDesc::new(Arch::Amdgcn)).unwrap(),
            "__builtin_amdgcn_atomic_inc32"
        );
        assert_eq!(
            map_intrinsic(inc, &TargetDesc::new(Arch::Nvptx64)).unwrap(),
            "__nvvm_atom_inc_gen_ui"
        );
        assert_eq!(
            map_intrinsic(inc, &TargetDesc::new(Arch::Nvptx)).unwrap(),
            "__nvvm_atom_inc_gen_ui"
        );
        assert_eq!(
            map_intrinsic(inc, &TargetDesc::new(Arch::Vgpu)).unwrap(),
            "vgpu.atomic.inc"
        );
        let emptied = TargetDesc::new(Arch::Vgpu).without(inc);
        assert!(matches!(
            map_intrinsic(inc, &emptied),
            Err(CodegenError::MissingIntrinsic { .. })
        ));
    }
}

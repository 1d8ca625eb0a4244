//! The compilation pipeline: parse once, then run one independent pass per
//! target (concurrently) and pack the results into a bundle.
use thiserror::Error;

use crate::bundler::{Bundle, HOST_ENTRY};
use crate::codegen::{emit_device_ir, emit_host_program, link_runtime, CodegenError, HostProgram, IrModule};
use crate::diag::Diagnostic;
use crate::frontend::ast::SourceModule;
use crate::frontend::parse_module;
use crate::lowering::specialize;
use crate::target::{Arch, TargetDesc};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("{} error(s) while parsing", .0.len())]
    Parse(Vec<Diagnostic>),
    #[error("{arch}: {error}")]
    Target { arch: Arch, error: CodegenError },
    #[error("host: {0}")]
    Host(CodegenError),
    #[error("`host` is not an offload target")]
    HostTarget,
    #[error("target {0} given twice")]
    DuplicateTarget(Arch),
}

#[derive(Debug, Clone)]
pub struct Compiled {
    pub module: SourceModule,
    pub host: HostProgram,
    /// Device images in the order the targets were requested.
    pub images: Vec<(Arch, IrModule)>,
}

impl Compiled {
    pub fn bundle(&self) -> Bundle {
        let mut entries = vec![(HOST_ENTRY.to_string(), self.host.to_text().into_bytes())];
        for (arch, m) in &self.images {
            entries.push((arch.name().to_string(), m.to_text().into_bytes()));
        }
        Bundle { entries }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.bundle().to_bytes()
    }
}

/// Specialized, linked device IR of `module` for one target.
pub fn device_ir(module: &SourceModule, target: &TargetDesc) -> Result<IrModule, CodegenError> {
    let spec = specialize(module, target)?;
    let ir = emit_device_ir(&spec, target)?;
    link_runtime(&ir, target)
}

pub fn compile_module(module: &SourceModule, targets: &[Arch]) -> Result<Compiled, CompileError> {
    for (i, t) in targets.iter().enumerate() {
        if *t == Arch::Host {
            return Err(CompileError::HostTarget);
        }
        if targets[..i].contains(t) {
            return Err(CompileError::DuplicateTarget(*t));
        }
    }
    let (host, images) = std::thread::scope(|s| {
        let workers: Vec<_> = targets
            .iter()
            .map(|&arch| s.spawn(move || (arch, device_ir(module, &TargetDesc::new(arch)))))
            .collect();
        let host = emit_host_program(module);
        let images: Vec<_> = workers
            .into_iter()
            .map(|w| w.join().expect("target pass panicked"))
            .collect();
        (host, images)
    });
    let host = host.map_err(CompileError::Host)?;
    let images = images
        .into_iter()
        .map(|(arch, r)| r.map(|m| (arch, m)).map_err(|error| CompileError::Target { arch, error }))
        .collect::<Result<_, _>>()?;
    Ok(Compiled {
        module: module.clone(),
        host,
        images,
    })
}

pub fn compile_source(text: &str, targets: &[Arch]) -> Result<Compiled, CompileError> {
    let module = parse_module(text).map_err(CompileError::Parse)?;
    compile_module(&module, targets)
}

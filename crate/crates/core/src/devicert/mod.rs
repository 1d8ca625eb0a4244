//! The device runtime, shipped as embedded mini-language source and
//! compiled per target on demand.
use std::collections::BTreeMap;
use std::sync::OnceLock;

use crate::codegen::Signature;
use crate::frontend::ast::SourceModule;
use crate::frontend::parse_module;

pub const RUNTIME_SOURCE: &str = include_str!("runtime.mc");

/// The parsed runtime.
pub fn runtime_module() -> &'static SourceModule {
    static MODULE: OnceLock<SourceModule> = OnceLock::new();
    MODULE.get_or_init(|| match parse_module(RUNTIME_SOURCE) {
        Ok(m) => m,
        Err(d) => panic!(
            "device runtime does not parse:\n{}",
            crate::diag::render_all(&d, "runtime.mc")
        ),
    })
}

/// Signatures of the runtime's entry points, by base name. User code can
/// call these without declaring them.
pub fn prototypes() -> &'static BTreeMap<String, Signature> {
    static PROTOS: OnceLock<BTreeMap<String, Signature>> = OnceLock::new();
    PROTOS.get_or_init(|| {
        runtime_module()
            .functions()
            .filter(|f| f.variant_of.is_none())
            .map(|f| (f.name.clone(), Signature::of(f)))
            .collect()
    })
}

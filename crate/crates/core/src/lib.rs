//! Portable GPU runtime toolchain: a small OpenMP-flavoured language,
//! per-target specialization, a textual IR, offload bundles and a
//! simulated GPU.
pub mod bundler;
pub mod codegen;
pub mod devicert;
pub mod diag;
pub mod driver;
pub mod frontend;
pub mod host;
pub mod lowering;
pub mod selectors;
pub mod target;
pub mod types;
pub mod vgpu;

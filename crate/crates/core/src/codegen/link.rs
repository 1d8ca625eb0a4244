//! Linking user IR against the device runtime: runtime functions are
//! compiled lazily, only when something references them.
use std::collections::BTreeSet;

use super::emit::ModuleEmitter;
use super::ir::*;
use super::CodegenError;
use crate::devicert::runtime_module;
use crate::lowering::{specialize, SpecializedModule};
use crate::target::TargetDesc;

fn runtime_for(target: &TargetDesc) -> Result<SpecializedModule, CodegenError> {
    Ok(specialize(runtime_module(), target)?)
}

/// Copies every runtime function and global transitively referenced from
/// `user` into a new module. Calls to a runtime routine with variants are
/// bound to the variant selected for `target`.
pub fn link_runtime(user: &IrModule, target: &TargetDesc) -> Result<IrModule, CodegenError> {
    let rt = runtime_for(target)?;
    let em = ModuleEmitter::new(&rt, target, false, None);

    let mut rt_names: BTreeSet<String> = BTreeSet::new();
    for f in rt.module.functions() {
        rt_names.insert(f.name.clone());
        rt_names.insert(f.symbol());
    }
    for g in rt.module.globals() {
        rt_names.insert(g.name.clone());
    }
    let defined = user
        .functions
        .iter()
        .map(|f| &f.name)
        .chain(user.globals.iter().map(|g| &g.name));
    for name in defined {
        if rt_names.contains(name) {
            return Err(CodegenError::SymbolCollision { name: name.clone() });
        }
    }

    let mut out = user.clone();
    for f in &mut out.functions {
        for inst in &mut f.body {
            if let Inst::Call { callee, .. } = inst {
                if let Some(to) = rt.resolutions.get(callee) {
                    *callee = to.clone();
                }
            }
        }
    }

    let rt_globals = em.ir_globals();
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
            if let Some(f) = rt.function(&callee).filter(|f| f.body.is_some()) {
                out.functions.push(em.emit_function(f)?);
            } else {
                return Err(CodegenError::UndefinedSymbol {
                    name: callee,
                    from: out.functions[i].name.clone(),
                });
            }
        }
        for g in out.functions[i].global_refs() {
            if out.global(&g).is_some() {
                continue;
            }
            match rt_globals.iter().find(|r| r.name == g) {
                Some(r) => out.globals.push(r.clone()),
                None => {
                    return Err(CodegenError::UndefinedSymbol {
                        name: g,
                        from: out.functions[i].name.clone(),
                    })
                }
            }
        }
        i += 1;
    }
    Ok(out)
}

/// The whole runtime compiled for `target`.
pub fn compile_runtime(target: &TargetDesc) -> Result<IrModule, CodegenError> {
    let rt = runtime_for(target)?;
    let em = ModuleEmitter::new(&rt, target, false, None);
    let mut out = IrModule::new(target.arch);
    for f in rt.module.functions() {
        let superseded = f.variant_of.is_none() && rt.superseded.contains(&f.name);
        if f.body.is_some() && !superseded {
            out.functions.push(em.emit_function(f)?);
        }
    }
    out.globals = em.ir_globals();
    Ok(out)
}

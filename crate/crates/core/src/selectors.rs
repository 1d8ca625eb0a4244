//! Context-selector matching and declare-variant resolution.
//!
//! A selector's `arch(...)` list by default matches only when *every* listed
//! architecture is the one being compiled for, so a list naming two distinct
//! architectures never matches. The `match_any` extension turns the list
//! into a disjunction and `match_none` into its complement.
use std::fmt;

use thiserror::Error;

use crate::frontend::ast::FunctionDecl;
use crate::target::{Arch, TargetDesc};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Extension {
    #[default]
    None,
    MatchAny,
    MatchNone,
}

impl Extension {
    pub fn name(self) -> Option<&'static str> {
        match self {
            Extension::None => None,
            Extension::MatchAny => Some("match_any"),
            Extension::MatchNone => Some("match_none"),
        }
    }
}

/// The `match(...)` clause of a declare-variant region.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct ContextSelector {
    /// `device={arch(...)}`; never empty when present.
    pub device_arch: Option<Vec<Arch>>,
    /// `implementation={extension(...)}`.
    pub extension: Extension,
}

impl ContextSelector {
    pub fn arch(archs: &[Arch]) -> Self {
        Self {
            device_arch: Some(archs.to_vec()),
            extension: Extension::None,
        }
    }

    pub fn with_extension(mut self, extension: Extension) -> Self {
        self.extension = extension;
        self
    }
}

impl fmt::Display for ContextSelector {
    /// Prints the clause body, e.g.
    /// `device={arch(nvptx,nvptx64)}, implementation={extension(match_any)}`.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut sets = Vec::new();
        if let Some(archs) = &self.device_arch {
            let names: Vec<_> = archs.iter().map(|a| a.name()).collect();
            sets.push(format!("device={{arch({})}}", names.join(",")));
        }
        if let Some(ext) = self.extension.name() {
            sets.push(format!("implementation={{extension({ext})}}"));
        }
        f.write_str(&sets.join(", "))
    }
}

pub fn selector_matches(sel: &ContextSelector, target: &TargetDesc) -> bool {
    let Some(archs) = &sel.device_arch else {
        return true;
    };
    match sel.extension {
        Extension::None => archs.iter().all(|a| *a == target.arch),
        Extension::MatchAny => archs.contains(&target.arch),
        Extension::MatchNone => !archs.contains(&target.arch),
    }
}

/// Number of selector sets present when the selector matches. The
/// implementation set only carries extensions and scores nothing.
pub fn selector_score(sel: &ContextSelector, target: &TargetDesc) -> Option<u32> {
    selector_matches(sel, target).then(|| u32::from(sel.device_arch.is_some()))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ResolveError {
    #[error("ambiguous variants for `{base}` on {arch}: {} all match with score {score}", .candidates.join(", "))]
    Ambiguous {
        base: String,
        arch: Arch,
        score: u32,
        candidates: Vec<String>,
    },
}

/// Picks the variant of `base` that replaces it on `target`, returning the
/// emitted symbol name. Falls back to the base when nothing matches.
pub fn resolve_variant(
    base: &FunctionDecl,
    candidates: &[&FunctionDecl],
    target: &TargetDesc,
) -> Result<String, ResolveError> {
    let mut best: Option<u32> = None;
    let mut winners: Vec<&FunctionDecl> = Vec::new();
    for cand in candidates {
        let Some(v) = &cand.variant_of else { continue };
        let Some(score) = selector_score(&v.selector, target) else {
            continue;
        };
        match best {
            Some(b) if score < b => {}
            Some(b) if score == b => winners.push(cand),
            _ => {
                best = Some(score);
                winners = vec![cand];
            }
        }
    }
    match winners.as_slice() {
        [] => Ok(base.name.clone()),
        [one] => Ok(one.symbol()),
        many => Err(ResolveError::Ambiguous {
            base: base.name.clone(),
            arch: target.arch,
            score: best.unwrap_or(0),
            candidates: many.iter().map(|f| f.symbol()).collect(),
        }),
    }
}

/// Separator between a base name and its variant suffix in emitted symbols.
pub const VARIANT_MARKER: &str = "$ompvariant$";

/// Mangled symbol for a variant, e.g.
/// `atomic_inc$ompvariant$arch.nvptx.nvptx64$match_any`.
pub fn mangle_variant(base: &str, sel: &ContextSelector) -> String {
    let mut s = format!("{base}{VARIANT_MARKER}");
    match &sel.device_arch {
        Some(archs) => {
            s.push_str("arch");
            for a in archs {
                s.push('.');
                s.push_str(a.name());
            }
        }
        None => s.push_str("any"),
    }
    if let Some(ext) = sel.extension.name() {
        s.push('$');
        s.push_str(ext);
    }
    s
}

/// Strips variant mangling from a symbol.
pub fn demangle_variant(symbol: &str) -> &str {
    match symbol.find(VARIANT_MARKER) {
        Some(i) => &symbol[..i],
        None => symbol,
    }
}

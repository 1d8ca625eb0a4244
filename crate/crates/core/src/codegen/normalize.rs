//! Canonical IR text and semantic comparison of two modules.
use std::collections::HashMap;

use super::ir::*;
use super::CodegenError;
use crate::selectors::demangle_variant;

/// Renumbers temps (parameters first, then in definition order) and labels
/// (in definition order) densely from zero.
pub(crate) fn renumber(f: &mut IrFunction) {
    let mut temps: HashMap<u32, u32> = (0..f.params.len() as u32).map(|i| (i, i)).collect();
    let mut labels: HashMap<u32, u32> = HashMap::new();
    for inst in &f.body {
        if let Inst::Label(l) = inst {
            let n = labels.len() as u32;
            labels.entry(*l).or_insert(n);
        }
    }
    for inst in &mut f.body {
        for op in inst.operands_mut() {
            if let Operand::Temp(t) = op {
                let n = temps.len() as u32;
                *t = *temps.entry(*t).or_insert(n);
            }
        }
        if let Some(d) = inst.dst_mut() {
            let n = temps.len() as u32;
            *d = *temps.entry(*d).or_insert(n);
        }
        for l in inst.labels_mut() {
            let n = labels.len() as u32;
            *l = *labels.entry(*l).or_insert(n);
        }
    }
}

/// The canonical form of a module: variant symbols demangled to their
/// base names, functions and globals sorted by name, temps and labels
/// renumbered, metadata dropped.
pub fn normalize_module(m: &IrModule) -> IrModule {
    let mut out = m.clone();
    out.metadata.clear();
    for f in &mut out.functions {
        f.name = demangle_variant(&f.name).to_string();
        for inst in &mut f.body {
            if let Inst::Call { callee, .. } = inst {
                *callee = demangle_variant(callee).to_string();
            }
        }
        renumber(f);
    }
    out.functions.sort_by(|a, b| a.name.cmp(&b.name));
    out.globals.sort_by(|a, b| a.name.cmp(&b.name));
    out
}

pub fn normalize_ir(m: &IrModule) -> String {
    normalize_module(m).to_text()
}

/// One differing hunk: where it is, and the lines on each side.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Difference {
    pub location: String,
    pub left: String,
    pub right: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffReport {
    pub semantically_equal: bool,
    pub differences: Vec<Difference>,
}

/// Compares two modules for the same target after normalization.
pub fn diff_ir(a: &IrModule, b: &IrModule) -> Result<DiffReport, CodegenError> {
    if a.target != b.target {
        return Err(CodegenError::TargetMismatch {
            left: a.target,
            right: b.target,
        });
    }
    let left = normalize_ir(a);
    let right = normalize_ir(b);
    let l: Vec<&str> = left.lines().collect();
    let r: Vec<&str> = right.lines().collect();
    let differences = line_diff(&l, &r);
    Ok(DiffReport {
        semantically_equal: differences.is_empty(),
        differences,
    })
}

fn location(lines: &[&str], at: usize) -> String {
    let at = at.min(lines.len().saturating_sub(1));
    for i in (0..=at).rev() {
        if let Some(rest) = lines.get(i).and_then(|l| l.strip_prefix("func @")) {
            let name = rest.split('(').next().unwrap_or(rest);
            return format!("@{name} line {}", at - i);
        }
    }
    format!("module line {}", at + 1)
}

fn line_diff(l: &[&str], r: &[&str]) -> Vec<Difference> {
    let prefix = l.iter().zip(r).take_while(|(a, b)| a == b).count();
    let suffix = l[prefix..]
        .iter()
        .rev()
        .zip(r[prefix..].iter().rev())
        .take_while(|(a, b)| a == b)
        .count();
    let lm = &l[prefix..l.len() - suffix];
    let rm = &r[prefix..r.len() - suffix];
    if lm.is_empty() && rm.is_empty() {
        return Vec::new();
    }
    // LCS table over the differing middle.
    let (n, m) = (lm.len(), rm.len());
    let mut t = vec![vec![0u32; m + 1]; n + 1];
    for i in (0..n).rev() {
        for j in (0..m).rev() {
            t[i][j] = if lm[i] == rm[j] {
                t[i + 1][j + 1] + 1
            } else {
                t[i + 1][j].max(t[i][j + 1])
            };
        }
    }
    let mut out = Vec::new();
    let (mut i, mut j) = (0, 0);
    let mut hunk: Option<(usize, Vec<&str>, Vec<&str>)> = None;
    let flush = |hunk: &mut Option<(usize, Vec<&str>, Vec<&str>)>, out: &mut Vec<Difference>| {
        if let Some((at, a, b)) = hunk.take() {
            out.push(Difference {
                location: location(l, at),
                left: a.join("\n"),
                right: b.join("\n"),
            });
        }
    };
    while i < n || j < m {
        if i < n && j < m && lm[i] == rm[j] {
            flush(&mut hunk, &mut out);
            i += 1;
            j += 1;
        } else if j < m && (i == n || t[i][j + 1] >= t[i + 1][j]) {
            hunk.get_or_insert((prefix + i, vec![], vec![])).2.push(rm[j]);
            j += 1;
        } else {
            hunk.get_or_insert((prefix + i, vec![], vec![])).1.push(lm[i]);
            i += 1;
        }
    }
    flush(&mut hunk, &mut out);
    out
}

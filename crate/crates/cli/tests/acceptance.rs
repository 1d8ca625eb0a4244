//! End-to-end acceptance checks. Runs as a plain binary (no libtest
//! harness) so every criterion prints exactly one PASS/FAIL line.
use std::collections::{BTreeSet, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use forge_core::bundler::{bundle, unbundle, Bundle, MAGIC};
use forge_core::codegen::ir::Inst;
use forge_core::codegen::{diff_ir, kernel_name, normalize_ir, ArgDesc, IrModule};
use forge_core::driver::{compile_source, device_ir};
use forge_core::frontend::ast::StmtKind;
use forge_core::frontend::parse_module;
use forge_core::lowering::{lower_atomic, specialize, AtomicKind, LowerError};
use forge_core::selectors::{selector_matches, ContextSelector, Extension};
use forge_core::target::{Arch, IntrinsicKind, TargetDesc};
use forge_core::types::ScalarType;
use forge_core::vgpu::{launch, GridConfig, KernelArg, Vgpu, VgpuOptions};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const U32: ScalarType = ScalarType::U32;

fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
}

fn corpus() -> Vec<(String, String)> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "mc"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_stem().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read_to_string(&p).unwrap())
        })
        .collect()
}

fn ir_for(src: &str, arch: Arch) -> IrModule {
    let m = parse_module(src).unwrap_or_else(|d| panic!("{d:?}\n{src}"));
    device_ir(&m, &TargetDesc::new(arch)).unwrap_or_else(|e| panic!("{arch}: {e}\n{src}"))
}

fn declare_target(body: &str) -> String {
    format!("#pragma omp begin declare target\n{body}\n#pragma omp end declare target\n")
}

// ---------------------------------------------------------------- 1

/// Hand-written truth table, independent of the library's matcher.
fn selector_oracle(list: Option<&[Arch]>, ext: Extension, target: Arch) -> bool {
    let Some(list) = list else { return true };
    let member = list.contains(&target);
    match ext {
        Extension::None => list.iter().all(|a| *a == target),
        Extension::MatchAny => member,
        Extension::MatchNone => !member,
    }
}

fn selector_truth_table() -> Check {
    use Arch::*;
    let t = TargetDesc::new;
    let examples = [
        (ContextSelector::arch(&[Amdgcn]), Amdgcn, true),
        (ContextSelector::arch(&[Nvptx, Nvptx64]), Nvptx64, false),
        (
            ContextSelector::arch(&[Nvptx, Nvptx64]).with_extension(Extension::MatchAny),
            Nvptx64,
            true,
        ),
        (
            ContextSelector::arch(&[Amdgcn]).with_extension(Extension::MatchNone),
            Nvptx,
            true,
        ),
    ];
    for (sel, target, want) in &examples {
        ensure!(
            selector_matches(sel, &t(*target)) == *want,
            "example {sel} on {target}: expected {want}"
        );
    }

    let mut cases = 0;
    for mask in 0u32..32 {
        let list: Vec<Arch> = Arch::ALL
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, a)| *a)
            .collect();
        for ext in [Extension::None, Extension::MatchAny, Extension::MatchNone] {
            // An extension only modifies an arch list, so an absent list
            // pairs with no extension.
            if list.is_empty() && ext != Extension::None {
                continue;
            }
            let sel = ContextSelector {
                device_arch: (!list.is_empty()).then(|| list.clone()),
                extension: ext,
            };
            for target in Arch::ALL {
                let want = selector_oracle(sel.device_arch.as_deref(), ext, target);
                ensure!(
                    selector_matches(&sel, &t(target)) == want,
                    "`{sel}` on {target}: expected {want}"
                );
                cases += 1;
            }
        }
    }
    ensure!(cases <= 480, "{cases} cases");
    Ok(format!("4 examples + {cases} enumerated cases"))
}

// ---------------------------------------------------------------- 2

const SHAPES: [(AtomicKind, &str, &str); 5] = [
    (AtomicKind::Add, "capture", "V = *X; *X += E;"),
    (AtomicKind::Xchg, "capture", "V = *X; *X = E;"),
    (AtomicKind::Max, "compare capture", "V = *X; if (*X < E) { *X = E; }"),
    (AtomicKind::Min, "compare capture", "V = *X; if (*X > E) { *X = E; }"),
    (AtomicKind::Cas, "compare capture", "V = *X; if (*X == E) { *X = D; }"),
];

fn construct_source(clauses: &str, body: &str) -> String {
    declare_target(&format!(
        "u32 k(u32 *X, u32 *Y, u32 E, u32 D) {{\n  u32 V;\n#pragma omp atomic {clauses} seq_cst\n  {{ {body} }}\n  return V;\n}}"
    ))
}

fn intrinsic_source(kind: AtomicKind) -> String {
    let call = match kind {
        AtomicKind::Cas => "__builtin_atomic_cas(X, E, D)".to_string(),
        k => format!("{}(X, E)", k.builtin_name()),
    };
    declare_target(&format!(
        "u32 k(u32 *X, u32 *Y, u32 E, u32 D) {{\n  u32 V;\n  V = {call};\n  return V;\n}}"
    ))
}

fn count_kinds(m: &IrModule, arch: Arch, func: &str, pred: impl Fn(IntrinsicKind) -> bool) -> usize {
    let desc = TargetDesc::new(arch);
    m.function(func)
        .expect("function present")
        .body
        .iter()
        .filter(|i| matches!(i, Inst::Intrinsic { name, .. } if desc.kind_of(name).is_some_and(&pred)))
        .count()
}

fn atomic_lowering() -> Check {
    for (kind, clauses, body) in SHAPES {
        let src = construct_source(clauses, body);
        let m = parse_module(&src).map_err(|d| format!("{d:?}"))?;
        let f = m.functions().next().unwrap();
        let StmtKind::Atomic(c) = &f.body.as_ref().unwrap()[1].kind else {
            return Err("no atomic statement".into());
        };
        let got = lower_atomic(c).map_err(|e| format!("{kind:?}: {e}"))?;
        ensure!(got.kind == kind, "{body}: lowered to {:?}", got.kind);
        for arch in [Arch::Vgpu, Arch::Amdgcn, Arch::Nvptx, Arch::Nvptx64] {
            let ir = ir_for(&src, arch);
            let atomics = count_kinds(&ir, arch, "k", |k| k.is_atomic());
            let fences = count_kinds(&ir, arch, "k", |k| k == IntrinsicKind::ThreadFence);
            ensure!(
                atomics == 1 && fences == 0,
                "{kind:?} on {arch}: {atomics} atomics, {fences} fences"
            );
        }
    }

    let rejected = [
        ("capture", "V = *X; *X = *X >= E ? 0u : *X + 1u;"),
        ("compare capture", "V = *X; *X = *X >= E ? 0u : *X + 1u;"),
        ("compare capture", "V = *X; if (*X >= E) { *X = 0u; } else { *X = *X + 1u; }"),
        ("capture", "V = *X; *X -= E;"),
        ("capture", "V = *X; *X *= E;"),
        ("compare capture", "V = *X; if (*X <= E) { *X = E; }"),
        ("compare capture", "V = *X; if (*X < E) { *X = D; }"),
        ("compare capture", "V = *X; if (*X != E) { *X = D; }"),
        ("capture", "V = *Y; *X += E;"),
        ("capture", "V = *X; *Y = E;"),
        ("capture", "V = *X; *X += *X;"),
        ("compare capture", "V = *X; if (*X < E) { *X = E; } else { *X = D; }"),
        ("capture", "V = *X; *X = E; *X = D;"),
        ("compare capture", "V = *X; *X += E;"),
        ("capture", "V = *X; if (*X < E) { *X = E; }"),
    ];
    for (clauses, body) in rejected {
        let src = construct_source(clauses, body);
        let m = parse_module(&src).map_err(|d| format!("{body}: {d:?}"))?;
        match specialize(&m, &TargetDesc::new(Arch::Vgpu)) {
            Err(LowerError::NotRepresentable { .. }) => {}
            other => return Err(format!("`{clauses} {{ {body} }}` was not rejected: {other:?}")),
        }
    }
    Ok(format!("5 shapes × 4 targets; {} shapes rejected", rejected.len()))
}

// ---------------------------------------------------------------- 3

fn ir_parity() -> Check {
    let mut equal = 0;
    for (kind, clauses, body) in SHAPES {
        for arch in [Arch::Vgpu, Arch::Amdgcn, Arch::Nvptx64] {
            let a = ir_for(&construct_source(clauses, body), arch);
            let b = ir_for(&intrinsic_source(kind), arch);
            let report = diff_ir(&a, &b).map_err(|e| e.to_string())?;
            ensure!(
                report.semantically_equal,
                "{kind:?} on {arch}: {:?}",
                report.differences
            );
            ensure!(normalize_ir(&a) == normalize_ir(&b), "{kind:?} on {arch}: texts differ");
            equal += 1;
        }
    }
    ensure!(equal == 15, "{equal}/15");
    Ok("15/15 normalized texts equal".into())
}

// ---------------------------------------------------------------- 4

fn inc_semantics() -> Check {
    let src = declare_target(
        "void steps(u32 *X, u32 *Trace, u32 E, u32 n) {\n\
           Trace[0] = *X;\n\
           for (u32 k = 1u; k <= n; k += 1u) {\n\
             u32 old = __kmpc_atomic_inc(X, E);\n\
             Trace[k] = *X;\n\
           }\n\
         }\n\
         void once(u32 *X, u32 *Old, u32 E) {\n\
           Old[0] = __kmpc_atomic_inc(X, E);\n\
         }",
    );
    let ir = ir_for(&src, Arch::Vgpu);
    let grid = GridConfig::new(1, 1, 0);
    let mut checks = 0;
    for e in 1u64..=7 {
        let args = [
            KernelArg::buffer(U32, &[0]),
            KernelArg::buffer(U32, &[0; 51]),
            KernelArg::scalar(U32, e),
            KernelArg::scalar(U32, 50),
        ];
        let r = launch(&ir, "steps", &grid, &args).map_err(|e| e.to_string())?;
        ensure!(r.trap.is_none(), "trap {:?}", r.trap);
        for (k, x) in r.buffer_values(1, U32).into_iter().enumerate() {
            ensure!(x == k as u64 % (e + 1), "E={e} k={k}: x={x}");
            checks += 1;
        }
    }
    for (x, e, old, new) in [(5, 5, 5, 0), (3, 5, 3, 4)] {
        let args = [
            KernelArg::buffer(U32, &[x]),
            KernelArg::buffer(U32, &[0]),
            KernelArg::scalar(U32, e),
        ];
        let r = launch(&ir, "once", &grid, &args).map_err(|e| e.to_string())?;
        let (got_old, got_new) = (r.buffer_values(1, U32)[0], r.buffer_values(0, U32)[0]);
        ensure!(
            (got_old, got_new) == (old, new),
            "inc(x={x}, E={e}) returned {got_old}, left {got_new}"
        );
    }
    Ok(format!("{checks} sequential checks, 2 worked values"))
}

// ---------------------------------------------------------------- 5

#[derive(Debug, Clone, Copy)]
enum Op {
    Add(u64),
    Max(u64),
    Xchg(u64),
    Cas(u64, u64),
    Inc(u64),
}

impl Op {
    fn random(rng: &mut ChaCha8Rng) -> Op {
        match rng.gen_range(0..5) {
            0 => Op::Add(rng.gen_range(1..4)),
            1 => Op::Max(rng.gen_range(0..8)),
            2 => Op::Xchg(rng.gen_range(0..8)),
            3 => Op::Cas(rng.gen_range(0..4), rng.gen_range(0..8)),
            _ => Op::Inc(rng.gen_range(1..4)),
        }
    }

    /// Sequential semantics: (returned old value, new value).
    fn apply(self, x: u64) -> (u64, u64) {
        let new = match self {
            Op::Add(e) => (x + e) & 0xFFFF_FFFF,
            Op::Max(e) => x.max(e),
            Op::Xchg(e) => e,
            Op::Cas(e, d) => {
                if x == e {
                    d
                } else {
                    x
                }
            }
            Op::Inc(e) => {
                if x >= e {
                    0
                } else {
                    x + 1
                }
            }
        };
        (x, new)
    }

    fn call(self) -> String {
        match self {
            Op::Add(e) => format!("__builtin_atomic_add(X, {e}u)"),
            Op::Max(e) => format!("__builtin_atomic_max(X, {e}u)"),
            Op::Xchg(e) => format!("__builtin_atomic_xchg(X, {e}u)"),
            Op::Cas(e, d) => format!("__builtin_atomic_cas(X, {e}u, {d}u)"),
            Op::Inc(e) => format!("__kmpc_atomic_inc(X, {e}u)"),
        }
    }
}

/// Per-thread programs; results go to `R[3 * thread + i]`.
fn program_source(threads: &[Vec<Op>]) -> String {
    let mut body = String::from(
        "void prog(u32 *X, u32 *R) {\n  u32 g = omp_team_id() * omp_num_threads() + omp_thread_id();\n",
    );
    for (t, ops) in threads.iter().enumerate() {
        body += &format!("  if (g == {t}u) {{\n");
        for (i, op) in ops.iter().enumerate() {
            body += &format!("    R[{}] = {};\n", 3 * t + i, op.call());
        }
        body += "  }\n";
    }
    body += "}";
    declare_target(&body)
}

/// Whether some interleaving of `threads` (program order kept) starting
/// from `x0` returns `results` and ends at `final_x`. Depth-first search
/// over (progress per thread, x) with a visited set.
fn linearizable(threads: &[Vec<Op>], x0: u64, results: &[u64], final_x: u64) -> bool {
    fn go(
        threads: &[Vec<Op>],
        pos: &mut Vec<usize>,
        x: u64,
        results: &[u64],
        final_x: u64,
        seen: &mut HashSet<(Vec<usize>, u64)>,
    ) -> bool {
        if pos.iter().zip(threads).all(|(p, ops)| *p == ops.len()) {
            return x == final_x;
        }
        if !seen.insert((pos.clone(), x)) {
            return false;
        }
        for t in 0..threads.len() {
            let p = pos[t];
            if p == threads[t].len() {
                continue;
            }
            let (old, new) = threads[t][p].apply(x);
            if old != results[3 * t + p] {
                continue;
            }
            pos[t] += 1;
            let ok = go(threads, pos, new, results, final_x, seen);
            pos[t] -= 1;
            if ok {
                return true;
            }
        }
        false
    }
    let mut pos = vec![0; threads.len()];
    go(threads, &mut pos, x0, results, final_x, &mut HashSet::new())
}

/// Every outcome (results, final x) of every interleaving, by brute force.
fn all_outcomes(threads: &[Vec<Op>], x0: u64) -> BTreeSet<(Vec<u64>, u64)> {
    fn go(
        threads: &[Vec<Op>],
        pos: &mut Vec<usize>,
        x: u64,
        results: &mut Vec<u64>,
        out: &mut BTreeSet<(Vec<u64>, u64)>,
    ) {
        let mut done = true;
        for t in 0..threads.len() {
            let p = pos[t];
            if p == threads[t].len() {
                continue;
            }
            done = false;
            let (old, new) = threads[t][p].apply(x);
            results[3 * t + p] = old;
            pos[t] += 1;
            go(threads, pos, new, results, out);
            pos[t] -= 1;
        }
        if done {
            out.insert((results.clone(), x));
        }
    }
    let mut out = BTreeSet::new();
    go(
        threads,
        &mut vec![0; threads.len()],
        x0,
        &mut vec![0; 3 * threads.len()],
        &mut out,
    );
    out
}

fn linearizability() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x11ea);
    let mut launches = 0;
    let mut distinct = 0;
    for (teams, tpt) in [(1u32, 2u32), (1, 4), (2, 2), (2, 4)] {
        let n = (teams * tpt) as usize;
        for _program in 0..3 {
            let threads: Vec<Vec<Op>> = (0..n)
                .map(|_| (0..rng.gen_range(1..=3)).map(|_| Op::random(&mut rng)).collect())
                .collect();
            let x0 = rng.gen_range(0..4);
            let ir = ir_for(&program_source(&threads), Arch::Vgpu);
            let mut gpu = Vgpu::new(&ir, VgpuOptions::default()).map_err(|e| e.to_string())?;
            let full = (n <= 4).then(|| all_outcomes(&threads, x0));
            let mut seen = BTreeSet::new();
            for seed in 0..50 {
                let args = [
                    KernelArg::buffer(U32, &[x0]),
                    KernelArg::buffer(U32, &vec![0; 3 * n]),
                ];
                let r = gpu
                    .launch("prog", &GridConfig::new(teams, tpt, seed), &args)
                    .map_err(|e| e.to_string())?;
                ensure!(r.trap.is_none(), "trap {:?}", r.trap);
                let results = r.buffer_values(1, U32);
                let final_x = r.buffer_values(0, U32)[0];
                ensure!(
                    linearizable(&threads, x0, &results, final_x),
                    "{teams}x{tpt} seed {seed}: {results:?} x={final_x} not linearizable for {threads:?}"
                );
                if let Some(full) = &full {
                    ensure!(
                        full.contains(&(results.clone(), final_x)),
                        "{teams}x{tpt} seed {seed}: outcome outside the interleaving set"
                    );
                }
                seen.insert((results, final_x));
                launches += 1;
            }
            distinct += seen.len();
        }
    }

    let inc = declare_target(
        "void inc(u32 *X, u32 *R) {\n  R[omp_thread_id()] = __kmpc_atomic_inc(X, 2u);\n}",
    );
    let ir = ir_for(&inc, Arch::Vgpu);
    for seed in 0..50 {
        let args = [KernelArg::buffer(U32, &[0]), KernelArg::buffer(U32, &[0; 4])];
        let r = launch(&ir, "inc", &GridConfig::new(1, 4, seed), &args).map_err(|e| e.to_string())?;
        let mut got = r.buffer_values(1, U32);
        got.sort();
        ensure!(
            got == [0, 0, 1, 2] && r.buffer_values(0, U32) == [1],
            "seed {seed}: returned {got:?}, x={:?}",
            r.buffer_values(0, U32)
        );
    }
    Ok(format!(
        "{launches} launches linearizable ({distinct} distinct outcomes); INC example holds for 50 seeds"
    ))
}

// ---------------------------------------------------------------- 6

fn forge(args: &[&std::ffi::OsStr]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_forge"))
        .args(args)
        .env_remove("FORGE_DEFAULT_DEVICE")
        .output()
        .expect("forge runs")
}

fn fallback_equivalence() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let files = corpus();
    ensure!(files.len() == 10, "corpus has {} kernels", files.len());
    for (name, _) in &files {
        let src = corpus_dir().join(format!("{name}.mc"));
        let obj = dir.path().join(format!("{name}.o"));
        let out = forge(&[
            "compile".as_ref(),
            src.as_os_str(),
            "--targets".as_ref(),
            "vgpu,amdgcn,nvptx64".as_ref(),
            "-o".as_ref(),
            obj.as_os_str(),
        ]);
        ensure!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let run = |fail: bool, tag: &str| {
            let mem = dir.path().join(format!("{name}.{tag}.mem"));
            let mut args: Vec<&std::ffi::OsStr> = vec![
                "run".as_ref(),
                obj.as_os_str(),
                "--sched-seed".as_ref(),
                "7".as_ref(),
                "--dump-memory".as_ref(),
                mem.as_os_str(),
            ];
            if fail {
                args.push("--force-offload-fail".as_ref());
            }
            let out = forge(&args);
            (out.status.code(), out.stdout, std::fs::read(&mem).unwrap_or_default())
        };
        let device = run(false, "dev");
        let fallback = run(true, "host");
        ensure!(device.0 == Some(0), "{name}: exit {:?}", device.0);
        ensure!(device.1 == fallback.1, "{name}: stdout differs");
        ensure!(
            !device.2.is_empty() && device.2 == fallback.2,
            "{name}: buffers differ"
        );
    }
    Ok("10/10 kernels byte-identical".into())
}

// ---------------------------------------------------------------- 7

fn instruction_count_parity() -> Check {
    let mut counts = Vec::new();
    for (kind, clauses, body) in SHAPES {
        let run = |src: &str| {
            let ir = ir_for(src, Arch::Vgpu);
            let args = [
                KernelArg::buffer(U32, &[5]),
                KernelArg::buffer(U32, &[0]),
                KernelArg::scalar(U32, 5),
                KernelArg::scalar(U32, 9),
            ];
            launch(&ir, "k", &GridConfig::new(2, 4, 1), &args).map(|r| r.instruction_count)
        };
        let a = run(&construct_source(clauses, body)).map_err(|e| e.to_string())?;
        let b = run(&intrinsic_source(kind)).map_err(|e| e.to_string())?;
        ensure!(a == b, "{kind:?}: construct {a} vs intrinsic {b}");
        counts.push(format!("{kind:?}={a}"));
    }
    Ok(format!("equal counts: {}", counts.join(" ")))
}

// ---------------------------------------------------------------- 8

fn bundle_round_trip() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xb0b);
    let names = ["vgpu", "amdgcn", "nvptx", "nvptx64"];
    for i in 0..100 {
        let entries = rng.gen_range(1..=4);
        let payload = |rng: &mut ChaCha8Rng| {
            let len = if rng.gen_bool(0.2) { 0 } else { rng.gen_range(0..=1 << 20) };
            let mut v = vec![0u8; len];
            rng.fill(v.as_mut_slice());
            v
        };
        let host = payload(&mut rng);
        let mut pool = names.to_vec();
        let mut images = Vec::new();
        for _ in 1..entries {
            let name = pool.remove(rng.gen_range(0..pool.len()));
            images.push((name.to_string(), payload(&mut rng)));
        }
        let bytes = bundle(&host, &images).map_err(|e| e.to_string())?;
        let (h, imgs) = unbundle(&bytes).map_err(|e| format!("bundle {i}: {e}"))?;
        ensure!(h == host && imgs == images, "bundle {i}: contents changed");
        let again = bundle(&h, &imgs).map_err(|e| e.to_string())?;
        ensure!(again == bytes, "bundle {i}: bytes changed");

        // Layout, decoded by hand.
        ensure!(&bytes[..8] == b"OMPBNDL1" && &bytes[..8] == MAGIC, "magic");
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap()) as usize;
        ensure!(u32_at(8) == entries, "count field");
        let mut off = 12;
        let all: Vec<(&str, &[u8])> = std::iter::once(("host", host.as_slice()))
            .chain(images.iter().map(|(n, p)| (n.as_str(), p.as_slice())))
            .collect();
        for (name, p) in all {
            ensure!(u32_at(off) == name.len(), "name length of {name}");
            ensure!(&bytes[off + 4..off + 4 + name.len()] == name.as_bytes(), "name {name}");
            off += 4 + name.len();
            ensure!(u64_at(off) == p.len(), "payload length of {name}");
            ensure!(&bytes[off + 8..off + 8 + p.len()] == p, "payload of {name}");
            off += 8 + p.len();
        }
        ensure!(off == bytes.len(), "trailing bytes");
    }
    Ok("100 random bundles round-trip; layout verified".into())
}

// ---------------------------------------------------------------- 9

fn worksharing_partition() -> Check {
    const SPANS: i64 = 1000;
    let src = declare_target(
        "void part(i64 *Out, u32 *Has) {\n\
           u32 t = omp_thread_id();\n\
           u32 n = omp_num_threads();\n\
           i64 b[2];\n\
           for (i64 span = 1; span <= 1000; span += 1) {\n\
             i64 lb = (span * 7) % 13 - 6;\n\
             u32 has = __kmpc_for_static_init(lb, lb + span - 1, t, n, b);\n\
             u64 slot = (u64)(span - 1) * (u64)n + (u64)t;\n\
             Out[2ul * slot] = b[0];\n\
             Out[2ul * slot + 1ul] = b[1];\n\
             Has[slot] = has;\n\
           }\n\
         }\n\
         void one(i64 lb, i64 ub, u32 tid, u32 n, i64 *Out) {\n\
           u32 has = __kmpc_for_static_init(lb, ub, tid, n, Out);\n\
         }",
    );
    let ir = ir_for(&src, Arch::Vgpu);
    let mut gpu = Vgpu::new(&ir, VgpuOptions::default()).map_err(|e| e.to_string())?;
    let mut cases = 0;
    for n in 1u32..=32 {
        let slots = SPANS as usize * n as usize;
        let args = [
            KernelArg::buffer(ScalarType::I64, &vec![0; 2 * slots]),
            KernelArg::buffer(U32, &vec![0; slots]),
        ];
        let r = gpu
            .launch("part", &GridConfig::new(1, n, n as u64), &args)
            .map_err(|e| e.to_string())?;
        ensure!(r.trap.is_none(), "trap {:?}", r.trap);
        let out: Vec<i64> = r.buffer_values(0, ScalarType::I64).into_iter().map(|v| v as i64).collect();
        let has = r.buffer_values(1, U32);
        for span in 1..=SPANS {
            let lb = (span * 7) % 13 - 6;
            let ub = lb + span - 1;
            // Walking the threads in order, the non-empty ranges must tile
            // [lb, ub] exactly.
            let mut next = lb;
            for t in 0..n as usize {
                let slot = (span as usize - 1) * n as usize + t;
                let (lo, hi) = (out[2 * slot], out[2 * slot + 1]);
                if has[slot] == 0 {
                    continue;
                }
                ensure!(
                    lo == next && lo <= hi && hi <= ub,
                    "n={n} [{lb},{ub}] thread {t}: [{lo},{hi}], expected start {next}"
                );
                next = hi + 1;
            }
            ensure!(next == ub + 1, "n={n} [{lb},{ub}]: covered up to {}", next - 1);
            cases += 1;
        }
    }
    let args = [
        KernelArg::scalar(ScalarType::I64, 0),
        KernelArg::scalar(ScalarType::I64, 99),
        KernelArg::scalar(U32, 1),
        KernelArg::scalar(U32, 4),
        KernelArg::buffer(ScalarType::I64, &[0, 0]),
    ];
    let r = gpu.launch("one", &GridConfig::new(1, 1, 0), &args).map_err(|e| e.to_string())?;
    let got = r.buffer_values(0, ScalarType::I64);
    ensure!(got == [25, 49], "(0,99,1,4) -> {got:?}");
    Ok(format!("{cases} (nthreads, span) pairs partition exactly; (0,99,1,4)->(25,49)"))
}

// ---------------------------------------------------------------- 10

fn determinism() -> Check {
    let targets = [Arch::Vgpu, Arch::Amdgcn, Arch::Nvptx, Arch::Nvptx64];
    let mut launches = 0;
    for (name, src) in corpus() {
        let a = compile_source(&src, &targets).map_err(|e| format!("{name}: {e}"))?;
        let b = compile_source(&src, &targets).map_err(|e| format!("{name}: {e}"))?;
        let bytes = a.to_bytes();
        ensure!(bytes == b.to_bytes(), "{name}: bundles differ");
        let bundle = Bundle::from_bytes(&bytes).map_err(|e| e.to_string())?;
        let image = IrModule::parse(std::str::from_utf8(bundle.image("vgpu").unwrap()).unwrap())
            .map_err(|e| e.to_string())?;
        for call in &a.host.target_calls {
            let args: Vec<KernelArg> = call
                .args
                .iter()
                .map(|d| match d {
                    ArgDesc::Buffer { elem, len, .. } => {
                        KernelArg::buffer(*elem, &(0..*len as u64).collect::<Vec<_>>())
                    }
                    ArgDesc::Scalar { ty, .. } => KernelArg::scalar(*ty, 3),
                })
                .collect();
            let grid = GridConfig::new(call.num_teams, call.thread_limit, 42);
            let run = || {
                let mut gpu = Vgpu::new(&image, VgpuOptions::default()).map_err(|e| e.to_string())?;
                gpu.launch(&kernel_name(call.region), &grid, &args).map_err(|e| e.to_string())
            };
            let (x, y) = (run()?, run()?);
            ensure!(x == y, "{name} region {}: results differ", call.region);
            ensure!(x.trace_text() == y.trace_text(), "{name}: traces differ");
            launches += 1;
        }
    }
    Ok(format!("10 corpus bundles rebuilt identically; {launches} launches reproduced"))
}

// ----------------------------------------------------------------

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("selector truth table", selector_truth_table),
        ("atomic lowering", atomic_lowering),
        ("IR parity", ir_parity),
        ("INC semantics", inc_semantics),
        ("linearizability", linearizability),
        ("fallback equivalence", fallback_equivalence),
        ("instruction-count parity", instruction_count_parity),
        ("bundle round-trip", bundle_round_trip),
        ("worksharing partition", worksharing_partition),
        ("determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str()) || *f == n.to_string()) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| Err(p.downcast_ref::<String>().cloned().unwrap_or_else(|| "panic".into())));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {n:>2} {name} ({secs:.2}s): {detail}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {n:>2} {name} ({secs:.2}s): {why}");
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}

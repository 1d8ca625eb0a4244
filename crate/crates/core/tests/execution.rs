use forge_core::bundler::Bundle;
use forge_core::codegen::{kernel_name, CodegenError};
use forge_core::driver::{compile_source, device_ir, CompileError};
use forge_core::frontend::parse_module;
use forge_core::host::{run, run_bundle, tgt_target, HostError, RunOptions, OFFLOAD_FAILED, OFFLOAD_OK};
use forge_core::target::{Arch, IntrinsicKind, TargetDesc};
use forge_core::types::ScalarType::{self, U32};
use forge_core::vgpu::{
    launch, EventKind, GridConfig, KernelArg, LaunchError, TrapKind, Vgpu, VgpuOptions, POISON,
};

fn device(body: &str) -> forge_core::codegen::IrModule {
    let src = format!("#pragma omp begin declare target\n{body}\n#pragma omp end declare target\n");
    let m = parse_module(&src).unwrap_or_else(|d| panic!("{d:?}"));
    device_ir(&m, &TargetDesc::new(Arch::Vgpu)).unwrap()
}

fn grid(teams: u32, threads: u32) -> GridConfig {
    GridConfig::new(teams, threads, 1)
}

#[test]
fn barrier_orders_phases_within_a_team() {
    let ir = device(
        "void k(u32 *out) {\n\
           u32 t = omp_thread_id();\n\
           u32 n = omp_num_threads();\n\
           out[t] = t + 1u;\n\
           __kmpc_barrier(0);\n\
           out[n + t] = out[(t + 1u) % n];\n\
         }",
    );
    for seed in 0..20 {
        let r = launch(&ir, "k", &GridConfig::new(1, 4, seed), &[KernelArg::buffer(U32, &[0; 8])]).unwrap();
        assert_eq!(r.trap, None);
        assert_eq!(r.buffer_values(0, U32), [1, 2, 3, 4, 2, 3, 4, 1]);
        assert_eq!(r.count_events(EventKind::Barrier), 4);
    }
}

#[test]
fn divergent_barrier_deadlocks() {
    let ir = device(
        "void k() {\n\
           if (omp_thread_id() == 0u) {\n\
             __kmpc_barrier(0);\n\
           }\n\
         }",
    );
    let r = launch(&ir, "k", &grid(1, 2), &[]).unwrap();
    assert_eq!(r.trap.map(|t| t.kind), Some(TrapKind::Deadlock));
}

#[test]
fn team_shared_globals_are_per_team_and_fresh_per_launch() {
    let ir = device(
        "u32 count;\n\
         #pragma omp allocate(count) allocator(omp_pteam_mem_alloc)\n\
         u32 total;\n\
         void k(u32 *out) {\n\
           u32 old;\n\
           #pragma omp atomic capture seq_cst\n\
           { old = count; count += 1u; }\n\
           u32 g;\n\
           #pragma omp atomic capture seq_cst\n\
           { g = total; total += 1u; }\n\
           __kmpc_barrier(0);\n\
           out[omp_team_id()] = count;\n\
           out[2u] = total;\n\
         }",
    );
    let mut gpu = Vgpu::new(&ir, VgpuOptions::default()).unwrap();
    let r1 = gpu.launch("k", &grid(2, 3), &[KernelArg::buffer(U32, &[0; 3])]).unwrap();
    assert_eq!(r1.trap, None);
    assert_eq!(r1.buffer_values(0, U32), [3, 3, 6]);
    // Global-space globals persist; team-shared ones start over.
    let r2 = gpu.launch("k", &grid(2, 3), &[KernelArg::buffer(U32, &[0; 3])]).unwrap();
    assert_eq!(r2.buffer_values(0, U32), [3, 3, 12]);
}

#[test]
fn shared_arena_traps() {
    let ir = device(
        "void overflow() { u64 a = __kmpc_alloc_shared(65537ul); }\n\
         void fill() { u64 a = __kmpc_alloc_shared(65536ul); u64 b = __kmpc_alloc_shared(1ul); }\n\
         void exact() { u64 a = __kmpc_alloc_shared(65536ul); __kmpc_free_shared(a, 65536ul); }\n\
         void misorder() {\n\
           u64 a = __kmpc_alloc_shared(8ul);\n\
           u64 b = __kmpc_alloc_shared(8ul);\n\
           __kmpc_free_shared(a, 8ul);\n\
         }\n\
         void nonuniform() { u64 a = __kmpc_alloc_shared(8ul); }",
    );
    let kind = |entry: &str, threads: u32| {
        launch(&ir, entry, &grid(1, threads), &[]).unwrap().trap.map(|t| t.kind)
    };
    assert_eq!(kind("overflow", 1), Some(TrapKind::SharedOverflow));
    assert_eq!(kind("fill", 1), Some(TrapKind::SharedOverflow));
    assert_eq!(kind("exact", 1), None);
    assert_eq!(kind("misorder", 1), Some(TrapKind::NonLIFOFree));
    assert_eq!(kind("nonuniform", 2), Some(TrapKind::NonUniformAlloc));
    let r = launch(&ir, "misorder", &grid(1, 1), &[]).unwrap();
    assert!(r.trace_text().ends_with("trap NonLIFOFree\n"), "{}", r.trace_text());
}

#[test]
fn loader_uninitialized_reads_trap_only_when_checked() {
    let ir = device(
        "u32 scratch [[loader_uninitialized]];\n\
         #pragma omp allocate(scratch) allocator(omp_pteam_mem_alloc)\n\
         void read(u32 *out) { out[0] = scratch; }\n\
         void write_then_read(u32 *out) { scratch = 9u; out[0] = scratch; }",
    );
    let args = [KernelArg::buffer(U32, &[0])];
    let checked = VgpuOptions {
        check_uninit: true,
        ..VgpuOptions::default()
    };
    let mut gpu = Vgpu::new(&ir, checked).unwrap();
    let r = gpu.launch("read", &grid(1, 1), &args).unwrap();
    assert_eq!(r.trap.map(|t| t.kind), Some(TrapKind::UninitializedRead));
    let r = gpu.launch("write_then_read", &grid(1, 1), &args).unwrap();
    assert_eq!(r.buffer_values(0, U32), [9]);

    let r = launch(&ir, "read", &grid(1, 1), &args).unwrap();
    assert_eq!(r.trap, None);
    assert_eq!(r.buffer_values(0, U32), [u32::from_le_bytes([POISON; 4]) as u64]);
}

#[test]
fn faults_become_traps() {
    let ir = device(
        "void oob(u32 *out) { out[4] = 1u; }\n\
         void div(u32 *out) { out[0] = out[1] / out[2]; }\n\
         u32 spin(u32 x) { return spin(x + 1u); }\n\
         void deep(u32 *out) { out[0] = spin(0u); }\n\
         void forever(u32 *out) { while (1) { out[0] += 1u; } }\n\
         void user(u32 *out) { __builtin_trap(77ul); }",
    );
    let args = [KernelArg::buffer(U32, &[0; 4])];
    let kind = |entry: &str| launch(&ir, entry, &grid(1, 1), &args).unwrap().trap.map(|t| t.kind);
    assert_eq!(kind("oob"), Some(TrapKind::OutOfBounds));
    assert_eq!(kind("div"), Some(TrapKind::DivisionByZero));
    assert_eq!(kind("deep"), Some(TrapKind::StackOverflow));
    assert_eq!(kind("user"), Some(TrapKind::Unknown(77)));
    let opts = VgpuOptions {
        instruction_limit: 10_000,
        ..VgpuOptions::default()
    };
    let r = Vgpu::new(&ir, opts).unwrap().launch("forever", &grid(1, 1), &args).unwrap();
    assert_eq!(r.trap.map(|t| t.kind), Some(TrapKind::InstructionLimit));
}

#[test]
fn launch_validation() {
    let ir = device("void k(u32 *out, u64 n) { out[0] = (u32)n; }");
    let g = grid(1, 1);
    assert!(matches!(launch(&ir, "nope", &g, &[]), Err(LaunchError::UnknownEntry(_))));
    assert!(matches!(launch(&ir, "k", &g, &[]), Err(LaunchError::ArgCount { .. })));
    let swapped = [KernelArg::scalar(ScalarType::U64, 1), KernelArg::buffer(U32, &[0])];
    assert!(matches!(launch(&ir, "k", &g, &swapped), Err(LaunchError::ArgType { .. })));
    let args = [KernelArg::buffer(U32, &[0]), KernelArg::scalar(ScalarType::U64, 5)];
    assert!(matches!(launch(&ir, "k", &grid(0, 1), &args), Err(LaunchError::BadGrid(_))));
    assert!(matches!(launch(&ir, "k", &grid(1, 1025), &args), Err(LaunchError::BadGrid(_))));
    assert_eq!(launch(&ir, "k", &g, &args).unwrap().buffer_values(0, U32), [5]);
    let amd = device_ir(&parse_module("").unwrap(), &TargetDesc::new(Arch::Amdgcn)).unwrap();
    assert!(matches!(Vgpu::new(&amd, VgpuOptions::default()), Err(LaunchError::WrongTarget(Arch::Amdgcn))));
}

#[test]
fn trace_records_atomics_in_order() {
    let ir = device("void k(u32 *x) { u32 a = __kmpc_atomic_add(x, 2u); u32 b = __kmpc_atomic_cas(x, 2u, 5u); }");
    let r = launch(&ir, "k", &grid(1, 1), &[KernelArg::buffer(U32, &[0])]).unwrap();
    let lines: Vec<_> = r.trace_text().lines().map(str::to_string).collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("0 0 0 atomic add u32 "), "{}", lines[0]);
    assert!(lines[0].ends_with(" 2 old=0 new=2"), "{}", lines[0]);
    assert!(lines[1].ends_with(" 2 5 old=2 new=5"), "{}", lines[1]);
}

const PROGRAM: &str = r#"
u32 calls;
int main() {
  u32 out[4];
  u32 n = 5u;
#pragma omp target teams num_teams(2) thread_limit(2)
  {
    u32 g = omp_team_id() * omp_num_threads() + omp_thread_id();
    out[g] = g * n;
  }
  calls = calls + 1u;
  print(out[3]);
  print(calls);
  return 7;
}
"#;

fn compiled(targets: &[Arch]) -> Bundle {
    compile_source(PROGRAM, targets).unwrap().bundle()
}

#[test]
fn host_runs_offload_and_fallback_alike() {
    let b = compiled(&[Arch::Vgpu, Arch::Amdgcn]);
    let dev = run(&b, &RunOptions::default()).unwrap();
    assert_eq!(dev.stdout, "15\n1\n");
    assert_eq!(dev.exit_status, 0);
    assert_eq!(dev.main_return, Some(7));
    assert_eq!(dev.launches[0].status, OFFLOAD_OK);
    for opts in [
        RunOptions {
            force_offload_fail: true,
            ..RunOptions::default()
        },
        RunOptions {
            device: Arch::Amdgcn,
            ..RunOptions::default()
        },
    ] {
        let fb = run(&b, &opts).unwrap();
        assert_eq!(fb.launches[0].status, OFFLOAD_FAILED);
        assert_eq!((&fb.stdout, &fb.host_memory), (&dev.stdout, &dev.host_memory));
        assert!(fb.trace.is_empty());
    }
    // A bundle without a vgpu image falls back too.
    let no_image = run(&compiled(&[Arch::Amdgcn]), &RunOptions::default()).unwrap();
    assert_eq!(no_image.launches[0].status, OFFLOAD_FAILED);
    assert_eq!(no_image.stdout, dev.stdout);
}

#[test]
fn grid_override_applies_to_device_and_fallback() {
    let src = "int main() {\n u32 out[1];\n#pragma omp target teams num_teams(1) thread_limit(1)\n { u32 o = __kmpc_atomic_add(out, 1u); }\n print(out[0]);\n return 0;\n}\n";
    let b = compile_source(src, &[Arch::Vgpu]).unwrap().to_bytes();
    for force in [false, true] {
        let opts = RunOptions {
            grid: Some((3, 5)),
            force_offload_fail: force,
            ..RunOptions::default()
        };
        assert_eq!(run_bundle(&b, &opts).unwrap().stdout, "15\n");
    }
}

#[test]
fn device_trap_halts_without_fallback() {
    let src = "int main() {\n u32 out[1];\n#pragma omp target teams num_teams(1) thread_limit(1)\n { out[1] = 3u; }\n print(1u);\n return 0;\n}\n";
    let b = compile_source(src, &[Arch::Vgpu]).unwrap().to_bytes();
    let out = run_bundle(&b, &RunOptions::default()).unwrap();
    assert_eq!(out.exit_status, 2);
    assert!(out.device_trap);
    assert_eq!(out.trap.unwrap().kind, TrapKind::OutOfBounds);
    assert_eq!(out.stdout, "");
    // The host fallback hits the same fault in host code.
    let forced = RunOptions {
        force_offload_fail: true,
        ..RunOptions::default()
    };
    let out = run_bundle(&b, &forced).unwrap();
    assert_eq!((out.exit_status, out.device_trap), (2, false));
}

#[test]
fn tgt_target_leaves_buffers_alone_on_failure() {
    let c = compile_source(PROGRAM, &[Arch::Vgpu]).unwrap();
    let b = c.bundle();
    let call = &c.host.target_calls[0];
    assert_eq!(call.kernel, kernel_name(0));
    let fresh = || vec![KernelArg::buffer(U32, &[9; 4]), KernelArg::scalar(U32, 5)];
    let g = grid(2, 2);

    let mut args = fresh();
    let out = tgt_target(call, &b, Arch::Vgpu, false, &g, &mut args);
    assert_eq!(out.status, OFFLOAD_OK);
    assert_eq!(args[0], KernelArg::buffer(U32, &[0, 5, 10, 15]));

    for (device, force) in [(Arch::Vgpu, true), (Arch::Amdgcn, false), (Arch::Nvptx64, false)] {
        let mut args = fresh();
        let out = tgt_target(call, &b, device, force, &g, &mut args);
        assert_ne!(out.status, OFFLOAD_OK);
        assert_eq!(args, fresh());
    }
    let mut wrong = vec![KernelArg::scalar(U32, 5)];
    assert_eq!(tgt_target(call, &b, Arch::Vgpu, false, &g, &mut wrong).status, OFFLOAD_FAILED);
}

#[test]
fn bad_bundles_are_rejected() {
    assert!(matches!(run_bundle(b"nope", &RunOptions::default()), Err(HostError::Bundle(_))));
    let no_main = compile_source("u32 f() { return 1u; }\n", &[Arch::Vgpu]).unwrap();
    assert!(matches!(run(&no_main.bundle(), &RunOptions::default()), Err(HostError::MissingMain)));
}

#[test]
fn missing_intrinsics_fail_only_when_needed() {
    let src = "#pragma omp begin declare target\n\
               u32 f(u32 *x) { return __kmpc_atomic_inc(x, 3u); }\n\
               u32 g(u32 *x) { return __kmpc_atomic_add(x, 3u); }\n\
               #pragma omp end declare target\n";
    let m = parse_module(src).unwrap();
    let no_inc = TargetDesc::new(Arch::Vgpu).without(IntrinsicKind::AtomicInc);
    match device_ir(&m, &no_inc) {
        Err(CodegenError::MissingIntrinsic { kind, .. }) => assert_eq!(kind, IntrinsicKind::AtomicInc),
        other => panic!("{other:?}"),
    }
    let only_add = parse_module(&src.replace("u32 f(u32 *x) { return __kmpc_atomic_inc(x, 3u); }\n", "")).unwrap();
    assert!(device_ir(&only_add, &no_inc).is_ok());
}

#[test]
fn compile_errors() {
    let err = |src: &str, targets: &[Arch]| compile_source(src, targets).unwrap_err();
    assert!(matches!(err("int main( {", &[Arch::Vgpu]), CompileError::Parse(_)));
    assert!(matches!(err("int main() { return 0; }", &[Arch::Host]), CompileError::HostTarget));
    assert!(matches!(
        err("int main() { return 0; }", &[Arch::Vgpu, Arch::Vgpu]),
        CompileError::DuplicateTarget(Arch::Vgpu)
    ));
    let collide = "#pragma omp begin declare target\nvoid __kmpc_flush(ident loc) { }\n#pragma omp end declare target\n";
    assert!(matches!(
        err(collide, &[Arch::Vgpu]),
        CompileError::Target {
            error: CodegenError::SymbolCollision { .. },
            ..
        } | CompileError::Host(CodegenError::SymbolCollision { .. })
    ));
    let undefined = "#pragma omp begin declare target\nu32 h();\nu32 f() { return h(); }\n#pragma omp end declare target\n";
    assert!(matches!(
        err(undefined, &[Arch::Vgpu]),
        CompileError::Target {
            error: CodegenError::UndefinedSymbol { .. },
            ..
        }
    ));
}

#[test]
fn bundles_keep_target_order() {
    let b = compiled(&[Arch::Nvptx64, Arch::Vgpu, Arch::Amdgcn]);
    let names: Vec<_> = b.entries.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(names, ["host", "nvptx64", "vgpu", "amdgcn"]);
}

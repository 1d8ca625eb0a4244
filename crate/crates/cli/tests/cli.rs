use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_forge");

fn corpus(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus").join(name)
}

fn forge(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("FORGE_DEFAULT_DEVICE")
        .output()
        .expect("spawn forge")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn compile_to(dir: &Path, src: &Path, targets: &str) -> PathBuf {
    let out = dir.join("prog.o");
    let o = forge(&["compile", src.to_str().unwrap(), "--targets", targets, "-o", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn compile_run_and_fallback_agree_on_the_corpus() {
    let dir = tempfile::tempdir().unwrap();
    for entry in fs::read_dir(corpus("")).unwrap() {
        let src = entry.unwrap().path();
        let b = compile_to(dir.path(), &src, "vgpu,amdgcn");
        let b = b.to_str().unwrap();
        let dev = forge(&["run", b]);
        assert_eq!(code(&dev), 0, "{}: {}", src.display(), stderr(&dev));
        assert!(!stdout(&dev).is_empty());
        let fb = forge(&["run", b, "--force-offload-fail"]);
        assert_eq!(stdout(&fb), stdout(&dev), "{}", src.display());
        let amd = forge(&["run", b, "--device", "amdgcn"]);
        assert_eq!(stdout(&amd), stdout(&dev), "{}", src.display());
    }
}

#[test]
fn device_can_come_from_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let b = compile_to(dir.path(), &corpus("histogram.mc"), "vgpu");
    let trace = dir.path().join("t.txt");
    let run = |device: &str| {
        let o = Command::new(BIN)
            .args(["run", b.to_str().unwrap(), "--trace", trace.to_str().unwrap()])
            .env("FORGE_DEFAULT_DEVICE", device)
            .output()
            .unwrap();
        assert_eq!(code(&o), 0);
        fs::read_to_string(&trace).unwrap()
    };
    // Only a real offload produces device events.
    assert!(!run("vgpu").is_empty());
    assert!(run("host").is_empty());
    let bad = Command::new(BIN)
        .args(["run", b.to_str().unwrap()])
        .env("FORGE_DEFAULT_DEVICE", "cuda")
        .output()
        .unwrap();
    assert_ne!(code(&bad), 0);
}

#[test]
fn traps_exit_with_status_two() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("trap.mc");
    fs::write(
        &src,
        "int main() {\n  u32 out[1];\n#pragma omp target teams num_teams(1) thread_limit(2)\n  { u64 a = __kmpc_alloc_shared(8ul); }\n  print(out[0]);\n  return 5;\n}\n",
    )
    .unwrap();
    let b = compile_to(dir.path(), &src, "vgpu");
    let trace = dir.path().join("trace.txt");
    let o = forge(&["run", b.to_str().unwrap(), "--trace", trace.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("device trap"), "{}", stderr(&o));
    assert_eq!(stdout(&o), "");
    assert!(fs::read_to_string(&trace).unwrap().contains("trap NonUniformAlloc"));
    // One thread per team allocates uniformly.
    let ok = forge(&["run", b.to_str().unwrap(), "--grid", "2x1"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    assert_eq!(stdout(&ok), "0\n");
}

#[test]
fn parse_errors_are_reported_with_locations() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("bad.mc");
    fs::write(&src, "int main() {\n  return 0\n}\n").unwrap();
    let o = forge(&["compile", src.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    let err = stderr(&o);
    assert!(err.contains("bad.mc:3:1: error:"), "{err}");
    assert!(!dir.path().join("bad.o").exists());

    let o = forge(&["compile", corpus("saxpy.mc").to_str().unwrap(), "--targets", "host"]);
    assert_eq!(code(&o), 1);
    let o = forge(&["run", src.to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).starts_with("error:"), "{}", stderr(&o));
}

#[test]
fn emit_ir_inspect_and_diff() {
    let dir = tempfile::tempdir().unwrap();
    let irs = dir.path().join("ir");
    let out = dir.path().join("saxpy.o");
    let o = forge(&[
        "compile",
        corpus("saxpy.mc").to_str().unwrap(),
        "--targets",
        "nvptx64,vgpu",
        "-o",
        out.to_str().unwrap(),
        "--emit-ir",
        irs.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for name in ["saxpy.host.ir", "saxpy.vgpu.ir", "saxpy.nvptx64.ir"] {
        assert!(irs.join(name).exists(), "{name}");
    }

    let o = forge(&["inspect", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<_> = text.lines().collect();
    let size = fs::metadata(&out).unwrap().len();
    assert_eq!(lines[0], format!("3 entries, {size} bytes"));
    let names: Vec<_> = lines[1..].iter().map(|l| l.split_whitespace().next().unwrap()).collect();
    assert_eq!(names, ["host", "nvptx64", "vgpu"]);
    let host_size: u64 = lines[1].split_whitespace().nth(1).unwrap().parse().unwrap();
    assert_eq!(host_size, fs::metadata(irs.join("saxpy.host.ir")).unwrap().len());

    let vgpu = irs.join("saxpy.vgpu.ir");
    let o = forge(&["diff-ir", vgpu.to_str().unwrap(), vgpu.to_str().unwrap()]);
    assert_eq!((code(&o), stdout(&o).as_str()), (0, "equivalent\n"));

    let text = fs::read_to_string(&vgpu).unwrap();
    let changed = text.replacen(" mul ", " add ", 1);
    assert_ne!(changed, text);
    let other = dir.path().join("changed.ir");
    fs::write(&other, changed).unwrap();
    let o = forge(&["diff-ir", vgpu.to_str().unwrap(), other.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).lines().any(|l| l.starts_with("- ") && l.contains(" mul ")));
    assert!(stdout(&o).lines().any(|l| l.starts_with("+ ") && l.contains(" add ")));

    let nv = irs.join("saxpy.nvptx64.ir");
    assert_eq!(code(&forge(&["diff-ir", vgpu.to_str().unwrap(), nv.to_str().unwrap()])), 1);
    assert_eq!(code(&forge(&["inspect", nv.to_str().unwrap()])), 1);
}

#[test]
fn dump_runtime_and_dump_ast() {
    let o = forge(&["compile", "--dump-runtime", "amdgcn"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rt = stdout(&o);
    assert!(rt.starts_with("target amdgcn"), "{}", &rt[..rt.len().min(80)]);
    assert!(rt.contains("func @__kmpc_barrier"));
    assert_eq!(code(&forge(&["compile"])), 1);

    let o = forge(&["dump-ast", corpus("variant_scale.mc").to_str().unwrap(), "--targets", "nvptx,vgpu"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("// variants on nvptx\n//   scale -> scale$ompvariant$"), "{text}");
    assert!(text.contains("// variants on vgpu\n//   scale -> scale\n"), "{text}");
}

#[test]
fn grid_flag_is_validated() {
    let dir = tempfile::tempdir().unwrap();
    let b = compile_to(dir.path(), &corpus("vector_add.mc"), "vgpu");
    let b = b.to_str().unwrap();
    for bad in ["4", "x4", "2x", "2x-1", "ax3", "0x4", "2x0"] {
        let o = forge(&["run", b, "--grid", bad]);
        assert_eq!(code(&o), 2, "{bad}: clap usage errors exit 2");
        assert!(stderr(&o).contains("--grid"), "{bad}: {}", stderr(&o));
    }
    let o = forge(&["run", b, "--grid", "3X2"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use forge_core::bundler::Bundle;
use forge_core::codegen::{compile_runtime, diff_ir, IrModule};
use forge_core::diag::render_all;
use forge_core::driver::{compile_module, CompileError};
use forge_core::frontend::{parse_module, print_module};
use forge_core::host::{run, RunOptions};
use forge_core::lowering::resolve_all;
use forge_core::target::{Arch, TargetDesc};

#[derive(Parser)]
#[command(name = "forge", version, about = "Portable offload toolchain for .mc programs")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a source file into an offload bundle.
    Compile {
        input: Option<PathBuf>,
        /// Comma-separated device targets, in bundle order.
        #[arg(long, value_delimiter = ',', default_value = "vgpu")]
        targets: Vec<Arch>,
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also write the textual IR of every image into this directory.
        #[arg(long)]
        emit_ir: Option<PathBuf>,
        /// Print the device runtime compiled for this target.
        #[arg(long)]
        dump_runtime: Option<Arch>,
    },
    /// Run a bundle's host program, offloading to a device.
    Run {
        bundle: PathBuf,
        #[arg(long, env = "FORGE_DEFAULT_DEVICE", default_value = "vgpu")]
        device: Arch,
        #[arg(long, default_value_t = 0)]
        sched_seed: u64,
        /// Make every offload attempt fail so the host fallback runs.
        #[arg(long)]
        force_offload_fail: bool,
        #[arg(long)]
        check_uninit: bool,
        /// TEAMSxTHREADS for every target region, e.g. 2x4.
        #[arg(long, value_parser = parse_grid)]
        grid: Option<(u32, u32)>,
        /// Write the device event trace here.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Write the final host memory (main's locals, then globals) here.
        #[arg(long)]
        dump_memory: Option<PathBuf>,
    },
    /// Compare two IR files after normalization; exits 3 if they differ.
    DiffIr { left: PathBuf, right: PathBuf },
    /// List the entries of a bundle.
    Inspect { bundle: PathBuf },
    /// Print the parsed program and each target's variant bindings.
    DumpAst {
        input: PathBuf,
        #[arg(long, value_delimiter = ',')]
        targets: Option<Vec<Arch>>,
    },
}

fn parse_grid(s: &str) -> Result<(u32, u32), String> {
    let (t, n) = s
        .split_once(['x', 'X'])
        .ok_or_else(|| format!("expected TEAMSxTHREADS, got `{s}`"))?;
    let num = |v: &str| match v.trim().parse::<u32>() {
        Ok(0) => Err("grid dimensions must be at least 1".to_string()),
        Ok(n) => Ok(n),
        Err(e) => Err(format!("`{v}`: {e}")),
    };
    Ok((num(t)?, num(n)?))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn parse_source(path: &Path) -> Result<forge_core::frontend::ast::SourceModule, ExitCode> {
    let text = read_text(path).map_err(report)?;
    parse_module(&text).map_err(|diags| {
        eprint!("{}", render_all(&diags, &path.display().to_string()));
        ExitCode::from(1)
    })
}

fn report(e: anyhow::Error) -> ExitCode {
    eprintln!("error: {e:#}");
    ExitCode::from(1)
}

fn compile(
    input: Option<PathBuf>,
    targets: Vec<Arch>,
    output: Option<PathBuf>,
    emit_ir: Option<PathBuf>,
    dump_runtime: Option<Arch>,
) -> Result<ExitCode, ExitCode> {
    if let Some(arch) = dump_runtime {
        let rt = compile_runtime(&TargetDesc::new(arch))
            .map_err(|e| report(anyhow::Error::new(e).context("runtime")))?;
        print!("{}", rt.to_text());
    }
    let Some(input) = input else {
        if dump_runtime.is_some() {
            return Ok(ExitCode::SUCCESS);
        }
        return Err(report(anyhow::anyhow!("no input file")));
    };
    let module = parse_source(&input)?;
    let compiled = compile_module(&module, &targets).map_err(|e| {
        match e {
            CompileError::Parse(d) => eprint!("{}", render_all(&d, &input.display().to_string())),
            other => eprintln!("{}: error: {other}", input.display()),
        }
        ExitCode::from(1)
    })?;
    let output = output.unwrap_or_else(|| input.with_extension("o"));
    fs::write(&output, compiled.to_bytes())
        .with_context(|| format!("cannot write {}", output.display()))
        .map_err(report)?;
    if let Some(dir) = emit_ir {
        let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        fs::create_dir_all(&dir)
            .with_context(|| format!("cannot create {}", dir.display()))
            .map_err(report)?;
        let mut files = vec![(format!("{stem}.host.ir"), compiled.host.to_text())];
        for (arch, m) in &compiled.images {
            files.push((format!("{stem}.{arch}.ir"), m.to_text()));
        }
        for (name, text) in files {
            let p = dir.join(name);
            fs::write(&p, text)
                .with_context(|| format!("cannot write {}", p.display()))
                .map_err(report)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn run_cmd(
    bundle: PathBuf,
    opts: RunOptions,
    trace: Option<PathBuf>,
    dump_memory: Option<PathBuf>,
) -> Result<ExitCode> {
    let bytes = fs::read(&bundle).with_context(|| format!("cannot read {}", bundle.display()))?;
    let b = Bundle::from_bytes(&bytes).with_context(|| bundle.display().to_string())?;
    let out = run(&b, &opts)?;
    print!("{}", out.stdout);
    if let Some(path) = trace {
        fs::write(&path, out.trace_text()).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(path) = dump_memory {
        fs::write(&path, &out.host_memory).with_context(|| format!("cannot write {}", path.display()))?;
    }
    if let Some(t) = out.trap {
        let site = if out.device_trap { "device" } else { "host" };
        eprintln!("{site} trap: {t}");
    }
    Ok(ExitCode::from(out.exit_status as u8))
}

fn diff_cmd(left: PathBuf, right: PathBuf) -> Result<ExitCode> {
    let parse = |p: &Path| -> Result<IrModule> {
        IrModule::parse(&read_text(p)?).with_context(|| p.display().to_string())
    };
    let report = diff_ir(&parse(&left)?, &parse(&right)?)?;
    if report.semantically_equal {
        println!("equivalent");
        return Ok(ExitCode::SUCCESS);
    }
    for d in &report.differences {
        println!("{}:", d.location);
        for l in d.left.lines() {
            println!("- {l}");
        }
        for l in d.right.lines() {
            println!("+ {l}");
        }
    }
    Ok(ExitCode::from(3))
}

fn inspect_cmd(path: PathBuf) -> Result<ExitCode> {
    let bytes = fs::read(&path).with_context(|| format!("cannot read {}", path.display()))?;
    let b = Bundle::from_bytes(&bytes).with_context(|| path.display().to_string())?;
    println!("{} entries, {} bytes", b.entries.len(), bytes.len());
    for (name, payload) in &b.entries {
        println!("{name:<10} {:>10}", payload.len());
    }
    Ok(ExitCode::SUCCESS)
}

fn dump_ast(input: PathBuf, targets: Option<Vec<Arch>>) -> Result<ExitCode, ExitCode> {
    let module = parse_source(&input)?;
    print!("{}", print_module(&module));
    for arch in targets.unwrap_or_else(|| Arch::ALL.to_vec()) {
        println!("\n// variants on {arch}");
        match resolve_all(&module, &TargetDesc::new(arch)) {
            Ok(r) if r.is_empty() => println!("//   (no variant functions)"),
            Ok(r) => r.iter().for_each(|(base, sym)| println!("//   {base} -> {sym}")),
            Err(e) => {
                eprintln!("{}: error: {e}", input.display());
                return Err(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Compile {
            input,
            targets,
            output,
            emit_ir,
            dump_runtime,
        } => compile(input, targets, output, emit_ir, dump_runtime),
        Cmd::Run {
            bundle,
            device,
            sched_seed,
            force_offload_fail,
            check_uninit,
            grid,
            trace,
            dump_memory,
        } => {
            let opts = RunOptions {
                device,
                grid,
                force_offload_fail,
                sched_seed,
                check_uninit,
                ..RunOptions::default()
            };
            run_cmd(bundle, opts, trace, dump_memory).map_err(report)
        }
        Cmd::DiffIr { left, right } => diff_cmd(left, right).map_err(report),
        Cmd::Inspect { bundle } => inspect_cmd(bundle).map_err(report),
        Cmd::DumpAst { input, targets } => dump_ast(input, targets),
    };
    r.unwrap_or_else(|code| code)
}


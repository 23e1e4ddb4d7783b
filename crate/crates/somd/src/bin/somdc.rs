//! Command-line driver: check, inspect, run and bench.

use clap::{Parser, Subcommand};
use somd::backend::{
    entry_candidates, parse_rules, run_method, select_backend, synthesize_args, Backend, RunConfig,
};
use somd::bench::bench;
use somd::corpus;
use somd::device_sim::ExecConfigGpu;
use somd::diag;
use somd::partition::StrategyRegistry;
use somd::plan_gpu::{dump_gpu_plan, lower_gpu};
use somd::plan_sm::{dump_plan, lower_master_sm};
use somd::runtime_sm::ExecConfigSM;
use somd::validate::{validate, ValidatedProgram};
use somd::value::checksum;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

#[derive(Parser)]
#[command(name = "somdc", about = "Compiler and runtimes for the annotated data-parallel language", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a source file.
    Check {
        file: PathBuf,
        /// Emit diagnostics as JSON.
        #[arg(long)]
        diag_json: bool,
    },
    /// Show lowered plans without running them.
    Inspect {
        file: PathBuf,
        /// Print the shared-memory master/slave plan.
        #[arg(long)]
        emit_plan: bool,
        /// Print the kernel sequence, grid and transfer schedule.
        #[arg(long)]
        emit_kernels: bool,
        /// Method to lower (defaults to the first distributed method).
        #[arg(long)]
        entry: Option<String>,
        #[arg(long, default_value_t = 4)]
        slaves: usize,
    },
    /// Execute a source file with synthesized inputs.
    Run {
        file: PathBuf,
        /// seq | sm | gpu-sim (rules file consulted when omitted).
        #[arg(long)]
        backend: Option<String>,
        /// Backend-selection rules file (`Qualifier.method:target` lines).
        #[arg(long)]
        rules: Option<PathBuf>,
        #[arg(long)]
        entry: Option<String>,
        /// Synthesized array length.
        #[arg(long, default_value_t = 64)]
        size: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Worker threads in the pool.
        #[arg(long)]
        workers: Option<usize>,
        /// Method instances to spawn.
        #[arg(long)]
        slaves: Option<usize>,
        #[arg(long)]
        stress_seed: Option<u64>,
        #[arg(long, default_value_t = 256)]
        gpu_max_group: usize,
        #[arg(long, default_value_t = 0)]
        gpu_seed: u64,
        #[arg(long)]
        gpu_strict_hazards: bool,
        /// Round device doubles through single precision.
        #[arg(long)]
        force_f32: bool,
        /// Dump the device transfer ledger as JSON after the run.
        #[arg(long)]
        ledger_json: bool,
    },
    /// Run a named corpus benchmark and report timings.
    Bench {
        name: String,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long, default_value_t = 10)]
        reps: usize,
        #[arg(long)]
        backend: Option<String>,
        #[arg(long)]
        slaves: Option<usize>,
        #[arg(long)]
        workers: Option<usize>,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Write the report as JSON to this path.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::FAILURE
        }
    }
}

fn load(file: &PathBuf, diag_json: bool) -> Result<ValidatedProgram, String> {
    let source = std::fs::read_to_string(file)
        .map_err(|e| format!("cannot read {}: {e}", file.display()))?;
    let registry = StrategyRegistry::with_builtins();
    let parsed = match somd::parser::parse(&source) {
        Ok(p) => p,
        Err(diags) => return Err(render_diags(&diags, diag_json)),
    };
    match validate(parsed, &registry) {
        Ok(vp) => {
            for w in &vp.warnings {
                eprintln!("{w}");
            }
            Ok(vp)
        }
        Err(diags) => Err(render_diags(&diags, diag_json)),
    }
}

fn render_diags(diags: &[diag::Diagnostic], as_json: bool) -> String {
    if as_json {
        diag::to_json(diags)
    } else {
        diags.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("\n")
    }
}

fn pick_entry(vp: &ValidatedProgram, requested: Option<&str>, want_somd: bool) -> Result<String, String> {
    if let Some(name) = requested {
        if vp.method_index(name).is_none() {
            return Err(format!("no method named `{name}`"));
        }
        return Ok(name.to_string());
    }
    if want_somd {
        if let Some(m) = vp.methods.iter().find(|m| m.is_somd()) {
            return Ok(m.name.clone());
        }
    }
    entry_candidates(vp)
        .into_iter()
        .next()
        .ok_or_else(|| "no entry method found".to_string())
}

fn dispatch(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::Check { file, diag_json } => {
            let vp = load(&file, diag_json)?;
            println!(
                "ok: {} method(s), {} distributed",
                vp.program.methods.len(),
                vp.methods.iter().filter(|m| m.is_somd()).count()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Inspect { file, emit_plan, emit_kernels, entry, slaves } => {
            let vp = load(&file, false)?;
            let entry = pick_entry(&vp, entry.as_deref(), true)?;
            if !emit_plan && !emit_kernels {
                return Err("pass --emit-plan and/or --emit-kernels".to_string());
            }
            if emit_plan {
                let plan = lower_master_sm(&vp, &entry, slaves).map_err(|e| e.to_string())?;
                print!("{}", dump_plan(&vp, &plan));
            }
            if emit_kernels {
                match lower_gpu(&vp, &entry) {
                    Ok(plan) => {
                        for w in &plan.warnings {
                            eprintln!("{w}");
                        }
                        print!("{}", dump_gpu_plan(&plan));
                    }
                    Err(e) => eprintln!("gpu lowering: {e}"),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            file,
            backend,
            rules,
            entry,
            size,
            seed,
            workers,
            slaves,
            stress_seed,
            gpu_max_group,
            gpu_seed,
            gpu_strict_hazards,
            force_f32,
            ledger_json,
        } => {
            let vp = load(&file, false)?;
            let entry = pick_entry(&vp, entry.as_deref(), false)?;
            let selected = match backend.as_deref() {
                Some(name) => Backend::parse(name).ok_or_else(|| format!("unknown backend `{name}`"))?,
                None => {
                    let parsed_rules = match &rules {
                        Some(path) => {
                            let text = std::fs::read_to_string(path)
                                .map_err(|e| format!("cannot read rules: {e}"))?;
                            parse_rules(&text).map_err(|e| e.to_string())?
                        }
                        None => Vec::new(),
                    };
                    let available = [Backend::Seq, Backend::Sm, Backend::GpuSim];
                    let (b, warn) = select_backend(&parsed_rules, &entry, &available);
                    if let Some(w) = warn {
                        eprintln!("warning: {w}");
                    }
                    b
                }
            };
            let pool = workers
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
            let cfg = RunConfig {
                backend: selected,
                n_slaves: slaves.unwrap_or(pool),
                sm: ExecConfigSM {
                    pool_size: pool,
                    watchdog: Some(Duration::from_secs(30)),
                    stress_seed,
                },
                gpu: ExecConfigGpu {
                    max_group_size: gpu_max_group,
                    seed: gpu_seed,
                    strict_hazards: gpu_strict_hazards,
                    force_f32,
                },
            };
            let registry = StrategyRegistry::with_builtins();
            let decl = vp.decl(&entry).expect("entry exists");
            let params: Vec<(String, somd::ast::Type)> =
                decl.params.iter().map(|p| (p.name.clone(), p.ty)).collect();
            let args = synthesize_args(&params, size, seed);
            let out = run_method(&vp, &registry, &entry, &args, &cfg).map_err(|e| e.to_string())?;
            println!("backend:  {}", selected.name());
            println!("entry:    {entry}");
            println!("checksum: {:016x}", checksum(&out.value));
            println!("result:   {}", summarize(&out.value));
            if let Some(device) = &out.device {
                println!(
                    "device:   {} launch(es), {} transfer(s), {} hazard record(s)",
                    device.launches.len(),
                    device.ledger.records.len(),
                    device.hazards.len()
                );
                if ledger_json {
                    println!("{}", device.ledger.to_json());
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Bench { name, size, reps, backend, slaves, workers, seed, json } => {
            let program = corpus::find(&name)
                .ok_or_else(|| format!("unknown benchmark `{name}` (try one of: {})", names()))?;
            let selected = match backend.as_deref() {
                Some(b) => Backend::parse(b).ok_or_else(|| format!("unknown backend `{b}`"))?,
                None => Backend::Sm,
            };
            if selected == Backend::GpuSim && !program.gpu_eligible {
                return Err(format!("`{name}` is not eligible for the device simulator"));
            }
            let pool = workers
                .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
            let cfg = RunConfig {
                backend: selected,
                n_slaves: slaves.unwrap_or(pool),
                sm: ExecConfigSM { pool_size: pool, watchdog: None, stress_seed: None },
                gpu: ExecConfigGpu::default(),
            };
            let size = size.unwrap_or(program.desk_size);
            let report = bench(program, &cfg, size, reps, seed).map_err(|e| e.to_string())?;
            println!(
                "{}: backend={} slaves={} size={} reps={} middle-tier-mean={:.6}s median={:.6}s checksum={}",
                report.program,
                report.backend,
                report.n_slaves,
                report.size,
                report.repetitions,
                report.middle_tier_mean_s,
                report.median_s,
                report.output_checksum
            );
            if let Some(path) = json {
                std::fs::write(&path, report.to_json())
                    .map_err(|e| format!("cannot write {}: {e}", path.display()))?;
                println!("report written to {}", path.display());
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn names() -> String {
    corpus::PROGRAMS.iter().map(|p| p.name).collect::<Vec<_>>().join(", ")
}

fn summarize(v: &somd::Value) -> String {
    match v {
        somd::Value::Scalar(s) => format!("{s:?}"),
        somd::Value::Array(a) => {
            let head: Vec<String> =
                (0..a.flat_len().min(8)).map(|i| format!("{:?}", a.cells.get(i))).collect();
            format!(
                "{}[{}{}] = [{}{}]",
                a.elem_type().keyword(),
                a.dims[0],
                if a.ndim == 2 { format!(" x {}", a.dims[1]) } else { String::new() },
                head.join(", "),
                if a.flat_len() > 8 { ", ..." } else { "" }
            )
        }
        other => other.type_name(),
    }
}

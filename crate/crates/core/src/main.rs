use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use elastic_hls::bench::run_bench;
use elastic_hls::corpus::{bundled_dir, load_dir};
use elastic_hls::disambig::DisambigOptions;
use elastic_hls::frontend::{parse, KernelAst};
use elastic_hls::ir::dot::{netlist_to_dot, rvsdg_to_dot};
use elastic_hls::ir::json::{netlist_to_json, rvsdg_to_json};
use elastic_hls::pipeline::{
    compile, compile_with, fingerprint, CompileError, Compiled, PipelineConfig, Stage,
};
use elastic_hls::sidecar::InputSpec;
use elastic_hls::sim::{simulate, KernelInputs, SimConfig, DEFAULT_MAX_CYCLES};
use elastic_hls::verify::fuzz::{campaign_configs, run_campaign, write_repro, ShapeLimits};
use elastic_hls::verify::{check_kernel, interpret};

/// Dynamic HLS of small kernels into elastic dataflow circuits.
#[derive(Parser)]
#[command(name = "ehls", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile a kernel and write its netlist (or an intermediate graph).
    Build {
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = Emit::Json)]
        emit: Emit,
        /// Stop after this stage and write its graph instead of the netlist.
        #[arg(long)]
        stop_after: Option<Stage>,
        #[arg(long, short = 'o', default_value = ".")]
        out_dir: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Simulate a kernel and report cycles, return value and statistics.
    Run {
        input: PathBuf,
        #[command(flatten)]
        io: InputArgs,
        /// Write the memory trace as JSON lines.
        #[arg(long)]
        dump_trace: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Compare the simulated circuit against the reference interpreter.
    Check {
        input: PathBuf,
        #[command(flatten)]
        io: InputArgs,
        /// Check all four buffer and ADDR-Q configurations.
        #[arg(long)]
        matrix: bool,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Check random kernels without buffers, without ADDR-Qs, and in full.
    Fuzz {
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        count: u64,
        #[arg(long, default_value_t = 2)]
        max_depth: u32,
        #[arg(long, default_value_t = 3)]
        max_arrays: u32,
        #[arg(long, default_value_t = 8)]
        max_trip: u32,
        /// Directory for repro files of failing kernels.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Cycle counts of a corpus with and without address disambiguation.
    Bench {
        /// Directory of `.rk` kernels with `.json` sidecars; defaults to the
        /// bundled corpus.
        dir: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[command(flatten)]
        sim: SimArgs,
    },
    /// Render a stage as Graphviz DOT.
    Viz {
        input: PathBuf,
        #[arg(long, default_value = "flatten")]
        stage: Stage,
        #[arg(long, short = 'o')]
        out: Option<PathBuf>,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Emit {
    Json,
    Dot,
    Both,
}

#[derive(Args)]
struct PipelineArgs {
    /// Disable address disambiguation (the NoQ configuration).
    #[arg(long)]
    no_addrq: bool,
    /// Place no buffers beyond the ones loops need.
    #[arg(long)]
    no_buffers: bool,
    #[arg(long, conflicts_with = "no_addrq")]
    addrq_capacity: Option<u32>,
    /// Depth of the FIFOs on data fork outputs.
    #[arg(long, conflicts_with = "no_buffers")]
    fifo_depth: Option<u32>,
    /// Depth of the FIFOs on control fork outputs.
    #[arg(long, conflicts_with = "no_buffers")]
    ctl_fifo_depth: Option<u32>,
    /// Keep loop back-edge buffers that trace to a memory operation.
    #[arg(long, conflicts_with = "no_buffers")]
    keep_back_edges: bool,
}

impl PipelineArgs {
    fn config(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = PipelineConfig::full();
        if self.no_addrq {
            cfg.disambig = None;
        }
        if let (Some(opts), Some(cap)) = (&mut cfg.disambig, self.addrq_capacity) {
            *opts = DisambigOptions {
                capacity: cap,
                ..*opts
            };
        }
        if self.no_buffers {
            cfg.buffers = None;
        }
        if let Some(policy) = &mut cfg.buffers {
            for (depth, field) in [
                (self.fifo_depth, &mut policy.fork_fifo_depth),
                (self.ctl_fifo_depth, &mut policy.ctl_fork_fifo_depth),
            ] {
                if let Some(d) = depth {
                    if d == 0 {
                        return Err(Failure::usage("FIFO depths must be at least 1"));
                    }
                    *field = d;
                }
            }
            policy.remove_traced_back_edges = !self.keep_back_edges;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct InputArgs {
    /// Input sidecar JSON; defaults to the kernel path with a `.json`
    /// extension when that file exists.
    #[arg(long)]
    inputs: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Cycles from a read grant to its response.
    #[arg(long, default_value_t = 1)]
    mem_latency: u32,
    #[arg(long, default_value_t = DEFAULT_MAX_CYCLES)]
    max_cycles: u64,
}

impl SimArgs {
    fn config(&self) -> Result<SimConfig, Failure> {
        if self.mem_latency == 0 || self.max_cycles == 0 {
            return Err(Failure::usage(
                "--mem-latency and --max-cycles must be positive",
            ));
        }
        Ok(SimConfig {
            max_cycles: self.max_cycles,
            mem_latency: self.mem_latency,
        })
    }
}

/// An error message with its exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: 1,
            message: message.into(),
        }
    }

    fn io(path: &Path, e: io::Error) -> Self {
        Failure::usage(format!("{}: {e}", path.display()))
    }

    fn compile(path: &Path, e: CompileError) -> Self {
        let code = if e.is_input_error() || matches!(e, CompileError::Disambig(_)) {
            1
        } else {
            2
        };
        Failure {
            code,
            message: format!("{}:{e}", path.display()),
        }
    }
}

const EXIT_SIM: u8 = 3;
const EXIT_MISMATCH: u8 = 4;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli.cmd) {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<u8, Failure> {
    match cmd {
        Cmd::Build {
            input,
            emit,
            stop_after,
            out_dir,
            pipeline,
        } => cmd_build(&input, emit, stop_after, &out_dir, &pipeline.config()?),
        Cmd::Run {
            input,
            io,
            dump_trace,
            pipeline,
            sim,
        } => cmd_run(
            &input,
            &io,
            dump_trace.as_deref(),
            &pipeline.config()?,
            sim.config()?,
        ),
        Cmd::Check {
            input,
            io,
            matrix,
            pipeline,
            sim,
        } => {
            let configs = if matrix {
                PipelineConfig::matrix()
                    .map(|(n, c)| (n.to_string(), c))
                    .to_vec()
            } else {
                vec![("selected".to_string(), pipeline.config()?)]
            };
            cmd_check(&input, &io, &configs, sim.config()?)
        }
        Cmd::Fuzz {
            seed,
            count,
            max_depth,
            max_arrays,
            max_trip,
            out,
            sim,
        } => {
            let limits = ShapeLimits {
                max_depth: max_depth.min(2),
                max_arrays: max_arrays.clamp(1, 3),
                max_trip: max_trip.max(1),
                ..ShapeLimits::default()
            };
            cmd_fuzz(seed, count, &limits, out.as_deref(), sim.config()?)
        }
        Cmd::Bench {
            dir,
            csv,
            pipeline,
            sim,
        } => cmd_bench(dir, csv.as_deref(), &pipeline, sim.config()?),
        Cmd::Viz {
            input,
            stage,
            out,
            pipeline,
        } => cmd_viz(&input, stage, out.as_deref(), &pipeline.config()?),
    }
}

fn load_ast(path: &Path) -> Result<KernelAst, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::io(path, e))?;
    parse(&text).map_err(|e| Failure::usage(format!("{}:{e}", path.display())))
}

fn load_inputs(kernel: &Path, args: &InputArgs, ast: &KernelAst) -> Result<KernelInputs, Failure> {
    let path = match &args.inputs {
        Some(p) => Some(p.clone()),
        None => Some(kernel.with_extension("json")).filter(|p| p.exists()),
    };
    let spec = match path {
        Some(p) => {
            let text = fs::read_to_string(&p).map_err(|e| Failure::io(&p, e))?;
            InputSpec::from_json(&text)
                .map_err(|e| Failure::usage(format!("{}: {e}", p.display())))?
        }
        None => InputSpec::default(),
    };
    spec.resolve(ast).map_err(|e| Failure::usage(e.to_string()))
}

fn compile_to(
    path: &Path,
    ast: &KernelAst,
    cfg: &PipelineConfig,
    stop: Stage,
) -> Result<Compiled, Failure> {
    compile_with(ast, cfg, stop, &mut |_, _, _| {}).map_err(|e| Failure::compile(path, e))
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned()
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::io(path, e))?;
    eprintln!("wrote {}", path.display());
    Ok(())
}

fn cmd_build(
    input: &Path,
    emit: Emit,
    stop: Option<Stage>,
    out_dir: &Path,
    cfg: &PipelineConfig,
) -> Result<u8, Failure> {
    let ast = load_ast(input)?;
    let stage = stop.unwrap_or(Stage::Flatten);
    let compiled = compile_to(input, &ast, cfg, stage)?;
    fs::create_dir_all(out_dir).map_err(|e| Failure::io(out_dir, e))?;
    let label = if stage == Stage::Flatten {
        "netlist"
    } else {
        stage.name()
    };
    let base = out_dir.join(format!("{}.{label}", stem(input)));
    let (json, dot) = match (&compiled.netlist, stage.is_netlist()) {
        (Some(net), true) => (netlist_to_json(net), netlist_to_dot(net)),
        _ => (
            rvsdg_to_json(&compiled.graph),
            rvsdg_to_dot(&compiled.graph),
        ),
    };
    if emit != Emit::Dot {
        let text = serde_json::to_string_pretty(&json).expect("graphs serialize");
        write_file(&base.with_extension(format!("{label}.json")), &text)?;
    }
    if emit != Emit::Json {
        write_file(&base.with_extension(format!("{label}.dot")), &dot)?;
    }
    Ok(0)
}

fn cmd_run(
    input: &Path,
    io_args: &InputArgs,
    dump_trace: Option<&Path>,
    cfg: &PipelineConfig,
    sim: SimConfig,
) -> Result<u8, Failure> {
    let ast = load_ast(input)?;
    let inputs = load_inputs(input, io_args, &ast)?;
    let compiled = compile(&ast, cfg).map_err(|e| Failure::compile(input, e))?;
    let result = simulate(compiled.netlist(), &inputs, sim).map_err(|e| Failure {
        code: EXIT_SIM,
        message: format!("{}: {e}", input.display()),
    })?;
    if let Some(path) = dump_trace {
        let file = fs::File::create(path).map_err(|e| Failure::io(path, e))?;
        result
            .trace
            .write_json_lines(io::BufWriter::new(file))
            .map_err(|e| Failure::io(path, e))?;
    }
    let stats = json!({
        "config": fingerprint(cfg, &sim),
        "cycles": result.stats.cycles,
        "census": result.stats.census,
        "buffer_slots": result.stats.buffer_slots,
        "peak_occupancy": result.stats.peak_occupancy,
        "transfers": result.stats.transfers,
    });
    let mut out = io::stdout().lock();
    let ret = result.ret.map_or("none".to_string(), |v| v.to_string());
    let _ = writeln!(out, "cycles {}\nreturn {ret}\nstats {stats}", result.cycles);
    Ok(0)
}

fn cmd_check(
    input: &Path,
    io_args: &InputArgs,
    configs: &[(String, PipelineConfig)],
    sim: SimConfig,
) -> Result<u8, Failure> {
    let ast = load_ast(input)?;
    let inputs = load_inputs(input, io_args, &ast)?;
    if let Err(e) = elastic_hls::frontend::build_rvsdg(&ast) {
        return Err(Failure::usage(format!("{}:{e}", input.display())));
    }
    let mut code = 0;
    for (name, cfg) in configs {
        compile(&ast, cfg).map_err(|e| Failure::compile(input, e))?;
        let v = check_kernel(&ast, &inputs, cfg, sim);
        if !v.pass {
            code = EXIT_MISMATCH;
        }
        let line = json!({
            "kernel": ast.name,
            "config": name,
            "fingerprint": fingerprint(cfg, &sim),
            "pass": v.pass,
            "cycles": v.cycles,
            "detail": v.detail,
        });
        println!("{line}");
    }
    if code == 0 && interpret(&ast, &inputs).is_err() {
        eprintln!("note: the reference run traps; both sides trapped alike");
    }
    Ok(code)
}

fn cmd_fuzz(
    seed: u64,
    count: u64,
    limits: &ShapeLimits,
    out: Option<&Path>,
    sim: SimConfig,
) -> Result<u8, Failure> {
    let configs = campaign_configs();
    let mut failures = 0u64;
    let mut repro_error = None;
    let mut stdout = io::stdout().lock();
    run_campaign(seed, count, limits, &configs, sim, |case, verdicts| {
        for v in verdicts {
            let _ = writeln!(
                stdout,
                "{}",
                serde_json::to_string(v).expect("verdicts serialize")
            );
        }
        if verdicts.iter().any(|v| !v.pass) {
            failures += 1;
            if let Some(dir) = out {
                match write_repro(dir, case) {
                    Ok(p) => eprintln!("repro written to {}", p.display()),
                    Err(e) => repro_error = Some(Failure::io(dir, e)),
                }
            }
        }
        repro_error.is_none()
    });
    if let Some(f) = repro_error {
        return Err(f);
    }
    eprintln!("{count} kernels, {failures} failing (seed {seed})");
    Ok(if failures > 0 { EXIT_MISMATCH } else { 0 })
}

fn cmd_bench(
    dir: Option<PathBuf>,
    csv: Option<&Path>,
    pipeline: &PipelineArgs,
    sim: SimConfig,
) -> Result<u8, Failure> {
    if pipeline.no_addrq {
        return Err(Failure::usage(
            "bench always compares with and without ADDR-Qs; drop --no-addrq",
        ));
    }
    let dir = dir.unwrap_or_else(bundled_dir);
    let full = pipeline.config()?;
    let noq = PipelineConfig {
        disambig: None,
        ..full
    };
    let entries = load_dir(&dir).map_err(|e| Failure::io(&dir, e))?;
    let table = run_bench(entries, &noq, &full, sim);
    let text = table.to_csv();
    match csv {
        Some(path) => write_file(path, &text)?,
        None => print!("{text}"),
    }
    let failed = table.rows.iter().filter(|r| r.result.is_err()).count();
    eprintln!(
        "{} kernels, {failed} failed, config {}",
        table.rows.len(),
        fingerprint(&full, &sim)
    );
    Ok(0)
}

fn cmd_viz(
    input: &Path,
    stage: Stage,
    out: Option<&Path>,
    cfg: &PipelineConfig,
) -> Result<u8, Failure> {
    let ast = load_ast(input)?;
    let compiled = compile_to(input, &ast, cfg, stage)?;
    let dot = match (&compiled.netlist, stage.is_netlist()) {
        (Some(net), true) => netlist_to_dot(net),
        _ => rvsdg_to_dot(&compiled.graph),
    };
    match out {
        Some(path) => write_file(path, &dot)?,
        None => print!("{dot}"),
    }
    Ok(0)
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};
use mcnoc::engine::prepare;
use mcnoc::experiment::{
    load_spec, report_row, rows_to_csv, run_experiment, run_single, validate_spec, ExperimentError, Overrides,
    SpecFile,
};
use mcnoc::traffic::{format_trace, synthetic_memory_heavy};
use mcnoc::{Fabric, RoutingMode};

#[derive(Parser)]
#[command(name = "mcnoc", version, about = "Flit-level simulator for multichip 2.5D packages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration, or every cell of an [experiment].
    Run(Common),
    /// Check a spec file without running it.
    Validate(Common),
    /// Print the forwarding tables of the configured system.
    DumpTables(Common),
    /// Write a synthetic memory-heavy single-chip trace.
    GenTrace(GenTrace),
}

#[derive(Args)]
struct GenTrace {
    /// Output trace file.
    out: PathBuf,
    #[arg(long, default_value_t = 16)]
    cores: usize,
    /// Memory channels addressable from the chip.
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 10_000)]
    cycles: u64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

#[derive(Args)]
struct Common {
    /// Spec file (TOML). Optional when --arch and --fabric are given.
    spec: Option<PathBuf>,
    /// Architecture, e.g. 4C4M or 4C4M:wireless.
    #[arg(long)]
    arch: Option<String>,
    #[arg(long, value_parser = parse_fabric)]
    fabric: Option<Fabric>,
    /// Offered load in flits/core/cycle. Replaces all loads of an experiment.
    #[arg(long)]
    load: Option<f64>,
    /// Fraction of core traffic addressed to memory.
    #[arg(long)]
    pmem: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory. Without it results go to stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// single-tree or all-pairs.
    #[arg(long, value_parser = parse_mode)]
    mode: Option<RoutingMode>,
}

fn parse_fabric(s: &str) -> Result<Fabric, String> {
    s.parse().map_err(|e: mcnoc::config::ConfigError| e.to_string())
}

fn parse_mode(s: &str) -> Result<RoutingMode, String> {
    s.parse().map_err(|e: mcnoc::routing::RoutingError| e.to_string())
}

/// Exit codes: 1 for bad input, 2 for a failed simulation.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        if e.is_runtime() {
            Failure::Runtime(e.into())
        } else {
            Failure::Config(e.into())
        }
    }
}

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn runtime_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn load(c: &Common) -> Result<SpecFile, Failure> {
    let mut spec = match &c.spec {
        Some(p) => load_spec(p).map_err(config_err)?,
        None if c.arch.is_some() => SpecFile::default(),
        None => return Err(config_err(anyhow::anyhow!("no spec file given (and no --arch)"))),
    };
    spec.apply(&Overrides {
        arch: c.arch.clone(),
        fabric: c.fabric,
        load: c.load,
        p_mem: c.pmem,
        seed: c.seed,
        mode: c.mode,
    });
    Ok(spec)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<(), Failure> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, contents).with_context(|| format!("writing {}", tmp.display())).map_err(runtime_err)?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display())).map_err(runtime_err)
}

fn cmd_run(c: &Common) -> Result<(), Failure> {
    let spec = load(c)?;
    if let Some(out) = &c.out {
        fs::create_dir_all(out).with_context(|| format!("creating {}", out.display())).map_err(runtime_err)?;
    }
    if spec.experiment.is_some() {
        let result = run_experiment(&spec, c.out.as_deref())?;
        match &c.out {
            Some(out) => eprintln!("{} cells written to {}", result.cells.len(), out.join("results.csv").display()),
            None => print!("{}", result.to_csv()?),
        }
        return Ok(());
    }
    let report = run_single(&spec)?;
    let (_, fabric) = spec.single_arch().map_err(|d| config_err(anyhow::anyhow!("{d}")))?;
    let json = serde_json::to_string_pretty(&report).map_err(runtime_err)?;
    match &c.out {
        Some(out) => {
            let row = report_row(&report, fabric, spec.routing.mode, spec.traffic.trace_path.as_deref());
            write_file(&out.join("report.json"), json.as_bytes())?;
            write_file(&out.join("report.csv"), rows_to_csv(&[row])?.as_bytes())?;
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_validate(c: &Common) -> Result<(), Failure> {
    let spec = load(c)?;
    let diags = validate_spec(&spec);
    if diags.is_empty() {
        println!("ok");
        return Ok(());
    }
    for d in &diags {
        println!("{d}");
    }
    Err(config_err(anyhow::anyhow!("{} problem(s) found", diags.len())))
}

fn cmd_dump_tables(c: &Common) -> Result<(), Failure> {
    let spec = load(c)?;
    let (arch, fabric) = spec.single_arch().map_err(|d| config_err(anyhow::anyhow!("{d}")))?;
    let cfg = spec.system_config(&arch, fabric, spec.traffic.seed).map_err(config_err)?;
    let (topo, table) = prepare(&cfg, &spec.routing).map_err(config_err)?;
    let text = table.dump(&topo);
    match &c.out {
        Some(out) => {
            fs::create_dir_all(out).map_err(runtime_err)?;
            write_file(&out.join("tables.txt"), text.as_bytes())
        }
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_gen_trace(g: &GenTrace) -> Result<(), Failure> {
    if g.cores < 2 || g.channels == 0 {
        return Err(config_err(anyhow::anyhow!("need at least 2 cores and 1 channel")));
    }
    let records = synthetic_memory_heavy(g.cores, g.channels, g.cycles, g.seed);
    let header = format!(
        "synthetic memory-heavy trace: {} cores, {} memory channels, {} cycles, seed {}\n\
         cycle,src,dst,flits; ids >= {} are memory channels",
        g.cores, g.channels, g.cycles, g.seed, g.cores
    );
    write_file(&g.out, format_trace(&records, &header).as_bytes())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Run(c) => cmd_run(c),
        Command::Validate(c) => cmd_validate(c),
        Command::DumpTables(c) => cmd_dump_tables(c),
        Command::GenTrace(g) => cmd_gen_trace(g),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

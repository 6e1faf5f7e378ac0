//! Command-line front end: run scenarios, validate configs, list hardware
//! presets, and sweep a config parameter over a value list.
//!
//! Exit codes: 0 success, 2 configuration/validation error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use qnetsim::channels::JitterMode;
use qnetsim::error::Error;
use qnetsim::scenario::{
    builtin_examples, emit_report, hardware_preset, metrics_csv, override_config, parse_scenario,
    run_scenario, summary_json, ReportFormat, Scenario, PRESET_NAMES,
};

#[derive(Parser)]
#[command(name = "qnetsim", version, about = "Quantum network simulator and control-plane toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Structured,
    Both,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => ReportFormat::Csv,
            FormatArg::Structured => ReportFormat::Structured,
            FormatArg::Both => ReportFormat::Both,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum JitterArg {
    Smooth,
    Hard,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config file (JSON); builtin example names also work
    #[arg(long)]
    config: String,
    /// Override the scenario's root seed
    #[arg(long)]
    seed: Option<u64>,
    /// Override the scenario's replication count
    #[arg(long)]
    replications: Option<u32>,
    /// Output directory for reports; stdout summary only if omitted
    #[arg(long)]
    out: Option<PathBuf>,
    /// Which artifacts to write
    #[arg(long, value_enum, default_value = "both")]
    format: FormatArg,
    /// Bypass classical-latency realism in the controller (idealized A/B
    /// baseline)
    #[arg(long)]
    oracle_controller: bool,
    /// Timing-jitter penalty model for swap success
    #[arg(long, value_enum)]
    jitter_mode: Option<JitterArg>,
}

#[derive(Subcommand)]
enum Command {
    /// Execute a scenario and write reports
    Run(RunArgs),
    /// Parse and validate a config without running it
    Validate {
        #[arg(long)]
        config: String,
    },
    /// List hardware presets and builtin example scenarios
    Presets,
    /// Run a scenario once per value of a swept config field
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// Dotted path of the field to sweep, e.g. topology.links.ab.length_km
        #[arg(long)]
        param: String,
        /// Comma-separated values substituted at the swept path
        #[arg(long, value_delimiter = ',')]
        values: Vec<String>,
    },
}

fn load_config(spec: &str) -> Result<String, Error> {
    if let Some(body) = builtin_examples().get(spec) {
        return Ok((*body).to_string());
    }
    std::fs::read_to_string(spec).map_err(Error::from)
}

fn apply_overrides(scenario: &mut Scenario, args: &RunArgs) {
    if let Some(seed) = args.seed {
        scenario.root_seed = seed;
    }
    if let Some(reps) = args.replications {
        scenario.replications = reps;
    }
    if args.oracle_controller {
        scenario.controller.oracle_controller = true;
    }
    if let Some(j) = args.jitter_mode {
        scenario.controller.jitter_mode = match j {
            JitterArg::Smooth => JitterMode::Smooth,
            JitterArg::Hard => JitterMode::Hard,
        };
    }
}

fn cmd_run(args: &RunArgs) -> Result<(), Error> {
    let body = load_config(&args.config)?;
    let mut scenario = parse_scenario(&body)?;
    apply_overrides(&mut scenario, args);
    let run = run_scenario(&scenario, body.as_bytes())?;
    match &args.out {
        Some(dir) => {
            let files = emit_report(&run, dir, args.format.into())?;
            for f in files {
                println!("wrote {f}");
            }
        }
        None => println!("{}", summary_json(&run)?),
    }
    Ok(())
}

fn cmd_validate(config: &str) -> Result<(), Error> {
    let body = load_config(config)?;
    let scenario = parse_scenario(&body)?;
    println!(
        "ok: {} nodes, {} links, {} requests, {} replication(s)",
        scenario.topology.nodes.len(),
        scenario.topology.links.len(),
        scenario.requests.len(),
        scenario.replications
    );
    Ok(())
}

fn cmd_presets() {
    println!("hardware presets:");
    for name in PRESET_NAMES {
        let spec = hardware_preset(name).expect("known preset");
        println!(
            "  {name}: T2 = {} s, {} modes, p_swap = {}, gate depol = {}",
            spec.memory.t2_s, spec.memory.num_modes, spec.noise.p_swap, spec.noise.p_gate_depol
        );
    }
    println!("builtin example scenarios:");
    for name in builtin_examples().keys() {
        println!("  {name}");
    }
}

fn cmd_sweep(args: &RunArgs, param: &str, values: &[String]) -> Result<(), Error> {
    if values.is_empty() {
        return Err(Error::Validation {
            field: "values".into(),
            message: "at least one sweep value is required".into(),
        });
    }
    let base = load_config(&args.config)?;
    let mut combined = String::new();
    for (i, value) in values.iter().enumerate() {
        let body = override_config(&base, param, value)?;
        let mut scenario = parse_scenario(&body)?;
        apply_overrides(&mut scenario, args);
        let run = run_scenario(&scenario, body.as_bytes())?;
        let csv = metrics_csv(&run);
        let mut lines = csv.lines();
        let header = lines.next().unwrap_or_default();
        if i == 0 {
            combined.push_str(&format!("{param},{header}\n"));
        }
        for line in lines {
            combined.push_str(&format!("{value},{line}\n"));
        }
        if let Some(dir) = &args.out {
            let sub = dir.join(format!("{param}_{value}").replace(['/', '.'], "_"));
            emit_report(&run, &sub, args.format.into())?;
        }
    }
    match &args.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            let path = dir.join("sweep.csv");
            std::fs::write(&path, combined)?;
            println!("wrote {}", path.display());
        }
        None => print!("{combined}"),
    }
    Ok(())
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::Validation { .. } | Error::Parse(_) | Error::Io(_) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => cmd_run(args),
        Command::Validate { config } => cmd_validate(config),
        Command::Presets => {
            cmd_presets();
            Ok(())
        }
        Command::Sweep { run, param, values } => cmd_sweep(run, param, values),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use iscc_core::driver::{run_scheme, BcdOptions, SchemeId};
use iscc_core::harness::{
    audit_results, builtin_sweeps, preset, run_and_write, soft_checks, ExperimentSpec, SweepVar, PRESET_NAMES,
    RESULT_COLUMNS, SUMMARY_COLUMNS,
};
use iscc_core::scenario::{build_scenario, SystemConfig};

#[derive(Parser)]
#[command(name = "iscc", version, about = "Joint offloading and ISAC beamforming experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run an experiment described by a TOML spec file.
    Run {
        spec: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Run a built-in experiment preset.
    Preset {
        /// Preset name; omit with --list.
        name: Option<String>,
        /// List the presets and exit.
        #[arg(long)]
        list: bool,
        /// Print the preset as a spec file instead of running it.
        #[arg(long)]
        dump: bool,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Re-solve every row of a results file and compare feasibility flags,
    /// modes and latency.
    Audit { csv: PathBuf },
    /// Solve one scenario with one scheme and print the result.
    Solve {
        #[arg(long, default_value = "DCET_ISCC")]
        scheme: SchemeId,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// System configuration TOML; defaults to the reference parameters.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Solver options TOML.
        #[arg(long)]
        solver: Option<PathBuf>,
        /// Print the full solution record as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Print schemes, sweep variables, CSV columns and the default config.
    Info,
}

#[derive(Args)]
struct Overrides {
    #[arg(long)]
    trials: Option<usize>,
    /// Use the paper-scale trial count (500).
    #[arg(long)]
    paper_scale: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
    /// Write zero wall-clock columns so reruns are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Override any spec key, e.g. `--set config.sensing_gain_db=0`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Overrides {
    fn apply(&self, spec: ExperimentSpec) -> Result<ExperimentSpec> {
        let mut spec = spec.with_overrides(&self.set)?;
        if self.paper_scale {
            spec.trials = iscc_core::harness::PAPER_TRIALS;
        }
        if let Some(t) = self.trials {
            spec.trials = t;
        }
        if let Some(s) = self.seed {
            spec.root_seed = s;
        }
        if let Some(o) = &self.output {
            spec.output = Some(o.clone());
        }
        if self.no_timing {
            spec.record_timing = false;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn run_spec(spec: &ExperimentSpec) -> Result<ExitCode> {
    eprintln!(
        "running {} ({} points x {} trials x {} schemes)",
        spec.name,
        spec.points()?.len(),
        spec.trials,
        spec.schemes.len()
    );
    let (exp, data, summary) = run_and_write(spec)?;
    println!(
        "{:<16} {:>10} {:>10} {:>12} {:>10} {:>9}",
        "scheme", spec.sweep.var, "group", "latency_s", "ci95", "feasible"
    );
    for s in &exp.summary {
        println!(
            "{:<16} {:>10} {:>10} {:>12.6} {:>10.2e} {:>5}/{:<3}",
            s.scheme.as_str(),
            s.sweep_value,
            s.group_value.map_or("-".to_string(), |g| g.to_string()),
            s.mean_latency_s,
            s.mean_latency_s_ci95,
            s.feasible_trials,
            s.trials
        );
    }
    for w in soft_checks(&exp.rows, &exp.summary) {
        eprintln!("warning: {w}");
    }
    let infeasible = exp.rows.iter().filter(|r| !r.feasible).count();
    if infeasible > 0 {
        eprintln!(
            "{infeasible} of {} rows are infeasible (flagged in the `feasible` column)",
            exp.rows.len()
        );
    }
    eprintln!("wrote {} and {}", data.display(), summary.display());
    Ok(ExitCode::SUCCESS)
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &PathBuf) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run { spec, overrides } => {
            let spec = ExperimentSpec::from_file(&spec)?;
            run_spec(&overrides.apply(spec)?)
        }
        Command::Preset {
            name,
            list,
            dump,
            overrides,
        } => {
            if list {
                for s in builtin_sweeps(false) {
                    let group = s
                        .group
                        .as_ref()
                        .map_or(String::new(), |g| format!(" x {} {:?}", g.var, g.values));
                    println!("{:<16} {} {:?}{group}", s.name, s.sweep.var, s.sweep.values);
                }
                return Ok(ExitCode::SUCCESS);
            }
            let Some(name) = name else {
                bail!("preset name required (one of {})", PRESET_NAMES.join(", "));
            };
            let Some(spec) = preset(&name, false) else {
                bail!("unknown preset `{name}` (one of {})", PRESET_NAMES.join(", "));
            };
            let spec = overrides.apply(spec)?;
            if dump {
                print!("{}", spec.to_toml_string()?);
                return Ok(ExitCode::SUCCESS);
            }
            run_spec(&spec)
        }
        Command::Audit { csv } => {
            let report = audit_results(&csv)?;
            for m in &report.mismatches {
                println!("MISMATCH {m}");
            }
            println!(
                "{} rows checked, {} flagged infeasible, {} mismatches",
                report.rows_checked,
                report.infeasible_rows,
                report.mismatches.len()
            );
            Ok(if report.ok() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
        Command::Solve {
            scheme,
            seed,
            config,
            solver,
            json,
        } => {
            let cfg: SystemConfig = config.as_ref().map(read_toml).transpose()?.unwrap_or_default();
            cfg.validate()?;
            let opts: BcdOptions = solver.as_ref().map(read_toml).transpose()?.unwrap_or_default();
            let scenario = build_scenario::<f64>(&cfg, seed)?;
            let rec = run_scheme(scheme, &scenario, &opts)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&rec)?);
            } else {
                println!("scheme        {}", rec.scheme);
                println!("mean latency  {:.6} s", rec.mean_latency());
                println!("mean energy   {:.6} J", rec.mean_energy());
                println!("sensing SINR  {:.2} dB (mean)", rec.mean_sensing_sinr_db());
                println!(
                    "modes         {}",
                    rec.modes.iter().map(|m| m.label()).collect::<Vec<_>>().join(" ")
                );
                println!(
                    "rounds        {} (fp {}, admm {})",
                    rec.iterations.bcd_rounds, rec.iterations.fp, rec.iterations.admm
                );
                println!(
                    "feasible      {}{}",
                    rec.feasible(),
                    if rec.fell_back { " (fell back to local)" } else { "" }
                );
                for d in &rec.diagnostics {
                    println!("note          {d}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Info => {
            println!("schemes: {}", SchemeId::ALL.map(|s| s.as_str()).join(", "));
            println!("sweep variables:");
            for v in SweepVar::ALL {
                println!("  {:<8} {}", v.name(), v.unit());
            }
            println!("presets: {}", PRESET_NAMES.join(", "));
            println!("result columns: {}", RESULT_COLUMNS.join(","));
            println!("summary columns: {}", SUMMARY_COLUMNS.join(","));
            println!("default config:");
            print!("{}", SystemConfig::default().to_toml_string()?);
            Ok(ExitCode::SUCCESS)
        }
    }
}

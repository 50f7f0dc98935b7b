//! Monte-Carlo experiments: sweep definitions, parallel trials, CSV output
//! and re-verification of written results.
//!
//! # CSV schema
//!
//! A results file starts with comment lines. Lines beginning with `#|` hold
//! the full effective [`ExperimentSpec`] as TOML; other `#` lines are free
//! text. Then comes one header row and one data row per
//! (sweep point, trial, scheme), with the columns of [`RESULT_COLUMNS`]:
//!
//! | column | type | unit |
//! |---|---|---|
//! | `experiment` | string | |
//! | `scheme` | one of the scheme ids | |
//! | `sweep_var`, `sweep_value` | string, float | see [`SweepVar::unit`] |
//! | `group_var`, `group_value` | string, float, empty without a group | |
//! | `trial`, `seed` | integer | |
//! | `num_terminals` | integer | |
//! | `mean_latency_s`, `total_latency_s` | float | s |
//! | `mean_energy_j` | float | J |
//! | `mean_sensing_sinr_db` | float | dB, mean of per-terminal values |
//! | `min_sensing_margin` | float | `min_k γ_k/Γ − 1` |
//! | `offload_s`, `beamform_s`, `total_s` | float | wall-clock s, 0 when timing is off |
//! | `bcd_rounds`, `admm_iterations`, `fp_iterations` | integer | |
//! | `feasible`, `fell_back` | `true`/`false` | |
//! | `modes` | space-separated labels `L`, `E<l>`, `C<l>` | |
//!
//! The sibling `<stem>.summary.csv` has one row per (scheme, sweep point)
//! with the columns of [`SUMMARY_COLUMNS`]; `*_ci95` columns are 95%
//! Student-t confidence half-widths (NaN for a single trial).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::driver::{run_scheme, BcdOptions, SchemeId, SolutionRecord};
use crate::error::{Error, Result};
use crate::scalar::{db_to_linear, dbm_to_watts};
use crate::scenario::{build_scenario, trial_seed, SystemConfig};

/// Trial count of the desk-scale presets.
pub const DESK_TRIALS: usize = 50;
/// Trial count of the paper-scale presets.
pub const PAPER_TRIALS: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SweepVar {
    #[serde(rename = "B")]
    Bandwidth,
    #[serde(rename = "beta")]
    Beta,
    #[serde(rename = "G_l")]
    MecCapacity,
    #[serde(rename = "f_mec")]
    FMec,
    #[serde(rename = "r_f")]
    Backhaul,
    #[serde(rename = "P_th")]
    PowerBudget,
    #[serde(rename = "M")]
    BsAntennas,
    #[serde(rename = "N")]
    TerminalAntennas,
    #[serde(rename = "K")]
    Terminals,
    #[serde(rename = "Gamma_r")]
    GammaR,
    #[serde(rename = "f_local")]
    FLocal,
}

impl SweepVar {
    pub const ALL: [SweepVar; 11] = [
        SweepVar::Bandwidth,
        SweepVar::Beta,
        SweepVar::MecCapacity,
        SweepVar::FMec,
        SweepVar::Backhaul,
        SweepVar::PowerBudget,
        SweepVar::BsAntennas,
        SweepVar::TerminalAntennas,
        SweepVar::Terminals,
        SweepVar::GammaR,
        SweepVar::FLocal,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SweepVar::Bandwidth => "B",
            SweepVar::Beta => "beta",
            SweepVar::MecCapacity => "G_l",
            SweepVar::FMec => "f_mec",
            SweepVar::Backhaul => "r_f",
            SweepVar::PowerBudget => "P_th",
            SweepVar::BsAntennas => "M",
            SweepVar::TerminalAntennas => "N",
            SweepVar::Terminals => "K",
            SweepVar::GammaR => "Gamma_r",
            SweepVar::FLocal => "f_local",
        }
    }

    /// Unit of sweep values in specs and CSV files.
    pub fn unit(self) -> &'static str {
        match self {
            SweepVar::Bandwidth => "MHz",
            SweepVar::Beta => "cycles/bit",
            SweepVar::MecCapacity => "Gcycles/s",
            SweepVar::FMec | SweepVar::FLocal => "GHz",
            SweepVar::Backhaul => "Mbit/s",
            SweepVar::PowerBudget => "dBm",
            SweepVar::GammaR => "dB",
            SweepVar::BsAntennas | SweepVar::TerminalAntennas | SweepVar::Terminals => "count",
        }
    }

    pub fn is_count(self) -> bool {
        matches!(
            self,
            SweepVar::BsAntennas | SweepVar::TerminalAntennas | SweepVar::Terminals
        )
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    /// Writes `value` (in [`Self::unit`]) into the config.
    pub fn apply(self, cfg: &mut SystemConfig, value: f64) -> Result<()> {
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::Spec(format!(
                "{} value {value} must be finite and > 0",
                self.name()
            )));
        }
        let count = || {
            if value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::Spec(format!("{} value {value} must be an integer", self.name())))
            }
        };
        match self {
            SweepVar::Bandwidth => cfg.bandwidth_hz = value * 1e6,
            SweepVar::Beta => cfg.beta_cycles_per_bit = value,
            SweepVar::MecCapacity => cfg.mec_capacity_hz = value * 1e9,
            SweepVar::FMec => cfg.f_mec_hz = value * 1e9,
            SweepVar::Backhaul => cfg.backhaul_rate_bps = value * 1e6,
            SweepVar::PowerBudget => cfg.p_th_w = dbm_to_watts(value),
            SweepVar::BsAntennas => cfg.bs_antennas = count()?,
            SweepVar::TerminalAntennas => cfg.terminal_antennas = count()?,
            SweepVar::Terminals => cfg.num_terminals = count()?,
            SweepVar::GammaR => cfg.gamma_r = db_to_linear(value),
            SweepVar::FLocal => cfg.f_local_hz = value * 1e9,
        }
        Ok(())
    }
}

impl std::fmt::Display for SweepVar {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sweep {
    pub var: SweepVar,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub root_seed: u64,
    pub schemes: Vec<SchemeId>,
    /// Results file; defaults to `<name>.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    /// When false the wall-clock columns are written as 0 so reruns are
    /// byte-identical.
    #[serde(default = "default_true")]
    pub record_timing: bool,
    pub sweep: Sweep,
    /// Optional second variable; every group value is crossed with every
    /// sweep value.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Sweep>,
    #[serde(default)]
    pub config: SystemConfig,
    #[serde(default)]
    pub solver: BcdOptions,
}

fn default_trials() -> usize {
    DESK_TRIALS
}

fn default_true() -> bool {
    true
}

/// One (group value, sweep value) combination with its effective config.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub group_value: Option<f64>,
    pub sweep_value: f64,
    pub config: SystemConfig,
}

impl ExperimentSpec {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let spec: Self = toml::from_str(s)?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn output_path(&self) -> PathBuf {
        self.output
            .clone()
            .unwrap_or_else(|| PathBuf::from(format!("{}.csv", self.name)))
    }

    /// Applies `key.path=value` overrides, e.g. `config.bandwidth_hz=2e7` or
    /// `trials=5`. Values are parsed as TOML literals, falling back to a
    /// string.
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        let mut root = toml::Value::try_from(self)?;
        for ov in overrides {
            let ov = ov.as_ref();
            let (key, raw) = ov
                .split_once('=')
                .ok_or_else(|| Error::Spec(format!("override `{ov}` is not key=value")))?;
            let value = parse_toml_literal(raw.trim());
            let mut parts = key.trim().split('.').peekable();
            let mut node = &mut root;
            while let Some(part) = parts.next() {
                let table = node
                    .as_table_mut()
                    .ok_or_else(|| Error::Spec(format!("override `{key}`: `{part}` is not inside a table")))?;
                if parts.peek().is_none() {
                    table.insert(part.to_string(), value.clone());
                    break;
                }
                node = table
                    .entry(part.to_string())
                    .or_insert_with(|| toml::Value::Table(Default::default()));
            }
        }
        let spec: Self = root.try_into()?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Spec("name must not be empty".into()));
        }
        if self.trials == 0 {
            return Err(Error::Spec("trials must be >= 1".into()));
        }
        if self.schemes.is_empty() {
            return Err(Error::Spec("at least one scheme is required".into()));
        }
        for (i, s) in self.schemes.iter().enumerate() {
            if self.schemes[..i].contains(s) {
                return Err(Error::Spec(format!("scheme {s} listed twice")));
            }
        }
        for sweep in std::iter::once(&self.sweep).chain(&self.group) {
            if sweep.values.is_empty() {
                return Err(Error::Spec(format!("sweep over {} has no values", sweep.var)));
            }
        }
        if self.group.as_ref().is_some_and(|g| g.var == self.sweep.var) {
            return Err(Error::Spec("group variable must differ from the sweep variable".into()));
        }
        self.points().map(|_| ())
    }

    /// All sweep points, group-major, each with a validated config.
    pub fn points(&self) -> Result<Vec<SweepPoint>> {
        let groups: Vec<Option<f64>> = match &self.group {
            Some(g) => g.values.iter().map(|&v| Some(v)).collect(),
            None => vec![None],
        };
        let mut out = Vec::new();
        for gv in groups {
            for &sv in &self.sweep.values {
                out.push(self.point(gv, sv)?);
            }
        }
        Ok(out)
    }

    pub fn point(&self, group_value: Option<f64>, sweep_value: f64) -> Result<SweepPoint> {
        let mut config = self.config.clone();
        match (&self.group, group_value) {
            (Some(g), Some(v)) => g.var.apply(&mut config, v)?,
            (None, None) => {}
            _ => return Err(Error::Spec("group value does not match the spec's group".into())),
        }
        self.sweep.var.apply(&mut config, sweep_value)?;
        config.validate()?;
        Ok(SweepPoint {
            group_value,
            sweep_value,
            config,
        })
    }
}

fn parse_toml_literal(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub const RESULT_COLUMNS: [&str; 23] = [
    "experiment",
    "scheme",
    "sweep_var",
    "sweep_value",
    "group_var",
    "group_value",
    "trial",
    "seed",
    "num_terminals",
    "mean_latency_s",
    "total_latency_s",
    "mean_energy_j",
    "mean_sensing_sinr_db",
    "min_sensing_margin",
    "offload_s",
    "beamform_s",
    "total_s",
    "bcd_rounds",
    "admm_iterations",
    "fp_iterations",
    "feasible",
    "fell_back",
    "modes",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub scheme: SchemeId,
    pub sweep_var: SweepVar,
    pub sweep_value: f64,
    pub group_var: Option<SweepVar>,
    pub group_value: Option<f64>,
    pub trial: usize,
    pub seed: u64,
    pub num_terminals: usize,
    pub mean_latency_s: f64,
    pub total_latency_s: f64,
    pub mean_energy_j: f64,
    pub mean_sensing_sinr_db: f64,
    pub min_sensing_margin: f64,
    pub offload_s: f64,
    pub beamform_s: f64,
    pub total_s: f64,
    pub bcd_rounds: usize,
    pub admm_iterations: usize,
    pub fp_iterations: usize,
    pub feasible: bool,
    pub fell_back: bool,
    pub modes: String,
}

impl ResultRow {
    fn new(spec: &ExperimentSpec, point: &SweepPoint, trial: usize, seed: u64, rec: &SolutionRecord<f64>) -> Self {
        let t = if spec.record_timing {
            rec.timings.clone()
        } else {
            Default::default()
        };
        Self {
            experiment: spec.name.clone(),
            scheme: rec.scheme,
            sweep_var: spec.sweep.var,
            sweep_value: point.sweep_value,
            group_var: spec.group.as_ref().map(|g| g.var),
            group_value: point.group_value,
            trial,
            seed,
            num_terminals: rec.terminals.len(),
            mean_latency_s: rec.mean_latency(),
            total_latency_s: rec.total_latency,
            mean_energy_j: rec.mean_energy(),
            mean_sensing_sinr_db: rec.mean_sensing_sinr_db(),
            min_sensing_margin: rec.audit.min_sensing_margin,
            offload_s: t.offload_s,
            beamform_s: t.beamform_s,
            total_s: t.total_s,
            bcd_rounds: rec.iterations.bcd_rounds,
            admm_iterations: rec.iterations.admm,
            fp_iterations: rec.iterations.fp,
            feasible: rec.feasible(),
            fell_back: rec.fell_back,
            modes: rec.modes.iter().map(|m| m.label()).collect::<Vec<_>>().join(" "),
        }
    }
}

pub const SUMMARY_COLUMNS: [&str; 18] = [
    "experiment",
    "scheme",
    "sweep_var",
    "sweep_value",
    "group_var",
    "group_value",
    "trials",
    "feasible_trials",
    "fell_back_trials",
    "mean_latency_s",
    "mean_latency_s_ci95",
    "mean_energy_j",
    "mean_energy_j_ci95",
    "mean_sensing_sinr_db",
    "mean_sensing_sinr_db_ci95",
    "total_s",
    "total_s_ci95",
    "fp_iterations",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub experiment: String,
    pub scheme: SchemeId,
    pub sweep_var: SweepVar,
    pub sweep_value: f64,
    pub group_var: Option<SweepVar>,
    pub group_value: Option<f64>,
    pub trials: usize,
    pub feasible_trials: usize,
    pub fell_back_trials: usize,
    pub mean_latency_s: f64,
    pub mean_latency_s_ci95: f64,
    pub mean_energy_j: f64,
    pub mean_energy_j_ci95: f64,
    pub mean_sensing_sinr_db: f64,
    pub mean_sensing_sinr_db_ci95: f64,
    pub total_s: f64,
    pub total_s_ci95: f64,
    /// Mean FP iteration count.
    pub fp_iterations: f64,
}

/// Sample mean and 95% Student-t confidence half-width.
pub fn mean_ci95(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let t = StudentsT::new(0.0, 1.0, (n - 1) as f64)
        .map(|d| d.inverse_cdf(0.975))
        .unwrap_or(f64::NAN);
    (mean, t * (var / n as f64).sqrt())
}

/// Aggregates rows per (scheme, group value, sweep value), in first-seen
/// order of the points and spec order of the schemes.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(u64, u64)> = Vec::new();
    let mut groups: BTreeMap<((u64, u64), SchemeId), Vec<&ResultRow>> = BTreeMap::new();
    let mut schemes: Vec<SchemeId> = Vec::new();
    for r in rows {
        let key = (r.group_value.map_or(u64::MAX, f64::to_bits), r.sweep_value.to_bits());
        if !order.contains(&key) {
            order.push(key);
        }
        if !schemes.contains(&r.scheme) {
            schemes.push(r.scheme);
        }
        groups.entry((key, r.scheme)).or_default().push(r);
    }
    let mut out = Vec::new();
    for key in &order {
        for s in &schemes {
            let Some(rs) = groups.get(&(*key, *s)) else { continue };
            let col = |f: fn(&ResultRow) -> f64| mean_ci95(&rs.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (lat, lat_ci) = col(|r| r.mean_latency_s);
            let (en, en_ci) = col(|r| r.mean_energy_j);
            let (sinr, sinr_ci) = col(|r| r.mean_sensing_sinr_db);
            let (ts, ts_ci) = col(|r| r.total_s);
            let (fp, _) = col(|r| r.fp_iterations as f64);
            let first = rs[0];
            out.push(SummaryRow {
                experiment: first.experiment.clone(),
                scheme: *s,
                sweep_var: first.sweep_var,
                sweep_value: first.sweep_value,
                group_var: first.group_var,
                group_value: first.group_value,
                trials: rs.len(),
                feasible_trials: rs.iter().filter(|r| r.feasible).count(),
                fell_back_trials: rs.iter().filter(|r| r.fell_back).count(),
                mean_latency_s: lat,
                mean_latency_s_ci95: lat_ci,
                mean_energy_j: en,
                mean_energy_j_ci95: en_ci,
                mean_sensing_sinr_db: sinr,
                mean_sensing_sinr_db_ci95: sinr_ci,
                total_s: ts,
                total_s_ci95: ts_ci,
                fp_iterations: fp,
            });
        }
    }
    out
}

#[derive(Clone, Debug)]
pub struct Experiment {
    pub spec: ExperimentSpec,
    pub rows: Vec<ResultRow>,
    pub summary: Vec<SummaryRow>,
}

/// Runs every (point, trial, scheme) combination. Trials run in parallel;
/// rows come back in (point, trial, scheme) order regardless of scheduling.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Experiment> {
    spec.validate()?;
    let points = spec.points()?;
    let jobs: Vec<(&SweepPoint, usize)> = points
        .iter()
        .flat_map(|p| (0..spec.trials).map(move |t| (p, t)))
        .collect();
    let rows: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|&(point, trial)| {
            let seed = trial_seed(spec.root_seed, trial as u64);
            let scenario = build_scenario::<f64>(&point.config, seed)?;
            spec.schemes
                .iter()
                .map(|&s| {
                    Ok(ResultRow::new(
                        spec,
                        point,
                        trial,
                        seed,
                        &run_scheme(s, &scenario, &spec.solver)?,
                    ))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let rows: Vec<ResultRow> = rows.into_iter().flatten().collect();
    let summary = summarize(&rows);
    Ok(Experiment {
        spec: spec.clone(),
        rows,
        summary,
    })
}

/// `<stem>.summary.csv` next to `path`.
pub fn summary_path(path: &Path) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!("{stem}.summary.csv"))
}

fn create(path: &Path) -> Result<File> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    File::create(path).map_err(|e| Error::io(path, e))
}

fn write_table<R: Serialize>(
    mut file: File,
    path: &Path,
    spec: &ExperimentSpec,
    title: &str,
    rows: &[R],
) -> Result<()> {
    let mut head = format!("# {title}\n");
    for line in spec.to_toml_string()?.lines() {
        head.push_str("#| ");
        head.push_str(line);
        head.push('\n');
    }
    file.write_all(head.as_bytes()).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Validates the spec, opens both output files, then runs the experiment.
/// Returns the experiment and the two file paths.
pub fn run_and_write(spec: &ExperimentSpec) -> Result<(Experiment, PathBuf, PathBuf)> {
    spec.validate()?;
    let path = spec.output_path();
    let spath = summary_path(&path);
    let data = create(&path)?;
    let summ = create(&spath)?;
    let exp = run_experiment(spec)?;
    write_table(data, &path, spec, "per-trial results", &exp.rows)?;
    write_table(
        summ,
        &spath,
        spec,
        "means with 95% confidence half-widths",
        &exp.summary,
    )?;
    Ok((exp, path, spath))
}

/// Reads a results file written by [`run_and_write`]: the embedded spec and
/// the data rows.
pub fn read_results(path: impl AsRef<Path>) -> Result<(ExperimentSpec, Vec<ResultRow>)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut spec_toml = String::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if let Some(rest) = line.strip_prefix("#|") {
            spec_toml.push_str(rest.strip_prefix(' ').unwrap_or(rest));
            spec_toml.push('\n');
        } else if !line.starts_with('#') {
            break;
        }
    }
    if spec_toml.is_empty() {
        return Err(Error::Input(format!("{}: no embedded experiment spec", path.display())));
    }
    let spec = ExperimentSpec::from_toml_str(&spec_toml)?;
    let mut reader = csv::ReaderBuilder::new().comment(Some(b'#')).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != RESULT_COLUMNS {
        return Err(Error::Input(format!(
            "{}: header {:?} does not match the expected columns {:?}",
            path.display(),
            header,
            RESULT_COLUMNS
        )));
    }
    let rows = reader
        .deserialize()
        .collect::<std::result::Result<Vec<ResultRow>, _>>()?;
    Ok((spec, rows))
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AuditReport {
    pub rows_checked: usize,
    /// Rows marked infeasible in the file (reported, not an error).
    pub infeasible_rows: usize,
    /// Rows whose recorded values disagree with a fresh solve.
    pub mismatches: Vec<String>,
}

impl AuditReport {
    pub fn ok(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Re-solves every row from the embedded spec and its seed and checks the
/// feasibility flag, fallback flag, modes and latency.
pub fn audit_results(path: impl AsRef<Path>) -> Result<AuditReport> {
    let (spec, rows) = read_results(path)?;
    let checks: Vec<Option<String>> = rows
        .par_iter()
        .enumerate()
        .map(|(i, row)| audit_row(&spec, row).map(|m| m.map(|m| format!("row {}: {m}", i + 1))))
        .collect::<Result<_>>()?;
    Ok(AuditReport {
        rows_checked: rows.len(),
        infeasible_rows: rows.iter().filter(|r| !r.feasible).count(),
        mismatches: checks.into_iter().flatten().collect(),
    })
}

fn audit_row(spec: &ExperimentSpec, row: &ResultRow) -> Result<Option<String>> {
    if row.sweep_var != spec.sweep.var || row.group_var != spec.group.as_ref().map(|g| g.var) {
        return Ok(Some("sweep variables differ from the embedded spec".into()));
    }
    if row.seed != trial_seed(spec.root_seed, row.trial as u64) {
        return Ok(Some(format!(
            "seed {} is not the seed of trial {}",
            row.seed, row.trial
        )));
    }
    let point = spec.point(row.group_value, row.sweep_value)?;
    let scenario = build_scenario::<f64>(&point.config, row.seed)?;
    let fresh = ResultRow::new(
        spec,
        &point,
        row.trial,
        row.seed,
        &run_scheme(row.scheme, &scenario, &spec.solver)?,
    );
    let mut issues = Vec::new();
    if fresh.feasible != row.feasible {
        issues.push(format!(
            "feasible recorded {} but re-solve gives {}",
            row.feasible, fresh.feasible
        ));
    }
    if fresh.fell_back != row.fell_back {
        issues.push(format!(
            "fell_back recorded {} but re-solve gives {}",
            row.fell_back, fresh.fell_back
        ));
    }
    if fresh.modes != row.modes {
        issues.push(format!("modes `{}` vs re-solve `{}`", row.modes, fresh.modes));
    }
    if (fresh.mean_latency_s - row.mean_latency_s).abs() > 1e-9 * fresh.mean_latency_s.abs() {
        issues.push(format!(
            "mean latency {} vs re-solve {}",
            row.mean_latency_s, fresh.mean_latency_s
        ));
    }
    Ok((!issues.is_empty()).then(|| issues.join("; ")))
}

/// Hardware-dependent expectations reported as warnings: sequential runs
/// should not be faster than parallel ones for K ≥ 9.
pub fn soft_checks(rows: &[ResultRow], summary: &[SummaryRow]) -> Vec<String> {
    let mut out = Vec::new();
    for seq in summary.iter().filter(|s| s.scheme == SchemeId::SequentialDcet) {
        let Some(par) = summary.iter().find(|p| {
            p.scheme == SchemeId::DcetIscc && p.sweep_value == seq.sweep_value && p.group_value == seq.group_value
        }) else {
            continue;
        };
        let k = rows
            .iter()
            .find(|r| r.sweep_value == seq.sweep_value && r.group_value == seq.group_value)
            .map_or(0, |r| r.num_terminals);
        if k >= 9 && seq.total_s < par.total_s {
            out.push(format!(
                "{}={} group={:?}: sequential mean runtime {:.3} s below parallel {:.3} s",
                seq.sweep_var, seq.sweep_value, seq.group_value, seq.total_s, par.total_s
            ));
        }
    }
    out
}

/// Base configuration of the presets: the reference parameters plus a
/// 30 dB echo processing gain so the 2 dB sensing target is reachable.
pub fn preset_base_config() -> SystemConfig {
    SystemConfig {
        sensing_gain_db: 30.0,
        ..SystemConfig::default()
    }
}

pub const PRESET_NAMES: [&str; 7] = [
    "fig6_bandwidth",
    "fig7_beta",
    "fig8_fE_rf",
    "fig9_energy_fL",
    "fig10_scale",
    "fig11_Pth_M",
    "fig12_gamma",
];

/// Named experiment presets; `paper_scale` raises the trial count to 500.
pub fn builtin_sweeps(paper_scale: bool) -> Vec<ExperimentSpec> {
    use SchemeId::*;
    let trials = if paper_scale { PAPER_TRIALS } else { DESK_TRIALS };
    let spec = |name: &str,
                schemes: &[SchemeId],
                sweep: (SweepVar, &[f64]),
                group: Option<(SweepVar, &[f64])>,
                config: SystemConfig| {
        ExperimentSpec {
            name: name.to_string(),
            trials,
            root_seed: 1,
            schemes: schemes.to_vec(),
            output: None,
            record_timing: true,
            sweep: Sweep {
                var: sweep.0,
                values: sweep.1.to_vec(),
            },
            group: group.map(|(var, v)| Sweep {
                var,
                values: v.to_vec(),
            }),
            config,
            solver: BcdOptions::default(),
        }
    };
    let base = preset_base_config();
    vec![
        spec(
            "fig6_bandwidth",
            &[DcetIscc, SequentialDcet, EtIscc, LocalOnly],
            (SweepVar::Bandwidth, &[10.0, 20.0, 30.0, 40.0, 50.0]),
            None,
            SystemConfig {
                task_scales_with_bandwidth: true,
                ..base.clone()
            },
        ),
        spec(
            "fig7_beta",
            &[DcetIscc, EtIscc, LocalOnly],
            (SweepVar::Beta, &[200.0, 400.0, 600.0, 800.0, 1000.0]),
            Some((SweepVar::MecCapacity, &[4.5, 9.0])),
            base.clone(),
        ),
        spec(
            "fig8_fE_rf",
            &[DcetIscc, EtIscc],
            (SweepVar::FMec, &[1.0, 2.0, 3.0, 4.0, 5.0]),
            Some((SweepVar::Backhaul, &[2.0, 5.0, 10.0])),
            base.clone(),
        ),
        spec(
            "fig9_energy_fL",
            &[DcetIscc, EtIscc, LocalOnly],
            (SweepVar::FLocal, &[0.3, 0.4, 0.5, 0.6, 0.7]),
            Some((SweepVar::MecCapacity, &[4.5, 9.0])),
            base.clone(),
        ),
        spec(
            "fig10_scale",
            &[DcetIscc, EtIscc],
            (SweepVar::Terminals, &[30.0, 35.0, 40.0]),
            None,
            SystemConfig {
                num_bs: 5,
                ..base.clone()
            },
        ),
        spec(
            "fig11_Pth_M",
            &[DcetIscc, DcetMrt, DcetMrs],
            (SweepVar::PowerBudget, &[15.0, 20.0, 25.0, 30.0, 35.0]),
            Some((SweepVar::BsAntennas, &[8.0, 16.0, 32.0])),
            base.clone(),
        ),
        spec(
            "fig12_gamma",
            &[DcetIscc],
            (SweepVar::GammaR, &[2.0, 4.0, 6.0, 8.0, 10.0]),
            Some((SweepVar::MecCapacity, &[4.5, 9.0])),
            base,
        ),
    ]
}

pub fn preset(name: &str, paper_scale: bool) -> Option<ExperimentSpec> {
    builtin_sweeps(paper_scale).into_iter().find(|s| s.name == name)
}

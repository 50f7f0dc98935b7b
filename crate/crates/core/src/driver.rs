//! Block-coordinate descent over offloading decisions and beamformers, plus
//! the baseline schemes.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::beamform::{
    beamforming_solve, init_beamformers, mrs_beamformers, mrt_beamformers, serving_rates, BeamformOptions, MrtDirection,
};
use crate::error::{Error, Result};
use crate::metrics::{BeamformerSet, ExecutionMode, TerminalMetrics};
use crate::offload::{admm_solve, round_decisions, AdmmOptions, CostTable, RoundingOptions};
use crate::scalar::{cast, from_usize, to_f64, Scalar};
use crate::scenario::Scenario;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SchemeId {
    #[serde(rename = "DCET_ISCC")]
    DcetIscc,
    #[serde(rename = "ET_ISCC")]
    EtIscc,
    #[serde(rename = "LOCAL_ONLY")]
    LocalOnly,
    #[serde(rename = "DCET_MRT")]
    DcetMrt,
    #[serde(rename = "DCET_MRS")]
    DcetMrs,
    #[serde(rename = "SEQUENTIAL_DCET")]
    SequentialDcet,
}

impl SchemeId {
    pub const ALL: [SchemeId; 6] = [
        SchemeId::DcetIscc,
        SchemeId::EtIscc,
        SchemeId::LocalOnly,
        SchemeId::DcetMrt,
        SchemeId::DcetMrs,
        SchemeId::SequentialDcet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SchemeId::DcetIscc => "DCET_ISCC",
            SchemeId::EtIscc => "ET_ISCC",
            SchemeId::LocalOnly => "LOCAL_ONLY",
            SchemeId::DcetMrt => "DCET_MRT",
            SchemeId::DcetMrs => "DCET_MRS",
            SchemeId::SequentialDcet => "SEQUENTIAL_DCET",
        }
    }

    /// Whether the scheme is responsible for the echo-SINR constraint.
    pub fn enforces_sensing(self) -> bool {
        !matches!(self, SchemeId::DcetMrt | SchemeId::DcetMrs)
    }
}

impl fmt::Display for SchemeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SchemeId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SchemeId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Input(format!("unknown scheme `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcdOptions {
    pub max_rounds: usize,
    /// Relative change of total latency below which rounds stop.
    pub tol: f64,
    /// Intra-solver parallelism; `false` forces every sub-solver sequential.
    pub parallel: bool,
    pub mrt_direction: MrtDirection,
    pub admm: AdmmOptions,
    pub rounding: RoundingOptions,
    pub beamform: BeamformOptions,
}

impl Default for BcdOptions {
    fn default() -> Self {
        Self {
            max_rounds: 10,
            tol: 1e-3,
            parallel: true,
            mrt_direction: MrtDirection::default(),
            admm: AdmmOptions::default(),
            rounding: RoundingOptions::default(),
            beamform: BeamformOptions::default(),
        }
    }
}

impl BcdOptions {
    fn effective(&self) -> Self {
        let mut o = self.clone();
        o.admm.parallel &= self.parallel;
        o.beamform.parallel &= self.parallel;
        o
    }
}

/// Constraint checks recomputed from scratch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub modes_ok: bool,
    pub capacity_ok: bool,
    pub power_ok: bool,
    pub sensing_ok: bool,
    pub rates_ok: bool,
    /// Largest MEC load over capacity.
    pub max_load_ratio: f64,
    /// Largest total terminal power over `P_th`.
    pub max_power_ratio: f64,
    /// `min_k γ_k / Γ − 1`.
    pub min_sensing_margin: f64,
}

impl FeasibilityReport {
    pub fn feasible(&self) -> bool {
        self.modes_ok && self.capacity_ok && self.power_ok && self.sensing_ok && self.rates_ok
    }

    /// Feasibility with respect to the constraints a scheme enforces.
    pub fn feasible_for(&self, scheme: SchemeId) -> bool {
        self.modes_ok
            && self.capacity_ok
            && self.power_ok
            && self.rates_ok
            && (self.sensing_ok || !scheme.enforces_sensing())
    }
}

/// Relative tolerances used by [`audit`].
pub const CAPACITY_TOL: f64 = 1e-9;
pub const POWER_TOL: f64 = 1e-9;
pub const SENSING_TOL: f64 = 1e-3;

/// Checks one-mode-per-terminal, MEC capacity, power budget and echo SINR
/// directly from the metrics.
pub fn audit<T: Scalar>(scenario: &Scenario<T>, modes: &[ExecutionMode], w: &BeamformerSet<T>) -> FeasibilityReport {
    let cfg = &scenario.config;
    let nl = scenario.num_bs();
    let modes_ok = modes.len() == scenario.num_terminals()
        && w.len() == scenario.num_terminals()
        && modes.iter().all(|m| m.serving_bs().is_none_or(|l| l < nl));
    let mut load = vec![0.0; nl];
    for m in modes {
        if let ExecutionMode::Mec(l) = m {
            if *l < nl {
                load[*l] += cfg.f_mec_hz;
            }
        }
    }
    let max_load_ratio = load.iter().map(|x| x / cfg.mec_capacity_hz).fold(0.0, f64::max);
    let mut max_power_ratio = 0.0f64;
    let mut rates_ok = modes_ok;
    let mut min_margin = f64::INFINITY;
    if modes_ok {
        for (k, &m) in modes.iter().enumerate() {
            let p = to_f64(crate::metrics::power_total(m, w.get(k), cfg));
            max_power_ratio = max_power_ratio.max(p / cfg.p_th_w);
            if let Some(l) = m.serving_bs() {
                match scenario.rate(l, k, w) {
                    Ok(r) if r > T::zero() && r.is_finite() => {}
                    _ => rates_ok = false,
                }
            }
            min_margin = min_margin.min(to_f64(scenario.echo_sinr(k, w)) / cfg.gamma_r - 1.0);
        }
    }
    FeasibilityReport {
        modes_ok,
        capacity_ok: max_load_ratio <= 1.0 + CAPACITY_TOL,
        power_ok: max_power_ratio <= 1.0 + POWER_TOL,
        sensing_ok: min_margin >= -SENSING_TOL,
        rates_ok,
        max_load_ratio,
        max_power_ratio,
        min_sensing_margin: min_margin,
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub offload_s: f64,
    pub beamform_s: f64,
    pub total_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationCounts {
    pub bcd_rounds: usize,
    pub admm: usize,
    pub fp: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionRecord<T> {
    pub scheme: SchemeId,
    pub modes: Vec<ExecutionMode>,
    pub w: BeamformerSet<T>,
    pub terminals: Vec<TerminalMetrics<T>>,
    pub total_latency: T,
    /// Total latency after initialization and after every BCD round.
    pub objective_trace: Vec<T>,
    /// `Σ Z/R` trace of each beamforming run.
    pub beamform_traces: Vec<Vec<T>>,
    pub timings: PhaseTimings,
    pub iterations: IterationCounts,
    pub audit: FeasibilityReport,
    /// True when the scheme could not meet the echo-SINR target and reports
    /// the all-local assignment instead.
    pub fell_back: bool,
    pub diagnostics: Vec<String>,
}

impl<T: Scalar> SolutionRecord<T> {
    pub fn mean_latency(&self) -> T {
        self.total_latency / from_usize(self.terminals.len().max(1))
    }

    pub fn mean_energy(&self) -> T {
        mean(self.terminals.iter().map(|t| t.energy))
    }

    /// Mean echo SINR in dB (mean of the per-terminal dB values).
    pub fn mean_sensing_sinr_db(&self) -> f64 {
        let n = self.terminals.len().max(1) as f64;
        self.terminals
            .iter()
            .map(|t| 10.0 * to_f64(t.sensing_sinr).log10())
            .sum::<f64>()
            / n
    }

    pub fn feasible(&self) -> bool {
        self.audit.feasible_for(self.scheme)
    }
}

fn mean<T: Scalar>(it: impl ExactSizeIterator<Item = T>) -> T {
    let n = it.len().max(1);
    it.sum::<T>() / from_usize(n)
}

fn total_latency<T: Scalar>(scenario: &Scenario<T>, modes: &[ExecutionMode], w: &BeamformerSet<T>) -> Result<T> {
    let rates = serving_rates(scenario, modes, w)?;
    Ok(crate::metrics::objective_total_latency(modes, &rates, &scenario.config)?.0)
}

/// One offloading step with frozen beamformers. Returns the rounded modes
/// (only if they do not increase the latency of `current`) and the ADMM
/// iteration count.
fn offload_step<T: Scalar>(
    scenario: &Scenario<T>,
    w: &BeamformerSet<T>,
    current: &[ExecutionMode],
    allow_cloud: bool,
    opts: &BcdOptions,
    diagnostics: &mut Vec<String>,
) -> Result<(Vec<ExecutionMode>, usize)> {
    let rates = scenario.rate_table(w)?;
    let costs = CostTable::from_rates(scenario, w, &rates, allow_cloud)?;
    let relaxed = admm_solve(&costs, &opts.admm)?;
    diagnostics.extend(relaxed.diagnostics.iter().cloned());
    let rounded = round_decisions(&relaxed.a, &relaxed.b, &costs, &opts.rounding);
    diagnostics.extend(rounded.diagnostics);
    let tol: T = cast(opts.rounding.tol);
    let candidate = costs
        .is_feasible(&rounded.modes, tol)
        .then(|| costs.assignment_latency(&rounded.modes))
        .flatten();
    let incumbent = costs
        .is_feasible(current, tol)
        .then(|| costs.assignment_latency(current))
        .flatten();
    let modes = match (candidate, incumbent) {
        (Some(c), Some(i)) if c <= i => rounded.modes,
        (Some(_), None) => rounded.modes,
        _ => current.to_vec(),
    };
    Ok((modes, relaxed.iterations))
}

fn finish<T: Scalar>(
    scheme: SchemeId,
    scenario: &Scenario<T>,
    modes: Vec<ExecutionMode>,
    w: BeamformerSet<T>,
    mut run: RunState<T>,
) -> Result<SolutionRecord<T>> {
    let terminals = scenario.evaluate(&modes, &w)?;
    let total_latency = terminals.iter().map(|t| t.latency.total).sum();
    let audit = audit(scenario, &modes, &w);
    run.timings.total_s = run.start.elapsed().as_secs_f64();
    Ok(SolutionRecord {
        scheme,
        modes,
        w,
        terminals,
        total_latency,
        objective_trace: run.trace,
        beamform_traces: run.beam_traces,
        timings: run.timings,
        iterations: run.iterations,
        audit,
        fell_back: run.fell_back,
        diagnostics: run.diagnostics,
    })
}

struct RunState<T> {
    start: Instant,
    trace: Vec<T>,
    beam_traces: Vec<Vec<T>>,
    timings: PhaseTimings,
    iterations: IterationCounts,
    fell_back: bool,
    diagnostics: Vec<String>,
}

impl<T> RunState<T> {
    fn new() -> Self {
        Self {
            start: Instant::now(),
            trace: Vec::new(),
            beam_traces: Vec::new(),
            timings: PhaseTimings::default(),
            iterations: IterationCounts::default(),
            fell_back: false,
            diagnostics: Vec::new(),
        }
    }
}

/// Alternates offloading (ADMM + rounding) and beamforming until the total
/// latency changes by at most `opts.tol` (relative) or `opts.max_rounds`
/// rounds have run.
///
/// Starts from all-local modes and power-controlled maximum-ratio sensing
/// beams. If no such start meets the echo-SINR target, the all-local
/// assignment is returned with `fell_back` set.
pub fn bcd_optimize<T: Scalar>(
    scenario: &Scenario<T>,
    allow_cloud: bool,
    opts: &BcdOptions,
) -> Result<SolutionRecord<T>> {
    let scheme = if allow_cloud {
        SchemeId::DcetIscc
    } else {
        SchemeId::EtIscc
    };
    let (modes, w, run) = bcd(scenario, allow_cloud, opts)?;
    finish(scheme, scenario, modes, w, run)
}

fn bcd<T: Scalar>(
    scenario: &Scenario<T>,
    allow_cloud: bool,
    opts: &BcdOptions,
) -> Result<(Vec<ExecutionMode>, BeamformerSet<T>, RunState<T>)> {
    let opts = opts.effective();
    let mut run = RunState::new();
    let kk = scenario.num_terminals();
    let mut modes = vec![ExecutionMode::Local; kk];
    let mut w = match init_beamformers(scenario, &modes) {
        Ok(w) => w,
        Err(e) => {
            run.fell_back = true;
            run.diagnostics.push(format!("{e}; reporting all-local assignment"));
            let w = mrs_beamformers(scenario);
            run.trace.push(total_latency(scenario, &modes, &w)?);
            return Ok((modes, w, run));
        }
    };
    let mut obj = total_latency(scenario, &modes, &w)?;
    run.trace.push(obj);
    for _ in 0..opts.max_rounds {
        run.iterations.bcd_rounds += 1;
        let t0 = Instant::now();
        let (next_modes, admm_iters) = offload_step(scenario, &w, &modes, allow_cloud, &opts, &mut run.diagnostics)?;
        run.iterations.admm += admm_iters;
        run.timings.offload_s += t0.elapsed().as_secs_f64();
        modes = next_modes;

        let t1 = Instant::now();
        match beamforming_solve(scenario, &modes, &w, &opts.beamform) {
            Ok(r) => {
                run.iterations.fp += r.iterations;
                run.beam_traces.push(r.objective_trace);
                w = r.w;
            }
            Err(e) => {
                run.diagnostics
                    .push(format!("beamforming failed, keeping previous beamformers: {e}"));
                run.timings.beamform_s += t1.elapsed().as_secs_f64();
                run.trace.push(total_latency(scenario, &modes, &w)?);
                break;
            }
        }
        run.timings.beamform_s += t1.elapsed().as_secs_f64();

        let prev = obj;
        obj = total_latency(scenario, &modes, &w)?;
        run.trace.push(obj);
        if (prev - obj).abs() <= cast::<T>(opts.tol) * prev.abs() {
            break;
        }
    }
    Ok((modes, w, run))
}

/// Offloading only, with beamformers frozen at `w`.
fn fixed_beam<T: Scalar>(
    scenario: &Scenario<T>,
    w: BeamformerSet<T>,
    opts: &BcdOptions,
) -> Result<(Vec<ExecutionMode>, BeamformerSet<T>, RunState<T>)> {
    let opts = opts.effective();
    let mut run = RunState::new();
    let local = vec![ExecutionMode::Local; scenario.num_terminals()];
    run.trace.push(total_latency(scenario, &local, &w)?);
    let t0 = Instant::now();
    let (modes, iters) = offload_step(scenario, &w, &local, true, &opts, &mut run.diagnostics)?;
    run.timings.offload_s = t0.elapsed().as_secs_f64();
    run.iterations = IterationCounts {
        bcd_rounds: 1,
        admm: iters,
        fp: 0,
    };
    run.trace.push(total_latency(scenario, &modes, &w)?);
    Ok((modes, w, run))
}

pub fn run_scheme<T: Scalar>(scheme: SchemeId, scenario: &Scenario<T>, opts: &BcdOptions) -> Result<SolutionRecord<T>> {
    let (modes, w, run) = match scheme {
        SchemeId::DcetIscc => bcd(scenario, true, opts)?,
        SchemeId::SequentialDcet => {
            let seq = BcdOptions {
                parallel: false,
                ..opts.clone()
            };
            bcd(scenario, true, &seq)?
        }
        SchemeId::EtIscc => bcd(scenario, false, opts)?,
        SchemeId::LocalOnly => {
            let mut run = RunState::new();
            let modes = vec![ExecutionMode::Local; scenario.num_terminals()];
            let w = match init_beamformers(scenario, &modes) {
                Ok(w) => w,
                Err(e) => {
                    run.diagnostics.push(e.to_string());
                    mrs_beamformers(scenario)
                }
            };
            run.trace.push(total_latency(scenario, &modes, &w)?);
            (modes, w, run)
        }
        SchemeId::DcetMrt => fixed_beam(scenario, mrt_beamformers(scenario, opts.mrt_direction), opts)?,
        SchemeId::DcetMrs => fixed_beam(scenario, mrs_beamformers(scenario), opts)?,
    };
    finish(scheme, scenario, modes, w, run)
}

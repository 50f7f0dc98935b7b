//! Offloading decisions: consensus ADMM on the relaxed problem and greedy
//! rounding to binary modes.
//!
//! Every BS `l` keeps local copies `ω_l` (MEC) and `ϖ_l` (cloud) of the
//! global relaxed variables `a_l`, `b_l`. One ADMM iteration is
//!
//! 1. local update, per BS in parallel: minimize the linear latency cost
//!    plus `ρ/2 ‖ω − a + φ̂‖²` over the box and the MEC capacity half-space;
//! 2. global update, per terminal in parallel: project `ω + φ̂` onto the
//!    single-selection and power constraints;
//! 3. scaled dual ascent `φ̂ += υ (ω − a)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{latency, power_total, BeamformerSet, ExecutionMode};
use crate::scalar::{cast, Scalar};
use crate::scenario::Scenario;

/// Latency and power of every execution option, with frozen beamformers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostTable<T> {
    pub t_local: Vec<T>,
    /// `[l][k]`
    pub t_mec: Vec<Vec<T>>,
    /// `[l][k]`
    pub t_cloud: Vec<Vec<T>>,
    pub p_local: Vec<T>,
    /// Power when offloading, identical for MEC and cloud.
    pub p_offload: Vec<T>,
    /// `[l][k]`, false when the option has no usable uplink or is excluded.
    pub mec_allowed: Vec<Vec<bool>>,
    pub cloud_allowed: Vec<Vec<bool>>,
    /// MEC cycles/s a terminal occupies when served at the edge.
    pub f_mec: Vec<T>,
    /// `[l]`
    pub mec_capacity: Vec<T>,
    pub p_th: T,
}

impl<T: Scalar> CostTable<T> {
    pub fn num_bs(&self) -> usize {
        self.t_mec.len()
    }

    pub fn num_terminals(&self) -> usize {
        self.t_local.len()
    }

    /// Builds the table from a rate matrix `rates[l][k]`. Options whose rate is
    /// not positive and finite are disallowed, as are all cloud options when
    /// `allow_cloud` is false.
    pub fn from_rates(
        scenario: &Scenario<T>,
        w: &BeamformerSet<T>,
        rates: &[Vec<T>],
        allow_cloud: bool,
    ) -> Result<Self> {
        let cfg = &scenario.config;
        let (nl, nk) = (scenario.num_bs(), scenario.num_terminals());
        if rates.len() != nl || rates.iter().any(|r| r.len() != nk) {
            return Err(Error::Input("rate table must be L×K".into()));
        }
        let t_local: Vec<T> = (0..nk)
            .map(|k| latency(k, ExecutionMode::Local, T::zero(), cfg).map(|b| b.total))
            .collect::<Result<_>>()?;
        let mut t_mec = vec![t_local.clone(); nl];
        let mut t_cloud = vec![t_local.clone(); nl];
        let mut mec_allowed = vec![vec![false; nk]; nl];
        let mut cloud_allowed = vec![vec![false; nk]; nl];
        for l in 0..nl {
            for k in 0..nk {
                if let Ok(b) = latency(k, ExecutionMode::Mec(l), rates[l][k], cfg) {
                    if b.total.is_finite() {
                        t_mec[l][k] = b.total;
                        mec_allowed[l][k] = true;
                    }
                }
                if !allow_cloud {
                    continue;
                }
                if let Ok(b) = latency(k, ExecutionMode::Cloud(l), rates[l][k], cfg) {
                    if b.total.is_finite() {
                        t_cloud[l][k] = b.total;
                        cloud_allowed[l][k] = true;
                    }
                }
            }
        }
        Ok(Self {
            t_local,
            t_mec,
            t_cloud,
            p_local: (0..nk)
                .map(|k| power_total(ExecutionMode::Local, w.get(k), cfg))
                .collect(),
            p_offload: (0..nk)
                .map(|k| power_total(ExecutionMode::Mec(0), w.get(k), cfg))
                .collect(),
            mec_allowed,
            cloud_allowed,
            f_mec: vec![cast(cfg.f_mec_hz); nk],
            mec_capacity: vec![cast(cfg.mec_capacity_hz); nl],
            p_th: cast(cfg.p_th_w),
        })
    }

    pub fn validate(&self) -> Result<()> {
        let (nl, nk) = (self.num_bs(), self.num_terminals());
        let shape_ok = [&self.t_mec, &self.t_cloud]
            .iter()
            .all(|m| m.len() == nl && m.iter().all(|r| r.len() == nk))
            && [&self.mec_allowed, &self.cloud_allowed]
                .iter()
                .all(|m| m.len() == nl && m.iter().all(|r| r.len() == nk))
            && self.p_local.len() == nk
            && self.p_offload.len() == nk
            && self.f_mec.len() == nk
            && self.mec_capacity.len() == nl;
        if !shape_ok {
            return Err(Error::Input("cost table dimensions are inconsistent".into()));
        }
        let finite = |v: &T| v.is_finite() && *v >= T::zero();
        let all_finite = self.t_local.iter().all(finite)
            && self.t_mec.iter().flatten().all(finite)
            && self.t_cloud.iter().flatten().all(finite)
            && self.p_local.iter().all(finite)
            && self.p_offload.iter().all(finite)
            && self.f_mec.iter().all(|f| f.is_finite() && *f > T::zero())
            && self.mec_capacity.iter().all(|g| g.is_finite() && *g > T::zero())
            && self.p_th.is_finite();
        if !all_finite {
            return Err(Error::Input(
                "cost table contains non-finite or negative entries".into(),
            ));
        }
        Ok(())
    }

    /// Latency of terminal `k` in `mode`, `None` when the option is disallowed.
    pub fn mode_latency(&self, k: usize, mode: ExecutionMode) -> Option<T> {
        match mode {
            ExecutionMode::Local => Some(self.t_local[k]),
            ExecutionMode::Mec(l) => self.mec_allowed[l][k].then(|| self.t_mec[l][k]),
            ExecutionMode::Cloud(l) => self.cloud_allowed[l][k].then(|| self.t_cloud[l][k]),
        }
    }

    pub fn mode_power(&self, k: usize, mode: ExecutionMode) -> T {
        if mode.is_local() {
            self.p_local[k]
        } else {
            self.p_offload[k]
        }
    }

    /// Relaxed objective `Σ_k [T_L + Σ_l a(T_E − T_L) + Σ_l b(T_C − T_L)]`.
    pub fn relaxed_objective(&self, a: &[Vec<T>], b: &[Vec<T>]) -> T {
        let mut total: T = self.t_local.iter().copied().sum();
        for l in 0..self.num_bs() {
            for k in 0..self.num_terminals() {
                total +=
                    a[l][k] * (self.t_mec[l][k] - self.t_local[k]) + b[l][k] * (self.t_cloud[l][k] - self.t_local[k]);
            }
        }
        total
    }

    /// Total latency of a binary assignment, `None` if any mode is disallowed.
    pub fn assignment_latency(&self, modes: &[ExecutionMode]) -> Option<T> {
        modes.iter().enumerate().map(|(k, &m)| self.mode_latency(k, m)).sum()
    }

    /// Whether `modes` satisfies single selection, MEC capacity and power.
    pub fn is_feasible(&self, modes: &[ExecutionMode], tol: T) -> bool {
        if modes.len() != self.num_terminals() {
            return false;
        }
        let mut load = vec![T::zero(); self.num_bs()];
        for (k, &m) in modes.iter().enumerate() {
            if m.serving_bs().is_some_and(|l| l >= self.num_bs()) || self.mode_latency(k, m).is_none() {
                return false;
            }
            if self.mode_power(k, m) > self.p_th * (T::one() + tol) {
                return false;
            }
            if let ExecutionMode::Mec(l) = m {
                load[l] += self.f_mec[k];
            }
        }
        load.iter()
            .zip(&self.mec_capacity)
            .all(|(&u, &g)| u <= g * (T::one() + tol))
    }

    fn mec_cost(&self, l: usize, k: usize) -> (T, T) {
        let ub = if self.mec_allowed[l][k] { T::one() } else { T::zero() };
        (self.t_mec[l][k] - self.t_local[k], ub)
    }

    fn cloud_cost(&self, l: usize, k: usize) -> (T, T) {
        let ub = if self.cloud_allowed[l][k] { T::one() } else { T::zero() };
        (self.t_cloud[l][k] - self.t_local[k], ub)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdmmOptions {
    pub rho: f64,
    pub upsilon: f64,
    pub eps: f64,
    pub max_iter: usize,
    pub parallel: bool,
    /// Over-relaxation factor in (0, 2); 1 is plain ADMM.
    pub relaxation: f64,
    /// Rebalance `ρ` when the primal and dual residuals differ by more than
    /// `balance_ratio`, within `[rho/1e4, rho·1e4]`.
    pub adaptive_rho: bool,
    pub balance_ratio: f64,
    /// Factor `ρ` is multiplied or divided by on each rebalance.
    pub rho_step: f64,
    /// No rebalancing after this many iterations.
    pub adapt_until: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            upsilon: 1.0,
            eps: 1e-4,
            max_iter: 300,
            parallel: true,
            relaxation: 1.0,
            adaptive_rho: true,
            balance_ratio: 10.0,
            rho_step: 2.0,
            adapt_until: 50,
        }
    }
}

/// Full ADMM state, all matrices `[l][k]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmState<T> {
    pub omega: Vec<Vec<T>>,
    pub varpi: Vec<Vec<T>>,
    pub a: Vec<Vec<T>>,
    pub b: Vec<Vec<T>>,
    pub phi_hat: Vec<Vec<T>>,
    pub varphi_hat: Vec<Vec<T>>,
    pub rho: T,
    pub upsilon: T,
    pub iter: usize,
}

impl<T: Scalar> AdmmState<T> {
    pub fn new(num_bs: usize, num_terminals: usize, rho: T, upsilon: T) -> Self {
        let z = vec![vec![T::zero(); num_terminals]; num_bs];
        Self {
            omega: z.clone(),
            varpi: z.clone(),
            a: z.clone(),
            b: z.clone(),
            phi_hat: z.clone(),
            varphi_hat: z,
            rho,
            upsilon,
            iter: 0,
        }
    }

    /// `max |ω − a|, |ϖ − b|`.
    pub fn primal_residual(&self) -> T {
        let mut r = T::zero();
        for (x, y) in [(&self.omega, &self.a), (&self.varpi, &self.b)] {
            for (xr, yr) in x.iter().zip(y) {
                for (&u, &v) in xr.iter().zip(yr) {
                    r = r.max((u - v).abs());
                }
            }
        }
        r
    }
}

/// Root of a continuous, non-increasing, piecewise-linear `f` whose kinks lie
/// in `breakpoints`. Requires `f(min) ≥ target ≥ f(max)`.
fn pwl_root<T: Scalar>(mut breakpoints: Vec<T>, f: impl Fn(T) -> T, target: T) -> T {
    breakpoints.sort_by(|x, y| x.partial_cmp(y).unwrap_or(std::cmp::Ordering::Equal));
    breakpoints.dedup();
    let mut prev: Option<(T, T)> = None;
    for &x in &breakpoints {
        let fx = f(x);
        if fx <= target {
            return match prev {
                None => x,
                Some((lo, flo)) if flo > fx => lo + (flo - target) * (x - lo) / (flo - fx),
                Some(_) => x,
            };
        }
        prev = Some((x, fx));
    }
    *breakpoints.last().expect("at least one breakpoint")
}

fn clip<T: Scalar>(x: T, ub: T) -> T {
    x.max(T::zero()).min(ub)
}

/// Exact minimizer of `Σ c_k ω_k + ρ/2 Σ (ω_k − t_k)²` over
/// `0 ≤ ω_k ≤ ub_k`, `Σ f_k ω_k ≤ g`. Returns `(ω, λ)` where `λ` is the
/// capacity multiplier.
pub fn capacity_prox<T: Scalar>(t: &[T], c: &[T], ub: &[T], f: &[T], g: T, rho: T) -> (Vec<T>, T) {
    let omega_at = |lambda: T| -> Vec<T> {
        t.iter()
            .zip(c)
            .zip(ub.iter().zip(f))
            .map(|((&t, &c), (&ub, &f))| clip(t - (c + lambda * f) / rho, ub))
            .collect()
    };
    let load = |lambda: T| -> T { omega_at(lambda).iter().zip(f).map(|(&w, &f)| w * f).sum() };
    if load(T::zero()) <= g {
        return (omega_at(T::zero()), T::zero());
    }
    let mut bps = vec![T::zero()];
    for k in 0..t.len() {
        for edge in [T::zero(), ub[k]] {
            let x = (rho * (t[k] - edge) - c[k]) / f[k];
            if x > T::zero() {
                bps.push(x);
            }
        }
    }
    let lambda = pwl_root(bps, load, g);
    (omega_at(lambda), lambda)
}

/// Local update at BS `l`: returns `(ω_l, ϖ_l)`.
pub fn local_update<T: Scalar>(l: usize, state: &AdmmState<T>, costs: &CostTable<T>) -> (Vec<T>, Vec<T>) {
    let nk = costs.num_terminals();
    let rho = state.rho;
    let t: Vec<T> = (0..nk).map(|k| state.a[l][k] - state.phi_hat[l][k]).collect();
    let (c, ub): (Vec<T>, Vec<T>) = (0..nk).map(|k| costs.mec_cost(l, k)).unzip();
    let (omega, _) = capacity_prox(&t, &c, &ub, &costs.f_mec, costs.mec_capacity[l], rho);
    let varpi = (0..nk)
        .map(|k| {
            let (c, ub) = costs.cloud_cost(l, k);
            clip(state.b[l][k] - state.varphi_hat[l][k] - c / rho, ub)
        })
        .collect();
    (omega, varpi)
}

/// Result of projecting one terminal's variables in the global update.
#[derive(Clone, Debug, PartialEq)]
pub struct TerminalProjection<T> {
    pub a: Vec<T>,
    pub b: Vec<T>,
    /// Multiplier of `Σ a + Σ b ≤ 1`.
    pub chi: T,
    /// Multiplier of the power constraint.
    pub psi: T,
    /// False when the power constraint cannot be met by any split.
    pub power_feasible: bool,
}

/// Minimum offloaded fraction `Σ a + Σ b` that keeps terminal `k` within its
/// power budget. Zero when local execution already fits.
pub fn min_offload_fraction<T: Scalar>(costs: &CostTable<T>, k: usize) -> T {
    let (pl, pe) = (costs.p_local[k], costs.p_offload[k]);
    if pl <= costs.p_th {
        return T::zero();
    }
    if pl > pe {
        (pl - costs.p_th) / (pl - pe)
    } else {
        T::infinity()
    }
}

/// Projects `y_a = ω + φ̂`, `y_b = ϖ + φ̂′` for terminal `k` onto
/// `{0 ≤ a, b ≤ ub, Σ a + Σ b ≤ 1, p_total ≤ P_th}`.
pub fn project_terminal<T: Scalar>(
    k: usize,
    y_a: &[T],
    y_b: &[T],
    costs: &CostTable<T>,
    rho: T,
) -> TerminalProjection<T> {
    let nl = costs.num_bs();
    let ub: Vec<T> = (0..nl)
        .map(|l| costs.mec_cost(l, k).1)
        .chain((0..nl).map(|l| costs.cloud_cost(l, k).1))
        .collect();
    let y: Vec<T> = y_a.iter().chain(y_b).copied().collect();
    let at = |mu: T| -> Vec<T> { y.iter().zip(&ub).map(|(&y, &u)| clip(y - mu, u)).collect() };
    let sum = |mu: T| -> T { at(mu).into_iter().sum() };
    let s_min = min_offload_fraction(costs, k);
    let delta = costs.p_local[k] - costs.p_offload[k];
    let one = T::one();
    let s0 = sum(T::zero());

    let mut power_feasible = true;
    let mu = if s0 > one {
        let bps: Vec<T> = y
            .iter()
            .zip(&ub)
            .flat_map(|(&y, &u)| [y, y - u])
            .filter(|&x| x > T::zero())
            .chain([T::zero()])
            .collect();
        pwl_root(bps, sum, one)
    } else if s0 < s_min {
        let cap: T = ub.iter().copied().sum::<T>().min(one);
        let bps: Vec<T> = y
            .iter()
            .zip(&ub)
            .flat_map(|(&y, &u)| [y, y - u])
            .filter(|&x| x < T::zero())
            .chain([T::zero()])
            .collect();
        if cap < s_min {
            power_feasible = false;
            if cap >= one {
                pwl_root(bps, sum, one)
            } else {
                bps.iter().copied().fold(T::zero(), T::min)
            }
        } else {
            pwl_root(bps, sum, s_min)
        }
    } else {
        T::zero()
    };
    let x = at(mu);
    let (chi, psi) = if mu > T::zero() {
        (rho * mu, T::zero())
    } else if mu < T::zero() && delta > T::zero() {
        (T::zero(), -rho * mu / delta)
    } else {
        (T::zero(), T::zero())
    };
    TerminalProjection {
        a: x[..nl].to_vec(),
        b: x[nl..].to_vec(),
        chi,
        psi,
        power_feasible,
    }
}

/// Global update for all terminals; returns per-terminal projections.
pub fn global_update<T: Scalar>(
    state: &AdmmState<T>,
    costs: &CostTable<T>,
    parallel: bool,
) -> Vec<TerminalProjection<T>> {
    let nl = costs.num_bs();
    let one = |k: usize| {
        let ya: Vec<T> = (0..nl).map(|l| state.omega[l][k] + state.phi_hat[l][k]).collect();
        let yb: Vec<T> = (0..nl).map(|l| state.varpi[l][k] + state.varphi_hat[l][k]).collect();
        project_terminal(k, &ya, &yb, costs, state.rho)
    };
    if parallel {
        (0..costs.num_terminals()).into_par_iter().map(one).collect()
    } else {
        (0..costs.num_terminals()).map(one).collect()
    }
}

/// Scaled dual ascent `φ̂ += υ(ω − a)`, `φ̂′ += υ(ϖ − b)`.
pub fn dual_update<T: Scalar>(state: &mut AdmmState<T>) {
    let u = state.upsilon;
    for l in 0..state.a.len() {
        for k in 0..state.a[l].len() {
            state.phi_hat[l][k] += u * (state.omega[l][k] - state.a[l][k]);
            state.varphi_hat[l][k] += u * (state.varpi[l][k] - state.b[l][k]);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdmmResult<T> {
    /// Relaxed MEC variables `[l][k]`.
    pub a: Vec<Vec<T>>,
    /// Relaxed cloud variables `[l][k]`.
    pub b: Vec<Vec<T>>,
    pub chi: Vec<T>,
    pub psi: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// `max |ω − a|, |ϖ − b|` after every iteration.
    pub residual_history: Vec<T>,
    /// `max |a⁺ − a|, |b⁺ − b|` after every iteration.
    pub change_history: Vec<T>,
    pub objective: T,
    pub diagnostics: Vec<String>,
}

/// Runs consensus ADMM from a zero start until both the consensus residual
/// and the change of the global variables fall below `eps`.
pub fn admm_solve<T: Scalar>(costs: &CostTable<T>, opts: &AdmmOptions) -> Result<AdmmResult<T>> {
    costs.validate()?;
    if !(opts.rho > 0.0 && opts.upsilon > 0.0 && opts.eps > 0.0) {
        return Err(Error::Input("ADMM rho, upsilon and eps must be positive".into()));
    }
    if !(opts.relaxation > 0.0 && opts.relaxation < 2.0) {
        return Err(Error::Input("ADMM relaxation must lie in (0, 2)".into()));
    }
    let (nl, nk) = (costs.num_bs(), costs.num_terminals());
    let mut st = AdmmState::new(nl, nk, cast(opts.rho), cast(opts.upsilon));
    let eps: T = cast(opts.eps);
    let relax: T = cast(opts.relaxation);
    let rho_min: T = cast(opts.rho / 1e4);
    let rho_max: T = cast(opts.rho * 1e4);
    let mut rho_changes = 0usize;
    let mut residual_history = Vec::new();
    let mut change_history = Vec::new();
    let mut diagnostics = Vec::new();
    let mut chi = vec![T::zero(); nk];
    let mut psi = vec![T::zero(); nk];
    let mut converged = false;

    // Current iterates of (a, b, φ̂, φ̂′).
    let zero = || vec![vec![T::zero(); nk]; nl];
    let mut cur = [zero(), zero(), zero(), zero()];

    while st.iter < opts.max_iter {
        let locals: Vec<(Vec<T>, Vec<T>)> = if opts.parallel {
            (0..nl).into_par_iter().map(|l| local_update(l, &st, costs)).collect()
        } else {
            (0..nl).map(|l| local_update(l, &st, costs)).collect()
        };
        for (l, (om, vp)) in locals.into_iter().enumerate() {
            st.omega[l] = om;
            st.varpi[l] = vp;
        }
        // Over-relaxed local copies enter the global and dual steps.
        let mut relaxed = st.clone();
        for l in 0..nl {
            for k in 0..nk {
                relaxed.omega[l][k] = relax * st.omega[l][k] + (T::one() - relax) * st.a[l][k];
                relaxed.varpi[l][k] = relax * st.varpi[l][k] + (T::one() - relax) * st.b[l][k];
            }
        }
        let proj = global_update(&relaxed, costs, opts.parallel);
        let mut next = [zero(), zero(), zero(), zero()];
        for (k, p) in proj.iter().enumerate() {
            for l in 0..nl {
                next[0][l][k] = p.a[l];
                next[1][l][k] = p.b[l];
            }
            chi[k] = p.chi;
            psi[k] = p.psi;
        }
        let mut dual = relaxed;
        dual.a = next[0].clone();
        dual.b = next[1].clone();
        dual_update(&mut dual);
        next[2] = dual.phi_hat;
        next[3] = dual.varphi_hat;

        let mut residual = T::zero();
        let mut change = T::zero();
        for l in 0..nl {
            for k in 0..nk {
                residual = residual
                    .max((st.omega[l][k] - next[0][l][k]).abs())
                    .max((st.varpi[l][k] - next[1][l][k]).abs());
                change = change
                    .max((next[0][l][k] - cur[0][l][k]).abs())
                    .max((next[1][l][k] - cur[1][l][k]).abs());
            }
        }
        st.iter += 1;
        residual_history.push(residual);
        change_history.push(change);

        let dual_residual = st.rho * change;
        cur = next;
        if residual <= eps && change <= eps {
            converged = true;
            break;
        }
        let [a, b, u, v] = cur.clone();
        st.a = a;
        st.b = b;
        st.phi_hat = u;
        st.varphi_hat = v;

        if opts.adaptive_rho && st.iter <= opts.adapt_until {
            let mu: T = cast(opts.balance_ratio);
            let tau: T = cast(opts.rho_step);
            let scale = if residual > mu * dual_residual && st.rho * tau <= rho_max {
                Some(tau)
            } else if dual_residual > mu * residual && st.rho / tau >= rho_min {
                Some(T::one() / tau)
            } else {
                None
            };
            if let Some(f) = scale {
                // Scaled duals are multipliers divided by ρ.
                st.rho *= f;
                for x in st.phi_hat.iter_mut().chain(st.varphi_hat.iter_mut()).flatten() {
                    *x /= f;
                }
                rho_changes += 1;
            }
        }
    }
    for k in 0..nk {
        if min_offload_fraction(costs, k) > T::one() {
            diagnostics.push(format!("terminal {k}: power budget unattainable in every mode"));
        }
    }
    if !converged {
        diagnostics.push(format!(
            "ADMM stopped at iteration cap {} with residual {:e}",
            opts.max_iter,
            residual_history
                .last()
                .map(|r| r.to_f64().unwrap_or(f64::NAN))
                .unwrap_or(0.0)
        ));
    }
    if rho_changes > 0 {
        diagnostics.push(format!(
            "ADMM rebalanced rho {rho_changes} times, final {:e}",
            st.rho.to_f64().unwrap_or(f64::NAN)
        ));
    }
    let [a, b, _, _] = cur;
    Ok(AdmmResult {
        objective: costs.relaxed_objective(&a, &b),
        a,
        b,
        chi,
        psi,
        iterations: st.iter,
        converged,
        residual_history,
        change_history,
        diagnostics,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoundingOptions {
    /// Follow the greedy pass with single- and two-terminal improving moves.
    pub local_search: bool,
    /// Relative tolerance on capacity and power checks.
    pub tol: f64,
}

impl Default for RoundingOptions {
    fn default() -> Self {
        Self {
            local_search: true,
            tol: 1e-9,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rounding {
    pub modes: Vec<ExecutionMode>,
    pub diagnostics: Vec<String>,
}

fn candidates<T: Scalar>(k: usize, a: &[Vec<T>], b: &[Vec<T>], costs: &CostTable<T>) -> Vec<(ExecutionMode, T)> {
    let nl = costs.num_bs();
    let mut out: Vec<(ExecutionMode, T)> = Vec::with_capacity(2 * nl + 1);
    let mut used = T::zero();
    for l in 0..nl {
        out.push((ExecutionMode::Mec(l), a[l][k]));
        out.push((ExecutionMode::Cloud(l), b[l][k]));
        used += a[l][k] + b[l][k];
    }
    out.push((ExecutionMode::Local, T::one() - used));
    // Highest relaxed weight first; ties go to the faster option.
    out.sort_by(|x, y| {
        y.1.partial_cmp(&x.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| {
                let tx = costs.mode_latency(k, x.0).unwrap_or(T::infinity());
                let ty = costs.mode_latency(k, y.0).unwrap_or(T::infinity());
                tx.partial_cmp(&ty).unwrap_or(std::cmp::Ordering::Equal)
            })
    });
    out
}

/// Rounds relaxed `(a, b)` to one mode per terminal.
///
/// Terminals are visited in descending order of their largest relaxed weight
/// (the local weight `1 − Σa − Σb` included). Each takes its highest-weight
/// option that is allowed, fits the remaining MEC capacity and the power
/// budget, falling back to `Local`.
pub fn round_decisions<T: Scalar>(
    a: &[Vec<T>],
    b: &[Vec<T>],
    costs: &CostTable<T>,
    opts: &RoundingOptions,
) -> Rounding {
    let (nl, nk) = (costs.num_bs(), costs.num_terminals());
    let tol: T = cast(opts.tol);
    let cands: Vec<Vec<(ExecutionMode, T)>> = (0..nk).map(|k| candidates(k, a, b, costs)).collect();
    let mut order: Vec<usize> = (0..nk).collect();
    order.sort_by(|&x, &y| {
        cands[y][0]
            .1
            .partial_cmp(&cands[x][0].1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(x.cmp(&y))
    });

    let mut remaining = costs.mec_capacity.clone();
    let mut modes = vec![ExecutionMode::Local; nk];
    let mut diagnostics = Vec::new();
    let fits_power = |k: usize, m: ExecutionMode| costs.mode_power(k, m) <= costs.p_th * (T::one() + tol);

    for &k in &order {
        let mut chosen = None;
        for (rank, &(m, _)) in cands[k].iter().enumerate() {
            if costs.mode_latency(k, m).is_none() || !fits_power(k, m) {
                continue;
            }
            if let ExecutionMode::Mec(l) = m {
                if costs.f_mec[k] > remaining[l] * (T::one() + tol) {
                    continue;
                }
            }
            if rank > 0 {
                diagnostics.push(format!("terminal {k}: fell back from {} to {m}", cands[k][0].0));
            }
            chosen = Some(m);
            break;
        }
        let m = chosen.unwrap_or_else(|| {
            diagnostics.push(format!("terminal {k}: no option fits the power budget, kept Local"));
            ExecutionMode::Local
        });
        if let ExecutionMode::Mec(l) = m {
            remaining[l] -= costs.f_mec[k];
        }
        modes[k] = m;
    }

    if opts.local_search {
        improve_assignment(&mut modes, costs, tol);
    }
    debug_assert!(modes.iter().all(|m| m.serving_bs().is_none_or(|l| l < nl)));
    Rounding { modes, diagnostics }
}

/// Local search over single-terminal and two-terminal mode changes. Each
/// step applies the best strictly improving move that keeps capacity and
/// power feasible; stops when no move improves.
fn improve_assignment<T: Scalar>(modes: &mut [ExecutionMode], costs: &CostTable<T>, tol: T) {
    let (nl, nk) = (costs.num_bs(), costs.num_terminals());
    let slack = T::one() + tol;
    let mut load = vec![T::zero(); nl];
    for (k, m) in modes.iter().enumerate() {
        if let ExecutionMode::Mec(l) = m {
            load[*l] += costs.f_mec[k];
        }
    }
    let all_modes: Vec<ExecutionMode> = std::iter::once(ExecutionMode::Local)
        .chain((0..nl).flat_map(|l| [ExecutionMode::Mec(l), ExecutionMode::Cloud(l)]))
        .collect();
    // Options each terminal may take regardless of capacity, with latency.
    let usable: Vec<Vec<(ExecutionMode, T)>> = (0..nk)
        .map(|k| {
            all_modes
                .iter()
                .filter(|&&m| costs.mode_power(k, m) <= costs.p_th * slack)
                .filter_map(|&m| costs.mode_latency(k, m).map(|t| (m, t)))
                .collect()
        })
        .collect();
    let latency_of = |k: usize, m: ExecutionMode| costs.mode_latency(k, m).unwrap_or(T::infinity());
    let improvement_floor = T::epsilon() * cast(64.0);

    let fits = |load: &[T], changes: &[(usize, ExecutionMode, ExecutionMode)]| -> bool {
        let mut delta: Vec<(usize, T)> = Vec::with_capacity(4);
        for &(k, old, new) in changes {
            if let ExecutionMode::Mec(l) = old {
                delta.push((l, -costs.f_mec[k]));
            }
            if let ExecutionMode::Mec(l) = new {
                delta.push((l, costs.f_mec[k]));
            }
        }
        delta.iter().all(|&(l, _)| {
            let total: T = load[l] + delta.iter().filter(|d| d.0 == l).map(|d| d.1).sum::<T>();
            total <= costs.mec_capacity[l] * slack
        })
    };

    let max_steps = 8 * nk.max(1) * (2 * nl + 1);
    for _ in 0..max_steps {
        let mut best: Option<(T, Vec<(usize, ExecutionMode, ExecutionMode)>)> = None;
        let mut consider = |gain: T, changes: Vec<(usize, ExecutionMode, ExecutionMode)>| {
            if gain > improvement_floor && best.as_ref().is_none_or(|b| gain > b.0) {
                best = Some((gain, changes));
            }
        };
        for i in 0..nk {
            let cur_i = latency_of(i, modes[i]);
            for &(mi, ti) in &usable[i] {
                if mi != modes[i] && fits(&load, &[(i, modes[i], mi)]) {
                    consider(cur_i - ti, vec![(i, modes[i], mi)]);
                }
            }
        }
        for i in 0..nk {
            let cur_i = latency_of(i, modes[i]);
            for j in (i + 1)..nk {
                let cur_j = latency_of(j, modes[j]);
                for &(mi, ti) in &usable[i] {
                    if mi == modes[i] {
                        continue;
                    }
                    for &(mj, tj) in &usable[j] {
                        if mj == modes[j] {
                            continue;
                        }
                        let gain = cur_i + cur_j - ti - tj;
                        if gain <= improvement_floor {
                            continue;
                        }
                        let changes = [(i, modes[i], mi), (j, modes[j], mj)];
                        if fits(&load, &changes) {
                            consider(gain, changes.to_vec());
                        }
                    }
                }
            }
        }
        let Some((_, changes)) = best else { break };
        for (k, old, new) in changes {
            if let ExecutionMode::Mec(l) = old {
                load[l] -= costs.f_mec[k];
            }
            if let ExecutionMode::Mec(l) = new {
                load[l] += costs.f_mec[k];
            }
            modes[k] = new;
        }
    }
}

/// Relaxed variables of a binary assignment.
pub fn relaxed_from_modes<T: Scalar>(modes: &[ExecutionMode], num_bs: usize) -> (Vec<Vec<T>>, Vec<Vec<T>>) {
    let nk = modes.len();
    let mut a = vec![vec![T::zero(); nk]; num_bs];
    let mut b = vec![vec![T::zero(); nk]; num_bs];
    for (k, m) in modes.iter().enumerate() {
        match *m {
            ExecutionMode::Mec(l) => a[l][k] = T::one(),
            ExecutionMode::Cloud(l) => b[l][k] = T::one(),
            ExecutionMode::Local => {}
        }
    }
    (a, b)
}

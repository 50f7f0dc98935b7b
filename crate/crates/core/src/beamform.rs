//! Transmit beamforming for fixed execution modes.
//!
//! The sum of uplink delays `Σ Z/R_k` is handled by a quadratic transform
//! (auxiliary `c_k = √Z/R_k`) followed by the weighted-MMSE equivalence, which
//! leaves one convex quadratic program per terminal:
//!
//! ```text
//! min  wᴴQw − 2 Re(bᴴw)
//! s.t. ‖w‖² ≤ P,  wᴴK_j w ≤ Υ_j (j ≠ k),  Re(sᴴw) ≥ τ
//! ```
//!
//! The last constraint is the echo-SINR requirement linearized at the
//! previous iterate. Leakage caps `Υ` are refreshed from the actual leakage
//! after every sweep, which keeps every terminal's sensing constraint valid
//! while the subproblems are solved independently.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sqr, solve_real, CMat, HermitianCholesky, RealCholesky};
use crate::metrics::{interference_plus_noise, leakage_power, BeamformerSet, ExecutionMode};
use crate::scalar::{cast, from_usize, Scalar, C};
use crate::scenario::Scenario;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BarrierOptions {
    /// Target surrogate duality gap of the normalized problem.
    pub tol: f64,
    /// Centering factor: the barrier weight is `mu · m / gap`.
    pub mu: f64,
    pub max_newton: usize,
    /// Relative slack added to every constraint so that a warm start lying on
    /// the boundary is strictly interior.
    pub relax: f64,
}

impl Default for BarrierOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            mu: 10.0,
            max_newton: 200,
            relax: 1e-10,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamformOptions {
    pub max_iter: usize,
    /// Relative change of `Σ Z/R` below which the loop stops.
    pub eps: f64,
    pub parallel: bool,
    /// Relative tolerance on the echo-SINR threshold when checking inputs
    /// and outputs.
    pub sinr_tol: f64,
    pub barrier: BarrierOptions,
}

impl Default for BeamformOptions {
    fn default() -> Self {
        Self {
            max_iter: 50,
            eps: 1e-4,
            parallel: true,
            sinr_tol: 1e-3,
            barrier: BarrierOptions::default(),
        }
    }
}

/// `Re(normalᴴ w) ≥ threshold`.
#[derive(Clone, Debug, PartialEq)]
pub struct SensingHalfspace<T> {
    pub normal: Vec<C<T>>,
    pub threshold: T,
}

/// One terminal's convex subproblem.
#[derive(Clone, Debug, PartialEq)]
pub struct BeamSubproblem<T> {
    pub q: CMat<T>,
    pub b: Vec<C<T>>,
    /// Bound on `‖w‖²`.
    pub power_budget: T,
    /// `(K_j, Υ_j)` pairs: `wᴴK_j w ≤ Υ_j`.
    pub leakage: Vec<(CMat<T>, T)>,
    pub sensing: Option<SensingHalfspace<T>>,
}

impl<T: Scalar> BeamSubproblem<T> {
    /// `wᴴQw − 2 Re(bᴴw)`.
    pub fn objective(&self, w: &[C<T>]) -> T {
        let two: T = cast(2.0);
        self.q.quad_form(w) - two * dot(&self.b, w).re
    }

    /// Largest relative constraint violation; non-positive when feasible.
    pub fn max_violation(&self, w: &[C<T>]) -> T {
        let mut v = norm_sqr(w) / self.power_budget - T::one();
        for (k, cap) in &self.leakage {
            let lk = k.quad_form(w);
            let rel = if *cap > T::zero() { lk / *cap - T::one() } else { lk };
            v = v.max(rel);
        }
        if let Some(s) = &self.sensing {
            let lhs = dot(&s.normal, w).re;
            v = v.max((s.threshold - lhs) / s.threshold.abs().max(T::tiny()));
        }
        v
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SubproblemStatus {
    /// `Q⁻¹b` is strictly feasible and returned as is.
    Unconstrained,
    Optimal,
    /// The solver did not improve on the warm start.
    KeptWarmStart,
    /// The warm start is not strictly feasible; it is returned unchanged.
    Infeasible,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubproblemSolution<T> {
    pub w: Vec<C<T>>,
    pub status: SubproblemStatus,
    pub newton_steps: usize,
}

/// Real 2N×2N embedding of a Hermitian matrix: `xᵀ R x = wᴴ A w` for
/// `x = [Re w; Im w]`.
fn embed_hermitian<T: Scalar>(a: &CMat<T>, s: T) -> Vec<T> {
    let n = a.rows();
    let m = 2 * n;
    let mut r = vec![T::zero(); m * m];
    for i in 0..n {
        for j in 0..n {
            let z = a[(i, j)];
            r[i * m + j] = z.re * s;
            r[i * m + n + j] = -z.im * s;
            r[(n + i) * m + j] = z.im * s;
            r[(n + i) * m + n + j] = z.re * s;
        }
    }
    r
}

fn embed_vec<T: Scalar>(v: &[C<T>], s: T) -> Vec<T> {
    v.iter().map(|z| z.re * s).chain(v.iter().map(|z| z.im * s)).collect()
}

fn sym_mul<T: Scalar>(a: &[T], x: &[T]) -> Vec<T> {
    let n = x.len();
    (0..n)
        .map(|i| a[i * n..(i + 1) * n].iter().zip(x).map(|(p, q)| *p * *q).sum())
        .collect()
}

fn rdot<T: Scalar>(x: &[T], y: &[T]) -> T {
    x.iter().zip(y).map(|(p, q)| *p * *q).sum()
}

/// Normalized real problem: `min xᵀQx − 2bᵀx` with `xᵀR_i x ≤ 1 + r` and
/// `sᵀx ≥ h − r`. The ball constraint is the first quadratic (`R = I`).
struct RealProblem<T> {
    n: usize,
    q: Vec<T>,
    b: Vec<T>,
    quads: Vec<Option<Vec<T>>>,
    lin: Option<(Vec<T>, T)>,
    relax: T,
}

impl<T: Scalar> RealProblem<T> {
    fn quad_value(&self, r: &Option<Vec<T>>, x: &[T]) -> T {
        match r {
            None => rdot(x, x),
            Some(r) => rdot(x, &sym_mul(r, x)),
        }
    }

    fn slacks(&self, x: &[T]) -> Option<Vec<T>> {
        let mut s = Vec::with_capacity(self.quads.len() + 1);
        for r in &self.quads {
            s.push(T::one() + self.relax - self.quad_value(r, x));
        }
        if let Some((v, h)) = &self.lin {
            s.push(rdot(v, x) - (*h - self.relax));
        }
        if s.iter().all(|&v| v > T::zero() && v.is_finite()) {
            Some(s)
        } else {
            None
        }
    }

    fn num_constraints(&self) -> usize {
        self.quads.len() + usize::from(self.lin.is_some())
    }

    /// Constraint values `g_i(x)` (feasible when all negative) and gradients.
    fn constraints(&self, x: &[T]) -> (Vec<T>, Vec<Vec<T>>) {
        let two: T = cast(2.0);
        let mut g = Vec::with_capacity(self.num_constraints());
        let mut grads = Vec::with_capacity(self.num_constraints());
        for r in &self.quads {
            let rx = match r {
                None => x.to_vec(),
                Some(r) => sym_mul(r, x),
            };
            g.push(rdot(x, &rx) - (T::one() + self.relax));
            grads.push(rx.iter().map(|v| *v * two).collect());
        }
        if let Some((v, h)) = &self.lin {
            g.push((*h - self.relax) - rdot(v, x));
            grads.push(v.iter().map(|a| -*a).collect());
        }
        (g, grads)
    }

    /// Norm of the modified KKT residual at barrier weight `t`; `None` if
    /// `x` is not strictly feasible.
    fn residual_norm(&self, x: &[T], lam: &[T], t: T) -> Option<T> {
        let (g, grads) = self.constraints(x);
        if !g.iter().all(|v| *v < T::zero() && v.is_finite()) {
            return None;
        }
        let two: T = cast(2.0);
        let qx = sym_mul(&self.q, x);
        let mut acc = T::zero();
        for i in 0..self.n {
            let mut r = two * (qx[i] - self.b[i]);
            for (l, gr) in lam.iter().zip(&grads) {
                r += *l * gr[i];
            }
            acc += r * r;
        }
        for (l, gi) in lam.iter().zip(&g) {
            let r = -*l * *gi - T::one() / t;
            acc += r * r;
        }
        Some(acc.sqrt())
    }

    /// Primal-dual interior-point iterations from a strictly feasible `x`.
    /// Returns the number of Newton steps.
    fn solve_pd(&self, x: &mut Vec<T>, opts: &BarrierOptions) -> usize {
        let n = self.n;
        let m = self.num_constraints();
        let mf: T = from_usize(m);
        let two: T = cast(2.0);
        let tol: T = cast::<T>(opts.tol).max(T::epsilon() * cast(16.0));
        let feas_tol: T = cast::<T>(opts.tol * 10.0).max(T::epsilon().sqrt());
        let mu: T = cast(opts.mu);
        let alpha: T = cast(0.01);
        let half: T = cast(0.5);
        let mut lam = vec![T::one(); m];
        let mut steps = 0;
        while steps < opts.max_newton {
            let (g, grads) = self.constraints(x);
            let gap: T = -g.iter().zip(&lam).map(|(a, b)| *a * *b).sum::<T>();
            let qx = sym_mul(&self.q, x);
            let mut rdual: Vec<T> = qx.iter().zip(&self.b).map(|(a, b)| two * (*a - *b)).collect();
            for (l, gr) in lam.iter().zip(&grads) {
                for i in 0..n {
                    rdual[i] += *l * gr[i];
                }
            }
            if gap <= tol && rdot(&rdual, &rdual).sqrt() <= feas_tol {
                break;
            }
            let t = mu * mf / gap.max(T::tiny());

            let mut hess: Vec<T> = self.q.iter().map(|v| *v * two).collect();
            let mut rhs: Vec<T> = qx.iter().zip(&self.b).map(|(a, b)| -two * (*a - *b)).collect();
            for (idx, gr) in grads.iter().enumerate() {
                let s = -g[idx];
                let w = lam[idx] / s;
                if let Some(r) = self.quads.get(idx) {
                    for i in 0..n {
                        match r {
                            None => hess[i * n + i] += two * lam[idx],
                            Some(r) => {
                                for j in 0..n {
                                    hess[i * n + j] += two * lam[idx] * r[i * n + j];
                                }
                            }
                        }
                    }
                }
                for i in 0..n {
                    rhs[i] -= gr[i] / (t * s);
                    for j in 0..n {
                        hess[i * n + j] += w * gr[i] * gr[j];
                    }
                }
            }
            let chol = match RealCholesky::new(&hess, n) {
                Ok(c) => c,
                Err(_) => {
                    let scale = (0..n).map(|i| hess[i * n + i].abs()).fold(T::zero(), T::max);
                    for i in 0..n {
                        hess[i * n + i] += scale * T::epsilon() * cast(1e3) + T::tiny();
                    }
                    match RealCholesky::new(&hess, n) {
                        Ok(c) => c,
                        Err(_) => break,
                    }
                }
            };
            let dx = chol.solve(&rhs);
            let dlam: Vec<T> = (0..m)
                .map(|i| {
                    let s = -g[i];
                    lam[i] * rdot(&grads[i], &dx) / s - lam[i] + T::one() / (t * s)
                })
                .collect();
            steps += 1;

            let mut step = T::one();
            for (l, d) in lam.iter().zip(&dlam) {
                if *d < T::zero() {
                    step = step.min(-*l / *d);
                }
            }
            step *= cast(0.99);
            let Some(r0) = self.residual_norm(x, &lam, t) else {
                break;
            };
            let mut accepted = false;
            for _ in 0..60 {
                let xn: Vec<T> = x.iter().zip(&dx).map(|(a, d)| *a + step * *d).collect();
                let ln: Vec<T> = lam.iter().zip(&dlam).map(|(a, d)| *a + step * *d).collect();
                if let Some(r) = self.residual_norm(&xn, &ln, t) {
                    if r <= (T::one() - alpha * step) * r0 {
                        *x = xn;
                        lam = ln;
                        accepted = true;
                        break;
                    }
                }
                step *= half;
            }
            if !accepted {
                break;
            }
        }
        steps
    }
}

/// Solves one terminal's subproblem by a primal-dual interior-point method.
///
/// `warm` must satisfy the constraints (up to `opts.relax`). The result is
/// never worse than `warm` in objective.
pub fn solve_beam_subproblem<T: Scalar>(
    sub: &BeamSubproblem<T>,
    warm: &[C<T>],
    opts: &BarrierOptions,
) -> SubproblemSolution<T> {
    let keep = |status| SubproblemSolution {
        w: warm.to_vec(),
        status,
        newton_steps: 0,
    };
    let p = sub.power_budget;
    if !(p > T::zero()) {
        return keep(SubproblemStatus::Infeasible);
    }

    if let Ok(chol) = HermitianCholesky::new(&sub.q) {
        let w = chol.solve(&sub.b);
        let inside = norm_sqr(&w) < p
            && sub.leakage.iter().all(|(k, cap)| k.quad_form(&w) < *cap)
            && sub.sensing.as_ref().is_none_or(|s| dot(&s.normal, &w).re > s.threshold);
        if inside {
            return SubproblemSolution {
                w,
                status: SubproblemStatus::Unconstrained,
                newton_steps: 0,
            };
        }
    }

    let sp = p.sqrt();
    let scale = (sub.q.frobenius_norm() * p).max(norm_sqr(&sub.b).sqrt() * sp);
    if !(scale > T::zero()) {
        return keep(SubproblemStatus::KeptWarmStart);
    }
    let relax = cast::<T>(opts.relax).max(T::epsilon() * cast(64.0));
    let mut quads = vec![None];
    for (k, cap) in &sub.leakage {
        if !(*cap > T::zero()) {
            return keep(SubproblemStatus::Infeasible);
        }
        quads.push(Some(embed_hermitian(k, p / *cap)));
    }
    let lin = sub.sensing.as_ref().map(|s| {
        let d = s.threshold.abs().max(T::tiny());
        (embed_vec(&s.normal, sp / d), s.threshold / d)
    });
    let prob = RealProblem {
        n: 2 * warm.len(),
        q: embed_hermitian(&sub.q, p / scale),
        b: embed_vec(&sub.b, sp / scale),
        quads,
        lin,
        relax,
    };
    let mut x = embed_vec(warm, T::one() / sp);
    if prob.slacks(&x).is_none() {
        return keep(SubproblemStatus::Infeasible);
    }

    let steps = prob.solve_pd(&mut x, opts);

    let half = x.len() / 2;
    let w: Vec<C<T>> = (0..half).map(|i| C::new(x[i] * sp, x[half + i] * sp)).collect();
    if sub.objective(&w) < sub.objective(warm) {
        SubproblemSolution {
            w,
            status: SubproblemStatus::Optimal,
            newton_steps: steps,
        }
    } else {
        SubproblemSolution {
            w: warm.to_vec(),
            status: SubproblemStatus::KeptWarmStart,
            newton_steps: steps,
        }
    }
}

/// MMSE receivers and MSE weights of the offloading terminals.
#[derive(Clone, Debug, PartialEq)]
pub struct Receivers<T> {
    /// `u_k = J_k⁻¹ H_lkᴴ w_k` at the serving BS; `None` for local terminals.
    pub u: Vec<Option<Vec<C<T>>>>,
    /// `E_k = 1 − gᴴ J⁻¹ g`.
    pub mse: Vec<T>,
    /// `V_k = 1/E_k`.
    pub weight: Vec<T>,
}

/// `J_k = σ² I + Σ_i H_liᴴ w_i w_iᴴ H_li`, the full received covariance at
/// the serving BS.
pub fn update_receivers<T: Scalar>(
    scenario: &Scenario<T>,
    modes: &[ExecutionMode],
    w: &BeamformerSet<T>,
) -> Result<Receivers<T>> {
    let sigma: T = cast(scenario.config.sigma_b2());
    let kk = scenario.num_terminals();
    let mut out = Receivers {
        u: vec![None; kk],
        mse: vec![T::one(); kk],
        weight: vec![T::one(); kk],
    };
    for (k, mode) in modes.iter().enumerate() {
        let Some(l) = mode.serving_bs() else { continue };
        let ch = &scenario.channels;
        let g = ch.uplink(l, k).adjoint_mul_vec(w.get(k));
        let mut j = interference_plus_noise(l, k, w, ch, sigma);
        j.add_outer(C::new(T::one(), T::zero()), &g, &g);
        let u = HermitianCholesky::new(&j)?.solve(&g);
        let e = T::one() - dot(&g, &u).re;
        let e = e.max(T::epsilon());
        out.u[k] = Some(u);
        out.mse[k] = e;
        out.weight[k] = T::one() / e;
    }
    Ok(out)
}

/// Rates at each terminal's serving BS; zero for local terminals.
pub fn serving_rates<T: Scalar>(
    scenario: &Scenario<T>,
    modes: &[ExecutionMode],
    w: &BeamformerSet<T>,
) -> Result<Vec<T>> {
    modes
        .iter()
        .enumerate()
        .map(|(k, m)| match m.serving_bs() {
            Some(l) => scenario.rate(l, k, w),
            None => Ok(T::zero()),
        })
        .collect()
}

/// `c_k = √Z / R_k` for offloading terminals, zero otherwise.
pub fn update_ratio_aux<T: Scalar>(task_bits: T, modes: &[ExecutionMode], rates: &[T]) -> Vec<T> {
    modes
        .iter()
        .zip(rates)
        .map(|(m, &r)| {
            if m.is_offloaded() && r > T::zero() {
                task_bits.sqrt() / r
            } else {
                T::zero()
            }
        })
        .collect()
}

/// `Σ_{offloaded} Z/R_k`; infinite if an offloading terminal has no rate.
pub fn uplink_delay_sum<T: Scalar>(task_bits: T, modes: &[ExecutionMode], rates: &[T]) -> T {
    modes
        .iter()
        .zip(rates)
        .filter(|(m, _)| m.is_offloaded())
        .map(|(_, &r)| if r > T::zero() { task_bits / r } else { T::infinity() })
        .sum()
}

/// `Υ[j][k]`: leakage power terminal `k` currently causes at terminal `j`.
/// The diagonal is zero.
pub fn leakage_table<T: Scalar>(scenario: &Scenario<T>, w: &BeamformerSet<T>) -> Vec<Vec<T>> {
    let kk = scenario.num_terminals();
    (0..kk)
        .map(|j| {
            (0..kk)
                .map(|k| {
                    if j == k {
                        T::zero()
                    } else {
                        leakage_power(j, k, w.get(k), &scenario.channels)
                    }
                })
                .collect()
        })
        .collect()
}

/// `K_jk = H^I_jk H^I_jkᴴ`, so that the leakage of `w_k` at `j` is `w_kᴴK_jk w_k`.
#[derive(Clone, Debug)]
pub struct LeakageKernels<T> {
    num_terminals: usize,
    kernels: Vec<Option<CMat<T>>>,
}

impl<T: Scalar> LeakageKernels<T> {
    pub fn new(scenario: &Scenario<T>) -> Self {
        let kk = scenario.num_terminals();
        let mut kernels = Vec::with_capacity(kk * kk);
        for j in 0..kk {
            for k in 0..kk {
                kernels.push((j != k).then(|| {
                    let h = scenario.channels.interference(j, k);
                    h.matmul(&h.adjoint())
                }));
            }
        }
        Self {
            num_terminals: kk,
            kernels,
        }
    }

    pub fn get(&self, j: usize, k: usize) -> &CMat<T> {
        self.kernels[j * self.num_terminals + k]
            .as_ref()
            .expect("no self-leakage kernel")
    }
}

/// Builds terminal `k`'s subproblem around the anchor `w` (the previous
/// iterate).
///
/// `Q = Σ_i c_i² V_i e_i e_iᴴ` and `b = c_k² V_k e_k` over offloading
/// terminals `i`, with `e_i = H_{l_i,k} u_i`.
#[allow(clippy::too_many_arguments)]
pub fn assemble_subproblem<T: Scalar>(
    scenario: &Scenario<T>,
    modes: &[ExecutionMode],
    k: usize,
    w: &BeamformerSet<T>,
    receivers: &Receivers<T>,
    c: &[T],
    caps: &[Vec<T>],
    kernels: &LeakageKernels<T>,
) -> BeamSubproblem<T> {
    let cfg = &scenario.config;
    let n = cfg.terminal_antennas;
    let kk = scenario.num_terminals();
    let mut q = CMat::zeros(n, n);
    let mut b = vec![C::new(T::zero(), T::zero()); n];
    for i in 0..kk {
        let (Some(l), Some(u)) = (modes[i].serving_bs(), receivers.u[i].as_ref()) else {
            continue;
        };
        let e = scenario.channels.uplink(l, k).mul_vec(u);
        let wgt = c[i] * c[i] * receivers.weight[i];
        q.add_outer(C::new(wgt, T::zero()), &e, &e);
        if i == k {
            b = e.iter().map(|z| z * wgt).collect();
        }
    }
    let leakage = (0..kk)
        .filter(|&j| j != k)
        .map(|j| (kernels.get(j, k).clone(), caps[j][k]))
        .collect();

    let a = scenario.steering(k);
    let nn: T = from_usize(n);
    let zeta = scenario.echo_gain[k];
    let gain: T = cast(cfg.sensing_gain());
    let gamma: T = cast(cfg.gamma_r);
    let sigma_k2: T = cast(cfg.sigma_k2());
    let aw = dot(&a, w.get(k));
    let two: T = cast(2.0);
    // Linearization of N|aᴴw|² at the anchor.
    let normal: Vec<C<T>> = a.iter().map(|z| z * aw * (two * nn)).collect();
    let interference: T = (0..kk).filter(|&j| j != k).map(|j| caps[k][j]).sum();
    let threshold = gamma * (interference + sigma_k2) / (gain * zeta * zeta) + nn * aw.norm_sqr();

    BeamSubproblem {
        q,
        b,
        power_budget: cast(cfg.rf_power_budget(modes[k].is_local())),
        leakage,
        sensing: Some(SensingHalfspace { normal, threshold }),
    }
}

/// Fixed-beam baseline: maximum-ratio sensing at the RF budget that fits
/// every execution mode.
pub fn mrs_beamformers<T: Scalar>(scenario: &Scenario<T>) -> BeamformerSet<T> {
    let p: T = cast(scenario.config.rf_power_budget_any_mode());
    BeamformerSet::new(
        (0..scenario.num_terminals())
            .map(|k| {
                let a = scenario.steering(k);
                let s = (p / norm_sqr(&a)).sqrt();
                a.iter().map(|z| z * s).collect()
            })
            .collect(),
    )
}

/// Direction used by the maximum-ratio transmission baseline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MrtDirection {
    /// Column of `H_lk` with the largest norm.
    #[default]
    StrongestColumn,
    /// Dominant left singular vector of `H_lk`.
    DominantSingular,
}

fn strongest_column<T: Scalar>(h: &CMat<T>) -> Vec<C<T>> {
    let best = (0..h.cols())
        .map(|c| (c, norm_sqr(&h.column(c))))
        .fold((0, T::neg_infinity()), |acc, x| if x.1 > acc.1 { x } else { acc })
        .0;
    let v = h.column(best);
    let norm = norm_sqr(&v).sqrt();
    v.iter().map(|z| z / norm).collect()
}

/// Dominant left singular vector of `h` (unit norm), by power iteration on
/// `h hᴴ` started from the strongest column.
fn dominant_direction<T: Scalar>(h: &CMat<T>) -> Vec<C<T>> {
    let hh = h.matmul(&h.adjoint());
    let mut v = strongest_column(h);
    for _ in 0..500 {
        let nv = hh.mul_vec(&v);
        let norm = norm_sqr(&nv).sqrt();
        if !(norm > T::zero()) {
            break;
        }
        v = nv.iter().map(|z| z / norm).collect();
    }
    v
}

/// Fixed-beam baseline: maximum-ratio transmission toward each terminal's
/// nearest BS at the RF budget that fits every execution mode.
pub fn mrt_beamformers<T: Scalar>(scenario: &Scenario<T>, direction: MrtDirection) -> BeamformerSet<T> {
    let p: T = cast(scenario.config.rf_power_budget_any_mode());
    BeamformerSet::new(
        (0..scenario.num_terminals())
            .map(|k| {
                let h = scenario.channels.uplink(scenario.nearest_bs(k), k);
                let d = match direction {
                    MrtDirection::StrongestColumn => strongest_column(h),
                    MrtDirection::DominantSingular => dominant_direction(h),
                };
                d.iter().map(|z| z * p.sqrt()).collect()
            })
            .collect(),
    )
}

/// Minimal powers along the sensing directions that give every terminal an
/// echo SINR of `gamma`; `None` if the target is unreachable.
fn min_powers<T: Scalar>(gkk: &[T], goff: &[Vec<T>], sigma2: T, gamma: T) -> Option<Vec<T>> {
    let kk = gkk.len();
    let mut a = vec![T::zero(); kk * kk];
    let mut rhs = vec![T::zero(); kk];
    for k in 0..kk {
        let d = gamma / gkk[k];
        for j in 0..kk {
            a[k * kk + j] = if j == k { T::one() } else { -d * goff[k][j] };
        }
        rhs[k] = d * sigma2;
    }
    let p = solve_real(&a, kk, &rhs)?;
    p.iter().all(|v| *v > T::zero() && v.is_finite()).then_some(p)
}

/// Feasible starting beamformers: maximum-ratio sensing directions with
/// power control.
///
/// Powers first solve the max-min echo-SINR problem along the fixed
/// directions (bisection on a common target `Γ' ≥ Γ` until one terminal hits
/// its budget), then move toward full power as far as every terminal keeps
/// `Γ`.
pub fn init_beamformers<T: Scalar>(scenario: &Scenario<T>, modes: &[ExecutionMode]) -> Result<BeamformerSet<T>> {
    let cfg = &scenario.config;
    let kk = scenario.num_terminals();
    let n: T = from_usize(cfg.terminal_antennas);
    let gain: T = cast(cfg.sensing_gain());
    let gamma: T = cast(cfg.gamma_r);
    let sigma2: T = cast(cfg.sigma_k2());
    let dirs: Vec<Vec<C<T>>> = (0..kk)
        .map(|k| {
            let a = scenario.steering(k);
            let s = norm_sqr(&a).sqrt();
            a.iter().map(|z| z / s).collect()
        })
        .collect();
    let budget: Vec<T> = modes.iter().map(|m| cast(cfg.rf_power_budget(m.is_local()))).collect();
    if budget.iter().any(|b| !(*b > T::zero())) {
        return Err(Error::BeamformingInfeasible("non-positive RF power budget".into()));
    }
    let gkk: Vec<T> = (0..kk)
        .map(|k| {
            let zeta = scenario.echo_gain[k];
            gain * zeta * zeta * n * dot(&scenario.steering(k), &dirs[k]).norm_sqr()
        })
        .collect();
    let goff: Vec<Vec<T>> = (0..kk)
        .map(|k| {
            (0..kk)
                .map(|j| {
                    if j == k {
                        T::zero()
                    } else {
                        leakage_power(k, j, &dirs[j], &scenario.channels)
                    }
                })
                .collect()
        })
        .collect();
    let fits = |g: T| min_powers(&gkk, &goff, sigma2, g).filter(|p| p.iter().zip(&budget).all(|(a, b)| a <= b));

    let mut p = fits(gamma).ok_or_else(|| {
        Error::BeamformingInfeasible("echo SINR target unreachable with maximum-ratio sensing directions".into())
    })?;
    let (mut lo, mut hi) = (gamma, gamma);
    let two: T = cast(2.0);
    for _ in 0..200 {
        hi *= two;
        match fits(hi) {
            Some(q) => {
                lo = hi;
                p = q;
            }
            None => break,
        }
    }
    if lo < hi {
        for _ in 0..60 {
            let mid = (lo + hi) / two;
            match fits(mid) {
                Some(q) => {
                    lo = mid;
                    p = q;
                }
                None => hi = mid,
            }
        }
    }

    let margin = |p: &[T], k: usize| {
        let inter: T = (0..kk).map(|j| goff[k][j] * p[j]).sum();
        gkk[k] * p[k] - gamma * (inter + sigma2)
    };
    let dp: Vec<T> = budget.iter().zip(&p).map(|(b, q)| *b - *q).collect();
    let mut t = T::one();
    for k in 0..kk {
        let f0 = margin(&p, k);
        let inter: T = (0..kk).map(|j| goff[k][j] * dp[j]).sum();
        let slope = gkk[k] * dp[k] - gamma * inter;
        if slope < T::zero() {
            t = t.min((f0 / -slope).max(T::zero()));
        }
    }
    let powers: Vec<T> = p.iter().zip(&dp).map(|(q, d)| *q + t * *d).collect();
    Ok(BeamformerSet::new(
        dirs.iter()
            .zip(&powers)
            .map(|(d, pw)| d.iter().map(|z| z * pw.sqrt()).collect())
            .collect(),
    ))
}

/// State visible to an observer after each sweep.
#[derive(Clone, Debug)]
pub struct IterationSnapshot<'a, T> {
    pub iter: usize,
    pub w: &'a BeamformerSet<T>,
    pub rates: &'a [T],
    pub c: &'a [T],
    pub objective: T,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct BeamformDiagnostics {
    pub unconstrained: usize,
    pub optimal: usize,
    pub kept_warm_start: usize,
    pub infeasible: usize,
    pub newton_steps: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeamformResult<T> {
    pub w: BeamformerSet<T>,
    /// `Σ Z/R` over offloading terminals, starting with the initial value.
    pub objective_trace: Vec<T>,
    pub iterations: usize,
    pub converged: bool,
    /// `min_k γ_k / Γ − 1` at the returned beamformers.
    pub min_sensing_margin: T,
    pub diagnostics: BeamformDiagnostics,
}

/// Per-terminal scaling down to the RF budget. Returns true if anything
/// changed.
pub fn clip_to_budget<T: Scalar>(scenario: &Scenario<T>, modes: &[ExecutionMode], w: &mut BeamformerSet<T>) -> bool {
    let mut changed = false;
    for (k, m) in modes.iter().enumerate() {
        let p: T = cast(scenario.config.rf_power_budget(m.is_local()));
        let cur = w.tx_power(k);
        if cur > p {
            let s = (p / cur).sqrt();
            let v = w.get(k).iter().map(|z| z * s).collect();
            w.set(k, v);
            changed = true;
        }
    }
    changed
}

/// Smallest `γ_k / Γ − 1` over all terminals.
pub fn min_sensing_margin<T: Scalar>(scenario: &Scenario<T>, w: &BeamformerSet<T>) -> T {
    let gamma: T = cast(scenario.config.gamma_r);
    (0..scenario.num_terminals())
        .map(|k| scenario.echo_sinr(k, w) / gamma - T::one())
        .fold(T::infinity(), T::min)
}

pub fn beamforming_solve<T: Scalar>(
    scenario: &Scenario<T>,
    modes: &[ExecutionMode],
    w0: &BeamformerSet<T>,
    opts: &BeamformOptions,
) -> Result<BeamformResult<T>> {
    beamforming_solve_observed(scenario, modes, w0, opts, &mut |_| {})
}

/// Runs the fractional-programming loop from the feasible point `w0`.
pub fn beamforming_solve_observed<T: Scalar>(
    scenario: &Scenario<T>,
    modes: &[ExecutionMode],
    w0: &BeamformerSet<T>,
    opts: &BeamformOptions,
    observer: &mut dyn FnMut(&IterationSnapshot<T>),
) -> Result<BeamformResult<T>> {
    let kk = scenario.num_terminals();
    if modes.len() != kk || w0.len() != kk {
        return Err(Error::Input(
            "modes and beamformers must have one entry per terminal".into(),
        ));
    }
    let cfg = &scenario.config;
    let sinr_tol: T = cast(opts.sinr_tol);
    for k in 0..kk {
        let budget: T = cast(cfg.rf_power_budget(modes[k].is_local()));
        if w0.tx_power(k) > budget * (T::one() + sinr_tol) {
            return Err(Error::BeamformingInfeasible(format!(
                "terminal {k}: initial beamformer exceeds power budget"
            )));
        }
    }
    let margin0 = min_sensing_margin(scenario, w0);
    if margin0 < -sinr_tol {
        return Err(Error::BeamformingInfeasible(format!(
            "initial beamformers miss the echo SINR target (relative margin {:e})",
            margin0.to_f64().unwrap_or(f64::NAN)
        )));
    }

    let z: T = cast(cfg.task_bits());
    let mut w = w0.clone();
    let mut rates = serving_rates(scenario, modes, &w)?;
    let mut c = update_ratio_aux(z, modes, &rates);
    let mut obj = uplink_delay_sum(z, modes, &rates);
    let mut trace = vec![obj];
    let mut diag = BeamformDiagnostics::default();
    let mut converged = false;
    let mut iterations = 0;

    if modes.iter().any(|m| m.is_offloaded()) {
        let kernels = LeakageKernels::new(scenario);
        let mut caps = leakage_table(scenario, &w);
        let eps: T = cast(opts.eps);
        for it in 1..=opts.max_iter {
            iterations = it;
            let rec = update_receivers(scenario, modes, &w)?;
            let solve = |k: usize| {
                let sub = assemble_subproblem(scenario, modes, k, &w, &rec, &c, &caps, &kernels);
                solve_beam_subproblem(&sub, w.get(k), &opts.barrier)
            };
            let sols: Vec<SubproblemSolution<T>> = if opts.parallel {
                (0..kk).into_par_iter().map(solve).collect()
            } else {
                (0..kk).map(solve).collect()
            };
            let mut next = Vec::with_capacity(kk);
            for s in sols {
                match s.status {
                    SubproblemStatus::Unconstrained => diag.unconstrained += 1,
                    SubproblemStatus::Optimal => diag.optimal += 1,
                    SubproblemStatus::KeptWarmStart => diag.kept_warm_start += 1,
                    SubproblemStatus::Infeasible => diag.infeasible += 1,
                }
                diag.newton_steps += s.newton_steps;
                next.push(s.w);
            }
            w = BeamformerSet::new(next);
            caps = leakage_table(scenario, &w);
            rates = serving_rates(scenario, modes, &w)?;
            c = update_ratio_aux(z, modes, &rates);
            let prev = obj;
            obj = uplink_delay_sum(z, modes, &rates);
            trace.push(obj);
            observer(&IterationSnapshot {
                iter: it,
                w: &w,
                rates: &rates,
                c: &c,
                objective: obj,
            });
            if (prev - obj).abs() <= eps * prev.abs() {
                converged = true;
                break;
            }
        }
    } else {
        converged = true;
    }

    Ok(BeamformResult {
        min_sensing_margin: min_sensing_margin(scenario, &w),
        w,
        objective_trace: trace,
        iterations,
        converged,
        diagnostics: diag,
    })
}

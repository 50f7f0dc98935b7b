//! Independent reference solvers shared by the integration tests.
#![allow(dead_code)]

use iscc_core::beamform::{BeamSubproblem, SensingHalfspace};
use iscc_core::linalg::{dot, norm_sqr, CMat, HermitianCholesky};
use iscc_core::metrics::{BeamformerSet, ExecutionMode};
use iscc_core::offload::CostTable;
use iscc_core::scalar::C;
use iscc_core::scenario::ChannelSet;
use minilp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem};
use rand::Rng;

/// Random cost table with `l` BSs and `k` terminals. MEC capacity admits
/// between 0.5 and 2.5 terminals per BS; power occasionally forces offloading.
pub fn random_costs<R: Rng>(rng: &mut R, l: usize, k: usize) -> CostTable<f64> {
    let t_local: Vec<f64> = (0..k).map(|_| rng.gen_range(0.3..1.0)).collect();
    let t_mec = (0..l)
        .map(|_| (0..k).map(|_| rng.gen_range(0.05..1.2)).collect())
        .collect();
    let t_cloud = (0..l)
        .map(|_| (0..k).map(|_| rng.gen_range(0.05..1.2)).collect())
        .collect();
    let p_offload: Vec<f64> = (0..k).map(|_| rng.gen_range(0.1..0.9)).collect();
    let p_local = p_offload
        .iter()
        .map(|p| {
            if rng.gen_bool(0.2) {
                1.0 + rng.gen_range(0.0..0.1)
            } else {
                p + 0.05
            }
        })
        .collect();
    CostTable {
        t_local,
        t_mec,
        t_cloud,
        p_local,
        p_offload,
        mec_allowed: vec![vec![true; k]; l],
        cloud_allowed: vec![vec![true; k]; l],
        f_mec: vec![1.0; k],
        mec_capacity: (0..l).map(|_| rng.gen_range(0.5..2.5)).collect(),
        p_th: 1.0,
    }
}

/// Optimal value of the relaxed offloading LP, solved by simplex.
pub fn relaxed_lp_optimum(costs: &CostTable<f64>) -> Option<f64> {
    let (nl, nk) = (costs.t_mec.len(), costs.t_local.len());
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let mut a = vec![vec![]; nl];
    let mut b = vec![vec![]; nl];
    for l in 0..nl {
        for k in 0..nk {
            let ua = if costs.mec_allowed[l][k] { 1.0 } else { 0.0 };
            let ub = if costs.cloud_allowed[l][k] { 1.0 } else { 0.0 };
            a[l].push(p.add_var(costs.t_mec[l][k] - costs.t_local[k], (0.0, ua)));
            b[l].push(p.add_var(costs.t_cloud[l][k] - costs.t_local[k], (0.0, ub)));
        }
    }
    for k in 0..nk {
        let mut sum = LinearExpr::empty();
        let mut pow = LinearExpr::empty();
        let dp = costs.p_offload[k] - costs.p_local[k];
        for l in 0..nl {
            sum.add(a[l][k], 1.0);
            sum.add(b[l][k], 1.0);
            pow.add(a[l][k], dp);
            pow.add(b[l][k], dp);
        }
        p.add_constraint(sum, ComparisonOp::Le, 1.0);
        p.add_constraint(pow, ComparisonOp::Le, costs.p_th - costs.p_local[k]);
    }
    for l in 0..nl {
        let mut load = LinearExpr::empty();
        for k in 0..nk {
            load.add(a[l][k], costs.f_mec[k]);
        }
        p.add_constraint(load, ComparisonOp::Le, costs.mec_capacity[l]);
    }
    let sol = p.solve().ok()?;
    Some(sol.objective() + costs.t_local.iter().sum::<f64>())
}

/// Best feasible binary assignment by enumerating all `(2L+1)^K` options.
pub fn exhaustive_best(costs: &CostTable<f64>) -> Option<(Vec<ExecutionMode>, f64)> {
    let (nl, nk) = (costs.t_mec.len(), costs.t_local.len());
    let options: Vec<ExecutionMode> = std::iter::once(ExecutionMode::Local)
        .chain((0..nl).map(ExecutionMode::Mec))
        .chain((0..nl).map(ExecutionMode::Cloud))
        .collect();
    let n = options.len();
    let mut best: Option<(Vec<ExecutionMode>, f64)> = None;
    let mut idx = vec![0usize; nk];
    loop {
        let modes: Vec<ExecutionMode> = idx.iter().map(|&i| options[i]).collect();
        if costs.is_feasible(&modes, 1e-12) {
            let t = costs.assignment_latency(&modes).unwrap();
            if best.as_ref().is_none_or(|(_, b)| t < *b) {
                best = Some((modes, t));
            }
        }
        let mut pos = 0;
        loop {
            if pos == nk {
                return best;
            }
            idx[pos] += 1;
            if idx[pos] < n {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

/// Minimizes `Σ c_k ω_k + ρ/2 Σ (ω_k − t_k)²` over `[0,1]²` with
/// `f·ω ≤ g`. `ω_1` runs over a 10⁴-point grid; for each grid value the best
/// `ω_2` is the unconstrained minimizer clipped to its feasible interval. The
/// grid is then refined around the incumbent three more times.
pub fn grid_capacity_prox(t: [f64; 2], c: [f64; 2], f: [f64; 2], g: f64, rho: f64) -> f64 {
    let value = |w0: f64| -> Option<f64> {
        let upper = ((g - f[0] * w0) / f[1]).min(1.0);
        if upper < 0.0 {
            return None;
        }
        let w1 = (t[1] - c[1] / rho).clamp(0.0, upper);
        Some(c[0] * w0 + c[1] * w1 + 0.5 * rho * ((w0 - t[0]).powi(2) + (w1 - t[1]).powi(2)))
    };
    let n = 10_000;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut best = (0.0, value(0.0).expect("origin is feasible"));
    for _ in 0..4 {
        for i in 0..=n {
            let w0 = lo + (hi - lo) * i as f64 / n as f64;
            if let Some(v) = value(w0) {
                if v < best.1 {
                    best = (w0, v);
                }
            }
        }
        let step = (hi - lo) / n as f64;
        lo = (best.0 - 2.0 * step).max(0.0);
        hi = (best.0 + 2.0 * step).min(1.0);
    }
    best.1
}

/// `B log2 det(I + D⁻¹ g gᴴ)` computed as `B (ln det(D + g gᴴ) − ln det D) / ln 2`.
pub fn logdet_rate(
    l: usize,
    k: usize,
    w: &BeamformerSet<f64>,
    ch: &ChannelSet<f64>,
    bandwidth: f64,
    sigma2: f64,
) -> f64 {
    let m = ch.uplink(l, k).cols();
    let mut d = CMat::<f64>::identity(m).scaled(sigma2);
    for i in 0..ch.num_terminals() {
        if i == k {
            continue;
        }
        let h = ch.uplink(l, i);
        let hh = h.adjoint().matmul(&outer(w.get(i))).matmul(h);
        d = add(&d, &hh);
    }
    let h = ch.uplink(l, k);
    let signal = h.adjoint().matmul(&outer(w.get(k))).matmul(h);
    let full = add(&d, &signal);
    let ld_full = HermitianCholesky::new(&full).unwrap().ln_det();
    let ld = HermitianCholesky::new(&d).unwrap().ln_det();
    bandwidth * (ld_full - ld) / std::f64::consts::LN_2
}

pub fn outer(x: &[C<f64>]) -> CMat<f64> {
    CMat::from_fn(x.len(), x.len(), |i, j| x[i] * x[j].conj())
}

pub fn add(a: &CMat<f64>, b: &CMat<f64>) -> CMat<f64> {
    CMat::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)] + b[(i, j)])
}

pub fn random_cvec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<C<f64>> {
    (0..n)
        .map(|_| C::new(rng.gen_range(-1.0..1.0) * scale, rng.gen_range(-1.0..1.0) * scale))
        .collect()
}

pub fn random_cmat<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> CMat<f64> {
    CMat::from_fn(rows, cols, |_, _| {
        C::new(rng.gen_range(-1.0..1.0) * scale, rng.gen_range(-1.0..1.0) * scale)
    })
}

/// Random N=2 subproblem whose constraints all admit `w0`. The objective is
/// kept at O(0.1) so a 0.02 grid resolves it to about 1e-3.
pub fn random_subproblem<R: Rng>(rng: &mut R) -> (BeamSubproblem<f64>, Vec<C<f64>>) {
    let a = random_cmat(rng, 2, 2, 0.15);
    let mut q = a.matmul(&a.adjoint());
    q.add_diag(rng.gen_range(0.0..0.005));
    let b = random_cvec(rng, 2, 0.04);
    let w0 = {
        let v = random_cvec(rng, 2, 1.0);
        let s = (rng.gen_range(0.2..0.9) / norm_sqr(&v)).sqrt();
        v.iter().map(|z| z * s).collect::<Vec<_>>()
    };
    let leakage = (0..2)
        .map(|_| {
            let h = random_cmat(rng, 2, 2, 1.0);
            let kmat = h.matmul(&h.adjoint());
            let cap = kmat.quad_form(&w0) * rng.gen_range(1.0..2.0);
            (kmat, cap)
        })
        .collect();
    let normal = random_cvec(rng, 2, 1.0);
    let threshold = dot(&normal, &w0).re - rng.gen_range(0.0..0.3);
    (
        BeamSubproblem {
            q,
            b,
            power_budget: 1.0,
            leakage,
            sensing: Some(SensingHalfspace { normal, threshold }),
        },
        w0,
    )
}

pub fn herm2(a: &CMat<f64>, w: [C<f64>; 2]) -> f64 {
    let mut acc = C::new(0.0, 0.0);
    for i in 0..2 {
        for j in 0..2 {
            acc += w[i].conj() * a[(i, j)] * w[j];
        }
    }
    acc.re
}

/// Minimum over a grid of step 0.02 on the 4 real coordinates, evaluating
/// objective and constraints directly.
pub fn grid_minimum(sub: &BeamSubproblem<f64>) -> f64 {
    let pts: Vec<f64> = (0..=100).map(|i| -1.0 + 0.02 * i as f64).collect();
    let sens = sub.sensing.as_ref().unwrap();
    let mut best = f64::INFINITY;
    for &x0 in &pts {
        for &x1 in &pts {
            let r01 = x0 * x0 + x1 * x1;
            if r01 > sub.power_budget {
                continue;
            }
            for &x2 in &pts {
                let r012 = r01 + x2 * x2;
                if r012 > sub.power_budget {
                    continue;
                }
                for &x3 in &pts {
                    if r012 + x3 * x3 > sub.power_budget {
                        continue;
                    }
                    let w = [C::new(x0, x2), C::new(x1, x3)];
                    let lin = sub.b[0].conj() * w[0] + sub.b[1].conj() * w[1];
                    let f = herm2(&sub.q, w) - 2.0 * lin.re;
                    if f >= best {
                        continue;
                    }
                    let s = sens.normal[0].conj() * w[0] + sens.normal[1].conj() * w[1];
                    if s.re < sens.threshold {
                        continue;
                    }
                    if sub.leakage.iter().all(|(k, cap)| herm2(k, w) <= *cap) {
                        best = f;
                    }
                }
            }
        }
    }
    best
}

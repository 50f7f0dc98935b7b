//! Acceptance report: one PASS/FAIL line per criterion, plus INFO lines
//! that are not counted.
//!
//! Runs without the libtest harness so the lines always reach the console.
//! The process exits 0 regardless of the outcome unless `ACCEPTANCE_STRICT=1`
//! is set, so a red criterion does not hide the remaining test targets.

mod common;

use std::time::Instant;

use common::{
    exhaustive_best, grid_capacity_prox, grid_minimum, logdet_rate, random_cmat, random_costs, random_cvec,
    random_subproblem, relaxed_lp_optimum,
};
use iscc_core::beamform::{
    beamforming_solve, beamforming_solve_observed, init_beamformers, solve_beam_subproblem, update_receivers,
    BarrierOptions, BeamSubproblem, BeamformOptions, SubproblemStatus,
};
use iscc_core::driver::{run_scheme, BcdOptions, SchemeId, SolutionRecord};
use iscc_core::linalg::norm_sqr;
use iscc_core::metrics::{latency, BeamformerSet, ExecutionMode};
use iscc_core::offload::{admm_solve, capacity_prox, round_decisions, AdmmOptions, RoundingOptions};
use iscc_core::scalar::{db_to_linear, C};
use iscc_core::scenario::{build_scenario, Scenario, SystemConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Echo processing gain of the supplementary runs, dB.
const SUPP_GAIN_DB: f64 = 30.0;

struct Report {
    failed: Vec<u32>,
    passed: usize,
}

impl Report {
    fn check(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        println!("{} #{id:<2} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
        if pass {
            self.passed += 1;
        } else {
            self.failed.push(id);
        }
    }

    fn info(&self, id: u32, detail: String) {
        println!("INFO #{id:<2} {detail}");
    }
}

fn reference() -> SystemConfig {
    SystemConfig::default()
}

fn with_gain(cfg: SystemConfig) -> SystemConfig {
    SystemConfig {
        sensing_gain_db: SUPP_GAIN_DB,
        ..cfg
    }
}

fn nearest_offload(sc: &Scenario<f64>) -> Vec<ExecutionMode> {
    (0..sc.num_terminals())
        .map(|k| ExecutionMode::Mec(sc.nearest_bs(k)))
        .collect()
}

/// The first `n` seeds whose all-offload assignment admits a feasible
/// beamformer initialization, and how many seeds were scanned.
fn runnable_seeds(cfg: &SystemConfig, n: usize) -> (Vec<u64>, u64) {
    let mut seeds = Vec::new();
    let mut scanned = 0;
    while seeds.len() < n {
        let sc = build_scenario::<f64>(cfg, scanned).unwrap();
        if init_beamformers(&sc, &nearest_offload(&sc)).is_ok() {
            seeds.push(scanned);
        }
        scanned += 1;
    }
    (seeds, scanned)
}

fn solve(scheme: SchemeId, cfg: &SystemConfig, seed: u64) -> SolutionRecord<f64> {
    let sc = build_scenario::<f64>(cfg, seed).unwrap();
    run_scheme(scheme, &sc, &BcdOptions::default()).unwrap()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut r = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        for &t in &idx[i..=j] {
            r[t] = (i + j) as f64 / 2.0 + 1.0;
        }
        i = j + 1;
    }
    r
}

/// Spearman rank correlation (Pearson on average ranks); NaN when either
/// side is constant.
fn spearman(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (ranks(x), ranks(y));
    let (mx, my) = (mean(&rx), mean(&ry));
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn mse_weight_rate_identity(rep: &mut Report) {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for seed in 0..100 {
        let (k, n, m) = (rng.gen_range(1..=4), rng.gen_range(1..=4), rng.gen_range(1..=8));
        let cfg = SystemConfig {
            num_bs: 2,
            num_terminals: k,
            bs_antennas: m,
            terminal_antennas: n,
            ..reference()
        };
        let sc = build_scenario::<f64>(&cfg, seed).unwrap();
        let w = BeamformerSet::new(
            (0..k)
                .map(|_| {
                    let scale = rng.gen_range(0.05..1.0);
                    random_cvec(&mut rng, n, scale)
                })
                .collect(),
        );
        let modes: Vec<_> = (0..k).map(|_| ExecutionMode::Mec(rng.gen_range(0..2))).collect();
        let rec = update_receivers(&sc, &modes, &w).unwrap();
        for (i, mode) in modes.iter().enumerate() {
            let l = mode.serving_bs().unwrap();
            let oracle = logdet_rate(l, i, &w, &sc.channels, cfg.bandwidth_hz, cfg.sigma_b2());
            worst = worst.max((cfg.bandwidth_hz * rec.weight[i].log2() - oracle).abs() / oracle);
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    rep.check(
        1,
        "MSE-weight rate identity",
        worst <= 1e-9 && secs < 10.0,
        format!("100 scenarios, worst relative gap {worst:.2e} (tol 1e-9), {secs:.2} s (limit 10 s)"),
    );
}

fn quadratic_transform_tightness(rep: &mut Report) {
    let cfg = with_gain(reference());
    let z = cfg.task_bits();
    let mut worst = 0.0f64;
    let mut updates = 0usize;
    let mut runs = 0;
    let (seeds, scanned) = runnable_seeds(&cfg, 50);
    for seed in seeds {
        let sc = build_scenario::<f64>(&cfg, seed).unwrap();
        let modes = nearest_offload(&sc);
        let w0 = init_beamformers(&sc, &modes).unwrap();
        let res = beamforming_solve_observed(&sc, &modes, &w0, &BeamformOptions::default(), &mut |s| {
            for (k, m) in modes.iter().enumerate() {
                if m.is_offloaded() {
                    let (c, r) = (s.c[k], s.rates[k]);
                    worst = worst.max(((2.0 * z.sqrt() * c - c * c * r) - z / r).abs());
                    updates += 1;
                }
            }
        });
        if res.is_ok() {
            runs += 1;
        }
    }
    rep.check(
        2,
        "quadratic-transform tightness",
        runs == 50 && worst <= 1e-12,
        format!(
            "{runs}/50 runs at K=9/L=3 with {SUPP_GAIN_DB} dB echo gain (first 50 of {scanned} seeds with a feasible start), \
             {updates} c-updates, worst gap {worst:.2e} s (tol 1e-12)"
        ),
    );
}

fn admm_gaps(eps: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let (mut gap, mut resid) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let k = rng.gen_range(1..=3);
        let costs = random_costs(&mut rng, 2, k);
        let r = admm_solve(
            &costs,
            &AdmmOptions {
                eps,
                ..Default::default()
            },
        )
        .unwrap();
        let lp = relaxed_lp_optimum(&costs).expect("LP feasible");
        gap = gap.max((r.objective - lp).abs());
        resid = resid.max(*r.residual_history.last().unwrap());
    }
    (gap, resid)
}

fn admm_oracle(rep: &mut Report) {
    let (gap, resid) = admm_gaps(AdmmOptions::default().eps);
    rep.check(
        3,
        "ADMM vs LP oracle",
        gap <= 1e-4 && resid <= 1e-4,
        format!("50 tables K<=3 L=2, worst objective gap {gap:.2e} (tol 1e-4), worst residual {resid:.2e} (tol 1e-4)"),
    );
    let (gap, resid) = admm_gaps(1e-5);
    rep.info(
        3,
        format!("same tables with stopping tolerance 1e-5: worst gap {gap:.2e}, worst residual {resid:.2e}"),
    );
}

fn local_update_exactness(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut worst = 0.0f64;
    let mut cap_ok = true;
    for _ in 0..50 {
        let t: [f64; 2] = [rng.gen_range(-0.5..1.5), rng.gen_range(-0.5..1.5)];
        let c = [rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)];
        let f = [rng.gen_range(0.5..2.0), rng.gen_range(0.5..2.0)];
        let g = rng.gen_range(0.2..2.0);
        let (w, _) = capacity_prox(&t, &c, &[1.0, 1.0], &f, g, 1.0);
        let obj: f64 = (0..2).map(|i| c[i] * w[i] + 0.5 * (w[i] - t[i]).powi(2)).sum();
        let grid = grid_capacity_prox(t, c, f, g, 1.0);
        worst = worst.max((obj - grid).abs());
        cap_ok &= f[0] * w[0] + f[1] * w[1] <= g * (1.0 + 1e-12);
    }
    rep.check(
        4,
        "local update vs grid oracle",
        worst <= 1e-6 && cap_ok,
        format!("50 instances K=2, worst |closed form - grid| {worst:.2e} (tol 1e-6), capacity respected: {cap_ok}"),
    );
}

fn rounding_quality(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst = 0.0f64;
    let mut feasible = 0;
    for _ in 0..30 {
        let costs = random_costs(&mut rng, 2, 5);
        let r = admm_solve(&costs, &AdmmOptions::default()).unwrap();
        let rounded = round_decisions(&r.a, &r.b, &costs, &RoundingOptions::default());
        if costs.is_feasible(&rounded.modes, 1e-9) {
            feasible += 1;
            let (_, best) = exhaustive_best(&costs).unwrap();
            worst = worst.max(costs.assignment_latency(&rounded.modes).unwrap() / best - 1.0);
        }
    }
    rep.check(
        5,
        "rounding quality",
        feasible == 30 && worst <= 0.10,
        format!(
            "30 tables K=5 L=2, feasible {feasible}/30, worst gap to enumeration {:.2}% (limit 10%)",
            100.0 * worst
        ),
    );
}

fn beam_subproblem_oracle(rep: &mut Report) {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let (mut worst, mut viol) = (0.0f64, 0.0f64);
    for _ in 0..20 {
        let (sub, w0) = random_subproblem(&mut rng);
        let sol = solve_beam_subproblem(&sub, &w0, &BarrierOptions::default());
        worst = worst.max((sub.objective(&sol.w) - grid_minimum(&sub)).abs());
        viol = viol.max(sub.max_violation(&sol.w));
    }
    let mut exact = 0.0f64;
    let mut all_unconstrained = true;
    for _ in 0..20 {
        let a = random_cmat(&mut rng, 3, 3, 1.0);
        let mut q = a.matmul(&a.adjoint());
        q.add_diag(1.0);
        let target = random_cvec(&mut rng, 3, 0.2);
        let sub = BeamSubproblem {
            b: q.mul_vec(&target),
            q,
            power_budget: 1.0,
            leakage: vec![],
            sensing: None,
        };
        let sol = solve_beam_subproblem(&sub, &[C::new(0.0, 0.0); 3], &BarrierOptions::default());
        all_unconstrained &= sol.status == SubproblemStatus::Unconstrained;
        let d: Vec<C<f64>> = sol.w.iter().zip(&target).map(|(x, y)| x - y).collect();
        exact = exact.max(norm_sqr(&d).sqrt());
    }
    rep.check(
        6,
        "beam subproblem vs grid oracle",
        worst <= 1e-3 && viol <= 1e-9 && exact <= 1e-7 && all_unconstrained,
        format!(
            "20 grid instances N=2 step 0.02: worst gap {worst:.2e} (tol 1e-3), violation {viol:.1e}; \
             20 interior instances: max |w - Q^-1 b| {exact:.1e} (tol 1e-7)"
        ),
    );
}

fn monotone_convergence(rep: &mut Report) {
    let cfg = with_gain(reference());
    let opts = BeamformOptions {
        max_iter: 20,
        eps: 1e-4,
        ..Default::default()
    };
    let (mut monotone, mut converged, mut runs) = (true, 0, 0);
    let mut worst_rise = 0.0f64;
    let (seeds, scanned) = runnable_seeds(&cfg, 50);
    for &seed in &seeds {
        let sc = build_scenario::<f64>(&cfg, seed).unwrap();
        let modes = nearest_offload(&sc);
        let w0 = init_beamformers(&sc, &modes).unwrap();
        let Ok(r) = beamforming_solve(&sc, &modes, &w0, &opts) else {
            continue;
        };
        runs += 1;
        for win in r.objective_trace.windows(2) {
            worst_rise = worst_rise.max((win[1] - win[0]) / win[0]);
        }
        monotone &= worst_rise <= 1e-6;
        if r.objective_trace
            .windows(2)
            .take(20)
            .any(|w| (w[0] - w[1]).abs() <= 1e-4 * w[0])
        {
            converged += 1;
        }
    }
    let t0 = Instant::now();
    let rec = solve(SchemeId::DcetIscc, &cfg, 0);
    let bcd_s = t0.elapsed().as_secs_f64();
    rep.check(
        7,
        "monotone FP convergence",
        runs == 50 && monotone && converged * 10 >= 9 * 50 && bcd_s < 60.0 && !rec.fell_back,
        format!(
            "K=9/L=3 with {SUPP_GAIN_DB} dB echo gain, first 50 of {scanned} seeds with a feasible start: {runs}/50 runs, worst relative rise {worst_rise:.1e} (tol 1e-6), \
             converged within 20 iterations on {converged}/50 (need 45), full BCD run {bcd_s:.2} s (limit 60 s)"
        ),
    );

    let init_ok = (0..50)
        .filter(|&s| {
            let sc = build_scenario::<f64>(&reference(), s).unwrap();
            init_beamformers(&sc, &nearest_offload(&sc)).is_ok()
        })
        .count();
    rep.info(
        7,
        format!("at 0 dB echo gain a feasible initialization exists on {init_ok}/50 seeds"),
    );
    let long = BeamformOptions {
        max_iter: 400,
        eps: 1e-4,
        ..Default::default()
    };
    let mut needed = Vec::new();
    for &seed in &seeds[..5] {
        let sc = build_scenario::<f64>(&cfg, seed).unwrap();
        let modes = nearest_offload(&sc);
        let w0 = init_beamformers(&sc, &modes).unwrap();
        let r = beamforming_solve(&sc, &modes, &w0, &long).unwrap();
        needed.push(if r.converged {
            r.iterations.to_string()
        } else {
            ">400".into()
        });
    }
    rep.info(
        7,
        format!(
            "iterations to reach 1e-4 relative change on seeds {:?}: {}",
            &seeds[..5],
            needed.join(", ")
        ),
    );
}

fn arithmetic_anchors(rep: &mut Report) {
    let cfg = reference();
    let local = solve(SchemeId::LocalOnly, &cfg, 0).mean_latency();
    let cloud = latency(0, ExecutionMode::Cloud(0), 1e9_f64, &cfg).unwrap().t_backhaul;
    let mec = latency(0, ExecutionMode::Mec(0), 1e9_f64, &cfg).unwrap().t_exec;
    rep.check(
        8,
        "arithmetic anchors",
        (local - 0.65536).abs() <= 1e-12 && (cloud - 0.08192).abs() <= 1e-12 && (mec - 0.10923).abs() <= 1e-5,
        format!("LOCAL_ONLY mean {local:.12} s (0.65536), backhaul {cloud:.12} s (0.08192), MEC compute {mec:.8} s (0.10923 +- 1e-5)"),
    );
}

struct Ordering {
    local: f64,
    et: f64,
    dcet: f64,
    strictly: usize,
    fell_back: usize,
}

fn ordering(cfg: &SystemConfig) -> Ordering {
    let (mut l, mut e, mut d) = (Vec::new(), Vec::new(), Vec::new());
    let (mut strictly, mut fell_back) = (0, 0);
    for seed in 0..50 {
        let sc = build_scenario::<f64>(cfg, seed).unwrap();
        let opts = BcdOptions::default();
        let local = run_scheme(SchemeId::LocalOnly, &sc, &opts).unwrap().mean_latency();
        let et = run_scheme(SchemeId::EtIscc, &sc, &opts).unwrap();
        let dcet = run_scheme(SchemeId::DcetIscc, &sc, &opts).unwrap();
        if dcet.mean_latency() < et.mean_latency() * (1.0 - 1e-3) {
            strictly += 1;
        }
        fell_back += usize::from(dcet.fell_back) + usize::from(et.fell_back);
        l.push(local);
        e.push(et.mean_latency());
        d.push(dcet.mean_latency());
    }
    Ordering {
        local: mean(&l),
        et: mean(&e),
        dcet: mean(&d),
        strictly,
        fell_back,
    }
}

fn ordering_holds(o: &Ordering) -> bool {
    o.local >= o.et * (1.0 - 1e-3) && o.et >= o.dcet * (1.0 - 1e-3) && o.strictly * 10 >= 6 * 50
}

fn ordering_detail(o: &Ordering) -> String {
    format!(
        "mean latency LOCAL {:.5} / ET {:.5} / DCET {:.5} s (gaps >= -1e-3 rel), DCET beats ET by >1e-3 on {}/50 seeds (need 30), {} fallbacks",
        o.local, o.et, o.dcet, o.strictly, o.fell_back
    )
}

fn scheme_ordering(rep: &mut Report) {
    let tight = SystemConfig {
        mec_capacity_hz: 4.5e9,
        ..reference()
    };
    let o = ordering(&tight);
    rep.check(
        9,
        "scheme ordering (G_l = 4.5 Gcycles/s)",
        ordering_holds(&o),
        ordering_detail(&o),
    );
    let o = ordering(&with_gain(tight));
    rep.info(
        9,
        format!(
            "with {SUPP_GAIN_DB} dB echo gain (not counted): {} -> {}",
            ordering_detail(&o),
            if ordering_holds(&o) { "holds" } else { "fails" }
        ),
    );
}

struct GammaSweep {
    means: Vec<f64>,
    rho: f64,
    solutions: usize,
    below: usize,
    below_solved: usize,
    fell_back: usize,
}

impl GammaSweep {
    fn run(cfg: &SystemConfig, seeds: u64) -> Self {
        let gammas = [2.0, 4.0, 6.0, 8.0, 10.0];
        let mut out = GammaSweep {
            means: Vec::new(),
            rho: 0.0,
            solutions: 0,
            below: 0,
            below_solved: 0,
            fell_back: 0,
        };
        for g in gammas {
            let c = SystemConfig {
                gamma_r: db_to_linear(g),
                ..cfg.clone()
            };
            let mut lat = Vec::new();
            for seed in 0..seeds {
                let rec = solve(SchemeId::DcetIscc, &c, seed);
                lat.push(rec.mean_latency());
                let min_db = rec
                    .terminals
                    .iter()
                    .map(|t| 10.0 * t.sensing_sinr.log10())
                    .fold(f64::INFINITY, f64::min);
                let below = min_db < g - 0.01;
                out.solutions += 1;
                out.below += usize::from(below);
                out.below_solved += usize::from(below && !rec.fell_back);
                out.fell_back += usize::from(rec.fell_back);
            }
            out.means.push(mean(&lat));
        }
        out.rho = spearman(&gammas, &out.means);
        out
    }

    fn pass(&self) -> bool {
        self.rho >= 0.9 && self.below == 0
    }

    fn detail(&self) -> String {
        format!(
            "Gamma_r 2..10 dB means {:?} s, Spearman {:.3} (need >= 0.9), {}/{} solutions below Gamma_r - 0.01 dB \
             ({} of them solved, {} all-local fallbacks in total)",
            self.means.iter().map(|m| (m * 1e5).round() / 1e5).collect::<Vec<_>>(),
            self.rho,
            self.below,
            self.solutions,
            self.below_solved,
            self.fell_back
        )
    }
}

fn sensing_tradeoff(rep: &mut Report) {
    let s = GammaSweep::run(&reference(), 50);
    rep.check(10, "sensing trade-off", s.pass(), s.detail());
    let s = GammaSweep::run(&with_gain(reference()), 20);
    rep.info(
        10,
        format!(
            "with {SUPP_GAIN_DB} dB echo gain, 20 seeds (not counted): {}",
            s.detail()
        ),
    );
}

fn beamforming_value_at(cfg: &SystemConfig) -> (usize, usize, usize) {
    let (mut both, mut vs_mrt, mut vs_mrs) = (0, 0, 0);
    for seed in 0..50 {
        let d = solve(SchemeId::DcetIscc, cfg, seed).mean_latency();
        let t = solve(SchemeId::DcetMrt, cfg, seed).mean_latency();
        let s = solve(SchemeId::DcetMrs, cfg, seed).mean_latency();
        let (a, b) = (d <= t * (1.0 + 1e-12), d <= s * (1.0 + 1e-12));
        vs_mrt += usize::from(a);
        vs_mrs += usize::from(b);
        both += usize::from(a && b);
    }
    (both, vs_mrt, vs_mrs)
}

fn beamforming_value(rep: &mut Report) {
    let (both, t, s) = beamforming_value_at(&reference());
    rep.check(
        11,
        "beamforming value (P_th = 30 dBm)",
        both * 10 >= 9 * 50,
        format!("DCET <= MRT and MRS on {both}/50 seeds (need 45); <= MRT {t}/50, <= MRS {s}/50"),
    );
    let (both, t, s) = beamforming_value_at(&with_gain(reference()));
    rep.info(
        11,
        format!(
            "with {SUPP_GAIN_DB} dB echo gain (not counted): DCET <= both on {both}/50; <= MRT {t}/50, <= MRS {s}/50"
        ),
    );
}

fn main() {
    let t0 = Instant::now();
    let mut rep = Report {
        failed: Vec::new(),
        passed: 0,
    };
    mse_weight_rate_identity(&mut rep);
    quadratic_transform_tightness(&mut rep);
    admm_oracle(&mut rep);
    local_update_exactness(&mut rep);
    rounding_quality(&mut rep);
    beam_subproblem_oracle(&mut rep);
    monotone_convergence(&mut rep);
    arithmetic_anchors(&mut rep);
    scheme_ordering(&mut rep);
    sensing_tradeoff(&mut rep);
    beamforming_value(&mut rep);
    println!(
        "acceptance: {} passed, {} failed {:?} ({:.1} s)",
        rep.passed,
        rep.failed.len(),
        rep.failed,
        t0.elapsed().as_secs_f64()
    );
    if !rep.failed.is_empty() && std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1") {
        std::process::exit(1);
    }
}

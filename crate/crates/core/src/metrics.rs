//! Physical-layer and cost evaluation: interference covariance, uplink rate,
//! echo SINR, latency, power and energy.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm_sqr, CMat, HermitianCholesky};
use crate::scalar::{cast, from_usize, Scalar, C};
use crate::scenario::{ChannelSet, Scenario, SystemConfig, TxPowerModel};

/// One transmit beamformer per terminal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamformerSet<T> {
    w: Vec<Vec<C<T>>>,
}

impl<T: Scalar> BeamformerSet<T> {
    pub fn new(w: Vec<Vec<C<T>>>) -> Self {
        Self { w }
    }

    pub fn zeros(num_terminals: usize, n: usize) -> Self {
        Self {
            w: vec![vec![C::new(T::zero(), T::zero()); n]; num_terminals],
        }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn get(&self, k: usize) -> &[C<T>] {
        &self.w[k]
    }

    pub fn set(&mut self, k: usize, w: Vec<C<T>>) {
        self.w[k] = w;
    }

    pub fn as_slice(&self) -> &[Vec<C<T>>] {
        &self.w
    }

    /// `‖w_k‖²`.
    pub fn tx_power(&self, k: usize) -> T {
        norm_sqr(&self.w[k])
    }
}

/// Where a terminal's sensing task is executed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ExecutionMode {
    Local,
    /// MEC server co-located with the given BS.
    Mec(usize),
    /// Cloud, reached through the given BS.
    Cloud(usize),
}

impl ExecutionMode {
    pub fn serving_bs(self) -> Option<usize> {
        match self {
            ExecutionMode::Local => None,
            ExecutionMode::Mec(l) | ExecutionMode::Cloud(l) => Some(l),
        }
    }

    pub fn is_offloaded(self) -> bool {
        self != ExecutionMode::Local
    }

    pub fn is_local(self) -> bool {
        self == ExecutionMode::Local
    }

    /// Compact label used in CSV output, e.g. `L`, `E2`, `C0`.
    pub fn label(self) -> String {
        match self {
            ExecutionMode::Local => "L".into(),
            ExecutionMode::Mec(l) => format!("E{l}"),
            ExecutionMode::Cloud(l) => format!("C{l}"),
        }
    }

    pub fn parse_label(s: &str) -> Option<Self> {
        match s.as_bytes().first()? {
            b'L' if s.len() == 1 => Some(ExecutionMode::Local),
            b'E' => s[1..].parse().ok().map(ExecutionMode::Mec),
            b'C' => s[1..].parse().ok().map(ExecutionMode::Cloud),
            _ => None,
        }
    }
}

impl std::fmt::Display for ExecutionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExecutionMode::Local => write!(f, "Local"),
            ExecutionMode::Mec(l) => write!(f, "Mec({l})"),
            ExecutionMode::Cloud(l) => write!(f, "Cloud({l})"),
        }
    }
}

/// Latency components of one task, seconds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatencyBreakdown<T> {
    pub t_up: T,
    pub t_exec: T,
    pub t_backhaul: T,
    pub total: T,
}

/// `D_lk = Σ_{i≠k} H_liᴴ w_i w_iᴴ H_li + σ_b² I` at BS `l`.
pub fn interference_plus_noise<T: Scalar>(
    l: usize,
    k: usize,
    w: &BeamformerSet<T>,
    ch: &ChannelSet<T>,
    sigma_b2: T,
) -> CMat<T> {
    let m = ch.uplink(l, k).cols();
    let mut d = CMat::identity(m).scaled(sigma_b2);
    let one = C::new(T::one(), T::zero());
    for i in (0..ch.num_terminals()).filter(|&i| i != k) {
        let g = ch.uplink(l, i).adjoint_mul_vec(w.get(i));
        d.add_outer(one, &g, &g);
    }
    d
}

/// Uplink rate of terminal `k` at BS `l` in bit/s,
/// `B log2(1 + w_kᴴ H_lk D⁻¹ H_lkᴴ w_k)`.
pub fn uplink_rate<T: Scalar>(
    l: usize,
    k: usize,
    w: &BeamformerSet<T>,
    ch: &ChannelSet<T>,
    bandwidth: T,
    sigma_b2: T,
) -> Result<T> {
    let d = interference_plus_noise(l, k, w, ch, sigma_b2);
    let chol = HermitianCholesky::new(&d)?;
    let g = ch.uplink(l, k).adjoint_mul_vec(w.get(k));
    let sinr = chol.inv_quad_form(&g).max(T::zero());
    Ok(bandwidth * sinr.ln_1p() / T::LN_2())
}

/// Uplink rate of every terminal at every BS, indexed `[l][k]`.
pub fn rate_table<T: Scalar>(
    w: &BeamformerSet<T>,
    ch: &ChannelSet<T>,
    bandwidth: T,
    sigma_b2: T,
) -> Result<Vec<Vec<T>>> {
    (0..ch.num_bs())
        .map(|l| {
            (0..ch.num_terminals())
                .map(|k| uplink_rate(l, k, w, ch, bandwidth, sigma_b2))
                .collect()
        })
        .collect()
}

/// Interference power `‖H^I_kjᴴ w_j‖²` that terminal `j` causes at terminal `k`'s
/// radar receiver.
pub fn leakage_power<T: Scalar>(k: usize, j: usize, w_j: &[C<T>], ch: &ChannelSet<T>) -> T {
    norm_sqr(&ch.interference(k, j).adjoint_mul_vec(w_j))
}

/// Echo SINR of terminal `k`,
/// `ζ² N |aᴴw_k|² / (Σ_{j≠k} ‖H^I_kjᴴ w_j‖² + σ_k²)`.
pub fn sensing_sinr<T: Scalar>(
    k: usize,
    w: &BeamformerSet<T>,
    ch: &ChannelSet<T>,
    zeta: T,
    steering: &[C<T>],
    sigma_k2: T,
) -> T {
    let n: T = from_usize(steering.len());
    let num = zeta * zeta * n * dot(steering, w.get(k)).norm_sqr();
    let interference: T = (0..ch.num_terminals())
        .filter(|&j| j != k)
        .map(|j| leakage_power(k, j, w.get(j), ch))
        .sum();
    num / (interference + sigma_k2)
}

/// Latency of one task executed in `mode` with uplink rate `rate` (ignored
/// for `Local`).
pub fn latency<T: Scalar>(k: usize, mode: ExecutionMode, rate: T, cfg: &SystemConfig) -> Result<LatencyBreakdown<T>> {
    let z: T = cast(cfg.task_bits());
    let cycles = cast::<T>(cfg.beta_cycles_per_bit) * z;
    let zero = T::zero();
    let up = |rate: T| {
        if rate > zero && rate.is_finite() {
            Ok(z / rate)
        } else {
            Err(Error::InfeasibleMode {
                terminal: k,
                mode: mode.to_string(),
                rate: rate.to_f64().unwrap_or(f64::NAN),
            })
        }
    };
    let (t_up, t_exec, t_backhaul) = match mode {
        ExecutionMode::Local => (zero, cycles / cast(cfg.f_local_hz), zero),
        ExecutionMode::Mec(_) => (up(rate)?, cycles / cast(cfg.f_mec_hz), zero),
        ExecutionMode::Cloud(_) => (
            up(rate)?,
            cycles / cast(cfg.f_cloud_hz),
            z / cast(cfg.backhaul_rate_bps),
        ),
    };
    Ok(LatencyBreakdown {
        t_up,
        t_exec,
        t_backhaul,
        total: t_up + t_backhaul + t_exec,
    })
}

/// RF power of a beamformer under the configured power model.
pub fn rf_power<T: Scalar>(w_k: &[C<T>], cfg: &SystemConfig) -> T {
    let p = norm_sqr(w_k);
    match cfg.tx_power_model {
        TxPowerModel::SquaredNorm => p,
        TxPowerModel::FourthPower => p * p,
    }
}

/// Total terminal power: RF power plus `η f_L³` when computing locally.
pub fn power_total<T: Scalar>(mode: ExecutionMode, w_k: &[C<T>], cfg: &SystemConfig) -> T {
    let rf = rf_power(w_k, cfg);
    match mode {
        ExecutionMode::Local => rf + cast(cfg.local_cpu_power()),
        _ => rf,
    }
}

pub fn energy<T: Scalar>(power: T, latency_total: T) -> T {
    power * latency_total
}

/// Sum and mean of per-terminal latencies. `rates[k]` is terminal `k`'s rate
/// at its serving BS.
pub fn objective_total_latency<T: Scalar>(modes: &[ExecutionMode], rates: &[T], cfg: &SystemConfig) -> Result<(T, T)> {
    let mut sum = T::zero();
    for (k, (&mode, &rate)) in modes.iter().zip(rates).enumerate() {
        sum += latency(k, mode, rate, cfg)?.total;
    }
    let mean = if modes.is_empty() {
        T::zero()
    } else {
        sum / from_usize(modes.len())
    };
    Ok((sum, mean))
}

/// Everything reported for one terminal of a solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerminalMetrics<T> {
    pub mode: ExecutionMode,
    /// Rate at the serving BS, zero for `Local`.
    pub rate: T,
    pub latency: LatencyBreakdown<T>,
    pub power: T,
    pub energy: T,
    /// Echo SINR including the configured processing gain, linear.
    pub sensing_sinr: T,
}

impl<T: Scalar> Scenario<T> {
    /// Echo SINR of terminal `k` including the configured processing gain.
    pub fn echo_sinr(&self, k: usize, w: &BeamformerSet<T>) -> T {
        let sigma_k2: T = cast(self.config.sigma_k2());
        let gain: T = cast(self.config.sensing_gain());
        gain * sensing_sinr(k, w, &self.channels, self.echo_gain[k], &self.steering(k), sigma_k2)
    }

    /// Uplink rate of terminal `k` at BS `l`.
    pub fn rate(&self, l: usize, k: usize, w: &BeamformerSet<T>) -> Result<T> {
        uplink_rate(
            l,
            k,
            w,
            &self.channels,
            cast(self.config.bandwidth_hz),
            cast(self.config.sigma_b2()),
        )
    }

    pub fn rate_table(&self, w: &BeamformerSet<T>) -> Result<Vec<Vec<T>>> {
        rate_table(
            w,
            &self.channels,
            cast(self.config.bandwidth_hz),
            cast(self.config.sigma_b2()),
        )
    }

    /// Evaluates every terminal from scratch.
    pub fn evaluate(&self, modes: &[ExecutionMode], w: &BeamformerSet<T>) -> Result<Vec<TerminalMetrics<T>>> {
        if modes.len() != self.num_terminals() || w.len() != self.num_terminals() {
            return Err(Error::Input(
                "modes and beamformers must have one entry per terminal".into(),
            ));
        }
        modes
            .iter()
            .enumerate()
            .map(|(k, &mode)| {
                let rate = match mode.serving_bs() {
                    Some(l) if l < self.num_bs() => self.rate(l, k, w)?,
                    Some(l) => return Err(Error::Input(format!("terminal {k}: BS {l} does not exist"))),
                    None => T::zero(),
                };
                let lat = latency(k, mode, rate, &self.config)?;
                let power = power_total(mode, w.get(k), &self.config);
                Ok(TerminalMetrics {
                    mode,
                    rate,
                    latency: lat,
                    power,
                    energy: energy(power, lat.total),
                    sensing_sinr: self.echo_sinr(k, w),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::build_scenario;

    fn c(re: f64) -> C<f64> {
        C::new(re, 0.0)
    }

    fn siso_pair(h: f64) -> ChannelSet<f64> {
        let up = vec![CMat::from_row_major(1, 1, vec![c(h)]); 2];
        let int = vec![None, Some(CMat::identity(1)), Some(CMat::identity(1)), None];
        ChannelSet::new(1, 2, up, int).unwrap()
    }

    #[test]
    fn single_terminal_covariance_is_noise() {
        let ch = ChannelSet::new(1, 1, vec![CMat::from_fn(2, 3, |i, j| c((i + j) as f64))], vec![None]).unwrap();
        let w = BeamformerSet::new(vec![vec![c(1.0), c(2.0)]]);
        let d = interference_plus_noise(0, 0, &w, &ch, 0.3);
        assert_eq!(d, CMat::identity(3).scaled(0.3));
    }

    #[test]
    fn two_terminal_scalar_covariance() {
        let ch = siso_pair(1.0);
        let w = BeamformerSet::new(vec![vec![c(2.0)], vec![c(2.0)]]);
        let d = interference_plus_noise(0, 0, &w, &ch, 0.1);
        assert!((d[(0, 0)].re - 4.1).abs() < 1e-15);
    }

    #[test]
    fn siso_rate_of_unit_snr_is_one_bit() {
        let ch = ChannelSet::new(1, 1, vec![CMat::identity(1)], vec![None]).unwrap();
        let w = BeamformerSet::new(vec![vec![c(1.0)]]);
        assert!((uplink_rate(0, 0, &w, &ch, 1.0, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let w0 = BeamformerSet::zeros(1, 1);
        assert_eq!(uplink_rate(0, 0, &w0, &ch, 1.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn sensing_sinr_matched_unit_power() {
        let theta = 0.7f64;
        let a = crate::scenario::steering_vector(theta, 2, 0.5);
        let ch = ChannelSet::new(1, 1, vec![CMat::identity(2)], vec![None]).unwrap();
        let w = BeamformerSet::new(vec![a.iter().map(|z| z / 2f64.sqrt()).collect()]);
        let g = sensing_sinr(0, &w, &ch, 1.0, &a, 1.0);
        assert!((g - 4.0).abs() < 1e-12);
    }

    #[test]
    fn latency_anchors() {
        let cfg = SystemConfig::default();
        let local = latency(0, ExecutionMode::Local, 0.0f64, &cfg).unwrap();
        assert_eq!(local.total, 0.65536);
        assert_eq!((local.t_up, local.t_backhaul), (0.0, 0.0));
        let cloud = latency(0, ExecutionMode::Cloud(1), 1e6f64, &cfg).unwrap();
        assert!((cloud.t_backhaul - 0.08192).abs() < 1e-15);
        let mec = latency(0, ExecutionMode::Mec(0), 1e6f64, &cfg).unwrap();
        assert!((mec.t_exec - 0.10923).abs() < 1e-5);
        assert_eq!(mec.t_backhaul, 0.0);
        assert!((mec.total - (0.8192 + mec.t_exec)).abs() < 1e-12);
    }

    #[test]
    fn offloading_without_rate_is_infeasible() {
        let cfg = SystemConfig::default();
        assert!(matches!(
            latency(3, ExecutionMode::Mec(0), 0.0f64, &cfg),
            Err(Error::InfeasibleMode { terminal: 3, .. })
        ));
        assert!(latency(3, ExecutionMode::Cloud(0), -1.0f64, &cfg).is_err());
    }

    #[test]
    fn power_and_energy_anchors() {
        let cfg = SystemConfig::default();
        let zero = vec![c(0.0); 4];
        let p = power_total(ExecutionMode::Local, &zero, &cfg);
        assert!((p - 0.0125).abs() < 1e-15);
        let unit = vec![c(1.0), c(0.0)];
        assert_eq!(power_total(ExecutionMode::Mec(0), &unit, &cfg), 1.0);
        let diff = power_total(ExecutionMode::Local, &unit, &cfg) - power_total(ExecutionMode::Cloud(0), &unit, &cfg);
        assert!((diff - 0.0125).abs() < 1e-15);
        assert!((energy(0.0125f64, 0.65536) - 0.008192).abs() < 1e-15);
        assert_eq!(energy(0.0f64, 3.0), 0.0);
    }

    #[test]
    fn fourth_power_model() {
        let cfg = SystemConfig {
            tx_power_model: TxPowerModel::FourthPower,
            ..Default::default()
        };
        let w = vec![c(2.0f64.sqrt()), c(0.0)];
        assert!((rf_power(&w, &cfg) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn all_local_objective() {
        let cfg = SystemConfig::default();
        let modes = vec![ExecutionMode::Local; 9];
        let (sum, mean) = objective_total_latency(&modes, &[0.0f64; 9], &cfg).unwrap();
        assert!((sum - 9.0 * 0.65536).abs() < 1e-12);
        assert_eq!(mean, 0.65536);
    }

    #[test]
    fn mode_labels_roundtrip() {
        for m in [ExecutionMode::Local, ExecutionMode::Mec(2), ExecutionMode::Cloud(11)] {
            assert_eq!(ExecutionMode::parse_label(&m.label()), Some(m));
        }
        assert_eq!(ExecutionMode::parse_label("X1"), None);
        assert_eq!(ExecutionMode::parse_label("Lx"), None);
    }

    #[test]
    fn evaluate_reports_every_terminal() {
        let cfg = SystemConfig {
            num_terminals: 3,
            bs_antennas: 4,
            terminal_antennas: 2,
            ..Default::default()
        };
        let s = build_scenario::<f64>(&cfg, 5).unwrap();
        let w = BeamformerSet::new((0..3).map(|k| s.steering(k)).collect());
        let modes = [ExecutionMode::Local, ExecutionMode::Mec(1), ExecutionMode::Cloud(2)];
        let m = s.evaluate(&modes, &w).unwrap();
        assert_eq!(m.len(), 3);
        assert_eq!(m[0].rate, 0.0);
        assert!(m[1].rate > 0.0 && m[2].latency.t_backhaul > 0.0);
        assert!(m.iter().all(|t| t.sensing_sinr > 0.0 && t.energy > 0.0));
        assert!(s.evaluate(&[ExecutionMode::Mec(7); 3], &w).is_err());
    }
}

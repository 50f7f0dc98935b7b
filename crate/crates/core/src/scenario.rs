//! Problem instances: system parameters, node placement, sensing targets and
//! channel realizations.
//!
//! Randomness is drawn from ChaCha8 keyed by a single `u64` seed. Each
//! scenario uses three independent streams of that key:
//!
//! | stream | contents                                             |
//! |--------|------------------------------------------------------|
//! | 0      | terminal positions, then (angle, distance, RCS) per terminal |
//! | 1      | uplink matrices `H_up[l][k]`, `l`-major                |
//! | 2      | terminal-to-terminal matrices `H_int[k][j]`, `k`-major |
//!
//! Monte-Carlo trials derive their seed from a root seed with
//! [`trial_seed`], so any single trial can be regenerated on its own.

use std::f64::consts::PI;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scalar::{cast, db_to_linear, dbm_to_watts, from_usize, Scalar, C};

/// How the RF transmit power of a beamformer is computed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TxPowerModel {
    /// `‖w‖²`
    #[default]
    SquaredNorm,
    /// `‖w wᴴ‖_F² = ‖w‖⁴`
    FourthPower,
}

/// System parameters. All quantities are linear SI units unless the field
/// name says otherwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemConfig {
    /// Number of base stations (each with one MEC server).
    pub num_bs: usize,
    pub num_terminals: usize,
    pub bs_antennas: usize,
    /// Transmit and receive antennas per terminal.
    pub terminal_antennas: usize,
    pub bandwidth_hz: f64,
    /// Bandwidth at which a task holds `task_bits_ref` bits.
    pub bandwidth_ref_hz: f64,
    /// Scale the task size linearly with bandwidth (bandwidth sweeps only).
    pub task_scales_with_bandwidth: bool,
    pub task_bits_ref: f64,
    pub beta_cycles_per_bit: f64,
    /// Path loss at 1 m.
    pub rho0: f64,
    pub f_local_hz: f64,
    pub f_mec_hz: f64,
    pub f_cloud_hz: f64,
    /// Computation capacity of every MEC server.
    pub mec_capacity_hz: f64,
    /// Per-terminal total power budget.
    pub p_th_w: f64,
    pub noise_psd_w_per_hz: f64,
    /// Chip power coefficient, local CPU power is `eta · f³`.
    pub eta: f64,
    /// MEC-to-cloud backhaul rate.
    pub backhaul_rate_bps: f64,
    /// Sensing SINR threshold.
    pub gamma_r: f64,
    /// Coherent processing gain applied to the echo SINR. 0 dB evaluates the
    /// single-snapshot echo SINR.
    pub sensing_gain_db: f64,
    /// Antenna spacing in wavelengths.
    pub antenna_spacing: f64,
    pub tx_power_model: TxPowerModel,
    /// Side of the square terminal deployment area, centred on the BS cluster.
    pub area_side_m: f64,
    pub target_distance_min_m: f64,
    pub target_distance_max_m: f64,
    pub rcs_min: f64,
    pub rcs_max: f64,
}

impl Default for SystemConfig {
    fn default() -> Self {
        Self {
            num_bs: 3,
            num_terminals: 9,
            bs_antennas: 16,
            terminal_antennas: 8,
            bandwidth_hz: 10e6,
            bandwidth_ref_hz: 10e6,
            task_scales_with_bandwidth: false,
            task_bits_ref: 100.0 * 1024.0 * 8.0,
            beta_cycles_per_bit: 400.0,
            rho0: db_to_linear(-60.0),
            f_local_hz: 0.5e9,
            f_mec_hz: 3e9,
            f_cloud_hz: 10e9,
            mec_capacity_hz: 9e9,
            p_th_w: dbm_to_watts(30.0),
            noise_psd_w_per_hz: dbm_to_watts(-174.0),
            eta: 1e-28,
            backhaul_rate_bps: 10e6,
            gamma_r: db_to_linear(2.0),
            sensing_gain_db: 0.0,
            antenna_spacing: 0.5,
            tx_power_model: TxPowerModel::SquaredNorm,
            area_side_m: 1000.0,
            target_distance_min_m: 30.0,
            target_distance_max_m: 70.0,
            rcs_min: 0.8,
            rcs_max: 1.0,
        }
    }
}

fn positive(field: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::config(field, format!("must be finite and > 0, got {v}")))
    }
}

fn at_least_one(field: &'static str, v: usize) -> Result<()> {
    if v >= 1 {
        Ok(())
    } else {
        Err(Error::config(field, "count must be >= 1"))
    }
}

impl SystemConfig {
    pub fn validate(&self) -> Result<()> {
        at_least_one("num_bs", self.num_bs)?;
        at_least_one("num_terminals", self.num_terminals)?;
        at_least_one("bs_antennas", self.bs_antennas)?;
        at_least_one("terminal_antennas", self.terminal_antennas)?;
        positive("bandwidth_hz", self.bandwidth_hz)?;
        positive("bandwidth_ref_hz", self.bandwidth_ref_hz)?;
        positive("task_bits_ref", self.task_bits_ref)?;
        positive("beta_cycles_per_bit", self.beta_cycles_per_bit)?;
        positive("rho0", self.rho0)?;
        positive("f_local_hz", self.f_local_hz)?;
        positive("f_mec_hz", self.f_mec_hz)?;
        positive("f_cloud_hz", self.f_cloud_hz)?;
        positive("mec_capacity_hz", self.mec_capacity_hz)?;
        positive("p_th_w", self.p_th_w)?;
        positive("noise_psd_w_per_hz", self.noise_psd_w_per_hz)?;
        positive("eta", self.eta)?;
        positive("backhaul_rate_bps", self.backhaul_rate_bps)?;
        positive("gamma_r", self.gamma_r)?;
        if !self.sensing_gain_db.is_finite() {
            return Err(Error::config("sensing_gain_db", "must be finite"));
        }
        positive("antenna_spacing", self.antenna_spacing)?;
        positive("area_side_m", self.area_side_m)?;
        positive("target_distance_min_m", self.target_distance_min_m)?;
        positive("target_distance_max_m", self.target_distance_max_m)?;
        if self.target_distance_max_m < self.target_distance_min_m {
            return Err(Error::config(
                "target_distance_max_m",
                "must be >= target_distance_min_m",
            ));
        }
        positive("rcs_min", self.rcs_min)?;
        positive("rcs_max", self.rcs_max)?;
        if self.rcs_max < self.rcs_min {
            return Err(Error::config("rcs_max", "must be >= rcs_min"));
        }
        Ok(())
    }

    /// Task size `Z` in bits.
    pub fn task_bits(&self) -> f64 {
        if self.task_scales_with_bandwidth {
            self.task_bits_ref * self.bandwidth_hz / self.bandwidth_ref_hz
        } else {
            self.task_bits_ref
        }
    }

    /// Noise power at every BS receiver, `N0 · B`.
    pub fn sigma_b2(&self) -> f64 {
        self.noise_psd_w_per_hz * self.bandwidth_hz
    }

    /// Noise power at every terminal radar receiver, `N0 · B`.
    pub fn sigma_k2(&self) -> f64 {
        self.noise_psd_w_per_hz * self.bandwidth_hz
    }

    /// Static CPU power drawn by a terminal computing locally.
    pub fn local_cpu_power(&self) -> f64 {
        self.eta * self.f_local_hz.powi(3)
    }

    pub fn sensing_gain(&self) -> f64 {
        db_to_linear(self.sensing_gain_db)
    }

    /// Maximum RF power `‖w‖²` a terminal may radiate in the given tier.
    pub fn rf_power_budget(&self, local: bool) -> f64 {
        let total = if local {
            self.p_th_w - self.local_cpu_power()
        } else {
            self.p_th_w
        };
        match self.tx_power_model {
            TxPowerModel::SquaredNorm => total,
            TxPowerModel::FourthPower => total.max(0.0).sqrt(),
        }
    }

    /// RF budget that keeps every execution mode within `p_th_w`.
    pub fn rf_power_budget_any_mode(&self) -> f64 {
        self.rf_power_budget(true)
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }
}

/// Derives the seed of Monte-Carlo trial `trial` from `root`.
pub fn trial_seed(root: u64, trial: u64) -> u64 {
    splitmix64(root ^ splitmix64(trial.wrapping_add(0x5EED)))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Uplink and terminal-to-terminal channels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelSet<T> {
    num_bs: usize,
    num_terminals: usize,
    /// `uplink[l * K + k]`: N×M channel from terminal k to BS l.
    uplink: Vec<CMat<T>>,
    /// `interference[k * K + j]`: N×N channel from terminal j to terminal k.
    /// The diagonal is `None`.
    interference: Vec<Option<CMat<T>>>,
}

impl<T: Scalar> ChannelSet<T> {
    pub fn new(
        num_bs: usize,
        num_terminals: usize,
        uplink: Vec<CMat<T>>,
        interference: Vec<Option<CMat<T>>>,
    ) -> Result<Self> {
        if uplink.len() != num_bs * num_terminals {
            return Err(Error::Input("uplink channel count must be L*K".into()));
        }
        if interference.len() != num_terminals * num_terminals {
            return Err(Error::Input("interference channel count must be K*K".into()));
        }
        for k in 0..num_terminals {
            for j in 0..num_terminals {
                if (k == j) != interference[k * num_terminals + j].is_none() {
                    return Err(Error::Input(
                        "interference channels must be present exactly off the diagonal".into(),
                    ));
                }
            }
        }
        Ok(Self {
            num_bs,
            num_terminals,
            uplink,
            interference,
        })
    }

    pub fn num_bs(&self) -> usize {
        self.num_bs
    }

    pub fn num_terminals(&self) -> usize {
        self.num_terminals
    }

    /// `H_lk`, N×M.
    pub fn uplink(&self, l: usize, k: usize) -> &CMat<T> {
        &self.uplink[l * self.num_terminals + k]
    }

    /// `H^I_kj`, N×N, from terminal `j` into terminal `k`.
    ///
    /// # Panics
    /// When `k == j`; self-interference is not modelled.
    pub fn interference(&self, k: usize, j: usize) -> &CMat<T> {
        self.interference[k * self.num_terminals + j]
            .as_ref()
            .expect("no self-interference channel")
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U + Copy) -> ChannelSet<U> {
        ChannelSet {
            num_bs: self.num_bs,
            num_terminals: self.num_terminals,
            uplink: self.uplink.iter().map(|m| m.map(f)).collect(),
            interference: self.interference.iter().map(|m| m.as_ref().map(|m| m.map(f))).collect(),
        }
    }
}

/// A complete problem instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario<T> {
    pub config: SystemConfig,
    pub seed: u64,
    pub bs_positions: Vec<[f64; 2]>,
    pub terminal_positions: Vec<[f64; 2]>,
    /// Angle of arrival of each terminal's sensing target, radians.
    pub target_angle: Vec<T>,
    pub target_distance: Vec<T>,
    pub rcs: Vec<T>,
    /// `ζ_k`, echo gain including two-way path loss and RCS.
    pub echo_gain: Vec<T>,
    pub channels: ChannelSet<T>,
}

/// Base-station sites. Three BSs form the reference triangle; any other count
/// is spread evenly on the triangle's circumcircle.
pub fn bs_layout(num_bs: usize) -> Vec<[f64; 2]> {
    if num_bs == 3 {
        return vec![[0.0, 0.0], [400.0, 0.0], [200.0, 200.0 * 3f64.sqrt()]];
    }
    let (cx, cy) = bs_centroid();
    let radius = 400.0 / 3f64.sqrt();
    (0..num_bs)
        .map(|i| {
            let phi = 7.0 * PI / 6.0 + 2.0 * PI * i as f64 / num_bs as f64;
            [cx + radius * phi.cos(), cy + radius * phi.sin()]
        })
        .collect()
}

fn bs_centroid() -> (f64, f64) {
    (200.0, 200.0 / 3f64.sqrt())
}

fn distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    // Clamped at the 1 m reference distance of the path-loss model.
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt().max(1.0)
}

/// Uniform linear array response `[1, e^{j2πα sinθ}, …]`.
pub fn steering_vector<T: Scalar>(theta: T, n: usize, alpha: T) -> Vec<C<T>> {
    let phase = T::TAU() * alpha * theta.sin();
    (0..n)
        .map(|i| Complex::from_polar(T::one(), phase * from_usize(i)))
        .collect()
}

/// `ζ = sqrt(ρ0 ξ) / d_t²`.
pub fn echo_gain<T: Scalar>(d_t: T, xi: T, rho0: T) -> Result<T> {
    if !(d_t > T::zero() && xi > T::zero() && rho0 > T::zero()) {
        return Err(Error::Domain(format!(
            "echo gain needs positive inputs, got d_t={d_t}, xi={xi}, rho0={rho0}"
        )));
    }
    Ok((rho0 * xi).sqrt() / (d_t * d_t))
}

fn gaussian_matrix<T: Scalar, R: Rng>(rows: usize, cols: usize, std: f64, rng: &mut R) -> CMat<T> {
    // Each entry CN(0, std²): real and imaginary parts N(0, std²/2).
    let s = std * std::f64::consts::FRAC_1_SQRT_2;
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C::new(cast(re * s), cast(im * s))
    })
}

/// Draws Rayleigh channels `sqrt(ρ0/d²)·H̃` for the given geometry.
///
/// Uplink matrices are drawn first (`l`-major), then the off-diagonal
/// terminal-to-terminal matrices (`k`-major).
pub fn synthesize_channels<T: Scalar, R: Rng>(
    config: &SystemConfig,
    bs_positions: &[[f64; 2]],
    terminal_positions: &[[f64; 2]],
    rng: &mut R,
) -> ChannelSet<T> {
    let (n, m) = (config.terminal_antennas, config.bs_antennas);
    let (num_bs, num_k) = (bs_positions.len(), terminal_positions.len());
    let mut uplink = Vec::with_capacity(num_bs * num_k);
    for bs in bs_positions {
        for term in terminal_positions {
            let std = (config.rho0).sqrt() / distance(*bs, *term);
            uplink.push(gaussian_matrix(n, m, std, rng));
        }
    }
    let mut interference = Vec::with_capacity(num_k * num_k);
    for (k, pk) in terminal_positions.iter().enumerate() {
        for (j, pj) in terminal_positions.iter().enumerate() {
            if k == j {
                interference.push(None);
            } else {
                let std = (config.rho0).sqrt() / distance(*pk, *pj);
                interference.push(Some(gaussian_matrix(n, n, std, rng)));
            }
        }
    }
    ChannelSet {
        num_bs,
        num_terminals: num_k,
        uplink,
        interference,
    }
}

/// Builds a reproducible scenario from `(config, seed)`.
pub fn build_scenario<T: Scalar>(config: &SystemConfig, seed: u64) -> Result<Scenario<T>> {
    config.validate()?;
    let bs_positions = bs_layout(config.num_bs);
    let (cx, cy) = bs_centroid();
    let half = config.area_side_m / 2.0;

    let mut geo = stream_rng(seed, 0);
    let terminal_positions: Vec<[f64; 2]> = (0..config.num_terminals)
        .map(|_| {
            let x = geo.gen_range(cx - half..cx + half);
            let y = geo.gen_range(cy - half..cy + half);
            [x, y]
        })
        .collect();

    let rho0: T = cast(config.rho0);
    let mut target_angle = Vec::with_capacity(config.num_terminals);
    let mut target_distance = Vec::with_capacity(config.num_terminals);
    let mut rcs = Vec::with_capacity(config.num_terminals);
    let mut zeta = Vec::with_capacity(config.num_terminals);
    for _ in 0..config.num_terminals {
        let theta: f64 = geo.gen_range(0.0..=PI);
        let d: f64 = geo.gen_range(config.target_distance_min_m..=config.target_distance_max_m);
        let xi: f64 = geo.gen_range(config.rcs_min..=config.rcs_max);
        let (theta, d, xi) = (cast::<T>(theta), cast::<T>(d), cast::<T>(xi));
        zeta.push(echo_gain(d, xi, rho0)?);
        target_angle.push(theta);
        target_distance.push(d);
        rcs.push(xi);
    }

    let mut ch_rng = stream_rng(seed, 1);
    let mut uplink_part: ChannelSet<T> = synthesize_channels(config, &bs_positions, &terminal_positions, &mut ch_rng);
    // Interference matrices come from their own stream so that adding BSs does
    // not reshuffle them.
    let mut int_rng = stream_rng(seed, 2);
    let int_part: ChannelSet<T> = synthesize_channels(config, &[], &terminal_positions, &mut int_rng);
    uplink_part.interference = int_part.interference;

    Ok(Scenario {
        config: config.clone(),
        seed,
        bs_positions,
        terminal_positions,
        target_angle,
        target_distance,
        rcs,
        echo_gain: zeta,
        channels: uplink_part,
    })
}

impl<T: Scalar> Scenario<T> {
    pub fn num_bs(&self) -> usize {
        self.config.num_bs
    }

    pub fn num_terminals(&self) -> usize {
        self.config.num_terminals
    }

    /// Steering vector toward terminal `k`'s target.
    pub fn steering(&self, k: usize) -> Vec<C<T>> {
        steering_vector(
            self.target_angle[k],
            self.config.terminal_antennas,
            cast(self.config.antenna_spacing),
        )
    }

    /// Index of the BS closest to terminal `k`.
    pub fn nearest_bs(&self, k: usize) -> usize {
        let p = self.terminal_positions[k];
        (0..self.num_bs())
            .min_by(|&a, &b| distance(self.bs_positions[a], p).total_cmp(&distance(self.bs_positions[b], p)))
            .unwrap_or(0)
    }

    /// Returns a copy with a different configuration but the same geometry and
    /// channel realization. Array sizes must match.
    pub fn with_config(&self, config: SystemConfig) -> Result<Self> {
        config.validate()?;
        let c = &self.config;
        if (c.num_bs, c.num_terminals, c.bs_antennas, c.terminal_antennas)
            != (
                config.num_bs,
                config.num_terminals,
                config.bs_antennas,
                config.terminal_antennas,
            )
        {
            return Err(Error::Input("with_config cannot change array dimensions".into()));
        }
        if c.rho0 != config.rho0 {
            return Err(Error::Input("with_config cannot change rho0".into()));
        }
        Ok(Self { config, ..self.clone() })
    }

    pub fn to_json(&self) -> Result<String>
    where
        T: Serialize,
    {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self>
    where
        T: for<'de> Deserialize<'de>,
    {
        let sc: Self = serde_json::from_str(s)?;
        sc.config.validate()?;
        Ok(sc)
    }
}

//! System parameters and scenario files.
//!
//! A scenario file is flat TOML whose keys mirror the usual symbol names
//! (`L`, `N`, `K`, `tau`, `P_u`, …). Every key is optional; missing keys take
//! the full-scale defaults listed in [`SystemParams::default`]. When `Q` is
//! absent it is derived as `round(1 / T_c)`.
//!
//! All transmit powers are normalized once by the noise power
//! `sigma2 = B * k_B * T0 * 10^(kappa/10)`; the rest of the crate works with
//! the normalized `rho_*` values only.

use std::ops::Deref;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PathLossParams;

/// Boltzmann constant in J/K.
pub const BOLTZMANN: f64 = 1.381e-23;

/// Environment variable that overrides the scenario seed.
pub const SEED_ENV: &str = "CELLFREE_SEED";

/// Raw, unvalidated parameters. Watts, hertz, seconds, metres, dB.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemParams {
    pub num_aps: usize,
    pub antennas_per_ap: usize,
    pub num_sensors: usize,
    pub bandwidth_hz: f64,
    pub coherence_time_s: f64,
    /// Symbols per coherence block.
    pub block_len: usize,
    /// Pilot length in symbols.
    pub pilot_len: usize,
    /// Data-transmission blocks per period.
    pub data_blocks: u32,
    pub pilot_power_w: f64,
    pub uplink_power_w: f64,
    pub downlink_power_w: f64,
    /// Energy conversion efficiency.
    pub harvest_efficiency: f64,
    /// Largest WPT duration multiplier used in the basic-energy constant.
    pub max_wpt_multiplier: f64,
    /// Idle power draw of a sensor.
    pub idle_power_w: f64,
    pub noise_temp_k: f64,
    pub noise_figure_db: f64,
    pub seed: u64,
    pub side_m: f64,
    pub path_loss: PathLossParams,
    pub orthogonal_pilots: bool,
}

impl Default for SystemParams {
    fn default() -> Self {
        Self {
            num_aps: 144,
            antennas_per_ap: 10,
            num_sensors: 20,
            bandwidth_hz: 20e6,
            coherence_time_s: 0.2,
            block_len: 200,
            pilot_len: 60,
            data_blocks: 5,
            pilot_power_w: 0.2e-3,
            uplink_power_w: 20e-3,
            downlink_power_w: 30.0,
            harvest_efficiency: 1.0,
            max_wpt_multiplier: 50.0,
            idle_power_w: 0.1e-3,
            noise_temp_k: 290.0,
            noise_figure_db: 9.0,
            seed: 1,
            side_m: 50.0,
            path_loss: PathLossParams::default(),
            orthogonal_pilots: false,
        }
    }
}

impl SystemParams {
    /// Reduced profile used for CI-scale validation runs.
    pub fn desk() -> Self {
        Self {
            num_aps: 36,
            num_sensors: 8,
            pilot_len: 30,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub boltzmann: f64,
    pub temperature_k: f64,
    pub figure_db: f64,
    /// Noise power in watts.
    pub sigma2: f64,
}

/// `B * k_B * T0 * 10^(kappa/10)` in watts.
pub fn derive_noise_power(bandwidth_hz: f64, temp_k: f64, figure_db: f64) -> Result<f64> {
    if !(bandwidth_hz > 0.0 && bandwidth_hz.is_finite()) {
        return Err(Error::config("B", format!("must be positive, got {bandwidth_hz}")));
    }
    if !(temp_k > 0.0 && temp_k.is_finite()) {
        return Err(Error::config("T0", format!("must be positive, got {temp_k}")));
    }
    Ok(bandwidth_hz * BOLTZMANN * temp_k * 10f64.powf(figure_db / 10.0))
}

/// Validated parameters together with the derived noise power and normalized
/// powers. Immutable once built; dereferences to [`SystemParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct SystemConfig {
    params: SystemParams,
    pub noise: NoiseModel,
    pub rho_p: f64,
    pub rho_u: f64,
    pub rho_d: f64,
    /// Idle power normalized by the noise power.
    pub rho_idle: f64,
}

impl Deref for SystemConfig {
    type Target = SystemParams;

    fn deref(&self) -> &SystemParams {
        &self.params
    }
}

impl SystemConfig {
    /// Validates `params` and derives the normalized powers.
    pub fn new(params: SystemParams) -> Result<Self> {
        validate(&params)?;
        normalize_powers(params)
    }

    pub fn table_one() -> Self {
        Self::new(SystemParams::default()).expect("default parameters are valid")
    }

    pub fn desk() -> Self {
        Self::new(SystemParams::desk()).expect("desk parameters are valid")
    }

    pub fn params(&self) -> &SystemParams {
        &self.params
    }

    /// Returns a copy with `edit` applied to the raw parameters, re-validated.
    pub fn with(&self, edit: impl FnOnce(&mut SystemParams)) -> Result<Self> {
        let mut params = self.params.clone();
        edit(&mut params);
        Self::new(params)
    }

    /// `tau / T`.
    pub fn pilot_fraction(&self) -> f64 {
        self.pilot_len as f64 / self.block_len as f64
    }

    /// `1 - tau / T`.
    pub fn data_fraction(&self) -> f64 {
        1.0 - self.pilot_fraction()
    }

    pub fn tau_rho_p(&self) -> f64 {
        self.pilot_len as f64 * self.rho_p
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&ScenarioFile::from(&self.params)).expect("scenario serialization")
    }
}

/// Derives `sigma2` and the `rho_*` values. Watt values are kept untouched.
pub fn normalize_powers(params: SystemParams) -> Result<SystemConfig> {
    let sigma2 = derive_noise_power(params.bandwidth_hz, params.noise_temp_k, params.noise_figure_db)?;
    let noise = NoiseModel {
        boltzmann: BOLTZMANN,
        temperature_k: params.noise_temp_k,
        figure_db: params.noise_figure_db,
        sigma2,
    };
    Ok(SystemConfig {
        rho_p: params.pilot_power_w / sigma2,
        rho_u: params.uplink_power_w / sigma2,
        rho_d: params.downlink_power_w / sigma2,
        rho_idle: params.idle_power_w / sigma2,
        noise,
        params,
    })
}

fn validate(p: &SystemParams) -> Result<()> {
    fn positive(field: &'static str, v: f64) -> Result<()> {
        if v > 0.0 && v.is_finite() {
            Ok(())
        } else {
            Err(Error::config(field, format!("must be positive and finite, got {v}")))
        }
    }
    for (field, v) in [("L", p.num_aps), ("N", p.antennas_per_ap), ("K", p.num_sensors)] {
        if v == 0 {
            return Err(Error::config(field, "must be at least 1"));
        }
    }
    if p.pilot_len == 0 || p.pilot_len >= p.block_len {
        return Err(Error::config(
            "tau",
            format!("must satisfy 0 < tau < T, got tau={} T={}", p.pilot_len, p.block_len),
        ));
    }
    if p.data_blocks < 1 {
        return Err(Error::config("Q", "must be at least 1"));
    }
    if !(p.harvest_efficiency > 0.0 && p.harvest_efficiency <= 1.0) {
        return Err(Error::config(
            "zeta",
            format!("must lie in (0, 1], got {}", p.harvest_efficiency),
        ));
    }
    positive("B", p.bandwidth_hz)?;
    positive("T_c", p.coherence_time_s)?;
    positive("P_p", p.pilot_power_w)?;
    positive("P_u", p.uplink_power_w)?;
    positive("P_d", p.downlink_power_w)?;
    positive("T0", p.noise_temp_k)?;
    positive("side", p.side_m)?;
    if !(p.idle_power_w >= 0.0 && p.idle_power_w.is_finite()) {
        return Err(Error::config("rho0", format!("must be non-negative, got {}", p.idle_power_w)));
    }
    if !(p.max_wpt_multiplier >= 0.0 && p.max_wpt_multiplier.is_finite()) {
        return Err(Error::config(
            "lambda0",
            format!("must be non-negative, got {}", p.max_wpt_multiplier),
        ));
    }
    if !p.noise_figure_db.is_finite() {
        return Err(Error::config("kappa", "must be finite"));
    }
    p.path_loss.validate()?;
    if p.orthogonal_pilots && p.pilot_len < p.num_sensors {
        return Err(Error::config(
            "orthogonal_pilots",
            format!("requires tau >= K, got tau={} K={}", p.pilot_len, p.num_sensors),
        ));
    }
    Ok(())
}

/// On-disk schema. All keys optional.
#[derive(Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    l: Option<usize>,
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    n: Option<usize>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(rename = "B", skip_serializing_if = "Option::is_none")]
    bandwidth: Option<f64>,
    #[serde(rename = "T_c", skip_serializing_if = "Option::is_none")]
    coherence_time: Option<f64>,
    #[serde(rename = "T", skip_serializing_if = "Option::is_none")]
    block_len: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau: Option<usize>,
    #[serde(rename = "Q", skip_serializing_if = "Option::is_none")]
    q: Option<u32>,
    #[serde(rename = "P_p", skip_serializing_if = "Option::is_none")]
    p_p: Option<f64>,
    #[serde(rename = "P_u", skip_serializing_if = "Option::is_none")]
    p_u: Option<f64>,
    #[serde(rename = "P_d", skip_serializing_if = "Option::is_none")]
    p_d: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    zeta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    lambda0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rho0: Option<f64>,
    #[serde(rename = "T0", skip_serializing_if = "Option::is_none")]
    t0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    kappa: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    side: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    d1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    f: Option<f64>,
    #[serde(rename = "h_AP", skip_serializing_if = "Option::is_none")]
    h_ap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    h_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sigma_sh: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    orthogonal_pilots: Option<bool>,
}

impl From<&SystemParams> for ScenarioFile {
    fn from(p: &SystemParams) -> Self {
        Self {
            l: Some(p.num_aps),
            n: Some(p.antennas_per_ap),
            k: Some(p.num_sensors),
            bandwidth: Some(p.bandwidth_hz),
            coherence_time: Some(p.coherence_time_s),
            block_len: Some(p.block_len),
            tau: Some(p.pilot_len),
            q: Some(p.data_blocks),
            p_p: Some(p.pilot_power_w),
            p_u: Some(p.uplink_power_w),
            p_d: Some(p.downlink_power_w),
            zeta: Some(p.harvest_efficiency),
            lambda0: Some(p.max_wpt_multiplier),
            rho0: Some(p.idle_power_w),
            t0: Some(p.noise_temp_k),
            kappa: Some(p.noise_figure_db),
            seed: Some(p.seed),
            side: Some(p.side_m),
            d0: Some(p.path_loss.d0_m),
            d1: Some(p.path_loss.d1_m),
            f: Some(p.path_loss.carrier_mhz),
            h_ap: Some(p.path_loss.ap_height_m),
            h_s: Some(p.path_loss.sensor_height_m),
            sigma_sh: Some(p.path_loss.shadow_std_db),
            orthogonal_pilots: Some(p.orthogonal_pilots),
        }
    }
}

impl ScenarioFile {
    fn into_params(self) -> SystemParams {
        let d = SystemParams::default();
        let coherence_time_s = self.coherence_time.unwrap_or(d.coherence_time_s);
        let data_blocks = self.q.unwrap_or_else(|| {
            if self.coherence_time.is_some() {
                // zero is caught by validation
                (1.0 / coherence_time_s).round().max(0.0) as u32
            } else {
                d.data_blocks
            }
        });
        let pl = &d.path_loss;
        SystemParams {
            num_aps: self.l.unwrap_or(d.num_aps),
            antennas_per_ap: self.n.unwrap_or(d.antennas_per_ap),
            num_sensors: self.k.unwrap_or(d.num_sensors),
            bandwidth_hz: self.bandwidth.unwrap_or(d.bandwidth_hz),
            coherence_time_s,
            block_len: self.block_len.unwrap_or(d.block_len),
            pilot_len: self.tau.unwrap_or(d.pilot_len),
            data_blocks,
            pilot_power_w: self.p_p.unwrap_or(d.pilot_power_w),
            uplink_power_w: self.p_u.unwrap_or(d.uplink_power_w),
            downlink_power_w: self.p_d.unwrap_or(d.downlink_power_w),
            harvest_efficiency: self.zeta.unwrap_or(d.harvest_efficiency),
            max_wpt_multiplier: self.lambda0.unwrap_or(d.max_wpt_multiplier),
            idle_power_w: self.rho0.unwrap_or(d.idle_power_w),
            noise_temp_k: self.t0.unwrap_or(d.noise_temp_k),
            noise_figure_db: self.kappa.unwrap_or(d.noise_figure_db),
            seed: self.seed.unwrap_or(d.seed),
            side_m: self.side.unwrap_or(d.side_m),
            path_loss: PathLossParams::new(
                self.d0.unwrap_or(pl.d0_m),
                self.d1.unwrap_or(pl.d1_m),
                self.f.unwrap_or(pl.carrier_mhz),
                self.h_ap.unwrap_or(pl.ap_height_m),
                self.h_s.unwrap_or(pl.sensor_height_m),
                self.sigma_sh.unwrap_or(pl.shadow_std_db),
            ),
            orthogonal_pilots: self.orthogonal_pilots.unwrap_or(d.orthogonal_pilots),
        }
    }
}

/// Parses scenario text. `origin` only labels errors.
pub fn parse_scenario(text: &str, origin: &Path) -> Result<SystemConfig> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    SystemConfig::new(file.into_params())
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<SystemConfig> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text, path)
}

/// Applies the `CELLFREE_SEED` override, if set.
pub fn apply_env_overrides(cfg: SystemConfig) -> Result<SystemConfig> {
    apply_seed_override(cfg, std::env::var(SEED_ENV).ok().as_deref())
}

fn apply_seed_override(cfg: SystemConfig, raw: Option<&str>) -> Result<SystemConfig> {
    let Some(raw) = raw else { return Ok(cfg) };
    let seed: u64 = raw
        .trim()
        .parse()
        .map_err(|_| Error::config("seed", format!("{SEED_ENV}={raw:?} is not an unsigned integer")))?;
    cfg.with(|p| p.seed = seed)
}

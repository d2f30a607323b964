//! Joint uplink/downlink power control.
//!
//! The uplink step picks the smallest `xi` meeting every SINR target, which is
//! a single linear solve `W xi = b`. The downlink step then finds the cheapest
//! `mu = lambda * eta_tilde` that lets each sensor harvest what it spends,
//! in closed form via a Lagrangian on the relaxed constraint.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::closed_form::{harvested_lb_cellfree, harvested_lb_mu, sinr, throughput, total_ap_energy, uplink_energy, EnergyLedger, SinrCoefficients};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::linalg::solve_with_condition;

/// Smallest acceptable reciprocal condition number of `W`.
pub const MIN_RCOND: f64 = 1e-12;
const BOX_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    /// Linear SINR targets.
    pub delta: DVector<f64>,
    /// Basic energy each sensor needs besides uplink transmission.
    pub e0: f64,
}

impl TargetSpec {
    pub fn uniform(k: usize, delta: f64, cfg: &SystemConfig) -> Self {
        Self {
            delta: DVector::from_element(k, delta),
            e0: compute_e0(cfg),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UplinkSolution {
    pub xi_star: DVector<f64>,
    /// `Γ_k(xi*) - Δ_k`.
    pub residuals: DVector<f64>,
    pub rcond: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DownlinkSolution {
    pub mu_star: DMatrix<f64>,
    pub lambda_star: f64,
    /// `None` when no charging is needed (`lambda* = 0`).
    pub eta_tilde_star: Option<DMatrix<f64>>,
    pub c: DVector<f64>,
}

impl DownlinkSolution {
    pub fn no_charging_needed(&self) -> bool {
        self.eta_tilde_star.is_none()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSolution {
    pub targets: TargetSpec,
    pub uplink: UplinkSolution,
    pub downlink: DownlinkSolution,
    pub ledger: EnergyLedger,
    /// Harvested minus consumed energy per sensor.
    pub slack: DVector<f64>,
}

/// `W[k][k] = D_k - Δ_k U_k`, `W[k][j] = -Δ_k I_kj`, `b[k] = Δ_k Nc_k`.
pub fn build_w_b(coeffs: &SinrCoefficients, delta: &DVector<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let k_count = coeffs.num_sensors();
    let w = DMatrix::from_fn(k_count, k_count, |k, j| {
        if k == j {
            coeffs.d[k] - delta[k] * coeffs.u[k]
        } else {
            -delta[k] * coeffs.interference[(k, j)]
        }
    });
    let b = DVector::from_fn(k_count, |k, _| delta[k] * coeffs.nc[k]);
    (w, b)
}

fn check_targets(coeffs: &SinrCoefficients, delta: &DVector<f64>) -> Result<()> {
    if delta.len() != coeffs.num_sensors() {
        return Err(Error::InvalidArgument(format!("{} targets for {} sensors", delta.len(), coeffs.num_sensors())));
    }
    if let Some(bad) = delta.iter().find(|d| !(**d >= 0.0) || !d.is_finite()) {
        return Err(Error::InvalidArgument(format!("SINR target {bad} must be finite and non-negative")));
    }
    Ok(())
}

/// Solves `W xi = b` and checks the box. No infeasibility diagnostic.
fn solve_raw(coeffs: &SinrCoefficients, delta: &DVector<f64>) -> Result<(DVector<f64>, f64, Vec<usize>)> {
    let (w, b) = build_w_b(coeffs, delta);
    let sol = solve_with_condition(&w, &b)?;
    if sol.rcond < MIN_RCOND {
        return Err(Error::DegenerateSystem { rcond: sol.rcond });
    }
    let offenders = sol
        .x
        .iter()
        .enumerate()
        .filter(|(_, x)| !(**x >= -BOX_TOL && **x <= 1.0 + BOX_TOL))
        .map(|(k, _)| k)
        .collect();
    Ok((sol.x, sol.rcond, offenders))
}

/// Minimal uplink powers meeting every target with equality.
pub fn solve_p1(coeffs: &SinrCoefficients, delta: &DVector<f64>) -> Result<UplinkSolution> {
    check_targets(coeffs, delta)?;
    let (x, rcond, offenders) = solve_raw(coeffs, delta)?;
    if !offenders.is_empty() {
        return Err(Error::InfeasibleTarget {
            offenders,
            max_uniform_target: max_uniform_target(coeffs),
        });
    }
    let xi_star = x.map(|v| v.clamp(0.0, 1.0));
    let residuals = sinr(coeffs, &xi_star)? - delta;
    Ok(UplinkSolution { xi_star, residuals, rcond })
}

/// Largest common target every sensor can meet, by bisection. `None` if no
/// positive target is reachable.
pub fn max_uniform_target(coeffs: &SinrCoefficients) -> Option<f64> {
    let k_count = coeffs.num_sensors();
    // Full power with no interference bounds every achievable SINR.
    let hi = (0..k_count)
        .map(|k| coeffs.d[k] / (coeffs.u[k] + coeffs.nc[k]))
        .fold(f64::INFINITY, f64::min);
    if !(hi > 0.0 && hi.is_finite()) {
        return None;
    }
    let feasible = |t: f64| matches!(solve_raw(coeffs, &DVector::from_element(k_count, t)), Ok((_, _, o)) if o.is_empty());
    let (mut lo, mut hi) = (0.0, hi);
    if feasible(hi) {
        return Some(hi);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    (lo > 0.0).then_some(lo)
}

/// Basic energy per period: pilot transmission plus idle consumption, both
/// over a period stretched by the nominal WPT multiplier.
pub fn compute_e0(cfg: &SystemConfig) -> f64 {
    let stretch = 1.0 + cfg.max_wpt_multiplier;
    let q = cfg.data_blocks as f64;
    stretch * cfg.pilot_fraction() * q * cfg.rho_p + stretch * q * cfg.rho_idle
}

/// Per-sensor energy requirement in units of the downlink harvest scale.
pub fn compute_ck(xi_star: &DVector<f64>, e0: f64, cfg: &SystemConfig) -> DVector<f64> {
    let denom = cfg.data_fraction() * cfg.data_blocks as f64 * cfg.harvest_efficiency * cfg.rho_d * cfg.antennas_per_ap as f64;
    uplink_energy(xi_star, cfg).map(|e| (e + e0) / denom)
}

/// Cheapest `mu` with `N (Σ_l sqrt(mu_lk gamma_lk))² = C_k` for every sensor.
pub fn solve_p2(c: &DVector<f64>, gamma: &DMatrix<f64>, antennas: usize) -> Result<DownlinkSolution> {
    let (l_count, k_count) = gamma.shape();
    if c.len() != k_count {
        return Err(Error::InvalidArgument(format!("{} requirements for {k_count} sensors", c.len())));
    }
    if let Some(bad) = c.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("energy requirement {bad} is negative")));
    }
    let n = antennas as f64;
    let mut mu = DMatrix::zeros(l_count, k_count);
    for k in 0..k_count {
        let sg: f64 = gamma.column(k).sum();
        if !(sg > 0.0) {
            return Err(Error::UnservableSensor(k));
        }
        for l in 0..l_count {
            let theta = (gamma[(l, k)] * c[k] / n).sqrt() / sg;
            mu[(l, k)] = theta * theta;
        }
    }
    let lambda_star = mu.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
    let eta_tilde_star = (lambda_star > 0.0).then(|| &mu / lambda_star);
    Ok(DownlinkSolution {
        mu_star: mu,
        lambda_star,
        eta_tilde_star,
        c: c.clone(),
    })
}

/// Uplink first, then the downlink that powers it.
pub fn joint_optimize(coeffs: &SinrCoefficients, gamma: &DMatrix<f64>, targets: &TargetSpec, cfg: &SystemConfig) -> Result<JointSolution> {
    let uplink = solve_p1(coeffs, &targets.delta)?;
    let c = compute_ck(&uplink.xi_star, targets.e0, cfg);
    let downlink = solve_p2(&c, gamma, cfg.antennas_per_ap)?;
    if downlink.lambda_star > cfg.max_wpt_multiplier {
        log::warn!(
            "required charging multiplier {} exceeds the nominal {}",
            downlink.lambda_star,
            cfg.max_wpt_multiplier
        );
    }
    let e_harv = harvested_lb_mu(&downlink.mu_star, gamma, cfg)?;
    let e_up = uplink_energy(&uplink.xi_star, cfg);
    let slack = DVector::from_fn(e_harv.len(), |k, _| e_harv[k] - (e_up[k] + targets.e0));
    for k in 0..slack.len() {
        let need = e_up[k] + targets.e0;
        if slack[k] < -1e-9 * need.max(f64::MIN_POSITIVE) {
            return Err(Error::Consistency(format!(
                "sensor {k} harvests {} but needs {need}",
                e_harv[k]
            )));
        }
    }
    let gamma_k = sinr(coeffs, &uplink.xi_star)?;
    let ledger = EnergyLedger {
        e_harv,
        e_up,
        xi_tr: total_ap_energy(&downlink.mu_star, cfg),
        rate: gamma_k.map(|g| throughput(g, downlink.lambda_star, cfg)),
    };
    Ok(JointSolution {
        targets: targets.clone(),
        uplink,
        downlink,
        ledger,
        slack,
    })
}

impl JointSolution {
    /// Writes `<stem>_sensors.csv`, `<stem>_aps.csv` and `<stem>_summary.csv` into `dir`.
    pub fn write_csv(&self, dir: &Path, stem: &str) -> Result<()> {
        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_sensors.csv")))?;
        w.write_record(["k", "xi_star", "Delta", "Gamma_residual", "E_up", "E_harv_lb", "slack"])?;
        for k in 0..self.slack.len() {
            w.write_record([
                k.to_string(),
                self.uplink.xi_star[k].to_string(),
                self.targets.delta[k].to_string(),
                self.uplink.residuals[k].to_string(),
                self.ledger.e_up[k].to_string(),
                self.ledger.e_harv[k].to_string(),
                self.slack[k].to_string(),
            ])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_aps.csv")))?;
        w.write_record(["l", "sum_k_eta_tilde"])?;
        for l in 0..self.downlink.mu_star.nrows() {
            let s = self.downlink.eta_tilde_star.as_ref().map_or(0.0, |e| e.row(l).sum());
            w.write_record([l.to_string(), s.to_string()])?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(dir.join(format!("{stem}_summary.csv")))?;
        w.write_record(["key", "value"])?;
        w.write_record(["lambda_star".to_string(), self.downlink.lambda_star.to_string()])?;
        w.write_record(["Xi_tr".to_string(), self.ledger.xi_tr.to_string()])?;
        w.write_record(["E0".to_string(), self.targets.e0.to_string()])?;
        w.flush()?;
        Ok(())
    }
}

/// Uniform reference policy: full uplink power, `eta_tilde = 1/K`, and the
/// shortest WPT phase that still covers every sensor's consumption.
#[derive(Debug, Clone, PartialEq)]
pub struct Benchmark {
    pub lambda: f64,
    pub xi_tr: f64,
    pub sinr: DVector<f64>,
    pub rate: DVector<f64>,
}

pub fn benchmark(coeffs: &SinrCoefficients, gamma: &DMatrix<f64>, e0: f64, cfg: &SystemConfig) -> Result<Benchmark> {
    let (l_count, k_count) = gamma.shape();
    let xi = DVector::from_element(k_count, 1.0);
    let eta = DMatrix::from_element(l_count, k_count, 1.0 / k_count as f64);
    let per_unit = harvested_lb_cellfree(&eta, gamma, cfg, 1.0)?;
    let e_up = uplink_energy(&xi, cfg);
    let mut lambda: f64 = 0.0;
    for k in 0..k_count {
        if !(per_unit[k] > 0.0) {
            return Err(Error::UnservableSensor(k));
        }
        lambda = lambda.max((e_up[k] + e0) / per_unit[k]);
    }
    let sinr_k = sinr(coeffs, &xi)?;
    Ok(Benchmark {
        lambda,
        xi_tr: total_ap_energy(&(eta * lambda), cfg),
        rate: sinr_k.map(|g| throughput(g, lambda, cfg)),
        sinr: sinr_k,
    })
}

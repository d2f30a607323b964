//! Closed-form harvested-energy bounds, SINR coefficients, throughput and
//! energy accounting for the cell-free, collocated and small-cell layouts.
//!
//! All energies are in normalized units (noise power × symbol durations).

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::pilots::EstimationCache;

const BUDGET_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Architecture {
    CellFree,
    Collocated,
    SmallCell,
}

impl Architecture {
    pub const ALL: [Architecture; 3] = [Architecture::CellFree, Architecture::Collocated, Architecture::SmallCell];

    pub fn as_str(self) -> &'static str {
        match self {
            Architecture::CellFree => "cellfree",
            Architecture::Collocated => "collocated",
            Architecture::SmallCell => "smallcell",
        }
    }
}

impl std::fmt::Display for Architecture {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What to do when `Σ_k eta_lk > 1` at some AP.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BudgetPolicy {
    #[default]
    Strict,
    /// Log a warning and evaluate anyway.
    WarnOnly,
}

/// Each sensor served by exactly one AP.
#[derive(Debug, Clone, PartialEq)]
pub struct Association {
    /// `L × K`, one 1 per column.
    pub delta: DMatrix<u8>,
    /// Serving AP of each sensor.
    pub serving: Vec<usize>,
}

impl Association {
    pub fn from_serving(num_aps: usize, serving: Vec<usize>) -> Result<Self> {
        let mut delta = DMatrix::zeros(num_aps, serving.len());
        for (k, &l) in serving.iter().enumerate() {
            if l >= num_aps {
                return Err(Error::InvalidArgument(format!("sensor {k} assigned to AP {l} of {num_aps}")));
            }
            delta[(l, k)] = 1;
        }
        Ok(Self { delta, serving })
    }

    pub fn num_aps(&self) -> usize {
        self.delta.nrows()
    }

    /// Number of sensors served by each AP.
    pub fn load(&self) -> Vec<usize> {
        (0..self.num_aps()).map(|l| self.delta.row(l).iter().map(|&d| d as usize).sum()).collect()
    }
}

/// Strongest AP per sensor, lowest index on ties.
pub fn associate(beta: &DMatrix<f64>) -> Association {
    let serving = beta
        .column_iter()
        .map(|col| {
            let mut best = 0;
            for (l, &b) in col.iter().enumerate() {
                if b > col[best] {
                    best = l;
                }
            }
            best
        })
        .collect();
    Association::from_serving(beta.nrows(), serving).expect("argmax index is in range")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinrCoefficients {
    pub architecture: Architecture,
    /// Desired-signal coefficient.
    pub d: DVector<f64>,
    /// Beamforming-uncertainty coefficient.
    pub u: DVector<f64>,
    /// `I[(k, j)]`, zero diagonal.
    pub interference: DMatrix<f64>,
    /// Noise coefficient.
    pub nc: DVector<f64>,
}

impl SinrCoefficients {
    pub fn num_sensors(&self) -> usize {
        self.d.len()
    }

    /// Same ratio, every coefficient divided by `c`.
    pub fn scaled(&self, c: f64) -> Self {
        Self {
            architecture: self.architecture,
            d: self.d.unscale(c),
            u: self.u.unscale(c),
            interference: self.interference.unscale(c),
            nc: self.nc.unscale(c),
        }
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "D", "U", "Nc", "I_sum"])?;
        for k in 0..self.num_sensors() {
            let i_sum: f64 = self.interference.row(k).sum();
            w.write_record([
                k.to_string(),
                self.d[k].to_string(),
                self.u[k].to_string(),
                self.nc[k].to_string(),
                i_sum.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub(crate) fn check_budget(eta: &DMatrix<f64>, policy: BudgetPolicy) -> Result<()> {
    if let Some(bad) = eta.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidArgument(format!("power coefficient {bad} is not a finite non-negative value")));
    }
    for l in 0..eta.nrows() {
        let total: f64 = eta.row(l).sum();
        if total > 1.0 + BUDGET_TOL {
            match policy {
                BudgetPolicy::Strict => return Err(Error::PowerBudget { ap: l, total }),
                BudgetPolicy::WarnOnly => log::warn!("AP {l} power budget exceeded: sum of coefficients {total}"),
            }
        }
    }
    Ok(())
}

fn same_shape(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::InvalidArgument(format!("{what}: shape {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn harvest_scale(cfg: &SystemConfig, lambda: f64) -> f64 {
    cfg.data_fraction() * lambda * cfg.data_blocks as f64 * cfg.harvest_efficiency * cfg.rho_d
}

/// Per-sensor lower bound `N[N(Σ_l sqrt(c_lk γ_lk))² + Σ_l c_lk γ_lk]`, unscaled.
fn bound_core(coef: &DMatrix<f64>, gamma: &DMatrix<f64>, n: f64) -> DVector<f64> {
    DVector::from_fn(gamma.ncols(), |k, _| {
        let mut root = 0.0;
        let mut lin = 0.0;
        for l in 0..gamma.nrows() {
            let p = coef[(l, k)] * gamma[(l, k)];
            root += p.sqrt();
            lin += p;
        }
        n * (n * root * root + lin)
    })
}

/// Cell-free harvested-energy lower bound for a WPT phase `lambda` times the
/// data phase. `eta_tilde` is `L × K`, per-AP budget enforced.
pub fn harvested_lb_cellfree(eta_tilde: &DMatrix<f64>, gamma: &DMatrix<f64>, cfg: &SystemConfig, lambda: f64) -> Result<DVector<f64>> {
    same_shape(eta_tilde, gamma, "eta vs gamma")?;
    check_budget(eta_tilde, BudgetPolicy::Strict)?;
    let n = cfg.antennas_per_ap as f64;
    Ok(bound_core(eta_tilde, gamma, n) * harvest_scale(cfg, lambda))
}

/// Bound written in `mu = lambda * eta_tilde`; no budget check since `mu` may exceed 1.
pub fn harvested_lb_mu(mu: &DMatrix<f64>, gamma: &DMatrix<f64>, cfg: &SystemConfig) -> Result<DVector<f64>> {
    same_shape(mu, gamma, "mu vs gamma")?;
    if let Some(bad) = mu.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!("mu entry {bad} is negative")));
    }
    let n = cfg.antennas_per_ap as f64;
    Ok(bound_core(mu, gamma, n) * harvest_scale(cfg, 1.0))
}

/// Single site with `L·N` antennas; `eta_k` shares one budget.
pub fn harvested_lb_collocated(eta_k: &DVector<f64>, gamma_k: &DVector<f64>, cfg: &SystemConfig, lambda: f64) -> Result<DVector<f64>> {
    if eta_k.len() != gamma_k.len() {
        return Err(Error::InvalidArgument("eta vs gamma length".into()));
    }
    check_budget(&DMatrix::from_row_slice(1, eta_k.len(), eta_k.as_slice()), BudgetPolicy::Strict)?;
    let m = (cfg.num_aps * cfg.antennas_per_ap) as f64;
    Ok(eta_k.component_mul(gamma_k) * (m * (m + 1.0) * harvest_scale(cfg, lambda)))
}

/// Each sensor charged by its serving AP only.
pub fn harvested_lb_smallcell(
    eta_tilde: &DMatrix<f64>,
    gamma: &DMatrix<f64>,
    assoc: &Association,
    cfg: &SystemConfig,
    lambda: f64,
    policy: BudgetPolicy,
) -> Result<DVector<f64>> {
    same_shape(eta_tilde, gamma, "eta vs gamma")?;
    if assoc.delta.shape() != gamma.shape() {
        return Err(Error::InvalidArgument("association shape does not match gamma".into()));
    }
    let masked = eta_tilde.zip_map(&assoc.delta.map(f64::from), |e, d| e * d);
    check_budget(&masked, policy)?;
    let n = cfg.antennas_per_ap as f64;
    let scale = n * (n + 1.0) * harvest_scale(cfg, lambda);
    Ok(DVector::from_fn(gamma.ncols(), |k, _| {
        (0..gamma.nrows()).map(|l| masked[(l, k)] * gamma[(l, k)]).sum::<f64>() * scale
    }))
}

/// `eta_tilde = 1` on every association entry, zero elsewhere.
pub fn smallcell_default_eta(assoc: &Association) -> DMatrix<f64> {
    assoc.delta.map(f64::from)
}

/// Closed-form SINR coefficients. `weight[(l, k)]` switches AP `l` on or off in
/// the detector of sensor `k` (all ones for cell-free).
fn weighted_coeffs(
    cache: &EstimationCache,
    beta: &DMatrix<f64>,
    antennas: usize,
    rho_u: f64,
    weight: Option<&DMatrix<u8>>,
    architecture: Architecture,
) -> Result<SinrCoefficients> {
    let (l_count, k_count) = beta.shape();
    if cache.gamma.shape() != beta.shape() {
        return Err(Error::InvalidArgument(format!(
            "cache is {:?} but beta is {:?}",
            cache.gamma.shape(),
            beta.shape()
        )));
    }
    let w = |l: usize, k: usize| weight.is_none_or(|m| m[(l, k)] != 0);
    let n = antennas as f64;
    let trp = cache.tau_rho_p;

    let mut d = DVector::<f64>::zeros(k_count);
    let mut u = DVector::zeros(k_count);
    let mut nc = DVector::zeros(k_count);
    let mut t1 = DMatrix::<f64>::zeros(k_count, k_count);
    let mut t3 = DMatrix::<f64>::zeros(k_count, k_count);
    let mut t2 = DMatrix::from_element(k_count, k_count, crate::C64::new(0.0, 0.0));

    for l in 0..l_count {
        let ov = &cache.overlap[l];
        for k in 0..k_count {
            if !w(l, k) {
                continue;
            }
            let g = cache.gamma[(l, k)];
            d[k] += g;
            u[k] += g * beta[(l, k)];
            nc[k] += g;
            let s: f64 = (0..k_count).map(|i| beta[(l, i)] * ov[(i, k)].norm_sqr()).sum();
            for j in 0..k_count {
                let b = beta[(l, j)];
                t1[(k, j)] += b * cache.a_norm_sq[(l, k)];
                t3[(k, j)] += b * s;
                t2[(k, j)] += ov[(j, k)] * b;
            }
        }
    }
    d.apply(|x| *x = rho_u * n * *x * *x);
    u *= rho_u;
    let mut interference = DMatrix::from_fn(k_count, k_count, |k, j| {
        rho_u * (t1[(k, j)] + trp * n * t2[(k, j)].norm_sqr() + trp * t3[(k, j)])
    });
    interference.fill_diagonal(0.0);
    Ok(SinrCoefficients {
        architecture,
        d,
        u,
        interference,
        nc,
    })
}

/// LMMSE estimation with an equal-gain combiner at the CPU.
pub fn sinr_coeffs_cellfree(cache: &EstimationCache, beta: &DMatrix<f64>, antennas: usize, rho_u: f64) -> Result<SinrCoefficients> {
    weighted_coeffs(cache, beta, antennas, rho_u, None, Architecture::CellFree)
}

/// Only the serving AP detects each sensor.
pub fn sinr_coeffs_smallcell(
    cache: &EstimationCache,
    beta: &DMatrix<f64>,
    assoc: &Association,
    antennas: usize,
    rho_u: f64,
) -> Result<SinrCoefficients> {
    if assoc.delta.shape() != beta.shape() {
        return Err(Error::InvalidArgument("association shape does not match beta".into()));
    }
    let mut c = weighted_coeffs(cache, beta, antennas, rho_u, Some(&assoc.delta), Architecture::SmallCell)?;
    // D uses Σδγ², which differs from (Σδγ)² only if a sensor had two serving APs.
    for k in 0..beta.ncols() {
        let s: f64 = (0..beta.nrows())
            .filter(|&l| assoc.delta[(l, k)] != 0)
            .map(|l| cache.gamma[(l, k)].powi(2))
            .sum();
        c.d[k] = rho_u * antennas as f64 * s;
    }
    Ok(c)
}

/// One site with `num_aps * antennas` antennas. `site` must be a single-AP
/// cache built from the site gains `beta_site` (`1 × K`).
pub fn sinr_coeffs_collocated(
    site: &EstimationCache,
    beta_site: &DMatrix<f64>,
    num_aps: usize,
    antennas: usize,
    rho_u: f64,
) -> Result<SinrCoefficients> {
    if site.num_aps() != 1 || beta_site.nrows() != 1 || beta_site.ncols() != site.num_sensors() {
        return Err(Error::InvalidArgument("collocated coefficients need a single-site cache and 1×K gains".into()));
    }
    let k_count = site.num_sensors();
    let m = (num_aps * antennas) as f64;
    let trp = site.tau_rho_p;
    let ov = &site.overlap[0];
    let b = |k: usize| beta_site[(0, k)];
    let g = |k: usize| site.gamma[(0, k)];

    let d = DVector::from_fn(k_count, |k, _| rho_u * m * g(k) * g(k));
    let u = DVector::from_fn(k_count, |k, _| rho_u * g(k) * b(k));
    let nc = DVector::from_fn(k_count, |k, _| g(k));
    let s: Vec<f64> = (0..k_count)
        .map(|k| (0..k_count).map(|i| b(i) * ov[(i, k)].norm_sqr()).sum())
        .collect();
    let interference = DMatrix::from_fn(k_count, k_count, |k, j| {
        if k == j {
            return 0.0;
        }
        rho_u * b(j) * site.a_norm_sq[(0, k)] + trp * rho_u * b(j) * s[k] + trp * rho_u * m * (b(j) * ov[(j, k)]).norm_sqr()
    });
    Ok(SinrCoefficients {
        architecture: Architecture::Collocated,
        d,
        u,
        interference,
        nc,
    })
}

/// `Γ_k = D_k ξ_k / (U_k ξ_k + Σ_{j≠k} I_kj ξ_j + Nc_k)`.
pub fn sinr(coeffs: &SinrCoefficients, xi: &DVector<f64>) -> Result<DVector<f64>> {
    let k_count = coeffs.num_sensors();
    if xi.len() != k_count {
        return Err(Error::InvalidArgument(format!("xi has {} entries for {k_count} sensors", xi.len())));
    }
    if let Some(bad) = xi.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidArgument(format!("uplink coefficient {bad} outside [0, 1]")));
    }
    let interf = &coeffs.interference * xi;
    Ok(DVector::from_fn(k_count, |k, _| {
        let num = coeffs.d[k] * xi[k];
        if num == 0.0 {
            return 0.0;
        }
        let den = coeffs.u[k] * xi[k] + interf[k] + coeffs.nc[k];
        assert!(den > 0.0, "zero SINR denominator for sensor {k}");
        num / den
    }))
}

/// Per-user throughput in bit/s.
pub fn throughput(gamma_k: f64, lambda: f64, cfg: &SystemConfig) -> f64 {
    cfg.data_fraction() / (2.0 * (1.0 + lambda)) * cfg.bandwidth_hz * (1.0 + gamma_k).log2()
}

/// Uplink energy spent per period.
pub fn uplink_energy(xi: &DVector<f64>, cfg: &SystemConfig) -> DVector<f64> {
    xi * (cfg.data_fraction() * cfg.data_blocks as f64 * cfg.rho_u)
}

/// Total AP transmit energy per period.
pub fn total_ap_energy(mu: &DMatrix<f64>, cfg: &SystemConfig) -> f64 {
    cfg.data_blocks as f64 * cfg.data_fraction() * cfg.rho_d * cfg.antennas_per_ap as f64 * mu.sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnergyLedger {
    pub e_harv: DVector<f64>,
    pub e_up: DVector<f64>,
    pub xi_tr: f64,
    /// bit/s per sensor.
    pub rate: DVector<f64>,
}

impl EnergyLedger {
    /// Cell-free accounting for downlink `mu` and uplink `xi`.
    pub fn cellfree(mu: &DMatrix<f64>, xi: &DVector<f64>, gamma: &DMatrix<f64>, coeffs: &SinrCoefficients, cfg: &SystemConfig) -> Result<Self> {
        let lambda = mu.row_iter().map(|r| r.sum()).fold(0.0, f64::max);
        let sinr_k = sinr(coeffs, xi)?;
        Ok(Self {
            e_harv: harvested_lb_mu(mu, gamma, cfg)?,
            e_up: uplink_energy(xi, cfg),
            xi_tr: total_ap_energy(mu, cfg),
            rate: sinr_k.map(|g| throughput(g, lambda, cfg)),
        })
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "e_harv", "e_up", "rate_bps", "xi_tr"])?;
        for k in 0..self.e_harv.len() {
            w.write_record([
                k.to_string(),
                self.e_harv[k].to_string(),
                self.e_up[k].to_string(),
                self.rate[k].to_string(),
                self.xi_tr.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pilots::{build_cache, generate_pilots};
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> SystemConfig {
        SystemConfig::desk()
    }

    fn random_instance(seed: u64, l: usize, k: usize, tau: usize) -> (DMatrix<f64>, EstimationCache) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pilots = generate_pilots(tau, k, false, &mut rng).unwrap();
        let beta = DMatrix::from_fn(l, k, |_, _| 10f64.powf(rng.random_range(-2.0..0.5)));
        let cache = build_cache(&beta, &pilots, 7.0).unwrap();
        (beta, cache)
    }

    #[test]
    fn association_examples() {
        let a = associate(&DMatrix::from_column_slice(3, 1, &[1.0, 2.0, 3.0]));
        assert_eq!(a.serving, vec![2]);
        let scaled = associate(&DMatrix::from_column_slice(3, 1, &[4.0, 8.0, 12.0]));
        assert_eq!(scaled, a);
        let tie = associate(&DMatrix::from_column_slice(6, 1, &[0.1, 0.9, 0.2, 0.3, 0.9, 0.5]));
        assert_eq!(tie.serving, vec![1]);
        assert_eq!(tie.delta.column(0).iter().map(|&d| d as usize).sum::<usize>(), 1);
    }

    #[test]
    fn harvest_zero_and_single_ap() {
        let c = cfg();
        let gamma = DMatrix::from_row_slice(1, 3, &[0.2, 0.5, 0.1]);
        let zero = harvested_lb_cellfree(&DMatrix::zeros(1, 3), &gamma, &c, 2.0).unwrap();
        assert!(zero.iter().all(|e| *e == 0.0));

        let eta = DMatrix::from_row_slice(1, 3, &[0.3, 0.3, 0.4]);
        let e = harvested_lb_cellfree(&eta, &gamma, &c, 2.0).unwrap();
        let n = c.antennas_per_ap as f64;
        for k in 0..3 {
            let expect = c.data_fraction() * 2.0 * c.data_blocks as f64 * c.harvest_efficiency * n * (n + 1.0) * c.rho_d * eta[(0, k)] * gamma[(0, k)];
            assert_relative_eq!(e[k], expect, max_relative = 1e-12);
        }
    }

    #[test]
    fn harvest_budget_violation_names_ap() {
        let eta = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.7, 0.6]);
        let err = harvested_lb_cellfree(&eta, &DMatrix::from_element(2, 2, 1.0), &cfg(), 1.0).unwrap_err();
        assert!(matches!(err, Error::PowerBudget { ap: 1, .. }), "{err}");
    }

    #[test]
    fn collocated_harvest_matches_identical_rows() {
        let c = cfg();
        let l = c.num_aps;
        let eta_k = DVector::from_vec(vec![0.1, 0.2, 0.3, 0.05, 0.05, 0.1, 0.1, 0.1]);
        let gamma_k = DVector::from_fn(8, |k, _| 0.01 * (k + 1) as f64);
        let col = harvested_lb_collocated(&eta_k, &gamma_k, &c, 1.5).unwrap();
        let eta_rows = DMatrix::from_fn(l, 8, |_, k| eta_k[k]);
        let gamma_rows = DMatrix::from_fn(l, 8, |_, k| gamma_k[k]);
        // Each of the L copies has its own unit budget, so the same eta_k is valid per row.
        let cf = harvested_lb_cellfree(&eta_rows, &gamma_rows, &c, 1.5).unwrap();
        for k in 0..8 {
            assert_relative_eq!(col[k], cf[k], max_relative = 1e-12);
        }
        assert!(harvested_lb_collocated(&DVector::zeros(8), &gamma_k, &c, 1.5).unwrap().iter().all(|e| *e == 0.0));
    }

    #[test]
    fn collocated_harvest_antenna_scaling() {
        let c = cfg();
        let c2 = c.with(|p| p.antennas_per_ap *= 2).unwrap();
        let m = (c.num_aps * c.antennas_per_ap) as f64;
        let eta = DVector::from_element(1, 0.5);
        let g = DVector::from_element(1, 0.3);
        let ratio = harvested_lb_collocated(&eta, &g, &c2, 1.0).unwrap()[0] / harvested_lb_collocated(&eta, &g, &c, 1.0).unwrap()[0];
        assert_relative_eq!(ratio, 2.0 * (2.0 * m + 1.0) / (m + 1.0), max_relative = 1e-12);
    }

    #[test]
    fn smallcell_harvest_single_term_and_masking() {
        let c = cfg();
        let (beta, cache) = random_instance(3, 4, 4, 4);
        let assoc = Association::from_serving(4, vec![0, 1, 2, 3]).unwrap();
        let eta = DMatrix::from_element(4, 4, 0.25);
        let sc = harvested_lb_smallcell(&eta, &cache.gamma, &assoc, &c, 1.0, BudgetPolicy::Strict).unwrap();
        let masked_eta = eta.zip_map(&assoc.delta.map(f64::from), |e, d| e * d);
        let cf = harvested_lb_cellfree(&masked_eta, &cache.gamma, &c, 1.0).unwrap();
        for k in 0..4 {
            assert_relative_eq!(sc[k], cf[k], max_relative = 1e-12);
        }

        let strongest = associate(&cache.gamma);
        let one = smallcell_default_eta(&strongest);
        let e = harvested_lb_smallcell(&one, &cache.gamma, &strongest, &c, 1.0, BudgetPolicy::WarnOnly).unwrap();
        let n = c.antennas_per_ap as f64;
        for k in 0..4 {
            let gmax = cache.gamma.column(k).max();
            assert_relative_eq!(e[k], n * (n + 1.0) * harvest_scale(&c, 1.0) * gmax, max_relative = 1e-12);
        }
        assert!(harvested_lb_smallcell(&DMatrix::zeros(4, 4), &cache.gamma, &assoc, &c, 1.0, BudgetPolicy::Strict)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
        let _ = beta;
    }

    #[test]
    fn smallcell_default_budget_policy() {
        let assoc = Association::from_serving(2, vec![0, 0, 1]).unwrap();
        let eta = smallcell_default_eta(&assoc);
        let gamma = DMatrix::from_element(2, 3, 0.1);
        let strict = harvested_lb_smallcell(&eta, &gamma, &assoc, &cfg(), 1.0, BudgetPolicy::Strict);
        assert!(matches!(strict, Err(Error::PowerBudget { ap: 0, .. })));
        assert!(harvested_lb_smallcell(&eta, &gamma, &assoc, &cfg(), 1.0, BudgetPolicy::WarnOnly).is_ok());
    }

    #[test]
    fn single_user_cellfree_coefficients() {
        let (beta, cache) = random_instance(4, 5, 1, 3);
        let c = sinr_coeffs_cellfree(&cache, &beta, 10, 2.5).unwrap();
        let sg: f64 = cache.gamma.sum();
        let sgb: f64 = cache.gamma.component_mul(&beta).sum();
        assert_relative_eq!(c.d[0], 2.5 * 10.0 * sg * sg, max_relative = 1e-12);
        assert_relative_eq!(c.u[0], 2.5 * sgb, max_relative = 1e-12);
        assert_relative_eq!(c.nc[0], sg, max_relative = 1e-12);
        assert_eq!(c.interference[(0, 0)], 0.0);
        let g = sinr(&c, &DVector::from_element(1, 1.0)).unwrap()[0];
        assert_relative_eq!(g, c.d[0] / (c.u[0] + c.nc[0]), max_relative = 1e-12);
    }

    #[test]
    fn interference_matches_direct_sum() {
        // Term-by-term evaluation with explicit a and psi vectors.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (l_count, k_count, n) = (3, 4, 6);
        let pilots = generate_pilots(3, k_count, false, &mut rng).unwrap();
        let beta = DMatrix::from_fn(l_count, k_count, |_, _| rng.random_range(0.05..1.0));
        let trp = 4.0;
        let rho_u = 3.0;
        let cache = build_cache(&beta, &pilots, trp).unwrap();
        let c = sinr_coeffs_cellfree(&cache, &beta, n, rho_u).unwrap();
        for k in 0..k_count {
            for j in 0..k_count {
                if j == k {
                    continue;
                }
                let mut t1 = 0.0;
                let mut t2 = crate::C64::new(0.0, 0.0);
                let mut t3 = 0.0;
                for l in 0..l_count {
                    let a = cache.a_col(l, k);
                    t1 += beta[(l, j)] * a.norm_squared();
                    t2 += pilots.psi.column(j).dotc(&a) * beta[(l, j)];
                    for i in 0..k_count {
                        t3 += beta[(l, j)] * beta[(l, i)] * pilots.psi.column(i).dotc(&a).norm_sqr();
                    }
                }
                let expect = rho_u * t1 + trp * rho_u * n as f64 * t2.norm_sqr() + trp * rho_u * t3;
                assert_relative_eq!(c.interference[(k, j)], expect, max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn collocated_equals_single_site_and_identical_rows() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..10 {
            let k_count = rng.random_range(1..7);
            let (l_count, n) = (rng.random_range(1..6), rng.random_range(1..5));
            let pilots = generate_pilots(rng.random_range(1..6), k_count, false, &mut rng).unwrap();
            let site_beta = DMatrix::from_fn(1, k_count, |_, _| 10f64.powf(rng.random_range(-2.0..0.0)));
            let site = build_cache(&site_beta, &pilots, 20.0).unwrap();
            let rho_u = 5.0;
            let cm = sinr_coeffs_collocated(&site, &site_beta, l_count, n, rho_u).unwrap();
            let single = sinr_coeffs_cellfree(&site, &site_beta, l_count * n, rho_u).unwrap();

            let rows = DMatrix::from_fn(l_count, k_count, |_, k| site_beta[(0, k)]);
            let rows_cache = build_cache(&rows, &pilots, 20.0).unwrap();
            let tiled = sinr_coeffs_cellfree(&rows_cache, &rows, n, rho_u).unwrap().scaled(l_count as f64);

            let xi = DVector::from_fn(k_count, |_, _| rng.random_range(0.1..1.0));
            let g_cm = sinr(&cm, &xi).unwrap();
            let g_single = sinr(&single, &xi).unwrap();
            let g_tiled = sinr(&tiled, &xi).unwrap();
            for k in 0..k_count {
                assert_relative_eq!(g_cm[k], g_single[k], max_relative = 1e-9);
                assert_relative_eq!(g_cm[k], g_tiled[k], max_relative = 1e-9);
            }
            assert!((cm.d.clone() - single.d.clone()).norm() <= 1e-9 * cm.d.norm(), "trial {trial}");
        }
    }

    #[test]
    fn collocated_single_user_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pilots = generate_pilots(2, 1, false, &mut rng).unwrap();
        let beta = DMatrix::from_element(1, 1, 0.3);
        let site = build_cache(&beta, &pilots, 8.0).unwrap();
        let c = sinr_coeffs_collocated(&site, &beta, 4, 10, 2.0).unwrap();
        let g = site.gamma[(0, 0)];
        let gamma = sinr(&c, &DVector::from_element(1, 0.7)).unwrap()[0];
        assert_relative_eq!(gamma, 2.0 * 40.0 * g * g * 0.7 / (2.0 * g * 0.3 * 0.7 + g), max_relative = 1e-12);
        let big = sinr_coeffs_collocated(&site, &beta, 4, 1000, 2.0).unwrap();
        let r = big.d[0] / c.d[0];
        assert_relative_eq!(r, 100.0, max_relative = 1e-12);
    }

    #[test]
    fn smallcell_reduction_to_masked_cache() {
        for seed in 0..5 {
            let (beta, cache) = random_instance(10 + seed, 6, 5, 3);
            let assoc = associate(&beta);
            let sc = sinr_coeffs_smallcell(&cache, &beta, &assoc, 8, 1.7).unwrap();
            let masked = sinr_coeffs_cellfree(&cache.masked(&assoc.delta), &beta, 8, 1.7).unwrap();
            for k in 0..5 {
                assert_relative_eq!(sc.d[k], masked.d[k], max_relative = 1e-12);
                assert_relative_eq!(sc.u[k], masked.u[k], max_relative = 1e-12);
                assert_relative_eq!(sc.nc[k], masked.nc[k], max_relative = 1e-12);
                for j in 0..5 {
                    assert_relative_eq!(sc.interference[(k, j)], masked.interference[(k, j)], max_relative = 1e-12);
                }
            }
        }
    }

    #[test]
    fn smallcell_single_ap_equals_cellfree() {
        let (beta, cache) = random_instance(20, 1, 4, 2);
        let assoc = associate(&beta);
        let sc = sinr_coeffs_smallcell(&cache, &beta, &assoc, 5, 1.0).unwrap();
        let cf = sinr_coeffs_cellfree(&cache, &beta, 5, 1.0).unwrap();
        assert_relative_eq!(sc.d, cf.d, max_relative = 1e-12);
        assert_relative_eq!(sc.interference, cf.interference, max_relative = 1e-12);
    }

    #[test]
    fn unserved_ap_contributes_nothing() {
        let (beta, cache) = random_instance(21, 3, 3, 3);
        let assoc = Association::from_serving(3, vec![0, 0, 2]).unwrap();
        let sc = sinr_coeffs_smallcell(&cache, &beta, &assoc, 4, 1.0).unwrap();
        for k in 0..3 {
            let l = assoc.serving[k];
            assert_relative_eq!(sc.nc[k], cache.gamma[(l, k)], max_relative = 1e-12);
        }
    }

    #[test]
    fn sinr_examples() {
        let c = SinrCoefficients {
            architecture: Architecture::CellFree,
            d: DVector::from_element(1, 10.0),
            u: DVector::from_element(1, 1.0),
            interference: DMatrix::zeros(1, 1),
            nc: DVector::from_element(1, 1.0),
        };
        assert_relative_eq!(sinr(&c, &DVector::from_element(1, 1.0)).unwrap()[0], 5.0);
        assert_eq!(sinr(&c, &DVector::zeros(1)).unwrap()[0], 0.0);
        assert!(sinr(&c, &DVector::from_element(1, 1.5)).is_err());
    }

    #[test]
    fn sinr_monotonicity() {
        let (beta, cache) = random_instance(30, 4, 4, 2);
        let c = sinr_coeffs_cellfree(&cache, &beta, 4, 3.0).unwrap();
        let xi = DVector::from_element(4, 0.5);
        let base = sinr(&c, &xi).unwrap();
        for k in 0..4 {
            let mut up = xi.clone();
            up[k] = 0.6;
            let g = sinr(&c, &up).unwrap();
            assert!(g[k] > base[k]);
            for j in (0..4).filter(|&j| j != k) {
                assert!(g[j] < base[j]);
            }
        }
    }

    #[test]
    fn throughput_examples() {
        let c = SystemConfig::table_one();
        assert_eq!(throughput(0.0, 1.0, &c), 0.0);
        assert_relative_eq!(throughput(30.0, 1.0, &c), 0.7 / 4.0 * 2e7 * 31f64.log2(), max_relative = 1e-12);
        assert_relative_eq!(throughput(30.0, 1.0, &c), 1.734e7, max_relative = 1e-3);
        assert_relative_eq!(throughput(5.0, 3.0, &c) * 2.0, throughput(5.0, 1.0, &c), max_relative = 1e-12);
    }

    #[test]
    fn energy_accounting() {
        let c = SystemConfig::table_one();
        let e = uplink_energy(&DVector::from_element(2, 1.0), &c);
        assert_relative_eq!(e[0], 3.5 * c.rho_u, max_relative = 1e-12);
        let (l, k, lambda) = (c.num_aps, c.num_sensors, 2.5);
        let mu = DMatrix::from_element(l, k, lambda / k as f64);
        let expect = 5.0 * 0.7 * c.rho_d * c.antennas_per_ap as f64 * l as f64 * lambda;
        assert_relative_eq!(total_ap_energy(&mu, &c), expect, max_relative = 1e-12);
        assert_eq!(total_ap_energy(&DMatrix::zeros(l, k), &c), 0.0);
    }

    #[test]
    fn coefficient_csv_has_header_and_rows() {
        let (beta, cache) = random_instance(40, 2, 3, 2);
        let c = sinr_coeffs_cellfree(&cache, &beta, 2, 1.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("coeffs.csv");
        c.write_csv(&path).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("k,D,U,Nc,I_sum\n"));
        assert_eq!(text.lines().count(), 4);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn harvest_homogeneous_in_lambda_and_zeta(seed in 0u64..1000, scale in 0.1f64..10.0) {
            let base = cfg();
            let (_, cache) = random_instance(seed, 3, 4, 2);
            let eta = DMatrix::from_element(3, 4, 0.25);
            let e1 = harvested_lb_cellfree(&eta, &cache.gamma, &base, 1.0).unwrap();
            let e_lambda = harvested_lb_cellfree(&eta, &cache.gamma, &base, scale).unwrap();
            let z = base.harvest_efficiency * (scale.min(1.0 / base.harvest_efficiency) * 0.9);
            let base_z = base.with(|p| p.harvest_efficiency = z).unwrap();
            let e_zeta = harvested_lb_cellfree(&eta, &cache.gamma, &base_z, 1.0).unwrap();
            for k in 0..4 {
                prop_assert!((e_lambda[k] / e1[k] - scale).abs() < 1e-10 * scale);
                prop_assert!((e_zeta[k] / e1[k] - z / base.harvest_efficiency).abs() < 1e-10);
            }
        }

        #[test]
        fn interference_nonnegative_zero_diagonal(seed in 0u64..1000, l in 1usize..5, k in 1usize..6, tau in 1usize..5) {
            let (beta, cache) = random_instance(seed, l, k, tau);
            let c = sinr_coeffs_cellfree(&cache, &beta, 3, 2.0).unwrap();
            for i in 0..k {
                prop_assert_eq!(c.interference[(i, i)], 0.0);
            }
            prop_assert!(c.interference.iter().all(|v| *v >= 0.0));
            prop_assert!(c.d.iter().chain(c.u.iter()).chain(c.nc.iter()).all(|v| *v >= 0.0));
            let sg = cache.gamma.row_sum();
            for i in 0..k {
                prop_assert!((c.d[i] - 2.0 * 3.0 * sg[i] * sg[i]).abs() <= 1e-12 * c.d[i].max(1e-300), "{} vs {}", c.d[i], 6.0 * sg[i] * sg[i]);
            }
        }
    }
}

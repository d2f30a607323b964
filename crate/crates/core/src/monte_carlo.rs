//! Empirical oracles: true harvested energy, effective uplink SINR and
//! cross-AP estimate covariances, all by simulating small-scale fading, the
//! pilot phase and the LMMSE estimator.
//!
//! Every realization gets its own RNG stream derived from `(seed, index)`, so
//! results are bit-identical whatever the worker count.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::closed_form::{check_budget, BudgetPolicy};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::geometry::complex_normal;
use crate::pilots::{EstimationCache, PilotBook};
use crate::seeding::{rng_for, stream};
use crate::C64;

/// Two-sided 95% normal quantile.
pub const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McSettings {
    pub realizations: usize,
    pub seed: u64,
    pub execution: Execution,
    /// Draw data symbols (and, for energy, receiver noise) instead of
    /// averaging over them in closed form.
    pub sample_symbols: bool,
}

impl Default for McSettings {
    fn default() -> Self {
        Self {
            realizations: 500,
            seed: 1,
            execution: Execution::default(),
            sample_symbols: false,
        }
    }
}

impl McSettings {
    pub fn new(realizations: usize, seed: u64) -> Self {
        Self {
            realizations,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.realizations == 0 {
            return Err(Error::InvalidArgument("at least one realization is required".into()));
        }
        Ok(())
    }
}

/// Per-sensor sample mean with a 95% normal-approximation half-width.
#[derive(Debug, Clone, PartialEq)]
pub struct McEstimate {
    pub mean: DVector<f64>,
    pub half_width: DVector<f64>,
    pub realizations: usize,
}

impl McEstimate {
    /// `samples[r][k]`, summed in index order.
    pub fn from_samples(samples: &[DVector<f64>]) -> Result<Self> {
        let m = samples.len();
        let first = samples.first().ok_or(Error::EmptySamples)?;
        let mut mean = DVector::zeros(first.len());
        for s in samples {
            mean += s;
        }
        mean /= m as f64;
        let half_width = if m < 2 {
            DVector::from_element(first.len(), f64::INFINITY)
        } else {
            let mut var = DVector::zeros(first.len());
            for s in samples {
                var += (s - &mean).map(|d| d * d);
            }
            var /= (m - 1) as f64;
            var.map(|v| Z95 * (v / m as f64).sqrt())
        };
        Ok(Self {
            mean,
            half_width,
            realizations: m,
        })
    }

    pub fn contains(&self, k: usize, value: f64) -> bool {
        (value - self.mean[k]).abs() <= self.half_width[k]
    }

    /// `k, closed_form, mc_mean, mc_ci_halfwidth, gap_ratio` with
    /// `gap_ratio = (mc_mean - closed_form) / mc_mean`.
    pub fn write_comparison_csv(&self, closed_form: &DVector<f64>, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["k", "closed_form", "mc_mean", "mc_ci_halfwidth", "gap_ratio"])?;
        for k in 0..self.mean.len() {
            w.write_record([
                k.to_string(),
                closed_form[k].to_string(),
                self.mean[k].to_string(),
                self.half_width[k].to_string(),
                gap_ratio(closed_form[k], self.mean[k]).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn gap_ratio(closed_form: f64, mc_mean: f64) -> f64 {
    (mc_mean - closed_form) / mc_mean
}

/// Channels and estimates of one realization at one AP, both `K × N`.
struct ApDraw {
    g: DMatrix<C64>,
    g_hat: DMatrix<C64>,
}

fn draw_ap<R: Rng + ?Sized>(l: usize, beta: &DMatrix<f64>, cache: &EstimationCache, pilots: &PilotBook, antennas: usize, rng: &mut R) -> ApDraw {
    let k_count = beta.ncols();
    let g = DMatrix::from_fn(k_count, antennas, |k, _| complex_normal(rng) * beta[(l, k)].sqrt());
    let w = DMatrix::from_fn(pilots.len(), antennas, |_, _| complex_normal(rng));
    let y = &pilots.psi * &g * C64::new(cache.tau_rho_p.sqrt(), 0.0) + w;
    let g_hat = cache.a[l].ad_mul(&y);
    ApDraw { g, g_hat }
}

fn check_inputs(beta: &DMatrix<f64>, cache: &EstimationCache, pilots: &PilotBook) -> Result<()> {
    if cache.gamma.shape() != beta.shape() || pilots.num_sensors() != beta.ncols() {
        return Err(Error::InvalidArgument("beta, cache and pilot book disagree on dimensions".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HarvestEstimate {
    /// Harvested energy per period, normalized units.
    pub energy: McEstimate,
    /// Empirical `E||x_l||²` per AP, normalized by the noise power.
    pub tx_power: McEstimate,
}

/// Empirical harvested energy for downlink coefficients `eta_tilde`
/// (`eta = eta_tilde / gamma`) and a WPT phase of `lambda` data phases.
pub fn empirical_harvested(
    beta: &DMatrix<f64>,
    cache: &EstimationCache,
    pilots: &PilotBook,
    eta_tilde: &DMatrix<f64>,
    lambda: f64,
    cfg: &SystemConfig,
    settings: &McSettings,
) -> Result<HarvestEstimate> {
    check_inputs(beta, cache, pilots)?;
    settings.validate()?;
    if eta_tilde.shape() != beta.shape() {
        return Err(Error::InvalidArgument("eta shape does not match beta".into()));
    }
    check_budget(eta_tilde, BudgetPolicy::Strict)?;
    let (l_count, k_count) = beta.shape();
    let n = cfg.antennas_per_ap;
    let rho_d = cfg.rho_d;
    let sqrt_eta = eta_tilde.zip_map(&cache.gamma, |e, g| if g > 0.0 { (e / g).sqrt() } else { 0.0 });

    let per_realization = map_indexed(settings.execution, settings.realizations, |r| {
        let mut rng = rng_for(settings.seed, stream::MC_HARVEST, r as u64);
        // s[(k, j)] = Σ_l sqrt(eta_lj) g_lk^T conj(g_hat_lj)
        let mut s = DMatrix::from_element(k_count, k_count, C64::new(0.0, 0.0));
        let mut tx = DVector::zeros(l_count);
        for l in 0..l_count {
            let d = draw_ap(l, beta, cache, pilots, n, &mut rng);
            let p = d.g.clone() * d.g_hat.adjoint();
            for j in 0..k_count {
                let w = sqrt_eta[(l, j)];
                if w == 0.0 {
                    continue;
                }
                for k in 0..k_count {
                    s[(k, j)] += p[(k, j)] * w;
                }
                tx[l] += rho_d * w * w * d.g_hat.row(j).norm_squared();
            }
        }
        let power = if settings.sample_symbols {
            let q = DVector::from_fn(k_count, |_, _| complex_normal(&mut rng));
            let z = &s * &q * C64::new(rho_d.sqrt(), 0.0);
            DVector::from_fn(k_count, |k, _| (z[k] + complex_normal(&mut rng)).norm_sqr())
        } else {
            DVector::from_fn(k_count, |k, _| rho_d * s.row(k).norm_squared() + 1.0)
        };
        (power, tx)
    });

    let scale = cfg.data_fraction() * lambda * cfg.data_blocks as f64 * cfg.harvest_efficiency;
    let energy_samples: Vec<_> = per_realization.iter().map(|(p, _)| p * scale).collect();
    let tx_samples: Vec<_> = per_realization.into_iter().map(|(_, t)| t).collect();
    let energy = McEstimate::from_samples(&energy_samples)?;
    let tx_power = McEstimate::from_samples(&tx_samples)?;

    let cap = n as f64 * rho_d;
    for l in 0..l_count {
        // Uniform coefficients put the budget exactly at the cap, so only flag
        // an excess of about four standard errors.
        if tx_power.mean[l] - 2.0 * tx_power.half_width[l] > cap * (1.0 + 1e-9) {
            return Err(Error::Consistency(format!(
                "AP {l} transmits {} on average, above the budget {cap}",
                tx_power.mean[l]
            )));
        }
    }
    Ok(HarvestEstimate { energy, tx_power })
}

/// Exact mean harvested energy, the quantity [`empirical_harvested`] samples.
///
/// Per antenna, `g_lnk` and `g_hat_lnj` are jointly Gaussian with
/// `E[g conj(g_hat)] = m_l(k, j) = sqrt(tau rho_p) beta_lk psi_k^H a_lj`, so
///
/// ```text
/// E|z_k|² = 1 + rho_d Σ_j [ N² |Σ_l sqrt(eta_lj) m_l(k, j)|² + N Σ_l eta_lj beta_lk gamma_lj ]
/// ```
pub fn exact_harvested_mean(beta: &DMatrix<f64>, cache: &EstimationCache, eta_tilde: &DMatrix<f64>, lambda: f64, cfg: &SystemConfig) -> Result<DVector<f64>> {
    if cache.gamma.shape() != beta.shape() || eta_tilde.shape() != beta.shape() {
        return Err(Error::InvalidArgument("beta, cache and eta disagree on dimensions".into()));
    }
    let (l_count, k_count) = beta.shape();
    let n = cfg.antennas_per_ap as f64;
    let sqrt_trp = cache.tau_rho_p.sqrt();
    let eta = eta_tilde.zip_map(&cache.gamma, |e, g| if g > 0.0 { e / g } else { 0.0 });
    let scale = cfg.data_fraction() * lambda * cfg.data_blocks as f64 * cfg.harvest_efficiency;
    Ok(DVector::from_fn(k_count, |k, _| {
        let mut total = 0.0;
        for j in 0..k_count {
            let mut coherent = C64::new(0.0, 0.0);
            let mut spread = 0.0;
            for l in 0..l_count {
                let m = cache.overlap[l][(k, j)] * (sqrt_trp * beta[(l, k)]);
                coherent += m * eta[(l, j)].sqrt();
                spread += eta[(l, j)] * beta[(l, k)] * cache.gamma[(l, j)];
            }
            total += n * n * coherent.norm_sqr() + n * spread;
        }
        scale * (1.0 + cfg.rho_d * total)
    }))
}

/// Effective SINR estimate together with its per-term means.
#[derive(Debug, Clone, PartialEq)]
pub struct SinrEstimate {
    pub sinr: McEstimate,
    /// Analytic `|A1|²`.
    pub desired: DVector<f64>,
    /// `E|A2|²`, beamforming uncertainty.
    pub uncertainty: McEstimate,
    /// `E|A3|²`, inter-sensor interference.
    pub interference: McEstimate,
    /// `E|A4|²`, combined noise.
    pub noise: McEstimate,
}

/// Empirical effective SINR under the equal-gain combiner for uplink powers `xi`.
pub fn empirical_sinr(
    beta: &DMatrix<f64>,
    cache: &EstimationCache,
    pilots: &PilotBook,
    xi: &DVector<f64>,
    cfg: &SystemConfig,
    settings: &McSettings,
) -> Result<SinrEstimate> {
    check_inputs(beta, cache, pilots)?;
    settings.validate()?;
    let (l_count, k_count) = beta.shape();
    if xi.len() != k_count || xi.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err(Error::InvalidArgument("xi must hold K values in [0, 1]".into()));
    }
    let n = cfg.antennas_per_ap;
    let rho_u = cfg.rho_u;
    let gamma_sum = cache.gamma.row_sum();
    let mean_gain = DVector::from_fn(k_count, |k, _| n as f64 * gamma_sum[k]);
    let desired = DVector::from_fn(k_count, |k, _| rho_u * xi[k] * mean_gain[k] * mean_gain[k]);

    let per_realization = map_indexed(settings.execution, settings.realizations, |r| {
        let mut rng = rng_for(settings.seed, stream::MC_SINR, r as u64);
        // t[(k, j)] = Σ_l g_hat_lk^H g_lj
        let mut t = DMatrix::from_element(k_count, k_count, C64::new(0.0, 0.0));
        let mut a4 = DVector::from_element(k_count, C64::new(0.0, 0.0));
        for l in 0..l_count {
            let d = draw_ap(l, beta, cache, pilots, n, &mut rng);
            t += d.g_hat.conjugate() * d.g.transpose();
            let noise = DVector::from_fn(n, |_, _| complex_normal(&mut rng));
            a4 += d.g_hat.conjugate() * noise;
        }
        let mut terms = [DVector::zeros(k_count), DVector::zeros(k_count), DVector::zeros(k_count)];
        let q = settings
            .sample_symbols
            .then(|| DVector::from_fn(k_count, |_, _| complex_normal(&mut rng)));
        for k in 0..k_count {
            terms[0][k] = rho_u * xi[k] * (t[(k, k)] - C64::new(mean_gain[k], 0.0)).norm_sqr();
            terms[1][k] = match &q {
                Some(q) => (0..k_count)
                    .filter(|&j| j != k)
                    .map(|j| t[(k, j)] * q[j] * (rho_u * xi[j]).sqrt())
                    .sum::<C64>()
                    .norm_sqr(),
                None => (0..k_count).filter(|&j| j != k).map(|j| rho_u * xi[j] * t[(k, j)].norm_sqr()).sum(),
            };
            terms[2][k] = a4[k].norm_sqr();
        }
        terms
    });

    let column = |i: usize| per_realization.iter().map(|t| t[i].clone()).collect::<Vec<_>>();
    let uncertainty = McEstimate::from_samples(&column(0))?;
    let interference = McEstimate::from_samples(&column(1))?;
    let noise = McEstimate::from_samples(&column(2))?;
    let totals: Vec<DVector<f64>> = per_realization.iter().map(|t| &t[0] + &t[1] + &t[2]).collect();
    let total = McEstimate::from_samples(&totals)?;

    // Delta method on desired / mean(total).
    let mean = DVector::from_fn(k_count, |k, _| desired[k] / total.mean[k]);
    let half_width = DVector::from_fn(k_count, |k, _| desired[k] * total.half_width[k] / (total.mean[k] * total.mean[k]));
    Ok(SinrEstimate {
        sinr: McEstimate {
            mean,
            half_width,
            realizations: settings.realizations,
        },
        desired,
        uncertainty,
        interference,
        noise,
    })
}

/// Sample covariances between the estimates of sensor `k` at APs `l` and `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub l: usize,
    pub m: usize,
    pub k: usize,
    /// `cov[g_hat_lnk, g_hat_mnk]` on antenna 0.
    pub entry_cov: C64,
    /// `4 sqrt(gamma_l gamma_m / M)`.
    pub entry_bound: f64,
    /// `cov[||g_hat_lk||², ||g_hat_mk||²]`.
    pub norm_cov: f64,
    /// `4 sqrt(2 N² gamma_l² gamma_m² / M)`.
    pub norm_bound: f64,
    pub realizations: usize,
}

impl CovarianceEstimate {
    pub fn within_bounds(&self) -> bool {
        self.entry_cov.norm() < self.entry_bound && self.norm_cov.abs() < self.norm_bound
    }
}

/// Estimates covariances for each `(l, m, k)` triple, simulating only the two
/// APs involved. `l == m` gives the variance, a useful sanity check.
pub fn cross_ap_covariance(
    beta: &DMatrix<f64>,
    cache: &EstimationCache,
    pilots: &PilotBook,
    triples: &[(usize, usize, usize)],
    cfg: &SystemConfig,
    settings: &McSettings,
) -> Result<Vec<CovarianceEstimate>> {
    check_inputs(beta, cache, pilots)?;
    settings.validate()?;
    let (l_count, k_count) = beta.shape();
    if l_count < 2 {
        return Err(Error::InvalidArgument("covariance across APs needs at least two APs".into()));
    }
    if settings.realizations < 2 {
        return Err(Error::InvalidArgument("covariance needs at least two realizations".into()));
    }
    let n = cfg.antennas_per_ap;
    triples
        .iter()
        .enumerate()
        .map(|(t, &(l, m, k))| {
            if l >= l_count || m >= l_count || k >= k_count {
                return Err(Error::InvalidArgument(format!("triple ({l}, {m}, {k}) out of range")));
            }
            let base = crate::seeding::derive_seed(settings.seed, stream::MC_COVARIANCE, t as u64);
            let samples = map_indexed(settings.execution, settings.realizations, |r| {
                let mut rng = rng_for(base, stream::MC_COVARIANCE, r as u64);
                let dl = draw_ap(l, beta, cache, pilots, n, &mut rng);
                let dm = if m == l { None } else { Some(draw_ap(m, beta, cache, pilots, n, &mut rng)) };
                let gm = dm.as_ref().map_or(&dl.g_hat, |d| &d.g_hat);
                (dl.g_hat[(k, 0)], gm[(k, 0)], dl.g_hat.row(k).norm_squared(), gm.row(k).norm_squared())
            });
            let mf = samples.len() as f64;
            let (mut ml, mut mm, mut nl, mut nm) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0), 0.0, 0.0);
            for s in &samples {
                ml += s.0;
                mm += s.1;
                nl += s.2;
                nm += s.3;
            }
            ml /= mf;
            mm /= mf;
            nl /= mf;
            nm /= mf;
            let mut entry_cov = C64::new(0.0, 0.0);
            let mut norm_cov = 0.0;
            for s in &samples {
                entry_cov += (s.0 - ml) * (s.1 - mm).conj();
                norm_cov += (s.2 - nl) * (s.3 - nm);
            }
            entry_cov /= mf - 1.0;
            norm_cov /= mf - 1.0;
            let (gl, gm) = (cache.gamma[(l, k)], cache.gamma[(m, k)]);
            let nf = n as f64;
            Ok(CovarianceEstimate {
                l,
                m,
                k,
                entry_cov,
                entry_bound: 4.0 * (gl * gm / mf).sqrt(),
                norm_cov,
                norm_bound: 4.0 * (nf * gl * gl * nf * gm * gm).sqrt() * std::f64::consts::SQRT_2 / mf.sqrt(),
                realizations: samples.len(),
            })
        })
        .collect()
}

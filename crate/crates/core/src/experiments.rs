//! Named reproduction scenarios, empirical CDFs and the validation suite.
//!
//! Every scenario writes into `<out>/<scenario>/`, one CSV per curve plus a
//! `summary.csv` of `key,value` rows. Outputs depend only on the config, the
//! seed and the draw/realization counts.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::closed_form::{
    associate, harvested_lb_cellfree, harvested_lb_collocated, harvested_lb_smallcell, sinr, sinr_coeffs_cellfree, sinr_coeffs_collocated,
    sinr_coeffs_smallcell, smallcell_default_eta, throughput, Architecture, BudgetPolicy,
};
use crate::config::SystemConfig;
use crate::error::{Error, Result};
use crate::exec::{map_indexed, try_map_indexed, Execution};
use crate::geometry::{large_scale_fading, place_aps, place_sensors, LargeScaleFading, Point, Topology};
use crate::monte_carlo::{cross_ap_covariance, empirical_harvested, exact_harvested_mean, empirical_sinr, gap_ratio, CovarianceEstimate, McSettings};
use crate::pilots::{build_cache, generate_pilots, EstimationCache, PilotBook};
use crate::power_control::{benchmark, compute_e0, joint_optimize, TargetSpec};
use crate::seeding::{derive_seed, rng_for, stream};

/// Relative gap allowed between the harvested-energy bound and its Monte-Carlo mean.
pub const MAX_BOUND_GAP: f64 = 0.10;
/// Share of sensors whose closed-form value must fall inside the 95% interval.
pub const MIN_CI_COVERAGE: f64 = 0.90;
pub const COVARIANCE_REALIZATIONS: usize = 10_000;
pub const COVARIANCE_TRIPLES: usize = 10;
pub const DEFAULT_TARGET_SINR: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScenarioName {
    Fig4Bound,
    Fig5Sinr,
    Fig6HarvestCdf,
    Fig7SinrCdf,
    Fig8Energy,
    Fig9Throughput,
    Lemma1Cov,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 7] = [
        ScenarioName::Fig4Bound,
        ScenarioName::Fig5Sinr,
        ScenarioName::Fig6HarvestCdf,
        ScenarioName::Fig7SinrCdf,
        ScenarioName::Fig8Energy,
        ScenarioName::Fig9Throughput,
        ScenarioName::Lemma1Cov,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::Fig4Bound => "fig4_bound",
            ScenarioName::Fig5Sinr => "fig5_sinr",
            ScenarioName::Fig6HarvestCdf => "fig6_harvest_cdf",
            ScenarioName::Fig7SinrCdf => "fig7_sinr_cdf",
            ScenarioName::Fig8Energy => "fig8_energy",
            ScenarioName::Fig9Throughput => "fig9_throughput",
            ScenarioName::Lemma1Cov => "lemma1_cov",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            ScenarioName::Fig4Bound => "harvested-energy lower bound vs Monte-Carlo, per sensor",
            ScenarioName::Fig5Sinr => "closed-form uplink SINR vs Monte-Carlo, per sensor",
            ScenarioName::Fig6HarvestCdf => "CDF of harvested energy per second, three architectures",
            ScenarioName::Fig7SinrCdf => "CDF of uplink SINR at full power, three architectures",
            ScenarioName::Fig8Energy => "total AP transmit energy, optimized vs uniform benchmark",
            ScenarioName::Fig9Throughput => "CDF of per-user throughput, optimized vs uniform benchmark",
            ScenarioName::Lemma1Cov => "cross-AP covariance of channel estimates",
        }
    }

    /// Per-sensor comparisons use a handful of draws; CDFs use the full count.
    pub fn default_draws(self) -> usize {
        match self {
            ScenarioName::Fig4Bound | ScenarioName::Fig5Sinr => 5,
            ScenarioName::Lemma1Cov => 1,
            _ => 200,
        }
    }
}

impl fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ScenarioName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase();
        ScenarioName::ALL
            .into_iter()
            .find(|n| n.as_str() == key || n.as_str().split('_').next() == Some(key.as_str()))
            .ok_or_else(|| Error::UnknownScenario(s.to_string()))
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: ScenarioName,
    pub config: SystemConfig,
    pub draws: usize,
    pub mc_realizations: usize,
    pub seed: u64,
    pub covariance_realizations: usize,
    pub covariance_triples: usize,
    pub target_sinr: f64,
    pub execution: Execution,
}

impl Scenario {
    pub fn new(name: ScenarioName, config: SystemConfig) -> Self {
        Self {
            name,
            seed: config.seed,
            config,
            draws: name.default_draws(),
            mc_realizations: 500,
            covariance_realizations: COVARIANCE_REALIZATIONS,
            covariance_triples: COVARIANCE_TRIPLES,
            target_sinr: DEFAULT_TARGET_SINR,
            execution: Execution::default(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.draws == 0 || self.mc_realizations == 0 || self.covariance_realizations < 2 {
            return Err(Error::InvalidArgument("draw and realization counts must be at least 1".into()));
        }
        Ok(())
    }
}

/// Sorted samples with their empirical cumulative probabilities.
#[derive(Debug, Clone, PartialEq)]
pub struct CdfSeries {
    pub label: String,
    pub values: Vec<f64>,
    pub probabilities: Vec<f64>,
}

impl CdfSeries {
    pub fn percentile(&self, p: f64) -> f64 {
        self.values[percentile_index(self.values.len(), p)]
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["value", "probability"])?;
        for (v, p) in self.values.iter().zip(&self.probabilities) {
            w.write_record([v.to_string(), p.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// The `i`-th smallest of `n` samples maps to probability `i/n`.
pub fn cdf(label: &str, samples: &[f64]) -> Result<CdfSeries> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    if let Some(bad) = samples.iter().find(|v| v.is_nan()) {
        return Err(Error::InvalidArgument(format!("sample {bad} cannot be ranked")));
    }
    let mut values = samples.to_vec();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let probabilities = (1..=values.len()).map(|i| i as f64 / n).collect();
    Ok(CdfSeries {
        label: label.to_string(),
        values,
        probabilities,
    })
}

/// Zero-based index of the `ceil(p n)`-th smallest sample, clamped to `[1, n]`.
pub fn percentile_index(n: usize, p: f64) -> usize {
    let rank = (p * n as f64 - 1e-9).ceil().max(1.0) as usize;
    rank.min(n) - 1
}

pub fn percentile(samples: &[f64], p: f64) -> Result<f64> {
    Ok(cdf("", samples)?.percentile(p))
}

pub fn median(samples: &[f64]) -> Result<f64> {
    percentile(samples, 0.5)
}

/// Fixed pilot book plus the per-draw generators.
#[derive(Debug, Clone)]
pub struct Environment {
    pub config: SystemConfig,
    pub seed: u64,
    pub pilots: PilotBook,
    ap_positions: Vec<Point>,
}

/// One large-scale realization with its estimation cache.
#[derive(Debug, Clone)]
pub struct Draw {
    pub index: usize,
    pub fading: LargeScaleFading,
    pub cache: EstimationCache,
}

impl Draw {
    pub fn beta(&self) -> &DMatrix<f64> {
        &self.fading.beta
    }
}

/// All `L·N` antennas at the centre of the area.
#[derive(Debug, Clone)]
pub struct CollocatedSite {
    /// `1 × K`.
    pub beta: DMatrix<f64>,
    pub cache: EstimationCache,
}

impl Environment {
    pub fn new(config: &SystemConfig, seed: u64) -> Result<Self> {
        let mut rng = rng_for(seed, stream::PILOTS, 0);
        let pilots = generate_pilots(config.pilot_len, config.num_sensors, config.orthogonal_pilots, &mut rng)?;
        Ok(Self {
            config: config.clone(),
            seed,
            pilots,
            ap_positions: place_aps(config.num_aps, config.side_m)?,
        })
    }

    pub fn draw(&self, index: usize) -> Result<Draw> {
        let cfg = &self.config;
        let sensors = place_sensors(cfg.num_sensors, cfg.side_m, &mut rng_for(self.seed, stream::SENSORS, index as u64))?;
        let topology = Topology {
            side_m: cfg.side_m,
            aps: self.ap_positions.clone(),
            sensors,
            wrap: true,
        };
        let fading = large_scale_fading(&topology, &cfg.path_loss, &mut rng_for(self.seed, stream::SHADOWING, index as u64));
        let cache = build_cache(&fading.beta, &self.pilots, cfg.tau_rho_p())?;
        Ok(Draw { index, fading, cache })
    }

    /// The collocated counterpart of `draw`: same sensors, one central site,
    /// independent shadowing.
    pub fn collocated(&self, draw: &Draw) -> Result<CollocatedSite> {
        let cfg = &self.config;
        let topology = Topology {
            side_m: cfg.side_m,
            aps: vec![Point::new(cfg.side_m / 2.0, cfg.side_m / 2.0)],
            sensors: draw.fading.topology.sensors.clone(),
            wrap: true,
        };
        let mut rng = rng_for(self.seed, stream::COLLOCATED_SHADOWING, draw.index as u64);
        let beta = large_scale_fading(&topology, &cfg.path_loss, &mut rng).beta;
        let cache = build_cache(&beta, &self.pilots, cfg.tau_rho_p())?;
        Ok(CollocatedSite { beta, cache })
    }

    fn mc(&self, stream_id: u64, draw: usize, realizations: usize, execution: Execution) -> McSettings {
        McSettings {
            realizations,
            seed: derive_seed(self.seed, stream_id, draw as u64),
            execution,
            sample_symbols: false,
        }
    }
}

/// Uniform downlink split used for the bound and architecture comparisons.
pub fn uniform_eta(l: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_element(l, k, 1.0 / k as f64)
}

/// One named pass/fail assertion.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ScenarioReport {
    pub name: String,
    pub files: Vec<PathBuf>,
    pub checks: Vec<Check>,
    pub summary: Vec<(String, f64)>,
}

impl ScenarioReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn value(&self, key: &str) -> Option<f64> {
        self.summary.iter().find(|(k, _)| k == key).map(|(_, v)| *v)
    }
}

struct Output {
    dir: PathBuf,
    report: ScenarioReport,
}

impl Output {
    fn new(root: &Path, name: ScenarioName) -> Result<Self> {
        let dir = root.join(name.as_str());
        std::fs::create_dir_all(&dir)?;
        Ok(Self {
            dir,
            report: ScenarioReport {
                name: name.as_str().to_string(),
                ..ScenarioReport::default()
            },
        })
    }

    fn path(&mut self, file: &str) -> PathBuf {
        let p = self.dir.join(file);
        self.report.files.push(p.clone());
        p
    }

    fn table(&mut self, file: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_path(self.path(file))?;
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    fn cdf(&mut self, series: &CdfSeries) -> Result<()> {
        let p = self.path(&format!("{}.csv", series.label));
        series.write_csv(&p)
    }

    fn stat(&mut self, key: &str, value: f64) {
        self.report.summary.push((key.to_string(), value));
    }

    fn check(&mut self, check: Check) {
        self.report.checks.push(check);
    }

    fn finish(mut self) -> Result<ScenarioReport> {
        let mut rows: Vec<Vec<String>> = self.report.summary.iter().map(|(k, v)| vec![k.clone(), v.to_string()]).collect();
        rows.extend(
            self.report
                .checks
                .iter()
                .map(|c| vec![format!("check:{}", c.name), if c.passed { "1" } else { "0" }.to_string()]),
        );
        self.table("summary.csv", &["key", "value"], rows)?;
        Ok(self.report)
    }
}

fn coverage_share(hits: usize, total: usize) -> f64 {
    hits as f64 / total.max(1) as f64
}

pub fn run_scenario(scenario: &Scenario, out_root: &Path) -> Result<ScenarioReport> {
    scenario.validate()?;
    let env = Environment::new(&scenario.config, scenario.seed)?;
    let out = Output::new(out_root, scenario.name)?;
    log::info!("running {} with {} draws", scenario.name, scenario.draws);
    match scenario.name {
        ScenarioName::Fig4Bound => fig4(&env, scenario, out),
        ScenarioName::Fig5Sinr => fig5(&env, scenario, out),
        ScenarioName::Fig6HarvestCdf => fig6(&env, scenario, out),
        ScenarioName::Fig7SinrCdf => fig7(&env, scenario, out),
        ScenarioName::Fig8Energy => fig8(&env, scenario, out),
        ScenarioName::Fig9Throughput => fig9(&env, scenario, out),
        ScenarioName::Lemma1Cov => lemma1(&env, scenario, out),
    }
}

fn fig4(env: &Environment, sc: &Scenario, mut out: Output) -> Result<ScenarioReport> {
    let cfg = &env.config;
    let per_draw = try_map_indexed(Execution::Sequential, sc.draws, |d| {
        let draw = env.draw(d)?;
        let eta = uniform_eta(cfg.num_aps, cfg.num_sensors);
        let lb = harvested_lb_cellfree(&eta, &draw.cache.gamma, cfg, 1.0)?;
        let mc = env.mc(stream::MC_HARVEST, d, sc.mc_realizations, sc.execution);
        let est = empirical_harvested(draw.beta(), &draw.cache, &env.pilots, &eta, 1.0, cfg, &mc)?;
        let exact = exact_harvested_mean(draw.beta(), &draw.cache, &eta, 1.0, cfg)?;
        Ok::<_, Error>((lb, est.energy, exact))
    })?;

    let mut rows = Vec::new();
    let (mut below, mut tight, mut total) = (0, 0, 0);
    let mut worst_gap: f64 = f64::NEG_INFINITY;
    let mut worst_exact_gap: f64 = f64::NEG_INFINITY;
    for (d, (lb, est, exact)) in per_draw.iter().enumerate() {
        for k in 0..lb.len() {
            let gap = gap_ratio(lb[k], est.mean[k]);
            let exact_gap = gap_ratio(lb[k], exact[k]);
            total += 1;
            below += usize::from(lb[k] <= est.mean[k]);
            tight += usize::from(gap < MAX_BOUND_GAP);
            worst_gap = worst_gap.max(gap);
            worst_exact_gap = worst_exact_gap.max(exact_gap);
            rows.push(vec![
                d.to_string(),
                k.to_string(),
                lb[k].to_string(),
                est.mean[k].to_string(),
                est.half_width[k].to_string(),
                gap.to_string(),
                exact[k].to_string(),
                exact_gap.to_string(),
            ]);
        }
    }
    out.table(
        "per_sensor.csv",
        &["draw", "k", "closed_form", "mc_mean", "mc_ci_halfwidth", "gap_ratio", "exact_mean", "exact_gap_ratio"],
        rows,
    )?;
    out.stat("sensors", total as f64);
    out.stat("max_gap_ratio", worst_gap);
    out.stat("max_exact_gap_ratio", worst_exact_gap);
    out.check(Check::new("fig4_lower_bound", below == total, format!("{below}/{total} sensors with bound <= MC mean")));
    out.check(Check::new(
        "fig4_gap_below_10pct",
        tight == total,
        format!("{tight}/{total} sensors with gap < {MAX_BOUND_GAP}, worst {worst_gap:.4} (exact mean gives {worst_exact_gap:.4})"),
    ));
    out.finish()
}

fn fig5(env: &Environment, sc: &Scenario, mut out: Output) -> Result<ScenarioReport> {
    let cfg = &env.config;
    let xi = DVector::from_element(cfg.num_sensors, 1.0);
    let per_draw = try_map_indexed(Execution::Sequential, sc.draws, |d| {
        let draw = env.draw(d)?;
        let coeffs = sinr_coeffs_cellfree(&draw.cache, draw.beta(), cfg.antennas_per_ap, cfg.rho_u)?;
        let closed = sinr(&coeffs, &xi)?;
        let mc = env.mc(stream::MC_SINR, d, sc.mc_realizations, sc.execution);
        let est = empirical_sinr(draw.beta(), &draw.cache, &env.pilots, &xi, cfg, &mc)?;
        let noise_theory = draw.cache.gamma.row_sum().transpose() * cfg.antennas_per_ap as f64;
        Ok::<_, Error>((closed, est, noise_theory))
    })?;

    let (mut rows, mut noise_rows) = (Vec::new(), Vec::new());
    let (mut hits, mut noise_hits, mut total) = (0, 0, 0);
    let mut worst: f64 = 0.0;
    for (d, (closed, est, noise)) in per_draw.iter().enumerate() {
        for k in 0..closed.len() {
            total += 1;
            hits += usize::from(est.sinr.contains(k, closed[k]));
            noise_hits += usize::from(est.noise.contains(k, noise[k]));
            worst = worst.max((closed[k] / est.sinr.mean[k] - 1.0).abs());
            rows.push(vec![
                d.to_string(),
                k.to_string(),
                closed[k].to_string(),
                est.sinr.mean[k].to_string(),
                est.sinr.half_width[k].to_string(),
                gap_ratio(closed[k], est.sinr.mean[k]).to_string(),
            ]);
            noise_rows.push(vec![
                d.to_string(),
                k.to_string(),
                noise[k].to_string(),
                est.noise.mean[k].to_string(),
                est.noise.half_width[k].to_string(),
            ]);
        }
    }
    out.table("per_sensor.csv", &["draw", "k", "closed_form", "mc_mean", "mc_ci_halfwidth", "gap_ratio"], rows)?;
    out.table("noise_term.csv", &["draw", "k", "closed_form", "mc_mean", "mc_ci_halfwidth"], noise_rows)?;
    let share = coverage_share(hits, total);
    let noise_share = coverage_share(noise_hits, total);
    out.stat("ci_coverage", share);
    out.stat("noise_ci_coverage", noise_share);
    out.stat("max_relative_difference", worst);
    out.check(Check::new(
        "fig5_sinr_within_ci",
        share >= MIN_CI_COVERAGE,
        format!("{hits}/{total} sensors inside the 95% CI (need {MIN_CI_COVERAGE})"),
    ));
    out.check(Check::new(
        "fig5_noise_term",
        noise_share >= MIN_CI_COVERAGE,
        format!("{noise_hits}/{total} noise terms inside the 95% CI"),
    ));
    out.finish()
}

/// Per-architecture samples pooled over draws, sensor-major within a draw.
#[derive(Debug, Clone, Default)]
pub struct ArchitectureSamples {
    /// Harvested energy per second, `Ẽ_k / (λ Q)`.
    pub harvest: [Vec<f64>; 3],
    /// Uplink SINR at full power.
    pub sinr: [Vec<f64>; 3],
}

impl ArchitectureSamples {
    pub fn harvest_of(&self, a: Architecture) -> &[f64] {
        &self.harvest[arch_index(a)]
    }

    pub fn sinr_of(&self, a: Architecture) -> &[f64] {
        &self.sinr[arch_index(a)]
    }
}

fn arch_index(a: Architecture) -> usize {
    match a {
        Architecture::CellFree => 0,
        Architecture::Collocated => 1,
        Architecture::SmallCell => 2,
    }
}

/// Closed-form harvest (uniform WPT, small cells at full power to their
/// sensors) and full-power SINR for all three layouts, over `draws` draws.
pub fn architecture_samples(env: &Environment, draws: usize, execution: Execution) -> Result<ArchitectureSamples> {
    let cfg = &env.config;
    let (l, k, n) = (cfg.num_aps, cfg.num_sensors, cfg.antennas_per_ap);
    let q = cfg.data_blocks as f64;
    let xi = DVector::from_element(k, 1.0);
    let per_draw = try_map_indexed(execution, draws, |d| {
        let draw = env.draw(d)?;
        let site = env.collocated(&draw)?;
        let assoc = associate(draw.beta());
        let gamma = &draw.cache.gamma;

        let cf = harvested_lb_cellfree(&uniform_eta(l, k), gamma, cfg, 1.0)? / q;
        let site_gamma = site.cache.gamma.row(0).transpose();
        let cm = harvested_lb_collocated(&DVector::from_element(k, 1.0 / k as f64), &site_gamma, cfg, 1.0)? / q;
        let sc = harvested_lb_smallcell(&smallcell_default_eta(&assoc), gamma, &assoc, cfg, 1.0, BudgetPolicy::WarnOnly)? / q;

        let g_cf = sinr(&sinr_coeffs_cellfree(&draw.cache, draw.beta(), n, cfg.rho_u)?, &xi)?;
        let g_cm = sinr(&sinr_coeffs_collocated(&site.cache, &site.beta, l, n, cfg.rho_u)?, &xi)?;
        let g_sc = sinr(&sinr_coeffs_smallcell(&draw.cache, draw.beta(), &assoc, n, cfg.rho_u)?, &xi)?;
        Ok::<_, Error>(([cf, cm, sc], [g_cf, g_cm, g_sc]))
    })?;
    let mut out = ArchitectureSamples::default();
    for (h, g) in per_draw {
        for a in 0..3 {
            out.harvest[a].extend(h[a].iter());
            out.sinr[a].extend(g[a].iter());
        }
    }
    Ok(out)
}

/// Checks that cell-free beats small cells and at least doubles collocated at
/// the 5th percentile.
pub fn ordering_checks(samples: &ArchitectureSamples) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (metric, pools) in [("harvest", &samples.harvest), ("sinr", &samples.sinr)] {
        let p = |a: Architecture| percentile(&pools[arch_index(a)], 0.05);
        let (cf, cm, sc) = (p(Architecture::CellFree)?, p(Architecture::Collocated)?, p(Architecture::SmallCell)?);
        checks.push(Check::new(
            format!("{metric}_cellfree_over_smallcell"),
            cf > sc,
            format!("5th percentile {cf:.4e} vs {sc:.4e}"),
        ));
        checks.push(Check::new(
            format!("{metric}_cellfree_over_collocated"),
            cf >= 2.0 * cm,
            format!("5th percentile {cf:.4e} vs {cm:.4e} (ratio {:.2})", cf / cm),
        ));
    }
    Ok(checks)
}

fn architecture_figure(env: &Environment, sc: &Scenario, mut out: Output, harvest: bool) -> Result<ScenarioReport> {
    let samples = architecture_samples(env, sc.draws, sc.execution)?;
    let pools = if harvest { &samples.harvest } else { &samples.sinr };
    for a in Architecture::ALL {
        let series = cdf(a.as_str(), &pools[arch_index(a)])?;
        out.stat(&format!("{a}_p05"), series.percentile(0.05));
        out.stat(&format!("{a}_median"), series.percentile(0.5));
        out.cdf(&series)?;
    }
    let metric = if harvest { "harvest" } else { "sinr" };
    for c in ordering_checks(&samples)?.into_iter().filter(|c| c.name.starts_with(metric)) {
        out.check(c);
    }
    out.finish()
}

fn fig6(env: &Environment, sc: &Scenario, out: Output) -> Result<ScenarioReport> {
    architecture_figure(env, sc, out, true)
}

fn fig7(env: &Environment, sc: &Scenario, out: Output) -> Result<ScenarioReport> {
    architecture_figure(env, sc, out, false)
}

/// Optimized vs benchmark outcome for one draw; `None` fields mean P1 was infeasible.
#[derive(Debug, Clone)]
pub struct OptimizationDraw {
    pub index: usize,
    pub optimized: Option<PolicyOutcome>,
    pub benchmark: PolicyOutcome,
    pub infeasible_reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutcome {
    pub xi_tr: f64,
    pub lambda: f64,
    pub sinr: DVector<f64>,
    pub rate: DVector<f64>,
}

pub fn optimization_samples(env: &Environment, draws: usize, target: f64, execution: Execution) -> Result<Vec<OptimizationDraw>> {
    let cfg = &env.config;
    let targets = TargetSpec::uniform(cfg.num_sensors, target, cfg);
    let e0 = compute_e0(cfg);
    try_map_indexed(execution, draws, |d| {
        let draw = env.draw(d)?;
        let coeffs = sinr_coeffs_cellfree(&draw.cache, draw.beta(), cfg.antennas_per_ap, cfg.rho_u)?;
        let b = benchmark(&coeffs, &draw.cache.gamma, e0, cfg)?;
        let benchmark = PolicyOutcome {
            xi_tr: b.xi_tr,
            lambda: b.lambda,
            sinr: b.sinr,
            rate: b.rate,
        };
        match joint_optimize(&coeffs, &draw.cache.gamma, &targets, cfg) {
            Ok(j) => Ok(OptimizationDraw {
                index: d,
                optimized: Some(PolicyOutcome {
                    xi_tr: j.ledger.xi_tr,
                    lambda: j.downlink.lambda_star,
                    sinr: &j.uplink.residuals + &targets.delta,
                    rate: j.ledger.rate,
                }),
                benchmark,
                infeasible_reason: None,
            }),
            Err(e @ (Error::InfeasibleTarget { .. } | Error::DegenerateSystem { .. })) => {
                log::info!("draw {d}: target {target} not reachable ({e})");
                Ok(OptimizationDraw {
                    index: d,
                    optimized: None,
                    benchmark,
                    infeasible_reason: Some(e.to_string()),
                })
            }
            Err(e) => Err(e),
        }
    })
}

/// Median ratios over feasible draws: `(Ξ_opt / Ξ_bench, R_opt / R_bench)`,
/// the latter over pooled per-user medians.
pub fn optimization_ratios(draws: &[OptimizationDraw]) -> Option<(f64, f64)> {
    let feasible: Vec<_> = draws.iter().filter_map(|d| d.optimized.as_ref().map(|o| (o, &d.benchmark))).collect();
    if feasible.is_empty() {
        return None;
    }
    let energy: Vec<f64> = feasible.iter().map(|(o, b)| o.xi_tr / b.xi_tr).collect();
    let opt_rates: Vec<f64> = feasible.iter().flat_map(|(o, _)| o.rate.iter().copied()).collect();
    let bench_rates: Vec<f64> = feasible.iter().flat_map(|(_, b)| b.rate.iter().copied()).collect();
    Some((median(&energy).ok()?, median(&opt_rates).ok()? / median(&bench_rates).ok()?))
}

/// Criterion thresholds for the optimization gains.
pub const MAX_ENERGY_RATIO: f64 = 0.85;
pub const MIN_THROUGHPUT_RATIO: f64 = 1.5;

fn gains_checks(draws: &[OptimizationDraw]) -> Vec<Check> {
    let feasible = draws.iter().filter(|d| d.optimized.is_some()).count();
    match optimization_ratios(draws) {
        None => vec![Check::new(
            "optimization_feasible",
            false,
            format!("target infeasible in all {} draws", draws.len()),
        )],
        Some((e, r)) => vec![
            Check::new(
                "energy_reduction",
                e <= MAX_ENERGY_RATIO,
                format!("median optimized/benchmark energy {e:.3} over {feasible}/{} feasible draws", draws.len()),
            ),
            Check::new(
                "throughput_gain",
                r >= MIN_THROUGHPUT_RATIO,
                format!("median optimized/benchmark throughput {r:.3} over {feasible}/{} feasible draws", draws.len()),
            ),
        ],
    }
}

fn fig8(env: &Environment, sc: &Scenario, mut out: Output) -> Result<ScenarioReport> {
    let draws = optimization_samples(env, sc.draws, sc.target_sinr, sc.execution)?;
    let rows = draws.iter().map(|d| {
        let (opt, lam) = d.optimized.as_ref().map_or((String::new(), String::new()), |o| (o.xi_tr.to_string(), o.lambda.to_string()));
        let ratio = d.optimized.as_ref().map_or(String::new(), |o| (o.xi_tr / d.benchmark.xi_tr).to_string());
        vec![
            d.index.to_string(),
            u8::from(d.optimized.is_some()).to_string(),
            opt,
            d.benchmark.xi_tr.to_string(),
            ratio,
            lam,
            d.benchmark.lambda.to_string(),
        ]
    });
    out.table(
        "per_draw.csv",
        &["draw", "feasible", "Xi_tr_optimized", "Xi_tr_benchmark", "ratio", "lambda_star", "lambda_benchmark"],
        rows.collect::<Vec<_>>(),
    )?;
    summarize_optimization(&mut out, &draws);
    for c in gains_checks(&draws).into_iter().filter(|c| c.name != "throughput_gain") {
        out.check(c);
    }
    out.finish()
}

fn fig9(env: &Environment, sc: &Scenario, mut out: Output) -> Result<ScenarioReport> {
    let cfg = &env.config;
    let draws = optimization_samples(env, sc.draws, sc.target_sinr, sc.execution)?;
    let mut rows = Vec::new();
    let (mut opt_rates, mut bench_rates) = (Vec::new(), Vec::new());
    let mut max_recompute_err: f64 = 0.0;
    for d in draws.iter() {
        let Some(o) = &d.optimized else { continue };
        for (policy, p, pool) in [("optimized", o, &mut opt_rates), ("benchmark", &d.benchmark, &mut bench_rates)] {
            for k in 0..p.rate.len() {
                let again = throughput(p.sinr[k], p.lambda, cfg);
                max_recompute_err = max_recompute_err.max((again - p.rate[k]).abs() / p.rate[k].max(f64::MIN_POSITIVE));
                pool.push(p.rate[k]);
                rows.push(vec![
                    d.index.to_string(),
                    k.to_string(),
                    policy.to_string(),
                    p.sinr[k].to_string(),
                    p.lambda.to_string(),
                    p.rate[k].to_string(),
                ]);
            }
        }
    }
    out.table("per_user.csv", &["draw", "k", "policy", "sinr", "lambda", "rate_bps"], rows)?;
    if !opt_rates.is_empty() {
        out.cdf(&cdf("optimized", &opt_rates)?)?;
        out.cdf(&cdf("benchmark", &bench_rates)?)?;
    }
    summarize_optimization(&mut out, &draws);
    out.check(Check::new("rate_recomputes", max_recompute_err < 1e-12, format!("max relative error {max_recompute_err:e}")));
    for c in gains_checks(&draws).into_iter().filter(|c| c.name != "energy_reduction") {
        out.check(c);
    }
    out.finish()
}

fn summarize_optimization(out: &mut Output, draws: &[OptimizationDraw]) {
    let feasible = draws.iter().filter(|d| d.optimized.is_some()).count();
    out.stat("draws", draws.len() as f64);
    out.stat("feasible_draws", feasible as f64);
    out.stat("infeasible_draws", (draws.len() - feasible) as f64);
    if let Some((e, r)) = optimization_ratios(draws) {
        out.stat("median_energy_ratio", e);
        out.stat("median_throughput_ratio", r);
    }
}

/// `count` random `(l, m, k)` with `l != m`.
pub fn random_triples(l_count: usize, k_count: usize, count: usize, seed: u64) -> Vec<(usize, usize, usize)> {
    let mut rng = rng_for(seed, stream::TRIPLES, 0);
    (0..count)
        .map(|_| {
            let l = rng.random_range(0..l_count);
            let mut m = rng.random_range(0..l_count - 1);
            if m >= l {
                m += 1;
            }
            (l, m, rng.random_range(0..k_count))
        })
        .collect()
}

/// Cross-AP covariances for random triples plus one same-AP variance check.
pub fn covariance_study(env: &Environment, triples: usize, realizations: usize, execution: Execution) -> Result<(Vec<CovarianceEstimate>, CovarianceEstimate)> {
    let cfg = &env.config;
    let draw = env.draw(0)?;
    let mut list = random_triples(cfg.num_aps, cfg.num_sensors, triples, env.seed);
    let (l0, _, k0) = list[0];
    list.push((l0, l0, k0));
    let settings = McSettings {
        realizations,
        seed: derive_seed(env.seed, stream::MC_COVARIANCE, 0),
        execution,
        sample_symbols: false,
    };
    let mut est = cross_ap_covariance(draw.beta(), &draw.cache, &env.pilots, &list, cfg, &settings)?;
    let same = est.pop().expect("variance triple appended");
    Ok((est, same))
}

pub fn covariance_checks(cross: &[CovarianceEstimate], same: &CovarianceEstimate, gamma: f64, antennas: usize) -> Vec<Check> {
    let inside = cross.iter().filter(|c| c.within_bounds()).count();
    let expect = antennas as f64 * gamma * gamma;
    let rel = (same.norm_cov / expect - 1.0).abs();
    vec![
        Check::new(
            "lemma1_cross_ap_uncorrelated",
            inside == cross.len(),
            format!("{inside}/{} triples below 4x the CLT scale", cross.len()),
        ),
        Check::new("lemma1_norm_variance", rel < 0.10, format!("variance off by {:.2}% from N gamma^2", 100.0 * rel)),
    ]
}

fn lemma1(env: &Environment, sc: &Scenario, mut out: Output) -> Result<ScenarioReport> {
    let (cross, same) = covariance_study(env, sc.covariance_triples, sc.covariance_realizations, sc.execution)?;
    let gamma = env.draw(0)?.cache.gamma[(same.l, same.k)];
    let rows = cross.iter().chain(std::iter::once(&same)).map(|c| {
        vec![
            c.l.to_string(),
            c.m.to_string(),
            c.k.to_string(),
            c.entry_cov.norm().to_string(),
            c.entry_bound.to_string(),
            c.norm_cov.to_string(),
            c.norm_bound.to_string(),
            u8::from(c.within_bounds()).to_string(),
        ]
    });
    out.table(
        "covariance.csv",
        &["l", "m", "k", "entry_cov_abs", "entry_bound", "norm_cov", "norm_bound", "within_bound"],
        rows.collect::<Vec<_>>(),
    )?;
    out.stat("variance_expected", env.config.antennas_per_ap as f64 * gamma * gamma);
    out.stat("variance_measured", same.norm_cov);
    for c in covariance_checks(&cross, &same, gamma, env.config.antennas_per_ap) {
        out.check(c);
    }
    out.finish()
}

/// Runs the statistical validation scenarios (bound, SINR, covariance).
pub fn validate(config: &SystemConfig, draws: usize, mc: usize, seed: u64, execution: Execution, out_root: &Path) -> Result<Vec<ScenarioReport>> {
    [ScenarioName::Fig4Bound, ScenarioName::Fig5Sinr, ScenarioName::Lemma1Cov]
        .into_iter()
        .map(|name| {
            let mut sc = Scenario::new(name, config.clone());
            sc.seed = seed;
            sc.mc_realizations = mc;
            sc.execution = execution;
            if name != ScenarioName::Lemma1Cov {
                sc.draws = draws;
            }
            run_scenario(&sc, out_root)
        })
        .collect()
}

/// Runs `f` over `n` draws without collecting errors; handy for benches.
pub fn for_each_draw<T: Send>(env: &Environment, n: usize, execution: Execution, f: impl Fn(&Draw) -> T + Sync + Send) -> Result<Vec<T>> {
    let draws = try_map_indexed(execution, n, |d| env.draw(d))?;
    Ok(map_indexed(execution, n, |d| f(&draws[d])))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SystemConfig {
        SystemConfig::desk()
            .with(|p| {
                p.num_aps = 9;
                p.num_sensors = 4;
                p.pilot_len = 3;
            })
            .unwrap()
    }

    #[test]
    fn cdf_examples() {
        let c = cdf("x", &[3.0, 1.0, 2.0]).unwrap();
        assert_eq!(c.values, vec![1.0, 2.0, 3.0]);
        assert_eq!(c.probabilities, vec![1.0 / 3.0, 2.0 / 3.0, 1.0]);
        let dup = cdf("d", &[2.0, 2.0, 1.0, 2.0]).unwrap();
        assert!(dup.probabilities.windows(2).all(|w| w[0] < w[1]));
        assert!(matches!(cdf("e", &[]), Err(Error::EmptySamples)));
        assert!(cdf("n", &[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn percentile_rule() {
        let s: Vec<f64> = (1..=200).rev().map(f64::from).collect();
        assert_eq!(percentile(&s, 0.05).unwrap(), 10.0);
        assert_eq!(percentile(&s, 0.5).unwrap(), 100.0);
        assert_eq!(percentile(&s, 0.0).unwrap(), 1.0);
        assert_eq!(percentile(&s, 1.0).unwrap(), 200.0);
        assert_eq!(percentile_index(3, 0.5), 1);
    }

    #[test]
    fn scenario_names_parse() {
        for n in ScenarioName::ALL {
            assert_eq!(n.as_str().parse::<ScenarioName>().unwrap(), n);
        }
        assert_eq!("fig8".parse::<ScenarioName>().unwrap(), ScenarioName::Fig8Energy);
        assert!(matches!("fig10".parse::<ScenarioName>(), Err(Error::UnknownScenario(_))));
    }

    #[test]
    fn draws_are_reproducible_and_pilots_fixed() {
        let env = Environment::new(&tiny(), 5).unwrap();
        let a = env.draw(3).unwrap();
        let b = env.draw(3).unwrap();
        assert_eq!(a.fading.beta, b.fading.beta);
        assert_ne!(env.draw(4).unwrap().fading.beta, a.fading.beta);
        assert_eq!(Environment::new(&tiny(), 5).unwrap().pilots, env.pilots);
        let site = env.collocated(&a).unwrap();
        assert_eq!(site.beta.shape(), (1, 4));
    }

    #[test]
    fn triples_use_distinct_aps() {
        for (l, m, k) in random_triples(4, 3, 200, 1) {
            assert_ne!(l, m);
            assert!(l < 4 && m < 4 && k < 3);
        }
    }

    #[test]
    fn every_scenario_writes_its_files() {
        let dir = tempfile::tempdir().unwrap();
        for name in ScenarioName::ALL {
            let mut sc = Scenario::new(name, tiny());
            sc.draws = 2;
            sc.mc_realizations = 20;
            sc.covariance_realizations = 50;
            sc.covariance_triples = 2;
            sc.target_sinr = 1.0;
            let report = run_scenario(&sc, dir.path()).unwrap();
            assert!(dir.path().join(name.as_str()).join("summary.csv").exists());
            assert!(report.files.iter().all(|f| f.exists()), "{name}");
            assert!(!report.checks.is_empty(), "{name}");
        }
        assert!(dir.path().join("fig6_harvest_cdf/cellfree.csv").exists());
        assert!(dir.path().join("fig9_throughput/optimized.csv").exists());
    }
}

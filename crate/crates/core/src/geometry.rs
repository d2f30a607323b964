//! AP grid, sensor drops, three-slope path loss with log-normal shadowing, and
//! Rayleigh small-scale fading.
//!
//! Positions live on a `side × side` square. With wrap-around enabled,
//! distances are measured on the torus so that every sensor sees the same AP
//! density regardless of where it was dropped.
//!
//! The path-loss model takes distances in metres but evaluates its log terms in
//! kilometres, which is the unit the `L0` intercept is calibrated for.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

impl Point {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub side_m: f64,
    pub aps: Vec<Point>,
    pub sensors: Vec<Point>,
    pub wrap: bool,
}

impl Topology {
    pub fn distance(&self, ap: usize, sensor: usize) -> f64 {
        let (p, q) = (self.aps[ap], self.sensors[sensor]);
        if self.wrap {
            wrapped_distance(p, q, self.side_m)
        } else {
            (p.x - q.x).hypot(p.y - q.y)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathLossParams {
    pub d0_m: f64,
    pub d1_m: f64,
    pub carrier_mhz: f64,
    pub ap_height_m: f64,
    pub sensor_height_m: f64,
    pub shadow_std_db: f64,
    l0: f64,
}

impl Default for PathLossParams {
    fn default() -> Self {
        Self::new(10.0, 50.0, 1900.0, 7.0, 1.65, 8.0)
    }
}

impl PathLossParams {
    pub fn new(d0_m: f64, d1_m: f64, carrier_mhz: f64, ap_height_m: f64, sensor_height_m: f64, shadow_std_db: f64) -> Self {
        Self {
            d0_m,
            d1_m,
            carrier_mhz,
            ap_height_m,
            sensor_height_m,
            shadow_std_db,
            l0: l0_db(carrier_mhz, ap_height_m, sensor_height_m),
        }
    }

    /// Intercept `L0` in dB, recomputed whenever the constructor runs.
    pub fn l0_db(&self) -> f64 {
        self.l0
    }

    pub fn with_shadowing(&self, shadow_std_db: f64) -> Self {
        Self::new(self.d0_m, self.d1_m, self.carrier_mhz, self.ap_height_m, self.sensor_height_m, shadow_std_db)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        if !(self.d0_m > 0.0 && self.d0_m < self.d1_m && self.d1_m.is_finite()) {
            return Err(Error::config("d0", format!("need 0 < d0 < d1, got d0={} d1={}", self.d0_m, self.d1_m)));
        }
        for (field, v) in [("f", self.carrier_mhz), ("h_AP", self.ap_height_m), ("h_s", self.sensor_height_m)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::config(field, format!("must be positive, got {v}")));
            }
        }
        if !(self.shadow_std_db >= 0.0 && self.shadow_std_db.is_finite()) {
            return Err(Error::config("sigma_sh", format!("must be non-negative, got {}", self.shadow_std_db)));
        }
        Ok(())
    }
}

/// Cell-centred `√L × √L` grid with spacing `side / √L`.
pub fn place_aps(count: usize, side_m: f64) -> Result<Vec<Point>> {
    let per_row = (count as f64).sqrt().round() as usize;
    if count == 0 || per_row * per_row != count {
        return Err(Error::UnsupportedLayout(count));
    }
    let spacing = side_m / per_row as f64;
    Ok((0..per_row)
        .flat_map(|i| (0..per_row).map(move |j| Point::new((i as f64 + 0.5) * spacing, (j as f64 + 0.5) * spacing)))
        .collect())
}

/// `count` i.i.d. uniform points on `[0, side)²`.
pub fn place_sensors<R: Rng + ?Sized>(count: usize, side_m: f64, rng: &mut R) -> Result<Vec<Point>> {
    if count == 0 {
        return Err(Error::InvalidArgument("at least one sensor is required".into()));
    }
    Ok((0..count)
        .map(|_| Point::new(rng.random::<f64>() * side_m, rng.random::<f64>() * side_m))
        .collect())
}

/// Euclidean distance on the torus of circumference `side`.
pub fn wrapped_distance(p: Point, q: Point, side_m: f64) -> f64 {
    let axis = |a: f64, b: f64| {
        let d = (a - b).abs();
        d.min(side_m - d)
    };
    axis(p.x, q.x).hypot(axis(p.y, q.y))
}

/// Path-loss intercept in dB for a carrier in MHz and antenna heights in metres.
pub fn l0_db(carrier_mhz: f64, ap_height_m: f64, sensor_height_m: f64) -> f64 {
    let lf = carrier_mhz.log10();
    46.3 + 33.9 * lf - 13.82 * ap_height_m.log10() - (1.1 * lf - 0.7) * sensor_height_m + (1.56 * lf - 0.8)
}

/// Three-slope path loss (a negative dB gain) at distance `d_m` metres.
pub fn path_loss_db(d_m: f64, params: &PathLossParams) -> f64 {
    let km = |m: f64| m / 1000.0;
    let l0 = params.l0_db();
    if d_m > params.d1_m {
        -l0 - 35.0 * km(d_m).log10()
    } else if d_m > params.d0_m {
        -l0 - 15.0 * km(params.d1_m).log10() - 20.0 * km(d_m).log10()
    } else {
        -l0 - 15.0 * km(params.d1_m).log10() - 20.0 * km(params.d0_m).log10()
    }
}

#[derive(Debug, Clone)]
pub struct LargeScaleFading {
    /// `L × K` linear gains.
    pub beta: DMatrix<f64>,
    pub distance_m: DMatrix<f64>,
    pub path_loss_db: DMatrix<f64>,
    pub topology: Topology,
    pub params: PathLossParams,
}

impl LargeScaleFading {
    pub fn num_aps(&self) -> usize {
        self.beta.nrows()
    }

    pub fn num_sensors(&self) -> usize {
        self.beta.ncols()
    }

    /// Columns: `l, k, distance_m, pathloss_db, beta_linear`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["l", "k", "distance_m", "pathloss_db", "beta_linear"])?;
        for l in 0..self.num_aps() {
            for k in 0..self.num_sensors() {
                w.write_record([
                    l.to_string(),
                    k.to_string(),
                    self.distance_m[(l, k)].to_string(),
                    self.path_loss_db[(l, k)].to_string(),
                    self.beta[(l, k)].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Topology positions as CSV: `kind, index, x_m, y_m`.
    pub fn write_topology_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "kind,index,x_m,y_m")?;
        for (i, p) in self.topology.aps.iter().enumerate() {
            writeln!(f, "ap,{i},{},{}", p.x, p.y)?;
        }
        for (i, p) in self.topology.sensors.iter().enumerate() {
            writeln!(f, "sensor,{i},{},{}", p.x, p.y)?;
        }
        Ok(())
    }
}

/// `beta[l][k] = 10^((PL(d_lk) + sigma_sh * z_lk) / 10)` with i.i.d. real
/// standard-normal `z`. Shadowing is drawn AP-major.
pub fn large_scale_fading<R: Rng + ?Sized>(topology: &Topology, params: &PathLossParams, rng: &mut R) -> LargeScaleFading {
    let (l_count, k_count) = (topology.aps.len(), topology.sensors.len());
    let mut beta = DMatrix::zeros(l_count, k_count);
    let mut distance_m = DMatrix::zeros(l_count, k_count);
    let mut pl_db = DMatrix::zeros(l_count, k_count);
    for l in 0..l_count {
        for k in 0..k_count {
            let d = topology.distance(l, k);
            let pl = path_loss_db(d, params);
            let z: f64 = rng.sample(StandardNormal);
            distance_m[(l, k)] = d;
            pl_db[(l, k)] = pl;
            beta[(l, k)] = 10f64.powf((pl + params.shadow_std_db * z) / 10.0);
        }
    }
    LargeScaleFading {
        beta,
        distance_m,
        path_loss_db: pl_db,
        topology: topology.clone(),
        params: params.clone(),
    }
}

/// One draw of the `L × N × K` Rayleigh coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SmallScaleRealization {
    pub aps: usize,
    pub antennas: usize,
    pub sensors: usize,
    /// Flattened `(l, n, k)` in row-major order.
    pub h: Vec<C64>,
}

impl SmallScaleRealization {
    pub fn get(&self, l: usize, n: usize, k: usize) -> C64 {
        self.h[(l * self.antennas + n) * self.sensors + k]
    }
}

/// Circularly-symmetric complex Gaussian with unit variance.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    C64::new(re, im) * std::f64::consts::FRAC_1_SQRT_2
}

pub fn draw_small_scale<R: Rng + ?Sized>(aps: usize, antennas: usize, sensors: usize, rng: &mut R) -> SmallScaleRealization {
    let h = (0..aps * antennas * sensors).map(|_| complex_normal(rng)).collect();
    SmallScaleRealization {
        aps,
        antennas,
        sensors,
        h,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn two_by_two_grid_is_cell_centred() {
        let aps = place_aps(4, 50.0).unwrap();
        assert_eq!(
            aps,
            vec![
                Point::new(12.5, 12.5),
                Point::new(12.5, 37.5),
                Point::new(37.5, 12.5),
                Point::new(37.5, 37.5)
            ]
        );
        assert_eq!(place_aps(1, 50.0).unwrap(), vec![Point::new(25.0, 25.0)]);
    }

    #[test]
    fn full_grid_spacing() {
        let aps = place_aps(144, 50.0).unwrap();
        assert_eq!(aps.len(), 144);
        assert_relative_eq!(aps[1].y - aps[0].y, 50.0 / 12.0, max_relative = 1e-12);
        assert_relative_eq!(aps[12].x - aps[0].x, 50.0 / 12.0, max_relative = 1e-12);
        assert!(aps.iter().all(|p| (0.0..50.0).contains(&p.x) && (0.0..50.0).contains(&p.y)));
    }

    #[test]
    fn non_square_layout_rejected() {
        assert!(matches!(place_aps(10, 50.0), Err(Error::UnsupportedLayout(10))));
        assert!(matches!(place_aps(0, 50.0), Err(Error::UnsupportedLayout(0))));
    }

    #[test]
    fn sensors_are_deterministic_and_uniform() {
        assert_eq!(place_sensors(5, 50.0, &mut rng(3)).unwrap(), place_sensors(5, 50.0, &mut rng(3)).unwrap());
        assert!(place_sensors(0, 50.0, &mut rng(3)).is_err());

        let n = 100_000;
        let pts = place_sensors(n, 50.0, &mut rng(4)).unwrap();
        let bound = 3.0 * 50.0 / (12.0 * n as f64).sqrt();
        let mx = pts.iter().map(|p| p.x).sum::<f64>() / n as f64;
        let my = pts.iter().map(|p| p.y).sum::<f64>() / n as f64;
        assert!((mx - 25.0).abs() < bound, "mean x {mx}");
        assert!((my - 25.0).abs() < bound, "mean y {my}");
        assert!(pts.iter().all(|p| p.x >= 0.0 && p.x < 50.0 && p.y >= 0.0 && p.y < 50.0));
    }

    #[test]
    fn torus_distance_examples() {
        let o = Point::new(0.0, 0.0);
        assert_eq!(wrapped_distance(o, o, 50.0), 0.0);
        assert_relative_eq!(wrapped_distance(o, Point::new(49.0, 0.0), 50.0), 1.0, epsilon = 1e-12);
        assert_relative_eq!(wrapped_distance(o, Point::new(25.0, 25.0), 50.0), 35.355_339_059_327_38, epsilon = 1e-12);
    }

    #[test]
    fn intercept_value() {
        // Term by term at f=1900, h_AP=7, h_s=1.65:
        // 46.3 + 111.1496 - 11.6793 - 4.7959 + 4.3148 = 145.2892
        let l0 = l0_db(1900.0, 7.0, 1.65);
        assert_relative_eq!(l0, 145.2892, epsilon = 1e-3);
        let diff = l0_db(1900.0, 7.0, 0.0) - l0;
        assert_relative_eq!(diff, (1.1 * 1900f64.log10() - 0.7) * 1.65, epsilon = 1e-12);
    }

    #[test]
    fn intercept_increases_with_frequency() {
        let mut prev = l0_db(100.0, 7.0, 1.65);
        for f in (110..=3000).step_by(10) {
            let cur = l0_db(f as f64, 7.0, 1.65);
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn path_loss_branches() {
        let p = PathLossParams::default();
        let l0 = p.l0_db();
        let flat = -l0 - 15.0 * 0.05f64.log10() - 20.0 * 0.01f64.log10();
        for d in [0.0, 1.0, 5.0, 10.0] {
            assert_eq!(path_loss_db(d, &p), flat);
        }
        assert_relative_eq!(path_loss_db(100.0, &p), -l0 - 35.0 * 0.1f64.log10(), epsilon = 1e-12);
        assert_relative_eq!(path_loss_db(30.0, &p), -l0 - 15.0 * 0.05f64.log10() - 20.0 * 0.03f64.log10(), epsilon = 1e-12);
    }

    #[test]
    fn path_loss_is_continuous_at_breakpoints() {
        let p = PathLossParams::default();
        for d in [p.d0_m, p.d1_m] {
            let below = path_loss_db(d, &p);
            let above = path_loss_db(d * (1.0 + 1e-14), &p);
            assert!((below - above).abs() < 1e-12, "jump at {d}: {below} vs {above}");
        }
        let l0 = p.l0_db();
        let outer = -l0 - 35.0 * 0.05f64.log10();
        let middle = -l0 - 15.0 * 0.05f64.log10() - 20.0 * 0.05f64.log10();
        assert!((outer - middle).abs() < 1e-12);
    }

    #[test]
    fn zero_shadowing_is_deterministic_path_loss() {
        let aps = place_aps(9, 50.0).unwrap();
        let sensors = place_sensors(6, 50.0, &mut rng(9)).unwrap();
        let topo = Topology { side_m: 50.0, aps, sensors, wrap: true };
        let p = PathLossParams::default().with_shadowing(0.0);
        let f = large_scale_fading(&topo, &p, &mut rng(1));
        for l in 0..9 {
            for k in 0..6 {
                assert_eq!(f.beta[(l, k)], 10f64.powf(path_loss_db(topo.distance(l, k), &p) / 10.0));
            }
        }
    }

    #[test]
    fn shadowing_has_unit_normalized_spread() {
        let n = 100_000;
        let topo = Topology {
            side_m: 50.0,
            aps: vec![Point::new(25.0, 25.0)],
            sensors: vec![Point::new(20.0, 20.0); n],
            wrap: true,
        };
        let p = PathLossParams::default();
        let f = large_scale_fading(&topo, &p, &mut rng(11));
        let z: Vec<f64> = (0..n)
            .map(|k| 10.0 * (f.beta[(0, k)] / 10f64.powf(f.path_loss_db[(0, k)] / 10.0)).log10() / p.shadow_std_db)
            .collect();
        let mean = z.iter().sum::<f64>() / n as f64;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
        assert!((sd - 1.0).abs() < 0.02, "sd {sd}");
    }

    #[test]
    fn full_scale_gains_are_finite_and_positive() {
        let aps = place_aps(144, 50.0).unwrap();
        let sensors = place_sensors(20, 50.0, &mut rng(5)).unwrap();
        let topo = Topology { side_m: 50.0, aps, sensors, wrap: true };
        let f = large_scale_fading(&topo, &PathLossParams::default(), &mut rng(6));
        assert!(f.beta.iter().all(|b| b.is_finite() && *b > 0.0));
        let again = large_scale_fading(&topo, &PathLossParams::default(), &mut rng(6));
        assert_eq!(f.beta, again.beta);
    }

    #[test]
    fn small_scale_moments() {
        let r = draw_small_scale(10, 10, 10_000, &mut rng(8));
        let n = r.h.len() as f64;
        let power = r.h.iter().map(|h| h.norm_sqr()).sum::<f64>() / n;
        let mean = r.h.iter().sum::<C64>() / n;
        assert!((power - 1.0).abs() < 0.005, "power {power}");
        assert!(mean.norm() < 3.0 / n.sqrt(), "mean {mean}");
        assert_eq!(r, draw_small_scale(10, 10, 10_000, &mut rng(8)));
    }

    proptest! {
        #[test]
        fn torus_metric(ax in 0.0f64..50.0, ay in 0.0f64..50.0, bx in 0.0f64..50.0, by in 0.0f64..50.0, cx in 0.0f64..50.0, cy in 0.0f64..50.0) {
            let (a, b, c) = (Point::new(ax, ay), Point::new(bx, by), Point::new(cx, cy));
            let d = |p, q| wrapped_distance(p, q, 50.0);
            prop_assert_eq!(d(a, a), 0.0);
            prop_assert!((d(a, b) - d(b, a)).abs() < 1e-12);
            prop_assert!(d(a, c) <= d(a, b) + d(b, c) + 1e-12);
            prop_assert!(d(a, b) <= 25.0 * 2f64.sqrt() + 1e-12);
        }

        #[test]
        fn path_loss_non_increasing(d in 0.0f64..200.0, step in 0.0f64..50.0) {
            let p = PathLossParams::default();
            prop_assert!(path_loss_db(d + step, &p) <= path_loss_db(d, &p) + 1e-12);
        }
    }
}

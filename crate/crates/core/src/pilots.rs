//! Pilot book and per-AP LMMSE channel estimation.
//!
//! For AP `l` with large-scale gains `D_l = diag(beta_l,·)` the received pilot
//! block at one antenna is `y = sqrt(tau rho_p) Psi g + w` and the estimate is
//! `g_hat = A_l^H y` with
//!
//! ```text
//! Z_l = tau rho_p Psi D_l Psi^H + I
//! A_l = sqrt(tau rho_p) Z_l^{-1} Psi D_l
//! gamma_lk = sqrt(tau rho_p) beta_lk psi_k^H a_lk
//! ```
//!
//! `Z_l` is never inverted explicitly; `A_l` comes from a Cholesky solve.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::complex_normal;
use crate::linalg::hermitian_solve;
use crate::C64;

/// `tau × K` matrix of unit-norm pilot columns.
#[derive(Debug, Clone, PartialEq)]
pub struct PilotBook {
    pub psi: DMatrix<C64>,
}

impl PilotBook {
    pub fn new(psi: DMatrix<C64>) -> Result<Self> {
        for (k, col) in psi.column_iter().enumerate() {
            let norm = col.norm_squared();
            if (norm - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidArgument(format!("pilot {k} has squared norm {norm}, expected 1")));
            }
        }
        Ok(Self { psi })
    }

    pub fn len(&self) -> usize {
        self.psi.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.psi.nrows() == 0
    }

    pub fn num_sensors(&self) -> usize {
        self.psi.ncols()
    }

    /// Modified Gram-Schmidt over the columns. Needs `tau >= K`.
    pub fn orthonormalized(&self) -> Result<Self> {
        let (tau, k) = self.psi.shape();
        if tau < k {
            return Err(Error::InvalidArgument(format!("cannot orthogonalize {k} pilots of length {tau}")));
        }
        let mut q = self.psi.clone();
        for j in 0..k {
            for i in 0..j {
                let proj = q.column(i).dotc(&q.column(j));
                let qi = q.column(i).clone_owned();
                q.column_mut(j).axpy(-proj, &qi, C64::new(1.0, 0.0));
            }
            let norm = q.column(j).norm();
            if norm < 1e-10 {
                return Err(Error::Numerical(format!("pilot {j} is linearly dependent on earlier pilots")));
            }
            q.column_mut(j).unscale_mut(norm);
        }
        Ok(Self { psi: q })
    }

    /// Raw little-endian dump: `tau: u64, K: u64`, then column-major `(re, im)` pairs.
    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(self.psi.nrows() as u64).to_le_bytes())?;
        f.write_all(&(self.psi.ncols() as u64).to_le_bytes())?;
        for v in self.psi.iter() {
            f.write_all(&v.re.to_le_bytes())?;
            f.write_all(&v.im.to_le_bytes())?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let word = |i: usize| -> Result<[u8; 8]> {
            bytes
                .get(8 * i..8 * i + 8)
                .map(|s| s.try_into().expect("8-byte slice"))
                .ok_or_else(|| Error::InvalidArgument(format!("truncated pilot file {}", path.display())))
        };
        let tau = u64::from_le_bytes(word(0)?) as usize;
        let k = u64::from_le_bytes(word(1)?) as usize;
        let values = (0..tau * k)
            .map(|i| Ok(C64::new(f64::from_le_bytes(word(2 + 2 * i)?), f64::from_le_bytes(word(3 + 2 * i)?))))
            .collect::<Result<Vec<_>>>()?;
        Self::new(DMatrix::from_vec(tau, k, values))
    }
}

/// Each column drawn i.i.d. complex Gaussian and scaled to unit norm.
/// With `orthogonal` set the book is additionally Gram-Schmidt orthonormalized.
pub fn generate_pilots<R: Rng + ?Sized>(tau: usize, k: usize, orthogonal: bool, rng: &mut R) -> Result<PilotBook> {
    if tau == 0 || k == 0 {
        return Err(Error::InvalidArgument(format!("pilot book needs tau >= 1 and K >= 1, got {tau}x{k}")));
    }
    let mut psi = DMatrix::from_fn(tau, k, |_, _| C64::new(0.0, 0.0));
    for mut col in psi.column_iter_mut() {
        for v in col.iter_mut() {
            *v = complex_normal(rng);
        }
        let norm = col.norm();
        col.unscale_mut(norm);
    }
    let book = PilotBook { psi };
    if orthogonal {
        book.orthonormalized()
    } else {
        Ok(book)
    }
}

/// Per-AP LMMSE quantities for one large-scale realization.
#[derive(Debug, Clone)]
pub struct EstimationCache {
    pub tau_rho_p: f64,
    /// `Z_l`, `tau × tau`.
    pub z: Vec<DMatrix<C64>>,
    /// `A_l`, `tau × K`; column `k` is `a_lk`.
    pub a: Vec<DMatrix<C64>>,
    /// `Psi^H A_l`, `K × K`; entry `(i, k)` is `psi_i^H a_lk`.
    pub overlap: Vec<DMatrix<C64>>,
    /// `||a_lk||²`, `L × K`.
    pub a_norm_sq: DMatrix<f64>,
    /// Estimate variances `gamma_lk`, `L × K`.
    pub gamma: DMatrix<f64>,
}

impl EstimationCache {
    pub fn num_aps(&self) -> usize {
        self.gamma.nrows()
    }

    pub fn num_sensors(&self) -> usize {
        self.gamma.ncols()
    }

    pub fn a_col(&self, l: usize, k: usize) -> DVector<C64> {
        self.a[l].column(k).clone_owned()
    }

    /// Copy in which every `(l, k)` with `mask[(l, k)] == 0` carries no
    /// estimate: `a_lk = 0` and `gamma_lk = 0`. `Z_l` is left untouched.
    pub fn masked(&self, mask: &DMatrix<u8>) -> Self {
        let mut out = self.clone();
        for l in 0..self.num_aps() {
            for k in 0..self.num_sensors() {
                if mask[(l, k)] == 0 {
                    out.a[l].column_mut(k).fill(C64::new(0.0, 0.0));
                    out.overlap[l].column_mut(k).fill(C64::new(0.0, 0.0));
                    out.a_norm_sq[(l, k)] = 0.0;
                    out.gamma[(l, k)] = 0.0;
                }
            }
        }
        out
    }
}

/// Builds `Z_l`, `A_l` and `gamma` for every AP.
pub fn build_cache(beta: &DMatrix<f64>, pilots: &PilotBook, tau_rho_p: f64) -> Result<EstimationCache> {
    let (l_count, k_count) = beta.shape();
    if pilots.num_sensors() != k_count {
        return Err(Error::InvalidArgument(format!(
            "pilot book has {} columns but beta has {k_count} sensors",
            pilots.num_sensors()
        )));
    }
    if !(tau_rho_p >= 0.0 && tau_rho_p.is_finite()) {
        return Err(Error::InvalidArgument(format!("tau*rho_p must be non-negative, got {tau_rho_p}")));
    }
    let tau = pilots.len();
    let sqrt_trp = tau_rho_p.sqrt();
    let psi = &pilots.psi;
    let psi_h = psi.adjoint();

    let mut z = Vec::with_capacity(l_count);
    let mut a = Vec::with_capacity(l_count);
    let mut overlap = Vec::with_capacity(l_count);
    let mut a_norm_sq = DMatrix::zeros(l_count, k_count);
    let mut gamma = DMatrix::zeros(l_count, k_count);

    for l in 0..l_count {
        let mut psi_d = psi.clone();
        for k in 0..k_count {
            let b = beta[(l, k)];
            if !(b >= 0.0 && b.is_finite()) {
                return Err(Error::InvalidArgument(format!("beta[{l}][{k}] = {b} is not a valid gain")));
            }
            psi_d.column_mut(k).scale_mut(b);
        }
        let mut zl = (&psi_d * &psi_h).scale(tau_rho_p);
        for i in 0..tau {
            zl[(i, i)] += C64::new(1.0, 0.0);
        }
        let al = hermitian_solve(&zl, &psi_d)?.scale(sqrt_trp);
        let ov = &psi_h * &al;
        for k in 0..k_count {
            a_norm_sq[(l, k)] = al.column(k).norm_squared();
            gamma[(l, k)] = (sqrt_trp * beta[(l, k)] * ov[(k, k)].re).max(0.0);
        }
        z.push(zl);
        a.push(al);
        overlap.push(ov);
    }
    Ok(EstimationCache {
        tau_rho_p,
        z,
        a,
        overlap,
        a_norm_sq,
        gamma,
    })
}

/// `y = sqrt(tau rho_p) Psi g + noise` for one antenna.
pub fn pilot_observation(g: &DVector<C64>, pilots: &PilotBook, tau_rho_p: f64, noise: &DVector<C64>) -> DVector<C64> {
    &pilots.psi * g * C64::new(tau_rho_p.sqrt(), 0.0) + noise
}

/// [`pilot_observation`] with unit-variance complex Gaussian noise.
pub fn simulate_pilot_phase<R: Rng + ?Sized>(g: &DVector<C64>, pilots: &PilotBook, tau_rho_p: f64, rng: &mut R) -> DVector<C64> {
    let noise = DVector::from_fn(pilots.len(), |_, _| complex_normal(rng));
    pilot_observation(g, pilots, tau_rho_p, &noise)
}

/// `A_l^H y`. Works column-wise when `y` stacks several antennas.
pub fn lmmse_estimate(y: &DMatrix<C64>, a_l: &DMatrix<C64>) -> DMatrix<C64> {
    a_l.ad_mul(y)
}

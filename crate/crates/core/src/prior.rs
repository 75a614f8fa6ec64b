//! Gaussian prior with covariance `(α₁ I − α₂ Δ)⁻²` on the seafloor grid,
//! independent across time steps.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::wave::GridSpec;

static FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);

/// Number of elliptic factorizations performed by this process.
pub fn factorization_count() -> u64 {
    FACTORIZATIONS.load(Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub alpha1: f64,
    /// m²
    pub alpha2: f64,
    /// Robin coefficient in 1/m; `None` means `sqrt(α₁ α₂)`.
    #[serde(default)]
    pub robin_coeff: Option<f64>,
    /// Constant prior mean of the uplift rate.
    #[serde(default)]
    pub mean: f64,
}

impl Default for PriorSpec {
    fn default() -> Self {
        Self {
            alpha1: 1.0,
            alpha2: 3.33e5,
            robin_coeff: None,
            mean: 0.0,
        }
    }
}

impl PriorSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha1 > 0.0 && self.alpha1.is_finite())
            || !(self.alpha2 > 0.0 && self.alpha2.is_finite())
        {
            return Err(Error::Config(format!(
                "prior.alpha1 and prior.alpha2 must be positive, got {} and {}",
                self.alpha1, self.alpha2
            )));
        }
        if let Some(beta) = self.robin_coeff {
            if !(beta >= 0.0 && beta.is_finite()) {
                return Err(Error::Config(format!(
                    "prior.robin_coeff must be nonnegative, got {beta}"
                )));
            }
        }
        if !self.mean.is_finite() {
            return Err(Error::Config("prior.mean must be finite".into()));
        }
        Ok(())
    }

    pub fn robin(&self) -> f64 {
        self.robin_coeff
            .unwrap_or_else(|| (self.alpha1 * self.alpha2).sqrt())
    }

    /// The prior mean as a space-time field.
    pub fn mean_field(&self, n_space: usize, n_time: usize, dt: f64) -> SpaceTimeField {
        let mut f = SpaceTimeField::zeros(n_space, n_time, dt);
        f.values_mut().iter_mut().for_each(|v| *v = self.mean);
        f
    }
}

/// Symmetric banded matrix stored by its lower band: `band[i][d] = A[i][i−d]`.
#[derive(Debug, Clone)]
struct Band {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl Band {
    fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn at(&self, i: usize, d: usize) -> f64 {
        self.data[i * (self.bw + 1) + d]
    }

    fn at_mut(&mut self, i: usize, d: usize) -> &mut f64 {
        &mut self.data[i * (self.bw + 1) + d]
    }

    /// Entry `(i, j)` of the full symmetric matrix.
    fn get(&self, i: usize, j: usize) -> f64 {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        if hi - lo > self.bw {
            0.0
        } else {
            self.at(hi, hi - lo)
        }
    }

    fn add_edge(&mut self, i: usize, j: usize, w: f64) {
        let (hi, lo) = if i >= j { (i, j) } else { (j, i) };
        *self.at_mut(hi, 0) += w;
        *self.at_mut(lo, 0) += w;
        *self.at_mut(hi, hi - lo) -= w;
    }

    fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            y[i] = self.at(i, 0) * x[i];
        }
        for i in 0..self.n {
            for d in 1..=self.bw.min(i) {
                let v = self.at(i, d);
                y[i] += v * x[i - d];
                y[i - d] += v * x[i];
            }
        }
    }

    /// In-place Cholesky factor of the same band.
    fn cholesky(&self) -> Result<Band> {
        let (n, bw) = (self.n, self.bw);
        let mut l = Band::zeros(n, bw);
        for j in 0..n {
            for i in j..(j + bw + 1).min(n) {
                let mut s = self.at(i, i - j);
                let start = i.saturating_sub(bw);
                for k in start..j {
                    s -= l.at(i, i - k) * l.at(j, j - k);
                }
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::NotPositiveDefinite {
                            context: "elliptic prior operator",
                        });
                    }
                    *l.at_mut(j, 0) = s.sqrt();
                } else {
                    *l.at_mut(i, i - j) = s / l.at(j, 0);
                }
            }
        }
        Ok(l)
    }

    /// Solves `L Lᵀ x = b` in place, `self` being the factor.
    fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.at(i, i - k) * x[k];
            }
            x[i] = s / self.at(i, 0);
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.at(k, k - i) * x[k];
            }
            x[i] = s / self.at(i, 0);
        }
    }
}

/// Factored elliptic operator `M = α₁ I − α₂ Δ_h` with Robin boundary terms.
#[derive(Debug, Clone)]
pub struct EllipticPrior {
    spec: PriorSpec,
    matrix: Band,
    factor: Band,
}

impl EllipticPrior {
    pub fn new(grid: &GridSpec, spec: PriorSpec) -> Result<Self> {
        spec.validate()?;
        let (nx, ny) = (grid.nx, grid.ny);
        let n = nx * ny;
        let two_d = grid.is_3d();
        let bw = if two_d { nx } else { 1 };
        let beta = spec.robin();
        let mut m = Band::zeros(n, bw);
        for j in 0..ny {
            for i in 0..nx {
                let a = i + nx * j;
                *m.at_mut(a, 0) += spec.alpha1;
                if i + 1 < nx {
                    m.add_edge(a, a + 1, spec.alpha2 / (grid.dx * grid.dx));
                }
                if two_d && j + 1 < ny {
                    m.add_edge(a, a + nx, spec.alpha2 / (grid.dy * grid.dy));
                }
                let mut boundary = 0.0;
                if i == 0 || i == nx - 1 {
                    boundary += beta / grid.dx;
                }
                if two_d && (j == 0 || j == ny - 1) {
                    boundary += beta / grid.dy;
                }
                *m.at_mut(a, 0) += boundary;
            }
        }
        let factor = m.cholesky()?;
        FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
        Ok(Self {
            spec,
            matrix: m,
            factor,
        })
    }

    pub fn spec(&self) -> &PriorSpec {
        &self.spec
    }

    /// Spatial dimension `N_m`.
    pub fn dim(&self) -> usize {
        self.matrix.n
    }

    /// Entry `(i, j)` of `M`.
    pub fn operator_entry(&self, i: usize, j: usize) -> f64 {
        self.matrix.get(i, j)
    }

    pub fn apply_operator(&self, v: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; v.len()];
        self.matrix.matvec(v, &mut y);
        y
    }

    pub fn solve_operator(&self, v: &[f64]) -> Vec<f64> {
        let mut x = v.to_vec();
        self.factor.solve_in_place(&mut x);
        x
    }

    fn check_len(&self, v: &[f64], context: &'static str) -> Result<()> {
        if v.len() != self.dim() {
            return Err(Error::dims(context, self.dim(), v.len()));
        }
        Ok(())
    }

    /// `Γ v = M⁻¹ M⁻¹ v` on one seafloor slice.
    pub fn cov_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v, "EllipticPrior::cov_apply")?;
        let mut x = v.to_vec();
        self.cov_in_place(&mut x);
        Ok(x)
    }

    fn cov_in_place(&self, x: &mut [f64]) {
        self.factor.solve_in_place(x);
        self.factor.solve_in_place(x);
    }

    fn precision_in_place(&self, x: &mut [f64], tmp: &mut [f64]) {
        self.matrix.matvec(x, tmp);
        self.matrix.matvec(tmp, x);
    }

    /// `Γ⁻¹ v = M M v` on one seafloor slice.
    pub fn precision_apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check_len(v, "EllipticPrior::precision_apply")?;
        let mut x = v.to_vec();
        let mut tmp = vec![0.0; x.len()];
        self.precision_in_place(&mut x, &mut tmp);
        Ok(x)
    }

    /// Slice-wise `Γ` on a space-time field.
    pub fn cov_apply_field(&self, v: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_field(v, "EllipticPrior::cov_apply_field")?;
        let mut out = v.clone();
        out.values_mut()
            .par_chunks_mut(self.dim())
            .for_each(|slice| self.cov_in_place(slice));
        Ok(out)
    }

    /// Slice-wise `Γ⁻¹` on a space-time field.
    pub fn precision_apply_field(&self, v: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_field(v, "EllipticPrior::precision_apply_field")?;
        let mut out = v.clone();
        out.values_mut()
            .par_chunks_mut(self.dim())
            .for_each(|slice| {
                let mut tmp = vec![0.0; slice.len()];
                self.precision_in_place(slice, &mut tmp);
            });
        Ok(out)
    }

    fn check_field(&self, v: &SpaceTimeField, context: &'static str) -> Result<()> {
        if v.n_space() != self.dim() {
            return Err(Error::dims(
                context,
                format!("{} seafloor nodes", self.dim()),
                v.n_space(),
            ));
        }
        Ok(())
    }

    /// Zero-mean draw `M⁻¹ ξ` per time slice, `ξ` standard normal.
    pub fn sample(&self, n_time: usize, dt: f64, seed: u64) -> SpaceTimeField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..self.dim() * n_time)
            .map(|_| StandardNormal.sample(&mut rng))
            .collect();
        for slice in values.chunks_mut(self.dim()) {
            self.factor.solve_in_place(slice);
        }
        SpaceTimeField::from_raw(self.dim(), n_time, dt, values)
    }
}

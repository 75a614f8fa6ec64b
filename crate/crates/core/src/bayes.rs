//! Data-space posterior algebra.
//!
//! With `G* = Γ_prior Fᵀ` and `K = Γ_noise + F G*`, the Woodbury identity
//! gives `Γ_post = (I − G* K⁻¹ F) Γ_prior`, so the only matrix ever factored
//! lives in data space. Everything here runs on the precomputed maps and
//! never touches the wave solver.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;

use crate::assembly::Phase1Maps;
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::prior::EllipticPrior;
use crate::toeplitz::check_cap;

/// Relative asymmetry tolerated in `K` before symmetrisation.
pub const K_ASYMMETRY_TOL: f64 = 1e-10;
/// Relative asymmetry tolerated in the QoI posterior covariance.
pub const QOI_ASYMMETRY_TOL: f64 = 1e-8;

/// Diagonal Gaussian noise covariance over the `N_d × N_t` data vector.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    variances: Vec<f64>,
    noise_level: f64,
}

impl NoiseModel {
    pub fn new(variances: Vec<f64>, noise_level: f64) -> Result<Self> {
        if let Some((i, v)) = variances
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::InvalidInput(format!(
                "noise variance {v} at index {i} is not positive"
            )));
        }
        Ok(Self {
            variances,
            noise_level,
        })
    }

    /// Per-sensor standard deviations `σ_j = level · max_t |d_j(t)|`, with a
    /// floor of `1e-12 · max σ` (or `1e-15` when every trace vanishes).
    ///
    /// Returns the model and whether the floor was hit.
    pub fn calibrate(d_true: &SpaceTimeField, noise_level: f64) -> Result<(Self, bool)> {
        if !(noise_level >= 0.0 && noise_level.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "noise level must be nonnegative, got {noise_level}"
            )));
        }
        let sigmas = sensor_sigmas(d_true, noise_level);
        let max = sigmas.iter().fold(0.0f64, |a, s| a.max(*s));
        let floor = if max > 0.0 { 1e-12 * max } else { 1e-15 };
        let floored = sigmas.iter().any(|s| *s < floor);
        let sigmas: Vec<f64> = sigmas.iter().map(|s| s.max(floor)).collect();
        let ns = d_true.n_space();
        let variances = (0..ns * d_true.n_time())
            .map(|i| sigmas[i % ns].powi(2))
            .collect();
        Ok((Self::new(variances, noise_level)?, floored))
    }

    pub fn variances(&self) -> &[f64] {
        &self.variances
    }

    pub fn noise_level(&self) -> f64 {
        self.noise_level
    }

    pub fn len(&self) -> usize {
        self.variances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variances.is_empty()
    }

    /// `Γ_noise⁻¹ d`.
    pub fn apply_inverse(&self, d: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check(d)?;
        let mut out = d.clone();
        for (v, s) in out.values_mut().iter_mut().zip(&self.variances) {
            *v /= s;
        }
        Ok(out)
    }

    fn check(&self, d: &SpaceTimeField) -> Result<()> {
        if d.len() != self.len() {
            return Err(Error::dims("NoiseModel", self.len(), d.len()));
        }
        Ok(())
    }
}

/// Unfloored `level · max_t |d_j(t)|` per sensor.
pub fn sensor_sigmas(d: &SpaceTimeField, noise_level: f64) -> Vec<f64> {
    let mut max = vec![0.0f64; d.n_space()];
    for t in 0..d.n_time() {
        for (m, v) in max.iter_mut().zip(d.slice(t)) {
            *m = m.max(v.abs());
        }
    }
    max.iter().map(|m| noise_level * m).collect()
}

/// Everything the online phase needs, plus the maps used to build it.
#[derive(Debug, Clone)]
pub struct PosteriorArtifacts {
    pub maps: Phase1Maps,
    pub prior: EllipticPrior,
    pub noise: NoiseModel,
    /// Lower Cholesky factor of `K`.
    pub k_chol: DMatrix<f64>,
    /// `Γ_post(q)`.
    pub qoi_cov: DMatrix<f64>,
    /// `Q`, mapping data to the posterior-mean QoI.
    pub d2q: DMatrix<f64>,
    pub m_map_prior: SpaceTimeField,
    pub q_map_prior: SpaceTimeField,
}

/// `K = Γ_noise + F G*`, one column per data unit vector.
pub fn assemble_k(maps: &Phase1Maps, noise: &NoiseModel) -> Result<DMatrix<f64>> {
    let f = &maps.p2o;
    let (nd, nt) = (f.n_row_block(), f.n_lag());
    let n = nd * nt;
    if noise.len() != n {
        return Err(Error::dims("assemble_k", n, noise.len()));
    }
    let dt = 1.0;
    let columns = (0..n)
        .into_par_iter()
        .map(|c| {
            let mut e = SpaceTimeField::zeros(nd, nt, dt);
            e.values_mut()[c] = 1.0;
            let mut col = f.matvec(&maps.g_star.matvec(&e)?)?.into_values();
            col[c] += noise.variances()[c];
            Ok(col)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut k = DMatrix::zeros(n, n);
    for (c, col) in columns.iter().enumerate() {
        k.column_mut(c).copy_from_slice(col);
    }
    symmetrize(&mut k, "K", K_ASYMMETRY_TOL)?;
    Ok(k)
}

/// Checks `max|A − Aᵀ| ≤ tol · max|A|`, then replaces `A` by `(A + Aᵀ)/2`.
pub fn symmetrize(a: &mut DMatrix<f64>, context: &'static str, tol: f64) -> Result<()> {
    let n = a.nrows();
    let scale = a.amax();
    let mut worst = 0.0f64;
    for j in 0..n {
        for i in j + 1..n {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    let asymmetry = if scale > 0.0 { worst / scale } else { worst };
    if asymmetry > tol {
        return Err(Error::Asymmetry {
            context,
            asymmetry,
            tolerance: tol,
        });
    }
    for j in 0..n {
        for i in j + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    Ok(())
}

/// Lower Cholesky factor.
pub fn factorize_k(k: DMatrix<f64>) -> Result<DMatrix<f64>> {
    k.cholesky()
        .map(|c| c.l())
        .ok_or(Error::NotPositiveDefinite { context: "K" })
}

/// Solves `L Lᵀ x = b` in place.
pub fn chol_solve_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let mut v = DVector::from_column_slice(b);
    l.solve_lower_triangular_mut(&mut v);
    l.tr_solve_lower_triangular_mut(&mut v);
    b.copy_from_slice(v.as_slice());
}

impl PosteriorArtifacts {
    /// Phases 2 and 3: factor `K`, then build `Γ_post(q)`, `Q` and the prior
    /// mean contributions.
    pub fn build(
        maps: Phase1Maps,
        prior: EllipticPrior,
        noise: NoiseModel,
        m_prior: &SpaceTimeField,
    ) -> Result<Self> {
        let k = assemble_k(&maps, &noise)?;
        let k_chol = factorize_k(k)?;
        let mut art = Self {
            m_map_prior: SpaceTimeField::zeros(
                maps.p2o.n_col_block(),
                maps.p2o.n_lag(),
                m_prior.dt(),
            ),
            q_map_prior: SpaceTimeField::zeros(
                maps.p2q.n_row_block(),
                maps.p2q.n_lag(),
                m_prior.dt(),
            ),
            qoi_cov: DMatrix::zeros(0, 0),
            d2q: DMatrix::zeros(0, 0),
            maps,
            prior,
            noise,
            k_chol,
        };
        art.qoi_cov = art.compute_qoi_posterior_cov()?;
        art.d2q = art.build_d2q()?;
        let (m_map_prior, q_map_prior) = art.prior_mean_contributions(m_prior)?;
        art.m_map_prior = m_map_prior;
        art.q_map_prior = q_map_prior;
        Ok(art)
    }

    pub fn n_param(&self) -> usize {
        self.maps.p2o.n_col_block()
    }

    pub fn n_time(&self) -> usize {
        self.maps.p2o.n_lag()
    }

    pub fn n_sensors(&self) -> usize {
        self.maps.p2o.n_row_block()
    }

    pub fn n_qoi(&self) -> usize {
        self.maps.p2q.n_row_block()
    }

    pub fn n_qoi_time(&self) -> usize {
        self.maps.p2q.n_lag()
    }

    pub fn qoi_subsample(&self) -> usize {
        self.maps.qoi_subsample()
    }

    fn check_param(&self, v: &SpaceTimeField, context: &'static str) -> Result<()> {
        v.check_shape(self.n_param(), self.n_time(), context)
    }

    fn check_data(&self, d: &SpaceTimeField, context: &'static str) -> Result<()> {
        d.check_shape(self.n_sensors(), self.n_time(), context)
    }

    fn k_solve(&self, b: SpaceTimeField) -> SpaceTimeField {
        let mut b = b;
        chol_solve_in_place(&self.k_chol, b.values_mut());
        b
    }

    /// `(I − G* K⁻¹ F) a`.
    fn data_reduce(&self, a: SpaceTimeField) -> Result<SpaceTimeField> {
        let c = self.k_solve(self.maps.p2o.matvec(&a)?);
        let mut out = a;
        out.axpy(-1.0, &self.maps.g_star.matvec(&c)?);
        Ok(out)
    }

    /// `(I − Fᵀ K⁻¹ G) a`, the transpose of [`data_reduce`](Self::data_reduce).
    fn data_reduce_transpose(&self, a: SpaceTimeField) -> Result<SpaceTimeField> {
        let c = self.k_solve(self.maps.g_star.adjoint_matvec(&a)?);
        let mut out = a;
        out.axpy(-1.0, &self.maps.p2o.adjoint_matvec(&c)?);
        Ok(out)
    }

    fn to_qoi(&self, m: SpaceTimeField) -> Result<SpaceTimeField> {
        self.maps.p2q.matvec(&m.regroup(self.qoi_subsample())?)
    }

    /// `Γ_post v = Γ_prior v − G* K⁻¹ F Γ_prior v`.
    pub fn posterior_cov_matvec(&self, v: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_param(v, "posterior_cov_matvec")?;
        let a = self.prior.cov_apply_field(v)?;
        self.data_reduce(a)
    }

    /// Diagonal entries of `Γ_post` at `(space, time)` indices.
    pub fn posterior_pointwise_variance(&self, indices: &[(usize, usize)]) -> Result<Vec<f64>> {
        let (nm, nt) = (self.n_param(), self.n_time());
        indices
            .par_iter()
            .enumerate()
            .map(|(idx, &(s, t))| {
                if s >= nm || t >= nt {
                    return Err(Error::InvalidInput(format!(
                        "parameter index ({s}, {t}) out of range"
                    )));
                }
                let mut e = SpaceTimeField::zeros(nm, nt, 1.0);
                e.set(t, s, 1.0);
                let value = self.posterior_cov_matvec(&e)?.get(t, s);
                if value < -1e-10 {
                    return Err(Error::NegativeVariance {
                        context: "posterior variance",
                        index: idx,
                        value,
                    });
                }
                Ok(value)
            })
            .collect()
    }

    /// `Γ_post(q) = F_q (I − G* K⁻¹ F) G_q*`, one column per QoI unit vector.
    pub fn compute_qoi_posterior_cov(&self) -> Result<DMatrix<f64>> {
        let (nq, ntq) = (self.n_qoi(), self.n_qoi_time());
        let n = nq * ntq;
        let r = self.qoi_subsample();
        let columns = (0..n)
            .into_par_iter()
            .map(|c| {
                let mut e = SpaceTimeField::zeros(nq, ntq, r as f64);
                e.values_mut()[c] = 1.0;
                let a = self.maps.gq_star.matvec(&e)?.ungroup(r)?;
                Ok(self.to_qoi(self.data_reduce(a)?)?.into_values())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut cov = DMatrix::zeros(n, n);
        for (c, col) in columns.iter().enumerate() {
            cov.column_mut(c).copy_from_slice(col);
        }
        symmetrize(&mut cov, "QoI posterior covariance", QOI_ASYMMETRY_TOL)?;
        let min_eig = SymmetricEigen::new(cov.clone()).eigenvalues.min();
        if min_eig < -1e-10 * cov.norm() {
            return Err(Error::NotSemidefinite {
                context: "QoI posterior covariance",
                min_eig,
            });
        }
        Ok(cov)
    }

    /// `Q = F_q (I − G* K⁻¹ F) G* Γ_noise⁻¹`, built row by row through its
    /// transpose `Γ_noise⁻¹ G (I − Fᵀ K⁻¹ G) F_qᵀ`.
    pub fn build_d2q(&self) -> Result<DMatrix<f64>> {
        let (nq, ntq) = (self.n_qoi(), self.n_qoi_time());
        let n_rows = nq * ntq;
        let r = self.qoi_subsample();
        let rows = (0..n_rows)
            .into_par_iter()
            .map(|row| {
                let mut e = SpaceTimeField::zeros(nq, ntq, r as f64);
                e.values_mut()[row] = 1.0;
                let a = self.maps.p2q.adjoint_matvec(&e)?.ungroup(r)?;
                let reduced = self.data_reduce_transpose(a)?;
                let g = self.maps.g_star.adjoint_matvec(&reduced)?;
                Ok(self.noise.apply_inverse(&g)?.into_values())
            })
            .collect::<Result<Vec<_>>>()?;
        let n_cols = self.n_sensors() * self.n_time();
        let mut q = DMatrix::zeros(n_rows, n_cols);
        for (i, row) in rows.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                q[(i, j)] = *v;
            }
        }
        Ok(q)
    }

    /// Column `c` of `Q` by the forward chain, for validating [`build_d2q`](Self::build_d2q).
    pub fn d2q_column(&self, c: usize) -> Result<Vec<f64>> {
        let mut e = SpaceTimeField::zeros(self.n_sensors(), self.n_time(), 1.0);
        e.values_mut()[c] = 1.0;
        let y = self.noise.apply_inverse(&e)?;
        let a = self.maps.g_star.matvec(&y)?;
        Ok(self.to_qoi(self.data_reduce(a)?)?.into_values())
    }

    /// `m_map^prior = (I − G* K⁻¹ F) m_prior` and its QoI push-forward.
    pub fn prior_mean_contributions(
        &self,
        m_prior: &SpaceTimeField,
    ) -> Result<(SpaceTimeField, SpaceTimeField)> {
        self.check_param(m_prior, "prior_mean_contributions")?;
        let m = self.data_reduce(m_prior.clone())?;
        let q = self.to_qoi(m.clone())?;
        Ok((m, q))
    }

    /// `m_map = (I − G* K⁻¹ F) G* Γ_noise⁻¹ d + m_map^prior`.
    pub fn infer_map(&self, d_obs: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_data(d_obs, "infer_map")?;
        let y = self.noise.apply_inverse(d_obs)?;
        let a = self.maps.g_star.matvec(&y)?;
        let mut m = self.data_reduce(a)?;
        m.axpy(1.0, &self.m_map_prior);
        Ok(m)
    }

    /// `q_map = F_q m_map`.
    pub fn predict_qoi_via_pushforward(&self, m_map: &SpaceTimeField) -> Result<SpaceTimeField> {
        self.check_param(m_map, "predict_qoi_via_pushforward")?;
        self.to_qoi(m_map.clone())
    }

    /// `q_map = Q d + q_map^prior`, using only the dense predictor pieces.
    pub fn predict_qoi(&self, d_obs: &SpaceTimeField) -> Result<SpaceTimeField> {
        apply_d2q(&self.d2q, &self.q_map_prior, d_obs)
    }

    pub fn predictor(&self) -> QoiPredictor {
        QoiPredictor {
            d2q: self.d2q.clone(),
            q_map_prior: self.q_map_prior.clone(),
            qoi_cov: self.qoi_cov.clone(),
        }
    }

    /// Dense data-to-parameter map `(I − G* K⁻¹ F) G* Γ_noise⁻¹`, guarded by
    /// `cap` entries.
    pub fn data_to_param_dense(&self, cap: u128) -> Result<DMatrix<f64>> {
        let n_rows = self.n_param() * self.n_time();
        let n_cols = self.n_sensors() * self.n_time();
        check_cap(n_rows, n_cols, cap)?;
        let columns = (0..n_cols)
            .into_par_iter()
            .map(|c| {
                let mut e = SpaceTimeField::zeros(self.n_sensors(), self.n_time(), 1.0);
                e.values_mut()[c] = 1.0;
                let a = self.maps.g_star.matvec(&self.noise.apply_inverse(&e)?)?;
                Ok(self.data_reduce(a)?.into_values())
            })
            .collect::<Result<Vec<_>>>()?;
        let mut out = DMatrix::zeros(n_rows, n_cols);
        for (c, col) in columns.iter().enumerate() {
            out.column_mut(c).copy_from_slice(col);
        }
        Ok(out)
    }
}

/// The dense pieces sufficient for goal-oriented prediction: no maps, no
/// prior, no solver.
#[derive(Debug, Clone, PartialEq)]
pub struct QoiPredictor {
    pub d2q: DMatrix<f64>,
    pub q_map_prior: SpaceTimeField,
    pub qoi_cov: DMatrix<f64>,
}

impl QoiPredictor {
    /// `q_map = Q d + q_map^prior`.
    pub fn predict(&self, d_obs: &SpaceTimeField) -> Result<SpaceTimeField> {
        apply_d2q(&self.d2q, &self.q_map_prior, d_obs)
    }
}

fn apply_d2q(
    d2q: &DMatrix<f64>,
    q_map_prior: &SpaceTimeField,
    d_obs: &SpaceTimeField,
) -> Result<SpaceTimeField> {
    if d_obs.len() != d2q.ncols() {
        return Err(Error::dims("predict_qoi", d2q.ncols(), d_obs.len()));
    }
    let mut q = q_map_prior.clone();
    let d = d_obs.values();
    for (i, slot) in q.values_mut().iter_mut().enumerate() {
        let row = d2q.row(i);
        let mut s = 0.0;
        for (a, b) in row.iter().zip(d) {
            s += a * b;
        }
        *slot += s;
    }
    Ok(q)
}

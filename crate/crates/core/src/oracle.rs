//! Dense reference implementations for small instances.
//!
//! Every map here is formed explicitly, column by column, from forward
//! marches or unit-vector prior solves, and the posterior is obtained from a
//! direct factorization of the parameter-space Hessian. Nothing is shared
//! with the fast path beyond the wave model and the prior themselves.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::Phase1Maps;
use crate::bayes::{NoiseModel, PosteriorArtifacts};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::prior::{EllipticPrior, PriorSpec};
use crate::toeplitz::{check_cap, DEFAULT_DENSE_CAP};
use crate::wave::{ModelSpec, WaveModel};

fn from_columns(n_rows: usize, columns: Vec<Vec<f64>>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n_rows, columns.len());
    for (c, col) in columns.iter().enumerate() {
        out.column_mut(c).copy_from_slice(col);
    }
    out
}

fn unit_field(ns: usize, nt: usize, dt: f64, index: usize) -> SpaceTimeField {
    let mut e = SpaceTimeField::zeros(ns, nt, dt);
    e.values_mut()[index] = 1.0;
    e
}

/// `F` with one forward march per parameter unit vector.
pub fn forward_assembled_p2o(model: &WaveModel, cap: u128) -> Result<DMatrix<f64>> {
    let (nm, nt) = (model.n_param(), model.n_time());
    let n_rows = model.n_sensors() * nt;
    check_cap(n_rows, nm * nt, cap)?;
    let columns = (0..nm * nt)
        .into_par_iter()
        .map(|c| {
            Ok(model
                .simulate_p2o(&unit_field(nm, nt, model.data_dt(), c))?
                .into_values())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(from_columns(n_rows, columns))
}

/// `F_q` on the ungrouped parameter layout, one forward march per column.
pub fn forward_assembled_p2q(model: &WaveModel, cap: u128) -> Result<DMatrix<f64>> {
    let (nm, nt) = (model.n_param(), model.n_time());
    let n_rows = model.n_qoi() * model.observation().n_qoi_time();
    check_cap(n_rows, nm * nt, cap)?;
    let columns = (0..nm * nt)
        .into_par_iter()
        .map(|c| {
            Ok(model
                .simulate_p2q(&unit_field(nm, nt, model.data_dt(), c))?
                .into_values())
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(from_columns(n_rows, columns))
}

fn block_diagonal(block: &DMatrix<f64>, n_time: usize) -> DMatrix<f64> {
    let n = block.nrows();
    let mut out = DMatrix::zeros(n * n_time, n * n_time);
    for t in 0..n_time {
        out.view_mut((t * n, t * n), (n, n)).copy_from(block);
    }
    out
}

/// Space-time `Γ_prior`, block diagonal in time.
pub fn dense_prior_cov(prior: &EllipticPrior, n_time: usize) -> Result<DMatrix<f64>> {
    let n = prior.dim();
    let columns = (0..n)
        .map(|c| prior.cov_apply(unit_field(n, 1, 1.0, c).values()))
        .collect::<Result<Vec<_>>>()?;
    Ok(block_diagonal(&from_columns(n, columns), n_time))
}

/// Space-time `Γ_prior⁻¹`.
pub fn dense_prior_precision(prior: &EllipticPrior, n_time: usize) -> Result<DMatrix<f64>> {
    let n = prior.dim();
    let columns = (0..n)
        .map(|c| prior.precision_apply(unit_field(n, 1, 1.0, c).values()))
        .collect::<Result<Vec<_>>>()?;
    Ok(block_diagonal(&from_columns(n, columns), n_time))
}

/// The posterior formed from explicit matrices.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub f: DMatrix<f64>,
    pub fq: DMatrix<f64>,
    pub prior_cov: DMatrix<f64>,
    pub prior_precision: DMatrix<f64>,
    pub noise_var: DVector<f64>,
    hessian: Cholesky<f64, nalgebra::Dyn>,
}

impl DenseOracle {
    pub fn build(model: &WaveModel, prior: &EllipticPrior, noise: &NoiseModel) -> Result<Self> {
        let f = forward_assembled_p2o(model, DEFAULT_DENSE_CAP)?;
        let fq = forward_assembled_p2q(model, DEFAULT_DENSE_CAP)?;
        let nt = model.n_time();
        let prior_cov = dense_prior_cov(prior, nt)?;
        let prior_precision = dense_prior_precision(prior, nt)?;
        if noise.len() != f.nrows() {
            return Err(Error::dims("DenseOracle", f.nrows(), noise.len()));
        }
        let noise_var = DVector::from_column_slice(noise.variances());
        let mut weighted = f.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row /= noise_var[i];
        }
        let h = f.transpose() * weighted + &prior_precision;
        let hessian = Cholesky::new(h).ok_or(Error::NotPositiveDefinite {
            context: "dense Hessian",
        })?;
        Ok(Self {
            f,
            fq,
            prior_cov,
            prior_precision,
            noise_var,
            hessian,
        })
    }

    fn weighted_data(&self, d: &[f64]) -> DVector<f64> {
        DVector::from_iterator(
            d.len(),
            d.iter().zip(self.noise_var.iter()).map(|(v, s)| v / s),
        )
    }

    /// `H⁻¹ (Fᵀ Γ_noise⁻¹ d + Γ_prior⁻¹ m_prior)`.
    pub fn map_point(&self, d: &[f64], m_prior: &[f64]) -> DVector<f64> {
        let rhs = self.f.transpose() * self.weighted_data(d)
            + &self.prior_precision * DVector::from_column_slice(m_prior);
        self.hessian.solve(&rhs)
    }

    pub fn posterior_cov_apply(&self, v: &[f64]) -> DVector<f64> {
        self.hessian.solve(&DVector::from_column_slice(v))
    }

    pub fn posterior_cov(&self) -> DMatrix<f64> {
        self.hessian.inverse()
    }

    /// `F_q H⁻¹ F_qᵀ`.
    pub fn qoi_cov(&self) -> DMatrix<f64> {
        &self.fq * self.hessian.solve(&self.fq.transpose())
    }

    /// `F_q H⁻¹ Fᵀ Γ_noise⁻¹`.
    pub fn d2q(&self) -> DMatrix<f64> {
        let mut ft_w = self.f.transpose();
        for (j, mut col) in ft_w.column_iter_mut().enumerate() {
            col /= self.noise_var[j];
        }
        &self.fq * self.hessian.solve(&ft_w)
    }

    /// `Γ_prior Fᵀ`.
    pub fn g_star(&self) -> DMatrix<f64> {
        &self.prior_cov * self.f.transpose()
    }
}

/// One oracle comparison: a relative discrepancy against its tolerance.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCheck {
    pub name: &'static str,
    pub error: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    pub fn passed(&self) -> bool {
        self.error <= self.tolerance
    }
}

/// `‖a − b‖ / ‖b‖` over flat slices, zero when both vanish.
pub fn rel(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let den = crate::field::norm(b);
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

/// `max |a − b| / max |b|`.
pub fn rel_entrywise(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let num = (a - b).amax();
    let den = b.amax();
    if den == 0.0 {
        num
    } else {
        num / den
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Runs every dense comparison on a small instance and reports the
/// discrepancies. The noise model is calibrated on data from a prior draw.
pub fn run_suite(
    spec: &ModelSpec,
    prior_spec: &PriorSpec,
    noise_level: f64,
    seed: u64,
) -> Result<Vec<OracleCheck>> {
    let model = WaveModel::new(spec.clone())?;
    let prior = EllipticPrior::new(model.grid(), *prior_spec)?;
    let (nm, nt, dt) = (model.n_param(), model.n_time(), model.data_dt());
    check_cap(nm * nt, nm * nt, DEFAULT_DENSE_CAP)?;

    let truth = prior.sample(nt, dt, seed);
    let d_true = model.simulate_p2o(&truth)?;
    let (noise, _) = NoiseModel::calibrate(&d_true, noise_level.max(1e-3))?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let m_prior = SpaceTimeField::new(nm, nt, dt, random_vec(&mut rng, nm * nt))?;
    let d = SpaceTimeField::new(
        model.n_sensors(),
        nt,
        dt,
        random_vec(&mut rng, model.n_sensors() * nt),
    )?;
    let v = SpaceTimeField::new(nm, nt, dt, random_vec(&mut rng, nm * nt))?;

    let maps = Phase1Maps::assemble(&model, &prior)?;
    let oracle = DenseOracle::build(&model, &prior, &noise)?;
    let art = PosteriorArtifacts::build(maps, prior, noise, &m_prior)?;

    let mut checks = Vec::new();
    let mut push = |name, error, tolerance| {
        checks.push(OracleCheck {
            name,
            error,
            tolerance,
        })
    };

    let f_fft = art.maps.p2o.to_dense(DEFAULT_DENSE_CAP)?;
    push(
        "p2o adjoint-assembled vs forward-assembled",
        rel_entrywise(&f_fft, &oracle.f),
        1e-12,
    );
    let g = art.maps.g_star.to_dense(DEFAULT_DENSE_CAP)?;
    push(
        "G* vs prior covariance times F transpose",
        rel_entrywise(&g, &oracle.g_star()),
        1e-10,
    );

    let post = art.posterior_cov_matvec(&v)?;
    push(
        "posterior covariance action",
        rel(
            post.values(),
            oracle.posterior_cov_apply(v.values()).as_slice(),
        ),
        1e-8,
    );

    let m_map = art.infer_map(&d)?;
    let dense_map = oracle.map_point(d.values(), m_prior.values());
    push("MAP point", rel(m_map.values(), dense_map.as_slice()), 1e-8);

    push(
        "QoI posterior covariance",
        rel(art.qoi_cov.as_slice(), oracle.qoi_cov().as_slice()),
        1e-8,
    );
    push(
        "data-to-QoI map",
        rel(art.d2q.as_slice(), oracle.d2q().as_slice()),
        1e-8,
    );

    let q_fast = art.predict_qoi(&d)?;
    let q_push = art.predict_qoi_via_pushforward(&m_map)?;
    push(
        "QoI prediction vs push-forward of MAP",
        rel(q_fast.values(), q_push.values()),
        1e-8,
    );
    let q_dense = &oracle.fq * dense_map;
    push(
        "QoI prediction vs dense posterior mean",
        rel(q_fast.values(), q_dense.as_slice()),
        1e-8,
    );

    Ok(checks)
}

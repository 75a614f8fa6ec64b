//! Synthetic experiments and the online inference/prediction loop.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bayes::{sensor_sigmas, NoiseModel, PosteriorArtifacts, QoiPredictor};
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::toeplitz::BlockToeplitzMap;
use crate::wave::{GridSpec, WaveModel};

/// Two-sided 95% standard-normal quantile.
pub const Z_95: f64 = 1.959963984540054;

/// Horizontal extent the reference source geometry is laid out on.
const REFERENCE_EXTENT: f64 = 128_000.0;

/// One space-time Gaussian bump of uplift rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianBump {
    /// Total uplift in m.
    pub amplitude: f64,
    /// s
    pub rise_time: f64,
    pub width_x: f64,
    #[serde(default)]
    pub width_y: Option<f64>,
    pub center_x: f64,
    #[serde(default)]
    pub center_y: Option<f64>,
}

impl GaussianBump {
    /// Uplift rate at `(x, y, t)`; the `y` factor is dropped on a slice.
    pub fn rate(&self, x: f64, y: Option<f64>, t: f64) -> f64 {
        if !(0.0..=self.rise_time).contains(&t) {
            return 0.0;
        }
        let mut arg = ((x - self.center_x) / self.width_x).powi(2);
        if let (Some(y), Some(wy), Some(cy)) = (y, self.width_y, self.center_y) {
            arg += ((y - cy) / wy).powi(2);
        }
        let pi = std::f64::consts::PI;
        self.amplitude * (-arg).exp() * pi / (2.0 * self.rise_time)
            * (pi * t / self.rise_time).sin()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSource {
    pub gaussians: Vec<GaussianBump>,
}

impl SyntheticSource {
    /// The three-Gaussian reference source on a 128 km × 128 km seafloor.
    pub fn reference() -> Self {
        let bump = |amplitude, rise_time, wx, wy, cx, cy| GaussianBump {
            amplitude,
            rise_time,
            width_x: wx * 1e3,
            width_y: Some(wy * 1e3),
            center_x: cx * 1e3,
            center_y: Some(cy * 1e3),
        };
        Self {
            gaussians: vec![
                bump(4.0, 20.0, 16.0, 32.0, 64.0, 64.0),
                bump(1.0, 10.0, 4.0, 4.0, 64.0, 88.0),
                bump(-0.5, 10.0, 4.0, 8.0, 70.0, 56.0),
            ],
        }
    }

    /// The reference source with centres and widths scaled to the grid's
    /// extent; amplitudes and rise times are kept. On a slice the `y`
    /// geometry is dropped.
    pub fn scaled_to(grid: &GridSpec) -> Self {
        let sx = grid.extent_x() / REFERENCE_EXTENT;
        let sy = grid.extent_y() / REFERENCE_EXTENT;
        let gaussians = Self::reference()
            .gaussians
            .into_iter()
            .map(|g| GaussianBump {
                width_x: g.width_x * sx,
                center_x: g.center_x * sx,
                width_y: if grid.is_3d() {
                    g.width_y.map(|w| w * sy)
                } else {
                    None
                },
                center_y: if grid.is_3d() {
                    g.center_y.map(|c| c * sy)
                } else {
                    None
                },
                ..g
            })
            .collect();
        Self { gaussians }
    }

    pub fn validate(&self) -> Result<()> {
        for (i, g) in self.gaussians.iter().enumerate() {
            let widths = [Some(g.width_x), g.width_y];
            if !(g.rise_time > 0.0) || widths.iter().flatten().any(|w| !(*w > 0.0)) {
                return Err(Error::Config(format!(
                    "source gaussian {i} needs positive rise time and widths"
                )));
            }
            if !g.amplitude.is_finite() || !g.center_x.is_finite() {
                return Err(Error::Config(format!(
                    "source gaussian {i} has non-finite parameters"
                )));
            }
        }
        Ok(())
    }

    /// Rate field on the seafloor nodes at times `t_k = k dt`.
    pub fn evaluate(&self, grid: &GridSpec, n_time: usize, dt: f64) -> SpaceTimeField {
        let n = grid.n_seafloor();
        let mut field = SpaceTimeField::zeros(n, n_time, dt);
        for t in 0..n_time {
            let time = t as f64 * dt;
            for s in 0..n {
                let (x, y) = grid.seafloor_coords(s);
                let y = grid.is_3d().then_some(y);
                let v = self.gaussians.iter().map(|g| g.rate(x, y, time)).sum();
                field.set(t, s, v);
            }
        }
        field
    }
}

/// One synthetic experiment's fields.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData {
    pub m_true: SpaceTimeField,
    pub d_true: SpaceTimeField,
    pub q_true: SpaceTimeField,
    pub d_obs: SpaceTimeField,
    pub noise: NoiseModel,
}

/// Adds i.i.d. `N(0, σ_j²)` noise per sensor sample, `σ_j = level · max|d_j|`.
pub fn add_noise(d_true: &SpaceTimeField, noise_level: f64, seed: u64) -> SpaceTimeField {
    let mut d = d_true.clone();
    if noise_level == 0.0 {
        return d;
    }
    let sigmas = sensor_sigmas(d_true, noise_level);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for t in 0..d.n_time() {
        for (v, s) in d.slice_mut(t).iter_mut().zip(&sigmas) {
            let xi: f64 = StandardNormal.sample(&mut rng);
            *v += s * xi;
        }
    }
    d
}

/// Truth, clean and noisy data for a given rate field.
pub fn synth_data_from_field(
    model: &WaveModel,
    m_true: SpaceTimeField,
    noise_level: f64,
    seed: u64,
) -> Result<SyntheticData> {
    let d_true = model.simulate_p2o(&m_true)?;
    let q_true = model.simulate_p2q(&m_true)?;
    let (noise, floored) = NoiseModel::calibrate(&d_true, noise_level)?;
    if floored && noise_level > 0.0 {
        log::warn!("some sensor traces are (near) zero; their noise variance was floored");
    }
    let d_obs = add_noise(&d_true, noise_level, seed);
    Ok(SyntheticData {
        m_true,
        d_true,
        q_true,
        d_obs,
        noise,
    })
}

pub fn synth_data(
    model: &WaveModel,
    source: &SyntheticSource,
    noise_level: f64,
    seed: u64,
) -> Result<SyntheticData> {
    let m_true = source.evaluate(model.grid(), model.n_time(), model.data_dt());
    synth_data_from_field(model, m_true, noise_level, seed)
}

/// Standard-normal quantile for a two-sided interval of the given mass.
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "credible level must lie in (0, 1), got {level}"
        )));
    }
    if level == 0.95 {
        return Ok(Z_95);
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(0.5 + level / 2.0))
}

/// `q ∓ z sqrt(diag Γ)`.
pub fn credible_intervals(
    q_map: &SpaceTimeField,
    qoi_cov: &DMatrix<f64>,
    level: f64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = q_map.len();
    if qoi_cov.nrows() != n || qoi_cov.ncols() != n {
        return Err(Error::dims("credible_intervals", n, qoi_cov.nrows()));
    }
    let z = z_for_level(level)?;
    let mut lo = Vec::with_capacity(n);
    let mut hi = Vec::with_capacity(n);
    for (i, q) in q_map.values().iter().enumerate() {
        let var = qoi_cov[(i, i)];
        if var < -1e-10 {
            return Err(Error::NegativeVariance {
                context: "QoI posterior covariance",
                index: i,
                value: var,
            });
        }
        let half = z * var.max(0.0).sqrt();
        lo.push(q - half);
        hi.push(q + half);
    }
    Ok((lo, hi))
}

/// Relative L2 errors of one reconstruction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorMetrics {
    /// `‖m_map − m_true‖ / ‖m_true‖` on the uplift rate.
    pub param_err: f64,
    pub qoi_err: f64,
    /// `‖F m_map − F m_true‖ / ‖F m_true‖`.
    pub reconstruction_err: f64,
    /// Parameter error on the time-integrated uplift.
    pub displacement_err: f64,
}

fn rel_err(truth: &[f64], estimate: &[f64], context: &'static str) -> Result<f64> {
    let denom = crate::field::norm(truth);
    if denom == 0.0 {
        return Err(Error::ZeroNorm(context));
    }
    let diff: f64 = truth
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(diff / denom)
}

pub fn relative_errors(
    m_true: &SpaceTimeField,
    m_map: &SpaceTimeField,
    q_true: &SpaceTimeField,
    q_map: &SpaceTimeField,
    p2o: &BlockToeplitzMap,
) -> Result<ErrorMetrics> {
    if !m_true.same_shape(m_map) || !q_true.same_shape(q_map) {
        return Err(Error::dims(
            "relative_errors",
            "matching truth and estimate shapes",
            "mismatch",
        ));
    }
    let d_true = p2o.matvec(m_true)?;
    let d_map = p2o.matvec(m_map)?;
    Ok(ErrorMetrics {
        param_err: rel_err(m_true.values(), m_map.values(), "parameter error")?,
        qoi_err: rel_err(q_true.values(), q_map.values(), "QoI error")?,
        reconstruction_err: rel_err(d_true.values(), d_map.values(), "reconstruction error")?,
        displacement_err: rel_err(
            m_true.time_integral().values(),
            m_map.time_integral().values(),
            "displacement error",
        )?,
    })
}

/// Wall-clock seconds per named stage, in execution order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings(pub Vec<(String, f64)>);

impl Timings {
    pub fn record<T>(&mut self, stage: &str, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.0
            .push((stage.to_string(), start.elapsed().as_secs_f64()));
        out
    }

    pub fn get(&self, stage: &str) -> Option<f64> {
        self.0.iter().find(|(s, _)| s == stage).map(|(_, t)| *t)
    }

    pub fn total(&self) -> f64 {
        self.0.iter().map(|(_, t)| t).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferenceResult {
    pub m_map: SpaceTimeField,
    pub q_map: SpaceTimeField,
    pub credible_lo: Vec<f64>,
    pub credible_hi: Vec<f64>,
    pub timings: Timings,
    /// Noise-weighted RMS data misfit of `F m_map`.
    pub weighted_misfit: f64,
}

/// Phase 4: MAP parameters, goal-oriented QoI prediction and intervals.
pub fn run_online(
    art: &PosteriorArtifacts,
    d_obs: &SpaceTimeField,
    level: f64,
) -> Result<InferenceResult> {
    let mut timings = Timings::default();
    let m_map = timings.record("infer_map", || art.infer_map(d_obs))?;
    let q_map = timings.record("predict_qoi", || art.predict_qoi(d_obs))?;
    let (credible_lo, credible_hi) = timings.record("credible_intervals", || {
        credible_intervals(&q_map, &art.qoi_cov, level)
    })?;
    let residual = {
        let mut r = art.maps.p2o.matvec(&m_map)?;
        r.axpy(-1.0, d_obs);
        let w = art.noise.apply_inverse(&r)?;
        (r.dot(&w) / r.len() as f64).sqrt()
    };
    Ok(InferenceResult {
        m_map,
        q_map,
        credible_lo,
        credible_hi,
        timings,
        weighted_misfit: residual,
    })
}

/// Goal-oriented prediction with nothing but the dense predictor.
pub fn predict_only(
    predictor: &QoiPredictor,
    d_obs: &SpaceTimeField,
    level: f64,
) -> Result<(SpaceTimeField, Vec<f64>, Vec<f64>)> {
    let q = predictor.predict(d_obs)?;
    let (lo, hi) = credible_intervals(&q, &predictor.qoi_cov, level)?;
    Ok((q, lo, hi))
}

/// `‖Fᵀ Γ_n⁻¹ (F m − d) + Γ_p⁻¹ (m − m_prior)‖ / ‖Fᵀ Γ_n⁻¹ d + Γ_p⁻¹ m_prior‖`,
/// the relative gradient of the MAP objective at `m`.
pub fn optimality_residual(
    art: &PosteriorArtifacts,
    m: &SpaceTimeField,
    d_obs: &SpaceTimeField,
    m_prior: &SpaceTimeField,
) -> Result<f64> {
    let f = &art.maps.p2o;
    let mut misfit = f.matvec(m)?;
    misfit.axpy(-1.0, d_obs);
    let mut grad = f.adjoint_matvec(&art.noise.apply_inverse(&misfit)?)?;
    let mut dm = m.clone();
    dm.axpy(-1.0, m_prior);
    grad.axpy(1.0, &art.prior.precision_apply_field(&dm)?);

    let mut rhs = f.adjoint_matvec(&art.noise.apply_inverse(d_obs)?)?;
    rhs.axpy(1.0, &art.prior.precision_apply_field(m_prior)?);
    let scale = rhs.norm();
    if scale == 0.0 {
        return Ok(grad.norm());
    }
    Ok(grad.norm() / scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_peak_value() {
        let g = SyntheticSource::reference().gaussians[0];
        let v = g.rate(64e3, Some(64e3), 10.0);
        assert!((v - std::f64::consts::PI / 10.0).abs() < 1e-15);
        assert_eq!(g.rate(64e3, Some(64e3), 20.5), 0.0);
    }

    #[test]
    fn temporal_factor_integrates_to_one() {
        let g = GaussianBump {
            amplitude: 1.0,
            rise_time: 20.0,
            width_x: 1.0,
            width_y: None,
            center_x: 0.0,
            center_y: None,
        };
        let dt = 0.5;
        let samples: Vec<f64> = (0..=40).map(|k| g.rate(0.0, None, k as f64 * dt)).collect();
        let trapezoid: f64 = samples.windows(2).map(|w| 0.5 * (w[0] + w[1]) * dt).sum();
        assert!((trapezoid - 1.0).abs() < 1e-3);
    }

    #[test]
    fn scaling_follows_the_grid() {
        let grid = GridSpec::default();
        let s = SyntheticSource::scaled_to(&grid);
        assert!((s.gaussians[0].center_x - 8000.0).abs() < 1e-9);
        assert!((s.gaussians[0].width_x - 2000.0).abs() < 1e-9);
        assert!((s.gaussians[2].center_x - 8750.0).abs() < 1e-9);
        assert!(s.gaussians.iter().all(|g| g.center_y.is_none()));
        let f = s.evaluate(&grid, 4, 0.5);
        assert!(f.slice(0).iter().all(|v| *v == 0.0));
        assert!(f.slice(1)[32] > 0.0);
    }

    #[test]
    fn quantiles() {
        assert_eq!(z_for_level(0.95).unwrap(), Z_95);
        assert!((z_for_level(0.6826894921370859).unwrap() - 1.0).abs() < 1e-8);
        assert!(z_for_level(1.0).is_err());
    }

    #[test]
    fn interval_edge_cases() {
        let q = SpaceTimeField::new(2, 1, 1.0, vec![0.0, 3.0]).unwrap();
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let (lo, hi) = credible_intervals(&q, &cov, 0.95).unwrap();
        assert_eq!((lo[0], hi[0]), (-Z_95, Z_95));
        assert_eq!((lo[1], hi[1]), (3.0, 3.0));
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-6]);
        assert!(credible_intervals(&q, &bad, 0.95).is_err());
    }

    #[test]
    fn noise_free_data_is_untouched() {
        let d = SpaceTimeField::new(2, 2, 1.0, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(add_noise(&d, 0.0, 1), d);
        assert_ne!(add_noise(&d, 0.1, 1), d);
        assert_eq!(add_noise(&d, 0.1, 1), add_noise(&d, 0.1, 1));
    }

    #[test]
    fn timings_record_in_order() {
        let mut t = Timings::default();
        let v = t.record("a", || 3);
        t.record("b", || ());
        assert_eq!(v, 3);
        assert_eq!(
            t.0.iter().map(|(s, _)| s.as_str()).collect::<Vec<_>>(),
            ["a", "b"]
        );
        assert!(t.get("a").unwrap() >= 0.0);
    }
}

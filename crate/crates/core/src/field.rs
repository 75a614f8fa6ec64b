//! Space-time fields: parameter, data and QoI vectors laid out time-major.

use crate::error::{Error, Result};

/// A real field sampled on `n_time` uniform time steps of length `dt` over
/// `n_space` spatial locations.
///
/// Values are stored time-major, space-minor: entry `(t, s)` lives at
/// `t * n_space + s`. This matches the stacking `[x_0; x_1; ...]` used by the
/// block-Toeplitz operators.
#[derive(Debug, Clone, PartialEq)]
pub struct SpaceTimeField {
    n_space: usize,
    n_time: usize,
    dt: f64,
    values: Vec<f64>,
}

impl SpaceTimeField {
    pub fn new(n_space: usize, n_time: usize, dt: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_space * n_time {
            return Err(Error::dims(
                "SpaceTimeField::new",
                format!("{} values ({n_time} x {n_space})", n_space * n_time),
                values.len(),
            ));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "time step must be positive, got {dt}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite field value at flat index {i}"
            )));
        }
        Ok(Self {
            n_space,
            n_time,
            dt,
            values,
        })
    }

    pub fn zeros(n_space: usize, n_time: usize, dt: f64) -> Self {
        assert!(dt > 0.0, "time step must be positive");
        Self {
            n_space,
            n_time,
            dt,
            values: vec![0.0; n_space * n_time],
        }
    }

    /// Builds a field from its entries without re-validating finiteness.
    pub(crate) fn from_raw(n_space: usize, n_time: usize, dt: f64, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), n_space * n_time);
        Self {
            n_space,
            n_time,
            dt,
            values,
        }
    }

    pub fn n_space(&self) -> usize {
        self.n_space
    }

    pub fn n_time(&self) -> usize {
        self.n_time
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn get(&self, time: usize, space: usize) -> f64 {
        self.values[time * self.n_space + space]
    }

    pub fn set(&mut self, time: usize, space: usize, value: f64) {
        self.values[time * self.n_space + space] = value;
    }

    pub fn slice(&self, time: usize) -> &[f64] {
        &self.values[time * self.n_space..(time + 1) * self.n_space]
    }

    pub fn slice_mut(&mut self, time: usize) -> &mut [f64] {
        &mut self.values[time * self.n_space..(time + 1) * self.n_space]
    }

    /// Reinterprets the field with `group` consecutive time slices merged
    /// into one, e.g. parameter steps aggregated to the QoI rate.
    pub fn regroup(self, group: usize) -> Result<Self> {
        if group == 0 || self.n_time % group != 0 {
            return Err(Error::dims(
                "SpaceTimeField::regroup",
                format!("a divisor of {}", self.n_time),
                group,
            ));
        }
        Ok(Self {
            n_space: self.n_space * group,
            n_time: self.n_time / group,
            dt: self.dt * group as f64,
            values: self.values,
        })
    }

    /// Inverse of [`regroup`](Self::regroup).
    pub fn ungroup(self, group: usize) -> Result<Self> {
        if group == 0 || self.n_space % group != 0 {
            return Err(Error::dims(
                "SpaceTimeField::ungroup",
                format!("a divisor of {}", self.n_space),
                group,
            ));
        }
        Ok(Self {
            n_space: self.n_space / group,
            n_time: self.n_time * group,
            dt: self.dt / group as f64,
            values: self.values,
        })
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_space == other.n_space && self.n_time == other.n_time
    }

    pub(crate) fn check_shape(
        &self,
        n_space: usize,
        n_time: usize,
        context: &'static str,
    ) -> Result<()> {
        if self.n_space != n_space || self.n_time != n_time {
            return Err(Error::dims(
                context,
                format!("{n_time} x {n_space} (time x space)"),
                format!("{} x {}", self.n_time, self.n_space),
            ));
        }
        Ok(())
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.values, &other.values)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        self.values.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Running time integral (left Riemann sum), e.g. uplift rate to displacement.
    pub fn time_integral(&self) -> Self {
        let mut out = Self::zeros(self.n_space, self.n_time, self.dt);
        let mut acc = vec![0.0; self.n_space];
        for t in 0..self.n_time {
            for (a, v) in acc.iter_mut().zip(self.slice(t)) {
                *a += v * self.dt;
            }
            out.slice_mut(t).copy_from_slice(&acc);
        }
        out
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// `‖a − b‖ / ‖b‖`, or the absolute difference norm when `b` vanishes.
pub fn relative_difference(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a
        .iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt();
    let scale = norm(b);
    if scale > 0.0 {
        diff / scale
    } else {
        diff
    }
}

//! Linear acoustic-gravity wave model on a structured grid.
//!
//! Pressure lives on grid nodes and normal velocities on the faces between
//! neighbouring nodes (a staggered finite-volume layout with half-width cells
//! on the boundary). The surface row of nodes carries the wave height `η`
//! instead of pressure, with `p = ρ g η`. Lateral boundary cells lose flux
//! through an impedance condition `u·n = p / Z`, and the bottom row is forced
//! by the seafloor uplift rate.
//!
//! The semi-discrete system `dw/dt = L w + M m` is advanced with classical
//! RK4 holding `m` fixed over each data step, so one data step is an exact
//! affine map `w ↦ A w + C m`. All transposed actions are the exact
//! reverse-mode derivatives of the forward march.

mod march;
mod operator;

use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sprs::CsMat;

use crate::error::{Error, Result};

pub use march::Workspace;

/// Radius of a left half-disk contained in the RK4 stability region.
pub const RK4_STABILITY_RADIUS: f64 = 2.6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicalConstants {
    /// kg/m³
    pub rho: f64,
    /// Pa
    pub bulk_modulus: f64,
    /// m/s²
    pub gravity: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self {
            rho: 1000.0,
            bulk_modulus: 2.25e9,
            gravity: 9.81,
        }
    }
}

impl PhysicalConstants {
    pub fn sound_speed(&self) -> f64 {
        (self.bulk_modulus / self.rho).sqrt()
    }

    pub fn impedance(&self) -> f64 {
        self.rho * self.sound_speed()
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("rho", self.rho),
            ("bulk_modulus", self.bulk_modulus),
            ("gravity", self.gravity),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "constants.{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Structured grid. `seafloor_dim = 1` is a vertical `(x, z)` slice of unit
/// width with `ny = 1`; `seafloor_dim = 2` is a full 3D box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub seafloor_dim: u8,
    pub nx: usize,
    #[serde(default = "one")]
    pub ny: usize,
    pub nz: usize,
    pub dx: f64,
    #[serde(default = "one_f64")]
    pub dy: f64,
    pub dz: f64,
}

fn one() -> usize {
    1
}

fn one_f64() -> f64 {
    1.0
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            seafloor_dim: 1,
            nx: 65,
            ny: 1,
            nz: 9,
            dx: 250.0,
            dy: 1.0,
            dz: 125.0,
        }
    }
}

impl GridSpec {
    pub fn validate(&self, max_state: usize) -> Result<()> {
        match self.seafloor_dim {
            1 if self.ny != 1 => {
                return Err(Error::Config(format!(
                    "grid.ny must be 1 for a vertical slice, got {}",
                    self.ny
                )))
            }
            1 => {}
            2 if self.ny < 3 => {
                return Err(Error::Config(format!(
                    "grid.ny must be at least 3, got {}",
                    self.ny
                )))
            }
            2 => {}
            d => {
                return Err(Error::Config(format!(
                    "grid.seafloor_dim must be 1 or 2, got {d}"
                )))
            }
        }
        if self.nx < 3 || self.nz < 3 {
            return Err(Error::Config(format!(
                "grid needs nx, nz >= 3, got nx = {}, nz = {}",
                self.nx, self.nz
            )));
        }
        for (name, v) in [("dx", self.dx), ("dy", self.dy), ("dz", self.dz)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!(
                    "grid.{name} must be positive, got {v}"
                )));
            }
        }
        let state = StateLayout::new(self).len();
        if state > max_state {
            return Err(Error::Config(format!(
                "state size {state} exceeds the configured cap of {max_state}"
            )));
        }
        Ok(())
    }

    pub fn is_3d(&self) -> bool {
        self.seafloor_dim == 2
    }

    /// Number of seafloor (parameter) nodes.
    pub fn n_seafloor(&self) -> usize {
        self.nx * self.ny
    }

    pub fn n_nodes(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn node(&self, i: usize, j: usize, k: usize) -> usize {
        i + self.nx * (j + self.ny * k)
    }

    /// Seafloor coordinates `(x, y)` of a seafloor index.
    pub fn seafloor_coords(&self, index: usize) -> (f64, f64) {
        let (i, j) = (index % self.nx, index / self.nx);
        (i as f64 * self.dx, j as f64 * self.dy)
    }

    pub fn extent_x(&self) -> f64 {
        (self.nx - 1) as f64 * self.dx
    }

    pub fn extent_y(&self) -> f64 {
        (self.ny - 1) as f64 * self.dy
    }

    pub fn extent_z(&self) -> f64 {
        (self.nz - 1) as f64 * self.dz
    }

    pub fn min_spacing(&self) -> f64 {
        if self.is_3d() {
            self.dx.min(self.dy).min(self.dz)
        } else {
            self.dx.min(self.dz)
        }
    }

    fn n_dims(&self) -> usize {
        if self.is_3d() {
            3
        } else {
            2
        }
    }
}

/// Sensor and QoI placement plus the coarse time grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationSpec {
    /// Seafloor indices `i + nx j` of the pressure sensors.
    pub sensor_indices: Vec<usize>,
    /// Surface indices `i + nx j` of the wave-height forecast points.
    pub qoi_indices: Vec<usize>,
    /// Length of one parameter/data step in seconds.
    pub data_dt: f64,
    /// Number of data steps `N_t`.
    pub n_time: usize,
    /// Data steps per QoI step.
    pub qoi_subsample: usize,
}

impl Default for ObservationSpec {
    fn default() -> Self {
        Self {
            sensor_indices: (1..=7).map(|s| 8 * s).collect(),
            qoi_indices: vec![32, 40, 48, 56],
            data_dt: 0.5,
            n_time: 100,
            qoi_subsample: 5,
        }
    }
}

impl ObservationSpec {
    pub fn validate(&self, grid: &GridSpec) -> Result<()> {
        let n = grid.n_seafloor();
        for (name, list) in [
            ("sensor_indices", &self.sensor_indices),
            ("qoi_indices", &self.qoi_indices),
        ] {
            if list.is_empty() {
                return Err(Error::Config(format!(
                    "observation.{name} must not be empty"
                )));
            }
            let mut seen = list.clone();
            seen.sort_unstable();
            if let Some(&bad) = seen.iter().find(|&&i| i >= n) {
                return Err(Error::Config(format!(
                    "observation.{name} entry {bad} is outside 0..{n}"
                )));
            }
            if seen.windows(2).any(|w| w[0] == w[1]) {
                return Err(Error::Config(format!(
                    "observation.{name} has duplicate entries"
                )));
            }
        }
        if !(self.data_dt > 0.0 && self.data_dt.is_finite()) {
            return Err(Error::Config(format!(
                "observation.data_dt must be positive, got {}",
                self.data_dt
            )));
        }
        if self.n_time == 0 {
            return Err(Error::Config("observation.n_time must be positive".into()));
        }
        if self.qoi_subsample == 0 || self.n_time % self.qoi_subsample != 0 {
            return Err(Error::Config(format!(
                "observation.qoi_subsample = {} must be positive and divide n_time = {}",
                self.qoi_subsample, self.n_time
            )));
        }
        Ok(())
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_indices.len()
    }

    pub fn n_qoi(&self) -> usize {
        self.qoi_indices.len()
    }

    /// QoI time steps `N_t / qoi_subsample`.
    pub fn n_qoi_time(&self) -> usize {
        self.n_time / self.qoi_subsample
    }

    pub fn qoi_dt(&self) -> f64 {
        self.data_dt * self.qoi_subsample as f64
    }
}

/// Everything that defines the discrete forward model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub constants: PhysicalConstants,
    #[serde(default)]
    pub observation: ObservationSpec,
    /// Fraction of the stability limit used for the solver step.
    #[serde(default = "default_safety")]
    pub safety: f64,
    #[serde(default = "default_max_state")]
    pub max_state: usize,
}

fn default_safety() -> f64 {
    0.5
}

fn default_max_state() -> usize {
    5_000_000
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            grid: GridSpec::default(),
            constants: PhysicalConstants::default(),
            observation: ObservationSpec::default(),
            safety: default_safety(),
            max_state: default_max_state(),
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        self.constants.validate()?;
        self.grid.validate(self.max_state)?;
        self.observation.validate(&self.grid)?;
        if !(self.safety > 0.0 && self.safety <= 1.0) {
            return Err(Error::Config(format!(
                "safety must lie in (0, 1], got {}",
                self.safety
            )));
        }
        Ok(())
    }
}

/// Stability-limited RK4 step.
///
/// Bounds the spectral radius of the semi-discrete operator by Gershgorin
/// discs in the energy-weighted basis: each of the `2 n_dims` faces around a
/// (possibly half-width) cell contributes at most `√2 c / h`, and each
/// lateral impedance face at most `2 c / h`.
pub fn cfl_max_dt(grid: &GridSpec, constants: &PhysicalConstants) -> f64 {
    let n = grid.n_dims() as f64;
    let bound = constants.sound_speed() * (2.0 * std::f64::consts::SQRT_2 * n + 2.0 * (n - 1.0))
        / grid.min_spacing();
    RK4_STABILITY_RADIUS / bound
}

/// Offsets of the variable groups inside a flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    /// Node variables: pressure below the surface, `η` on the surface row.
    pub n_nodes: usize,
    pub n_surface: usize,
    pub ux_offset: usize,
    pub uy_offset: usize,
    pub uz_offset: usize,
    len: usize,
}

impl StateLayout {
    pub fn new(grid: &GridSpec) -> Self {
        let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
        let n_nodes = nx * ny * nz;
        let n_ux = (nx - 1) * ny * nz;
        let n_uy = if grid.is_3d() { nx * (ny - 1) * nz } else { 0 };
        let n_uz = nx * ny * (nz - 1);
        let ux_offset = n_nodes;
        let uy_offset = ux_offset + n_ux;
        let uz_offset = uy_offset + n_uy;
        Self {
            n_nodes,
            n_surface: nx * ny,
            ux_offset,
            uy_offset,
            uz_offset,
            len: uz_offset + n_uz,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// First index of the surface-height block.
    pub fn surface_offset(&self) -> usize {
        self.n_nodes - self.n_surface
    }
}

/// Forward state `w = (p, η, u)` as one flat vector.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteState(pub Vec<f64>);

/// Adjoint state `(v, ξ, τ)`, laid out like [`DiscreteState`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointState(pub Vec<f64>);

impl DiscreteState {
    pub fn zeros(layout: &StateLayout) -> Self {
        Self(vec![0.0; layout.len()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Subsurface pressures.
    pub fn pressure<'a>(&'a self, layout: &StateLayout) -> &'a [f64] {
        &self.0[..layout.surface_offset()]
    }

    pub fn surface_height<'a>(&'a self, layout: &StateLayout) -> &'a [f64] {
        &self.0[layout.surface_offset()..layout.n_nodes]
    }

    pub fn velocity<'a>(&'a self, layout: &StateLayout) -> &'a [f64] {
        &self.0[layout.n_nodes..]
    }
}

impl AdjointState {
    pub fn zeros(layout: &StateLayout) -> Self {
        Self(vec![0.0; layout.len()])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Snapshot of the solver activity counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct CounterSnapshot {
    pub solver_steps: u64,
    pub forward_marches: u64,
    pub transposed_marches: u64,
}

impl std::ops::Sub for CounterSnapshot {
    type Output = Self;

    fn sub(self, rhs: Self) -> Self {
        Self {
            solver_steps: self.solver_steps - rhs.solver_steps,
            forward_marches: self.forward_marches - rhs.forward_marches,
            transposed_marches: self.transposed_marches - rhs.transposed_marches,
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    solver_steps: AtomicU64,
    forward_marches: AtomicU64,
    transposed_marches: AtomicU64,
}

/// The discrete LTI system with its observation operators.
#[derive(Debug)]
pub struct WaveModel {
    spec: ModelSpec,
    layout: StateLayout,
    dt_solver: f64,
    substeps: usize,
    /// Semi-discrete operator `L` and its transpose.
    op: CsMat<f64>,
    op_t: CsMat<f64>,
    /// Bottom forcing `M` (state × seafloor) and its transpose.
    forcing: CsMat<f64>,
    forcing_t: CsMat<f64>,
    /// Diagonal energy weights per state entry.
    energy_weights: Vec<f64>,
    sensor_state: Vec<usize>,
    qoi_state: Vec<usize>,
    counters: Counters,
}

impl WaveModel {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        spec.validate()?;
        let grid = spec.grid;
        let layout = StateLayout::new(&grid);
        let ops = operator::build(&grid, &spec.constants, &layout);
        let cfl = cfl_max_dt(&grid, &spec.constants);
        let data_dt = spec.observation.data_dt;
        let substeps = ((data_dt / (spec.safety * cfl)) * (1.0 - 1e-12))
            .ceil()
            .max(1.0) as usize;
        let sensor_state = spec.observation.sensor_indices.clone();
        let surface = layout.surface_offset();
        let qoi_state = spec
            .observation
            .qoi_indices
            .iter()
            .map(|i| surface + i)
            .collect();
        Ok(Self {
            layout,
            dt_solver: data_dt / substeps as f64,
            substeps,
            op_t: ops.op.transpose_view().to_csr(),
            op: ops.op,
            forcing_t: ops.forcing.transpose_view().to_csr(),
            forcing: ops.forcing,
            energy_weights: ops.energy_weights,
            sensor_state,
            qoi_state,
            counters: Counters::default(),
            spec,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn grid(&self) -> &GridSpec {
        &self.spec.grid
    }

    pub fn observation(&self) -> &ObservationSpec {
        &self.spec.observation
    }

    pub fn layout(&self) -> &StateLayout {
        &self.layout
    }

    pub fn state_len(&self) -> usize {
        self.layout.len()
    }

    /// Parameter dimension per time step.
    pub fn n_param(&self) -> usize {
        self.spec.grid.n_seafloor()
    }

    pub fn n_sensors(&self) -> usize {
        self.sensor_state.len()
    }

    pub fn n_qoi(&self) -> usize {
        self.qoi_state.len()
    }

    pub fn n_time(&self) -> usize {
        self.spec.observation.n_time
    }

    pub fn data_dt(&self) -> f64 {
        self.spec.observation.data_dt
    }

    pub fn dt_solver(&self) -> f64 {
        self.dt_solver
    }

    /// Solver steps per data step.
    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Sparse semi-discrete operator `L`.
    pub fn operator(&self) -> &CsMat<f64> {
        &self.op
    }

    /// Sparse bottom-forcing operator `M`.
    pub fn forcing_operator(&self) -> &CsMat<f64> {
        &self.forcing
    }

    /// Weighted energy `½ Σ w_i x_i²`, conserved by the interior dynamics.
    pub fn energy(&self, state: &DiscreteState) -> f64 {
        0.5 * state
            .0
            .iter()
            .zip(&self.energy_weights)
            .map(|(x, w)| w * x * x)
            .sum::<f64>()
    }

    pub fn counters(&self) -> CounterSnapshot {
        CounterSnapshot {
            solver_steps: self.counters.solver_steps.load(Ordering::Relaxed),
            forward_marches: self.counters.forward_marches.load(Ordering::Relaxed),
            transposed_marches: self.counters.transposed_marches.load(Ordering::Relaxed),
        }
    }

    pub fn reset_counters(&self) {
        self.counters.solver_steps.store(0, Ordering::Relaxed);
        self.counters.forward_marches.store(0, Ordering::Relaxed);
        self.counters.transposed_marches.store(0, Ordering::Relaxed);
    }

    pub(crate) fn sensor_state_index(&self, sensor: usize) -> usize {
        self.sensor_state[sensor]
    }

    pub(crate) fn qoi_state_index(&self, qoi: usize) -> usize {
        self.qoi_state[qoi]
    }

    /// `B w`: sensor pressures.
    pub fn observe(&self, state: &DiscreteState) -> Vec<f64> {
        self.sensor_state.iter().map(|&i| state.0[i]).collect()
    }

    /// `B_q w`: surface heights at the QoI points.
    pub fn observe_qoi(&self, state: &DiscreteState) -> Vec<f64> {
        self.qoi_state.iter().map(|&i| state.0[i]).collect()
    }

    /// `Bᵀ y`.
    pub fn observe_transpose(&self, y: &[f64]) -> Result<AdjointState> {
        self.scatter(&self.sensor_state, y, "WaveModel::observe_transpose")
    }

    /// `B_qᵀ y`.
    pub fn observe_qoi_transpose(&self, y: &[f64]) -> Result<AdjointState> {
        self.scatter(&self.qoi_state, y, "WaveModel::observe_qoi_transpose")
    }

    fn scatter(&self, targets: &[usize], y: &[f64], context: &'static str) -> Result<AdjointState> {
        if y.len() != targets.len() {
            return Err(Error::dims(context, targets.len(), y.len()));
        }
        let mut adj = AdjointState::zeros(&self.layout);
        for (&i, v) in targets.iter().zip(y) {
            adj.0[i] += v;
        }
        Ok(adj)
    }
}

use crate::wave::{GridSpec, ModelSpec, ObservationSpec};

pub(crate) fn tiny_spec() -> ModelSpec {
    ModelSpec {
        grid: GridSpec {
            seafloor_dim: 1,
            nx: 9,
            ny: 1,
            nz: 4,
            dx: 250.0,
            dy: 1.0,
            dz: 125.0,
        },
        observation: ObservationSpec {
            sensor_indices: vec![2, 6],
            qoi_indices: vec![4, 7],
            data_dt: 0.5,
            n_time: 12,
            qoi_subsample: 3,
        },
        ..ModelSpec::default()
    }
}

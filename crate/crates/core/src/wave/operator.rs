use sprs::{CsMat, TriMat};

use super::{GridSpec, PhysicalConstants, StateLayout};

pub(super) struct Operators {
    pub op: CsMat<f64>,
    pub forcing: CsMat<f64>,
    pub energy_weights: Vec<f64>,
}

/// Half-width control-volume weight along one axis.
fn cell_width(index: usize, n: usize, spacing: f64) -> f64 {
    if index == 0 || index == n - 1 {
        0.5 * spacing
    } else {
        spacing
    }
}

struct Node {
    /// Row scaling: 1 for pressure, ρg for the surface-height variable.
    unit: f64,
    /// Capacity in pressure units.
    capacity: f64,
}

pub(super) fn build(
    grid: &GridSpec,
    constants: &PhysicalConstants,
    layout: &StateLayout,
) -> Operators {
    let (nx, ny, nz) = (grid.nx, grid.ny, grid.nz);
    let rho = constants.rho;
    let rho_g = rho * constants.gravity;
    let z_inv = 1.0 / constants.impedance();
    let n = layout.len();

    let wx = |i: usize| cell_width(i, nx, grid.dx);
    let wy = |j: usize| {
        if grid.is_3d() {
            cell_width(j, ny, grid.dy)
        } else {
            1.0
        }
    };
    let wz = |k: usize| cell_width(k, nz, grid.dz);

    let nodes: Vec<Node> = (0..nz)
        .flat_map(|k| (0..ny).flat_map(move |j| (0..nx).map(move |i| (i, j, k))))
        .map(|(i, j, k)| {
            let volume = wx(i) * wy(j) * wz(k);
            let mut capacity = volume / constants.bulk_modulus;
            let mut unit = 1.0;
            if k == nz - 1 {
                capacity += wx(i) * wy(j) / rho_g;
                unit = rho_g;
            }
            Node { unit, capacity }
        })
        .collect();

    let mut tri = TriMat::with_capacity((n, n), 8 * n);
    let mut energy_weights = vec![0.0; n];

    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx {
                let a = grid.node(i, j, k);
                let node = &nodes[a];
                energy_weights[a] = node.capacity * node.unit * node.unit;
                let mut lateral = 0.0;
                if i == 0 || i == nx - 1 {
                    lateral += wy(j) * wz(k);
                }
                if grid.is_3d() && (j == 0 || j == ny - 1) {
                    lateral += wx(i) * wz(k);
                }
                if lateral > 0.0 {
                    tri.add_triplet(a, a, -lateral * z_inv / node.capacity);
                }
            }
        }
    }

    // Each face couples its lower node `a` and upper node `b` along one axis.
    let mut add_face = |f: usize, a: usize, b: usize, area: f64, len: f64| {
        let (na, nb) = (&nodes[a], &nodes[b]);
        tri.add_triplet(a, f, -area / (na.capacity * na.unit));
        tri.add_triplet(b, f, area / (nb.capacity * nb.unit));
        tri.add_triplet(f, a, na.unit / (rho * len));
        tri.add_triplet(f, b, -nb.unit / (rho * len));
        energy_weights[f] = rho * area * len;
    };

    let mut f = layout.ux_offset;
    for k in 0..nz {
        for j in 0..ny {
            for i in 0..nx - 1 {
                add_face(
                    f,
                    grid.node(i, j, k),
                    grid.node(i + 1, j, k),
                    wy(j) * wz(k),
                    grid.dx,
                );
                f += 1;
            }
        }
    }
    if grid.is_3d() {
        for k in 0..nz {
            for j in 0..ny - 1 {
                for i in 0..nx {
                    add_face(
                        f,
                        grid.node(i, j, k),
                        grid.node(i, j + 1, k),
                        wx(i) * wz(k),
                        grid.dy,
                    );
                    f += 1;
                }
            }
        }
    }
    for k in 0..nz - 1 {
        for j in 0..ny {
            for i in 0..nx {
                add_face(
                    f,
                    grid.node(i, j, k),
                    grid.node(i, j, k + 1),
                    wx(i) * wy(j),
                    grid.dz,
                );
                f += 1;
            }
        }
    }
    debug_assert_eq!(f, n);

    let n_param = grid.n_seafloor();
    let mut forcing = TriMat::with_capacity((n, n_param), n_param);
    for j in 0..ny {
        for i in 0..nx {
            let a = grid.node(i, j, 0);
            forcing.add_triplet(a, i + nx * j, wx(i) * wy(j) / nodes[a].capacity);
        }
    }

    Operators {
        op: tri.to_csr(),
        forcing: forcing.to_csr(),
        energy_weights,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interior_coupling_is_energy_skew() {
        let grid = GridSpec {
            nx: 5,
            nz: 4,
            ..GridSpec::default()
        };
        let constants = PhysicalConstants::default();
        let layout = StateLayout::new(&grid);
        let ops = build(&grid, &constants, &layout);
        let dense = ops.op.to_dense();
        let w = &ops.energy_weights;
        for r in 0..layout.len() {
            for c in 0..layout.len() {
                if r == c {
                    assert!(dense[[r, c]] <= 0.0);
                    continue;
                }
                let lhs = w[r] * dense[[r, c]];
                let rhs = w[c] * dense[[c, r]];
                assert!(
                    (lhs + rhs).abs() <= 1e-12 * lhs.abs().max(rhs.abs()).max(1e-300),
                    "({r}, {c})"
                );
            }
        }
    }

    #[test]
    fn forcing_touches_bottom_nodes_only() {
        let grid = GridSpec {
            nx: 5,
            nz: 4,
            ..GridSpec::default()
        };
        let layout = StateLayout::new(&grid);
        let ops = build(&grid, &PhysicalConstants::default(), &layout);
        assert_eq!(ops.forcing.nnz(), 5);
        for (row, vec) in ops.forcing.outer_iterator().enumerate() {
            if vec.nnz() > 0 {
                assert!(row < 5);
                assert!(vec.iter().all(|(c, v)| c == row && *v > 0.0));
            }
        }
    }
}

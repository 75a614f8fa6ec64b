//! Offline construction of the block-Toeplitz maps from transposed marches.
//!
//! A single transposed march seeded at sensor `j` on the last data step
//! yields `Cᵀ (Aᵀ)ᵏ Bᵀ e_j` for every lag `k`, which is row `j` of every
//! block `F_k`. Assembling `F` therefore costs one march per sensor and `F_q`
//! one march per QoI point.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::prior::EllipticPrior;
use crate::toeplitz::{AnticausalToeplitz, BlockToeplitzMap};
use crate::wave::WaveModel;

/// The four maps produced offline before any data-space algebra.
#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Maps {
    /// `F`: seafloor rate to sensor pressure.
    pub p2o: BlockToeplitzMap,
    /// `F_q`: seafloor rate to surface height, with parameter steps grouped
    /// `qoi_subsample` at a time.
    pub p2q: BlockToeplitzMap,
    /// `G* = Γ_prior Fᵀ`.
    pub g_star: AnticausalToeplitz,
    /// `G_q* = Γ_prior F_qᵀ`.
    pub gq_star: AnticausalToeplitz,
}

impl Phase1Maps {
    pub fn assemble(model: &WaveModel, prior: &EllipticPrior) -> Result<Self> {
        let p2o = assemble_p2o(model)?;
        let p2q = assemble_p2q(model)?;
        let g_star = build_g_star(&p2o, prior)?;
        let gq_star = build_g_star(&p2q, prior)?;
        Ok(Self {
            p2o,
            p2q,
            g_star,
            gq_star,
        })
    }

    pub fn qoi_subsample(&self) -> usize {
        self.p2q.n_col_block() / self.p2o.n_col_block()
    }
}

/// `F` from one transposed march per sensor.
pub fn assemble_p2o(model: &WaveModel) -> Result<BlockToeplitzMap> {
    let (nd, nm, nt) = (model.n_sensors(), model.n_param(), model.n_time());
    let rows = (0..nd)
        .into_par_iter()
        .map(|j| model.impulse_response(model.sensor_state_index(j), nt))
        .collect::<Result<Vec<_>>>()?;
    let mut blocks = vec![0.0; nt * nd * nm];
    for (j, response) in rows.iter().enumerate() {
        for k in 0..nt {
            let dst = (k * nd + j) * nm;
            blocks[dst..dst + nm].copy_from_slice(response.slice(nt - 1 - k));
        }
    }
    BlockToeplitzMap::from_first_block_column(nd, nm, nt, blocks)
}

/// `F_q` at the QoI rate from one transposed march per QoI point.
///
/// Column `t·N_m + s` of block `k` couples the parameter at node `s` and
/// sub-step `t` of a QoI step to the QoI `k` steps later, so the data-rate
/// lag is `k r + r − 1 − t`.
pub fn assemble_p2q(model: &WaveModel) -> Result<BlockToeplitzMap> {
    let (nq, nm, nt) = (model.n_qoi(), model.n_param(), model.n_time());
    let r = model.observation().qoi_subsample;
    let ntq = nt / r;
    let ncol = r * nm;
    let rows = (0..nq)
        .into_par_iter()
        .map(|j| model.impulse_response(model.qoi_state_index(j), nt))
        .collect::<Result<Vec<_>>>()?;
    let mut blocks = vec![0.0; ntq * nq * ncol];
    for (j, response) in rows.iter().enumerate() {
        for lag in 0..nt {
            let (k, t) = (lag / r, r - 1 - lag % r);
            let dst = (k * nq + j) * ncol + t * nm;
            blocks[dst..dst + nm].copy_from_slice(response.slice(nt - 1 - lag));
        }
    }
    BlockToeplitzMap::from_first_block_column(nq, ncol, ntq, blocks)
}

/// `Γ_prior Tᵀ` for a causal map `T` whose columns are grouped copies of the
/// prior's spatial grid. Block `k` is `Γ T_kᵀ`, with `Γ` acting on each
/// spatial chunk of every row of `T_k`.
pub fn build_g_star(map: &BlockToeplitzMap, prior: &EllipticPrior) -> Result<AnticausalToeplitz> {
    let (nr, nc, nt) = (map.n_row_block(), map.n_col_block(), map.n_lag());
    let nm = prior.dim();
    if nc % nm != 0 {
        return Err(Error::dims(
            "build_g_star",
            format!("a multiple of {nm} columns"),
            nc,
        ));
    }
    // Γ-weighted rows of T_k, each of length nc: gathered as [k][row][col].
    let weighted: Vec<f64> = (0..nt * nr)
        .into_par_iter()
        .flat_map_iter(|kr| {
            let (k, row) = (kr / nr, kr % nr);
            let src = &map.block(k)[row * nc..(row + 1) * nc];
            let mut out = Vec::with_capacity(nc);
            for chunk in src.chunks(nm) {
                out.extend(
                    prior
                        .cov_apply(chunk)
                        .expect("chunk length equals the prior dimension"),
                );
            }
            out
        })
        .collect();
    // Transpose each block to nc × nr.
    let mut blocks = vec![0.0; nt * nc * nr];
    for k in 0..nt {
        for row in 0..nr {
            for col in 0..nc {
                blocks[(k * nc + col) * nr + row] = weighted[(k * nr + row) * nc + col];
            }
        }
    }
    Ok(AnticausalToeplitz::new(
        BlockToeplitzMap::from_first_block_column(nc, nr, nt, blocks)?,
    ))
}

/// Maps a parameter-rate field to the grouped layout `F_q` expects.
pub fn group_for_qoi(m: &SpaceTimeField, qoi_subsample: usize) -> Result<SpaceTimeField> {
    m.clone().regroup(qoi_subsample)
}

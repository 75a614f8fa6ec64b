//! Causal block-Toeplitz operators with FFT-accelerated actions.
//!
//! A [`BlockToeplitzMap`] represents the block lower-triangular matrix
//!
//! ```text
//! [ T_0                    ]
//! [ T_1   T_0              ]
//! [ ...         ...        ]
//! [ T_{n-1}  ...  T_1  T_0 ]
//! ```
//!
//! stored through its first block column `T_0 .. T_{n-1}`. Matvecs embed the
//! block sequence into a block circulant of length `L >= 2n - 1`, which the DFT
//! along the lag axis block-diagonalises; the product becomes one small complex
//! block-times-vector per frequency bin. The adjoint reuses the same spectrum
//! with conjugated, transposed blocks.
//!
//! Only the non-redundant half of the spectrum (`L/2 + 1` bins) is kept, since
//! the blocks are real; [`FourierCache::bin`] reconstructs any of the `L` bins.
//!
//! Per-bin reductions always run in ascending index order, so results are
//! bitwise identical regardless of the rayon thread count.

use std::fmt;
use std::io::{Read, Write};
use std::sync::{Arc, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use realfft::num_complex::Complex64;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};

use crate::error::{Error, Result};
use crate::field::SpaceTimeField;

/// Default bound on the number of entries a dense expansion may allocate.
pub const DEFAULT_DENSE_CAP: u128 = 100_000_000;

const BTOP_MAGIC: &[u8; 4] = b"BTOP";
const BTOP_VERSION: u32 = 1;

/// Frequency-domain blocks of a [`BlockToeplitzMap`].
#[derive(Clone)]
pub struct FourierCache {
    len: usize,
    n_row: usize,
    n_col: usize,
    /// `[(len/2 + 1)][row][col]`
    bins: Vec<Complex64>,
    forward: Arc<dyn RealToComplex<f64>>,
    inverse: Arc<dyn ComplexToReal<f64>>,
}

impl fmt::Debug for FourierCache {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FourierCache")
            .field("len", &self.len)
            .field("stored_bins", &self.stored_bins())
            .finish()
    }
}

impl FourierCache {
    /// Circulant embedding length `L`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn stored_bins(&self) -> usize {
        self.len / 2 + 1
    }

    /// Block `f` (row-major) of the length-`L` DFT of the zero-padded lag
    /// sequence, for any `f < L`.
    pub fn bin(&self, f: usize) -> Vec<Complex64> {
        assert!(f < self.len, "bin {f} out of range for L = {}", self.len);
        let stride = self.n_row * self.n_col;
        if f < self.stored_bins() {
            self.bins[f * stride..(f + 1) * stride].to_vec()
        } else {
            let g = self.len - f;
            self.bins[g * stride..(g + 1) * stride]
                .iter()
                .map(|z| z.conj())
                .collect()
        }
    }
}

/// Causal block lower-triangular Toeplitz operator.
#[derive(Debug, Clone)]
pub struct BlockToeplitzMap {
    n_row_block: usize,
    n_col_block: usize,
    n_lag: usize,
    /// `[lag][row][col]`
    blocks: Vec<f64>,
    fourier: OnceLock<FourierCache>,
}

impl PartialEq for BlockToeplitzMap {
    fn eq(&self, other: &Self) -> bool {
        self.n_row_block == other.n_row_block
            && self.n_col_block == other.n_col_block
            && self.n_lag == other.n_lag
            && self.blocks == other.blocks
    }
}

impl BlockToeplitzMap {
    /// Builds the operator from its first block column, `blocks[k]` being
    /// the block at lag `k` laid out `[lag][row][col]`.
    pub fn from_first_block_column(
        n_row_block: usize,
        n_col_block: usize,
        n_lag: usize,
        blocks: Vec<f64>,
    ) -> Result<Self> {
        if n_row_block == 0 || n_col_block == 0 || n_lag == 0 {
            return Err(Error::InvalidInput(format!(
                "block Toeplitz dimensions must be nonzero, got {n_row_block} x {n_col_block} x {n_lag} lags"
            )));
        }
        let expected = n_row_block * n_col_block * n_lag;
        if blocks.len() != expected {
            return Err(Error::dims(
                "BlockToeplitzMap::from_first_block_column",
                expected,
                blocks.len(),
            ));
        }
        if let Some(i) = blocks.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite block entry at flat index {i}"
            )));
        }
        Ok(Self {
            n_row_block,
            n_col_block,
            n_lag,
            blocks,
            fourier: OnceLock::new(),
        })
    }

    /// Convenience constructor from nested `[lag][row][col]` vectors.
    pub fn from_nested(blocks: &[Vec<Vec<f64>>]) -> Result<Self> {
        let n_lag = blocks.len();
        let n_row = blocks.first().map_or(0, Vec::len);
        let n_col = blocks.first().and_then(|b| b.first()).map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(n_lag * n_row * n_col);
        for (k, block) in blocks.iter().enumerate() {
            if block.len() != n_row || block.iter().any(|row| row.len() != n_col) {
                return Err(Error::dims(
                    "BlockToeplitzMap::from_nested",
                    format!("{n_row} x {n_col} blocks"),
                    format!("ragged block at lag {k}"),
                ));
            }
            flat.extend(block.iter().flatten());
        }
        Self::from_first_block_column(n_row, n_col, n_lag, flat)
    }

    pub fn zeros(n_row_block: usize, n_col_block: usize, n_lag: usize) -> Self {
        Self::from_first_block_column(
            n_row_block,
            n_col_block,
            n_lag,
            vec![0.0; n_row_block * n_col_block * n_lag],
        )
        .expect("nonzero dimensions")
    }

    pub fn n_row_block(&self) -> usize {
        self.n_row_block
    }

    pub fn n_col_block(&self) -> usize {
        self.n_col_block
    }

    pub fn n_lag(&self) -> usize {
        self.n_lag
    }

    /// Rows of the full operator.
    pub fn n_rows(&self) -> usize {
        self.n_row_block * self.n_lag
    }

    /// Columns of the full operator.
    pub fn n_cols(&self) -> usize {
        self.n_col_block * self.n_lag
    }

    pub fn blocks(&self) -> &[f64] {
        &self.blocks
    }

    /// Row-major block at `lag`.
    pub fn block(&self, lag: usize) -> &[f64] {
        let stride = self.n_row_block * self.n_col_block;
        &self.blocks[lag * stride..(lag + 1) * stride]
    }

    pub fn fourier_cache(&self) -> Option<&FourierCache> {
        self.fourier.get()
    }

    /// Smallest power of two `>= 2 n_lag`.
    pub fn default_embedding_len(n_lag: usize) -> usize {
        (2 * n_lag).next_power_of_two()
    }

    /// Populates the Fourier cache with embedding length `len`. Calling it
    /// again with the same length is a no-op.
    pub fn precompute_fourier(&mut self, len: usize) -> Result<()> {
        let min = 2 * self.n_lag - 1;
        if len < min {
            return Err(Error::EmbeddingTooShort { len, min });
        }
        if self.fourier.get().is_some_and(|c| c.len == len) {
            return Ok(());
        }
        let cache = self.build_cache(len);
        self.fourier = OnceLock::new();
        let _ = self.fourier.set(cache);
        Ok(())
    }

    fn fourier(&self) -> &FourierCache {
        self.fourier
            .get_or_init(|| self.build_cache(Self::default_embedding_len(self.n_lag)))
    }

    fn build_cache(&self, len: usize) -> FourierCache {
        let mut planner = RealFftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let (nr, nc, nt) = (self.n_row_block, self.n_col_block, self.n_lag);
        let stride = nr * nc;
        let nb = len / 2 + 1;

        let spectra: Vec<Vec<Complex64>> = (0..stride)
            .into_par_iter()
            .map(|rc| {
                let mut buf = vec![0.0; len];
                for (k, slot) in buf.iter_mut().take(nt).enumerate() {
                    *slot = self.blocks[k * stride + rc];
                }
                let mut out = forward.make_output_vec();
                let mut scratch = forward.make_scratch_vec();
                forward
                    .process_with_scratch(&mut buf, &mut out, &mut scratch)
                    .expect("buffer lengths match the plan");
                out
            })
            .collect();

        let mut bins = vec![Complex64::new(0.0, 0.0); nb * stride];
        for (rc, spectrum) in spectra.iter().enumerate() {
            for (f, z) in spectrum.iter().enumerate() {
                bins[f * stride + rc] = *z;
            }
        }
        FourierCache {
            len,
            n_row: nr,
            n_col: nc,
            bins,
            forward,
            inverse,
        }
    }

    /// `y = T x`.
    pub fn matvec(&self, x: &SpaceTimeField) -> Result<SpaceTimeField> {
        x.check_shape(self.n_col_block, self.n_lag, "BlockToeplitzMap::matvec")?;
        let y = self.fft_apply(x.values(), false);
        Ok(SpaceTimeField::from_raw(
            self.n_row_block,
            self.n_lag,
            x.dt(),
            y,
        ))
    }

    /// `x = Tᵀ y`, via conjugated blocks of the same spectrum.
    pub fn adjoint_matvec(&self, y: &SpaceTimeField) -> Result<SpaceTimeField> {
        y.check_shape(
            self.n_row_block,
            self.n_lag,
            "BlockToeplitzMap::adjoint_matvec",
        )?;
        let x = self.fft_apply(y.values(), true);
        Ok(SpaceTimeField::from_raw(
            self.n_col_block,
            self.n_lag,
            y.dt(),
            x,
        ))
    }

    fn fft_apply(&self, input: &[f64], adjoint: bool) -> Vec<f64> {
        let cache = self.fourier();
        let (nr, nc, nt) = (self.n_row_block, self.n_col_block, self.n_lag);
        let (n_in, n_out) = if adjoint { (nr, nc) } else { (nc, nr) };
        let len = cache.len;
        let nb = cache.stored_bins();
        let stride = nr * nc;

        let spectra: Vec<Vec<Complex64>> = (0..n_in)
            .into_par_iter()
            .map(|c| {
                let mut buf = vec![0.0; len];
                for (t, slot) in buf.iter_mut().take(nt).enumerate() {
                    *slot = input[t * n_in + c];
                }
                let mut out = cache.forward.make_output_vec();
                let mut scratch = cache.forward.make_scratch_vec();
                cache
                    .forward
                    .process_with_scratch(&mut buf, &mut out, &mut scratch)
                    .expect("buffer lengths match the plan");
                out
            })
            .collect();

        let products: Vec<Vec<Complex64>> = (0..nb)
            .into_par_iter()
            .map(|f| {
                let block = &cache.bins[f * stride..(f + 1) * stride];
                let mut acc = vec![Complex64::new(0.0, 0.0); n_out];
                if adjoint {
                    for r in 0..nr {
                        let yr = spectra[r][f];
                        let row = &block[r * nc..(r + 1) * nc];
                        for (a, t) in acc.iter_mut().zip(row) {
                            *a += t.conj() * yr;
                        }
                    }
                } else {
                    for (r, a) in acc.iter_mut().enumerate() {
                        let row = &block[r * nc..(r + 1) * nc];
                        let mut s = Complex64::new(0.0, 0.0);
                        for (c, t) in row.iter().enumerate() {
                            s += t * spectra[c][f];
                        }
                        *a = s;
                    }
                }
                acc
            })
            .collect();

        let scale = 1.0 / len as f64;
        let columns: Vec<Vec<f64>> = (0..n_out)
            .into_par_iter()
            .map(|o| {
                let mut spectrum: Vec<Complex64> = products.iter().map(|p| p[o]).collect();
                // Real-signal spectra: DC and Nyquist bins are real.
                spectrum[0].im = 0.0;
                spectrum[nb - 1].im = 0.0;
                let mut out = cache.inverse.make_output_vec();
                let mut scratch = cache.inverse.make_scratch_vec();
                cache
                    .inverse
                    .process_with_scratch(&mut spectrum, &mut out, &mut scratch)
                    .expect("buffer lengths match the plan");
                out.truncate(nt);
                out.iter_mut().for_each(|v| *v *= scale);
                out
            })
            .collect();

        let mut result = vec![0.0; nt * n_out];
        for (o, column) in columns.iter().enumerate() {
            for (t, v) in column.iter().enumerate() {
                result[t * n_out + o] = *v;
            }
        }
        result
    }

    /// Dense expansion. Fails when it would exceed `cap` entries.
    pub fn to_dense(&self, cap: u128) -> Result<DMatrix<f64>> {
        check_cap(self.n_rows(), self.n_cols(), cap)?;
        let (nr, nc) = (self.n_row_block, self.n_col_block);
        let mut dense = DMatrix::zeros(self.n_rows(), self.n_cols());
        for i in 0..self.n_lag {
            for j in 0..=i {
                let block = self.block(i - j);
                for r in 0..nr {
                    for c in 0..nc {
                        dense[(i * nr + r, j * nc + c)] = block[r * nc + c];
                    }
                }
            }
        }
        Ok(dense)
    }

    /// Singular values of the dense expansion, descending.
    pub fn singular_spectrum(&self, cap: u128) -> Result<Vec<f64>> {
        let dense = self.to_dense(cap)?;
        Ok(singular_values(dense))
    }

    /// Writes the BTOP container: header then blocks as little-endian f64.
    pub fn write_btop<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        w.write_all(BTOP_MAGIC)?;
        w.write_all(&BTOP_VERSION.to_le_bytes())?;
        for n in [self.n_row_block, self.n_col_block, self.n_lag] {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, &self.blocks)?;
        w.flush()
    }

    pub fn read_btop<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic, "BTOP")?;
        if &magic != BTOP_MAGIC {
            return Err(Error::Format {
                kind: "BTOP",
                detail: format!("bad magic {magic:?}"),
            });
        }
        let version = read_u32(&mut r, "BTOP")?;
        if version != BTOP_VERSION {
            return Err(Error::Format {
                kind: "BTOP",
                detail: format!("unsupported version {version}"),
            });
        }
        let nr = read_u64(&mut r, "BTOP")? as usize;
        let nc = read_u64(&mut r, "BTOP")? as usize;
        let nt = read_u64(&mut r, "BTOP")? as usize;
        let count = nr
            .checked_mul(nc)
            .and_then(|v| v.checked_mul(nt))
            .ok_or_else(|| Error::Format {
                kind: "BTOP",
                detail: "dimension overflow".into(),
            })?;
        let blocks = read_f64s(&mut r, count, "BTOP")?;
        Self::from_first_block_column(nr, nc, nt, blocks)
    }
}

/// Block upper-triangular Toeplitz operator `Y_i = Σ_{j ≥ i} B_{j−i} X_j`,
/// the shape of adjoints such as `Γ_prior Fᵀ`.
///
/// It is stored as the causal map with the same blocks; with `R` the time
/// reversal, the anticausal operator is `R T R`, so it shares the causal
/// FFT path and the BTOP container.
#[derive(Debug, Clone, PartialEq)]
pub struct AnticausalToeplitz {
    inner: BlockToeplitzMap,
}

impl AnticausalToeplitz {
    pub fn new(inner: BlockToeplitzMap) -> Self {
        Self { inner }
    }

    pub fn inner(&self) -> &BlockToeplitzMap {
        &self.inner
    }

    pub fn into_inner(self) -> BlockToeplitzMap {
        self.inner
    }

    pub fn n_row_block(&self) -> usize {
        self.inner.n_row_block
    }

    pub fn n_col_block(&self) -> usize {
        self.inner.n_col_block
    }

    pub fn n_lag(&self) -> usize {
        self.inner.n_lag
    }

    pub fn precompute_fourier(&mut self, len: usize) -> Result<()> {
        self.inner.precompute_fourier(len)
    }

    pub fn matvec(&self, x: &SpaceTimeField) -> Result<SpaceTimeField> {
        x.check_shape(
            self.inner.n_col_block,
            self.inner.n_lag,
            "AnticausalToeplitz::matvec",
        )?;
        let y = self.inner.matvec(&reverse_time(x))?;
        Ok(reverse_time(&y))
    }

    pub fn adjoint_matvec(&self, y: &SpaceTimeField) -> Result<SpaceTimeField> {
        y.check_shape(
            self.inner.n_row_block,
            self.inner.n_lag,
            "AnticausalToeplitz::adjoint_matvec",
        )?;
        let x = self.inner.adjoint_matvec(&reverse_time(y))?;
        Ok(reverse_time(&x))
    }

    pub fn to_dense(&self, cap: u128) -> Result<DMatrix<f64>> {
        let inner = &self.inner;
        check_cap(inner.n_rows(), inner.n_cols(), cap)?;
        let (nr, nc) = (inner.n_row_block, inner.n_col_block);
        let mut dense = DMatrix::zeros(inner.n_rows(), inner.n_cols());
        for i in 0..inner.n_lag {
            for j in i..inner.n_lag {
                let block = inner.block(j - i);
                for r in 0..nr {
                    for c in 0..nc {
                        dense[(i * nr + r, j * nc + c)] = block[r * nc + c];
                    }
                }
            }
        }
        Ok(dense)
    }
}

fn reverse_time(x: &SpaceTimeField) -> SpaceTimeField {
    let (ns, nt) = (x.n_space(), x.n_time());
    let mut out = Vec::with_capacity(x.len());
    for t in (0..nt).rev() {
        out.extend_from_slice(x.slice(t));
    }
    SpaceTimeField::from_raw(ns, nt, x.dt(), out)
}

pub(crate) fn check_cap(rows: usize, cols: usize, cap: u128) -> Result<()> {
    let entries = rows as u128 * cols as u128;
    if entries > cap {
        return Err(Error::DenseCapExceeded { entries, cap });
    }
    Ok(())
}

/// Descending singular values. Large matrices go through the eigenvalues of
/// the smaller Gram matrix, which resolves values down to about
/// `sqrt(eps) * σ_max`.
pub fn singular_values(dense: DMatrix<f64>) -> Vec<f64> {
    let (rows, cols) = dense.shape();
    let mut values: Vec<f64> = if rows * cols <= 1 << 20 {
        dense.singular_values().iter().copied().collect()
    } else {
        let gram = if rows <= cols {
            &dense * dense.transpose()
        } else {
            dense.transpose() * &dense
        };
        SymmetricEigen::new(gram)
            .eigenvalues
            .iter()
            .map(|l| l.max(0.0).sqrt())
            .collect()
    };
    values.sort_by(|a, b| b.total_cmp(a));
    values
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> std::io::Result<()> {
    let mut buf = Vec::with_capacity(values.len().min(1 << 16) * 8);
    for chunk in values.chunks(1 << 16) {
        buf.clear();
        for v in chunk {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
    }
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], kind: &'static str) -> Result<()> {
    r.read_exact(buf).map_err(|e| Error::Format {
        kind,
        detail: format!("truncated input: {e}"),
    })
}

pub(crate) fn read_u32<R: Read>(r: &mut R, kind: &'static str) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b, kind)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R, kind: &'static str) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b, kind)?;
    Ok(u64::from_le_bytes(b))
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize, kind: &'static str) -> Result<Vec<f64>> {
    let mut bytes = vec![0u8; count * 8];
    read_exact(r, &mut bytes, kind)?;
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing).map_err(|e| Error::Format {
        kind,
        detail: e.to_string(),
    })? != 0
    {
        return Err(Error::Format {
            kind,
            detail: "trailing bytes after payload".into(),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_map(rng: &mut ChaCha8Rng, nr: usize, nc: usize, nt: usize) -> BlockToeplitzMap {
        let blocks = (0..nr * nc * nt)
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        BlockToeplitzMap::from_first_block_column(nr, nc, nt, blocks).unwrap()
    }

    fn random_field(rng: &mut ChaCha8Rng, ns: usize, nt: usize) -> SpaceTimeField {
        let v = (0..ns * nt).map(|_| rng.random_range(-1.0..1.0)).collect();
        SpaceTimeField::new(ns, nt, 1.0, v).unwrap()
    }

    /// Straight triple loop over the causal block structure.
    fn loop_matvec(map: &BlockToeplitzMap, x: &[f64]) -> Vec<f64> {
        let (nr, nc, nt) = (map.n_row_block(), map.n_col_block(), map.n_lag());
        let mut y = vec![0.0; nr * nt];
        for i in 0..nt {
            for j in 0..=i {
                let b = map.block(i - j);
                for r in 0..nr {
                    for c in 0..nc {
                        y[i * nr + r] += b[r * nc + c] * x[j * nc + c];
                    }
                }
            }
        }
        y
    }

    #[test]
    fn single_block_dense_is_identity() {
        let map = BlockToeplitzMap::from_nested(&[vec![vec![1.0]]]).unwrap();
        assert_eq!(
            map.to_dense(DEFAULT_DENSE_CAP).unwrap(),
            DMatrix::from_element(1, 1, 1.0)
        );
    }

    #[test]
    fn two_lag_layout() {
        let map = BlockToeplitzMap::from_nested(&[vec![vec![1.0]], vec![vec![2.0]]]).unwrap();
        let dense = map.to_dense(DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(dense, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 1.0]));
    }

    #[test]
    fn dense_matches_triangular_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let map = random_map(&mut rng, 2, 2, 3);
        let dense = map.to_dense(DEFAULT_DENSE_CAP).unwrap();
        for col in 0..6 {
            let mut e = vec![0.0; 6];
            e[col] = 1.0;
            let y = loop_matvec(&map, &e);
            for row in 0..6 {
                assert_eq!(dense[(row, col)], y[row]);
            }
        }
    }

    #[test]
    fn rejects_bad_dimensions() {
        assert!(BlockToeplitzMap::from_first_block_column(2, 2, 2, vec![0.0; 7]).is_err());
        assert!(BlockToeplitzMap::from_first_block_column(0, 2, 2, vec![]).is_err());
        assert!(BlockToeplitzMap::from_nested(&[vec![vec![1.0, 2.0], vec![1.0]]]).is_err());
        let map = BlockToeplitzMap::zeros(2, 3, 4);
        assert!(map.matvec(&SpaceTimeField::zeros(2, 4, 1.0)).is_err());
        assert!(map
            .adjoint_matvec(&SpaceTimeField::zeros(3, 4, 1.0))
            .is_err());
    }

    #[test]
    fn embedding_length_checks() {
        let mut map = BlockToeplitzMap::zeros(1, 1, 5);
        assert!(matches!(
            map.precompute_fourier(8),
            Err(Error::EmbeddingTooShort { min: 9, .. })
        ));
        map.precompute_fourier(9).unwrap();
        assert_eq!(map.fourier_cache().unwrap().len(), 9);
        assert_eq!(BlockToeplitzMap::default_embedding_len(5), 16);
        assert_eq!(BlockToeplitzMap::default_embedding_len(1), 2);
    }

    #[test]
    fn single_impulse_spectrum_is_flat() {
        let mut map = BlockToeplitzMap::from_nested(&[vec![vec![2.5]]]).unwrap();
        map.precompute_fourier(4).unwrap();
        let cache = map.fourier_cache().unwrap();
        for f in 0..4 {
            let z = cache.bin(f)[0];
            assert_eq!((z.re, z.im), (2.5, 0.0));
        }
    }

    #[test]
    fn cache_inverse_dft_reproduces_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut map = random_map(&mut rng, 2, 3, 5);
        map.precompute_fourier(12).unwrap();
        let cache = map.fourier_cache().unwrap().clone();
        let len = cache.len();
        let bins: Vec<_> = (0..len).map(|f| cache.bin(f)).collect();
        for k in 0..len {
            for rc in 0..6 {
                let mut acc = Complex64::new(0.0, 0.0);
                for (f, b) in bins.iter().enumerate() {
                    let phase = 2.0 * std::f64::consts::PI * (f * k) as f64 / len as f64;
                    acc += b[rc] * Complex64::new(phase.cos(), phase.sin());
                }
                let expected = if k < 5 { map.block(k)[rc] } else { 0.0 };
                assert!((acc.re / len as f64 - expected).abs() < 1e-12);
                assert!(acc.im.abs() / (len as f64) < 1e-12);
            }
        }
    }

    #[test]
    fn precompute_is_idempotent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut map = random_map(&mut rng, 2, 2, 3);
        let before = map.blocks().to_vec();
        map.precompute_fourier(8).unwrap();
        let first = map.fourier_cache().unwrap().bin(1);
        map.precompute_fourier(8).unwrap();
        assert_eq!(map.fourier_cache().unwrap().bin(1), first);
        assert_eq!(map.blocks(), &before[..]);
    }

    #[test]
    fn fft_matvec_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for &nt in &[1usize, 2, 3, 4, 8, 17] {
            let map = random_map(&mut rng, 3, 5, nt);
            let x = random_field(&mut rng, 5, nt);
            let y = map.matvec(&x).unwrap();
            let expected = loop_matvec(&map, x.values());
            assert!(
                crate::field::relative_difference(y.values(), &expected) < 1e-10,
                "n_lag={nt}"
            );
        }
    }

    #[test]
    fn zero_and_identity_cases() {
        let map = BlockToeplitzMap::from_nested(&[vec![vec![1.0, 0.0], vec![0.0, 1.0]]]).unwrap();
        let x = SpaceTimeField::new(2, 1, 0.1, vec![3.0, -4.0]).unwrap();
        let y = map.matvec(&x).unwrap();
        assert!(crate::field::relative_difference(y.values(), x.values()) < 1e-15);
        let z = map.matvec(&SpaceTimeField::zeros(2, 1, 0.1)).unwrap();
        assert!(z.values().iter().all(|v| *v == 0.0));
        let w = map
            .adjoint_matvec(&SpaceTimeField::zeros(2, 1, 0.1))
            .unwrap();
        assert!(w.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_lag_adjoint_is_transpose() {
        let map = BlockToeplitzMap::from_nested(&[vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]])
            .unwrap();
        let y = SpaceTimeField::new(2, 1, 1.0, vec![1.0, -1.0]).unwrap();
        let x = map.adjoint_matvec(&y).unwrap();
        assert!(crate::field::relative_difference(x.values(), &[-3.0, -3.0, -3.0]) < 1e-14);
    }

    #[test]
    fn anticausal_matches_its_dense_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let map = AnticausalToeplitz::new(random_map(&mut rng, 3, 2, 4));
        let dense = map.to_dense(DEFAULT_DENSE_CAP).unwrap();
        let x = random_field(&mut rng, 2, 4);
        let y = map.matvec(&x).unwrap();
        let expected = &dense * nalgebra::DVector::from_column_slice(x.values());
        assert!(crate::field::relative_difference(y.values(), expected.as_slice()) < 1e-12);
        let z = random_field(&mut rng, 3, 4);
        let w = map.adjoint_matvec(&z).unwrap();
        let expected = dense.transpose() * nalgebra::DVector::from_column_slice(z.values());
        assert!(crate::field::relative_difference(w.values(), expected.as_slice()) < 1e-12);
        // The causal dense form transposed is anticausal with transposed blocks.
        let causal = random_map(&mut rng, 2, 3, 3);
        let mut t_blocks = Vec::new();
        for k in 0..3 {
            let b = causal.block(k);
            for c in 0..3 {
                for r in 0..2 {
                    t_blocks.push(b[r * 3 + c]);
                }
            }
        }
        let anti = AnticausalToeplitz::new(
            BlockToeplitzMap::from_first_block_column(3, 2, 3, t_blocks).unwrap(),
        );
        assert_eq!(
            anti.to_dense(DEFAULT_DENSE_CAP).unwrap(),
            causal.to_dense(DEFAULT_DENSE_CAP).unwrap().transpose()
        );
    }

    #[test]
    fn dense_cap_is_enforced() {
        let map = BlockToeplitzMap::zeros(10, 10, 10);
        assert!(matches!(
            map.to_dense(9_999),
            Err(Error::DenseCapExceeded {
                entries: 10_000,
                ..
            })
        ));
        assert!(map.to_dense(10_000).is_ok());
    }

    #[test]
    fn spectrum_of_identity_and_zero() {
        let mut blocks = vec![0.0; 9];
        blocks[0] = 1.0;
        blocks[4] = 1.0;
        blocks[8] = 1.0;
        let id = BlockToeplitzMap::from_first_block_column(3, 3, 1, blocks).unwrap();
        let s = id.singular_spectrum(DEFAULT_DENSE_CAP).unwrap();
        assert_eq!(s.len(), 3);
        assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-14));
        let zero = BlockToeplitzMap::zeros(2, 3, 2);
        assert!(zero
            .singular_spectrum(DEFAULT_DENSE_CAP)
            .unwrap()
            .iter()
            .all(|v| *v == 0.0));
    }

    #[test]
    fn gram_and_direct_spectra_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let dense = DMatrix::from_fn(30, 50, |_, _| rng.random_range(-1.0..1.0));
        let direct = singular_values(dense.clone());
        let gram = {
            let g = &dense * dense.transpose();
            let mut v: Vec<f64> = SymmetricEigen::new(g)
                .eigenvalues
                .iter()
                .map(|l| l.max(0.0).sqrt())
                .collect();
            v.sort_by(|a, b| b.total_cmp(a));
            v
        };
        for (a, b) in direct.iter().zip(&gram) {
            assert!((a - b).abs() < 1e-10 * direct[0]);
        }
    }

    #[test]
    fn btop_round_trip_and_header() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let map = random_map(&mut rng, 2, 3, 4);
        let mut bytes = Vec::new();
        map.write_btop(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"BTOP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[8..16].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[24..32].try_into().unwrap()), 4);
        assert_eq!(bytes.len(), 32 + 8 * 24);
        assert_eq!(
            f64::from_le_bytes(bytes[32..40].try_into().unwrap()),
            map.blocks()[0]
        );
        let back = BlockToeplitzMap::read_btop(&bytes[..]).unwrap();
        assert_eq!(back, map);
        assert!(back.fourier_cache().is_none());

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(BlockToeplitzMap::read_btop(&bad[..]).is_err());
        assert!(BlockToeplitzMap::read_btop(&bytes[..bytes.len() - 1]).is_err());
        let mut long = bytes.clone();
        long.push(0);
        assert!(BlockToeplitzMap::read_btop(&long[..]).is_err());
    }
}

//! On-disk artifact directory.
//!
//! Layout:
//!
//! ```text
//! metadata.json                      hashes, specs, sizes
//! p2o.btop p2q.btop g_star.btop gq_star.btop
//! k_chol.d2qm qoi_cov.d2qm d2q.d2qm noise_var.d2qm
//! m_map_prior.d2qm q_map_prior.d2qm
//! ```
//!
//! A `.d2qm` file is the magic `D2QM`, a little-endian `u32` version, `u64`
//! rows and columns, then the entries row-major as little-endian `f64`.
//! Space-time fields are stored with one row per time step.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assembly::Phase1Maps;
use crate::bayes::{NoiseModel, PosteriorArtifacts, QoiPredictor};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::field::SpaceTimeField;
use crate::prior::{EllipticPrior, PriorSpec};
use crate::toeplitz::{
    read_f64s, read_u32, read_u64, write_f64s, AnticausalToeplitz, BlockToeplitzMap,
};
use crate::wave::ModelSpec;

pub const FORMAT_VERSION: u32 = 1;
const D2QM_MAGIC: &[u8; 4] = b"D2QM";
const D2QM_VERSION: u32 = 1;
const METADATA: &str = "metadata.json";
const PHASE1_FILES: [&str; 4] = ["p2o.btop", "p2q.btop", "g_star.btop", "gq_star.btop"];
const PHASE2_FILES: [&str; 6] = [
    "k_chol.d2qm",
    "qoi_cov.d2qm",
    "d2q.d2qm",
    "noise_var.d2qm",
    "m_map_prior.d2qm",
    "q_map_prior.d2qm",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub format_version: u32,
    pub phase1_hash: String,
    pub phase2_hash: Option<String>,
    pub model: ModelSpec,
    pub prior: PriorSpec,
    pub n_param: usize,
    pub n_time: usize,
    pub n_sensors: usize,
    pub n_qoi: usize,
    pub qoi_subsample: usize,
    pub noise_level: Option<f64>,
}

pub fn write_d2qm<W: Write>(mut w: W, m: &DMatrix<f64>) -> std::io::Result<()> {
    w.write_all(D2QM_MAGIC)?;
    w.write_all(&D2QM_VERSION.to_le_bytes())?;
    w.write_all(&(m.nrows() as u64).to_le_bytes())?;
    w.write_all(&(m.ncols() as u64).to_le_bytes())?;
    write_f64s(&mut w, m.transpose().as_slice())?;
    w.flush()
}

pub fn read_d2qm<R: Read>(mut r: R) -> Result<DMatrix<f64>> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::Format {
        kind: "D2QM",
        detail: format!("truncated header: {e}"),
    })?;
    if &magic != D2QM_MAGIC {
        return Err(Error::Format {
            kind: "D2QM",
            detail: "bad magic".into(),
        });
    }
    let version = read_u32(&mut r, "D2QM")?;
    if version != D2QM_VERSION {
        return Err(Error::Format {
            kind: "D2QM",
            detail: format!("unsupported version {version}"),
        });
    }
    let rows = read_u64(&mut r, "D2QM")? as usize;
    let cols = read_u64(&mut r, "D2QM")? as usize;
    let count = rows.checked_mul(cols).ok_or_else(|| Error::Format {
        kind: "D2QM",
        detail: format!("{rows} × {cols} overflows"),
    })?;
    let values = read_f64s(&mut r, count, "D2QM")?;
    Ok(DMatrix::from_row_slice(rows, cols, &values))
}

fn field_to_matrix(f: &SpaceTimeField) -> DMatrix<f64> {
    DMatrix::from_row_slice(f.n_time(), f.n_space(), f.values())
}

fn matrix_to_field(m: &DMatrix<f64>, dt: f64) -> Result<SpaceTimeField> {
    SpaceTimeField::new(m.ncols(), m.nrows(), dt, m.transpose().as_slice().to_vec())
}

/// A directory of persisted artifacts.
#[derive(Debug, Clone)]
pub struct ArtifactDir {
    root: PathBuf,
}

impl ArtifactDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        let p = self.path(name);
        File::create(&p)
            .map(BufWriter::new)
            .map_err(|e| Error::io(p, e))
    }

    fn open(&self, name: &str) -> Result<BufReader<File>> {
        let p = self.path(name);
        File::open(&p)
            .map(BufReader::new)
            .map_err(|e| Error::io(p, e))
    }

    fn write_matrix(&self, name: &str, m: &DMatrix<f64>) -> Result<()> {
        write_d2qm(self.create(name)?, m).map_err(|e| Error::io(self.path(name), e))
    }

    fn read_matrix(&self, name: &str) -> Result<DMatrix<f64>> {
        read_d2qm(self.open(name)?)
    }

    fn write_btop(&self, name: &str, map: &BlockToeplitzMap) -> Result<()> {
        let mut w = self.create(name)?;
        map.write_btop(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(self.path(name), e))
    }

    fn read_btop(&self, name: &str) -> Result<BlockToeplitzMap> {
        BlockToeplitzMap::read_btop(self.open(name)?)
    }

    fn missing(&self, phase: &'static str, command: &'static str) -> Error {
        Error::MissingArtifact {
            phase,
            command,
            dir: self.root.clone(),
        }
    }

    pub fn read_metadata(&self) -> Result<Metadata> {
        let p = self.path(METADATA);
        if !p.exists() {
            return Err(self.missing("assemble", "lti-twin assemble"));
        }
        let text = std::fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let meta: Metadata = serde_json::from_str(&text).map_err(|e| Error::Format {
            kind: "metadata",
            detail: e.to_string(),
        })?;
        if meta.format_version != FORMAT_VERSION {
            return Err(Error::Format {
                kind: "metadata",
                detail: format!("unsupported format version {}", meta.format_version),
            });
        }
        Ok(meta)
    }

    fn write_metadata(&self, meta: &Metadata) -> Result<()> {
        let p = self.path(METADATA);
        let text = serde_json::to_string_pretty(meta).expect("metadata serializes");
        std::fs::write(&p, text + "\n").map_err(|e| Error::io(p, e))
    }

    fn check_hash(&self, expected: &str, found: &str) -> Result<()> {
        if expected != found {
            return Err(Error::HashMismatch {
                path: self.path(METADATA),
                expected: expected.to_string(),
                found: found.to_string(),
            });
        }
        Ok(())
    }

    /// Writes the four maps and fresh metadata, dropping any factorization
    /// built from earlier maps.
    pub fn save_phase1(&self, cfg: &RunConfig, maps: &Phase1Maps) -> Result<()> {
        std::fs::create_dir_all(&self.root).map_err(|e| Error::io(&self.root, e))?;
        for name in PHASE2_FILES {
            let p = self.path(name);
            if p.exists() {
                std::fs::remove_file(&p).map_err(|e| Error::io(p, e))?;
            }
        }
        self.write_btop(PHASE1_FILES[0], &maps.p2o)?;
        self.write_btop(PHASE1_FILES[1], &maps.p2q)?;
        self.write_btop(PHASE1_FILES[2], maps.g_star.inner())?;
        self.write_btop(PHASE1_FILES[3], maps.gq_star.inner())?;
        self.write_metadata(&Metadata {
            format_version: FORMAT_VERSION,
            phase1_hash: cfg.phase1_hash(),
            phase2_hash: None,
            model: cfg.model.clone(),
            prior: cfg.prior,
            n_param: maps.p2o.n_col_block(),
            n_time: maps.p2o.n_lag(),
            n_sensors: maps.p2o.n_row_block(),
            n_qoi: maps.p2q.n_row_block(),
            qoi_subsample: maps.qoi_subsample(),
            noise_level: None,
        })
    }

    /// Metadata after checking it was built for `cfg`'s model and prior.
    pub fn phase1_metadata(&self, cfg: &RunConfig) -> Result<Metadata> {
        let meta = self.read_metadata()?;
        self.check_hash(&cfg.phase1_hash(), &meta.phase1_hash)?;
        if PHASE1_FILES.iter().any(|n| !self.path(n).exists()) {
            return Err(self.missing("assemble", "lti-twin assemble"));
        }
        Ok(meta)
    }

    pub fn load_phase1(&self, cfg: &RunConfig) -> Result<Phase1Maps> {
        self.phase1_metadata(cfg)?;
        Ok(Phase1Maps {
            p2o: self.read_btop(PHASE1_FILES[0])?,
            p2q: self.read_btop(PHASE1_FILES[1])?,
            g_star: AnticausalToeplitz::new(self.read_btop(PHASE1_FILES[2])?),
            gq_star: AnticausalToeplitz::new(self.read_btop(PHASE1_FILES[3])?),
        })
    }

    pub fn save_phase2(&self, cfg: &RunConfig, art: &PosteriorArtifacts) -> Result<()> {
        let mut meta = self.phase1_metadata(cfg)?;
        self.write_matrix(PHASE2_FILES[0], &art.k_chol)?;
        self.write_matrix(PHASE2_FILES[1], &art.qoi_cov)?;
        self.write_matrix(PHASE2_FILES[2], &art.d2q)?;
        self.write_matrix(
            PHASE2_FILES[3],
            &DMatrix::from_row_slice(1, art.noise.len(), art.noise.variances()),
        )?;
        self.write_matrix(PHASE2_FILES[4], &field_to_matrix(&art.m_map_prior))?;
        self.write_matrix(PHASE2_FILES[5], &field_to_matrix(&art.q_map_prior))?;
        meta.phase2_hash = Some(cfg.phase2_hash());
        meta.noise_level = Some(art.noise.noise_level());
        self.write_metadata(&meta)
    }

    fn phase2_metadata(&self, cfg: &RunConfig) -> Result<Metadata> {
        let meta = self.phase1_metadata(cfg)?;
        let found = meta
            .phase2_hash
            .clone()
            .ok_or_else(|| self.missing("factorize", "lti-twin factorize"))?;
        self.check_hash(&cfg.phase2_hash(), &found)?;
        if PHASE2_FILES.iter().any(|n| !self.path(n).exists()) {
            return Err(self.missing("factorize", "lti-twin factorize"));
        }
        Ok(meta)
    }

    fn load_qoi_prior(&self, meta: &Metadata) -> Result<SpaceTimeField> {
        let dt = meta.model.observation.qoi_dt();
        matrix_to_field(&self.read_matrix(PHASE2_FILES[5])?, dt)
    }

    /// The full set of online artifacts.
    pub fn load_posterior(&self, cfg: &RunConfig) -> Result<PosteriorArtifacts> {
        let meta = self.phase2_metadata(cfg)?;
        let maps = self.load_phase1(cfg)?;
        let prior = EllipticPrior::new(&meta.model.grid, meta.prior)?;
        let variances = self.read_matrix(PHASE2_FILES[3])?;
        let noise = NoiseModel::new(
            variances.as_slice().to_vec(),
            meta.noise_level.unwrap_or(cfg.noise_level),
        )?;
        let dt = meta.model.observation.data_dt;
        Ok(PosteriorArtifacts {
            maps,
            prior,
            noise,
            k_chol: self.read_matrix(PHASE2_FILES[0])?,
            qoi_cov: self.read_matrix(PHASE2_FILES[1])?,
            d2q: self.read_matrix(PHASE2_FILES[2])?,
            m_map_prior: matrix_to_field(&self.read_matrix(PHASE2_FILES[4])?, dt)?,
            q_map_prior: self.load_qoi_prior(&meta)?,
        })
    }

    /// Only what goal-oriented prediction needs; the maps are never read.
    pub fn load_predictor(&self, cfg: &RunConfig) -> Result<QoiPredictor> {
        let meta = self.phase2_metadata(cfg)?;
        Ok(QoiPredictor {
            d2q: self.read_matrix(PHASE2_FILES[2])?,
            q_map_prior: self.load_qoi_prior(&meta)?,
            qoi_cov: self.read_matrix(PHASE2_FILES[1])?,
        })
    }
}

pub fn write_field(path: &Path, f: &SpaceTimeField) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_d2qm(BufWriter::new(file), &field_to_matrix(f)).map_err(|e| Error::io(path, e))
}

pub fn read_field(path: &Path, dt: f64) -> Result<SpaceTimeField> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    matrix_to_field(&read_d2qm(BufReader::new(file))?, dt)
}

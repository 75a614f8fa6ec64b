use std::path::{Path, PathBuf};
use std::time::Instant;

use lti_twin::assembly::Phase1Maps;
use lti_twin::bayes::{NoiseModel, PosteriorArtifacts};
use lti_twin::oracle::{self, DenseOracle};
use lti_twin::persist::{read_field, write_field, ArtifactDir};
use lti_twin::pipeline::{self, predict_only, relative_errors, run_online, synth_data, Timings};
use lti_twin::prior::{factorization_count, EllipticPrior};
use lti_twin::wave::WaveModel;
use lti_twin::{Error, RunConfig, SpaceTimeField};
use serde::Serialize;

use crate::error::{CliError, CliResult};
use crate::table;

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).expect("report serializes") + "\n";
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(())
}

fn seconds(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

fn time_median<T>(repeats: usize, mut f: impl FnMut() -> lti_twin::Result<T>) -> CliResult<f64> {
    let mut samples = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let start = Instant::now();
        std::hint::black_box(f()?);
        samples.push(seconds(start));
    }
    Ok(median(samples))
}

fn m_prior(cfg: &RunConfig, model: &WaveModel) -> SpaceTimeField {
    cfg.prior
        .mean_field(model.n_param(), model.n_time(), model.data_dt())
}

pub fn assemble(cfg: &RunConfig) -> CliResult<()> {
    let model = WaveModel::new(cfg.model.clone())?;
    let prior = EllipticPrior::new(model.grid(), cfg.prior)?;
    let before = model.counters();
    let start = Instant::now();
    let maps = Phase1Maps::assemble(&model, &prior)?;
    let t_assemble = seconds(start);
    let used = model.counters() - before;

    let store = ArtifactDir::new(&cfg.paths.artifact_dir);
    let start = Instant::now();
    store.save_phase1(cfg, &maps)?;
    let t_save = seconds(start);

    println!(
        "assembled F ({} x {} blocks, {} lags) and F_q ({} x {} blocks, {} lags)",
        maps.p2o.n_row_block(),
        maps.p2o.n_col_block(),
        maps.p2o.n_lag(),
        maps.p2q.n_row_block(),
        maps.p2q.n_col_block(),
        maps.p2q.n_lag()
    );
    println!(
        "marches: {} forward, {} transposed, {} solver steps",
        used.forward_marches, used.transposed_marches, used.solver_steps
    );
    println!("timings: assemble {t_assemble:.3} s, save {t_save:.3} s");
    println!("artifacts written to {}", store.root().display());
    Ok(())
}

pub fn factorize(cfg: &RunConfig) -> CliResult<()> {
    if cfg.noise_level <= 0.0 {
        return Err(CliError::Usage(
            "factorize needs a positive noise_level; synthesize noise-free data with `synth --noise-level 0` instead".into(),
        ));
    }
    let store = ArtifactDir::new(&cfg.paths.artifact_dir);
    let start = Instant::now();
    let maps = store.load_phase1(cfg)?;
    let t_load = seconds(start);

    let model = WaveModel::new(cfg.model.clone())?;
    let prior = EllipticPrior::new(model.grid(), cfg.prior)?;
    let m_source = cfg
        .resolved_source()
        .evaluate(model.grid(), model.n_time(), model.data_dt());
    let d_source = model.simulate_p2o(&m_source)?;
    let (noise, floored) = NoiseModel::calibrate(&d_source, cfg.noise_level)?;
    if floored {
        log::warn!("some sensors see no signal from the configured source; their noise variance was floored");
    }

    let start = Instant::now();
    let art = PosteriorArtifacts::build(maps, prior, noise, &m_prior(cfg, &model))?;
    let t_build = seconds(start);
    store.save_phase2(cfg, &art)?;

    let diag: Vec<f64> = art.k_chol.diagonal().iter().copied().collect();
    let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| {
        (lo.min(*v), hi.max(*v))
    });
    println!(
        "K is {n} x {n}; diag(L) ranges over [{lo:.6e}, {hi:.6e}], ratio {:.3e}",
        hi / lo,
        n = diag.len()
    );
    println!(
        "Q is {} x {}; QoI covariance is {} x {}",
        art.d2q.nrows(),
        art.d2q.ncols(),
        art.qoi_cov.nrows(),
        art.qoi_cov.ncols()
    );
    println!("timings: load {t_load:.3} s, factorize {t_build:.3} s");
    Ok(())
}

pub fn synth(cfg: &RunConfig, noise_level: Option<f64>, out: &Path) -> CliResult<()> {
    let level = noise_level.unwrap_or(cfg.noise_level);
    if !(level >= 0.0 && level.is_finite()) {
        return Err(CliError::Usage(format!(
            "noise level must be nonnegative, got {level}"
        )));
    }
    let model = WaveModel::new(cfg.model.clone())?;
    let data = synth_data(&model, &cfg.resolved_source(), level, cfg.sub_seed("noise"))?;
    create_dir(out)?;
    let obs = &cfg.model.observation;
    table::write_traces(&out.join("d_obs.csv"), &data.d_obs, &obs.sensor_indices)?;
    table::write_traces(&out.join("d_true.csv"), &data.d_true, &obs.sensor_indices)?;
    let q_true = data.q_true.clone();
    let q_true = SpaceTimeField::new(
        q_true.n_space(),
        q_true.n_time(),
        obs.qoi_dt(),
        q_true.into_values(),
    )?;
    table::write_traces(&out.join("q_true.csv"), &q_true, &obs.qoi_indices)?;
    write_field(&out.join("m_true.d2qm"), &data.m_true)?;
    write_field(&out.join("d_obs.d2qm"), &data.d_obs)?;
    println!(
        "synthesized {} sensors x {} steps at noise level {level} into {}",
        data.d_obs.n_space(),
        data.d_obs.n_time(),
        out.display()
    );
    Ok(())
}

fn read_data(cfg: &RunConfig, path: &Path) -> CliResult<SpaceTimeField> {
    let obs = &cfg.model.observation;
    let field = if path.extension().is_some_and(|e| e == "d2qm") {
        read_field(path, obs.data_dt)?
    } else {
        table::read_traces(path, &obs.sensor_indices, obs.data_dt)?
    };
    if field.n_space() != obs.n_sensors() || field.n_time() != obs.n_time {
        return Err(CliError::Usage(format!(
            "{}: expected {} sensors x {} steps, found {} x {}",
            path.display(),
            obs.n_sensors(),
            obs.n_time,
            field.n_space(),
            field.n_time()
        )));
    }
    Ok(field)
}

#[derive(Serialize)]
struct HessianComparison {
    matrix_free_march_pair_s: f64,
    fft_matvec_pair_s: f64,
    online_s: f64,
}

#[derive(Serialize)]
struct InferReport {
    timings: Timings,
    total_s: f64,
    weighted_misfit: f64,
    hessian_matvec: HessianComparison,
    metrics: Option<pipeline::ErrorMetrics>,
    oracle_map_rel_diff: Option<f64>,
}

pub struct InferArgs<'a> {
    pub data: &'a Path,
    pub truth: Option<&'a Path>,
    pub oracle: bool,
    pub out: &'a Path,
}

pub fn infer(cfg: &RunConfig, args: InferArgs<'_>) -> CliResult<()> {
    let d_obs = read_data(cfg, args.data)?;
    let store = ArtifactDir::new(&cfg.paths.artifact_dir);
    let start = Instant::now();
    let art = store.load_posterior(cfg)?;
    let t_load = seconds(start);

    let result = run_online(&art, &d_obs, cfg.credible_level)?;
    let mut timings = Timings::default();
    timings.0.push(("load_artifacts".into(), t_load));
    timings.0.extend(result.timings.0.iter().cloned());
    let online = result.timings.total();

    let model = WaveModel::new(cfg.model.clone())?;
    let probe = &result.m_map;
    let start = Instant::now();
    let pair = model.simulate_p2o(probe)?;
    model.simulate_p2o_transpose(&pair)?;
    let t_march = seconds(start);
    let start = Instant::now();
    let pair = art.maps.p2o.matvec(probe)?;
    art.maps.p2o.adjoint_matvec(&pair)?;
    let t_fft = seconds(start);

    let metrics = match args.truth {
        Some(dir) => {
            let m_true = read_field(&dir.join("m_true.d2qm"), cfg.model.observation.data_dt)?;
            let q_true = model.simulate_p2q(&m_true)?;
            let q_map = SpaceTimeField::new(
                result.q_map.n_space(),
                result.q_map.n_time(),
                q_true.dt(),
                result.q_map.values().to_vec(),
            )?;
            Some(relative_errors(
                &m_true,
                &result.m_map,
                &q_true,
                &q_map,
                &art.maps.p2o,
            )?)
        }
        None => None,
    };

    let oracle_map_rel_diff = if args.oracle {
        let prior = EllipticPrior::new(model.grid(), cfg.prior)?;
        let dense = DenseOracle::build(&model, &prior, &art.noise)?;
        let m_dense = dense.map_point(d_obs.values(), m_prior(cfg, &model).values());
        Some(oracle::rel(result.m_map.values(), m_dense.as_slice()))
    } else {
        None
    };

    create_dir(args.out)?;
    let obs = &cfg.model.observation;
    table::write_predictions(
        &args.out.join("q_map.csv"),
        &result.q_map,
        &result.credible_lo,
        &result.credible_hi,
        &obs.qoi_indices,
        obs.qoi_dt(),
    )?;
    write_field(&args.out.join("m_map.d2qm"), &result.m_map)?;
    let report = InferReport {
        total_s: timings.total(),
        timings,
        weighted_misfit: result.weighted_misfit,
        hessian_matvec: HessianComparison {
            matrix_free_march_pair_s: t_march,
            fft_matvec_pair_s: t_fft,
            online_s: online,
        },
        metrics,
        oracle_map_rel_diff,
    };
    write_json(&args.out.join("timings.json"), &report)?;

    println!("{:<20} {:>12}", "stage", "seconds");
    for (stage, t) in &report.timings.0 {
        println!("{stage:<20} {t:>12.6}");
    }
    println!(
        "{:<20} {:>12} {:>12} {:>12}",
        "Hessian matvec", "matrix-free", "FFT path", "online"
    );
    println!("{:<20} {t_march:>12.6} {t_fft:>12.6} {online:>12.6}", "");
    println!("weighted RMS misfit {:.4}", result.weighted_misfit);
    if let Some(m) = metrics {
        println!(
            "relative errors: parameter {:.4}, QoI {:.4}, reconstruction {:.4}, displacement {:.4}",
            m.param_err, m.qoi_err, m.reconstruction_err, m.displacement_err
        );
    }
    if let Some(d) = oracle_map_rel_diff {
        println!("dense oracle MAP relative difference {d:.3e}");
    }
    Ok(())
}

pub fn predict(cfg: &RunConfig, data: &Path, out: &Path) -> CliResult<()> {
    let d_obs = read_data(cfg, data)?;
    let store = ArtifactDir::new(&cfg.paths.artifact_dir);
    let mut timings = Timings::default();
    let predictor = timings.record("load_artifacts", || store.load_predictor(cfg))?;
    let (q, lo, hi) = timings.record("predict_qoi", || {
        predict_only(&predictor, &d_obs, cfg.credible_level)
    })?;
    create_dir(out)?;
    let obs = &cfg.model.observation;
    table::write_predictions(
        &out.join("q_map.csv"),
        &q,
        &lo,
        &hi,
        &obs.qoi_indices,
        obs.qoi_dt(),
    )?;
    write_json(&out.join("timings.json"), &timings)?;
    for (stage, t) in &timings.0 {
        println!("{stage:<20} {t:>12.6}");
    }
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    repeats: usize,
    march_matvec_s: f64,
    fft_matvec_s: f64,
    march_pair_s: f64,
    posterior_cov_matvec_s: f64,
    online_infer_predict_s: f64,
    fft_speedup_over_march: f64,
    online_speedup_over_march_pair: f64,
    online_marches: u64,
    online_prior_factorizations: u64,
}

pub fn bench(cfg: &RunConfig, repeats: usize, out: &Path) -> CliResult<()> {
    if repeats == 0 {
        return Err(CliError::Usage("--repeats must be at least 1".into()));
    }
    let store = ArtifactDir::new(&cfg.paths.artifact_dir);
    let art = store.load_posterior(cfg)?;
    let model = WaveModel::new(cfg.model.clone())?;
    let m = art
        .prior
        .sample(model.n_time(), model.data_dt(), cfg.sub_seed("bench"));
    let d = model.simulate_p2o(&m)?;

    let march = time_median(repeats, || model.simulate_p2o(&m))?;
    let fft = time_median(repeats, || art.maps.p2o.matvec(&m))?;
    let pair = time_median(repeats, || {
        model.simulate_p2o_transpose(&model.simulate_p2o(&m)?)
    })?;
    let cov = time_median(repeats, || art.posterior_cov_matvec(&m))?;

    let marches = model.counters();
    let factorizations = factorization_count();
    let online = time_median(repeats.max(5), || {
        art.infer_map(&d)?;
        art.predict_qoi(&d)
    })?;
    let report = BenchReport {
        repeats,
        march_matvec_s: march,
        fft_matvec_s: fft,
        march_pair_s: pair,
        posterior_cov_matvec_s: cov,
        online_infer_predict_s: online,
        fft_speedup_over_march: march / fft,
        online_speedup_over_march_pair: pair / online,
        online_marches: {
            let used = model.counters() - marches;
            used.forward_marches + used.transposed_marches
        },
        online_prior_factorizations: factorization_count() - factorizations,
    };
    create_dir(out)?;
    write_json(&out.join("bench.json"), &report)?;
    println!("{:<28} {:>12}", "operation", "median s");
    for (name, t) in [
        ("F matvec (time march)", march),
        ("F matvec (FFT)", fft),
        ("Hessian march pair", pair),
        ("posterior covariance matvec", cov),
        ("online infer + predict", online),
    ] {
        println!("{name:<28} {t:>12.6}");
    }
    println!(
        "FFT speedup over march: {:.1}x",
        report.fft_speedup_over_march
    );
    println!(
        "online speedup over march pair: {:.1}x",
        report.online_speedup_over_march_pair
    );
    Ok(())
}

pub fn spectrum(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let store = ArtifactDir::new(&cfg.paths.artifact_dir);
    let maps = store.load_phase1(cfg)?;
    let s = maps.p2o.singular_spectrum(u128::from(cfg.dense_cap))?;
    if s.is_empty() {
        return Err(CliError::Usage("the observation map is empty".into()));
    }
    create_dir(out)?;
    let path = out.join("spectrum.csv");
    let mut w = csv::Writer::from_path(&path).map_err(|source| CliError::Csv {
        path: path.clone(),
        source,
    })?;
    let s0 = s[0];
    let csv_err = |source| CliError::Csv {
        path: path.clone(),
        source,
    };
    w.write_record(["index", "sigma", "sigma_sq_ratio"])
        .map_err(csv_err)?;
    for (i, v) in s.iter().enumerate() {
        let ratio = if s0 > 0.0 { (v / s0).powi(2) } else { 0.0 };
        w.write_record([i.to_string(), format!("{v:e}"), format!("{ratio:e}")])
            .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Io {
        path: path.clone(),
        source: e,
    })?;
    let k = ((0.9 * s.len() as f64).ceil() as usize).max(1);
    let decay = if s0 > 0.0 {
        (s[k - 1] / s0).powi(2)
    } else {
        0.0
    };
    println!(
        "{} singular values; sigma_1 = {s0:.4e}; sigma^2 ratio at rank {k}: {decay:.3e}",
        s.len()
    );
    println!("written to {}", path.display());
    Ok(())
}

pub fn oracle_check(cfg: &RunConfig, out: &Path) -> CliResult<()> {
    let level = if cfg.noise_level > 0.0 {
        cfg.noise_level
    } else {
        0.04
    };
    let checks = oracle::run_suite(&cfg.model, &cfg.prior, level, cfg.sub_seed("oracle"))?;
    create_dir(out)?;
    write_json(&out.join("oracle.json"), &checks)?;
    let mut failed = 0;
    for c in &checks {
        let tag = if c.passed() { "PASS" } else { "FAIL" };
        failed += usize::from(!c.passed());
        println!(
            "[{tag}] {:<28} {:.3e} (tolerance {:.0e})",
            c.name, c.error, c.tolerance
        );
    }
    if failed > 0 {
        return Err(CliError::OracleFailed(failed));
    }
    Ok(())
}

/// Default output directory for a command.
pub fn output_dir(cfg: &RunConfig, out: Option<PathBuf>) -> PathBuf {
    out.unwrap_or_else(|| cfg.paths.output_dir.clone())
}

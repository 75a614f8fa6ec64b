//! Shared fixtures for the benchmarks.

use lti_twin::assembly::Phase1Maps;
use lti_twin::bayes::PosteriorArtifacts;
use lti_twin::pipeline::synth_data;
use lti_twin::prior::EllipticPrior;
use lti_twin::wave::WaveModel;
use lti_twin::{RunConfig, SpaceTimeField};

/// A fully factorized posterior with one synthetic data set.
pub struct Fixture {
    pub model: WaveModel,
    pub art: PosteriorArtifacts,
    pub m: SpaceTimeField,
    pub d_obs: SpaceTimeField,
}

impl Fixture {
    pub fn new(cfg: &RunConfig) -> Self {
        let model = WaveModel::new(cfg.model.clone()).expect("valid model");
        let prior = EllipticPrior::new(model.grid(), cfg.prior).expect("valid prior");
        let maps = Phase1Maps::assemble(&model, &prior).expect("assembly");
        let data = synth_data(
            &model,
            &cfg.resolved_source(),
            cfg.noise_level,
            cfg.sub_seed("noise"),
        )
        .expect("synthetic data");
        let m_prior = cfg
            .prior
            .mean_field(model.n_param(), model.n_time(), model.data_dt());
        let art =
            PosteriorArtifacts::build(maps, prior, data.noise, &m_prior).expect("factorization");
        Self {
            model,
            art,
            m: data.m_true,
            d_obs: data.d_obs,
        }
    }

    pub fn desk() -> Self {
        Self::new(&RunConfig::desk())
    }

    pub fn tiny() -> Self {
        Self::new(&RunConfig::tiny())
    }
}

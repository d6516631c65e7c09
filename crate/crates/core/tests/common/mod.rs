#![allow(dead_code)]

use std::sync::OnceLock;

use voltvar_core::feeder::FeederModel;
use voltvar_core::harness::{train_estimator, TrainConfig, TrainedModel};
use voltvar_core::profiles::Profiles;
use voltvar_core::synth::{synthetic_profiles, test_feeder, ProfileSpec};

pub struct Fixture {
    pub model: FeederModel,
    pub history: Profiles,
    pub trained: TrainedModel,
}

pub fn fixture() -> &'static Fixture {
    static F: OnceLock<Fixture> = OnceLock::new();
    F.get_or_init(|| {
        let model = test_feeder();
        let history = synthetic_profiles(&model, &ProfileSpec::history(30, 11));
        let trained = train_estimator(&model, &history, &TrainConfig::default(), None).expect("training");
        Fixture { model, history, trained }
    })
}

pub mod oracle;

//! Fixtures shared by the benchmarks.

use carbon_core::garch::simulate_garch;
use carbon_core::harness::PreparedPanel;
use carbon_core::rng::child_rng;
use carbon_core::rnn::Sample;
use carbon_core::synth::{synthetic_panel, SynthConfig};
use carbon_core::{
    FeatureSet, GarchParams, GarchSpec, ModelFamily, RollConfig, TrainParams, VariableCode,
};

/// GARCH(1,1) returns with unit-scale persistence 0.95.
pub fn garch_returns(n: usize, seed: u64) -> Vec<f64> {
    let params = GarchParams::garch11(0.0, 0.05, 0.10, 0.85);
    simulate_garch(&params, n, 500, &mut child_rng(seed, 0xbe, 0)).expect("simulate")
}

/// Windows of a smooth deterministic signal with a one-step-ahead target.
pub fn training_samples(count: usize, n1: usize, input_dim: usize) -> Vec<Sample> {
    let value = |t: usize, k: usize| ((t as f64) * 0.13 + k as f64).sin();
    (0..count)
        .map(|i| Sample {
            window: (0..n1)
                .map(|s| (0..input_dim).map(|k| value(i + s, k)).collect())
                .collect(),
            target: value(i + n1, 0),
        })
        .collect()
}

/// Small rolling study: 4 inputs, 260 days, GARCH window 60, 30-sample training set.
pub struct RollingFixture {
    pub prepared: PreparedPanel,
    pub config: RollConfig,
    pub features: FeatureSet,
    pub params: TrainParams,
}

pub fn rolling_fixture(family: ModelFamily) -> RollingFixture {
    let panel = synthetic_panel(&SynthConfig {
        days: 260,
        seed: 9,
        ..SynthConfig::default()
    })
    .expect("synthetic panel");
    let codes = vec![
        VariableCode::Shea,
        VariableCode::Sza,
        VariableCode::Tpfqh,
        VariableCode::Hs300,
    ];
    let config = RollConfig {
        family,
        n1: 5,
        n: 30,
        garch_window: 60,
        ..RollConfig::default()
    };
    let prepared =
        PreparedPanel::new(panel, 60, &GarchSpec::default(), family.uses_garch()).expect("prepare");
    RollingFixture {
        prepared,
        config,
        features: FeatureSet::new(codes).expect("features"),
        params: TrainParams {
            hidden_dim: 8,
            epochs: 5,
            seed: 1,
            ..TrainParams::default()
        },
    }
}

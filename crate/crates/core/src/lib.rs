//! Carbon allowance price forecasting: GARCH volatility models, hand-written
//! GRU/LSTM networks, a rolling retrain-and-predict harness, forecast error
//! metrics and an iceberg-order purchasing backtest.

pub mod data;
pub mod error;
pub mod garch;
pub mod harness;
pub mod metrics;
pub mod optim;
pub mod rng;
pub mod rnn;
pub mod stats;
pub mod strategy;
pub mod synth;

pub use data::{ObservationPanel, VariableCode};
pub use error::{Error, ErrorKind, Result};
pub use garch::{GarchFit, GarchParams, GarchSpec};
pub use harness::{FeatureSet, ForecastRecord, ModelFamily, RollConfig, Segment, TrainParams};
pub use rnn::{CellKind, RnnModel, RnnSpec, RnnWeights};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

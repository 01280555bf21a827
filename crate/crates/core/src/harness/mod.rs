//! Rolling one-day-ahead retrain-and-predict loop for the six model families.

mod records;
mod search;

use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use rayon::prelude::*;

use crate::data::{ObservationPanel, VariableCode};
use crate::error::{Error, Result};
use crate::garch::{rolling_garch_price_forecast_through_end, GarchSpec, DEFAULT_ROLLING_WINDOW};
use crate::rng::derive_seed;
use crate::rnn::{self, CellKind, RnnSpec, RnnWeights, Sample};

pub use records::{
    load_forecasts, read_forecasts, save_forecasts, write_forecasts, FORECAST_HEADER,
};
pub use search::{
    grid_search, recursive_feature_elimination, EliminationStep, GridEvaluation, GridSearchResult,
    HyperGrid, RfeResult,
};

const ROLL_STREAM: u64 = 0x7011;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ModelFamily {
    Garch,
    Ma,
    Gru,
    Lstm,
    GarchGru,
    GarchLstm,
}

impl ModelFamily {
    pub const ALL: [ModelFamily; 6] = [
        ModelFamily::Garch,
        ModelFamily::Ma,
        ModelFamily::Gru,
        ModelFamily::Lstm,
        ModelFamily::GarchGru,
        ModelFamily::GarchLstm,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelFamily::Garch => "GARCH",
            ModelFamily::Ma => "MA",
            ModelFamily::Gru => "GRU",
            ModelFamily::Lstm => "LSTM",
            ModelFamily::GarchGru => "GARCH-GRU",
            ModelFamily::GarchLstm => "GARCH-LSTM",
        }
    }

    /// Hybrids feed the GARCH price forecast to a recurrent network.
    pub fn is_hybrid(self) -> bool {
        matches!(self, ModelFamily::GarchGru | ModelFamily::GarchLstm)
    }

    /// Families that need the rolling GARCH forecast column.
    pub fn uses_garch(self) -> bool {
        self == ModelFamily::Garch || self.is_hybrid()
    }

    pub fn cell(self) -> Option<CellKind> {
        match self {
            ModelFamily::Gru | ModelFamily::GarchGru => Some(CellKind::Gru),
            ModelFamily::Lstm | ModelFamily::GarchLstm => Some(CellKind::Lstm),
            ModelFamily::Garch | ModelFamily::Ma => None,
        }
    }

    pub fn is_neural(self) -> bool {
        self.cell().is_some()
    }
}

impl fmt::Display for ModelFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('_', "-");
        ModelFamily::ALL
            .into_iter()
            .find(|m| m.as_str() == key)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown model family `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Segment {
    Tuning,
    Implementation,
}

impl Segment {
    pub fn as_str(self) -> &'static str {
        match self {
            Segment::Tuning => "tuning",
            Segment::Implementation => "implementation",
        }
    }
}

impl FromStr for Segment {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "tuning" => Ok(Segment::Tuning),
            "implementation" => Ok(Segment::Implementation),
            other => Err(Error::Schema(format!("unknown segment `{other}`"))),
        }
    }
}

/// How the GARCH burn-in rows interact with families that do not need them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BurnIn {
    /// Each family starts rolling as soon as its own inputs exist.
    #[default]
    Respect,
    /// Every family skips the GARCH burn-in rows, so all families forecast
    /// the same dates.
    Shared,
}

impl FromStr for BurnIn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "respect" => Ok(BurnIn::Respect),
            "shared" => Ok(BurnIn::Shared),
            other => Err(Error::InvalidArgument(format!(
                "unknown burn-in policy `{other}`"
            ))),
        }
    }
}

/// Which rolls to actually compute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RollScope {
    #[default]
    All,
    Tuning,
    Implementation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollConfig {
    pub family: ModelFamily,
    /// Sliding input window, in days.
    pub n1: usize,
    /// Days of history per roll; each roll trains on `n - n1` samples.
    pub n: usize,
    /// Fraction of rolls labelled tuning.
    pub split: f64,
    pub garch_window: usize,
    pub garch_spec: GarchSpec,
    pub burn_in: BurnIn,
    /// Start each roll from the previous roll's weights (forces serial rolls).
    pub warm_start: bool,
    pub scope: RollScope,
}

impl Default for RollConfig {
    fn default() -> Self {
        Self {
            family: ModelFamily::GarchGru,
            n1: 5,
            n: 60,
            split: 0.7,
            garch_window: DEFAULT_ROLLING_WINDOW,
            garch_spec: GarchSpec::default(),
            burn_in: BurnIn::Respect,
            warm_start: false,
            scope: RollScope::All,
        }
    }
}

impl RollConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n1 == 0 {
            return Err(Error::InvalidArgument(
                "window n1 must be at least 1".into(),
            ));
        }
        if self.n <= self.n1 {
            return Err(Error::InvalidArgument(format!(
                "roll length n = {} must exceed the window n1 = {}",
                self.n, self.n1
            )));
        }
        if !(self.split > 0.0 && self.split < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "split {} outside (0, 1)",
                self.split
            )));
        }
        if self.garch_window < 2 {
            return Err(Error::InvalidArgument(
                "GARCH window must be at least 2".into(),
            ));
        }
        self.garch_spec.validate()
    }

    /// The window label reported with each record.
    pub fn record_window(&self) -> usize {
        match self.family {
            ModelFamily::Garch => self.garch_window,
            _ => self.n1,
        }
    }
}

/// Recurrent-network hyperparameters shared by every roll.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            dropout: 0.2,
            learning_rate: 0.01,
            epochs: 150,
            seed: 0,
        }
    }
}

impl TrainParams {
    pub fn rnn_spec(&self, cell: CellKind, input_dim: usize, seed: u64) -> RnnSpec {
        RnnSpec {
            cell,
            input_dim,
            hidden_dim: self.hidden_dim,
            dropout: self.dropout,
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            seed,
        }
    }
}

/// Ordered network inputs. The target is always next-day SHEA.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeatureSet {
    pub inputs: Vec<VariableCode>,
}

pub const DEFAULT_ELIMINATED: [VariableCode; 4] = [
    VariableCode::Fob,
    VariableCode::Wired,
    VariableCode::Szgy,
    VariableCode::Pm,
];

impl FeatureSet {
    pub fn new(inputs: Vec<VariableCode>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("feature set is empty".into()));
        }
        for (i, c) in inputs.iter().enumerate() {
            if inputs[..i].contains(c) {
                return Err(Error::InvalidArgument(format!("feature {c} listed twice")));
            }
        }
        if inputs.contains(&VariableCode::Shea) && inputs.contains(&VariableCode::Gshea) {
            return Err(Error::InvalidArgument(
                "SHEA and GSHEA cannot both be inputs".into(),
            ));
        }
        Ok(Self { inputs })
    }

    pub fn all_raw() -> Self {
        Self {
            inputs: VariableCode::raw().to_vec(),
        }
    }

    /// The 19 variables kept after elimination.
    pub fn default_selected() -> Self {
        Self {
            inputs: VariableCode::raw()
                .iter()
                .copied()
                .filter(|c| !DEFAULT_ELIMINATED.contains(c))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Hybrids see the GARCH forecast in place of the SHEA close; the other
    /// families see the close.
    pub fn for_family(&self, family: ModelFamily) -> FeatureSet {
        let (from, to) = if family.is_hybrid() {
            (VariableCode::Shea, VariableCode::Gshea)
        } else {
            (VariableCode::Gshea, VariableCode::Shea)
        };
        FeatureSet {
            inputs: self
                .inputs
                .iter()
                .map(|&c| if c == from { to } else { c })
                .collect(),
        }
    }

    /// Undo [`FeatureSet::for_family`] so results name raw codes.
    pub fn as_raw(&self) -> FeatureSet {
        FeatureSet {
            inputs: self
                .inputs
                .iter()
                .map(|&c| {
                    if c == VariableCode::Gshea {
                        VariableCode::Shea
                    } else {
                        c
                    }
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub model: ModelFamily,
    pub window: usize,
    pub date: NaiveDate,
    pub pv: f64,
    pub rv: f64,
    pub segment: Segment,
}

/// Row arithmetic of one rolling run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollArithmetic {
    pub panel_rows: usize,
    /// Leading rows skipped before the first roll's history (GARCH burn-in).
    pub burn_in_rows: usize,
    pub history: usize,
    pub rolls: usize,
    pub tuning_rolls: usize,
    pub implementation_rolls: usize,
}

impl fmt::Display for RollArithmetic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} rows - {} burn-in - {} history = {} rolls ({} tuning, {} implementation)",
            self.panel_rows,
            self.burn_in_rows,
            self.history,
            self.rolls,
            self.tuning_rolls,
            self.implementation_rolls
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollOutput {
    pub records: Vec<ForecastRecord>,
    pub arithmetic: RollArithmetic,
}

/// Panel plus, when requested, the lead-aligned rolling GARCH forecast.
///
/// Row `r` of the augmented panel carries the forecast for the following
/// trading day made from prices up to and including `r`, so it starts at
/// base row `garch_window - 1`.
#[derive(Debug, Clone)]
pub struct PreparedPanel {
    base: ObservationPanel,
    garch_window: usize,
    garch_spec: GarchSpec,
    augmented: Option<ObservationPanel>,
}

impl PreparedPanel {
    pub fn new(
        panel: ObservationPanel,
        garch_window: usize,
        garch_spec: &GarchSpec,
        with_gshea: bool,
    ) -> Result<Self> {
        panel.ensure_clean()?;
        panel.column(VariableCode::Shea)?;
        let augmented = if with_gshea {
            let prices = panel.column(VariableCode::Shea)?;
            let gshea = rolling_garch_price_forecast_through_end(prices, garch_window, garch_spec)?;
            let mut sub = panel.slice_rows(garch_window - 1, panel.len());
            sub.remove_column(VariableCode::Gshea);
            sub.insert_column(VariableCode::Gshea, gshea)?;
            log::info!(
                "GSHEA burn-in: {} rows, {} rows carry the GARCH forecast",
                garch_window - 1,
                sub.len()
            );
            Some(sub)
        } else {
            None
        };
        Ok(Self {
            base: panel,
            garch_window,
            garch_spec: *garch_spec,
            augmented,
        })
    }

    /// Prepare for a single family.
    pub fn for_config(panel: ObservationPanel, config: &RollConfig) -> Result<Self> {
        Self::new(
            panel,
            config.garch_window,
            &config.garch_spec,
            config.family.uses_garch(),
        )
    }

    pub fn base(&self) -> &ObservationPanel {
        &self.base
    }

    pub fn augmented(&self) -> Option<&ObservationPanel> {
        self.augmented.as_ref()
    }

    pub fn garch_window(&self) -> usize {
        self.garch_window
    }

    fn check(&self, config: &RollConfig) -> Result<()> {
        if config.garch_window != self.garch_window || config.garch_spec != self.garch_spec {
            return Err(Error::InvalidArgument(
                "prepared panel was built with different GARCH settings".into(),
            ));
        }
        if config.family.uses_garch() && self.augmented.is_none() {
            return Err(Error::InvalidArgument(format!(
                "{} needs a panel prepared with the GARCH forecast",
                config.family
            )));
        }
        Ok(())
    }
}

/// Windowed supervised samples: sample `k` holds rows `k..k+n1` of the
/// feature columns and the SHEA close of row `k+n1`.
pub fn assemble_samples(
    panel: &ObservationPanel,
    features: &FeatureSet,
    n1: usize,
) -> Result<Vec<Sample>> {
    if n1 == 0 {
        return Err(Error::InvalidArgument(
            "window n1 must be at least 1".into(),
        ));
    }
    let rows = feature_rows(panel, features)?;
    let target = panel.column(VariableCode::Shea)?;
    if panel.len() <= n1 {
        return Err(Error::InsufficientData(format!(
            "window {n1} needs more than {n1} rows, panel has {}",
            panel.len()
        )));
    }
    Ok((0..panel.len() - n1)
        .map(|k| Sample {
            window: rows[k..k + n1].to_vec(),
            target: target[k + n1],
        })
        .collect())
}

fn feature_rows(panel: &ObservationPanel, features: &FeatureSet) -> Result<Vec<Vec<f64>>> {
    let columns = features
        .inputs
        .iter()
        .map(|&c| panel.column(c))
        .collect::<Result<Vec<_>>>()?;
    Ok((0..panel.len())
        .map(|r| columns.iter().map(|c| c[r]).collect())
        .collect())
}

/// Moving-average one-step forecasts. Element `i` is the mean of
/// `prices[i..i+window]`, i.e. the forecast for day `i + window`; the last
/// element forecasts the day after the series ends.
pub fn moving_average_forecast(prices: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::InvalidArgument(
            "moving-average window must be at least 1".into(),
        ));
    }
    if window > prices.len() {
        return Err(Error::InsufficientData(format!(
            "moving-average window {window} exceeds series length {}",
            prices.len()
        )));
    }
    Ok(prices
        .windows(window)
        .map(|w| w.iter().sum::<f64>() / window as f64)
        .collect())
}

/// Run every roll of `config.family` over a freshly prepared panel.
pub fn rolling_run(
    panel: &ObservationPanel,
    config: &RollConfig,
    features: &FeatureSet,
    params: &TrainParams,
) -> Result<RollOutput> {
    config.validate()?;
    let prepared = PreparedPanel::for_config(panel.clone(), config)?;
    rolling_run_prepared(&prepared, config, features, params)
}

/// Days (as rows of the working panel) at which a family forecasts.
struct Plan<'a> {
    work: &'a ObservationPanel,
    first_day: usize,
    arithmetic: RollArithmetic,
}

fn plan<'a>(prepared: &'a PreparedPanel, config: &RollConfig) -> Result<Plan<'a>> {
    let (work, burn_in_rows) = match (&prepared.augmented, config.family.uses_garch()) {
        (Some(sub), true) => (sub, prepared.garch_window - 1),
        _ => (&prepared.base, 0),
    };
    // Shared burn-in: families on the base panel skip the same leading rows.
    let skip = match config.burn_in {
        BurnIn::Shared if !config.family.uses_garch() => prepared.garch_window - 1,
        _ => 0,
    };
    let first_day = skip + config.n;
    let required = burn_in_rows + first_day + 2;
    if work.len() < first_day + 2 {
        return Err(Error::InsufficientData(format!(
            "{} with n = {} and GARCH window {} needs at least {required} rows, panel has {}",
            config.family,
            config.n,
            prepared.garch_window,
            prepared.base.len()
        )));
    }
    let rolls = work.len() - first_day;
    let tuning_rolls = (config.split * rolls as f64).floor() as usize;
    if tuning_rolls == 0 || tuning_rolls == rolls {
        return Err(Error::InsufficientData(format!(
            "{rolls} rolls with split {} leave an empty segment; need at least {required} rows",
            config.split
        )));
    }
    Ok(Plan {
        work,
        first_day,
        arithmetic: RollArithmetic {
            panel_rows: prepared.base.len(),
            burn_in_rows: burn_in_rows + skip,
            history: config.n,
            rolls,
            tuning_rolls,
            implementation_rolls: rolls - tuning_rolls,
        },
    })
}

/// Roll count and segment sizes without running anything.
pub fn roll_arithmetic(prepared: &PreparedPanel, config: &RollConfig) -> Result<RollArithmetic> {
    config.validate()?;
    prepared.check(config)?;
    Ok(plan(prepared, config)?.arithmetic)
}

/// Run the rolls selected by `config.scope` on an already prepared panel.
pub fn rolling_run_prepared(
    prepared: &PreparedPanel,
    config: &RollConfig,
    features: &FeatureSet,
    params: &TrainParams,
) -> Result<RollOutput> {
    config.validate()?;
    prepared.check(config)?;
    let plan = plan(prepared, config)?;
    let a = plan.arithmetic;
    log::info!("{} n1={}: {a}", config.family, config.n1);
    let roll_range = match config.scope {
        RollScope::All => 0..a.rolls,
        RollScope::Tuning => 0..a.tuning_rolls,
        RollScope::Implementation => a.tuning_rolls..a.rolls,
    };
    let work = plan.work;
    let shea = work.column(VariableCode::Shea)?;
    let window = config.record_window();
    let record = |i: usize, pv: f64| {
        let d = plan.first_day + i;
        ForecastRecord {
            model: config.family,
            window,
            date: work.dates()[d],
            pv,
            rv: shea[d],
            segment: if i < a.tuning_rolls {
                Segment::Tuning
            } else {
                Segment::Implementation
            },
        }
    };

    let records = match config.family {
        ModelFamily::Garch => {
            let gshea = work.column(VariableCode::Gshea)?;
            roll_range
                .map(|i| record(i, gshea[plan.first_day + i - 1]))
                .collect()
        }
        ModelFamily::Ma => {
            let n1 = config.n1;
            roll_range
                .map(|i| {
                    let d = plan.first_day + i;
                    record(i, shea[d - n1..d].iter().sum::<f64>() / n1 as f64)
                })
                .collect()
        }
        family => {
            let cell = family.cell().expect("neural family");
            let inputs = features.for_family(family);
            FeatureSet::new(inputs.inputs.clone())?;
            let rows = feature_rows(work, &inputs)?;
            let ctx = NeuralRoll {
                rows: &rows,
                target: shea,
                n: config.n,
                n1: config.n1,
                first_day: plan.first_day,
                cell,
                params,
            };
            if config.warm_start {
                let mut previous: Option<RnnWeights> = None;
                let mut out = Vec::with_capacity(roll_range.len());
                for i in roll_range {
                    let (pv, w) = ctx.roll(i, previous.as_ref())?;
                    previous = Some(w);
                    out.push(record(i, pv));
                }
                out
            } else {
                roll_range
                    .into_par_iter()
                    .map(|i| ctx.roll(i, None).map(|(pv, _)| record(i, pv)))
                    .collect::<Result<Vec<_>>>()?
            }
        }
    };
    Ok(RollOutput {
        records,
        arithmetic: a,
    })
}

struct NeuralRoll<'a> {
    rows: &'a [Vec<f64>],
    target: &'a [f64],
    n: usize,
    n1: usize,
    first_day: usize,
    cell: CellKind,
    params: &'a TrainParams,
}

impl NeuralRoll<'_> {
    /// Train on the `n - n1` samples whose targets fall in the `n` days before
    /// the forecast day, then predict that day.
    fn roll(&self, i: usize, warm: Option<&RnnWeights>) -> Result<(f64, RnnWeights)> {
        let d = self.first_day + i;
        let samples: Vec<Sample> = (d - self.n..d - self.n1)
            .map(|k| Sample {
                window: self.rows[k..k + self.n1].to_vec(),
                target: self.target[k + self.n1],
            })
            .collect();
        let seed = derive_seed(self.params.seed, ROLL_STREAM, i as u64);
        let spec = self.params.rnn_spec(self.cell, self.rows[0].len(), seed);
        let model = rnn::train_from(&spec, &samples, warm)?;
        let pv = rnn::predict(&model, &self.rows[d - self.n1..d])?;
        Ok((pv, model.weights))
    }
}

pub(crate) fn tuning_mse(records: &[ForecastRecord]) -> f64 {
    let tuning: Vec<&ForecastRecord> = records
        .iter()
        .filter(|r| r.segment == Segment::Tuning)
        .collect();
    let mse = tuning.iter().map(|r| (r.pv - r.rv).powi(2)).sum::<f64>() / tuning.len() as f64;
    if mse.is_finite() {
        mse
    } else {
        f64::INFINITY
    }
}

#[cfg(test)]
mod tests;

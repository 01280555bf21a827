//! Run configuration: one TOML file plus flag overrides, resolved into typed
//! settings before any stage runs.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use carbon_core::harness::{BurnIn, HyperGrid};
use carbon_core::metrics::MetricScope;
use carbon_core::strategy::{
    Denominator, DEFAULT_LOT, DEFAULT_SHORTFALL, DEFAULT_THRESHOLD, DEFAULT_TRIALS,
};
use carbon_core::{FeatureSet, GarchSpec, ModelFamily, RollConfig, TrainParams, VariableCode};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub roll: RollSection,
    pub garch: GarchSection,
    pub rnn: RnnSection,
    pub features: FeatureSection,
    pub rfe: RfeSection,
    pub grid: GridSection,
    pub stats: StatsSection,
    pub evaluation: EvaluationSection,
    pub strategy: StrategySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RollSection {
    pub families: Vec<String>,
    /// Sliding input windows n1; GARCH ignores them.
    pub windows: Vec<usize>,
    pub n: usize,
    pub split: f64,
    pub garch_window: usize,
    pub burn_in: String,
    pub warm_start: bool,
}

impl Default for RollSection {
    fn default() -> Self {
        let r = RollConfig::default();
        Self {
            families: ModelFamily::ALL
                .iter()
                .map(|f| f.as_str().to_string())
                .collect(),
            windows: vec![5, 10, 20],
            n: r.n,
            split: r.split,
            garch_window: r.garch_window,
            burn_in: "respect".into(),
            warm_start: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GarchSection {
    pub p: usize,
    pub q: usize,
    pub ar: usize,
    pub ma: usize,
}

impl Default for GarchSection {
    fn default() -> Self {
        Self {
            p: 1,
            q: 1,
            ar: 0,
            ma: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RnnSection {
    pub hidden_dim: usize,
    pub dropout: f64,
    pub learning_rate: f64,
    pub epochs: usize,
}

impl Default for RnnSection {
    fn default() -> Self {
        let p = TrainParams::default();
        Self {
            hidden_dim: p.hidden_dim,
            dropout: p.dropout,
            learning_rate: p.learning_rate,
            epochs: p.epochs,
        }
    }
}

fn codes(set: &FeatureSet) -> Vec<String> {
    set.inputs.iter().map(|c| c.as_str().to_string()).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureSection {
    /// Network inputs by raw code; hybrids swap SHEA for GSHEA.
    pub inputs: Vec<String>,
}

impl Default for FeatureSection {
    fn default() -> Self {
        Self {
            inputs: codes(&FeatureSet::default_selected()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RfeSection {
    /// When set, the eliminated set replaces `features.inputs`.
    pub enabled: bool,
    pub family: String,
    pub window: usize,
    pub start: Vec<String>,
    pub target: usize,
}

impl Default for RfeSection {
    fn default() -> Self {
        Self {
            enabled: false,
            family: ModelFamily::GarchGru.as_str().into(),
            window: 5,
            start: codes(&FeatureSet::all_raw()),
            target: 19,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// When set, the best combination replaces the `rnn` values.
    pub enabled: bool,
    pub family: String,
    pub window: usize,
    pub dropout: Vec<f64>,
    pub epochs: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for GridSection {
    fn default() -> Self {
        let g = HyperGrid::default();
        Self {
            enabled: false,
            family: ModelFamily::GarchGru.as_str().into(),
            window: 5,
            dropout: g.dropout,
            epochs: g.epochs,
            learning_rate: g.learning_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StatsSection {
    /// ADF lag cap; the length-based default when absent.
    pub adf_max_lag: Option<usize>,
    pub arch_lags: usize,
}

impl Default for StatsSection {
    fn default() -> Self {
        Self {
            adf_max_lag: None,
            arch_lags: carbon_core::stats::ARCH_LM_DEFAULT_LAGS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationSection {
    pub scope: String,
    pub importance: bool,
    pub importance_family: String,
    pub importance_window: usize,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            scope: "implementation".into(),
            importance: true,
            importance_family: ModelFamily::GarchGru.as_str().into(),
            importance_window: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StrategySection {
    /// Window whose forecasts drive the signals (GARCH uses its own); the
    /// smallest run window when absent.
    pub window: Option<usize>,
    pub threshold: f64,
    pub denominator: String,
    pub shortfall: u64,
    pub lot: u64,
    pub trials: usize,
    /// Optional clip of the backtest dates, `YYYY-MM-DD`.
    pub start: Option<String>,
    pub end: Option<String>,
}

impl Default for StrategySection {
    fn default() -> Self {
        Self {
            window: None,
            threshold: DEFAULT_THRESHOLD,
            denominator: "forecast".into(),
            shortfall: DEFAULT_SHORTFALL,
            lot: DEFAULT_LOT,
            trials: DEFAULT_TRIALS,
            start: None,
            end: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text).map_err(|message| CliError::Config {
            path: path.to_path_buf(),
            message,
        })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// The parts of the config that determine outputs, for the manifest.
    pub fn echo(&self) -> RunConfig {
        RunConfig {
            output: None,
            ..self.clone()
        }
    }
}

/// Flag values that override the file; `None` keeps the file value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub families: Option<Vec<String>>,
    pub windows: Option<Vec<usize>>,
    pub n: Option<usize>,
    pub garch_window: Option<usize>,
    pub epochs: Option<usize>,
    pub hidden_dim: Option<usize>,
    pub importance: Option<bool>,
    pub rfe: Option<bool>,
    pub grid: Option<bool>,
    pub threshold: Option<f64>,
    pub denominator: Option<String>,
    pub trials: Option<usize>,
}

impl Overrides {
    pub fn apply(self, config: &mut RunConfig) {
        fn set<T>(slot: &mut T, value: Option<T>) {
            if let Some(v) = value {
                *slot = v;
            }
        }
        if self.input.is_some() {
            config.input = self.input;
        }
        if self.output.is_some() {
            config.output = self.output;
        }
        if self.seed.is_some() {
            config.seed = self.seed;
        }
        set(&mut config.roll.families, self.families);
        set(&mut config.roll.windows, self.windows);
        set(&mut config.roll.n, self.n);
        set(&mut config.roll.garch_window, self.garch_window);
        set(&mut config.rnn.epochs, self.epochs);
        set(&mut config.rnn.hidden_dim, self.hidden_dim);
        set(&mut config.evaluation.importance, self.importance);
        set(&mut config.rfe.enabled, self.rfe);
        set(&mut config.grid.enabled, self.grid);
        set(&mut config.strategy.threshold, self.threshold);
        set(&mut config.strategy.denominator, self.denominator);
        set(&mut config.strategy.trials, self.trials);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfeSettings {
    pub family: ModelFamily,
    pub window: usize,
    pub start: FeatureSet,
    pub target: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSettings {
    pub family: ModelFamily,
    pub window: usize,
    pub grid: HyperGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategySettings {
    pub window: usize,
    pub threshold: f64,
    pub denominator: Denominator,
    pub shortfall: u64,
    pub lot: u64,
    pub trials: usize,
    pub start: Option<NaiveDate>,
    pub end: Option<NaiveDate>,
}

/// A validated configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub input: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub seed: Option<u64>,
    pub families: Vec<ModelFamily>,
    pub windows: Vec<usize>,
    /// Template roll config; family and n1 are set per run.
    pub roll: RollConfig,
    pub params: TrainParams,
    pub features: FeatureSet,
    pub rfe: Option<RfeSettings>,
    pub grid: Option<GridSettings>,
    pub adf_max_lag: Option<usize>,
    pub arch_lags: usize,
    pub metric_scope: MetricScope,
    pub importance: Option<(ModelFamily, usize)>,
    pub strategy: StrategySettings,
    /// The config the settings came from.
    pub source: RunConfig,
}

fn usage<E: std::fmt::Display>(what: &str) -> impl Fn(E) -> CliError + '_ {
    move |e| CliError::Usage(format!("{what}: {e}"))
}

fn family(name: &str) -> CliResult<ModelFamily> {
    ModelFamily::from_str(name).map_err(usage("model family"))
}

fn feature_set(names: &[String], what: &str) -> CliResult<FeatureSet> {
    let codes = names
        .iter()
        .map(|n| VariableCode::from_str(n))
        .collect::<carbon_core::Result<Vec<_>>>()
        .map_err(usage(what))?;
    FeatureSet::new(codes).map_err(usage(what))
}

fn neural(f: ModelFamily, what: &str) -> CliResult<ModelFamily> {
    if f.is_neural() {
        Ok(f)
    } else {
        Err(CliError::Usage(format!(
            "{what} needs a recurrent family, got {f}"
        )))
    }
}

fn window(n1: usize, what: &str) -> CliResult<usize> {
    if n1 == 0 {
        return Err(CliError::Usage(format!("{what} window must be at least 1")));
    }
    Ok(n1)
}

fn date(s: &Option<String>, what: &str) -> CliResult<Option<NaiveDate>> {
    s.as_deref()
        .map(|d| NaiveDate::parse_from_str(d, carbon_core::data::DATE_FORMAT).map_err(usage(what)))
        .transpose()
}

impl Settings {
    pub fn resolve(config: &RunConfig) -> CliResult<Self> {
        let mut families = Vec::new();
        for name in &config.roll.families {
            let f = family(name)?;
            if !families.contains(&f) {
                families.push(f);
            }
        }
        families.sort();
        if families.is_empty() {
            return Err(CliError::Usage("no model families selected".into()));
        }
        let mut windows = config.roll.windows.clone();
        windows.sort_unstable();
        windows.dedup();
        if windows.is_empty() || windows[0] == 0 {
            return Err(CliError::Usage(
                "windows must be a non-empty list of positive sizes".into(),
            ));
        }

        let g = &config.garch;
        let roll = RollConfig {
            family: families[0],
            n1: windows[0],
            n: config.roll.n,
            split: config.roll.split,
            garch_window: config.roll.garch_window,
            garch_spec: GarchSpec::new(g.p, g.q).with_mean(g.ar, g.ma),
            burn_in: BurnIn::from_str(&config.roll.burn_in).map_err(usage("burn_in"))?,
            warm_start: config.roll.warm_start,
            scope: Default::default(),
        };
        for &n1 in &windows {
            RollConfig { n1, ..roll.clone() }
                .validate()
                .map_err(usage("roll"))?;
        }

        let r = &config.rnn;
        let params = TrainParams {
            hidden_dim: r.hidden_dim,
            dropout: r.dropout,
            learning_rate: r.learning_rate,
            epochs: r.epochs,
            seed: config.seed.unwrap_or(0),
        };
        params
            .rnn_spec(carbon_core::CellKind::Gru, 1, 0)
            .validate()
            .map_err(usage("rnn"))?;

        let rfe = if config.rfe.enabled {
            Some(RfeSettings {
                family: neural(family(&config.rfe.family)?, "rfe")?,
                window: window(config.rfe.window, "rfe")?,
                start: feature_set(&config.rfe.start, "rfe.start")?,
                target: config.rfe.target,
            })
        } else {
            None
        };
        let grid = if config.grid.enabled {
            let grid = HyperGrid {
                dropout: config.grid.dropout.clone(),
                epochs: config.grid.epochs.clone(),
                learning_rate: config.grid.learning_rate.clone(),
            };
            if grid.is_empty() {
                return Err(CliError::Usage("grid has an empty axis".into()));
            }
            Some(GridSettings {
                family: neural(family(&config.grid.family)?, "grid")?,
                window: window(config.grid.window, "grid")?,
                grid,
            })
        } else {
            None
        };

        let e = &config.evaluation;
        let importance = if e.importance {
            Some((
                neural(family(&e.importance_family)?, "importance")?,
                window(e.importance_window, "importance")?,
            ))
        } else {
            None
        };

        let s = &config.strategy;
        if s.lot == 0 || s.shortfall == 0 || !s.shortfall.is_multiple_of(s.lot) {
            return Err(CliError::Usage(format!(
                "shortfall {} must be a positive multiple of the lot {}",
                s.shortfall, s.lot
            )));
        }
        if s.trials == 0 {
            return Err(CliError::Usage("strategy trials must be at least 1".into()));
        }
        let strategy_window = s.window.unwrap_or(windows[0]);
        if !windows.contains(&strategy_window) {
            return Err(CliError::Usage(format!(
                "strategy window {strategy_window} is not one of the run windows {windows:?}"
            )));
        }
        let strategy = StrategySettings {
            window: strategy_window,
            threshold: s.threshold,
            denominator: Denominator::from_str(&s.denominator).map_err(usage("denominator"))?,
            shortfall: s.shortfall,
            lot: s.lot,
            trials: s.trials,
            start: date(&s.start, "strategy.start")?,
            end: date(&s.end, "strategy.end")?,
        };

        Ok(Settings {
            input: config.input.clone(),
            output: config.output.clone(),
            seed: config.seed,
            families,
            windows,
            roll,
            params,
            features: feature_set(&config.features.inputs, "features.inputs")?,
            rfe,
            grid,
            adf_max_lag: config.stats.adf_max_lag,
            arch_lags: config.stats.arch_lags,
            metric_scope: MetricScope::from_str(&e.scope).map_err(usage("evaluation.scope"))?,
            importance,
            strategy,
            source: config.clone(),
        })
    }

    /// The input panel; it must exist.
    pub fn input(&self) -> CliResult<&Path> {
        let path = self.input.as_deref().ok_or_else(|| {
            CliError::Usage("no input panel given (--input or `input` in the config)".into())
        })?;
        if !path.is_file() {
            return Err(CliError::Usage(format!(
                "input file {} does not exist",
                path.display()
            )));
        }
        Ok(path)
    }

    pub fn output(&self) -> CliResult<&Path> {
        self.output.as_deref().ok_or_else(|| {
            CliError::Usage("no output directory given (--output or `output` in the config)".into())
        })
    }

    /// Stochastic stages refuse to run without an explicit seed.
    pub fn seed(&self) -> CliResult<u64> {
        self.seed.ok_or_else(|| {
            CliError::Usage("a seed is required (--seed or `seed` in the config)".into())
        })
    }

    /// Roll config for one family and window.
    pub fn roll_for(&self, family: ModelFamily, n1: usize) -> RollConfig {
        RollConfig {
            family,
            n1,
            ..self.roll.clone()
        }
    }

    /// Whether any requested stage needs the rolling GARCH forecast.
    pub fn needs_gshea(&self) -> bool {
        self.families.iter().any(|f| f.uses_garch())
            || self.rfe.as_ref().is_some_and(|r| r.family.uses_garch())
            || self.grid.as_ref().is_some_and(|g| g.family.uses_garch())
            || self.importance.is_some_and(|(f, _)| f.uses_garch())
    }
}

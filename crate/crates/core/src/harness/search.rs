use super::{
    rolling_run_prepared, tuning_mse, FeatureSet, PreparedPanel, RollConfig, RollScope, TrainParams,
};
use crate::data::VariableCode;
use crate::error::{Error, Result};

/// Candidate values for the three tuned hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperGrid {
    pub dropout: Vec<f64>,
    pub epochs: Vec<usize>,
    pub learning_rate: Vec<f64>,
}

impl Default for HyperGrid {
    fn default() -> Self {
        Self {
            dropout: vec![0.1, 0.2, 0.3],
            epochs: vec![50, 150],
            learning_rate: vec![0.001, 0.01],
        }
    }
}

impl HyperGrid {
    pub fn len(&self) -> usize {
        self.dropout.len() * self.epochs.len() * self.learning_rate.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Every combination in tie-break order: dropout, then epochs, then
    /// learning rate, each ascending.
    pub fn combinations(&self) -> Vec<(f64, usize, f64)> {
        let mut d = self.dropout.clone();
        let mut e = self.epochs.clone();
        let mut l = self.learning_rate.clone();
        d.sort_by(f64::total_cmp);
        e.sort_unstable();
        l.sort_by(f64::total_cmp);
        d.dedup();
        e.dedup();
        l.dedup();
        let mut out = Vec::with_capacity(d.len() * e.len() * l.len());
        for &dropout in &d {
            for &epochs in &e {
                for &lr in &l {
                    out.push((dropout, epochs, lr));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridEvaluation {
    pub dropout: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub tuning_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSearchResult {
    pub best: GridEvaluation,
    /// One entry per combination, in tie-break order.
    pub evaluations: Vec<GridEvaluation>,
}

impl GridSearchResult {
    pub fn best_params(&self, base: &TrainParams) -> TrainParams {
        TrainParams {
            dropout: self.best.dropout,
            epochs: self.best.epochs,
            learning_rate: self.best.learning_rate,
            ..*base
        }
    }
}

fn require_neural(config: &RollConfig, what: &str) -> Result<()> {
    if !config.family.is_neural() {
        return Err(Error::InvalidArgument(format!(
            "{what} applies to recurrent families, not {}",
            config.family
        )));
    }
    Ok(())
}

fn tuning_score(
    prepared: &PreparedPanel,
    config: &RollConfig,
    features: &FeatureSet,
    params: &TrainParams,
) -> Result<f64> {
    let config = RollConfig {
        scope: RollScope::Tuning,
        ..config.clone()
    };
    let out = rolling_run_prepared(prepared, &config, features, params)?;
    Ok(tuning_mse(&out.records))
}

/// Exhaustive search scored by mean squared error over the tuning rolls only.
/// The first combination in tie-break order wins ties.
pub fn grid_search(
    prepared: &PreparedPanel,
    config: &RollConfig,
    features: &FeatureSet,
    base: &TrainParams,
    grid: &HyperGrid,
) -> Result<GridSearchResult> {
    require_neural(config, "grid search")?;
    let combos = grid.combinations();
    if combos.is_empty() {
        return Err(Error::InvalidArgument(
            "hyperparameter grid is empty".into(),
        ));
    }
    let mut evaluations = Vec::with_capacity(combos.len());
    for (dropout, epochs, learning_rate) in combos {
        let params = TrainParams {
            dropout,
            epochs,
            learning_rate,
            ..*base
        };
        let mse = tuning_score(prepared, config, features, &params)?;
        log::info!("grid dropout={dropout} epochs={epochs} lr={learning_rate}: tuning MSE {mse}");
        evaluations.push(GridEvaluation {
            dropout,
            epochs,
            learning_rate,
            tuning_mse: mse,
        });
    }
    let best = *evaluations
        .iter()
        .fold(None::<&GridEvaluation>, |best, e| match best {
            Some(b) if b.tuning_mse <= e.tuning_mse => Some(b),
            _ => Some(e),
        })
        .expect("non-empty grid");
    Ok(GridSearchResult { best, evaluations })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EliminationStep {
    pub removed: VariableCode,
    /// Tuning MSE with the feature removed.
    pub tuning_mse: f64,
    pub remaining: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RfeResult {
    /// Surviving inputs, named by raw codes.
    pub selected: FeatureSet,
    pub baseline_mse: f64,
    pub eliminated: Vec<EliminationStep>,
}

/// Backward elimination: at each step drop the input whose removal gives the
/// lowest tuning MSE, until `target_count` inputs remain. Earlier inputs win
/// ties.
pub fn recursive_feature_elimination(
    prepared: &PreparedPanel,
    config: &RollConfig,
    start: &FeatureSet,
    target_count: usize,
    params: &TrainParams,
) -> Result<RfeResult> {
    require_neural(config, "feature elimination")?;
    let start = FeatureSet::new(start.as_raw().inputs)?;
    if target_count == 0 || target_count >= start.len() {
        return Err(Error::InvalidArgument(format!(
            "target count {target_count} must be between 1 and {} (exclusive of the start count)",
            start.len()
        )));
    }
    let baseline_mse = tuning_score(prepared, config, &start, params)?;
    let mut current = start.inputs;
    let mut eliminated = Vec::new();
    while current.len() > target_count {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..current.len() {
            let mut trial = current.clone();
            trial.remove(i);
            let mse = tuning_score(prepared, config, &FeatureSet { inputs: trial }, params)?;
            log::debug!("without {}: tuning MSE {mse}", current[i]);
            if best.is_none_or(|(_, b)| mse < b) {
                best = Some((i, mse));
            }
        }
        let (i, mse) = best.expect("at least one candidate");
        let removed = current.remove(i);
        log::info!(
            "eliminated {removed} (tuning MSE {mse}), {} remain",
            current.len()
        );
        eliminated.push(EliminationStep {
            removed,
            tuning_mse: mse,
            remaining: current.len(),
        });
    }
    Ok(RfeResult {
        selected: FeatureSet { inputs: current },
        baseline_mse,
        eliminated,
    })
}

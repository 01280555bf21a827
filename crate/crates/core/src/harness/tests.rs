use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::*;
use crate::garch::rolling_garch_price_forecast;
use crate::rng::child_rng;
use crate::synth::{business_days, synthetic_panel, SynthConfig};

fn shea_panel(prices: Vec<f64>) -> ObservationPanel {
    let dates = business_days(NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(), prices.len());
    ObservationPanel::new(dates, BTreeMap::from([(VariableCode::Shea, prices)])).unwrap()
}

fn small_params() -> TrainParams {
    TrainParams {
        hidden_dim: 4,
        epochs: 5,
        seed: 3,
        ..TrainParams::default()
    }
}

fn few_features() -> FeatureSet {
    FeatureSet::new(vec![
        VariableCode::Shea,
        VariableCode::Tpfqh,
        VariableCode::Hs300,
    ])
    .unwrap()
}

#[test]
fn sample_counts_and_shapes() {
    let panel = synthetic_panel(&SynthConfig::default()).unwrap();
    let features = FeatureSet::default_selected();
    assert_eq!(features.len(), 19);
    let samples = assemble_samples(&panel, &features, 5).unwrap();
    assert_eq!(samples.len(), 600);
    assert!(samples
        .iter()
        .all(|s| s.window.len() == 5 && s.window.iter().all(|r| r.len() == 19)));
    let shea = panel.column(VariableCode::Shea).unwrap();
    assert_eq!(samples[7].target, shea[12]);
    assert_eq!(samples[7].window[0][0], shea[7]);
    assert!(matches!(
        assemble_samples(&panel, &features, 605),
        Err(Error::InsufficientData(_))
    ));
    let gshea = FeatureSet::new(vec![VariableCode::Gshea]).unwrap();
    assert!(assemble_samples(&panel, &gshea, 5).is_err());
}

#[test]
fn feature_sets_swap_the_price_input() {
    let f = FeatureSet::default_selected();
    let hybrid = f.for_family(ModelFamily::GarchGru);
    assert!(
        hybrid.inputs.contains(&VariableCode::Gshea)
            && !hybrid.inputs.contains(&VariableCode::Shea)
    );
    assert_eq!(hybrid.len(), 19);
    let plain = hybrid.for_family(ModelFamily::Lstm);
    assert_eq!(plain, f);
    assert_eq!(hybrid.as_raw(), f);
    for c in DEFAULT_ELIMINATED {
        assert!(!f.inputs.contains(&c));
    }
    assert!(FeatureSet::new(vec![VariableCode::Shea, VariableCode::Gshea]).is_err());
    assert!(FeatureSet::new(vec![VariableCode::Sza, VariableCode::Sza]).is_err());
    assert!(FeatureSet::new(vec![]).is_err());
}

#[test]
fn full_panel_roll_arithmetic() {
    let prepared = PreparedPanel::new(
        shea_panel(vec![50.0; 605]),
        200,
        &GarchSpec::default(),
        false,
    )
    .unwrap();
    let config = RollConfig {
        family: ModelFamily::Ma,
        ..RollConfig::default()
    };
    let a = roll_arithmetic(&prepared, &config).unwrap();
    assert_eq!(
        (a.rolls, a.tuning_rolls, a.implementation_rolls),
        (545, 381, 164)
    );
    let out = rolling_run_prepared(&prepared, &config, &few_features(), &small_params()).unwrap();
    assert_eq!(out.records.len(), 545);
    assert_eq!(
        out.records
            .iter()
            .filter(|r| r.segment == Segment::Tuning)
            .count(),
        381
    );
    let last_tuning = out.records[380].date;
    assert!(out.records[381..]
        .iter()
        .all(|r| r.date > last_tuning && r.segment == Segment::Implementation));
}

#[test]
fn moving_average_examples() {
    assert_eq!(
        moving_average_forecast(&[1.0, 2.0, 3.0, 4.0, 5.0], 5).unwrap(),
        vec![3.0]
    );
    assert!(moving_average_forecast(&[4.2; 30], 5)
        .unwrap()
        .iter()
        .all(|v| *v == 4.2));
    assert!(moving_average_forecast(&[1.0, 2.0], 3).is_err());
    assert!(moving_average_forecast(&[1.0, 2.0], 0).is_err());

    let prices: Vec<f64> = (1..=120).map(f64::from).collect();
    let config = RollConfig {
        family: ModelFamily::Ma,
        n: 10,
        ..RollConfig::default()
    };
    let out = rolling_run(
        &shea_panel(prices.clone()),
        &config,
        &few_features(),
        &small_params(),
    )
    .unwrap();
    let ma = moving_average_forecast(&prices, 5).unwrap();
    for (i, r) in out.records.iter().enumerate() {
        assert_eq!(r.pv, ma[10 + i - 5]);
        assert_eq!(r.rv, prices[10 + i]);
        assert_eq!(r.window, 5);
    }
    // First rolled day is the 11th price; its forecast is the mean of prices 6..10.
    assert_eq!(out.records[0].pv, 8.0);
}

#[test]
fn garch_family_and_gshea_alignment() {
    let panel = synthetic_panel(&SynthConfig {
        days: 160,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let config = RollConfig {
        family: ModelFamily::Garch,
        garch_window: 60,
        n: 20,
        ..RollConfig::default()
    };
    let prepared = PreparedPanel::for_config(panel.clone(), &config).unwrap();
    let sub = prepared.augmented().unwrap();
    assert_eq!(sub.len(), 160 - 59);
    assert_eq!(sub.dates()[0], panel.dates()[59]);
    let shea = panel.column(VariableCode::Shea).unwrap();
    let direct = rolling_garch_price_forecast(shea, 60, &GarchSpec::default()).unwrap();
    let gshea = sub.column(VariableCode::Gshea).unwrap();
    // GSHEA at a row is the forecast for the next row.
    for r in 0..direct.len() {
        assert_eq!(gshea[r], direct[r]);
    }

    let out = rolling_run_prepared(&prepared, &config, &few_features(), &small_params()).unwrap();
    assert_eq!(out.arithmetic.rolls, 160 - 59 - 20);
    assert_eq!(out.arithmetic.burn_in_rows, 59);
    for r in &out.records {
        let row = panel.row_of(r.date).unwrap();
        assert_eq!(r.pv, direct[row - 60]);
        assert_eq!(r.window, 60);
    }
}

#[test]
fn shared_burn_in_aligns_dates() {
    let panel = synthetic_panel(&SynthConfig {
        days: 140,
        seed: 2,
        ..SynthConfig::default()
    })
    .unwrap();
    let base = RollConfig {
        garch_window: 60,
        n: 20,
        ..RollConfig::default()
    };
    let prepared = PreparedPanel::new(panel, 60, &GarchSpec::default(), true).unwrap();
    let garch = rolling_run_prepared(
        &prepared,
        &RollConfig {
            family: ModelFamily::Garch,
            ..base.clone()
        },
        &few_features(),
        &small_params(),
    )
    .unwrap();
    let ma_shared = rolling_run_prepared(
        &prepared,
        &RollConfig {
            family: ModelFamily::Ma,
            burn_in: BurnIn::Shared,
            ..base.clone()
        },
        &few_features(),
        &small_params(),
    )
    .unwrap();
    let ma_respect = rolling_run_prepared(
        &prepared,
        &RollConfig {
            family: ModelFamily::Ma,
            ..base
        },
        &few_features(),
        &small_params(),
    )
    .unwrap();
    let dates = |o: &RollOutput| o.records.iter().map(|r| r.date).collect::<Vec<_>>();
    assert_eq!(dates(&garch), dates(&ma_shared));
    assert_eq!(ma_respect.records.len(), 140 - 20);
    assert_eq!(ma_shared.arithmetic.burn_in_rows, 59);
}

#[test]
fn insufficient_data_names_the_minimum() {
    let config = RollConfig {
        family: ModelFamily::Gru,
        n: 60,
        ..RollConfig::default()
    };
    let err = rolling_run(
        &shea_panel(vec![10.0; 61]),
        &config,
        &few_features(),
        &small_params(),
    )
    .unwrap_err();
    match err {
        Error::InsufficientData(msg) => assert!(msg.contains("at least"), "{msg}"),
        other => panic!("{other}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    let panel = shea_panel(vec![10.0; 100]);
    for bad in [
        RollConfig {
            n: 5,
            ..RollConfig::default()
        },
        RollConfig {
            split: 1.0,
            ..RollConfig::default()
        },
        RollConfig {
            n1: 0,
            ..RollConfig::default()
        },
    ] {
        assert!(matches!(
            rolling_run(&panel, &bad, &few_features(), &small_params()),
            Err(Error::InvalidArgument(_))
        ));
    }
}

fn neural_config(family: ModelFamily) -> RollConfig {
    RollConfig {
        family,
        n: 25,
        garch_window: 60,
        ..RollConfig::default()
    }
}

#[test]
fn neural_rolls_are_deterministic_across_pools() {
    let panel = synthetic_panel(&SynthConfig {
        days: 110,
        seed: 1,
        ..SynthConfig::default()
    })
    .unwrap();
    for family in [ModelFamily::Gru, ModelFamily::GarchLstm] {
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| {
                    rolling_run(
                        &panel,
                        &neural_config(family),
                        &few_features(),
                        &small_params(),
                    )
                    .unwrap()
                })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a, b);
        assert!(a.records.iter().all(|r| r.pv.is_finite()));
    }
}

#[test]
fn scopes_select_prefix_or_suffix() {
    let panel = synthetic_panel(&SynthConfig {
        days: 90,
        seed: 5,
        ..SynthConfig::default()
    })
    .unwrap();
    let prepared = PreparedPanel::new(panel, 60, &GarchSpec::default(), false).unwrap();
    let config = neural_config(ModelFamily::Gru);
    let all = rolling_run_prepared(&prepared, &config, &few_features(), &small_params()).unwrap();
    let tuning = rolling_run_prepared(
        &prepared,
        &RollConfig {
            scope: RollScope::Tuning,
            ..config.clone()
        },
        &few_features(),
        &small_params(),
    )
    .unwrap();
    let implementation = rolling_run_prepared(
        &prepared,
        &RollConfig {
            scope: RollScope::Implementation,
            ..config
        },
        &few_features(),
        &small_params(),
    )
    .unwrap();
    let mut joined = tuning.records.clone();
    joined.extend(implementation.records);
    assert_eq!(joined, all.records);
    assert!(tuning.records.iter().all(|r| r.segment == Segment::Tuning));
}

#[test]
fn warm_start_is_deterministic_and_differs_from_fresh() {
    let panel = synthetic_panel(&SynthConfig {
        days: 70,
        seed: 6,
        ..SynthConfig::default()
    })
    .unwrap();
    let config = RollConfig {
        warm_start: true,
        ..neural_config(ModelFamily::Lstm)
    };
    let a = rolling_run(&panel, &config, &few_features(), &small_params()).unwrap();
    let b = rolling_run(&panel, &config, &few_features(), &small_params()).unwrap();
    let fresh = rolling_run(
        &panel,
        &neural_config(ModelFamily::Lstm),
        &few_features(),
        &small_params(),
    )
    .unwrap();
    assert_eq!(a, b);
    assert_eq!(a.records[0], fresh.records[0]);
    assert_ne!(a.records, fresh.records);
}

#[test]
fn no_lookahead_under_future_perturbation() {
    let panel = synthetic_panel(&SynthConfig {
        days: 120,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let mut rng = child_rng(77, 0, 0);
    for family in [
        ModelFamily::Ma,
        ModelFamily::Gru,
        ModelFamily::Garch,
        ModelFamily::GarchGru,
    ] {
        let config = neural_config(family);
        let before = rolling_run(&panel, &config, &few_features(), &small_params()).unwrap();
        let cut = rng.random_range(90..118usize);
        let t = panel.dates()[cut];
        let mut edited = panel.clone();
        for code in VariableCode::raw() {
            for v in &mut edited.column_mut(*code).unwrap()[cut + 1..] {
                *v *= 1.0 + rng.random_range(0.05..0.5);
            }
        }
        let after = rolling_run(&edited, &config, &few_features(), &small_params()).unwrap();
        let keep = |o: &RollOutput| {
            o.records
                .iter()
                .filter(|r| r.date <= t)
                .cloned()
                .collect::<Vec<_>>()
        };
        assert!(!keep(&before).is_empty());
        assert_eq!(keep(&before), keep(&after), "{family}");
        assert_ne!(before.records, after.records, "{family}");
    }
}

#[test]
fn grid_search_is_exhaustive_with_ordered_ties() {
    let panel = synthetic_panel(&SynthConfig {
        days: 70,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let prepared = PreparedPanel::new(panel, 60, &GarchSpec::default(), false).unwrap();
    let config = neural_config(ModelFamily::Gru);
    let grid = HyperGrid {
        dropout: vec![0.2, 0.0],
        epochs: vec![3, 2],
        learning_rate: vec![0.01, 0.05],
    };
    let r = grid_search(&prepared, &config, &few_features(), &small_params(), &grid).unwrap();
    assert_eq!(r.evaluations.len(), 8);
    let min = r
        .evaluations
        .iter()
        .map(|e| e.tuning_mse)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(r.best.tuning_mse, min);
    let first_min = r.evaluations.iter().find(|e| e.tuning_mse == min).unwrap();
    assert_eq!(&r.best, first_min);
    assert_eq!(
        (r.evaluations[0].dropout, r.evaluations[0].epochs),
        (0.0, 2)
    );

    let single = HyperGrid {
        dropout: vec![0.1],
        epochs: vec![2],
        learning_rate: vec![0.02],
    };
    let r = grid_search(
        &prepared,
        &config,
        &few_features(),
        &small_params(),
        &single,
    )
    .unwrap();
    assert_eq!(
        (r.best.dropout, r.best.epochs, r.best.learning_rate),
        (0.1, 2, 0.02)
    );

    let empty = HyperGrid {
        dropout: vec![],
        ..single
    };
    assert!(matches!(
        grid_search(&prepared, &config, &few_features(), &small_params(), &empty),
        Err(Error::InvalidArgument(_))
    ));
    let defaults = HyperGrid::default().combinations();
    assert!(defaults.contains(&(0.2, 150, 0.01)));
}

#[test]
fn grid_and_rfe_need_a_neural_family() {
    let prepared =
        PreparedPanel::new(shea_panel(vec![3.0; 100]), 60, &GarchSpec::default(), false).unwrap();
    let ma = neural_config(ModelFamily::Ma);
    assert!(grid_search(
        &prepared,
        &ma,
        &few_features(),
        &small_params(),
        &HyperGrid::default()
    )
    .is_err());
    assert!(
        recursive_feature_elimination(&prepared, &ma, &few_features(), 1, &small_params()).is_err()
    );
}

#[test]
fn rfe_boundaries() {
    let panel = synthetic_panel(&SynthConfig {
        days: 70,
        seed: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let prepared = PreparedPanel::new(panel, 60, &GarchSpec::default(), false).unwrap();
    let config = neural_config(ModelFamily::Gru);
    for target in [3, 4, 0] {
        assert!(matches!(
            recursive_feature_elimination(
                &prepared,
                &config,
                &few_features(),
                target,
                &small_params()
            ),
            Err(Error::InvalidArgument(_))
        ));
    }
    let r = recursive_feature_elimination(&prepared, &config, &few_features(), 1, &small_params())
        .unwrap();
    assert_eq!(r.eliminated.len(), 2);
    assert_eq!(r.selected.len(), 1);
    assert_eq!(
        r.eliminated.iter().map(|s| s.remaining).collect::<Vec<_>>(),
        vec![2, 1]
    );
}

/// Target is a noisy copy of yesterday's driver F; Z is unrelated noise.
fn driver_panel(seed: u64, days: usize) -> ObservationPanel {
    let mut rng = child_rng(seed, 42, 0);
    let mut z = |s: f64| -> f64 {
        s * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
    };
    let f: Vec<f64> = (0..days).map(|_| 50.0 + z(5.0)).collect();
    let noise: Vec<f64> = (0..days).map(|_| 50.0 + z(5.0)).collect();
    let shea: Vec<f64> = (0..days)
        .map(|t| if t == 0 { 50.0 } else { f[t - 1] + z(0.5) })
        .collect();
    let dates = business_days(NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(), days);
    ObservationPanel::new(
        dates,
        BTreeMap::from([
            (VariableCode::Shea, shea),
            (VariableCode::Sza, f),
            (VariableCode::Gdea, noise),
        ]),
    )
    .unwrap()
}

#[test]
fn rfe_drops_noise_before_driver() {
    let config = RollConfig {
        family: ModelFamily::Gru,
        n1: 2,
        n: 30,
        garch_window: 60,
        ..RollConfig::default()
    };
    let params = TrainParams {
        hidden_dim: 4,
        epochs: 60,
        dropout: 0.0,
        learning_rate: 0.05,
        seed: 0,
    };
    let start = FeatureSet::new(vec![VariableCode::Sza, VariableCode::Gdea]).unwrap();
    let mut wins = 0;
    for seed in 0..10 {
        let prepared =
            PreparedPanel::new(driver_panel(seed, 60), 60, &GarchSpec::default(), false).unwrap();
        let r = recursive_feature_elimination(
            &prepared,
            &config,
            &start,
            1,
            &TrainParams { seed, ..params },
        )
        .unwrap();
        if r.eliminated[0].removed == VariableCode::Gdea {
            wins += 1;
        }
    }
    assert!(wins >= 8, "noise eliminated first in {wins}/10 seeds");
}

#[test]
fn forecast_csv_round_trip() {
    let panel = synthetic_panel(&SynthConfig {
        days: 80,
        seed: 3,
        ..SynthConfig::default()
    })
    .unwrap();
    let out = rolling_run(
        &panel,
        &neural_config(ModelFamily::Gru),
        &few_features(),
        &small_params(),
    )
    .unwrap();
    let mut buf = Vec::new();
    write_forecasts(&out.records, &mut buf).unwrap();
    let text = String::from_utf8(buf.clone()).unwrap();
    assert!(text.starts_with("model,window,date,pv,rv,segment\nGRU,5,"));
    assert_eq!(read_forecasts(buf.as_slice()).unwrap(), out.records);
    assert!(read_forecasts("model,date\nGRU,2020-01-01\n".as_bytes()).is_err());
    assert!(matches!(
        read_forecasts("model,window,date,pv,rv,segment\nGRU,5,2020-01-01,x,1,tuning\n".as_bytes()),
        Err(Error::Parse { row: 2, .. })
    ));
}

#[test]
fn family_names_round_trip() {
    for m in ModelFamily::ALL {
        assert_eq!(m.as_str().parse::<ModelFamily>().unwrap(), m);
    }
    assert_eq!(
        "garch_gru".parse::<ModelFamily>().unwrap(),
        ModelFamily::GarchGru
    );
    assert!("arima".parse::<ModelFamily>().is_err());
}

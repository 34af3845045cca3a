//! Minibatch training loop with early stopping, plus split preparation and
//! evaluation helpers shared by the `train`, `eval`, and `bench` commands.

use std::fmt::Write as _;
use std::time::Instant;

use tea_core::autodiff::{loss_and_grad, Sample};
use tea_core::metrics::{mae, mse};
use tea_core::model::{model_forward, ModelConfig, ModelParams, SampleFactors};
use tea_core::optim::{adam_step, sgd_step, AdamConfig, AdamState};
use tea_core::rng::SeededRng;

use crate::config::{OptimizerKind, RunConfig};
use crate::data::{load_csv, persistence_mse, split, windows, ForecastWindow, RawSeries, Scaler};
use crate::error::{CliError, Result};

/// Standardized, windowed splits ready for training.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub d_raw: usize,
    pub scaler: Scaler,
    pub train: Vec<ForecastWindow>,
    pub val: Vec<ForecastWindow>,
    pub test: Vec<ForecastWindow>,
}

pub fn prepare_dataset(run: &RunConfig) -> Result<Dataset> {
    let series = load_csv(&run.resolved_data_path()?)?;
    prepare_dataset_from_series(run, &series)
}

pub fn prepare_dataset_from_series(run: &RunConfig, series: &RawSeries) -> Result<Dataset> {
    let (train_raw, val_raw, test_raw) = split(series, &run.split)?;
    let scaler = Scaler::fit(&train_raw)?;
    for col in &scaler.constant_columns {
        eprintln!("warning: column {col} is constant on the training split; std set to 1");
    }
    let win = |s: &RawSeries| windows(&scaler.transform(s), run.seq_len, run.label_len, run.pred_len);
    let train = win(&train_raw)?;
    let val = win(&val_raw)?;
    let test = win(&test_raw)?;
    Ok(Dataset {
        name: run.dataset_name(),
        d_raw: series.cols(),
        scaler,
        train,
        val,
        test,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mse: f64,
    pub val_mae: f64,
    pub seconds: f64,
    pub steps: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept (best validation MSE).
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub persistence_val_mse: f64,
    pub total_steps: u64,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_mse,val_mae,seconds\n");
        for e in &self.epochs {
            let _ = writeln!(
                s,
                "{},{:.6},{:.6},{:.6},{:.3}",
                e.epoch, e.train_loss, e.val_mse, e.val_mae, e.seconds
            );
        }
        s
    }
}

/// Mean MSE/MAE of the model over a window list.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    set: &[ForecastWindow],
) -> Result<(f64, f64)> {
    if set.is_empty() {
        return Err(CliError::data("cannot evaluate on an empty split"));
    }
    let mut se = 0.0;
    let mut ae = 0.0;
    for w in set {
        let pred = model_forward(&w.encoder_input, params, cfg)?;
        se += mse(&pred, &w.target)?;
        ae += mae(&pred, &w.target)?;
    }
    Ok((se / set.len() as f64, ae / set.len() as f64))
}

fn shuffled_indices(n: usize, rng: &mut SeededRng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = (rng.unit() * (i + 1) as f64) as usize;
        idx.swap(i, j.min(i));
    }
    idx
}

/// Trains a model on the dataset; returns the best-on-validation parameters
/// and the per-epoch report. Deterministic given the config seed.
pub fn train_model(
    run: &RunConfig,
    cfg: &ModelConfig,
    data: &Dataset,
) -> Result<(ModelParams, TrainReport)> {
    if data.train.is_empty() || data.val.is_empty() {
        return Err(CliError::data("train and validation splits must be non-empty"));
    }
    let mut params = ModelParams::init(cfg)?;
    let mut adam = AdamState::default();
    let adam_cfg = AdamConfig {
        lr: run.lr,
        ..AdamConfig::default()
    };
    // Per-window frozen Tucker factors, used only with cache_factors.
    let mut factor_cache: Vec<SampleFactors> = if run.cache_factors {
        vec![SampleFactors::default(); data.train.len()]
    } else {
        Vec::new()
    };
    let mut shuffle_rng = SeededRng::new(cfg.seed ^ 0x5eed_5eed);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut epochs = Vec::new();
    let mut since_best = 0usize;
    let mut total_steps = 0u64;
    for epoch in 1..=run.epochs {
        let start = Instant::now();
        let order = shuffled_indices(data.train.len(), &mut shuffle_rng);
        let mut loss_sum = 0.0;
        let mut steps_this_epoch = 0u64;
        for chunk in order.chunks(run.batch_size) {
            let batch: Vec<Sample> = chunk
                .iter()
                .map(|&i| {
                    (
                        data.train[i].encoder_input.clone(),
                        data.train[i].target.clone(),
                    )
                })
                .collect();
            let (loss, grads) = if run.cache_factors {
                let mut caches: Vec<SampleFactors> = chunk
                    .iter()
                    .map(|&i| factor_cache[i].clone())
                    .collect();
                let r = loss_and_grad(&params, cfg, &batch, Some(&mut caches))?;
                for (&i, c) in chunk.iter().zip(caches) {
                    factor_cache[i] = c;
                }
                r
            } else {
                loss_and_grad(&params, cfg, &batch, None)?
            };
            let mut map = params.to_map();
            match run.optimizer {
                OptimizerKind::Adam => adam_step(&mut map, &grads, &mut adam, adam_cfg)?,
                OptimizerKind::Sgd => sgd_step(&mut map, &grads, run.lr)?,
            }
            params.assign_from_map(&map)?;
            loss_sum += loss;
            steps_this_epoch += 1;
        }
        total_steps += steps_this_epoch;
        let (val_mse, val_mae) = evaluate(&params, cfg, &data.val)?;
        epochs.push(EpochRecord {
            epoch,
            train_loss: loss_sum / steps_this_epoch as f64,
            val_mse,
            val_mae,
            seconds: start.elapsed().as_secs_f64(),
            steps: steps_this_epoch,
        });
        let improved = best.as_ref().map_or(true, |(b, _, _)| val_mse < *b);
        if improved {
            best = Some((val_mse, epoch, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= run.patience {
                break;
            }
        }
    }
    let (best_val_mse, best_epoch, best_params) = best.expect("at least one epoch ran");
    let report = TrainReport {
        epochs,
        best_epoch,
        best_val_mse,
        persistence_val_mse: persistence_mse(&data.val),
        total_steps,
    };
    Ok((best_params, report))
}

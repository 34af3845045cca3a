//! Implementations of the `tea` subcommands, separated from argument
//! parsing so integration tests can drive them directly.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use tea_core::autodiff::{finite_difference_check, Sample};
use tea_core::decomp::{
    cp_als, cp_reconstruct, hosvd, tt_reconstruct, tt_svd, tucker_relative_error, TtTruncation,
    CP_DEFAULT_MAX_ITER, CP_DEFAULT_TOL,
};
use tea_core::flops::FlopCounter;
use tea_core::model::{model_forward_ctx, ModelConfig, ModelParams, NamedTensors};
use tea_core::rng::SeededRng;
use tea_core::tensor::DenseTensor;

use crate::config::{load_config, parse_config, RunConfig};
use crate::container::{load, save, stored_scalars, Checkpoint, Payload};
use crate::data::ForecastWindow;
use crate::error::{CliError, Result};
use crate::synth::generate_csv;
use crate::train::{evaluate, prepare_dataset, train_model, Dataset};

pub const GRADCHECK_STEP: f64 = 1e-6;
pub const GRADCHECK_REL_TOL: f64 = 1e-4;
/// Floor on relative-error denominators. Coordinates with gradients below
/// this sit under the f64 central-difference noise floor at the step above,
/// where the comparison measures roundoff, not correctness.
pub const GRADCHECK_DENOM_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DecompKind {
    Tucker,
    Cp,
    Tt,
}

impl std::str::FromStr for DecompKind {
    type Err = CliError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tucker" => Ok(DecompKind::Tucker),
            "cp" => Ok(DecompKind::Cp),
            "tt" => Ok(DecompKind::Tt),
            other => Err(CliError::parse(format!(
                "kind must be tucker, cp, or tt, got `{other}`"
            ))),
        }
    }
}

fn parse_rank_list(s: &str) -> Result<Vec<usize>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| CliError::parse(format!("invalid rank `{p}`")))
        })
        .collect()
}

/// `decompose`: fit the requested structure to a dense tensor container,
/// write the factor container, and return the report line.
pub fn decompose(
    input: &Path,
    kind: DecompKind,
    ranks: Option<&str>,
    eps: Option<f64>,
    output: Option<&Path>,
    seed: u64,
) -> Result<String> {
    let tensor = match load(input)? {
        Payload::Dense(t) => t,
        other => {
            return Err(CliError::parse(format!(
                "expected a dense tensor container, found {:?}",
                other.kind()
            )))
        }
    };
    let original = tensor.len();
    let (payload, rel_error, ranks_str) = match kind {
        DecompKind::Tucker => {
            let ranks = parse_rank_list(
                ranks.ok_or_else(|| CliError::parse("--ranks is required for tucker"))?,
            )?;
            let f = hosvd(&tensor, &ranks)?;
            let err = tucker_relative_error(&tensor, &f)?;
            let rs = join_ranks(&f.ranks);
            (Payload::Tucker(f), err, rs)
        }
        DecompKind::Cp => {
            let ranks = parse_rank_list(
                ranks.ok_or_else(|| CliError::parse("--ranks is required for cp"))?,
            )?;
            if ranks.len() != 1 {
                return Err(CliError::parse("cp takes exactly one rank"));
            }
            let (f, _) = cp_als(&tensor, ranks[0], CP_DEFAULT_MAX_ITER, CP_DEFAULT_TOL, seed)?;
            let recon = cp_reconstruct(&f)?;
            let err = relative_error(&tensor, &recon);
            let rs = ranks[0].to_string();
            (Payload::Cp(f), err, rs)
        }
        DecompKind::Tt => {
            let trunc = match (ranks, eps) {
                (Some(r), None) => TtTruncation::MaxRanks(parse_rank_list(r)?),
                (None, Some(e)) => TtTruncation::Eps(e),
                (None, None) => TtTruncation::Eps(1e-10),
                (Some(_), Some(_)) => {
                    return Err(CliError::parse("tt takes --ranks or --eps, not both"))
                }
            };
            let f = tt_svd(&tensor, &trunc)?;
            let recon = tt_reconstruct(&f)?;
            let err = relative_error(&tensor, &recon);
            let rs = join_ranks(&f.ranks());
            (Payload::Tt(f), err, rs)
        }
    };
    let stored = stored_scalars(&payload);
    let out_path = match output {
        Some(p) => p.to_path_buf(),
        None => {
            let mut p = input.as_os_str().to_owned();
            p.push(match kind {
                DecompKind::Tucker => ".tucker",
                DecompKind::Cp => ".cp",
                DecompKind::Tt => ".tt",
            });
            PathBuf::from(p)
        }
    };
    save(&out_path, &payload)?;
    Ok(format!(
        "decompose kind={} ranks={} rel_error={:.6e} stored={} original={} compression_ratio={:.6}",
        match kind {
            DecompKind::Tucker => "tucker",
            DecompKind::Cp => "cp",
            DecompKind::Tt => "tt",
        },
        ranks_str,
        rel_error,
        stored,
        original,
        stored as f64 / original as f64,
    ))
}

fn relative_error(t: &DenseTensor, recon: &DenseTensor) -> f64 {
    let diff = t.sub(recon).expect("shape-matched reconstruction");
    let denom = t.frobenius_norm();
    if denom == 0.0 {
        diff.frobenius_norm()
    } else {
        diff.frobenius_norm() / denom
    }
}

fn join_ranks(ranks: &[usize]) -> String {
    ranks
        .iter()
        .map(|r| r.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

fn checkpoint_from(params: &ModelParams, run: &RunConfig, step: u64) -> Checkpoint {
    Checkpoint {
        manifest: run.to_config_string(),
        seed: run.seed,
        step,
        tensors: params.to_map().into_iter().collect(),
    }
}

fn params_from_checkpoint(c: &Checkpoint, cfg: &ModelConfig) -> Result<ModelParams> {
    let map: NamedTensors = c.tensors.iter().cloned().collect();
    let mut params = ModelParams::init(cfg)?;
    params.assign_from_map(&map)?;
    Ok(params)
}

/// `train`: fit the configured model, write `checkpoint.tea` and
/// `report.csv` under the output directory, and return the summary.
pub fn train_cmd(config_path: &Path) -> Result<String> {
    let run = load_config(config_path)?;
    let data = prepare_dataset(&run)?;
    let cfg = run.model_config(data.d_raw);
    let (params, report) = train_model(&run, &cfg, &data)?;
    std::fs::create_dir_all(&run.out_dir)?;
    let ckpt_path = run.out_dir.join("checkpoint.tea");
    save(
        &ckpt_path,
        &Payload::Checkpoint(checkpoint_from(&params, &run, report.total_steps)),
    )?;
    let report_csv = report.to_csv();
    std::fs::write(run.out_dir.join("report.csv"), &report_csv)?;
    let mut out = report_csv;
    let _ = writeln!(
        out,
        "best_epoch={} best_val_mse={:.6} persistence_val_mse={:.6} checkpoint={}",
        report.best_epoch,
        report.best_val_mse,
        report.persistence_val_mse,
        ckpt_path.display()
    );
    Ok(out)
}

fn model_label(run: &RunConfig) -> &'static str {
    if run.tea_decoder {
        "tea-ablation"
    } else if run.use_tea {
        "tea"
    } else {
        "control"
    }
}

fn pick_split<'a>(data: &'a Dataset, split: &str) -> Result<&'a [ForecastWindow]> {
    Ok(match split {
        "train" => &data.train,
        "val" => &data.val,
        "test" => &data.test,
        other => {
            return Err(CliError::parse(format!(
                "split must be train, val, or test, got `{other}`"
            )))
        }
    })
}

fn eval_one(checkpoint_path: &Path, split: &str) -> Result<(String, String)> {
    let ckpt = match load(checkpoint_path)? {
        Payload::Checkpoint(c) => c,
        other => {
            return Err(CliError::parse(format!(
                "expected a checkpoint container, found {:?}",
                other.kind()
            )))
        }
    };
    let run = parse_config(&ckpt.manifest)?;
    let data = prepare_dataset(&run)?;
    let cfg = run.model_config(data.d_raw);
    let params = params_from_checkpoint(&ckpt, &cfg)?;
    let (mse, mae) = evaluate(&params, &cfg, pick_split(&data, split)?)?;
    Ok((
        data.name.clone(),
        format!(
            "{},{},{},{},{:.6},{:.6}",
            data.name,
            run.seq_len,
            run.pred_len,
            model_label(&run),
            mse,
            mae
        ),
    ))
}

/// `eval`: metric rows in the result-table format
/// `dataset,seq_len,pred_len,model,mse,mae`; optionally a second checkpoint
/// (a plain-attention control) evaluated on the same split.
pub fn eval_cmd(
    checkpoint: &Path,
    split: &str,
    with_control: Option<&Path>,
) -> Result<String> {
    let mut out = String::from("dataset,seq_len,pred_len,model,mse,mae\n");
    let (_, row) = eval_one(checkpoint, split)?;
    out.push_str(&row);
    out.push('\n');
    if let Some(ctrl) = with_control {
        let (_, row) = eval_one(ctrl, split)?;
        out.push_str(&row);
        out.push('\n');
    }
    Ok(out)
}

/// `gradcheck`: finite-difference sweep over every trainable parameter of
/// the configured model on a small synthetic batch; errors (nonzero exit)
/// if any coordinate exceeds the tolerance.
pub fn gradcheck_cmd(config_path: &Path) -> Result<String> {
    let run = load_config(config_path)?;
    let d_raw = match prepare_dataset(&run) {
        Ok(d) => d.d_raw,
        // No dataset needed for a gradient check; default to the bundled
        // synthetic schema width.
        Err(_) => 7,
    };
    let cfg = run.model_config(d_raw);
    let params = ModelParams::init(&cfg)?;
    let mut rng = SeededRng::new(cfg.seed ^ 0x6772_6164);
    let batch = synthetic_batch(&cfg, 2, &mut rng);
    let report = finite_difference_check(
        &params,
        &cfg,
        &batch,
        GRADCHECK_STEP,
        GRADCHECK_DENOM_FLOOR,
    )?;
    let line = format!(
        "gradcheck coords={} max_rel_error={:.3e} worst={} tolerance={:.0e}",
        report.coords_checked, report.max_rel_error, report.worst_param, GRADCHECK_REL_TOL
    );
    if report.max_rel_error > GRADCHECK_REL_TOL {
        return Err(CliError::Numerical(format!("gradcheck failed: {line}")));
    }
    Ok(line)
}

fn synthetic_batch(cfg: &ModelConfig, n: usize, rng: &mut SeededRng) -> Vec<Sample> {
    (0..n)
        .map(|_| {
            let enc = DenseTensor::new(
                vec![cfg.seq_len, cfg.d_raw],
                (0..cfg.seq_len * cfg.d_raw).map(|_| rng.normal()).collect(),
            )
            .expect("valid shape");
            let target = DenseTensor::new(
                vec![cfg.pred_len, cfg.d_raw],
                (0..cfg.pred_len * cfg.d_raw).map(|_| rng.normal()).collect(),
            )
            .expect("valid shape");
            (enc, target)
        })
        .collect()
}

/// `bench`: wall time and counted attention multiply-adds of one forward
/// pass, for the TEA (core-attention) model vs. the identically sized
/// plain-attention control.
pub fn bench_cmd(config_path: &Path) -> Result<String> {
    let run = load_config(config_path)?;
    let d_raw = match prepare_dataset(&run) {
        Ok(d) => d.d_raw,
        Err(_) => 7,
    };
    let mut out = String::new();
    let mut results = Vec::new();
    for use_tea in [true, false] {
        let mut variant = run.clone();
        variant.use_tea = use_tea;
        let cfg = variant.model_config(d_raw);
        let params = ModelParams::init(&cfg)?;
        let mut rng = SeededRng::new(cfg.seed ^ 0xbe9c);
        let enc = DenseTensor::new(
            vec![cfg.seq_len, cfg.d_raw],
            (0..cfg.seq_len * cfg.d_raw).map(|_| rng.normal()).collect(),
        )
        .expect("valid shape");
        let mut counter = FlopCounter::new();
        let start = Instant::now();
        model_forward_ctx(&enc, &params, &cfg, None, Some(&mut counter))?;
        let seconds = start.elapsed().as_secs_f64();
        let label = if use_tea { "core-attention" } else { "full-attention" };
        let _ = writeln!(
            out,
            "bench model={} mult_adds={} score_matrices={} seconds={:.6}",
            label,
            counter.mult_adds,
            counter.score_shapes.len(),
            seconds
        );
        results.push(counter.mult_adds);
    }
    let _ = writeln!(
        out,
        "bench core_vs_full_ratio={:.6}",
        results[0] as f64 / results[1] as f64
    );
    Ok(out)
}

/// `gen`: write the bundled synthetic ETT-schema dataset.
pub fn gen_cmd(out: &Path, rows: usize, seed: u64) -> Result<String> {
    if rows == 0 {
        return Err(CliError::parse("rows must be positive"));
    }
    if let Some(dir) = out.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir)?;
        }
    }
    std::fs::write(out, generate_csv(rows, seed))?;
    Ok(format!("gen rows={rows} seed={seed} path={}", out.display()))
}

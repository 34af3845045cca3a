//! Run configuration: line-oriented `key = value` files with `[section]`
//! headers, `#` comments, full schema validation, and rejection of unknown
//! keys.
//!
//! Schema (defaults in parentheses):
//!
//! ```text
//! [model]
//! seq_len (24)      label_len (12)    pred_len (24)
//! l_mdl (4)         d_mdl (16)        d_attn (8)      heads (2)
//! enc_layers (1)    dec_layers (1)
//! ranks = R1,R2,R3 (12,4,8)
//! tucker = hosvd | hooi (hosvd)
//! hooi_max_iter (50)     hooi_tol (1e-8)
//! use_tea (true)         tea_decoder (false)
//! activation = relu | leaky_relu (relu)   leaky_slope (0.01)
//! scale_scores (false)   layer_norm (true)
//! seed (42)              cache_factors (false)
//!
//! [data]
//! path                   # CSV path; relative paths resolve under $TEA_DATA_DIR
//! dataset (stem of path) # name echoed in result rows
//! split = ratio | months (ratio)
//! train_ratio (0.7)  val_ratio (0.1)  test_ratio (0.2)
//! train_months, val_months, test_months   # for split = months
//!
//! [train]
//! optimizer = adam | sgd (adam)
//! lr (1e-3)   batch_size (32)   epochs (10)   patience (3)
//!
//! [output]
//! dir (out)
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use tea_core::attention::Activation;
use tea_core::model::{ModelConfig, TuckerAlgorithm};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum SplitSpec {
    Ratio { train: f64, val: f64, test: f64 },
    Months { train: u32, val: u32, test: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [model]
    pub seq_len: usize,
    pub label_len: usize,
    pub pred_len: usize,
    pub l_mdl: usize,
    pub d_mdl: usize,
    pub d_attn: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ranks: [usize; 3],
    pub tucker: TuckerAlgorithm,
    pub use_tea: bool,
    pub tea_decoder: bool,
    pub activation: Activation,
    pub scale_scores: bool,
    pub layer_norm: bool,
    pub seed: u64,
    pub cache_factors: bool,
    // [data]
    pub data_path: Option<PathBuf>,
    pub dataset: Option<String>,
    pub split: SplitSpec,
    // [train]
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub patience: usize,
    // [output]
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seq_len: 24,
            label_len: 12,
            pred_len: 24,
            l_mdl: 4,
            d_mdl: 16,
            d_attn: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ranks: [12, 4, 8],
            tucker: TuckerAlgorithm::Hosvd,
            use_tea: true,
            tea_decoder: false,
            activation: Activation::Relu,
            scale_scores: false,
            layer_norm: true,
            seed: 42,
            cache_factors: false,
            data_path: None,
            dataset: None,
            split: SplitSpec::Ratio {
                train: 0.7,
                val: 0.1,
                test: 0.2,
            },
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            batch_size: 32,
            epochs: 10,
            patience: 3,
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    /// Builds the core model config once the raw feature count is known
    /// from the dataset.
    pub fn model_config(&self, d_raw: usize) -> ModelConfig {
        ModelConfig {
            seq_len: self.seq_len,
            label_len: self.label_len,
            pred_len: self.pred_len,
            d_raw,
            l_mdl: self.l_mdl,
            d_mdl: self.d_mdl,
            d_attn: self.d_attn,
            heads: self.heads,
            enc_layers: self.enc_layers,
            dec_layers: self.dec_layers,
            ranks: self.ranks,
            tucker_algorithm: self.tucker,
            use_tea_encoder: self.use_tea,
            tea_decoder: self.tea_decoder,
            activation: self.activation,
            scale_scores: self.scale_scores,
            layer_norm: self.layer_norm,
            seed: self.seed,
        }
    }

    /// Resolves the data path, applying `TEA_DATA_DIR` to relative paths.
    pub fn resolved_data_path(&self) -> Result<PathBuf> {
        let p = self
            .data_path
            .as_ref()
            .ok_or_else(|| CliError::parse("config is missing [data] path"))?;
        if p.is_absolute() {
            return Ok(p.clone());
        }
        match std::env::var_os("TEA_DATA_DIR") {
            Some(root) => Ok(PathBuf::from(root).join(p)),
            None => Ok(p.clone()),
        }
    }

    pub fn dataset_name(&self) -> String {
        if let Some(name) = &self.dataset {
            return name.clone();
        }
        self.data_path
            .as_ref()
            .and_then(|p| p.file_stem())
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "dataset".into())
    }

    /// Echo in the config file syntax; parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[model]");
        let _ = writeln!(s, "seq_len = {}", self.seq_len);
        let _ = writeln!(s, "label_len = {}", self.label_len);
        let _ = writeln!(s, "pred_len = {}", self.pred_len);
        let _ = writeln!(s, "l_mdl = {}", self.l_mdl);
        let _ = writeln!(s, "d_mdl = {}", self.d_mdl);
        let _ = writeln!(s, "d_attn = {}", self.d_attn);
        let _ = writeln!(s, "heads = {}", self.heads);
        let _ = writeln!(s, "enc_layers = {}", self.enc_layers);
        let _ = writeln!(s, "dec_layers = {}", self.dec_layers);
        let _ = writeln!(
            s,
            "ranks = {},{},{}",
            self.ranks[0], self.ranks[1], self.ranks[2]
        );
        match self.tucker {
            TuckerAlgorithm::Hosvd => {
                let _ = writeln!(s, "tucker = hosvd");
            }
            TuckerAlgorithm::Hooi { max_iter, tol } => {
                let _ = writeln!(s, "tucker = hooi");
                let _ = writeln!(s, "hooi_max_iter = {max_iter}");
                let _ = writeln!(s, "hooi_tol = {tol}");
            }
        }
        let _ = writeln!(s, "use_tea = {}", self.use_tea);
        let _ = writeln!(s, "tea_decoder = {}", self.tea_decoder);
        match self.activation {
            Activation::Relu => {
                let _ = writeln!(s, "activation = relu");
            }
            Activation::LeakyRelu(slope) => {
                let _ = writeln!(s, "activation = leaky_relu");
                let _ = writeln!(s, "leaky_slope = {slope}");
            }
            #[allow(unreachable_patterns)]
            _ => {
                let _ = writeln!(s, "activation = relu");
            }
        }
        let _ = writeln!(s, "scale_scores = {}", self.scale_scores);
        let _ = writeln!(s, "layer_norm = {}", self.layer_norm);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "cache_factors = {}", self.cache_factors);
        let _ = writeln!(s, "\n[data]");
        if let Some(p) = &self.data_path {
            let _ = writeln!(s, "path = {}", p.display());
        }
        if let Some(d) = &self.dataset {
            let _ = writeln!(s, "dataset = {d}");
        }
        match &self.split {
            SplitSpec::Ratio { train, val, test } => {
                let _ = writeln!(s, "split = ratio");
                let _ = writeln!(s, "train_ratio = {train}");
                let _ = writeln!(s, "val_ratio = {val}");
                let _ = writeln!(s, "test_ratio = {test}");
            }
            SplitSpec::Months { train, val, test } => {
                let _ = writeln!(s, "split = months");
                let _ = writeln!(s, "train_months = {train}");
                let _ = writeln!(s, "val_months = {val}");
                let _ = writeln!(s, "test_months = {test}");
            }
        }
        let _ = writeln!(s, "\n[train]");
        let _ = writeln!(
            s,
            "optimizer = {}",
            match self.optimizer {
                OptimizerKind::Adam => "adam",
                OptimizerKind::Sgd => "sgd",
            }
        );
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "patience = {}", self.patience);
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "dir = {}", self.out_dir.display());
        s
    }
}

/// Raw `(section, key) -> (value, line)` map with consume-and-check-empty
/// semantics, so every unconsumed key is reported as unknown.
struct RawConfig {
    entries: BTreeMap<(String, String), (String, usize)>,
}

impl RawConfig {
    fn parse(text: &str) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw_line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw_line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    CliError::parse(format!("line {line_no}: unterminated section header"))
                })?;
                section = name.trim().to_lowercase();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::parse(format!("line {line_no}: expected `key = value`"))
            })?;
            let key = key.trim().to_lowercase();
            if key.is_empty() {
                return Err(CliError::parse(format!("line {line_no}: empty key")));
            }
            if entries
                .insert(
                    (section.clone(), key.clone()),
                    (value.trim().to_string(), line_no),
                )
                .is_some()
            {
                return Err(CliError::parse(format!(
                    "line {line_no}: duplicate key `{key}` in section [{section}]"
                )));
            }
        }
        Ok(Self { entries })
    }

    fn take(&mut self, section: &str, key: &str) -> Option<(String, usize)> {
        self.entries.remove(&(section.to_string(), key.to_string()))
    }

    fn finish(self) -> Result<()> {
        if let Some(((section, key), (_, line))) = self.entries.into_iter().next() {
            return Err(CliError::parse(format!(
                "line {line}: unknown key `{key}` in section [{section}]"
            )));
        }
        Ok(())
    }
}

fn parse_scalar<T: std::str::FromStr>(
    raw: Option<(String, usize)>,
    default: T,
    what: &str,
) -> Result<T> {
    match raw {
        None => Ok(default),
        Some((v, line)) => v
            .parse()
            .map_err(|_| CliError::parse(format!("line {line}: invalid {what} `{v}`"))),
    }
}

fn parse_bool(raw: Option<(String, usize)>, default: bool) -> Result<bool> {
    match raw {
        None => Ok(default),
        Some((v, line)) => match v.as_str() {
            "true" | "yes" | "1" => Ok(true),
            "false" | "no" | "0" => Ok(false),
            other => Err(CliError::parse(format!(
                "line {line}: expected boolean, got `{other}`"
            ))),
        },
    }
}

pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut raw = RawConfig::parse(text)?;
    let d = RunConfig::default();
    let mut cfg = RunConfig::default();

    cfg.seq_len = parse_scalar(raw.take("model", "seq_len"), d.seq_len, "integer")?;
    cfg.label_len = parse_scalar(raw.take("model", "label_len"), d.label_len, "integer")?;
    cfg.pred_len = parse_scalar(raw.take("model", "pred_len"), d.pred_len, "integer")?;
    cfg.l_mdl = parse_scalar(raw.take("model", "l_mdl"), d.l_mdl, "integer")?;
    cfg.d_mdl = parse_scalar(raw.take("model", "d_mdl"), d.d_mdl, "integer")?;
    cfg.d_attn = parse_scalar(raw.take("model", "d_attn"), d.d_attn, "integer")?;
    cfg.heads = parse_scalar(raw.take("model", "heads"), d.heads, "integer")?;
    cfg.enc_layers = parse_scalar(raw.take("model", "enc_layers"), d.enc_layers, "integer")?;
    cfg.dec_layers = parse_scalar(raw.take("model", "dec_layers"), d.dec_layers, "integer")?;
    if let Some((v, line)) = raw.take("model", "ranks") {
        let parts: Vec<&str> = v.split(',').map(str::trim).collect();
        if parts.len() != 3 {
            return Err(CliError::parse(format!(
                "line {line}: ranks must be three comma-separated integers"
            )));
        }
        for (i, p) in parts.iter().enumerate() {
            cfg.ranks[i] = p
                .parse()
                .map_err(|_| CliError::parse(format!("line {line}: invalid rank `{p}`")))?;
        }
    }
    let hooi_max_iter = parse_scalar(raw.take("model", "hooi_max_iter"), 50usize, "integer")?;
    let hooi_tol = parse_scalar(raw.take("model", "hooi_tol"), 1e-8f64, "number")?;
    cfg.tucker = match raw.take("model", "tucker") {
        None => d.tucker,
        Some((v, line)) => match v.as_str() {
            "hosvd" => TuckerAlgorithm::Hosvd,
            "hooi" => TuckerAlgorithm::Hooi {
                max_iter: hooi_max_iter,
                tol: hooi_tol,
            },
            other => {
                return Err(CliError::parse(format!(
                    "line {line}: tucker must be hosvd or hooi, got `{other}`"
                )))
            }
        },
    };
    cfg.use_tea = parse_bool(raw.take("model", "use_tea"), d.use_tea)?;
    cfg.tea_decoder = parse_bool(raw.take("model", "tea_decoder"), d.tea_decoder)?;
    let leaky_slope = parse_scalar(raw.take("model", "leaky_slope"), 0.01f64, "number")?;
    cfg.activation = match raw.take("model", "activation") {
        None => d.activation,
        Some((v, line)) => match v.as_str() {
            "relu" => Activation::Relu,
            "leaky_relu" => Activation::LeakyRelu(leaky_slope),
            other => {
                return Err(CliError::parse(format!(
                    "line {line}: activation must be relu or leaky_relu, got `{other}`"
                )))
            }
        },
    };
    cfg.scale_scores = parse_bool(raw.take("model", "scale_scores"), d.scale_scores)?;
    cfg.layer_norm = parse_bool(raw.take("model", "layer_norm"), d.layer_norm)?;
    cfg.seed = parse_scalar(raw.take("model", "seed"), d.seed, "integer")?;
    cfg.cache_factors = parse_bool(raw.take("model", "cache_factors"), d.cache_factors)?;

    cfg.data_path = raw.take("data", "path").map(|(v, _)| PathBuf::from(v));
    cfg.dataset = raw.take("data", "dataset").map(|(v, _)| v);
    let split_kind = raw.take("data", "split");
    let tr = raw.take("data", "train_ratio");
    let vr = raw.take("data", "val_ratio");
    let ter = raw.take("data", "test_ratio");
    let tm = raw.take("data", "train_months");
    let vm = raw.take("data", "val_months");
    let tem = raw.take("data", "test_months");
    cfg.split = match split_kind.as_ref().map(|(v, _)| v.as_str()) {
        None | Some("ratio") => SplitSpec::Ratio {
            train: parse_scalar(tr, 0.7, "number")?,
            val: parse_scalar(vr, 0.1, "number")?,
            test: parse_scalar(ter, 0.2, "number")?,
        },
        Some("months") => SplitSpec::Months {
            train: parse_scalar(tm, 28u32, "integer")?,
            val: parse_scalar(vm, 10u32, "integer")?,
            test: parse_scalar(tem, 10u32, "integer")?,
        },
        Some(other) => {
            let line = split_kind.as_ref().map(|&(_, l)| l).unwrap_or(0);
            return Err(CliError::parse(format!(
                "line {line}: split must be ratio or months, got `{other}`"
            )));
        }
    };

    cfg.optimizer = match raw.take("train", "optimizer") {
        None => d.optimizer,
        Some((v, line)) => match v.as_str() {
            "adam" => OptimizerKind::Adam,
            "sgd" => OptimizerKind::Sgd,
            other => {
                return Err(CliError::parse(format!(
                    "line {line}: optimizer must be adam or sgd, got `{other}`"
                )))
            }
        },
    };
    cfg.lr = parse_scalar(raw.take("train", "lr"), d.lr, "number")?;
    cfg.batch_size = parse_scalar(raw.take("train", "batch_size"), d.batch_size, "integer")?;
    cfg.epochs = parse_scalar(raw.take("train", "epochs"), d.epochs, "integer")?;
    cfg.patience = parse_scalar(raw.take("train", "patience"), d.patience, "integer")?;

    cfg.out_dir = raw
        .take("output", "dir")
        .map(|(v, _)| PathBuf::from(v))
        .unwrap_or(d.out_dir);

    raw.finish()?;

    if cfg.lr < 0.0 {
        return Err(CliError::parse("lr must be non-negative"));
    }
    if cfg.batch_size == 0 || cfg.epochs == 0 {
        return Err(CliError::parse("batch_size and epochs must be positive"));
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_config(&text)
}

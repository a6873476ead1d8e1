//! Experiment configuration: a TOML file with `[dataset]`, `[model]`,
//! `[train]` and `[prune]` sections plus top-level `seed` and `trials`.
//! Unknown keys are rejected; validation errors name the offending field.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use incop::data::{self, Dataset};
use incop::flow::{FlowDistanceConfig, FlowKind, NormMode};
use incop::imp::{ImpConfig, PruneMethod, RewindTo, StoppingCriterion};
use incop::network::SgdConfig;
use incop::sparsity::{EtaMode, PqConfig};
use incop::{cnn_specs, mlp_specs, LayerSpec};

/// Dataset directory fallback when `dataset.dir` is not set.
pub const DATA_DIR_ENV: &str = "INCOP_DATA_DIR";

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub trials: usize,
    pub dataset: DatasetConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub prune: PruneConfig,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// "synthetic", "mnist" or "fashion-mnist".
    pub name: String,
    /// Directory containing the IDX files; falls back to $INCOP_DATA_DIR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    /// Stratified subset sizes applied after loading.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_train: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    // synthetic generator parameters
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dims: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub margin: Option<f64>,
    #[serde(default)]
    pub data_seed: u64,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// "mlp" or "cnn".
    pub arch: String,
    /// Hidden layer widths (mlp only).
    #[serde(default)]
    pub hidden: Vec<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    #[serde(default)]
    pub weight_decay: f64,
    pub batch_size: usize,
    /// Epoch budget for the reference phase and per-iteration cap.
    #[serde(rename = "E")]
    pub epochs: usize,
    /// Warmup epochs before the reference phase.
    #[serde(rename = "k")]
    pub finetune_epochs: usize,
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PruneConfig {
    /// "sap" or "lth".
    pub method: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    /// "exact" or a fixed nonnegative ratio; defaults to fixed 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_mode: Option<EtaModeConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lth_rate: Option<f64>,
    /// Pruning iterations.
    #[serde(rename = "T")]
    pub iterations: usize,
    /// Present: stop retraining when the flow distance falls within epsilon.
    /// Absent: train the full epoch budget each iteration.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// "gf" or "if"; required with epsilon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_kind: Option<String>,
    /// "per_layer_relative" (default) or "global_l2".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub norm_mode: Option<String>,
    #[serde(default = "default_probe_size")]
    pub probe_size: usize,
    /// "none" (default), "init" or "finetuned".
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rewind: Option<String>,
    /// Prune one weight in layers whose count rounds to zero (default true).
    #[serde(default = "default_true")]
    pub prune_stalled: bool,
}

fn default_probe_size() -> usize {
    1024
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum EtaModeConfig {
    Named(String),
    Fixed(f64),
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> anyhow::Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| anyhow::anyhow!("cannot read config {}: {e}", path.display()))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> anyhow::Result<ExperimentConfig> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| anyhow::anyhow!("config parse error: {e}"))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let fail = |field: &str, msg: String| -> anyhow::Result<()> {
            anyhow::bail!("config field `{field}`: {msg}")
        };
        if self.trials == 0 {
            return fail("trials", "must be >= 1".into());
        }
        match self.dataset.name.as_str() {
            "synthetic" => {
                for (key, present) in [
                    ("dataset.classes", self.dataset.classes.is_some()),
                    ("dataset.dims", self.dataset.dims.is_some()),
                    (
                        "dataset.samples_per_class",
                        self.dataset.samples_per_class.is_some(),
                    ),
                    ("dataset.margin", self.dataset.margin.is_some()),
                ] {
                    if !present {
                        return fail(key, "required when dataset.name = \"synthetic\"".into());
                    }
                }
            }
            "mnist" | "fashion-mnist" => {}
            other => {
                return fail(
                    "dataset.name",
                    format!("unknown dataset \"{other}\" (expected synthetic, mnist or fashion-mnist)"),
                )
            }
        }
        match self.model.arch.as_str() {
            "mlp" => {
                if self.model.hidden.is_empty() {
                    return fail("model.hidden", "mlp needs at least one hidden width".into());
                }
                if self.model.hidden.contains(&0) {
                    return fail("model.hidden", "widths must be >= 1".into());
                }
            }
            "cnn" => {}
            other => return fail("model.arch", format!("unknown arch \"{other}\"")),
        }
        if !(self.train.lr > 0.0) {
            return fail("train.lr", format!("must be positive, got {}", self.train.lr));
        }
        if !(0.0..1.0).contains(&self.train.momentum) {
            return fail(
                "train.momentum",
                format!("must be in [0, 1), got {}", self.train.momentum),
            );
        }
        if self.train.weight_decay < 0.0 {
            return fail(
                "train.weight_decay",
                format!("must be nonnegative, got {}", self.train.weight_decay),
            );
        }
        if self.train.batch_size == 0 {
            return fail("train.batch_size", "must be >= 1".into());
        }
        if self.train.epochs == 0 {
            return fail("train.E", "must be >= 1".into());
        }
        if self.prune.iterations == 0 {
            return fail("prune.T", "must be >= 1".into());
        }
        if self.prune.probe_size == 0 {
            return fail("prune.probe_size", "must be >= 1".into());
        }
        match self.prune.method.as_str() {
            "sap" => {
                for (key, present) in [
                    ("prune.p", self.prune.p.is_some()),
                    ("prune.q", self.prune.q.is_some()),
                    ("prune.gamma", self.prune.gamma.is_some()),
                    ("prune.beta", self.prune.beta.is_some()),
                ] {
                    if !present {
                        return fail(key, "required when prune.method = \"sap\"".into());
                    }
                }
                self.pq_config()
                    .map_err(|e| anyhow::anyhow!("config section `prune`: {e}"))?;
            }
            "lth" => match self.prune.lth_rate {
                None => return fail("prune.lth_rate", "required when prune.method = \"lth\"".into()),
                Some(rate) if !(rate > 0.0 && rate < 1.0) => {
                    return fail("prune.lth_rate", format!("must be in (0, 1), got {rate}"))
                }
                _ => {}
            },
            other => return fail("prune.method", format!("unknown method \"{other}\"")),
        }
        if let Some(eps) = self.prune.epsilon {
            if !(eps > 0.0) {
                return fail("prune.epsilon", format!("must be positive, got {eps}"));
            }
            match self.prune.flow_kind.as_deref() {
                Some("gf") | Some("if") => {}
                Some(other) => {
                    return fail("prune.flow_kind", format!("must be \"gf\" or \"if\", got \"{other}\""))
                }
                None => return fail("prune.flow_kind", "required when prune.epsilon is set".into()),
            }
        }
        if let Some(mode) = self.prune.norm_mode.as_deref() {
            if mode != "per_layer_relative" && mode != "global_l2" {
                return fail(
                    "prune.norm_mode",
                    format!("must be \"per_layer_relative\" or \"global_l2\", got \"{mode}\""),
                );
            }
        }
        if let Some(rewind) = self.prune.rewind.as_deref() {
            if !matches!(rewind, "none" | "init" | "finetuned") {
                return fail(
                    "prune.rewind",
                    format!("must be \"none\", \"init\" or \"finetuned\", got \"{rewind}\""),
                );
            }
        }
        if let Some(EtaModeConfig::Named(name)) = &self.prune.eta_mode {
            if name != "exact" {
                return fail(
                    "prune.eta_mode",
                    format!("must be \"exact\" or a nonnegative number, got \"{name}\""),
                );
            }
        }
        if let Some(EtaModeConfig::Fixed(v)) = &self.prune.eta_mode {
            if *v < 0.0 {
                return fail("prune.eta_mode", format!("fixed ratio must be nonnegative, got {v}"));
            }
        }
        Ok(())
    }

    /// Canonical hash: the parsed config re-serialized with fixed field
    /// order, so files that differ only in key order hash identically.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_string(self).expect("config serializes");
        let mut hasher = Sha256::new();
        hasher.update(canonical.as_bytes());
        hex_string(&hasher.finalize())
    }

    pub fn pq_config(&self) -> incop::Result<PqConfig> {
        let eta = match &self.prune.eta_mode {
            None => EtaMode::Fixed(0.0),
            Some(EtaModeConfig::Fixed(v)) => EtaMode::Fixed(*v),
            Some(EtaModeConfig::Named(_)) => EtaMode::Exact,
        };
        PqConfig::new(
            self.prune.p.unwrap_or(0.0),
            self.prune.q.unwrap_or(0.0),
            self.prune.gamma.unwrap_or(0.0),
            self.prune.beta.unwrap_or(0.0),
            eta,
        )
    }

    pub fn method(&self) -> incop::Result<PruneMethod> {
        match self.prune.method.as_str() {
            "lth" => Ok(PruneMethod::Lth {
                rate: self.prune.lth_rate.unwrap_or(0.0),
            }),
            _ => Ok(PruneMethod::Sap(self.pq_config()?)),
        }
    }

    pub fn flow_kind(&self) -> Option<FlowKind> {
        match self.prune.flow_kind.as_deref() {
            Some("if") => Some(FlowKind::Connectivity),
            Some("gf") => Some(FlowKind::GradientFlow),
            _ => None,
        }
    }

    pub fn dist_config(&self) -> FlowDistanceConfig {
        let norm_mode = match self.prune.norm_mode.as_deref() {
            Some("global_l2") => NormMode::GlobalL2,
            _ => NormMode::PerLayerRelative,
        };
        FlowDistanceConfig {
            norm_mode,
            epsilon_floor: 1e-12,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.train.lr,
            momentum: self.train.momentum,
            weight_decay: self.train.weight_decay,
            batch_size: self.train.batch_size,
        }
    }

    fn stopping(&self) -> anyhow::Result<StoppingCriterion> {
        match self.prune.epsilon {
            None => Ok(StoppingCriterion::FixedEpochs {
                epochs: self.train.epochs,
            }),
            Some(epsilon) => {
                let kind = self
                    .flow_kind()
                    .ok_or_else(|| anyhow::anyhow!("config field `prune.flow_kind`: required"))?;
                Ok(StoppingCriterion::FlowEpsilon {
                    kind,
                    epsilon,
                    dist_cfg: self.dist_config(),
                    max_epochs: self.train.epochs,
                })
            }
        }
    }

    /// Engine config for one trial. Trial seeds are `seed + trial_index`.
    pub fn imp_config(&self, trial: usize, seed_override: Option<u64>) -> anyhow::Result<ImpConfig> {
        let base = seed_override.unwrap_or(self.seed);
        let rewind = match self.prune.rewind.as_deref() {
            Some("init") => RewindTo::Init,
            Some("finetuned") => RewindTo::Finetuned,
            _ => RewindTo::None,
        };
        Ok(ImpConfig {
            iterations: self.prune.iterations,
            max_epochs: self.train.epochs,
            finetune_epochs: self.train.finetune_epochs,
            method: self.method()?,
            stopping: self.stopping()?,
            sgd: self.sgd(),
            seed: base.wrapping_add(trial as u64),
            trials: self.trials,
            probe_size: self.prune.probe_size,
            probe_seed: base,
            rewind,
            prune_stalled_layers: self.prune.prune_stalled,
        })
    }

    /// Layer stack for the configured architecture and dataset shape.
    pub fn layer_specs(&self, input_shape: &[usize], classes: usize) -> anyhow::Result<Vec<LayerSpec>> {
        let input_dim: usize = input_shape.iter().product();
        match self.model.arch.as_str() {
            "cnn" => {
                let side = match *input_shape {
                    [rows, cols] if rows == cols => rows,
                    [1, rows, cols] if rows == cols => rows,
                    [dim] => {
                        let side = (dim as f64).sqrt() as usize;
                        if side * side != dim {
                            anyhow::bail!(
                                "config field `model.arch`: cnn needs square inputs, got {dim} features"
                            );
                        }
                        side
                    }
                    _ => anyhow::bail!(
                        "config field `model.arch`: cnn needs square inputs, got shape {input_shape:?}"
                    ),
                };
                Ok(cnn_specs(side, classes)?)
            }
            _ => Ok(mlp_specs(input_dim, &self.model.hidden, classes)),
        }
    }

    /// Human-readable method label used in comparison reports:
    /// fixed-stopping runs keep the method name, flow runs become
    /// incop-gf / incop-if.
    pub fn method_label(&self) -> String {
        match (self.prune.epsilon.is_some(), self.prune.flow_kind.as_deref()) {
            (true, Some(kind)) => format!("incop-{kind}"),
            _ => self.prune.method.clone(),
        }
    }

    /// "p-q" label for adaptive runs, empty for fixed-rate runs.
    pub fn pq_label(&self) -> String {
        match (self.prune.method.as_str(), self.prune.p, self.prune.q) {
            ("sap", Some(p), Some(q)) => format!("{p}-{q}"),
            _ => String::new(),
        }
    }

    /// Load, subset and standardize the configured dataset.
    pub fn load_dataset(&self) -> anyhow::Result<Dataset> {
        let mut dataset = match self.dataset.name.as_str() {
            "synthetic" => data::synthetic_dataset(
                self.dataset.classes.unwrap(),
                self.dataset.dims.unwrap(),
                self.dataset.samples_per_class.unwrap(),
                self.dataset.data_seed,
                self.dataset.margin.unwrap(),
            )?,
            name => {
                let dir = match &self.dataset.dir {
                    Some(dir) => dir.clone(),
                    None => PathBuf::from(std::env::var(DATA_DIR_ENV).map_err(|_| {
                        anyhow::anyhow!(
                            "config field `dataset.dir`: not set and ${DATA_DIR_ENV} is undefined"
                        )
                    })?),
                };
                load_idx_dataset(&dir, name)?
            }
        };
        if let (Some(n_train), Some(n_test)) = (self.dataset.n_train, self.dataset.n_test) {
            dataset = data::subset(&dataset, n_train, n_test, self.dataset.data_seed)?;
        }
        data::standardize(&mut dataset)?;
        Ok(dataset)
    }
}

/// Find a file under `dir` trying plain and gzipped names.
fn find_idx_file(dir: &Path, stem: &str) -> anyhow::Result<PathBuf> {
    for name in [stem.to_string(), format!("{stem}.gz")] {
        let p = dir.join(&name);
        if p.exists() {
            return Ok(p);
        }
    }
    anyhow::bail!("dataset file {stem}(.gz) not found under {}", dir.display())
}

fn load_idx_dataset(dir: &Path, _name: &str) -> anyhow::Result<Dataset> {
    let (train_inputs, train_labels) = data::load_idx(
        &find_idx_file(dir, "train-images-idx3-ubyte")?,
        &find_idx_file(dir, "train-labels-idx1-ubyte")?,
    )?;
    let (test_inputs, test_labels) = data::load_idx(
        &find_idx_file(dir, "t10k-images-idx3-ubyte")?,
        &find_idx_file(dir, "t10k-labels-idx1-ubyte")?,
    )?;
    let classes = train_labels
        .iter()
        .chain(test_labels.iter())
        .max()
        .map_or(0, |m| m + 1);
    Ok(Dataset::from_splits(
        train_inputs,
        train_labels,
        test_inputs,
        test_labels,
        classes,
    )?)
}

pub fn hex_string(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

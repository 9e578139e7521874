//! Experiment configuration files.
//!
//! Flat UTF-8 `key = value` lines; `#` starts a comment. Unknown keys are
//! rejected so typos fail fast, and every run echoes its fully resolved
//! configuration (all keys, canonical order) into its output headers.

use crate::error::{Error, Result};
use crate::manifold::{PenaltyKind, PenaltySpec};
use std::path::Path;

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    /// dims.D
    pub dim: Option<usize>,
    /// dims.d
    pub d: Option<usize>,
    pub penalty_kind: PenaltyKind,
    pub penalty_delta: f64,
    pub penalty_lambda: f64,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub data_path: Option<String>,
    pub checkpoint_path: Option<String>,
    pub manifold_flow_enabled: bool,
    pub manifold_flow_blocks: usize,
    pub flow_blocks: usize,
    pub flow_hidden: Vec<usize>,
    pub eval_id_path: Option<String>,
    pub eval_ood_paths: Vec<String>,
    pub score_use_ic: bool,
    pub score_c_const: f64,
    pub output_dir: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: None,
            d: None,
            penalty_kind: PenaltyKind::Huber,
            penalty_delta: 0.1,
            penalty_lambda: 1.0,
            lr: 1e-5,
            batch: 64,
            epochs: 1,
            seed: 0,
            data_path: None,
            checkpoint_path: None,
            manifold_flow_enabled: false,
            manifold_flow_blocks: 4,
            flow_blocks: 8,
            flow_hidden: vec![64, 64],
            eval_id_path: None,
            eval_ood_paths: Vec::new(),
            score_use_ic: false,
            score_c_const: 1.0,
            output_dir: None,
        }
    }
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key:?}: expected a non-negative integer, got {v:?}")))
}

fn parse_u64(key: &str, v: &str) -> Result<u64> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key:?}: expected an integer, got {v:?}")))
}

fn parse_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("key {key:?}: expected a number, got {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "key {key:?}: expected true or false, got {v:?}"
        ))),
    }
}

impl ExperimentConfig {
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value', got {line:?}", ln + 1))
            })?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key:?}",
                    ln + 1
                )));
            }
            seen.push(key.to_string());
            match key {
                "dims.D" => cfg.dim = Some(parse_usize(key, value)?),
                "dims.d" => cfg.d = Some(parse_usize(key, value)?),
                "penalty.kind" => {
                    cfg.penalty_kind = match value {
                        "mse" => PenaltyKind::Mse,
                        "huber" => PenaltyKind::Huber,
                        _ => {
                            return Err(Error::Config(format!(
                                "key \"penalty.kind\": expected mse or huber, got {value:?}"
                            )))
                        }
                    }
                }
                "penalty.delta" => cfg.penalty_delta = parse_f64(key, value)?,
                "penalty.lambda" => cfg.penalty_lambda = parse_f64(key, value)?,
                "optim.lr" => cfg.lr = parse_f64(key, value)?,
                "optim.batch" => cfg.batch = parse_usize(key, value)?,
                "optim.epochs" => cfg.epochs = parse_usize(key, value)?,
                "seed" => cfg.seed = parse_u64(key, value)?,
                "data.path" => cfg.data_path = Some(value.to_string()),
                "checkpoint.path" => cfg.checkpoint_path = Some(value.to_string()),
                "manifold_flow.enabled" => cfg.manifold_flow_enabled = parse_bool(key, value)?,
                "manifold_flow.blocks" => cfg.manifold_flow_blocks = parse_usize(key, value)?,
                "flow.blocks" => cfg.flow_blocks = parse_usize(key, value)?,
                "flow.hidden" => {
                    cfg.flow_hidden = value
                        .split(',')
                        .map(|s| parse_usize(key, s.trim()))
                        .collect::<Result<Vec<_>>>()?;
                    if cfg.flow_hidden.is_empty() {
                        return Err(Error::Config(
                            "key \"flow.hidden\": needs at least one width".into(),
                        ));
                    }
                }
                "eval.id_path" => cfg.eval_id_path = Some(value.to_string()),
                "eval.ood_paths" => {
                    cfg.eval_ood_paths = value
                        .split(',')
                        .map(|s| s.trim().to_string())
                        .filter(|s| !s.is_empty())
                        .collect()
                }
                "score.use_ic" => cfg.score_use_ic = parse_bool(key, value)?,
                "score.c_const" => cfg.score_c_const = parse_f64(key, value)?,
                "output.dir" => cfg.output_dir = Some(value.to_string()),
                _ => {
                    return Err(Error::Config(format!(
                        "line {}: unknown config key {key:?}",
                        ln + 1
                    )))
                }
            }
        }
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse_str(&text)
    }

    /// Canonical resolved form: every key, fixed order, byte-stable for a
    /// given configuration.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let kv = |s: &mut String, k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        kv(&mut s, "dims.D", opt_num(self.dim));
        kv(&mut s, "dims.d", opt_num(self.d));
        kv(
            &mut s,
            "penalty.kind",
            match self.penalty_kind {
                PenaltyKind::Mse => "mse".into(),
                PenaltyKind::Huber => "huber".into(),
            },
        );
        kv(&mut s, "penalty.delta", self.penalty_delta.to_string());
        kv(&mut s, "penalty.lambda", self.penalty_lambda.to_string());
        kv(&mut s, "optim.lr", self.lr.to_string());
        kv(&mut s, "optim.batch", self.batch.to_string());
        kv(&mut s, "optim.epochs", self.epochs.to_string());
        kv(&mut s, "seed", self.seed.to_string());
        kv(&mut s, "data.path", opt_str(&self.data_path));
        kv(&mut s, "checkpoint.path", opt_str(&self.checkpoint_path));
        kv(
            &mut s,
            "manifold_flow.enabled",
            self.manifold_flow_enabled.to_string(),
        );
        kv(
            &mut s,
            "manifold_flow.blocks",
            self.manifold_flow_blocks.to_string(),
        );
        kv(&mut s, "flow.blocks", self.flow_blocks.to_string());
        kv(
            &mut s,
            "flow.hidden",
            self.flow_hidden
                .iter()
                .map(|w| w.to_string())
                .collect::<Vec<_>>()
                .join(","),
        );
        kv(&mut s, "eval.id_path", opt_str(&self.eval_id_path));
        kv(&mut s, "eval.ood_paths", self.eval_ood_paths.join(","));
        kv(&mut s, "score.use_ic", self.score_use_ic.to_string());
        kv(&mut s, "score.c_const", self.score_c_const.to_string());
        kv(&mut s, "output.dir", opt_str(&self.output_dir));
        s
    }

    pub fn penalty_spec(&self) -> Result<PenaltySpec> {
        match self.penalty_kind {
            PenaltyKind::Huber => PenaltySpec::huber(self.penalty_delta, self.penalty_lambda),
            PenaltyKind::Mse => PenaltySpec::mse(self.penalty_lambda),
        }
    }
}

fn opt_num(v: Option<usize>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_str(v: &Option<String>) -> String {
    v.clone().unwrap_or_default()
}

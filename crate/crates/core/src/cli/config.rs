//! Flat `key = value` run configuration.
//!
//! A config file holds one `key = value` per line; `#` starts a comment.
//! Every key can also be given on the command line as `--key value`
//! (hyphens and underscores are interchangeable), and flags win over the
//! file. Resolution starts from the preset of the chosen loss, so a bare
//! `loss = samneg` yields the baseline defaults.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::eval::TieMode;
use crate::losses::LossKind;
use crate::scoring::{ActivationKind, ActivationSpec, ModelKind, ModelSpec};
use crate::trainer::{OptimizerKind, TrainConfig};

/// Every accepted key with a one-line description.
pub const KEYS: &[(&str, &str)] = &[
    ("model", "transe | distmult | rotate | rote | rotl"),
    ("dim", "embedding dimension"),
    (
        "activation",
        "identity | linear2x | xexpx | arctanh2 | hanon | halin",
    ),
    ("beta", "activation slope (defaults per activation)"),
    ("gamma", "activation upper bound"),
    ("loss", "hale | samneg | advneg | allneg | nonneg"),
    ("lambda", "alignment weight (hale)"),
    ("alpha", "query sampling proportion (hale)"),
    ("neg_count", "negatives per positive (samneg, advneg)"),
    ("margin", "logit margin (samneg, advneg)"),
    (
        "adv_temperature",
        "adversarial softmax temperature (advneg)",
    ),
    ("reg_weight", "regularizer weight (nonneg)"),
    ("reg_radius", "target squared radius (nonneg)"),
    ("pos_square", "squared alignment term (hale)"),
    (
        "use_activation",
        "false replaces the activation by the identity",
    ),
    ("rel_ratio", "learn per-relation distance scales"),
    ("optimizer", "adam | sgd"),
    ("learning_rate", "step size"),
    ("batch_size", "positives per step"),
    ("max_seconds", "training time budget, or none"),
    ("max_epochs", "epoch budget, or none"),
    (
        "eval_interval_seconds",
        "seconds of training between snapshots",
    ),
    (
        "eval_interval_epochs",
        "epochs between snapshots, or none for the clock",
    ),
    (
        "eval_subsample",
        "validation queries per snapshot, or none for all",
    ),
    ("tie_mode", "mean | pessimistic | optimistic"),
    ("seed", "random seed"),
    (
        "deterministic",
        "reproducible mode (epoch budget, fixed shards)",
    ),
    ("shards", "gradient shards per batch in reproducible mode"),
];

const ALIASES: &[(&str, &str)] = &[("lr", "learning_rate"), ("dimension", "dim")];

/// Canonical form of a user-supplied key, or an unknown-key error.
pub fn canonical_key(raw: &str) -> Result<&'static str> {
    let k = raw.trim().trim_start_matches("--").replace('-', "_");
    if let Some((_, to)) = ALIASES.iter().find(|(a, _)| *a == k) {
        return Ok(to);
    }
    KEYS.iter()
        .map(|(name, _)| *name)
        .find(|name| *name == k)
        .ok_or(Error::UnknownKey(raw.trim().to_string()))
}

/// Ordered key/value settings; later insertions win.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<&'static str, String>,
}

impl Settings {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let k = canonical_key(key)?;
        self.values.insert(k, value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&'static str, &str)> {
        self.values.iter().map(|(k, v)| (*k, v.as_str()))
    }

    /// Parses config file text.
    pub fn parse_text(&mut self, text: &str, origin: &str) -> Result<()> {
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("{origin}:{}: expected key = value", i + 1))
            })?;
            self.set(k, v)?;
        }
        Ok(())
    }

    pub fn read_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.parse_text(&text, &path.display().to_string())
    }

    /// Parses `--key value`, `--key=value` and bare `--flag` (meaning true).
    pub fn parse_flags(&mut self, args: &[String]) -> Result<()> {
        let mut i = 0;
        while i < args.len() {
            let a = &args[i];
            let Some(body) = a.strip_prefix("--") else {
                return Err(Error::InvalidConfig(format!("unexpected argument {a:?}")));
            };
            if let Some((k, v)) = body.split_once('=') {
                self.set(k, v)?;
                i += 1;
            } else if args.get(i + 1).is_some_and(|v| !v.starts_with("--")) {
                self.set(body, &args[i + 1])?;
                i += 2;
            } else {
                self.set(body, "true")?;
                i += 1;
            }
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(Error::InvalidConfig(format!(
            "{key}: expected true or false, got {v:?}"
        ))),
    }
}

fn parse_opt<T: FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

/// Builds a validated [`TrainConfig`] from settings.
pub fn resolve(s: &Settings) -> Result<TrainConfig> {
    let loss: LossKind = s
        .get("loss")
        .map(str::parse)
        .transpose()?
        .unwrap_or(LossKind::HaLE);
    let model: ModelKind = s
        .get("model")
        .map(str::parse)
        .transpose()?
        .unwrap_or(ModelKind::RotE);
    let dim = s
        .get("dim")
        .map(|v| parse("dim", v))
        .transpose()?
        .unwrap_or(32);
    let mut c = TrainConfig::preset(loss, ModelSpec::new(model, dim)?);
    if let Some(v) = s.get("activation") {
        c.activation = ActivationSpec::new(v.parse::<ActivationKind>()?);
    }
    for (key, v) in s.iter() {
        match key {
            "model" | "dim" | "loss" | "activation" => {}
            "beta" => c.activation.beta = parse(key, v)?,
            "gamma" => c.activation.gamma = parse(key, v)?,
            "lambda" => c.loss.lambda = parse(key, v)?,
            "alpha" => c.loss.sample_alpha = parse(key, v)?,
            "neg_count" => c.loss.neg_count = parse(key, v)?,
            "margin" => c.loss.margin = parse(key, v)?,
            "adv_temperature" => c.loss.adv_temperature = parse(key, v)?,
            "reg_weight" => c.loss.reg_weight = parse(key, v)?,
            "reg_radius" => c.loss.reg_radius = parse(key, v)?,
            "pos_square" => c.ablation.use_pos_square = parse_bool(key, v)?,
            "use_activation" => c.ablation.use_activation = parse_bool(key, v)?,
            "rel_ratio" => c.ablation.use_rel_ratio = parse_bool(key, v)?,
            "optimizer" => c.optimizer = v.parse::<OptimizerKind>()?,
            "learning_rate" => c.learning_rate = parse(key, v)?,
            "batch_size" => c.batch_size = parse(key, v)?,
            "max_seconds" => c.max_seconds = parse_opt(key, v)?,
            "max_epochs" => c.max_epochs = parse_opt(key, v)?,
            "eval_interval_seconds" => c.eval_interval_seconds = parse(key, v)?,
            "eval_interval_epochs" => c.eval_interval_epochs = parse_opt(key, v)?,
            "eval_subsample" => c.eval_subsample = parse_opt(key, v)?,
            "tie_mode" => c.tie_mode = v.parse::<TieMode>()?,
            "seed" => c.seed = parse(key, v)?,
            "deterministic" => c.deterministic = parse_bool(key, v)?,
            "shards" => c.shards = parse(key, v)?,
            other => return Err(Error::UnknownKey(other.to_string())),
        }
    }
    // a time budget given without an epoch budget replaces the preset's
    if s.get("max_seconds").is_some_and(|v| v != "none") && s.get("max_epochs").is_none() {
        c.max_epochs = None;
    }
    c.loss.pos_square = c.ablation.use_pos_square;
    c.validate()?;
    Ok(c)
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "none".to_string(), |x| x.to_string())
}

/// Every key of a resolved config, in a form [`resolve`] reads back to the
/// same config.
pub fn flatten(c: &TrainConfig) -> BTreeMap<&'static str, String> {
    let mut m = BTreeMap::new();
    m.insert("model", c.model.kind.to_string());
    m.insert("dim", c.model.dimension.to_string());
    m.insert("activation", c.activation.kind.name().to_string());
    m.insert("beta", c.activation.beta.to_string());
    m.insert("gamma", c.activation.gamma.to_string());
    m.insert("loss", c.loss.kind.name().to_string());
    m.insert("lambda", c.loss.lambda.to_string());
    m.insert("alpha", c.loss.sample_alpha.to_string());
    m.insert("neg_count", c.loss.neg_count.to_string());
    m.insert("margin", c.loss.margin.to_string());
    m.insert("adv_temperature", c.loss.adv_temperature.to_string());
    m.insert("reg_weight", c.loss.reg_weight.to_string());
    m.insert("reg_radius", c.loss.reg_radius.to_string());
    m.insert("pos_square", c.ablation.use_pos_square.to_string());
    m.insert("use_activation", c.ablation.use_activation.to_string());
    m.insert("rel_ratio", c.ablation.use_rel_ratio.to_string());
    m.insert("optimizer", c.optimizer.to_string());
    m.insert("learning_rate", c.learning_rate.to_string());
    m.insert("batch_size", c.batch_size.to_string());
    m.insert("max_seconds", opt(c.max_seconds));
    m.insert("max_epochs", opt(c.max_epochs));
    m.insert("eval_interval_seconds", c.eval_interval_seconds.to_string());
    m.insert("eval_interval_epochs", opt(c.eval_interval_epochs));
    m.insert("eval_subsample", opt(c.eval_subsample));
    m.insert("tie_mode", c.tie_mode.to_string());
    m.insert("seed", c.seed.to_string());
    m.insert("deterministic", c.deterministic.to_string());
    m.insert("shards", c.shards.to_string());
    m
}

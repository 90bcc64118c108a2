//! Flat `key = value` training configuration files.
//!
//! Blank lines and `#` comments are ignored. Keys mirror [`TrainConfig`]:
//!
//! ```text
//! learning_rate = 1e-4
//! batch_size = 5
//! sequence_length = 300
//! epochs = 100
//! n_passes = 30
//! seed = 7
//! loss_variant = t_kl        # t_kl | gauss_kl | none
//! hidden = 64,64
//! prior_sigma = 1.0
//! likelihood_sigma = 0.1
//! heldout_fraction = 0.2222222222222222
//! select_on = train          # train | heldout
//! complexity = closed_form   # closed_form | monte_carlo
//! ```

use std::path::Path;
use std::str::FromStr;

use crate::bayes_net::Complexity;
use crate::error::{Error, Result};
use crate::training::TrainConfig;

fn parse_value<T: FromStr>(v: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| e.to_string())
}

fn parse_complexity(v: &str) -> std::result::Result<Complexity, String> {
    match v {
        "closed_form" => Ok(Complexity::ClosedForm),
        "monte_carlo" => Ok(Complexity::MonteCarlo),
        other => Err(format!("unknown complexity `{other}` (expected closed_form or monte_carlo)")),
    }
}

fn parse_hidden(v: &str) -> std::result::Result<Vec<usize>, String> {
    if v.trim().is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|p| parse_value::<usize>(p.trim())).collect()
}

/// Applies one `key = value` pair.
pub fn apply_key(cfg: &mut TrainConfig, key: &str, value: &str) -> std::result::Result<(), String> {
    match key {
        "learning_rate" => cfg.learning_rate = parse_value(value)?,
        "batch_size" => cfg.batch_size = parse_value(value)?,
        "sequence_length" => cfg.sequence_length = parse_value(value)?,
        "epochs" => cfg.epochs = parse_value(value)?,
        "n_passes" => cfg.n_passes = parse_value(value)?,
        "seed" => cfg.seed = parse_value(value)?,
        "loss_variant" => cfg.loss_variant = parse_value(value)?,
        "hidden" => cfg.hidden = parse_hidden(value)?,
        "prior_sigma" => cfg.prior_sigma = parse_value(value)?,
        "likelihood_sigma" => cfg.likelihood_sigma = parse_value(value)?,
        "heldout_fraction" => cfg.heldout_fraction = parse_value(value)?,
        "select_on" => cfg.select_on = parse_value(value)?,
        "complexity" => cfg.complexity = parse_complexity(value)?,
        other => return Err(format!("unknown key `{other}`")),
    }
    Ok(())
}

/// Parses config text; `path` is used only in diagnostics.
pub fn parse_config(text: &str, path: &Path) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as u64,
        msg,
    };
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(i + 1, format!("expected `key = value`, found `{line}`")))?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(err(i + 1, format!("duplicate key `{key}`")));
        }
        apply_key(&mut cfg, key, value.trim()).map_err(|m| err(i + 1, format!("{key}: {m}")))?;
    }
    cfg.validate().map_err(|e| err(0, e.to_string()))?;
    Ok(cfg)
}

pub fn read_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_config(&text, path)
}

/// Canonical text form; parses back to an equal config.
pub fn format_config(cfg: &TrainConfig) -> String {
    let hidden: Vec<String> = cfg.hidden.iter().map(|h| h.to_string()).collect();
    let complexity = match cfg.complexity {
        Complexity::ClosedForm => "closed_form",
        Complexity::MonteCarlo => "monte_carlo",
    };
    let select = match cfg.select_on {
        crate::training::Selection::Train => "train",
        crate::training::Selection::Heldout => "heldout",
    };
    format!(
        "learning_rate = {}\nbatch_size = {}\nsequence_length = {}\nepochs = {}\nn_passes = {}\nseed = {}\n\
         loss_variant = {}\nhidden = {}\nprior_sigma = {}\nlikelihood_sigma = {}\nheldout_fraction = {}\n\
         select_on = {select}\ncomplexity = {complexity}\n",
        cfg.learning_rate,
        cfg.batch_size,
        cfg.sequence_length,
        cfg.epochs,
        cfg.n_passes,
        cfg.seed,
        cfg.loss_variant,
        hidden.join(","),
        cfg.prior_sigma,
        cfg.likelihood_sigma,
        cfg.heldout_fraction,
    )
}

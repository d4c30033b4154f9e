//! Flat `key = value` text configuration.
//!
//! One assignment per line, `#` starts a comment, keys are dotted paths
//! (`encoder.variant`, `loss.lambda1`). The same format backs run configs and
//! dataset manifests. The digest is FNV-1a over the canonical (sorted)
//! rendering, so it changes exactly when some key or value changes.

use std::collections::BTreeMap;
use std::path::Path;

use crate::decoder::DecoderConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::feedback::{FeedbackConfig, FeedbackMode};
use crate::loss::LossConfig;
use crate::model::ModelConfig;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct KvConfig {
    map: BTreeMap<String, String>,
}

impl KvConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::config(format!(
                    "config line {}: expected `key = value`, got {raw:?}",
                    lineno + 1
                )));
            };
            let key = key.trim().to_string();
            let value = value.trim().to_string();
            if key.is_empty() {
                return Err(Error::config(format!("config line {}: empty key", lineno + 1)));
            }
            if map.insert(key.clone(), value).is_some() {
                return Err(Error::config(format!(
                    "config line {}: duplicate key {key}",
                    lineno + 1
                )));
            }
        }
        Ok(KvConfig { map })
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn insert(&mut self, key: impl Into<String>, value: impl ToString) {
        self.map.insert(key.into(), value.to_string());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.map.get(key).map(|s| s.as_str())
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.get(key).unwrap_or(default)
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("{key}: expected an integer, got {v:?}"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("{key}: expected an integer, got {v:?}"))),
        }
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64> {
        match self.get(key) {
            None => Ok(default),
            Some(v) => v
                .parse()
                .map_err(|_| Error::config(format!("{key}: expected a number, got {v:?}"))),
        }
    }

    pub fn bool_or(&self, key: &str, default: bool) -> Result<bool> {
        match self.get(key) {
            None => Ok(default),
            Some("true") | Some("1") => Ok(true),
            Some("false") | Some("0") => Ok(false),
            Some(v) => Err(Error::config(format!("{key}: expected true or false, got {v:?}"))),
        }
    }

    /// Comma-separated list of exactly `n` integers.
    pub fn usize_list(&self, key: &str, n: usize) -> Result<Option<Vec<usize>>> {
        let Some(v) = self.get(key) else { return Ok(None) };
        let parts: Vec<usize> = v
            .split(',')
            .map(|p| {
                p.trim()
                    .parse()
                    .map_err(|_| Error::config(format!("{key}: expected integers, got {v:?}")))
            })
            .collect::<Result<_>>()?;
        if parts.len() != n {
            return Err(Error::config(format!(
                "{key}: expected {n} comma-separated values, got {}",
                parts.len()
            )));
        }
        Ok(Some(parts))
    }

    /// Canonical rendering: sorted `key = value` lines.
    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.map {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(v);
            out.push('\n');
        }
        out
    }

    /// FNV-1a over the canonical rendering.
    pub fn digest(&self) -> u64 {
        fnv1a(self.canonical().as_bytes())
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.canonical()).map_err(|e| Error::io(path, e))
    }

    /// Reject keys outside the documented set (prefix match per section).
    pub fn check_known_keys(&self, known: &[&str]) -> Result<()> {
        for key in self.keys() {
            if !known.contains(&key) {
                return Err(Error::config(format!(
                    "unknown config key {key}; known keys: {}",
                    known.join(", ")
                )));
            }
        }
        Ok(())
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

/// Every run-config key the tools accept.
pub const KNOWN_KEYS: [&str; 24] = [
    "encoder.variant",
    "encoder.dims",
    "encoder.depths",
    "encoder.heads",
    "encoder.mlp_ratio",
    "decoder.channels",
    "decoder.topdown",
    "model.num_classes",
    "feedback.mode",
    "feedback.beta_init",
    "feedback.attn_downsample",
    "loss.lambda1",
    "loss.lambda2",
    "loss.lambda3",
    "loss.alpha",
    "train.epochs",
    "train.batch_size",
    "train.lr0",
    "train.eval_every",
    "data.root",
    "data.tile",
    "data.protocol",
    "data.fold",
    "seed",
];

/// Build a model configuration from config keys. `encoder.dims/depths/heads`
/// override the named variant when present.
pub fn model_config(cfg: &KvConfig) -> Result<ModelConfig> {
    let mut encoder = EncoderConfig::from_variant(cfg.str_or("encoder.variant", "s12"))?;
    if let Some(dims) = cfg.usize_list("encoder.dims", 4)? {
        encoder.dims = [dims[0], dims[1], dims[2], dims[3]];
    }
    if let Some(depths) = cfg.usize_list("encoder.depths", 4)? {
        encoder.depths = [depths[0], depths[1], depths[2], depths[3]];
    }
    if let Some(heads) = cfg.usize_list("encoder.heads", 4)? {
        encoder.heads = [heads[0], heads[1], heads[2], heads[3]];
    }
    encoder.mlp_ratio = cfg.usize_or("encoder.mlp_ratio", encoder.mlp_ratio)?;

    let num_classes = cfg.usize_or("model.num_classes", 2)?;
    let decoder = DecoderConfig {
        channels: cfg.usize_or("decoder.channels", 128)?,
        num_classes,
        topdown: cfg.bool_or("decoder.topdown", true)?,
    };

    let feedback = FeedbackConfig {
        mode: FeedbackMode::parse(cfg.str_or("feedback.mode", "lite"))?,
        beta_init: cfg.f64_or("feedback.beta_init", 1.0)?,
        attn_downsample: cfg.usize_or("feedback.attn_downsample", 4)?,
    };

    let model = ModelConfig { encoder, decoder, feedback };
    model.validate()?;
    Ok(model)
}

pub fn loss_config(cfg: &KvConfig) -> Result<LossConfig> {
    let defaults = LossConfig::default();
    let loss = LossConfig {
        lambda1: cfg.f64_or("loss.lambda1", defaults.lambda1)?,
        lambda2: cfg.f64_or("loss.lambda2", defaults.lambda2)?,
        lambda3: cfg.f64_or("loss.lambda3", defaults.lambda3)?,
        alpha: cfg.f64_or("loss.alpha", defaults.alpha)?,
    };
    loss.validate()?;
    Ok(loss)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_comments_and_blanks() {
        let cfg = KvConfig::parse("# header\n\nencoder.variant = s24  # inline\nseed = 7\n").unwrap();
        assert_eq!(cfg.get("encoder.variant"), Some("s24"));
        assert_eq!(cfg.get("seed"), Some("7"));
    }

    #[test]
    fn duplicate_key_rejected() {
        assert!(KvConfig::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn digest_changes_iff_fields_change() {
        let a = KvConfig::parse("x = 1\ny = 2\n").unwrap();
        let same = KvConfig::parse("y = 2\nx = 1\n").unwrap();
        assert_eq!(a.digest(), same.digest());
        let changed_value = KvConfig::parse("x = 1\ny = 3\n").unwrap();
        assert_ne!(a.digest(), changed_value.digest());
        let extra_key = KvConfig::parse("x = 1\ny = 2\nz = 0\n").unwrap();
        assert_ne!(a.digest(), extra_key.digest());
    }

    #[test]
    fn model_from_variant_with_overrides() {
        let cfg = KvConfig::parse("encoder.variant = s12\nencoder.depths = 1,1,2,1\nmodel.num_classes = 5\n").unwrap();
        let model = model_config(&cfg).unwrap();
        assert_eq!(model.encoder.depths, [1, 1, 2, 1]);
        assert_eq!(model.decoder.num_classes, 5);
        assert_eq!(model.decoder.channels, 128);
    }

    #[test]
    fn bad_variant_is_config_error() {
        let cfg = KvConfig::parse("encoder.variant = s13\n").unwrap();
        let err = model_config(&cfg).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_key_flagged() {
        let cfg = KvConfig::parse("encoder.varian = s12\n").unwrap();
        assert!(cfg.check_known_keys(&KNOWN_KEYS).is_err());
    }
}

//! Flat `key=value` configuration files.
//!
//! One assignment per line; blank lines and lines starting with `#` are
//! ignored. Keys mirror the fields of [`TrainConfig`] and the nested
//! encoder and loss configs.

use std::path::Path;

use crate::error::{Error, Result};
use crate::train::TrainConfig;

/// Parses `key=value` lines into ordered pairs.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key=value, got {line:?}", lineno + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn load_train_config(path: &Path) -> Result<TrainConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_train_config(&text)
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (k, v) in parse_pairs(text)? {
        apply(&mut cfg, &k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("bad value {value:?} for key {key}")))
}

fn flag(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {value:?} for key {key}"))),
    }
}

/// Sets one field by key. Unknown keys are a usage error naming the key.
pub fn apply(cfg: &mut TrainConfig, key: &str, value: &str) -> Result<()> {
    let enc = &mut cfg.encoder;
    let loss = &mut cfg.loss;
    match key {
        "image_size" => enc.image_size = num(key, value)?,
        "patch_size" => enc.patch_size = num(key, value)?,
        "embed_dim" => enc.embed_dim = num(key, value)?,
        "num_blocks" => enc.num_blocks = num(key, value)?,
        "num_heads" => enc.num_heads = num(key, value)?,
        "mlp_ratio" => enc.mlp_ratio = num(key, value)?,
        "lora_rank" => enc.lora_rank = num(key, value)?,
        "use_loose_embedding" => enc.use_loose_embedding = flag(key, value)?,
        "pooled_len" => enc.pooled_len = num(key, value)?,
        "mu1" => loss.mu1 = num(key, value)?,
        "mu2" => loss.mu2 = num(key, value)?,
        "focal_gamma" => loss.focal_gamma = num(key, value)?,
        "focal_alpha" => loss.focal_alpha = num(key, value)?,
        "dice_eps" => loss.dice_eps = num(key, value)?,
        "lr" => cfg.lr = num(key, value)?,
        "beta1" => cfg.beta1 = num(key, value)?,
        "beta2" => cfg.beta2 = num(key, value)?,
        "adam_eps" => cfg.adam_eps = num(key, value)?,
        "steps" => cfg.steps = num(key, value)?,
        "batch_size" => cfg.batch_size = num(key, value)?,
        "seed" => cfg.seed = num(key, value)?,
        "noise_sigma" => cfg.noise_sigma = num(key, value)?,
        "box_offset_frac" => cfg.box_offset_frac = num(key, value)?,
        "train_tasks" => {
            cfg.train_tasks = value
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        }
        _ => return Err(Error::Config(format!("unknown config key: {key}"))),
    }
    Ok(())
}

/// Inverse of [`parse_train_config`] for every key.
pub fn to_text(cfg: &TrainConfig) -> String {
    let e = &cfg.encoder;
    let l = &cfg.loss;
    let mut lines = vec![
        format!("image_size={}", e.image_size),
        format!("patch_size={}", e.patch_size),
        format!("embed_dim={}", e.embed_dim),
        format!("num_blocks={}", e.num_blocks),
        format!("num_heads={}", e.num_heads),
        format!("mlp_ratio={}", e.mlp_ratio),
        format!("lora_rank={}", e.lora_rank),
        format!("use_loose_embedding={}", e.use_loose_embedding),
        format!("pooled_len={}", e.pooled_len),
        format!("mu1={}", l.mu1),
        format!("mu2={}", l.mu2),
        format!("focal_gamma={}", l.focal_gamma),
        format!("focal_alpha={}", l.focal_alpha),
        format!("dice_eps={}", l.dice_eps),
        format!("lr={}", cfg.lr),
        format!("beta1={}", cfg.beta1),
        format!("beta2={}", cfg.beta2),
        format!("adam_eps={}", cfg.adam_eps),
        format!("steps={}", cfg.steps),
        format!("batch_size={}", cfg.batch_size),
        format!("seed={}", cfg.seed),
        format!("noise_sigma={}", cfg.noise_sigma),
        format!("box_offset_frac={}", cfg.box_offset_frac),
    ];
    lines.push(format!("train_tasks={}", cfg.train_tasks.join(",")));
    lines.join("\n") + "\n"
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn comments_and_blank_lines() {
        let cfg = parse_train_config("# desk run\n\nsteps = 50\nlr=0.001\nuse_loose_embedding=false\n").unwrap();
        assert_eq!(cfg.steps, 50);
        assert_eq!(cfg.lr, 1e-3);
        assert!(!cfg.encoder.use_loose_embedding);
    }

    #[test]
    fn unknown_key_names_the_key() {
        let err = parse_train_config("warmup=3\n").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("warmup")), "{err}");
    }

    #[test]
    fn text_round_trip() {
        let mut cfg = TrainConfig {
            train_tasks: vec!["t000_ellipse".into(), "t001_annulus".into()],
            ..TrainConfig::default()
        };
        cfg.encoder.num_blocks = 2;
        let back = parse_train_config(&to_text(&cfg)).unwrap();
        assert_eq!(back, cfg);
    }
}

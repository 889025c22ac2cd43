//! `key = value` training configuration files. `#` starts a comment.

use std::path::Path;

use super::trainer::TrainConfig;
use crate::error::{Error, Result};
use crate::io::read_text;
use crate::losses::TERM_NAMES;

fn num<T: std::str::FromStr>(key: &str, v: &str, line: usize) -> Result<T> {
    v.parse().map_err(|_| Error::format(format!("line {line}: invalid value {v:?} for {key}")))
}

pub fn parse_train_config(text: &str) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::default();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let n = n + 1;
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::format(format!("line {n}: expected key = value")))?;
        let (k, v) = (k.trim(), v.trim());
        if let Some(term) = k.strip_prefix("lambda_") {
            let idx = TERM_NAMES
                .iter()
                .position(|t| *t == term)
                .ok_or_else(|| Error::format(format!("line {n}: unknown loss term {term:?}")))?;
            cfg.weights.0[idx] = num(k, v, n)?;
            continue;
        }
        let net = &mut cfg.net;
        match k {
            "lr" => cfg.adam.lr = num(k, v, n)?,
            "beta1" => cfg.adam.beta1 = num(k, v, n)?,
            "beta2" => cfg.adam.beta2 = num(k, v, n)?,
            "adam_eps" => cfg.adam.eps = num(k, v, n)?,
            "halve_every" => cfg.adam.halve_every = num(k, v, n)?,
            "batch_size" => cfg.batch_size = num(k, v, n)?,
            "iters" => cfg.iters = num(k, v, n)?,
            "seed" => cfg.seed = num(k, v, n)?,
            "image_size" => net.image_size = num(k, v, n)?,
            "content_channels" => net.content_channels = num(k, v, n)?,
            "style_dim" => net.style_dim = num(k, v, n)?,
            "mlp_hidden" => net.mlp_hidden = num(k, v, n)?,
            "res_blocks" => net.res_blocks = num(k, v, n)?,
            "enc_width" => net.enc_width = num(k, v, n)?,
            "style_width" => net.style_width = num(k, v, n)?,
            "dec_width" => net.dec_width = num(k, v, n)?,
            "disc_width" => net.disc_width = num(k, v, n)?,
            _ => return Err(Error::format(format!("line {n}: unknown key {k:?}"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_train_config(path: &Path) -> Result<TrainConfig> {
    parse_train_config(&read_text(path)?).map_err(|e| match e {
        Error::Format(m) => Error::format(format!("{}: {m}", path.display())),
        e => e,
    })
}

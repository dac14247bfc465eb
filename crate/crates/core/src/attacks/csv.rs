//! Adversary sets on disk: one CSV row per sample plus a `.meta` sidecar of
//! `key = value` lines.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{AdversarialSample, AttackConfig, AttackSource};
use crate::csvio;
use crate::error::{format_err, Result};

pub fn write(path: &Path, config_hash: &str, samples: &[AdversarialSample]) -> Result<()> {
    let dim = samples.first().map_or(0, |s| s.features.len());
    let mut header: Vec<String> = ["origin_id", "true_label", "source", "epsilon", "iterations"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..dim).map(|i| format!("f{i}")));
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let mut r = vec![
                s.origin_model_id.clone(),
                s.true_label.to_string(),
                s.source.tag().to_string(),
                s.epsilon.to_string(),
                s.iterations.to_string(),
            ];
            r.extend(s.features.iter().map(|v| v.to_string()));
            r
        })
        .collect();
    csvio::write(path, config_hash, &header, &rows)
}

pub fn read(path: &Path) -> Result<Vec<AdversarialSample>> {
    let table = csvio::read(path)?;
    if table.header.len() < 5 || table.header[0] != "origin_id" {
        return Err(format_err(2, "not an adversary CSV"));
    }
    table
        .rows
        .iter()
        .map(|(ln, r)| {
            let source = AttackSource::parse(&r[2])
                .ok_or_else(|| format_err(*ln, format!("unknown source tag {:?}", r[2])))?;
            let features = r[5..]
                .iter()
                .map(|f| csvio::parse::<f64>(f, *ln, "feature"))
                .collect::<Result<Vec<_>>>()?;
            Ok(AdversarialSample {
                features,
                true_label: csvio::parse(&r[1], *ln, "true_label")?,
                source,
                origin_model_id: r[0].clone(),
                epsilon: csvio::parse(&r[3], *ln, "epsilon")?,
                iterations: csvio::parse(&r[4], *ln, "iterations")?,
            })
        })
        .collect()
}

pub fn meta_path(csv_path: &Path) -> PathBuf {
    let mut p = csv_path.as_os_str().to_owned();
    p.push(".meta");
    PathBuf::from(p)
}

/// Writes the sidecar: attacked model hash, attack settings and any extra pairs.
pub fn write_meta(
    csv_path: &Path,
    config_hash: &str,
    model_hash: &str,
    cfg: &AttackConfig,
    extra: &[(&str, String)],
) -> Result<()> {
    let mut out = String::new();
    writeln!(out, "config_hash = {config_hash}").unwrap();
    writeln!(out, "model_hash = {model_hash}").unwrap();
    writeln!(out, "epsilon = {}", cfg.epsilon).unwrap();
    writeln!(out, "iterations = {}", cfg.iterations).unwrap();
    writeln!(out, "step_budget = per-step").unwrap();
    writeln!(out, "clip_min = {}", cfg.clip_min).unwrap();
    writeln!(out, "clip_max = {}", cfg.clip_max).unwrap();
    for (k, v) in extra {
        writeln!(out, "{k} = {v}").unwrap();
    }
    fs::write(meta_path(csv_path), out)?;
    Ok(())
}

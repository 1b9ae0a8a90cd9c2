//! Report serialization and run manifests.
//!
//! Every report is written as pretty JSON (`<name>.json`) next to a manifest
//! (`<name>.manifest.json`) naming the subcommand, its resolved arguments,
//! the seed, and SHA-256 digests of every input file and of the report
//! itself. Reports never contain timestamps or timings, so an identical
//! manifest implies identical report bytes.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub tool: &'static str,
    pub version: &'static str,
    pub subcommand: &'static str,
    /// Fully resolved arguments, defaults included.
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub report: String,
    pub report_sha256: String,
}

/// What a subcommand hands back for emission.
pub struct Emission<R> {
    pub subcommand: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<PathBuf>,
    pub report: R,
    pub human: String,
}

pub struct Sink {
    pub dir: Option<PathBuf>,
    pub json: bool,
    pub quiet: bool,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn digest_file(path: &Path) -> Result<InputDigest> {
    let bytes = fs::read(path).with_context(|| format!("failed to read {}", path.display()))?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: sha256_hex(&bytes),
    })
}

/// Canonical report bytes: pretty JSON with a trailing newline.
pub fn report_bytes<R: Serialize>(report: &R) -> Result<Vec<u8>> {
    let mut bytes = serde_json::to_vec_pretty(report).context("failed to serialize report")?;
    bytes.push(b'\n');
    Ok(bytes)
}

impl Sink {
    /// Wall time goes to stderr only, never into a report.
    pub fn timing(&self, label: &str, start: Instant) {
        if !self.quiet {
            eprintln!("{label}: {:.3} s", start.elapsed().as_secs_f64());
        }
    }

    pub fn emit<R: Serialize>(&self, e: Emission<R>) -> Result<()> {
        let bytes = report_bytes(&e.report)?;
        if let Some(dir) = &self.dir {
            let name = e.subcommand.replace(' ', "_");
            fs::create_dir_all(dir)
                .with_context(|| format!("failed to create {}", dir.display()))?;
            let manifest = RunManifest {
                tool: "aerodet",
                version: env!("CARGO_PKG_VERSION"),
                subcommand: e.subcommand,
                config: e.config,
                seed: e.seed,
                inputs: e
                    .inputs
                    .iter()
                    .map(|p| digest_file(p))
                    .collect::<Result<_>>()?,
                report: format!("{name}.json"),
                report_sha256: sha256_hex(&bytes),
            };
            let report_path = dir.join(&manifest.report);
            fs::write(&report_path, &bytes)
                .with_context(|| format!("failed to write {}", report_path.display()))?;
            let manifest_path = dir.join(format!("{name}.manifest.json"));
            fs::write(&manifest_path, report_bytes(&manifest)?)
                .with_context(|| format!("failed to write {}", manifest_path.display()))?;
        }
        if self.quiet {
            return Ok(());
        }
        if self.json {
            print!(
                "{}",
                String::from_utf8(bytes).expect("serde_json emits UTF-8")
            );
        } else {
            print!("{}", e.human);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    #[test]
    fn writes_report_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let input = dir.path().join("in.txt");
        fs::write(&input, "abc").unwrap();
        let sink = Sink {
            dir: Some(dir.path().join("out")),
            json: true,
            quiet: false,
        };
        sink.emit(Emission {
            subcommand: "eval map",
            config: serde_json::json!({"conf": 0.25}),
            seed: None,
            inputs: vec![input],
            report: serde_json::json!({"map50": 1.0}),
            human: String::new(),
        })
        .unwrap();
        let report = fs::read(dir.path().join("out/eval_map.json")).unwrap();
        let manifest: serde_json::Value = serde_json::from_slice(
            &fs::read(dir.path().join("out/eval_map.manifest.json")).unwrap(),
        )
        .unwrap();
        assert_eq!(manifest["report_sha256"], sha256_hex(&report));
        assert_eq!(manifest["inputs"][0]["sha256"], sha256_hex(b"abc"));
        assert_eq!(manifest["subcommand"], "eval map");
    }
}

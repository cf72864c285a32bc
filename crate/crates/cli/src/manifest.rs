//! Run manifests written next to every output artifact.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Serialize)]
struct InputDigest {
    path: PathBuf,
    sha256: String,
}

#[derive(Debug, Serialize)]
struct Manifest<'a, C: Serialize> {
    tool: &'static str,
    version: &'static str,
    command: &'a str,
    config: &'a C,
    inputs: Vec<InputDigest>,
    outputs: Vec<PathBuf>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// `<output>.manifest.json`
pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    output.with_file_name(name)
}

/// Path next to `output` with `suffix` appended to its file name.
pub fn sibling(output: &Path, suffix: &str) -> PathBuf {
    let mut name = output.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    output.with_file_name(name)
}

/// Writes the manifest for a run. Contains no timestamps, so identical runs
/// produce identical manifests.
pub fn write<C: Serialize>(
    command: &str,
    config: &C,
    inputs: &[&Path],
    outputs: &[PathBuf],
) -> Result<()> {
    let primary = outputs.first().context("manifest needs an output")?;
    let inputs = inputs
        .iter()
        .map(|p| {
            Ok(InputDigest {
                path: p.to_path_buf(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = Manifest {
        tool: "apdf-rank",
        version: env!("CARGO_PKG_VERSION"),
        command,
        config,
        inputs,
        outputs: outputs.to_vec(),
    };
    let path = manifest_path(primary);
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_names() {
        assert_eq!(
            manifest_path(Path::new("out/ranks.jsonl")),
            PathBuf::from("out/ranks.jsonl.manifest.json")
        );
        assert_eq!(sibling(Path::new("p.bin"), ".trace.jsonl"), PathBuf::from("p.bin.trace.jsonl"));
    }
}

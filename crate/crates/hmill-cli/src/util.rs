use std::io::BufRead;
use std::path::{Path, PathBuf};

use hmill::{Error, Result};
use serde_json::Value;
use sha2::{Digest, Sha256};

/// Reads a JSONL corpus; parse failures carry the line number.
pub fn read_jsonl(path: &Path) -> Result<Vec<Value>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut docs = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: Value = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::Invalid(format!(
            "{} contains no documents",
            path.display()
        )));
    }
    Ok(docs)
}

/// Writes via a temporary file in the same directory plus rename, so
/// readers never observe a half-written file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp-write");
    std::fs::write(&tmp, contents)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

/// Parses a comma-separated `name=path` relation list; names must be
/// unique and nonempty.
pub fn parse_relation_specs(spec: &str) -> Result<Vec<(String, PathBuf)>> {
    let mut out: Vec<(String, PathBuf)> = Vec::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        let Some((name, path)) = part.split_once('=') else {
            return Err(Error::Invalid(format!(
                "relation {part:?} is not of the form name=path"
            )));
        };
        if name.is_empty() || path.is_empty() {
            return Err(Error::Invalid(format!("relation {part:?} has empty parts")));
        }
        if out.iter().any(|(n, _)| n == name) {
            return Err(Error::Invalid(format!("relation name {name:?} repeated")));
        }
        out.push((name.to_string(), PathBuf::from(path)));
    }
    if out.is_empty() {
        return Err(Error::Invalid("no relations given".into()));
    }
    Ok(out)
}

pub fn parse_agg(spec: &str) -> Result<Vec<hmill::agg::AggKind>> {
    let kinds: Vec<hmill::agg::AggKind> = spec
        .split(',')
        .filter(|s| !s.trim().is_empty())
        .map(str::parse)
        .collect::<Result<_>>()?;
    if kinds.is_empty() {
        return Err(Error::Invalid("at least one aggregation required".into()));
    }
    Ok(kinds)
}

/// Stable named sub-stream of the run seed.
pub fn substream(seed: u64, name: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0u8]);
    hasher.update(name.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

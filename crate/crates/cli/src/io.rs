use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};
use reluopt::{load_network, BoundSet, ReluNetwork};
use serde_json::Value;
use tempfile::NamedTempFile;

/// Writes through a temporary file in the target directory and renames it
/// into place, so readers never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).with_context(|| format!("cannot write in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).with_context(|| format!("cannot replace {}", path.display()))?;
    Ok(())
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

pub fn read_network(path: &Path) -> Result<ReluNetwork> {
    load_network(&read_text(path)?).with_context(|| format!("bad network file {}", path.display()))
}

pub fn read_bounds(path: &Path) -> Result<BoundSet> {
    BoundSet::from_json(&read_text(path)?).with_context(|| format!("bad bounds file {}", path.display()))
}

fn number(v: &Value) -> Result<f64> {
    v.as_f64().with_context(|| format!("{v} is not a number"))
}

fn interval(v: &Value) -> Result<(f64, f64)> {
    match v.as_array().map(Vec::as_slice) {
        Some([lo, hi]) => {
            let (lo, hi) = (number(lo)?, number(hi)?);
            if !(lo <= hi) {
                bail!("interval [{lo}, {hi}] is empty");
            }
            Ok((lo, hi))
        }
        _ => bail!("expected an interval [lo, hi], got {v}"),
    }
}

/// A box given as `[lo,hi]` (same interval on every axis), as a list of
/// intervals, or as a path to a JSON file holding either form.
pub fn parse_box(spec: &str, dim: usize) -> Result<Vec<(f64, f64)>> {
    let value: Value = match serde_json::from_str(spec.trim()) {
        Ok(v) => v,
        Err(_) => {
            let text = read_text(Path::new(spec))?;
            serde_json::from_str(&text).with_context(|| format!("{spec} does not hold a JSON box"))?
        }
    };
    let items = value.as_array().with_context(|| format!("box {spec} must be a JSON array"))?;
    if items.iter().all(Value::is_array) && !items.is_empty() {
        let b = items.iter().map(interval).collect::<Result<Vec<_>>>()?;
        if b.len() != dim {
            bail!("box has {} intervals for {dim} dimensions", b.len());
        }
        return Ok(b);
    }
    Ok(vec![interval(&value)?; dim])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_forms() {
        assert_eq!(parse_box("[-1,1]", 2).unwrap(), vec![(-1.0, 1.0); 2]);
        assert_eq!(parse_box("[[0,1],[2,3]]", 2).unwrap(), vec![(0.0, 1.0), (2.0, 3.0)]);
        assert!(parse_box("[[0,1]]", 2).is_err());
        assert!(parse_box("[1,0]", 1).is_err());
        assert!(parse_box("[1]", 1).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("box.json");
        fs::write(&p, "[[0, 0.5]]").unwrap();
        assert_eq!(parse_box(p.to_str().unwrap(), 1).unwrap(), vec![(0.0, 0.5)]);
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.txt");
        write_atomic(&p, "one").unwrap();
        write_atomic(&p, "two").unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "two");
        assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}

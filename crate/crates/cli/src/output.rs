//! Provenance-stamped output files.
//!
//! JSON documents carry a top-level `provenance` object; CSV tables start
//! with a `#` comment line. Files are rendered in memory and written in one
//! call so re-runs overwrite them byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use gibbsfit::Result;
use serde::{de::DeserializeOwned, Serialize};
use serde_json::{Map, Value};

pub const TOOL: &str = "gibbsfit";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Clone, Debug)]
pub struct Output {
    dir: PathBuf,
    config_hash: String,
}

impl Output {
    pub fn new(dir: &Path, config_hash: String) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            config_hash,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn provenance(&self) -> Value {
        serde_json::json!({
            "tool": TOOL,
            "version": VERSION,
            "config_sha256": self.config_hash,
        })
    }

    /// Writes `body` with a `provenance` key merged into its top-level object.
    pub fn json<S: Serialize>(&self, name: &str, body: &S) -> Result<PathBuf> {
        let mut doc = Map::new();
        doc.insert("provenance".into(), self.provenance());
        match serde_json::to_value(body)? {
            Value::Object(fields) => doc.extend(fields),
            other => {
                doc.insert("data".into(), other);
            }
        }
        let mut bytes = serde_json::to_vec_pretty(&Value::Object(doc))?;
        bytes.push(b'\n');
        self.write(name, &bytes)
    }

    /// Writes a CSV table produced by `render` behind the provenance comment.
    pub fn csv(&self, name: &str, render: impl FnOnce(&mut Vec<u8>) -> Result<()>) -> Result<PathBuf> {
        let mut bytes = format!("# {TOOL} {VERSION} config_sha256={}\n", self.config_hash).into_bytes();
        render(&mut bytes)?;
        self.write(name, &bytes)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.path(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)?;
        Ok(path)
    }
}

/// Reads a JSON document written by [`Output::json`], ignoring its provenance.
pub fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D> {
    let file = fs::File::open(path)?;
    let mut value: Value = serde_json::from_reader(std::io::BufReader::new(file))?;
    if let Value::Object(fields) = &mut value {
        fields.remove("provenance");
    }
    Ok(serde_json::from_value(value)?)
}

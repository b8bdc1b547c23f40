use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Header line stating the AP normalisation used by every mAP value.
pub const MAP_NOTE: &str = "mAP@k uses truncated AP normalized by min(|relevant|, k)";

/// Named finite scalars plus string metadata.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub values: BTreeMap<String, f64>,
    pub meta: BTreeMap<String, String>,
}

impl MetricReport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        let name = name.into();
        if !value.is_finite() {
            return Err(Error::InvalidArgument(format!("metric {name} is not finite ({value})")));
        }
        self.values.insert(name, value);
        Ok(())
    }

    pub fn with(mut self, name: impl Into<String>, value: f64) -> Result<Self> {
        self.set(name, value)?;
        Ok(self)
    }

    pub fn set_meta(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.meta.insert(key.into(), value.into());
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.values.get(name).copied()
    }

    /// `# key: value` metadata, the mAP note, then one `name=value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# {MAP_NOTE}\n"));
        for (k, v) in &self.meta {
            out.push_str(&format!("# {k}: {v}\n"));
        }
        for (k, v) in &self.values {
            out.push_str(&format!("{k}={v}\n"));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        v["note"] = serde_json::Value::String(MAP_NOTE.into());
        serde_json::to_string_pretty(&v).expect("report serializes")
    }

    /// Writes `path` and its `.json` twin; returns both paths.
    pub fn write(&self, path: &Path) -> Result<(PathBuf, PathBuf)> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))?;
        let json = path.with_extension("json");
        fs::write(&json, self.to_json()).map_err(|e| Error::io(&json, e))?;
        Ok((path.to_path_buf(), json))
    }

    /// Parses the text form back.
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut r = Self::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix("# ") {
                if let Some((k, v)) = rest.split_once(": ") {
                    if rest != MAP_NOTE {
                        r.set_meta(k, v);
                    }
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidArgument(format!("bad report line `{line}`")))?;
            let v: f64 = v
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad value in `{line}`")))?;
            r.set(k, v)?;
        }
        Ok(r)
    }
}

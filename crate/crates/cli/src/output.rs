use std::fs;
use std::path::{Component, Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Map, Value};
use tinytok_core::{text, Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

/// Per-invocation state: where outputs go, what was read, and the
/// configuration file the flags are layered over.
pub struct Ctx {
    pub command: &'static str,
    pub out_dir: PathBuf,
    pub seed: u64,
    config: Value,
    inputs: Vec<InputDigest>,
    started: Instant,
}

impl Ctx {
    pub fn new(command: &'static str, out_dir: PathBuf, seed: u64, config: Value) -> Result<Self> {
        fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
        Ok(Ctx {
            command,
            out_dir,
            seed,
            config,
            inputs: Vec::new(),
            started: Instant::now(),
        })
    }

    /// Effective settings for this command: its section of the config file
    /// with every flag the user actually gave laid on top.
    pub fn settings<T: DeserializeOwned>(&self, flags: &impl Serialize) -> Result<T> {
        let mut merged = match self.config.get(self.command) {
            Some(Value::Object(m)) => m.clone(),
            Some(_) => {
                return Err(Error::invalid(
                    "config",
                    format!("section {:?} must be an object", self.command),
                ))
            }
            None => Map::new(),
        };
        let Value::Object(given) = serde_json::to_value(flags).expect("flags serialize") else {
            unreachable!("flag structs serialize to objects")
        };
        for (k, v) in given {
            let unset = match &v {
                Value::Null => true,
                Value::Bool(b) => !b,
                Value::Array(a) => a.is_empty(),
                _ => false,
            };
            if !unset {
                merged.insert(k, v);
            }
        }
        serde_json::from_value(Value::Object(merged)).map_err(|e| Error::invalid("config", e.to_string()))
    }

    /// Records an input file's digest for the report.
    pub fn input(&mut self, path: &Path) -> Result<()> {
        let sha256 = text::sha256_file(path)?;
        self.inputs.push(InputDigest {
            path: path.display().to_string(),
            sha256,
        });
        Ok(())
    }

    /// Resolves an output path inside the output directory. Absolute paths
    /// and paths that climb out of it are refused.
    pub fn out_path(&self, rel: &Path) -> Result<PathBuf> {
        let escapes = rel
            .components()
            .any(|c| matches!(c, Component::ParentDir | Component::RootDir | Component::Prefix(_)));
        if escapes || rel.as_os_str().is_empty() {
            return Err(Error::invalid(
                "out",
                format!("{} must be a relative path inside the output directory", rel.display()),
            ));
        }
        let p = self.out_dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        Ok(p)
    }

    pub fn write_text(&self, rel: &Path, content: &str) -> Result<PathBuf> {
        let p = self.out_path(rel)?;
        fs::write(&p, content).map_err(|e| Error::io(&p, e))?;
        Ok(p)
    }

    /// Writes `result` with a `meta` block as pretty JSON, plus a timing
    /// sidecar that holds everything run-dependent.
    pub fn write_report(&self, rel: &Path, result: &impl Serialize, settings: &impl Serialize) -> Result<PathBuf> {
        let mut value = serde_json::to_value(result).map_err(|e| Error::Numerical(e.to_string()))?;
        let Value::Object(map) = &mut value else {
            unreachable!("reports serialize to objects")
        };
        map.insert(
            "meta".into(),
            json!({
                "tool": "tinytok",
                "version": env!("CARGO_PKG_VERSION"),
                "command": self.command,
                "seed": self.seed,
                "inputs": self.inputs,
                "config": settings,
            }),
        );
        let mut body = serde_json::to_string_pretty(&value).expect("report serializes");
        body.push('\n');
        let path = self.write_text(rel, &body)?;

        let stem = rel
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let timing = rel.with_file_name(format!("{stem}.timing.json"));
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs_f64() - self.started.elapsed().as_secs_f64())
            .unwrap_or(0.0);
        let sidecar = json!({
            "command": self.command,
            "started_unix": started_unix,
            "elapsed_ms": self.started.elapsed().as_secs_f64() * 1e3,
        });
        self.write_text(
            &timing,
            &(serde_json::to_string_pretty(&sidecar).expect("timing serializes") + "\n"),
        )?;
        println!("{}", path.display());
        Ok(path)
    }
}

pub fn require<T>(v: Option<T>, flag: &'static str) -> Result<T> {
    v.ok_or_else(|| Error::invalid(flag, "is required (flag or config file)"))
}

/// `report.json` -> `report.<suffix>`
pub fn sibling(rel: &Path, suffix: &str) -> PathBuf {
    let stem = rel
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    rel.with_file_name(format!("{stem}.{suffix}"))
}

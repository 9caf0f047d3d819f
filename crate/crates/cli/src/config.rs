//! Flat `key=value` run configuration. Values come from an optional config
//! file and are overridden by command-line flags; every key a command reads
//! is echoed with its final value.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};

use crate::UsageError;

pub const KEYS: &[&str] = &[
    "batch_size",
    "checkpoint",
    "data_dir",
    "epochs",
    "fold",
    "folds",
    "holdout",
    "image",
    "images_per_patient",
    "k",
    "log",
    "lr",
    "manifest",
    "mode",
    "momentum",
    "none",
    "on",
    "out",
    "parallel_folds",
    "precision",
    "preset",
    "primary",
    "sa",
    "save_checkpoints",
    "secondary",
    "seed",
    "size",
    "source_checkpoint",
    "task",
    "weight_decay",
];

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "RESNESAT_DATA_DIR";

#[derive(Debug, Default)]
pub struct RunConfig {
    file: BTreeMap<String, String>,
    flags: BTreeMap<String, String>,
    resolved: BTreeMap<String, String>,
}

fn check_key(key: &str) -> Result<()> {
    if KEYS.contains(&key) {
        Ok(())
    } else {
        Err(UsageError(format!("unknown config key '{key}'")).into())
    }
}

impl RunConfig {
    pub fn parse_file_text(text: &str) -> Result<BTreeMap<String, String>> {
        let mut map = BTreeMap::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| UsageError(format!("config line {}: expected key=value", n + 1)))?;
            let key = k.trim().replace('-', "_");
            check_key(&key).with_context(|| format!("config line {}", n + 1))?;
            map.insert(key, v.trim().to_string());
        }
        Ok(map)
    }

    pub fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| UsageError(format!("config file {}: {e}", p.display())))?;
                Self::parse_file_text(&text)?
            }
            None => BTreeMap::new(),
        };
        Ok(RunConfig {
            file,
            ..Default::default()
        })
    }

    /// Record a flag value; `None` leaves the file value or default in place.
    pub fn flag<V: ToString>(&mut self, key: &str, value: Option<V>) -> &mut Self {
        debug_assert!(KEYS.contains(&key), "{key}");
        if let Some(v) = value {
            self.flags.insert(key.to_string(), v.to_string());
        }
        self
    }

    fn raw(&self, key: &str) -> Option<&String> {
        self.flags.get(key).or_else(|| self.file.get(key))
    }

    fn parse<T: FromStr>(&self, key: &str, raw: &str) -> Result<T>
    where
        T::Err: Display,
    {
        raw.parse()
            .map_err(|e| UsageError(format!("invalid value '{raw}' for {key}: {e}")).into())
    }

    /// Value for `key`, or `default` when neither file nor flags set it.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        let value = match self.raw(key).cloned() {
            Some(raw) => self.parse(key, &raw)?,
            None => default,
        };
        self.resolved.insert(key.to_string(), value.to_string());
        Ok(value)
    }

    pub fn get_opt<T: FromStr + Display>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let value: Option<T> = match self.raw(key).cloned() {
            Some(raw) => Some(self.parse(key, &raw)?),
            None => None,
        };
        self.resolved.insert(
            key.to_string(),
            value.as_ref().map_or_else(|| "-".to_string(), T::to_string),
        );
        Ok(value)
    }

    pub fn path(&mut self, key: &str, default: PathBuf) -> Result<PathBuf> {
        let p: String = self.get(key, default.display().to_string())?;
        Ok(PathBuf::from(p))
    }

    /// The data directory: `data_dir` key, else the environment variable,
    /// else `data`.
    pub fn data_dir(&mut self) -> Result<PathBuf> {
        let fallback = std::env::var(DATA_DIR_ENV).unwrap_or_else(|_| "data".to_string());
        self.path("data_dir", PathBuf::from(fallback))
    }

    /// Sorted `key=value` lines of everything resolved so far.
    pub fn echo(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

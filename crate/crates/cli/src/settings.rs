//! Flag / config-file resolution. Flags win over file values, which win over
//! defaults. Every resolved value is recorded for echoing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::CliError;

#[derive(Debug, Default)]
pub struct Settings {
    file: BTreeMap<String, String>,
    used: BTreeSet<String>,
    resolved: Vec<(String, String)>,
}

impl Settings {
    pub fn from_file(path: Option<&Path>) -> Result<Self, CliError> {
        let mut s = Settings::default();
        if let Some(p) = path {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("config {}: {e}", p.display())))?;
            s.file = parse_kv(&text)?;
        }
        Ok(s)
    }

    fn lookup<T: FromStr>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let Some(raw) = self.file.get(key) else { return Ok(None) };
        self.used.insert(key.to_string());
        raw.parse().map(Some).map_err(|e| CliError::Usage(format!("config key {key}={raw}: {e}")))
    }

    fn record(&mut self, key: &str, value: &impl Display) {
        self.resolved.push((key.to_string(), value.to_string()));
    }

    /// Flag, then file, then `default`.
    pub fn get<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let file = self.lookup(key)?;
        let v = flag.or(file).unwrap_or(default);
        self.record(key, &v);
        Ok(v)
    }

    pub fn opt<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        let file = self.lookup(key)?;
        let v = flag.or(file);
        if let Some(v) = &v {
            self.record(key, v);
        }
        Ok(v)
    }

    pub fn required<T: FromStr + Display>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.opt(key, flag)?.ok_or_else(|| CliError::Usage(format!("missing required value --{key}")))
    }

    /// Records a value derived from other settings.
    pub fn derived(&mut self, key: &str, value: impl Display) {
        self.record(key, &value);
    }

    /// Rejects config-file keys the subcommand never asked for.
    pub fn finish(&self) -> Result<(), CliError> {
        let unknown: Vec<_> = self.file.keys().filter(|k| !self.used.contains(*k)).cloned().collect();
        if unknown.is_empty() {
            Ok(())
        } else {
            Err(CliError::Usage(format!("unknown config keys: {}", unknown.join(", "))))
        }
    }

    pub fn echo(&self) -> String {
        self.resolved.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

/// `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_kv(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value", n + 1)))?;
        let k = k.trim().trim_start_matches("--").replace('_', "-");
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(CliError::Usage(format!("config line {}: duplicate key {k}", n + 1)));
        }
    }
    Ok(out)
}

/// Comma-separated list of fixed or open length.
#[derive(Debug, Clone, PartialEq)]
pub struct List<T>(pub Vec<T>);

impl<T: FromStr> FromStr for List<T>
where
    T::Err: Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(|p| p.trim().parse::<T>().map_err(|e| format!("{p:?}: {e}")))
            .collect::<Result<_, _>>()
            .map(List)
    }
}

impl<T: Display> Display for List<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let parts: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

impl<T> List<T> {
    pub fn exact<const N: usize>(self, key: &str) -> Result<[T; N], CliError> {
        let n = self.0.len();
        self.0.try_into().map_err(|_| CliError::Usage(format!("--{key} needs {N} values, got {n}")))
    }
}

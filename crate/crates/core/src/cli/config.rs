//! Flat `key = value` run settings.
//!
//! Settings are layered: command defaults, then a preset, then a config file,
//! then explicit flags. The merged map is what a run actually uses and is
//! written back verbatim as the run manifest, so `--config manifest.txt`
//! re-executes a run.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const SIMULATE_KEYS: &[&str] =
    &["gamma2", "tau", "q", "n", "ensemble", "seed", "bins", "log_bins", "threads", "out_dir"];

pub const SOLVE_KEYS: &[&str] = &[
    "gamma2",
    "tau",
    "q",
    "grid",
    "sim_grid",
    "ensemble",
    "tol",
    "max_iter",
    "eps_im",
    "richardson",
    "kernel",
    "moment_match",
    "accel",
    "relax",
    "anderson_depth",
    "points",
    "lambda_min",
    "lambda_max",
    "dump_k",
    "seed",
    "threads",
    "out_dir",
];

/// Keys that never influence numerical output.
pub const PLUMBING_KEYS: &[&str] = &["threads", "out_dir"];

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Settings(BTreeMap<String, String>);

impl Settings {
    pub fn from_pairs(pairs: &[(&str, &str)]) -> Self {
        Self(pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("{origin}:{}: expected 'key = value'", lineno + 1)))?;
            let key = k.trim();
            if !SIMULATE_KEYS.contains(&key) && !SOLVE_KEYS.contains(&key) {
                return Err(Error::Parse(format!("{origin}:{}: unknown key '{key}'", lineno + 1)));
            }
            map.insert(key.to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn set(&mut self, key: &str, value: impl Display) {
        self.0.insert(key.to_string(), value.to_string());
    }

    pub fn set_opt<T: Display>(&mut self, key: &str, value: Option<T>) {
        if let Some(v) = value {
            self.set(key, v);
        }
    }

    /// Later layers win.
    pub fn merge(&mut self, over: &Settings) {
        for (k, v) in &over.0 {
            self.0.insert(k.clone(), v.clone());
        }
    }

    pub fn raw(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        self.raw(key)
            .map(|v| v.parse().map_err(|_| Error::Parse(format!("cannot parse {key} = '{v}'"))))
            .transpose()
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T> {
        self.get(key)?.ok_or_else(|| Error::InvalidParameter(format!("missing required parameter '{key}'")))
    }

    /// Renders the keys in `keys` that are set, one `prefix key = value` per line.
    pub fn render(&self, keys: &[&str], prefix: &str) -> String {
        let mut out = String::new();
        for k in keys {
            if let Some(v) = self.0.get(*k) {
                out.push_str(&format!("{prefix}{k} = {v}\n"));
            }
        }
        out
    }
}

/// A preset: shared settings plus optional named sub-runs.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub base: Settings,
    pub runs: Vec<(String, Settings)>,
}

pub const PRESETS: &[&str] = &["fig2a", "fig2b", "fig3", "fig4"];

pub fn preset(name: &str) -> Result<Preset> {
    let shared = [("q", "1"), ("n", "1024"), ("tau", "0.25")];
    let single = |gamma2: &str| {
        let mut base = Settings::from_pairs(&shared);
        base.set("gamma2", gamma2);
        Preset { base, runs: Vec::new() }
    };
    let sweep = |key: &str, values: &[&str], extra: (&str, &str)| {
        let mut base = Settings::from_pairs(&shared);
        base.set(extra.0, extra.1);
        let runs = values
            .iter()
            .map(|v| (format!("{key}_{v}"), Settings::from_pairs(&[(key, v)])))
            .collect();
        Preset { base, runs }
    };
    match name {
        "fig2a" => Ok(single("0.25")),
        "fig2b" => Ok(single("0.5")),
        "fig3" => Ok(sweep("gamma2", &["0", "0.25", "0.5"], ("tau", "0.25"))),
        "fig4" => {
            let mut p = sweep("tau", &["0.25", "1", "2"], ("gamma2", "0.25"));
            // a vanishing integral scale removes all intermittency
            p.runs.insert(0, ("tau_0".into(), Settings::from_pairs(&[("gamma2", "0")])));
            Ok(p)
        }
        _ => Err(Error::InvalidParameter(format!("unknown preset '{name}' (known: {})", PRESETS.join(", ")))),
    }
}

//! Flat `key = value` experiment configuration.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use kglab::sampler::SeedSpec;
use kglab::{ModelParams, SpaceTimePoint};

use crate::error::CliError;

/// Keys every subcommand accepts.
const COMMON_KEYS: &[&str] = &["a", "m", "T", "replicas", "master_seed", "out_dir", "workers"];

/// Extra keys per subcommand.
pub fn command_keys(command: &str) -> &'static [&'static str] {
    match command {
        "validate" => &[],
        "cov" => &["p", "q"],
        "sample" => &["points", "method", "step"],
        "picard" => &["step", "period", "tol", "max_iter"],
        "lil" => &["w", "z", "n_min", "n_max", "model"],
        "mc" => &["w", "z_lo", "z_hi", "n_min", "n_max", "per_shift", "model", "t0"],
        "simlil" => &["z", "w_list", "n_min", "n_max"],
        "scan" => &["w0", "z_lo", "z_hi", "n_star", "null_runs"],
        "propagate" => &["w0", "z_lo", "z_hi", "n_star", "null_runs", "w_list"],
        _ => &[],
    }
}

/// Resolved configuration: file entries overridden by command-line flags.
#[derive(Debug, Clone, Default)]
pub struct RawConfig {
    pub entries: BTreeMap<String, String>,
}

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(CliError::config(format!("line {}", no + 1), format!("expected `key = value`, got `{line}`")));
            };
            entries.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self { entries })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Applies `--key value` pairs.
    pub fn apply_overrides(&mut self, args: &[String]) -> Result<(), CliError> {
        let mut it = args.iter();
        while let Some(flag) = it.next() {
            let Some(key) = flag.strip_prefix("--") else {
                return Err(CliError::config(flag.clone(), "expected a `--key value` pair"));
            };
            let (key, value) = match key.split_once('=') {
                Some((k, v)) => (k.to_string(), v.to_string()),
                None => {
                    let v = it.next().ok_or_else(|| CliError::config(key, "missing value"))?;
                    (key.to_string(), v.clone())
                }
            };
            self.entries.insert(key, value);
        }
        Ok(())
    }

    pub fn check_known(&self, command: &str) -> Result<(), CliError> {
        let extra = command_keys(command);
        match self.entries.keys().find(|k| !COMMON_KEYS.contains(&k.as_str()) && !extra.contains(&k.as_str())) {
            Some(k) => Err(CliError::config(k.clone(), format!("unknown key for `{command}`"))),
            None => Ok(()),
        }
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn f64_or(&self, key: &str, default: f64) -> Result<f64, CliError> {
        self.raw(key).map_or(Ok(default), |v| parse_f64(key, v))
    }

    pub fn usize_or(&self, key: &str, default: usize) -> Result<usize, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| CliError::config(key, format!("expected a non-negative integer, got `{v}`"))),
        }
    }

    pub fn u64_or(&self, key: &str, default: u64) -> Result<u64, CliError> {
        Ok(self.usize_or(key, default as usize)? as u64)
    }

    pub fn str_or<'a>(&'a self, key: &str, default: &'a str) -> &'a str {
        self.raw(key).unwrap_or(default)
    }

    pub fn f64_list_or(&self, key: &str, default: &[f64]) -> Result<Vec<f64>, CliError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v.split(',').map(|s| parse_f64(key, s.trim())).collect(),
        }
    }

    pub fn point(&self, key: &str, default: Option<SpaceTimePoint>) -> Result<SpaceTimePoint, CliError> {
        match self.raw(key) {
            None => default.ok_or_else(|| CliError::config(key, "required")),
            Some(v) => parse_point(key, v),
        }
    }

    /// `t,x; t,x; ...`
    pub fn points(&self, key: &str, default: &[SpaceTimePoint]) -> Result<Vec<SpaceTimePoint>, CliError> {
        match self.raw(key) {
            None => Ok(default.to_vec()),
            Some(v) => v.split(';').filter(|s| !s.trim().is_empty()).map(|s| parse_point(key, s)).collect(),
        }
    }
}

fn parse_f64(key: &str, v: &str) -> Result<f64, CliError> {
    let x: f64 = v.parse().map_err(|_| CliError::config(key, format!("expected a number, got `{v}`")))?;
    if !x.is_finite() {
        return Err(CliError::config(key, format!("must be finite, got `{v}`")));
    }
    Ok(x)
}

fn parse_point(key: &str, v: &str) -> Result<SpaceTimePoint, CliError> {
    let parts: Vec<&str> = v.split(',').map(str::trim).collect();
    if parts.len() != 2 {
        return Err(CliError::config(key, format!("expected `t,x`, got `{v}`")));
    }
    Ok(SpaceTimePoint::new(parse_f64(key, parts[0])?, parse_f64(key, parts[1])?))
}

/// Settings shared by every subcommand.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub command: String,
    pub params: ModelParams,
    pub replicas: usize,
    pub master_seed: u64,
    pub out_dir: PathBuf,
    pub workers: Option<usize>,
    pub raw: RawConfig,
}

pub const DEFAULT_OUT_DIR: &str = "kglab-out";
pub const OUT_DIR_ENV: &str = "KGLAB_OUT";

impl ExperimentConfig {
    pub fn resolve(command: &str, raw: RawConfig) -> Result<Self, CliError> {
        raw.check_known(command)?;
        let a = raw.f64_or("a", 1.0)?;
        let m = raw.f64_or("m", 0.5 * a)?;
        let horizon = raw.f64_or("T", 2.0)?;
        let params = ModelParams::new(a, m, horizon)?;
        let replicas = raw.usize_or("replicas", 100)?;
        if replicas == 0 {
            return Err(CliError::config("replicas", "must be positive"));
        }
        let workers = match raw.raw("workers") {
            None => None,
            Some(_) => match raw.usize_or("workers", 1)? {
                0 => return Err(CliError::config("workers", "must be positive")),
                n => Some(n),
            },
        };
        let out_dir = match std::env::var_os(OUT_DIR_ENV) {
            Some(dir) => PathBuf::from(dir),
            None => PathBuf::from(raw.str_or("out_dir", DEFAULT_OUT_DIR)),
        };
        Ok(Self {
            command: command.to_string(),
            params,
            replicas,
            master_seed: raw.u64_or("master_seed", 0)?,
            out_dir,
            workers,
            raw,
        })
    }

    pub fn seed(&self) -> SeedSpec {
        SeedSpec::new(self.master_seed, 0)
    }

    /// The fully resolved key set, echoed into every JSON artifact.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let mut map = self.raw.entries.clone();
        map.insert("experiment".into(), self.command.clone());
        map.insert("a".into(), self.params.a.to_string());
        map.insert("m".into(), self.params.m.to_string());
        map.insert("T".into(), self.params.horizon.to_string());
        map.insert("replicas".into(), self.replicas.to_string());
        map.insert("master_seed".into(), self.master_seed.to_string());
        map.insert("out_dir".into(), self.out_dir.display().to_string());
        map.remove("workers");
        map
    }
}

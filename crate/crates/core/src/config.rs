//! Run configuration: one TOML document covering data, networks, training
//! and evaluation, with `--key value` overrides on top.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::SwdConfig;
use crate::network::{DiscriminatorConfig, GeneratorConfig};
use crate::synthdata::{SensorRig, SynthConfig, SUPPORTED_CLASS_COUNTS};
use crate::training::{DataSpec, EvalOptions, TrainConfig};

/// Environment variable naming the default dataset root.
pub const DATA_DIR_ENV: &str = "TITAN_DATA_DIR";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset root; falls back to `$TITAN_DATA_DIR`.
    pub root: Option<PathBuf>,
    pub count: usize,
    pub seed: u64,
    pub val_fraction: f64,
    pub num_classes: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        let s = SynthConfig::default();
        Self { root: None, count: s.count, seed: s.seed, val_fraction: s.val_fraction, num_classes: s.num_classes }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrechetEmbedding {
    None,
    /// Raw pixels; only sensible for tiny images.
    Identity,
    /// Fixed Gaussian projection to `frechet_dim` features.
    RandomProjection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub split: String,
    /// Computes SWD on painted segments.
    pub swd: bool,
    pub swd_config: SwdConfig,
    pub frechet: FrechetEmbedding,
    pub frechet_dim: usize,
    pub frechet_seed: u64,
    /// Computes SWD during training-time validation too.
    pub swd_during_training: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            split: "val".into(),
            swd: true,
            swd_config: SwdConfig::default(),
            frechet: FrechetEmbedding::RandomProjection,
            frechet_dim: 64,
            frechet_seed: 0,
            swd_during_training: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Parent of the per-config run directories.
    pub runs_dir: PathBuf,
    pub data: DataConfig,
    pub rig: SensorRig,
    pub generator: GeneratorConfig,
    pub critic: DiscriminatorConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            runs_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            rig: SensorRig::default(),
            generator: GeneratorConfig::default(),
            critic: DiscriminatorConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

fn parse_error(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::Parse { path: path.to_path_buf(), field: "config".into(), offset: 0, reason: e.to_string() }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| parse_error(Path::new("<config>"), e))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Reads `path` (or the defaults when `None`) and applies `overrides`.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut value = match path {
            Some(p) => {
                let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
                toml::from_str::<toml::Value>(&text).map_err(|e| parse_error(p, e))?
            }
            None => toml::Value::try_from(Self::default()).expect("config serializes"),
        };
        for (k, v) in overrides {
            apply_override(&mut value, k, v)?;
        }
        let cfg: Self = value.try_into().map_err(|e| parse_error(path.unwrap_or(Path::new("<defaults>")), e))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.train.validate()?;
        if !SUPPORTED_CLASS_COUNTS.contains(&self.data.num_classes) {
            return Err(Error::config(format!(
                "data.num_classes {} not in {SUPPORTED_CLASS_COUNTS:?}",
                self.data.num_classes
            )));
        }
        if self.generator.num_classes != self.data.num_classes {
            return Err(Error::config(format!(
                "generator.num_classes {} differs from data.num_classes {}",
                self.generator.num_classes, self.data.num_classes
            )));
        }
        DataSpec::new(&self.rig, &self.generator, self.train.max_range)?;
        Ok(())
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig {
            count: self.data.count,
            num_classes: self.data.num_classes,
            seed: self.data.seed,
            val_fraction: self.data.val_fraction,
            rig: self.rig.clone(),
        }
    }

    /// The configured root, else `$TITAN_DATA_DIR`.
    pub fn data_root(&self) -> Result<PathBuf> {
        if let Some(r) = &self.data.root {
            return Ok(r.clone());
        }
        match std::env::var_os(DATA_DIR_ENV) {
            Some(v) if !v.is_empty() => Ok(PathBuf::from(v)),
            _ => Err(Error::config(format!("no data.root in the config and {DATA_DIR_ENV} is unset"))),
        }
    }

    /// Hex SHA-256 prefix of the config with its stopping criteria and
    /// output location cleared, so extending a run reuses its directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.runs_dir = PathBuf::new();
        c.train.max_epochs = 0;
        c.train.max_steps = None;
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(&Sha256::digest(&json)[..8])
    }

    pub fn run_dir(&self) -> PathBuf {
        self.runs_dir.join(self.hash())
    }

    pub fn train_eval_options(&self) -> EvalOptions {
        EvalOptions { swd: (self.eval.swd && self.eval.swd_during_training).then_some(self.eval.swd_config) }
    }
}

/// Sets `key` to `raw`, parsed as a TOML value when possible and as a bare
/// string otherwise. Dashes in keys read as underscores. A key without dots
/// must name exactly one field across the sections.
pub fn apply_override(root: &mut toml::Value, key: &str, raw: &str) -> Result<()> {
    let key = key.replace('-', "_");
    let value = parse_value(raw);
    let path: Vec<String> = if key.contains('.') {
        key.split('.').map(str::to_string).collect()
    } else {
        resolve_bare(root, &key)?
    };
    let (last, parents) = path.split_last().ok_or_else(|| Error::config("empty override key"))?;
    let mut node = root;
    for p in parents {
        let table = node.as_table_mut().ok_or_else(|| Error::config(format!("override {key}: {p} is not a section")))?;
        node = table.entry(p.clone()).or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = node.as_table_mut().ok_or_else(|| Error::config(format!("override {key}: parent is not a section")))?;
    table.insert(last.clone(), value);
    Ok(())
}

fn parse_value(raw: &str) -> toml::Value {
    let doc = format!("v = {raw}");
    match toml::from_str::<toml::Table>(&doc) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(raw.into()),
    }
}

/// Optional fields absent from serialized defaults, by section.
const OPTIONAL_FIELDS: &[(&str, &str)] = &[("train", "max_steps"), ("data", "root")];

fn resolve_bare(root: &toml::Value, key: &str) -> Result<Vec<String>> {
    let mut found = Vec::new();
    if let Some(t) = root.as_table() {
        if t.contains_key(key) {
            found.push(vec![key.to_string()]);
        }
        for (section, v) in t {
            if v.as_table().is_some_and(|s| s.contains_key(key)) {
                found.push(vec![section.clone(), key.to_string()]);
            }
        }
    }
    for (section, field) in OPTIONAL_FIELDS {
        let path = vec![section.to_string(), field.to_string()];
        if *field == key && !found.contains(&path) {
            found.push(path);
        }
    }
    match found.len() {
        1 => Ok(found.pop().expect("one match")),
        0 => Err(Error::config(format!("unknown config key {key}"))),
        _ => Err(Error::config(format!(
            "config key {key} is ambiguous: {}",
            found.iter().map(|p| p.join(".")).collect::<Vec<_>>().join(", ")
        ))),
    }
}

/// Splits `--key value` pairs.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(k) = it.next() {
        let key = k.strip_prefix("--").ok_or_else(|| Error::config(format!("expected --key, found {k:?}")))?;
        if let Some((k, v)) = key.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            continue;
        }
        let v = it.next().ok_or_else(|| Error::config(format!("--{key} needs a value")))?;
        out.push((key.to_string(), v.clone()));
    }
    Ok(out)
}

//! Run configuration: a plain-text file of `section.key = value` lines.
//! Blank lines and lines starting with `#` are ignored. Command-line
//! `--set section.key=value` overrides win over the file. Relative data paths
//! resolve against the directory of the configuration file.
//!
//! | key | default |
//! |-----|---------|
//! | `model.num_layers`, `model.hidden_size`, `model.num_heads`, `model.ff_size`, `model.max_len`, `model.dropout` | 2, 64, 4, 128, 32, 0 |
//! | `noise.p_drop`, `noise.k` | 0.1, 3 |
//! | `train.seed` | required |
//! | `train.rounds`, `train.lr`, `train.batch_size`, `train.mix` | 2000, 0.001, 16, `1:1:1:1` |
//! | `train.ckpt_every`, `train.eval_every`, `train.patience`, `train.clip` | 0, 50, 200, 1.0 |
//! | `data.out_src`, `data.out_tgt` | required |
//! | `data.in_mono`, `data.out_mono`, `data.dev_src`, `data.dev_tgt` | unset |
//! | `data.vocab_size` | 1000 |
//! | `eval.src`, `eval.tgt`, `eval.domain` | unset, unset, `in` |

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::corruption::NoiseSpec;
use crate::dafe::DomainId;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::training::{AdamConfig, Mix, TrainConfig};

const KEYS: &[&str] = &[
    "model.num_layers",
    "model.hidden_size",
    "model.num_heads",
    "model.ff_size",
    "model.max_len",
    "model.dropout",
    "noise.p_drop",
    "noise.k",
    "train.seed",
    "train.rounds",
    "train.lr",
    "train.batch_size",
    "train.mix",
    "train.ckpt_every",
    "train.eval_every",
    "train.patience",
    "train.clip",
    "data.out_src",
    "data.out_tgt",
    "data.in_mono",
    "data.out_mono",
    "data.dev_src",
    "data.dev_tgt",
    "data.vocab_size",
    "eval.src",
    "eval.tgt",
    "eval.domain",
];

/// Raw key/value pairs after merging file and overrides.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawConfig {
    pub values: BTreeMap<String, String>,
    pub base_dir: PathBuf,
}

impl RawConfig {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut raw = RawConfig {
            values: BTreeMap::new(),
            base_dir: base_dir.to_path_buf(),
        };
        let mut section = String::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let qualified = match line.split_once('=') {
                Some((k, v)) if !section.is_empty() && !k.contains('.') => {
                    format!("{section}.{}={v}", k.trim())
                }
                _ => line.to_string(),
            };
            raw.set(&qualified).map_err(|e| match e {
                Error::Config(m) => Error::Config(format!("line {}: {m}", n + 1)),
                other => other,
            })?;
        }
        Ok(raw)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, dir)
    }

    /// Applies one `key=value` assignment.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("expected `key = value`, got `{assignment}`")))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(Error::Config(format!("unknown configuration key `{k}`")));
        }
        self.values.insert(k.to_string(), v.to_string());
        Ok(())
    }

    fn get<V: std::str::FromStr>(&self, key: &str, default: V) -> Result<V>
    where
        V::Err: std::fmt::Display,
    {
        match self.values.get(key) {
            None => Ok(default),
            Some(raw) => raw
                .parse()
                .map_err(|e| Error::Config(format!("`{key}` = `{raw}`: {e}"))),
        }
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.values.get(key).map(|p| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                self.base_dir.join(p)
            }
        })
    }

    fn existing_path(&self, key: &str) -> Result<Option<PathBuf>> {
        match self.path(key) {
            Some(p) if !p.is_file() => Err(Error::Config(format!(
                "`{key}` points to missing file {}",
                p.display()
            ))),
            other => Ok(other),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataPaths {
    pub out_src: PathBuf,
    pub out_tgt: PathBuf,
    pub in_mono: Option<PathBuf>,
    pub out_mono: Option<PathBuf>,
    pub dev: Option<(PathBuf, PathBuf)>,
    pub vocab_size: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalPaths {
    pub test: Option<(PathBuf, PathBuf)>,
    pub domain: DomainId,
}

/// Validated configuration. `model.vocab_size` is filled in once the
/// vocabulary has been built.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataPaths,
    pub eval: EvalPaths,
}

impl RunConfig {
    pub fn from_raw(raw: &RawConfig) -> Result<Self> {
        let desk = ModelConfig::desk(0);
        let model = ModelConfig {
            num_layers: raw.get("model.num_layers", desk.num_layers)?,
            hidden_size: raw.get("model.hidden_size", desk.hidden_size)?,
            num_heads: raw.get("model.num_heads", desk.num_heads)?,
            ff_size: raw.get("model.ff_size", desk.ff_size)?,
            vocab_size: 0,
            max_len: raw.get("model.max_len", desk.max_len)?,
            dropout: raw.get("model.dropout", desk.dropout)?,
        };
        let seed: u64 = match raw.values.get("train.seed") {
            Some(_) => raw.get("train.seed", 0)?,
            None => return Err(Error::Config("`train.seed` is required".into())),
        };
        let defaults = TrainConfig::default();
        let clip: f64 = raw.get("train.clip", 1.0)?;
        let train = TrainConfig {
            rounds: raw.get("train.rounds", defaults.rounds)?,
            adam: AdamConfig {
                lr: raw.get("train.lr", defaults.adam.lr)?,
                clip: (clip > 0.0).then_some(clip),
                ..AdamConfig::default()
            },
            batch_size: raw.get("train.batch_size", defaults.batch_size)?,
            mix: raw.get::<Mix>("train.mix", defaults.mix)?,
            seed,
            ckpt_every: raw.get("train.ckpt_every", defaults.ckpt_every)?,
            eval_every: raw.get("train.eval_every", defaults.eval_every)?,
            patience: raw.get("train.patience", defaults.patience)?,
            noise: NoiseSpec {
                p_drop: raw.get("noise.p_drop", defaults.noise.p_drop)?,
                k: raw.get("noise.k", defaults.noise.k)?,
                seed,
            },
        };
        train.validate()?;
        let required = |key: &str| {
            raw.existing_path(key)?
                .ok_or_else(|| Error::Config(format!("`{key}` is required")))
        };
        let pair = |a: &str, b: &str| -> Result<Option<(PathBuf, PathBuf)>> {
            match (raw.existing_path(a)?, raw.existing_path(b)?) {
                (Some(x), Some(y)) => Ok(Some((x, y))),
                (None, None) => Ok(None),
                _ => Err(Error::Config(format!("`{a}` and `{b}` must be given together"))),
            }
        };
        let data = DataPaths {
            out_src: required("data.out_src")?,
            out_tgt: required("data.out_tgt")?,
            in_mono: raw.existing_path("data.in_mono")?,
            out_mono: raw.existing_path("data.out_mono")?,
            dev: pair("data.dev_src", "data.dev_tgt")?,
            vocab_size: raw.get("data.vocab_size", 1000)?,
        };
        let eval = EvalPaths {
            test: pair("eval.src", "eval.tgt")?,
            domain: raw
                .get::<DomainId>("eval.domain", DomainId::In)
                .map_err(|e| Error::Config(e.to_string()))?,
        };
        Ok(RunConfig {
            model,
            train,
            data,
            eval,
        })
    }
}

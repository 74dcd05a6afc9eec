//! Run configuration: built-in preset, then config file, then flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use kgrec::train::{Preset, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub kg: PathBuf,
    pub train: PathBuf,
    pub test: PathBuf,
    /// Items are entity ids `0..item_count`; inferred from the interaction
    /// files when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item_count: Option<usize>,
}

impl DataPaths {
    pub fn from_dir(dir: &Path) -> Self {
        DataPaths {
            kg: dir.join("kg_final.txt"),
            train: dir.join("train.txt"),
            test: dir.join("test.txt"),
            item_count: None,
        }
    }

    fn absolutize(&mut self) {
        for p in [&mut self.kg, &mut self.train, &mut self.test] {
            if let Ok(abs) = std::path::absolute(&*p) {
                *p = abs;
            }
        }
    }
}

/// Fully resolved settings of one run; written verbatim as `manifest.toml`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub preset: Preset,
    pub out: PathBuf,
    pub data: DataPaths,
    pub train: TrainConfig,
}

/// The on-disk shape before defaults are filled in.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<Preset>,
    out: Option<PathBuf>,
    data: Option<DataPaths>,
    train: Option<toml::Table>,
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub out: Option<PathBuf>,
    pub data: Option<DataPaths>,
    pub train: toml::Table,
}

impl RunConfig {
    pub fn resolve(file: Option<&Path>, overrides: Overrides) -> Result<Self> {
        let raw: RawConfig = match file {
            Some(path) => {
                let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
            }
            None => RawConfig::default(),
        };
        let preset = overrides.preset.or(raw.preset).unwrap_or(Preset::AlibabaIfashion);
        let mut table = toml::Table::try_from(TrainConfig::preset(preset)).expect("train config serializes");
        if let Some(t) = raw.train {
            merge(&mut table, t);
        }
        merge(&mut table, overrides.train);
        let train: TrainConfig = table.try_into().context("invalid [train] settings")?;
        train.validate()?;

        let mut data = match (overrides.data, raw.data) {
            (Some(d), _) | (None, Some(d)) => d,
            (None, None) => bail!("no dataset given; use --data DIR, --kg/--train/--test or a config file"),
        };
        data.absolutize();
        let out = overrides.out.or(raw.out).unwrap_or_else(|| PathBuf::from("out"));
        Ok(RunConfig {
            preset,
            out,
            data,
            train,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }
}

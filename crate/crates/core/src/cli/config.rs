//! Flat `key = value` run configuration.
//!
//! Every key has a default; a config file overrides defaults and `--set` or
//! dedicated flags override the file.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::attention::{LocalMaskMode, SpatialBranches};
use crate::bench::BenchGrid;
use crate::embedding::EmbeddingDims;
use crate::error::{Error, Result};
use crate::network::ModelConfig;
use crate::training::{AdamConfig, Milestone, TrainConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Default,
    File,
    Flag,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Default => "default",
            Source::File => "file",
            Source::Flag => "flag",
        })
    }
}

/// `(key, default, description)`.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("t_in", "24", "input window length T"),
    ("t_out", "24", "forecast horizon T'"),
    ("batch_size", "16", "windows per optimizer step"),
    ("epochs", "60", "training epochs"),
    ("seed", "42", "seed for initialisation and shuffling"),
    ("learning_rate", "0.0001", "initial Adam learning rate"),
    ("milestones", "30:0.5,50:0.5", "epoch:factor learning-rate decay points"),
    ("adam_beta1", "0.9", "Adam first-moment decay"),
    ("adam_beta2", "0.999", "Adam second-moment decay"),
    ("adam_eps", "1e-8", "Adam denominator epsilon"),
    ("huber_delta", "1", "Huber loss threshold, raw units"),
    ("mape_threshold", "0.1", "entries with |y| at or below this are left out of MAPE"),
    ("deterministic", "false", "single-threaded execution"),
    ("d_tf", "64", "temporal feature width"),
    ("d_tod", "32", "time-of-day embedding width"),
    ("d_dow", "32", "day-of-week embedding width"),
    ("d_sf", "96", "spatial feature width"),
    ("d_spatial", "32", "node embedding width"),
    ("heads", "4", "attention heads"),
    ("layers", "1", "encoder layers per stack"),
    ("route_weights", "0.25,0.25,0.5", "temporal, spatial and mixed route weights"),
    ("local_mask_mode", "neg_inf", "neg_inf or zero_product"),
    ("spatial_branches", "global_local", "global_local, global_only or local_only"),
    ("bench_dim", "16", "model width D in the attention benchmark"),
    ("bench_heads", "1", "heads in the attention benchmark"),
    ("bench_repeats", "5", "timed repeats per benchmark point"),
    ("bench_warmup", "1", "untimed warmup passes per benchmark point"),
];

#[derive(Clone, Debug)]
pub struct RunConfig {
    values: BTreeMap<&'static str, (String, Source)>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            values: SCHEMA.iter().map(|&(k, d, _)| (k, (d.to_string(), Source::Default))).collect(),
        }
    }
}

fn nearest_key(key: &str) -> &'static str {
    SCHEMA
        .iter()
        .map(|&(k, _, _)| k)
        .min_by_key(|k| strsim::levenshtein(key, k))
        .expect("schema is not empty")
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str, source: Source) -> Result<()> {
        let Some(&(k, _, _)) = SCHEMA.iter().find(|(k, _, _)| *k == key) else {
            return Err(Error::Config(format!(
                "unknown config key {key:?}; did you mean {:?}?",
                nearest_key(key)
            )));
        };
        self.values.insert(k, (value.trim().to_string(), source));
        Ok(())
    }

    /// `key=value` from the command line.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects key=value, got {pair:?}")))?;
        self.set(k.trim(), v, Source::Flag)
    }

    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value, got {raw:?}", i + 1)))?;
            self.set(k.trim(), v, Source::File)
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip_prefix(&e))))?;
        }
        Ok(())
    }

    pub fn raw(&self, key: &str) -> &str {
        &self.values[key].0
    }

    pub fn source(&self, key: &str) -> Source {
        self.values[key].1
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: fmt::Display,
    {
        let raw = self.raw(key);
        raw.parse()
            .map_err(|e| Error::Config(format!("{key} = {raw:?}: {e}")))
    }

    /// One `key = value (source)` line per key.
    pub fn header(&self) -> Vec<String> {
        SCHEMA
            .iter()
            .map(|&(k, _, _)| format!("{k} = {} ({})", self.raw(k), self.source(k)))
            .collect()
    }

    pub fn model_config(&self, n_nodes: usize, steps_per_day: usize) -> Result<ModelConfig> {
        let mut c = ModelConfig::new(n_nodes, self.get("t_in")?, self.get("t_out")?, steps_per_day);
        c.dims = EmbeddingDims {
            d_tf: self.get("d_tf")?,
            d_tod: self.get("d_tod")?,
            d_dow: self.get("d_dow")?,
            d_sf: self.get("d_sf")?,
            d_spatial: self.get("d_spatial")?,
        };
        c.heads = self.get("heads")?;
        c.layers = self.get("layers")?;
        let w = parse_list::<f64>("route_weights", self.raw("route_weights"))?;
        c.route_weights = w
            .try_into()
            .map_err(|_| Error::Config("route_weights needs exactly three values".into()))?;
        c.local_mask_mode = self.raw("local_mask_mode").parse::<LocalMaskMode>()?;
        c.spatial_branches = self.raw("spatial_branches").parse::<SpatialBranches>()?;
        c.validate()?;
        Ok(c)
    }

    pub fn train_config(&self, n_nodes: usize, steps_per_day: usize) -> Result<TrainConfig> {
        let mut t = TrainConfig::new(self.model_config(n_nodes, steps_per_day)?);
        t.batch_size = self.get("batch_size")?;
        t.epochs = self.get("epochs")?;
        t.seed = self.get("seed")?;
        t.adam = AdamConfig {
            lr: self.get("learning_rate")?,
            beta1: self.get("adam_beta1")?,
            beta2: self.get("adam_beta2")?,
            eps: self.get("adam_eps")?,
            milestones: parse_milestones(self.raw("milestones"))?,
        };
        t.huber_delta = self.get("huber_delta")?;
        t.mape_threshold = self.get("mape_threshold")?;
        t.deterministic = self.get("deterministic")?;
        t.validate()?;
        Ok(t)
    }

    pub fn bench_grid(&self, ts: &[usize], n: usize) -> Result<BenchGrid> {
        let mut g = BenchGrid::t_sweep(ts, n);
        g.d = self.get("bench_dim")?;
        g.heads = self.get("bench_heads")?;
        g.repeats = self.get("bench_repeats")?;
        g.warmup = self.get("bench_warmup")?;
        g.seed = self.get("seed")?;
        Ok(g)
    }
}

fn strip_prefix(e: &Error) -> String {
    match e {
        Error::Config(m) => m.clone(),
        other => other.to_string(),
    }
}

pub fn parse_list<T: FromStr>(key: &str, raw: &str) -> Result<Vec<T>>
where
    T::Err: fmt::Display,
{
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|e| Error::Config(format!("{key}: {s:?}: {e}"))))
        .collect()
}

fn parse_milestones(raw: &str) -> Result<Vec<Milestone>> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|item| {
            let bad = || Error::Config(format!("milestones: expected epoch:factor, got {item:?}"));
            let (e, f) = item.split_once(':').ok_or_else(bad)?;
            Ok(Milestone {
                epoch: e.trim().parse().map_err(|_| bad())?,
                factor: f.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

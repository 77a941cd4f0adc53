//! Flat `key=value` run configuration shared by every subcommand.
//!
//! Lines starting with `#` and blank lines are ignored; trailing `# ...` is a
//! comment. Later assignments win, so command-line overrides are applied by
//! calling [`RunConfig::set`] after loading the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::sampler::SamplerConfig;
use crate::tokenizer::{mapping_from_parts, Mapping, OracleSpec};
use crate::trainer::TrainConfig;

/// Synthetic data generation settings.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    /// `shift`, `noisy-shift` or `block-copy`.
    pub mapping_kind: String,
    pub shift: usize,
    pub noise: f64,
    pub dim_a: usize,
    pub dim_b: usize,
    pub codebook_seed_a: u64,
    pub codebook_seed_b: u64,
    pub n_pairs: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            mapping_kind: "shift".into(),
            shift: 3,
            noise: 0.0,
            dim_a: 8,
            dim_b: 8,
            codebook_seed_a: 1,
            codebook_seed_b: 2,
            n_pairs: 10_000,
            seed: 0,
        }
    }
}

impl DataConfig {
    pub fn mapping(&self) -> Result<Mapping> {
        mapping_from_parts(&self.mapping_kind, Some(self.shift), Some(self.noise))
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Paths {
    pub dataset: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output: Option<PathBuf>,
    pub metrics: Option<PathBuf>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sampler: SamplerConfig,
    pub data: DataConfig,
    pub paths: Paths,
}

/// Every accepted key, in the order [`RunConfig::to_text`] writes them.
pub const KEYS: &[&str] = &[
    "codebook_a",
    "codebook_b",
    "len_a",
    "len_b",
    "d_model",
    "n_heads",
    "enc_layers",
    "dec_layers",
    "mlp_ratio",
    "mapping",
    "shift",
    "noise",
    "dim_a",
    "dim_b",
    "codebook_seed_a",
    "codebook_seed_b",
    "n_pairs",
    "data_seed",
    "mu",
    "sigma",
    "batch_size",
    "steps",
    "learning_rate",
    "weight_decay",
    "adam_beta1",
    "adam_beta2",
    "adam_eps",
    "warmup_steps",
    "seed",
    "checkpoint_interval",
    "log_interval",
    "cfg_drop_prob",
    "max_grad_norm",
    "iterations",
    "temperature",
    "anneal",
    "cfg_s",
    "guidance_space",
    "schedule",
    "sample_seed",
    "dataset",
    "checkpoint",
    "output",
    "metrics",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("invalid value '{value}' for key '{key}'")))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value", n + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    /// Assigns one key; unknown keys are an error naming the key.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        let s = &mut self.sampler;
        let d = &mut self.data;
        let p = &mut self.paths;
        match key {
            "codebook_a" => m.codebook_a = parse(key, value)?,
            "codebook_b" => m.codebook_b = parse(key, value)?,
            "len_a" => m.len_a = parse(key, value)?,
            "len_b" => m.len_b = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "n_heads" => m.n_heads = parse(key, value)?,
            "enc_layers" => m.enc_layers = parse(key, value)?,
            "dec_layers" => m.dec_layers = parse(key, value)?,
            "mlp_ratio" => m.mlp_ratio = parse(key, value)?,
            "mapping" => {
                mapping_from_parts(value, None, None)?;
                d.mapping_kind = value.to_string();
            }
            "shift" => d.shift = parse(key, value)?,
            "noise" => d.noise = parse(key, value)?,
            "dim_a" => d.dim_a = parse(key, value)?,
            "dim_b" => d.dim_b = parse(key, value)?,
            "codebook_seed_a" => d.codebook_seed_a = parse(key, value)?,
            "codebook_seed_b" => d.codebook_seed_b = parse(key, value)?,
            "n_pairs" => d.n_pairs = parse(key, value)?,
            "data_seed" => d.seed = parse(key, value)?,
            "mu" => t.mu = parse(key, value)?,
            "sigma" => t.sigma = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "steps" => t.steps = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "adam_beta1" => t.adam_betas.0 = parse(key, value)?,
            "adam_beta2" => t.adam_betas.1 = parse(key, value)?,
            "adam_eps" => t.adam_eps = parse(key, value)?,
            "warmup_steps" => t.warmup_steps = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "checkpoint_interval" => t.checkpoint_interval = parse(key, value)?,
            "log_interval" => t.log_interval = parse(key, value)?,
            "cfg_drop_prob" => t.cfg_drop_prob = parse(key, value)?,
            "max_grad_norm" => {
                t.max_grad_norm = match value {
                    "none" | "" => None,
                    v => Some(parse(key, v)?),
                }
            }
            "iterations" => s.iterations = parse(key, value)?,
            "temperature" => s.temperature = parse(key, value)?,
            "anneal" => s.anneal = value.parse()?,
            "cfg_s" => s.guidance = parse(key, value)?,
            "guidance_space" => s.guidance_space = value.parse()?,
            "schedule" => s.schedule = value.parse()?,
            "sample_seed" => s.seed = parse(key, value)?,
            "dataset" => p.dataset = Some(value.into()),
            "checkpoint" => p.checkpoint = Some(value.into()),
            "output" => p.output = Some(value.into()),
            "metrics" => p.metrics = Some(value.into()),
            other => return Err(Error::InvalidConfig(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// The oracle implied by the model sizes and the data mapping.
    pub fn oracle(&self) -> Result<OracleSpec> {
        let spec = OracleSpec {
            mapping: self.data.mapping()?,
            codebook_a: self.model.codebook_a,
            codebook_b: self.model.codebook_b,
            len_a: self.model.len_a,
            len_b: self.model.len_b,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.sampler.validate()?;
        self.oracle().map(|_| ())
    }

    /// Writes every key, in a form [`RunConfig::parse`] reads back.
    pub fn to_text(&self) -> String {
        let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
        let m = &self.model;
        let t = &self.train;
        let s = &self.sampler;
        let d = &self.data;
        let values: Vec<Option<String>> = vec![
            Some(m.codebook_a.to_string()),
            Some(m.codebook_b.to_string()),
            Some(m.len_a.to_string()),
            Some(m.len_b.to_string()),
            Some(m.d_model.to_string()),
            Some(m.n_heads.to_string()),
            Some(m.enc_layers.to_string()),
            Some(m.dec_layers.to_string()),
            Some(m.mlp_ratio.to_string()),
            Some(d.mapping_kind.clone()),
            Some(d.shift.to_string()),
            Some(d.noise.to_string()),
            Some(d.dim_a.to_string()),
            Some(d.dim_b.to_string()),
            Some(d.codebook_seed_a.to_string()),
            Some(d.codebook_seed_b.to_string()),
            Some(d.n_pairs.to_string()),
            Some(d.seed.to_string()),
            Some(t.mu.to_string()),
            Some(t.sigma.to_string()),
            Some(t.batch_size.to_string()),
            Some(t.steps.to_string()),
            Some(t.learning_rate.to_string()),
            Some(t.weight_decay.to_string()),
            Some(t.adam_betas.0.to_string()),
            Some(t.adam_betas.1.to_string()),
            Some(t.adam_eps.to_string()),
            Some(t.warmup_steps.to_string()),
            Some(t.seed.to_string()),
            Some(t.checkpoint_interval.to_string()),
            Some(t.log_interval.to_string()),
            Some(t.cfg_drop_prob.to_string()),
            Some(t.max_grad_norm.map_or("none".to_string(), |v| v.to_string())),
            Some(s.iterations.to_string()),
            Some(s.temperature.to_string()),
            Some(s.anneal.to_string()),
            Some(s.guidance.to_string()),
            Some(s.guidance_space.to_string()),
            Some(s.schedule.to_string()),
            Some(s.seed.to_string()),
            path(&self.paths.dataset),
            path(&self.paths.checkpoint),
            path(&self.paths.output),
            path(&self.paths.metrics),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            if let Some(v) = v {
                let _ = writeln!(out, "{k}={v}");
            }
        }
        out
    }
}

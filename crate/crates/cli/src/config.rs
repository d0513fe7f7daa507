//! The flat `key = value` run configuration, its defaults, and the canonical
//! manifest serialisation.
//!
//! Every knob of the pipeline, the solver and the diagnostics is a typed
//! field. Files are parsed fail-fast: unknown or duplicated keys are errors,
//! and the manifest a run writes is itself a valid configuration file that
//! reproduces the run byte for byte.

use std::path::{Path, PathBuf};

use otpatch::error::{Error, Result};
use otpatch::loss::AggregationMode;
use otpatch::measures::Metric;
use otpatch::pipeline::{OptimizerConfig, PatchSampler};
use otpatch::sinkhorn::SinkhornConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeName {
    Ot,
    Mean,
}

impl ModeName {
    fn as_str(self) -> &'static str {
        match self {
            ModeName::Ot => "ot",
            ModeName::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptSource {
    /// Two unit prompts at cosine distance 2, drawn from the seed.
    Antipodal,
    /// Antipodal pair whose axis is the initial patch-embedding mean, so
    /// the run starts with most patches closer to P0. The benchmark
    /// configuration: the mean loss has zero gradient on an antipodal pair
    /// and stays there, while OT has to redistribute patches.
    Aligned,
    /// `n_prompts` random unit vectors from the seed.
    Random,
    /// Load raw vectors from `prompts_csv` and normalize them.
    Csv,
}

impl PromptSource {
    fn as_str(self) -> &'static str {
        match self {
            PromptSource::Antipodal => "antipodal",
            PromptSource::Aligned => "aligned",
            PromptSource::Random => "random",
            PromptSource::Csv => "csv",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub metric: Metric,
    pub mode: ModeName,
    pub epsilon: f64,
    pub sinkhorn_tolerance: f64,
    pub sinkhorn_max_iterations: usize,
    pub log_domain: bool,
    pub learning_rate: f64,
    pub iterations: usize,
    pub n_patches: usize,
    pub resample_each_iteration: bool,
    pub latent_dim: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub embed_dim: usize,
    pub patch_resolution: usize,
    pub patch_size_min: usize,
    pub patch_size_max: usize,
    pub pool_factor: usize,
    pub n_prompts: usize,
    pub prompt_source: PromptSource,
    pub prompts_csv: Option<PathBuf>,
    pub arrow_scale: f64,
    pub strict: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            metric: Metric::Cosine,
            mode: ModeName::Ot,
            epsilon: 0.05,
            sinkhorn_tolerance: 1e-6,
            sinkhorn_max_iterations: 10_000,
            log_domain: true,
            learning_rate: 0.05,
            iterations: 200,
            n_patches: 16,
            resample_each_iteration: true,
            latent_dim: 16,
            image_height: 32,
            image_width: 32,
            embed_dim: 32,
            patch_resolution: 16,
            patch_size_min: 8,
            patch_size_max: 24,
            pool_factor: 2,
            n_prompts: 2,
            prompt_source: PromptSource::Antipodal,
            prompts_csv: None,
            arrow_scale: 1.0,
            strict: false,
        }
    }
}

impl RunConfig {
    /// Defaults, overlaid with `path` when given.
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)?;
                Self::parse(&text, &p.display().to_string())
            }
        }
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen: Vec<String> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message,
            };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err("expected `key = value`".into()))?;
            let key = key.trim();
            let value = value.trim();
            if seen.iter().any(|k| k == key) {
                return Err(err(format!("duplicate key `{key}`")));
            }
            seen.push(key.to_string());
            cfg.set(key, value).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "seed" => self.seed = parse_num(key, value)?,
            "metric" => self.metric = value.parse()?,
            "mode" => self.mode = parse_mode(value)?,
            "epsilon" => self.epsilon = parse_num(key, value)?,
            "sinkhorn_tolerance" => self.sinkhorn_tolerance = parse_num(key, value)?,
            "sinkhorn_max_iterations" => self.sinkhorn_max_iterations = parse_num(key, value)?,
            "log_domain" => self.log_domain = parse_bool(key, value)?,
            "learning_rate" => self.learning_rate = parse_num(key, value)?,
            "iterations" => self.iterations = parse_num(key, value)?,
            "n_patches" => self.n_patches = parse_num(key, value)?,
            "resample_each_iteration" => {
                self.resample_each_iteration = parse_bool(key, value)?
            }
            "latent_dim" => self.latent_dim = parse_num(key, value)?,
            "image_height" => self.image_height = parse_num(key, value)?,
            "image_width" => self.image_width = parse_num(key, value)?,
            "embed_dim" => self.embed_dim = parse_num(key, value)?,
            "patch_resolution" => self.patch_resolution = parse_num(key, value)?,
            "patch_size_min" => self.patch_size_min = parse_num(key, value)?,
            "patch_size_max" => self.patch_size_max = parse_num(key, value)?,
            "pool_factor" => self.pool_factor = parse_num(key, value)?,
            "n_prompts" => self.n_prompts = parse_num(key, value)?,
            "prompt_source" => self.prompt_source = parse_prompt_source(value)?,
            "prompts_csv" => {
                self.prompts_csv = if value.is_empty() {
                    None
                } else {
                    Some(PathBuf::from(value))
                }
            }
            "arrow_scale" => self.arrow_scale = parse_num(key, value)?,
            "strict" => self.strict = parse_bool(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!("unknown key `{other}`")));
            }
        }
        Ok(())
    }

    /// Cross-field checks that do not need the pipeline assembled.
    pub fn validate(&self) -> Result<()> {
        if self.prompt_source == PromptSource::Csv && self.prompts_csv.is_none() {
            return Err(Error::InvalidConfig(
                "prompt_source = csv requires prompts_csv".into(),
            ));
        }
        if matches!(
            self.prompt_source,
            PromptSource::Antipodal | PromptSource::Aligned
        ) && self.n_prompts != 2
        {
            return Err(Error::InvalidConfig(format!(
                "prompt_source = {} defines exactly 2 prompts, n_prompts is {}",
                self.prompt_source.as_str(),
                self.n_prompts
            )));
        }
        if self.n_prompts == 0 {
            return Err(Error::InvalidConfig("n_prompts must be >= 1".into()));
        }
        self.sinkhorn_config().validate()?;
        self.optimizer_config().validate()?;
        Ok(())
    }

    pub fn sinkhorn_config(&self) -> SinkhornConfig {
        SinkhornConfig {
            epsilon: self.epsilon,
            max_iterations: self.sinkhorn_max_iterations,
            tolerance: self.sinkhorn_tolerance,
            log_domain: self.log_domain,
        }
    }

    pub fn aggregation_mode(&self) -> AggregationMode {
        match self.mode {
            ModeName::Ot => AggregationMode::OptimalTransport(self.sinkhorn_config()),
            ModeName::Mean => AggregationMode::Mean,
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            learning_rate: self.learning_rate,
            iterations: self.iterations,
            n_patches: self.n_patches,
            mode: self.aggregation_mode(),
            seed: self.seed,
            resample_each_iteration: self.resample_each_iteration,
        }
    }

    pub fn sampler(&self) -> PatchSampler {
        PatchSampler {
            size_min: self.patch_size_min,
            size_max: self.patch_size_max,
            out_res: self.patch_resolution,
        }
    }

    /// Canonical manifest: every field, fixed order, re-parseable.
    pub fn manifest(&self) -> String {
        let mut out = String::new();
        let mut push = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        push("seed", self.seed.to_string());
        push("metric", self.metric.name().to_string());
        push("mode", self.mode.as_str().to_string());
        push("epsilon", self.epsilon.to_string());
        push("sinkhorn_tolerance", self.sinkhorn_tolerance.to_string());
        push(
            "sinkhorn_max_iterations",
            self.sinkhorn_max_iterations.to_string(),
        );
        push("log_domain", self.log_domain.to_string());
        push("learning_rate", self.learning_rate.to_string());
        push("iterations", self.iterations.to_string());
        push("n_patches", self.n_patches.to_string());
        push(
            "resample_each_iteration",
            self.resample_each_iteration.to_string(),
        );
        push("latent_dim", self.latent_dim.to_string());
        push("image_height", self.image_height.to_string());
        push("image_width", self.image_width.to_string());
        push("embed_dim", self.embed_dim.to_string());
        push("patch_resolution", self.patch_resolution.to_string());
        push("patch_size_min", self.patch_size_min.to_string());
        push("patch_size_max", self.patch_size_max.to_string());
        push("pool_factor", self.pool_factor.to_string());
        push("n_prompts", self.n_prompts.to_string());
        push("prompt_source", self.prompt_source.as_str().to_string());
        push(
            "prompts_csv",
            self.prompts_csv
                .as_ref()
                .map(|p| p.display().to_string())
                .unwrap_or_default(),
        );
        push("arrow_scale", self.arrow_scale.to_string());
        push("strict", self.strict.to_string());
        out
    }
}

fn parse_mode(value: &str) -> Result<ModeName> {
    match value {
        "ot" => Ok(ModeName::Ot),
        "mean" => Ok(ModeName::Mean),
        other => Err(Error::InvalidConfig(format!(
            "mode must be `ot` or `mean`, got `{other}`"
        ))),
    }
}

fn parse_prompt_source(value: &str) -> Result<PromptSource> {
    match value {
        "antipodal" => Ok(PromptSource::Antipodal),
        "aligned" => Ok(PromptSource::Aligned),
        "random" => Ok(PromptSource::Random),
        "csv" => Ok(PromptSource::Csv),
        other => Err(Error::InvalidConfig(format!(
            "prompt_source must be antipodal, aligned, random or csv, got `{other}`"
        ))),
    }
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        other => Err(Error::InvalidConfig(format!(
            "{key} must be true or false, got `{other}`"
        ))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| Error::InvalidConfig(format!("{key}: `{value}` is not a valid number")))
}

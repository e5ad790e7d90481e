//! Flat `key = value` experiment configuration.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::cf_engine::Strategy;
use crate::error::{Error, Result};

/// Every knob of a run. All fields have defaults; [`ExperimentConfig::to_text`]
/// followed by [`ExperimentConfig::parse`] reproduces the value exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub num_classes: usize,
    pub sigma_x: f64,
    pub intensity_min: f64,
    pub intensity_max: f64,
    pub source_intensity_min: f64,
    pub source_intensity_max: f64,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub shots: usize,
    pub test_per_class: usize,
    pub spurious_rho: f64,
    pub replicates: usize,
    pub pool_per_class: usize,
    pub encoder_pool_per_class: usize,

    pub timesteps: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub activation: String,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,

    pub denoiser_hidden: usize,
    pub denoiser_depth: usize,
    pub time_embedding: usize,
    pub diffusion_steps: usize,
    pub diffusion_batch: usize,
    pub diffusion_lr: f64,

    pub classifier_hidden: usize,
    pub classifier_depth: usize,
    pub classifier_steps: usize,
    pub classifier_batch: usize,
    pub classifier_lr: f64,

    pub scale: f64,
    pub strategy: Strategy,
    pub cf_eval_per_class: usize,
    pub recon_tolerance: f64,

    pub encoder_hidden: usize,
    pub embed_dim: usize,
    pub encoder_steps: usize,
    pub encoder_batch: usize,
    pub encoder_lr: f64,

    pub prompt_length: usize,
    pub tau: f64,
    pub lambda: f64,
    pub text_hidden: usize,
    pub prompt_epochs: usize,
    pub prompt_batch: usize,
    pub prompt_lr: f64,

    /// Not part of the hash: moving a run does not change what it computes.
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            num_classes: 6,
            sigma_x: 0.02,
            intensity_min: 0.5,
            intensity_max: 0.8,
            source_intensity_min: 0.0,
            source_intensity_max: 0.15,
            seen: vec![1, 3, 4, 5],
            unseen: vec![0, 2],
            shots: 16,
            test_per_class: 100,
            spurious_rho: 0.0,
            replicates: 5,
            pool_per_class: 500,
            encoder_pool_per_class: 300,
            timesteps: 50,
            beta_min: 1e-3,
            beta_max: 0.3,
            activation: "silu".into(),
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            denoiser_hidden: 512,
            denoiser_depth: 2,
            time_embedding: 32,
            diffusion_steps: 2000,
            diffusion_batch: 64,
            diffusion_lr: 1e-3,
            classifier_hidden: 256,
            classifier_depth: 2,
            classifier_steps: 1500,
            classifier_batch: 64,
            classifier_lr: 1e-3,
            scale: 2.0,
            strategy: Strategy::Similarity,
            cf_eval_per_class: 50,
            recon_tolerance: 0.15,
            encoder_hidden: 128,
            embed_dim: 32,
            encoder_steps: 1500,
            encoder_batch: 64,
            encoder_lr: 1e-3,
            prompt_length: 4,
            tau: 0.07,
            lambda: 1.0,
            text_hidden: 0,
            prompt_epochs: 30,
            prompt_batch: 16,
            prompt_lr: 5e-3,
            out: PathBuf::from("runs/default"),
        }
    }
}

/// The producer of an artifact, for lineage hashing.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Data,
    Diffusion,
    Classifier,
    Counterfactuals,
    Encoder,
    Prompts,
    Theory,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Group {
    Seed,
    Domain,
    Split,
    Source,
    Schedule,
    Diffusion,
    Classifier,
    Guidance,
    Encoder,
    Prompts,
}

impl Stage {
    pub fn producer(self) -> &'static str {
        match self {
            Stage::Data => "gen-data",
            Stage::Diffusion => "pretrain-diffusion",
            Stage::Classifier => "train-classifier",
            Stage::Counterfactuals => "gen-cf",
            Stage::Encoder | Stage::Prompts => "train-prompts",
            Stage::Theory => "verify-theory",
        }
    }

    fn groups(self) -> &'static [Group] {
        use Group::*;
        match self {
            Stage::Data => &[Seed, Domain, Split, Source],
            Stage::Diffusion => &[Seed, Domain, Schedule, Diffusion],
            Stage::Classifier => &[Seed, Domain, Schedule, Classifier],
            Stage::Counterfactuals => &[Seed, Domain, Split, Schedule, Diffusion, Classifier, Guidance],
            Stage::Encoder => &[Seed, Domain, Source, Schedule, Encoder],
            Stage::Prompts => &[
                Seed, Domain, Split, Source, Schedule, Diffusion, Classifier, Guidance, Encoder, Prompts,
            ],
            Stage::Theory => &[Seed],
        }
    }
}

fn key_group(key: &str) -> Option<Group> {
    use Group::*;
    Some(match key {
        "seed" => Seed,
        "num_classes" | "sigma_x" | "intensity_min" | "intensity_max" | "seen" | "unseen" | "pool_per_class" => Domain,
        "shots" | "test_per_class" | "spurious_rho" | "replicates" | "cf_eval_per_class" => Split,
        "source_intensity_min" | "source_intensity_max" | "encoder_pool_per_class" => Source,
        "timesteps" | "beta_min" | "beta_max" | "activation" | "adam_beta1" | "adam_beta2" | "adam_eps" => Schedule,
        "denoiser_hidden" | "denoiser_depth" | "time_embedding" | "diffusion_steps" | "diffusion_batch"
        | "diffusion_lr" | "recon_tolerance" => Diffusion,
        "classifier_hidden" | "classifier_depth" | "classifier_steps" | "classifier_batch" | "classifier_lr" => {
            Classifier
        }
        "scale" | "strategy" => Guidance,
        "encoder_hidden" | "embed_dim" | "encoder_steps" | "encoder_batch" | "encoder_lr" | "tau" | "text_hidden" => {
            Encoder
        }
        "prompt_length" | "lambda" | "prompt_epochs" | "prompt_batch" | "prompt_lr" => Prompts,
        _ => return None,
    })
}

fn list(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list(raw: &str) -> std::result::Result<Vec<usize>, String> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| format!("bad class id {p:?}")))
        .collect()
}

fn num<T: std::str::FromStr>(raw: &str) -> std::result::Result<T, String> {
    raw.parse().map_err(|_| format!("cannot parse {raw:?}"))
}

impl ExperimentConfig {
    /// Canonical `(key, value)` pairs, `out` last.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("sigma_x", self.sigma_x.to_string()),
            ("intensity_min", self.intensity_min.to_string()),
            ("intensity_max", self.intensity_max.to_string()),
            ("source_intensity_min", self.source_intensity_min.to_string()),
            ("source_intensity_max", self.source_intensity_max.to_string()),
            ("seen", list(&self.seen)),
            ("unseen", list(&self.unseen)),
            ("shots", self.shots.to_string()),
            ("test_per_class", self.test_per_class.to_string()),
            ("spurious_rho", self.spurious_rho.to_string()),
            ("replicates", self.replicates.to_string()),
            ("pool_per_class", self.pool_per_class.to_string()),
            ("encoder_pool_per_class", self.encoder_pool_per_class.to_string()),
            ("timesteps", self.timesteps.to_string()),
            ("beta_min", self.beta_min.to_string()),
            ("beta_max", self.beta_max.to_string()),
            ("activation", self.activation.clone()),
            ("adam_beta1", self.adam_beta1.to_string()),
            ("adam_beta2", self.adam_beta2.to_string()),
            ("adam_eps", self.adam_eps.to_string()),
            ("denoiser_hidden", self.denoiser_hidden.to_string()),
            ("denoiser_depth", self.denoiser_depth.to_string()),
            ("time_embedding", self.time_embedding.to_string()),
            ("diffusion_steps", self.diffusion_steps.to_string()),
            ("diffusion_batch", self.diffusion_batch.to_string()),
            ("diffusion_lr", self.diffusion_lr.to_string()),
            ("classifier_hidden", self.classifier_hidden.to_string()),
            ("classifier_depth", self.classifier_depth.to_string()),
            ("classifier_steps", self.classifier_steps.to_string()),
            ("classifier_batch", self.classifier_batch.to_string()),
            ("classifier_lr", self.classifier_lr.to_string()),
            ("scale", self.scale.to_string()),
            ("strategy", self.strategy.name().to_string()),
            ("cf_eval_per_class", self.cf_eval_per_class.to_string()),
            ("recon_tolerance", self.recon_tolerance.to_string()),
            ("encoder_hidden", self.encoder_hidden.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("encoder_steps", self.encoder_steps.to_string()),
            ("encoder_batch", self.encoder_batch.to_string()),
            ("encoder_lr", self.encoder_lr.to_string()),
            ("prompt_length", self.prompt_length.to_string()),
            ("tau", self.tau.to_string()),
            ("lambda", self.lambda.to_string()),
            ("text_hidden", self.text_hidden.to_string()),
            ("prompt_epochs", self.prompt_epochs.to_string()),
            ("prompt_batch", self.prompt_batch.to_string()),
            ("prompt_lr", self.prompt_lr.to_string()),
            ("out", self.out.display().to_string()),
        ]
    }

    /// Assigns one key. The error message does not include a location.
    pub fn set(&mut self, key: &str, raw: &str) -> std::result::Result<(), String> {
        let raw = raw.trim();
        match key {
            "seed" => self.seed = num(raw)?,
            "num_classes" => self.num_classes = num(raw)?,
            "sigma_x" => self.sigma_x = num(raw)?,
            "intensity_min" => self.intensity_min = num(raw)?,
            "intensity_max" => self.intensity_max = num(raw)?,
            "source_intensity_min" => self.source_intensity_min = num(raw)?,
            "source_intensity_max" => self.source_intensity_max = num(raw)?,
            "seen" => self.seen = parse_list(raw)?,
            "unseen" => self.unseen = parse_list(raw)?,
            "shots" => self.shots = num(raw)?,
            "test_per_class" => self.test_per_class = num(raw)?,
            "spurious_rho" => self.spurious_rho = num(raw)?,
            "replicates" => self.replicates = num(raw)?,
            "pool_per_class" => self.pool_per_class = num(raw)?,
            "encoder_pool_per_class" => self.encoder_pool_per_class = num(raw)?,
            "timesteps" => self.timesteps = num(raw)?,
            "beta_min" => self.beta_min = num(raw)?,
            "beta_max" => self.beta_max = num(raw)?,
            "activation" => {
                if raw != "silu" {
                    return Err(format!("only the silu activation is supported, got {raw:?}"));
                }
                self.activation = raw.to_string();
            }
            "adam_beta1" => self.adam_beta1 = num(raw)?,
            "adam_beta2" => self.adam_beta2 = num(raw)?,
            "adam_eps" => self.adam_eps = num(raw)?,
            "denoiser_hidden" => self.denoiser_hidden = num(raw)?,
            "denoiser_depth" => self.denoiser_depth = num(raw)?,
            "time_embedding" => self.time_embedding = num(raw)?,
            "diffusion_steps" => self.diffusion_steps = num(raw)?,
            "diffusion_batch" => self.diffusion_batch = num(raw)?,
            "diffusion_lr" => self.diffusion_lr = num(raw)?,
            "classifier_hidden" => self.classifier_hidden = num(raw)?,
            "classifier_depth" => self.classifier_depth = num(raw)?,
            "classifier_steps" => self.classifier_steps = num(raw)?,
            "classifier_batch" => self.classifier_batch = num(raw)?,
            "classifier_lr" => self.classifier_lr = num(raw)?,
            "scale" => self.scale = num(raw)?,
            "strategy" => self.strategy = Strategy::parse(raw).ok_or_else(|| format!("unknown strategy {raw:?}"))?,
            "cf_eval_per_class" => self.cf_eval_per_class = num(raw)?,
            "recon_tolerance" => self.recon_tolerance = num(raw)?,
            "encoder_hidden" => self.encoder_hidden = num(raw)?,
            "embed_dim" => self.embed_dim = num(raw)?,
            "encoder_steps" => self.encoder_steps = num(raw)?,
            "encoder_batch" => self.encoder_batch = num(raw)?,
            "encoder_lr" => self.encoder_lr = num(raw)?,
            "prompt_length" => self.prompt_length = num(raw)?,
            "tau" => self.tau = num(raw)?,
            "lambda" => self.lambda = num(raw)?,
            "text_hidden" => self.text_hidden = num(raw)?,
            "prompt_epochs" => self.prompt_epochs = num(raw)?,
            "prompt_batch" => self.prompt_batch = num(raw)?,
            "prompt_lr" => self.prompt_lr = num(raw)?,
            "out" => self.out = PathBuf::from(raw),
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Parses `key = value` lines over the defaults. Blank lines and lines
    /// starting with `#` are skipped. `path` only labels diagnostics.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (i, line) in text.lines().enumerate() {
            let bad = |reason: String| Error::Config {
                path: path.to_path_buf(),
                line: i + 1,
                reason,
            };
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected `key = value`, got {line:?}")))?;
            cfg.set(key.trim(), value).map_err(bad)?;
        }
        cfg.validate().map_err(|e| match e {
            Error::Contract(reason) => Error::Config {
                path: path.to_path_buf(),
                line: 0,
                reason,
            },
            other => other,
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, path)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.entries() {
            writeln!(s, "{k} = {v}").expect("writing to a string");
        }
        s
    }

    /// First 16 hex digits of the SHA-256 of the canonical text without `out`.
    pub fn hash(&self) -> String {
        self.hash_where(|k| k != "out")
    }

    /// Hash of the keys that can influence artifacts of `stage`, so that
    /// changing a downstream knob leaves upstream lineage intact.
    pub fn stage_hash(&self, stage: Stage) -> String {
        let groups = stage.groups();
        self.hash_where(|k| key_group(k).is_some_and(|g| groups.contains(&g)))
    }

    fn hash_where(&self, keep: impl Fn(&str) -> bool) -> String {
        let mut h = Sha256::new();
        for (k, v) in self.entries() {
            if keep(k) {
                h.update(format!("{k} = {v}\n").as_bytes());
            }
        }
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Contract(m));
        let all: Vec<usize> = self.seen.iter().chain(&self.unseen).copied().collect();
        if self.seen.len() < 2 {
            return fail("at least two seen classes are required".into());
        }
        if let Some(c) = all.iter().find(|&&c| c >= self.num_classes) {
            return fail(format!("class {c} out of range for num_classes = {}", self.num_classes));
        }
        let mut sorted = all.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != all.len() {
            return fail("seen and unseen lists overlap or repeat a class".into());
        }
        if self.replicates == 0 || self.shots == 0 || self.timesteps < 2 {
            return fail("replicates, shots and timesteps must be positive".into());
        }
        if !(self.scale >= 0.0) || !(self.lambda >= 0.0) || !(self.tau > 0.0) {
            return fail("scale and lambda must be non-negative and tau positive".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> crate::numerics::Adam {
        crate::numerics::Adam {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
        }
    }

    pub fn target_spec(&self) -> crate::scm::ScmSpec {
        crate::scm::ScmSpec {
            num_classes: self.num_classes,
            image_dim: crate::scm::glyph::PIXELS,
            sigma_x: self.sigma_x,
            intensity_range: (self.intensity_min, self.intensity_max),
        }
    }

    /// The domain the image encoder is pretrained on.
    pub fn source_spec(&self) -> crate::scm::ScmSpec {
        crate::scm::ScmSpec {
            intensity_range: (self.source_intensity_min, self.source_intensity_max),
            ..self.target_spec()
        }
    }
}

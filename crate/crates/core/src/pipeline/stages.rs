//! The experiment stages. Each reads the artifacts of earlier stages from
//! the run directory and writes its own.

use std::fs;
use std::path::{Path, PathBuf};

use super::cfdata::{read_pairs, write_pairs};
use super::config::{ExperimentConfig, Stage};
use super::csv::{fmt, fmt_sci, CsvTable};
use crate::anticausal::{self, AntiCausalClassifier, ClassifierConfig, ClassifierTraining};
use crate::cf_engine::dump::write_triplet;
use crate::cf_engine::{
    check_conditions, corollary_harness, evaluate_quality, summarize, violation_probe, CfEngine, CounterfactualPair,
    QualitySummary, Strategy,
};
use crate::checkpoint::Checkpoint;
use crate::diffusion::{
    ddpm_train_step, from_model_space, make_schedule, reconstruct, to_model_space, DenoiserConfig, DenoiserModel,
    NoiseSchedule,
};
use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;
use crate::prompt_learner::probe::linear_probe_accuracy;
use crate::prompt_learner::{
    class_anchors, pretrain_image_encoder, train_prompts, EncoderConfig, EncoderState, EncoderTraining, EpochLog,
    EvalSet, PromptConfig, PromptData, PromptState, PromptTraining,
};
use crate::rng::{derive_rng, derive_seed};
use crate::scm::analytic::{AnalyticFamily, AnalyticScm};
use crate::scm::io::{manifest_path, read_dataset, write_dataset};
use crate::scm::{biased_pool, class_balanced, make_splits, ScmSample, SplitOptions};
use crate::stats::{linf_distance, mean};

/// Images checked by the reconstruction round trip.
pub const ROUNDTRIP_IMAGES: usize = 200;
/// Triplet dumps written by `gen-cf`.
pub const DUMPED_TRIPLETS: usize = 8;
const LOSS_LOG_EVERY: usize = 100;
const PROBE_STEPS: usize = 300;
const THEORY_TRIALS: usize = 1000;
const THEORY_DIM: usize = 5;
const THEORY_DELTA: f64 = 0.01;
const THEORY_CONDITION_POINTS: usize = 100;
const THEORY_DRAWS: usize = 10_000;

pub const POOL: &str = "data/pool.cfds";
pub const ENCODER_POOL: &str = "data/encoder.cfds";
pub const DENOISER: &str = "models/denoiser.ck";
pub const CLASSIFIER: &str = "models/classifier.ck";
pub const ENCODER: &str = "models/encoder.ck";
pub const CF_EVAL: &str = "cf/eval.cfcf";

pub fn train_data(r: usize) -> String {
    format!("data/train-r{r}.cfds")
}

pub fn test_data(r: usize) -> String {
    format!("data/test-r{r}.cfds")
}

pub fn cf_train(r: usize) -> String {
    format!("cf/train-r{r}.cfcf")
}

pub fn prompts_ck(r: usize) -> String {
    format!("models/prompts-r{r}.ck")
}

pub fn baseline_ck(r: usize) -> String {
    format!("models/baseline-r{r}.ck")
}

pub fn prompts_log(r: usize) -> String {
    format!("metrics/prompts-r{r}.csv")
}

pub fn sweep_csv(axis: Axis) -> String {
    format!("metrics/sweep-{}.csv", axis.name())
}

/// A sweepable configuration axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Scale,
    Lambda,
    Shots,
    Length,
    Strategy,
}

impl Axis {
    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "s" | "scale" => Axis::Scale,
            "lambda" => Axis::Lambda,
            "shots" => Axis::Shots,
            "length" => Axis::Length,
            "strategy" => Axis::Strategy,
            _ => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::Scale => "s",
            Axis::Lambda => "lambda",
            Axis::Shots => "shots",
            Axis::Length => "length",
            Axis::Strategy => "strategy",
        }
    }

    fn key(self) -> &'static str {
        match self {
            Axis::Scale => "scale",
            Axis::Lambda => "lambda",
            Axis::Shots => "shots",
            Axis::Length => "prompt_length",
            Axis::Strategy => "strategy",
        }
    }
}

fn stack(samples: &[ScmSample]) -> Result<Tensor> {
    let m = samples.first().map_or(0, |s| s.x.len());
    Tensor::new(
        vec![samples.len(), m],
        samples.iter().flat_map(|s| s.x.iter().copied()).collect(),
    )
}

fn stack_cf(pairs: &[CounterfactualPair]) -> Result<Tensor> {
    let m = pairs.first().map_or(0, |p| p.x_cf.len());
    Tensor::new(
        vec![pairs.len(), m],
        pairs.iter().flat_map(|p| p.x_cf.iter().copied()).collect(),
    )
}

fn labels(samples: &[ScmSample]) -> Vec<usize> {
    samples.iter().map(|s| s.y).collect()
}

/// Rows of `v` whose label is in `classes`.
fn subset(v: &Tensor, y: &[usize], classes: &[usize]) -> Result<(Tensor, Vec<usize>)> {
    let (_, d) = v.dims2()?;
    let mut rows = Vec::new();
    let mut out = Vec::new();
    for (i, c) in y.iter().enumerate() {
        if classes.contains(c) {
            rows.extend_from_slice(v.row(i));
            out.push(*c);
        }
    }
    Ok((Tensor::new(vec![out.len(), d], rows)?, out))
}

fn split_seed(cfg: &ExperimentConfig, r: usize) -> u64 {
    derive_seed(cfg.seed, "split", r as u64)
}

pub fn prompt_config(cfg: &ExperimentConfig) -> PromptConfig {
    PromptConfig {
        embed_dim: cfg.embed_dim,
        prompt_len: cfg.prompt_length,
        tau: cfg.tau,
        text_hidden: cfg.text_hidden,
        ctx_init_std: 0.0,
    }
}

/// The untrained prompt state of replicate `r`. The frozen text path is
/// shared by all replicates.
pub fn fresh_prompts(cfg: &ExperimentConfig, r: usize) -> Result<PromptState> {
    PromptState::new(
        prompt_config(cfg),
        cfg.num_classes,
        derive_seed(cfg.seed, "text", 0),
        derive_seed(cfg.seed, "prompt-init", r as u64),
    )
}

/// `mean(v . g(w^y(v))) - mean(v_cf . g(w^y(v)))` over train pairs.
pub fn repulsion_margin(state: &PromptState, v: &Tensor, v_cf: &Tensor, y: &[usize]) -> Result<f64> {
    let g = state.prompts(v, y)?;
    let (n, _) = v.dims2()?;
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(p, q)| p * q).sum::<f64>();
    let diffs: Vec<f64> = (0..n)
        .map(|i| dot(v.row(i), g.row(i)) - dot(v_cf.row(i), g.row(i)))
        .collect();
    Ok(mean(&diffs))
}

struct Models {
    model: DenoiserModel,
    classifier: AntiCausalClassifier,
    schedule: NoiseSchedule,
}

impl Models {
    fn engine(&self) -> CfEngine<'_> {
        CfEngine {
            model: &self.model,
            classifier: &self.classifier,
            schedule: &self.schedule,
        }
    }
}

/// Embeddings of one replicate's train pairs and test set.
struct Embedded {
    v: Tensor,
    v_cf: Tensor,
    y: Vec<usize>,
    vt: Tensor,
    yt: Vec<usize>,
}

/// Final-epoch summary of one prompt fit.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitSummary {
    pub seen_acc: f64,
    pub unseen_acc: f64,
    pub basic: f64,
    pub cf: f64,
}

fn summary_of(logs: &[EpochLog]) -> Result<FitSummary> {
    let last = logs
        .last()
        .ok_or_else(|| Error::Contract("prompt training ran zero epochs".into()))?;
    Ok(FitSummary {
        seen_acc: last.seen_acc.unwrap_or(f64::NAN),
        unseen_acc: last.unseen_acc.unwrap_or(f64::NAN),
        basic: last.basic,
        cf: last.cf,
    })
}

fn mean_summary(fits: &[FitSummary]) -> FitSummary {
    let col = |f: fn(&FitSummary) -> f64| mean(&fits.iter().map(f).collect::<Vec<_>>());
    FitSummary {
        seen_acc: col(|f| f.seen_acc),
        unseen_acc: col(|f| f.unseen_acc),
        basic: col(|f| f.basic),
        cf: col(|f| f.cf),
    }
}

/// A run directory together with the configuration driving it.
pub struct Run {
    pub config: ExperimentConfig,
    /// Accept artifacts produced under a different configuration.
    pub allow_lineage_mismatch: bool,
}

impl Run {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        Ok(Run {
            config,
            allow_lineage_mismatch: false,
        })
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.config.out.join(rel)
    }

    fn hash(&self, stage: Stage) -> String {
        self.config.stage_hash(stage)
    }

    fn prepare(&self, rel: &str) -> Result<PathBuf> {
        let p = self.path(rel);
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
        Ok(p)
    }

    /// Path of an existing upstream artifact.
    pub fn require(&self, rel: &str, producer: Stage) -> Result<PathBuf> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p,
                producer: producer.producer(),
            });
        }
        Ok(p)
    }

    fn check_lineage(&self, path: &Path, producer: Stage, found: &str) -> Result<()> {
        let expected = self.hash(producer);
        if found != expected && !self.allow_lineage_mismatch {
            return Err(Error::Lineage {
                path: path.to_path_buf(),
                expected,
                found: found.to_string(),
            });
        }
        Ok(())
    }

    fn load_checkpoint(&self, rel: &str, producer: Stage) -> Result<Checkpoint> {
        let p = self.require(rel, producer)?;
        let ck = Checkpoint::load(&p)?;
        self.check_lineage(&p, producer, ck.meta_str("config_hash")?)?;
        Ok(ck)
    }

    fn load_dataset(&self, rel: &str) -> Result<Vec<ScmSample>> {
        let p = self.require(rel, Stage::Data)?;
        let manifest = fs::read_to_string(manifest_path(&p))?;
        let found = manifest
            .lines()
            .find_map(|l| l.strip_prefix("config_hash = "))
            .unwrap_or("");
        self.check_lineage(&p, Stage::Data, found)?;
        let (k, m, samples) = read_dataset(&p)?;
        if k != self.config.num_classes || m != crate::scm::glyph::PIXELS {
            return contract(format!("{} holds K = {k}, m = {m}", p.display()));
        }
        Ok(samples)
    }

    fn load_pairs(&self, rel: &str) -> Result<Vec<CounterfactualPair>> {
        let p = self.require(rel, Stage::Counterfactuals)?;
        let (found, pairs) = read_pairs(&p)?;
        self.check_lineage(&p, Stage::Counterfactuals, &found)?;
        Ok(pairs)
    }

    fn save_checkpoint(&self, rel: &str, ck: Checkpoint, stage: Stage) -> Result<PathBuf> {
        let p = self.prepare(rel)?;
        ck.with("config_hash", self.hash(stage)).save(&p)?;
        Ok(p)
    }

    fn write_csv(&self, rel: &str, table: &CsvTable, stage: Stage) -> Result<PathBuf> {
        let p = self.prepare(rel)?;
        table.write(&p, &self.hash(stage))?;
        Ok(p)
    }

    fn schedule(&self) -> Result<NoiseSchedule> {
        make_schedule(self.config.timesteps, self.config.beta_min, self.config.beta_max)
    }

    fn load_models(&self) -> Result<Models> {
        let model = DenoiserModel::from_checkpoint(&self.load_checkpoint(DENOISER, Stage::Diffusion)?)?;
        let classifier = AntiCausalClassifier::from_checkpoint(&self.load_checkpoint(CLASSIFIER, Stage::Classifier)?)?;
        Ok(Models {
            model,
            classifier,
            schedule: self.schedule()?,
        })
    }

    fn load_encoder(&self) -> Result<EncoderState> {
        EncoderState::from_checkpoint(&self.load_checkpoint(ENCODER, Stage::Encoder)?)
    }

    fn embed_replicate(
        &self,
        encoder: &EncoderState,
        train: &[ScmSample],
        pairs: &[CounterfactualPair],
        test: &[ScmSample],
    ) -> Result<Embedded> {
        if pairs.len() != train.len() || pairs.iter().zip(train).any(|(p, s)| p.x != s.x || p.y != s.y) {
            return contract("counterfactual pairs do not match the train images; rerun gen-cf");
        }
        Ok(Embedded {
            v: encoder.embed(&stack(train)?)?,
            v_cf: encoder.embed(&stack_cf(pairs)?)?,
            y: labels(train),
            vt: encoder.embed(&stack(test)?)?,
            yt: labels(test),
        })
    }

    /// Trains replicate `r`'s prompts under `cfg` with weight `lambda`.
    fn fit(&self, cfg: &ExperimentConfig, r: usize, lambda: f64, e: &Embedded) -> Result<(PromptState, Vec<EpochLog>)> {
        let mut state = fresh_prompts(cfg, r)?;
        let eval = EvalSet {
            v: &e.vt,
            labels: &e.yt,
            seen: &cfg.seen,
            unseen: &cfg.unseen,
        };
        let data = PromptData {
            v: &e.v,
            v_cf: &e.v_cf,
            labels: &e.y,
        };
        let training = PromptTraining {
            epochs: cfg.prompt_epochs,
            batch: cfg.prompt_batch,
            lr: cfg.prompt_lr,
            lambda,
            optimizer: cfg.adam(),
        };
        let mut rng = derive_rng(cfg.seed, "prompt-train", r as u64);
        let logs = train_prompts(&mut state, &data, &cfg.seen, &training, Some(&eval), &mut rng)?;
        Ok((state, logs))
    }

    fn generate(
        &self,
        models: &Models,
        samples: &[ScmSample],
        s: f64,
        strategy: Strategy,
        tag: &str,
        r: usize,
    ) -> Result<Vec<CounterfactualPair>> {
        let mut rng = derive_rng(self.config.seed, tag, r as u64);
        models
            .engine()
            .generate(&stack(samples)?, &labels(samples), s, strategy, &mut rng)
    }

    /// Writes the target pool, the encoder corpus and the per-replicate
    /// splits, each with a manifest.
    pub fn gen_data(&self) -> Result<Vec<PathBuf>> {
        let cfg = &self.config;
        let spec = cfg.target_spec();
        spec.validate()?;
        let source = cfg.source_spec();
        source.validate()?;
        let hash = self.hash(Stage::Data);
        let mut written = Vec::new();
        let mut table = CsvTable::new("data", &["file", "count"]);
        let mut put = |rel: &str, spec: &crate::scm::ScmSpec, samples: &[ScmSample], role: &str| -> Result<()> {
            let p = self.prepare(rel)?;
            write_dataset(
                &p,
                spec,
                samples,
                cfg.seed,
                &[("role", role.to_string()), ("config_hash", hash.clone())],
            )?;
            table.push(vec![rel.to_string(), samples.len().to_string()])?;
            written.push(p);
            Ok(())
        };
        let pool = class_balanced(
            &spec,
            &cfg.seen,
            cfg.pool_per_class,
            derive_seed(cfg.seed, "pool", 0),
            "pool",
        )?;
        put(POOL, &spec, &pool, "diffusion and classifier pool")?;
        let all: Vec<usize> = (0..cfg.num_classes).collect();
        let corpus = biased_pool(
            &source,
            &all,
            cfg.encoder_pool_per_class,
            0.0,
            derive_seed(cfg.seed, "encoder-pool", 0),
            "encoder",
        )?;
        put(ENCODER_POOL, &source, &corpus, "encoder corpus")?;
        let opts = SplitOptions {
            test_per_class: cfg.test_per_class,
            spurious_rho: cfg.spurious_rho,
        };
        for r in 0..cfg.replicates {
            let split = make_splits(&spec, &cfg.seen, &cfg.unseen, cfg.shots, split_seed(cfg, r), &opts)?;
            put(&train_data(r), &spec, &split.train, "train")?;
            put(&test_data(r), &spec, &split.test, "test")?;
        }
        let cfg_path = self.prepare("config.cfg")?;
        fs::write(&cfg_path, cfg.to_text())?;
        written.push(cfg_path);
        written.push(self.write_csv("metrics/data.csv", &table, Stage::Data)?);
        Ok(written)
    }

    /// Trains the denoiser on the pool and measures the unguided round trip.
    pub fn pretrain_diffusion(&self) -> Result<Vec<PathBuf>> {
        let cfg = &self.config;
        let pool = self.load_dataset(POOL)?;
        let x = stack(&pool)?;
        let (n, m) = x.dims2()?;
        let schedule = self.schedule()?;
        let dcfg = DenoiserConfig {
            hidden: cfg.denoiser_hidden,
            depth: cfg.denoiser_depth,
            emb_dim: cfg.time_embedding,
        };
        let mut model = DenoiserModel::new(m, dcfg, &mut derive_rng(cfg.seed, "denoiser-init", 0))?;
        let mut rng = derive_rng(cfg.seed, "denoiser-train", 0);
        let opt = cfg.adam();
        let mut losses = CsvTable::new("diffusion", &["step", "loss"]);
        let mut block = Vec::with_capacity(LOSS_LOG_EVERY);
        for step in 0..cfg.diffusion_steps {
            let mut rows = Vec::with_capacity(cfg.diffusion_batch * m);
            for _ in 0..cfg.diffusion_batch {
                rows.extend_from_slice(x.row(rand::Rng::random_range(&mut rng, 0..n)));
            }
            let batch = Tensor::new(vec![cfg.diffusion_batch, m], rows)?;
            block.push(ddpm_train_step(
                &mut model,
                &schedule,
                &batch,
                &mut rng,
                &opt,
                cfg.diffusion_lr,
            )?);
            if block.len() == LOSS_LOG_EVERY || step + 1 == cfg.diffusion_steps {
                losses.push(vec![(step + 1).to_string(), fmt(mean(&block))])?;
                block.clear();
            }
        }
        let mut written = vec![self.save_checkpoint(DENOISER, model.to_checkpoint(), Stage::Diffusion)?];
        written.push(self.write_csv("metrics/diffusion.csv", &losses, Stage::Diffusion)?);

        let per_class = ROUNDTRIP_IMAGES.div_ceil(cfg.seen.len());
        let mut held = class_balanced(
            &cfg.target_spec(),
            &cfg.seen,
            per_class,
            derive_seed(cfg.seed, "roundtrip", 0),
            "roundtrip",
        )?;
        held.truncate(ROUNDTRIP_IMAGES);
        let images = stack(&held)?;
        let rec = from_model_space(&reconstruct(&model, &schedule, &to_model_space(&images))?);
        let errs: Vec<f64> = (0..held.len())
            .map(|i| linf_distance(images.row(i), rec.row(i)))
            .collect();
        let mut sorted = errs.clone();
        sorted.sort_by(f64::total_cmp);
        let within = errs.iter().filter(|e| **e <= cfg.recon_tolerance).count() as f64 / errs.len() as f64;
        let p95 = sorted[(0.95 * sorted.len() as f64).ceil() as usize - 1];
        let mut rt = CsvTable::new(
            "roundtrip",
            &[
                "images",
                "tolerance",
                "within_fraction",
                "mean_linf",
                "p95_linf",
                "max_linf",
            ],
        );
        rt.push(vec![
            errs.len().to_string(),
            fmt(cfg.recon_tolerance),
            fmt(within),
            fmt(mean(&errs)),
            fmt(p95),
            fmt(sorted[sorted.len() - 1]),
        ])?;
        written.push(self.write_csv("metrics/roundtrip.csv", &rt, Stage::Diffusion)?);
        Ok(written)
    }

    /// Trains the time-conditioned classifier on the pool.
    pub fn train_classifier(&self) -> Result<Vec<PathBuf>> {
        let cfg = &self.config;
        let pool = self.load_dataset(POOL)?;
        let x = stack(&pool)?;
        let (_, m) = x.dims2()?;
        let schedule = self.schedule()?;
        let ccfg = ClassifierConfig {
            hidden: cfg.classifier_hidden,
            depth: cfg.classifier_depth,
            emb_dim: cfg.time_embedding,
        };
        let mut clf = AntiCausalClassifier::new(
            m,
            cfg.seen.clone(),
            ccfg,
            &mut derive_rng(cfg.seed, "classifier-init", 0),
        )?;
        let training = ClassifierTraining {
            steps: cfg.classifier_steps,
            batch: cfg.classifier_batch,
            lr: cfg.classifier_lr,
            optimizer: cfg.adam(),
        };
        let report = anticausal::train_classifier(
            &mut clf,
            &schedule,
            &x,
            &labels(&pool),
            &training,
            &mut derive_rng(cfg.seed, "classifier-train", 0),
        )?;
        let test: Vec<ScmSample> = self
            .load_dataset(&test_data(0))?
            .into_iter()
            .filter(|s| cfg.seen.contains(&s.y))
            .collect();
        let tx = stack(&test)?;
        let ty = labels(&test);
        let mut table = CsvTable::new("classifier", &["t", "heldout_accuracy", "mean_max_prob"]);
        let mut rng = derive_rng(cfg.seed, "classifier-eval", 0);
        let mid = schedule.steps() / 2;
        for t in [0, mid, schedule.last()] {
            let sc = anticausal::noised_scores(&clf, &schedule, &tx, &ty, t, &mut rng)?;
            table.push(vec![t.to_string(), fmt(sc.accuracy), fmt(sc.mean_max_prob)])?;
        }
        let mut fit = CsvTable::new("classifier-fit", &["final_loss", "clean_train_accuracy"]);
        fit.push(vec![fmt(report.final_loss), fmt(report.clean_train_accuracy)])?;
        Ok(vec![
            self.save_checkpoint(CLASSIFIER, clf.to_checkpoint(), Stage::Classifier)?,
            self.write_csv("metrics/classifier.csv", &table, Stage::Classifier)?,
            self.write_csv("metrics/classifier-fit.csv", &fit, Stage::Classifier)?,
        ])
    }

    /// Seen-class test images counterfactuals are evaluated on.
    fn cf_eval_images(&self) -> Result<Vec<ScmSample>> {
        let cfg = &self.config;
        let test = self.load_dataset(&test_data(0))?;
        let mut out = Vec::new();
        for &c in &cfg.seen {
            out.extend(test.iter().filter(|s| s.y == c).take(cfg.cf_eval_per_class).cloned());
        }
        Ok(out)
    }

    /// Counterfactuals for every train image of every replicate and for the
    /// evaluation images, with quality metrics and triplet dumps.
    pub fn gen_cf(&self) -> Result<Vec<PathBuf>> {
        let cfg = &self.config;
        let models = self.load_models()?;
        let hash = self.hash(Stage::Counterfactuals);
        let mut table = CsvTable::new("cf-quality", &QUALITY_COLUMNS_WITH_SET);
        let mut written = Vec::new();
        for r in 0..cfg.replicates {
            let train = self.load_dataset(&train_data(r))?;
            let pairs = self.generate(&models, &train, cfg.scale, cfg.strategy, "cf", r)?;
            let p = self.prepare(&cf_train(r))?;
            write_pairs(&p, &hash, &pairs)?;
            written.push(p);
            let q = summarize(&evaluate_quality(&pairs, &models.classifier)?);
            table.push(quality_row(&format!("train-r{r}"), &q))?;
        }
        let eval_images = self.cf_eval_images()?;
        let pairs = self.generate(&models, &eval_images, cfg.scale, cfg.strategy, "cf-eval", 0)?;
        let p = self.prepare(CF_EVAL)?;
        write_pairs(&p, &hash, &pairs)?;
        written.push(p);
        let q = summarize(&evaluate_quality(&pairs, &models.classifier)?);
        table.push(quality_row("eval", &q))?;
        for (i, pair) in pairs.iter().take(DUMPED_TRIPLETS).enumerate() {
            let p = self.prepare(&format!("dumps/eval-{i:03}-{}to{}.pgm", pair.y, pair.y_cf))?;
            write_triplet(&p, pair, &format!("config_hash = {hash}"))?;
            written.push(p);
        }
        written.push(self.write_csv("metrics/cf_quality.csv", &table, Stage::Counterfactuals)?);
        Ok(written)
    }

    /// Pretrains the frozen image encoder on the source corpus.
    fn pretrain_encoder(&self) -> Result<(EncoderState, Vec<PathBuf>)> {
        let cfg = &self.config;
        let corpus = self.load_dataset(ENCODER_POOL)?;
        let x = stack(&corpus)?;
        let (_, m) = x.dims2()?;
        let anchors = class_anchors(&fresh_prompts(cfg, 0)?)?;
        let ecfg = EncoderConfig {
            hidden: cfg.encoder_hidden,
            embed_dim: cfg.embed_dim,
        };
        let mut encoder = EncoderState::new(m, ecfg, &mut derive_rng(cfg.seed, "encoder-init", 0))?;
        let training = EncoderTraining {
            steps: cfg.encoder_steps,
            batch: cfg.encoder_batch,
            lr: cfg.encoder_lr,
            optimizer: cfg.adam(),
        };
        let report = pretrain_image_encoder(
            &mut encoder,
            &anchors,
            &x,
            &labels(&corpus),
            cfg.tau,
            &training,
            &mut derive_rng(cfg.seed, "encoder-train", 0),
        )?;
        let mut table = CsvTable::new("encoder", &["final_loss", "train_accuracy"]);
        table.push(vec![fmt(report.final_loss), fmt(report.train_accuracy)])?;
        let written = vec![
            self.save_checkpoint(ENCODER, encoder.to_checkpoint(), Stage::Encoder)?,
            self.write_csv("metrics/encoder.csv", &table, Stage::Encoder)?,
        ];
        Ok((encoder, written))
    }

    /// Pretrains the encoder, then fits prompts per replicate at the
    /// configured weight and at weight 0 (the baseline without the
    /// counterfactual term).
    pub fn train_prompts(&self) -> Result<Vec<PathBuf>> {
        let cfg = &self.config;
        let (encoder, mut written) = self.pretrain_encoder()?;
        for r in 0..cfg.replicates {
            let train = self.load_dataset(&train_data(r))?;
            let test = self.load_dataset(&test_data(r))?;
            let pairs = self.load_pairs(&cf_train(r))?;
            let e = self.embed_replicate(&encoder, &train, &pairs, &test)?;
            let (state, logs) = self.fit(cfg, r, cfg.lambda, &e)?;
            let mut table = CsvTable::new(
                "prompt-epochs",
                &["epoch", "L_basic", "L_cf", "L_total", "seen_acc", "unseen_acc"],
            );
            for l in &logs {
                table.push(vec![
                    l.epoch.to_string(),
                    fmt(l.basic),
                    fmt(l.cf),
                    fmt(l.total),
                    fmt(l.seen_acc.unwrap_or(f64::NAN)),
                    fmt(l.unseen_acc.unwrap_or(f64::NAN)),
                ])?;
            }
            written.push(self.save_checkpoint(&prompts_ck(r), state.to_checkpoint(), Stage::Prompts)?);
            written.push(self.write_csv(&prompts_log(r), &table, Stage::Prompts)?);
            let (base, _) = self.fit(cfg, r, 0.0, &e)?;
            written.push(self.save_checkpoint(&baseline_ck(r), base.to_checkpoint(), Stage::Prompts)?);
        }
        Ok(written)
    }

    /// Scores trained prompts against the untrained prompts, the weight-0
    /// baseline and a linear probe on the frozen embeddings.
    pub fn eval(&self) -> Result<Vec<PathBuf>> {
        let cfg = &self.config;
        let encoder = self.load_encoder()?;
        let mut table = CsvTable::new("eval", &EVAL_COLUMNS);
        let mut rows: Vec<[f64; 9]> = Vec::new();
        for r in 0..cfg.replicates {
            let trained = PromptState::from_checkpoint(&self.load_checkpoint(&prompts_ck(r), Stage::Prompts)?)?;
            let base = PromptState::from_checkpoint(&self.load_checkpoint(&baseline_ck(r), Stage::Prompts)?)?;
            let train = self.load_dataset(&train_data(r))?;
            let test = self.load_dataset(&test_data(r))?;
            let pairs = self.load_pairs(&cf_train(r))?;
            let e = self.embed_replicate(&encoder, &train, &pairs, &test)?;
            let eval = EvalSet {
                v: &e.vt,
                labels: &e.yt,
                seen: &cfg.seen,
                unseen: &cfg.unseen,
            };
            let (zs_s, zs_u) = eval.score(&fresh_prompts(cfg, r)?)?;
            let (b_s, b_u) = eval.score(&base)?;
            let (t_s, t_u) = eval.score(&trained)?;
            let (vs, ys) = subset(&e.vt, &e.yt, &cfg.seen)?;
            let probe = linear_probe_accuracy(
                (&e.v, &e.y),
                (&vs, &ys),
                &cfg.seen,
                PROBE_STEPS,
                &mut derive_rng(cfg.seed, "probe", r as u64),
            )?;
            let row = [
                zs_s,
                zs_u,
                b_s,
                b_u,
                t_s,
                t_u,
                repulsion_margin(&base, &e.v, &e.v_cf, &e.y)?,
                repulsion_margin(&trained, &e.v, &e.v_cf, &e.y)?,
                probe,
            ];
            let mut cells = vec![r.to_string()];
            cells.extend(row.iter().map(|v| fmt(*v)));
            table.push(cells)?;
            rows.push(row);
        }
        let mut cells = vec!["mean".to_string()];
        cells.extend((0..9).map(|j| fmt(mean(&rows.iter().map(|r| r[j]).collect::<Vec<_>>()))));
        table.push(cells)?;
        Ok(vec![self.write_csv("metrics/eval.csv", &table, Stage::Prompts)?])
    }

    /// One row per value of `axis`, each averaged over replicates.
    /// Counterfactuals are regenerated when the axis affects them.
    pub fn sweep(&self, axis: Axis, values: &[String]) -> Result<Vec<PathBuf>> {
        if values.is_empty() {
            return contract("a sweep needs at least one value");
        }
        let mut configs = Vec::with_capacity(values.len());
        for v in values {
            let mut c = self.config.clone();
            c.set(axis.key(), v).map_err(Error::Contract)?;
            c.validate()?;
            configs.push(c);
        }
        let encoder = self.load_encoder()?;
        let models = match axis {
            Axis::Scale | Axis::Strategy | Axis::Shots => Some(self.load_models()?),
            Axis::Lambda | Axis::Length => None,
        };
        let replicates = self.config.replicates;
        let mut tests = Vec::with_capacity(replicates);
        let mut trains = Vec::with_capacity(replicates);
        let mut stored = Vec::with_capacity(replicates);
        for r in 0..replicates {
            tests.push(self.load_dataset(&test_data(r))?);
            if models.is_none() {
                trains.push(self.load_dataset(&train_data(r))?);
                stored.push(self.load_pairs(&cf_train(r))?);
            }
        }

        let columns: &[&str] = match axis {
            Axis::Lambda | Axis::Length => &[axis.name(), "seen_acc", "unseen_acc", "L_basic", "L_cf"],
            Axis::Shots => &["shots", "seen_acc", "unseen_acc", "mean_acc", "L_basic", "L_cf"],
            Axis::Scale | Axis::Strategy => &[
                axis.name(),
                "count",
                "flip_rate",
                "mean_l2",
                "mean_leakage_rms",
                "mean_causal_rms",
                "mean_quality",
                "seen_acc",
                "unseen_acc",
            ],
        };
        let mut table = CsvTable::new(&format!("sweep-{}", axis.name()), columns);
        for (value, cfg) in values.iter().zip(&configs) {
            let mut fits = Vec::with_capacity(replicates);
            let mut all_pairs = Vec::new();
            for r in 0..replicates {
                let (train, pairs) = match &models {
                    None => (trains[r].clone(), stored[r].clone()),
                    Some(models) => {
                        let train = if axis == Axis::Shots {
                            let opts = SplitOptions {
                                test_per_class: cfg.test_per_class,
                                spurious_rho: cfg.spurious_rho,
                            };
                            make_splits(
                                &cfg.target_spec(),
                                &cfg.seen,
                                &cfg.unseen,
                                cfg.shots,
                                split_seed(cfg, r),
                                &opts,
                            )?
                            .train
                        } else {
                            self.load_dataset(&train_data(r))?
                        };
                        let pairs = self.generate(models, &train, cfg.scale, cfg.strategy, "cf", r)?;
                        (train, pairs)
                    }
                };
                let e = self.embed_replicate(&encoder, &train, &pairs, &tests[r])?;
                let (_, logs) = self.fit(cfg, r, cfg.lambda, &e)?;
                fits.push(summary_of(&logs)?);
                all_pairs.extend(pairs);
            }
            let m = mean_summary(&fits);
            let row = match axis {
                Axis::Lambda | Axis::Length => {
                    vec![
                        value.clone(),
                        fmt(m.seen_acc),
                        fmt(m.unseen_acc),
                        fmt(m.basic),
                        fmt(m.cf),
                    ]
                }
                Axis::Shots => vec![
                    value.clone(),
                    fmt(m.seen_acc),
                    fmt(m.unseen_acc),
                    fmt((m.seen_acc + m.unseen_acc) / 2.0),
                    fmt(m.basic),
                    fmt(m.cf),
                ],
                Axis::Scale | Axis::Strategy => {
                    let clf = &models.as_ref().expect("loaded for this axis").classifier;
                    let q = summarize(&evaluate_quality(&all_pairs, clf)?);
                    vec![
                        value.clone(),
                        q.count.to_string(),
                        fmt(q.flip_rate),
                        fmt(q.mean_l2),
                        fmt(q.mean_leakage_rms),
                        fmt(q.mean_causal_rms),
                        fmt(q.mean_quality),
                        fmt(m.seen_acc),
                        fmt(m.unseen_acc),
                    ]
                }
            };
            table.push(row)?;
        }
        Ok(vec![self.write_csv(&sweep_csv(axis), &table, Stage::Prompts)?])
    }

    /// Runs the counterfactual error harness and the identifiability checks
    /// on the analytic vector models.
    pub fn verify_theory(&self) -> Result<Vec<PathBuf>> {
        let seed = self.config.seed;
        let mut bounds = CsvTable::new(
            "theory",
            &[
                "check",
                "family",
                "delta",
                "trials",
                "max_reconstruction_error",
                "max_counterfactual_error",
                "cf_exceeds_reconstruction",
            ],
        );
        let mut conditions = CsvTable::new(
            "theory-conditions",
            &[
                "family",
                "points",
                "pd_points",
                "draws",
                "max_latent_correlation",
                "max_q_defect",
            ],
        );
        for family in [AnalyticFamily::AdditiveOrthogonal, AnalyticFamily::PostNonlinear] {
            let general = AnalyticScm::new(THEORY_DIM, family, false, derive_seed(seed, "theory-scm", 0))?;
            let unit = AnalyticScm::new(THEORY_DIM, family, true, derive_seed(seed, "theory-scm", 1))?;
            let runs = [
                ("exact", 0.0, corollary_harness(&general, 0.0, THEORY_TRIALS, seed)?),
                (
                    "distorted",
                    THEORY_DELTA,
                    corollary_harness(&unit, THEORY_DELTA, THEORY_TRIALS, seed)?,
                ),
                ("dependent-latent", 0.0, violation_probe(&general, THEORY_TRIALS, seed)?),
            ];
            for (check, delta, rep) in runs {
                bounds.push(vec![
                    check.to_string(),
                    family.name().to_string(),
                    fmt(delta),
                    rep.trials.to_string(),
                    fmt_sci(rep.max_reconstruction_error),
                    fmt_sci(rep.max_counterfactual_error),
                    rep.cf_exceeds_reconstruction.to_string(),
                ])?;
            }
            let c = check_conditions(&general, THEORY_CONDITION_POINTS, THEORY_DRAWS, seed)?;
            conditions.push(vec![
                family.name().to_string(),
                c.points.to_string(),
                c.pd_points.to_string(),
                THEORY_DRAWS.to_string(),
                fmt(c.max_latent_correlation),
                fmt_sci(c.max_q_defect),
            ])?;
        }
        Ok(vec![
            self.write_csv("metrics/theory.csv", &bounds, Stage::Theory)?,
            self.write_csv("metrics/theory-conditions.csv", &conditions, Stage::Theory)?,
        ])
    }

    /// Every stage in order, as run by a default end-to-end invocation.
    pub fn all(&self) -> Result<Vec<PathBuf>> {
        let mut written = self.gen_data()?;
        written.extend(self.pretrain_diffusion()?);
        written.extend(self.train_classifier()?);
        written.extend(self.gen_cf()?);
        written.extend(self.train_prompts()?);
        written.extend(self.eval()?);
        written.extend(self.verify_theory()?);
        Ok(written)
    }
}

pub const EVAL_COLUMNS: [&str; 10] = [
    "replicate",
    "zero_shot_seen",
    "zero_shot_unseen",
    "baseline_seen",
    "baseline_unseen",
    "seen_acc",
    "unseen_acc",
    "baseline_margin",
    "margin",
    "probe_seen",
];

const QUALITY_COLUMNS_WITH_SET: [&str; 9] = [
    "set",
    "count",
    "flip_rate",
    "mean_flip_confidence",
    "mean_l2",
    "mean_linf",
    "mean_leakage_rms",
    "mean_causal_rms",
    "mean_quality",
];

fn quality_row(set: &str, q: &QualitySummary) -> Vec<String> {
    vec![
        set.to_string(),
        q.count.to_string(),
        fmt(q.flip_rate),
        fmt(q.mean_flip_confidence),
        fmt(q.mean_l2),
        fmt(q.mean_linf),
        fmt(q.mean_leakage_rms),
        fmt(q.mean_causal_rms),
        fmt(q.mean_quality),
    ]
}

//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary (`harness = false`) so the lines come out in order
//! and are never swallowed by output capture. Exits non-zero if any fail.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::Rng;
use rand_distr::StandardNormal;

use cfprompt::anticausal::{classifier_loss, AntiCausalClassifier, ClassifierConfig, LABEL_SMOOTHING};
use cfprompt::cf_engine::{check_conditions, corollary_harness, evaluate_quality, CounterfactualPair};
use cfprompt::checkpoint::Checkpoint;
use cfprompt::diffusion::{ddpm_loss, make_schedule, reconstruct, DenoiserConfig, DenoiserModel, NoisePredictor};
use cfprompt::numerics::{forward_and_grad, Graph, ParamVars, Tensor, Var};
use cfprompt::pipeline::cfdata::read_pairs;
use cfprompt::pipeline::stages::{cf_train, prompts_log, test_data, CF_EVAL, CLASSIFIER};
use cfprompt::pipeline::{Axis, CsvTable, ExperimentConfig, Run};
use cfprompt::prompt_learner::loss::{loss_basic_graph, loss_cf_graph};
use cfprompt::prompt_learner::{
    cf_loss_from_scores, class_anchors, loss_basic, loss_cf, total_loss, total_loss_and_grad, PromptConfig, PromptState,
};
use cfprompt::rng::rng_from;
use cfprompt::scm::glyph::union_mask;
use cfprompt::scm::io::read_dataset;
use cfprompt::scm::{true_counterfactual, AnalyticFamily, AnalyticScm};

const GRAD_SEEDS: u64 = 20;
const GRAD_STEP: f64 = 1e-6;
const GRAD_TOL: f64 = 1e-4;
const CF_ORACLE_TOL: f64 = 1e-6;
const UNIFORM_TOL: f64 = 1e-9;
const LINEARITY_TOL: f64 = 1e-12;
const EXACT_TOL: f64 = 1e-10;
const DELTA: f64 = 0.01;
const THEORY_TRIALS: usize = 1000;
const CONDITION_POINTS: usize = 100;
const CONDITION_DRAWS: usize = 10_000;
const MAX_CORRELATION: f64 = 0.05;
const Q_TOL: f64 = 1e-8;
const ROUNDTRIP_FRACTION: f64 = 0.95;
const ROUNDTRIP_IMAGES: usize = 200;
const ZERO_MODEL_TOL: f64 = 1e-12;
const MIN_FLIP: f64 = 0.8;
const MIN_GENERATIONS: usize = 100;
const LAMBDA_RANGE: f64 = 0.05;
const BUDGET: Duration = Duration::from_secs(30 * 60);

const LAMBDAS: [&str; 6] = ["0", "0.25", "0.5", "1", "2", "4"];
const SHOTS: [&str; 3] = ["4", "8", "16"];
const LENGTHS: [&str; 3] = ["4", "8", "16"];
const SCALES: [&str; 7] = ["0", "0.5", "1", "2", "5", "10", "50"];
const STRATEGIES: [&str; 2] = ["similarity", "random"];

struct Report {
    failed: Vec<u32>,
    broken: Vec<&'static str>,
}

impl Report {
    fn line(&mut self, id: u32, name: &str, pass: bool, detail: String) {
        if !pass {
            self.failed.push(id);
        }
        println!(
            "criterion {id:2} {:<28} {}  {detail}",
            name,
            if pass { "PASS" } else { "FAIL" }
        );
    }

    /// Module-level properties measured on the same default run.
    fn invariant(&mut self, name: &'static str, pass: bool, detail: String) {
        if !pass {
            self.broken.push(name);
        }
        println!(
            "invariant    {:<28} {}  {detail}",
            name,
            if pass { "PASS" } else { "FAIL" }
        );
    }
}

fn numeric_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64]) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            p[i] = orig + GRAD_STEP;
            let up = f(&p);
            p[i] = orig - GRAD_STEP;
            let down = f(&p);
            p[i] = orig;
            (up - down) / (2.0 * GRAD_STEP)
        })
        .collect()
}

fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norm(&diff) / norm(a).max(norm(b)).max(1e-8)
}

fn flat(grads: &[Tensor]) -> Vec<f64> {
    grads.iter().flat_map(|g| g.data().to_vec()).collect()
}

fn normal_tensor(seed: u64, n: usize, d: usize) -> Tensor {
    let mut rng = rng_from(seed);
    Tensor::new(vec![n, d], (0..n * d).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
}

fn unit_rows(seed: u64, n: usize, d: usize) -> Tensor {
    let t = normal_tensor(seed, n, d);
    let mut data = Vec::with_capacity(n * d);
    for i in 0..n {
        let row = t.row(i);
        let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
        data.extend(row.iter().map(|v| v / norm));
    }
    Tensor::new(vec![n, d], data).unwrap()
}

fn prompt_state(seed: u64, text_hidden: usize, tau: f64) -> PromptState {
    let cfg = PromptConfig {
        embed_dim: 6,
        prompt_len: 4,
        tau,
        text_hidden,
        ctx_init_std: 0.0,
    };
    let mut s = PromptState::new(cfg, 6, seed, seed + 1).unwrap();
    let mut rng = rng_from(seed + 2);
    let p: Vec<f64> = s
        .learned
        .flatten()
        .iter()
        .map(|_| 0.3 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    s.learned.assign_flat(&p).unwrap();
    s
}

fn prompt_gradcheck<F>(state: &PromptState, build: F) -> f64
where
    F: Fn(&mut Graph, &ParamVars<'_>, &ParamVars<'_>) -> cfprompt::Result<Var>,
{
    let eval = |s: &PromptState| {
        forward_and_grad(&s.learned, |g, lp| {
            let fp = s.frozen.bind(g, false);
            build(g, lp, &fp)
        })
        .unwrap()
    };
    let analytic = flat(&eval(state).1);
    let numeric = numeric_gradient(
        |p| {
            let mut s = state.clone();
            s.learned.assign_flat(p).unwrap();
            eval(&s).0
        },
        &state.learned.flatten(),
    );
    rel_error(&analytic, &numeric)
}

fn criterion_01_gradients(report: &mut Report) {
    let schedule = make_schedule(50, 1e-3, 0.3).unwrap();
    let mut worst = [0.0f64; 5];
    for seed in 0..GRAD_SEEDS {
        let mut rng = rng_from(1000 + seed);
        let cfg = DenoiserConfig {
            hidden: 8,
            depth: 1,
            emb_dim: 4,
        };
        let model = DenoiserModel::new(5, cfg, &mut rng).unwrap();
        let x0 = Tensor::new(vec![3, 5], (0..15).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let ts: Vec<usize> = (0..3).map(|_| rng.random_range(0..50)).collect();
        let eps = normal_tensor(2000 + seed, 3, 5);
        let analytic = flat(&ddpm_loss(&model, &schedule, &x0, &ts, &eps).unwrap().1);
        let numeric = numeric_gradient(
            |p| {
                let mut m = model.clone();
                m.params.assign_flat(p).unwrap();
                ddpm_loss(&m, &schedule, &x0, &ts, &eps).unwrap().0
            },
            &model.params.flatten(),
        );
        worst[0] = worst[0].max(rel_error(&analytic, &numeric));

        let cfg = ClassifierConfig {
            hidden: 7,
            depth: 2,
            emb_dim: 4,
        };
        let clf = AntiCausalClassifier::new(6, vec![1, 3, 4, 5], cfg, &mut rng).unwrap();
        let x = Tensor::new(vec![4, 6], (0..24).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
        let ts: Vec<usize> = (0..4).map(|_| rng.random_range(0..50)).collect();
        let labels: Vec<usize> = (0..4).map(|_| rng.random_range(0..4)).collect();
        let analytic = flat(&classifier_loss(&clf, &x, &ts, &labels, LABEL_SMOOTHING).unwrap().1);
        let numeric = numeric_gradient(
            |p| {
                let mut c = clf.clone();
                c.params.assign_flat(p).unwrap();
                classifier_loss(&c, &x, &ts, &labels, LABEL_SMOOTHING).unwrap().0
            },
            &clf.params.flatten(),
        );
        worst[1] = worst[1].max(rel_error(&analytic, &numeric));

        // alternate the linear and the tanh text map
        let hidden = if seed % 2 == 0 { 0 } else { 5 };
        let state = prompt_state(3000 + seed, hidden, 0.5);
        let v = unit_rows(4000 + seed, 4, 6);
        let v_cf = unit_rows(5000 + seed, 4, 6);
        let labels = [1, 3, 4, [1, 3, 4, 5][seed as usize % 4]];
        let classes = [1, 3, 4, 5];
        let lambda = 0.25 + seed as f64 / 5.0;
        worst[2] = worst[2].max(prompt_gradcheck(&state, |g, lp, fp| {
            let vv = g.constant(v.clone());
            loss_basic_graph(&state, g, lp, fp, vv, &labels, &classes)
        }));
        worst[3] = worst[3].max(prompt_gradcheck(&state, |g, lp, fp| {
            let vv = g.constant(v.clone());
            let vc = g.constant(v_cf.clone());
            loss_cf_graph(&state, g, lp, fp, vv, vc, &labels)
        }));
        let analytic = flat(
            &total_loss_and_grad(&state, &v, &v_cf, &labels, &classes, lambda)
                .unwrap()
                .1,
        );
        let numeric = numeric_gradient(
            |p| {
                let mut s = state.clone();
                s.learned.assign_flat(p).unwrap();
                total_loss(&s, &v, &v_cf, &labels, &classes, lambda).unwrap()
            },
            &state.learned.flatten(),
        );
        worst[4] = worst[4].max(rel_error(&analytic, &numeric));
    }
    let pass = worst.iter().all(|&e| e < GRAD_TOL);
    report.line(
        1,
        "gradient integrity",
        pass,
        format!(
            "max rel err over {GRAD_SEEDS} seeds (< {GRAD_TOL:e}): ddpm {:.1e} clf {:.1e} basic {:.1e} cf {:.1e} total {:.1e}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    );
}

fn criterion_02_loss_oracles(report: &mut Report) {
    let want = (-2.0f64).exp().ln_1p();
    let scalar_err = (cf_loss_from_scores(2.0, 0.0, 1.0) - want).abs();

    // untrained prompts equal the class anchors, so v = 2 g gives v.g = 2
    let s = PromptState::new(
        PromptConfig {
            tau: 1.0,
            ..PromptConfig::default()
        },
        6,
        7,
        8,
    )
    .unwrap();
    let d = s.config.embed_dim;
    let g = class_anchors(&s).unwrap().row(2).to_vec();
    let mut other = unit_rows(9, 1, d).into_data();
    let proj: f64 = other.iter().zip(&g).map(|(a, b)| a * b).sum();
    other.iter_mut().zip(&g).for_each(|(o, gi)| *o -= proj * gi);
    let v = Tensor::new(vec![1, d], g.iter().map(|x| 2.0 * x).collect()).unwrap();
    let v_cf = Tensor::new(vec![1, d], other).unwrap();
    let end_to_end_err = (loss_cf(&s, &v, &v_cf, &[2]).unwrap() - want).abs();

    let perturbed = prompt_state(11, 0, 0.07);
    let zeros = Tensor::zeros(&[3, 6]);
    let mut uniform_err: f64 = 0.0;
    for classes in [vec![0, 1], vec![1, 3, 4, 5], vec![0, 1, 2, 3, 4, 5]] {
        let loss = loss_basic(&perturbed, &zeros, &[classes[0], classes[1], classes[0]], &classes).unwrap();
        uniform_err = uniform_err.max((loss - (classes.len() as f64).ln()).abs());
    }

    let v = unit_rows(12, 5, 6);
    let v_cf = unit_rows(13, 5, 6);
    let labels = [1, 3, 4, 5, 1];
    let classes = [1, 3, 4, 5];
    let basic = loss_basic(&perturbed, &v, &labels, &classes).unwrap();
    let cf = loss_cf(&perturbed, &v, &v_cf, &labels).unwrap();
    let mut linear_err: f64 = 0.0;
    for lambda in [0.0, 0.25, 1.0, 4.0] {
        let t = total_loss(&perturbed, &v, &v_cf, &labels, &classes, lambda).unwrap();
        linear_err = linear_err.max((t - (basic + lambda * cf)).abs());
    }

    let pass = scalar_err < CF_ORACLE_TOL
        && end_to_end_err < CF_ORACLE_TOL
        && uniform_err < UNIFORM_TOL
        && linear_err < LINEARITY_TOL;
    report.line(
        2,
        "loss oracles",
        pass,
        format!(
            "cf vs log(1+e^-2): {scalar_err:.1e} / end-to-end {end_to_end_err:.1e} (< {CF_ORACLE_TOL:e}); uniform {uniform_err:.1e} (< {UNIFORM_TOL:e}); linearity {linear_err:.1e} (< {LINEARITY_TOL:e})"
        ),
    );
}

fn criterion_03_exact_inverse(report: &mut Report) {
    let mut worst: f64 = 0.0;
    for (i, family) in [AnalyticFamily::AdditiveOrthogonal, AnalyticFamily::PostNonlinear]
        .into_iter()
        .enumerate()
    {
        let scm = AnalyticScm::new(5, family, false, 40 + i as u64).unwrap();
        let rep = corollary_harness(&scm, 0.0, THEORY_TRIALS, 41).unwrap();
        worst = worst.max(rep.max_counterfactual_error);
    }
    report.line(
        3,
        "exact inverse counterfactual",
        worst <= EXACT_TOL,
        format!("max cf error {worst:.2e} over {THEORY_TRIALS} trials x 2 families (<= {EXACT_TOL:e})"),
    );
}

fn criterion_04_distortion_bound(report: &mut Report) {
    let scm = AnalyticScm::new(5, AnalyticFamily::AdditiveOrthogonal, true, 50).unwrap();
    let rep = corollary_harness(&scm, DELTA, THEORY_TRIALS, 51).unwrap();
    report.line(
        4,
        "distortion bound",
        rep.max_counterfactual_error <= DELTA + EXACT_TOL,
        format!(
            "max cf error {:.12} (recon {:.12}) over {} trials (<= {DELTA} + {EXACT_TOL:e})",
            rep.max_counterfactual_error, rep.max_reconstruction_error, rep.trials
        ),
    );
}

fn criterion_05_conditions(report: &mut Report) {
    let mut pass = true;
    let mut detail = Vec::new();
    for (i, family) in [AnalyticFamily::AdditiveOrthogonal, AnalyticFamily::PostNonlinear]
        .into_iter()
        .enumerate()
    {
        let scm = AnalyticScm::new(5, family, false, 60 + i as u64).unwrap();
        let c = check_conditions(&scm, CONDITION_POINTS, CONDITION_DRAWS, 61).unwrap();
        pass &= c.points == CONDITION_POINTS
            && c.pd_points == c.points
            && c.max_latent_correlation < MAX_CORRELATION
            && c.max_q_defect <= Q_TOL;
        detail.push(format!(
            "{}: pd {}/{} corr {:.4} q {:.1e}",
            family.name(),
            c.pd_points,
            c.points,
            c.max_latent_correlation,
            c.max_q_defect
        ));
    }
    report.line(
        5,
        "identifiability conditions",
        pass,
        format!("{} (corr < {MAX_CORRELATION}, q <= {Q_TOL:e})", detail.join("; ")),
    );
}

struct ZeroNoise;

impl NoisePredictor for ZeroNoise {
    fn predict(&self, x: &Tensor, _t: usize) -> cfprompt::Result<Tensor> {
        Ok(Tensor::zeros(x.shape()))
    }
}

fn table(dir: &Path, rel: &str) -> CsvTable {
    CsvTable::read(&dir.join(rel))
        .unwrap_or_else(|e| panic!("{rel}: {e}"))
        .0
}

fn cell(t: &CsvTable, row: usize, col: &str) -> f64 {
    let i = t
        .columns
        .iter()
        .position(|c| c == col)
        .unwrap_or_else(|| panic!("no column {col}"));
    t.rows[row][i].parse().unwrap()
}

fn row_of(t: &CsvTable, key: &str) -> usize {
    t.rows
        .iter()
        .position(|r| r[0] == key)
        .unwrap_or_else(|| panic!("no row {key}"))
}

fn criterion_06_roundtrip(report: &mut Report, dir: &Path, cfg: &ExperimentConfig) {
    let rt = table(dir, "metrics/roundtrip.csv");
    let images = cell(&rt, 0, "images") as usize;
    let tolerance = cell(&rt, 0, "tolerance");
    let within = cell(&rt, 0, "within_fraction");

    let schedule = make_schedule(cfg.timesteps, cfg.beta_min, cfg.beta_max).unwrap();
    let x = normal_tensor(70, 16, 64);
    let back = reconstruct(&ZeroNoise, &schedule, &x).unwrap();
    let zero_err = x
        .data()
        .iter()
        .zip(back.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    let pass = images == ROUNDTRIP_IMAGES
        && tolerance == cfg.recon_tolerance
        && within >= ROUNDTRIP_FRACTION
        && zero_err <= ZERO_MODEL_TOL;
    report.line(
        6,
        "ddim round trip",
        pass,
        format!(
            "{:.1}% of {images} within Linf {tolerance} (>= {}%, p95 {:.4}); zero-noise model err {zero_err:.1e} (<= {ZERO_MODEL_TOL:e})",
            100.0 * within,
            100.0 * ROUNDTRIP_FRACTION,
            cell(&rt, 0, "p95_linf")
        ),
    );
}

fn criterion_07_guidance(report: &mut Report, dir: &Path, cfg: &ExperimentConfig) {
    let q = table(dir, "metrics/cf_quality.csv");
    let eval = row_of(&q, "eval");
    let working_flip = cell(&q, eval, "flip_rate");
    let working_count = cell(&q, eval, "count") as usize;

    let sweep = table(dir, "metrics/sweep-s.csv");
    let points: Vec<(f64, f64)> = ["0", "1", "5", "10"]
        .iter()
        .map(|s| {
            let r = row_of(&sweep, s);
            (cell(&sweep, r, "flip_rate"), cell(&sweep, r, "count"))
        })
        .collect();
    let monotone = points.windows(2).all(|w| w[1].0 >= w[0].0);
    let enough = points.iter().all(|p| p.1 as usize >= MIN_GENERATIONS) && working_count >= MIN_GENERATIONS;
    let curve: Vec<String> = points.iter().map(|p| format!("{:.3}", p.0)).collect();
    report.line(
        7,
        "guidance efficacy",
        working_flip >= MIN_FLIP && monotone && enough,
        format!(
            "flip {:.3} at s={} over {working_count} (>= {MIN_FLIP}); flip over s=0,1,5,10: [{}] over {} each",
            working_flip,
            cfg.scale,
            curve.join(", "),
            points[0].1
        ),
    );
}

fn criterion_08_minimality(report: &mut Report, dir: &Path, cfg: &ExperimentConfig) {
    // mean absolute pixel change outside / inside the glyph masks, over the
    // per-replicate training counterfactuals at the working scale
    let (mut outside, mut n_out, mut inside, mut n_in) = (0.0, 0usize, 0.0, 0usize);
    for path in (0..cfg.replicates)
        .map(|r| dir.join(cf_train(r)))
        .chain([dir.join(CF_EVAL)])
    {
        let (_, pairs) = read_pairs(&path).unwrap();
        for p in &pairs {
            let mask = union_mask(p.y, p.y_cf).unwrap();
            for (px, on) in mask.iter().enumerate() {
                let d = (p.x_cf[px] - p.x[px]).abs();
                if *on {
                    inside += d;
                    n_in += 1;
                } else {
                    outside += d;
                    n_out += 1;
                }
            }
        }
    }
    let outside = outside / n_out as f64;
    let inside = inside / n_in as f64;

    let sweep = table(dir, "metrics/sweep-strategy.csv");
    let sim = cell(&sweep, row_of(&sweep, "similarity"), "mean_l2");
    let rnd = cell(&sweep, row_of(&sweep, "random"), "mean_l2");
    report.line(
        8,
        "minimal sufficiency",
        outside < inside && sim <= rnd,
        format!(
            "mean |dx| outside {outside:.4} < inside {inside:.4}; l2 similarity {sim:.3} <= random {rnd:.3} ({} replicates)",
            cfg.replicates
        ),
    );
}

fn criterion_09_prompt_efficacy(report: &mut Report, dir: &Path, cfg: &ExperimentConfig) {
    let e = table(dir, "metrics/eval.csv");
    let mean = row_of(&e, "mean");
    let unseen = cell(&e, mean, "unseen_acc");
    let base_unseen = cell(&e, mean, "baseline_unseen");
    let seen = cell(&e, mean, "seen_acc");
    let zs_seen = cell(&e, mean, "zero_shot_seen");
    let setup_ok = cfg.num_classes == 6 && cfg.seen.len() == 4 && cfg.unseen.len() == 2 && cfg.shots == 16;
    report.line(
        9,
        "prompt-learning efficacy",
        setup_ok && unseen >= base_unseen && seen >= zs_seen,
        format!(
            "unseen {unseen:.4} (lambda={}) >= {base_unseen:.4} (lambda=0); seen {seen:.4} >= untrained {zs_seen:.4}; mean of {} replicates",
            cfg.lambda, cfg.replicates
        ),
    );
}

fn column_by_key(t: &CsvTable, keys: &[&str], col: &str) -> Vec<f64> {
    keys.iter().map(|k| cell(t, row_of(t, k), col)).collect()
}

fn criterion_10_ablations(report: &mut Report, dir: &Path, cfg: &ExperimentConfig) {
    let l = table(dir, "metrics/sweep-lambda.csv");
    let unseen = column_by_key(&l, &LAMBDAS[1..], "unseen_acc");
    let range = unseen.iter().cloned().fold(f64::MIN, f64::max) - unseen.iter().cloned().fold(f64::MAX, f64::min);

    let sh = table(dir, "metrics/sweep-shots.csv");
    let mean_acc = column_by_key(&sh, &SHOTS, "mean_acc");
    let shots_ok = mean_acc.windows(2).all(|w| w[1] >= w[0]);

    let len = table(dir, "metrics/sweep-length.csv");
    let by_len = column_by_key(&len, &LENGTHS, "unseen_acc");

    let s = table(dir, "metrics/sweep-s.csv");
    let q = |key: &str| cell(&s, row_of(&s, key), "mean_quality");
    let working = format!("{}", cfg.scale);
    let (q_lo, q_mid, q_hi) = (q("0.5"), q(&working), q("50"));

    let pass = range <= LAMBDA_RANGE && shots_ok && by_len[0] >= by_len[2] && q_lo > q_mid && q_hi > q_mid;
    report.line(
        10,
        "ablation directions",
        pass,
        format!(
            "lambda unseen range {:.1} pts (<= {:.0}); shots mean {:.4}/{:.4}/{:.4}; L4 {:.4} >= L16 {:.4}; quality s=0.5 {q_lo:.3}, s={working} {q_mid:.3}, s=50 {q_hi:.3}",
            100.0 * range,
            100.0 * LAMBDA_RANGE,
            mean_acc[0],
            mean_acc[1],
            mean_acc[2],
            by_len[0],
            by_len[2]
        ),
    );
}

fn metric_files(dir: &Path) -> Vec<PathBuf> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir.join("metrics"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .collect();
    files.sort();
    files
}

fn criterion_11_reproducibility(report: &mut Report, dir: &Path, cfg: &ExperimentConfig, elapsed: Duration) {
    let other = tempfile::tempdir().unwrap();
    let mut cfg2 = cfg.clone();
    cfg2.out = other.path().to_path_buf();
    let run = Run::new(cfg2).unwrap();
    run.all().unwrap();
    run.sweep(Axis::Lambda, &strings(&LAMBDAS)).unwrap();

    let mut compared = 0;
    let mut differing = Vec::new();
    for second in metric_files(other.path()) {
        let name = second.file_name().unwrap();
        compared += 1;
        if fs::read(&second).unwrap() != fs::read(dir.join("metrics").join(name)).unwrap() {
            differing.push(name.to_string_lossy().into_owned());
        }
    }
    report.line(
        11,
        "reproducibility",
        differing.is_empty() && compared > 0 && elapsed <= BUDGET,
        format!(
            "{compared} metrics CSVs compared, differing {differing:?}; default pipeline {:.0}s (<= {}s)",
            elapsed.as_secs_f64(),
            BUDGET.as_secs()
        ),
    );
}

const DIFFUSION_LOSS_CEILING: f64 = 0.3;
const CLEAN_ACCURACY_FLOOR: f64 = 0.95;
const NOISED_CHANCE_BAND: f64 = 0.1;
const ORACLE_FLIP_FLOOR: f64 = 0.9;
const PROBE_FLOOR: f64 = 0.9;
const DESCENT_FRACTION: f64 = 0.8;

fn invariants(report: &mut Report, dir: &Path, cfg: &ExperimentConfig) {
    let d = table(dir, "metrics/diffusion.csv");
    let last = d.rows.len() - 1;
    let loss = cell(&d, last, "loss");
    report.invariant(
        "denoiser fit",
        loss < DIFFUSION_LOSS_CEILING,
        format!(
            "loss {loss:.4} per coordinate at step {} (< {DIFFUSION_LOSS_CEILING})",
            d.rows[last][0]
        ),
    );

    let fit = table(dir, "metrics/classifier-fit.csv");
    let clean = cell(&fit, 0, "clean_train_accuracy");
    report.invariant(
        "classifier clean fit",
        clean >= CLEAN_ACCURACY_FLOOR,
        format!("clean train accuracy {clean:.4} (>= {CLEAN_ACCURACY_FLOOR})"),
    );

    let c = table(dir, "metrics/classifier.csv");
    let acc: Vec<f64> = (0..c.rows.len()).map(|r| cell(&c, r, "heldout_accuracy")).collect();
    let top = cell(&c, c.rows.len() - 1, "mean_max_prob");
    let chance = 1.0 / cfg.seen.len() as f64;
    report.invariant(
        "noising removes label info",
        acc.windows(2).all(|w| w[1] <= w[0]) && (acc[acc.len() - 1] - chance).abs() <= NOISED_CHANCE_BAND
            && (top - chance).abs() <= NOISED_CHANCE_BAND,
        format!(
            "noised accuracy over t {:?}; at the last t accuracy {:.3} and mean max prob {top:.3} vs 1/K {chance:.3} (+-{NOISED_CHANCE_BAND})",
            acc,
            acc[acc.len() - 1]
        ),
    );

    let clf = AntiCausalClassifier::from_checkpoint(&Checkpoint::load(&dir.join(CLASSIFIER)).unwrap()).unwrap();
    let spec = cfg.target_spec();
    let (_, _, test) = read_dataset(&dir.join(test_data(0))).unwrap();
    let mut oracle = Vec::new();
    for sample in test.iter().filter(|s| cfg.seen.contains(&s.y)).take(100) {
        for &c in cfg.seen.iter().filter(|&&c| c != sample.y) {
            oracle.push(CounterfactualPair {
                x: sample.x.clone(),
                y: sample.y,
                y_cf: c,
                x_cf: true_counterfactual(&spec, sample, c).unwrap(),
                s: 0.0,
                latent: Vec::new(),
                x_cf_true: None,
            });
        }
    }
    let q = evaluate_quality(&oracle, &clf).unwrap();
    let flips = q.iter().filter(|r| r.label_flipped).count() as f64 / q.len() as f64;
    let leak = q.iter().map(|r| r.non_causal_leakage).fold(0.0, f64::max);
    report.invariant(
        "oracle counterfactuals",
        flips >= ORACLE_FLIP_FLOOR && leak == 0.0,
        format!(
            "{} oracle pairs: flip {flips:.3} (>= {ORACLE_FLIP_FLOOR}), max leakage {leak:e} (= 0)",
            q.len()
        ),
    );

    let t = table(dir, "metrics/theory.csv");
    let probes: Vec<f64> = t
        .rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r[0] == "dependent-latent")
        .map(|(i, _)| cell(&t, i, "cf_exceeds_reconstruction"))
        .collect();
    report.invariant(
        "violation probe bites",
        !probes.is_empty() && probes.iter().all(|&n| n >= 1.0),
        format!("trials where cf error exceeds reconstruction error, per family: {probes:?} (>= 1)"),
    );

    let e = table(dir, "metrics/eval.csv");
    let mean = row_of(&e, "mean");
    let probe = cell(&e, mean, "probe_seen");
    report.invariant(
        "encoder linear probe",
        probe >= PROBE_FLOOR,
        format!("held-out seen accuracy {probe:.4} (>= {PROBE_FLOOR})"),
    );
    let (margin, base) = (cell(&e, mean, "margin"), cell(&e, mean, "baseline_margin"));
    let per_rep: Vec<bool> = (0..cfg.replicates)
        .map(|r| {
            cell(&e, row_of(&e, &r.to_string()), "margin") > cell(&e, row_of(&e, &r.to_string()), "baseline_margin")
        })
        .collect();
    report.invariant(
        "counterfactual repulsion",
        margin > base,
        format!(
            "train-pair margin {margin:.4} > {base:.4} at lambda=0; per replicate {}/{}",
            per_rep.iter().filter(|b| **b).count(),
            cfg.replicates
        ),
    );

    let mut pairs = 0;
    let mut down = 0;
    for r in 0..cfg.replicates {
        let log = table(dir, &prompts_log(r));
        let total: Vec<f64> = (0..log.rows.len()).map(|i| cell(&log, i, "L_total")).collect();
        pairs += total.len() - 1;
        down += total.windows(2).filter(|w| w[1] <= w[0]).count();
    }
    let frac = down as f64 / pairs as f64;
    report.invariant(
        "prompt training descends",
        frac >= DESCENT_FRACTION,
        format!("epoch loss non-increasing in {down}/{pairs} = {frac:.3} of consecutive pairs (>= {DESCENT_FRACTION})"),
    );
}

fn strings(values: &[&str]) -> Vec<String> {
    values.iter().map(|s| s.to_string()).collect()
}

fn main() -> ExitCode {
    let mut report = Report {
        failed: Vec::new(),
        broken: Vec::new(),
    };
    criterion_01_gradients(&mut report);
    criterion_02_loss_oracles(&mut report);
    criterion_03_exact_inverse(&mut report);
    criterion_04_distortion_bound(&mut report);
    criterion_05_conditions(&mut report);

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.out = dir.path().to_path_buf();
    let run = Run::new(cfg.clone()).unwrap();
    let start = Instant::now();
    run.all().unwrap();
    let elapsed = start.elapsed();
    for (axis, values) in [
        (Axis::Lambda, &LAMBDAS[..]),
        (Axis::Shots, &SHOTS[..]),
        (Axis::Length, &LENGTHS[..]),
        (Axis::Scale, &SCALES[..]),
        (Axis::Strategy, &STRATEGIES[..]),
    ] {
        run.sweep(axis, &strings(values)).unwrap();
    }
    println!(
        "pipeline: all stages {:.0}s, sweeps {:.0}s",
        elapsed.as_secs_f64(),
        (start.elapsed() - elapsed).as_secs_f64()
    );

    criterion_06_roundtrip(&mut report, dir.path(), &cfg);
    criterion_07_guidance(&mut report, dir.path(), &cfg);
    criterion_08_minimality(&mut report, dir.path(), &cfg);
    criterion_09_prompt_efficacy(&mut report, dir.path(), &cfg);
    criterion_10_ablations(&mut report, dir.path(), &cfg);
    criterion_11_reproducibility(&mut report, dir.path(), &cfg, elapsed);
    invariants(&mut report, dir.path(), &cfg);

    if report.failed.is_empty() && report.broken.is_empty() {
        println!("acceptance: all 11 criteria pass");
        ExitCode::SUCCESS
    } else {
        println!(
            "acceptance: failed criteria {:?}, failed invariants {:?}",
            report.failed, report.broken
        );
        ExitCode::FAILURE
    }
}

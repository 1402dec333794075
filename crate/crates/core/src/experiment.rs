//! Desk-scale experiment protocol: cross-entropy pretraining of the toy
//! network on imbalanced synthetic data, short MFoM fine-tuning under each
//! objective, and evaluation with EER and minDCF at several priors.
//!
//! Class 0 is the target class throughout; the detection score of a sample
//! is `g_target - g_nontarget`.

use std::fmt;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mfom::{self, CounterParams, DiscriminantBatch, LabelMatrix, MfomConfig, Objective};
use crate::model::{self, Checkpoint, LabeledDataset, MlpParams, TrainConfig};
use crate::scoring::{self, DcfParams, Label, ScoreSet, TrialScore};

pub const REPORT_FORMAT: &str = "mfom-report/1";

/// Priors at which every method is evaluated by default.
pub const DEFAULT_PRIORS: [f64; 3] = [0.1, 0.05, 0.01];

pub const TARGET_CLASS: usize = 0;

// Independent ChaCha streams per purpose, all keyed by the run seed.
const STREAM_DATA: u64 = 1;
const STREAM_INIT: u64 = 2;
const STREAM_PRETRAIN: u64 = 3;
const STREAM_FINETUNE: u64 = 4;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Two isotropic Gaussian clouds in the plane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_train: usize,
    pub n_test: usize,
    /// Fraction of target samples in both splits.
    pub p_tar: f64,
    pub mean_tar: [f64; 2],
    pub mean_non: [f64; 2],
    /// Variance of each coordinate.
    pub cov_scale: f64,
    pub seed: u64,
}

impl SynthSpec {
    /// 2000/2000 samples, 10% targets, means (0,0) and (2,2), unit variance.
    pub fn default_with_seed(seed: u64) -> Self {
        SynthSpec {
            n_train: 2000,
            n_test: 2000,
            p_tar: 0.1,
            mean_tar: [0.0, 0.0],
            mean_non: [2.0, 2.0],
            cov_scale: 1.0,
            seed,
        }
    }

    fn class_counts(&self, n: usize) -> Result<(usize, usize)> {
        let n_tar = (n as f64 * self.p_tar).round() as usize;
        if n_tar == 0 || n_tar >= n {
            return Err(Error::domain(format!(
                "{n} samples at p_tar = {} cannot hold both classes",
                self.p_tar
            )));
        }
        Ok((n_tar, n - n_tar))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_tar > 0.0 && self.p_tar < 1.0) {
            return Err(Error::domain("p_tar must lie in (0, 1)"));
        }
        if !(self.cov_scale > 0.0 && self.cov_scale.is_finite()) {
            return Err(Error::domain("cov_scale must be positive"));
        }
        if self
            .mean_tar
            .iter()
            .chain(&self.mean_non)
            .any(|v| !v.is_finite())
        {
            return Err(Error::domain("class means must be finite"));
        }
        self.class_counts(self.n_train)?;
        self.class_counts(self.n_test)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthData {
    pub spec: SynthSpec,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn sample_split(spec: &SynthSpec, n: usize, rng: &mut ChaCha8Rng) -> Result<LabeledDataset> {
    let (n_tar, _) = spec.class_counts(n)?;
    let sd = spec.cov_scale.sqrt();
    let mut classes: Vec<usize> = (0..n).map(|i| if i < n_tar { 0 } else { 1 }).collect();
    classes.shuffle(rng);
    let mut x = Array2::zeros((n, 2));
    let mut y = Array2::zeros((n, 2));
    for (i, &c) in classes.iter().enumerate() {
        let mean = if c == TARGET_CLASS {
            spec.mean_tar
        } else {
            spec.mean_non
        };
        for (d, m) in mean.iter().enumerate() {
            let z: f64 = StandardNormal.sample(rng);
            x[[i, d]] = m + sd * z;
        }
        y[[i, c]] = 1.0;
    }
    LabeledDataset::new(x, y)
}

/// Train and test splits with exactly `round(n * p_tar)` targets each.
pub fn gen_synthetic(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = rng_for(spec.seed, STREAM_DATA);
    let train = sample_split(spec, spec.n_train, &mut rng)?;
    let test = sample_split(spec, spec.n_test, &mut rng)?;
    Ok(SynthData {
        spec: *spec,
        train,
        test,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub hidden: usize,
    pub pretrain: TrainConfig,
    pub finetune: TrainConfig,
    pub eval_priors: Vec<f64>,
    pub c_miss: f64,
    pub c_fa: f64,
    pub eta: f64,
    pub lambda: f64,
}

impl ExperimentConfig {
    pub fn default_with_seed(seed: u64) -> Self {
        ExperimentConfig {
            hidden: 16,
            pretrain: TrainConfig::pretrain(seed),
            finetune: TrainConfig::finetune(seed),
            eval_priors: DEFAULT_PRIORS.to_vec(),
            c_miss: 1.0,
            c_fa: 1.0,
            eta: 1.0,
            lambda: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 {
            return Err(Error::domain("hidden layer must have at least one unit"));
        }
        self.pretrain.validate()?;
        self.finetune.validate()?;
        if self.eval_priors.is_empty() {
            return Err(Error::domain("at least one evaluation prior is required"));
        }
        for &p in &self.eval_priors {
            DcfParams::new(self.c_miss, self.c_fa, p)?;
        }
        self.mfom(Method::MfomEer)?.validate()
    }

    fn mfom(&self, method: Method) -> Result<MfomConfig> {
        let p_tar = match method {
            Method::MfomDcf(p) => p,
            _ => self.eval_priors[0],
        };
        Ok(MfomConfig {
            eta: self.eta,
            lambda: self.lambda,
            dcf: DcfParams::new(self.c_miss, self.c_fa, p_tar)?,
        })
    }
}

/// A training recipe whose result appears as one report row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Method {
    /// Cross-entropy training only.
    Baseline,
    /// Fine-tuned with the smoothed EER objective.
    MfomEer,
    /// Fine-tuned with the smoothed DCF objective at this prior.
    MfomDcf(f64),
}

impl Method {
    pub fn objective(self) -> Option<Objective> {
        match self {
            Method::Baseline => None,
            Method::MfomEer => Some(Objective::Eer),
            Method::MfomDcf(_) => Some(Objective::Dcf),
        }
    }

    /// Baseline, MEER and one MDCF variant per prior.
    pub fn table(priors: &[f64]) -> Vec<Method> {
        let mut methods = vec![Method::Baseline, Method::MfomEer];
        methods.extend(priors.iter().map(|&p| Method::MfomDcf(p)));
        methods
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Baseline => f.write_str("baseline"),
            Method::MfomEer => f.write_str("MEER"),
            Method::MfomDcf(p) => write!(f, "MDCF_{p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorDcf {
    pub p_tar: f64,
    pub raw: f64,
    pub normalized: f64,
    pub threshold: f64,
}

/// One report row: a method evaluated for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub method: String,
    pub seed: u64,
    /// Test EER as a fraction.
    pub eer: f64,
    pub eer_threshold: f64,
    pub min_dcf: Vec<PriorDcf>,
    /// `ce`, `mfom_dcf` or `mfom_eer`.
    pub objective: String,
    /// Training-set objective before training and after every epoch.
    pub objective_trace: Vec<f64>,
}

impl MethodRecord {
    pub fn min_dcf_at(&self, p_tar: f64) -> Option<&PriorDcf> {
        self.min_dcf.iter().find(|d| d.p_tar == p_tar)
    }

    /// Whether the last traced objective value is below the first.
    pub fn objective_decreased(&self) -> bool {
        match (self.objective_trace.first(), self.objective_trace.last()) {
            (Some(first), Some(last)) => last < first,
            _ => false,
        }
    }
}

/// Result of training and evaluating one method.
#[derive(Debug, Clone)]
pub struct MethodRun {
    pub record: MethodRecord,
    pub checkpoint: Checkpoint,
    /// Test-set detection scores the record was computed from.
    pub scores: ScoreSet,
}

/// `g_target - g_nontarget` for each row.
pub fn detection_scores(params: &MlpParams, x: &Array2<f64>) -> Result<Vec<f64>> {
    let (g, _) = model::forward(params, x.view())?;
    Ok(g.outer_iter()
        .map(|row| row[TARGET_CLASS] - row[1 - TARGET_CLASS])
        .collect())
}

/// Scores the test split and packs them as a trial list.
pub fn score_dataset(params: &MlpParams, data: &LabeledDataset) -> Result<ScoreSet> {
    if data.n_classes() != 2 {
        return Err(Error::domain("detection scoring needs exactly two classes"));
    }
    let scores = detection_scores(params, &data.x)?;
    let trials = scores
        .into_iter()
        .zip(data.classes())
        .enumerate()
        .map(|(i, (s, c))| {
            let label = if c == TARGET_CLASS {
                Label::Target
            } else {
                Label::Nontarget
            };
            TrialScore::new(format!("test{i:05}"), label, s)
        })
        .collect();
    ScoreSet::new(trials)
}

/// EER and minDCF rows for a score set.
pub fn evaluate(
    set: &ScoreSet,
    cfg: &ExperimentConfig,
) -> Result<(scoring::EerResult, Vec<PriorDcf>)> {
    let eer = scoring::eer(set)?;
    let min_dcf = cfg
        .eval_priors
        .iter()
        .map(|&p| {
            let params = DcfParams::new(cfg.c_miss, cfg.c_fa, p)?;
            let r = scoring::min_dcf(set, &params)?;
            Ok(PriorDcf {
                p_tar: p,
                raw: r.raw,
                normalized: r.normalized,
                threshold: r.threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((eer, min_dcf))
}

fn make_run(
    method: Method,
    seed: u64,
    checkpoint: Checkpoint,
    data: &SynthData,
    cfg: &ExperimentConfig,
    objective: &str,
    trace: Vec<f64>,
) -> Result<MethodRun> {
    let scores = score_dataset(&checkpoint.mlp, &data.test)?;
    let (eer, min_dcf) = evaluate(&scores, cfg)?;
    Ok(MethodRun {
        record: MethodRecord {
            method: method.to_string(),
            seed,
            eer: eer.eer,
            eer_threshold: eer.threshold,
            min_dcf,
            objective: objective.to_string(),
            objective_trace: trace,
        },
        checkpoint,
        scores,
    })
}

fn batches(n: usize, batch_size: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order.chunks(batch_size).map(<[usize]>::to_vec).collect()
}

/// Mean cross-entropy of the network over a whole dataset.
pub fn ce_loss(params: &MlpParams, data: &LabeledDataset) -> Result<f64> {
    let (g, _) = model::forward(params, data.x.view())?;
    Ok(model::ce_loss_and_grad(&g, &data.y)?.0)
}

/// MFoM objective of the network over a whole dataset, used as one batch.
pub fn mfom_loss(
    params: &MlpParams,
    counter: &CounterParams,
    data: &LabeledDataset,
    cfg: &MfomConfig,
    which: Objective,
) -> Result<f64> {
    let (g, _) = model::forward(params, data.x.view())?;
    let g = DiscriminantBatch::new(g)?;
    let y = LabelMatrix::new(data.y.clone())?;
    mfom::objective(&g, &y, counter, cfg, which)
}

/// Trains the network with cross-entropy and evaluates it on the test split.
pub fn run_baseline(data: &SynthData, cfg: &ExperimentConfig) -> Result<MethodRun> {
    cfg.validate()?;
    let seed = data.spec.seed;
    let train_cfg = &cfg.pretrain;
    let train = &data.train;

    let mut params = model::init_mlp(
        rng_seed(seed, STREAM_INIT),
        train.n_features(),
        cfg.hidden,
        train.n_classes(),
    )?;
    let mut velocity = params.zeros_like();
    let mut rng = rng_for(seed, STREAM_PRETRAIN);
    let mut trace = vec![ce_loss(&params, train)?];

    for _ in 0..train_cfg.epochs {
        for rows in batches(train.len(), train_cfg.batch_size, &mut rng) {
            let (x, y) = train.select(&rows);
            let (g, cache) = model::forward(&params, x.view())?;
            let (_, d_g) = model::ce_loss_and_grad(&g, &y)?;
            let grads = model::backward(&params, &cache, &d_g)?;
            model::sgd_step(&mut params, &grads, &mut velocity, train_cfg);
        }
        trace.push(ce_loss(&params, train)?);
    }

    let checkpoint = Checkpoint {
        seed,
        counter: CounterParams::new(train.n_classes()),
        mlp: params,
    };
    make_run(Method::Baseline, seed, checkpoint, data, cfg, "ce", trace)
}

/// Derives a plain `u64` seed from a stream, for APIs that take one.
fn rng_seed(seed: u64, stream: u64) -> u64 {
    use rand::RngCore;
    rng_for(seed, stream).next_u64()
}

/// Fine-tunes network weights and counter parameters from a baseline
/// checkpoint under one MFoM objective, then evaluates like the baseline.
pub fn run_finetune(
    checkpoint: &Checkpoint,
    data: &SynthData,
    method: Method,
    cfg: &ExperimentConfig,
) -> Result<MethodRun> {
    cfg.validate()?;
    let which = method
        .objective()
        .ok_or_else(|| Error::domain("the baseline has no fine-tuning objective"))?;
    let seed = data.spec.seed;
    let train = &data.train;
    if checkpoint.seed != seed {
        return Err(Error::domain(format!(
            "checkpoint seed {} does not match data seed {seed}",
            checkpoint.seed
        )));
    }
    let (d, h, m) = checkpoint.mlp.dims();
    if d != train.n_features() || m != train.n_classes() || h != cfg.hidden {
        return Err(Error::domain(format!(
            "checkpoint network {d}x{h}x{m} does not fit data with {} features, {} classes and hidden size {}",
            train.n_features(),
            train.n_classes(),
            cfg.hidden
        )));
    }
    if checkpoint.counter.n_classes() != m {
        return Err(Error::domain(
            "checkpoint counter parameters do not match class count",
        ));
    }

    let mfom_cfg = cfg.mfom(method)?;
    let train_cfg = &cfg.finetune;
    let mut params = checkpoint.mlp.clone();
    let mut counter = checkpoint.counter.clone();
    let mut velocity = params.zeros_like();
    let mut alpha_velocity = vec![0.0; m];
    let mut beta_velocity = vec![0.0; m];
    let mut rng = rng_for(seed, STREAM_FINETUNE);
    let mut trace = vec![mfom_loss(&params, &counter, train, &mfom_cfg, which)?];

    for _ in 0..train_cfg.epochs {
        for rows in batches(train.len(), train_cfg.batch_size, &mut rng) {
            let (x, y) = train.select(&rows);
            let (g, cache) = model::forward(&params, x.view())?;
            let grads = mfom::grad_objective(
                &DiscriminantBatch::new(g)?,
                &LabelMatrix::new(y)?,
                &counter,
                &mfom_cfg,
                which,
            )?;
            let net_grads = model::backward(&params, &cache, &grads.d_g)?;
            model::sgd_step(&mut params, &net_grads, &mut velocity, train_cfg);
            model::momentum_update(
                counter.alpha.as_slice_mut().unwrap(),
                grads.d_alpha.as_slice().unwrap(),
                &mut alpha_velocity,
                train_cfg.learning_rate,
                train_cfg.momentum,
            );
            model::momentum_update(
                counter.beta.as_slice_mut().unwrap(),
                grads.d_beta.as_slice().unwrap(),
                &mut beta_velocity,
                train_cfg.learning_rate,
                train_cfg.momentum,
            );
            counter.project();
        }
        trace.push(mfom_loss(&params, &counter, train, &mfom_cfg, which)?);
    }

    let objective = match which {
        Objective::Dcf => "mfom_dcf",
        Objective::Eer => "mfom_eer",
    };
    let checkpoint = Checkpoint {
        seed,
        mlp: params,
        counter,
    };
    make_run(method, seed, checkpoint, data, cfg, objective, trace)
}

/// Everything produced for one seed: the baseline followed by one
/// fine-tuned run per MFoM method, all starting from the same checkpoint.
pub fn run_seed(spec: &SynthSpec, cfg: &ExperimentConfig) -> Result<Vec<MethodRun>> {
    let data = gen_synthetic(spec)?;
    let baseline = run_baseline(&data, cfg)?;
    let mut runs = Vec::new();
    for method in Method::table(&cfg.eval_priors).into_iter().skip(1) {
        runs.push(run_finetune(&baseline.checkpoint, &data, method, cfg)?);
    }
    runs.insert(0, baseline);
    Ok(runs)
}

/// Per-metric improvement over the baseline of the same seed
/// (`baseline - method`, so positive is better).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricDeltas {
    pub eer: f64,
    /// Normalized minDCF improvement per evaluation prior, in prior order.
    pub min_dcf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaRow {
    pub method: String,
    pub seed: u64,
    pub improvement: MetricDeltas,
    pub objective_decreased: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianRow {
    pub method: String,
    pub improvement: MetricDeltas,
    /// Median of the metrics themselves across seeds.
    pub eer: f64,
    pub min_dcf: Vec<f64>,
}

/// Whether fine-tuning reproduces the qualitative trend that MFoM-DCF
/// tuning lowers minDCF relative to cross-entropy training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendCheck {
    /// The MDCF method and prior inspected.
    pub method: String,
    pub p_tar: f64,
    /// Seeds where its normalized minDCF is at most the baseline's.
    pub not_worse: usize,
    pub seeds: usize,
    pub median_improvement: f64,
    /// Seeds where each fine-tuned method lowered its own training objective.
    pub objective_decreases: Vec<(String, usize)>,
    pub reproduced: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub priors: Vec<f64>,
    pub seeds: Vec<u64>,
    pub rows: Vec<DeltaRow>,
    pub medians: Vec<MedianRow>,
    pub trend: Option<TrendCheck>,
}

/// Fraction of seeds that must not be worse than baseline.
pub const TREND_NOT_WORSE_FRACTION: f64 = 0.7;
/// Fraction of seeds in which every fine-tune must lower its objective.
pub const TREND_DECREASE_FRACTION: f64 = 0.9;

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

/// Aggregates report rows across seeds. The result does not depend on the
/// order of `records`.
pub fn compare(records: &[MethodRecord], priors: &[f64]) -> Result<Comparison> {
    let mut seeds: Vec<u64> = records.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    seeds.dedup();
    if seeds.is_empty() {
        return Err(Error::domain("nothing to compare"));
    }

    let mut methods: Vec<String> = Vec::new();
    let baseline_name = Method::Baseline.to_string();
    methods.push(baseline_name.clone());
    for r in records {
        if !methods.contains(&r.method) {
            methods.push(r.method.clone());
        }
    }
    // baseline first, the rest in a fixed order
    methods[1..].sort_by_key(|name| method_rank(name));

    let find = |method: &str, seed: u64| {
        records
            .iter()
            .find(|r| r.method == method && r.seed == seed)
    };
    let norm_at = |r: &MethodRecord, p: f64| -> Result<f64> {
        r.min_dcf_at(p)
            .map(|d| d.normalized)
            .ok_or_else(|| Error::domain(format!("record {} lacks minDCF at {p}", r.method)))
    };

    let mut rows = Vec::new();
    let mut medians = Vec::new();
    for method in &methods {
        let mut eer_deltas = Vec::new();
        let mut dcf_deltas = vec![Vec::new(); priors.len()];
        let mut eers = Vec::new();
        let mut dcfs = vec![Vec::new(); priors.len()];
        for &seed in &seeds {
            let (Some(base), Some(rec)) = (find(&baseline_name, seed), find(method, seed)) else {
                continue;
            };
            let mut min_dcf = Vec::with_capacity(priors.len());
            for (i, &p) in priors.iter().enumerate() {
                let value = norm_at(rec, p)?;
                let delta = norm_at(base, p)? - value;
                dcfs[i].push(value);
                dcf_deltas[i].push(delta);
                min_dcf.push(delta);
            }
            let eer = base.eer - rec.eer;
            eers.push(rec.eer);
            eer_deltas.push(eer);
            rows.push(DeltaRow {
                method: method.clone(),
                seed,
                improvement: MetricDeltas { eer, min_dcf },
                objective_decreased: rec.objective_decreased(),
            });
        }
        if eers.is_empty() {
            continue;
        }
        medians.push(MedianRow {
            method: method.clone(),
            improvement: MetricDeltas {
                eer: median(&eer_deltas),
                min_dcf: dcf_deltas.iter().map(|d| median(d)).collect(),
            },
            eer: median(&eers),
            min_dcf: dcfs.iter().map(|d| median(d)).collect(),
        });
    }

    let trend = trend_check(&rows, &medians, &methods, priors, seeds.len());
    Ok(Comparison {
        priors: priors.to_vec(),
        seeds,
        rows,
        medians,
        trend,
    })
}

fn method_rank(name: &str) -> (u8, u64) {
    if name == "MEER" {
        return (1, 0);
    }
    if let Some(p) = name
        .strip_prefix("MDCF_")
        .and_then(|p| p.parse::<f64>().ok())
    {
        // larger priors first, matching the usual table layout
        return (2, u64::MAX - p.to_bits());
    }
    (3, 0)
}

fn trend_check(
    rows: &[DeltaRow],
    medians: &[MedianRow],
    methods: &[String],
    priors: &[f64],
    n_seeds: usize,
) -> Option<TrendCheck> {
    let prior_idx = priors
        .iter()
        .position(|&p| p == 0.1)
        .or(if priors.is_empty() { None } else { Some(0) })?;
    let p_tar = priors[prior_idx];
    let method = Method::MfomDcf(p_tar).to_string();
    let median_row = medians.iter().find(|m| m.method == method)?;

    let not_worse = rows
        .iter()
        .filter(|r| r.method == method && r.improvement.min_dcf[prior_idx] >= 0.0)
        .count();
    let objective_decreases: Vec<(String, usize)> = methods
        .iter()
        .filter(|m| **m != Method::Baseline.to_string())
        .map(|m| {
            let n = rows
                .iter()
                .filter(|r| &r.method == m && r.objective_decreased)
                .count();
            (m.clone(), n)
        })
        .collect();

    let median_improvement = median_row.improvement.min_dcf[prior_idx];
    let seeds_f = n_seeds as f64;
    let reproduced = not_worse as f64 >= TREND_NOT_WORSE_FRACTION * seeds_f
        && median_improvement > 0.0
        && objective_decreases
            .iter()
            .all(|(_, n)| *n as f64 >= TREND_DECREASE_FRACTION * seeds_f);
    Some(TrendCheck {
        method,
        p_tar,
        not_worse,
        seeds: n_seeds,
        median_improvement,
        objective_decreases,
        reproduced,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub format: String,
    pub config_hash: String,
    pub spec: SynthSpec,
    pub config: ExperimentConfig,
    pub seeds: Vec<u64>,
    /// One record per method and seed.
    pub records: Vec<MethodRecord>,
    pub comparison: Comparison,
}

/// First 16 hex digits of the SHA-256 of the JSON-encoded spec and config.
/// The spec seed is zeroed so every seed of one experiment shares a hash.
pub fn config_hash(spec: &SynthSpec, cfg: &ExperimentConfig) -> String {
    let mut spec = *spec;
    spec.seed = 0;
    let mut cfg = cfg.clone();
    cfg.pretrain.seed = 0;
    cfg.finetune.seed = 0;
    let json = serde_json::to_string(&(spec, cfg)).expect("plain data serializes");
    let digest = Sha256::digest(json.as_bytes());
    digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

impl ExperimentReport {
    pub fn new(
        spec: &SynthSpec,
        cfg: &ExperimentConfig,
        records: Vec<MethodRecord>,
    ) -> Result<Self> {
        let comparison = compare(&records, &cfg.eval_priors)?;
        Ok(ExperimentReport {
            format: REPORT_FORMAT.to_string(),
            config_hash: config_hash(spec, cfg),
            spec: *spec,
            config: cfg.clone(),
            seeds: comparison.seeds.clone(),
            records,
            comparison,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let report: ExperimentReport =
            serde_json::from_str(text).map_err(|e| Error::parse(e.line(), e.to_string()))?;
        if report.format != REPORT_FORMAT {
            return Err(Error::domain(format!(
                "unsupported report format '{}', expected '{REPORT_FORMAT}'",
                report.format
            )));
        }
        Ok(report)
    }
}

/// Runs every seed and assembles the report. `seeds` are independent runs
/// that differ only in the spec and training seeds.
pub fn run_experiment(
    base_spec: &SynthSpec,
    base_cfg: &ExperimentConfig,
    seeds: &[u64],
) -> Result<(ExperimentReport, Vec<MethodRun>)> {
    let mut runs = Vec::new();
    for &seed in seeds {
        let (spec, cfg) = seeded(base_spec, base_cfg, seed);
        runs.extend(run_seed(&spec, &cfg)?);
    }
    let records = runs.iter().map(|r| r.record.clone()).collect();
    let report = ExperimentReport::new(base_spec, base_cfg, records)?;
    Ok((report, runs))
}

/// Copies of the spec and config keyed to `seed`.
pub fn seeded(
    spec: &SynthSpec,
    cfg: &ExperimentConfig,
    seed: u64,
) -> (SynthSpec, ExperimentConfig) {
    let mut spec = *spec;
    spec.seed = seed;
    let mut cfg = cfg.clone();
    cfg.pretrain.seed = seed;
    cfg.finetune.seed = seed;
    (spec, cfg)
}

/// Mean of each feature, for quick sanity checks on generated data.
pub fn feature_means(data: &LabeledDataset, class: usize) -> Vec<f64> {
    let rows: Vec<usize> = data
        .classes()
        .iter()
        .enumerate()
        .filter(|(_, &c)| c == class)
        .map(|(i, _)| i)
        .collect();
    data.x
        .select(Axis(0), &rows)
        .mean_axis(Axis(0))
        .map(|m| m.to_vec())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(seed: u64) -> SynthSpec {
        SynthSpec {
            n_train: 300,
            n_test: 300,
            ..SynthSpec::default_with_seed(seed)
        }
    }

    fn record(method: &str, seed: u64, eer: f64, dcf: f64) -> MethodRecord {
        MethodRecord {
            method: method.into(),
            seed,
            eer,
            eer_threshold: 0.0,
            min_dcf: vec![PriorDcf {
                p_tar: 0.1,
                raw: dcf * 0.1,
                normalized: dcf,
                threshold: 0.0,
            }],
            objective: "ce".into(),
            objective_trace: vec![1.0, 0.5],
        }
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        let spec = small_spec(3);
        let a = gen_synthetic(&spec).unwrap();
        let b = gen_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.train, gen_synthetic(&small_spec(4)).unwrap().train);
        let targets = a
            .train
            .classes()
            .iter()
            .filter(|&&c| c == TARGET_CLASS)
            .count();
        assert_eq!(targets, 30);
        assert_eq!(a.test.len(), 300);
    }

    #[test]
    fn synthetic_needs_both_classes() {
        let spec = SynthSpec {
            n_train: 4,
            ..small_spec(0)
        };
        assert!(gen_synthetic(&spec).is_err());
    }

    #[test]
    fn synthetic_means_follow_spec() {
        let data = gen_synthetic(&SynthSpec::default_with_seed(9)).unwrap();
        let non = feature_means(&data.train, 1);
        assert!((non[0] - 2.0).abs() < 0.1 && (non[1] - 2.0).abs() < 0.1);
        let tar = feature_means(&data.train, 0);
        assert!(tar[0].abs() < 0.25 && tar[1].abs() < 0.25);
    }

    #[test]
    fn method_names() {
        let names: Vec<String> = Method::table(&DEFAULT_PRIORS)
            .iter()
            .map(|m| m.to_string())
            .collect();
        assert_eq!(
            names,
            ["baseline", "MEER", "MDCF_0.1", "MDCF_0.05", "MDCF_0.01"]
        );
    }

    #[test]
    fn finetune_rejects_foreign_checkpoint() {
        let spec = small_spec(1);
        let mut cfg = ExperimentConfig::default_with_seed(1);
        cfg.pretrain.epochs = 1;
        let data = gen_synthetic(&spec).unwrap();
        let base = run_baseline(&data, &cfg).unwrap();

        let other = gen_synthetic(&small_spec(2)).unwrap();
        assert!(run_finetune(&base.checkpoint, &other, Method::MfomEer, &cfg).is_err());

        let mut wide = cfg.clone();
        wide.hidden = 8;
        assert!(run_finetune(&base.checkpoint, &data, Method::MfomEer, &wide).is_err());
        assert!(run_finetune(&base.checkpoint, &data, Method::Baseline, &cfg).is_err());
    }

    #[test]
    fn alpha_stays_above_floor() {
        let spec = small_spec(5);
        let mut cfg = ExperimentConfig::default_with_seed(5);
        cfg.pretrain.epochs = 2;
        cfg.finetune.learning_rate = 50.0;
        cfg.finetune.momentum = 0.0;
        let data = gen_synthetic(&spec).unwrap();
        let base = run_baseline(&data, &cfg).unwrap();
        let run = run_finetune(&base.checkpoint, &data, Method::MfomDcf(0.1), &cfg).unwrap();
        assert!(run
            .checkpoint
            .counter
            .alpha
            .iter()
            .all(|&a| a >= mfom::ALPHA_FLOOR));
    }

    #[test]
    fn compare_baseline_against_itself() {
        let records = vec![
            record("baseline", 1, 0.2, 0.5),
            record("baseline", 2, 0.3, 0.7),
        ];
        let cmp = compare(&records, &[0.1]).unwrap();
        assert_eq!(cmp.rows.len(), 2);
        for row in &cmp.rows {
            assert_eq!(row.improvement.eer, 0.0);
            assert_eq!(row.improvement.min_dcf, vec![0.0]);
        }
        assert!(cmp.trend.is_none());
    }

    #[test]
    fn compare_rows_and_medians() {
        let mut records = Vec::new();
        for seed in 0..4 {
            records.push(record("baseline", seed, 0.2, 0.5));
            records.push(record("MDCF_0.1", seed, 0.1, 0.5 - 0.1 * seed as f64));
            records.push(record("MEER", seed, 0.25, 0.6));
        }
        let cmp = compare(&records, &[0.1]).unwrap();
        assert_eq!(cmp.rows.len(), 12);
        assert_eq!(cmp.medians.len(), 3);
        let mdcf = cmp.medians.iter().find(|m| m.method == "MDCF_0.1").unwrap();
        assert!((mdcf.improvement.min_dcf[0] - 0.15).abs() < 1e-12);
        let trend = cmp.trend.unwrap();
        assert_eq!(trend.not_worse, 4);
        assert!(trend.reproduced);

        // permutation invariance
        let mut shuffled = records.clone();
        shuffled.reverse();
        assert_eq!(
            compare(&shuffled, &[0.1]).unwrap(),
            compare(&records, &[0.1]).unwrap()
        );
    }

    #[test]
    fn median_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(median(&[]).is_nan());
    }

    #[test]
    fn config_hash_ignores_seed() {
        let spec = SynthSpec::default_with_seed(1);
        let cfg = ExperimentConfig::default_with_seed(1);
        let (s2, c2) = seeded(&spec, &cfg, 99);
        assert_eq!(config_hash(&spec, &cfg), config_hash(&s2, &c2));
        let mut c3 = cfg.clone();
        c3.hidden = 8;
        assert_ne!(config_hash(&spec, &cfg), config_hash(&spec, &c3));
        assert_eq!(config_hash(&spec, &cfg).len(), 16);
    }
}

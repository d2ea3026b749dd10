//! Benchmark harness: metrics, baselines, repeated runs, ablations and presets.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::ArrayView2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{
    load_csv, make_pu, sample_labeled, synth_community_labeled, synth_community_pu, synth_gaussian_labeled,
    synth_gaussian_pu, CategoricalColumn, CategoricalEncoding, Class, CommunitySynth, LabeledDataset, PuDataset,
    PuLabel, Schema, Standardizer,
};
use crate::explain::ExplainBudget;
use crate::fusion::FusionHyper;
use crate::mlp::Mlp;
use crate::prior::PriorHyper;
use crate::purisk::{train_pu, RiskConfig, TrainHyper};
use crate::rng::derive_seed;
use crate::tree::{build_tree, PuTree, TreeConfig};
use crate::{Error, Result};

/// Environment variable naming the benchmark data directory.
pub const DATA_DIR_ENV: &str = "PUTREE_DATA_DIR";

// ---------------------------------------------------------------- metrics

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(predicted: &[Class], truth: &[Class]) -> Result<Self> {
        if predicted.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                context: "confusion counts",
                expected: truth.len(),
                got: predicted.len(),
            });
        }
        let mut c = Confusion::default();
        for (p, t) in predicted.iter().zip(truth) {
            match (p, t) {
                (Class::Positive, Class::Positive) => c.tp += 1,
                (Class::Positive, Class::Negative) => c.fp += 1,
                (Class::Negative, Class::Negative) => c.tn += 1,
                (Class::Negative, Class::Positive) => c.fn_ += 1,
            }
        }
        Ok(c)
    }
}

/// Metrics of one run. A flag marks a metric whose denominator was zero; the
/// metric is then reported as 0.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f_undefined: bool,
}

fn ratio(num: f64, den: f64) -> (f64, bool) {
    if den > 0.0 {
        (num / den, false)
    } else {
        (0.0, true)
    }
}

impl RunMetrics {
    pub fn from_confusion(c: &Confusion) -> Self {
        let n = (c.tp + c.fp + c.tn + c.fn_) as f64;
        let (accuracy, _) = ratio((c.tp + c.tn) as f64, n);
        let (precision, precision_undefined) = ratio(c.tp as f64, (c.tp + c.fp) as f64);
        let (recall, recall_undefined) = ratio(c.tp as f64, (c.tp + c.fn_) as f64);
        let (f1, f_undefined) = ratio(2.0 * precision * recall, precision + recall);
        let (f2, _) = ratio(5.0 * precision * recall, 4.0 * precision + recall);
        Self {
            accuracy,
            precision,
            recall,
            f1,
            f2,
            precision_undefined,
            recall_undefined,
            f_undefined,
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.f2]
    }
}

pub const METRIC_NAMES: [&str; 5] = ["accuracy", "precision", "recall", "f1", "f2"];

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub f2: f64,
}

impl MetricSummary {
    fn from_array(v: [f64; 5]) -> Self {
        Self {
            accuracy: v[0],
            precision: v[1],
            recall: v[2],
            f1: v[3],
            f2: v[4],
        }
    }

    pub fn values(&self) -> [f64; 5] {
        [self.accuracy, self.precision, self.recall, self.f1, self.f2]
    }
}

/// Mean and sample standard deviation over runs, with the runs kept.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub label: String,
    pub n_runs: usize,
    pub mean: MetricSummary,
    pub std: MetricSummary,
    pub seeds: Vec<u64>,
    pub runs: Vec<RunMetrics>,
}

impl MetricsRecord {
    pub fn aggregate(label: impl Into<String>, seeds: Vec<u64>, runs: Vec<RunMetrics>) -> Self {
        let n = runs.len();
        let mut mean = [0.0; 5];
        let mut std = [0.0; 5];
        if n > 0 {
            for k in 0..5 {
                let m = runs.iter().map(|r| r.values()[k]).sum::<f64>() / n as f64;
                mean[k] = m;
                if n > 1 {
                    let v = runs.iter().map(|r| (r.values()[k] - m).powi(2)).sum::<f64>() / (n - 1) as f64;
                    std[k] = v.sqrt();
                }
            }
        }
        Self {
            label: label.into(),
            n_runs: n,
            mean: MetricSummary::from_array(mean),
            std: MetricSummary::from_array(std),
            seeds,
            runs,
        }
    }
}

pub fn evaluate_predictions(predicted: &[Class], test: &LabeledDataset) -> Result<RunMetrics> {
    Ok(RunMetrics::from_confusion(&Confusion::from_predictions(predicted, test.labels())?))
}

/// Table with one row per record, cells as `mean (std)` in percent.
pub fn format_table(records: &[MetricsRecord]) -> String {
    let width = records.iter().map(|r| r.label.len()).max().unwrap_or(6).max(6);
    let mut s = format!("{:<width$}", "method");
    for name in METRIC_NAMES {
        let _ = write!(s, " | {name:>15}");
    }
    s.push('\n');
    for r in records {
        let _ = write!(s, "{:<width$}", r.label);
        for (m, d) in r.mean.values().iter().zip(r.std.values()) {
            let _ = write!(s, " | {:>15}", format!("{:.2} ({:.2})", 100.0 * m, 100.0 * d));
        }
        s.push('\n');
    }
    s
}

// ---------------------------------------------------------------- naive baseline

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum CartNode {
    Leaf { positive_fraction: f64, n: usize },
    Split { feature: usize, threshold: f64, left: usize, right: usize },
}

/// Gini-impurity binary decision tree.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub nodes: Vec<CartNode>,
    pub max_depth: usize,
}

fn gini(pos: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let p = pos as f64 / n as f64;
    2.0 * p * (1.0 - p)
}

fn grow_cart(x: ArrayView2<f64>, y: &[bool], rows: Vec<usize>, depth: usize, max_depth: usize, nodes: &mut Vec<CartNode>) -> usize {
    let id = nodes.len();
    let n = rows.len();
    let pos = rows.iter().filter(|&&r| y[r]).count();
    nodes.push(CartNode::Leaf {
        positive_fraction: if n > 0 { pos as f64 / n as f64 } else { 0.0 },
        n,
    });
    if depth >= max_depth || pos == 0 || pos == n || n < 2 {
        return id;
    }
    let parent = gini(pos, n) * n as f64;
    let mut best: Option<(f64, usize, f64)> = None;
    for f in 0..x.ncols() {
        let mut sorted = rows.clone();
        sorted.sort_by(|&a, &b| x[[a, f]].total_cmp(&x[[b, f]]));
        let mut left_pos = 0;
        for k in 0..n - 1 {
            if y[sorted[k]] {
                left_pos += 1;
            }
            let (a, b) = (x[[sorted[k], f]], x[[sorted[k + 1], f]]);
            if a == b {
                continue;
            }
            let nl = k + 1;
            let cost = gini(left_pos, nl) * nl as f64 + gini(pos - left_pos, n - nl) * (n - nl) as f64;
            let gain = parent - cost;
            if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, f, 0.5 * (a + b)));
            }
        }
    }
    let Some((_, feature, threshold)) = best else {
        return id;
    };
    let (l, r): (Vec<usize>, Vec<usize>) = rows.iter().partition(|&&i| x[[i, feature]] <= threshold);
    let left = grow_cart(x, y, l, depth + 1, max_depth, nodes);
    let right = grow_cart(x, y, r, depth + 1, max_depth, nodes);
    nodes[id] = CartNode::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

impl DecisionTree {
    pub fn fit(x: ArrayView2<f64>, y: &[bool], max_depth: usize) -> Result<Self> {
        if x.nrows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "decision tree labels",
                expected: x.nrows(),
                got: y.len(),
            });
        }
        if x.nrows() == 0 {
            return Err(Error::EmptyInput("decision tree needs rows"));
        }
        let mut nodes = Vec::new();
        grow_cart(x, y, (0..x.nrows()).collect(), 0, max_depth, &mut nodes);
        Ok(Self { nodes, max_depth })
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &DecisionTree, id: usize) -> usize {
            match t.nodes[id] {
                CartNode::Leaf { .. } => 0,
                CartNode::Split { left, right, .. } => 1 + walk(t, left).max(walk(t, right)),
            }
        }
        walk(self, 0)
    }

    pub fn positive_fraction(&self, row: ndarray::ArrayView1<f64>) -> f64 {
        let mut id = 0;
        loop {
            match self.nodes[id] {
                CartNode::Leaf { positive_fraction, .. } => return positive_fraction,
                CartNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => id = if row[feature] <= threshold { left } else { right },
            }
        }
    }

    /// Positive when the leaf's positive fraction exceeds one half.
    pub fn predict(&self, x: ArrayView2<f64>) -> Vec<Class> {
        x.rows()
            .into_iter()
            .map(|r| if self.positive_fraction(r) > 0.5 { Class::Positive } else { Class::Negative })
            .collect()
    }
}

/// Decision tree on labeled positives versus all unlabeled rows taken as negative.
pub fn baseline_naive(data: &PuDataset, max_depth: usize) -> Result<DecisionTree> {
    let y: Vec<bool> = data.labels().iter().map(|&l| l == PuLabel::Positive).collect();
    DecisionTree::fit(data.features(), &y, max_depth)
}

// ---------------------------------------------------------------- methods

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Naive,
    Upu,
    Nnpu,
    Putree,
    VariantI,
    VariantII,
    VariantIII,
    VariantIV,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Naive,
        Method::Upu,
        Method::Nnpu,
        Method::Putree,
        Method::VariantI,
        Method::VariantII,
        Method::VariantIII,
        Method::VariantIV,
    ];
    pub const VARIANTS: [Method; 4] = [Method::VariantI, Method::VariantII, Method::VariantIII, Method::VariantIV];

    pub fn name(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Upu => "upu",
            Method::Nnpu => "nnpu",
            Method::Putree => "putree",
            Method::VariantI => "variant-i",
            Method::VariantII => "variant-ii",
            Method::VariantIII => "variant-iii",
            Method::VariantIV => "variant-iv",
        }
    }

    pub fn is_tree(self) -> bool {
        !matches!(self, Method::Naive | Method::Upu | Method::Nnpu)
    }

    /// Which of the four tree components are active: sibling-aware explainer
    /// sampling, mask-recovery augmentation, path fusion, consistency term.
    pub fn components(self) -> [bool; 4] {
        match self {
            Method::VariantI => [false, true, true, true],
            Method::VariantII => [true, false, true, true],
            Method::VariantIII => [true, true, false, true],
            Method::VariantIV => [true, true, true, false],
            _ => [true; 4],
        }
    }

    /// `config` with this variant's component switched off.
    pub fn tree_config(self, config: &TreeConfig) -> TreeConfig {
        let mut c = config.clone();
        let [putl, mr, pf, ar] = self.components();
        c.explain.sibling_sampling &= putl;
        c.augment.enabled &= mr;
        c.use_fusion &= pf;
        if !ar {
            c.lambda = 0.0;
        }
        c
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('_', "-");
        let key = match key.as_str() {
            "i" | "1" => "variant-i",
            "ii" | "2" => "variant-ii",
            "iii" | "3" => "variant-iii",
            "iv" | "4" => "variant-iv",
            other => other,
        }
        .to_string();
        Method::ALL.into_iter().find(|m| m.name() == key).ok_or_else(|| Error::Unknown {
            kind: "method",
            name: s.to_string(),
        })
    }
}

// ---------------------------------------------------------------- data and specs

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DataSource {
    /// Prepared CSV pair with a schema.
    Csv { train: PathBuf, test: PathBuf, schema: PathBuf },
    Community(CommunitySynth),
    Gaussian { dimension: usize, separation: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sizes {
    pub labeled_positive: usize,
    pub unlabeled: usize,
    /// Fraction of hidden positives in the unlabeled pool.
    pub train_prior: f64,
    pub test: usize,
    pub test_prior: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub source: DataSource,
    pub sizes: Sizes,
    pub method: Method,
    pub tree: TreeConfig,
    /// Single-network baselines.
    pub network: TrainHyper,
    pub naive_depth: usize,
    pub seeds: Vec<u64>,
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::invalid("experiment needs at least one seed"));
        }
        if self.sizes.labeled_positive == 0 || self.sizes.unlabeled == 0 || self.sizes.test == 0 {
            return Err(Error::invalid("dataset sizes must be positive"));
        }
        self.tree.validate()
    }

    pub fn with_method(&self, method: Method) -> Self {
        Self {
            method,
            ..self.clone()
        }
    }

    /// `n` seeds starting at `first`.
    pub fn with_runs(mut self, first: u64, n: usize) -> Self {
        self.seeds = (first..first + n as u64).collect();
        self
    }
}

/// Labeled tables loaded once per experiment.
pub struct SourceData {
    train: Option<LabeledDataset>,
    test: Option<LabeledDataset>,
}

pub fn load_source(source: &DataSource) -> Result<SourceData> {
    match source {
        DataSource::Csv { train, test, schema } => {
            let schema = Schema::from_path(schema)?;
            Ok(SourceData {
                train: Some(load_csv(train, &schema)?),
                test: Some(load_csv(test, &schema)?),
            })
        }
        _ => Ok(SourceData { train: None, test: None }),
    }
}

/// Training PU data and labeled test data for one seed.
pub fn draw_run_data(spec: &ExperimentSpec, data: &SourceData, seed: u64) -> Result<(PuDataset, LabeledDataset)> {
    let s = &spec.sizes;
    let (train_seed, test_seed) = (derive_seed(seed, 61), derive_seed(seed, 62));
    match &spec.source {
        DataSource::Csv { .. } => {
            let train = data.train.as_ref().ok_or(Error::EmptyInput("training table not loaded"))?;
            let test = data.test.as_ref().ok_or(Error::EmptyInput("test table not loaded"))?;
            Ok((
                make_pu(train, s.labeled_positive, s.unlabeled, s.train_prior, train_seed)?,
                sample_labeled(test, s.test, s.test_prior, test_seed)?,
            ))
        }
        DataSource::Community(cfg) => {
            let train_cfg = CommunitySynth {
                prior: s.train_prior,
                ..cfg.clone()
            };
            let test_cfg = CommunitySynth {
                prior: s.test_prior,
                ..cfg.clone()
            };
            let (pu, _) = synth_community_pu(&train_cfg, s.labeled_positive, s.unlabeled, train_seed)?;
            Ok((pu, synth_community_labeled(&test_cfg, s.test, test_seed)?))
        }
        DataSource::Gaussian { dimension, separation } => {
            let (pu, _) = synth_gaussian_pu(s.labeled_positive, s.unlabeled, s.train_prior, *dimension, *separation, train_seed)?;
            Ok((pu, synth_gaussian_labeled(s.test, s.test_prior, *dimension, *separation, test_seed)?))
        }
    }
}

/// A fitted classifier of any method.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainedModel {
    Naive(DecisionTree),
    Network { model: Mlp, scaler: Standardizer },
    Tree(Box<PuTree>),
}

impl TrainedModel {
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Vec<Class>> {
        match self {
            TrainedModel::Naive(t) => Ok(t.predict(x)),
            TrainedModel::Network { model, scaler } => Ok(model
                .forward(scaler.transform(x)?.view())?
                .iter()
                .map(|&z| Class::from_score(z))
                .collect()),
            TrainedModel::Tree(t) => Ok(t.predict(x)?.into_iter().map(|(c, _)| c).collect()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

pub fn train_method(spec: &ExperimentSpec, data: &PuDataset, seed: u64) -> Result<TrainedModel> {
    match spec.method {
        Method::Naive => Ok(TrainedModel::Naive(baseline_naive(data, spec.naive_depth)?)),
        Method::Upu | Method::Nnpu => {
            let scaler = Standardizer::fit(data.features())?;
            let std = data.standardized(&scaler)?;
            let config = if spec.method == Method::Upu {
                RiskConfig::upu(data.class_prior())
            } else {
                RiskConfig::nnpu(data.class_prior())
            };
            let hyper = TrainHyper {
                seed: derive_seed(seed, 63),
                ..spec.network.clone()
            };
            Ok(TrainedModel::Network {
                model: train_pu(&std, &config, &hyper)?,
                scaler,
            })
        }
        m => {
            let config = TreeConfig {
                seed: derive_seed(seed, 64),
                ..m.tree_config(&spec.tree)
            };
            Ok(TrainedModel::Tree(Box::new(build_tree(data, &config)?)))
        }
    }
}

/// Outcome of one seeded run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub metrics: RunMetrics,
    pub model: TrainedModel,
}

pub fn run_once(spec: &ExperimentSpec, data: &SourceData, seed: u64) -> Result<RunOutcome> {
    let (train, test) = draw_run_data(spec, data, seed)?;
    let model = train_method(spec, &train, seed)?;
    let metrics = evaluate_predictions(&model.predict(test.features())?, &test)?;
    log::info!(
        "experiment={} method={} seed={} accuracy={:.4} f1={:.4} f2={:.4}",
        spec.name,
        spec.method.name(),
        seed,
        metrics.accuracy,
        metrics.f1,
        metrics.f2
    );
    Ok(RunOutcome { seed, metrics, model })
}

/// Runs every seed (in parallel worker threads) and aggregates. With `artifacts`,
/// each run's metrics and model are written there as JSON.
pub fn run_experiment_with(spec: &ExperimentSpec, data: &SourceData, artifacts: Option<&Path>) -> Result<MetricsRecord> {
    spec.validate()?;
    let outcomes: Vec<RunOutcome> = spec
        .seeds
        .par_iter()
        .map(|&seed| run_once(spec, data, seed))
        .collect::<Result<_>>()?;
    if let Some(dir) = artifacts {
        fs::create_dir_all(dir)?;
        for o in &outcomes {
            let path = dir.join(format!("{}-{}-seed{}.json", spec.name, spec.method.name(), o.seed));
            fs::write(path, serde_json::to_string(o)?)?;
        }
    }
    Ok(MetricsRecord::aggregate(
        format!("{}", spec.method.name()),
        spec.seeds.clone(),
        outcomes.into_iter().map(|o| o.metrics).collect(),
    ))
}

pub fn run_experiment(spec: &ExperimentSpec) -> Result<MetricsRecord> {
    let data = load_source(&spec.source)?;
    run_experiment_with(spec, &data, None)
}

/// Reruns `spec` as the named variant (`"I"` .. `"IV"`).
pub fn run_ablation(variant: &str, spec: &ExperimentSpec) -> Result<MetricsRecord> {
    let method: Method = variant.parse()?;
    if !Method::VARIANTS.contains(&method) {
        return Err(Error::Unknown {
            kind: "variant",
            name: variant.to_string(),
        });
    }
    run_experiment(&spec.with_method(method))
}

/// Full tree and all four variants on the same seeds.
pub fn run_ablation_suite(spec: &ExperimentSpec) -> Result<Vec<MetricsRecord>> {
    let data = load_source(&spec.source)?;
    std::iter::once(Method::Putree)
        .chain(Method::VARIANTS)
        .map(|m| run_experiment_with(&spec.with_method(m), &data, None))
        .collect()
}

/// Ablation table with component check marks.
pub fn format_ablation_table(records: &[MetricsRecord]) -> String {
    let mut s = String::from("variant      | PUTL MR PF AR |");
    for name in METRIC_NAMES {
        let _ = write!(s, " {name:>15} |");
    }
    s.push('\n');
    for r in records {
        let m: Method = r.label.parse().unwrap_or(Method::Putree);
        let marks: Vec<&str> = m.components().iter().map(|&on| if on { "✓" } else { "✗" }).collect();
        let _ = write!(s, "{:<12} |  {}    {}  {}  {} |", r.label, marks[0], marks[1], marks[2], marks[3]);
        for (v, d) in r.mean.values().iter().zip(r.std.values()) {
            let _ = write!(s, " {:>15} |", format!("{:.2} ({:.2})", 100.0 * v, 100.0 * d));
        }
        s.push('\n');
    }
    s
}

// ---------------------------------------------------------------- presets

pub const PRESETS: [&str; 6] = [
    "nsl-kdd-desk",
    "nsl-kdd-full",
    "diabetes-desk",
    "diabetes-full",
    "gaussian-desk",
    "smoke",
];

/// Node and baseline network settings used by the desk-scale presets.
pub fn desk_network() -> TrainHyper {
    TrainHyper {
        epochs: 100,
        batch_size: 512,
        learning_rate: 1e-3,
        weight_decay: 5e-3,
        hidden: vec![32, 32],
        seed: 0,
        record_trace: false,
    }
}

pub fn desk_tree() -> TreeConfig {
    TreeConfig {
        max_depth: 2,
        min_node_size: 1000,
        node: desk_network(),
        fusion: FusionHyper {
            epochs: 30,
            batch_size: 512,
            learning_rate: 1e-3,
            fusion_width: None,
            seed: 0,
        },
        explain: ExplainBudget {
            anchors: 20,
            pool_size: 500,
            neighbors: 150,
            ..Default::default()
        },
        scout_epochs: 5,
        ..Default::default()
    }
}

/// Settings that follow the published configuration.
pub fn full_network() -> TrainHyper {
    TrainHyper::default()
}

pub fn full_tree() -> TreeConfig {
    TreeConfig {
        node: full_network(),
        fusion: FusionHyper::default(),
        ..Default::default()
    }
}

fn nsl_source(dir: &Path) -> DataSource {
    DataSource::Csv {
        train: dir.join("nsl_kdd_train.csv"),
        test: dir.join("nsl_kdd_test.csv"),
        schema: dir.join("nsl_kdd_schema.toml"),
    }
}

/// Named experiment configuration. `data_dir` is needed by the benchmark presets.
pub fn preset(name: &str, data_dir: Option<&Path>) -> Result<ExperimentSpec> {
    let need_dir = || {
        data_dir.ok_or_else(|| Error::Config(format!("preset {name} needs a data directory (set {DATA_DIR_ENV})")))
    };
    let seeds: Vec<u64> = (0..5).collect();
    let spec = match name {
        "nsl-kdd-desk" => ExperimentSpec {
            name: name.into(),
            source: nsl_source(need_dir()?),
            sizes: Sizes {
                labeled_positive: 100,
                unlabeled: 8000,
                train_prior: 0.5,
                test: 4000,
                test_prior: 0.5,
            },
            method: Method::Nnpu,
            tree: desk_tree(),
            network: desk_network(),
            naive_depth: 10,
            seeds,
        },
        "nsl-kdd-full" => ExperimentSpec {
            name: name.into(),
            source: nsl_source(need_dir()?),
            sizes: Sizes {
                labeled_positive: 100,
                unlabeled: 40_000,
                train_prior: 0.5,
                // the public test file has fewer than 10,000 normal rows
                test: 18_000,
                test_prior: 0.5,
            },
            method: Method::Nnpu,
            tree: full_tree(),
            network: full_network(),
            naive_depth: 10,
            seeds,
        },
        "diabetes-desk" => ExperimentSpec {
            name: name.into(),
            source: DataSource::Community(CommunitySynth::default()),
            sizes: Sizes {
                labeled_positive: 100,
                unlabeled: 8000,
                train_prior: 0.124,
                test: 4000,
                test_prior: 0.124,
            },
            method: Method::Nnpu,
            tree: desk_tree(),
            network: desk_network(),
            naive_depth: 10,
            seeds,
        },
        "diabetes-full" => ExperimentSpec {
            name: name.into(),
            source: DataSource::Community(CommunitySynth {
                dimension: 115,
                ..Default::default()
            }),
            sizes: Sizes {
                labeled_positive: 100,
                unlabeled: 25_450,
                train_prior: 0.124,
                test: 10_000,
                test_prior: 0.124,
            },
            method: Method::Nnpu,
            tree: full_tree(),
            network: full_network(),
            naive_depth: 10,
            seeds,
        },
        "gaussian-desk" => ExperimentSpec {
            name: name.into(),
            source: DataSource::Gaussian {
                dimension: 2,
                separation: 4.0,
            },
            sizes: Sizes {
                labeled_positive: 100,
                unlabeled: 2000,
                train_prior: 0.5,
                test: 2000,
                test_prior: 0.5,
            },
            method: Method::Nnpu,
            tree: desk_tree(),
            network: full_network(),
            naive_depth: 10,
            seeds,
        },
        "smoke" => {
            let small = TrainHyper {
                epochs: 5,
                batch_size: 128,
                learning_rate: 1e-3,
                weight_decay: 0.0,
                hidden: vec![8, 8],
                seed: 0,
                record_trace: false,
            };
            ExperimentSpec {
                name: name.into(),
                source: DataSource::Community(CommunitySynth::default()),
                sizes: Sizes {
                    labeled_positive: 40,
                    unlabeled: 600,
                    train_prior: 0.124,
                    test: 300,
                    test_prior: 0.124,
                },
                method: Method::Nnpu,
                tree: TreeConfig {
                    max_depth: 1,
                    min_node_size: 150,
                    node: small.clone(),
                    prior: PriorHyper {
                        hidden: vec![8],
                        epochs: 3,
                        ..Default::default()
                    },
                    fusion: FusionHyper {
                        epochs: 3,
                        batch_size: 128,
                        learning_rate: 1e-3,
                        fusion_width: None,
                        seed: 0,
                    },
                    explain: ExplainBudget {
                        anchors: 3,
                        pool_size: 60,
                        neighbors: 30,
                        ..Default::default()
                    },
                    scout_epochs: 1,
                    ..Default::default()
                },
                network: small,
                naive_depth: 5,
                seeds: vec![0, 1],
            }
        }
        _ => {
            return Err(Error::Unknown {
                kind: "preset",
                name: name.into(),
            })
        }
    };
    Ok(spec)
}

// ---------------------------------------------------------------- NSL-KDD conversion

pub const NSL_KDD_COLUMNS: [&str; 43] = [
    "duration",
    "protocol_type",
    "service",
    "flag",
    "src_bytes",
    "dst_bytes",
    "land",
    "wrong_fragment",
    "urgent",
    "hot",
    "num_failed_logins",
    "logged_in",
    "num_compromised",
    "root_shell",
    "su_attempted",
    "num_root",
    "num_file_creations",
    "num_shells",
    "num_access_files",
    "num_outbound_cmds",
    "is_host_login",
    "is_guest_login",
    "count",
    "srv_count",
    "serror_rate",
    "srv_serror_rate",
    "rerror_rate",
    "srv_rerror_rate",
    "same_srv_rate",
    "diff_srv_rate",
    "srv_diff_host_rate",
    "dst_host_count",
    "dst_host_srv_count",
    "dst_host_same_srv_rate",
    "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate",
    "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate",
    "dst_host_srv_serror_rate",
    "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
    "label",
    "difficulty",
];

const NSL_CATEGORICAL: [&str; 3] = ["protocol_type", "service", "flag"];
/// Heavy-tailed counters written as `ln(1 + v)`.
const NSL_LOG_COLUMNS: [&str; 3] = ["duration", "src_bytes", "dst_bytes"];

/// Converts the raw headerless `KDDTrain+.txt` / `KDDTest+.txt` files in `raw_dir`
/// into headed CSVs and a schema in `out_dir`. Attacks are positive, `normal` is
/// negative; the difficulty column is dropped; categories cover both files.
pub fn prepare_nsl_kdd(raw_dir: &Path, out_dir: &Path, encoding: CategoricalEncoding) -> Result<Vec<PathBuf>> {
    let read = |name: &str| -> Result<Vec<csv::StringRecord>> {
        let path = raw_dir.join(name);
        if !path.exists() {
            return Err(Error::Config(format!("missing {}", path.display())));
        }
        let mut r = csv::ReaderBuilder::new().has_headers(false).from_path(&path)?;
        let rows: Vec<csv::StringRecord> = r.records().collect::<std::result::Result<_, _>>()?;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != NSL_KDD_COLUMNS.len() {
                return Err(Error::Parse {
                    row: i + 1,
                    message: format!("{name}: expected {} fields, found {}", NSL_KDD_COLUMNS.len(), row.len()),
                });
            }
        }
        Ok(rows)
    };
    let train = read("KDDTrain+.txt")?;
    let test = read("KDDTest+.txt")?;
    let mut categorical = Vec::new();
    for col in NSL_CATEGORICAL {
        let idx = NSL_KDD_COLUMNS.iter().position(|c| *c == col).expect("known column");
        let mut cats: Vec<String> = train.iter().chain(&test).map(|r| r[idx].to_string()).collect();
        cats.sort();
        cats.dedup();
        categorical.push(CategoricalColumn {
            column: col.to_string(),
            categories: cats,
            encoding,
        });
    }
    let schema = Schema {
        label_column: "label".into(),
        negative_labels: Some(vec!["normal".into()]),
        ignore: vec!["difficulty".into()],
        categorical,
        ..Default::default()
    };
    fs::create_dir_all(out_dir)?;
    let log_idx: Vec<usize> = NSL_LOG_COLUMNS
        .iter()
        .map(|c| NSL_KDD_COLUMNS.iter().position(|k| k == c).expect("known column"))
        .collect();
    let mut written = Vec::new();
    for (rows, name) in [(&train, "nsl_kdd_train.csv"), (&test, "nsl_kdd_test.csv")] {
        let path = out_dir.join(name);
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(NSL_KDD_COLUMNS)?;
        for (i, row) in rows.iter().enumerate() {
            let mut out: Vec<String> = row.iter().map(str::to_string).collect();
            for &k in &log_idx {
                let v: f64 = out[k].trim().parse().map_err(|_| Error::Parse {
                    row: i + 1,
                    message: format!("{name}: {} is not numeric", NSL_KDD_COLUMNS[k]),
                })?;
                out[k] = format!("{}", v.max(0.0).ln_1p());
            }
            w.write_record(&out)?;
        }
        w.flush()?;
        written.push(path);
    }
    let schema_path = out_dir.join("nsl_kdd_schema.toml");
    fs::write(&schema_path, schema.to_toml_string()?)?;
    written.push(schema_path);
    Ok(written)
}

//! Acceptance criteria 1-8. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Pass a criterion number to run only that one:
//! `cargo test --test acceptance -- 6`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use proptest::prelude::*;
use proptest::test_runner::{Config, RngAlgorithm, TestRng, TestRunner};
use rand::Rng as _;

use putree::augment::{
    augment, augment_traced, fit_recovery, mask_count, rank_features, top_features, AugmentConfig, ImportanceMethod,
    RecoveryFit,
};
use putree::dataset::{synth_gaussian_pu, PuDataset, PuLabel, Side, Split, Standardizer};
use putree::explain::{balance_term, kl_two_bin, score_split, ExplainBudget};
use putree::fusion::{fusion_risk_gradient, path_representations, train_fusion, FusionHyper, FusionNetwork};
use putree::harness::{
    load_source, preset, run_experiment, run_experiment_with, DataSource, ExperimentSpec, Method, MetricsRecord,
    DATA_DIR_ENV,
};
use putree::mlp::{fit_ridge, Mlp, MlpGrads};
use putree::prior::{coarse_objective, estimate_prior, estimate_prior_traced, PriorHyper};
use putree::purisk::{
    adversarial_risk, consistency_risk, nnpu_risk, risk_gradient, train_pu, upu_risk, GradientPolicy, RiskConfig,
    SurrogateLoss, TrainHyper,
};
use putree::rng::{derive_seed, seeded};
use putree::tree::{build_tree, leaf_path, leaf_reason, LeafReason, PuTree, TreeConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

/// Collects failed requirements; the criterion passes when there are none.
#[derive(Default)]
struct Checks {
    failures: Vec<String>,
    notes: Vec<String>,
}

impl Checks {
    fn require(&mut self, ok: bool, what: impl Into<String>) {
        if !ok {
            self.failures.push(what.into());
        }
    }

    fn note(&mut self, s: impl Into<String>) {
        self.notes.push(s.into());
    }

    fn outcome(self) -> Outcome {
        let pass = self.failures.is_empty();
        let mut parts = self.notes;
        if !pass {
            parts.push(format!("failed: {}", self.failures.join("; ")));
        }
        Outcome {
            pass,
            detail: parts.join("; "),
        }
    }
}

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config {
            cases,
            failure_persistence: None,
            ..Config::default()
        },
        TestRng::deterministic_rng(RngAlgorithm::ChaCha),
    )
}

/// Runs a property and turns a counterexample into a failure.
fn property<S: Strategy>(
    c: &mut Checks,
    name: &str,
    cases: u32,
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) where
    S::Value: std::fmt::Debug,
{
    match runner(cases).run(&strategy, test) {
        Ok(()) => {}
        Err(e) => c.require(false, format!("{name}: {e}")),
    }
}

// ---------------------------------------------------------------- fixtures

fn random_matrix(rows: usize, cols: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = seeded(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

/// Batch with row 0 positive, row 1 unlabeled and the rest random.
fn random_batch(n: usize, d: usize, prior: f64, seed: u64) -> PuDataset {
    let mut rng = seeded(derive_seed(seed, 1));
    let labels: Vec<PuLabel> = (0..n)
        .map(|i| match i {
            0 => PuLabel::Positive,
            1 => PuLabel::Unlabeled,
            _ if rng.random_bool(0.4) => PuLabel::Positive,
            _ => PuLabel::Unlabeled,
        })
        .collect();
    PuDataset::new(
        random_matrix(n, d, 2.0, seed),
        labels,
        prior,
        (0..d).map(|i| format!("x{i}")).collect(),
    )
    .unwrap()
}

/// Random network with non-zero biases. Zero biases put downstream rectifiers of
/// dead units exactly on their kink, where finite differences are one-sided.
fn generic_mlp(d: usize, hidden: &[usize], seed: u64) -> Mlp {
    let mut m = Mlp::new(d, hidden, seed).unwrap();
    let mut rng = seeded(derive_seed(seed, 99));
    for b in m.biases_mut() {
        b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    }
    m
}

fn widths() -> impl Strategy<Value = Vec<usize>> {
    proptest::collection::vec(1usize..=8, 1..=3)
}

// ---------------------------------------------------------------- scalar oracles

fn oracle_sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Sigmoid surrogate loss `1 / (1 + exp(y z))`.
fn oracle_loss(z: f64, y: f64) -> f64 {
    1.0 / (1.0 + (y * z).exp())
}

/// Forward pass with explicit loops over the model's weights and biases.
fn oracle_forward(model: &Mlp, x: ArrayView1<f64>) -> f64 {
    let weights = model.weights().to_vec();
    let biases = model.clone().biases_mut().to_vec();
    let mut a: Vec<f64> = x.to_vec();
    for l in 0..weights.len() {
        let w = &weights[l];
        let mut out = vec![0.0; w.ncols()];
        for j in 0..w.ncols() {
            let mut s = biases[l][j];
            for i in 0..w.nrows() {
                s += a[i] * w[[i, j]];
            }
            out[j] = if l + 1 < weights.len() { s.max(0.0) } else { s };
        }
        a = out;
    }
    a[0]
}

/// `(positive part, bracket)` of the unbiased risk.
fn oracle_parts(model: &Mlp, batch: &PuDataset, prior: f64) -> (f64, f64) {
    let (mut n_p, mut n_u) = (0.0, 0.0);
    let (mut pos_plus, mut pos_minus, mut unl_minus) = (0.0, 0.0, 0.0);
    for (i, row) in batch.features().outer_iter().enumerate() {
        let z = oracle_forward(model, row);
        if batch.labels()[i] == PuLabel::Positive {
            n_p += 1.0;
            pos_plus += oracle_loss(z, 1.0);
            pos_minus += oracle_loss(z, -1.0);
        } else {
            n_u += 1.0;
            unl_minus += oracle_loss(z, -1.0);
        }
    }
    (prior / n_p * pos_plus, unl_minus / n_u - prior / n_p * pos_minus)
}

fn oracle_consistency(child: &Mlp, parent: &Mlp, x: ArrayView2<f64>) -> f64 {
    let mut s = 0.0;
    for row in x.outer_iter() {
        let d = oracle_sigmoid(oracle_forward(child, row)) - oracle_sigmoid(oracle_forward(parent, row));
        s += d * d;
    }
    s / x.nrows() as f64
}

// ---------------------------------------------------------------- criterion 1

fn criterion_1() -> Outcome {
    let mut c = Checks::default();
    let strategy = (any::<u64>(), 2usize..=16, 1usize..=5, widths(), 0.05f64..0.95, 0.0f64..3.0);
    let worst = std::cell::Cell::new(0.0f64);
    let negative_brackets = std::cell::Cell::new(0usize);
    property(&mut c, "risk oracles", 500, strategy, |(seed, n, d, hidden, prior, lambda)| {
        let batch = random_batch(n, d, prior, seed);
        let child = Mlp::new(d, &hidden, derive_seed(seed, 2)).unwrap();
        let parent = Mlp::new(d, &hidden, derive_seed(seed, 3)).unwrap();
        let (pos, bracket) = oracle_parts(&child, &batch, prior);
        if bracket < 0.0 {
            negative_brackets.set(negative_brackets.get() + 1);
        }
        let cons = oracle_consistency(&child, &parent, batch.features());
        let pairs = [
            (upu_risk(&child, &batch, SurrogateLoss::Sigmoid, prior).unwrap(), pos + bracket),
            (
                nnpu_risk(&child, &batch, SurrogateLoss::Sigmoid, prior).unwrap().total,
                pos + bracket.max(0.0),
            ),
            (consistency_risk(&child, &parent, batch.features()).unwrap(), cons),
            (
                adversarial_risk(&child, &parent, &batch, SurrogateLoss::Sigmoid, prior, lambda).unwrap(),
                pos + bracket.max(0.0) + lambda * cons,
            ),
        ];
        for (got, want) in pairs {
            let err = (got - want).abs();
            worst.set(worst.get().max(err));
            prop_assert!(err <= 1e-9, "got {got}, oracle {want}");
        }
        Ok(())
    });
    c.note(format!(
        "500 random batches of 2-16 rows ({} with negative bracket), max |error| {:.1e} (limit 1e-9)",
        negative_brackets.get(),
        worst.get()
    ));
    c.outcome()
}

// ---------------------------------------------------------------- criterion 2

const FD_STEP: f64 = 1e-5;
const FD_TOLERANCE: f64 = 1e-4;

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Largest relative error between `grads` and central differences of `f` over
/// every parameter of `model`.
fn mlp_fd_error(model: &Mlp, grads: &MlpGrads, f: impl Fn(&Mlp) -> f64) -> f64 {
    let mut worst = 0.0f64;
    for l in 0..model.n_layers() {
        let shape = model.weights()[l].dim();
        for i in 0..shape.0 {
            for j in 0..shape.1 {
                let eval = |h: f64| {
                    let mut m = model.clone();
                    m.weights_mut()[l][[i, j]] += h;
                    f(&m)
                };
                let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
                worst = worst.max(relative_error(grads.weights[l][[i, j]], numeric));
            }
        }
        for j in 0..shape.1 {
            let eval = |h: f64| {
                let mut m = model.clone();
                m.biases_mut()[l][j] += h;
                f(&m)
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(grads.biases[l][j], numeric));
        }
    }
    worst
}

fn fusion_params(net: &mut FusionNetwork) -> Vec<&mut f64> {
    let mut out: Vec<&mut f64> = Vec::new();
    for (w, b) in net.value_w.iter_mut().zip(net.value_b.iter_mut()) {
        out.extend(w.iter_mut());
        out.extend(b.iter_mut());
    }
    out.extend(net.gate_w.iter_mut());
    out.extend(net.gate_b.iter_mut());
    out.extend(net.head_w.iter_mut());
    out.extend(net.head_b.iter_mut());
    out
}

fn criterion_2() -> Outcome {
    let mut c = Checks::default();
    let worst = std::cell::RefCell::new([0.0f64; 6]);
    let bump = |k: usize, e: f64| {
        let mut w = worst.borrow_mut();
        w[k] = w[k].max(e);
    };

    let node = (any::<u64>(), 2usize..=10, 1usize..=4, widths(), 0.1f64..0.9, 0.1f64..2.0);
    property(&mut c, "node risk gradients", 120, node, |(seed, n, d, hidden, prior, lambda)| {
        let batch = random_batch(n, d, prior, seed);
        let model = generic_mlp(d, &hidden, derive_seed(seed, 2));
        let parent = generic_mlp(d, &hidden, derive_seed(seed, 3));
        // the non-negative clamp has a kink at bracket 0
        let bracket = upu_risk(&model, &batch, SurrogateLoss::Sigmoid, prior).unwrap()
            - nnpu_risk(&model, &batch, SurrogateLoss::Sigmoid, prior).unwrap().positive_part;
        prop_assume!(bracket.abs() > 1e-3);
        let configs = [
            (0, RiskConfig::upu(prior)),
            (1, RiskConfig::nnpu(prior)),
            (2, RiskConfig::adversarial(prior, lambda, &parent)),
        ];
        for (k, config) in configs {
            let (_, g) = risk_gradient(&model, &batch, &config, GradientPolicy::Exact).unwrap();
            let f = |m: &Mlp| match k {
                0 => upu_risk(m, &batch, SurrogateLoss::Sigmoid, prior).unwrap(),
                1 => nnpu_risk(m, &batch, SurrogateLoss::Sigmoid, prior).unwrap().total,
                _ => adversarial_risk(m, &parent, &batch, SurrogateLoss::Sigmoid, prior, lambda).unwrap(),
            };
            let e = mlp_fd_error(&model, &g, f);
            bump(k, e);
            prop_assert!(e <= FD_TOLERANCE, "risk {k}: relative error {e}");
        }
        Ok(())
    });

    let fusion = (any::<u64>(), 2usize..=10, 1usize..=4, proptest::collection::vec(1usize..=8, 1..=3), 1usize..=8);
    property(&mut c, "fusion risk gradient", 120, fusion, |(seed, n, d, path_widths, fw)| {
        let batch = random_batch(n, d, 0.4, seed);
        let models: Vec<Mlp> = path_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| generic_mlp(d, &[w], derive_seed(seed, 10 + i as u64)))
            .collect();
        let refs: Vec<&Mlp> = models.iter().collect();
        let q = path_representations(&refs, batch.features()).unwrap();
        let mut net = FusionNetwork::new(&path_widths, fw, derive_seed(seed, 4)).unwrap();
        let mut rng = seeded(derive_seed(seed, 5));
        for b in net.value_b.iter_mut() {
            b.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        }
        let value = |n: &FusionNetwork| {
            fusion_risk_gradient(n, &q, batch.labels(), 0.4, GradientPolicy::Exact).unwrap().0
        };
        let v = value(&net);
        prop_assume!(v.bracket.abs() > 1e-3);
        let (_, g) = fusion_risk_gradient(&net, &q, batch.labels(), 0.4, GradientPolicy::Exact).unwrap();
        let mut g = g;
        let analytic: Vec<f64> = fusion_params(&mut g).into_iter().map(|p| *p).collect();
        for (k, a) in analytic.iter().enumerate() {
            let eval = |h: f64| {
                let mut m = net.clone();
                *fusion_params(&mut m).into_iter().nth(k).unwrap() += h;
                value(&m).total
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let e = relative_error(*a, numeric);
            bump(3, e);
            prop_assert!(e <= FD_TOLERANCE, "fusion parameter {k}: relative error {e}");
        }
        Ok(())
    });

    let ridge = (any::<u64>(), 2usize..=12, 1usize..=6, 1usize..=4, 1e-3f64..2.0);
    property(&mut c, "ridge objective gradient", 120, ridge, |(seed, n, p, k, reg)| {
        let x = random_matrix(n, p, 2.0, seed);
        let y = random_matrix(n, k, 2.0, derive_seed(seed, 1));
        let w = random_matrix(n, 1, 1.0, derive_seed(seed, 2)).column(0).mapv(f64::abs);
        let fitted = fit_ridge(x.view(), y.view(), w.view(), reg).unwrap();
        // away from the optimum so the gradient is not trivially zero
        let mut r = fitted.clone();
        r.coef += &random_matrix(p, k, 0.5, derive_seed(seed, 3));
        r.intercept += 0.3;
        let (gc, gi) = r.objective_gradient(x.view(), y.view(), w.view()).unwrap();
        for i in 0..p {
            for j in 0..k {
                let eval = |h: f64| {
                    let mut m = r.clone();
                    m.coef[[i, j]] += h;
                    m.objective(x.view(), y.view(), w.view()).unwrap()
                };
                let e = relative_error(gc[[i, j]], (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
                bump(4, e);
                prop_assert!(e <= FD_TOLERANCE);
            }
        }
        for j in 0..k {
            let eval = |h: f64| {
                let mut m = r.clone();
                m.intercept[j] += h;
                m.objective(x.view(), y.view(), w.view()).unwrap()
            };
            let e = relative_error(gi[j], (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP));
            bump(4, e);
            prop_assert!(e <= FD_TOLERANCE);
        }
        // the closed-form fit is the minimizer
        let (g0, g0i) = fitted.objective_gradient(x.view(), y.view(), w.view()).unwrap();
        let scale = 1.0 + y.iter().map(|v| v.abs()).fold(0.0, f64::max) * w.sum();
        prop_assert!(g0.iter().chain(g0i.iter()).all(|g| g.abs() <= 1e-8 * scale));
        Ok(())
    });

    let coarse = (any::<u64>(), 2usize..=10, 1usize..=4, widths(), any::<bool>());
    property(&mut c, "coarse classifier gradient", 120, coarse, |(seed, n, d, hidden, balanced)| {
        let batch = random_batch(n, d, 0.5, seed);
        let positive: Vec<bool> = batch.labels().iter().map(|l| *l == PuLabel::Positive).collect();
        let model = generic_mlp(d, &hidden, derive_seed(seed, 2));
        let (_, g) = coarse_objective(&model, batch.features(), &positive, balanced).unwrap();
        let e = mlp_fd_error(&model, &g, |m| coarse_objective(m, batch.features(), &positive, balanced).unwrap().0);
        bump(5, e);
        prop_assert!(e <= FD_TOLERANCE, "relative error {e}");
        Ok(())
    });

    let w = worst.borrow();
    c.note(format!(
        "max relative error uPU {:.1e}, nnPU {:.1e}, adversarial {:.1e}, fusion {:.1e}, ridge {:.1e}, coarse {:.1e} (limit 1e-4)",
        w[0], w[1], w[2], w[3], w[4], w[5]
    ));
    c.outcome()
}

// ---------------------------------------------------------------- criterion 3

fn criterion_3() -> Outcome {
    let mut c = Checks::default();
    let spec = preset("gaussian-desk", None).unwrap().with_method(Method::Nnpu);
    let DataSource::Gaussian { separation, .. } = spec.source else {
        panic!("gaussian-desk must be a Gaussian source");
    };
    let s = &spec.sizes;
    c.require(
        separation == 4.0
            && s.train_prior == 0.5
            && s.labeled_positive == 100
            && s.unlabeled == 2000
            && s.test == 2000
            && spec.network.epochs <= 100,
        "preset does not match the required setting",
    );
    let record = run_experiment(&spec).unwrap();
    let accs: Vec<f64> = record.runs.iter().map(|r| r.accuracy).collect();
    for (seed, a) in record.seeds.iter().zip(&accs) {
        c.require(*a >= 0.9, format!("seed {seed} accuracy {a:.4} < 0.9"));
    }
    c.note(format!(
        "nnPU test accuracy over {} seeds: {} (mean {:.4}, need each >= 0.9)",
        accs.len(),
        accs.iter().map(|a| format!("{a:.4}")).collect::<Vec<_>>().join(", "),
        record.mean.accuracy
    ));
    c.outcome()
}

// ---------------------------------------------------------------- criteria 4, 5

fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

/// The NSL-KDD desk preset if its prepared tables exist.
fn nsl_spec() -> Result<ExperimentSpec, String> {
    let dir = data_dir();
    let spec = preset("nsl-kdd-desk", Some(&dir)).map_err(|e| e.to_string())?;
    if let DataSource::Csv { train, test, schema } = &spec.source {
        for p in [train, test, schema] {
            if !p.exists() {
                return Err(format!(
                    "NSL-KDD tables not found ({} missing); download KDDTrain+.txt and KDDTest+.txt and run \
                     `putree prepare --raw <dir> --out {}`",
                    p.display(),
                    dir.display()
                ));
            }
        }
    }
    Ok(spec)
}

fn criterion_4() -> Outcome {
    let mut c = Checks::default();
    let spec = match nsl_spec() {
        Ok(s) => s,
        Err(e) => {
            c.require(false, e);
            return c.outcome();
        }
    };
    let data = load_source(&spec.source).unwrap();
    let nn = run_experiment_with(&spec.with_method(Method::Nnpu), &data, None).unwrap();
    let naive = run_experiment_with(&spec.with_method(Method::Naive), &data, None).unwrap();
    let acc = nn.mean.accuracy;
    c.require((0.82..=0.95).contains(&acc), format!("nnPU mean accuracy {acc:.4} outside [0.82, 0.95]"));
    let lower = naive.runs.iter().zip(&nn.runs).filter(|(a, b)| a.recall < b.recall).count();
    c.require(lower >= 4, format!("naive recall below nnPU in only {lower} of 5 seeds"));
    c.note(format!(
        "nnPU accuracy {:.2} ({:.2}); naive recall < nnPU recall in {lower}/5 seeds",
        100.0 * acc,
        100.0 * nn.std.accuracy
    ));
    c.outcome()
}

/// F2 of the full tree against nnPU and F1 against every variant, in points.
fn ordering(c: &mut Checks, name: &str, spec: &ExperimentSpec) {
    let data = load_source(&spec.source).unwrap();
    let run = |m: Method| run_experiment_with(&spec.with_method(m), &data, None).unwrap();
    let nn = run(Method::Nnpu);
    let tree = run(Method::Putree);
    let variants: Vec<MetricsRecord> = Method::VARIANTS.into_iter().map(run).collect();
    let pts = |v: f64| 100.0 * v;
    c.require(
        pts(tree.mean.f2) >= pts(nn.mean.f2) - 1.0,
        format!("{name}: PUtree F2 {:.2} < nnPU F2 {:.2} - 1", pts(tree.mean.f2), pts(nn.mean.f2)),
    );
    for v in &variants {
        c.require(
            pts(tree.mean.f1) >= pts(v.mean.f1) - 1.0,
            format!("{name}: PUtree F1 {:.2} < {} F1 {:.2} - 1", pts(tree.mean.f1), v.label, pts(v.mean.f1)),
        );
    }
    c.note(format!(
        "{name}: F2 putree {:.2} vs nnpu {:.2}; F1 putree {:.2}, {}",
        pts(tree.mean.f2),
        pts(nn.mean.f2),
        pts(tree.mean.f1),
        variants
            .iter()
            .map(|v| format!("{} {:.2}", v.label, pts(v.mean.f1)))
            .collect::<Vec<_>>()
            .join(", ")
    ));
}

fn criterion_5() -> Outcome {
    let mut c = Checks::default();
    match nsl_spec() {
        Ok(spec) => ordering(&mut c, "nsl-kdd", &spec),
        Err(e) => c.require(false, e),
    }
    let diabetes = preset("diabetes-desk", None).unwrap();
    assert_eq!((diabetes.sizes.train_prior, diabetes.sizes.labeled_positive), (0.124, 100));
    ordering(&mut c, "diabetes-analog", &diabetes);
    c.outcome()
}

// ---------------------------------------------------------------- criterion 6

/// Synthetic positives from mask-recovery augmentation of `data`, with the row
/// of `data` each was generated from.
fn augmented_positives(data: &PuDataset, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let scout = train_pu(
        data,
        &RiskConfig::nnpu(data.class_prior()),
        &TrainHyper {
            epochs: 5,
            hidden: vec![32, 32],
            batch_size: 256,
            learning_rate: 1e-3,
            seed: derive_seed(seed, 1),
            ..TrainHyper::default()
        },
    )
    .unwrap();
    let importance = rank_features(
        &scout,
        data.features(),
        ImportanceMethod::Explainer,
        &ExplainBudget::default(),
        derive_seed(seed, 2),
    )
    .unwrap();
    let mask = top_features(&importance, mask_count(data.dim(), 0.15));
    let mut plan = fit_recovery(data.features(), &mask, 0.1, 1e-3).unwrap();
    if AugmentConfig::default().recovery == RecoveryFit::ByLabel {
        plan = plan.with_positive_recovery(data, 1e-3).unwrap();
    }
    let (aug, sources) = augment_traced(data, &plan, 1.0, derive_seed(seed, 3)).unwrap();
    let rows: Vec<usize> = (data.n_rows()..aug.n_rows())
        .filter(|&r| aug.labels()[r] == PuLabel::Positive)
        .collect();
    let src = rows.iter().map(|&r| sources[r - data.n_rows()]).collect();
    (aug.features().select(Axis(0), &rows), src)
}

fn sample_std(v: &[f64]) -> f64 {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

fn criterion_6() -> Outcome {
    let mut c = Checks::default();
    for prior in [0.124, 0.3, 0.5] {
        let mut with = Vec::new();
        let mut without = Vec::new();
        for seed in 0..20u64 {
            let (raw, _) = synth_gaussian_pu(100, 2000, prior, 2, 4.0, 1000 + seed).unwrap();
            let data = raw.standardized(&Standardizer::fit(raw.features()).unwrap()).unwrap();
            let hyper = PriorHyper {
                seed: derive_seed(seed, 5),
                ..PriorHyper::default()
            };
            let (extra, sources) = augmented_positives(&data, seed);
            with.push(estimate_prior_traced(&data, extra.view(), Some(&sources), &hyper).unwrap().prior);
            without.push(estimate_prior(&data, Array2::zeros((0, 2)).view(), &hyper).unwrap().prior);
        }
        let worst = with.iter().map(|p| (p - prior).abs()).fold(0.0, f64::max);
        let (s_with, s_without) = (sample_std(&with), sample_std(&without));
        c.require(worst <= 0.05, format!("prior {prior}: worst |error| {worst:.4} > 0.05"));
        c.require(
            s_with <= s_without,
            format!("prior {prior}: std with augmentation {s_with:.4} > without {s_without:.4}"),
        );
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let worst_without = without.iter().map(|p| (p - prior).abs()).fold(0.0, f64::max);
        c.note(format!(
            "pi={prior}: with augmentation mean {:.4} worst {worst:.4} std {s_with:.4}; without mean {:.4} worst {worst_without:.4} std {s_without:.4}",
            mean(&with),
            mean(&without)
        ));
    }
    c.outcome()
}

// ---------------------------------------------------------------- criterion 7

fn tiny_tree_config(seed: u64) -> TreeConfig {
    let mut cfg = TreeConfig {
        max_depth: 2,
        min_node_size: 60,
        scout_epochs: 2,
        seed,
        ..TreeConfig::default()
    };
    cfg.node = TrainHyper {
        epochs: 6,
        batch_size: 128,
        learning_rate: 1e-3,
        hidden: vec![8, 8],
        ..TrainHyper::default()
    };
    cfg.prior.epochs = 5;
    cfg.prior.hidden = vec![8];
    cfg.fusion.epochs = 3;
    cfg.fusion.batch_size = 128;
    cfg.explain.anchors = 4;
    cfg.explain.pool_size = 80;
    cfg.explain.neighbors = 40;
    cfg
}

fn criterion_7() -> Outcome {
    let mut c = Checks::default();

    let trees = (any::<u64>(), 2usize..=4, 300usize..600, 0.2f64..0.6);
    property(&mut c, "tree partition and siblings", 6, trees, |(seed, d, n_u, prior)| {
        let (data, _) = synth_gaussian_pu(40, n_u, prior, d, 3.0, seed).unwrap();
        let tree = build_tree(&data, &tiny_tree_config(seed)).unwrap();
        tree.audit(data.features()).map_err(|e| TestCaseError::fail(e.to_string()))?;
        for n in &tree.nodes {
            if let Some(s) = n.sibling {
                prop_assert_eq!(tree.nodes[s].sibling, Some(n.id));
                prop_assert_eq!(tree.nodes[s].parent, n.parent);
            }
            prop_assert_eq!(n.sibling.is_some(), n.parent.is_some());
            if n.is_leaf() {
                prop_assert!(n.leaf_reason.is_some(), "leaf {} has no reason", n.id);
                prop_assert!(tree.fusion.contains_key(&n.id));
            }
            // every row a node owns is routed through it
            for &r in &n.rows {
                prop_assert!(leaf_path(&tree, data.features().row(r)).unwrap().contains(&n.id));
            }
        }
        Ok(())
    });

    // each termination rule triggered by a constructed input
    let (data, _) = synth_gaussian_pu(40, 400, 0.4, 2, 3.0, 7).unwrap();
    let depth0 = build_tree(&data, &TreeConfig { max_depth: 0, ..tiny_tree_config(1) }).unwrap();
    c.require(
        depth0.nodes.len() == 1 && depth0.root().leaf_reason == Some(LeafReason::MaxDepth),
        "depth bound did not stop at the root",
    );
    let small = build_tree(&data, &TreeConfig { min_node_size: 10_000, ..tiny_tree_config(1) }).unwrap();
    c.require(
        small.nodes.len() == 1 && small.root().leaf_reason == Some(LeafReason::TooSmall),
        "size bound did not stop at the root",
    );
    let pure = pure_child_tree();
    c.require(
        pure.nodes.iter().any(|n| n.leaf_reason == Some(LeafReason::Pure) && n.n_positive == 0),
        "no pure leaf where every labeled positive lies on one side",
    );
    property(&mut c, "leaf rule", 300, (0usize..5, 0usize..500, 0usize..50, 1usize..5, 2usize..300), |(depth, n, p, h, s)| {
        let cfg = TreeConfig { max_depth: h, min_node_size: s, ..TreeConfig::default() };
        let want = if p == 0 {
            Some(LeafReason::Pure)
        } else if depth >= h {
            Some(LeafReason::MaxDepth)
        } else if n < s {
            Some(LeafReason::TooSmall)
        } else {
            None
        };
        prop_assert_eq!(leaf_reason(depth, n, p, &cfg), want);
        Ok(())
    });

    // frozen path: fusion leaves every node model untouched
    let cfg = tiny_tree_config(3);
    let fused = build_tree(&data, &cfg).unwrap();
    let plain = build_tree(&data, &TreeConfig { use_fusion: false, ..cfg }).unwrap();
    c.require(
        fused.nodes.iter().zip(&plain.nodes).all(|(a, b)| a.model == b.model) && plain.fusion.is_empty(),
        "node models differ with and without fusion training",
    );
    let path: Vec<Mlp> = fused.path_to(fused.leaves()[0]).iter().map(|&i| fused.nodes[i].model.clone()).collect();
    let before = path.clone();
    let refs: Vec<&Mlp> = path.iter().collect();
    let std = data.standardized(&fused.scaler).unwrap();
    train_fusion(&refs, &std, 0.4, &FusionHyper { epochs: 2, batch_size: 64, ..FusionHyper::default() }).unwrap();
    c.require(path == before, "train_fusion changed a path model");

    property(&mut c, "gate range", 200, (any::<u64>(), 1usize..=4, 1usize..=8, -50.0f64..50.0), |(seed, depth, w, scale)| {
        let widths: Vec<usize> = (0..depth).map(|i| 1 + (w + i) % 8).collect();
        let net = FusionNetwork::new(&widths, w, seed).unwrap();
        let q: Vec<Array2<f64>> = widths
            .iter()
            .enumerate()
            .map(|(i, &h)| random_matrix(5, h, 1.0, derive_seed(seed, i as u64)).mapv(|v| (v * scale).max(0.0)))
            .collect();
        let gates = net.forward_q(&q).unwrap().gates;
        prop_assert!(gates.iter().all(|&g| g > 0.0 && g < 1.0));
        Ok(())
    });
    let gate_values: Vec<f64> = (0..data.n_rows())
        .step_by(37)
        .filter_map(|r| fused.gates(data.features().row(r)).unwrap())
        .flat_map(|g| g.to_vec())
        .collect();
    c.require(
        !gate_values.is_empty() && gate_values.iter().all(|&g| g > 0.0 && g < 1.0),
        "tree gate outside (0, 1)",
    );

    let aug = (any::<u64>(), 1usize..30, 1usize..150, 0.0f64..3.0, 2usize..5);
    property(&mut c, "prior-preserving augmentation", 150, aug, |(seed, n_p, n_u, m, d)| {
        let mut labels = vec![PuLabel::Positive; n_p];
        labels.extend(vec![PuLabel::Unlabeled; n_u]);
        let n = n_p + n_u;
        let data = PuDataset::new(random_matrix(n, d, 1.0, seed), labels, 0.3, (0..d).map(|i| format!("x{i}")).collect())
            .unwrap();
        let plan = fit_recovery(data.features(), &[0], 0.1, 1e-3)
            .unwrap()
            .with_positive_recovery(&data, 1e-3)
            .unwrap();
        let out = augment(&data, &plan, m, seed).unwrap();
        let frac = |x: &PuDataset| x.n_positive() as f64 / x.n_rows() as f64;
        prop_assert!((frac(&out) - frac(&data)).abs() <= 1.0 / n as f64 + 1e-12);
        prop_assert_eq!(out.class_prior(), data.class_prior());
        let head = out.features().slice(ndarray::s![..n, ..]).to_owned();
        prop_assert_eq!(head, data.features().to_owned());
        // masked column holds recovery output, not a copy of a source row
        for r in n..out.n_rows() {
            let label = out.labels()[r];
            let recovered = plan.recover_for(label, out.features().slice(ndarray::s![r..r + 1, ..])).unwrap();
            prop_assert_eq!(out.features()[[r, 0]], recovered[[0, 0]]);
        }
        Ok(())
    });

    property(&mut c, "KL and balance terms", 500, (0.0f64..=1.0, 0.0f64..=1.0, 1usize..10_000, 1usize..10_000), |(p, q, a, b)| {
        prop_assert!(kl_two_bin(p, q) >= 0.0);
        prop_assert!(kl_two_bin(p, p).abs() <= 1e-15);
        let bal = balance_term(a, b);
        prop_assert!(bal > 0.0 && bal < 1.0);
        prop_assert_eq!(bal, balance_term(b, a));
        prop_assert_eq!(balance_term(a, a), 0.5);
        Ok(())
    });
    // identical children of equal size: KL 0, balance 0.5, score -0.5
    let x = Array2::from_shape_fn((10, 1), |(i, _)| i as f64);
    let probs = Array1::from_elem(10, 0.3);
    let s = score_split(Split { feature: 0, threshold: 4.5 }, x.view(), probs.view(), 1).unwrap();
    c.require(s.total == -0.5 && s.kl == 0.0 && s.sizes == [5, 5], format!("symmetric identical split scored {}", s.total));

    property(&mut c, "boundary routing", 300, (-1e6f64..1e6, 0usize..4), |(t, f)| {
        let split = Split { feature: f, threshold: t };
        let mut x = Array1::zeros(4);
        x[f] = t;
        prop_assert_eq!(split.side(x.view()), Side::LessEq);
        x[f] = f64::from_bits(t.to_bits()).next_up();
        prop_assert_eq!(split.side(x.view()), Side::Greater);
        Ok(())
    });

    c.note("tree audit, sibling links, three leaf rules, frozen path, gate range, augmentation prior, KL/balance and boundary routing hold");
    c.outcome()
}

/// Positives only at `x0 > 0`, so the best split on the single feature leaves a
/// positive-free side.
fn pure_child_tree() -> PuTree {
    let mut rng = seeded(11);
    let n = 600;
    let mut x = Array2::zeros((n, 1));
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let v: f64 = rng.random_range(-1.0..1.0);
        x[[i, 0]] = v;
        labels.push(if v > 0.5 && i % 3 == 0 { PuLabel::Positive } else { PuLabel::Unlabeled });
    }
    let data = PuDataset::new(x, labels, 0.3, vec!["x0".into()]).unwrap();
    build_tree(&data, &TreeConfig { max_depth: 3, min_node_size: 40, ..tiny_tree_config(5) }).unwrap()
}

// ---------------------------------------------------------------- criterion 8

fn criterion_8() -> Outcome {
    let mut c = Checks::default();
    let smoke = preset("smoke", None).unwrap();
    for m in Method::ALL {
        let spec = smoke.with_method(m);
        let a = serde_json::to_string(&run_experiment(&spec).unwrap()).unwrap();
        let b = serde_json::to_string(&run_experiment(&spec).unwrap()).unwrap();
        c.require(a == b, format!("{} metric records differ between identical runs", m.name()));
    }
    // a desk-sized tree on the diabetes analog, one seed
    let desk = preset("diabetes-desk", None).unwrap().with_method(Method::Putree).with_runs(7, 1);
    let a = run_experiment(&desk).unwrap();
    let b = run_experiment(&desk).unwrap();
    let bits = |r: &MetricsRecord| r.runs.iter().flat_map(|m| m.values()).map(f64::to_bits).collect::<Vec<_>>();
    c.require(bits(&a) == bits(&b), "desk tree metrics differ between identical runs");
    c.note(format!("all {} methods on the smoke preset and a desk-sized tree repeat bit-identically", Method::ALL.len()));
    c.outcome()
}

// ---------------------------------------------------------------- driver

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [(&str, &str, fn() -> Outcome); 8] = [
        ("1", "risk oracles", criterion_1),
        ("2", "gradient suite", criterion_2),
        ("3", "nnPU sanity", criterion_3),
        ("4", "NSL-KDD benchmark band", criterion_4),
        ("5", "PUtree ordering", criterion_5),
        ("6", "prior estimation", criterion_6),
        ("7", "structural invariants", criterion_7),
        ("8", "determinism", criterion_8),
    ];
    let mut failed = Vec::new();
    for (id, name, run) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| Outcome {
            pass: false,
            detail: format!(
                "panicked: {}",
                e.downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default()
            ),
        });
        println!(
            "criterion {id} {name}: {} [{:.0}s] {}",
            if outcome.pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64(),
            outcome.detail
        );
        if !outcome.pass {
            failed.push(id);
        }
    }
    if !failed.is_empty() {
        println!("acceptance: failed criteria {}", failed.join(", "));
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}

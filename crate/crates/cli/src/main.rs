//! `putree` command-line harness.
//!
//! Exit codes: 0 success, 1 configuration or usage error, 2 runtime failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use putree::dataset::{
    load_csv, synth_community_labeled, synth_gaussian_labeled, write_labeled_csv, CategoricalEncoding,
    CommunitySynth, LabeledDataset, Schema,
};
use putree::harness::{
    draw_run_data, evaluate_predictions, format_ablation_table, format_table, load_source, preset, prepare_nsl_kdd,
    run_experiment_with, train_method, DataSource, ExperimentSpec, Method, MetricsRecord, TrainedModel, PRESETS,
};
use putree::tree::export_tree;

#[derive(Parser, Debug)]
#[command(name = "putree", version, about = "Positive-unlabeled community trees: training, evaluation and ablations")]
struct Cli {
    /// Directory holding prepared benchmark tables.
    #[arg(long, global = true, env = "PUTREE_DATA_DIR")]
    data_dir: Option<PathBuf>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Convert raw NSL-KDD files (KDDTrain+.txt, KDDTest+.txt) into CSVs and a schema.
    Prepare {
        #[arg(long)]
        raw: PathBuf,
        /// Output directory; defaults to the data directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Encoding::Onehot)]
        encoding: Encoding,
    },
    /// Write a synthetic labeled train/test pair and its schema.
    Synth(SynthArgs),
    /// Print the full configuration document of a preset or config file.
    Config {
        #[command(flatten)]
        spec: SpecArgs,
    },
    /// Train one model on the training draw of `--seed` and save it.
    Train {
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a saved model on the test draw of `--seed`, or on a CSV table.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[command(flatten)]
        spec: SpecArgs,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Labeled CSV to evaluate on instead of the experiment's test draw.
        #[arg(long, requires = "schema")]
        test: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Also write the metrics record as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run every seed of an experiment and report mean (std).
    Run {
        #[command(flatten)]
        spec: SpecArgs,
        /// Directory for per-run metrics and models.
        #[arg(long)]
        artifacts: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Run the full tree and its ablation variants (or one variant).
    Ablate {
        #[command(flatten)]
        spec: SpecArgs,
        /// One of I, II, III, IV; all four plus the full tree when omitted.
        #[arg(long)]
        variant: Option<String>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Export the tree structure of a saved tree model.
    ExportTree {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "dot")]
        format: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct SpecArgs {
    /// Named preset (see `putree config --help`).
    #[arg(long, conflicts_with = "config")]
    preset: Option<String>,
    /// TOML configuration document.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the method: naive, upu, nnpu, putree, variant-i .. variant-iv.
    #[arg(long)]
    method: Option<String>,
    /// Override the number of runs (seeds first-seed, first-seed+1, ...).
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Community)]
    kind: SynthKind,
    #[arg(long, default_value_t = 20_000)]
    train_rows: usize,
    #[arg(long, default_value_t = 4_000)]
    test_rows: usize,
    /// Positive fraction of both tables.
    #[arg(long, default_value_t = 0.124)]
    prior: f64,
    #[arg(long)]
    dimension: Option<usize>,
    /// Gaussian mean separation.
    #[arg(long, default_value_t = 4.0)]
    separation: f64,
    /// Community positive shift.
    #[arg(long, default_value_t = 2.0)]
    shift: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Encoding {
    Onehot,
    Ordinal,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum SynthKind {
    Gaussian,
    Community,
}

/// Error tagged with the exit code it maps to.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

trait Phase<T> {
    fn config_err(self) -> Result<T, Failure>;
    fn runtime_err(self) -> Result<T, Failure>;
}

impl<T, E: Into<anyhow::Error>> Phase<T> for Result<T, E> {
    fn config_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Config(e.into()))
    }
    fn runtime_err(self) -> Result<T, Failure> {
        self.map_err(|e| Failure::Runtime(e.into()))
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let data_dir = cli.data_dir.as_deref();
    match cli.command {
        Command::Prepare { raw, out, encoding } => {
            let out = out
                .or_else(|| data_dir.map(Path::to_path_buf))
                .ok_or_else(|| anyhow!("give --out or a data directory"))
                .config_err()?;
            let encoding = match encoding {
                Encoding::Onehot => CategoricalEncoding::Onehot,
                Encoding::Ordinal => CategoricalEncoding::Ordinal,
            };
            let written = prepare_nsl_kdd(&raw, &out, encoding).config_err()?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Synth(args) => synth(&args)?,
        Command::Config { spec } => {
            let spec = resolve_spec(&spec, data_dir)?;
            print!("{}", toml::to_string(&spec).config_err()?);
        }
        Command::Train { spec, seed, out } => {
            let spec = resolve_spec(&spec, data_dir)?;
            let data = load_source(&spec.source).config_err()?;
            let (train, _) = draw_run_data(&spec, &data, seed).runtime_err()?;
            let model = train_method(&spec, &train, seed).runtime_err()?;
            fs::write(&out, model.to_json().runtime_err()?)
                .with_context(|| format!("writing {}", out.display()))
                .runtime_err()?;
            println!("{} model written to {}", spec.method.name(), out.display());
        }
        Command::Evaluate {
            model,
            spec,
            seed,
            test,
            schema,
            json,
        } => {
            let fitted = read_model(&model)?;
            let test = match (test, schema) {
                (Some(t), Some(s)) => {
                    let schema = Schema::from_path(&s).config_err()?;
                    load_csv(&t, &schema).config_err()?
                }
                _ => {
                    let spec = resolve_spec(&spec, data_dir)?;
                    let data = load_source(&spec.source).config_err()?;
                    draw_run_data(&spec, &data, seed).runtime_err()?.1
                }
            };
            let predicted = fitted.predict(test.features()).runtime_err()?;
            let metrics = evaluate_predictions(&predicted, &test).runtime_err()?;
            let record = MetricsRecord::aggregate(model_label(&fitted), vec![seed], vec![metrics]);
            report(&[record], json.as_deref(), false)?;
        }
        Command::Run { spec, artifacts, json } => {
            let spec = resolve_spec(&spec, data_dir)?;
            let data = load_source(&spec.source).config_err()?;
            let record = run_experiment_with(&spec, &data, artifacts.as_deref()).runtime_err()?;
            report(&[record], json.as_deref(), false)?;
        }
        Command::Ablate { spec, variant, json } => {
            let spec = resolve_spec(&spec, data_dir)?;
            let methods: Vec<Method> = match variant {
                Some(v) => {
                    let m: Method = v.parse().config_err()?;
                    if !Method::VARIANTS.contains(&m) {
                        return Err(Failure::Config(anyhow!("`{v}` is not an ablation variant")));
                    }
                    vec![m]
                }
                None => std::iter::once(Method::Putree).chain(Method::VARIANTS).collect(),
            };
            let data = load_source(&spec.source).config_err()?;
            let records = methods
                .into_iter()
                .map(|m| run_experiment_with(&spec.with_method(m), &data, None))
                .collect::<Result<Vec<_>, _>>()
                .runtime_err()?;
            report(&records, json.as_deref(), true)?;
        }
        Command::ExportTree { model, format, out } => {
            let TrainedModel::Tree(tree) = read_model(&model)? else {
                return Err(Failure::Config(anyhow!("{} does not hold a tree model", model.display())));
            };
            let text = export_tree(&tree, &format).config_err()?;
            match out {
                Some(p) => fs::write(&p, text).runtime_err()?,
                None => println!("{text}"),
            }
        }
    }
    Ok(())
}

fn resolve_spec(args: &SpecArgs, data_dir: Option<&Path>) -> Result<ExperimentSpec, Failure> {
    let mut spec = match (&args.preset, &args.config) {
        (Some(name), None) => preset(name, data_dir).config_err()?,
        (None, Some(path)) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))
                .config_err()?;
            let mut spec: ExperimentSpec = toml::from_str(&text)
                .with_context(|| format!("parsing {}", path.display()))
                .config_err()?;
            if let (DataSource::Csv { train, test, schema }, Some(dir)) = (&mut spec.source, data_dir) {
                for p in [train, test, schema] {
                    if p.is_relative() {
                        *p = dir.join(&*p);
                    }
                }
            }
            spec
        }
        _ => {
            return Err(Failure::Config(anyhow!(
                "give --preset ({}) or --config",
                PRESETS.join(", ")
            )))
        }
    };
    if let Some(m) = &args.method {
        spec.method = m.parse().config_err()?;
    }
    if let Some(n) = args.runs {
        spec = spec.with_runs(args.first_seed, n);
    }
    spec.validate().config_err()?;
    Ok(spec)
}

fn read_model(path: &Path) -> Result<TrainedModel, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .config_err()?;
    TrainedModel::from_json(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .config_err()
}

fn model_label(m: &TrainedModel) -> &'static str {
    match m {
        TrainedModel::Naive(_) => "naive",
        TrainedModel::Network { .. } => "network",
        TrainedModel::Tree(_) => "tree",
    }
}

fn report(records: &[MetricsRecord], json: Option<&Path>, ablation: bool) -> Result<(), Failure> {
    if ablation {
        print!("{}", format_ablation_table(records));
    } else {
        print!("{}", format_table(records));
    }
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(records).runtime_err()?;
        fs::write(path, text)
            .with_context(|| format!("writing {}", path.display()))
            .runtime_err()?;
    }
    Ok(())
}

fn synth(args: &SynthArgs) -> Result<(), Failure> {
    if !(0.0..=1.0).contains(&args.prior) {
        return Err(Failure::Config(anyhow!("prior {} outside [0, 1]", args.prior)));
    }
    let draw = |n: usize, seed: u64| -> putree::Result<LabeledDataset> {
        match args.kind {
            SynthKind::Gaussian => {
                synth_gaussian_labeled(n, args.prior, args.dimension.unwrap_or(2), args.separation, seed)
            }
            SynthKind::Community => {
                let cfg = CommunitySynth {
                    prior: args.prior,
                    shift: args.shift,
                    dimension: args.dimension.unwrap_or(CommunitySynth::default().dimension),
                    ..CommunitySynth::default()
                };
                synth_community_labeled(&cfg, n, seed)
            }
        }
    };
    let train = draw(args.train_rows, putree::rng::derive_seed(args.seed, 1)).config_err()?;
    let test = draw(args.test_rows, putree::rng::derive_seed(args.seed, 2)).config_err()?;
    fs::create_dir_all(&args.out).runtime_err()?;
    for (name, table) in [("train.csv", &train), ("test.csv", &test)] {
        let path = args.out.join(name);
        let file = fs::File::create(&path)
            .with_context(|| format!("creating {}", path.display()))
            .runtime_err()?;
        write_labeled_csv(std::io::BufWriter::new(file), table).runtime_err()?;
        println!("{}", path.display());
    }
    let schema_path = args.out.join("schema.toml");
    fs::write(&schema_path, Schema::labeled().to_toml_string().runtime_err()?).runtime_err()?;
    println!("{}", schema_path.display());
    Ok(())
}

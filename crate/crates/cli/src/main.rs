use std::cell::RefCell;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use distval::augment::{default_augmentor_set, load_augmentor_specs, train_augmented, SamplingGranularity};
use distval::classifier::{train, Model, ModelRecord, TrainConfig, Weighting};
use distval::continual::{run_stream, PosteriorTrajectory, StreamStep};
use distval::datamodel::{load_dataset_with_classes, save_dataset, Dataset, Format, Source, SourceCollection};
use distval::harness::{
    evaluate, pearson, run_seeds, to_json_string, Check, ExperimentConfig, ExperimentReport, Scenario,
};
use distval::synth::{corrupt_sources, mix, split_sources, split_stream, GaussianMixture, NoiseSpec};
use distval::transferability::{etran_energy, leep, logme, neg_mmd, KernelSpec, Measure, TransferabilityScore};
use distval::valuation::{
    annotator_scores, augmentation_valuation, build_reference, tune_tau, Prior, ReferenceMode, ReferenceSet,
    SourceScore, Tau, TauCandidate, Valuation, ValuationRecipe,
};

#[derive(Parser)]
#[command(name = "distval", version, about = "Data distribution valuation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Convert a dataset between csv and ddvm.
    Convert(ConvertArgs),
    /// Train a softmax-regression model on one or more sources.
    Train(TrainArgs),
    /// Compute one transferability score.
    Score(ScoreArgs),
    /// Value a directory of sources against a reference set.
    Value(ValueArgs),
    /// Value a stream of per-step source directories.
    Continual(ContinualArgs),
    /// Value augmentors with a universal model.
    Augment(AugmentArgs),
    /// Generate a synthetic noisy-annotator task.
    Synth(SynthArgs),
    /// Run a scenario over several seeds.
    Experiment(ExperimentArgs),
    /// Pearson correlation of two vectors or of a report's weightings.
    Correlate(CorrelateArgs),
}

#[derive(Args)]
struct TrainOpts {
    #[arg(long, default_value_t = 0.5)]
    lr: f64,
    #[arg(long, default_value_t = 300)]
    iterations: usize,
    #[arg(long, default_value_t = 1e-4)]
    l2: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    batch_size: Option<usize>,
}

impl TrainOpts {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            iterations: self.iterations,
            l2: self.l2,
            seed: self.seed,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Args)]
struct ConvertArgs {
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Output format.
    #[arg(long)]
    format: Format,
    /// Class count for csv input.
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct TrainArgs {
    /// Directory of source files.
    #[arg(long, conflicts_with = "data")]
    sources: Option<PathBuf>,
    /// Individual dataset files, each one source.
    #[arg(long, num_args = 1..)]
    data: Vec<PathBuf>,
    /// `uniform` or a valuation JSON file.
    #[arg(long, default_value = "uniform")]
    weights: String,
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ScoreArgs {
    #[arg(long)]
    measure: Measure,
    /// Model JSON; required by leep, logme and etran.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Target (reference) dataset.
    #[arg(long)]
    data: PathBuf,
    /// Sample set compared with `--data` by mmd and cmmd.
    #[arg(long)]
    sample: Option<PathBuf>,
    /// Fixed RBF bandwidth; the median heuristic otherwise.
    #[arg(long)]
    bandwidth: Option<f64>,
    #[arg(long)]
    classes: Option<usize>,
}

#[derive(Args)]
struct ValueArgs {
    #[arg(long)]
    sources: PathBuf,
    /// Reference set; not needed in union mode.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long, default_value = "leep")]
    measure: Measure,
    /// `quick`, `best` or a positive number.
    #[arg(long, default_value = "quick")]
    tau: Tau,
    /// `uniform` or a JSON array file.
    #[arg(long, default_value = "uniform")]
    prior: String,
    /// `labeled`, `unlabeled` or `union`.
    #[arg(long, default_value = "labeled")]
    reference_mode: ReferenceMode,
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ContinualArgs {
    /// Directory holding `step_1/`, `step_2/`, … source directories.
    #[arg(long)]
    stream: PathBuf,
    #[arg(long)]
    reference: PathBuf,
    #[arg(long, default_value = "logme")]
    measure: Measure,
    /// `quick` or a positive number.
    #[arg(long, default_value = "quick")]
    tau: Tau,
    #[arg(long, default_value = "uniform")]
    prior: String,
    /// Iteration budget of the per-step models.
    #[arg(long, default_value_t = 100)]
    valuation_iterations: usize,
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    train: TrainOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AugmentArgs {
    #[arg(long)]
    train: PathBuf,
    /// Augmentor-set JSON; the built-in 16-augmentor set otherwise.
    #[arg(long)]
    augmentors: Option<PathBuf>,
    #[arg(long)]
    universal: PathBuf,
    #[arg(long, default_value = "leep")]
    measure: Measure,
    #[arg(long, default_value = "quick")]
    tau: Tau,
    #[arg(long, default_value = "uniform")]
    prior: String,
    /// Seed shared by all random augmentors during valuation.
    #[arg(long, default_value_t = 0)]
    augment_seed: u64,
    /// Also train a model with augmentors drawn from the posterior.
    #[arg(long)]
    model_out: Option<PathBuf>,
    #[arg(long, default_value = "per-batch")]
    granularity: SamplingGranularity,
    #[arg(long)]
    classes: Option<usize>,
    #[command(flatten)]
    train_opts: TrainOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    classes: usize,
    #[arg(long, default_value_t = 20)]
    dim: usize,
    /// Rows per class per source.
    #[arg(long, default_value_t = 100)]
    per_class: usize,
    #[arg(long, default_value_t = 5)]
    sources: usize,
    /// `linear` (ε_i = i/M) or a comma-separated list.
    #[arg(long, default_value = "linear")]
    noise: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 3.5)]
    separation: f64,
    #[arg(long, default_value_t = 100)]
    reference_per_class: usize,
    #[arg(long, default_value_t = 500)]
    test_per_class: usize,
    /// Also write a stream of this many steps with per-step noise permutation.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long, default_value = "ddvm")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    scenario: Scenario,
    /// Inclusive range `a..b` or a comma-separated list.
    #[arg(long, default_value = "0..9")]
    seeds: String,
    /// JSON object merged over the scenario defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    measure: Option<Measure>,
    #[arg(long)]
    tau: Option<Tau>,
    #[arg(long)]
    reference_mode: Option<ReferenceMode>,
    /// Exit with status 2 when a threshold fails.
    #[arg(long)]
    assert: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CorrelateArgs {
    /// Experiment output to read.
    #[arg(long, conflicts_with_all = ["x", "y"])]
    report: Option<PathBuf>,
    /// Weighting correlated with per-source accuracies.
    #[arg(long, default_value = "gbv")]
    method: String,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    x: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    y: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ValueReport {
    measure: Measure,
    reference_mode: ReferenceMode,
    valuation: Valuation,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    tau_search: Vec<TauCandidate>,
    seconds_per_source: Vec<f64>,
}

#[derive(Serialize)]
struct ContinualReport {
    measure: Measure,
    tau: f64,
    trajectory: PosteriorTrajectory,
}

#[derive(Serialize, Deserialize)]
struct ExperimentOutput {
    scenario: Scenario,
    seeds: Vec<u64>,
    passed: bool,
    checks: Vec<Check>,
    reports: Vec<ExperimentReport>,
}

#[derive(Serialize)]
struct SynthManifest {
    classes: usize,
    dim: usize,
    seed: u64,
    sources: Vec<SynthSource>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    stream_epsilons: Vec<Vec<f64>>,
}

#[derive(Serialize)]
struct SynthSource {
    id: String,
    epsilon: f64,
    rows: usize,
}

#[derive(Serialize)]
struct CorrelationLine {
    seed: Option<u64>,
    pearson: f64,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum WeightsFile {
    Report { valuation: Valuation },
    Bare(Valuation),
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {}", describe(&e));
            ExitCode::FAILURE
        }
    }
}

/// The error chain, skipping causes already spelled out by their parent.
fn describe(e: &anyhow::Error) -> String {
    let mut out = String::new();
    for cause in e.chain() {
        let text = cause.to_string();
        if !out.ends_with(&text) {
            if !out.is_empty() {
                out.push_str(": ");
            }
            out.push_str(&text);
        }
    }
    out
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Convert(a) => convert(a),
        Command::Train(a) => train_cmd(a),
        Command::Score(a) => score(a),
        Command::Value(a) => value(a),
        Command::Continual(a) => continual(a),
        Command::Augment(a) => augment(a),
        Command::Synth(a) => synth(a),
        Command::Experiment(a) => return experiment(a),
        Command::Correlate(a) => correlate(a),
    }?;
    Ok(ExitCode::SUCCESS)
}

fn format_of(path: &Path) -> Result<Format> {
    Format::from_path(path).with_context(|| format!("{}: expected a .csv or .ddvm extension", path.display()))
}

fn load(path: &Path, classes: Option<usize>) -> Result<Dataset> {
    load_dataset_with_classes(path, format_of(path)?, classes).with_context(|| format!("loading {}", path.display()))
}

/// Sources from every `.csv`/`.ddvm` file in `dir`, sorted by name; ids are
/// file stems.
fn load_sources(dir: &Path, classes: Option<usize>) -> Result<SourceCollection> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    files.retain(|p| p.is_file() && Format::from_path(p).is_some());
    files.sort();
    ensure!(!files.is_empty(), "{} holds no .csv or .ddvm files", dir.display());
    load_files(&files, classes)
}

fn load_files(files: &[PathBuf], classes: Option<usize>) -> Result<SourceCollection> {
    let sources = files
        .iter()
        .map(|p| {
            let id = p
                .file_stem()
                .and_then(|s| s.to_str())
                .with_context(|| format!("{}: bad file name", p.display()))?
                .to_string();
            Ok(Source {
                id,
                dataset: load(p, classes)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SourceCollection::new(sources)?)
}

fn load_model(path: &Path) -> Result<Model> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let record: ModelRecord = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    Ok(Model::from_record(&record)?)
}

fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_text(Some(path), &to_json_string(&model.to_record())?)
}

fn load_prior(spec: &str) -> Result<Prior> {
    if spec == "uniform" {
        return Ok(Prior::Uniform);
    }
    let text = fs::read_to_string(spec).with_context(|| format!("reading prior {spec}"))?;
    let p: Vec<f64> = serde_json::from_str(&text).with_context(|| format!("prior {spec}: expected a JSON array"))?;
    Ok(Prior::Explicit(p))
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, format!("{text}\n")).with_context(|| format!("writing {}", p.display())),
        None => match writeln!(io::stdout().lock(), "{text}") {
            Err(e) if e.kind() == io::ErrorKind::BrokenPipe => Ok(()),
            r => r.context("writing to stdout"),
        },
    }
}

fn convert(a: ConvertArgs) -> Result<()> {
    let ds = load(&a.input, a.classes)?;
    save_dataset(&ds, &a.out, a.format).with_context(|| format!("writing {}", a.out.display()))
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let sources = match &a.sources {
        Some(dir) => load_sources(dir, a.classes)?,
        None => {
            ensure!(!a.data.is_empty(), "give --sources or --data");
            load_files(&a.data, a.classes)?
        }
    };
    let config = a.train.config();
    let model = if a.weights == "uniform" {
        train(&sources, Weighting::Uniform, &config)?
    } else {
        let text = fs::read_to_string(&a.weights).with_context(|| format!("reading {}", a.weights))?;
        let valuation = match serde_json::from_str(&text).with_context(|| format!("parsing {}", a.weights))? {
            WeightsFile::Report { valuation } | WeightsFile::Bare(valuation) => valuation,
        };
        train(&sources, Weighting::Valuation(&valuation), &config)?
    };
    save_model(&model, &a.out)
}

fn score(a: ScoreArgs) -> Result<()> {
    let data = load(&a.data, a.classes)?;
    let model = || -> Result<Model> {
        let path = a.model.as_ref().with_context(|| format!("{} needs --model", a.measure))?;
        load_model(path)
    };
    let result: TransferabilityScore = match a.measure {
        Measure::Leep => leep(model()?.predict_proba(data.features())?.view(), data.labels(), data.num_classes())?,
        Measure::LogMe => logme(model()?.extract_features(data.features())?.view(), data.labels(), data.num_classes())?,
        Measure::EtranEnergy => etran_energy(model()?.extract_features(data.features())?.view())?,
        Measure::NegMmd | Measure::CondNegMmd => {
            let path = a.sample.as_ref().context("mmd measures need --sample")?;
            let sample = load(path, a.classes)?;
            let kernel = a.bandwidth.map(KernelSpec::fixed).unwrap_or_default();
            let labels = (a.measure == Measure::CondNegMmd).then(|| (sample.labels(), data.labels()));
            neg_mmd(sample.features(), data.features(), &kernel, labels)?
        }
    };
    write_text(None, &to_json_string(&result)?)
}

fn value(a: ValueArgs) -> Result<()> {
    let sources = load_sources(&a.sources, a.classes)?;
    let reference = a.reference.as_deref().map(|p| load(p, a.classes)).transpose()?;
    let reference_set = build_reference(&sources, reference.as_ref(), a.reference_mode)?;
    let recipe = ValuationRecipe::annotator(a.measure).with_reference_mode(a.reference_mode);
    let config = a.train.config();
    let scored: Vec<SourceScore> = annotator_scores(&sources, &reference_set, &recipe, &config)?;
    let scores: Vec<f64> = scored.iter().map(|s| s.score).collect();
    let m = sources.len();
    let prior = load_prior(&a.prior)?.resolve(m)?;
    let (valuation, tau_search) = if m == 1 {
        (Valuation::point_mass(sources.ids(), 0)?, Vec::new())
    } else {
        let (tau, search) = match a.tau {
            Tau::Best => {
                let selection = reference_set.dataset();
                ensure!(
                    reference_set.is_labeled(),
                    "tau=best needs a labeled reference set to score final models"
                );
                tune_tau(&sources, &prior, &scores, selection, &config)?
            }
            other => (other.resolve(m)?, Vec::new()),
        };
        (Valuation::new(sources.ids(), prior, scores, tau)?, search)
    };
    let report = ValueReport {
        measure: a.measure,
        reference_mode: a.reference_mode,
        valuation,
        tau_search,
        seconds_per_source: scored.iter().map(|s| s.seconds).collect(),
    };
    write_text(a.out.as_deref(), &to_json_string(&report)?)
}

/// `step_<t>` subdirectories of `dir`, ordered by `t`.
fn stream_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut steps = Vec::new();
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let index = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("step_"))
            .and_then(|t| t.parse::<usize>().ok());
        if let (Some(t), true) = (index, path.is_dir()) {
            steps.push((t, path));
        }
    }
    steps.sort();
    ensure!(!steps.is_empty(), "{} holds no step_<t> directories", dir.display());
    Ok(steps.into_iter().map(|(_, p)| p).collect())
}

fn continual(a: ContinualArgs) -> Result<()> {
    let dirs = stream_dirs(&a.stream)?;
    let first = load_sources(&dirs[0], a.classes)?;
    let m = first.len();
    ensure!(a.tau != Tau::Best, "continual valuation takes quick or a fixed tau");
    let tau = a.tau.resolve(m)?;
    let data = load(&a.reference, a.classes)?;
    let (reference, mode) = if a.measure == Measure::EtranEnergy {
        (ReferenceSet::unlabeled(data), ReferenceMode::UnlabeledEnergy)
    } else {
        (ReferenceSet::labeled(data), ReferenceMode::Labeled)
    };
    let recipe = ValuationRecipe::annotator(a.measure).with_reference_mode(mode);
    let config = a.train.config().with_iterations(a.valuation_iterations);
    // Steps are read lazily so only one is held in memory at a time.
    let failure = RefCell::new(None);
    let mut first = Some(first);
    let steps = dirs.iter().enumerate().map_while(|(i, dir)| {
        let sources = match first.take() {
            Some(s) => s,
            None => match load_sources(dir, a.classes) {
                Ok(s) => s,
                Err(e) => {
                    *failure.borrow_mut() = Some(e);
                    return None;
                }
            },
        };
        Some(StreamStep { index: i + 1, sources })
    });
    let trajectory = run_stream(steps, &reference, &recipe, &load_prior(&a.prior)?, tau, &config);
    if let Some(e) = failure.into_inner() {
        return Err(e);
    }
    let report = ContinualReport {
        measure: a.measure,
        tau,
        trajectory: trajectory?,
    };
    write_text(a.out.as_deref(), &to_json_string(&report)?)
}

fn augment(a: AugmentArgs) -> Result<()> {
    let train_set = load(&a.train, a.classes)?;
    let augmentors = match &a.augmentors {
        Some(p) => load_augmentor_specs(p).with_context(|| format!("loading {}", p.display()))?,
        None => default_augmentor_set(),
    };
    let universal = load_model(&a.universal)?;
    ensure!(a.tau != Tau::Best, "augmentation valuation takes quick or a fixed tau");
    let valuation = augmentation_valuation(
        &train_set,
        &augmentors,
        &universal,
        a.measure,
        &load_prior(&a.prior)?,
        a.tau,
        a.augment_seed,
    )?;
    if let Some(path) = &a.model_out {
        let model = train_augmented(&train_set, &augmentors, &valuation, &a.train_opts.config(), a.granularity)?;
        save_model(&model, path)?;
    }
    write_text(a.out.as_deref(), &to_json_string(&valuation)?)
}

fn parse_noise(spec: &str, m: usize) -> Result<NoiseSpec> {
    if spec == "linear" {
        return Ok(NoiseSpec::linear(m));
    }
    let eps = spec
        .split(',')
        .map(|t| t.trim().parse::<f64>().with_context(|| format!("bad noise level {t:?}")))
        .collect::<Result<Vec<_>>>()?;
    ensure!(eps.len() == m, "{} noise levels for {m} sources", eps.len());
    Ok(NoiseSpec::new(eps)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    ensure!(a.sources >= 1, "need at least one source");
    let noise = parse_noise(&a.noise, a.sources)?;
    let mixture = GaussianMixture::new(a.classes, a.dim, a.separation, mix(a.seed, 0))?;
    let ext = a.format.to_string();
    let sources_dir = a.out.join("sources");
    fs::create_dir_all(&sources_dir).with_context(|| format!("creating {}", sources_dir.display()))?;
    let save = |ds: &Dataset, path: PathBuf| -> Result<()> {
        save_dataset(ds, &path, a.format).with_context(|| format!("writing {}", path.display()))
    };

    let pool = mixture.sample(a.per_class * a.sources, mix(a.seed, 1))?;
    let clean = split_sources(&pool, a.sources, mix(a.seed, 2))?;
    let noisy = corrupt_sources(&clean, &noise, mix(a.seed, 3))?;
    for s in &noisy {
        save(&s.dataset, sources_dir.join(format!("{}.{ext}", s.id)))?;
    }
    save(
        &mixture.sample(a.reference_per_class, mix(a.seed, 4))?,
        a.out.join(format!("reference.{ext}")),
    )?;
    save(&mixture.sample(a.test_per_class, mix(a.seed, 5))?, a.out.join(format!("test.{ext}")))?;

    let mut stream_epsilons = Vec::new();
    if let Some(steps) = a.steps {
        let permuted = noise.clone().permuted(mix(a.seed, 6));
        let stream = split_stream(&clean, steps, &permuted, mix(a.seed, 7))?;
        for step in &stream.steps {
            let dir = a.out.join("stream").join(format!("step_{}", step.index));
            fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
            for s in &step.sources {
                save(&s.dataset, dir.join(format!("{}.{ext}", s.id)))?;
            }
            stream_epsilons.push(stream.epsilons_at(&permuted, step.index));
        }
    }
    let manifest = SynthManifest {
        classes: a.classes,
        dim: a.dim,
        seed: a.seed,
        sources: noisy
            .iter()
            .zip(&noise.epsilons)
            .map(|(s, &epsilon)| SynthSource {
                id: s.id.clone(),
                epsilon,
                rows: s.dataset.len(),
            })
            .collect(),
        stream_epsilons,
    };
    write_text(Some(&a.out.join("manifest.json")), &to_json_string(&manifest)?)
}

fn parse_seeds(spec: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = spec.split_once("..") {
        let lo: u64 = lo.trim().parse().with_context(|| format!("bad seed range {spec:?}"))?;
        let hi: u64 = hi.trim().trim_start_matches('=').parse().with_context(|| format!("bad seed range {spec:?}"))?;
        ensure!(lo <= hi, "empty seed range {spec:?}");
        return Ok((lo..=hi).collect());
    }
    spec.split(',')
        .map(|t| t.trim().parse::<u64>().with_context(|| format!("bad seed {t:?}")))
        .collect()
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                merge(b.entry(k).or_insert(Value::Null), v);
            }
        }
        (b, p) => *b = p,
    }
}

fn experiment_config(a: &ExperimentArgs) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::new(a.scenario, 0);
    if let Some(path) = &a.config {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let patch: Value = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        ensure!(patch.is_object(), "{}: expected a JSON object", path.display());
        let mut base = serde_json::to_value(&config)?;
        merge(&mut base, patch);
        config = serde_json::from_value(base).with_context(|| format!("applying {}", path.display()))?;
        if config.scenario != a.scenario {
            bail!("config names scenario {}, --scenario is {}", config.scenario, a.scenario);
        }
    }
    if let Some(m) = a.measure {
        config.measure = m;
    }
    if let Some(t) = a.tau {
        config.tau = t;
    }
    if let Some(r) = a.reference_mode {
        config.reference_mode = r;
    }
    Ok(config)
}

fn experiment(a: ExperimentArgs) -> Result<ExitCode> {
    let seeds = parse_seeds(&a.seeds)?;
    ensure!(!seeds.is_empty(), "no seeds");
    let config = experiment_config(&a)?;
    let reports = run_seeds(&config, &seeds)?;
    let checks = evaluate(&reports);
    let passed = checks.iter().all(|c| c.passed);
    for c in &checks {
        eprintln!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let output = ExperimentOutput {
        scenario: a.scenario,
        seeds,
        passed,
        checks,
        reports,
    };
    write_text(a.out.as_deref(), &to_json_string(&output)?)?;
    Ok(if a.assert && !passed {
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    })
}

fn correlate(a: CorrelateArgs) -> Result<()> {
    let lines = match &a.report {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let output: ExperimentOutput =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            output
                .reports
                .iter()
                .map(|r| {
                    let weights = r
                        .weightings
                        .get(&a.method)
                        .with_context(|| format!("seed {}: no weighting {:?}", r.seed, a.method))?;
                    let accs = r
                        .sources
                        .iter()
                        .map(|s| s.accuracy.with_context(|| format!("seed {}: no per-source accuracies", r.seed)))
                        .collect::<Result<Vec<_>>>()?;
                    Ok(CorrelationLine {
                        seed: Some(r.seed),
                        pearson: pearson(weights, &accs).with_context(|| format!("seed {}", r.seed))?,
                    })
                })
                .collect::<Result<Vec<_>>>()?
        }
        None => {
            ensure!(!a.x.is_empty(), "give --report or both --x and --y");
            vec![CorrelationLine {
                seed: None,
                pearson: pearson(&a.x, &a.y)?,
            }]
        }
    };
    write_text(None, &to_json_string(&lines)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..9").unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(parse_seeds("3,1").unwrap(), vec![3, 1]);
        assert!(parse_seeds("5..2").is_err());
    }

    #[test]
    fn config_patch_merges_nested_fields() {
        let mut base = serde_json::json!({"data": {"classes": 10, "dim": 20}, "seed": 0});
        merge(&mut base, serde_json::json!({"data": {"dim": 4}}));
        assert_eq!(base, serde_json::json!({"data": {"classes": 10, "dim": 4}, "seed": 0}));
    }
}

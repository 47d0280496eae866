//! `isac-atr`: dataset generation, training, evaluation, architecture search,
//! rendering and file inspection for the ISAC target-recognition pipeline.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use isac_atr::dataset::{
    class_weights, decode_dataset, generate_dataset, read_dataset_header, save_dataset, stratified_split, Dataset,
    DatasetManifest, FORMAT_VERSION,
};
use isac_atr::kv::{format_entries, KvFile};
use isac_atr::model::{
    build_detector, evaluate, evaluate_flipped, train, DetectorCheckpoint, DetectorConfig, EvalReport, TrainConfig,
};
use isac_atr::periodogram::{compute_periodogram, render, render_features, FeatureMode};
use isac_atr::pgm::decode_pgm;
use isac_atr::search::{ledger_csv, run_search, SearchOptions, SearchSpace, FULL_TRIALS};
use isac_atr::waveform::{synthesize_channel, Scene};
use isac_atr::{Error, RadioConfig};
use thiserror::Error as ThisError;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  2  invalid command line (unknown flag, missing argument)
  3  invalid configuration or option value
  4  missing or unreadable file
  5  corrupt or unrecognized file (bad magic, version or checksum)
  6  infeasible architecture for the input size
  7  training diverged
  8  search finished without a usable trial
  9  other data error (empty split, missing class, dimension mismatch)

Errors are printed to stderr as one line:
  error: kind=<kind> code=<n> msg=<message>";

#[derive(Parser)]
#[command(name = "isac-atr", version, about = "OFDM sensing target recognition pipeline", after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Print per-epoch progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
    /// Suppress the summary printed on stdout.
    #[arg(short, long, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labeled dataset file from a manifest.
    Gen(GenArgs),
    /// Train a detector and write its checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval(EvalArgs),
    /// Evaluate with every test periodogram mirrored along Doppler.
    FlipEval(EvalArgs),
    /// Random architecture search.
    Search(SearchArgs),
    /// Render dataset samples or a simulated scene as P5 images.
    Render(RenderArgs),
    /// Print the header of a dataset, checkpoint or P5 image.
    Inspect(InspectArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Dataset manifest (`key = value`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Padding factor F.
    #[arg(long = "f", value_parser = clap::value_parser!(u32).range(0..=2))]
    f: Option<u32>,
    /// Use the full-scale radio dimensions.
    #[arg(long)]
    full_scale: bool,
    /// Store untransformed magnitude and phase.
    #[arg(long)]
    raw_features: bool,
}

#[derive(Args)]
struct SplitArgs {
    /// Seed of the train/test split (and of training).
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    split_fraction: f64,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Detector configuration; defaults to the optimized architecture for the dataset's F.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    /// Expected padding factor of the dataset.
    #[arg(long = "f", value_parser = clap::value_parser!(u32).range(0..=2))]
    f: Option<u32>,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Score every sample instead of the test split.
    #[arg(long)]
    all: bool,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct SearchArgs {
    #[arg(long)]
    data: PathBuf,
    /// Search space lists (`key = v1, v2, ...`).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long = "f", value_parser = clap::value_parser!(u32).range(0..=2))]
    f: Option<u32>,
    /// Reference budget: 80 trials of 50 epochs, no compute cap.
    #[arg(long)]
    full_budget: bool,
    /// Per-sample forward multiply-accumulate cap; 0 disables it.
    #[arg(long)]
    mac_budget: Option<u64>,
    #[command(flatten)]
    split: SplitArgs,
}

#[derive(Args)]
struct RenderArgs {
    /// Dataset whose samples are rendered.
    #[arg(long, conflicts_with = "scene", required_unless_present = "scene")]
    data: Option<PathBuf>,
    /// Sample indices to render.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    index: Vec<usize>,
    /// Scene file to simulate and render.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long = "f", value_parser = clap::value_parser!(u32).range(0..=2), default_value_t = 0)]
    f: u32,
    #[arg(long)]
    full_scale: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InspectArgs {
    file: PathBuf,
}

#[derive(Debug, ThisError)]
enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error("{}: {source}", path.display())]
    File { path: PathBuf, source: std::io::Error },
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(Error::Io(e))
    }
}

impl CliError {
    fn classify(&self) -> (&'static str, u8) {
        use tensornet::Error as Net;
        match self {
            CliError::Usage(_) => ("config", 3),
            CliError::File { .. } => ("io", 4),
            CliError::Core(e) => match e {
                Error::Config(_) | Error::Parse { .. } | Error::Sizing { .. } => ("config", 3),
                Error::Io(_) | Error::Net(Net::Io(_)) => ("io", 4),
                Error::Format(_) | Error::Checksum { .. } | Error::Net(Net::Checkpoint(_) | Net::Checksum { .. }) => {
                    ("corrupt", 5)
                }
                Error::Infeasible(_) => ("infeasible", 6),
                Error::Diverged { .. } => ("diverged", 7),
                Error::SearchFailed(_) => ("search", 8),
                _ => ("data", 9),
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn unix_now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0.0, |d| d.as_secs_f64())
}

/// Resolved parameters of one invocation, written as `run.txt`. The only
/// output file that carries timestamps.
struct RunManifest {
    entries: Vec<(String, String)>,
    started: f64,
    clock: Instant,
}

impl RunManifest {
    fn new(command: &str) -> Self {
        Self {
            entries: vec![
                ("command".into(), command.to_string()),
                ("version".into(), env!("CARGO_PKG_VERSION").to_string()),
            ],
            started: unix_now(),
            clock: Instant::now(),
        }
    }

    fn set(&mut self, key: &str, value: impl ToString) {
        self.entries.push((key.to_string(), value.to_string()));
    }

    fn write(mut self, out: &Path) -> Result<()> {
        let elapsed = self.clock.elapsed().as_secs_f64();
        self.set("started_unix", format!("{:.3}", self.started));
        self.set("elapsed_s", format!("{:.3}", elapsed));
        let entries: Vec<(&str, String)> = self.entries.iter().map(|(k, v)| (k.as_str(), v.clone())).collect();
        fs::write(out.join("run.txt"), format_entries(&entries))?;
        Ok(())
    }
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })
}

/// Surfaces a missing input with its path before a loader reports a bare
/// io error.
fn require_file(path: &Path) -> Result<&Path> {
    fs::metadata(path).map_err(|source| CliError::File {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(path)
}

fn load_data(path: &Path) -> Result<Dataset> {
    Ok(decode_dataset(&read_file(path)?)?)
}

fn check_f(expected: Option<u32>, data: &Dataset) -> Result<()> {
    match expected {
        Some(f) if f != data.header.padding_factor => Err(CliError::Usage(format!(
            "--f {} does not match the dataset's padding factor {}",
            f, data.header.padding_factor
        ))),
        _ => Ok(()),
    }
}

fn split(data: &Dataset, args: &SplitArgs) -> Result<(Dataset, Dataset)> {
    Ok(stratified_split(data, args.split_fraction, args.seed)?)
}

fn report_to(out: &Path, stem: &str, r: &EvalReport) -> Result<()> {
    fs::write(out.join(format!("{}.csv", stem)), r.to_csv())?;
    fs::write(out.join(format!("{}.pgm", stem)), r.heatmap_pgm(16))?;
    Ok(())
}

fn cmd_gen(a: &GenArgs, run: &mut RunManifest) -> Result<String> {
    let mut m = match &a.config {
        Some(p) => {
            run.set("config", path_str(p));
            DatasetManifest::load(require_file(p)?)?
        }
        None => DatasetManifest::default(),
    };
    if a.full_scale {
        m.radio = RadioConfig::full_scale();
    }
    if let Some(f) = a.f {
        m.padding_factor = f;
    }
    if let Some(s) = a.seed {
        m.seed = s;
    }
    if a.raw_features {
        m.feature_mode = FeatureMode::Raw;
    }
    m.validate()?;
    let data = generate_dataset(&m)?;
    save_dataset(&data, a.out.join("dataset.iatr"))?;
    fs::write(a.out.join("manifest.txt"), m.to_kv_string())?;
    for line in m.to_kv_string().lines() {
        if let Some((k, v)) = line.split_once(" = ") {
            run.set(k, v);
        }
    }
    let (rows, cols) = m.feature_dims();
    Ok(format!(
        "samples = {}\nrows = {}\ncols = {}\npadding_factor = {}\n",
        data.samples.len(),
        rows,
        cols,
        m.padding_factor
    ))
}

fn cmd_train(a: &TrainArgs, verbose: bool, run: &mut RunManifest) -> Result<String> {
    let data = load_data(&a.data)?;
    check_f(a.f, &data)?;
    let f = data.header.padding_factor;
    let cfg = match &a.config {
        Some(p) => {
            let kv = KvFile::load(require_file(p)?)?;
            kv.expect_keys(DetectorConfig::KEYS)?;
            DetectorConfig::from_kv(&kv, f)?
        }
        None => DetectorConfig::optimized(f)?,
    };
    if cfg.padding_factor != f {
        return Err(CliError::Usage(format!(
            "detector is configured for F={}, dataset has F={}",
            cfg.padding_factor, f
        )));
    }
    let (train_set, test_set) = split(&data, &a.split)?;
    let weights = class_weights(&train_set)?;
    let (rows, cols) = (data.header.rows, data.header.cols);
    let mut model = build_detector(&cfg, rows, cols, a.split.seed)?;
    let tc = TrainConfig {
        epochs: a.epochs.unwrap_or(TrainConfig::default().epochs),
        seed: a.split.seed,
        ..TrainConfig::default()
    };
    if tc.epochs == 0 {
        return Err(CliError::Usage("--epochs must be at least 1".into()));
    }
    run.set("data", path_str(&a.data));
    run.set("seed", a.split.seed);
    run.set("split_fraction", a.split.split_fraction);
    run.set("epochs", tc.epochs);
    run.set("batch_size", tc.batch_size);
    run.set("lr", tc.lr);
    for (k, v) in cfg.to_entries() {
        run.set(k, v);
    }
    let history = train(&mut model, &train_set, &test_set, &tc, &weights)?;
    if verbose {
        for e in &history.epochs {
            eprintln!(
                "epoch {} train_loss {:.6} test_loss {:.6} test_accuracy {:.4}",
                e.epoch, e.train_loss, e.test_loss, e.test_accuracy
            );
        }
    }
    let ckpt = DetectorCheckpoint {
        config: cfg,
        rows,
        cols,
        feature_mode: data.header.feature_mode,
        class_weights: weights.clone(),
        network: model,
    };
    ckpt.save(a.out.join("model.iatm"))?;
    fs::write(a.out.join("detector.txt"), cfg.to_kv_string())?;
    fs::write(a.out.join("history.csv"), history.to_csv())?;
    let last = history.last().expect("at least one epoch");
    if !test_set.samples.is_empty() {
        report_to(&a.out, "eval", &evaluate(&ckpt.network, &test_set, &weights)?)?;
    }
    Ok(format!(
        "params = {}\ntrain_samples = {}\ntest_samples = {}\nfinal_test_loss = {:.9}\nfinal_test_accuracy = {:.6}\n",
        ckpt.network.count_params(),
        train_set.samples.len(),
        test_set.samples.len(),
        last.test_loss,
        last.test_accuracy
    ))
}

fn eval_inputs(a: &EvalArgs, run: &mut RunManifest) -> Result<(DetectorCheckpoint, Dataset)> {
    let ckpt = DetectorCheckpoint::from_bytes(&read_file(&a.model)?)?;
    let data = load_data(&a.data)?;
    if (ckpt.rows, ckpt.cols) != (data.header.rows, data.header.cols) || ckpt.feature_mode != data.header.feature_mode
    {
        return Err(CliError::Core(Error::Dimension(format!(
            "checkpoint expects {}x{} {} features, dataset has {}x{} {}",
            ckpt.rows,
            ckpt.cols,
            ckpt.feature_mode.name(),
            data.header.rows,
            data.header.cols,
            data.header.feature_mode.name()
        ))));
    }
    run.set("model", path_str(&a.model));
    run.set("data", path_str(&a.data));
    run.set("all", a.all);
    let test = if a.all {
        data
    } else {
        run.set("seed", a.split.seed);
        run.set("split_fraction", a.split.split_fraction);
        split(&data, &a.split)?.1
    };
    Ok((ckpt, test))
}

fn cmd_eval(a: &EvalArgs, run: &mut RunManifest) -> Result<String> {
    let (ckpt, test) = eval_inputs(a, run)?;
    let r = evaluate(&ckpt.network, &test, &ckpt.class_weights)?;
    report_to(&a.out, "eval", &r)?;
    Ok(format!(
        "samples = {}\naccuracy = {:.6}\nmean_loss = {:.9}\n",
        r.total(),
        r.accuracy,
        r.mean_loss
    ))
}

/// Per-class accuracy change under the flip, most negative first. Classes
/// without test samples are left out.
fn flip_table(plain: &EvalReport, flipped: &EvalReport) -> Vec<(usize, usize, f64, f64)> {
    let mut rows: Vec<(usize, usize, f64, f64)> = (0..plain.confusion.len())
        .filter_map(|c| {
            let a = plain.per_class_accuracy[c]?;
            let b = flipped.per_class_accuracy[c]?;
            Some((c, plain.confusion[c].iter().sum(), a, b))
        })
        .collect();
    rows.sort_by(|x, y| (x.3 - x.2).total_cmp(&(y.3 - y.2)).then(x.0.cmp(&y.0)));
    rows
}

fn cmd_flip_eval(a: &EvalArgs, run: &mut RunManifest) -> Result<String> {
    let (ckpt, test) = eval_inputs(a, run)?;
    let plain = evaluate(&ckpt.network, &test, &ckpt.class_weights)?;
    let flipped = evaluate_flipped(&ckpt.network, &test, &ckpt.class_weights)?;
    report_to(&a.out, "eval", &plain)?;
    report_to(&a.out, "flipped", &flipped)?;
    let mut csv = String::from("class,count,accuracy,flipped_accuracy,delta\n");
    for (c, n, acc, facc) in flip_table(&plain, &flipped) {
        let _ = writeln!(csv, "{},{},{:.6},{:.6},{:.6}", c, n, acc, facc, facc - acc);
    }
    fs::write(a.out.join("flip.csv"), &csv)?;
    Ok(format!(
        "{}overall_accuracy = {:.6}\noverall_flipped_accuracy = {:.6}\n",
        csv, plain.accuracy, flipped.accuracy
    ))
}

fn cmd_search(a: &SearchArgs, run: &mut RunManifest) -> Result<String> {
    let data = load_data(&a.data)?;
    check_f(a.f, &data)?;
    let space = match &a.config {
        Some(p) => SearchSpace::from_kv(&KvFile::load(require_file(p)?)?)?,
        None => SearchSpace::default(),
    };
    let mut opts = SearchOptions {
        seed: a.split.seed,
        ..SearchOptions::default()
    };
    if a.full_budget {
        opts.trials = FULL_TRIALS;
        opts.epochs = TrainConfig::default().epochs;
        opts.mac_budget = None;
    }
    if let Some(t) = a.trials {
        opts.trials = t;
    }
    if let Some(e) = a.epochs {
        opts.epochs = e;
    }
    if let Some(b) = a.mac_budget {
        opts.mac_budget = (b > 0).then_some(b);
    }
    if opts.epochs == 0 {
        return Err(CliError::Usage("--epochs must be at least 1".into()));
    }
    let (train_set, test_set) = split(&data, &a.split)?;
    let weights = class_weights(&train_set)?;
    run.set("data", path_str(&a.data));
    run.set("seed", opts.seed);
    run.set("split_fraction", a.split.split_fraction);
    run.set("trials", opts.trials);
    run.set("epochs", opts.epochs);
    run.set("mac_budget", opts.mac_budget.unwrap_or(0));
    fs::write(a.out.join("space.txt"), space.to_kv_string())?;
    let outcome = run_search(&space, &train_set, &test_set, &weights, &opts)?;
    fs::write(a.out.join("ledger.csv"), ledger_csv(&outcome.trials))?;
    // Wall times vary between runs, so they live in the run manifest only.
    run.set(
        "trial_wall_time_s",
        outcome
            .trials
            .iter()
            .map(|t| format!("{:.3}", t.wall_time_s))
            .collect::<Vec<_>>()
            .join(", "),
    );
    let best = outcome.best();
    fs::write(a.out.join("best.txt"), best.config.to_kv_string())?;
    DetectorCheckpoint {
        config: best.config,
        rows: data.header.rows,
        cols: data.header.cols,
        feature_mode: data.header.feature_mode,
        class_weights: weights,
        network: outcome.best_model.clone(),
    }
    .save(a.out.join("best.iatm"))?;
    Ok(format!(
        "trials = {}\nok_trials = {}\nbest_trial = {}\nbest_test_loss = {:.9}\nbest_test_accuracy = {:.6}\nbest_params = {}\n",
        outcome.trials.len(),
        outcome.ranking.len(),
        best.trial,
        best.test_loss,
        best.test_accuracy,
        best.params
    ))
}

fn cmd_render(a: &RenderArgs, run: &mut RunManifest) -> Result<String> {
    let mut written = Vec::new();
    if let Some(scene_path) = &a.scene {
        let scene = Scene::load(require_file(scene_path)?)?;
        let radio = if a.full_scale { RadioConfig::full_scale() } else { RadioConfig::desk() };
        let p = compute_periodogram(&synthesize_channel(&scene, &radio)?, a.f)?;
        let name = format!("scene_f{}.pgm", a.f);
        render(&p, a.out.join(&name))?;
        run.set("scene", path_str(scene_path));
        run.set("padding_factor", a.f);
        run.set("full_scale", a.full_scale);
        written.push(name);
    } else if let Some(data_path) = &a.data {
        let data = load_data(data_path)?;
        run.set("data", path_str(data_path));
        for &i in &a.index {
            let s = data.samples.get(i).ok_or_else(|| {
                CliError::Usage(format!("index {} outside the {} samples", i, data.samples.len()))
            })?;
            let name = format!("sample{}_class{}.pgm", i, s.label);
            render_features(&s.features, a.out.join(&name))?;
            written.push(name);
        }
        run.set("index", a.index.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", "));
    }
    Ok(written.iter().map(|w| format!("wrote = {}\n", w)).collect())
}

fn cmd_inspect(a: &InspectArgs) -> Result<String> {
    let bytes = read_file(&a.file)?;
    let mut s = String::new();
    match bytes.get(..4) {
        Some(b"IATR") => {
            let (h, count, _) = read_dataset_header(&bytes)?;
            let data = decode_dataset(&bytes)?;
            let counts = data.class_counts();
            let _ = write!(
                s,
                "format = dataset\nversion = {}\nsamples = {}\nrows = {}\ncols = {}\npadding_factor = {}\n\
                 subcarriers = {}\nsymbols = {}\ntdd = {}/{}\ncarrier_hz = {}\nsubcarrier_spacing_hz = {}\n\
                 feature_mode = {}\nclass_counts = {}\n",
                FORMAT_VERSION,
                count,
                h.rows,
                h.cols,
                h.padding_factor,
                h.radio.subcarriers,
                h.radio.symbols,
                h.radio.tdd.dl_symbols,
                h.radio.tdd.period_symbols,
                h.radio.carrier_hz,
                h.radio.subcarrier_spacing_hz,
                h.feature_mode.name(),
                counts.map(|c| c.to_string()).join(", ")
            );
        }
        Some(b"IATM") => {
            let c = DetectorCheckpoint::from_bytes(&bytes)?;
            s += "format = checkpoint\n";
            s += &c.config.to_kv_string();
            let _ = write!(
                s,
                "rows = {}\ncols = {}\nfeature_mode = {}\nparams = {}\nlayers = {}\n",
                c.rows,
                c.cols,
                c.feature_mode.name(),
                c.network.count_params(),
                c.network.layers().iter().map(|l| l.name()).collect::<Vec<_>>().join(", ")
            );
        }
        Some(b) if b.starts_with(b"P5") => {
            let (w, h, _) = decode_pgm(&bytes)?;
            let _ = write!(s, "format = pgm\nwidth = {}\nheight = {}\n", w, h);
        }
        _ => {
            return Err(CliError::Core(Error::Format(format!(
                "{} is not a dataset, checkpoint or P5 image",
                a.file.display()
            ))))
        }
    }
    Ok(s)
}

fn out_dir(command: &Command) -> Option<&Path> {
    match command {
        Command::Gen(a) => Some(&a.out),
        Command::Train(a) => Some(&a.out),
        Command::Eval(a) | Command::FlipEval(a) => Some(&a.out),
        Command::Search(a) => Some(&a.out),
        Command::Render(a) => Some(&a.out),
        Command::Inspect(_) => None,
    }
}

fn run(cli: &Cli) -> Result<String> {
    let name = match &cli.command {
        Command::Gen(_) => "gen",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::FlipEval(_) => "flip-eval",
        Command::Search(_) => "search",
        Command::Render(_) => "render",
        Command::Inspect(a) => return cmd_inspect(a),
    };
    let out = out_dir(&cli.command).expect("writing commands have --out");
    fs::create_dir_all(out)?;
    let mut manifest = RunManifest::new(name);
    manifest.set("out", path_str(out));
    let summary = match &cli.command {
        Command::Gen(a) => cmd_gen(a, &mut manifest)?,
        Command::Train(a) => cmd_train(a, cli.verbose, &mut manifest)?,
        Command::Eval(a) => cmd_eval(a, &mut manifest)?,
        Command::FlipEval(a) => cmd_flip_eval(a, &mut manifest)?,
        Command::Search(a) => cmd_search(a, &mut manifest)?,
        Command::Render(a) => cmd_render(a, &mut manifest)?,
        Command::Inspect(_) => unreachable!(),
    };
    manifest.write(out)?;
    Ok(summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            if !cli.quiet {
                print!("{}", summary);
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            let (kind, code) = e.classify();
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error: kind={} code={} msg={}", kind, code, msg);
            ExitCode::from(code)
        }
    }
}

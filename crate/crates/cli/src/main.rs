//! `freqiqa` command-line tool.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical error.
//! Results go to stdout (or `--out`); diagnostics go to stderr.

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use freqiqa::blockfreq::{block_grid, tile_spectrum};
use freqiqa::distort::{self, DistortionKind, DistortionSpec, LadderStep};
use freqiqa::features::{
    format_feature_csv, read_feature_csv, ExtractConfig, FeatureRow, NormalizationFactors, DEFAULT_ZERO_EPSILON,
    FEATURE_LAYOUT,
};
use freqiqa::gpr::{self, FitOptions, ModelFile};
use freqiqa::harness::{self, ExperimentOptions, SplitSpec, SplitUnit};
use freqiqa::imagio::{load_gray, read_manifest, GrayImage, Manifest, Polarity, Sample};
use freqiqa::metrics::{evaluate, EvalReport};
use freqiqa::mscn::mscn;
use freqiqa::Error;

#[derive(Parser, Debug)]
#[command(name = "freqiqa", version, about = "Blind image quality assessment from block DFT features")]
struct Cli {
    /// Worker threads for extraction and experiments [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Extract the 24 features of each image into a feature CSV
    Extract(ExtractCmd),
    /// Fit a GPR model to a feature CSV that has scores
    Train(TrainCmd),
    /// Predict a quality score (and variance) per input
    Predict(PredictCmd),
    /// Score a manifest with a trained model
    Evaluate(EvaluateCmd),
    /// Repeated content-separated splits on one manifest, or train on one and test on another
    Crossval(CrossvalCmd),
    /// Repeat the split protocol with each single feature
    Ablate(AblateCmd),
    /// Write a synthetic distortion ladder and its manifest
    Synth(SynthCmd),
    /// Time feature extraction on a single thread
    Bench(BenchCmd),
}

#[derive(Args, Debug, Clone)]
struct ExtractionArgs {
    /// Normalization factors for g_lf,m_lf,g_hf,m_hf sums
    #[arg(long, value_parser = parse_nf, default_value = "1000,100,100,20")]
    nf: NormalizationFactors,

    /// Values at or below this count as zero in the histogram
    #[arg(long, value_parser = parse_epsilon, default_value_t = DEFAULT_ZERO_EPSILON)]
    epsilon: f64,
}

impl ExtractionArgs {
    fn config(&self) -> ExtractConfig {
        ExtractConfig {
            nf: self.nf,
            zero_epsilon: self.epsilon,
        }
    }
}

#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
struct Inputs {
    /// Manifest CSV (path,score,distortion,content_id)
    #[arg(long)]
    manifest: Option<PathBuf>,

    /// Image file; repeat for several
    #[arg(long, num_args = 1..)]
    image: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct ExtractCmd {
    #[command(flatten)]
    inputs: Inputs,

    /// Output feature CSV [default: stdout]
    #[arg(long)]
    out: Option<PathBuf>,

    #[command(flatten)]
    extraction: ExtractionArgs,

    /// Write the MSCN field of the single input image as a text grid
    #[arg(long)]
    dump_mscn: Option<PathBuf>,

    /// Print gray and MSCN magnitude grids of block ROW,COL of the single input image to stderr
    #[arg(long, value_parser = parse_block)]
    dump_block: Option<(usize, usize)>,
}

#[derive(Args, Debug)]
struct TrainCmd {
    /// Feature CSV with a score column
    #[arg(long)]
    features: PathBuf,

    /// Output model file
    #[arg(long)]
    out: PathBuf,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Random restarts of the hyperparameter search
    #[arg(long, default_value_t = 5)]
    restarts: usize,

    /// Pin the noise variance instead of optimizing it
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args, Debug)]
#[group(id = "predict_inputs", required = true, multiple = false)]
struct PredictInputs {
    /// Image file; repeat for several
    #[arg(long, num_args = 1..)]
    image: Vec<PathBuf>,

    /// Feature CSV to score instead of images
    #[arg(long)]
    features: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictCmd {
    #[arg(long)]
    model: PathBuf,

    #[command(flatten)]
    inputs: PredictInputs,

    #[command(flatten)]
    extraction: ExtractionArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ReportFormat {
    Json,
    Kv,
}

#[derive(Args, Debug)]
struct EvaluateCmd {
    #[arg(long)]
    model: PathBuf,

    #[arg(long)]
    manifest: PathBuf,

    #[command(flatten)]
    extraction: ExtractionArgs,

    #[arg(long, value_enum, default_value_t = ReportFormat::Json)]
    format: ReportFormat,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum UnitArg {
    Content,
    Sample,
}

#[derive(Args, Debug)]
struct SplitArgs {
    #[arg(long, default_value_t = 1000)]
    iterations: usize,

    #[arg(long, default_value_t = 0.8)]
    train_fraction: f64,

    #[arg(long, value_enum, default_value_t = UnitArg::Content)]
    split_unit: UnitArg,

    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Random restarts of the hyperparameter search per fit
    #[arg(long, default_value_t = 5)]
    restarts: usize,
}

impl SplitArgs {
    fn spec(&self) -> SplitSpec {
        SplitSpec {
            train_fraction: self.train_fraction,
            iterations: self.iterations,
            seed: self.seed,
            split_unit: match self.split_unit {
                UnitArg::Content => SplitUnit::ByContent,
                UnitArg::Sample => SplitUnit::BySample,
            },
        }
    }
}

#[derive(Args, Debug)]
struct CrossvalCmd {
    /// Run repeated train/test splits within this manifest
    #[arg(long, conflicts_with_all = ["train_manifest", "test_manifest"], required_unless_present_all = ["train_manifest", "test_manifest"])]
    manifest: Option<PathBuf>,

    /// Train on every sample of this manifest...
    #[arg(long, requires = "test_manifest")]
    train_manifest: Option<PathBuf>,

    /// ...and test on every sample of this one
    #[arg(long, requires = "train_manifest")]
    test_manifest: Option<PathBuf>,

    #[command(flatten)]
    split: SplitArgs,

    #[command(flatten)]
    extraction: ExtractionArgs,

    /// Also print a summary table to stderr
    #[arg(long)]
    table: bool,
}

#[derive(Args, Debug)]
struct AblateCmd {
    #[arg(long)]
    manifest: PathBuf,

    #[command(flatten)]
    split: SplitArgs,

    #[command(flatten)]
    extraction: ExtractionArgs,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SynthKind {
    Gblur,
    Awgn,
    Blocky,
    /// Blur followed by blockiness or noise
    Combined,
}

#[derive(Args, Debug)]
struct SynthCmd {
    /// Output directory; receives the images and manifest.csv
    #[arg(long)]
    out: PathBuf,

    #[arg(long, value_enum, default_value_t = SynthKind::Gblur)]
    kind: SynthKind,

    /// Comma-separated distortion levels [default depends on --kind]
    #[arg(long, value_delimiter = ',')]
    levels: Vec<f64>,

    /// Number of generated scenes, ignored with --source
    #[arg(long, default_value_t = 20)]
    contents: usize,

    /// Side length of generated scenes
    #[arg(long, default_value_t = 128)]
    size: usize,

    /// Pristine images to distort instead of generated scenes
    #[arg(long, num_args = 1..)]
    source: Vec<PathBuf>,

    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct BenchCmd {
    #[command(flatten)]
    inputs: Inputs,

    /// Timed extractions per image
    #[arg(long, default_value_t = 5)]
    repeat: usize,

    #[command(flatten)]
    extraction: ExtractionArgs,
}

fn parse_nf(s: &str) -> Result<NormalizationFactors, String> {
    let v: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>().map_err(|e| format!("{p:?}: {e}")))
        .collect::<Result<_, _>>()?;
    match v[..] {
        [a, b, c, d] => NormalizationFactors::new(a, b, c, d).map_err(|e| e.to_string()),
        _ => Err(format!("expected 4 comma-separated values, got {}", v.len())),
    }
}

fn parse_epsilon(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Ok(v) => Err(format!("must be finite and >= 0, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_block(s: &str) -> Result<(usize, usize), String> {
    let (r, c) = s.split_once(',').ok_or("expected ROW,COL")?;
    Ok((
        r.trim().parse().map_err(|e| format!("row: {e}"))?,
        c.trim().parse().map_err(|e| format!("col: {e}"))?,
    ))
}

enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Data(e)
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Replaces `path` only once `contents` is fully written.
fn write_atomic(path: &Path, contents: &[u8]) -> Result<(), Error> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_error(dir, e))?;
    tmp.write_all(contents).map_err(|e| io_error(path, e))?;
    tmp.as_file().sync_all().map_err(|e| io_error(path, e))?;
    tmp.persist(path).map_err(|e| io_error(path, e.error))?;
    Ok(())
}

fn emit(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => write_atomic(p, text.as_bytes())?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(text.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| io_error(Path::new("<stdout>"), e))?;
        }
    }
    Ok(())
}

/// A result body tagged with its document format and version.
#[derive(Serialize)]
struct Document<'a, T: Serialize> {
    format: &'static str,
    version: u32,
    #[serde(flatten)]
    body: &'a T,
}

fn json_document<T: Serialize>(format: &'static str, body: &T) -> String {
    let doc = Document { format, version: 1, body };
    serde_json::to_string_pretty(&doc).expect("documents serialize") + "\n"
}

fn eval_output(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => json_document("freqiqa-eval", report),
        ReportFormat::Kv => format!("# freqiqa-eval v1\n{}", report.to_kv()),
    }
}

/// Image inputs as a manifest; scores are absent for bare images.
fn input_manifest(inputs: &Inputs) -> CliResult<(Manifest, bool)> {
    match &inputs.manifest {
        Some(m) => Ok((read_manifest(m)?, true)),
        None => Ok((images_manifest(&inputs.image), false)),
    }
}

fn images_manifest(images: &[PathBuf]) -> Manifest {
    Manifest {
        samples: images
            .iter()
            .enumerate()
            .map(|(i, p)| Sample {
                image_path: p.clone(),
                subjective_score: 0.0,
                distortion: None,
                content_id: format!("image{i}"),
            })
            .collect(),
        polarity: Polarity::default(),
    }
}

fn report_unloadable(e: &Error) {
    if let Error::Unloadable(list) = e {
        for (path, why) in list {
            eprintln!("freqiqa: cannot load {}: {why}", path.display());
        }
    }
}

fn load_model(path: &Path) -> CliResult<gpr::GprModel> {
    let file = ModelFile::load(path)?;
    file.expect_layout(FEATURE_LAYOUT)?;
    Ok(file.model)
}

fn run_extract(cmd: ExtractCmd) -> CliResult {
    let cfg = cmd.extraction.config();
    let (manifest, scored) = input_manifest(&cmd.inputs)?;
    let debugging = cmd.dump_mscn.is_some() || cmd.dump_block.is_some();
    if debugging && manifest.samples.len() != 1 {
        return Err(usage("--dump-mscn and --dump-block need exactly one input image"));
    }
    let table = harness::extract_all(&manifest, &cfg)?;
    if debugging {
        let img = load_gray(&manifest.samples[0].image_path)?;
        dump(&img, cmd.dump_mscn.as_deref(), cmd.dump_block)?;
    }
    let rows: Vec<FeatureRow> = manifest
        .samples
        .iter()
        .zip(table.features)
        .map(|(s, f)| FeatureRow {
            path: s.image_path.display().to_string(),
            features: f,
            score: scored.then_some(s.subjective_score),
        })
        .collect();
    emit(cmd.out.as_deref(), &format_feature_csv(&rows))
}

fn dump(img: &GrayImage, mscn_path: Option<&Path>, block: Option<(usize, usize)>) -> CliResult {
    let field = mscn(img);
    if let Some(p) = mscn_path {
        write_atomic(p, field.to_ascii_grid().as_bytes())?;
    }
    if let Some((br, bc)) = block {
        let (rows, cols) = block_grid(img.plane());
        if br >= rows || bc >= cols {
            return Err(Error::InvalidArgument(format!("block {br},{bc} outside the {rows}x{cols} block grid")).into());
        }
        eprintln!("gray block {br},{bc}:");
        eprint!("{}", tile_spectrum(img.plane(), br, bc).to_ascii_grid());
        eprintln!("mscn block {br},{bc}:");
        eprint!("{}", tile_spectrum(field.plane(), br, bc).to_ascii_grid());
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary {
    n: usize,
    signal_variance: f64,
    length_scale: f64,
    noise_variance: f64,
    log_marginal_likelihood: f64,
}

fn run_train(cmd: TrainCmd) -> CliResult {
    if let Some(n) = cmd.noise {
        if !(n.is_finite() && n > 0.0) {
            return Err(usage(format!("--noise must be > 0, got {n}")));
        }
    }
    let rows = read_feature_csv(&cmd.features)?;
    let mut x = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    for (i, r) in rows.iter().enumerate() {
        let s = r.score.ok_or_else(|| Error::Format {
            row: Some(i + 1),
            message: format!("{} has no score", r.path),
        })?;
        x.push(r.features.0.to_vec());
        y.push(s);
    }
    let opts = FitOptions {
        restarts: cmd.restarts,
        seed: cmd.seed,
        fixed_noise: cmd.noise,
        ..FitOptions::default()
    };
    let model = gpr::fit(&x, &y, &opts)?;
    let summary = TrainSummary {
        n: model.len(),
        signal_variance: model.params.signal_variance,
        length_scale: model.params.length_scale,
        noise_variance: model.params.noise_variance,
        log_marginal_likelihood: model.log_marginal_likelihood,
    };
    write_atomic(&cmd.out, ModelFile::new(model, FEATURE_LAYOUT).to_json().as_bytes())?;
    emit(None, &json_document("freqiqa-train", &summary))
}

fn run_predict(cmd: PredictCmd) -> CliResult {
    let model = load_model(&cmd.model)?;
    let (names, features): (Vec<String>, Vec<Vec<f64>>) = match &cmd.inputs.features {
        Some(f) => read_feature_csv(f)?.into_iter().map(|r| (r.path, r.features.0.to_vec())).unzip(),
        None => {
            let manifest = images_manifest(&cmd.inputs.image);
            let table = harness::extract_all(&manifest, &cmd.extraction.config())?;
            manifest
                .samples
                .iter()
                .map(|s| s.image_path.display().to_string())
                .zip(table.features.iter().map(|f| f.0.to_vec()))
                .unzip()
        }
    };
    let preds = model.predict_many(&features)?;
    let mut w = String::from("path,score,variance\n");
    for (name, p) in names.iter().zip(preds) {
        w.push_str(&format!("{},{:?},{:?}\n", csv_field(name), p.mean, p.variance));
    }
    emit(None, &w)
}

/// Quotes a CSV field when needed.
fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn run_evaluate(cmd: EvaluateCmd) -> CliResult {
    let model = load_model(&cmd.model)?;
    let manifest = read_manifest(&cmd.manifest)?;
    let table = harness::extract_all(&manifest, &cmd.extraction.config())?;
    let rows: Vec<Vec<f64>> = table.features.iter().map(|f| f.0.to_vec()).collect();
    let pred: Vec<f64> = model.predict_many(&rows)?.iter().map(|p| p.mean).collect();
    let report = evaluate(&pred, &manifest.scores())?;
    emit(None, &eval_output(&report, cmd.format))
}

fn experiment_options(split: &SplitArgs, extraction: &ExtractionArgs) -> ExperimentOptions {
    ExperimentOptions {
        extract: extraction.config(),
        restarts: split.restarts,
        feature_subset: None,
    }
}

fn run_crossval(cmd: CrossvalCmd) -> CliResult {
    let opts = experiment_options(&cmd.split, &cmd.extraction);
    match (&cmd.manifest, &cmd.train_manifest, &cmd.test_manifest) {
        (Some(m), None, None) => {
            let manifest = read_manifest(m)?;
            let result = harness::run_experiment(&manifest, &cmd.split.spec(), &opts)?;
            if cmd.table {
                eprint!("{}", result.to_table());
            }
            emit(None, &json_document("freqiqa-experiment", &result))
        }
        (None, Some(a), Some(b)) => {
            let (train, test) = (read_manifest(a)?, read_manifest(b)?);
            let report = harness::cross_database(&train, &test, cmd.split.seed, &opts)?;
            if cmd.table {
                eprint!("{}", report.to_kv());
            }
            emit(None, &eval_output(&report, ReportFormat::Json))
        }
        _ => Err(usage("give --manifest, or both --train-manifest and --test-manifest")),
    }
}

fn run_ablate(cmd: AblateCmd) -> CliResult {
    let manifest = read_manifest(&cmd.manifest)?;
    let entries = harness::feature_ablation(&manifest, &cmd.split.spec(), &experiment_options(&cmd.split, &cmd.extraction))?;
    let mut s = String::from("feature,median_srocc,degenerate_iterations\n");
    for e in entries {
        s.push_str(&format!("f{},{:?},{}\n", e.feature, e.median_srocc, e.degenerate_iterations));
    }
    emit(None, &s)
}

fn default_levels(kind: SynthKind) -> Vec<f64> {
    match kind {
        SynthKind::Gblur => (1..=10).map(|i| 0.5 * i as f64).collect(),
        SynthKind::Awgn => vec![2.0, 5.0, 10.0, 15.0, 20.0, 30.0],
        SynthKind::Blocky => vec![1.0, 2.0, 4.0, 6.0, 8.0, 12.0],
        SynthKind::Combined => Vec::new(),
    }
}

fn run_synth(cmd: SynthCmd) -> CliResult {
    let contents: Vec<GrayImage> = if cmd.source.is_empty() {
        if cmd.contents == 0 {
            return Err(usage("--contents must be >= 1"));
        }
        if cmd.size < 8 {
            return Err(usage("--size must be >= 8"));
        }
        (0..cmd.contents).map(|i| distort::dead_leaves(cmd.size, cmd.size, cmd.seed.wrapping_add(i as u64))).collect()
    } else {
        let loaded: Vec<_> = cmd.source.iter().map(load_gray).collect();
        let failures: Vec<(PathBuf, String)> = cmd
            .source
            .iter()
            .zip(&loaded)
            .filter_map(|(p, r)| r.as_ref().err().map(|e| (p.clone(), e.to_string())))
            .collect();
        if !failures.is_empty() {
            return Err(Error::Unloadable(failures).into());
        }
        loaded.into_iter().map(|r| r.expect("checked above")).collect()
    };
    let steps: Vec<LadderStep> = match cmd.kind {
        SynthKind::Combined => {
            if !cmd.levels.is_empty() {
                return Err(usage("--levels does not apply to --kind combined"));
            }
            distort::combined_steps()
                .into_iter()
                .map(|mut s| {
                    for d in &mut s.chain {
                        d.seed = cmd.seed;
                    }
                    s
                })
                .collect()
        }
        kind => {
            let levels = if cmd.levels.is_empty() { default_levels(kind) } else { cmd.levels.clone() };
            let dk = match kind {
                SynthKind::Gblur => DistortionKind::Gblur,
                SynthKind::Awgn => DistortionKind::Awgn,
                _ => DistortionKind::Blocky,
            };
            levels
                .into_iter()
                .map(|level| {
                    LadderStep::single(DistortionSpec {
                        seed: cmd.seed,
                        ..DistortionSpec::new(dk, level)
                    })
                })
                .collect()
        }
    };
    for s in &steps {
        for d in &s.chain {
            if !d.level.is_finite() || d.level < 0.0 || (d.kind == DistortionKind::Blocky && d.level < 1.0) {
                return Err(usage(format!("invalid {} level {}", d.kind.as_str(), d.level)));
            }
        }
    }
    distort::build_ladder_steps(&contents, &steps, &cmd.out)?;
    emit(None, &format!("{}\n", cmd.out.join("manifest.csv").display()))
}

fn run_bench(cmd: BenchCmd) -> CliResult {
    if cmd.repeat == 0 {
        return Err(usage("--repeat must be >= 1"));
    }
    let (manifest, _) = input_manifest(&cmd.inputs)?;
    let cfg = cmd.extraction.config();
    // Decoding stays outside the timed region.
    let report = harness::benchmark(&manifest, cmd.repeat, &cfg)?;
    emit(None, &json_document("freqiqa-bench", &report))
}

fn run(cli: Cli) -> CliResult {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(usage("--threads must be >= 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| usage(format!("cannot size thread pool: {e}")))?;
    }
    match cli.command {
        Command::Extract(c) => run_extract(c),
        Command::Train(c) => run_train(c),
        Command::Predict(c) => run_predict(c),
        Command::Evaluate(c) => run_evaluate(c),
        Command::Crossval(c) => run_crossval(c),
        Command::Ablate(c) => run_ablate(c),
        Command::Synth(c) => run_synth(c),
        Command::Bench(c) => run_bench(c),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("freqiqa: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            report_unloadable(&e);
            eprintln!("freqiqa: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

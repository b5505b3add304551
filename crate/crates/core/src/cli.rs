//! The `mss` command line: `fit`, `grid`, `synth` and `eval`.
//!
//! Exit codes: 0 success, 1 data error, 2 usage error, 3 numerical failure.
//! Progress goes to standard error; standard output carries one JSON
//! summary per run.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::claims::{parse_claims_with_domains, parse_domains, ClaimFormat, ClaimSet};
use crate::error::Error as CoreError;
use crate::inference::{fit_with_progress, FitOptions, DEFAULT_SEED};
use crate::priors::Hyperparams;
use crate::reporting::{evaluate, read_label_csv, InferenceReport};
use crate::sampler::{sample_dataset, sample_planted, PlantedGroups, SynthesisShape, SyntheticTruth};
use crate::selection::{grid_search_with_progress, GridSpec};

#[derive(Debug, Parser)]
#[command(name = "mss", version, about = "Truth discovery with latent source groups")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one configuration and write truths, reliabilities and a report.
    Fit(FitArgs),
    /// Fit every configuration of a grid and keep the best by ELBO.
    Grid(GridArgs),
    /// Sample a synthetic claim set with known ground truth.
    Synth(SynthArgs),
    /// Score predicted values against ground truth.
    Eval(EvalArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Json,
    Csv,
}

impl From<FormatArg> for ClaimFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ClaimFormat::Json,
            FormatArg::Csv => ClaimFormat::Csv,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Claims file: `source_id,object_id,value_label` CSV or a JSON array.
    #[arg(long)]
    pub claims: PathBuf,
    /// JSON map `object_id -> [labels]` adding unclaimed labels.
    #[arg(long)]
    pub domains: Option<PathBuf>,
    /// Claims file format; inferred from the extension when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct HyperArgs {
    /// JSON file of hyperparameters; individual flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub b1: Option<f64>,
    #[arg(long)]
    pub b0: Option<f64>,
    #[arg(long)]
    pub eta1: Option<f64>,
    #[arg(long)]
    pub theta1: Option<f64>,
    #[arg(long)]
    pub eta0: Option<f64>,
    #[arg(long)]
    pub theta0: Option<f64>,
    #[arg(long)]
    pub truncation: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Relative ELBO change below which a fit has converged.
    #[arg(long, default_value_t = FitOptions::default().tol)]
    pub tol: f64,
    #[arg(long, default_value_t = FitOptions::default().max_sweeps)]
    pub max_sweeps: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[arg(long, env = "MSS_THREADS")]
    pub threads: Option<usize>,
    /// Plain coordinate ascent, without the per-object and per-group block moves.
    #[arg(long)]
    pub no_block_moves: bool,
    /// Suppress progress on standard error.
    #[arg(long, short)]
    pub quiet: bool,
}

impl RunArgs {
    fn options(&self) -> Result<FitOptions, CliError> {
        if !(self.tol.is_finite() && self.tol >= 0.0) {
            return Err(CliError::Usage(format!("--tol must be a non-negative number, got {}", self.tol)));
        }
        if self.max_sweeps == 0 {
            return Err(CliError::Usage("--max-sweeps must be at least 1".into()));
        }
        Ok(FitOptions {
            max_sweeps: self.max_sweeps,
            tol: self.tol,
            seed: self.seed,
            block_moves: !self.no_block_moves,
        })
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[command(flatten)]
    pub run: RunArgs,
    /// Rows of the top/bottom source table in ranking.txt.
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct GridArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[arg(long)]
    pub out: PathBuf,
    /// JSON grid (`eta_theta_values`, `b_values`, `kappa_values`,
    /// `restarts_per_config`, `truncation`); the built-in grid when omitted.
    #[arg(long)]
    pub grid: Option<PathBuf>,
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub truncation: Option<usize>,
    #[command(flatten)]
    pub run: RunArgs,
    #[arg(long, default_value_t = 10)]
    pub top: usize,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 60)]
    pub sources: usize,
    #[arg(long, default_value_t = 150)]
    pub objects: usize,
    #[arg(long, default_value_t = 3)]
    pub domain_size: usize,
    /// Probability that a source claims any given object.
    #[arg(long, default_value_t = 0.6)]
    pub density: f64,
    /// Fixed groups as `size:reliability,...` instead of stick-breaking;
    /// sizes must add up to --sources.
    #[arg(long)]
    pub planted: Option<String>,
    #[command(flatten)]
    pub hyper: HyperArgs,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output directory; without it the claims go to standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Format of the written claims.
    #[arg(long, value_enum, default_value_t = FormatArg::Csv)]
    pub format: FormatArg,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predictions, `object_id,value_label[,...]` CSV such as truths.csv.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth in the same layout; only these objects are scored.
    #[arg(long)]
    pub truth: PathBuf,
    /// Format of the summary on standard output.
    #[arg(long, value_enum, default_value_t = FormatArg::Json)]
    pub format: FormatArg,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{context}: {source}")]
    Data {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Data { source, .. } | CliError::Core(source) => match source {
                CoreError::Numerical(_) | CoreError::AllFitsFailed(_) => 3,
                CoreError::InvalidHyperparams(_) => 2,
                _ => 1,
            },
        }
    }
}

fn with_path(path: &Path) -> impl FnOnce(CoreError) -> CliError + '_ {
    move |source| CliError::Data { context: path.display().to_string(), source }
}

fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| with_path(path)(e.into()))
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl HyperArgs {
    /// Defaults, then the config file, then individual flags.
    pub fn resolve(&self) -> Result<Hyperparams, CliError> {
        let mut h = match &self.config {
            Some(path) => {
                let bytes = read_file(path)?;
                serde_json::from_slice(&bytes).map_err(|e| with_path(path)(e.into()))?
            }
            None => Hyperparams::default(),
        };
        let overrides = [
            (&mut h.kappa, self.kappa),
            (&mut h.b1, self.b1),
            (&mut h.b0, self.b0),
            (&mut h.eta_reliable, self.eta1),
            (&mut h.theta_reliable, self.theta1),
            (&mut h.eta_unreliable, self.eta0),
            (&mut h.theta_unreliable, self.theta0),
        ];
        for (slot, value) in overrides {
            if let Some(v) = value {
                *slot = v;
            }
        }
        if let Some(l) = self.truncation {
            h.truncation = l;
        }
        h.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(h)
    }
}

struct LoadedClaims {
    claims: ClaimSet,
    provenance: serde_json::Value,
}

fn load_claims(input: &InputArgs) -> Result<LoadedClaims, CliError> {
    let bytes = read_file(&input.claims)?;
    let format = input.format.map_or_else(|| ClaimFormat::from_path(&input.claims), Into::into);
    let (domains, domains_hash) = match &input.domains {
        Some(path) => {
            let raw = read_file(path)?;
            (Some(parse_domains(raw.as_slice()).map_err(with_path(path))?), Some(sha256_hex(&raw)))
        }
        None => (None, None),
    };
    let claims = parse_claims_with_domains(bytes.as_slice(), format, domains.as_ref())
        .map_err(with_path(&input.claims))?;
    let provenance = json!({
        "claims": input.claims.display().to_string(),
        "claims_sha256": sha256_hex(&bytes),
        "domains": input.domains.as_ref().map(|p| p.display().to_string()),
        "domains_sha256": domains_hash,
        "format": format,
        "num_sources": claims.num_sources(),
        "num_objects": claims.num_objects(),
        "num_claims": claims.num_claims(),
    });
    Ok(LoadedClaims { claims, provenance })
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| with_path(dir)(e.into()))
}

fn write_file<F>(path: &Path, body: F) -> Result<(), CliError>
where
    F: FnOnce(&mut std::io::BufWriter<fs::File>) -> crate::error::Result<()>,
{
    let file = fs::File::create(path).map_err(|e| with_path(path)(e.into()))?;
    let mut w = std::io::BufWriter::new(file);
    body(&mut w).map_err(with_path(path))?;
    w.flush().map_err(|e| with_path(path)(e.into()))
}

fn write_text(path: &Path, config: &serde_json::Value, text: &str) -> Result<(), CliError> {
    write_file(path, |w| {
        writeln!(w, "# config={}", serde_json::to_string(config)?)?;
        w.write_all(text.as_bytes())?;
        Ok(())
    })
}

/// report.json, truths.csv, reliability.csv and ranking.txt.
fn write_fit_outputs(dir: &Path, report: &InferenceReport, top: usize) -> Result<(), CliError> {
    write_file(&dir.join("report.json"), |w| report.write_json(w))?;
    write_file(&dir.join("truths.csv"), |w| report.write_truths_csv(w))?;
    write_file(&dir.join("reliability.csv"), |w| report.write_reliability_csv(w))?;
    write_text(&dir.join("ranking.txt"), &report.config, &report.ranking_table(top))
}

fn print_json(value: &serde_json::Value) {
    println!("{}", serde_json::to_string(value).expect("JSON values serialise"));
}

fn run_fit(args: &FitArgs) -> Result<(), CliError> {
    let h = args.hyper.resolve()?;
    let opts = args.run.options()?;
    let input = load_claims(&args.input)?;
    create_dir(&args.out)?;
    let config = json!({
        "command": "fit",
        "version": env!("CARGO_PKG_VERSION"),
        "input": input.provenance,
        "hyperparams": h,
        "options": opts,
    });
    let quiet = args.run.quiet;
    let result = fit_with_progress(&input.claims, &h, &opts, |sweep, elbo| {
        if !quiet {
            eprintln!("sweep {sweep}: elbo {elbo:.6}");
        }
    })?;
    let report = InferenceReport::new(&input.claims, &h, &result, config);
    write_fit_outputs(&args.out, &report, args.top)?;
    if !quiet {
        eprint!("{}", report.ranking_table(args.top.min(5)));
    }
    print_json(&json!({
        "elbo": report.elbo,
        "iterations": report.iterations,
        "converged": report.converged,
        "warnings": report.warnings.len(),
        "out": args.out.display().to_string(),
    }));
    Ok(())
}

fn run_grid(args: &GridArgs) -> Result<(), CliError> {
    let mut grid = match &args.grid {
        Some(path) => {
            let bytes = read_file(path)?;
            serde_json::from_slice::<GridSpec>(&bytes)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?
        }
        None => GridSpec::default(),
    };
    if let Some(r) = args.restarts {
        grid.restarts_per_config = r;
    }
    if let Some(l) = args.truncation {
        grid.truncation = l;
    }
    grid.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if grid.truncation < 2 {
        return Err(CliError::Usage(format!("truncation must be at least 2, got {}", grid.truncation)));
    }
    let opts = args.run.options()?;
    let input = load_claims(&args.input)?;
    create_dir(&args.out)?;

    let quiet = args.run.quiet;
    let result = grid_search_with_progress(&input.claims, &grid, &opts, |done, total| {
        let step = (total / 100).max(1);
        if !quiet && (done % step == 0 || done == total) {
            eprintln!("configurations {done}/{total}");
        }
    })?;
    let config = json!({
        "command": "grid",
        "version": env!("CARGO_PKG_VERSION"),
        "input": input.provenance,
        "grid": grid,
        "options": opts,
        "selected": { "index": result.best_index, "restart": result.best_restart, "hyperparams": result.best },
    });

    let mut leaderboard = result.leaderboard_json();
    leaderboard["config"] = config.clone();
    write_file(&args.out.join("leaderboard.json"), |w| {
        serde_json::to_writer_pretty(w, &leaderboard)?;
        Ok(())
    })?;
    write_text(&args.out.join("leaderboard.txt"), &config, &result.leaderboard_table())?;
    let report = InferenceReport::new(&input.claims, &result.best, &result.fit, config);
    write_fit_outputs(&args.out, &report, args.top)?;

    print_json(&json!({
        "configurations": result.leaderboard.len(),
        "best_index": result.best_index,
        "best": result.best,
        "elbo": report.elbo,
        "out": args.out.display().to_string(),
    }));
    Ok(())
}

fn parse_planted(spec: &str) -> Result<PlantedGroups, CliError> {
    let mut planted = PlantedGroups { sizes: Vec::new(), reliability: Vec::new() };
    for part in spec.split(',') {
        let bad = || CliError::Usage(format!("--planted expects size:reliability pairs, got `{part}`"));
        let (size, u) = part.trim().split_once(':').ok_or_else(bad)?;
        planted.sizes.push(size.trim().parse().map_err(|_| bad())?);
        planted.reliability.push(u.trim().parse().map_err(|_| bad())?);
    }
    Ok(planted)
}

fn write_truth_csv<W: Write>(
    w: W,
    cs: &ClaimSet,
    truth: &SyntheticTruth,
    config: &serde_json::Value,
) -> crate::error::Result<()> {
    let mut w = crate::reporting::provenance_writer(w, config)?;
    let io = |e: csv::Error| CoreError::Io(std::io::Error::other(e));
    w.write_record(["object_id", "value_label"]).map_err(io)?;
    for (m, &t) in truth.true_values.iter().enumerate() {
        let domain = cs.object(m);
        w.write_record([domain.id(), domain.labels()[t].as_str()]).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

fn run_synth(args: &SynthArgs) -> Result<(), CliError> {
    let h = args.hyper.resolve()?;
    let shape = SynthesisShape::uniform(args.objects, args.domain_size, args.density);
    let planted = args.planted.as_deref().map(parse_planted).transpose()?;
    if let Some(p) = &planted {
        let total: usize = p.sizes.iter().sum();
        if total != args.sources {
            return Err(CliError::Usage(format!(
                "--planted sizes add up to {total}, but --sources is {}",
                args.sources
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let (cs, truth) = match &planted {
        Some(p) => sample_planted(&h, p, &shape, &mut rng),
        None => sample_dataset(&h, args.sources, &shape, &mut rng),
    }
    .map_err(|e| match e {
        CoreError::InvalidInput(msg) => CliError::Usage(msg),
        other => other.into(),
    })?;

    let format: ClaimFormat = args.format.into();
    let Some(dir) = &args.out else {
        let stdout = std::io::stdout();
        let mut lock = stdout.lock();
        cs.write(&mut lock, format)?;
        if format == ClaimFormat::Json {
            writeln!(lock).map_err(CoreError::from)?;
        }
        return Ok(());
    };

    let config = json!({
        "command": "synth",
        "version": env!("CARGO_PKG_VERSION"),
        "hyperparams": h,
        "sources": args.sources,
        "objects": args.objects,
        "domain_size": args.domain_size,
        "density": args.density,
        "planted": planted.as_ref().map(|p| json!({ "sizes": p.sizes, "reliability": p.reliability })),
        "seed": args.seed,
        "format": format,
    });
    create_dir(dir)?;
    let claims_name = match format {
        ClaimFormat::Csv => "claims.csv",
        ClaimFormat::Json => "claims.json",
    };
    write_file(&dir.join(claims_name), |w| cs.write(w, format))?;
    let domains: BTreeMap<&str, &[String]> =
        cs.objects().iter().map(|o| (o.id(), o.labels())).collect();
    write_file(&dir.join("domains.json"), |w| {
        serde_json::to_writer_pretty(w, &domains)?;
        Ok(())
    })?;
    write_file(&dir.join("truth.json"), |w| {
        serde_json::to_writer_pretty(w, &json!({ "config": config, "truth": truth }))?;
        Ok(())
    })?;
    write_file(&dir.join("truth.csv"), |w| write_truth_csv(w, &cs, &truth, &config))?;

    print_json(&json!({
        "sources": cs.num_sources(),
        "objects": cs.num_objects(),
        "claims": cs.num_claims(),
        "out": dir.display().to_string(),
    }));
    Ok(())
}

fn run_eval(args: &EvalArgs) -> Result<(), CliError> {
    let pred = read_label_csv(read_file(&args.pred)?.as_slice()).map_err(with_path(&args.pred))?;
    let truth = read_label_csv(read_file(&args.truth)?.as_slice()).map_err(with_path(&args.truth))?;
    let eval = evaluate(&pred, &truth).map_err(with_path(&args.truth))?;
    match args.format {
        FormatArg::Json => print_json(&serde_json::to_value(&eval).map_err(CoreError::from)?),
        FormatArg::Csv => {
            let opt = |v: Option<f64>| v.map_or_else(String::new, |x| x.to_string());
            println!("covered,correct,accuracy,macro_precision,macro_recall");
            println!(
                "{},{},{},{},{}",
                eval.covered,
                eval.correct,
                eval.accuracy,
                opt(eval.macro_precision),
                opt(eval.macro_recall)
            );
        }
    }
    Ok(())
}

fn threads_of(command: &Command) -> Option<usize> {
    match command {
        Command::Fit(a) => a.run.threads,
        Command::Grid(a) => a.run.threads,
        Command::Synth(_) | Command::Eval(_) => None,
    }
}

/// Run a parsed command on a pool of the requested size.
pub fn execute(cli: &Cli) -> Result<(), CliError> {
    let body = || match &cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Grid(a) => run_grid(a),
        Command::Synth(a) => run_synth(a),
        Command::Eval(a) => run_eval(a),
    };
    match threads_of(&cli.command) {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::Usage(format!("cannot start {n} threads: {e}")))?
            .install(body),
        None => body(),
    }
}

/// Parse `args` (program name first), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parser_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("h.json");
        fs::write(&path, r#"{"kappa": 1.0, "eta_reliable": 10.0}"#).unwrap();
        let args = HyperArgs { config: Some(path), kappa: Some(3.0), ..HyperArgs::default() };
        let h = args.resolve().unwrap();
        assert_eq!(h.kappa, 3.0);
        assert_eq!(h.eta_reliable, 10.0);
        assert_eq!(h.b1, Hyperparams::default().b1);
    }

    #[test]
    fn invalid_hyperparameters_are_usage_errors() {
        let args = HyperArgs { eta1: Some(1.0), theta1: Some(2.0), ..HyperArgs::default() };
        assert_eq!(args.resolve().unwrap_err().exit_code(), 2);
    }

    #[test]
    fn planted_spec() {
        let p = parse_planted("30:0, 15:0.9,15:1").unwrap();
        assert_eq!(p.sizes, vec![30, 15, 15]);
        assert_eq!(p.reliability, vec![0.0, 0.9, 1.0]);
        assert!(parse_planted("30").is_err());
        assert!(parse_planted("a:1").is_err());
    }

    #[test]
    fn error_classes() {
        assert_eq!(CliError::from(CoreError::Numerical("x".into())).exit_code(), 3);
        assert_eq!(CliError::from(CoreError::EmptyInput).exit_code(), 1);
        assert_eq!(CliError::Usage("x".into()).exit_code(), 2);
    }
}

//! `pki`: synthesize feature streams, run the incremental protocol, check
//! gradients and merge result tables.
//!
//! Exit codes: 0 success, 1 gradient check over tolerance, 2 usage or
//! configuration error (including refusing to overwrite results), 3 runtime
//! or protocol error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use clap::{Args, Parser, Subcommand, ValueEnum};

use pki_core::checkpoint::Checkpoint;
use pki_core::gradcheck::{run_gradcheck, GradCheckConfig, TensorCheck};
use pki_core::manifest::{read_stream, stream_paths, write_stream};
use pki_core::report::parse_table;
use pki_core::sweep::KChoice;
use pki_core::trainer::{resume_protocol, run_protocol_with};
use pki_core::{
    make_synthetic_stream, AccuracyMatrix, EnsembleMode, InitMode, ProjectorDims, Report, ReportRow, SessionLayout,
    SessionStream, SynthSpec, TableFormat, TrainConfig,
};

const DEFAULT_OUT_ROOT: &str = "pki-out";

#[derive(Parser)]
#[command(
    name = "pki",
    version,
    about = "Projector-ensemble few-shot class-incremental learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic stream as per-session PKIF files plus a manifest.
    Synth(SynthArgs),
    /// Run the session protocol for one or more seeds (and group sizes).
    Run(RunArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradArgs),
    /// Merge result directories into one table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    /// 20 base classes, 4 sessions of 5-way 5-shot, d=32.
    Separable,
    /// 60 base classes, 8 sessions of 5-way 5-shot, d=32.
    CifarLike,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Pki,
    Pkiv1,
    Pkiv2,
}

#[derive(Clone, Copy, ValueEnum)]
enum InitArg {
    Random,
    Previous,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Csv,
    Md,
}

impl From<FormatArg> for TableFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Csv => TableFormat::Csv,
            FormatArg::Md => TableFormat::Markdown,
        }
    }
}

fn extension(f: FormatArg) -> &'static str {
    match f {
        FormatArg::Csv => "csv",
        FormatArg::Md => "md",
    }
}

#[derive(Args)]
struct SynthArgs {
    /// TOML synthetic-stream spec; defaults to the chosen preset.
    #[arg(long, conflicts_with = "preset")]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "separable")]
    preset: Preset,
    /// Overrides the spec's generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory [default: $PKI_OUT_DIR/stream].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

#[derive(Args)]
struct StreamSource {
    /// Stream directory (or manifest file) written by `pki synth`.
    #[arg(long, conflicts_with_all = ["synth", "preset"])]
    stream: Option<PathBuf>,
    /// TOML synthetic-stream spec, generated in memory.
    #[arg(long, conflicts_with = "preset")]
    synth: Option<PathBuf>,
    /// Built-in synthetic stream used when no other source is given.
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Generator seed for `--preset`.
    #[arg(long, default_value_t = 1)]
    stream_seed: u64,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    source: StreamSource,
    /// TOML training config; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    /// PKIV-2 group size, or a comma list such as `1,2,3,4,T` for a sweep.
    #[arg(long)]
    k: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, conflicts_with = "seeds")]
    seed: Option<u64>,
    /// Comma-separated seeds, one result directory each.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long, value_enum)]
    init: Option<InitArg>,
    /// Incremental-session iterations.
    #[arg(long)]
    iters: Option<usize>,
    /// Continue from a checkpoint; its config is used unchanged.
    #[arg(long, conflicts_with_all = ["config", "mode", "k", "alpha", "seed", "seeds", "init", "iters"])]
    resume: Option<PathBuf>,
    /// Output directory [default: $PKI_OUT_DIR/run].
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
    /// Summary table format.
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
}

#[derive(Args)]
struct GradArgs {
    /// Feature dimension d.
    #[arg(long, default_value_t = 8)]
    dim: usize,
    /// Hidden width [default: d].
    #[arg(long)]
    hidden: Option<usize>,
    /// Embedding width [default: d].
    #[arg(long)]
    output: Option<usize>,
    #[arg(long, default_value_t = 6)]
    classes: usize,
    /// Frozen sessions in front of the trainable projector.
    #[arg(long, default_value_t = 3)]
    sessions: usize,
    #[arg(long, value_enum, default_value = "pki")]
    mode: ModeArg,
    #[arg(long, default_value_t = 3)]
    k: usize,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
    /// Largest accepted relative error.
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    /// Finite-difference step.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Result directories: a seed directory with accuracy.csv, or a run
    /// directory whose seed_* subdirectories are averaged.
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
    /// Row (name or 0-based index) the improvement column is measured against.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Write the table to this file instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    overwrite: bool,
}

enum CliError {
    Usage(String),
    Runtime(String),
    GradientMismatch(String),
}

type CliResult<T> = Result<T, CliError>;

fn usage(e: impl std::fmt::Display) -> CliError {
    CliError::Usage(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn out_root() -> PathBuf {
    std::env::var_os("PKI_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| DEFAULT_OUT_ROOT.into())
}

fn refuse_existing<'a>(paths: impl IntoIterator<Item = &'a Path>, overwrite: bool) -> CliResult<()> {
    if overwrite {
        return Ok(());
    }
    if let Some(p) = paths.into_iter().find(|p| p.exists()) {
        return Err(usage(format!(
            "{} already exists; pass --overwrite to replace it",
            p.display()
        )));
    }
    Ok(())
}

fn preset_spec(preset: Preset, seed: u64) -> SynthSpec {
    let mut spec = SynthSpec::separable(seed);
    if let Preset::CifarLike = preset {
        spec.layout = SessionLayout::CIFAR_LIKE;
    }
    spec
}

fn load_spec(path: &Path) -> CliResult<SynthSpec> {
    let text = fs::read_to_string(path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    let spec: SynthSpec = toml::from_str(&text).map_err(|e| usage(format!("{}: {e}", path.display())))?;
    spec.validate().map_err(usage)?;
    Ok(spec)
}

fn cmd_synth(args: SynthArgs) -> CliResult<()> {
    let mut spec = match &args.spec {
        Some(p) => load_spec(p)?,
        None => preset_spec(args.preset, 1),
    };
    if let Some(s) = args.seed {
        spec.seed = s;
    }
    spec.validate().map_err(usage)?;
    let dir = args.out.unwrap_or_else(|| out_root().join("stream"));
    let paths = stream_paths(&dir, &spec.layout);
    refuse_existing(paths.iter().map(PathBuf::as_path), args.overwrite)?;
    let stream = make_synthetic_stream(&spec).map_err(runtime)?;
    write_stream(&dir, &stream, Some(&spec)).map_err(runtime)?;
    println!(
        "wrote {} sessions ({} classes, d={}) to {}",
        stream.sessions.len(),
        spec.layout.total_classes(),
        spec.d,
        dir.display()
    );
    Ok(())
}

fn load_source(src: &StreamSource) -> CliResult<SessionStream> {
    if let Some(dir) = &src.stream {
        return read_stream(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())));
    }
    let spec = match &src.synth {
        Some(p) => load_spec(p)?,
        None => preset_spec(src.preset.unwrap_or(Preset::Separable), src.stream_seed),
    };
    make_synthetic_stream(&spec).map_err(runtime)
}

/// One protocol configuration of a run, and where its seeds go.
struct Variant {
    name: String,
    dir: PathBuf,
    config: TrainConfig,
}

fn build_variants(args: &RunArgs, sessions: usize, out: &Path) -> CliResult<(Vec<Variant>, Vec<u64>)> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p).map_err(|e| usage(format!("{}: {e}", p.display())))?,
        None => TrainConfig::default(),
    };
    if let Some(a) = args.alpha {
        cfg.alpha = a;
    }
    if let Some(i) = args.init {
        cfg.init_mode = match i {
            InitArg::Random => InitMode::Random,
            InitArg::Previous => InitMode::Previous,
        };
    }
    if let Some(n) = args.iters {
        cfg.incr_iters = n;
    }
    let ks = args.k.as_deref().map(KChoice::parse_list).transpose().map_err(usage)?;
    let mode = match (args.mode, &ks) {
        (Some(ModeArg::Pki), Some(_)) | (Some(ModeArg::Pkiv1), Some(_)) => {
            return Err(usage("--k only applies to --mode pkiv2"));
        }
        (Some(ModeArg::Pki), None) => Some(EnsembleMode::Pki),
        (Some(ModeArg::Pkiv1), None) => Some(EnsembleMode::Pkiv1),
        (Some(ModeArg::Pkiv2), _) | (None, Some(_)) => Some(EnsembleMode::Pkiv2 { k: cfg.k }),
        (None, None) => None,
    };
    if let Some(m) = mode {
        cfg.set_mode(m);
    }
    let seeds = match (&args.seeds, args.seed) {
        (Some(list), _) if !list.is_empty() => list.clone(),
        (_, Some(s)) => vec![s],
        _ => vec![cfg.seed],
    };
    cfg.validate().map_err(usage)?;

    let variants = match ks {
        Some(ks) if ks.len() > 1 => ks
            .iter()
            .map(|k| {
                let mut c = cfg.clone();
                c.set_mode(EnsembleMode::Pkiv2 { k: k.resolve(sessions) });
                let tag = k.to_string().replace('=', "_");
                Variant {
                    name: k.to_string(),
                    dir: out.join(tag),
                    config: c,
                }
            })
            .collect(),
        Some(ks) => {
            cfg.set_mode(EnsembleMode::Pkiv2 {
                k: ks[0].resolve(sessions),
            });
            vec![Variant {
                name: cfg.label(),
                dir: out.to_path_buf(),
                config: cfg,
            }]
        }
        None => vec![Variant {
            name: cfg.label(),
            dir: out.to_path_buf(),
            config: cfg,
        }],
    };
    Ok((variants, seeds))
}

fn seed_dir(variant_dir: &Path, seed: u64) -> PathBuf {
    variant_dir.join(format!("seed_{seed}"))
}

/// Writes the per-session checkpoint and, after the last session, the CSV.
fn save_session(dir: &Path, state: &pki_core::ModelState, acc: &AccuracyMatrix) -> pki_core::Result<()> {
    let ckpt_dir = dir.join("checkpoints");
    fs::create_dir_all(&ckpt_dir)?;
    Checkpoint::new(state.clone(), acc.clone()).save(ckpt_dir.join(format!("session_{:02}.json", state.session)))?;
    fs::write(dir.join("accuracy.csv"), acc.to_csv())?;
    Ok(())
}

fn run_seed(stream: &SessionStream, cfg: &TrainConfig, dir: &Path) -> pki_core::Result<AccuracyMatrix> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("config.toml"), cfg.to_toml_string())?;
    let (_, acc) = run_protocol_with(stream, cfg, |state, acc| save_session(dir, state, acc))?;
    Ok(acc)
}

fn mean_percent(runs: &[AccuracyMatrix]) -> CliResult<Vec<f64>> {
    let n = runs[0].sessions();
    if runs.iter().any(|r| r.sessions() != n) {
        return Err(runtime("result directories disagree on the number of sessions"));
    }
    Ok((0..n)
        .map(|t| runs.iter().map(|r| 100.0 * r.per_session[t]).sum::<f64>() / runs.len() as f64)
        .collect())
}

fn write_summary(out: &Path, report: &Report, format: FormatArg) -> CliResult<PathBuf> {
    let path = out.join(format!("summary.{}", extension(format)));
    let table = report.emit_table(format.into()).map_err(runtime)?;
    fs::create_dir_all(out).map_err(runtime)?;
    fs::write(&path, &table).map_err(runtime)?;
    print!("{table}");
    Ok(path)
}

fn cmd_run(args: RunArgs) -> CliResult<()> {
    let out = args.out.clone().unwrap_or_else(|| out_root().join("run"));
    if let Some(ckpt_path) = &args.resume {
        let ckpt = Checkpoint::load(ckpt_path).map_err(|e| usage(format!("{}: {e}", ckpt_path.display())))?;
        let dir = seed_dir(&out, ckpt.state.config.seed);
        let summary = out.join(format!("summary.{}", extension(args.format)));
        refuse_existing([dir.join("accuracy.csv").as_path(), summary.as_path()], args.overwrite)?;
        let stream = load_source(&args.source)?;
        fs::create_dir_all(&dir).map_err(runtime)?;
        fs::write(dir.join("config.toml"), ckpt.state.config.to_toml_string()).map_err(runtime)?;
        let label = ckpt.state.config.label();
        let (_, acc) =
            resume_protocol(ckpt.state, ckpt.accuracy, &stream, |s, a| save_session(&dir, s, a)).map_err(runtime)?;
        let mut report = Report::default();
        report.push(ReportRow::new(label, acc.percent()));
        write_summary(&out, &report, args.format)?;
        return Ok(());
    }

    let stream = load_source(&args.source)?;
    let (variants, seeds) = build_variants(&args, stream.sessions.len(), &out)?;
    let summary = out.join(format!("summary.{}", extension(args.format)));
    let mut targets = vec![summary];
    for v in &variants {
        targets.extend(seeds.iter().map(|&s| seed_dir(&v.dir, s)));
    }
    refuse_existing(targets.iter().map(PathBuf::as_path), args.overwrite)?;

    let mut report = Report::default();
    for v in &variants {
        // seeds are independent jobs
        let results: Vec<pki_core::Result<AccuracyMatrix>> = thread::scope(|scope| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    let mut cfg = v.config.clone();
                    cfg.seed = seed;
                    let dir = seed_dir(&v.dir, seed);
                    let stream = &stream;
                    scope.spawn(move || run_seed(stream, &cfg, &dir))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("seed job panicked"))
                .collect()
        });
        let mut runs = Vec::with_capacity(results.len());
        for (seed, r) in seeds.iter().zip(results) {
            let acc = r.map_err(|e| runtime(format!("{} seed {seed}: {e}", v.name)))?;
            eprintln!(
                "{} seed {seed}: final joint accuracy {:.2}%",
                v.name,
                100.0 * acc.per_session.last().copied().unwrap_or(0.0)
            );
            runs.push(acc);
        }
        report.push(ReportRow::new(v.name.clone(), mean_percent(&runs)?));
    }
    write_summary(&out, &report, args.format)?;
    Ok(())
}

fn cmd_gradcheck(args: GradArgs) -> CliResult<()> {
    let mode = match args.mode {
        ModeArg::Pki => EnsembleMode::Pki,
        ModeArg::Pkiv1 => EnsembleMode::Pkiv1,
        ModeArg::Pkiv2 => EnsembleMode::parse("pkiv2", args.k).map_err(usage)?,
    };
    if !(args.tol >= 0.0) {
        return Err(usage("--tol must be >= 0"));
    }
    let dims = ProjectorDims::new(
        args.dim,
        args.hidden.unwrap_or(args.dim),
        args.output.unwrap_or(args.dim),
    );
    let mut merged: Vec<TensorCheck> = Vec::new();
    for &seed in &args.seeds {
        let mut cfg = GradCheckConfig {
            dims,
            classes: args.classes,
            frozen_sessions: args.sessions,
            mode,
            alpha: args.alpha,
            seed,
            ..GradCheckConfig::default()
        };
        if let Some(h) = args.step {
            cfg.step = h;
        }
        let report = run_gradcheck(&cfg).map_err(usage)?;
        if merged.is_empty() {
            merged = report.tensors;
        } else {
            for (m, t) in merged.iter_mut().zip(report.tensors) {
                m.max_rel_error = m.max_rel_error.max(t.max_rel_error);
                m.checked += t.checked;
                m.skipped += t.skipped;
            }
        }
    }
    println!(
        "{:<14} {:>14} {:>8} {:>8}",
        "tensor", "max_rel_error", "checked", "skipped"
    );
    for t in &merged {
        println!(
            "{:<14} {:>14.3e} {:>8} {:>8}",
            t.name, t.max_rel_error, t.checked, t.skipped
        );
    }
    let bad: Vec<&str> = merged
        .iter()
        .filter(|t| !(t.max_rel_error < args.tol))
        .map(|t| t.name.as_str())
        .collect();
    if bad.is_empty() {
        println!("gradient check passed (tol {:e})", args.tol);
        Ok(())
    } else {
        Err(CliError::GradientMismatch(format!(
            "gradient check failed (tol {:e}): {}",
            args.tol,
            bad.join(", ")
        )))
    }
}

fn load_accuracy(path: &Path) -> CliResult<AccuracyMatrix> {
    let text = fs::read_to_string(path).map_err(|e| runtime(format!("{}: {e}", path.display())))?;
    AccuracyMatrix::from_csv(&text).map_err(|e| runtime(format!("{}: {e}", path.display())))
}

/// Accuracy runs under a result directory: its own CSV, or every seed_* CSV.
fn collect_runs(dir: &Path) -> CliResult<Vec<AccuracyMatrix>> {
    let direct = dir.join("accuracy.csv");
    if direct.is_file() {
        return Ok(vec![load_accuracy(&direct)?]);
    }
    let entries = fs::read_dir(dir).map_err(|e| runtime(format!("{}: {e}", dir.display())))?;
    let mut csvs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("seed_"))
        .map(|e| e.path().join("accuracy.csv"))
        .filter(|p| p.is_file())
        .collect();
    csvs.sort();
    if csvs.is_empty() {
        return Err(runtime(format!("{} contains no accuracy.csv results", dir.display())));
    }
    csvs.iter().map(|p| load_accuracy(p)).collect()
}

fn row_name(dir: &Path) -> String {
    dir.canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_else(|| dir.display().to_string())
}

fn cmd_report(args: ReportArgs) -> CliResult<()> {
    let mut report = Report::default();
    for dir in &args.dirs {
        let runs = collect_runs(dir)?;
        report.push(ReportRow::new(row_name(dir), mean_percent(&runs)?));
    }
    if let Some(r) = &args.reference {
        let idx = match r.parse::<usize>() {
            Ok(i) if i < report.rows.len() => i,
            _ => report
                .rows
                .iter()
                .position(|row| &row.name == r)
                .ok_or_else(|| usage(format!("--reference {r:?} matches no row")))?,
        };
        report.reference = Some(idx);
    }
    let table = report.emit_table(args.format.into()).map_err(runtime)?;
    parse_table(&table).map_err(runtime)?;
    match &args.out {
        Some(path) => {
            refuse_existing([path.as_path()], args.overwrite)?;
            fs::write(path, &table).map_err(runtime)?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Run(a) => cmd_run(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Report(a) => cmd_report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::GradientMismatch(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}

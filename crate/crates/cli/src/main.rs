//! `crowdmap`: density-map generation, greedy reconstruction and evaluation
//! from the command line.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use crowdmap::bench::{run_bench, BenchConfig};
use crowdmap::dataset::{filter_scenes, parse_time, preset_rule, DatasetId, FilterRule};
use crowdmap::io::{
    decode_dmap, decode_pgm, encode_dmap, load_scenes_jsonl, read_heads_csv, write_heads_csv,
    write_trace_jsonl,
};
use crowdmap::metrics::{evaluate_pair, EvalReport, ImageEval, NormPolicy, QualityParams};
use crowdmap::synth::separated_heads;
use crowdmap::{
    generate_density_map, make_window, probability_map, reconstruct, BorderPolicy, DensityMap,
    Error, GaussianWindow, Mode, Point, DEFAULT_K, DEFAULT_SIGMA,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

#[derive(Parser, Debug)]
#[command(name = "crowdmap", version, about = "Crowd density maps: generate, reconstruct, evaluate")]
struct Cli {
    /// Worker threads (0 = one per core)
    #[arg(long, global = true, env = "CROWDMAP_THREADS", default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the Gaussian window as a DMAP file
    Window {
        #[command(flatten)]
        window: WindowOpts,
        #[arg(long, value_parser = path_arg)]
        out: PathBuf,
    },
    /// Stamp a head list into a density map
    Generate {
        /// CSV with an `x,y` header
        #[arg(long, value_parser = path_arg)]
        heads: PathBuf,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        width: usize,
        #[command(flatten)]
        window: WindowOpts,
        #[arg(long, value_enum, default_value_t = Border::Truncate)]
        border: Border,
        #[arg(long, value_parser = path_arg)]
        out: PathBuf,
    },
    /// Compute the head-probability map of a coarse density map
    Probmap {
        /// DMAP or PGM input
        #[arg(long, value_parser = path_arg)]
        coarse: PathBuf,
        #[command(flatten)]
        window: WindowOpts,
        #[arg(long, value_parser = path_arg)]
        out: PathBuf,
    },
    /// Extract head locations and the pseudo density map from a coarse map
    Reconstruct {
        /// DMAP or PGM input
        #[arg(long, value_parser = path_arg)]
        coarse: PathBuf,
        #[command(flatten)]
        window: WindowOpts,
        /// Defaults to `<coarse stem>.heads.csv`
        #[arg(long, value_parser = path_arg)]
        heads_out: Option<PathBuf>,
        /// Defaults to `<coarse stem>.pseudo.dmap`
        #[arg(long, value_parser = path_arg)]
        pseudo_out: Option<PathBuf>,
        /// Also write the per-step selection trace as JSONL
        #[arg(long, value_parser = path_arg)]
        trace: Option<PathBuf>,
        /// Extract exactly this many heads instead of int(sum)
        #[arg(long)]
        count: Option<usize>,
        #[arg(long, value_enum, default_value_t = ModeArg::Incremental)]
        mode: ModeArg,
    },
    /// Score predicted maps against ground truth, paired by file name
    Eval {
        #[arg(long, value_parser = path_arg)]
        pred: PathBuf,
        #[arg(long, value_parser = path_arg)]
        gt: PathBuf,
        #[arg(long, value_enum, default_value_t = Norm::GtMax255)]
        norm: Norm,
        /// Dynamic range used by PSNR and SSIM
        #[arg(long, default_value_t = 255.0)]
        range: f64,
        /// Write the JSON report here instead of stdout
        #[arg(long, value_parser = path_arg)]
        out: Option<PathBuf>,
    },
    /// Select scene ids matching a filter rule
    Filter {
        /// Scene metadata, one JSON object per line
        #[arg(long, value_parser = path_arg)]
        scenes: PathBuf,
        #[arg(long, value_parser = dataset_arg, conflicts_with_all = ["levels", "time", "weathers", "count", "ratio"])]
        preset: Option<DatasetId>,
        #[command(flatten)]
        rule: RuleOpts,
        /// Write ids here instead of stdout
        #[arg(long, value_parser = path_arg)]
        out: Option<PathBuf>,
    },
    /// Self-test: random separated heads, generate, reconstruct, compare
    Roundtrip {
        #[arg(long, default_value_t = 50)]
        heads: usize,
        #[arg(long, default_value_t = 512)]
        size: usize,
        /// Minimum Chebyshev distance between heads
        #[arg(long, default_value_t = 16)]
        sep: usize,
        /// Minimum distance from the raster border
        #[arg(long, default_value_t = 8)]
        margin: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        trials: usize,
        #[command(flatten)]
        window: WindowOpts,
        #[arg(long, value_enum, default_value_t = ModeArg::Incremental)]
        mode: ModeArg,
    },
    /// Time naive and incremental extraction
    Bench {
        /// Comma-separated HEIGHTxWIDTH list
        #[arg(long, value_delimiter = ',', value_parser = size_arg, default_value = "540x960,1080x1920")]
        sizes: Vec<(usize, usize)>,
        #[arg(long, default_value_t = 1000)]
        heads: usize,
        #[arg(long, default_value_t = 2)]
        naive_heads: usize,
        #[arg(long, default_value_t = 1e-4)]
        noise: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_K)]
        k: usize,
        #[arg(long, default_value_t = DEFAULT_SIGMA)]
        sigma: f64,
        #[arg(long, value_parser = path_arg)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct WindowOpts {
    /// Window side length (odd)
    #[arg(long, default_value_t = DEFAULT_K)]
    k: usize,
    #[arg(long, default_value_t = DEFAULT_SIGMA)]
    sigma: f64,
    /// Raw kernel with center value 1 instead of the unit-mass window
    #[arg(long)]
    unnormalized: bool,
}

impl WindowOpts {
    fn build(&self) -> Result<GaussianWindow, Failure> {
        make_window(self.k, self.sigma, !self.unnormalized).map_err(Failure::usage)
    }
}

#[derive(Args, Debug, Clone)]
struct RuleOpts {
    /// Comma-separated density levels
    #[arg(long, value_delimiter = ',', required_unless_present = "preset")]
    levels: Vec<u8>,
    /// Inclusive HH:MM-HH:MM
    #[arg(long, required_unless_present = "preset")]
    time: Option<String>,
    /// Comma-separated weather codes
    #[arg(long, value_delimiter = ',', required_unless_present = "preset")]
    weathers: Vec<u8>,
    /// Inclusive LO-HI head count
    #[arg(long, required_unless_present = "preset")]
    count: Option<String>,
    /// Inclusive LO-HI crowd ratio
    #[arg(long, required_unless_present = "preset")]
    ratio: Option<String>,
}

impl RuleOpts {
    fn build(&self) -> Result<FilterRule, Failure> {
        let (t0, t1) = split_range(self.time.as_deref().unwrap_or_default())?;
        let time = (
            parse_time(t0).map_err(Failure::usage)?,
            parse_time(t1).map_err(Failure::usage)?,
        );
        let count = parse_range(self.count.as_deref().unwrap_or_default())?;
        let ratio = parse_range(self.ratio.as_deref().unwrap_or_default())?;
        FilterRule::new(self.levels.iter().copied(), time, self.weathers.iter().copied(), count, ratio)
            .map_err(Failure::usage)
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Border {
    Truncate,
    Renormalize,
}

impl From<Border> for BorderPolicy {
    fn from(b: Border) -> Self {
        match b {
            Border::Truncate => BorderPolicy::Truncate,
            Border::Renormalize => BorderPolicy::Renormalize,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum ModeArg {
    Incremental,
    Naive,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Incremental => Mode::Incremental,
            ModeArg::Naive => Mode::Naive,
        }
    }
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Norm {
    #[value(name = "gt-max-255")]
    GtMax255,
    None,
}

impl From<Norm> for NormPolicy {
    fn from(n: Norm) -> Self {
        match n {
            Norm::GtMax255 => NormPolicy::GtMax255,
            Norm::None => NormPolicy::None,
        }
    }
}

fn path_arg(s: &str) -> Result<PathBuf, String> {
    if s.is_empty() {
        Err("path must not be empty".into())
    } else {
        Ok(PathBuf::from(s))
    }
}

fn dataset_arg(s: &str) -> Result<DatasetId, String> {
    s.parse::<DatasetId>().map_err(|e| e.to_string())
}

fn size_arg(s: &str) -> Result<(usize, usize), String> {
    let (h, w) = s.split_once('x').ok_or_else(|| format!("expected HEIGHTxWIDTH, got `{s}`"))?;
    let parse = |v: &str| v.trim().parse::<usize>().map_err(|e| format!("`{s}`: {e}"));
    Ok((parse(h)?, parse(w)?))
}

fn split_range(s: &str) -> Result<(&str, &str), Failure> {
    s.split_once('-')
        .map(|(a, b)| (a.trim(), b.trim()))
        .ok_or_else(|| Failure::Usage(format!("expected LO-HI, got `{s}`")))
}

fn parse_range<T: FromStr>(s: &str) -> Result<(T, T), Failure>
where
    T::Err: fmt::Display,
{
    let (a, b) = split_range(s)?;
    let parse = |v: &str| v.parse::<T>().map_err(|e| Failure::Usage(format!("`{v}` in `{s}`: {e}")));
    Ok((parse(a)?, parse(b)?))
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Data { context: Option<PathBuf>, error: Error },
    Internal(String),
}

impl Failure {
    fn usage(e: Error) -> Self {
        Failure::Usage(e.to_string())
    }

    fn at(path: &Path) -> impl FnOnce(Error) -> Failure + '_ {
        move |error| Failure::Data {
            context: Some(path.to_path_buf()),
            error,
        }
    }

    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 2,
            Failure::Data { .. } => 3,
            Failure::Internal(_) => 4,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Failure::Usage(_) => "usage",
            Failure::Data { error, .. } => error.kind(),
            Failure::Internal(_) => "internal",
        }
    }
}

impl From<Error> for Failure {
    fn from(error: Error) -> Self {
        Failure::Data { context: None, error }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Usage(m) | Failure::Internal(m) => f.write_str(m),
            Failure::Data { context: Some(p), error } => write!(f, "{}: {error}", p.display()),
            Failure::Data { context: None, error } => write!(f, "{error}"),
        }
    }
}

/// Artifacts are staged in memory and only written once the command has
/// succeeded, so a failed run leaves nothing half-written behind.
#[derive(Default)]
struct Output {
    files: Vec<(PathBuf, Vec<u8>)>,
    stdout: String,
    verdict: Option<Failure>,
}

impl Output {
    fn file(&mut self, path: PathBuf, bytes: Vec<u8>) {
        self.files.push((path, bytes));
    }

    /// Sends `text` to `path` if given, otherwise to stdout.
    fn text(&mut self, path: Option<PathBuf>, text: String) {
        match path {
            Some(p) => self.file(p, text.into_bytes()),
            None => self.stdout = text,
        }
    }

    fn commit(&self) -> Result<(), Failure> {
        for (i, (path, bytes)) in self.files.iter().enumerate() {
            if let Err(e) = fs::write(path, bytes) {
                for (written, _) in &self.files[..=i] {
                    let _ = fs::remove_file(written);
                }
                return Err(Failure::at(path)(e.into()));
            }
        }
        Ok(())
    }
}

fn to_json<T: Serialize>(value: &T) -> Result<String, Failure> {
    serde_json::to_string_pretty(value)
        .map(|s| s + "\n")
        .map_err(|e| Failure::Internal(format!("serializing report: {e}")))
}

fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure::at(path)(e.into()))
}

fn load_map(path: &Path) -> Result<DensityMap, Failure> {
    let bytes = read(path)?;
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm { decode_pgm(&bytes) } else { decode_dmap(&bytes) }.map_err(Failure::at(path))
}

fn dmap_bytes(map: &DensityMap) -> Result<Vec<u8>, Failure> {
    Ok(encode_dmap(map)?)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.{suffix}"))
}

#[derive(Serialize)]
struct ImageReport {
    name: String,
    truth_count: f64,
    predicted_count: f64,
    #[serde(flatten)]
    report: EvalReport,
}

#[derive(Serialize)]
struct EvalOutput {
    images: Vec<ImageReport>,
    aggregate: EvalReport,
}

#[derive(Serialize)]
struct RoundtripReport {
    seed: u64,
    size: usize,
    sep: usize,
    margin: usize,
    trials: usize,
    total_heads: usize,
    exact: usize,
    count_mismatches: usize,
    /// Largest Chebyshev distance from a true head to its nearest recovered head.
    max_pixel_error: Option<usize>,
    all_exact: bool,
}

fn dmap_names(dir: &Path) -> Result<Vec<String>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| Failure::at(dir)(e.into()))?;
    let mut names = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Failure::at(dir)(e.into()))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == "dmap") {
            names.push(path.file_name().unwrap_or_default().to_string_lossy().into_owned());
        }
    }
    names.sort();
    Ok(names)
}

fn run(command: Command) -> Result<Output, Failure> {
    let mut out = Output::default();
    match command {
        Command::Window { window, out: path } => {
            let w = window.build()?;
            out.file(path, dmap_bytes(&w.to_map())?);
        }
        Command::Generate { heads, height, width, window, border, out: path } => {
            let w = window.build()?;
            let list = read_heads_csv(read(&heads)?.as_slice(), height, width).map_err(Failure::at(&heads))?;
            out.file(path, dmap_bytes(&generate_density_map(&list, &w, border.into()))?);
        }
        Command::Probmap { coarse, window, out: path } => {
            let w = window.build()?;
            let p = probability_map(&load_map(&coarse)?, &w).map_err(Failure::at(&coarse))?;
            out.file(path, dmap_bytes(&p.to_density_map())?);
        }
        Command::Reconstruct { coarse, window, heads_out, pseudo_out, trace, count, mode } => {
            let w = window.build()?;
            let map = load_map(&coarse)?;
            let r = reconstruct(&map, &w, count, mode.into()).map_err(Failure::at(&coarse))?;
            let mut csv = Vec::new();
            write_heads_csv(&mut csv, &r.heads)?;
            out.file(heads_out.unwrap_or_else(|| sibling(&coarse, "heads.csv")), csv);
            out.file(pseudo_out.unwrap_or_else(|| sibling(&coarse, "pseudo.dmap")), dmap_bytes(&r.pseudo_map)?);
            if let Some(path) = trace {
                let mut jsonl = Vec::new();
                write_trace_jsonl(&mut jsonl, &r.trace)?;
                out.file(path, jsonl);
            }
        }
        Command::Eval { pred, gt, norm, range, out: path } => {
            let params = QualityParams {
                dynamic_range: range,
                ..QualityParams::default()
            };
            params.validate().map_err(Failure::usage)?;
            let names = dmap_names(&gt)?;
            if names.is_empty() {
                return Err(Failure::Usage(format!("{}: no .dmap files", gt.display())));
            }
            let evals = names
                .par_iter()
                .map(|name| {
                    let p = load_map(&pred.join(name))?;
                    let g = load_map(&gt.join(name))?;
                    evaluate_pair(&p, &g, &params, norm.into()).map_err(Failure::at(&pred.join(name)))
                })
                .collect::<Result<Vec<ImageEval>, Failure>>()?;
            let images = names
                .into_iter()
                .zip(&evals)
                .map(|(name, e)| ImageReport {
                    name,
                    truth_count: e.truth_count,
                    predicted_count: e.predicted_count,
                    report: EvalReport::for_image(e),
                })
                .collect();
            let aggregate = EvalReport::aggregate(&evals)?;
            out.text(path, to_json(&EvalOutput { images, aggregate })?);
        }
        Command::Filter { scenes, preset, rule, out: path } => {
            let rule = match preset {
                Some(id) => preset_rule(id),
                None => rule.build()?,
            };
            let metas = load_scenes_jsonl(&scenes).map_err(Failure::at(&scenes))?;
            let ids: String = filter_scenes(&metas, &rule).iter().map(|m| format!("{}\n", m.id)).collect();
            out.text(path, ids);
        }
        Command::Roundtrip { heads, size, sep, margin, seed, trials, window, mode } => {
            let w = window.build()?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut report = RoundtripReport {
                seed,
                size,
                sep,
                margin,
                trials,
                total_heads: 0,
                exact: 0,
                count_mismatches: 0,
                max_pixel_error: Some(0),
                all_exact: true,
            };
            for _ in 0..trials {
                let truth = separated_heads(&mut rng, size, size, heads, sep, margin).map_err(Failure::usage)?;
                let coarse = generate_density_map(&truth, &w, BorderPolicy::Truncate);
                let r = reconstruct(&coarse, &w, None, mode.into())?;
                let found: BTreeSet<Point> = r.heads.points().iter().copied().collect();
                report.total_heads += truth.len();
                report.exact += truth.points().iter().filter(|p| found.contains(p)).count();
                if r.count != truth.len() {
                    report.count_mismatches += 1;
                }
                for &p in truth.points() {
                    let nearest = found.iter().map(|&q| p.chebyshev(q)).min();
                    report.max_pixel_error = report.max_pixel_error.zip(nearest).map(|(a, b)| a.max(b));
                }
            }
            report.all_exact = report.exact == report.total_heads && report.count_mismatches == 0;
            if !report.all_exact {
                out.verdict = Some(Failure::Internal(format!(
                    "round trip recovered {}/{} heads exactly",
                    report.exact, report.total_heads
                )));
            }
            out.stdout = to_json(&report)?;
        }
        Command::Bench { sizes, heads, naive_heads, noise, seed, k, sigma, out: path } => {
            let config = BenchConfig {
                sizes,
                heads,
                naive_heads,
                k,
                sigma,
                noise,
                seed,
            };
            let report = run_bench(&config).map_err(Failure::usage)?;
            out.text(path, to_json(&report)?);
        }
    }
    Ok(out)
}

fn fail(failure: &Failure) -> ExitCode {
    let message = serde_json::to_string(&failure.to_string()).unwrap_or_else(|_| "\"?\"".into());
    eprintln!("error: kind={} code={} message={message}", failure.kind(), failure.code());
    ExitCode::from(failure.code())
}

fn execute(cli: Cli) -> Result<Output, Failure> {
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .map_err(|e| Failure::Internal(format!("thread pool: {e}")))?;
    }
    let out = run(cli.command)?;
    out.commit()?;
    Ok(out)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.to_string();
            let line = rendered.lines().next().unwrap_or_default();
            return fail(&Failure::Usage(line.trim_start_matches("error: ").to_string()));
        }
    };
    panic::set_hook(Box::new(|_| {}));
    let outcome = panic::catch_unwind(AssertUnwindSafe(|| execute(cli))).unwrap_or_else(|payload| {
        let msg = payload
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".into());
        Err(Failure::Internal(msg))
    });
    match outcome {
        Ok(out) => {
            print!("{}", out.stdout);
            match &out.verdict {
                Some(f) => fail(f),
                None => ExitCode::SUCCESS,
            }
        }
        Err(f) => fail(&f),
    }
}

//! Command-line front end for the spectral-risk library.
//!
//! Subcommands: `spectrum` (per-day normalized spectra and signals),
//! `backtest` (one strategy, per-day CSV), `experiment` (full seeded grid
//! with summary tables), and `report` (regenerate tables from stored
//! per-rep CSVs without recomputation).
//!
//! Exit codes: 0 success, 2 usage, 65 bad data or config, 66 missing
//! input file, 70 internal failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spectral_risk::backtest::{day_series_csv, run_backtest, CostConvention, CostModel};
use spectral_risk::error::Error;
use spectral_risk::experiment::{
    cell_csv, emit_dispersion_table, emit_table, parse_cell_csv, run_experiment,
    run_rep_backtests, set_worker_threads, CellResult, ExperimentConfig, TableFormat,
};
use spectral_risk::market_data::{prices_to_returns, window, ReturnPanel};
use spectral_risk::spectral::{classify_scenario, enhanced_signal, normalized_spectrum, rr_signal, vertex_distance};
use spectral_risk::strategies::{sample_simplex, StrategyKind, StrategySpec};

const SEED_ENV: &str = "SPECTRAL_RISK_SEED";

#[derive(Parser)]
#[command(
    name = "spectral-risk",
    version,
    about = "Spectral risk detection and strategy backtesting",
    propagate_version = true
)]
struct Cli {
    /// Random seed (highest precedence; then config, then SPECTRAL_RISK_SEED, then 0)
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for the experiment grid [default: logical cores]
    #[arg(long, global = true)]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct DataArgs {
    /// Input CSV: header `date,<ticker>,...`, one row per day
    #[arg(long)]
    data: PathBuf,

    /// Treat the input as prices and convert to simple returns
    #[arg(long)]
    prices: bool,

    /// Drop tickers with missing cells instead of failing
    #[arg(long)]
    drop_incomplete: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Print per-day normalized spectra, risk levels, and exposure signals
    Spectrum {
        #[command(flatten)]
        data: DataArgs,

        /// Rolling window length in days
        #[arg(long)]
        window: usize,

        /// Comma-separated tickers to use [default: all]
        #[arg(long)]
        assets: Option<String>,

        /// Write CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one strategy and print its per-day results
    Backtest {
        #[command(flatten)]
        data: DataArgs,

        /// Rolling window length in days
        #[arg(long)]
        window: usize,

        /// Comma-separated tickers to use [default: all]
        #[arg(long)]
        assets: Option<String>,

        /// Strategy to run
        #[arg(long, default_value = "rr", value_parser = parse_strategy)]
        strategy: StrategyKind,

        /// Transaction cost in basis points per unit of turnover
        #[arg(long, default_value_t = 10.0)]
        cost_bp: f64,

        /// Turnover convention: l1 or half_l1
        #[arg(long, default_value = "l1", value_parser = parse_convention)]
        cost_convention: CostConvention,

        /// Count liquidity-sleeve moves as turnover
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        charge_liquidity: bool,

        /// Exposure multiplier on reduced days
        #[arg(long, default_value_t = 0.5)]
        reduction: f64,

        /// Tail level for the VaR/CVaR optimizer strategies
        #[arg(long, default_value_t = 0.01)]
        alpha: f64,

        /// Write CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full strategy-comparison grid and write result files
    Experiment {
        #[command(flatten)]
        data: DataArgs,

        /// Experiment config JSON [default: built-in defaults]
        #[arg(long)]
        config: Option<PathBuf>,

        /// Output directory (created if missing)
        #[arg(long)]
        out: PathBuf,

        /// Also write per-day series of each cell's first repetition
        #[arg(long)]
        save_runs: bool,
    },
    /// Regenerate summary tables from a previous experiment's output
    Report {
        /// Directory holding run_metadata.json and cell_*.csv
        #[arg(long)]
        results: PathBuf,

        /// Where to write the regenerated tables [default: the results dir]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn parse_strategy(s: &str) -> Result<StrategyKind, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_convention(s: &str) -> Result<CostConvention, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err}");
        std::process::exit(exit_code(&err));
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io(e) if e.kind() == std::io::ErrorKind::NotFound => 66,
        Error::Parse { .. } | Error::Validation(_) | Error::InvalidArgument(_) => 65,
        Error::Io(_) | Error::Degenerate(_) | Error::NoConvergence(_) => 70,
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    if let Some(jobs) = cli.jobs {
        set_worker_threads(jobs)?;
    }
    match cli.command {
        Command::Spectrum { data, window, assets, out } => {
            let panel = load_panel(&data)?;
            let universe = resolve_universe(&panel, assets.as_deref())?;
            let csv = spectrum_csv(&panel, &universe, window)?;
            write_text(out.as_deref(), &csv)
        }
        Command::Backtest {
            data,
            window,
            assets,
            strategy,
            cost_bp,
            cost_convention,
            charge_liquidity,
            reduction,
            alpha,
            out,
        } => {
            let panel = load_panel(&data)?;
            let universe = resolve_universe(&panel, assets.as_deref())?;
            let seed = resolve_seed(cli.seed, None)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut spec = StrategySpec::new(strategy)
                .with_reduction(reduction)
                .with_optimizer_alpha(alpha);
            if strategy == StrategyKind::RandomBenchmark {
                spec = spec.with_benchmark_weights(sample_simplex(universe.len(), &mut rng)?);
            }
            let cost = CostModel {
                rate: cost_bp / 10_000.0,
                convention: cost_convention,
                charge_liquidity,
            };
            let result = run_backtest(&panel, &universe, &spec, window, &cost, &mut rng)?;
            if result.wipeout {
                eprintln!(
                    "warning: wealth wiped out on day {}; output is truncated",
                    result.records.last().map(|r| r.day).unwrap_or(0)
                );
            }
            write_text(out.as_deref(), &day_series_csv(&panel, &result))
        }
        Command::Experiment { data, config, out, save_runs } => {
            let panel = load_panel(&data)?;
            let mut cfg = match &config {
                Some(path) => ExperimentConfig::from_json_str(&read_file(path)?)?,
                None => ExperimentConfig::default(),
            };
            cfg.master_seed = Some(resolve_seed(cli.seed, cfg.master_seed)?);
            run_experiment_command(&panel, &cfg, &data.data, &out, save_runs)
        }
        Command::Report { results, out } => {
            let out = out.unwrap_or_else(|| results.clone());
            report_command(&results, &out)
        }
    }
}

/// Seed precedence: `--seed` flag, then config file, then the environment
/// variable, then 0.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64, Error> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(text) => text.trim().parse().map_err(|_| {
            Error::Validation(format!("{SEED_ENV} must be an unsigned integer, got `{text}`"))
        }),
        Err(_) => Ok(0),
    }
}

fn read_file(path: &Path) -> Result<String, Error> {
    fs::read_to_string(path).map_err(|e| annotate_io(e, path))
}

/// Keeps the failing path visible in I/O error messages.
fn annotate_io(e: std::io::Error, path: &Path) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn load_panel(args: &DataArgs) -> Result<ReturnPanel, Error> {
    let text = read_file(&args.data)?;
    let panel = if args.drop_incomplete {
        let (panel, dropped) = ReturnPanel::from_csv_reader_dropping_incomplete(text.as_bytes())?;
        if !dropped.is_empty() {
            eprintln!("dropped {} incomplete tickers: {}", dropped.len(), dropped.join(", "));
        }
        panel
    } else {
        ReturnPanel::from_csv_reader(text.as_bytes())?
    };
    if args.prices {
        prices_to_returns(&panel)
    } else {
        Ok(panel)
    }
}

/// Maps `--assets A,B,C` to column indices; `None` means every ticker.
fn resolve_universe(panel: &ReturnPanel, assets: Option<&str>) -> Result<Vec<usize>, Error> {
    match assets {
        None => Ok((0..panel.num_assets()).collect()),
        Some(list) => list
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|name| {
                panel.ticker_index(name).ok_or_else(|| {
                    Error::Validation(format!("unknown ticker `{name}` in --assets"))
                })
            })
            .collect(),
    }
}

/// One row per window position: as-of day, risk level, vertex distances,
/// both signals, and the spectrum entries.
fn spectrum_csv(panel: &ReturnPanel, universe: &[usize], w: usize) -> Result<String, Error> {
    if universe.len() < 2 {
        return Err(Error::InvalidArgument(
            "spectrum needs at least two assets".into(),
        ));
    }
    if panel.num_days() < w {
        return Err(Error::InvalidArgument(format!(
            "panel has {} days; the window needs {w}",
            panel.num_days()
        )));
    }
    let dim = universe.len() - 1;
    let mut out = String::from("day,date,level,d_v0,d_v1,rr,enhanced");
    for i in 1..=dim {
        out.push_str(&format!(",s{i}"));
    }
    out.push('\n');
    for t in w..=panel.num_days() {
        let win = window(panel, universe, t, w)?;
        let spectrum = normalized_spectrum(&win)?;
        let scenario = classify_scenario(&spectrum);
        let d0 = vertex_distance(&spectrum, 0)?;
        let d1 = vertex_distance(&spectrum, 1)?;
        let rr = rr_signal(&spectrum);
        let enhanced = if universe.len() >= 3 {
            enhanced_signal(&spectrum)?.to_string()
        } else {
            String::new()
        };
        out.push_str(&format!(
            "{},{},{},{},{},{},{}",
            t - 1,
            panel.dates()[t - 1],
            scenario.level,
            d0,
            d1,
            rr,
            enhanced
        ));
        for s in spectrum.values() {
            out.push_str(&format!(",{s}"));
        }
        out.push('\n');
    }
    Ok(out)
}

fn run_experiment_command(
    panel: &ReturnPanel,
    cfg: &ExperimentConfig,
    data_path: &Path,
    out: &Path,
    save_runs: bool,
) -> Result<(), Error> {
    let cells = run_experiment(panel, cfg)?;
    fs::create_dir_all(out).map_err(|e| annotate_io(e, out))?;
    write_tables(&cells, out)?;
    for cell in &cells {
        let path = out.join(format!("cell_{}_{}.csv", cell.n, cell.w));
        write_file(&path, &cell_csv(cell))?;
    }
    let metadata = serde_json::json!({
        "data_path": data_path.display().to_string(),
        "num_days": panel.num_days(),
        "num_assets": panel.num_assets(),
        "config": serde_json::to_value(cfg).expect("config serializes"),
    });
    write_file(
        &out.join("run_metadata.json"),
        &format!("{}\n", serde_json::to_string_pretty(&metadata).expect("metadata serializes")),
    )?;
    if save_runs {
        let runs_dir = out.join("runs");
        fs::create_dir_all(&runs_dir).map_err(|e| annotate_io(e, &runs_dir))?;
        for cell in &cells {
            let rep = run_rep_backtests(panel, cfg, cell.n, cell.w, 0)?;
            for (kind, outcome) in &rep.results {
                if let Ok(result) = outcome {
                    let path = runs_dir
                        .join(format!("cell_{}_{}_rep0_{}.csv", cell.n, cell.w, kind.name()));
                    write_file(&path, &day_series_csv(panel, result))?;
                }
            }
        }
    }
    let excluded: usize = cells.iter().map(|c| c.excluded_reps).sum();
    if excluded > 0 {
        eprintln!("warning: {excluded} repetition(s) excluded; see cell CSVs for reasons");
    }
    Ok(())
}

fn report_command(results: &Path, out: &Path) -> Result<(), Error> {
    let metadata_path = results.join("run_metadata.json");
    let metadata: serde_json::Value = serde_json::from_str(&read_file(&metadata_path)?)
        .map_err(|e| Error::Validation(format!("{}: {e}", metadata_path.display())))?;
    let cfg: ExperimentConfig = serde_json::from_value(
        metadata
            .get("config")
            .cloned()
            .ok_or_else(|| {
                Error::Validation(format!("{}: missing `config`", metadata_path.display()))
            })?,
    )
    .map_err(|e| Error::Validation(format!("{}: {e}", metadata_path.display())))?;
    cfg.validate()?;
    let mut cells: Vec<CellResult> = Vec::new();
    for &n in &cfg.grid_n {
        for &w in &cfg.grid_w {
            let path = results.join(format!("cell_{n}_{w}.csv"));
            let cell = parse_cell_csv(&read_file(&path)?, cfg.alpha, &cfg.strategies)
                .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?;
            if (cell.n, cell.w) != (n, w) {
                return Err(Error::Validation(format!(
                    "{}: holds cell ({}, {}), expected ({n}, {w})",
                    path.display(),
                    cell.n,
                    cell.w
                )));
            }
            cells.push(cell);
        }
    }
    fs::create_dir_all(out).map_err(|e| annotate_io(e, out))?;
    write_tables(&cells, out)
}

fn write_tables(cells: &[CellResult], out: &Path) -> Result<(), Error> {
    write_file(&out.join("summary.csv"), &emit_table(cells, TableFormat::Csv)?)?;
    write_file(&out.join("summary.md"), &emit_table(cells, TableFormat::Markdown)?)?;
    write_file(
        &out.join("dispersion.csv"),
        &emit_dispersion_table(cells, TableFormat::Csv)?,
    )
}

fn write_file(path: &Path, text: &str) -> Result<(), Error> {
    fs::write(path, text).map_err(|e| annotate_io(e, path))
}

fn write_text(out: Option<&Path>, text: &str) -> Result<(), Error> {
    match out {
        Some(path) => write_file(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data or configuration error,
//! 3 numeric failure.

mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use config::{RunConfig, Source, SCHEMA};

use crate::baselines::{evaluate_baseline, Baseline, DEFAULT_VAR_LAMBDA, DEFAULT_VAR_ORDER};
use crate::bench::{render_svg, run_grid, time_exponent, write_csv, Variant};
use crate::data::{load_dataset, save_dataset, synth_generate, Part, Prepared, SynthConfig};
use crate::error::{Error, Result};
use crate::network::{ModelConfig, WindowRef};
use crate::training::{evaluate, load_checkpoint, log_row, save_checkpoint, train_with, write_log, LOG_HEADER};

#[derive(Parser, Debug)]
#[command(name = "extralonger", version, about = "Extra-long-horizon traffic forecasting")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic ring-road dataset.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Report metrics of a checkpoint on one split.
    Eval(EvalArgs),
    /// Forecast one window and write it as CSV.
    Predict(PredictArgs),
    /// Evaluate the historical-average or VAR baseline.
    Baseline(BaselineArgs),
    /// Time unified against axial attention.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long, default_value_t = 12)]
    nodes: usize,
    #[arg(long, default_value_t = 30)]
    days: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 288)]
    steps_per_day: usize,
    /// Standard deviation of the additive noise.
    #[arg(long, default_value_t = 3.0)]
    noise: f64,
    /// Write signal.stb instead of signal.csv.
    #[arg(long)]
    binary: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct Overrides {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one configuration key (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    deterministic: bool,
    #[arg(long, default_value = "model.xlng")]
    out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = crate::training::DEFAULT_MAPE_THRESHOLD)]
    mape_threshold: f64,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    ckpt: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// First step of the input window.
    #[arg(long)]
    window_start: usize,
    #[arg(long)]
    out: PathBuf,
    /// Write the spatial GLST weights of this window as CSV.
    #[arg(long)]
    dump_attention: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BaselineArgs {
    #[arg(long, value_parser = ["ha", "var"])]
    method: String,
    #[arg(long)]
    data: PathBuf,
    #[arg(long = "T", default_value_t = 24)]
    t_in: usize,
    #[arg(long = "T-out", default_value_t = 24)]
    t_out: usize,
    #[arg(long, default_value_t = DEFAULT_VAR_ORDER)]
    p: usize,
    #[arg(long, default_value_t = DEFAULT_VAR_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value = "test")]
    split: String,
    #[arg(long, default_value_t = crate::training::DEFAULT_MAPE_THRESHOLD)]
    mape_threshold: f64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Comma-separated input lengths T.
    #[arg(long)]
    grid: String,
    #[arg(long, default_value_t = 16)]
    nodes: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    svg: Option<PathBuf>,
    #[command(flatten)]
    overrides: Overrides,
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Predict(a) => predict(a),
        Command::Baseline(a) => baseline(a),
        Command::Bench(a) => bench(a),
    }
}

fn run_config(o: &Overrides) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    if let Some(path) = &o.config {
        c.load_file(path)?;
    }
    for pair in &o.set {
        c.set_pair(pair)?;
    }
    if let Some(seed) = o.seed {
        c.set("seed", &seed.to_string(), Source::Flag)?;
    }
    Ok(c)
}

fn prepare(dir: &Path) -> Result<Prepared> {
    Prepared::new(load_dataset(dir)?)
}

fn synth(a: SynthArgs) -> Result<()> {
    let ds = synth_generate(&SynthConfig {
        n_nodes: a.nodes,
        n_days: a.days,
        steps_per_day: a.steps_per_day,
        seed: a.seed,
        noise_sigma: a.noise,
    })?;
    save_dataset(&ds, &a.out, a.binary)?;
    println!(
        "wrote {} steps x {} nodes to {}",
        ds.n_steps(),
        ds.n_nodes(),
        a.out.display()
    );
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let mut rc = run_config(&a.overrides)?;
    if let Some(e) = a.epochs {
        rc.set("epochs", &e.to_string(), Source::Flag)?;
    }
    if a.deterministic {
        rc.set("deterministic", "true", Source::Flag)?;
    }
    let data = prepare(&a.data)?;
    let cfg = rc.train_config(data.dataset.n_nodes(), data.dataset.steps_per_day)?;
    for line in rc.header() {
        println!("# {line}");
    }
    println!(
        "# data {} ({} steps, {} nodes), mean {:.4}, std {:.4}",
        a.data.display(),
        data.dataset.n_steps(),
        data.dataset.n_nodes(),
        data.stats.mean,
        data.stats.std
    );
    println!("{LOG_HEADER}");
    let out = train_with(&data, &cfg, |row| {
        println!("{}", log_row(row));
        let _ = std::io::stdout().flush();
    })?;
    if let Some(path) = &a.log {
        write_log(path, &out.log)?;
    }
    save_checkpoint(&a.out, &out.model, &out.stats, Some(&out.optimizer))?;
    let test = evaluate(&out.model, &data, Part::Test, cfg.mape_threshold, !cfg.deterministic)?;
    println!("best epoch {}; checkpoint {}", out.best_epoch, a.out.display());
    println!("test {test}");
    Ok(())
}

/// Restores a checkpoint and prepares `dir` with the stored statistics.
fn restore(ckpt: &Path, dir: &Path) -> Result<(crate::network::Model, Prepared)> {
    let ck = load_checkpoint(ckpt)?;
    let model = ck.model()?;
    let data = Prepared::with_stats(load_dataset(dir)?, ck.stats)?;
    let c: &ModelConfig = model.config();
    if c.n_nodes != data.dataset.n_nodes() || c.steps_per_day != data.dataset.steps_per_day {
        return Err(Error::Config(format!(
            "checkpoint was trained on N={} with {} steps per day; {} has N={} and {}",
            c.n_nodes,
            c.steps_per_day,
            dir.display(),
            data.dataset.n_nodes(),
            data.dataset.steps_per_day
        )));
    }
    Ok((model, data))
}

fn eval(a: EvalArgs) -> Result<()> {
    let part: Part = a.split.parse()?;
    let (model, data) = restore(&a.ckpt, &a.data)?;
    let report = evaluate(&model, &data, part, a.mape_threshold, true)?;
    println!("{report}");
    Ok(())
}

fn predict(a: PredictArgs) -> Result<()> {
    let (model, data) = restore(&a.ckpt, &a.data)?;
    let c = model.config();
    let s = data.sample(a.window_start, c.t_in, c.t_out)?;
    let w = WindowRef {
        x_norm: &s.input,
        tod_idx: &s.tod_idx,
        dow_idx: &s.dow_idx,
    };
    let f = model.forward(&w, &data.dataset.adjacency, &data.stats, false, a.dump_attention.is_some())?;
    let mut text = String::from("step");
    for n in 0..c.n_nodes {
        text.push_str(&format!(",node_{n}"));
    }
    text.push('\n');
    for i in 0..c.t_out {
        text.push_str(&(a.window_start + c.t_in + i).to_string());
        for v in f.y_hat.row(i) {
            text.push_str(&format!(",{v}"));
        }
        text.push('\n');
    }
    std::fs::write(&a.out, text).map_err(|e| Error::io(&a.out, e))?;
    if let (Some(path), Some(trace)) = (&a.dump_attention, &f.trace) {
        trace.write_csv(path)?;
    }
    println!("wrote {} forecast steps to {}", c.t_out, a.out.display());
    Ok(())
}

fn baseline(a: BaselineArgs) -> Result<()> {
    let part: Part = a.split.parse()?;
    let data = prepare(&a.data)?;
    let b = match a.method.as_str() {
        "ha" => Baseline::Ha,
        _ => Baseline::fit_var(&data, a.p, a.lambda)?,
    };
    let report = evaluate_baseline(&b, &data, part, a.t_in, a.t_out, a.mape_threshold)?;
    println!("{report}");
    Ok(())
}

fn bench(a: BenchArgs) -> Result<()> {
    let ts = config::parse_list::<usize>("grid", &a.grid)?;
    if ts.is_empty() {
        return Err(Error::Config("--grid needs at least one T".into()));
    }
    let rc = run_config(&a.overrides)?;
    let grid = rc.bench_grid(&ts, a.nodes)?;
    let records = run_grid(&grid)?;
    write_csv(&a.out, &records)?;
    for r in &records {
        println!(
            "{:<9} T={:<5} N={:<4} {:>12.3} ms {:>12} score entries{}",
            r.variant.to_string(),
            r.t,
            r.n,
            r.wall_ms_median,
            r.score_entries,
            if r.flagged { " (noisy)" } else { "" }
        );
    }
    for v in [Variant::Unified, Variant::Classical] {
        if let Some(s) = time_exponent(&records, v) {
            println!("{v} time exponent in T: {s:.3}");
        }
    }
    if let Some(path) = &a.svg {
        std::fs::write(path, render_svg(&records)).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

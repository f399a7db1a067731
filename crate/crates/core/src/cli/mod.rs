//! Command-line entry points: prepare, train, evaluate, sweep, analyze.

mod config;

pub use config::{
    provenance_header, DataSection, EvalSection, ExperimentConfig, ModelSection, OutputSection, SweepSection,
    OUTPUT_ROOT_ENV,
};

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::data::{
    load_csv_series, pct_change, read_cache, synth_generate, window_split_many, write_cache, RawSeries,
    WindowedDataset,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, fit_global_ar, EvalModel, EvalReport};
use crate::fsutil::write_atomic;
use crate::game::{nonparametric_fixed_point, train, GameMode, TrainEvent, TrainLog};
use crate::predictor::{load_model, save_model, Predictor};

#[derive(Debug, Parser)]
#[command(name = "coopgame", version, about = "Train and evaluate locally interpretable sequence forecasters")]
pub struct Cli {
    /// Directory that relative output paths are placed under.
    #[arg(long, global = true, env = OUTPUT_ROOT_ENV)]
    pub output_root: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the configured seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build the windowed dataset cache.
    Prepare(ConfigArgs),
    /// Train a model on the prepared cache.
    Train {
        #[command(flatten)]
        args: ConfigArgs,
        /// Where to write the model (default: <output>/model.json).
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Evaluate a trained model (or the AR baseline) on the test split.
    Evaluate {
        #[command(flatten)]
        args: ConfigArgs,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Evaluate the global AR baseline instead of a model file.
        #[arg(long)]
        ar_baseline: bool,
    },
    /// Train and evaluate once per λ with a shared seed.
    Sweep {
        #[command(flatten)]
        args: ConfigArgs,
        /// Comma-separated λ values (default: the config's sweep.lambdas).
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
    },
    /// Exact game solution for a free-form predictor on a 1-channel series.
    Analyze {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        epsilon: usize,
        #[arg(long)]
        lambda: f64,
        #[arg(long, value_enum, default_value = "asymmetric")]
        mode: ModeArg,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum ModeArg {
    Asymmetric,
    Symmetric,
}

impl From<ModeArg> for GameMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Asymmetric => GameMode::Asymmetric,
            ModeArg::Symmetric => GameMode::Symmetric,
        }
    }
}

/// A loaded config plus the directory its artifacts go to.
struct Experiment {
    cfg: ExperimentConfig,
    dir: PathBuf,
    resolved: String,
}

impl Experiment {
    fn load(args: &ConfigArgs, root: Option<&Path>) -> Result<Self> {
        let mut cfg = ExperimentConfig::load(&args.config)?;
        if let Some(seed) = args.seed {
            cfg.set_seed(seed);
        }
        let dir = cfg.output_dir(root);
        let resolved = cfg.resolved();
        Ok(Self { cfg, dir, resolved })
    }

    fn cache_dir(&self) -> PathBuf {
        self.dir.join("cache")
    }

    fn dataset(&self) -> Result<WindowedDataset> {
        let (data, _) = read_cache(&self.cache_dir()).map_err(|e| match e {
            Error::Io { path, source } => Error::Io {
                path: PathBuf::from(format!("{} (run `prepare` first)", path.display())),
                source,
            },
            other => other,
        })?;
        if data.input_len != self.cfg.data.input_len || data.output_len != self.cfg.data.output_len {
            return Err(Error::Config(format!(
                "cache holds {}+{} windows but the config asks for {}+{}; rerun `prepare`",
                data.input_len, data.output_len, self.cfg.data.input_len, self.cfg.data.output_len
            )));
        }
        Ok(data)
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let root = cli.output_root.as_deref();
    match cli.command {
        Command::Prepare(args) => cmd_prepare(&Experiment::load(&args, root)?),
        Command::Train { args, model } => {
            let exp = Experiment::load(&args, root)?;
            let path = model.unwrap_or_else(|| exp.dir.join("model.json"));
            let data = exp.dataset()?;
            let log = train_to(&exp, &data, &exp.cfg, &path, &exp.dir)?;
            match log.last().and_then(|r| r.val_error) {
                Some(v) => println!("final validation error: {v}"),
                None => println!("final validation error: n/a (empty validation split)"),
            }
            Ok(())
        }
        Command::Evaluate {
            args,
            model,
            ar_baseline,
        } => {
            let exp = Experiment::load(&args, root)?;
            let data = exp.dataset()?;
            let baseline = ar_baseline || exp.cfg.eval.ar_baseline;
            let report = if baseline {
                evaluate_baseline(&exp, &data)?
            } else {
                let path = model.unwrap_or_else(|| exp.dir.join("model.json"));
                let (m, _) = load_model(&path)?;
                evaluate_to(&exp, &data, &m, &exp.cfg, &exp.dir)?
            };
            print_report(&report);
            Ok(())
        }
        Command::Sweep { args, lambdas } => {
            let exp = Experiment::load(&args, root)?;
            let lambdas = lambdas.unwrap_or_else(|| exp.cfg.sweep.lambdas.clone());
            cmd_sweep(&exp, &lambdas)
        }
        Command::Analyze {
            input,
            epsilon,
            lambda,
            mode,
            output,
        } => cmd_analyze(&input, epsilon, lambda, mode.into(), &output),
    }
}

fn load_series(cfg: &ExperimentConfig) -> Result<Vec<RawSeries>> {
    let series = match &cfg.data.csv {
        Some(path) => load_csv_series(path, &cfg.data.columns, cfg.data.group_column.as_deref())?,
        None => vec![synth_generate(&cfg.data.synth)?],
    };
    if cfg.data.pct_change {
        series.iter().map(pct_change).collect()
    } else {
        Ok(series)
    }
}

fn cmd_prepare(exp: &Experiment) -> Result<()> {
    let series = load_series(&exp.cfg)?;
    let data = window_split_many(&series, &exp.cfg.data.window_options(), exp.cfg.seed)?;
    let manifest = write_cache(&exp.cache_dir(), &data, &exp.resolved)?;
    println!(
        "prepared {} windows ({} train / {} val / {} test) of {}+{} steps, {} channel(s) in {}",
        data.total_windows(),
        manifest.train_windows,
        manifest.val_windows,
        manifest.test_windows,
        manifest.input_len,
        manifest.output_len,
        data.channels(),
        exp.cache_dir().display()
    );
    Ok(())
}

/// Trains per `cfg` and writes the model, log and any checkpoints.
fn train_to(
    exp: &Experiment,
    data: &WindowedDataset,
    cfg: &ExperimentConfig,
    model_path: &Path,
    dir: &Path,
) -> Result<TrainLog> {
    let resolved = cfg.resolved();
    let game = cfg.game_config();
    let every = game.checkpoint_every;
    let model = Predictor::new(cfg.predictor_config(data.channels()))?;
    let (model, log) = train(model, data, &game, exp.cfg.execution, &mut |event| {
        if let TrainEvent::Epoch { record, model } = event {
            if every > 0 && record.epoch % every == 0 {
                let path = dir.join("checkpoints").join(format!("epoch_{:04}.json", record.epoch));
                save_model(&path, model, &resolved)?;
            }
        }
        Ok(())
    })?;
    save_model(model_path, &model, &resolved)?;
    let mut text = provenance_header(&resolved);
    text.push_str(&log.to_csv());
    write_atomic(&dir.join("train_log.csv"), text.as_bytes())?;
    Ok(log)
}

fn evaluate_to(
    exp: &Experiment,
    data: &WindowedDataset,
    model: &Predictor,
    cfg: &ExperimentConfig,
    dir: &Path,
) -> Result<EvalReport> {
    let resolved = cfg.resolved();
    let game = cfg.game_config();
    game.check_model(model)?;
    let report = evaluate(
        EvalModel::Predictor(model),
        &data.test,
        data.input_len,
        &game.explainer_settings(),
        exp.cfg.execution,
        &resolved,
    )?;
    report.write(
        &dir.join("report.toml"),
        &dir.join("report_steps.csv"),
        &provenance_header(&resolved),
    )?;
    Ok(report)
}

fn evaluate_baseline(exp: &Experiment, data: &WindowedDataset) -> Result<EvalReport> {
    let game = exp.cfg.game_config();
    let ar = fit_global_ar(&data.train, game.ar_order, game.ridge_alpha)?;
    let report = evaluate(
        EvalModel::GlobalAr(&ar),
        &data.test,
        data.input_len,
        &game.explainer_settings(),
        exp.cfg.execution,
        &exp.resolved,
    )?;
    report.write(
        &exp.dir.join("baseline_report.toml"),
        &exp.dir.join("baseline_report_steps.csv"),
        &provenance_header(&exp.resolved),
    )?;
    Ok(report)
}

fn print_report(r: &EvalReport) {
    println!("model: {}", r.model);
    println!("error_rmse: {}", r.error_rmse);
    let note = if r.deviation_is_sum { " (AR part + constant part)" } else { "" };
    println!("deviation_rmse: {}{note}", r.deviation_rmse);
    let flag = if r.tv_unreliable { " (neighborhood spans the horizon)" } else { "" };
    println!("tv: {}{flag}", r.tv);
}

/// Label used for a λ in directory names and summary headers.
fn lambda_label(l: f64) -> String {
    format!("{l}")
}

fn cmd_sweep(exp: &Experiment, lambdas: &[f64]) -> Result<()> {
    if lambdas.is_empty() {
        return Err(Error::Config("empty λ list".into()));
    }
    if let Some(bad) = lambdas.iter().find(|l| !(**l >= 0.0 && l.is_finite())) {
        return Err(Error::Config(format!("invalid λ {bad}")));
    }
    let data = exp.dataset()?;
    let mut cells: Vec<Option<EvalReport>> = Vec::with_capacity(lambdas.len());
    let mut failures = Vec::new();
    for &lambda in lambdas {
        let mut cfg = exp.cfg.clone();
        cfg.game.lambda = lambda;
        let dir = exp.dir.join("sweep").join(format!("lambda_{}", lambda_label(lambda)));
        let outcome = train_to(exp, &data, &cfg, &dir.join("model.json"), &dir).and_then(|_| {
            let (m, _) = load_model(&dir.join("model.json"))?;
            evaluate_to(exp, &data, &m, &cfg, &dir)
        });
        match outcome {
            Ok(r) => {
                println!(
                    "λ={}: error {} deviation {} tv {}",
                    lambda_label(lambda),
                    r.error_rmse,
                    r.deviation_rmse,
                    r.tv
                );
                cells.push(Some(r));
            }
            Err(e) => {
                eprintln!("λ={}: FAILED: {e}", lambda_label(lambda));
                failures.push(format!("λ={}: {e}", lambda_label(lambda)));
                cells.push(None);
            }
        }
    }
    let summary = sweep_summary(lambdas, &cells);
    let mut text = provenance_header(&exp.resolved);
    text.push_str(&summary);
    let path = exp.dir.join("sweep_summary.csv");
    write_atomic(&path, text.as_bytes())?;
    println!("summary written to {}", path.display());
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{} sweep cell(s) failed: {}", failures.len(), failures.join("; "))))
    }
}

/// Rows `error`, `deviation`, `tv`; one column per λ; `FAILED` marks cells
/// whose training or evaluation errored.
pub fn sweep_summary(lambdas: &[f64], cells: &[Option<EvalReport>]) -> String {
    let mut out = String::from("metric");
    for l in lambdas {
        write!(out, ",lambda={}", lambda_label(*l)).unwrap();
    }
    out.push('\n');
    let rows: [(&str, fn(&EvalReport) -> f64); 3] = [
        ("error", |r| r.error_rmse),
        ("deviation", |r| r.deviation_rmse),
        ("tv", |r| r.tv),
    ];
    for (name, get) in rows {
        out.push_str(name);
        for c in cells {
            match c {
                Some(r) => write!(out, ",{}", get(r)).unwrap(),
                None => out.push_str(",FAILED"),
            }
        }
        out.push('\n');
    }
    out
}

/// Reads a one-column series; a non-numeric first row is taken as a header.
pub fn read_series_file(path: &Path) -> Result<Vec<f64>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .from_reader(file);
    let mut values = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let rec = rec?;
        let line = rec.position().map_or(i + 1, |p| p.line() as usize);
        if rec.len() != 1 {
            return Err(Error::invalid(format!(
                "{}: line {line}: expected one column, found {}",
                path.display(),
                rec.len()
            )));
        }
        let field = rec[0].trim();
        match field.parse::<f64>() {
            Ok(v) if v.is_finite() => values.push(v),
            Ok(_) => return Err(Error::NonFinite(format!("{}: line {line}", path.display()))),
            Err(_) if i == 0 => {}
            Err(_) => {
                return Err(Error::invalid(format!(
                    "{}: line {line}: `{field}` is not a number",
                    path.display()
                )))
            }
        }
    }
    if values.is_empty() {
        return Err(Error::invalid(format!("{}: no values", path.display())));
    }
    Ok(values)
}

fn cmd_analyze(input: &Path, epsilon: usize, lambda: f64, mode: GameMode, output: &Path) -> Result<()> {
    let y = read_series_file(input)?;
    let fp = nonparametric_fixed_point(&y, epsilon, lambda, mode)?;
    let mode_name = match mode {
        GameMode::Asymmetric => "asymmetric",
        GameMode::Symmetric => "symmetric",
    };
    let mut text = format!(
        "# input = {}\n# epsilon = {epsilon}\n# lambda = {lambda}\n# mode = {mode_name}\n# residual = {}\nt,input,solution\n",
        input.display(),
        fp.residual
    );
    for (t, (a, b)) in y.iter().zip(&fp.solution).enumerate() {
        writeln!(text, "{t},{a},{b}").unwrap();
    }
    write_atomic(output, text.as_bytes())?;
    println!("stationarity residual: {:e}", fp.residual);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_parses_overrides() {
        let cli = Cli::try_parse_from(["coopgame", "sweep", "--config", "c.toml", "--lambdas", "0,0.5,2", "--seed", "9"])
            .unwrap();
        match cli.command {
            Command::Sweep { args, lambdas } => {
                assert_eq!(args.seed, Some(9));
                assert_eq!(lambdas, Some(vec![0.0, 0.5, 2.0]));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(Cli::try_parse_from(["coopgame", "train"]).is_err());
    }

    #[test]
    fn summary_marks_failures() {
        let s = sweep_summary(&[0.0, 1.0], &[None, None]);
        assert_eq!(
            s,
            "metric,lambda=0,lambda=1\nerror,FAILED,FAILED\ndeviation,FAILED,FAILED\ntv,FAILED,FAILED\n"
        );
    }

    #[test]
    fn series_file_header_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("y.csv");
        std::fs::write(&p, "value\n1\n2.5\n").unwrap();
        assert_eq!(read_series_file(&p).unwrap(), vec![1.0, 2.5]);
        std::fs::write(&p, "1\nx\n").unwrap();
        let err = read_series_file(&p).unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
        std::fs::write(&p, "1,2\n").unwrap();
        assert!(read_series_file(&p).is_err());
    }
}

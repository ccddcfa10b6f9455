use std::io::Read;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sutranet::artifact::ModelArtifact;
use sutranet::config::RunConfig;
use sutranet::dataset::{read_jsonl, write_jsonl};
use sutranet::engine::backfill_standard_transform;
use sutranet::metrics::QUANTILE_LEVELS;
use sutranet::pipeline::fit;
use sutranet::series::{merge_subseries, split_subseries, Ordering, SubSeriesBundle, TimeSeries, Window};
use sutranet::tune::{tune, LEARNING_RATES, WEIGHT_DECAYS};

#[derive(Parser)]
#[command(name = "sutranet", version, about = "Sub-series autoregressive forecasting networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate a JSON-lines dataset and optionally re-export it.
    Ingest {
        input: PathBuf,
        #[arg(long)]
        export: Option<PathBuf>,
    },
    /// Train the configured system and save it.
    Train {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Write per-checkpoint records here (tab separated).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Grid search over learning rate and weight decay; saves the best model.
    Tune {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long)]
        out: PathBuf,
        /// Trial table destination (tab separated); printed when omitted.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        learning_rates: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        weight_decays: Option<Vec<f64>>,
    },
    /// Per-horizon quantile forecasts for every series (or one).
    Forecast {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        series: Option<String>,
        /// Index of the first predicted step; defaults to the end of each series.
        #[arg(long)]
        origin: Option<usize>,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long, env = "SUTRANET_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// Rolling evaluation over the held-out tail; writes a JSON report.
    Evaluate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        rollouts: Option<usize>,
        #[arg(long)]
        stride: Option<usize>,
        #[arg(long, env = "SUTRANET_SEED", default_value_t = 0)]
        seed: u64,
    },
    /// CSV of actuals and quantile tracks from a forecast file.
    PlotData {
        #[arg(long)]
        forecast: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Series id; defaults to the first forecast in the file.
        #[arg(long)]
        series: Option<String>,
    },
    /// Sub-series split/merge and the block-reversal transform.
    Transform {
        #[arg(value_enum)]
        op: TransformOp,
        #[arg(long)]
        k: usize,
        #[arg(long, value_enum, default_value_t = OrderingArg::Regular)]
        ordering: OrderingArg,
        /// Conditioning length (of the window for split and backfill-standard,
        /// of each sub-series for merge); defaults to everything.
        #[arg(long)]
        context: Option<usize>,
        /// Comma-separated values (split, backfill-standard).
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        values: Option<Vec<f64>>,
        /// Read values from a file, `-` for stdin. Merge expects one
        /// sub-series per line.
        #[arg(long)]
        input: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TransformOp {
    Split,
    Merge,
    BackfillStandard,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderingArg {
    Regular,
    Backfill,
}

impl From<OrderingArg> for Ordering {
    fn from(o: OrderingArg) -> Self {
        match o {
            OrderingArg::Regular => Ordering::Regular,
            OrderingArg::Backfill => Ordering::Backfill,
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    data: PathBuf,
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    /// Defaults, then the seed environment variable, then the file, then flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut run = RunConfig::default();
        if let Ok(s) = std::env::var("SUTRANET_SEED") {
            run.set("seed", &s).context("SUTRANET_SEED")?;
        }
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            run.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
        }
        for s in &self.sets {
            let (k, v) = s.split_once('=').ok_or_else(|| anyhow!("--set expects KEY=VALUE, got '{s}'"))?;
            run.set(k, v)?;
        }
        if let Some(seed) = self.seed {
            run.seed = seed;
        }
        Ok(run)
    }
}

fn load_data(path: &Path) -> Result<Vec<TimeSeries>> {
    read_jsonl(path).with_context(|| format!("reading dataset {}", path.display()))
}

fn load_model(path: &Path) -> Result<ModelArtifact> {
    ModelArtifact::load(path).with_context(|| format!("loading model {}", path.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

#[derive(Debug, Serialize, Deserialize)]
struct SeriesForecast {
    id: String,
    /// Series index of the first predicted step.
    origin: usize,
    start: String,
    quantile_levels: Vec<f64>,
    /// `[level][horizon]`.
    quantiles: Vec<Vec<f64>>,
    actual: Option<Vec<f64>>,
}

fn cmd_ingest(input: &Path, export: Option<&Path>) -> Result<()> {
    let data = load_data(input)?;
    let points: usize = data.iter().map(TimeSeries::len).sum();
    println!("{} series, {} points", data.len(), points);
    for s in &data {
        println!("{}\t{}\t{}", s.id, s.len(), s.start.format("%Y-%m-%dT%H:%M:%S"));
    }
    if let Some(out) = export {
        write_jsonl(out, &data).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn progress(quiet: bool) -> impl FnMut(usize, &sutranet::engine::CheckpointRecord) {
    move |m, r| {
        if !quiet {
            let val = r.val_nd.map_or("-".to_string(), |v| format!("{v:.5}"));
            eprintln!(
                "model {m} checkpoint {:>4}  nll {:.5}  val_nd {val}  lr {:.3e}{}",
                r.checkpoint,
                r.train_nll,
                r.learning_rate,
                if r.improved { "  *" } else { "" }
            );
        }
    }
}

fn cmd_train(args: &RunArgs, out: &Path, log: Option<&Path>) -> Result<()> {
    let run = args.resolve()?;
    let data = load_data(&args.data)?;
    let (system, logs) = fit(&run, &data, progress(args.quiet))?;
    let artifact = ModelArtifact::new(system, &logs);
    artifact.save(out).with_context(|| format!("writing {}", out.display()))?;
    if let Some(path) = log {
        let mut text = String::from("model\tcheckpoint\ttrain_nll\tval_nd\tlearning_rate\timproved\n");
        for (m, l) in logs.iter().enumerate() {
            for r in &l.records {
                text.push_str(&format!(
                    "{m}\t{}\t{}\t{}\t{}\t{}\n",
                    r.checkpoint,
                    r.train_nll,
                    r.val_nd.map_or(String::new(), |v| v.to_string()),
                    r.learning_rate,
                    r.improved
                ));
            }
        }
        write(path, text)?;
    }
    println!("saved {} (training log digest {})", out.display(), artifact.digest_hex());
    Ok(())
}

fn cmd_tune(
    args: &RunArgs,
    out: &Path,
    table: Option<&Path>,
    lrs: Option<&[f64]>,
    wds: Option<&[f64]>,
) -> Result<()> {
    let run = args.resolve()?;
    let data = load_data(&args.data)?;
    let outcome = tune(&run, &data, lrs.unwrap_or(&LEARNING_RATES), wds.unwrap_or(&WEIGHT_DECAYS))?;
    let artifact = ModelArtifact::new(outcome.best_system.clone(), &outcome.best_logs);
    artifact.save(out).with_context(|| format!("writing {}", out.display()))?;
    match table {
        Some(path) => write(path, outcome.table())?,
        None => print!("{}", outcome.table()),
    }
    let best = &outcome.trials[outcome.best];
    println!(
        "selected learning_rate = {:?}, weight_decay = {:?} (validation ND {:.6})",
        best.learning_rate, best.weight_decay, best.val_nd
    );
    Ok(())
}

fn cmd_forecast(
    model: &Path,
    data: &Path,
    out: &Path,
    series: Option<&str>,
    origin: Option<usize>,
    rollouts: Option<usize>,
    seed: u64,
) -> Result<()> {
    let artifact = load_model(model)?;
    let sys = &artifact.system;
    let data = load_data(data)?;
    let rollouts = rollouts.unwrap_or(sys.run.test_rollouts);
    let selected: Vec<&TimeSeries> = match series {
        Some(id) => vec![data
            .iter()
            .find(|s| s.id == id)
            .ok_or_else(|| anyhow!("no series '{id}' in dataset"))?],
        None => data.iter().collect(),
    };
    let mut records = Vec::new();
    for s in selected {
        let at = origin.unwrap_or(s.len());
        let window = sys.input_window(s, at).with_context(|| format!("series '{}'", s.id))?;
        let actual = (window.prediction_len() > 0).then(|| window.prediction.clone());
        let mut input = window;
        input.prediction.clear();
        let dist = sys.forecast(&input, rollouts, seed).with_context(|| format!("series '{}'", s.id))?;
        records.push(SeriesForecast {
            id: s.id.clone(),
            origin: at,
            start: s.timestamp(at).format("%Y-%m-%dT%H:%M:%S").to_string(),
            quantile_levels: QUANTILE_LEVELS.to_vec(),
            quantiles: dist.quantiles(&QUANTILE_LEVELS)?,
            actual,
        });
    }
    write(out, serde_json::to_string_pretty(&records)?)
}

fn cmd_evaluate(
    model: &Path,
    data: &Path,
    out: &Path,
    rollouts: Option<usize>,
    stride: Option<usize>,
    seed: u64,
) -> Result<()> {
    let mut artifact = load_model(model)?;
    if let Some(s) = stride {
        artifact.system.run.eval_stride = s;
    }
    let data = load_data(data)?;
    let rollouts = rollouts.unwrap_or(artifact.system.run.test_rollouts);
    let report = artifact.system.evaluate(&data, rollouts, seed)?;
    write(out, serde_json::to_string_pretty(&report)?)?;
    println!(
        "ND {:.6}  wQL {:.6}  ({} windows, {} points)",
        report.nd, report.wql, report.num_windows, report.num_points
    );
    Ok(())
}

/// Header and rows of the plotting CSV; unknown actuals are left blank.
fn plot_csv(f: &SeriesForecast) -> Result<String> {
    if f.quantile_levels.len() != QUANTILE_LEVELS.len() || f.quantiles.len() != QUANTILE_LEVELS.len() {
        bail!("forecast for '{}' does not carry the nine deciles", f.id);
    }
    let horizon = f.quantiles[0].len();
    let mut s = String::from("horizon,actual,p10,p20,p30,p40,p50,p60,p70,p80,p90\n");
    for h in 0..horizon {
        s.push_str(&format!("{}", h + 1));
        s.push(',');
        if let Some(a) = &f.actual {
            s.push_str(&a[h].to_string());
        }
        for track in &f.quantiles {
            s.push(',');
            s.push_str(&track[h].to_string());
        }
        s.push('\n');
    }
    Ok(s)
}

fn cmd_plot_data(forecast: &Path, out: &Path, series: Option<&str>) -> Result<()> {
    let text = std::fs::read_to_string(forecast).with_context(|| format!("reading {}", forecast.display()))?;
    let records: Vec<SeriesForecast> =
        serde_json::from_str(&text).with_context(|| format!("parsing {}", forecast.display()))?;
    let f = match series {
        Some(id) => records.iter().find(|r| r.id == id),
        None => records.first(),
    }
    .ok_or_else(|| anyhow!("no matching forecast in {}", forecast.display()))?;
    write(out, plot_csv(f)?)
}

fn read_input(values: Option<&[f64]>, input: Option<&Path>) -> Result<String> {
    match (values, input) {
        (Some(v), None) => Ok(v.iter().map(f64::to_string).collect::<Vec<_>>().join(",")),
        (None, Some(p)) if p == Path::new("-") => {
            let mut s = String::new();
            std::io::stdin().read_to_string(&mut s)?;
            Ok(s)
        }
        (None, Some(p)) => std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display())),
        _ => bail!("give exactly one of --values and --input"),
    }
}

fn parse_numbers(text: &str) -> Result<Vec<f64>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().with_context(|| format!("not a number: '{t}'")))
        .collect()
}

fn join(values: &[f64]) -> String {
    values.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

fn cmd_transform(
    op: TransformOp,
    k: usize,
    ordering: Ordering,
    context: Option<usize>,
    values: Option<&[f64]>,
    input: Option<&Path>,
) -> Result<()> {
    let text = read_input(values, input)?;
    match op {
        TransformOp::Split | TransformOp::BackfillStandard => {
            let all = parse_numbers(&text)?;
            let t = context.unwrap_or(all.len()).min(all.len());
            let window = Window::new(all[..t].to_vec(), all[t..].to_vec());
            if let TransformOp::Split = op {
                for sub in split_subseries(&window, k, ordering)?.subs {
                    println!("{}", join(&sub));
                }
            } else {
                println!("{}", join(&backfill_standard_transform(&window, k)?.values()));
            }
        }
        TransformOp::Merge => {
            let subs = text
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(parse_numbers)
                .collect::<Result<Vec<_>>>()?;
            let len = subs.first().map_or(0, Vec::len);
            let t = context.unwrap_or(len).min(len);
            let bundle = SubSeriesBundle {
                num_subseries: k,
                ordering,
                subs,
                context_len: t,
                prediction_len: len - t,
            };
            println!("{}", join(&merge_subseries(&bundle)?.values()));
        }
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest { input, export } => cmd_ingest(&input, export.as_deref()),
        Command::Train { run, out, log } => cmd_train(&run, &out, log.as_deref()),
        Command::Tune {
            run,
            out,
            table,
            learning_rates,
            weight_decays,
        } => cmd_tune(&run, &out, table.as_deref(), learning_rates.as_deref(), weight_decays.as_deref()),
        Command::Forecast {
            model,
            data,
            out,
            series,
            origin,
            rollouts,
            seed,
        } => cmd_forecast(&model, &data, &out, series.as_deref(), origin, rollouts, seed),
        Command::Evaluate {
            model,
            data,
            out,
            rollouts,
            stride,
            seed,
        } => cmd_evaluate(&model, &data, &out, rollouts, stride, seed),
        Command::PlotData { forecast, out, series } => cmd_plot_data(&forecast, &out, series.as_deref()),
        Command::Transform {
            op,
            k,
            ordering,
            context,
            values,
            input,
        } => cmd_transform(op, k, ordering.into(), context, values.as_deref(), input.as_deref()),
    }
}

//! `causal-embed` — command-line driver for reservoir-based forecasting
//! experiments: generate data, drive the reservoir, train readouts, run
//! closed-loop forecasts, evaluate them, and render SVG figures.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use causal_embed::metrics::estimate_density;
use causal_embed::plot::{line_chart, scatter_chart, Series};
use causal_embed::series::{parse_series, Phase};
use causal_embed::{Error, Result};
use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "causal-embed",
    version,
    about = "Data-driven forecasting of chaotic systems with a driven reservoir"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[command(group(ArgGroup::new("source").required(true).args(["config", "recipe"])))]
struct ConfigArgs {
    /// Experiment config file (TOML)
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Built-in recipe name (fig1b, fig1cd, fig1ef, fig2abc, fig2def)
    #[arg(long, value_name = "NAME")]
    recipe: Option<String>,
    /// Override the config's global seed
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,
    /// Run directory; overrides $CAUSAL_EMBED_OUTPUT and the config's output_dir
    #[arg(long, value_name = "DIR")]
    output: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<stages::Ctx> {
        stages::resolve(
            self.config.as_deref(),
            self.recipe.as_deref(),
            self.seed,
            self.output.as_deref(),
        )
    }
}

#[derive(Args)]
#[command(group(ArgGroup::new("metrics_source").args(["config", "recipe"])))]
struct MetricsArgs {
    /// Read metric thresholds from this experiment config
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Read metric thresholds from a built-in recipe
    #[arg(long, value_name = "NAME")]
    recipe: Option<String>,
}

#[derive(Copy, Clone, PartialEq, Eq, Default, ValueEnum)]
enum PlotKind {
    /// Each value column against time
    #[default]
    Line,
    /// Two value columns against each other (phase portrait)
    Scatter,
    /// Histogram density of one value column
    Density,
}

#[derive(Args)]
struct PlotArgs {
    /// Input CSV: a series, forecast, or stored density table
    input: PathBuf,
    /// Chart type
    #[arg(long, value_enum, default_value_t)]
    kind: PlotKind,
    /// Output SVG path (default: the input path with an .svg extension)
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Chart title (default: the input file name)
    #[arg(long)]
    title: Option<String>,
    /// Value column for scatter x and for density (0-based)
    #[arg(long, default_value_t = 0)]
    x_col: usize,
    /// Value column for scatter y (0-based)
    #[arg(long, default_value_t = 1)]
    y_col: usize,
    /// Histogram bins for --kind density
    #[arg(long, default_value_t = 100)]
    bins: usize,
    /// Histogram smoothing bandwidth, in bins, for --kind density
    #[arg(long, default_value_t = 2.0)]
    bandwidth: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the system and write the observed series plus forecast truth
    Generate(ConfigArgs),
    /// Drive the reservoir over the observed series, storing its states
    Drive {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Proceed even when stored artifacts carry a different config hash
        #[arg(long)]
        force: bool,
    },
    /// Fit the readout(s) on the stored reservoir states
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Proceed even when stored artifacts carry a different config hash
        #[arg(long)]
        force: bool,
    },
    /// Run the closed-loop forecast from the end of the training window
    Forecast {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Proceed even when stored artifacts carry a different config hash
        #[arg(long)]
        force: bool,
    },
    /// Compare a forecast CSV against a truth CSV and print the metric report
    Evaluate {
        /// Forecast CSV (only its forecast-phase rows are scored)
        forecast: PathBuf,
        /// Truth CSV to score against
        truth: PathBuf,
        #[command(flatten)]
        metrics: MetricsArgs,
        /// Compare the files even when their config hashes differ
        #[arg(long)]
        force: bool,
    },
    /// Run the reservoir gates: state convergence and input inversion
    Verify(ConfigArgs),
    /// Run the whole experiment end to end and write all artifacts
    Pipeline(ConfigArgs),
    /// Render a CSV file as an SVG chart
    Plot(PlotArgs),
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if matches!(e, Error::HashMismatch { .. }) {
                eprintln!("error: {e} (use --force to proceed anyway)");
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::FAILURE
        }
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Generate(args) => stages::run_generate(&args.resolve()?),
        Command::Drive { cfg, force } => stages::run_drive(&cfg.resolve()?, *force),
        Command::Train { cfg, force } => stages::run_train(&cfg.resolve()?, *force),
        Command::Forecast { cfg, force } => stages::run_forecast(&cfg.resolve()?, *force),
        Command::Verify(args) => stages::run_verify(&args.resolve()?),
        Command::Pipeline(args) => stages::run_pipeline_cmd(&args.resolve()?),
        Command::Evaluate { forecast, truth, metrics, force } => {
            let m = stages::resolve_metrics(metrics.config.as_deref(), metrics.recipe.as_deref())?;
            stages::run_evaluate(forecast, truth, &m, *force)
        }
        Command::Plot(args) => run_plot(args),
    }
}

/// Thin a polyline to at most `cap` points, keeping the endpoints.
fn thin(points: &[(f64, f64)], cap: usize) -> Vec<(f64, f64)> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let step = points.len().div_ceil(cap);
    let mut out: Vec<(f64, f64)> = points.iter().copied().step_by(step).collect();
    if out.last() != points.last() {
        out.push(*points.last().expect("nonempty"));
    }
    out
}

fn parse_density_table(text: &str) -> Result<Vec<(f64, f64)>> {
    let mut points = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || line == "bin_center,mass" {
            continue;
        }
        let bad = || Error::Parse {
            what: "density table",
            line: i + 1,
            detail: format!("expected `center,mass`, got `{line}`"),
        };
        let (a, b) = line.split_once(',').ok_or_else(bad)?;
        points.push((a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?));
    }
    if points.is_empty() {
        return Err(Error::DegenerateData("density table has no rows".into()));
    }
    Ok(points)
}

fn run_plot(args: &PlotArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.input)?;
    let title = args.title.clone().unwrap_or_else(|| {
        args.input
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "series".into())
    });
    let out = args.out.clone().unwrap_or_else(|| args.input.with_extension("svg"));

    let first_data_line = text.lines().find(|l| !l.starts_with('#')).unwrap_or("");
    let svg = if first_data_line.trim() == "bin_center,mass" {
        // a stored density table plots directly, whatever --kind says
        let points = parse_density_table(&text)?;
        line_chart(
            &title,
            "value",
            "probability mass",
            &[Series { name: "density", points: &points }],
            None,
        )?
    } else {
        let contents = parse_series(&text)?;
        let hash = contents.config_hash.as_deref();
        let series = &contents.series;
        let col = |c: usize| -> Result<ndarray::ArrayView1<'_, f64>> {
            if c >= series.dim() {
                return Err(Error::DimensionMismatch { expected: series.dim(), got: c + 1 });
            }
            Ok(series.values.column(c))
        };
        match args.kind {
            PlotKind::Line => {
                let names: Vec<String> = (1..=series.dim().min(4)).map(|i| format!("u{i}")).collect();
                let mut traces = Vec::new();
                for c in 0..series.dim().min(4) {
                    let pts: Vec<(f64, f64)> = series
                        .values
                        .column(c)
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| (series.time_at(i), v))
                        .collect();
                    traces.push(thin(&pts, 2000));
                }
                let list: Vec<Series<'_>> = names
                    .iter()
                    .zip(&traces)
                    .map(|(n, p)| Series { name: n, points: p })
                    .collect();
                line_chart(&title, "t", "value", &list, hash)?
            }
            PlotKind::Scatter => {
                let xs = col(args.x_col)?;
                let ys = col(args.y_col)?;
                let all: Vec<(f64, f64)> =
                    xs.iter().zip(ys.iter()).map(|(&x, &y)| (x, y)).collect();
                let x_label = format!("u{}", args.x_col + 1);
                let y_label = format!("u{}", args.y_col + 1);
                match &contents.phases {
                    Some(phases) => {
                        let split = |want: Phase| -> Vec<(f64, f64)> {
                            phases
                                .iter()
                                .zip(&all)
                                .filter(|(p, _)| **p == want)
                                .map(|(_, pt)| *pt)
                                .collect()
                        };
                        let warm = thin(&split(Phase::Warmup), 2500);
                        let fore = thin(&split(Phase::Forecast), 2500);
                        let mut list = Vec::new();
                        if !warm.is_empty() {
                            list.push(Series { name: "warmup", points: &warm });
                        }
                        if !fore.is_empty() {
                            list.push(Series { name: "forecast", points: &fore });
                        }
                        scatter_chart(&title, &x_label, &y_label, &list, hash)?
                    }
                    None => {
                        let pts = thin(&all, 2500);
                        scatter_chart(
                            &title,
                            &x_label,
                            &y_label,
                            &[Series { name: "orbit", points: &pts }],
                            hash,
                        )?
                    }
                }
            }
            PlotKind::Density => {
                let samples = col(args.x_col)?.to_vec();
                let density = estimate_density(&samples, args.bins, args.bandwidth)?;
                let points: Vec<(f64, f64)> = (0..density.bins())
                    .map(|i| (density.bin_center(i), density.mass[i]))
                    .collect();
                line_chart(
                    &title,
                    "value",
                    "probability mass",
                    &[Series { name: "density", points: &points }],
                    hash,
                )?
            }
        }
    };
    std::fs::write(&out, svg)?;
    println!("wrote {}", out.display());
    Ok(())
}

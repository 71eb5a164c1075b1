//! Stage implementations behind the CLI subcommands.
//!
//! The standalone stages (`generate` → `drive` → `train` → `forecast`) share a
//! run directory and derive every random draw from the config's global seed
//! with the same stage tags the one-shot pipeline uses, so chaining them
//! reproduces `pipeline` byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use causal_embed::forecast::{closed_loop, valid_time, EscapeGuard};
use causal_embed::metrics::{
    density_distance, estimate_density, estimate_density_on_edges, laminar_stats, rv_coefficient,
    EvalReport,
};
use causal_embed::pipeline::{fit_readout, ExperimentConfig, MetricsConfig};
use causal_embed::readout::{fit_pca, make_dataset, ReadoutModel, TargetKind, TrainSet};
use causal_embed::reservoir::{build, Reservoir, StateTrajectory};
use causal_embed::seeds::{stage_rng, stage_seed};
use causal_embed::series::{
    read_series_csv, write_forecast_csv, write_series_csv, CsvContents, Phase, TimeSeries,
};
use causal_embed::systems::{generate, observe, snr_db};
use causal_embed::{Error, Result};
use ndarray::{s, Array1, Array2, Axis};

/// Built-in experiment recipes, compiled into the binary from `recipes/`.
pub const RECIPES: &[(&str, &str)] = &[
    ("fig1b", include_str!("../../../recipes/fig1b.toml")),
    ("fig1cd", include_str!("../../../recipes/fig1cd.toml")),
    ("fig1ef", include_str!("../../../recipes/fig1ef.toml")),
    ("fig2abc", include_str!("../../../recipes/fig2abc.toml")),
    ("fig2def", include_str!("../../../recipes/fig2def.toml")),
];

/// A resolved experiment: the config after flag/env overrides, its hash, and
/// the run directory all artifacts live in.
#[derive(Debug)]
pub struct Ctx {
    pub cfg: ExperimentConfig,
    pub hash: String,
    pub dir: PathBuf,
}

/// Load a config from a file or built-in recipe and apply the overrides.
/// Output-directory precedence: `--output`, then `$CAUSAL_EMBED_OUTPUT`,
/// then the config's own `output_dir`.
pub fn resolve(
    config: Option<&Path>,
    recipe: Option<&str>,
    seed: Option<u64>,
    output: Option<&Path>,
) -> Result<Ctx> {
    let text = match (config, recipe) {
        (Some(path), None) => fs::read_to_string(path)?,
        (None, Some(name)) => RECIPES
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, t)| t.to_string())
            .ok_or_else(|| {
                let known: Vec<&str> = RECIPES.iter().map(|(n, _)| *n).collect();
                Error::InvalidConfig(format!(
                    "unknown recipe `{name}` (available: {})",
                    known.join(", ")
                ))
            })?,
        // clap enforces exactly one source; reachable only from library callers
        _ => {
            return Err(Error::InvalidConfig(
                "need exactly one of a config path or a recipe name".into(),
            ))
        }
    };
    let mut cfg = ExperimentConfig::from_toml(&text).map_err(|e| e.in_stage("config"))?;
    if let Some(s) = seed {
        cfg.global_seed = s;
    }
    if let Some(dir) = output {
        cfg.output_dir = dir.to_string_lossy().into_owned();
    } else if let Ok(dir) = std::env::var("CAUSAL_EMBED_OUTPUT") {
        if !dir.is_empty() {
            cfg.output_dir = dir;
        }
    }
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let hash = cfg.config_hash();
    let dir = PathBuf::from(&cfg.output_dir);
    Ok(Ctx { cfg, hash, dir })
}

/// Metric thresholds for `evaluate`: from a config/recipe when given,
/// otherwise the library defaults.
pub fn resolve_metrics(config: Option<&Path>, recipe: Option<&str>) -> Result<MetricsConfig> {
    match (config, recipe) {
        (None, None) => Ok(MetricsConfig::default()),
        (c, r) => Ok(resolve(c, r, None, None)?.cfg.metrics),
    }
}

fn check_hash(expected: &str, found: Option<&str>, what: &Path, force: bool) -> Result<()> {
    match found {
        Some(h) if h != expected => {
            if force {
                eprintln!(
                    "warning: {} was produced by config {h}, continuing (--force)",
                    what.display()
                );
                Ok(())
            } else {
                Err(Error::HashMismatch {
                    left: expected.to_string(),
                    right: h.to_string(),
                })
            }
        }
        Some(_) => Ok(()),
        None => {
            eprintln!("warning: {} carries no config hash", what.display());
            Ok(())
        }
    }
}

fn load_series(dir: &Path, name: &str, hash: &str, force: bool) -> Result<TimeSeries> {
    let path = dir.join(name);
    let contents = read_series_csv(&path)?;
    check_hash(hash, contents.config_hash.as_deref(), &path, force)?;
    Ok(contents.series)
}

/// `generate`: simulate the system, apply the observation map, and store the
/// observed input series plus the clean continuation used as forecast truth.
pub fn run_generate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let sys_seed = stage_seed(cfg.global_seed, "system");
    let obs_seed = stage_seed(cfg.global_seed, "observation");
    let hidden = generate(&cfg.system.to_spec(sys_seed)).map_err(|e| e.in_stage("generate"))?;
    let observed =
        observe(&hidden, &cfg.observation, obs_seed).map_err(|e| e.in_stage("observe"))?;
    let clean = if cfg.observation.noise_sigma > 0.0 {
        let mut spec = cfg.observation.clone();
        spec.noise_sigma = 0.0;
        observe(&hidden, &spec, obs_seed).map_err(|e| e.in_stage("observe"))?
    } else {
        observed.clone()
    };
    let t_end = cfg.train_end();
    let eval_len = cfg.forecast.horizon.min(observed.len() - t_end);
    let truth_cont = clean
        .slice_rows(t_end, t_end + eval_len)
        .map_err(|e| e.in_stage("observe"))?;

    fs::create_dir_all(&ctx.dir)?;
    write_series_csv(&ctx.dir.join("series.csv"), &observed, Some(&ctx.hash))?;
    write_series_csv(&ctx.dir.join("truth.csv"), &truth_cont, Some(&ctx.hash))?;

    println!(
        "generate: {} samples of {:?} (dim {})",
        observed.len(),
        cfg.system.kind,
        observed.dim()
    );
    if cfg.observation.noise_sigma > 0.0 {
        let snr = snr_db(&clean, cfg.observation.noise_sigma).map_err(|e| e.in_stage("observe"))?;
        println!(
            "observe: noise sigma {} -> snr {snr:.1} dB",
            cfg.observation.noise_sigma
        );
    }
    println!("wrote {}", ctx.dir.join("series.csv").display());
    Ok(())
}

/// `drive`: build the seeded reservoir and run it over the observed series,
/// storing the state trajectory.
pub fn run_drive(ctx: &Ctx, force: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let observed = load_series(&ctx.dir, "series.csv", &ctx.hash, force)?;
    let res_seed = cfg
        .reservoir
        .seed
        .unwrap_or_else(|| stage_seed(cfg.global_seed, "reservoir"));
    let res = build(cfg.reservoir.n, cfg.reservoir.a, cfg.reservoir.alpha, res_seed)
        .map_err(|e| e.in_stage("reservoir"))?;
    res.save_tagged(&ctx.dir.join("reservoir.json"), &ctx.hash)?;

    let t_end = cfg.train_end();
    let full = cfg.training.target_kind == TargetKind::FullState;
    let t_ext = if full { t_end + cfg.training.recon_holdout } else { t_end };
    let window_ext = observed.slice_rows(0, t_ext).map_err(|e| e.in_stage("drive"))?;
    let x0 = Array1::zeros(res.n);
    let traj = res
        .drive(&window_ext, cfg.training.washout, &x0)
        .map_err(|e| e.in_stage("drive"))?;
    write_series_csv(
        &ctx.dir.join("states.csv"),
        &TimeSeries::new(traj.states.clone(), observed.dt),
        Some(&ctx.hash),
    )?;
    println!(
        "drive: {} states of dim {} (washout {})",
        traj.len(),
        res.n,
        cfg.training.washout
    );
    Ok(())
}

/// `train`: fit the PCA basis and the readout(s) on the stored trajectory.
pub fn run_train(ctx: &Ctx, force: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let observed = load_series(&ctx.dir, "series.csv", &ctx.hash, force)?;
    let states = load_series(&ctx.dir, "states.csv", &ctx.hash, force)?;
    let t_end = cfg.train_end();
    if states.len() < t_end {
        return Err(Error::ShortSeries { need: t_end, got: states.len() }.in_stage("train"));
    }
    let window_train = observed.slice_rows(0, t_end).map_err(|e| e.in_stage("train"))?;
    let traj_train = StateTrajectory {
        states: states.values.slice(s![..t_end, ..]).to_owned(),
        input_ref: window_train.clone(),
        washout: cfg.training.washout,
    };
    let basis = fit_pca(&traj_train, cfg.training.center_pca).map_err(|e| e.in_stage("train"))?;

    // stabilization copies: same window, extra input corruption, clean targets
    let aug_trajs = match cfg.training.loop_noise {
        Some(sigma) => {
            let res = Reservoir::load(&ctx.dir.join("reservoir.json"))
                .map_err(|e| e.in_stage("train"))?;
            let x0 = Array1::zeros(res.n);
            let mut rng = stage_rng(cfg.global_seed, "loop-noise");
            let normal = rand_distr::Normal::new(0.0, sigma)
                .map_err(|_| Error::InvalidConfig(format!("bad loop_noise {sigma}")))
                .map_err(|e| e.in_stage("train"))?;
            let mut trajs = Vec::with_capacity(cfg.training.loop_noise_copies);
            for _ in 0..cfg.training.loop_noise_copies {
                let mut vals = window_train.values.clone();
                vals.mapv_inplace(|v| v + rand::Rng::sample(&mut rng, normal));
                let corrupted = TimeSeries::new(vals, window_train.dt);
                trajs.push(
                    res.drive(&corrupted, cfg.training.washout, &x0)
                        .map_err(|e| e.in_stage("train"))?,
                );
            }
            trajs
        }
        None => Vec::new(),
    };
    let assemble = |targets: &TimeSeries, kind: TargetKind, scale: f64| -> Result<TrainSet> {
        let mut ds = make_dataset(&traj_train, targets, kind, scale, &basis)?;
        for t in &aug_trajs {
            let extra = make_dataset(t, targets, kind, scale, &basis)?;
            ds.inputs = ndarray::concatenate(Axis(0), &[ds.inputs.view(), extra.inputs.view()])
                .expect("congruent feature blocks");
            ds.targets = ndarray::concatenate(Axis(0), &[ds.targets.view(), extra.targets.view()])
                .expect("congruent target blocks");
        }
        Ok(ds)
    };

    let ds = assemble(&window_train, TargetKind::NextInput, 1.0).map_err(|e| e.in_stage("train"))?;
    let reg = fit_readout(&ds, &cfg.training, stage_seed(cfg.global_seed, "train"))
        .map_err(|e| e.in_stage("train"))?;
    let mut model = ReadoutModel::new(basis.clone(), reg, TargetKind::NextInput, 1.0)
        .map_err(|e| e.in_stage("train"))?;
    model.config_hash = Some(ctx.hash.clone());
    model.save(&ctx.dir.join("model.json"))?;
    println!(
        "train: {} pairs ({} stabilization copies), {} readout",
        ds.len(),
        aug_trajs.len(),
        if cfg.training.ridge_lambda.is_some() { "ridge" } else { "gradient" }
    );

    if cfg.training.target_kind == TargetKind::FullState {
        let hidden = observed
            .hidden_truth
            .as_ref()
            .ok_or_else(|| {
                Error::DegenerateData("series.csv carries no hidden-state columns".into())
            })
            .map_err(|e| e.in_stage("train"))?;
        let truth = TimeSeries::new(hidden.clone(), observed.dt);
        let targets = truth.slice_rows(0, t_end).map_err(|e| e.in_stage("train"))?;
        let ds_full = assemble(&targets, TargetKind::FullState, cfg.training.target_scale)
            .map_err(|e| e.in_stage("train"))?;
        let reg_full =
            fit_readout(&ds_full, &cfg.training, stage_seed(cfg.global_seed, "train-full"))
                .map_err(|e| e.in_stage("train"))?;
        let mut m = ReadoutModel::new(
            basis,
            reg_full,
            TargetKind::FullState,
            cfg.training.target_scale,
        )
        .map_err(|e| e.in_stage("train"))?;
        m.config_hash = Some(ctx.hash.clone());
        m.save(&ctx.dir.join("model_full.json"))?;
        println!("train: full-state decoder on {} pairs", ds_full.len());
    }
    Ok(())
}

/// `forecast`: run the closed loop from the end of the training window and
/// store the forecast CSV (training warmup rows followed by forecast rows).
pub fn run_forecast(ctx: &Ctx, force: bool) -> Result<()> {
    let cfg = &ctx.cfg;
    let observed = load_series(&ctx.dir, "series.csv", &ctx.hash, force)?;
    let states = load_series(&ctx.dir, "states.csv", &ctx.hash, force)?;
    let res =
        Reservoir::load(&ctx.dir.join("reservoir.json")).map_err(|e| e.in_stage("forecast"))?;
    let model =
        ReadoutModel::load(&ctx.dir.join("model.json")).map_err(|e| e.in_stage("forecast"))?;
    check_hash(
        &ctx.hash,
        model.config_hash.as_deref(),
        &ctx.dir.join("model.json"),
        force,
    )?;

    let t_end = cfg.train_end();
    if states.len() < t_end {
        return Err(Error::ShortSeries { need: t_end, got: states.len() }.in_stage("forecast"));
    }
    let window_train = observed.slice_rows(0, t_end).map_err(|e| e.in_stage("forecast"))?;
    let guard = EscapeGuard::from_series(&window_train, cfg.forecast.escape_factor);
    let u0 = observed.row(t_end - 1);
    let x0 = states.values.row(t_end - 1);
    let run = closed_loop(&res, &model, u0, x0, cfg.forecast.horizon, Some(&guard), false)
        .map_err(|e| e.in_stage("forecast"))?;
    let predicted = TimeSeries::new(run.predicted.values.clone(), observed.dt);
    write_forecast_csv(
        &ctx.dir.join("forecast.csv"),
        &window_train,
        &predicted,
        Some(&ctx.hash),
    )?;
    println!(
        "forecast: {} closed-loop steps -> {}",
        predicted.len(),
        ctx.dir.join("forecast.csv").display()
    );
    Ok(())
}

/// `verify`: run the reservoir acceptance gates (state convergence under a
/// shared input, and the input-inversion round trip) and report both.
pub fn run_verify(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let sys_seed = stage_seed(cfg.global_seed, "system");
    let obs_seed = stage_seed(cfg.global_seed, "observation");
    let hidden = generate(&cfg.system.to_spec(sys_seed)).map_err(|e| e.in_stage("generate"))?;
    let observed =
        observe(&hidden, &cfg.observation, obs_seed).map_err(|e| e.in_stage("observe"))?;
    let res_seed = cfg
        .reservoir
        .seed
        .unwrap_or_else(|| stage_seed(cfg.global_seed, "reservoir"));
    let res = build(cfg.reservoir.n, cfg.reservoir.a, cfg.reservoir.alpha, res_seed)
        .map_err(|e| e.in_stage("reservoir"))?;
    println!(
        "reservoir: n {} a {} alpha {} seed {res_seed}",
        cfg.reservoir.n, cfg.reservoir.a, cfg.reservoir.alpha
    );

    let verify_seed = stage_seed(cfg.global_seed, "verify");
    let gate_window = observed
        .slice_rows(0, cfg.train_end().min(600))
        .map_err(|e| e.in_stage("verify"))?;
    let usp = res
        .verify_usp(&gate_window, 2, 1e-6, verify_seed)
        .map_err(|e| e.in_stage("verify"))?;
    let tail: Vec<String> = usp
        .gap_curve
        .iter()
        .rev()
        .take(5)
        .rev()
        .map(|g| format!("{g:.3e}"))
        .collect();
    println!(
        "state convergence: gap tail [{}] after {} steps -> {}",
        tail.join(" "),
        usp.gap_curve.len() - 1,
        if usp.converged { "converged" } else { "NOT CONVERGED" }
    );
    if !usp.converged {
        return Err(Error::Divergence { step: usp.gap_curve.len() - 1 }.in_stage("verify"));
    }
    let si_ok = res
        .verify_si(observed.dim(), 100, 1e-9, verify_seed)
        .map_err(|e| e.in_stage("verify"))?;
    println!(
        "input inversion: 100 random round-trips within 1e-9 -> {}",
        if si_ok { "pass" } else { "FAIL" }
    );
    if !si_ok {
        return Err(
            Error::SingularMatrix("input inversion round-trip failed".into()).in_stage("verify"),
        );
    }
    Ok(())
}

/// `pipeline`: the whole experiment in one process, via the library pipeline.
pub fn run_pipeline_cmd(ctx: &Ctx) -> Result<()> {
    let run = causal_embed::run_pipeline(&ctx.cfg)?;
    for line in &run.log {
        println!("{line}");
    }
    if let Some(rec) = &run.reconstruction {
        let fmt = |v: &[f64]| {
            v.iter().map(|r| format!("{r:.4}")).collect::<Vec<_>>().join(" ")
        };
        println!(
            "reconstruction: held-out pearson [{}], closed-loop pearson [{}]",
            fmt(&rec.heldout_pearson),
            fmt(&rec.loop_pearson)
        );
    }
    println!("wrote {}", run.out_dir.display());
    print!("{}", run.report.to_text());
    Ok(())
}

/// The forecast-phase rows of a parsed CSV, or the whole series when the file
/// has no phase column.
fn forecast_part(contents: &CsvContents) -> TimeSeries {
    match &contents.phases {
        Some(phases) if phases.iter().any(|p| *p == Phase::Forecast) => {
            let rows: Vec<usize> = phases
                .iter()
                .enumerate()
                .filter(|(_, p)| **p == Phase::Forecast)
                .map(|(i, _)| i)
                .collect();
            let values = contents.series.values.select(Axis(0), &rows);
            TimeSeries::new(values, contents.series.dt)
        }
        _ => contents.series.clone(),
    }
}

/// `evaluate`: compare a forecast CSV against a truth CSV and print the
/// metric report. Only the forecast-phase rows of each file are compared.
/// Files stamped with different config hashes are refused unless forced.
pub fn run_evaluate(
    forecast_path: &Path,
    truth_path: &Path,
    metrics: &MetricsConfig,
    force: bool,
) -> Result<()> {
    let fc = read_series_csv(forecast_path)?;
    let tr = read_series_csv(truth_path)?;
    if let (Some(a), Some(b)) = (&fc.config_hash, &tr.config_hash) {
        if a != b && !force {
            return Err(Error::HashMismatch { left: a.clone(), right: b.clone() });
        }
    }
    let pred = forecast_part(&fc);
    let truth = forecast_part(&tr);
    if pred.dim() != truth.dim() {
        return Err(Error::DimensionMismatch { expected: truth.dim(), got: pred.dim() });
    }
    let eval_len = pred.len().min(truth.len());
    let pred_head = pred.slice_rows(0, eval_len)?;
    let truth_head = truth.slice_rows(0, eval_len)?;
    let vt = valid_time(&pred_head, &truth_head, metrics.valid_threshold)?;

    let dim = pred.dim();
    let mut dist_max = 0.0f64;
    for c in 0..dim {
        let t_samples = truth_head.values.column(c).to_vec();
        let f_samples = pred.values.column(c).to_vec();
        let p_truth = estimate_density(&t_samples, metrics.bins, metrics.bandwidth)?;
        let p_fc = estimate_density_on_edges(&f_samples, &p_truth.bin_edges, metrics.bandwidth)?;
        dist_max = dist_max.max(density_distance(&p_truth, &p_fc)?);
    }

    let mut bounded = true;
    for c in 0..dim {
        let col = truth_head.values.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (lo + hi);
        let half = (0.5 * (hi - lo)).max(1e-9) * metrics.bounded_factor;
        if pred.values.column(c).iter().any(|&v| (v - center).abs() > half) {
            bounded = false;
        }
    }

    // attractor-geometry agreement: consecutive-pair embedding of the truth
    // against the same embedding of the forecast
    let rows = eval_len - 1;
    let mut pairs_truth = Array2::zeros((rows, 2 * dim));
    let mut pairs_fc = Array2::zeros((rows, 2 * dim));
    for i in 0..rows {
        for j in 0..dim {
            pairs_truth[[i, j]] = truth_head.values[[i, j]];
            pairs_truth[[i, dim + j]] = truth_head.values[[i + 1, j]];
            pairs_fc[[i, j]] = pred_head.values[[i, j]];
            pairs_fc[[i, dim + j]] = pred_head.values[[i + 1, j]];
        }
    }
    let rv = rv_coefficient(pairs_truth.view(), pairs_fc.view())?;

    let laminar = match &metrics.laminar {
        Some(lc) => {
            let vals: Vec<f64> =
                pred.values.column(0).iter().copied().step_by(lc.stride).collect();
            Some(laminar_stats(&vals, lc.tol, lc.min_len)?)
        }
        None => None,
    };

    let report = EvalReport {
        valid_time: vt,
        density_distance: dist_max,
        bounded,
        rv_coefficient: rv,
        laminar_stats: laminar,
        injectivity_ratio: None,
        config_hash: fc.config_hash.clone(),
    };
    print!("{}", report.to_text());
    Ok(())
}

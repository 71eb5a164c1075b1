//! End-to-end experiment orchestration: one TOML config describes the
//! system, observation, reservoir, training schedule, forecast, and metric
//! settings; [`run_pipeline`] executes generate → observe → verify → drive →
//! train → forecast → evaluate and writes every artifact to the output
//! directory. A single `global_seed` derives all stage seeds, so identical
//! configs produce byte-identical CSV outputs.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::forecast::{closed_loop, reconstruct_full, valid_time, EscapeGuard};
use crate::metrics::{
    density_distance, estimate_density, estimate_density_on_edges, injectivity_test,
    laminar_stats, pearson, rv_coefficient, suggest_eps_state, DensityEstimate, EvalReport,
};
use crate::plot::{line_chart, scatter_chart, Series};
use crate::readout::{
    fit_pca, fit_ridge, make_dataset, train_regressor, Architecture, OptimizerConfig, PcaBasis,
    ReadoutModel, Regressor, TargetKind, TrainSet,
};
use crate::reservoir::{build, StateTrajectory};
use crate::seeds::stage_seed;
use crate::series::{write_forecast_csv, write_series_csv, TimeSeries};
use crate::systems::{generate, observe, snr_db, ObservationMode, ObservationSpec, SystemKind, SystemSpec};

/// Dynamical-system block of the experiment config. Mirrors the fields of
/// `SystemSpec` except the seed, which is always derived from `global_seed`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub kind: SystemKind,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    pub n_samples: usize,
    #[serde(default)]
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub transient_discard: usize,
}

impl SystemConfig {
    /// Expand into the generator spec, stamping in the stage seed.
    pub fn to_spec(&self, seed: u64) -> SystemSpec {
        SystemSpec {
            kind: self.kind,
            parameters: self.parameters.clone(),
            dt: self.dt,
            n_samples: self.n_samples,
            seed,
            initial_state: self.initial_state.clone(),
            transient_discard: self.transient_discard,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReservoirConfig {
    pub n: usize,
    /// Leak rate a of the state update.
    pub a: f64,
    /// Feedback gain α.
    pub alpha: f64,
    /// Explicit reservoir seed; unset derives one from `global_seed`.
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingConfig {
    pub washout: usize,
    pub n_train: usize,
    #[serde(default)]
    pub target_kind: TargetKind,
    #[serde(default = "default_target_scale")]
    pub target_scale: f64,
    /// Teacher-forced rows held out beyond the training window to score
    /// full-state reconstruction (full_state runs only).
    #[serde(default = "default_recon_holdout")]
    pub recon_holdout: usize,
    /// Closed-form ridge fit when set; unset trains the configured network
    /// by gradient descent.
    #[serde(default)]
    pub ridge_lambda: Option<f64>,
    #[serde(default)]
    pub architecture: Architecture,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub center_pca: bool,
    /// Closed-loop stabilization: when set, the training set is augmented
    /// with copies of the window re-driven under extra input noise of this
    /// std-dev while the targets stay untouched, so the readout learns to
    /// pull a corrupted history back onto the attractor. Feeding back its
    /// own imperfect outputs then self-corrects instead of compounding.
    #[serde(default)]
    pub loop_noise: Option<f64>,
    /// Number of extra corrupted copies when `loop_noise` is set.
    #[serde(default = "default_loop_noise_copies")]
    pub loop_noise_copies: usize,
}

fn default_loop_noise_copies() -> usize {
    2
}

fn default_target_scale() -> f64 {
    1.0
}

fn default_recon_holdout() -> usize {
    500
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForecastConfig {
    pub horizon: usize,
    /// The closed loop aborts once any output leaves the training range
    /// inflated by this factor.
    #[serde(default = "default_escape_factor")]
    pub escape_factor: f64,
}

fn default_escape_factor() -> f64 {
    10.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsConfig {
    pub bins: usize,
    /// Gaussian smoothing bandwidth for densities, in bins.
    pub bandwidth: f64,
    /// Relative error above which the forecast stops being "valid".
    pub valid_threshold: f64,
    /// Inflation of the training bounding box counted as "bounded".
    pub bounded_factor: f64,
    pub laminar: Option<LaminarConfig>,
    pub injectivity: Option<InjectivityConfig>,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            bins: 100,
            bandwidth: 2.0,
            valid_threshold: 0.4,
            bounded_factor: 1.5,
            laminar: None,
            injectivity: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LaminarConfig {
    pub tol: f64,
    pub min_len: usize,
    /// Subsampling stride applied to the forecast before segmentation; maps
    /// restate one laminar sample per iterate, flows need coarser sampling.
    #[serde(default = "default_stride")]
    pub stride: usize,
}

fn default_stride() -> usize {
    1
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InjectivityConfig {
    pub k_past: usize,
    /// Quantile of embedded pair distances used as the state tolerance.
    #[serde(default = "default_eps_quantile")]
    pub eps_quantile: f64,
}

fn default_eps_quantile() -> f64 {
    0.01
}

/// Complete description of one experiment; serializable to/from TOML.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub global_seed: u64,
    pub output_dir: String,
    pub system: SystemConfig,
    pub observation: ObservationSpec,
    pub reservoir: ReservoirConfig,
    pub training: TrainingConfig,
    pub forecast: ForecastConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text)?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml())?;
        Ok(())
    }

    /// Observed series length after any delay-window shortening.
    pub fn effective_samples(&self) -> usize {
        let d = if self.observation.mode == ObservationMode::DelayCoords {
            self.observation.delay_2d
        } else {
            0
        };
        self.system.n_samples.saturating_sub(d)
    }

    /// Index one past the last training sample: washout + n_train.
    pub fn train_end(&self) -> usize {
        self.training.washout + self.training.n_train
    }

    /// Cross-field arithmetic checks; run before any computation. Per-stage
    /// numeric domains (parameter ranges, matrix conditions) are enforced by
    /// the stages themselves.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.output_dir.is_empty() {
            return bad("output_dir must be set".into());
        }
        let t = &self.training;
        if t.n_train == 0 {
            return bad("n_train must be ≥ 1".into());
        }
        if t.washout == 0 {
            return bad("washout must be ≥ 1".into());
        }
        if t.n_train < self.reservoir.n {
            return bad(format!(
                "n_train = {} must reach the reservoir size {} so the basis fit is determined",
                t.n_train, self.reservoir.n
            ));
        }
        if self.train_end() < 100 {
            return bad("washout + n_train must be ≥ 100 for the convergence gate".into());
        }
        if !(t.target_scale.is_finite() && t.target_scale != 0.0) {
            return bad(format!("target_scale must be finite and nonzero, got {}", t.target_scale));
        }
        if let Some(l) = t.ridge_lambda {
            if !(l > 0.0 && l.is_finite()) {
                return bad(format!("ridge_lambda must be > 0, got {l}"));
            }
        }
        if let Some(s) = t.loop_noise {
            if !(s > 0.0 && s.is_finite()) {
                return bad(format!("loop_noise must be > 0, got {s}"));
            }
            if t.loop_noise_copies == 0 {
                return bad("loop_noise_copies must be ≥ 1 when loop_noise is set".into());
            }
        }
        let f = &self.forecast;
        if f.horizon < 100 {
            return bad("horizon must be ≥ 100 so the forecast density is estimable".into());
        }
        if !(f.escape_factor > 1.0 && f.escape_factor.is_finite()) {
            return bad(format!("escape_factor must exceed 1, got {}", f.escape_factor));
        }
        let m = &self.metrics;
        if m.bins < 2 {
            return bad("metrics.bins must be ≥ 2".into());
        }
        if !(m.bandwidth >= 0.0 && m.bandwidth.is_finite()) {
            return bad(format!("metrics.bandwidth must be ≥ 0, got {}", m.bandwidth));
        }
        if !(m.valid_threshold > 0.0 && m.valid_threshold.is_finite()) {
            return bad(format!("valid_threshold must be > 0, got {}", m.valid_threshold));
        }
        if !(m.bounded_factor >= 1.0 && m.bounded_factor.is_finite()) {
            return bad(format!("bounded_factor must be ≥ 1, got {}", m.bounded_factor));
        }
        if let Some(lam) = &m.laminar {
            if !(lam.tol > 0.0) || lam.min_len == 0 || lam.stride == 0 {
                return bad("laminar config needs tol > 0, min_len ≥ 1, stride ≥ 1".into());
            }
            if f.horizon / lam.stride < 10 * lam.min_len {
                return bad(format!(
                    "horizon/stride = {} is too short for laminar stats (need ≥ {})",
                    f.horizon / lam.stride,
                    10 * lam.min_len
                ));
            }
        }
        if let Some(inj) = &m.injectivity {
            if inj.k_past == 0 || !(inj.eps_quantile > 0.0 && inj.eps_quantile < 1.0) {
                return bad("injectivity config needs k_past ≥ 1 and eps_quantile in (0,1)".into());
            }
            if self.train_end() < 1000 {
                return bad("injectivity test needs washout + n_train ≥ 1000".into());
            }
        }
        let full = t.target_kind == TargetKind::FullState;
        if full && t.recon_holdout < 2 {
            return bad("recon_holdout must be ≥ 2 for full-state runs".into());
        }
        // evaluation compares against held-back truth: require 100 rows of
        // continuation (density needs ≥ 100 samples), plus the holdout span
        let needed = self.train_end() + if full { t.recon_holdout.max(100) } else { 100 };
        if self.effective_samples() < needed {
            return Err(Error::ShortSeries {
                need: needed,
                got: self.effective_samples(),
            });
        }
        Ok(())
    }

    /// Hex digest identifying the experiment: SHA-256 of the canonical TOML
    /// with the output directory cleared, so relocating a run keeps its
    /// identity. Truncated to 16 characters for readability in artifacts.
    pub fn config_hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = String::new();
        let digest = Sha256::digest(c.to_toml().as_bytes());
        hex::encode(digest)[..16].to_string()
    }
}

/// Per-coordinate correlation between decoded hidden states and the truth
/// (full-state runs only).
#[derive(Debug, Clone)]
pub struct ReconstructionSummary {
    /// Teacher-forced decoding on held-out rows beyond the training window.
    pub heldout_pearson: Vec<f64>,
    /// Decoding of the closed-loop trajectory against the true continuation.
    pub loop_pearson: Vec<f64>,
}

/// Everything a finished pipeline run returns in memory; the same content
/// is on disk under `out_dir`.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: EvalReport,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub reconstruction: Option<ReconstructionSummary>,
    pub log: Vec<String>,
}

/// Fit a readout regressor per the training config: closed-form ridge when
/// `ridge_lambda` is set, otherwise the gradient-trained network.
pub fn fit_readout(
    ds: &TrainSet,
    training: &TrainingConfig,
    seed: u64,
) -> Result<Regressor> {
    match training.ridge_lambda {
        Some(lambda) => fit_ridge(ds, lambda),
        None => train_regressor(ds, &training.architecture, &training.optimizer, seed),
    }
}

/// Execute the full experiment described by `cfg` and write all artifacts
/// into `cfg.output_dir`. Errors carry the name of the stage that failed.
pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let hash = cfg.config_hash();
    let out_dir = PathBuf::from(&cfg.output_dir);
    fs::create_dir_all(&out_dir)?;
    let mut log: Vec<String> = Vec::new();

    // -- generate & observe ------------------------------------------------
    let sys_seed = stage_seed(cfg.global_seed, "system");
    let obs_seed = stage_seed(cfg.global_seed, "observation");
    let hidden = generate(&cfg.system.to_spec(sys_seed)).map_err(|e| e.in_stage("generate"))?;
    log.push(format!(
        "generate: {} samples of {:?} (dim {})",
        hidden.len(),
        cfg.system.kind,
        hidden.dim()
    ));
    let observed =
        observe(&hidden, &cfg.observation, obs_seed).map_err(|e| e.in_stage("observe"))?;
    let clean = if cfg.observation.noise_sigma > 0.0 {
        let mut spec = cfg.observation.clone();
        spec.noise_sigma = 0.0;
        observe(&hidden, &spec, obs_seed).map_err(|e| e.in_stage("observe"))?
    } else {
        observed.clone()
    };
    if cfg.observation.noise_sigma > 0.0 {
        let snr = snr_db(&clean, cfg.observation.noise_sigma).map_err(|e| e.in_stage("observe"))?;
        log.push(format!(
            "observe: noise sigma {} -> snr {snr:.1} dB",
            cfg.observation.noise_sigma
        ));
    }
    let total = observed.len();
    let t_end = cfg.train_end();
    let full = cfg.training.target_kind == TargetKind::FullState;
    let t_ext = if full { t_end + cfg.training.recon_holdout } else { t_end };
    if total < t_ext {
        return Err(Error::ShortSeries { need: t_ext, got: total }.in_stage("observe"));
    }

    // -- reservoir & gates --------------------------------------------------
    let res_seed = cfg
        .reservoir
        .seed
        .unwrap_or_else(|| stage_seed(cfg.global_seed, "reservoir"));
    let res = build(cfg.reservoir.n, cfg.reservoir.a, cfg.reservoir.alpha, res_seed)
        .map_err(|e| e.in_stage("reservoir"))?;
    log.push(format!(
        "reservoir: n {} a {} alpha {} seed {res_seed}",
        cfg.reservoir.n, cfg.reservoir.a, cfg.reservoir.alpha
    ));

    let verify_seed = stage_seed(cfg.global_seed, "verify");
    let gate_window = observed
        .slice_rows(0, t_end.min(600))
        .map_err(|e| e.in_stage("verify"))?;
    let usp = res
        .verify_usp(&gate_window, 2, 1e-6, verify_seed)
        .map_err(|e| e.in_stage("verify"))?;
    let tail = *usp.gap_curve.last().expect("nonempty gap curve");
    log.push(format!(
        "verify: state-convergence gap {tail:.3e} after {} steps ({})",
        usp.gap_curve.len() - 1,
        if usp.converged { "converged" } else { "NOT CONVERGED" }
    ));
    if !usp.converged {
        return Err(Error::Divergence { step: usp.gap_curve.len() - 1 }.in_stage("verify"));
    }
    let si_ok = res
        .verify_si(observed.dim(), 100, 1e-9, verify_seed)
        .map_err(|e| e.in_stage("verify"))?;
    log.push(format!(
        "verify: input inversion round-trip {}",
        if si_ok { "pass" } else { "FAIL" }
    ));
    if !si_ok {
        return Err(
            Error::SingularMatrix("input inversion round-trip failed".into()).in_stage("verify"),
        );
    }

    // -- drive ---------------------------------------------------------------
    let window_ext = observed.slice_rows(0, t_ext).map_err(|e| e.in_stage("drive"))?;
    let window_train = observed.slice_rows(0, t_end).map_err(|e| e.in_stage("drive"))?;
    let x0 = Array1::zeros(res.n);
    let traj_ext = res
        .drive(&window_ext, cfg.training.washout, &x0)
        .map_err(|e| e.in_stage("drive"))?;
    let traj_train = if t_ext > t_end {
        StateTrajectory {
            states: traj_ext.states.slice(s![..t_end, ..]).to_owned(),
            input_ref: window_train.clone(),
            washout: cfg.training.washout,
        }
    } else {
        traj_ext.clone()
    };
    log.push(format!(
        "drive: {} states (washout {})",
        traj_ext.len(),
        cfg.training.washout
    ));

    // -- train -----------------------------------------------------------------
    let basis = fit_pca(&traj_train, cfg.training.center_pca).map_err(|e| e.in_stage("train"))?;
    // stabilization copies: same window, extra input corruption, clean targets
    let aug_trajs = match cfg.training.loop_noise {
        Some(sigma) => {
            let mut rng = crate::seeds::stage_rng(cfg.global_seed, "loop-noise");
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
    model.config_hash = Some(hash.clone());
    log.push(format!(
        "train: {} pairs ({} stabilization copies), {} readout",
        ds.len(),
        aug_trajs.len(),
        if cfg.training.ridge_lambda.is_some() { "ridge" } else { "gradient" }
    ));

    let full_truth = observed
        .hidden_truth
        .as_ref()
        .map(|w| TimeSeries::new(w.clone(), observed.dt));
    let model_full = if full {
        let truth = full_truth
            .as_ref()
            .ok_or_else(|| Error::DegenerateData("missing hidden truth".into()))
            .map_err(|e| e.in_stage("train"))?;
        let targets = truth.slice_rows(0, t_end).map_err(|e| e.in_stage("train"))?;
        let ds_full = assemble(&targets, TargetKind::FullState, cfg.training.target_scale)
            .map_err(|e| e.in_stage("train"))?;
        let reg_full = fit_readout(&ds_full, &cfg.training, stage_seed(cfg.global_seed, "train-full"))
            .map_err(|e| e.in_stage("train"))?;
        let mut m = ReadoutModel::new(
            basis.clone(),
            reg_full,
            TargetKind::FullState,
            cfg.training.target_scale,
        )
        .map_err(|e| e.in_stage("train"))?;
        m.config_hash = Some(hash.clone());
        log.push(format!("train: full-state decoder on {} pairs", ds_full.len()));
        Some(m)
    } else {
        None
    };

    // -- forecast -----------------------------------------------------------
    let guard = EscapeGuard::from_series(&window_train, cfg.forecast.escape_factor);
    let u0 = observed.row(t_end - 1);
    let x0_fc = traj_ext.states.row(t_end - 1);
    let run = closed_loop(
        &res,
        &model,
        u0,
        x0_fc,
        cfg.forecast.horizon,
        Some(&guard),
        full,
    )
    .map_err(|e| e.in_stage("forecast"))?;
    let predicted = TimeSeries::new(run.predicted.values.clone(), observed.dt);
    log.push(format!("forecast: {} closed-loop steps", predicted.len()));

    // -- evaluate -----------------------------------------------------------
    let eval_len = cfg.forecast.horizon.min(total - t_end);
    let truth_cont = clean
        .slice_rows(t_end, t_end + eval_len)
        .map_err(|e| e.in_stage("evaluate"))?;
    let (mut report, density_pairs) = evaluate_run(
        cfg,
        &predicted,
        &truth_cont,
        &window_train,
        &traj_train,
        &basis,
    )
    .map_err(|e| e.in_stage("evaluate"))?;
    report.config_hash = Some(hash.clone());
    log.push(format!(
        "evaluate: valid_time {} density_distance {:.4} bounded {} rv {:.4}",
        report.valid_time, report.density_distance, report.bounded, report.rv_coefficient
    ));
    if let Some(l) = &report.laminar_stats {
        log.push(format!(
            "evaluate: laminar count {} mean {:.2} p50 {:.2}",
            l.count, l.mean, l.p50
        ));
    }
    if let Some(r) = report.injectivity_ratio {
        log.push(format!("evaluate: injectivity ratio {r:.4}"));
    }

    // -- full-state reconstruction -------------------------------------------
    let mut reconstruction = None;
    if let (Some(m_full), Some(truth)) = (&model_full, &full_truth) {
        let held_states = traj_ext.states.slice(s![t_end - 1..t_ext, ..]);
        let held = reconstruct_full(m_full, held_states).map_err(|e| e.in_stage("evaluate"))?;
        let held_truth = truth
            .slice_rows(t_end, t_ext)
            .map_err(|e| e.in_stage("evaluate"))?;
        let mut heldout_pearson = Vec::new();
        for c in 0..held.dim() {
            let r = pearson(
                &held.values.column(c).to_vec(),
                &held_truth.values.column(c).to_vec(),
            )
            .map_err(|e| e.in_stage("evaluate"))?;
            heldout_pearson.push(r);
        }
        log.push(format!("evaluate: heldout reconstruction pearson {heldout_pearson:.4?}"));

        let decoded = reconstruct_full(m_full, run.states.view())
            .map_err(|e| e.in_stage("evaluate"))?;
        let mlen = eval_len.min(decoded.len());
        let loop_truth = truth
            .slice_rows(t_end, t_end + mlen)
            .map_err(|e| e.in_stage("evaluate"))?;
        let mut loop_pearson = Vec::new();
        for c in 0..decoded.dim() {
            let r = pearson(
                &decoded.values.column(c).to_vec()[..mlen],
                &loop_truth.values.column(c).to_vec(),
            )
            .map_err(|e| e.in_stage("evaluate"))?;
            loop_pearson.push(r);
        }
        log.push(format!("evaluate: closed-loop reconstruction pearson {loop_pearson:.4?}"));

        let mut held_out = TimeSeries::new(held.values.clone(), observed.dt);
        held_out.hidden_truth = Some(held_truth.values.clone());
        write_series_csv(&out_dir.join("heldout_reconstruction.csv"), &held_out, Some(&hash))
            .map_err(|e| e.in_stage("write"))?;
        write_series_csv(
            &out_dir.join("reconstruction.csv"),
            &TimeSeries::new(decoded.values.clone(), observed.dt),
            Some(&hash),
        )
        .map_err(|e| e.in_stage("write"))?;
        reconstruction = Some(ReconstructionSummary {
            heldout_pearson,
            loop_pearson,
        });
    }

    // -- artifacts ------------------------------------------------------------
    write_artifacts(
        cfg,
        &hash,
        &out_dir,
        &res,
        &model,
        model_full.as_ref(),
        &window_train,
        &predicted,
        &truth_cont,
        &report,
        &density_pairs,
        t_end,
    )
    .map_err(|e| e.in_stage("write"))?;
    fs::write(out_dir.join("pipeline.log"), log.join("\n") + "\n")
        .map_err(|e| Error::from(e).in_stage("write"))?;

    Ok(PipelineRun {
        report,
        out_dir,
        config_hash: hash,
        reconstruction,
        log,
    })
}

/// All scalar metrics plus the per-coordinate (truth, forecast) densities.
fn evaluate_run(
    cfg: &ExperimentConfig,
    predicted: &TimeSeries,
    truth_cont: &TimeSeries,
    window_train: &TimeSeries,
    traj_train: &StateTrajectory,
    basis: &PcaBasis,
) -> Result<(EvalReport, Vec<(DensityEstimate, DensityEstimate)>)> {
    let eval_len = truth_cont.len();
    let head = predicted.slice_rows(0, eval_len)?;
    let vt = valid_time(&head, truth_cont, cfg.metrics.valid_threshold)?;

    let dim = predicted.dim();
    let mut density_pairs = Vec::with_capacity(dim);
    let mut dist_max = 0.0f64;
    for c in 0..dim {
        let t_samples = truth_cont.values.column(c).to_vec();
        let f_samples = predicted.values.column(c).to_vec();
        let p_truth = estimate_density(&t_samples, cfg.metrics.bins, cfg.metrics.bandwidth)?;
        let p_fc = estimate_density_on_edges(&f_samples, &p_truth.bin_edges, cfg.metrics.bandwidth)?;
        dist_max = dist_max.max(density_distance(&p_truth, &p_fc)?);
        density_pairs.push((p_truth, p_fc));
    }

    let mut bounded = true;
    for c in 0..dim {
        let col = window_train.values.column(c);
        let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (lo + hi);
        let half = (0.5 * (hi - lo)).max(1e-9) * cfg.metrics.bounded_factor;
        if predicted
            .values
            .column(c)
            .iter()
            .any(|&v| (v - center).abs() > half)
        {
            bounded = false;
        }
    }

    // causality check on the training trajectory: embedded pairs against
    // their one-step-shifted images, in the leading principal coordinates
    let z = basis.project_rows(traj_train.post_washout())?;
    let m = z.nrows();
    let k = z.ncols().min(64).min(m.saturating_sub(3) / 2).max(1);
    let rows = m - 2;
    let mut pairs_in = Array2::zeros((rows, 2 * k));
    let mut pairs_out = Array2::zeros((rows, 2 * k));
    for i in 0..rows {
        for j in 0..k {
            pairs_in[[i, j]] = z[[i, j]];
            pairs_in[[i, k + j]] = z[[i + 1, j]];
            pairs_out[[i, j]] = z[[i + 1, j]];
            pairs_out[[i, k + j]] = z[[i + 2, j]];
        }
    }
    let rv = rv_coefficient(pairs_in.view(), pairs_out.view())?;

    let laminar = match &cfg.metrics.laminar {
        Some(lc) => {
            let vals: Vec<f64> = predicted
                .values
                .column(0)
                .iter()
                .copied()
                .step_by(lc.stride)
                .collect();
            Some(laminar_stats(&vals, lc.tol, lc.min_len)?)
        }
        None => None,
    };

    let injectivity = match &cfg.metrics.injectivity {
        Some(ic) => {
            let eps = suggest_eps_state(traj_train, ic.eps_quantile)?;
            Some(injectivity_test(traj_train, window_train, ic.k_past, eps)?)
        }
        None => None,
    };

    Ok((
        EvalReport {
            valid_time: vt,
            density_distance: dist_max,
            bounded,
            rv_coefficient: rv,
            laminar_stats: laminar,
            injectivity_ratio: injectivity,
            config_hash: None,
        },
        density_pairs,
    ))
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    cfg: &ExperimentConfig,
    hash: &str,
    out_dir: &Path,
    res: &crate::reservoir::Reservoir,
    model: &ReadoutModel,
    model_full: Option<&ReadoutModel>,
    window_train: &TimeSeries,
    predicted: &TimeSeries,
    truth_cont: &TimeSeries,
    report: &EvalReport,
    density_pairs: &[(DensityEstimate, DensityEstimate)],
    t_end: usize,
) -> Result<()> {
    fs::write(
        out_dir.join("config.toml"),
        format!("# config_hash={hash}\n{}", cfg.to_toml()),
    )?;
    res.save_tagged(&out_dir.join("reservoir.json"), hash)?;
    model.save(&out_dir.join("model.json"))?;
    if let Some(m) = model_full {
        m.save(&out_dir.join("model_full.json"))?;
    }
    write_forecast_csv(&out_dir.join("forecast.csv"), window_train, predicted, Some(hash))?;
    write_series_csv(&out_dir.join("truth.csv"), truth_cont, Some(hash))?;
    for (c, (p_truth, p_fc)) in density_pairs.iter().enumerate() {
        fs::write(
            out_dir.join(format!("density_truth_{c}.csv")),
            format!("# config_hash={hash}\n{}", p_truth.to_csv()),
        )?;
        fs::write(
            out_dir.join(format!("density_forecast_{c}.csv")),
            format!("# config_hash={hash}\n{}", p_fc.to_csv()),
        )?;
    }
    fs::write(out_dir.join("eval_report.txt"), report.to_text())?;

    // figures: leading coordinate overlay, density overlay, phase portrait
    let show = truth_cont.len().min(1000);
    let truth_pts: Vec<(f64, f64)> = (0..show)
        .map(|i| ((t_end + i) as f64, truth_cont.values[[i, 0]]))
        .collect();
    let fc_pts: Vec<(f64, f64)> = (0..show)
        .map(|i| ((t_end + i) as f64, predicted.values[[i, 0]]))
        .collect();
    let svg = line_chart(
        "forecast vs truth (coordinate 1)",
        "step",
        "u1",
        &[
            Series { name: "truth", points: &truth_pts },
            Series { name: "forecast", points: &fc_pts },
        ],
        Some(hash),
    )?;
    fs::write(out_dir.join("timeseries.svg"), svg)?;

    let (p_truth, p_fc) = &density_pairs[0];
    let d_truth: Vec<(f64, f64)> = (0..p_truth.bins())
        .map(|i| (p_truth.bin_center(i), p_truth.mass[i]))
        .collect();
    let d_fc: Vec<(f64, f64)> = (0..p_fc.bins())
        .map(|i| (p_fc.bin_center(i), p_fc.mass[i]))
        .collect();
    let svg = line_chart(
        "stationary density (coordinate 1)",
        "u1",
        "mass",
        &[
            Series { name: "truth", points: &d_truth },
            Series { name: "forecast", points: &d_fc },
        ],
        Some(hash),
    )?;
    fs::write(out_dir.join("density.svg"), svg)?;

    if predicted.dim() >= 2 {
        let stride_t = (truth_cont.len() / 2000).max(1);
        let stride_f = (predicted.len() / 2000).max(1);
        let a_truth: Vec<(f64, f64)> = (0..truth_cont.len())
            .step_by(stride_t)
            .map(|i| (truth_cont.values[[i, 0]], truth_cont.values[[i, 1]]))
            .collect();
        let a_fc: Vec<(f64, f64)> = (0..predicted.len())
            .step_by(stride_f)
            .map(|i| (predicted.values[[i, 0]], predicted.values[[i, 1]]))
            .collect();
        let svg = scatter_chart(
            "phase portrait (u1, u2)",
            "u1",
            "u2",
            &[
                Series { name: "truth", points: &a_truth },
                Series { name: "forecast", points: &a_fc },
            ],
            Some(hash),
        )?;
        fs::write(out_dir.join("attractor.svg"), svg)?;
    }
    Ok(())
}

//! Benchmark-system trajectory generation, observation functions, and
//! calibrated noise injection.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;
use crate::series::{SeriesMeta, TimeSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SystemKind {
    Lorenz,
    Logistic,
    HenonIntermittent,
    PomeauManneville,
}

impl SystemKind {
    pub fn dim(self) -> usize {
        match self {
            SystemKind::Lorenz => 3,
            SystemKind::HenonIntermittent => 2,
            SystemKind::Logistic | SystemKind::PomeauManneville => 1,
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "lorenz" => Ok(SystemKind::Lorenz),
            "logistic" => Ok(SystemKind::Logistic),
            "henon_intermittent" => Ok(SystemKind::HenonIntermittent),
            "pomeau_manneville" => Ok(SystemKind::PomeauManneville),
            other => Err(Error::UnknownSystem(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSpec {
    pub kind: SystemKind,
    /// Named parameters; unset entries take the per-kind defaults below.
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
    /// Sampling interval; required for the flow (lorenz), absent for maps.
    #[serde(default)]
    pub dt: Option<f64>,
    pub n_samples: usize,
    #[serde(default)]
    pub seed: u64,
    /// Empty means: draw from the seed, uniformly inside the system's basin box.
    #[serde(default)]
    pub initial_state: Vec<f64>,
    #[serde(default)]
    pub transient_discard: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObservationMode {
    IdentityScaled,
    ScalarSin,
    DelayCoords,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObservationSpec {
    pub mode: ObservationMode,
    pub scale: f64,
    /// Frequency of the sinusoidal observable (scalar_sin only).
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    /// Number of additional lags; the embedded vector has delay_2d+1 components
    /// (delay_coords only).
    #[serde(default)]
    pub delay_2d: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub mean_subtract: bool,
}

fn default_gamma() -> f64 {
    0.1
}

impl ObservationSpec {
    pub fn identity(scale: f64, noise_sigma: f64, mean_subtract: bool) -> Self {
        ObservationSpec {
            mode: ObservationMode::IdentityScaled,
            scale,
            gamma: default_gamma(),
            delay_2d: 0,
            noise_sigma,
            mean_subtract,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.scale == 0.0 || !self.scale.is_finite() {
            return Err(Error::InvalidConfig("observation scale must be nonzero".into()));
        }
        if self.noise_sigma < 0.0 || !self.noise_sigma.is_finite() {
            return Err(Error::InvalidConfig("noise_sigma must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Look up a parameter with its default, rejecting values outside `range`.
fn param(
    map: &BTreeMap<String, f64>,
    name: &str,
    default: f64,
    range: (f64, f64),
) -> Result<f64> {
    let v = map.get(name).copied().unwrap_or(default);
    if !v.is_finite() || v < range.0 || v > range.1 {
        return Err(Error::InvalidConfig(format!(
            "parameter {name}={v} outside [{}, {}]",
            range.0, range.1
        )));
    }
    Ok(v)
}

fn known_params(kind: SystemKind) -> &'static [&'static str] {
    match kind {
        SystemKind::Lorenz => &["sigma", "rho", "beta"],
        SystemKind::Logistic => &["r"],
        SystemKind::HenonIntermittent => &["a", "b"],
        SystemKind::PomeauManneville => &["z"],
    }
}

impl SystemSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be > 0".into()));
        }
        match self.kind {
            SystemKind::Lorenz => {
                let dt = self.dt.ok_or_else(|| {
                    Error::InvalidConfig("lorenz requires a sampling interval dt".into())
                })?;
                if dt <= 0.0 || !dt.is_finite() {
                    return Err(Error::InvalidConfig("dt must be > 0".into()));
                }
            }
            _ => {
                if self.dt.is_some() {
                    return Err(Error::InvalidConfig(
                        "dt applies only to the lorenz flow".into(),
                    ));
                }
            }
        }
        for key in self.parameters.keys() {
            if !known_params(self.kind).contains(&key.as_str()) {
                return Err(Error::InvalidConfig(format!(
                    "unknown parameter `{key}` for {:?}",
                    self.kind
                )));
            }
        }
        let d = self.kind.dim();
        if !self.initial_state.is_empty() && self.initial_state.len() != d {
            return Err(Error::DimensionMismatch {
                expected: d,
                got: self.initial_state.len(),
            });
        }
        Ok(())
    }

    /// Explicit initial state, or a seeded draw from the basin box.
    fn initial(&self) -> Vec<f64> {
        if !self.initial_state.is_empty() {
            return self.initial_state.clone();
        }
        let mut rng = seeds::rng_from(self.seed);
        match self.kind {
            SystemKind::Lorenz => (0..3).map(|_| rng.gen_range(-10.0..10.0)).collect(),
            SystemKind::Logistic => vec![rng.gen_range(0.05..0.95)],
            SystemKind::HenonIntermittent => {
                (0..2).map(|_| rng.gen_range(-0.5..0.5)).collect()
            }
            SystemKind::PomeauManneville => vec![rng.gen_range(0.01..0.99)],
        }
    }
}

/// Lorenz vector field.
fn lorenz_rhs(w: [f64; 3], sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    let [x, y, z] = w;
    [sigma * (y - x), x * (rho - z) - y, x * y - beta * z]
}

/// One classic RK4 step of size h.
fn rk4_step(w: [f64; 3], h: f64, sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    let f = |w| lorenz_rhs(w, sigma, rho, beta);
    let add = |w: [f64; 3], k: [f64; 3], c: f64| {
        [w[0] + c * k[0], w[1] + c * k[1], w[2] + c * k[2]]
    };
    let k1 = f(w);
    let k2 = f(add(w, k1, h / 2.0));
    let k3 = f(add(w, k2, h / 2.0));
    let k4 = f(add(w, k3, h));
    let mut out = w;
    for i in 0..3 {
        out[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    out
}

/// Advance one sampling interval dt with ten internal RK4 substeps
/// (fixed-step for reproducibility; substep = dt/10).
fn lorenz_advance(w: [f64; 3], dt: f64, sigma: f64, rho: f64, beta: f64) -> [f64; 3] {
    let h = dt / 10.0;
    let mut w = w;
    for _ in 0..10 {
        w = rk4_step(w, h, sigma, rho, beta);
    }
    w
}

/// Generate a ground-truth trajectory of the named system: iterate from the
/// initial state, discard `transient_discard` samples, store `n_samples`.
/// The stored rows are the states after each update.
pub fn generate(spec: &SystemSpec) -> Result<TimeSeries> {
    spec.validate()?;
    let d = spec.kind.dim();
    let total = spec.n_samples + spec.transient_discard;
    let mut out = Array2::zeros((spec.n_samples, d));

    match spec.kind {
        SystemKind::Lorenz => {
            let p = &spec.parameters;
            let sigma = param(p, "sigma", 10.0, (1e-6, 1e3))?;
            let rho = param(p, "rho", 28.0, (1e-6, 1e3))?;
            let beta = param(p, "beta", 8.0 / 3.0, (1e-6, 1e3))?;
            let dt = spec.dt.expect("validated");
            let init = spec.initial();
            let mut w = [init[0], init[1], init[2]];
            for i in 0..total {
                w = lorenz_advance(w, dt, sigma, rho, beta);
                let norm2 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if !norm2.is_finite() || norm2 >= 100.0 {
                    return Err(Error::Divergence { step: i });
                }
                if i >= spec.transient_discard {
                    out.row_mut(i - spec.transient_discard)
                        .assign(&Array1::from(w.to_vec()));
                }
            }
        }
        SystemKind::Logistic => {
            let r = param(&spec.parameters, "r", 4.0, (0.0, 4.0))?;
            let mut x = spec.initial()[0];
            for i in 0..total {
                // Clamp guards the parabola apex: for |x−0.5| < ~1e−8 float
                // rounding can push r·x·(1−x) a few ulp above 1, after which
                // the orbit escapes to −∞. The mathematical range is [0,1].
                x = (r * x * (1.0 - x)).clamp(0.0, 1.0);
                if i >= spec.transient_discard {
                    out[[i - spec.transient_discard, 0]] = x;
                }
            }
        }
        SystemKind::HenonIntermittent => {
            let p = &spec.parameters;
            let a = param(p, "a", 1.2265, (0.0, 2.0))?;
            let b = param(p, "b", 0.3, (0.0, 1.0))?;
            let init = spec.initial();
            let (mut x, mut y) = (init[0], init[1]);
            for i in 0..total {
                let xn = 1.0 - a * x * x + y;
                y = b * x;
                x = xn;
                if !x.is_finite() || x.abs() > 1e6 {
                    return Err(Error::Divergence { step: i });
                }
                if i >= spec.transient_discard {
                    out[[i - spec.transient_discard, 0]] = x;
                    out[[i - spec.transient_discard, 1]] = y;
                }
            }
        }
        SystemKind::PomeauManneville => {
            let z = param(&spec.parameters, "z", 0.9, (1e-6, 1.0))?;
            let mut x = spec.initial()[0];
            for i in 0..total {
                x = (x + x.powf(1.0 + z)).rem_euclid(1.0);
                if i >= spec.transient_discard {
                    out[[i - spec.transient_discard, 0]] = x;
                }
            }
        }
    }

    let hidden = out.clone();
    let mut ts = TimeSeries::new(out, spec.dt);
    ts.meta = SeriesMeta {
        system: Some(spec.clone()),
        observation: None,
    };
    ts.hidden_truth = Some(hidden);
    Ok(ts)
}

/// Apply an observation function with calibrated additive noise.
///
/// The input series carries the underlying states w_n in `values`; the output
/// carries observations u_n in `values` and the aligned w_n in `hidden_truth`.
/// Noise is i.i.d. Gaussian per component, added after scaling/mean
/// subtraction (and, for delay coordinates, after embedding).
pub fn observe(ts: &TimeSeries, obs: &ObservationSpec, seed: u64) -> Result<TimeSeries> {
    obs.validate()?;
    if ts.is_empty() {
        return Err(Error::ShortSeries { need: 1, got: 0 });
    }
    let w = &ts.values;
    let n = w.nrows();
    let mean = w.mean_axis(Axis(0)).expect("nonempty");

    let (mut u, hidden): (Array2<f64>, Array2<f64>) = match obs.mode {
        ObservationMode::IdentityScaled => {
            let mut u = w.clone();
            if obs.mean_subtract {
                u -= &mean.view().insert_axis(Axis(0));
            }
            u *= obs.scale;
            (u, w.clone())
        }
        ObservationMode::ScalarSin => {
            let mut u = Array2::zeros((n, 1));
            for (i, row) in w.rows().into_iter().enumerate() {
                u[[i, 0]] = obs.scale * row.iter().map(|&x| (obs.gamma * x).sin()).sum::<f64>();
            }
            (u, w.clone())
        }
        ObservationMode::DelayCoords => {
            let window = obs.delay_2d + 1;
            if n <= obs.delay_2d {
                return Err(Error::ShortSeries {
                    need: obs.delay_2d + 1,
                    got: n,
                });
            }
            // Scalar source: first component, scaled (mean-subtracted first
            // when requested); each output row stacks lags oldest→latest and
            // is aligned to the latest one.
            let s: Vec<f64> = w
                .column(0)
                .iter()
                .map(|&x| obs.scale * (x - if obs.mean_subtract { mean[0] } else { 0.0 }))
                .collect();
            let rows = n - obs.delay_2d;
            let mut u = Array2::zeros((rows, window));
            for i in 0..rows {
                for j in 0..window {
                    u[[i, j]] = s[i + j];
                }
            }
            let hidden = w.slice(ndarray::s![obs.delay_2d.., ..]).to_owned();
            (u, hidden)
        }
    };

    if obs.noise_sigma > 0.0 {
        let mut rng = seeds::rng_from(seed);
        let normal = Normal::new(0.0, obs.noise_sigma).expect("validated sigma");
        u.mapv_inplace(|v| v + normal.sample(&mut rng));
    }

    let mut out = TimeSeries::new(u, ts.dt);
    out.meta = SeriesMeta {
        system: ts.meta.system.clone(),
        observation: Some(obs.clone()),
    };
    out.hidden_truth = Some(hidden);
    Ok(out)
}

/// Signal-to-noise ratio in dB: 10·log10(ΣVar_k / (K·σ²)), with per-component
/// population variances of the clean signal.
pub fn snr_db(signal: &TimeSeries, noise_sigma: f64) -> Result<f64> {
    if signal.is_empty() {
        return Err(Error::ShortSeries { need: 1, got: 0 });
    }
    if noise_sigma <= 0.0 {
        return Err(Error::InvalidConfig("noise_sigma must be > 0".into()));
    }
    let k = signal.dim() as f64;
    let mean = signal.values.mean_axis(Axis(0)).expect("nonempty");
    let centered = &signal.values - &mean.view().insert_axis(Axis(0));
    let var_total = centered.mapv(|v| v * v).sum() / signal.len() as f64;
    if var_total == 0.0 {
        return Err(Error::DegenerateData("zero-variance signal".into()));
    }
    Ok(10.0 * (var_total / (k * noise_sigma * noise_sigma)).log10())
}

//! The driven system g(u,x) = (1−a)·x + a·tanh(A·u + α·B·x), its seeded
//! construction with invertibility guarantees, trajectory computation,
//! analytic state-pair → input inversion, and the empirical gates (unique
//! solution property, state-input round trip) every experiment must pass.

use std::path::Path;
use std::sync::OnceLock;

use ndarray::{s, Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{rcond_estimate, spectral_radius, Factored};
use crate::seeds;
use crate::series::TimeSeries;

/// Reject matrices whose reciprocal condition number estimate falls below
/// this; analytic inversion through such matrices is numerically meaningless.
pub const RCOND_MIN: f64 = 1e-12;

/// Guard band inside (−1,1): atanh arguments closer to ±1 than this are
/// treated as unreachable state pairs rather than silently clamped.
const ATANH_GUARD: f64 = 1e-12;

/// Immutable driven system. `leak` is the leak rate (the update's a), `alpha`
/// scales the recurrence; `b` is stored with unit spectral radius so alpha IS
/// the effective spectral radius of the recurrent term.
#[derive(Debug)]
pub struct Reservoir {
    pub n: usize,
    /// Input matrix A, entries i.i.d. uniform(−1,1).
    pub a: Array2<f64>,
    /// Recurrence matrix B, rescaled to spectral radius 1 ± 1e−8.
    pub b: Array2<f64>,
    pub leak: f64,
    pub alpha: f64,
    pub seed: u64,
    a_factors: OnceLock<Option<Factored>>,
}

impl Clone for Reservoir {
    fn clone(&self) -> Self {
        Reservoir {
            n: self.n,
            a: self.a.clone(),
            b: self.b.clone(),
            leak: self.leak,
            alpha: self.alpha,
            seed: self.seed,
            a_factors: OnceLock::new(),
        }
    }
}

/// Reservoir solution aligned to its input series: `states.row(n)` is x_n and
/// x_{n+1} = g(u_n, x_n) for every stored consecutive pair. The final input's
/// transition is not stored; it seeds the closed loop instead.
#[derive(Debug, Clone)]
pub struct StateTrajectory {
    pub states: Array2<f64>,
    pub input_ref: TimeSeries,
    /// Leading states to discard in training; kept in `states` so indices
    /// stay aligned with the input series.
    pub washout: usize,
}

impl StateTrajectory {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    /// States after the washout span.
    pub fn post_washout(&self) -> ndarray::ArrayView2<'_, f64> {
        self.states.slice(s![self.washout.., ..])
    }
}

/// Result of the two-trajectory convergence experiment.
#[derive(Debug, Clone)]
pub struct UspReport {
    pub converged: bool,
    /// Sup-norm state gap per step, maximized over the trial pairs.
    pub gap_curve: Vec<f64>,
}

/// Construct a reservoir: A, B drawn i.i.d. uniform(−1,1), B rescaled to unit
/// spectral radius (power iteration, tolerance 1e−10, ≤ 10⁴ iterations), both
/// matrices redrawn until their rcond estimates clear [`RCOND_MIN`].
pub fn build(n: usize, leak: f64, alpha: f64, seed: u64) -> Result<Reservoir> {
    if n == 0 {
        return Err(Error::InvalidConfig("reservoir dimension must be ≥ 1".into()));
    }
    if !(leak > 0.0 && leak <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "leak rate must lie in (0,1], got {leak}"
        )));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("alpha must be ≥ 0, got {alpha}")));
    }

    let mut rng = seeds::rng_from(seed);
    const MAX_DRAWS: usize = 100;
    for draw in 0..MAX_DRAWS {
        let aux = seeds::stage_seed(seed, "build-aux").wrapping_add(draw as u64);
        let a = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));
        let mut b = Array2::from_shape_fn((n, n), |_| rng.gen_range(-1.0..1.0));

        let rho = spectral_radius(&b, 1e-10, 10_000, aux);
        if rho <= 0.0 || !rho.is_finite() {
            continue;
        }
        b.mapv_inplace(|v| v / rho);

        let Ok(fa) = Factored::new(&a) else { continue };
        if rcond_estimate(&a, &fa, aux) < RCOND_MIN {
            continue;
        }
        let Ok(fb) = Factored::new(&b) else { continue };
        if rcond_estimate(&b, &fb, aux) < RCOND_MIN {
            continue;
        }

        let reservoir = Reservoir {
            n,
            a,
            b,
            leak,
            alpha,
            seed,
            a_factors: OnceLock::new(),
        };
        // The factorization was already paid for in the rcond check.
        reservoir.a_factors.set(Some(fa)).ok();
        return Ok(reservoir);
    }
    Err(Error::RejectionExceeded { draws: MAX_DRAWS })
}

impl Reservoir {
    fn factors(&self) -> Result<&Factored> {
        self.a_factors
            .get_or_init(|| Factored::new(&self.a).ok())
            .as_ref()
            .ok_or_else(|| Error::SingularMatrix("input matrix A is not invertible".into()))
    }

    /// One update x ↦ (1−a)·x + a·tanh(A·u + α·B·x), tanh componentwise.
    /// `u` must already be padded to the state dimension.
    pub fn step(&self, u: ArrayView1<'_, f64>, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if u.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: u.len(),
            });
        }
        if x.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len(),
            });
        }
        if u.iter().chain(x.iter()).any(|v| !v.is_finite()) {
            return Err(Error::DegenerateData("non-finite step input".into()));
        }
        let mut z = self.a.dot(&u);
        z.scaled_add(self.alpha, &self.b.dot(&x));
        let mut out = z.mapv(f64::tanh);
        out *= self.leak;
        out.scaled_add(1.0 - self.leak, &x);
        Ok(out)
    }

    /// Zero-pad a K-dimensional input up to the state dimension.
    pub fn pad_input(&self, v: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        pad_to(v, self.n)
    }

    /// Drive the reservoir along a series: states[0] = x0, states[n+1] =
    /// g(u_n, states[n]). The final input's transition is left to the caller
    /// (it is the closed loop's seed), so states and inputs share a length.
    pub fn drive(
        &self,
        inputs: &TimeSeries,
        washout: usize,
        x0: &Array1<f64>,
    ) -> Result<StateTrajectory> {
        let len = inputs.len();
        if len <= washout {
            return Err(Error::ShortSeries {
                need: washout + 1,
                got: len,
            });
        }
        if x0.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x0.len(),
            });
        }
        if x0.iter().any(|v| !v.is_finite() || v.abs() > 1.0) {
            return Err(Error::InvalidConfig(
                "initial state must lie in [-1,1]^N".into(),
            ));
        }
        let k = inputs.dim();
        if k > self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: k,
            });
        }

        let mut states = Array2::zeros((len, self.n));
        states.row_mut(0).assign(x0);
        let mut u_pad = Array1::zeros(self.n);
        for n in 0..len - 1 {
            u_pad.slice_mut(s![..k]).assign(&inputs.row(n));
            let next = self.step(u_pad.view(), states.row(n))?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { step: n + 1 });
            }
            states.row_mut(n + 1).assign(&next);
        }
        Ok(StateTrajectory {
            states,
            input_ref: inputs.clone(),
            washout,
        })
    }

    /// Recover the input that produced the transition x → x_next:
    /// u = A⁻¹(atanh((x_next − (1−a)·x)/a) − α·B·x).
    ///
    /// Out-of-domain atanh arguments are an error, not a clamp — they signal
    /// that x_next is not reachable from x.
    pub fn invert_input(
        &self,
        x: ArrayView1<'_, f64>,
        x_next: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        if x.len() != self.n || x_next.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: x.len().max(x_next.len()),
            });
        }
        let mut z = Array1::zeros(self.n);
        for i in 0..self.n {
            let y = (x_next[i] - (1.0 - self.leak) * x[i]) / self.leak;
            if !y.is_finite() || y.abs() >= 1.0 - ATANH_GUARD {
                return Err(Error::AtanhDomain {
                    component: i,
                    value: y,
                });
            }
            z[i] = y.atanh();
        }
        z.scaled_add(-self.alpha, &self.b.dot(&x));
        Ok(self.factors()?.solve(&z))
    }

    /// Empirical unique-solution test: several random initial-state pairs are
    /// driven by the same inputs; the per-step sup-norm gap must collapse.
    pub fn verify_usp(
        &self,
        inputs: &TimeSeries,
        n_pairs: usize,
        tol: f64,
        seed: u64,
    ) -> Result<UspReport> {
        if inputs.len() < 100 {
            return Err(Error::ShortSeries {
                need: 100,
                got: inputs.len(),
            });
        }
        if n_pairs == 0 {
            return Err(Error::InvalidConfig("n_pairs must be ≥ 1".into()));
        }
        let k = inputs.dim();
        let mut rng = seeds::rng_from(seed);
        let mut pairs: Vec<(Array1<f64>, Array1<f64>)> = (0..n_pairs)
            .map(|_| {
                let draw =
                    |rng: &mut rand_chacha::ChaCha8Rng| Array1::from_shape_fn(self.n, |_| rng.gen_range(-1.0..1.0));
                (draw(&mut rng), draw(&mut rng))
            })
            .collect();

        let sup = |a: &Array1<f64>, b: &Array1<f64>| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max)
        };
        let mut gap_curve = Vec::with_capacity(inputs.len());
        gap_curve.push(
            pairs
                .iter()
                .map(|(x1, x2)| sup(x1, x2))
                .fold(0.0, f64::max),
        );
        let mut u_pad = Array1::zeros(self.n);
        for n in 0..inputs.len() - 1 {
            u_pad.slice_mut(s![..k]).assign(&inputs.row(n));
            let mut gap: f64 = 0.0;
            for (x1, x2) in pairs.iter_mut() {
                *x1 = self.step(u_pad.view(), x1.view())?;
                *x2 = self.step(u_pad.view(), x2.view())?;
                gap = gap.max(sup(x1, x2));
            }
            gap_curve.push(gap);
        }
        let converged = *gap_curve.last().expect("nonempty") < tol;
        Ok(UspReport {
            converged,
            gap_curve,
        })
    }

    /// Random round-trip test of state-input invertibility: u → step →
    /// invert_input must reproduce u within tol (sup-norm over the padded
    /// input). Inputs are drawn from the padded K-cube, states from the
    /// tanh-bounded operating box.
    pub fn verify_si(&self, input_dim: usize, trials: usize, tol: f64, seed: u64) -> Result<bool> {
        if trials == 0 {
            return Err(Error::InvalidConfig("trials must be ≥ 1".into()));
        }
        if input_dim > self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: input_dim,
            });
        }
        let mut rng = seeds::rng_from(seed);
        for _ in 0..trials {
            let mut u = Array1::zeros(self.n);
            for i in 0..input_dim {
                u[i] = rng.gen_range(-1.0..1.0);
            }
            let x = Array1::from_shape_fn(self.n, |_| rng.gen_range(-0.5..0.5));
            let x_next = self.step(u.view(), x.view())?;
            let u_hat = match self.invert_input(x.view(), x_next.view()) {
                Ok(u_hat) => u_hat,
                // Unreachable-pair or singular-matrix failures mean the
                // round trip does not hold; that is a gate failure, not a bug.
                Err(Error::AtanhDomain { .. }) | Err(Error::SingularMatrix(_)) => {
                    return Ok(false)
                }
                Err(e) => return Err(e),
            };
            let err = u
                .iter()
                .zip(&u_hat)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if !(err < tol) {
                return Ok(false);
            }
        }
        Ok(true)
    }

    pub fn to_json(&self) -> String {
        self.to_json_tagged(None)
    }

    /// Serialize with an embedded experiment-config hash.
    pub fn to_json_tagged(&self, config_hash: Option<&str>) -> String {
        let mut file = ReservoirFile::from(self);
        file.config_hash = config_hash.map(str::to_owned);
        serde_json::to_string(&file).expect("plain numeric fields")
    }

    pub fn from_json(text: &str) -> Result<Reservoir> {
        let file: ReservoirFile = serde_json::from_str(text)?;
        file.into_reservoir()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn save_tagged(&self, path: &Path, config_hash: &str) -> Result<()> {
        std::fs::write(path, self.to_json_tagged(Some(config_hash)))?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Reservoir> {
        Reservoir::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Zero-pad a vector to dimension n.
pub fn pad_to(v: ArrayView1<'_, f64>, n: usize) -> Result<Array1<f64>> {
    if v.len() > n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: v.len(),
        });
    }
    let mut out = Array1::zeros(n);
    out.slice_mut(s![..v.len()]).assign(&v);
    Ok(out)
}

/// Flat serialization container: scalars plus row-major matrix entries.
/// JSON floats are written in shortest-round-trip form, so reload reproduces
/// step() bit-identically.
#[derive(Serialize, Deserialize)]
struct ReservoirFile {
    n: usize,
    leak: f64,
    alpha: f64,
    seed: u64,
    a: Vec<f64>,
    b: Vec<f64>,
    /// Hash of the experiment config this artifact belongs to, when saved
    /// from a pipeline run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_hash: Option<String>,
}

impl From<&Reservoir> for ReservoirFile {
    fn from(r: &Reservoir) -> Self {
        ReservoirFile {
            n: r.n,
            leak: r.leak,
            alpha: r.alpha,
            seed: r.seed,
            a: r.a.iter().copied().collect(),
            b: r.b.iter().copied().collect(),
            config_hash: None,
        }
    }
}

impl ReservoirFile {
    fn into_reservoir(self) -> Result<Reservoir> {
        let expect = self.n * self.n;
        if self.a.len() != expect || self.b.len() != expect {
            return Err(Error::DimensionMismatch {
                expected: expect,
                got: self.a.len().min(self.b.len()),
            });
        }
        Ok(Reservoir {
            n: self.n,
            a: Array2::from_shape_vec((self.n, self.n), self.a).expect("checked length"),
            b: Array2::from_shape_vec((self.n, self.n), self.b).expect("checked length"),
            leak: self.leak,
            alpha: self.alpha,
            seed: self.seed,
            a_factors: OnceLock::new(),
        })
    }
}

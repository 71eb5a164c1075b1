//! Closed-loop autonomy: once Γ is learned, the reservoir no longer needs an
//! external drive — the state pair proposes the next input, the input moves
//! the state, and the pair of coupled maps continues the series on its own.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::error::{Error, Result};
use crate::readout::{ReadoutModel, TargetKind};
use crate::reservoir::Reservoir;
use crate::series::TimeSeries;

/// Anything that can play the role of Γ in the loop: a trained readout, or
/// an analytically exact stand-in used to validate the wiring.
pub trait Gamma {
    fn apply(&self, x_prev: ArrayView1<'_, f64>, x_cur: ArrayView1<'_, f64>)
        -> Result<Array1<f64>>;
    fn output_dim(&self) -> usize;
}

impl Gamma for ReadoutModel {
    fn apply(
        &self,
        x_prev: ArrayView1<'_, f64>,
        x_cur: ArrayView1<'_, f64>,
    ) -> Result<Array1<f64>> {
        self.apply_gamma(x_prev, x_cur)
    }

    fn output_dim(&self) -> usize {
        self.regressor.output_dim()
    }
}

/// Abort condition for runaway forecasts: an input that leaves the training
/// bounding box by more than `factor` half-widths stops the run with a
/// diagnostic instead of producing a misleading tail.
#[derive(Debug, Clone)]
pub struct EscapeGuard {
    pub center: Array1<f64>,
    pub half_width: Array1<f64>,
    pub factor: f64,
}

impl EscapeGuard {
    /// Bounding box of a training input series, expanded by `factor`.
    pub fn from_series(ts: &TimeSeries, factor: f64) -> Self {
        let k = ts.dim();
        let mut lo = Array1::from_elem(k, f64::INFINITY);
        let mut hi = Array1::from_elem(k, f64::NEG_INFINITY);
        for row in ts.values.rows() {
            for (i, &v) in row.iter().enumerate() {
                lo[i] = lo[i].min(v);
                hi[i] = hi[i].max(v);
            }
        }
        let center = (&lo + &hi) * 0.5;
        // constant coordinates still get a nonzero corridor
        let half_width = (&hi - &lo).mapv(|w| (w * 0.5).max(1e-9));
        EscapeGuard {
            center,
            half_width,
            factor,
        }
    }

    fn check(&self, u: ArrayView1<'_, f64>, step: usize) -> Result<()> {
        for i in 0..u.len().min(self.center.len()) {
            if (u[i] - self.center[i]).abs() > self.factor * self.half_width[i] {
                return Err(Error::Escape {
                    step,
                    factor: self.factor,
                });
            }
        }
        Ok(())
    }
}

/// A completed autonomous run: the seed pair, the emitted inputs u_1…u_h,
/// and (when kept) the visited states x_0…x_h (row k is x_k).
#[derive(Debug, Clone)]
pub struct ForecastRun {
    pub u0: Array1<f64>,
    pub x0: Array1<f64>,
    pub horizon: usize,
    pub predicted: TimeSeries,
    /// Empty (0 rows) unless the run was asked to keep states; long runs at
    /// large N would otherwise hold horizon·N floats for nothing.
    pub states: Array2<f64>,
}

/// Iterate the coupled maps x_{k+1} = g(u_k, x_k), u_{k+1} = Γ(x_k, x_{k+1})
/// for `horizon` steps from the seed pair (u_0, x_0) — by convention the last
/// observed input and the final teacher-forced state. `keep_states` retains
/// the visited states for later decoding (e.g. full-state reconstruction).
pub fn closed_loop(
    res: &Reservoir,
    gamma: &dyn Gamma,
    u0: ArrayView1<'_, f64>,
    x0: ArrayView1<'_, f64>,
    horizon: usize,
    guard: Option<&EscapeGuard>,
    keep_states: bool,
) -> Result<ForecastRun> {
    let k = u0.len();
    if k != gamma.output_dim() {
        return Err(Error::DimensionMismatch {
            expected: gamma.output_dim(),
            got: k,
        });
    }
    if x0.len() != res.n {
        return Err(Error::DimensionMismatch {
            expected: res.n,
            got: x0.len(),
        });
    }
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be ≥ 1".into()));
    }

    let mut predicted = Array2::zeros((horizon, k));
    let mut states = if keep_states {
        Array2::zeros((horizon + 1, res.n))
    } else {
        Array2::zeros((0, res.n))
    };
    if keep_states {
        states.row_mut(0).assign(&x0);
    }

    let mut u_pad = Array1::zeros(res.n);
    u_pad.slice_mut(s![..k]).assign(&u0);
    let mut x_prev = x0.to_owned();
    for step in 1..=horizon {
        let x_next = res.step(u_pad.view(), x_prev.view())?;
        if x_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        let u_next = gamma.apply(x_prev.view(), x_next.view())?;
        if u_next.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: u_next.len(),
            });
        }
        if u_next.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence { step });
        }
        if let Some(g) = guard {
            g.check(u_next.view(), step)?;
        }
        predicted.row_mut(step - 1).assign(&u_next);
        if keep_states {
            states.row_mut(step).assign(&x_next);
        }
        u_pad.slice_mut(s![..k]).assign(&u_next);
        x_prev = x_next;
    }

    Ok(ForecastRun {
        u0: u0.to_owned(),
        x0: x0.to_owned(),
        horizon,
        predicted: TimeSeries::new(predicted, None),
        states,
    })
}

/// Decode the hidden full state from consecutive reservoir states:
/// ŵ_n = Γ_full(x_{n−1}, x_n) / target_scale, one output per stored pair
/// (length L−1 for L states).
pub fn reconstruct_full(model: &ReadoutModel, states: ArrayView2<'_, f64>) -> Result<TimeSeries> {
    if model.target_kind != TargetKind::FullState {
        return Err(Error::InvalidConfig(
            "reconstruction requires a full-state readout".into(),
        ));
    }
    let l = states.nrows();
    if l < 2 {
        return Err(Error::ShortSeries { need: 2, got: l });
    }
    let d = model.output_dim();
    let mut out = Array2::zeros((l - 1, d));
    for n in 1..l {
        let w_hat = model.apply_gamma(states.row(n - 1), states.row(n))?;
        out.row_mut(n - 1)
            .assign(&(&w_hat / model.target_scale));
    }
    Ok(TimeSeries::new(out, None))
}

/// Sliding window of 2d+1 lagged values of a scalar series, aligned to the
/// latest lag: row t is (s_{t−2d}, …, s_t).
pub fn delay_embed(series: &TimeSeries, d: usize) -> Result<TimeSeries> {
    if series.dim() != 1 {
        return Err(Error::DimensionMismatch {
            expected: 1,
            got: series.dim(),
        });
    }
    let window = 2 * d + 1;
    let l = series.len();
    if l < window + 1 {
        return Err(Error::ShortSeries {
            need: window + 1,
            got: l,
        });
    }
    let mut out = Array2::zeros((l - 2 * d, window));
    for t in 2 * d..l {
        for j in 0..window {
            out[[t - 2 * d, j]] = series.values[[t - 2 * d + j, 0]];
        }
    }
    Ok(TimeSeries::new(out, series.dt))
}

/// First step whose normalized error exceeds the threshold:
/// min { n : ‖û_n − u_n‖ / rms(truth) > threshold }, or the common length if
/// the forecast never leaves the tube.
pub fn valid_time(predicted: &TimeSeries, truth: &TimeSeries, threshold: f64) -> Result<usize> {
    if predicted.len() != truth.len() || predicted.dim() != truth.dim() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    let l = truth.len();
    let rms = (truth.values.iter().map(|v| v * v).sum::<f64>() / l as f64).sqrt();
    if !(rms > 0.0) {
        return Err(Error::DegenerateData("zero-variance truth series".into()));
    }
    for n in 0..l {
        let err: f64 = predicted
            .row(n)
            .iter()
            .zip(truth.row(n))
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        if err / rms > threshold {
            return Ok(n);
        }
    }
    Ok(l)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::{Activation, Layer, PcaBasis, Regressor};
    use crate::reservoir::build;
    use crate::seeds;
    use crate::systems::{generate, SystemKind, SystemSpec};
    use ndarray::array;
    use rand::Rng;

    struct ZeroGamma(usize);

    impl Gamma for ZeroGamma {
        fn apply(&self, _: ArrayView1<'_, f64>, _: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
            Ok(Array1::zeros(self.0))
        }
        fn output_dim(&self) -> usize {
            self.0
        }
    }

    /// The analytically exact Γ: undo the reservoir, apply the true map.
    struct OracleGamma<'a> {
        res: &'a Reservoir,
        map: fn(f64) -> f64,
    }

    impl Gamma for OracleGamma<'_> {
        fn apply(
            &self,
            x_prev: ArrayView1<'_, f64>,
            x_cur: ArrayView1<'_, f64>,
        ) -> Result<Array1<f64>> {
            let u_prev = self.res.invert_input(x_prev, x_cur)?;
            Ok(array![(self.map)(u_prev[0])])
        }
        fn output_dim(&self) -> usize {
            1
        }
    }

    fn logistic(u: f64) -> f64 {
        (4.0 * u * (1.0 - u)).clamp(0.0, 1.0)
    }

    fn logistic_series(n: usize, seed: u64) -> TimeSeries {
        let spec = SystemSpec {
            kind: SystemKind::Logistic,
            parameters: Default::default(),
            dt: None,
            n_samples: n,
            seed,
            initial_state: vec![],
            transient_discard: 100,
        };
        generate(&spec).unwrap()
    }

    #[test]
    fn zero_gamma_follows_the_zero_input_solution() {
        let r = build(20, 0.5, 0.99, 51).unwrap();
        let mut rng = seeds::rng_from(52);
        let x0 = Array1::from_shape_fn(20, |_| rng.gen_range(-0.5..0.5));
        let u0 = array![0.3];
        let run = closed_loop(&r, &ZeroGamma(1), u0.view(), x0.view(), 50, None, true).unwrap();
        assert!(run.predicted.values.iter().all(|&v| v == 0.0));
        // states must equal driving the reservoir on (u0, 0, 0, ...) directly
        let mut inputs = Array2::zeros((51, 1));
        inputs[[0, 0]] = 0.3;
        let ts = TimeSeries::new(inputs, None);
        let traj = r.drive(&ts, 0, &x0).unwrap();
        for k in 0..=50 {
            assert_eq!(
                run.states.row(k).to_vec(),
                traj.states.row(k).to_vec(),
                "state mismatch at step {k}"
            );
        }
    }

    #[test]
    fn oracle_gamma_shadows_a_true_orbit() {
        // With the exact Γ the emitted sequence must be a pseudo-orbit of the
        // true map with one-step defect at inversion precision — far below
        // any learned model. A wiring or alignment error would show up as an
        // O(1) defect at every step.
        let r = build(100, 0.5, 0.99, 53).unwrap();
        let observed = logistic_series(300, 3);
        let traj = r.drive(&observed, 100, &Array1::zeros(100)).unwrap();
        let oracle = OracleGamma {
            res: &r,
            map: logistic,
        };
        let last = traj.len() - 1;
        let u0 = observed.row(last).to_owned();
        let x0 = traj.states.row(last).to_owned();
        let run = closed_loop(&r, &oracle, u0.view(), x0.view(), 80, None, false).unwrap();

        let mut defect_max: f64 = 0.0;
        let mut prev = u0[0];
        for k in 0..run.horizon {
            let u_k = run.predicted.values[[k, 0]];
            defect_max = defect_max.max((u_k - logistic(prev)).abs());
            prev = u_k;
        }
        assert!(defect_max < 1e-6, "one-step defect {defect_max}");

        // and the direct match to the continued reference orbit holds until
        // chaos amplifies the inversion error (doubling per step)
        let mut w = u0[0];
        let mut direct_steps = 0;
        for k in 0..run.horizon {
            w = logistic(w);
            if (run.predicted.values[[k, 0]] - w).abs() > 1e-6 {
                break;
            }
            direct_steps += 1;
        }
        assert!(
            direct_steps >= 10,
            "orbit tracked for only {direct_steps} steps"
        );
    }

    #[test]
    fn loop_states_are_exactly_si_consistent() {
        let r = build(60, 0.5, 0.99, 55).unwrap();
        let observed = logistic_series(200, 5);
        let traj = r.drive(&observed, 80, &Array1::zeros(60)).unwrap();
        let oracle = OracleGamma {
            res: &r,
            map: logistic,
        };
        let last = traj.len() - 1;
        let run = closed_loop(
            &r,
            &oracle,
            observed.row(last),
            traj.states.row(last),
            40,
            None,
            true,
        )
        .unwrap();
        // invert_input(x_k, x_{k+1}) recovers the input that drove the step,
        // whatever Γ emitted
        let mut u_prev = run.u0[0];
        for k in 0..run.horizon {
            let rec = r
                .invert_input(run.states.row(k), run.states.row(k + 1))
                .unwrap();
            assert!(
                (rec[0] - u_prev).abs() < 1e-9,
                "loop identity broken at step {k}"
            );
            u_prev = run.predicted.values[[k, 0]];
        }
    }

    #[test]
    fn warmup_start_is_forgotten_before_forecasting() {
        // Teacher forcing synchronizes two arbitrary starts down to rounding
        // noise (the gap floors near 1 ulp; it never becomes bitwise zero
        // because the feedback keeps re-injecting last-bit differences).
        // Closed-loop agreement therefore holds until chaos doubles that
        // residual past tolerance: 1e-16 · 2^k < 1e-4 bounds k ≲ 40.
        let r = build(50, 0.5, 0.99, 57).unwrap();
        let observed = logistic_series(700, 7);
        let oracle = OracleGamma {
            res: &r,
            map: logistic,
        };
        let mut rng = seeds::rng_from(58);
        let x0a = Array1::from_shape_fn(50, |_| rng.gen_range(-1.0..1.0));
        let x0b = Array1::from_shape_fn(50, |_| rng.gen_range(-1.0..1.0));
        let ta = r.drive(&observed, 600, &x0a).unwrap();
        let tb = r.drive(&observed, 600, &x0b).unwrap();
        let last = ta.len() - 1;
        let state_gap = ta
            .states
            .row(last)
            .iter()
            .zip(tb.states.row(last).iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(state_gap < 1e-12, "states failed to synchronize: {state_gap}");

        let ra = closed_loop(&r, &oracle, observed.row(last), ta.states.row(last), 25, None, false)
            .unwrap();
        let rb = closed_loop(&r, &oracle, observed.row(last), tb.states.row(last), 25, None, false)
            .unwrap();
        let sup = ra
            .predicted
            .values
            .iter()
            .zip(rb.predicted.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(sup < 1e-4, "forecasts diverged by {sup}");
    }

    #[test]
    fn escape_guard_stops_runaway_inputs() {
        let r = build(10, 0.5, 0.99, 59).unwrap();
        struct GrowingGamma;
        impl Gamma for GrowingGamma {
            fn apply(
                &self,
                _: ArrayView1<'_, f64>,
                x: ArrayView1<'_, f64>,
            ) -> Result<Array1<f64>> {
                // emits something growing with every step
                Ok(array![x.iter().map(|v| v.abs()).sum::<f64>() + 10.0])
            }
            fn output_dim(&self) -> usize {
                1
            }
        }
        let training = TimeSeries::new(
            Array2::from_shape_fn((50, 1), |(i, _)| (i as f64 * 0.7).sin() * 0.1),
            None,
        );
        let guard = EscapeGuard::from_series(&training, 10.0);
        let err = closed_loop(
            &r,
            &GrowingGamma,
            array![0.05].view(),
            Array1::zeros(10).view(),
            100,
            Some(&guard),
            false,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Escape { .. }));
    }

    #[test]
    fn reconstruction_inverts_a_linear_truth_exactly() {
        // Γ_full trained on synthetic truth that is an exact linear function
        // of the features: ridge recovers it, reconstruction divides the
        // scale back out
        let n = 6;
        let mut rng = seeds::rng_from(61);
        let states = Array2::from_shape_fn((100, n), |_| rng.gen_range(-0.8_f64..0.8));
        let map = Array2::from_shape_fn((2, 2 * n), |_| rng.gen_range(-1.0..1.0));
        let mut features = Array2::zeros((99, 2 * n));
        for t in 1..100 {
            features
                .slice_mut(s![t - 1, ..n])
                .assign(&states.row(t - 1));
            features.slice_mut(s![t - 1, n..]).assign(&states.row(t));
        }
        let truth = features.dot(&map.t());
        let set = crate::readout::TrainSet {
            inputs: features,
            targets: truth.clone(),
        };
        let reg = crate::readout::fit_ridge(&set, 0.0).unwrap();
        let model = ReadoutModel::new(
            PcaBasis::identity(n),
            reg,
            TargetKind::FullState,
            1.0,
        )
        .unwrap();
        let rec = reconstruct_full(&model, states.view()).unwrap();
        assert_eq!(rec.len(), 99);
        for (a, b) in rec.values.iter().zip(truth.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn reconstruction_rescales_by_the_target_scale() {
        let n = 3;
        let layer = Layer {
            w: Array2::zeros((2, 2 * n)),
            b: array![0.04, -0.02], // constant output 0.04, -0.02
            activation: Activation::Identity,
        };
        let model = ReadoutModel::new(
            PcaBasis::identity(n),
            Regressor {
                layers: vec![layer],
                training_log: vec![],
                holdout_mse: None,
            },
            TargetKind::FullState,
            0.01,
        )
        .unwrap();
        let states = Array2::zeros((5, n));
        let rec = reconstruct_full(&model, states.view()).unwrap();
        // output 0.04 at scale 1/100 decodes to 4.0
        for row in rec.values.rows() {
            assert!((row[0] - 4.0).abs() < 1e-12);
            assert!((row[1] + 2.0).abs() < 1e-12);
        }
    }

    #[test]
    fn next_input_models_cannot_reconstruct() {
        let model = ReadoutModel::new(
            PcaBasis::identity(2),
            Regressor {
                layers: vec![Layer {
                    w: Array2::zeros((1, 4)),
                    b: array![0.0],
                    activation: Activation::Identity,
                }],
                training_log: vec![],
                holdout_mse: None,
            },
            TargetKind::NextInput,
            1.0,
        )
        .unwrap();
        let states = Array2::zeros((5, 2));
        assert!(reconstruct_full(&model, states.view()).is_err());
    }

    #[test]
    fn delay_embedding_matches_the_definition() {
        let s = TimeSeries::new(
            Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            None,
        );
        let e = delay_embed(&s, 1).unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(e.row(0).to_vec(), vec![1.0, 2.0, 3.0]);
        assert_eq!(e.row(1).to_vec(), vec![2.0, 3.0, 4.0]);

        let id = delay_embed(&s, 0).unwrap();
        assert_eq!(id.len(), 4);
        assert_eq!(id.values, s.values);

        let long = logistic_series(100, 9);
        let e2 = delay_embed(&long, 3).unwrap();
        assert_eq!(e2.len(), 100 - 6);
        assert_eq!(e2.dim(), 7);
        assert!(delay_embed(&s, 2).is_err());
    }

    #[test]
    fn valid_time_finds_the_first_escape() {
        let truth = logistic_series(100, 11);
        assert_eq!(valid_time(&truth, &truth, 0.4).unwrap(), 100);

        let rms = (truth.values.iter().map(|v| v * v).sum::<f64>() / 100.0).sqrt();
        let mut offset = truth.clone();
        offset.values += 10.0 * rms;
        assert_eq!(valid_time(&offset, &truth, 0.4).unwrap(), 0);

        let mut late = truth.clone();
        late.values[[60, 0]] += rms;
        assert_eq!(valid_time(&late, &truth, 0.4).unwrap(), 60);

        let zero = TimeSeries::new(Array2::zeros((10, 1)), None);
        assert!(valid_time(&zero, &zero, 0.4).is_err());
    }

    #[test]
    fn oracle_valid_time_spans_the_float_predictability_horizon() {
        // error doubles per step from inversion precision ~1e-10, so the
        // 0.4-relative tube holds for roughly log2(0.1/1e-10) ≈ 30 steps
        let r = build(100, 0.5, 0.99, 63).unwrap();
        let observed = logistic_series(400, 13);
        let traj = r.drive(&observed, 200, &Array1::zeros(100)).unwrap();
        let oracle = OracleGamma {
            res: &r,
            map: logistic,
        };
        let last = traj.len() - 1;
        let run = closed_loop(
            &r,
            &oracle,
            observed.row(last),
            traj.states.row(last),
            60,
            None,
            false,
        )
        .unwrap();
        let mut w = observed.row(last)[0];
        let mut truth = Array2::zeros((60, 1));
        for k in 0..60 {
            w = logistic(w);
            truth[[k, 0]] = w;
        }
        let vt = valid_time(&run.predicted, &TimeSeries::new(truth, None), 0.4).unwrap();
        assert!(vt >= 20, "valid time {vt}");
    }
}

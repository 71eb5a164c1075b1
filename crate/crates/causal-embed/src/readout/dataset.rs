//! Training pairs for the readout: consecutive projected state pairs
//! (z_{n−1}, z_n) mapped to the value the readout must emit at step n.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::pca::PcaBasis;
use crate::reservoir::StateTrajectory;
use crate::series::TimeSeries;

/// What the readout predicts from a state pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    /// The next input u_n — the map that closes the forecasting loop.
    #[default]
    NextInput,
    /// The scaled hidden full state, target_scale·w_n — the map that
    /// reconstructs unobserved coordinates from reservoir states.
    FullState,
}

/// Feature/target matrices ready for regression. Row m pairs the features
/// (z_{n−1}, z_n) with the step-n target, n = washout+1+m.
#[derive(Debug, Clone)]
pub struct TrainSet {
    /// M × 2N stacked projections.
    pub inputs: Array2<f64>,
    /// M × D targets (D = input dimension or hidden-state dimension).
    pub targets: Array2<f64>,
}

impl TrainSet {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    /// Report-only split: everything before the cut trains, the tail is for
    /// residual reporting. `frac` is the held-out fraction of pairs.
    pub fn split_tail(&self, frac: f64) -> (TrainSet, TrainSet) {
        let m = self.len();
        let tail = ((m as f64) * frac).floor() as usize;
        let cut = m - tail.min(m);
        (
            TrainSet {
                inputs: self.inputs.slice(s![..cut, ..]).to_owned(),
                targets: self.targets.slice(s![..cut, ..]).to_owned(),
            },
            TrainSet {
                inputs: self.inputs.slice(s![cut.., ..]).to_owned(),
                targets: self.targets.slice(s![cut.., ..]).to_owned(),
            },
        )
    }
}

/// Assemble training pairs from an aligned trajectory and target series.
///
/// The alignment is the one-step-ahead convention: the stored states satisfy
/// x_n = g(u_{n−1}, x_{n−1}), so inverting the pair (x_{n−1}, x_n) would
/// recover u_{n−1}; the training target at that pair is the NEXT value,
/// index n. For `NextInput` the target series is the observed input series
/// itself; for `FullState` it is the hidden truth, multiplied by
/// `target_scale` here so the regressor learns a bounded quantity.
pub fn make_dataset(
    traj: &StateTrajectory,
    targets: &TimeSeries,
    kind: TargetKind,
    target_scale: f64,
    basis: &PcaBasis,
) -> Result<TrainSet> {
    let l = traj.len();
    if targets.len() != l {
        return Err(Error::DimensionMismatch {
            expected: l,
            got: targets.len(),
        });
    }
    if l < traj.washout + 2 {
        return Err(Error::ShortSeries {
            need: traj.washout + 2,
            got: l,
        });
    }
    if basis.n() != traj.states.ncols() {
        return Err(Error::DimensionMismatch {
            expected: traj.states.ncols(),
            got: basis.n(),
        });
    }
    if kind == TargetKind::FullState && !(target_scale.is_finite() && target_scale != 0.0) {
        return Err(Error::InvalidConfig(format!(
            "target_scale must be finite and nonzero, got {target_scale}"
        )));
    }

    let n = basis.n();
    let z = basis.project_rows(traj.states.view())?;
    let m = l - traj.washout - 1;
    let d = targets.dim();
    let mut inputs = Array2::zeros((m, 2 * n));
    let mut out = Array2::zeros((m, d));
    let scale = match kind {
        TargetKind::NextInput => 1.0,
        TargetKind::FullState => target_scale,
    };
    for (row, step) in (traj.washout + 1..l).enumerate() {
        inputs
            .slice_mut(s![row, ..n])
            .assign(&z.row(step - 1));
        inputs
            .slice_mut(s![row, n..])
            .assign(&z.row(step));
        let mut t = out.row_mut(row);
        t.assign(&targets.row(step));
        t *= scale;
    }
    Ok(TrainSet {
        inputs,
        targets: out,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::build;
    use crate::seeds;
    use crate::systems::{generate, SystemKind, SystemSpec};
    use ndarray::Array1;
    use rand::Rng;

    fn logistic_series(n: usize) -> TimeSeries {
        let spec = SystemSpec {
            kind: SystemKind::Logistic,
            parameters: Default::default(),
            dt: None,
            n_samples: n,
            seed: 3,
            initial_state: vec![0.41],
            transient_discard: 50,
        };
        let mut ts = generate(&spec).unwrap();
        // center into the reservoir's input range
        let mean = ts.values.mean().unwrap();
        ts.values -= mean;
        ts
    }

    #[test]
    fn three_states_make_two_pairs() {
        let r = build(8, 0.5, 0.99, 1).unwrap();
        let inputs = logistic_series(3);
        let traj = r.drive(&inputs, 0, &Array1::zeros(8)).unwrap();
        let basis = PcaBasis::identity(8);
        let set = make_dataset(&traj, &inputs, TargetKind::NextInput, 1.0, &basis).unwrap();
        assert_eq!(set.len(), 2);
        assert_eq!(set.inputs.ncols(), 16);
        assert_eq!(set.targets.ncols(), 1);
    }

    #[test]
    fn pair_inversion_recovers_previous_input_target_is_next() {
        let r = build(20, 0.5, 0.99, 2).unwrap();
        let inputs = logistic_series(40);
        let washout = 5;
        let traj = r.drive(&inputs, washout, &Array1::zeros(20)).unwrap();
        let basis = PcaBasis::identity(20);
        let set = make_dataset(&traj, &inputs, TargetKind::NextInput, 1.0, &basis).unwrap();
        for (row, n) in (washout + 1..traj.len()).enumerate() {
            let u_rec = r
                .invert_input(traj.states.row(n - 1), traj.states.row(n))
                .unwrap();
            // inversion yields the PREVIOUS input ...
            assert!((u_rec[0] - inputs.values[[n - 1, 0]]).abs() < 1e-9);
            // ... while the stored target is the NEXT one
            assert_eq!(set.targets[[row, 0]], inputs.values[[n, 0]]);
            assert_ne!(set.targets[[row, 0]], inputs.values[[n - 1, 0]]);
        }
    }

    #[test]
    fn features_are_the_projected_state_pair() {
        let r = build(10, 0.5, 0.99, 4).unwrap();
        let inputs = logistic_series(30);
        let traj = r.drive(&inputs, 3, &Array1::zeros(10)).unwrap();
        let basis = crate::readout::pca::fit_pca(&traj, true).unwrap();
        let set = make_dataset(&traj, &inputs, TargetKind::NextInput, 1.0, &basis).unwrap();
        let n = 7; // arbitrary pair index
        let row = n - traj.washout - 1;
        let z_prev = basis.project(traj.states.row(n - 1)).unwrap();
        let z_cur = basis.project(traj.states.row(n)).unwrap();
        // batch and single-vector projections may differ in the last bit
        for i in 0..10 {
            assert!((set.inputs[[row, i]] - z_prev[i]).abs() < 1e-12);
            assert!((set.inputs[[row, 10 + i]] - z_cur[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn full_state_targets_are_scaled_into_the_unit_box() {
        let spec = SystemSpec {
            kind: SystemKind::Lorenz,
            parameters: Default::default(),
            dt: Some(0.02),
            n_samples: 200,
            seed: 7,
            initial_state: vec![1.0, 1.0, 1.0],
            transient_discard: 200,
        };
        let truth = generate(&spec).unwrap();
        let mut observed = truth.clone();
        observed.values *= 0.01;
        let r = build(15, 0.5, 0.99, 5).unwrap();
        let traj = r.drive(&observed, 20, &Array1::zeros(15)).unwrap();
        let basis = PcaBasis::identity(15);
        let hidden = TimeSeries::new(truth.hidden_truth.clone().unwrap(), truth.dt);
        let set = make_dataset(&traj, &hidden, TargetKind::FullState, 0.01, &basis).unwrap();
        assert_eq!(set.targets.ncols(), 3);
        assert!(set.targets.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn misaligned_targets_are_rejected() {
        let r = build(6, 0.5, 0.99, 6).unwrap();
        let inputs = logistic_series(20);
        let traj = r.drive(&inputs, 2, &Array1::zeros(6)).unwrap();
        let short = logistic_series(19);
        let basis = PcaBasis::identity(6);
        assert!(make_dataset(&traj, &short, TargetKind::NextInput, 1.0, &basis).is_err());
    }

    #[test]
    fn tail_split_keeps_order_and_sizes() {
        let mut rng = seeds::rng_from(8);
        let set = TrainSet {
            inputs: Array2::from_shape_fn((100, 4), |_| rng.gen_range(-1.0..1.0)),
            targets: Array2::from_shape_fn((100, 2), |_| rng.gen_range(-1.0..1.0)),
        };
        let (train, held) = set.split_tail(0.1);
        assert_eq!(train.len(), 90);
        assert_eq!(held.len(), 10);
        assert_eq!(held.inputs.row(0), set.inputs.row(90));
    }
}

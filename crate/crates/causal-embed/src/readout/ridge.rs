//! Closed-form ridge readout: the exact minimizer of
//! ‖G·W − Y‖² + λ‖W‖² on bias-augmented features G = (z_{n−1}, z_n, 1).
//!
//! Serves two purposes: a fast linear baseline for the readout (the state
//! pairs become increasingly linearly related to the targets as the
//! reservoir grows), and a closed-form optimum against which gradient
//! training is cross-checked.

use ndarray::{s, Array1, Array2};
use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{to_array2, to_dmatrix};
use crate::readout::dataset::TrainSet;
use crate::readout::mlp::{Activation, Layer, Regressor};

/// Solve (GᵀG + λI)·W = GᵀY by Cholesky factorization and wrap the solution
/// as a single-layer linear [`Regressor`]. The identity penalty covers the
/// bias row as well, exactly as the normal equations above state.
pub fn fit_ridge(data: &TrainSet, lambda: f64) -> Result<Regressor> {
    if data.is_empty() {
        return Err(Error::DegenerateData("no training pairs".into()));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidConfig(format!("lambda must be ≥ 0, got {lambda}")));
    }
    let g = augment(&data.inputs);
    let gt = to_dmatrix(&g);
    let y = to_dmatrix(&data.targets);
    let mut gram = gt.transpose() * &gt;
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let rhs = gt.transpose() * y;
    let chol = nalgebra::linalg::Cholesky::new(gram).ok_or_else(|| {
        Error::SingularMatrix(
            "normal matrix is singular; features are linearly dependent and λ = 0".into(),
        )
    })?;
    let w = chol.solve(&rhs); // (2N+1) × D
    let w = to_array2(&w);

    let p = data.inputs.ncols();
    let weights = w.slice(s![..p, ..]).t().to_owned();
    let bias: Array1<f64> = w.row(p).to_owned();
    let layer = Layer {
        w: weights,
        b: bias,
        activation: Activation::Identity,
    };
    let mut reg = Regressor {
        layers: vec![layer],
        training_log: Vec::new(),
        holdout_mse: None,
    };
    let final_mse = reg.mse(data.inputs.view(), data.targets.view());
    reg.training_log.push(final_mse);
    Ok(reg)
}

/// The ridge objective ‖G·W − Y‖²_F + λ‖W‖²_F evaluated for a single-layer
/// linear regressor (bias included in W, matching [`fit_ridge`]).
pub fn ridge_objective(data: &TrainSet, reg: &Regressor, lambda: f64) -> Result<f64> {
    if reg.layers.len() != 1 || reg.layers[0].activation != Activation::Identity {
        return Err(Error::InvalidConfig(
            "ridge objective is defined for single-layer linear regressors".into(),
        ));
    }
    let pred = reg.forward_batch(data.inputs.view());
    let resid: f64 = pred
        .iter()
        .zip(data.targets.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    let layer = &reg.layers[0];
    let penalty: f64 =
        layer.w.iter().map(|v| v * v).sum::<f64>() + layer.b.iter().map(|v| v * v).sum::<f64>();
    Ok(resid + lambda * penalty)
}

fn augment(inputs: &Array2<f64>) -> Array2<f64> {
    let (m, p) = inputs.dim();
    let mut g = Array2::ones((m, p + 1));
    g.slice_mut(s![.., ..p]).assign(inputs);
    g
}

/// Residual of the normal equations ‖(GᵀG+λI)W − GᵀY‖_F relative to ‖GᵀY‖_F —
/// the solver-tolerance certificate.
pub fn normal_equation_residual(data: &TrainSet, reg: &Regressor, lambda: f64) -> Result<f64> {
    if reg.layers.len() != 1 {
        return Err(Error::InvalidConfig("expected a linear regressor".into()));
    }
    let g = augment(&data.inputs);
    let gt = to_dmatrix(&g);
    let y = to_dmatrix(&data.targets);
    let p = data.inputs.ncols();
    let d = data.targets.ncols();
    let mut w = DMatrix::zeros(p + 1, d);
    for r in 0..p {
        for c in 0..d {
            w[(r, c)] = reg.layers[0].w[[c, r]];
        }
    }
    for c in 0..d {
        w[(p, c)] = reg.layers[0].b[c];
    }
    let gram = gt.transpose() * &gt;
    let rhs = gt.transpose() * y;
    let lhs = &gram * &w + lambda * &w;
    Ok((lhs - &rhs).norm() / rhs.norm().max(1e-300))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::readout::mlp::{train_regressor, Architecture, OptimizerConfig};
    use crate::seeds;
    use rand::Rng;

    fn linear_set(m: usize, d_in: usize, d_out: usize, seed: u64) -> TrainSet {
        let mut rng = seeds::rng_from(seed);
        let map = Array2::from_shape_fn((d_out, d_in), |_| rng.gen_range(-1.0..1.0));
        let inputs = Array2::from_shape_fn((m, d_in), |_| rng.gen_range(-1.0..1.0));
        let targets = inputs.dot(&map.t());
        TrainSet { inputs, targets }
    }

    fn noisy_set(m: usize, d_in: usize, d_out: usize, seed: u64) -> TrainSet {
        let mut set = linear_set(m, d_in, d_out, seed);
        let mut rng = seeds::rng_from(seed ^ 0xabcd);
        set.targets
            .mapv_inplace(|v| v + 0.1 * rng.gen_range(-1.0_f64..1.0));
        set
    }

    #[test]
    fn exactly_linear_data_fits_to_zero_residual() {
        let set = linear_set(100, 6, 2, 21);
        let reg = fit_ridge(&set, 0.0).unwrap();
        let pred = reg.forward_batch(set.inputs.view());
        for (a, b) in pred.iter().zip(set.targets.iter()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn huge_penalty_shrinks_weights_to_zero() {
        let set = noisy_set(100, 5, 2, 22);
        let reg = fit_ridge(&set, 1e12).unwrap();
        for v in reg.layers[0].w.iter().chain(reg.layers[0].b.iter()) {
            assert!(v.abs() < 1e-6, "weight {v} not shrunk");
        }
    }

    #[test]
    fn duplicate_features_without_penalty_are_singular() {
        let mut set = noisy_set(50, 4, 1, 23);
        let col = set.inputs.column(0).to_owned();
        set.inputs.column_mut(3).assign(&col);
        assert!(matches!(
            fit_ridge(&set, 0.0),
            Err(Error::SingularMatrix(_))
        ));
        // a positive penalty regularizes the same data
        assert!(fit_ridge(&set, 1e-8).is_ok());
    }

    #[test]
    fn solution_satisfies_the_normal_equations() {
        let set = noisy_set(200, 8, 3, 24);
        let reg = fit_ridge(&set, 1e-6).unwrap();
        let r = normal_equation_residual(&set, &reg, 1e-6).unwrap();
        assert!(r < 1e-10, "normal-equation residual {r}");
    }

    #[test]
    fn closed_form_beats_gradient_descent() {
        let set = noisy_set(300, 6, 2, 25);
        let lambda = 1e-6;
        let ridge = fit_ridge(&set, lambda).unwrap();
        let opt = OptimizerConfig {
            learning_rate: 1e-2,
            epochs: 400,
            lr_decay: 0.99,
            ..OptimizerConfig::default()
        };
        let trained = train_regressor(&set, &Architecture::linear(), &opt, 31).unwrap();
        let j_ridge = ridge_objective(&set, &ridge, lambda).unwrap();
        let j_descent = ridge_objective(&set, &trained, lambda).unwrap();
        assert!(
            j_ridge <= j_descent + 1e-8,
            "ridge {j_ridge} vs descent {j_descent}"
        );
    }

    #[test]
    fn optimum_is_stable_under_perturbation() {
        let set = noisy_set(150, 5, 2, 26);
        let lambda = 1e-3;
        let reg = fit_ridge(&set, lambda).unwrap();
        let j0 = ridge_objective(&set, &reg, lambda).unwrap();
        let mut rng = seeds::rng_from(27);
        for _ in 0..10 {
            let mut bumped = reg.clone();
            bumped.layers[0]
                .w
                .mapv_inplace(|v| v + 1e-3 * rng.gen_range(-1.0_f64..1.0));
            let j = ridge_objective(&set, &bumped, lambda).unwrap();
            assert!(j >= j0 - 1e-12);
        }
    }

    #[test]
    fn sign_flips_of_the_basis_leave_the_optimum_unchanged() {
        // flipping principal-direction signs flips feature columns; the
        // retrained linear readout must land on the same training MSE
        let set = noisy_set(120, 6, 2, 28);
        let mut flipped = set.clone();
        for j in [0usize, 2, 5] {
            let col = flipped.inputs.column(j).mapv(|v| -v);
            flipped.inputs.column_mut(j).assign(&col);
        }
        let a = fit_ridge(&set, 1e-6).unwrap();
        let b = fit_ridge(&flipped, 1e-6).unwrap();
        let mse_a = a.training_log[0];
        let mse_b = b.training_log[0];
        assert!((mse_a - mse_b).abs() < 1e-10);
    }
}

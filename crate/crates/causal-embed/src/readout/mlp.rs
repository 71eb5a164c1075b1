//! Feedforward regressor trained by mini-batch adaptive-moment descent on
//! mean-squared error, written against plain matrices so gradients can be
//! audited against finite differences.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::readout::dataset::TrainSet;
use crate::seeds;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the activation's own output value
    /// (tanh'(x) = 1 − tanh(x)²), so the backward pass needs no pre-activation
    /// cache.
    #[inline]
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Hidden-layer widths plus their activation; the output layer is always
/// linear. An empty `hidden` list is a plain linear regressor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub hidden: Vec<usize>,
    pub activation: Activation,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            hidden: vec![128, 128],
            activation: Activation::Tanh,
        }
    }
}

impl Architecture {
    pub fn linear() -> Self {
        Architecture {
            hidden: Vec::new(),
            activation: Activation::Identity,
        }
    }
}

/// First-order adaptive-moment optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Per-epoch multiplicative step-size decay; 1.0 keeps the step constant.
    /// Tight-convergence runs set it below 1 so the iterate settles instead
    /// of orbiting the optimum at step-size scale.
    pub lr_decay: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_size: 64,
            epochs: 200,
            lr_decay: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Layer {
    /// out × in weight matrix.
    pub w: Array2<f64>,
    pub b: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.dot(&self.w.t());
        h += &self.b;
        h.mapv_inplace(|v| self.activation.apply(v));
        h
    }
}

/// Trained readout network. Weights are immutable after training; both the
/// per-epoch loss log and the report-only tail residual are kept alongside.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Regressor {
    pub layers: Vec<Layer>,
    pub training_log: Vec<f64>,
    /// MSE on the last 10% of pairs after training (report-only; those pairs
    /// are not withheld from training).
    pub holdout_mse: Option<f64>,
}

impl Regressor {
    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.w.ncols())
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.w.nrows())
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let row = x.insert_axis(Axis(0));
        Ok(self.forward_batch(row).index_axis_move(Axis(0), 0))
    }

    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for layer in &self.layers {
            h = layer.forward_batch(h.view());
        }
        h
    }

    /// Mean-squared error over all samples and output components.
    pub fn mse(&self, x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>) -> f64 {
        let pred = self.forward_batch(x);
        let diff = &pred - &y;
        diff.iter().map(|v| v * v).sum::<f64>() / (x.nrows() * y.ncols()) as f64
    }

    /// Batch MSE and its gradient with respect to every weight and bias,
    /// via reverse accumulation. Exposed so the gradients can be checked
    /// against central finite differences.
    pub fn loss_and_gradients(
        &self,
        x: ArrayView2<'_, f64>,
        y: ArrayView2<'_, f64>,
    ) -> (f64, Vec<(Array2<f64>, Array1<f64>)>) {
        let scale = 1.0 / (x.nrows() * y.ncols()) as f64;
        // forward, keeping every post-activation output
        let mut acts: Vec<Array2<f64>> = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        for layer in &self.layers {
            let next = layer.forward_batch(acts.last().expect("seeded").view());
            acts.push(next);
        }
        let out = acts.last().expect("nonempty");
        let diff = out - &y;
        let loss = diff.iter().map(|v| v * v).sum::<f64>() * scale;

        // d(loss)/d(pre-activation of the last layer)
        let mut delta = diff * (2.0 * scale);
        let last = self.layers.len() - 1;
        delta.zip_mut_with(&acts[last + 1], |d, a| {
            *d *= self.layers[last].activation.derivative_from_output(*a)
        });

        let mut grads: Vec<(Array2<f64>, Array1<f64>)> = (0..self.layers.len())
            .map(|_| (Array2::zeros((0, 0)), Array1::zeros(0)))
            .collect();
        for l in (0..self.layers.len()).rev() {
            grads[l] = (delta.t().dot(&acts[l]), delta.sum_axis(Axis(0)));
            if l > 0 {
                let mut prev = delta.dot(&self.layers[l].w);
                prev.zip_mut_with(&acts[l], |d, a| {
                    *d *= self.layers[l - 1].activation.derivative_from_output(*a)
                });
                delta = prev;
            }
        }
        (loss, grads)
    }
}

/// Glorot-uniform initial weights for the given layer chain; biases zero.
pub fn init_regressor(
    input_dim: usize,
    output_dim: usize,
    arch: &Architecture,
    seed: u64,
) -> Result<Regressor> {
    if input_dim == 0 || output_dim == 0 {
        return Err(Error::InvalidConfig("zero-width regressor".into()));
    }
    if arch.hidden.iter().any(|&h| h == 0) {
        return Err(Error::InvalidConfig("zero-width hidden layer".into()));
    }
    let mut rng = seeds::rng_from(seed);
    let mut dims = vec![input_dim];
    dims.extend_from_slice(&arch.hidden);
    dims.push(output_dim);
    let mut layers = Vec::with_capacity(dims.len() - 1);
    for win in dims.windows(2) {
        let (fan_in, fan_out) = (win[0], win[1]);
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_out, fan_in), |_| rng.gen_range(-s..s));
        let activation = if layers.len() + 1 == dims.len() - 1 {
            Activation::Identity
        } else {
            arch.activation
        };
        layers.push(Layer {
            w,
            b: Array1::zeros(fan_out),
            activation,
        });
    }
    Ok(Regressor {
        layers,
        training_log: Vec::new(),
        holdout_mse: None,
    })
}

/// Train a regressor on the pairs: seeded Glorot init, seeded shuffles,
/// mini-batch adaptive-moment updates of the MSE. Fully deterministic in
/// (data, arch, opt, seed).
pub fn train_regressor(
    data: &TrainSet,
    arch: &Architecture,
    opt: &OptimizerConfig,
    seed: u64,
) -> Result<Regressor> {
    if data.is_empty() {
        return Err(Error::DegenerateData("no training pairs".into()));
    }
    if opt.batch_size == 0 || opt.epochs == 0 {
        return Err(Error::InvalidConfig(
            "batch_size and epochs must be ≥ 1".into(),
        ));
    }
    if !(opt.learning_rate > 0.0 && opt.lr_decay > 0.0 && opt.lr_decay <= 1.0) {
        return Err(Error::InvalidConfig(
            "learning_rate must be > 0 and lr_decay in (0,1]".into(),
        ));
    }
    let mut net = init_regressor(data.inputs.ncols(), data.targets.ncols(), arch, seed)?;
    let mut rng = seeds::rng_from(seeds::stage_seed(seed, "shuffle"));

    // first/second moment accumulators, one pair per layer
    let mut moments: Vec<(Array2<f64>, Array1<f64>, Array2<f64>, Array1<f64>)> = net
        .layers
        .iter()
        .map(|l| {
            (
                Array2::zeros(l.w.dim()),
                Array1::zeros(l.b.len()),
                Array2::zeros(l.w.dim()),
                Array1::zeros(l.b.len()),
            )
        })
        .collect();

    let m = data.len();
    let mut order: Vec<usize> = (0..m).collect();
    let mut t: u64 = 0;
    let mut lr = opt.learning_rate;
    for epoch in 0..opt.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(opt.batch_size) {
            let xb = data.inputs.select(Axis(0), batch);
            let yb = data.targets.select(Axis(0), batch);
            let (loss, grads) = net.loss_and_gradients(xb.view(), yb.view());
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch });
            }
            epoch_loss += loss * batch.len() as f64;
            t += 1;
            let bc1 = 1.0 - opt.beta1.powi(t as i32);
            let bc2 = 1.0 - opt.beta2.powi(t as i32);
            for (l, (gw, gb)) in grads.into_iter().enumerate() {
                let (mw, mb, vw, vb) = &mut moments[l];
                adam_update(&mut net.layers[l].w, gw, mw, vw, opt, lr, bc1, bc2);
                adam_update_vec(&mut net.layers[l].b, gb, mb, vb, opt, lr, bc1, bc2);
            }
        }
        net.training_log.push(epoch_loss / m as f64);
        lr *= opt.lr_decay;
    }

    let (_, tail) = data.split_tail(0.1);
    if !tail.is_empty() {
        net.holdout_mse = Some(net.mse(tail.inputs.view(), tail.targets.view()));
    }
    Ok(net)
}

fn adam_update(
    w: &mut Array2<f64>,
    g: Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    opt: &OptimizerConfig,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(w)
        .and(&g)
        .and(m)
        .and(v)
        .for_each(|w, &g, m, v| {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + opt.epsilon);
        });
}

fn adam_update_vec(
    w: &mut Array1<f64>,
    g: Array1<f64>,
    m: &mut Array1<f64>,
    v: &mut Array1<f64>,
    opt: &OptimizerConfig,
    lr: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(w)
        .and(&g)
        .and(m)
        .and(v)
        .for_each(|w, &g, m, v| {
            *m = opt.beta1 * *m + (1.0 - opt.beta1) * g;
            *v = opt.beta2 * *v + (1.0 - opt.beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * m_hat / (v_hat.sqrt() + opt.epsilon);
        });
}

/// Soft sanity check on a loss log: means over consecutive `window`-epoch
/// blocks may not rise by more than the relative `slack`.
pub fn training_log_smooth_ok(log: &[f64], window: usize, slack: f64) -> bool {
    if log.len() < 2 * window || window == 0 {
        return true;
    }
    let means: Vec<f64> = log
        .chunks(window)
        .filter(|c| c.len() == window)
        .map(|c| c.iter().sum::<f64>() / window as f64)
        .collect();
    means
        .windows(2)
        .all(|w| w[1] <= w[0] * (1.0 + slack) + f64::EPSILON)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn random_set(m: usize, d_in: usize, d_out: usize, seed: u64) -> TrainSet {
        let mut rng = seeds::rng_from(seed);
        TrainSet {
            inputs: Array2::from_shape_fn((m, d_in), |_| rng.gen_range(-1.0..1.0)),
            targets: Array2::from_shape_fn((m, d_out), |_| rng.gen_range(-1.0..1.0)),
        }
    }

    fn linear_set(m: usize, d_in: usize, d_out: usize, seed: u64) -> TrainSet {
        let mut rng = seeds::rng_from(seed);
        let map = Array2::from_shape_fn((d_out, d_in), |_| rng.gen_range(-1.0..1.0));
        let inputs = Array2::from_shape_fn((m, d_in), |_| rng.gen_range(-1.0..1.0));
        let targets = inputs.dot(&map.t());
        TrainSet { inputs, targets }
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut rng = seeds::rng_from(77);
        for trial in 0..20 {
            let d_in = rng.gen_range(2..5);
            let d_out = rng.gen_range(1..4);
            let n_hidden = rng.gen_range(0..3);
            let hidden: Vec<usize> = (0..n_hidden).map(|_| rng.gen_range(2..6)).collect();
            let arch = Architecture {
                hidden,
                activation: Activation::Tanh,
            };
            let mut net = init_regressor(d_in, d_out, &arch, 1000 + trial).unwrap();
            let set = random_set(6, d_in, d_out, 2000 + trial);
            let (_, grads) = net.loss_and_gradients(set.inputs.view(), set.targets.view());

            let h = 1e-5;
            for l in 0..net.layers.len() {
                let (rows, cols) = net.layers[l].w.dim();
                for i in 0..rows {
                    for j in 0..cols {
                        let orig = net.layers[l].w[[i, j]];
                        net.layers[l].w[[i, j]] = orig + h;
                        let up = net.mse(set.inputs.view(), set.targets.view());
                        net.layers[l].w[[i, j]] = orig - h;
                        let down = net.mse(set.inputs.view(), set.targets.view());
                        net.layers[l].w[[i, j]] = orig;
                        let numeric = (up - down) / (2.0 * h);
                        let analytic = grads[l].0[[i, j]];
                        let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                        assert!(
                            (numeric - analytic).abs() / denom <= 1e-4,
                            "layer {l} w[{i},{j}]: analytic {analytic} vs numeric {numeric}"
                        );
                    }
                    let orig = net.layers[l].b[i];
                    net.layers[l].b[i] = orig + h;
                    let up = net.mse(set.inputs.view(), set.targets.view());
                    net.layers[l].b[i] = orig - h;
                    let down = net.mse(set.inputs.view(), set.targets.view());
                    net.layers[l].b[i] = orig;
                    let numeric = (up - down) / (2.0 * h);
                    let analytic = grads[l].1[i];
                    let denom = numeric.abs().max(analytic.abs()).max(1e-8);
                    assert!((numeric - analytic).abs() / denom <= 1e-4);
                }
            }
        }
    }

    #[test]
    fn linear_data_trains_to_the_least_squares_floor() {
        let set = linear_set(256, 6, 2, 5);
        let opt = OptimizerConfig {
            learning_rate: 2e-2,
            epochs: 600,
            lr_decay: 0.98,
            ..OptimizerConfig::default()
        };
        let net = train_regressor(&set, &Architecture::linear(), &opt, 9).unwrap();
        let final_mse = *net.training_log.last().unwrap();
        assert!(final_mse < 1e-6, "final MSE {final_mse}");
    }

    #[test]
    fn zero_targets_collapse_the_output() {
        let mut set = random_set(200, 5, 2, 6);
        set.targets.fill(0.0);
        let opt = OptimizerConfig {
            learning_rate: 1e-2,
            beta2: 0.99,
            epochs: 1000,
            batch_size: 32,
            lr_decay: 0.99,
            ..OptimizerConfig::default()
        };
        // the convex case tracks the decayed step all the way down
        let linear = train_regressor(&set, &Architecture::linear(), &opt, 11).unwrap();
        let mse = linear.mse(set.inputs.view(), set.targets.view());
        assert!(mse < 1e-10, "linear MSE {mse}");

        // with a tanh hidden layer the landscape has flat directions — the
        // optimizer parks the output in the orthogonal complement of the
        // hidden activations and residual decay stalls near 1e-7
        let arch = Architecture {
            hidden: vec![8],
            activation: Activation::Tanh,
        };
        let opt = OptimizerConfig {
            epochs: 2000,
            lr_decay: 0.995,
            ..opt
        };
        let net = train_regressor(&set, &arch, &opt, 11).unwrap();
        let mse = net.mse(set.inputs.view(), set.targets.view());
        assert!(mse < 1e-6, "hidden-layer MSE {mse}");
    }

    #[test]
    fn training_is_seed_deterministic() {
        let set = random_set(100, 4, 2, 7);
        let opt = OptimizerConfig {
            epochs: 30,
            ..OptimizerConfig::default()
        };
        let arch = Architecture {
            hidden: vec![16],
            activation: Activation::Tanh,
        };
        let n1 = train_regressor(&set, &arch, &opt, 13).unwrap();
        let n2 = train_regressor(&set, &arch, &opt, 13).unwrap();
        assert_eq!(n1.training_log, n2.training_log);
        for (l1, l2) in n1.layers.iter().zip(&n2.layers) {
            assert_eq!(l1.w, l2.w);
        }
        let n3 = train_regressor(&set, &arch, &opt, 14).unwrap();
        assert_ne!(n1.training_log, n3.training_log);
    }

    #[test]
    fn loss_log_decreases_smoothly_on_a_healthy_run() {
        let set = linear_set(200, 4, 1, 8);
        let opt = OptimizerConfig {
            epochs: 100,
            lr_decay: 0.97,
            ..OptimizerConfig::default()
        };
        let net = train_regressor(&set, &Architecture::default(), &opt, 15).unwrap();
        assert_eq!(net.training_log.len(), 100);
        assert!(training_log_smooth_ok(&net.training_log, 10, 0.05));
        assert!(net.holdout_mse.is_some());
    }

    #[test]
    fn exploding_training_aborts_with_the_epoch() {
        let mut set = random_set(50, 3, 1, 9);
        set.targets *= 1e300; // un-normalizable targets overflow the loss
        let opt = OptimizerConfig::default();
        match train_regressor(&set, &Architecture::linear(), &opt, 17) {
            Err(Error::NonFiniteLoss { .. }) => {}
            other => panic!("expected non-finite loss abort, got {other:?}"),
        }
    }

    #[test]
    fn forward_of_known_single_layer_is_affine() {
        let net = Regressor {
            layers: vec![Layer {
                w: ndarray::array![[1.0, 2.0], [0.0, -1.0]],
                b: ndarray::array![0.5, 0.0],
                activation: Activation::Identity,
            }],
            training_log: vec![],
            holdout_mse: None,
        };
        let out = net.forward(ndarray::array![3.0, 4.0].view()).unwrap();
        assert_abs_diff_eq!(out[0], 11.5);
        assert_abs_diff_eq!(out[1], -4.0);
    }
}

//! Long-horizon diagnostics. A chaotic forecast stops tracking the truth
//! after a few Lyapunov times no matter how good the model is, so the
//! interesting questions become statistical: does the forecast stay on the
//! attractor, reproduce its invariant density, its intermittency timing
//! statistics, and the geometry linking reservoir states to input histories?

use ndarray::ArrayView2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reservoir::StateTrajectory;
use crate::series::TimeSeries;

/// Binned invariant-density estimate with optional Gaussian smoothing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityEstimate {
    /// bins+1 monotone edges covering the sample range
    pub bin_edges: Vec<f64>,
    /// nonnegative masses summing to 1
    pub mass: Vec<f64>,
    /// smoothing bandwidth in bin units (0 = raw histogram)
    pub bandwidth: f64,
}

impl DensityEstimate {
    pub fn bins(&self) -> usize {
        self.mass.len()
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.bin_edges[i] + self.bin_edges[i + 1])
    }

    /// Two-column CSV export (bin_center, mass).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_center,mass\n");
        for i in 0..self.bins() {
            out.push_str(&format!("{:.17e},{:.17e}\n", self.bin_center(i), self.mass[i]));
        }
        out
    }
}

/// Laminar-phase length statistics for intermittent series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaminarStats {
    pub count: usize,
    pub mean: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
}

/// Bundle of every evaluation metric for one forecast run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub valid_time: usize,
    pub density_distance: f64,
    pub bounded: bool,
    pub rv_coefficient: f64,
    pub laminar_stats: Option<LaminarStats>,
    pub injectivity_ratio: Option<f64>,
    pub config_hash: Option<String>,
}

impl EvalReport {
    /// Flat key-value serialization, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.config_hash {
            out.push_str(&format!("config_hash = {h}\n"));
        }
        out.push_str(&format!("valid_time = {}\n", self.valid_time));
        out.push_str(&format!("density_distance = {:.12}\n", self.density_distance));
        out.push_str(&format!("bounded = {}\n", self.bounded));
        out.push_str(&format!("rv_coefficient = {:.12}\n", self.rv_coefficient));
        if let Some(l) = &self.laminar_stats {
            out.push_str(&format!("laminar_count = {}\n", l.count));
            out.push_str(&format!("laminar_mean = {:.12}\n", l.mean));
            out.push_str(&format!("laminar_p10 = {:.12}\n", l.p10));
            out.push_str(&format!("laminar_p50 = {:.12}\n", l.p50));
            out.push_str(&format!("laminar_p90 = {:.12}\n", l.p90));
        }
        if let Some(r) = self.injectivity_ratio {
            out.push_str(&format!("injectivity_ratio = {r:.12}\n"));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut map = std::collections::BTreeMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                what: "eval report".into(),
                line: idx + 1,
                detail: "expected `key = value`".into(),
            })?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            map.get(k).ok_or_else(|| Error::Parse {
                what: "eval report".into(),
                line: 0,
                detail: format!("missing key `{k}`"),
            })
        };
        let parse_f = |k: &str| -> Result<f64> {
            get(k)?.parse().map_err(|_| Error::Parse {
                what: "eval report".into(),
                line: 0,
                detail: format!("bad number for `{k}`"),
            })
        };
        let laminar_stats = if map.contains_key("laminar_count") {
            Some(LaminarStats {
                count: get("laminar_count")?.parse().map_err(|_| Error::Parse {
                    what: "eval report".into(),
                    line: 0,
                    detail: "bad laminar_count".into(),
                })?,
                mean: parse_f("laminar_mean")?,
                p10: parse_f("laminar_p10")?,
                p50: parse_f("laminar_p50")?,
                p90: parse_f("laminar_p90")?,
            })
        } else {
            None
        };
        Ok(EvalReport {
            valid_time: get("valid_time")?.parse().map_err(|_| Error::Parse {
                what: "eval report".into(),
                line: 0,
                detail: "bad valid_time".into(),
            })?,
            density_distance: parse_f("density_distance")?,
            bounded: get("bounded")? == "true",
            rv_coefficient: parse_f("rv_coefficient")?,
            laminar_stats,
            injectivity_ratio: if map.contains_key("injectivity_ratio") {
                Some(parse_f("injectivity_ratio")?)
            } else {
                None
            },
            config_hash: map.get("config_hash").cloned(),
        })
    }
}

fn check_samples(samples: &[f64], min: usize) -> Result<()> {
    if samples.len() < min {
        return Err(Error::ShortSeries {
            need: min,
            got: samples.len(),
        });
    }
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::DegenerateData(format!("non-finite sample {v}")));
    }
    Ok(())
}

/// Equal-width histogram over the sample range, then Gaussian smoothing of
/// the bin masses (bandwidth in bin units), renormalized to sum 1.
pub fn estimate_density(samples: &[f64], bins: usize, bandwidth: f64) -> Result<DensityEstimate> {
    check_samples(samples, 100)?;
    if bins < 2 {
        return Err(Error::InvalidConfig("need at least 2 bins".into()));
    }
    let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if hi - lo > 0.0 {
        (lo, hi)
    } else {
        // all samples identical: give them a unit-width home
        (lo - 0.5, lo + 0.5)
    };
    let edges: Vec<f64> = (0..=bins)
        .map(|i| lo + (hi - lo) * i as f64 / bins as f64)
        .collect();
    estimate_density_on_edges(samples, &edges, bandwidth)
}

/// Same estimator on caller-supplied edges, so two series can be compared on
/// identical bins. Samples outside the range are clamped into the end bins.
pub fn estimate_density_on_edges(
    samples: &[f64],
    edges: &[f64],
    bandwidth: f64,
) -> Result<DensityEstimate> {
    check_samples(samples, 100)?;
    if edges.len() < 3 {
        return Err(Error::InvalidConfig("need at least 2 bins".into()));
    }
    if edges.windows(2).any(|w| !(w[1] > w[0])) || edges.iter().any(|e| !e.is_finite()) {
        return Err(Error::InvalidConfig("bin edges must increase strictly".into()));
    }
    if !(bandwidth >= 0.0) || !bandwidth.is_finite() {
        return Err(Error::InvalidConfig("bandwidth must be finite and ≥ 0".into()));
    }
    let bins = edges.len() - 1;
    let mut mass = vec![0.0; bins];
    let per = 1.0 / samples.len() as f64;
    for &v in samples {
        // edges[i] ≤ v < edges[i+1]; the top edge closes the last bin
        let idx = edges.partition_point(|e| *e <= v);
        let idx = idx.clamp(1, bins) - 1;
        mass[idx] += per;
    }
    if bandwidth > 0.0 {
        mass = smooth_masses(&mass, bandwidth);
    }
    let total: f64 = mass.iter().sum();
    for m in &mut mass {
        *m /= total;
    }
    Ok(DensityEstimate {
        bin_edges: edges.to_vec(),
        mass,
        bandwidth,
    })
}

/// Discrete Gaussian convolution of bin masses, kernel truncated at ±4σ.
fn smooth_masses(mass: &[f64], bandwidth: f64) -> Vec<f64> {
    let bins = mass.len();
    let reach = (4.0 * bandwidth).ceil() as i64;
    let kernel: Vec<f64> = (-reach..=reach)
        .map(|d| (-0.5 * (d as f64 / bandwidth).powi(2)).exp())
        .collect();
    let mut out = vec![0.0; bins];
    for (i, &m) in mass.iter().enumerate() {
        if m == 0.0 {
            continue;
        }
        for (k, &w) in kernel.iter().enumerate() {
            let j = i as i64 + (k as i64 - reach);
            if (0..bins as i64).contains(&j) {
                out[j as usize] += m * w;
            }
        }
    }
    out
}

/// L1 distance Σ|p_i − q_i| ∈ [0, 2] between estimates on identical edges.
pub fn density_distance(p: &DensityEstimate, q: &DensityEstimate) -> Result<f64> {
    if p.bin_edges.len() != q.bin_edges.len()
        || p.bin_edges
            .iter()
            .zip(&q.bin_edges)
            .any(|(a, b)| a.to_bits() != b.to_bits())
    {
        return Err(Error::InvalidConfig(
            "density estimates live on different bin edges".into(),
        ));
    }
    Ok(p.mass.iter().zip(&q.mass).map(|(a, b)| (a - b).abs()).sum())
}

/// RV coefficient — the vector generalization of the squared Pearson
/// correlation: RV = tr(Σxy Σyx) / √(tr(Σxx²)·tr(Σyy²)), computed on
/// internally centered samples. 1 means one side is a linear image of the
/// other; 0 means no linear relation.
pub fn rv_coefficient(pairs_in: ArrayView2<'_, f64>, pairs_out: ArrayView2<'_, f64>) -> Result<f64> {
    let n = pairs_in.nrows();
    if pairs_out.nrows() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: pairs_out.nrows(),
        });
    }
    let d = pairs_in.ncols().max(pairs_out.ncols());
    if n < d + 1 {
        return Err(Error::ShortSeries { need: d + 1, got: n });
    }
    let xc = center_columns(pairs_in);
    let yc = center_columns(pairs_out);
    // tr(Σxy Σyx) = ‖XᵀY‖²_F and tr(Σxx²) = ‖XᵀX‖²_F up to a shared (n−1)²
    // factor that cancels in the ratio
    let sxy = xc.t().dot(&yc);
    let sxx = xc.t().dot(&xc);
    let syy = yc.t().dot(&yc);
    let num: f64 = sxy.iter().map(|v| v * v).sum();
    let dx: f64 = sxx.iter().map(|v| v * v).sum();
    let dy: f64 = syy.iter().map(|v| v * v).sum();
    if dx <= 0.0 || dy <= 0.0 {
        return Err(Error::DegenerateData(
            "zero-variance input to rv_coefficient".into(),
        ));
    }
    Ok(num / (dx.sqrt() * dy.sqrt()))
}

fn center_columns(x: ArrayView2<'_, f64>) -> ndarray::Array2<f64> {
    let mut out = x.to_owned();
    let means = out.mean_axis(ndarray::Axis(0)).unwrap();
    for mut row in out.rows_mut() {
        row -= &means;
    }
    out
}

/// Pearson correlation of two equal-length scalar sequences.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::ShortSeries { need: 2, got: a.len() });
    }
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va <= 0.0 || vb <= 0.0 {
        return Err(Error::DegenerateData("zero-variance input to pearson".into()));
    }
    Ok(cov / (va * vb).sqrt())
}

/// Segment a scalar series into laminar phases — maximal runs where the
/// one-step displacement stays below `displacement_tol` — and report length
/// statistics for runs spanning at least `min_len` samples. A run of k
/// sub-threshold increments spans k+1 samples.
pub fn laminar_stats(
    series: &[f64],
    displacement_tol: f64,
    min_len: usize,
) -> Result<LaminarStats> {
    if min_len == 0 {
        return Err(Error::InvalidConfig("min_len must be ≥ 1".into()));
    }
    check_samples(series, 10 * min_len)?;
    if !(displacement_tol > 0.0) {
        return Err(Error::InvalidConfig("displacement_tol must be > 0".into()));
    }
    let mut lengths: Vec<f64> = Vec::new();
    let mut run = 0usize; // samples in the current laminar stretch
    for w in series.windows(2) {
        if (w[1] - w[0]).abs() < displacement_tol {
            run = if run == 0 { 2 } else { run + 1 };
        } else {
            if run >= min_len {
                lengths.push(run as f64);
            }
            run = 0;
        }
    }
    if run >= min_len {
        lengths.push(run as f64);
    }
    if lengths.is_empty() {
        return Ok(LaminarStats {
            count: 0,
            mean: 0.0,
            p10: 0.0,
            p50: 0.0,
            p90: 0.0,
        });
    }
    lengths.sort_by(|a, b| a.total_cmp(b));
    let mean = lengths.iter().sum::<f64>() / lengths.len() as f64;
    Ok(LaminarStats {
        count: lengths.len(),
        mean,
        p10: percentile(&lengths, 0.10),
        p50: percentile(&lengths, 0.50),
        p90: percentile(&lengths, 0.90),
    })
}

/// Linear-interpolation percentile of an ascending-sorted slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

/// Data-driven neighborhood size for [`injectivity_test`]: the given
/// quantile of the embedded-pair distance distribution, estimated over the
/// same strided time sample the test itself scans. Small quantiles (~0.01)
/// probe the injectivity conjecture in the eps → 0 regime it is stated for
/// while leaving enough neighbor pairs to form a fraction.
pub fn suggest_eps_state(states: &StateTrajectory, quantile: f64) -> Result<f64> {
    let l = states.states.nrows();
    if l < 1000 {
        return Err(Error::ShortSeries { need: 1000, got: l });
    }
    if !(0.0 < quantile && quantile < 1.0) {
        return Err(Error::InvalidConfig("quantile must be in (0,1)".into()));
    }
    let times: Vec<usize> = {
        let all: Vec<usize> = (1..l).collect();
        let stride = all.len().div_ceil(1200).max(1);
        all.into_iter().step_by(stride).collect()
    };
    let x = &states.states;
    let mut dists = Vec::with_capacity(times.len() * (times.len() - 1) / 2);
    for (i, &m) in times.iter().enumerate() {
        for &n in &times[i + 1..] {
            let mut s = 0.0;
            for (a, b) in x.row(m - 1).iter().zip(x.row(n - 1).iter()) {
                s += (a - b) * (a - b);
            }
            for (a, b) in x.row(m).iter().zip(x.row(n).iter()) {
                s += (a - b) * (a - b);
            }
            dists.push(s.sqrt());
        }
    }
    dists.sort_by(|a, b| a.total_cmp(b));
    let eps = percentile(&dists, quantile);
    if !(eps > 0.0) {
        return Err(Error::DegenerateData(
            "embedded points are all coincident at this quantile".into(),
        ));
    }
    Ok(eps)
}

/// False-nearest-neighbor check of the causal-embedding property: if the
/// state-pair map is injective with a continuous inverse, times whose
/// embedded points (x_{n−1}, x_n) are within `eps_state` must also have
/// close `k_past`-step input histories. Returns the fraction of close
/// embedded pairs whose histories fall under a threshold fitted from the
/// moderately-close pairs (a modulus-of-continuity estimate); 1.0 means no
/// false neighbors. Collapsed or non-injective embeddings score near the
/// chance level instead.
pub fn injectivity_test(
    states: &StateTrajectory,
    truth: &TimeSeries,
    k_past: usize,
    eps_state: f64,
) -> Result<f64> {
    let l = states.states.nrows();
    if truth.len() != l {
        return Err(Error::DimensionMismatch {
            expected: l,
            got: truth.len(),
        });
    }
    if l < 1000 {
        return Err(Error::ShortSeries { need: 1000, got: l });
    }
    if k_past == 0 {
        return Err(Error::InvalidConfig("k_past must be ≥ 1".into()));
    }
    if !(eps_state > 0.0) {
        return Err(Error::InvalidConfig("eps_state must be > 0".into()));
    }

    // candidate times: embedded point needs x_{n−1}, history needs k_past
    // truth rows ending at n
    let first = k_past.max(1);
    let times: Vec<usize> = {
        // cap the O(L²) pair scan at ~1200 reference times
        let all: Vec<usize> = (first..l).collect();
        let stride = all.len().div_ceil(1200).max(1);
        all.into_iter().step_by(stride).collect()
    };

    let x = &states.states;
    let state_dist = |m: usize, n: usize| -> f64 {
        let mut s = 0.0;
        for (a, b) in x.row(m - 1).iter().zip(x.row(n - 1).iter()) {
            s += (a - b) * (a - b);
        }
        for (a, b) in x.row(m).iter().zip(x.row(n).iter()) {
            s += (a - b) * (a - b);
        }
        s.sqrt()
    };
    let history_dist = |m: usize, n: usize| -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..k_past {
            let mut s = 0.0;
            for (a, b) in truth.row(m - j).iter().zip(truth.row(n - j).iter()) {
                s += (a - b) * (a - b);
            }
            worst = worst.max(s.sqrt());
        }
        worst
    };

    let mut close: Vec<f64> = Vec::new(); // history distances of close pairs
    let mut band: Vec<f64> = Vec::new(); // history distances at moderate separation
    let mut h_all: Vec<f64> = Vec::new();
    for (i, &m) in times.iter().enumerate() {
        for &n in &times[i + 1..] {
            if n - m < k_past {
                continue; // skip temporal neighbors: trivially close histories
            }
            let s = state_dist(m, n);
            let h = history_dist(m, n);
            h_all.push(h);
            if s < eps_state {
                close.push(h);
            } else if s < 3.0 * eps_state {
                band.push(h);
            }
        }
    }
    if close.is_empty() {
        return Err(Error::DegenerateData(
            "no neighbor pairs within eps_state; increase eps_state".into(),
        ));
    }
    h_all.sort_by(|a, b| a.total_cmp(b));
    let h_med = percentile(&h_all, 0.5);
    if h_med == 0.0 {
        // identical histories everywhere: trivially injective
        return Ok(1.0);
    }
    // fitted modulus, evaluated at the band scale: a monotone modulus makes
    // the 95th-percentile history distance of the moderately-close pairs
    // (s in [eps, 3eps)) an upper envelope for the histories of sub-eps
    // pairs; quantiles keep it robust to noise floors in the inputs. The cap
    // at half the typical history distance keeps the test from becoming
    // vacuous, and a collapsed embedding whose band is empty falls back to a
    // chance-scale threshold.
    let tau = if band.is_empty() {
        0.1 * h_med
    } else {
        band.sort_by(|a, b| a.total_cmp(b));
        percentile(&band, 0.95).min(0.5 * h_med)
    };
    let good = close.iter().filter(|&&h| h <= tau).count();
    Ok(good as f64 / close.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reservoir::build;
    use crate::seeds;
    use crate::systems::{generate, SystemKind, SystemSpec};
    use ndarray::{Array1, Array2};
    use rand::Rng;

    fn logistic_samples(n: usize, seed: u64) -> Vec<f64> {
        let spec = SystemSpec {
            kind: SystemKind::Logistic,
            parameters: Default::default(),
            dt: None,
            n_samples: n,
            seed,
            initial_state: vec![],
            transient_discard: 100,
        };
        generate(&spec).unwrap().values.column(0).to_vec()
    }

    #[test]
    fn constant_samples_land_in_one_bin() {
        let samples = vec![0.5; 200];
        let d = estimate_density(&samples, 10, 0.0).unwrap();
        assert_eq!(d.mass.iter().filter(|&&m| m > 0.0).count(), 1);
        let top = d.mass.iter().cloned().fold(0.0, f64::max);
        assert!((top - 1.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_samples_spread_evenly() {
        let mut rng = seeds::rng_from(101);
        let samples: Vec<f64> = (0..1_000_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let d = estimate_density(&samples, 10, 0.0).unwrap();
        for &m in &d.mass {
            assert!((m - 0.1).abs() < 0.005, "bin mass {m}");
        }
    }

    #[test]
    fn densities_always_normalize() {
        for bw in [0.0, 0.5, 2.0, 8.0] {
            let samples = logistic_samples(5000, 3);
            let d = estimate_density(&samples, 64, bw).unwrap();
            let sum: f64 = d.mass.iter().sum();
            assert!((sum - 1.0).abs() < 1e-12, "bandwidth {bw}: sum {sum}");
            assert!(d.mass.iter().all(|&m| m >= 0.0));
        }
    }

    #[test]
    fn logistic_histogram_matches_the_arcsine_law() {
        // the full logistic map is conjugate to the tent map; its invariant
        // density is 1/(π√(x(1−x))) with CDF (2/π)·asin(√x)
        let samples = logistic_samples(100_000, 5);
        let d = estimate_density(&samples, 100, 0.0).unwrap();
        let cdf = |x: f64| 2.0 / std::f64::consts::PI * x.clamp(0.0, 1.0).sqrt().asin();
        let total = cdf(d.bin_edges[100]) - cdf(d.bin_edges[0]);
        let mut l1 = 0.0;
        for i in 0..100 {
            let analytic = (cdf(d.bin_edges[i + 1]) - cdf(d.bin_edges[i])) / total;
            l1 += (d.mass[i] - analytic).abs();
        }
        assert!(l1 < 0.05, "L1 against the analytic density: {l1}");
    }

    #[test]
    fn identical_estimates_have_zero_distance() {
        let samples = logistic_samples(1000, 7);
        let d = estimate_density(&samples, 32, 2.0).unwrap();
        assert_eq!(density_distance(&d, &d).unwrap(), 0.0);
    }

    #[test]
    fn disjoint_point_masses_are_maximally_far() {
        let edges: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let a = estimate_density_on_edges(&vec![0.05; 150], &edges, 0.0).unwrap();
        let b = estimate_density_on_edges(&vec![0.95; 150], &edges, 0.0).unwrap();
        assert!((density_distance(&a, &b).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn mismatched_edges_are_rejected() {
        let a = estimate_density(&logistic_samples(500, 9), 10, 0.0).unwrap();
        let b = estimate_density(&logistic_samples(500, 9), 12, 0.0).unwrap();
        assert!(density_distance(&a, &b).is_err());
    }

    #[test]
    fn independent_draws_from_one_orbit_are_close() {
        let a = logistic_samples(100_000, 11);
        let b = logistic_samples(100_000, 13);
        let edges: Vec<f64> = (0..=100).map(|i| i as f64 / 100.0).collect();
        let da = estimate_density_on_edges(&a, &edges, 0.0).unwrap();
        let db = estimate_density_on_edges(&b, &edges, 0.0).unwrap();
        let dist = density_distance(&da, &db).unwrap();
        assert!(dist < 0.05, "resampled orbits differ by {dist}");
    }

    #[test]
    fn l1_distance_is_a_metric_on_fixed_bins() {
        let edges: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
        let mut rng = seeds::rng_from(103);
        let draw = |rng: &mut rand_chacha::ChaCha8Rng| {
            let samples: Vec<f64> = (0..300).map(|_| rng.gen_range(0.0..1.0)).collect();
            estimate_density_on_edges(&samples, &edges, 1.0).unwrap()
        };
        for _ in 0..20 {
            let (p, q, r) = (draw(&mut rng), draw(&mut rng), draw(&mut rng));
            let pq = density_distance(&p, &q).unwrap();
            let qp = density_distance(&q, &p).unwrap();
            let pr = density_distance(&p, &r).unwrap();
            let rq = density_distance(&r, &q).unwrap();
            assert!((pq - qp).abs() < 1e-15);
            assert!(pq <= pr + rq + 1e-12, "triangle inequality violated");
            assert!((0.0..=2.0).contains(&pq));
        }
    }

    #[test]
    fn smoothing_spreads_mass_to_neighbors() {
        let edges: Vec<f64> = (0..=9).map(|i| i as f64).collect();
        let samples = vec![4.5; 100];
        let raw = estimate_density_on_edges(&samples, &edges, 0.0).unwrap();
        assert!((raw.mass[4] - 1.0).abs() < 1e-12);
        let smooth = estimate_density_on_edges(&samples, &edges, 1.0).unwrap();
        assert!(smooth.mass[4] < 0.6);
        assert!(smooth.mass[3] > 0.1 && smooth.mass[5] > 0.1);
        assert!((smooth.mass[3] - smooth.mass[5]).abs() < 1e-12, "kernel symmetry");
    }

    #[test]
    fn rv_of_a_sequence_with_itself_is_one() {
        let mut rng = seeds::rng_from(105);
        let x = Array2::from_shape_fn((50, 4), |_| rng.gen_range(-1.0_f64..1.0));
        let rv = rv_coefficient(x.view(), x.view()).unwrap();
        assert!((rv - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rv_matches_a_direct_summation_implementation() {
        // independent implementation: build the covariance blocks explicitly
        // and trace the products with index loops
        fn rv_naive(x: &Array2<f64>, y: &Array2<f64>) -> f64 {
            let n = x.nrows();
            let center = |m: &Array2<f64>| {
                let mut c = m.clone();
                for j in 0..m.ncols() {
                    let mu = m.column(j).sum() / n as f64;
                    for i in 0..n {
                        c[[i, j]] -= mu;
                    }
                }
                c
            };
            let xc = center(x);
            let yc = center(y);
            let cov = |a: &Array2<f64>, b: &Array2<f64>| {
                let mut s = Array2::zeros((a.ncols(), b.ncols()));
                for i in 0..a.ncols() {
                    for j in 0..b.ncols() {
                        let mut acc = 0.0;
                        for t in 0..n {
                            acc += a[[t, i]] * b[[t, j]];
                        }
                        s[[i, j]] = acc / (n - 1) as f64;
                    }
                }
                s
            };
            let sxy = cov(&xc, &yc);
            let syx = cov(&yc, &xc);
            let sxx = cov(&xc, &xc);
            let syy = cov(&yc, &yc);
            let tr = |a: &Array2<f64>, b: &Array2<f64>| {
                let mut t = 0.0;
                for i in 0..a.nrows() {
                    for j in 0..a.ncols() {
                        t += a[[i, j]] * b[[j, i]];
                    }
                }
                t
            };
            tr(&sxy, &syx) / (tr(&sxx, &sxx) * tr(&syy, &syy)).sqrt()
        }

        let mut rng = seeds::rng_from(107);
        let x = Array2::from_shape_fn((80, 6), |_| rng.gen_range(-1.0_f64..1.0));
        let map = Array2::from_shape_fn((6, 6), |(i, j)| {
            if i == j {
                1.0
            } else {
                0.3 * rng.gen_range(-1.0_f64..1.0)
            }
        });
        let y = x.dot(&map);
        let ours = rv_coefficient(x.view(), y.view()).unwrap();
        let naive = rv_naive(&x, &y);
        assert!((ours - naive).abs() < 1e-10, "{ours} vs {naive}");
        assert!(ours > 0.5 && ours <= 1.0);
    }

    #[test]
    fn independent_vectors_decorrelate() {
        let mut rng = seeds::rng_from(109);
        let x = Array2::from_shape_fn((10_000, 10), |_| rng.gen_range(-1.0_f64..1.0));
        let y = Array2::from_shape_fn((10_000, 10), |_| rng.gen_range(-1.0_f64..1.0));
        let rv = rv_coefficient(x.view(), y.view()).unwrap();
        assert!(rv < 0.05, "independent RV = {rv}");
    }

    #[test]
    fn rv_is_invariant_under_orthogonal_maps() {
        use nalgebra::DMatrix;
        let mut rng = seeds::rng_from(111);
        let d = 5;
        let x = Array2::from_shape_fn((60, d), |_| rng.gen_range(-1.0_f64..1.0));
        let y = Array2::from_shape_fn((60, d), |_| rng.gen_range(-1.0_f64..1.0));
        let rand_orth = |rng: &mut rand_chacha::ChaCha8Rng| {
            let m = DMatrix::from_fn(d, d, |_, _| rng.gen_range(-1.0_f64..1.0));
            let q = m.qr().q();
            Array2::from_shape_fn((d, d), |(i, j)| q[(i, j)])
        };
        let q1 = rand_orth(&mut rng);
        let q2 = rand_orth(&mut rng);
        let base = rv_coefficient(x.view(), y.view()).unwrap();
        let rotated = rv_coefficient(x.dot(&q1).view(), y.dot(&q2).view()).unwrap();
        assert!((base - rotated).abs() < 1e-10, "{base} vs {rotated}");
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        let x = Array2::zeros((30, 3));
        let y = Array2::from_shape_fn((30, 3), |(i, j)| (i + j) as f64);
        assert!(rv_coefficient(x.view(), y.view()).is_err());
        // too few rows for the dimension
        let small = Array2::from_shape_fn((3, 5), |(i, j)| (i * j) as f64);
        assert!(rv_coefficient(small.view(), small.view()).is_err());
    }

    #[test]
    fn pearson_recovers_known_correlations() {
        let a: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| 3.0 * v - 7.0).collect();
        let c: Vec<f64> = a.iter().map(|v| -v).collect();
        assert!((pearson(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert!((pearson(&a, &c).unwrap() + 1.0).abs() < 1e-12);
        let mut rng = seeds::rng_from(113);
        let d: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let e: Vec<f64> = (0..10_000).map(|_| rng.gen_range(-1.0..1.0)).collect();
        assert!(pearson(&d, &e).unwrap().abs() < 0.05);
    }

    #[test]
    fn constant_series_is_one_full_laminar_phase() {
        let s = vec![0.3; 500];
        let stats = laminar_stats(&s, 1e-6, 10).unwrap();
        assert_eq!(stats.count, 1);
        assert_eq!(stats.mean, 500.0);
        assert_eq!(stats.p50, 500.0);
    }

    #[test]
    fn noise_has_no_laminar_phases() {
        let mut rng = seeds::rng_from(115);
        let s: Vec<f64> = (0..10_000).map(|_| rng.gen_range(0.0..1.0)).collect();
        let stats = laminar_stats(&s, 0.01, 20).unwrap();
        assert_eq!(stats.count, 0);
        assert_eq!(stats.mean, 0.0);
    }

    #[test]
    fn laminar_lengths_count_samples_not_increments() {
        // 5 flat samples (4 sub-tol steps), a burst, then a 6-sample plateau:
        // lengths are {5, 6}; increment-counting would give {4, 5}
        let mut s = vec![0.0; 5];
        s.push(5.0);
        s.extend(std::iter::repeat(5.0 + 1e-9).take(5));
        s.extend((0..190).map(|i| if i % 2 == 0 { 10.0 } else { -10.0 }));
        let stats = laminar_stats(&s, 0.1, 5).unwrap();
        assert_eq!(stats.count, 2);
        assert_eq!(stats.mean, 5.5);
        assert_eq!(stats.p50, 5.5);
    }

    #[test]
    fn pomeau_manneville_has_ordered_laminar_statistics() {
        let spec = SystemSpec {
            kind: SystemKind::PomeauManneville,
            parameters: Default::default(),
            dt: None,
            n_samples: 20_000,
            seed: 17,
            initial_state: vec![],
            transient_discard: 500,
        };
        let orbit = generate(&spec).unwrap().values.column(0).to_vec();
        let stats = laminar_stats(&orbit, 0.02, 10).unwrap();
        assert!(stats.count > 10, "found {} phases", stats.count);
        assert!(stats.p10 <= stats.p50 && stats.p50 <= stats.p90);
        assert!(stats.mean >= stats.p10 && stats.mean > 10.0);
    }

    fn driven_trajectory(n: usize, len: usize, seed: u64) -> (StateTrajectory, TimeSeries) {
        let r = build(n, 0.5, 0.99, seed).unwrap();
        let spec = SystemSpec {
            kind: SystemKind::Logistic,
            parameters: Default::default(),
            dt: None,
            n_samples: len + 200,
            seed: seed + 1,
            initial_state: vec![],
            transient_discard: 100,
        };
        let observed = generate(&spec).unwrap();
        let traj = r.drive(&observed, 0, &Array1::zeros(n)).unwrap();
        let keep = traj.states.slice(ndarray::s![200.., ..]).to_owned();
        let truth = TimeSeries::new(
            observed.values.slice(ndarray::s![200.., ..]).to_owned(),
            None,
        );
        (
            StateTrajectory {
                states: keep,
                input_ref: truth.clone(),
                washout: 0,
            },
            truth,
        )
    }

    #[test]
    fn faithful_embeddings_have_no_false_neighbors() {
        // histories here are the reservoir's own driving inputs: close state
        // pairs must imply close input pasts
        let (traj, truth) = driven_trajectory(30, 1500, 119);
        let eps = suggest_eps_state(&traj, 0.01).unwrap();
        let ratio = injectivity_test(&traj, &truth, 3, eps).unwrap();
        assert!(ratio > 0.95, "injectivity ratio {ratio} at eps {eps}");
    }

    #[test]
    fn truth_equal_to_states_is_trivially_injective() {
        let (traj, _) = driven_trajectory(10, 1200, 121);
        let truth = TimeSeries::new(traj.states.clone(), None);
        let ratio = injectivity_test(&traj, &truth, 2, 0.1).unwrap();
        assert!(ratio > 0.999, "identity ratio {ratio}");
    }

    #[test]
    fn collapsed_states_score_at_chance_level() {
        let (traj, truth) = driven_trajectory(10, 1200, 123);
        let collapsed = StateTrajectory {
            states: Array2::from_elem(traj.states.dim(), 0.25),
            input_ref: truth.clone(),
            washout: 0,
        };
        let ratio = injectivity_test(&collapsed, &truth, 3, 0.1).unwrap();
        assert!(ratio < 0.5, "collapsed embedding scored {ratio}");
    }

    #[test]
    fn too_small_eps_reports_no_neighbors() {
        let (traj, truth) = driven_trajectory(10, 1100, 125);
        assert!(injectivity_test(&traj, &truth, 2, 1e-15).is_err());
    }

    #[test]
    fn eval_report_round_trips_through_text() {
        let report = EvalReport {
            valid_time: 137,
            density_distance: 0.042,
            bounded: true,
            rv_coefficient: 0.87,
            laminar_stats: Some(LaminarStats {
                count: 12,
                mean: 31.5,
                p10: 11.0,
                p50: 28.0,
                p90: 60.5,
            }),
            injectivity_ratio: Some(0.995),
            config_hash: Some("deadbeef".into()),
        };
        let text = report.to_text();
        let back = EvalReport::from_text(&text).unwrap();
        assert_eq!(back.valid_time, 137);
        assert_eq!(back.bounded, true);
        assert!((back.density_distance - 0.042).abs() < 1e-9);
        assert!((back.rv_coefficient - 0.87).abs() < 1e-9);
        assert_eq!(back.laminar_stats.unwrap().count, 12);
        assert!((back.injectivity_ratio.unwrap() - 0.995).abs() < 1e-9);
        assert_eq!(back.config_hash.as_deref(), Some("deadbeef"));

        let minimal = EvalReport {
            valid_time: 0,
            density_distance: 2.0,
            bounded: false,
            rv_coefficient: 0.0,
            laminar_stats: None,
            injectivity_ratio: None,
            config_hash: None,
        };
        let back = EvalReport::from_text(&minimal.to_text()).unwrap();
        assert!(back.laminar_stats.is_none());
        assert!(back.injectivity_ratio.is_none());
    }

    #[test]
    fn density_csv_has_the_two_column_shape() {
        let d = estimate_density(&logistic_samples(500, 19), 8, 0.0).unwrap();
        let csv = d.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("bin_center,mass"));
        assert_eq!(lines.count(), 8);
        for line in csv.lines().skip(1) {
            let (c, m) = line.split_once(',').unwrap();
            let c: f64 = c.parse().unwrap();
            let m: f64 = m.parse().unwrap();
            assert!(c.is_finite() && (0.0..=1.0).contains(&m));
        }
    }
}

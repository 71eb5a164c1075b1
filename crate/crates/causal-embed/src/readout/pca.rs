//! Principal-component basis of the reservoir state cloud.
//!
//! The basis is not a lossy compressor — every component is retained — it is
//! an orthogonal change of coordinates that conditions the regression and
//! orders directions by explained variance.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::to_dmatrix;
use crate::reservoir::StateTrajectory;

/// Orthogonal basis P of right singular vectors with the matching singular
/// values, plus the column means subtracted before the factorization (when
/// centering was requested).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PcaBasis {
    /// N×N orthogonal matrix; column j is the j-th principal direction.
    pub p: Array2<f64>,
    /// Nonincreasing, nonnegative; singular_values[j] belongs to column j.
    pub singular_values: Vec<f64>,
    /// Present iff the states were centered before factorization.
    pub col_means: Option<Array1<f64>>,
}

/// Thin SVD of the post-washout state matrix X = U·Σ·Pᵀ. All components are
/// kept; `center` subtracts column means first (the default in experiment
/// configs, recorded in the basis so projection is self-consistent).
pub fn fit_pca(traj: &StateTrajectory, center: bool) -> Result<PcaBasis> {
    let x = traj.post_washout();
    fit_pca_rows(x, center)
}

/// [`fit_pca`] on a raw row matrix (rows = states).
pub fn fit_pca_rows(x: ArrayView2<'_, f64>, center: bool) -> Result<PcaBasis> {
    let (rows, n) = (x.nrows(), x.ncols());
    if rows < n {
        return Err(Error::ShortSeries { need: n, got: rows });
    }
    if x.rows().into_iter().all(|r| r == x.row(0)) {
        return Err(Error::DegenerateData(
            "all states are identical; nothing to factorize".into(),
        ));
    }
    let mut xc = x.to_owned();
    let col_means = if center {
        let means = xc.mean_axis(ndarray::Axis(0)).expect("rows ≥ 1");
        for mut row in xc.rows_mut() {
            row -= &means;
        }
        Some(means)
    } else {
        None
    };

    let svd = to_dmatrix(&xc).svd(false, true);
    let v_t = svd.v_t.expect("requested");
    let mut order: Vec<usize> = (0..n).collect();
    // nalgebra does not guarantee ordering; sort explicitly, descending.
    order.sort_by(|&i, &j| {
        svd.singular_values[j]
            .partial_cmp(&svd.singular_values[i])
            .expect("singular values are finite")
    });
    let singular_values: Vec<f64> = order.iter().map(|&i| svd.singular_values[i]).collect();
    if singular_values[0] <= 0.0 {
        return Err(Error::DegenerateData(
            "state matrix has no variation to factorize".into(),
        ));
    }
    let mut p = Array2::zeros((n, n));
    for (col, &i) in order.iter().enumerate() {
        for r in 0..n {
            p[[r, col]] = v_t[(i, r)];
        }
    }
    Ok(PcaBasis {
        p,
        singular_values,
        col_means,
    })
}

impl PcaBasis {
    pub fn n(&self) -> usize {
        self.p.nrows()
    }

    /// z = Pᵀ(x − mean): coordinates of a state in the principal basis.
    pub fn project(&self, x: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if x.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: x.len(),
            });
        }
        Ok(match &self.col_means {
            Some(m) => self.p.t().dot(&(&x - m)),
            None => self.p.t().dot(&x),
        })
    }

    /// Row-wise [`project`](Self::project).
    pub fn project_rows(&self, rows: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if rows.ncols() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: rows.ncols(),
            });
        }
        let mut xc = rows.to_owned();
        if let Some(m) = &self.col_means {
            for mut row in xc.rows_mut() {
                row -= m;
            }
        }
        Ok(xc.dot(&self.p))
    }

    /// Inverse of [`project`](Self::project): x = P·z + mean.
    pub fn unproject(&self, z: ArrayView1<'_, f64>) -> Result<Array1<f64>> {
        if z.len() != self.n() {
            return Err(Error::DimensionMismatch {
                expected: self.n(),
                got: z.len(),
            });
        }
        let x = self.p.dot(&z);
        Ok(match &self.col_means {
            Some(m) => x + m,
            None => x,
        })
    }

    /// Identity basis of dimension n (no centering) — useful as a neutral
    /// element when a model should act on raw states.
    pub fn identity(n: usize) -> Self {
        PcaBasis {
            p: Array2::eye(n),
            singular_values: vec![1.0; n],
            col_means: None,
        }
    }
}

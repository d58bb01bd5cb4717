//! Canonical correlation analysis between two blocks of variables observed on
//! the same rows.
//!
//! Finds direction pairs `(s_i, t_i)` maximising the correlation of `P s_i`
//! and `Q t_i`, with every variate scaled to unit sample variance and each
//! pair uncorrelated with all earlier pairs. Both blocks are whitened, and
//! the singular vectors of the whitened cross-covariance give the directions.
//!
//! Regularisation: eigenvalues of each within-block covariance are floored at
//! `ridge_factor * trace / dim`. On well-conditioned data the floor is
//! inactive and the solution is exact; rank-deficient blocks (such as moment
//! signatures with a constant `mu_000` column) stay invertible.

use serde::Serialize;
use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, Svd, SymmetricEigen};
use crate::scalar::Real;

pub const DEFAULT_RIDGE_FACTOR: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CcaError {
    #[error("blocks have different row counts: {0} vs {1}")]
    RowMismatch(usize, usize),
    #[error("need at least 2 rows, got {0}")]
    TooFewRows(usize),
    #[error("k = {k} must lie in 1..={max}")]
    InvalidK { k: usize, max: usize },
    #[error("input contains non-finite values")]
    NonFinite,
    #[error("expected {expected} columns, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("ridge factor must be finite and non-negative")]
    InvalidRidge,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Block {
    P,
    Q,
}

/// Fitted canonical directions and correlations.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaModel<T> {
    directions_p: Matrix<T>,
    directions_q: Matrix<T>,
    correlations: Vec<T>,
    column_means_p: Vec<T>,
    column_means_q: Vec<T>,
    ridge: T,
}

impl<T: Real> CcaModel<T> {
    /// `d_P x k` matrix; column `i` is `s_i`.
    pub fn directions_p(&self) -> &Matrix<T> {
        &self.directions_p
    }

    /// `d_Q x k` matrix; column `i` is `t_i`.
    pub fn directions_q(&self) -> &Matrix<T> {
        &self.directions_q
    }

    /// Canonical correlations, non-increasing, in `[0, 1]`.
    pub fn correlations(&self) -> &[T] {
        &self.correlations
    }

    pub fn column_means_p(&self) -> &[T] {
        &self.column_means_p
    }

    pub fn column_means_q(&self) -> &[T] {
        &self.column_means_q
    }

    /// Ridge factor the model was fitted with.
    pub fn ridge(&self) -> T {
        self.ridge
    }

    pub fn k(&self) -> usize {
        self.correlations.len()
    }

    fn block(&self, block: Block) -> (&Matrix<T>, &[T]) {
        match block {
            Block::P => (&self.directions_p, &self.column_means_p),
            Block::Q => (&self.directions_q, &self.column_means_q),
        }
    }
}

fn column_means<T: Real>(x: &Matrix<T>) -> Vec<T> {
    let n = T::from_count(x.rows());
    (0..x.cols())
        .map(|j| (0..x.rows()).map(|i| x[(i, j)]).sum::<T>() / n)
        .collect()
}

fn centered<T: Real>(x: &Matrix<T>, means: &[T]) -> Matrix<T> {
    Matrix::from_fn(x.rows(), x.cols(), |i, j| x[(i, j)] - means[j])
}

/// `aᵀ b / (n - 1)` for centred blocks.
fn cross_covariance<T: Real>(a: &Matrix<T>, b: &Matrix<T>) -> Matrix<T> {
    let scale = T::from_count(a.rows() - 1);
    let mut out = Matrix::<T>::zeros(a.cols(), b.cols());
    for r in 0..a.rows() {
        let ar = a.row(r);
        let br = b.row(r);
        for (i, &x) in ar.iter().enumerate() {
            for (j, &y) in br.iter().enumerate() {
                out[(i, j)] = out[(i, j)] + x * y;
            }
        }
    }
    Matrix::from_fn(a.cols(), b.cols(), |i, j| out[(i, j)] / scale)
}

/// Symmetric inverse square root with eigenvalues floored by the ridge.
fn inverse_sqrt<T: Real>(c: &Matrix<T>, ridge_factor: T) -> Result<Matrix<T>, CcaError> {
    let d = c.rows();
    let trace = (0..d).map(|i| c[(i, i)]).sum::<T>();
    let mut floor = ridge_factor * trace / T::from_count(d);
    if !(floor > T::zero()) {
        floor = if trace > T::zero() { T::min_positive_value() } else { T::one() };
    }
    let eig = SymmetricEigen::new(c)?;
    let inv: Vec<T> = eig
        .values
        .iter()
        .map(|&l| T::one() / l.max(floor).sqrt())
        .collect();
    let v = &eig.vectors;
    Ok(Matrix::from_fn(d, d, |i, j| (0..d).map(|k| v[(i, k)] * inv[k] * v[(j, k)]).sum()))
}

fn quad_form<T: Real>(c: &Matrix<T>, a: &[T], b: &[T]) -> T {
    let mut acc = T::zero();
    for (i, &x) in a.iter().enumerate() {
        if x == T::zero() {
            continue;
        }
        let row = c.row(i);
        acc = acc + x * row.iter().zip(b).map(|(&cij, &y)| cij * y).sum::<T>();
    }
    acc
}

/// Fits `k` canonical pairs with the default ridge factor.
pub fn fit_cca<T: Real>(p: &Matrix<T>, q: &Matrix<T>, k: usize) -> Result<CcaModel<T>, CcaError> {
    fit_cca_with_ridge(p, q, k, T::lit(DEFAULT_RIDGE_FACTOR))
}

pub fn fit_cca_with_ridge<T: Real>(
    p: &Matrix<T>,
    q: &Matrix<T>,
    k: usize,
    ridge_factor: T,
) -> Result<CcaModel<T>, CcaError> {
    let n = p.rows();
    if q.rows() != n {
        return Err(CcaError::RowMismatch(n, q.rows()));
    }
    if n < 2 {
        return Err(CcaError::TooFewRows(n));
    }
    let max_k = p.cols().min(q.cols());
    if k == 0 || k > max_k {
        return Err(CcaError::InvalidK { k, max: max_k });
    }
    if !p.is_finite() || !q.is_finite() {
        return Err(CcaError::NonFinite);
    }
    if !(ridge_factor >= T::zero()) || !ridge_factor.is_finite() {
        return Err(CcaError::InvalidRidge);
    }

    let mean_p = column_means(p);
    let mean_q = column_means(q);
    let pc = centered(p, &mean_p);
    let qc = centered(q, &mean_q);
    let cpp = cross_covariance(&pc, &pc);
    let cqq = cross_covariance(&qc, &qc);
    let cpq = cross_covariance(&pc, &qc);

    let wp = inverse_sqrt(&cpp, ridge_factor)?;
    let wq = inverse_sqrt(&cqq, ridge_factor)?;
    let whitened = wp.matmul(&cpq)?.matmul(&wq)?;
    let svd = Svd::new(&whitened)?;

    let a = wp.matmul(&svd.u.leading_columns(k))?;
    let b = wq.matmul(&svd.v.leading_columns(k))?;

    let mut pairs: Vec<(T, Vec<T>, Vec<T>)> = (0..k)
        .map(|i| {
            let mut s = a.column(i);
            let mut t = b.column(i);
            let vs = quad_form(&cpp, &s, &s);
            let vt = quad_form(&cqq, &t, &t);
            if vs > T::zero() {
                let f = vs.sqrt();
                s.iter_mut().for_each(|x| *x = *x / f);
            }
            if vt > T::zero() {
                let f = vt.sqrt();
                t.iter_mut().for_each(|x| *x = *x / f);
            }
            let rho = if vs > T::zero() && vt > T::zero() {
                quad_form(&cpq, &s, &t)
            } else {
                T::zero()
            };
            let rho = rho.max(T::zero()).min(T::one());
            // Sign convention: first non-negligible entry of s is positive.
            let scale = s.iter().fold(T::zero(), |m, x| m.max(x.abs()));
            let lead = s.iter().copied().find(|x| x.abs() > scale * T::lit(1e-12));
            if lead.is_some_and(|x| x < T::zero()) {
                s.iter_mut().for_each(|x| *x = -*x);
                t.iter_mut().for_each(|x| *x = -*x);
            }
            (rho, s, t)
        })
        .collect();
    pairs.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap_or(std::cmp::Ordering::Equal));

    let directions_p = Matrix::from_fn(p.cols(), k, |i, j| pairs[j].1[i]);
    let directions_q = Matrix::from_fn(q.cols(), k, |i, j| pairs[j].2[i]);
    let correlations = pairs.iter().map(|pair| pair.0).collect();
    Ok(CcaModel {
        directions_p,
        directions_q,
        correlations,
        column_means_p: mean_p,
        column_means_q: mean_q,
        ridge: ridge_factor,
    })
}

/// Canonical variates `(X - means) * directions` for one block.
pub fn project<T: Real>(model: &CcaModel<T>, x: &Matrix<T>, block: Block) -> Result<Matrix<T>, CcaError> {
    let (dirs, means) = model.block(block);
    if x.cols() != dirs.rows() {
        return Err(CcaError::Dimension {
            expected: dirs.rows(),
            found: x.cols(),
        });
    }
    Ok(centered(x, means).matmul(dirs)?)
}

fn project_row<T: Real>(model: &CcaModel<T>, row: &[T], block: Block) -> Result<Vec<T>, CcaError> {
    let (dirs, means) = model.block(block);
    if row.len() != dirs.rows() {
        return Err(CcaError::Dimension {
            expected: dirs.rows(),
            found: row.len(),
        });
    }
    Ok((0..dirs.cols())
        .map(|j| {
            row.iter()
                .zip(means)
                .enumerate()
                .map(|(i, (&x, &m))| (x - m) * dirs[(i, j)])
                .sum()
        })
        .collect())
}

/// Correlation-weighted Euclidean distance between the variates of a
/// P-block row and a Q-block row.
pub fn cca_distance<T: Real>(model: &CcaModel<T>, p_row: &[T], q_row: &[T]) -> Result<T, CcaError> {
    let a = project_row(model, p_row, Block::P)?;
    let b = project_row(model, q_row, Block::Q)?;
    Ok(a.iter()
        .zip(&b)
        .zip(&model.correlations)
        .map(|((&x, &y), &rho)| {
            let d = rho * (x - y);
            d * d
        })
        .sum::<T>()
        .sqrt())
}

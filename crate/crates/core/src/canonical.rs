//! Canonical forms: a cropped scan is reduced to a pose-normalised 3D
//! embedding of its geodesic distance matrix.
//!
//! Pipeline: geodesic crop around the nose tip, farthest point sampling,
//! pairwise graph geodesics, classical MDS into three dimensions, then pose
//! normalisation (centring, principal axes, third-moment sign convention).
//! Geodesics are unchanged by rigid motions and change little under
//! near-isometric bending, so the embedding inherits both invariances.

use thiserror::Error;

use crate::linalg::{LinalgError, Matrix, SymmetricEigen};
use crate::matcher::MatcherConfig;
use crate::scalar::Real;
use crate::surface::{crop_geodesic, farthest_point_sample, LandmarkName, Point3, Surface, SurfaceError};

/// Third-order axis moments at or below this magnitude leave the axis sign
/// undetermined.
pub const SIGN_AMBIGUITY: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CanonicalError {
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("sample list is empty")]
    NoSamples,
    #[error("sample vertex {0} listed twice")]
    DuplicateSample(usize),
    #[error("distance matrix must be square, got {0}x{1}")]
    NotSquare(usize, usize),
    #[error("distance matrix is not symmetric at ({0}, {1})")]
    NotSymmetric(usize, usize),
    #[error("distance matrix has a negative entry at ({0}, {1})")]
    Negative(usize, usize),
    #[error("distance matrix has a non-zero diagonal at {0}")]
    NonZeroDiagonal(usize),
    #[error("embedding dimension {dim} must lie in 1..={points}")]
    Dimension { dim: usize, points: usize },
    #[error("non-finite input")]
    NonFinite,
}

/// Pose-normalised embedding of a sampled surface.
///
/// Invariants: centroid at the origin, diagonal covariance with non-increasing
/// axis variances, and non-negative third-order moment on every axis whose
/// moment is not negligible (those axes are flagged in `ambiguous_axes`).
#[derive(Debug, Clone, PartialEq)]
pub struct CanonicalForm<T> {
    points: Vec<Point3<T>>,
    sample_indices: Vec<usize>,
    ambiguous_axes: [bool; 3],
}

impl<T: Real> CanonicalForm<T> {
    pub fn points(&self) -> &[Point3<T>] {
        &self.points
    }

    /// Vertex index in the cropped surface each point was sampled from.
    pub fn sample_indices(&self) -> &[usize] {
        &self.sample_indices
    }

    pub fn ambiguous_axes(&self) -> [bool; 3] {
        self.ambiguous_axes
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Root mean square distance of the points from the origin.
    pub fn rms_radius(&self) -> T {
        let m = T::from_count(self.points.len().max(1));
        (self
            .points
            .iter()
            .map(|p| p[0] * p[0] + p[1] * p[1] + p[2] * p[2])
            .sum::<T>()
            / m)
            .sqrt()
    }
}

/// Pairwise graph geodesics between sampled vertices.
pub fn geodesic_matrix<T: Real>(s: &Surface<T>, samples: &[usize]) -> Result<Matrix<T>, CanonicalError> {
    if samples.is_empty() {
        return Err(CanonicalError::NoSamples);
    }
    let n = s.vertex_count();
    let mut seen = vec![false; n];
    for &i in samples {
        if i >= n {
            return Err(SurfaceError::InvalidVertex {
                index: i,
                vertex_count: n,
            }
            .into());
        }
        if std::mem::replace(&mut seen[i], true) {
            return Err(CanonicalError::DuplicateSample(i));
        }
    }
    let m = samples.len();
    let mut d = Matrix::zeros(m, m);
    for (i, &src) in samples.iter().enumerate() {
        let dist = s.graph().shortest_paths(src);
        // Upper triangle from row i, mirrored, so the result is exactly symmetric.
        for j in (i + 1)..m {
            let v = dist[samples[j]];
            d[(i, j)] = v;
            d[(j, i)] = v;
        }
    }
    Ok(d)
}

/// Classical (Torgerson) multidimensional scaling.
///
/// Double-centres the squared distances, keeps the `dim` largest eigenpairs
/// with negative eigenvalues clamped to zero, and scales eigenvectors by the
/// square roots. Columns come out in decreasing eigenvalue order.
pub fn classical_mds<T: Real>(d: &Matrix<T>, dim: usize) -> Result<Matrix<T>, CanonicalError> {
    let m = d.rows();
    if d.cols() != m {
        return Err(CanonicalError::NotSquare(m, d.cols()));
    }
    if dim == 0 || dim > m {
        return Err(CanonicalError::Dimension { dim, points: m });
    }
    if !d.is_finite() {
        return Err(CanonicalError::NonFinite);
    }
    let tol = d.max_abs() * T::epsilon() * T::lit(16.0);
    for i in 0..m {
        if d[(i, i)].abs() > tol {
            return Err(CanonicalError::NonZeroDiagonal(i));
        }
        for j in 0..m {
            if d[(i, j)] < T::zero() {
                return Err(CanonicalError::Negative(i, j));
            }
            if (d[(i, j)] - d[(j, i)]).abs() > tol {
                return Err(CanonicalError::NotSymmetric(i, j));
            }
        }
    }

    let mf = T::from_count(m);
    let sq = Matrix::from_fn(m, m, |i, j| d[(i, j)] * d[(i, j)]);
    let row_means: Vec<T> = (0..m).map(|i| sq.row(i).iter().copied().sum::<T>() / mf).collect();
    let grand = row_means.iter().copied().sum::<T>() / mf;
    let half = T::lit(0.5);
    let b = Matrix::from_fn(m, m, |i, j| -half * (sq[(i, j)] - row_means[i] - row_means[j] + grand));

    let eig = SymmetricEigen::new(&b)?;
    let scales: Vec<T> = eig.values[..dim].iter().map(|&l| l.max(T::zero()).sqrt()).collect();
    Ok(Matrix::from_fn(m, dim, |i, k| eig.vectors[(i, k)] * scales[k]))
}

/// Centres, rotates onto principal axes (largest variance first) and fixes
/// axis signs by the third-order moment.
pub fn normalize_pose<T: Real>(points: &[Point3<T>]) -> Result<CanonicalForm<T>, CanonicalError> {
    if points.is_empty() {
        return Err(CanonicalError::NoSamples);
    }
    if points.iter().any(|p| p.iter().any(|c| !c.is_finite())) {
        return Err(CanonicalError::NonFinite);
    }
    let m = T::from_count(points.len());
    let mut centroid = [T::zero(); 3];
    for p in points {
        for k in 0..3 {
            centroid[k] = centroid[k] + p[k];
        }
    }
    for c in &mut centroid {
        *c = *c / m;
    }
    let centered: Vec<Point3<T>> = points
        .iter()
        .map(|p| [p[0] - centroid[0], p[1] - centroid[1], p[2] - centroid[2]])
        .collect();

    let mut cov = Matrix::<T>::zeros(3, 3);
    for p in &centered {
        for a in 0..3 {
            for b in 0..3 {
                cov[(a, b)] = cov[(a, b)] + p[a] * p[b];
            }
        }
    }
    let cov = Matrix::from_fn(3, 3, |a, b| cov[(a, b)] / m);
    let eig = SymmetricEigen::new(&cov)?;
    let axes = &eig.vectors;

    let mut rotated: Vec<Point3<T>> = centered
        .iter()
        .map(|p| {
            let mut out = [T::zero(); 3];
            for (k, o) in out.iter_mut().enumerate() {
                *o = p[0] * axes[(0, k)] + p[1] * axes[(1, k)] + p[2] * axes[(2, k)];
            }
            out
        })
        .collect();

    let mut ambiguous_axes = [false; 3];
    let threshold = T::lit(SIGN_AMBIGUITY);
    for k in 0..3 {
        let third = rotated.iter().map(|p| p[k] * p[k] * p[k]).sum::<T>() / m;
        if third.abs() <= threshold {
            ambiguous_axes[k] = true;
        } else if third < T::zero() {
            for p in &mut rotated {
                p[k] = -p[k];
            }
        }
    }

    Ok(CanonicalForm {
        points: rotated,
        sample_indices: (0..points.len()).collect(),
        ambiguous_axes,
    })
}

/// Full canonicalisation of a raw scan.
///
/// The requested sample count is capped at the size of the cropped surface.
pub fn canonicalize<T: Real>(s: &Surface<T>, cfg: &MatcherConfig<T>) -> Result<CanonicalForm<T>, CanonicalError> {
    let cropped = crop_geodesic(s, LandmarkName::NoseTip, cfg.crop_radius)?;
    let nose = cropped
        .landmark(LandmarkName::NoseTip)
        .ok_or(SurfaceError::MissingLandmark(LandmarkName::NoseTip))?;
    let count = cfg.sample_count.min(cropped.vertex_count());
    let samples = farthest_point_sample(&cropped, count, nose)?;
    let d = geodesic_matrix(&cropped, &samples)?;
    let coords = classical_mds(&d, 3)?;
    let points: Vec<Point3<T>> = (0..coords.rows())
        .map(|i| [coords[(i, 0)], coords[(i, 1)], coords[(i, 2)]])
        .collect();
    let mut form = normalize_pose(&points)?;
    form.sample_indices = samples;
    Ok(form)
}

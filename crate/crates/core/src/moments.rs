//! Moment signatures of canonical forms and the moment distance used for
//! matching.
//!
//! A signature of degree `P` holds the raw moments
//! `mu_pqr = (1/M) * sum_i x_i^p * y_i^q * z_i^r` for every `p + q + r <= P`.
//! Entries are ordered by total degree, then lexicographically by `(p, q, r)`;
//! that ordering is part of the stored template format.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::CanonicalForm;
use crate::scalar::Real;
use crate::surface::Point3;

/// Highest degree accepted by configuration.
pub const MAX_DEGREE: u32 = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MomentError {
    #[error("signature degrees differ: {0} vs {1}")]
    DegreeMismatch(u32, u32),
    #[error("point {0} has non-finite coordinates")]
    NonFinite(usize),
    #[error("cannot take moments of an empty point set")]
    Empty,
    #[error("signature of degree {degree} must hold {expected} values, found {found}")]
    Length {
        degree: u32,
        expected: usize,
        found: usize,
    },
}

/// Number of monomials of total degree at most `degree` in three variables.
pub fn signature_len(degree: u32) -> usize {
    let p = degree as usize;
    (p + 1) * (p + 2) * (p + 3) / 6
}

/// Exponent triples in storage order.
pub fn exponents(degree: u32) -> Vec<[u32; 3]> {
    let mut out = Vec::with_capacity(signature_len(degree));
    for total in 0..=degree {
        for p in 0..=total {
            for q in 0..=(total - p) {
                out.push([p, q, total - p - q]);
            }
        }
    }
    out
}

/// Position of `mu_pqr` in a signature of any degree `>= p + q + r`.
pub fn index_of(p: u32, q: u32, r: u32) -> usize {
    let total = p + q + r;
    let below = if total == 0 { 0 } else { signature_len(total - 1) };
    // Within one total degree, entries with first exponent < p come first.
    let before_p: usize = (0..p).map(|pp| (total - pp + 1) as usize).sum();
    below + before_p + q as usize
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    try_from = "RawSignature<T>",
    bound(deserialize = "T: Real + Deserialize<'de>")
)]
pub struct MomentSignature<T> {
    degree: u32,
    values: Vec<T>,
}

#[derive(Deserialize)]
struct RawSignature<T> {
    degree: u32,
    values: Vec<T>,
}

impl<T: Real> TryFrom<RawSignature<T>> for MomentSignature<T> {
    type Error = MomentError;

    fn try_from(raw: RawSignature<T>) -> Result<Self, Self::Error> {
        Self::from_values(raw.degree, raw.values)
    }
}

impl<T: Real> MomentSignature<T> {
    /// Wraps stored values, checking the length against the degree.
    pub fn from_values(degree: u32, values: Vec<T>) -> Result<Self, MomentError> {
        let expected = signature_len(degree);
        if values.len() != expected {
            return Err(MomentError::Length {
                degree,
                expected,
                found: values.len(),
            });
        }
        Ok(Self { degree, values })
    }

    /// Uniformly weighted raw moments of a point set.
    pub fn from_points(points: &[Point3<T>], degree: u32) -> Result<Self, MomentError> {
        if points.is_empty() {
            return Err(MomentError::Empty);
        }
        if let Some(i) = points.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(MomentError::NonFinite(i));
        }
        let exps = exponents(degree);
        let d = degree as usize;
        let mut sums = vec![T::zero(); exps.len()];
        let mut powers = vec![[T::one(); 3]; d + 1];
        // Summing in coordinate order makes the result independent of how the
        // points are listed.
        let mut order: Vec<&Point3<T>> = points.iter().collect();
        order.sort_by(|a, b| {
            (0..3)
                .map(|k| a[k].partial_cmp(&b[k]).expect("finite"))
                .find(|o| o.is_ne())
                .unwrap_or(std::cmp::Ordering::Equal)
        });
        for p in order {
            for k in 1..=d {
                for axis in 0..3 {
                    powers[k][axis] = powers[k - 1][axis] * p[axis];
                }
            }
            for (s, e) in sums.iter_mut().zip(&exps) {
                *s = *s + powers[e[0] as usize][0] * powers[e[1] as usize][1] * powers[e[2] as usize][2];
            }
        }
        let m = T::from_count(points.len());
        let values = sums.into_iter().map(|s| s / m).collect();
        Ok(Self { degree, values })
    }

    pub fn degree(&self) -> u32 {
        self.degree
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn get(&self, p: u32, q: u32, r: u32) -> Option<T> {
        if p + q + r > self.degree {
            return None;
        }
        self.values.get(index_of(p, q, r)).copied()
    }

    /// Euclidean norm of the value vector.
    pub fn norm(&self) -> T {
        self.values.iter().map(|&v| v * v).sum::<T>().sqrt()
    }
}

/// Moment signature of a canonical form.
pub fn moment_vector<T: Real>(form: &CanonicalForm<T>, degree: u32) -> Result<MomentSignature<T>, MomentError> {
    MomentSignature::from_points(form.points(), degree)
}

/// Sum of squared differences between two signatures of equal degree.
pub fn moment_distance<T: Real>(a: &MomentSignature<T>, b: &MomentSignature<T>) -> Result<T, MomentError> {
    if a.degree != b.degree {
        return Err(MomentError::DegreeMismatch(a.degree, b.degree));
    }
    Ok(a
        .values
        .iter()
        .zip(&b.values)
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ordering_and_length() {
        assert_eq!(signature_len(0), 1);
        assert_eq!(signature_len(5), 56);
        assert_eq!(signature_len(10), 286);
        let e = exponents(2);
        assert_eq!(
            e,
            vec![
                [0, 0, 0],
                [0, 0, 1],
                [0, 1, 0],
                [1, 0, 0],
                [0, 0, 2],
                [0, 1, 1],
                [0, 2, 0],
                [1, 0, 1],
                [1, 1, 0],
                [2, 0, 0]
            ]
        );
        for degree in 0..=6 {
            for (i, [p, q, r]) in exponents(degree).into_iter().enumerate() {
                assert_eq!(index_of(p, q, r), i);
            }
        }
    }

    #[test]
    fn origin_point() {
        let s = MomentSignature::from_points(&[[0.0, 0.0, 0.0]], 4).unwrap();
        assert_eq!(s.values()[0], 1.0);
        assert!(s.values()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_points_on_x_axis() {
        let s = MomentSignature::from_points(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]], 2).unwrap();
        for ([p, q, r], v) in exponents(2).into_iter().zip(s.values()) {
            let expect = match (p, q, r) {
                (0, 0, 0) | (2, 0, 0) => 1.0,
                _ => 0.0,
            };
            assert_eq!(*v, expect, "mu_{p}{q}{r}");
        }
        assert_eq!(s.get(2, 0, 0), Some(1.0));
        assert_eq!(s.get(3, 0, 0), None);
    }

    #[test]
    fn distance_of_small_vectors() {
        let a = MomentSignature::from_values(1, vec![1.0, 0.0, 2.0, 0.0]).unwrap();
        let b = MomentSignature::from_values(1, vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        assert_eq!(moment_distance(&a, &b).unwrap(), 5.0);
        assert_eq!(moment_distance(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn errors() {
        let a = MomentSignature::from_values(0, vec![1.0]).unwrap();
        let b = MomentSignature::from_values(1, vec![1.0; 4]).unwrap();
        assert_eq!(moment_distance(&a, &b), Err(MomentError::DegreeMismatch(0, 1)));
        assert!(MomentSignature::from_values(1, vec![1.0]).is_err());
        assert_eq!(
            MomentSignature::from_points(&[[f64::NAN, 0.0, 0.0]], 1),
            Err(MomentError::NonFinite(0))
        );
        assert_eq!(MomentSignature::<f64>::from_points(&[], 1), Err(MomentError::Empty));
    }
}

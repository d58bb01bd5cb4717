//! Verification (1:1) and identification (1:N) over enrolled moment
//! signatures, with threshold-based stranger decisions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::canonical::{canonicalize, CanonicalError};
use crate::cca::{cca_distance, CcaError, CcaModel};
use crate::moments::{moment_distance, MomentError, MomentSignature, MAX_DEGREE};
use crate::scalar::Real;
use crate::surface::Surface;

pub const DEFAULT_DEGREE: u32 = 5;
pub const DEFAULT_CROP_RADIUS_MM: f64 = 80.0;
pub const DEFAULT_SAMPLE_COUNT: usize = 200;
pub const DEFAULT_RANK_LEN: usize = 5;
pub const DEFAULT_CALIBRATION_MARGIN: f64 = 1.5;
/// Moment-distance threshold used when none is configured or calibrated.
/// Sits between the intra- and inter-identity distance ranges measured on
/// the synthetic benchmark at default settings.
pub const DEFAULT_THRESHOLD: f64 = 6.0e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchError {
    #[error(transparent)]
    Moment(#[from] MomentError),
    #[error(transparent)]
    Canonical(#[from] CanonicalError),
    #[error(transparent)]
    Cca(#[from] CcaError),
    #[error("record {0} holds no signatures")]
    EmptyRecord(u64),
    #[error("gallery too small to calibrate: need a record with 2 signatures or 2 records")]
    GalleryTooSmall,
    #[error("invalid matcher configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum TieBreak {
    /// Equal distances resolve to the smallest student id.
    #[default]
    LowestId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatcherConfig<T> {
    pub degree: u32,
    pub crop_radius: T,
    pub sample_count: usize,
    pub threshold: T,
    /// Divide canonical coordinates by their RMS radius before taking moments.
    pub normalize_scale: bool,
    pub cca_enabled: bool,
    pub cca_k: usize,
    pub tie_break: TieBreak,
    pub rank_len: usize,
}

impl<T: Real> Default for MatcherConfig<T> {
    fn default() -> Self {
        Self {
            degree: DEFAULT_DEGREE,
            crop_radius: T::lit(DEFAULT_CROP_RADIUS_MM),
            sample_count: DEFAULT_SAMPLE_COUNT,
            threshold: T::lit(DEFAULT_THRESHOLD),
            normalize_scale: false,
            cca_enabled: false,
            cca_k: 1,
            tie_break: TieBreak::LowestId,
            rank_len: DEFAULT_RANK_LEN,
        }
    }
}

impl<T: Real> MatcherConfig<T> {
    pub fn validate(&self) -> Result<(), MatchError> {
        let bad = |m: String| Err(MatchError::InvalidConfig(m));
        if self.degree > MAX_DEGREE {
            return bad(format!("degree {} exceeds {MAX_DEGREE}", self.degree));
        }
        if self.sample_count < 4 {
            return bad(format!("sample_count {} below 4", self.sample_count));
        }
        if !(self.threshold >= T::zero()) {
            return bad("threshold must be non-negative".into());
        }
        if !(self.crop_radius > T::zero()) || !self.crop_radius.is_finite() {
            return bad("crop radius must be positive".into());
        }
        if self.cca_enabled && self.cca_k == 0 {
            return bad("cca_k must be at least 1".into());
        }
        Ok(())
    }
}

/// Anything that carries a student id and one or more enrolled signatures.
pub trait Template<T> {
    fn student_id(&self) -> u64;
    fn signatures(&self) -> &[MomentSignature<T>];
}

/// Minimal in-memory template.
#[derive(Debug, Clone, PartialEq)]
pub struct GalleryEntry<T> {
    pub student_id: u64,
    pub signatures: Vec<MomentSignature<T>>,
}

impl<T> Template<T> for GalleryEntry<T> {
    fn student_id(&self) -> u64 {
        self.student_id
    }

    fn signatures(&self) -> &[MomentSignature<T>] {
        &self.signatures
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Decision {
    Matched { student_id: u64 },
    Stranger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedCandidate<T> {
    pub student_id: u64,
    pub distance: T,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult<T> {
    pub decision: Decision,
    /// `None` for an empty gallery.
    pub best_distance: Option<T>,
    pub ranked: Vec<RankedCandidate<T>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Verification<T> {
    pub accepted: bool,
    pub distance: T,
}

/// How a probe is compared with a stored signature.
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a, T> {
    Moment,
    /// Probe in the P block, stored signature in the Q block.
    Cca(&'a CcaModel<T>),
}

impl<T: Real> Scorer<'_, T> {
    pub fn score(&self, probe: &MomentSignature<T>, stored: &MomentSignature<T>) -> Result<T, MatchError> {
        if probe.degree() != stored.degree() {
            return Err(MomentError::DegreeMismatch(probe.degree(), stored.degree()).into());
        }
        match self {
            Scorer::Moment => Ok(moment_distance(probe, stored)?),
            Scorer::Cca(model) => Ok(cca_distance(model, probe.values(), stored.values())?),
        }
    }
}

/// Decision procedure with a fixed threshold, rank length and scorer.
#[derive(Debug, Clone, Copy)]
pub struct Matcher<'a, T> {
    pub threshold: T,
    pub rank_len: usize,
    pub scorer: Scorer<'a, T>,
}

impl<'a, T: Real> Matcher<'a, T> {
    pub fn new(threshold: T) -> Self {
        Self {
            threshold,
            rank_len: DEFAULT_RANK_LEN,
            scorer: Scorer::Moment,
        }
    }

    pub fn from_config(cfg: &MatcherConfig<T>, cca: Option<&'a CcaModel<T>>) -> Self {
        let scorer = match (cfg.cca_enabled, cca) {
            (true, Some(model)) => Scorer::Cca(model),
            _ => Scorer::Moment,
        };
        Self {
            threshold: cfg.threshold,
            rank_len: cfg.rank_len,
            scorer,
        }
    }

    /// Minimum score over the record's signatures.
    pub fn record_distance<R: Template<T> + ?Sized>(&self, probe: &MomentSignature<T>, record: &R) -> Result<T, MatchError> {
        let sigs = record.signatures();
        if sigs.is_empty() {
            return Err(MatchError::EmptyRecord(record.student_id()));
        }
        let mut best = T::infinity();
        for s in sigs {
            best = best.min(self.scorer.score(probe, s)?);
        }
        Ok(best)
    }

    pub fn verify<R: Template<T> + ?Sized>(&self, probe: &MomentSignature<T>, record: &R) -> Result<Verification<T>, MatchError> {
        let distance = self.record_distance(probe, record)?;
        Ok(Verification {
            accepted: distance <= self.threshold,
            distance,
        })
    }

    pub fn identify<R: Template<T>>(&self, probe: &MomentSignature<T>, gallery: &[R]) -> Result<MatchResult<T>, MatchError> {
        let mut scored = gallery
            .iter()
            .map(|r| {
                Ok(RankedCandidate {
                    student_id: r.student_id(),
                    distance: self.record_distance(probe, r)?,
                })
            })
            .collect::<Result<Vec<_>, MatchError>>()?;
        scored.sort_by(|a, b| {
            a.distance
                .partial_cmp(&b.distance)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.student_id.cmp(&b.student_id))
        });
        let best = scored.first().copied();
        let decision = match best {
            Some(c) if c.distance <= self.threshold => Decision::Matched {
                student_id: c.student_id,
            },
            _ => Decision::Stranger,
        };
        scored.truncate(self.rank_len);
        Ok(MatchResult {
            decision,
            best_distance: best.map(|c| c.distance),
            ranked: scored,
        })
    }
}

/// 1:1 check of a probe against one record using the moment distance.
pub fn verify<T: Real, R: Template<T> + ?Sized>(
    probe: &MomentSignature<T>,
    record: &R,
    threshold: T,
) -> Result<Verification<T>, MatchError> {
    Matcher::new(threshold).verify(probe, record)
}

/// 1:N search of a probe over a gallery using the moment distance.
pub fn identify<T: Real, R: Template<T>>(
    probe: &MomentSignature<T>,
    gallery: &[R],
    threshold: T,
) -> Result<MatchResult<T>, MatchError> {
    Matcher::new(threshold).identify(probe, gallery)
}

/// Derives a threshold from the gallery itself.
///
/// With repeated enrolments, `margin` times the largest within-record
/// distance; otherwise half the median nearest-neighbour distance between
/// records.
pub fn calibrate_threshold<T: Real, R: Template<T>>(gallery: &[R], margin: T) -> Result<T, MatchError> {
    let mut intra: Option<T> = None;
    for r in gallery {
        let sigs = r.signatures();
        for i in 0..sigs.len() {
            for j in (i + 1)..sigs.len() {
                let d = moment_distance(&sigs[i], &sigs[j])?;
                intra = Some(intra.map_or(d, |m: T| m.max(d)));
            }
        }
    }
    if let Some(max_intra) = intra {
        return Ok(margin * max_intra);
    }
    if gallery.len() < 2 {
        return Err(MatchError::GalleryTooSmall);
    }
    let matcher = Matcher::new(T::zero());
    let mut nearest = Vec::with_capacity(gallery.len());
    for (i, r) in gallery.iter().enumerate() {
        let mut best = T::infinity();
        for (j, other) in gallery.iter().enumerate() {
            if i == j {
                continue;
            }
            for s in r.signatures() {
                best = best.min(matcher.record_distance(s, other)?);
            }
        }
        nearest.push(best);
    }
    nearest.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let n = nearest.len();
    let median = if n % 2 == 1 {
        nearest[n / 2]
    } else {
        (nearest[n / 2 - 1] + nearest[n / 2]) / T::lit(2.0)
    };
    Ok(T::lit(0.5) * median)
}

/// Canonicalise a scan and reduce it to its moment signature.
pub fn signature_of<T: Real>(s: &Surface<T>, cfg: &MatcherConfig<T>) -> Result<MomentSignature<T>, MatchError> {
    let form = canonicalize(s, cfg)?;
    if cfg.normalize_scale {
        let r = form.rms_radius();
        let scale = if r > T::zero() { T::one() / r } else { T::one() };
        let pts: Vec<_> = form
            .points()
            .iter()
            .map(|p| [p[0] * scale, p[1] * scale, p[2] * scale])
            .collect();
        return Ok(MomentSignature::from_points(&pts, cfg.degree)?);
    }
    Ok(crate::moments::moment_vector(&form, cfg.degree)?)
}

//! Geodesic-invariant 3D face matching.
//!
//! A scan ([`Surface`]) is cropped around the nose tip, sampled, embedded by
//! classical MDS of its geodesic distances and pose normalised
//! ([`canonicalize`]). The embedding is summarised by raw 3D moments
//! ([`MomentSignature`]) which are compared by squared Euclidean distance,
//! optionally in a CCA-projected space ([`CcaModel`]).

pub mod canonical;
pub mod cca;
pub mod linalg;
pub mod matcher;
pub mod moments;
pub mod scalar;
pub mod surface;
pub mod synth;

pub use canonical::{canonicalize, classical_mds, geodesic_matrix, normalize_pose, CanonicalError, CanonicalForm};
pub use cca::{cca_distance, fit_cca, fit_cca_with_ridge, project, Block, CcaError, CcaModel};
pub use linalg::{LinalgError, Matrix, Svd, SymmetricEigen};
pub use matcher::{
    calibrate_threshold, identify, signature_of, verify, Decision, GalleryEntry, MatchError, MatchResult, Matcher,
    MatcherConfig, RankedCandidate, Scorer, Template, TieBreak, Verification,
};
pub use moments::{moment_distance, moment_vector, MomentError, MomentSignature};
pub use scalar::Real;
pub use surface::{
    crop_geodesic, farthest_point_sample, geodesic_distances, load_surface, save_surface, LandmarkName, Point3,
    Surface, SurfaceError,
};

pub type SurfaceF64 = Surface<f64>;
pub type SurfaceF32 = Surface<f32>;
pub type SignatureF64 = MomentSignature<f64>;
pub type SignatureF32 = MomentSignature<f32>;
pub type CanonicalFormF64 = CanonicalForm<f64>;
pub type CcaModelF64 = CcaModel<f64>;
pub type MatcherConfigF64 = MatcherConfig<f64>;
pub type MatrixF64 = Matrix<f64>;

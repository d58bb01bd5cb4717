//! Deterministic synthetic face-like scans and a recognition benchmark.
//!
//! An identity is the front patch of an ellipsoid tessellated on a
//! longitude/latitude grid, displaced along the normal by Gaussian bumps for
//! the nose, chin and brow ridges. Expressions hinge the jaw region about an
//! axis derived from the landmarks, which bends the surface while keeping
//! most edge lengths intact.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::matcher::{signature_of, GalleryEntry, MatchError, Matcher, MatcherConfig};
use crate::moments::MomentSignature;
use crate::scalar::Real;
use crate::surface::{LandmarkName, Point3, Surface, SurfaceError};

pub const DEFAULT_GRID: usize = 20;
/// Half-extent of the tessellated patch in longitude (radians).
const LONGITUDE_SPAN: f64 = 0.36;
/// Latitude range of the patch (radians). The nose sits near latitude 0 with
/// more forehead above it than chin below, and the whole patch stays inside
/// the default 80 mm geodesic crop.
const LATITUDE_MIN: f64 = -0.30;
const LATITUDE_MAX: f64 = 0.48;
/// Largest jaw rotation at magnitude 1 (radians).
const MAX_JAW_ANGLE: f64 = 0.15;
/// Radius of the fully rotated jaw region, as a fraction of the nose-chin
/// distance.
const JAW_CORE_FRACTION: f64 = 0.3;
/// Width of the blend shell around the jaw region (mm).
const JAW_BLEND_MM: f64 = 30.0;
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("expression magnitude {0} outside [0, 1]")]
    Magnitude(f64),
    #[error("expression needs landmark {0}")]
    MissingLandmark(LandmarkName),
    #[error("benchmark needs at least 2 identities and 1 expression")]
    Counts,
    #[error(transparent)]
    Surface(#[from] SurfaceError),
    #[error(transparent)]
    Match(#[from] MatchError),
}

/// Gaussian bump centred at a (longitude, latitude) direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bump {
    pub longitude: f64,
    pub latitude: f64,
    pub amplitude_mm: f64,
    pub width: f64,
}

impl Bump {
    fn height(&self, lon: f64, lat: f64) -> f64 {
        let d2 = (lon - self.longitude).powi(2) + (lat - self.latitude).powi(2);
        self.amplitude_mm * (-d2 / (2.0 * self.width * self.width)).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityParams {
    pub seed: u64,
    /// Half-width, half-height and depth of the head ellipsoid (mm).
    pub semi_axes: [f64; 3],
    pub nose: Bump,
    pub chin: Bump,
    pub brow_left: Bump,
    pub brow_right: Bump,
}

impl IdentityParams {
    pub fn from_seed(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut u = |lo: f64, hi: f64| lo + (hi - lo) * rng.random::<f64>();
        let semi_axes = [u(62.0, 84.0), u(85.0, 112.0), u(82.0, 105.0)];
        let nose = Bump {
            longitude: u(-0.03, 0.03),
            latitude: u(-0.04, 0.04),
            amplitude_mm: u(16.0, 30.0),
            width: u(0.09, 0.15),
        };
        let chin = Bump {
            longitude: u(-0.03, 0.03),
            latitude: u(LATITUDE_MIN + 0.04, LATITUDE_MIN + 0.10),
            amplitude_mm: u(4.0, 12.0),
            width: u(0.08, 0.14),
        };
        let brow_lat = u(0.20, 0.28);
        let brow_lon = u(0.16, 0.26);
        let brow_amp = u(3.0, 9.0);
        let brow_width = u(0.06, 0.10);
        let brow_left = Bump {
            longitude: -brow_lon + u(-0.02, 0.02),
            latitude: brow_lat + u(-0.02, 0.02),
            amplitude_mm: brow_amp * u(0.85, 1.15),
            width: brow_width,
        };
        let brow_right = Bump {
            longitude: brow_lon + u(-0.02, 0.02),
            latitude: brow_lat + u(-0.02, 0.02),
            amplitude_mm: brow_amp * u(0.85, 1.15),
            width: brow_width,
        };
        Self {
            seed,
            semi_axes,
            nose,
            chin,
            brow_left,
            brow_right,
        }
    }

    fn bumps(&self) -> [&Bump; 4] {
        [&self.nose, &self.chin, &self.brow_left, &self.brow_right]
    }
}

/// Identity surface for `seed` on the default grid.
pub fn generate_identity<T: Real>(seed: u64) -> Surface<T> {
    generate_from_params(&IdentityParams::from_seed(seed), DEFAULT_GRID)
}

pub fn generate_from_params<T: Real>(params: &IdentityParams, grid: usize) -> Surface<T> {
    let grid = grid.max(4);
    let [a, b, c] = params.semi_axes;
    let step = |i: usize, lo: f64, hi: f64| lo + (hi - lo) * i as f64 / (grid - 1) as f64;
    let mut vertices = Vec::with_capacity(grid * grid);
    for row in 0..grid {
        let lat = step(row, LATITUDE_MIN, LATITUDE_MAX);
        for col in 0..grid {
            let lon = step(col, -LONGITUDE_SPAN, LONGITUDE_SPAN);
            let base = [a * lon.sin() * lat.cos(), b * lat.sin(), c * lon.cos() * lat.cos()];
            let grad = [base[0] / (a * a), base[1] / (b * b), base[2] / (c * c)];
            let gn = (grad[0] * grad[0] + grad[1] * grad[1] + grad[2] * grad[2]).sqrt();
            let h: f64 = params.bumps().iter().map(|bump| bump.height(lon, lat)).sum();
            vertices.push([
                T::lit(base[0] + h * grad[0] / gn),
                T::lit(base[1] + h * grad[1] / gn),
                T::lit(base[2] + h * grad[2] / gn),
            ]);
        }
    }
    let mut triangles = Vec::with_capacity(2 * (grid - 1) * (grid - 1));
    for row in 0..grid - 1 {
        for col in 0..grid - 1 {
            let v00 = row * grid + col;
            let v01 = v00 + 1;
            let v10 = v00 + grid;
            let v11 = v10 + 1;
            if (row + col) % 2 == 0 {
                triangles.push([v00, v01, v11]);
                triangles.push([v00, v11, v10]);
            } else {
                triangles.push([v00, v01, v10]);
                triangles.push([v01, v11, v10]);
            }
        }
    }
    let nearest = |bump: &Bump| {
        let row = ((bump.latitude - LATITUDE_MIN) / (LATITUDE_MAX - LATITUDE_MIN) * (grid - 1) as f64).round();
        let col = ((bump.longitude + LONGITUDE_SPAN) / (2.0 * LONGITUDE_SPAN) * (grid - 1) as f64).round();
        let clamp = |x: f64| (x.max(0.0) as usize).min(grid - 1);
        clamp(row) * grid + clamp(col)
    };
    let landmarks = BTreeMap::from([
        (LandmarkName::NoseTip, nearest(&params.nose)),
        (LandmarkName::Chin, nearest(&params.chin)),
        (LandmarkName::EyeSocketLeft, nearest(&params.brow_left)),
        (LandmarkName::EyeSocketRight, nearest(&params.brow_right)),
    ]);
    Surface::new(vertices, triangles, landmarks).expect("synthetic grid is a valid surface")
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn scale(a: [f64; 3], s: f64) -> [f64; 3] {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalized(a: [f64; 3]) -> [f64; 3] {
    scale(a, 1.0 / dot(a, a).sqrt())
}

/// Rodrigues rotation of `v` about the unit `axis` by `angle`.
fn rotate(v: [f64; 3], axis: [f64; 3], angle: f64) -> [f64; 3] {
    let (s, c) = angle.sin_cos();
    let kxv = cross(axis, v);
    let kdv = dot(axis, v);
    [
        v[0] * c + kxv[0] * s + axis[0] * kdv * (1.0 - c),
        v[1] * c + kxv[1] * s + axis[1] * kdv * (1.0 - c),
        v[2] * c + kxv[2] * s + axis[2] * kdv * (1.0 - c),
    ]
}

fn to_f64<T: Real>(p: &Point3<T>) -> [f64; 3] {
    [p[0].as_f64(), p[1].as_f64(), p[2].as_f64()]
}

fn from_f64<T: Real>(p: [f64; 3]) -> Point3<T> {
    [T::lit(p[0]), T::lit(p[1]), T::lit(p[2])]
}

/// Jaw motion: rotates the region around the chin about an axis parallel to
/// the eye-socket line, pivoting between nose and chin. The rotation angle
/// fades out with distance from the chin, so the bend is smooth and nearly
/// preserves edge lengths.
pub fn apply_expression<T: Real>(s: &Surface<T>, magnitude: f64, seed: u64) -> Result<Surface<T>, SynthError> {
    if !(0.0..=1.0).contains(&magnitude) {
        return Err(SynthError::Magnitude(magnitude));
    }
    if magnitude == 0.0 {
        return Ok(s.clone());
    }
    let landmark = |name| {
        s.landmark(name)
            .map(|i| to_f64(&s.vertices()[i]))
            .ok_or(SynthError::MissingLandmark(name))
    };
    let nose = landmark(LandmarkName::NoseTip)?;
    let chin = landmark(LandmarkName::Chin)?;
    let left = landmark(LandmarkName::EyeSocketLeft)?;
    let right = landmark(LandmarkName::EyeSocketRight)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_e4f2_3c11_9a07);
    let angle = magnitude * MAX_JAW_ANGLE * (0.6 + 0.4 * rng.random::<f64>());
    let angle = if rng.random::<bool>() { angle } else { -angle };
    let hinge_fraction = 0.35 + 0.2 * rng.random::<f64>();

    let axis = normalized(sub(right, left));
    let nc = sub(chin, nose);
    let down = normalized(sub(nc, scale(axis, dot(nc, axis))));
    let hinge = [
        nose[0] + hinge_fraction * nc[0],
        nose[1] + hinge_fraction * nc[1],
        nose[2] + hinge_fraction * nc[2],
    ];
    // Pivot on the surface: the vertex nearest the hinge line's midline.
    let pivot = s
        .vertices()
        .iter()
        .map(to_f64)
        .min_by(|a, b| {
            let score = |p: [f64; 3]| {
                let r = sub(p, hinge);
                dot(r, down).abs() + dot(r, axis).abs()
            };
            score(*a).total_cmp(&score(*b))
        })
        .expect("surface has vertices");

    let core = JAW_CORE_FRACTION * dot(nc, nc).sqrt();
    let out = s.map_vertices(|_, p| {
        let p = to_f64(p);
        let dc = dot(sub(p, chin), sub(p, chin)).sqrt();
        let t = ((dc - core) / JAW_BLEND_MM).clamp(0.0, 1.0);
        let w = 1.0 - t * t * (3.0 - 2.0 * t);
        if w == 0.0 {
            return from_f64(p);
        }
        let r = rotate(sub(p, pivot), axis, angle * w);
        from_f64([pivot[0] + r[0], pivot[1] + r[1], pivot[2] + r[2]])
    })?;
    Ok(out)
}

/// Rigid motion: rotation given as an axis-angle vector (radians), then
/// translation.
pub fn apply_rigid<T: Real>(s: &Surface<T>, axis_angle: [f64; 3], translation: [f64; 3]) -> Surface<T> {
    let angle = dot(axis_angle, axis_angle).sqrt();
    s.map_vertices(|_, p| {
        let p = to_f64(p);
        let r = if angle > 0.0 {
            rotate(p, scale(axis_angle, 1.0 / angle), angle)
        } else {
            p
        };
        from_f64([r[0] + translation[0], r[1] + translation[1], r[2] + translation[2]])
    })
    .expect("rigid motion preserves surface validity")
}

/// Uniformly random rotation and a translation within +-`max_shift` mm.
pub fn random_rigid(rng: &mut impl Rng, max_shift: f64) -> ([f64; 3], [f64; 3]) {
    let z: f64 = 2.0 * rng.random::<f64>() - 1.0;
    let phi = std::f64::consts::TAU * rng.random::<f64>();
    let rxy = (1.0 - z * z).sqrt();
    let axis = [rxy * phi.cos(), rxy * phi.sin(), z];
    let angle = std::f64::consts::PI * rng.random::<f64>();
    let shift = [
        max_shift * (2.0 * rng.random::<f64>() - 1.0),
        max_shift * (2.0 * rng.random::<f64>() - 1.0),
        max_shift * (2.0 * rng.random::<f64>() - 1.0),
    ];
    (scale(axis, angle), shift)
}

/// Mean relative change of edge lengths between two embeddings of one mesh.
pub fn mean_edge_drift<T: Real>(a: &Surface<T>, b: &Surface<T>) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for t in a.triangles() {
        for (i, j) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let la = sub(to_f64(&a.vertices()[i]), to_f64(&a.vertices()[j]));
            let lb = sub(to_f64(&b.vertices()[i]), to_f64(&b.vertices()[j]));
            let la = dot(la, la).sqrt();
            let lb = dot(lb, lb).sqrt();
            total += (lb - la).abs() / la;
            count += 1;
        }
    }
    total / count.max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchSettings {
    pub identities: usize,
    pub expressions: usize,
    /// First identity seed; identity `i` uses `base_seed + i`.
    pub base_seed: u64,
    /// Seed for the per-probe rigid motions.
    pub motion_seed: u64,
}

impl BenchSettings {
    pub fn new(identities: usize, expressions: usize) -> Self {
        Self {
            identities,
            expressions,
            base_seed: 1,
            motion_seed: 0xbe9c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub count: usize,
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                count: 0,
                mean: f64::NAN,
                min: f64::NAN,
                max: f64::NAN,
            };
        }
        Self {
            count: values.len(),
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeOutcome {
    pub identity: usize,
    pub expression: usize,
    pub magnitude: f64,
    /// Gallery index of the nearest enrolled identity.
    pub nearest: usize,
    pub correct: bool,
    /// Distance to every enrolled identity, in gallery order.
    pub distances: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub true_accept_rate: f64,
    pub false_accept_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub settings: BenchSettings,
    pub probes: Vec<ProbeOutcome>,
    pub intra: Summary,
    pub inter: Summary,
    pub rank1_accuracy: f64,
    pub sweep: Vec<SweepPoint>,
}

impl BenchReport {
    /// Probe-by-gallery distance table as CSV.
    pub fn distance_csv(&self) -> String {
        let gallery = self.settings.identities;
        let mut out = String::from("identity,expression,magnitude");
        for g in 0..gallery {
            out.push_str(&format!(",g{g}"));
        }
        out.push('\n');
        for p in &self.probes {
            out.push_str(&format!("{},{},{}", p.identity, p.expression, p.magnitude));
            for d in &p.distances {
                out.push_str(&format!(",{d}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Magnitude of expression `j` out of `expressions` (expression 0 is neutral).
pub fn expression_magnitude(j: usize, expressions: usize) -> f64 {
    if j == 0 || expressions < 2 {
        0.0
    } else {
        j as f64 / (expressions - 1) as f64
    }
}

/// Seed of expression `j` for identity seed `identity_seed`.
pub fn expression_seed(identity_seed: u64, j: usize) -> u64 {
    identity_seed.wrapping_mul(1_000_003).wrapping_add(j as u64)
}

fn parallel_map<I: Sync, O: Send>(items: &[I], f: impl Fn(&I) -> O + Sync) -> Vec<O> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(threads).max(1);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(|| c.iter().map(&f).collect::<Vec<O>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    })
}

/// Enrols the neutral scan of each identity and probes with every other
/// expression under a random rigid motion. With a single expression, the
/// enrolled scans themselves are the probes.
pub fn run_benchmark<T: Real>(settings: BenchSettings, cfg: &MatcherConfig<T>) -> Result<BenchReport, SynthError> {
    if settings.identities < 2 || settings.expressions < 1 {
        return Err(SynthError::Counts);
    }
    let seeds: Vec<u64> = (0..settings.identities as u64).map(|i| settings.base_seed + i).collect();
    let neutral: Vec<Surface<T>> = seeds.iter().map(|&s| generate_identity(s)).collect();
    let enrolled: Vec<Result<MomentSignature<T>, MatchError>> = parallel_map(&neutral, |s| signature_of(s, cfg));
    let gallery: Vec<GalleryEntry<T>> = enrolled
        .into_iter()
        .enumerate()
        .map(|(i, sig)| {
            Ok(GalleryEntry {
                student_id: i as u64,
                signatures: vec![sig?],
            })
        })
        .collect::<Result<_, MatchError>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(settings.motion_seed);
    let mut jobs = Vec::new();
    for (i, &seed) in seeds.iter().enumerate() {
        if settings.expressions == 1 {
            jobs.push((i, 0, 0.0, None));
            continue;
        }
        for j in 1..settings.expressions {
            let motion = random_rigid(&mut rng, 100.0);
            jobs.push((i, j, expression_magnitude(j, settings.expressions), Some((expression_seed(seed, j), motion))));
        }
    }

    let matcher = Matcher::new(cfg.threshold);
    let outcomes = parallel_map(&jobs, |&(i, j, magnitude, ref variant)| -> Result<ProbeOutcome, SynthError> {
        let probe_surface = match variant {
            None => neutral[i].clone(),
            Some((expr_seed, (axis_angle, shift))) => {
                let bent = apply_expression(&neutral[i], magnitude, *expr_seed)?;
                apply_rigid(&bent, *axis_angle, *shift)
            }
        };
        let probe = signature_of(&probe_surface, cfg)?;
        let distances = gallery
            .iter()
            .map(|g| matcher.record_distance(&probe, g).map(|d| d.as_f64()))
            .collect::<Result<Vec<f64>, _>>()?;
        let result = matcher.identify(&probe, &gallery)?;
        let nearest = result.ranked.first().map_or(usize::MAX, |c| c.student_id as usize);
        Ok(ProbeOutcome {
            identity: i,
            expression: j,
            magnitude,
            nearest,
            correct: nearest == i,
            distances,
        })
    });
    let probes = outcomes.into_iter().collect::<Result<Vec<_>, _>>()?;

    let mut intra = Vec::new();
    let mut inter = Vec::new();
    for p in &probes {
        for (g, &d) in p.distances.iter().enumerate() {
            if g == p.identity {
                intra.push(d);
            } else {
                inter.push(d);
            }
        }
    }
    let rank1_accuracy = probes.iter().filter(|p| p.correct).count() as f64 / probes.len() as f64;
    let sweep = threshold_sweep(&intra, &inter, 20);
    Ok(BenchReport {
        settings,
        probes,
        intra: Summary::of(&intra),
        inter: Summary::of(&inter),
        rank1_accuracy,
        sweep,
    })
}

fn threshold_sweep(intra: &[f64], inter: &[f64], points: usize) -> Vec<SweepPoint> {
    let mut all: Vec<f64> = intra.iter().chain(inter).copied().collect();
    all.sort_by(f64::total_cmp);
    if all.is_empty() {
        return Vec::new();
    }
    let rate = |v: &[f64], t: f64| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().filter(|&&d| d <= t).count() as f64 / v.len() as f64
        }
    };
    let mut out: Vec<SweepPoint> = (0..=points)
        .map(|k| {
            let idx = ((all.len() - 1) * k) / points;
            let threshold = all[idx];
            SweepPoint {
                threshold,
                true_accept_rate: rate(intra, threshold),
                false_accept_rate: rate(inter, threshold),
            }
        })
        .collect();
    out.dedup_by(|a, b| a.threshold == b.threshold);
    out
}

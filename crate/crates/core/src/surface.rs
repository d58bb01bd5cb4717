//! Triangulated face scans: loading, graph geodesics, geodesic cropping and
//! farthest point sampling.
//!
//! Distances are shortest paths on the mesh edge graph with Euclidean edge
//! weights. They overestimate true surface geodesics slightly, but are exact
//! graph metrics, which is what the sampling and embedding stages rely on.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

pub type Point3<T> = [T; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LandmarkName {
    NoseTip,
    Chin,
    EyeSocketLeft,
    EyeSocketRight,
}

impl LandmarkName {
    pub const ALL: [LandmarkName; 4] = [
        LandmarkName::NoseTip,
        LandmarkName::Chin,
        LandmarkName::EyeSocketLeft,
        LandmarkName::EyeSocketRight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LandmarkName::NoseTip => "NoseTip",
            LandmarkName::Chin => "Chin",
            LandmarkName::EyeSocketLeft => "EyeSocketLeft",
            LandmarkName::EyeSocketRight => "EyeSocketRight",
        }
    }
}

impl fmt::Display for LandmarkName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LandmarkName {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        LandmarkName::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown landmark {s:?}"))
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurfaceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{}vertex index {index} out of range for {vertex_count} vertices", at_line(*.line))]
    IndexOutOfRange {
        line: Option<usize>,
        index: usize,
        vertex_count: usize,
    },
    #[error("{}triangle {triangle:?} repeats a vertex index", at_line(*.line))]
    RepeatedIndex {
        line: Option<usize>,
        triangle: [usize; 3],
    },
    #[error("{}zero-length edge between vertices {a} and {b}", at_line(*.line))]
    DegenerateEdge {
        line: Option<usize>,
        a: usize,
        b: usize,
    },
    #[error("{}vertex {vertex} has non-finite coordinates", at_line(*.line))]
    NonFinite { line: Option<usize>, vertex: usize },
    #[error("surface needs at least 4 vertices, got {0}")]
    TooFewVertices(usize),
    #[error("mesh edge graph is disconnected ({components} components)")]
    Disconnected { components: usize },
    #[error("landmark {0} is not annotated")]
    MissingLandmark(LandmarkName),
    #[error("vertex {index} is not a valid source for {vertex_count} vertices")]
    InvalidVertex { index: usize, vertex_count: usize },
    #[error("crop radius must be positive and finite")]
    InvalidRadius,
    #[error("sample count {requested} outside 1..={available}")]
    SampleCount { requested: usize, available: usize },
}

fn at_line(line: Option<usize>) -> String {
    line.map(|l| format!("line {l}: ")).unwrap_or_default()
}

/// Undirected weighted graph in compressed adjacency form.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeGraph<T> {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<T>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct QueueEntry<T> {
    dist: T,
    vertex: usize,
}

impl<T: Real> Eq for QueueEntry<T> {}

impl<T: Real> Ord for QueueEntry<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, ties by vertex index
        other
            .dist
            .partial_cmp(&self.dist)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.vertex.cmp(&self.vertex))
    }
}

impl<T: Real> PartialOrd for QueueEntry<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: Real> EdgeGraph<T> {
    /// Builds a graph from undirected edges; duplicates are merged.
    pub fn from_edges(vertex_count: usize, edges: impl IntoIterator<Item = (usize, usize, T)>) -> Self {
        let mut adj: Vec<BTreeMap<usize, T>> = vec![BTreeMap::new(); vertex_count];
        for (a, b, w) in edges {
            adj[a].insert(b, w);
            adj[b].insert(a, w);
        }
        let mut offsets = Vec::with_capacity(vertex_count + 1);
        let mut neighbors = Vec::new();
        let mut weights = Vec::new();
        offsets.push(0);
        for row in adj {
            for (n, w) in row {
                neighbors.push(n);
                weights.push(w);
            }
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            weights,
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, v: usize) -> impl Iterator<Item = (usize, T)> + '_ {
        let r = self.offsets[v]..self.offsets[v + 1];
        self.neighbors[r.clone()]
            .iter()
            .copied()
            .zip(self.weights[r].iter().copied())
    }

    /// Dijkstra from `source`; unreachable vertices get `+inf`.
    pub fn shortest_paths(&self, source: usize) -> Vec<T> {
        let n = self.vertex_count();
        let mut dist = vec![T::infinity(); n];
        let mut heap = BinaryHeap::new();
        dist[source] = T::zero();
        heap.push(QueueEntry {
            dist: T::zero(),
            vertex: source,
        });
        while let Some(QueueEntry { dist: d, vertex }) = heap.pop() {
            if d > dist[vertex] {
                continue;
            }
            for (next, w) in self.neighbors(vertex) {
                let nd = d + w;
                if nd < dist[next] {
                    dist[next] = nd;
                    heap.push(QueueEntry {
                        dist: nd,
                        vertex: next,
                    });
                }
            }
        }
        dist
    }

    /// Connected component labels, numbered in order of first vertex.
    pub fn components(&self) -> (usize, Vec<usize>) {
        let n = self.vertex_count();
        let mut label = vec![usize::MAX; n];
        let mut count = 0;
        let mut queue = VecDeque::new();
        for start in 0..n {
            if label[start] != usize::MAX {
                continue;
            }
            label[start] = count;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                for (u, _) in self.neighbors(v) {
                    if label[u] == usize::MAX {
                        label[u] = count;
                        queue.push_back(u);
                    }
                }
            }
            count += 1;
        }
        (count, label)
    }
}

/// A validated triangulated scan with optional landmark annotations.
#[derive(Debug, Clone, PartialEq)]
pub struct Surface<T> {
    vertices: Vec<Point3<T>>,
    triangles: Vec<[usize; 3]>,
    landmarks: BTreeMap<LandmarkName, usize>,
    graph: EdgeGraph<T>,
}

fn distance<T: Real>(a: &Point3<T>, b: &Point3<T>) -> T {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    (dx * dx + dy * dy + dz * dz).sqrt()
}

fn check_triangle(t: [usize; 3], n: usize, line: Option<usize>) -> Result<(), SurfaceError> {
    for &i in &t {
        if i >= n {
            return Err(SurfaceError::IndexOutOfRange {
                line,
                index: i,
                vertex_count: n,
            });
        }
    }
    if t[0] == t[1] || t[1] == t[2] || t[0] == t[2] {
        return Err(SurfaceError::RepeatedIndex { line, triangle: t });
    }
    Ok(())
}

impl<T: Real> Surface<T> {
    pub fn new(
        vertices: Vec<Point3<T>>,
        triangles: Vec<[usize; 3]>,
        landmarks: BTreeMap<LandmarkName, usize>,
    ) -> Result<Self, SurfaceError> {
        let n = vertices.len();
        if n < 4 {
            return Err(SurfaceError::TooFewVertices(n));
        }
        if let Some(vertex) = vertices.iter().position(|p| p.iter().any(|c| !c.is_finite())) {
            return Err(SurfaceError::NonFinite { line: None, vertex });
        }
        for t in &triangles {
            check_triangle(*t, n, None)?;
        }
        for &idx in landmarks.values() {
            if idx >= n {
                return Err(SurfaceError::IndexOutOfRange {
                    line: None,
                    index: idx,
                    vertex_count: n,
                });
            }
        }
        let mut edges = Vec::with_capacity(triangles.len() * 3);
        for t in &triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let w = distance(&vertices[a], &vertices[b]);
                if w <= T::zero() {
                    return Err(SurfaceError::DegenerateEdge { line: None, a, b });
                }
                edges.push((a, b, w));
            }
        }
        let graph = EdgeGraph::from_edges(n, edges);
        let (components, _) = graph.components();
        if components != 1 {
            return Err(SurfaceError::Disconnected { components });
        }
        Ok(Self {
            vertices,
            triangles,
            landmarks,
            graph,
        })
    }

    pub fn vertices(&self) -> &[Point3<T>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn landmarks(&self) -> &BTreeMap<LandmarkName, usize> {
        &self.landmarks
    }

    pub fn landmark(&self, name: LandmarkName) -> Option<usize> {
        self.landmarks.get(&name).copied()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn graph(&self) -> &EdgeGraph<T> {
        &self.graph
    }

    /// Same topology and landmarks, new vertex positions.
    pub fn map_vertices(&self, f: impl FnMut(usize, &Point3<T>) -> Point3<T>) -> Result<Self, SurfaceError> {
        let mut f = f;
        let vertices = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, p)| f(i, p))
            .collect();
        Self::new(vertices, self.triangles.clone(), self.landmarks.clone())
    }

    fn check_vertex(&self, index: usize) -> Result<(), SurfaceError> {
        if index >= self.vertices.len() {
            return Err(SurfaceError::InvalidVertex {
                index,
                vertex_count: self.vertices.len(),
            });
        }
        Ok(())
    }
}

/// Parses an OFF document with optional `#landmark <name> <index>` lines.
pub fn load_surface<T: Real>(source: &str) -> Result<Surface<T>, SurfaceError> {
    let mut lines = source
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty());

    let mut landmarks = BTreeMap::new();
    let mut landmark_lines = BTreeMap::new();
    let mut content: Vec<(usize, &str)> = Vec::new();
    for (no, line) in lines.by_ref() {
        if let Some(rest) = line.strip_prefix("#landmark") {
            let mut parts = rest.split_whitespace();
            let (Some(name), Some(idx), None) = (parts.next(), parts.next(), parts.next()) else {
                return Err(SurfaceError::Parse {
                    line: no,
                    message: "expected `#landmark <name> <vertex-index>`".into(),
                });
            };
            let name: LandmarkName = name
                .parse()
                .map_err(|message| SurfaceError::Parse { line: no, message })?;
            let idx: usize = idx.parse().map_err(|_| SurfaceError::Parse {
                line: no,
                message: format!("bad landmark index {idx:?}"),
            })?;
            if landmarks.insert(name, idx).is_some() {
                return Err(SurfaceError::Parse {
                    line: no,
                    message: format!("landmark {name} annotated twice"),
                });
            }
            landmark_lines.insert(name, no);
        } else if line.starts_with('#') {
            continue;
        } else {
            content.push((no, line));
        }
    }

    let mut it = content.into_iter();
    let (hno, header) = it.next().ok_or(SurfaceError::Parse {
        line: 1,
        message: "empty document".into(),
    })?;
    let mut header_tokens = header.split_whitespace();
    if header_tokens.next() != Some("OFF") {
        return Err(SurfaceError::Parse {
            line: hno,
            message: "missing OFF header".into(),
        });
    }
    let inline_counts: Vec<&str> = header_tokens.collect();
    let (cno, counts): (usize, Vec<&str>) = if inline_counts.is_empty() {
        let (no, l) = it.next().ok_or(SurfaceError::Parse {
            line: hno,
            message: "missing counts line".into(),
        })?;
        (no, l.split_whitespace().collect())
    } else {
        (hno, inline_counts)
    };
    if counts.len() < 2 {
        return Err(SurfaceError::Parse {
            line: cno,
            message: "counts line needs vertex and face counts".into(),
        });
    }
    let parse_count = |s: &str| {
        s.parse::<usize>().map_err(|_| SurfaceError::Parse {
            line: cno,
            message: format!("bad count {s:?}"),
        })
    };
    let nv = parse_count(counts[0])?;
    let nf = parse_count(counts[1])?;

    let mut vertices = Vec::with_capacity(nv);
    for i in 0..nv {
        let (no, l) = it.next().ok_or(SurfaceError::Parse {
            line: cno,
            message: format!("expected {nv} vertices, found {i}"),
        })?;
        let coords: Vec<T> = l
            .split_whitespace()
            .take(3)
            .map(|tok| {
                tok.parse::<f64>()
                    .ok()
                    .and_then(T::from_f64)
                    .ok_or_else(|| SurfaceError::Parse {
                        line: no,
                        message: format!("bad coordinate {tok:?}"),
                    })
            })
            .collect::<Result<_, _>>()?;
        if coords.len() != 3 {
            return Err(SurfaceError::Parse {
                line: no,
                message: "vertex needs 3 coordinates".into(),
            });
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(SurfaceError::NonFinite {
                line: Some(no),
                vertex: i,
            });
        }
        vertices.push([coords[0], coords[1], coords[2]]);
    }

    let mut triangles = Vec::with_capacity(nf);
    for i in 0..nf {
        let (no, l) = it.next().ok_or(SurfaceError::Parse {
            line: cno,
            message: format!("expected {nf} faces, found {i}"),
        })?;
        let toks: Vec<usize> = l
            .split_whitespace()
            .map(|tok| {
                tok.parse::<usize>().map_err(|_| SurfaceError::Parse {
                    line: no,
                    message: format!("bad face entry {tok:?}"),
                })
            })
            .collect::<Result<_, _>>()?;
        if toks.first() != Some(&3) || toks.len() < 4 {
            return Err(SurfaceError::Parse {
                line: no,
                message: "only triangular faces (`3 a b c`) are supported".into(),
            });
        }
        let t = [toks[1], toks[2], toks[3]];
        check_triangle(t, nv, Some(no))?;
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            if distance(&vertices[a], &vertices[b]) <= T::zero() {
                return Err(SurfaceError::DegenerateEdge {
                    line: Some(no),
                    a,
                    b,
                });
            }
        }
        triangles.push(t);
    }
    if let Some((no, _)) = it.next() {
        return Err(SurfaceError::Parse {
            line: no,
            message: "unexpected trailing content".into(),
        });
    }
    for (name, &idx) in &landmarks {
        if idx >= nv {
            return Err(SurfaceError::IndexOutOfRange {
                line: landmark_lines.get(name).copied(),
                index: idx,
                vertex_count: nv,
            });
        }
    }
    Surface::new(vertices, triangles, landmarks)
}

/// Writes an OFF document that [`load_surface`] reads back exactly.
pub fn save_surface<T: Real>(s: &Surface<T>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "OFF");
    let _ = writeln!(out, "{} {} 0", s.vertices.len(), s.triangles.len());
    for v in &s.vertices {
        let _ = writeln!(out, "{} {} {}", v[0], v[1], v[2]);
    }
    for t in &s.triangles {
        let _ = writeln!(out, "3 {} {} {}", t[0], t[1], t[2]);
    }
    for (name, idx) in &s.landmarks {
        let _ = writeln!(out, "#landmark {name} {idx}");
    }
    out
}

/// Graph geodesic distance from `source` to every vertex.
pub fn geodesic_distances<T: Real>(s: &Surface<T>, source: usize) -> Result<Vec<T>, SurfaceError> {
    s.check_vertex(source)?;
    Ok(s.graph.shortest_paths(source))
}

/// Geodesic disc of `radius` around a landmark.
///
/// Keeps vertices within `radius`, then triangles whose corners all survive,
/// then the component containing the landmark. The step is repeated until the
/// vertex set is stable, so the result is a fixed point: cropping it again with
/// the same radius returns it unchanged.
pub fn crop_geodesic<T: Real>(s: &Surface<T>, center: LandmarkName, radius: T) -> Result<Surface<T>, SurfaceError> {
    if !(radius > T::zero()) || !radius.is_finite() {
        return Err(SurfaceError::InvalidRadius);
    }
    let mut current = crop_once(s, center, radius)?;
    loop {
        let next = crop_once(&current, center, radius)?;
        if next.vertex_count() == current.vertex_count() {
            return Ok(next);
        }
        current = next;
    }
}

fn crop_once<T: Real>(s: &Surface<T>, center: LandmarkName, radius: T) -> Result<Surface<T>, SurfaceError> {
    let c = s.landmark(center).ok_or(SurfaceError::MissingLandmark(center))?;
    let dist = s.graph.shortest_paths(c);
    let inside: Vec<bool> = dist.iter().map(|&d| d <= radius).collect();
    let kept_tris: Vec<[usize; 3]> = s
        .triangles
        .iter()
        .copied()
        .filter(|t| t.iter().all(|&i| inside[i]))
        .collect();

    // Component of the landmark through surviving triangle edges.
    let n = s.vertex_count();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for t in &kept_tris {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            adj[a].push(b);
            adj[b].push(a);
        }
    }
    let mut reached = vec![false; n];
    reached[c] = true;
    let mut queue = VecDeque::from([c]);
    while let Some(v) = queue.pop_front() {
        for &u in &adj[v] {
            if !reached[u] {
                reached[u] = true;
                queue.push_back(u);
            }
        }
    }

    let mut remap = vec![usize::MAX; n];
    let mut vertices = Vec::new();
    for (i, p) in s.vertices.iter().enumerate() {
        if reached[i] {
            remap[i] = vertices.len();
            vertices.push(*p);
        }
    }
    if vertices.len() < 4 {
        return Err(SurfaceError::TooFewVertices(vertices.len()));
    }
    let triangles = kept_tris
        .into_iter()
        .filter(|t| reached[t[0]])
        .map(|t| [remap[t[0]], remap[t[1]], remap[t[2]]])
        .collect();
    let landmarks = s
        .landmarks
        .iter()
        .filter(|(_, &i)| reached[i])
        .map(|(&name, &i)| (name, remap[i]))
        .collect();
    let out = Surface::new(vertices, triangles, landmarks);
    assert!(
        !matches!(out, Err(SurfaceError::Disconnected { .. })),
        "crop produced a component disconnected from the landmark"
    );
    out
}

/// Relative slack under which two sampling distances count as tied; ties go
/// to the lower vertex index so that sampling is stable under rounding noise.
const TIE_TOLERANCE: f64 = 1e-9;

/// Greedy max-min sampling under graph geodesics, starting at `seed_vertex`.
/// Indices are returned in selection order.
pub fn farthest_point_sample<T: Real>(s: &Surface<T>, count: usize, seed_vertex: usize) -> Result<Vec<usize>, SurfaceError> {
    let n = s.vertex_count();
    if count == 0 || count > n {
        return Err(SurfaceError::SampleCount {
            requested: count,
            available: n,
        });
    }
    s.check_vertex(seed_vertex)?;
    let tol = T::lit(TIE_TOLERANCE);
    let mut selected = Vec::with_capacity(count);
    let mut chosen = vec![false; n];
    let mut min_dist = vec![T::infinity(); n];
    let mut next = seed_vertex;
    loop {
        selected.push(next);
        chosen[next] = true;
        if selected.len() == count {
            return Ok(selected);
        }
        for (m, d) in min_dist.iter_mut().zip(s.graph.shortest_paths(next)) {
            if d < *m {
                *m = d;
            }
        }
        let far = (0..n)
            .filter(|&i| !chosen[i])
            .fold(T::zero(), |acc, i| acc.max(min_dist[i]));
        next = (0..n)
            .find(|&i| !chosen[i] && min_dist[i] >= far - tol * far)
            .expect("unselected vertex remains");
    }
}

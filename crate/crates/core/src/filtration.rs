//! Clique complexes of the neighbourhood graph with Rips, distance-to-measure
//! and height filtrations, and derivatives of filtration values with respect
//! to point coordinates.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::PointCloud;

/// Largest supported simplex dimension.
pub const MAX_SIMPLEX_DIM: usize = 3;

/// Tolerance within which a pairwise distance counts as sitting on the edge
/// threshold.
pub const THRESHOLD_TOL: f64 = 1e-12;

/// A simplex stored as up to four strictly increasing vertex indices.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Simplex {
    verts: [u32; MAX_SIMPLEX_DIM + 1],
    len: u8,
}

impl Simplex {
    /// Builds a simplex from arbitrary-order distinct vertices.
    pub fn new(vertices: &[u32]) -> Result<Self> {
        if vertices.is_empty() || vertices.len() > MAX_SIMPLEX_DIM + 1 {
            return invalid(format!("simplices have 1 to 4 vertices, got {}", vertices.len()));
        }
        let mut verts = [u32::MAX; MAX_SIMPLEX_DIM + 1];
        verts[..vertices.len()].copy_from_slice(vertices);
        verts[..vertices.len()].sort_unstable();
        if verts[..vertices.len()].windows(2).any(|w| w[0] == w[1]) {
            return invalid("simplex vertices must be distinct");
        }
        Ok(Simplex {
            verts,
            len: vertices.len() as u8,
        })
    }

    /// Caller guarantees sorted, distinct input of valid length.
    pub(crate) fn from_sorted(vertices: &[u32]) -> Self {
        let mut verts = [u32::MAX; MAX_SIMPLEX_DIM + 1];
        verts[..vertices.len()].copy_from_slice(vertices);
        Simplex {
            verts,
            len: vertices.len() as u8,
        }
    }

    pub fn vertex(v: u32) -> Self {
        Self::from_sorted(&[v])
    }

    pub fn vertices(&self) -> &[u32] {
        &self.verts[..self.len as usize]
    }

    pub fn dim(&self) -> usize {
        self.len as usize - 1
    }

    /// Codimension-one faces, each obtained by dropping one vertex.
    pub fn faces(&self) -> impl Iterator<Item = Simplex> + '_ {
        let n = self.len as usize;
        (0..if n > 1 { n } else { 0 }).map(move |skip| {
            let mut v = [u32::MAX; MAX_SIMPLEX_DIM + 1];
            let mut k = 0;
            for (i, &x) in self.vertices().iter().enumerate() {
                if i != skip {
                    v[k] = x;
                    k += 1;
                }
            }
            Simplex {
                verts: v,
                len: (n - 1) as u8,
            }
        })
    }

    /// The simplex spanned by `self` and one extra vertex.
    pub fn with_vertex(&self, w: u32) -> Option<Simplex> {
        let n = self.len as usize;
        if n > MAX_SIMPLEX_DIM || self.vertices().contains(&w) {
            return None;
        }
        let mut v = [u32::MAX; MAX_SIMPLEX_DIM + 1];
        v[..n].copy_from_slice(self.vertices());
        v[n] = w;
        v[..=n].sort_unstable();
        Some(Simplex {
            verts: v,
            len: (n + 1) as u8,
        })
    }

    /// Edges of the simplex in lexicographic order.
    pub fn edges(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let v = self.vertices();
        (0..v.len()).flat_map(move |a| (a + 1..v.len()).map(move |b| (v[a], v[b])))
    }

    /// Lexicographic comparison of vertex tuples, shorter first on a common prefix.
    pub fn lex_cmp(&self, other: &Simplex) -> Ordering {
        self.vertices().cmp(other.vertices())
    }
}

impl fmt::Debug for Simplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Simplex({self})")
    }
}

/// Vertices joined by `-`, e.g. `3-7-12`.
impl fmt::Display for Simplex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s: Vec<String> = self.vertices().iter().map(u32::to_string).collect();
        f.write_str(&s.join("-"))
    }
}

impl Serialize for Simplex {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

/// Which function is placed on the clique complex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum FiltrationKind {
    /// Simplex value is its diameter.
    Rips { max_edge: f64 },
    /// Vertex value is the mean distance to the `k_neighbors` nearest other
    /// points; edge value `φ_i + φ_j + d_ij/2`; higher simplices take the
    /// maximum over their edges.
    Dtm { k_neighbors: usize, max_edge: f64 },
    /// Vertex value `⟨x, direction⟩`; simplices take the maximum over vertices.
    Height { direction: Vec<f64>, max_edge: f64 },
}

impl FiltrationKind {
    pub fn max_edge(&self) -> f64 {
        match self {
            FiltrationKind::Rips { max_edge }
            | FiltrationKind::Dtm { max_edge, .. }
            | FiltrationKind::Height { max_edge, .. } => *max_edge,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            FiltrationKind::Rips { .. } => "rips",
            FiltrationKind::Dtm { .. } => "dtm",
            FiltrationKind::Height { .. } => "height",
        }
    }

    fn validate(&self, x: &PointCloud) -> Result<()> {
        let max_edge = self.max_edge();
        if !(max_edge > 0.0) || max_edge.is_nan() {
            return invalid(format!("max_edge must be positive, got {max_edge}"));
        }
        match self {
            FiltrationKind::Rips { .. } => {}
            FiltrationKind::Dtm { k_neighbors, .. } => {
                if *k_neighbors < 1 || *k_neighbors >= x.len() {
                    return invalid(format!(
                        "k_neighbors must satisfy 1 <= k < N = {}, got {k_neighbors}",
                        x.len()
                    ));
                }
            }
            FiltrationKind::Height { direction, .. } => {
                if direction.len() != x.dim() {
                    return Err(Error::ShapeMismatch(format!(
                        "direction has {} components, cloud lives in R^{}",
                        direction.len(),
                        x.dim()
                    )));
                }
                let norm = direction.iter().map(|v| v * v).sum::<f64>().sqrt();
                if (norm - 1.0).abs() > 1e-12 {
                    return invalid(format!("height direction must be a unit vector, norm is {norm}"));
                }
            }
        }
        Ok(())
    }
}

/// `k = max(1, round(m·N))`, the neighbour count implied by a mass fraction `m`.
pub fn dtm_k_from_fraction(m: f64, n_points: usize) -> usize {
    ((m * n_points as f64).round() as usize).max(1)
}

/// Ties and threshold coincidences that make the barcode template ambiguous.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct GenericityReport {
    /// Groups of equal defining quantities: equal edge lengths (Rips), equal
    /// vertex or edge values (DTM), equal vertex heights (Height).
    pub ties: Vec<Vec<Simplex>>,
    /// Pairs whose distance lies within [`THRESHOLD_TOL`] of `max_edge`.
    pub near_threshold_edges: Vec<(u32, u32, f64)>,
}

impl GenericityReport {
    pub fn is_generic(&self) -> bool {
        self.ties.is_empty() && self.near_threshold_edges.is_empty()
    }
}

/// Simplices of the clique complex with their filtration values, sorted by
/// `(value, dimension, vertex tuple)`.
#[derive(Debug, Clone)]
pub struct FilteredComplex {
    simplices: Vec<Simplex>,
    values: Vec<f64>,
    max_dim: usize,
    kind: FiltrationKind,
    n_points: usize,
    /// Neighbour lists of the thresholded graph, sorted.
    neighbors: Vec<Vec<u32>>,
    /// DTM only: the `k` nearest other points of each vertex, nearest first.
    knn: Option<Vec<Vec<u32>>>,
    vertex_values: Vec<f64>,
}

impl FilteredComplex {
    pub fn simplices(&self) -> &[Simplex] {
        &self.simplices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.simplices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.simplices.is_empty()
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim
    }

    pub fn kind(&self) -> &FiltrationKind {
        &self.kind
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn neighbors(&self, v: u32) -> &[u32] {
        &self.neighbors[v as usize]
    }

    pub fn vertex_values(&self) -> &[f64] {
        &self.vertex_values
    }

    pub fn knn(&self) -> Option<&[Vec<u32>]> {
        self.knn.as_deref()
    }

    /// Number of simplices of each dimension `0..=max_dim`.
    pub fn counts(&self) -> Vec<usize> {
        let mut c = vec![0; self.max_dim + 1];
        for s in &self.simplices {
            c[s.dim()] += 1;
        }
        c
    }

    /// Position of every simplex in the filtration order.
    pub fn index_map(&self) -> HashMap<Simplex, usize> {
        self.simplices
            .iter()
            .enumerate()
            .map(|(i, s)| (*s, i))
            .collect()
    }

    /// Checks that faces precede cofaces and values are monotone.
    pub fn check_invariants(&self) -> Result<()> {
        let idx = self.index_map();
        for (i, s) in self.simplices.iter().enumerate() {
            for f in s.faces() {
                let j = *idx.get(&f).ok_or_else(|| {
                    Error::Invariant(format!("face {f} of {s} is missing from the complex"))
                })?;
                if j >= i {
                    return Err(Error::Invariant(format!("face {f} does not precede {s}")));
                }
                if self.values[j] > self.values[i] {
                    return Err(Error::Invariant(format!(
                        "value of face {f} exceeds value of {s}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Detects ties in the quantities that define the filtration order and
    /// edges sitting on the threshold.
    pub fn genericity(&self, x: &PointCloud) -> GenericityReport {
        let mut report = GenericityReport::default();
        let max_edge = self.kind.max_edge();
        for i in 0..x.len() {
            for j in i + 1..x.len() {
                let d = x.distance(i, j);
                if (d - max_edge).abs() <= THRESHOLD_TOL {
                    report
                        .near_threshold_edges
                        .push((i as u32, j as u32, d));
                }
            }
        }
        let mut keyed: Vec<(f64, Simplex)> = match &self.kind {
            FiltrationKind::Rips { .. } => self.edges_with(|e| x.distance(e.0 as usize, e.1 as usize)),
            FiltrationKind::Dtm { .. } => {
                let vv = &self.vertex_values;
                let mut v = self.vertex_keyed();
                v.extend(self.edges_with(|(i, j)| {
                    vv[i as usize] + vv[j as usize] + 0.5 * x.distance(i as usize, j as usize)
                }));
                v
            }
            FiltrationKind::Height { .. } => self.vertex_keyed(),
        };
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.dim().cmp(&b.1.dim())));
        let mut i = 0;
        while i < keyed.len() {
            let mut j = i + 1;
            while j < keyed.len()
                && keyed[j].0 == keyed[i].0
                && keyed[j].1.dim() == keyed[i].1.dim()
            {
                j += 1;
            }
            if j - i > 1 {
                report.ties.push(keyed[i..j].iter().map(|k| k.1).collect());
            }
            i = j;
        }
        report
    }

    fn vertex_keyed(&self) -> Vec<(f64, Simplex)> {
        self.vertex_values
            .iter()
            .enumerate()
            .map(|(v, &val)| (val, Simplex::vertex(v as u32)))
            .collect()
    }

    fn edges_with(&self, f: impl Fn((u32, u32)) -> f64) -> Vec<(f64, Simplex)> {
        let mut out = Vec::new();
        for (i, nb) in self.neighbors.iter().enumerate() {
            for &j in nb.iter().filter(|&&j| j > i as u32) {
                out.push((f((i as u32, j)), Simplex::from_sorted(&[i as u32, j])));
            }
        }
        out
    }
}

fn filtration_cmp(a: (f64, &Simplex), b: (f64, &Simplex)) -> Ordering {
    a.0.total_cmp(&b.0)
        .then(a.1.dim().cmp(&b.1.dim()))
        .then_with(|| a.1.lex_cmp(b.1))
}

/// The `k` nearest other points of `i`, nearest first, ties by index.
fn k_nearest(x: &PointCloud, i: usize, k: usize) -> Vec<u32> {
    let mut d: Vec<(f64, u32)> = (0..x.len())
        .filter(|&j| j != i)
        .map(|j| (x.distance(i, j), j as u32))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.truncate(k);
    d.into_iter().map(|(_, j)| j).collect()
}

fn dtm_vertex_value(x: &PointCloud, i: usize, knn: &[u32]) -> f64 {
    knn.iter().map(|&j| x.distance(i, j as usize)).sum::<f64>() / knn.len() as f64
}

/// Builds the clique complex of the graph `{(i, j) : d(x_i, x_j) ≤ max_edge}`
/// up to dimension `max_dim` and sorts it into the strict filtration order.
pub fn build_complex(x: &PointCloud, kind: FiltrationKind, max_dim: usize) -> Result<FilteredComplex> {
    if !(1..=MAX_SIMPLEX_DIM).contains(&max_dim) {
        return invalid(format!("max_dim must be 1, 2 or 3, got {max_dim}"));
    }
    kind.validate(x)?;
    let n = x.len();
    let max_edge = kind.max_edge();

    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        for j in i + 1..n {
            if x.distance(i, j) <= max_edge {
                neighbors[i].push(j as u32);
                neighbors[j].push(i as u32);
            }
        }
    }
    for nb in neighbors.iter_mut() {
        nb.sort_unstable();
    }

    let knn = match &kind {
        FiltrationKind::Dtm { k_neighbors, .. } => {
            Some((0..n).map(|i| k_nearest(x, i, *k_neighbors)).collect::<Vec<_>>())
        }
        _ => None,
    };
    let vertex_values: Vec<f64> = match &kind {
        FiltrationKind::Rips { .. } => vec![0.0; n],
        FiltrationKind::Dtm { .. } => {
            let knn = knn.as_ref().expect("computed above");
            (0..n).map(|i| dtm_vertex_value(x, i, &knn[i])).collect()
        }
        FiltrationKind::Height { direction, .. } => x
            .points()
            .map(|p| p.iter().zip(direction).map(|(a, b)| a * b).sum())
            .collect(),
    };

    let edge_value = |i: u32, j: u32| -> f64 {
        let d = x.distance(i as usize, j as usize);
        match &kind {
            FiltrationKind::Rips { .. } => d,
            FiltrationKind::Dtm { .. } => {
                vertex_values[i as usize] + vertex_values[j as usize] + 0.5 * d
            }
            FiltrationKind::Height { .. } => {
                vertex_values[i as usize].max(vertex_values[j as usize])
            }
        }
    };

    let mut entries: Vec<(f64, Simplex)> = Vec::new();
    for v in 0..n as u32 {
        entries.push((vertex_values[v as usize], Simplex::vertex(v)));
    }
    // Clique enumeration over higher neighbours; `value` carries the running
    // maximum of edge values, which is the simplex value for all three kinds.
    let higher: Vec<&[u32]> = neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let start = nb.partition_point(|&j| j <= i as u32);
            &nb[start..]
        })
        .collect();
    let mut stack: Vec<u32> = Vec::with_capacity(MAX_SIMPLEX_DIM + 1);
    fn extend(
        stack: &mut Vec<u32>,
        cands: &[u32],
        value: f64,
        max_dim: usize,
        higher: &[&[u32]],
        edge_value: &dyn Fn(u32, u32) -> f64,
        out: &mut Vec<(f64, Simplex)>,
    ) {
        for (pos, &w) in cands.iter().enumerate() {
            let mut v = value;
            for &u in stack.iter() {
                v = v.max(edge_value(u, w));
            }
            stack.push(w);
            out.push((v, Simplex::from_sorted(stack)));
            if stack.len() <= max_dim {
                let next: Vec<u32> = cands[pos + 1..]
                    .iter()
                    .copied()
                    .filter(|c| higher[w as usize].binary_search(c).is_ok())
                    .collect();
                if !next.is_empty() {
                    extend(stack, &next, v, max_dim, higher, edge_value, out);
                }
            }
            stack.pop();
        }
    }
    for i in 0..n as u32 {
        stack.push(i);
        extend(
            &mut stack,
            higher[i as usize],
            f64::NEG_INFINITY,
            max_dim,
            &higher,
            &edge_value,
            &mut entries,
        );
        stack.pop();
    }

    entries.sort_unstable_by(|a, b| filtration_cmp((a.0, &a.1), (b.0, &b.1)));
    let (values, simplices) = entries.into_iter().unzip();
    Ok(FilteredComplex {
        simplices,
        values,
        max_dim,
        kind,
        n_points: n,
        neighbors,
        knn,
        vertex_values,
    })
}

/// Filtration value of an arbitrary simplex of `x`, computed from scratch.
pub fn simplex_value(x: &PointCloud, kind: &FiltrationKind, sigma: &Simplex) -> Result<f64> {
    kind.validate(x)?;
    let v = sigma.vertices();
    if v.iter().any(|&i| i as usize >= x.len()) {
        return invalid(format!("simplex {sigma} refers to a missing point"));
    }
    let vertex_value = |i: u32| -> f64 {
        match kind {
            FiltrationKind::Rips { .. } => 0.0,
            FiltrationKind::Dtm { k_neighbors, .. } => {
                dtm_vertex_value(x, i as usize, &k_nearest(x, i as usize, *k_neighbors))
            }
            FiltrationKind::Height { direction, .. } => {
                x.point(i as usize).iter().zip(direction).map(|(a, b)| a * b).sum()
            }
        }
    };
    if v.len() == 1 {
        return Ok(vertex_value(v[0]));
    }
    Ok(sigma
        .edges()
        .map(|(i, j)| {
            let d = x.distance(i as usize, j as usize);
            match kind {
                FiltrationKind::Rips { .. } => d,
                FiltrationKind::Dtm { .. } => vertex_value(i) + vertex_value(j) + 0.5 * d,
                FiltrationKind::Height { .. } => vertex_value(i).max(vertex_value(j)),
            }
        })
        .fold(f64::NEG_INFINITY, f64::max))
}

/// Sparse `N×D` gradient: a list of `(point, row)` with distinct points.
#[derive(Debug, Clone, PartialEq)]
pub struct PointGradient {
    pub dim: usize,
    pub rows: Vec<(usize, Vec<f64>)>,
}

impl PointGradient {
    fn new(dim: usize) -> Self {
        PointGradient {
            dim,
            rows: Vec::new(),
        }
    }

    fn add(&mut self, point: usize, scale: f64, dir: &[f64]) {
        let row = match self.rows.iter().position(|(p, _)| *p == point) {
            Some(k) => &mut self.rows[k].1,
            None => {
                self.rows.push((point, vec![0.0; self.dim]));
                &mut self.rows.last_mut().expect("just pushed").1
            }
        };
        for (r, d) in row.iter_mut().zip(dir) {
            *r += scale * d;
        }
    }

    fn add_gradient(&mut self, other: &PointGradient, scale: f64) {
        for (p, row) in &other.rows {
            self.add(*p, scale, row);
        }
    }

    /// Row-major `N×D` dense form, matching a cloud's flattening.
    pub fn to_dense(&self, n_points: usize) -> Vec<f64> {
        let mut out = vec![0.0; n_points * self.dim];
        for (p, row) in &self.rows {
            out[p * self.dim..(p + 1) * self.dim].copy_from_slice(row);
        }
        out
    }
}

fn unit(x: &PointCloud, from: usize, to: usize) -> Vec<f64> {
    let d = x.distance(from, to);
    x.point(to)
        .iter()
        .zip(x.point(from))
        .map(|(a, b)| (a - b) / d)
        .collect()
}

/// `∂d(x_i, x_j)/∂X`.
fn distance_gradient(x: &PointCloud, i: usize, j: usize, out: &mut PointGradient, scale: f64) {
    let u = unit(x, i, j);
    out.add(j, scale, &u);
    out.add(i, -scale, &u);
}

fn dtm_vertex_gradient(x: &PointCloud, knn: &[u32], i: usize, out: &mut PointGradient, scale: f64) {
    let s = scale / knn.len() as f64;
    for &j in knn {
        distance_gradient(x, j as usize, i, out, s);
    }
}

/// First edge attaining the maximum under `value`, in lexicographic order.
fn argmax_edge(sigma: &Simplex, value: impl Fn(u32, u32) -> f64) -> (u32, u32) {
    let mut best = None;
    let mut best_v = f64::NEG_INFINITY;
    for (i, j) in sigma.edges() {
        let v = value(i, j);
        if best.is_none() || v > best_v {
            best = Some((i, j));
            best_v = v;
        }
    }
    best.expect("simplex has an edge")
}

/// First vertex attaining the maximum of `values`.
pub(crate) fn argmax_vertex<'a>(verts: impl Iterator<Item = &'a u32>, values: &[f64]) -> u32 {
    let mut best = None;
    let mut best_v = f64::NEG_INFINITY;
    for &v in verts {
        if best.is_none() || values[v as usize] > best_v {
            best = Some(v);
            best_v = values[v as usize];
        }
    }
    best.expect("at least one vertex")
}

/// `∂φ(σ)/∂X` for a simplex of `complex`, which must have been built from `x`.
///
/// Where the defining maximum is attained more than once, the first
/// candidate in lexicographic order is differentiated, which picks one
/// element of the subdifferential reproducibly.
pub fn filtration_gradient(x: &PointCloud, complex: &FilteredComplex, sigma: &Simplex) -> Result<PointGradient> {
    if x.len() != complex.n_points() {
        return Err(Error::ShapeMismatch(format!(
            "complex has {} vertices, cloud has {} points",
            complex.n_points(),
            x.len()
        )));
    }
    if sigma.vertices().iter().any(|&v| v as usize >= x.len()) {
        return invalid(format!("simplex {sigma} refers to a missing point"));
    }
    let mut g = PointGradient::new(x.dim());
    match complex.kind() {
        FiltrationKind::Rips { .. } => {
            if sigma.dim() > 0 {
                let (i, j) = argmax_edge(sigma, |i, j| x.distance(i as usize, j as usize));
                distance_gradient(x, i as usize, j as usize, &mut g, 1.0);
            }
        }
        FiltrationKind::Dtm { .. } => {
            let knn = complex.knn().expect("DTM complexes carry neighbour lists");
            let vv = complex.vertex_values();
            if sigma.dim() == 0 {
                let v = sigma.vertices()[0] as usize;
                dtm_vertex_gradient(x, &knn[v], v, &mut g, 1.0);
            } else {
                let (i, j) = argmax_edge(sigma, |i, j| {
                    vv[i as usize] + vv[j as usize] + 0.5 * x.distance(i as usize, j as usize)
                });
                let (i, j) = (i as usize, j as usize);
                dtm_vertex_gradient(x, &knn[i], i, &mut g, 1.0);
                dtm_vertex_gradient(x, &knn[j], j, &mut g, 1.0);
                distance_gradient(x, i, j, &mut g, 0.5);
            }
        }
        FiltrationKind::Height { direction, .. } => {
            let v = argmax_vertex(sigma.vertices().iter(), complex.vertex_values());
            g.add(v as usize, 1.0, direction);
        }
    }
    Ok(g)
}

/// Gradient of the largest vertex value, used when an essential cap is
/// tied to the data.
pub fn max_vertex_value_gradient(x: &PointCloud, complex: &FilteredComplex) -> Result<(f64, PointGradient)> {
    let all: Vec<u32> = (0..complex.n_points() as u32).collect();
    let v = argmax_vertex(all.iter(), complex.vertex_values());
    let g = filtration_gradient(x, complex, &Simplex::vertex(v))?;
    Ok((complex.vertex_values()[v as usize], g))
}

impl PointGradient {
    /// `self += scale · other`.
    pub fn axpy(&mut self, scale: f64, other: &PointGradient) {
        self.add_gradient(other, scale);
    }
}

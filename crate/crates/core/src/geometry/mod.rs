//! Point clouds as elements of the data manifold: the 2-Wasserstein metric,
//! local optimal-transport charts, and rigid registration.

mod assignment;
mod icp;
pub mod io;

pub use assignment::solve_assignment;
pub use icp::{icp_align, icp_discrepancy, IcpResult, RigidTransform, DEFAULT_ICP_MAX_ITERS, DEFAULT_ICP_TOL};

use std::cmp::Ordering;

use crate::error::{invalid, Error, Result};

/// An ordered list of `N` distinct points in `R^D`.
///
/// The index order fixed at construction is the canonical order used for
/// flattening, for Jacobian columns and for tangent vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    dim: usize,
    coords: Vec<f64>,
    id: Option<String>,
    segments: Option<Vec<String>>,
}

impl PointCloud {
    /// Builds a cloud from row vectors, validating shape, finiteness and
    /// distinctness.
    pub fn new(points: Vec<Vec<f64>>) -> Result<Self> {
        let dim = match points.first() {
            Some(p) => p.len(),
            None => return invalid("point cloud must contain at least one point"),
        };
        if points.iter().any(|p| p.len() != dim) {
            return invalid("all points must share the same dimension");
        }
        Self::from_flat(dim, points.into_iter().flatten().collect())
    }

    /// Builds a cloud from row-major coordinates.
    pub fn from_flat(dim: usize, coords: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return invalid("ambient dimension must be at least 1");
        }
        if coords.is_empty() || coords.len() % dim != 0 {
            return invalid(format!(
                "{} coordinates do not form points of dimension {dim}",
                coords.len()
            ));
        }
        if let Some(bad) = coords.iter().position(|c| !c.is_finite()) {
            return invalid(format!("non-finite coordinate at flat index {bad}"));
        }
        let cloud = PointCloud {
            dim,
            coords,
            id: None,
            segments: None,
        };
        if let Some((i, j)) = cloud.find_duplicate() {
            return invalid(format!("points {i} and {j} coincide"));
        }
        Ok(cloud)
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = Some(id.into());
        self
    }

    /// Attaches one segment tag per point.
    pub fn with_segments(mut self, segments: Vec<String>) -> Result<Self> {
        if segments.len() != self.len() {
            return invalid(format!(
                "{} segment tags for {} points",
                segments.len(),
                self.len()
            ));
        }
        self.segments = Some(segments);
        Ok(self)
    }

    pub fn id(&self) -> Option<&str> {
        self.id.as_deref()
    }

    pub fn segments(&self) -> Option<&[String]> {
        self.segments.as_deref()
    }

    pub fn len(&self) -> usize {
        self.coords.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.coords[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.coords.chunks_exact(self.dim)
    }

    /// Row-major coordinates, i.e. the cloud's own chart coordinates.
    pub fn flat(&self) -> &[f64] {
        &self.coords
    }

    /// A copy of this cloud with new coordinates but the same id and tags.
    pub fn with_coords(&self, coords: Vec<f64>) -> Result<Self> {
        if coords.len() != self.coords.len() {
            return Err(Error::ShapeMismatch(format!(
                "expected {} coordinates, got {}",
                self.coords.len(),
                coords.len()
            )));
        }
        let mut out = PointCloud::from_flat(self.dim, coords)?;
        out.id = self.id.clone();
        out.segments = self.segments.clone();
        Ok(out)
    }

    /// Reorders points so that output point `k` is input point `order[k]`.
    pub fn permuted(&self, order: &[usize]) -> Result<Self> {
        if !is_permutation(order, self.len()) {
            return invalid("order is not a permutation of the point indices");
        }
        let coords = order
            .iter()
            .flat_map(|&i| self.point(i).iter().copied())
            .collect();
        let segments = self
            .segments
            .as_ref()
            .map(|s| order.iter().map(|&i| s[i].clone()).collect());
        Ok(PointCloud {
            dim: self.dim,
            coords,
            id: self.id.clone(),
            segments,
        })
    }

    pub fn centroid(&self) -> Vec<f64> {
        let mut c = vec![0.0; self.dim];
        for p in self.points() {
            for (acc, x) in c.iter_mut().zip(p) {
                *acc += x;
            }
        }
        let n = self.len() as f64;
        c.iter_mut().for_each(|x| *x /= n);
        c
    }

    /// Per-axis bounds as `(min, max)`.
    pub fn bounding_box(&self) -> Vec<(f64, f64)> {
        let mut bb = vec![(f64::INFINITY, f64::NEG_INFINITY); self.dim];
        for p in self.points() {
            for (b, &x) in bb.iter_mut().zip(p) {
                b.0 = b.0.min(x);
                b.1 = b.1.max(x);
            }
        }
        bb
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        self.bounding_box()
            .iter()
            .map(|(lo, hi)| (hi - lo) * (hi - lo))
            .sum::<f64>()
            .sqrt()
    }

    /// Smallest distance between two distinct points; `+inf` for a single point.
    pub fn min_pairwise_distance(&self) -> f64 {
        let n = self.len();
        let mut best = f64::INFINITY;
        for i in 0..n {
            for j in i + 1..n {
                best = best.min(sq_dist(self.point(i), self.point(j)));
            }
        }
        best.sqrt()
    }

    pub fn distance(&self, i: usize, j: usize) -> f64 {
        sq_dist(self.point(i), self.point(j)).sqrt()
    }

    fn find_duplicate(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        order.sort_by(|&a, &b| lex_cmp(self.point(a), self.point(b)));
        order
            .windows(2)
            .find(|w| self.point(w[0]) == self.point(w[1]))
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }
}

fn lex_cmp(a: &[f64], b: &[f64]) -> Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(Ordering::Equal)
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn is_permutation(p: &[usize], n: usize) -> bool {
    if p.len() != n {
        return false;
    }
    let mut seen = vec![false; n];
    p.iter().all(|&i| i < n && !std::mem::replace(&mut seen[i], true))
}

/// A bijection between the points of two equal-size clouds together with its
/// squared-distance cost.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `permutation[i]` is the index in `Y` matched to point `i` of `X`.
    pub permutation: Vec<usize>,
    /// Sum of squared Euclidean distances over matched pairs.
    pub cost: f64,
}

fn check_compatible(x: &PointCloud, y: &PointCloud) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::ShapeMismatch(format!(
            "clouds have {} and {} points",
            x.len(),
            y.len()
        )));
    }
    if x.dim() != y.dim() {
        return Err(Error::ShapeMismatch(format!(
            "clouds live in R^{} and R^{}",
            x.dim(),
            y.dim()
        )));
    }
    Ok(())
}

/// Exact 2-Wasserstein distance between equal-size clouds, together with
/// an optimal matching.
pub fn wasserstein_distance(x: &PointCloud, y: &PointCloud) -> Result<(f64, Assignment)> {
    check_compatible(x, y)?;
    let n = x.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = sq_dist(x.point(i), y.point(j));
        }
    }
    let permutation = solve_assignment(n, &cost);
    let total: f64 = permutation
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i * n + j])
        .sum();
    Ok((
        total.sqrt(),
        Assignment {
            permutation,
            cost: total,
        },
    ))
}

/// Coordinates of a cloud in the optimal-transport chart centred at `base`.
#[derive(Debug, Clone)]
pub struct ChartCoordinates {
    /// `Y`'s points reordered to follow `base`'s canonical order, flattened.
    pub coords: Vec<f64>,
    pub assignment: Assignment,
    /// Whether `Y` lies inside the ball where the chart is an isometry.
    pub within_radius: bool,
}

/// Radius of the Wasserstein ball on which the chart at `base` is isometric:
/// one eighth of the minimal pairwise distance.
pub fn chart_radius(base: &PointCloud) -> f64 {
    base.min_pairwise_distance() / 8.0
}

/// Expresses `y` in the chart at `base`: `y`'s points reordered by the
/// optimal assignment from `base`, flattened.
///
/// Outside the isometry radius a warning is logged and the assignment-ordered
/// coordinates are still returned.
pub fn chart_coordinates(base: &PointCloud, y: &PointCloud) -> Result<ChartCoordinates> {
    let (dist, assignment) = wasserstein_distance(base, y)?;
    let delta = base.min_pairwise_distance();
    let within_radius = 2.0 * dist < delta / 4.0;
    if !within_radius {
        log::warn!(
            "cloud at Wasserstein distance {dist:.3e} is outside the chart radius {:.3e}",
            delta / 8.0
        );
    }
    let coords = assignment
        .permutation
        .iter()
        .flat_map(|&j| y.point(j).iter().copied())
        .collect();
    Ok(ChartCoordinates {
        coords,
        assignment,
        within_radius,
    })
}

/// Reassembles a cloud from chart coordinates.
pub fn from_chart(base: &PointCloud, coords: &[f64]) -> Result<PointCloud> {
    base.with_coords(coords.to_vec())
}

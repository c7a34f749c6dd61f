//! Perturbation families and the tangent vectors they induce, plus
//! finite-difference estimates of feature gradients.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::geometry::io::fmt_f64;
use crate::geometry::{chart_coordinates, icp_align, wasserstein_distance, PointCloud, DEFAULT_ICP_MAX_ITERS, DEFAULT_ICP_TOL};

pub const DEFAULT_WIGGLY_FREQUENCY: f64 = 8.0;
const MAX_REDRAWS: u64 = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum PerturbationKind {
    /// Rotation by `epsilon` radians about the centroid, in the first two coordinates.
    Rotation { epsilon: f64 },
    /// Offset `epsilon·u` with `u` normalized; `None` uses the diagonal direction.
    Translation {
        epsilon: f64,
        #[serde(default)]
        direction: Option<Vec<f64>>,
    },
    /// Scaling by `1 + epsilon` about the centroid.
    Dilation { epsilon: f64 },
    /// Scaling of the first coordinate by `1 + epsilon` about the centroid.
    StretchX { epsilon: f64 },
    /// `x₀ ← x₀ + epsilon·(x₁ − c₁)`.
    Shearing { epsilon: f64 },
    /// Coordinate-wise Gaussian noise of standard deviation `epsilon`,
    /// optionally only on points tagged `segment`.
    Noising {
        epsilon: f64,
        seed: u64,
        #[serde(default)]
        segment: Option<String>,
    },
    /// `x ← x + epsilon·sin(ν θ_x + φ)·n̂(x)` with a seeded phase `φ`.
    Wiggly { epsilon: f64, frequency: f64, seed: u64 },
    /// `x ← (1 − t)x + t·h(x)`, `h` the radial projection onto the hull boundary.
    Convex { t: f64 },
}

impl PerturbationKind {
    pub fn name(&self) -> &'static str {
        match self {
            PerturbationKind::Rotation { .. } => "rotation",
            PerturbationKind::Translation { .. } => "translation",
            PerturbationKind::Dilation { .. } => "dilation",
            PerturbationKind::StretchX { .. } => "stretch_x",
            PerturbationKind::Shearing { .. } => "shearing",
            PerturbationKind::Noising { .. } => "noising",
            PerturbationKind::Wiggly { .. } => "wiggly",
            PerturbationKind::Convex { .. } => "convex",
        }
    }

    pub fn magnitude(&self) -> f64 {
        match *self {
            PerturbationKind::Rotation { epsilon }
            | PerturbationKind::Translation { epsilon, .. }
            | PerturbationKind::Dilation { epsilon }
            | PerturbationKind::StretchX { epsilon }
            | PerturbationKind::Shearing { epsilon }
            | PerturbationKind::Noising { epsilon, .. }
            | PerturbationKind::Wiggly { epsilon, .. } => epsilon,
            PerturbationKind::Convex { t } => t,
        }
    }

    /// Same family with magnitude multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut k = self.clone();
        match &mut k {
            PerturbationKind::Rotation { epsilon }
            | PerturbationKind::Translation { epsilon, .. }
            | PerturbationKind::Dilation { epsilon }
            | PerturbationKind::StretchX { epsilon }
            | PerturbationKind::Shearing { epsilon }
            | PerturbationKind::Noising { epsilon, .. }
            | PerturbationKind::Wiggly { epsilon, .. } => *epsilon *= s,
            PerturbationKind::Convex { t } => *t *= s,
        }
        k
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.magnitude();
        if !m.is_finite() {
            return invalid(format!("{} magnitude must be finite", self.name()));
        }
        match self {
            PerturbationKind::Convex { t } if !(0.0..=1.0).contains(t) => {
                invalid(format!("convex interpolation {t} outside [0, 1]"))
            }
            PerturbationKind::Wiggly { frequency, .. } if !frequency.is_finite() => {
                invalid("wiggly frequency must be finite")
            }
            PerturbationKind::Translation { direction: Some(u), .. }
                if u.iter().any(|v| !v.is_finite()) || u.iter().all(|&v| v == 0.0) =>
            {
                invalid("translation direction must be finite and nonzero")
            }
            _ => Ok(()),
        }
    }
}

/// The eight families at the default magnitudes for `x`: `1e-3` of the
/// bounding-box diagonal for displacements, `1e-3` radians for rotation and
/// `t = 1e-3` for the convex interpolation.
pub fn default_kinds(x: &PointCloud, seed: u64) -> Vec<PerturbationKind> {
    let eps = 1e-3 * x.bounding_box_diagonal();
    vec![
        PerturbationKind::Rotation { epsilon: 1e-3 },
        PerturbationKind::Translation { epsilon: eps, direction: None },
        PerturbationKind::Dilation { epsilon: 1e-3 },
        PerturbationKind::StretchX { epsilon: 1e-3 },
        PerturbationKind::Shearing { epsilon: 1e-3 },
        PerturbationKind::Noising { epsilon: eps, seed, segment: None },
        PerturbationKind::Wiggly { epsilon: eps, frequency: DEFAULT_WIGGLY_FREQUENCY, seed },
        PerturbationKind::Convex { t: 1e-3 },
    ]
}

fn require_2d(x: &PointCloud, what: &str) -> Result<()> {
    if x.dim() != 2 {
        return invalid(format!("{what} perturbation needs planar clouds, got D = {}", x.dim()));
    }
    Ok(())
}

fn map_points(x: &PointCloud, mut f: impl FnMut(usize, &[f64]) -> Vec<f64>) -> Result<PointCloud> {
    let coords = x.points().enumerate().flat_map(|(i, p)| f(i, p)).collect();
    x.with_coords(coords)
}

pub fn apply_perturbation(x: &PointCloud, kind: &PerturbationKind) -> Result<PointCloud> {
    kind.validate()?;
    apply_unchecked(x, kind)
}

/// Applies `kind` without the range check, so that negated magnitudes
/// (used by the central scheme) are accepted.
fn apply_unchecked(x: &PointCloud, kind: &PerturbationKind) -> Result<PointCloud> {
    if kind.magnitude() == 0.0 {
        return Ok(x.clone());
    }
    let c = x.centroid();
    let d = x.dim();
    match kind {
        PerturbationKind::Rotation { epsilon } => {
            if d < 2 {
                return invalid("rotation needs D >= 2");
            }
            let (s, co) = epsilon.sin_cos();
            map_points(x, |_, p| {
                let mut q = p.to_vec();
                let (a, b) = (p[0] - c[0], p[1] - c[1]);
                q[0] = c[0] + co * a - s * b;
                q[1] = c[1] + s * a + co * b;
                q
            })
        }
        PerturbationKind::Translation { epsilon, direction } => {
            let u = match direction {
                Some(u) if u.len() != d => {
                    return Err(Error::ShapeMismatch(format!(
                        "direction has {} entries for D = {d}",
                        u.len()
                    )))
                }
                Some(u) => u.clone(),
                None => vec![1.0; d],
            };
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            map_points(x, |_, p| p.iter().zip(&u).map(|(a, b)| a + epsilon * b / norm).collect())
        }
        PerturbationKind::Dilation { epsilon } => map_points(x, |_, p| {
            p.iter().zip(&c).map(|(a, m)| m + (1.0 + epsilon) * (a - m)).collect()
        }),
        PerturbationKind::StretchX { epsilon } => map_points(x, |_, p| {
            let mut q = p.to_vec();
            q[0] = c[0] + (1.0 + epsilon) * (p[0] - c[0]);
            q
        }),
        PerturbationKind::Shearing { epsilon } => {
            if d < 2 {
                return invalid("shearing needs D >= 2");
            }
            map_points(x, |_, p| {
                let mut q = p.to_vec();
                q[0] = p[0] + epsilon * (p[1] - c[1]);
                q
            })
        }
        PerturbationKind::Noising { epsilon, seed, segment } => noising(x, *epsilon, *seed, segment.as_deref()),
        PerturbationKind::Wiggly { epsilon, frequency, seed } => {
            require_2d(x, "wiggly")?;
            let normals = estimate_normals(x)?;
            let phase = ChaCha8Rng::seed_from_u64(*seed).random::<f64>() * 2.0 * PI;
            map_points(x, |i, p| {
                let theta = (p[1] - c[1]).atan2(p[0] - c[0]);
                let amp = epsilon * (frequency * theta + phase).sin();
                vec![p[0] + amp * normals[i][0], p[1] + amp * normals[i][1]]
            })
        }
        PerturbationKind::Convex { t } => {
            require_2d(x, "convex")?;
            let targets = hull_projection(x)?;
            map_points(x, |i, p| {
                vec![
                    (1.0 - t) * p[0] + t * targets[i][0],
                    (1.0 - t) * p[1] + t * targets[i][1],
                ]
            })
        }
    }
}

fn noising(x: &PointCloud, epsilon: f64, seed: u64, segment: Option<&str>) -> Result<PointCloud> {
    let mask: Vec<bool> = match segment {
        None => vec![true; x.len()],
        Some(tag) => {
            let segs = x
                .segments()
                .ok_or_else(|| Error::InvalidInput(format!("segment filter '{tag}' on a cloud without segment tags")))?;
            segs.iter().map(|s| s == tag).collect()
        }
    };
    for attempt in 0..MAX_REDRAWS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt));
        let coords: Vec<f64> = x
            .points()
            .zip(&mask)
            .flat_map(|(p, &on)| {
                p.iter()
                    .map(|v| {
                        let z: f64 = rng.sample(StandardNormal);
                        if on {
                            v + epsilon * z
                        } else {
                            *v
                        }
                    })
                    .collect::<Vec<_>>()
            })
            .collect();
        let y = x.with_coords(coords)?;
        if epsilon == 0.0 || y.min_pairwise_distance() > 0.0 {
            return Ok(y);
        }
        log::debug!("noise draw {attempt} produced coincident points, redrawing");
    }
    Err(Error::Numerical(format!(
        "noising produced coincident points in {MAX_REDRAWS} draws"
    )))
}

/// Outward unit normals: perpendicular to the segment joining each point's
/// two nearest neighbours, oriented away from the centroid.
pub fn estimate_normals(x: &PointCloud) -> Result<Vec<[f64; 2]>> {
    require_2d(x, "normal estimation")?;
    if x.len() < 3 {
        return invalid("normal estimation needs at least 3 points");
    }
    let c = x.centroid();
    (0..x.len())
        .map(|i| {
            let mut near = [(f64::INFINITY, 0usize); 2];
            for j in (0..x.len()).filter(|&j| j != i) {
                let dd = x.distance(i, j);
                if dd < near[0].0 {
                    near[1] = near[0];
                    near[0] = (dd, j);
                } else if dd < near[1].0 {
                    near[1] = (dd, j);
                }
            }
            let (a, b) = (x.point(near[0].1), x.point(near[1].1));
            let mut n = [-(b[1] - a[1]), b[0] - a[0]];
            let len = n[0].hypot(n[1]);
            if len == 0.0 {
                return Err(Error::Numerical(format!("point {i} has coincident neighbours")));
            }
            n = [n[0] / len, n[1] / len];
            let p = x.point(i);
            if n[0] * (p[0] - c[0]) + n[1] * (p[1] - c[1]) < 0.0 {
                n = [-n[0], -n[1]];
            }
            Ok(n)
        })
        .collect()
}

fn cross(o: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull vertices (monotone chain).
pub fn convex_hull(x: &PointCloud) -> Result<Vec<[f64; 2]>> {
    require_2d(x, "convex hull")?;
    let mut pts: Vec<[f64; 2]> = x.points().map(|p| [p[0], p[1]]).collect();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return Ok(pts);
    }
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for pass in 0..2 {
        let start = hull.len();
        let iter: Box<dyn Iterator<Item = &[f64; 2]>> = if pass == 0 {
            Box::new(pts.iter())
        } else {
            Box::new(pts.iter().rev())
        };
        for &p in iter {
            while hull.len() >= start + 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
                hull.pop();
            }
            hull.push(p);
        }
        hull.pop();
    }
    Ok(hull)
}

/// Radial projection of every point onto the hull boundary, from the centroid.
pub fn hull_projection(x: &PointCloud) -> Result<Vec<[f64; 2]>> {
    let hull = convex_hull(x)?;
    let c = x.centroid();
    let c = [c[0], c[1]];
    let scale = x.bounding_box_diagonal();
    if hull.len() < 3 {
        return invalid("convex hull is degenerate");
    }
    let edges: Vec<([f64; 2], [f64; 2])> = (0..hull.len())
        .map(|i| {
            let (a, b) = (hull[i], hull[(i + 1) % hull.len()]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            (a, [(b[1] - a[1]) / len, -(b[0] - a[0]) / len])
        })
        .collect();
    for (a, n) in &edges {
        if n[0] * (a[0] - c[0]) + n[1] * (a[1] - c[1]) <= 1e-12 * scale {
            return invalid("centroid is not in the interior of the convex hull");
        }
    }
    Ok(x
        .points()
        .map(|p| {
            let r = [p[0] - c[0], p[1] - c[1]];
            if r[0] == 0.0 && r[1] == 0.0 {
                return [p[0], p[1]];
            }
            let s = edges
                .iter()
                .filter_map(|(a, n)| {
                    let nr = n[0] * r[0] + n[1] * r[1];
                    (nr > 0.0).then(|| (n[0] * (a[0] - c[0]) + n[1] * (a[1] - c[1])) / nr)
                })
                .fold(f64::INFINITY, f64::min);
            [c[0] + s * r[0], c[1] + s * r[1]]
        })
        .collect())
}

/// One displacement per point of `base`, flattened in its canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample {
    pub base: PointCloud,
    pub vectors: Vec<f64>,
}

impl FieldSample {
    pub fn new(base: PointCloud, vectors: Vec<f64>) -> Result<Self> {
        if vectors.len() != base.flat().len() {
            return Err(Error::ShapeMismatch(format!(
                "{} field entries for a cloud with {} coordinates",
                vectors.len(),
                base.flat().len()
            )));
        }
        Ok(FieldSample { base, vectors })
    }

    pub fn norm(&self) -> f64 {
        self.vectors.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scaled to unit norm; the zero field is returned unchanged.
    pub fn normalized(mut self) -> Self {
        let n = self.norm();
        if n > 0.0 {
            self.vectors.iter_mut().for_each(|v| *v /= n);
        }
        self
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        let d = self.base.dim();
        &self.vectors[i * d..(i + 1) * d]
    }

    /// CSV rows `index,v0,v1,...`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let d = self.base.dim();
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["index".to_string()];
        header.extend((0..d).map(|k| format!("v{k}")));
        wtr.write_record(&header)?;
        for i in 0..self.base.len() {
            let mut row = vec![i.to_string()];
            row.extend(self.vector(i).iter().map(|&v| fmt_f64(v)));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// How a perturbation is turned into a tangent vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldScheme {
    /// `ξ(π_ε X) − ξ(X)`.
    Forward,
    /// `(ξ(π_ε X) − ξ(π_{−ε} X)) / 2`.
    #[default]
    Central,
}

fn chart_difference(x: &PointCloud, y: &PointCloud) -> Result<Vec<f64>> {
    let coords = chart_coordinates(x, y)?.coords;
    Ok(coords.iter().zip(x.flat()).map(|(a, b)| a - b).collect())
}

pub fn perturbation_field(x: &PointCloud, kind: &PerturbationKind, normalize: bool) -> Result<FieldSample> {
    perturbation_field_with(x, kind, FieldScheme::Central, normalize)
}

pub fn perturbation_field_with(x: &PointCloud, kind: &PerturbationKind, scheme: FieldScheme, normalize: bool) -> Result<FieldSample> {
    kind.validate()?;
    let vectors = match scheme {
        FieldScheme::Forward => chart_difference(x, &apply_unchecked(x, kind)?)?,
        FieldScheme::Central => {
            let plus = chart_difference(x, &apply_unchecked(x, kind)?)?;
            let minus = chart_difference(x, &apply_unchecked(x, &kind.scaled(-1.0))?)?;
            plus.iter().zip(&minus).map(|(a, b)| 0.5 * (a - b)).collect()
        }
    };
    let f = FieldSample::new(x.clone(), vectors)?;
    Ok(if normalize { f.normalized() } else { f })
}

/// Writes the perturbed dataset plus a `perturbation.json` sidecar.
pub fn write_perturbed_dataset(dataset: &Dataset, kind: &PerturbationKind, dir: &Path) -> Result<Dataset> {
    let clouds = dataset
        .clouds
        .iter()
        .map(|x| apply_perturbation(x, kind))
        .collect::<Result<Vec<_>>>()?;
    let out = Dataset::new(clouds, dataset.labels.clone(), dataset.params.clone())?;
    out.save_dir(dir, None)?;
    let side = serde_json::json!({ "kind": kind.name(), "parameters": kind });
    std::fs::write(dir.join("perturbation.json"), serde_json::to_string_pretty(&side)?)?;
    Ok(out)
}

/// Selection rule for the finite-difference gradient estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GradientMode {
    /// Nearest cloud with a different label.
    #[default]
    Binary,
    /// Cloud maximizing `|ρ(Y) − ρ(X)| / d(X, Y)`.
    Continuous,
}

/// Distance used to pick the partner cloud.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alignment {
    /// Plain Wasserstein distance, no registration.
    None,
    /// Wasserstein distance after rigid ICP registration.
    Icp,
}

fn candidate(dataset: &Dataset, index: usize, align: Alignment) -> impl Fn(usize) -> Result<(f64, PointCloud)> + Sync + '_ {
    move |j| {
        let x = &dataset.clouds[index];
        let y = &dataset.clouds[j];
        let y = match align {
            Alignment::None => y.clone(),
            Alignment::Icp => icp_align(x, y, DEFAULT_ICP_MAX_ITERS, DEFAULT_ICP_TOL)?.transform.apply(y)?,
        };
        Ok((wasserstein_distance(x, &y)?.0, y))
    }
}

/// Gradient estimate of the dataset's label at cloud `index`.
pub fn gradient_field(dataset: &Dataset, index: usize, mode: GradientMode, align: Alignment) -> Result<FieldSample> {
    let labels = dataset
        .labels
        .as_ref()
        .ok_or_else(|| Error::InvalidInput("dataset has no labels".into()))?;
    if index >= dataset.len() {
        return invalid(format!("cloud index {index} out of range"));
    }
    let x = &dataset.clouds[index];
    let rho = labels[index];
    let others: Vec<usize> = (0..dataset.len())
        .filter(|&j| j != index && labels[j] != rho)
        .collect();
    if others.is_empty() {
        return invalid(format!("no cloud with a label other than {rho}"));
    }
    let eval = candidate(dataset, index, align);
    let scored = others
        .par_iter()
        .map(|&j| eval(j).map(|(d, y)| (j, d, y)))
        .collect::<Result<Vec<_>>>()?;
    let score = |j: usize, d: f64| match mode {
        GradientMode::Binary => -d,
        GradientMode::Continuous if d == 0.0 => f64::INFINITY,
        GradientMode::Continuous => (labels[j] - rho).abs() / d,
    };
    // ties go to the lower index
    let (_, _, partner) = scored
        .into_iter()
        .reduce(|best, cur| if score(cur.0, cur.1) > score(best.0, best.1) { cur } else { best })
        .expect("nonempty");
    FieldSample::new(x.clone(), chart_difference(x, &partner)?)
}

pub fn gradient_field_fdm(dataset: &Dataset, index: usize) -> Result<FieldSample> {
    gradient_field(dataset, index, GradientMode::Binary, Alignment::None)
}

pub fn gradient_field_icp(dataset: &Dataset, index: usize) -> Result<FieldSample> {
    gradient_field(dataset, index, GradientMode::Binary, Alignment::Icp)
}

//! Synthetic point-cloud generators and dataset ingestion.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::io::{read_cloud, write_cloud};
use crate::geometry::PointCloud;

const MAX_REDRAWS: usize = 100;

/// Coordinate-wise Gaussian noise added on top of a generator's output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub std: f64,
    pub seed: u64,
}

/// A collection of clouds sharing `N` and `D`, optionally labelled.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub clouds: Vec<PointCloud>,
    pub labels: Option<Vec<f64>>,
    /// Generator metadata, written to `manifest.json`.
    pub params: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    generator: String,
    params: serde_json::Value,
    seed: Option<u64>,
    files: Vec<String>,
    labels: Option<Vec<f64>>,
}

impl Dataset {
    pub fn new(
        clouds: Vec<PointCloud>,
        labels: Option<Vec<f64>>,
        params: serde_json::Value,
    ) -> Result<Self> {
        let first = match clouds.first() {
            Some(c) => c,
            None => return invalid("dataset must contain at least one cloud"),
        };
        let (n, d) = (first.len(), first.dim());
        if let Some(bad) = clouds.iter().position(|c| c.len() != n || c.dim() != d) {
            return Err(Error::ShapeMismatch(format!(
                "cloud {bad} has {} points in R^{}, expected {n} in R^{d}",
                clouds[bad].len(),
                clouds[bad].dim()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != clouds.len() {
                return Err(Error::ShapeMismatch(format!(
                    "{} labels for {} clouds",
                    l.len(),
                    clouds.len()
                )));
            }
        }
        Ok(Dataset {
            clouds,
            labels,
            params,
        })
    }

    pub fn len(&self) -> usize {
        self.clouds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clouds.is_empty()
    }

    /// Identifier of cloud `i`, falling back to its index.
    pub fn cloud_id(&self, i: usize) -> String {
        self.clouds[i]
            .id()
            .map(str::to_string)
            .unwrap_or_else(|| format!("cloud_{i:04}"))
    }

    /// Writes one CSV per cloud plus `manifest.json`.
    pub fn save_dir(&self, dir: &Path, seed: Option<u64>) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut files = Vec::with_capacity(self.len());
        for (i, c) in self.clouds.iter().enumerate() {
            let name = format!("{}.csv", self.cloud_id(i));
            write_cloud(c, &dir.join(&name))?;
            files.push(name);
        }
        let generator = self
            .params
            .get("generator")
            .and_then(|g| g.as_str())
            .unwrap_or("external")
            .to_string();
        let manifest = Manifest {
            generator,
            params: self.params.clone(),
            seed,
            files,
            labels: self.labels.clone(),
        };
        fs::write(
            dir.join("manifest.json"),
            serde_json::to_string_pretty(&manifest)?,
        )?;
        Ok(())
    }

    /// Loads a directory written by [`Dataset::save_dir`], or any directory of
    /// `.csv`/`.json` clouds (sorted by file name, no labels).
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join("manifest.json");
        if manifest_path.exists() {
            let m: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)?;
            let clouds = m
                .files
                .iter()
                .map(|f| read_cloud(&dir.join(f)))
                .collect::<Result<Vec<_>>>()?;
            return Dataset::new(clouds, m.labels, m.params);
        }
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                matches!(
                    p.extension().and_then(|e| e.to_str()),
                    Some("csv") | Some("json")
                )
            })
            .collect();
        paths.sort();
        let clouds = paths
            .iter()
            .map(|p| read_cloud(p))
            .collect::<Result<Vec<_>>>()?;
        Dataset::new(
            clouds,
            None,
            serde_json::json!({ "generator": "external", "source": dir.display().to_string() }),
        )
    }
}

fn add_jitter(coords: &mut [f64], jitter: &Jitter, rng: &mut ChaCha8Rng) -> Result<()> {
    if !(jitter.std >= 0.0 && jitter.std.is_finite()) {
        return invalid("jitter must be a finite nonnegative standard deviation");
    }
    if jitter.std > 0.0 {
        let normal = Normal::new(0.0, jitter.std).map_err(|e| Error::InvalidInput(e.to_string()))?;
        coords.iter_mut().for_each(|c| *c += normal.sample(rng));
    }
    Ok(())
}

/// Builds a cloud from `draw`, redrawing while the points collide.
fn draw_distinct(dim: usize, mut draw: impl FnMut() -> Result<Vec<f64>>) -> Result<PointCloud> {
    let mut last = None;
    for _ in 0..MAX_REDRAWS {
        match PointCloud::from_flat(dim, draw()?) {
            Ok(c) => return Ok(c),
            Err(e) => last = Some(e),
        }
    }
    Err(last.unwrap_or_else(|| Error::InvalidInput("could not draw distinct points".into())))
}

/// Translates the bounding-box corner to the origin and divides by the
/// largest extent, so the cloud fits `[0,1]^D` with its shape preserved.
fn fit_unit_box(coords: &mut [f64], dim: usize) {
    let n = coords.len() / dim;
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for i in 0..n {
        for k in 0..dim {
            lo[k] = lo[k].min(coords[i * dim + k]);
            hi[k] = hi[k].max(coords[i * dim + k]);
        }
    }
    let extent = (0..dim).map(|k| hi[k] - lo[k]).fold(0.0, f64::max);
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    for i in 0..n {
        for k in 0..dim {
            let c = &mut coords[i * dim + k];
            *c = ((*c - lo[k]) * scale).clamp(0.0, 1.0);
        }
    }
}

/// Radial frequency pattern `ρ(θ) = 1 + a cos(wθ)` sampled at
/// `θ_k = 2πk/N`, `k = 1..N`, scaled isotropically into the unit square.
///
/// Sampling is even in `θ`, not in arclength. Optional jitter is applied
/// after scaling.
pub fn gen_rfp(a: f64, w: u32, n_points: usize, jitter: Option<Jitter>) -> Result<PointCloud> {
    if !(a > 0.0 && a < 1.0) {
        return invalid(format!("RFP amplitude must lie in (0, 1), got {a}"));
    }
    if w < 1 {
        return invalid("RFP frequency must be at least 1");
    }
    if n_points < 3 {
        return invalid("RFP needs at least 3 points");
    }
    let mut base = rfp_curve(a, w, n_points);
    fit_unit_box(&mut base, 2);
    let id = format!("rfp_w{w:02}_a{a:.4}");
    match jitter {
        None => Ok(PointCloud::from_flat(2, base)?.with_id(id)),
        Some(j) => {
            let mut rng = ChaCha8Rng::seed_from_u64(j.seed);
            let cloud = draw_distinct(2, || {
                let mut c = base.clone();
                add_jitter(&mut c, &j, &mut rng)?;
                Ok(c)
            })?;
            Ok(cloud.with_id(id))
        }
    }
}

/// Unscaled RFP samples, row-major.
pub fn rfp_curve(a: f64, w: u32, n_points: usize) -> Vec<f64> {
    (1..=n_points)
        .flat_map(|k| {
            let theta = 2.0 * PI * k as f64 / n_points as f64;
            let r = 1.0 + a * (w as f64 * theta).cos();
            [r * theta.cos(), r * theta.sin()]
        })
        .collect()
}

/// The 80-cloud RFP set: `w ∈ {3..10}` × 10 values of `a` evenly spaced on
/// `[0.5, 0.9]`.
pub fn rfp_dataset(n_points: usize, jitter: Option<Jitter>) -> Result<Dataset> {
    let mut clouds = Vec::with_capacity(80);
    let amps: Vec<f64> = (0..10).map(|i| 0.5 + 0.4 * i as f64 / 9.0).collect();
    for w in 3..=10u32 {
        for (ai, &a) in amps.iter().enumerate() {
            let j = jitter.map(|j| Jitter {
                std: j.std,
                seed: j.seed.wrapping_add(100 * w as u64 + ai as u64),
            });
            clouds.push(gen_rfp(a, w, n_points, j)?);
        }
    }
    Dataset::new(
        clouds,
        None,
        serde_json::json!({
            "generator": "rfp",
            "n_points": n_points,
            "w": (3..=10).collect::<Vec<u32>>(),
            "a": amps,
            "jitter": jitter,
        }),
    )
}

/// Points `(w/2 cos t, h/2 sin t)` on an axis-aligned ellipse centred at the
/// origin. With a seed, `t` is drawn uniformly on `[0, 2π)`; without one, `t`
/// is evenly spaced starting at 0.
pub fn gen_ellipse(width: f64, height: f64, n_points: usize, seed: Option<u64>) -> Result<PointCloud> {
    if !(width > 0.0 && height > 0.0 && width.is_finite() && height.is_finite()) {
        return invalid("ellipse width and height must be positive");
    }
    if n_points == 0 {
        return invalid("ellipse needs at least one point");
    }
    let at = |t: f64| [0.5 * width * t.cos(), 0.5 * height * t.sin()];
    let cloud = match seed {
        None => PointCloud::from_flat(
            2,
            (0..n_points)
                .flat_map(|k| at(2.0 * PI * k as f64 / n_points as f64))
                .collect(),
        )?,
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let u = Uniform::new(0.0, 2.0 * PI).map_err(|e| Error::InvalidInput(e.to_string()))?;
            draw_distinct(2, || Ok((0..n_points).flat_map(|_| at(u.sample(&mut rng))).collect()))?
        }
    };
    Ok(cloud.with_id(format!("ellipse_w{width:.4}_h{height:.4}")))
}

/// `n_points` evenly spaced on the unit circle, plus Gaussian noise of
/// standard deviation `jitter` per coordinate.
pub fn gen_circle(n_points: usize, jitter: f64, seed: u64) -> Result<PointCloud> {
    if n_points < 3 {
        return invalid("circle needs at least 3 points");
    }
    let base: Vec<f64> = (0..n_points)
        .flat_map(|k| {
            let t = 2.0 * PI * k as f64 / n_points as f64;
            [t.cos(), t.sin()]
        })
        .collect();
    let j = Jitter { std: jitter, seed };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    draw_distinct(2, || {
        let mut c = base.clone();
        add_jitter(&mut c, &j, &mut rng)?;
        Ok(c)
    })
}

/// Binary-labelled set of jittered circles: label 0 has radius 1, label 1
/// radius `dilation`. Clouds alternate between the classes.
pub fn gen_circle_classes(
    n_clouds: usize,
    n_points: usize,
    dilation: f64,
    jitter: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_clouds < 2 {
        return invalid("need at least one cloud per class");
    }
    if !(dilation > 0.0) {
        return invalid("dilation must be positive");
    }
    let mut clouds = Vec::with_capacity(n_clouds);
    let mut labels = Vec::with_capacity(n_clouds);
    for i in 0..n_clouds {
        let label = (i % 2) as f64;
        let c = gen_circle(n_points, jitter, seed.wrapping_add(i as u64))?;
        let r = if label == 0.0 { 1.0 } else { dilation };
        let c = c
            .with_coords(c.flat().iter().map(|v| v * r).collect())?
            .with_id(format!("circle_{i:03}_class{label}"));
        clouds.push(c);
        labels.push(label);
    }
    Dataset::new(
        clouds,
        Some(labels),
        serde_json::json!({
            "generator": "circle_classes",
            "n_points": n_points,
            "dilation": dilation,
            "jitter": jitter,
        }),
    )
}

/// `steps × steps` ellipses with width and height evenly spaced on
/// `[min, max]`, each sampled at evenly spaced `t` plus optional jitter
/// (seeded per cell as `seed + cell index`). Labels are `min{w, h}`.
pub fn ellipse_grid(steps: usize, min: f64, max: f64, n_points: usize, jitter: Option<Jitter>) -> Result<Dataset> {
    if steps == 0 {
        return invalid("ellipse grid needs at least one step");
    }
    if !(min > 0.0 && max >= min && max.is_finite()) {
        return invalid(format!("ellipse grid range must satisfy 0 < min <= max, got [{min}, {max}]"));
    }
    let axis: Vec<f64> = (0..steps)
        .map(|i| if steps == 1 { min } else { min + (max - min) * i as f64 / (steps - 1) as f64 })
        .collect();
    let mut clouds = Vec::with_capacity(steps * steps);
    let mut labels = Vec::with_capacity(steps * steps);
    for (wi, &w) in axis.iter().enumerate() {
        for (hi, &h) in axis.iter().enumerate() {
            let base = gen_ellipse(w, h, n_points, None)?;
            let id = format!("ellipse_{wi:02}_{hi:02}");
            let cloud = match jitter {
                None => base,
                Some(j) => {
                    let j = Jitter { std: j.std, seed: j.seed.wrapping_add((wi * steps + hi) as u64) };
                    let mut rng = ChaCha8Rng::seed_from_u64(j.seed);
                    draw_distinct(2, || {
                        let mut c = base.flat().to_vec();
                        add_jitter(&mut c, &j, &mut rng)?;
                        Ok(c)
                    })?
                }
            };
            clouds.push(cloud.with_id(id));
            labels.push(w.min(h));
        }
    }
    Dataset::new(
        clouds,
        Some(labels),
        serde_json::json!({
            "generator": "ellipse_grid",
            "steps": steps,
            "range": [min, max],
            "n_points": n_points,
            "jitter": jitter,
        }),
    )
}

/// Uniform subsample without replacement, in random order.
pub fn subsample(x: &PointCloud, n: usize, seed: u64) -> Result<PointCloud> {
    if n > x.len() {
        return invalid(format!("cannot draw {n} points from a cloud of {}", x.len()));
    }
    if n == 0 {
        return invalid("subsample size must be at least 1");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picked = index::sample(&mut rng, x.len(), n).into_vec();
    let coords = picked.iter().flat_map(|&i| x.point(i).iter().copied()).collect();
    let mut out = PointCloud::from_flat(x.dim(), coords)?;
    if let Some(id) = x.id() {
        out = out.with_id(id);
    }
    if let Some(seg) = x.segments() {
        out = out.with_segments(picked.iter().map(|&i| seg[i].clone()).collect())?;
    }
    Ok(out)
}

/// Maps the cloud into `[0,1]^D` by one uniform scale and a translation.
///
/// The scale is the reciprocal of the largest bounding-box extent, applied
/// about the origin; the translation is the smallest shift that brings the
/// scaled box inside the cube, so clouds already spanning the cube are
/// fixed points.
pub fn normalize_unit_cube(x: &PointCloud) -> Result<PointCloud> {
    let bb = x.bounding_box();
    let extent = bb.iter().map(|(lo, hi)| hi - lo).fold(0.0, f64::max);
    let scale = if extent > 0.0 { 1.0 / extent } else { 1.0 };
    let shift: Vec<f64> = bb
        .iter()
        .map(|(lo, hi)| {
            let (a, b) = (-lo * scale, 1.0 - hi * scale);
            0.0f64.clamp(a.min(b), a.max(b))
        })
        .collect();
    let d = x.dim();
    let coords = x
        .flat()
        .iter()
        .enumerate()
        .map(|(i, &v)| (v * scale + shift[i % d]).clamp(0.0, 1.0))
        .collect();
    x.with_coords(coords)
}

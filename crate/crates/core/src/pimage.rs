//! Persistence images: birth–lifespan coordinates, Gaussian kernels,
//! weighting functions, grid quadrature and derivatives with respect to the
//! diagram coordinates.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::geometry::io::fmt_f64;
use crate::persistence::Diagram;

/// Kernel evaluations farther than this many standard deviations from a
/// grid node are dropped.
pub const KERNEL_CUTOFF: f64 = 8.0;

/// Weighting `α(b, l)` applied to each diagram point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum Weighting {
    /// `l / l_max`.
    Linear { l_max: f64 },
    /// Beta density in `κl`, with shapes from the mean `k_mean` and variance `s2`.
    Beta { k_mean: f64, s2: f64, kappa: f64 },
}

impl Weighting {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Weighting::Linear { l_max } => {
                if !(l_max > 0.0 && l_max.is_finite()) {
                    return invalid(format!("l_max must be positive, got {l_max}"));
                }
            }
            Weighting::Beta { k_mean, s2, kappa } => {
                if !(k_mean > 0.0 && k_mean < 1.0) {
                    return invalid(format!("beta mean must lie in (0, 1), got {k_mean}"));
                }
                if !(s2 > 0.0 && s2 < k_mean * (1.0 - k_mean)) {
                    return invalid(format!(
                        "beta variance must lie in (0, k(1-k)) = (0, {}), got {s2}",
                        k_mean * (1.0 - k_mean)
                    ));
                }
                if !(kappa > 0.0 && kappa.is_finite()) {
                    return invalid(format!("kappa must be positive, got {kappa}"));
                }
            }
        }
        Ok(())
    }

    /// Shape parameters `(α, β)` of a beta weighting.
    pub fn beta_shapes(&self) -> Option<(f64, f64)> {
        match *self {
            Weighting::Beta { k_mean, s2, .. } => {
                let common = k_mean * (1.0 - k_mean) / s2 - 1.0;
                Some((k_mean * common, (1.0 - k_mean) * common))
            }
            Weighting::Linear { .. } => None,
        }
    }

    fn beta_log_norm(a: f64, b: f64) -> f64 {
        ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
    }

    /// `α(b, l)`; zero for `l ≤ 0` and outside the beta support.
    pub fn value(&self, _b: f64, l: f64) -> f64 {
        if l <= 0.0 {
            return 0.0;
        }
        match *self {
            Weighting::Linear { l_max } => l / l_max,
            Weighting::Beta { kappa, .. } => {
                let (a, b) = self.beta_shapes().expect("beta");
                let u = kappa * l;
                if u >= 1.0 {
                    return 0.0;
                }
                (Self::beta_log_norm(a, b) + (a - 1.0) * u.ln() + (b - 1.0) * (-u).ln_1p()).exp()
            }
        }
    }

    /// `∂α/∂l`; zero wherever [`Weighting::value`] is clamped to zero.
    pub fn dl(&self, _b: f64, l: f64) -> f64 {
        if l <= 0.0 {
            return 0.0;
        }
        match *self {
            Weighting::Linear { l_max } => 1.0 / l_max,
            Weighting::Beta { kappa, .. } => {
                let (a, b) = self.beta_shapes().expect("beta");
                let u = kappa * l;
                if u >= 1.0 {
                    return 0.0;
                }
                let pdf = self.value(0.0, l);
                kappa * pdf * ((a - 1.0) / u - (b - 1.0) / (1.0 - u))
            }
        }
    }
}

/// Where each pixel samples the persistence surface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Quadrature {
    /// Lower-left pixel corner `x_min + iΔx`.
    #[default]
    Corner,
    /// Pixel midpoint `x_min + (i + 1/2)Δx`.
    Center,
}

/// Resolution, kernel variance, image domain and weighting of a persistence image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PIParams {
    pub resolution: usize,
    pub variance: f64,
    /// `[x_min, x_max]` on the birth axis.
    pub birth_range: [f64; 2],
    /// `[y_min, y_max]` on the lifespan axis.
    pub lifespan_range: [f64; 2],
    pub weighting: Weighting,
    #[serde(default)]
    pub quadrature: Quadrature,
}

impl PIParams {
    pub fn new(
        resolution: usize,
        variance: f64,
        birth_range: [f64; 2],
        lifespan_range: [f64; 2],
        weighting: Weighting,
    ) -> Result<Self> {
        let p = PIParams {
            resolution,
            variance,
            birth_range,
            lifespan_range,
            weighting,
            quadrature: Quadrature::Corner,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 1 {
            return invalid("resolution must be at least 1");
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return invalid(format!("kernel variance must be positive, got {}", self.variance));
        }
        for (name, r) in [("birth", self.birth_range), ("lifespan", self.lifespan_range)] {
            if !(r[1] > r[0] && r[0].is_finite() && r[1].is_finite()) {
                return invalid(format!("{name} range must satisfy min < max, got {r:?}"));
            }
        }
        self.weighting.validate()
    }

    pub fn n_pixels(&self) -> usize {
        self.resolution * self.resolution
    }

    pub fn dx(&self) -> f64 {
        (self.birth_range[1] - self.birth_range[0]) / self.resolution as f64
    }

    pub fn dy(&self) -> f64 {
        (self.lifespan_range[1] - self.lifespan_range[0]) / self.resolution as f64
    }

    fn offset(&self) -> f64 {
        match self.quadrature {
            Quadrature::Corner => 0.0,
            Quadrature::Center => 0.5,
        }
    }

    /// Birth coordinates of the sampling nodes.
    pub fn x_nodes(&self) -> Vec<f64> {
        let (o, dx) = (self.offset(), self.dx());
        (0..self.resolution)
            .map(|i| self.birth_range[0] + (i as f64 + o) * dx)
            .collect()
    }

    /// Lifespan coordinates of the sampling nodes.
    pub fn y_nodes(&self) -> Vec<f64> {
        let (o, dy) = (self.offset(), self.dy());
        (0..self.resolution)
            .map(|j| self.lifespan_range[0] + (j as f64 + o) * dy)
            .collect()
    }
}

/// `P×P` pixels, row `i` indexed by birth and column `j` by lifespan.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistenceImage {
    /// Row-major; pixel `(i, j)` is at `i·P + j`.
    pub pixels: Vec<f64>,
    pub params: PIParams,
}

impl PersistenceImage {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.pixels[i * self.params.resolution + j]
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
        for row in self.pixels.chunks(self.params.resolution) {
            wtr.write_record(row.iter().map(|&v| fmt_f64(v)))?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// `η(b, d) = (b, d − b)` for every pair; the diagram must be capped.
pub fn to_birth_lifespan(diagram: &Diagram) -> Result<Vec<(f64, f64)>> {
    if !diagram.is_capped() {
        return invalid("diagram has infinite deaths; cap it first");
    }
    Ok(diagram.pairs.iter().map(|p| (p.birth, p.death - p.birth)).collect())
}

/// Truncated 1-D Gaussian factors `exp(-(t - c)²/2γ²)` at the nodes.
fn gauss_factors(nodes: &[f64], c: f64, var: f64) -> Vec<f64> {
    let cut = KERNEL_CUTOFF * var.sqrt();
    nodes
        .iter()
        .map(|&t| {
            let d = t - c;
            if d.abs() > cut {
                0.0
            } else {
                (-d * d / (2.0 * var)).exp()
            }
        })
        .collect()
}

/// Persistence image of explicit `(b, l)` points.
pub fn pi_from_points(points: &[(f64, f64)], params: &PIParams) -> Result<PersistenceImage> {
    params.validate()?;
    let p = params.resolution;
    let (xs, ys) = (params.x_nodes(), params.y_nodes());
    let var = params.variance;
    let scale = params.dx() * params.dy() / (2.0 * PI * var);
    let mut pixels = vec![0.0; p * p];
    for &(b, l) in points {
        let w = params.weighting.value(b, l);
        if w == 0.0 {
            continue;
        }
        let gx = gauss_factors(&xs, b, var);
        let gy = gauss_factors(&ys, l, var);
        for (i, &fx) in gx.iter().enumerate().filter(|(_, f)| **f != 0.0) {
            let row = &mut pixels[i * p..(i + 1) * p];
            for (px, &fy) in row.iter_mut().zip(&gy) {
                *px += scale * w * fx * fy;
            }
        }
    }
    Ok(PersistenceImage {
        pixels,
        params: params.clone(),
    })
}

/// `PI_ij = ΔxΔy Σ_p α(b_p, l_p) g_{(b_p, l_p)}(x_i, y_j)`.
pub fn compute_pi(diagram: &Diagram, params: &PIParams) -> Result<PersistenceImage> {
    pi_from_points(&to_birth_lifespan(diagram)?, params)
}

/// Pixel derivatives of one diagram point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointDerivatives {
    /// `∂PI/∂b`, row-major `P×P`.
    pub d_birth: Vec<f64>,
    /// `∂PI/∂l`, row-major `P×P`.
    pub d_lifespan: Vec<f64>,
}

/// `∂PI/∂b_p` and `∂PI/∂l_p` for every pair of a diagram, in pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct DiagramJacobian {
    pub points: Vec<PointDerivatives>,
}

/// Derivatives of the image with respect to one `(b, l)` point.
pub fn point_derivatives(b: f64, l: f64, params: &PIParams) -> PointDerivatives {
    let p = params.resolution;
    let mut d_birth = vec![0.0; p * p];
    let mut d_lifespan = vec![0.0; p * p];
    let w = params.weighting.value(b, l);
    let dw = params.weighting.dl(b, l);
    // Zero-lifespan points carry no mass and are given zero derivative.
    if l <= 0.0 || (w == 0.0 && dw == 0.0) {
        return PointDerivatives { d_birth, d_lifespan };
    }
    let (xs, ys) = (params.x_nodes(), params.y_nodes());
    let var = params.variance;
    let scale = params.dx() * params.dy() / (2.0 * PI * var);
    let gx = gauss_factors(&xs, b, var);
    let gy = gauss_factors(&ys, l, var);
    for (i, &fx) in gx.iter().enumerate().filter(|(_, f)| **f != 0.0) {
        let tx = (xs[i] - b) / var;
        for (j, &fy) in gy.iter().enumerate().filter(|(_, f)| **f != 0.0) {
            let g = scale * fx * fy;
            let ty = (ys[j] - l) / var;
            d_birth[i * p + j] = w * g * tx;
            d_lifespan[i * p + j] = dw * g + w * g * ty;
        }
    }
    PointDerivatives { d_birth, d_lifespan }
}

pub fn pi_derivatives(diagram: &Diagram, params: &PIParams) -> Result<DiagramJacobian> {
    params.validate()?;
    let pts = to_birth_lifespan(diagram)?;
    Ok(DiagramJacobian {
        points: pts
            .iter()
            .map(|&(b, l)| point_derivatives(b, l, params))
            .collect(),
    })
}

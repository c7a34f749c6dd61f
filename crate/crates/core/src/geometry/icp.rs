//! Point-to-point iterative closest point registration.

use nalgebra::{DMatrix, DVector};

use super::{sq_dist, wasserstein_distance, PointCloud};
use crate::error::{invalid, Error, Result};

pub const DEFAULT_ICP_MAX_ITERS: usize = 100;
pub const DEFAULT_ICP_TOL: f64 = 1e-14;

/// A proper rigid motion `x -> R x + t` with `R` orthogonal and `det R = +1`.
#[derive(Debug, Clone, PartialEq)]
pub struct RigidTransform {
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
}

impl RigidTransform {
    pub fn identity(dim: usize) -> Self {
        RigidTransform {
            rotation: DMatrix::identity(dim, dim),
            translation: DVector::zeros(dim),
        }
    }

    /// Validates that `rotation` is a proper rotation to within `1e-10`.
    pub fn new(rotation: DMatrix<f64>, translation: DVector<f64>) -> Result<Self> {
        let d = translation.len();
        if rotation.nrows() != d || rotation.ncols() != d {
            return Err(Error::ShapeMismatch(format!(
                "rotation is {}x{}, translation has length {d}",
                rotation.nrows(),
                rotation.ncols()
            )));
        }
        let t = RigidTransform {
            rotation,
            translation,
        };
        if !t.is_proper(1e-10) {
            return invalid("rotation must be orthogonal with determinant +1");
        }
        Ok(t)
    }

    /// Planar rotation by `angle` followed by `translation`.
    pub fn rotation_2d(angle: f64, translation: &[f64]) -> Self {
        let (s, c) = angle.sin_cos();
        RigidTransform {
            rotation: DMatrix::from_row_slice(2, 2, &[c, -s, s, c]),
            translation: DVector::from_row_slice(translation),
        }
    }

    pub fn dim(&self) -> usize {
        self.translation.len()
    }

    pub fn is_proper(&self, tol: f64) -> bool {
        let d = self.dim();
        let gram = self.rotation.transpose() * &self.rotation;
        (gram - DMatrix::<f64>::identity(d, d)).amax() <= tol
            && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    pub fn apply_point(&self, p: &[f64]) -> Vec<f64> {
        let d = self.dim();
        (0..d)
            .map(|r| {
                (0..d).map(|c| self.rotation[(r, c)] * p[c]).sum::<f64>() + self.translation[r]
            })
            .collect()
    }

    pub fn apply(&self, cloud: &PointCloud) -> Result<PointCloud> {
        if cloud.dim() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "transform acts on R^{}, cloud lives in R^{}",
                self.dim(),
                cloud.dim()
            )));
        }
        let coords = cloud.points().flat_map(|p| self.apply_point(p)).collect();
        cloud.with_coords(coords)
    }

    /// `self ∘ other`, i.e. apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: &self.rotation * &other.rotation,
            translation: &self.rotation * &other.translation + &self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let rt = self.rotation.transpose();
        let translation = -(&rt * &self.translation);
        RigidTransform {
            rotation: rt,
            translation,
        }
    }
}

/// Closed-form least-squares rigid fit mapping `src[i]` onto `dst[i]`, with
/// the reflection case folded back to a proper rotation.
fn fit_rigid(src: &[&[f64]], dst: &[&[f64]], dim: usize) -> RigidTransform {
    let n = src.len() as f64;
    let mut cs = DVector::<f64>::zeros(dim);
    let mut cd = DVector::<f64>::zeros(dim);
    for (s, d) in src.iter().zip(dst) {
        for k in 0..dim {
            cs[k] += s[k];
            cd[k] += d[k];
        }
    }
    cs /= n;
    cd /= n;
    let mut h = DMatrix::<f64>::zeros(dim, dim);
    for (s, d) in src.iter().zip(dst) {
        for r in 0..dim {
            for c in 0..dim {
                h[(r, c)] += (s[r] - cs[r]) * (d[c] - cd[c]);
            }
        }
    }
    let svd = nalgebra::SVD::try_new(h, true, true, crate::pullback::SVD_EPS, 10_000);
    let (u, v_t) = match svd.map(|s| (s.u, s.v_t)) {
        Some((Some(u), Some(v_t))) => (u, v_t),
        _ => return RigidTransform::identity(dim),
    };
    let v = v_t.transpose();
    let mut sign = DMatrix::<f64>::identity(dim, dim);
    if (&v * u.transpose()).determinant() < 0.0 {
        sign[(dim - 1, dim - 1)] = -1.0;
    }
    let rotation = v * sign * u.transpose();
    let translation = &cd - &rotation * &cs;
    RigidTransform {
        rotation,
        translation,
    }
}

/// Outcome of [`icp_align`].
#[derive(Debug, Clone)]
pub struct IcpResult {
    /// Maps the source onto the target.
    pub transform: RigidTransform,
    /// Mean squared nearest-neighbour distance after alignment.
    pub error: f64,
    pub iterations: usize,
}

fn correspond(target: &PointCloud, moved: &[Vec<f64>]) -> (Vec<usize>, f64) {
    let mut total = 0.0;
    let matches = moved
        .iter()
        .map(|p| {
            let (j, d) = target
                .points()
                .enumerate()
                .map(|(j, q)| (j, sq_dist(p, q)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("target is non-empty");
            total += d;
            j
        })
        .collect();
    (matches, total / moved.len() as f64)
}

/// Rigidly registers `source` onto `target`.
///
/// Starts from centroid alignment and alternates nearest-neighbour
/// correspondence with a closed-form rigid fit until the mean squared
/// nearest-neighbour error improves by less than `tol` or `max_iters` fits
/// have been made. Convergence is local only.
pub fn icp_align(
    target: &PointCloud,
    source: &PointCloud,
    max_iters: usize,
    tol: f64,
) -> Result<IcpResult> {
    if target.dim() != source.dim() {
        return Err(Error::ShapeMismatch(format!(
            "target lives in R^{}, source in R^{}",
            target.dim(),
            source.dim()
        )));
    }
    if max_iters == 0 {
        return invalid("max_iters must be at least 1");
    }
    let dim = source.dim();
    let ct = target.centroid();
    let cs = source.centroid();
    let mut current = RigidTransform::identity(dim);
    for k in 0..dim {
        current.translation[k] = ct[k] - cs[k];
    }

    let moved = |t: &RigidTransform| -> Vec<Vec<f64>> {
        source.points().map(|p| t.apply_point(p)).collect()
    };
    let (mut matches, mut error) = correspond(target, &moved(&current));
    let mut iterations = 0;
    let src: Vec<&[f64]> = source.points().collect();
    while iterations < max_iters {
        iterations += 1;
        let dst: Vec<&[f64]> = matches.iter().map(|&j| target.point(j)).collect();
        let candidate = fit_rigid(&src, &dst, dim);
        let (next_matches, next_error) = correspond(target, &moved(&candidate));
        if next_error > error {
            break;
        }
        let improvement = error - next_error;
        current = candidate;
        matches = next_matches;
        error = next_error;
        if improvement < tol {
            break;
        }
    }
    Ok(IcpResult {
        transform: current,
        error,
        iterations,
    })
}

/// `d_W(X, ι(Y))` where `ι` registers `Y` onto `X`. Not symmetric in general.
pub fn icp_discrepancy(x: &PointCloud, y: &PointCloud) -> Result<f64> {
    let icp = icp_align(x, y, DEFAULT_ICP_MAX_ITERS, DEFAULT_ICP_TOL)?;
    let aligned = icp.transform.apply(y)?;
    Ok(wasserstein_distance(x, &aligned)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize, d: usize) -> PointCloud {
        PointCloud::from_flat(d, (0..n * d).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    fn rotation_3d(ax: f64, ay: f64, az: f64) -> DMatrix<f64> {
        let rx = DMatrix::from_row_slice(3, 3, &[1.0, 0.0, 0.0, 0.0, ax.cos(), -ax.sin(), 0.0, ax.sin(), ax.cos()]);
        let ry = DMatrix::from_row_slice(3, 3, &[ay.cos(), 0.0, ay.sin(), 0.0, 1.0, 0.0, -ay.sin(), 0.0, ay.cos()]);
        let rz = DMatrix::from_row_slice(3, 3, &[az.cos(), -az.sin(), 0.0, az.sin(), az.cos(), 0.0, 0.0, 0.0, 1.0]);
        rz * ry * rx
    }

    #[test]
    fn identity_on_equal_clouds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_cloud(&mut rng, 40, 3);
        let r = icp_align(&x, &x, 20, 1e-12).unwrap();
        assert!(r.error < 1e-28);
        assert!((r.transform.rotation.clone() - DMatrix::identity(3, 3)).amax() < 1e-12);
        assert!(r.transform.translation.amax() < 1e-12);
        assert_eq!(icp_discrepancy(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn recovers_known_small_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for trial in 0..5 {
            let target = random_cloud(&mut rng, 60, 3);
            let deg = std::f64::consts::PI / 180.0;
            let known = RigidTransform::new(
                rotation_3d(3.0 * deg, -5.0 * deg, (2.0 + trial as f64) * deg),
                DVector::from_row_slice(&[0.05, -0.02, 0.1]),
            )
            .unwrap();
            let source = known.apply(&target).unwrap();
            let r = icp_align(&target, &source, 100, 1e-16).unwrap();
            let composed = r.transform.compose(&known);
            assert!((composed.rotation - DMatrix::identity(3, 3)).amax() < 1e-6);
            assert!(composed.translation.amax() < 1e-6);
            assert!(r.error < 1e-10, "error {}", r.error);
            assert!(r.transform.is_proper(1e-10));
            assert!(icp_discrepancy(&target, &source).unwrap() < 1e-6);
        }
    }

    #[test]
    fn noisy_copy_error_is_at_noise_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sigma = 1e-3;
        let normal = Normal::new(0.0, sigma).unwrap();
        for _ in 0..10 {
            let target = random_cloud(&mut rng, 50, 2);
            let noisy: Vec<f64> = target.flat().iter().map(|v| v + normal.sample(&mut rng)).collect();
            let source = target.with_coords(noisy).unwrap();
            let r = icp_align(&target, &source, 50, 1e-14).unwrap();
            // per-coordinate variance sigma^2, two coordinates
            assert!(r.error <= 2.0 * sigma * sigma * 1.5, "error {}", r.error);
        }
    }

    #[test]
    fn collinear_source_still_yields_proper_rotation() {
        let line = PointCloud::new((0..10).map(|i| vec![i as f64, 2.0 * i as f64, -(i as f64)]).collect()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let target = random_cloud(&mut rng, 10, 3);
        let r = icp_align(&target, &line, 30, 1e-12).unwrap();
        assert!(r.transform.is_proper(1e-10));
        // reflected planar data
        let flat = PointCloud::new(vec![vec![0.0, 0.0, 0.0], vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![1.0, 1.0, 0.0]]).unwrap();
        let mirrored = PointCloud::new(vec![vec![0.0, 0.0, 0.0], vec![-1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![-1.0, 1.0, 0.0]]).unwrap();
        let r = icp_align(&flat, &mirrored, 30, 1e-12).unwrap();
        assert!(r.transform.is_proper(1e-10));
    }

    #[test]
    fn single_displacement_discrepancy_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..10 {
            let x = random_cloud(&mut rng, 30, 2);
            let eps = 1e-3;
            let mut c = x.flat().to_vec();
            c[0] += eps;
            let y = x.with_coords(c).unwrap();
            let raw = wasserstein_distance(&x, &y).unwrap().0;
            let d = icp_discrepancy(&x, &y).unwrap();
            assert!(d <= raw + 1e-12 && d <= eps + 1e-12, "d {d} raw {raw}");
        }
    }

    #[test]
    fn dimension_checks() {
        let a = PointCloud::new(vec![vec![0.0, 0.0]]).unwrap();
        let b = PointCloud::new(vec![vec![0.0, 0.0, 1.0]]).unwrap();
        assert!(icp_align(&a, &b, 5, 1e-9).is_err());
        assert!(icp_align(&a, &a, 0, 1e-9).is_err());
    }
}

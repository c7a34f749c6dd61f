//! The encoding Jacobian `J = ∂PI/∂X` assembled by the chain rule through the
//! barcode template, and the pull-back geometry it induces on point clouds.

use std::io::Write;
use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{invalid, Error, Result};
use crate::filtration::{build_complex, filtration_gradient, FiltrationKind, GenericityReport, PointGradient, Simplex};
use crate::geometry::io::fmt_f64;
use crate::geometry::PointCloud;
use crate::persistence::{cap_infinite, reduce, Diagram, EssentialCap};
use crate::pimage::{compute_pi, point_derivatives, PIParams, PersistenceImage};

pub const DEFAULT_RANK_RTOL: f64 = 1e-10;

fn default_true() -> bool {
    true
}

/// The composite map cloud → filtration → diagram → image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncodingSpec {
    pub filtration: FiltrationKind,
    /// Homology degree `k`.
    pub degree: usize,
    pub pi: PIParams,
    /// Largest simplex dimension built; defaults to `degree + 1`.
    #[serde(default)]
    pub max_dim: Option<usize>,
    #[serde(default = "default_cap")]
    pub essential_cap: EssentialCap,
    /// Whether essential classes enter the image.
    #[serde(default = "default_true")]
    pub include_essential: bool,
}

fn default_cap() -> EssentialCap {
    EssentialCap::Auto
}

impl EncodingSpec {
    pub fn new(filtration: FiltrationKind, degree: usize, pi: PIParams) -> Self {
        EncodingSpec {
            filtration,
            degree,
            pi,
            max_dim: None,
            essential_cap: EssentialCap::Auto,
            include_essential: true,
        }
    }

    pub fn max_dim(&self) -> usize {
        self.max_dim.unwrap_or(self.degree + 1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_dim() < self.degree + 1 {
            return invalid(format!(
                "max_dim {} is too small for homology degree {}",
                self.max_dim(),
                self.degree
            ));
        }
        self.pi.validate()
    }
}

/// The capped diagram fed to the image, plus what the chain rule needs.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub diagram: Diagram,
    pub image: PersistenceImage,
    pub cap: f64,
    /// Simplex whose value defines the cap, when the cap depends on the data.
    pub cap_simplex: Option<Simplex>,
    pub genericity: GenericityReport,
}

fn encode_with_complex(x: &PointCloud, spec: &EncodingSpec) -> Result<(Encoding, crate::filtration::FilteredComplex)> {
    spec.validate()?;
    let complex = build_complex(x, spec.filtration.clone(), spec.max_dim())?;
    let genericity = complex.genericity(x);
    let raw = reduce(&complex, spec.degree)?;
    let (cap, cap_simplex) = spec.essential_cap.resolve(&complex);
    let mut diagram = cap_infinite(&raw, cap)?;
    if !spec.include_essential {
        diagram.pairs.retain(|p| !p.is_essential());
    }
    let image = compute_pi(&diagram, &spec.pi)?;
    Ok((
        Encoding {
            diagram,
            image,
            cap,
            cap_simplex,
            genericity,
        },
        complex,
    ))
}

/// Evaluates the encoding at `x`.
pub fn encode(x: &PointCloud, spec: &EncodingSpec) -> Result<Encoding> {
    encode_with_complex(x, spec).map(|(e, _)| e)
}

/// `J ∈ R^{P²×DN}`, rows in image order `i·P + j`, columns in the cloud's
/// flattening order.
#[derive(Debug, Clone)]
pub struct EncodingJacobian {
    pub matrix: DMatrix<f64>,
    pub base: PointCloud,
    pub spec: EncodingSpec,
    /// False when ties or threshold coincidences were detected.
    pub generic: bool,
    pub encoding: Encoding,
    top: OnceLock<f64>,
}

impl EncodingJacobian {
    /// Wraps an explicit matrix, e.g. for analysis of externally computed Jacobians.
    pub fn from_matrix(matrix: DMatrix<f64>, base: PointCloud, spec: EncodingSpec, encoding: Encoding) -> Result<Self> {
        if matrix.ncols() != base.flat().len() {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {} columns, cloud has {} coordinates",
                matrix.ncols(),
                base.flat().len()
            )));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("Jacobian has non-finite entries".into()));
        }
        Ok(EncodingJacobian {
            generic: encoding.genericity.is_generic(),
            matrix,
            base,
            spec,
            encoding,
            top: OnceLock::new(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.matrix.ncols()
    }

    /// Largest singular value `λ_1`.
    pub fn top_singular_value(&self) -> f64 {
        *self.top.get_or_init(|| {
            if self.matrix.iter().all(|&v| v == 0.0) {
                0.0
            } else {
                thin_svd(&self.matrix, false)
                    .map(|t| t.values.iter().fold(0.0f64, |m, &v| m.max(v)))
                    .unwrap_or(f64::NAN)
            }
        })
    }

    /// Row-major dump: little-endian `u64` rows and columns, then `f64` entries.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.nrows() as u64).to_le_bytes())?;
        w.write_all(&(self.ncols() as u64).to_le_bytes())?;
        for r in 0..self.nrows() {
            for c in 0..self.ncols() {
                w.write_all(&self.matrix[(r, c)].to_le_bytes())?;
            }
        }
        Ok(())
    }
}

/// `matrix[:, cols of g] += coeff ⊗ g`.
fn add_outer(matrix: &mut DMatrix<f64>, coeff: &[f64], g: &PointGradient) {
    let d = g.dim;
    let cv = DVector::from_column_slice(coeff);
    for (p, row) in &g.rows {
        for (c, &gc) in row.iter().enumerate() {
            if gc != 0.0 {
                matrix.column_mut(p * d + c).axpy(gc, &cv, 1.0);
            }
        }
    }
}

/// Analytic Jacobian of the encoding at `x`.
///
/// Each diagram pair contributes `(∂PI/∂b − ∂PI/∂l)·∂φ(σ_b)/∂X` and
/// `∂PI/∂l·∂φ(σ_d)/∂X`. Essential pairs take the cap's derivative in place
/// of `∂φ(σ_d)/∂X`, which vanishes for constant caps.
pub fn encoding_jacobian(x: &PointCloud, spec: &EncodingSpec) -> Result<EncodingJacobian> {
    let (encoding, complex) = encode_with_complex(x, spec)?;
    let n = spec.pi.n_pixels();
    let mut matrix = DMatrix::<f64>::zeros(n, x.flat().len());
    let cap_grad = match encoding.cap_simplex {
        Some(s) => Some(filtration_gradient(x, &complex, &s)?),
        None => None,
    };
    for pair in &encoding.diagram.pairs {
        let l = pair.death - pair.birth;
        let pd = point_derivatives(pair.birth, l, &spec.pi);
        let birth_coeff: Vec<f64> = pd
            .d_birth
            .iter()
            .zip(&pd.d_lifespan)
            .map(|(b, l)| b - l)
            .collect();
        let gb = filtration_gradient(x, &complex, &pair.birth_simplex)?;
        add_outer(&mut matrix, &birth_coeff, &gb);
        match (&pair.death_simplex, &cap_grad) {
            (Some(ds), _) => {
                let gd = filtration_gradient(x, &complex, ds)?;
                add_outer(&mut matrix, &pd.d_lifespan, &gd);
            }
            (None, Some(gc)) => add_outer(&mut matrix, &pd.d_lifespan, gc),
            (None, None) => {}
        }
    }
    if !encoding.genericity.is_generic() {
        log::debug!(
            "cloud {} is not in generic position: {} tie groups, {} threshold edges",
            x.id().unwrap_or("?"),
            encoding.genericity.ties.len(),
            encoding.genericity.near_threshold_edges.len()
        );
    }
    EncodingJacobian::from_matrix(matrix, x.clone(), spec.clone(), encoding)
}

/// Central finite-difference Jacobian of the encoding with step `h`.
pub fn finite_difference_jacobian(x: &PointCloud, spec: &EncodingSpec, h: f64) -> Result<DMatrix<f64>> {
    let m = x.flat().len();
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let mut plus = x.flat().to_vec();
            let mut minus = x.flat().to_vec();
            plus[k] += h;
            minus[k] -= h;
            let fp = encode(&x.with_coords(plus)?, spec)?.image.pixels;
            let fm = encode(&x.with_coords(minus)?, spec)?.image.pixels;
            Ok(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    let n = spec.pi.n_pixels();
    Ok(DMatrix::from_fn(n, m, |r, c| cols[c][r]))
}

/// Largest `|a − b| / |b|` over entries with `|b| > floor`.
pub fn max_relative_error(analytic: &DMatrix<f64>, reference: &DMatrix<f64>, floor: f64) -> f64 {
    analytic
        .iter()
        .zip(reference.iter())
        .filter(|(_, r)| r.abs() > floor)
        .map(|(a, r)| (a - r).abs() / r.abs())
        .fold(0.0, f64::max)
}

/// Singular values in descending order with the matching singular vectors.
#[derive(Debug, Clone)]
pub struct Spectrum {
    pub singular_values: Vec<f64>,
    /// Columns are the right singular vectors `q_i` in `R^m`.
    pub right_vectors: DMatrix<f64>,
    /// Columns are the left singular vectors in `R^n`.
    pub left_vectors: DMatrix<f64>,
    pub rank: usize,
}

impl Spectrum {
    /// `λ_i / λ_1`; empty when `λ_1 = 0`.
    pub fn normalized(&self) -> Vec<f64> {
        match self.singular_values.first() {
            Some(&top) if top > 0.0 => self.singular_values.iter().map(|v| v / top).collect(),
            _ => Vec::new(),
        }
    }

    /// First index (0-based) where `λ_i/λ_1 < threshold`, or the number of
    /// singular values if it never drops that far.
    pub fn decay_index(&self, threshold: f64) -> usize {
        let n = self.normalized();
        n.iter().position(|&v| v < threshold).unwrap_or(n.len())
    }

    pub fn q(&self, i: usize) -> DVector<f64> {
        self.right_vectors.column(i).into_owned()
    }

    /// CSV rows `index,lambda,lambda_over_lambda1` with 1-based indices.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["index", "lambda", "lambda_over_lambda1"])?;
        let top = self.singular_values.first().copied().unwrap_or(0.0);
        for (i, &v) in self.singular_values.iter().enumerate() {
            let r = if top > 0.0 { v / top } else { 0.0 };
            wtr.write_record([(i + 1).to_string(), fmt_f64(v), fmt_f64(r)])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

const SVD_MAX_ITERS: usize = 100_000;
/// Convergence tolerance nalgebra itself uses; with plain `f64::EPSILON`
/// its bidiagonal sweep can stop on an inaccurate decomposition.
pub(crate) const SVD_EPS: f64 = 5.0 * f64::EPSILON;

/// Nonzero singular triplets, unsorted: `values[i]` with left vector
/// `u.column(i)` and right vector `v.column(i)`.
pub(crate) struct Triplets {
    pub values: Vec<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

/// SVD of the block of nonzero rows and columns, scaled by its largest
/// absolute entry, with vectors embedded back into full length. Dropping
/// the zero rows and columns is exact; the iteration can stall on the full,
/// highly rank-deficient matrix. Fails instead of looping when neither the
/// block nor its transpose converges.
pub(crate) fn thin_svd(matrix: &DMatrix<f64>, vectors: bool) -> Result<Triplets> {
    let (n, m) = matrix.shape();
    let rows: Vec<usize> = (0..n).filter(|&i| matrix.row(i).iter().any(|&v| v != 0.0)).collect();
    let cols: Vec<usize> = (0..m).filter(|&k| matrix.column(k).iter().any(|&v| v != 0.0)).collect();
    let scale = matrix.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if rows.is_empty() {
        return Ok(Triplets {
            values: Vec::new(),
            u: DMatrix::zeros(n, 0),
            v: DMatrix::zeros(m, 0),
            rows,
            cols,
        });
    }
    let block = DMatrix::from_fn(rows.len(), cols.len(), |i, k| {
        let w = matrix[(rows[i], cols[k])] / scale;
        if w.abs() < f64::MIN_POSITIVE {
            0.0
        } else {
            w
        }
    });
    let (values, bu, bv) = if vectors {
        let (values, u, v) = checked_svd(block)?;
        (values, Some(u), Some(v))
    } else {
        let values = match nalgebra::SVD::try_new(block.clone(), false, false, SVD_EPS, SVD_MAX_ITERS) {
            Some(svd) => svd.singular_values,
            None => nalgebra::SVD::try_new(block.transpose(), false, false, SVD_EPS, SVD_MAX_ITERS)
                .ok_or_else(|| Error::Numerical(format!("SVD did not converge in {SVD_MAX_ITERS} iterations")))?
                .singular_values,
        };
        (values, None, None)
    };
    let k = values.len();
    let embed = |b: Option<DMatrix<f64>>, idx: &[usize], dim: usize| -> Result<DMatrix<f64>> {
        if !vectors {
            return Ok(DMatrix::zeros(dim, 0));
        }
        let b = b.ok_or_else(|| Error::Numerical("SVD did not return singular vectors".into()))?;
        let mut out = DMatrix::zeros(dim, k);
        for (i, &r) in idx.iter().enumerate() {
            out.row_mut(r).copy_from(&b.row(i));
        }
        Ok(out)
    };
    Ok(Triplets {
        values: values.iter().map(|v| v * scale).collect(),
        u: embed(bu, &rows, n)?,
        v: embed(bv, &cols, m)?,
        rows,
        cols,
    })
}

/// Relative Frobenius residual above which a decomposition is rejected.
const SVD_RESIDUAL_RTOL: f64 = 1e-10;

/// `(σ, U, V)` with `a = U diag(σ) Vᵀ`, checked by reconstruction. nalgebra
/// occasionally returns a decomposition of a graded matrix that is off by
/// about 1e-6 relative; the transpose then usually decomposes cleanly. The
/// better of the two is kept when neither passes.
pub(crate) fn checked_svd(a: DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>, DMatrix<f64>)> {
    let norm = a.norm();
    let run = |m: &DMatrix<f64>, transposed: bool| {
        nalgebra::SVD::try_new(m.clone(), true, true, SVD_EPS, SVD_MAX_ITERS).and_then(|svd| {
            let (u, v_t) = (svd.u?, svd.v_t?);
            let residual = (m - &u * DMatrix::from_diagonal(&svd.singular_values) * &v_t).norm();
            let v = v_t.transpose();
            let (u, v) = if transposed { (v, u) } else { (u, v) };
            Some((residual, svd.singular_values, u, v))
        })
    };
    let first = run(&a, false);
    if let Some((r, values, u, v)) = &first {
        if *r <= SVD_RESIDUAL_RTOL * norm {
            return Ok((values.clone(), u.clone(), v.clone()));
        }
    }
    let second = run(&a.transpose(), true);
    let best = match (first, second) {
        (Some(x), Some(y)) => {
            if y.0 < x.0 {
                y
            } else {
                x
            }
        }
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => {
            return Err(Error::Numerical(format!("SVD did not converge in {SVD_MAX_ITERS} iterations")));
        }
    };
    if best.0 > SVD_RESIDUAL_RTOL * norm {
        log::warn!("SVD residual {:.1e} relative to norm {:.1e}", best.0, norm);
    }
    Ok((best.1, best.2, best.3))
}

/// `total` orthonormal columns in `R^dim` whose first `basis.ncols()` are
/// `basis`, which is supported on the coordinates `support`. The rest come
/// from the orthogonal complement inside `support`, then unit vectors off it.
fn complete_basis(basis: &DMatrix<f64>, support: &[usize], total: usize) -> DMatrix<f64> {
    let (dim, k) = basis.shape();
    let mut out = DMatrix::zeros(dim, total);
    out.columns_mut(0, k).copy_from(basis);
    let mut next = k;
    let s = support.len();
    if s > k && next < total {
        // Householder QR of [B | I] on the support: the trailing columns of Q
        // span the complement of B there.
        let aug = DMatrix::from_fn(s, k + s, |i, j| if j < k { basis[(support[i], j)] } else if i == j - k { 1.0 } else { 0.0 });
        let q = aug.qr().q();
        for j in k..s.min(k + total - next) {
            for (i, &r) in support.iter().enumerate() {
                out[(r, next)] = q[(i, j)];
            }
            next += 1;
        }
    }
    let mut on_support = vec![false; dim];
    support.iter().for_each(|&r| on_support[r] = true);
    for r in (0..dim).filter(|&r| !on_support[r]) {
        if next == total {
            break;
        }
        out[(r, next)] = 1.0;
        next += 1;
    }
    out
}

/// Full thin SVD with descending singular values and sign-normalized vectors
/// (first entry above `1e-12` in magnitude is positive).
pub fn svd_of(matrix: &DMatrix<f64>, rank_rtol: f64) -> Result<Spectrum> {
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix has non-finite entries".into()));
    }
    let (n, m) = matrix.shape();
    let r = n.min(m);
    if r == 0 || matrix.iter().all(|&v| v == 0.0) {
        return Ok(Spectrum {
            singular_values: vec![0.0; r],
            right_vectors: DMatrix::zeros(m, 0),
            left_vectors: DMatrix::zeros(n, 0),
            rank: 0,
        });
    }
    let t = thin_svd(matrix, true)?;
    let mut order: Vec<usize> = (0..t.values.len()).collect();
    order.sort_by(|&a, &b| t.values[b].total_cmp(&t.values[a]));
    let mut singular_values: Vec<f64> = order.iter().map(|&i| t.values[i]).collect();
    singular_values.resize(r, 0.0);
    let sorted = |x: &DMatrix<f64>| DMatrix::from_fn(x.nrows(), order.len(), |i, k| x[(i, order[k])]);
    let mut right = complete_basis(&sorted(&t.v), &t.cols, r);
    let mut left = complete_basis(&sorted(&t.u), &t.rows, r);
    for k in 0..r {
        if let Some(first) = right.column(k).iter().find(|v| v.abs() > 1e-12) {
            if *first < 0.0 {
                right.column_mut(k).neg_mut();
                left.column_mut(k).neg_mut();
            }
        }
    }
    let top = singular_values[0];
    let rank = singular_values.iter().filter(|&&v| v > rank_rtol * top).count();
    Ok(Spectrum {
        singular_values,
        right_vectors: right,
        left_vectors: left,
        rank,
    })
}

pub fn svd_spectrum(j: &EncodingJacobian, rank_rtol: f64) -> Result<Spectrum> {
    let s = svd_of(&j.matrix, rank_rtol)?;
    let _ = j.top.set(s.singular_values.first().copied().unwrap_or(0.0));
    Ok(s)
}

fn check_len(j: &EncodingJacobian, v: &[f64]) -> Result<()> {
    if v.len() != j.ncols() {
        return Err(Error::ShapeMismatch(format!(
            "tangent vector has {} entries, Jacobian has {} columns",
            v.len(),
            j.ncols()
        )));
    }
    Ok(())
}

/// `‖Jv‖`, or `‖Jv‖/λ_1` when `normalized`.
pub fn pullback_norm(j: &EncodingJacobian, v: &[f64], normalized: bool) -> Result<f64> {
    check_len(j, v)?;
    let jv = &j.matrix * DVector::from_column_slice(v);
    let norm = jv.norm();
    if normalized {
        let top = j.top_singular_value();
        if top == 0.0 {
            return Err(Error::Numerical(
                "normalized pull-back norm undefined for a zero Jacobian".into(),
            ));
        }
        Ok(norm / top)
    } else {
        Ok(norm)
    }
}

/// `(mean, standard error)`; the standard error uses the `n − 1` sample
/// variance and is 0 for a single value.
pub fn mean_and_stderr(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return invalid("cannot average over an empty set");
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, (var / n).sqrt()))
}

/// Jacobians of every cloud, in dataset order.
pub fn dataset_jacobians(dataset: &Dataset, spec: &EncodingSpec) -> Result<Vec<EncodingJacobian>> {
    dataset
        .clouds
        .par_iter()
        .map(|x| encoding_jacobian(x, spec))
        .collect()
}

/// Indices of a dataset sorted by cloud id, the order used for reductions.
pub fn reduction_order(dataset: &Dataset) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..dataset.len()).collect();
    idx.sort_by_key(|&i| dataset.cloud_id(i));
    idx
}

/// Mean and standard error of pull-back norms of one tangent vector per
/// Jacobian, summed in the given order.
pub fn average_norms(jacobians: &[EncodingJacobian], fields: &[Vec<f64>], order: &[usize], normalized: bool) -> Result<(f64, f64)> {
    if jacobians.len() != fields.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} Jacobians but {} tangent vectors",
            jacobians.len(),
            fields.len()
        )));
    }
    let norms = order
        .iter()
        .map(|&i| pullback_norm(&jacobians[i], &fields[i], normalized))
        .collect::<Result<Vec<_>>>()?;
    mean_and_stderr(&norms)
}

/// Dataset average of the pull-back norm of a vector field.
pub fn average_pullback_norm(dataset: &Dataset, fields: &[Vec<f64>], spec: &EncodingSpec, normalized: bool) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return invalid("dataset is empty");
    }
    let js = dataset_jacobians(dataset, spec)?;
    average_norms(&js, fields, &reduction_order(dataset), normalized)
}

/// `|⟨v/‖v‖, q_i⟩|` for `i < top_k`, or `None` when `v = 0`.
pub fn alignment(spectrum: &Spectrum, v: &[f64], top_k: usize) -> Option<Vec<f64>> {
    let vv = DVector::from_column_slice(v);
    let norm = vv.norm();
    if norm == 0.0 {
        return None;
    }
    let k = top_k.min(spectrum.right_vectors.ncols());
    Some(
        (0..k)
            .map(|i| (spectrum.right_vectors.column(i).dot(&vv) / norm).abs())
            .collect(),
    )
}

/// Dataset averages of `|⟨V/‖V‖, q_i⟩|`, one row per field family.
///
/// `fields[f][c]` is the tangent vector of family `f` on cloud `c`. Clouds
/// with a zero vector are skipped for that family.
pub fn alignment_table(spectra: &[Spectrum], fields: &[Vec<Vec<f64>>], order: &[usize], top_k: usize) -> Result<Vec<Vec<f64>>> {
    fields
        .iter()
        .enumerate()
        .map(|(f, per_cloud)| {
            if per_cloud.len() != spectra.len() {
                return Err(Error::ShapeMismatch(format!(
                    "family {f} has {} vectors for {} clouds",
                    per_cloud.len(),
                    spectra.len()
                )));
            }
            let mut sums = vec![0.0; top_k];
            let mut used = 0usize;
            for &c in order {
                match alignment(&spectra[c], &per_cloud[c], top_k) {
                    Some(a) => {
                        for (s, v) in sums.iter_mut().zip(a) {
                            *s += v;
                        }
                        used += 1;
                    }
                    None => log::warn!("family {f}: zero tangent vector on cloud {c}, skipped"),
                }
            }
            if used == 0 {
                return invalid(format!("family {f} is zero on every cloud"));
            }
            Ok(sums.into_iter().map(|s| s / used as f64).collect())
        })
        .collect()
}

/// `G = JᵀJ`, symmetric positive semidefinite.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix(pub DMatrix<f64>);

impl GramMatrix {
    pub fn from_jacobian(j: &EncodingJacobian) -> Self {
        let g = j.matrix.transpose() * &j.matrix;
        GramMatrix((&g + g.transpose()) * 0.5)
    }

    /// Validates symmetry and near-nonnegativity of the spectrum.
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::ShapeMismatch("Gram matrix must be square".into()));
        }
        let scale = m.amax().max(1.0);
        if (&m - m.transpose()).amax() > 1e-12 * scale {
            return invalid("matrix is not symmetric");
        }
        Ok(GramMatrix(m))
    }
}

fn psd_eigen(m: &DMatrix<f64>, what: &str) -> Result<SymmetricEigen<f64, nalgebra::Dyn>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let tol = 1e-10 * m.trace().abs().max(1.0);
    if let Some(bad) = eig.eigenvalues.iter().find(|&&v| v < -tol) {
        return invalid(format!("{what} has negative eigenvalue {bad}"));
    }
    Ok(eig)
}

fn psd_sqrt(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let eig = psd_eigen(m, what)?;
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.eigenvectors * d * eig.eigenvectors.transpose())
}

/// `d_BW(A, B) = [Tr A + Tr B − 2 Tr (A^{1/2} B A^{1/2})^{1/2}]^{1/2}` after
/// adding `ridge·I` to both. `None` uses `1e-10·max(Tr A, Tr B, 1)`.
pub fn bures_wasserstein(a: &GramMatrix, b: &GramMatrix, ridge: Option<f64>) -> Result<f64> {
    let (a, b) = (&a.0, &b.0);
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch(format!(
            "matrices are {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let ridge = ridge.unwrap_or_else(|| 1e-10 * a.trace().max(b.trace()).max(1.0));
    if !(ridge >= 0.0) {
        return invalid("ridge must be nonnegative");
    }
    let n = a.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let ar = a + &eye * ridge;
    let br = b + &eye * ridge;
    let sa = psd_sqrt(&ar, "first matrix")?;
    let sb = psd_sqrt(&br, "second matrix")?;
    // d = min over orthogonal U of ‖A^{1/2} − B^{1/2} U‖_F, attained at
    // U = Q Pᵀ where A^{1/2} B^{1/2} = P Σ Qᵀ. Summing squared differences
    // avoids the cancellation in Tr A + Tr B − 2‖A^{1/2} B^{1/2}‖_*, but the
    // computed U drifts by about ε‖C‖/σ_min when C is nearly singular. Any
    // orthogonal U gives an upper bound, so the smaller estimate is kept.
    let c = &sa * &sb;
    let (values, p, q) = checked_svd(c)?;
    let u = q * p.transpose();
    let polar = (&sa - &sb * u).norm();
    let trace = (ar.trace() + br.trace() - 2.0 * values.sum()).max(0.0).sqrt();
    Ok(polar.min(trace))
}

/// Per-point Frobenius norm of the Jacobian's column block.
pub fn saliency_from_jacobian(j: &EncodingJacobian) -> Vec<f64> {
    let d = j.base.dim();
    (0..j.base.len())
        .map(|p| {
            (p * d..(p + 1) * d)
                .map(|c| j.matrix.column(c).norm_squared())
                .sum::<f64>()
                .sqrt()
        })
        .collect()
}

pub fn saliency(x: &PointCloud, spec: &EncodingSpec) -> Result<Vec<f64>> {
    Ok(saliency_from_jacobian(&encoding_jacobian(x, spec)?))
}

/// One semi-axis of the pull-back unit ball.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitBallAxis {
    pub axis: DVector<f64>,
    pub semi_length: f64,
}

/// Semi-axes `(q_i, 1/λ_i)` of `{v : ‖Jv‖ = 1}` for the singular values that
/// are numerically positive (above `rank_rtol·λ_1`).
pub fn unit_ball_axes(spectrum: &Spectrum) -> Vec<UnitBallAxis> {
    (0..spectrum.rank)
        .map(|i| UnitBallAxis {
            axis: spectrum.q(i),
            semi_length: 1.0 / spectrum.singular_values[i],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{gen_circle, gen_rfp, Jitter};
    use crate::filtration::FiltrationKind;
    use crate::pimage::Weighting;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rips_spec(max_edge: f64) -> EncodingSpec {
        EncodingSpec::new(
            FiltrationKind::Rips { max_edge },
            1,
            PIParams::new(10, 1e-3, [0.0, 1.0], [0.0, 1.0], Weighting::Linear { l_max: 1.0 }).unwrap(),
        )
    }

    fn rfp(seed: u64) -> PointCloud {
        gen_rfp(0.7, 5, 40, Some(Jitter { std: 1e-4, seed })).unwrap()
    }

    #[test]
    fn empty_diagram_gives_zero_jacobian() {
        let x = PointCloud::new(vec![vec![0.0, 0.0], vec![5.0, 0.0], vec![0.0, 5.0]]).unwrap();
        let j = encoding_jacobian(&x, &rips_spec(1.0)).unwrap();
        assert!(j.matrix.iter().all(|&v| v == 0.0));
        let s = svd_spectrum(&j, DEFAULT_RANK_RTOL).unwrap();
        assert_eq!(s.rank, 0);
        assert!(s.normalized().is_empty());
        assert!(pullback_norm(&j, &[1.0; 6], true).is_err());
        assert_eq!(saliency_from_jacobian(&j), vec![0.0; 3]);
    }

    #[test]
    fn matches_finite_differences() {
        let x = rfp(1);
        for spec in [
            rips_spec(1.0),
            EncodingSpec::new(FiltrationKind::Dtm { k_neighbors: 2, max_edge: 0.5 }, 1, rips_spec(1.0).pi),
            EncodingSpec::new(FiltrationKind::Height { direction: vec![1.0, 0.0], max_edge: 0.15 }, 1, rips_spec(1.0).pi),
        ] {
            let j = encoding_jacobian(&x, &spec).unwrap();
            let fd = finite_difference_jacobian(&x, &spec, 1e-6).unwrap();
            let scale = fd.amax();
            assert!(scale > 0.0);
            let err = (&j.matrix - &fd).amax();
            assert!(err < 1e-5 * scale, "{}: err {err} scale {scale}", spec.filtration.name());
        }
    }

    #[test]
    fn rigid_motions_are_annihilated() {
        let x = rfp(2);
        for spec in [rips_spec(1.0), EncodingSpec::new(FiltrationKind::Dtm { k_neighbors: 2, max_edge: 0.5 }, 1, rips_spec(1.0).pi)] {
            let j = encoding_jacobian(&x, &spec).unwrap();
            let top = j.top_singular_value();
            assert!(top > 0.0);
            let c = x.centroid();
            let rot: Vec<f64> = x.points().flat_map(|p| [-(p[1] - c[1]), p[0] - c[0]]).collect();
            let tx: Vec<f64> = x.points().flat_map(|_| [1.0, 0.0]).collect();
            for v in [rot, tx] {
                let vn = DVector::from_column_slice(&v).norm();
                assert!(pullback_norm(&j, &v, false).unwrap() <= 1e-9 * top * vn);
            }
        }
    }

    #[test]
    fn spectrum_identities() {
        let x = rfp(3);
        let j = encoding_jacobian(&x, &rips_spec(1.0)).unwrap();
        let s = svd_spectrum(&j, DEFAULT_RANK_RTOL).unwrap();
        assert!(s.singular_values.windows(2).all(|w| w[0] >= w[1]));
        let qtq = s.right_vectors.transpose() * &s.right_vectors;
        assert!((qtq - DMatrix::<f64>::identity(s.singular_values.len(), s.singular_values.len())).amax() < 1e-10);
        let recon = &s.left_vectors * DMatrix::from_diagonal(&DVector::from_vec(s.singular_values.clone())) * s.right_vectors.transpose();
        assert!((&recon - &j.matrix).norm() <= 1e-9 * j.matrix.norm());
        // v = q_1
        let q1: Vec<f64> = s.q(0).iter().copied().collect();
        assert!((pullback_norm(&j, &q1, false).unwrap() - s.singular_values[0]).abs() < 1e-9 * s.singular_values[0]);
        assert!((pullback_norm(&j, &q1, true).unwrap() - 1.0).abs() < 1e-9);
        // orthogonal to the row space
        if s.rank < s.singular_values.len() {
            let null: Vec<f64> = s.q(s.singular_values.len() - 1).iter().copied().collect();
            assert!(pullback_norm(&j, &null, false).unwrap() < 1e-10 * s.singular_values[0].max(1.0));
        }
        for a in unit_ball_axes(&s) {
            let v: Vec<f64> = a.axis.iter().map(|c| c * a.semi_length).collect();
            assert!((pullback_norm(&j, &v, false).unwrap() - 1.0).abs() < 1e-9);
        }
        let sal = saliency_from_jacobian(&j);
        let total: f64 = sal.iter().map(|s| s * s).sum();
        assert!((total - j.matrix.norm_squared()).abs() < 1e-10 * total);
    }

    #[test]
    fn single_pair_jacobian_decomposes() {
        // a one-pair diagram gives a rank-2 matrix on which the plain
        // iteration used to stall
        let ds = crate::datagen::gen_circle_classes(10, 40, 1.1, 0.05, 0).unwrap();
        let pi = PIParams::new(20, 3.16e-3, [0.0, 0.5], [0.0, 2.5], Weighting::Linear { l_max: 2.5 }).unwrap();
        let spec = EncodingSpec::new(FiltrationKind::Rips { max_edge: 2.5 }, 1, pi);
        let j = encoding_jacobian(&ds.clouds[1], &spec).unwrap();
        assert_eq!(j.encoding.diagram.len(), 1);
        let s = svd_spectrum(&j, DEFAULT_RANK_RTOL).unwrap();
        let r = s.singular_values.len();
        assert_eq!(r, 80);
        assert!(s.rank <= 2);
        let qtq = s.right_vectors.transpose() * &s.right_vectors;
        assert!((qtq - DMatrix::<f64>::identity(r, r)).amax() < 1e-10);
        let ptp = s.left_vectors.transpose() * &s.left_vectors;
        assert!((ptp - DMatrix::<f64>::identity(r, r)).amax() < 1e-10);
        let recon = &s.left_vectors * DMatrix::from_diagonal(&DVector::from_vec(s.singular_values.clone())) * s.right_vectors.transpose();
        assert!((&recon - &j.matrix).norm() <= 1e-12 * j.matrix.norm());
        assert!((j.top_singular_value() - s.singular_values[0]).abs() <= 1e-12 * s.singular_values[0]);
    }

    #[test]
    fn three_norm_formulas_agree() {
        let x = rfp(4);
        let j = encoding_jacobian(&x, &rips_spec(1.0)).unwrap();
        let s = svd_spectrum(&j, DEFAULT_RANK_RTOL).unwrap();
        let g = GramMatrix::from_jacobian(&j);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            let v: Vec<f64> = (0..j.ncols()).map(|_| rng.random::<f64>() - 0.5).collect();
            let vv = DVector::from_column_slice(&v);
            let direct = pullback_norm(&j, &v, false).unwrap();
            let quad = (vv.transpose() * &g.0 * &vv)[(0, 0)].max(0.0).sqrt();
            let spectral = s
                .singular_values
                .iter()
                .enumerate()
                .map(|(i, l)| (l * s.right_vectors.column(i).dot(&vv)).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!((direct - quad).abs() < 1e-9 * direct.max(1.0));
            assert!((direct - spectral).abs() < 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn isotropic_unit_ball() {
        let c = 2.5;
        let mut m = DMatrix::<f64>::zeros(3, 4);
        m[(0, 0)] = c;
        m[(1, 2)] = c;
        m[(2, 3)] = c;
        let s = svd_of(&m, DEFAULT_RANK_RTOL).unwrap();
        let axes = unit_ball_axes(&s);
        assert_eq!(axes.len(), 3);
        assert!(axes.iter().all(|a| (a.semi_length - 1.0 / c).abs() < 1e-15));
    }

    #[test]
    fn bures_examples() {
        let a = GramMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 4.0]))).unwrap();
        let b = GramMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0]))).unwrap();
        assert!((bures_wasserstein(&a, &b, Some(0.0)).unwrap() - 2f64.sqrt()).abs() < 1e-9);
        assert!(bures_wasserstein(&a, &a, None).unwrap() < 1e-7);
        let neg = GramMatrix::new(DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0]))).unwrap();
        assert!(bures_wasserstein(&a, &neg, None).is_err());
        assert!(GramMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0])).is_err());
    }

    #[test]
    fn gram_matrix_is_psd() {
        let x = rfp(5);
        let j = encoding_jacobian(&x, &rips_spec(1.0)).unwrap();
        let g = GramMatrix::from_jacobian(&j);
        assert!((&g.0 - g.0.transpose()).amax() <= 1e-12 * g.0.amax());
        let eig = g.0.clone().symmetric_eigen();
        assert!(eig.eigenvalues.iter().all(|&v| v >= -1e-10 * g.0.trace()));
    }

    #[test]
    fn alignment_with_top_vector() {
        let x = rfp(6);
        let j = encoding_jacobian(&x, &rips_spec(1.0)).unwrap();
        let s = svd_spectrum(&j, DEFAULT_RANK_RTOL).unwrap();
        let q1: Vec<f64> = s.q(0).iter().copied().collect();
        let table = alignment_table(&[s.clone(), s], &[vec![q1.clone(), q1]], &[0, 1], 4).unwrap();
        assert!((table[0][0] - 1.0).abs() < 1e-12);
        assert!(table[0][1..].iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn averaging() {
        assert_eq!(mean_and_stderr(&[0.0, 0.0, 0.0]).unwrap(), (0.0, 0.0));
        assert!(mean_and_stderr(&[]).is_err());
        let (m, se) = mean_and_stderr(&[1.0, 3.0]).unwrap();
        assert_eq!(m, 2.0);
        assert!((se - 1.0).abs() < 1e-15);
    }

    #[test]
    fn circle_saliency_peaks_on_template_vertices() {
        let x = gen_circle(24, 1e-3, 4).unwrap();
        let spec = EncodingSpec::new(
            FiltrationKind::Rips { max_edge: 2.5 },
            1,
            PIParams::new(20, 1e-2, [0.0, 2.0], [0.0, 2.0], Weighting::Linear { l_max: 1.0 }).unwrap(),
        );
        let j = encoding_jacobian(&x, &spec).unwrap();
        let sal = saliency_from_jacobian(&j);
        let mut template: Vec<u32> = j
            .encoding
            .diagram
            .pairs
            .iter()
            .flat_map(|p| p.birth_simplex.vertices().iter().chain(p.death_simplex.as_ref().map(|d| d.vertices()).unwrap_or(&[])).copied().collect::<Vec<_>>())
            .collect();
        template.sort_unstable();
        template.dedup();
        let mut ranked: Vec<usize> = (0..24).collect();
        ranked.sort_by(|&a, &b| sal[b].total_cmp(&sal[a]));
        for &p in &ranked[..template.len().min(3)] {
            assert!(template.contains(&(p as u32)), "point {p} not in template {template:?}");
        }
        assert!(sal.iter().enumerate().filter(|(i, _)| !template.contains(&(*i as u32))).all(|(_, &s)| s == 0.0));
    }

    fn random_psd(rng: &mut ChaCha8Rng, n: usize, rank: usize) -> GramMatrix {
        let f = DMatrix::from_fn(n, rank, |_, _| rng.random::<f64>() - 0.5);
        GramMatrix::from_jacobian_like(&f)
    }

    impl GramMatrix {
        fn from_jacobian_like(f: &DMatrix<f64>) -> Self {
            let g = f * f.transpose();
            GramMatrix((&g + g.transpose()) * 0.5)
        }
    }

    #[test]
    fn bures_nearly_singular_inputs() {
        // rank-deficient A makes A^{1/2} B^{1/2} nearly singular
        for seed in [43455, 44070] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_psd(&mut rng, 5, 3);
            let b = random_psd(&mut rng, 5, 5);
            let ab = bures_wasserstein(&a, &b, None).unwrap();
            let ba = bures_wasserstein(&b, &a, None).unwrap();
            assert!((ab - ba).abs() < 1e-9, "{ab} {ba}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(52485);
        let a = random_psd(&mut rng, 2, 1);
        let d = bures_wasserstein(&a, &a, None).unwrap();
        assert!(d < 1e-7, "{d}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn bures_is_symmetric(seed in 0u64..100_000, n in 1usize..7, ra in 1usize..7, rb in 1usize..7) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_psd(&mut rng, n, ra);
            let b = random_psd(&mut rng, n, rb);
            let ab = bures_wasserstein(&a, &b, None).unwrap();
            let ba = bures_wasserstein(&b, &a, None).unwrap();
            prop_assert!((ab - ba).abs() < 1e-9, "{} {}", ab, ba);
            prop_assert!(bures_wasserstein(&a, &a, None).unwrap() < 1e-7);
        }

        #[test]
        fn bures_commuting_closed_form(d in prop::collection::vec((0.0f64..5.0, 0.0f64..5.0), 1..6), seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = d.len();
            let raw = DMatrix::from_fn(n, n, |_, _| rng.random::<f64>() - 0.5);
            let q = raw.qr().q();
            let da = DMatrix::from_diagonal(&DVector::from_iterator(n, d.iter().map(|p| p.0)));
            let db = DMatrix::from_diagonal(&DVector::from_iterator(n, d.iter().map(|p| p.1)));
            let a = GramMatrix::from_jacobian_like(&(&q * da.map(f64::sqrt)));
            let b = GramMatrix::from_jacobian_like(&(&q * db.map(f64::sqrt)));
            let expected: f64 = d.iter().map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>().sqrt();
            let got = bures_wasserstein(&a, &b, Some(0.0)).unwrap();
            prop_assert!((got - expected).abs() < 1e-6 * expected.max(1.0), "{} {}", got, expected);
        }

        #[test]
        fn spectrum_invariant_under_orthogonal_pixel_maps(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let m = DMatrix::from_fn(12, 8, |_, _| rng.random::<f64>() - 0.5);
            let q = DMatrix::from_fn(12, 12, |_, _| rng.random::<f64>() - 0.5).qr().q();
            let a = svd_of(&m, DEFAULT_RANK_RTOL).unwrap();
            let b = svd_of(&(q * &m), DEFAULT_RANK_RTOL).unwrap();
            for (x, y) in a.singular_values.iter().zip(&b.singular_values) {
                prop_assert!((x - y).abs() < 1e-10);
            }
        }
    }
}

//! One function per subcommand. Clouds are processed in parallel; anything
//! averaged over the dataset is reduced in sorted cloud-id order.

use anyhow::{anyhow, bail, Result};
use pbgeom::datagen::{ellipse_grid, gen_circle_classes, rfp_dataset, Dataset, Jitter};
use pbgeom::filtration::GenericityReport;
use pbgeom::geometry::io::fmt_f64;
use pbgeom::pimage::Weighting;
use pbgeom::pullback::{
    alignment, bures_wasserstein, encode, encoding_jacobian, finite_difference_jacobian, max_relative_error,
    mean_and_stderr, pullback_norm, reduction_order, saliency_from_jacobian, svd_spectrum, unit_ball_axes,
    EncodingJacobian, EncodingSpec, GramMatrix,
};
use pbgeom::vectorfields::{default_kinds, gradient_field, perturbation_field, PerturbationKind};
use pbgeom::PointCloud;
use rayon::prelude::*;

use crate::config::{Generator, RunConfig};
use crate::output::Output;

/// Floor below which finite-difference entries are ignored by `validate-jacobian`.
pub const FD_FLOOR: f64 = 1e-8;

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    if let Some(dir) = &cfg.dataset.dir {
        return Ok(Dataset::load_dir(dir)?);
    }
    let jitter = |std: f64| (std > 0.0).then_some(Jitter { std, seed: cfg.seed });
    let ds = match cfg.dataset.generate.as_ref().ok_or_else(|| anyhow!("no dataset configured"))? {
        Generator::Rfp { n_points, jitter: s } => rfp_dataset(*n_points, jitter(*s))?,
        Generator::CircleClasses {
            n_clouds,
            n_points,
            dilation,
            jitter: s,
        } => gen_circle_classes(*n_clouds, *n_points, *dilation, *s, cfg.seed)?,
        Generator::EllipseGrid {
            steps,
            min,
            max,
            n_points,
            jitter: s,
        } => ellipse_grid(*steps, *min, *max, *n_points, jitter(*s))?,
    };
    Ok(ds)
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| anyhow!("csv buffer: {e}"))
}

fn header(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

fn genericity_message(r: &GenericityReport) -> String {
    format!(
        "non-generic input: {} tie groups, {} edges within tolerance of max_edge; template refined deterministically",
        r.ties.len(),
        r.near_threshold_edges.len()
    )
}

fn ids(data: &Dataset) -> Vec<String> {
    (0..data.len()).map(|i| data.cloud_id(i)).collect()
}

fn jacobians(data: &Dataset, spec: &EncodingSpec) -> Result<Vec<EncodingJacobian>> {
    Ok(data
        .clouds
        .par_iter()
        .map(|x| encoding_jacobian(x, spec))
        .collect::<pbgeom::Result<Vec<_>>>()?)
}

fn warn_nongeneric(out: &mut Output, data: &Dataset, js: &[EncodingJacobian], cell: Option<String>) {
    for (i, j) in js.iter().enumerate() {
        if !j.generic {
            out.warn(Some(data.cloud_id(i)), cell.clone(), genericity_message(&j.encoding.genericity));
        }
    }
}

pub fn gen(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    data.save_dir(out.root(), Some(cfg.seed))?;
    for i in 0..data.len() {
        out.register(&format!("{}.csv", data.cloud_id(i)))?;
    }
    out.register("manifest.json")
}

pub fn pd(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let encs = data
        .clouds
        .par_iter()
        .map(|x| encode(x, &cfg.encoding))
        .collect::<pbgeom::Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for (id, e) in ids(data).into_iter().zip(&encs) {
        out.write_with(&format!("pd/{id}.csv"), |b| e.diagram.write_csv(b))?;
        if !e.genericity.is_generic() {
            out.warn(Some(id.clone()), None, genericity_message(&e.genericity));
        }
        rows.push(vec![
            id,
            e.diagram.len().to_string(),
            fmt_f64(e.cap),
            e.genericity.is_generic().to_string(),
        ]);
    }
    out.write("pd_summary.csv", &csv_bytes(&header(&["cloud", "n_pairs", "cap", "generic"]), &rows)?)
}

pub fn pi(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let encs = data
        .clouds
        .par_iter()
        .map(|x| encode(x, &cfg.encoding))
        .collect::<pbgeom::Result<Vec<_>>>()?;
    for (id, e) in ids(data).into_iter().zip(&encs) {
        out.write_with(&format!("pi/{id}.csv"), |b| e.image.write_csv(b))?;
        if !e.genericity.is_generic() {
            out.warn(Some(id), None, genericity_message(&e.genericity));
        }
    }
    Ok(())
}

pub fn jacobian(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let js = jacobians(data, &cfg.encoding)?;
    warn_nongeneric(out, data, &js, None);
    let mut rows = Vec::new();
    for (id, j) in ids(data).into_iter().zip(&js) {
        out.write_with(&format!("jacobian/{id}.bin"), |b| j.write_binary(b))?;
        rows.push(vec![
            id,
            j.nrows().to_string(),
            j.ncols().to_string(),
            fmt_f64(j.top_singular_value()),
            fmt_f64(j.matrix.norm()),
            j.generic.to_string(),
        ]);
    }
    out.write(
        "jacobian_summary.csv",
        &csv_bytes(
            &header(&["cloud", "rows", "cols", "top_singular_value", "frobenius_norm", "generic"]),
            &rows,
        )?,
    )
}

pub fn spectrum(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let per_cloud = data
        .clouds
        .par_iter()
        .map(|x| -> Result<_> {
            let j = encoding_jacobian(x, &cfg.encoding)?;
            let s = svd_spectrum(&j, cfg.rank_rtol)?;
            let mut csv = Vec::new();
            s.write_csv(&mut csv)?;
            let decay = s.decay_index(cfg.decay_threshold);
            let top = s.singular_values.first().copied().unwrap_or(0.0);
            Ok((csv, s.rank, decay, top, s.normalized(), j.generic, j.encoding.genericity))
        })
        .collect::<Result<Vec<_>>>()?;
    let names = ids(data);
    let mut rows = Vec::new();
    for (id, (csv, rank, decay, top, _, generic, report)) in names.iter().zip(&per_cloud) {
        out.write(&format!("spectrum/{id}.csv"), csv)?;
        if !generic {
            out.warn(Some(id.clone()), None, genericity_message(report));
        }
        rows.push(vec![
            id.clone(),
            rank.to_string(),
            decay.to_string(),
            fmt_f64(*top),
        ]);
    }
    out.write(
        "spectrum_summary.csv",
        &csv_bytes(&header(&["cloud", "rank", "decay_index", "lambda1"]), &rows)?,
    )?;
    // mean normalized spectrum over clouds with a nonzero Jacobian
    let order = reduction_order(data);
    let len = per_cloud.iter().map(|p| p.4.len()).max().unwrap_or(0);
    let mut mean_rows = Vec::with_capacity(len);
    for i in 0..len {
        let vals: Vec<f64> = order
            .iter()
            .filter_map(|&c| per_cloud[c].4.get(i).copied())
            .collect();
        let (m, se) = mean_and_stderr(&vals)?;
        mean_rows.push(vec![(i + 1).to_string(), fmt_f64(m), fmt_f64(se), vals.len().to_string()]);
    }
    out.write(
        "spectrum_mean.csv",
        &csv_bytes(
            &header(&["index", "mean_lambda_over_lambda1", "stderr", "n_clouds"]),
            &mean_rows,
        )?,
    )
}

/// The perturbations applied to cloud `c`, labelled. Curve-based families
/// are dropped from the defaults for non-planar clouds.
fn kinds_for(cfg: &RunConfig, x: &PointCloud, c: usize) -> Vec<PerturbationKind> {
    if !cfg.perturbations.is_empty() {
        return cfg.perturbations.clone();
    }
    default_kinds(x, cfg.seed.wrapping_add(c as u64))
        .into_iter()
        .filter(|k| x.dim() == 2 || !matches!(k, PerturbationKind::Wiggly { .. } | PerturbationKind::Convex { .. }))
        .collect()
}

fn kind_labels(kinds: &[PerturbationKind]) -> Vec<String> {
    kinds
        .iter()
        .enumerate()
        .map(|(i, k)| {
            let dup = kinds.iter().filter(|o| o.name() == k.name()).count() > 1;
            if dup {
                format!("{}_{i}", k.name())
            } else {
                k.name().to_string()
            }
        })
        .collect()
}

/// Unit-norm perturbation fields, `[cloud][kind]`.
fn perturbation_fields(cfg: &RunConfig, data: &Dataset) -> Result<(Vec<String>, Vec<Vec<Vec<f64>>>)> {
    let fields = data
        .clouds
        .par_iter()
        .enumerate()
        .map(|(c, x)| {
            kinds_for(cfg, x, c)
                .iter()
                .map(|k| perturbation_field(x, k, true).map(|f| f.vectors))
                .collect::<pbgeom::Result<Vec<_>>>()
        })
        .collect::<pbgeom::Result<Vec<_>>>()?;
    let labels = kind_labels(&kinds_for(cfg, &data.clouds[0], 0));
    Ok((labels, fields))
}

/// Unit-norm gradient field of the labels at every cloud.
fn gradient_fields(cfg: &RunConfig, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    if data.labels.is_none() {
        bail!("the gradient field needs a labelled dataset");
    }
    (0..data.len())
        .map(|c| {
            Ok(gradient_field(data, c, cfg.gradient.mode, cfg.gradient.align)?
                .normalized()
                .vectors)
        })
        .collect()
}

pub fn align(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let (labels, fields) = perturbation_fields(cfg, data)?;
    let per_cloud = data
        .clouds
        .par_iter()
        .zip(&fields)
        .map(|(x, fs)| -> Result<_> {
            let j = encoding_jacobian(x, &cfg.encoding)?;
            let s = svd_spectrum(&j, cfg.rank_rtol)?;
            let a: Vec<Option<Vec<f64>>> = fs.iter().map(|v| alignment(&s, v, cfg.top_k)).collect();
            Ok((a, j.generic, j.encoding.genericity))
        })
        .collect::<Result<Vec<_>>>()?;
    for (c, (_, generic, report)) in per_cloud.iter().enumerate() {
        if !generic {
            out.warn(Some(data.cloud_id(c)), None, genericity_message(report));
        }
    }
    let order = reduction_order(data);
    let mut rows = Vec::new();
    for (f, label) in labels.iter().enumerate() {
        let mut sum = vec![0.0; cfg.top_k];
        let mut n = 0usize;
        for &c in &order {
            match &per_cloud[c].0[f] {
                Some(a) => {
                    sum.iter_mut().zip(a).for_each(|(s, v)| *s += v);
                    n += 1;
                }
                None => out.warn(
                    Some(data.cloud_id(c)),
                    None,
                    format!("{label} field is zero, skipped in the alignment average"),
                ),
            }
        }
        let mut row = vec![label.clone()];
        row.extend(sum.iter().map(|s| if n > 0 { fmt_f64(s / n as f64) } else { "nan".into() }));
        row.push(n.to_string());
        rows.push(row);
    }
    let mut h = vec!["perturbation".to_string()];
    h.extend((1..=cfg.top_k).map(|i| format!("q{i}")));
    h.push("n_clouds".into());
    out.write("alignment.csv", &csv_bytes(&h, &rows)?)
}

/// Pull-back norm of `v`, or `None` when normalization is requested and the
/// Jacobian vanishes.
fn norm_or_skip(j: &EncodingJacobian, v: &[f64], normalized: bool) -> Result<Option<f64>> {
    if normalized && j.top_singular_value() == 0.0 {
        return Ok(None);
    }
    Ok(Some(pullback_norm(j, v, normalized)?))
}

/// Mean and standard error in reduction order, skipping `None` with a warning.
fn reduce_norms(
    out: &mut Output,
    data: &Dataset,
    order: &[usize],
    values: &[Option<f64>],
    what: &str,
    cell: Option<String>,
) -> Result<(f64, f64, usize)> {
    let mut kept = Vec::with_capacity(order.len());
    for &c in order {
        match values[c] {
            Some(v) => kept.push(v),
            None => out.warn(
                Some(data.cloud_id(c)),
                cell.clone(),
                format!("zero Jacobian, {what} norm undefined after normalization; cloud skipped"),
            ),
        }
    }
    if kept.is_empty() {
        return Ok((f64::NAN, f64::NAN, 0));
    }
    let (m, se) = mean_and_stderr(&kept)?;
    Ok((m, se, kept.len()))
}

pub fn pbnorm(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let (mut labels, mut fields) = perturbation_fields(cfg, data)?;
    if data.labels.is_some() {
        let g = gradient_fields(cfg, data)?;
        for (fs, v) in fields.iter_mut().zip(g) {
            fs.push(v);
        }
        labels.push("gradient".into());
    }
    let js = jacobians(data, &cfg.encoding)?;
    warn_nongeneric(out, data, &js, None);
    let order = reduction_order(data);
    let mut rows = Vec::new();
    for (f, label) in labels.iter().enumerate() {
        let values = js
            .iter()
            .zip(&fields)
            .map(|(j, fs)| norm_or_skip(j, &fs[f], cfg.normalized))
            .collect::<Result<Vec<_>>>()?;
        let (m, se, n) = reduce_norms(out, data, &order, &values, label, None)?;
        rows.push(vec![label.clone(), fmt_f64(m), fmt_f64(se), n.to_string()]);
    }
    out.write(
        "norms.csv",
        &csv_bytes(&header(&["field", "mean", "stderr", "n_clouds"]), &rows)?,
    )
}

fn gram(j: &EncodingJacobian, normalized: bool) -> GramMatrix {
    let mut g = GramMatrix::from_jacobian(j);
    let top = j.top_singular_value();
    if normalized && top > 0.0 {
        g.0 /= top * top;
    }
    g
}

pub fn bures(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let specs: Vec<&EncodingSpec> = std::iter::once(&cfg.encoding).chain(&cfg.compare).collect();
    if specs.len() < 2 {
        bail!("bures compares encodings: add at least one entry to `compare`");
    }
    let e = specs.len();
    let per_cloud = data
        .clouds
        .par_iter()
        .map(|x| -> Result<_> {
            let js = specs
                .iter()
                .map(|s| encoding_jacobian(x, s))
                .collect::<pbgeom::Result<Vec<_>>>()?;
            let gs: Vec<GramMatrix> = js.iter().map(|j| gram(j, cfg.normalized)).collect();
            let mut d = vec![0.0; e * e];
            for a in 0..e {
                for b in a + 1..e {
                    let v = bures_wasserstein(&gs[a], &gs[b], None)?;
                    d[a * e + b] = v;
                    d[b * e + a] = v;
                }
            }
            let generic = js.iter().all(|j| j.generic);
            Ok((d, generic))
        })
        .collect::<Result<Vec<_>>>()?;
    for (c, (_, generic)) in per_cloud.iter().enumerate() {
        if !generic {
            out.warn(Some(data.cloud_id(c)), None, "non-generic input under at least one encoding");
        }
    }
    let order = reduction_order(data);
    let mut mean = vec![0.0; e * e];
    for &c in &order {
        mean.iter_mut().zip(&per_cloud[c].0).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= order.len() as f64);
    let names: Vec<String> = (0..e).map(|i| format!("e{i}")).collect();
    let mut h = vec!["encoding".to_string()];
    h.extend(names.iter().cloned());
    let rows: Vec<Vec<String>> = (0..e)
        .map(|a| {
            let mut r = vec![names[a].clone()];
            r.extend((0..e).map(|b| fmt_f64(mean[a * e + b])));
            r
        })
        .collect();
    out.write("bures.csv", &csv_bytes(&h, &rows)?)
}

pub fn saliency(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let js = jacobians(data, &cfg.encoding)?;
    warn_nongeneric(out, data, &js, None);
    for (id, j) in ids(data).into_iter().zip(&js) {
        let rows: Vec<Vec<String>> = saliency_from_jacobian(j)
            .iter()
            .enumerate()
            .map(|(i, s)| vec![i.to_string(), fmt_f64(*s)])
            .collect();
        out.write(&format!("saliency/{id}.csv"), &csv_bytes(&header(&["index", "score"]), &rows)?)?;
    }
    Ok(())
}

pub fn gradfield(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    if data.labels.is_none() {
        bail!("gradfield needs a labelled dataset");
    }
    for c in 0..data.len() {
        let f = gradient_field(data, c, cfg.gradient.mode, cfg.gradient.align)?;
        out.write_with(&format!("gradfield/{}.csv", data.cloud_id(c)), |b| f.write_csv(b))?;
    }
    Ok(())
}

pub fn unitball(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let js = jacobians(data, &cfg.encoding)?;
    warn_nongeneric(out, data, &js, None);
    for (id, j) in ids(data).into_iter().zip(&js) {
        let s = svd_spectrum(j, cfg.rank_rtol)?;
        let axes = unit_ball_axes(&s);
        if axes.is_empty() {
            out.warn(Some(id.clone()), None, "rank 0, the unit ball is unbounded in every direction");
        }
        let mut h = header(&["axis", "semi_length"]);
        h.extend((0..j.ncols()).map(|k| format!("c{k}")));
        let rows: Vec<Vec<String>> = axes
            .iter()
            .take(cfg.top_k)
            .enumerate()
            .map(|(i, a)| {
                let mut r = vec![(i + 1).to_string(), fmt_f64(a.semi_length)];
                r.extend(a.axis.iter().map(|v| fmt_f64(*v)));
                r
            })
            .collect();
        out.write(&format!("unitball/{id}.csv"), &csv_bytes(&h, &rows)?)?;
    }
    Ok(())
}

/// The field evaluated by `sweep`, unit-normalized per cloud.
fn sweep_field(cfg: &RunConfig, data: &Dataset) -> Result<Vec<Vec<f64>>> {
    if cfg.field == "gradient" {
        return gradient_fields(cfg, data);
    }
    data.clouds
        .par_iter()
        .enumerate()
        .map(|(c, x)| {
            let kinds = kinds_for(cfg, x, c);
            let labels = kind_labels(&kinds);
            let k = labels
                .iter()
                .position(|l| *l == cfg.field)
                .ok_or_else(|| anyhow!("unknown field `{}`; choose gradient or one of {labels:?}", cfg.field))?;
            Ok(perturbation_field(x, &kinds[k], true)?.vectors)
        })
        .collect()
}

pub fn sweep(cfg: &RunConfig, data: &Dataset, out: &mut Output) -> Result<()> {
    let cells = cfg.grid.cells()?;
    let specs = cells
        .iter()
        .map(|c| c.apply(&cfg.encoding))
        .collect::<Result<Vec<_>>>()?;
    let field = sweep_field(cfg, data)?;
    let n = data.len();
    let units: Vec<(usize, usize)> = (0..specs.len()).flat_map(|s| (0..n).map(move |c| (s, c))).collect();
    let results = units
        .par_iter()
        .map(|&(s, c)| -> Result<_> {
            let j = encoding_jacobian(&data.clouds[c], &specs[s])?;
            let rank = svd_spectrum(&j, cfg.rank_rtol)?.rank;
            let norm = norm_or_skip(&j, &field[c], cfg.normalized)?;
            Ok((rank, norm, j.generic, j.encoding.genericity))
        })
        .collect::<Result<Vec<_>>>()?;
    let order = reduction_order(data);
    let mut rows = Vec::with_capacity(specs.len());
    for (s, spec) in specs.iter().enumerate() {
        let cell = &results[s * n..(s + 1) * n];
        let label = cells[s].to_string();
        for &c in &order {
            if !cell[c].2 {
                out.warn(Some(data.cloud_id(c)), Some(label.clone()), genericity_message(&cell[c].3));
            }
        }
        let ranks: Vec<f64> = order.iter().map(|&c| cell[c].0 as f64).collect();
        let mean_rank = ranks.iter().sum::<f64>() / ranks.len() as f64;
        let norms: Vec<Option<f64>> = cell.iter().map(|u| u.1).collect();
        let (m, se, kept) = reduce_norms(out, data, &order, &norms, &cfg.field, Some(label))?;
        let nongeneric = cell.iter().filter(|u| !u.2).count();
        let (weighting, l_max, k_mean, s2, kappa) = match spec.pi.weighting {
            Weighting::Linear { l_max } => ("linear", fmt_f64(l_max), String::new(), String::new(), String::new()),
            Weighting::Beta { k_mean, s2, kappa } => (
                "beta",
                String::new(),
                fmt_f64(k_mean),
                fmt_f64(s2),
                fmt_f64(kappa),
            ),
        };
        rows.push(vec![
            s.to_string(),
            spec.pi.resolution.to_string(),
            fmt_f64(spec.pi.variance),
            weighting.to_string(),
            l_max,
            k_mean,
            s2,
            kappa,
            fmt_f64(mean_rank),
            fmt_f64(m),
            fmt_f64(se),
            kept.to_string(),
            nongeneric.to_string(),
        ]);
    }
    out.write(
        "sweep.csv",
        &csv_bytes(
            &header(&[
                "cell",
                "resolution",
                "variance",
                "weighting",
                "l_max",
                "k_mean",
                "s2",
                "kappa",
                "mean_rank",
                "mean_pullback_norm",
                "stderr_pullback_norm",
                "n_clouds",
                "n_nongeneric",
            ]),
            &rows,
        )?,
    )
}

/// Compares the analytic Jacobian with central differences on the first
/// `limit` clouds. Returns whether every cloud is within `fd_tolerance`.
pub fn validate_jacobian(cfg: &RunConfig, data: &Dataset, out: &mut Output, limit: usize) -> Result<bool> {
    let n = data.len().min(limit);
    let errs = data.clouds[..n]
        .par_iter()
        .map(|x| -> Result<_> {
            let j = encoding_jacobian(x, &cfg.encoding)?;
            let fd = finite_difference_jacobian(x, &cfg.encoding, cfg.fd_step)?;
            Ok((max_relative_error(&j.matrix, &fd, FD_FLOOR), j.generic))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    let mut ok = true;
    for (c, (err, generic)) in errs.iter().enumerate() {
        let pass = *err < cfg.fd_tolerance;
        ok &= pass;
        if !pass {
            out.warn(
                Some(data.cloud_id(c)),
                None,
                format!("max relative error {err:.3e} exceeds {:.1e}", cfg.fd_tolerance),
            );
        }
        rows.push(vec![data.cloud_id(c), fmt_f64(*err), generic.to_string(), pass.to_string()]);
    }
    out.write(
        "validate_jacobian.csv",
        &csv_bytes(&header(&["cloud", "max_relative_error", "generic", "pass"]), &rows)?,
    )?;
    Ok(ok)
}

//! Persistence pairs over GF(2) with the generating simplices of every pair.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::filtration::{argmax_vertex, FilteredComplex, FiltrationKind, Simplex};
use crate::geometry::io::fmt_f64;

/// A birth–death pair together with the simplices that create and destroy it.
#[derive(Debug, Clone, PartialEq)]
pub struct PersistencePair {
    pub dim: usize,
    pub birth_simplex: Simplex,
    /// `None` for an essential class.
    pub death_simplex: Option<Simplex>,
    pub birth: f64,
    /// `+inf` for an essential class until capped.
    pub death: f64,
}

impl PersistencePair {
    pub fn is_essential(&self) -> bool {
        self.death_simplex.is_none()
    }

    pub fn lifespan(&self) -> f64 {
        self.death - self.birth
    }
}

/// Degree-`k` persistence diagram. Zero-lifespan pairs are not included.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagram {
    pub pairs: Vec<PersistencePair>,
    pub k: usize,
    /// Value that replaced infinite deaths, once capped.
    pub essential_cap: Option<f64>,
}

impl Diagram {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn is_capped(&self) -> bool {
        self.pairs.iter().all(|p| p.death.is_finite())
    }

    /// CSV rows `dim,birth,death,birth_simplex,death_simplex`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["dim", "birth", "death", "birth_simplex", "death_simplex"])?;
        for p in &self.pairs {
            let death = if p.death.is_finite() {
                fmt_f64(p.death)
            } else {
                "inf".into()
            };
            let ds = p
                .death_simplex
                .map(|s| s.to_string())
                .unwrap_or_default();
            wtr.write_record([
                p.dim.to_string(),
                fmt_f64(p.birth),
                death,
                p.birth_simplex.to_string(),
                ds,
            ])?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// All pairs of degrees `0..=max_degree`, including zero-lifespan pairs,
/// indexed by degree.
#[derive(Debug, Clone)]
pub struct PairSet {
    pub by_degree: Vec<Vec<PersistencePair>>,
}

fn make_pair(c: &FilteredComplex, dim: usize, b: usize, d: Option<usize>) -> PersistencePair {
    PersistencePair {
        dim,
        birth_simplex: c.simplices()[b],
        death_simplex: d.map(|d| c.simplices()[d]),
        birth: c.values()[b],
        death: d.map_or(f64::INFINITY, |d| c.values()[d]),
    }
}

fn find(parent: &mut [usize], mut v: usize) -> usize {
    while parent[v] != v {
        parent[v] = parent[parent[v]];
        v = parent[v];
    }
    v
}

/// Degree-0 pairs by union–find with the elder rule, as global indices.
fn degree_zero(c: &FilteredComplex) -> (Vec<(usize, Option<usize>)>, Vec<bool>) {
    let n = c.n_points();
    let mut vertex_index = vec![0usize; n];
    for (i, s) in c.simplices().iter().enumerate() {
        if s.dim() == 0 {
            vertex_index[s.vertices()[0] as usize] = i;
        }
    }
    // Each root remembers its oldest vertex's global index.
    let mut parent: Vec<usize> = (0..n).collect();
    let mut pairs = Vec::new();
    let mut killed_edges = vec![false; c.len()];
    for (i, s) in c.simplices().iter().enumerate() {
        if s.dim() != 1 {
            continue;
        }
        let v = s.vertices();
        let (ra, rb) = (
            find(&mut parent, v[0] as usize),
            find(&mut parent, v[1] as usize),
        );
        if ra == rb {
            continue;
        }
        let (elder, younger) = if vertex_index[ra] < vertex_index[rb] {
            (ra, rb)
        } else {
            (rb, ra)
        };
        pairs.push((vertex_index[younger], Some(i)));
        killed_edges[i] = true;
        parent[younger] = elder;
    }
    for v in 0..n {
        if find(&mut parent, v) == v {
            pairs.push((vertex_index[v], None));
        }
    }
    (pairs, killed_edges)
}

fn symmetric_difference(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// Sorted global indices of the cofaces of `s`.
fn coboundary(c: &FilteredComplex, s: &Simplex, index: &HashMap<Simplex, u32>) -> Vec<u32> {
    let verts = s.vertices();
    let pivot = verts
        .iter()
        .min_by_key(|&&v| c.neighbors(v).len())
        .copied()
        .expect("nonempty simplex");
    let mut out: Vec<u32> = c
        .neighbors(pivot)
        .iter()
        .filter(|&&w| {
            !verts.contains(&w)
                && verts
                    .iter()
                    .all(|&v| v == pivot || c.neighbors(v).binary_search(&w).is_ok())
        })
        .filter_map(|&w| s.with_vertex(w).and_then(|t| index.get(&t).copied()))
        .collect();
    out.sort_unstable();
    out
}

/// Degree-`k` pairs (k ≥ 1) by reducing the coboundary matrix from the
/// latest simplex backwards. `cleared` marks `k`-simplices already known to
/// be deaths in degree `k-1`.
fn degree_k(c: &FilteredComplex, k: usize, cleared: &[bool]) -> (Vec<(usize, Option<usize>)>, Vec<bool>) {
    let index: HashMap<Simplex, u32> = c
        .simplices()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.dim() == k + 1)
        .map(|(i, s)| (*s, i as u32))
        .collect();
    let mut owner: HashMap<u32, Vec<u32>> = HashMap::new();
    let mut pairs = Vec::new();
    let mut killed = vec![false; c.len()];
    for (i, s) in c.simplices().iter().enumerate().rev() {
        if s.dim() != k || cleared[i] {
            continue;
        }
        let mut col = coboundary(c, s, &index);
        loop {
            let Some(&p) = col.first() else {
                pairs.push((i, None));
                break;
            };
            match owner.get(&p) {
                Some(other) => col = symmetric_difference(&col, other),
                None => {
                    pairs.push((i, Some(p as usize)));
                    killed[p as usize] = true;
                    owner.insert(p, col);
                    break;
                }
            }
        }
    }
    pairs.sort_unstable();
    (pairs, killed)
}

/// Pairs in every degree `0..=max_degree`, zero-lifespan pairs included.
///
/// Degree 0 uses union–find; higher degrees reduce the coboundary matrix
/// with clearing. The resulting simplex pairing coincides with the one from
/// left-to-right reduction of the boundary matrix in the same order.
pub fn persistence_pairs(c: &FilteredComplex, max_degree: usize) -> Result<PairSet> {
    if max_degree + 1 > c.max_dim() {
        return invalid(format!(
            "degree {max_degree} needs simplices of dimension {}, complex stops at {}",
            max_degree + 1,
            c.max_dim()
        ));
    }
    check_order(c)?;
    let mut by_degree = Vec::with_capacity(max_degree + 1);
    let (p0, mut killed) = degree_zero(c);
    by_degree.push(
        p0.into_iter()
            .map(|(b, d)| make_pair(c, 0, b, d))
            .collect::<Vec<_>>(),
    );
    for k in 1..=max_degree {
        let (pk, next) = degree_k(c, k, &killed);
        by_degree.push(pk.into_iter().map(|(b, d)| make_pair(c, k, b, d)).collect());
        killed = next;
    }
    Ok(PairSet { by_degree })
}

/// Cheap order check: values nondecreasing and dimensions never exceeding
/// what has been seen of their faces.
fn check_order(c: &FilteredComplex) -> Result<()> {
    let v = c.values();
    if let Some(i) = (1..v.len()).find(|&i| v[i] < v[i - 1] || v[i].is_nan()) {
        return Err(Error::Invariant(format!(
            "filtration values decrease at position {i}"
        )));
    }
    Ok(())
}

/// Degree-`k` diagram: nonzero-lifespan pairs and essential classes, each
/// carrying its barcode template.
pub fn reduce(c: &FilteredComplex, k: usize) -> Result<Diagram> {
    let all = persistence_pairs(c, k)?;
    let pairs = all.by_degree[k]
        .iter()
        .filter(|p| p.death > p.birth)
        .cloned()
        .collect();
    Ok(Diagram {
        pairs,
        k,
        essential_cap: None,
    })
}

/// Replaces infinite deaths with `cap`.
pub fn cap_infinite(diagram: &Diagram, cap: f64) -> Result<Diagram> {
    if !cap.is_finite() {
        return invalid("cap must be finite");
    }
    for p in &diagram.pairs {
        let bound = if p.is_essential() { p.birth } else { p.death };
        if bound > cap {
            return invalid(format!(
                "cap {cap} lies below a {} value {bound}",
                if p.is_essential() { "birth" } else { "death" }
            ));
        }
    }
    let mut out = diagram.clone();
    let mut any = false;
    for p in out.pairs.iter_mut().filter(|p| p.is_essential()) {
        p.death = cap;
        any = true;
    }
    if any || out.essential_cap.is_none() {
        out.essential_cap = Some(cap);
    }
    Ok(out)
}

/// How the death value of essential classes is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum EssentialCap {
    /// A constant.
    Fixed(f64),
    /// The edge-length threshold of the filtration.
    MaxEdge,
    /// The largest vertex value; depends on the data.
    MaxVertexValue,
    /// The larger of the threshold and the largest simplex value; depends on
    /// the data whenever a simplex value exceeds the threshold.
    MaxFiltrationValue,
    /// Per-kind default: `MaxEdge` for Rips, `MaxFiltrationValue` for DTM,
    /// `MaxVertexValue` for height.
    Auto,
}

impl EssentialCap {
    fn concrete(self, kind: &FiltrationKind) -> EssentialCap {
        match self {
            EssentialCap::Auto => match kind {
                FiltrationKind::Rips { .. } => EssentialCap::MaxEdge,
                FiltrationKind::Dtm { .. } => EssentialCap::MaxFiltrationValue,
                FiltrationKind::Height { .. } => EssentialCap::MaxVertexValue,
            },
            other => other,
        }
    }

    /// The cap value and, when it depends on the data, the simplex whose
    /// filtration value defines it.
    pub fn resolve(self, c: &FilteredComplex) -> (f64, Option<Simplex>) {
        let max_edge = c.kind().max_edge();
        match self.concrete(c.kind()) {
            EssentialCap::Fixed(v) => (v, None),
            EssentialCap::MaxEdge => (max_edge, None),
            EssentialCap::MaxVertexValue => {
                let all: Vec<u32> = (0..c.n_points() as u32).collect();
                let v = argmax_vertex(all.iter(), c.vertex_values());
                (c.vertex_values()[v as usize], Some(Simplex::vertex(v)))
            }
            EssentialCap::MaxFiltrationValue => match (c.simplices().last(), c.values().last()) {
                (Some(s), Some(&v)) if v > max_edge => (v, Some(*s)),
                _ => (max_edge, None),
            },
            EssentialCap::Auto => unreachable!("resolved above"),
        }
    }
}

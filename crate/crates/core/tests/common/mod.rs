#![allow(dead_code)]

use pbgeom::filtration::{FilteredComplex, Simplex};
use std::collections::HashMap;

/// Rank over GF(2) of a set of bit vectors.
fn rank(mut rows: Vec<u128>) -> usize {
    let mut r = 0;
    for bit in 0..128 {
        let mask = 1u128 << bit;
        let Some(p) = (r..rows.len()).find(|&i| rows[i] & mask != 0) else { continue };
        rows.swap(r, p);
        let pivot = rows[r];
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && *row & mask != 0 {
                *row ^= pivot;
            }
        }
        r += 1;
    }
    r
}

/// Basis of the kernel of the GF(2) map sending basis vector `i` to `images[i]`.
fn kernel(images: &[u128]) -> Vec<u128> {
    // Augmented elimination: (image | identity).
    let n = images.len();
    assert!(n <= 128);
    let mut rows: Vec<(u128, u128)> = images.iter().enumerate().map(|(i, &v)| (v, 1u128 << i)).collect();
    let mut r = 0;
    for bit in 0..128 {
        let mask = 1u128 << bit;
        let Some(p) = (r..n).find(|&i| rows[i].0 & mask != 0) else { continue };
        rows.swap(r, p);
        let pivot = rows[r];
        for (i, row) in rows.iter_mut().enumerate() {
            if i != r && row.0 & mask != 0 {
                row.0 ^= pivot.0;
                row.1 ^= pivot.1;
            }
        }
        r += 1;
    }
    rows[r..].iter().map(|row| row.1).collect()
}

/// Pairs `(birth index, death index or None)` in degree `k`, with indices
/// into the complex's filtration order, derived from persistent Betti numbers
/// of prefix subcomplexes. Zero-lifespan pairs are included.
pub fn brute_force_pairs(c: &FilteredComplex, k: usize) -> Vec<(usize, Option<usize>)> {
    let simplices = c.simplices();
    let kpos: Vec<usize> = (0..simplices.len()).filter(|&i| simplices[i].dim() == k).collect();
    let k1pos: Vec<usize> = (0..simplices.len()).filter(|&i| simplices[i].dim() == k + 1).collect();
    assert!(kpos.len() <= 128, "oracle limited to 128 simplices per dimension");
    let local: HashMap<Simplex, usize> = kpos.iter().enumerate().map(|(j, &i)| (simplices[i], j)).collect();
    let kminus: HashMap<Simplex, usize> = if k == 0 {
        HashMap::new()
    } else {
        (0..simplices.len())
            .filter(|&i| simplices[i].dim() == k - 1)
            .enumerate()
            .map(|(j, i)| (simplices[i], j))
            .collect()
    };
    let bd_k: Vec<u128> = kpos
        .iter()
        .map(|&i| simplices[i].faces().fold(0u128, |acc, f| acc | (1u128 << kminus[&f])))
        .collect();
    let bd_k1: Vec<u128> = k1pos
        .iter()
        .map(|&i| simplices[i].faces().fold(0u128, |acc, f| acc | (1u128 << local[&f])))
        .collect();

    // beta(a, b): rank of H_k(K_a) -> H_k(K_b), where K_t holds the simplices
    // at positions <= t; a = None means the empty complex.
    let beta = |a: Option<usize>, b: usize| -> usize {
        let Some(a) = a else { return 0 };
        let na = kpos.iter().filter(|&&i| i <= a).count();
        let z: Vec<u128> = kernel(&bd_k[..na])
            .into_iter()
            .map(|combo| (0..na).filter(|j| combo >> j & 1 == 1).fold(0u128, |acc, j| acc | (1u128 << j)))
            .collect();
        let nb = k1pos.iter().filter(|&&i| i <= b).count();
        let bnd: Vec<u128> = bd_k1[..nb].to_vec();
        let rz = z.len();
        let rb = rank(bnd.clone());
        let mut both = z;
        both.extend(bnd);
        let sum = rank(both);
        rz - (rz + rb - sum)
    };

    let last = simplices.len() - 1;
    let mut pairs = Vec::new();
    for &i in &kpos {
        let prev = if i == 0 { None } else { Some(i - 1) };
        let mut found = false;
        for &j in &k1pos {
            if j < i {
                continue;
            }
            let m = beta(Some(i), j - 1) as i64 - beta(Some(i), j) as i64 - beta(prev, j - 1) as i64
                + beta(prev, j) as i64;
            assert!(m == 0 || m == 1, "multiplicity {m}");
            if m == 1 {
                pairs.push((i, Some(j)));
                found = true;
            }
        }
        let ess = beta(Some(i), last) as i64 - beta(prev, last) as i64;
        assert!(ess == 0 || ess == 1);
        if ess == 1 {
            assert!(!found);
            pairs.push((i, None));
        }
    }
    pairs.sort_unstable();
    pairs
}

//! Two-dimensional projections of representation sets.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::eval::linalg::{symmetric_eigen, top_eigenpairs};

/// Principal-component projection onto the top two components.
#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit component vectors, highest variance first.
    pub components: [Vec<f64>; 2],
    /// Variance along each component.
    pub variances: [f64; 2],
    /// Set when the data has rank below two; the second component then
    /// carries (numerically) zero variance.
    pub rank_deficient: bool,
    pub coords: Vec<[f64; 2]>,
}

fn check_rows(rows: &[Vec<f64>], min: usize) -> Result<usize> {
    if rows.len() < min {
        return Err(Error::Usage(format!("need at least {min} points, got {}", rows.len())));
    }
    let d = rows[0].len();
    if d == 0 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Data("points must share one non-zero dimension".into()));
    }
    Ok(d)
}

pub fn pca_2d(rows: &[Vec<f64>]) -> Result<Pca> {
    let d = check_rows(rows, 3)?;
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..d).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let mut cov = vec![0.0; d * d];
    for r in rows {
        for i in 0..d {
            let a = r[i] - mean[i];
            for j in i..d {
                cov[i * d + j] += a * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i * d + j] /= n - 1.0;
            cov[j * d + i] = cov[i * d + j];
        }
    }
    let (vals, vecs) = symmetric_eigen(&cov, d);
    let mut comps = [vecs[0].clone(), vecs.get(1).cloned().unwrap_or_else(|| vec![0.0; d])];
    let total: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let v0 = vals[0].max(0.0);
    let v1 = vals.get(1).copied().unwrap_or(0.0).max(0.0);
    let rank_deficient = d < 2 || v1 <= 1e-12 * total.max(f64::MIN_POSITIVE);
    // sign convention: largest-magnitude entry positive
    for c in comps.iter_mut() {
        let big = c.iter().copied().fold(0.0, |m: f64, x| if x.abs() > m.abs() { x } else { m });
        if big < 0.0 {
            c.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let coords = rows
        .iter()
        .map(|r| {
            let p = |c: &[f64]| r.iter().zip(&mean).zip(c).map(|((x, m), w)| (x - m) * w).sum::<f64>();
            [p(&comps[0]), p(&comps[1])]
        })
        .collect();
    Ok(Pca { mean, components: comps, variances: [v0, if rank_deficient { 0.0 } else { v1 }], rank_deficient, coords })
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Geodesic distances over the symmetrised k-nearest-neighbour graph.
pub fn geodesic_distances(rows: &[Vec<f64>], k: usize) -> Result<Vec<Vec<f64>>> {
    check_rows(rows, 2)?;
    if k < 1 {
        return Err(Error::Usage("k_neighbors must be at least 1".into()));
    }
    let n = rows.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for i in 0..n {
        let mut d: Vec<(f64, usize)> = (0..n).filter(|&j| j != i).map(|j| (euclid(&rows[i], &rows[j]), j)).collect();
        d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(w, j) in d.iter().take(k) {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
    }
    let mut dist = vec![vec![f64::INFINITY; n]; n];
    for (s, row) in dist.iter_mut().enumerate() {
        row[s] = 0.0;
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((OrdF64(0.0), s)));
        while let Some(Reverse((OrdF64(du), u))) = heap.pop() {
            if du > row[u] {
                continue;
            }
            for &(v, w) in &adj[u] {
                let nd = du + w;
                if nd < row[v] {
                    row[v] = nd;
                    heap.push(Reverse((OrdF64(nd), v)));
                }
            }
        }
    }
    if dist[0].iter().any(|d| d.is_infinite()) {
        let mut sizes = Vec::new();
        let mut seen = vec![false; n];
        for s in 0..n {
            if !seen[s] {
                let members: Vec<usize> = (0..n).filter(|&j| dist[s][j].is_finite()).collect();
                members.iter().for_each(|&j| seen[j] = true);
                sizes.push(members.len());
            }
        }
        sizes.sort_unstable_by(|a, b| b.cmp(a));
        return Err(Error::Disconnected { sizes });
    }
    Ok(dist)
}

#[derive(Clone, Copy)]
struct OrdF64(f64);

impl PartialEq for OrdF64 {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other).is_eq()
    }
}

impl Eq for OrdF64 {}

impl PartialOrd for OrdF64 {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for OrdF64 {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Classical multidimensional scaling of a distance matrix into two dimensions.
pub fn classical_mds(dist: &[Vec<f64>]) -> Vec<[f64; 2]> {
    let n = dist.len();
    let sq: Vec<f64> = dist.iter().flat_map(|r| r.iter().map(|d| d * d)).collect();
    let row_mean: Vec<f64> = (0..n).map(|i| sq[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let mut b = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            b[i * n + j] = -0.5 * (sq[i * n + j] - row_mean[i] - row_mean[j] + grand);
        }
    }
    let (vals, vecs) = top_eigenpairs(&b, n, 2);
    (0..n)
        .map(|i| {
            let c = |k: usize| vals.get(k).map_or(0.0, |&l| l.max(0.0).sqrt() * vecs[k][i]);
            [c(0), c(1)]
        })
        .collect()
}

/// k-NN graph, all-pairs shortest paths, classical MDS.
pub fn isomap_2d(rows: &[Vec<f64>], k: usize) -> Result<Vec<[f64; 2]>> {
    let dist = geodesic_distances(rows, k)?;
    Ok(classical_mds(&dist))
}

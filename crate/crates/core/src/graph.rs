//! KNN graph construction and the renormalized propagation operator.
//!
//! Adjacency is built per view from Euclidean distances in double precision,
//! symmetrized by union, and turned into the propagation matrix
//! `D^{-1/2} (A + I) D^{-1/2}`. A compressed neighbour list is kept alongside
//! the dense operator so products against tall matrices stay cheap on big
//! scenes.

use std::io::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::views::ViewFeatures;

/// One view's graph: binary adjacency, the renormalized propagation
/// operator, and the neighbour count the graph was built with.
#[derive(Debug, Clone)]
pub struct GraphView {
    pub adjacency: Array2<f64>,
    pub propagation: Array2<f64>,
    pub k: usize,
    /// Nonzeros of `propagation` by row, for sparse products.
    rows: Vec<Vec<(u32, f64)>>,
}

impl GraphView {
    pub fn build(features: &ViewFeatures, k: usize) -> Result<GraphView> {
        let adjacency = knn_adjacency(&features.x.view(), k)?;
        let propagation = renormalize(&adjacency.view())?;
        let rows = compress_rows(&propagation);
        Ok(GraphView {
            adjacency,
            propagation,
            k,
            rows,
        })
    }

    /// Wrap a precomputed adjacency; used by tests and ablations.
    pub fn from_adjacency(adjacency: Array2<f64>, k: usize) -> Result<GraphView> {
        let propagation = renormalize(&adjacency.view())?;
        let rows = compress_rows(&propagation);
        Ok(GraphView {
            adjacency,
            propagation,
            k,
            rows,
        })
    }

    pub fn n(&self) -> usize {
        self.adjacency.nrows()
    }

    /// `propagation * m` using the compressed rows. `m` is `n x c`.
    pub fn propagate(&self, m: &ArrayView2<f64>) -> Array2<f64> {
        let n = self.n();
        assert_eq!(m.nrows(), n, "propagate: row count mismatch");
        let c = m.ncols();
        let mut out = Array2::zeros((n, c));
        out.axis_iter_mut(ndarray::Axis(0))
            .into_par_iter()
            .enumerate()
            .for_each(|(i, mut row)| {
                for &(j, w) in &self.rows[i] {
                    let src = m.row(j as usize);
                    for (slot, &v) in row.iter_mut().zip(src.iter()) {
                        *slot += w * v;
                    }
                }
            });
        out
    }

    /// Dump the adjacency as "i j" pairs, one edge per line, row-major.
    pub fn write_coo(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        for i in 0..self.n() {
            for j in 0..self.n() {
                if self.adjacency[[i, j]] != 0.0 {
                    writeln!(&mut out, "{i} {j}").expect("write to vec");
                }
            }
        }
        std::fs::write(path, out)?;
        Ok(())
    }
}

/// Binary KNN adjacency of the columns of `x` (`d x n`), symmetrized by
/// union. Distance ties resolve toward the lower column index.
pub fn knn_adjacency(x: &ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
    let n = x.ncols();
    if n < 2 {
        return Err(Error::Data(format!("need at least 2 samples, got {n}")));
    }
    if k == 0 || k >= n {
        return Err(Error::Parameter(format!(
            "neighbour count {k} must lie in 1..={}",
            n - 1
        )));
    }
    // Squared distances via the Gram expansion; everything is f64 already.
    let gram = x.t().dot(x);
    let norms: Vec<f64> = (0..n).map(|i| gram[[i, i]]).collect();

    let neighbour_lists: Vec<Vec<usize>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut cand: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let d2 = (norms[i] + norms[j] - 2.0 * gram[[i, j]]).max(0.0);
                    (d2, j)
                })
                .collect();
            cand.select_nth_unstable_by(k - 1, |a, b| {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
            });
            cand.truncate(k);
            cand.into_iter().map(|(_, j)| j).collect()
        })
        .collect();

    let mut a = Array2::zeros((n, n));
    for (i, neighbours) in neighbour_lists.iter().enumerate() {
        for &j in neighbours {
            a[[i, j]] = 1.0;
            a[[j, i]] = 1.0;
        }
    }
    for i in 0..n {
        a[[i, i]] = 0.0;
    }
    Ok(a)
}

/// Renormalized propagation operator `D^{-1/2} (A + I) D^{-1/2}` where `D`
/// is the degree matrix of `A + I`. Requires a symmetric binary adjacency
/// with a zero diagonal.
pub fn renormalize(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Contract(format!(
            "adjacency must be square, got {}x{}",
            n,
            a.ncols()
        )));
    }
    for i in 0..n {
        if a[[i, i]] != 0.0 {
            return Err(Error::Contract(format!(
                "adjacency has a self loop at node {i}"
            )));
        }
        for j in 0..n {
            let v = a[[i, j]];
            if v != 0.0 && v != 1.0 {
                return Err(Error::Contract(format!(
                    "adjacency entry ({i},{j}) = {v} is not binary"
                )));
            }
            if v != a[[j, i]] {
                return Err(Error::Contract(format!(
                    "adjacency is not symmetric at ({i},{j})"
                )));
            }
        }
    }
    let deg: Vec<f64> = (0..n).map(|i| 1.0 + a.row(i).sum()).collect();
    let mut p = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            let tilde = a[[i, j]] + if i == j { 1.0 } else { 0.0 };
            if tilde != 0.0 {
                p[[i, j]] = tilde / (deg[i] * deg[j]).sqrt();
            }
        }
    }
    Ok(p)
}

fn compress_rows(p: &Array2<f64>) -> Vec<Vec<(u32, f64)>> {
    let n = p.nrows();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| p[[i, j]] != 0.0)
                .map(|j| (j as u32, p[[i, j]]))
                .collect()
        })
        .collect()
}

//! Normalized spectral clustering on a fused affinity.
//!
//! The affinity is symmetrically normalized, its leading eigenvectors
//! form the spectral embedding (rows l2-normalized), and k-means with
//! careful seeding assigns the final clusters. Ties and restarts are
//! deterministic for a fixed seed.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::sym_eigen_topk;

const SYMMETRY_TOL: f64 = 1e-9;
const LLOYD_MAX_ITERS: usize = 300;
const LLOYD_TOL: f64 = 1e-8;

/// Spectral embedding: rows of the top-`k` eigenvectors of
/// `D^{-1/2} Y D^{-1/2}`, l2-normalized. Zero-degree nodes get their
/// degree clamped to one; all-zero embedding rows are left at zero.
pub fn spectral_embed(y: &ArrayView2<f64>, k: usize) -> Result<Array2<f64>> {
    let n = y.nrows();
    if y.ncols() != n {
        return Err(Error::Contract(format!(
            "affinity must be square, got {}x{}",
            n,
            y.ncols()
        )));
    }
    if k < 2 || k >= n {
        return Err(Error::Parameter(format!(
            "cluster count {k} must lie in [2, {n})"
        )));
    }
    let mut max_asym = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            max_asym = max_asym.max((y[[i, j]] - y[[j, i]]).abs());
        }
    }
    if max_asym > SYMMETRY_TOL {
        return Err(Error::Contract(format!(
            "affinity is asymmetric by {max_asym:.3e}"
        )));
    }

    let degrees: Array1<f64> = y.sum_axis(Axis(1));
    let inv_sqrt: Vec<f64> = degrees
        .iter()
        .map(|&d| {
            if d.abs() < f64::MIN_POSITIVE {
                1.0
            } else {
                1.0 / d.abs().sqrt()
            }
        })
        .collect();
    let mut normalized = y.to_owned();
    for i in 0..n {
        for j in 0..n {
            normalized[[i, j]] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    // Exact symmetry for the eigensolver despite rounding above.
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (normalized[[i, j]] + normalized[[j, i]]);
            normalized[[i, j]] = avg;
            normalized[[j, i]] = avg;
        }
    }

    let eig = sym_eigen_topk(&normalized.view(), k)?;
    let mut embedding = eig.vectors;
    for mut row in embedding.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        if norm > 0.0 {
            row.mapv_inplace(|v| v / norm);
        }
    }
    Ok(embedding)
}

/// A finished k-means run.
#[derive(Debug, Clone)]
pub struct KmeansFit {
    pub labels: Vec<usize>,
    pub inertia: f64,
    pub centers: Array2<f64>,
}

/// k-means over row vectors with plus-plus seeding and restarts. The
/// winner is the restart with the lowest inertia (earliest index on ties),
/// so the result is deterministic for a fixed seed even though restarts
/// run in parallel.
pub fn kmeans(points: &ArrayView2<f64>, k: usize, seed: u64, restarts: usize) -> Result<KmeansFit> {
    let n = points.nrows();
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "k-means needs k in [1, {n}], got {k}"
        )));
    }
    if restarts == 0 {
        return Err(Error::Parameter("k-means needs at least one restart".into()));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("k-means input contains non-finite values".into()));
    }

    let owned = points.to_owned();
    let runs: Vec<(f64, usize, KmeansFit)> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let fit = lloyd_once(&owned, k, seed.wrapping_add(r as u64));
            (fit.inertia, r, fit)
        })
        .collect();
    let best = runs
        .into_iter()
        .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
        .expect("at least one restart");
    Ok(best.2)
}

fn lloyd_once(points: &Array2<f64>, k: usize, seed: u64) -> KmeansFit {
    let n = points.nrows();
    let d = points.ncols();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = plus_plus_init(points, k, &mut rng);
    let mut labels = vec![0usize; n];
    let mut inertia = f64::INFINITY;

    for _ in 0..LLOYD_MAX_ITERS {
        // Assignment (ties to the lowest center index).
        let mut new_inertia = 0.0;
        for (i, label) in labels.iter_mut().enumerate() {
            let row = points.row(i);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for c in 0..k {
                let dist = sq_dist(&row, &centers.row(c));
                if dist < best_d {
                    best_d = dist;
                    best = c;
                }
            }
            *label = best;
            new_inertia += best_d;
        }

        // Update, stealing the farthest point for empty clusters.
        let mut counts = vec![0usize; k];
        let mut sums = Array2::<f64>::zeros((k, d));
        for i in 0..n {
            counts[labels[i]] += 1;
            let mut target = sums.row_mut(labels[i]);
            target += &points.row(i);
        }
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        sq_dist(&points.row(a), &centers.row(labels[a]))
                            .total_cmp(&sq_dist(&points.row(b), &centers.row(labels[b])))
                            .then(b.cmp(&a))
                    })
                    .expect("nonempty data");
                centers.row_mut(c).assign(&points.row(far));
            } else {
                let scale = 1.0 / counts[c] as f64;
                for t in 0..d {
                    centers[[c, t]] = sums[[c, t]] * scale;
                }
            }
        }

        debug_assert!(
            new_inertia <= inertia * (1.0 + 1e-12) + 1e-12,
            "inertia increased: {inertia} -> {new_inertia}"
        );
        let converged = (inertia - new_inertia).abs() <= LLOYD_TOL * inertia.max(1e-300);
        inertia = new_inertia;
        if converged {
            break;
        }
    }

    // Final assignment against the last centers so labels and inertia match.
    let mut final_inertia = 0.0;
    for (i, label) in labels.iter_mut().enumerate() {
        let row = points.row(i);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for c in 0..k {
            let dist = sq_dist(&row, &centers.row(c));
            if dist < best_d {
                best_d = dist;
                best = c;
            }
        }
        *label = best;
        final_inertia += best_d;
    }
    KmeansFit {
        labels,
        inertia: final_inertia,
        centers,
    }
}

fn plus_plus_init(points: &Array2<f64>, k: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let n = points.nrows();
    let d = points.ncols();
    let mut centers = Array2::zeros((k, d));
    let first = rng.gen_range(0..n);
    centers.row_mut(0).assign(&points.row(first));
    let mut dists: Vec<f64> = (0..n)
        .map(|i| sq_dist(&points.row(i), &centers.row(0)))
        .collect();
    for c in 1..k {
        let total: f64 = dists.iter().sum();
        let chosen = if total <= 0.0 {
            // All remaining points coincide with a center; any choice works.
            rng.gen_range(0..n)
        } else {
            let mut threshold = rng.gen_range(0.0..total);
            let mut pick = n - 1;
            for (i, &w) in dists.iter().enumerate() {
                if threshold < w {
                    pick = i;
                    break;
                }
                threshold -= w;
            }
            pick
        };
        centers.row_mut(c).assign(&points.row(chosen));
        for (i, slot) in dists.iter_mut().enumerate() {
            let dist = sq_dist(&points.row(i), &centers.row(c));
            if dist < *slot {
                *slot = dist;
            }
        }
    }
    centers
}

fn sq_dist(a: &ndarray::ArrayView1<f64>, b: &ndarray::ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum()
}

/// Labels plus the embedding they came from.
#[derive(Debug, Clone)]
pub struct ClusterOutcome {
    pub labels: Vec<usize>,
    pub embedding: Array2<f64>,
    pub inertia: f64,
    /// Set when the affinity carried almost no off-diagonal mass, in which
    /// case the partition is arbitrary.
    pub degenerate: bool,
}

/// Spectral clustering of an affinity into `k` groups.
pub fn cluster(y: &ArrayView2<f64>, k: usize, seed: u64, restarts: usize) -> Result<ClusterOutcome> {
    let n = y.nrows();
    let off_mass: f64 = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| y[[i, j]].abs())
                .sum::<f64>()
        })
        .sum();
    let diag_mass: f64 = (0..n).map(|i| y[[i, i]].abs()).sum();
    let degenerate = off_mass <= 1e-12 * diag_mass.max(1.0);
    if degenerate {
        log::warn!(
            "affinity has almost no off-diagonal mass ({off_mass:.3e}); clustering is arbitrary"
        );
    }
    let embedding = spectral_embed(y, k)?;
    let fit = kmeans(&embedding.view(), k, seed, restarts)?;
    Ok(ClusterOutcome {
        labels: fit.labels,
        embedding,
        inertia: fit.inertia,
        degenerate,
    })
}

/// k-means directly on raw column features (baseline, no graph involved).
pub fn cluster_kmeans_raw(
    features: &ArrayView2<f64>,
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<KmeansFit> {
    let pts = features.t().to_owned();
    kmeans(&pts.view(), k, seed, restarts)
}

//! Dense and iterative symmetric eigensolvers plus an SPD solver.
//!
//! The dense path reduces the matrix to tridiagonal form with Householder
//! reflections and diagonalizes it with the implicit-shift QL iteration.
//! For problems above [`DENSE_LIMIT`] rows a Lanczos iteration with full
//! reorthogonalization extracts the leading eigenpairs; it falls back to
//! restarts from combined Ritz vectors when a cycle does not converge.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Largest problem solved by the dense eigensolver before switching to Lanczos.
pub const DENSE_LIMIT: usize = 2000;
/// Convergence tolerance on Ritz residuals.
pub const EIG_TOL: f64 = 1e-10;
/// Hard cap on matrix-vector products in the iterative solver.
pub const MAX_MATVECS: usize = 5000;

const LANCZOS_SEED: u64 = 0x5EED_1A2C;

/// Eigendecomposition of a symmetric matrix. `vectors.column(i)` pairs with
/// `values[i]`. The ordering is documented on each constructor.
#[derive(Debug, Clone)]
pub struct SymEigen {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

/// Full eigendecomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(a: &ArrayView2<f64>) -> Result<SymEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Contract(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if n == 0 {
        return Ok(SymEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    let mut z = a.to_owned();
    let mut d = vec![0.0; n];
    let mut e = vec![0.0; n];
    tred2(&mut z, &mut d, &mut e);
    tql2(&mut d, &mut e, &mut z)?;
    sort_ascending(&mut d, &mut z);
    Ok(SymEigen {
        values: Array1::from(d),
        vectors: z,
    })
}

/// Eigendecomposition of a symmetric tridiagonal matrix, eigenvalues
/// ascending. `off[i]` couples rows `i` and `i + 1`.
pub fn sym_tridiag_eigen(diag: &[f64], off: &[f64]) -> Result<SymEigen> {
    let n = diag.len();
    if n == 0 {
        return Ok(SymEigen {
            values: Array1::zeros(0),
            vectors: Array2::zeros((0, 0)),
        });
    }
    if off.len() + 1 != n {
        return Err(Error::Contract(format!(
            "tridiagonal shape mismatch: {} diagonal vs {} off-diagonal entries",
            n,
            off.len()
        )));
    }
    let mut d = diag.to_vec();
    let mut e = vec![0.0; n];
    e[1..n].copy_from_slice(off);
    let mut z = Array2::eye(n);
    tql2(&mut d, &mut e, &mut z)?;
    sort_ascending(&mut d, &mut z);
    Ok(SymEigen {
        values: Array1::from(d),
        vectors: z,
    })
}

/// Top-`k` eigenpairs by algebraic value, eigenvalues descending.
///
/// Dense problems (`n <= DENSE_LIMIT`) go through the full decomposition;
/// larger ones through Lanczos with tolerance [`EIG_TOL`].
pub fn sym_eigen_topk(a: &ArrayView2<f64>, k: usize) -> Result<SymEigen> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Contract(format!(
            "eigensolver needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "requested {k} eigenpairs from a {n}x{n} matrix"
        )));
    }
    if n <= DENSE_LIMIT || k * 3 >= n {
        let full = sym_eigen(a)?;
        let mut values = Array1::zeros(k);
        let mut vectors = Array2::zeros((n, k));
        for t in 0..k {
            let src = n - 1 - t;
            values[t] = full.values[src];
            vectors.column_mut(t).assign(&full.vectors.column(src));
        }
        return Ok(SymEigen { values, vectors });
    }
    lanczos_topk(|v| a.dot(v), n, k, EIG_TOL, MAX_MATVECS)
}

/// Lanczos iteration for the top-`k` algebraic eigenpairs of the symmetric
/// operator `apply`. Deterministic: the start vector comes from a fixed seed.
pub fn lanczos_topk<F>(
    apply: F,
    n: usize,
    k: usize,
    tol: f64,
    max_matvecs: usize,
) -> Result<SymEigen>
where
    F: Fn(&ArrayView1<f64>) -> Array1<f64>,
{
    if k == 0 || k > n {
        return Err(Error::Parameter(format!(
            "requested {k} eigenpairs from an operator of dimension {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(LANCZOS_SEED);
    let cap = n.min((6 * k + 40).max(120));
    let mut start = random_unit(n, &mut rng);
    let mut matvecs = 0usize;

    loop {
        let mut basis: Vec<Array1<f64>> = vec![start.clone()];
        let mut alphas: Vec<f64> = Vec::with_capacity(cap);
        let mut betas: Vec<f64> = Vec::with_capacity(cap);

        while alphas.len() < cap && matvecs < max_matvecs {
            let j = alphas.len();
            let vj = basis[j].clone();
            let mut w = apply(&vj.view());
            matvecs += 1;
            let alpha = vj.dot(&w);
            alphas.push(alpha);
            w.scaled_add(-alpha, &vj);
            if j > 0 {
                w.scaled_add(-betas[j - 1], &basis[j - 1]);
            }
            // Two reorthogonalization passes keep the basis orthonormal to
            // working precision even for clustered spectra.
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&w);
                    if c != 0.0 {
                        w.scaled_add(-c, q);
                    }
                }
            }
            let beta = w.dot(&w).sqrt();
            if beta < 1e-13 {
                // Invariant subspace found. Decouple the tridiagonal block and
                // continue from a fresh direction if more pairs are needed.
                betas.push(0.0);
                if basis.len() >= n {
                    break;
                }
                basis.push(random_orthonormal(n, &basis, &mut rng)?);
            } else {
                betas.push(beta);
                basis.push(w / beta);
            }

            let m = alphas.len();
            if m >= k {
                let tri = sym_tridiag_eigen(&alphas, &betas[..m - 1])?;
                let beta_out = betas[m - 1];
                let converged = (0..k).all(|t| {
                    let col = m - 1 - t;
                    let resid = beta_out * tri.vectors[[m - 1, col]].abs();
                    resid <= tol * tri.values[col].abs().max(1.0)
                });
                if converged {
                    return Ok(assemble_ritz(&basis, &tri, m, k));
                }
            }
        }

        if matvecs >= max_matvecs {
            return Err(Error::Numeric(format!(
                "Lanczos did not converge within {max_matvecs} matrix products"
            )));
        }

        // Restart from the span of the current best Ritz vectors.
        let m = alphas.len();
        let tri = sym_tridiag_eigen(&alphas, &betas[..m - 1])?;
        let ritz = assemble_ritz(&basis, &tri, m, k.min(m));
        let mut combined = Array1::zeros(n);
        for col in ritz.vectors.columns() {
            combined += &col;
        }
        let norm = combined.dot(&combined).sqrt();
        start = if norm > 1e-13 {
            combined / norm
        } else {
            random_unit(n, &mut rng)
        };
    }
}

/// Cholesky factor `L` (lower triangular) of a symmetric positive definite
/// matrix.
pub fn cholesky(a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if n != a.ncols() {
        return Err(Error::Contract(format!(
            "cholesky needs a square matrix, got {}x{}",
            n,
            a.ncols()
        )));
    }
    let mut l: Array2<f64> = Array2::zeros((n, n));
    for j in 0..n {
        let mut diag = a[[j, j]];
        for k in 0..j {
            diag -= l[[j, k]] * l[[j, k]];
        }
        if diag <= 0.0 || !diag.is_finite() {
            return Err(Error::Numeric(format!(
                "matrix is not positive definite (pivot {diag:.3e} at {j})"
            )));
        }
        let root = diag.sqrt();
        l[[j, j]] = root;
        for i in (j + 1)..n {
            let mut sum = a[[i, j]];
            for k in 0..j {
                sum -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = sum / root;
        }
    }
    Ok(l)
}

/// Solve `A X = B` for symmetric positive definite `A`.
pub fn spd_solve(a: &ArrayView2<f64>, b: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = a.nrows();
    if b.nrows() != n {
        return Err(Error::Contract(format!(
            "solve dimension mismatch: A is {}x{}, B has {} rows",
            n,
            a.ncols(),
            b.nrows()
        )));
    }
    let l = cholesky(a)?;
    let m = b.ncols();
    let mut x = b.to_owned();
    // Forward substitution L Y = B.
    for col in 0..m {
        for i in 0..n {
            let mut sum = x[[i, col]];
            for k in 0..i {
                sum -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = sum / l[[i, i]];
        }
        // Back substitution L^T X = Y.
        for i in (0..n).rev() {
            let mut sum = x[[i, col]];
            for k in (i + 1)..n {
                sum -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = sum / l[[i, i]];
        }
    }
    Ok(x)
}

fn assemble_ritz(basis: &[Array1<f64>], tri: &SymEigen, m: usize, k: usize) -> SymEigen {
    let n = basis[0].len();
    let mut values = Array1::zeros(k);
    let mut vectors = Array2::zeros((n, k));
    for t in 0..k {
        let col = m - 1 - t;
        values[t] = tri.values[col];
        let mut y = Array1::<f64>::zeros(n);
        for (j, q) in basis.iter().take(m).enumerate() {
            y.scaled_add(tri.vectors[[j, col]], q);
        }
        vectors.column_mut(t).assign(&y);
    }
    SymEigen { values, vectors }
}

fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Array1<f64> {
    loop {
        let v = Array1::from_iter((0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            return v / norm;
        }
    }
}

fn random_orthonormal(
    n: usize,
    basis: &[Array1<f64>],
    rng: &mut ChaCha8Rng,
) -> Result<Array1<f64>> {
    for _ in 0..32 {
        let mut v = random_unit(n, rng);
        for _ in 0..2 {
            for q in basis {
                let c = q.dot(&v);
                v.scaled_add(-c, q);
            }
        }
        let norm = v.dot(&v).sqrt();
        if norm > 1e-8 {
            return Ok(v / norm);
        }
    }
    Err(Error::Numeric(
        "could not extend the Lanczos basis with an orthogonal vector".into(),
    ))
}

fn sort_ascending(d: &mut [f64], z: &mut Array2<f64>) {
    let n = d.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]).then(a.cmp(&b)));
    let vals: Vec<f64> = order.iter().map(|&i| d[i]).collect();
    d.copy_from_slice(&vals);
    let src = z.clone();
    for (dst, &i) in order.iter().enumerate() {
        z.column_mut(dst).assign(&src.column(i));
    }
}

/// Householder reduction to tridiagonal form with accumulated transforms.
/// On exit `z` holds the orthogonal matrix, `d` the diagonal and `e[1..]`
/// the off-diagonal of the tridiagonal matrix.
fn tred2(z: &mut Array2<f64>, d: &mut [f64], e: &mut [f64]) {
    let n = z.nrows();
    for i in (1..n).rev() {
        let l = i - 1;
        let mut h = 0.0;
        if l > 0 {
            let mut scale = 0.0;
            for k in 0..=l {
                scale += z[[i, k]].abs();
            }
            if scale == 0.0 {
                e[i] = z[[i, l]];
            } else {
                for k in 0..=l {
                    z[[i, k]] /= scale;
                    h += z[[i, k]] * z[[i, k]];
                }
                let f = z[[i, l]];
                let g = if f >= 0.0 { -h.sqrt() } else { h.sqrt() };
                e[i] = scale * g;
                h -= f * g;
                z[[i, l]] = f - g;
                let mut f_acc = 0.0;
                for j in 0..=l {
                    z[[j, i]] = z[[i, j]] / h;
                    let mut g_acc = 0.0;
                    for k in 0..=j {
                        g_acc += z[[j, k]] * z[[i, k]];
                    }
                    for k in (j + 1)..=l {
                        g_acc += z[[k, j]] * z[[i, k]];
                    }
                    e[j] = g_acc / h;
                    f_acc += e[j] * z[[i, j]];
                }
                let hh = f_acc / (h + h);
                for j in 0..=l {
                    let fj = z[[i, j]];
                    let gj = e[j] - hh * fj;
                    e[j] = gj;
                    for k in 0..=j {
                        let upd = fj * e[k] + gj * z[[i, k]];
                        z[[j, k]] -= upd;
                    }
                }
            }
        } else {
            e[i] = z[[i, l]];
        }
        d[i] = h;
    }
    d[0] = 0.0;
    e[0] = 0.0;
    for i in 0..n {
        if d[i] != 0.0 {
            for j in 0..i {
                let mut g = 0.0;
                for k in 0..i {
                    g += z[[i, k]] * z[[k, j]];
                }
                for k in 0..i {
                    let upd = g * z[[k, i]];
                    z[[k, j]] -= upd;
                }
            }
        }
        d[i] = z[[i, i]];
        z[[i, i]] = 1.0;
        for j in 0..i {
            z[[j, i]] = 0.0;
            z[[i, j]] = 0.0;
        }
    }
}

/// Implicit-shift QL iteration on a tridiagonal matrix, rotating the columns
/// of `z` along. `e[1..]` carries the off-diagonal on entry.
fn tql2(d: &mut [f64], e: &mut [f64], z: &mut Array2<f64>) -> Result<()> {
    let n = d.len();
    if n <= 1 {
        return Ok(());
    }
    for i in 1..n {
        e[i - 1] = e[i];
    }
    e[n - 1] = 0.0;
    for l in 0..n {
        let mut iter = 0;
        loop {
            let mut m = l;
            while m + 1 < n {
                let dd = d[m].abs() + d[m + 1].abs();
                if e[m].abs() <= f64::EPSILON * dd {
                    break;
                }
                m += 1;
            }
            if m == l {
                break;
            }
            iter += 1;
            if iter > 50 {
                return Err(Error::Numeric(
                    "tridiagonal QL iteration failed to converge".into(),
                ));
            }
            let mut g = (d[l + 1] - d[l]) / (2.0 * e[l]);
            let mut r = g.hypot(1.0);
            g = d[m] - d[l] + e[l] / (g + r.copysign(g));
            let mut s = 1.0;
            let mut c = 1.0;
            let mut p = 0.0;
            let mut early = false;
            for i in (l..m).rev() {
                let mut f = s * e[i];
                let b = c * e[i];
                r = f.hypot(g);
                e[i + 1] = r;
                if r == 0.0 {
                    d[i + 1] -= p;
                    e[m] = 0.0;
                    early = true;
                    break;
                }
                s = f / r;
                c = g / r;
                g = d[i + 1] - p;
                r = (d[i] - g) * s + 2.0 * c * b;
                p = s * r;
                d[i + 1] = g + p;
                g = c * r - b;
                for k in 0..n {
                    f = z[[k, i + 1]];
                    z[[k, i + 1]] = s * z[[k, i]] + c * f;
                    z[[k, i]] = c * z[[k, i]] - s * f;
                }
            }
            if early {
                continue;
            }
            d[l] -= p;
            e[l] = g;
            e[m] = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.gen_range(-1.0..1.0);
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        a
    }

    /// Cyclic Jacobi sweep solver, used as an algorithmically independent
    /// cross-check on eigenvalues.
    fn jacobi_eigenvalues(mut a: Array2<f64>) -> Vec<f64> {
        let n = a.nrows();
        for _sweep in 0..100 {
            let mut off = 0.0;
            for p in 0..n {
                for q in (p + 1)..n {
                    off += a[[p, q]] * a[[p, q]];
                }
            }
            if off.sqrt() < 1e-12 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[[p, q]].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[[k, p]];
                        let akq = a[[k, q]];
                        a[[k, p]] = c * akp - s * akq;
                        a[[k, q]] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[[p, k]];
                        let aqk = a[[q, k]];
                        a[[p, k]] = c * apk - s * aqk;
                        a[[q, k]] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| a[[i, i]]).collect();
        vals.sort_by(f64::total_cmp);
        vals
    }

    #[test]
    fn dense_eigen_reconstructs_matrix() {
        for seed in [1u64, 2, 3] {
            let a = random_symmetric(24, seed);
            let eig = sym_eigen(&a.view()).unwrap();
            for i in 0..24 {
                let v = eig.vectors.column(i);
                let av = a.dot(&v);
                let lv = v.mapv(|x| x * eig.values[i]);
                let resid = (&av - &lv).mapv(f64::abs).sum();
                assert!(resid < 1e-9, "residual {resid} for seed {seed} pair {i}");
            }
            let q = eig.vectors.t().dot(&eig.vectors);
            let eye_err = (&q - &Array2::<f64>::eye(24)).mapv(f64::abs).sum();
            assert!(eye_err < 1e-9, "eigenvectors not orthonormal: {eye_err}");
        }
    }

    #[test]
    fn dense_eigen_matches_jacobi_oracle() {
        let a = random_symmetric(16, 77);
        let eig = sym_eigen(&a.view()).unwrap();
        let oracle = jacobi_eigenvalues(a);
        for (got, want) in eig.values.iter().zip(oracle.iter()) {
            assert!(
                (got - want).abs() < 1e-9,
                "eigenvalue mismatch: {got} vs jacobi {want}"
            );
        }
    }

    #[test]
    fn eigen_handles_trivial_sizes() {
        let a = Array2::from_shape_vec((1, 1), vec![4.0]).unwrap();
        let eig = sym_eigen(&a.view()).unwrap();
        assert_eq!(eig.values[0], 4.0);
        assert_eq!(eig.vectors[[0, 0]].abs(), 1.0);

        let z = Array2::<f64>::zeros((3, 3));
        let eig = sym_eigen(&z.view()).unwrap();
        assert!(eig.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn tridiag_two_by_two_known_values() {
        // [[2, 1], [1, 2]] has eigenvalues 1 and 3.
        let eig = sym_tridiag_eigen(&[2.0, 2.0], &[1.0]).unwrap();
        assert!((eig.values[0] - 1.0).abs() < 1e-12);
        assert!((eig.values[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn topk_orders_descending() {
        let a = random_symmetric(30, 5);
        let full = sym_eigen(&a.view()).unwrap();
        let top = sym_eigen_topk(&a.view(), 4).unwrap();
        for t in 0..4 {
            let want = full.values[29 - t];
            assert!((top.values[t] - want).abs() < 1e-10);
        }
    }

    #[test]
    fn lanczos_agrees_with_dense() {
        let n = 150;
        let a = {
            // Well-separated spectrum so the comparison is sharp.
            let q = sym_eigen(&random_symmetric(n, 9).view()).unwrap().vectors;
            let mut d = Array2::zeros((n, n));
            for i in 0..n {
                d[[i, i]] = (i as f64) / (n as f64) + if i >= n - 5 { 3.0 } else { 0.0 };
            }
            q.dot(&d).dot(&q.t())
        };
        let dense = sym_eigen(&a.view()).unwrap();
        let lan = lanczos_topk(|v| a.dot(v), n, 5, 1e-10, MAX_MATVECS).unwrap();
        for t in 0..5 {
            let want = dense.values[n - 1 - t];
            assert!(
                (lan.values[t] - want).abs() < 1e-8,
                "lanczos value {} vs dense {}",
                lan.values[t],
                want
            );
            let v = lan.vectors.column(t);
            let av = a.dot(&v);
            let resid = (&av - &v.mapv(|x| x * lan.values[t]))
                .mapv(f64::abs)
                .iter()
                .fold(0.0f64, |m, x| m.max(*x));
            assert!(resid < 1e-7, "ritz residual {resid}");
        }
    }

    #[test]
    fn lanczos_survives_invariant_subspace_breakdown() {
        // Diagonal operator: the Krylov space from any start vector can
        // become invariant early.
        let n = 60;
        let mut a = Array2::zeros((n, n));
        for i in 0..n {
            a[[i, i]] = if i < 3 { 10.0 + i as f64 } else { 1.0 };
        }
        let lan = lanczos_topk(|v| a.dot(v), n, 3, 1e-10, MAX_MATVECS).unwrap();
        let mut got: Vec<f64> = lan.values.to_vec();
        got.sort_by(f64::total_cmp);
        assert!((got[0] - 10.0).abs() < 1e-8);
        assert!((got[1] - 11.0).abs() < 1e-8);
        assert!((got[2] - 12.0).abs() < 1e-8);
    }

    #[test]
    fn cholesky_solve_recovers_known_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 12;
        let mut m = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                m[[i, j]] = rng.gen_range(-1.0..1.0);
            }
        }
        let a = m.t().dot(&m) + Array2::<f64>::eye(n) * 0.5;
        let x_true = Array2::from_shape_fn((n, 3), |(i, j)| (i + 2 * j) as f64 * 0.1 - 0.4);
        let b = a.dot(&x_true);
        let x = spd_solve(&a.view(), &b.view()).unwrap();
        let err = (&x - &x_true).mapv(f64::abs).iter().fold(0.0f64, |m, v| m.max(*v));
        assert!(err < 1e-8, "solution error {err}");
    }

    #[test]
    fn cholesky_rejects_indefinite_matrix() {
        let a = Array2::from_shape_vec((2, 2), vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(matches!(cholesky(&a.view()), Err(Error::Numeric(_))));
    }
}

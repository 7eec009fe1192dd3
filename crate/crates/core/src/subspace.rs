//! Ridge-regularized self-expression, affinity construction, and the
//! attention-weighted fusion of per-view affinities.
//!
//! Self-expression finds coefficients `C` so that each sample is
//! reconstructed from the others: `min_C 1/2 |target - dict C|_F^2 +
//! lambda/2 |C|_F^2`, whose minimizer is available in closed form. Both
//! `dict` and `target` hold one column per sample. The solver works in the
//! small `e x e` embedding space; a dense `N x N` route exists as a
//! cross-check (they agree by the push-through identity).
//!
//! Fusion scores each view per node with a small attention head: the
//! concatenated affinities times a source matrix `S`, squashed, softmaxed
//! across views, and l2-normalized per row. `S` itself is fitted by
//! minimizing a joint self-expression objective of the fused affinity.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::spd_solve;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

fn check_pair(dict: &ArrayView2<f64>, target: &ArrayView2<f64>, lambda: f64) -> Result<()> {
    if dict.ncols() != target.ncols() {
        return Err(Error::Contract(format!(
            "dictionary has {} samples but target has {}",
            dict.ncols(),
            target.ncols()
        )));
    }
    if dict.nrows() != target.nrows() {
        return Err(Error::Contract(format!(
            "dictionary rows {} and target rows {} differ",
            dict.nrows(),
            target.nrows()
        )));
    }
    if dict.ncols() == 0 {
        return Err(Error::Contract("self-expression needs samples".into()));
    }
    if !(lambda.is_finite() && lambda > 0.0) {
        return Err(Error::Parameter(format!(
            "ridge weight {lambda} must be finite and positive"
        )));
    }
    Ok(())
}

/// Closed-form self-expression coefficients, `C = dict^T (dict dict^T +
/// lambda I)^{-1} target`, solved through the `e x e` Gram system.
pub fn solve_self_expression(
    dict: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    lambda: f64,
) -> Result<Array2<f64>> {
    check_pair(dict, target, lambda)?;
    let e = dict.nrows();
    let mut gram = dict.dot(&dict.t());
    for i in 0..e {
        gram[[i, i]] += lambda;
    }
    let mid = spd_solve(&gram.view(), target)?;
    Ok(dict.t().dot(&mid))
}

/// The same coefficients through the `N x N` normal equations,
/// `(dict^T dict + lambda I) C = dict^T target`. Slow; kept as an
/// independent route for verification.
pub fn solve_self_expression_dense(
    dict: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    lambda: f64,
) -> Result<Array2<f64>> {
    check_pair(dict, target, lambda)?;
    let n = dict.ncols();
    let mut gram = dict.t().dot(dict);
    for i in 0..n {
        gram[[i, i]] += lambda;
    }
    let rhs = dict.t().dot(target);
    spd_solve(&gram.view(), &rhs.view())
}

/// `1/2 |target - dict C|_F^2 + lambda/2 |C|_F^2`.
pub fn self_expression_objective(
    dict: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    c: &ArrayView2<f64>,
    lambda: f64,
) -> f64 {
    let residual = target - &dict.dot(c);
    0.5 * sq_frob(&residual.view()) + 0.5 * lambda * sq_frob(c)
}

fn sq_frob(m: &ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Symmetric nonnegative affinity from coefficients:
/// `Y = (|C| + |C|^T) / 2`.
pub fn build_affinity(c: &ArrayView2<f64>) -> Result<Array2<f64>> {
    if c.nrows() != c.ncols() {
        return Err(Error::Contract(format!(
            "coefficient matrix must be square, got {}x{}",
            c.nrows(),
            c.ncols()
        )));
    }
    let a = c.mapv(f64::abs);
    Ok((&a + &a.t()) * 0.5)
}

/// How the attention source `S` is fitted.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionConfig {
    pub steps: usize,
    pub learning_rate: f64,
    /// Ridge weight of the fused self-expression objective.
    pub lambda: f64,
    pub seed: u64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            steps: 100,
            learning_rate: 1e-2,
            lambda: 1.0,
            seed: 0,
        }
    }
}

/// Result of fitting the attention source.
#[derive(Debug, Clone)]
pub struct AttentionOutcome {
    pub s: Array2<f64>,
    /// Per-node view weights, `N x P`.
    pub weights: Array2<f64>,
    pub fused: Array2<f64>,
    /// Objective value per step, entry 0 at the initial source.
    pub history: Vec<f64>,
}

fn check_views(ys: &[Array2<f64>]) -> Result<usize> {
    if ys.is_empty() {
        return Err(Error::Parameter("fusion needs at least one view".into()));
    }
    let n = ys[0].nrows();
    for (idx, y) in ys.iter().enumerate() {
        if y.nrows() != n || y.ncols() != n {
            return Err(Error::Contract(format!(
                "affinity {idx} is {}x{}, expected {n}x{n}",
                y.nrows(),
                y.ncols()
            )));
        }
    }
    Ok(n)
}

/// Per-node attention over views: concatenate the affinities row-wise,
/// project through `S`, squash, softmax across views, l2-normalize rows.
/// `S = 0` gives every node the uniform weight `1/sqrt(P)` per view.
pub fn attention_weights(ys: &[Array2<f64>], s: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = check_views(ys)?;
    let p = ys.len();
    if s.nrows() != p * n || s.ncols() != p {
        return Err(Error::Contract(format!(
            "attention source is {}x{}, expected {}x{}",
            s.nrows(),
            s.ncols(),
            p * n,
            p
        )));
    }
    let (_, _, a) = attention_forward(ys, s);
    Ok(a)
}

/// Forward pass shared with the gradient: returns `(M, softmax rows, a)`.
fn attention_forward(ys: &[Array2<f64>], s: &ArrayView2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let n = ys[0].nrows();
    let p = ys.len();
    // M = [Y_1 ... Y_P] S without materializing the concatenation.
    let mut m = Array2::zeros((n, p));
    for (v, y) in ys.iter().enumerate() {
        let block = s.slice(ndarray::s![v * n..(v + 1) * n, ..]);
        m = m + y.dot(&block);
    }
    let t = m.mapv(f64::tanh);
    let mut soft = Array2::zeros((n, p));
    for i in 0..n {
        let row = t.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut denom = 0.0;
        for v in 0..p {
            denom += (row[v] - max).exp();
        }
        for v in 0..p {
            soft[[i, v]] = (row[v] - max).exp() / denom;
        }
    }
    let mut a = soft.clone();
    for mut row in a.axis_iter_mut(Axis(0)) {
        let norm = row.dot(&row).sqrt();
        row.mapv_inplace(|v| v / norm);
    }
    (m, soft, a)
}

/// Row-scale each view's affinity by its attention column, sum, and
/// symmetrize.
pub fn fuse_affinities(ys: &[Array2<f64>], a: &ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = check_views(ys)?;
    let p = ys.len();
    if a.nrows() != n || a.ncols() != p {
        return Err(Error::Contract(format!(
            "attention weights are {}x{}, expected {n}x{p}",
            a.nrows(),
            a.ncols()
        )));
    }
    let mut u = Array2::zeros((n, n));
    for (v, y) in ys.iter().enumerate() {
        for i in 0..n {
            let w = a[[i, v]];
            for j in 0..n {
                u[[i, j]] += w * y[[i, j]];
            }
        }
    }
    Ok((&u + &u.t()) * 0.5)
}

/// The fused self-expression objective steering the attention fit:
/// `1/2 |dict Y_F - target|_F^2 + lambda/2 |Y_F|_F^2` with
/// `Y_F = fuse(ys, attention(ys, S))`.
pub fn fusion_objective(
    ys: &[Array2<f64>],
    dict: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    lambda: f64,
    s: &ArrayView2<f64>,
) -> Result<f64> {
    let a = attention_weights(ys, s)?;
    let fused = fuse_affinities(ys, &a.view())?;
    Ok(self_expression_objective(dict, target, &fused.view(), lambda))
}

/// Analytic gradient of [`fusion_objective`] with respect to `S`.
pub(crate) fn fusion_gradient(
    ys: &[Array2<f64>],
    dict: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    lambda: f64,
    s: &ArrayView2<f64>,
) -> Result<(f64, Array2<f64>)> {
    let n = check_views(ys)?;
    let p = ys.len();
    let (m, soft, a) = attention_forward(ys, s);
    let fused = fuse_affinities(ys, &a.view())?;
    let loss = self_expression_objective(dict, target, &fused.view(), lambda);

    // d/dY_F of the objective, then back through the symmetrization.
    let residual = dict.dot(&fused) - target;
    let g_yf = dict.t().dot(&residual) + &(&fused * lambda);
    let g_u = (&g_yf + &g_yf.t()) * 0.5;

    // d/da[i,v] is the row-wise correlation with that view's affinity.
    let mut g_a = Array2::zeros((n, p));
    for (v, y) in ys.iter().enumerate() {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                acc += g_u[[i, j]] * y[[i, j]];
            }
            g_a[[i, v]] = acc;
        }
    }

    // l2 row normalization: g_sigma = (g_a - a (a . g_a)) / |sigma|.
    let mut g_soft = Array2::zeros((n, p));
    for i in 0..n {
        let sigma = soft.row(i);
        let unit = a.row(i);
        let g = g_a.row(i);
        let norm = sigma.dot(&sigma).sqrt();
        let radial = unit.dot(&g);
        for v in 0..p {
            g_soft[[i, v]] = (g[v] - unit[v] * radial) / norm;
        }
    }

    // Softmax rows: g_t = sigma * (g_sigma - sigma . g_sigma).
    let mut g_t = Array2::zeros((n, p));
    for i in 0..n {
        let sigma = soft.row(i);
        let g = g_soft.row(i);
        let dot = sigma.dot(&g);
        for v in 0..p {
            g_t[[i, v]] = sigma[v] * (g[v] - dot);
        }
    }

    // tanh, then the concatenated-affinity product.
    let g_m = &g_t * &m.mapv(|v| 1.0 - v.tanh() * v.tanh());
    let mut g_s = Array2::zeros((p * n, p));
    for (v, y) in ys.iter().enumerate() {
        let block = y.t().dot(&g_m);
        g_s.slice_mut(ndarray::s![v * n..(v + 1) * n, ..]).assign(&block);
    }
    Ok((loss, g_s))
}

/// Fit the attention source by gradient descent on the fused
/// self-expression objective and return the best candidate seen. The zero
/// source (uniform attention) always competes, so the outcome is never
/// worse than unweighted fusion. `steps = 0` keeps the seeded initial
/// source untouched.
pub fn optimize_attention(
    ys: &[Array2<f64>],
    dict: &ArrayView2<f64>,
    target: &ArrayView2<f64>,
    cfg: &FusionConfig,
) -> Result<AttentionOutcome> {
    let n = check_views(ys)?;
    let p = ys.len();
    if !(cfg.learning_rate.is_finite() && cfg.learning_rate > 0.0) {
        return Err(Error::Parameter(format!(
            "learning rate {} must be finite and positive",
            cfg.learning_rate
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut s = Array2::from_shape_fn((p * n, p), |_| rng.gen_range(-0.01..0.01));

    if cfg.steps == 0 {
        let (loss, _) = fusion_gradient(ys, dict, target, cfg.lambda, &s.view())?;
        return finish(ys, s, vec![loss]);
    }

    let mut best_s = s.clone();
    let mut best_loss = f64::INFINITY;
    let mut history = Vec::with_capacity(cfg.steps + 1);
    let mut m1 = Array2::<f64>::zeros(s.raw_dim());
    let mut v1 = Array2::<f64>::zeros(s.raw_dim());
    for step in 0..=cfg.steps {
        let (loss, grad) = fusion_gradient(ys, dict, target, cfg.lambda, &s.view())?;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!(
                "fusion objective became {loss} at step {step}"
            )));
        }
        history.push(loss);
        if loss < best_loss {
            best_loss = loss;
            best_s = s.clone();
        }
        if step == cfg.steps {
            break;
        }
        let t = (step + 1) as i32;
        let b1t = 1.0 - ADAM_BETA1.powi(t);
        let b2t = 1.0 - ADAM_BETA2.powi(t);
        for ((w, (m, v)), &g) in s
            .iter_mut()
            .zip(m1.iter_mut().zip(v1.iter_mut()))
            .zip(grad.iter())
        {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            *w -= cfg.learning_rate * (*m / b1t) / ((*v / b2t).sqrt() + ADAM_EPS);
        }
    }

    // Uniform attention competes as a candidate of its own.
    let zero = Array2::zeros((p * n, p));
    let (zero_loss, _) = fusion_gradient(ys, dict, target, cfg.lambda, &zero.view())?;
    if zero_loss < best_loss {
        best_s = zero;
    }
    finish(ys, best_s, history)
}

fn finish(ys: &[Array2<f64>], s: Array2<f64>, history: Vec<f64>) -> Result<AttentionOutcome> {
    let weights = attention_weights(ys, &s.view())?;
    let fused = fuse_affinities(ys, &weights.view())?;
    Ok(AttentionOutcome {
        s,
        weights,
        fused,
        history,
    })
}

/// Per-view affinities plus the fused result of one pipeline run.
#[derive(Debug, Clone)]
pub struct AffinityBundle {
    pub per_view: Vec<Array2<f64>>,
    pub fused: Array2<f64>,
    /// Present when fusion used attention (absent for mean or single-view).
    pub weights: Option<Array2<f64>>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixSidecar {
    rows: usize,
    cols: usize,
    dtype: String,
    order: String,
}

/// Dump a matrix as little-endian f64, row-major, with a JSON sidecar
/// describing the shape (`<stem>.json` next to the `.bin`).
pub fn save_matrix(m: &ArrayView2<f64>, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(m.len() * 8);
    for row in m.rows() {
        for &v in row {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    std::fs::write(path, bytes)?;
    let sidecar = MatrixSidecar {
        rows: m.nrows(),
        cols: m.ncols(),
        dtype: "f64le".to_string(),
        order: "row_major".to_string(),
    };
    let mut text = serde_json::to_string_pretty(&sidecar)?;
    text.push('\n');
    std::fs::write(path.with_extension("json"), text)?;
    Ok(())
}

/// Load a matrix written by [`save_matrix`].
pub fn load_matrix(path: &Path) -> Result<Array2<f64>> {
    let sidecar: MatrixSidecar =
        serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)?;
    if sidecar.dtype != "f64le" || sidecar.order != "row_major" {
        return Err(Error::Format(format!(
            "unsupported matrix encoding {}/{}",
            sidecar.dtype, sidecar.order
        )));
    }
    let bytes = std::fs::read(path)?;
    let expected = sidecar.rows * sidecar.cols * 8;
    if bytes.len() != expected {
        return Err(Error::Format(format!(
            "matrix payload is {} bytes, expected {expected}",
            bytes.len()
        )));
    }
    let mut data = Vec::with_capacity(sidecar.rows * sidecar.cols);
    for chunk in bytes.chunks_exact(8) {
        data.push(f64::from_le_bytes(chunk.try_into().unwrap()));
    }
    Array2::from_shape_vec((sidecar.rows, sidecar.cols), data)
        .map_err(|e| Error::Format(format!("matrix shape error: {e}")))
}

//! Two-layer graph convolutional encoders trained with a cross-view
//! contrastive objective.
//!
//! Forward pass per view, with `P` the renormalized propagation operator:
//!
//! ```text
//! H = relu(P X^T W0)          # N x h
//! Z = (P H W1)^T              # e x N, one embedding per column
//! ```
//!
//! The loss treats the two embeddings of the same node as a positive pair
//! and every other embedding (both views) as a negative, with cosine
//! similarity at temperature `tau`. For anchor `i` in view one:
//!
//! ```text
//! l(i) = -log exp(sim(z_i, z'_i)/tau)
//!         / (sum_k exp(sim(z_i, z'_k)/tau) + sum_k exp(sim(z_i, z_k)/tau))
//! ```
//!
//! Both sums run over all `k`, the intra-view self term included; setting
//! `exclude_self_similarity` drops that one term. The total averages both
//! anchor directions over all nodes. Gradients are analytic throughout —
//! softmax-style weights on the similarity matrices, the projection step of
//! the cosine normalization, then the linear graph convolution stack —
//! and updates use the usual adaptive moment scheme on full batches.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::GraphView;
use crate::views::{ViewFeatures, ViewKind};

/// Training hyperparameters for the contrastive stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub tau: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub hidden: usize,
    pub embed: usize,
    pub seed: u64,
    /// Drop the intra-view self-similarity term from the denominator.
    #[serde(default)]
    pub exclude_self_similarity: bool,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            tau: 0.5,
            epochs: 200,
            learning_rate: 1e-3,
            hidden: 64,
            embed: 32,
            seed: 0,
            exclude_self_similarity: false,
        }
    }
}

impl ContrastiveConfig {
    fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature {} must be finite and positive",
                self.tau
            )));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Parameter(format!(
                "learning rate {} must be finite and positive",
                self.learning_rate
            )));
        }
        if self.hidden == 0 || self.embed == 0 {
            return Err(Error::Parameter(
                "hidden and embedding widths must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Weights of one view's encoder.
#[derive(Debug, Clone)]
pub struct EncoderWeights {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
}

/// Gradients paired with [`EncoderWeights`].
#[derive(Debug, Clone)]
pub struct WeightGrads {
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
}

#[derive(Debug, Clone)]
struct AdamMoments {
    m0: Array2<f64>,
    v0: Array2<f64>,
    m1: Array2<f64>,
    v1: Array2<f64>,
}

/// Encoder weights for every view after training.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub weights: Vec<EncoderWeights>,
    pub epoch: usize,
    pub seed: u64,
}

/// Node embeddings of one view, one column per node.
#[derive(Debug, Clone)]
pub struct Embeddings {
    pub kind: ViewKind,
    pub z: Array2<f64>,
}

impl Embeddings {
    pub fn e(&self) -> usize {
        self.z.nrows()
    }

    pub fn n(&self) -> usize {
        self.z.ncols()
    }
}

/// Everything `train` produces: final state, per-view embeddings, and the
/// loss trajectory (entry 0 is the loss at initialization, entry `t` the
/// loss after `t` updates).
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub state: EncoderState,
    pub embeddings: Vec<Embeddings>,
    pub loss_history: Vec<f64>,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Xavier-uniform initial weights for one view, drawn from the given stream.
pub fn init_weights(d: usize, hidden: usize, embed: usize, rng: &mut ChaCha8Rng) -> EncoderWeights {
    EncoderWeights {
        w0: glorot(d, hidden, rng),
        w1: glorot(hidden, embed, rng),
    }
}

fn glorot(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-bound..bound))
}

/// Forward pass of one view's encoder.
pub fn gcn_forward(
    x: &ViewFeatures,
    graph: &GraphView,
    weights: &EncoderWeights,
) -> Result<Embeddings> {
    let p = propagate_input(x, graph)?;
    let parts = forward_parts(&p, graph, weights)?;
    Ok(Embeddings {
        kind: x.kind,
        z: parts.z_nodes.reversed_axes(),
    })
}

/// `P X^T`, the propagated input features (`N x d`). Computed once per view
/// and reused across epochs.
pub fn propagate_input(x: &ViewFeatures, graph: &GraphView) -> Result<Array2<f64>> {
    if x.n() != graph.n() {
        return Err(Error::Contract(format!(
            "view has {} samples but graph has {} nodes",
            x.n(),
            graph.n()
        )));
    }
    let xt = x.x.t().to_owned();
    Ok(graph.propagate(&xt.view()))
}

struct ForwardParts {
    pre1: Array2<f64>,
    ah1: Array2<f64>,
    z_nodes: Array2<f64>,
}

fn forward_parts(
    p: &Array2<f64>,
    graph: &GraphView,
    weights: &EncoderWeights,
) -> Result<ForwardParts> {
    if p.ncols() != weights.w0.nrows() {
        return Err(Error::Contract(format!(
            "input width {} does not match W0 rows {}",
            p.ncols(),
            weights.w0.nrows()
        )));
    }
    if weights.w0.ncols() != weights.w1.nrows() {
        return Err(Error::Contract(format!(
            "W0 cols {} do not match W1 rows {}",
            weights.w0.ncols(),
            weights.w1.nrows()
        )));
    }
    let pre1 = p.dot(&weights.w0);
    let h1 = pre1.mapv(|v| v.max(0.0));
    let ah1 = graph.propagate(&h1.view());
    let z_nodes = ah1.dot(&weights.w1);
    Ok(ForwardParts { pre1, ah1, z_nodes })
}

/// Contrastive loss between two views' embeddings (self term included).
pub fn contrastive_loss(z1: &Embeddings, z2: &Embeddings, tau: f64) -> Result<f64> {
    contrastive_loss_with(z1, z2, tau, false)
}

/// Contrastive loss with the denominator variant made explicit.
pub fn contrastive_loss_with(
    z1: &Embeddings,
    z2: &Embeddings,
    tau: f64,
    exclude_self: bool,
) -> Result<f64> {
    let sims = Similarities::new(&z1.z, &z2.z, tau, exclude_self)?;
    Ok(sims.loss())
}

/// Column-normalized copy plus the original norms. Zero columns are a
/// numeric error: a cosine is undefined for them.
fn normalize_columns(z: &Array2<f64>) -> Result<(Array2<f64>, Vec<f64>)> {
    let mut out = z.clone();
    let mut norms = Vec::with_capacity(z.ncols());
    for (idx, mut col) in out.columns_mut().into_iter().enumerate() {
        let norm = col.dot(&col).sqrt();
        if !(norm.is_finite() && norm > 0.0) {
            return Err(Error::Numeric(format!(
                "embedding column {idx} has norm {norm}; cosine similarity undefined"
            )));
        }
        col.mapv_inplace(|v| v / norm);
        norms.push(norm);
    }
    Ok((out, norms))
}

/// Similarity matrices and softmax weights shared by the loss and its
/// gradient.
struct Similarities {
    hz1: Array2<f64>,
    hz2: Array2<f64>,
    norms1: Vec<f64>,
    norms2: Vec<f64>,
    s12: Array2<f64>,
    /// Softmax weights for anchor direction one: rows sum to one over the
    /// concatenated (cross, intra) terms.
    p12: Array2<f64>,
    p11: Array2<f64>,
    /// Direction two counterparts.
    q21: Array2<f64>,
    q22: Array2<f64>,
    log_denom1: Vec<f64>,
    log_denom2: Vec<f64>,
    tau: f64,
    n: usize,
}

impl Similarities {
    fn new(z1: &Array2<f64>, z2: &Array2<f64>, tau: f64, exclude_self: bool) -> Result<Self> {
        if z1.dim() != z2.dim() {
            return Err(Error::Contract(format!(
                "embedding shapes differ: {:?} vs {:?}",
                z1.dim(),
                z2.dim()
            )));
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(Error::Parameter(format!(
                "temperature {tau} must be finite and positive"
            )));
        }
        let n = z1.ncols();
        if n == 0 {
            return Err(Error::Contract("no samples to contrast".into()));
        }
        let (hz1, norms1) = normalize_columns(z1)?;
        let (hz2, norms2) = normalize_columns(z2)?;
        let s12 = hz1.t().dot(&hz2);
        let s11 = hz1.t().dot(&hz1);
        let s22 = hz2.t().dot(&hz2);

        let (p12, p11, log_denom1) = softmax_pair(&s12, &s11, tau, exclude_self);
        let s21 = s12.t().to_owned();
        let (q21, q22, log_denom2) = softmax_pair(&s21, &s22, tau, exclude_self);

        Ok(Similarities {
            hz1,
            hz2,
            norms1,
            norms2,
            s12,
            p12,
            p11,
            q21,
            q22,
            log_denom1,
            log_denom2,
            tau,
            n,
        })
    }

    fn loss(&self) -> f64 {
        let mut total = 0.0;
        for i in 0..self.n {
            let pos = self.s12[[i, i]] / self.tau;
            total += (self.log_denom1[i] - pos) + (self.log_denom2[i] - pos);
        }
        total / (2.0 * self.n as f64)
    }

    /// Gradients with respect to the raw (unnormalized) embeddings.
    fn embedding_grads(&self) -> (Array2<f64>, Array2<f64>) {
        let n = self.n;
        let scale = 1.0 / (2.0 * n as f64 * self.tau);
        let eye = Array2::<f64>::eye(n);
        let a = &self.p12 - &eye;
        let c = &self.q21 - &eye;
        let b_sym = &self.p11 + &self.p11.t();
        let d_sym = &self.q22 + &self.q22.t();

        let g_hz1 = (self.hz2.dot(&a.t()) + self.hz1.dot(&b_sym) + self.hz2.dot(&c)) * scale;
        let g_hz2 = (self.hz1.dot(&a) + self.hz1.dot(&c.t()) + self.hz2.dot(&d_sym)) * scale;

        (
            cosine_backward(&self.hz1, &self.norms1, &g_hz1),
            cosine_backward(&self.hz2, &self.norms2, &g_hz2),
        )
    }
}

/// Row-stable softmax over the concatenation of a cross-view and an
/// intra-view similarity row. Returns the two weight blocks and the log
/// denominators.
fn softmax_pair(
    cross: &Array2<f64>,
    intra: &Array2<f64>,
    tau: f64,
    exclude_self: bool,
) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let n = cross.nrows();
    let mut w_cross = Array2::zeros((n, n));
    let mut w_intra = Array2::zeros((n, n));
    let mut log_denoms = Vec::with_capacity(n);
    for i in 0..n {
        let mut m = f64::NEG_INFINITY;
        for k in 0..n {
            m = m.max(cross[[i, k]] / tau);
            if !(exclude_self && k == i) {
                m = m.max(intra[[i, k]] / tau);
            }
        }
        let mut denom = 0.0;
        for k in 0..n {
            denom += (cross[[i, k]] / tau - m).exp();
            if !(exclude_self && k == i) {
                denom += (intra[[i, k]] / tau - m).exp();
            }
        }
        for k in 0..n {
            w_cross[[i, k]] = (cross[[i, k]] / tau - m).exp() / denom;
            if !(exclude_self && k == i) {
                w_intra[[i, k]] = (intra[[i, k]] / tau - m).exp() / denom;
            }
        }
        log_denoms.push(m + denom.ln());
    }
    (w_cross, w_intra, log_denoms)
}

/// Pull a gradient on normalized columns back through `z / |z|`.
fn cosine_backward(hz: &Array2<f64>, norms: &[f64], g_hz: &Array2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(hz.raw_dim());
    for (i, &norm) in norms.iter().enumerate() {
        let u = hz.column(i);
        let g = g_hz.column(i);
        let radial = u.dot(&g);
        let mut col = out.column_mut(i);
        for t in 0..hz.nrows() {
            col[t] = (g[t] - u[t] * radial) / norm;
        }
    }
    out
}

/// Loss and analytic weight gradients for both views at the given weights.
pub fn loss_gradients(
    xs: &[ViewFeatures],
    graphs: &[GraphView],
    weights: &[EncoderWeights],
    tau: f64,
    exclude_self: bool,
) -> Result<(f64, Vec<WeightGrads>)> {
    check_two_views(xs, graphs)?;
    if weights.len() != 2 {
        return Err(Error::Parameter(format!(
            "need weights for exactly 2 views, got {}",
            weights.len()
        )));
    }
    let p0 = propagate_input(&xs[0], &graphs[0])?;
    let p1 = propagate_input(&xs[1], &graphs[1])?;
    loss_gradients_inner(&[p0, p1], graphs, weights, tau, exclude_self)
}

fn loss_gradients_inner(
    ps: &[Array2<f64>],
    graphs: &[GraphView],
    weights: &[EncoderWeights],
    tau: f64,
    exclude_self: bool,
) -> Result<(f64, Vec<WeightGrads>)> {
    let parts0 = forward_parts(&ps[0], &graphs[0], &weights[0])?;
    let parts1 = forward_parts(&ps[1], &graphs[1], &weights[1])?;

    let z1 = parts0.z_nodes.t().to_owned();
    let z2 = parts1.z_nodes.t().to_owned();
    let sims = Similarities::new(&z1, &z2, tau, exclude_self)?;
    let loss = sims.loss();
    let (g_z1, g_z2) = sims.embedding_grads();

    let grads = vec![
        backward_view(&ps[0], &graphs[0], &weights[0], &parts0, &g_z1),
        backward_view(&ps[1], &graphs[1], &weights[1], &parts1, &g_z2),
    ];
    Ok((loss, grads))
}

/// Backpropagate an embedding gradient (`e x N`) through one view's encoder.
fn backward_view(
    p: &Array2<f64>,
    graph: &GraphView,
    weights: &EncoderWeights,
    parts: &ForwardParts,
    g_z: &Array2<f64>,
) -> WeightGrads {
    let g_out = g_z.t().to_owned();
    let grad_w1 = parts.ah1.t().dot(&g_out);
    let grad_h1 = {
        let gw = g_out.dot(&weights.w1.t());
        graph.propagate(&gw.view())
    };
    let mut grad_pre = grad_h1;
    grad_pre.zip_mut_with(&parts.pre1, |g, &pre| {
        if pre <= 0.0 {
            *g = 0.0;
        }
    });
    let grad_w0 = p.t().dot(&grad_pre);
    WeightGrads {
        w0: grad_w0,
        w1: grad_w1,
    }
}

fn check_two_views(xs: &[ViewFeatures], graphs: &[GraphView]) -> Result<()> {
    if xs.len() != 2 || graphs.len() != 2 {
        return Err(Error::Parameter(format!(
            "contrastive training needs exactly 2 views, got {} views and {} graphs",
            xs.len(),
            graphs.len()
        )));
    }
    let n = xs[0].n();
    for (x, g) in xs.iter().zip(graphs.iter()) {
        if x.n() != n || g.n() != n {
            return Err(Error::Contract(format!(
                "sample counts disagree across views: {} vs {}",
                x.n(),
                n
            )));
        }
    }
    Ok(())
}

/// Full-batch contrastive training of both encoders.
pub fn train(
    xs: &[ViewFeatures],
    graphs: &[GraphView],
    cfg: &ContrastiveConfig,
) -> Result<TrainOutcome> {
    check_two_views(xs, graphs)?;
    cfg.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut weights: Vec<EncoderWeights> = xs
        .iter()
        .map(|x| init_weights(x.d(), cfg.hidden, cfg.embed, &mut rng))
        .collect();
    let mut moments: Vec<AdamMoments> = weights
        .iter()
        .map(|w| AdamMoments {
            m0: Array2::zeros(w.w0.raw_dim()),
            v0: Array2::zeros(w.w0.raw_dim()),
            m1: Array2::zeros(w.w1.raw_dim()),
            v1: Array2::zeros(w.w1.raw_dim()),
        })
        .collect();

    let ps = vec![
        propagate_input(&xs[0], &graphs[0])?,
        propagate_input(&xs[1], &graphs[1])?,
    ];

    let mut history = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..cfg.epochs {
        let (loss, grads) = loss_gradients_inner(
            &ps,
            graphs,
            &weights,
            cfg.tau,
            cfg.exclude_self_similarity,
        )
        .map_err(|e| match e {
            Error::Numeric(message) => Error::Divergence { epoch, message },
            other => other,
        })?;
        if !loss.is_finite() {
            return Err(Error::Divergence {
                epoch,
                message: format!("loss became {loss}"),
            });
        }
        history.push(loss);
        let t = epoch + 1;
        for (view, grad) in grads.iter().enumerate() {
            let w = &mut weights[view];
            let mom = &mut moments[view];
            adam_step(&mut w.w0, &mut mom.m0, &mut mom.v0, &grad.w0, cfg.learning_rate, t);
            adam_step(&mut w.w1, &mut mom.m1, &mut mom.v1, &grad.w1, cfg.learning_rate, t);
        }
    }

    // Final embeddings and closing loss entry at the trained weights.
    let parts0 = forward_parts(&ps[0], &graphs[0], &weights[0])?;
    let parts1 = forward_parts(&ps[1], &graphs[1], &weights[1])?;
    let z1 = parts0.z_nodes.t().to_owned();
    let z2 = parts1.z_nodes.t().to_owned();
    let final_loss = Similarities::new(&z1, &z2, cfg.tau, cfg.exclude_self_similarity)
        .map(|s| s.loss())
        .map_err(|e| match e {
            Error::Numeric(message) => Error::Divergence {
                epoch: cfg.epochs,
                message,
            },
            other => other,
        })?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence {
            epoch: cfg.epochs,
            message: format!("loss became {final_loss}"),
        });
    }
    history.push(final_loss);

    let embeddings = vec![
        Embeddings {
            kind: xs[0].kind,
            z: z1,
        },
        Embeddings {
            kind: xs[1].kind,
            z: z2,
        },
    ];
    Ok(TrainOutcome {
        state: EncoderState {
            weights,
            epoch: cfg.epochs,
            seed: cfg.seed,
        },
        embeddings,
        loss_history: history,
    })
}

fn adam_step(
    w: &mut Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    g: &Array2<f64>,
    lr: f64,
    t: usize,
) {
    let b1t = 1.0 - ADAM_BETA1.powi(t as i32);
    let b2t = 1.0 - ADAM_BETA2.powi(t as i32);
    for ((w, (m, v)), &g) in w
        .iter_mut()
        .zip(m.iter_mut().zip(v.iter_mut()))
        .zip(g.iter())
    {
        *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
        *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
        let mhat = *m / b1t;
        let vhat = *v / b2t;
        *w -= lr * mhat / (vhat.sqrt() + ADAM_EPS);
    }
}

//! Clustering quality measures and the cluster-map image export.
//!
//! Predicted cluster indices carry no inherent class identity, so overall
//! accuracy and the agreement coefficient first align clusters to ground
//! truth with an optimal one-to-one assignment (profit maximization over
//! the contingency table). Mutual information needs no alignment.

use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest assignment problem accepted; class counts beyond this are
/// almost certainly a bug upstream.
pub const MAX_CLASSES: usize = 64;

/// Contingency counts between truth classes (rows) and predicted clusters
/// (columns), with the distinct original labels kept for reference.
#[derive(Debug, Clone)]
pub struct ConfusionMatrix {
    pub counts: Array2<f64>,
    pub truth_classes: Vec<usize>,
    pub pred_classes: Vec<usize>,
}

impl ConfusionMatrix {
    pub fn build(truth: &[usize], pred: &[usize]) -> Result<Self> {
        if truth.len() != pred.len() {
            return Err(Error::Contract(format!(
                "label vectors differ in length: {} vs {}",
                truth.len(),
                pred.len()
            )));
        }
        if truth.is_empty() {
            return Err(Error::Contract("no samples to score".into()));
        }
        let truth_classes = distinct(truth);
        let pred_classes = distinct(pred);
        if truth_classes.len() > MAX_CLASSES || pred_classes.len() > MAX_CLASSES {
            return Err(Error::Parameter(format!(
                "{} truth classes / {} clusters exceed the supported {MAX_CLASSES}",
                truth_classes.len(),
                pred_classes.len()
            )));
        }
        let mut counts = Array2::zeros((truth_classes.len(), pred_classes.len()));
        for (&t, &p) in truth.iter().zip(pred.iter()) {
            let ti = truth_classes.binary_search(&t).unwrap();
            let pi = pred_classes.binary_search(&p).unwrap();
            counts[[ti, pi]] += 1.0;
        }
        Ok(ConfusionMatrix {
            counts,
            truth_classes,
            pred_classes,
        })
    }

    /// Zero-padded square version for the assignment step.
    pub fn padded(&self) -> Array2<f64> {
        let m = self.counts.nrows().max(self.counts.ncols());
        let mut out = Array2::zeros((m, m));
        out.slice_mut(ndarray::s![..self.counts.nrows(), ..self.counts.ncols()])
            .assign(&self.counts);
        out
    }

    pub fn total(&self) -> f64 {
        self.counts.sum()
    }
}

fn distinct(labels: &[usize]) -> Vec<usize> {
    let mut v: Vec<usize> = labels.to_vec();
    v.sort_unstable();
    v.dedup();
    v
}

/// Maximum-profit one-to-one assignment on a square matrix; returns the
/// column chosen for each row. Runs the O(m^3) augmenting-path scheme with
/// row/column potentials.
pub fn hungarian_match(profit: &ArrayView2<f64>) -> Result<Vec<usize>> {
    let m = profit.nrows();
    if m == 0 || profit.ncols() != m {
        return Err(Error::Contract(format!(
            "assignment needs a nonempty square matrix, got {}x{}",
            m,
            profit.ncols()
        )));
    }
    if m > MAX_CLASSES {
        return Err(Error::Parameter(format!(
            "assignment size {m} exceeds the supported {MAX_CLASSES}"
        )));
    }
    if profit.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("assignment profits must be finite".into()));
    }

    // Minimize the negated profit. Indices are 1-based with column 0 as
    // the virtual start of each augmenting path.
    let cost = |i: usize, j: usize| -profit[[i - 1, j - 1]];
    let mut u = vec![0.0f64; m + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut matched_row = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=m {
        matched_row[0] = i;
        let mut j0 = 0usize;
        let mut min_slack = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0, j) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        while j0 != 0 {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
        }
    }
    let mut row_to_col = vec![0usize; m];
    for j in 1..=m {
        row_to_col[matched_row[j] - 1] = j - 1;
    }
    Ok(row_to_col)
}

/// Overall accuracy after optimal cluster-to-class alignment.
pub fn accuracy(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::build(truth, pred)?;
    let padded = cm.padded();
    let assign = hungarian_match(&padded.view())?;
    let hits: f64 = assign
        .iter()
        .enumerate()
        .map(|(i, &j)| padded[[i, j]])
        .sum();
    Ok(hits / cm.total())
}

/// Normalized mutual information with the geometric-mean normalizer,
/// natural logarithms. Returns zero (with a warning) when either labeling
/// has zero entropy.
pub fn nmi(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::build(truth, pred)?;
    let n = cm.total();
    let rows: Vec<f64> = cm
        .counts
        .rows()
        .into_iter()
        .map(|r| r.sum())
        .collect();
    let cols: Vec<f64> = cm
        .counts
        .columns()
        .into_iter()
        .map(|c| c.sum())
        .collect();
    let h_t: f64 = rows
        .iter()
        .filter(|&&r| r > 0.0)
        .map(|&r| -(r / n) * (r / n).ln())
        .sum();
    let h_p: f64 = cols
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -(c / n) * (c / n).ln())
        .sum();
    if h_t <= 0.0 || h_p <= 0.0 {
        log::warn!("a labeling has zero entropy; reporting zero mutual information");
        return Ok(0.0);
    }
    let mut mi = 0.0;
    for (ti, &r) in rows.iter().enumerate() {
        for (pi, &c) in cols.iter().enumerate() {
            let joint = cm.counts[[ti, pi]];
            if joint > 0.0 {
                mi += (joint / n) * ((n * joint) / (r * c)).ln();
            }
        }
    }
    Ok((mi / (h_t * h_p).sqrt()).clamp(0.0, 1.0))
}

/// Agreement beyond chance on the aligned confusion matrix.
pub fn kappa(truth: &[usize], pred: &[usize]) -> Result<f64> {
    let cm = ConfusionMatrix::build(truth, pred)?;
    let padded = cm.padded();
    let assign = hungarian_match(&padded.view())?;
    let m = padded.nrows();
    // Reorder prediction columns so each truth class's assigned cluster
    // sits on the diagonal.
    let mut aligned = Array2::zeros((m, m));
    for t in 0..m {
        for u in 0..m {
            aligned[[t, u]] = padded[[t, assign[u]]];
        }
    }
    let n = cm.total();
    let p_o: f64 = (0..m).map(|i| aligned[[i, i]]).sum::<f64>() / n;
    let p_e: f64 = (0..m)
        .map(|i| {
            let row: f64 = aligned.row(i).sum();
            let col: f64 = aligned.column(i).sum();
            row * col
        })
        .sum::<f64>()
        / (n * n);
    if (1.0 - p_e).abs() < 1e-15 {
        log::warn!("chance agreement is one; coefficient undefined, reporting zero");
        return Ok(0.0);
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// The three headline numbers of a run, serialized in this exact shape.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MetricReport {
    pub acc: f64,
    pub nmi: f64,
    pub kappa: f64,
}

impl MetricReport {
    pub fn to_json(&self) -> String {
        // Fixed field order and a trailing newline keep the artifact
        // byte-stable across runs.
        format!(
            "{{\n  \"acc\": {},\n  \"nmi\": {},\n  \"kappa\": {}\n}}\n",
            fmt_f64(self.acc),
            fmt_f64(self.nmi),
            fmt_f64(self.kappa)
        )
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }
}

fn fmt_f64(v: f64) -> String {
    let mut buf = ryu_like(v);
    if !buf.contains('.') && !buf.contains('e') && !buf.contains("inf") && !buf.contains("NaN") {
        buf.push_str(".0");
    }
    buf
}

fn ryu_like(v: f64) -> String {
    // serde_json's shortest round-trip formatting via a one-field value.
    serde_json::to_string(&v).unwrap_or_else(|_| v.to_string())
}

/// Score predictions against u16 ground-truth labels.
pub fn evaluate(truth: &[u16], pred: &[usize]) -> Result<MetricReport> {
    let t: Vec<usize> = truth.iter().map(|&v| v as usize).collect();
    Ok(MetricReport {
        acc: accuracy(&t, pred)?,
        nmi: nmi(&t, pred)?,
        kappa: kappa(&t, pred)?,
    })
}

/// Fixed 16-color palette for cluster maps (index = cluster id).
pub const PALETTE: [[u8; 3]; 16] = [
    [230, 25, 75],   // red
    [60, 180, 75],   // green
    [255, 225, 25],  // yellow
    [0, 130, 200],   // blue
    [245, 130, 48],  // orange
    [145, 30, 180],  // purple
    [70, 240, 240],  // cyan
    [240, 50, 230],  // magenta
    [210, 245, 60],  // lime
    [250, 190, 212], // pink
    [0, 128, 128],   // teal
    [220, 190, 255], // lavender
    [170, 110, 40],  // brown
    [255, 250, 200], // beige
    [128, 0, 0],     // maroon
    [170, 255, 195], // mint
];

/// Render a cluster map as a binary PPM. Cells hold the cluster index or
/// a negative value for unlabeled pixels, drawn black.
pub fn export_map(map: &ArrayView2<i32>, path: &Path) -> Result<()> {
    let (h, w) = map.dim();
    if h == 0 || w == 0 {
        return Err(Error::Contract("cluster map is empty".into()));
    }
    let mut bytes = Vec::with_capacity(32 + h * w * 3);
    bytes.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    for i in 0..h {
        for j in 0..w {
            let v = map[[i, j]];
            if v < 0 {
                bytes.extend_from_slice(&[0, 0, 0]);
            } else if (v as usize) < PALETTE.len() {
                bytes.extend_from_slice(&PALETTE[v as usize]);
            } else {
                return Err(Error::Palette(format!(
                    "cluster index {v} exceeds the {}-color palette",
                    PALETTE.len()
                )));
            }
        }
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

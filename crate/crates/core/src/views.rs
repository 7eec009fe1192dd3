//! View construction: band normalization, PCA reduction, the extended
//! morphological profile texture stack, and sliding-window patch features.
//!
//! Two views feed the downstream pipeline. The spectral-spatial view runs
//! PCA on the normalized cube and extracts `w x w` patches around each
//! labelled pixel. The texture view builds a morphological profile (openings
//! and closings by reconstruction over a ladder of disk radii) on the leading
//! principal component images and patches that stack instead.

use ndarray::{Array2, Array3, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{HsiCube, SampleSet};
use crate::linalg;
use crate::morphology;

/// Which pipeline view a feature matrix belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    SpectralSpatial,
    Texture,
}

impl std::fmt::Display for ViewKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ViewKind::SpectralSpatial => write!(f, "spectral_spatial"),
            ViewKind::Texture => write!(f, "texture"),
        }
    }
}

/// Feature matrix for one view: one sample per column (`d x n`).
#[derive(Debug, Clone)]
pub struct ViewFeatures {
    pub kind: ViewKind,
    pub x: Array2<f64>,
}

impl ViewFeatures {
    pub fn d(&self) -> usize {
        self.x.nrows()
    }

    pub fn n(&self) -> usize {
        self.x.ncols()
    }
}

/// Texture-view parameters: number of principal component images and the
/// ladder of disk radii (strictly increasing, all positive).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmpConfig {
    pub n_pcs: usize,
    pub radii: Vec<u32>,
}

impl Default for EmpConfig {
    fn default() -> Self {
        EmpConfig {
            n_pcs: 4,
            radii: vec![1, 2, 3, 4],
        }
    }
}

impl EmpConfig {
    fn validate(&self) -> Result<()> {
        if self.n_pcs == 0 {
            return Err(Error::Parameter("emp.n_pcs must be positive".into()));
        }
        if self.radii.is_empty() {
            return Err(Error::Parameter("emp.radii must not be empty".into()));
        }
        if self.radii[0] == 0 {
            return Err(Error::Parameter("emp radii must be positive".into()));
        }
        if self.radii.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Parameter(
                "emp radii must be strictly increasing".into(),
            ));
        }
        Ok(())
    }

    /// Number of profile layers produced per principal component.
    pub fn layers_per_pc(&self) -> usize {
        2 * self.radii.len() + 1
    }
}

/// Rescale every band to `[0, 1]` with a per-band min-max map. Constant
/// bands collapse to zero.
pub fn normalize_bands(cube: &HsiCube) -> Result<HsiCube> {
    if cube.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("cube contains non-finite values".into()));
    }
    let mut data = cube.data.clone();
    for mut band in data.outer_iter_mut() {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in band.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let span = hi - lo;
        if span > 0.0 {
            band.mapv_inplace(|v| (v - lo) / span);
        } else {
            band.fill(0.0);
        }
    }
    Ok(HsiCube {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        data,
        labels: cube.labels.clone(),
    })
}

/// Project the columns of `x` (`d x n`, one sample per column) onto the top
/// `target_dim` eigenvectors of the sample covariance. The sign of each
/// component is pinned so its largest-magnitude loading is positive, which
/// makes the output deterministic.
pub fn pca_reduce(x: &ArrayView2<f64>, target_dim: usize) -> Result<Array2<f64>> {
    let (d, n) = x.dim();
    if target_dim == 0 || target_dim > d.min(n) {
        return Err(Error::Parameter(format!(
            "pca target dimension {target_dim} must lie in 1..={}",
            d.min(n)
        )));
    }
    let mut centred = x.to_owned();
    for mut row in centred.rows_mut() {
        let mean = row.sum() / n as f64;
        row.mapv_inplace(|v| v - mean);
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centred.dot(&centred.t()) / denom;
    let eig = linalg::sym_eigen(&cov.view())?;
    let mut basis = Array2::zeros((d, target_dim));
    for t in 0..target_dim {
        let col = eig.vectors.column(d - 1 - t);
        // Pin the sign: largest-magnitude loading positive, lowest index on ties.
        let mut pivot = 0;
        for (i, v) in col.iter().enumerate() {
            if v.abs() > col[pivot].abs() {
                pivot = i;
            }
        }
        let flip = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[[i, t]] = flip * col[i];
        }
    }
    Ok(basis.t().dot(&centred))
}

/// Morphological profile of one image: closings by reconstruction with
/// descending radius, the image itself, then openings with ascending radius.
pub fn morphological_profile(img: &Array2<f64>, radii: &[u32]) -> Vec<Array2<f64>> {
    let mut layers = Vec::with_capacity(2 * radii.len() + 1);
    for &r in radii.iter().rev() {
        layers.push(morphology::closing_by_reconstruction(img, r));
    }
    layers.push(img.clone());
    for &r in radii {
        layers.push(morphology::opening_by_reconstruction(img, r));
    }
    layers
}

/// Extended morphological profile cube: PCA down to `cfg.n_pcs` component
/// images, then one profile stack per component. Output bands =
/// `n_pcs * (2 * |radii| + 1)`, ordered component-major.
pub fn emp_texture(cube: &HsiCube, cfg: &EmpConfig) -> Result<HsiCube> {
    cfg.validate()?;
    let pixels = cube.height * cube.width;
    if cfg.n_pcs > cube.bands.min(pixels) {
        return Err(Error::Parameter(format!(
            "emp.n_pcs {} exceeds min(bands, pixels) = {}",
            cfg.n_pcs,
            cube.bands.min(pixels)
        )));
    }
    let flat = cube_to_matrix(cube);
    let projected = pca_reduce(&flat.view(), cfg.n_pcs)?;

    let pc_images: Vec<Array2<f64>> = (0..cfg.n_pcs)
        .map(|p| {
            Array2::from_shape_fn((cube.height, cube.width), |(r, c)| {
                projected[[p, r * cube.width + c]]
            })
        })
        .collect();

    let profiles: Vec<Vec<Array2<f64>>> = pc_images
        .par_iter()
        .map(|img| morphological_profile(img, &cfg.radii))
        .collect();

    let layers = cfg.layers_per_pc();
    let mut data = Array3::zeros((cfg.n_pcs * layers, cube.height, cube.width));
    for (p, profile) in profiles.iter().enumerate() {
        for (l, layer) in profile.iter().enumerate() {
            for r in 0..cube.height {
                for c in 0..cube.width {
                    data[[p * layers + l, r, c]] = layer[[r, c]];
                }
            }
        }
    }
    Ok(HsiCube {
        height: cube.height,
        width: cube.width,
        bands: cfg.n_pcs * layers,
        data,
        labels: cube.labels.clone(),
    })
}

/// Flatten a `w x w` neighbourhood around every sample into one column.
/// Borders are mirrored (edge pixel included). Within a column the layout is
/// band-major: index `b * w * w + dr * w + dc`.
pub fn extract_patches(
    cube: &HsiCube,
    samples: &SampleSet,
    w: usize,
    kind: ViewKind,
) -> Result<ViewFeatures> {
    if w == 0 || w.is_multiple_of(2) {
        return Err(Error::Parameter(format!(
            "window width {w} must be odd and positive"
        )));
    }
    let half = (w / 2) as isize;
    let d = w * w * cube.bands;
    let mut x = Array2::zeros((d, samples.n()));
    for (i, &(r, c)) in samples.positions.iter().enumerate() {
        let mut idx = 0;
        for b in 0..cube.bands {
            for dr in -half..=half {
                let rr = mirror_index(r as isize + dr, cube.height);
                for dc in -half..=half {
                    let cc = mirror_index(c as isize + dc, cube.width);
                    x[[idx, i]] = cube.data[[b, rr, cc]];
                    idx += 1;
                }
            }
        }
    }
    Ok(ViewFeatures { kind, x })
}

/// Spectral-spatial view: PCA on the normalized cube, then patches.
pub fn build_spectral_spatial(
    cube: &HsiCube,
    samples: &SampleSet,
    pca_dims: usize,
    w: usize,
) -> Result<ViewFeatures> {
    let flat = cube_to_matrix(cube);
    let projected = pca_reduce(&flat.view(), pca_dims)?;
    let reduced = matrix_to_cube(&projected.view(), cube);
    extract_patches(&reduced, samples, w, ViewKind::SpectralSpatial)
}

/// Texture view: morphological profile stack, then patches.
pub fn build_texture(
    cube: &HsiCube,
    samples: &SampleSet,
    emp: &EmpConfig,
    w: usize,
) -> Result<ViewFeatures> {
    let profile = emp_texture(cube, emp)?;
    extract_patches(&profile, samples, w, ViewKind::Texture)
}

/// Mirror an index into `[0, n)`, reflecting across the border with the edge
/// pixel repeated: -1 -> 0, -2 -> 1, n -> n-1.
pub(crate) fn mirror_index(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let mut m = i % period;
    if m < 0 {
        m += period;
    }
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

/// Cube as a `bands x pixels` matrix, pixels in row-major order.
fn cube_to_matrix(cube: &HsiCube) -> Array2<f64> {
    Array2::from_shape_fn((cube.bands, cube.height * cube.width), |(b, p)| {
        cube.data[[b, p / cube.width, p % cube.width]]
    })
}

/// Rewrap a `k x pixels` matrix into a cube with `k` bands, reusing the
/// reference scene's extent and labels.
fn matrix_to_cube(m: &ArrayView2<f64>, like: &HsiCube) -> HsiCube {
    let bands = m.nrows();
    let data = Array3::from_shape_fn((bands, like.height, like.width), |(b, r, c)| {
        m[[b, r * like.width + c]]
    });
    HsiCube {
        height: like.height,
        width: like.width,
        bands,
        data,
        labels: like.labels.clone(),
    }
}

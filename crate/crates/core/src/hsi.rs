//! Hyperspectral scene container: a band-sequential f32 cube, an optional
//! u16 label raster, and a small JSON manifest tying them together.
//!
//! Manifest layout:
//!
//! ```json
//! {
//!   "height": 85, "width": 70, "bands": 200,
//!   "dtype": "f32le", "order": "bsq",
//!   "data": "scene.raw", "labels": "scene_labels.raw"
//! }
//! ```
//!
//! `labels` may be `null` for unlabelled scenes. Payload paths are resolved
//! relative to the manifest. Values are promoted to f64 in memory; all
//! downstream arithmetic runs in double precision.

use std::fs;
use std::path::Path;

use ndarray::{Array2, Array3, ArrayView2};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// In-memory hyperspectral scene. `data` is indexed `(band, row, col)`,
/// matching the band-sequential file layout; `labels` is `(row, col)` with
/// 0 meaning unlabelled.
#[derive(Debug, Clone)]
pub struct HsiCube {
    pub height: usize,
    pub width: usize,
    pub bands: usize,
    pub data: Array3<f64>,
    pub labels: Array2<u16>,
}

/// Half-open crop window `[row_start, row_end) x [col_start, col_end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneCrop {
    pub row_start: usize,
    pub row_end: usize,
    pub col_start: usize,
    pub col_end: usize,
}

/// Labelled pixels pulled out of a scene in row-major order.
/// `features` holds one spectrum per column (`bands x n`).
#[derive(Debug, Clone)]
pub struct SampleSet {
    pub features: Array2<f64>,
    pub positions: Vec<(usize, usize)>,
    pub truth: Vec<u16>,
}

/// Parameters for the synthetic union-of-subspaces scene generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub n_clusters: usize,
    pub nodes_per_cluster: usize,
    pub ambient_dim: usize,
    pub subspace_dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    height: usize,
    width: usize,
    bands: usize,
    dtype: String,
    order: String,
    data: String,
    labels: Option<String>,
}

impl HsiCube {
    /// Value at `(row, col, band)`.
    pub fn value(&self, row: usize, col: usize, band: usize) -> f64 {
        self.data[[band, row, col]]
    }

    pub fn label(&self, row: usize, col: usize) -> u16 {
        self.labels[[row, col]]
    }

    /// Number of distinct nonzero labels in the scene.
    pub fn distinct_labels(&self) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for &l in self.labels.iter() {
            if l > 0 {
                seen.insert(l);
            }
        }
        seen.len()
    }
}

impl SampleSet {
    pub fn n(&self) -> usize {
        self.positions.len()
    }
}

/// Read a scene from its manifest.
pub fn load_cube(manifest_path: &Path) -> Result<HsiCube> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::Data(format!("cannot read manifest {manifest_path:?}: {e}")))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("manifest {manifest_path:?}: {e}")))?;
    if manifest.dtype != "f32le" {
        return Err(Error::Format(format!(
            "unsupported dtype {:?} (expected \"f32le\")",
            manifest.dtype
        )));
    }
    if manifest.order != "bsq" {
        return Err(Error::Format(format!(
            "unsupported band order {:?} (expected \"bsq\")",
            manifest.order
        )));
    }
    if manifest.height == 0 || manifest.width == 0 || manifest.bands == 0 {
        return Err(Error::Format("scene extent must be nonzero".into()));
    }
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let raw = fs::read(dir.join(&manifest.data))
        .map_err(|e| Error::Data(format!("cannot read cube payload {:?}: {e}", manifest.data)))?;
    let expected = manifest.height * manifest.width * manifest.bands * 4;
    if raw.len() != expected {
        return Err(Error::Format(format!(
            "cube payload holds {} bytes, manifest implies {expected}",
            raw.len()
        )));
    }
    let mut values = Vec::with_capacity(raw.len() / 4);
    for chunk in raw.chunks_exact(4) {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::Data(format!(
                "non-finite cube value {v} at element {}",
                values.len()
            )));
        }
        values.push(v as f64);
    }
    let data = Array3::from_shape_vec((manifest.bands, manifest.height, manifest.width), values)
        .expect("length checked above");

    let labels = match &manifest.labels {
        None => Array2::zeros((manifest.height, manifest.width)),
        Some(name) => {
            let raw = fs::read(dir.join(name))
                .map_err(|e| Error::Data(format!("cannot read label payload {name:?}: {e}")))?;
            let expected = manifest.height * manifest.width * 2;
            if raw.len() != expected {
                return Err(Error::Format(format!(
                    "label payload holds {} bytes, manifest implies {expected}",
                    raw.len()
                )));
            }
            let values: Vec<u16> = raw
                .chunks_exact(2)
                .map(|c| u16::from_le_bytes([c[0], c[1]]))
                .collect();
            Array2::from_shape_vec((manifest.height, manifest.width), values)
                .expect("length checked above")
        }
    };

    Ok(HsiCube {
        height: manifest.height,
        width: manifest.width,
        bands: manifest.bands,
        data,
        labels,
    })
}

/// Write a scene next to `manifest_path`. Payload files take the manifest's
/// file stem: `<stem>.raw` and `<stem>_labels.raw`.
pub fn save_cube(cube: &HsiCube, manifest_path: &Path) -> Result<()> {
    let stem = manifest_path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Parameter(format!("bad manifest path {manifest_path:?}")))?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;

    let data_name = format!("{stem}.raw");
    let labels_name = format!("{stem}_labels.raw");

    let mut bytes = Vec::with_capacity(cube.data.len() * 4);
    for &v in cube.data.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(dir.join(&data_name), &bytes)?;

    let mut label_bytes = Vec::with_capacity(cube.labels.len() * 2);
    for &l in cube.labels.iter() {
        label_bytes.extend_from_slice(&l.to_le_bytes());
    }
    fs::write(dir.join(&labels_name), &label_bytes)?;

    let manifest = Manifest {
        height: cube.height,
        width: cube.width,
        bands: cube.bands,
        dtype: "f32le".into(),
        order: "bsq".into(),
        data: data_name,
        labels: Some(labels_name),
    };
    fs::write(
        manifest_path,
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

/// Cut a half-open window out of a scene, labels included.
pub fn crop_scene(cube: &HsiCube, crop: &SceneCrop) -> Result<HsiCube> {
    if crop.row_start >= crop.row_end || crop.col_start >= crop.col_end {
        return Err(Error::Range(format!(
            "empty crop window rows {}..{} cols {}..{}",
            crop.row_start, crop.row_end, crop.col_start, crop.col_end
        )));
    }
    if crop.row_end > cube.height || crop.col_end > cube.width {
        return Err(Error::Range(format!(
            "crop rows {}..{} cols {}..{} exceeds scene {}x{}",
            crop.row_start, crop.row_end, crop.col_start, crop.col_end, cube.height, cube.width
        )));
    }
    let data = cube
        .data
        .slice(ndarray::s![
            ..,
            crop.row_start..crop.row_end,
            crop.col_start..crop.col_end
        ])
        .to_owned();
    let labels = cube
        .labels
        .slice(ndarray::s![
            crop.row_start..crop.row_end,
            crop.col_start..crop.col_end
        ])
        .to_owned();
    Ok(HsiCube {
        height: crop.row_end - crop.row_start,
        width: crop.col_end - crop.col_start,
        bands: cube.bands,
        data,
        labels,
    })
}

/// Collect every labelled pixel in row-major scan order.
pub fn extract_samples(cube: &HsiCube) -> Result<SampleSet> {
    let mut positions = Vec::new();
    let mut truth = Vec::new();
    for r in 0..cube.height {
        for c in 0..cube.width {
            let l = cube.labels[[r, c]];
            if l > 0 {
                positions.push((r, c));
                truth.push(l);
            }
        }
    }
    if positions.is_empty() {
        return Err(Error::Data("scene has no labelled pixels".into()));
    }
    let mut features = Array2::zeros((cube.bands, positions.len()));
    for (i, &(r, c)) in positions.iter().enumerate() {
        for b in 0..cube.bands {
            features[[b, i]] = cube.data[[b, r, c]];
        }
    }
    Ok(SampleSet {
        features,
        positions,
        truth,
    })
}

/// Distance (in coefficient space) between a cluster's signature and the
/// origin of its subspace. Keeping this a few standard deviations above the
/// per-axis coefficient spread gives every class a distinct "material
/// signature" around which its samples concentrate, the way real spectra
/// cluster around a material's reflectance curve. Without it the classes
/// would be concentric zero-mean clouds whose pairwise distances are nearly
/// indistinguishable, and no neighbourhood graph could tell them apart.
const SIGNATURE_OFFSET: f64 = 3.0;

/// Generate a synthetic scene whose classes live on random low-dimensional
/// subspaces. Each cluster occupies a contiguous rectangular block so the
/// spatial views carry signal; every pixel is labelled. Samples are drawn
/// around a per-cluster signature inside the subspace, so the feature matrix
/// of each class still has rank at most `subspace_dim` when noise is zero.
pub fn synth_multiview(spec: &SynthSpec) -> Result<(SampleSet, HsiCube)> {
    if spec.n_clusters < 2 {
        return Err(Error::Parameter(format!(
            "need at least 2 clusters, got {}",
            spec.n_clusters
        )));
    }
    if spec.nodes_per_cluster == 0 {
        return Err(Error::Parameter("nodes_per_cluster must be positive".into()));
    }
    if spec.subspace_dim == 0 || spec.subspace_dim > spec.ambient_dim {
        return Err(Error::Parameter(format!(
            "subspace_dim {} must lie in 1..={}",
            spec.subspace_dim, spec.ambient_dim
        )));
    }
    if !(spec.noise_sigma.is_finite() && spec.noise_sigma >= 0.0) {
        return Err(Error::Parameter(format!(
            "noise_sigma {} must be finite and nonnegative",
            spec.noise_sigma
        )));
    }

    let (block_h, block_w) = block_shape(spec.nodes_per_cluster);
    let height = block_h;
    let width = spec.n_clusters * block_w;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let mut data = Array3::zeros((spec.ambient_dim, height, width));
    let mut labels = Array2::zeros((height, width));
    for cluster in 0..spec.n_clusters {
        let basis = random_orthonormal_basis(spec.ambient_dim, spec.subspace_dim, &mut rng);
        let mut center = vec![0.0f64; spec.subspace_dim];
        let mut norm = 0.0;
        for slot in center.iter_mut() {
            *slot = rng.sample(StandardNormal);
            norm += *slot * *slot;
        }
        let norm = norm.sqrt().max(f64::MIN_POSITIVE);
        for slot in center.iter_mut() {
            *slot *= SIGNATURE_OFFSET / norm;
        }
        let col0 = cluster * block_w;
        for r in 0..block_h {
            for c in 0..block_w {
                let mut x = vec![0.0f64; spec.ambient_dim];
                for (j, &mu) in center.iter().enumerate() {
                    let coeff: f64 = mu + rng.sample::<f64, _>(StandardNormal);
                    for (d, slot) in x.iter_mut().enumerate() {
                        *slot += basis[[d, j]] * coeff;
                    }
                }
                for (d, slot) in x.iter_mut().enumerate() {
                    if spec.noise_sigma > 0.0 {
                        let eps: f64 = rng.sample(StandardNormal);
                        *slot += spec.noise_sigma * eps;
                    }
                    data[[d, r, col0 + c]] = *slot;
                }
                labels[[r, col0 + c]] = (cluster + 1) as u16;
            }
        }
    }

    let cube = HsiCube {
        height,
        width,
        bands: spec.ambient_dim,
        data,
        labels,
    };
    let samples = extract_samples(&cube)?;
    Ok((samples, cube))
}

/// Block dimensions `(h, w)` with `h * w == nodes` and `h <= w`, as square
/// as the factorization allows.
fn block_shape(nodes: usize) -> (usize, usize) {
    let mut h = (nodes as f64).sqrt().floor() as usize;
    while h > 1 && !nodes.is_multiple_of(h) {
        h -= 1;
    }
    (h.max(1), nodes / h.max(1))
}

fn random_orthonormal_basis(dim: usize, rank: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let mut basis: Array2<f64> = Array2::zeros((dim, rank));
    let mut j = 0;
    while j < rank {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        // Modified Gram-Schmidt against the accepted columns.
        for q in 0..j {
            let dot: f64 = (0..dim).map(|d| v[d] * basis[[d, q]]).sum();
            for (d, slot) in v.iter_mut().enumerate() {
                *slot -= dot * basis[[d, q]];
            }
        }
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm < 1e-8 {
            continue;
        }
        for d in 0..dim {
            basis[[d, j]] = v[d] / norm;
        }
        j += 1;
    }
    basis
}

/// Rank of a matrix estimated from the spectrum of its Gram matrix; used by
/// tests on the synthetic generator.
pub fn numerical_rank(m: &ArrayView2<f64>, tol: f64) -> usize {
    let gram = if m.nrows() <= m.ncols() {
        m.dot(&m.t())
    } else {
        m.t().dot(m)
    };
    match crate::linalg::sym_eigen(&gram.view()) {
        Ok(eig) => {
            let top = eig.values.iter().fold(0.0f64, |a, &b| a.max(b));
            eig.values.iter().filter(|&&v| v > tol * top.max(1e-300)).count()
        }
        Err(_) => 0,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use tempfile::tempdir;

    fn write_container(
        dir: &Path,
        height: usize,
        width: usize,
        bands: usize,
        values: &[f32],
        labels: Option<&[u16]>,
    ) -> std::path::PathBuf {
        let data_path = dir.join("scene.raw");
        let mut bytes = Vec::new();
        for v in values {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        fs::write(&data_path, bytes).unwrap();
        let labels_field = match labels {
            Some(ls) => {
                let mut bytes = Vec::new();
                for l in ls {
                    bytes.extend_from_slice(&l.to_le_bytes());
                }
                fs::write(dir.join("scene_labels.raw"), bytes).unwrap();
                "\"scene_labels.raw\"".to_string()
            }
            None => "null".to_string(),
        };
        let manifest = format!(
            "{{\"height\":{height},\"width\":{width},\"bands\":{bands},\"dtype\":\"f32le\",\"order\":\"bsq\",\"data\":\"scene.raw\",\"labels\":{labels_field}}}"
        );
        let path = dir.join("scene.json");
        fs::write(&path, manifest).unwrap();
        path
    }

    #[test]
    fn loads_bsq_cube_with_expected_indexing() {
        let dir = tempdir().unwrap();
        let path = write_container(dir.path(), 2, 2, 1, &[1.0, 2.0, 3.0, 4.0], None);
        let cube = load_cube(&path).unwrap();
        assert_eq!(cube.value(0, 0, 0), 1.0);
        assert_eq!(cube.value(0, 1, 0), 2.0);
        assert_eq!(cube.value(1, 0, 0), 3.0);
        assert_eq!(cube.value(1, 1, 0), 4.0);
        assert_eq!(cube.distinct_labels(), 0);
    }

    #[test]
    fn rejects_size_mismatch() {
        let dir = tempdir().unwrap();
        // Manifest claims 5 floats but payload has 4.
        let path = write_container(dir.path(), 5, 1, 1, &[1.0, 2.0, 3.0, 4.0], None);
        match load_cube(&path) {
            Err(Error::Format(msg)) => assert!(msg.contains("bytes")),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_unknown_dtype_and_order() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("scene.json");
        fs::write(
            &path,
            "{\"height\":1,\"width\":1,\"bands\":1,\"dtype\":\"f64le\",\"order\":\"bsq\",\"data\":\"x.raw\",\"labels\":null}",
        )
        .unwrap();
        assert!(matches!(load_cube(&path), Err(Error::Format(_))));
        fs::write(
            &path,
            "{\"height\":1,\"width\":1,\"bands\":1,\"dtype\":\"f32le\",\"order\":\"bil\",\"data\":\"x.raw\",\"labels\":null}",
        )
        .unwrap();
        assert!(matches!(load_cube(&path), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_non_finite_values() {
        let dir = tempdir().unwrap();
        let path = write_container(dir.path(), 1, 2, 1, &[1.0, f32::NAN], None);
        assert!(matches!(load_cube(&path), Err(Error::Data(_))));
    }

    #[test]
    fn save_load_round_trip_is_byte_identical() {
        let dir = tempdir().unwrap();
        let src = write_container(
            dir.path(),
            2,
            3,
            2,
            &[0.5, -1.25, 3.75, 2.0, 0.0, 9.5, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            Some(&[0, 1, 2, 0, 3, 0]),
        );
        let cube = load_cube(&src).unwrap();
        let copy_manifest = dir.path().join("copy.json");
        save_cube(&cube, &copy_manifest).unwrap();
        let original = fs::read(dir.path().join("scene.raw")).unwrap();
        let rewritten = fs::read(dir.path().join("copy.raw")).unwrap();
        assert_eq!(original, rewritten, "cube payload changed in round trip");
        let original_labels = fs::read(dir.path().join("scene_labels.raw")).unwrap();
        let rewritten_labels = fs::read(dir.path().join("copy_labels.raw")).unwrap();
        assert_eq!(original_labels, rewritten_labels);
        let reloaded = load_cube(&copy_manifest).unwrap();
        assert_eq!(reloaded.labels, cube.labels);
    }

    #[test]
    fn crop_matches_index_arithmetic() {
        let dir = tempdir().unwrap();
        let values: Vec<f32> = (0..24).map(|v| v as f32).collect();
        let path = write_container(dir.path(), 3, 4, 2, &values, None);
        let cube = load_cube(&path).unwrap();
        let crop = SceneCrop {
            row_start: 1,
            row_end: 3,
            col_start: 0,
            col_end: 2,
        };
        let sub = crop_scene(&cube, &crop).unwrap();
        assert_eq!((sub.height, sub.width, sub.bands), (2, 2, 2));
        for b in 0..2 {
            for r in 0..2 {
                for c in 0..2 {
                    assert_eq!(sub.value(r, c, b), cube.value(r + 1, c, b));
                }
            }
        }
    }

    #[test]
    fn crop_out_of_bounds_is_range_error() {
        let dir = tempdir().unwrap();
        let path = write_container(dir.path(), 2, 2, 1, &[0.0; 4], None);
        let cube = load_cube(&path).unwrap();
        let crop = SceneCrop {
            row_start: 0,
            row_end: 3,
            col_start: 0,
            col_end: 1,
        };
        assert!(matches!(crop_scene(&cube, &crop), Err(Error::Range(_))));
        let empty = SceneCrop {
            row_start: 1,
            row_end: 1,
            col_start: 0,
            col_end: 1,
        };
        assert!(matches!(crop_scene(&cube, &empty), Err(Error::Range(_))));
    }

    #[test]
    fn extract_samples_follows_row_major_scan() {
        let dir = tempdir().unwrap();
        let values: Vec<f32> = (0..6).map(|v| v as f32 * 10.0).collect();
        let path = write_container(dir.path(), 2, 3, 1, &values, Some(&[0, 4, 0, 7, 0, 7]));
        let cube = load_cube(&path).unwrap();
        let samples = extract_samples(&cube).unwrap();
        assert_eq!(samples.n(), 3);
        assert_eq!(samples.positions, vec![(0, 1), (1, 0), (1, 2)]);
        assert_eq!(samples.truth, vec![4, 7, 7]);
        assert_eq!(samples.features[[0, 0]], 10.0);
        assert_eq!(samples.features[[0, 1]], 30.0);
        assert_eq!(samples.features[[0, 2]], 50.0);
    }

    #[test]
    fn extract_samples_requires_labels() {
        let dir = tempdir().unwrap();
        let path = write_container(dir.path(), 1, 2, 1, &[1.0, 2.0], None);
        let cube = load_cube(&path).unwrap();
        assert!(matches!(extract_samples(&cube), Err(Error::Data(_))));
    }

    #[test]
    fn synth_is_deterministic_per_seed() {
        let spec = SynthSpec {
            n_clusters: 3,
            nodes_per_cluster: 20,
            ambient_dim: 8,
            subspace_dim: 2,
            noise_sigma: 0.05,
            seed: 42,
        };
        let (a, cube_a) = synth_multiview(&spec).unwrap();
        let (b, cube_b) = synth_multiview(&spec).unwrap();
        assert_eq!(cube_a.labels, cube_b.labels);
        assert_eq!(a.features, b.features);
        let (c, _) = synth_multiview(&SynthSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.features, c.features);
    }

    #[test]
    fn synth_clusters_are_low_rank_without_noise() {
        let spec = SynthSpec {
            n_clusters: 3,
            nodes_per_cluster: 30,
            ambient_dim: 10,
            subspace_dim: 3,
            noise_sigma: 0.0,
            seed: 7,
        };
        let (samples, _) = synth_multiview(&spec).unwrap();
        for cluster in 1..=3u16 {
            let cols: Vec<usize> = samples
                .truth
                .iter()
                .enumerate()
                .filter(|(_, &t)| t == cluster)
                .map(|(i, _)| i)
                .collect();
            assert_eq!(cols.len(), 30);
            let mut sub = Array2::zeros((10, cols.len()));
            for (j, &i) in cols.iter().enumerate() {
                sub.column_mut(j).assign(&samples.features.column(i));
            }
            let rank = numerical_rank(&sub.view(), 1e-9);
            assert!(
                rank <= 3,
                "cluster {cluster} rank {rank} exceeds subspace dimension"
            );
        }
    }

    #[test]
    fn synth_blocks_are_contiguous_rectangles() {
        let spec = SynthSpec {
            n_clusters: 4,
            nodes_per_cluster: 12,
            ambient_dim: 5,
            subspace_dim: 1,
            noise_sigma: 0.1,
            seed: 3,
        };
        let (_, cube) = synth_multiview(&spec).unwrap();
        assert_eq!(cube.height * cube.width, 48);
        for cluster in 1..=4u16 {
            let cells: Vec<(usize, usize)> = (0..cube.height)
                .flat_map(|r| (0..cube.width).map(move |c| (r, c)))
                .filter(|&(r, c)| cube.labels[[r, c]] == cluster)
                .collect();
            assert_eq!(cells.len(), 12);
            let rmin = cells.iter().map(|p| p.0).min().unwrap();
            let rmax = cells.iter().map(|p| p.0).max().unwrap();
            let cmin = cells.iter().map(|p| p.1).min().unwrap();
            let cmax = cells.iter().map(|p| p.1).max().unwrap();
            assert_eq!(
                (rmax - rmin + 1) * (cmax - cmin + 1),
                cells.len(),
                "cluster {cluster} does not fill its bounding box"
            );
        }
    }

    #[test]
    fn synth_rejects_bad_parameters() {
        let base = SynthSpec {
            n_clusters: 2,
            nodes_per_cluster: 4,
            ambient_dim: 4,
            subspace_dim: 2,
            noise_sigma: 0.1,
            seed: 0,
        };
        assert!(synth_multiview(&SynthSpec { n_clusters: 1, ..base.clone() }).is_err());
        assert!(synth_multiview(&SynthSpec { subspace_dim: 5, ..base.clone() }).is_err());
        assert!(synth_multiview(&SynthSpec { noise_sigma: -1.0, ..base.clone() }).is_err());
        assert!(synth_multiview(&SynthSpec { nodes_per_cluster: 0, ..base }).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]

        #[test]
        fn round_trip_preserves_payload(
            height in 1usize..4,
            width in 1usize..4,
            bands in 1usize..3,
            seed in 0u64..1000,
        ) {
            let dir = tempdir().unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = height * width * bands;
            let values: Vec<f32> =
                (0..n).map(|_| rand::Rng::gen_range(&mut rng, -100.0f32..100.0)).collect();
            let labels: Vec<u16> =
                (0..height * width).map(|_| rand::Rng::gen_range(&mut rng, 0u16..5)).collect();
            let path = write_container(dir.path(), height, width, bands, &values, Some(&labels));
            let cube = load_cube(&path).unwrap();
            let out = dir.path().join("out.json");
            save_cube(&cube, &out).unwrap();
            let original = fs::read(dir.path().join("scene.raw")).unwrap();
            let rewritten = fs::read(dir.path().join("out.raw")).unwrap();
            prop_assert_eq!(original, rewritten);
        }
    }
}

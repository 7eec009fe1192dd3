//! End-to-end runs: load or synthesize a scene, build the two views,
//! train the contrastive encoders, self-express, fuse, cluster, score,
//! and write artifacts.
//!
//! Configuration is three-layered: explicit fields win over the named
//! preset, which wins over global defaults. A fully resolved copy of the
//! configuration is written next to the results and is itself a valid
//! input, so any run can be reproduced from its own manifest.

use std::path::{Path, PathBuf};

use ndarray::{concatenate, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::encoder::{train, ContrastiveConfig};
use crate::error::{Error, Result};
use crate::graph::{knn_adjacency, GraphView};
use crate::hsi::{crop_scene, extract_samples, load_cube, synth_multiview, HsiCube, SampleSet, SceneCrop, SynthSpec};
use crate::metrics::{evaluate, export_map, MetricReport};
use crate::spectral::cluster;
use crate::subspace::{
    build_affinity, optimize_attention, save_matrix, solve_self_expression,
    AffinityBundle, FusionConfig,
};
use crate::views::{build_spectral_spatial, build_texture, EmpConfig, ViewFeatures};

/// Named parameter bundles for the benchmark scenes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    IndianPines,
    PaviaUniversity,
    Houston,
    XuZhou,
}

struct PresetValues {
    window: usize,
    neighbors: usize,
    lambda: f64,
    crop: SceneCrop,
    n_clusters: usize,
}

impl Preset {
    fn values(self) -> PresetValues {
        match self {
            Preset::IndianPines => PresetValues {
                window: 11,
                neighbors: 25,
                lambda: 100.0,
                crop: SceneCrop {
                    row_start: 30,
                    row_end: 115,
                    col_start: 24,
                    col_end: 94,
                },
                n_clusters: 4,
            },
            Preset::PaviaUniversity => PresetValues {
                window: 11,
                neighbors: 30,
                lambda: 1000.0,
                crop: SceneCrop {
                    row_start: 150,
                    row_end: 350,
                    col_start: 100,
                    col_end: 200,
                },
                n_clusters: 8,
            },
            Preset::Houston => PresetValues {
                window: 11,
                neighbors: 25,
                lambda: 1000.0,
                crop: SceneCrop {
                    row_start: 0,
                    row_end: 349,
                    col_start: 0,
                    col_end: 680,
                },
                n_clusters: 12,
            },
            Preset::XuZhou => PresetValues {
                window: 7,
                neighbors: 35,
                lambda: 100.0,
                crop: SceneCrop {
                    row_start: 0,
                    row_end: 100,
                    col_start: 0,
                    col_end: 260,
                },
                n_clusters: 5,
            },
        }
    }
}

/// Which views feed the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewSelection {
    Both,
    SpectralSpatial,
    Texture,
}

/// How per-view affinities combine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionKind {
    Attention,
    Mean,
}

/// User-facing configuration; unset fields fall back to the preset, then
/// to global defaults.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub manifest: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub preset: Option<Preset>,
    pub crop: Option<SceneCrop>,
    pub n_clusters: Option<usize>,
    pub pca_dims: Option<usize>,
    pub window: Option<usize>,
    pub emp: Option<EmpConfig>,
    pub neighbors: Option<usize>,
    pub lambda: Option<f64>,
    pub contrastive: Option<ContrastiveConfig>,
    pub use_contrastive: Option<bool>,
    pub raw_dictionary: Option<bool>,
    pub views: Option<ViewSelection>,
    pub fusion: Option<FusionKind>,
    pub attention_steps: Option<usize>,
    pub attention_learning_rate: Option<f64>,
    pub restarts: Option<usize>,
    pub seed: Option<u64>,
    pub save_affinity: Option<bool>,
    pub save_graphs: Option<bool>,
}

/// Every knob pinned to a concrete value.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedConfig {
    pub manifest: Option<PathBuf>,
    pub synth: Option<SynthSpec>,
    pub preset: Option<Preset>,
    pub crop: Option<SceneCrop>,
    pub n_clusters: usize,
    pub pca_dims: usize,
    pub window: usize,
    pub emp: EmpConfig,
    pub neighbors: usize,
    pub lambda: f64,
    pub contrastive: ContrastiveConfig,
    pub use_contrastive: bool,
    pub raw_dictionary: bool,
    pub views: ViewSelection,
    pub fusion: FusionKind,
    pub attention_steps: usize,
    pub attention_learning_rate: f64,
    pub restarts: usize,
    pub seed: u64,
    pub save_affinity: bool,
    pub save_graphs: bool,
}

impl PipelineConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PipelineConfig = serde_json::from_str(&text)?;
        Ok(cfg)
    }

    pub fn resolve(&self) -> Result<ResolvedConfig> {
        match (&self.manifest, &self.synth) {
            (None, None) => {
                return Err(Error::Config(
                    "configuration needs either a scene manifest or a synthetic spec".into(),
                ))
            }
            (Some(_), Some(_)) => {
                return Err(Error::Config(
                    "manifest and synth are mutually exclusive".into(),
                ))
            }
            _ => {}
        }
        let preset = self.preset.map(Preset::values);
        let seed = self.seed.unwrap_or(0);
        let window = self
            .window
            .or(preset.as_ref().map(|p| p.window))
            .unwrap_or(5);
        if window.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "patch window {window} must be odd"
            )));
        }
        let n_clusters = self
            .n_clusters
            .or(preset.as_ref().map(|p| p.n_clusters))
            .or(self.synth.as_ref().map(|s| s.n_clusters))
            .ok_or_else(|| Error::Config("number of clusters is not determined".into()))?;
        if n_clusters < 2 {
            return Err(Error::Config(format!(
                "need at least 2 clusters, got {n_clusters}"
            )));
        }
        let use_contrastive = self.use_contrastive.unwrap_or(true);
        let views = self.views.unwrap_or(ViewSelection::Both);
        if use_contrastive && views != ViewSelection::Both {
            return Err(Error::Config(
                "contrastive training needs both views; disable it for single-view runs".into(),
            ));
        }
        let contrastive = self.contrastive.clone().unwrap_or(ContrastiveConfig {
            seed,
            ..ContrastiveConfig::default()
        });
        // Without trained embeddings the dictionary falls back to the
        // propagated raw features.
        let raw_dictionary = self.raw_dictionary.unwrap_or(false) || !use_contrastive;
        let lambda = self
            .lambda
            .or(preset.as_ref().map(|p| p.lambda))
            .unwrap_or(100.0);
        if !(lambda.is_finite() && lambda > 0.0) {
            return Err(Error::Config(format!(
                "self-expression weight {lambda} must be finite and positive"
            )));
        }
        Ok(ResolvedConfig {
            manifest: self.manifest.clone(),
            synth: self.synth.clone(),
            preset: self.preset,
            crop: self.crop.or(preset.as_ref().map(|p| p.crop)),
            n_clusters,
            pca_dims: self.pca_dims.unwrap_or(8),
            window,
            emp: self.emp.clone().unwrap_or_default(),
            neighbors: self
                .neighbors
                .or(preset.as_ref().map(|p| p.neighbors))
                .unwrap_or(20),
            lambda,
            contrastive,
            use_contrastive,
            raw_dictionary,
            views,
            fusion: self.fusion.unwrap_or(FusionKind::Attention),
            attention_steps: self.attention_steps.unwrap_or(100),
            attention_learning_rate: self.attention_learning_rate.unwrap_or(1e-2),
            restarts: self.restarts.unwrap_or(10),
            seed,
            save_affinity: self.save_affinity.unwrap_or(false),
            save_graphs: self.save_graphs.unwrap_or(false),
        })
    }
}

impl ResolvedConfig {
    /// Write back as a configuration where every field is explicit.
    pub fn to_config(&self) -> PipelineConfig {
        PipelineConfig {
            manifest: self.manifest.clone(),
            synth: self.synth.clone(),
            preset: self.preset,
            crop: self.crop,
            n_clusters: Some(self.n_clusters),
            pca_dims: Some(self.pca_dims),
            window: Some(self.window),
            emp: Some(self.emp.clone()),
            neighbors: Some(self.neighbors),
            lambda: Some(self.lambda),
            contrastive: Some(self.contrastive.clone()),
            use_contrastive: Some(self.use_contrastive),
            raw_dictionary: Some(self.raw_dictionary),
            views: Some(self.views),
            fusion: Some(self.fusion),
            attention_steps: Some(self.attention_steps),
            attention_learning_rate: Some(self.attention_learning_rate),
            restarts: Some(self.restarts),
            seed: Some(self.seed),
            save_affinity: Some(self.save_affinity),
            save_graphs: Some(self.save_graphs),
        }
    }
}

/// Everything a finished run reports back.
#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub report: MetricReport,
    pub labels: Vec<usize>,
    pub loss_history: Option<Vec<f64>>,
    pub fusion_history: Option<Vec<f64>>,
    pub attention: Option<Array2<f64>>,
    pub affinities: AffinityBundle,
    pub degenerate: bool,
    pub resolved: ResolvedConfig,
}

struct ViewData {
    features: ViewFeatures,
    graph: GraphView,
    dict: Array2<f64>,
    target: Array2<f64>,
}

fn load_scene(cfg: &ResolvedConfig) -> Result<(HsiCube, SampleSet)> {
    let mut cube = match (&cfg.manifest, &cfg.synth) {
        (Some(path), None) => load_cube(path)?,
        (None, Some(spec)) => synth_multiview(spec)?.1,
        _ => unreachable!("resolution enforces exactly one source"),
    };
    if let Some(crop) = &cfg.crop {
        cube = crop_scene(&cube, crop)?;
    }
    let samples = extract_samples(&cube)?;
    Ok((cube, samples))
}

fn build_views(cfg: &ResolvedConfig, cube: &HsiCube, samples: &SampleSet) -> Result<Vec<ViewFeatures>> {
    let mut views = Vec::new();
    if matches!(cfg.views, ViewSelection::Both | ViewSelection::SpectralSpatial) {
        views.push(build_spectral_spatial(
            cube,
            samples,
            cfg.pca_dims,
            cfg.window,
        )?);
    }
    if matches!(cfg.views, ViewSelection::Both | ViewSelection::Texture) {
        views.push(build_texture(cube, samples, &cfg.emp, cfg.window)?);
    }
    Ok(views)
}

/// Run the full pipeline and write artifacts into `out_dir`.
pub fn run_pipeline(cfg: &PipelineConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    let resolved = cfg.resolve()?;
    run_resolved(&resolved, out_dir)
}

pub fn run_resolved(cfg: &ResolvedConfig, out_dir: &Path) -> Result<PipelineOutcome> {
    std::fs::create_dir_all(out_dir)?;
    let (cube, samples) = load_scene(cfg).map_err(|e| e.in_stage("load"))?;
    let n = samples.n();
    if cfg.neighbors >= n {
        return Err(Error::Config(format!(
            "graph needs neighbors < {n} labeled samples, got {}",
            cfg.neighbors
        ))
        .in_stage("graph"));
    }

    let features = build_views(cfg, &cube, &samples).map_err(|e| e.in_stage("views"))?;
    let mut graphs = Vec::with_capacity(features.len());
    for f in &features {
        let adj = knn_adjacency(&f.x.view(), cfg.neighbors).map_err(|e| e.in_stage("graph"))?;
        graphs.push(GraphView::from_adjacency(adj, cfg.neighbors).map_err(|e| e.in_stage("graph"))?);
    }

    // Contrastive training (both views only).
    let mut loss_history = None;
    let mut trained_embeddings = None;
    if cfg.use_contrastive {
        let outcome =
            train(&features, &graphs, &cfg.contrastive).map_err(|e| e.in_stage("encode"))?;
        loss_history = Some(outcome.loss_history);
        trained_embeddings = Some(outcome.embeddings);
    }

    // Per-view dictionaries and targets for self-expression.
    let mut views = Vec::with_capacity(features.len());
    for (idx, (f, g)) in features.into_iter().zip(graphs).enumerate() {
        let (dict, target) = if cfg.raw_dictionary {
            let propagated = crate::encoder::propagate_input(&f, &g)
                .map_err(|e| e.in_stage("subspace"))?;
            (propagated.reversed_axes(), f.x.clone())
        } else {
            let z = &trained_embeddings
                .as_ref()
                .expect("resolution forces raw dictionaries when training is off")[idx]
                .z;
            (z.clone(), z.clone())
        };
        views.push(ViewData {
            features: f,
            graph: g,
            dict,
            target,
        });
    }

    let mut per_view_affinities = Vec::with_capacity(views.len());
    for v in &views {
        let c = solve_self_expression(&v.dict.view(), &v.target.view(), cfg.lambda)
            .map_err(|e| e.in_stage("subspace"))?;
        per_view_affinities.push(build_affinity(&c.view()).map_err(|e| e.in_stage("subspace"))?);
    }

    // Fusion.
    let mut attention = None;
    let mut fusion_history = None;
    let fused = if per_view_affinities.len() == 1 {
        per_view_affinities[0].clone()
    } else {
        match cfg.fusion {
            FusionKind::Mean => {
                let mut sum = Array2::zeros(per_view_affinities[0].raw_dim());
                for y in &per_view_affinities {
                    sum += y;
                }
                sum / per_view_affinities.len() as f64
            }
            FusionKind::Attention => {
                let dict_cat = concatenate(
                    Axis(0),
                    &views.iter().map(|v| v.dict.view()).collect::<Vec<_>>(),
                )
                .map_err(|e| Error::Contract(e.to_string()).in_stage("fuse"))?;
                let target_cat = concatenate(
                    Axis(0),
                    &views.iter().map(|v| v.target.view()).collect::<Vec<_>>(),
                )
                .map_err(|e| Error::Contract(e.to_string()).in_stage("fuse"))?;
                let fit = optimize_attention(
                    &per_view_affinities,
                    &dict_cat.view(),
                    &target_cat.view(),
                    &FusionConfig {
                        steps: cfg.attention_steps,
                        learning_rate: cfg.attention_learning_rate,
                        lambda: cfg.lambda,
                        seed: cfg.seed,
                    },
                )
                .map_err(|e| e.in_stage("fuse"))?;
                attention = Some(fit.weights);
                fusion_history = Some(fit.history);
                fit.fused
            }
        }
    };

    // Spectral clustering and scoring.
    let outcome = cluster(&fused.view(), cfg.n_clusters, cfg.seed, cfg.restarts)
        .map_err(|e| e.in_stage("cluster"))?;
    let report = evaluate(&samples.truth, &outcome.labels).map_err(|e| e.in_stage("evaluate"))?;

    // Artifacts.
    write_artifacts(
        cfg,
        out_dir,
        &cube,
        &samples,
        &outcome.labels,
        &report,
        loss_history.as_deref(),
        &per_view_affinities,
        &fused,
        &views,
    )
    .map_err(|e| e.in_stage("artifacts"))?;

    Ok(PipelineOutcome {
        report,
        labels: outcome.labels,
        loss_history,
        fusion_history,
        attention: attention.clone(),
        affinities: AffinityBundle {
            per_view: per_view_affinities,
            fused,
            weights: attention,
        },
        degenerate: outcome.degenerate,
        resolved: cfg.clone(),
    })
}

#[allow(clippy::too_many_arguments)]
fn write_artifacts(
    cfg: &ResolvedConfig,
    out_dir: &Path,
    cube: &HsiCube,
    samples: &SampleSet,
    labels: &[usize],
    report: &MetricReport,
    loss_history: Option<&[f64]>,
    per_view: &[Array2<f64>],
    fused: &Array2<f64>,
    views: &[ViewData],
) -> Result<()> {
    report.save(&out_dir.join("metrics.json"))?;

    if let Some(history) = loss_history {
        let mut csv = String::from("epoch,loss\n");
        for (epoch, loss) in history.iter().enumerate() {
            csv.push_str(&format!("{epoch},{loss}\n"));
        }
        std::fs::write(out_dir.join("loss.csv"), csv)?;
    }

    // Full-scene cluster map; unlabeled pixels stay black.
    let mut map = Array2::from_elem((cube.height, cube.width), -1i32);
    for (&(r, c), &label) in samples.positions.iter().zip(labels.iter()) {
        map[[r, c]] = label as i32;
    }
    export_map(&map.view(), &out_dir.join("cluster_map.ppm"))?;

    // Predictions as a raw u16 raster (0 = unlabeled, cluster index + 1).
    let mut raster = vec![0u16; cube.height * cube.width];
    for (&(r, c), &label) in samples.positions.iter().zip(labels.iter()) {
        raster[r * cube.width + c] = label as u16 + 1;
    }
    let mut bytes = Vec::with_capacity(raster.len() * 2);
    for v in raster {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::write(out_dir.join("pred_labels.raw"), bytes)?;

    let mut manifest = serde_json::to_string_pretty(&cfg.to_config())?;
    manifest.push('\n');
    std::fs::write(out_dir.join("run_manifest.json"), manifest)?;

    if cfg.save_affinity {
        save_matrix(&fused.view(), &out_dir.join("fused_affinity.bin"))?;
        for (idx, y) in per_view.iter().enumerate() {
            save_matrix(&y.view(), &out_dir.join(format!("affinity_view{idx}.bin")))?;
        }
    }
    if cfg.save_graphs {
        for (idx, v) in views.iter().enumerate() {
            v.graph
                .write_coo(&out_dir.join(format!("graph_view{}_{}.coo", idx, v.features.kind)))?;
        }
    }
    Ok(())
}

/// The five standard ablations.
///
/// 1. texture view alone, raw dictionary
/// 2. spectral-spatial view alone, raw dictionary
/// 3. both views, raw dictionaries, mean fusion
/// 4. both views, contrastive embeddings, mean fusion
/// 5. both views, contrastive embeddings, attention fusion
pub fn apply_case(cfg: &ResolvedConfig, case: u8) -> Result<ResolvedConfig> {
    let mut out = cfg.clone();
    match case {
        1 => {
            out.views = ViewSelection::Texture;
            out.use_contrastive = false;
            out.raw_dictionary = true;
        }
        2 => {
            out.views = ViewSelection::SpectralSpatial;
            out.use_contrastive = false;
            out.raw_dictionary = true;
        }
        3 => {
            out.views = ViewSelection::Both;
            out.use_contrastive = false;
            out.raw_dictionary = true;
            out.fusion = FusionKind::Mean;
        }
        4 => {
            out.views = ViewSelection::Both;
            out.use_contrastive = true;
            out.raw_dictionary = false;
            out.fusion = FusionKind::Mean;
        }
        5 => {
            out.views = ViewSelection::Both;
            out.use_contrastive = true;
            out.raw_dictionary = false;
            out.fusion = FusionKind::Attention;
        }
        other => {
            return Err(Error::Parameter(format!(
                "ablation case {other} is not defined (expected 1..=5)"
            )))
        }
    }
    Ok(out)
}

/// Run one ablation case into `out_dir/case<N>`.
pub fn run_ablation(cfg: &PipelineConfig, case: u8, out_dir: &Path) -> Result<PipelineOutcome> {
    let resolved = apply_case(&cfg.resolve()?, case)?;
    run_resolved(&resolved, &out_dir.join(format!("case{case}")))
}

/// Parameter swept over a run series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Neighbors,
    Window,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lambda" => Ok(SweepParam::Lambda),
            "neighbors" | "k" => Ok(SweepParam::Neighbors),
            "window" | "w" => Ok(SweepParam::Window),
            other => Err(Error::Parameter(format!(
                "unknown sweep parameter {other:?} (expected lambda, neighbors, or window)"
            ))),
        }
    }
}

/// Run the pipeline once per value, collecting a CSV at
/// `out_dir/sweep.csv`. Failed runs keep their row, marked `failed`.
pub fn run_sweep(
    cfg: &PipelineConfig,
    param: SweepParam,
    values: &[f64],
    out_dir: &Path,
) -> Result<PathBuf> {
    if values.is_empty() {
        return Err(Error::Parameter("sweep needs at least one value".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let base = cfg.resolve()?;
    let mut csv = String::from("value,acc,nmi,kappa\n");
    for (idx, &value) in values.iter().enumerate() {
        let run = apply_sweep_value(&base, param, value)
            .and_then(|cfg| run_resolved(&cfg, &out_dir.join(format!("value{idx}"))));
        match run {
            Ok(outcome) => {
                csv.push_str(&format!(
                    "{value},{},{},{}\n",
                    outcome.report.acc, outcome.report.nmi, outcome.report.kappa
                ));
            }
            Err(e) => {
                log::warn!("sweep value {value} failed: {e}");
                csv.push_str(&format!("{value},failed,failed,failed\n"));
            }
        }
    }
    let path = out_dir.join("sweep.csv");
    std::fs::write(&path, csv)?;
    Ok(path)
}

fn apply_sweep_value(base: &ResolvedConfig, param: SweepParam, value: f64) -> Result<ResolvedConfig> {
    let mut cfg = base.clone();
    match param {
        SweepParam::Lambda => {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Parameter(format!(
                    "swept lambda {value} must be positive"
                )));
            }
            cfg.lambda = value;
        }
        SweepParam::Neighbors => {
            if value.fract() != 0.0 || value < 1.0 {
                return Err(Error::Parameter(format!(
                    "swept neighbor count {value} must be a positive integer"
                )));
            }
            cfg.neighbors = value as usize;
        }
        SweepParam::Window => {
            if value.fract() != 0.0 || value < 1.0 || (value as usize).is_multiple_of(2) {
                return Err(Error::Parameter(format!(
                    "swept window {value} must be an odd positive integer"
                )));
            }
            cfg.window = value as usize;
        }
    }
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_synth_config() -> PipelineConfig {
        PipelineConfig {
            synth: Some(SynthSpec {
                n_clusters: 3,
                nodes_per_cluster: 30,
                ambient_dim: 10,
                subspace_dim: 2,
                noise_sigma: 0.01,
                seed: 5,
            }),
            window: Some(3),
            neighbors: Some(8),
            lambda: Some(50.0),
            pca_dims: Some(6),
            emp: Some(EmpConfig {
                n_pcs: 2,
                radii: vec![1, 2],
            }),
            contrastive: Some(ContrastiveConfig {
                epochs: 40,
                hidden: 24,
                embed: 12,
                ..ContrastiveConfig::default()
            }),
            attention_steps: Some(30),
            restarts: Some(5),
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn presets_resolve_to_their_published_values() {
        let cfg = PipelineConfig {
            synth: Some(SynthSpec {
                n_clusters: 4,
                nodes_per_cluster: 10,
                ambient_dim: 8,
                subspace_dim: 2,
                noise_sigma: 0.01,
                seed: 0,
            }),
            preset: Some(Preset::IndianPines),
            ..PipelineConfig::default()
        };
        let r = cfg.resolve().unwrap();
        assert_eq!(r.window, 11);
        assert_eq!(r.neighbors, 25);
        assert_eq!(r.lambda, 100.0);
        assert_eq!(r.n_clusters, 4);
        let crop = r.crop.unwrap();
        assert_eq!((crop.row_start, crop.row_end), (30, 115));
        assert_eq!((crop.col_start, crop.col_end), (24, 94));

        let r = PipelineConfig {
            preset: Some(Preset::XuZhou),
            ..tiny_synth_config()
        }
        .resolve()
        .unwrap();
        // Explicit fields beat the preset.
        assert_eq!(r.window, 3);
        assert_eq!(r.neighbors, 8);
        // Preset n_clusters beats the synthetic spec's cluster count.
        assert_eq!(r.n_clusters, 5);

        let r = PipelineConfig {
            preset: Some(Preset::PaviaUniversity),
            synth: tiny_synth_config().synth,
            ..PipelineConfig::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((r.window, r.neighbors, r.lambda), (11, 30, 1000.0));
        let r = PipelineConfig {
            preset: Some(Preset::Houston),
            synth: tiny_synth_config().synth,
            ..PipelineConfig::default()
        }
        .resolve()
        .unwrap();
        assert_eq!((r.window, r.neighbors, r.lambda, r.n_clusters), (11, 25, 1000.0, 12));
    }

    #[test]
    fn rejects_incoherent_configs() {
        assert!(matches!(
            PipelineConfig::default().resolve(),
            Err(Error::Config(_))
        ));
        let mut both = tiny_synth_config();
        both.manifest = Some(PathBuf::from("x.json"));
        assert!(matches!(both.resolve(), Err(Error::Config(_))));
        let mut even = tiny_synth_config();
        even.window = Some(4);
        assert!(matches!(even.resolve(), Err(Error::Config(_))));
        let mut single_contrastive = tiny_synth_config();
        single_contrastive.views = Some(ViewSelection::Texture);
        single_contrastive.use_contrastive = Some(true);
        assert!(matches!(
            single_contrastive.resolve(),
            Err(Error::Config(_))
        ));
        let mut bad_lambda = tiny_synth_config();
        bad_lambda.lambda = Some(-3.0);
        assert!(matches!(bad_lambda.resolve(), Err(Error::Config(_))));
    }

    #[test]
    fn disabling_contrastive_forces_raw_dictionaries() {
        let mut cfg = tiny_synth_config();
        cfg.use_contrastive = Some(false);
        let r = cfg.resolve().unwrap();
        assert!(r.raw_dictionary);
    }

    #[test]
    fn resolved_manifest_round_trips() {
        let resolved = tiny_synth_config().resolve().unwrap();
        let text = serde_json::to_string_pretty(&resolved.to_config()).unwrap();
        let back: PipelineConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(back.resolve().unwrap(), resolved);
    }

    #[test]
    fn full_run_writes_all_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        let out = run_pipeline(&tiny_synth_config(), dir.path()).unwrap();
        assert!(out.report.acc > 0.9, "synthetic accuracy {}", out.report.acc);
        assert!(!out.degenerate);

        let metrics_text = std::fs::read_to_string(dir.path().join("metrics.json")).unwrap();
        let parsed: MetricReport = serde_json::from_str(&metrics_text).unwrap();
        assert_eq!(parsed, out.report);

        let loss = std::fs::read_to_string(dir.path().join("loss.csv")).unwrap();
        let lines: Vec<&str> = loss.trim_end().lines().collect();
        assert_eq!(lines[0], "epoch,loss");
        assert_eq!(lines.len(), 1 + 40 + 1, "header plus T+1 entries");
        assert!(lines[1].starts_with("0,"));

        let ppm = std::fs::read(dir.path().join("cluster_map.ppm")).unwrap();
        assert!(ppm.starts_with(b"P6\n"));

        let manifest_text =
            std::fs::read_to_string(dir.path().join("run_manifest.json")).unwrap();
        let manifest: PipelineConfig = serde_json::from_str(&manifest_text).unwrap();
        assert_eq!(manifest.resolve().unwrap(), out.resolved);

        let raster = std::fs::read(dir.path().join("pred_labels.raw")).unwrap();
        assert_eq!(raster.len(), 9 * 10 * 2, "90 nodes as u16");
        assert!(out.attention.is_some());
        assert!(out.fusion_history.is_some());
    }

    #[test]
    fn optional_dumps_appear_on_request() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_synth_config();
        cfg.save_affinity = Some(true);
        cfg.save_graphs = Some(true);
        cfg.contrastive = Some(ContrastiveConfig {
            epochs: 5,
            hidden: 16,
            embed: 8,
            ..ContrastiveConfig::default()
        });
        cfg.attention_steps = Some(5);
        run_pipeline(&cfg, dir.path()).unwrap();
        assert!(dir.path().join("fused_affinity.bin").exists());
        assert!(dir.path().join("fused_affinity.json").exists());
        assert!(dir.path().join("affinity_view0.bin").exists());
        assert!(dir.path().join("affinity_view1.bin").exists());
        assert!(dir.path().join("graph_view0_spectral_spatial.coo").exists());
        assert!(dir.path().join("graph_view1_texture.coo").exists());
    }

    #[test]
    fn ablation_cases_run_and_differ_in_shape() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_synth_config();
        cfg.contrastive = Some(ContrastiveConfig {
            epochs: 10,
            hidden: 16,
            embed: 8,
            ..ContrastiveConfig::default()
        });
        cfg.attention_steps = Some(10);
        for case in 1..=5u8 {
            let out = run_ablation(&cfg, case, dir.path()).unwrap();
            assert!(out.report.acc.is_finite());
            let expected_views = if case <= 2 { 1 } else { 2 };
            assert_eq!(out.affinities.per_view.len(), expected_views, "case {case}");
            let trained = case >= 4;
            assert_eq!(out.loss_history.is_some(), trained, "case {case}");
            assert_eq!(out.attention.is_some(), case == 5, "case {case}");
            assert!(dir.path().join(format!("case{case}/metrics.json")).exists());
        }
        assert!(matches!(
            run_ablation(&cfg, 6, dir.path()),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn sweep_collects_rows_and_marks_failures() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_synth_config();
        cfg.use_contrastive = Some(false);
        cfg.attention_steps = Some(5);
        let path = run_sweep(&cfg, SweepParam::Lambda, &[10.0, 100.0, -1.0], dir.path()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        let lines: Vec<&str> = text.trim_end().lines().collect();
        assert_eq!(lines[0], "value,acc,nmi,kappa");
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("-1,failed"));
        for line in &lines[1..3] {
            let cells: Vec<&str> = line.split(',').collect();
            assert_eq!(cells.len(), 4);
            for cell in &cells[1..] {
                cell.parse::<f64>().unwrap();
            }
        }
    }

    #[test]
    fn window_sweep_rejects_even_values_per_row() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_synth_config();
        cfg.use_contrastive = Some(false);
        let path = run_sweep(&cfg, SweepParam::Window, &[3.0, 4.0], dir.path()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.lines().any(|l| l.starts_with("4,failed")));
    }

    #[test]
    fn identical_runs_are_byte_identical() {
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let mut cfg = tiny_synth_config();
        cfg.contrastive = Some(ContrastiveConfig {
            epochs: 15,
            hidden: 16,
            embed: 8,
            ..ContrastiveConfig::default()
        });
        cfg.attention_steps = Some(10);
        run_pipeline(&cfg, dir_a.path()).unwrap();
        run_pipeline(&cfg, dir_b.path()).unwrap();
        for name in ["metrics.json", "cluster_map.ppm", "loss.csv", "pred_labels.raw"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs between identical runs");
        }
    }
}

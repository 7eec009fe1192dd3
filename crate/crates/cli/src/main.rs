use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mvgsc::error::{Error, Result};
use mvgsc::hsi::{save_cube, synth_multiview, SynthSpec};
use mvgsc::metrics::evaluate;
use mvgsc::pipeline::{run_ablation, run_pipeline, run_sweep, PipelineConfig, SweepParam};

#[derive(Parser)]
#[command(
    name = "mvgsc",
    version,
    about = "Multi-view graph subspace clustering for hyperspectral scenes"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full pipeline from a JSON config and write artifacts.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a single ablation case (1 texture, 2 spectral-spatial, 3 both
    /// views mean-fused, 4 plus contrastive training, 5 full).
    Ablation {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        case: u8,
        /// Artifact directory; defaults to ./mvgsc_ablation
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pipeline once per value of one parameter and collect a CSV.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// One of: lambda, neighbors (k), window (w)
        #[arg(long)]
        param: String,
        /// Comma-separated list, e.g. 0.01,0.1,1,10,100,1000
        #[arg(long)]
        values: String,
        /// Output directory; defaults to ./mvgsc_sweep
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic scene from a spec JSON and save it as a cube.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a predicted label raster against a ground-truth raster.
    /// Both files are little-endian u16 rasters; 0 marks unlabeled pixels.
    Eval {
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        pred: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Pipeline { config, out } => {
            let cfg = PipelineConfig::from_file(&config)?;
            let outcome = run_pipeline(&cfg, &out)?;
            print!("{}", outcome.report.to_json());
            Ok(())
        }
        Command::Ablation { config, case, out } => {
            let cfg = PipelineConfig::from_file(&config)?;
            let out = out.unwrap_or_else(|| PathBuf::from("mvgsc_ablation"));
            let outcome = run_ablation(&cfg, case, &out)?;
            println!("case {case} OA {}", outcome.report.acc);
            print!("{}", outcome.report.to_json());
            Ok(())
        }
        Command::Sweep {
            config,
            param,
            values,
            out,
        } => {
            let cfg = PipelineConfig::from_file(&config)?;
            let param: SweepParam = param.parse()?;
            let values = parse_values(&values)?;
            let out = out.unwrap_or_else(|| PathBuf::from("mvgsc_sweep"));
            let csv_path = run_sweep(&cfg, param, &values, &out)?;
            print!("{}", std::fs::read_to_string(&csv_path)?);
            Ok(())
        }
        Command::Synth { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| Error::Data(format!("cannot read spec {spec:?}: {e}")))?;
            let spec: SynthSpec = serde_json::from_str(&text)?;
            let (samples, cube) = synth_multiview(&spec)?;
            let manifest = out.join("scene.json");
            save_cube(&cube, &manifest)?;
            println!(
                "wrote {}x{}x{} scene with {} labeled pixels to {}",
                cube.height,
                cube.width,
                cube.bands,
                samples.n(),
                manifest.display()
            );
            Ok(())
        }
        Command::Eval { truth, pred } => {
            let truth = read_raster(&truth)?;
            let pred = read_raster(&pred)?;
            if truth.len() != pred.len() {
                return Err(Error::Data(format!(
                    "truth raster holds {} pixels, prediction {}",
                    truth.len(),
                    pred.len()
                )));
            }
            let mut t = Vec::new();
            let mut p = Vec::new();
            for (i, (&tv, &pv)) in truth.iter().zip(pred.iter()).enumerate() {
                if tv == 0 {
                    continue;
                }
                if pv == 0 {
                    return Err(Error::Data(format!(
                        "prediction is unlabeled at labeled pixel {i}"
                    )));
                }
                t.push(tv);
                p.push(pv as usize - 1);
            }
            let report = evaluate(&t, &p)?;
            print!("{}", report.to_json());
            Ok(())
        }
    }
}

fn parse_values(csv: &str) -> Result<Vec<f64>> {
    csv.split(',')
        .map(|s| {
            s.trim()
                .parse::<f64>()
                .map_err(|e| Error::Parameter(format!("bad sweep value {s:?}: {e}")))
        })
        .collect()
}

fn read_raster(path: &Path) -> Result<Vec<u16>> {
    let bytes =
        std::fs::read(path).map_err(|e| Error::Data(format!("cannot read raster {path:?}: {e}")))?;
    if bytes.len() % 2 != 0 {
        return Err(Error::Format(format!(
            "raster {path:?} holds {} bytes, expected little-endian u16 pairs",
            bytes.len()
        )));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

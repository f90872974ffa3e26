use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use splat4d::checkpoint::{load_checkpoint, write_atomic};
use splat4d::dynmask::DynMaskConfig;
use splat4d::error::{Error, Result};
use splat4d::harness::{
    evaluate, generate_synthetic, load_dataset, read_camera, save_dataset, save_masks, write_ppm, SyntheticSceneSpec,
};
use splat4d::raster::render;
use splat4d::trainer::{duration_histogram, dynamic_masks, train_with, TrainConfig};

#[derive(Parser)]
#[command(name = "splat4d", version, about = "4D Gaussian splatting with static, rigid and transient Gaussians")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset from a scene spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute object-wise dynamic masks and store them with the dataset.
    Masks {
        #[arg(long)]
        dataset: PathBuf,
        /// Mask pipeline settings (JSON).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Defaults to the dataset directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Optimize a Gaussian set; writes log.jsonl and checkpoints to --out.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Start from a checkpoint instead of initializing from data.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Render one frame of a checkpoint to PPM.
    Render {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        frame: usize,
        /// Camera JSON `{intrinsics, w2c}`; otherwise taken from --dataset.
        #[arg(long)]
        cam: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// PSNR/SSIM/mask IoU of a checkpoint against a dataset.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        /// Comma-separated frames; all frames when omitted.
        #[arg(long, value_delimiter = ',')]
        frames: Vec<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Histogram of temporal durations; writes JSON plus a PPM plot.
    Hist {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::json(path, e))
}

fn print_json<T: Serialize>(v: &T, out: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(v).map_err(|e| Error::json("<stdout>", e))?;
    println!("{text}");
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => Ok(()),
    }
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { spec, out } => {
            let spec: SyntheticSceneSpec = read_json(&spec)?;
            let ds = generate_synthetic(&spec)?;
            save_dataset(&ds, &out)?;
            eprintln!("wrote {} frames to {}", ds.num_frames(), out.display());
        }
        Cmd::Masks { dataset, config, out } => {
            let cfg: DynMaskConfig = match config {
                Some(p) => read_json(&p)?,
                None => DynMaskConfig::default(),
            };
            let mut ds = load_dataset(&dataset)?;
            ds.frames.iter_mut().for_each(|f| f.dyn_mask = None);
            let masks = dynamic_masks(&ds, &cfg)?;
            save_masks(&masks, out.as_deref().unwrap_or(&dataset))?;
            let px: usize = masks.iter().map(|m| m.count()).sum();
            eprintln!("{} masks, {px} dynamic pixels", masks.len());
        }
        Cmd::Train { dataset, config, out, seed, init, threads } => {
            let mut cfg: TrainConfig = match config {
                Some(p) => read_json(&p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if threads.is_some() {
                cfg.threads = threads;
            }
            let ds = load_dataset(&dataset)?;
            let init = init.map(|p| load_checkpoint(&p)).transpose()?;
            let (set, log) = train_with(&ds, &cfg, init, Some(&out))?;
            let last = log.losses().last().map(|(_, l)| l.total).unwrap_or(f64::NAN);
            eprintln!(
                "trained {} iterations: {} static, {} rigid, {} transient, final loss {last:.6}",
                cfg.iters_total,
                set.statics.len(),
                set.rigids.len(),
                set.transients.len()
            );
        }
        Cmd::Render { ckpt, frame, cam, dataset, out } => {
            let set = load_checkpoint(&ckpt)?;
            if frame >= set.num_frames() {
                return Err(Error::Invalid(format!("frame {frame} outside 0..{}", set.num_frames())));
            }
            let camera = match (cam, dataset) {
                (Some(p), _) => read_camera(&p)?,
                (None, Some(d)) => {
                    let ds = load_dataset(&d)?;
                    ds.frames.get(frame).map(|f| f.camera).ok_or_else(|| {
                        Error::Invalid(format!("dataset has no frame {frame}"))
                    })?
                }
                (None, None) => return Err(Error::Invalid("render needs --cam or --dataset".into())),
            };
            let outputs = render(&set, &camera, frame, None)?;
            write_ppm(&out, &outputs.color())?;
        }
        Cmd::Eval { ckpt, dataset, frames, out } => {
            let set = load_checkpoint(&ckpt)?;
            let ds = load_dataset(&dataset)?;
            let frames = if frames.is_empty() { (0..ds.num_frames()).collect() } else { frames };
            let report = evaluate(&set, &ds, &frames)?;
            print_json(&report, out.as_deref())?;
        }
        Cmd::Hist { ckpt, bins, out } => {
            let set = load_checkpoint(&ckpt)?;
            let h = duration_histogram(&set, bins)?;
            h.save(&out)?;
            eprintln!("{} dynamic Gaussians in bins {:?}", h.total(), h.occupied());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 1 })
        }
    }
}

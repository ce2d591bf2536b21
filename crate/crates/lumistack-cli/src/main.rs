//! `lumistack`: factorize timelapse panorama stacks from the command line.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error (the message names the
//! offending file or frame). Every artifact-writing run drops a
//! `run_manifest.json` with the resolved configuration and a SHA-256 per
//! artifact; rerunning with the same configuration reproduces every hash.

mod cmd_align;
mod cmd_azimuth;
mod cmd_decompose;
mod cmd_eval;
mod cmd_ingest;
mod cmd_relight;
mod cmd_synth;
mod corpus;
mod run;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "lumistack", version, about = "Timelapse panorama factorization pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags every subcommand understands. All are optional here so that a
/// `--config` file can fill them in; defaults apply last.
#[derive(Args, Clone)]
struct Common {
    /// RNG seed (default 0)
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; all artifacts go under it
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file whose keys override flag defaults (a run_manifest.json
    /// replays the run it records)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Panorama resolution as WxH (default 240x80)
    #[arg(long)]
    resolution: Option<String>,
    /// Worker threads; 1 forces serial execution, 0 uses all cores
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliAlignMode {
    Rgb,
    Reflectance,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliMethod {
    Weiss,
    Bicolor,
    Monocolor,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliProtocol {
    Consistency,
    Completion,
    Alignment,
    Azimuth,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic corpus of street scenes with ground truth
    Synth {
        #[command(flatten)]
        common: Common,
        /// Number of scenes (rows)
        #[arg(long)]
        scenes: Option<usize>,
        /// Number of shared illumination times (columns)
        #[arg(long)]
        times: Option<usize>,
        /// Per-frame warp jitter amplitude in pixels
        #[arg(long)]
        jitter: Option<f64>,
    },
    /// Cluster capture records into stacks and write a manifest
    Ingest {
        #[command(flatten)]
        common: Common,
        /// JSON array of capture records
        #[arg(long)]
        records: Option<PathBuf>,
        /// Clustering radius in meters
        #[arg(long)]
        radius_m: Option<f64>,
    },
    /// Jointly align one stack by spline congealing
    Align {
        #[command(flatten)]
        common: Common,
        /// Stack manifest (as written by synth or ingest)
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Stack to align
        #[arg(long)]
        stack_id: Option<String>,
        /// Optimization steps
        #[arg(long)]
        steps: Option<usize>,
        /// Appearance to congeal on
        #[arg(long, value_enum)]
        mode: Option<CliAlignMode>,
    },
    /// Factor one stack into reflectance and per-frame shading
    Decompose {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        stack_id: Option<String>,
        /// Decomposition model
        #[arg(long, value_enum)]
        method: Option<CliMethod>,
        /// Fit iterations
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Estimate sun azimuth for one image or a whole manifest
    Azimuth {
        #[command(flatten)]
        common: Common,
        /// Single image mode: estimate and print
        #[arg(long, conflicts_with = "manifest")]
        image: Option<PathBuf>,
        /// Ground-truth azimuth for the single image, degrees
        #[arg(long, requires = "image")]
        gt_deg: Option<f64>,
        /// Batch mode: walk a manifest, write azimuth.csv
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Batch ground truth: JSON object of frame id to degrees
        #[arg(long, requires = "manifest")]
        gt: Option<PathBuf>,
    },
    /// Refit a synthetic scene and move its sun
    Relight {
        #[command(flatten)]
        common: Common,
        /// Corpus directory written by synth
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Scene index in the corpus
        #[arg(long)]
        scene: Option<usize>,
        /// Frame (time column) whose illumination is moved
        #[arg(long)]
        frame: Option<usize>,
        /// New sun azimuth in degrees
        #[arg(long, conflicts_with = "donor_time")]
        azimuth_deg: Option<f64>,
        /// Take the donor illumination of this time column instead
        #[arg(long)]
        donor_time: Option<usize>,
        /// Fit iterations
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Run one evaluation protocol over a synthetic corpus
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        protocol: Option<CliProtocol>,
        #[arg(long)]
        corpus: Option<PathBuf>,
        /// Fit iterations used inside the protocol
        #[arg(long)]
        iters: Option<usize>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    print!("{e}");
                    ExitCode::SUCCESS
                }
                _ => {
                    eprint!("{e}");
                    ExitCode::from(1)
                }
            };
        }
    };
    let result = match cli.command {
        Command::Synth {
            common,
            scenes,
            times,
            jitter,
        } => cmd_synth::run(common, scenes, times, jitter),
        Command::Ingest {
            common,
            records,
            radius_m,
        } => cmd_ingest::run(common, records, radius_m),
        Command::Align {
            common,
            manifest,
            stack_id,
            steps,
            mode,
        } => cmd_align::run(common, manifest, stack_id, steps, mode),
        Command::Decompose {
            common,
            manifest,
            stack_id,
            method,
            iters,
        } => cmd_decompose::run(common, manifest, stack_id, method, iters),
        Command::Azimuth {
            common,
            image,
            gt_deg,
            manifest,
            gt,
        } => cmd_azimuth::run(common, image, gt_deg, manifest, gt),
        Command::Relight {
            common,
            corpus,
            scene,
            frame,
            azimuth_deg,
            donor_time,
            iters,
        } => cmd_relight::run(common, corpus, scene, frame, azimuth_deg, donor_time, iters),
        Command::Eval {
            common,
            protocol,
            corpus,
            iters,
        } => cmd_eval::run(common, protocol, corpus, iters),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

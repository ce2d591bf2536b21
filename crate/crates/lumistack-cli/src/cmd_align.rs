//! `align`: congeal one stack and write warps, aligned frames, and the
//! stack average.

use lumistack::align::{align_stack, AlignConfig, AlignMode};
use lumistack::error::{Error, Result};
use lumistack::image::{Domain, Panorama};
use lumistack::ingest::{load_stack, read_manifest};
use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::run::{cfg_get, load_config, parse_resolution, require_out, resolve, with_threads, RunWriter};
use crate::{CliAlignMode, Common};

#[derive(Serialize)]
struct Resolved {
    seed: u64,
    resolution: String,
    threads: usize,
    manifest: PathBuf,
    stack_id: String,
    steps: usize,
    mode: String,
}

pub fn find_stack<'m>(
    manifest: &'m lumistack::ingest::Manifest,
    path: &Path,
    stack_id: &str,
) -> Result<&'m lumistack::ingest::StackSkeleton> {
    manifest
        .stacks
        .iter()
        .find(|s| s.stack_id == stack_id)
        .ok_or_else(|| {
            Error::invalid(format!("stack {stack_id} not found in {}", path.display()))
        })
}

/// Pixelwise mean of same-size frames, in their shared domain.
pub fn mean_pano(frames: &[Panorama]) -> Panorama {
    let mut avg = Panorama::new(frames[0].width(), frames[0].height(), Domain::SrgbUnit);
    let nf = frames.len() as f64;
    for f in frames {
        for (a, v) in avg.data_mut().iter_mut().zip(f.data()) {
            *a += v / nf;
        }
    }
    avg
}

pub fn run(
    common: Common,
    manifest: Option<PathBuf>,
    stack_id: Option<String>,
    steps: Option<usize>,
    mode: Option<CliAlignMode>,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let mode_str = match mode {
        Some(CliAlignMode::Rgb) => Some("rgb".to_string()),
        Some(CliAlignMode::Reflectance) => Some("reflectance".to_string()),
        None => None,
    };
    let resolved = Resolved {
        seed: resolve(common.seed, &cfg, "seed", 0)?,
        resolution: resolve(common.resolution.clone(), &cfg, "resolution", "240x80".into())?,
        threads: resolve(common.threads, &cfg, "threads", 0)?,
        manifest: manifest
            .or(cfg_get(&cfg, "manifest")?)
            .ok_or_else(|| Error::invalid("align requires --manifest"))?,
        stack_id: stack_id
            .or(cfg_get(&cfg, "stack_id")?)
            .ok_or_else(|| Error::invalid("align requires --stack-id"))?,
        steps: resolve(steps, &cfg, "steps", 200)?,
        mode: resolve(mode_str, &cfg, "mode", "rgb".into())?,
    };
    let align_mode = match resolved.mode.as_str() {
        "rgb" => AlignMode::Rgb,
        "reflectance" => AlignMode::Reflectance,
        other => return Err(Error::invalid(format!("unknown align mode {other}"))),
    };
    let (w, h) = parse_resolution(&resolved.resolution)?;
    let out = require_out(&common.out, &cfg, "align")?;

    let m = read_manifest(&resolved.manifest)?;
    let skeleton = find_stack(&m, &resolved.manifest, &resolved.stack_id)?;
    let base = resolved.manifest.parent().unwrap_or(Path::new("."));
    let stack = load_stack(skeleton, base, w, h)?;
    let frames: Vec<Panorama> = stack.frames.iter().map(|f| f.image.clone()).collect();

    let align_cfg = AlignConfig {
        steps: resolved.steps,
        mode: align_mode,
        seed: resolved.seed,
        ..AlignConfig::default()
    };
    let res = with_threads(resolved.threads, || align_stack(&frames, &align_cfg, None))??;

    let mut writer = RunWriter::new(&out)?;
    for (i, (grid, aligned)) in res.warps.iter().zip(&res.aligned).enumerate() {
        writer.warp_grid(&format!("warp_{i:02}.raw"), grid)?;
        writer.png(&format!("aligned_{i:02}.png"), aligned)?;
    }
    writer.png("average.png", &mean_pano(&res.aligned))?;

    #[derive(Serialize)]
    struct Trace<'a> {
        stack_id: &'a str,
        steps: usize,
        mode: &'a str,
        loss_trace: &'a [f64],
    }
    writer.json(
        "loss_trace.json",
        &Trace {
            stack_id: &resolved.stack_id,
            steps: resolved.steps,
            mode: &resolved.mode,
            loss_trace: &res.loss_trace,
        },
    )?;
    writer.finish("align", &resolved)
}

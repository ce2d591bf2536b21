//! `relight`: refit one corpus scene and move its sun, either to a given
//! azimuth or to a donor column's full illumination.

use lumistack::error::{Error, Result};
use lumistack::eval::{log_stack, relight, relight_donor, RelightResult};
use lumistack::image::Panorama;
use lumistack::intrinsics::{bicolor_fit, FitConfig};
use serde::Serialize;
use std::path::PathBuf;

use crate::corpus;
use crate::run::{cfg_get, load_config, require_out, resolve, with_threads, RunWriter};
use crate::Common;

#[derive(Serialize)]
struct Resolved {
    seed: u64,
    threads: usize,
    corpus: PathBuf,
    scene: usize,
    frame: usize,
    azimuth_deg: Option<f64>,
    donor_time: Option<usize>,
    iters: usize,
}

pub fn run(
    common: Common,
    corpus_dir: Option<PathBuf>,
    scene: Option<usize>,
    frame: Option<usize>,
    azimuth_deg: Option<f64>,
    donor_time: Option<usize>,
    iters: Option<usize>,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let resolved = Resolved {
        seed: resolve(common.seed, &cfg, "seed", 0)?,
        threads: resolve(common.threads, &cfg, "threads", 0)?,
        corpus: corpus_dir
            .or(cfg_get(&cfg, "corpus")?)
            .ok_or_else(|| Error::invalid("relight requires --corpus"))?,
        scene: resolve(scene, &cfg, "scene", 0)?,
        frame: resolve(frame, &cfg, "frame", 0)?,
        azimuth_deg: azimuth_deg.or(cfg_get(&cfg, "azimuth_deg")?),
        donor_time: donor_time.or(cfg_get(&cfg, "donor_time")?),
        iters: resolve(iters, &cfg, "iters", FitConfig::default().iterations)?,
    };
    let out = require_out(&common.out, &cfg, "relight")?;

    let meta = corpus::load(&resolved.corpus)?;
    let (w, h) = meta.dims()?;
    let scene_geom = meta.scene(resolved.scene)?;
    if resolved.frame >= meta.times {
        return Err(Error::invalid(format!(
            "frame {} outside corpus of {} times",
            resolved.frame, meta.times
        )));
    }

    let fit_cfg = FitConfig {
        iterations: resolved.iters,
        seed: resolved.seed,
        ..FitConfig::default()
    };
    let result: RelightResult = with_threads(resolved.threads, || -> Result<RelightResult> {
        let frames: Vec<Panorama> = meta
            .illums
            .iter()
            .map(|il| lumistack::synth::render(&scene_geom, il, w, h).pano)
            .collect();
        let refs: Vec<&Panorama> = frames.iter().collect();
        let decomp = bicolor_fit(&log_stack(&refs)?, &fit_cfg)?;
        match (resolved.azimuth_deg, resolved.donor_time) {
            (Some(deg), None) => relight(
                &scene_geom,
                &meta.illums[resolved.frame],
                &decomp,
                resolved.frame,
                deg.to_radians(),
            ),
            (None, Some(t)) => {
                let donor = meta.illums.get(t).ok_or_else(|| {
                    Error::invalid(format!("donor time {t} outside corpus of {} times", meta.times))
                })?;
                relight_donor(&scene_geom, &meta.illums, &decomp, donor)
            }
            _ => Err(Error::invalid(
                "relight needs exactly one of --azimuth-deg or --donor-time",
            )),
        }
    })??;

    let mut writer = RunWriter::new(&out)?;
    writer.png("output.png", &result.output)?;
    writer.png("ground_truth.png", &result.ground_truth)?;

    #[derive(Serialize)]
    struct Report {
        mse: f64,
        snapped_azimuth_deg: f64,
    }
    writer.json(
        "relight_report.json",
        &Report {
            mse: result.mse,
            snapped_azimuth_deg: result.snapped_azimuth.to_degrees(),
        },
    )?;
    writer.finish("relight", &resolved)
}

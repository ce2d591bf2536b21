//! `decompose`: factor one stack into shared reflectance and per-frame
//! shading, with raw float maps for data and normalized PNGs for the eye.

use lumistack::error::{Error, Result};
use lumistack::image::{gamma_decode, log_encode, Domain, Panorama, LOG_FLOOR};
use lumistack::ingest::{load_stack, read_manifest};
use lumistack::intrinsics::{bicolor_fit, weiss_mle, Decomposition, FitConfig};
use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::cmd_align::find_stack;
use crate::run::{
    cfg_get, gamma_params, load_config, parse_resolution, require_out, resolve, with_threads,
    RunWriter,
};
use crate::{CliMethod, Common};

#[derive(Serialize)]
struct Resolved {
    seed: u64,
    resolution: String,
    threads: usize,
    gamma: f64,
    manifest: PathBuf,
    stack_id: String,
    method: String,
    iters: usize,
}

/// Min/max normalization of an arbitrary-range map into display units,
/// for preview only.
pub fn preview(p: &Panorama) -> Panorama {
    let lo = p.data().iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = p.data().iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = Panorama::new(p.width(), p.height(), Domain::SrgbUnit);
    for (o, v) in out.data_mut().iter_mut().zip(p.data()) {
        *o = (v - lo) / span;
    }
    out
}

fn mask_pano(shading: &lumistack::intrinsics::BiColorShading) -> Panorama {
    let mut p = Panorama::new(shading.width(), shading.height(), Domain::SrgbUnit);
    for (px, &m) in shading.mask.iter().enumerate() {
        for c in 0..3 {
            p.data_mut()[px * 3 + c] = m;
        }
    }
    p
}

pub fn run(
    common: Common,
    manifest: Option<PathBuf>,
    stack_id: Option<String>,
    method: Option<CliMethod>,
    iters: Option<usize>,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let method_str = method.map(|m| {
        match m {
            CliMethod::Weiss => "weiss",
            CliMethod::Bicolor => "bicolor",
            CliMethod::Monocolor => "monocolor",
        }
        .to_string()
    });
    let resolved = Resolved {
        seed: resolve(common.seed, &cfg, "seed", 0)?,
        resolution: resolve(common.resolution.clone(), &cfg, "resolution", "240x80".into())?,
        threads: resolve(common.threads, &cfg, "threads", 0)?,
        gamma: resolve(None, &cfg, "gamma", 2.2)?,
        manifest: manifest
            .or(cfg_get(&cfg, "manifest")?)
            .ok_or_else(|| Error::invalid("decompose requires --manifest"))?,
        stack_id: stack_id
            .or(cfg_get(&cfg, "stack_id")?)
            .ok_or_else(|| Error::invalid("decompose requires --stack-id"))?,
        method: resolve(method_str, &cfg, "method", "bicolor".into())?,
        iters: resolve(iters, &cfg, "iters", FitConfig::default().iterations)?,
    };
    let (w, h) = parse_resolution(&resolved.resolution)?;
    let gp = gamma_params(resolved.gamma)?;
    let out = require_out(&common.out, &cfg, "decompose")?;

    let m = read_manifest(&resolved.manifest)?;
    let skeleton = find_stack(&m, &resolved.manifest, &resolved.stack_id)?;
    let base = resolved.manifest.parent().unwrap_or(Path::new("."));
    let stack = load_stack(skeleton, base, w, h)?;
    let logs: Vec<Panorama> = stack
        .frames
        .iter()
        .map(|f| log_encode(&gamma_decode(&f.image, &gp)?, LOG_FLOOR))
        .collect::<Result<_>>()?;

    let fit_cfg = FitConfig {
        iterations: resolved.iters,
        mono_color: resolved.method == "monocolor",
        seed: resolved.seed,
        ..FitConfig::default()
    };
    let decomp: Decomposition = with_threads(resolved.threads, || match resolved.method.as_str() {
        "weiss" => weiss_mle(&logs),
        "bicolor" | "monocolor" => bicolor_fit(&logs, &fit_cfg),
        other => Err(Error::invalid(format!("unknown decompose method {other}"))),
    })??;

    let mut writer = RunWriter::new(&out)?;
    writer.float_map("reflectance.raw", &decomp.log_reflectance)?;
    writer.png("reflectance_preview.png", &preview(&decomp.log_reflectance))?;
    for (i, s) in decomp.shadings.iter().enumerate() {
        let full = s.full_log_shading();
        writer.float_map(&format!("shading_{i:02}.raw"), &full)?;
        writer.png(&format!("shading_{i:02}_preview.png"), &preview(&full))?;
        writer.png(&format!("mask_{i:02}.png"), &mask_pano(s))?;
    }

    #[derive(Serialize)]
    struct Report<'a> {
        stack_id: &'a str,
        report: &'a lumistack::intrinsics::FitReport,
        c1: Vec<[f64; 3]>,
        c2: Vec<[f64; 3]>,
    }
    writer.json(
        "fit_report.json",
        &Report {
            stack_id: &resolved.stack_id,
            report: &decomp.report,
            c1: decomp.shadings.iter().map(|s| s.c1).collect(),
            c2: decomp.shadings.iter().map(|s| s.c2).collect(),
        },
    )?;
    writer.finish("decompose", &resolved)
}

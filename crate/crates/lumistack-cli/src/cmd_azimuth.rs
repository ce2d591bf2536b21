//! `azimuth`: sun-azimuth estimation for a single image (printed) or a
//! whole manifest (CSV).

use lumistack::azimuth::{
    azimuth_metrics, calibrate_offset, estimate_azimuth, wrap_angle, AzimuthDistribution,
};
use lumistack::error::{Error, Result};
use lumistack::image::resample_area;
use lumistack::ingest::{load_stack, read_manifest};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::run::{cfg_get, load_config, parse_resolution, require_out, resolve, with_threads, RunWriter};
use crate::Common;

#[derive(Serialize)]
struct Resolved {
    seed: u64,
    resolution: String,
    threads: usize,
    image: Option<PathBuf>,
    gt_deg: Option<f64>,
    manifest: Option<PathBuf>,
    gt: Option<PathBuf>,
}

#[derive(Serialize)]
struct SingleReport {
    phi_bar_deg: f64,
    probs: Vec<f64>,
    gt_deg: Option<f64>,
    ang_err_deg: Option<f64>,
    cos_sim: Option<f64>,
}

fn single(image: &Path, gt_deg: Option<f64>, w: usize, h: usize) -> Result<SingleReport> {
    let raw = lumistack::io::read_png(image)?;
    let p = resample_area(&raw, w, h);
    let dist = estimate_azimuth(&p)?;
    let phi = dist.circular_mean()?;
    let (err, cos) = match gt_deg {
        Some(g) => {
            let d = wrap_angle(phi - g.to_radians());
            (Some(d.abs().to_degrees()), Some(d.cos()))
        }
        None => (None, None),
    };
    for (b, pr) in dist.probs().iter().enumerate() {
        println!(
            "{:9.3} {:.6}",
            AzimuthDistribution::bin_center(b).to_degrees(),
            pr
        );
    }
    println!("phi_bar_deg {:.6}", phi.to_degrees());
    if let (Some(e), Some(c)) = (err, cos) {
        println!("ang_err_deg {e:.6}");
        println!("cos_sim {c:.6}");
    }
    Ok(SingleReport {
        phi_bar_deg: phi.to_degrees(),
        probs: dist.probs().to_vec(),
        gt_deg,
        ang_err_deg: err,
        cos_sim: cos,
    })
}

fn batch(
    manifest_path: &Path,
    gt_path: Option<&PathBuf>,
    w: usize,
    h: usize,
) -> Result<(String, Option<Summary>)> {
    let manifest = read_manifest(manifest_path)?;
    let base = manifest_path.parent().unwrap_or(std::path::Path::new("."));
    let gt_map: BTreeMap<String, f64> = match gt_path {
        Some(p) => lumistack::io::read_json(p)?,
        None => BTreeMap::new(),
    };
    let mut rows: Vec<(String, f64, Option<f64>)> = Vec::new();
    for skeleton in &manifest.stacks {
        let stack = load_stack(skeleton, base, w, h)?;
        let phis: Vec<f64> = stack
            .frames
            .par_iter()
            .map(|f| {
                estimate_azimuth(&f.image)
                    .and_then(|d| d.circular_mean())
                    .map_err(|e| Error::frame(&f.record.id, e.to_string()))
            })
            .collect::<Result<_>>()?;
        for (f, phi) in stack.frames.iter().zip(phis) {
            rows.push((f.record.id.clone(), phi, gt_map.get(&f.record.id).copied()));
        }
    }
    let mut csv = String::from("id,phi_bar_deg,gt_deg,cos_sim,ang_err_deg\n");
    for (id, phi, gt) in &rows {
        match gt {
            Some(g) => {
                let d = wrap_angle(phi - g.to_radians());
                writeln!(
                    csv,
                    "{id},{:.6},{:.6},{:.6},{:.6}",
                    phi.to_degrees(),
                    g,
                    d.cos(),
                    d.abs().to_degrees()
                )
                .unwrap();
            }
            None => writeln!(csv, "{id},{:.6},,,", phi.to_degrees()).unwrap(),
        }
    }
    let matched: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|(_, phi, gt)| gt.map(|g| (*phi, g.to_radians())))
        .collect();
    let summary = if matched.is_empty() {
        None
    } else {
        let preds: Vec<f64> = matched.iter().map(|m| m.0).collect();
        let gts: Vec<f64> = matched.iter().map(|m| m.1).collect();
        let offset = calibrate_offset(&preds, &gts)?;
        let shifted: Vec<f64> = preds.iter().map(|p| p + offset).collect();
        let (mean_cos, median_err) = azimuth_metrics(&shifted, &gts)?;
        Some(Summary {
            frames: rows.len(),
            with_ground_truth: matched.len(),
            offset_deg: offset.to_degrees(),
            mean_cos,
            median_err_deg: median_err,
        })
    };
    Ok((csv, summary))
}

#[derive(Serialize)]
struct Summary {
    frames: usize,
    with_ground_truth: usize,
    offset_deg: f64,
    mean_cos: f64,
    median_err_deg: f64,
}

pub fn run(
    common: Common,
    image: Option<PathBuf>,
    gt_deg: Option<f64>,
    manifest: Option<PathBuf>,
    gt: Option<PathBuf>,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let resolved = Resolved {
        seed: resolve(common.seed, &cfg, "seed", 0)?,
        resolution: resolve(common.resolution.clone(), &cfg, "resolution", "240x80".into())?,
        threads: resolve(common.threads, &cfg, "threads", 0)?,
        image: image.or(cfg_get(&cfg, "image")?),
        gt_deg: gt_deg.or(cfg_get(&cfg, "gt_deg")?),
        manifest: manifest.or(cfg_get(&cfg, "manifest")?),
        gt: gt.or(cfg_get(&cfg, "gt")?),
    };
    let (w, h) = parse_resolution(&resolved.resolution)?;

    match (&resolved.image, &resolved.manifest) {
        (Some(img), None) => {
            let report = single(img, resolved.gt_deg, w, h)?;
            if let Some(out) = &common.out {
                let mut writer = RunWriter::new(out)?;
                writer.json("azimuth.json", &report)?;
                writer.finish("azimuth", &resolved)?;
            }
            Ok(())
        }
        (None, Some(man)) => {
            let out = require_out(&common.out, &cfg, "azimuth batch mode")?;
            let (csv, summary) = with_threads(resolved.threads, || {
                batch(man, resolved.gt.as_ref(), w, h)
            })??;
            let mut writer = RunWriter::new(&out)?;
            writer.text("azimuth.csv", &csv)?;
            if let Some(s) = &summary {
                writer.json("azimuth_summary.json", s)?;
            }
            writer.finish("azimuth", &resolved)
        }
        _ => Err(Error::invalid(
            "azimuth needs exactly one of --image or --manifest",
        )),
    }
}

//! `eval`: run one evaluation protocol over a synthetic corpus directory
//! and write a versioned report.

use lumistack::align::AlignConfig;
use lumistack::azimuth::{azimuth_metrics, calibrate_offset, estimate_azimuth, wrap_angle};
use lumistack::error::{Error, Result};
use lumistack::eval::{
    alignment_bench, scene_consistency, spacetime_completion, CompletionResult, ConsistencyResult,
    Method,
};
use lumistack::image::Panorama;
use lumistack::intrinsics::FitConfig;
use lumistack::synth::make_stack;
use rayon::prelude::*;
use serde::Serialize;
use std::fmt::Write as _;
use std::path::PathBuf;

use crate::corpus::{self, CorpusMeta};
use crate::run::{cfg_get, load_config, require_out, resolve, with_threads, RunWriter};
use crate::{CliProtocol, Common};

#[derive(Serialize)]
struct Resolved {
    seed: u64,
    threads: usize,
    corpus: PathBuf,
    protocol: String,
    iters: usize,
    steps: usize,
}

#[derive(Serialize)]
struct Report<'a, T: Serialize> {
    schema: &'a str,
    protocol: &'a str,
    seed: u64,
    corpus: String,
    scenes: usize,
    times: usize,
    resolution: &'a str,
    jitter: f64,
    results: T,
    notes: Option<String>,
}

fn envelope<'a, T: Serialize>(
    resolved: &'a Resolved,
    meta: &'a CorpusMeta,
    results: T,
    notes: Option<String>,
) -> Report<'a, T> {
    Report {
        schema: "lumistack.eval.v1",
        protocol: &resolved.protocol,
        seed: resolved.seed,
        corpus: resolved.corpus.display().to_string(),
        scenes: meta.scenes,
        times: meta.times,
        resolution: &meta.resolution,
        jitter: meta.jitter,
        results,
        notes,
    }
}

#[derive(Serialize)]
struct MethodRow {
    method: String,
    mean_mse: f64,
    per_stack: Vec<f64>,
}

fn consistency(meta: &CorpusMeta, fit: &FitConfig) -> Result<(Vec<MethodRow>, String)> {
    if meta.times < 8 {
        return Err(Error::invalid(format!(
            "consistency protocol needs 8 times per scene, corpus has {}",
            meta.times
        )));
    }
    let grid = meta.grid()?;
    let mut rows = Vec::new();
    for method in [Method::Bicolor, Method::Monocolor, Method::Weiss, Method::PixelNn] {
        let per_stack: Vec<f64> = (0..meta.scenes)
            .into_par_iter()
            .map(|r| {
                let refs: Vec<&Panorama> = (0..8).map(|t| &grid.cells[r][t].pano).collect();
                scene_consistency(&refs, method, fit).map(|c: ConsistencyResult| c.mse)
            })
            .collect::<Result<_>>()?;
        rows.push(MethodRow {
            method: method.name().to_string(),
            mean_mse: per_stack.iter().sum::<f64>() / per_stack.len() as f64,
            per_stack,
        });
    }
    let mut csv = String::from("method,consistency_mse\n");
    for row in &rows {
        writeln!(csv, "{},{:.6}", row.method, row.mean_mse).unwrap();
    }
    Ok((rows, csv))
}

#[derive(Serialize)]
struct AlignmentRow {
    scene: usize,
    endpoint_error: f64,
    variance_before: f64,
    variance_after: f64,
}

#[derive(Serialize)]
struct AlignmentReport {
    mean_endpoint_error: f64,
    variance_decreased_fraction: f64,
    per_stack: Vec<AlignmentRow>,
}

fn alignment(meta: &CorpusMeta, seed: u64, steps: usize) -> Result<AlignmentReport> {
    let (w, h) = meta.dims()?;
    let cfg = AlignConfig {
        steps,
        seed,
        ..AlignConfig::default()
    };
    let per_stack: Vec<AlignmentRow> = (0..meta.scenes)
        .into_par_iter()
        .map(|r| {
            let scene = meta.scene(r)?;
            let st = make_stack(&scene, &meta.illums, meta.jitter, meta.warp_seeds[r], w, h);
            let (bench, _) = alignment_bench(&st, &cfg)?;
            Ok(AlignmentRow {
                scene: r,
                endpoint_error: bench.endpoint_error,
                variance_before: bench.variance_before,
                variance_after: bench.variance_after,
            })
        })
        .collect::<Result<_>>()?;
    let n = per_stack.len() as f64;
    Ok(AlignmentReport {
        mean_endpoint_error: per_stack.iter().map(|r| r.endpoint_error).sum::<f64>() / n,
        variance_decreased_fraction: per_stack
            .iter()
            .filter(|r| r.variance_after < r.variance_before)
            .count() as f64
            / n,
        per_stack,
    })
}

#[derive(Serialize)]
struct AzimuthRow {
    scene: usize,
    time: usize,
    phi_bar_deg: f64,
    gt_deg: f64,
}

#[derive(Serialize)]
struct AzimuthReport {
    frames: usize,
    offset_deg: f64,
    mean_cos: f64,
    median_err_deg: f64,
    per_frame: Vec<AzimuthRow>,
}

fn azimuth(meta: &CorpusMeta) -> Result<AzimuthReport> {
    let grid = meta.grid()?;
    let per_frame: Vec<AzimuthRow> = (0..meta.scenes * meta.times)
        .into_par_iter()
        .map(|k| {
            let (r, t) = (k / meta.times, k % meta.times);
            let phi = estimate_azimuth(&grid.cells[r][t].pano)?.circular_mean()?;
            Ok(AzimuthRow {
                scene: r,
                time: t,
                phi_bar_deg: phi.to_degrees(),
                gt_deg: wrap_angle(meta.illums[t].sun_azimuth).to_degrees(),
            })
        })
        .collect::<Result<_>>()?;
    let preds: Vec<f64> = per_frame.iter().map(|r| r.phi_bar_deg.to_radians()).collect();
    let gts: Vec<f64> = per_frame.iter().map(|r| r.gt_deg.to_radians()).collect();
    let offset = calibrate_offset(&preds, &gts)?;
    let shifted: Vec<f64> = preds.iter().map(|p| p + offset).collect();
    let (mean_cos, median_err) = azimuth_metrics(&shifted, &gts)?;
    Ok(AzimuthReport {
        frames: per_frame.len(),
        offset_deg: offset.to_degrees(),
        mean_cos,
        median_err_deg: median_err,
        per_frame,
    })
}

pub fn run(
    common: Common,
    protocol: Option<CliProtocol>,
    corpus_dir: Option<PathBuf>,
    iters: Option<usize>,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let protocol_str = protocol.map(|p| {
        match p {
            CliProtocol::Consistency => "consistency",
            CliProtocol::Completion => "completion",
            CliProtocol::Alignment => "alignment",
            CliProtocol::Azimuth => "azimuth",
        }
        .to_string()
    });
    let resolved = Resolved {
        seed: resolve(common.seed, &cfg, "seed", 0)?,
        threads: resolve(common.threads, &cfg, "threads", 0)?,
        corpus: corpus_dir
            .or(cfg_get(&cfg, "corpus")?)
            .ok_or_else(|| Error::invalid("eval requires --corpus"))?,
        protocol: protocol_str
            .or(cfg_get(&cfg, "protocol")?)
            .ok_or_else(|| Error::invalid("eval requires --protocol"))?,
        iters: resolve(iters, &cfg, "iters", FitConfig::default().iterations)?,
        steps: resolve(None, &cfg, "steps", 200)?,
    };
    let out = require_out(&common.out, &cfg, "eval")?;
    let meta = corpus::load(&resolved.corpus)?;
    let fit = FitConfig {
        iterations: resolved.iters,
        seed: resolved.seed,
        ..FitConfig::default()
    };

    let mut writer = RunWriter::new(&out)?;
    match resolved.protocol.as_str() {
        "consistency" => {
            let (rows, csv) = with_threads(resolved.threads, || consistency(&meta, &fit))??;
            writer.json("report.json", &envelope(&resolved, &meta, rows, None))?;
            writer.text("table.csv", &csv)?;
        }
        "completion" => {
            let res: CompletionResult =
                with_threads(resolved.threads, || spacetime_completion(&meta.grid()?, &fit))??;
            let notes = Some(res.notes.clone());
            writer.json("report.json", &envelope(&resolved, &meta, res, notes))?;
        }
        "alignment" => {
            let res =
                with_threads(resolved.threads, || alignment(&meta, resolved.seed, resolved.steps))??;
            writer.json("report.json", &envelope(&resolved, &meta, res, None))?;
        }
        "azimuth" => {
            let res = with_threads(resolved.threads, || azimuth(&meta))??;
            writer.json("report.json", &envelope(&resolved, &meta, res, None))?;
        }
        other => return Err(Error::invalid(format!("unknown protocol {other}"))),
    }
    writer.finish("eval", &resolved)
}

//! `synth`: render a synthetic corpus with full ground truth.

use lumistack::error::{Error, Result};
use lumistack::ingest::{CaptureRecord, Manifest, StackSkeleton};
use lumistack::synth::{make_stack, sample_illumination, sample_scene, Illumination};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::corpus::{CorpusMeta, CORPUS_FILE, SCHEMA};
use crate::run::{load_config, parse_resolution, require_out, resolve, with_threads, RunWriter};
use crate::Common;

#[derive(Serialize)]
struct Resolved {
    seed: u64,
    resolution: String,
    threads: usize,
    scenes: usize,
    times: usize,
    jitter: f64,
}

pub fn run(
    common: Common,
    scenes: Option<usize>,
    times: Option<usize>,
    jitter: Option<f64>,
) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let resolved = Resolved {
        seed: resolve(common.seed, &cfg, "seed", 0)?,
        resolution: resolve(common.resolution.clone(), &cfg, "resolution", "240x80".into())?,
        threads: resolve(common.threads, &cfg, "threads", 0)?,
        scenes: resolve(scenes, &cfg, "scenes", 2)?,
        times: resolve(times, &cfg, "times", 3)?,
        jitter: resolve(jitter, &cfg, "jitter", 0.0)?,
    };
    let (w, h) = parse_resolution(&resolved.resolution)?;
    if resolved.scenes == 0 || resolved.times == 0 {
        return Err(Error::invalid("synth needs at least one scene and one time"));
    }
    if resolved.jitter < 0.0 || resolved.jitter.is_nan() {
        return Err(Error::invalid(format!("jitter must be >= 0, got {}", resolved.jitter)));
    }
    let out = require_out(&common.out, &cfg, "synth")?;
    let mut writer = RunWriter::new(&out)?;

    // same stream discipline as the in-library grid sampler: all scene seeds
    // first, then the column illuminations, then per-scene warp seeds
    let mut rng = ChaCha20Rng::seed_from_u64(resolved.seed);
    let scene_seeds: Vec<u64> = (0..resolved.scenes).map(|_| rng.gen()).collect();
    let illums: Vec<Illumination> = (0..resolved.times)
        .map(|_| sample_illumination(&mut rng))
        .collect();
    let warp_seeds: Vec<u64> = (0..resolved.scenes).map(|_| rng.gen()).collect();

    let mut stacks = Vec::with_capacity(resolved.scenes);
    for r in 0..resolved.scenes {
        let scene = sample_scene(scene_seeds[r]);
        let st = with_threads(resolved.threads, || {
            make_stack(&scene, &illums, resolved.jitter, warp_seeds[r], w, h)
        })?;
        let dir = format!("scene_{r:03}");
        writer.float_map(&format!("{dir}/reflectance.raw"), &st.clean[0].log_reflectance)?;
        let mut records = Vec::with_capacity(resolved.times);
        for t in 0..resolved.times {
            let frame_rel = format!("{dir}/frame_{t:02}.png");
            writer.png(&frame_rel, &st.stack.frames[t].image)?;
            writer.float_map(
                &format!("{dir}/shading_{t:02}.raw"),
                &st.clean[t].shading.full_log_shading(),
            )?;
            if resolved.jitter > 0.0 {
                writer.warp_grid(&format!("{dir}/warp_{t:02}.raw"), &st.true_warps[t])?;
            }
            records.push(CaptureRecord {
                id: format!("{dir}/frame_{t:02}"),
                path: frame_rel,
                lat: 37.0 + r as f64 * 1e-3,
                lon: -122.0,
                heading_deg: 0.0,
                timestamp_utc: format!("2014-07-12T{:02}:00:00Z", (8 + t) % 24),
            });
        }
        stacks.push(StackSkeleton {
            stack_id: dir,
            frames: records,
        });
    }

    writer.json(
        CORPUS_FILE,
        &CorpusMeta {
            schema: SCHEMA.into(),
            seed: resolved.seed,
            resolution: resolved.resolution.clone(),
            scenes: resolved.scenes,
            times: resolved.times,
            jitter: resolved.jitter,
            scene_seeds,
            warp_seeds,
            illums,
        },
    )?;
    writer.json("manifest.json", &Manifest { stacks })?;
    writer.finish("synth", &resolved)
}

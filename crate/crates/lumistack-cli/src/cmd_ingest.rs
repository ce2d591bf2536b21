//! `ingest`: cluster capture records into stacks and write the manifest.

use lumistack::error::{Error, Result};
use lumistack::ingest::{greedy_cluster, CaptureRecord, Manifest, DEFAULT_CLUSTER_RADIUS_M};
use serde::Serialize;
use std::path::PathBuf;

use crate::run::{cfg_get, load_config, require_out, resolve, RunWriter};
use crate::Common;

#[derive(Serialize)]
struct Resolved {
    records: PathBuf,
    radius_m: f64,
}

pub fn run(common: Common, records: Option<PathBuf>, radius_m: Option<f64>) -> Result<()> {
    let cfg = load_config(common.config.as_deref())?;
    let resolved = Resolved {
        records: records
            .or(cfg_get(&cfg, "records")?)
            .ok_or_else(|| Error::invalid("ingest requires --records"))?,
        radius_m: resolve(radius_m, &cfg, "radius_m", DEFAULT_CLUSTER_RADIUS_M)?,
    };
    let out = require_out(&common.out, &cfg, "ingest")?;

    let recs: Vec<CaptureRecord> = lumistack::io::read_json(&resolved.records)?;
    let stacks = greedy_cluster(&recs, resolved.radius_m)?;

    let mut writer = RunWriter::new(&out)?;
    writer.json("manifest.json", &Manifest { stacks })?;
    writer.finish("ingest", &resolved)
}

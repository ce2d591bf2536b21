//! On-disk description of a synthetic corpus: `corpus.json` at the corpus
//! root carries everything needed to rebuild the renders bit for bit, so
//! downstream subcommands work from parameters instead of quantized PNGs.

use lumistack::error::{Error, Result};
use lumistack::synth::{render, sample_scene, Illumination, RenderedFrame, SpacetimeGrid, SynthScene};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::run::parse_resolution;

pub const CORPUS_FILE: &str = "corpus.json";
pub const SCHEMA: &str = "lumistack.corpus.v1";

#[derive(Serialize, Deserialize, Clone)]
pub struct CorpusMeta {
    pub schema: String,
    pub seed: u64,
    pub resolution: String,
    pub scenes: usize,
    pub times: usize,
    pub jitter: f64,
    /// Seed per scene; `sample_scene` rebuilds the geometry.
    pub scene_seeds: Vec<u64>,
    /// Seed per scene for the jitter warps.
    pub warp_seeds: Vec<u64>,
    /// One illumination per time column, shared by every scene.
    pub illums: Vec<Illumination>,
}

pub fn load(dir: &Path) -> Result<CorpusMeta> {
    let path = dir.join(CORPUS_FILE);
    let meta: CorpusMeta = lumistack::io::read_json(&path)?;
    if meta.schema != SCHEMA {
        return Err(Error::invalid(format!(
            "{}: schema {} is not {SCHEMA}",
            path.display(),
            meta.schema
        )));
    }
    if meta.scene_seeds.len() != meta.scenes
        || meta.warp_seeds.len() != meta.scenes
        || meta.illums.len() != meta.times
    {
        return Err(Error::invalid(format!(
            "{}: seed/illumination counts disagree with scenes x times",
            path.display()
        )));
    }
    Ok(meta)
}

impl CorpusMeta {
    pub fn dims(&self) -> Result<(usize, usize)> {
        parse_resolution(&self.resolution)
    }

    pub fn scene(&self, index: usize) -> Result<SynthScene> {
        let seed = *self
            .scene_seeds
            .get(index)
            .ok_or_else(|| Error::invalid(format!("scene {index} outside corpus of {}", self.scenes)))?;
        Ok(sample_scene(seed))
    }

    /// Re-renders the clean scenes-by-times grid.
    pub fn grid(&self) -> Result<SpacetimeGrid> {
        let (w, h) = self.dims()?;
        let scenes: Vec<SynthScene> = self.scene_seeds.iter().map(|&s| sample_scene(s)).collect();
        let cells: Vec<Vec<RenderedFrame>> = scenes
            .par_iter()
            .map(|sc| self.illums.iter().map(|il| render(sc, il, w, h)).collect())
            .collect();
        Ok(SpacetimeGrid {
            scenes,
            illums: self.illums.clone(),
            cells,
        })
    }
}

//! Capture manifests and stack assembly: greedy spatial clustering of
//! panorama records, image loading, resampling, and heading normalization.

use crate::error::{Error, Result};
use crate::image::{resample_area, rotate_pano, validate_pano_dims, Panorama};
use crate::io;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Mean Earth radius in meters, for haversine distances.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Maximum number of frames per stack.
pub const MAX_STACK_SIZE: usize = 8;

/// Default clustering radius in meters.
pub const DEFAULT_CLUSTER_RADIUS_M: f64 = 0.4;

/// One captured panorama and its pose metadata.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CaptureRecord {
    pub id: String,
    pub path: String,
    pub lat: f64,
    pub lon: f64,
    pub heading_deg: f64,
    pub timestamp_utc: String,
}

/// A clustered group of records, before any image data is loaded.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StackSkeleton {
    pub stack_id: String,
    pub frames: Vec<CaptureRecord>,
}

/// On-disk manifest: the unit of exchange between clustering and loading.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub stacks: Vec<StackSkeleton>,
}

/// A loaded frame: record plus its heading-normalized image.
#[derive(Debug, Clone)]
pub struct Frame {
    pub record: CaptureRecord,
    pub image: Panorama,
}

/// A loaded stack of co-located frames, all the same resolution, all rotated
/// to the canonical heading.
#[derive(Debug, Clone)]
pub struct Stack {
    pub stack_id: String,
    pub frames: Vec<Frame>,
}

impl Stack {
    pub fn images(&self) -> Vec<&Panorama> {
        self.frames.iter().map(|f| &f.image).collect()
    }
}

/// Great-circle distance between two lat/lon points, meters.
pub fn haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    let (la1, lo1, la2, lo2) = (
        lat1.to_radians(),
        lon1.to_radians(),
        lat2.to_radians(),
        lon2.to_radians(),
    );
    let dlat = la2 - la1;
    let dlon = lo2 - lo1;
    let a = (dlat / 2.0).sin().powi(2) + la1.cos() * la2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_M * a.sqrt().asin()
}

fn validate_record(r: &CaptureRecord) -> Result<()> {
    if r.id.is_empty() {
        return Err(Error::invalid("record with empty id"));
    }
    if !(-90.0..=90.0).contains(&r.lat) {
        return Err(Error::frame(&r.id, format!("latitude {} out of range", r.lat)));
    }
    if !(-180.0..=180.0).contains(&r.lon) {
        return Err(Error::frame(&r.id, format!("longitude {} out of range", r.lon)));
    }
    Ok(())
}

/// Greedy clustering in input order: each unassigned record seeds a stack,
/// then absorbs later unassigned records that lie within `radius_m` of every
/// member so far, up to eight frames per stack.
pub fn greedy_cluster(records: &[CaptureRecord], radius_m: f64) -> Result<Vec<StackSkeleton>> {
    if radius_m <= 0.0 || radius_m.is_nan() {
        return Err(Error::invalid(format!("cluster radius must be positive, got {radius_m}")));
    }
    for r in records {
        validate_record(r)?;
    }
    let mut assigned = vec![false; records.len()];
    let mut stacks = Vec::new();
    for i in 0..records.len() {
        if assigned[i] {
            continue;
        }
        assigned[i] = true;
        let mut members = vec![i];
        for j in (i + 1)..records.len() {
            if assigned[j] || members.len() == MAX_STACK_SIZE {
                continue;
            }
            let fits = members.iter().all(|&m| {
                haversine_m(records[m].lat, records[m].lon, records[j].lat, records[j].lon)
                    <= radius_m
            });
            if fits {
                assigned[j] = true;
                members.push(j);
            }
        }
        stacks.push(StackSkeleton {
            stack_id: format!("stack_{:04}", stacks.len()),
            frames: members.into_iter().map(|m| records[m].clone()).collect(),
        });
    }
    Ok(stacks)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    io::write_json(path, manifest)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let manifest: Manifest = io::read_json(path)?;
    for stack in &manifest.stacks {
        if stack.frames.is_empty() {
            return Err(Error::invalid(format!("stack {} has no frames", stack.stack_id)));
        }
        if stack.frames.len() > MAX_STACK_SIZE {
            return Err(Error::invalid(format!(
                "stack {} has {} frames, max is {}",
                stack.stack_id,
                stack.frames.len(),
                MAX_STACK_SIZE
            )));
        }
        for r in &stack.frames {
            validate_record(r)?;
        }
    }
    Ok(manifest)
}

/// Loads every frame of a skeleton: read PNG, box-resample to the target
/// resolution, and rotate by the record heading so all frames share the
/// canonical heading 0. Relative paths resolve against `base_dir`. Failures
/// name the offending frame id.
pub fn load_stack(
    skeleton: &StackSkeleton,
    base_dir: &Path,
    target_width: usize,
    target_height: usize,
) -> Result<Stack> {
    validate_pano_dims(target_width, target_height)?;
    let mut frames = Vec::with_capacity(skeleton.frames.len());
    for record in &skeleton.frames {
        let rel = Path::new(&record.path);
        let path = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            base_dir.join(rel)
        };
        let raw = io::read_png(&path)
            .map_err(|e| Error::frame(&record.id, e.to_string()))?;
        let resized = resample_area(&raw, target_width, target_height);
        let image = rotate_pano(&resized, record.heading_deg.to_radians());
        frames.push(Frame {
            record: record.clone(),
            image,
        });
    }
    Ok(Stack {
        stack_id: skeleton.stack_id.clone(),
        frames,
    })
}

//! Synthetic street scenes with exact ground truth.
//!
//! A scene is a flat ground plane, axis-aligned boxes flanking a street that
//! runs along +y, and a constant-albedo sky plate. Frames are ray-cast into
//! the equirectangular layout under a parametric illumination (sun azimuth,
//! sun/sky intensity, warm/cool log color offsets). Every frame comes with
//! its true log reflectance and bi-color shading, and the two recompose to
//! the rendered pixels exactly, so decomposition error is measurable against
//! ground truth rather than eyeballed.

use crate::image::{gamma_encode, Domain, GammaParams, Panorama};
use crate::ingest::{CaptureRecord, Frame, Stack};
use crate::intrinsics::BiColorShading;
use crate::warp::{eval_spline, warp, WarpGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use std::f64::consts::PI;

pub const SKY_ALBEDO: f64 = 0.92;
/// Sun elevation above the horizon, radians. Fixed across the corpus;
/// azimuth is the free variable.
pub const SUN_ELEVATION: f64 = 35.0 * PI / 180.0;
/// Angular radius of the rendered sun disk.
pub const SUN_DISK_RADIUS: f64 = 4.0 * PI / 180.0;
/// Rows span elevations +ELEVATION_SPAN (top) to -ELEVATION_SPAN (bottom).
pub const ELEVATION_SPAN: f64 = 60.0 * PI / 180.0;
pub const CAMERA_HEIGHT: f64 = 2.5;
pub const STREET_HALF_WIDTH: f64 = 6.0;

/// Axis-aligned building. Walls are indexed -x, +x, -y, +y; roofs sit above
/// the camera and are never visible, so walls carry all the albedo.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGeom {
    pub min: [f64; 3],
    pub max: [f64; 3],
    pub wall_albedo: [[f64; 3]; 4],
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub boxes: Vec<BoxGeom>,
    pub ground_albedo: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Illumination {
    pub sun_azimuth: f64,
    pub sun_intensity: f64,
    pub sky_intensity: f64,
    /// Log color offset applied where the mask is 1 (direct sun).
    pub sun_color: [f64; 3],
    /// Log color offset applied where the mask is 0 (sky only).
    pub sky_color: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct RenderedFrame {
    /// Display-encoded panorama, unquantized.
    pub pano: Panorama,
    pub log_reflectance: Panorama,
    pub shading: BiColorShading,
}

fn tinted(rng: &mut ChaCha20Rng, lo: f64, hi: f64) -> [f64; 3] {
    let base = rng.gen_range(lo..hi);
    let mut a = [0.0; 3];
    for v in &mut a {
        *v = (base + rng.gen_range(-0.05..0.05)).clamp(0.05, 0.75);
    }
    a
}

struct BoxDraw {
    y0: f64,
    depth: f64,
    setback: f64,
    width: f64,
    height: f64,
    walls: [[f64; 3]; 4],
}

/// Deterministic scene draw: 6 to 12 boxes alternating street sides.
/// Heights stay below the sun elevation seen from the camera, so the sun
/// disk is never occluded no matter where the azimuth points.
pub fn sample_scene(seed: u64) -> SynthScene {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_boxes = rng.gen_range(6..=12usize);
    let ground_albedo = tinted(&mut rng, 0.12, 0.45);
    let mut rows: [Vec<BoxDraw>; 2] = [Vec::new(), Vec::new()];
    let mut cursors = [0.0f64; 2];
    for i in 0..n_boxes {
        let side = i % 2;
        let depth = rng.gen_range(8.0..20.0);
        let gap = rng.gen_range(2.0..8.0);
        let mut walls = [[0.0; 3]; 4];
        for w in &mut walls {
            *w = tinted(&mut rng, 0.1, 0.65);
        }
        rows[side].push(BoxDraw {
            y0: cursors[side],
            depth,
            setback: rng.gen_range(0.0..3.0),
            width: rng.gen_range(6.0..14.0),
            height: rng.gen_range(3.5..5.5),
            walls,
        });
        cursors[side] += depth + gap;
    }
    let mut boxes = Vec::new();
    for side in 0..2 {
        let span = cursors[side];
        for d in &rows[side] {
            let y_lo = d.y0 - span / 2.0;
            let x_inner = STREET_HALF_WIDTH + d.setback;
            let (x_lo, x_hi) = if side == 0 {
                (x_inner, x_inner + d.width)
            } else {
                (-x_inner - d.width, -x_inner)
            };
            boxes.push(BoxGeom {
                min: [x_lo, y_lo, 0.0],
                max: [x_hi, y_lo + d.depth, d.height],
                wall_albedo: d.walls,
            });
        }
    }
    SynthScene {
        boxes,
        ground_albedo,
    }
}

/// Uniform azimuth, warm sun / cool sky offsets. Intensity ranges keep the
/// linear image inside (0, 1) for every albedo the sampler can draw.
pub fn sample_illumination(rng: &mut ChaCha20Rng) -> Illumination {
    Illumination {
        sun_azimuth: rng.gen_range(-PI..PI),
        sun_intensity: rng.gen_range(0.55..0.7),
        sky_intensity: rng.gen_range(0.2..0.27),
        sun_color: [
            rng.gen_range(0.04..0.1),
            rng.gen_range(-0.02..0.02),
            rng.gen_range(-0.1..-0.04),
        ],
        sky_color: [
            rng.gen_range(-0.1..-0.04),
            rng.gen_range(-0.02..0.02),
            rng.gen_range(0.04..0.1),
        ],
    }
}

/// Unit view ray for pixel center (x, y): yaw from the column, elevation
/// linear in the row from +ELEVATION_SPAN down to -ELEVATION_SPAN.
pub fn ray_direction(x: usize, y: usize, width: usize, height: usize) -> [f64; 3] {
    let yaw = -PI + (x as f64 + 0.5) * std::f64::consts::TAU / width as f64;
    let elev = ELEVATION_SPAN * (1.0 - 2.0 * (y as f64 + 0.5) / height as f64);
    [
        yaw.sin() * elev.cos(),
        yaw.cos() * elev.cos(),
        elev.sin(),
    ]
}

pub fn sun_direction(azimuth: f64, elevation: f64) -> [f64; 3] {
    [
        azimuth.sin() * elevation.cos(),
        azimuth.cos() * elevation.cos(),
        elevation.sin(),
    ]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Slab intersection; returns entry distance and the wall index hit.
fn intersect_box(b: &BoxGeom, o: [f64; 3], d: [f64; 3]) -> Option<(f64, usize, [f64; 3])> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut axis = 0usize;
    for a in 0..3 {
        let inv = 1.0 / d[a];
        let mut t0 = (b.min[a] - o[a]) * inv;
        let mut t1 = (b.max[a] - o[a]) * inv;
        if t0 > t1 {
            std::mem::swap(&mut t0, &mut t1);
        }
        if t0 > t_near {
            t_near = t0;
            axis = a;
        }
        t_far = t_far.min(t1);
        if t_near > t_far {
            return None;
        }
    }
    // NaN (grazing a slab boundary head-on) counts as a miss
    if t_near.is_nan() || t_near <= 1e-9 {
        return None;
    }
    let mut normal = [0.0; 3];
    normal[axis] = if d[axis] > 0.0 { -1.0 } else { 1.0 };
    let face = match (axis, d[axis] > 0.0) {
        (0, true) => 0,  // entered through -x wall
        (0, false) => 1, // +x wall
        (1, true) => 2,  // -y wall
        (1, false) => 3, // +y wall
        _ => 0,          // top/bottom, unreachable from inside the street
    };
    Some((t_near, face, normal))
}

fn occluded(scene: &SynthScene, point: [f64; 3], sun: [f64; 3]) -> bool {
    let o = [
        point[0] + sun[0] * 1e-4,
        point[1] + sun[1] * 1e-4,
        point[2] + sun[2] * 1e-4,
    ];
    scene
        .boxes
        .iter()
        .any(|b| intersect_box(b, o, sun).is_some())
}

/// Traces one view ray: returns the surface albedo and the shading mask
/// value M = visibility * max(0, n . sun) (M = 1 inside the sun disk,
/// 0 elsewhere in the sky).
fn trace(scene: &SynthScene, d: [f64; 3], sun: [f64; 3]) -> ([f64; 3], f64) {
    let o = [0.0, 0.0, CAMERA_HEIGHT];
    let mut best: Option<(f64, [f64; 3], [f64; 3])> = None;
    for b in &scene.boxes {
        if let Some((t, face, normal)) = intersect_box(b, o, d) {
            if best.is_none_or(|(bt, _, _)| t < bt) {
                best = Some((t, b.wall_albedo[face], normal));
            }
        }
    }
    if d[2] < 0.0 {
        let t = -o[2] / d[2];
        if best.is_none_or(|(bt, _, _)| t < bt) {
            best = Some((t, scene.ground_albedo, [0.0, 0.0, 1.0]));
        }
    }
    match best {
        None => {
            let m = if dot(d, sun) >= SUN_DISK_RADIUS.cos() {
                1.0
            } else {
                0.0
            };
            ([SKY_ALBEDO; 3], m)
        }
        Some((t, albedo, normal)) => {
            let lambert = dot(normal, sun).max(0.0);
            let m = if lambert > 0.0 {
                let point = [o[0] + d[0] * t, o[1] + d[1] * t, o[2] + d[2] * t];
                if occluded(scene, point, sun) {
                    0.0
                } else {
                    lambert
                }
            } else {
                0.0
            };
            (albedo, m)
        }
    }
}

/// Shadow-mask oracle: the mask the renderer would produce for this scene
/// under a sun at the given direction, without rendering colors.
pub fn compute_mask(
    scene: &SynthScene,
    sun_azimuth: f64,
    sun_elevation: f64,
    width: usize,
    height: usize,
) -> Vec<f64> {
    let sun = sun_direction(sun_azimuth, sun_elevation);
    (0..width * height)
        .map(|i| trace(scene, ray_direction(i % width, i / width, width, height), sun).1)
        .collect()
}

pub fn render(scene: &SynthScene, illum: &Illumination, width: usize, height: usize) -> RenderedFrame {
    let sun = sun_direction(illum.sun_azimuth, SUN_ELEVATION);
    let mut log_r = Panorama::new(width, height, Domain::LogLinear);
    let mut linear = Panorama::new(width, height, Domain::SrgbUnit);
    let mut shading = BiColorShading::flat(width, height);
    shading.c1 = illum.sun_color;
    shading.c2 = illum.sky_color;
    for y in 0..height {
        for x in 0..width {
            let (albedo, m) = trace(scene, ray_direction(x, y, width, height), sun);
            let px = y * width + x;
            let a = (illum.sky_intensity + illum.sun_intensity * m).ln();
            shading.log_intensity[px] = a;
            shading.mask[px] = m;
            for (c, &alb) in albedo.iter().enumerate() {
                let b = illum.sun_color[c] * m + illum.sky_color[c] * (1.0 - m);
                log_r.data_mut()[px * 3 + c] = alb.ln();
                linear.data_mut()[px * 3 + c] = (alb.ln() + a + b).exp();
            }
        }
    }
    let pano = gamma_encode(&linear, &GammaParams::default())
        .expect("synthetic linear image stays inside the unit range");
    RenderedFrame {
        pano,
        log_reflectance: log_r,
        shading,
    }
}

/// A rendered timelapse stack plus the ground truth that produced it.
#[derive(Debug, Clone)]
pub struct SynthStack {
    pub stack: Stack,
    /// Per-frame jitter warps applied to the clean renders.
    pub true_warps: Vec<WarpGrid>,
    pub clean: Vec<RenderedFrame>,
    pub illums: Vec<Illumination>,
}

/// Renders one frame per illumination and perturbs each by a random warp of
/// the given control-point amplitude (0 leaves frames bit-identical to the
/// clean renders).
pub fn make_stack(
    scene: &SynthScene,
    illums: &[Illumination],
    jitter_px: f64,
    seed: u64,
    width: usize,
    height: usize,
) -> SynthStack {
    let clean: Vec<RenderedFrame> = illums
        .par_iter()
        .map(|il| render(scene, il, width, height))
        .collect();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let true_warps: Vec<WarpGrid> = illums
        .iter()
        .map(|_| WarpGrid::random_uniform(jitter_px, &mut rng))
        .collect();
    let frames: Vec<Frame> = clean
        .iter()
        .zip(&true_warps)
        .enumerate()
        .map(|(i, (rf, grid))| Frame {
            record: CaptureRecord {
                id: format!("f{i:03}"),
                path: String::new(),
                lat: 0.0,
                lon: 0.0,
                heading_deg: 0.0,
                timestamp_utc: format!("2014-07-12T{:02}:00:00Z", 8 + i),
            },
            image: warp(&rf.pano, &eval_spline(grid, width, height)),
        })
        .collect();
    SynthStack {
        stack: Stack {
            stack_id: format!("synth_{seed:04}"),
            frames,
        },
        true_warps,
        clean,
        illums: illums.to_vec(),
    }
}

/// Scenes x times grid of clean renders; every scene in a column shares the
/// column's illumination.
#[derive(Debug, Clone)]
pub struct SpacetimeGrid {
    pub scenes: Vec<SynthScene>,
    pub illums: Vec<Illumination>,
    pub cells: Vec<Vec<RenderedFrame>>,
}

pub fn spacetime_grid(
    n_scenes: usize,
    n_times: usize,
    width: usize,
    height: usize,
    seed: u64,
) -> SpacetimeGrid {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let scenes: Vec<SynthScene> = (0..n_scenes).map(|_| sample_scene(rng.gen())).collect();
    let illums: Vec<Illumination> = (0..n_times).map(|_| sample_illumination(&mut rng)).collect();
    let cells: Vec<Vec<RenderedFrame>> = scenes
        .par_iter()
        .map(|sc| illums.iter().map(|il| render(sc, il, width, height)).collect())
        .collect();
    SpacetimeGrid {
        scenes,
        illums,
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{gamma_decode, rotate_pano};

    fn test_illum() -> Illumination {
        Illumination {
            sun_azimuth: 0.3,
            sun_intensity: 0.6,
            sky_intensity: 0.22,
            sun_color: [0.08, 0.01, -0.07],
            sky_color: [-0.07, -0.01, 0.08],
        }
    }

    #[test]
    fn reflectance_and_shading_recompose_exactly() {
        let scene = sample_scene(5);
        let rf = render(&scene, &test_illum(), 240, 80);
        let linear = gamma_decode(&rf.pano, &GammaParams::default()).unwrap();
        let ls = rf.shading.full_log_shading();
        let mut max_err = 0.0f64;
        for k in 0..linear.data().len() {
            let rebuilt = (rf.log_reflectance.data()[k] + ls.data()[k]).exp();
            max_err = max_err.max((rebuilt - linear.data()[k]).abs());
        }
        assert!(max_err < 1e-12, "max recompose error {max_err}");
    }

    #[test]
    fn scene_sampler_is_deterministic_and_in_bounds() {
        let a = sample_scene(9);
        let b = sample_scene(9);
        assert_eq!(a, b);
        assert!(a.boxes.len() >= 6 && a.boxes.len() <= 12);
        for bx in &a.boxes {
            let clear_of_street =
                bx.max[0] <= -STREET_HALF_WIDTH || bx.min[0] >= STREET_HALF_WIDTH;
            assert!(clear_of_street, "box intrudes into the street: {bx:?}");
            assert!(bx.max[2] <= 5.5 + 1e-9);
            for w in &bx.wall_albedo {
                for &v in w {
                    assert!((0.05..=0.75).contains(&v));
                }
            }
        }
    }

    #[test]
    fn empty_scene_render_rotates_with_the_sun() {
        let scene = SynthScene {
            boxes: Vec::new(),
            ground_albedo: [0.3, 0.28, 0.26],
        };
        let base = test_illum();
        let quarter = std::f64::consts::FRAC_PI_2;
        let turned = Illumination {
            sun_azimuth: base.sun_azimuth + quarter,
            ..base.clone()
        };
        let p1 = render(&scene, &base, 240, 80).pano;
        let p2 = render(&scene, &turned, 240, 80).pano;
        let p1_rot = rotate_pano(&p1, quarter);
        let max_diff = p1_rot
            .data()
            .iter()
            .zip(p2.data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_diff < 1e-6, "rotation symmetry broke: {max_diff}");
    }

    #[test]
    fn sun_disk_is_the_brightest_pixel() {
        for seed in [1u64, 2, 3] {
            let scene = sample_scene(seed);
            let rf = render(&scene, &test_illum(), 240, 80);
            let mut best = (0usize, 0usize, -1.0f64);
            for y in 0..80 {
                for x in 0..240 {
                    let l = rf.pano.luminance(x, y);
                    if l > best.2 {
                        best = (x, y, l);
                    }
                }
            }
            let ray = ray_direction(best.0, best.1, 240, 80);
            let sun = sun_direction(test_illum().sun_azimuth, SUN_ELEVATION);
            assert!(
                dot(ray, sun) >= SUN_DISK_RADIUS.cos(),
                "brightest pixel off-disk at {:?}",
                best
            );
            assert!(best.2 >= 0.8, "disk luminance {} below floor", best.2);
        }
    }

    #[test]
    fn mask_oracle_matches_render() {
        let scene = sample_scene(4);
        let il = test_illum();
        let rf = render(&scene, &il, 120, 40);
        let mask = compute_mask(&scene, il.sun_azimuth, SUN_ELEVATION, 120, 40);
        assert_eq!(mask, rf.shading.mask);
    }

    #[test]
    fn scene_contains_shadowed_and_lit_surfaces() {
        let scene = sample_scene(8);
        let rf = render(&scene, &test_illum(), 240, 80);
        let mut shadowed = 0usize;
        let mut lit = 0usize;
        for (px, &m) in rf.shading.mask.iter().enumerate() {
            let sky = rf.log_reflectance.data()[px * 3] == SKY_ALBEDO.ln();
            if !sky {
                if m == 0.0 {
                    shadowed += 1;
                }
                if m > 0.5 {
                    lit += 1;
                }
            }
        }
        assert!(shadowed > 100, "only {shadowed} shadowed pixels");
        assert!(lit > 100, "only {lit} lit pixels");
    }

    #[test]
    fn zero_jitter_stack_reproduces_clean_frames() {
        let scene = sample_scene(2);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        let illums: Vec<Illumination> = (0..3).map(|_| sample_illumination(&mut rng)).collect();
        let st = make_stack(&scene, &illums, 0.0, 7, 120, 40);
        for (f, c) in st.stack.frames.iter().zip(&st.clean) {
            assert_eq!(f.image.data(), c.pano.data());
        }
        assert_eq!(st.true_warps.len(), 3);
        assert_eq!(st.stack.frames[1].record.id, "f001");
    }

    #[test]
    fn spacetime_columns_share_illumination() {
        let g = spacetime_grid(2, 3, 120, 40, 11);
        assert_eq!(g.cells.len(), 2);
        assert_eq!(g.cells[0].len(), 3);
        // same column, different scenes: identical shading colors
        for t in 0..3 {
            assert_eq!(g.cells[0][t].shading.c1, g.cells[1][t].shading.c1);
            assert_eq!(g.cells[0][t].shading.c1, g.illums[t].sun_color);
        }
    }
}

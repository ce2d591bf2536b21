//! Joint stack alignment (congealing): one spline warp grid per frame,
//! optimized so the warped frames agree pairwise, in the log domain.
//!
//! RGB mode compares the warped log frames directly. Reflectance mode
//! subtracts a per-frame shading estimate from a factorizer before comparing,
//! so per-frame illumination differences stop polluting the alignment loss;
//! the factorization is refit every few steps while the warps move.

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::image::{gamma_decode, log_encode, Domain, GammaParams, Panorama, LOG_FLOOR};
use crate::intrinsics::temporal_median;
use crate::warp::{flow_grad, warp, FlowField, SplineBasis, WarpGrid, GRID_COLS, GRID_ROWS};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    /// Pairwise loss over warped log frames.
    Rgb,
    /// Pairwise loss over warped log frames minus factorized shading.
    Reflectance,
}

#[derive(Debug, Clone)]
pub struct AlignConfig {
    pub steps: usize,
    /// Adam step size in pixels. Adam normalizes gradient scale away, so
    /// this is roughly the per-step control-point motion.
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub mode: AlignMode,
    /// Amplitude of the shared initialization noise, pixels.
    pub init_noise: f64,
    pub seed: u64,
    /// Reflectance mode refits the factorization every this many steps.
    pub refit_every: usize,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            steps: 200,
            learning_rate: 0.1,
            beta1: 0.0,
            beta2: 0.999,
            mode: AlignMode::Rgb,
            init_noise: 1e-3,
            seed: 0,
            refit_every: 5,
        }
    }
}

/// Produces per-frame full log-shading maps for the current warped stack.
/// The maps are held fixed between refits while the warps move.
pub trait StackFactorizer {
    fn shadings(&self, warped_log: &[Panorama]) -> Vec<Panorama>;
}

/// Default reflectance-mode factorizer: per-frame, per-channel global
/// offsets against the temporal median. Deliberately coarse; a per-pixel
/// shading fit could absorb the very misalignment being estimated.
pub struct GlobalOffsetFactorizer;

impl StackFactorizer for GlobalOffsetFactorizer {
    fn shadings(&self, warped_log: &[Panorama]) -> Vec<Panorama> {
        let med = temporal_median(warped_log);
        let n = med.pixel_count();
        warped_log
            .iter()
            .map(|f| {
                let mut offsets = [0.0f64; 3];
                for (k, (fv, mv)) in f.data().iter().zip(med.data()).enumerate() {
                    offsets[k % 3] += fv - mv;
                }
                for o in &mut offsets {
                    *o /= n as f64;
                }
                let mut s = Panorama::new(f.width(), f.height(), Domain::LogLinear);
                for (k, v) in s.data_mut().iter_mut().enumerate() {
                    *v = offsets[k % 3];
                }
                s
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct AlignResult {
    pub warps: Vec<WarpGrid>,
    pub loss_trace: Vec<f64>,
    /// Input frames warped by the final grids (same domain as the input).
    pub aligned: Vec<Panorama>,
}

/// Mean per-pixel-channel variance across frames (unbiased).
pub fn stack_variance(frames: &[Panorama]) -> f64 {
    assert!(frames.len() >= 2, "variance needs at least two frames");
    let n = frames[0].data().len();
    let nf = frames.len() as f64;
    let mut acc = 0.0;
    for k in 0..n {
        let mean: f64 = frames.iter().map(|f| f.data()[k]).sum::<f64>() / nf;
        let ss: f64 = frames.iter().map(|f| (f.data()[k] - mean).powi(2)).sum();
        acc += ss / (nf - 1.0);
    }
    acc / n as f64
}

/// Pairwise L1 congealing loss and its per-frame subgradient maps.
/// Normalization: pixels * channels * pair count.
fn pairwise_loss(maps: &[Panorama], with_grad: bool) -> (f64, Vec<Panorama>) {
    let nf = maps.len();
    let n = maps[0].data().len();
    let pairs = nf * (nf - 1) / 2;
    let norm = 1.0 / (pairs * n) as f64;
    let mut loss = 0.0;
    let mut grads: Vec<Panorama> = if with_grad {
        maps.iter()
            .map(|m| Panorama::new(m.width(), m.height(), Domain::LogLinear))
            .collect()
    } else {
        Vec::new()
    };
    for i in 0..nf {
        for j in (i + 1)..nf {
            for k in 0..n {
                let d = maps[i].data()[k] - maps[j].data()[k];
                loss += norm * d.abs();
                if with_grad && d != 0.0 {
                    let s = norm * d.signum();
                    grads[i].data_mut()[k] += s;
                    grads[j].data_mut()[k] -= s;
                }
            }
        }
    }
    (loss, grads)
}

/// Jointly aligns a stack of display-encoded frames.
///
/// All warp grids start from one shared noise draw (identity plus uniform
/// noise); sharing the draw keeps the pairwise loss exactly zero on stacks
/// that are already identical, so the optimizer provably leaves them alone.
pub fn align_stack(
    frames: &[Panorama],
    cfg: &AlignConfig,
    factorizer: Option<&dyn StackFactorizer>,
) -> Result<AlignResult> {
    if frames.len() < 2 {
        return Err(Error::invalid("alignment needs at least two frames"));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    for f in frames {
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::invalid("alignment frames differ in resolution"));
        }
    }
    let gamma = GammaParams::default();
    let log_frames: Vec<Panorama> = frames
        .iter()
        .map(|f| log_encode(&gamma_decode(f, &gamma)?, LOG_FLOOR))
        .collect::<Result<_>>()?;

    let nf = frames.len();
    let basis = SplineBasis::new(w, h);
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let shared_noise = WarpGrid::random_uniform(cfg.init_noise, &mut rng);
    let grid_len = GRID_ROWS * GRID_COLS * 2;
    let mut params: Vec<f64> = (0..nf).flat_map(|_| shared_noise.as_flat().to_vec()).collect();
    let mut opt = Adam::new(params.len(), cfg.learning_rate, cfg.beta1, cfg.beta2);

    let default_factorizer = GlobalOffsetFactorizer;
    let factorizer = factorizer.unwrap_or(&default_factorizer);

    let mut loss_trace = Vec::with_capacity(cfg.steps);
    let mut shadings: Option<Vec<Panorama>> = None;
    for step in 0..cfg.steps {
        let grids: Vec<WarpGrid> = (0..nf)
            .map(|i| WarpGrid::from_flat(params[i * grid_len..(i + 1) * grid_len].to_vec()))
            .collect::<Result<_>>()?;
        let flows: Vec<FlowField> = (0..nf)
            .into_par_iter()
            .map(|i| basis.eval(&grids[i]))
            .collect();
        let warped: Vec<Panorama> = (0..nf)
            .into_par_iter()
            .map(|i| warp(&log_frames[i], &flows[i]))
            .collect();

        let residuals: Vec<Panorama> = match cfg.mode {
            AlignMode::Rgb => warped,
            AlignMode::Reflectance => {
                if step % cfg.refit_every.max(1) == 0 || shadings.is_none() {
                    shadings = Some(factorizer.shadings(&warped));
                }
                let s = shadings.as_ref().unwrap();
                warped
                    .iter()
                    .zip(s)
                    .map(|(wf, sf)| {
                        let mut r = wf.clone();
                        for (v, sv) in r.data_mut().iter_mut().zip(sf.data()) {
                            *v -= sv;
                        }
                        r
                    })
                    .collect()
            }
        };

        let (loss, upstreams) = pairwise_loss(&residuals, true);
        loss_trace.push(loss);

        let grad_grids: Vec<WarpGrid> = (0..nf)
            .into_par_iter()
            .map(|i| {
                let fg = flow_grad(&log_frames[i], &flows[i], &upstreams[i]);
                basis.scatter(&fg)
            })
            .collect();
        let mut grads = vec![0.0f64; params.len()];
        for (i, g) in grad_grids.iter().enumerate() {
            grads[i * grid_len..(i + 1) * grid_len].copy_from_slice(g.as_flat());
        }
        opt.step(&mut params, &grads);
    }

    let warps: Vec<WarpGrid> = (0..nf)
        .map(|i| WarpGrid::from_flat(params[i * grid_len..(i + 1) * grid_len].to_vec()))
        .collect::<Result<_>>()?;
    let aligned: Vec<Panorama> = warps
        .par_iter()
        .zip(frames.par_iter())
        .map(|(g, f)| warp(f, &basis.eval(g)))
        .collect();
    Ok(AlignResult {
        warps,
        loss_trace,
        aligned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn textured_pano(w: usize, h: usize, seed: u64) -> Panorama {
        // smooth random texture in (0, 1), cyclic in x
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut p = Panorama::new(w, h, Domain::SrgbUnit);
        for _ in 0..6 {
            let kx = rng.gen_range(1..5) as f64;
            let ky = rng.gen_range(0..4) as f64;
            let phase = rng.gen_range(0.0..std::f64::consts::TAU);
            let amp = rng.gen_range(0.05..0.12);
            let ch = rng.gen_range(0..3);
            for y in 0..h {
                for x in 0..w {
                    let t = std::f64::consts::TAU
                        * (kx * x as f64 / w as f64 + ky * y as f64 / (2.0 * h as f64));
                    let v = p.get(x, y, ch) + amp * (t + phase).sin();
                    p.set(x, y, ch, v);
                }
            }
        }
        p.map(Domain::SrgbUnit, |v| (0.45 + v).clamp(0.05, 0.95))
    }

    #[test]
    fn identical_frames_stay_put() {
        let f = textured_pano(96, 32, 3);
        let frames = vec![f.clone(), f.clone(), f.clone()];
        let cfg = AlignConfig {
            steps: 10,
            ..AlignConfig::default()
        };
        let res = align_stack(&frames, &cfg, None).unwrap();
        assert!(res.loss_trace[0] == 0.0);
        assert!(res.loss_trace.iter().all(|&l| l == 0.0));
        for wgrid in &res.warps {
            assert!(
                wgrid.max_abs() <= cfg.init_noise,
                "moved to {}",
                wgrid.max_abs()
            );
        }
    }

    #[test]
    fn variance_example_two_constant_frames() {
        let a = Panorama::new(4, 2, Domain::SrgbUnit);
        let b = a.map(Domain::SrgbUnit, |_| 1.0);
        let v = stack_variance(&[a, b]);
        assert!((v - 0.5).abs() < 1e-12);
    }

    #[test]
    fn recovers_small_shift() {
        // base warped by +-1.5 px constant x-shifts; alignment should undo
        // the relative offset
        let base = textured_pano(96, 32, 7);
        let mk = |shift: f64| {
            let mut g = WarpGrid::identity();
            for r in 0..GRID_ROWS {
                for c in 0..GRID_COLS {
                    g.set(r, c, 0, shift);
                }
            }
            (warp(&base, &crate::warp::eval_spline(&g, 96, 32)), g)
        };
        let (f1, g1) = mk(1.5);
        let (f2, g2) = mk(-1.5);
        let frames = vec![f1, f2];
        let cfg = AlignConfig {
            steps: 120,
            ..AlignConfig::default()
        };
        let res = align_stack(&frames, &cfg, None).unwrap();
        // gauge-free check: relative recovered offset should cancel the
        // relative true offset (g1 - g2 = +3 px -> theta1 - theta2 = -3 px)
        let basis = SplineBasis::new(96, 32);
        let rel_rec = {
            let a = basis.eval(&res.warps[0]);
            let b = basis.eval(&res.warps[1]);
            let mut acc = 0.0;
            for k in (0..a.data().len()).step_by(2) {
                acc += a.data()[k] - b.data()[k];
            }
            acc / (a.data().len() / 2) as f64
        };
        let rel_true = {
            let a = basis.eval(&g1);
            let b = basis.eval(&g2);
            let mut acc = 0.0;
            for k in (0..a.data().len()).step_by(2) {
                acc += a.data()[k] - b.data()[k];
            }
            acc / (a.data().len() / 2) as f64
        };
        assert!(
            (rel_rec + rel_true).abs() < 0.5,
            "relative offset {rel_rec} should cancel {rel_true}"
        );
        let v_before = stack_variance(&frames);
        let v_after = stack_variance(&res.aligned);
        assert!(v_after < v_before, "{v_after} !< {v_before}");
    }

    #[test]
    fn reflectance_mode_ignores_global_brightness_shift() {
        let base = textured_pano(96, 32, 11);
        let dim = base.map(Domain::SrgbUnit, |v| (v * 0.7).clamp(0.0, 1.0));
        let frames = vec![base, dim];
        let cfg = AlignConfig {
            steps: 10,
            mode: AlignMode::Reflectance,
            ..AlignConfig::default()
        };
        let res = align_stack(&frames, &cfg, None).unwrap();
        // a pure exposure change is fully absorbed by the offset factorizer:
        // in the log domain the frames differ by a constant, so reflectance
        // residuals start near zero and the warps barely move
        assert!(res.loss_trace[0] < 2e-3, "loss {}", res.loss_trace[0]);
        for g in &res.warps {
            assert!(g.max_abs() < 0.5, "drifted to {}", g.max_abs());
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let base = textured_pano(96, 32, 13);
        let shifted = {
            let mut g = WarpGrid::identity();
            for r in 0..GRID_ROWS {
                for c in 0..GRID_COLS {
                    g.set(r, c, 0, 1.0);
                }
            }
            warp(&base, &crate::warp::eval_spline(&g, 96, 32))
        };
        let frames = vec![base, shifted];
        let cfg = AlignConfig {
            steps: 15,
            seed: 42,
            ..AlignConfig::default()
        };
        let a = align_stack(&frames, &cfg, None).unwrap();
        let b = align_stack(&frames, &cfg, None).unwrap();
        for (ga, gb) in a.warps.iter().zip(&b.warps) {
            assert_eq!(ga.as_flat(), gb.as_flat());
        }
        assert_eq!(a.loss_trace, b.loss_trace);
    }
}

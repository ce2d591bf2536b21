//! Low-dimensional panorama warps: an 8 x 32 grid of control-point
//! displacements expanded to a dense flow field through a uniform cubic
//! B-spline surface, horizontally periodic (the panorama wraps in yaw) and
//! vertically clamped.
//!
//! Sampling convention: warping samples the source at destination +
//! displacement, with bilinear interpolation, cyclic in x and clamped in y.
//! A constant integer horizontal displacement k is therefore the same image
//! as a rotation by -k columns.

use crate::error::{Error, Result};
use crate::image::Panorama;

pub const GRID_ROWS: usize = 8;
pub const GRID_COLS: usize = 32;

/// Control-point displacement grid, row-major, 2 channels (dx, dy) per point,
/// in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct WarpGrid {
    data: Vec<f64>,
}

impl WarpGrid {
    /// The identity warp: all displacements zero.
    pub fn identity() -> Self {
        WarpGrid {
            data: vec![0.0; GRID_ROWS * GRID_COLS * 2],
        }
    }

    pub fn from_flat(data: Vec<f64>) -> Result<Self> {
        if data.len() != GRID_ROWS * GRID_COLS * 2 {
            return Err(Error::invalid(format!(
                "warp grid needs {} values, got {}",
                GRID_ROWS * GRID_COLS * 2,
                data.len()
            )));
        }
        Ok(WarpGrid { data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * GRID_COLS + col) * 2 + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * GRID_COLS + col) * 2 + ch] = v;
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.data
    }

    pub fn as_flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// Grid with every entry drawn uniformly from [-amplitude, amplitude].
    pub fn random_uniform(amplitude: f64, rng: &mut impl rand::Rng) -> Self {
        let data = (0..GRID_ROWS * GRID_COLS * 2)
            .map(|_| rng.gen_range(-amplitude..=amplitude))
            .collect();
        WarpGrid { data }
    }

    /// Cyclic shift of the control lattice by `by` columns.
    pub fn shift_cols(&self, by: i64) -> Self {
        let mut out = WarpGrid::identity();
        for r in 0..GRID_ROWS {
            for c in 0..GRID_COLS {
                let src = (c as i64 - by).rem_euclid(GRID_COLS as i64) as usize;
                for k in 0..2 {
                    out.set(r, c, k, self.get(r, src, k));
                }
            }
        }
        out
    }
}

/// Dense per-pixel displacement field, 2 channels (dx, dy) interleaved.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl FlowField {
    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            data: vec![0.0; width * height * 2],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, ch: usize) -> f64 {
        self.data[(y * self.width + x) * 2 + ch]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, ch: usize, v: f64) {
        self.data[(y * self.width + x) * 2 + ch] = v;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Mean Euclidean distance between corresponding displacement vectors.
    pub fn endpoint_error(&self, other: &FlowField) -> f64 {
        assert_eq!((self.width, self.height), (other.width, other.height));
        let n = self.width * self.height;
        let mut acc = 0.0;
        for i in 0..n {
            let dx = self.data[2 * i] - other.data[2 * i];
            let dy = self.data[2 * i + 1] - other.data[2 * i + 1];
            acc += (dx * dx + dy * dy).sqrt();
        }
        acc / n as f64
    }
}

/// Cubic B-spline window weights for fractional offset u in [0, 1), covering
/// control points floor(t)-1 .. floor(t)+2.
#[inline]
pub fn bspline_weights(u: f64) -> [f64; 4] {
    let u2 = u * u;
    let u3 = u2 * u;
    [
        (1.0 - u).powi(3) / 6.0,
        (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0,
        (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0,
        u3 / 6.0,
    ]
}

/// Precomputed per-column and per-row window indices and weights for one
/// panorama size. Columns wrap mod 32; rows clamp to [0, 7].
///
/// Lattice coordinates are computed by exact integer splitting,
/// `t = (x * 32) / W` with the remainder divided as f64, so congruent pixel
/// positions get bit-identical weights and the horizontal periodicity of the
/// lattice carries to the sampled field exactly.
pub struct SplineBasis {
    width: usize,
    height: usize,
    x_idx: Vec<[usize; 4]>,
    x_w: Vec<[f64; 4]>,
    y_idx: Vec<[usize; 4]>,
    y_w: Vec<[f64; 4]>,
}

impl SplineBasis {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0);
        let mut x_idx = Vec::with_capacity(width);
        let mut x_w = Vec::with_capacity(width);
        for x in 0..width {
            let num = x * GRID_COLS;
            let i = num / width;
            let u = (num % width) as f64 / width as f64;
            let cols = [
                (i + GRID_COLS - 1) % GRID_COLS,
                i % GRID_COLS,
                (i + 1) % GRID_COLS,
                (i + 2) % GRID_COLS,
            ];
            x_idx.push(cols);
            x_w.push(bspline_weights(u));
        }
        let mut y_idx = Vec::with_capacity(height);
        let mut y_w = Vec::with_capacity(height);
        for y in 0..height {
            let num = y * GRID_ROWS;
            let i = (num / height) as i64;
            let u = (num % height) as f64 / height as f64;
            let rows = [
                (i - 1).clamp(0, GRID_ROWS as i64 - 1) as usize,
                i.clamp(0, GRID_ROWS as i64 - 1) as usize,
                (i + 1).clamp(0, GRID_ROWS as i64 - 1) as usize,
                (i + 2).clamp(0, GRID_ROWS as i64 - 1) as usize,
            ];
            y_idx.push(rows);
            y_w.push(bspline_weights(u));
        }
        SplineBasis {
            width,
            height,
            x_idx,
            x_w,
            y_idx,
            y_w,
        }
    }

    /// Expands a control grid to the dense flow field.
    pub fn eval(&self, grid: &WarpGrid) -> FlowField {
        let mut flow = FlowField::zeros(self.width, self.height);
        for y in 0..self.height {
            let ri = &self.y_idx[y];
            let rw = &self.y_w[y];
            for x in 0..self.width {
                let ci = &self.x_idx[x];
                let cw = &self.x_w[x];
                let mut fx = 0.0;
                let mut fy = 0.0;
                for b in 0..4 {
                    let wy = rw[b];
                    let row = ri[b];
                    for a in 0..4 {
                        let w = wy * cw[a];
                        fx += w * grid.get(row, ci[a], 0);
                        fy += w * grid.get(row, ci[a], 1);
                    }
                }
                let i = (y * self.width + x) * 2;
                flow.data[i] = fx;
                flow.data[i + 1] = fy;
            }
        }
        flow
    }

    /// Transpose of [`SplineBasis::eval`]: accumulates a per-pixel flow
    /// gradient back onto the control grid.
    pub fn scatter(&self, flow_grad: &FlowField) -> WarpGrid {
        assert_eq!((flow_grad.width, flow_grad.height), (self.width, self.height));
        let mut grid = WarpGrid::identity();
        for y in 0..self.height {
            let ri = &self.y_idx[y];
            let rw = &self.y_w[y];
            for x in 0..self.width {
                let ci = &self.x_idx[x];
                let cw = &self.x_w[x];
                let i = (y * self.width + x) * 2;
                let gx = flow_grad.data[i];
                let gy = flow_grad.data[i + 1];
                for b in 0..4 {
                    let wy = rw[b];
                    let row = ri[b];
                    for a in 0..4 {
                        let w = wy * cw[a];
                        let j = (row * GRID_COLS + ci[a]) * 2;
                        grid.data[j] += w * gx;
                        grid.data[j + 1] += w * gy;
                    }
                }
            }
        }
        grid
    }
}

/// Expands `grid` to a dense flow field for a `width` x `height` panorama.
pub fn eval_spline(grid: &WarpGrid, width: usize, height: usize) -> FlowField {
    SplineBasis::new(width, height).eval(grid)
}

#[inline]
fn bilinear_prep(p: &Panorama, sx: f64, sy: f64) -> ([usize; 2], [usize; 2], f64, f64) {
    let w = p.width();
    let h = p.height();
    let x0 = sx.floor();
    let u = sx - x0;
    let x0 = (x0 as i64).rem_euclid(w as i64) as usize;
    let x1 = (x0 + 1) % w;
    let y0f = sy.floor();
    let v = sy - y0f;
    let y0 = (y0f as i64).clamp(0, h as i64 - 1) as usize;
    let y1 = (y0f as i64 + 1).clamp(0, h as i64 - 1) as usize;
    ([x0, x1], [y0, y1], u, v)
}

/// Resamples `p` through `flow`: output pixel (x, y) reads the source at
/// (x + dx, y + dy), cyclic in x, clamped in y.
pub fn warp(p: &Panorama, flow: &FlowField) -> Panorama {
    assert_eq!((flow.width, flow.height), (p.width(), p.height()));
    let w = p.width();
    let h = p.height();
    let mut out = Panorama::new(w, h, p.domain());
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 2;
            let sx = x as f64 + flow.data[i];
            let sy = y as f64 + flow.data[i + 1];
            let ([x0, x1], [y0, y1], u, v) = bilinear_prep(p, sx, sy);
            let w00 = (1.0 - u) * (1.0 - v);
            let w10 = u * (1.0 - v);
            let w01 = (1.0 - u) * v;
            let w11 = u * v;
            for c in 0..3 {
                let val = w00 * p.get(x0, y0, c)
                    + w10 * p.get(x1, y0, c)
                    + w01 * p.get(x0, y1, c)
                    + w11 * p.get(x1, y1, c);
                out.set(x, y, c, val);
            }
        }
    }
    out
}

/// Pulls a pixelwise loss gradient on the warped image back to the control
/// grid: chain rule through bilinear sampling, then through the spline.
///
/// `upstream[x, y, c]` = d loss / d warped(x, y, c). The basis is rebuilt
/// here; hot loops should use [`warp_grad_with_basis`].
pub fn warp_grad(p: &Panorama, grid: &WarpGrid, upstream: &Panorama) -> WarpGrid {
    let basis = SplineBasis::new(p.width(), p.height());
    warp_grad_with_basis(p, grid, upstream, &basis)
}

/// [`warp_grad`] with a caller-owned basis (and one flow evaluation) reused.
pub fn warp_grad_with_basis(
    p: &Panorama,
    grid: &WarpGrid,
    upstream: &Panorama,
    basis: &SplineBasis,
) -> WarpGrid {
    let flow = basis.eval(grid);
    let fg = flow_grad(p, &flow, upstream);
    basis.scatter(&fg)
}

/// Per-pixel gradient of the loss with respect to the dense flow.
pub fn flow_grad(p: &Panorama, flow: &FlowField, upstream: &Panorama) -> FlowField {
    assert_eq!((flow.width, flow.height), (p.width(), p.height()));
    assert_eq!((upstream.width(), upstream.height()), (p.width(), p.height()));
    let w = p.width();
    let h = p.height();
    let mut out = FlowField::zeros(w, h);
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) * 2;
            let sx = x as f64 + flow.data[i];
            let sy = y as f64 + flow.data[i + 1];
            let ([x0, x1], [y0, y1], u, v) = bilinear_prep(p, sx, sy);
            let mut gx = 0.0;
            let mut gy = 0.0;
            for c in 0..3 {
                let p00 = p.get(x0, y0, c);
                let p10 = p.get(x1, y0, c);
                let p01 = p.get(x0, y1, c);
                let p11 = p.get(x1, y1, c);
                let up = upstream.get(x, y, c);
                gx += up * ((1.0 - v) * (p10 - p00) + v * (p11 - p01));
                gy += up * ((1.0 - u) * (p01 - p00) + u * (p11 - p10));
            }
            out.data[i] = gx;
            out.data[i + 1] = gy;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::{rotate_pano, Domain};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    /// Global cubic B-spline kernel, support |t| < 2.
    fn kernel(t: f64) -> f64 {
        let a = t.abs();
        if a < 1.0 {
            (4.0 - 6.0 * a * a + 3.0 * a * a * a) / 6.0
        } else if a < 2.0 {
            (2.0 - a).powi(3) / 6.0
        } else {
            0.0
        }
    }

    /// Independent full-summation evaluation: for every pixel, sum the kernel
    /// over every control column (periodic images of it) and every control
    /// row index in an extended range mapped by clamping.
    fn eval_brute(grid: &WarpGrid, width: usize, height: usize) -> FlowField {
        let mut flow = FlowField::zeros(width, height);
        for y in 0..height {
            let ty = y as f64 * GRID_ROWS as f64 / height as f64;
            for x in 0..width {
                let tx = x as f64 * GRID_COLS as f64 / width as f64;
                for ch in 0..2 {
                    let mut acc = 0.0;
                    for j in -2..(GRID_ROWS as i64 + 2) {
                        let wy = kernel(ty - j as f64);
                        if wy == 0.0 {
                            continue;
                        }
                        let row = j.clamp(0, GRID_ROWS as i64 - 1) as usize;
                        for cidx in 0..GRID_COLS {
                            let mut wx = 0.0;
                            // periodic images of control column cidx
                            for rep in -1..=1 {
                                wx += kernel(tx - (cidx as f64 + rep as f64 * GRID_COLS as f64));
                            }
                            if wx != 0.0 {
                                acc += wy * wx * grid.get(row, cidx, ch);
                            }
                        }
                    }
                    flow.set(x, y, ch, acc);
                }
            }
        }
        flow
    }

    fn random_grid(seed: u64, amp: f64) -> WarpGrid {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        WarpGrid::random_uniform(amp, &mut rng)
    }

    fn random_pano(seed: u64, w: usize, h: usize) -> Panorama {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut p = Panorama::new(w, h, Domain::SrgbUnit);
        for v in p.data_mut() {
            *v = rand::Rng::gen_range(&mut rng, 0.0..1.0);
        }
        p
    }

    #[test]
    fn identity_grid_gives_zero_flow() {
        let flow = eval_spline(&WarpGrid::identity(), 96, 32);
        assert!(flow.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_brute_force_summation() {
        for seed in 0..5 {
            let grid = random_grid(seed, 3.0);
            let fast = eval_spline(&grid, 96, 32);
            let brute = eval_brute(&grid, 96, 32);
            for (a, b) in fast.data().iter().zip(brute.data()) {
                assert!((a - b).abs() < 1e-9, "fast {a} vs brute {b}");
            }
        }
    }

    #[test]
    fn constant_grid_gives_constant_flow() {
        // partition of unity
        let mut grid = WarpGrid::identity();
        for r in 0..GRID_ROWS {
            for c in 0..GRID_COLS {
                grid.set(r, c, 0, 1.25);
                grid.set(r, c, 1, -0.5);
            }
        }
        let flow = eval_spline(&grid, 240, 80);
        for i in 0..(240 * 80) {
            assert!((flow.data()[2 * i] - 1.25).abs() < 1e-12);
            assert!((flow.data()[2 * i + 1] + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_in_controls() {
        let g1 = random_grid(11, 2.0);
        let g2 = random_grid(12, 2.0);
        let combo = WarpGrid::from_flat(
            g1.as_flat()
                .iter()
                .zip(g2.as_flat())
                .map(|(a, b)| 0.7 * a - 1.3 * b)
                .collect(),
        )
        .unwrap();
        let f1 = eval_spline(&g1, 96, 32);
        let f2 = eval_spline(&g2, 96, 32);
        let fc = eval_spline(&combo, 96, 32);
        for i in 0..fc.data().len() {
            let want = 0.7 * f1.data()[i] - 1.3 * f2.data()[i];
            assert!((fc.data()[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn lattice_shift_translates_flow_exactly() {
        // W divisible by the lattice width, so one control column is an
        // integer number of pixel columns (96 / 32 = 3).
        let grid = random_grid(21, 3.0);
        let shifted = grid.shift_cols(1);
        let f = eval_spline(&grid, 96, 32);
        let fs = eval_spline(&shifted, 96, 32);
        for y in 0..32 {
            for x in 0..96 {
                let src = (x + 96 - 3) % 96;
                assert_eq!(fs.get(x, y, 0), f.get(src, y, 0));
                assert_eq!(fs.get(x, y, 1), f.get(src, y, 1));
            }
        }
    }

    #[test]
    fn zero_flow_warp_is_bit_identical() {
        let p = random_pano(31, 96, 32);
        let out = warp(&p, &FlowField::zeros(96, 32));
        assert_eq!(p, out);
    }

    #[test]
    fn constant_integer_flow_matches_rotation() {
        let p = random_pano(32, 120, 40);
        let mut flow = FlowField::zeros(120, 40);
        for i in 0..(120 * 40) {
            flow.data_mut()[2 * i] = 7.0;
        }
        let warped = warp(&p, &flow);
        // sampling at +7 columns pulls content 7 columns leftward, i.e. a
        // rotation by -7 columns
        let rotated = rotate_pano(&p, -7.0 * std::f64::consts::TAU / 120.0);
        assert_eq!(warped, rotated);
    }

    #[test]
    fn half_pixel_flow_averages_neighbors() {
        let mut p = Panorama::new(4, 2, Domain::SrgbUnit);
        for y in 0..2 {
            for x in 0..4 {
                let v = if x % 2 == 0 { 0.2 } else { 0.8 };
                for c in 0..3 {
                    p.set(x, y, c, v);
                }
            }
        }
        let mut flow = FlowField::zeros(4, 2);
        for i in 0..8 {
            flow.data_mut()[2 * i] = 0.5;
        }
        let out = warp(&p, &flow);
        for &v in out.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn vertical_clamp_holds_rows() {
        let p = random_pano(33, 12, 4);
        let mut flow = FlowField::zeros(12, 4);
        for i in 0..(12 * 4) {
            flow.data_mut()[2 * i + 1] = -10.0;
        }
        let out = warp(&p, &flow);
        for x in 0..12 {
            for c in 0..3 {
                // everything clamps to row 0
                assert_eq!(out.get(x, 0, c), p.get(x, 0, c));
                assert_eq!(out.get(x, 3, c), p.get(x, 0, c));
            }
        }
    }

    #[test]
    fn scatter_is_transpose_of_eval() {
        // <eval(g), f> == <g, scatter(f)> for random g, f
        let basis = SplineBasis::new(96, 32);
        let g = random_grid(41, 1.0);
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let mut f = FlowField::zeros(96, 32);
        for v in f.data_mut() {
            *v = rand::Rng::gen_range(&mut rng, -1.0..1.0);
        }
        let lhs: f64 = basis.eval(&g).data().iter().zip(f.data()).map(|(a, b)| a * b).sum();
        let back = basis.scatter(&f);
        let rhs: f64 = g.as_flat().iter().zip(back.as_flat()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn warp_grad_matches_finite_differences() {
        // quadratic loss L = sum (warp(p) - q)^2 against a fixed target
        let w = 96;
        let h = 32;
        let p = random_pano(51, w, h);
        let q = random_pano(52, w, h);
        let grid = random_grid(53, 1.5);
        let basis = SplineBasis::new(w, h);

        let loss = |g: &WarpGrid| -> f64 {
            let out = warp(&p, &basis.eval(g));
            out.data().iter().zip(q.data()).map(|(a, b)| (a - b) * (a - b)).sum()
        };
        let upstream_of = |g: &WarpGrid| -> Panorama {
            let out = warp(&p, &basis.eval(g));
            Panorama::from_data(
                w,
                h,
                Domain::SrgbUnit,
                out.data().iter().zip(q.data()).map(|(a, b)| 2.0 * (a - b)).collect(),
            )
            .unwrap()
        };

        let analytic = warp_grad_with_basis(&p, &grid, &upstream_of(&grid), &basis);
        let eps = 1e-3;
        let mut num = 0.0f64;
        let mut den = 0.0f64;
        // probe a deterministic subset of entries
        for idx in (0..grid.as_flat().len()).step_by(37) {
            let mut gp = grid.clone();
            gp.as_flat_mut()[idx] += eps;
            let mut gm = grid.clone();
            gm.as_flat_mut()[idx] -= eps;
            let fd = (loss(&gp) - loss(&gm)) / (2.0 * eps);
            let an = analytic.as_flat()[idx];
            num += (an - fd) * (an - fd);
            den += fd * fd;
        }
        assert!(num.sqrt() < 1e-4 * den.sqrt().max(1e-12), "rel err {}", num.sqrt() / den.sqrt());
    }
}

//! Factorization of an aligned stack of log-domain frames into one shared
//! log-reflectance image and per-frame shading.
//!
//! Shading is the bi-color model: a grayscale log-intensity map plus a
//! per-pixel blend of two global log color offsets, `B = c1 * M + c2 * (1-M)`
//! with a mixing mask M in [0, 1]. Two fitters are provided: the classic
//! median-of-gradients estimator (`weiss_mle`) and a gradient-based joint fit
//! (`bicolor_fit`) driven by reconstruction, cross-frame reflectance
//! consistency, and a white-light penalty that pins the color gauge.

use crate::adam::Adam;
use crate::error::{Error, Result};
use crate::image::{Domain, Panorama};

/// Logit slope applied to the centered intensity residual when initializing
/// the sun mask.
const MASK_INIT_GAIN: f64 = 4.0;

/// Step multiplier for the dense per-pixel blocks (reflectance, intensity).
const PIXEL_STEP_SCALE: f64 = 0.02;

/// Step multiplier for the per-pixel mask logits.
const LOGIT_STEP_SCALE: f64 = 1.0;

/// Weights and budget for [`bicolor_fit`].
#[derive(Debug, Clone)]
pub struct FitConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub weight_recon: f64,
    pub weight_rc: f64,
    pub weight_wl: f64,
    /// Tie both color offsets to zero and drop the mask (grayscale shading).
    pub mono_color: bool,
    pub seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            iterations: 400,
            learning_rate: 0.05,
            weight_recon: 1.0,
            weight_rc: 1.0,
            weight_wl: 0.1,
            mono_color: false,
            seed: 0,
        }
    }
}

/// Per-frame shading: grayscale log intensity plus two global log color
/// offsets blended by a per-pixel mask (1 = fully sunlit color).
#[derive(Debug, Clone, PartialEq)]
pub struct BiColorShading {
    width: usize,
    height: usize,
    pub log_intensity: Vec<f64>,
    pub mask: Vec<f64>,
    pub c1: [f64; 3],
    pub c2: [f64; 3],
}

impl BiColorShading {
    pub fn flat(width: usize, height: usize) -> Self {
        BiColorShading {
            width,
            height,
            log_intensity: vec![0.0; width * height],
            mask: vec![0.0; width * height],
            c1: [0.0; 3],
            c2: [0.0; 3],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// The color-offset component `B = c1 * M + c2 * (1 - M)`.
    pub fn color_component(&self) -> Panorama {
        let mut p = Panorama::new(self.width, self.height, Domain::LogLinear);
        for (i, &m) in self.mask.iter().enumerate() {
            for c in 0..3 {
                p.data_mut()[i * 3 + c] = self.c1[c] * m + self.c2[c] * (1.0 - m);
            }
        }
        p
    }

    /// Full three-channel log shading: intensity broadcast plus `B`.
    pub fn full_log_shading(&self) -> Panorama {
        let mut p = self.color_component();
        for (i, &a) in self.log_intensity.iter().enumerate() {
            for c in 0..3 {
                p.data_mut()[i * 3 + c] += a;
            }
        }
        p
    }
}

/// Per-term loss values of a finished fit.
#[derive(Debug, Clone, serde::Serialize)]
pub struct FitReport {
    pub method: String,
    pub iterations: usize,
    pub recon_l1: f64,
    pub pairwise_l1: f64,
    pub white_light_l1: f64,
    pub objective_trace: Vec<f64>,
}

/// Shared log reflectance plus per-frame shadings.
#[derive(Debug, Clone)]
pub struct Decomposition {
    pub log_reflectance: Panorama,
    pub shadings: Vec<BiColorShading>,
    pub report: FitReport,
}

impl Decomposition {
    /// Reconstructs frame `i` in the log domain.
    pub fn log_reconstruction(&self, i: usize) -> Panorama {
        let s = self.shadings[i].full_log_shading();
        let mut p = self.log_reflectance.clone();
        for (v, sv) in p.data_mut().iter_mut().zip(s.data()) {
            *v += sv;
        }
        p
    }
}

/// Mean squared error over all pixels and channels.
pub fn mse(a: &Panorama, b: &Panorama) -> f64 {
    assert_eq!((a.width(), a.height()), (b.width(), b.height()));
    let n = a.data().len();
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64
}

/// Pairwise reflectance-consistency loss: mean absolute difference over all
/// unordered frame pairs, normalized by pixels, channels, and pair count.
pub fn loss_rc(maps: &[Panorama]) -> f64 {
    let f = maps.len();
    if f < 2 {
        return 0.0;
    }
    let n = maps[0].data().len();
    let mut acc = 0.0;
    for i in 0..f {
        for j in (i + 1)..f {
            let (a, b) = (maps[i].data(), maps[j].data());
            for k in 0..n {
                acc += (a[k] - b[k]).abs();
            }
        }
    }
    acc / (n * f * (f - 1) / 2) as f64
}

/// White-light loss: L1 norm of the per-pixel across-frame sum of the color
/// components, normalized by pixels and channels (not by frame count).
pub fn loss_wl(color_components: &[Panorama]) -> f64 {
    if color_components.is_empty() {
        return 0.0;
    }
    let n = color_components[0].data().len();
    let mut acc = 0.0;
    for k in 0..n {
        let total: f64 = color_components.iter().map(|m| m.data()[k]).sum();
        acc += total.abs();
    }
    acc / n as f64
}

/// Forward difference in x, cyclic: `g(x) = u(x+1 mod W) - u(x)`.
pub fn grad_x(u: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut g = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            g[y * w + x] = u[y * w + (x + 1) % w] - u[y * w + x];
        }
    }
    g
}

/// Forward difference in y, Neumann: zero on the last row.
pub fn grad_y(u: &[f64], w: usize, h: usize) -> Vec<f64> {
    let mut g = vec![0.0; w * h];
    for y in 0..(h - 1) {
        for x in 0..w {
            g[y * w + x] = u[(y + 1) * w + x] - u[y * w + x];
        }
    }
    g
}

fn divergence(gx: &[f64], gy: &[f64], w: usize, h: usize) -> Vec<f64> {
    // adjoint of (grad_x, grad_y): b = grad_x^T gx + grad_y^T gy
    let mut b = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let xm = y * w + (x + w - 1) % w;
            b[i] += gx[xm] - gx[i];
            if y > 0 {
                b[i] += gy[i - w];
            }
            if y < h - 1 {
                b[i] -= gy[i];
            }
        }
    }
    b
}

fn laplacian_apply(u: &[f64], w: usize, h: usize, out: &mut [f64]) {
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let mut acc = 0.0;
            let xp = y * w + (x + 1) % w;
            let xm = y * w + (x + w - 1) % w;
            acc += 2.0 * u[i] - u[xp] - u[xm];
            if y > 0 {
                acc += u[i] - u[i - w];
            }
            if y < h - 1 {
                acc += u[i] - u[i + w];
            }
            out[i] = acc;
        }
    }
}

/// Least-squares integration of a gradient field: solves the Poisson normal
/// equations with cyclic x, Neumann y, and a zero-mean gauge, by conjugate
/// gradients to a 1e-12 relative residual.
pub fn poisson_reconstruct(gx: &[f64], gy: &[f64], w: usize, h: usize) -> Result<Vec<f64>> {
    let n = w * h;
    assert_eq!(gx.len(), n);
    assert_eq!(gy.len(), n);
    if n < 2 {
        return Ok(vec![0.0; n]);
    }
    let mut b = divergence(gx, gy, w, h);
    // minimize ||grad u - g||^2 -> laplacian u = -div... sign check below:
    // d/du ||grad u - g||^2 = 2 (grad^T grad u - grad^T g); b = grad^T g
    let mean_b = b.iter().sum::<f64>() / n as f64;
    for v in &mut b {
        *v -= mean_b;
    }
    let norm_b = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut u = vec![0.0; n];
    if norm_b == 0.0 {
        return Ok(u);
    }
    let tol = 1e-12 * norm_b;
    let mut r = b.clone();
    let mut p = b;
    let mut ap = vec![0.0; n];
    let mut rs = r.iter().map(|v| v * v).sum::<f64>();
    let max_iter = 20 * (w + h).max(100);
    for _ in 0..max_iter {
        if rs.sqrt() <= tol {
            let mean_u = u.iter().sum::<f64>() / n as f64;
            for v in &mut u {
                *v -= mean_u;
            }
            return Ok(u);
        }
        laplacian_apply(&p, w, h, &mut ap);
        let pap: f64 = p.iter().zip(&ap).map(|(a, b)| a * b).sum();
        if pap <= 0.0 {
            return Err(Error::NoConvergence(
                "poisson solve hit a non-positive curvature direction".into(),
            ));
        }
        let alpha = rs / pap;
        for i in 0..n {
            u[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rs_new: f64 = r.iter().map(|v| v * v).sum();
        let beta = rs_new / rs;
        rs = rs_new;
        for i in 0..n {
            p[i] = r[i] + beta * p[i];
        }
    }
    Err(Error::NoConvergence(format!(
        "poisson solve: residual {:.3e} above {:.3e} after {} iterations",
        rs.sqrt(),
        tol,
        max_iter
    )))
}

fn expect_log_frames(frames: &[Panorama]) -> Result<(usize, usize)> {
    if frames.is_empty() {
        return Err(Error::invalid("empty stack"));
    }
    let (w, h) = (frames[0].width(), frames[0].height());
    for f in frames {
        if f.domain() != Domain::LogLinear {
            return Err(Error::DomainMismatch {
                expected: Domain::LogLinear.tag().into(),
                actual: f.domain().tag().into(),
            });
        }
        if (f.width(), f.height()) != (w, h) {
            return Err(Error::invalid("stack frames differ in resolution"));
        }
    }
    Ok((w, h))
}

fn median_in_place(vals: &mut [f64]) -> f64 {
    vals.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let n = vals.len();
    if n % 2 == 1 {
        vals[n / 2]
    } else {
        0.5 * (vals[n / 2 - 1] + vals[n / 2])
    }
}

/// Per-(pixel, channel) temporal median across frames.
pub fn temporal_median(frames: &[Panorama]) -> Panorama {
    let n = frames[0].data().len();
    let mut out = frames[0].clone();
    let mut scratch = vec![0.0; frames.len()];
    for k in 0..n {
        for (s, f) in scratch.iter_mut().zip(frames) {
            *s = f.data()[k];
        }
        out.data_mut()[k] = median_in_place(&mut scratch);
    }
    out
}

/// Median-of-gradients decomposition: reflectance log-gradients are the
/// per-pixel temporal median of the frame log-gradients (x and y separately,
/// per channel), integrated by the Poisson solver under a zero-mean gauge.
/// Shading is kept grayscale: the channel mean of `frame - reflectance`.
pub fn weiss_mle(frames: &[Panorama]) -> Result<Decomposition> {
    let (w, h) = expect_log_frames(frames)?;
    let n = w * h;
    let nf = frames.len();
    let mut log_r = Panorama::new(w, h, Domain::LogLinear);
    let mut channel = vec![0.0; n];
    let mut scratch = vec![0.0; nf];
    for c in 0..3 {
        let gxs: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| {
                for (i, v) in channel.iter_mut().enumerate() {
                    *v = f.data()[i * 3 + c];
                }
                grad_x(&channel, w, h)
            })
            .collect();
        let gys: Vec<Vec<f64>> = frames
            .iter()
            .map(|f| {
                for (i, v) in channel.iter_mut().enumerate() {
                    *v = f.data()[i * 3 + c];
                }
                grad_y(&channel, w, h)
            })
            .collect();
        let mut mgx = vec![0.0; n];
        let mut mgy = vec![0.0; n];
        for i in 0..n {
            for (s, g) in scratch.iter_mut().zip(&gxs) {
                *s = g[i];
            }
            mgx[i] = median_in_place(&mut scratch);
            for (s, g) in scratch.iter_mut().zip(&gys) {
                *s = g[i];
            }
            mgy[i] = median_in_place(&mut scratch);
        }
        let u = poisson_reconstruct(&mgx, &mgy, w, h)?;
        for (i, &v) in u.iter().enumerate() {
            log_r.data_mut()[i * 3 + c] = v;
        }
    }
    let shadings: Vec<BiColorShading> = frames
        .iter()
        .map(|f| {
            let mut s = BiColorShading::flat(w, h);
            for i in 0..n {
                let mut acc = 0.0;
                for c in 0..3 {
                    acc += f.data()[i * 3 + c] - log_r.data()[i * 3 + c];
                }
                s.log_intensity[i] = acc / 3.0;
            }
            s
        })
        .collect();
    let report = report_for("weiss", 0, Vec::new(), frames, &log_r, &shadings);
    Ok(Decomposition {
        log_reflectance: log_r,
        shadings,
        report,
    })
}

fn report_for(
    method: &str,
    iterations: usize,
    objective_trace: Vec<f64>,
    frames: &[Panorama],
    log_r: &Panorama,
    shadings: &[BiColorShading],
) -> FitReport {
    let full: Vec<Panorama> = shadings.iter().map(|s| s.full_log_shading()).collect();
    let n = log_r.data().len();
    let mut recon = 0.0;
    let mut refl_maps = Vec::with_capacity(frames.len());
    for (f, s) in frames.iter().zip(&full) {
        let mut r_map = Panorama::new(log_r.width(), log_r.height(), Domain::LogLinear);
        for k in 0..n {
            let r = f.data()[k] - s.data()[k];
            r_map.data_mut()[k] = r;
            recon += (r - log_r.data()[k]).abs();
        }
        refl_maps.push(r_map);
    }
    let colors: Vec<Panorama> = shadings.iter().map(|s| s.color_component()).collect();
    FitReport {
        method: method.into(),
        iterations,
        recon_l1: recon / (n * frames.len()) as f64,
        pairwise_l1: loss_rc(&refl_maps),
        white_light_l1: loss_wl(&colors),
        objective_trace,
    }
}

/// Parameter vector layout for the joint fit.
struct ParamLayout {
    n: usize,  // pixels
    nf: usize, // frames
}

impl ParamLayout {
    fn len(&self) -> usize {
        self.n * 3 + self.nf * self.n * 2 + self.nf * 6
    }
    fn log_r(&self) -> std::ops::Range<usize> {
        0..self.n * 3
    }
    fn intensity(&self, i: usize) -> std::ops::Range<usize> {
        let base = self.n * 3 + i * self.n;
        base..base + self.n
    }
    fn c1(&self, i: usize) -> usize {
        self.n * 3 + self.nf * self.n + i * 3
    }
    fn c2(&self, i: usize) -> usize {
        self.n * 3 + self.nf * self.n + self.nf * 3 + i * 3
    }
    fn logits(&self, i: usize) -> std::ops::Range<usize> {
        let base = self.n * 3 + self.nf * self.n + self.nf * 6 + i * self.n;
        base..base + self.n
    }
}

struct Objective<'a> {
    frames: &'a [Panorama],
    layout: ParamLayout,
    cfg: &'a FitConfig,
}

impl Objective<'_> {
    /// Objective value and, if `grads` is given, its subgradient
    /// (sign(0) = 0 convention).
    fn eval(&self, params: &[f64], mut grads: Option<&mut [f64]>) -> f64 {
        let n = self.layout.n;
        let nf = self.layout.nf;
        let n3 = n * 3;
        if let Some(g) = grads.as_deref_mut() {
            g.fill(0.0);
        }
        let pairs = if nf >= 2 { nf * (nf - 1) / 2 } else { 1 };
        let w_recon = self.cfg.weight_recon / (nf * n3) as f64;
        let w_rc = self.cfg.weight_rc / (pairs * n3) as f64;
        let w_wl = self.cfg.weight_wl / n3 as f64;

        let log_r = &params[self.layout.log_r()];
        // per-frame masks and color components
        let mut masks: Vec<Vec<f64>> = Vec::with_capacity(nf);
        for i in 0..nf {
            let logits = &params[self.layout.logits(i)];
            masks.push(logits.iter().map(|&l| 1.0 / (1.0 + (-l).exp())).collect());
        }
        // reflectance estimates r_i = frame_i - shading_i, and color sums
        let mut refl: Vec<Vec<f64>> = Vec::with_capacity(nf);
        let mut bsum = vec![0.0f64; n3];
        for i in 0..nf {
            let a = &params[self.layout.intensity(i)];
            let c1 = &params[self.layout.c1(i)..self.layout.c1(i) + 3];
            let c2 = &params[self.layout.c2(i)..self.layout.c2(i) + 3];
            let m = &masks[i];
            let mut r = vec![0.0f64; n3];
            let fd = self.frames[i].data();
            for px in 0..n {
                for c in 0..3 {
                    let b = c1[c] * m[px] + c2[c] * (1.0 - m[px]);
                    let s = a[px] + b;
                    r[px * 3 + c] = fd[px * 3 + c] - s;
                    bsum[px * 3 + c] += b;
                }
            }
            refl.push(r);
        }

        let mut obj = 0.0;
        // gradient accumulators on shading (recon + rc) and on B (wl)
        let mut g_shade: Vec<Vec<f64>> = if grads.is_some() {
            (0..nf).map(|_| vec![0.0; n3]).collect()
        } else {
            Vec::new()
        };

        // reconstruction: |r_i - logR|
        for i in 0..nf {
            for k in 0..n3 {
                let e = refl[i][k] - log_r[k];
                obj += w_recon * e.abs();
                if let Some(g) = grads.as_deref_mut() {
                    let s = sign(e);
                    // d e / d logR = -1; d e / d shading_i = -1
                    g[k] -= w_recon * s;
                    g_shade[i][k] -= w_recon * s;
                }
            }
        }
        // pairwise consistency: |r_i - r_j|
        if nf >= 2 {
            for i in 0..nf {
                for j in (i + 1)..nf {
                    for k in 0..n3 {
                        let d = refl[i][k] - refl[j][k];
                        obj += w_rc * d.abs();
                        if !g_shade.is_empty() {
                            let s = sign(d);
                            // d d / d shading_i = -1, d d / d shading_j = +1
                            g_shade[i][k] -= w_rc * s;
                            g_shade[j][k] += w_rc * s;
                        }
                    }
                }
            }
        }
        // white light: |sum_i B_i|
        let mut g_wl = vec![0.0f64; n3];
        for k in 0..n3 {
            obj += w_wl * bsum[k].abs();
            if grads.is_some() {
                g_wl[k] = w_wl * sign(bsum[k]);
            }
        }

        if let Some(g) = grads {
            for i in 0..nf {
                let m = &masks[i];
                let c1_at = self.layout.c1(i);
                let c2_at = self.layout.c2(i);
                let c1 = [params[c1_at], params[c1_at + 1], params[c1_at + 2]];
                let c2 = [params[c2_at], params[c2_at + 1], params[c2_at + 2]];
                let a_range = self.layout.intensity(i);
                let l_range = self.layout.logits(i);
                for px in 0..n {
                    let mut a_acc = 0.0;
                    let mut l_acc = 0.0;
                    for c in 0..3 {
                        let gs = g_shade[i][px * 3 + c];
                        // total upstream on B = shading grad + white-light grad
                        let gb = gs + g_wl[px * 3 + c];
                        a_acc += gs;
                        if !self.cfg.mono_color {
                            g[c1_at + c] += gb * m[px];
                            g[c2_at + c] += gb * (1.0 - m[px]);
                            l_acc += gb * (c1[c] - c2[c]);
                        }
                    }
                    g[a_range.start + px] += a_acc;
                    if !self.cfg.mono_color {
                        g[l_range.start + px] += l_acc * m[px] * (1.0 - m[px]);
                    }
                }
            }
        }
        obj
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Joint gradient fit of the shared reflectance and per-frame bi-color
/// shadings.
///
/// Initialization: reflectance is the temporal median of the frames, each
/// intensity map is the per-pixel channel-mean residual against it, color
/// offsets start at zero, and the mask logits are seeded from the centered
/// intensity residual (bright pixels lean sunlit). Optimization
/// is Adam with a monotone safeguard: a step that would increase the
/// objective is rolled back and the step size halved; accepted steps let the
/// step size recover toward its configured value. The objective trace never
/// increases. With `iterations = 0` the initialization is returned verbatim.
pub fn bicolor_fit(frames: &[Panorama], cfg: &FitConfig) -> Result<Decomposition> {
    let (w, h) = expect_log_frames(frames)?;
    let n = w * h;
    let nf = frames.len();
    let layout = ParamLayout { n, nf };
    let mut params = vec![0.0f64; layout.len()];

    let median = temporal_median(frames);
    params[layout.log_r()].copy_from_slice(median.data());
    for i in 0..nf {
        let fd = frames[i].data();
        let dst = layout.intensity(i);
        let a = &mut params[dst];
        for px in 0..n {
            let mut acc = 0.0;
            for c in 0..3 {
                acc += fd[px * 3 + c] - median.data()[px * 3 + c];
            }
            a[px] = acc / 3.0;
        }
        // Seed the mask with the intensity residual: brighter-than-average
        // pixels are probably sunlit. Starting the logits at exactly zero
        // (M = 1/2 everywhere) is a saddle: c1 and c2 then receive identical
        // gradients and can never separate, and the mask gradient is
        // proportional to c1 - c2, so the whole color model stays frozen.
        let mean_a: f64 = params[layout.intensity(i)].iter().sum::<f64>() / n as f64;
        let residual: Vec<f64> = params[layout.intensity(i)].to_vec();
        let logits = &mut params[layout.logits(i)];
        for px in 0..n {
            logits[px] = MASK_INIT_GAIN * (residual[px] - mean_a);
        }
    }

    let objective = Objective {
        frames,
        layout: ParamLayout { n, nf },
        cfg,
    };
    let mut grads = vec![0.0f64; params.len()];
    let mut opt = Adam::new(params.len(), cfg.learning_rate, 0.9, 0.999);
    // The dense pixel fields start at (or quickly reach) their per-pixel L1
    // medians, where every normalized step is uphill; full-size steps there
    // would trip the monotone safeguard long before the six color offsets per
    // frame finish traveling. Damping the pixel blocks keeps whole steps
    // acceptable while the global color parameters move at full stride.
    let mut scales = vec![PIXEL_STEP_SCALE; params.len()];
    for i in 0..nf {
        let c1 = layout.c1(i);
        let c2 = layout.c2(i);
        scales[c1..c1 + 3].fill(1.0);
        scales[c2..c2 + 3].fill(1.0);
        scales[layout.logits(i)].fill(LOGIT_STEP_SCALE);
    }
    opt.step_scales = Some(scales);
    let lr_floor = cfg.learning_rate * 1e-6;

    let mut current = objective.eval(&params, None);
    let mut trace = Vec::with_capacity(cfg.iterations + 1);
    trace.push(current);
    let mut backup = params.clone();
    for _ in 0..cfg.iterations {
        objective.eval(&params, Some(&mut grads));
        backup.copy_from_slice(&params);
        opt.step(&mut params, &grads);
        let after = objective.eval(&params, None);
        if after <= current {
            current = after;
            opt.learning_rate = (opt.learning_rate * 1.1).min(cfg.learning_rate);
        } else {
            params.copy_from_slice(&backup);
            opt.learning_rate = (opt.learning_rate * 0.5).max(lr_floor);
        }
        trace.push(current);
    }

    let log_r = Panorama::from_data(w, h, Domain::LogLinear, params[layout.log_r()].to_vec())?;
    let mut shadings = Vec::with_capacity(nf);
    for i in 0..nf {
        let mut s = BiColorShading::flat(w, h);
        s.log_intensity.copy_from_slice(&params[layout.intensity(i)]);
        let c1_at = layout.c1(i);
        let c2_at = layout.c2(i);
        s.c1 = [params[c1_at], params[c1_at + 1], params[c1_at + 2]];
        s.c2 = [params[c2_at], params[c2_at + 1], params[c2_at + 2]];
        for (mv, &l) in s.mask.iter_mut().zip(&params[layout.logits(i)]) {
            *mv = 1.0 / (1.0 + (-l).exp());
        }
        if cfg.mono_color {
            s.mask.fill(0.0);
        }
        shadings.push(s);
    }
    let method = if cfg.mono_color { "monocolor" } else { "bicolor" };
    let report = report_for(method, cfg.iterations, trace, frames, &log_r, &shadings);
    Ok(Decomposition {
        log_reflectance: log_r,
        shadings,
        report,
    })
}

/// Alternating least squares for the two-light intensity model: solves
/// `x_i(px) ~ (u_i + v_i * masks_i(px)) * e(px)` for per-frame sky/sun
/// intensities `u, v` and a shared per-pixel field `e`. The factorization
/// has one global scale freedom, left wherever the iteration puts it;
/// consumers work with ratios or normalize `e`. `u` is clamped positive and
/// `v` non-negative; a frame whose mask carries no signal degenerates to
/// `v = 0`.
pub fn intensity_als(
    x: &[Vec<f64>],
    masks: &[Vec<f64>],
    iterations: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let nf = x.len();
    let n = if nf > 0 { x[0].len() } else { 0 };
    let mut e = vec![1.0f64; n];
    let mut u = vec![0.0f64; nf];
    let mut v = vec![0.0f64; nf];
    for _ in 0..iterations {
        for i in 0..nf {
            let m = &masks[i];
            let (mut s_ee, mut s_me, mut s_mm, mut s_ex, mut s_mx) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for px in 0..n {
                let ee = e[px] * e[px];
                s_ee += ee;
                s_me += m[px] * ee;
                s_mm += m[px] * m[px] * ee;
                s_ex += e[px] * x[i][px];
                s_mx += m[px] * e[px] * x[i][px];
            }
            let det = s_ee * s_mm - s_me * s_me;
            if det.abs() < 1e-12 * (s_ee * s_mm + s_me * s_me) {
                u[i] = (s_ex / s_ee.max(1e-12)).max(1e-4);
                v[i] = 0.0;
            } else {
                u[i] = ((s_mm * s_ex - s_me * s_mx) / det).max(1e-4);
                v[i] = ((s_ee * s_mx - s_me * s_ex) / det).max(0.0);
            }
        }
        for px in 0..n {
            let (mut num, mut den) = (0.0, 0.0);
            for (i, m) in masks.iter().enumerate() {
                let s = u[i] + v[i] * m[px];
                num += s * x[i][px];
                den += s * s;
            }
            e[px] = (num / den.max(1e-12)).max(1e-4);
        }
    }
    (u, v, e)
}

/// Nearest-neighbor baseline: the other frame with the lowest MSE against
/// the target, and that MSE. Frames are compared in whatever domain they are
/// given (the protocols use display-encoded frames).
pub fn pixel_nn_baseline(frames: &[Panorama], target: usize) -> Result<(usize, f64)> {
    if frames.len() < 2 {
        return Err(Error::invalid("pixel_nn_baseline needs at least two frames"));
    }
    if target >= frames.len() {
        return Err(Error::invalid("pixel_nn_baseline target out of range"));
    }
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, f) in frames.iter().enumerate() {
        if i == target {
            continue;
        }
        let e = mse(&frames[target], f);
        if e < best.1 {
            best = (i, e);
        }
    }
    Ok(best)
}

//! Sun-azimuth estimation as a 60-bin distribution over yaw, plus the
//! circular statistics used to reduce, calibrate, and score it.
//!
//! Bin b covers yaw [-pi + b * step, -pi + (b+1) * step) with step = 6
//! degrees; expectations use bin centers. The estimator is built from cyclic
//! column operations only, so rotating a panorama by a whole number of bins
//! shifts the output distribution by exactly that many bins, bit for bit.

use crate::error::{Error, Result};
use crate::image::{rotate_pano, validate_pano_dims, Domain, Panorama};
use std::f64::consts::{PI, TAU};

pub const BIN_COUNT: usize = 60;

/// Width of one azimuth bin, radians (6 degrees).
pub const BIN_WIDTH: f64 = TAU / BIN_COUNT as f64;

/// Fraction of panorama rows (from the top) treated as sky.
pub const SKY_BAND_FRACTION: f64 = 0.4;

/// Percentile of sky-band luminance used as the bright threshold.
pub const BRIGHT_PERCENTILE: f64 = 99.5;

/// Minimum display luminance a sun pixel must reach; below it the image is
/// treated as overcast and the estimator falls back to the column marginal.
pub const SUN_LUMINANCE_FLOOR: f64 = 0.8;

/// Concentration of the von-Mises-shaped soft assignment. 134 puts roughly
/// 24% of the mass in each bin adjacent to the peak.
pub const KERNEL_KAPPA: f64 = 134.0;

/// Probability mass over the 60 azimuth bins. Always sums to 1 within 1e-9.
#[derive(Debug, Clone, PartialEq)]
pub struct AzimuthDistribution {
    probs: [f64; BIN_COUNT],
}

impl AzimuthDistribution {
    pub fn uniform() -> Self {
        AzimuthDistribution {
            probs: [1.0 / BIN_COUNT as f64; BIN_COUNT],
        }
    }

    /// Builds from nonnegative weights, normalizing to total 1.
    pub fn from_weights(weights: &[f64; BIN_COUNT]) -> Result<Self> {
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("azimuth weights must be finite and >= 0"));
        }
        let total = sorted_sum(weights);
        if total <= 0.0 {
            return Err(Error::Degenerate("azimuth weights sum to zero".into()));
        }
        let mut probs = [0.0; BIN_COUNT];
        for (p, &w) in probs.iter_mut().zip(weights) {
            *p = w / total;
        }
        Ok(AzimuthDistribution { probs })
    }

    /// All mass in one bin.
    pub fn delta(bin: usize) -> Self {
        assert!(bin < BIN_COUNT);
        let mut probs = [0.0; BIN_COUNT];
        probs[bin] = 1.0;
        AzimuthDistribution { probs }
    }

    pub fn probs(&self) -> &[f64; BIN_COUNT] {
        &self.probs
    }

    /// Yaw of the center of bin b.
    pub fn bin_center(bin: usize) -> f64 {
        -PI + (bin as f64 + 0.5) * BIN_WIDTH
    }

    /// Bin containing the given yaw.
    pub fn bin_of(angle: f64) -> usize {
        let a = wrap_angle(angle);
        // wrap_angle returns (-pi, pi]; map pi into the last bin
        let t = ((a + PI) / BIN_WIDTH).floor() as i64;
        t.clamp(0, BIN_COUNT as i64 - 1) as usize
    }

    pub fn shifted(&self, by: i64) -> Self {
        let mut probs = [0.0; BIN_COUNT];
        for (b, p) in probs.iter_mut().enumerate() {
            let src = (b as i64 - by).rem_euclid(BIN_COUNT as i64) as usize;
            *p = self.probs[src];
        }
        AzimuthDistribution { probs }
    }

    pub fn circular_mean(&self) -> Result<f64> {
        let angles: Vec<f64> = (0..BIN_COUNT).map(Self::bin_center).collect();
        circular_mean_weighted(&angles, &self.probs)
    }
}

/// Sums values in ascending order so the total is independent of any cyclic
/// relabeling of the inputs.
fn sorted_sum(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.iter().sum()
}

/// Wraps an angle to (-pi, pi].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// Circular expectation of weighted angles: atan2 of the mean sine and mean
/// cosine. Errors if the resultant length is below 1e-9 (direction undefined,
/// e.g. a uniform distribution).
pub fn circular_mean_weighted(angles: &[f64], weights: &[f64]) -> Result<f64> {
    assert_eq!(angles.len(), weights.len());
    let mut s = 0.0;
    let mut c = 0.0;
    let mut total = 0.0;
    for (&a, &w) in angles.iter().zip(weights) {
        s += w * a.sin();
        c += w * a.cos();
        total += w;
    }
    if total <= 0.0 {
        return Err(Error::Degenerate("circular mean of zero total weight".into()));
    }
    s /= total;
    c /= total;
    if (s * s + c * c).sqrt() < 1e-9 {
        return Err(Error::Degenerate(
            "circular mean undefined: resultant length below 1e-9".into(),
        ));
    }
    Ok(s.atan2(c))
}

struct SkyBand {
    width: usize,
    rows: usize,
    lum: Vec<f64>, // rows * width, row-major
}

impl SkyBand {
    fn of(p: &Panorama) -> Self {
        let rows = ((p.height() as f64) * SKY_BAND_FRACTION).floor() as usize;
        let rows = rows.max(1);
        let width = p.width();
        let mut lum = Vec::with_capacity(rows * width);
        for y in 0..rows {
            for x in 0..width {
                lum.push(p.luminance(x, y));
            }
        }
        SkyBand { width, rows, lum }
    }

    fn max_pixel(&self) -> (usize, f64) {
        let mut best = 0;
        let mut best_v = f64::NEG_INFINITY;
        for (i, &v) in self.lum.iter().enumerate() {
            if v > best_v {
                best_v = v;
                best = i;
            }
        }
        (best, best_v)
    }

    fn percentile(&self, q: f64) -> f64 {
        let mut sorted = self.lum.clone();
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let rank = ((q / 100.0) * sorted.len() as f64).ceil() as usize;
        sorted[rank.clamp(1, sorted.len()) - 1]
    }

    /// 4-connected component (cyclic in x) of `seed` within `mask`.
    fn component(&self, mask: &[bool], seed: usize) -> Vec<usize> {
        let mut seen = vec![false; mask.len()];
        let mut stack = vec![seed];
        let mut out = Vec::new();
        seen[seed] = true;
        while let Some(i) = stack.pop() {
            out.push(i);
            let y = i / self.width;
            let x = i % self.width;
            let mut push = |nx: usize, ny: usize| {
                let j = ny * self.width + nx;
                if mask[j] && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            };
            push((x + 1) % self.width, y);
            push((x + self.width - 1) % self.width, y);
            if y > 0 {
                push(x, y - 1);
            }
            if y + 1 < self.rows {
                push(x, y + 1);
            }
        }
        out
    }
}

/// Estimates the sun azimuth of a display-encoded panorama as a soft
/// distribution over the 60 yaw bins.
///
/// Pipeline: take the top 40% of rows, threshold luminance at its 99.5th
/// percentile, walk the connected bright component containing the brightest
/// pixel, place its luminance-weighted centroid column, and spread a
/// von-Mises-shaped kernel around it. If nothing in the band reaches the sun
/// luminance floor the estimate falls back to the band's column-luminance
/// marginal (uniform when the band is fully black).
pub fn estimate_azimuth(p: &Panorama) -> Result<AzimuthDistribution> {
    if p.domain() != Domain::SrgbUnit {
        return Err(Error::DomainMismatch {
            expected: Domain::SrgbUnit.tag().into(),
            actual: p.domain().tag().into(),
        });
    }
    validate_pano_dims(p.width(), p.height())?;
    let band = SkyBand::of(p);
    let (brightest, max_lum) = band.max_pixel();
    let threshold = band.percentile(BRIGHT_PERCENTILE);
    if max_lum < (0.9 * threshold).max(SUN_LUMINANCE_FLOOR) {
        return fallback_marginal(&band);
    }
    let mask: Vec<bool> = band.lum.iter().map(|&v| v > threshold).collect();
    if !mask[brightest] {
        // flat bright band (no pixel strictly above the percentile)
        return fallback_marginal(&band);
    }
    let members = band.component(&mask, brightest);

    // luminance-weighted circular centroid of member columns
    let angles: Vec<f64> = members
        .iter()
        .map(|&i| ((i % band.width) as f64 + 0.5) * TAU / band.width as f64 - PI)
        .collect();
    let weights: Vec<f64> = members.iter().map(|&i| band.lum[i]).collect();
    let centroid = circular_mean_weighted(&angles, &weights)?;

    // snap the centroid to the half-column phase grid; bins and column
    // centers both live on it exactly, so kernel weights depend only on
    // integer phase differences and rotation equivariance is exact
    let w2 = 2 * band.width as i64;
    let phase = (((centroid + PI) / TAU) * w2 as f64).round() as i64 % w2;
    let mut kernel = [0.0f64; BIN_COUNT];
    for (b, k) in kernel.iter_mut().enumerate() {
        let bin_phase = (2 * b as i64 + 1) * (band.width as i64) / BIN_COUNT as i64;
        let mut d = (bin_phase - phase).rem_euclid(w2);
        if d > band.width as i64 {
            d -= w2;
        }
        let ang = PI * d as f64 / band.width as f64;
        *k = (KERNEL_KAPPA * (ang.cos() - 1.0)).exp();
    }
    AzimuthDistribution::from_weights(&kernel)
}

fn fallback_marginal(band: &SkyBand) -> Result<AzimuthDistribution> {
    let cols_per_bin = band.width / BIN_COUNT;
    let mut weights = [0.0f64; BIN_COUNT];
    for (b, w) in weights.iter_mut().enumerate() {
        let mut acc = 0.0;
        for x in (b * cols_per_bin)..((b + 1) * cols_per_bin) {
            for y in 0..band.rows {
                acc += band.lum[y * band.width + x];
            }
        }
        *w = acc;
    }
    match AzimuthDistribution::from_weights(&weights) {
        Ok(d) => Ok(d),
        Err(Error::Degenerate(_)) => Ok(AzimuthDistribution::uniform()),
        Err(e) => Err(e),
    }
}

/// Snaps an angle to the nearest whole bin rotation.
pub fn snap_to_bins(angle: f64) -> f64 {
    (angle / BIN_WIDTH).round() * BIN_WIDTH
}

/// Rotates the panorama so the sun (at yaw `phi_bar`) lands at the canonical
/// center, snapping the rotation to whole bins.
pub fn sun_normalize(p: &Panorama, phi_bar: f64) -> Panorama {
    rotate_pano(p, -snap_to_bins(phi_bar))
}

/// Inverse of [`sun_normalize`].
pub fn sun_denormalize(p: &Panorama, phi_bar: f64) -> Panorama {
    rotate_pano(p, snap_to_bins(phi_bar))
}

/// Searches the 60 whole-bin offsets for the one maximizing the mean cosine
/// between offset predictions and ground truth. Returns the offset in
/// (-pi, pi]; ties take the first maximum in offset-index order.
pub fn calibrate_offset(predictions: &[f64], ground_truth: &[f64]) -> Result<f64> {
    if predictions.len() != ground_truth.len() || predictions.is_empty() {
        return Err(Error::invalid("calibrate_offset needs matching nonempty slices"));
    }
    let mut best_k = 0;
    let mut best = f64::NEG_INFINITY;
    for k in 0..BIN_COUNT {
        let offset = k as f64 * BIN_WIDTH;
        let score: f64 = predictions
            .iter()
            .zip(ground_truth)
            .map(|(&p, &g)| (p + offset - g).cos())
            .sum::<f64>()
            / predictions.len() as f64;
        if score > best {
            best = score;
            best_k = k;
        }
    }
    Ok(wrap_angle(best_k as f64 * BIN_WIDTH))
}

/// Mean cosine similarity and median absolute angular error in degrees
/// (wrapped to [0, 180]). The median averages the two middle values for even
/// counts.
pub fn azimuth_metrics(predictions: &[f64], ground_truth: &[f64]) -> Result<(f64, f64)> {
    if predictions.len() != ground_truth.len() || predictions.is_empty() {
        return Err(Error::invalid("azimuth_metrics needs matching nonempty slices"));
    }
    let n = predictions.len();
    let mut cos_acc = 0.0;
    let mut errs: Vec<f64> = Vec::with_capacity(n);
    for (&p, &g) in predictions.iter().zip(ground_truth) {
        let d = wrap_angle(p - g);
        cos_acc += d.cos();
        errs.push(d.abs().to_degrees());
    }
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if n % 2 == 1 {
        errs[n / 2]
    } else {
        0.5 * (errs[n / 2 - 1] + errs[n / 2])
    };
    Ok((cos_acc / n as f64, median))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn delta_mean_is_bin_center() {
        for bin in [0, 7, 35, 59] {
            let d = AzimuthDistribution::delta(bin);
            let m = d.circular_mean().unwrap();
            assert!((m - AzimuthDistribution::bin_center(bin)).abs() < 1e-12);
        }
    }

    #[test]
    fn symmetric_bins_average_to_bisector() {
        // centers 3 deg and 87 deg -> mean 45 deg
        let b1 = AzimuthDistribution::bin_of(3.0f64.to_radians());
        let b2 = AzimuthDistribution::bin_of(87.0f64.to_radians());
        let mut w = [0.0; BIN_COUNT];
        w[b1] = 0.5;
        w[b2] = 0.5;
        let d = AzimuthDistribution::from_weights(&w).unwrap();
        let m = d.circular_mean().unwrap();
        assert!((m - 45.0f64.to_radians()).abs() < 1e-9);
    }

    #[test]
    fn wraparound_mean_is_pi() {
        let b1 = AzimuthDistribution::bin_of(177.0f64.to_radians());
        let b2 = AzimuthDistribution::bin_of((-177.0f64).to_radians());
        let mut w = [0.0; BIN_COUNT];
        w[b1] = 0.5;
        w[b2] = 0.5;
        let d = AzimuthDistribution::from_weights(&w).unwrap();
        let m = d.circular_mean().unwrap();
        assert!((m.abs() - PI).abs() < 1e-9);
    }

    #[test]
    fn weighted_angles_wraparound() {
        // resultant (0, -cos(10 deg)), atan2 gives pi
        let m = circular_mean_weighted(
            &[170.0f64.to_radians(), (-170.0f64).to_radians()],
            &[0.5, 0.5],
        )
        .unwrap();
        assert!((m - PI).abs() < 1e-9);
    }

    #[test]
    fn uniform_mean_is_degenerate() {
        let d = AzimuthDistribution::uniform();
        assert!(matches!(d.circular_mean(), Err(Error::Degenerate(_))));
    }

    #[test]
    fn bin_of_handles_edges() {
        assert_eq!(AzimuthDistribution::bin_of(-PI), BIN_COUNT - 1); // wraps to +pi
        assert_eq!(AzimuthDistribution::bin_of(PI), BIN_COUNT - 1);
        assert_eq!(AzimuthDistribution::bin_of(-PI + 1e-9), 0);
        assert_eq!(AzimuthDistribution::bin_of(0.0), BIN_COUNT / 2);
    }

    fn pano_with_blob(w: usize, h: usize, cx: usize, cy: usize) -> Panorama {
        let mut p = Panorama::new(w, h, Domain::SrgbUnit);
        for v in p.data_mut() {
            *v = 0.2;
        }
        for dy in 0..3usize {
            for dx in 0..3usize {
                let x = (cx + dx + w - 1) % w;
                let y = cy + dy - 1;
                for c in 0..3 {
                    p.set(x, y, c, 0.95);
                }
            }
        }
        p
    }

    #[test]
    fn blob_peaks_at_its_bin() {
        let w = 240;
        let p = pano_with_blob(w, 80, 100, 10);
        let d = estimate_azimuth(&p).unwrap();
        let sum: f64 = d.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
        let peak = d
            .probs()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        // blob center column 101 of 240 -> yaw fraction 101.5/240 -> bin 25
        assert_eq!(peak, 25);
        let m = d.circular_mean().unwrap();
        let expect = (101.5 / 240.0) * TAU - PI;
        assert!((m - expect).abs() < BIN_WIDTH / 2.0);
    }

    #[test]
    fn rotation_shifts_bins_exactly() {
        let w = 240;
        let p = pano_with_blob(w, 80, 57, 12);
        let base = estimate_azimuth(&p).unwrap();
        for bins in [1i64, 5, 15, 31] {
            let angle = bins as f64 * BIN_WIDTH;
            let rotated = rotate_pano(&p, angle);
            let d = estimate_azimuth(&rotated).unwrap();
            assert_eq!(d, base.shifted(bins), "shift by {bins} bins");
        }
    }

    #[test]
    fn all_black_falls_back_to_uniform() {
        let p = Panorama::new(240, 80, Domain::SrgbUnit);
        let d = estimate_azimuth(&p).unwrap();
        assert_eq!(d, AzimuthDistribution::uniform());
    }

    #[test]
    fn dim_sky_falls_back_to_marginal() {
        let mut p = Panorama::new(240, 80, Domain::SrgbUnit);
        // bright-ish (below the 0.8 floor) region centered on bin 7,
        // which covers columns 28..32
        for y in 0..32 {
            for x in 26..34 {
                for c in 0..3 {
                    p.set(x, y, c, 0.5);
                }
            }
        }
        let d = estimate_azimuth(&p).unwrap();
        let peak = d
            .probs()
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert_eq!(peak, 7); // bin 7 holds 4 bright columns, bins 6 and 8 hold 2
    }

    #[test]
    fn estimator_rejects_log_domain_and_bad_dims() {
        let p = Panorama::new(240, 80, Domain::LogLinear);
        assert!(estimate_azimuth(&p).is_err());
        let p = Panorama::new(96, 32, Domain::SrgbUnit);
        assert!(estimate_azimuth(&p).is_err());
    }

    #[test]
    fn calibrate_recovers_quarter_turn() {
        let gts: Vec<f64> = (0..10).map(|i| wrap_angle(i as f64 * 0.5)).collect();
        let preds: Vec<f64> = gts.iter().map(|g| wrap_angle(g + PI / 2.0)).collect();
        let off = calibrate_offset(&preds, &gts).unwrap();
        assert!((off - (-PI / 2.0)).abs() < 1e-12);
        let (cos_sim, med) = azimuth_metrics(
            &preds.iter().map(|p| wrap_angle(p + off)).collect::<Vec<_>>(),
            &gts,
        )
        .unwrap();
        assert!((cos_sim - 1.0).abs() < 1e-12);
        assert!(med < 1e-9);
    }

    #[test]
    fn metrics_hand_example() {
        // errors 0 and 90 deg: mean cos = 0.5, median = 45 deg
        let (cos_sim, med) = azimuth_metrics(&[0.0, PI / 2.0], &[0.0, 0.0]).unwrap();
        assert!((cos_sim - 0.5).abs() < 1e-12);
        assert!((med - 45.0).abs() < 1e-12);
    }

    #[test]
    fn sun_normalize_round_trip() {
        let mut p = Panorama::new(240, 80, Domain::SrgbUnit);
        p.set(33, 40, 1, 1.0);
        let phi = 77.0f64.to_radians();
        let n = sun_normalize(&p, phi);
        let back = sun_denormalize(&n, phi);
        assert_eq!(p, back);
    }

    #[test]
    fn normalize_centers_the_sun() {
        let w = 240usize;
        let p = pano_with_blob(w, 80, 180, 10);
        let d = estimate_azimuth(&p).unwrap();
        let phi = d.circular_mean().unwrap();
        let n = sun_normalize(&p, phi);
        let dn = estimate_azimuth(&n).unwrap();
        let m = dn.circular_mean().unwrap();
        assert!(m.abs() <= BIN_WIDTH, "sun should sit near yaw 0, got {m}");
    }
}

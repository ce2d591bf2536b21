//! Equirectangular panorama buffer and the pointwise transfer functions.
//!
//! Panoramas are stored row-major with interleaved RGB in f64. Columns map
//! linearly to yaw in [-pi, pi); the center column is the canonical heading 0.
//! Two value domains are tracked: `SrgbUnit` for unit-interval images (display
//! encoded or linear) and `LogLinear` for unbounded log intensities.

use crate::error::{Error, Result};

/// Value domain of a panorama buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// Unit-interval intensities in [0, 1].
    SrgbUnit,
    /// Natural-log intensities, unbounded.
    LogLinear,
}

impl Domain {
    pub fn tag(self) -> &'static str {
        match self {
            Domain::SrgbUnit => "SRGB_UNIT",
            Domain::LogLinear => "LOG_LINEAR",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "SRGB_UNIT" => Ok(Domain::SrgbUnit),
            "LOG_LINEAR" => Ok(Domain::LogLinear),
            other => Err(Error::invalid(format!("unknown domain tag {other:?}"))),
        }
    }
}

/// Display transfer function `encoded = scale * linear^exponent`.
///
/// The default is the pure power law with scale 1 and exponent 1/2.2; there is
/// deliberately no piecewise linear segment near zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaParams {
    pub scale: f64,
    pub exponent: f64,
}

impl Default for GammaParams {
    fn default() -> Self {
        GammaParams {
            scale: 1.0,
            exponent: 1.0 / 2.2,
        }
    }
}

/// Log floor matching one 8-bit quantization step.
pub const LOG_FLOOR: f64 = 1.0 / 255.0;

/// RGB panorama with interleaved channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Panorama {
    width: usize,
    height: usize,
    domain: Domain,
    data: Vec<f64>,
}

impl Panorama {
    /// All-zero panorama. Any positive size is allowed here; aspect and
    /// azimuth-bin divisibility are enforced at the pipeline boundaries
    /// (ingest, synthesis, azimuth estimation) via [`validate_pano_dims`].
    pub fn new(width: usize, height: usize, domain: Domain) -> Self {
        assert!(width > 0 && height > 0, "empty panorama");
        Panorama {
            width,
            height,
            domain,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn from_data(width: usize, height: usize, domain: Domain, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height * 3 {
            return Err(Error::invalid(format!(
                "buffer length {} does not match {}x{}x3",
                data.len(),
                width,
                height
            )));
        }
        Ok(Panorama {
            width,
            height,
            domain,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * 3 + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * 3 + c] = v;
    }

    /// Mean of the three channels at a pixel.
    #[inline]
    pub fn luminance(&self, x: usize, y: usize) -> f64 {
        let i = (y * self.width + x) * 3;
        (self.data[i] + self.data[i + 1] + self.data[i + 2]) / 3.0
    }

    /// Yaw of a column center, in radians in [-pi, pi).
    #[inline]
    pub fn yaw_of_column(&self, x: usize) -> f64 {
        -std::f64::consts::PI + (x as f64 + 0.5) * std::f64::consts::TAU / self.width as f64
    }

    pub fn map(&self, domain: Domain, f: impl Fn(f64) -> f64) -> Panorama {
        Panorama {
            width: self.width,
            height: self.height,
            domain,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn expect_domain(&self, expected: Domain) -> Result<()> {
        if self.domain != expected {
            return Err(Error::DomainMismatch {
                expected: expected.tag().to_string(),
                actual: self.domain.tag().to_string(),
            });
        }
        Ok(())
    }
}

/// Checks the full-pipeline panorama shape: width = 3 * height and width
/// divisible by the azimuth bin count.
pub fn validate_pano_dims(width: usize, height: usize) -> Result<()> {
    if width != 3 * height {
        return Err(Error::invalid(format!(
            "panorama must be 3:1, got {width}x{height}"
        )));
    }
    if !width.is_multiple_of(crate::azimuth::BIN_COUNT) {
        return Err(Error::invalid(format!(
            "panorama width {width} must be divisible by {}",
            crate::azimuth::BIN_COUNT
        )));
    }
    Ok(())
}

/// Inverts the display transfer function: `v -> (v / scale)^(1 / exponent)`.
///
/// Input must be a unit-domain panorama with values in [0, 1].
pub fn gamma_decode(p: &Panorama, gamma: &GammaParams) -> Result<Panorama> {
    p.expect_domain(Domain::SrgbUnit)?;
    check_unit_range(p)?;
    let inv = 1.0 / gamma.exponent;
    Ok(p.map(Domain::SrgbUnit, |v| (v / gamma.scale).powf(inv)))
}

/// Applies the display transfer function: `v -> scale * v^exponent`.
pub fn gamma_encode(p: &Panorama, gamma: &GammaParams) -> Result<Panorama> {
    p.expect_domain(Domain::SrgbUnit)?;
    check_unit_range(p)?;
    Ok(p.map(Domain::SrgbUnit, |v| gamma.scale * v.powf(gamma.exponent)))
}

fn check_unit_range(p: &Panorama) -> Result<()> {
    for &v in p.data() {
        if !(0.0..=1.0).contains(&v) || v.is_nan() {
            return Err(Error::invalid(format!(
                "value {v} outside [0, 1] in unit-domain panorama"
            )));
        }
    }
    Ok(())
}

/// Elementwise `ln(max(v, floor))`; the floor keeps zeros finite.
pub fn log_encode(p: &Panorama, floor: f64) -> Result<Panorama> {
    p.expect_domain(Domain::SrgbUnit)?;
    if floor <= 0.0 || floor.is_nan() {
        return Err(Error::invalid(format!("log floor must be positive, got {floor}")));
    }
    Ok(p.map(Domain::LogLinear, |v| v.max(floor).ln()))
}

/// Elementwise `exp`, clamped back to the unit interval.
///
/// Exact inverse of [`log_encode`] for values in [floor, 1].
pub fn log_decode(p: &Panorama) -> Result<Panorama> {
    p.expect_domain(Domain::LogLinear)?;
    Ok(p.map(Domain::SrgbUnit, |v| v.exp().clamp(0.0, 1.0)))
}

/// Rebuilds a unit-domain image from log reflectance plus log shading:
/// `exp(log_r + log_s)` clamped to [0, 1].
pub fn recompose(log_r: &Panorama, log_s: &Panorama) -> Result<Panorama> {
    log_r.expect_domain(Domain::LogLinear)?;
    log_s.expect_domain(Domain::LogLinear)?;
    if log_r.width() != log_s.width() || log_r.height() != log_s.height() {
        return Err(Error::invalid("recompose: shape mismatch"));
    }
    let data = log_r
        .data()
        .iter()
        .zip(log_s.data())
        .map(|(&r, &s)| (r + s).exp().clamp(0.0, 1.0))
        .collect();
    Panorama::from_data(log_r.width(), log_r.height(), Domain::SrgbUnit, data)
}

/// Number of columns a yaw rotation shifts, rounded to the nearest column.
pub fn rotation_columns(width: usize, angle: f64) -> i64 {
    (angle / std::f64::consts::TAU * width as f64).round() as i64
}

/// Rotates the panorama about the vertical axis by `angle` radians, snapped
/// to a whole number of columns. Content at yaw a moves to yaw a + angle.
pub fn rotate_pano(p: &Panorama, angle: f64) -> Panorama {
    let w = p.width();
    let shift = rotation_columns(w, angle).rem_euclid(w as i64) as usize;
    let mut out = Panorama::new(w, p.height(), p.domain());
    for y in 0..p.height() {
        for x in 0..w {
            let src = (x + w - shift) % w;
            let di = (y * w + x) * 3;
            let si = (y * w + src) * 3;
            out.data[di] = p.data[si];
            out.data[di + 1] = p.data[si + 1];
            out.data[di + 2] = p.data[si + 2];
        }
    }
    out
}

/// Box-filter resample to an arbitrary target size (exact area averaging).
pub fn resample_area(p: &Panorama, tw: usize, th: usize) -> Panorama {
    assert!(tw > 0 && th > 0);
    let (sw, sh) = (p.width(), p.height());
    if (sw, sh) == (tw, th) {
        return p.clone();
    }
    let mut out = Panorama::new(tw, th, p.domain());
    let xr = sw as f64 / tw as f64;
    let yr = sh as f64 / th as f64;
    for ty in 0..th {
        let y0 = ty as f64 * yr;
        let y1 = (ty + 1) as f64 * yr;
        for tx in 0..tw {
            let x0 = tx as f64 * xr;
            let x1 = (tx + 1) as f64 * xr;
            let mut acc = [0.0f64; 3];
            let mut area = 0.0;
            let mut sy = y0.floor() as usize;
            while (sy as f64) < y1 && sy < sh {
                let hy = (y1.min(sy as f64 + 1.0) - y0.max(sy as f64)).max(0.0);
                if hy > 0.0 {
                    let mut sx = x0.floor() as usize;
                    while (sx as f64) < x1 && sx < sw {
                        let wx = (x1.min(sx as f64 + 1.0) - x0.max(sx as f64)).max(0.0);
                        if wx > 0.0 {
                            let wgt = hy * wx;
                            let i = (sy * sw + sx) * 3;
                            acc[0] += wgt * p.data[i];
                            acc[1] += wgt * p.data[i + 1];
                            acc[2] += wgt * p.data[i + 2];
                            area += wgt;
                        }
                        sx += 1;
                    }
                }
                sy += 1;
            }
            let i = (ty * tw + tx) * 3;
            out.data[i] = acc[0] / area;
            out.data[i + 1] = acc[1] / area;
            out.data[i + 2] = acc[2] / area;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_pano(w: usize, h: usize) -> Panorama {
        let mut p = Panorama::new(w, h, Domain::SrgbUnit);
        let n = p.data().len();
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v = i as f64 / (n - 1) as f64;
        }
        p
    }

    #[test]
    fn gamma_decode_half() {
        let mut p = Panorama::new(2, 1, Domain::SrgbUnit);
        p.set(0, 0, 0, 0.5);
        let d = gamma_decode(&p, &GammaParams::default()).unwrap();
        // 0.5^2.2 = 0.217637640824031
        assert!((d.get(0, 0, 0) - 0.217637640824031).abs() < 1e-12);
        assert_eq!(d.get(1, 0, 1), 0.0);
    }

    #[test]
    fn gamma_round_trip() {
        let g = GammaParams::default();
        let p = ramp_pano(10, 5);
        let rt = gamma_encode(&gamma_decode(&p, &g).unwrap(), &g).unwrap();
        for (a, b) in p.data().iter().zip(rt.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn gamma_rejects_log_domain() {
        let p = Panorama::new(2, 1, Domain::LogLinear);
        assert!(gamma_decode(&p, &GammaParams::default()).is_err());
    }

    #[test]
    fn gamma_rejects_out_of_range() {
        let mut p = Panorama::new(2, 1, Domain::SrgbUnit);
        p.set(0, 0, 0, 1.5);
        assert!(gamma_decode(&p, &GammaParams::default()).is_err());
    }

    #[test]
    fn log_floor_at_zero() {
        let p = Panorama::new(1, 1, Domain::SrgbUnit);
        let l = log_encode(&p, LOG_FLOOR).unwrap();
        // ln(1/255) = -5.54126354515843
        assert!((l.get(0, 0, 0) - (-5.54126354515843)).abs() < 1e-12);
    }

    #[test]
    fn log_round_trip_above_floor() {
        let p = ramp_pano(6, 2).map(Domain::SrgbUnit, |v| v.max(LOG_FLOOR));
        let rt = log_decode(&log_encode(&p, LOG_FLOOR).unwrap()).unwrap();
        for (a, b) in p.data().iter().zip(rt.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn recompose_inverts_log_split() {
        let p = ramp_pano(9, 3).map(Domain::SrgbUnit, |v| v.max(LOG_FLOOR));
        let log_i = log_encode(&p, LOG_FLOOR).unwrap();
        let mut log_s = Panorama::new(9, 3, Domain::LogLinear);
        for (i, v) in log_s.data_mut().iter_mut().enumerate() {
            *v = -0.3 + 0.01 * (i % 7) as f64;
        }
        let log_r = Panorama::from_data(
            9,
            3,
            Domain::LogLinear,
            log_i.data().iter().zip(log_s.data()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        let re = recompose(&log_r, &log_s).unwrap();
        for (a, b) in p.data().iter().zip(re.data()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn recompose_clamps() {
        let mut log_r = Panorama::new(1, 1, Domain::LogLinear);
        log_r.set(0, 0, 0, 1.0);
        log_r.set(0, 0, 1, 1.0);
        log_r.set(0, 0, 2, 1.0);
        let log_s = Panorama::new(1, 1, Domain::LogLinear);
        let re = recompose(&log_r, &log_s).unwrap();
        assert_eq!(re.get(0, 0, 0), 1.0);
    }

    #[test]
    fn rotate_quarter_turn_shifts_sixty_of_240() {
        let w = 240;
        let mut p = Panorama::new(w, 4, Domain::SrgbUnit);
        p.set(10, 2, 0, 1.0);
        let r = rotate_pano(&p, std::f64::consts::FRAC_PI_2);
        assert_eq!(rotation_columns(w, std::f64::consts::FRAC_PI_2), 60);
        assert_eq!(r.get(70, 2, 0), 1.0);
        assert_eq!(r.get(10, 2, 0), 0.0);
    }

    #[test]
    fn rotate_full_turn_is_identity() {
        let p = ramp_pano(60, 20);
        let r = rotate_pano(&p, std::f64::consts::TAU);
        assert_eq!(p, r);
    }

    #[test]
    fn rotate_composes_cyclically() {
        let p = ramp_pano(120, 40);
        let a = 3.0 * std::f64::consts::TAU / 120.0;
        let b = 7.0 * std::f64::consts::TAU / 120.0;
        let r1 = rotate_pano(&rotate_pano(&p, a), b);
        let r2 = rotate_pano(&p, a + b);
        assert_eq!(r1, r2);
    }

    #[test]
    fn rotate_negative_inverts() {
        let p = ramp_pano(90, 30);
        let a = 11.0 * std::f64::consts::TAU / 90.0;
        let rt = rotate_pano(&rotate_pano(&p, a), -a);
        assert_eq!(p, rt);
    }

    #[test]
    fn resample_halves_by_averaging() {
        let mut p = Panorama::new(4, 2, Domain::SrgbUnit);
        for (i, v) in p.data_mut().iter_mut().enumerate() {
            *v = (i / 3) as f64; // pixel index as value, same across channels
        }
        let r = resample_area(&p, 2, 1);
        // top-left 2x2 block holds pixel values {0,1,4,5}, mean 2.5
        assert!((r.get(0, 0, 0) - 2.5).abs() < 1e-12);
        assert!((r.get(1, 0, 0) - 4.5).abs() < 1e-12);
    }

    #[test]
    fn resample_identity_when_same_size() {
        let p = ramp_pano(12, 4);
        assert_eq!(resample_area(&p, 12, 4), p);
    }

    #[test]
    fn validate_dims_rules() {
        assert!(validate_pano_dims(240, 80).is_ok());
        assert!(validate_pano_dims(241, 80).is_err());
        assert!(validate_pano_dims(96, 32).is_err()); // 96 not divisible by 60
    }
}

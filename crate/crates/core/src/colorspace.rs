//! sRGB, HSL, LMS and MacLeod–Boynton chromaticity.
//!
//! Cone activations are computed as
//!
//! ```text
//! lms = N · HPE · M_srgb · decode(rgb)
//! ```
//!
//! where `decode` is the piecewise sRGB transfer function, `M_srgb` the
//! IEC 61966-2-1 linear-sRGB to XYZ (D65) matrix, `HPE` the
//! Hunt–Pointer–Estévez XYZ to LMS matrix, and `N` a diagonal row scaling
//! chosen so that sRGB white maps to `(1, 1, 1)`. The resulting matrix is
//! exposed as [`rgb_to_lms_matrix`].

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Linear sRGB → CIE XYZ, D65 white.
pub const SRGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.4124564, 0.3575761, 0.1804375],
    [0.2126729, 0.7151522, 0.0721750],
    [0.0193339, 0.1191920, 0.9503041],
];

/// Hunt–Pointer–Estévez XYZ → LMS (equal-energy normalized).
pub const XYZ_TO_LMS_HPE: [[f64; 3]; 3] = [
    [0.38971, 0.68898, -0.07868],
    [-0.22981, 1.18340, 0.04641],
    [0.0, 0.0, 1.0],
];

static RGB_TO_LMS: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| {
    let mut m = [[0.0; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = (0..3).map(|k| XYZ_TO_LMS_HPE[i][k] * SRGB_TO_XYZ[k][j]).sum();
        }
        let white: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= white);
    }
    m
});

/// Linear sRGB → white-normalized LMS.
pub fn rgb_to_lms_matrix() -> &'static [[f64; 3]; 3] {
    &RGB_TO_LMS
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RgbColor {
    pub r: f64,
    pub g: f64,
    pub b: f64,
}

impl RgbColor {
    pub const fn new(r: f64, g: f64, b: f64) -> Self {
        Self { r, g, b }
    }

    pub fn gray(v: f64) -> Self {
        Self::new(v, v, v)
    }

    pub fn is_valid(&self) -> bool {
        [self.r, self.g, self.b]
            .iter()
            .all(|c| (0.0..=1.0).contains(c))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HslColor {
    pub hue: f64,
    pub saturation: f64,
    pub lightness: f64,
}

impl HslColor {
    /// Builds a color with the hue reduced into `[0, 360)`.
    pub fn new(hue: f64, saturation: f64, lightness: f64) -> Self {
        Self {
            hue: normalize_degrees(hue),
            saturation,
            lightness,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmsColor {
    pub l: f64,
    pub m: f64,
    pub s: f64,
}

impl LmsColor {
    pub const fn new(l: f64, m: f64, s: f64) -> Self {
        Self { l, m, s }
    }

    pub const WHITE: LmsColor = LmsColor::new(1.0, 1.0, 1.0);
}

/// Direction in the (scaled) MacLeod–Boynton plane around the white point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChromaticityAngle {
    pub degrees: f64,
    /// Set when the color coincides with the white point, in which case
    /// `degrees` is 0 by convention.
    pub zero_radius: bool,
}

/// Reduces an angle in degrees to `[0, 360)`.
pub fn normalize_degrees(deg: f64) -> f64 {
    let r = deg.rem_euclid(360.0);
    // rem_euclid can round up to exactly 360 for tiny negative inputs
    if r >= 360.0 {
        0.0
    } else {
        r
    }
}

pub fn hsl_to_rgb(c: HslColor) -> RgbColor {
    let h = normalize_degrees(c.hue) / 60.0;
    let s = c.saturation;
    let l = c.lightness;
    let chroma = (1.0 - (2.0 * l - 1.0).abs()) * s;
    let x = chroma * (1.0 - ((h % 2.0) - 1.0).abs());
    let (r1, g1, b1) = match h as u32 {
        0 => (chroma, x, 0.0),
        1 => (x, chroma, 0.0),
        2 => (0.0, chroma, x),
        3 => (0.0, x, chroma),
        4 => (x, 0.0, chroma),
        _ => (chroma, 0.0, x),
    };
    let m = l - chroma / 2.0;
    RgbColor::new(
        (r1 + m).clamp(0.0, 1.0),
        (g1 + m).clamp(0.0, 1.0),
        (b1 + m).clamp(0.0, 1.0),
    )
}

/// Inverse of [`hsl_to_rgb`]. Achromatic colors get hue 0.
pub fn rgb_to_hsl(c: RgbColor) -> HslColor {
    let max = c.r.max(c.g).max(c.b);
    let min = c.r.min(c.g).min(c.b);
    let l = (max + min) / 2.0;
    let d = max - min;
    if d == 0.0 {
        return HslColor::new(0.0, 0.0, l);
    }
    let s = d / (1.0 - (2.0 * l - 1.0).abs());
    let h = if max == c.r {
        60.0 * ((c.g - c.b) / d).rem_euclid(6.0)
    } else if max == c.g {
        60.0 * ((c.b - c.r) / d + 2.0)
    } else {
        60.0 * ((c.r - c.g) / d + 4.0)
    };
    HslColor::new(h, s.min(1.0), l)
}

/// sRGB electro-optical transfer function (gamma decoding).
pub fn srgb_decode(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

pub fn linear_rgb_to_lms(r: f64, g: f64, b: f64) -> LmsColor {
    let m = rgb_to_lms_matrix();
    let dot = |row: &[f64; 3]| row[0] * r + row[1] * g + row[2] * b;
    LmsColor::new(dot(&m[0]), dot(&m[1]), dot(&m[2]))
}

pub fn rgb_to_lms(c: RgbColor) -> LmsColor {
    linear_rgb_to_lms(srgb_decode(c.r), srgb_decode(c.g), srgb_decode(c.b))
}

/// MacLeod–Boynton coordinates `(l/(l+m), s/(l+m))`.
pub fn macleod_boynton(c: LmsColor) -> Result<(f64, f64)> {
    let lum = c.l + c.m;
    if !(lum > 0.0) {
        return Err(Error::Domain(format!(
            "MacLeod-Boynton coordinates undefined for l+m = {lum}"
        )));
    }
    Ok((c.l / lum, c.s / lum))
}

/// Per-axis scale factors that put a stimulus set on a unit circle around
/// the white point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MbScaling {
    pub l_scale: f64,
    pub s_scale: f64,
}

impl MbScaling {
    pub const UNIT: MbScaling = MbScaling {
        l_scale: 1.0,
        s_scale: 1.0,
    };

    /// Maximum absolute deviation from `white` along each axis over `colors`.
    pub fn from_colors(colors: &[LmsColor], white: LmsColor) -> Result<Self> {
        let (wl, ws) = macleod_boynton(white)?;
        let mut l_scale = 0.0f64;
        let mut s_scale = 0.0f64;
        for &c in colors {
            let (l, s) = macleod_boynton(c)?;
            l_scale = l_scale.max((l - wl).abs());
            s_scale = s_scale.max((s - ws).abs());
        }
        if l_scale == 0.0 || s_scale == 0.0 {
            return Err(Error::Domain(
                "stimulus set has no chromatic spread on one MacLeod-Boynton axis".into(),
            ));
        }
        Ok(Self { l_scale, s_scale })
    }
}

pub fn lms_to_chromaticity_angle(
    c: LmsColor,
    white: LmsColor,
    scaling: MbScaling,
) -> Result<ChromaticityAngle> {
    let (l, s) = macleod_boynton(c)?;
    let (wl, ws) = macleod_boynton(white)?;
    let dl = (l - wl) / scaling.l_scale;
    let ds = (s - ws) / scaling.s_scale;
    if dl == 0.0 && ds == 0.0 {
        return Ok(ChromaticityAngle {
            degrees: 0.0,
            zero_radius: true,
        });
    }
    Ok(ChromaticityAngle {
        degrees: normalize_degrees(ds.atan2(dl).to_degrees()),
        zero_radius: false,
    })
}

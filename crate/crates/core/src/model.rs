//! The LGN → V1 → V2 → V4 hierarchy.
//!
//! * LGN: single-opponent combinations of Gaussian-blurred cone planes.
//! * V1, V2: Gaussian pooling of the previous layer, rectified at 0.
//! * V4: hue-selective weighted sums of the four V2 types.
//!
//! Every layer ends with the piecewise-linear [`Rectifier`].

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::{normalize_degrees, rgb_to_lms, RgbColor};
use crate::error::{Error, Result};
use crate::imaging::{convolve, make_gaussian, GaussianKernel, Plane, ReceptiveFieldPlan, RgbImage};

/// Single-opponent type names, in the column order of the V4 weight table.
pub const OPPONENT_TYPES: [&str; 4] = ["L+M-", "L-M+", "S+(L+M)-", "S-(L+M)+"];

/// Hue-selective type names, 60° apart starting from red.
pub const HUE_TYPES: [&str; 6] = ["red", "yellow", "green", "cyan", "blue", "magenta"];

/// Nominal hue of each entry of [`HUE_TYPES`], degrees.
pub const HUE_TYPE_ANGLES: [f64; 6] = [0.0, 60.0, 120.0, 180.0, 240.0, 300.0];

/// Cone weights `(L, M, S)` per opponent type.
pub const CONE_WEIGHTS: [[f64; 3]; 4] = [
    [1.0, -1.0, 0.0],
    [-1.0, 1.0, 0.0],
    [-0.5, -0.5, 1.0],
    [0.5, 0.5, -1.0],
];

/// V2 → V4 weights, rows in [`HUE_TYPES`] order, columns in
/// [`OPPONENT_TYPES`] order.
pub const HUE_WEIGHTS: [[f64; 4]; 6] = [
    [0.85636, 0.00028984, 0.041238, 0.10211],
    [0.38019, 0.022312, 0.0005716, 0.59692],
    [0.031002, 0.31546, 0.012604, 0.64093],
    [0.00038727, 0.68329, 0.2109, 0.10543],
    [0.014012, 0.29034, 0.69225, 0.0034021],
    [0.37948, 0.031779, 0.58531, 0.0034362],
];

/// V2 peak hues (degrees, [`OPPONENT_TYPES`] order) and spread that
/// regenerate [`HUE_WEIGHTS`] through [`derive_v4_weights`].
pub const HUE_WEIGHTS_V2_PEAKS: [f64; 4] = [6.0, 180.0, 249.0, 93.0];
pub const HUE_WEIGHTS_SIGMA: f64 = 45.0;

/// Tolerance on the row sums of user-supplied V4 weights; the shipped table
/// is printed to five significant digits.
pub const WEIGHT_SUM_TOLERANCE: f64 = 1e-3;

/// `φ(P)`: `floor` below, `slope·P + base` in between, `1` above `saturation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Rectifier {
    pub slope: f64,
    pub base: f64,
    pub floor: f64,
    pub saturation: f64,
}

impl Rectifier {
    pub fn new(slope: f64, base: f64, floor: f64, saturation: f64) -> Result<Self> {
        let r = Self {
            slope,
            base,
            floor,
            saturation,
        };
        r.validate()?;
        Ok(r)
    }

    /// Linear over `[-1, 1]`.
    pub const LGN: Rectifier = Rectifier {
        slope: 1.0,
        base: 0.0,
        floor: -1.0,
        saturation: 1.0,
    };

    /// Half-wave rectification clipped at 1.
    pub const POSITIVE: Rectifier = Rectifier {
        slope: 1.0,
        base: 0.0,
        floor: 0.0,
        saturation: 1.0,
    };

    /// Half-wave rectification behind a 0.3 threshold.
    pub const V4: Rectifier = Rectifier {
        slope: 1.0,
        base: -0.3,
        floor: 0.0,
        saturation: 1.0,
    };

    pub fn validate(&self) -> Result<()> {
        let finite = [self.slope, self.base, self.floor, self.saturation]
            .iter()
            .all(|v| v.is_finite());
        if !finite || !(self.floor <= self.saturation && self.saturation <= 1.0) {
            return Err(Error::Config(format!(
                "rectifier needs floor <= saturation <= 1, got {self:?}"
            )));
        }
        Ok(())
    }

    pub fn apply(&self, p: f64) -> f64 {
        let v = self.slope * p + self.base;
        if v < self.floor {
            self.floor
        } else if v <= self.saturation {
            v
        } else {
            // the upper branch returns 1, not `saturation`
            1.0
        }
    }
}

pub fn rectify(r: &Rectifier, p: f64) -> f64 {
    r.apply(p)
}

/// Cone weights, per-cone blur widths (pixels) and output gain of one
/// single-opponent type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpponentWeights {
    pub name: String,
    pub l: f64,
    pub m: f64,
    pub s: f64,
    pub sigma_l: f64,
    pub sigma_m: f64,
    pub sigma_s: f64,
    pub gain: f64,
}

impl OpponentWeights {
    pub fn validate(&self) -> Result<()> {
        let w = [self.l, self.m, self.s];
        if w.iter().all(|&v| v == 0.0) || w.iter().any(|v| !(-1.0..=1.0).contains(v)) {
            return Err(Error::Config(format!(
                "{}: cone weights must lie in [-1, 1] with one nonzero",
                self.name
            )));
        }
        for s in [self.sigma_l, self.sigma_m, self.sigma_s] {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Config(format!("{}: sigma {s} is not positive", self.name)));
            }
        }
        if !(self.gain > 0.0 && self.gain.is_finite()) {
            return Err(Error::Config(format!("{}: gain {} is not positive", self.name, self.gain)));
        }
        Ok(())
    }

    fn cone_response(&self, rgb: RgbColor) -> f64 {
        let c = rgb_to_lms(rgb);
        self.l * c.l + self.m * c.m + self.s * c.s
    }

    /// Largest absolute unscaled response over the corners of the sRGB
    /// cube. A linear response attains its gamut extremes at the corners.
    pub fn gamut_extent(&self) -> f64 {
        (0..8u8)
            .map(|bits| {
                let ch = |i: u8| f64::from((bits >> i) & 1);
                self.cone_response(RgbColor::new(ch(0), ch(1), ch(2))).abs()
            })
            .fold(0.0, f64::max)
    }
}

/// The four single-opponent types with uniform blur and unit gain.
pub fn default_opponent_weights(sigma: f64) -> Vec<OpponentWeights> {
    OPPONENT_TYPES
        .iter()
        .zip(CONE_WEIGHTS)
        .map(|(name, [l, m, s])| OpponentWeights {
            name: name.to_string(),
            l,
            m,
            s,
            sigma_l: sigma,
            sigma_m: sigma,
            sigma_s: sigma,
            gain: 1.0,
        })
        .collect()
}

/// Weights from the four V2 types onto one hue-selective type.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HueSelectiveWeights {
    pub name: String,
    /// `[L+M-, L-M+, S+(L+M)-, S-(L+M)+]`
    pub weights: [f64; 4],
}

impl HueSelectiveWeights {
    pub fn validate(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Config(format!("{}: V4 weights must be nonnegative", self.name)));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > WEIGHT_SUM_TOLERANCE {
            return Err(Error::Config(format!(
                "{}: V4 weights sum to {sum}, expected 1",
                self.name
            )));
        }
        Ok(())
    }
}

pub fn default_hue_weights() -> Vec<HueSelectiveWeights> {
    HUE_TYPES
        .iter()
        .zip(HUE_WEIGHTS)
        .map(|(name, weights)| HueSelectiveWeights {
            name: name.to_string(),
            weights,
        })
        .collect()
}

/// Angle on the hue circle, red at 0°.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct HueAngle(f64);

impl HueAngle {
    pub fn new(deg: f64) -> Self {
        Self(normalize_degrees(deg))
    }

    pub fn degrees(self) -> f64 {
        self.0
    }
}

/// Shorter arc between two hues, in `[0, 180]`.
pub fn hue_distance(a: HueAngle, b: HueAngle) -> f64 {
    let d = (a.0 - b.0).abs();
    d.min(360.0 - d)
}

/// Weights proportional to a zero-mean normal density of the hue distance
/// between `target` and each V2 peak, normalized to sum to 1.
pub fn derive_v4_weights(
    name: &str,
    target: HueAngle,
    v2_peaks: [HueAngle; 4],
    sigma: f64,
) -> Result<HueSelectiveWeights> {
    if !(sigma > 0.0) {
        return Err(Error::Argument(format!("sigma must be positive, got {sigma}")));
    }
    let d = v2_peaks.map(|p| hue_distance(target, p));
    let nearest = d.iter().cloned().fold(f64::INFINITY, f64::min);
    // the density's constant factor cancels in the ratio; shifting by the
    // nearest distance keeps the exponent finite as sigma → 0
    let raw = d.map(|di| (-(di * di - nearest * nearest) / (2.0 * sigma * sigma)).exp());
    let z: f64 = raw.iter().sum();
    Ok(HueSelectiveWeights {
        name: name.to_string(),
        weights: raw.map(|w| w / z),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Layer {
    #[serde(rename = "LGN")]
    Lgn,
    V1,
    V2,
    V4,
}

impl Layer {
    pub const ALL: [Layer; 4] = [Layer::Lgn, Layer::V1, Layer::V2, Layer::V4];

    pub fn name(self) -> &'static str {
        match self {
            Layer::Lgn => "LGN",
            Layer::V1 => "V1",
            Layer::V2 => "V2",
            Layer::V4 => "V4",
        }
    }

    pub fn type_names(self) -> &'static [&'static str] {
        match self {
            Layer::V4 => &HUE_TYPES,
            _ => &OPPONENT_TYPES,
        }
    }

    pub fn parse(s: &str) -> Option<Layer> {
        Layer::ALL.into_iter().find(|l| l.name().eq_ignore_ascii_case(s))
    }
}

impl fmt::Display for Layer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One plane per neuron type of a layer, in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub layer: Layer,
    planes: Vec<(String, Plane)>,
}

impl LayerActivations {
    pub fn new(layer: Layer, planes: Vec<(String, Plane)>) -> Self {
        Self { layer, planes }
    }

    pub fn get(&self, name: &str) -> Option<&Plane> {
        self.planes.iter().find(|(n, _)| n == name).map(|(_, p)| p)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Plane)> {
        self.planes.iter().map(|(n, p)| (n.as_str(), p))
    }

    pub fn names(&self) -> Vec<&str> {
        self.planes.iter().map(|(n, _)| n.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.planes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.planes.is_empty()
    }
}

/// Co-registered L, M and S planes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConeImage {
    pub l: Plane,
    pub m: Plane,
    pub s: Plane,
}

impl ConeImage {
    pub fn from_rgb(img: &RgbImage) -> Self {
        let (w, h) = (img.width(), img.height());
        // runs of equal pixels are common; convert each run once
        let mut last: Option<(RgbColor, crate::colorspace::LmsColor)> = None;
        let cones: Vec<_> = (0..w * h)
            .map(|i| {
                let px = img.pixel(i % w, i / w);
                match last {
                    Some((p, c)) if p == px => c,
                    _ => {
                        let c = rgb_to_lms(px);
                        last = Some((px, c));
                        c
                    }
                }
            })
            .collect();
        let plane = |f: fn(&crate::colorspace::LmsColor) -> f64| {
            Plane::new(w, h, cones.iter().map(f).collect()).expect("finite cone plane")
        };
        Self {
            l: plane(|c| c.l),
            m: plane(|c| c.m),
            s: plane(|c| c.s),
        }
    }

    fn check_shape(&self) -> Result<()> {
        if self.l.same_shape(&self.m) && self.l.same_shape(&self.s) {
            Ok(())
        } else {
            Err(Error::Argument("cone planes are not co-registered".into()))
        }
    }
}

fn weighted_sum(terms: &[(f64, &Plane)]) -> Plane {
    let first = terms[0].1;
    let mut acc = vec![0.0; first.data().len()];
    for &(w, p) in terms {
        if w == 0.0 {
            continue;
        }
        for (a, v) in acc.iter_mut().zip(p.data()) {
            *a += w * v;
        }
    }
    Plane::new(first.width(), first.height(), acc).expect("finite weighted sum")
}

/// Single-opponent LGN responses. `kernel_size` is the LGN receptive field;
/// each cone is blurred with its own sigma from `table`.
pub fn lgn_layer(
    cones: &ConeImage,
    table: &[OpponentWeights],
    kernel_size: usize,
    rect: &Rectifier,
) -> Result<LayerActivations> {
    cones.check_shape()?;
    let mut kernels: BTreeMap<u64, GaussianKernel> = BTreeMap::new();
    for t in table {
        t.validate()?;
        for s in [t.sigma_l, t.sigma_m, t.sigma_s] {
            if let std::collections::btree_map::Entry::Vacant(e) = kernels.entry(s.to_bits()) {
                e.insert(make_gaussian(kernel_size, s)?);
            }
        }
    }
    // blur each (cone, sigma) pair once
    let mut jobs: Vec<(usize, u64)> = table
        .iter()
        .flat_map(|t| [(0, t.sigma_l.to_bits()), (1, t.sigma_m.to_bits()), (2, t.sigma_s.to_bits())])
        .collect();
    jobs.sort_unstable();
    jobs.dedup();
    let sources = [&cones.l, &cones.m, &cones.s];
    let blurred: BTreeMap<(usize, u64), Plane> = jobs
        .par_iter()
        .map(|&(cone, sigma)| ((cone, sigma), convolve(sources[cone], &kernels[&sigma])))
        .collect();

    let planes = table
        .par_iter()
        .map(|t| {
            let sum = weighted_sum(&[
                (t.l, &blurred[&(0, t.sigma_l.to_bits())]),
                (t.m, &blurred[&(1, t.sigma_m.to_bits())]),
                (t.s, &blurred[&(2, t.sigma_s.to_bits())]),
            ]);
            (t.name.clone(), sum.map(|v| rect.apply(t.gain * v)))
        })
        .collect();
    Ok(LayerActivations::new(Layer::Lgn, planes))
}

/// Blurs and rectifies every plane of `input` independently.
pub fn gaussian_layer(
    input: &LayerActivations,
    layer: Layer,
    kernel: &GaussianKernel,
    rect: &Rectifier,
) -> LayerActivations {
    let planes = input
        .planes
        .par_iter()
        .map(|(name, p)| (name.clone(), convolve(p, kernel).map(|v| rect.apply(v))))
        .collect();
    LayerActivations::new(layer, planes)
}

/// Hue-selective responses from the four V2 opponent planes.
pub fn v4_layer(
    v2: &LayerActivations,
    weights: &[HueSelectiveWeights],
    kernel: &GaussianKernel,
    rect: &Rectifier,
) -> Result<LayerActivations> {
    let inputs: Vec<&Plane> = OPPONENT_TYPES
        .iter()
        .map(|name| {
            v2.get(name)
                .ok_or_else(|| Error::Argument(format!("V2 input is missing plane {name}")))
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<Plane> = inputs.par_iter().map(|p| convolve(p, kernel)).collect();
    let planes = weights
        .par_iter()
        .map(|hw| {
            let terms: Vec<(f64, &Plane)> = hw.weights.iter().cloned().zip(&pooled).collect();
            (hw.name.clone(), weighted_sum(&terms).map(|v| rect.apply(v)))
        })
        .collect();
    Ok(LayerActivations::new(Layer::V4, planes))
}

/// How LGN gains are chosen when a weight entry does not set one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainMode {
    /// Scale each type so its extreme response over the sRGB gamut is ±1.
    #[default]
    Gamut,
    /// Unit gain.
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpponentWeightsConfig {
    pub name: String,
    pub l: f64,
    pub m: f64,
    pub s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_l: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Rectifiers {
    pub lgn: Rectifier,
    pub v1: Rectifier,
    pub v2: Rectifier,
    pub v4: Rectifier,
}

impl Default for Rectifiers {
    fn default() -> Self {
        Self {
            lgn: Rectifier::LGN,
            v1: Rectifier::POSITIVE,
            v2: Rectifier::POSITIVE,
            v4: Rectifier::V4,
        }
    }
}

/// Everything that parameterizes the hierarchy. Every field has a default,
/// so a config file only needs the keys it overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub rectifiers: Rectifiers,
    pub kernels: ReceptiveFieldPlan,
    pub lgn_gain: GainMode,
    pub lgn_weights: Vec<OpponentWeightsConfig>,
    pub v4_weights: Vec<HueSelectiveWeights>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            rectifiers: Rectifiers::default(),
            kernels: ReceptiveFieldPlan::default(),
            lgn_gain: GainMode::default(),
            lgn_weights: OPPONENT_TYPES
                .iter()
                .zip(CONE_WEIGHTS)
                .map(|(name, [l, m, s])| OpponentWeightsConfig {
                    name: name.to_string(),
                    l,
                    m,
                    s,
                    sigma_l: None,
                    sigma_m: None,
                    sigma_s: None,
                    gain: None,
                })
                .collect(),
            v4_weights: default_hue_weights(),
        }
    }
}

/// Activations of all four layers for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchy {
    pub lgn: LayerActivations,
    pub v1: LayerActivations,
    pub v2: LayerActivations,
    pub v4: LayerActivations,
}

impl Hierarchy {
    pub fn layer(&self, layer: Layer) -> &LayerActivations {
        match layer {
            Layer::Lgn => &self.lgn,
            Layer::V1 => &self.v1,
            Layer::V2 => &self.v2,
            Layer::V4 => &self.v4,
        }
    }

    pub fn layers(&self) -> [&LayerActivations; 4] {
        [&self.lgn, &self.v1, &self.v2, &self.v4]
    }
}

/// A validated, ready-to-run hierarchy.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    opponents: Vec<OpponentWeights>,
    v1_kernel: GaussianKernel,
    v2_kernel: GaussianKernel,
    v4_kernel: GaussianKernel,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.kernels.validate()?;
        let r = &config.rectifiers;
        for rect in [r.lgn, r.v1, r.v2, r.v4] {
            rect.validate()?;
        }
        if config.lgn_weights.len() != 4 {
            return Err(Error::Config(format!(
                "expected 4 LGN weight rows, got {}",
                config.lgn_weights.len()
            )));
        }
        if config.v4_weights.len() != 6 {
            return Err(Error::Config(format!(
                "expected 6 V4 weight rows, got {}",
                config.v4_weights.len()
            )));
        }
        for hw in &config.v4_weights {
            hw.validate()?;
        }
        let lgn_sigma = config.kernels.lgn.sigma;
        let opponents = config
            .lgn_weights
            .iter()
            .map(|c| {
                let mut w = OpponentWeights {
                    name: c.name.clone(),
                    l: c.l,
                    m: c.m,
                    s: c.s,
                    sigma_l: c.sigma_l.unwrap_or(lgn_sigma),
                    sigma_m: c.sigma_m.unwrap_or(lgn_sigma),
                    sigma_s: c.sigma_s.unwrap_or(lgn_sigma),
                    gain: 1.0,
                };
                w.gain = match (c.gain, config.lgn_gain) {
                    (Some(g), _) => g,
                    (None, GainMode::None) => 1.0,
                    (None, GainMode::Gamut) => {
                        let extent = w.gamut_extent();
                        if extent == 0.0 {
                            return Err(Error::Config(format!(
                                "{}: weights give no response over the gamut",
                                c.name
                            )));
                        }
                        1.0 / extent
                    }
                };
                w.validate()?;
                Ok(w)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            v1_kernel: config.kernels.v1.build()?,
            v2_kernel: config.kernels.v2.build()?,
            v4_kernel: config.kernels.v4.build()?,
            opponents,
            config,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Resolved LGN weights, including sigmas and gains.
    pub fn opponent_weights(&self) -> &[OpponentWeights] {
        &self.opponents
    }

    /// Runs all layers on an image already at working resolution.
    pub fn run_cones(&self, cones: &ConeImage) -> Result<Hierarchy> {
        let r = &self.config.rectifiers;
        let lgn = lgn_layer(cones, &self.opponents, self.config.kernels.lgn.size, &r.lgn)?;
        let v1 = gaussian_layer(&lgn, Layer::V1, &self.v1_kernel, &r.v1);
        let v2 = gaussian_layer(&v1, Layer::V2, &self.v2_kernel, &r.v2);
        let v4 = v4_layer(&v2, &self.config.v4_weights, &self.v4_kernel, &r.v4)?;
        Ok(Hierarchy { lgn, v1, v2, v4 })
    }

    /// Resize to 256×256, convert to cones, then run every layer.
    pub fn run(&self, img: &RgbImage) -> Result<Hierarchy> {
        let img = img.resize_to_standard()?;
        self.run_cones(&ConeImage::from_rgb(&img))
    }

    pub fn run_png(&self, path: &std::path::Path) -> Result<Hierarchy> {
        self.run(&RgbImage::load_png(path)?)
    }
}

impl Default for Model {
    fn default() -> Self {
        Model::new(ModelConfig::default()).expect("default model config is valid")
    }
}

/// Runs the default hierarchy on `img`.
pub fn run_pipeline(img: &RgbImage) -> Result<Hierarchy> {
    Model::default().run(img)
}

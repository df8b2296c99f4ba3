//! Stimuli and the three protocols: hue tuning sweeps, the hue-circle
//! distance correlation, and hue reconstruction from V4 responses.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::{
    hsl_to_rgb, lms_to_chromaticity_angle, normalize_degrees, rgb_to_lms, ChromaticityAngle, HslColor,
    LmsColor, MbScaling, RgbColor,
};
use crate::error::{Error, Result};
use crate::imaging::{write_plane_png, Plane, RgbImage, STANDARD_SIZE};
use crate::model::{
    hue_distance, HueAngle, HueSelectiveWeights, Hierarchy, Layer, Model, HUE_TYPES, HUE_TYPE_ANGLES,
};
use crate::regression::{stepwise_fit, two_sided_p, Dataset, StepwiseModel, StepwiseOptions};

pub const SWEEP_SAMPLES: usize = 60;
pub const SWEEP_STEP_DEG: f64 = 6.0;
pub const DEFAULT_WINDOW: usize = 32;
pub const DEFAULT_INNER_RADIUS: f64 = 60.0;
pub const DEFAULT_OUTER_RADIUS: f64 = 110.0;
pub const DEFAULT_SAMPLES: usize = 500;
pub const DEFAULT_SEED: u64 = 1;

/// Background of the hue-circle stimulus.
pub const MID_GRAY: f64 = 0.5;

/// 256×256 uniform HSL(hue, 1, 0.5).
pub fn full_field_stimulus(hue: f64) -> RgbImage {
    full_field_color(HslColor::new(hue, 1.0, 0.5))
}

pub fn full_field_color(c: HslColor) -> RgbImage {
    RgbImage::uniform(STANDARD_SIZE, STANDARD_SIZE, hsl_to_rgb(c))
}

/// `0, 6, …, 354`
pub fn sweep_hues() -> Vec<f64> {
    (0..SWEEP_SAMPLES).map(|i| i as f64 * SWEEP_STEP_DEG).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningCurve {
    pub name: String,
    pub angles: Vec<ChromaticityAngle>,
    pub responses: Vec<f64>,
}

/// Tuning curves of every type in one layer over the 60-hue sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuningSweep {
    pub layer: Layer,
    pub hsl_hues: Vec<f64>,
    pub mb_angles: Vec<f64>,
    pub scaling: MbScaling,
    pub curves: Vec<TuningCurve>,
}

impl TuningSweep {
    pub fn curve(&self, name: &str) -> Option<&TuningCurve> {
        self.curves.iter().find(|c| c.name == name)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        let mut header = vec!["hsl_hue_deg".to_string(), "mb_angle_deg".to_string()];
        header.extend(self.curves.iter().map(|c| c.name.clone()));
        w.write_record(&header).map_err(csv_err)?;
        for i in 0..self.hsl_hues.len() {
            let mut rec = vec![self.hsl_hues[i].to_string(), self.mb_angles[i].to_string()];
            rec.extend(self.curves.iter().map(|c| c.responses[i].to_string()));
            w.write_record(&rec).map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// MacLeod–Boynton angles of the sweep colors, scaled onto a unit circle.
pub fn sweep_angles(hues: &[f64]) -> Result<(Vec<ChromaticityAngle>, MbScaling)> {
    let cones: Vec<LmsColor> = hues.iter().map(|&h| rgb_to_lms(hsl_to_rgb(HslColor::new(h, 1.0, 0.5)))).collect();
    let white = rgb_to_lms(RgbColor::gray(1.0));
    let scaling = MbScaling::from_colors(&cones, white)?;
    let angles = cones
        .iter()
        .map(|&c| lms_to_chromaticity_angle(c, white, scaling))
        .collect::<Result<_>>()?;
    Ok((angles, scaling))
}

/// Runs the 60-hue sweep once and reads every layer from it.
pub fn tuning_sweep_all(model: &Model, window: usize) -> Result<Vec<TuningSweep>> {
    let hues = sweep_hues();
    let (angles, scaling) = sweep_angles(&hues)?;
    let runs: Vec<Hierarchy> = hues
        .par_iter()
        .map(|&h| model.run(&full_field_stimulus(h)))
        .collect::<Result<_>>()?;
    Ok(Layer::ALL
        .iter()
        .map(|&layer| {
            let names = runs[0].layer(layer).names();
            let curves = names
                .iter()
                .map(|name| TuningCurve {
                    name: name.to_string(),
                    angles: angles.clone(),
                    responses: runs
                        .iter()
                        .map(|h| h.layer(layer).get(name).expect("type present").center_mean(window))
                        .collect(),
                })
                .collect();
            TuningSweep {
                layer,
                hsl_hues: hues.clone(),
                mb_angles: angles.iter().map(|a| a.degrees).collect(),
                scaling,
                curves,
            }
        })
        .collect())
}

pub fn tuning_sweep(model: &Model, layer: Layer, window: usize) -> Result<TuningSweep> {
    let mut all = tuning_sweep_all(model, window)?;
    let i = Layer::ALL.iter().position(|&l| l == layer).expect("known layer");
    Ok(all.swap_remove(i))
}

/// Width in degrees of the contiguous region around the peak where the
/// response stays at or above half the peak, for samples evenly spaced
/// around the full circle. Crossings are linearly interpolated. `None`
/// when the curve has no positive peak.
pub fn half_max_width(responses: &[f64]) -> Option<f64> {
    let n = responses.len();
    let (peak_i, &peak) = responses.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))?;
    if !(peak > 0.0) {
        return None;
    }
    let step = 360.0 / n as f64;
    let half = peak / 2.0;
    // distance in samples from the peak to the first crossing in one direction
    let reach = |dir: isize| -> Option<f64> {
        let mut prev = peak;
        for k in 1..n {
            let idx = (peak_i as isize + dir * k as isize).rem_euclid(n as isize) as usize;
            let v = responses[idx];
            if v < half {
                return Some((k - 1) as f64 + (prev - half) / (prev - v));
            }
            prev = v;
        }
        None
    };
    match (reach(1), reach(-1)) {
        (Some(r), Some(l)) => Some(((r + l) * step).min(360.0)),
        _ => Some(360.0),
    }
}

/// Index of the largest weight.
pub fn dominant_input(w: &HueSelectiveWeights) -> usize {
    w.weights
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .expect("four weights")
}

#[derive(Debug, Clone, PartialEq)]
pub struct HueCircleStimulus {
    pub image: RgbImage,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

/// Polar angle of pixel `(x, y)` about the image center, counterclockwise
/// from 3 o'clock, and its radius.
pub fn polar(x: usize, y: usize, size: usize) -> (f64, f64) {
    let c = (size as f64 - 1.0) / 2.0;
    let dx = x as f64 - c;
    let dy = c - y as f64;
    (normalize_degrees(dy.atan2(dx).to_degrees()), dx.hypot(dy))
}

pub fn hue_circle_stimulus() -> HueCircleStimulus {
    hue_circle_with_radii(DEFAULT_INNER_RADIUS, DEFAULT_OUTER_RADIUS).expect("default radii are valid")
}

/// Annulus whose hue equals the polar angle, on mid-gray.
pub fn hue_circle_with_radii(inner: f64, outer: f64) -> Result<HueCircleStimulus> {
    let limit = STANDARD_SIZE as f64 / 2.0;
    if !(0.0 <= inner && inner < outer && outer <= limit) {
        return Err(Error::Argument(format!(
            "annulus radii must satisfy 0 <= inner < outer <= {limit}, got {inner}/{outer}"
        )));
    }
    let image = RgbImage::from_fn(STANDARD_SIZE, STANDARD_SIZE, |x, y| {
        let (theta, r) = polar(x, y, STANDARD_SIZE);
        if r >= inner && r <= outer {
            hsl_to_rgb(HslColor::new(theta, 1.0, 0.5))
        } else {
            RgbColor::gray(MID_GRAY)
        }
    });
    Ok(HueCircleStimulus {
        image,
        inner_radius: inner,
        outer_radius: outer,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakLocation {
    pub name: String,
    pub x: usize,
    pub y: usize,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub type_a: String,
    pub type_b: String,
    pub hue_distance_deg: f64,
    pub pixel_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationReport {
    pub inner_radius: f64,
    pub outer_radius: f64,
    pub peaks: Vec<PeakLocation>,
    pub pairs: Vec<CorrelationPair>,
    pub r: f64,
    pub p_value: f64,
}

impl CorrelationReport {
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
        w.write_record(["type_a", "type_b", "hue_distance_deg", "pixel_distance"])
            .map_err(csv_err)?;
        for p in &self.pairs {
            w.write_record([
                p.type_a.clone(),
                p.type_b.clone(),
                p.hue_distance_deg.to_string(),
                p.pixel_distance.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Pearson correlation and the two-sided p-value of its t statistic.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    let n = x.len();
    if n != y.len() || n < 3 {
        return Err(Error::Argument(format!("pearson needs two equal series of 3+, got {n} and {}", y.len())));
    }
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Experiment("correlation undefined for a constant series".into()));
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let df = n - 2;
    let p = if r.abs() == 1.0 {
        0.0
    } else {
        two_sided_p(r * (df as f64 / (1.0 - r * r)).sqrt(), df)
    };
    Ok((r, p))
}

/// All unordered pairs of the six hue-selective types.
pub fn type_pairs() -> Vec<(usize, usize)> {
    (0..6).flat_map(|i| (i + 1..6).map(move |j| (i, j))).collect()
}

pub fn correlation_experiment(model: &Model) -> Result<CorrelationReport> {
    correlation_with_stimulus(model, &hue_circle_stimulus())
}

pub fn correlation_with_stimulus(model: &Model, stim: &HueCircleStimulus) -> Result<CorrelationReport> {
    let out = model.run(&stim.image)?;
    let peaks = HUE_TYPES
        .iter()
        .map(|&name| {
            let p = out
                .v4
                .get(name)
                .ok_or_else(|| Error::Experiment(format!("V4 output lacks {name}")))?;
            if p.is_constant() {
                return Err(Error::Experiment(format!("V4 plane {name} is flat; no peak to locate")));
            }
            let (x, y) = p.argmax();
            Ok(PeakLocation {
                name: name.to_string(),
                x,
                y,
                value: p.get(x, y),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let pairs: Vec<CorrelationPair> = type_pairs()
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = (&peaks[i], &peaks[j]);
            CorrelationPair {
                type_a: a.name.clone(),
                type_b: b.name.clone(),
                hue_distance_deg: hue_distance(HueAngle::new(HUE_TYPE_ANGLES[i]), HueAngle::new(HUE_TYPE_ANGLES[j])),
                pixel_distance: (a.x as f64 - b.x as f64).hypot(a.y as f64 - b.y as f64),
            }
        })
        .collect();
    let hd: Vec<f64> = pairs.iter().map(|p| p.hue_distance_deg).collect();
    let pd: Vec<f64> = pairs.iter().map(|p| p.pixel_distance).collect();
    let (r, p_value) = pearson(&hd, &pd)?;
    Ok(CorrelationReport {
        inner_radius: stim.inner_radius,
        outer_radius: stim.outer_radius,
        peaks,
        pairs,
        r,
        p_value,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionSettings {
    pub hue_deg: f64,
    pub samples: usize,
    pub seed: u64,
    pub window: usize,
    pub options: StepwiseOptions,
}

impl ReconstructionSettings {
    pub fn new(hue_deg: f64) -> Self {
        Self {
            hue_deg,
            samples: DEFAULT_SAMPLES,
            seed: DEFAULT_SEED,
            window: DEFAULT_WINDOW,
            options: StepwiseOptions::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionReport {
    pub hue_deg: f64,
    pub target_rad: f64,
    pub samples: usize,
    pub seed: u64,
    pub generator: String,
    pub model: StepwiseModel,
    pub selected_types: Vec<String>,
    /// V4 responses to HSL(hue, 1, 0.5).
    pub canonical_responses: Vec<f64>,
    pub canonical_prediction_rad: f64,
    pub canonical_error_deg: f64,
}

/// Hue in `(0, 360]` as radians, so red is `2π`.
pub fn hue_target_radians(hue_deg: f64) -> Result<f64> {
    if !(hue_deg > 0.0 && hue_deg <= 360.0) {
        return Err(Error::Argument(format!("hue must lie in (0, 360], got {hue_deg}")));
    }
    Ok(hue_deg.to_radians())
}

/// Uniform on the open interval `(0, 1)`.
fn open_unit(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let v: f64 = rng.random();
        if v > 0.0 {
            return v;
        }
    }
}

/// `n` (saturation, lightness) pairs drawn from a ChaCha8 stream seeded
/// with `seed`.
pub fn sample_saturation_lightness(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let s = open_unit(&mut rng);
            let l = open_unit(&mut rng);
            (s, l)
        })
        .collect()
}

fn v4_center_means(model: &Model, c: HslColor, window: usize) -> Result<Vec<f64>> {
    let out = model.run(&full_field_color(c))?;
    Ok(HUE_TYPES
        .iter()
        .map(|n| out.v4.get(n).expect("V4 type present").center_mean(window))
        .collect())
}

/// Fits a stepwise model of the hue from the six V4 responses to `samples`
/// random saturation/lightness variants of one hue.
pub fn reconstruction_experiment(
    model: &Model,
    settings: &ReconstructionSettings,
) -> Result<(Dataset, ReconstructionReport)> {
    let target = hue_target_radians(settings.hue_deg)?;
    if settings.samples <= HUE_TYPES.len() {
        return Err(Error::Argument(format!(
            "need more than {} samples, got {}",
            HUE_TYPES.len(),
            settings.samples
        )));
    }
    let draws = sample_saturation_lightness(settings.samples, settings.seed);
    let rows: Vec<Vec<f64>> = draws
        .par_iter()
        .map(|&(s, l)| v4_center_means(model, HslColor::new(settings.hue_deg, s, l), settings.window))
        .collect::<Result<_>>()?;
    let names: Vec<String> = HUE_TYPES.iter().map(|s| s.to_string()).collect();
    let data = Dataset::from_rows(names, &rows, vec![target; settings.samples])?;
    let fit = stepwise_fit(&data, settings.options)?;
    let canonical = v4_center_means(model, HslColor::new(settings.hue_deg, 1.0, 0.5), settings.window)?;
    let pred = fit.predict(&canonical)?;
    let report = ReconstructionReport {
        hue_deg: settings.hue_deg,
        target_rad: target,
        samples: settings.samples,
        seed: settings.seed,
        generator: "ChaCha8".into(),
        selected_types: fit.selected.iter().map(|&j| HUE_TYPES[j].to_string()).collect(),
        model: fit,
        canonical_responses: canonical,
        canonical_prediction_rad: pred,
        canonical_error_deg: (pred - target).abs().to_degrees(),
    };
    Ok((data, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMapEntry {
    pub layer: Layer,
    #[serde(rename = "type")]
    pub type_name: String,
    pub file: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerMapManifest {
    pub planes: Vec<LayerMapEntry>,
}

pub const LAYER_MAP_MANIFEST: &str = "layer_maps.json";

/// File-name-safe form of a type name: `+` → `p`, `-` → `n`, parentheses
/// dropped.
pub fn file_stem(layer: Layer, type_name: &str) -> String {
    let t: String = type_name
        .chars()
        .filter_map(|c| match c {
            '+' => Some('p'),
            '-' => Some('n'),
            '(' | ')' => None,
            c => Some(c),
        })
        .collect();
    format!("{}_{t}", layer.name())
}

fn write_map(dir: &Path, layer: Layer, name: &str, p: &Plane) -> Result<LayerMapEntry> {
    let file = format!("{}.png", file_stem(layer, name));
    let scale = write_plane_png(p, &dir.join(&file))?;
    Ok(LayerMapEntry {
        layer,
        type_name: name.to_string(),
        file,
        min: scale.min,
        max: scale.max,
    })
}

/// Writes every plane of `h` as grayscale PNG plus a JSON manifest of the
/// min-max scales. Returns the manifest and all written paths.
pub fn emit_layer_maps(h: &Hierarchy, dir: &Path) -> Result<(LayerMapManifest, Vec<PathBuf>)> {
    emit_selected_layer_maps(h, &Layer::ALL, dir)
}

/// As [`emit_layer_maps`], for the listed layers only.
pub fn emit_selected_layer_maps(
    h: &Hierarchy,
    layers: &[Layer],
    dir: &Path,
) -> Result<(LayerMapManifest, Vec<PathBuf>)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let jobs: Vec<(Layer, &str, &Plane)> = h
        .layers()
        .into_iter()
        .filter(|la| layers.contains(&la.layer))
        .flat_map(|la| la.iter().map(move |(n, p)| (la.layer, n, p)))
        .collect();
    let planes = jobs
        .par_iter()
        .map(|&(layer, name, p)| write_map(dir, layer, name, p))
        .collect::<Result<Vec<_>>>()?;
    let manifest = LayerMapManifest { planes };
    let mpath = dir.join(LAYER_MAP_MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&mpath, text + "\n").map_err(|e| Error::io(&mpath, e))?;
    let mut paths: Vec<PathBuf> = manifest
        .planes
        .iter()
        .flat_map(|e| {
            let png = dir.join(&e.file);
            [png.with_extension("txt"), png]
        })
        .collect();
    paths.push(mpath);
    Ok((manifest, paths))
}

//! Activation planes, normalized Gaussian kernels and convolution.

use std::fs;
use std::path::Path;

use image::{GrayImage, ImageBuffer, Luma, Rgb, RgbImage as Rgb8Image};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::colorspace::RgbColor;
use crate::error::{Error, Result};

/// Side length every input is resampled to before entering the model.
pub const STANDARD_SIZE: usize = 256;

/// Row-major scalar field with finite values only.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Argument(format!(
                "plane data has {} values, expected {}x{}",
                data.len(),
                width,
                height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite value {} at index {i}",
                data[i]
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(value.is_finite());
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data).expect("from_fn produced a non-finite value")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Plane) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Applies `f` pointwise. `f` must keep values finite.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Plane {
        let data: Vec<f64> = self.data.iter().map(|&v| f(v)).collect();
        debug_assert!(data.iter().all(|v| v.is_finite()));
        Plane {
            width: self.width,
            height: self.height,
            data,
        }
    }

    /// Pointwise combination of equally shaped planes.
    pub fn zip_with(&self, other: &Plane, f: impl Fn(f64, f64) -> f64) -> Result<Plane> {
        if !self.same_shape(other) {
            return Err(Error::Argument(format!(
                "plane shapes differ: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Plane::new(self.width, self.height, data)
    }

    pub fn is_constant(&self) -> bool {
        match self.data.first() {
            Some(&v) => self.data.iter().all(|&x| x == v),
            None => true,
        }
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Mean over a `size`×`size` window centered in the plane, clipped to
    /// the plane bounds.
    pub fn center_mean(&self, size: usize) -> f64 {
        let w = size.min(self.width).max(1);
        let h = size.min(self.height).max(1);
        let x0 = (self.width - w) / 2;
        let y0 = (self.height - h) / 2;
        let mut acc = 0.0;
        for y in y0..y0 + h {
            acc += self.data[y * self.width + x0..y * self.width + x0 + w]
                .iter()
                .sum::<f64>();
        }
        acc / (w * h) as f64
    }

    /// Location `(x, y)` of the maximum; ties resolve to the smallest
    /// row-major index.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        (best % self.width, best / self.width)
    }
}

/// Normalized, isotropic, odd-sized Gaussian kernel.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    size: usize,
    sigma: f64,
    taps: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussianKernel {
    pub fn size(&self) -> usize {
        self.size
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn radius(&self) -> usize {
        self.size / 2
    }

    /// One-dimensional factor; the 2-D kernel is its outer product.
    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    /// Row-major `size`×`size` weights.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, dx: usize, dy: usize) -> f64 {
        self.weights[dy * self.size + dx]
    }
}

pub fn make_gaussian(size: usize, sigma: f64) -> Result<GaussianKernel> {
    if size == 0 || size % 2 == 0 {
        return Err(Error::Argument(format!(
            "kernel size must be odd and positive, got {size}"
        )));
    }
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::Argument(format!(
            "kernel sigma must be positive and finite, got {sigma}"
        )));
    }
    let r = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let taps: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let weights = taps
        .iter()
        .flat_map(|&a| taps.iter().map(move |&b| a * b))
        .collect();
    Ok(GaussianKernel {
        size,
        sigma,
        taps,
        weights,
    })
}

/// Same-size convolution with edge replication.
///
/// Uses the separable factorization of the kernel; constant planes are
/// returned unchanged since a normalized kernel maps them to themselves.
pub fn convolve(p: &Plane, k: &GaussianKernel) -> Plane {
    if p.is_constant() || k.size == 1 {
        return p.clone();
    }
    let (w, h) = (p.width, p.height);
    let r = k.radius();
    let taps = &k.taps;

    let mut rows = vec![0.0; w * h];
    rows.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let src = &p.data[y * w..(y + 1) * w];
        let padded: Vec<f64> = (0..w + 2 * r)
            .map(|i| src[i.saturating_sub(r).min(w - 1)])
            .collect();
        for (x, o) in out.iter_mut().enumerate() {
            *o = taps
                .iter()
                .zip(&padded[x..x + k.size])
                .map(|(t, v)| t * v)
                .sum();
        }
    });

    let mut data = vec![0.0; w * h];
    data.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        for (j, &t) in taps.iter().enumerate() {
            let sy = (y + j).saturating_sub(r).min(h - 1);
            let src = &rows[sy * w..(sy + 1) * w];
            for (o, &v) in out.iter_mut().zip(src) {
                *o += t * v;
            }
        }
    });
    Plane {
        width: w,
        height: h,
        data,
    }
}

/// Bilinear resampling with pixel-center alignment.
pub fn resize(p: &Plane, width: usize, height: usize) -> Result<Plane> {
    if p.width == 0 || p.height == 0 || width == 0 || height == 0 {
        return Err(Error::Argument("cannot resize an empty plane".into()));
    }
    if p.width == width && p.height == height {
        return Ok(p.clone());
    }
    let sx = p.width as f64 / width as f64;
    let sy = p.height as f64 / height as f64;
    let coord = |dst: usize, scale: f64, len: usize| {
        let s = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
        let i0 = s.floor() as usize;
        let i1 = (i0 + 1).min(len - 1);
        (i0, i1, s - i0 as f64)
    };
    let xs: Vec<_> = (0..width).map(|x| coord(x, sx, p.width)).collect();
    let mut data = Vec::with_capacity(width * height);
    for y in 0..height {
        let (y0, y1, fy) = coord(y, sy, p.height);
        for &(x0, x1, fx) in &xs {
            let top = p.get(x0, y0) * (1.0 - fx) + p.get(x1, y0) * fx;
            let bottom = p.get(x0, y1) * (1.0 - fx) + p.get(x1, y1) * fx;
            data.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    Plane::new(width, height, data)
}

pub fn resize_to_standard(p: &Plane) -> Result<Plane> {
    resize(p, STANDARD_SIZE, STANDARD_SIZE)
}

/// Kernel geometry of one layer. In config files `sigma` may be omitted,
/// in which case it is `size / 6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "LayerKernelSpec")]
pub struct LayerKernel {
    pub size: usize,
    pub sigma: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LayerKernelSpec {
    size: usize,
    sigma: Option<f64>,
}

impl From<LayerKernelSpec> for LayerKernel {
    fn from(s: LayerKernelSpec) -> Self {
        match s.sigma {
            Some(sigma) => Self { size: s.size, sigma },
            None => Self::with_default_sigma(s.size),
        }
    }
}

impl LayerKernel {
    /// `sigma = size / 6` puts ±3σ inside the kernel support.
    pub fn with_default_sigma(size: usize) -> Self {
        Self {
            size,
            sigma: size as f64 / 6.0,
        }
    }

    pub fn build(&self) -> Result<GaussianKernel> {
        make_gaussian(self.size, self.sigma)
    }
}

/// Receptive-field sizes per layer, doubling from LGN to V4.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReceptiveFieldPlan {
    pub lgn: LayerKernel,
    pub v1: LayerKernel,
    pub v2: LayerKernel,
    pub v4: LayerKernel,
}

/// Nominal receptive-field sizes in pixels for LGN, V1, V2 and V4.
pub const NOMINAL_FIELD_SIZES: [usize; 4] = [19, 38, 76, 152];

impl Default for ReceptiveFieldPlan {
    fn default() -> Self {
        let odd = |s: usize| if s % 2 == 0 { s + 1 } else { s };
        let [lgn, v1, v2, v4] = NOMINAL_FIELD_SIZES.map(|s| LayerKernel::with_default_sigma(odd(s)));
        Self { lgn, v1, v2, v4 }
    }
}

impl ReceptiveFieldPlan {
    pub fn layers(&self) -> [LayerKernel; 4] {
        [self.lgn, self.v1, self.v2, self.v4]
    }

    pub fn validate(&self) -> Result<()> {
        let layers = self.layers();
        for k in &layers {
            if k.size % 2 == 0 {
                return Err(Error::Config(format!("kernel size {} is not odd", k.size)));
            }
            if !(k.sigma > 0.0) {
                return Err(Error::Config(format!("kernel sigma {} is not positive", k.sigma)));
            }
        }
        for pair in layers.windows(2) {
            let (a, b) = (pair[0].size, pair[1].size);
            if b + 1 < 2 * a || b > 2 * a + 1 {
                return Err(Error::Config(format!(
                    "kernel sizes {a} -> {b} do not double layer to layer"
                )));
            }
        }
        Ok(())
    }
}

/// Three co-registered channel planes with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub r: Plane,
    pub g: Plane,
    pub b: Plane,
}

impl RgbImage {
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> RgbColor) -> Self {
        let pixels: Vec<RgbColor> = (0..height)
            .flat_map(|y| (0..width).map(move |x| (x, y)))
            .map(|(x, y)| f(x, y))
            .collect();
        let channel = |g: fn(&RgbColor) -> f64| {
            Plane::new(width, height, pixels.iter().map(g).collect()).expect("finite channel")
        };
        Self {
            r: channel(|c| c.r),
            g: channel(|c| c.g),
            b: channel(|c| c.b),
        }
    }

    pub fn uniform(width: usize, height: usize, c: RgbColor) -> Self {
        Self {
            r: Plane::filled(width, height, c.r),
            g: Plane::filled(width, height, c.g),
            b: Plane::filled(width, height, c.b),
        }
    }

    pub fn width(&self) -> usize {
        self.r.width
    }

    pub fn height(&self) -> usize {
        self.r.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> RgbColor {
        RgbColor::new(self.r.get(x, y), self.g.get(x, y), self.b.get(x, y))
    }

    pub fn resize_to_standard(&self) -> Result<RgbImage> {
        Ok(RgbImage {
            r: resize_to_standard(&self.r)?,
            g: resize_to_standard(&self.g)?,
            b: resize_to_standard(&self.b)?,
        })
    }

    pub fn load_png(path: &Path) -> Result<RgbImage> {
        let img = image::open(path)
            .map_err(|source| Error::Image {
                path: path.to_path_buf(),
                source,
            })?
            .into_rgb8();
        let (w, h) = (img.width() as usize, img.height() as usize);
        if w == 0 || h == 0 {
            return Err(Error::Argument(format!("{}: empty image", path.display())));
        }
        Ok(RgbImage::from_fn(w, h, |x, y| {
            let Rgb([r, g, b]) = *img.get_pixel(x as u32, y as u32);
            RgbColor::new(r as f64 / 255.0, g as f64 / 255.0, b as f64 / 255.0)
        }))
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        let q = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let img: Rgb8Image = ImageBuffer::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            let c = self.pixel(x as usize, y as usize);
            Rgb([q(c.r), q(c.g), q(c.b)])
        });
        img.save(path).map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
    }
}

/// Min/max used to map a plane onto 8-bit gray.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlaneScale {
    pub min: f64,
    pub max: f64,
}

/// Writes `p` as 8-bit grayscale, minimum black and maximum white, and a
/// sidecar `<stem>.txt` holding the scale. A flat plane is written black.
pub fn write_plane_png(p: &Plane, path: &Path) -> Result<PlaneScale> {
    let (min, max) = p.min_max();
    let span = max - min;
    let img: GrayImage = ImageBuffer::from_fn(p.width as u32, p.height as u32, |x, y| {
        let v = p.get(x as usize, y as usize);
        let g = if span > 0.0 {
            ((v - min) / span * 255.0).round() as u8
        } else {
            0
        };
        Luma([g])
    });
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?;
    let sidecar = path.with_extension("txt");
    fs::write(&sidecar, format!("min {min}\nmax {max}\n")).map_err(|e| Error::io(&sidecar, e))?;
    Ok(PlaneScale { min, max })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // brute-force sample-and-normalize oracle over the full 2-D grid
    fn oracle_kernel(size: usize, sigma: f64) -> Vec<f64> {
        let r = (size / 2) as f64;
        let mut w = Vec::new();
        for y in 0..size {
            for x in 0..size {
                let (dx, dy) = (x as f64 - r, y as f64 - r);
                w.push((-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp());
            }
        }
        let s: f64 = w.iter().sum();
        w.iter().map(|v| v / s).collect()
    }

    #[test]
    fn unit_kernel() {
        let k = make_gaussian(1, 0.7).unwrap();
        assert_eq!(k.weights(), &[1.0]);
    }

    #[test]
    fn flat_limit() {
        let k = make_gaussian(3, 1e12).unwrap();
        for &w in k.weights() {
            assert!((w - 1.0 / 9.0).abs() < 1e-15);
        }
    }

    #[test]
    fn lgn_kernel_matches_oracle() {
        let k = make_gaussian(19, 3.17).unwrap();
        let o = oracle_kernel(19, 3.17);
        assert!((k.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for (a, b) in k.weights().iter().zip(&o) {
            assert!((a - b).abs() < 1e-15);
        }
        // center weight frozen from the oracle
        assert!((k.weight(9, 9) - o[9 * 19 + 9]).abs() < 1e-16);
        assert!((k.weight(9, 9) - 0.015_921_321_091_420_613).abs() < 1e-15);
    }

    #[test]
    fn kernel_symmetry_and_decay() {
        let k = make_gaussian(11, 2.0).unwrap();
        let n = k.size();
        for y in 0..n {
            for x in 0..n {
                let w = k.weight(x, y);
                assert!(w > 0.0);
                assert_eq!(w, k.weight(n - 1 - x, y));
                assert_eq!(w, k.weight(x, n - 1 - y));
                assert!((w - k.weight(y, x)).abs() < 1e-18);
            }
        }
        for x in k.radius()..n - 1 {
            assert!(k.weight(x + 1, k.radius()) < k.weight(x, k.radius()));
        }
    }

    #[test]
    fn bad_kernel_arguments() {
        assert!(make_gaussian(0, 1.0).is_err());
        assert!(make_gaussian(4, 1.0).is_err());
        assert!(make_gaussian(5, 0.0).is_err());
        assert!(make_gaussian(5, -1.0).is_err());
    }

    #[test]
    fn constants_survive_convolution() {
        let p = Plane::filled(20, 13, 0.37);
        let k = make_gaussian(9, 2.0).unwrap();
        assert_eq!(convolve(&p, &k), p);
    }

    #[test]
    fn impulse_imprints_kernel() {
        let n = 21;
        let p = Plane::from_fn(n, n, |x, y| if x == 10 && y == 10 { 1.0 } else { 0.0 });
        let k = make_gaussian(7, 1.5).unwrap();
        let out = convolve(&p, &k);
        for y in 0..n {
            for x in 0..n {
                let (dx, dy) = (x as isize - 10 + 3, y as isize - 10 + 3);
                let expect = if (0..7).contains(&dx) && (0..7).contains(&dy) {
                    k.weight(dx as usize, dy as usize)
                } else {
                    0.0
                };
                assert!((out.get(x, y) - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn convolution_preserves_mean_for_interior_mass() {
        let n = 40;
        let p = Plane::from_fn(n, n, |x, y| if (15..25).contains(&x) && (15..25).contains(&y) { 1.0 } else { 0.0 });
        let k = make_gaussian(5, 1.0).unwrap();
        assert!((convolve(&p, &k).mean() - p.mean()).abs() < 1e-12);
    }

    #[test]
    fn resize_identity_and_constants() {
        let p = Plane::from_fn(256, 256, |x, y| ((x * 7 + y * 3) % 11) as f64);
        assert_eq!(resize_to_standard(&p).unwrap(), p);
        let c = Plane::filled(512, 512, 0.25);
        let r = resize_to_standard(&c).unwrap();
        assert_eq!((r.width(), r.height()), (256, 256));
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn upscale_rows_are_monotone() {
        let p = Plane::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_to_standard(&p).unwrap();
        for y in 0..256 {
            for x in 0..255 {
                assert!(r.get(x + 1, y) >= r.get(x, y));
            }
        }
        assert!(r.get(255, 0) > r.get(0, 0));
    }

    #[test]
    fn resize_rejects_empty() {
        let p = Plane::new(0, 0, vec![]).unwrap();
        assert!(matches!(resize_to_standard(&p), Err(Error::Argument(_))));
    }

    #[test]
    fn plane_rejects_bad_data() {
        assert!(Plane::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Plane::new(1, 1, vec![f64::NAN]).is_err());
    }

    #[test]
    fn default_plan_rounds_to_odd_and_doubles() {
        let plan = ReceptiveFieldPlan::default();
        assert_eq!(plan.layers().map(|k| k.size), [19, 39, 77, 153]);
        plan.validate().unwrap();
        let mut bad = plan;
        bad.v2.size = 101;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn argmax_ties_pick_first() {
        let p = Plane::new(3, 2, vec![0.0, 2.0, 1.0, 2.0, 0.0, 2.0]).unwrap();
        assert_eq!(p.argmax(), (1, 0));
    }

    #[test]
    fn flat_plane_png_is_black() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("zero.png");
        let scale = write_plane_png(&Plane::filled(4, 4, 0.0), &path).unwrap();
        assert_eq!(scale, PlaneScale { min: 0.0, max: 0.0 });
        let img = image::open(&path).unwrap().into_luma8();
        assert!(img.pixels().all(|p| p.0[0] == 0));
        let side = fs::read_to_string(path.with_extension("txt")).unwrap();
        assert_eq!(side, "min 0\nmax 0\n");
    }

    proptest! {
        #[test]
        fn convolution_is_monotone(
            base in proptest::collection::vec(-1.0f64..1.0, 64),
            bump in proptest::collection::vec(0.0f64..1.0, 64),
        ) {
            let p = Plane::new(8, 8, base.clone()).unwrap();
            let q = Plane::new(8, 8, base.iter().zip(&bump).map(|(a, b)| a + b).collect()).unwrap();
            let k = make_gaussian(5, 1.3).unwrap();
            let (cp, cq) = (convolve(&p, &k), convolve(&q, &k));
            for (a, b) in cp.data().iter().zip(cq.data()) {
                prop_assert!(a <= &(b + 1e-15));
            }
        }
    }
}

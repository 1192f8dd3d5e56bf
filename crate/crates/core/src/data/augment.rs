use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::diffarray::Array4;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentSpec {
    pub hflip_p: f64,
    pub vflip_p: f64,
    /// Maximum absolute rotation in degrees.
    pub rotate_deg: f64,
    /// Maximum relative isotropic scale change.
    pub scale: f64,
    /// Maximum additive brightness shift.
    pub brightness: f64,
    /// Maximum relative contrast change.
    pub contrast: f64,
    /// Elastic displacement magnitude in pixels; zero disables.
    pub elastic_alpha: f64,
    /// Gaussian smoothing of the elastic field in pixels.
    pub elastic_sigma: f64,
    pub seed: u64,
}

impl Default for AugmentSpec {
    fn default() -> Self {
        AugmentSpec {
            hflip_p: 0.5,
            vflip_p: 0.5,
            rotate_deg: 30.0,
            scale: 0.15,
            brightness: 0.1,
            contrast: 0.1,
            elastic_alpha: 10.0,
            elastic_sigma: 4.0,
            seed: 0,
        }
    }
}

impl AugmentSpec {
    /// Spec under which [`augment`] returns its input unchanged.
    pub fn identity() -> Self {
        AugmentSpec {
            hflip_p: 0.0,
            vflip_p: 0.0,
            rotate_deg: 0.0,
            scale: 0.0,
            brightness: 0.0,
            contrast: 0.0,
            elastic_alpha: 0.0,
            elastic_sigma: 4.0,
            seed: 0,
        }
    }
}

/// Uniform draw in `[-r, r]`; always consumes one value.
fn symmetric(rng: &mut impl Rng, r: f64) -> f64 {
    (2.0 * rng.random::<f64>() - 1.0) * r
}

/// Concrete parameters drawn for one sample.
#[derive(Clone, Debug, PartialEq)]
pub struct AugmentDraw {
    pub hflip: bool,
    pub vflip: bool,
    pub angle_deg: f64,
    pub scale: f64,
    pub brightness: f64,
    pub contrast: f64,
    /// Per-pixel displacement `(dx, dy)`, empty when disabled.
    pub field: Vec<(f64, f64)>,
}

impl AugmentDraw {
    pub fn sample(spec: &AugmentSpec, h: usize, w: usize, rng: &mut impl Rng) -> Self {
        let hflip = rng.random::<f64>() < spec.hflip_p;
        let vflip = rng.random::<f64>() < spec.vflip_p;
        let angle_deg = symmetric(rng, spec.rotate_deg);
        let scale = 1.0 + symmetric(rng, spec.scale);
        let brightness = symmetric(rng, spec.brightness);
        let contrast = 1.0 + symmetric(rng, spec.contrast);
        let field = if spec.elastic_alpha > 0.0 {
            elastic_field(h, w, spec.elastic_alpha, spec.elastic_sigma, rng)
        } else {
            Vec::new()
        };
        AugmentDraw {
            hflip,
            vflip,
            angle_deg,
            scale,
            brightness,
            contrast,
            field,
        }
    }
}

fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil().max(1.0) as isize;
    let k: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable blur with clamp-to-edge borders.
fn blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * src[y * w + clamp(x as isize + i as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(i, kv)| kv * tmp[clamp(y as isize + i as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Smoothed uniform noise scaled by `alpha`.
fn elastic_field(h: usize, w: usize, alpha: f64, sigma: f64, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let dx: Vec<f64> = (0..h * w).map(|_| symmetric(rng, 1.0)).collect();
    let dy: Vec<f64> = (0..h * w).map(|_| symmetric(rng, 1.0)).collect();
    let (dx, dy) = (blur(&dx, h, w, sigma), blur(&dy, h, w, sigma));
    dx.into_iter().zip(dy).map(|(a, b)| (alpha * a, alpha * b)).collect()
}

/// Bilinear lookup with clamp-to-edge.
fn bilinear(plane: &[f32], h: usize, w: usize, x: f64, y: f64) -> f32 {
    let x = x.clamp(0.0, (w - 1) as f64);
    let y = y.clamp(0.0, (h - 1) as f64);
    let (x0, y0) = (x.floor() as usize, y.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(w - 1), (y0 + 1).min(h - 1));
    let (fx, fy) = (x - x0 as f64, y - y0 as f64);
    let at = |yy: usize, xx: usize| plane[yy * w + xx] as f64;
    let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
    let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
    (top * (1.0 - fy) + bottom * fy) as f32
}

/// Resample every plane: output pixel `(x, y)` reads input at `source(x, y)`.
fn remap(a: &Array4<f32>, source: impl Fn(usize, usize) -> (f64, f64)) -> Array4<f32> {
    let s = a.shape();
    let plane = s.plane();
    let coords: Vec<(f64, f64)> = (0..plane).map(|i| source(i % s.w, i / s.w)).collect();
    let mut out = Array4::zeros(s);
    for n in 0..s.n {
        for c in 0..s.c {
            let off = (n * s.c + c) * plane;
            let src = &a.data()[off..off + plane];
            let dst = &mut out.data_mut()[off..off + plane];
            for (d, &(x, y)) in dst.iter_mut().zip(&coords) {
                *d = bilinear(src, s.h, s.w, x, y);
            }
        }
    }
    out
}

/// Rotate by `angle_deg` and scale by `scale` about the image centre.
///
/// A point `p` moves to `c + scale * R(angle) (p - c)`, where `R` acts on
/// `(x, y)` pixel coordinates with `y` pointing down.
pub fn warp_affine(a: &Array4<f32>, angle_deg: f64, scale: f64) -> Array4<f32> {
    let s = a.shape();
    let (cx, cy) = ((s.w as f64 - 1.0) / 2.0, (s.h as f64 - 1.0) / 2.0);
    remap(a, |x, y| affine_source(x as f64, y as f64, cx, cy, angle_deg, scale))
}

pub fn warp_elastic(a: &Array4<f32>, field: &[(f64, f64)]) -> Array4<f32> {
    let w = a.shape().w;
    remap(a, |x, y| {
        let (dx, dy) = field[y * w + x];
        (x as f64 + dx, y as f64 + dy)
    })
}

fn binarize(m: Array4<f32>) -> Array4<f32> {
    m.map(|v| if v >= 0.5 { 1.0 } else { 0.0 })
}

fn affine_source(x: f64, y: f64, cx: f64, cy: f64, angle_deg: f64, scale: f64) -> (f64, f64) {
    let (sin, cos) = angle_deg.to_radians().sin_cos();
    let (dx, dy) = ((x - cx) / scale, (y - cy) / scale);
    (cx + cos * dx + sin * dy, cy - sin * dx + cos * dy)
}

impl AugmentDraw {
    fn is_geometric(&self) -> bool {
        self.hflip || self.vflip || self.angle_deg != 0.0 || self.scale != 1.0 || !self.field.is_empty()
    }

    /// Input coordinate read by output pixel `(x, y)` after flips, affine
    /// and elastic warps, composed so each pixel is interpolated once.
    pub fn source(&self, x: usize, y: usize, h: usize, w: usize) -> (f64, f64) {
        let (mut sx, mut sy) = (x as f64, y as f64);
        if !self.field.is_empty() {
            let (dx, dy) = self.field[y * w + x];
            sx = (sx + dx).clamp(0.0, (w - 1) as f64);
            sy = (sy + dy).clamp(0.0, (h - 1) as f64);
        }
        if self.angle_deg != 0.0 || self.scale != 1.0 {
            let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
            (sx, sy) = affine_source(sx, sy, cx, cy, self.angle_deg, self.scale);
            sx = sx.clamp(0.0, (w - 1) as f64);
            sy = sy.clamp(0.0, (h - 1) as f64);
        }
        if self.vflip {
            sy = (h - 1) as f64 - sy;
        }
        if self.hflip {
            sx = (w - 1) as f64 - sx;
        }
        (sx, sy)
    }
}

/// Apply a drawn transform. Geometry is shared by image and mask; photometric
/// jitter touches only the image.
pub fn apply(sample: &Sample, d: &AugmentDraw) -> Sample {
    let mut image = sample.image.clone();
    let mut mask = sample.mask.clone();
    if d.is_geometric() {
        let s = image.shape();
        let source = |x, y| d.source(x, y, s.h, s.w);
        image = remap(&image, source);
        mask = binarize(remap(&mask, source));
    }
    if d.brightness != 0.0 || d.contrast != 1.0 {
        let mean = image.data().iter().map(|&v| v as f64).sum::<f64>() / image.shape().len() as f64;
        image = image.map(|v| (((v as f64 - mean) * d.contrast + mean + d.brightness).clamp(0.0, 1.0)) as f32);
    }
    Sample {
        id: sample.id.clone(),
        image,
        mask,
        meta: sample.meta,
    }
}

/// Augment one sample with a stream derived from `spec.seed`, `stream` and
/// the sample id.
pub fn augment(sample: &Sample, spec: &AugmentSpec, stream: u64) -> Sample {
    let s = sample.image.shape();
    let mut rng = seed::rng(seed::derive_str(
        seed::derive(spec.seed, "augment", &[stream]),
        "sample",
        &sample.id,
    ));
    let d = AugmentDraw::sample(spec, s.h, s.w, &mut rng);
    apply(sample, &d)
}

use std::f64::consts::PI;

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::data::{AgeGroup, Gender, Meta, Region, Sample, SkinTone};
use crate::diffarray::{Array4, Shape};
use crate::error::{Error, Result};
use crate::seed;

const LIGHT_BASE: [f64; 3] = [0.87, 0.70, 0.60];
const DARK_BASE: [f64; 3] = [0.50, 0.34, 0.25];
const MIN_AREA: f64 = 0.03;
const MAX_AREA: f64 = 0.25;

/// Multi-octave value noise on a lattice, smoothly interpolated, in `[0, 1]`.
fn value_noise(side: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; side * side];
    let mut amp_total = 0.0;
    for (cells, amp) in [(4usize, 0.5), (8, 0.3), (16, 0.2)] {
        let lattice: Vec<f64> = (0..(cells + 1) * (cells + 1)).map(|_| rng.random::<f64>()).collect();
        let at = |gx: usize, gy: usize| lattice[gy * (cells + 1) + gx];
        for y in 0..side {
            let fy = y as f64 / side as f64 * cells as f64;
            let (gy, ty) = (fy.floor() as usize, fy.fract());
            let sy = ty * ty * (3.0 - 2.0 * ty);
            for x in 0..side {
                let fx = x as f64 / side as f64 * cells as f64;
                let (gx, tx) = (fx.floor() as usize, fx.fract());
                let sx = tx * tx * (3.0 - 2.0 * tx);
                let top = at(gx, gy) * (1.0 - sx) + at(gx + 1, gy) * sx;
                let bottom = at(gx, gy + 1) * (1.0 - sx) + at(gx + 1, gy + 1) * sx;
                out[y * side + x] += amp * (top * (1.0 - sy) + bottom * sy);
            }
        }
        amp_total += amp;
    }
    out.iter_mut().for_each(|v| *v /= amp_total);
    out
}

/// Irregular ellipse: radius modulated by low harmonics of the polar angle.
struct Blob {
    cx: f64,
    cy: f64,
    rx: f64,
    ry: f64,
    theta: f64,
    harmonics: [(f64, f64); 3],
}

impl Blob {
    fn random(side: usize, rng: &mut impl Rng) -> Self {
        let s = side as f64;
        let area = rng.random_range(MIN_AREA..MAX_AREA) * s * s;
        let aspect = rng.random_range(0.6..1.0);
        let rx = (area / (PI * aspect)).sqrt();
        let ry = rx * aspect;
        let margin = rx.max(ry) * 0.6;
        Blob {
            cx: rng.random_range(margin..s - margin),
            cy: rng.random_range(margin..s - margin),
            rx,
            ry,
            theta: rng.random_range(0.0..PI),
            harmonics: [
                (rng.random_range(0.0..0.12), rng.random_range(0.0..2.0 * PI)),
                (rng.random_range(0.0..0.08), rng.random_range(0.0..2.0 * PI)),
                (rng.random_range(0.0..0.05), rng.random_range(0.0..2.0 * PI)),
            ],
        }
    }

    /// Normalised radial distance; `< 1` inside.
    fn level(&self, x: f64, y: f64) -> f64 {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let (c, s) = (self.theta.cos(), self.theta.sin());
        let u = (dx * c + dy * s) / self.rx;
        let v = (-dx * s + dy * c) / self.ry;
        let phi = v.atan2(u);
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, &(a, p))| a * ((k as f64 + 2.0) * phi + p).cos())
            .sum();
        (u * u + v * v).sqrt() / (1.0 + wobble)
    }
}

fn quantise(v: f64) -> f32 {
    ((v.clamp(0.0, 1.0) * 255.0).round() / 255.0) as f32
}

fn one(id: String, side: usize, rng: &mut impl Rng) -> Result<Sample> {
    let tone = *SkinTone::ALL.choose(rng).unwrap();
    let meta = Meta::complete(
        *Region::ALL.choose(rng).unwrap(),
        tone,
        *Gender::ALL.choose(rng).unwrap(),
        *AgeGroup::ALL.choose(rng).unwrap(),
    );
    let base = match tone {
        SkinTone::Light => LIGHT_BASE,
        SkinTone::Dark => DARK_BASE,
    };
    let jitter: [f64; 3] = std::array::from_fn(|_| rng.random_range(-0.04..0.04));
    let skin = value_noise(side, rng);
    let spots = value_noise(side, rng);
    let darken = rng.random_range(0.35..0.55);
    let blob = loop {
        let b = Blob::random(side, rng);
        let inside = (0..side * side)
            .filter(|i| b.level((i % side) as f64 + 0.5, (i / side) as f64 + 0.5) < 1.0)
            .count() as f64
            / (side * side) as f64;
        if (0.01..=0.40).contains(&inside) {
            break b;
        }
    };
    let shape = Shape::new(1, 1, side, side);
    let mask = Array4::from_fn(shape, |_, _, y, x| {
        if blob.level(x as f64 + 0.5, y as f64 + 0.5) < 1.0 {
            1.0
        } else {
            0.0
        }
    });
    let image = Array4::from_fn(Shape::new(1, 3, side, side), |_, c, y, x| {
        let i = y * side + x;
        let bg = base[c] + jitter[c] + 0.12 * (skin[i] - 0.5);
        if mask.data()[i] == 1.0 {
            let r = blob.level(x as f64 + 0.5, y as f64 + 0.5);
            // Darker and more mottled toward the centre.
            let k = darken * (0.85 + 0.15 * r) + 0.15 * (spots[i] - 0.5);
            quantise(bg * k.clamp(0.1, 0.8))
        } else {
            quantise(bg)
        }
    });
    Sample::new(id, image, mask, meta)
}

/// Deterministic synthetic lesion images. `side` must be a multiple of 16.
pub fn synth_dataset(n: usize, side: usize, root_seed: u64) -> Result<Vec<Sample>> {
    if n == 0 {
        return Err(Error::Empty("synthetic dataset"));
    }
    if side == 0 || !side.is_multiple_of(16) {
        return Err(Error::Config(format!(
            "synthetic side {side} is not a positive multiple of 16"
        )));
    }
    (0..n)
        .map(|i| {
            let mut rng = seed::rng(seed::derive(root_seed, "synth", &[i as u64]));
            one(format!("syn{i:05}"), side, &mut rng)
        })
        .collect()
}

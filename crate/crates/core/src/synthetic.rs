//! Procedural outdoor scenes with exact per-pixel labels, used as a hermetic
//! stand-in for labeled photo datasets. Classes follow [`ColorPalette::scenes`].

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::imaging::{ColorPalette, Image, SemanticMask};

pub const SKY: u16 = 0;
pub const GROUND: u16 = 1;
pub const WATER: u16 = 2;
pub const BUILDING: u16 = 3;
pub const SUN: u16 = 4;
pub const NUM_CLASSES: usize = 5;

pub fn palette() -> ColorPalette {
    ColorPalette::scenes()
}

fn jitter(rng: &mut ChaCha8Rng, base: [f32; 3], amount: f32) -> [f32; 3] {
    base.map(|v| (v + rng.random_range(-amount..=amount)).clamp(0.0, 1.0))
}

/// One scene of size `height×width`, fully determined by `seed`.
pub fn scene(height: usize, width: usize, seed: u64) -> Result<(Image, SemanticMask)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (height as f32, width as f32);
    let mut labels = Array2::<u16>::from_elem((height, width), SKY);
    let mut rgb = Array3::<f32>::zeros((3, height, width));

    let horizon = rng.random_range(0.35..0.65) * h;
    let tilt = rng.random_range(-0.15..0.15) * h / w;
    let sky_top = jitter(&mut rng, [0.25, 0.45, 0.85], 0.1);
    let sky_low = jitter(&mut rng, [0.75, 0.85, 0.95], 0.05);
    let ground = jitter(&mut rng, [0.35, 0.55, 0.2], 0.1);
    let ground_freq = rng.random_range(0.15..0.6);
    let ground_phase = rng.random_range(0.0..std::f32::consts::TAU);

    let sun = rng.random_bool(0.6).then(|| {
        (
            rng.random_range(0.1..0.9) * w,
            rng.random_range(0.1..0.8) * horizon,
            rng.random_range(0.06..0.14) * w.min(h),
        )
    });
    let lake = rng.random_bool(0.6).then(|| {
        let cy = rng.random_range(horizon + 0.15 * (h - horizon)..h);
        (
            rng.random_range(0.2..0.8) * w,
            cy,
            rng.random_range(0.15..0.4) * w,
            rng.random_range(0.08..0.2) * h,
        )
    });
    let water = jitter(&mut rng, [0.1, 0.3, 0.6], 0.08);
    let buildings: Vec<(f32, f32, f32, [f32; 3])> = (0..rng.random_range(0..=3))
        .map(|_| {
            let bw = rng.random_range(0.08..0.22) * w;
            let x0 = rng.random_range(0.0..(w - bw).max(1.0));
            let top = horizon - rng.random_range(0.1..0.35) * h;
            let color = jitter(&mut rng, [0.6, 0.35, 0.3], 0.15);
            (x0, bw, top, color)
        })
        .collect();

    for y in 0..height {
        for x in 0..width {
            let (fy, fx) = (y as f32 + 0.5, x as f32 + 0.5);
            let line = horizon + tilt * (fx - w / 2.0);
            let (class, color) = if fy < line {
                let t = (fy / line).clamp(0.0, 1.0);
                let c: [f32; 3] = std::array::from_fn(|i| sky_top[i] * (1.0 - t) + sky_low[i] * t);
                match sun {
                    Some((sx, sy, r)) if (fx - sx).powi(2) + (fy - sy).powi(2) <= r * r => {
                        (SUN, [1.0, 0.85, 0.3])
                    }
                    _ => (SKY, c),
                }
            } else {
                let shade = 0.08 * (ground_freq * fy + 0.3 * ground_freq * fx + ground_phase).sin();
                let depth = 0.15 * (fy - line) / (h - line).max(1.0);
                let g = ground.map(|v| (v + shade - depth).clamp(0.0, 1.0));
                match lake {
                    Some((cx, cy, rx, ry))
                        if ((fx - cx) / rx).powi(2) + ((fy - cy) / ry).powi(2) <= 1.0 =>
                    {
                        let ripple = 0.05 * (0.8 * fy).sin();
                        (WATER, water.map(|v| (v + ripple).clamp(0.0, 1.0)))
                    }
                    _ => (GROUND, g),
                }
            };
            let mut px = (class, color);
            for &(x0, bw, top, bc) in &buildings {
                if fx >= x0 && fx < x0 + bw && fy >= top && fy < line + 0.02 * h {
                    let window = ((fx - x0) * 4.0 / bw).fract() > 0.5 && ((fy - top) / 3.0).fract() > 0.5;
                    let c = if window { bc.map(|v| (v + 0.25).min(1.0)) } else { bc };
                    px = (BUILDING, c);
                }
            }
            labels[[y, x]] = px.0;
            for c in 0..3 {
                rgb[[c, y, x]] = px.1[c];
            }
        }
    }
    // Quantized so a PNG round trip is lossless.
    let image = Image::from_rgb8(&Image::new(rgb)?.to_rgb8())?;
    Ok((image, SemanticMask::new(labels, NUM_CLASSES)?))
}

/// `count` scenes with seeds `seed, seed+1, …`.
pub fn scenes(count: usize, height: usize, width: usize, seed: u64) -> Result<Vec<(Image, SemanticMask)>> {
    (0..count as u64).map(|i| scene(height, width, seed.wrapping_add(i))).collect()
}

//! Damage masks for training and evaluation: the evaluation center square,
//! random rectangles, and free-form brush strokes.

use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::BinaryMask;

/// Axis-aligned `hole×hole` square of ones centered in an `height×width` mask.
pub fn center_mask(height: usize, width: usize, hole: usize) -> Result<BinaryMask> {
    if hole > height.min(width) {
        return Err(Error::dim(format!(
            "hole {hole} does not fit in a {height}×{width} mask"
        )));
    }
    let (top, left) = ((height - hole) / 2, (width - hole) / 2);
    Ok(BinaryMask::from_fn(height, width, |y, x| {
        (top..top + hole).contains(&y) && (left..left + hole).contains(&x)
    }))
}

fn check_fraction_range(range: (f64, f64), allow_zero: bool) -> Result<()> {
    let (lo, hi) = range;
    let lo_ok = if allow_zero { lo >= 0.0 } else { lo > 0.0 };
    if !(lo_ok && lo <= hi && hi <= 1.0) {
        return Err(Error::Parameter(format!("invalid area range [{lo}, {hi}]")));
    }
    Ok(())
}

/// One random rectangle whose area fraction lies in `area_range`.
pub fn random_rect_mask(
    height: usize,
    width: usize,
    area_range: (f64, f64),
    seed: u64,
) -> Result<BinaryMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    random_rect_with(&mut rng, height, width, area_range)
}

fn random_rect_with(
    rng: &mut ChaCha8Rng,
    height: usize,
    width: usize,
    area_range: (f64, f64),
) -> Result<BinaryMask> {
    check_fraction_range(area_range, false)?;
    let total = (height * width) as f64;
    // Feasible widths for a given height, in pixels.
    let width_range = |rh: usize| -> Option<(usize, usize)> {
        let lo = ((area_range.0 * total - 1e-9) / rh as f64).ceil().max(1.0) as usize;
        let hi = (((area_range.1 * total + 1e-9) / rh as f64).floor() as usize).min(width);
        (lo <= hi).then_some((lo, hi))
    };
    let heights: Vec<usize> = (1..=height).filter(|&rh| width_range(rh).is_some()).collect();
    if heights.is_empty() {
        return Err(Error::Parameter(format!(
            "no rectangle in a {height}×{width} mask has area fraction in [{}, {}]",
            area_range.0, area_range.1
        )));
    }
    let rh = heights[rng.random_range(0..heights.len())];
    let (lo, hi) = width_range(rh).expect("filtered above");
    let rw = rng.random_range(lo..=hi);
    let top = rng.random_range(0..=height - rh);
    let left = rng.random_range(0..=width - rw);
    Ok(BinaryMask::from_fn(height, width, |y, x| {
        (top..top + rh).contains(&y) && (left..left + rw).contains(&x)
    }))
}

/// Parameters of the free-form stroke generator. Ranges are inclusive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrregularMaskParams {
    pub strokes: (usize, usize),
    /// Brush width in pixels.
    pub width: (usize, usize),
    /// Vertices per stroke.
    pub turns: (usize, usize),
    /// Segment length as a fraction of the longer image side.
    pub segment_length: (f64, f64),
    pub coverage: (f64, f64),
    pub max_attempts: usize,
}

impl IrregularMaskParams {
    /// Defaults for a 256×256 image, with the brush width scaled for other sizes.
    pub fn for_size(height: usize, width: usize) -> Self {
        let scale = height.max(width) as f64 / 256.0;
        let px = |v: f64| ((v * scale).round() as usize).max(1);
        Self {
            strokes: (1, 8),
            width: (px(8.0), px(32.0)),
            turns: (10, 50),
            segment_length: (0.01, 0.06),
            coverage: (0.1, 0.5),
            max_attempts: 50,
        }
    }
}

/// Union of random polyline brush strokes, redrawn until the damaged fraction
/// falls inside `params.coverage`.
pub fn irregular_mask(
    height: usize,
    width: usize,
    params: &IrregularMaskParams,
    seed: u64,
) -> Result<BinaryMask> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    irregular_with(&mut rng, height, width, params)
}

fn check_range<T: PartialOrd + std::fmt::Debug>(name: &str, r: (T, T)) -> Result<()> {
    if r.0 > r.1 {
        return Err(Error::Parameter(format!("empty {name} range {r:?}")));
    }
    Ok(())
}

fn irregular_with(
    rng: &mut ChaCha8Rng,
    height: usize,
    width: usize,
    params: &IrregularMaskParams,
) -> Result<BinaryMask> {
    check_range("stroke count", params.strokes)?;
    check_range("brush width", params.width)?;
    check_range("turn count", params.turns)?;
    check_range("segment length", params.segment_length)?;
    check_fraction_range(params.coverage, true)?;
    if params.width.0 == 0 {
        return Err(Error::Parameter("brush width must be positive".into()));
    }
    let side = height.max(width) as f64;
    for _ in 0..params.max_attempts.max(1) {
        let mut mask = BinaryMask::zeros(height, width);
        let strokes = rng.random_range(params.strokes.0..=params.strokes.1);
        for _ in 0..strokes {
            let brush = rng.random_range(params.width.0..=params.width.1) as f64;
            let turns = rng.random_range(params.turns.0..=params.turns.1);
            let mut y = rng.random_range(0.0..height as f64);
            let mut x = rng.random_range(0.0..width as f64);
            for _ in 0..turns {
                let angle = rng.random_range(0.0..TAU);
                let len = side * rng.random_range(params.segment_length.0..=params.segment_length.1);
                let ny = (y + len * angle.sin()).clamp(0.0, height as f64 - 1.0);
                let nx = (x + len * angle.cos()).clamp(0.0, width as f64 - 1.0);
                draw_segment(&mut mask, (y, x), (ny, nx), brush / 2.0);
                (y, x) = (ny, nx);
            }
        }
        let c = mask.coverage();
        if c >= params.coverage.0 && c <= params.coverage.1 {
            return Ok(mask);
        }
    }
    Err(Error::Generation(format!(
        "coverage in [{}, {}] not reached within {} attempts",
        params.coverage.0, params.coverage.1, params.max_attempts
    )))
}

/// Stamps every pixel within `radius` of the segment `a`–`b`.
fn draw_segment(mask: &mut BinaryMask, a: (f64, f64), b: (f64, f64), radius: f64) {
    let (h, w) = (mask.height() as f64, mask.width() as f64);
    let y0 = (a.0.min(b.0) - radius).floor().max(0.0) as usize;
    let y1 = (a.0.max(b.0) + radius).ceil().min(h - 1.0) as usize;
    let x0 = (a.1.min(b.1) - radius).floor().max(0.0) as usize;
    let x1 = (a.1.max(b.1) + radius).ceil().min(w - 1.0) as usize;
    let (dy, dx) = (b.0 - a.0, b.1 - a.1);
    let len2 = dy * dy + dx * dx;
    let r2 = radius * radius;
    for y in y0..=y1 {
        for x in x0..=x1 {
            let (py, px) = (y as f64 - a.0, x as f64 - a.1);
            let t = if len2 > 0.0 {
                ((py * dy + px * dx) / len2).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let (ey, ex) = (py - t * dy, px - t * dx);
            if ey * ey + ex * ex <= r2 {
                mask.set(y, x, true);
            }
        }
    }
}

/// Mask source used by the training loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MaskPolicy {
    /// Always the centered square of side `hole`.
    Center { hole: usize },
    /// Regular rectangles and free-form strokes, alternating 50/50 at random.
    Mixed {
        rect_area: (f64, f64),
        irregular: Option<IrregularMaskParams>,
    },
}

impl Default for MaskPolicy {
    fn default() -> Self {
        MaskPolicy::Mixed {
            rect_area: (0.1, 0.5),
            irregular: None,
        }
    }
}

/// Seeded stream of masks following a [`MaskPolicy`].
pub struct MaskSampler {
    policy: MaskPolicy,
    height: usize,
    width: usize,
    rng: ChaCha8Rng,
}

impl MaskSampler {
    pub fn new(policy: MaskPolicy, height: usize, width: usize, seed: u64) -> Result<Self> {
        if let MaskPolicy::Center { hole } = policy {
            center_mask(height, width, hole)?;
        }
        Ok(Self {
            policy,
            height,
            width,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn sample(&mut self) -> Result<BinaryMask> {
        match &self.policy {
            MaskPolicy::Center { hole } => center_mask(self.height, self.width, *hole),
            MaskPolicy::Mixed {
                rect_area,
                irregular,
            } => {
                if self.rng.random_bool(0.5) {
                    random_rect_with(&mut self.rng, self.height, self.width, *rect_area)
                } else {
                    let params = irregular
                        .clone()
                        .unwrap_or_else(|| IrregularMaskParams::for_size(self.height, self.width));
                    irregular_with(&mut self.rng, self.height, self.width, &params)
                }
            }
        }
    }
}

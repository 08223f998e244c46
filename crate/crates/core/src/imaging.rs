//! Image, mask and label-map types plus the compositing and palette arithmetic
//! shared by the rest of the crate.
//!
//! Pixel values live in `[0, 1]` internally. Conversion to and from 8-bit
//! samples happens only at the PNG boundary.

use std::io::Cursor;
use std::path::Path;

use image::{imageops::FilterType, DynamicImage, GrayImage, ImageFormat, RgbImage};
use ndarray::{Array2, Array3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::write_atomic;

/// Default L∞ tolerance (per channel) when mapping pseudo-colors back to labels.
pub const DEFAULT_COLOR_TOLERANCE: f32 = 2.0 / 255.0;

/// Maximum number of offending coordinates reported by [`Error::UnknownColor`].
const MAX_REPORTED_PIXELS: usize = 16;

/// An RGB image with values in `[0, 1]`, stored channel-major as `3×H×W`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    data: Array3<f32>,
}

impl Image {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        let (c, h, w) = data.dim();
        if c != 3 {
            return Err(Error::dim(format!("image must have 3 channels, got {c}")));
        }
        if h == 0 || w == 0 {
            return Err(Error::dim("image must be non-empty"));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Data(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self { data })
    }

    /// Builds an image from possibly out-of-range values by clamping into `[0, 1]`.
    /// Non-finite values are rejected.
    pub fn from_clamped(mut data: Array3<f32>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite pixel value".into()));
        }
        data.mapv_inplace(|v| v.clamp(0.0, 1.0));
        Self::new(data)
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Self::new(Array3::from_elem((3, height, width), value))
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        Self::new(Array3::from_shape_fn((3, height, width), |(c, y, x)| f(c, y, x)))
    }

    pub fn height(&self) -> usize {
        self.data.dim().1
    }

    pub fn width(&self) -> usize {
        self.data.dim().2
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn pixel(&self, y: usize, x: usize) -> [f32; 3] {
        [self.data[[0, y, x]], self.data[[1, y, x]], self.data[[2, y, x]]]
    }

    /// Channel-major flat copy of the pixel values.
    pub fn to_vec(&self) -> Vec<f32> {
        self.data.iter().copied().collect()
    }

    pub fn from_rgb8(img: &RgbImage) -> Result<Self> {
        let (w, h) = img.dimensions();
        let data = Array3::from_shape_fn((3, h as usize, w as usize), |(c, y, x)| {
            img.get_pixel(x as u32, y as u32)[c] as f32 / 255.0
        });
        Self::new(data)
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let (h, w) = (self.height(), self.width());
        RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let p = self.pixel(y as usize, x as usize);
            image::Rgb(p.map(quantize))
        })
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?;
        Self::from_rgb8(&img.to_rgb8())
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        encode(DynamicImage::ImageRgb8(self.to_rgb8()))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::decode_png(&bytes)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode_png()?)
    }

    /// Bilinear-ish resampling (triangle filter) to the requested size.
    pub fn resized(&self, height: usize, width: usize) -> Result<Self> {
        if height == self.height() && width == self.width() {
            return Ok(self.clone());
        }
        let img = DynamicImage::ImageRgb8(self.to_rgb8()).resize_exact(
            width as u32,
            height as u32,
            FilterType::Triangle,
        );
        Self::from_rgb8(&img.to_rgb8())
    }

    /// Largest absolute per-element difference to `other`.
    pub fn max_abs_diff(&self, other: &Image) -> Result<f32> {
        ensure_same_size(self.height(), self.width(), other.height(), other.width())?;
        Ok(self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max))
    }
}

/// Single-channel damage mask; `1` marks damaged pixels.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    data: Array2<u8>,
}

impl BinaryMask {
    pub fn new(data: Array2<u8>) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Data("binary mask values must be 0 or 1".into()));
        }
        if data.is_empty() {
            return Err(Error::dim("mask must be non-empty"));
        }
        Ok(Self { data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            data: Array2::zeros((height, width)),
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self {
            data: Array2::ones((height, width)),
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        Self {
            data: Array2::from_shape_fn((height, width), |(y, x)| f(y, x) as u8),
        }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<u8> {
        &self.data
    }

    pub fn is_damaged(&self, y: usize, x: usize) -> bool {
        self.data[[y, x]] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, damaged: bool) {
        self.data[[y, x]] = damaged as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Fraction of damaged pixels.
    pub fn coverage(&self) -> f64 {
        self.count() as f64 / self.data.len() as f64
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(Self::from_fn(h as usize, w as usize, |y, x| {
            img.get_pixel(x as u32, y as u32)[0] >= 128
        }))
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let img = GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            image::Luma([self.data[[y as usize, x as usize]] * 255])
        });
        encode(DynamicImage::ImageLuma8(img))
    }

    pub fn load_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::decode_png(&bytes)
    }

    pub fn save_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode_png()?)
    }

    /// Nearest-neighbour resampling; keeps the mask binary.
    pub fn resized(&self, height: usize, width: usize) -> Self {
        let (sh, sw) = (self.height(), self.width());
        Self::from_fn(height, width, |y, x| self.data[[y * sh / height, x * sw / width]] == 1)
    }
}

/// Per-pixel hard class labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticMask {
    labels: Array2<u16>,
    num_classes: usize,
}

impl SemanticMask {
    pub fn new(labels: Array2<u16>, num_classes: usize) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::Parameter("num_classes must be positive".into()));
        }
        if let Some(&l) = labels.iter().find(|&&l| l as usize >= num_classes) {
            return Err(Error::Palette(format!(
                "label {l} out of range for {num_classes} classes"
            )));
        }
        Ok(Self {
            labels,
            num_classes,
        })
    }

    pub fn height(&self) -> usize {
        self.labels.nrows()
    }

    pub fn width(&self) -> usize {
        self.labels.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn labels(&self) -> &Array2<u16> {
        &self.labels
    }

    pub fn label(&self, y: usize, x: usize) -> u16 {
        self.labels[[y, x]]
    }

    /// `num_classes×H×W` indicator map: channel `k` is 1 exactly where the label is `k`.
    pub fn one_hot(&self) -> Array3<f32> {
        let mut out = Array3::zeros((self.num_classes, self.height(), self.width()));
        for ((y, x), &l) in self.labels.indexed_iter() {
            out[[l as usize, y, x]] = 1.0;
        }
        out
    }

    /// Inverse of [`SemanticMask::one_hot`] for any per-pixel score map:
    /// per-pixel argmax, ties resolved toward the lowest class id.
    pub fn from_scores(scores: &Array3<f32>) -> Result<Self> {
        let (k, h, w) = scores.dim();
        let labels = Array2::from_shape_fn((h, w), |(y, x)| {
            let mut best = 0usize;
            for c in 1..k {
                if scores[[c, y, x]] > scores[[best, y, x]] {
                    best = c;
                }
            }
            best as u16
        });
        Self::new(labels, k)
    }

    pub fn resized(&self, height: usize, width: usize) -> Self {
        let (sh, sw) = (self.height(), self.width());
        let labels = Array2::from_shape_fn((height, width), |(y, x)| {
            self.labels[[y * sh / height, x * sw / width]]
        });
        Self {
            labels,
            num_classes: self.num_classes,
        }
    }

    /// Decodes a label-index PNG (8-bit grayscale, value = class id).
    pub fn decode_index_png(bytes: &[u8], num_classes: usize) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, ImageFormat::Png)?.to_luma8();
        let (w, h) = img.dimensions();
        let labels = Array2::from_shape_fn((h as usize, w as usize), |(y, x)| {
            img.get_pixel(x as u32, y as u32)[0] as u16
        });
        Self::new(labels, num_classes)
    }

    pub fn encode_index_png(&self) -> Result<Vec<u8>> {
        if self.num_classes > 256 {
            return Err(Error::Palette("index PNG supports at most 256 classes".into()));
        }
        let img = GrayImage::from_fn(self.width() as u32, self.height() as u32, |x, y| {
            image::Luma([self.labels[[y as usize, x as usize]] as u8])
        });
        encode(DynamicImage::ImageLuma8(img))
    }

    pub fn load_index_png(path: impl AsRef<Path>, num_classes: usize) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::file(path, e))?;
        Self::decode_index_png(&bytes, num_classes)
    }

    pub fn save_index_png(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), &self.encode_index_png()?)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaletteEntry {
    pub id: u16,
    pub name: String,
    pub rgb: [u8; 3],
}

/// Bijective class ↔ display-color map used for the editable pseudo-color mask.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<PaletteEntry>", into = "Vec<PaletteEntry>")]
pub struct ColorPalette {
    entries: Vec<PaletteEntry>,
}

impl TryFrom<Vec<PaletteEntry>> for ColorPalette {
    type Error = Error;

    fn try_from(entries: Vec<PaletteEntry>) -> Result<Self> {
        Self::new(entries)
    }
}

impl From<ColorPalette> for Vec<PaletteEntry> {
    fn from(p: ColorPalette) -> Self {
        p.entries
    }
}

impl ColorPalette {
    pub fn new(mut entries: Vec<PaletteEntry>) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::Palette("palette must have at least one entry".into()));
        }
        entries.sort_by_key(|e| e.id);
        for (i, e) in entries.iter().enumerate() {
            if e.id as usize != i {
                return Err(Error::Palette(format!(
                    "class ids must be 0..{} without gaps, found id {} at position {i}",
                    entries.len(),
                    e.id
                )));
            }
        }
        for (i, a) in entries.iter().enumerate() {
            if let Some(b) = entries[i + 1..].iter().find(|b| b.rgb == a.rgb) {
                return Err(Error::Palette(format!(
                    "classes {} and {} share color {:?}",
                    a.id, b.id, a.rgb
                )));
            }
        }
        Ok(Self { entries })
    }

    /// Palette of the procedural scene dataset (see [`crate::synthetic`]).
    pub fn scenes() -> Self {
        let e = |id, name: &str, rgb| PaletteEntry {
            id,
            name: name.to_string(),
            rgb,
        };
        Self::new(vec![
            e(0, "sky", [70, 130, 180]),
            e(1, "ground", [107, 142, 35]),
            e(2, "water", [0, 80, 160]),
            e(3, "building", [170, 60, 50]),
            e(4, "sun", [250, 200, 30]),
        ])
        .expect("built-in palette is valid")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[PaletteEntry] {
        &self.entries
    }

    pub fn color(&self, class: u16) -> Option<[f32; 3]> {
        self.entries
            .get(class as usize)
            .map(|e| e.rgb.map(|v| v as f32 / 255.0))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let s = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path.as_ref(), self.to_json()?.as_bytes())
    }
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn encode(img: DynamicImage) -> Result<Vec<u8>> {
    let mut buf = Cursor::new(Vec::new());
    img.write_to(&mut buf, ImageFormat::Png)?;
    Ok(buf.into_inner())
}

fn ensure_same_size(h1: usize, w1: usize, h2: usize, w2: usize) -> Result<()> {
    if (h1, w1) != (h2, w2) {
        return Err(Error::dim(format!("size mismatch: {h1}×{w1} vs {h2}×{w2}")));
    }
    Ok(())
}

/// `I ⊙ (1 − M)`: damaged pixels become zero, the rest are untouched.
pub fn apply_mask(image: &Image, mask: &BinaryMask) -> Result<Image> {
    ensure_same_size(image.height(), image.width(), mask.height(), mask.width())?;
    let mut data = image.data.clone();
    for mut channel in data.axis_iter_mut(Axis(0)) {
        ndarray::Zip::from(&mut channel)
            .and(&mask.data)
            .for_each(|v, &m| {
                if m == 1 {
                    *v = 0.0;
                }
            });
    }
    Ok(Image { data })
}

/// `result ⊙ M + original ⊙ (1 − M)`: only damaged pixels come from `result`.
pub fn composite(result: &Image, original: &Image, mask: &BinaryMask) -> Result<Image> {
    ensure_same_size(result.height(), result.width(), original.height(), original.width())?;
    ensure_same_size(result.height(), result.width(), mask.height(), mask.width())?;
    let mut data = original.data.clone();
    for (mut out, src) in data.axis_iter_mut(Axis(0)).zip(result.data.axis_iter(Axis(0))) {
        ndarray::Zip::from(&mut out)
            .and(&src)
            .and(&mask.data)
            .for_each(|o, &r, &m| {
                if m == 1 {
                    *o = r;
                }
            });
    }
    Ok(Image { data })
}

pub fn labels_to_pseudocolor(mask: &SemanticMask, palette: &ColorPalette) -> Result<Image> {
    if mask.num_classes() > palette.len() {
        return Err(Error::Palette(format!(
            "mask has {} classes but palette only {}",
            mask.num_classes(),
            palette.len()
        )));
    }
    let colors: Vec<[f32; 3]> = palette
        .entries
        .iter()
        .map(|e| e.rgb.map(|v| v as f32 / 255.0))
        .collect();
    let mut data = Array3::zeros((3, mask.height(), mask.width()));
    for ((y, x), &l) in mask.labels.indexed_iter() {
        let c = colors
            .get(l as usize)
            .ok_or_else(|| Error::Palette(format!("label {l} missing from palette")))?;
        for ch in 0..3 {
            data[[ch, y, x]] = c[ch];
        }
    }
    Image::new(data)
}

/// Nearest palette color per pixel under the L∞ metric; pixels farther than
/// `tolerance` from every palette color are reported as unknown.
pub fn pseudocolor_to_labels(
    image: &Image,
    palette: &ColorPalette,
    tolerance: f32,
) -> Result<SemanticMask> {
    let colors: Vec<[f32; 3]> = palette
        .entries
        .iter()
        .map(|e| e.rgb.map(|v| v as f32 / 255.0))
        .collect();
    let (h, w) = (image.height(), image.width());
    let mut labels = Array2::zeros((h, w));
    let mut offenders = Vec::new();
    let mut total = 0;
    for y in 0..h {
        for x in 0..w {
            let p = image.pixel(y, x);
            let (best, dist) = colors
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    let d = (0..3).map(|ch| (p[ch] - c[ch]).abs()).fold(0.0, f32::max);
                    (i, d)
                })
                .fold((0, f32::INFINITY), |acc, cur| if cur.1 < acc.1 { cur } else { acc });
            // Slack for the 8-bit round trip of the palette colors themselves.
            if dist > tolerance + 1e-6 {
                total += 1;
                if offenders.len() < MAX_REPORTED_PIXELS {
                    offenders.push((y, x));
                }
            }
            labels[[y, x]] = best as u16;
        }
    }
    if total > 0 {
        return Err(Error::UnknownColor {
            pixels: offenders,
            total,
        });
    }
    SemanticMask::new(labels, palette.len())
}

/// Block-max pooling: a block is damaged if any pixel inside it is damaged.
pub fn downsample_mask(mask: &BinaryMask, factor: usize) -> Result<BinaryMask> {
    let (h, w) = (mask.height(), mask.width());
    if factor == 0 || h % factor != 0 || w % factor != 0 {
        return Err(Error::dim(format!(
            "mask {h}×{w} is not divisible by factor {factor}"
        )));
    }
    let mut out = Array2::zeros((h / factor, w / factor));
    for ((y, x), &v) in mask.data.indexed_iter() {
        if v == 1 {
            out[[y / factor, x / factor]] = 1;
        }
    }
    Ok(BinaryMask { data: out })
}

/// Resizes an arbitrary decoded image to the model resolution and converts it
/// to the canonical representation.
pub fn ingest(img: &DynamicImage, height: usize, width: usize) -> Result<Image> {
    let rgb = if img.width() as usize == width && img.height() as usize == height {
        img.to_rgb8()
    } else {
        img.resize_exact(width as u32, height as u32, FilterType::Triangle)
            .to_rgb8()
    };
    Image::from_rgb8(&rgb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
        Image::from_fn(h, w, |_, _, _| rng.random::<f32>()).unwrap()
    }

    fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMask {
        let vals: Vec<u8> = (0..h * w).map(|_| rng.random_bool(0.4) as u8).collect();
        BinaryMask::new(Array2::from_shape_vec((h, w), vals).unwrap()).unwrap()
    }

    fn two_palette() -> ColorPalette {
        ColorPalette::new(vec![
            PaletteEntry { id: 0, name: "a".into(), rgb: [10, 20, 30] },
            PaletteEntry { id: 1, name: "b".into(), rgb: [200, 100, 50] },
        ])
        .unwrap()
    }

    #[test]
    fn apply_mask_identity_and_annihilation() {
        let img = Image::filled(4, 4, 1.0).unwrap();
        assert_eq!(apply_mask(&img, &BinaryMask::zeros(4, 4)).unwrap(), img);
        let zero = apply_mask(&img, &BinaryMask::ones(4, 4)).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn apply_mask_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let img = random_image(&mut rng, 4, 4);
            let m = random_mask(&mut rng, 4, 4);
            let out = apply_mask(&img, &m).unwrap();
            for c in 0..3 {
                for y in 0..4 {
                    for x in 0..4 {
                        let expect = img.data()[[c, y, x]] * (1.0 - m.data()[[y, x]] as f32);
                        assert_eq!(out.data()[[c, y, x]], expect);
                    }
                }
            }
        }
    }

    #[test]
    fn size_mismatch_is_dimension_error() {
        let img = Image::filled(4, 4, 0.5).unwrap();
        assert!(matches!(
            apply_mask(&img, &BinaryMask::zeros(4, 8)),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            composite(&img, &img, &BinaryMask::zeros(8, 4)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn composite_extremes_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let r = random_image(&mut rng, 4, 4);
        let o = random_image(&mut rng, 4, 4);
        assert_eq!(composite(&r, &o, &BinaryMask::zeros(4, 4)).unwrap(), o);
        assert_eq!(composite(&r, &o, &BinaryMask::ones(4, 4)).unwrap(), r);
        let m = random_mask(&mut rng, 4, 4);
        let out = composite(&r, &o, &m).unwrap();
        for c in 0..3 {
            for y in 0..4 {
                for x in 0..4 {
                    let mv = m.data()[[y, x]] as f32;
                    let expect = r.data()[[c, y, x]] * mv + o.data()[[c, y, x]] * (1.0 - mv);
                    assert_eq!(out.data()[[c, y, x]], expect);
                }
            }
        }
    }

    #[test]
    fn mask_then_composite_restores_context() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let img = random_image(&mut rng, 8, 8);
        let m = random_mask(&mut rng, 8, 8);
        let gen = random_image(&mut rng, 8, 8);
        let masked = apply_mask(&img, &m).unwrap();
        let out = composite(&gen, &masked, &m).unwrap();
        for y in 0..8 {
            for x in 0..8 {
                if !m.is_damaged(y, x) {
                    assert_eq!(out.pixel(y, x), img.pixel(y, x));
                }
            }
        }
    }

    #[test]
    fn pseudocolor_checkerboard_and_constant() {
        let p = two_palette();
        let labels = Array2::from_shape_vec((2, 2), vec![0, 1, 1, 0]).unwrap();
        let m = SemanticMask::new(labels, 2).unwrap();
        let img = labels_to_pseudocolor(&m, &p).unwrap();
        assert_eq!(img.pixel(0, 0), p.color(0).unwrap());
        assert_eq!(img.pixel(0, 1), p.color(1).unwrap());
        assert_eq!(img.pixel(1, 0), p.color(1).unwrap());
        assert_eq!(img.pixel(1, 1), p.color(0).unwrap());

        let one = SemanticMask::new(Array2::zeros((3, 5)), 1).unwrap();
        let img = labels_to_pseudocolor(&one, &p).unwrap();
        for y in 0..3 {
            for x in 0..5 {
                assert_eq!(img.pixel(y, x), p.color(0).unwrap());
            }
        }
    }

    #[test]
    fn label_outside_palette_is_palette_error() {
        let m = SemanticMask::new(Array2::from_elem((2, 2), 2), 3).unwrap();
        assert!(matches!(
            labels_to_pseudocolor(&m, &two_palette()),
            Err(Error::Palette(_))
        ));
    }

    #[test]
    fn perturbed_colors_map_to_same_labels() {
        let p = ColorPalette::scenes();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let labels = Array2::from_shape_fn((6, 6), |_| rng.random_range(0..p.len() as u16));
        let m = SemanticMask::new(labels, p.len()).unwrap();
        let img = labels_to_pseudocolor(&m, &p).unwrap();
        let mut data = img.into_data();
        data.mapv_inplace(|v| {
            let d = if rng.random_bool(0.5) { 1.0 } else { -1.0 } / 255.0;
            (v + d).clamp(0.0, 1.0)
        });
        let perturbed = Image::new(data).unwrap();
        let back = pseudocolor_to_labels(&perturbed, &p, DEFAULT_COLOR_TOLERANCE).unwrap();
        // Brute force: nearest palette color by L∞ over the whole palette.
        for y in 0..6 {
            for x in 0..6 {
                let px = perturbed.pixel(y, x);
                let mut best = (0, f32::INFINITY);
                for e in p.entries() {
                    let c = p.color(e.id).unwrap();
                    let d = (0..3).map(|i| (px[i] - c[i]).abs()).fold(0.0, f32::max);
                    if d < best.1 {
                        best = (e.id, d);
                    }
                }
                assert_eq!(back.label(y, x), best.0);
                assert_eq!(back.label(y, x), m.label(y, x));
            }
        }
    }

    #[test]
    fn unknown_color_lists_coordinates() {
        let p = two_palette();
        let mut img = labels_to_pseudocolor(
            &SemanticMask::new(Array2::zeros((3, 3)), 2).unwrap(),
            &p,
        )
        .unwrap()
        .into_data();
        for c in 0..3 {
            img[[c, 1, 2]] = 1.0;
        }
        let err = pseudocolor_to_labels(&Image::new(img).unwrap(), &p, 0.0).unwrap_err();
        match err {
            Error::UnknownColor { pixels, total } => {
                assert_eq!(total, 1);
                assert_eq!(pixels, vec![(1, 2)]);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn one_hot_single_pixel() {
        let m = SemanticMask::new(Array2::from_elem((1, 1), 2), 4).unwrap();
        let oh = m.one_hot();
        let v: Vec<f32> = (0..4).map(|k| oh[[k, 0, 0]]).collect();
        assert_eq!(v, vec![0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn downsample_mask_cases() {
        let z = downsample_mask(&BinaryMask::zeros(8, 8), 4).unwrap();
        assert_eq!((z.height(), z.width(), z.count()), (2, 2, 0));
        for y in 0..8 {
            for x in 0..8 {
                let mut m = BinaryMask::zeros(8, 8);
                m.set(y, x, true);
                let d = downsample_mask(&m, 4).unwrap();
                assert_eq!(d.count(), 1);
                assert!(d.is_damaged(y / 4, x / 4));
            }
        }
        assert!(matches!(
            downsample_mask(&BinaryMask::zeros(6, 8), 4),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn downsample_mask_block_any_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let m = BinaryMask::from_fn(8, 8, |_, _| rng.random_bool(0.05));
            let d = downsample_mask(&m, 4).unwrap();
            for by in 0..2 {
                for bx in 0..2 {
                    let mut any = false;
                    for y in by * 4..by * 4 + 4 {
                        for x in bx * 4..bx * 4 + 4 {
                            any |= m.is_damaged(y, x);
                        }
                    }
                    assert_eq!(d.is_damaged(by, bx), any);
                }
            }
        }
    }

    #[test]
    fn palette_validation() {
        let dup = ColorPalette::new(vec![
            PaletteEntry { id: 0, name: "a".into(), rgb: [1, 2, 3] },
            PaletteEntry { id: 1, name: "b".into(), rgb: [1, 2, 3] },
        ]);
        assert!(matches!(dup, Err(Error::Palette(_))));
        let gap = ColorPalette::new(vec![
            PaletteEntry { id: 0, name: "a".into(), rgb: [1, 2, 3] },
            PaletteEntry { id: 2, name: "b".into(), rgb: [4, 5, 6] },
        ]);
        assert!(matches!(gap, Err(Error::Palette(_))));
        let json = ColorPalette::scenes().to_json().unwrap();
        assert!(json.contains("\"rgb\""));
        assert_eq!(ColorPalette::from_json(&json).unwrap(), ColorPalette::scenes());
    }

    #[test]
    fn png_round_trips_at_8_bit() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let img = Image::from_fn(4, 8, |_, _, _| rng.random_range(0..=255u8) as f32 / 255.0).unwrap();
        let back = Image::decode_png(&img.encode_png().unwrap()).unwrap();
        assert_eq!(back, img);
        let m = random_mask(&mut rng, 4, 8);
        assert_eq!(BinaryMask::decode_png(&m.encode_png().unwrap()).unwrap(), m);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn labels_strategy() -> impl Strategy<Value = (usize, usize, usize, Vec<u16>)> {
            (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(h, w, k)| {
                (
                    Just(h),
                    Just(w),
                    Just(k),
                    proptest::collection::vec(0..k as u16, h * w),
                )
            })
        }

        proptest! {
            #[test]
            fn one_hot_partition_and_argmax_inverse((h, w, k, v) in labels_strategy()) {
                let m = SemanticMask::new(Array2::from_shape_vec((h, w), v).unwrap(), k).unwrap();
                let oh = m.one_hot();
                for y in 0..h {
                    for x in 0..w {
                        let s: f32 = (0..k).map(|c| oh[[c, y, x]]).sum();
                        prop_assert_eq!(s, 1.0);
                    }
                }
                prop_assert_eq!(SemanticMask::from_scores(&oh).unwrap(), m);
            }

            #[test]
            fn pseudocolor_round_trip((h, w, k, v) in labels_strategy()) {
                let p = ColorPalette::scenes();
                let k = k.min(p.len());
                let v: Vec<u16> = v.into_iter().map(|l| l % k as u16).collect();
                let m = SemanticMask::new(Array2::from_shape_vec((h, w), v).unwrap(), p.len()).unwrap();
                let img = labels_to_pseudocolor(&m, &p).unwrap();
                prop_assert_eq!(pseudocolor_to_labels(&img, &p, 0.0).unwrap(), m);
            }

            #[test]
            fn downsample_is_monotone(bits in proptest::collection::vec(any::<bool>(), 64), extra in 0usize..64) {
                let m = BinaryMask::from_fn(8, 8, |y, x| bits[y * 8 + x]);
                let mut more = m.clone();
                more.set(extra / 8, extra % 8, true);
                let a = downsample_mask(&m, 4).unwrap();
                let b = downsample_mask(&more, 4).unwrap();
                for y in 0..2 {
                    for x in 0..2 {
                        prop_assert!(!a.is_damaged(y, x) || b.is_damaged(y, x));
                    }
                }
            }
        }
    }
}

//! On-disk labeled image sets.
//!
//! Layout: `images/NNNNN.png` (RGB), optional `labels/NNNNN.png` (8-bit class
//! indices) with the same stem, and `palette.json`.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imaging::{ingest, ColorPalette, Image, SemanticMask};
use crate::synthetic;

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub name: String,
    pub image: Image,
    pub labels: Option<SemanticMask>,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub palette: ColorPalette,
}

fn png_stems(dir: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::file(dir, e))? {
        let path = entry.map_err(|e| Error::file(dir, e))?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

impl Dataset {
    /// Procedural scenes with exact labels.
    pub fn synthetic(count: usize, height: usize, width: usize, seed: u64) -> Result<Self> {
        let samples = synthetic::scenes(count, height, width, seed)?
            .into_iter()
            .enumerate()
            .map(|(i, (image, labels))| Sample {
                name: format!("{i:05}"),
                image,
                labels: Some(labels),
            })
            .collect();
        Ok(Self {
            samples,
            palette: synthetic::palette(),
        })
    }

    /// Loads a dataset directory, resizing every image (triangle filter) and
    /// label map (nearest) to `height×width`.
    pub fn load(dir: impl AsRef<Path>, height: usize, width: usize) -> Result<Self> {
        let dir = dir.as_ref();
        let palette = ColorPalette::load(dir.join("palette.json"))?;
        let label_dir = dir.join("labels");
        let mut samples = Vec::new();
        for (name, path) in png_stems(&dir.join("images"))? {
            let bytes = std::fs::read(&path).map_err(|e| Error::file(&path, e))?;
            let decoded = image::load_from_memory(&bytes)?;
            let image = ingest(&decoded, height, width)?;
            let label_path = label_dir.join(format!("{name}.png"));
            let labels = if label_path.exists() {
                Some(SemanticMask::load_index_png(&label_path, palette.len())?.resized(height, width))
            } else {
                None
            };
            samples.push(Sample { name, image, labels });
        }
        if samples.is_empty() {
            return Err(Error::Data(format!("no PNG images under {}", dir.join("images").display())));
        }
        Ok(Self { samples, palette })
    }

    /// Loads a dataset directory at the size of its first image.
    pub fn load_native(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let stems = png_stems(&dir.join("images"))?;
        let (_, first) = stems
            .first()
            .ok_or_else(|| Error::Data(format!("no PNG images under {}", dir.join("images").display())))?;
        let (w, h) = image::image_dimensions(first)?;
        Self::load(dir, h as usize, w as usize)
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        self.palette.save(dir.join("palette.json"))?;
        for s in &self.samples {
            s.image.save_png(dir.join("images").join(format!("{}.png", s.name)))?;
            if let Some(l) = &s.labels {
                l.save_index_png(dir.join("labels").join(format!("{}.png", s.name)))?;
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fully_labeled(&self) -> bool {
        self.samples.iter().all(|s| s.labels.is_some())
    }

    /// First `n` samples and the rest, in order.
    pub fn split(mut self, n: usize) -> (Dataset, Dataset) {
        let rest = self.samples.split_off(n.min(self.samples.len()));
        let palette = self.palette.clone();
        (
            self,
            Dataset {
                samples: rest,
                palette,
            },
        )
    }

    pub fn subset(&self, range: std::ops::Range<usize>) -> Dataset {
        Dataset {
            samples: self.samples[range.start.min(self.len())..range.end.min(self.len())].to_vec(),
            palette: self.palette.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = Dataset::synthetic(3, 16, 16, 1).unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path(), 16, 16).unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!(back.palette, ds.palette);
        assert_eq!(Dataset::load_native(dir.path()).unwrap().samples, ds.samples);
        let (a, b) = back.split(2);
        assert_eq!((a.len(), b.len()), (2, 1));
    }

    #[test]
    fn empty_directory_is_data_error() {
        let dir = tempfile::tempdir().unwrap();
        synthetic::palette().save(dir.path().join("palette.json")).unwrap();
        std::fs::create_dir_all(dir.path().join("images")).unwrap();
        assert!(matches!(Dataset::load(dir.path(), 8, 8), Err(Error::Data(_))));
    }
}

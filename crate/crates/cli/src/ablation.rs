//! Four-setting comparison: stage one with and without ESPA, and stage two
//! with predicted versus ground-truth semantic masks.

use std::path::{Path, PathBuf};

use candle_core::DType;
use inpaint_core::checkpoint::Checkpoint;
use inpaint_core::dataset::Dataset;
use inpaint_core::evaluation::{score, Setting};
use inpaint_core::maskgen::{center_mask, MaskPolicy};
use inpaint_core::training::{train, Phase, TrainConfig};
use inpaint_core::{BinaryMask, Image, InpaintModel, ModelConfig};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use crate::eval::{default_hole, parallel_outputs, table_csv, TableRow};
use crate::output::Staging;

pub const SETTINGS: [(&str, &str); 4] = [
    ("b", "stage1 without ESPA"),
    ("c", "stage1 with ESPA"),
    ("d", "stage2 with predicted mask"),
    ("e", "stage2 with ground-truth mask"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationCheckpoints {
    /// Stage one trained without the attention branch.
    pub plain: PathBuf,
    /// Stage one trained with the attention branch.
    pub espa: PathBuf,
    /// Stage two on top of `espa`, with a trained segmenter.
    pub refined: PathBuf,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    /// Rows in the order b, c, d, e.
    pub rows: Vec<TableRow>,
    /// Columns: damaged input, b, c, d, e, original; one row per shown sample.
    pub grid: Image,
}

impl AblationReport {
    pub fn row(&self, key: &str) -> Option<&TableRow> {
        self.rows.iter().find(|r| r.setting.starts_with(&format!("({key})")))
    }
}

fn load_checkpoint(path: &Path, key: &str) -> CliResult<Checkpoint> {
    if !path.is_file() {
        return Err(CliError::Data(format!(
            "missing checkpoint for setting ({key}): {}",
            path.display()
        )));
    }
    Ok(Checkpoint::load(path)?)
}

/// Loads the three checkpoints and checks each fits its setting.
pub fn load_models(ck: &AblationCheckpoints) -> CliResult<[InpaintModel; 3]> {
    let plain = load_checkpoint(&ck.plain, "b")?;
    let espa = load_checkpoint(&ck.espa, "c")?;
    let refined = load_checkpoint(&ck.refined, "d")?;
    if plain.model.autoencoder.use_espa {
        return Err(CliError::Config(format!("{} was trained with ESPA; setting (b) needs a plain autoencoder", ck.plain.display())));
    }
    if !espa.model.autoencoder.use_espa {
        return Err(CliError::Config(format!("{} was trained without ESPA", ck.espa.display())));
    }
    let build = |c: &Checkpoint| -> CliResult<InpaintModel> {
        let mut m = InpaintModel::new(c.model.clone(), DType::F32, 0)?;
        m.restore(c)?;
        Ok(m)
    };
    let refined_model = InpaintModel::from_checkpoint(&refined, DType::F32)?;
    if !refined_model.has_trained_segmenter() {
        return Err(CliError::Data(format!(
            "{} has no trained segmenter, needed for setting (d)",
            ck.refined.display()
        )));
    }
    Ok([build(&plain)?, build(&espa)?, refined_model])
}

/// Evaluates the four settings on `data` with a centered square hole.
pub fn ablate(
    models: &[InpaintModel; 3],
    data: &Dataset,
    hole: Option<usize>,
    grid_samples: usize,
    jobs: usize,
) -> CliResult<AblationReport> {
    if data.is_empty() || !data.fully_labeled() {
        return Err(CliError::Data("held-out set must be non-empty and fully labeled".into()));
    }
    let (h, w) = (data.samples[0].image.height(), data.samples[0].image.width());
    let mask = center_mask(h, w, hole.unwrap_or_else(|| default_hole(h, w)))?;
    let [plain, espa, refined] = models;
    let runs: [(&InpaintModel, Setting); 4] = [
        (plain, Setting::Coarse),
        (espa, Setting::Coarse),
        (refined, Setting::FinePredicted),
        (refined, Setting::FineGroundTruth),
    ];
    let mut rows = Vec::new();
    let mut shown = Vec::new();
    for ((key, label), (model, setting)) in SETTINGS.iter().zip(runs) {
        let results = parallel_outputs(model, data, &mask, setting, &model.segmenter, jobs)?;
        // One extractor for every row keeps the Fréchet distances comparable.
        let s = score(refined, data, &mask, &results)?;
        log::info!("({key}) {label}: psnr {:.3} ssim {:.4} fid {:.4}", s.psnr, s.ssim, s.fid);
        rows.push(TableRow::new(format!("({key}) {label}"), &s));
        shown.push(results.into_iter().take(grid_samples).collect::<Vec<_>>());
    }
    let grid = build_grid(data, &mask, &shown, grid_samples)?;
    Ok(AblationReport { rows, grid })
}

fn build_grid(data: &Dataset, mask: &BinaryMask, shown: &[Vec<Image>], n: usize) -> CliResult<Image> {
    let n = n.min(data.len());
    let mut cells: Vec<Vec<Image>> = Vec::with_capacity(n);
    for i in 0..n {
        let original = &data.samples[i].image;
        let damaged = Image::from_fn(original.height(), original.width(), |c, y, x| {
            if mask.is_damaged(y, x) {
                1.0
            } else {
                original.data()[[c, y, x]]
            }
        })?;
        let mut row = vec![damaged];
        row.extend(shown.iter().map(|s| s[i].clone()));
        row.push(original.clone());
        cells.push(row);
    }
    tile(&cells, 2)
}

/// Lays out equally sized images on a black background with `gap` pixels between cells.
pub fn tile(cells: &[Vec<Image>], gap: usize) -> CliResult<Image> {
    let rows = cells.len().max(1);
    let cols = cells.first().map_or(1, |r| r.len().max(1));
    let (ch, cw) = cells
        .first()
        .and_then(|r| r.first())
        .map_or((1, 1), |im| (im.height(), im.width()));
    let height = rows * ch + (rows - 1) * gap;
    let width = cols * cw + (cols - 1) * gap;
    Ok(Image::from_fn(height, width, |c, y, x| {
        let (r, yy) = (y / (ch + gap), y % (ch + gap));
        let (k, xx) = (x / (cw + gap), x % (cw + gap));
        if yy >= ch || xx >= cw {
            return 0.0;
        }
        cells
            .get(r)
            .and_then(|row| row.get(k))
            .map_or(0.0, |im| im.data()[[c, yy, xx]])
    })?)
}

pub fn write_report(report: &AblationReport, out_dir: &Path) -> CliResult<()> {
    let mut staging = Staging::new(out_dir)?;
    staging.write("ablation.csv", &table_csv(&report.rows)?)?;
    staging.write("grid.png", &report.grid.encode_png()?)?;
    staging.commit()
}

/// Synthetic data and schedules for training every checkpoint the comparison needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationPlan {
    pub size: usize,
    pub train_count: usize,
    pub heldout_count: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub stage1_iters: u64,
    pub segmenter_iters: u64,
    pub stage2_iters: u64,
    #[serde(default)]
    pub masks: MaskPolicy,
}

impl AblationPlan {
    /// About two thousand 32×32 scenes, sized for a single CPU core.
    pub fn desk() -> Self {
        Self {
            size: 32,
            train_count: 1800,
            heldout_count: 200,
            seed: 2024,
            batch_size: 4,
            lr: 2e-4,
            stage1_iters: 4000,
            segmenter_iters: 4000,
            stage2_iters: 4000,
            masks: MaskPolicy::default(),
        }
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.size == 0 || !self.size.is_multiple_of(4) {
            return Err(CliError::Config(format!("size {} must be a positive multiple of 4", self.size)));
        }
        if self.train_count == 0 || self.heldout_count == 0 {
            return Err(CliError::Config("train_count and heldout_count must be positive".into()));
        }
        for (name, it) in [
            ("stage1_iters", self.stage1_iters),
            ("segmenter_iters", self.segmenter_iters),
            ("stage2_iters", self.stage2_iters),
        ] {
            if it == 0 {
                return Err(CliError::Config(format!("{name} must be positive")));
            }
        }
        self.phase_config(Phase::Stage1, true, 1, None).validate()?;
        Ok(())
    }

    /// Training scenes and disjoint held-out scenes.
    pub fn datasets(&self) -> CliResult<(Dataset, Dataset)> {
        let all = Dataset::synthetic(self.train_count + self.heldout_count, self.size, self.size, self.seed)?;
        Ok(all.split(self.train_count))
    }

    pub fn model_config(&self, use_espa: bool) -> ModelConfig {
        let mut m = ModelConfig::desk(self.size, self.size, inpaint_core::synthetic::NUM_CLASSES);
        m.autoencoder.use_espa = use_espa;
        m
    }

    fn phase_config(&self, phase: Phase, use_espa: bool, iters: u64, out: Option<PathBuf>) -> TrainConfig {
        let mut cfg = TrainConfig::new(phase);
        cfg.batch_size = self.batch_size;
        cfg.lr = self.lr;
        cfg.total_iters = iters;
        cfg.plateau_iters = iters / 2;
        cfg.seed = self.seed;
        cfg.masks = self.masks.clone();
        cfg.checkpoint_every = 0;
        cfg.out_dir = out;
        cfg.model = Some(self.model_config(use_espa));
        cfg
    }

    /// Trains (b), (c), the segmenter and stage two under `work_dir`.
    pub fn train(&self, data: &Dataset, work_dir: &Path) -> CliResult<AblationCheckpoints> {
        self.validate()?;
        let run = |name: &str, phase: Phase, use_espa: bool, iters: u64, init: Option<&Checkpoint>| -> CliResult<PathBuf> {
            let dir = work_dir.join(name);
            let cfg = self.phase_config(phase, use_espa, iters, Some(dir.clone()));
            log::info!("ablation: training {name} ({} iterations)", iters);
            let outcome = train(&cfg, data, init)?;
            for w in &outcome.warnings {
                log::warn!("{name}: {w}");
            }
            Ok(dir.join(format!("{}.ckpt", phase.as_str())))
        };
        let plain = run("plain", Phase::Stage1, false, self.stage1_iters, None)?;
        let espa = run("espa", Phase::Stage1, true, self.stage1_iters, None)?;
        let espa_ck = Checkpoint::load(&espa)?;
        let seg = run("segmenter", Phase::Segmenter, true, self.segmenter_iters, Some(&espa_ck))?;
        let seg_ck = Checkpoint::load(&seg)?;
        let refined = run("refined", Phase::Stage2, true, self.stage2_iters, Some(&seg_ck))?;
        Ok(AblationCheckpoints { plain, espa, refined })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tile_places_cells() {
        let a = Image::filled(2, 2, 0.25).unwrap();
        let b = Image::filled(2, 2, 0.75).unwrap();
        let g = tile(&[vec![a.clone(), b.clone()], vec![b, a]], 1).unwrap();
        assert_eq!((g.height(), g.width()), (5, 5));
        assert_eq!(g.pixel(0, 0), [0.25; 3]);
        assert_eq!(g.pixel(0, 3), [0.75; 3]);
        assert_eq!(g.pixel(2, 2), [0.0; 3]);
        assert_eq!(g.pixel(4, 4), [0.25; 3]);
    }

    #[test]
    fn plan_round_trips_through_toml() {
        let p = AblationPlan::desk();
        let back: AblationPlan = toml::from_str(&toml::to_string(&p).unwrap()).unwrap();
        assert_eq!(back, p);
        p.validate().unwrap();
    }
}

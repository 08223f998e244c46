use inpaint_core::dataset::Dataset;
use inpaint_core::evaluation::{outputs, score, Scores, Setting};
use inpaint_core::networks::Segmenter;
use inpaint_core::{BinaryMask, Image, InpaintModel};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

/// One line of a metric table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub setting: String,
    pub psnr: f64,
    pub ssim: f64,
    pub fid: f64,
}

impl TableRow {
    pub fn new(setting: impl Into<String>, s: &Scores) -> Self {
        Self {
            setting: setting.into(),
            psnr: s.psnr,
            ssim: s.ssim,
            fid: s.fid,
        }
    }
}

pub fn setting_name(s: Setting) -> &'static str {
    match s {
        Setting::Coarse => "coarse",
        Setting::FinePredicted => "fine_predicted",
        Setting::FineGroundTruth => "fine_ground_truth",
    }
}

pub fn parse_setting(s: &str) -> CliResult<Setting> {
    match s {
        "coarse" => Ok(Setting::Coarse),
        "fine_predicted" => Ok(Setting::FinePredicted),
        "fine_ground_truth" => Ok(Setting::FineGroundTruth),
        other => Err(CliError::Config(format!(
            "unknown setting `{other}` (expected coarse, fine_predicted or fine_ground_truth)"
        ))),
    }
}

/// Composited outputs, computed on up to `jobs` threads over contiguous
/// chunks of the dataset. Order matches the dataset.
pub fn parallel_outputs(
    model: &InpaintModel,
    data: &Dataset,
    mask: &BinaryMask,
    setting: Setting,
    segmenter: &dyn Segmenter,
    jobs: usize,
) -> CliResult<Vec<Image>> {
    let jobs = jobs.clamp(1, data.len().max(1));
    if jobs == 1 {
        return Ok(outputs(model, data, mask, setting, segmenter)?);
    }
    let chunk = data.len().div_ceil(jobs);
    let parts: Vec<_> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..jobs)
            .map(|j| {
                let part = data.subset(j * chunk..(j + 1) * chunk);
                scope.spawn(move || outputs(model, &part, mask, setting, segmenter))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("evaluation worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(data.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

pub fn evaluate_parallel(
    model: &InpaintModel,
    data: &Dataset,
    mask: &BinaryMask,
    setting: Setting,
    segmenter: &dyn Segmenter,
    jobs: usize,
) -> CliResult<Scores> {
    let results = parallel_outputs(model, data, mask, setting, segmenter, jobs)?;
    Ok(score(model, data, mask, &results)?)
}

pub fn table_csv(rows: &[TableRow]) -> CliResult<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| CliError::Data(e.to_string()))
}

pub fn read_table(bytes: &[u8]) -> CliResult<Vec<TableRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    r.deserialize().map(|row| row.map_err(CliError::from)).collect()
}

/// Default evaluation hole: a centered square of half the shorter side.
pub fn default_hole(height: usize, width: usize) -> usize {
    height.min(width) / 2
}

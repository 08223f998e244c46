use std::path::Path;

use candle_core::{Device, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    discriminator_adversarial, generator_adversarial, l1_loss, masked_l1_loss, perceptual_loss,
};
use crate::maskgen::MaskSampler;
use crate::networks::ModelConfig;
use crate::nn::{self, scalar};
use crate::pipeline::{InpaintModel, DISCRIMINATOR, SEGMENTER, STAGE1, STAGE2};
use crate::util::write_atomic;

use super::config::{Phase, TrainConfig};
use super::optim::Adam;

/// Discriminator loss below which a step counts towards collapse detection.
pub const COLLAPSE_THRESHOLD: f64 = 1e-6;
/// Consecutive collapsed steps that trigger a warning.
pub const COLLAPSE_STEPS: u32 = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: u64,
    pub loss_name: String,
    pub value: f64,
}

pub struct TrainOutcome {
    pub model: InpaintModel,
    pub checkpoint: Checkpoint,
    pub losses: Vec<LossRecord>,
    pub warnings: Vec<String>,
}

impl TrainOutcome {
    /// Values of one named loss in iteration order.
    pub fn curve(&self, name: &str) -> Vec<f64> {
        self.losses
            .iter()
            .filter(|r| r.loss_name == name)
            .map(|r| r.value)
            .collect()
    }
}

/// Seed-determined epoch shuffling plus mask sampling.
struct Batcher {
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    masks: MaskSampler,
}

struct Batch {
    target: Tensor,
    mask: Tensor,
    masked: Tensor,
    segmap: Option<Tensor>,
}

impl Batcher {
    fn new(cfg: &TrainConfig, n: usize, model: &ModelConfig) -> Result<Self> {
        let masks = MaskSampler::new(cfg.masks.clone(), model.height, model.width, cfg.seed ^ 0x3A5C_0001)?;
        let mut b = Self {
            order: (0..n).collect(),
            cursor: n,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xDA7A_0002),
            masks,
        };
        b.order.shuffle(&mut b.rng);
        b.cursor = 0;
        Ok(b)
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    fn next(&mut self, data: &Dataset, batch: usize, model: &InpaintModel) -> Result<Batch> {
        let dtype = model.dtype();
        let idx: Vec<usize> = (0..batch).map(|_| self.next_index()).collect();
        let masks = idx
            .iter()
            .map(|_| self.masks.sample())
            .collect::<Result<Vec<_>>>()?;
        let images: Vec<_> = idx.iter().map(|&i| &data.samples[i].image).collect();
        let target = nn::images_to_tensor(&images, dtype, &Device::Cpu)?;
        let mask = nn::masks_to_tensor(&masks.iter().collect::<Vec<_>>(), dtype, &Device::Cpu)?;
        let masked = target.broadcast_mul(&(1.0 - &mask)?)?;
        let labels: Option<Vec<_>> = idx.iter().map(|&i| data.samples[i].labels.as_ref()).collect();
        let segmap = match labels {
            Some(l) => Some(nn::one_hot_to_tensor(&l, dtype, &Device::Cpu)?),
            None => None,
        };
        Ok(Batch {
            target,
            mask,
            masked,
            segmap,
        })
    }
}

struct Recorder {
    losses: Vec<LossRecord>,
    iteration: u64,
}

impl Recorder {
    fn record(&mut self, name: &str, t: &Tensor) -> Result<f64> {
        let value = scalar(t)?;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                loss: name.to_string(),
                iteration: self.iteration as usize,
            });
        }
        self.losses.push(LossRecord {
            iteration: self.iteration,
            loss_name: name.to_string(),
            value,
        });
        Ok(value)
    }
}

fn weighted(t: &Tensor, w: f64) -> Result<Tensor> {
    Ok((t * w)?)
}

/// Reconstruction terms on one generator output; returns the weighted sum.
fn reconstruction(
    rec: &mut Recorder,
    prefix: &str,
    pred: &Tensor,
    batch: &Batch,
    model: &InpaintModel,
    cfg: &TrainConfig,
) -> Result<Tensor> {
    let l_rec = l1_loss(pred, &batch.target)?;
    rec.record(&format!("{prefix}_rec"), &l_rec)?;
    let mut total = weighted(&l_rec, cfg.weights.rec)?;
    if cfg.weights.per > 0.0 {
        let l_per = perceptual_loss(pred, &batch.target, &model.extractor)?;
        rec.record(&format!("{prefix}_per"), &l_per)?;
        total = (total + weighted(&l_per, cfg.weights.per)?)?;
    }
    if cfg.hole_l1_weight > 0.0 {
        let l_hole = masked_l1_loss(pred, &batch.target, &batch.mask)?;
        rec.record(&format!("{prefix}_hole"), &l_hole)?;
        total = (total + weighted(&l_hole, cfg.hole_l1_weight)?)?;
    }
    Ok(total)
}

pub fn write_loss_log(path: &Path, losses: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in losses {
        w.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    write_atomic(path, &bytes)
}

pub fn read_loss_log(path: &Path) -> Result<Vec<LossRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    r.deserialize()
        .map(|rec| rec.map_err(|e| Error::Data(e.to_string())))
        .collect()
}

fn check_inputs(cfg: &TrainConfig, data: &Dataset, init: Option<&Checkpoint>) -> Result<()> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Data("training dataset is empty".into()));
    }
    if cfg.phase != Phase::Stage1 && !data.fully_labeled() {
        return Err(Error::Data(format!(
            "phase {} needs ground-truth semantic masks for every sample",
            cfg.phase.as_str()
        )));
    }
    let need = match cfg.phase {
        Phase::Stage2 => Some(STAGE1),
        Phase::Joint => Some(STAGE2),
        _ => None,
    };
    if let Some(group) = need {
        match init {
            Some(ck) if ck.has_group(group) => {}
            _ => {
                return Err(Error::Config(format!(
                    "phase {} starts from a checkpoint containing `{group}` parameters",
                    cfg.phase.as_str()
                )))
            }
        }
    }
    Ok(())
}

fn resolve_model(cfg: &TrainConfig, data: &Dataset, init: Option<&Checkpoint>) -> ModelConfig {
    if let Some(m) = &cfg.model {
        return m.clone();
    }
    if let Some(ck) = init {
        return ck.model.clone();
    }
    let first = &data.samples[0].image;
    ModelConfig::desk(first.height(), first.width(), data.palette.len())
}

/// Runs one training phase. `init` seeds the networks (required for `stage2`
/// and `joint`). Writes checkpoints and the loss log when `cfg.out_dir` is set.
pub fn train(cfg: &TrainConfig, data: &Dataset, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    check_inputs(cfg, data, init)?;
    let data = match cfg.train_count {
        Some(n) => data.subset(0..n),
        None => data.clone(),
    };
    if data.is_empty() {
        return Err(Error::Data("train_count selects no samples".into()));
    }
    let model_cfg = resolve_model(cfg, &data, init);
    let first = &data.samples[0].image;
    if (first.height(), first.width()) != (model_cfg.height, model_cfg.width) {
        return Err(Error::Data(format!(
            "dataset images are {}×{}, model expects {}×{}",
            first.height(),
            first.width(),
            model_cfg.height,
            model_cfg.width
        )));
    }
    let mut model = InpaintModel::new(model_cfg, cfg.precision.dtype(), cfg.seed)?;
    if let Some(ck) = init {
        model.restore(ck)?;
    }

    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let mut gen_opt = match cfg.phase {
        Phase::Stage1 => Adam::over_groups(&[(STAGE1, &model.stage1)], b1, b2)?,
        Phase::Stage2 => Adam::over_groups(&[(STAGE2, &model.stage2)], b1, b2)?,
        Phase::Joint => Adam::over_groups(&[(STAGE1, &model.stage1), (STAGE2, &model.stage2)], b1, b2)?,
        Phase::Segmenter => Adam::over_groups(&[(SEGMENTER, &model.seg)], b1, b2)?,
    };
    let adversarial = matches!(cfg.phase, Phase::Stage2 | Phase::Joint);
    let mut disc_opt = if adversarial {
        Some(Adam::over_groups(&[(DISCRIMINATOR, &model.disc)], b1, b2)?)
    } else {
        None
    };

    let schedule = cfg.schedule()?;
    let mut batcher = Batcher::new(cfg, data.len(), &model.config)?;
    let mut rec = Recorder {
        losses: Vec::new(),
        iteration: 0,
    };
    let mut warnings = Vec::new();
    let mut collapsed = 0u32;
    let snapshot = serde_json::to_value(cfg)?;
    let phase = cfg.phase.as_str();

    let make_checkpoint = |model: &InpaintModel, it: u64, g: &Adam, d: Option<&Adam>| -> Result<Checkpoint> {
        let mut ck = model.to_checkpoint(it, snapshot.clone());
        g.save_into(&mut ck, &format!("optim/{phase}/generator"))?;
        if let Some(d) = d {
            d.save_into(&mut ck, &format!("optim/{phase}/discriminator"))?;
        }
        Ok(ck)
    };

    for step in 0..cfg.total_iters {
        let it = step + 1;
        rec.iteration = it;
        let lr = schedule.lr_at(step)?;
        let batch = batcher.next(&data, cfg.batch_size, &model)?;
        match cfg.phase {
            Phase::Stage1 => {
                let out = model.autoencoder.forward(&batch.masked, &batch.mask)?;
                let total = reconstruction(&mut rec, "coarse", &out.coarse, &batch, &model, cfg)?;
                rec.record("stage1_total", &total)?;
                gen_opt.step(&total.backward()?, lr)?;
            }
            Phase::Segmenter => {
                let seg = batch.segmap.as_ref().expect("labels checked");
                let loss = model.segmenter.cross_entropy(&batch.target, seg)?;
                rec.record("segmenter_ce", &loss)?;
                gen_opt.step(&loss.backward()?, lr)?;
            }
            Phase::Stage2 | Phase::Joint => {
                let seg = batch.segmap.as_ref().expect("labels checked");
                let out = model.autoencoder.forward(&batch.masked, &batch.mask)?;
                let features = if cfg.phase == Phase::Stage2 {
                    out.features.detach()
                } else {
                    out.features.clone()
                };
                let fake = model.decoder.forward(&features, seg)?;

                let d_real = model.discriminator.forward(&batch.target)?;
                let d_fake = model.discriminator.forward(&fake.detach())?;
                let d_loss = discriminator_adversarial(&d_real, &d_fake)?;
                let d_value = rec.record("d_loss", &d_loss)?;
                disc_opt
                    .as_mut()
                    .expect("adversarial phase")
                    .step(&d_loss.backward()?, lr)?;
                if d_value < COLLAPSE_THRESHOLD {
                    collapsed += 1;
                    if collapsed == COLLAPSE_STEPS {
                        let msg = format!(
                            "discriminator loss below {COLLAPSE_THRESHOLD} for {COLLAPSE_STEPS} consecutive steps (iteration {it})"
                        );
                        log::warn!("{msg}");
                        warnings.push(msg);
                    }
                } else {
                    collapsed = 0;
                }

                let g_adv = generator_adversarial(&model.discriminator.forward(&fake)?)?;
                rec.record("g_adv", &g_adv)?;
                let mut total = reconstruction(&mut rec, "fine", &fake, &batch, &model, cfg)?;
                total = (total + weighted(&g_adv, cfg.weights.adv)?)?;
                rec.record("stage2_total", &total)?;
                if cfg.phase == Phase::Joint {
                    let coarse = reconstruction(&mut rec, "coarse", &out.coarse, &batch, &model, cfg)?;
                    total = (total + coarse)?;
                    rec.record("joint_total", &total)?;
                }
                // Gradients reach the discriminator too, but only generator
                // variables are stepped here.
                gen_opt.step(&total.backward()?, lr)?;
            }
        }
        if let Some(dir) = &cfg.out_dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 && it < cfg.total_iters {
                make_checkpoint(&model, it, &gen_opt, disc_opt.as_ref())?
                    .save(dir.join(format!("{phase}-{it:07}.ckpt")))?;
                write_loss_log(&dir.join(format!("{phase}_losses.csv")), &rec.losses)?;
            }
        }
        if it % 100 == 0 {
            log::info!("{phase} iteration {it}/{} lr {lr:.3e}", cfg.total_iters);
        }
    }
    if cfg.phase == Phase::Segmenter {
        model.mark_segmenter_trained();
    }
    let checkpoint = make_checkpoint(&model, cfg.total_iters, &gen_opt, disc_opt.as_ref())?;
    if let Some(dir) = &cfg.out_dir {
        checkpoint.save(dir.join(format!("{phase}.ckpt")))?;
        write_loss_log(&dir.join(format!("{phase}_losses.csv")), &rec.losses)?;
    }
    Ok(TrainOutcome {
        model,
        checkpoint,
        losses: rec.losses,
        warnings,
    })
}

pub fn train_stage1(cfg: &TrainConfig, data: &Dataset) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        phase: Phase::Stage1,
        ..cfg.clone()
    };
    train(&cfg, data, None)
}

pub fn train_stage2(cfg: &TrainConfig, data: &Dataset, stage1: &Checkpoint) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        phase: Phase::Stage2,
        ..cfg.clone()
    };
    train(&cfg, data, Some(stage1))
}

pub fn train_joint(cfg: &TrainConfig, data: &Dataset, stage2: &Checkpoint) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        phase: Phase::Joint,
        ..cfg.clone()
    };
    train(&cfg, data, Some(stage2))
}

pub fn train_segmenter(cfg: &TrainConfig, data: &Dataset, init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    let cfg = TrainConfig {
        phase: Phase::Segmenter,
        ..cfg.clone()
    };
    train(&cfg, data, init)
}

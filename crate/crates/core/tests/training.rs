use candle_core::{DType, Device, Tensor};
use ndarray::Array2;

use inpaint_core::checkpoint::Checkpoint;
use inpaint_core::dataset::Dataset;
use inpaint_core::losses::{l1_loss, masked_l1_loss, perceptual_loss};
use inpaint_core::maskgen::{center_mask, MaskPolicy};
use inpaint_core::nn::{self, scalar, VarStore};
use inpaint_core::training::{
    read_loss_log, train, train_joint, train_stage1, train_stage2, Adam, Phase, TrainConfig, TrainOutcome,
};
use inpaint_core::{apply_mask, InpaintModel, SemanticMask};

const SIZE: usize = 32;

fn data() -> Dataset {
    Dataset::synthetic(8, SIZE, SIZE, 17).unwrap()
}

fn config(phase: Phase, iters: u64) -> TrainConfig {
    TrainConfig {
        total_iters: iters,
        plateau_iters: iters / 2,
        batch_size: 2,
        seed: 9,
        ..TrainConfig::new(phase)
    }
}

fn early_late(curve: &[f64], window: usize) -> (f64, f64) {
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    (mean(&curve[..window]), mean(&curve[curve.len() - window..]))
}

/// Stage-two reconstruction objective (L1, perceptual, hole L1) over the
/// whole set with fixed centered holes and ground-truth labels.
fn fine_objective(model: &InpaintModel, data: &Dataset) -> f64 {
    let mask = center_mask(SIZE, SIZE, SIZE / 2).unwrap();
    let dev = Device::Cpu;
    let mut total = 0.0;
    for s in &data.samples {
        let target = nn::image_to_tensor(&s.image, model.dtype(), &dev).unwrap();
        let m = nn::mask_to_tensor(&mask, model.dtype(), &dev).unwrap();
        let masked = nn::image_to_tensor(&apply_mask(&s.image, &mask).unwrap(), model.dtype(), &dev).unwrap();
        let seg = nn::one_hot_to_tensor(&[s.labels.as_ref().unwrap()], model.dtype(), &dev).unwrap();
        let out = model.autoencoder.forward(&masked, &m).unwrap();
        let fine = model.decoder.forward(&out.features, &seg).unwrap();
        let l = scalar(&l1_loss(&fine, &target).unwrap()).unwrap()
            + scalar(&perceptual_loss(&fine, &target, &model.extractor).unwrap()).unwrap()
            + scalar(&masked_l1_loss(&fine, &target, &m).unwrap()).unwrap();
        total += l;
    }
    total / data.len() as f64
}

fn coarse_of(model: &InpaintModel, data: &Dataset) -> Vec<Vec<f32>> {
    let mask = center_mask(SIZE, SIZE, 12).unwrap();
    data.samples
        .iter()
        .map(|s| model.coarse(&s.image, &mask).unwrap().coarse.to_vec())
        .collect()
}

fn fine_of(model: &InpaintModel, data: &Dataset) -> Vec<Vec<f32>> {
    let mask = center_mask(SIZE, SIZE, 12).unwrap();
    data.samples
        .iter()
        .map(|s| {
            let c = model.coarse(&s.image, &mask).unwrap();
            model
                .refine(&c.features, s.labels.as_ref().unwrap(), &s.image, &mask)
                .unwrap()
                .0
                .to_vec()
        })
        .collect()
}

fn assert_bitwise_equal_curves(a: &TrainOutcome, b: &TrainOutcome) {
    assert!(!a.losses.is_empty());
    assert_eq!(a.losses.len(), b.losses.len());
    for (x, y) in a.losses.iter().zip(&b.losses) {
        assert_eq!(x.loss_name, y.loss_name);
        assert_eq!(x.value.to_bits(), y.value.to_bits(), "{} at {}", x.loss_name, x.iteration);
    }
}

#[test]
fn three_phases_descend_and_joint_does_not_regress() {
    let d = data();
    let s1 = train_stage1(&config(Phase::Stage1, 500), &d).unwrap();
    let (first, last) = early_late(&s1.curve("stage1_total"), 25);
    assert!(last < first, "stage 1 did not descend: {first} → {last}");

    let s2 = train_stage2(&config(Phase::Stage2, 500), &d, &s1.checkpoint).unwrap();
    let (first, last) = early_late(&s2.curve("fine_rec"), 25);
    assert!(last < first, "stage 2 did not descend: {first} → {last}");
    // Stage one is frozen while stage two trains.
    assert_eq!(coarse_of(&s2.model, &d), coarse_of(&s1.model, &d));

    // Two semantic masks over identical features give different results.
    let mask = center_mask(SIZE, SIZE, 12).unwrap();
    let sample = &d.samples[0];
    let c = s2.model.coarse(&sample.image, &mask).unwrap();
    let gt = sample.labels.as_ref().unwrap();
    let other = SemanticMask::new(Array2::from_shape_fn((SIZE, SIZE), |(y, _)| (y * 4 / SIZE) as u16), gt.num_classes()).unwrap();
    let (fa, _) = s2.model.refine(&c.features, gt, &sample.image, &mask).unwrap();
    let (fb, _) = s2.model.refine(&c.features, &other, &sample.image, &mask).unwrap();
    let diff: f32 = fa.to_vec().iter().zip(fb.to_vec()).map(|(a, b)| (a - b).abs()).sum::<f32>() / fa.to_vec().len() as f32;
    assert!(diff > 0.0);

    let before = fine_objective(&s2.model, &d);
    let joint = train_joint(&config(Phase::Joint, 200), &d, &s2.checkpoint).unwrap();
    let after = fine_objective(&joint.model, &d);
    assert!(after <= before * 1.05, "joint {after} vs stage-2 only {before}");
    assert!(!joint.curve("joint_total").is_empty());

    // Serialization identity of the fine-tuned model.
    let bytes = joint.checkpoint.to_bytes().unwrap();
    let back = InpaintModel::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap(), DType::F32).unwrap();
    assert_eq!(fine_of(&back, &d), fine_of(&joint.model, &d));
    assert_eq!(coarse_of(&back, &d), coarse_of(&joint.model, &d));
}

#[test]
fn fixed_seed_gives_bitwise_identical_curves() {
    let d = data();
    let c1 = config(Phase::Stage1, 12);
    let a = train(&c1, &d, None).unwrap();
    assert_bitwise_equal_curves(&a, &train(&c1, &d, None).unwrap());
    let c2 = config(Phase::Stage2, 8);
    let b = train(&c2, &d, Some(&a.checkpoint)).unwrap();
    assert_bitwise_equal_curves(&b, &train(&c2, &d, Some(&a.checkpoint)).unwrap());
    let c3 = config(Phase::Joint, 6);
    let j = train(&c3, &d, Some(&b.checkpoint)).unwrap();
    assert_bitwise_equal_curves(&j, &train(&c3, &d, Some(&b.checkpoint)).unwrap());
    // A different seed changes the curve.
    let other = train(&TrainConfig { seed: 10, ..c1 }, &d, None).unwrap();
    assert_ne!(a.curve("stage1_total"), other.curve("stage1_total"));
}

#[test]
fn generator_step_leaves_discriminator_untouched() {
    let dev = Device::Cpu;
    let gen = VarStore::new(DType::F64, 1);
    let disc = VarStore::new(DType::F64, 2);
    let g = gen.root().var("w", &[4], nn::Init::Normal(1.0)).unwrap();
    let d = disc.root().var("w", &[4], nn::Init::Normal(1.0)).unwrap();
    let x = Tensor::new(&[1.0f64, -2.0, 0.5, 3.0], &dev).unwrap();
    // The loss depends on both stores, so both receive gradients.
    let loss = ((&g * &x).unwrap() * &d).unwrap().sum_all().unwrap();
    let grads = loss.backward().unwrap();
    let d_before: Vec<f64> = d.to_vec1().unwrap();
    let g_before: Vec<f64> = g.to_vec1().unwrap();
    let mut opt = Adam::over_groups(&[("gen", &gen)], 0.0, 0.9).unwrap();
    opt.step(&grads, 1e-2).unwrap();
    assert_eq!(disc.get("w").unwrap().as_tensor().to_vec1::<f64>().unwrap(), d_before);
    assert_ne!(gen.get("w").unwrap().as_tensor().to_vec1::<f64>().unwrap(), g_before);
}

#[test]
fn outputs_land_in_out_dir_and_resume_from_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let d = data();
    let cfg = TrainConfig {
        out_dir: Some(dir.path().to_path_buf()),
        checkpoint_every: 4,
        masks: MaskPolicy::Center { hole: 16 },
        ..config(Phase::Stage1, 10)
    };
    let out = train(&cfg, &d, None).unwrap();
    for name in ["stage1.ckpt", "stage1-0000004.ckpt", "stage1-0000008.ckpt", "stage1_losses.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let log = read_loss_log(&dir.path().join("stage1_losses.csv")).unwrap();
    assert_eq!(log, out.losses);
    let ck = Checkpoint::load(dir.path().join("stage1.ckpt")).unwrap();
    let back = InpaintModel::from_checkpoint(&ck, DType::F32).unwrap();
    assert_eq!(coarse_of(&back, &d), coarse_of(&out.model, &d));
    // Stage two refuses to start without a stage-one checkpoint.
    assert!(train(&config(Phase::Stage2, 2), &d, None).is_err());
}

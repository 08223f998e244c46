//! Self-contained check suites. Each returns named pass/fail results so the
//! same code backs the integration tests and the acceptance report.

use std::time::Instant;

use candle_core::{DType, Device, Result, Tensor, Var};
use ndarray::{Array2, Array4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use inpaint_core::espa::{
    attention_macs, blend_query, full_self_attention, AttentionKind, Espa, EspaConfig, ExternalActivation,
    ExternalMatrices, ExternalOperator,
};
use inpaint_core::losses::{
    discriminator_adversarial, generator_adversarial, l1_loss, masked_l1_loss, perceptual_loss, stage1_total,
    stage2_total, FeatureExtractor, LossWeights,
};
use inpaint_core::metrics::{frechet_distance, psnr, ssim};
use inpaint_core::networks::{Autoencoder, PatchDiscriminator, SemanticDecoder, SpadeLayer};
use inpaint_core::nn::{scalar, Conv2d, ConvSpec, Linear, VarStore, NORM_EPS};
use inpaint_core::{AutoencoderConfig, DiscriminatorConfig, Image, SemanticDecoderConfig};

use crate::gradcheck::{self, GradReport};
use crate::oracles::{self as o, ConvParams, DenseOperator};

pub const ORACLE_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.into(),
            passed,
            detail,
        }
    }

    /// `PASS name: detail` or `FAIL name: detail`.
    pub fn line(&self) -> String {
        format!("{} {}: {}", if self.passed { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

fn dev() -> Device {
    Device::Cpu
}

fn rand_array(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Array4<f64> {
    Array4::from_shape_fn(shape, |_| rng.random_range(lo..hi))
}

fn rand_mask(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), p: f64) -> Array4<f64> {
    Array4::from_shape_fn(shape, |_| if rng.random_bool(p) { 1.0 } else { 0.0 })
}

fn rand_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
    Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
}

fn mat_tensor(a: &Array2<f64>) -> Tensor {
    Tensor::from_vec(a.iter().cloned().collect::<Vec<_>>(), a.dim(), &dev()).unwrap()
}

fn vec_tensor(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec(), v.len(), &dev()).unwrap()
}

fn rand_conv(rng: &mut ChaCha8Rng, cout: usize, cin: usize, k: usize) -> ConvParams {
    ConvParams {
        weight: rand_array(rng, (cout, cin, k, k), -0.5, 0.5),
        bias: rand_vec(rng, cout),
    }
}

fn conv_module(p: &ConvParams, spec: ConvSpec) -> Conv2d {
    Conv2d::from_tensors(o::to_tensor(&p.weight), Some(vec_tensor(&p.bias)), spec)
}

fn rand_operator(rng: &mut ChaCha8Rng, n: usize, d: usize) -> (DenseOperator, ExternalOperator) {
    let dense = DenseOperator {
        w1: rand_matrix(rng, d, n),
        b1: rand_vec(rng, d),
        w2: rand_matrix(rng, n, d),
        b2: rand_vec(rng, n),
    };
    let op = ExternalOperator::from_linears(
        Linear::from_tensors(mat_tensor(&dense.w1), Some(vec_tensor(&dense.b1))),
        Linear::from_tensors(mat_tensor(&dense.w2), Some(vec_tensor(&dense.b2))),
    );
    (dense, op)
}

fn identity_operator(n: usize) -> ExternalOperator {
    let eye = Tensor::eye(n, DType::F64, &dev()).unwrap();
    ExternalOperator::from_linears(Linear::from_tensors(eye.clone(), None), Linear::from_tensors(eye, None))
}

fn summarize(name: &str, errs: &[f64], extra: &str) -> Check {
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    Check::new(
        name,
        !errs.is_empty() && worst <= ORACLE_TOLERANCE,
        format!("{} instances, max rel err {worst:.2e}{extra}", errs.len()),
    )
}

fn run_oracle_case(name: &str, instances: usize, seed: u64, mut case: impl FnMut(&mut ChaCha8Rng) -> Result<f64>) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut errs = Vec::with_capacity(instances);
    for _ in 0..instances {
        match case(&mut rng) {
            Ok(e) => errs.push(e),
            Err(e) => return Check::new(name, false, format!("error: {e}")),
        }
    }
    summarize(name, &errs, "")
}

pub fn composite_query_oracle(instances: usize, seed: u64) -> Check {
    run_oracle_case("composite_query", instances, seed, |rng| {
        let (b, c) = (rng.random_range(1..3), rng.random_range(1..5));
        let (h, w) = (rng.random_range(1..5), rng.random_range(1..5));
        let f = [1, 2, 4][rng.random_range(0..3)];
        let f_in = rand_array(rng, (b, c, h, w), -2.0, 2.0);
        let ctx = rand_array(rng, (b, 3, h * f, w * f), 0.0, 1.0);
        let mask = rand_mask(rng, (b, 1, h * f, w * f), 0.3);
        let proj = rand_conv(rng, c, 3, 1);
        let cfg = EspaConfig::new(c, h, w);
        let store = VarStore::new(DType::F64, 0);
        let matrices = ExternalMatrices::new(&store.root(), &cfg).map_err(to_candle)?;
        let espa = Espa::from_parts(conv_module(&proj, ConvSpec::same(1)), matrices, cfg);
        let got = espa
            .composite_query(&o::to_tensor(&f_in), &o::to_tensor(&ctx), &o::to_tensor(&mask))
            .map_err(to_candle)?;
        let want = o::composite_query(&f_in, &ctx, &mask, &proj.weight, &proj.bias);
        Ok(o::rel_err(&o::to_vec(&got), &want.iter().cloned().collect::<Vec<_>>()))
    })
}

fn to_candle(e: inpaint_core::Error) -> candle_core::Error {
    candle_core::Error::Msg(e.to_string())
}

fn flat(a: &Array4<f64>) -> Vec<f64> {
    a.iter().cloned().collect()
}

pub fn external_attention_oracle(instances: usize, seed: u64) -> Vec<Check> {
    let dense = run_oracle_case("external_attention vs dense matmul", instances, seed, |rng| {
        let (b, c) = (rng.random_range(1..3), rng.random_range(1..4));
        let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
        let (dk, dv) = (rng.random_range(1..6), rng.random_range(1..6));
        let relu = rng.random_bool(0.5);
        let (kd, key) = rand_operator(rng, h, dk);
        let (vd, value) = rand_operator(rng, w, dv);
        let act = if relu { ExternalActivation::Relu } else { ExternalActivation::Identity };
        let m = ExternalMatrices::from_operators(key, value, act);
        let q = rand_array(rng, (b, c, h, w), -1.0, 1.0);
        let got = m.forward(&o::to_tensor(&q)).map_err(to_candle)?;
        Ok(o::rel_err(&o::to_vec(&got), &flat(&o::external_attention(&q, &kd, &vd, relu))))
    });
    let identity = run_oracle_case("external_attention identity operators", instances, seed + 1, |rng| {
        let (h, w) = (rng.random_range(1..7), rng.random_range(1..7));
        let m = ExternalMatrices::from_operators(identity_operator(h), identity_operator(w), ExternalActivation::Identity);
        let q = rand_array(rng, (2, 3, h, w), -1.0, 1.0);
        let got = m.forward(&o::to_tensor(&q)).map_err(to_candle)?;
        Ok(o::rel_err(&o::to_vec(&got), &flat(&q)))
    });
    let batch = run_oracle_case("external_attention batch independence", instances, seed + 2, |rng| {
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let (dk, dv) = (rng.random_range(1..5), rng.random_range(1..5));
        let (_, key) = rand_operator(rng, h, dk);
        let (_, value) = rand_operator(rng, w, dv);
        let m = ExternalMatrices::from_operators(key, value, ExternalActivation::Relu);
        let q = o::to_tensor(&rand_array(rng, (3, 2, h, w), -1.0, 1.0));
        let together = o::to_vec(&m.forward(&q).map_err(to_candle)?);
        let mut apart = Vec::new();
        for i in 0..3 {
            apart.extend(o::to_vec(&m.forward(&q.narrow(0, i, 1)?).map_err(to_candle)?));
        }
        Ok(o::rel_err(&together, &apart))
    });
    let superposition = run_oracle_case("external_attention superposition (linear, bias-free)", instances, seed + 3, |rng| {
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let lin = |rng: &mut ChaCha8Rng, n: usize, d: usize| {
            ExternalOperator::from_linears(
                Linear::from_tensors(mat_tensor(&rand_matrix(rng, d, n)), None),
                Linear::from_tensors(mat_tensor(&rand_matrix(rng, n, d)), None),
            )
        };
        let (dk, dv) = (rng.random_range(1..5), rng.random_range(1..5));
        let m = ExternalMatrices::from_operators(lin(rng, h, dk), lin(rng, w, dv), ExternalActivation::Identity);
        let (a, b) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let q1 = o::to_tensor(&rand_array(rng, (1, 2, h, w), -1.0, 1.0));
        let q2 = o::to_tensor(&rand_array(rng, (1, 2, h, w), -1.0, 1.0));
        let mix = ((&q1 * a)? + (&q2 * b)?)?;
        let lhs = o::to_vec(&m.forward(&mix).map_err(to_candle)?);
        let rhs = ((m.forward(&q1).map_err(to_candle)? * a)? + (m.forward(&q2).map_err(to_candle)? * b)?)?;
        Ok(o::rel_err(&lhs, &o::to_vec(&rhs)))
    });
    vec![dense, identity, batch, superposition]
}

fn one_hot(rng: &mut ChaCha8Rng, b: usize, k: usize, h: usize, w: usize) -> Array4<f64> {
    let mut a = Array4::zeros((b, k, h, w));
    for s in 0..b {
        for y in 0..h {
            for x in 0..w {
                a[[s, rng.random_range(0..k), y, x]] = 1.0;
            }
        }
    }
    a
}

pub fn spade_oracle(instances: usize, seed: u64) -> Check {
    run_oracle_case("spade_layer", instances, seed, |rng| {
        let (b, c, k, hid) = (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(2..5), rng.random_range(1..4));
        let (h, w) = (rng.random_range(2..6), rng.random_range(2..6));
        let f = rng.random_range(1..3);
        let x = rand_array(rng, (b, c, h, w), -2.0, 2.0);
        let seg = one_hot(rng, b, k, h * f, w * f);
        let (sh, g, bt) = (rand_conv(rng, hid, k, 3), rand_conv(rng, c, hid, 3), rand_conv(rng, c, hid, 3));
        let layer = SpadeLayer::from_parts(
            conv_module(&sh, ConvSpec::same(3)),
            conv_module(&g, ConvSpec::same(3)),
            conv_module(&bt, ConvSpec::same(3)),
        );
        let got = layer.forward(&o::to_tensor(&x), &o::to_tensor(&seg)).map_err(to_candle)?;
        Ok(o::rel_err(&o::to_vec(&got), &flat(&o::spade(&x, &seg, &sh, &g, &bt, NORM_EPS))))
    })
}

fn rand_extractor(rng: &mut ChaCha8Rng, stages: usize) -> (Vec<ConvParams>, FeatureExtractor) {
    let mut cin = 3;
    let mut params = Vec::new();
    for _ in 0..stages {
        let cout = rng.random_range(1..4);
        params.push(rand_conv(rng, cout, cin, 3));
        cin = cout;
    }
    let fx = FeatureExtractor::from_weights(
        params
            .iter()
            .map(|p| (o::to_tensor(&p.weight), vec_tensor(&p.bias)))
            .collect(),
    )
    .unwrap();
    (params, fx)
}

pub fn loss_oracles(instances: usize, seed: u64) -> Vec<Check> {
    let shape = |rng: &mut ChaCha8Rng| (rng.random_range(1..3), rng.random_range(1..4), rng.random_range(1..6), rng.random_range(1..6));
    let l1 = run_oracle_case("l1_loss", instances, seed, |rng| {
        let s = shape(rng);
        let (a, b) = (rand_array(rng, s, 0.0, 1.0), rand_array(rng, s, 0.0, 1.0));
        Ok(o::scalar_rel_err(scalar(&l1_loss(&o::to_tensor(&a), &o::to_tensor(&b)).map_err(to_candle)?).map_err(to_candle)?, o::l1(&a, &b)))
    });
    let masked = run_oracle_case("masked_l1_loss", instances, seed + 1, |rng| {
        let s = shape(rng);
        let (a, b) = (rand_array(rng, s, 0.0, 1.0), rand_array(rng, s, 0.0, 1.0));
        let m = rand_mask(rng, (s.0, 1, s.2, s.3), 0.5);
        let got = scalar(&masked_l1_loss(&o::to_tensor(&a), &o::to_tensor(&b), &o::to_tensor(&m)).map_err(to_candle)?).map_err(to_candle)?;
        let want = o::masked_l1(&a, &b, &m);
        Ok(if want == 0.0 { got.abs() } else { o::scalar_rel_err(got, want) })
    });
    let perceptual = run_oracle_case("perceptual_loss", instances, seed + 2, |rng| {
        let stages = rng.random_range(1..4);
        let side = 1 << (stages - 1);
        let s = (rng.random_range(1..3), 3, side * rng.random_range(1..4), side * rng.random_range(1..4));
        let (a, b) = (rand_array(rng, s, 0.0, 1.0), rand_array(rng, s, 0.0, 1.0));
        let (params, fx) = rand_extractor(rng, stages);
        let got = scalar(&perceptual_loss(&o::to_tensor(&a), &o::to_tensor(&b), &fx).map_err(to_candle)?).map_err(to_candle)?;
        let want = o::perceptual(&a, &b, &params);
        Ok(if want == 0.0 { got.abs() } else { o::scalar_rel_err(got, want) })
    });
    let adversarial = run_oracle_case("lsgan generator and discriminator", instances, seed + 3, |rng| {
        let s = (rng.random_range(1..3), 1, rng.random_range(1..5), rng.random_range(1..5));
        let (r, f) = (rand_array(rng, s, -2.0, 2.0), rand_array(rng, s, -2.0, 2.0));
        let g = scalar(&generator_adversarial(&o::to_tensor(&f)).map_err(to_candle)?).map_err(to_candle)?;
        let d = scalar(&discriminator_adversarial(&o::to_tensor(&r), &o::to_tensor(&f)).map_err(to_candle)?).map_err(to_candle)?;
        Ok(o::scalar_rel_err(g, o::lsgan_generator(&f)).max(o::scalar_rel_err(d, o::lsgan_discriminator(&r, &f))))
    });
    let totals = run_oracle_case("stage1_total and stage2_total", instances, seed + 4, |rng| {
        let s = (1, 3, 2 * rng.random_range(1..4), 2 * rng.random_range(1..4));
        let (a, b) = (rand_array(rng, s, 0.0, 1.0), rand_array(rng, s, 0.0, 1.0));
        let (params, fx) = rand_extractor(rng, 2);
        let w = LossWeights {
            rec: rng.random_range(0.0..2.0),
            per: rng.random_range(0.0..2.0),
            adv: rng.random_range(0.0..1.0),
        };
        let dfake = rand_array(rng, (1, 1, 2, 2), -1.0, 1.0);
        let g_adv = generator_adversarial(&o::to_tensor(&dfake)).map_err(to_candle)?;
        let (ta, tb) = (o::to_tensor(&a), o::to_tensor(&b));
        let t1 = scalar(&stage1_total(&ta, &tb, &fx, &w).map_err(to_candle)?).map_err(to_candle)?;
        let t2 = scalar(&stage2_total(&ta, &tb, &fx, &g_adv, &w).map_err(to_candle)?).map_err(to_candle)?;
        let w1 = w.rec * o::l1(&a, &b) + w.per * o::perceptual(&a, &b, &params);
        let w2 = w1 + w.adv * o::lsgan_generator(&dfake);
        Ok(o::scalar_rel_err(t1, w1).max(o::scalar_rel_err(t2, w2)))
    });
    vec![l1, masked, perceptual, adversarial, totals]
}

fn rand_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Image {
    Image::from_fn(h, w, |_, _, _| rng.random_range(0.0..1.0f32)).unwrap()
}

/// A correlated perturbation of `a`, so SSIM is far from both 0 and 1.
fn perturbed(rng: &mut ChaCha8Rng, a: &Image, amount: f32) -> Image {
    Image::from_fn(a.height(), a.width(), |c, y, x| {
        (a.data()[[c, y, x]] + rng.random_range(-amount..amount)).clamp(0.0, 1.0)
    })
    .unwrap()
}

pub fn metric_oracles(instances: usize, seed: u64) -> Vec<Check> {
    let p = run_oracle_case("psnr", instances, seed, |rng| {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let a = rand_image(rng, h, w);
        let amount = rng.random_range(0.01..0.5);
        let b = perturbed(rng, &a, amount);
        Ok(o::scalar_rel_err(psnr(&a, &b).map_err(to_candle)?, o::psnr(&a, &b)))
    });
    let s = run_oracle_case("ssim (32×32 windowed scalar oracle)", instances, seed + 1, |rng| {
        let a = rand_image(rng, 32, 32);
        let amount = rng.random_range(0.01..0.6);
        let b = perturbed(rng, &a, amount);
        Ok(o::scalar_rel_err(ssim(&a, &b).map_err(to_candle)?, o::ssim(&a, &b)))
    });
    let f = run_oracle_case("frechet_distance (eigenvalue route)", instances, seed + 2, |rng| {
        let d = rng.random_range(1..5);
        let n = rng.random_range(4 * d + 4..6 * d + 12);
        let shift = rng.random_range(-1.0..1.0);
        let a: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let b: Vec<Vec<f64>> = (0..n + 3)
            .map(|_| (0..d).map(|_| rng.random_range(-0.5..1.5) + shift).collect())
            .collect();
        Ok(o::scalar_rel_err(frechet_distance(&a, &b).map_err(to_candle)?, o::frechet(&a, &b)))
    });
    let f1 = run_oracle_case("frechet_distance 1-D closed form", instances, seed + 3, |rng| {
        let n = rng.random_range(5..40);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..3.0)).collect();
        let wrap = |v: &[f64]| v.iter().map(|&x| vec![x]).collect::<Vec<_>>();
        Ok(o::scalar_rel_err(frechet_distance(&wrap(&a), &wrap(&b)).map_err(to_candle)?, o::frechet_1d(&a, &b)))
    });
    let fd = run_oracle_case("frechet_distance diagonal closed form", instances, seed + 4, |rng| {
        // Orthogonal zero-mean ±1 columns (Walsh patterns on 8 samples) give
        // exactly diagonal sample covariances.
        let walsh = |j: usize, i: usize| if ((i >> j) & 1) == 0 { 1.0 } else { -1.0 };
        let d = 3;
        let set = |rng: &mut ChaCha8Rng| {
            let mu: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
            let amp: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
            let rows: Vec<Vec<f64>> = (0..8).map(|i| (0..d).map(|j| mu[j] + amp[j] * walsh(j, i)).collect()).collect();
            // Sample std of ±amp over 8 points with the n − 1 denominator.
            let sd: Vec<f64> = amp.iter().map(|a| a * (8.0f64 / 7.0).sqrt()).collect();
            (rows, mu, sd)
        };
        let (a, ma, sa) = set(rng);
        let (b, mb, sb) = set(rng);
        Ok(o::scalar_rel_err(frechet_distance(&a, &b).map_err(to_candle)?, o::frechet_diagonal(&ma, &sa, &mb, &sb)))
    });
    vec![p, s, f, f1, fd]
}

/// Every oracle comparison with `instances` random cases each.
pub fn oracle_suite(instances: usize, seed: u64) -> Vec<Check> {
    let mut out = vec![composite_query_oracle(instances, seed)];
    out.extend(external_attention_oracle(instances, seed + 10));
    out.push(spade_oracle(instances, seed + 20));
    out.extend(loss_oracles(instances, seed + 30));
    out.extend(metric_oracles(instances, seed + 40));
    out
}

/// Blending returns `F_in` on damaged cells and `I_sub` elsewhere, bit for bit.
pub fn partition_property(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0usize;
    let mut cells = 0usize;
    for _ in 0..instances {
        let (b, c, h, w) = (rng.random_range(1..3), rng.random_range(1..5), rng.random_range(1..6), rng.random_range(1..6));
        let f_in = rand_array(&mut rng, (b, c, h, w), -1e3, 1e3);
        let i_sub = rand_array(&mut rng, (b, c, h, w), -1e3, 1e3);
        let p = rng.random_range(0.0..1.0);
        let m = rand_mask(&mut rng, (b, 1, h, w), p);
        let out = match blend_query(&o::to_tensor(&i_sub), &o::to_tensor(&f_in), &o::to_tensor(&m)) {
            Ok(t) => o::to_array(&t),
            Err(e) => return Check::new("partition property", false, format!("error: {e}")),
        };
        for ((s, ch, y, x), v) in out.indexed_iter() {
            let want = if m[[s, 0, y, x]] == 1.0 { f_in[[s, ch, y, x]] } else { i_sub[[s, ch, y, x]] };
            cells += 1;
            if *v != want {
                violations += 1;
            }
        }
    }
    Check::new(
        "partition property",
        violations == 0,
        format!("{instances} instances, {cells} cells, {violations} inexact"),
    )
}

fn fd_check(name: &str, vars: &[(String, Var)], loss: &dyn Fn() -> Result<Tensor>, per_var: usize, seed: u64) -> Check {
    match gradcheck::check(vars, loss, per_var, seed) {
        Ok(r) => report_check(name, &r),
        Err(e) => Check::new(name, false, format!("error: {e}")),
    }
}

fn report_check(name: &str, r: &GradReport) -> Check {
    Check::new(name, r.passed(), r.summary())
}

fn var(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Var {
    Var::from_tensor(&o::to_tensor(&rand_array(rng, shape, lo, hi))).unwrap()
}

/// Weighted sum against a fixed random probe, so every output element matters.
fn probe(out: &Tensor, r: &Tensor) -> Result<Tensor> {
    (out * r)?.sum_all()
}

fn probe_for(rng: &mut ChaCha8Rng, t: &Tensor) -> Tensor {
    let (b, c, h, w) = t.dims4().unwrap();
    o::to_tensor(&rand_array(rng, (b, c, h, w), -1.0, 1.0))
}

/// Finite-difference checks of every network and loss at tiny sizes.
pub fn gradient_suite(per_var: usize, seed: u64) -> Vec<Check> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    // ESPA branch.
    {
        let store = VarStore::new(DType::F64, seed + 1);
        let cfg = EspaConfig::new(3, 4, 4);
        let espa = Espa::new(&store.root().pp("espa"), &cfg).unwrap();
        let f_in = var(&mut rng, (2, 3, 4, 4), -1.0, 1.0);
        let ctx = var(&mut rng, (2, 3, 8, 8), 0.0, 1.0);
        let mask = o::to_tensor(&rand_mask(&mut rng, (2, 1, 8, 8), 0.4));
        let r = probe_for(&mut rng, f_in.as_tensor());
        let mut vars = store.named_vars();
        vars.push(("f_in".into(), f_in.clone()));
        vars.push(("context".into(), ctx.clone()));
        let loss = || probe(&espa.forward(f_in.as_tensor(), ctx.as_tensor(), &mask).map_err(to_candle)?, &r);
        out.push(fd_check("gradient: ESPA", &vars, &loss, per_var, seed + 2));
    }

    // SPADE layer.
    {
        let store = VarStore::new(DType::F64, seed + 3);
        let layer = SpadeLayer::new(&store.root().pp("spade"), 3, 4, 3).unwrap();
        let x = var(&mut rng, (2, 3, 4, 4), -1.0, 1.0);
        let seg = o::to_tensor(&one_hot(&mut rng, 2, 4, 8, 8));
        let r = probe_for(&mut rng, x.as_tensor());
        let mut vars = store.named_vars();
        vars.push(("x".into(), x.clone()));
        let loss = || probe(&layer.forward(x.as_tensor(), &seg).map_err(to_candle)?, &r);
        out.push(fd_check("gradient: SPADE", &vars, &loss, per_var, seed + 4));
    }

    // Stage-one generator, with the attention branch.
    {
        let store = VarStore::new(DType::F64, seed + 5);
        let cfg = AutoencoderConfig {
            base_channels: 3,
            bottleneck_channels: 4,
            dilation_rates: vec![1, 2],
            ..AutoencoderConfig::default()
        };
        let ae = Autoencoder::new(&store.root(), &cfg, 16, 16).unwrap();
        let m = rand_mask(&mut rng, (1, 1, 16, 16), 0.3);
        let img = rand_array(&mut rng, (1, 3, 16, 16), 0.0, 1.0);
        let masked = Array4::from_shape_fn(img.dim(), |(s, c, y, x)| img[[s, c, y, x]] * (1.0 - m[[s, 0, y, x]]));
        let (mt, it) = (o::to_tensor(&m), o::to_tensor(&masked));
        let r = o::to_tensor(&rand_array(&mut rng, (1, 3, 16, 16), -1.0, 1.0));
        let loss = || {
            let o = ae.forward(&it, &mt).map_err(to_candle)?;
            probe(&o.coarse, &r)? + o.features.sqr()?.mean_all()?
        };
        out.push(fd_check("gradient: stage-one generator", &store.named_vars(), &loss, per_var, seed + 6));
    }

    // Stage-two generator.
    {
        let store = VarStore::new(DType::F64, seed + 7);
        let cfg = SemanticDecoderConfig {
            block_channels: vec![4, 3],
            spade_hidden: 3,
        };
        let dec = SemanticDecoder::new(&store.root(), &cfg, 4, 3).unwrap();
        let feats = var(&mut rng, (1, 4, 4, 4), -1.0, 1.0);
        let seg = o::to_tensor(&one_hot(&mut rng, 1, 3, 16, 16));
        let r = o::to_tensor(&rand_array(&mut rng, (1, 3, 16, 16), -1.0, 1.0));
        let mut vars = store.named_vars();
        vars.push(("features".into(), feats.clone()));
        let loss = || probe(&dec.forward(feats.as_tensor(), &seg).map_err(to_candle)?, &r);
        out.push(fd_check("gradient: stage-two generator", &vars, &loss, per_var, seed + 8));
    }

    // Discriminator.
    {
        let store = VarStore::new(DType::F64, seed + 9);
        let d = PatchDiscriminator::new(
            &store.root(),
            &DiscriminatorConfig {
                base_channels: 2,
                instance_norm: false,
            },
        )
        .unwrap();
        let x = var(&mut rng, (1, 3, 32, 32), 0.0, 1.0);
        let r = o::to_tensor(&rand_array(&mut rng, (1, 1, 2, 2), -1.0, 1.0));
        let mut vars = store.named_vars();
        vars.push(("image".into(), x.clone()));
        let loss = || probe(&d.forward(x.as_tensor()).map_err(to_candle)?, &r);
        out.push(fd_check("gradient: discriminator", &vars, &loss, per_var, seed + 10));
    }

    // Losses with respect to their inputs.
    {
        let pred = var(&mut rng, (2, 3, 8, 8), 0.0, 1.0);
        let target = o::to_tensor(&rand_array(&mut rng, (2, 3, 8, 8), 0.0, 1.0));
        let mask = o::to_tensor(&rand_mask(&mut rng, (2, 1, 8, 8), 0.5));
        let (_, fx) = rand_extractor(&mut rng, 2);
        let d_real = var(&mut rng, (2, 1, 3, 3), -1.0, 1.0);
        let d_fake = var(&mut rng, (2, 1, 3, 3), -1.0, 1.0);
        let w = LossWeights {
            rec: 1.0,
            per: 0.7,
            adv: 0.3,
        };
        let p = [("pred".to_string(), pred.clone())];
        let pt = pred.as_tensor();
        let c = |e: inpaint_core::Error| to_candle(e);
        out.push(fd_check("gradient: l1_loss", &p, &|| l1_loss(pt, &target).map_err(c), per_var, seed + 11));
        out.push(fd_check("gradient: masked_l1_loss", &p, &|| masked_l1_loss(pt, &target, &mask).map_err(c), per_var, seed + 12));
        out.push(fd_check("gradient: perceptual_loss", &p, &|| perceptual_loss(pt, &target, &fx).map_err(c), per_var, seed + 13));
        let g = [("d_fake".to_string(), d_fake.clone())];
        out.push(fd_check("gradient: generator_adversarial", &g, &|| generator_adversarial(d_fake.as_tensor()).map_err(c), per_var, seed + 14));
        let dv = [("d_real".to_string(), d_real.clone()), ("d_fake".to_string(), d_fake.clone())];
        out.push(fd_check(
            "gradient: discriminator_adversarial",
            &dv,
            &|| discriminator_adversarial(d_real.as_tensor(), d_fake.as_tensor()).map_err(c),
            per_var,
            seed + 15,
        ));
        out.push(fd_check("gradient: stage1_total", &p, &|| stage1_total(pt, &target, &fx, &w).map_err(c), per_var, seed + 16));
        let pg = [("pred".to_string(), pred.clone()), ("d_fake".to_string(), d_fake.clone())];
        out.push(fd_check(
            "gradient: stage2_total",
            &pg,
            &|| {
                let g_adv = generator_adversarial(d_fake.as_tensor()).map_err(c)?;
                stage2_total(pt, &target, &fx, &g_adv, &w).map_err(c)
            },
            per_var,
            seed + 17,
        ));
    }
    out
}

/// Analytic multiply–accumulate ratio ESPA / self-attention at growing sizes
/// with fixed hidden widths; it must fall monotonically toward zero.
pub fn mac_ratio_check() -> Check {
    let (c, d) = (256u64, 64u64);
    let ratios: Vec<f64> = [16u64, 32, 64, 128, 256, 512]
        .iter()
        .map(|&s| {
            attention_macs(s, s, c, d, d, AttentionKind::Espa) as f64
                / attention_macs(s, s, c, d, d, AttentionKind::FullSelfAttention) as f64
        })
        .collect();
    let decreasing = ratios.windows(2).all(|w| w[1] < w[0]);
    let last = *ratios.last().unwrap();
    Check::new(
        "complexity: MAC ratio → 0",
        decreasing && last < 1e-3,
        format!(
            "ratios {}",
            ratios.iter().map(|r| format!("{r:.2e}")).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn median_seconds(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut t: Vec<f64> = (0..reps)
        .map(|_| {
            let s = Instant::now();
            f();
            s.elapsed().as_secs_f64()
        })
        .collect();
    t.sort_by(|a, b| a.partial_cmp(b).unwrap());
    t[t.len() / 2]
}

/// Least-squares slope of `log y` against `log x`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

/// Measured time slopes over side lengths 16 → 64: the ESPA branch (with
/// fixed hidden widths) and full self-attention.
pub fn timing_slopes(sides: &[usize], espa_channels: usize, hidden: usize, sa_channels: usize, reps: usize) -> (Vec<f64>, Vec<f64>) {
    let mut espa_t = Vec::new();
    let mut sa_t = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for &s in sides {
        let store = VarStore::new(DType::F32, 1);
        let mut cfg = EspaConfig::new(espa_channels, s, s);
        cfg.key_hidden = hidden;
        cfg.value_hidden = hidden;
        let espa = Espa::new(&store.root(), &cfg).unwrap();
        let f32t = |a: Array4<f64>| o::to_tensor(&a).to_dtype(DType::F32).unwrap();
        let f_in = f32t(rand_array(&mut rng, (1, espa_channels, s, s), -1.0, 1.0));
        let ctx = f32t(rand_array(&mut rng, (1, 3, 4 * s, 4 * s), 0.0, 1.0));
        let mask = f32t(rand_mask(&mut rng, (1, 1, 4 * s, 4 * s), 0.3));
        espa_t.push(median_seconds(reps, || {
            espa.forward(&f_in, &ctx, &mask).unwrap();
        }));
        let q = f32t(rand_array(&mut rng, (1, sa_channels, s, s), -1.0, 1.0));
        sa_t.push(median_seconds(reps.min(3), || {
            full_self_attention(&q).unwrap();
        }));
    }
    (espa_t, sa_t)
}

pub fn timing_check() -> Check {
    let sides = [16usize, 24, 32, 48, 64];
    let (espa_t, sa_t) = timing_slopes(&sides, 32, 16, 256, 15);
    let hw: Vec<f64> = sides.iter().map(|&s| (s * s) as f64).collect();
    let (se, ss) = (log_log_slope(&hw, &espa_t), log_log_slope(&hw, &sa_t));
    Check::new(
        "complexity: wall-time slope",
        se < 1.5 && ss >= 1.8,
        format!(
            "ESPA slope {se:.3} (< 1.5), self-attention slope {ss:.3} (≥ 1.8); ESPA {:.2e}s→{:.2e}s, SA {:.2e}s→{:.2e}s",
            espa_t[0],
            espa_t[espa_t.len() - 1],
            sa_t[0],
            sa_t[sa_t.len() - 1]
        ),
    )
}

use candle_core::{DType, Device, Tensor, Var};

use inpaint_core::networks::{Autoencoder, PatchDiscriminator, SemanticDecoder, SpadeLayer};
use inpaint_core::nn::{self, Conv2d, ConvSpec, VarStore};
use inpaint_core::{AutoencoderConfig, DiscriminatorConfig, ModelConfig, SemanticDecoderConfig};
use inpaint_testkit::gradcheck;

fn dev() -> Device {
    Device::Cpu
}

fn rand(shape: (usize, usize, usize, usize), dtype: DType) -> Tensor {
    Tensor::rand(0f32, 1.0, shape, &dev()).unwrap().to_dtype(dtype).unwrap()
}

fn flat(t: &Tensor) -> Vec<f64> {
    t.to_dtype(DType::F64).unwrap().flatten_all().unwrap().to_vec1().unwrap()
}

fn one_hot(labels: &[usize], k: usize, h: usize, w: usize) -> Tensor {
    let mut v = vec![0f32; k * h * w];
    for (i, &l) in labels.iter().enumerate() {
        v[l * h * w + i] = 1.0;
    }
    Tensor::from_vec(v, (1, k, h, w), &dev()).unwrap()
}

#[test]
fn full_size_shape_contracts() {
    let cfg = ModelConfig::full(5);
    let store = VarStore::new(DType::F32, 1);
    let ae = Autoencoder::new(&store.root(), &cfg.autoencoder, 256, 256).unwrap();
    let x = rand((1, 3, 256, 256), DType::F32);
    let m = Tensor::zeros((1, 1, 256, 256), DType::F32, &dev()).unwrap();
    let out = ae.forward(&x, &m).unwrap();
    assert_eq!(out.coarse.dims(), [1, 3, 256, 256]);
    assert_eq!(out.features.dims(), [1, cfg.autoencoder.bottleneck_channels, 64, 64]);
    let v = flat(&out.coarse);
    assert!(v.iter().all(|p| (0.0..=1.0).contains(p)));
    // Untrained networks are deterministic.
    assert_eq!(flat(&ae.forward(&x, &m).unwrap().coarse), v);

    let d = PatchDiscriminator::new(&VarStore::new(DType::F32, 2).root(), &cfg.discriminator).unwrap();
    assert_eq!(d.forward(&x).unwrap().dims(), [1, 1, 30, 30]);
}

#[test]
fn semantic_decoder_shape_and_range() {
    let cfg = ModelConfig::desk(64, 64, 4);
    let store = VarStore::new(DType::F32, 3);
    let dec = SemanticDecoder::new(&store.root(), &cfg.decoder, 32, 4).unwrap();
    let f = rand((2, 32, 16, 16), DType::F32);
    let labels: Vec<usize> = (0..64 * 64).map(|i| (i / 64 + i % 7) % 4).collect();
    let seg = Tensor::cat(&[one_hot(&labels, 4, 64, 64), one_hot(&labels, 4, 64, 64)], 0).unwrap();
    let out = dec.forward(&f, &seg).unwrap();
    assert_eq!(out.dims(), [2, 3, 64, 64]);
    assert!(flat(&out).iter().all(|p| (0.0..=1.0).contains(p)));
    let wrong = one_hot(&labels[..], 4, 64, 64).narrow(1, 0, 3).unwrap();
    assert!(dec.forward(&f.narrow(0, 0, 1).unwrap(), &wrong).is_err());
}

fn constant_conv(cout: usize, cin: usize, weight: f32, bias: f32) -> Conv2d {
    Conv2d::from_tensors(
        Tensor::full(weight, (cout, cin, 3, 3), &dev()).unwrap(),
        Some(Tensor::full(bias, cout, &dev()).unwrap()),
        ConvSpec::same(3),
    )
}

#[test]
fn spade_constant_channel_yields_beta() {
    let store = VarStore::new(DType::F64, 4);
    let layer = SpadeLayer::new(&store.root(), 2, 3, 4).unwrap();
    let x = Tensor::full(0.7f64, (1, 2, 4, 4), &dev()).unwrap();
    let seg = one_hot(&(0..16).map(|i| i % 3).collect::<Vec<_>>(), 3, 4, 4).to_dtype(DType::F64).unwrap();
    let (_, beta) = layer.modulation(&seg).unwrap();
    let out = layer.forward(&x, &seg).unwrap();
    let diff = flat(&(out - beta).unwrap()).iter().fold(0.0f64, |a, v| a.max(v.abs()));
    assert!(diff < 1e-9, "{diff}");
}

#[test]
fn spade_unit_gamma_zero_beta_is_plain_normalization() {
    // Zero weights: γ and β collapse to their biases, 1 and 0.
    let layer = SpadeLayer::from_parts(constant_conv(4, 3, 0.1, 0.0), constant_conv(2, 4, 0.0, 1.0), constant_conv(2, 4, 0.0, 0.0));
    let x = rand((1, 2, 4, 4), DType::F32);
    let seg = one_hot(&(0..16).map(|i| i % 3).collect::<Vec<_>>(), 3, 4, 4);
    assert_eq!(flat(&layer.forward(&x, &seg).unwrap()), flat(&nn::instance_norm(&x).unwrap()));
}

#[test]
fn discriminator_scores_are_patch_local() {
    let store = VarStore::new(DType::F64, 5);
    let d = PatchDiscriminator::new(
        &store.root(),
        &DiscriminatorConfig {
            base_channels: 2,
            instance_norm: false,
        },
    )
    .unwrap();
    let n = 96;
    let out = PatchDiscriminator::output_size(n);
    let x = rand((1, 3, n, n), DType::F64);
    let base = flat(&d.forward(&x).unwrap());
    for &(py, px) in &[(0usize, 0usize), (40, 71), (95, 10), (50, 50)] {
        let mut v = flat(&x);
        for c in 0..3 {
            v[(c * n + py) * n + px] += 0.5;
        }
        let changed = flat(&d.forward(&Tensor::from_vec(v, (1, 3, n, n), &dev()).unwrap()).unwrap());
        let mut touched = 0;
        for oy in 0..out {
            for ox in 0..out {
                let (ylo, yhi) = PatchDiscriminator::receptive_window(oy);
                let (xlo, xhi) = PatchDiscriminator::receptive_window(ox);
                let inside = (ylo..=yhi).contains(&(py as isize)) && (xlo..=xhi).contains(&(px as isize));
                let i = oy * out + ox;
                if inside {
                    touched += (changed[i] != base[i]) as usize;
                } else {
                    assert_eq!(changed[i], base[i], "score ({oy},{ox}) moved for pixel ({py},{px})");
                }
            }
        }
        assert!(touched > 0, "pixel ({py},{px}) reached no score");
    }
    let (lo, hi) = PatchDiscriminator::receptive_window(3);
    assert_eq!(hi - lo + 1, 70);
}

#[test]
fn upsample_accumulates_gradient_from_every_consumer() {
    let x = Var::from_tensor(&rand((1, 2, 3, 3), DType::F64)).unwrap();
    let r = rand((1, 2, 6, 6), DType::F64);
    let loss = || -> candle_core::Result<Tensor> {
        let up = nn::upsample_nearest(x.as_tensor(), 6, 6).map_err(|e| candle_core::Error::Msg(e.to_string()))?;
        (up * &r)?.sum_all()? + x.as_tensor().sqr()?.sum_all()?
    };
    let report = gradcheck::check(&[("x".into(), x.clone())], &loss, 18, 1).unwrap();
    assert!(report.passed(), "{}", report.summary());
    let up = nn::upsample_nearest(x.as_tensor(), 6, 6).unwrap();
    assert_eq!(flat(&up), flat(&x.as_tensor().upsample_nearest2d(6, 6).unwrap()));
}

#[test]
fn tiny_generators_accept_any_size_divisible_by_four() {
    let ae_cfg = AutoencoderConfig {
        base_channels: 4,
        bottleneck_channels: 8,
        ..AutoencoderConfig::default()
    };
    for (h, w) in [(16, 16), (32, 16), (24, 40)] {
        let store = VarStore::new(DType::F32, 6);
        let ae = Autoencoder::new(&store.root(), &ae_cfg, h, w).unwrap();
        let out = ae.forward(&rand((1, 3, h, w), DType::F32), &Tensor::zeros((1, 1, h, w), DType::F32, &dev()).unwrap()).unwrap();
        assert_eq!(out.coarse.dims(), [1, 3, h, w]);
        assert_eq!(out.features.dims(), [1, 8, h / 4, w / 4]);
        let dec = SemanticDecoder::new(&store.root().pp("dec"), &SemanticDecoderConfig { block_channels: vec![8, 4], spade_hidden: 4 }, 8, 3).unwrap();
        let seg = one_hot(&(0..h * w).map(|i| i % 3).collect::<Vec<_>>(), 3, h, w);
        assert_eq!(dec.forward(&out.features, &seg).unwrap().dims(), [1, 3, h, w]);
    }
    assert!(Autoencoder::new(&VarStore::new(DType::F32, 0).root(), &ae_cfg, 18, 16).is_err());
}

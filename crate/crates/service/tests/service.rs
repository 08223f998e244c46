use std::sync::Arc;
use std::time::Duration;

use candle_core::DType;
use proptest::prelude::*;

use inpaint_core::maskgen::center_mask;
use inpaint_core::networks::segment;
use inpaint_core::{
    labels_to_pseudocolor, pseudocolor_to_labels, synthetic, BinaryMask, ColorPalette, Image,
    InpaintModel, ModelConfig,
};
use inpaint_service::{
    decode_b64, encode_b64, InpaintService, ServiceConfig, ServiceError, SessionDescriptor,
};

const SIZE: usize = 16;

fn model() -> Arc<InpaintModel> {
    let cfg = ModelConfig::desk(SIZE, SIZE, synthetic::NUM_CLASSES);
    Arc::new(InpaintModel::new(cfg, DType::F32, 11).unwrap())
}

fn service(dir: &std::path::Path) -> InpaintService {
    InpaintService::new(model(), None, ColorPalette::scenes(), ServiceConfig::new(dir)).unwrap()
}

fn inputs(seed: u64) -> (Image, BinaryMask, String, String) {
    let (img, _) = synthetic::scene(SIZE, SIZE, seed).unwrap();
    let mask = center_mask(SIZE, SIZE, 8).unwrap();
    let a = encode_b64(&img.encode_png().unwrap());
    let b = encode_b64(&mask.encode_png().unwrap());
    (img, mask, a, b)
}

fn png(b64: &str) -> Image {
    Image::decode_png(&decode_b64("x", b64).unwrap()).unwrap()
}

fn assert_context_equal(result: &Image, original: &Image, mask: &BinaryMask) {
    for y in 0..original.height() {
        for x in 0..original.width() {
            if !mask.is_damaged(y, x) {
                assert_eq!(result.pixel(y, x), original.pixel(y, x), "context pixel ({y}, {x})");
            }
        }
    }
}

#[test]
fn create_session_contract() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (img, mask, a, b) = inputs(1);
    let d = svc.create_session(&a, &b).unwrap();
    assert!(!d.id.is_empty());
    assert_eq!(d.original_size, [SIZE, SIZE]);
    assert_eq!(d.palette, ColorPalette::scenes());
    let coarse = png(&d.coarse);
    assert_context_equal(&coarse, &img, &mask);
    // Every mask color is a palette color.
    pseudocolor_to_labels(&png(&d.semantic_mask), &d.palette, 0.0).unwrap();
}

#[test]
fn empty_mask_returns_input_and_its_segmentation() {
    let dir = tempfile::tempdir().unwrap();
    let m = model();
    let svc = InpaintService::new(m.clone(), None, ColorPalette::scenes(), ServiceConfig::new(dir.path())).unwrap();
    let (img, _) = synthetic::scene(SIZE, SIZE, 2).unwrap();
    let zeros = BinaryMask::zeros(SIZE, SIZE);
    let d = svc
        .create_session(
            &encode_b64(&img.encode_png().unwrap()),
            &encode_b64(&zeros.encode_png().unwrap()),
        )
        .unwrap();
    assert_eq!(png(&d.coarse), img);
    let labels = pseudocolor_to_labels(&png(&d.semantic_mask), &d.palette, 0.0).unwrap();
    assert_eq!(labels, segment(&img, &m.segmenter).unwrap());
}

#[test]
fn repeated_creation_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (_, _, a, b) = inputs(3);
    let d1 = svc.create_session(&a, &b).unwrap();
    let d2 = svc.create_session(&a, &b).unwrap();
    assert_ne!(d1.id, d2.id);
    assert_eq!(d1.coarse, d2.coarse);
    assert_eq!(d1.semantic_mask, d2.semantic_mask);
}

#[test]
fn refine_loop_keeps_context_and_caches_features() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (img, mask, a, b) = inputs(4);
    let d = svc.create_session(&a, &b).unwrap();
    let r1 = svc.refine(&d.id, &d.semantic_mask).unwrap();
    let r2 = svc.refine(&d.id, &d.semantic_mask).unwrap();
    assert_eq!(r1.fine, r2.fine);
    assert_eq!((r1.index, r2.index), (0, 1));
    let (_, gt) = synthetic::scene(SIZE, SIZE, 4).unwrap();
    let gt_png = encode_b64(&labels_to_pseudocolor(&gt, &d.palette).unwrap().encode_png().unwrap());
    let r3 = svc.refine(&d.id, &gt_png).unwrap();
    for r in [&r1, &r3] {
        assert_context_equal(&png(&r.fine), &img, &mask);
    }
    assert_eq!(svc.stage1_runs(), 1);
    let state = svc.get_session(&d.id).unwrap();
    assert_eq!(state.history.len(), 3);
    assert_eq!(state.stage1_runs, 1);
    assert_eq!(state.history[2].fine, r3.fine);
    assert_eq!(state.semantic_mask, gt_png);
    assert!(state.history.windows(2).all(|w| w[0].submitted_at_ms <= w[1].submitted_at_ms));
}

#[test]
fn unknown_color_reports_pixels() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (_, _, a, b) = inputs(5);
    let d = svc.create_session(&a, &b).unwrap();
    let mut edited = png(&d.semantic_mask).into_data();
    for c in 0..3 {
        edited[[c, 3, 7]] = 1.0;
    }
    let bad = encode_b64(&Image::new(edited).unwrap().encode_png().unwrap());
    let err = svc.refine(&d.id, &bad).unwrap_err();
    let body = err.body();
    assert_eq!(body.code, "unknown_color");
    assert_eq!(body.detail["pixels"], serde_json::json!([[3, 7]]));
    assert_eq!(err.status().as_u16(), 400);
}

#[test]
fn unknown_session_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    assert!(matches!(svc.get_session("nope"), Err(ServiceError::NotFound(_))));
    assert!(matches!(svc.refine("../etc", "x"), Err(ServiceError::NotFound(_))));
}

#[test]
fn palette_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let p = svc.palette();
    let labels = inpaint_core::SemanticMask::new(
        inpaint_core::ndarray::Array2::from_shape_fn((2, 5), |(_, x)| x as u16),
        p.len(),
    )
    .unwrap();
    let img = labels_to_pseudocolor(&labels, p).unwrap();
    let png_img = Image::decode_png(&img.encode_png().unwrap()).unwrap();
    let json = p.to_json().unwrap();
    let back = ColorPalette::from_json(&json).unwrap();
    assert_eq!(pseudocolor_to_labels(&png_img, &back, inpaint_core::imaging::DEFAULT_COLOR_TOLERANCE).unwrap(), labels);
}

#[test]
fn sessions_survive_restart() {
    let dir = tempfile::tempdir().unwrap();
    let (_, _, a, b) = inputs(6);
    let (d, r) = {
        let svc = service(dir.path());
        let d = svc.create_session(&a, &b).unwrap();
        let r = svc.refine(&d.id, &d.semantic_mask).unwrap();
        (d, r)
    };
    let svc = service(dir.path());
    let again = svc.refine(&d.id, &d.semantic_mask).unwrap();
    assert_eq!(again.fine, r.fine);
    assert_eq!(again.index, 1);
    assert_eq!(svc.stage1_runs(), 0);
}

#[test]
fn expired_sessions_disappear() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServiceConfig::new(dir.path());
    cfg.ttl = Duration::from_millis(1);
    let svc = InpaintService::new(model(), None, ColorPalette::scenes(), cfg).unwrap();
    let (_, _, a, b) = inputs(7);
    let d = svc.create_session(&a, &b).unwrap();
    std::thread::sleep(Duration::from_millis(20));
    assert!(matches!(svc.get_session(&d.id), Err(ServiceError::NotFound(_))));
    assert!(!dir.path().join(&d.id).exists());
}

#[test]
fn mismatched_image_and_mask_sizes_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (_, _, a, _) = inputs(8);
    let small = encode_b64(&BinaryMask::zeros(8, 8).encode_png().unwrap());
    let err = svc.create_session(&a, &small).unwrap_err();
    assert_eq!(err.status().as_u16(), 400);
    assert_eq!(err.body().code, "dimension");
    let err = svc.create_session("***", &small).unwrap_err();
    assert_eq!(err.body().code, "bad_request");
}

#[test]
fn larger_uploads_are_resized() {
    let dir = tempfile::tempdir().unwrap();
    let svc = service(dir.path());
    let (img, _) = synthetic::scene(2 * SIZE, 3 * SIZE, 9).unwrap();
    let mask = center_mask(2 * SIZE, 3 * SIZE, 8).unwrap();
    let d = svc
        .create_session(
            &encode_b64(&img.encode_png().unwrap()),
            &encode_b64(&mask.encode_png().unwrap()),
        )
        .unwrap();
    assert_eq!(d.original_size, [2 * SIZE, 3 * SIZE]);
    let coarse = png(&d.coarse);
    assert_eq!((coarse.height(), coarse.width()), (SIZE, SIZE));
}

/// Edited masks: class `k` painted over the whole hole.
fn painted(d: &SessionDescriptor, k: u16) -> String {
    let base = pseudocolor_to_labels(&png(&d.semantic_mask), &d.palette, 0.0).unwrap();
    let mask = center_mask(SIZE, SIZE, 8).unwrap();
    let labels = inpaint_core::ndarray::Array2::from_shape_fn((SIZE, SIZE), |(y, x)| {
        if mask.is_damaged(y, x) {
            k
        } else {
            base.label(y, x)
        }
    });
    let sm = inpaint_core::SemanticMask::new(labels, d.palette.len()).unwrap();
    encode_b64(&labels_to_pseudocolor(&sm, &d.palette).unwrap().encode_png().unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    /// Interleaved refines on two sessions, issued from two threads, give each
    /// session exactly the history it would have had alone.
    #[test]
    fn interleaved_sessions_stay_isolated(ops in proptest::collection::vec((0usize..2, 0u16..5), 1..8)) {
        let dir = tempfile::tempdir().unwrap();
        let svc = Arc::new(service(dir.path()));
        let (_, _, a0, b0) = inputs(20);
        let (_, _, a1, b1) = inputs(21);
        let ds = [svc.create_session(&a0, &b0).unwrap(), svc.create_session(&a1, &b1).unwrap()];

        // Reference: each class's fine result on a fresh, isolated service.
        let ref_dir = tempfile::tempdir().unwrap();
        let reference = service(ref_dir.path());
        let ref_ds = [reference.create_session(&a0, &b0).unwrap(), reference.create_session(&a1, &b1).unwrap()];
        let expected = |s: usize, k: u16| reference.refine(&ref_ds[s].id, &painted(&ref_ds[s], k)).unwrap().fine;

        let handles: Vec<_> = (0..2).map(|t| {
            let svc = svc.clone();
            let ops = ops.clone();
            let ds = ds.clone();
            std::thread::spawn(move || {
                for (i, &(s, k)) in ops.iter().enumerate() {
                    if i % 2 == t {
                        svc.refine(&ds[s].id, &painted(&ds[s], k)).unwrap();
                    }
                }
            })
        }).collect();
        for h in handles {
            h.join().unwrap();
        }

        for s in 0..2 {
            let state = svc.get_session(&ds[s].id).unwrap();
            let mine: Vec<u16> = ops.iter().filter(|o| o.0 == s).map(|o| o.1).collect();
            prop_assert_eq!(state.history.len(), mine.len());
            let mut seen: Vec<String> = state.history.iter().map(|h| h.fine.clone()).collect();
            let mut want: Vec<String> = mine.iter().map(|&k| expected(s, k)).collect();
            // Threads may reorder submissions within a session; contents must match as a multiset.
            seen.sort();
            want.sort();
            prop_assert_eq!(seen, want);
            let idx: Vec<usize> = state.history.iter().map(|h| h.index).collect();
            prop_assert_eq!(idx, (0..mine.len()).collect::<Vec<_>>());
        }
        prop_assert_eq!(svc.stage1_runs(), 2);
    }
}

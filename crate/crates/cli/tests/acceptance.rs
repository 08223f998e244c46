//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.
//!
//! `INPAINT_ACCEPTANCE=oracle,gradient,...` restricts the run to the named
//! criteria (oracle, gradient, partition, complexity, overfit, ablation,
//! schedule, service).

use std::sync::Arc;
use std::time::{Duration, Instant};

use candle_core::DType;

use inpaint_cli::ablation::{ablate, load_models, AblationPlan};
use inpaint_core::dataset::Dataset;
use inpaint_core::evaluation::{evaluate, Setting};
use inpaint_core::maskgen::{center_mask, MaskPolicy};
use inpaint_core::training::{lr_at, train_stage1, train_stage2, Phase, TrainConfig};
use inpaint_core::{labels_to_pseudocolor, synthetic, BinaryMask, Image, InpaintModel};
use inpaint_service::{decode_b64, encode_b64, InpaintService, ServiceConfig};
use inpaint_testkit::suites::{self, Check};

struct Outcome {
    passed: bool,
    detail: String,
}

fn from_checks(checks: &[Check]) -> Outcome {
    for c in checks {
        println!("    {}", c.line());
    }
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    Outcome {
        passed: failed.is_empty(),
        detail: if failed.is_empty() {
            format!("{} of {} checks passed", checks.len(), checks.len())
        } else {
            format!("failed: {}", failed.join(", "))
        },
    }
}

fn oracle() -> Outcome {
    from_checks(&suites::oracle_suite(100, 2024))
}

fn gradient() -> Outcome {
    from_checks(&suites::gradient_suite(32, 7))
}

fn partition() -> Outcome {
    from_checks(&[suites::partition_property(1000, 99)])
}

fn complexity() -> Outcome {
    from_checks(&[suites::mac_ratio_check(), suites::timing_check()])
}

fn overfit_config(phase: Phase) -> TrainConfig {
    TrainConfig {
        total_iters: 5000,
        plateau_iters: 2500,
        lr: 2e-4,
        seed: 100,
        masks: MaskPolicy::Center { hole: 16 },
        ..TrainConfig::new(phase)
    }
}

fn overfit() -> Outcome {
    let run = || -> inpaint_core::Result<(f64, f64)> {
        let data = Dataset::synthetic(8, 32, 32, 100)?;
        let mask = center_mask(32, 32, 16)?;
        let s1 = train_stage1(&overfit_config(Phase::Stage1), &data)?;
        let coarse = evaluate(&s1.model, &data, &mask, Setting::Coarse, &s1.model.segmenter)?;
        let s2 = train_stage2(&overfit_config(Phase::Stage2), &data, &s1.checkpoint)?;
        let fine = evaluate(&s2.model, &data, &mask, Setting::FineGroundTruth, &s2.model.segmenter)?;
        Ok((coarse.masked_psnr, fine.masked_psnr))
    };
    match run() {
        Ok((c, f)) => Outcome {
            passed: c >= 25.0 && f >= 24.0,
            detail: format!("stage-1 masked PSNR {c:.2} dB (≥ 25), stage-2 with ground-truth masks {f:.2} dB (≥ 24)"),
        },
        Err(e) => Outcome {
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn ablation() -> Outcome {
    let run = || -> inpaint_cli::CliResult<Outcome> {
        let plan = AblationPlan::desk();
        let work = tempfile::tempdir()?;
        let (train, heldout) = plan.datasets()?;
        let cks = plan.train(&train, work.path())?;
        let report = ablate(&load_models(&cks)?, &heldout, None, 4, 1)?;
        for r in &report.rows {
            println!("    {}: PSNR {:.3} SSIM {:.4} FID {:.4}", r.setting, r.psnr, r.ssim, r.fid);
        }
        let row = |k: &str| report.row(k).expect("four rows");
        let (b, c, d, e) = (row("b"), row("c"), row("d"), row("e"));
        let c_b = c.psnr >= b.psnr && c.ssim >= b.ssim;
        let e_d = e.psnr >= d.psnr && e.ssim >= d.ssim;
        let mut by_psnr = [("b", b.psnr), ("c", c.psnr), ("d", d.psnr), ("e", e.psnr)];
        by_psnr.sort_by(|x, y| y.1.partial_cmp(&x.1).unwrap());
        let order: Vec<&str> = by_psnr.iter().map(|(k, _)| *k).collect();
        Ok(Outcome {
            passed: c_b && e_d,
            detail: format!(
                "(c) ≥ (b): {c_b}, (e) ≥ (d): {e_d}; PSNR order {} (reference e > c > d > b, not gated)",
                order.join(" > ")
            ),
        })
    };
    run().unwrap_or_else(|e| Outcome {
        passed: false,
        detail: format!("error: {e}"),
    })
}

fn schedule() -> Outcome {
    let cfg = TrainConfig {
        lr: 0.0002,
        plateau_iters: 500_000,
        total_iters: 1_000_000,
        ..TrainConfig::new(Phase::Stage1)
    };
    let got: Vec<f64> = [500_000, 750_000, 1_000_000].iter().map(|&i| lr_at(i, &cfg).unwrap()).collect();
    Outcome {
        passed: got == [0.0002, 0.0001, 0.0],
        detail: format!("lr at 500k, 750k, 1M = {got:?}"),
    }
}

fn service() -> Outcome {
    let run = || -> Result<Outcome, Box<dyn std::error::Error>> {
        let size = 32;
        let cfg = inpaint_core::ModelConfig::desk(size, size, synthetic::NUM_CLASSES);
        let model = Arc::new(InpaintModel::new(cfg, DType::F32, 3)?);
        let dir = tempfile::tempdir()?;
        let svc = InpaintService::new(model, None, synthetic::palette(), ServiceConfig::new(dir.path()))?;
        let (img, gt) = synthetic::scene(size, size, 8)?;
        let mask = center_mask(size, size, 16)?;
        let d = svc.create_session(&encode_b64(&img.encode_png()?), &encode_b64(&mask.encode_png()?))?;
        let unedited = svc.refine(&d.id, &d.semantic_mask)?;
        let again = svc.refine(&d.id, &d.semantic_mask)?;
        let gt_png = encode_b64(&labels_to_pseudocolor(&gt, &d.palette)?.encode_png()?);
        let guided = svc.refine(&d.id, &gt_png)?;
        let guided_again = svc.refine(&d.id, &gt_png)?;
        let png = |b: &str| Image::decode_png(&decode_b64("fine", b).unwrap()).unwrap();
        let context_ok = |r: &Image, m: &BinaryMask| {
            (0..size).all(|y| (0..size).all(|x| m.is_damaged(y, x) || r.pixel(y, x) == img.pixel(y, x)))
        };
        let context = [&d.coarse, &unedited.fine, &guided.fine].iter().all(|b| context_ok(&png(b), &mask));
        let deterministic = unedited.fine == again.fine && guided.fine == guided_again.fine;
        let once = svc.stage1_runs() == 1 && svc.get_session(&d.id)?.stage1_runs == 1;
        Ok(Outcome {
            passed: context && deterministic && once,
            detail: format!("context bit-identical: {context}, repeat responses identical: {deterministic}, stage one ran once: {once}"),
        })
    };
    run().unwrap_or_else(|e| Outcome {
        passed: false,
        detail: format!("error: {e}"),
    })
}

fn main() {
    let only: Option<Vec<String>> = std::env::var("INPAINT_ACCEPTANCE")
        .ok()
        .map(|v| v.split(',').map(|s| s.trim().to_string()).collect());
    let criteria: [(&str, &str, fn() -> Outcome, Duration); 8] = [
        ("oracle", "oracle equivalence", oracle, Duration::from_secs(60)),
        ("gradient", "gradient suite", gradient, Duration::from_secs(300)),
        ("partition", "query partition property", partition, Duration::MAX),
        ("complexity", "complexity property", complexity, Duration::from_secs(300)),
        ("overfit", "overfit reproduction", overfit, Duration::from_secs(4 * 3600)),
        ("ablation", "ablation direction", ablation, Duration::MAX),
        ("schedule", "schedule exactness", schedule, Duration::MAX),
        ("service", "service loop", service, Duration::MAX),
    ];
    let mut failures = 0;
    let mut lines = Vec::new();
    for (key, name, f, budget) in criteria {
        if only.as_ref().is_some_and(|o| !o.iter().any(|k| k == key)) {
            continue;
        }
        println!("running {name}");
        let start = Instant::now();
        let out = f();
        let elapsed = start.elapsed();
        let in_time = elapsed <= budget;
        let passed = out.passed && in_time;
        failures += !passed as usize;
        let budget_note = if budget == Duration::MAX {
            String::new()
        } else {
            format!(", budget {}s", budget.as_secs())
        };
        let line = format!(
            "{} {name}: {} ({:.1}s{budget_note})",
            if passed { "PASS" } else { "FAIL" },
            out.detail,
            elapsed.as_secs_f64()
        );
        println!("{line}");
        lines.push(line);
    }
    println!("\nacceptance summary");
    for l in &lines {
        println!("{l}");
    }
    if failures > 0 {
        println!("{failures} criteria failed");
        std::process::exit(1);
    }
}

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use candle_core::DType;
use inpaint_core::checkpoint::Checkpoint;
use inpaint_core::dataset::Dataset;
use inpaint_core::evaluation::Setting;
use inpaint_core::imaging::DEFAULT_COLOR_TOLERANCE;
use inpaint_core::maskgen::{center_mask, irregular_mask, random_rect_mask, IrregularMaskParams};
use inpaint_core::training::{train, Phase, Precision, TrainConfig};
use inpaint_core::{
    labels_to_pseudocolor, pseudocolor_to_labels, BinaryMask, ColorPalette, Image, InpaintModel, ModelConfig,
};
use inpaint_service::{InpaintService, ServiceConfig};

use crate::ablation::{ablate, load_models, write_report, AblationCheckpoints, AblationPlan};
use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::eval::{default_hole, evaluate_parallel, parse_setting, setting_name, table_csv, TableRow};
use crate::output::{write_file, Staging};

pub fn run(cli: Cli) -> CliResult<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Prepare(a) => prepare(a, seed.unwrap_or(0)),
        Command::Maskgen(a) => maskgen(a, seed.unwrap_or(0)),
        Command::Train(a) => train_cmd(a, seed),
        Command::Eval(a) => eval_cmd(a),
        Command::Infer(a) => infer(a),
        Command::Ablate(a) => ablate_cmd(a, seed),
        Command::Serve(a) => serve(a),
    }
}

fn require_file(path: &Path, what: &str) -> CliResult<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} {} does not exist", path.display())))
    }
}

fn require_dir(path: &Path, what: &str) -> CliResult<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(CliError::Data(format!("{what} {} is not a directory", path.display())))
    }
}

fn prepare(args: PrepareArgs, seed: u64) -> CliResult<()> {
    match args.source {
        PrepareSource::Synthetic { count, size, out_dir } => {
            if count == 0 || size == 0 || size % 4 != 0 {
                return Err(CliError::Config("count must be positive and size a positive multiple of 4".into()));
            }
            let data = Dataset::synthetic(count, size, size, seed)?;
            let staging = Staging::new(&out_dir)?;
            data.save(staging.dir())?;
            staging.commit()?;
            eprintln!("wrote {count} scenes to {}", out_dir.display());
        }
        PrepareSource::Import { source, size, out_dir } => {
            if size == 0 || size % 4 != 0 {
                return Err(CliError::Config("size must be a positive multiple of 4".into()));
            }
            require_dir(&source, "source dataset")?;
            let data = Dataset::load(&source, size, size)?;
            let staging = Staging::new(&out_dir)?;
            data.save(staging.dir())?;
            staging.commit()?;
            eprintln!("imported {} samples to {}", data.len(), out_dir.display());
        }
    }
    Ok(())
}

fn maskgen(args: MaskgenArgs, seed: u64) -> CliResult<()> {
    let n = args.size;
    if n == 0 || args.count == 0 {
        return Err(CliError::Config("size and count must be positive".into()));
    }
    let hole = args.hole.unwrap_or(n / 2);
    match args.kind {
        MaskKind::Center if hole > n => {
            return Err(CliError::Config(format!("hole {hole} exceeds size {n}")));
        }
        MaskKind::Rect if !(0.0 < args.min_area && args.min_area <= args.max_area && args.max_area <= 1.0) => {
            return Err(CliError::Config("need 0 < min_area ≤ max_area ≤ 1".into()));
        }
        _ => {}
    }
    let params = IrregularMaskParams::for_size(n, n);
    let mut staging = Staging::new(&args.out_dir)?;
    for i in 0..args.count {
        let s = seed.wrapping_add(i as u64);
        let mask = match args.kind {
            MaskKind::Center => center_mask(n, n, hole)?,
            MaskKind::Rect => random_rect_mask(n, n, (args.min_area, args.max_area), s)?,
            MaskKind::Irregular => irregular_mask(n, n, &params, s)?,
        };
        staging.write(format!("mask_{i:05}.png"), &mask.encode_png()?)?;
    }
    staging.commit()?;
    eprintln!("wrote {} masks to {}", args.count, args.out_dir.display());
    Ok(())
}

/// Applies the flags on top of the optional TOML file.
pub fn build_train_config(args: &TrainArgs, seed: Option<u64>) -> CliResult<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            require_file(path, "config").map_err(|e| CliError::Config(e.to_string()))?;
            TrainConfig::load(path).map_err(|e| CliError::Config(e.to_string()))?
        }
        None => {
            let phase = args
                .phase
                .ok_or_else(|| CliError::Config("either --config or --phase is required".into()))?;
            TrainConfig::new(phase_of(phase))
        }
    };
    if let Some(p) = args.phase {
        cfg.phase = phase_of(p);
    }
    macro_rules! set {
        ($($field:ident),*) => { $( if let Some(v) = args.$field.clone() { cfg.$field = v.into(); } )* };
    }
    set!(batch_size, beta1, beta2, lr, plateau_iters, total_iters, checkpoint_every, hole_l1_weight);
    if let Some(v) = &args.dataset {
        cfg.dataset = Some(v.clone());
    }
    if let Some(v) = args.train_count {
        cfg.train_count = Some(v);
    }
    if let Some(v) = &args.out_dir {
        cfg.out_dir = Some(v.clone());
    }
    if let Some(v) = &args.init_checkpoint {
        cfg.init_checkpoint = Some(v.clone());
    }
    if let Some(p) = args.precision {
        cfg.precision = match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        };
    }
    if let Some(v) = args.rec_weight {
        cfg.weights.rec = v;
    }
    if let Some(v) = args.per_weight {
        cfg.weights.per = v;
    }
    if let Some(v) = args.adv_weight {
        cfg.weights.adv = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    if cfg.dataset.is_none() {
        return Err(CliError::Config("a dataset directory is required (--dataset or `dataset`)".into()));
    }
    if cfg.out_dir.is_none() {
        return Err(CliError::Config("an output directory is required (--out-dir or `out_dir`)".into()));
    }
    Ok(cfg)
}

fn phase_of(p: PhaseArg) -> Phase {
    match p {
        PhaseArg::Stage1 => Phase::Stage1,
        PhaseArg::Stage2 => Phase::Stage2,
        PhaseArg::Joint => Phase::Joint,
        PhaseArg::Segmenter => Phase::Segmenter,
    }
}

fn train_cmd(args: TrainArgs, seed: Option<u64>) -> CliResult<()> {
    let mut cfg = build_train_config(&args, seed)?;
    let dataset = cfg.dataset.clone().expect("checked");
    require_dir(&dataset, "dataset")?;
    let init = match &cfg.init_checkpoint {
        Some(p) => {
            require_file(p, "init checkpoint")?;
            Some(Checkpoint::load(p)?)
        }
        None => None,
    };
    let size = cfg
        .model
        .as_ref()
        .or(init.as_ref().map(|c| &c.model))
        .map(|m| (m.height, m.width));
    let data = match size {
        Some((h, w)) => Dataset::load(&dataset, h, w)?,
        None => Dataset::load_native(&dataset)?,
    };
    if args.no_espa {
        let mut m = cfg.model.clone().unwrap_or_else(|| {
            let first = &data.samples[0].image;
            ModelConfig::desk(first.height(), first.width(), data.palette.len())
        });
        m.autoencoder.use_espa = false;
        cfg.model = Some(m);
        cfg.validate()?;
    }
    let outcome = train(&cfg, &data, init.as_ref())?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    let out = cfg.out_dir.as_ref().expect("checked");
    eprintln!(
        "{} finished after {} iterations; checkpoint {}",
        cfg.phase.as_str(),
        cfg.total_iters,
        out.join(format!("{}.ckpt", cfg.phase.as_str())).display()
    );
    Ok(())
}

fn load_model(path: &Path) -> CliResult<InpaintModel> {
    require_file(path, "checkpoint")?;
    let ck = Checkpoint::load(path)?;
    Ok(InpaintModel::from_checkpoint(&ck, DType::F32)?)
}

fn load_palette(path: Option<&Path>) -> CliResult<ColorPalette> {
    match path {
        Some(p) => {
            require_file(p, "palette")?;
            Ok(ColorPalette::load(p)?)
        }
        None => Ok(inpaint_core::synthetic::palette()),
    }
}

fn eval_cmd(args: EvalArgs) -> CliResult<()> {
    let settings: Vec<Setting> = args
        .settings
        .split(',')
        .map(|s| parse_setting(s.trim()))
        .collect::<CliResult<_>>()?;
    if settings.is_empty() || args.jobs == 0 {
        return Err(CliError::Config("need at least one setting and one job".into()));
    }
    require_dir(&args.dataset, "dataset")?;
    let model = load_model(&args.checkpoint)?;
    let (h, w) = (model.config.height, model.config.width);
    let mut data = Dataset::load(&args.dataset, h, w)?;
    if let Some(n) = args.count {
        data = data.subset(0..n);
    }
    let hole = args.hole.unwrap_or_else(|| default_hole(h, w));
    let mask = center_mask(h, w, hole).map_err(|e| CliError::Config(e.to_string()))?;
    if settings.contains(&Setting::FinePredicted) && !model.has_trained_segmenter() {
        log::warn!("checkpoint has no trained segmenter; fine_predicted uses an untrained one");
    }
    let mut rows = Vec::new();
    for s in settings {
        let scores = evaluate_parallel(&model, &data, &mask, s, &model.segmenter, args.jobs)?;
        rows.push(TableRow::new(setting_name(s), &scores));
    }
    let csv = table_csv(&rows)?;
    match &args.out {
        Some(p) => write_file(p, &csv)?,
        None => print!("{}", String::from_utf8_lossy(&csv)),
    }
    Ok(())
}

fn infer(args: InferArgs) -> CliResult<()> {
    require_file(&args.image, "image")?;
    require_file(&args.mask, "mask")?;
    if let Some(p) = &args.semantic_mask {
        require_file(p, "semantic mask")?;
    }
    let palette = load_palette(args.palette.as_deref())?;
    let model = load_model(&args.checkpoint)?;
    if palette.len() != model.config.num_classes {
        return Err(CliError::Config(format!(
            "palette has {} classes, model {}",
            palette.len(),
            model.config.num_classes
        )));
    }
    let (h, w) = (model.config.height, model.config.width);
    let image = Image::load_png(&args.image)?;
    let mask = BinaryMask::load_png(&args.mask)?;
    if (image.height(), image.width()) != (mask.height(), mask.width()) {
        return Err(CliError::Data(format!(
            "image is {}×{} but mask is {}×{}",
            image.height(),
            image.width(),
            mask.height(),
            mask.width()
        )));
    }
    let image = image.resized(h, w)?;
    let mask = mask.resized(h, w);
    let coarse = model.coarse(&image, &mask)?;
    let labels = match &args.semantic_mask {
        Some(p) => pseudocolor_to_labels(&Image::load_png(p)?, &palette, DEFAULT_COLOR_TOLERANCE)?.resized(h, w),
        None => model.predict_semantic(&coarse.composited, &model.segmenter)?,
    };
    let (_, fine) = model.refine(&coarse.features, &labels, &image, &mask)?;
    let mut staging = Staging::new(&args.out_dir)?;
    staging.write("coarse.png", &coarse.composited.encode_png()?)?;
    staging.write("semantic.png", &labels_to_pseudocolor(&labels, &palette)?.encode_png()?)?;
    staging.write("labels.png", &labels.encode_index_png()?)?;
    staging.write("fine.png", &fine.encode_png()?)?;
    staging.commit()?;
    eprintln!("wrote coarse.png, semantic.png, labels.png, fine.png to {}", args.out_dir.display());
    Ok(())
}

fn ablate_cmd(args: AblateArgs, seed: Option<u64>) -> CliResult<()> {
    if args.jobs == 0 {
        return Err(CliError::Config("jobs must be positive".into()));
    }
    let (models, data) = match &args.plan {
        Some(path) => {
            require_file(path, "plan").map_err(|e| CliError::Config(e.to_string()))?;
            let text = std::fs::read_to_string(path)?;
            let mut plan: AblationPlan = toml::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
            if let Some(s) = seed {
                plan.seed = s;
            }
            plan.validate()?;
            let (train_set, heldout) = plan.datasets()?;
            let work = args.work_dir.clone().unwrap_or_else(|| args.out_dir.join("checkpoints"));
            (load_models(&plan.train(&train_set, &work)?)?, heldout)
        }
        None => {
            let ck = AblationCheckpoints {
                plain: args.plain.clone().expect("required by clap"),
                espa: args.espa.clone().expect("required by clap"),
                refined: args.refined.clone().expect("required by clap"),
            };
            let dataset = args.dataset.clone().expect("required by clap");
            require_dir(&dataset, "dataset")?;
            let models = load_models(&ck)?;
            let (h, w) = (models[2].config.height, models[2].config.width);
            let data = Dataset::load(&dataset, h, w)?;
            (models, data)
        }
    };
    let data = match args.count {
        Some(n) => data.subset(0..n),
        None => data,
    };
    let report = ablate(&models, &data, args.hole, args.grid_samples, args.jobs)?;
    write_report(&report, &args.out_dir)?;
    print!("{}", String::from_utf8_lossy(&table_csv(&report.rows)?));
    Ok(())
}

fn serve(args: ServeArgs) -> CliResult<()> {
    if !(args.ttl_hours.is_finite() && args.ttl_hours > 0.0) {
        return Err(CliError::Config("ttl must be a positive number of hours".into()));
    }
    let tolerance = args.color_tolerance.unwrap_or(DEFAULT_COLOR_TOLERANCE);
    if !(0.0..0.5).contains(&tolerance) {
        return Err(CliError::Config("color tolerance must lie in [0, 0.5)".into()));
    }
    let addr: SocketAddr = format!("{}:{}", args.host, args.port)
        .parse()
        .map_err(|e| CliError::Config(format!("bad listen address: {e}")))?;
    let palette = load_palette(args.palette.as_deref())?;
    let model = load_model(&args.checkpoint)?;
    if !model.has_trained_segmenter() {
        log::warn!("checkpoint has no trained segmenter; initial semantic masks will be poor");
    }
    let mut cfg = ServiceConfig::new(&args.session_dir);
    cfg.ttl = Duration::from_secs_f64(args.ttl_hours * 3600.0);
    cfg.color_tolerance = tolerance;
    let service = Arc::new(InpaintService::new(Arc::new(model), None, palette, cfg)?);
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let janitor = service.clone();
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(Duration::from_secs(600));
            loop {
                tick.tick().await;
                let svc = janitor.clone();
                let purged = tokio::task::spawn_blocking(move || svc.purge_expired()).await.unwrap_or(0);
                if purged > 0 {
                    log::info!("purged {purged} expired sessions");
                }
            }
        });
        inpaint_service::serve(service, addr).await
    })?;
    Ok(())
}

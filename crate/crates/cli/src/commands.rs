use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use log::info;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use ubp_core::data::epochs::{
    average_repetitions, baseline_correct, crop_and_downsample, select_channels, ChannelRef, StorageDtype,
    VISUAL_CHANNELS,
};
use ubp_core::data::formats::{load_epochs, load_image, read_pnm, save_epochs, save_image};
use ubp_core::data::synthetic::{calibrate_noise, generate_subjects, SyntheticSpec};
use ubp_core::data::{build_feature_cache, FeatureCache, ToyVisionEncoder};
use ubp_core::eval::{evaluate, Report};
use ubp_core::train::{fit, leave_one_subject_out, Checkpoint, LogRecord, Mode, TrainConfig};
use ubp_core::uncertainty::RadiusRule;
use ubp_core::{Result, Rng, UbpError};

use crate::manifest::write_manifest;
use crate::{EvalArgs, ExtractArgs, PreprocessArgs, ReportArgs, SynthArgs, TrainArgs};

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let value = serde_json::to_value(value).map_err(|e| UbpError::Config(format!("cannot serialize: {e}")))?;
    // serde_json maps are ordered by key, so the output is canonical
    let mut text = serde_json::to_string_pretty(&value).expect("JSON value serializes");
    text.push('\n');
    fs::write(path, text).map_err(|e| UbpError::io(path, e))
}

fn read_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    let Some(path) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(path).map_err(|e| UbpError::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| UbpError::Config(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| UbpError::io(dir, e))
}

/// Prefixes the message with the pipeline stage, keeping the error kind.
fn at_stage(stage: &'static str) -> impl Fn(UbpError) -> UbpError {
    move |e| match e {
        UbpError::Contract(m) => UbpError::Contract(format!("{stage}: {m}")),
        UbpError::Data(m) => UbpError::Data(format!("{stage}: {m}")),
        UbpError::Format(m) => UbpError::Format(format!("{stage}: {m}")),
        UbpError::Degenerate(m) => UbpError::Degenerate(format!("{stage}: {m}")),
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub subjects: usize,
    /// When set, `spec.noise_sigma` is replaced by the level at which the
    /// oracle decoder reaches this top-1 percent.
    pub calibrate_top1: Option<f64>,
    pub encoder_dim: usize,
    pub encoder_seed: u64,
    pub r0: f64,
    pub c: f64,
    pub blur_lambda: f64,
    pub spec: SyntheticSpec,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let rule = RadiusRule::default();
        Self {
            seed: 0,
            subjects: 1,
            calibrate_top1: None,
            encoder_dim: 64,
            encoder_seed: 1,
            r0: rule.r0,
            c: rule.c,
            blur_lambda: ubp_core::blur::DEFAULT_LAMBDA,
            spec: SyntheticSpec::default(),
        }
    }
}

pub fn synth(args: &SynthArgs) -> Result<()> {
    let mut cfg: SynthConfig = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if cfg.subjects == 0 {
        return Err(UbpError::Config("subjects must be at least 1".into()));
    }
    cfg.spec.validate()?;
    let rng = Rng::new(cfg.seed);
    if let Some(target) = cfg.calibrate_top1 {
        cfg.spec.noise_sigma = calibrate_noise(&cfg.spec, target, &rng)?;
        info!("calibrated noise_sigma = {:.6}", cfg.spec.noise_sigma);
    }
    let subjects = generate_subjects(&cfg.spec, cfg.subjects, &rng)?;
    let out = &args.out;
    create_dir(&out.join("images"))?;
    let mut files = Vec::new();
    let images = &subjects[0].images;
    for (id, img) in images {
        let rel = format!("images/{id}.ubpi");
        save_image(&out.join(&rel), img)?;
        files.push(rel);
    }
    for s in &subjects {
        create_dir(&out.join(&s.train.subject))?;
        for (name, e) in [("train", &s.train), ("test", &s.test)] {
            let rel = format!("{}/{name}.ubpe", e.subject);
            save_epochs(&out.join(&rel), e)?;
            files.push(rel);
        }
    }
    let encoder = ToyVisionEncoder::new(cfg.encoder_dim, cfg.encoder_seed)?;
    let rule = RadiusRule {
        r0: cfg.r0,
        c: cfg.c,
        flip: false,
    };
    let cache = build_feature_cache(images, &encoder, &rule, cfg.blur_lambda)?;
    cache.save(&out.join("features.ubpf"))?;
    files.push("features.ubpf".into());
    write_json(&out.join("config.json"), &cfg)?;
    files.push("config.json".into());
    write_manifest(out, "synth", cfg.seed, &cfg, &files)?;
    info!(
        "wrote {} images, {} subject(s) and a {}-d cache to {}",
        images.len(),
        subjects.len(),
        cache.dim(),
        out.display()
    );
    Ok(())
}

pub fn preprocess(args: &PreprocessArgs) -> Result<()> {
    let mut e = load_epochs(&args.input)?;
    let channels = args
        .channels
        .clone()
        .or_else(|| args.visual_defaults.then(|| "visual".to_string()));
    let window = args.window_ms.or(args.visual_defaults.then_some((0.0, 1000.0)));
    let factor = args.factor.or(args.visual_defaults.then_some(4));

    if let Some(list) = channels {
        let refs: Vec<ChannelRef> = if list == "visual" {
            VISUAL_CHANNELS.iter().map(|n| ChannelRef::Name(n.to_string())).collect()
        } else {
            list.split(',').map(|c| c.parse().expect("infallible")).collect()
        };
        e = select_channels(&e, &refs).map_err(at_stage("select"))?;
    }
    let rate = f64::from(e.sample_rate_hz);
    let prestim = args.prestim_ms * rate / 1000.0;
    if !(prestim >= 0.0 && (prestim - prestim.round()).abs() < 1e-9) {
        return Err(UbpError::Contract(format!(
            "baseline: {} ms pre-stimulus does not fall on a sample at {rate} Hz",
            args.prestim_ms
        )));
    }
    let prestim = prestim.round() as usize;
    if prestim > 0 {
        e = baseline_correct(&e, prestim).map_err(at_stage("baseline"))?;
    }
    if window.is_some() || factor.is_some() || prestim > 0 {
        let (start, end) = window.unwrap_or((0.0, (e.n_timepoints - prestim) as f64 * 1000.0 / rate));
        e = crop_and_downsample(
            &e,
            (start + args.prestim_ms, end + args.prestim_ms),
            factor.unwrap_or(1),
            args.antialias,
        )
        .map_err(at_stage("crop"))?;
    }
    if args.average {
        e = average_repetitions(&e);
    }
    if args.f16 {
        e.storage = StorageDtype::F16;
    }
    save_epochs(&args.output, &e)?;
    info!(
        "{}: {} samples × {} channels × {} timepoints at {} Hz",
        args.output.display(),
        e.n_samples,
        e.n_channels,
        e.n_timepoints,
        e.sample_rate_hz
    );
    Ok(())
}

pub fn extract_features(args: &ExtractArgs) -> Result<()> {
    let cfg: TrainConfig = read_config(args.config.as_deref())?;
    let dir = &args.images;
    let entries = fs::read_dir(dir).map_err(|e| UbpError::io(dir, e))?;
    let mut images = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| UbpError::io(dir, e))?.path();
        let ext = path.extension().and_then(|x| x.to_str()).unwrap_or("");
        if !matches!(ext, "ubpi" | "ppm" | "pgm") {
            continue;
        }
        let id: u32 = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| UbpError::Data(format!("{}: file name is not an image id", path.display())))?;
        let img = if ext == "ubpi" {
            load_image(&path)?
        } else {
            let mut f = File::open(&path).map_err(|e| UbpError::io(&path, e))?;
            read_pnm(&mut f).map_err(|e| UbpError::Format(format!("{}: {e}", path.display())))?
        };
        images.push((id, img));
    }
    if images.is_empty() {
        return Err(UbpError::Data(format!("no images found in {}", dir.display())));
    }
    images.sort_by_key(|(id, _)| *id);
    let encoder = ToyVisionEncoder::new(args.dim, args.encoder_seed)?;
    let cache = build_feature_cache(&images, &encoder, &cfg.rule(), cfg.blur_lambda)?;
    cache.save(&args.out)?;
    info!(
        "encoded {} images at radii {:?} into {}",
        cache.len(),
        cfg.rule().levels(),
        args.out.display()
    );
    Ok(())
}

pub fn train(args: &TrainArgs) -> Result<()> {
    let mut cfg: TrainConfig = read_config(args.config.as_deref())?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.lr = Some(v);
    }
    if let Some(m) = args.mode {
        cfg.mode = m.into();
    }
    if args.no_blur_prior {
        cfg.blur_prior = false;
    }
    cfg.validate()?;

    let subjects = args.data.iter().map(|p| load_epochs(p)).collect::<Result<Vec<_>>>()?;
    let (train, heldout) = match cfg.mode {
        Mode::Intra => {
            if subjects.len() != 1 {
                return Err(UbpError::Config(format!(
                    "intra mode takes one --data file, got {}",
                    subjects.len()
                )));
            }
            if args.heldout.is_some() {
                return Err(UbpError::Config("--heldout only applies to inter mode".into()));
            }
            (subjects.into_iter().next().expect("one subject"), None)
        }
        Mode::Inter => {
            let heldout = args
                .heldout
                .as_deref()
                .ok_or_else(|| UbpError::Config("inter mode needs --heldout".into()))?;
            (leave_one_subject_out(&subjects, heldout)?, Some(heldout))
        }
    };
    let cache = FeatureCache::load(&args.cache)?;

    create_dir(&args.out)?;
    let log_path = args.out.join("train_log.jsonl");
    let file = File::create(&log_path).map_err(|e| UbpError::io(&log_path, e))?;
    let mut log = BufWriter::new(file);
    let result = fit(&cfg, &train, &cache, heldout, |rec: LogRecord<'_>| {
        let line = serde_json::to_string(&rec).expect("log records serialize");
        writeln!(log, "{line}")
            .and_then(|()| log.flush())
            .map_err(|e| UbpError::io(&log_path, e))
    })?;
    drop(log);

    result.best.save(&args.out.join("checkpoint.ubpc"))?;
    result.last.save(&args.out.join("last.ubpc"))?;
    write_json(&args.out.join("config.json"), &cfg)?;
    info!(
        "best epoch {} of {}, checkpoint in {}",
        result.best_epoch,
        result.logs.len(),
        args.out.display()
    );
    Ok(())
}

pub fn eval(args: &EvalArgs) -> Result<()> {
    let ck = Checkpoint::load(&args.checkpoint)?;
    let test = load_epochs(&args.data)?;
    let cache = FeatureCache::load(&args.cache)?;
    let ev = evaluate(&ck.params, &ck.config, &test, &cache, args.gallery_blur)?;
    create_dir(&args.out)?;
    let report_path = args.out.join("report.json");
    fs::write(&report_path, ev.report.to_json()).map_err(|e| UbpError::io(&report_path, e))?;
    let csv_path = args.out.join("ranks.csv");
    fs::write(&csv_path, ev.rank_csv()).map_err(|e| UbpError::io(&csv_path, e))?;
    let r = &ev.report;
    info!(
        "{} ({}-way): top-1 {:.2}%, top-5 {:.2}%, mAP {:.2}, similarity {:.4}",
        r.subject, r.gallery_size, r.top1, r.top5, r.map, r.mean_similarity
    );
    Ok(())
}

pub fn report(args: &ReportArgs) -> Result<()> {
    let reports = args
        .reports
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| UbpError::io(p, e))?;
            serde_json::from_str::<Report>(&text).map_err(|e| UbpError::Format(format!("{}: {e}", p.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    let csv_err = |e: csv::Error| UbpError::Format(format!("{}: {e}", args.out.display()));
    let mut w = csv::Writer::from_path(&args.out).map_err(csv_err)?;
    w.write_record(["subject", "mode", "gallery_size", "top1", "top5", "map", "mean_similarity"])
        .map_err(csv_err)?;
    let f = |v: f64| format!("{v:.6}");
    for r in &reports {
        w.write_record([
            r.subject.clone(),
            r.mode.clone(),
            r.gallery_size.to_string(),
            f(r.top1),
            f(r.top5),
            f(r.map),
            f(r.mean_similarity),
        ])
        .map_err(csv_err)?;
    }
    let n = reports.len() as f64;
    let mean = |g: fn(&Report) -> f64| f(reports.iter().map(g).sum::<f64>() / n);
    let mode = if reports.iter().all(|r| r.mode == reports[0].mode) {
        reports[0].mode.clone()
    } else {
        "mixed".into()
    };
    w.write_record([
        "mean".to_string(),
        mode,
        String::new(),
        mean(|r| r.top1),
        mean(|r| r.top5),
        mean(|r| r.map),
        mean(|r| r.mean_similarity),
    ])
    .map_err(csv_err)?;
    w.flush().map_err(|e| UbpError::io(&args.out, e))?;
    Ok(())
}

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stadkit::data::{
    generate_dataset, save_detections, write_dataset, Dataset, DatasetParams, Split, SyntheticClip,
};
use stadkit::eval::{
    bench_fps, frame_map, gt_tubes, link_tubes, oracle_detections, video_map, BenchReport, MeanAp,
    Pipeline, INTERPOLATION,
};
use stadkit::model::{train as train_model, Checkpoint, StepRecord};
use stadkit::postprocess::Detection;

use crate::config::{Config, DataSection, Metric};
use crate::{BenchArgs, EvalArgs, Failure, GenDataArgs, TrainArgs};

pub const RESOLVED_CONFIG: &str = "config.resolved.json";
pub const TRAIN_LOG: &str = "train.log.jsonl";
pub const CHECKPOINT: &str = "checkpoint.bin";
pub const RESULTS: &str = "results.json";
pub const BENCH: &str = "bench.json";
pub const DETECTIONS: &str = "detections.jsonl";

#[derive(Serialize)]
struct Resolved<'a> {
    artifact_version: &'a str,
    config: &'a Config,
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).map_err(stadkit::Error::from)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| stadkit::Error::io(path, e).into())
}

fn create_dir(dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| stadkit::Error::io(dir, e).into())
}

fn write_resolved(dir: &Path, config: &Config) -> Result<(), Failure> {
    write_json(
        &dir.join(RESOLVED_CONFIG),
        &Resolved {
            artifact_version: stadkit::VERSION,
            config,
        },
    )
}

impl DataSection {
    fn from_params(p: &DatasetParams) -> Self {
        DataSection {
            seed: p.seed,
            train_videos: p.train_videos,
            test_videos: p.test_videos,
            width: p.clip.width,
            height: p.clip.height,
            frames: p.clip.frames,
            classes: p.clip.classes,
            min_objects: p.clip.min_objects,
            max_objects: p.clip.max_objects,
            motion: p.clip.motion,
        }
    }
}

fn open_dataset(path: &Path) -> Result<Dataset, Failure> {
    Dataset::open(path)
        .map_err(|e| Failure::config(format!("cannot open dataset {}: {e}", path.display())))
}

fn check_dataset(ds: &Dataset, config: &Config) -> Result<(), Failure> {
    let m = &ds.manifest;
    if m.classes.len() != config.data.classes
        || m.width != config.data.width
        || m.height != config.data.height
    {
        return Err(Failure::config(format!(
            "dataset ({} classes, {}x{}) does not match the model ({} classes, {}x{})",
            m.classes.len(),
            m.width,
            m.height,
            config.data.classes,
            config.data.width,
            config.data.height
        )));
    }
    Ok(())
}

pub fn gen_data(args: GenDataArgs) -> Result<(), Failure> {
    let mut config = Config::load(args.config.as_deref())?;
    if let Some(s) = args.seed {
        config.data.seed = s;
    }
    if let Some(n) = args.train_videos {
        config.data.train_videos = n;
    }
    if let Some(n) = args.test_videos {
        config.data.test_videos = n;
    }
    config.validate()?;
    let (manifest, clips) = generate_dataset(&config.dataset_params()).map_err(Failure::config)?;
    create_dir(&args.out)?;
    write_dataset(&args.out, &manifest, &clips)?;
    write_resolved(&args.out, &config)?;
    println!(
        "wrote {} clips ({} train, {} test) to {}",
        clips.len(),
        config.data.train_videos,
        config.data.test_videos,
        args.out.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header {
        artifact_version: String,
        config: serde_json::Value,
    },
    Step(StepRecord),
    Summary {
        steps: u64,
        positives: usize,
        ground_truths: usize,
        mean_positives_per_gt: f64,
        final_total: f64,
    },
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let mut config = Config::load(args.config.as_deref())?;
    if let Some(a) = args.assigner {
        config.assign.assigner = a.into();
    }
    if let Some(r) = args.regression {
        config.loss.regression = r.into();
    }
    if let Some(e) = args.epochs {
        config.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.train.lr = lr;
    }
    if let Some(b) = args.batch_size {
        config.train.batch_size = b;
    }
    if let Some(s) = args.seed {
        config.train.seed = s;
    }
    let ds = open_dataset(&args.data)?;
    config.data = DataSection::from_params(&ds.manifest.params);
    config.validate()?;
    let clips = ds.load_split(Split::Train)?;

    create_dir(&args.out)?;
    write_resolved(&args.out, &config)?;
    let log_path = args.out.join(TRAIN_LOG);
    let io_err = |e| stadkit::Error::io(&log_path, e);
    let mut log = BufWriter::new(File::create(&log_path).map_err(io_err)?);
    let write_line = |line: &LogLine, log: &mut BufWriter<File>| -> stadkit::Result<()> {
        serde_json::to_writer(&mut *log, line)?;
        log.write_all(b"\n").map_err(io_err)
    };
    write_line(
        &LogLine::Header {
            artifact_version: stadkit::VERSION.to_string(),
            config: config.to_json(),
        },
        &mut log,
    )?;

    let (mut positives, mut gts, mut steps, mut last_total) = (0usize, 0usize, 0u64, f64::NAN);
    let outcome = train_model(config.model_spec(), &config.train_config(), &clips, |rec| {
        positives += rec.positives;
        gts += rec.ground_truths;
        steps = rec.step;
        last_total = rec.total;
        if rec.step % 100 == 0 {
            log::info!(
                "step {} epoch {} loss {:.5}",
                rec.step,
                rec.epoch,
                rec.total
            );
        }
        write_line(&LogLine::Step(rec.clone()), &mut log)
    });
    let outcome = match outcome {
        Ok(o) => o,
        Err(e) => {
            log.flush().ok();
            return Err(e.into());
        }
    };
    let mean = if gts == 0 {
        0.0
    } else {
        positives as f64 / gts as f64
    };
    write_line(
        &LogLine::Summary {
            steps,
            positives,
            ground_truths: gts,
            mean_positives_per_gt: mean,
            final_total: last_total,
        },
        &mut log,
    )?;
    log.flush().map_err(io_err)?;

    let ckpt = Checkpoint::new(
        config.to_json(),
        config.train.seed,
        outcome.detector,
        outcome.optimizer,
    );
    ckpt.save(&args.out.join(CHECKPOINT))?;
    println!("trained {steps} steps; final loss {last_total:.6}; positives per gt {mean:.4}");
    println!("wrote {}", args.out.display());
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub conf_threshold: f64,
    pub nms_iou: f64,
    pub frame_iou: f64,
    pub video_iou: f64,
    pub link_iou: f64,
    pub max_gap: usize,
    pub demo_threshold: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub artifact_version: String,
    /// `model`, `oracle` or `empty`.
    pub mode: String,
    pub split: Split,
    pub metric: Metric,
    pub interpolation: String,
    pub thresholds: Thresholds,
    pub classes: Vec<String>,
    pub frames: usize,
    pub detections: usize,
    /// Detections above the demo threshold, written to the detection list.
    pub written_detections: usize,
    pub tubes: Option<usize>,
    pub frame_map: Option<MeanAp>,
    pub video_map: Option<MeanAp>,
    pub config: Config,
}

fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Config), Failure> {
    let ckpt = Checkpoint::load(path)
        .map_err(|e| Failure::config(format!("cannot load checkpoint: {e}")))?;
    let config = Config::from_json(&ckpt.config)?;
    if ckpt.detector.spec != config.model_spec() {
        return Err(Failure::config(
            "checkpoint model does not match its embedded config",
        ));
    }
    Ok((ckpt, config))
}

fn detect_all(
    pipeline: &Pipeline,
    clips: &[SyntheticClip],
) -> Result<Vec<Vec<Detection>>, Failure> {
    clips
        .par_iter()
        .map(|c| pipeline.detect_clip(c))
        .collect::<stadkit::Result<Vec<_>>>()
        .map_err(Failure::from)
}

pub fn eval(args: EvalArgs) -> Result<(), Failure> {
    let debug = args.debug_oracle || args.debug_empty;
    let (ckpt, mut config) = match &args.checkpoint {
        Some(path) => {
            let (ckpt, mut config) = load_checkpoint(path)?;
            if let Some(p) = &args.config {
                let file = Config::load(Some(p))?;
                if file.model != config.model || file.data.classes != config.data.classes {
                    return Err(Failure::config(format!(
                        "config {} does not match the checkpoint's model",
                        p.display()
                    )));
                }
                config.eval = file.eval;
                config.bench = file.bench;
            }
            (Some(ckpt), config)
        }
        None if debug => (None, Config::load(args.config.as_deref())?),
        None => {
            return Err(Failure::config(
                "--checkpoint is required unless a debug mode is selected",
            ))
        }
    };
    if let Some(m) = args.metric {
        config.eval.metric = m;
    }
    if let Some(t) = args.iou_threshold {
        config.eval.iou_threshold = t;
    }
    if let Some(t) = args.video_iou_threshold {
        config.eval.video_iou_threshold = t;
    }
    let ds = open_dataset(&args.data)?;
    if ckpt.is_none() {
        config.data = DataSection::from_params(&ds.manifest.params);
    }
    config.validate()?;
    check_dataset(&ds, &config)?;
    let clips = ds.load_split(Split::Test)?;
    let gts: Vec<_> = clips.iter().flat_map(|c| c.all_ground_truths()).collect();

    let (mode, per_clip) = if args.debug_oracle {
        (
            "oracle",
            clips
                .iter()
                .map(|c| oracle_detections(&c.all_ground_truths()))
                .collect(),
        )
    } else if args.debug_empty {
        ("empty", vec![Vec::new(); clips.len()])
    } else {
        let pipeline = Pipeline {
            detector: ckpt.expect("checked above").detector,
            conf_threshold: config.eval.conf_threshold,
            nms_iou: config.eval.nms_iou,
        };
        ("model", detect_all(&pipeline, &clips)?)
    };
    let e = config.eval.clone();
    let classes = config.data.classes;
    let fmap = if e.metric.frame() {
        let dets: Vec<Detection> = per_clip.iter().flatten().cloned().collect();
        Some(frame_map(&dets, &gts, classes, e.iou_threshold)?)
    } else {
        None
    };
    let (vmap, tubes) = if e.metric.video() {
        let link = e.link();
        let tubes: Vec<_> = per_clip
            .par_iter()
            .map(|d| link_tubes(d, &link))
            .collect::<stadkit::Result<Vec<_>>>()?
            .into_iter()
            .flatten()
            .collect();
        let gt = gt_tubes(&gts)?;
        (
            Some(video_map(&tubes, &gt, classes, e.video_iou_threshold)?),
            Some(tubes.len()),
        )
    } else {
        (None, None)
    };

    let num_detections = per_clip.iter().map(Vec::len).sum();
    let shown: Vec<Detection> = per_clip
        .into_iter()
        .flatten()
        .filter(|d| d.score > e.demo_threshold)
        .collect();
    let results = Results {
        artifact_version: stadkit::VERSION.to_string(),
        mode: mode.to_string(),
        split: Split::Test,
        metric: e.metric,
        interpolation: INTERPOLATION.to_string(),
        thresholds: Thresholds {
            conf_threshold: e.conf_threshold,
            nms_iou: e.nms_iou,
            frame_iou: e.iou_threshold,
            video_iou: e.video_iou_threshold,
            link_iou: e.link_iou,
            max_gap: e.max_gap,
            demo_threshold: e.demo_threshold,
        },
        classes: ds.manifest.classes.clone(),
        frames: clips.iter().map(|c| c.num_frames()).sum(),
        detections: num_detections,
        written_detections: shown.len(),
        tubes,
        frame_map: fmap,
        video_map: vmap,
        config,
    };
    create_dir(&args.out)?;
    write_resolved(&args.out, &results.config)?;
    save_detections(&args.out.join(DETECTIONS), &shown)?;
    write_json(&args.out.join(RESULTS), &results)?;
    print_results(&results);
    Ok(())
}

fn print_results(r: &Results) {
    println!(
        "mode {}, {} frames, {} detections",
        r.mode, r.frames, r.detections
    );
    println!("{:<16} {:>10} {:>10}", "class", "frame AP", "video AP");
    let cell = |m: &Option<MeanAp>, k: usize| match m {
        Some(m) if m.per_class[k].excluded => "n/a".to_string(),
        Some(m) => format!("{:.4}", m.per_class[k].ap),
        None => "-".to_string(),
    };
    for (k, name) in r.classes.iter().enumerate() {
        println!(
            "{:<16} {:>10} {:>10}",
            name,
            cell(&r.frame_map, k),
            cell(&r.video_map, k)
        );
    }
    let mean = |m: &Option<MeanAp>| {
        m.as_ref()
            .map_or("-".to_string(), |m| format!("{:.4}", m.mean))
    };
    println!(
        "{:<16} {:>10} {:>10}",
        "mAP",
        mean(&r.frame_map),
        mean(&r.video_map)
    );
    println!(
        "frame IoU {}, video IoU {}, {} interpolation",
        r.thresholds.frame_iou, r.thresholds.video_iou, r.interpolation
    );
}

#[derive(Serialize, Deserialize)]
pub struct BenchOutput {
    pub artifact_version: String,
    pub report: BenchReport,
    pub config: Config,
}

pub fn bench(args: BenchArgs) -> Result<(), Failure> {
    let (ckpt, mut config) = load_checkpoint(&args.checkpoint)?;
    if let Some(i) = args.iters {
        config.bench.iters = i;
    }
    if let Some(w) = args.warmup {
        config.bench.warmup = w;
    }
    config.validate()?;
    let ds = open_dataset(&args.data)?;
    check_dataset(&ds, &config)?;
    let clips = ds.load_split(Split::Test)?;
    let pipeline = Pipeline {
        detector: ckpt.detector,
        conf_threshold: config.eval.conf_threshold,
        nms_iou: config.eval.nms_iou,
    };
    let report = bench_fps(&pipeline, &clips, config.bench.warmup, config.bench.iters)?;
    println!(
        "median {:.1} fps, mean {:.1} fps over {} iterations of {} frames ({} warmup)",
        report.median_fps, report.mean_fps, report.iters, report.frames_per_iter, report.warmup
    );
    println!(
        "per frame: {} head MACs, {} decode scores",
        report.ops_per_frame.forward_macs, report.ops_per_frame.decode_scores
    );
    if let Some(out) = &args.out {
        create_dir(out)?;
        write_json(
            &out.join(BENCH),
            &BenchOutput {
                artifact_version: stadkit::VERSION.to_string(),
                report,
                config,
            },
        )?;
    }
    Ok(())
}

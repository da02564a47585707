use serde::Serialize;
use stadkit::assignment::{anchor_ious, count_positives, prediction_ious, GroundTruth};
use stadkit::geometry::{grid_cell, BBox, GridCoord};
use stadkit::model::{assign, extract_features, Assigner, Detector, ToyHead};

use crate::commands::write_json;
use crate::config::Config;
use crate::{AssignDebugArgs, Failure};

#[derive(Serialize)]
struct AnchorRow {
    anchor: usize,
    size: [f64; 2],
    entry: usize,
    shape_iou: f64,
    prediction_iou: f64,
    positive: bool,
}

#[derive(Serialize)]
struct GtRow {
    index: usize,
    instance_id: u32,
    class_id: usize,
    #[serde(rename = "box")]
    bbox: BBox,
    cell: GridCoord,
    positives: usize,
    anchors: Vec<AnchorRow>,
}

#[derive(Serialize)]
struct Dump {
    artifact_version: String,
    video_id: String,
    frame_index: usize,
    assigner: Assigner,
    threshold: f64,
    grid_size: usize,
    stride: usize,
    total_positives: usize,
    collisions: usize,
    dropped: usize,
    ground_truths: Vec<GtRow>,
}

pub fn assign_debug(args: AssignDebugArgs) -> Result<(), Failure> {
    let (detector, mut config) = match &args.checkpoint {
        Some(p) => {
            let ckpt = stadkit::model::Checkpoint::load(p).map_err(Failure::config)?;
            let config = Config::from_json(&ckpt.config)?;
            (Some(ckpt.detector), config)
        }
        None => (None, Config::load(args.config.as_deref())?),
    };
    config.assign.assigner = args.assigner.into();
    let ds = stadkit::data::Dataset::open(&args.data).map_err(Failure::config)?;
    let rec = ds
        .record(&args.video)
        .ok_or_else(|| Failure::config(format!("video `{}` not in dataset", args.video)))?;
    let clip = ds.load_clip(rec)?;
    if args.frame < clip.first_frame || args.frame >= clip.first_frame + clip.num_frames() {
        return Err(Failure::config(format!(
            "frame {} not in `{}` (frames {}..{})",
            args.frame,
            args.video,
            clip.first_frame,
            clip.first_frame + clip.num_frames()
        )));
    }
    let t = args.frame - clip.first_frame;
    let spec = config.model_spec();
    config.validate()?;
    let detector = match detector {
        Some(d) => d,
        None => {
            let head = ToyHead::from_params(
                spec.feature_dim(),
                spec.shape(),
                vec![0.0; ToyHead::param_count_for(spec.feature_dim(), spec.shape())],
            )?;
            Detector {
                spec: spec.clone(),
                head,
            }
        }
    };
    let features = extract_features(&clip.window(t, spec.clip_len)?, &spec.grid)?;
    let preds = detector.head.forward(&features)?;
    let gts: Vec<GroundTruth> = clip.ground_truths(t);
    let map = assign(
        config.assign.assigner,
        config.assign.threshold,
        &detector,
        &gts,
        &preds,
    )?;

    let shape = map.shape();
    let mut rows = Vec::with_capacity(gts.len());
    for (i, g) in gts.iter().enumerate() {
        let cell = grid_cell(&g.center(), spec.grid.stride, spec.grid.size)?;
        let shape_ious = anchor_ious(&g.bbox, &spec.anchors);
        let pred_ious = prediction_ious(&g.bbox, cell, &preds, &spec.anchors, spec.grid.stride);
        let anchors: Vec<AnchorRow> = (0..spec.anchors.len())
            .map(|a| {
                let entry = shape.entry_index(cell.grid_x, cell.grid_y, a);
                let anchor = spec.anchors.get(a);
                AnchorRow {
                    anchor: a,
                    size: [anchor.w, anchor.h],
                    entry,
                    shape_iou: shape_ious[a],
                    prediction_iou: pred_ious[a],
                    positive: map.positive(entry).is_some_and(|p| p.gt_index == i),
                }
            })
            .collect();
        rows.push(GtRow {
            index: i,
            instance_id: g.instance_id,
            class_id: g.class_id,
            bbox: g.bbox,
            cell,
            positives: anchors.iter().filter(|a| a.positive).count(),
            anchors,
        });
    }
    let dump = Dump {
        artifact_version: stadkit::VERSION.to_string(),
        video_id: args.video.clone(),
        frame_index: args.frame,
        assigner: config.assign.assigner,
        threshold: config.assign.threshold,
        grid_size: spec.grid.size,
        stride: spec.grid.stride,
        total_positives: count_positives(&map),
        collisions: map.collisions(),
        dropped: map.dropped(),
        ground_truths: rows,
    };

    print_grid(&dump, &map, shape.size, shape.anchors);
    match &args.json {
        Some(path) => write_json(path, &dump)?,
        None => println!(
            "{}",
            serde_json::to_string_pretty(&dump).map_err(stadkit::Error::from)?
        ),
    }
    Ok(())
}

fn print_grid(dump: &Dump, map: &stadkit::assignment::AssignmentMap, size: usize, anchors: usize) {
    println!(
        "{} frame {}: {} assigner, {} positives for {} ground truths",
        dump.video_id,
        dump.frame_index,
        serde_json::json!(dump.assigner)
            .as_str()
            .unwrap_or_default(),
        dump.total_positives,
        dump.ground_truths.len()
    );
    for gy in 0..size {
        let row: String = (0..size)
            .map(|gx| {
                let n = (0..anchors)
                    .filter(|&a| map.is_positive(map.shape().entry_index(gx, gy, a)))
                    .count();
                if n == 0 {
                    '.'
                } else {
                    char::from_digit(n.min(35) as u32, 36).unwrap_or('#')
                }
            })
            .collect();
        println!("  {row}");
    }
    for g in &dump.ground_truths {
        println!(
            "  gt {} class {} cell ({}, {}): {}",
            g.index,
            g.class_id,
            g.cell.grid_x,
            g.cell.grid_y,
            g.anchors
                .iter()
                .map(|a| format!(
                    "a{}={:.3}{}",
                    a.anchor,
                    a.shape_iou,
                    if a.positive { "*" } else { "" }
                ))
                .collect::<Vec<_>>()
                .join(" ")
        );
    }
}

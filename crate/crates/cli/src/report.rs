use std::path::Path;

use serde::{Deserialize, Serialize};
use stadkit::loss::RegressionLoss;
use stadkit::model::Assigner;

use crate::commands::{write_json, Results, RESULTS};
use crate::{Failure, ReportArgs};

pub const COMPARISON: &str = "comparison.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Row {
    pub name: String,
    pub mode: String,
    pub assigner: Assigner,
    pub regression: RegressionLoss,
    pub frame_map: Option<f64>,
    pub video_map: Option<f64>,
    pub frame_iou: f64,
    pub video_iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub artifact_version: String,
    pub rows: Vec<Row>,
}

fn load(name: &str, dir: &Path) -> Result<Row, Failure> {
    let path = dir.join(RESULTS);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Failure::config(format!("cannot read {}: {e}", path.display())))?;
    let r: Results = serde_json::from_str(&text)
        .map_err(|e| Failure::config(format!("invalid {}: {e}", path.display())))?;
    Ok(Row {
        name: name.to_string(),
        mode: r.mode,
        assigner: r.config.assign.assigner,
        regression: r.config.loss.regression,
        frame_map: r.frame_map.map(|m| m.mean),
        video_map: r.video_map.map(|m| m.mean),
        frame_iou: r.thresholds.frame_iou,
        video_iou: r.thresholds.video_iou,
    })
}

pub fn report(args: ReportArgs) -> Result<(), Failure> {
    let rows = args
        .runs
        .iter()
        .map(|(name, dir)| load(name, dir))
        .collect::<Result<Vec<_>, _>>()?;
    let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
    let name = |v: serde_json::Value| v.as_str().unwrap_or_default().to_string();
    println!("| run | assigner | regression | F-mAP | V-mAP |");
    println!("|---|---|---|---|---|");
    for r in &rows {
        println!(
            "| {} | {} | {} | {} | {} |",
            r.name,
            name(serde_json::json!(r.assigner)),
            name(serde_json::json!(r.regression)),
            fmt(r.frame_map),
            fmt(r.video_map)
        );
    }
    if let Some(out) = &args.out {
        std::fs::create_dir_all(out).map_err(|e| Failure::from(stadkit::Error::io(out, e)))?;
        write_json(
            &out.join(COMPARISON),
            &Comparison {
                artifact_version: stadkit::VERSION.to_string(),
                rows,
            },
        )?;
    }
    Ok(())
}

//! Directory-level evaluation: pair predicted and ground-truth mattes by
//! file stem, score all four metrics per sample (in parallel), and write a
//! JSON report with per-sample rows and a mean row.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::io as data_io;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_pair, mean_report, unknown_mask, MetricReport, Region};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SampleRow {
    pub id: String,
    pub sad: f64,
    pub mse: f64,
    pub grad: f64,
    pub conn: f64,
}

impl SampleRow {
    fn from_report(id: &str, r: &MetricReport) -> Self {
        SampleRow {
            id: id.to_string(),
            sad: r.sad,
            mse: r.mse,
            grad: r.grad,
            conn: r.conn,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RegionTable {
    pub region: Region,
    pub samples: Vec<SampleRow>,
    pub mean: SampleRow,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub whole_image: RegionTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub unknown_only: Option<RegionTable>,
}

fn stems(dir: &Path) -> Result<BTreeMap<String, std::path::PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) == Some("png") {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path);
            }
        }
    }
    Ok(out)
}

/// Score every stem present in both directories.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    trimap_dir: Option<&Path>,
) -> Result<EvalReport> {
    let preds = stems(pred_dir)?;
    let gts = stems(gt_dir)?;
    let trimaps = trimap_dir.map(stems).transpose()?;
    let shared: Vec<&String> = preds.keys().filter(|k| gts.contains_key(*k)).collect();
    if shared.is_empty() {
        return Err(Error::EmptyRegion(
            "no common file stems between prediction and truth directories".into(),
        ));
    }

    let rows: Result<Vec<(SampleRow, Option<SampleRow>)>> = shared
        .par_iter()
        .map(|id| {
            let pred = data_io::read_alpha(&preds[*id])?;
            let gt = data_io::read_alpha(&gts[*id])?;
            let whole = evaluate_pair(&pred.0, &gt.0, None, Region::WholeImage)?;
            let unknown = match &trimaps {
                Some(map) => match map.get(*id) {
                    Some(path) => {
                        let tm = data_io::read_trimap(path)?;
                        let mask = unknown_mask(&tm);
                        Some(SampleRow::from_report(
                            id,
                            &evaluate_pair(&pred.0, &gt.0, Some(&mask), Region::UnknownOnly)?,
                        ))
                    }
                    None => None,
                },
                None => None,
            };
            Ok((SampleRow::from_report(id, &whole), unknown))
        })
        .collect();
    let rows = rows?;

    let make_table = |samples: Vec<SampleRow>, region: Region| -> Option<RegionTable> {
        if samples.is_empty() {
            return None;
        }
        let reports: Vec<MetricReport> = samples
            .iter()
            .map(|s| MetricReport {
                sad: s.sad,
                mse: s.mse,
                grad: s.grad,
                conn: s.conn,
                region,
            })
            .collect();
        let mean = mean_report(&reports).expect("non-empty");
        Some(RegionTable {
            region,
            mean: SampleRow::from_report("mean", &mean),
            samples,
        })
    };

    let whole = make_table(
        rows.iter().map(|(w, _)| w.clone()).collect(),
        Region::WholeImage,
    )
    .expect("at least one sample");
    let unknown = make_table(
        rows.iter().filter_map(|(_, u)| u.clone()).collect(),
        Region::UnknownOnly,
    );
    Ok(EvalReport {
        whole_image: whole,
        unknown_only: unknown,
    })
}

pub fn write_report(path: &Path, report: &EvalReport) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(report)?)?;
    Ok(())
}

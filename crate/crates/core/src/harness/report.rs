//! Report emission: one JSON document per report, a per-class AP CSV, and a
//! consolidated per-mode comparison CSV. UTF-8, LF line endings, 6-decimal
//! fixed-point reals.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::harness::experiment::{ExperimentReport, Mode};

/// Median of a non-empty slice; mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty slice");
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let mid = sorted.len() / 2;
    if sorted.len() % 2 == 1 {
        sorted[mid]
    } else {
        (sorted[mid - 1] + sorted[mid]) / 2.0
    }
}

fn fixed(v: f64) -> String {
    format!("{v:.6}")
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Write report JSONs plus the two CSV views into `out_dir`. Returns every
/// path written.
pub fn emit_report(reports: &[ExperimentReport], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to emit"));
    }
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut written = Vec::new();

    for report in reports {
        let path = out_dir.join(format!("report_{}_seed{}.json", report.mode, report.seed));
        let json = serde_json::to_string_pretty(report)
            .map_err(|e| Error::invalid(format!("report serialization failed: {e}")))?;
        write_file(&path, &(json + "\n"))?;
        written.push(path);
    }

    let mut per_class = String::from("class_id,phase,mode,AP\n");
    for report in reports {
        for entry in &report.teacher_per_class_ap {
            per_class.push_str(&format!(
                "{},teacher,{},{}\n",
                entry.class_id,
                report.mode,
                fixed(entry.ap)
            ));
        }
        for entry in &report.per_class_ap {
            per_class.push_str(&format!(
                "{},student,{},{}\n",
                entry.class_id,
                report.mode,
                fixed(entry.ap)
            ));
        }
    }
    let per_class_path = out_dir.join("per_class_ap.csv");
    write_file(&per_class_path, &per_class)?;
    written.push(per_class_path);

    // one comparison row per mode: medians across that mode's seeds
    let mut modes: Vec<Mode> = Vec::new();
    for r in reports {
        if !modes.contains(&r.mode) {
            modes.push(r.mode);
        }
    }
    let mut comparison = String::from("mode,map_old,map_new,map_all,delta,nabla\n");
    for mode in modes {
        let group: Vec<&ExperimentReport> = reports.iter().filter(|r| r.mode == mode).collect();
        let col = |f: &dyn Fn(&ExperimentReport) -> f64| -> f64 {
            median(&group.iter().map(|r| f(r)).collect::<Vec<f64>>())
        };
        let opt_col = |f: &dyn Fn(&ExperimentReport) -> Option<f64>| -> String {
            let vals: Vec<f64> = group.iter().filter_map(|r| f(r)).collect();
            if vals.is_empty() {
                String::new()
            } else {
                fixed(median(&vals))
            }
        };
        comparison.push_str(&format!(
            "{},{},{},{},{},{}\n",
            mode,
            fixed(col(&|r| r.map_old)),
            fixed(col(&|r| r.map_new)),
            fixed(col(&|r| r.map_all)),
            opt_col(&|r| r.delta),
            opt_col(&|r| r.nabla),
        ));
    }
    let comparison_path = out_dir.join("comparison.csv");
    write_file(&comparison_path, &comparison)?;
    written.push(comparison_path);

    Ok(written)
}

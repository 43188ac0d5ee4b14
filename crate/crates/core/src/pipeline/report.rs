//! Aggregation of finished run directories into one CSV and a plain-text
//! summary: mean and std of normalized return per (env, method).

use std::collections::BTreeMap;
use std::path::PathBuf;

use crate::error::Result;
use crate::pipeline::runner::read_report;

#[derive(Debug, Clone)]
pub struct ReportRow {
    pub env: String,
    pub method: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
    pub failed: usize,
}

/// Reads `report.json` from every directory; missing or unreadable reports
/// become FAILED rows rather than errors.
pub fn aggregate_reports(dirs: &[PathBuf]) -> Result<(Vec<ReportRow>, String, String)> {
    let mut groups: BTreeMap<(String, String), (Vec<f64>, usize)> = BTreeMap::new();
    for dir in dirs {
        match read_report(dir) {
            Ok(report) => {
                groups
                    .entry((report.env.clone(), report.policy.clone()))
                    .or_default()
                    .0
                    .push(report.normalized_return);
            }
            Err(_) => {
                groups
                    .entry(("?".into(), format!("FAILED:{}", dir.display())))
                    .or_default()
                    .1 += 1;
            }
        }
    }
    let mut rows = Vec::new();
    for ((env, method), (returns, failed)) in groups {
        let n = returns.len();
        let (mean, std) = if n > 0 {
            let m = returns.iter().sum::<f64>() / n as f64;
            let v = returns.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / n as f64;
            (m, v.sqrt())
        } else {
            (f64::NAN, f64::NAN)
        };
        rows.push(ReportRow {
            env,
            method,
            mean,
            std,
            runs: n,
            failed,
        });
    }

    let mut csv = String::from("env,method,runs,mean_normalized_return,std_normalized_return\n");
    for row in &rows {
        if row.mean.is_nan() {
            csv.push_str(&format!("{},{},{},FAILED,FAILED\n", row.env, row.method, row.runs));
        } else {
            csv.push_str(&format!(
                "{},{},{},{:.6},{:.6}\n",
                row.env, row.method, row.runs, row.mean, row.std
            ));
        }
    }

    let mut summary = String::new();
    for row in &rows {
        if row.mean.is_nan() {
            summary.push_str(&format!("{} / {}: FAILED\n", row.env, row.method));
        } else {
            summary.push_str(&format!(
                "{} / {}: {:.3} +/- {:.3} over {} run(s)\n",
                row.env, row.method, row.mean, row.std, row.runs
            ));
        }
    }
    Ok((rows, csv, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::eval::EvalReport;
    use crate::pipeline::runner::write_report;

    #[test]
    fn aggregation_means_match_arithmetic() {
        let base = std::env::temp_dir().join("dawm_report_test");
        let _ = std::fs::remove_dir_all(&base);
        let values = [0.25, 0.5, 0.75];
        let mut dirs = Vec::new();
        for (i, v) in values.iter().enumerate() {
            let dir = base.join(format!("run{i}"));
            std::fs::create_dir_all(&dir).unwrap();
            write_report(
                &dir,
                &EvalReport {
                    env: "pointmass".into(),
                    policy: "td3bc-dawm".into(),
                    mean_return: 0.0,
                    normalized_return: *v,
                    std_return: 0.0,
                    episodes: 10,
                },
            )
            .unwrap();
            dirs.push(dir);
        }
        let (rows, csv, _) = aggregate_reports(&dirs).unwrap();
        assert_eq!(rows.len(), 1);
        assert!((rows[0].mean - 0.5).abs() < 1e-12);
        assert_eq!(csv.trim().lines().count(), 2);
        std::fs::remove_dir_all(&base).unwrap();
    }

    #[test]
    fn missing_report_becomes_failed_row() {
        let base = std::env::temp_dir().join("dawm_report_test_missing");
        let _ = std::fs::remove_dir_all(&base);
        let dir = base.join("empty");
        std::fs::create_dir_all(&dir).unwrap();
        let (rows, csv, _) = aggregate_reports(&[dir]).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].method.starts_with("FAILED:"));
        assert!(csv.contains("FAILED"));
        std::fs::remove_dir_all(&base).unwrap();
    }

    #[test]
    fn empty_dir_list_gives_header_only() {
        let (rows, csv, _) = aggregate_reports(&[]).unwrap();
        assert!(rows.is_empty());
        assert_eq!(csv.trim().lines().count(), 1);
    }
}

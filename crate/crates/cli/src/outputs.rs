//! CSV and TOML outputs. Every file is written to a temp name and renamed
//! into place only on success, and every file carries the config hash.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use longtail_core::eval::{ConfusionMatrix, EpsilonEpochMeans};
use longtail_core::trainer::MetricRow;

pub fn temp_name(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

/// Write atomically: produce the full contents, then rename into place.
pub fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let tmp = temp_name(path);
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents)?;
        f.flush()?;
    }
    fs::rename(&tmp, path)
}

fn fmt_float(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v}")
    }
}

/// Metric log: one row per evaluation interval.
pub fn metrics_csv(rows: &[MetricRow], num_classes: usize, config_hash: &str) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash = {config_hash}\n"));
    out.push_str("step,epoch,mode,train_loss,top1_error,top3_error,top5_error,min_total_weight");
    for k in 0..num_classes {
        out.push_str(&format!(",mean_eps_class_{k}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}",
            r.step,
            r.epoch,
            r.mode.name(),
            fmt_float(r.train_loss),
            fmt_float(r.top1),
            fmt_float(r.top3),
            fmt_float(r.top5),
            fmt_float(if r.min_total_weight.is_finite() {
                r.min_total_weight
            } else {
                f64::NAN
            }),
        ));
        for v in &r.eps_class_means {
            out.push(',');
            out.push_str(&fmt_float(*v));
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// Raw ε diagnostics: epoch, class, mean ε that epoch, plus the running
/// minimum total weight in a trailing comment row.
pub fn epsilon_csv(
    summary: &[EpsilonEpochMeans],
    min_total_weight: f64,
    config_hash: &str,
) -> Vec<u8> {
    let mut out = String::new();
    out.push_str(&format!("# config_hash = {config_hash}\n"));
    out.push_str("epoch,class,mean_epsilon,min_total_weight\n");
    for row in summary {
        for (class, mean) in row.class_means.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.epoch,
                class,
                mean,
                fmt_float(if min_total_weight.is_finite() {
                    min_total_weight
                } else {
                    f64::NAN
                })
            ));
        }
    }
    out.into_bytes()
}

/// Confusion matrix as a dense CSV with labeled rows/columns.
pub fn confusion_csv(cm: &ConfusionMatrix, config_hash: &str) -> Vec<u8> {
    let k = cm.num_classes();
    let mut out = String::new();
    out.push_str(&format!("# config_hash = {config_hash}\n"));
    out.push_str("true_class");
    for j in 0..k {
        out.push_str(&format!(",pred_{j}"));
    }
    out.push('\n');
    for i in 0..k {
        out.push_str(&i.to_string());
        for j in 0..k {
            out.push_str(&format!(",{}", cm.count(i, j)));
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;
    use longtail_core::trainer::TrainMode;

    #[test]
    fn metrics_csv_shapes_rows() {
        let rows = vec![MetricRow {
            step: 10,
            epoch: 1,
            mode: TrainMode::Ours,
            train_loss: 0.5,
            top1: 0.25,
            top3: 0.1,
            top5: f64::NAN,
            min_total_weight: 0.9,
            eps_class_means: vec![0.1, -0.2],
        }];
        let bytes = metrics_csv(&rows, 2, "abc123");
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("# config_hash = abc123\n"));
        assert!(text.contains("mean_eps_class_1"));
        assert!(text.contains("10,1,ours,0.5,0.25,0.1,,0.9,0.1,-0.2"));
    }

    #[test]
    fn write_atomic_leaves_no_temp_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.csv");
        write_atomic(&path, b"hello").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"hello");
        assert!(!temp_name(&path).exists());
    }
}

//! Top-5 summary tables for a finished run directory.

use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use crate::error::{Error, Result};
use crate::search::{read_step_log, records_from_log, EvaluationRecord};
use crate::space::SpaceConfig;

pub const MFAS_LOG: &str = "steplog.csv";
pub const RANDOM_LOG: &str = "random_steplog.csv";
pub const REPORT_ROWS: usize = 5;

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// Best records of one step log, as shown in the report.
pub fn top_from_log(path: &Path, space: &SpaceConfig, k: usize) -> Result<Vec<EvaluationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let rows = read_step_log(file, space)?;
    if rows.is_empty() {
        return Err(Error::Config(format!("{}: step log has no rows", path.display())));
    }
    Ok(records_from_log(&rows).top_k(k))
}

/// Renders one method's block: ranked rows then mean and std.
pub fn format_block(out: &mut String, method: &str, records: &[EvaluationRecord]) {
    for (i, r) in records.iter().enumerate() {
        writeln!(out, "{method:<8}{:<6}{:<10.4}{}", i + 1, r.accuracy, r.arch).unwrap();
    }
    let accs: Vec<f64> = records.iter().map(|r| r.accuracy).collect();
    if let Some((mean, std)) = mean_std(&accs) {
        writeln!(out, "{method:<8}{:<6}{mean:<10.4}", "mean").unwrap();
        writeln!(out, "{method:<8}{:<6}{std:<10.4}", "std").unwrap();
    }
}

/// Top-5 tables for the progressive and the random search of `run_dir`.
pub fn emit_report(run_dir: &Path, space: &SpaceConfig) -> Result<String> {
    let mfas = top_from_log(&run_dir.join(MFAS_LOG), space, REPORT_ROWS)?;
    let random = top_from_log(&run_dir.join(RANDOM_LOG), space, REPORT_ROWS)?;
    let mut out = String::new();
    writeln!(out, "{:<8}{:<6}{:<10}architecture", "method", "rank", "val_acc").unwrap();
    format_block(&mut out, "mfas", &mfas);
    format_block(&mut out, "random", &random);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::search::{write_step_log, StepLogRow};
    use crate::space::Architecture;

    fn fmt4(v: f64) -> String {
        format!("{v:.4}")
    }

    #[test]
    fn identical_values_have_zero_std() {
        let (m, s) = mean_std(&[0.7; 5]).unwrap();
        assert_eq!(fmt4(m), "0.7000");
        assert_eq!(fmt4(s), "0.0000");
        assert!(mean_std(&[]).is_none());
    }

    #[test]
    fn table_values() {
        // reference values from an independent population-std computation
        let (m, s) = mean_std(&[0.9258, 0.9260, 0.9270, 0.9266, 0.9268]).unwrap();
        assert!((m - 0.92644).abs() < 1e-12);
        assert!((s - 0.000463033476111609).abs() < 1e-12);
        assert_eq!((fmt4(m), fmt4(s)), ("0.9264".into(), "0.0005".into()));
        let (m, s) = mean_std(&[0.9174, 0.9190, 0.9196, 0.9224, 0.9222]).unwrap();
        assert!((m - 0.92012).abs() < 1e-12);
        assert!((s - 0.0019208331526773).abs() < 1e-12);
        assert_eq!((fmt4(m), fmt4(s)), ("0.9201".into(), "0.0019".into()));
    }

    #[test]
    fn population_not_sample_std() {
        // population std of {0, 2} is 1; the sample std would be sqrt(2)
        assert_eq!(mean_std(&[0.0, 2.0]).unwrap(), (1.0, 1.0));
    }

    fn write_log(dir: &Path, name: &str, accs: &[f64], space: &SpaceConfig) {
        let rows: Vec<StepLogRow> = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| StepLogRow {
                step: i,
                iteration: 1,
                level: 1,
                arch: Architecture::from_tuples(&[(i % space.m + 1, i / space.m + 1, 1)]),
                predicted: None,
                accuracy: a,
                temperature: None,
            })
            .collect();
        write_step_log(&rows, space, File::create(dir.join(name)).unwrap()).unwrap();
    }

    #[test]
    fn report_lists_both_methods() {
        let space = SpaceConfig::new(3, 3, 1, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(dir.path(), &space).is_err());
        write_log(dir.path(), MFAS_LOG, &[0.9258, 0.9260, 0.9270, 0.9266, 0.9268, 0.1], &space);
        assert!(emit_report(dir.path(), &space).is_err());
        write_log(dir.path(), RANDOM_LOG, &[0.9174, 0.9190, 0.9196, 0.9224, 0.9222], &space);
        let text = emit_report(dir.path(), &space).unwrap();
        assert!(text.contains("mfas    mean  0.9264"));
        assert!(text.contains("mfas    std   0.0005"));
        assert!(text.contains("random  std   0.0019"));
        assert!(text.contains("mfas    1     0.9270    [(3,1,1)]"));
        assert_eq!(text.lines().count(), 1 + 7 + 7);
    }
}

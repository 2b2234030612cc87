//! CSV and plain-text result emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::EvalResult;
use super::fixtures::lookup;
use crate::error::{CxError, Result};
use crate::io::write_atomic;

pub const RESULTS_HEADER: &str =
    "model,oracle_mode,mask,recall_at_1,recall_at_5,n,seed,wallclock_s";
pub const LAMBDA_HEADER: &str = "lambda,recall_at_1,recall_at_5,n,seed";

pub fn results_csv(results: &[EvalResult]) -> String {
    let mut out = format!("{RESULTS_HEADER}\n");
    for r in results {
        let _ = writeln!(
            out,
            "{},{},{},{:.2},{:.2},{},{},{:.2}",
            r.model,
            r.oracle_mode,
            r.mask,
            r.recall_at_1,
            r.recall_at_5,
            r.n,
            r.seed,
            r.wallclock_s
        );
    }
    out
}

pub fn lambda_csv(sweep: &[(f64, EvalResult)]) -> String {
    let mut out = format!("{LAMBDA_HEADER}\n");
    for (l, r) in sweep {
        let _ = writeln!(
            out,
            "{l:.2},{:.2},{:.2},{},{}",
            r.recall_at_1, r.recall_at_5, r.n, r.seed
        );
    }
    out
}

fn opt(v: Option<f64>) -> String {
    v.map_or("-".into(), |x| format!("{x:.2}"))
}

/// Desk-scale results next to the published full-scale numbers.
pub fn text_table(results: &[EvalResult]) -> String {
    let mut out = String::new();
    out.push_str("Desk-scale synthetic results. The ref columns hold published full-scale\n");
    out.push_str("numbers for orientation only; the two scales are not comparable.\n\n");
    let _ = writeln!(
        out,
        "{:<16} {:<11} {:<16} {:>7} {:>7} {:>7} {:>9} {:>9} {:>9}",
        "model", "oracle", "mask", "R@1", "R@5", "n", "ref R@1", "ref R@5", "prior R@5"
    );
    for r in results {
        let f = lookup(&r.model, &r.oracle_mode, &r.mask);
        let _ = writeln!(
            out,
            "{:<16} {:<11} {:<16} {:>7.2} {:>7.2} {:>7} {:>9} {:>9} {:>9}",
            r.model,
            r.oracle_mode,
            r.mask,
            r.recall_at_1,
            r.recall_at_5,
            r.n,
            opt(f.and_then(|f| f.recall_at_1)),
            opt(f.and_then(|f| f.recall_at_5)),
            opt(f.and_then(|f| f.prior_recall_at_5)),
        );
    }
    out
}

/// Writes `results.csv` and `report.txt` under `dir`.
pub fn emit_report(results: &[EvalResult], dir: &Path) -> Result<(PathBuf, PathBuf)> {
    if results.is_empty() {
        return Err(CxError::Empty("no results to report".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| CxError::io(dir, e))?;
    let csv = dir.join("results.csv");
    let txt = dir.join("report.txt");
    write_atomic(&csv, results_csv(results).as_bytes())?;
    write_atomic(&txt, text_table(results).as_bytes())?;
    Ok((csv, txt))
}

/// Parse a results CSV written by [`results_csv`]. Histograms are not
/// stored and come back empty.
pub fn parse_results_csv(text: &str) -> Result<Vec<EvalResult>> {
    let mut lines = text.lines();
    if lines.next() != Some(RESULTS_HEADER) {
        return Err(CxError::InvalidArgument(
            "results CSV header mismatch".into(),
        ));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            let bad =
                |what: &str| CxError::InvalidArgument(format!("results row {}: bad {what}", i + 1));
            if f.len() != 8 {
                return Err(bad("field count"));
            }
            Ok(EvalResult {
                model: f[0].into(),
                oracle_mode: f[1].into(),
                mask: f[2].into(),
                recall_at_1: f[3].parse().map_err(|_| bad("recall_at_1"))?,
                recall_at_5: f[4].parse().map_err(|_| bad("recall_at_5"))?,
                n: f[5].parse().map_err(|_| bad("n"))?,
                histogram: Vec::new(),
                seed: f[6].parse().map_err(|_| bad("seed"))?,
                wallclock_s: f[7].parse().map_err(|_| bad("wallclock_s"))?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn result(model: &str, mode: &str, r5: f64) -> EvalResult {
        EvalResult {
            model: model.into(),
            oracle_mode: mode.into(),
            mask: "none".into(),
            recall_at_1: 1.0 / 3.0,
            recall_at_5: r5,
            n: 10,
            histogram: vec![],
            seed: 7,
            wallclock_s: 0.0,
        }
    }

    #[test]
    fn csv_shape_and_round_trip() {
        let rs = vec![
            result("random", "-", 20.0),
            result("neuralcx", "trainable", 61.234),
        ];
        let csv = results_csv(&rs);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.contains("neuralcx,trainable,none,0.33,61.23,10,7,0.00\n"));
        let back = parse_results_csv(&csv).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(results_csv(&back), csv);
    }

    #[test]
    fn text_table_shows_reference_values() {
        let t = text_table(&[result("neuralcx", "trainable", 60.0)]);
        assert!(t.contains("55.14"));
        assert!(t.contains("18.47"));
    }

    #[test]
    fn emit_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let rs = vec![result("distance", "-", 44.0)];
        let (c, t) = emit_report(&rs, dir.path()).unwrap();
        let (c1, t1) = (std::fs::read(&c).unwrap(), std::fs::read(&t).unwrap());
        emit_report(&rs, dir.path()).unwrap();
        assert_eq!(std::fs::read(&c).unwrap(), c1);
        assert_eq!(std::fs::read(&t).unwrap(), t1);
        assert!(emit_report(&[], dir.path()).is_err());
    }
}

//! CSV and text renderings of evaluation results.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{EvalError, EvalSeries, ReportRow};

pub const SERIES_HEADER: &str = "test_index,se_random,se_optimized";
pub const SUMMARY_HEADER: &str = "n_ris,k,baseline_mse,optimized_mse,sigma,pct_error_reduction";

pub fn series_csv(s: &EvalSeries) -> String {
    let mut out = format!("{SERIES_HEADER}\n");
    for ((i, r), o) in s.test_index.iter().zip(&s.se_random).zip(&s.se_optimized) {
        let _ = writeln!(out, "{i},{r},{o}");
    }
    out
}

pub fn summary_csv(rows: &[ReportRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.n_ris, r.k, r.baseline_mse, r.optimized_mse, r.sigma, r.pct_error_reduction
        );
    }
    out
}

/// Fixed-width table with the columns of the published results table.
pub fn table_text(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>6} {:>6} {:>18} {:>19} {:>10} {:>18}",
        "N_RIS", "K", "Baseline MSE (λ²)", "Optimized MSE (λ²)", "σ", "% error reduction"
    );
    for r in rows {
        let _ = writeln!(
            out,
            "{:>6} {:>6} {:>18.4} {:>19.4} {:>10.4} {:>18.2}",
            r.n_ris, r.k, r.baseline_mse, r.optimized_mse, r.sigma, r.pct_error_reduction
        );
    }
    out
}

/// Writes `series.csv`, `summary.csv` and `table.txt` into `dir`.
pub fn report_csv(series: &EvalSeries, row: &ReportRow, dir: &Path) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("series.csv"), series_csv(series))?;
    fs::write(
        dir.join("summary.csv"),
        summary_csv(std::slice::from_ref(row)),
    )?;
    fs::write(dir.join("table.txt"), table_text(std::slice::from_ref(row)))?;
    Ok(())
}

fn fields<'a>(text: &'a str, header: &str) -> Result<Vec<(usize, Vec<&'a str>)>, EvalError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        _ => {
            return Err(EvalError::Csv {
                line: 1,
                msg: format!("expected header '{header}'"),
            })
        }
    }
    let n = header.split(',').count();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            if f.len() != n {
                return Err(EvalError::Csv {
                    line: i + 1,
                    msg: format!("expected {n} fields, found {}", f.len()),
                });
            }
            Ok((i + 1, f))
        })
        .collect()
}

fn num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, EvalError> {
    s.parse().map_err(|_| EvalError::Csv {
        line,
        msg: format!("'{s}' is not a number"),
    })
}

pub fn parse_series_csv(text: &str) -> Result<EvalSeries, EvalError> {
    let mut s = EvalSeries {
        test_index: vec![],
        se_random: vec![],
        se_optimized: vec![],
    };
    for (line, f) in fields(text, SERIES_HEADER)? {
        s.test_index.push(num(line, f[0])?);
        s.se_random.push(num(line, f[1])?);
        s.se_optimized.push(num(line, f[2])?);
    }
    Ok(s)
}

pub fn parse_summary_csv(text: &str) -> Result<Vec<ReportRow>, EvalError> {
    fields(text, SUMMARY_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            Ok(ReportRow {
                n_ris: num(line, f[0])?,
                k: num(line, f[1])?,
                baseline_mse: num(line, f[2])?,
                optimized_mse: num(line, f[3])?,
                sigma: num(line, f[4])?,
                pct_error_reduction: num(line, f[5])?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_round_trip() {
        let s = EvalSeries {
            test_index: (0..100).collect(),
            se_random: (0..100).map(|i| (i as f64 * 0.37).sin().abs()).collect(),
            se_optimized: (0..100).map(|i| 0.1 + i as f64 / 3.0).collect(),
        };
        let text = series_csv(&s);
        assert_eq!(text.lines().count(), 101);
        assert_eq!(parse_series_csv(&text).unwrap(), s);
    }

    #[test]
    fn summary_round_trip_and_table() {
        let rows = vec![ReportRow::from_series(20, 10, &[2.0, 4.0], &[0.5, 0.7]).unwrap()];
        let text = summary_csv(&rows);
        assert!(text.starts_with("n_ris,k,baseline_mse,optimized_mse,sigma,pct_error_reduction\n"));
        assert_eq!(parse_summary_csv(&text).unwrap(), rows);
        let t = table_text(&rows);
        assert!(t.contains("N_RIS") && t.contains("% error reduction"));
        assert_eq!(t.lines().count(), 2);
    }

    #[test]
    fn bad_header_is_rejected() {
        assert!(matches!(
            parse_series_csv("a,b,c\n1,2,3\n"),
            Err(EvalError::Csv { line: 1, .. })
        ));
    }
}

//! CSV exchange for scans, decay curves, and generic numeric tables.
//!
//! All numbers are written with 17 significant digits so a write/read cycle
//! is bit-exact.

use thiserror::Error;

use crate::model::{DecayCurve, ScanData, Validate};

pub const SCAN_HEADER: &str = "freq_hz,gamma_e_hz";
pub const SCAN_HEADER_WITH_SIGMA: &str = "freq_hz,gamma_e_hz,sigma_hz";
pub const CURVE_HEADER: &str = "time_s,p_e";

#[derive(Debug, Error)]
pub enum CsvError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("header mismatch: expected '{expected}', got '{got}'")]
    Header { expected: String, got: String },
    #[error("invalid data: {0}")]
    Invalid(String),
}

/// Round-trip-exact decimal form of a float.
pub fn format_number(v: f64) -> String {
    format!("{v:.16e}")
}

/// Renders equally long columns under the given header names.
pub fn write_table(header: &[&str], columns: &[&[f64]]) -> String {
    assert_eq!(header.len(), columns.len());
    let rows = columns.first().map_or(0, |c| c.len());
    for c in columns {
        assert_eq!(c.len(), rows);
    }
    let mut out = String::new();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..rows {
        let row: Vec<String> = columns.iter().map(|c| format_number(c[i])).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn write_scan(scan: &ScanData) -> String {
    match &scan.uncertainties {
        None => write_table(
            &["freq_hz", "gamma_e_hz"],
            &[&scan.frequencies, &scan.rates],
        ),
        Some(u) => write_table(
            &["freq_hz", "gamma_e_hz", "sigma_hz"],
            &[&scan.frequencies, &scan.rates, u],
        ),
    }
}

pub fn write_curve(curve: &DecayCurve) -> String {
    write_table(&["time_s", "p_e"], &[&curve.times, &curve.populations])
}

fn parse_rows(text: &str, width: usize) -> Result<Vec<Vec<f64>>, CsvError> {
    let mut rows = Vec::new();
    for (i, raw) in text.lines().enumerate().skip(1) {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(CsvError::Malformed {
                line: i + 1,
                message: format!("expected {width} fields, got {}", fields.len()),
            });
        }
        let mut row = Vec::with_capacity(width);
        for field in fields {
            row.push(field.trim().parse::<f64>().map_err(|_| CsvError::Malformed {
                line: i + 1,
                message: format!("cannot parse number '{}'", field.trim()),
            })?);
        }
        rows.push(row);
    }
    Ok(rows)
}

fn header_line(text: &str) -> String {
    text.lines()
        .next()
        .unwrap_or("")
        .trim_end_matches('\r')
        .trim()
        .to_string()
}

fn check_valid(violations: Vec<crate::model::Violation>) -> Result<(), CsvError> {
    if violations.is_empty() {
        Ok(())
    } else {
        Err(CsvError::Invalid(
            violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; "),
        ))
    }
}

/// Reads a table with exactly the given header, returning column-major data.
pub fn read_columns(text: &str, expected_header: &[&str]) -> Result<Vec<Vec<f64>>, CsvError> {
    let header = header_line(text);
    let expected = expected_header.join(",");
    if header != expected {
        return Err(CsvError::Header {
            expected,
            got: header,
        });
    }
    let rows = parse_rows(text, expected_header.len())?;
    let mut cols = vec![Vec::with_capacity(rows.len()); expected_header.len()];
    for row in rows {
        for (c, v) in row.into_iter().enumerate() {
            cols[c].push(v);
        }
    }
    Ok(cols)
}

/// Reads a rate scan, accepting both the two-column and the
/// with-uncertainty form.
pub fn read_scan(text: &str) -> Result<ScanData, CsvError> {
    let header = header_line(text);
    let with_sigma = match header.as_str() {
        h if h == SCAN_HEADER => false,
        h if h == SCAN_HEADER_WITH_SIGMA => true,
        got => {
            return Err(CsvError::Header {
                expected: format!("{SCAN_HEADER} or {SCAN_HEADER_WITH_SIGMA}"),
                got: got.to_string(),
            })
        }
    };
    let rows = parse_rows(text, if with_sigma { 3 } else { 2 })?;
    let scan = ScanData {
        frequencies: rows.iter().map(|r| r[0]).collect(),
        rates: rows.iter().map(|r| r[1]).collect(),
        uncertainties: with_sigma.then(|| rows.iter().map(|r| r[2]).collect()),
    };
    check_valid(scan.validate())?;
    Ok(scan)
}

pub fn read_curve(text: &str) -> Result<DecayCurve, CsvError> {
    let header = header_line(text);
    if header != CURVE_HEADER {
        return Err(CsvError::Header {
            expected: CURVE_HEADER.to_string(),
            got: header,
        });
    }
    let rows = parse_rows(text, 2)?;
    let curve = DecayCurve {
        times: rows.iter().map(|r| r[0]).collect(),
        populations: rows.iter().map(|r| r[1]).collect(),
    };
    check_valid(curve.validate())?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_scan() -> ScanData {
        ScanData {
            frequencies: vec![3.860e9, 3.8671e9, 3.874e9],
            rates: vec![1.47e4, 2.8214e5, 1.52e4],
            uncertainties: None,
        }
    }

    #[test]
    fn scan_round_trip_is_bit_exact() {
        let scan = sample_scan();
        let back = read_scan(&write_scan(&scan)).unwrap();
        assert_eq!(back, scan);
    }

    #[test]
    fn scan_with_uncertainties_round_trips() {
        let scan = ScanData {
            uncertainties: Some(vec![1.0e2, 2.0e3, 1.1e2]),
            ..sample_scan()
        };
        let back = read_scan(&write_scan(&scan)).unwrap();
        assert_eq!(back, scan);
    }

    #[test]
    fn curve_round_trip_is_bit_exact() {
        let t1 = 4.7e-6;
        let times: Vec<f64> = (0..16).map(|i| i as f64 * t1 / 3.0).collect();
        let curve = DecayCurve {
            populations: times.iter().map(|&t| (-t / t1).exp()).collect(),
            times,
        };
        let back = read_curve(&write_curve(&curve)).unwrap();
        assert_eq!(back, curve);
    }

    #[test]
    fn wrong_header_is_rejected() {
        let text = "frequency,rate\n1.0,2.0\n";
        assert!(matches!(read_scan(text), Err(CsvError::Header { .. })));
    }

    #[test]
    fn ragged_row_reports_its_line() {
        let text = format!("{SCAN_HEADER}\n1.0e9,2.0e4\n3.0e9\n");
        match read_scan(&text) {
            Err(CsvError::Malformed { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn unparseable_number_reports_its_line() {
        let text = format!("{SCAN_HEADER}\n1.0e9,fast\n");
        match read_scan(&text) {
            Err(CsvError::Malformed { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("fast"));
            }
            other => panic!("expected malformed error, got {other:?}"),
        }
    }

    #[test]
    fn unsorted_scan_is_rejected_after_parse() {
        let text = format!("{SCAN_HEADER}\n2.0e9,1.0e4\n1.0e9,1.0e4\n");
        assert!(matches!(read_scan(&text), Err(CsvError::Invalid(_))));
    }

    #[test]
    fn numbers_carry_seventeen_significant_digits() {
        let s = format_number(std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
        assert_eq!(s.parse::<f64>().unwrap(), std::f64::consts::PI);
    }
}

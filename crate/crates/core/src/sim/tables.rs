//! Side-by-side comparison of two readings tables.
//!
//! Differences are taken on exact decimals: every cell of a column is scaled
//! to an integer at the column's largest number of decimal places, so
//! `21.3 − 20.0` is exactly `1.3` before the final conversion to `f64`.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("column `{0}` missing from one table")]
    MissingColumn(String),
    #[error("row counts differ: {system} vs {reference}")]
    RowCount { system: usize, reference: usize },
    #[error("row {row}, column `{column}`: `{text}` is not a decimal")]
    BadCell {
        row: usize,
        column: String,
        text: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelDiff {
    pub channel: String,
    pub max_abs: f64,
    /// 1-based row of the largest difference (first on ties).
    pub max_row: usize,
    pub mean_abs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableReport {
    pub rows: usize,
    pub channels: Vec<ChannelDiff>,
}

impl TableReport {
    pub fn channel(&self, name: &str) -> Option<&ChannelDiff> {
        self.channels.iter().find(|c| c.channel == name)
    }
}

impl fmt::Display for TableReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rows compared: {}", self.rows)?;
        writeln!(
            f,
            "{:<16} {:>10} {:>8} {:>10}",
            "channel", "max_abs", "row", "mean_abs"
        )?;
        for c in &self.channels {
            writeln!(
                f,
                "{:<16} {:>10} {:>8} {:>10.4}",
                c.channel, c.max_abs, c.max_row, c.mean_abs
            )?;
        }
        Ok(())
    }
}

/// `(digits as integer, decimal places)`; `-12.50` is `(-1250, 2)`.
fn parse_decimal(s: &str) -> Option<(i128, u32)> {
    let s = s.trim();
    let (neg, body) = match s.strip_prefix('-') {
        Some(b) => (true, b),
        None => (false, s.strip_prefix('+').unwrap_or(s)),
    };
    let (int, frac) = body.split_once('.').unwrap_or((body, ""));
    if int.is_empty() && frac.is_empty() {
        return None;
    }
    if !int.bytes().chain(frac.bytes()).all(|b| b.is_ascii_digit()) {
        return None;
    }
    let digits: i128 = format!("{int}{frac}").parse().ok()?;
    Some((if neg { -digits } else { digits }, frac.len() as u32))
}

struct Table {
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

fn read_table(path: &Path) -> Result<Table, TableError> {
    let err = |e: &dyn fmt::Display| TableError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(&e))?;
    let headers = rdr
        .headers()
        .map_err(|e| err(&e))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let rows = rdr
        .records()
        .map(|r| {
            r.map(|r| r.iter().map(str::to_string).collect())
                .map_err(|e| err(&e))
        })
        .collect::<Result<_, _>>()?;
    Ok(Table { headers, rows })
}

/// Compares every column except `number` by header name.
pub fn validate_tables(system: &Path, reference: &Path) -> Result<TableReport, TableError> {
    let sys = read_table(system)?;
    let refr = read_table(reference)?;
    if sys.rows.len() != refr.rows.len() {
        return Err(TableError::RowCount {
            system: sys.rows.len(),
            reference: refr.rows.len(),
        });
    }
    let mut channels = Vec::new();
    for (si, name) in sys.headers.iter().enumerate() {
        if name == "number" {
            continue;
        }
        let ri = refr
            .headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| TableError::MissingColumn(name.clone()))?;
        let cell = |t: &Table, row: usize, col: usize| {
            let text = t.rows[row].get(col).map_or("", String::as_str);
            parse_decimal(text).ok_or_else(|| TableError::BadCell {
                row: row + 1,
                column: name.clone(),
                text: text.to_string(),
            })
        };
        let mut pairs = Vec::with_capacity(sys.rows.len());
        for row in 0..sys.rows.len() {
            pairs.push((cell(&sys, row, si)?, cell(&refr, row, ri)?));
        }
        let scale = pairs.iter().map(|(a, b)| a.1.max(b.1)).max().unwrap_or(0);
        let up = |(v, d): (i128, u32)| v * 10i128.pow(scale - d);
        let diffs: Vec<i128> = pairs.iter().map(|(a, b)| (up(*a) - up(*b)).abs()).collect();
        let (max_row, max) =
            diffs.iter().enumerate().fold(
                (0, 0i128),
                |best, (i, d)| if *d > best.1 { (i, *d) } else { best },
            );
        let unit = 10f64.powi(scale as i32);
        let total: i128 = diffs.iter().sum();
        channels.push(ChannelDiff {
            channel: name.clone(),
            max_abs: max as f64 / unit,
            max_row: max_row + 1,
            mean_abs: if diffs.is_empty() {
                0.0
            } else {
                total as f64 / unit / diffs.len() as f64
            },
        });
    }
    Ok(TableReport {
        rows: sys.rows.len(),
        channels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::PathBuf;

    fn fixture(name: &str) -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("../../fixtures")
            .join(name)
    }

    #[test]
    fn decimals_parse_exactly() {
        assert_eq!(parse_decimal("21.3"), Some((213, 1)));
        assert_eq!(parse_decimal("-12.50"), Some((-1250, 2)));
        assert_eq!(parse_decimal("441"), Some((441, 0)));
        assert_eq!(parse_decimal(".5"), Some((5, 1)));
        assert_eq!(parse_decimal("1e3"), None);
        assert_eq!(parse_decimal(""), None);
    }

    #[test]
    fn identical_tables_have_zero_difference() {
        let r = validate_tables(&fixture("table2.csv"), &fixture("table2.csv")).unwrap();
        assert_eq!(r.rows, 10);
        assert!(r
            .channels
            .iter()
            .all(|c| c.max_abs == 0.0 && c.max_row == 1));
    }

    #[test]
    fn published_tables_differ_by_hand_computed_maxima() {
        let r = validate_tables(&fixture("table2.csv"), &fixture("table3.csv")).unwrap();
        let max = |c: &str| r.channel(c).unwrap().max_abs;
        assert_eq!(max("air_temp"), 1.3);
        assert_eq!(r.channel("air_temp").unwrap().max_row, 5);
        assert_eq!(max("air_humidity"), 1.1);
        assert_eq!(max("soil_temp"), 2.6);
        assert_eq!(max("soil_moisture"), 11.0);
        assert_eq!(r.channel("soil_moisture").unwrap().max_row, 4);
        assert_eq!(max("co2"), 3.0);
    }

    #[test]
    fn mismatched_shapes_are_errors() {
        let dir = tempfile::tempdir().unwrap();
        let short = dir.path().join("short.csv");
        std::fs::write(&short, "number,air_temp\n1,20.0\n").unwrap();
        assert!(matches!(
            validate_tables(&short, &fixture("table3.csv")),
            Err(TableError::RowCount { .. })
        ));
        let other = dir.path().join("other.csv");
        std::fs::write(&other, "number,wind\n1,2\n").unwrap();
        let one = dir.path().join("one.csv");
        std::fs::write(&one, "number,air_temp\n1,x\n").unwrap();
        assert!(matches!(
            validate_tables(&other, &one),
            Err(TableError::MissingColumn(_))
        ));
        assert!(matches!(
            validate_tables(&one, &one),
            Err(TableError::BadCell { .. })
        ));
    }
}

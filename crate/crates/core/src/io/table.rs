//! CSV result tables.
//!
//! Floats are written in Rust's shortest round-trip form, rows end in `\n`,
//! and every emitted file is fingerprinted with SHA-256.

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::ensemble::EnsembleStats;
use crate::error::{Error, Result};
use crate::experiments::SweepTable;
use crate::floquet::delta_h_bound;

pub const TRAJECTORY_COLUMNS: [&str; 7] = [
    "period",
    "time",
    "mag_mean",
    "mag_stderr",
    "qfi_mean",
    "qfi_stderr",
    "dh_bound",
];

/// A rectangular table of already formatted cells.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

/// Shortest decimal that parses back to the same `f64`.
pub fn format_float(x: f64) -> String {
    format!("{x:?}")
}

impl Table {
    pub fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    pub fn has_column(&self, name: &str) -> bool {
        self.column_index(name).is_some()
    }

    /// Values of a numeric column.
    pub fn column_f64(&self, name: &str) -> Result<Vec<f64>> {
        let i = self
            .column_index(name)
            .ok_or_else(|| Error::Config(format!("table has no column {name:?}")))?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, row)| {
                row[i].parse::<f64>().map_err(|_| Error::Parse {
                    source_name: format!("column {name}"),
                    line: Some(r + 2),
                    message: format!("{:?} is not a number", row[i]),
                })
            })
            .collect()
    }

    pub fn from_stats(stats: &EnsembleStats) -> Self {
        let mut t = Self::new(&TRAJECTORY_COLUMNS);
        for s in &stats.periods {
            t.rows.push(vec![
                s.period.to_string(),
                format_float(s.time),
                format_float(s.mag_mean),
                format_float(s.mag_stderr),
                format_float(s.qfi_mean),
                format_float(s.qfi_stderr),
                format_float(delta_h_bound(s.qfi_mean)),
            ]);
        }
        t
    }

    /// Sweep rows in ascending axis order, with the axis as first column and
    /// a per-point status as last.
    pub fn from_sweep(sweep: &SweepTable) -> Self {
        let mut columns = vec![sweep.axis.name()];
        columns.extend(TRAJECTORY_COLUMNS);
        columns.push("status");
        let mut t = Self::new(&columns);
        for r in sweep.rows() {
            t.rows.push(vec![
                format_float(r.value),
                r.period.to_string(),
                format_float(r.time),
                format_float(r.mag_mean),
                format_float(r.mag_stderr),
                format_float(r.qfi_mean),
                format_float(r.qfi_stderr),
                format_float(delta_h_bound(r.qfi_mean)),
                r.status,
            ]);
        }
        t
    }

    pub fn to_csv_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let to_err = |e: csv::Error| Error::Config(format!("cannot encode table: {e}"));
        w.write_record(&self.columns).map_err(to_err)?;
        for row in &self.rows {
            w.write_record(row).map_err(to_err)?;
        }
        w.into_inner()
            .map_err(|e| Error::Config(format!("cannot encode table: {e}")))
    }

    pub fn from_csv_str(text: &str, source_name: &str) -> Result<Self> {
        let mut r = csv::ReaderBuilder::new().from_reader(text.as_bytes());
        let parse_err = |e: csv::Error| Error::Parse {
            source_name: source_name.to_string(),
            line: e.position().map(|p| p.line() as usize),
            message: e.to_string(),
        };
        let columns = r
            .headers()
            .map_err(parse_err)?
            .iter()
            .map(str::to_string)
            .collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<Vec<Vec<String>>, _>>()
            .map_err(parse_err)?;
        Ok(Self { columns, rows })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes the table as CSV and returns the SHA-256 of the written bytes.
pub fn emit_table(table: &Table, path: &Path) -> Result<String> {
    if table.is_empty() {
        return Err(Error::Config(format!(
            "refusing to write an empty table to {}",
            path.display()
        )));
    }
    let bytes = table.to_csv_bytes()?;
    std::fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_table(path: &Path) -> Result<Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Table::from_csv_str(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::PeriodStats;
    use proptest::prelude::*;

    fn single_record() -> EnsembleStats {
        EnsembleStats {
            periods: vec![PeriodStats {
                period: 0,
                time: 0.0,
                mag_mean: 0.9,
                mag_stderr: 0.01,
                qfi_mean: 0.0,
                qfi_stderr: 0.0,
            }],
            n_effective: 1,
            n_failed: 0,
            failures: vec![],
        }
    }

    #[test]
    fn single_record_csv() {
        let bytes = Table::from_stats(&single_record()).to_csv_bytes().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert_eq!(
            text,
            "period,time,mag_mean,mag_stderr,qfi_mean,qfi_stderr,dh_bound\n0,0.0,0.9,0.01,0.0,0.0,inf\n"
        );
    }

    #[test]
    fn emission_is_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let t = Table::from_stats(&single_record());
        let a = emit_table(&t, &dir.path().join("a.csv")).unwrap();
        let b = emit_table(&t, &dir.path().join("b.csv")).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            std::fs::read(dir.path().join("a.csv")).unwrap(),
            std::fs::read(dir.path().join("b.csv")).unwrap()
        );
        assert_eq!(a, sha256_hex(&std::fs::read(dir.path().join("a.csv")).unwrap()));
        assert_eq!(read_table(&dir.path().join("a.csv")).unwrap(), t);
    }

    #[test]
    fn empty_table_and_io_errors() {
        let dir = tempfile::tempdir().unwrap();
        let empty = Table::new(&TRAJECTORY_COLUMNS);
        assert!(matches!(emit_table(&empty, &dir.path().join("e.csv")), Err(Error::Config(_))));
        let t = Table::from_stats(&single_record());
        let err = emit_table(&t, &dir.path().join("missing/x.csv")).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains("missing"));
    }

    #[test]
    fn known_digest() {
        assert_eq!(
            sha256_hex(b"abc"),
            "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
        );
    }

    proptest! {
        #[test]
        fn floats_round_trip(x in proptest::num::f64::ANY) {
            let back: f64 = format_float(x).parse().unwrap();
            if x.is_nan() {
                prop_assert!(back.is_nan());
            } else {
                prop_assert_eq!(back.to_bits(), x.to_bits());
            }
        }
    }
}

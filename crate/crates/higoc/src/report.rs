//! Aligned text tables from result CSVs.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::RESULT_COLUMNS;

/// `"93.5±9.4"`.
pub fn format_ns(mean: f64, std: f64) -> String {
    format!("{mean:.1}±{std:.1}")
}

const HEADER: [&str; 7] = ["maze", "tier", "variant", "H", "N", "NS", "success / contact"];

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub cells: [String; 7],
}

/// Parses a results CSV. Errors name the offending line (1-based, header
/// included).
pub fn read_report<R: Read>(r: R, path: &Path) -> Result<Vec<ReportRow>> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = rdr.headers().map_err(|e| err(1, e.to_string()))?.clone();
    if headers.iter().ne(RESULT_COLUMNS.iter().copied()) {
        return Err(err(1, format!("expected columns {}", RESULT_COLUMNS.join(","))));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| err(line, e.to_string()))?;
        let num = |k: usize| -> Result<f64> {
            rec[k]
                .parse::<f64>()
                .map_err(|_| err(line, format!("{} is not a number: {:?}", RESULT_COLUMNS[k], &rec[k])))
        };
        let (mean, std, success, contact) = (num(7)?, num(8)?, num(9)?, num(10)?);
        rows.push(ReportRow {
            cells: [
                rec[0].to_string(),
                rec[1].to_string(),
                rec[2].to_string(),
                rec[3].to_string(),
                rec[4].to_string(),
                format_ns(mean, std),
                format!("{success:.2} / {contact:.2}"),
            ],
        });
    }
    Ok(rows)
}

pub fn render(rows: &[ReportRow]) -> String {
    let mut widths = HEADER.map(|h| h.chars().count());
    for r in rows {
        for (w, c) in widths.iter_mut().zip(&r.cells) {
            *w = (*w).max(c.chars().count());
        }
    }
    let line = |cells: &[&str]| {
        let mut s = String::new();
        for (k, (c, w)) in cells.iter().zip(&widths).enumerate() {
            if k > 0 {
                s.push_str("  ");
            }
            let pad = w - c.chars().count();
            // numbers right-aligned, labels left-aligned
            if k >= 3 {
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            } else {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            }
        }
        s.trim_end().to_string()
    };
    let mut out = line(&HEADER);
    out.push('\n');
    for r in rows {
        let cells: Vec<&str> = r.cells.iter().map(String::as_str).collect();
        out.push_str(&line(&cells));
        out.push('\n');
    }
    out
}

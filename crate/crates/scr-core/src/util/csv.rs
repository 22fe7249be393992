//! Minimal CSV writing and reading with byte-stable output.
//!
//! Fields in this project never contain commas, quotes, or newlines, so no
//! quoting layer is needed. Floats are written with the shortest round-trip
//! representation; re-parsing a written file recovers values exactly, which
//! the report readers rely on.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

pub fn format_rows(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{}", header.join(","));
    for row in rows {
        debug_assert_eq!(row.len(), header.len());
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

pub fn write_file(path: &Path, header: &[&str], rows: &[Vec<String>]) -> io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, format_rows(header, rows))
}

/// Reads a CSV written by [`write_file`]. Returns the header and rows.
pub fn read_file(path: &Path) -> io::Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = match lines.next() {
        Some(h) => h.split(',').map(str::to_string).collect(),
        None => return Err(io::Error::new(io::ErrorKind::InvalidData, "empty csv")),
    };
    let rows = lines
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect();
    Ok((header, rows))
}

/// Shortest round-trip formatting for metric values.
pub fn fmt_f64(v: f64) -> String {
    let mut s = format!("{v}");
    if !s.contains('.') && !s.contains('e') && !s.contains("inf") && !s.contains("NaN") {
        s.push_str(".0");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_round_trip() {
        for v in [0.0, 1.0, -0.5, 0.1 + 0.2, 1e-9, 123456.789] {
            let s = fmt_f64(v);
            assert_eq!(s.parse::<f64>().unwrap(), v, "{s}");
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.csv");
        let rows = vec![vec!["a".into(), "1.5".into()], vec!["b".into(), "2.0".into()]];
        write_file(&p, &["name", "value"], &rows).unwrap();
        let (h, r) = read_file(&p).unwrap();
        assert_eq!(h, vec!["name", "value"]);
        assert_eq!(r, rows);
    }
}

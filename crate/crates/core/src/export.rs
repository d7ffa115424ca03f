//! Row-major matrix CSV files with a dimension header:
//!
//! ```text
//! # rows=2,cols=3
//! 1,2,3
//! 4,5,6
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub fn matrix_to_csv(m: &Matrix) -> String {
    let mut out = format!("# rows={},cols={}\n", m.nrows(), m.ncols());
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", cells.join(",")).unwrap();
    }
    out
}

pub fn write_matrix_csv(m: &Matrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix_to_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix_csv(path: impl AsRef<Path>) -> Result<Matrix> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text).map_err(|(line, message)| Error::Ingestion {
        path: path.to_path_buf(),
        line,
        message,
    })
}

fn parse_matrix_csv(text: &str) -> std::result::Result<Matrix, (usize, String)> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or((1, "empty file".to_string()))?;
    let dims = header
        .strip_prefix("# rows=")
        .and_then(|rest| rest.split_once(",cols="))
        .and_then(|(r, c)| {
            Some((
                r.trim().parse::<usize>().ok()?,
                c.trim().parse::<usize>().ok()?,
            ))
        });
    let (rows, cols) = dims.ok_or((1, format!("expected '# rows=R,cols=C', got '{header}'")))?;

    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let vals = line
            .split(',')
            .map(|c| c.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| (idx + 1, format!("bad number: {e}")))?;
        if vals.len() != cols {
            return Err((
                idx + 1,
                format!("expected {cols} columns, found {}", vals.len()),
            ));
        }
        data.extend(vals);
        seen += 1;
    }
    if seen != rows {
        return Err((0, format!("expected {rows} rows, found {seen}")));
    }
    Ok(Matrix::from_row_slice(rows, cols, &data))
}

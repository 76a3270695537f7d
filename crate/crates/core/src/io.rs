//! Plain CSV for dense matrices, full precision, row-major.

use nalgebra::DMatrix;
use std::fmt::Write as _;

pub fn matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                s.push(',');
            }
            let _ = write!(s, "{:?}", m[(i, j)]);
        }
        s.push('\n');
    }
    s
}

pub fn matrix_from_csv(text: &str) -> Result<DMatrix<f64>, String> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(',')
            .map(|t| t.trim().parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| format!("line {}: {e}", ln + 1))?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(format!("line {}: ragged row", ln + 1));
            }
        }
        rows.push(row);
    }
    let r = rows.len();
    let c = rows.first().map(|x| x.len()).unwrap_or(0);
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

//! File formats. Matrices and embedding lists travel as headerless CSV,
//! one row per line; trajectories and tangent reports as headered CSV;
//! images as binary PPM (P6) with [-1, 1] mapped linearly onto 0..=255.
//!
//! The string-level encoders are separated from the filesystem wrappers so
//! non-filesystem callers can reuse them.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::Array2;

use crate::diagnostics::{AssignmentReport, TangentReport};
use crate::error::{Error, Result};
use crate::measures::{CostMatrix, Embedding};
use crate::pipeline::{Image, TrajectoryRecord};

/// Parse headerless decimal CSV into a rectangular matrix. `origin` names
/// the source in diagnostics; line numbers are 1-based.
pub fn parse_matrix_csv(text: &str, origin: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row = line
            .split(',')
            .map(|cell| {
                cell.trim().parse::<f64>().map_err(|_| Error::Parse {
                    path: origin.to_string(),
                    line: idx + 1,
                    message: format!("`{}` is not a number", cell.trim()),
                })
            })
            .collect::<Result<Vec<f64>>>()?;
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(Error::Parse {
                path: origin.to_string(),
                line: idx + 1,
                message: format!("expected {} columns, found {}", width, row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            path: origin.to_string(),
            line: 1,
            message: "no data rows".into(),
        });
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Array2::from_shape_vec((rows.len(), width), flat).expect("rectangular by construction"))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path)?;
    parse_matrix_csv(&text, &path.display().to_string())
}

pub fn read_cost_csv(path: &Path) -> Result<CostMatrix> {
    CostMatrix::from_entries(read_matrix_csv(path)?)
}

pub fn matrix_to_csv(matrix: &Array2<f64>) -> String {
    let mut out = String::new();
    for row in matrix.rows() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, matrix: &Array2<f64>) -> Result<()> {
    Ok(std::fs::write(path, matrix_to_csv(matrix))?)
}

/// One embedding per row.
pub fn parse_embeddings_csv(text: &str, origin: &str) -> Result<Vec<Embedding>> {
    let matrix = parse_matrix_csv(text, origin)?;
    matrix
        .rows()
        .into_iter()
        .map(|row| Embedding::new(row.to_vec()))
        .collect()
}

pub fn read_embeddings_csv(path: &Path) -> Result<Vec<Embedding>> {
    let text = std::fs::read_to_string(path)?;
    parse_embeddings_csv(&text, &path.display().to_string())
}

pub fn embeddings_to_csv(embeddings: &[Embedding]) -> String {
    let mut out = String::new();
    for e in embeddings {
        let cells: Vec<String> = e.values().iter().map(|v| format!("{v}")).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

pub fn write_embeddings_csv(path: &Path, embeddings: &[Embedding]) -> Result<()> {
    Ok(std::fs::write(path, embeddings_to_csv(embeddings))?)
}

/// Header `iter,loss,transport_cost,marginal_err,count_0,...`.
pub fn trajectory_to_csv(record: &TrajectoryRecord) -> String {
    let m = record.rows.first().map_or(0, |r| r.counts.len());
    let mut out = String::from("iter,loss,transport_cost,marginal_err");
    for j in 0..m {
        let _ = write!(out, ",count_{j}");
    }
    out.push('\n');
    for row in &record.rows {
        let _ = write!(
            out,
            "{},{},{},{}",
            row.iteration, row.loss, row.transport_cost, row.marginal_error
        );
        for c in &row.counts {
            let _ = write!(out, ",{c}");
        }
        out.push('\n');
    }
    out
}

/// Header `patch,phi_0..phi_{m-1},w_0..w_{m-1},assigned`.
pub fn tangent_to_csv(report: &TangentReport) -> String {
    let m = report.phis.ncols();
    let mut out = String::from("patch");
    for j in 0..m {
        let _ = write!(out, ",phi_{j}");
    }
    for j in 0..m {
        let _ = write!(out, ",w_{j}");
    }
    out.push_str(",assigned\n");
    for i in 0..report.phis.nrows() {
        let _ = write!(out, "{i}");
        for j in 0..m {
            let _ = write!(out, ",{}", report.phis[(i, j)]);
        }
        for j in 0..m {
            let _ = write!(out, ",{}", report.pushforwards[(i, j)]);
        }
        let _ = writeln!(out, ",{}", report.assigned[i]);
    }
    out
}

/// Header `patch,assigned,phi_0..phi_{m-1}`.
pub fn assignment_to_csv(report: &AssignmentReport) -> String {
    let m = report.distance_rows.ncols();
    let mut out = String::from("patch,assigned");
    for j in 0..m {
        let _ = write!(out, ",phi_{j}");
    }
    out.push('\n');
    for (i, &assigned) in report.assigned.iter().enumerate() {
        let _ = write!(out, "{i},{assigned}");
        for j in 0..m {
            let _ = write!(out, ",{}", report.distance_rows[(i, j)]);
        }
        out.push('\n');
    }
    out
}

/// Binary PPM (P6), [-1, 1] mapped linearly to 0..=255.
pub fn image_to_ppm(image: &Image) -> Vec<u8> {
    let (h, w) = (image.height(), image.width());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for c in 0..3 {
                let v = image.pixels()[(y, x, c)];
                out.push(((v + 1.0) / 2.0 * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    out
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    Ok(std::fs::write(path, image_to_ppm(image))?)
}

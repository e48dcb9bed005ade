//! Representation export for external visualisation, with a built-in
//! principal-component projection.

use nalgebra::{DMatrix, SymmetricEigen};
use std::fmt::Write as _;
use std::path::Path;

use crate::model::{InputMode, MultiModalAE, MultiModalSample};

use super::EvalError;

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRow {
    pub id: String,
    pub mode: InputMode,
    pub label: usize,
    pub values: Vec<f64>,
    pub x2d: f64,
    pub y2d: f64,
}

/// Projects rows onto their top two principal directions. Each direction's
/// sign is fixed so its largest-magnitude component is positive.
pub fn principal_projection(rows: &[Vec<f64>]) -> Vec<(f64, f64)> {
    let n = rows.len();
    if n == 0 {
        return Vec::new();
    }
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, v)| *m += v / n as f64);
    }
    let centred = DMatrix::from_fn(n, d, |i, j| rows[i][j] - mean[j]);
    let cov = centred.transpose() * &centred / n as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes: Vec<Vec<f64>> = order
        .iter()
        .take(2)
        .map(|&k| {
            let mut v: Vec<f64> = eig.eigenvectors.column(k).iter().copied().collect();
            let lead = v.iter().copied().fold(0.0f64, |a, x| if x.abs() > a.abs() { x } else { a });
            if lead < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    while axes.len() < 2 {
        axes.push(vec![0.0; d]);
    }
    (0..n)
        .map(|i| {
            let c = centred.row(i);
            let p = |axis: &[f64]| c.iter().zip(axis).map(|(a, b)| a * b).sum::<f64>();
            (p(&axes[0]), p(&axes[1]))
        })
        .collect()
}

/// Joint, acoustic-only and vibration-only codes of every sample.
pub fn embedding_rows(model: &MultiModalAE, samples: &[&MultiModalSample]) -> Result<Vec<EmbeddingRow>, EvalError> {
    let mut rows = Vec::with_capacity(3 * samples.len());
    for mode in InputMode::ALL {
        let batch = model.encode(samples, mode)?;
        for (i, s) in samples.iter().enumerate() {
            rows.push(EmbeddingRow {
                id: s.id.clone(),
                mode,
                label: s.label,
                values: batch.codes.row(i).to_vec(),
                x2d: 0.0,
                y2d: 0.0,
            });
        }
    }
    let values: Vec<Vec<f64>> = rows.iter().map(|r| r.values.clone()).collect();
    for (r, (x, y)) in rows.iter_mut().zip(principal_projection(&values)) {
        r.x2d = x;
        r.y2d = y;
    }
    Ok(rows)
}

pub fn embeddings_to_tsv(rows: &[EmbeddingRow], header_comment: Option<&str>) -> String {
    let mut s = String::new();
    if let Some(c) = header_comment {
        for line in c.lines() {
            let _ = writeln!(s, "# {line}");
        }
    }
    let width = rows.first().map_or(0, |r| r.values.len());
    s.push_str("sample_id\tmode\tlabel");
    for k in 0..width {
        let _ = write!(s, "\tz{k}");
    }
    s.push_str("\tx2d\ty2d\n");
    for r in rows {
        let _ = write!(s, "{}\t{}\t{}", r.id, r.mode.short(), r.label);
        for v in &r.values {
            let _ = write!(s, "\t{v}");
        }
        let _ = writeln!(s, "\t{}\t{}", r.x2d, r.y2d);
    }
    s
}

pub fn parse_embeddings(text: &str) -> Result<Vec<EmbeddingRow>, EvalError> {
    let bad = |m: String| EvalError::Invalid(format!("embedding table: {m}"));
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| bad("missing header".into()))?;
    let cols = header.split('\t').count();
    if cols < 5 {
        return Err(bad("too few columns".into()));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != cols {
            return Err(bad(format!("row {n} has {} fields, expected {cols}", f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| bad(format!("row {n}: {e}")));
        let values = f[3..cols - 2].iter().map(|s| num(s)).collect::<Result<Vec<_>, _>>()?;
        rows.push(EmbeddingRow {
            id: f[0].to_string(),
            mode: f[1].parse().map_err(bad)?,
            label: f[2].parse().map_err(|e| bad(format!("row {n}: {e}")))?,
            values,
            x2d: num(f[cols - 2])?,
            y2d: num(f[cols - 1])?,
        });
    }
    Ok(rows)
}

/// Writes the table of all three representations per sample to `path`.
pub fn export_embeddings(
    model: &MultiModalAE,
    samples: &[&MultiModalSample],
    path: &Path,
    header_comment: Option<&str>,
) -> Result<Vec<EmbeddingRow>, EvalError> {
    let rows = embedding_rows(model, samples)?;
    std::fs::write(path, embeddings_to_tsv(&rows, header_comment)).map_err(|e| EvalError::io(path, e))?;
    Ok(rows)
}

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Cosine similarity between every pair of rows of a positional table
/// `[N+1, D]`. The diagonal is exactly 1; pairs involving a zero-norm row
/// are 0.
pub fn position_similarity<T: Float>(pos: &Tensor<T>) -> Result<Tensor<f64>> {
    if pos.rank() != 2 {
        return Err(Error::Dimension {
            op: "position_similarity",
            lhs: pos.shape().to_vec(),
            rhs: vec![0, 0],
        });
    }
    let n = pos.shape()[0];
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|i| pos.row(i).iter().map(|v| v.as_f64()).collect())
        .collect();
    let norms: Vec<f64> = rows
        .iter()
        .map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if let Some(i) = norms.iter().position(|&v| v == 0.0) {
        log::warn!("positional row {i} has zero norm; its similarities are set to 0");
    }
    let mut out = Tensor::zeros(vec![n, n]);
    let data = out.data_mut();
    for i in 0..n {
        data[i * n + i] = 1.0;
        for j in i + 1..n {
            let s = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0)
            };
            data[i * n + j] = s;
            data[j * n + i] = s;
        }
    }
    Ok(out)
}

pub fn render_csv(m: &Tensor<f64>) -> String {
    let mut s = String::new();
    for i in 0..m.shape()[0] {
        let row: Vec<String> = m.row(i).iter().map(|v| format!("{v:.6}")).collect();
        let _ = writeln!(s, "{}", row.join(","));
    }
    s
}

/// Binary greyscale PGM (`P5`) with `[-1, 1]` mapped onto `0..=255`, each
/// entry drawn as a `scale × scale` block.
pub fn render_pgm(m: &Tensor<f64>, scale: usize) -> Vec<u8> {
    let n = m.shape()[0];
    let side = n * scale.max(1);
    let mut out = format!("P5\n{side} {side}\n255\n").into_bytes();
    for y in 0..side {
        for x in 0..side {
            let v = m.data()[(y / scale.max(1)) * n + x / scale.max(1)];
            out.push((((v + 1.0) / 2.0).clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    out
}

pub fn write_heatmap(m: &Tensor<f64>, csv: impl AsRef<Path>, pgm: impl AsRef<Path>) -> Result<()> {
    fs::write(csv, render_csv(m))?;
    fs::write(pgm, render_pgm(m, 8))?;
    Ok(())
}

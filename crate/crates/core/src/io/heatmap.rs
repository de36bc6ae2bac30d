//! Matrices as 8-bit grayscale PGM images, symmetric around zero.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Binary PGM bytes mapping `[-max|a|, max|a|]` onto `[0, 255]`; zero lands on 128.
pub fn heatmap_bytes(matrix: &Tensor) -> Result<Vec<u8>> {
    if matrix.rank() != 2 {
        return Err(Error::shape("heatmap", format!("expected a matrix, got {:?}", matrix.shape())));
    }
    if !matrix.all_finite() {
        return Err(Error::NonFinite("heatmap matrix".into()));
    }
    let (h, w) = (matrix.shape()[0], matrix.shape()[1]);
    let max = matrix.max_abs();
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(matrix.data().iter().map(|&v| {
        let t = if max > 0.0 { v / max } else { 0.0 };
        ((t + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
    }));
    Ok(out)
}

pub fn export_heatmap(matrix: &Tensor, path: &Path) -> Result<()> {
    std::fs::write(path, heatmap_bytes(matrix)?)?;
    Ok(())
}

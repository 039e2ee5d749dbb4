//! Dataset export as CSV: header row, row-major samples, 9 significant
//! digits, '.' decimal separator.

use crate::error::{AppError, Result};
use std::io::Write;
use std::path::Path;
use widthfx_core::sampler::Dataset;

pub fn export_dataset_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let mut f = std::io::BufWriter::new(
        std::fs::File::create(path).map_err(|e| AppError::io(path, e))?,
    );
    let write = |f: &mut dyn Write, s: String| -> Result<()> {
        f.write_all(s.as_bytes()).map_err(|e| AppError::io(path, e))
    };
    let mut header = Vec::new();
    for j in 0..dataset.input_dim() {
        header.push(format!("x{j}"));
    }
    for j in 0..dataset.output_dim() {
        header.push(format!("y{j}"));
    }
    write(&mut f, header.join(","))?;
    write(&mut f, "\n".into())?;
    for row in 0..dataset.len() {
        let mut cells = Vec::with_capacity(dataset.input_dim() + dataset.output_dim());
        for j in 0..dataset.input_dim() {
            cells.push(format_sig9(dataset.x()[(row, j)]));
        }
        for j in 0..dataset.output_dim() {
            cells.push(format_sig9(dataset.y()[(row, j)]));
        }
        write(&mut f, cells.join(","))?;
        write(&mut f, "\n".into())?;
    }
    Ok(())
}

/// 9 significant digits, no thousands separators.
pub fn format_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

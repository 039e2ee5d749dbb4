//! Binary chain-trace stream.
//!
//! Little-endian layout: magic `"BNNS"`, version `u32`, then framed
//! per-sample kernel blocks: `chain u64, step u64, layer u32, rows u32,
//! cols u32`, followed by `rows * cols` f64 values in row-major order.

use crate::error::{AppError, Result};
use nalgebra::DMatrix;
use std::io::{Read, Write};
use std::path::Path;
use widthfx_core::sampler::{TraceRecord, TraceSink};

pub const TRACE_MAGIC: [u8; 4] = *b"BNNS";
pub const TRACE_VERSION: u32 = 1;

pub struct TraceWriter<W: Write> {
    out: W,
    error: Option<std::io::Error>,
}

impl<W: Write> TraceWriter<W> {
    pub fn new(mut out: W) -> std::io::Result<Self> {
        out.write_all(&TRACE_MAGIC)?;
        out.write_all(&TRACE_VERSION.to_le_bytes())?;
        Ok(Self { out, error: None })
    }

    /// First write error, if any (the sink trait cannot surface it inline).
    pub fn finish(mut self) -> std::io::Result<()> {
        if let Some(e) = self.error.take() {
            return Err(e);
        }
        self.out.flush()
    }

    fn try_record(&mut self, record: &TraceRecord<'_>) -> std::io::Result<()> {
        self.out.write_all(&record.chain.to_le_bytes())?;
        self.out.write_all(&record.step.to_le_bytes())?;
        self.out.write_all(&(record.layer as u32).to_le_bytes())?;
        self.out.write_all(&(record.kernel.nrows() as u32).to_le_bytes())?;
        self.out.write_all(&(record.kernel.ncols() as u32).to_le_bytes())?;
        for i in 0..record.kernel.nrows() {
            for j in 0..record.kernel.ncols() {
                self.out.write_all(&record.kernel[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }
}

impl<W: Write> TraceSink for TraceWriter<W> {
    fn record(&mut self, record: &TraceRecord<'_>) {
        if self.error.is_some() {
            return;
        }
        if let Err(e) = self.try_record(record) {
            self.error = Some(e);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceFrame {
    pub chain: u64,
    pub step: u64,
    pub layer: u32,
    pub kernel: DMatrix<f64>,
}

/// Read a whole trace stream back (tests and offline analysis).
pub fn read_trace(path: impl AsRef<Path>) -> Result<Vec<TraceFrame>> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| AppError::io(path, e))?;
    let fail = |offset: usize, msg: &str| AppError::Format {
        path: path.to_path_buf(),
        offset: offset as u64,
        message: msg.into(),
    };
    if bytes.len() < 8 || bytes[..4] != TRACE_MAGIC {
        return Err(fail(0, "bad trace magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != TRACE_VERSION {
        return Err(fail(4, "unsupported trace version"));
    }
    let mut frames = Vec::new();
    let mut at = 8usize;
    while at < bytes.len() {
        if bytes.len() < at + 28 {
            return Err(fail(at, "truncated frame header"));
        }
        let chain = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
        let step = u64::from_le_bytes(bytes[at + 8..at + 16].try_into().unwrap());
        let layer = u32::from_le_bytes(bytes[at + 16..at + 20].try_into().unwrap());
        let rows = u32::from_le_bytes(bytes[at + 20..at + 24].try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(bytes[at + 24..at + 28].try_into().unwrap()) as usize;
        at += 28;
        let need = rows * cols * 8;
        if bytes.len() < at + need {
            return Err(fail(at, "truncated frame payload"));
        }
        let mut kernel = DMatrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                kernel[(i, j)] =
                    f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
                at += 8;
            }
        }
        frames.push(TraceFrame { chain, step, layer, kernel });
    }
    Ok(frames)
}

//! Dense optical flow fields and the Middlebury `.flo` container.

use std::fs;
use std::path::Path;

use ndarray::{Array3, ArrayView3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Magic number at the start of every `.flo` file ("PIEH" read as a float).
pub const FLO_MAGIC: f32 = 202021.25;
const FLO_HEADER_BYTES: usize = 12;

/// A `2 × H × W` displacement field in pixels: channel 0 is dx, channel 1 is dy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowField {
    pub values: Array3<f32>,
}

impl FlowField {
    pub fn zeros(height: usize, width: usize) -> Self {
        FlowField {
            values: Array3::zeros((2, height, width)),
        }
    }

    pub fn constant(height: usize, width: usize, dx: f32, dy: f32) -> Self {
        let mut f = Self::zeros(height, width);
        f.values.index_axis_mut(ndarray::Axis(0), 0).fill(dx);
        f.values.index_axis_mut(ndarray::Axis(0), 1).fill(dy);
        f
    }

    pub fn from_array(values: Array3<f32>) -> Result<Self> {
        if values.shape()[0] != 2 {
            return Err(Error::Shape(format!(
                "flow field needs 2 channels, got {}",
                values.shape()[0]
            )));
        }
        Ok(FlowField { values })
    }

    pub fn height(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn view(&self) -> ArrayView3<'_, f32> {
        self.values.view()
    }

    pub fn to_f64(&self) -> Array3<f64> {
        self.values.mapv(f64::from)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// Serializes to the Middlebury layout: magic, width, height, then
    /// row-major interleaved `(dx, dy)` pairs, all little-endian.
    pub fn to_flo_bytes(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let mut out = Vec::with_capacity(FLO_HEADER_BYTES + 8 * h * w);
        out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        out.extend_from_slice(&(w as i32).to_le_bytes());
        out.extend_from_slice(&(h as i32).to_le_bytes());
        for y in 0..h {
            for x in 0..w {
                out.extend_from_slice(&self.values[[0, y, x]].to_le_bytes());
                out.extend_from_slice(&self.values[[1, y, x]].to_le_bytes());
            }
        }
        out
    }

    pub fn from_flo_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |reason: String| Error::FlowFormat {
            path: path.to_path_buf(),
            reason,
        };
        if bytes.len() < FLO_HEADER_BYTES {
            return Err(bad(format!("file is {} bytes, header needs 12", bytes.len())));
        }
        let word = |i: usize| [bytes[i], bytes[i + 1], bytes[i + 2], bytes[i + 3]];
        let magic = f32::from_le_bytes(word(0));
        if magic != FLO_MAGIC {
            return Err(bad(format!("bad magic number {magic}")));
        }
        let w = i32::from_le_bytes(word(4));
        let h = i32::from_le_bytes(word(8));
        if w <= 0 || h <= 0 {
            return Err(bad(format!("invalid dimensions {w}x{h}")));
        }
        let (w, h) = (w as usize, h as usize);
        let expected = FLO_HEADER_BYTES + 8 * w * h;
        if bytes.len() != expected {
            return Err(bad(format!(
                "payload size mismatch: expected {expected} bytes, found {}",
                bytes.len()
            )));
        }
        let mut values = Array3::<f32>::zeros((2, h, w));
        let mut off = FLO_HEADER_BYTES;
        for y in 0..h {
            for x in 0..w {
                values[[0, y, x]] = f32::from_le_bytes(word(off));
                values[[1, y, x]] = f32::from_le_bytes(word(off + 4));
                off += 8;
            }
        }
        Ok(FlowField { values })
    }
}

pub fn save_flow_file(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, flow.to_flo_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_flow_file(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FlowField::from_flo_bytes(&bytes, path)
}

/// Area-averages a flow field onto a coarser grid whose size divides the
/// source size, rescaling dx by `W/w` and dy by `H/h` so the result is
/// expressed in target-resolution pixels.
pub fn downsample_flow(flow: &FlowField, height: usize, width: usize) -> Result<FlowField> {
    let (h, w) = (flow.height(), flow.width());
    if height == 0 || width == 0 || height > h || width > w || h % height != 0 || w % width != 0
    {
        return Err(Error::Shape(format!(
            "cannot area-downsample a {h}x{w} flow to {height}x{width}"
        )));
    }
    let (fy, fx) = (h / height, w / width);
    let scale = [width as f64 / w as f64, height as f64 / h as f64];
    let norm = 1.0 / (fy * fx) as f64;
    let mut out = Array3::<f32>::zeros((2, height, width));
    for c in 0..2 {
        for y in 0..height {
            for x in 0..width {
                let mut acc = 0.0f64;
                for dy in 0..fy {
                    for dx in 0..fx {
                        acc += f64::from(flow.values[[c, y * fy + dy, x * fx + dx]]);
                    }
                }
                out[[c, y, x]] = (acc * norm * scale[c]) as f32;
            }
        }
    }
    Ok(FlowField { values: out })
}

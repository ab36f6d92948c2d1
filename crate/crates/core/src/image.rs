//! Grayscale float frames and their PFM encoding.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io_util::atomic_write;

/// Row-major H×W intensity image.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height || width == 0 || height == 0 {
            return Err(Error::shape(format!(
                "frame {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    pub fn same_shape(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Portable float map, grayscale, little-endian, bottom-to-top rows.
    pub fn to_pfm(&self) -> Vec<u8> {
        let mut out = format!("Pf\n{} {}\n-1.0\n", self.width, self.height).into_bytes();
        for y in (0..self.height).rev() {
            for x in 0..self.width {
                out.extend_from_slice(&(self.at(x, y) as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_pfm(bytes: &[u8]) -> Result<Self> {
        let mut fields = Vec::new();
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Format("truncated PFM header".into()));
            }
            fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
        }
        pos += 1;
        if fields[0] != "Pf" {
            return Err(Error::Format(format!("expected grayscale PFM 'Pf', got {:?}", fields[0])));
        }
        let parse = |s: &str| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PFM extent {s:?}")));
        let (width, height) = (parse(&fields[1])?, parse(&fields[2])?);
        let scale: f64 = fields[3].parse().map_err(|_| Error::Format("bad PFM scale".into()))?;
        let little = scale < 0.0;
        let body = bytes.get(pos..).unwrap_or_default();
        if body.len() != width * height * 4 {
            return Err(Error::Format(format!(
                "PFM body has {} bytes, expected {}",
                body.len(),
                width * height * 4
            )));
        }
        let mut data = vec![0.0; width * height];
        for (i, chunk) in body.chunks_exact(4).enumerate() {
            let raw = [chunk[0], chunk[1], chunk[2], chunk[3]];
            let v = if little { f32::from_le_bytes(raw) } else { f32::from_be_bytes(raw) };
            let (row, col) = (i / width, i % width);
            data[(height - 1 - row) * width + col] = v as f64;
        }
        Frame::new(width, height, data)
    }

    pub fn save_pfm(&self, path: impl AsRef<Path>) -> Result<()> {
        atomic_write(path.as_ref(), |w| w.write_all(&self.to_pfm()))
    }

    pub fn load_pfm(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_pfm(&std::fs::read(path)?)
    }
}

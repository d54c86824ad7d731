//! Binary dataset container: a fixed header followed by `[u16 label][u8 pixels, CHW]` records.

use std::fs;
use std::path::Path;

use crate::error::{DataError, Error, Result};

pub const MAGIC: &[u8; 5] = b"CLDS1";
/// Magic, `C`/`H`/`W` as u16, class count and record count as u32, all little-endian.
pub const HEADER_LEN: usize = 5 + 3 * 2 + 4 + 4;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Container {
    /// `[C, H, W]`
    pub dims: [usize; 3],
    pub classes: usize,
    pub labels: Vec<u16>,
    /// `labels.len() * C * H * W` bytes, record after record.
    pub pixels: Vec<u8>,
}

impl Container {
    pub fn new(
        dims: [usize; 3],
        classes: usize,
        labels: Vec<u16>,
        pixels: Vec<u8>,
    ) -> Result<Self> {
        if dims.iter().any(|&d| d == 0 || d > u16::MAX as usize) {
            return Err(
                DataError::InvalidHeader(format!("image dims {dims:?} out of range")).into(),
            );
        }
        if classes > u32::MAX as usize || labels.len() > u32::MAX as usize {
            return Err(
                DataError::InvalidHeader("class or record count exceeds u32".into()).into(),
            );
        }
        let c = Container {
            dims,
            classes,
            labels,
            pixels,
        };
        if c.pixels.len() != c.labels.len() * c.sample_len() {
            return Err(DataError::InvalidHeader(format!(
                "{} pixel bytes for {} records of {} bytes",
                c.pixels.len(),
                c.labels.len(),
                c.sample_len()
            ))
            .into());
        }
        if let Some((index, &label)) = c
            .labels
            .iter()
            .enumerate()
            .find(|(_, &l)| l as usize >= classes)
        {
            return Err(DataError::LabelOverflow {
                index,
                label,
                classes: classes as u32,
            }
            .into());
        }
        Ok(c)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample_len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn pixels_of(&self, i: usize) -> &[u8] {
        let n = self.sample_len();
        &self.pixels[i * n..(i + 1) * n]
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.sample_len();
        let mut out = Vec::with_capacity(HEADER_LEN + self.len() * (2 + n));
        out.extend_from_slice(MAGIC);
        for d in self.dims {
            out.extend_from_slice(&(d as u16).to_le_bytes());
        }
        out.extend_from_slice(&(self.classes as u32).to_le_bytes());
        out.extend_from_slice(&(self.len() as u32).to_le_bytes());
        for (i, &label) in self.labels.iter().enumerate() {
            out.extend_from_slice(&label.to_le_bytes());
            out.extend_from_slice(self.pixels_of(i));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DataError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(DataError::BadMagic {
                found: bytes[..bytes.len().min(MAGIC.len())].to_vec(),
            });
        }
        if bytes.len() < HEADER_LEN {
            return Err(DataError::Truncated {
                expected: HEADER_LEN as u64,
                found: bytes.len() as u64,
            });
        }
        let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
        let u32_at =
            |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().expect("4 bytes")) as usize;
        let dims = [u16_at(5), u16_at(7), u16_at(9)];
        let classes = u32_at(11);
        let count = u32_at(15);
        if dims.contains(&0) {
            return Err(DataError::InvalidHeader(format!(
                "zero image extent {dims:?}"
            )));
        }
        let n: usize = dims.iter().product();
        let expected = HEADER_LEN as u64 + count as u64 * (2 + n as u64);
        let found = bytes.len() as u64;
        if found < expected {
            return Err(DataError::Truncated { expected, found });
        }
        if found > expected {
            return Err(DataError::InvalidHeader(format!(
                "{} trailing bytes after {count} records",
                found - expected
            )));
        }
        let mut labels = Vec::with_capacity(count);
        let mut pixels = Vec::with_capacity(count * n);
        for index in 0..count {
            let o = HEADER_LEN + index * (2 + n);
            let label = u16_at(o) as u16;
            if label as usize >= classes {
                return Err(DataError::LabelOverflow {
                    index,
                    label,
                    classes: classes as u32,
                });
            }
            labels.push(label);
            pixels.extend_from_slice(&bytes[o + 2..o + 2 + n]);
        }
        Ok(Container {
            dims,
            classes,
            labels,
            pixels,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Container::from_bytes(&bytes).map_err(Error::from)
    }

    /// Records whose label is in `classes`, in stored order.
    pub fn indices_of(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| classes.contains(&(self.labels[i] as usize)))
            .collect()
    }
}

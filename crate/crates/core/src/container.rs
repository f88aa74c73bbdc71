//! `WKRN` model container: a flat list of named f64 matrices.
//!
//! ```text
//! "WKRN"            4 bytes magic
//! version           u8 (currently 1)
//! repeated until end of file:
//!   name_len        u16 little-endian
//!   name            name_len bytes of UTF-8
//!   rows            u32 little-endian
//!   cols            u32 little-endian
//!   data            rows * cols f64 little-endian, row-major
//! ```

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"WKRN";
pub const VERSION: u8 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub values: Array2<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ModelContainer {
    sections: Vec<Section>,
}

impl ModelContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn sections(&self) -> &[Section] {
        &self.sections
    }

    pub fn len(&self) -> usize {
        self.sections.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sections.is_empty()
    }

    /// Adds a section; names must be unique and fit in a u16 length prefix.
    pub fn push(&mut self, name: impl Into<String>, values: Array2<f64>) -> Result<()> {
        let name = name.into();
        if name.len() > u16::MAX as usize {
            return Err(Error::Argument(format!("section name too long: {} bytes", name.len())));
        }
        if values.nrows() > u32::MAX as usize || values.ncols() > u32::MAX as usize {
            return Err(Error::Argument(format!("section `{name}` too large")));
        }
        if self.get(&name).is_some() {
            return Err(Error::Argument(format!("duplicate section `{name}`")));
        }
        self.sections.push(Section { name, values });
        Ok(())
    }

    pub fn push_vector(&mut self, name: impl Into<String>, values: &Array1<f64>) -> Result<()> {
        let column = values.clone().insert_axis(ndarray::Axis(1));
        self.push(name, column)
    }

    pub fn push_scalar(&mut self, name: impl Into<String>, value: f64) -> Result<()> {
        self.push(name, Array2::from_elem((1, 1), value))
    }

    pub fn get(&self, name: &str) -> Option<&Array2<f64>> {
        self.sections.iter().find(|s| s.name == name).map(|s| &s.values)
    }

    pub fn require(&self, name: &str) -> Result<&Array2<f64>> {
        self.get(name)
            .ok_or_else(|| Error::Format(format!("container has no `{name}` section")))
    }

    /// A section read as a flat vector (any shape, row-major).
    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let m = self.require(name)?;
        Ok(Array1::from_iter(m.iter().copied()))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let m = self.require(name)?;
        if m.len() != 1 {
            return Err(Error::Format(format!(
                "section `{name}` should hold one value, holds {}",
                m.len()
            )));
        }
        Ok(m[[0, 0]])
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self
            .sections
            .iter()
            .map(|s| 2 + s.name.len() + 8 + 8 * s.values.len())
            .sum();
        let mut out = Vec::with_capacity(5 + payload);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        for s in &self.sections {
            out.extend_from_slice(&(s.name.len() as u16).to_le_bytes());
            out.extend_from_slice(s.name.as_bytes());
            out.extend_from_slice(&(s.values.nrows() as u32).to_le_bytes());
            out.extend_from_slice(&(s.values.ncols() as u32).to_le_bytes());
            for v in s.values.iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4, "magic")?;
        if magic != MAGIC {
            return Err(Error::corrupt(0, format!("bad magic {magic:02x?}")));
        }
        let version = r.take(1, "version")?[0];
        if version != VERSION {
            return Err(Error::corrupt(4, format!("unsupported version {version}")));
        }
        let mut sections = Vec::new();
        let mut seen = HashSet::new();
        while r.pos < bytes.len() {
            let start = r.pos;
            let name_len = u16::from_le_bytes(r.array("name length")?) as usize;
            let name = std::str::from_utf8(r.take(name_len, "section name")?)
                .map_err(|_| Error::corrupt(start + 2, "section name is not UTF-8"))?
                .to_owned();
            if !seen.insert(name.clone()) {
                return Err(Error::corrupt(start, format!("duplicate section `{name}`")));
            }
            let rows = u32::from_le_bytes(r.array("row count")?) as usize;
            let cols = u32::from_le_bytes(r.array("column count")?) as usize;
            let count = rows
                .checked_mul(cols)
                .and_then(|c| c.checked_mul(8))
                .ok_or_else(|| Error::corrupt(r.pos, "section size overflows"))?;
            let data = r.take(count, "section data")?;
            let values = data
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect::<Vec<_>>();
            let values = Array2::from_shape_vec((rows, cols), values).expect("length checked against header");
            sections.push(Section { name, values });
        }
        Ok(Self { sections })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| {
                Error::corrupt(
                    self.pos,
                    format!("truncated {what}: need {n} bytes, {} left", self.bytes.len() - self.pos),
                )
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length N"))
    }
}

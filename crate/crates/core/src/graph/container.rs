//! The GRPH binary container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "GRPH" | version: u32 | header_len: u64 | header: UTF-8 JSON | pad to 8
//! section payloads in header order, each padded with zeros to 8 bytes
//! ```
//!
//! The header is `{"sections":[{"name":..,"dtype":"u32|i64|f32|u8","shape":[..]},..]}`.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Graph, NodeData, Split};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"GRPH";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DType {
    U32,
    I64,
    F32,
    U8,
}

impl DType {
    fn width(self) -> usize {
        match self {
            DType::U32 | DType::F32 => 4,
            DType::I64 => 8,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SectionData {
    U32(Vec<u32>),
    I64(Vec<i64>),
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl SectionData {
    pub fn dtype(&self) -> DType {
        match self {
            SectionData::U32(_) => DType::U32,
            SectionData::I64(_) => DType::I64,
            SectionData::F32(_) => DType::F32,
            SectionData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            SectionData::U32(v) => v.len(),
            SectionData::I64(v) => v.len(),
            SectionData::F32(v) => v.len(),
            SectionData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn write_le(&self, out: &mut Vec<u8>) {
        match self {
            SectionData::U32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SectionData::I64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SectionData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            SectionData::U8(v) => out.extend_from_slice(v),
        }
    }

    fn read_le(dtype: DType, bytes: &[u8]) -> Self {
        match dtype {
            DType::U32 => SectionData::U32(
                bytes.chunks_exact(4).map(|b| u32::from_le_bytes(b.try_into().unwrap())).collect(),
            ),
            DType::I64 => SectionData::I64(
                bytes.chunks_exact(8).map(|b| i64::from_le_bytes(b.try_into().unwrap())).collect(),
            ),
            DType::F32 => SectionData::F32(
                bytes.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect(),
            ),
            DType::U8 => SectionData::U8(bytes.to_vec()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: SectionData,
}

impl Section {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: SectionData) -> Self {
        Section { name: name.into(), shape, data }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderEntry {
    name: String,
    dtype: DType,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    sections: Vec<HeaderEntry>,
}

/// Named typed sections in GRPH layout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub sections: Vec<Section>,
}

fn pad8(out: &mut Vec<u8>) {
    while !out.len().is_multiple_of(8) {
        out.push(0);
    }
}

impl Container {
    pub fn push(&mut self, section: Section) {
        self.sections.push(section);
    }

    pub fn get(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            sections: self
                .sections
                .iter()
                .map(|s| HeaderEntry {
                    name: s.name.clone(),
                    dtype: s.data.dtype(),
                    shape: s.shape.clone(),
                })
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        pad8(&mut out);
        for s in &self.sections {
            s.data.write_le(&mut out);
            pad8(&mut out);
        }
        out
    }

    /// Parses a container; `origin` only labels errors.
    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let fail = |reason: String| Error::Container {
            path: origin.to_path_buf(),
            reason,
        };
        if bytes.len() < 16 {
            return Err(fail("truncated file header".into()));
        }
        if &bytes[0..4] != MAGIC {
            return Err(fail("bad magic bytes".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(fail(format!("unsupported version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let header_end = 16usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| fail("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[16..header_end])
            .map_err(|e| fail(format!("header parse error: {e}")))?;
        let mut pos = header_end.next_multiple_of(8);
        let mut sections = Vec::with_capacity(header.sections.len());
        for entry in header.sections {
            let count: usize = entry.shape.iter().product();
            let len = count * entry.dtype.width();
            let end = pos
                .checked_add(len)
                .filter(|&e| e <= bytes.len())
                .ok_or_else(|| fail(format!("truncated section {}", entry.name)))?;
            let data = SectionData::read_le(entry.dtype, &bytes[pos..end]);
            sections.push(Section::new(entry.name, entry.shape, data));
            pos = end.next_multiple_of(8);
        }
        Ok(Container { sections })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }

    pub(crate) fn require(&self, name: &str, origin: &Path) -> Result<&Section> {
        self.get(name).ok_or_else(|| Error::Container {
            path: origin.to_path_buf(),
            reason: format!("missing section {name}"),
        })
    }
}

fn wrong_type(origin: &Path, name: &str, want: DType) -> Error {
    Error::Container {
        path: origin.to_path_buf(),
        reason: format!("section {name} must have dtype {want:?}"),
    }
}

impl Graph {
    pub fn to_container(&self) -> Container {
        let n = self.num_nodes();
        let d = self.node_data();
        let mut c = Container::default();
        c.push(Section::new(
            "row_offsets",
            vec![n + 1],
            SectionData::U32(self.row_offsets().iter().map(|&x| x as u32).collect()),
        ));
        c.push(Section::new(
            "col_indices",
            vec![self.col_indices().len()],
            SectionData::U32(self.col_indices().to_vec()),
        ));
        c.push(Section::new(
            "features",
            vec![n, d.num_features],
            SectionData::F32(d.features.clone()),
        ));
        c.push(Section::new(
            "labels",
            vec![n],
            SectionData::I64(d.labels.iter().map(|&y| y as i64).collect()),
        ));
        for split in Split::ALL {
            c.push(Section::new(
                split.mask_name(),
                vec![n],
                SectionData::U8(d.splits.iter().map(|&s| u8::from(s == split)).collect()),
            ));
        }
        c
    }

    pub fn from_container(c: &Container, origin: &Path) -> Result<Graph> {
        let fail = |reason: String| Error::Container {
            path: origin.to_path_buf(),
            reason,
        };
        let row_offsets: Vec<usize> = match &c.require("row_offsets", origin)?.data {
            SectionData::U32(v) => v.iter().map(|&x| x as usize).collect(),
            _ => return Err(wrong_type(origin, "row_offsets", DType::U32)),
        };
        if row_offsets.is_empty() {
            return Err(fail("row_offsets is empty".into()));
        }
        let n = row_offsets.len() - 1;
        let col_indices = match &c.require("col_indices", origin)?.data {
            SectionData::U32(v) => v.clone(),
            _ => return Err(wrong_type(origin, "col_indices", DType::U32)),
        };
        let feat = c.require("features", origin)?;
        let features = match &feat.data {
            SectionData::F32(v) => v.clone(),
            _ => return Err(wrong_type(origin, "features", DType::F32)),
        };
        if feat.shape.len() != 2 || feat.shape[0] != n {
            return Err(fail(format!("features shape {:?} does not match n = {n}", feat.shape)));
        }
        let labels: Vec<usize> = match &c.require("labels", origin)?.data {
            SectionData::I64(v) => v
                .iter()
                .map(|&y| usize::try_from(y).map_err(|_| fail(format!("negative label {y}"))))
                .collect::<Result<_>>()?,
            _ => return Err(wrong_type(origin, "labels", DType::I64)),
        };
        let mut masks = Vec::new();
        for split in Split::ALL {
            match &c.require(split.mask_name(), origin)?.data {
                SectionData::U8(v) if v.len() == n => masks.push(v.clone()),
                SectionData::U8(_) => return Err(fail(format!("{} has wrong length", split.mask_name()))),
                _ => return Err(wrong_type(origin, split.mask_name(), DType::U8)),
            }
        }
        let mut splits = Vec::with_capacity(n);
        for u in 0..n {
            let set: Vec<Split> = Split::ALL
                .iter()
                .zip(&masks)
                .filter(|(_, m)| m[u] != 0)
                .map(|(&s, _)| s)
                .collect();
            match set.as_slice() {
                [s] => splits.push(*s),
                _ => return Err(fail(format!("node {u} belongs to {} splits", set.len()))),
            }
        }
        let num_classes = labels.iter().max().map_or(0, |&m| m + 1);
        let data = NodeData {
            features,
            num_features: feat.shape[1],
            labels,
            num_classes,
            splits,
        };
        let g = Graph::from_parts_unchecked(row_offsets, col_indices, Arc::new(data));
        g.validate().map_err(|e| fail(e.to_string()))?;
        Ok(g)
    }

    pub fn read_grph(path: impl AsRef<Path>) -> Result<Graph> {
        let path = path.as_ref();
        Graph::from_container(&Container::read(path)?, path)
    }

    pub fn write_grph(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container().write(path)
    }
}

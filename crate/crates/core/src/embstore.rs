//! Matrix, label and concept-list storage.
//!
//! Every file starts with a 4-byte ASCII magic followed by two little-endian
//! `u32` dimensions:
//!
//! | magic  | dims        | payload                                  |
//! |--------|-------------|------------------------------------------|
//! | `EMB1` | `n`, `d`    | `n * d` binary32 LE, row-major           |
//! | `PRB1` | `n`, `C`    | `n * C` binary32 LE, rows sum to 1       |
//! | `LBL1` | `n`, `C`    | `n` u32 LE labels, each `< C`            |
//!
//! Concept names are LF-separated UTF-8 text, one name per line.
//!
//! Loading validates everything and never repairs data.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const EMBEDDING_MAGIC: [u8; 4] = *b"EMB1";
pub const PROBABILITY_MAGIC: [u8; 4] = *b"PRB1";
pub const LABEL_MAGIC: [u8; 4] = *b"LBL1";

pub const HEADER_LEN: usize = 12;

/// Row-sum tolerance for probability rows.
pub const PROBABILITY_ROW_TOLERANCE: f64 = 1e-5;

/// Dense row-major matrix of finite `f32` feature vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::InvalidData("embedding dimension must be at least 1".into()));
        }
        if data.len() != rows * cols {
            return Err(Error::Shape(format!(
                "{rows}x{cols} matrix needs {} values, got {}",
                rows * cols,
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidData(format!(
                "non-finite value at row {}, column {}",
                pos / cols,
                pos % cols
            )));
        }
        Ok(Self { rows, cols, data })
    }

    /// An `0 x cols` matrix.
    pub fn empty(cols: usize) -> Result<Self> {
        Self::new(0, cols, Vec::new())
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).ok_or_else(|| {
            Error::InvalidData("cannot infer dimension from zero rows; use EmbeddingMatrix::empty".into())
        })?;
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::Shape(format!("row {i} has {} values, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Builds a matrix from `f64` values, rounding each to the nearest `f32`.
    pub fn from_f64(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::new(rows, cols, data.iter().map(|&v| v as f32).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.cols)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    /// Copies the given rows, in the given order, into a new matrix.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(indices.len() * self.cols);
        for &i in indices {
            if i >= self.rows {
                return Err(Error::Shape(format!("row {i} out of range for {} rows", self.rows)));
            }
            data.extend_from_slice(self.row(i));
        }
        Ok(Self {
            rows: indices.len(),
            cols: self.cols,
            data,
        })
    }
}

/// Per-input class probability vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    rows: usize,
    classes: usize,
    data: Vec<f32>,
}

impl ProbabilityMatrix {
    pub fn new(rows: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::InvalidData("probability matrix needs at least one class".into()));
        }
        if data.len() != rows * classes {
            return Err(Error::Shape(format!(
                "{rows}x{classes} matrix needs {} values, got {}",
                rows * classes,
                data.len()
            )));
        }
        for (i, row) in data.chunks_exact(classes).enumerate() {
            check_probability_row(row).map_err(|msg| Error::InvalidData(format!("row {i}: {msg}")))?;
        }
        Ok(Self { rows, classes, data })
    }

    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let classes = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::InvalidData("cannot infer class count from zero rows".into()))?;
        let mut data = Vec::with_capacity(rows.len() * classes);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != classes {
                return Err(Error::Shape(format!("row {i} has {} values, expected {classes}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), classes, data)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.classes..(i + 1) * self.classes]
    }

    pub fn iter_rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.classes)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    /// Predicted class per row (highest probability, lowest index on ties).
    pub fn argmax_labels(&self) -> LabelVector {
        let labels = self
            .iter_rows()
            .map(|row| {
                let mut best = 0;
                for (c, &p) in row.iter().enumerate() {
                    if p > row[best] {
                        best = c;
                    }
                }
                best as u32
            })
            .collect();
        LabelVector {
            labels,
            classes: self.classes as u32,
        }
    }
}

fn check_probability_row(row: &[f32]) -> std::result::Result<(), String> {
    let mut sum = 0.0f64;
    for (c, &p) in row.iter().enumerate() {
        if !p.is_finite() || !(0.0..=1.0).contains(&p) {
            return Err(format!("entry {c} = {p} is outside [0, 1]"));
        }
        sum += p as f64;
    }
    if (sum - 1.0).abs() > PROBABILITY_ROW_TOLERANCE {
        return Err(format!("row sums to {sum}, expected 1 within {PROBABILITY_ROW_TOLERANCE}"));
    }
    Ok(())
}

/// Class identifiers in `0..classes`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelVector {
    labels: Vec<u32>,
    classes: u32,
}

impl LabelVector {
    pub fn new(labels: Vec<u32>, classes: u32) -> Result<Self> {
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
            return Err(Error::InvalidData(format!(
                "label {l} at position {i} is not below class count {classes}"
            )));
        }
        Ok(Self { labels, classes })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.classes as usize
    }

    pub fn get(&self, i: usize) -> usize {
        self.labels[i] as usize
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }
}

/// Named concepts paired with one embedding row each.
#[derive(Debug, Clone, PartialEq)]
pub struct ConceptSpace {
    names: Vec<String>,
    embeddings: EmbeddingMatrix,
}

impl ConceptSpace {
    pub fn new(names: Vec<String>, embeddings: EmbeddingMatrix) -> Result<Self> {
        if names.len() != embeddings.rows() {
            return Err(Error::Alignment {
                names: names.len(),
                rows: embeddings.rows(),
            });
        }
        Ok(Self { names, embeddings })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn embeddings(&self) -> &EmbeddingMatrix {
        &self.embeddings
    }

    /// Keeps only the listed concepts, in the listed order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        let names = indices
            .iter()
            .map(|&i| {
                self.names
                    .get(i)
                    .cloned()
                    .ok_or_else(|| Error::Shape(format!("concept {i} out of range for {}", self.names.len())))
            })
            .collect::<Result<Vec<_>>>()?;
        let embeddings = self.embeddings.select_rows(indices)?;
        Ok(Self { names, embeddings })
    }
}

/// A matrix type with an on-disk magic tag.
pub trait MatrixFile: Sized {
    const MAGIC: [u8; 4];

    fn dims(&self) -> (usize, usize);
    fn values(&self) -> &[f32];

    /// Builds the matrix from a decoded, finite payload. Errors carry the
    /// byte offset of the offending value or row.
    fn from_payload(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self>;
}

impl MatrixFile for EmbeddingMatrix {
    const MAGIC: [u8; 4] = EMBEDDING_MAGIC;

    fn dims(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    fn values(&self) -> &[f32] {
        &self.data
    }

    fn from_payload(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if cols == 0 {
            return Err(Error::format(8, "embedding dimension d must be at least 1"));
        }
        Ok(Self { rows, cols, data })
    }
}

impl MatrixFile for ProbabilityMatrix {
    const MAGIC: [u8; 4] = PROBABILITY_MAGIC;

    fn dims(&self) -> (usize, usize) {
        (self.rows, self.classes)
    }

    fn values(&self) -> &[f32] {
        &self.data
    }

    fn from_payload(rows: usize, classes: usize, data: Vec<f32>) -> Result<Self> {
        if classes == 0 {
            return Err(Error::format(8, "class count C must be at least 1"));
        }
        for (i, row) in data.chunks_exact(classes).enumerate() {
            if let Err(msg) = check_probability_row(row) {
                let offset = (HEADER_LEN + i * classes * 4) as u64;
                return Err(Error::format(offset, format!("probability row {i}: {msg}")));
            }
        }
        Ok(Self { rows, classes, data })
    }
}

fn header(magic: [u8; 4], n: usize, d: usize) -> Result<Vec<u8>> {
    let n = u32::try_from(n).map_err(|_| Error::InvalidData(format!("row count {n} exceeds u32")))?;
    let d = u32::try_from(d).map_err(|_| Error::InvalidData(format!("column count {d} exceeds u32")))?;
    let mut out = Vec::with_capacity(HEADER_LEN);
    out.extend_from_slice(&magic);
    out.extend_from_slice(&n.to_le_bytes());
    out.extend_from_slice(&d.to_le_bytes());
    Ok(out)
}

fn read_header(bytes: &[u8], magic: [u8; 4]) -> Result<(usize, usize)> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            bytes.len() as u64,
            format!("file is {} bytes, shorter than the {HEADER_LEN}-byte header", bytes.len()),
        ));
    }
    if bytes[0..4] != magic {
        return Err(Error::format(
            0,
            format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(&magic),
                String::from_utf8_lossy(&bytes[0..4])
            ),
        ));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let d = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    Ok((n, d))
}

fn expect_payload(bytes: &[u8], payload_len: usize) -> Result<()> {
    let have = bytes.len() - HEADER_LEN;
    if have < payload_len {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {payload_len} bytes, found {have}"),
        ));
    }
    if have > payload_len {
        return Err(Error::format(
            (HEADER_LEN + payload_len) as u64,
            format!("{} trailing bytes after payload", have - payload_len),
        ));
    }
    Ok(())
}

/// Serializes a matrix to its on-disk byte layout.
pub fn encode_matrix<M: MatrixFile>(m: &M) -> Result<Vec<u8>> {
    let (n, d) = m.dims();
    let values = m.values();
    if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::InvalidData(format!("non-finite value at flat index {pos}")));
    }
    let mut out = header(M::MAGIC, n, d)?;
    out.reserve(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_matrix<M: MatrixFile>(bytes: &[u8]) -> Result<M> {
    let (n, d) = read_header(bytes, M::MAGIC)?;
    let count = n
        .checked_mul(d)
        .ok_or_else(|| Error::format(4, format!("dimensions {n}x{d} overflow")))?;
    expect_payload(bytes, count * 4)?;
    let mut data = Vec::with_capacity(count);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(
                (HEADER_LEN + i * 4) as u64,
                format!("non-finite value {v} at row {}, column {}", i / d.max(1), i % d.max(1)),
            ));
        }
        data.push(v);
    }
    M::from_payload(n, d, data)
}

pub fn save_matrix<M: MatrixFile>(m: &M, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_matrix(m)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn load_matrix<M: MatrixFile>(path: impl AsRef<Path>) -> Result<M> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_matrix(&bytes).map_err(|e| in_file(e, path))
}

pub fn encode_labels(labels: &LabelVector) -> Result<Vec<u8>> {
    let mut out = header(LABEL_MAGIC, labels.len(), labels.classes())?;
    for l in &labels.labels {
        out.extend_from_slice(&l.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_labels(bytes: &[u8]) -> Result<LabelVector> {
    let (n, classes) = read_header(bytes, LABEL_MAGIC)?;
    expect_payload(bytes, n * 4)?;
    let mut labels = Vec::with_capacity(n);
    for (i, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let l = u32::from_le_bytes(chunk.try_into().unwrap());
        if l as usize >= classes {
            return Err(Error::format(
                (HEADER_LEN + i * 4) as u64,
                format!("label {l} at position {i} is not below class count {classes}"),
            ));
        }
        labels.push(l);
    }
    Ok(LabelVector {
        labels,
        classes: classes as u32,
    })
}

pub fn save_labels(labels: &LabelVector, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_labels(labels)?).map_err(|e| Error::io(path, e))
}

pub fn load_labels(path: impl AsRef<Path>) -> Result<LabelVector> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes).map_err(|e| in_file(e, path))
}

pub fn save_concept_names(names: &[String], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut text = String::new();
    for name in names {
        if name.contains('\n') {
            return Err(Error::InvalidData(format!("concept name {name:?} contains a line feed")));
        }
        text.push_str(name);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_concept_names(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let text = String::from_utf8(bytes).map_err(|e| {
        in_file(
            Error::format(e.utf8_error().valid_up_to() as u64, "concept names are not valid UTF-8"),
            path,
        )
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

/// Loads a names file and its embedding matrix; line `i` pairs with row `i`.
/// Duplicate names are kept.
pub fn load_concepts(names_path: impl AsRef<Path>, emb_path: impl AsRef<Path>) -> Result<ConceptSpace> {
    let names = load_concept_names(names_path)?;
    let embeddings: EmbeddingMatrix = load_matrix(emb_path)?;
    ConceptSpace::new(names, embeddings)
}

fn in_file(err: Error, path: &Path) -> Error {
    match err {
        Error::Format { offset, message } => Error::Format {
            offset,
            message: format!("{}: {message}", path.display()),
        },
        other => other,
    }
}

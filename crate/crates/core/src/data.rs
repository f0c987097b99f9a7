//! Sparse binary-classification datasets: libsvm I/O, row-compressed storage
//! and partitioning of examples over nodes.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Owned sparse vector with strictly increasing 0-based indices.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct SparseVector {
    indices: Vec<u32>,
    values: Vec<f64>,
}

impl SparseVector {
    pub fn new(indices: Vec<u32>, values: Vec<f64>) -> Result<Self> {
        if indices.len() != values.len() {
            return Err(Error::Format(format!(
                "{} indices but {} values",
                indices.len(),
                values.len()
            )));
        }
        if indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Format("indices must be strictly increasing".into()));
        }
        Ok(Self { indices, values })
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn as_row(&self) -> Row<'_> {
        Row {
            indices: &self.indices,
            values: &self.values,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: SparseVector,
    /// +1 or -1.
    pub label: i8,
}

/// Borrowed view of one CSR row.
#[derive(Clone, Copy, Debug)]
pub struct Row<'a> {
    pub indices: &'a [u32],
    pub values: &'a [f64],
}

impl Row<'_> {
    #[inline]
    pub fn dot(&self, w: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(self.values)
            .map(|(&j, &v)| w[j as usize] * v)
            .sum()
    }

    /// `w += scale * x`
    #[inline]
    pub fn axpy(&self, scale: f64, w: &mut [f64]) {
        for (&j, &v) in self.indices.iter().zip(self.values) {
            w[j as usize] += scale * v;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }
}

/// Examples in row-compressed form.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    indptr: Vec<usize>,
    indices: Vec<u32>,
    values: Vec<f64>,
    labels: Vec<i8>,
    dim: usize,
}

impl Dataset {
    /// Builds a dataset; `dim` defaults to one past the largest index seen.
    pub fn from_examples(examples: Vec<Example>, dim: Option<usize>) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut indptr = Vec::with_capacity(examples.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::with_capacity(examples.len());
        for ex in examples {
            if ex.label != 1 && ex.label != -1 {
                return Err(Error::Format(format!("label {} is not +1/-1", ex.label)));
            }
            indices.extend_from_slice(&ex.features.indices);
            values.extend_from_slice(&ex.features.values);
            indptr.push(indices.len());
            labels.push(ex.label);
        }
        let inferred = indices.iter().map(|&j| j as usize + 1).max().unwrap_or(0);
        let ds = Self {
            indptr,
            indices,
            values,
            labels,
            dim: inferred,
        };
        match dim {
            Some(d) => ds.with_dim(d),
            None => Ok(ds),
        }
    }

    /// Overrides the feature dimension, e.g. to align train and test files.
    pub fn with_dim(mut self, dim: usize) -> Result<Self> {
        let needed = self
            .indices
            .iter()
            .map(|&j| j as usize + 1)
            .max()
            .unwrap_or(0);
        if dim < needed {
            return Err(Error::DimensionMismatch {
                expected: needed,
                found: dim,
            });
        }
        self.dim = dim;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn row(&self, i: usize) -> Row<'_> {
        let (a, b) = (self.indptr[i], self.indptr[i + 1]);
        Row {
            indices: &self.indices[a..b],
            values: &self.values[a..b],
        }
    }

    #[inline]
    pub fn label(&self, i: usize) -> f64 {
        f64::from(self.labels[i])
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&y| y > 0).count()
    }

    pub fn example(&self, i: usize) -> Example {
        let row = self.row(i);
        Example {
            features: SparseVector {
                indices: row.indices.to_vec(),
                values: row.values.to_vec(),
            },
            label: self.labels[i],
        }
    }

    /// Copies the given rows, in the given order, into a new dataset with the
    /// same dimension.
    pub fn subset(&self, rows: &[usize]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut indptr = Vec::with_capacity(rows.len() + 1);
        indptr.push(0);
        let mut indices = Vec::new();
        let mut values = Vec::new();
        let mut labels = Vec::with_capacity(rows.len());
        for &i in rows {
            if i >= self.len() {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.len(),
                });
            }
            let r = self.row(i);
            indices.extend_from_slice(r.indices);
            values.extend_from_slice(r.values);
            indptr.push(indices.len());
            labels.push(self.labels[i]);
        }
        Ok(Self {
            indptr,
            indices,
            values,
            labels,
            dim: self.dim,
        })
    }

    /// Margins `w . x_i` for every example.
    pub fn margins(&self, w: &[f64]) -> Vec<f64> {
        (0..self.len()).map(|i| self.row(i).dot(w)).collect()
    }

    /// FNV-1a hash of the full contents; used to tie cached artifacts to a
    /// dataset.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(self.dim as u64);
        h.write_u64(self.len() as u64);
        for &p in &self.indptr {
            h.write_u64(p as u64);
        }
        for &j in &self.indices {
            h.write_u64(u64::from(j));
        }
        for &v in &self.values {
            h.write_u64(v.to_bits());
        }
        for &y in &self.labels {
            h.write_u64(y as u64);
        }
        h.finish()
    }
}

pub(crate) struct Fnv(u64);

impl Fnv {
    pub(crate) fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    pub(crate) fn write_u64(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= u64::from(b);
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub(crate) fn finish(&self) -> u64 {
        self.0
    }
}

fn parse_label(tok: &str, line: usize) -> Result<i8> {
    let v: f64 = tok.parse().map_err(|_| Error::Parse {
        line,
        msg: format!("bad label {tok:?}"),
    })?;
    if v == 1.0 {
        Ok(1)
    } else if v == -1.0 || v == 0.0 {
        Ok(-1)
    } else {
        Err(Error::Parse {
            line,
            msg: format!("label {tok:?} is not one of +1, -1, 0, 1"),
        })
    }
}

fn parse_line(text: &str, line: usize) -> Result<Option<Example>> {
    let text = match text.find('#') {
        Some(k) => &text[..k],
        None => text,
    };
    let mut tokens = text.split_whitespace();
    let Some(label) = tokens.next() else {
        return Ok(None);
    };
    let label = parse_label(label, line)?;
    let mut indices = Vec::new();
    let mut values = Vec::new();
    for tok in tokens {
        let (idx, val) = tok.split_once(':').ok_or_else(|| Error::Parse {
            line,
            msg: format!("expected idx:val, got {tok:?}"),
        })?;
        let idx: u64 = idx.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad feature index {idx:?}"),
        })?;
        if idx == 0 || idx > u64::from(u32::MAX) + 1 {
            return Err(Error::Parse {
                line,
                msg: format!("feature index {idx} out of range (indices are 1-based)"),
            });
        }
        let val: f64 = val.parse().map_err(|_| Error::Parse {
            line,
            msg: format!("bad feature value {val:?}"),
        })?;
        if !val.is_finite() {
            return Err(Error::Parse {
                line,
                msg: format!("non-finite feature value {val}"),
            });
        }
        let j = (idx - 1) as u32;
        if let Some(&prev) = indices.last() {
            if j <= prev {
                return Err(Error::Parse {
                    line,
                    msg: format!("feature indices not strictly increasing at {idx}"),
                });
            }
        }
        indices.push(j);
        values.push(val);
    }
    Ok(Some(Example {
        features: SparseVector { indices, values },
        label,
    }))
}

/// Parses libsvm text (`<label> <idx>:<val> ...`, 1-based indices).
/// Labels 0/1 are mapped to -1/+1.
pub fn parse_libsvm<R: BufRead>(reader: R) -> Result<Dataset> {
    let mut examples = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        if let Some(ex) = parse_line(&line, k + 1)? {
            examples.push(ex);
        }
    }
    Dataset::from_examples(examples, None)
}

/// Reads a libsvm file, transparently decompressing gzip input.
pub fn read_libsvm(path: &Path) -> Result<Dataset> {
    let mut reader = BufReader::new(File::open(path)?);
    let gz = reader.fill_buf()?.starts_with(&[0x1f, 0x8b]);
    if gz {
        parse_libsvm(BufReader::new(MultiGzDecoder::new(reader)))
    } else {
        parse_libsvm(reader)
    }
}

/// Writes libsvm text that `parse_libsvm` reads back exactly.
pub fn write_libsvm<W: Write>(ds: &Dataset, mut out: W) -> Result<()> {
    for i in 0..ds.len() {
        let row = ds.row(i);
        out.write_all(if ds.labels[i] > 0 { b"+1" } else { b"-1" })?;
        for (&j, &v) in row.indices.iter().zip(row.values) {
            write!(out, " {}:{}", j as u64 + 1, v)?;
        }
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn parse_libsvm_str(text: &str) -> Result<Dataset> {
    parse_libsvm(text.as_bytes())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionStrategy {
    /// Example `i` goes to node `i mod P`.
    RoundRobin,
    /// Consecutive blocks; the first `n mod P` nodes get one extra example.
    Contiguous,
    /// Round-robin over a seeded permutation.
    Shuffled(u64),
}

/// Assignment of examples to nodes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PartitionPlan {
    strategy: PartitionStrategy,
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
}

impl PartitionPlan {
    pub fn nodes(&self) -> usize {
        self.members.len()
    }

    pub fn strategy(&self) -> PartitionStrategy {
        self.strategy
    }

    /// Node id of every example.
    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Example indices held by node `p`, ascending.
    pub fn members(&self, p: usize) -> Result<&[usize]> {
        self.members
            .get(p)
            .map(Vec::as_slice)
            .ok_or(Error::InvalidNode {
                node: p,
                nodes: self.nodes(),
            })
    }
}

pub fn partition(ds: &Dataset, nodes: usize, strategy: PartitionStrategy) -> Result<PartitionPlan> {
    let n = ds.len();
    if nodes == 0 {
        return Err(Error::InvalidPartition(
            "node count must be at least 1".into(),
        ));
    }
    if nodes > n {
        return Err(Error::InvalidPartition(format!(
            "{nodes} nodes but only {n} examples"
        )));
    }
    let mut assignment = vec![0; n];
    match strategy {
        PartitionStrategy::RoundRobin => {
            for (i, a) in assignment.iter_mut().enumerate() {
                *a = i % nodes;
            }
        }
        PartitionStrategy::Contiguous => {
            let (base, extra) = (n / nodes, n % nodes);
            let mut i = 0;
            for p in 0..nodes {
                let size = base + usize::from(p < extra);
                for a in &mut assignment[i..i + size] {
                    *a = p;
                }
                i += size;
            }
        }
        PartitionStrategy::Shuffled(seed) => {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
            for (k, &i) in order.iter().enumerate() {
                assignment[i] = k % nodes;
            }
        }
    }
    let mut members = vec![Vec::new(); nodes];
    for (i, &p) in assignment.iter().enumerate() {
        members[p].push(i);
    }
    Ok(PartitionPlan {
        strategy,
        assignment,
        members,
    })
}

use std::io::Read;

use crate::{Error, RealTensor, Result};

const WORD_BITS: usize = 64;

fn words_for(dim: usize) -> usize {
    dim.div_ceil(WORD_BITS)
}

fn tail_mask(dim: usize) -> u64 {
    match dim % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

/// Packed ±1 vector: bit set ⇔ element is +1.
///
/// Bits at positions `>= dim` are always zero, which lets the popcount
/// kernels run over whole words without masking.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BitVector {
    dim: usize,
    words: Vec<u64>,
}

impl BitVector {
    /// All elements −1.
    pub fn minus_ones(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("bit vector dimension must be positive"));
        }
        Ok(Self {
            dim,
            words: vec![0; words_for(dim)],
        })
    }

    pub fn ones(dim: usize) -> Result<Self> {
        let mut v = Self::minus_ones(dim)?;
        v.words.fill(u64::MAX);
        v.clear_padding();
        Ok(v)
    }

    /// Sign binarization of a slice: +1 iff the entry is strictly positive.
    pub fn from_signs(values: &[f64]) -> Result<Self> {
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                index,
                value: values[index],
            });
        }
        let mut v = Self::minus_ones(values.len())?;
        for (word, chunk) in v.words.iter_mut().zip(values.chunks(WORD_BITS)) {
            *word = chunk
                .iter()
                .enumerate()
                .fold(0u64, |acc, (i, &x)| acc | (u64::from(x > 0.0) << i));
        }
        Ok(v)
    }

    pub fn from_bools(bits: &[bool]) -> Result<Self> {
        let mut v = Self::minus_ones(bits.len())?;
        for (i, &b) in bits.iter().enumerate() {
            v.set(i, b);
        }
        Ok(v)
    }

    /// Build from raw words; padding bits must already be zero.
    pub fn from_words(dim: usize, words: Vec<u64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::BitDecode("dimension must be positive".into()));
        }
        if words.len() != words_for(dim) {
            return Err(Error::BitDecode(format!(
                "dimension {dim} needs {} words, got {}",
                words_for(dim),
                words.len()
            )));
        }
        if words.last().is_some_and(|&w| w & !tail_mask(dim) != 0) {
            return Err(Error::BitDecode("padding bits are not zero".into()));
        }
        Ok(Self { dim, words })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> bool {
        assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
        (self.words[i / WORD_BITS] >> (i % WORD_BITS)) & 1 == 1
    }

    /// The ±1 value at `i`.
    pub fn sign(&self, i: usize) -> f64 {
        if self.get(i) {
            1.0
        } else {
            -1.0
        }
    }

    pub fn set(&mut self, i: usize, positive: bool) {
        assert!(i < self.dim, "index {i} out of range for dim {}", self.dim);
        let mask = 1u64 << (i % WORD_BITS);
        if positive {
            self.words[i / WORD_BITS] |= mask;
        } else {
            self.words[i / WORD_BITS] &= !mask;
        }
    }

    /// Elementwise negation.
    pub fn negated(&self) -> Self {
        let mut out = Self {
            dim: self.dim,
            words: self.words.iter().map(|w| !w).collect(),
        };
        out.clear_padding();
        out
    }

    pub fn count_positive(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    fn clear_padding(&mut self) {
        let mask = tail_mask(self.dim);
        if let Some(last) = self.words.last_mut() {
            *last &= mask;
        }
    }

    /// Expand to ±1 reals.
    pub fn unpack(&self) -> Vec<f64> {
        (0..self.dim).map(|i| self.sign(i)).collect()
    }

    pub fn to_tensor(&self) -> RealTensor {
        RealTensor::vector(self.unpack()).expect("±1 entries are finite")
    }

    /// `Σ aᵢbᵢ = d − 2·popcount(a ⊕ b)`.
    pub fn dot(&self, other: &Self) -> Result<i64> {
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch {
                left: self.dim,
                right: other.dim,
            });
        }
        Ok(dot_words(&self.words, &other.words, self.dim))
    }

    /// `Σ wᵢ·sᵢ` against real weights, accumulated in index order.
    pub fn dot_real(&self, w: &[f64]) -> Result<f64> {
        if self.dim != w.len() {
            return Err(Error::DimensionMismatch {
                left: w.len(),
                right: self.dim,
            });
        }
        Ok(dot_real_words(&self.words, w))
    }

    /// Wire format: little-endian u64 dimension, then the words in little-endian.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 * (1 + self.words.len()));
        self.write_to(&mut out);
        out
    }

    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.dim as u64).to_le_bytes());
        for w in &self.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
    }

    /// Decode a complete buffer; trailing bytes are an error.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cursor = bytes;
        let v = Self::read_from(&mut cursor)?;
        if !cursor.is_empty() {
            return Err(Error::BitDecode(format!(
                "{} trailing bytes after bit vector",
                cursor.len()
            )));
        }
        Ok(v)
    }

    pub fn read_from(reader: &mut impl Read) -> Result<Self> {
        let mut buf = [0u8; 8];
        reader
            .read_exact(&mut buf)
            .map_err(|_| Error::BitDecode("truncated dimension header".into()))?;
        let dim = u64::from_le_bytes(buf);
        let dim = usize::try_from(dim)
            .ok()
            .filter(|&d| d > 0 && d <= MAX_WIRE_DIM)
            .ok_or_else(|| Error::BitDecode(format!("unsupported dimension {dim}")))?;
        let n = words_for(dim);
        let mut words = Vec::with_capacity(n.min(1 << 16));
        for _ in 0..n {
            reader
                .read_exact(&mut buf)
                .map_err(|_| Error::BitDecode("truncated word payload".into()))?;
            words.push(u64::from_le_bytes(buf));
        }
        Self::from_words(dim, words)
    }
}

/// Largest dimension accepted from the wire (2³² elements, 512 MiB of words).
pub const MAX_WIRE_DIM: usize = 1 << 32;

#[inline]
pub(crate) fn dot_words(a: &[u64], b: &[u64], dim: usize) -> i64 {
    let diff: u32 = a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum();
    dim as i64 - 2 * i64::from(diff)
}

#[inline]
pub(crate) fn dot_real_words(words: &[u64], w: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (word, chunk) in words.iter().zip(w.chunks(WORD_BITS)) {
        for (i, &x) in chunk.iter().enumerate() {
            // Flip the sign bit of x when the element is −1.
            let flip = (!(word >> i) & 1) << 63;
            acc += f64::from_bits(x.to_bits() ^ flip);
        }
    }
    acc
}

/// Sign binarization `θ(x) = +1 if x > 0, −1 otherwise` of a vector tensor.
pub fn binarize(v: &RealTensor) -> Result<BitVector> {
    if !v.is_vector() {
        return Err(Error::shape("vector", format!("{:?}", v.shape())));
    }
    BitVector::from_signs(v.data())
}

/// Exact ±1 dot product via XOR-popcount.
pub fn dot_bb(a: &BitVector, b: &BitVector) -> Result<i64> {
    a.dot(b)
}

/// Real-by-binary dot product.
pub fn dot_rb(w: &RealTensor, a: &BitVector) -> Result<f64> {
    if !w.is_vector() {
        return Err(Error::shape("vector", format!("{:?}", w.shape())));
    }
    a.dot_real(w.data())
}

/// Row-major matrix of packed ±1 rows.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BitMatrix {
    cols: usize,
    rows: Vec<BitVector>,
}

impl BitMatrix {
    pub fn from_rows(rows: Vec<BitVector>) -> Result<Self> {
        let cols = rows
            .first()
            .map(BitVector::dim)
            .ok_or_else(|| Error::invalid("bit matrix needs at least one row"))?;
        if let Some(bad) = rows.iter().find(|r| r.dim() != cols) {
            return Err(Error::DimensionMismatch {
                left: cols,
                right: bad.dim(),
            });
        }
        Ok(Self { cols, rows })
    }

    /// Binarize every row of a real matrix.
    pub fn binarize(m: &RealTensor) -> Result<Self> {
        if m.shape().len() != 2 {
            return Err(Error::shape("matrix", format!("{:?}", m.shape())));
        }
        let rows = m
            .iter_rows()
            .map(BitVector::from_signs)
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(rows)
    }

    pub fn rows(&self) -> usize {
        self.rows.len()
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &BitVector {
        &self.rows[i]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &BitVector> {
        self.rows.iter()
    }

    pub fn to_tensor(&self) -> RealTensor {
        let data = self.rows.iter().flat_map(BitVector::unpack).collect();
        RealTensor::matrix(self.rows(), self.cols, data).expect("±1 entries are finite")
    }

    /// `W·a` for a packed ±1 input.
    pub fn matvec_bits(&self, a: &BitVector) -> Result<Vec<i64>> {
        if a.dim() != self.cols {
            return Err(Error::DimensionMismatch {
                left: self.cols,
                right: a.dim(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|r| dot_words(r.words(), a.words(), self.cols))
            .collect())
    }

    /// `W·a` for a real input.
    pub fn matvec_real(&self, a: &[f64]) -> Result<Vec<f64>> {
        if a.len() != self.cols {
            return Err(Error::DimensionMismatch {
                left: self.cols,
                right: a.len(),
            });
        }
        Ok(self
            .rows
            .iter()
            .map(|r| dot_real_words(r.words(), a))
            .collect())
    }

    /// Wire format: u64 rows, u64 cols, then each row in the [`BitVector`] format.
    pub fn write_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&(self.rows() as u64).to_le_bytes());
        out.extend_from_slice(&(self.cols as u64).to_le_bytes());
        for r in &self.rows {
            r.write_to(out);
        }
    }

    pub fn read_from(reader: &mut impl Read) -> Result<Self> {
        let mut buf = [0u8; 8];
        let mut header = [0u64; 2];
        for h in &mut header {
            reader
                .read_exact(&mut buf)
                .map_err(|_| Error::BitDecode("truncated matrix header".into()))?;
            *h = u64::from_le_bytes(buf);
        }
        let [rows, cols] = header;
        if rows == 0 || cols == 0 || rows > MAX_WIRE_DIM as u64 {
            return Err(Error::BitDecode(format!("unsupported matrix shape {rows}x{cols}")));
        }
        let mut out = Vec::with_capacity((rows as usize).min(1 << 16));
        for _ in 0..rows {
            let r = BitVector::read_from(reader)?;
            if r.dim() as u64 != cols {
                return Err(Error::BitDecode(format!(
                    "row of dimension {} in a matrix with {cols} columns",
                    r.dim()
                )));
            }
            out.push(r);
        }
        Self::from_rows(out)
    }
}

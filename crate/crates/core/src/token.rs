//! Codebooks, token grids and nearest-neighbour quantization.
//!
//! A [`Codebook`] holds `N` code vectors of dimension `d`. Token index `N` is
//! reserved as the mask sentinel: it owns a one-hot channel but no code
//! vector, so any attempt to look up its code fails.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::rng::Stream;

const CODEBOOK_MAGIC: &[u8; 4] = b"ITCB";
const CODEBOOK_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Codebook {
    entries: Vec<f64>,
    size: usize,
    dim: usize,
}

impl Codebook {
    pub fn new(entries: Vec<f64>, size: usize, dim: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::range(format!("codebook needs N >= 2, got {size}")));
        }
        if dim < 1 {
            return Err(Error::range("codebook needs d >= 1"));
        }
        if entries.len() != size * dim {
            return Err(Error::shape(format!(
                "codebook data has {} values, expected {size}x{dim}",
                entries.len()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("codebook entries".into()));
        }
        Ok(Self { entries, size, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != dim) {
            return Err(Error::shape("codebook rows differ in length"));
        }
        Self::new(rows.concat(), rows.len(), dim)
    }

    /// Toy codebook with entries drawn uniformly from (-1, 1).
    pub fn random_uniform(size: usize, dim: usize, seed: u64) -> Result<Self> {
        let mut rng = Stream::derive(seed, "codebook", &[]);
        let entries = (0..size * dim).map(|_| rng.uniform() * 2.0 - 1.0).collect();
        Self::new(entries, size, dim)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mask_id(&self) -> u32 {
        self.size as u32
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn code(&self, token: u32) -> Result<&[f64]> {
        let k = token as usize;
        if k >= self.size {
            return Err(if token == self.mask_id() {
                Error::MaskSentinel("code lookup")
            } else {
                Error::TokenOutOfRange {
                    token,
                    vocab: self.size,
                }
            });
        }
        Ok(&self.entries[k * self.dim..(k + 1) * self.dim])
    }

    /// Index of the entry nearest to `v` in squared Euclidean distance,
    /// lowest index on ties.
    pub fn nearest(&self, v: &[f64]) -> (u32, f64) {
        let mut best = (0u32, f64::INFINITY);
        for (k, code) in self.entries.chunks_exact(self.dim).enumerate() {
            let d: f64 = code.iter().zip(v).map(|(c, x)| (c - x) * (c - x)).sum();
            if d < best.1 {
                best = (k as u32, d);
            }
        }
        best
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CODEBOOK_MAGIC)?;
        w.write_all(&CODEBOOK_VERSION.to_le_bytes())?;
        w.write_all(&(self.size as u32).to_le_bytes())?;
        w.write_all(&(self.dim as u32).to_le_bytes())?;
        for v in &self.entries {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CODEBOOK_MAGIC {
            return Err(Error::format("codebook file", "bad magic"));
        }
        let version = read_u32(&mut r)?;
        if version != CODEBOOK_VERSION {
            return Err(Error::format(
                "codebook file",
                format!("unsupported version {version}"),
            ));
        }
        let size = read_u32(&mut r)? as usize;
        let dim = read_u32(&mut r)? as usize;
        let mut entries = Vec::with_capacity(size * dim);
        let mut buf = [0u8; 8];
        for _ in 0..size * dim {
            r.read_exact(&mut buf)?;
            entries.push(f64::from_le_bytes(buf));
        }
        let mut rest = Vec::new();
        r.read_to_end(&mut rest)?;
        if !rest.is_empty() {
            return Err(Error::format("codebook file", "trailing bytes"));
        }
        Self::new(entries, size, dim)
    }
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Width-by-height grid of token indices in `[0, vocab]`, where `vocab` is
/// the mask sentinel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct TokenGrid {
    width: usize,
    height: usize,
    vocab: usize,
    tokens: Vec<u32>,
}

impl TokenGrid {
    pub fn new(width: usize, height: usize, vocab: usize, tokens: Vec<u32>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::range("token grid dimensions must be >= 1"));
        }
        if tokens.len() != width * height {
            return Err(Error::shape(format!(
                "token grid has {} cells, expected {width}x{height}",
                tokens.len()
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t as usize > vocab) {
            return Err(Error::TokenOutOfRange { token: bad, vocab });
        }
        Ok(Self {
            width,
            height,
            vocab,
            tokens,
        })
    }

    pub fn filled(width: usize, height: usize, vocab: usize, token: u32) -> Result<Self> {
        Self::new(width, height, vocab, vec![token; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn mask_id(&self) -> u32 {
        self.vocab as u32
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn get(&self, x: usize, y: usize) -> u32 {
        self.tokens[y * self.width + x]
    }

    pub fn has_mask(&self) -> bool {
        self.tokens.iter().any(|&t| t == self.mask_id())
    }

    pub fn same_shape(&self, other: &TokenGrid) -> bool {
        self.width == other.width && self.height == other.height && self.vocab == other.vocab
    }

    pub(crate) fn require_same_shape(&self, other: &TokenGrid, what: &str) -> Result<()> {
        if self.same_shape(other) {
            Ok(())
        } else {
            Err(Error::shape(format!(
                "{what}: {}x{} (N={}) vs {}x{} (N={})",
                self.width, self.height, self.vocab, other.width, other.height, other.vocab
            )))
        }
    }

    pub(crate) fn require_mask_free(&self, what: &'static str) -> Result<()> {
        if self.has_mask() {
            Err(Error::MaskSentinel(what))
        } else {
            Ok(())
        }
    }

    /// Number of cells where both grids hold the same token.
    pub fn matches(&self, other: &TokenGrid) -> usize {
        self.tokens
            .iter()
            .zip(&other.tokens)
            .filter(|(a, b)| a == b)
            .count()
    }

    /// Comma-separated rows, one line per grid row.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.tokens.len() * 3);
        for row in self.tokens.chunks(self.width) {
            let line: Vec<String> = row.iter().map(u32::to_string).collect();
            out.push_str(&line.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str, vocab: usize) -> Result<Self> {
        let mut tokens = Vec::new();
        let mut width = None;
        let mut height = 0;
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let row: Vec<u32> = line
                .split(',')
                .map(|s| s.trim().parse::<u32>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::format("token csv", e.to_string()))?;
            match width {
                None => width = Some(row.len()),
                Some(w) if w != row.len() => {
                    return Err(Error::format("token csv", "ragged rows"));
                }
                _ => {}
            }
            tokens.extend(row);
            height += 1;
        }
        Self::new(width.unwrap_or(0), height, vocab, tokens)
    }
}

/// Binary grid; `true` marks a kept (trusted / selected) cell.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Mask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(Error::shape(format!(
                "mask has {} cells, expected {width}x{height}",
                bits.len()
            )));
        }
        Ok(Self {
            width,
            height,
            bits,
        })
    }

    pub fn filled(width: usize, height: usize, value: bool) -> Self {
        Self {
            width,
            height,
            bits: vec![value; width * height],
        }
    }

    pub fn from_indices(width: usize, height: usize, indices: &[usize]) -> Self {
        let mut m = Self::filled(width, height, false);
        for &i in indices {
            m.bits[i] = true;
        }
        m
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
    }

    pub fn fits(&self, grid: &TokenGrid) -> bool {
        self.width == grid.width() && self.height == grid.height()
    }
}

/// Width x height x d array of real features.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentGrid {
    width: usize,
    height: usize,
    dim: usize,
    data: Vec<f64>,
}

impl LatentGrid {
    pub fn new(width: usize, height: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 || dim == 0 {
            return Err(Error::range("latent grid dimensions must be >= 1"));
        }
        if data.len() != width * height * dim {
            return Err(Error::shape(format!(
                "latent grid has {} values, expected {width}x{height}x{dim}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("latent grid".into()));
        }
        Ok(Self {
            width,
            height,
            dim,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    fn same_shape(&self, other: &LatentGrid) -> bool {
        self.width == other.width && self.height == other.height && self.dim == other.dim
    }
}

/// Maps every latent cell to its nearest code. Returns the token grid and the
/// grid of selected code vectors.
pub fn quantize(latent: &LatentGrid, book: &Codebook) -> Result<(TokenGrid, LatentGrid)> {
    if latent.dim != book.dim {
        return Err(Error::DimMismatch {
            codebook: book.dim,
            latent: latent.dim,
        });
    }
    let cells = latent.width * latent.height;
    let mut tokens = Vec::with_capacity(cells);
    let mut codes = Vec::with_capacity(latent.data.len());
    for i in 0..cells {
        let (k, _) = book.nearest(latent.cell(i));
        tokens.push(k);
        codes.extend_from_slice(book.code(k)?);
    }
    Ok((
        TokenGrid::new(latent.width, latent.height, book.size, tokens)?,
        LatentGrid::new(latent.width, latent.height, book.dim, codes)?,
    ))
}

/// One-hot encoding of shape width x height x (N+1), row-major by cell.
pub fn embed(tokens: &TokenGrid, book: &Codebook) -> Result<Vec<f64>> {
    if tokens.vocab() != book.size() {
        return Err(Error::shape(format!(
            "grid vocabulary {} does not match codebook size {}",
            tokens.vocab(),
            book.size()
        )));
    }
    let channels = book.size + 1;
    let mut out = vec![0.0; tokens.len() * channels];
    for (i, &t) in tokens.tokens().iter().enumerate() {
        if t as usize >= channels {
            return Err(Error::TokenOutOfRange {
                token: t,
                vocab: book.size,
            });
        }
        out[i * channels + t as usize] = 1.0;
    }
    Ok(out)
}

/// Vector-quantization training loss with its stop-gradient split.
#[derive(Clone, Debug)]
pub struct VqLoss {
    pub value: f64,
    /// `||sg(z_h) - z_c||^2`: trains the codebook.
    pub codebook_term: f64,
    /// `beta * ||z_h - sg(z_c)||^2`: commits the encoder.
    pub commitment_term: f64,
    /// Gradient reaching the encoder output (commitment term only).
    pub grad_latent: Vec<f64>,
    /// Gradient reaching the code vectors (codebook term only).
    pub grad_quantized: Vec<f64>,
}

pub const VQ_BETA: f64 = 0.25;

pub fn vq_loss(latent: &LatentGrid, quantized: &LatentGrid, beta: f64) -> Result<VqLoss> {
    if !latent.same_shape(quantized) {
        return Err(Error::shape("vq_loss: latent and quantized grids differ"));
    }
    let mut sq = 0.0;
    let mut grad_latent = Vec::with_capacity(latent.data.len());
    let mut grad_quantized = Vec::with_capacity(latent.data.len());
    for (&h, &c) in latent.data.iter().zip(&quantized.data) {
        let diff = h - c;
        sq += diff * diff;
        grad_latent.push(2.0 * beta * diff);
        grad_quantized.push(-2.0 * diff);
    }
    Ok(VqLoss {
        value: sq + beta * sq,
        codebook_term: sq,
        commitment_term: beta * sq,
        grad_latent,
        grad_quantized,
    })
}

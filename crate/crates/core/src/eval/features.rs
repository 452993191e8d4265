//! Feature sets and embedders.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::grid::{ImageGrid, ValueRange};
use crate::imageio::read_image;

const MAGIC: &[u8; 4] = b"MKFS";
const FORMAT_VERSION: u32 = 1;

/// Row-major N×d matrix of image features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    rows: usize,
    dim: usize,
    data: Vec<f64>,
    pub embedder_id: String,
    pub source_manifest: Option<PathBuf>,
}

impl FeatureSet {
    pub fn new(rows: usize, dim: usize, data: Vec<f64>, embedder_id: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if data.len() != rows * dim {
            return Err(Error::InvalidArgument(format!(
                "feature data has {} values, expected {rows}x{dim}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("feature row {}", i / dim)));
        }
        Ok(Self {
            rows,
            dim,
            data,
            embedder_id: embedder_id.into(),
            source_manifest: None,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>], embedder_id: impl Into<String>) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: bad.len(),
            });
        }
        Self::new(rows.len(), dim, rows.concat(), embedder_id)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let source = self
            .source_manifest
            .as_ref()
            .map(|p| p.to_string_lossy().into_owned())
            .unwrap_or_default();
        w.write_all(MAGIC)?;
        w.write_all(&FORMAT_VERSION.to_le_bytes())?;
        for s in [&self.embedder_id, &source] {
            w.write_all(&(s.len() as u32).to_le_bytes())?;
            w.write_all(s.as_bytes())?;
        }
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.dim as u64).to_le_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Corrupt("not a feature-set file".into()));
        }
        let version = read_u32(r)?;
        if version != FORMAT_VERSION {
            return Err(Error::VersionMismatch {
                found: version,
                supported: FORMAT_VERSION,
            });
        }
        let embedder_id = read_string(r)?;
        let source = read_string(r)?;
        let rows = read_u64(r)? as usize;
        let dim = read_u64(r)? as usize;
        let count = rows
            .checked_mul(dim)
            .filter(|&n| n <= 1 << 32)
            .ok_or_else(|| Error::Corrupt("feature-set header is implausibly large".into()))?;
        let mut data = Vec::with_capacity(count);
        let mut buf = [0u8; 8];
        for _ in 0..count {
            r.read_exact(&mut buf)?;
            data.push(f64::from_le_bytes(buf));
        }
        let mut set = Self::new(rows, dim, data, embedder_id)?;
        set.source_manifest = (!source.is_empty()).then(|| PathBuf::from(source));
        Ok(set)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut f)?;
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_string(r: &mut impl Read) -> Result<String> {
    let len = read_u32(r)? as usize;
    if len > 1 << 16 {
        return Err(Error::Corrupt("feature-set string field too long".into()));
    }
    let mut b = vec![0u8; len];
    r.read_exact(&mut b)?;
    String::from_utf8(b).map_err(|_| Error::Corrupt("feature-set string is not UTF-8".into()))
}

/// Deterministic map from an image to a fixed-length vector.
pub trait Embedder: Send + Sync {
    fn id(&self) -> &str;
    fn dim(&self) -> usize;
    fn embed(&self, image: &ImageGrid) -> Result<Vec<f64>>;
}

/// Per-channel colour histograms followed by a block-averaged luma grid.
#[derive(Clone, Debug)]
pub struct ToyEmbedder {
    bins: usize,
    grid: usize,
    id: String,
}

impl ToyEmbedder {
    pub fn new(bins: usize, grid: usize) -> Result<Self> {
        if bins == 0 || grid == 0 {
            return Err(Error::InvalidArgument("histogram bins and grid size must be positive".into()));
        }
        Ok(Self {
            bins,
            grid,
            id: format!("toy-hist{bins}-luma{grid}"),
        })
    }
}

impl Default for ToyEmbedder {
    fn default() -> Self {
        Self::new(8, 8).expect("default sizes are positive")
    }
}

impl Embedder for ToyEmbedder {
    fn id(&self) -> &str {
        &self.id
    }

    fn dim(&self) -> usize {
        3 * self.bins + self.grid * self.grid
    }

    fn embed(&self, image: &ImageGrid) -> Result<Vec<f64>> {
        let (h, w) = image.dims();
        if h < self.grid || w < self.grid {
            return Err(Error::InvalidArgument(format!(
                "image {h}x{w} is smaller than the {}x{} luma grid",
                self.grid, self.grid
            )));
        }
        let img = image.to_range(ValueRange::Unit);
        let mut hist = vec![0.0; 3 * self.bins];
        let mut luma = vec![0.0; self.grid * self.grid];
        let mut counts = vec![0usize; self.grid * self.grid];
        let per_pixel = 1.0 / (h * w) as f64;
        for y in 0..h {
            let gy = y * self.grid / h;
            for x in 0..w {
                let p = img.pixel(y, x);
                for (c, v) in p.iter().enumerate() {
                    let b = ((v * self.bins as f64) as usize).min(self.bins - 1);
                    hist[c * self.bins + b] += per_pixel;
                }
                let cell = gy * self.grid + x * self.grid / w;
                luma[cell] += 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
                counts[cell] += 1;
            }
        }
        for (l, n) in luma.iter_mut().zip(&counts) {
            *l /= *n as f64;
        }
        hist.extend(luma);
        Ok(hist)
    }
}

/// Embeds in-memory images; row i is the embedding of image i.
pub fn embed_images(images: &[ImageGrid], embedder: &dyn Embedder) -> Result<FeatureSet> {
    let rows = images
        .par_iter()
        .map(|img| embedder.embed(img))
        .collect::<Result<Vec<_>>>()?;
    check_rows(&rows, embedder)?;
    FeatureSet::from_rows(&rows, embedder.id())
}

/// Embeds image files in order; the first unreadable file aborts with its index.
pub fn embed_set(paths: &[PathBuf], embedder: &dyn Embedder) -> Result<FeatureSet> {
    let rows = paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let img = read_image(p).map_err(|e| Error::InvalidArgument(format!("image {i}: {e}")))?;
            embedder.embed(&img)
        })
        .collect::<Result<Vec<_>>>()?;
    check_rows(&rows, embedder)?;
    FeatureSet::from_rows(&rows, embedder.id())
}

fn check_rows(rows: &[Vec<f64>], embedder: &dyn Embedder) -> Result<()> {
    match rows.iter().find(|r| r.len() != embedder.dim()) {
        Some(r) => Err(Error::DimensionMismatch {
            expected: embedder.dim(),
            actual: r.len(),
        }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataprep::synth_faces;

    #[test]
    fn toy_embedding_oracle() {
        let img = ImageGrid::filled(16, 16, [0.1, 0.5, 1.0]);
        let e = ToyEmbedder::new(4, 2).unwrap();
        let v = e.embed(&img).unwrap();
        assert_eq!(v.len(), e.dim());
        assert_eq!(&v[..4], &[1.0, 0.0, 0.0, 0.0]);
        assert_eq!(&v[4..8], &[0.0, 0.0, 1.0, 0.0]);
        assert_eq!(&v[8..12], &[0.0, 0.0, 0.0, 1.0]);
        let l = 0.299 * 0.1 + 0.587 * 0.5 + 0.114;
        assert!(v[12..].iter().all(|x| (x - l).abs() < 1e-12));
    }

    #[test]
    fn embed_preserves_order_and_duplicates() {
        let faces: Vec<_> = synth_faces(3, 1, 32).into_iter().map(|f| f.makeup).collect();
        let e = ToyEmbedder::default();
        let set = embed_images(&faces, &e).unwrap();
        assert_eq!((set.rows(), set.dim()), (3, 88));
        let rev: Vec<_> = faces.iter().rev().cloned().collect();
        let rset = embed_images(&rev, &e).unwrap();
        assert_eq!(set.row(0), rset.row(2));
        let dup = embed_images(&[faces[1].clone(), faces[1].clone()], &e).unwrap();
        assert_eq!(dup.row(0), dup.row(1));
    }

    #[test]
    fn embed_set_reports_failing_index() {
        let dir = tempfile::tempdir().unwrap();
        let good = dir.path().join("a.png");
        crate::imageio::write_png(&ImageGrid::filled(16, 16, [0.2; 3]), &good).unwrap();
        let bad = dir.path().join("b.png");
        std::fs::write(&bad, b"not an image").unwrap();
        let err = embed_set(&[good.clone(), bad], &ToyEmbedder::default()).unwrap_err();
        assert!(err.to_string().contains("image 1"), "{err}");
        assert_eq!(embed_set(&[good], &ToyEmbedder::default()).unwrap().rows(), 1);
    }

    #[test]
    fn binary_round_trip() {
        let mut set = FeatureSet::from_rows(&[vec![1.0, -2.5], vec![0.125, 3.0]], "toy").unwrap();
        set.source_manifest = Some(PathBuf::from("refs/manifest.jsonl"));
        let mut bytes = Vec::new();
        set.write_to(&mut bytes).unwrap();
        assert_eq!(&bytes[..4], b"MKFS");
        assert_eq!(FeatureSet::read_from(&mut bytes.as_slice()).unwrap(), set);
        bytes[0] = b'X';
        assert!(FeatureSet::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn rejects_ragged_and_non_finite() {
        assert!(FeatureSet::from_rows(&[vec![1.0], vec![1.0, 2.0]], "x").is_err());
        assert!(FeatureSet::from_rows(&[vec![f64::NAN]], "x").is_err());
    }
}

//! Face-masked blending and the on-disk pair set.
//!
//! `build_pairs` writes one directory per source image plus a
//! `manifest.jsonl` with one record per input, in source-id order:
//!
//! ```text
//! {out}/{source_id}/makeup.png   resized makeup image
//! {out}/{source_id}/naked.png    blended bare face
//! {out}/{source_id}/mask.png     blurred face mask, 16-bit gray
//! {out}/manifest.jsonl
//! ```

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataprep::blur::{blur_mask, BlurConfig};
use crate::dataprep::demakeup::Demakeup;
use crate::dataprep::parse::FaceParser;
use crate::error::{shape_err, Error, Result};
use crate::grid::{ImageGrid, Mask, ValueRange};
use crate::imageio::{read_image_resized, read_mask_png, write_mask_png, write_png};

pub const MANIFEST_FILE: &str = "manifest.jsonl";
const IMAGE_EXTENSIONS: [&str; 3] = ["png", "jpg", "jpeg"];

/// `naked_star · mask + makeup · (1 − mask)`, per pixel and channel.
pub fn blend_naked(naked_star: &ImageGrid, makeup: &ImageGrid, mask: &Mask) -> Result<ImageGrid> {
    naked_star.ensure_same_dims(makeup.dims(), "blend_naked images")?;
    if mask.dims() != makeup.dims() {
        return Err(shape_err("blend_naked mask", makeup.dims(), mask.dims()));
    }
    let a = naked_star.to_range(ValueRange::Unit);
    let b = makeup.to_range(ValueRange::Unit);
    let (h, w) = makeup.dims();
    let mut out = ImageGrid::filled(h, w, [0.0; 3]);
    for y in 0..h {
        for x in 0..w {
            let m = mask.get(y, x);
            let (pa, pb) = (a.pixel(y, x), b.pixel(y, x));
            out.set_pixel(y, x, [0, 1, 2].map(|c| pa[c] * m + pb[c] * (1.0 - m)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PseudoPair {
    pub source_id: String,
    pub makeup: ImageGrid,
    pub naked: ImageGrid,
    pub mask: Mask,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairConfig {
    pub size: usize,
    pub blur: BlurConfig,
}

impl PairConfig {
    pub fn for_resolution(size: usize) -> Self {
        Self {
            size,
            blur: BlurConfig::for_resolution(size),
        }
    }
}

/// Builds the pseudo pair for one makeup image.
pub fn make_pair(
    source_id: &str,
    makeup: ImageGrid,
    parser: &dyn FaceParser,
    demakeup: &dyn Demakeup,
    blur: &BlurConfig,
) -> Result<PseudoPair> {
    let face = parser.parse(&makeup, source_id)?;
    let naked_star = demakeup.remove_makeup(&makeup, source_id)?;
    let mask = blur_mask(&face, blur)?;
    let naked = blend_naked(&naked_star, &makeup, &mask)?;
    Ok(PseudoPair {
        source_id: source_id.to_string(),
        makeup,
        naked,
        mask,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum ManifestRecord {
    Ok {
        source_id: String,
        makeup: String,
        naked: String,
        mask: String,
        mask_mean: f64,
    },
    Skipped {
        source_id: String,
        reason: String,
    },
}

impl ManifestRecord {
    pub fn source_id(&self) -> &str {
        match self {
            Self::Ok { source_id, .. } | Self::Skipped { source_id, .. } => source_id,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PairManifest {
    pub root: PathBuf,
    pub records: Vec<ManifestRecord>,
}

impl PairManifest {
    pub fn ok_count(&self) -> usize {
        self.records
            .iter()
            .filter(|r| matches!(r, ManifestRecord::Ok { .. }))
            .count()
    }

    pub fn skipped(&self) -> impl Iterator<Item = &ManifestRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, ManifestRecord::Skipped { .. }))
    }

    /// Loads every successful pair from disk.
    pub fn load_pairs(&self) -> Result<Vec<PseudoPair>> {
        self.records
            .iter()
            .filter_map(|r| match r {
                ManifestRecord::Ok {
                    source_id,
                    makeup,
                    naked,
                    mask,
                    ..
                } => Some((source_id, makeup, naked, mask)),
                ManifestRecord::Skipped { .. } => None,
            })
            .map(|(id, makeup, naked, mask)| {
                let makeup = crate::imageio::read_image(&self.root.join(makeup))?;
                let naked = crate::imageio::read_image(&self.root.join(naked))?;
                let mask = read_mask_png(&self.root.join(mask))?;
                Ok(PseudoPair {
                    source_id: id.clone(),
                    makeup,
                    naked,
                    mask,
                })
            })
            .collect()
    }
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn source_id_of(path: &Path) -> String {
    path.file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("image")
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

/// Builds the pair set for every image in `input_dir`. Images without a
/// detectable face are recorded as skipped; unreadable files are errors.
pub fn build_pairs(
    input_dir: &Path,
    out_dir: &Path,
    config: &PairConfig,
    parser: &dyn FaceParser,
    demakeup: &dyn Demakeup,
) -> Result<PairManifest> {
    config.blur.validate()?;
    let files = list_images(input_dir)?;
    if files.is_empty() {
        return Err(Error::EmptyInput(format!(
            "no inputs in {}",
            input_dir.display()
        )));
    }
    let ids: Vec<String> = files.iter().map(|p| source_id_of(p)).collect();
    let unique: BTreeSet<&String> = ids.iter().collect();
    if unique.len() != ids.len() {
        return Err(Error::InvalidArgument(
            "input file stems must be unique".into(),
        ));
    }
    std::fs::create_dir_all(out_dir)?;

    let mut records: Vec<ManifestRecord> = files
        .par_iter()
        .zip(ids.par_iter())
        .map(|(path, id)| -> Result<ManifestRecord> {
            let makeup = read_image_resized(path, config.size)?;
            match make_pair(id, makeup, parser, demakeup, &config.blur) {
                Ok(pair) => {
                    let dir = out_dir.join(id);
                    std::fs::create_dir_all(&dir)?;
                    write_png(&pair.makeup, &dir.join("makeup.png"))?;
                    write_png(&pair.naked, &dir.join("naked.png"))?;
                    write_mask_png(&pair.mask, &dir.join("mask.png"))?;
                    Ok(ManifestRecord::Ok {
                        source_id: id.clone(),
                        makeup: format!("{id}/makeup.png"),
                        naked: format!("{id}/naked.png"),
                        mask: format!("{id}/mask.png"),
                        mask_mean: pair.mask.mean(),
                    })
                }
                Err(Error::NoFaceDetected { .. }) => {
                    log::warn!("skipping {id}: no facial region detected");
                    Ok(ManifestRecord::Skipped {
                        source_id: id.clone(),
                        reason: "no_face_detected".into(),
                    })
                }
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    records.sort_by(|a, b| a.source_id().cmp(b.source_id()));

    let mut f = std::io::BufWriter::new(std::fs::File::create(out_dir.join(MANIFEST_FILE))?);
    for r in &records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(PairManifest {
        root: out_dir.to_path_buf(),
        records,
    })
}

/// Reads a manifest; relative paths resolve against its directory.
pub fn read_manifest(path: &Path) -> Result<PairManifest> {
    let path = if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    };
    let reader = std::io::BufReader::new(std::fs::File::open(&path)?);
    let mut records = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            records.push(serde_json::from_str(&line)?);
        }
    }
    Ok(PairManifest {
        root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        records,
    })
}

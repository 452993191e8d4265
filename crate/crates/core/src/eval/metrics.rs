//! Distribution and per-image scores.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::features::FeatureSet;
use crate::error::{Error, Result};
use crate::grid::{ImageGrid, Mask, ValueRange};

const EIGEN_TOLERANCE: f64 = 1e-6;

fn mean_and_cov(set: &FeatureSet) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = (set.rows(), set.dim());
    let x = DMatrix::from_row_slice(n, d, set.data());
    let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mean, cov)
}

/// Eigendecomposition of the symmetrized matrix with negative eigenvalues
/// clamped to zero; also returns how many were clamped beyond tolerance.
fn clamped_eigen(m: &DMatrix<f64>) -> (SymmetricEigen<f64, nalgebra::Dyn>, usize) {
    let sym = (m + m.transpose()) * 0.5;
    let mut eig = SymmetricEigen::new(sym);
    let mut clamped = 0;
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            if *v < -EIGEN_TOLERANCE {
                clamped += 1;
            }
            *v = 0.0;
        }
    }
    (eig, clamped)
}

fn psd_sqrt(m: &DMatrix<f64>) -> (DMatrix<f64>, usize) {
    let (eig, clamped) = clamped_eigen(m);
    let sqrt_vals = eig.eigenvalues.map(f64::sqrt);
    let q = &eig.eigenvectors;
    (q * DMatrix::from_diagonal(&sqrt_vals) * q.transpose(), clamped)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrechetDetails {
    pub distance: f64,
    pub mean_term: f64,
    pub trace_term: f64,
    /// Eigenvalues below `-1e-6` that had to be clamped; non-zero means the
    /// covariances were numerically indefinite.
    pub clamped_eigenvalues: usize,
}

/// Fréchet distance between Gaussians fitted to two feature sets.
pub fn frechet_details(a: &FeatureSet, b: &FeatureSet) -> Result<FrechetDetails> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    if a.rows() < 2 || b.rows() < 2 {
        return Err(Error::InvalidArgument(
            "each feature set needs at least 2 rows for covariance statistics".into(),
        ));
    }
    let (mu_a, cov_a) = mean_and_cov(a);
    let (mu_b, cov_b) = mean_and_cov(b);
    let mean_term = (&mu_a - &mu_b).norm_squared();
    // sqrt(A B) has the same trace as sqrt(sqrt(A) B sqrt(A)), which is symmetric.
    let (root_a, c1) = psd_sqrt(&cov_a);
    let inner = &root_a * &cov_b * &root_a;
    let (eig, c2) = clamped_eigen(&inner);
    let tr_sqrt: f64 = eig.eigenvalues.iter().map(|v| v.sqrt()).sum();
    let trace_term = cov_a.trace() + cov_b.trace() - 2.0 * tr_sqrt;
    let mut distance = mean_term + trace_term;
    if distance < 0.0 && distance > -EIGEN_TOLERANCE * (1.0 + cov_a.trace() + cov_b.trace()) {
        distance = 0.0;
    }
    Ok(FrechetDetails {
        distance,
        mean_term,
        trace_term,
        clamped_eigenvalues: c1 + c2,
    })
}

pub fn frechet_distance(a: &FeatureSet, b: &FeatureSet) -> Result<f64> {
    frechet_details(a, b).map(|d| d.distance)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregate {
    #[default]
    Mean,
    Max,
}

fn normalized(v: &[f64], what: &str, i: usize) -> Result<Vec<f64>> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n == 0.0 {
        return Err(Error::InvalidArgument(format!("{what} feature {i} has zero norm")));
    }
    Ok(v.iter().map(|x| x / n).collect())
}

/// Mean over generated rows of the mean (or max) cosine similarity against
/// the reference rows.
pub fn cosine_similarity_score(generated: &FeatureSet, reference: &FeatureSet, agg: Aggregate) -> Result<f64> {
    if generated.dim() != reference.dim() {
        return Err(Error::DimensionMismatch {
            expected: reference.dim(),
            actual: generated.dim(),
        });
    }
    if generated.rows() == 0 || reference.rows() == 0 {
        return Err(Error::EmptyInput("cosine similarity needs non-empty feature sets".into()));
    }
    let refs = reference
        .iter_rows()
        .enumerate()
        .map(|(i, r)| normalized(r, "reference", i))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (i, g) in generated.iter_rows().enumerate() {
        let g = normalized(g, "generated", i)?;
        let sims = refs
            .iter()
            .map(|r| r.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0));
        total += match agg {
            Aggregate::Mean => sims.sum::<f64>() / refs.len() as f64,
            Aggregate::Max => sims.fold(f64::NEG_INFINITY, f64::max),
        };
    }
    Ok(total / generated.rows() as f64)
}

/// Mean absolute difference over one mask region; `pixels == 0` flags an
/// empty region, in which case `mad` is 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionMad {
    pub mad: f64,
    pub pixels: usize,
}

impl RegionMad {
    pub fn is_empty(&self) -> bool {
        self.pixels == 0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Integrity {
    pub outside: RegionMad,
    pub inside: RegionMad,
}

/// Per-pixel channel-mean absolute difference in unit range, split into the
/// region where the mask is exactly zero and the rest.
pub fn identity_integrity(final_image: &ImageGrid, naked: &ImageGrid, mask: &Mask) -> Result<Integrity> {
    final_image.ensure_same_dims(naked.dims(), "integrity images")?;
    naked.ensure_same_dims(mask.dims(), "integrity mask")?;
    let (a, b) = (final_image.to_range(ValueRange::Unit), naked.to_range(ValueRange::Unit));
    let (mut sums, mut counts) = ([0.0f64; 2], [0usize; 2]);
    for y in 0..a.height() {
        for x in 0..a.width() {
            let (p, q) = (a.pixel(y, x), b.pixel(y, x));
            let d = (0..3).map(|c| (p[c] - q[c]).abs()).sum::<f64>() / 3.0;
            let region = usize::from(mask.get(y, x) > 0.0);
            sums[region] += d;
            counts[region] += 1;
        }
    }
    let region = |i: usize| RegionMad {
        mad: if counts[i] == 0 { 0.0 } else { sums[i] / counts[i] as f64 },
        pixels: counts[i],
    };
    Ok(Integrity {
        outside: region(0),
        inside: region(1),
    })
}

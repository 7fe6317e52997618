//! Feature vectors: the built-in grid descriptor, normalization and the
//! Euclidean distance used for ranking.

mod store;

pub use store::{EmbeddingStore, StoreError, STORE_MAGIC};

use thiserror::Error;

use crate::raster::Raster;

/// Norms below this are treated as zero.
pub const DEGENERATE_NORM: f64 = 1e-12;
/// Vector dimension of the default embedding head.
pub const DEFAULT_DIMENSION: usize = 512;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("vector norm {0:e} is too small to normalize")]
    Degenerate(f64),
    #[error("non-finite vector entry at index {0}")]
    NonFinite(usize),
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("grid {grid} does not fit a {width}x{height} raster")]
    BadGrid { grid: usize, width: usize, height: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub sample_id: String,
    pub vector: Vec<f32>,
    pub normalized: bool,
}

impl Embedding {
    pub fn new(sample_id: impl Into<String>, vector: Vec<f32>) -> Result<Self, EmbedError> {
        if let Some(i) = vector.iter().position(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite(i));
        }
        let normalized = (norm(&vector) - 1.0).abs() <= 1e-6;
        Ok(Embedding {
            sample_id: sample_id.into(),
            vector,
            normalized,
        })
    }

    pub fn dimension(&self) -> usize {
        self.vector.len()
    }

    /// Normalizes in place; degenerate vectors are left untouched with
    /// `normalized = false`.
    pub fn normalize_or_keep(&mut self) {
        if let Ok(v) = l2_normalize(&self.vector) {
            self.vector = v;
            self.normalized = true;
        }
    }
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| (x as f64) * (x as f64)).sum::<f64>().sqrt()
}

pub fn l2_normalize(v: &[f32]) -> Result<Vec<f32>, EmbedError> {
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(EmbedError::NonFinite(i));
    }
    let n = norm(v);
    if n < DEGENERATE_NORM {
        return Err(EmbedError::Degenerate(n));
    }
    Ok(v.iter().map(|&x| (x as f64 / n) as f32).collect())
}

/// Euclidean distance between raw vectors, accumulated in `f64`.
pub fn euclidean_slices(a: &[f32], b: &[f32]) -> Result<f64, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let d = x as f64 - y as f64;
            d * d
        })
        .sum::<f64>()
        .sqrt())
}

pub fn euclidean(a: &Embedding, b: &Embedding) -> Result<f64, EmbedError> {
    euclidean_slices(&a.vector, &b.vector)
}

/// Grid-mean colour descriptor used when no learned model is available.
///
/// The raster is split into `grid x grid` cells (cell edges at
/// `floor(i * dim / grid)`); the mean of each channel in each cell is
/// collected in row-major cell order with channels innermost, the global mean
/// of the vector is subtracted and the result is L2-normalized. Flat images
/// produce a zero vector, which is returned unnormalized.
pub fn toy_descriptor(sample_id: impl Into<String>, raster: &Raster, grid: usize) -> Result<Embedding, EmbedError> {
    let (w, h, c) = (raster.width(), raster.height(), raster.channels());
    if grid == 0 || grid > w || grid > h {
        return Err(EmbedError::BadGrid {
            grid,
            width: w,
            height: h,
        });
    }
    let xs: Vec<usize> = (0..=grid).map(|i| i * w / grid).collect();
    let ys: Vec<usize> = (0..=grid).map(|i| i * h / grid).collect();
    let mut feats = Vec::with_capacity(grid * grid * c);
    for cy in 0..grid {
        for cx in 0..grid {
            let mut sums = vec![0u64; c];
            for y in ys[cy]..ys[cy + 1] {
                for x in xs[cx]..xs[cx + 1] {
                    for (s, &v) in sums.iter_mut().zip(raster.pixel(x, y)) {
                        *s += v as u64;
                    }
                }
            }
            let n = ((xs[cx + 1] - xs[cx]) * (ys[cy + 1] - ys[cy])) as f64;
            feats.extend(sums.iter().map(|&s| s as f64 / n));
        }
    }
    let mean = feats.iter().sum::<f64>() / feats.len() as f64;
    let centered: Vec<f64> = feats.iter().map(|f| f - mean).collect();
    let n = centered.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sample_id = sample_id.into();
    if n < DEGENERATE_NORM {
        return Ok(Embedding {
            sample_id,
            vector: vec![0.0; centered.len()],
            normalized: false,
        });
    }
    Ok(Embedding {
        sample_id,
        vector: centered.iter().map(|x| (x / n) as f32).collect(),
        normalized: true,
    })
}

//! Exhaustive feature-distance ranking over a geo-tagged gallery.
//!
//! Two search domains are supported: the whole gallery (global search) and
//! the neighbourhood `{ t in gallery : meters(t, center) < radius }` around a
//! centre point (neighbour search). Both rank by Euclidean feature distance
//! with ties broken by ascending `sample_id`, so results are a total order
//! that does not depend on scheduling.

use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SplitManifest;
use crate::embed::{euclidean_slices, Embedding, EmbeddingStore};
use crate::geo::{meters_distance, GeoPoint};

/// Below this many candidates distances are computed on the calling thread.
const PARALLEL_THRESHOLD: usize = 4096;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RetrievalError {
    #[error("query dimension {query} does not match index dimension {index}")]
    DimensionMismatch { query: usize, index: usize },
    #[error("the index is empty")]
    EmptyIndex,
    #[error("k must be >= 1")]
    ZeroK,
    #[error("search radius must be > 0, got {0}")]
    BadRadius(f64),
    #[error("no gallery entry lies within {radius_m} m of ({}, {})", center.lat, center.lon)]
    EmptyDomain { center: GeoPoint, radius_m: f64 },
    #[error("duplicate sample id {0:?} in index")]
    DuplicateId(String),
    #[error("gallery sample {0:?} has no embedding")]
    MissingEmbedding(String),
    #[error("entry {id:?} has an invalid geo-tag")]
    InvalidGeo { id: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IndexEntry {
    pub sample_id: String,
    pub vector: Vec<f32>,
    pub geo: GeoPoint,
    pub class_id: String,
}

/// Gallery of embeddings with geo-tags and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct GeoIndex {
    dimension: usize,
    entries: Vec<IndexEntry>,
}

impl GeoIndex {
    pub fn new(dimension: usize) -> Self {
        GeoIndex {
            dimension,
            entries: Vec::new(),
        }
    }

    pub fn from_entries(dimension: usize, entries: Vec<IndexEntry>) -> Result<Self, RetrievalError> {
        let mut seen = HashSet::with_capacity(entries.len());
        for e in &entries {
            if e.vector.len() != dimension {
                return Err(RetrievalError::DimensionMismatch {
                    query: e.vector.len(),
                    index: dimension,
                });
            }
            if !e.geo.is_valid() {
                return Err(RetrievalError::InvalidGeo {
                    id: e.sample_id.clone(),
                });
            }
            if !seen.insert(e.sample_id.as_str()) {
                return Err(RetrievalError::DuplicateId(e.sample_id.clone()));
            }
        }
        Ok(GeoIndex { dimension, entries })
    }

    /// Joins a gallery manifest with its embeddings, in manifest order.
    pub fn build(manifest: &SplitManifest, store: &EmbeddingStore) -> Result<Self, RetrievalError> {
        let entries = manifest
            .records
            .iter()
            .map(|r| {
                let e = store
                    .get(&r.sample_id)
                    .ok_or_else(|| RetrievalError::MissingEmbedding(r.sample_id.clone()))?;
                Ok(IndexEntry {
                    sample_id: r.sample_id.clone(),
                    vector: e.vector.clone(),
                    geo: r.geo(),
                    class_id: r.class_id.clone(),
                })
            })
            .collect::<Result<Vec<_>, RetrievalError>>()?;
        GeoIndex::from_entries(store.dimension(), entries)
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn entries(&self) -> &[IndexEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Positions of entries strictly closer than `radius_m` to `center`.
    fn within(&self, center: GeoPoint, radius_m: f64) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| meters_distance(e.geo, center) < radius_m)
            .map(|(i, _)| i)
            .collect()
    }

    fn rank_subset(&self, positions: &[usize], query: &Embedding, k: usize) -> Vec<RankedEntry> {
        let dist = |&i: &usize| {
            let d = euclidean_slices(&self.entries[i].vector, &query.vector).expect("dimension checked by caller");
            (d, i)
        };
        let mut scored: Vec<(f64, usize)> = if positions.len() >= PARALLEL_THRESHOLD {
            positions.par_iter().map(dist).collect()
        } else {
            positions.iter().map(dist).collect()
        };
        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            a.0.total_cmp(&b.0)
                .then_with(|| self.entries[a.1].sample_id.cmp(&self.entries[b.1].sample_id))
        };
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, cmp);
            scored.truncate(k);
        }
        scored.sort_unstable_by(cmp);
        scored
            .into_iter()
            .map(|(distance, i)| {
                let e = &self.entries[i];
                RankedEntry {
                    sample_id: e.sample_id.clone(),
                    distance,
                    geo: e.geo,
                    class_id: e.class_id.clone(),
                }
            })
            .collect()
    }

    fn check_query(&self, query: &Embedding, k: usize) -> Result<(), RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::ZeroK);
        }
        if query.dimension() != self.dimension {
            return Err(RetrievalError::DimensionMismatch {
                query: query.dimension(),
                index: self.dimension,
            });
        }
        Ok(())
    }
}

/// Which domain a ranking was computed over. An infinite radius is written as
/// `null` in serialized form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SearchStrategy {
    Global,
    Neighbor {
        center: GeoPoint,
        #[serde(with = "unbounded")]
        radius_m: f64,
    },
}

pub(crate) mod unbounded {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_none()
        } else {
            s.serialize_some(v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub sample_id: String,
    pub distance: f64,
    pub geo: GeoPoint,
    pub class_id: String,
}

/// Candidates for one query in ascending `(distance, sample_id)` order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
    pub strategy: SearchStrategy,
}

impl RankedList {
    pub fn top1(&self) -> Option<&RankedEntry> {
        self.entries.first()
    }
}

/// The `k` nearest entries of the whole index (all of them if `k` exceeds
/// the index size).
pub fn rank_global(index: &GeoIndex, query: &Embedding, k: usize) -> Result<RankedList, RetrievalError> {
    index.check_query(query, k)?;
    if index.is_empty() {
        return Err(RetrievalError::EmptyIndex);
    }
    let all: Vec<usize> = (0..index.len()).collect();
    Ok(RankedList {
        query_id: query.sample_id.clone(),
        entries: index.rank_subset(&all, query, k),
        strategy: SearchStrategy::Global,
    })
}

fn check_radius(radius_m: f64) -> Result<(), RetrievalError> {
    if radius_m.is_nan() || radius_m <= 0.0 {
        return Err(RetrievalError::BadRadius(radius_m));
    }
    Ok(())
}

/// Sub-index of entries strictly closer than `radius_m` meters to `center`,
/// preserving entry order. `f64::INFINITY` keeps everything.
pub fn filter_neighbor(index: &GeoIndex, center: GeoPoint, radius_m: f64) -> Result<GeoIndex, RetrievalError> {
    check_radius(radius_m)?;
    let entries = index
        .within(center, radius_m)
        .into_iter()
        .map(|i| index.entries[i].clone())
        .collect();
    Ok(GeoIndex {
        dimension: index.dimension,
        entries,
    })
}

/// Global ranking restricted to the neighbourhood of `center`.
pub fn rank_neighbor(
    index: &GeoIndex,
    query: &Embedding,
    center: GeoPoint,
    radius_m: f64,
    k: usize,
) -> Result<RankedList, RetrievalError> {
    check_radius(radius_m)?;
    index.check_query(query, k)?;
    let positions = index.within(center, radius_m);
    if positions.is_empty() {
        return Err(RetrievalError::EmptyDomain { center, radius_m });
    }
    Ok(RankedList {
        query_id: query.sample_id.clone(),
        entries: index.rank_subset(&positions, query, k),
        strategy: SearchStrategy::Neighbor { center, radius_m },
    })
}

/// Number of gallery entries a neighbour search around `center` would scan.
pub fn domain_size(index: &GeoIndex, center: GeoPoint, radius_m: f64) -> usize {
    index.within(center, radius_m).len()
}

#[cfg(test)]
fn compare_entries(a: &RankedEntry, b: &RankedEntry) -> std::cmp::Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.sample_id.cmp(&b.sample_id))
}

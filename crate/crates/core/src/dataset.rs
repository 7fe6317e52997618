//! Sample manifests: drone and satellite images with class labels, geo-tags
//! and train/query/gallery splits.
//!
//! A manifest is UTF-8 JSON lines. The first line is a header naming the
//! format and split; each following line is one [`SampleRecord`] in a fixed
//! field order. Files written by [`SplitManifest::save`] are canonical, so
//! loading and saving again reproduces them byte for byte.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{meters_distance, GeoPoint};
use crate::tilecut::{TileManifest, TILE_MANIFEST_FORMAT};

pub const SAMPLE_MANIFEST_FORMAT: &str = "uavloc-samples";
/// Waypoint repeatability used as the default intra-class geo tolerance.
pub const DEFAULT_GEO_TOLERANCE_M: f64 = 1.0;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("line {line}: parse error: {msg}")]
    Parse { line: usize, msg: String },
    #[error("line {line}: duplicate sample_id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: invalid geo ({lat}, {lon})")]
    InvalidGeo { line: usize, lat: f64, lon: f64 },
    #[error("line {line}: empty class_id")]
    EmptyClass { line: usize },
    #[error("line {line}: record split {found} does not match manifest split {expected}")]
    SplitMismatch { line: usize, expected: Split, found: Split },
    #[error("line {line}: class {class_id:?} member lies {spread_m:.3} m from the class centroid (tolerance {tolerance_m} m)")]
    ClassSpread {
        line: usize,
        class_id: String,
        spread_m: f64,
        tolerance_m: f64,
    },
    #[error("unknown class {0:?}")]
    UnknownClass(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Drone,
    Satellite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Query,
    Gallery,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Query => "query",
            Split::Gallery => "gallery",
        })
    }
}

/// One image of the dataset. `class_id` labels the sampling point; drone and
/// satellite images of the same point share it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleRecord {
    pub sample_id: String,
    pub split: Split,
    pub class_id: String,
    pub view: View,
    pub lat: f64,
    pub lon: f64,
    pub altitude_m: Option<f64>,
    pub image_path: String,
    /// Position in a flight trace; only present in trace manifests.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step: Option<u64>,
}

impl SampleRecord {
    pub fn geo(&self) -> GeoPoint {
        GeoPoint {
            lat: self.lat,
            lon: self.lon,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    format: String,
    version: String,
    split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitManifest {
    pub split: Split,
    pub records: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ManifestSummary {
    pub records: usize,
    pub classes: usize,
    pub by_view: BTreeMap<View, usize>,
    pub class_sizes: BTreeMap<usize, usize>,
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.display().to_string(),
        source,
    }
}

impl SplitManifest {
    pub fn new(split: Split) -> Self {
        SplitManifest {
            split,
            records: Vec::new(),
        }
    }

    /// Gallery view of a tile database: one satellite sample per tile, each
    /// tile its own class.
    pub fn from_tiles(tiles: &TileManifest) -> Self {
        let records = tiles
            .tiles
            .iter()
            .map(|t| SampleRecord {
                sample_id: t.tile_id.clone(),
                split: Split::Gallery,
                class_id: t.tile_id.clone(),
                view: View::Satellite,
                lat: t.center_lat,
                lon: t.center_lon,
                altitude_m: None,
                image_path: t.raster_path.clone(),
                step: None,
            })
            .collect();
        SplitManifest {
            split: Split::Gallery,
            records,
        }
    }

    /// Checks every invariant. Line numbers in errors assume the canonical
    /// file layout (header on line 1).
    pub fn validate(&self, geo_tolerance_m: f64) -> Result<(), DatasetError> {
        let line_of = |i: usize| i + 2;
        let mut seen = HashSet::new();
        for (i, r) in self.records.iter().enumerate() {
            if r.split != self.split {
                return Err(DatasetError::SplitMismatch {
                    line: line_of(i),
                    expected: self.split,
                    found: r.split,
                });
            }
            if !seen.insert(r.sample_id.as_str()) {
                return Err(DatasetError::DuplicateId {
                    line: line_of(i),
                    id: r.sample_id.clone(),
                });
            }
            if r.class_id.is_empty() {
                return Err(DatasetError::EmptyClass { line: line_of(i) });
            }
            if !r.geo().is_valid() {
                return Err(DatasetError::InvalidGeo {
                    line: line_of(i),
                    lat: r.lat,
                    lon: r.lon,
                });
            }
        }
        let centroids = self.class_centroids();
        for (i, r) in self.records.iter().enumerate() {
            let spread_m = meters_distance(r.geo(), centroids[r.class_id.as_str()]);
            if spread_m > geo_tolerance_m {
                return Err(DatasetError::ClassSpread {
                    line: line_of(i),
                    class_id: r.class_id.clone(),
                    spread_m,
                    tolerance_m: geo_tolerance_m,
                });
            }
        }
        Ok(())
    }

    fn class_centroids(&self) -> BTreeMap<&str, GeoPoint> {
        let mut sums: BTreeMap<&str, (f64, f64, usize)> = BTreeMap::new();
        for r in &self.records {
            let e = sums.entry(r.class_id.as_str()).or_default();
            e.0 += r.lat;
            e.1 += r.lon;
            e.2 += 1;
        }
        sums.into_iter()
            .map(|(k, (lat, lon, n))| {
                (
                    k,
                    GeoPoint {
                        lat: lat / n as f64,
                        lon: lon / n as f64,
                    },
                )
            })
            .collect()
    }

    /// Ground-truth position of a class: the mean of its members' geo-tags.
    pub fn class_geo(&self, class_id: &str) -> Result<GeoPoint, DatasetError> {
        let (mut lat, mut lon, mut n) = (0.0, 0.0, 0usize);
        for r in self.records.iter().filter(|r| r.class_id == class_id) {
            lat += r.lat;
            lon += r.lon;
            n += 1;
        }
        if n == 0 {
            return Err(DatasetError::UnknownClass(class_id.to_string()));
        }
        Ok(GeoPoint {
            lat: lat / n as f64,
            lon: lon / n as f64,
        })
    }

    pub fn class_counts(&self) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.class_id.clone()).or_insert(0) += 1;
        }
        out
    }

    pub fn summary(&self) -> ManifestSummary {
        let counts = self.class_counts();
        let mut by_view = BTreeMap::new();
        for r in &self.records {
            *by_view.entry(r.view).or_insert(0) += 1;
        }
        let mut class_sizes = BTreeMap::new();
        for n in counts.values() {
            *class_sizes.entry(*n).or_insert(0) += 1;
        }
        ManifestSummary {
            records: self.records.len(),
            classes: counts.len(),
            by_view,
            class_sizes,
        }
    }

    pub fn filter_view(&self, view: View) -> SplitManifest {
        SplitManifest {
            split: self.split,
            records: self.records.iter().filter(|r| r.view == view).cloned().collect(),
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header = ManifestHeader {
            format: SAMPLE_MANIFEST_FORMAT.to_string(),
            version: crate::VERSION.to_string(),
            split: self.split,
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), DatasetError> {
        let f = fs::File::create(path).map_err(io_err(path))?;
        self.write_to(io::BufWriter::new(f)).map_err(io_err(path))
    }

    pub fn read_from<R: BufRead>(r: R, geo_tolerance_m: f64) -> Result<Self, DatasetError> {
        let parse = |line: usize, msg: String| DatasetError::Parse { line, msg };
        let mut lines = r.lines().enumerate();
        let header: ManifestHeader = match lines.next() {
            Some((_, l)) => {
                serde_json::from_str(&l.map_err(|e| parse(1, e.to_string()))?).map_err(|e| parse(1, e.to_string()))?
            }
            None => return Err(parse(1, "missing header".into())),
        };
        if header.format != SAMPLE_MANIFEST_FORMAT {
            return Err(parse(1, format!("unexpected format {:?}", header.format)));
        }
        let mut records = Vec::new();
        for (i, l) in lines {
            let l = l.map_err(|e| parse(i + 1, e.to_string()))?;
            records.push(serde_json::from_str(&l).map_err(|e| parse(i + 1, e.to_string()))?);
        }
        let m = SplitManifest {
            split: header.split,
            records,
        };
        m.validate(geo_tolerance_m)?;
        Ok(m)
    }
}

pub fn load_manifest(path: &Path) -> Result<SplitManifest, DatasetError> {
    load_manifest_with_tolerance(path, DEFAULT_GEO_TOLERANCE_M)
}

pub fn load_manifest_with_tolerance(path: &Path, geo_tolerance_m: f64) -> Result<SplitManifest, DatasetError> {
    let f = fs::File::open(path).map_err(io_err(path))?;
    SplitManifest::read_from(io::BufReader::new(f), geo_tolerance_m)
}

/// Loads either a sample manifest or a tile manifest (converted with
/// [`SplitManifest::from_tiles`]), dispatching on the header's `format`.
pub fn load_any_manifest(path: &Path) -> Result<SplitManifest, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let first = text.lines().next().unwrap_or("");
    let header: serde_json::Value = serde_json::from_str(first).map_err(|e| DatasetError::Parse {
        line: 1,
        msg: e.to_string(),
    })?;
    match header.get("format").and_then(|v| v.as_str()) {
        Some(TILE_MANIFEST_FORMAT) => {
            let tiles = TileManifest::read_from(text.as_bytes()).map_err(|e| DatasetError::Parse {
                line: match &e {
                    crate::tilecut::TileError::Manifest { line, .. } => *line,
                    _ => 0,
                },
                msg: e.to_string(),
            })?;
            Ok(SplitManifest::from_tiles(&tiles))
        }
        _ => SplitManifest::read_from(text.as_bytes(), DEFAULT_GEO_TOLERANCE_M),
    }
}

/// Resolves a record's `image_path` against the directory of its manifest.
pub fn resolve_path(manifest_path: &Path, image_path: &str) -> PathBuf {
    let p = Path::new(image_path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest_path.parent().unwrap_or(Path::new("")).join(p)
    }
}

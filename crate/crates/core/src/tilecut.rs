//! Multi-scale sliding-window cutting of a georeferenced mosaic into a
//! geo-tagged tile database.
//!
//! For every configured window size `w` the stride is `round(w * fraction)`
//! and tiles are emitted at every offset `(i * stride, j * stride)` whose
//! window lies entirely inside the mosaic. Partial edge windows are dropped.

use std::fmt;
use std::fs;
use std::io::{self, BufRead, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{pixel_to_geo, GeoError, GeoPoint, GeoTransform};
use crate::raster::{Raster, RasterError};

pub const TILE_MANIFEST_FORMAT: &str = "uavloc-tiles";
pub const DEFAULT_WINDOWS: [usize; 3] = [512, 640, 768];

#[derive(Debug, Error)]
pub enum TileError {
    #[error("invalid stride fraction {0:?}: expected p/q with 0 < p/q <= 1")]
    BadFraction(String),
    #[error("window {window}px with stride fraction {fraction} rounds to a zero stride")]
    ZeroStride { window: usize, fraction: StrideFraction },
    #[error("window size must be >= 1")]
    ZeroWindow,
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error("world file {path}: {source}")]
    WorldFile {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("tile manifest line {line}: {msg}")]
    Manifest { line: usize, msg: String },
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> TileError + '_ {
    move |source| TileError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Stride as a rational fraction of the window size, in `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StrideFraction {
    num: u32,
    den: u32,
}

impl StrideFraction {
    pub const QUARTER: StrideFraction = StrideFraction { num: 1, den: 4 };

    pub fn new(num: u32, den: u32) -> Result<Self, TileError> {
        if num == 0 || den == 0 || num > den {
            return Err(TileError::BadFraction(format!("{num}/{den}")));
        }
        Ok(StrideFraction { num, den })
    }

    /// `round(window * num / den)`, halves rounded up.
    pub fn stride_for(&self, window: usize) -> Result<usize, TileError> {
        if window == 0 {
            return Err(TileError::ZeroWindow);
        }
        let (n, d) = (self.num as u64, self.den as u64);
        let stride = ((2 * window as u64 * n + d) / (2 * d)) as usize;
        if stride == 0 {
            return Err(TileError::ZeroStride {
                window,
                fraction: *self,
            });
        }
        Ok(stride)
    }
}

impl Default for StrideFraction {
    fn default() -> Self {
        StrideFraction::QUARTER
    }
}

impl fmt::Display for StrideFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for StrideFraction {
    type Err = TileError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TileError::BadFraction(s.to_string());
        let (n, d) = match s.split_once('/') {
            Some((n, d)) => (n.trim(), d.trim()),
            None => (s.trim(), "1"),
        };
        let num = n.parse().map_err(|_| bad())?;
        let den = d.parse().map_err(|_| bad())?;
        StrideFraction::new(num, den).map_err(|_| bad())
    }
}

impl Serialize for StrideFraction {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrideFraction {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A georeferenced source raster.
#[derive(Debug, Clone)]
pub struct Mosaic {
    pub raster: Raster,
    pub transform: GeoTransform,
}

impl Mosaic {
    pub fn new(raster: Raster, transform: GeoTransform) -> Result<Self, TileError> {
        transform.validate()?;
        Ok(Mosaic { raster, transform })
    }

    pub fn width(&self) -> usize {
        self.raster.width()
    }

    pub fn height(&self) -> usize {
        self.raster.height()
    }

    /// Sidecar world file for a raster: `foo.png` -> `foo.pgw`.
    pub fn world_file_path(raster_path: &Path) -> PathBuf {
        raster_path.with_extension("pgw")
    }

    /// Loads a PNG mosaic and its `.pgw` world file.
    pub fn load(path: &Path) -> Result<Self, TileError> {
        let raster = Raster::load_png(path)?;
        let wf = Mosaic::world_file_path(path);
        let text = fs::read_to_string(&wf).map_err(|source| TileError::WorldFile {
            path: wf.display().to_string(),
            source,
        })?;
        Mosaic::new(raster, GeoTransform::from_world_file(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), TileError> {
        self.raster.save_png(path)?;
        let wf = Mosaic::world_file_path(path);
        fs::write(&wf, self.transform.to_world_file()).map_err(io_err(&wf))
    }
}

pub fn crop(m: &Mosaic, offset_x: usize, offset_y: usize, window_px: usize) -> Result<Raster, TileError> {
    Ok(m.raster.crop(offset_x, offset_y, window_px)?)
}

/// One cut tile of the satellite database.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileRecord {
    pub tile_id: String,
    pub window_px: usize,
    pub offset_x: usize,
    pub offset_y: usize,
    pub center_lat: f64,
    pub center_lon: f64,
    pub raster_path: String,
}

impl TileRecord {
    pub fn center(&self) -> GeoPoint {
        GeoPoint {
            lat: self.center_lat,
            lon: self.center_lon,
        }
    }
}

pub fn tile_id(window: usize, offset_x: usize, offset_y: usize) -> String {
    format!("s{window}_x{offset_x}_y{offset_y}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CutWarning {
    pub window_px: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TilePlan {
    pub tiles: Vec<TileRecord>,
    pub warnings: Vec<CutWarning>,
}

/// Tile offsets along one axis: `0, stride, 2*stride, ...` while the window fits.
pub fn axis_offsets(dim: usize, window: usize, stride: usize) -> Vec<usize> {
    if window > dim {
        return Vec::new();
    }
    (0..=(dim - window) / stride).map(|i| i * stride).collect()
}

/// Computes the tile layout without touching the filesystem. Records carry
/// `tiles/<tile_id>.png` as their raster path.
pub fn plan_tiles(m: &Mosaic, windows: &[usize], fraction: StrideFraction) -> Result<TilePlan, TileError> {
    let mut windows = windows.to_vec();
    windows.sort_unstable();
    windows.dedup();

    let mut tiles = Vec::new();
    let mut warnings = Vec::new();
    for &w in &windows {
        let stride = fraction.stride_for(w)?;
        if w > m.width() || w > m.height() {
            let message = format!(
                "window {w}px exceeds mosaic {}x{}; no tiles at this scale",
                m.width(),
                m.height()
            );
            log::warn!("{message}");
            warnings.push(CutWarning { window_px: w, message });
            continue;
        }
        let xs = axis_offsets(m.width(), w, stride);
        for oy in axis_offsets(m.height(), w, stride) {
            for &ox in &xs {
                let half = w as f64 / 2.0;
                let center = pixel_to_geo(&m.transform, ox as f64 + half, oy as f64 + half)?;
                let id = tile_id(w, ox, oy);
                tiles.push(TileRecord {
                    raster_path: format!("tiles/{id}.png"),
                    tile_id: id,
                    window_px: w,
                    offset_x: ox,
                    offset_y: oy,
                    center_lat: center.lat,
                    center_lon: center.lon,
                });
            }
        }
    }
    Ok(TilePlan { tiles, warnings })
}

/// Plans the tiles and writes every tile raster under `out_dir`. Raster paths
/// in the returned records are relative to `out_dir`.
pub fn cut_tiles(
    m: &Mosaic,
    windows: &[usize],
    fraction: StrideFraction,
    out_dir: &Path,
) -> Result<TilePlan, TileError> {
    let plan = plan_tiles(m, windows, fraction)?;
    let tile_dir = out_dir.join("tiles");
    fs::create_dir_all(&tile_dir).map_err(io_err(&tile_dir))?;
    plan.tiles.par_iter().try_for_each(|t| {
        let raster = crop(m, t.offset_x, t.offset_y, t.window_px)?;
        raster.save_png(&out_dir.join(&t.raster_path))?;
        Ok::<_, TileError>(())
    })?;
    Ok(plan)
}

/// First line of a tile manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TileManifestHeader {
    pub format: String,
    pub version: String,
    pub mosaic: String,
    pub width: usize,
    pub height: usize,
    pub transform: GeoTransform,
    pub windows: Vec<usize>,
    pub stride_fraction: StrideFraction,
    pub warnings: Vec<CutWarning>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TileManifest {
    pub header: TileManifestHeader,
    pub tiles: Vec<TileRecord>,
}

impl TileManifest {
    pub fn from_plan(
        mosaic_name: &str,
        m: &Mosaic,
        windows: &[usize],
        fraction: StrideFraction,
        plan: TilePlan,
    ) -> Self {
        TileManifest {
            header: TileManifestHeader {
                format: TILE_MANIFEST_FORMAT.to_string(),
                version: crate::VERSION.to_string(),
                mosaic: mosaic_name.to_string(),
                width: m.width(),
                height: m.height(),
                transform: m.transform,
                windows: windows.to_vec(),
                stride_fraction: fraction,
                warnings: plan.warnings,
            },
            tiles: plan.tiles,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> io::Result<()> {
        serde_json::to_writer(&mut w, &self.header)?;
        w.write_all(b"\n")?;
        for t in &self.tiles {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        w.flush()
    }

    pub fn save(&self, path: &Path) -> Result<(), TileError> {
        let f = fs::File::create(path).map_err(io_err(path))?;
        self.write_to(io::BufWriter::new(f)).map_err(io_err(path))
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self, TileError> {
        let mut lines = r.lines().enumerate();
        let bad = |line: usize, msg: String| TileError::Manifest { line, msg };
        let header: TileManifestHeader = match lines.next() {
            Some((_, l)) => {
                serde_json::from_str(&l.map_err(|e| bad(1, e.to_string()))?).map_err(|e| bad(1, e.to_string()))?
            }
            None => return Err(bad(1, "missing header".into())),
        };
        if header.format != TILE_MANIFEST_FORMAT {
            return Err(bad(1, format!("unexpected format {:?}", header.format)));
        }
        let mut tiles = Vec::new();
        for (i, l) in lines {
            let l = l.map_err(|e| bad(i + 1, e.to_string()))?;
            let t: TileRecord = serde_json::from_str(&l).map_err(|e| bad(i + 1, e.to_string()))?;
            tiles.push(t);
        }
        Ok(TileManifest { header, tiles })
    }

    pub fn load(path: &Path) -> Result<Self, TileError> {
        let f = fs::File::open(path).map_err(io_err(path))?;
        TileManifest::read_from(io::BufReader::new(f))
    }
}

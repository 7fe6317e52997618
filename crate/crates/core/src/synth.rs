//! Deterministic synthetic world: a georeferenced RGB mosaic, a straight-ish
//! flight trace of noisy drone crops, and an optional copied block far from
//! the trace that makes one trace tile ambiguous to a global search.

use std::fs;
use std::io;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{DatasetError, SampleRecord, Split, SplitManifest, View};
use crate::geo::{pixel_to_geo, GeoError, GeoTransform};
use crate::raster::{Raster, RasterError};
use crate::tilecut::{tile_id, Mosaic, TileError};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic world: {0}")]
    Config(String),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    Tile(#[from] TileError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
}

/// Copies the `window`-sized block at `src` onto `dst`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DuplicateBlock {
    pub src: (usize, usize),
    pub dst: (usize, usize),
    pub window: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub seed: u64,
    pub size: usize,
    /// Spacing of the value-noise control grid in pixels.
    pub cell_px: usize,
    /// Top-left corner of the mosaic.
    pub origin_lat: f64,
    pub origin_lon: f64,
    pub px_deg: f64,
    /// Query crop size; trace offsets advance by `query_window / 4`.
    pub query_window: usize,
    pub steps: usize,
    /// First query offset.
    pub start: (usize, usize),
    /// Per-pixel uniform noise amplitude added to queries.
    pub query_noise: u8,
    pub duplicate: Option<DuplicateBlock>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 7,
            size: 512,
            cell_px: 32,
            origin_lat: 30.005,
            origin_lon: 120.0,
            px_deg: 1e-5,
            query_window: 128,
            steps: 10,
            start: (32, 64),
            query_noise: 3,
            // "s128_x0_y352" sorts before "s128_x224_y64", so an exact
            // feature tie resolves to the far copy.
            duplicate: Some(DuplicateBlock {
                src: (224, 64),
                dst: (0, 352),
                window: 128,
            }),
        }
    }
}

impl SynthConfig {
    /// Query offsets: one stride east per step, zig-zagging one stride south
    /// on odd steps.
    pub fn trace_offsets(&self) -> Vec<(usize, usize)> {
        let stride = self.query_window / 4;
        (0..self.steps)
            .map(|i| (self.start.0 + stride * i, self.start.1 + stride * (i % 2)))
            .collect()
    }

    fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.size == 0 || self.cell_px == 0 || self.query_window < 4 {
            return bad("size, cell_px must be > 0 and query_window >= 4".into());
        }
        for (x, y) in self.trace_offsets() {
            if x + self.query_window > self.size || y + self.query_window > self.size {
                return bad(format!("trace crop at ({x}, {y}) leaves the {}px mosaic", self.size));
            }
        }
        if let Some(d) = self.duplicate {
            for (x, y) in [d.src, d.dst] {
                if x + d.window > self.size || y + d.window > self.size {
                    return bad(format!("duplicate block at ({x}, {y}) leaves the mosaic"));
                }
            }
        }
        Ok(())
    }
}

pub struct SynthWorld {
    pub mosaic: Mosaic,
    pub trace: SplitManifest,
    pub queries: Vec<Raster>,
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Raster {
    let n = cfg.size / cfg.cell_px + 2;
    let grid: Vec<[f64; 3]> = (0..n * n)
        .map(|_| [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()])
        .collect();
    let mut data = Vec::with_capacity(cfg.size * cfg.size * 3);
    for y in 0..cfg.size {
        let (gy, fy) = (
            y / cfg.cell_px,
            smoothstep((y % cfg.cell_px) as f64 / cfg.cell_px as f64),
        );
        for x in 0..cfg.size {
            let (gx, fx) = (
                x / cfg.cell_px,
                smoothstep((x % cfg.cell_px) as f64 / cfg.cell_px as f64),
            );
            let g = |i: usize, j: usize| grid[i * n + j];
            let (a, b, c, d) = (g(gy, gx), g(gy, gx + 1), g(gy + 1, gx), g(gy + 1, gx + 1));
            for ch in 0..3 {
                let top = a[ch] + (b[ch] - a[ch]) * fx;
                let bottom = c[ch] + (d[ch] - c[ch]) * fx;
                let v = top + (bottom - top) * fy;
                let grain: f64 = rng.random_range(-8.0..8.0);
                data.push((v * 224.0 + 16.0 + grain).round().clamp(0.0, 255.0) as u8);
            }
        }
    }
    Raster::new(cfg.size, cfg.size, 3, data).expect("dimensions match")
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld, SynthError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut raster = value_noise(cfg, &mut rng);
    if let Some(d) = cfg.duplicate {
        let block = raster.crop(d.src.0, d.src.1, d.window)?;
        raster.paste(&block, d.dst.0, d.dst.1);
    }
    let transform = GeoTransform::new(cfg.origin_lon, cfg.origin_lat, cfg.px_deg, -cfg.px_deg)?;
    let mosaic = Mosaic::new(raster, transform)?;

    let mut trace = SplitManifest::new(Split::Query);
    let mut queries = Vec::new();
    let w = cfg.query_window;
    for (i, (ox, oy)) in cfg.trace_offsets().into_iter().enumerate() {
        let mut q = mosaic.raster.crop(ox, oy, w)?;
        let amp = cfg.query_noise as i16;
        if amp > 0 {
            for v in q.data_mut() {
                *v = (*v as i16 + rng.random_range(-amp..=amp)).clamp(0, 255) as u8;
            }
        }
        let half = w as f64 / 2.0;
        let center = pixel_to_geo(&transform, ox as f64 + half, oy as f64 + half)?;
        let id = format!("q{i:03}");
        trace.records.push(SampleRecord {
            image_path: format!("queries/{id}.png"),
            sample_id: id,
            split: Split::Query,
            class_id: tile_id(w, ox, oy),
            view: View::Drone,
            lat: center.lat,
            lon: center.lon,
            altitude_m: None,
            step: Some(i as u64),
        });
        queries.push(q);
    }
    Ok(SynthWorld { mosaic, trace, queries })
}

impl SynthWorld {
    /// Writes `mosaic.png` (+ `.pgw`), `trace.jsonl` and `queries/*.png`.
    pub fn write(&self, dir: &Path) -> Result<(), SynthError> {
        let qdir = dir.join("queries");
        fs::create_dir_all(&qdir).map_err(|source| SynthError::Io {
            path: qdir.display().to_string(),
            source,
        })?;
        self.mosaic.save(&dir.join("mosaic.png"))?;
        for (r, q) in self.trace.records.iter().zip(&self.queries) {
            q.save_png(&dir.join(&r.image_path))?;
        }
        self.trace.save(&dir.join("trace.jsonl"))?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::meters_distance;

    #[test]
    fn generation_is_deterministic() {
        let cfg = SynthConfig {
            size: 256,
            steps: 3,
            duplicate: None,
            ..SynthConfig::default()
        };
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.mosaic.raster, b.mosaic.raster);
        assert_eq!(a.queries, b.queries);
        assert_eq!(a.trace, b.trace);
        let c = generate(&SynthConfig { seed: 8, ..cfg }).unwrap();
        assert_ne!(a.mosaic.raster, c.mosaic.raster);
    }

    #[test]
    fn default_world_layout() {
        let cfg = SynthConfig::default();
        let w = generate(&cfg).unwrap();
        let d = cfg.duplicate.unwrap();
        assert_eq!(
            w.mosaic.raster.crop(d.src.0, d.src.1, d.window).unwrap(),
            w.mosaic.raster.crop(d.dst.0, d.dst.1, d.window).unwrap()
        );
        assert!(tile_id(128, d.dst.0, d.dst.1) < tile_id(128, d.src.0, d.src.1));
        // the copied block sits on the trace and far from it
        let offsets = cfg.trace_offsets();
        assert!(offsets.contains(&d.src));
        let t = &w.mosaic.transform;
        let far = pixel_to_geo(t, d.dst.0 as f64 + 64.0, d.dst.1 as f64 + 64.0).unwrap();
        for r in &w.trace.records {
            assert!(meters_distance(r.geo(), far) > 200.0);
        }
        // consecutive fixes stay well inside an 80 m neighbourhood
        for p in w.trace.records.windows(2) {
            assert!(meters_distance(p[0].geo(), p[1].geo()) < 50.0);
        }
        w.trace.validate(1.0).unwrap();
    }

    #[test]
    fn rejects_out_of_bounds_trace() {
        let cfg = SynthConfig {
            steps: 40,
            ..SynthConfig::default()
        };
        assert!(matches!(generate(&cfg), Err(SynthError::Config(_))));
    }
}

use std::collections::HashMap;
use std::fs;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use uavloc_core::augment::{rotated_crop, RotationCrop};
use uavloc_core::dataset::{load_any_manifest, load_manifest, resolve_path, DatasetError};
use uavloc_core::embed::toy_descriptor;
use uavloc_core::metrics::{evaluate, EvalConfig, QueryTruth, SdmConfig};
use uavloc_core::replay::{
    replay, AnchorSource, Bootstrap, NeighborConfig, ReplayConfig, ReplayError, Strategy, Trace,
};
use uavloc_core::report::{self, Header};
use uavloc_core::retrieval::{rank_global, rank_neighbor, RetrievalError, SearchStrategy};
use uavloc_core::synth::{generate, SynthConfig};
use uavloc_core::tilecut::{cut_tiles, Mosaic, TileManifest};
use uavloc_core::{EmbeddingStore, GeoIndex, Raster, SplitManifest};

use crate::args::*;

pub const DEFAULT_GRID: usize = 8;

/// Failure classes map one-to-one onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(anyhow::Error),
    Runtime(anyhow::Error),
}

impl Failure {
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Data(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn write_sidecar<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut w = create(&sidecar(path))?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_store(path: &Path, normalize: bool) -> anyhow::Result<EmbeddingStore> {
    let mut s = EmbeddingStore::read(path).with_context(|| format!("reading store {}", path.display()))?;
    if normalize {
        s.normalize_all();
    }
    Ok(s)
}

fn load_gallery(manifest: &Path, store: &Path, normalize: bool) -> anyhow::Result<(SplitManifest, GeoIndex)> {
    let m = load_any_manifest(manifest).with_context(|| format!("reading manifest {}", manifest.display()))?;
    let s = load_store(store, normalize)?;
    let index = GeoIndex::build(&m, &s).with_context(|| format!("indexing {}", manifest.display()))?;
    Ok((m, index))
}

pub fn cut(a: &CutArgs) -> Result<()> {
    let mosaic = Mosaic::load(&a.mosaic).with_context(|| format!("loading mosaic {}", a.mosaic.display()))?;
    let plan = cut_tiles(&mosaic, &a.windows, a.stride, &a.out).context("cutting tiles")?;
    for w in &plan.warnings {
        eprintln!("warning: {}", w.message);
    }
    let manifest = TileManifest::from_plan(&a.mosaic.to_string_lossy(), &mosaic, &a.windows, a.stride, plan);
    let path = a.out.join("tiles.jsonl");
    manifest.save(&path).context("writing tile manifest")?;
    info!("{} tiles -> {}", manifest.tiles.len(), path.display());
    Ok(())
}

pub fn embed(a: &EmbedArgs) -> Result<()> {
    let m = load_any_manifest(&a.manifest).with_context(|| format!("reading manifest {}", a.manifest.display()))?;
    let mut store = match &a.external {
        Some(ext) => {
            let src = load_store(ext, false)?;
            let mut out = EmbeddingStore::new(src.dimension());
            for r in &m.records {
                let e = src
                    .get(&r.sample_id)
                    .ok_or_else(|| anyhow!("{} has no vector for {:?}", ext.display(), r.sample_id))?;
                out.push(e.clone()).context("assembling store")?;
            }
            out
        }
        None => {
            let grid = a.grid.unwrap_or(DEFAULT_GRID);
            let vectors = m
                .records
                .par_iter()
                .map(|r| {
                    let path = resolve_path(&a.manifest, &r.image_path);
                    let raster = Raster::load_png(&path)?;
                    Ok(toy_descriptor(r.sample_id.clone(), &raster, grid)?)
                })
                .collect::<anyhow::Result<Vec<_>>>()?;
            let dim = vectors.first().map_or(grid * grid * 3, |e| e.dimension());
            EmbeddingStore::from_entries(dim, vectors).context("assembling store")?
        }
    };
    if a.normalize {
        store.normalize_all();
    }
    store.write(&a.out).context("writing store")?;
    write_sidecar(
        &a.out,
        &json!({
            "header": Header::new("uavloc-embeddings", a),
            "count": store.len(),
            "dimension": store.dimension(),
        }),
    )?;
    info!("{} embeddings -> {}", store.len(), a.out.display());
    Ok(())
}

pub fn index(a: &IndexArgs) -> Result<()> {
    let (m, index) = load_gallery(&a.manifest, &a.store, false)?;
    let summary = m.summary();
    let body = json!({
        "entries": index.len(),
        "dimension": index.dimension(),
        "summary": summary,
    });
    let mut w: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(create(p)?),
        None => Box::new(io::stdout().lock()),
    };
    let write = |w: &mut dyn Write| -> io::Result<()> {
        serde_json::to_writer(&mut *w, &Header::new("uavloc-index", a))?;
        w.write_all(b"\n")?;
        serde_json::to_writer(&mut *w, &body)?;
        w.write_all(b"\n")?;
        w.flush()
    };
    write(&mut *w).context("writing index summary")?;
    Ok(())
}

pub fn search(a: &SearchArgs) -> Result<()> {
    let (_, index) = load_gallery(&a.gallery_manifest, &a.gallery_store, a.normalize)?;
    let queries = load_store(&a.queries, a.normalize)?;
    let lists = queries
        .entries()
        .par_iter()
        .map(|q| match (a.center, a.radius_m) {
            (Some(c), Some(r)) => rank_neighbor(&index, q, c, r, a.k),
            _ => rank_global(&index, q, a.k),
        })
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| match e {
            RetrievalError::EmptyDomain { .. } => Failure::Runtime(e.into()),
            e => Failure::Data(e.into()),
        })?;
    let strategy = match (a.center, a.radius_m) {
        (Some(center), Some(radius_m)) => SearchStrategy::Neighbor { center, radius_m },
        _ => SearchStrategy::Global,
    };
    let mut config = serde_json::to_value(a).context("serializing config")?;
    config["strategy"] = serde_json::to_value(strategy).context("serializing config")?;
    let w = create(&a.out)?;
    report::write_ranked(w, &config, &lists).context("writing ranked file")?;
    Ok(())
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let f = fs::File::open(&a.ranked).with_context(|| format!("opening {}", a.ranked.display()))?;
    let (_, lists) =
        report::read_ranked(BufReader::new(f)).with_context(|| format!("reading {}", a.ranked.display()))?;
    let queries = load_manifest(&a.queries).with_context(|| format!("reading {}", a.queries.display()))?;
    let gallery =
        load_any_manifest(&a.gallery_manifest).with_context(|| format!("reading {}", a.gallery_manifest.display()))?;
    // a query's geo truth is the centroid of its class
    let truths = queries
        .records
        .iter()
        .map(|r| {
            let geo = queries.class_geo(&r.class_id)?;
            Ok((
                r.sample_id.clone(),
                QueryTruth {
                    class_id: r.class_id.clone(),
                    geo,
                },
            ))
        })
        .collect::<std::result::Result<HashMap<_, _>, DatasetError>>()
        .context("collecting ground truth")?;
    let counts: HashMap<String, usize> = gallery.class_counts().into_iter().collect();
    let cfg = EvalConfig {
        sdm: SdmConfig {
            k_values: a.k_values.clone(),
            s: a.s,
        },
        aggregation: a.aggregation.into(),
    };
    let rep = evaluate(&lists, &truths, &counts, gallery.records.len(), &cfg).context("evaluating")?;
    report::write_eval(create(&a.out)?, a, &rep).context("writing evaluation report")?;
    Ok(())
}

pub fn augment(a: &AugmentArgs) -> Result<()> {
    let raster = Raster::load_png(&a.input).with_context(|| format!("loading {}", a.input.display()))?;
    let (theta, seed) = match (a.theta_deg, a.seed) {
        (Some(deg), _) => (deg.to_radians(), None),
        (None, Some(seed)) => (RotationCrop::seeded_theta(seed), Some(seed)),
        (None, None) => {
            let seed: u64 = rand::random();
            println!("seed: {seed}");
            (RotationCrop::seeded_theta(seed), Some(seed))
        }
    };
    let out_size = a
        .out_size
        .unwrap_or_else(|| RotationCrop::default_out_size(raster.width(), raster.height()));
    let cfg = RotationCrop::new(theta, out_size, a.sampling.into()).map_err(|e| Failure::Usage(e.to_string()))?;
    let out = rotated_crop(&raster, &cfg).context("rotating")?;
    out.save_png(&a.out).context("writing output")?;
    write_sidecar(
        &a.out,
        &json!({
            "header": Header::new("uavloc-augment", a),
            "seed": seed,
            "crop": cfg,
        }),
    )?;
    Ok(())
}

pub fn replay_cmd(a: &ReplayArgs) -> Result<()> {
    let trace_m = load_manifest(&a.trace).with_context(|| format!("reading trace {}", a.trace.display()))?;
    let trace = Trace::from_manifest(&trace_m).context("building trace")?;
    let (_, index) = load_gallery(&a.gallery_manifest, &a.gallery_store, a.normalize)?;
    let queries = load_store(&a.queries, a.normalize)?;
    let strategy = match a.radius_m {
        None => Strategy::Global,
        Some(radius_m) => Strategy::Neighbor(NeighborConfig {
            radius_m,
            bootstrap: match a.anchor {
                Some(anchor) => Bootstrap::GivenAnchor { anchor },
                None => Bootstrap::Global,
            },
            on_empty: a.on_empty.into(),
            anchor: if a.oracle_anchor {
                AnchorSource::OracleTruth
            } else {
                AnchorSource::Predicted
            },
            reglobal_above_distance: a.reglobal_above,
        }),
    };
    let cfg = ReplayConfig {
        strategy,
        k: a.k,
        sdm: SdmConfig {
            k_values: a.k_values.clone(),
            s: a.s,
        },
    };
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let rep = replay(&trace, &queries, &index, &cfg).map_err(|e| match e {
        ReplayError::EmptyDomain { .. } => Failure::Runtime(e.into()),
        e => Failure::Data(e.into()),
    })?;
    report::write_replay(create(&a.out)?, a, &rep).context("writing replay report")?;
    if let Some(p) = &a.trajectory {
        report::write_trajectory(create(p)?, &rep).context("writing trajectory")?;
    }
    let agg = &rep.aggregates;
    info!(
        "{} steps, mean error {:.2} m, max {:.2} m, {} fallbacks",
        agg.steps, agg.mean_error_m, agg.max_error_m, agg.fallback_steps
    );
    Ok(())
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let base = SynthConfig::default();
    let cfg = SynthConfig {
        seed: a.seed,
        size: a.size,
        steps: a.steps,
        duplicate: if a.no_duplicate { None } else { base.duplicate },
        ..base
    };
    let world = generate(&cfg).map_err(|e| Failure::Usage(e.to_string()))?;
    world.write(&a.out).context("writing world")?;
    write_sidecar(
        &a.out.join("synth"),
        &json!({"header": Header::new("uavloc-synth", a), "world": cfg}),
    )?;
    Ok(())
}

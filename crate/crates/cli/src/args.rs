use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use uavloc_core::augment::Sampling;
use uavloc_core::metrics::{Aggregation, DEFAULT_SDM_SCALE};
use uavloc_core::replay::OnEmpty;
use uavloc_core::{GeoPoint, StrideFraction};

#[derive(Debug, Parser)]
#[command(
    name = "uavloc",
    version,
    about = "Retrieval-based UAV localization against a tiled satellite mosaic"
)]
pub struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cut a georeferenced mosaic into multi-scale overlapping tiles.
    Cut(CutArgs),
    /// Compute (or import) embeddings for every sample of a manifest.
    Embed(EmbedArgs),
    /// Join a manifest with its embeddings and print an index summary.
    Index(IndexArgs),
    /// Rank the gallery for every query embedding.
    Search(SearchArgs),
    /// Score a ranked file against ground truth.
    Eval(EvalArgs),
    /// Rotate-and-crop augmentation of a single image.
    Augment(AugmentArgs),
    /// Replay a flight trace with global or neighbourhood search.
    Replay(ReplayArgs),
    /// Generate the bundled synthetic world.
    Synth(SynthArgs),
}

pub fn parse_geo(s: &str) -> Result<GeoPoint, String> {
    let (lat, lon) = s
        .split_once(',')
        .ok_or_else(|| format!("expected LAT,LON, got {s:?}"))?;
    let lat: f64 = lat.trim().parse().map_err(|e| format!("latitude: {e}"))?;
    let lon: f64 = lon.trim().parse().map_err(|e| format!("longitude: {e}"))?;
    GeoPoint::new(lat, lon).map_err(|e| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 => Ok(v),
        Ok(v) => Err(format!("must be > 0, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingArg {
    Nearest,
    Bilinear,
}

impl From<SamplingArg> for Sampling {
    fn from(s: SamplingArg) -> Self {
        match s {
            SamplingArg::Nearest => Sampling::Nearest,
            SamplingArg::Bilinear => Sampling::Bilinear,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregationArg {
    PerQuery,
    PerClass,
}

impl From<AggregationArg> for Aggregation {
    fn from(a: AggregationArg) -> Self {
        match a {
            AggregationArg::PerQuery => Aggregation::PerQuery,
            AggregationArg::PerClass => Aggregation::PerClass,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum OnEmptyArg {
    FallbackGlobal,
    Fail,
}

impl From<OnEmptyArg> for OnEmpty {
    fn from(o: OnEmptyArg) -> Self {
        match o {
            OnEmptyArg::FallbackGlobal => OnEmpty::FallbackGlobal,
            OnEmptyArg::Fail => OnEmpty::Fail,
        }
    }
}

#[derive(Debug, Args, Serialize)]
pub struct CutArgs {
    /// Mosaic PNG; its georeference is read from the `.pgw` world file beside it.
    pub mosaic: PathBuf,
    /// Tile window sizes in pixels.
    #[arg(long, value_delimiter = ',', default_value = "512,640,768")]
    pub windows: Vec<usize>,
    /// Stride as a fraction of the window, e.g. 1/4.
    #[arg(long, default_value = "1/4")]
    pub stride: StrideFraction,
    /// Output directory; receives tiles.jsonl and tiles/*.png.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("source").args(["grid", "external"])))]
pub struct EmbedArgs {
    /// Sample or tile manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Grid size of the colour-mean descriptor.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Take vectors from an existing store instead of computing them.
    #[arg(long)]
    pub external: Option<PathBuf>,
    /// L2-normalize every vector before writing.
    #[arg(long)]
    pub normalize: bool,
    /// Output store (EMB1); a `<out>.json` header is written beside it.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct IndexArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub store: PathBuf,
    /// Write the summary here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("strategy").args(["global", "radius_m"]).required(true)))]
pub struct SearchArgs {
    #[arg(long)]
    pub gallery_manifest: PathBuf,
    #[arg(long)]
    pub gallery_store: PathBuf,
    /// Query embedding store.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Search the whole gallery.
    #[arg(long)]
    pub global: bool,
    /// Restrict the search to tiles strictly closer than this many meters to --center.
    #[arg(long, requires = "center", value_parser = parse_positive)]
    pub radius_m: Option<f64>,
    /// Neighbourhood centre as LAT,LON.
    #[arg(long, requires = "radius_m", value_parser = parse_geo)]
    pub center: Option<GeoPoint>,
    /// L2-normalize query and gallery vectors on load.
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ranked: PathBuf,
    /// Manifest holding the query ground truth.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub gallery_manifest: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    pub k_values: Vec<usize>,
    /// SDM distance scale.
    #[arg(long, default_value_t = DEFAULT_SDM_SCALE, value_parser = parse_positive)]
    pub s: f64,
    #[arg(long, value_enum, default_value = "per-query")]
    pub aggregation: AggregationArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AugmentArgs {
    pub input: PathBuf,
    /// Rotation in degrees.
    #[arg(long, conflicts_with = "seed")]
    pub theta_deg: Option<f64>,
    /// Seed for a uniformly drawn rotation; one is generated and printed when
    /// neither this nor --theta-deg is given.
    #[arg(long, alias = "random-seed")]
    pub seed: Option<u64>,
    /// Output side length; defaults to the inscribed square's side.
    #[arg(long)]
    pub out_size: Option<usize>,
    #[arg(long, value_enum, default_value = "bilinear")]
    pub sampling: SamplingArg,
    /// Output PNG; a `<out>.json` sidecar records the parameters.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
#[command(group(ArgGroup::new("strategy").args(["global", "radius_m"]).required(true)))]
pub struct ReplayArgs {
    /// Query manifest with a `step` on every record.
    #[arg(long)]
    pub trace: PathBuf,
    /// Query embedding store.
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long)]
    pub gallery_manifest: PathBuf,
    #[arg(long)]
    pub gallery_store: PathBuf,
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5,10")]
    pub k_values: Vec<usize>,
    #[arg(long, default_value_t = DEFAULT_SDM_SCALE, value_parser = parse_positive)]
    pub s: f64,
    /// Search the whole gallery at every step.
    #[arg(long)]
    pub global: bool,
    /// Neighbourhood radius around the previous fix.
    #[arg(long, value_parser = parse_positive)]
    pub radius_m: Option<f64>,
    /// Centre of the first search instead of a global bootstrap (LAT,LON).
    #[arg(long, requires = "radius_m", value_parser = parse_geo)]
    pub anchor: Option<GeoPoint>,
    #[arg(long, value_enum, default_value = "fallback-global", requires = "radius_m")]
    pub on_empty: OnEmptyArg,
    /// Diagnostics only: centre each search on the previous step's true position.
    #[arg(long, requires = "radius_m")]
    pub oracle_anchor: bool,
    /// Redo a step globally when its best neighbour match is farther than this
    /// in feature space.
    #[arg(long, requires = "radius_m")]
    pub reglobal_above: Option<f64>,
    #[arg(long)]
    pub normalize: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Optional GeoJSON trajectory output.
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    /// Mosaic side length in pixels.
    #[arg(long, default_value_t = 512)]
    pub size: usize,
    #[arg(long, default_value_t = 10)]
    pub steps: usize,
    /// Leave out the far copy of a trace tile.
    #[arg(long)]
    pub no_duplicate: bool,
}

//! Cross-view UAV geo-localization toolkit: multi-scale tile cutting of a
//! georeferenced satellite mosaic, embedding stores, exhaustive global and
//! neighbourhood-restricted retrieval, ranking metrics and flight-trace replay.

pub mod augment;
pub mod dataset;
pub mod embed;
pub mod geo;
pub mod metrics;
pub mod raster;
pub mod replay;
pub mod report;
pub mod retrieval;
pub mod synth;
pub mod tilecut;

pub use dataset::{SampleRecord, Split, SplitManifest, View};
pub use embed::{Embedding, EmbeddingStore};
pub use geo::{GeoPoint, GeoTransform};
pub use metrics::{EvalConfig, EvalReport, SdmConfig};
pub use raster::Raster;
pub use replay::{ReplayConfig, ReplayReport, Strategy};
pub use retrieval::{GeoIndex, RankedEntry, RankedList, SearchStrategy};
pub use tilecut::{Mosaic, StrideFraction, TileManifest, TileRecord};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

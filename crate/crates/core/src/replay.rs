//! Flight-trace replay: localize an ordered sequence of query images against
//! the tile gallery and measure the error of each fix.
//!
//! Under the neighbour strategy each step searches only the gallery tiles
//! within `radius_m` of the previous step's predicted position; the first step
//! is bootstrapped by a global search or a supplied anchor. The prediction is
//! always the centre of the top-1 tile.

use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::SplitManifest;
use crate::embed::EmbeddingStore;
use crate::geo::{meters_distance, GeoPoint};
use crate::metrics::{recall_at_k, sdm_k_padded, MetricsError, SdmConfig};
use crate::retrieval::{domain_size, rank_global, rank_neighbor, unbounded, GeoIndex, RankedList, RetrievalError};

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("trace is empty")]
    EmptyTrace,
    #[error("trace record {0:?} has no step number")]
    MissingStep(String),
    #[error("step number {0} appears more than once in the trace")]
    DuplicateStep(u64),
    #[error("no embedding for query {0:?}")]
    MissingEmbedding(String),
    #[error("step {step}: empty search domain ({radius_m} m around {}, {})", center.lat, center.lon)]
    EmptyDomain {
        step: usize,
        center: GeoPoint,
        radius_m: f64,
    },
    #[error("invalid replay configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Retrieval(#[from] RetrievalError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bootstrap {
    #[default]
    Global,
    GivenAnchor {
        anchor: GeoPoint,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OnEmpty {
    #[default]
    FallbackGlobal,
    Fail,
}

/// Where the next search centre comes from. `OracleTruth` uses the previous
/// step's ground truth and exists for diagnostics only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnchorSource {
    #[default]
    Predicted,
    OracleTruth,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NeighborConfig {
    #[serde(with = "unbounded")]
    pub radius_m: f64,
    pub bootstrap: Bootstrap,
    pub on_empty: OnEmpty,
    pub anchor: AnchorSource,
    /// Re-run a step globally when its best neighbour match is farther than
    /// this in feature space. Disabled when `None`.
    pub reglobal_above_distance: Option<f64>,
}

impl NeighborConfig {
    pub fn with_radius(radius_m: f64) -> Self {
        NeighborConfig {
            radius_m,
            bootstrap: Bootstrap::Global,
            on_empty: OnEmpty::FallbackGlobal,
            anchor: AnchorSource::Predicted,
            reglobal_above_distance: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Strategy {
    Global,
    Neighbor(NeighborConfig),
}

impl Strategy {
    pub fn validate(&self) -> Result<(), ReplayError> {
        if let Strategy::Neighbor(n) = self {
            if n.radius_m.is_nan() || n.radius_m <= 0.0 {
                return Err(ReplayError::Config(format!("radius_m must be > 0, got {}", n.radius_m)));
            }
            if let Bootstrap::GivenAnchor { anchor } = n.bootstrap {
                if !anchor.is_valid() {
                    return Err(ReplayError::Config("bootstrap anchor is not a valid geo point".into()));
                }
            }
            if let Some(t) = n.reglobal_above_distance {
                if t.is_nan() || t < 0.0 {
                    return Err(ReplayError::Config(format!("reglobal threshold must be >= 0, got {t}")));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayConfig {
    pub strategy: Strategy,
    pub k: usize,
    pub sdm: SdmConfig,
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<(), ReplayError> {
        self.strategy.validate()?;
        self.sdm.validate()?;
        if self.k == 0 {
            return Err(ReplayError::Config("k must be >= 1".into()));
        }
        if self.sdm.max_k() > self.k {
            return Err(ReplayError::Config(format!(
                "k = {} is smaller than the largest metric cut-off {}",
                self.k,
                self.sdm.max_k()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub step: u64,
    pub query_id: String,
    pub class_id: String,
    pub truth: GeoPoint,
}

/// Query images in flight order.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub steps: Vec<TraceStep>,
}

impl Trace {
    /// Builds a trace from a manifest whose records all carry `step`, sorted
    /// by that column.
    pub fn from_manifest(m: &SplitManifest) -> Result<Self, ReplayError> {
        let mut steps = m
            .records
            .iter()
            .map(|r| {
                Ok(TraceStep {
                    step: r.step.ok_or_else(|| ReplayError::MissingStep(r.sample_id.clone()))?,
                    query_id: r.sample_id.clone(),
                    class_id: r.class_id.clone(),
                    truth: r.geo(),
                })
            })
            .collect::<Result<Vec<_>, ReplayError>>()?;
        steps.sort_by_key(|s| s.step);
        let mut seen = HashSet::new();
        for s in &steps {
            if !seen.insert(s.step) {
                return Err(ReplayError::DuplicateStep(s.step));
            }
        }
        Ok(Trace { steps })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    /// 0-based position in the replay.
    pub index: usize,
    /// Step number from the trace file.
    pub step: u64,
    pub query_id: String,
    pub predicted: GeoPoint,
    pub truth: GeoPoint,
    pub error_m: f64,
    /// Search centre, when the step used a neighbourhood search.
    pub anchor: Option<GeoPoint>,
    pub domain_size: usize,
    pub fallback_used: bool,
    pub reglobal_used: bool,
    pub recall: BTreeMap<usize, u8>,
    pub sdm: BTreeMap<usize, f64>,
    pub top_k: RankedList,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayAggregates {
    pub steps: usize,
    pub mean_error_m: f64,
    pub median_error_m: f64,
    pub max_error_m: f64,
    pub sdm: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub fallback_steps: usize,
    pub reglobal_steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayReport {
    pub config: ReplayConfig,
    /// True when anchors came from ground truth (diagnostic runs).
    pub oracle_anchor: bool,
    pub steps: Vec<StepResult>,
    pub aggregates: ReplayAggregates,
}

impl ReplayReport {
    pub fn recompute_aggregates(&self) -> ReplayAggregates {
        aggregate(&self.steps, &self.config.sdm)
    }
}

fn aggregate(steps: &[StepResult], sdm: &SdmConfig) -> ReplayAggregates {
    let n = steps.len();
    let errors: Vec<f64> = steps.iter().map(|s| s.error_m).collect();
    let mut sorted = errors.clone();
    sorted.sort_by(f64::total_cmp);
    let median = match n {
        0 => 0.0,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    };
    let mean_of = |f: &dyn Fn(&StepResult) -> f64| {
        if n == 0 {
            0.0
        } else {
            steps.iter().map(f).sum::<f64>() / n as f64
        }
    };
    ReplayAggregates {
        steps: n,
        mean_error_m: mean_of(&|s| s.error_m),
        median_error_m: median,
        max_error_m: sorted.last().copied().unwrap_or(0.0),
        sdm: sdm.k_values.iter().map(|&k| (k, mean_of(&|s| s.sdm[&k]))).collect(),
        recall: sdm
            .k_values
            .iter()
            .map(|&k| (k, mean_of(&|s| s.recall[&k] as f64)))
            .collect(),
        fallback_steps: steps.iter().filter(|s| s.fallback_used).count(),
        reglobal_steps: steps.iter().filter(|s| s.reglobal_used).count(),
    }
}

/// Replays `trace` step by step. Deterministic for fixed inputs.
pub fn replay(
    trace: &Trace,
    queries: &EmbeddingStore,
    index: &GeoIndex,
    cfg: &ReplayConfig,
) -> Result<ReplayReport, ReplayError> {
    cfg.validate()?;
    if trace.steps.is_empty() {
        return Err(ReplayError::EmptyTrace);
    }
    let mut results: Vec<StepResult> = Vec::with_capacity(trace.steps.len());
    for (i, ts) in trace.steps.iter().enumerate() {
        let query = queries
            .get(&ts.query_id)
            .ok_or_else(|| ReplayError::MissingEmbedding(ts.query_id.clone()))?;

        let mut anchor = None;
        let mut fallback_used = false;
        let mut reglobal_used = false;
        let (top_k, domain) = match &cfg.strategy {
            Strategy::Global => (rank_global(index, query, cfg.k)?, index.len()),
            Strategy::Neighbor(n) => {
                let center = match (i, n.bootstrap, n.anchor) {
                    (0, Bootstrap::Global, _) => None,
                    (0, Bootstrap::GivenAnchor { anchor }, _) => Some(anchor),
                    (_, _, AnchorSource::Predicted) => Some(results[i - 1].predicted),
                    (_, _, AnchorSource::OracleTruth) => Some(trace.steps[i - 1].truth),
                };
                match center {
                    None => (rank_global(index, query, cfg.k)?, index.len()),
                    Some(c) => {
                        anchor = Some(c);
                        match rank_neighbor(index, query, c, n.radius_m, cfg.k) {
                            Ok(list) => {
                                let too_far = matches!(
                                    (n.reglobal_above_distance, list.top1()),
                                    (Some(t), Some(top)) if top.distance > t
                                );
                                if too_far {
                                    reglobal_used = true;
                                    (rank_global(index, query, cfg.k)?, index.len())
                                } else {
                                    (list, domain_size(index, c, n.radius_m))
                                }
                            }
                            Err(RetrievalError::EmptyDomain { center, radius_m }) => match n.on_empty {
                                OnEmpty::Fail => {
                                    return Err(ReplayError::EmptyDomain {
                                        step: i,
                                        center,
                                        radius_m,
                                    })
                                }
                                OnEmpty::FallbackGlobal => {
                                    fallback_used = true;
                                    (rank_global(index, query, cfg.k)?, index.len())
                                }
                            },
                            Err(e) => return Err(e.into()),
                        }
                    }
                }
            }
        };

        let predicted = top_k
            .top1()
            .expect("rankings over a non-empty domain are non-empty")
            .geo;
        let mut recall = BTreeMap::new();
        let mut sdm = BTreeMap::new();
        for &k in &cfg.sdm.k_values {
            recall.insert(k, recall_at_k(&top_k, &ts.class_id, k)?);
            sdm.insert(k, sdm_k_padded(&top_k, ts.truth, k, cfg.sdm.s)?);
        }
        results.push(StepResult {
            index: i,
            step: ts.step,
            query_id: ts.query_id.clone(),
            predicted,
            truth: ts.truth,
            error_m: meters_distance(predicted, ts.truth),
            anchor,
            domain_size: domain,
            fallback_used,
            reglobal_used,
            recall,
            sdm,
            top_k,
        });
    }
    let aggregates = aggregate(&results, &cfg.sdm);
    Ok(ReplayReport {
        config: cfg.clone(),
        oracle_anchor: matches!(
            cfg.strategy,
            Strategy::Neighbor(NeighborConfig {
                anchor: AnchorSource::OracleTruth,
                ..
            })
        ),
        steps: results,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embed::Embedding;
    use crate::geo::EARTH_RADIUS_M;
    use crate::retrieval::IndexEntry;

    const ORIGIN: GeoPoint = GeoPoint { lat: 30.0, lon: 120.0 };

    fn east(m: f64) -> GeoPoint {
        let dlon = (m / (EARTH_RADIUS_M * ORIGIN.lat.to_radians().cos())).to_degrees();
        GeoPoint {
            lat: ORIGIN.lat,
            lon: ORIGIN.lon + dlon,
        }
    }

    fn one_hot(i: usize, d: usize) -> Vec<f32> {
        let mut v = vec![0.0; d];
        v[i] = 1.0;
        v
    }

    /// Tiles every 20 m along a parallel, each with a distinct one-hot vector;
    /// one query per tile copying its vector.
    fn injective_world(n: usize) -> (GeoIndex, EmbeddingStore, Trace) {
        let entries = (0..n)
            .map(|i| IndexEntry {
                sample_id: format!("t{i:02}"),
                vector: one_hot(i, n),
                geo: east(20.0 * i as f64),
                class_id: format!("t{i:02}"),
            })
            .collect();
        let index = GeoIndex::from_entries(n, entries).unwrap();
        let mut store = EmbeddingStore::new(n);
        let mut steps = Vec::new();
        for i in 0..n {
            store
                .push(Embedding::new(format!("q{i:02}"), one_hot(i, n)).unwrap())
                .unwrap();
            steps.push(TraceStep {
                step: i as u64,
                query_id: format!("q{i:02}"),
                class_id: format!("t{i:02}"),
                truth: east(20.0 * i as f64),
            });
        }
        (index, store, Trace { steps })
    }

    fn cfg(strategy: Strategy) -> ReplayConfig {
        ReplayConfig {
            strategy,
            k: 3,
            sdm: SdmConfig {
                k_values: vec![1, 3],
                s: 5e3,
            },
        }
    }

    #[test]
    fn injective_world_has_zero_error() {
        let (index, store, trace) = injective_world(10);
        for strategy in [Strategy::Global, Strategy::Neighbor(NeighborConfig::with_radius(50.0))] {
            let rep = replay(&trace, &store, &index, &cfg(strategy)).unwrap();
            assert!(rep.steps.iter().all(|s| s.error_m == 0.0));
            assert_eq!(rep.aggregates.max_error_m, 0.0);
            assert_eq!(rep.aggregates.recall[&1], 1.0);
            assert_eq!(rep.recompute_aggregates(), rep.aggregates);
        }
    }

    #[test]
    fn unbounded_neighbor_equals_global_step_for_step() {
        let (index, store, trace) = injective_world(8);
        let g = replay(&trace, &store, &index, &cfg(Strategy::Global)).unwrap();
        let n = replay(
            &trace,
            &store,
            &index,
            &cfg(Strategy::Neighbor(NeighborConfig::with_radius(f64::INFINITY))),
        )
        .unwrap();
        for (a, b) in g.steps.iter().zip(&n.steps) {
            assert_eq!(a.top_k.entries, b.top_k.entries);
            assert_eq!(a.predicted, b.predicted);
            assert_eq!(a.domain_size, b.domain_size);
        }
    }

    #[test]
    fn empty_domain_fallback_and_fail() {
        let (index, store, trace) = injective_world(5);
        let far = GeoPoint { lat: 31.0, lon: 121.0 };
        let mut nc = NeighborConfig::with_radius(10.0);
        nc.bootstrap = Bootstrap::GivenAnchor { anchor: far };
        let rep = replay(&trace, &store, &index, &cfg(Strategy::Neighbor(nc))).unwrap();
        assert!(rep.steps[0].fallback_used);
        let g = replay(&trace, &store, &index, &cfg(Strategy::Global)).unwrap();
        assert_eq!(rep.steps[0].top_k.entries, g.steps[0].top_k.entries);
        assert_eq!(rep.steps[0].domain_size, index.len());

        nc.on_empty = OnEmpty::Fail;
        match replay(&trace, &store, &index, &cfg(Strategy::Neighbor(nc))) {
            Err(ReplayError::EmptyDomain { step: 0, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_embedding_names_query() {
        let (index, _, trace) = injective_world(3);
        let store = EmbeddingStore::new(3);
        match replay(&trace, &store, &index, &cfg(Strategy::Global)) {
            Err(ReplayError::MissingEmbedding(q)) => assert_eq!(q, "q00"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let (index, store, trace) = injective_world(3);
        let bad = [
            cfg(Strategy::Neighbor(NeighborConfig::with_radius(0.0))),
            ReplayConfig {
                k: 1,
                ..cfg(Strategy::Global)
            },
            ReplayConfig {
                k: 0,
                ..cfg(Strategy::Global)
            },
        ];
        for c in bad {
            assert!(matches!(
                replay(&trace, &store, &index, &c),
                Err(ReplayError::Config(_))
            ));
        }
        assert!(matches!(
            replay(&Trace { steps: vec![] }, &store, &index, &cfg(Strategy::Global)),
            Err(ReplayError::EmptyTrace)
        ));
    }

    #[test]
    fn duplicate_far_tile_only_fools_global_search() {
        let (index, mut store, trace) = injective_world(10);
        let mut entries = index.entries().to_vec();
        // "a_far" sorts before "t05" and carries the same features, 5 km away
        entries.push(IndexEntry {
            sample_id: "a_far".into(),
            vector: one_hot(5, 10),
            geo: east(5000.0),
            class_id: "far".into(),
        });
        let index = GeoIndex::from_entries(10, entries).unwrap();
        store.normalize_all();
        let g = replay(&trace, &store, &index, &cfg(Strategy::Global)).unwrap();
        assert!(g.aggregates.max_error_m > 4000.0);
        let radius = 50.0;
        let n = replay(
            &trace,
            &store,
            &index,
            &cfg(Strategy::Neighbor(NeighborConfig::with_radius(radius))),
        )
        .unwrap();
        assert!(n.aggregates.max_error_m <= radius);
        for s in n.steps.iter().filter(|s| !s.fallback_used) {
            if let Some(a) = s.anchor {
                assert!(meters_distance(s.predicted, a) < radius);
            }
        }
    }

    #[test]
    fn reglobal_trigger_and_oracle_anchor() {
        let (index, store, trace) = injective_world(6);
        let mut nc = NeighborConfig::with_radius(1000.0);
        nc.reglobal_above_distance = Some(-0.0);
        nc.anchor = AnchorSource::OracleTruth;
        let rep = replay(&trace, &store, &index, &cfg(Strategy::Neighbor(nc))).unwrap();
        assert!(rep.oracle_anchor);
        assert_eq!(rep.aggregates.reglobal_steps, 0);
        nc.reglobal_above_distance = Some(-1.0);
        assert!(replay(&trace, &store, &index, &cfg(Strategy::Neighbor(nc))).is_err());
    }

    #[test]
    fn trace_from_manifest_orders_by_step() {
        use crate::dataset::{SampleRecord, Split, View};
        let mut m = SplitManifest::new(Split::Query);
        for (id, step) in [("b", 2), ("a", 1), ("c", 3)] {
            m.records.push(SampleRecord {
                sample_id: id.into(),
                split: Split::Query,
                class_id: id.into(),
                view: View::Drone,
                lat: 30.0,
                lon: 120.0,
                altitude_m: Some(80.0),
                image_path: String::new(),
                step: Some(step),
            });
        }
        let t = Trace::from_manifest(&m).unwrap();
        let ids: Vec<&str> = t.steps.iter().map(|s| s.query_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        m.records[0].step = Some(1);
        assert!(matches!(Trace::from_manifest(&m), Err(ReplayError::DuplicateStep(1))));
        m.records[0].step = None;
        assert!(matches!(Trace::from_manifest(&m), Err(ReplayError::MissingStep(_))));
    }
}

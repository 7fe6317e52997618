//! Retrieval evaluation: the class indicator, Recall@K, Recall@Top1%, AP/mAP
//! and the spatial distance metric SDM@K.
//!
//! SDM@K for a single query scores its top-K candidates by how far their
//! geo-tags lie from the query's true position:
//!
//! ```text
//!            sum_{i=1..K} (K - i + 1) * exp(-s * d_i)
//! SDM@K  =  ------------------------------------------
//!                  sum_{i=1..K} (K - i + 1)
//! ```
//!
//! where `d_i` is the raw degree distance ([`degree_distance`]) between the
//! truth and the rank-`i` candidate and `s` is a scale factor (default 5e3).

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{degree_distance, GeoPoint};
use crate::retrieval::RankedList;

pub const DEFAULT_SDM_SCALE: f64 = 5.0e3;
pub const DEFAULT_K_VALUES: [usize; 4] = [1, 3, 5, 10];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("k must be >= 1")]
    ZeroK,
    #[error("scale factor s must be finite and > 0, got {0}")]
    BadScale(f64),
    #[error("ranked list for {0:?} is empty")]
    EmptyRanking(String),
    #[error("ranked list for {query_id:?} has {len} entries, SDM@{k} needs {k}")]
    TooFewEntries { query_id: String, len: usize, k: usize },
    #[error("no relevant gallery item for query {0:?}; average precision is undefined")]
    NoRelevant(String),
    #[error("gallery size must be >= 1")]
    EmptyGallery,
    #[error("no ground truth for query {0:?}")]
    MissingTruth(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdmConfig {
    pub k_values: Vec<usize>,
    pub s: f64,
}

impl Default for SdmConfig {
    fn default() -> Self {
        SdmConfig {
            k_values: DEFAULT_K_VALUES.to_vec(),
            s: DEFAULT_SDM_SCALE,
        }
    }
}

impl SdmConfig {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if self.k_values.contains(&0) {
            return Err(MetricsError::ZeroK);
        }
        check_scale(self.s)
    }

    pub fn max_k(&self) -> usize {
        self.k_values.iter().copied().max().unwrap_or(1)
    }
}

fn check_scale(s: f64) -> Result<(), MetricsError> {
    if !(s.is_finite() && s > 0.0) {
        return Err(MetricsError::BadScale(s));
    }
    Ok(())
}

/// 1 when the two class labels are equal, else 0.
pub fn indicator(l_q: &str, l_i: &str) -> u8 {
    u8::from(l_q == l_i)
}

/// 1 when any of the top `k` entries carries `truth_class`.
pub fn recall_at_k(ranked: &RankedList, truth_class: &str, k: usize) -> Result<u8, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    if ranked.entries.is_empty() {
        return Err(MetricsError::EmptyRanking(ranked.query_id.clone()));
    }
    Ok(u8::from(
        ranked
            .entries
            .iter()
            .take(k)
            .any(|e| indicator(truth_class, &e.class_id) == 1),
    ))
}

/// Cut-off for Recall@Top1%: `ceil(gallery_size / 100)`.
pub fn top1pct_k(gallery_size: usize) -> usize {
    gallery_size.div_ceil(100)
}

pub fn recall_top1pct(ranked: &RankedList, truth_class: &str, gallery_size: usize) -> Result<u8, MetricsError> {
    if gallery_size == 0 {
        return Err(MetricsError::EmptyGallery);
    }
    recall_at_k(ranked, truth_class, top1pct_k(gallery_size))
}

/// 1-based rank of the first entry with the truth class.
pub fn hit_rank(ranked: &RankedList, truth_class: &str) -> Option<usize> {
    ranked
        .entries
        .iter()
        .position(|e| e.class_id == truth_class)
        .map(|i| i + 1)
}

/// Average precision over the relevant items present in `ranked`: the mean
/// of precision@rank taken at each relevant item's rank.
pub fn average_precision(ranked: &RankedList, truth_class: &str) -> Result<f64, MetricsError> {
    let present = ranked.entries.iter().filter(|e| e.class_id == truth_class).count();
    average_precision_with_total(ranked, truth_class, present)
}

/// Average precision when the gallery holds `total_relevant` relevant items;
/// relevant items missing from a truncated list contribute zero precision.
pub fn average_precision_with_total(
    ranked: &RankedList,
    truth_class: &str,
    total_relevant: usize,
) -> Result<f64, MetricsError> {
    if total_relevant == 0 {
        return Err(MetricsError::NoRelevant(ranked.query_id.clone()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, e) in ranked.entries.iter().enumerate() {
        if e.class_id == truth_class {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(sum / total_relevant as f64)
}

/// SDM over an explicit list of rank-ordered degree distances (`K = len`).
/// Missing candidates may be passed as `f64::INFINITY` and score zero.
pub fn sdm_from_distances(distances: &[f64], s: f64) -> f64 {
    let k = distances.len();
    let mut num = 0.0;
    for (i, d) in distances.iter().enumerate() {
        num += (k - i) as f64 * (-s * d).exp();
    }
    let den = (k * (k + 1)) as f64 / 2.0;
    num / den
}

/// SDM@K of one ranked list against the query's true position.
pub fn sdm_k(ranked: &RankedList, truth_geo: GeoPoint, k: usize, s: f64) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    check_scale(s)?;
    if ranked.entries.len() < k {
        return Err(MetricsError::TooFewEntries {
            query_id: ranked.query_id.clone(),
            len: ranked.entries.len(),
            k,
        });
    }
    let d: Vec<f64> = ranked.entries[..k]
        .iter()
        .map(|e| degree_distance(truth_geo, e.geo))
        .collect();
    Ok(sdm_from_distances(&d, s))
}

/// Like [`sdm_k`] but ranks beyond the end of a short list score zero.
/// Used where the search domain may hold fewer than `k` candidates.
pub fn sdm_k_padded(ranked: &RankedList, truth_geo: GeoPoint, k: usize, s: f64) -> Result<f64, MetricsError> {
    if k == 0 {
        return Err(MetricsError::ZeroK);
    }
    check_scale(s)?;
    let d: Vec<f64> = (0..k)
        .map(|i| {
            ranked
                .entries
                .get(i)
                .map_or(f64::INFINITY, |e| degree_distance(truth_geo, e.geo))
        })
        .collect();
    Ok(sdm_from_distances(&d, s))
}

/// Ground truth for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryTruth {
    pub class_id: String,
    pub geo: GeoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// Plain mean over query images.
    #[default]
    PerQuery,
    /// Mean within each query class, then mean over classes.
    PerClass,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub sdm: SdmConfig,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryEval {
    pub query_id: String,
    pub class_id: String,
    pub sdm: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, u8>,
    pub recall_top1pct: u8,
    pub hit_rank: Option<usize>,
    /// `None` when the gallery holds no item of the query's class.
    pub average_precision: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalAggregates {
    pub queries: usize,
    pub sdm: BTreeMap<usize, f64>,
    pub recall: BTreeMap<usize, f64>,
    pub recall_top1pct: f64,
    pub map: f64,
    pub ap_defined: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: EvalConfig,
    pub gallery_size: usize,
    pub per_query: Vec<QueryEval>,
    pub aggregates: EvalAggregates,
}

pub fn evaluate_query(
    ranked: &RankedList,
    truth: &QueryTruth,
    gallery_class_counts: &HashMap<String, usize>,
    gallery_size: usize,
    cfg: &SdmConfig,
) -> Result<QueryEval, MetricsError> {
    let mut sdm = BTreeMap::new();
    let mut recall = BTreeMap::new();
    for &k in &cfg.k_values {
        sdm.insert(k, sdm_k(ranked, truth.geo, k, cfg.s)?);
        recall.insert(k, recall_at_k(ranked, &truth.class_id, k)?);
    }
    let relevant = gallery_class_counts.get(&truth.class_id).copied().unwrap_or(0);
    let average_precision = match average_precision_with_total(ranked, &truth.class_id, relevant) {
        Ok(ap) => Some(ap),
        Err(MetricsError::NoRelevant(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(QueryEval {
        query_id: ranked.query_id.clone(),
        class_id: truth.class_id.clone(),
        sdm,
        recall,
        recall_top1pct: recall_top1pct(ranked, &truth.class_id, gallery_size)?,
        hit_rank: hit_rank(ranked, &truth.class_id),
        average_precision,
    })
}

fn mean(vals: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in vals {
        sum += v;
        n += 1;
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Averages a per-query quantity according to `agg`. `rows` must already be
/// in query_id order so the summation order is fixed.
fn aggregate<F: Fn(&QueryEval) -> Option<f64>>(rows: &[QueryEval], agg: Aggregation, f: F) -> f64 {
    match agg {
        Aggregation::PerQuery => mean(rows.iter().filter_map(&f)),
        Aggregation::PerClass => {
            let mut by_class: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
            for r in rows {
                if let Some(v) = f(r) {
                    by_class.entry(&r.class_id).or_default().push(v);
                }
            }
            mean(by_class.values().map(|v| mean(v.iter().copied())))
        }
    }
}

pub fn aggregate_report(rows: &[QueryEval], cfg: &EvalConfig) -> EvalAggregates {
    let agg = cfg.aggregation;
    let sdm = cfg
        .sdm
        .k_values
        .iter()
        .map(|&k| (k, aggregate(rows, agg, |r| r.sdm.get(&k).copied())))
        .collect();
    let recall = cfg
        .sdm
        .k_values
        .iter()
        .map(|&k| (k, aggregate(rows, agg, |r| r.recall.get(&k).map(|&v| v as f64))))
        .collect();
    EvalAggregates {
        queries: rows.len(),
        sdm,
        recall,
        recall_top1pct: aggregate(rows, agg, |r| Some(r.recall_top1pct as f64)),
        map: aggregate(rows, agg, |r| r.average_precision),
        ap_defined: rows.iter().filter(|r| r.average_precision.is_some()).count(),
    }
}

/// Evaluates every ranked list against its truth; rows are ordered by
/// query_id.
pub fn evaluate(
    lists: &[RankedList],
    truths: &HashMap<String, QueryTruth>,
    gallery_class_counts: &HashMap<String, usize>,
    gallery_size: usize,
    cfg: &EvalConfig,
) -> Result<EvalReport, MetricsError> {
    cfg.sdm.validate()?;
    let mut rows = lists
        .iter()
        .map(|l| {
            let t = truths
                .get(&l.query_id)
                .ok_or_else(|| MetricsError::MissingTruth(l.query_id.clone()))?;
            evaluate_query(l, t, gallery_class_counts, gallery_size, &cfg.sdm)
        })
        .collect::<Result<Vec<_>, _>>()?;
    rows.sort_by(|a, b| a.query_id.cmp(&b.query_id));
    let aggregates = aggregate_report(&rows, cfg);
    Ok(EvalReport {
        config: cfg.clone(),
        gallery_size,
        per_query: rows,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{RankedEntry, SearchStrategy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn list(classes: &[&str]) -> RankedList {
        RankedList {
            query_id: "q".into(),
            entries: classes
                .iter()
                .enumerate()
                .map(|(i, c)| RankedEntry {
                    sample_id: format!("g{i}"),
                    distance: i as f64,
                    geo: GeoPoint { lat: 30.0, lon: 120.0 },
                    class_id: c.to_string(),
                })
                .collect(),
            strategy: SearchStrategy::Global,
        }
    }

    fn geo_list(d_lon: &[f64]) -> RankedList {
        let mut l = list(&vec!["x"; d_lon.len()]);
        for (e, d) in l.entries.iter_mut().zip(d_lon) {
            e.geo.lon += d;
        }
        l
    }

    const TRUTH: GeoPoint = GeoPoint { lat: 30.0, lon: 120.0 };

    #[test]
    fn indicator_examples() {
        assert_eq!(indicator("c7", "c7"), 1);
        assert_eq!(indicator("c7", "c8"), 0);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..200 {
            let a = format!("c{}", rng.random_range(0..5));
            let b = format!("c{}", rng.random_range(0..5));
            assert_eq!(indicator(&a, &b) == 1, a == b);
        }
    }

    #[test]
    fn recall_examples() {
        let l = list(&["t", "a", "b"]);
        assert_eq!(recall_at_k(&l, "t", 1).unwrap(), 1);
        let l = list(&["a", "b", "t", "c"]);
        assert_eq!(recall_at_k(&l, "t", 1).unwrap(), 0);
        assert_eq!(recall_at_k(&l, "t", 2).unwrap(), 0);
        assert_eq!(recall_at_k(&l, "t", 3).unwrap(), 1);
        assert_eq!(recall_at_k(&l, "t", 0), Err(MetricsError::ZeroK));
        assert!(recall_at_k(&list(&[]), "t", 1).is_err());
    }

    #[test]
    fn top1pct_cutoffs() {
        assert_eq!(top1pct_k(9099), 91);
        assert_eq!(top1pct_k(100), 1);
        assert_eq!(top1pct_k(50), 1);
        assert_eq!(top1pct_k(101), 2);
        let l = list(&["a", "t"]);
        assert_eq!(recall_top1pct(&l, "t", 100).unwrap(), recall_at_k(&l, "t", 1).unwrap());
        assert_eq!(recall_top1pct(&l, "t", 0), Err(MetricsError::EmptyGallery));
    }

    #[test]
    fn ap_examples() {
        assert_eq!(average_precision(&list(&["t", "t", "t", "a"]), "t").unwrap(), 1.0);
        assert_eq!(average_precision(&list(&["a", "t", "b"]), "t").unwrap(), 0.5);
        assert!(matches!(
            average_precision(&list(&["a"]), "t"),
            Err(MetricsError::NoRelevant(_))
        ));
        // truncated list: 3 relevant in gallery, one retrieved at rank 1
        assert!((average_precision_with_total(&list(&["t", "a"]), "t", 3).unwrap() - 1.0 / 3.0).abs() < 1e-15);
    }

    /// Definitional AP: for each relevant position, count relevant items at or
    /// above it and divide by the position.
    fn ap_oracle(classes: &[&str], t: &str) -> Option<f64> {
        let rel: Vec<usize> = (0..classes.len()).filter(|&i| classes[i] == t).collect();
        if rel.is_empty() {
            return None;
        }
        let precisions: Vec<f64> = rel
            .iter()
            .map(|&r| classes[..=r].iter().filter(|c| **c == t).count() as f64 / (r + 1) as f64)
            .collect();
        Some(precisions.iter().sum::<f64>() / rel.len() as f64)
    }

    #[test]
    fn ap_and_recall_match_oracles_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let names = ["a", "b", "c", "d"];
        for _ in 0..500 {
            let n = rng.random_range(1..=20);
            let classes: Vec<&str> = (0..n).map(|_| names[rng.random_range(0..4)]).collect();
            let l = list(&classes);
            match ap_oracle(&classes, "a") {
                Some(want) => assert!((average_precision(&l, "a").unwrap() - want).abs() < 1e-12),
                None => assert!(average_precision(&l, "a").is_err()),
            }
            for k in 1..=n + 2 {
                let want = classes.iter().take(k).any(|c| *c == "a");
                assert_eq!(recall_at_k(&l, "a", k).unwrap() == 1, want);
            }
        }
    }

    #[test]
    fn sdm_examples() {
        let s = DEFAULT_SDM_SCALE;
        assert_eq!(sdm_k(&geo_list(&[0.0, 0.0, 0.0]), TRUTH, 3, s).unwrap(), 1.0);
        let l = geo_list(&[0.0, 1e-4, 2e-4]);
        let got = sdm_k(&l, TRUTH, 3, s).unwrap();
        let want = (3.0 + 2.0 * (-0.5f64).exp() + (-1.0f64).exp()) / 6.0;
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
        assert!((got - 0.763490).abs() < 1e-6);
        assert_eq!(sdm_k(&geo_list(&[0.0]), TRUTH, 1, s).unwrap(), 1.0);
        let one = sdm_k(&geo_list(&[3e-5]), TRUTH, 1, s).unwrap();
        assert!((one - (-0.15f64).exp()).abs() < 1e-9);
    }

    #[test]
    fn sdm_errors() {
        let l = geo_list(&[0.0, 0.0]);
        assert!(matches!(
            sdm_k(&l, TRUTH, 3, 5e3),
            Err(MetricsError::TooFewEntries { .. })
        ));
        assert_eq!(sdm_k(&l, TRUTH, 0, 5e3), Err(MetricsError::ZeroK));
        assert!(matches!(sdm_k(&l, TRUTH, 1, 0.0), Err(MetricsError::BadScale(_))));
        assert!(matches!(sdm_k(&l, TRUTH, 1, f64::NAN), Err(MetricsError::BadScale(_))));
    }

    #[test]
    fn sdm_padded_scores_missing_ranks_zero() {
        let l = geo_list(&[0.0]);
        let got = sdm_k_padded(&l, TRUTH, 3, 5e3).unwrap();
        assert!((got - 3.0 / 6.0).abs() < 1e-15);
        assert_eq!(
            sdm_k_padded(&geo_list(&[0.0, 1e-4, 2e-4]), TRUTH, 3, 5e3),
            sdm_k(&geo_list(&[0.0, 1e-4, 2e-4]), TRUTH, 3, 5e3)
        );
    }

    #[test]
    fn sdm_weight_denominator() {
        // all-zero distances make the numerator equal the weight sum
        for k in 1..=100usize {
            let weights: usize = (1..=k).map(|i| k - i + 1).sum();
            assert_eq!(weights, k * (k + 1) / 2);
            assert_eq!(sdm_from_distances(&vec![0.0; k], 5e3), 1.0);
        }
    }

    #[test]
    fn sdm_strictly_decreasing_in_each_distance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..300 {
            let k = rng.random_range(1..12);
            let d: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..2e-4)).collect();
            let base = sdm_from_distances(&d, 5e3);
            assert!(base > 0.0 && base <= 1.0);
            let i = rng.random_range(0..k);
            let mut bumped = d.clone();
            bumped[i] += rng.random_range(1e-6..1e-4);
            // recompute directly
            let direct: f64 = bumped
                .iter()
                .enumerate()
                .map(|(j, dj)| (k - j) as f64 / (5e3 * dj).exp())
                .sum::<f64>()
                / (k * (k + 1) / 2) as f64;
            let got = sdm_from_distances(&bumped, 5e3);
            assert!((got - direct).abs() < 1e-12);
            assert!(got < base);
        }
    }

    #[test]
    fn recall_non_decreasing_in_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..100 {
            let n = rng.random_range(1..30);
            let classes: Vec<&str> = (0..n).map(|_| if rng.random_bool(0.1) { "t" } else { "x" }).collect();
            let l = list(&classes);
            let r: Vec<u8> = (1..=n).map(|k| recall_at_k(&l, "t", k).unwrap()).collect();
            assert!(r.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn near_miss_diverges_from_recall() {
        let mut l = geo_list(&[1e-5]);
        l.entries[0].class_id = "wrong".into();
        assert_eq!(recall_at_k(&l, "right", 1).unwrap(), 0);
        let s1 = sdm_k(&l, TRUTH, 1, 5e3).unwrap();
        assert!((s1 - (-0.05f64).exp()).abs() < 1e-6);
        assert!(s1 >= 0.95);
    }

    #[test]
    fn evaluate_aggregates_are_means() {
        let mut lists = Vec::new();
        let mut truths = HashMap::new();
        for (qid, class, ranking) in [
            ("q2", "a", vec!["a", "b", "a"]),
            ("q1", "b", vec!["a", "b", "c"]),
            ("q3", "a", vec!["c", "c", "b"]),
        ] {
            let mut l = list(&ranking);
            l.query_id = qid.into();
            lists.push(l);
            truths.insert(
                qid.to_string(),
                QueryTruth {
                    class_id: class.into(),
                    geo: TRUTH,
                },
            );
        }
        let counts = HashMap::from([("a".to_string(), 2), ("b".to_string(), 1), ("c".to_string(), 2)]);
        let cfg = EvalConfig {
            sdm: SdmConfig {
                k_values: vec![1, 3],
                s: 5e3,
            },
            aggregation: Aggregation::PerQuery,
        };
        let rep = evaluate(&lists, &truths, &counts, 5, &cfg).unwrap();
        let ids: Vec<&str> = rep.per_query.iter().map(|r| r.query_id.as_str()).collect();
        assert_eq!(ids, ["q1", "q2", "q3"]);
        assert!((rep.aggregates.recall[&1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((rep.aggregates.recall[&3] - 2.0 / 3.0).abs() < 1e-15);
        // AP: q1 = 1/2, q2 = (1 + 2/3)/2, q3 = 0
        let want_map = (0.5 + (1.0 + 2.0 / 3.0) / 2.0 + 0.0) / 3.0;
        assert!((rep.aggregates.map - want_map).abs() < 1e-12);
        assert_eq!(rep.aggregates.sdm[&1], 1.0);

        let per_class = EvalConfig {
            aggregation: Aggregation::PerClass,
            ..cfg.clone()
        };
        let rep = evaluate(&lists, &truths, &counts, 5, &per_class).unwrap();
        // class a: q2 hit, q3 miss -> 0.5; class b: q1 miss -> 0
        assert!((rep.aggregates.recall[&1] - 0.25).abs() < 1e-15);

        truths.remove("q3");
        assert!(matches!(
            evaluate(&lists, &truths, &counts, 5, &cfg),
            Err(MetricsError::MissingTruth(_))
        ));
    }
}

//! Line-delimited JSON writers and readers for ranked lists, evaluation and
//! replay reports, plus the GeoJSON trajectory export.
//!
//! Every file starts with a header line `{"format", "version", "config"}`
//! where `config` echoes whatever produced the file.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::metrics::EvalReport;
use crate::replay::ReplayReport;
use crate::retrieval::{RankedEntry, RankedList, SearchStrategy};

pub const RANKED_FORMAT: &str = "uavloc-ranked";
pub const EVAL_FORMAT: &str = "uavloc-eval";
pub const REPLAY_FORMAT: &str = "uavloc-replay";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: String,
    pub config: Value,
}

impl Header {
    pub fn new<C: Serialize>(format: &str, config: &C) -> Self {
        Header {
            format: format.to_string(),
            version: crate::VERSION.to_string(),
            config: serde_json::to_value(config).expect("configs serialize to JSON"),
        }
    }
}

fn write_line<W: Write, T: Serialize>(w: &mut W, v: &T) -> io::Result<()> {
    serde_json::to_writer(&mut *w, v)?;
    w.write_all(b"\n")
}

/// One row of a ranked file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankedRow {
    pub query_id: String,
    pub rank: usize,
    pub sample_id: String,
    pub distance: f64,
    pub lat: f64,
    pub lon: f64,
    pub class_id: String,
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

// Distances carry 17 significant digits; serde_json would print the shortest
// round-trip form instead, so this row is assembled by hand.
fn ranked_row_line(query_id: &str, rank: usize, e: &RankedEntry) -> String {
    let mut s = String::with_capacity(160);
    write!(
        s,
        "{{\"query_id\":{},\"rank\":{},\"sample_id\":{},\"distance\":{:.16e},\"lat\":{},\"lon\":{},\"class_id\":{}}}",
        json_str(query_id),
        rank,
        json_str(&e.sample_id),
        e.distance,
        serde_json::to_string(&e.geo.lat).unwrap(),
        serde_json::to_string(&e.geo.lon).unwrap(),
        json_str(&e.class_id),
    )
    .unwrap();
    s
}

/// Writes ranked lists: a header, then one row per (query, rank), ranks
/// starting at 1. Lists are written in the given order.
pub fn write_ranked<W: Write, C: Serialize>(mut w: W, config: &C, lists: &[RankedList]) -> io::Result<()> {
    write_line(&mut w, &Header::new(RANKED_FORMAT, config))?;
    for l in lists {
        for (i, e) in l.entries.iter().enumerate() {
            w.write_all(ranked_row_line(&l.query_id, i + 1, e).as_bytes())?;
            w.write_all(b"\n")?;
        }
    }
    w.flush()
}

/// Reads a ranked file back into lists, grouped by query in first-seen order.
/// The strategy field is taken from the header's `strategy` key when present.
pub fn read_ranked<R: BufRead>(r: R) -> Result<(Header, Vec<RankedList>), ReportError> {
    let bad = |line: usize, msg: String| ReportError::Parse { line, msg };
    let mut lines = r.lines().enumerate();
    let header: Header = match lines.next() {
        Some((_, l)) => serde_json::from_str(&l?).map_err(|e| bad(1, e.to_string()))?,
        None => return Err(bad(1, "missing header".into())),
    };
    if header.format != RANKED_FORMAT {
        return Err(bad(1, format!("unexpected format {:?}", header.format)));
    }
    let strategy: SearchStrategy = header
        .config
        .get("strategy")
        .map(|v| serde_json::from_value(v.clone()))
        .transpose()
        .map_err(|e| bad(1, e.to_string()))?
        .unwrap_or(SearchStrategy::Global);

    let mut lists: Vec<RankedList> = Vec::new();
    let mut pos: HashMap<String, usize> = HashMap::new();
    for (i, l) in lines {
        let line = i + 1;
        let row: RankedRow = serde_json::from_str(&l?).map_err(|e| bad(line, e.to_string()))?;
        let idx = *pos.entry(row.query_id.clone()).or_insert_with(|| {
            lists.push(RankedList {
                query_id: row.query_id.clone(),
                entries: Vec::new(),
                strategy,
            });
            lists.len() - 1
        });
        let list = &mut lists[idx];
        if row.rank != list.entries.len() + 1 {
            return Err(bad(
                line,
                format!(
                    "query {:?}: expected rank {}, found {}",
                    row.query_id,
                    list.entries.len() + 1,
                    row.rank
                ),
            ));
        }
        list.entries.push(RankedEntry {
            sample_id: row.sample_id,
            distance: row.distance,
            geo: GeoPoint::new(row.lat, row.lon).map_err(|e| bad(line, e.to_string()))?,
            class_id: row.class_id,
        });
    }
    Ok((header, lists))
}

/// Evaluation report: header (with s, k values, gallery size and
/// aggregation mode alongside the caller's config), one row per query, then
/// the aggregate footer.
pub fn write_eval<W: Write, C: Serialize>(mut w: W, config: &C, report: &EvalReport) -> io::Result<()> {
    let mut header = Header::new(EVAL_FORMAT, config);
    header.config = json!({
        "run": header.config,
        "s": report.config.sdm.s,
        "k_values": report.config.sdm.k_values,
        "gallery_size": report.gallery_size,
        "aggregation": report.config.aggregation,
    });
    write_line(&mut w, &header)?;
    for row in &report.per_query {
        write_line(&mut w, &json!({"type": "query", "row": row}))?;
    }
    write_line(&mut w, &json!({"type": "aggregates", "aggregates": report.aggregates}))?;
    w.flush()
}

/// Replay report: header echoing the replay configuration, one line per
/// step, then the aggregate footer.
pub fn write_replay<W: Write, C: Serialize>(mut w: W, config: &C, report: &ReplayReport) -> io::Result<()> {
    let mut header = Header::new(REPLAY_FORMAT, config);
    header.config = json!({
        "run": header.config,
        "replay": report.config,
        "oracle_anchor": report.oracle_anchor,
    });
    write_line(&mut w, &header)?;
    for s in &report.steps {
        write_line(&mut w, &json!({"type": "step", "step": s}))?;
    }
    write_line(&mut w, &json!({"type": "aggregates", "aggregates": report.aggregates}))?;
    w.flush()
}

fn lonlat(p: GeoPoint) -> [f64; 2] {
    [p.lon, p.lat]
}

/// GeoJSON FeatureCollection with the truth and predicted paths as
/// LineStrings and one Point per predicted fix carrying its error.
pub fn trajectory_geojson(report: &ReplayReport) -> Value {
    let truth: Vec<[f64; 2]> = report.steps.iter().map(|s| lonlat(s.truth)).collect();
    let predicted: Vec<[f64; 2]> = report.steps.iter().map(|s| lonlat(s.predicted)).collect();
    let mut features = vec![
        json!({
            "type": "Feature",
            "properties": {"name": "truth"},
            "geometry": {"type": "LineString", "coordinates": truth},
        }),
        json!({
            "type": "Feature",
            "properties": {"name": "predicted", "oracle_anchor": report.oracle_anchor},
            "geometry": {"type": "LineString", "coordinates": predicted},
        }),
    ];
    for s in &report.steps {
        features.push(json!({
            "type": "Feature",
            "properties": {
                "step": s.step,
                "query_id": s.query_id,
                "error_m": s.error_m,
                "fallback_used": s.fallback_used,
            },
            "geometry": {"type": "Point", "coordinates": lonlat(s.predicted)},
        }));
    }
    json!({"type": "FeatureCollection", "features": features})
}

pub fn write_trajectory<W: Write>(mut w: W, report: &ReplayReport) -> io::Result<()> {
    serde_json::to_writer_pretty(&mut w, &trajectory_geojson(report))?;
    w.write_all(b"\n")?;
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn list(q: &str, ds: &[f64]) -> RankedList {
        RankedList {
            query_id: q.into(),
            entries: ds
                .iter()
                .enumerate()
                .map(|(i, &d)| RankedEntry {
                    sample_id: format!("g{i}"),
                    distance: d,
                    geo: GeoPoint {
                        lat: 30.0 + i as f64 * 1e-5,
                        lon: 120.0,
                    },
                    class_id: format!("c{i}"),
                })
                .collect(),
            strategy: SearchStrategy::Global,
        }
    }

    #[test]
    fn ranked_row_has_17_significant_digits() {
        let l = list("q\"1", &[0.1]);
        let line = ranked_row_line(&l.query_id, 1, &l.entries[0]);
        assert!(line.contains("\"distance\":1.0000000000000001e-1"), "{line}");
        assert!(line.starts_with("{\"query_id\":\"q\\\"1\""));
        let row: RankedRow = serde_json::from_str(&line).unwrap();
        assert_eq!(row.distance, 0.1);
    }

    #[test]
    fn ranked_round_trip_and_rank_check() {
        let lists = vec![list("b", &[0.5, 0.75, 1.0]), list("a", &[0.0, 2.0])];
        let mut buf = Vec::new();
        write_ranked(&mut buf, &json!({"k": 3}), &lists).unwrap();
        let (h, back) = read_ranked(buf.as_slice()).unwrap();
        assert_eq!(h.config["k"], 3);
        assert_eq!(back, lists);

        let text = String::from_utf8(buf).unwrap().replace("\"rank\":2", "\"rank\":5");
        assert!(matches!(
            read_ranked(text.as_bytes()),
            Err(ReportError::Parse { line: 3, .. })
        ));
        assert!(read_ranked(&b""[..]).is_err());
    }

    proptest! {
        #[test]
        fn ranked_distances_survive_text(ds in prop::collection::vec(0.0f64..1e6, 1..8)) {
            let l = list("q", &ds);
            let mut buf = Vec::new();
            write_ranked(&mut buf, &json!({}), std::slice::from_ref(&l)).unwrap();
            let (_, back) = read_ranked(buf.as_slice()).unwrap();
            for (a, b) in back[0].entries.iter().zip(&l.entries) {
                prop_assert_eq!(a.distance.to_bits(), b.distance.to_bits());
            }
        }
    }
}

//! Historical snapshot files and the longitudinal diff report.
//!
//! A snapshot is CSV with a version line, a header and one row per
//! (input, year):
//!
//! ```text
//! # mexkit-snapshot v1
//! input_id,year,class,confidence,label
//! img-0001,2020,3,0.91,3
//! img-0002,2020,0,0.55,1
//! ```
//!
//! `label` (ground truth) is optional; when present it must be filled on
//! every row. `confidence` must lie in `[0, 1]` and `(input_id, year)` must
//! be unique.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use mexkit_core::retro::{impute_full_simplex, snapshot_diff, LongitudinalRecord};
use mexkit_core::ProbabilityVector;
use serde::{Deserialize, Serialize};

use crate::error::{MexError, Result};

pub const SNAPSHOT_HEADER: &str = "# mexkit-snapshot v1";
const COLUMNS: [&str; 4] = ["input_id", "year", "class", "confidence"];

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub records: Vec<LongitudinalRecord>,
    /// Ground-truth class per input id, when the file has a `label` column.
    pub labels: Option<BTreeMap<String, usize>>,
}

impl Snapshot {
    pub fn years(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.year_tag.as_str()).collect()
    }

    pub fn year(&self, year: &str) -> Vec<LongitudinalRecord> {
        self.records.iter().filter(|r| r.year_tag == year).cloned().collect()
    }

    /// The only year in the file, if there is exactly one.
    pub fn single_year(&self) -> Option<&str> {
        let years = self.years();
        (years.len() == 1).then(|| *years.iter().next().expect("one year"))
    }
}

pub fn ingest_snapshot(path: &Path) -> Result<Snapshot> {
    let text = std::fs::read_to_string(path).map_err(|e| MexError::io(path, e))?;
    parse_snapshot(&text, path)
}

pub fn parse_snapshot(text: &str, path: &Path) -> Result<Snapshot> {
    let schema = |line: u64, reason: String| MexError::SchemaViolation {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(SNAPSHOT_HEADER) {
        return Err(schema(1, format!("first line must be '{SNAPSHOT_HEADER}'")));
    }
    let body = text.split_once('\n').map_or("", |(_, rest)| rest);
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(body.as_bytes());
    let header = reader.headers().map_err(|e| schema(2, e.to_string()))?.clone();
    let labeled = match header.len() {
        4 => false,
        5 if &header[4] == "label" => true,
        _ => false,
    };
    if header.iter().take(4).ne(COLUMNS) || !(header.len() == 4 || labeled) {
        return Err(schema(2, format!("expected columns {} with optional label", COLUMNS.join(","))));
    }
    let mut seen = BTreeSet::new();
    let mut records = Vec::new();
    let mut labels = BTreeMap::new();
    for row in reader.records() {
        let row = row.map_err(|e| schema(0, e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line()) + 1;
        if row.len() != header.len() {
            return Err(schema(line, format!("expected {} fields, found {}", header.len(), row.len())));
        }
        let id = row[0].to_string();
        let year = row[1].to_string();
        if id.is_empty() || year.is_empty() {
            return Err(schema(line, "input_id and year must be non-empty".into()));
        }
        let class: usize = row[2].parse().map_err(|_| schema(line, format!("class '{}' is not an index", &row[2])))?;
        let confidence: f64 = row[3]
            .parse()
            .map_err(|_| schema(line, format!("confidence '{}' is not a number", &row[3])))?;
        if !(0.0..=1.0).contains(&confidence) {
            return Err(schema(line, format!("confidence {confidence} outside [0, 1]")));
        }
        if !seen.insert((id.clone(), year.clone())) {
            return Err(schema(line, format!("duplicate entry for ({id}, {year})")));
        }
        if labeled {
            let label: usize = row[4].parse().map_err(|_| schema(line, format!("label '{}' is not an index", &row[4])))?;
            if let Some(prev) = labels.insert(id.clone(), label) {
                if prev != label {
                    return Err(schema(line, format!("conflicting labels for {id}")));
                }
            }
        }
        records.push(LongitudinalRecord {
            input_id: id,
            year_tag: year,
            top_class: class,
            top_confidence: confidence,
        });
    }
    if records.is_empty() {
        return Err(schema(2, "snapshot has no rows".into()));
    }
    Ok(Snapshot {
        records,
        labels: labeled.then_some(labels),
    })
}

pub fn write_snapshot(path: &Path, records: &[LongitudinalRecord], labels: Option<&BTreeMap<String, usize>>) -> Result<()> {
    let mut out = format!("{SNAPSHOT_HEADER}\n");
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = COLUMNS.to_vec();
    if labels.is_some() {
        header.push("label");
    }
    let err = |e: csv::Error| MexError::Config(e.to_string());
    w.write_record(&header).map_err(err)?;
    for r in records {
        let mut row = vec![
            r.input_id.clone(),
            r.year_tag.clone(),
            r.top_class.to_string(),
            r.top_confidence.to_string(),
        ];
        if let Some(l) = labels {
            let label = l
                .get(&r.input_id)
                .ok_or_else(|| MexError::Config(format!("no label for {}", r.input_id)))?;
            row.push(label.to_string());
        }
        w.write_record(&row).map_err(err)?;
    }
    out.push_str(&String::from_utf8(w.into_inner().map_err(|e| MexError::Config(e.to_string()))?).expect("utf-8"));
    std::fs::write(path, out).map_err(|e| MexError::io(path, e))
}

/// Full simplexes rebuilt from each record's top-1 response.
pub fn impute_records(records: &[LongitudinalRecord], classes: usize) -> Result<BTreeMap<String, ProbabilityVector>> {
    records
        .iter()
        .map(|r| Ok((r.input_id.clone(), impute_full_simplex(r.top_class, r.top_confidence, classes)?)))
        .collect()
}

/// Year-over-year change: attack fidelity, API accuracy, predicted-class
/// overlap and average confidence shift. Deltas are `b - a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffReport {
    pub year_a: String,
    pub year_b: String,
    /// Needs attack results for both years.
    pub fidelity_delta: Option<f64>,
    /// Needs labeled snapshots; measured on the shared ids.
    pub accuracy_delta: Option<f64>,
    pub predicted_class_overlap: f64,
    pub avg_confidence_delta: f64,
    pub mean_confidence_a: f64,
    pub mean_confidence_b: f64,
    pub shared: usize,
    pub only_a: usize,
    pub only_b: usize,
    pub coverage: f64,
}

#[derive(Debug, Clone)]
pub struct DiffInputs<'a> {
    pub a: &'a Snapshot,
    pub b: &'a Snapshot,
    pub year_a: Option<&'a str>,
    pub year_b: Option<&'a str>,
    /// Mean attack fidelity against each year's API.
    pub fidelity: Option<(f64, f64)>,
}

fn pick_year<'a>(s: &'a Snapshot, year: Option<&'a str>, which: &str) -> Result<&'a str> {
    match year.or_else(|| s.single_year()) {
        Some(y) if s.years().contains(y) => Ok(y),
        Some(y) => Err(MexError::Config(format!("snapshot {which} has no year '{y}'"))),
        None => Err(MexError::Config(format!(
            "snapshot {which} holds several years; choose one of {:?}",
            s.years()
        ))),
    }
}

pub fn diff_report(inputs: &DiffInputs<'_>) -> Result<DiffReport> {
    let ya = pick_year(inputs.a, inputs.year_a, "a")?;
    let yb = pick_year(inputs.b, inputs.year_b, "b")?;
    let ra = inputs.a.year(ya);
    let rb = inputs.b.year(yb);
    let d = snapshot_diff(&ra, &rb)?;
    let accuracy_delta = match (&inputs.a.labels, &inputs.b.labels) {
        (Some(la), Some(lb)) => {
            let shared: BTreeMap<&str, (usize, usize)> = {
                let b: BTreeMap<&str, usize> = rb.iter().map(|r| (r.input_id.as_str(), r.top_class)).collect();
                ra.iter()
                    .filter_map(|r| b.get(r.input_id.as_str()).map(|cb| (r.input_id.as_str(), (r.top_class, *cb))))
                    .collect()
            };
            let mut hits = (0usize, 0usize, 0usize);
            for (id, (ca, cb)) in &shared {
                if let (Some(ta), Some(tb)) = (la.get(*id), lb.get(*id)) {
                    hits.0 += usize::from(ca == ta);
                    hits.1 += usize::from(cb == tb);
                    hits.2 += 1;
                }
            }
            (hits.2 > 0).then(|| (hits.1 as f64 - hits.0 as f64) / hits.2 as f64)
        }
        _ => None,
    };
    Ok(DiffReport {
        year_a: ya.to_string(),
        year_b: yb.to_string(),
        fidelity_delta: inputs.fidelity.map(|(a, b)| b - a),
        accuracy_delta,
        predicted_class_overlap: d.overlap,
        avg_confidence_delta: d.mean_abs_conf_delta,
        mean_confidence_a: d.mean_conf_a,
        mean_confidence_b: d.mean_conf_b,
        shared: d.shared,
        only_a: d.only_a,
        only_b: d.only_b,
        coverage: d.coverage(),
    })
}

/// Reads the mean fidelity of a harness result file (first experiment).
pub fn result_fidelity(path: &Path) -> Result<f64> {
    let text = std::fs::read_to_string(path).map_err(|e| MexError::io(path, e))?;
    let results = crate::harness::report::parse_json_report(&text).map_err(|e| match e {
        MexError::Config(m) => MexError::SchemaViolation {
            path: PathBuf::from(path),
            line: 0,
            reason: m,
        },
        e => e,
    })?;
    results
        .first()
        .map(|r| r.aggregate.fidelity.mean)
        .ok_or(MexError::EmptyReport)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<Snapshot> {
        parse_snapshot(text, Path::new("snap.csv"))
    }

    fn line_of(e: MexError) -> u64 {
        match e {
            MexError::SchemaViolation { line, .. } => line,
            other => panic!("expected schema violation, got {other:?}"),
        }
    }

    #[test]
    fn well_formed_three_rows() {
        let s = parse("# mexkit-snapshot v1\ninput_id,year,class,confidence\na,2020,1,0.9\nb,2020,0,0.6\nc,2020,2,0.5\n").unwrap();
        assert_eq!(s.records.len(), 3);
        assert_eq!(s.single_year(), Some("2020"));
        assert!(s.labels.is_none());
    }

    #[test]
    fn out_of_range_confidence_reports_its_line() {
        let e = parse("# mexkit-snapshot v1\ninput_id,year,class,confidence\na,2020,1,0.9\nb,2020,0,1.3\n").unwrap_err();
        assert_eq!(line_of(e), 4);
    }

    #[test]
    fn duplicate_keys_are_rejected() {
        let e = parse("# mexkit-snapshot v1\ninput_id,year,class,confidence\na,2020,1,0.9\na,2020,0,0.6\n").unwrap_err();
        assert_eq!(line_of(e), 4);
        assert!(parse("# mexkit-snapshot v1\ninput_id,year,class,confidence\na,2020,1,0.9\na,2021,0,0.6\n").is_ok());
    }

    #[test]
    fn missing_version_line() {
        assert_eq!(line_of(parse("input_id,year,class,confidence\na,2020,1,0.9\n").unwrap_err()), 1);
        assert_eq!(line_of(parse("# mexkit-snapshot v1\nid,year,class,confidence\n").unwrap_err()), 2);
    }

    #[test]
    fn diff_with_labels_and_fidelity() {
        let a = parse("# mexkit-snapshot v1\ninput_id,year,class,confidence,label\nx,2020,1,0.5,1\ny,2020,0,0.9,1\nz,2020,0,0.9,0\n").unwrap();
        let b = parse("# mexkit-snapshot v1\ninput_id,year,class,confidence,label\nx,2021,1,0.4,1\ny,2021,1,0.9,1\n").unwrap();
        let r = diff_report(&DiffInputs { a: &a, b: &b, year_a: None, year_b: None, fidelity: Some((0.8, 0.85)) }).unwrap();
        assert_eq!(r.shared, 2);
        assert_eq!(r.only_a, 1);
        assert!((r.predicted_class_overlap - 0.5).abs() < 1e-12);
        assert!((r.avg_confidence_delta - 0.05).abs() < 1e-12);
        assert!((r.accuracy_delta.unwrap() - 0.5).abs() < 1e-12);
        assert!((r.fidelity_delta.unwrap() - 0.05).abs() < 1e-12);
    }

    #[test]
    fn write_then_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        let recs = vec![LongitudinalRecord { input_id: "q".into(), year_tag: "2022".into(), top_class: 2, top_confidence: 0.623456789 }];
        write_snapshot(&p, &recs, None).unwrap();
        assert_eq!(ingest_snapshot(&p).unwrap().records, recs);
        let imputed = impute_records(&recs, 4).unwrap();
        assert_eq!(imputed["q"].argmax(), 2);
    }
}

//! Experiment results and their JSON, CSV and text-table renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use mexkit_core::metrics::{ClassBreakdown, MetricsReport};
use serde::{Deserialize, Serialize};

use crate::error::{MexError, Result};

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedReport {
    pub seed: u64,
    /// Inputs sent to the attack meter.
    pub queries: usize,
    /// Cache misses billed to the attack budget.
    pub spent: usize,
    /// Sum of record costs in the attack log.
    pub cost: f64,
    pub rounds: usize,
    pub metrics: MetricsReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Some(Self { mean, std: var.sqrt() })
    }

    /// `"41.00 ± 1.00"` for a fraction-valued statistic.
    pub fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub fidelity: Stat,
    pub accuracy: Option<Stat>,
    pub adversarial_fidelity: Option<Stat>,
}

impl Aggregate {
    /// Optional metrics are aggregated only when every seed reports them.
    pub fn from_seeds(seeds: &[SeedReport]) -> Result<Self> {
        let fid: Vec<f64> = seeds.iter().map(|s| s.metrics.fidelity).collect();
        let all = |f: fn(&MetricsReport) -> Option<f64>| -> Option<Stat> {
            let v: Option<Vec<f64>> = seeds.iter().map(|s| f(&s.metrics)).collect();
            v.and_then(|v| Stat::of(&v))
        };
        Ok(Self {
            fidelity: Stat::of(&fid).ok_or(MexError::EmptyReport)?,
            accuracy: all(|m| m.accuracy),
            adversarial_fidelity: all(|m| m.adversarial_fidelity),
        })
    }
}

/// Files written by a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub result: Option<PathBuf>,
    pub cache: Option<PathBuf>,
    pub query_logs: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub traces: Vec<PathBuf>,
}

/// Everything one config produced across its seeds. Wall-clock time and
/// artifact paths are kept out of the serialized form so reruns compare
/// equal; they go to the run manifest instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub name: String,
    pub strategy: String,
    pub policy: String,
    /// Batch count, or `full`.
    pub budget: String,
    pub budget_queries: usize,
    pub batch_size: usize,
    pub config_fingerprint: String,
    pub seeds: Vec<SeedReport>,
    pub aggregate: Aggregate,
    #[serde(skip)]
    pub wall_clock_secs: f64,
    #[serde(skip)]
    pub artifacts: Artifacts,
}

impl ExperimentResult {
    /// Recomputes `aggregate` from the per-seed reports.
    pub fn refresh_aggregate(&mut self) -> Result<()> {
        self.aggregate = Aggregate::from_seeds(&self.seeds)?;
        Ok(())
    }

    /// Equality of everything serialized.
    pub fn same_report(&self, other: &Self) -> bool {
        serde_json::to_string(self).ok() == serde_json::to_string(other).ok()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    Table,
}

impl FromStr for ReportFormat {
    type Err = MexError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "table" => Ok(ReportFormat::Table),
            _ => Err(MexError::UnknownFormat(s.to_string())),
        }
    }
}

pub fn emit_report(results: &[ExperimentResult], format: ReportFormat) -> Result<String> {
    if results.is_empty() || results.iter().any(|r| r.seeds.is_empty()) {
        return Err(MexError::EmptyReport);
    }
    match format {
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(results).map_err(|e| MexError::Config(e.to_string()))?;
            s.push('\n');
            Ok(s)
        }
        ReportFormat::Csv => emit_csv(results),
        ReportFormat::Table => Ok(emit_table(results)),
    }
}

/// Accepts a JSON array of results or a single result object.
pub fn parse_json_report(text: &str) -> Result<Vec<ExperimentResult>> {
    let v: serde_json::Value = serde_json::from_str(text).map_err(|e| MexError::Config(e.to_string()))?;
    let parsed = if v.is_array() {
        serde_json::from_value(v)
    } else {
        serde_json::from_value(v).map(|r| vec![r])
    };
    parsed.map_err(|e| MexError::Config(e.to_string()))
}

const CSV_COLUMNS: [&str; 18] = [
    "name",
    "strategy",
    "policy",
    "budget",
    "budget_queries",
    "batch_size",
    "config_fingerprint",
    "seed",
    "queries",
    "spent",
    "cost",
    "rounds",
    "fidelity",
    "accuracy",
    "adversarial_fidelity",
    "samples",
    "adversarial_samples",
    "per_class",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// One row per seed. `per_class` packs `class:support:fidelity` triples
/// separated by `;`. Floats use shortest round-trip formatting.
fn emit_csv(results: &[ExperimentResult]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let err = |e: csv::Error| MexError::Config(e.to_string());
    w.write_record(CSV_COLUMNS).map_err(err)?;
    for r in results {
        for s in &r.seeds {
            let m = &s.metrics;
            let per_class: Vec<String> = m
                .per_class
                .iter()
                .map(|c| format!("{}:{}:{}", c.class, c.support, c.fidelity))
                .collect();
            w.write_record([
                r.name.clone(),
                r.strategy.clone(),
                r.policy.clone(),
                r.budget.clone(),
                r.budget_queries.to_string(),
                r.batch_size.to_string(),
                r.config_fingerprint.clone(),
                s.seed.to_string(),
                s.queries.to_string(),
                s.spent.to_string(),
                s.cost.to_string(),
                s.rounds.to_string(),
                m.fidelity.to_string(),
                opt(m.accuracy),
                opt(m.adversarial_fidelity),
                m.samples.to_string(),
                m.adversarial_samples.to_string(),
                per_class.join(";"),
            ])
            .map_err(err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| MexError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Inverse of the CSV rendering. Rows sharing every experiment-level
/// column form one result; aggregates are recomputed.
pub fn parse_csv_report(text: &str) -> Result<Vec<ExperimentResult>> {
    let path = PathBuf::from("<csv report>");
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| MexError::Config(e.to_string()))?.clone();
    if header.iter().ne(CSV_COLUMNS) {
        return Err(MexError::SchemaViolation {
            path,
            line: 1,
            reason: format!("expected columns {}", CSV_COLUMNS.join(",")),
        });
    }
    let mut results: Vec<ExperimentResult> = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| MexError::Config(e.to_string()))?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |col: &str| MexError::SchemaViolation {
            path: path.clone(),
            line,
            reason: format!("bad value in column '{col}'"),
        };
        let get = |i: usize| row.get(i).unwrap_or_default();
        fn num<T: FromStr>(s: &str) -> Option<T> {
            s.parse().ok()
        }
        let optional = |i: usize| -> Result<Option<f64>> {
            match get(i) {
                "" => Ok(None),
                s => num(s).map(Some).ok_or_else(|| bad(CSV_COLUMNS[i])),
            }
        };
        let req = |i: usize| -> Result<&str> { Ok(get(i)) };
        let mut per_class = Vec::new();
        for cell in get(17).split(';').filter(|c| !c.is_empty()) {
            let parts: Vec<&str> = cell.split(':').collect();
            let parsed = match parts.as_slice() {
                [c, s, f] => num(c).zip(num(s)).zip(num(f)).map(|((class, support), fidelity)| ClassBreakdown {
                    class,
                    support,
                    fidelity,
                }),
                _ => None,
            };
            per_class.push(parsed.ok_or_else(|| bad("per_class"))?);
        }
        let fingerprint = req(6)?.to_string();
        let seed = SeedReport {
            seed: num(get(7)).ok_or_else(|| bad("seed"))?,
            queries: num(get(8)).ok_or_else(|| bad("queries"))?,
            spent: num(get(9)).ok_or_else(|| bad("spent"))?,
            cost: num(get(10)).ok_or_else(|| bad("cost"))?,
            rounds: num(get(11)).ok_or_else(|| bad("rounds"))?,
            metrics: MetricsReport {
                fidelity: num(get(12)).ok_or_else(|| bad("fidelity"))?,
                accuracy: optional(13)?,
                adversarial_fidelity: optional(14)?,
                samples: num(get(15)).ok_or_else(|| bad("samples"))?,
                adversarial_samples: num(get(16)).ok_or_else(|| bad("adversarial_samples"))?,
                per_class,
                config_fingerprint: fingerprint.clone(),
            },
        };
        let key = (get(0), get(1), get(2), get(3), get(4), get(5), get(6));
        let existing = results.iter_mut().find(|r| {
            (
                r.name.as_str(),
                r.strategy.as_str(),
                r.policy.as_str(),
                r.budget.as_str(),
                r.budget_queries.to_string().as_str(),
                r.batch_size.to_string().as_str(),
                r.config_fingerprint.as_str(),
            ) == key
        });
        match existing {
            Some(r) => r.seeds.push(seed),
            None => results.push(ExperimentResult {
                name: get(0).into(),
                strategy: get(1).into(),
                policy: get(2).into(),
                budget: get(3).into(),
                budget_queries: num(get(4)).ok_or_else(|| bad("budget_queries"))?,
                batch_size: num(get(5)).ok_or_else(|| bad("batch_size"))?,
                config_fingerprint: fingerprint,
                aggregate: Aggregate::from_seeds(std::slice::from_ref(&seed))?,
                seeds: vec![seed],
                wall_clock_secs: 0.0,
                artifacts: Artifacts::default(),
            }),
        }
    }
    if results.is_empty() {
        return Err(MexError::EmptyReport);
    }
    for r in &mut results {
        r.refresh_aggregate()?;
    }
    Ok(results)
}

/// Budget columns by strategy rows, one block per metric, cells as
/// percent `mean ± std`.
fn emit_table(results: &[ExperimentResult]) -> String {
    let mut budgets: Vec<(usize, String)> = Vec::new();
    for r in results {
        let col = (r.budget_queries, r.budget.clone());
        if !budgets.contains(&col) {
            budgets.push(col);
        }
    }
    budgets.sort();
    let mut rows: Vec<String> = Vec::new();
    for r in results {
        if !rows.contains(&r.name) {
            rows.push(r.name.clone());
        }
    }
    type Pick = fn(&Aggregate) -> Option<Stat>;
    let metrics: [(&str, Pick); 3] = [
        ("Fidelity (%)", |a| Some(a.fidelity)),
        ("Accuracy (%)", |a| a.accuracy),
        ("Adversarial fidelity (%)", |a| a.adversarial_fidelity),
    ];
    let mut out = String::new();
    for (title, pick) in metrics {
        let mut cells: BTreeMap<(usize, usize), String> = BTreeMap::new();
        for r in results {
            let row = rows.iter().position(|n| *n == r.name).expect("row collected");
            let col = budgets
                .iter()
                .position(|b| b.0 == r.budget_queries && b.1 == r.budget)
                .expect("column collected");
            if let Some(s) = pick(&r.aggregate) {
                cells.insert((row, col), s.percent());
            }
        }
        if cells.is_empty() {
            continue;
        }
        let mut header = vec!["strategy \\ budget".to_string()];
        header.extend(budgets.iter().map(|(_, b)| b.clone()));
        let mut grid = vec![header];
        for (i, name) in rows.iter().enumerate() {
            let mut line = vec![name.clone()];
            line.extend((0..budgets.len()).map(|j| cells.get(&(i, j)).cloned().unwrap_or_else(|| "-".into())));
            grid.push(line);
        }
        let widths: Vec<usize> = (0..grid[0].len())
            .map(|j| grid.iter().map(|l| l[j].chars().count()).max().unwrap_or(0))
            .collect();
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(out, "{title}");
        for (k, line) in grid.iter().enumerate() {
            let cols: Vec<String> = line
                .iter()
                .zip(&widths)
                .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
                .collect();
            let _ = writeln!(out, "{}", cols.join(" | ").trim_end());
            if k == 0 {
                let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
                let _ = writeln!(out, "{}", rule.join("-+-"));
            }
        }
    }
    out
}

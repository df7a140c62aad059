use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use mexkit_core::data::Dataset;
use mexkit_core::nn::{ModelSpec, Network};
use mexkit_core::rng::derive;
use mexkit_core::trainer::{AugmentConfig, OptimizerConfig, OptimizerKind, Pairs, Task, TrainSettings, Trainer};
use mexkit_core::ProbabilityVector;
use serde::{Deserialize, Serialize};

use super::config::{DataSource, OptimizerSpec};
use crate::error::{MexError, Result};

pub const CHECKPOINT_FORMAT: &str = "mexkit-checkpoint/1";

/// Loads a data source into memory.
pub fn load_dataset(source: &DataSource) -> Result<Dataset> {
    match source {
        DataSource::Glyphs { samples, seed, glyph } => {
            if *samples == 0 {
                return Err(MexError::Config("glyph sample count must be positive".into()));
            }
            Ok(glyph.generate(*samples, *seed))
        }
        DataSource::Csv { path, classes, labeled, .. } => {
            let shape = source.shape()?;
            read_csv(path, shape.len(), *classes, *labeled).and_then(|(x, y)| {
                Dataset::new(shape, x, y, *classes).map_err(MexError::from)
            })
        }
    }
}

/// Reads headerless numeric rows. `#` starts a comment line. With
/// `labeled`, the last column is the integer class.
fn read_csv(path: &Path, dim: usize, classes: usize, labeled: bool) -> Result<(Vec<f64>, Option<Vec<usize>>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| MexError::Config(format!("{}: {e}", path.display())))?;
    let width = dim + usize::from(labeled);
    let mut features = Vec::new();
    let mut labels = Vec::new();
    for row in reader.records() {
        let row = row.map_err(|e| MexError::Config(format!("{}: {e}", path.display())))?;
        let line = row.position().map_or(0, |p| p.line());
        let schema = |reason: String| MexError::SchemaViolation {
            path: path.to_path_buf(),
            line,
            reason,
        };
        if row.len() != width {
            return Err(schema(format!("expected {width} columns, found {}", row.len())));
        }
        for cell in row.iter().take(dim) {
            let v: f64 = cell.parse().map_err(|_| schema(format!("'{cell}' is not a number")))?;
            if !v.is_finite() {
                return Err(schema(format!("'{cell}' is not finite")));
            }
            features.push(v);
        }
        if labeled {
            let cell = &row[dim];
            let c: usize = cell.parse().map_err(|_| schema(format!("label '{cell}' is not a class index")))?;
            if c >= classes {
                return Err(schema(format!("label {c} outside {classes} classes")));
            }
            labels.push(c);
        }
    }
    if features.is_empty() {
        return Err(MexError::Config(format!("{}: no rows", path.display())));
    }
    Ok((features, labeled.then_some(labels)))
}

/// Trains a victim on one-hot labels. Defaults to Adam at `3e-3` without
/// augmentation.
pub fn train_victim(
    architecture: &str,
    data: &Dataset,
    epochs: usize,
    seed: u64,
    optimizer: Option<&OptimizerSpec>,
) -> Result<Network> {
    let labels = data
        .labels
        .as_ref()
        .ok_or_else(|| MexError::Config("victim training data must be labeled".into()))?;
    let opt = match optimizer {
        Some(spec) => spec.resolve(Task::Vision)?,
        None => OptimizerConfig {
            learning_rate: 3e-3,
            ..OptimizerConfig::defaults(OptimizerKind::Adam, Task::Vision)
        },
    };
    let spec = ModelSpec::new(architecture, data.shape, data.classes);
    let model = Network::new(&spec, derive(seed, 0))?;
    let mut pairs = Pairs::new(data.dim(), data.classes);
    for (i, &c) in labels.iter().enumerate() {
        pairs.push(data.row(i), ProbabilityVector::one_hot(c, data.classes)?.scores())?;
    }
    let settings = TrainSettings {
        batch_size: 64,
        augment: AugmentConfig::disabled(),
    };
    let mut trainer = Trainer::new(model, &opt, settings)?;
    trainer.fit_kd(&pairs, epochs, derive(seed, 1))?;
    Ok(trainer.into_model())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub role: String,
    pub seed: u64,
    pub epochs: usize,
    #[serde(default)]
    pub optimizer: Option<OptimizerConfig>,
}

/// A serialized network: spec, flat parameters and provenance metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub spec: ModelSpec,
    pub params: Vec<f64>,
    pub metadata: CheckpointMeta,
}

impl Checkpoint {
    pub fn of(net: &Network, metadata: CheckpointMeta) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            spec: net.spec().clone(),
            params: net.params().to_vec(),
            metadata,
        }
    }

    pub fn network(&self) -> Result<Network> {
        Ok(Network::from_params(&self.spec, self.params.clone())?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = File::create(path).map_err(|e| MexError::io(path, e))?;
        let mut w = BufWriter::new(f);
        serde_json::to_writer(&mut w, self).map_err(|e| MexError::Config(e.to_string()))?;
        w.flush().map_err(|e| MexError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| MexError::io(path, e))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| MexError::SchemaViolation {
            path: path.to_path_buf(),
            line: e.line() as u64,
            reason: e.to_string(),
        })?;
        if c.format != CHECKPOINT_FORMAT {
            return Err(MexError::SchemaViolation {
                path: path.to_path_buf(),
                line: 1,
                reason: format!("unsupported checkpoint format '{}'", c.format),
            });
        }
        Ok(c)
    }
}

/// One row of a training trace. `fidelity` is only filled on sampled epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub epoch: usize,
    pub loss: f64,
    pub fidelity: Option<f64>,
}

pub fn write_trace(path: &Path, trace: &[TracePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| MexError::Config(format!("{}: {e}", path.display())))?;
    for p in trace {
        w.serialize(p).map_err(|e| MexError::Config(e.to_string()))?;
    }
    w.flush().map_err(|e| MexError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use mexkit_core::nn::InputShape;

    #[test]
    fn csv_rows_and_line_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        std::fs::write(&p, "# comment\n0.1,0.2,1\n0.3,0.4,0\n").unwrap();
        let (x, y) = read_csv(&p, 2, 2, true).unwrap();
        assert_eq!(x, vec![0.1, 0.2, 0.3, 0.4]);
        assert_eq!(y, Some(vec![1, 0]));
        std::fs::write(&p, "0.1,0.2,1\n0.3,zz,0\n").unwrap();
        match read_csv(&p, 2, 2, true) {
            Err(MexError::SchemaViolation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        std::fs::write(&p, "0.1,0.2,7\n").unwrap();
        assert!(read_csv(&p, 2, 2, true).is_err());
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let spec = ModelSpec::new("mlp-5", InputShape::flat(3), 2);
        let net = Network::new(&spec, 9).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        let meta = CheckpointMeta { role: "victim".into(), seed: 9, epochs: 0, optimizer: None };
        Checkpoint::of(&net, meta).save(&p).unwrap();
        let back = Checkpoint::load(&p).unwrap().network().unwrap();
        assert_eq!(back.params(), net.params());
    }
}

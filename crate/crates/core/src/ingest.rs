//! Prediction datasets: CSV I/O and synthetic generation.
//!
//! CSV layout (UTF-8, comma separated, header first):
//!
//! ```text
//! id,date,true_label,<model_1>,<model_2>,...
//! ```
//!
//! The `date` column is optional. Label cells hold exact names from the label
//! space; an empty model cell means the model made no prediction.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{validate_advantage, LabelSpace, UbtcaPmf};
use crate::rng::{self, Domain};

/// One labelled item and every model's prediction for it. Labels are 1-based
/// indices into the dataset's [`LabelSpace`]; `predictions` is aligned with
/// [`Dataset::models`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PredictionRecord {
    pub id: String,
    pub date: Option<String>,
    pub true_label: usize,
    pub predictions: Vec<Option<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dataset {
    labels: LabelSpace,
    models: Vec<String>,
    records: Vec<PredictionRecord>,
}

const RESERVED_COLUMNS: [&str; 3] = ["id", "date", "true_label"];

impl Dataset {
    pub fn new(labels: LabelSpace, models: Vec<String>, records: Vec<PredictionRecord>) -> Result<Self> {
        let mut names = HashSet::new();
        for m in &models {
            if m.is_empty() || RESERVED_COLUMNS.contains(&m.as_str()) {
                return Err(Error::invalid(format!("invalid model name {m:?}")));
            }
            if !names.insert(m.as_str()) {
                return Err(Error::invalid(format!("duplicate model name {m:?}")));
            }
        }
        let k = labels.k();
        let mut ids = HashSet::new();
        for r in &records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::invalid(format!("duplicate record id {:?}", r.id)));
            }
            if !(1..=k).contains(&r.true_label) {
                return Err(Error::invalid(format!("record {:?}: true label {} outside 1..={k}", r.id, r.true_label)));
            }
            if r.predictions.len() != models.len() {
                return Err(Error::invalid(format!(
                    "record {:?} has {} predictions for {} models",
                    r.id,
                    r.predictions.len(),
                    models.len()
                )));
            }
            if let Some(p) = r.predictions.iter().flatten().find(|p| !(1..=k).contains(*p)) {
                return Err(Error::invalid(format!("record {:?}: predicted label {p} outside 1..={k}", r.id)));
            }
        }
        Ok(Self { labels, models, records })
    }

    pub fn labels(&self) -> &LabelSpace {
        &self.labels
    }

    pub fn models(&self) -> &[String] {
        &self.models
    }

    pub fn records(&self) -> &[PredictionRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn model_index(&self, name: &str) -> Result<usize> {
        self.models
            .iter()
            .position(|m| m == name)
            .ok_or_else(|| Error::invalid(format!("unknown model {name:?}")))
    }

    pub fn true_labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.true_label).collect()
    }

    /// Every prediction of `name`; errors on the first missing cell.
    pub fn model_column(&self, name: &str) -> Result<Vec<usize>> {
        let col = self.model_index(name)?;
        self.records
            .iter()
            .map(|r| {
                r.predictions[col].ok_or_else(|| {
                    Error::invalid(format!("record {:?} has no prediction for model {name:?}", r.id))
                })
            })
            .collect()
    }
}

/// Reads a predictions CSV from any reader; `source` names it in errors.
pub fn read_predictions_from<R: Read>(reader: R, labels: &LabelSpace, source: &str) -> Result<Dataset> {
    let schema = |line: u64, message: String| Error::Schema {
        path: source.to_string(),
        line,
        message,
    };
    let mut csv = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = csv.headers()?.clone();
    let columns: Vec<&str> = header.iter().collect();
    if columns.first() != Some(&"id") {
        return Err(schema(1, "first column must be `id`".into()));
    }
    let has_date = columns.get(1) == Some(&"date");
    let label_col = if has_date { 2 } else { 1 };
    if columns.get(label_col) != Some(&"true_label") {
        return Err(schema(1, "missing `true_label` column".into()));
    }
    let models: Vec<String> = columns[label_col + 1..].iter().map(|s| s.to_string()).collect();
    if models.is_empty() {
        return Err(schema(1, "no model columns".into()));
    }

    let lookup = |line: u64, cell: &str| {
        labels
            .index_of(cell)
            .ok_or_else(|| schema(line, format!("unknown label {cell:?}")))
    };
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        if row.len() != columns.len() {
            return Err(schema(line, format!("expected {} fields, found {}", columns.len(), row.len())));
        }
        let id = row[0].to_string();
        if !ids.insert(id.clone()) {
            return Err(schema(line, format!("duplicate id {id:?}")));
        }
        let date = has_date.then(|| row[1].to_string()).filter(|d| !d.is_empty());
        let true_label = lookup(line, &row[label_col])?;
        let predictions = row
            .iter()
            .skip(label_col + 1)
            .map(|cell| if cell.is_empty() { Ok(None) } else { lookup(line, cell).map(Some) })
            .collect::<Result<_>>()?;
        records.push(PredictionRecord {
            id,
            date,
            true_label,
            predictions,
        });
    }
    Dataset::new(labels.clone(), models, records)
}

pub fn read_predictions(path: impl AsRef<Path>, labels: &LabelSpace) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_predictions_from(file, labels, &path.display().to_string())
}

/// Writes the dataset; the `date` column appears when any record has a date.
pub fn write_predictions_to<W: Write>(writer: W, dataset: &Dataset) -> Result<()> {
    let has_date = dataset.records.iter().any(|r| r.date.is_some());
    let mut csv = csv::Writer::from_writer(writer);
    let mut header = vec!["id"];
    if has_date {
        header.push("date");
    }
    header.push("true_label");
    header.extend(dataset.models.iter().map(String::as_str));
    csv.write_record(&header)?;

    let name = |label: usize| dataset.labels.name(label).expect("validated label");
    for r in &dataset.records {
        let mut row = vec![r.id.as_str()];
        if has_date {
            row.push(r.date.as_deref().unwrap_or(""));
        }
        row.push(name(r.true_label));
        row.extend(r.predictions.iter().map(|p| p.map_or("", name)));
        csv.write_record(&row)?;
    }
    csv.flush().map_err(|e| Error::io("<csv writer>", e))?;
    Ok(())
}

pub fn write_predictions(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_predictions_to(file, dataset).map_err(|e| match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    })
}

/// Class frequencies of the sentiment replication profile
/// (Negative, Neutral, Positive).
pub const SENTIMENT_CLASS_PROBS: [f64; 3] = [0.31, 0.27, 0.42];

/// A synthetic model: a name and its advantage over chance.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticModel {
    pub name: String,
    pub advantage: f64,
}

impl SyntheticModel {
    pub fn new(name: impl Into<String>, advantage: f64) -> Self {
        Self {
            name: name.into(),
            advantage,
        }
    }
}

/// Draws `rows` records. Each row samples its true label from `class_probs`;
/// then with probability `rho` a single uniform is shared by every model
/// (comonotone common cause), otherwise each model draws its own. Each model's
/// marginal stays exactly its uniformly biased distribution around the row's
/// true label. Row `r` uses stream `r`, so output depends only on the inputs.
pub fn generate_synthetic(
    labels: &LabelSpace,
    class_probs: &[f64],
    models: &[SyntheticModel],
    rho: f64,
    rows: usize,
    seed: u64,
) -> Result<Dataset> {
    let k = labels.k();
    if class_probs.len() != k {
        return Err(Error::invalid(format!(
            "class_probs has {} entries for {k} classes",
            class_probs.len()
        )));
    }
    if class_probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
        return Err(Error::invalid("class probabilities must be finite and non-negative"));
    }
    let total: f64 = class_probs.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::invalid(format!("class probabilities sum to {total}, not 1")));
    }
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::domain(format!("rho must lie in [0, 1], got {rho}")));
    }
    if models.is_empty() {
        return Err(Error::invalid("need at least one model"));
    }
    let pmfs = models
        .iter()
        .map(|m| {
            validate_advantage(k, m.advantage).map_err(|e| Error::Domain(format!("model {:?}: {e}", m.name)))?;
            UbtcaPmf::new(k, m.advantage)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cumulative: Vec<f64> = class_probs
        .iter()
        .scan(0.0, |acc, p| {
            *acc += p;
            Some(*acc)
        })
        .collect();
    *cumulative.last_mut().unwrap() = f64::INFINITY;

    let width = rows.to_string().len();
    let records = (0..rows)
        .map(|r| {
            let mut rng = rng::stream(seed, Domain::Generate, 0, r as u64);
            let u: f64 = rng.gen();
            let true_label = cumulative.iter().position(|&c| u < c).unwrap() + 1;
            let shared = rho > 0.0 && rng.gen::<f64>() < rho;
            let common: f64 = rng.gen();
            let predictions = pmfs
                .iter()
                .map(|pmf| {
                    let u = if shared { common } else { rng.gen() };
                    Some(pmf.label_from_uniform(u, true_label))
                })
                .collect();
            PredictionRecord {
                id: format!("r{:0width$}", r + 1),
                date: None,
                true_label,
                predictions,
            }
        })
        .collect();
    Dataset::new(labels.clone(), models.iter().map(|m| m.name.clone()).collect(), records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SAMPLE: &str = "id,date,true_label,gpt,bert\n\
                          a1,2023-01-02,Positive,Positive,Neutral\n\
                          a2,2023-01-03,Negative,Negative,Negative\n\
                          a3,2023-01-04,Indecisive,Positive,\n";

    #[test]
    fn reads_well_formed_file() {
        let ds = read_predictions_from(SAMPLE.as_bytes(), &LabelSpace::sentiment(), "sample").unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.models(), &["gpt".to_string(), "bert".to_string()]);
        assert_eq!(ds.records()[2].true_label, 2);
        assert_eq!(ds.records()[2].predictions, vec![Some(3), None]);
        assert_eq!(ds.records()[0].date.as_deref(), Some("2023-01-02"));
        assert!(ds.model_column("bert").is_err());
        assert_eq!(ds.model_column("gpt").unwrap(), vec![3, 1, 3]);
    }

    #[test]
    fn rejects_unknown_label_with_line() {
        let text = "id,true_label,m\nx,Positive,Positive\ny,Bullish,Positive\n";
        let err = read_predictions_from(text.as_bytes(), &LabelSpace::sentiment(), "f.csv").unwrap_err();
        match err {
            Error::Schema { line, message, .. } => {
                assert_eq!(line, 3);
                assert!(message.contains("Bullish"));
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        let ds = read_predictions_from("id,true_label,m\n".as_bytes(), &LabelSpace::sentiment(), "f").unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn schema_errors() {
        let labels = LabelSpace::sentiment();
        for text in [
            "",
            "name,true_label,m\n",
            "id,label,m\n",
            "id,true_label\n",
            "id,true_label,m\nx,Positive,Positive\nx,Positive,Positive\n",
            "id,true_label,m\nx,Positive\n",
        ] {
            assert!(read_predictions_from(text.as_bytes(), &labels, "f").is_err(), "{text:?}");
        }
    }

    #[test]
    fn neutral_is_written_for_indecisive() {
        let ds = read_predictions_from(SAMPLE.as_bytes(), &LabelSpace::sentiment(), "s").unwrap();
        let mut out = Vec::new();
        write_predictions_to(&mut out, &ds).unwrap();
        let text = String::from_utf8(out).unwrap();
        assert!(text.contains("a3,2023-01-04,Neutral,Positive,\n"), "{text}");
        assert!(!text.contains("Indecisive"));
    }

    #[test]
    fn generator_examples() {
        let labels = LabelSpace::sentiment();
        let models = [SyntheticModel::new("m1", 0.2), SyntheticModel::new("m2", 0.1)];
        let ds = generate_synthetic(&labels, &SENTIMENT_CLASS_PROBS, &models, 1.0, 500, 3).unwrap();
        // identical advantages would copy; different ones stay comonotone
        let same = [SyntheticModel::new("m1", 0.2), SyntheticModel::new("m2", 0.2)];
        let ds2 = generate_synthetic(&labels, &SENTIMENT_CLASS_PROBS, &same, 1.0, 500, 3).unwrap();
        assert_eq!(ds2.model_column("m1").unwrap(), ds2.model_column("m2").unwrap());
        // the weaker model is right only where the stronger one is
        let (a, b) = (ds.model_column("m1").unwrap(), ds.model_column("m2").unwrap());
        for ((r, x), y) in ds.records().iter().zip(a).zip(b) {
            if y == r.true_label {
                assert_eq!(x, r.true_label);
            }
        }

        let perfect = [SyntheticModel::new("oracle", 2.0 / 3.0)];
        let ds = generate_synthetic(&labels, &SENTIMENT_CLASS_PROBS, &perfect, 0.0, 1000, 1).unwrap();
        assert_eq!(ds.model_column("oracle").unwrap(), ds.true_labels());
    }

    #[test]
    fn generator_validation() {
        let labels = LabelSpace::sentiment();
        let m = [SyntheticModel::new("m", 0.1)];
        assert!(generate_synthetic(&labels, &[0.5, 0.5], &m, 0.0, 10, 1).is_err());
        assert!(generate_synthetic(&labels, &[0.5, 0.3, 0.3], &m, 0.0, 10, 1).is_err());
        assert!(generate_synthetic(&labels, &SENTIMENT_CLASS_PROBS, &m, 1.2, 10, 1).is_err());
        assert!(generate_synthetic(&labels, &SENTIMENT_CLASS_PROBS, &[], 0.0, 10, 1).is_err());
        let bad = [SyntheticModel::new("m", 0.8)];
        assert!(generate_synthetic(&labels, &SENTIMENT_CLASS_PROBS, &bad, 0.0, 10, 1).is_err());
    }

    #[test]
    fn generator_marginals() {
        let labels = LabelSpace::sentiment();
        let models = [SyntheticModel::new("m1", 0.2), SyntheticModel::new("m2", 0.05)];
        let rows = 100_000;
        for rho in [0.0, 0.7] {
            let ds = generate_synthetic(&labels, &SENTIMENT_CLASS_PROBS, &models, rho, rows, 17).unwrap();
            let truth = ds.true_labels();
            for m in &models {
                let hits = ds.model_column(&m.name).unwrap().iter().zip(&truth).filter(|(p, t)| p == t).count();
                let p = 1.0 / 3.0 + m.advantage;
                let se = (p * (1.0 - p) / rows as f64).sqrt();
                assert!((hits as f64 / rows as f64 - p).abs() <= 4.0 * se, "{} rho={rho}", m.name);
            }
            for (c, &p) in SENTIMENT_CLASS_PROBS.iter().enumerate() {
                let freq = truth.iter().filter(|&&t| t == c + 1).count() as f64 / rows as f64;
                let se = (p * (1.0 - p) / rows as f64).sqrt();
                assert!((freq - p).abs() <= 4.0 * se);
            }
        }
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.csv");
        let ds = read_predictions_from(SAMPLE.as_bytes(), &LabelSpace::sentiment(), "s").unwrap();
        write_predictions(&path, &ds).unwrap();
        assert_eq!(read_predictions(&path, &LabelSpace::sentiment()).unwrap(), ds);
        assert!(matches!(read_predictions(dir.path().join("missing.csv"), ds.labels()), Err(Error::Io { .. })));
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity(
            rows in proptest::collection::vec(
                (1usize..=3, proptest::collection::vec(proptest::option::weighted(0.9, 1usize..=3), 2), proptest::option::of("[0-9]{4}-[0-9]{2}-[0-9]{2}")),
                0..40,
            ),
        ) {
            let records = rows
                .into_iter()
                .enumerate()
                .map(|(i, (t, preds, date))| PredictionRecord { id: format!("id,{i}\"q"), date, true_label: t, predictions: preds })
                .collect();
            let ds = Dataset::new(LabelSpace::sentiment(), vec!["m one".into(), "m,two".into()], records).unwrap();
            let mut buf = Vec::new();
            write_predictions_to(&mut buf, &ds).unwrap();
            let back = read_predictions_from(buf.as_slice(), &LabelSpace::sentiment(), "mem").unwrap();
            prop_assert_eq!(back, ds);
        }
    }
}

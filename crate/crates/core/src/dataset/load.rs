//! CSV ingestion driven by a small TOML schema.
//!
//! ```toml
//! label_column = "label"
//! negative_labels = ["normal"]      # or positive_labels = [...]
//! ignore = ["difficulty"]
//!
//! [[categorical]]
//! column = "protocol_type"
//! categories = ["tcp", "udp", "icmp"]
//! encoding = "onehot"               # or "ordinal"
//! ```
//!
//! Columns that are neither label, ignored, nor categorical are numeric features
//! (restricted to `features` when that list is given). Output columns follow header
//! order, with one-hot columns expanded in place as `column=category`.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Class, LabeledDataset};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CategoricalEncoding {
    #[default]
    Onehot,
    Ordinal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub column: String,
    pub categories: Vec<String>,
    #[serde(default)]
    pub encoding: CategoricalEncoding,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub label_column: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub positive_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negative_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<String>>,
    #[serde(default)]
    pub ignore: Vec<String>,
    #[serde(default)]
    pub categorical: Vec<CategoricalColumn>,
}

impl Schema {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let schema: Schema = toml::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// Schema of files written by [`write_labeled_csv`].
    pub fn labeled() -> Self {
        Schema {
            label_column: "label".into(),
            positive_labels: Some(vec!["positive".into()]),
            ..Default::default()
        }
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Schema(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        match (&self.positive_labels, &self.negative_labels) {
            (Some(_), None) | (None, Some(_)) => {}
            _ => {
                return Err(Error::Schema(
                    "exactly one of positive_labels / negative_labels must be given".into(),
                ))
            }
        }
        for c in &self.categorical {
            if c.categories.is_empty() {
                return Err(Error::Schema(format!("categorical column `{}` lists no categories", c.column)));
            }
        }
        Ok(())
    }

    fn is_positive(&self, label: &str) -> bool {
        match (&self.positive_labels, &self.negative_labels) {
            (Some(pos), _) => pos.iter().any(|p| p == label),
            (None, Some(neg)) => !neg.iter().any(|n| n == label),
            (None, None) => unreachable!("validated"),
        }
    }
}

enum ColumnPlan {
    Numeric,
    Categorical {
        index: HashMap<String, usize>,
        encoding: CategoricalEncoding,
    },
}

pub fn load_csv(path: impl AsRef<Path>, schema: &Schema) -> Result<LabeledDataset> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(file, schema)
}

pub fn load_csv_reader<R: Read>(reader: R, schema: &Schema) -> Result<LabeledDataset> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let position = |name: &str| -> Result<usize> {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };

    let label_idx = position(&schema.label_column)?;
    let ignored: HashSet<usize> = schema.ignore.iter().map(|c| position(c)).collect::<Result<_>>()?;
    let mut categorical: HashMap<usize, &CategoricalColumn> = HashMap::new();
    for c in &schema.categorical {
        categorical.insert(position(&c.column)?, c);
    }
    let wanted: Option<HashSet<usize>> = match &schema.features {
        Some(list) => Some(list.iter().map(|c| position(c)).collect::<Result<_>>()?),
        None => None,
    };

    let mut plan: Vec<(usize, ColumnPlan)> = Vec::new();
    let mut names = Vec::new();
    for (i, name) in header.iter().enumerate() {
        if i == label_idx || ignored.contains(&i) {
            continue;
        }
        if let Some(cat) = categorical.get(&i) {
            let index = cat
                .categories
                .iter()
                .enumerate()
                .map(|(k, v)| (v.clone(), k))
                .collect();
            match cat.encoding {
                CategoricalEncoding::Onehot => {
                    names.extend(cat.categories.iter().map(|v| format!("{name}={v}")))
                }
                CategoricalEncoding::Ordinal => names.push(name.clone()),
            }
            plan.push((
                i,
                ColumnPlan::Categorical {
                    index,
                    encoding: cat.encoding,
                },
            ));
        } else if wanted.as_ref().is_none_or(|w| w.contains(&i)) {
            names.push(name.clone());
            plan.push((i, ColumnPlan::Numeric));
        }
    }

    let width = names.len();
    let mut values = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record.map_err(|e| Error::Parse {
            row,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(Error::Parse {
                row,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (col, p) in &plan {
            let field = &record[*col];
            match p {
                ColumnPlan::Numeric => {
                    let v: f64 = field.parse().map_err(|_| Error::Parse {
                        row,
                        message: format!("column `{}`: `{field}` is not numeric", header[*col]),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Parse {
                            row,
                            message: format!("column `{}`: non-finite value", header[*col]),
                        });
                    }
                    values.push(v);
                }
                ColumnPlan::Categorical { index, encoding } => {
                    let k = *index.get(field).ok_or_else(|| {
                        Error::Schema(format!(
                            "row {row}: unknown category `{field}` in column `{}`",
                            header[*col]
                        ))
                    })?;
                    match encoding {
                        CategoricalEncoding::Onehot => {
                            values.extend((0..index.len()).map(|j| if j == k { 1.0 } else { 0.0 }))
                        }
                        CategoricalEncoding::Ordinal => values.push(k as f64),
                    }
                }
            }
        }
        labels.push(if schema.is_positive(&record[label_idx]) {
            Class::Positive
        } else {
            Class::Negative
        });
    }
    let features = Array2::from_shape_vec((labels.len(), width), values)
        .expect("every row pushes exactly `width` values");
    LabeledDataset::new(features, labels, names)
}

/// Writes features plus a `label` column of `positive` / `negative`, the layout
/// read back by [`Schema::labeled`].
pub fn write_labeled_csv<W: Write>(writer: W, data: &LabeledDataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<&str> = data.feature_names().iter().map(String::as_str).collect();
    header.push("label");
    w.write_record(&header)?;
    for (row, c) in data.features().outer_iter().zip(data.labels()) {
        let mut rec: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        rec.push(if *c == Class::Positive { "positive" } else { "negative" }.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

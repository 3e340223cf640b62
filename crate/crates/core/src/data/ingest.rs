use std::collections::HashMap;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::{Column, ColumnData, Dataset, Role, VariableKind};
use crate::error::{Error, Result};
use crate::glm::Family;

/// Column kinds as written in a schema file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Nominal,
    Ordinal,
    Metric,
    Binary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub kind: KindName,
    pub role: Role,
    /// Level labels in order. Mandatory order for ordinal labels that are not
    /// integers; for nominal columns it fixes the coding, otherwise levels are
    /// coded by first appearance.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub levels: Option<Vec<String>>,
}

/// Schema file: which column is the response and how every predictor enters.
///
/// ```json
/// {
///   "response": "rent",
///   "family": "gaussian",
///   "columns": [
///     {"name": "district", "kind": "nominal", "role": "tree"},
///     {"name": "rooms", "kind": "ordinal", "role": "tree", "levels": ["1", "2", "3"]},
///     {"name": "area", "kind": "metric", "role": "smooth"},
///     {"name": "kitchen", "kind": "binary", "role": "linear"}
///   ]
/// }
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub response: String,
    #[serde(default)]
    pub family: Family,
    pub columns: Vec<ColumnSpec>,
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Schema> {
        Ok(serde_json::from_str(text)?)
    }
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("na") || f.eq_ignore_ascii_case("nan")
}

fn parse_number(field: &str, row: usize, column: &str) -> Result<f64> {
    if is_missing(field) {
        return Err(Error::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    field
        .trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::NonNumeric {
            row,
            column: column.to_string(),
            value: field.to_string(),
        })
}

/// Parse comma-delimited text with a header row into a typed [`Dataset`].
///
/// Rows are numbered from 1 (the first data row) in error messages. Columns
/// present in the file but absent from the schema are ignored.
pub fn ingest_dataset<R: Read>(table: R, schema: &Schema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(table);
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let position: HashMap<&str, usize> = headers
        .iter()
        .enumerate()
        .map(|(i, h)| (h.as_str(), i))
        .collect();

    let find = |name: &str| {
        position
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("column '{name}' not found in header")))
    };
    let response_idx = find(&schema.response)?;
    let mut seen = std::collections::HashSet::new();
    let mut col_idx = Vec::with_capacity(schema.columns.len());
    for spec in &schema.columns {
        if spec.name == schema.response || !seen.insert(spec.name.as_str()) {
            return Err(Error::Schema(format!(
                "column '{}' listed twice or as both response and predictor",
                spec.name
            )));
        }
        col_idx.push(find(&spec.name)?);
    }

    let mut records = Vec::new();
    for rec in reader.records() {
        records.push(rec?);
    }

    let mut response = Vec::with_capacity(records.len());
    for (i, rec) in records.iter().enumerate() {
        let field = rec.get(response_idx).unwrap_or("");
        let y = parse_number(field, i + 1, &schema.response)?;
        if schema.family == Family::Binomial && y != 0.0 && y != 1.0 {
            return Err(Error::NonNumeric {
                row: i + 1,
                column: schema.response.clone(),
                value: field.to_string(),
            });
        }
        response.push(y);
    }

    let mut columns = Vec::with_capacity(schema.columns.len());
    for (spec, &idx) in schema.columns.iter().zip(&col_idx) {
        let raw: Vec<&str> = records.iter().map(|r| r.get(idx).unwrap_or("")).collect();
        columns.push(parse_column(spec, &raw)?);
    }

    Dataset::new(schema.response.clone(), schema.family, response, columns)
}

fn parse_column(spec: &ColumnSpec, raw: &[&str]) -> Result<Column> {
    let name = spec.name.clone();
    for (i, field) in raw.iter().enumerate() {
        if is_missing(field) {
            return Err(Error::MissingValue {
                row: i + 1,
                column: name,
            });
        }
    }
    let (kind, data, labels) = match spec.kind {
        KindName::Metric => {
            let v = raw
                .iter()
                .enumerate()
                .map(|(i, f)| parse_number(f, i + 1, &name))
                .collect::<Result<Vec<_>>>()?;
            (VariableKind::Metric, ColumnData::Values(v), Vec::new())
        }
        KindName::Binary => {
            let mut v = Vec::with_capacity(raw.len());
            for (i, f) in raw.iter().enumerate() {
                let x = parse_number(f, i + 1, &name)?;
                if x != 0.0 && x != 1.0 {
                    return Err(Error::UnknownLevel {
                        row: i + 1,
                        column: name,
                        value: f.to_string(),
                    });
                }
                v.push(x);
            }
            (VariableKind::Binary, ColumnData::Values(v), Vec::new())
        }
        KindName::Ordinal | KindName::Nominal => {
            let labels = match (&spec.levels, spec.kind) {
                (Some(levels), _) => levels.clone(),
                (None, KindName::Ordinal) => integer_levels(raw, &name)?,
                (None, _) => {
                    let mut labels: Vec<String> = Vec::new();
                    for f in raw {
                        if !labels.iter().any(|l| l == f) {
                            labels.push(f.to_string());
                        }
                    }
                    labels
                }
            };
            if labels.len() < 2 {
                return Err(Error::Schema(format!(
                    "column '{name}' needs at least 2 levels, found {}",
                    labels.len()
                )));
            }
            let lookup: HashMap<&str, u32> = labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.as_str(), i as u32 + 1))
                .collect();
            if lookup.len() != labels.len() {
                return Err(Error::Schema(format!("column '{name}' has duplicate levels")));
            }
            let mut codes = Vec::with_capacity(raw.len());
            let mut counts = vec![0usize; labels.len()];
            for (i, f) in raw.iter().enumerate() {
                let code = *lookup.get(f).ok_or_else(|| Error::UnknownLevel {
                    row: i + 1,
                    column: name.clone(),
                    value: f.to_string(),
                })?;
                counts[code as usize - 1] += 1;
                codes.push(code);
            }
            if let Some(empty) = counts.iter().position(|&c| c == 0) {
                return Err(Error::EmptyLevel {
                    column: name,
                    level: labels[empty].clone(),
                });
            }
            let k = labels.len();
            let kind = if spec.kind == KindName::Ordinal {
                VariableKind::Ordinal { levels: k }
            } else {
                VariableKind::Nominal { levels: k }
            };
            (kind, ColumnData::Codes(codes), labels)
        }
    };
    Ok(Column {
        name,
        kind,
        role: spec.role,
        data,
        labels,
    })
}

/// Ordinal columns without explicit labels must carry integer codes; their
/// numeric order is the level order.
fn integer_levels(raw: &[&str], name: &str) -> Result<Vec<String>> {
    let mut values = Vec::new();
    for (i, f) in raw.iter().enumerate() {
        let v: i64 = f.trim().parse().map_err(|_| {
            Error::Schema(format!(
                "ordinal column '{name}' has non-integer value '{f}' at row {} and no level list",
                i + 1
            ))
        })?;
        values.push(v);
    }
    values.sort_unstable();
    values.dedup();
    Ok(values.iter().map(|v| v.to_string()).collect())
}

impl Dataset {
    /// Schema that re-ingests [`Dataset::write_csv`] output to an identical dataset.
    pub fn schema(&self) -> Schema {
        Schema {
            response: self.response_name.clone(),
            family: self.family,
            columns: self
                .columns
                .iter()
                .map(|c| ColumnSpec {
                    name: c.name.clone(),
                    kind: match c.kind {
                        VariableKind::Nominal { .. } => KindName::Nominal,
                        VariableKind::Ordinal { .. } => KindName::Ordinal,
                        VariableKind::Metric => KindName::Metric,
                        VariableKind::Binary => KindName::Binary,
                    },
                    role: c.role,
                    levels: c.kind.is_categorical().then(|| c.labels.clone()),
                })
                .collect(),
        }
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec![self.response_name.clone()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for row in 0..self.n() {
            let mut rec = vec![format_number(self.response[row])];
            for c in &self.columns {
                rec.push(match &c.data {
                    ColumnData::Codes(codes) => c.label(codes[row]),
                    ColumnData::Values(v) => format_number(v[row]),
                });
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn format_number(v: f64) -> String {
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema(columns: Vec<ColumnSpec>) -> Schema {
        Schema {
            response: "y".into(),
            family: Family::Gaussian,
            columns,
        }
    }

    fn ordinal(name: &str, levels: Option<&[&str]>) -> ColumnSpec {
        ColumnSpec {
            name: name.into(),
            kind: KindName::Ordinal,
            role: Role::Tree,
            levels: levels.map(|l| l.iter().map(|s| s.to_string()).collect()),
        }
    }

    #[test]
    fn three_row_ordinal() {
        let d = ingest_dataset("y,z\n1,1\n2,2\n3,2\n".as_bytes(), &schema(vec![ordinal("z", None)])).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.response, vec![1.0, 2.0, 3.0]);
        assert_eq!(d.columns[0].kind, VariableKind::Ordinal { levels: 2 });
        assert_eq!(d.columns[0].codes().unwrap(), &[1, 2, 2]);
    }

    #[test]
    fn unobserved_ordinal_level_is_rejected() {
        let s = schema(vec![ordinal("z", Some(&["lo", "mid", "hi"]))]);
        let err = ingest_dataset("y,z\n1,lo\n2,hi\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(err, Error::EmptyLevel { ref level, .. } if level == "mid"));
        assert!(err.to_string().contains("empty level"));
    }

    #[test]
    fn ordinal_labels_keep_schema_order() {
        let s = schema(vec![ordinal("z", Some(&["good", "fair", "poor"]))]);
        let d = ingest_dataset("y,z\n1,poor\n2,good\n3,fair\n".as_bytes(), &s).unwrap();
        assert_eq!(d.columns[0].codes().unwrap(), &[3, 1, 2]);
    }

    #[test]
    fn nominal_codes_follow_first_appearance() {
        let s = schema(vec![ColumnSpec {
            name: "z".into(),
            kind: KindName::Nominal,
            role: Role::Tree,
            levels: None,
        }]);
        let d = ingest_dataset("y,z\n1,b\n2,a\n3,b\n4,c\n".as_bytes(), &s).unwrap();
        assert_eq!(d.columns[0].codes().unwrap(), &[1, 2, 1, 3]);
        assert_eq!(d.columns[0].labels, vec!["b", "a", "c"]);
    }

    #[test]
    fn missing_value_reports_row_and_column() {
        let s = schema(vec![ordinal("z", None)]);
        let err = ingest_dataset("y,z\n1,1\n2,\n".as_bytes(), &s).unwrap_err();
        match err {
            Error::MissingValue { row, column } => {
                assert_eq!(row, 2);
                assert_eq!(column, "z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_level_code() {
        let s = schema(vec![ordinal("z", Some(&["1", "2"]))]);
        let err = ingest_dataset("y,z\n1,1\n2,2\n3,7\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(err, Error::UnknownLevel { row: 3, .. }));
    }

    #[test]
    fn non_numeric_gaussian_response() {
        let s = schema(vec![ordinal("z", None)]);
        let err = ingest_dataset("y,z\nabc,1\n2,2\n".as_bytes(), &s).unwrap_err();
        assert!(matches!(err, Error::NonNumeric { row: 1, .. }));
    }

    #[test]
    fn binomial_response_must_be_binary() {
        let mut s = schema(vec![ordinal("z", None)]);
        s.family = Family::Binomial;
        assert!(ingest_dataset("y,z\n0,1\n2,2\n".as_bytes(), &s).is_err());
        assert!(ingest_dataset("y,z\n0,1\n1,2\n".as_bytes(), &s).is_ok());
    }

    #[test]
    fn schema_json_round_trip() {
        let text = r#"{"response":"y","family":"binomial","columns":[
            {"name":"a","kind":"nominal","role":"tree"},
            {"name":"b","kind":"metric","role":"smooth"}]}"#;
        let s = Schema::from_json(text).unwrap();
        assert_eq!(s.family, Family::Binomial);
        assert_eq!(s.columns[1].role, Role::Smooth);
        let again = Schema::from_json(&serde_json::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, again);
    }
}

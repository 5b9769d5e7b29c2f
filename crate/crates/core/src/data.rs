//! Observation records, CSV ingestion and dataset validation.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One unit: outcome, binary treatment indicator and pre-treatment covariates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationRecord {
    pub y: f64,
    pub d: u8,
    pub x: Vec<f64>,
}

impl ObservationRecord {
    pub fn new(y: f64, d: u8, x: Vec<f64>) -> Self {
        Self { y, d, x }
    }

    pub fn treated(&self) -> bool {
        self.d == 1
    }
}

/// An ordered collection of records sharing one covariate layout.
///
/// Construction does not enforce the invariants; call [`Dataset::validate`]
/// or [`Dataset::require_valid`] before estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<ObservationRecord>,
    pub covariate_names: Vec<String>,
    pub outcome_name: String,
    pub treatment_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Violation {
    Empty,
    NoTreatedUnits,
    NoControlUnits,
    NonFiniteOutcome {
        row: usize,
    },
    NonFiniteCovariate {
        row: usize,
        column: usize,
    },
    InvalidTreatment {
        row: usize,
        value: u8,
    },
    CovariateDimension {
        row: usize,
        expected: usize,
        found: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "dataset has no records"),
            Violation::NoTreatedUnits => write!(f, "no treated units"),
            Violation::NoControlUnits => write!(f, "no control units"),
            Violation::NonFiniteOutcome { row } => write!(f, "non-finite outcome at row {row}"),
            Violation::NonFiniteCovariate { row, column } => {
                write!(f, "non-finite covariate {column} at row {row}")
            }
            Violation::InvalidTreatment { row, value } => {
                write!(f, "treatment value {value} at row {row} is not 0 or 1")
            }
            Violation::CovariateDimension {
                row,
                expected,
                found,
            } => write!(f, "row {row} has {found} covariates, expected {expected}"),
        }
    }
}

impl Dataset {
    pub fn new(records: Vec<ObservationRecord>, covariate_names: Vec<String>) -> Self {
        Self {
            records,
            covariate_names,
            outcome_name: "y".into(),
            treatment_name: "d".into(),
        }
    }

    pub fn with_column_names(mut self, outcome: &str, treatment: &str) -> Self {
        self.outcome_name = outcome.into();
        self.treatment_name = treatment.into();
        self
    }

    pub fn n(&self) -> usize {
        self.records.len()
    }

    pub fn p(&self) -> usize {
        self.covariate_names.len()
    }

    pub fn n_treated(&self) -> usize {
        self.records.iter().filter(|r| r.treated()).count()
    }

    pub fn treatments(&self) -> Vec<u8> {
        self.records.iter().map(|r| r.d).collect()
    }

    pub fn outcomes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.y).collect()
    }

    /// Records at `indices`, in the order given.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
            covariate_names: self.covariate_names.clone(),
            outcome_name: self.outcome_name.clone(),
            treatment_name: self.treatment_name.clone(),
        }
    }

    /// One entry per failed invariant; empty iff the dataset is usable.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        if self.records.is_empty() {
            out.push(Violation::Empty);
            return out;
        }
        let p = self.p();
        for (row, r) in self.records.iter().enumerate() {
            if r.d > 1 {
                out.push(Violation::InvalidTreatment { row, value: r.d });
            }
            if !r.y.is_finite() {
                out.push(Violation::NonFiniteOutcome { row });
            }
            if r.x.len() != p {
                out.push(Violation::CovariateDimension {
                    row,
                    expected: p,
                    found: r.x.len(),
                });
            }
            for (column, v) in r.x.iter().enumerate() {
                if !v.is_finite() {
                    out.push(Violation::NonFiniteCovariate { row, column });
                }
            }
        }
        let treated = self.n_treated();
        if treated == 0 {
            out.push(Violation::NoTreatedUnits);
        }
        if self.records.iter().all(|r| r.d == 1) {
            out.push(Violation::NoControlUnits);
        }
        out
    }

    pub fn require_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Invalid(v))
        }
    }
}

pub fn validate(dataset: &Dataset) -> Vec<Violation> {
    dataset.validate()
}

fn column_index(headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| Error::MissingColumn {
            column: name.to_string(),
        })
}

fn parse_real(raw: &str, row: usize, column: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| Error::Parse {
        row,
        column: column.to_string(),
        message: format!("`{raw}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::Parse {
            row,
            column: column.to_string(),
            message: format!("`{raw}` is not finite"),
        });
    }
    Ok(v)
}

/// Read a dataset from a headed CSV file, addressing columns by name.
pub fn load_csv(
    path: impl AsRef<Path>,
    outcome_col: &str,
    treatment_col: &str,
    covariate_cols: &[String],
) -> Result<Dataset> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file, outcome_col, treatment_col, covariate_cols)
}

pub fn read_csv<R: std::io::Read>(
    reader: R,
    outcome_col: &str,
    treatment_col: &str,
    covariate_cols: &[String],
) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyInput);
    }
    let yi = column_index(&headers, outcome_col)?;
    let di = column_index(&headers, treatment_col)?;
    let xi = covariate_cols
        .iter()
        .map(|c| column_index(&headers, c))
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let cell = |i: usize| rec.get(i).unwrap_or("");
        let y = parse_real(cell(yi), row, outcome_col)?;
        let dv = parse_real(cell(di), row, treatment_col)?;
        let d = if dv == 0.0 {
            0
        } else if dv == 1.0 {
            1
        } else {
            return Err(Error::Parse {
                row,
                column: treatment_col.to_string(),
                message: format!("treatment must be 0 or 1, found `{}`", cell(di)),
            });
        };
        let x = xi
            .iter()
            .zip(covariate_cols)
            .map(|(&i, name)| parse_real(cell(i), row, name))
            .collect::<Result<Vec<_>>>()?;
        records.push(ObservationRecord { y, d, x });
    }
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(
        Dataset::new(records, covariate_cols.to_vec())
            .with_column_names(outcome_col, treatment_col),
    )
}

/// Write a dataset as CSV. `f64` display output is the shortest string that
/// parses back to the same value, so `load_csv` recovers identical records.
pub fn save_csv(dataset: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    write_csv(dataset, file)
}

pub fn write_csv<W: std::io::Write>(dataset: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![dataset.outcome_name.clone(), dataset.treatment_name.clone()];
    header.extend(dataset.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for r in &dataset.records {
        let mut row = vec![r.y.to_string(), r.d.to_string()];
        row.extend(r.x.iter().map(|v| v.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Copy a CSV adding `out_col = post_col - pre_col`.
pub fn difference_csv<R: std::io::Read, W: std::io::Write>(
    reader: R,
    writer: W,
    pre_col: &str,
    post_col: &str,
    out_col: &str,
) -> Result<usize> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let pre = column_index(&headers, pre_col)?;
    let post = column_index(&headers, post_col)?;
    let mut w = csv::Writer::from_writer(writer);
    let mut out_header: Vec<&str> = headers.iter().collect();
    out_header.push(out_col);
    w.write_record(&out_header)?;
    let mut rows = 0;
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let a = parse_real(rec.get(pre).unwrap_or(""), row, pre_col)?;
        let b = parse_real(rec.get(post).unwrap_or(""), row, post_col)?;
        let mut out: Vec<String> = rec.iter().map(str::to_string).collect();
        out.push((b - a).to_string());
        w.write_record(&out)?;
        rows += 1;
    }
    if rows == 0 {
        return Err(Error::EmptyInput);
    }
    w.flush()?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn names(v: &[&str]) -> Vec<String> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn loads_four_rows() {
        let text = "y,d,x1\n1.5,1,0.2\n2,0,0.3\n3,1,-1\n4,0,7e-3\n";
        let ds = read_csv(text.as_bytes(), "y", "d", &names(&["x1"])).unwrap();
        assert_eq!(ds.n(), 4);
        assert_eq!(ds.p(), 1);
        assert_eq!(ds.records[3], ObservationRecord::new(4.0, 0, vec![0.007]));
        assert!(ds.validate().is_empty());
    }

    #[test]
    fn treatment_two_is_a_parse_error_with_row() {
        let text = "y,d,x1\n1,1,0\n2,2,0\n";
        match read_csv(text.as_bytes(), "y", "d", &names(&["x1"])) {
            Err(Error::Parse { row, column, .. }) => {
                assert_eq!(row, 1);
                assert_eq!(column, "d");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn missing_column_is_named() {
        let text = "y,d\n1,1\n";
        match read_csv(text.as_bytes(), "y", "d", &names(&["age"])) {
            Err(Error::MissingColumn { column }) => assert_eq!(column, "age"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_garbage_cells_rejected() {
        let text = "y,d\n1,1\nNaN,0\n";
        assert!(matches!(
            read_csv(text.as_bytes(), "y", "d", &[]),
            Err(Error::Parse { row: 1, .. })
        ));
        let text = "y,d\nabc,1\n";
        assert!(matches!(
            read_csv(text.as_bytes(), "y", "d", &[]),
            Err(Error::Parse { row: 0, .. })
        ));
    }

    #[test]
    fn empty_inputs() {
        assert!(matches!(
            read_csv("".as_bytes(), "y", "d", &[]),
            Err(Error::EmptyInput) | Err(Error::MissingColumn { .. })
        ));
        assert!(matches!(
            read_csv("y,d\n".as_bytes(), "y", "d", &[]),
            Err(Error::EmptyInput)
        ));
    }

    #[test]
    fn validate_reports_each_failure() {
        let all_treated = Dataset::new(
            vec![
                ObservationRecord::new(1.0, 1, vec![]),
                ObservationRecord::new(2.0, 1, vec![]),
            ],
            vec![],
        );
        assert_eq!(all_treated.validate(), vec![Violation::NoControlUnits]);

        let mut recs: Vec<_> = (0..5)
            .map(|i| ObservationRecord::new(i as f64, (i % 2) as u8, vec![0.0]))
            .collect();
        recs[3].y = f64::NAN;
        let ds = Dataset::new(recs, names(&["x"]));
        assert_eq!(ds.validate(), vec![Violation::NonFiniteOutcome { row: 3 }]);
        assert!(matches!(ds.require_valid(), Err(Error::Invalid(_))));
    }

    #[test]
    fn difference_appends_column() {
        let text = "site,pre,post\na,10,7\nb,3,4.5\n";
        let mut out = Vec::new();
        let n = difference_csv(text.as_bytes(), &mut out, "pre", "post", "y").unwrap();
        assert_eq!(n, 2);
        assert_eq!(
            String::from_utf8(out).unwrap(),
            "site,pre,post,y\na,10,7,-3\nb,3,4.5,1.5\n"
        );
    }
}

use std::collections::HashMap;
use std::fs::File;
use std::io::Read;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::mechanisms::{
    clamp_column, clamp_value, ClampedColumn, Column, MechanismError, VariableKind, VariableSpec,
};

const CHUNK_ROWS: usize = 1 << 16;

/// Per-variable counts of entries changed during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub n: usize,
    /// Values moved into the declared range or the catch-all category.
    pub clamped: HashMap<String, usize>,
    /// Missing entries replaced by the variable's default.
    pub missing: HashMap<String, usize>,
}

impl IngestReport {
    pub fn total_clamped(&self) -> usize {
        self.clamped.values().sum()
    }
}

/// An ingested table: typed, clamped columns and the public schema.
///
/// The columns never leave the crate except through a mechanism.
#[derive(Debug, Clone)]
pub struct Dataset {
    id: String,
    schema: Vec<VariableSpec>,
    columns: Vec<Column>,
    n: usize,
    report: IngestReport,
}

impl Dataset {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn schema(&self) -> &[VariableSpec] {
        &self.schema
    }

    /// Public record count.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn report(&self) -> &IngestReport {
        &self.report
    }

    pub(crate) fn column(&self, index: usize) -> &Column {
        &self.columns[index]
    }

    /// Builds a dataset from columns already in memory, clamping them into
    /// the schema's domains.
    pub fn from_columns(
        id: impl Into<String>,
        schema: Vec<VariableSpec>,
        columns: Vec<Column>,
    ) -> Result<Self, EngineError> {
        check_schema(&schema)?;
        if columns.len() != schema.len() {
            return Err(EngineError::Schema(format!(
                "{} columns for {} variables",
                columns.len(),
                schema.len()
            )));
        }
        let n = columns.first().map_or(0, Column::len);
        if n == 0 {
            return Err(EngineError::Empty);
        }
        let mut report = IngestReport {
            n,
            ..Default::default()
        };
        let mut out = Vec::with_capacity(columns.len());
        for (spec, column) in schema.iter().zip(columns) {
            if column.len() != n {
                return Err(EngineError::Schema(format!(
                    "column `{}` has {} rows, expected {n}",
                    spec.name,
                    column.len()
                )));
            }
            let (column, changed) = clamp_in_memory(spec, column)?;
            report.clamped.insert(spec.name.clone(), changed);
            report.missing.insert(spec.name.clone(), 0);
            out.push(column);
        }
        Ok(Dataset {
            id: id.into(),
            schema,
            columns: out,
            n,
            report,
        })
    }
}

fn clamp_in_memory(spec: &VariableSpec, column: Column) -> Result<(Column, usize), EngineError> {
    let mismatch = |found: &str| {
        EngineError::Schema(format!(
            "column `{}` holds {found} values but is declared {}",
            spec.name,
            spec.kind_name()
        ))
    };
    match (&spec.kind, column) {
        (VariableKind::Numeric { .. } | VariableKind::Boolean, Column::Numeric(mut v)) => {
            let (lo, hi) = spec.range().expect("numeric kinds have a range");
            let mut changed = 0;
            for x in &mut v {
                let c = clamp_value(*x, lo, hi);
                if c != *x {
                    changed += 1;
                    *x = c;
                }
            }
            Ok((Column::Numeric(v), changed))
        }
        (VariableKind::Categorical { categories }, Column::Categorical(mut v)) => {
            let other = categories.len() as u32;
            let mut changed = 0;
            for c in &mut v {
                if *c > other {
                    changed += 1;
                    *c = other;
                }
            }
            Ok((Column::Categorical(v), changed))
        }
        (_, Column::Numeric(_)) => Err(mismatch("numeric")),
        (_, Column::Categorical(_)) => Err(mismatch("categorical")),
    }
}

fn check_schema(schema: &[VariableSpec]) -> Result<(), EngineError> {
    if schema.is_empty() {
        return Err(EngineError::Schema(
            "the schema declares no variables".into(),
        ));
    }
    let mut seen = HashMap::new();
    for v in schema {
        v.validate()?;
        if seen.insert(v.name.as_str(), ()).is_some() {
            return Err(EngineError::Schema(format!(
                "variable `{}` is declared twice",
                v.name
            )));
        }
    }
    Ok(())
}

/// Reads a CSV file whose header names exactly the schema's variables.
pub fn ingest_csv(
    id: impl Into<String>,
    path: impl AsRef<Path>,
    schema: Vec<VariableSpec>,
) -> Result<Dataset, EngineError> {
    ingest_reader(id, File::open(path)?, schema)
}

/// As [`ingest_csv`], from any reader.
pub fn ingest_reader<R: Read>(
    id: impl Into<String>,
    reader: R,
    schema: Vec<VariableSpec>,
) -> Result<Dataset, EngineError> {
    check_schema(&schema)?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
        return Err(EngineError::Empty);
    }

    let mut position = HashMap::new();
    for (i, name) in header.iter().enumerate() {
        if position.insert(name, i).is_some() {
            return Err(EngineError::Schema(format!(
                "column `{name}` appears twice in the header"
            )));
        }
        if !schema.iter().any(|v| v.name == name) {
            return Err(EngineError::Schema(format!(
                "column `{name}` is not declared in the schema"
            )));
        }
    }
    let index: Vec<usize> = schema
        .iter()
        .map(|v| {
            position.get(v.name.as_str()).copied().ok_or_else(|| {
                EngineError::Schema(format!("column `{}` is missing from the file", v.name))
            })
        })
        .collect::<Result<_, _>>()?;

    let mut columns: Vec<Column> = schema
        .iter()
        .map(|v| match v.kind {
            VariableKind::Categorical { .. } => Column::Categorical(Vec::new()),
            _ => Column::Numeric(Vec::new()),
        })
        .collect();
    let mut report = IngestReport::default();
    for v in &schema {
        report.clamped.insert(v.name.clone(), 0);
        report.missing.insert(v.name.clone(), 0);
    }

    let mut chunk: Vec<csv::StringRecord> = Vec::with_capacity(CHUNK_ROWS);
    let mut offset = 0;
    let mut record = csv::StringRecord::new();
    loop {
        let more = rdr.read_record(&mut record)?;
        if more {
            chunk.push(record.clone());
        }
        if chunk.len() == CHUNK_ROWS || (!more && !chunk.is_empty()) {
            let parsed: Vec<ClampedColumn> = schema
                .par_iter()
                .zip(index.par_iter())
                .map(|(spec, &i)| {
                    let raw: Vec<&str> = chunk.iter().map(|r| &r[i]).collect();
                    clamp_column(&raw, spec).map_err(|e| match e {
                        MechanismError::Ingestion {
                            variable,
                            row,
                            token,
                        } => MechanismError::Ingestion {
                            variable,
                            row: row + offset,
                            token,
                        },
                        other => other,
                    })
                })
                .collect::<Result<_, _>>()?;
            for ((column, part), spec) in columns.iter_mut().zip(parsed).zip(&schema) {
                *report.clamped.get_mut(&spec.name).expect("seeded") += part.clamped;
                *report.missing.get_mut(&spec.name).expect("seeded") += part.missing;
                match (column, part.column) {
                    (Column::Numeric(all), Column::Numeric(new)) => all.extend(new),
                    (Column::Categorical(all), Column::Categorical(new)) => all.extend(new),
                    _ => unreachable!("column kinds follow the schema"),
                }
            }
            offset += chunk.len();
            chunk.clear();
        }
        if !more {
            break;
        }
    }
    if offset == 0 {
        return Err(EngineError::Empty);
    }
    report.n = offset;
    Ok(Dataset {
        id: id.into(),
        schema,
        columns,
        n: offset,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> Vec<VariableSpec> {
        vec![
            VariableSpec::numeric("age", 0.0, 100.0),
            VariableSpec::categorical("color", ["red", "blue"]),
            VariableSpec::boolean("employed"),
        ]
    }

    #[test]
    fn reads_reordered_header_and_clamps() {
        let csv = "employed,age,color\n1,30,red\n0,140,green\nyes,,blue\n";
        let d = ingest_reader("t", csv.as_bytes(), schema()).unwrap();
        assert_eq!(d.n(), 3);
        assert_eq!(d.column(0), &Column::Numeric(vec![30.0, 100.0, 50.0]));
        assert_eq!(d.column(1), &Column::Categorical(vec![0, 2, 1]));
        assert_eq!(d.column(2), &Column::Numeric(vec![1.0, 0.0, 1.0]));
        assert_eq!(d.report().clamped["age"], 1);
        assert_eq!(d.report().clamped["color"], 1);
        assert_eq!(d.report().missing["age"], 1);
    }

    #[test]
    fn header_mismatch_names_the_column() {
        let err = ingest_reader("t", "age,color\n1,red\n".as_bytes(), schema()).unwrap_err();
        assert!(err.to_string().contains("employed"), "{err}");
        let err = ingest_reader(
            "t",
            "age,color,employed,zip\n1,red,1,2\n".as_bytes(),
            schema(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("zip"), "{err}");
    }

    #[test]
    fn bad_token_reports_row() {
        let mut csv = String::from("age,color,employed\n");
        for _ in 0..CHUNK_ROWS + 5 {
            csv.push_str("1,red,1\n");
        }
        csv.push_str("abc,red,1\n");
        let err = ingest_reader("t", csv.as_bytes(), schema()).unwrap_err();
        match err {
            EngineError::Mechanism(MechanismError::Ingestion { row, variable, .. }) => {
                assert_eq!(row, CHUNK_ROWS + 6);
                assert_eq!(variable, "age");
            }
            other => panic!("{other}"),
        }
    }

    #[test]
    fn empty_inputs_rejected() {
        assert!(matches!(
            ingest_reader("t", "".as_bytes(), schema()),
            Err(EngineError::Empty)
        ));
        assert!(matches!(
            ingest_reader("t", "age,color,employed\n".as_bytes(), schema()),
            Err(EngineError::Empty)
        ));
    }

    #[test]
    fn from_columns_clamps() {
        let d = Dataset::from_columns(
            "m",
            vec![VariableSpec::numeric("x", 0.0, 1.0)],
            vec![Column::Numeric(vec![-1.0, 0.5, 3.0])],
        )
        .unwrap();
        assert_eq!(d.column(0), &Column::Numeric(vec![0.0, 0.5, 1.0]));
        assert_eq!(d.report().total_clamped(), 2);
    }
}

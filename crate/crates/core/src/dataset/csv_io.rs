//! CSV ingest with schema inference, and writers that keep observed cells
//! byte-for-byte as they appeared in the source file.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::table::{Cell, ColumnKind, ColumnSchema, Table};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TypeHint {
    Numerical,
    Categorical,
}

#[derive(Clone, Debug, Default)]
pub struct CsvOptions {
    /// Extra token treated as null in addition to the empty cell.
    pub null_token: String,
    pub type_hints: HashMap<String, TypeHint>,
}

impl CsvOptions {
    pub fn with_null_token(token: impl Into<String>) -> Self {
        Self {
            null_token: token.into(),
            ..Self::default()
        }
    }

    pub fn is_null(&self, raw: &str) -> bool {
        let t = raw.trim();
        t.is_empty() || (!self.null_token.is_empty() && t == self.null_token)
    }
}

/// The untyped contents of a CSV file.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawCsv {
    pub header: Vec<String>,
    pub records: Vec<Vec<String>>,
}

impl RawCsv {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_reader(File::open(path)?)
    }

    pub fn from_reader(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.is_empty() || (header.len() == 1 && header[0].is_empty()) {
            return Err(Error::EmptyInput("csv has no header".into()));
        }
        let mut records = Vec::new();
        for rec in rdr.records() {
            records.push(rec?.iter().map(str::to_string).collect());
        }
        Ok(Self { header, records })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = File::create(path)?;
        self.write_to(file)
    }

    pub fn write_to(&self, writer: impl Write) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(&self.header)?;
        for r in &self.records {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Copy with every cell passed through `f(row, col, raw)`.
    pub fn map_cells(&self, mut f: impl FnMut(usize, usize, &str) -> String) -> RawCsv {
        RawCsv {
            header: self.header.clone(),
            records: self
                .records
                .iter()
                .enumerate()
                .map(|(i, r)| r.iter().enumerate().map(|(j, v)| f(i, j, v)).collect())
                .collect(),
        }
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<Table> {
    let raw = RawCsv::read(path)?;
    table_from_raw(&raw, options)
}

fn parse_number(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

/// Infers a schema and builds the typed table.
///
/// A column is numerical when every non-null cell parses as a finite number,
/// otherwise categorical with labels in sorted order.
pub fn table_from_raw(raw: &RawCsv, options: &CsvOptions) -> Result<Table> {
    let d = raw.header.len();
    let mut schema = Vec::with_capacity(d);
    for (j, name) in raw.header.iter().enumerate() {
        let observed = raw
            .records
            .iter()
            .map(|r| r[j].as_str())
            .filter(|v| !options.is_null(v));
        let numeric_ok = observed.clone().all(|v| parse_number(v).is_some());
        let kind = match options.type_hints.get(name) {
            Some(TypeHint::Numerical) if !numeric_ok => {
                return Err(Error::Csv {
                    row: None,
                    message: format!(
                        "column '{name}' is hinted numerical but has non-numeric cells"
                    ),
                })
            }
            Some(TypeHint::Numerical) => TypeHint::Numerical,
            Some(TypeHint::Categorical) => TypeHint::Categorical,
            None if numeric_ok => TypeHint::Numerical,
            None => TypeHint::Categorical,
        };
        schema.push(match kind {
            TypeHint::Numerical => ColumnSchema::numerical(name.clone()),
            TypeHint::Categorical => {
                let labels: BTreeSet<String> = observed.map(|v| v.trim().to_string()).collect();
                ColumnSchema::categorical(name.clone(), labels.into_iter().collect())
            }
        });
    }

    let rows = build_rows(raw, &schema, options)?;
    let mut table = Table::new(schema, rows)?;
    table.rescan_ranges();
    Ok(table)
}

/// Parses `raw` against a fixed schema, e.g. the one stored in a checkpoint.
///
/// Headers must match by name and order; unknown categorical labels and
/// non-numeric cells in numerical columns are errors.
pub fn table_with_schema(
    raw: &RawCsv,
    schema: &[ColumnSchema],
    options: &CsvOptions,
) -> Result<Table> {
    let names: Vec<&str> = schema.iter().map(|c| c.name.as_str()).collect();
    if raw
        .header
        .iter()
        .map(String::as_str)
        .ne(names.iter().copied())
    {
        return Err(Error::SchemaMismatch(format!(
            "header {:?} does not match expected columns {names:?}",
            raw.header
        )));
    }
    let mut table = Table::new(schema.to_vec(), build_rows(raw, schema, options)?)?;
    table.rescan_ranges();
    Ok(table)
}

fn build_rows(
    raw: &RawCsv,
    schema: &[ColumnSchema],
    options: &CsvOptions,
) -> Result<Vec<Vec<Cell>>> {
    let index: Vec<HashMap<&str, usize>> = schema
        .iter()
        .map(|c| {
            c.categories()
                .iter()
                .enumerate()
                .map(|(k, s)| (s.as_str(), k))
                .collect()
        })
        .collect();
    let mut rows = Vec::with_capacity(raw.records.len());
    for (r, rec) in raw.records.iter().enumerate() {
        // header is line 1
        let line = r as u64 + 2;
        let row = rec
            .iter()
            .enumerate()
            .map(|(j, v)| {
                if options.is_null(v) {
                    return Ok(Cell::Null);
                }
                match schema[j].kind {
                    ColumnKind::Numerical => {
                        parse_number(v).map(Cell::Num).ok_or_else(|| Error::Csv {
                            row: Some(line),
                            message: format!(
                                "column '{}': {v:?} is not a finite number",
                                schema[j].name
                            ),
                        })
                    }
                    ColumnKind::Categorical { .. } => index[j]
                        .get(v.trim())
                        .map(|&k| Cell::Cat(k))
                        .ok_or_else(|| {
                            Error::SchemaMismatch(format!(
                                "column '{}' has unknown category {v:?} at row {line}",
                                schema[j].name
                            ))
                        }),
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    Ok(rows)
}

/// Textual form of a cell value, as written to output CSVs.
pub fn format_cell(schema: &ColumnSchema, cell: Cell, null_token: &str) -> String {
    match cell {
        Cell::Null => null_token.to_string(),
        Cell::Num(v) => format!("{v}"),
        Cell::Cat(k) => schema.categories()[k].clone(),
    }
}

/// Writes `completed` using the source text for every non-null source cell,
/// so observed values survive byte-for-byte.
pub fn write_completed(
    source: &RawCsv,
    completed: &Table,
    options: &CsvOptions,
    path: impl AsRef<Path>,
) -> Result<()> {
    completed_raw(source, completed, options)?.write(path)
}

pub fn completed_raw(source: &RawCsv, completed: &Table, options: &CsvOptions) -> Result<RawCsv> {
    if source.records.len() != completed.n_rows() || source.header.len() != completed.n_cols() {
        return Err(Error::DimensionMismatch {
            op: "completed_raw",
            left: (source.records.len(), source.header.len()),
            right: (completed.n_rows(), completed.n_cols()),
        });
    }
    Ok(source.map_cells(|i, j, v| {
        if options.is_null(v) {
            format_cell(
                &completed.schema()[j],
                completed.get(i, j),
                &options.null_token,
            )
        } else {
            v.to_string()
        }
    }))
}

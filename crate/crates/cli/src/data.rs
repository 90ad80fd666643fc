//! CSV input: a header row, predictors first, response in the last column.

use std::path::Path;

use semiql::Dataset;

use crate::error::{CliError, Result};

pub struct Table {
    pub predictors: Vec<String>,
    pub response: String,
    pub dataset: Dataset,
}

pub fn read_dataset(path: &Path) -> Result<Table> {
    let file = std::fs::File::open(path).map_err(|source| CliError::Read {
        path: path.to_path_buf(),
        source,
    })?;
    let bad = |message: String| CliError::Csv {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| bad(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if header.len() < 2 {
        return Err(bad(format!(
            "need at least one predictor and a response column, found {} column(s)",
            header.len()
        )));
    }

    let p = header.len() - 1;
    let mut rows = Vec::new();
    let mut y = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let line = k + 2;
        let record = record.map_err(|e| bad(e.to_string()))?;
        let mut values = Vec::with_capacity(p + 1);
        for (col, field) in record.iter().enumerate() {
            let field = field.trim();
            if field.is_empty() {
                return Err(bad(format!(
                    "line {line}: missing value in column '{}'",
                    header[col]
                )));
            }
            let v: f64 = field.parse().map_err(|_| {
                bad(format!(
                    "line {line}: '{field}' in column '{}' is not a number",
                    header[col]
                ))
            })?;
            values.push(v);
        }
        y.push(values.pop().expect("record has the header's width"));
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(bad("no data rows".into()));
    }
    let dataset = Dataset::from_rows(&rows, y)?;
    let response = header[p].clone();
    let mut predictors = header;
    predictors.truncate(p);
    Ok(Table {
        predictors,
        response,
        dataset,
    })
}

//! CSV input and output of multi-site pools.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::Path;

use dsfl_core::{CommonSelector, Dataset64};

use crate::config::DataSource;
use crate::HarnessError;

pub const INTERCEPT: &str = "(intercept)";

/// Per-site design matrices built from one CSV file.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedData {
    /// Site labels in order of first appearance.
    pub site_names: Vec<String>,
    pub pools: Vec<Dataset64>,
    pub selectors: Vec<CommonSelector>,
    /// Design column names per site, intercept first.
    pub columns: Vec<Vec<String>>,
    /// Rows removed because a needed cell was missing.
    pub dropped_rows: usize,
}

fn is_missing(cell: &str) -> bool {
    matches!(cell, "" | "NA" | "na" | "NaN" | "nan" | "." | "null")
}

fn data_err(msg: String) -> HarnessError {
    HarnessError::Data(msg)
}

/// Parses a non-missing cell; `line` is the 1-based line in the file.
fn parse_cell(cell: &str, line: usize, column: &str) -> Result<f64, HarnessError> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(data_err(format!(
            "line {line}, column `{column}`: cannot parse {cell:?} as a number"
        ))),
    }
}

pub fn load_dataset(source: &DataSource) -> Result<LoadedData, HarnessError> {
    let file = std::fs::File::open(&source.path)
        .map_err(|e| data_err(format!("cannot open {}: {e}", source.path.display())))?;
    load_dataset_from_reader(file, source)
}

pub fn load_dataset_from_reader<R: Read>(reader: R, source: &DataSource) -> Result<LoadedData, HarnessError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers: Vec<String> = rdr
        .headers()
        .map_err(|e| data_err(format!("cannot read header: {e}")))?
        .iter()
        .map(str::to_string)
        .collect();
    let position: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let find = |name: &str| {
        position
            .get(name)
            .copied()
            .ok_or_else(|| data_err(format!("column `{name}` not found; header is {}", headers.join(","))))
    };
    let response = find(&source.response)?;
    let site_col = find(&source.site)?;
    if source.common.is_empty() {
        return Err(data_err("at least one common column is required".into()));
    }
    let common: Vec<usize> = source.common.iter().map(|c| find(c)).collect::<Result<_, _>>()?;
    let explicit: Option<Vec<usize>> = source
        .site_specific
        .as_ref()
        .map(|cols| cols.iter().map(|c| find(c)).collect::<Result<_, _>>())
        .transpose()?;
    let mut reserved = vec![response, site_col];
    reserved.extend(&common);
    if let Some(ex) = &explicit {
        if let Some(&dup) = ex.iter().find(|i| reserved.contains(i)) {
            return Err(data_err(format!("column `{}` listed twice", headers[dup])));
        }
    }
    for (k, &c) in common.iter().enumerate() {
        if reserved[..2 + k].contains(&c) {
            return Err(data_err(format!("column `{}` listed twice", headers[c])));
        }
    }

    // group raw records by site, keeping file line numbers
    let mut site_names: Vec<String> = Vec::new();
    let mut site_rows: Vec<Vec<(usize, csv::StringRecord)>> = Vec::new();
    let mut dropped = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| data_err(format!("line {line}: {e}")))?;
        let label = rec.get(site_col).unwrap_or("");
        if is_missing(label) {
            dropped += 1;
            continue;
        }
        let j = match site_names.iter().position(|s| s == label) {
            Some(j) => j,
            None => {
                site_names.push(label.to_string());
                site_rows.push(Vec::new());
                site_names.len() - 1
            }
        };
        site_rows[j].push((line, rec));
    }
    if site_names.is_empty() {
        return Err(data_err("no rows with a site label".into()));
    }

    let mut pools = Vec::with_capacity(site_names.len());
    let mut selectors = Vec::with_capacity(site_names.len());
    let mut columns = Vec::with_capacity(site_names.len());
    for (name, rows) in site_names.iter().zip(&site_rows) {
        let specific: Vec<usize> = match &explicit {
            Some(ex) => ex.clone(),
            None => (0..headers.len())
                .filter(|c| !reserved.contains(c))
                .filter(|&c| rows.iter().any(|(_, r)| !is_missing(r.get(c).unwrap_or(""))))
                .collect(),
        };
        let design_cols: Vec<usize> = common.iter().chain(&specific).copied().collect();
        let p = design_cols.len() + 1;
        let mut pool = Dataset64::with_capacity(p, rows.len());
        let mut x = vec![1.0; p];
        for (line, rec) in rows {
            let cell = |c: usize| rec.get(c).unwrap_or("");
            let mut complete = !is_missing(cell(response));
            for &c in &design_cols {
                if is_missing(cell(c)) {
                    complete = false;
                } else {
                    parse_cell(cell(c), *line, &headers[c])?;
                }
            }
            if !complete {
                dropped += 1;
                continue;
            }
            let y = parse_cell(cell(response), *line, &headers[response])?;
            if y != 0.0 && y != 1.0 {
                return Err(data_err(format!(
                    "line {line}, column `{}`: response must be 0 or 1, got {y}",
                    headers[response]
                )));
            }
            for (xk, &c) in x[1..].iter_mut().zip(&design_cols) {
                *xk = parse_cell(cell(c), *line, &headers[c])?;
            }
            pool.push(y, &x).map_err(|e| data_err(format!("line {line}: {e}")))?;
        }
        if pool.is_empty() {
            return Err(data_err(format!("site `{name}` has no complete rows")));
        }
        let selector = CommonSelector::new((1..=common.len()).collect(), p).map_err(|e| data_err(e.to_string()))?;
        let mut names = vec![INTERCEPT.to_string()];
        names.extend(design_cols.iter().map(|&c| headers[c].clone()));
        pools.push(pool);
        selectors.push(selector);
        columns.push(names);
    }
    Ok(LoadedData {
        site_names,
        pools,
        selectors,
        columns,
        dropped_rows: dropped,
    })
}

/// Writes pools as `y,x1..xq,site` without the intercept column. Sites with
/// fewer covariates leave the trailing cells empty; sites are labelled 1..M.
pub fn write_pools_csv<W: Write>(out: W, pools: &[Dataset64]) -> Result<(), HarnessError> {
    let q = pools.iter().map(|d| d.p().saturating_sub(1)).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["y".to_string()];
    header.extend((1..=q).map(|k| format!("x{k}")));
    header.push("site".into());
    w.write_record(&header)?;
    let mut row: Vec<String> = Vec::with_capacity(q + 2);
    for (j, pool) in pools.iter().enumerate() {
        for i in 0..pool.n() {
            row.clear();
            row.push(pool.y(i).to_string());
            let x = &pool.x(i)[1..];
            row.extend(x.iter().map(|v| v.to_string()));
            row.extend(std::iter::repeat_n(String::new(), q - x.len()));
            row.push((j + 1).to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_pools_file(path: &Path, pools: &[Dataset64]) -> Result<(), HarnessError> {
    let file = std::fs::File::create(path)?;
    write_pools_csv(std::io::BufWriter::new(file), pools)
}

//! CSV ingestion and export.
//!
//! Allotment files: `district_id,count[,weight]`. Minority-language files:
//! `county_id,x_s,x_sp,x_spe`. Rows with an empty or `NULL` field are
//! dropped with a warning; malformed numbers are errors carrying the line.

use std::io::{Read, Write};
use std::path::Path;

use dpfair::Dataset;
use log::warn;

use crate::error::CliError;
use crate::synth::{ALLOTMENT_ATTRIBUTE, MINORITY_ATTRIBUTES};

#[derive(Debug, Clone, PartialEq)]
pub struct Loaded {
    pub data: Dataset<f64>,
    pub weights: Vec<f64>,
    pub dropped_missing: usize,
    pub dropped_filter: usize,
}

fn is_missing(field: &str) -> bool {
    let f = field.trim();
    f.is_empty() || f.eq_ignore_ascii_case("null") || f.eq_ignore_ascii_case("na")
}

fn parse_count(field: &str, column: &str, line: u64) -> Result<f64, CliError> {
    let v: f64 = field
        .trim()
        .parse()
        .map_err(|_| CliError::Data(format!("line {line}: `{field}` in column {column} is not a number")))?;
    if !v.is_finite() || v < 0.0 || v.fract() != 0.0 {
        return Err(CliError::Data(format!(
            "line {line}: column {column} must be a nonnegative integer count, got {v}"
        )));
    }
    Ok(v)
}

struct Table {
    header: Vec<String>,
    rows: Vec<(u64, Vec<String>)>,
}

fn read_table(reader: impl Read) -> Result<Table, CliError> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| CliError::Data(format!("CSV header: {e}")))?
        .iter()
        .map(String::from)
        .collect();
    let mut rows = vec![];
    for rec in rdr.records() {
        let rec = rec.map_err(|e| CliError::Data(format!("CSV: {e}")))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        rows.push((line, rec.iter().map(String::from).collect()));
    }
    Ok(Table { header, rows })
}

fn column(header: &[String], name: &str) -> Result<usize, CliError> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| CliError::Data(format!("missing column `{name}` in header {header:?}")))
}

fn field(row: &[String], idx: usize) -> Option<&str> {
    row.get(idx).map(String::as_str).filter(|f| !is_missing(f))
}

/// Parses an allotment table; `min_count` drops rows below it.
pub fn read_allotment_csv(reader: impl Read, min_count: Option<f64>) -> Result<Loaded, CliError> {
    let t = read_table(reader)?;
    let id_col = column(&t.header, "district_id")?;
    let count_col = column(&t.header, ALLOTMENT_ATTRIBUTE)?;
    let weight_col = t.header.iter().position(|h| h == "weight");
    let (mut ids, mut counts, mut weights) = (vec![], vec![], vec![]);
    let (mut dropped_missing, mut dropped_filter) = (0, 0);
    for (line, row) in &t.rows {
        let (Some(id), Some(count)) = (field(row, id_col), field(row, count_col)) else {
            dropped_missing += 1;
            continue;
        };
        let weight = match weight_col {
            None => Some(1.0),
            Some(c) => match field(row, c) {
                None => None,
                Some(w) => {
                    let w: f64 = w
                        .parse()
                        .map_err(|_| CliError::Data(format!("line {line}: weight `{w}` is not a number")))?;
                    if !(w > 0.0) || !w.is_finite() {
                        return Err(CliError::Data(format!("line {line}: weight must be positive, got {w}")));
                    }
                    Some(w)
                }
            },
        };
        let Some(weight) = weight else {
            dropped_missing += 1;
            continue;
        };
        let count = parse_count(count, ALLOTMENT_ATTRIBUTE, *line)?;
        if min_count.is_some_and(|m| count < m) {
            dropped_filter += 1;
            continue;
        }
        ids.push(id.to_string());
        counts.push(count);
        weights.push(weight);
    }
    if dropped_missing > 0 {
        warn!("dropped {dropped_missing} row(s) with missing fields");
    }
    if dropped_filter > 0 {
        warn!("dropped {dropped_filter} row(s) below the minimum count");
    }
    let data = Dataset::raw(ids, vec![ALLOTMENT_ATTRIBUTE.into()], counts)?;
    Ok(Loaded {
        data,
        weights,
        dropped_missing,
        dropped_filter,
    })
}

/// Parses a minority-language table; `require_sp` drops counties with
/// `x_sp < 1`, where the second ratio of the rule is undefined.
pub fn read_minority_csv(reader: impl Read, require_sp: bool) -> Result<Loaded, CliError> {
    let t = read_table(reader)?;
    let id_col = column(&t.header, "county_id")?;
    let cols = MINORITY_ATTRIBUTES
        .iter()
        .map(|a| column(&t.header, a))
        .collect::<Result<Vec<_>, _>>()?;
    let (mut ids, mut values) = (vec![], vec![]);
    let (mut dropped_missing, mut dropped_filter) = (0, 0);
    'rows: for (line, row) in &t.rows {
        let Some(id) = field(row, id_col) else {
            dropped_missing += 1;
            continue;
        };
        let mut v = [0.0; 3];
        for (k, &c) in cols.iter().enumerate() {
            match field(row, c) {
                None => {
                    dropped_missing += 1;
                    continue 'rows;
                }
                Some(f) => v[k] = parse_count(f, MINORITY_ATTRIBUTES[k], *line)?,
            }
        }
        if require_sp && v[1] < 1.0 {
            dropped_filter += 1;
            continue;
        }
        ids.push(id.to_string());
        values.extend_from_slice(&v);
    }
    if dropped_missing > 0 {
        warn!("dropped {dropped_missing} row(s) with missing fields");
    }
    if dropped_filter > 0 {
        warn!("dropped {dropped_filter} row(s) with x_sp < 1");
    }
    let n = ids.len();
    let data = Dataset::raw(ids, MINORITY_ATTRIBUTES.iter().map(|s| s.to_string()).collect(), values)?;
    Ok(Loaded {
        data,
        weights: vec![1.0; n],
        dropped_missing,
        dropped_filter,
    })
}

pub fn load_allotment_csv(path: &Path, min_count: Option<f64>) -> Result<Loaded, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_allotment_csv(f, min_count)
}

pub fn load_minority_csv(path: &Path, require_sp: bool) -> Result<Loaded, CliError> {
    let f = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    read_minority_csv(f, require_sp)
}

/// Writes `id_header, attributes…[, weight]`.
pub fn write_dataset_csv(
    out: impl Write,
    id_header: &str,
    data: &Dataset<f64>,
    weights: Option<&[f64]>,
) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![id_header.to_string()];
    header.extend(data.attribute_names().iter().cloned());
    if weights.is_some() {
        header.push("weight".into());
    }
    let io = |e: csv::Error| CliError::Data(e.to_string());
    w.write_record(&header).map_err(io)?;
    for i in 0..data.n() {
        let mut rec = vec![data.entity_ids()[i].clone()];
        rec.extend(data.row(i).iter().map(|v| v.to_string()));
        if let Some(ws) = weights {
            rec.push(ws[i].to_string());
        }
        w.write_record(&rec).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn allotment_rows_and_defaults() {
        let src = "district_id,count,weight\na,10,2\nb,5,1.5\nc,7,1\n";
        let l = read_allotment_csv(src.as_bytes(), None).unwrap();
        assert_eq!(l.data.n(), 3);
        assert_eq!(l.weights, vec![2.0, 1.5, 1.0]);

        let l = read_allotment_csv("district_id,count\na,1\nb,2\n".as_bytes(), None).unwrap();
        assert_eq!(l.weights, vec![1.0, 1.0]);
    }

    #[test]
    fn null_rows_and_filter() {
        let src = "district_id,count\na,10\nb,NULL\nc,0\nd,3\n";
        let l = read_allotment_csv(src.as_bytes(), Some(1.0)).unwrap();
        assert_eq!(l.data.n(), 2);
        assert_eq!((l.dropped_missing, l.dropped_filter), (1, 1));
    }

    #[test]
    fn malformed_number_names_line() {
        let err = read_allotment_csv("district_id,count\na,1\nb,x7\n".as_bytes(), None).unwrap_err();
        assert!(err.to_string().contains("line 3"), "{err}");
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn minority_rows() {
        let src = "county_id,x_s,x_sp,x_spe\nloving,80,4,1\nzero,100,0,0\n";
        let l = read_minority_csv(src.as_bytes(), true).unwrap();
        assert_eq!(l.data.n(), 1);
        let r = l.data.row(0);
        assert_eq!(r[1] / r[0], 0.05);
        assert_eq!(read_minority_csv(src.as_bytes(), false).unwrap().data.n(), 2);
        let neg = "county_id,x_s,x_sp,x_spe\nq,10,-1,0\n";
        assert!(read_minority_csv(neg.as_bytes(), false).is_err());
    }

    #[test]
    fn export_round_trips() {
        let l = read_allotment_csv("district_id,count,weight\na,10,2\nb,5,1.5\n".as_bytes(), None).unwrap();
        let mut buf = vec![];
        write_dataset_csv(&mut buf, "district_id", &l.data, Some(&l.weights)).unwrap();
        let back = read_allotment_csv(buf.as_slice(), None).unwrap();
        assert_eq!(back, l);
    }
}

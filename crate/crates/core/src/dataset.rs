//! Labeled datasets and their CSV form (`x1,…,xp,y`).

use std::fmt::Display;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{validation, Error, Result};

/// Population a row was drawn from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Controls,
    Cases,
    Prospective,
}

/// `n` rows of covariates with binary labels.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    pub rows: Vec<Vec<T>>,
    pub y: Vec<u8>,
    pub source: Vec<Source>,
}

impl<T> LabeledDataset<T> {
    pub fn from_rows(rows: Vec<(Vec<T>, u8, Source)>) -> Self {
        let mut out = Self {
            rows: Vec::with_capacity(rows.len()),
            y: Vec::with_capacity(rows.len()),
            source: Vec::with_capacity(rows.len()),
        };
        for (x, y, s) in rows {
            out.rows.push(x);
            out.y.push(y);
            out.source.push(s);
        }
        out
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn num_vars(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }
}

fn header(p: usize, with_label: bool) -> Vec<String> {
    let mut h: Vec<String> = (1..=p).map(|j| format!("x{j}")).collect();
    if with_label {
        h.push("y".into());
    }
    h
}

impl<T: Display> LabeledDataset<T> {
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(header(self.num_vars(), true))?;
        for (x, y) in self.rows.iter().zip(&self.y) {
            let mut rec: Vec<String> = x.iter().map(ToString::to_string).collect();
            rec.push(y.to_string());
            wr.write_record(rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

impl<T: FromStr> LabeledDataset<T> {
    /// Reads `x1,…,xp,y`; row provenance is unknown and recorded as prospective.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let (p, records) = read_records(r, true)?;
        let mut rows = Vec::with_capacity(records.len());
        for rec in records {
            let label: u8 = match rec[p].as_str() {
                "0" => 0,
                "1" => 1,
                other => return Err(validation(format!("label must be 0 or 1, got '{other}'"))),
            };
            rows.push((parse_fields(&rec[..p])?, label, Source::Prospective));
        }
        Ok(Self::from_rows(rows))
    }
}

fn parse_fields<T: FromStr>(fields: &[String]) -> Result<Vec<T>> {
    fields
        .iter()
        .map(|f| f.trim().parse::<T>().map_err(|_| validation(format!("cannot parse value '{f}'"))))
        .collect()
}

fn read_records<R: Read>(r: R, with_label: bool) -> Result<(usize, Vec<Vec<String>>)> {
    let mut rd = csv::Reader::from_reader(r);
    let h: Vec<String> = rd.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let p = if with_label { h.len().saturating_sub(1) } else { h.len() };
    if p == 0 || h != header(p, with_label) {
        return Err(validation(format!(
            "unexpected CSV header {:?}; expected x1,…,xp{}",
            h,
            if with_label { ",y" } else { "" }
        )));
    }
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        if rec.len() != h.len() {
            return Err(Error::ShapeMismatch(format!("row has {} fields, expected {}", rec.len(), h.len())));
        }
        out.push(rec.iter().map(str::to_string).collect());
    }
    Ok((p, out))
}

/// Writes an unlabeled matrix with header `x1,…,xp` (used for knockoff copies).
pub fn write_matrix_csv<T: Display, W: Write>(rows: &[Vec<T>], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(header(rows.first().map_or(0, Vec::len), false))?;
    for x in rows {
        wr.write_record(x.iter().map(ToString::to_string))?;
    }
    wr.flush()?;
    Ok(())
}

pub fn read_matrix_csv<T: FromStr, R: Read>(r: R) -> Result<Vec<Vec<T>>> {
    let (_, records) = read_records(r, false)?;
    records.iter().map(|rec| parse_fields(rec)).collect()
}

//! JSON-lines storage: one header object, then one record per line.
//! Floats are written in shortest round-trip form, so a save/load cycle is
//! bit-exact.

use std::fs;
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::scene::{RisConfig, SoState};
use crate::wavesim::Point;

use super::{arg_of, Dataset, DatasetError, DatasetMeta, DatasetRecord, FORMAT_VERSION};

pub(crate) const FORMAT_TAG: &str = "ris-lab-dataset";

#[derive(Serialize, Deserialize)]
struct RecordLine {
    h_ue: Vec<[f64; 2]>,
    h_sense: Vec<Vec<[f64; 2]>>,
    p: Vec<f64>,
    k_index: usize,
    k_onehot: Vec<u8>,
    u: [f64; 2],
}

fn pack(v: &[Complex64]) -> Vec<[f64; 2]> {
    v.iter().map(|c| [c.re, c.im]).collect()
}

fn unpack(v: &[[f64; 2]]) -> Vec<Complex64> {
    v.iter().map(|&[re, im]| Complex64::new(re, im)).collect()
}

/// Serialized dataset; its SHA-256 is the dataset hash.
pub fn dataset_bytes(ds: &Dataset) -> Vec<u8> {
    let mut out = serde_json::to_vec(&ds.meta).expect("header serializes");
    out.push(b'\n');
    for r in &ds.records {
        let line = RecordLine {
            h_ue: pack(&r.h_ue),
            h_sense: r.h_sense.iter().map(|row| pack(row)).collect(),
            p: r.p.t.clone(),
            k_index: r.k_index,
            k_onehot: r.k_onehot.clone(),
            u: [r.u.x, r.u.y],
        };
        serde_json::to_writer(&mut out, &line).expect("record serializes");
        out.push(b'\n');
    }
    out
}

pub fn save(ds: &Dataset, path: &Path) -> Result<(), DatasetError> {
    fs::write(path, dataset_bytes(ds))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Dataset, DatasetError> {
    let text = fs::read_to_string(path)?;
    parse_dataset(&text)
}

fn ferr(line: usize, msg: impl Into<String>) -> DatasetError {
    DatasetError::Format {
        line,
        msg: msg.into(),
    }
}

fn check_record(meta: &DatasetMeta, r: &RecordLine, line: usize) -> Result<(), DatasetError> {
    if r.h_ue.len() != meta.f {
        return Err(ferr(
            line,
            format!("h_ue has {} values, expected F = {}", r.h_ue.len(), meta.f),
        ));
    }
    if r.h_sense.len() != meta.s_ris || r.h_sense.iter().any(|row| row.len() != meta.f) {
        return Err(ferr(
            line,
            format!("h_sense must be {} x {}", meta.s_ris, meta.f),
        ));
    }
    if r.p.len() != meta.n_obj {
        return Err(ferr(
            line,
            format!("p has {} values, expected {}", r.p.len(), meta.n_obj),
        ));
    }
    if r.k_onehot.len() != meta.k || arg_of(&r.k_onehot) != Some(r.k_index) {
        return Err(ferr(
            line,
            "k_onehot is not the one-hot encoding of k_index",
        ));
    }
    let finite = r
        .h_ue
        .iter()
        .chain(r.h_sense.iter().flatten())
        .flatten()
        .chain(&r.p)
        .chain(&r.u);
    if finite.into_iter().any(|v| !v.is_finite()) {
        return Err(ferr(line, "non-finite value"));
    }
    Ok(())
}

pub fn parse_dataset(text: &str) -> Result<Dataset, DatasetError> {
    let mut lines = text.lines().enumerate();
    let (_, head) = lines.next().ok_or_else(|| ferr(1, "empty dataset file"))?;
    let meta: DatasetMeta =
        serde_json::from_str(head).map_err(|e| ferr(1, format!("bad header: {e}")))?;
    if meta.format != FORMAT_TAG {
        return Err(ferr(
            1,
            format!("not a dataset file (format '{}')", meta.format),
        ));
    }
    if meta.version != FORMAT_VERSION {
        return Err(DatasetError::Version(meta.version));
    }
    if meta.configs.len() != meta.k
        || meta
            .configs
            .iter()
            .any(|c| RisConfig::from_bitstring(c).map(|c| c.len()) != Some(meta.n_ris))
    {
        return Err(ferr(
            1,
            "header configuration list does not match K and N_RIS",
        ));
    }
    let mut records = Vec::with_capacity(meta.records);
    let mut last = 1;
    for (idx, raw) in lines {
        let line = idx + 1;
        last = line;
        if raw.trim().is_empty() {
            continue;
        }
        let r: RecordLine =
            serde_json::from_str(raw).map_err(|e| ferr(line, format!("bad record: {e}")))?;
        check_record(&meta, &r, line)?;
        records.push(DatasetRecord {
            h_ue: unpack(&r.h_ue),
            h_sense: r.h_sense.iter().map(|row| unpack(row)).collect(),
            p: SoState::new(r.p),
            k_index: r.k_index,
            k_onehot: r.k_onehot,
            u: Point::new(r.u[0], r.u[1]),
        });
    }
    if records.len() != meta.records {
        return Err(ferr(
            last,
            format!(
                "header announces {} records but the file holds {}",
                meta.records,
                records.len()
            ),
        ));
    }
    Ok(Dataset { meta, records })
}

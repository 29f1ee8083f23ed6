//! Trace CSV files and key-value (TOML) documents.

use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::trace::{Checkpoint, Trace, TraceSeed};

pub const TRACE_HEADER: [&str; 5] = ["t", "t_prime", "objective_gap", "squared_distance", "seed"];
const MEAN_SEED: &str = "mean";

/// CSV text of a trace. Floats use the shortest representation that reads
/// back to the same bits.
pub fn trace_to_csv(trace: &Trace) -> String {
    let seed = match trace.seed {
        TraceSeed::Seed(s) => s.to_string(),
        TraceSeed::Mean => MEAN_SEED.to_string(),
    };
    let mut out = TRACE_HEADER.join(",");
    out.push('\n');
    for c in &trace.checkpoints {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{}\n",
            c.t, c.t_prime, c.objective_gap, c.squared_distance, seed
        ));
    }
    out
}

pub fn write_trace_csv(trace: &Trace, path: &Path) -> Result<()> {
    if trace.checkpoints.is_empty() {
        return Err(Error::InvalidConfig("refusing to write an empty trace".into()));
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(trace_to_csv(trace).as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_trace_csv(path: &Path) -> Result<Trace> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_trace_csv(BufReader::new(f))
}

pub fn parse_trace_csv<R: BufRead>(reader: R) -> Result<Trace> {
    let mut lines = reader.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Schema("empty trace file".into()))?
        .map_err(|e| Error::Schema(e.to_string()))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let mut pos = [0usize; 5];
    for (k, name) in TRACE_HEADER.iter().enumerate() {
        pos[k] = cols
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))?;
    }
    let mut seed: Option<TraceSeed> = None;
    let mut checkpoints = Vec::new();
    for (k, line) in lines.enumerate() {
        let lineno = k + 2;
        let line = line.map_err(|e| Error::Schema(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Schema(format!(
                "line {lineno}: expected {} fields, got {}",
                cols.len(),
                fields.len()
            )));
        }
        let num = |k: usize| -> Result<f64> {
            fields[pos[k]].parse().map_err(|_| {
                Error::Schema(format!("line {lineno}: bad {} value {:?}", TRACE_HEADER[k], fields[pos[k]]))
            })
        };
        let t: u64 = fields[pos[0]]
            .parse()
            .map_err(|_| Error::Schema(format!("line {lineno}: bad t value {:?}", fields[pos[0]])))?;
        let this_seed = match fields[pos[4]] {
            MEAN_SEED => TraceSeed::Mean,
            s => TraceSeed::Seed(
                s.parse()
                    .map_err(|_| Error::Schema(format!("line {lineno}: bad seed {s:?}")))?,
            ),
        };
        match seed {
            None => seed = Some(this_seed),
            Some(s) if s != this_seed => {
                return Err(Error::Schema(format!("line {lineno}: mixed seeds in one trace")))
            }
            _ => {}
        }
        checkpoints.push(Checkpoint {
            t,
            t_prime: num(1)?,
            objective_gap: num(2)?,
            squared_distance: num(3)?,
        });
    }
    let seed = seed.ok_or_else(|| Error::Schema("trace has no rows".into()))?;
    Ok(Trace { seed, checkpoints })
}

pub fn to_kv_document<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Manifest(e.to_string()))
}

pub fn from_kv_document<T: DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Manifest(e.to_string()))
}

pub fn write_kv_document<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    fs::write(path, to_kv_document(value)?).map_err(|e| Error::io(path, e))
}

pub fn read_kv_document<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    from_kv_document(&text)
}

//! On-disk dataset layout.
//!
//! A dataset directory holds:
//!
//! - `signal.csv` (header `t,node_0,...,node_{N-1}`, one row per step) or
//!   `signal.stb` (`STB1`, u32 steps, u32 nodes, then row-major f32, all
//!   little-endian);
//! - `edges.csv` (header `from,to[,cost]`; cost is ignored);
//! - `meta.json` (`steps_per_day`, `start_tod`, `start_dow`, `name`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{Adjacency, TrafficDataset};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const STB_MAGIC: &[u8; 4] = b"STB1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    pub steps_per_day: usize,
    pub start_tod: usize,
    pub start_dow: usize,
    pub name: String,
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TrafficDataset> {
    let dir = dir.as_ref();
    let meta_path = dir.join("meta.json");
    let meta_text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Meta = serde_json::from_str(&meta_text)
        .map_err(|e| Error::data(&meta_path, format!("line {}: {e}", e.line())))?;

    let csv_path = dir.join("signal.csv");
    let stb_path = dir.join("signal.stb");
    let signal = if stb_path.exists() {
        read_stb(&stb_path)?
    } else if csv_path.exists() {
        read_signal_csv(&csv_path)?
    } else {
        return Err(Error::data(dir, "missing signal.csv (or signal.stb)"));
    };
    let n = signal.cols();
    let edges_path = dir.join("edges.csv");
    let edges = read_edges(&edges_path, n)?;
    let adjacency = Adjacency::from_edges(n, &edges).map_err(|e| Error::data(&edges_path, e.to_string()))?;

    TrafficDataset::new(
        meta.name,
        signal,
        meta.steps_per_day,
        meta.start_tod,
        meta.start_dow,
        adjacency,
    )
    .map_err(|e| Error::data(dir, e.to_string()))
}

/// Writes `ds` in the directory layout read by [`load_dataset`].
pub fn save_dataset(ds: &TrafficDataset, dir: impl AsRef<Path>, binary: bool) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if binary {
        write_stb(&ds.signal, &dir.join("signal.stb"))?;
    } else {
        write_signal_csv(&ds.signal, &dir.join("signal.csv"))?;
    }
    let edges_path = dir.join("edges.csv");
    let mut w = csv::Writer::from_path(&edges_path).map_err(|e| csv_error(&edges_path, e))?;
    w.write_record(["from", "to"]).map_err(|e| csv_error(&edges_path, e))?;
    for (a, b) in ds.adjacency.edges() {
        w.write_record([a.to_string(), b.to_string()])
            .map_err(|e| csv_error(&edges_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&edges_path, e))?;

    let meta = Meta {
        steps_per_day: ds.steps_per_day,
        start_tod: ds.start_tod,
        start_dow: ds.start_dow,
        name: ds.name.clone(),
    };
    let meta_path = dir.join("meta.json");
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map(|p| format!("line {}: ", p.line())).unwrap_or_default();
    Error::data(path, format!("{line}{e}"))
}

fn read_signal_csv(path: &Path) -> Result<Tensor> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 || &header[0] != "t" {
        return Err(Error::data(path, "line 1: expected header t,node_0,...,node_{N-1}"));
    }
    let n = header.len() - 1;
    let mut data = Vec::new();
    let mut steps = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != n + 1 {
            return Err(Error::data(
                path,
                format!("line {line}: expected {} fields, found {}", n + 1, record.len()),
            ));
        }
        for (col, field) in record.iter().enumerate().skip(1) {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::data(path, format!("line {line}, column {col}: cannot parse {field:?}"))
            })?;
            if !v.is_finite() {
                return Err(Error::data(
                    path,
                    format!("line {line}, column {col}: non-finite value {field:?}"),
                ));
            }
            data.push(v);
        }
        steps += 1;
    }
    if steps == 0 {
        return Err(Error::data(path, "no signal rows"));
    }
    Tensor::new(&[steps, n], data).map_err(|e| Error::data(path, e.to_string()))
}

fn write_signal_csv(signal: &Tensor, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    let n = signal.cols();
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|i| format!("node_{i}")));
    w.write_record(&header).map_err(|e| csv_error(path, e))?;
    for t in 0..signal.rows() {
        let mut rec = vec![t.to_string()];
        // `{}` on f64 prints the shortest string that round-trips exactly.
        rec.extend(signal.row(t).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_stb(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 || &bytes[..4] != STB_MAGIC {
        return Err(Error::data(path, "offset 0: missing STB1 magic"));
    }
    let steps = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let n = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let expected = 12 + steps * n * 4;
    if steps == 0 || n == 0 || bytes.len() != expected {
        return Err(Error::data(
            path,
            format!(
                "offset {}: expected {expected} bytes for {steps}x{n} values, file has {}",
                bytes.len().min(expected),
                bytes.len()
            ),
        ));
    }
    let mut data = Vec::with_capacity(steps * n);
    for (k, chunk) in bytes[12..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::data(
                path,
                format!("offset {}: non-finite value (step {}, node {})", 12 + 4 * k, k / n, k % n),
            ));
        }
        data.push(f64::from(v));
    }
    Ok(Tensor::from_parts(vec![steps, n], data))
}

fn write_stb(signal: &Tensor, path: &Path) -> Result<()> {
    let mut bytes = Vec::with_capacity(12 + signal.len() * 4);
    bytes.extend_from_slice(STB_MAGIC);
    bytes.extend_from_slice(&(signal.rows() as u32).to_le_bytes());
    bytes.extend_from_slice(&(signal.cols() as u32).to_le_bytes());
    for &v in signal.data() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_edges(path: &Path, n: usize) -> Result<Vec<(usize, usize)>> {
    if !path.exists() {
        return Err(Error::data(path, "missing edges.csv"));
    }
    let mut reader = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.len() < 2 || &header[0] != "from" || &header[1] != "to" {
        return Err(Error::data(path, "line 1: expected header from,to[,cost]"));
    }
    let mut edges = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() < 2 {
            return Err(Error::data(path, format!("line {line}: expected from,to")));
        }
        let parse = |field: &str| -> Result<usize> {
            let v: usize = field.trim().parse().map_err(|_| {
                Error::data(path, format!("line {line}: cannot parse node index {field:?}"))
            })?;
            if v >= n {
                return Err(Error::data(
                    path,
                    format!("line {line}: node index {v} out of range for {n} nodes"),
                ));
            }
            Ok(v)
        };
        edges.push((parse(&record[0])?, parse(&record[1])?));
    }
    Ok(edges)
}

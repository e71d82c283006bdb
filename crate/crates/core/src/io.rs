//! File formats: binary tensor/matrix containers, sparse tensor CSV,
//! context containers, JSON model checkpoints, and the CSV fixtures the
//! ingestion readers consume.
//!
//! Binary layout is little-endian f64 preceded by a 4-byte magic and u64
//! dimensions. The tensor CSV holds one `i,j,k,value` line per nonzero with
//! a `# dims d1 d2 d3` header comment.

use crate::baselines::CpModel;
use crate::error::{Error, Result};
use crate::ingest::{ContextMatrix, NeighborGraph, PoiTable, TripRecord};
use crate::model::{FactorModel, Hyperparameters};
use crate::tensor::{Matrix, Tensor3};
use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Read, Write};

const TENSOR_MAGIC: &[u8; 4] = b"ODT3";
const MATRIX_MAGIC: &[u8; 4] = b"ODM2";
const CONTEXT_MAGIC: &[u8; 4] = b"ODCW";

pub fn write_tensor_bin<W: Write>(writer: &mut W, t: &Tensor3) -> Result<()> {
    writer.write_all(TENSOR_MAGIC)?;
    let (d1, d2, d3) = t.dims();
    for d in [d1, d2, d3] {
        writer.write_u64::<LittleEndian>(d as u64)?;
    }
    for v in t.values() {
        writer.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

fn check_magic<R: Read>(reader: &mut R, expected: &[u8; 4]) -> Result<()> {
    let mut magic = [0u8; 4];
    reader.read_exact(&mut magic)?;
    if &magic != expected {
        return Err(Error::InvalidInput(format!(
            "bad container magic {:?}, expected {:?}",
            magic, expected
        )));
    }
    Ok(())
}

pub fn read_tensor_bin<R: Read>(reader: &mut R) -> Result<Tensor3> {
    check_magic(reader, TENSOR_MAGIC)?;
    let d1 = reader.read_u64::<LittleEndian>()? as usize;
    let d2 = reader.read_u64::<LittleEndian>()? as usize;
    let d3 = reader.read_u64::<LittleEndian>()? as usize;
    let len = d1
        .checked_mul(d2)
        .and_then(|p| p.checked_mul(d3))
        .ok_or_else(|| Error::InvalidInput("tensor dims overflow".into()))?;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(reader.read_f64::<LittleEndian>()?);
    }
    Tensor3::from_values(d1, d2, d3, values)
}

pub fn write_matrix_bin<W: Write>(writer: &mut W, m: &Matrix) -> Result<()> {
    writer.write_all(MATRIX_MAGIC)?;
    writer.write_u64::<LittleEndian>(m.rows() as u64)?;
    writer.write_u64::<LittleEndian>(m.cols() as u64)?;
    for v in m.values() {
        writer.write_f64::<LittleEndian>(*v)?;
    }
    Ok(())
}

pub fn read_matrix_bin<R: Read>(reader: &mut R) -> Result<Matrix> {
    check_magic(reader, MATRIX_MAGIC)?;
    let rows = reader.read_u64::<LittleEndian>()? as usize;
    let cols = reader.read_u64::<LittleEndian>()? as usize;
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| Error::InvalidInput("matrix dims overflow".into()))?;
    let mut values = Vec::with_capacity(len);
    for _ in 0..len {
        values.push(reader.read_f64::<LittleEndian>()?);
    }
    Matrix::from_values(rows, cols, values)
}

/// Context container: the similarity matrix followed by one active-flag
/// byte per zone.
pub fn write_context_bin<W: Write>(writer: &mut W, w: &ContextMatrix) -> Result<()> {
    writer.write_all(CONTEXT_MAGIC)?;
    write_matrix_bin(writer, &w.w)?;
    for flag in &w.active {
        writer.write_u8(u8::from(*flag))?;
    }
    Ok(())
}

pub fn read_context_bin<R: Read>(reader: &mut R) -> Result<ContextMatrix> {
    check_magic(reader, CONTEXT_MAGIC)?;
    let w = read_matrix_bin(reader)?;
    let mut active = Vec::with_capacity(w.rows());
    for _ in 0..w.rows() {
        active.push(reader.read_u8()? != 0);
    }
    Ok(ContextMatrix { w, active })
}

pub fn write_tensor_csv<W: Write>(writer: &mut W, t: &Tensor3) -> Result<()> {
    let (d1, d2, d3) = t.dims();
    writeln!(writer, "# dims {d1} {d2} {d3}")?;
    writeln!(writer, "i,j,k,value")?;
    for z in 0..d3 {
        for y in 0..d2 {
            for x in 0..d1 {
                let v = t.get(x, y, z);
                if v != 0.0 {
                    writeln!(writer, "{x},{y},{z},{v:.17e}")?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_tensor_csv<R: BufRead>(reader: R) -> Result<Tensor3> {
    let mut tensor: Option<Tensor3> = None;
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some(rest) = trimmed.strip_prefix('#') {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.first() == Some(&"dims") {
                if parts.len() != 4 {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: "dims header needs three values".into(),
                    });
                }
                let dims: Vec<usize> = parts[1..]
                    .iter()
                    .map(|p| {
                        p.parse().map_err(|_| Error::Parse {
                            line: line_no,
                            msg: format!("bad dimension '{p}'"),
                        })
                    })
                    .collect::<Result<_>>()?;
                tensor = Some(Tensor3::zeros(dims[0], dims[1], dims[2]));
            }
            continue;
        }
        if trimmed.starts_with("i,") {
            continue;
        }
        let t = tensor.as_mut().ok_or(Error::Parse {
            line: line_no,
            msg: "value line before dims header".into(),
        })?;
        let fields: Vec<&str> = trimmed.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected i,j,k,value, got {} fields", fields.len()),
            });
        }
        let parse_idx = |s: &str| -> Result<usize> {
            s.trim().parse().map_err(|_| Error::Parse {
                line: line_no,
                msg: format!("bad index '{s}'"),
            })
        };
        let (x, y, z) = (parse_idx(fields[0])?, parse_idx(fields[1])?, parse_idx(fields[2])?);
        let v: f64 = fields[3].trim().parse().map_err(|_| Error::Parse {
            line: line_no,
            msg: format!("bad value '{}'", fields[3]),
        })?;
        let (d1, d2, d3) = t.dims();
        if x >= d1 || y >= d2 || z >= d3 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("index ({x},{y},{z}) outside dims ({d1},{d2},{d3})"),
            });
        }
        t.set(x, y, z, v);
    }
    tensor.ok_or_else(|| Error::InvalidInput("tensor CSV had no dims header".into()))
}

pub fn write_trip_csv<W: Write>(writer: &mut W, trips: &[TripRecord]) -> Result<()> {
    writeln!(writer, "vid,origin_zone,dest_zone,slice")?;
    for t in trips {
        writeln!(
            writer,
            "{},{},{},{}",
            t.vehicle_id, t.origin_zone, t.dest_zone, t.start_slice
        )?;
    }
    Ok(())
}

pub fn write_poi_csv<W: Write>(writer: &mut W, table: &PoiTable) -> Result<()> {
    writeln!(writer, "zone,category,count")?;
    for (zone, row) in table.counts.iter().enumerate() {
        for (h, count) in row.iter().enumerate() {
            if *count > 0 {
                writeln!(writer, "{},{},{}", zone, h + 1, count)?;
            }
        }
    }
    Ok(())
}

pub fn write_adjacency_csv<W: Write>(writer: &mut W, graph: &NeighborGraph) -> Result<()> {
    writeln!(writer, "zone_a,zone_b")?;
    for (a, neighbors) in graph.neighbors.iter().enumerate() {
        for &b in neighbors {
            if a < b {
                writeln!(writer, "{a},{b}")?;
            }
        }
    }
    Ok(())
}

/// Kind tag distinguishing which solver produced a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    NrCntf,
    Cntf,
    Tucker,
    Cp,
    Rcp,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CheckpointModel {
    Tucker(FactorModel),
    Cp(CpModel),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kind: ModelKind,
    pub hyperparameters: Hyperparameters,
    pub seed: u64,
    pub model: CheckpointModel,
    pub objective_history: Vec<f64>,
    #[serde(default)]
    pub nr_skipped_rounds: Vec<usize>,
}

impl Checkpoint {
    pub fn factor_model(&self) -> Result<&FactorModel> {
        match &self.model {
            CheckpointModel::Tucker(m) => Ok(m),
            CheckpointModel::Cp(_) => Err(Error::InvalidInput(
                "checkpoint holds a CP model, not a Tucker one".into(),
            )),
        }
    }
}

pub fn write_checkpoint<W: Write>(writer: &mut W, cp: &Checkpoint) -> Result<()> {
    serde_json::to_writer_pretty(writer, cp)?;
    Ok(())
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Checkpoint> {
    let cp: Checkpoint = serde_json::from_reader(reader)?;
    match (&cp.kind, &cp.model) {
        (ModelKind::Cp | ModelKind::Rcp, CheckpointModel::Tucker(_)) => Err(Error::InvalidInput(
            "CP checkpoint holds a Tucker model".into(),
        )),
        (ModelKind::NrCntf | ModelKind::Cntf | ModelKind::Tucker, CheckpointModel::Cp(_)) => Err(
            Error::InvalidInput("Tucker checkpoint holds a CP model".into()),
        ),
        _ => Ok(cp),
    }
}

/// One entry of a multi-year sequence manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceManifestEntry {
    pub label: String,
    pub tensor_path: String,
    pub context_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask_path: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SequenceManifest {
    pub years: Vec<SequenceManifestEntry>,
}

pub fn write_sequence_manifest<W: Write>(writer: &mut W, m: &SequenceManifest) -> Result<()> {
    serde_json::to_writer_pretty(writer, m)?;
    Ok(())
}

pub fn read_sequence_manifest<R: Read>(reader: R) -> Result<SequenceManifest> {
    Ok(serde_json::from_reader(reader)?)
}

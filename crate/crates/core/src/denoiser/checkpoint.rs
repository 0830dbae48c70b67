//! Flat binary checkpoint.
//!
//! ```text
//! magic        8 bytes  "SIMPDM01"
//! hash_len     u64 LE
//! schema_hash  hash_len bytes, lowercase hex sha256
//! header_len   u64 LE
//! header       header_len bytes, JSON (CheckpointHeader)
//! n_tensors    u64 LE
//! per tensor:  rows u64 LE, cols u64 LE, rows*cols f64 LE row-major
//! ```
//!
//! Tensor order is [`DenoiserParams::tensors`].

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, Denoiser};
use crate::dataset::{schema_hash, ColumnSchema, FeatureLayout, NormalizationParams};
use crate::error::{Error, Result};
use crate::numeric::Matrix;

pub const MAGIC: &[u8; 8] = b"SIMPDM01";

const MAX_SECTION: u64 = 1 << 30;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub arch: Architecture,
    pub schema: Vec<ColumnSchema>,
    pub normalization: NormalizationParams,
    pub tensor_names: Vec<String>,
    /// Training configuration echo.
    #[serde(default)]
    pub train: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub model: Denoiser,
}

impl Checkpoint {
    pub fn new(
        model: Denoiser,
        schema: Vec<ColumnSchema>,
        normalization: NormalizationParams,
        train: serde_json::Value,
    ) -> Result<Self> {
        if FeatureLayout::from_schema(&schema) != model.layout {
            return Err(Error::SchemaMismatch(
                "model layout does not match schema".into(),
            ));
        }
        let header = CheckpointHeader {
            arch: model.arch,
            schema,
            normalization,
            tensor_names: model.params.tensor_names(),
            train,
        };
        Ok(Self { header, model })
    }

    pub fn schema_hash(&self) -> String {
        schema_hash(&self.header.schema)
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_u64(r: &mut impl Read) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u64::from_le_bytes(buf))
}

fn get_section(r: &mut impl Read, what: &str) -> Result<Vec<u8>> {
    let len = get_u64(r)?;
    if len > MAX_SECTION {
        return Err(Error::Checkpoint(format!(
            "{what} length {len} is implausible"
        )));
    }
    let mut buf = vec![0u8; len as usize];
    r.read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated {what}: {e}")))?;
    Ok(buf)
}

pub fn write_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    let hash = ckpt.schema_hash();
    put_u64(&mut w, hash.len() as u64)?;
    w.write_all(hash.as_bytes())?;
    let header = serde_json::to_vec(&ckpt.header)?;
    put_u64(&mut w, header.len() as u64)?;
    w.write_all(&header)?;
    let tensors = ckpt.model.params.tensors();
    put_u64(&mut w, tensors.len() as u64)?;
    for t in tensors {
        put_u64(&mut w, t.rows() as u64)?;
        put_u64(&mut w, t.cols() as u64)?;
        for v in t.as_slice() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)
        .map_err(|_| Error::Checkpoint("file too short for magic bytes".into()))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic bytes".into()));
    }
    let hash = String::from_utf8(get_section(&mut r, "schema hash")?)
        .map_err(|_| Error::Checkpoint("schema hash is not utf-8".into()))?;
    let header: CheckpointHeader = serde_json::from_slice(&get_section(&mut r, "header")?)?;
    if schema_hash(&header.schema) != hash {
        return Err(Error::SchemaMismatch(
            "checkpoint schema hash does not match its header".into(),
        ));
    }
    let layout = FeatureLayout::from_schema(&header.schema);
    // build a template with the right shapes, then overwrite its tensors
    let mut model = Denoiser::new(header.arch, layout, 0)?;
    let n = get_u64(&mut r)? as usize;
    let expected = model.params.tensors().len();
    if n != expected || header.tensor_names != model.params.tensor_names() {
        return Err(Error::Checkpoint(format!(
            "expected {expected} tensors for this architecture, found {n}"
        )));
    }
    for (name, slot) in header.tensor_names.iter().zip(model.params.tensors_mut()) {
        let rows = get_u64(&mut r)? as usize;
        let cols = get_u64(&mut r)? as usize;
        if (rows, cols) != slot.shape() {
            return Err(Error::Checkpoint(format!(
                "tensor {name} has shape ({rows}, {cols}), expected {:?}",
                slot.shape()
            )));
        }
        let mut data = vec![0.0; rows * cols];
        let mut buf = [0u8; 8];
        for v in &mut data {
            r.read_exact(&mut buf)
                .map_err(|_| Error::Checkpoint(format!("truncated tensor {name}")))?;
            *v = f64::from_le_bytes(buf);
        }
        *slot = Matrix::from_vec(rows, cols, data)?;
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", rest.len())));
    }
    Ok(Checkpoint { header, model })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{normalize, Cell, Table};
    use crate::numeric::Precision;
    use crate::schedule::ScheduleKind;

    fn sample() -> Checkpoint {
        let schema = vec![
            ColumnSchema::numerical("a"),
            ColumnSchema::categorical("c", vec!["u".into(), "v".into()]),
        ];
        let table = Table::new(
            schema.clone(),
            vec![
                vec![Cell::Num(1.0), Cell::Cat(0)],
                vec![Cell::Num(3.0), Cell::Cat(1)],
            ],
        )
        .unwrap();
        let (_, params) = normalize(&table).unwrap();
        let arch = Architecture {
            layers: 4,
            hidden: 6,
            steps: 7,
            precision: Precision::F64,
            schedule: ScheduleKind::Linear,
        };
        let model = Denoiser::new(arch, FeatureLayout::from_schema(&schema), 5).unwrap();
        Checkpoint::new(model, schema, params, serde_json::json!({"epochs": 3})).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let ckpt = sample();
        write_checkpoint(&ckpt, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        for (a, b) in back
            .model
            .params
            .tensors()
            .iter()
            .zip(ckpt.model.params.tensors())
        {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&sample(), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();

        let mut bad = bytes.clone();
        bad[0] = b'X';
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));

        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(Error::Checkpoint(_))));

        let mut bad = bytes.clone();
        bad[16] ^= 1; // first hash character
        std::fs::write(&path, &bad).unwrap();
        assert!(read_checkpoint(&path).is_err());
    }
}

//! Self-describing binary container for datasets and models.
//!
//! Layout: the 8-byte magic `SPDPOOL1`, then records until end of file.
//! Every record is little-endian `u32 kind, u32 ndims, u64 dims[ndims]`
//! followed by `prod(dims)` IEEE-754 doubles. The text record (pipeline
//! configuration) instead carries `ndims = 1, dims = [byte length]` and
//! that many UTF-8 bytes.
//!
//! Dataset: `DATASET [2] = (samples, classes)`, `LABELS [samples]`, then
//! one `FEATURES [n, d]` record per sample.
//!
//! Model: `MODEL [3] = (channels, input channels, classes)`, `CONFIG`,
//! `PROJECTION [channels, input channels]`,
//! `WEIGHTS [classes, channels^2 + 1]`.

use std::path::Path;

use spdnorm::layers::FeatureMap;
use spdnorm::linalg::Matrix;
use spdnorm::train::{Dataset, Model};

use crate::config::{read_pipeline, write_pipeline, KvConfig, Reader};
use crate::error::{CliError, CliResult};

pub const MAGIC: &[u8; 8] = b"SPDPOOL1";

pub const KIND_DATASET: u32 = 1;
pub const KIND_LABELS: u32 = 2;
pub const KIND_FEATURES: u32 = 3;
pub const KIND_MODEL: u32 = 16;
pub const KIND_CONFIG: u32 = 17;
pub const KIND_PROJECTION: u32 = 18;
pub const KIND_WEIGHTS: u32 = 19;

/// Upper bound on elements in one record, to reject corrupt headers
/// before allocating.
const MAX_ELEMENTS: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
enum Payload {
    Doubles(Vec<f64>),
    Text(String),
}

#[derive(Clone, Debug, PartialEq)]
struct Record {
    kind: u32,
    dims: Vec<u64>,
    payload: Payload,
}

impl Record {
    fn doubles(kind: u32, dims: &[usize], data: &[f64]) -> Self {
        Self {
            kind,
            dims: dims.iter().map(|&d| d as u64).collect(),
            payload: Payload::Doubles(data.to_vec()),
        }
    }

    fn matrix(kind: u32, m: &Matrix) -> Self {
        Self::doubles(kind, &[m.rows(), m.cols()], m.as_slice())
    }
}

fn encode(records: &[Record]) -> Vec<u8> {
    let mut out = MAGIC.to_vec();
    for r in records {
        out.extend_from_slice(&r.kind.to_le_bytes());
        out.extend_from_slice(&(r.dims.len() as u32).to_le_bytes());
        for d in &r.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &r.payload {
            Payload::Doubles(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            Payload::Text(s) => out.extend_from_slice(s.as_bytes()),
        }
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], String> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| format!("truncated at byte {}", self.pos))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

fn decode(bytes: &[u8]) -> Result<Vec<Record>, String> {
    if bytes.len() < 8 || &bytes[..8] != MAGIC {
        return Err("not an SPDPOOL1 container (bad magic)".into());
    }
    let mut c = Cursor { bytes, pos: 8 };
    let mut out = Vec::new();
    while !c.done() {
        let kind = c.u32()?;
        let ndims = c.u32()?;
        if ndims > 8 {
            return Err(format!("record kind {kind}: implausible rank {ndims}"));
        }
        let dims = (0..ndims).map(|_| c.u64()).collect::<Result<Vec<_>, _>>()?;
        let count = dims
            .iter()
            .try_fold(1u64, |acc, &d| acc.checked_mul(d))
            .filter(|&n| n <= MAX_ELEMENTS)
            .ok_or_else(|| format!("record kind {kind}: implausible size {dims:?}"))?;
        let payload = if kind == KIND_CONFIG {
            if ndims != 1 {
                return Err("config record must have one dimension".into());
            }
            let text = std::str::from_utf8(c.take(count as usize)?)
                .map_err(|_| "config record is not UTF-8".to_string())?;
            Payload::Text(text.to_string())
        } else {
            let raw = c.take(count as usize * 8)?;
            Payload::Doubles(
                raw.chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            )
        };
        out.push(Record {
            kind,
            dims,
            payload,
        });
    }
    Ok(out)
}

fn expect<'r>(
    it: &mut impl Iterator<Item = &'r Record>,
    kind: u32,
    rank: usize,
) -> Result<&'r Record, String> {
    let r = it
        .next()
        .ok_or_else(|| format!("missing record of kind {kind}"))?;
    if r.kind != kind {
        return Err(format!("expected record kind {kind}, found {}", r.kind));
    }
    if r.dims.len() != rank {
        return Err(format!(
            "record kind {kind}: expected rank {rank}, found {}",
            r.dims.len()
        ));
    }
    Ok(r)
}

fn doubles(r: &Record) -> Result<&[f64], String> {
    match &r.payload {
        Payload::Doubles(v) => Ok(v),
        Payload::Text(_) => Err(format!("record kind {} holds text", r.kind)),
    }
}

fn as_count(x: f64, what: &str) -> Result<usize, String> {
    if x >= 0.0 && x.fract() == 0.0 && x < 1e15 {
        Ok(x as usize)
    } else {
        Err(format!("{what} is not a count: {x}"))
    }
}

fn to_matrix(r: &Record) -> Result<Matrix, String> {
    Matrix::from_vec(r.dims[0] as usize, r.dims[1] as usize, doubles(r)?.to_vec())
        .map_err(|e| e.to_string())
}

pub fn encode_dataset(data: &Dataset) -> Vec<u8> {
    let mut records = vec![
        Record::doubles(
            KIND_DATASET,
            &[2],
            &[data.len() as f64, data.classes as f64],
        ),
        Record::doubles(
            KIND_LABELS,
            &[data.len()],
            &data.labels.iter().map(|&l| l as f64).collect::<Vec<_>>(),
        ),
    ];
    records.extend(
        data.samples
            .iter()
            .map(|f| Record::matrix(KIND_FEATURES, f.values())),
    );
    encode(&records)
}

pub fn decode_dataset(bytes: &[u8]) -> Result<Dataset, String> {
    let records = decode(bytes)?;
    let mut it = records.iter();
    let header = doubles(expect(&mut it, KIND_DATASET, 1)?)?;
    if header.len() != 2 {
        return Err("dataset header must hold (samples, classes)".into());
    }
    let count = as_count(header[0], "sample count")?;
    let classes = as_count(header[1], "class count")?;
    let labels = doubles(expect(&mut it, KIND_LABELS, 1)?)?
        .iter()
        .map(|&l| as_count(l, "label"))
        .collect::<Result<Vec<_>, _>>()?;
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let m = to_matrix(expect(&mut it, KIND_FEATURES, 2)?)?;
        samples.push(FeatureMap::new(m).map_err(|e| e.to_string())?);
    }
    if it.next().is_some() {
        return Err("trailing records after dataset".into());
    }
    Dataset::new(samples, labels, classes).map_err(|e| e.to_string())
}

pub fn encode_model(model: &Model) -> Vec<u8> {
    let cfg = write_pipeline(&model.pipeline).to_text();
    let records = vec![
        Record::doubles(
            KIND_MODEL,
            &[3],
            &[
                model.projection.rows() as f64,
                model.projection.cols() as f64,
                model.weights.rows() as f64,
            ],
        ),
        Record {
            kind: KIND_CONFIG,
            dims: vec![cfg.len() as u64],
            payload: Payload::Text(cfg),
        },
        Record::matrix(KIND_PROJECTION, &model.projection),
        Record::matrix(KIND_WEIGHTS, &model.weights),
    ];
    encode(&records)
}

pub fn decode_model(bytes: &[u8]) -> Result<Model, String> {
    let records = decode(bytes)?;
    let mut it = records.iter();
    let header = doubles(expect(&mut it, KIND_MODEL, 1)?)?;
    if header.len() != 3 {
        return Err("model header must hold (channels, inputs, classes)".into());
    }
    let d = as_count(header[0], "channel count")?;
    let d_in = as_count(header[1], "input channel count")?;
    let k = as_count(header[2], "class count")?;
    let cfg_rec = expect(&mut it, KIND_CONFIG, 1)?;
    let Payload::Text(text) = &cfg_rec.payload else {
        return Err("config record holds doubles".into());
    };
    let kv = KvConfig::parse(text).map_err(|e| format!("config block: {e}"))?;
    let mut reader = Reader::new(&kv);
    let pipeline = read_pipeline(&mut reader).map_err(|e| format!("config block: {e}"))?;
    reader.finish().map_err(|e| format!("config block: {e}"))?;
    let projection = to_matrix(expect(&mut it, KIND_PROJECTION, 2)?)?;
    let weights = to_matrix(expect(&mut it, KIND_WEIGHTS, 2)?)?;
    if it.next().is_some() {
        return Err("trailing records after model".into());
    }
    if (projection.rows(), projection.cols()) != (d, d_in)
        || (weights.rows(), weights.cols()) != (k, d * d + 1)
    {
        return Err("model header disagrees with stored matrices".into());
    }
    Ok(Model {
        pipeline,
        projection,
        weights,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    std::fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn save_dataset(path: &Path, data: &Dataset) -> CliResult<()> {
    write_bytes(path, &encode_dataset(data))
}

pub fn load_dataset(path: &Path) -> CliResult<Dataset> {
    decode_dataset(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

pub fn save_model(path: &Path, model: &Model) -> CliResult<()> {
    write_bytes(path, &encode_model(model))
}

pub fn load_model(path: &Path) -> CliResult<Model> {
    decode_model(&read_bytes(path)?).map_err(|e| CliError::format(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use spdnorm::layers::PipelineConfig;
    use spdnorm::train::{generate_synthetic, SyntheticSpec};

    fn spec() -> SyntheticSpec {
        SyntheticSpec {
            classes: 3,
            channels: 3,
            locations: 5,
            samples_per_class: 2,
            burst_factor: 2.0,
            noise_sigma: 0.1,
        }
    }

    #[test]
    fn dataset_round_trip_is_bit_exact() {
        let data = generate_synthetic(&spec(), 1).unwrap();
        let bytes = encode_dataset(&data);
        assert_eq!(&bytes[..8], MAGIC);
        let back = decode_dataset(&bytes).unwrap();
        assert_eq!(back, data);
        assert_eq!(encode_dataset(&back), bytes);
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let mut model = Model::new(PipelineConfig::default(), 3, 2);
        model.weights[(1, 4)] = -0.1 - 0.2;
        model.projection[(0, 2)] = f64::MIN_POSITIVE;
        let bytes = encode_model(&model);
        let back = decode_model(&bytes).unwrap();
        assert_eq!(back, model);
        assert_eq!(encode_model(&back), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let data = generate_synthetic(&spec(), 2).unwrap();
        let bytes = encode_dataset(&data);
        assert!(decode_dataset(&bytes[..bytes.len() - 3]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(decode_dataset(&bad).unwrap_err().contains("magic"));
        // A model file is not a dataset.
        let model = encode_model(&Model::new(PipelineConfig::default(), 3, 3));
        assert!(decode_dataset(&model).is_err());
        // Huge dimension in a header.
        let mut huge = bytes.clone();
        huge[16..24].copy_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_dataset(&huge).is_err());
    }
}

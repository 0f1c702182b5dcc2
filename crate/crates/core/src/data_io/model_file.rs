//! SPFG model files.
//!
//! Everything is little-endian:
//!
//! ```text
//! "SPFG" | version u32 | kind u8 (0 = dense checkpoint, 1 = sparse model)
//! spec: len u32 | UTF-8 JSON of the NetworkSpec
//! alpha f64 | checkpoint: sibling u8 | sparse: gamma f64
//! layers: count u32, then per layer
//!     tag u8 (0 = dense, 1 = csr) | rows u32 | cols u32
//!     dense: rows*cols f32
//!     csr:   nnz u32 | (rows+1) u32 offsets | nnz u32 indices | nnz f32 values
//!     bias: len u32 | f32 values
//!     thresholds: len u32 | f64 values
//! provenance: config digest u64 | seed u64
//! CRC-32 (IEEE) of every preceding byte, u32
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, FormatError, Result};
use crate::export::{Provenance, SparseLayer, SparseModel};
use crate::network::{LayerParams, Network, NetworkSpec};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SPFG";
pub const VERSION: u32 = 1;

const KIND_CHECKPOINT: u8 = 0;
const KIND_SPARSE: u8 = 1;
const TAG_DENSE: u8 = 0;
const TAG_CSR: u8 = 1;

/// A trained (or untrained) network with its thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub network: Network<f32>,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelArtifact {
    Checkpoint(Checkpoint),
    Sparse(SparseModel),
}

struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: usize) {
        self.0.extend_from_slice(&(v as u32).to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, vs: &[f32]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn u32s(&mut self, vs: &[u32]) {
        for v in vs {
            self.0.extend_from_slice(&v.to_le_bytes());
        }
    }
    fn f64s(&mut self, vs: &[f64]) {
        self.u32(vs.len());
        for v in vs {
            self.f64(*v);
        }
    }

    fn header(&mut self, kind: u8, spec: &NetworkSpec, alpha: f64) {
        self.0.extend_from_slice(MAGIC);
        self.u32(VERSION as usize);
        self.u8(kind);
        let json = serde_json::to_vec(spec).expect("spec serializes");
        self.u32(json.len());
        self.0.extend_from_slice(&json);
        self.f64(alpha);
    }

    fn finish(mut self, provenance: Provenance) -> Vec<u8> {
        self.u64(provenance.config_digest);
        self.u64(provenance.seed);
        let crc = crc32fast::hash(&self.0);
        self.0.extend_from_slice(&crc.to_le_bytes());
        self.0
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or(FormatError::Truncated {
                expected: self.pos.saturating_add(n),
                found: self.bytes.len(),
            })?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        self.u32().map(|v| v as usize)
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn u32s(&mut self, n: usize) -> Result<Vec<u32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
    fn f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.len()?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| malformed("length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

fn malformed(msg: impl Into<String>) -> Error {
    FormatError::Malformed(msg.into()).into()
}

fn write_bias(w: &mut Writer, bias: &[f32]) {
    w.u32(bias.len());
    w.f32s(bias);
}

pub fn encode_checkpoint(ckpt: &Checkpoint) -> Vec<u8> {
    let net = &ckpt.network;
    let mut w = Writer(Vec::new());
    w.header(KIND_CHECKPOINT, net.spec(), net.alpha());
    w.u8(net.is_sibling() as u8);
    w.u32(net.layers().len());
    for (layer, thresholds) in net.layers().iter().zip(net.thresholds()) {
        let weight = &layer.weight.value;
        w.u8(TAG_DENSE);
        w.u32(weight.shape()[0]);
        w.u32(weight.len() / weight.shape()[0]);
        w.f32s(weight.data());
        write_bias(&mut w, layer.bias.value.data());
        w.f64s(&thresholds);
    }
    w.finish(ckpt.provenance)
}

pub fn encode_sparse(model: &SparseModel) -> Vec<u8> {
    let mut w = Writer(Vec::new());
    w.header(KIND_SPARSE, &model.spec, model.alpha);
    w.f64(model.gamma);
    w.u32(model.layers.len());
    for layer in &model.layers {
        w.u8(TAG_CSR);
        w.u32(layer.rows);
        w.u32(layer.cols);
        w.u32(layer.nnz());
        w.u32s(&layer.row_offsets);
        w.u32s(&layer.col_indices);
        w.f32s(&layer.values);
        write_bias(&mut w, &layer.bias);
        w.f64s(&layer.thresholds);
    }
    w.finish(model.provenance)
}

/// Decodes either kind of model file, validating checksum, version and
/// every block.
pub fn decode(bytes: &[u8]) -> Result<ModelArtifact> {
    if bytes.len() < 4 + 4 + 1 + 4 {
        return Err(FormatError::Truncated {
            expected: 13,
            found: bytes.len(),
        }
        .into());
    }
    if &bytes[..4] != MAGIC {
        return Err(FormatError::BadMagic {
            expected: u32::from_be_bytes(*MAGIC),
            found: u32::from_be_bytes(bytes[..4].try_into().unwrap()),
        }
        .into());
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(tail.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(FormatError::Checksum { stored, computed }.into());
    }
    let mut r = Reader { bytes: body, pos: 4 };
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version).into());
    }
    let kind = r.u8()?;
    let spec_len = r.len()?;
    let spec: NetworkSpec =
        serde_json::from_slice(r.take(spec_len)?).map_err(|e| malformed(format!("spec block: {e}")))?;
    spec.validate().map_err(|e| malformed(format!("spec block: {e}")))?;
    let alpha = r.f64()?;
    let artifact = match kind {
        KIND_CHECKPOINT => ModelArtifact::Checkpoint(decode_checkpoint(&mut r, spec, alpha)?),
        KIND_SPARSE => ModelArtifact::Sparse(decode_sparse(&mut r, spec, alpha)?),
        other => return Err(malformed(format!("unknown model kind {other}"))),
    };
    if r.pos != body.len() {
        return Err(malformed(format!("{} trailing bytes", body.len() - r.pos)));
    }
    Ok(artifact)
}

fn read_provenance(r: &mut Reader<'_>) -> Result<Provenance> {
    Ok(Provenance {
        config_digest: r.u64()?,
        seed: r.u64()?,
    })
}

fn decode_checkpoint(r: &mut Reader<'_>, spec: NetworkSpec, alpha: f64) -> Result<Checkpoint> {
    let sibling = match r.u8()? {
        0 => false,
        1 => true,
        other => return Err(malformed(format!("bad sibling flag {other}"))),
    };
    let count = r.len()?;
    let shapes: Vec<(Vec<usize>, usize)> = spec
        .param_layers()
        .map(|(_, l)| {
            (
                l.weight_shape().expect("param layer"),
                l.bias_len().expect("param layer"),
            )
        })
        .collect();
    if count != shapes.len() {
        return Err(malformed(format!("{count} layer blocks for {} layers", shapes.len())));
    }
    let mut params = Vec::with_capacity(count);
    let mut thresholds = Vec::with_capacity(count);
    for (shape, bias_len) in shapes {
        if r.u8()? != TAG_DENSE {
            return Err(malformed("checkpoint layers must be dense"));
        }
        let (rows, cols) = (r.len()?, r.len()?);
        if rows != shape[0] || rows * cols != shape.iter().product::<usize>() {
            return Err(malformed(format!("layer block {rows}x{cols} does not match {shape:?}")));
        }
        let weight = Tensor::new(shape, r.f32s(rows * cols)?)?;
        let n = r.len()?;
        if n != bias_len {
            return Err(malformed(format!("bias of length {n}, expected {bias_len}")));
        }
        let bias = Tensor::new([n], r.f32s(n)?)?;
        params.push(LayerParams { weight, bias });
        thresholds.push(r.f64s()?);
    }
    let provenance = read_provenance(r)?;
    let network = Network::from_parts(spec, params, sibling.then_some(thresholds), alpha)
        .map_err(|e| malformed(e.to_string()))?;
    Ok(Checkpoint { network, provenance })
}

fn decode_sparse(r: &mut Reader<'_>, spec: NetworkSpec, alpha: f64) -> Result<SparseModel> {
    let gamma = r.f64()?;
    let count = r.len()?;
    let names: Vec<String> = spec.param_layers().map(|(_, l)| l.name.clone()).collect();
    if count != names.len() {
        return Err(malformed(format!("{count} layer blocks for {} layers", names.len())));
    }
    let mut layers = Vec::with_capacity(count);
    for name in names {
        if r.u8()? != TAG_CSR {
            return Err(malformed("sparse model layers must be CSR"));
        }
        let (rows, cols, nnz) = (r.len()?, r.len()?, r.len()?);
        let row_offsets = r.u32s(rows.checked_add(1).ok_or_else(|| malformed("row count overflow"))?)?;
        let col_indices = r.u32s(nnz)?;
        let values = r.f32s(nnz)?;
        let n = r.len()?;
        let bias = r.f32s(n)?;
        let thresholds = r.f64s()?;
        layers.push(SparseLayer {
            name,
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
            bias,
            thresholds,
        });
    }
    let provenance = read_provenance(r)?;
    let model = SparseModel {
        spec,
        layers,
        alpha,
        gamma,
        provenance,
    };
    model.validate().map_err(|e| malformed(e.to_string()))?;
    Ok(model)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(ckpt))
}

pub fn save_sparse(model: &SparseModel, path: impl AsRef<Path>) -> Result<()> {
    write_file(path.as_ref(), &encode_sparse(model))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<ModelArtifact> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(FormatError::MissingFile(path.to_path_buf()).into());
    }
    decode(&fs::read(path).map_err(|e| Error::io(path, e))?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    match load_model(path)? {
        ModelArtifact::Checkpoint(c) => Ok(c),
        ModelArtifact::Sparse(_) => Err(malformed("expected a dense checkpoint, found a sparse model")),
    }
}

pub fn load_sparse(path: impl AsRef<Path>) -> Result<SparseModel> {
    match load_model(path)? {
        ModelArtifact::Sparse(m) => Ok(m),
        ModelArtifact::Checkpoint(_) => Err(malformed("expected a sparse model, found a dense checkpoint")),
    }
}

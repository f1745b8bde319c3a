//! θ checkpoint layout (integers u32 LE unless noted):
//!
//! ```text
//! "V2ST" | version=1 | d_S | d_T | m | p (f64) | λ (f64) | placements (m × u32)
//! | K | c | per target label: set_len, source labels... | mapping seed (u64)
//! | source checksum (32 bytes, SHA-256)
//! | layer_count | layers "theta" [d_S] and "mask" [d_S] | payload (f64 LE)
//! ```

use std::path::Path;

use log::warn;

use super::{LabelMapping, ReprogramPlan};
use crate::nnet::io::{check_alignment, read_layers, read_payload, write_layers, write_payload, ByteReader, ByteWriter, LayerDesc, OpKind, VERSION};
use crate::nnet::{ParamSet, Tensor};
use crate::source_model::SourceModel;
use crate::{Error, Result};

pub const THETA_MAGIC: &[u8; 4] = b"V2ST";

#[derive(Debug, Clone, PartialEq)]
pub struct ThetaCheckpoint {
    pub plan: ReprogramPlan,
    pub mapping: LabelMapping,
    /// Hex SHA-256 of the source model parameters θ was trained against.
    pub source_checksum: String,
}

fn checksum_bytes(s: &str) -> Result<[u8; 32]> {
    let mut out = [0u8; 32];
    hex::decode_to_slice(s, &mut out).map_err(|_| Error::Argument(format!("invalid source checksum {s:?}")))?;
    Ok(out)
}

fn layers(d_s: usize) -> Vec<LayerDesc> {
    ["theta", "mask"]
        .iter()
        .map(|n| LayerDesc {
            name: n.to_string(),
            kind: OpKind::Reprogram,
            dims: vec![d_s as u32],
        })
        .collect()
}

impl ThetaCheckpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let plan = &self.plan;
        let mut w = ByteWriter::default();
        w.bytes(THETA_MAGIC);
        w.u32(VERSION);
        w.u32(plan.source_len() as u32);
        w.u32(plan.target_len() as u32);
        w.u32(plan.replicas() as u32);
        w.f64(plan.dropout());
        w.f64(plan.weight_decay());
        for &s in plan.placements() {
            w.u32(s as u32);
        }
        w.u32(self.mapping.source_classes() as u32);
        w.u32(self.mapping.target_classes() as u32);
        for set in self.mapping.sets() {
            w.u32(set.len() as u32);
            for &k in set {
                w.u32(k as u32);
            }
        }
        w.u64(self.mapping.seed());
        w.bytes(&checksum_bytes(&self.source_checksum)?);
        let layers = layers(plan.source_len());
        let mut params = ParamSet::new();
        params.push("theta", Tensor::vector(plan.theta().to_vec()))?;
        params.push("mask", Tensor::vector(plan.mask().to_vec()))?;
        check_alignment(&params, &layers)?;
        write_layers(&mut w, &layers);
        write_payload(&mut w, &params);
        Ok(w.buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        r.header(THETA_MAGIC)?;
        let d_s = r.u32()? as usize;
        let d_t = r.u32()? as usize;
        let m = r.u32()? as usize;
        let dropout = r.f64()?;
        let weight_decay = r.f64()?;
        let stored: Vec<usize> = (0..m).map(|_| r.u32().map(|v| v as usize)).collect::<Result<_>>()?;
        let k = r.u32()? as usize;
        let c = r.u32()? as usize;
        let mut sets = Vec::with_capacity(c.min(1024));
        for _ in 0..c {
            let n = r.u32()? as usize;
            sets.push((0..n).map(|_| r.u32().map(|v| v as usize)).collect::<Result<Vec<_>>>()?);
        }
        let seed = r.u64()?;
        let checksum = hex::encode(r.take(32)?);
        let layers_read = read_layers(&mut r)?;
        if layers_read != layers(d_s) {
            return Err(Error::Corrupt("unexpected layer table in θ checkpoint".into()));
        }
        let params = read_payload(&mut r, &layers_read)?;
        r.finish()?;

        let theta = params.tensor(0).data().to_vec();
        let plan = ReprogramPlan::from_parts(d_s, d_t, m, dropout, weight_decay, theta)
            .map_err(|e| Error::Corrupt(format!("invalid plan: {e}")))?;
        if plan.placements() != stored.as_slice() || plan.mask() != params.tensor(1).data() {
            return Err(Error::Corrupt("stored placements or mask disagree with (d_S, d_T, m)".into()));
        }
        let mapping = LabelMapping::from_sets(k, sets, seed).map_err(|e| Error::Corrupt(format!("invalid mapping: {e}")))?;
        Ok(Self {
            plan,
            mapping,
            source_checksum: checksum,
        })
    }

    /// Warns (and returns false) when `model` is not the one θ was trained on.
    pub fn matches(&self, model: &SourceModel) -> bool {
        let ok = model.checksum() == self.source_checksum;
        if !ok {
            warn!("θ checkpoint was trained against a different source model");
        }
        ok
    }
}

pub fn save_checkpoint(ckpt: &ThetaCheckpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ThetaCheckpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    ThetaCheckpoint::from_bytes(&bytes)
}

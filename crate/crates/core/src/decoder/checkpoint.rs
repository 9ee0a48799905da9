use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{DecoderParams, DecoderSpec, Weights};
use crate::error::{Error, Result};

pub const CHECKPOINT_VERSION: &str = "1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// JSON container: decoder spec, seed lineage and flat tensors in declared
/// order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format_version: String,
    pub spec: DecoderSpec,
    /// Seeds the parameters descend from, oldest first.
    pub seeds: Vec<u64>,
    pub tensors: Vec<Tensor>,
}

impl Checkpoint {
    pub fn from_params(params: &DecoderParams, seeds: Vec<u64>) -> Self {
        let tensors = params
            .weights
            .blocks()
            .into_iter()
            .map(|(name, (r, c), v)| Tensor {
                name,
                shape: [r, c],
                values: v.to_vec(),
            })
            .collect();
        Checkpoint {
            format_version: CHECKPOINT_VERSION.to_string(),
            spec: params.spec,
            seeds,
            tensors,
        }
    }

    pub fn into_params(self) -> Result<DecoderParams> {
        if self.format_version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch {
                found: self.format_version,
                expected: CHECKPOINT_VERSION.to_string(),
            });
        }
        self.spec.validate()?;
        let mut weights = Weights::zeros(&self.spec);
        let layout: Vec<(String, (usize, usize))> = weights
            .blocks()
            .into_iter()
            .map(|(n, s, _)| (n, s))
            .collect();
        if layout.len() != self.tensors.len() {
            return Err(Error::ShapeMismatch(format!(
                "checkpoint has {} tensors, spec needs {}",
                self.tensors.len(),
                layout.len()
            )));
        }
        for ((dst, (name, (r, c))), t) in weights
            .blocks_mut()
            .into_iter()
            .zip(layout)
            .zip(&self.tensors)
        {
            if t.name != name || t.shape != [r, c] || t.values.len() != r * c {
                return Err(Error::ShapeMismatch(format!(
                    "tensor {} {:?} does not match expected {name} [{r}, {c}]",
                    t.name, t.shape
                )));
            }
            dst.copy_from_slice(&t.values);
        }
        if !weights.is_finite() {
            return Err(Error::InvalidConfig("checkpoint holds non-finite values".into()));
        }
        Ok(DecoderParams {
            spec: self.spec,
            weights,
        })
    }
}

pub fn save_checkpoint(params: &DecoderParams, seeds: Vec<u64>, path: &Path) -> Result<()> {
    let ck = Checkpoint::from_params(params, seeds);
    fs::write(path, serde_json::to_string_pretty(&ck)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DecoderParams, Vec<u64>)> {
    let text = fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::ParseError {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let seeds = ck.seeds.clone();
    Ok((ck.into_params()?, seeds))
}

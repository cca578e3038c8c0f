use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::mlp::{Dense, Mlp};
use crate::error::{data, Result};

pub const CHECKPOINT_FORMAT: &str = "cityadapt-params";
pub const CHECKPOINT_VERSION: u32 = 1;

/// One named parameter group; each layer stores its `rows x cols` shape
/// and row-major weight values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGroup {
    pub name: String,
    pub frozen: bool,
    pub layers: Vec<Dense>,
}

impl ParamGroup {
    pub fn from_mlp(name: &str, m: &Mlp) -> Self {
        Self { name: name.to_string(), frozen: m.frozen, layers: m.layers.clone() }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        for l in &self.layers {
            if l.weight.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(data(format!("group {}: layer values do not match shape", self.name)));
            }
        }
        let mut m = Mlp::from_layers(self.layers.clone())?;
        m.frozen = self.frozen;
        Ok(m)
    }
}

/// Versioned container of named parameter groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub groups: Vec<ParamGroup>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, String>,
}

impl Default for Checkpoint {
    fn default() -> Self {
        Self { format: CHECKPOINT_FORMAT.into(), version: CHECKPOINT_VERSION, groups: Vec::new(), meta: BTreeMap::new() }
    }
}

impl Checkpoint {
    pub fn push(&mut self, name: &str, m: &Mlp) {
        self.groups.push(ParamGroup::from_mlp(name, m));
    }

    pub fn group(&self, name: &str) -> Result<Mlp> {
        self.groups
            .iter()
            .find(|g| g.name == name)
            .ok_or_else(|| data(format!("checkpoint has no parameter group {name:?}")))?
            .to_mlp()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(s)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(data(format!("unknown checkpoint format {:?}", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(data(format!("unsupported checkpoint version {}", ck.version)));
        }
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Canonical byte encoding of a single MLP, used for bit-identity audits.
pub fn mlp_bytes(m: &Mlp) -> Vec<u8> {
    m.layers
        .iter()
        .flat_map(|l| l.weight.iter().chain(&l.bias))
        .flat_map(|x| x.to_le_bytes())
        .collect()
}

//! Context vectors appended to the sensor observation.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::terrain::{Property, PropertyLevel, PropertyLevels};

/// How a policy receives terrain context.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    NoContext,
    Indexing,
    Embedding,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::NoContext, Method::Indexing, Method::Embedding];

    pub fn name(self) -> &'static str {
        match self {
            Method::NoContext => "no_context",
            Method::Indexing => "indexing",
            Method::Embedding => "embedding",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "no_context" | "nocontext" | "none" => Ok(Method::NoContext),
            "indexing" | "index" => Ok(Method::Indexing),
            "embedding" | "embed" => Ok(Method::Embedding),
            other => Err(Error::Argument(format!("unknown method {other:?}"))),
        }
    }
}

/// Order of the one-hot blocks in an `Embedding` vector.
///
/// The default is the four qualitative properties. `five_block` appends a
/// rolling-friction block, which is graded together with friction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BlockOrder(pub Vec<Property>);

impl Default for BlockOrder {
    fn default() -> Self {
        BlockOrder(Property::QUALITATIVE.to_vec())
    }
}

impl BlockOrder {
    pub fn five_block() -> Self {
        let mut v = Property::QUALITATIVE.to_vec();
        v.push(Property::RollingFriction);
        BlockOrder(v)
    }

    pub fn dim(&self) -> usize {
        self.0.len() * PropertyLevel::COUNT
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEmbedding {
    pub mode: Method,
    pub values: Vec<u8>,
}

impl ContextEmbedding {
    pub fn empty() -> Self {
        Self {
            mode: Method::NoContext,
            values: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.values.iter().map(|&v| f64::from(v)).collect()
    }
}

pub fn onehot(level: PropertyLevel) -> [u8; 5] {
    let mut v = [0u8; 5];
    v[level.ordinal()] = 1;
    v
}

/// Concatenated per-property one-hot blocks in the default order.
pub fn embed(levels: &PropertyLevels) -> ContextEmbedding {
    embed_with_order(levels, &BlockOrder::default())
}

pub fn embed_with_order(levels: &PropertyLevels, order: &BlockOrder) -> ContextEmbedding {
    let values = order
        .0
        .iter()
        .flat_map(|&p| onehot(levels.get(p)))
        .collect();
    ContextEmbedding {
        mode: Method::Embedding,
        values,
    }
}

/// Inverse of [`embed`]; `None` unless every block is a valid one-hot.
pub fn decode_embedding(values: &[u8]) -> Option<PropertyLevels> {
    if values.len() != BlockOrder::default().dim() {
        return None;
    }
    let mut levels = PropertyLevels::default();
    for (block, &p) in values.chunks(5).zip(Property::QUALITATIVE.iter()) {
        if block.iter().map(|&v| v as usize).sum::<usize>() != 1 {
            return None;
        }
        let idx = block.iter().position(|&v| v == 1)?;
        levels.set(p, PropertyLevel::from_ordinal(idx)?);
    }
    Some(levels)
}

/// Scenario one-hot during training, all-zero padding at evaluation.
pub fn index_embedding(
    scenario_index: usize,
    n_scenarios: usize,
    is_training: bool,
) -> Result<ContextEmbedding> {
    let mut values = vec![0u8; n_scenarios];
    if is_training {
        if scenario_index >= n_scenarios {
            return Err(Error::Argument(format!(
                "scenario index {scenario_index} out of range for {n_scenarios} scenarios"
            )));
        }
        values[scenario_index] = 1;
    }
    Ok(ContextEmbedding {
        mode: Method::Indexing,
        values,
    })
}

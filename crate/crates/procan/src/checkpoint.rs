//! Checkpoints: the resolved config, every parameter tensor, optimizer
//! state, growth states, and the four rng streams, as one JSON document.
//! JSON floats are written in shortest-round-trip form, so a save/load
//! cycle reproduces every f64 bit for bit.

use crate::error::Result;
use crate::network::Network;
use crate::numerics::AdamState;
use crate::trainer::{RngStreams, TrainConfig};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub network: Network,
    pub adam: AdamState,
    pub streams: RngStreams,
    /// Global epochs completed when the checkpoint was taken.
    pub epoch: usize,
}

pub fn save(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    let json = serde_json::to_string(checkpoint)?;
    fs::write(path, json)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

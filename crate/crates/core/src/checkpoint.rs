//! JSON checkpoint format.
//!
//! ```json
//! {
//!   "layer_dims": [4, 3, 2],
//!   "k": 2,
//!   "weights": [[...row-major...], [...]],
//!   "biases": [[...], [...]],
//!   "masks": [[[r, c], ...], ...],
//!   "skips": [{"from": 0, "to": 2, "weights": [...], "mask": [[r, c], ...]}]
//! }
//! ```
//!
//! Masks are stored as coordinate lists of kept entries. Weights round-trip
//! exactly because `serde_json` prints the shortest representation that parses
//! back to the same `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{Network, SkipConn};
use crate::numcore::{Mask, Matrix};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub layer_dims: Vec<usize>,
    pub k: usize,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    pub masks: Vec<Vec<[usize; 2]>>,
    pub skips: Vec<SkipRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkipRecord {
    pub from: usize,
    pub to: usize,
    pub weights: Vec<f64>,
    pub mask: Vec<[usize; 2]>,
}

impl From<&Network> for Checkpoint {
    fn from(net: &Network) -> Self {
        Checkpoint {
            layer_dims: net.layer_dims.clone(),
            k: net.skip_span,
            weights: net
                .seq_weights
                .iter()
                .map(|w| w.as_slice().to_vec())
                .collect(),
            biases: net.biases.clone(),
            masks: net.seq_masks.iter().map(Mask::coords).collect(),
            skips: net
                .skips
                .iter()
                .map(|s| SkipRecord {
                    from: s.from_layer,
                    to: s.to_layer,
                    weights: s.weight.as_slice().to_vec(),
                    mask: s.mask.coords(),
                })
                .collect(),
        }
    }
}

impl Checkpoint {
    pub fn into_network(self) -> Result<Network> {
        let dims = &self.layer_dims;
        if dims.len() < 2
            || self.weights.len() != dims.len() - 1
            || self.masks.len() != dims.len() - 1
        {
            return Err(Error::Dimension(format!(
                "checkpoint with {} layer dims has {} weight and {} mask entries",
                dims.len(),
                self.weights.len(),
                self.masks.len()
            )));
        }
        let mut seq_weights = Vec::new();
        let mut seq_masks = Vec::new();
        for (i, (w, m)) in self.weights.into_iter().zip(&self.masks).enumerate() {
            let (rows, cols) = (dims[i + 1], dims[i]);
            seq_weights.push(Matrix::from_vec(rows, cols, w)?);
            seq_masks.push(Mask::from_coords(rows, cols, m)?);
        }
        let mut skips = Vec::new();
        for s in self.skips {
            if s.from >= dims.len() || s.to >= dims.len() {
                return Err(Error::Dimension(format!(
                    "skip {} -> {} refers to a missing layer",
                    s.from, s.to
                )));
            }
            let (rows, cols) = (dims[s.to], dims[s.from]);
            skips.push(SkipConn {
                from_layer: s.from,
                to_layer: s.to,
                weight: Matrix::from_vec(rows, cols, s.weights)?,
                mask: Mask::from_coords(rows, cols, &s.mask)?,
            });
        }
        let net = Network {
            layer_dims: self.layer_dims,
            skip_span: self.k,
            seq_weights,
            seq_masks,
            biases: self.biases,
            skips,
        };
        net.validate()?;
        Ok(net)
    }
}

pub fn to_json(net: &Network) -> Result<String> {
    Ok(serde_json::to_string(&Checkpoint::from(net))?)
}

pub fn from_json(s: &str) -> Result<Network> {
    let ck: Checkpoint = serde_json::from_str(s)?;
    ck.into_network()
}

pub fn save(net: &Network, path: &Path) -> Result<()> {
    fs::write(path, to_json(net)?)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Network> {
    from_json(&fs::read_to_string(path)?)
}

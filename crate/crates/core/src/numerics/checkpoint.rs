//! Model checkpoints as JSON. Floats are written with shortest round-trip
//! formatting, so save/load is bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Linear, Matrix, Mlp, OptimizerMode, TreeNet};
use crate::error::{Error, Result};
use crate::training::{TrainConfig, TreeModel};
use crate::tree::TreeLayout;

pub const FORMAT: &str = "ptree-checkpoint v1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct LayerRecord {
    rows: usize,
    cols: usize,
    /// Row-major.
    weight: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct NetRecord {
    activation: Activation,
    layers: Vec<LayerRecord>,
}

impl NetRecord {
    fn of(mlp: &Mlp) -> Self {
        let layers = mlp
            .layers()
            .iter()
            .map(|l| LayerRecord {
                rows: l.weight.rows(),
                cols: l.weight.cols(),
                weight: l.weight.as_slice().to_vec(),
                bias: l.bias.clone(),
            })
            .collect();
        Self { activation: mlp.hidden_activation(), layers }
    }

    fn to_mlp(&self) -> Result<Mlp> {
        let layers = self
            .layers
            .iter()
            .map(|l| Linear::new(Matrix::from_vec(l.rows, l.cols, l.weight.clone())?, l.bias.clone()))
            .collect::<Result<Vec<_>>>()?;
        Mlp::from_layers(layers, self.activation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Record {
    format: String,
    config_hash: String,
    manifest: Option<String>,
    optimizer: OptimizerMode,
    config: TrainConfig,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    dim: usize,
    leaf_net: NetRecord,
    prob_net: NetRecord,
}

/// A trained model with the configuration that produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: TreeModel,
    /// Hash of the run manifest that wrote the file, if any.
    pub manifest: Option<String>,
}

impl Checkpoint {
    pub fn new(config: TrainConfig, model: TreeModel) -> Self {
        Self { config, model, manifest: None }
    }

    pub fn to_json(&self) -> String {
        let layout = self.model.layout;
        let record = Record {
            format: FORMAT.into(),
            config_hash: self.config.hash(),
            manifest: self.manifest.clone(),
            optimizer: self.config.optimizer,
            config: self.config.clone(),
            k: layout.degree(),
            d: layout.depth(),
            dim: self.model.dim(),
            leaf_net: NetRecord::of(self.model.net.leaf_net()),
            prob_net: NetRecord::of(self.model.net.prob_net()),
        };
        serde_json::to_string_pretty(&record).expect("checkpoint serialises") + "\n"
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let r: Record = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if r.format != FORMAT {
            return Err(Error::parse(origin, format!("unknown format {:?}", r.format)));
        }
        if r.config_hash != r.config.hash() {
            return Err(Error::parse(origin, "config hash does not match the stored config"));
        }
        let layout = TreeLayout::new(r.k, r.d)?;
        let net = TreeNet::from_parts(layout.leaf_count(), r.dim, r.leaf_net.to_mlp()?, r.prob_net.to_mlp()?)?;
        Ok(Self { config: r.config, model: TreeModel::new(layout, net)?, manifest: r.manifest })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bit_exact_round_trip() {
        let layout = TreeLayout::new(2, 2).unwrap();
        let net = TreeNet::new(4, 2, 7, 3, 99).unwrap();
        let mut cp = Checkpoint::new(TrainConfig::new(2, 2), TreeModel::new(layout, net).unwrap());
        cp.manifest = Some("feed".into());
        let back = Checkpoint::from_json(&cp.to_json(), Path::new("mem")).unwrap();
        assert_eq!(back, cp);
        for (a, b) in back.model.net.leaf_net().blocks().iter().zip(cp.model.net.leaf_net().blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        assert_eq!(back.to_json(), cp.to_json());
    }

    #[test]
    fn tampering_is_detected() {
        let layout = TreeLayout::new(2, 1).unwrap();
        let cp = Checkpoint::new(TrainConfig::new(2, 1), TreeModel::new(layout, TreeNet::zeros(2, 2, 4, 2).unwrap()).unwrap());
        let text = cp.to_json();
        assert!(Checkpoint::from_json(&text.replace("\"epochs\": 70", "\"epochs\": 71"), Path::new("x")).is_err());
        assert!(Checkpoint::from_json(&text.replace(FORMAT, "other"), Path::new("x")).is_err());
        assert!(Checkpoint::from_json("{", Path::new("x")).is_err());
    }
}

//! Versioned JSON model checkpoints.
//!
//! Floats are written in shortest round-trip form, so a checkpoint reloads
//! bit-exactly.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bayes_net::BayesNet;
use crate::config::format_config;
use crate::error::{Error, Result};
use crate::losses::LossVariant;
use crate::training::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub dims: Vec<usize>,
    pub loss_variant: LossVariant,
    pub n_passes: usize,
    /// SHA-256 of the canonical config text.
    pub config_hash: String,
    pub config: TrainConfig,
    pub epoch: usize,
    pub net: BayesNet,
}

pub fn config_hash(cfg: &TrainConfig) -> String {
    hex::encode(Sha256::digest(format_config(cfg).as_bytes()))
}

impl Checkpoint {
    pub fn new(net: BayesNet, cfg: &TrainConfig, epoch: usize) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            dims: net.dims(),
            loss_variant: cfg.loss_variant,
            n_passes: cfg.n_passes,
            config_hash: config_hash(cfg),
            config: cfg.clone(),
            epoch,
            net,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::invalid(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        self.net.validate()?;
        if self.net.dims() != self.dims {
            return Err(Error::shape("checkpoint", format!("{:?}", self.dims), format!("{:?}", self.net.dims())));
        }
        if config_hash(&self.config) != self.config_hash {
            return Err(Error::invalid("checkpoint config hash does not match its config"));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: e.line() as u64,
            msg: e.to_string(),
        })?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::rng_from_seed;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut rng = rng_from_seed(5);
        let mut net = BayesNet::new(&[3, 4, 1], 1.0, &mut rng).unwrap();
        net.layers[0].mu_w[[0, 0]] = 0.1 + 0.2;
        net.layers[1].rho_b[0] = -40.000000000000014;
        let ck = Checkpoint::new(net, &TrainConfig::default(), 3);
        let back = Checkpoint::from_json(&ck.to_json().unwrap(), Path::new("ck.json")).unwrap();
        let a: Vec<u64> = ck.net.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.net.flat_params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back, ck);
    }

    #[test]
    fn tampering_is_detected() {
        let mut rng = rng_from_seed(5);
        let net = BayesNet::new(&[2, 1], 1.0, &mut rng).unwrap();
        let mut ck = Checkpoint::new(net, &TrainConfig::default(), 1);
        ck.config.epochs = 7;
        assert!(ck.validate().is_err());
        let e = Checkpoint::from_json("{\n  \"version\": ", Path::new("bad.json")).unwrap_err();
        assert!(e.to_string().starts_with("bad.json:2:"), "{e}");
    }
}

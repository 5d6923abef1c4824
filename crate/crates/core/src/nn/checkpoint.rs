//! JSON checkpoints: a header (layer specs, seed, counters) followed by the
//! flat parameter array of each network. Floats round-trip bit-exactly.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{DenseNet, LayerSpec};
use crate::error::{Result, ServoError};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub seed: u64,
    #[serde(default)]
    pub counters: BTreeMap<String, u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetRecord {
    pub layers: Vec<LayerSpec>,
    pub params: Vec<f64>,
}

impl From<&DenseNet> for NetRecord {
    fn from(net: &DenseNet) -> Self {
        Self {
            layers: net.layers().to_vec(),
            params: net.params().to_vec(),
        }
    }
}

impl NetRecord {
    pub fn into_net(self) -> Result<DenseNet> {
        DenseNet::from_params(self.layers, self.params)
            .map_err(|e| ServoError::MalformedCheckpoint(e.to_string()))
    }
}

/// Writes `value` as JSON and returns the SHA-256 of the written bytes.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<String> {
    let bytes = serde_json::to_vec(value)?;
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, &bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    if !path.exists() {
        return Err(ServoError::MissingCheckpoint(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| ServoError::MalformedCheckpoint(format!("{}: {e}", path.display())))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{chain, Activation};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn bit_exact_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let net = DenseNet::init(chain(&[5, 7, 3], &[Activation::Relu, Activation::Tanh]), &mut rng).unwrap();
        let rec = NetRecord::from(&net);
        let text = serde_json::to_string(&rec).unwrap();
        let back: NetRecord = serde_json::from_str(&text).unwrap();
        let net2 = back.into_net().unwrap();
        for (a, b) in net.params().iter().zip(net2.params()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_file_is_named() {
        let err = read_json::<NetRecord>(Path::new("/nonexistent/ckpt.json")).unwrap_err();
        assert!(err.to_string().contains("/nonexistent/ckpt.json"));
    }
}

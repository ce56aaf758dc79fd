//! JSON run manifests: the full configuration of a run plus kernel bank hashes,
//! identified by a SHA-256 over their canonical serialization.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

pub const FORMAT: &str = "haarlab-manifest-1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub format: String,
    pub version: String,
    pub command: String,
    /// Every configuration key, values as written in a config file.
    pub config: BTreeMap<String, String>,
    /// Kernel bank hash per moment order.
    pub kernels: BTreeMap<u32, String>,
    /// Hex SHA-256 of the manifest with this field empty.
    #[serde(default)]
    pub hash: String,
}

impl RunManifest {
    pub fn new(command: &str, config: BTreeMap<String, String>, kernels: BTreeMap<u32, String>) -> Self {
        let mut m = Self {
            format: FORMAT.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            command: command.into(),
            config,
            kernels,
            hash: String::new(),
        };
        m.hash = m.compute_hash();
        m
    }

    pub fn compute_hash(&self) -> String {
        let bare = Self { hash: String::new(), ..self.clone() };
        let s = serde_json::to_string(&bare).expect("manifest serializes");
        Sha256::digest(s.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Short form written into output headers.
    pub fn short_hash(&self) -> &str {
        &self.hash[..16]
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }

    pub fn verify(&self) -> bool {
        self.hash == self.compute_hash()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> RunManifest {
        let cfg = [("d", "1"), ("J", "14"), ("q", "inf")].iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        RunManifest::new("check", cfg, BTreeMap::from([(5, "abc".to_string())]))
    }

    #[test]
    fn json_round_trip_keeps_hash() {
        let m = sample();
        let back: RunManifest = serde_json::from_str(&m.to_json()).unwrap();
        assert_eq!(back, m);
        assert!(back.verify());
    }

    #[test]
    fn hash_tracks_config() {
        let a = sample();
        let mut cfg = a.config.clone();
        cfg.insert("seed".into(), "2".into());
        let b = RunManifest::new("check", cfg, a.kernels.clone());
        assert_ne!(a.hash, b.hash);
        assert_eq!(a.hash.len(), 64);
    }
}

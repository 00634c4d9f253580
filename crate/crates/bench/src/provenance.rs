//! Build id, config digests and per-cell seeds.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::Result;

/// `git describe` of the build, or the crate version outside a checkout.
pub const BUILD_ID: &str = env!("HOLOFIT_BUILD_ID");

/// First 16 hex digits of the SHA-256 of the config's canonical JSON.
pub fn config_digest<T: Serialize>(config: &T) -> Result<String> {
    let bytes = serde_json::to_vec(config)?;
    Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
}

/// Seed of an experiment cell, `hash(master, cell)`.
pub fn cell_seed(master: u64, cell: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(master.to_le_bytes());
    for c in cell {
        h.update(c.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_depend_on_every_part() {
        let a = cell_seed(1, &[50, 0]);
        assert_eq!(a, cell_seed(1, &[50, 0]));
        assert_ne!(a, cell_seed(2, &[50, 0]));
        assert_ne!(a, cell_seed(1, &[50, 1]));
        assert_ne!(a, cell_seed(1, &[0, 50]));
    }

    #[test]
    fn digest_is_stable() {
        let v = serde_json::json!({"a": 1, "b": [1, 2]});
        assert_eq!(config_digest(&v).unwrap(), config_digest(&v).unwrap());
        assert_eq!(config_digest(&v).unwrap().len(), 16);
        assert_ne!(config_digest(&v).unwrap(), config_digest(&serde_json::json!({"a": 2})).unwrap());
    }
}

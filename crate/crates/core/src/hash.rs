use sha2::{Digest, Sha256};

pub(crate) fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Digest of the point coordinates as little-endian `f64` bytes.
pub(crate) fn cloud_digest(cloud: &crate::PointCloud) -> String {
    let mut h = Sha256::new();
    for p in cloud.points() {
        for c in p.iter() {
            h.update(c.to_le_bytes());
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

//! Weight file: magic `CWNN`, version, layer count, then per layer
//! `rows, cols` (u32) followed by row-major weights and the bias vector, all
//! little-endian `f64`; trailing CRC32.

use std::fs;
use std::path::Path;

use super::network::{Dense, NetworkParams};
use crate::binfmt::{Reader, Writer};
use crate::error::{Error, Result};

pub const WEIGHTS_MAGIC: &[u8; 4] = b"CWNN";
pub const WEIGHTS_VERSION: u32 = 1;

/// Serializes any layer stack; shape checks happen on load.
pub fn encode_layers(layers: &[Dense]) -> Vec<u8> {
    let mut w = Writer::new(WEIGHTS_MAGIC);
    w.u32(WEIGHTS_VERSION);
    w.u32(layers.len() as u32);
    for layer in layers {
        w.u32(layer.outputs as u32);
        w.u32(layer.inputs as u32);
        for v in &layer.weights {
            w.f64(*v);
        }
        for v in &layer.bias {
            w.f64(*v);
        }
    }
    w.finish()
}

pub fn decode_layers(bytes: &[u8]) -> Result<Vec<Dense>> {
    let mut r = Reader::open(bytes, WEIGHTS_MAGIC)?;
    let version = r.u32()?;
    if version != WEIGHTS_VERSION {
        return Err(Error::VersionMismatch {
            expected: WEIGHTS_VERSION,
            found: version,
        });
    }
    let count = r.u32()? as usize;
    let mut layers = Vec::with_capacity(count.min(16));
    for _ in 0..count {
        let outputs = r.u32()? as usize;
        let inputs = r.u32()? as usize;
        let needed = (outputs * inputs + outputs) * 8;
        if needed > r.remaining() {
            return Err(Error::CorruptFile(format!(
                "layer {outputs}x{inputs} needs {needed} bytes, {} left",
                r.remaining()
            )));
        }
        let mut layer = Dense::zeros(inputs, outputs);
        for v in &mut layer.weights {
            *v = r.f64()?;
        }
        for v in &mut layer.bias {
            *v = r.f64()?;
        }
        layers.push(layer);
    }
    r.expect_end()?;
    Ok(layers)
}

pub fn weights_to_bytes(params: &NetworkParams) -> Vec<u8> {
    encode_layers(params.layers())
}

pub fn weights_from_bytes(bytes: &[u8]) -> Result<NetworkParams> {
    NetworkParams::from_layers(decode_layers(bytes)?)
}

pub fn save_weights(params: &NetworkParams, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, weights_to_bytes(params))?;
    Ok(())
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<NetworkParams> {
    weights_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::network::init_network;

    #[test]
    fn save_load_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.cwnn");
        let p = init_network(17);
        save_weights(&p, &path).unwrap();
        let q = load_weights(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!(weights_to_bytes(&p), fs::read(&path).unwrap());
    }

    #[test]
    fn truncated_file_is_corrupt() {
        let bytes = weights_to_bytes(&init_network(1));
        for cut in [3, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(weights_from_bytes(&bytes[..cut]), Err(Error::CorruptFile(_))));
        }
    }

    #[test]
    fn flipped_byte_is_corrupt() {
        let mut bytes = weights_to_bytes(&init_network(1));
        bytes[100] ^= 0x40;
        assert!(matches!(weights_from_bytes(&bytes), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn wrong_shape_is_rejected() {
        let mut layers = init_network(1).layers().to_vec();
        layers[2] = Dense::zeros(64, 15);
        layers[3] = Dense::zeros(15, 1);
        let bytes = encode_layers(&layers);
        assert!(matches!(weights_from_bytes(&bytes), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut w = Writer::new(WEIGHTS_MAGIC);
        w.u32(WEIGHTS_VERSION + 1);
        w.u32(0);
        let bytes = w.finish();
        assert!(matches!(
            weights_from_bytes(&bytes),
            Err(Error::VersionMismatch { found: 2, .. })
        ));
    }
}

//! Binary model format.
//!
//! Little-endian layout:
//!
//! ```text
//! "SPNN"              4 bytes magic
//! version             u32 (= 1)
//! num_classes         u32
//! input_dim           u32
//! layer_count         u32
//! class mask          ceil(num_classes / 8) bytes, bit c at byte c/8, LSB first
//! layer shapes        layer_count x (out u32, in u32)
//! layer data          per layer: out*in f64 weights (row-major), out f64 biases
//! ```

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use super::matrix::Matrix;
use super::model::{Activation, Classifier, DenseLayer, MlpArchitecture};
use crate::error::{format_err, Result};
use crate::types::ExpertiseDomain;

pub const MAGIC: &[u8; 4] = b"SPNN";
pub const FORMAT_VERSION: u32 = 1;

pub fn encode(model: &Classifier) -> Vec<u8> {
    let k = model.num_classes();
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(k as u32).to_le_bytes());
    out.extend_from_slice(&(model.input_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(model.layers().len() as u32).to_le_bytes());
    let mut bits = vec![0u8; k.div_ceil(8)];
    for &c in model.class_mask().classes() {
        bits[c / 8] |= 1 << (c % 8);
    }
    out.extend_from_slice(&bits);
    for layer in model.layers() {
        out.extend_from_slice(&(layer.out_dim() as u32).to_le_bytes());
        out.extend_from_slice(&(layer.in_dim() as u32).to_le_bytes());
    }
    for layer in model.layers() {
        for w in layer.weights.data() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        for b in &layer.bias {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    out
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(format_err(
                self.pos as u64,
                format!("truncated while reading {what}: need {n} bytes"),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self, what: &str) -> Result<f64> {
        let b = self.take(8, what)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn decode(buf: &[u8]) -> Result<Classifier> {
    let mut cur = Cursor { buf, pos: 0 };
    if cur.take(4, "magic")? != MAGIC {
        return Err(format_err(0, "bad magic, expected \"SPNN\""));
    }
    let version = cur.u32("version")?;
    if version != FORMAT_VERSION {
        return Err(format_err(4, format!("unsupported format version {version}")));
    }
    let k = cur.u32("num_classes")? as usize;
    let input_dim = cur.u32("input_dim")? as usize;
    let n_layers = cur.u32("layer_count")? as usize;
    if n_layers == 0 {
        return Err(format_err(16, "layer_count must be >= 1"));
    }
    let mask_at = cur.pos as u64;
    let bits = cur.take(k.div_ceil(8), "class mask")?;
    let classes: Vec<usize> = (0..k).filter(|&c| bits[c / 8] & (1 << (c % 8)) != 0).collect();
    let mask = ExpertiseDomain::new(classes, k).map_err(|e| format_err(mask_at, e.to_string()))?;

    let mut shapes = Vec::with_capacity(n_layers);
    for _ in 0..n_layers {
        let out = cur.u32("layer rows")? as usize;
        let inp = cur.u32("layer cols")? as usize;
        shapes.push((out, inp));
    }
    let hidden_dims: Vec<usize> = shapes[..n_layers - 1].iter().map(|s| s.0).collect();
    let arch = MlpArchitecture {
        input_dim,
        hidden_dims,
        num_classes: k,
        activation: Activation::Relu,
    };
    if arch.layer_shapes() != shapes {
        return Err(format_err(
            mask_at + bits.len() as u64,
            "layer shapes do not chain from input_dim to num_classes",
        ));
    }

    let mut layers = Vec::with_capacity(n_layers);
    for &(out, inp) in &shapes {
        let at = cur.pos as u64;
        let mut w = Vec::with_capacity(out * inp);
        for _ in 0..out * inp {
            w.push(cur.f64("weights")?);
        }
        let mut bias = Vec::with_capacity(out);
        for _ in 0..out {
            bias.push(cur.f64("biases")?);
        }
        let weights = Matrix::from_vec(out, inp, w).map_err(|e| format_err(at, e.to_string()))?;
        layers.push(DenseLayer { weights, bias });
    }
    if cur.pos != buf.len() {
        return Err(format_err(cur.pos as u64, "trailing bytes after model data"));
    }
    Classifier::from_parts(arch, layers, mask).map_err(|e| format_err(0, e.to_string()))
}

pub fn save(model: &Classifier, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode(model))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Classifier> {
    decode(&fs::read(path)?)
}

/// Hex SHA-256 of the encoded model.
pub fn fingerprint(model: &Classifier) -> String {
    hex::encode(Sha256::digest(encode(model)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_model(seed: u64, k: usize, mask: Vec<usize>) -> Classifier {
        let arch = MlpArchitecture::new(5, vec![3, 4], k).unwrap();
        let mask = ExpertiseDomain::new(mask, k).unwrap();
        Classifier::initialize(&arch, mask, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(seed in any::<u64>(), mask in prop::collection::btree_set(0usize..11, 1..11)) {
            let model = random_model(seed, 11, mask.into_iter().collect());
            let bytes = encode(&model);
            let back = decode(&bytes).unwrap();
            prop_assert_eq!(&back, &model);
            prop_assert_eq!(encode(&back), bytes);
        }
    }

    #[test]
    fn header_layout() {
        let model = random_model(1, 10, vec![1, 4, 9]);
        let b = encode(&model);
        assert_eq!(&b[..4], b"SPNN");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(b[8..12].try_into().unwrap()), 10);
        assert_eq!(u32::from_le_bytes(b[12..16].try_into().unwrap()), 5);
        assert_eq!(u32::from_le_bytes(b[16..20].try_into().unwrap()), 3);
        assert_eq!(&b[20..22], &[0b0001_0010, 0b0000_0010]);
    }

    #[test]
    fn bad_magic_and_truncation() {
        let model = random_model(2, 3, vec![0, 1, 2]);
        let mut b = encode(&model);
        b[0] = b'X';
        assert!(matches!(decode(&b), Err(Error::Format { offset: 0, .. })));
        let b = encode(&model);
        assert!(matches!(decode(&b[..b.len() - 3]), Err(Error::Format { .. })));
    }
}

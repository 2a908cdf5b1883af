//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic           8 bytes  "XGEMCKPT"
//! format_version  u32      currently 1
//! kind            u32 length + UTF-8 ("classifier" | "vae")
//! spec            u32 length + UTF-8 JSON architecture description
//! tensor_count    u32
//! per tensor:     u32 rank, rank x u64 extents, prod(extents) x f64
//! ```
//!
//! Parameters are stored as raw IEEE-754 bits, so a load reproduces them
//! exactly. Trailing bytes, shape disagreements with the spec, and short
//! reads are all rejected before any model is built.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::{Classifier, ClassifierMeta};
use super::mlp::Mlp;
use super::vae::{VaeModel, VaeSpec};
use crate::error::{Error, Result};
use crate::nd::Tensor;

pub const MAGIC: &[u8; 8] = b"XGEMCKPT";
pub const FORMAT_VERSION: u32 = 1;

/// Models that can round-trip through the checkpoint container.
pub trait Persist: Sized {
    const KIND: &'static str;

    fn spec_json(&self) -> Result<String>;

    fn tensors(&self) -> Vec<&Tensor>;

    fn from_parts(spec_json: &str, tensors: Vec<Tensor>) -> Result<Self>;
}

impl Persist for Classifier {
    const KIND: &'static str = "classifier";

    fn spec_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&ClassifierMeta {
            spec: self.spec().clone(),
        })?)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        self.mlp().parameters()
    }

    fn from_parts(spec_json: &str, tensors: Vec<Tensor>) -> Result<Self> {
        let meta: ClassifierMeta = serde_json::from_str(spec_json)
            .map_err(|e| Error::Inconsistent(format!("classifier spec: {e}")))?;
        Classifier::new(Mlp::from_parts(meta.spec, tensors)?)
    }
}

#[derive(Serialize, Deserialize)]
struct VaeMeta {
    spec: VaeSpec,
    encoder_tensors: usize,
}

impl Persist for VaeModel {
    const KIND: &'static str = "vae";

    fn spec_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&VaeMeta {
            spec: self.spec().clone(),
            encoder_tensors: self.encoder().parameters().len(),
        })?)
    }

    fn tensors(&self) -> Vec<&Tensor> {
        let mut all = self.encoder().parameters();
        all.extend(self.decoder().parameters());
        all
    }

    fn from_parts(spec_json: &str, mut tensors: Vec<Tensor>) -> Result<Self> {
        let meta: VaeMeta = serde_json::from_str(spec_json)
            .map_err(|e| Error::Inconsistent(format!("vae spec: {e}")))?;
        if meta.encoder_tensors > tensors.len() {
            return Err(Error::Inconsistent("encoder tensor count exceeds total".into()));
        }
        let decoder_tensors = tensors.split_off(meta.encoder_tensors);
        let encoder = Mlp::from_parts(meta.spec.encoder_spec(), tensors)?;
        let decoder = Mlp::from_parts(meta.spec.decoder_spec(), decoder_tensors)?;
        VaeModel::from_parts(meta.spec, encoder, decoder)
    }
}

pub fn to_bytes<M: Persist>(model: &M) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for s in [M::KIND.to_string(), model.spec_json()?] {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
        out.extend_from_slice(s.as_bytes());
    }
    let tensors = model.tensors();
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for d in t.shape() {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!("checkpoint ended while reading {what}")));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self, what: &str) -> Result<String> {
        let n = self.u32(what)? as usize;
        let bytes = self.take(n, what)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| Error::Inconsistent(format!("{what} is not UTF-8")))
    }
}

pub fn from_bytes<M: Persist>(buf: &[u8]) -> Result<M> {
    let mut r = Reader { buf, pos: 0 };
    let expected = format!("{} v{FORMAT_VERSION}", String::from_utf8_lossy(MAGIC));
    let magic = r.take(8, "magic").map_err(|_| Error::VersionMismatch {
        expected: expected.clone(),
        found: "short header".into(),
    })?;
    let version = r.u32("format version").map_err(|_| Error::VersionMismatch {
        expected: expected.clone(),
        found: "short header".into(),
    })?;
    if magic != MAGIC || version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected,
            found: format!("{} v{version}", String::from_utf8_lossy(magic).escape_debug()),
        });
    }
    let kind = r.string("model kind")?;
    if kind != M::KIND {
        return Err(Error::Inconsistent(format!(
            "checkpoint holds a {kind}, expected a {}",
            M::KIND
        )));
    }
    let spec = r.string("spec")?;
    let count = r.u32("tensor count")? as usize;
    let mut tensors = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let rank = r.u32("tensor rank")? as usize;
        let mut shape = Vec::with_capacity(rank.min(8));
        for _ in 0..rank {
            shape.push(r.u64("tensor extent")? as usize);
        }
        let len = shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .ok_or_else(|| Error::Inconsistent("tensor extent overflow".into()))?;
        let bytes = r.take(
            len.checked_mul(8)
                .ok_or_else(|| Error::Inconsistent("tensor size overflow".into()))?,
            "tensor data",
        )?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        tensors.push(Tensor::new(shape, data)?);
    }
    if r.pos != buf.len() {
        return Err(Error::Inconsistent(format!(
            "{} trailing bytes after the last tensor",
            buf.len() - r.pos
        )));
    }
    M::from_parts(&spec, tensors)
}

pub fn save_model<M: Persist>(path: impl AsRef<Path>, model: &M) -> Result<()> {
    fs::write(path, to_bytes(model)?)?;
    Ok(())
}

pub fn load_model<M: Persist>(path: impl AsRef<Path>) -> Result<M> {
    from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, BlackBox, Generator, Head, MlpSpec};

    fn classifier() -> Classifier {
        Classifier::init(MlpSpec::new(3, &[5], Activation::Tanh, 2, Head::Softmax), 9).unwrap()
    }

    fn bits(m: &impl Persist) -> Vec<Vec<u64>> {
        m.tensors()
            .iter()
            .map(|t| t.data().iter().map(|v| v.to_bits()).collect())
            .collect()
    }

    #[test]
    fn classifier_roundtrip_is_bit_exact() {
        let c = classifier();
        let back: Classifier = from_bytes(&to_bytes(&c).unwrap()).unwrap();
        assert_eq!(bits(&back), bits(&c));
        let x = Tensor::vector(vec![0.3, -0.1, 2.0]).unwrap();
        assert_eq!(back.predict_proba(&x).unwrap(), c.predict_proba(&x).unwrap());
    }

    #[test]
    fn vae_roundtrip_via_file() {
        let spec = VaeSpec {
            data_dim: 4,
            latent_dim: 2,
            hidden: vec![6, 5],
            activation: Activation::Relu,
            output_head: Head::Sigmoid,
            kl_weight: 0.5,
        };
        let vae = VaeModel::init(spec, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vae.ckpt");
        save_model(&path, &vae).unwrap();
        let back: VaeModel = load_model(&path).unwrap();
        assert_eq!(back, vae);
        let z = Tensor::vector(vec![0.2, -0.4]).unwrap();
        assert_eq!(back.decode(&z).unwrap(), vae.decode(&z).unwrap());
    }

    #[test]
    fn corrupted_header_is_a_version_mismatch() {
        let mut bytes = to_bytes(&classifier()).unwrap();
        bytes[8] = 7;
        assert!(matches!(
            from_bytes::<Classifier>(&bytes),
            Err(Error::VersionMismatch { .. })
        ));
        let mut bytes = to_bytes(&classifier()).unwrap();
        bytes[0] = b'Z';
        assert!(matches!(
            from_bytes::<Classifier>(&bytes),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn truncation_and_trailing_bytes() {
        let bytes = to_bytes(&classifier()).unwrap();
        for cut in [20, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                from_bytes::<Classifier>(&bytes[..cut]),
                Err(Error::Truncated(_))
            ));
        }
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(
            from_bytes::<Classifier>(&long),
            Err(Error::Inconsistent(_))
        ));
    }

    #[test]
    fn wrong_kind_and_spec_mismatch() {
        let bytes = to_bytes(&classifier()).unwrap();
        assert!(matches!(from_bytes::<VaeModel>(&bytes), Err(Error::Inconsistent(_))));

        // Rewrite the spec so the first layer claims 4 inputs instead of 3.
        let c = classifier();
        let mut other = c.spec().clone();
        other.widths[0] = 4;
        let forged = Classifier::init(other, 1).unwrap();
        let mut bytes = to_bytes(&forged).unwrap();
        let real = to_bytes(&c).unwrap();
        // keep forged spec, splice in the real tensors
        let forged_spec_end = 8 + 4 + 4 + Classifier::KIND.len() + 4 + forged.spec_json().unwrap().len();
        let real_spec_end = 8 + 4 + 4 + Classifier::KIND.len() + 4 + c.spec_json().unwrap().len();
        bytes.truncate(forged_spec_end);
        bytes.extend_from_slice(&real[real_spec_end..]);
        assert!(matches!(from_bytes::<Classifier>(&bytes), Err(Error::Inconsistent(_))));
    }
}

//! Binary checkpoint serialization for parameters and optimizer state.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "LSEGCKPT" | version u32 | param count u32
//! per parameter: name (u32 len + utf8) | ndim u32 | dims u64 each
//!                | trainable u8 | values f64 each
//! optimizer flag u8 (0 absent, 1 present)
//! if present: step u64 | lr f64 | beta1 f64 | beta2 f64 | eps f64
//!             | per parameter: first moments f64 each, second moments f64 each
//! metadata (u32 len + utf8)
//! ```
//!
//! Values are stored as raw `f64` bits, so a save/load/save cycle is
//! byte-identical.

use std::fs;
use std::path::Path;

use super::adam::AdamState;
use super::params::{ParamEntry, ParamSet};
use super::TensorError;

const MAGIC: &[u8; 8] = b"LSEGCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Everything a checkpoint file holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub params: ParamSet,
    pub optimizer: Option<AdamState>,
    /// Free-form provenance string (phase name, seed, epoch counters).
    pub metadata: String,
}

fn err(offset: usize, message: impl Into<String>) -> TensorError {
    TensorError::Checkpoint {
        offset,
        message: message.into(),
    }
}

/// Serializes a checkpoint to `path`.
pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), TensorError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let entries = ckpt.params.entries();
    buf.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for e in entries {
        buf.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
        buf.extend_from_slice(e.name.as_bytes());
        buf.extend_from_slice(&(e.shape.len() as u32).to_le_bytes());
        for &d in &e.shape {
            buf.extend_from_slice(&(d as u64).to_le_bytes());
        }
        buf.push(e.trainable as u8);
        for v in &e.value {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    match &ckpt.optimizer {
        None => buf.push(0),
        Some(opt) => {
            buf.push(1);
            buf.extend_from_slice(&opt.step.to_le_bytes());
            for v in [opt.lr, opt.beta1, opt.beta2, opt.eps] {
                buf.extend_from_slice(&v.to_le_bytes());
            }
            let (m, v) = opt.moments();
            for (mi, vi) in m.iter().zip(v) {
                for x in mi {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
                for x in vi {
                    buf.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }
    buf.extend_from_slice(&(ckpt.metadata.len() as u32).to_le_bytes());
    buf.extend_from_slice(ckpt.metadata.as_bytes());
    fs::write(path, &buf).map_err(|e| err(0, format!("writing {}: {e}", path.display())))
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TensorError> {
        if self.pos + n > self.buf.len() {
            return Err(err(
                self.pos,
                format!(
                    "truncated: wanted {n} bytes, {} remain",
                    self.buf.len() - self.pos
                ),
            ));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, TensorError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32, TensorError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TensorError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, TensorError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64_vec(&mut self, n: usize) -> Result<Vec<f64>, TensorError> {
        let bytes = self.take(n * 8)?;
        Ok(bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn string(&mut self) -> Result<String, TensorError> {
        let at = self.pos;
        let len = self.u32()? as usize;
        let bytes = self.take(len)?;
        String::from_utf8(bytes.to_vec()).map_err(|_| err(at, "invalid utf-8 string"))
    }
}

/// Deserializes a checkpoint from `path`.
pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TensorError> {
    let data =
        fs::read(path).map_err(|e| err(0, format!("reading {}: {e}", path.display())))?;
    let mut cur = Cursor { buf: &data, pos: 0 };

    if cur.take(8)? != MAGIC {
        return Err(err(0, "bad magic; not a checkpoint file"));
    }
    let version = cur.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(err(
            8,
            format!("unsupported version {version}, expected {CHECKPOINT_VERSION}"),
        ));
    }

    let count = cur.u32()? as usize;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = cur.string()?;
        let ndim = cur.u32()? as usize;
        if ndim > 8 {
            return Err(err(cur.pos, format!("implausible rank {ndim} for {name}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(cur.u64()? as usize);
        }
        let n: usize = shape.iter().product();
        let trainable = match cur.u8()? {
            0 => false,
            1 => true,
            other => return Err(err(cur.pos - 1, format!("bad trainable flag {other}"))),
        };
        let value = cur.f64_vec(n)?;
        params.push_entry(ParamEntry {
            name,
            shape,
            value,
            trainable,
        });
    }

    let optimizer = match cur.u8()? {
        0 => None,
        1 => {
            let step = cur.u64()?;
            let lr = cur.f64()?;
            let beta1 = cur.f64()?;
            let beta2 = cur.f64()?;
            let eps = cur.f64()?;
            let mut m = Vec::with_capacity(count);
            let mut v = Vec::with_capacity(count);
            for id in params.ids() {
                let n = params.value(id).len();
                m.push(cur.f64_vec(n)?);
                v.push(cur.f64_vec(n)?);
            }
            Some(AdamState::from_parts(
                &params, step, lr, beta1, beta2, eps, m, v,
            )?)
        }
        other => return Err(err(cur.pos - 1, format!("bad optimizer flag {other}"))),
    };

    let metadata = cur.string()?;
    if cur.pos != data.len() {
        return Err(err(
            cur.pos,
            format!("{} trailing bytes after checkpoint", data.len() - cur.pos),
        ));
    }
    Ok(Checkpoint {
        params,
        optimizer,
        metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::params::{register_bn, register_conv, GradBuffer};
    use crate::autodiff::{adam_step, AdamState};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_params() -> ParamSet {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut p = ParamSet::new();
        register_conv(&mut p, &mut rng, "enc.conv0", 1, 4, 3);
        register_bn(&mut p, "enc.bn0", 4);
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let params = sample_params();
        let mut state = AdamState::new(&params, 1e-3);
        // Mutate state so the moments are non-trivial.
        let mut params = params;
        let id = params.find("enc.conv0.weight").unwrap();
        let mut grads = GradBuffer::zeros_like(&params);
        let ones = vec![1.0; params.value(id).len()];
        grads.add_scaled(id, &ones, 0.5);
        adam_step(&mut params, &grads, &mut state).unwrap();

        let ckpt = Checkpoint {
            params,
            optimizer: Some(state),
            metadata: "phase=test seed=11".into(),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();

        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &loaded).unwrap();
        let a = std::fs::read(&path).unwrap();
        let b = std::fs::read(&path2).unwrap();
        assert_eq!(a, b, "save -> load -> save must be byte-identical");

        assert_eq!(loaded.metadata, "phase=test seed=11");
        assert_eq!(loaded.optimizer.as_ref().unwrap().step, 1);
        for (e1, e2) in ckpt.params.entries().iter().zip(loaded.params.entries()) {
            assert_eq!(e1.name, e2.name);
            assert_eq!(e1.shape, e2.shape);
            assert_eq!(e1.trainable, e2.trainable);
            assert_eq!(e1.value, e2.value);
        }
    }

    #[test]
    fn without_optimizer_state() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("weights.ckpt");
        let ckpt = Checkpoint {
            params: sample_params(),
            optimizer: None,
            metadata: String::new(),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert!(loaded.optimizer.is_none());
    }

    #[test]
    fn rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT________").unwrap();
        let e = load_checkpoint(&path).unwrap_err();
        assert!(e.to_string().contains("bad magic"), "{e}");
    }

    #[test]
    fn rejects_truncation_with_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint {
            params: sample_params(),
            optimizer: None,
            metadata: "m".into(),
        };
        save_checkpoint(&path, &ckpt).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() / 2);
        std::fs::write(&path, &bytes).unwrap();
        let e = load_checkpoint(&path).unwrap_err();
        assert!(e.to_string().contains("truncated"), "{e}");
    }
}

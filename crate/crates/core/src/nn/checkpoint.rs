//! Binary checkpoint format.
//!
//! Layout (all little-endian):
//!
//! ```text
//! "WADP"  u32 version (= 1)
//! u32 x 8 W, F, K, C1, C2, H, N, W'
//! 16 x { u64 count, count x f64 }   conv1_w, conv1_b, bn1.{gamma,beta,run_mean,run_var},
//!                                   conv2_w, conv2_b, bn2.{...}, fc1_w, fc1_b, fc2_w, fc2_b
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::nn::layers::BnParams;
use crate::nn::model::{Architecture, ModelParams};
use crate::nn::tensor::Tensor;
use crate::scalar::Scalar;

pub const MAGIC: &[u8; 4] = b"WADP";
pub const VERSION: u32 = 1;

fn slots<T: Scalar>(m: &ModelParams<T>) -> [(&'static str, &[T]); 16] {
    [
        ("conv1_w", m.conv1_w.data()),
        ("conv1_b", &m.conv1_b),
        ("bn1.gamma", &m.bn1.gamma),
        ("bn1.beta", &m.bn1.beta),
        ("bn1.run_mean", &m.bn1.run_mean),
        ("bn1.run_var", &m.bn1.run_var),
        ("conv2_w", m.conv2_w.data()),
        ("conv2_b", &m.conv2_b),
        ("bn2.gamma", &m.bn2.gamma),
        ("bn2.beta", &m.bn2.beta),
        ("bn2.run_mean", &m.bn2.run_mean),
        ("bn2.run_var", &m.bn2.run_var),
        ("fc1_w", m.fc1_w.data()),
        ("fc1_b", &m.fc1_b),
        ("fc2_w", m.fc2_w.data()),
        ("fc2_b", &m.fc2_b),
    ]
}

/// Byte range of every tensor slot's values within an encoded checkpoint.
pub fn slot_ranges(arch: &Architecture) -> Vec<(&'static str, std::ops::Range<usize>)> {
    let probe = ModelParams::<f64>::init(*arch, 0).expect("valid architecture");
    let mut off = 4 + 4 + 32;
    slots(&probe)
        .iter()
        .map(|(name, data)| {
            let start = off + 8;
            off = start + 8 * data.len();
            (*name, start..off)
        })
        .collect()
}

pub fn to_bytes<T: Scalar>(m: &ModelParams<T>) -> Vec<u8> {
    let a = &m.arch;
    let mut out = Vec::with_capacity(40 + 8 * (m.n_params() + 16 + 4 * (a.c1 + a.c2)));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for d in [a.window, a.features, a.kernel, a.c1, a.c2, a.hidden, a.classes, a.conv_len()] {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for (_, data) in slots(m) {
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
        for v in data {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Truncated(format!(
                "{what}: need {n} bytes at offset {}, {} left",
                self.pos,
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn from_bytes<T: Scalar>(buf: &[u8]) -> Result<ModelParams<T>> {
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(Error::BadMagic);
    }
    let mut r = Reader { buf, pos: 4 };
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::VersionMismatch(version));
    }
    let mut dims = [0usize; 8];
    for d in dims.iter_mut() {
        *d = r.u32("architecture header")? as usize;
    }
    let arch = Architecture {
        window: dims[0],
        features: dims[1],
        kernel: dims[2],
        c1: dims[3],
        c2: dims[4],
        hidden: dims[5],
        classes: dims[6],
    };
    arch.validate()
        .map_err(|e| Error::HeaderInconsistent(e.to_string()))?;
    if dims[7] != arch.conv_len() {
        return Err(Error::HeaderInconsistent(format!(
            "W' = {} but same-padding convolution gives {}",
            dims[7],
            arch.conv_len()
        )));
    }

    let mut model = ModelParams::<T>::init(arch, 0)?;
    let expected: Vec<(&'static str, usize)> =
        slots(&model).iter().map(|(n, d)| (*n, d.len())).collect();
    let mut values: Vec<Vec<T>> = Vec::with_capacity(16);
    for (name, len) in expected {
        let count = r.u64(name)?;
        if count != len as u64 {
            return Err(Error::HeaderInconsistent(format!(
                "{name} has {count} elements, architecture implies {len}"
            )));
        }
        let raw = r.take(8 * len, name)?;
        values.push(
            raw.chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().unwrap())))
                .collect(),
        );
    }
    if r.pos != buf.len() {
        return Err(Error::HeaderInconsistent(format!(
            "{} trailing bytes after the last tensor",
            buf.len() - r.pos
        )));
    }

    let mut it = values.into_iter();
    let mut next = || it.next().unwrap();
    let shape_w1 = [arch.c1, arch.features, arch.kernel];
    let shape_w2 = [arch.c2, arch.c1, arch.kernel];
    model.conv1_w = Tensor::from_vec(&shape_w1, next())?;
    model.conv1_b = next();
    model.bn1 = BnParams {
        gamma: next(),
        beta: next(),
        run_mean: next(),
        run_var: next(),
    };
    model.conv2_w = Tensor::from_vec(&shape_w2, next())?;
    model.conv2_b = next();
    model.bn2 = BnParams {
        gamma: next(),
        beta: next(),
        run_mean: next(),
        run_var: next(),
    };
    model.fc1_w = Tensor::from_vec(&[arch.hidden, arch.flat_len()], next())?;
    model.fc1_b = next();
    model.fc2_w = Tensor::from_vec(&[arch.classes, arch.hidden], next())?;
    model.fc2_b = next();
    if model
        .bn1
        .run_var
        .iter()
        .chain(&model.bn2.run_var)
        .any(|v| !(*v > T::zero()))
    {
        return Err(Error::HeaderInconsistent("non-positive running variance".into()));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(m: &ModelParams<T>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(m)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<ModelParams<T>> {
    let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    from_bytes(&buf)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> ModelParams<f64> {
        let mut m = ModelParams::init(Architecture::new(6, 3, 4), 21).unwrap();
        m.bn2.run_mean[0] = 0.25;
        m.bn2.run_var[1] = 3.5;
        m
    }

    #[test]
    fn round_trip_is_bitwise() {
        let m = model();
        let bytes = to_bytes(&m);
        let back: ModelParams<f64> = from_bytes(&bytes).unwrap();
        assert_eq!(back, m);
        assert_eq!(to_bytes(&back), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = to_bytes(&model());
        assert_eq!(&bytes[..4], b"WADP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let dims: Vec<u32> = bytes[8..40]
            .chunks(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        assert_eq!(dims, vec![6, 3, 3, 32, 64, 128, 4, 6]);
        let first = u64::from_le_bytes(bytes[40..48].try_into().unwrap());
        assert_eq!(first, 32 * 3 * 3);
        let ranges = slot_ranges(&model().arch);
        assert_eq!(ranges.len(), 16);
        assert_eq!(ranges.last().unwrap().1.end, bytes.len());
    }

    #[test]
    fn bad_magic_version_truncation() {
        let bytes = to_bytes(&model());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(from_bytes::<f64>(&bad), Err(Error::BadMagic)));

        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(from_bytes::<f64>(&v2), Err(Error::VersionMismatch(2))));

        let short = &bytes[..bytes.len() - 100];
        assert!(matches!(from_bytes::<f64>(short), Err(Error::Truncated(_))));

        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(from_bytes::<f64>(&longer), Err(Error::HeaderInconsistent(_))));
    }

    #[test]
    fn count_inconsistent_with_header() {
        let mut bytes = to_bytes(&model());
        // H field claims 127 hidden units; fc1_w count no longer matches
        bytes[8 + 5 * 4..8 + 6 * 4].copy_from_slice(&127u32.to_le_bytes());
        assert!(matches!(from_bytes::<f64>(&bytes), Err(Error::HeaderInconsistent(_))));
    }

    #[test]
    fn f32_model_round_trips() {
        let m = ModelParams::<f32>::init(Architecture::new(4, 2, 3), 1).unwrap();
        let back: ModelParams<f32> = from_bytes(&to_bytes(&m)).unwrap();
        assert_eq!(back, m);
    }
}

//! `AMI1` raw-float container: magic `AMI1`, little-endian `u32` height,
//! width and channels, then `f32` pixels row-major, channel-interleaved.

use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{atomic_write, read_bytes};
use crate::ndnn::Tensor;
use crate::scalar::Scalar;

pub const AMI1_MAGIC: &[u8; 4] = b"AMI1";

pub fn encode_ami1<T: Scalar>(pixels: &Tensor<T>) -> Result<Vec<u8>> {
    let s = pixels.shape();
    if s.len() != 3 {
        return Err(Error::invalid(format!("AMI1 stores [H, W, C] images, got {s:?}")));
    }
    pixels.check_finite("AMI1 pixels")?;
    let mut out = Vec::with_capacity(16 + 4 * pixels.len());
    out.extend_from_slice(AMI1_MAGIC);
    for &d in s {
        let d = u32::try_from(d).map_err(|_| Error::invalid("AMI1 dimension exceeds u32"))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for v in pixels.data() {
        out.extend_from_slice(&v.to_f32().unwrap_or(f32::NAN).to_le_bytes());
    }
    Ok(out)
}

pub fn decode_ami1<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let err = |reason: String| Error::Format {
        what: "AMI1 container",
        reason,
    };
    if bytes.len() < 16 || &bytes[..4] != AMI1_MAGIC {
        return Err(err("missing AMI1 magic".into()));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap()) as usize;
    let shape = [dim(0), dim(1), dim(2)];
    let n: usize = shape.iter().product();
    if bytes.len() != 16 + 4 * n {
        return Err(err(format!(
            "expected {} payload bytes for shape {shape:?}, found {}",
            4 * n,
            bytes.len() - 16
        )));
    }
    let data = bytes[16..]
        .chunks_exact(4)
        .map(|c| T::lit(f32::from_le_bytes(c.try_into().unwrap()) as f64))
        .collect();
    Tensor::from_vec(&shape, data)
}

pub fn save_ami1<T: Scalar>(path: &Path, pixels: &Tensor<T>) -> Result<()> {
    atomic_write(path, &encode_ami1(pixels)?)
}

pub fn load_ami1<T: Scalar>(path: &Path) -> Result<Tensor<T>> {
    decode_ami1(&read_bytes(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn byte_layout() {
        let t = Tensor::<f32>::from_vec(&[1, 2, 1], vec![1.0, -0.5]).unwrap();
        let b = encode_ami1(&t).unwrap();
        assert_eq!(&b[..4], b"AMI1");
        assert_eq!(&b[4..16], &[1, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&b[16..], &[0, 0, 128, 63, 0, 0, 0, 191]);
    }

    #[test]
    fn rejects_truncation() {
        let t = Tensor::<f32>::zeros(&[2, 2, 3]);
        let b = encode_ami1(&t).unwrap();
        assert!(decode_ami1::<f32>(&b[..b.len() - 2]).is_err());
        assert!(decode_ami1::<f32>(b"AMI0").is_err());
    }

    proptest! {
        #[test]
        fn roundtrip(h in 1usize..5, w in 1usize..5, c in 1usize..4, seed in any::<u32>()) {
            let data: Vec<f32> = (0..h * w * c).map(|i| ((i as u32 ^ seed) as f32).sin() * 9.0).collect();
            let t = Tensor::from_vec(&[h, w, c], data).unwrap();
            prop_assert_eq!(decode_ami1::<f32>(&encode_ami1(&t).unwrap()).unwrap(), t);
        }
    }
}

//! `LBN1` network files.
//!
//! Layout (little-endian): magic `LBN1`; `u32` layer count `L`; `L + 1`
//! `u32` widths; `u32` flags (bit 0: hidden layers carry layer norm);
//! then for each layer the `f32` weight `[in, out]` row-major, the bias
//! `[out]`, and for normalised hidden layers the gain and shift `[out]`.

use std::path::Path;

use lbsac_autodiff::Tensor;

use super::mlp::{LayerNormParams, Layer, Mlp};
use crate::binio::{read_file, ByteReader, ByteWriter};
use crate::error::Result;

pub const NETWORK_MAGIC: &[u8; 4] = b"LBN1";
const FLAG_LAYER_NORM: u32 = 1;

pub fn encode_mlp(mlp: &Mlp) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.bytes(NETWORK_MAGIC);
    let widths = mlp.widths();
    w.u32(mlp.layers().len() as u32);
    for &width in &widths {
        w.u32(width as u32);
    }
    w.u32(if mlp.has_layer_norm() { FLAG_LAYER_NORM } else { 0 });
    for p in mlp.params() {
        w.f32s(p.data());
    }
    w.buf
}

pub fn decode_mlp(bytes: &[u8], path: &Path) -> Result<Mlp> {
    let mut r = ByteReader::new(bytes, path);
    r.magic(NETWORK_MAGIC)?;
    let count_at = r.offset();
    let count = r.u32("layer count")? as usize;
    if count == 0 || count > 64 {
        return Err(r.corrupt(count_at, format!("implausible layer count {count}")));
    }
    let mut widths = Vec::with_capacity(count + 1);
    for _ in 0..=count {
        let at = r.offset();
        let width = r.u32("width")? as usize;
        if width == 0 {
            return Err(r.corrupt(at, "zero width"));
        }
        widths.push(width);
    }
    let flags_at = r.offset();
    let flags = r.u32("flags")?;
    if flags & !FLAG_LAYER_NORM != 0 {
        return Err(r.corrupt(flags_at, format!("unknown flags {flags:#x}")));
    }
    let norm = flags & FLAG_LAYER_NORM != 0;
    let mut layers = Vec::with_capacity(count);
    for l in 0..count {
        let (fan_in, fan_out) = (widths[l], widths[l + 1]);
        let weight = Tensor::matrix(fan_in, fan_out, r.f32s(fan_in * fan_out, "weight")?)?;
        let bias = Tensor::matrix(1, fan_out, r.f32s(fan_out, "bias")?)?;
        let norm = if norm && l + 1 < count {
            Some(LayerNormParams {
                gain: Tensor::matrix(1, fan_out, r.f32s(fan_out, "gain")?)?,
                shift: Tensor::matrix(1, fan_out, r.f32s(fan_out, "shift")?)?,
            })
        } else {
            None
        };
        layers.push(Layer { weight, bias, norm });
    }
    r.finish()?;
    Mlp::from_layers(layers)
}

pub fn save_mlp(mlp: &Mlp, path: &Path) -> Result<()> {
    ByteWriter {
        buf: encode_mlp(mlp),
    }
    .save(path)
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    decode_mlp(&read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::rng::Rng;

    #[test]
    fn round_trip_is_exact() {
        for norm in [false, true] {
            let mlp = Mlp::new(&[5, 7, 7, 3], norm, &mut Rng::new(3));
            let bytes = encode_mlp(&mlp);
            assert_eq!(&bytes[..4], b"LBN1");
            let back = decode_mlp(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back, mlp);
        }
    }

    #[test]
    fn header_layout() {
        let mlp = Mlp::new(&[2, 3, 1], true, &mut Rng::new(0));
        let b = encode_mlp(&mlp);
        let word = |i: usize| u32::from_le_bytes(b[i..i + 4].try_into().unwrap());
        assert_eq!(word(4), 2);
        assert_eq!([word(8), word(12), word(16)], [2, 3, 1]);
        assert_eq!(word(20), 1);
        // weights + biases + one gain/shift pair
        assert_eq!(b.len(), 24 + 4 * (6 + 3 + 3 + 3 + 3 + 1));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let mlp = Mlp::new(&[2, 3, 1], false, &mut Rng::new(0));
        let bytes = encode_mlp(&mlp);
        let short = &bytes[..bytes.len() - 2];
        assert!(matches!(
            decode_mlp(short, Path::new("x")),
            Err(Error::Corrupt { .. })
        ));
        let mut long = bytes.clone();
        long.push(0);
        match decode_mlp(&long, Path::new("x")) {
            Err(Error::Corrupt { offset, .. }) => assert_eq!(offset, bytes.len() as u64),
            other => panic!("{other:?}"),
        }
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(decode_mlp(&bad, Path::new("x")).is_err());
    }
}

//! Little-endian model binary.
//!
//! ```text
//! "SPRW"  version:u16  window:u8  layers:u8
//! per layer:
//!   kind:u8 in:u16 out:u16 bias_mode:u8 threshold_q:i32
//!   m_w:u32 n_shift:u8 m_b:u32 m_shift:u8
//!   weights:i8[out*in] biases:i32[out]
//! crc32:u32 over every preceding byte
//! ```

use crate::error::{Error, Result};
use crate::network::{ensure_valid, HardwareLimits, LayerKind, LayerSpec, NetworkSpec};
use crate::neuron::BiasMode;

pub const MAGIC: &[u8; 4] = b"SPRW";
pub const VERSION: u16 = 1;

pub fn pack(spec: &NetworkSpec) -> Result<Vec<u8>> {
    let window = u8::try_from(spec.window)
        .map_err(|_| Error::Blob(format!("window {} does not fit in u8", spec.window)))?;
    let count =
        u8::try_from(spec.layers.len()).map_err(|_| Error::Blob("more than 255 layers".into()))?;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(window);
    out.push(count);
    for (i, l) in spec.layers.iter().enumerate() {
        let width = |w: usize| {
            u16::try_from(w)
                .map_err(|_| Error::Blob(format!("layer {i}: width {w} does not fit in u16")))
        };
        if l.weights.len() != l.in_width * l.out_width || l.biases.len() != l.out_width {
            return Err(Error::Blob(format!(
                "layer {i}: weight or bias count does not match its widths"
            )));
        }
        out.push(l.kind.code());
        out.extend_from_slice(&width(l.in_width)?.to_le_bytes());
        out.extend_from_slice(&width(l.out_width)?.to_le_bytes());
        out.push(l.bias_mode.code());
        out.extend_from_slice(&l.threshold_q.to_le_bytes());
        out.extend_from_slice(&l.m_w.to_le_bytes());
        out.push(l.n_shift);
        out.extend_from_slice(&l.m_b.to_le_bytes());
        out.push(l.m_shift);
        out.extend(l.weights.iter().map(|&w| w as u8));
        for b in &l.biases {
            out.extend_from_slice(&b.to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        let slice = self.bytes.get(self.pos..end).ok_or_else(|| {
            Error::Blob(format!(
                "truncated at offset {} reading {what} ({n} bytes)",
                self.pos
            ))
        })?;
        self.pos = end;
        Ok(slice)
    }

    fn array<const N: usize>(&mut self, what: &str) -> Result<[u8; N]> {
        Ok(self.take(N, what)?.try_into().expect("length checked"))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

/// Decodes a blob and checks the result against `limits`.
pub fn unpack_with(bytes: &[u8], limits: &HardwareLimits) -> Result<NetworkSpec> {
    let spec = unpack_unchecked(bytes)?;
    ensure_valid(&spec, limits)?;
    Ok(spec)
}

/// Decodes a blob and checks it against the default hardware limits.
pub fn unpack(bytes: &[u8]) -> Result<NetworkSpec> {
    unpack_with(bytes, &HardwareLimits::default())
}

/// Decodes a blob, verifying framing and checksum but not hardware limits.
pub fn unpack_unchecked(bytes: &[u8]) -> Result<NetworkSpec> {
    if bytes.len() < MAGIC.len() + 2 + 2 + 4 {
        return Err(Error::Blob(format!(
            "{} bytes is shorter than the smallest blob",
            bytes.len()
        )));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut c = Cursor {
        bytes: body,
        pos: 0,
    };
    if c.take(4, "magic")? != MAGIC {
        return Err(Error::Blob("bad magic at offset 0".into()));
    }
    let version = u16::from_le_bytes(c.array("version")?);
    if version != VERSION {
        return Err(Error::Blob(format!(
            "unsupported version {version} at offset 4"
        )));
    }
    let window = u32::from(c.u8("window")?);
    let count = c.u8("layer count")?;
    let mut layers = Vec::with_capacity(count as usize);
    for i in 0..count {
        let at = c.pos;
        let kind_code = c.u8("layer kind")?;
        let kind = LayerKind::from_code(kind_code).ok_or_else(|| {
            Error::Blob(format!(
                "layer {i}: unknown kind {kind_code} at offset {at}"
            ))
        })?;
        let in_width = u16::from_le_bytes(c.array("input width")?) as usize;
        let out_width = u16::from_le_bytes(c.array("output width")?) as usize;
        let at = c.pos;
        let mode_code = c.u8("bias mode")?;
        let bias_mode = BiasMode::from_code(mode_code).ok_or_else(|| {
            Error::Blob(format!(
                "layer {i}: unknown bias mode {mode_code} at offset {at}"
            ))
        })?;
        let threshold_q = i32::from_le_bytes(c.array("threshold")?);
        let m_w = u32::from_le_bytes(c.array("weight multiplier")?);
        let n_shift = c.u8("weight shift")?;
        let m_b = u32::from_le_bytes(c.array("bias multiplier")?);
        let m_shift = c.u8("bias shift")?;
        let weights = c
            .take(in_width * out_width, "weights")?
            .iter()
            .map(|&b| b as i8)
            .collect();
        let biases = c
            .take(4 * out_width, "biases")?
            .chunks_exact(4)
            .map(|b| i32::from_le_bytes(b.try_into().expect("4 bytes")))
            .collect();
        layers.push(LayerSpec {
            kind,
            in_width,
            out_width,
            bias_mode,
            threshold_q,
            m_w,
            n_shift,
            m_b,
            m_shift,
            weights,
            biases,
        });
    }
    if c.pos != body.len() {
        return Err(Error::Blob(format!(
            "{} trailing bytes at offset {}",
            body.len() - c.pos,
            c.pos
        )));
    }
    Ok(NetworkSpec::new(window, layers))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> NetworkSpec {
        let ann = LayerSpec::ann(3, 2).with_weights(vec![1, -2, 3, -128, 127, 0], vec![-7, 70000]);
        let ssf = LayerSpec::spiking(LayerKind::Ssf, 2, 2, 5)
            .with_weights(vec![4, -4, 2, 1], vec![1, -1])
            .with_bias_mode(BiasMode::Once);
        NetworkSpec::new(7, vec![ann, ssf])
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let spec = sample();
        let blob = pack(&spec).unwrap();
        let back = unpack(&blob).unwrap();
        assert_eq!(back, spec);
        assert_eq!(pack(&back).unwrap(), blob);
    }

    #[test]
    fn header_layout() {
        let blob = pack(&sample()).unwrap();
        assert_eq!(&blob[..4], b"SPRW");
        assert_eq!(u16::from_le_bytes([blob[4], blob[5]]), 1);
        assert_eq!((blob[6], blob[7]), (7, 2));
        // layer 0: 20 header bytes + 6 weights + 8 bias bytes; layer 1: 20 + 4 + 8; plus 8 + 4
        assert_eq!(blob.len(), 8 + 34 + 32 + 4);
    }

    #[test]
    fn corruption_is_detected() {
        let mut blob = pack(&sample()).unwrap();
        blob[10] ^= 1;
        assert!(matches!(unpack(&blob), Err(Error::Checksum { .. })));
    }

    #[test]
    fn truncation_reports_offset() {
        let blob = pack(&sample()).unwrap();
        let mut cut = blob[..20].to_vec();
        let crc = crc32fast::hash(&cut);
        cut.extend_from_slice(&crc.to_le_bytes());
        let err = unpack(&cut).unwrap_err().to_string();
        assert!(err.contains("offset"), "{err}");
    }

    #[test]
    fn invalid_network_is_rejected() {
        let mut spec = sample();
        spec.layers[1].threshold_q = 0;
        let blob = pack(&spec).unwrap();
        assert!(matches!(unpack(&blob), Err(Error::InvalidNetwork(_))));
        assert!(unpack_unchecked(&blob).is_ok());
    }
}

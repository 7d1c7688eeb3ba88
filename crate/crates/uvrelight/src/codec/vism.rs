//! "VISM" visibility blocks: one text line
//! `VISM 1 H W C ENV_H ENV_W VALID` (eight values), then `H·W·C` float32
//! little-endian, texel-major with the direction index innermost. Texels
//! without data are stored as NaN. `ENV_H × ENV_W` is the lat-long grid the
//! C directions come from, so C must equal their product.

use std::path::Path;

use super::{read_file, write_file};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct VisBlock {
    pub height: usize,
    pub width: usize,
    pub env_height: usize,
    pub env_width: usize,
    pub values: Vec<f32>,
    pub valid: Vec<bool>,
}

impl VisBlock {
    pub fn channels(&self) -> usize {
        self.env_height * self.env_width
    }
}

pub fn encode(b: &VisBlock) -> Vec<u8> {
    let c = b.channels();
    assert_eq!(b.values.len(), b.height * b.width * c);
    assert_eq!(b.valid.len(), b.height * b.width);
    let count = b.valid.iter().filter(|v| **v).count();
    let mut out =
        format!("VISM 1 {} {} {c} {} {} {count}\n", b.height, b.width, b.env_height, b.env_width).into_bytes();
    out.reserve(4 * b.values.len());
    for (k, on) in b.valid.iter().enumerate() {
        for v in &b.values[k * c..(k + 1) * c] {
            let v = if *on { *v } else { f32::NAN };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(buf: &[u8]) -> std::result::Result<VisBlock, String> {
    let nl = buf.iter().take(256).position(|b| *b == b'\n').ok_or("missing VISM header line")?;
    let head = std::str::from_utf8(&buf[..nl]).map_err(|_| "header is not text")?;
    let tok: Vec<&str> = head.split_whitespace().collect();
    if tok.len() != 8 || tok[0] != "VISM" {
        return Err("header must be `VISM 1 H W C ENV_H ENV_W VALID`".into());
    }
    let n: Vec<usize> = tok[1..].iter().map(|t| t.parse::<usize>()).collect::<std::result::Result<_, _>>().map_err(|_| "bad header number")?;
    let [version, h, w, c, eh, ew, count] = [n[0], n[1], n[2], n[3], n[4], n[5], n[6]];
    if version != 1 {
        return Err(format!("unsupported VISM version {version}"));
    }
    if h == 0 || w == 0 || c == 0 || eh.checked_mul(ew) != Some(c) {
        return Err(format!("bad dimensions {h}x{w}x{c} for a {eh}x{ew} grid"));
    }
    let len = h.checked_mul(w).and_then(|v| v.checked_mul(c)).and_then(|v| v.checked_mul(4)).ok_or("size overflows")?;
    let body = &buf[nl + 1..];
    if body.len() != len {
        return Err(format!("{} data bytes where {len} were expected", body.len()));
    }
    let raw: Vec<f32> = body.chunks_exact(4).map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]])).collect();
    let mut valid = vec![false; h * w];
    let mut values = raw;
    for (k, on) in valid.iter_mut().enumerate() {
        let t = &mut values[k * c..(k + 1) * c];
        let nan = t.iter().filter(|v| v.is_nan()).count();
        if nan == 0 {
            *on = true;
        } else if nan == c {
            t.iter_mut().for_each(|v| *v = 0.0);
        } else {
            return Err(format!("texel {k} is partly NaN"));
        }
    }
    let found = valid.iter().filter(|v| **v).count();
    if found != count {
        return Err(format!("header says {count} valid texels, data has {found}"));
    }
    Ok(VisBlock { height: h, width: w, env_height: eh, env_width: ew, values, valid })
}

pub fn write(path: &Path, b: &VisBlock) -> Result<()> {
    write_file(path, &encode(b))
}

pub fn read(path: &Path) -> Result<VisBlock> {
    decode(&read_file(path)?).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block() -> VisBlock {
        VisBlock {
            height: 1,
            width: 2,
            env_height: 1,
            env_width: 2,
            values: vec![0.25, 1.0, 0.0, 0.0],
            valid: vec![true, false],
        }
    }

    #[test]
    fn header_has_eight_values() {
        let b = encode(&block());
        let nl = b.iter().position(|c| *c == b'\n').unwrap();
        assert_eq!(&b[..nl], b"VISM 1 1 2 2 1 2 1");
        assert_eq!(b.len(), nl + 1 + 16);
        assert!(f32::from_le_bytes(b[nl + 9..nl + 13].try_into().unwrap()).is_nan());
        assert_eq!(decode(&b).unwrap(), block());
    }

    #[test]
    fn damaged_blocks_are_rejected() {
        let b = encode(&block());
        assert!(decode(&b[..b.len() - 1]).is_err());
        assert!(decode(&String::from_utf8_lossy(&b).replacen("VISM 1", "VISM 2", 1).into_bytes()).is_err());
        let mut wrong_count = b.clone();
        wrong_count[17] = b'2';
        assert!(decode(&wrong_count).is_err());
        let mut half = b.clone();
        let n = half.len();
        half[n - 4..].copy_from_slice(&1.0f32.to_le_bytes());
        assert!(decode(&half).is_err());
        assert!(decode(b"VISM 1 1 1 3 1 2 0\n\0\0\0\0\0\0\0\0\0\0\0\0").is_err());
    }

    proptest! {
        #[test]
        fn round_trip(h in 1usize..4, w in 1usize..4, eh in 1usize..3, ew in 1usize..4, bits in any::<u64>()) {
            let c = eh * ew;
            let valid: Vec<bool> = (0..h * w).map(|k| (bits >> (k % 64)) & 1 == 1).collect();
            let values = (0..h * w * c).map(|k| if valid[k / c] { (k as f32 * 0.37).fract() } else { 0.0 }).collect();
            let b = VisBlock { height: h, width: w, env_height: eh, env_width: ew, values, valid };
            prop_assert_eq!(decode(&encode(&b)).unwrap(), b);
        }

        #[test]
        fn arbitrary_bytes_never_panic(tail in proptest::collection::vec(any::<u8>(), 0..48)) {
            let mut b = b"VISM 1 1 1 1 1 1 1\n".to_vec();
            b.extend_from_slice(&tail);
            let _ = decode(&b);
        }
    }
}

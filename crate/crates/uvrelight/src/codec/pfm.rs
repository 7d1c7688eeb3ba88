//! Portable float maps. `PF` is RGB, `Pf` grayscale; a negative scale means
//! little-endian data. Rows are stored bottom to top.

use std::path::Path;

use uvrelight_core::image::Image;

use super::{read_file, write_file};
use crate::{Error, Result};

pub fn encode(img: &Image) -> Vec<u8> {
    assert!(img.channels == 1 || img.channels == 3, "PFM holds 1 or 3 channels");
    let tag = if img.channels == 3 { "PF" } else { "Pf" };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", img.width, img.height).into_bytes();
    let row = img.width * img.channels;
    out.reserve(4 * img.data.len());
    for y in (0..img.height).rev() {
        for v in &img.data[y * row..(y + 1) * row] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Splits off the first whitespace-delimited token.
fn token<'a>(buf: &'a [u8], pos: &mut usize) -> Option<&'a str> {
    while *pos < buf.len() && buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < buf.len() && !buf[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    std::str::from_utf8(&buf[start..*pos]).ok().filter(|s| !s.is_empty())
}

pub fn decode(buf: &[u8]) -> std::result::Result<Image, String> {
    let mut pos = 0;
    let channels = match token(buf, &mut pos) {
        Some("PF") => 3,
        Some("Pf") => 1,
        _ => return Err("not a PFM file (expected PF or Pf)".into()),
    };
    let mut num = |what: &str| token(buf, &mut pos).ok_or_else(|| format!("missing {what}"));
    let width: usize = num("width")?.parse().map_err(|_| "bad width")?;
    let height: usize = num("height")?.parse().map_err(|_| "bad height")?;
    let scale: f64 = num("scale")?.parse().map_err(|_| "bad scale")?;
    if width == 0 || height == 0 || scale == 0.0 || !scale.is_finite() {
        return Err("zero size or scale".into());
    }
    // exactly one whitespace byte ends the header
    if pos >= buf.len() || !buf[pos].is_ascii_whitespace() {
        return Err("truncated header".into());
    }
    pos += 1;
    let n = width.checked_mul(height).and_then(|v| v.checked_mul(channels)).ok_or("size overflows")?;
    let body = &buf[pos..];
    if body.len() != 4 * n {
        return Err(format!("{} data bytes for {width}x{height}x{channels}", body.len()));
    }
    let little = scale < 0.0;
    let row = width * channels;
    let mut data = vec![0.0f32; n];
    for (k, c) in body.chunks_exact(4).enumerate() {
        let b = [c[0], c[1], c[2], c[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let (y, x) = (k / row, k % row);
        data[(height - 1 - y) * row + x] = v;
    }
    Ok(Image { width, height, channels, data })
}

pub fn write(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::Input(format!("{}: PFM holds 1 or 3 channels, not {}", path.display(), img.channels)));
    }
    write_file(path, &encode(img))
}

pub fn read(path: &Path) -> Result<Image> {
    decode(&read_file(path)?).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rows_are_stored_bottom_up() {
        let img = Image::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = encode(&img);
        assert!(b.starts_with(b"Pf\n2 2\n-1.0\n"));
        let body = &b[b.len() - 16..];
        assert_eq!(&body[..4], &3.0f32.to_le_bytes());
        assert_eq!(&body[12..], &2.0f32.to_le_bytes());
    }

    #[test]
    fn big_endian_files_are_read() {
        let mut b = b"PF 1 1 1.0\n".to_vec();
        for v in [0.5f32, 1.5, -2.0] {
            b.extend_from_slice(&v.to_be_bytes());
        }
        assert_eq!(decode(&b).unwrap().data, vec![0.5, 1.5, -2.0]);
    }

    #[test]
    fn damaged_files_are_rejected() {
        assert!(decode(b"P6\n1 1\n255\n").is_err());
        assert!(decode(b"PF\n2 1\n-1.0\n\0\0\0\0").is_err());
        assert!(decode(b"Pf\n0 1\n-1.0\n").is_err());
        assert!(decode(b"Pf\n1 1\n").is_err());
        assert!(decode(b"Pf\n1 1\n-1.0").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(w in 1usize..6, h in 1usize..6, rgb in any::<bool>(), seed in any::<u32>()) {
            let c = if rgb { 3 } else { 1 };
            let data: Vec<f32> = (0..w * h * c).map(|k| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(k as u32 * 40503) & 0xbf7f_ffff)).collect();
            let img = Image::new(w, h, c, data).unwrap();
            let back = decode(&encode(&img)).unwrap();
            prop_assert_eq!(back.width, w);
            prop_assert_eq!(back.channels, c);
            prop_assert!(back.data.iter().zip(&img.data).all(|(a, b)| a.to_bits() == b.to_bits()));
        }

        #[test]
        fn arbitrary_bytes_never_panic(b in proptest::collection::vec(any::<u8>(), 0..40)) {
            let mut buf = b"PF\n".to_vec();
            buf.extend_from_slice(&b);
            let _ = decode(&buf);
        }
    }
}

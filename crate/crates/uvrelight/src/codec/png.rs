//! 8-bit previews (gamma 2.2) and 1-bit masks.

use std::path::Path;

use uvrelight_core::image::Image;

use super::{read_file, write_file};
use crate::{Error, Result};

pub const GAMMA: f64 = 2.2;

fn encode_raw(width: usize, height: usize, color: png::ColorType, depth: png::BitDepth, data: &[u8]) -> Vec<u8> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
        enc.set_color(color);
        enc.set_depth(depth);
        let mut w = enc.write_header().expect("in-memory PNG header");
        w.write_image_data(data).expect("in-memory PNG data");
    }
    out
}

/// Linear value to an 8-bit code with the fixed display gamma.
pub fn to_srgb8(v: f32) -> u8 {
    let c = (v as f64).clamp(0.0, 1.0).powf(1.0 / GAMMA);
    (c * 255.0).round() as u8
}

pub fn from_srgb8(c: u8) -> f32 {
    (c as f64 / 255.0).powf(GAMMA) as f32
}

/// Preview of a 1- or 3-channel linear image.
pub fn encode_preview(img: &Image) -> Vec<u8> {
    let bytes: Vec<u8> = img.data.iter().map(|v| to_srgb8(*v)).collect();
    let color = if img.channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale };
    assert!(img.channels == 1 || img.channels == 3);
    encode_raw(img.width, img.height, color, png::BitDepth::Eight, &bytes)
}

/// Row-major boolean mask as a 1-bit grayscale PNG.
pub fn encode_mask(width: usize, height: usize, mask: &[bool]) -> Vec<u8> {
    assert_eq!(mask.len(), width * height);
    let stride = width.div_ceil(8);
    let mut packed = vec![0u8; stride * height];
    for (k, m) in mask.iter().enumerate() {
        if *m {
            let (y, x) = (k / width, k % width);
            packed[y * stride + x / 8] |= 0x80 >> (x % 8);
        }
    }
    encode_raw(width, height, png::ColorType::Grayscale, png::BitDepth::One, &packed)
}

/// Decodes any PNG to 8-bit samples: `(width, height, channels, bytes)`.
fn decode_raw(buf: &[u8]) -> std::result::Result<(usize, usize, usize, Vec<u8>), String> {
    let mut dec = png::Decoder::new(buf);
    dec.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut r = dec.read_info().map_err(|e| e.to_string())?;
    let mut data = vec![0; r.output_buffer_size()];
    let info = r.next_frame(&mut data).map_err(|e| e.to_string())?;
    data.truncate(info.buffer_size());
    let ch = info.color_type.samples();
    Ok((info.width as usize, info.height as usize, ch, data))
}

/// Any PNG read as a mask: a pixel is set when its first channel is at
/// least half scale.
pub fn decode_mask(buf: &[u8]) -> std::result::Result<(usize, usize, Vec<bool>), String> {
    let (w, h, ch, data) = decode_raw(buf)?;
    Ok((w, h, data.chunks(ch).map(|p| p[0] >= 128).collect()))
}

/// A preview back to linear values (lossy).
pub fn decode_preview(buf: &[u8]) -> std::result::Result<Image, String> {
    let (w, h, ch, data) = decode_raw(buf)?;
    let keep = if ch >= 3 { 3 } else { 1 };
    let vals = data.chunks(ch).flat_map(|p| p[..keep].iter().map(|c| from_srgb8(*c)).collect::<Vec<_>>()).collect();
    Image::new(w, h, keep, vals).map_err(|e| e.to_string())
}

pub fn write_preview(path: &Path, img: &Image) -> Result<()> {
    if img.channels != 1 && img.channels != 3 {
        return Err(Error::Input(format!("{}: previews hold 1 or 3 channels", path.display())));
    }
    write_file(path, &encode_preview(img))
}

pub fn write_mask(path: &Path, width: usize, height: usize, mask: &[bool]) -> Result<()> {
    write_file(path, &encode_mask(width, height, mask))
}

pub fn read_mask(path: &Path) -> Result<(usize, usize, Vec<bool>)> {
    decode_mask(&read_file(path)?).map_err(|m| Error::format(path, m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn gamma_codes() {
        assert_eq!(to_srgb8(0.0), 0);
        assert_eq!(to_srgb8(1.0), 255);
        assert_eq!(to_srgb8(7.0), 255);
        assert_eq!(to_srgb8(-1.0), 0);
        assert_eq!(to_srgb8(0.5), (0.5f64.powf(1.0 / 2.2) * 255.0).round() as u8);
        for c in 0..=255u8 {
            assert_eq!(to_srgb8(from_srgb8(c)), c);
        }
    }

    #[test]
    fn masks_are_one_bit() {
        let m = vec![true, false, true, true, false, false, false, false, true, true, false];
        let b = encode_mask(11, 1, &m);
        let mut d = png::Decoder::new(&b[..]);
        d.set_transformations(png::Transformations::IDENTITY);
        assert_eq!(d.read_info().unwrap().info().bit_depth, png::BitDepth::One);
        assert_eq!(decode_mask(&b).unwrap(), (11, 1, m));
    }

    #[test]
    fn preview_round_trip_is_within_a_code() {
        let img = Image::from_fn(5, 3, 3, |x, y, c| (x + 2 * y + c) as f32 / 12.0);
        let back = decode_preview(&encode_preview(&img)).unwrap();
        for (a, b) in img.data.iter().zip(&back.data) {
            assert_eq!(to_srgb8(*a), to_srgb8(*b));
        }
        assert!(decode_mask(b"not a png").is_err());
    }

    proptest! {
        #[test]
        fn mask_round_trip(w in 1usize..20, h in 1usize..6, bits in any::<u64>()) {
            let m: Vec<bool> = (0..w * h).map(|k| (bits >> (k % 64)) & 1 == 1).collect();
            prop_assert_eq!(decode_mask(&encode_mask(w, h, &m)).unwrap(), (w, h, m));
        }
    }
}

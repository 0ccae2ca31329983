//! 8-bit grayscale and RGB PNG in and out, as `[1, C, H, W]` tensors with
//! values in `[0, 1]`.
//!
//! Palette and 16-bit inputs are expanded and reduced to 8 bits; alpha is
//! dropped.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Transformations};
use sgac_core::numcore::Tensor;

use crate::error::{Error, Result};

pub fn decode_png(reader: impl std::io::BufRead + std::io::Seek, path: &Path) -> Result<Tensor> {
    let bad = |e: png::DecodingError| Error::format(path, format!("cannot decode PNG: {e}"));
    let mut dec = png::Decoder::new(reader);
    dec.set_transformations(Transformations::normalize_to_color8());
    let mut reader = dec.read_info().map_err(bad)?;
    let size = reader.output_buffer_size().ok_or_else(|| Error::format(path, "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(bad)?;
    let (src, keep) = match info.color_type {
        ColorType::Grayscale => (1, 1),
        ColorType::GrayscaleAlpha => (2, 1),
        ColorType::Rgb => (3, 3),
        ColorType::Rgba => (4, 3),
        ColorType::Indexed => return Err(Error::format(path, "palette was not expanded")),
    };
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::format(path, format!("unexpected bit depth {:?}", info.bit_depth)));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let line = info.line_size;
    Ok(Tensor::from_fn([1, keep, h, w], |i| {
        let (c, r, x) = (i / (h * w), (i / w) % h, i % w);
        buf[r * line + x * src + c] as f64 / 255.0
    }))
}

pub fn read_png(path: &Path) -> Result<Tensor> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    decode_png(BufReader::new(f), path)
}

/// 8-bit samples of a `[1, C, H, W]` image, interleaved by pixel.
pub fn to_samples(x: &Tensor) -> Result<(u32, u32, ColorType, Vec<u8>)> {
    let shape = x.shape();
    let color = match shape {
        [1, 1, _, _] => ColorType::Grayscale,
        [1, 3, _, _] => ColorType::Rgb,
        _ => return Err(Error::Config(format!("cannot store a tensor of shape {shape:?} as PNG"))),
    };
    let (c, h, w) = (shape[1], shape[2], shape[3]);
    let mut out = vec![0u8; c * h * w];
    for ch in 0..c {
        for p in 0..h * w {
            out[p * c + ch] = (x.data()[ch * h * w + p].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok((w as u32, h as u32, color, out))
}

pub fn encode_png(writer: impl std::io::Write, x: &Tensor, path: &Path) -> Result<()> {
    let (w, h, color, samples) = to_samples(x)?;
    let bad = |e: png::EncodingError| Error::format(path, format!("cannot encode PNG: {e}"));
    let mut enc = png::Encoder::new(writer, w, h);
    enc.set_color(color);
    enc.set_depth(BitDepth::Eight);
    let mut wr = enc.write_header().map_err(bad)?;
    wr.write_image_data(&samples).map_err(bad)?;
    wr.finish().map_err(bad)
}

pub fn write_png(path: &Path, x: &Tensor) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    encode_png(BufWriter::new(f), x, path)
}

/// Rounds to the 8-bit grid a PNG can store.
pub fn quantize8(x: &Tensor) -> Tensor {
    x.map(|v| (v.clamp(0.0, 1.0) * 255.0).round() / 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn round_trip(x: &Tensor) -> Tensor {
        let mut bytes = Vec::new();
        encode_png(&mut bytes, x, Path::new("mem")).unwrap();
        decode_png(Cursor::new(bytes), Path::new("mem")).unwrap()
    }

    #[test]
    fn gray_and_rgb_round_trip_on_the_8bit_grid() {
        for c in [1, 3] {
            let x = quantize8(&Tensor::from_fn([1, c, 5, 7], |i| ((i * 37) % 256) as f64 / 255.0));
            assert_eq!(round_trip(&x), x);
        }
    }

    #[test]
    fn samples_are_clamped_and_rounded() {
        let x = Tensor::new([1, 1, 1, 3], vec![-0.2, 0.5, 1.7]).unwrap();
        let (_, _, _, s) = to_samples(&x).unwrap();
        assert_eq!(s, vec![0, 128, 255]);
        assert!(to_samples(&Tensor::zeros([1, 2, 2, 2])).is_err());
    }

    #[test]
    fn alpha_is_dropped() {
        let mut bytes = Vec::new();
        let mut enc = png::Encoder::new(&mut bytes, 2, 1);
        enc.set_color(ColorType::GrayscaleAlpha);
        enc.set_depth(BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[10, 255, 200, 0]).unwrap();
        w.finish().unwrap();
        let x = decode_png(Cursor::new(bytes), Path::new("mem")).unwrap();
        assert_eq!(x.shape(), &[1, 1, 1, 2]);
        assert_eq!(x.data(), &[10.0 / 255.0, 200.0 / 255.0]);
    }

    #[test]
    fn garbage_is_a_format_error() {
        let e = decode_png(Cursor::new(b"not a png".to_vec()), Path::new("mem")).unwrap_err();
        assert!(matches!(e, Error::Format { .. }));
    }
}

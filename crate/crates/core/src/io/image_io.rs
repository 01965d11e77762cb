//! 8-bit PNG and binary PPM (P6) reading and writing.

use crate::error::{DataError, Error, Result};
use crate::image::Image;
use std::io::Cursor;
use std::path::Path;

const PNG_SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";

/// Byte to unit-range value.
pub fn byte_to_unit(v: u8) -> f32 {
    v as f32 / 255.0
}

/// Unit-range value to byte: `round(v · 255)` clamped to `[0, 255]`.
pub fn unit_to_byte(v: f32) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

fn decode_err(entry: &str, reason: impl ToString) -> DataError {
    DataError::Decode {
        entry: entry.to_string(),
        reason: reason.to_string(),
    }
}

/// Decodes PNG or P6 PPM bytes, told apart by their signature. `entry`
/// names the source in errors.
pub fn decode_image(bytes: &[u8], entry: &str) -> Result<Image, DataError> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes, entry)
    } else if bytes.starts_with(b"P6") {
        decode_ppm(bytes, entry)
    } else {
        Err(decode_err(entry, "neither PNG nor binary PPM"))
    }
}

fn decode_png(bytes: &[u8], entry: &str) -> Result<Image, DataError> {
    use png::{BitDepth, ColorType, Transformations};
    let mut decoder = png::Decoder::new(Cursor::new(bytes));
    let info = decoder.read_header_info().map_err(|e| decode_err(entry, e))?;
    let (color, depth) = (info.color_type, info.bit_depth);
    if color == ColorType::Indexed {
        decoder.set_transformations(Transformations::EXPAND);
    } else if depth != BitDepth::Eight {
        return Err(DataError::UnsupportedBitDepth {
            entry: entry.to_string(),
            depth: depth as u32,
        });
    }
    let mut reader = decoder.read_info().map_err(|e| decode_err(entry, e))?;
    let size = reader.output_buffer_size().ok_or_else(|| decode_err(entry, "image too large"))?;
    let mut buf = vec![0; size];
    let frame = reader.next_frame(&mut buf).map_err(|e| decode_err(entry, e))?;
    let (width, height) = (frame.width as usize, frame.height as usize);
    let samples = frame.color_type.samples();
    let line = frame.line_size;
    let mut data = Vec::with_capacity(width * height * 3);
    for r in 0..height {
        let row = &buf[r * line..r * line + width * samples];
        for px in row.chunks_exact(samples) {
            let rgb = match frame.color_type {
                ColorType::Grayscale | ColorType::GrayscaleAlpha => [px[0]; 3],
                _ => [px[0], px[1], px[2]],
            };
            data.extend(rgb.map(byte_to_unit));
        }
    }
    Image::new(height, width, data).map_err(|e| decode_err(entry, e))
}

fn decode_ppm(bytes: &[u8], entry: &str) -> Result<Image, DataError> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(decode_err(entry, "truncated PPM header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| decode_err(entry, "malformed PPM header"))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::UnsupportedBitDepth {
            entry: entry.to_string(),
            depth: usize::BITS - maxval.leading_zeros(),
        });
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height * 3;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| decode_err(entry, "truncated PPM raster"))?;
    Image::new(height, width, raster.iter().map(|&b| byte_to_unit(b)).collect()).map_err(|e| decode_err(entry, e))
}

fn quantize(img: &Image) -> Vec<u8> {
    img.data().iter().map(|&v| unit_to_byte(v)).collect()
}

pub fn encode_png(img: &Image) -> Vec<u8> {
    let mut out = Vec::new();
    let mut encoder = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
    encoder.set_color(png::ColorType::Rgb);
    encoder.set_depth(png::BitDepth::Eight);
    let mut writer = encoder.write_header().expect("writing to memory");
    writer.write_image_data(&quantize(img)).expect("writing to memory");
    writer.finish().expect("writing to memory");
    out
}

pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(quantize(img));
    out
}

/// Reads a PNG or PPM file.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let entry = path.display().to_string();
    let bytes = std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Data(DataError::MissingFile { entry: entry.clone() }),
        _ => Error::io(path, e),
    })?;
    Ok(decode_image(&bytes, &entry)?)
}

/// Writes PPM for a `.ppm` extension and PNG otherwise.
pub fn write_image(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    let path = path.as_ref();
    let bytes = match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("ppm") => encode_ppm(img),
        _ => encode_png(img),
    };
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Image {
        Image::from_fn(3, 4, |r, c| [r as f32 / 2.0, c as f32 / 3.0, 0.5])
    }

    #[test]
    fn byte_conversions() {
        assert_eq!(byte_to_unit(255), 1.0);
        assert_eq!(byte_to_unit(0), 0.0);
        assert!((byte_to_unit(128) - 0.50196).abs() < 1e-5);
        assert_eq!(unit_to_byte(1.7), 255);
        assert_eq!(unit_to_byte(-0.2), 0);
        assert_eq!(unit_to_byte(0.5), 128);
    }

    #[test]
    fn png_and_ppm_round_trip_within_half_step() {
        let img = sample();
        for bytes in [encode_png(&img), encode_ppm(&img)] {
            let back = decode_image(&bytes, "x").unwrap();
            assert_eq!(back.dims(), img.dims());
            for (a, b) in back.data().iter().zip(img.data()) {
                assert!((a - b).abs() <= 1.0 / 510.0 + 1e-7);
            }
        }
    }

    #[test]
    fn ppm_header_comments_are_skipped() {
        let mut bytes = b"P6 # a comment\n2 1\n# another\n255\n".to_vec();
        bytes.extend([255, 0, 0, 0, 0, 255]);
        let img = decode_image(&bytes, "c.ppm").unwrap();
        assert_eq!(img.pixel(0, 0), [1.0, 0.0, 0.0]);
        assert_eq!(img.pixel(0, 1), [0.0, 0.0, 1.0]);
    }

    #[test]
    fn sixteen_bit_inputs_are_rejected() {
        let mut bytes = b"P6\n1 1\n65535\n".to_vec();
        bytes.extend([0; 6]);
        assert!(matches!(
            decode_image(&bytes, "deep.ppm"),
            Err(DataError::UnsupportedBitDepth { depth: 16, .. })
        ));

        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, 1, 1);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Sixteen);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0; 6]).unwrap();
        w.finish().unwrap();
        let err = decode_image(&out, "deep.png").unwrap_err();
        assert!(matches!(err, DataError::UnsupportedBitDepth { depth: 16, .. }));
        assert!(err.to_string().contains("deep.png"));
    }

    #[test]
    fn truncated_and_unknown_inputs_fail() {
        assert!(matches!(decode_image(b"P6\n2 2\n255\n\0\0", "t"), Err(DataError::Decode { .. })));
        assert!(matches!(decode_image(b"GIF89a", "g"), Err(DataError::Decode { .. })));
    }

    #[test]
    fn grayscale_png_is_replicated() {
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, 2, 1);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let mut w = enc.write_header().unwrap();
        w.write_image_data(&[0, 255]).unwrap();
        w.finish().unwrap();
        let img = decode_image(&out, "g.png").unwrap();
        assert_eq!(img.pixel(0, 1), [1.0; 3]);
    }
}

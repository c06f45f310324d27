//! 8-bit RGB PNG.

use std::io::Cursor;

use super::LdrImage;
use crate::error::{Error, Result};

fn fail(reason: impl Into<String>) -> Error {
    Error::Format {
        reason: reason.into(),
        offset: 0,
    }
}

pub fn read_ldr(bytes: &[u8]) -> Result<LdrImage> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder.read_info().map_err(|e| fail(format!("png: {e}")))?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(fail(format!("unsupported bit depth {depth:?} (8-bit RGB only)")));
    }
    if color != png::ColorType::Rgb {
        return Err(fail(format!("unsupported color type {color:?} (8-bit RGB only)")));
    }
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| fail("png: image too large"))?;
    let mut buf = vec![0; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| fail(format!("png: {e}")))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut data = Vec::with_capacity(w * h * 3);
    for row in buf.chunks(stride).take(h) {
        data.extend_from_slice(&row[..w * 3]);
    }
    LdrImage::new(w, h, data)
}

pub fn write_ldr(img: &LdrImage) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width() as u32, img.height() as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| fail(format!("png: {e}")))?;
        writer
            .write_image_data(img.data())
            .map_err(|e| fail(format!("png: {e}")))?;
        writer.finish().map_err(|e| fail(format!("png: {e}")))?;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let img = LdrImage::new(3, 2, (0..18).map(|i| (i * 14) as u8).collect()).unwrap();
        let back = read_ldr(&write_ldr(&img).unwrap()).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn rejects_gray() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[7]).unwrap();
        }
        assert!(read_ldr(&out).is_err());
        assert!(read_ldr(b"not a png").is_err());
    }
}

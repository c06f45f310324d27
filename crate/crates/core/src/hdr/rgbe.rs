//! Radiance `.hdr` (RGBE) codec.

use super::HdrImage;
use crate::error::{Error, Result};

fn fail(reason: impl Into<String>, offset: usize) -> Error {
    Error::Format {
        reason: reason.into(),
        offset,
    }
}

/// `(m_r, m_g, m_b) · 2^(e − 136)`, or black when `e = 0`.
pub fn decode_pixel(rgbe: [u8; 4]) -> [f32; 3] {
    if rgbe[3] == 0 {
        return [0.0; 3];
    }
    let f = 2f64.powi(rgbe[3] as i32 - 136);
    [
        (rgbe[0] as f64 * f) as f32,
        (rgbe[1] as f64 * f) as f32,
        (rgbe[2] as f64 * f) as f32,
    ]
}

/// Shared-exponent encoding with the largest mantissa in `[128, 256)`.
/// Mantissas are rounded to nearest (half away from zero), so the largest
/// component comes back within half a step. Values too large for the
/// exponent byte saturate; values too small become black.
pub fn encode_pixel(rgb: [f32; 3]) -> [u8; 4] {
    let maxc = rgb[0].max(rgb[1]).max(rgb[2]) as f64;
    if !(maxc > 0.0) {
        return [0; 4];
    }
    // maxc = f · 2^exp with f in [0.5, 1)
    let mut exp = maxc.log2().floor() as i32 + 1;
    let f = maxc / 2f64.powi(exp);
    if f >= 1.0 {
        exp += 1;
    } else if f < 0.5 {
        exp -= 1;
    }
    // rounding the largest mantissa up to 256 moves to the next exponent
    if (maxc * 256.0 / 2f64.powi(exp) + 0.5).floor() >= 256.0 {
        exp += 1;
    }
    if exp + 128 > 255 {
        return [255, 255, 255, 255];
    }
    if exp + 128 < 1 {
        return [0; 4];
    }
    let k = 256.0 / 2f64.powi(exp);
    let m = |c: f32| ((c.max(0.0) as f64 * k + 0.5).floor() as i64).clamp(0, 255) as u8;
    [m(rgb[0]), m(rgb[1]), m(rgb[2]), (exp + 128) as u8]
}

fn read_line(bytes: &[u8], pos: &mut usize) -> Result<String> {
    let start = *pos;
    let end = bytes[start..]
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| fail("unterminated header line", start))?;
    *pos = start + end + 1;
    Ok(String::from_utf8_lossy(&bytes[start..start + end]).into_owned())
}

fn parse_header(bytes: &[u8]) -> Result<(usize, usize, usize)> {
    let mut pos = 0;
    let magic = read_line(bytes, &mut pos)?;
    if !(magic.starts_with("#?RADIANCE") || magic.starts_with("#?RGBE")) {
        return Err(fail("bad magic (expected #?RADIANCE or #?RGBE)", 0));
    }
    let mut format_ok = false;
    loop {
        let at = pos;
        let line = read_line(bytes, &mut pos)?;
        if line.is_empty() {
            break;
        }
        if let Some(f) = line.strip_prefix("FORMAT=") {
            if f.trim() != "32-bit_rle_rgbe" {
                return Err(fail(format!("unsupported format `{}`", f.trim()), at));
            }
            format_ok = true;
        }
    }
    if !format_ok {
        return Err(fail("missing FORMAT=32-bit_rle_rgbe", pos));
    }
    let at = pos;
    let res = read_line(bytes, &mut pos)?;
    let parts: Vec<&str> = res.split_whitespace().collect();
    let dims = match parts.as_slice() {
        ["-Y", h, "+X", w] => h.parse::<usize>().ok().zip(w.parse::<usize>().ok()),
        _ => None,
    };
    let (h, w) = dims.ok_or_else(|| fail(format!("unsupported resolution line `{res}`"), at))?;
    Ok((w, h, pos))
}

fn read_scanline(bytes: &[u8], pos: &mut usize, width: usize, out: &mut Vec<[u8; 4]>) -> Result<()> {
    let start = out.len();
    let rle = (8..=0x7fff).contains(&width)
        && bytes.len() >= *pos + 4
        && bytes[*pos] == 2
        && bytes[*pos + 1] == 2
        && bytes[*pos + 2] & 0x80 == 0;
    if rle {
        let encoded = ((bytes[*pos + 2] as usize) << 8) | bytes[*pos + 3] as usize;
        if encoded != width {
            return Err(fail(
                format!("scanline width {encoded} does not match image width {width}"),
                *pos,
            ));
        }
        *pos += 4;
        let mut planes = vec![[0u8; 4]; width];
        for ch in 0..4 {
            let mut x = 0;
            while x < width {
                let at = *pos;
                let &count = bytes.get(at).ok_or_else(|| fail("truncated scanline", at))?;
                *pos += 1;
                if count > 128 {
                    let n = count as usize - 128;
                    let &v = bytes.get(*pos).ok_or_else(|| fail("truncated run", *pos))?;
                    *pos += 1;
                    if x + n > width {
                        return Err(fail("scanline overrun", at));
                    }
                    for p in &mut planes[x..x + n] {
                        p[ch] = v;
                    }
                    x += n;
                } else {
                    let n = count as usize;
                    if n == 0 || x + n > width {
                        return Err(fail("scanline overrun", at));
                    }
                    let lit = bytes
                        .get(*pos..*pos + n)
                        .ok_or_else(|| fail("truncated literal", *pos))?;
                    for (p, &v) in planes[x..x + n].iter_mut().zip(lit) {
                        p[ch] = v;
                    }
                    *pos += n;
                    x += n;
                }
            }
        }
        out.extend(planes);
        return Ok(());
    }
    // flat pixels, with old-style (1,1,1,n) repeat codes
    let mut shift = 0;
    while out.len() - start < width {
        let at = *pos;
        let px: [u8; 4] = bytes
            .get(at..at + 4)
            .ok_or_else(|| fail("truncated pixel data", at))?
            .try_into()
            .unwrap();
        *pos += 4;
        if px[0] == 1 && px[1] == 1 && px[2] == 1 {
            let prev = *out
                .last()
                .ok_or_else(|| fail("repeat code without a previous pixel", at))?;
            let n = (px[3] as usize) << shift;
            if out.len() - start + n > width {
                return Err(fail("scanline overrun", at));
            }
            out.extend(std::iter::repeat_n(prev, n));
            shift += 8;
        } else {
            out.push(px);
            shift = 0;
        }
    }
    Ok(())
}

pub fn read_rgbe(bytes: &[u8]) -> Result<HdrImage> {
    let (w, h, mut pos) = parse_header(bytes)?;
    let mut px = Vec::with_capacity(w * h);
    for _ in 0..h {
        read_scanline(bytes, &mut pos, w, &mut px)?;
    }
    if pos != bytes.len() {
        return Err(fail(
            format!("{} bytes after the last scanline", bytes.len() - pos),
            pos,
        ));
    }
    let data = px.into_iter().flat_map(decode_pixel).collect();
    HdrImage::new(w, h, data)
}

fn header(img: &HdrImage) -> Vec<u8> {
    format!(
        "#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {} +X {}\n",
        img.height(),
        img.width()
    )
    .into_bytes()
}

fn encode_rows(img: &HdrImage) -> Vec<[u8; 4]> {
    img.data()
        .chunks_exact(3)
        .map(|c| encode_pixel([c[0], c[1], c[2]]))
        .collect()
}

/// Uncompressed scanlines.
pub fn write_rgbe_flat(img: &HdrImage) -> Vec<u8> {
    let mut out = header(img);
    for p in encode_rows(img) {
        out.extend_from_slice(&p);
    }
    out
}

fn write_plane(out: &mut Vec<u8>, v: &[u8]) {
    const MIN_RUN: usize = 4;
    let mut i = 0;
    while i < v.len() {
        // find the next run of at least MIN_RUN equal bytes
        let mut run_start = i;
        let mut run_len = 0;
        while run_start < v.len() {
            run_len = 1;
            while run_start + run_len < v.len()
                && run_len < 127
                && v[run_start + run_len] == v[run_start]
            {
                run_len += 1;
            }
            if run_len >= MIN_RUN {
                break;
            }
            run_start += run_len;
        }
        if run_len < MIN_RUN {
            run_start = v.len();
        }
        while i < run_start {
            let n = (run_start - i).min(128);
            out.push(n as u8);
            out.extend_from_slice(&v[i..i + n]);
            i += n;
        }
        if run_start < v.len() {
            out.push(128 + run_len as u8);
            out.push(v[run_start]);
            i = run_start + run_len;
        }
    }
}

/// Run-length encoded when the width allows it, flat otherwise.
pub fn write_rgbe(img: &HdrImage) -> Vec<u8> {
    let w = img.width();
    if !(8..=0x7fff).contains(&w) {
        return write_rgbe_flat(img);
    }
    let mut out = header(img);
    let px = encode_rows(img);
    let mut plane = vec![0u8; w];
    for row in px.chunks_exact(w) {
        out.extend_from_slice(&[2, 2, (w >> 8) as u8, (w & 0xff) as u8]);
        for ch in 0..4 {
            for (p, q) in plane.iter_mut().zip(row) {
                *p = q[ch];
            }
            write_plane(&mut out, &plane);
        }
    }
    out
}

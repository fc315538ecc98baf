//! 8-bit PNG (gray or RGB) and plain-text `P2` graymap reading and writing.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;
use crate::mask::SegMask;

const PNG_SIGNATURE: &[u8; 8] = b"\x89PNG\r\n\x1a\n";

pub fn load_image(path: &Path) -> Result<Image> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Image> {
    if bytes.starts_with(PNG_SIGNATURE) {
        decode_png(bytes, path)
    } else if bytes.starts_with(b"P2") {
        decode_p2(bytes, path)
    } else {
        Err(Error::format(path, "neither PNG nor P2 graymap"))
    }
}

/// Loads a mask; any nonzero sample marks the pixel as foreground.
pub fn load_mask(path: &Path) -> Result<SegMask> {
    Ok(SegMask::from_image(&load_image(path)?))
}

fn decode_png(bytes: &[u8], path: &Path) -> Result<Image> {
    let decoder = png::Decoder::new(Cursor::new(bytes));
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format(path, format!("png: {e}")))?;
    let info = reader.info();
    let (w, h) = (info.width as usize, info.height as usize);
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::format(
            path,
            format!(
                "unsupported bit depth {:?}, only 8-bit PNG is read",
                info.bit_depth
            ),
        ));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => {
            return Err(Error::format(
                path,
                format!("unsupported color type {other:?}, expected gray or RGB"),
            ))
        }
    };
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format(path, "png image too large"))?;
    let mut buf = vec![0u8; size];
    let frame = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format(path, format!("png: {e}")))?;
    let data = buf[..frame.buffer_size()]
        .iter()
        .map(|&v| v as f32 / 255.0)
        .collect();
    Image::new(w, h, channels, data)
}

fn decode_p2(bytes: &[u8], path: &Path) -> Result<Image> {
    let text = std::str::from_utf8(bytes).map_err(|e| {
        Error::format(
            path,
            format!("graymap is not text: invalid byte at {}", e.valid_up_to()),
        )
    })?;
    // Tokens with their byte offsets; `#` starts a comment to end of line.
    let mut tokens = Vec::new();
    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let body = line.split('#').next().unwrap_or("");
        let mut col = 0;
        for tok in body.split_whitespace() {
            let at = body[col..].find(tok).unwrap() + col;
            tokens.push((offset + at, tok));
            col = at + tok.len();
        }
        offset += line.len();
    }
    let mut it = tokens.into_iter();
    let magic = it.next().map(|t| t.1);
    if magic != Some("P2") {
        return Err(Error::format(path, "missing P2 magic"));
    }
    let mut number = |what: &str| -> Result<usize> {
        let (at, tok) = it.next().ok_or_else(|| Error::Truncated {
            offset: bytes.len() as u64,
            msg: format!("graymap ends before {what}"),
        })?;
        tok.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad {what} {tok:?} at byte {at}")))
    };
    let w = number("width")?;
    let h = number("height")?;
    let maxval = number("maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::format(
            path,
            format!("unsupported bit depth: maxval {maxval}, only 8-bit graymaps are read"),
        ));
    }
    let mut data = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let v = number("sample")?;
        if v > maxval {
            return Err(Error::format(
                path,
                format!("sample {v} exceeds maxval {maxval}"),
            ));
        }
        data.push(v as f32 / maxval as f32);
    }
    Image::new(w, h, 1, data)
}

fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_png(image: &Image) -> Result<Vec<u8>> {
    let color = match image.channels() {
        1 => png::ColorType::Grayscale,
        3 => png::ColorType::Rgb,
        c => {
            return Err(Error::InvalidArgument(format!(
                "PNG output needs 1 or 3 channels, got {c}"
            )))
        }
    };
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, image.width() as u32, image.height() as u32);
        enc.set_color(color);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
        let data: Vec<u8> = image.data().iter().map(|&v| quantize(v)).collect();
        writer
            .write_image_data(&data)
            .map_err(|e| Error::InvalidArgument(format!("png encode: {e}")))?;
    }
    Ok(out)
}

/// Plain `P2` graymap, one image row per line. Color images are averaged
/// over channels.
pub fn encode_p2(image: &Image) -> String {
    let (w, h, c) = (image.width(), image.height(), image.channels());
    let mut s = format!("P2\n{w} {h}\n255\n");
    for y in 0..h {
        let row: Vec<String> = (0..w)
            .map(|x| {
                let mean = (0..c).map(|ch| image.get(x, y, ch)).sum::<f32>() / c as f32;
                quantize(mean).to_string()
            })
            .collect();
        s.push_str(&row.join(" "));
        s.push('\n');
    }
    s
}

pub fn save_png(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_png(image)?).map_err(|e| Error::io(path, e))
}

pub fn save_p2(path: &Path, image: &Image) -> Result<()> {
    std::fs::write(path, encode_p2(image)).map_err(|e| Error::io(path, e))
}

/// Writes PNG for `.png` paths and a `P2` graymap otherwise.
pub fn save_image(path: &Path, image: &Image) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some(ext) if ext.eq_ignore_ascii_case("png") => save_png(path, image),
        _ => save_p2(path, image),
    }
}

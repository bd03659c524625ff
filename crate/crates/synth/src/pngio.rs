//! Thin PNG helpers with strict shape/format validation.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use png::{BitDepth, ColorType, Decoder, Encoder};

use crate::error::{Error, Result};

fn encoder<'a>(
    path: &Path,
    w: usize,
    h: usize,
    color: ColorType,
    depth: BitDepth,
) -> Result<Encoder<'a, BufWriter<File>>> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = Encoder::new(BufWriter::new(file), w as u32, h as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    Ok(enc)
}

pub fn write_rgb8(path: &Path, w: usize, h: usize, data: &[u8]) -> Result<()> {
    debug_assert_eq!(data.len(), 3 * w * h);
    let enc = encoder(path, w, h, ColorType::Rgb, BitDepth::Eight)?;
    let mut writer = enc.write_header().map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    writer.write_image_data(data).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(())
}

pub fn write_gray8(path: &Path, w: usize, h: usize, data: &[u8]) -> Result<()> {
    debug_assert_eq!(data.len(), w * h);
    let enc = encoder(path, w, h, ColorType::Grayscale, BitDepth::Eight)?;
    let mut writer = enc.write_header().map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    writer.write_image_data(data).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(())
}

/// 16-bit grayscale; PNG carries big-endian sample bytes.
pub fn write_gray16(path: &Path, w: usize, h: usize, data: &[u16]) -> Result<()> {
    debug_assert_eq!(data.len(), w * h);
    let enc = encoder(path, w, h, ColorType::Grayscale, BitDepth::Sixteen)?;
    let mut writer = enc.write_header().map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut bytes = Vec::with_capacity(2 * data.len());
    for &v in data {
        bytes.extend_from_slice(&v.to_be_bytes());
    }
    writer.write_image_data(&bytes).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    Ok(())
}

fn read_frame(path: &Path) -> Result<(png::OutputInfo, Vec<u8>)> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let decoder = Decoder::new(BufReader::new(file));
    let mut reader = decoder.read_info().map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader.next_frame(&mut buf).map_err(|e| Error::Png {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn check_dims(path: &Path, info: &png::OutputInfo, w: usize, h: usize) -> Result<()> {
    if info.width as usize != w || info.height as usize != h {
        return Err(Error::Png {
            path: path.to_path_buf(),
            detail: format!(
                "expected {w}x{h}, file is {}x{}",
                info.width, info.height
            ),
        });
    }
    Ok(())
}

pub fn read_rgb8(path: &Path, w: usize, h: usize) -> Result<Vec<u8>> {
    let (info, buf) = read_frame(path)?;
    check_dims(path, &info, w, h)?;
    if info.color_type != ColorType::Rgb || info.bit_depth != BitDepth::Eight {
        return Err(Error::Png {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit RGB, got {:?}/{:?}", info.color_type, info.bit_depth),
        });
    }
    Ok(buf)
}

pub fn read_gray8(path: &Path, w: usize, h: usize) -> Result<Vec<u8>> {
    let (info, buf) = read_frame(path)?;
    check_dims(path, &info, w, h)?;
    if info.color_type != ColorType::Grayscale || info.bit_depth != BitDepth::Eight {
        return Err(Error::Png {
            path: path.to_path_buf(),
            detail: format!(
                "expected 8-bit grayscale, got {:?}/{:?}",
                info.color_type, info.bit_depth
            ),
        });
    }
    Ok(buf)
}

pub fn read_gray16(path: &Path, w: usize, h: usize) -> Result<Vec<u16>> {
    let (info, buf) = read_frame(path)?;
    check_dims(path, &info, w, h)?;
    if info.color_type != ColorType::Grayscale || info.bit_depth != BitDepth::Sixteen {
        return Err(Error::Png {
            path: path.to_path_buf(),
            detail: format!(
                "expected 16-bit grayscale, got {:?}/{:?}",
                info.color_type, info.bit_depth
            ),
        });
    }
    Ok(buf
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect())
}

/// Read an arbitrary-size 8-bit PNG as RGB (grayscale and alpha variants are
/// widened/stripped). Used by single-image inference.
pub fn read_rgb8_any(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let (info, buf) = read_frame(path)?;
    if info.bit_depth != BitDepth::Eight {
        return Err(Error::Png {
            path: path.to_path_buf(),
            detail: format!("expected 8-bit samples, got {:?}", info.bit_depth),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let rgb = match info.color_type {
        ColorType::Rgb => buf,
        ColorType::Rgba => buf
            .chunks_exact(4)
            .flat_map(|c| [c[0], c[1], c[2]])
            .collect(),
        ColorType::Grayscale => buf.iter().flat_map(|&v| [v, v, v]).collect(),
        ColorType::GrayscaleAlpha => buf
            .chunks_exact(2)
            .flat_map(|c| [c[0], c[0], c[0]])
            .collect(),
        other => {
            return Err(Error::Png {
                path: path.to_path_buf(),
                detail: format!("unsupported color type {other:?}"),
            })
        }
    };
    Ok((w, h, rgb))
}

/// Read an arbitrary-size 16-bit grayscale PNG (millimeter depth).
pub fn read_gray16_any(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let (info, buf) = read_frame(path)?;
    if info.color_type != ColorType::Grayscale || info.bit_depth != BitDepth::Sixteen {
        return Err(Error::Png {
            path: path.to_path_buf(),
            detail: format!(
                "expected 16-bit grayscale, got {:?}/{:?}",
                info.color_type, info.bit_depth
            ),
        });
    }
    let vals = buf
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    Ok((info.width as usize, info.height as usize, vals))
}

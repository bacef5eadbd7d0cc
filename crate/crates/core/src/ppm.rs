//! Binary PPM (P6, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use crate::data::to_byte;
use crate::error::{Error, Result};
use crate::image::Image;

/// Encodes an RGB image, clamping to `[0,1]` before rounding to bytes.
pub fn encode(image: &Image) -> Result<Vec<u8>> {
    if image.channels() != 3 {
        return Err(Error::Ppm(format!("P6 needs 3 channels, got {}", image.channels())));
    }
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(image.data().iter().map(|&v| to_byte(v)));
    Ok(out)
}

pub fn decode(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P6" {
        return Err(Error::Ppm(format!("bad magic {:?}", String::from_utf8_lossy(magic))));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(Error::Ppm(format!("only maxval 255 is supported, got {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::Ppm("missing whitespace after maxval".into())),
    }
    let n = width * height * 3;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| Error::Ppm(format!("raster needs {n} bytes, found {}", bytes.len() - pos)))?;
    Image::new(height, width, 3, raster.iter().map(|&b| f64::from(b) / 255.0).collect())
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(Error::Ppm("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = next_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .filter(|&v: &usize| v > 0)
        .ok_or_else(|| Error::Ppm(format!("bad {what} {:?}", String::from_utf8_lossy(tok))))
}

pub fn read(path: &Path) -> Result<Image> {
    decode(&fs::read(path)?)
}

pub fn write(path: &Path, image: &Image) -> Result<()> {
    fs::write(path, encode(image)?)?;
    Ok(())
}

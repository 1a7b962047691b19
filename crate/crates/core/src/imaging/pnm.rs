//! Binary PGM (P5) / PPM (P6) with maxval 255. Writing quantizes samples to
//! 8 bits, so a round trip is lossy; metrics always run on in-memory reals.

use std::io::{Read, Write};

use super::Image;
use crate::error::{Error, Result};

pub fn write_pnm<W: Write>(img: &Image, mut w: W) -> Result<()> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    write!(w, "{magic}\n{} {}\n255\n", img.width(), img.height())?;
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    w.write_all(&bytes)?;
    Ok(())
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::format("pnm", "unexpected end of header"));
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

pub fn read_pnm<R: Read>(mut r: R) -> Result<Image> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let mut pos = 0;
    let channels = match next_token(&bytes, &mut pos)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::format("pnm", format!("unsupported magic {other}"))),
    };
    let mut num = |what: &str| -> Result<usize> {
        next_token(&bytes, &mut pos)?
            .parse()
            .map_err(|_| Error::format("pnm", format!("bad {what}")))
    };
    let width = num("width")?;
    let height = num("height")?;
    let maxval = num("maxval")?;
    if maxval != 255 {
        return Err(Error::format("pnm", format!("maxval {maxval} unsupported")));
    }
    pos += 1;
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(Error::format("pnm", "truncated pixel data"));
    }
    let data = bytes[pos..pos + n].iter().map(|&b| b as f64 / 255.0).collect();
    Image::new(width, height, channels, data)
}

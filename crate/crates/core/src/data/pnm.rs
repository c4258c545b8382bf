//! Binary PGM (P5) and PPM (P6) with 8-bit samples.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Decoded raster: interleaved samples, `channels` per pixel.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

pub fn encode(raster: &Raster) -> Vec<u8> {
    let magic = if raster.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", raster.width, raster.height).into_bytes();
    out.extend_from_slice(&raster.data);
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\n' | b'\r' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self) -> std::result::Result<usize, (usize, String)> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err((start, "expected a decimal number".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or((start, "number out of range".into()))
    }
}

/// Parses P5/P6 bytes; errors carry the byte offset of the problem.
pub fn decode(bytes: &[u8], file: &Path) -> Result<Raster> {
    let fail = |offset: usize, reason: String| Error::Parse {
        file: file.to_path_buf(),
        offset,
        reason,
    };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(fail(0, "expected magic P5 or P6".into())),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number().map_err(|(o, r)| fail(o, r))?;
    let height = cur.number().map_err(|(o, r)| fail(o, r))?;
    let maxval_at = cur.pos;
    let maxval = cur.number().map_err(|(o, r)| fail(o, r))?;
    if maxval != 255 {
        return Err(fail(maxval_at, format!("max value {maxval}, only 255 is supported")));
    }
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(fail(cur.pos, "expected one whitespace byte before raster".into())),
    }
    let need = width * height * channels;
    let data = &bytes[cur.pos..];
    if data.len() < need {
        return Err(fail(
            bytes.len(),
            format!("raster truncated: {} of {need} bytes", data.len()),
        ));
    }
    if data.len() > need {
        return Err(fail(cur.pos + need, "trailing bytes after raster".into()));
    }
    Ok(Raster {
        width,
        height,
        channels,
        data: data.to_vec(),
    })
}

pub fn write(path: &Path, raster: &Raster) -> Result<()> {
    fs::write(path, encode(raster)).map_err(|e| Error::io(path, e))
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

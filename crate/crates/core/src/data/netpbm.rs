//! Binary NetPBM (P5 grayscale / P6 RGB) parsing and emission, maxval 255.
//!
//! Strict on purpose: parse(emit(x)) == x bit-exactly, and every parse
//! failure carries the byte offset of the offending input.

use std::path::Path;

use crate::error::{Error, Result};

/// 8-bit raster, interleaved channels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMap {
    pub width: usize,
    pub height: usize,
    /// 1 (grayscale) or 3 (RGB)
    pub channels: usize,
    pub data: Vec<u8>,
}

impl PixelMap {
    pub fn gray(width: usize, height: usize) -> Self {
        PixelMap {
            width,
            height,
            channels: 1,
            data: vec![0; width * height],
        }
    }

    pub fn rgb(width: usize, height: usize) -> Self {
        PixelMap {
            width,
            height,
            channels: 3,
            data: vec![0; width * height * 3],
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    pub fn len_bytes(&self) -> usize {
        self.width * self.height * self.channels
    }

    /// Map every pixel to {0,1}: any nonzero value counts as foreground.
    pub fn binarized(&self) -> PixelMap {
        PixelMap {
            width: self.width,
            height: self.height,
            channels: self.channels,
            data: self.data.iter().map(|&v| (v != 0) as u8).collect(),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn fail(&self, what: impl Into<String>) -> Error {
        Error::ParseAt {
            offset: self.pos,
            what: what.into(),
        }
    }

    fn peek(&self) -> Option<u8> {
        self.bytes.get(self.pos).copied()
    }

    /// Skip whitespace and `# ...` comment lines between header tokens.
    fn skip_separators(&mut self) -> Result<()> {
        loop {
            match self.peek() {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(b) = self.peek() {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(self.fail("unexpected end of header")),
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_separators()?;
        let start = self.pos;
        while matches!(self.peek(), Some(b) if b.is_ascii_digit()) {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.fail(format!("expected {what} (ASCII integer)")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.fail(format!("unparseable {what}")))
    }
}

/// Parse a binary P5/P6 image with maxval 255.
pub fn parse(bytes: &[u8]) -> Result<PixelMap> {
    let mut cur = Cursor { bytes, pos: 0 };
    let channels = match bytes.get(0..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(cur.fail("expected magic 'P5' or 'P6'")),
    };
    cur.pos = 2;
    let width = cur.read_uint("width")?;
    let height = cur.read_uint("height")?;
    let maxval = cur.read_uint("maxval")?;
    if maxval != 255 {
        return Err(cur.fail(format!("unsupported maxval {maxval}, only 255")));
    }
    match cur.peek() {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.fail("expected single whitespace byte after maxval")),
    }
    let expected = width * height * channels;
    let payload = &bytes[cur.pos..];
    if payload.len() < expected {
        return Err(Error::ParseAt {
            offset: bytes.len(),
            what: format!(
                "truncated payload: need {expected} bytes for {width}x{height}x{channels}, have {}",
                payload.len()
            ),
        });
    }
    if payload.len() > expected {
        return Err(Error::ParseAt {
            offset: cur.pos + expected,
            what: format!("{} trailing bytes after payload", payload.len() - expected),
        });
    }
    if width == 0 || height == 0 {
        return Err(cur.fail("zero image extent"));
    }
    Ok(PixelMap {
        width,
        height,
        channels,
        data: payload.to_vec(),
    })
}

/// Emit binary P5/P6 with maxval 255.
pub fn emit(map: &PixelMap) -> Vec<u8> {
    let magic = match map.channels {
        1 => "P5",
        3 => "P6",
        c => panic!("PixelMap with unsupported channel count {c}"),
    };
    let header = format!("{magic}\n{} {}\n255\n", map.width, map.height);
    let mut out = Vec::with_capacity(header.len() + map.data.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&map.data);
    out
}

pub fn read_file(path: &Path) -> Result<PixelMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse(&bytes).map_err(|e| match e {
        Error::ParseAt { offset, what } => Error::ParseAt {
            offset,
            what: format!("{}: {what}", path.display()),
        },
        other => other,
    })
}

pub fn write_file(path: &Path, map: &PixelMap) -> Result<()> {
    std::fs::write(path, emit(map)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_minimal_p5() {
        let bytes = b"P5\n2 2\n255\n\x00\x40\x80\xff";
        let map = parse(bytes).unwrap();
        assert_eq!((map.width, map.height, map.channels), (2, 2, 1));
        assert_eq!(map.data, vec![0, 64, 128, 255]);
    }

    #[test]
    fn comment_between_tokens_is_ignored() {
        let plain = parse(b"P5\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        let commented = parse(b"P5\n# c\n2 2\n255\n\x01\x02\x03\x04").unwrap();
        assert_eq!(plain, commented);
    }

    #[test]
    fn emit_parse_round_trip() {
        let mut map = PixelMap::rgb(3, 2);
        for (i, v) in map.data.iter_mut().enumerate() {
            *v = (i * 37 % 256) as u8;
        }
        assert_eq!(parse(&emit(&map)).unwrap(), map);
        // and byte-identity the other way
        let bytes = emit(&map);
        assert_eq!(emit(&parse(&bytes).unwrap()), bytes);
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        match parse(b"P3\n1 1\n255\n0") {
            Err(Error::ParseAt { offset: 0, .. }) => {}
            other => panic!("expected parse error at 0, got {other:?}"),
        }
    }

    #[test]
    fn truncated_payload_detected() {
        let err = parse(b"P5\n2 2\n255\n\x01\x02").unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn trailing_garbage_detected() {
        let err = parse(b"P5\n1 1\n255\n\x01\x02").unwrap_err();
        assert!(err.to_string().contains("trailing"), "{err}");
    }

    #[test]
    fn maxval_other_than_255_rejected() {
        let err = parse(b"P5\n1 1\n65535\n\x01").unwrap_err();
        assert!(err.to_string().contains("maxval"), "{err}");
    }
}

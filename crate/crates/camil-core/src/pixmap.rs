//! 8-bit grayscale images with PGM (P2 ASCII, P5 binary) parsing and P5
//! writing. Parse failures report the byte offset where the input stopped
//! making sense.

use crate::error::{CamilError, Result};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pixmap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Pixmap {
    pub fn new(width: usize, height: usize) -> Pixmap {
        Pixmap {
            width,
            height,
            data: vec![0; width * height],
        }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<u8>) -> Result<Pixmap> {
        if data.len() != width * height {
            return Err(CamilError::InvalidArgument(format!(
                "pixmap {width}x{height} needs {} bytes, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Pixmap {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: u8) {
        self.data[row * self.width + col] = v;
    }

    pub fn histogram(&self) -> [u64; 256] {
        let mut h = [0u64; 256];
        for &p in &self.data {
            h[p as usize] += 1;
        }
        h
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> CamilError {
        CamilError::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    /// Skips whitespace and `#` comments (to end of line), the only filler
    /// PGM headers allow.
    fn skip_filler(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\r' | b'\n' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => return,
            }
        }
    }

    fn next_uint(&mut self, what: &str, max: u64) -> Result<u64> {
        self.skip_filler();
        let start = self.pos;
        let mut value: u64 = 0;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            value = value * 10 + (self.bytes[self.pos] - b'0') as u64;
            if value > max {
                return Err(CamilError::Parse {
                    offset: start,
                    message: format!("{what} exceeds {max}"),
                });
            }
            self.pos += 1;
        }
        if self.pos == start {
            return Err(self.err(format!("expected {what}")));
        }
        Ok(value)
    }
}

pub fn parse_pgm(bytes: &[u8]) -> Result<Pixmap> {
    let mut cur = Cursor { bytes, pos: 0 };
    let binary = match bytes.get(0..2) {
        Some(b"P2") => false,
        Some(b"P5") => true,
        _ => {
            return Err(CamilError::Parse {
                offset: 0,
                message: "expected PGM magic P2 or P5".into(),
            })
        }
    };
    cur.pos = 2;
    let width = cur.next_uint("width", 1 << 20)? as usize;
    let height = cur.next_uint("height", 1 << 20)? as usize;
    let maxval = cur.next_uint("maxval", 255)?;
    if maxval == 0 {
        return Err(cur.err("maxval must be at least 1"));
    }
    let n = width * height;
    let mut data = Vec::with_capacity(n);
    if binary {
        // One whitespace byte separates the header from raw pixels.
        if cur.pos >= bytes.len() || !bytes[cur.pos].is_ascii_whitespace() {
            return Err(cur.err("expected single whitespace before raster"));
        }
        cur.pos += 1;
        if bytes.len() - cur.pos < n {
            let available = bytes.len() - cur.pos;
            cur.pos = bytes.len();
            return Err(cur.err(format!(
                "raster truncated, needed {n} pixels, got {available}"
            )));
        }
        for i in 0..n {
            let v = bytes[cur.pos + i];
            if v as u64 > maxval {
                cur.pos += i;
                return Err(cur.err(format!("pixel {v} exceeds maxval {maxval}")));
            }
            data.push(v);
        }
    } else {
        for _ in 0..n {
            let v = cur.next_uint("pixel", maxval)?;
            data.push(v as u8);
        }
    }
    Pixmap::from_data(width, height, data)
}

/// Binary (P5) encoding with maxval 255.
pub fn encode_pgm(img: &Pixmap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

pub fn read_pgm(path: &Path) -> Result<Pixmap> {
    let bytes = std::fs::read(path).map_err(|e| CamilError::io(path, e))?;
    parse_pgm(&bytes)
}

pub fn write_pgm(path: &Path, img: &Pixmap) -> Result<()> {
    std::fs::write(path, encode_pgm(img)).map_err(|e| CamilError::io(path, e))
}

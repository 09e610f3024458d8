//! 2-D grayscale raster, the universal sample representation.
//!
//! Intensities are 8-bit, 0 = background and 255 = full ink. Pixels with
//! value >= 128 count as foreground everywhere in the pipeline.

use std::fmt;
use std::io::{self, Write};
use std::path::Path;

/// Foreground threshold on 8-bit intensity.
pub const FG_THRESHOLD: u8 = 128;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        Raster {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn from_pixels(width: usize, height: usize, pixels: Vec<u8>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count mismatch");
        Raster {
            width,
            height,
            pixels,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }

    #[inline]
    pub fn is_foreground(&self, x: usize, y: usize) -> bool {
        self.get(x, y) >= FG_THRESHOLD
    }

    pub fn foreground_count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p >= FG_THRESHOLD).count()
    }

    /// Stamps `other` onto self at the given offset, keeping the max intensity
    /// per pixel. Pixels falling outside self are dropped.
    pub fn blit_max(&mut self, other: &Raster, off_x: i64, off_y: i64) {
        for y in 0..other.height {
            let ty = y as i64 + off_y;
            if ty < 0 || ty >= self.height as i64 {
                continue;
            }
            for x in 0..other.width {
                let tx = x as i64 + off_x;
                if tx < 0 || tx >= self.width as i64 {
                    continue;
                }
                let v = other.get(x, y);
                let cur = self.get(tx as usize, ty as usize);
                if v > cur {
                    self.set(tx as usize, ty as usize, v);
                }
            }
        }
    }

    /// Forward-mapped nearest-neighbor shrink onto a `w x h` canvas, centered.
    /// Every source foreground pixel lands on some target pixel, so each
    /// 8-connected source component stays connected (components may merge,
    /// never split) as long as the scale factor is <= 1.
    pub fn shrink_to(&self, w: usize, h: usize) -> Raster {
        let sx = w as f64 / self.width as f64;
        let sy = h as f64 / self.height as f64;
        let s = sx.min(sy).min(1.0);
        let out_w = ((self.width as f64 * s).round() as usize).clamp(1, w);
        let out_h = ((self.height as f64 * s).round() as usize).clamp(1, h);
        let off_x = (w - out_w) / 2;
        let off_y = (h - out_h) / 2;
        let mut out = Raster::new(w, h);
        for y in 0..self.height {
            for x in 0..self.width {
                let v = self.get(x, y);
                if v == 0 {
                    continue;
                }
                let tx = ((x as f64 + 0.5) * s) as usize;
                let ty = ((y as f64 + 0.5) * s) as usize;
                let tx = (off_x + tx.min(out_w - 1)).min(w - 1);
                let ty = (off_y + ty.min(out_h - 1)).min(h - 1);
                if v > out.get(tx, ty) {
                    out.set(tx, ty, v);
                }
            }
        }
        out
    }
}

impl fmt::Display for Raster {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for y in 0..self.height {
            for x in 0..self.width {
                write!(f, "{}", if self.is_foreground(x, y) { '#' } else { '.' })?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: String, msg: String },
}

/// Writes a binary PGM ("P5", maxval 255).
pub fn write_pgm(raster: &Raster, path: &Path) -> Result<(), PgmError> {
    let mut buf = Vec::with_capacity(raster.pixels.len() + 32);
    write!(buf, "P5\n{} {}\n255\n", raster.width, raster.height).expect("in-memory write");
    buf.extend_from_slice(&raster.pixels);
    std::fs::write(path, buf).map_err(|e| PgmError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Reads a binary PGM ("P5", maxval 255).
pub fn read_pgm(path: &Path) -> Result<Raster, PgmError> {
    let data = std::fs::read(path).map_err(|e| PgmError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    parse_pgm(&data).map_err(|msg| PgmError::Format {
        path: path.display().to_string(),
        msg,
    })
}

fn parse_pgm(data: &[u8]) -> Result<Raster, String> {
    let mut cursor = data;
    let mut tokens = Vec::new();
    // header is ASCII: magic, width, height, maxval, then a single whitespace byte
    while tokens.len() < 4 {
        skip_pgm_whitespace(&mut cursor)?;
        let start = cursor;
        let mut len = 0;
        while len < start.len() && !start[len].is_ascii_whitespace() {
            len += 1;
        }
        if len == 0 {
            return Err("truncated header".into());
        }
        tokens.push(std::str::from_utf8(&start[..len]).map_err(|_| "non-ASCII header")?);
        cursor = &cursor[len..];
    }
    if tokens[0] != "P5" {
        return Err(format!("expected P5 magic, found {:?}", tokens[0]));
    }
    let width: usize = tokens[1].parse().map_err(|_| "bad width")?;
    let height: usize = tokens[2].parse().map_err(|_| "bad height")?;
    let maxval: usize = tokens[3].parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    if width == 0 || height == 0 {
        return Err("zero dimension".into());
    }
    let mut body = cursor;
    if body.is_empty() {
        return Err("truncated pixel data".into());
    }
    body = &body[1..]; // single whitespace after maxval
    let expected = width * height;
    if body.len() < expected {
        return Err(format!(
            "truncated pixel data: expected {expected} bytes, found {}",
            body.len()
        ));
    }
    Ok(Raster::from_pixels(width, height, body[..expected].to_vec()))
}

fn skip_pgm_whitespace(cursor: &mut &[u8]) -> Result<(), String> {
    loop {
        while let Some(&b) = cursor.first() {
            if b.is_ascii_whitespace() {
                *cursor = &cursor[1..];
            } else {
                break;
            }
        }
        if cursor.first() == Some(&b'#') {
            while let Some(&b) = cursor.first() {
                *cursor = &cursor[1..];
                if b == b'\n' {
                    break;
                }
            }
        } else {
            return Ok(());
        }
    }
}

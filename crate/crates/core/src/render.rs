//! Rasterizes a trace onto an RGB canvas and reads/writes binary PPM.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::IMAGE_SCALE;
use crate::model::Trace;

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("canvas has a zero dimension ({width}x{height})")]
    DegenerateCanvas { width: u32, height: u32 },
    #[error("pixel buffer has {found} bytes, expected {expected}")]
    BufferSize { expected: usize, found: usize },
    #[error("not a binary PPM: {0}")]
    BadPpm(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Canvas {
    width: u32,
    height: u32,
    pixels: Vec<u8>,
}

impl Canvas {
    pub fn new(width: u32, height: u32, background: Rgb) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::DegenerateCanvas { width, height });
        }
        let n = width as usize * height as usize;
        Ok(Self {
            width,
            height,
            pixels: background.repeat(n),
        })
    }

    pub fn from_pixels(width: u32, height: u32, pixels: Vec<u8>) -> Result<Self, RenderError> {
        if width == 0 || height == 0 {
            return Err(RenderError::DegenerateCanvas { width, height });
        }
        let expected = width as usize * height as usize * 3;
        if pixels.len() != expected {
            return Err(RenderError::BufferSize {
                expected,
                found: pixels.len(),
            });
        }
        Ok(Self { width, height, pixels })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: u32, y: u32) -> Option<Rgb> {
        if x >= self.width || y >= self.height {
            return None;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        Some([self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]])
    }

    /// Writes a pixel; coordinates outside the canvas are ignored.
    pub fn put(&mut self, x: i64, y: i64, color: Rgb) {
        if x < 0 || y < 0 || x >= i64::from(self.width) || y >= i64::from(self.height) {
            return;
        }
        let i = (y as usize * self.width as usize + x as usize) * 3;
        self.pixels[i..i + 3].copy_from_slice(&color);
    }

    fn fill_square(&mut self, cx: i64, cy: i64, size: i64, color: Rgb) {
        let half = size / 2;
        for y in cy - half..=cy + half {
            for x in cx - half..=cx + half {
                self.put(x, y, color);
            }
        }
    }

    pub fn write_ppm<W: Write>(&self, mut w: W) -> io::Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&self.pixels)
    }

    pub fn to_ppm(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.pixels.len() + 32);
        self.write_ppm(&mut out).expect("writing to memory cannot fail");
        out
    }

    pub fn read_ppm<R: Read>(mut r: R) -> Result<Self, RenderError> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut fields = Vec::with_capacity(4);
        let mut pos = 0;
        while fields.len() < 4 {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if data.get(pos) == Some(&b'#') {
                while pos < data.len() && data[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(RenderError::BadPpm("truncated header".into()));
            }
            fields.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
        }
        // exactly one whitespace byte separates the header from the raster
        pos += 1;
        if fields[0] != "P6" {
            return Err(RenderError::BadPpm(format!("magic {:?}", fields[0])));
        }
        let num = |s: &str| s.parse::<u32>().map_err(|_| RenderError::BadPpm(format!("bad number {s:?}")));
        let (width, height, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
        if maxval != 255 {
            return Err(RenderError::BadPpm(format!("maxval {maxval}")));
        }
        Canvas::from_pixels(width, height, data.get(pos..).unwrap_or_default().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStyle {
    pub line: Rgb,
    pub start: Rgb,
    pub end: Rgb,
    /// Interpolate the line color from `start` to `end` along the waypoints.
    pub gradient: bool,
}

impl Default for TraceStyle {
    fn default() -> Self {
        Self {
            line: [255, 215, 0],
            start: [0, 200, 0],
            end: [220, 0, 0],
            gradient: false,
        }
    }
}

/// Integer Bresenham line; calls `plot` for every pixel from `(x0, y0)` to `(x1, y1)` inclusive.
pub fn bresenham(x0: i64, y0: i64, x1: i64, y1: i64, mut plot: impl FnMut(i64, i64)) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let (mut x, mut y, mut err) = (x0, y0, dx + dy);
    loop {
        plot(x, y);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Maps a `[0, 1000]` coordinate onto `0..size`.
fn to_canvas(v: i32, size: u32) -> i64 {
    let scaled = i64::from(v) * i64::from(size - 1);
    let scale = i64::from(IMAGE_SCALE);
    // round half up
    (2 * scaled + scale) / (2 * scale)
}

fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    let mix = |x: u8, y: u8| (f64::from(x) + (f64::from(y) - f64::from(x)) * t).round() as u8;
    [mix(a[0], b[0]), mix(a[1], b[1]), mix(a[2], b[2])]
}

/// Draws the trace polyline with a 3×3 start marker and a 5×5 end marker.
pub fn render_trace(mut canvas: Canvas, trace: &Trace, style: &TraceStyle) -> Canvas {
    let (w, h) = (canvas.width, canvas.height);
    let pts: Vec<(i64, i64)> = trace
        .waypoints()
        .iter()
        .map(|p| (to_canvas(p.x, w), to_canvas(p.y, h)))
        .collect();
    let segments = pts.len() - 1;
    for (i, seg) in pts.windows(2).enumerate() {
        let color = if style.gradient {
            lerp(style.start, style.end, i as f64 / segments.max(1) as f64)
        } else {
            style.line
        };
        bresenham(seg[0].0, seg[0].1, seg[1].0, seg[1].1, |x, y| canvas.put(x, y, color));
    }
    let (sx, sy) = pts[0];
    let (ex, ey) = pts[pts.len() - 1];
    canvas.fill_square(sx, sy, 3, style.start);
    canvas.fill_square(ex, ey, 5, style.end);
    canvas
}

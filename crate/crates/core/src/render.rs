//! 8-bit grayscale portable graymap output: topology images with dark
//! material, and plain line plots with error bars.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Encodes densities as binary PGM, pixel `round(255·(1 − x))` with `x`
/// clamped to `[0, 1]`, so solid is black and void white.
pub fn topology_pgm(field: &Grid) -> Vec<u8> {
    let pixels: Vec<u8> = field
        .data()
        .iter()
        .map(|&x| (255.0 * (1.0 - x.clamp(0.0, 1.0))).round() as u8)
        .collect();
    encode_pgm(field.cols(), field.rows(), &pixels)
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    let mut out = format!("P5 {width} {height} 255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses a binary PGM with maxval 255, returning `(width, height, pixels)`.
/// Header tokens may be separated by any whitespace and `#` comments.
pub fn decode_pgm(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    let mut pos = 0;
    let mut token = || -> Result<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Format("truncated PGM header".into()));
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token()? != "P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let num = |s: String| {
        s.parse::<usize>()
            .map_err(|_| Error::Format(format!("bad PGM header value `{s}`")))
    };
    let width = num(token()?)?;
    let height = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval != 255 {
        return Err(Error::Format(format!("unsupported PGM maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = pos + 1;
    let end = start + width * height;
    if bytes.len() < end {
        return Err(Error::Format(format!(
            "PGM raster needs {} bytes, found {}",
            width * height,
            bytes.len().saturating_sub(start)
        )));
    }
    Ok((width, height, bytes[start..end].to_vec()))
}

/// Reads a topology image back as a binary field: pixels up to 127 are solid.
pub fn parse_topology_pgm(bytes: &[u8]) -> Result<Grid> {
    let (w, h, px) = decode_pgm(bytes)?;
    Grid::new(
        h,
        w,
        px.iter()
            .map(|&p| if p <= 127 { 1.0 } else { 0.0 })
            .collect(),
    )
}

/// One curve: `(x, y, bar low, bar high)` points. Non-finite bar ends
/// draw no error bar.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub points: Vec<(f64, f64, f64, f64)>,
}

impl Series {
    /// Points with symmetric bars `y ± half_width`.
    pub fn symmetric(points: impl IntoIterator<Item = (f64, f64, f64)>) -> Self {
        Self {
            points: points
                .into_iter()
                .map(|(x, y, e)| (x, y, y - e.abs(), y + e.abs()))
                .collect(),
        }
    }
}

struct Canvas {
    w: usize,
    h: usize,
    px: Vec<u8>,
}

impl Canvas {
    fn set(&mut self, x: i64, y: i64, v: u8) {
        if x >= 0 && y >= 0 && (x as usize) < self.w && (y as usize) < self.h {
            self.px[y as usize * self.w + x as usize] = v;
        }
    }

    fn line(&mut self, (x0, y0): (i64, i64), (x1, y1): (i64, i64), v: u8, dash: usize) {
        let (dx, dy) = ((x1 - x0).abs(), -(y1 - y0).abs());
        let (sx, sy) = (if x0 < x1 { 1 } else { -1 }, if y0 < y1 { 1 } else { -1 });
        let (mut x, mut y, mut err) = (x0, y0, dx + dy);
        let mut k = 0usize;
        loop {
            if dash == 0 || (k / dash) % 2 == 0 {
                self.set(x, y, v);
            }
            k += 1;
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
}

/// Rasterizes curves on shared axes with vertical error bars. The x axis
/// is logarithmic when `log_x` is set. Each series gets its own gray
/// level and dash pattern; the frame is black on white.
pub fn line_plot(series: &[Series], width: usize, height: usize, log_x: bool) -> Result<Vec<u8>> {
    if width < 40 || height < 40 {
        return Err(crate::error::invalid("plot must be at least 40x40 pixels"));
    }
    let tx = |x: f64| {
        if log_x {
            x.max(f64::MIN_POSITIVE).ln()
        } else {
            x
        }
    };
    let pts = series
        .iter()
        .flat_map(|s| s.points.iter())
        .filter(|p| p.0.is_finite() && p.1.is_finite());
    let (mut x_lo, mut x_hi, mut y_lo, mut y_hi) = (
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    );
    for &(x, y, lo, hi) in pts {
        x_lo = x_lo.min(tx(x));
        x_hi = x_hi.max(tx(x));
        for v in [y, lo, hi].into_iter().filter(|v| v.is_finite()) {
            y_lo = y_lo.min(v);
            y_hi = y_hi.max(v);
        }
    }
    if !x_lo.is_finite() {
        (x_lo, x_hi, y_lo, y_hi) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_hi - x_lo < 1e-12 {
        (x_lo, x_hi) = (x_lo - 0.5, x_hi + 0.5);
    }
    if y_hi - y_lo < 1e-12 {
        (y_lo, y_hi) = (y_lo - 0.5, y_hi + 0.5);
    }
    let margin = 12i64;
    let (pw, ph) = (width as i64 - 2 * margin, height as i64 - 2 * margin);
    let map = |x: f64, y: f64| -> (i64, i64) {
        let u = (tx(x) - x_lo) / (x_hi - x_lo);
        let v = (y - y_lo) / (y_hi - y_lo);
        (
            margin + (u * (pw - 1) as f64).round() as i64,
            margin + ph - 1 - (v * (ph - 1) as f64).round() as i64,
        )
    };
    let mut c = Canvas {
        w: width,
        h: height,
        px: vec![255; width * height],
    };
    let (l, r, t, b) = (margin - 4, margin + pw + 3, margin - 4, margin + ph + 3);
    c.line((l, b), (r, b), 0, 0);
    c.line((l, t), (l, b), 0, 0);
    for (k, s) in series.iter().enumerate() {
        let shade = [0u8, 96, 160][k % 3];
        let dash = [0usize, 4, 2][(k / 3) % 3];
        let pts: Vec<(f64, f64, f64, f64)> = s
            .points
            .iter()
            .copied()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        for pair in pts.windows(2) {
            c.line(
                map(pair[0].0, pair[0].1),
                map(pair[1].0, pair[1].1),
                shade,
                dash,
            );
        }
        for &(x, y, lo, hi) in &pts {
            let (px, py) = map(x, y);
            if lo.is_finite() && hi.is_finite() && hi > lo {
                let (_, top) = map(x, hi);
                let (_, bot) = map(x, lo);
                c.line((px, top), (px, bot), shade, 0);
                c.line((px - 2, top), (px + 2, top), shade, 0);
                c.line((px - 2, bot), (px + 2, bot), shade, 0);
            }
            for d in -1..=1 {
                c.line((px - 1, py + d), (px + 1, py + d), shade, 0);
            }
        }
    }
    Ok(encode_pgm(width, height, &c.px))
}

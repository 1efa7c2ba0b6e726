//! Grayscale images and the geometric primitives shared by every stage.
//!
//! Intensity convention: 0.0 is black ink, 1.0 is white paper. The only file
//! formats are binary PGM (P5, maxval 255) in and binary PPM (P6) out;
//! converting anything else is the caller's job.

use crate::error::Error;
use crate::Result;

/// 2-D grayscale image, row-major, intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

/// Axis-aligned rectangle, half-open: [x0, x1) × [y0, y1).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        debug_assert!(x0 < x1 && y0 < y1, "degenerate rect {x0},{y0},{x1},{y1}");
        Rect { x0, y0, x1, y1 }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    /// Intersection, or None when the rects do not overlap.
    pub fn intersect(&self, other: &Rect) -> Option<Rect> {
        let x0 = self.x0.max(other.x0);
        let y0 = self.y0.max(other.y0);
        let x1 = self.x1.min(other.x1);
        let y1 = self.y1.min(other.y1);
        if x0 < x1 && y0 < y1 {
            Some(Rect::new(x0, y0, x1, y1))
        } else {
            None
        }
    }

    /// Translate by (dx, dy).
    pub fn shifted(&self, dx: f64, dy: f64) -> Rect {
        Rect::new(self.x0 + dx, self.y0 + dy, self.x1 + dx, self.y1 + dy)
    }
}

/// How an overlay box is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OverlayStyle {
    /// 1-px pure red border.
    SolidRed,
    /// 1-px gray border with a 2-px on / 2-px off dash pattern.
    DashedGray,
}

impl Raster {
    /// Build from row-major intensities; validates range and pixel count.
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Invalid(format!(
                "raster dimensions must be positive, got {width}x{height}"
            )));
        }
        if pixels.len() != width * height {
            return Err(Error::Invalid(format!(
                "pixel count {} does not match {}x{}",
                pixels.len(),
                width,
                height
            )));
        }
        if let Some(p) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::Invalid(format!("intensity {p} outside [0,1]")));
        }
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    /// Constant-intensity image.
    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Raster::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    /// Full frame as a Rect.
    pub fn frame(&self) -> Rect {
        Rect::new(0.0, 0.0, self.width as f64, self.height as f64)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.pixels[y * self.width..(y + 1) * self.width]
    }

    /// Snap every intensity to the nearest k/255 level, as an 8-bit file
    /// would store it.
    pub fn quantized(&self) -> Raster {
        let pixels = self
            .pixels
            .iter()
            .map(|p| (p * 255.0).round() / 255.0)
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            pixels,
        }
    }

    /// Decode a binary PGM (P5, maxval 255) stream.
    pub fn load_pgm(bytes: &[u8]) -> Result<Raster> {
        let mut cursor;

        fn skip_ws(bytes: &[u8], cursor: &mut usize) {
            while *cursor < bytes.len() && bytes[*cursor].is_ascii_whitespace() {
                *cursor += 1;
            }
        }

        fn read_uint(bytes: &[u8], cursor: &mut usize, what: &str) -> Result<usize> {
            skip_ws(bytes, cursor);
            let start = *cursor;
            while *cursor < bytes.len() && bytes[*cursor].is_ascii_digit() {
                *cursor += 1;
            }
            if *cursor == start {
                return Err(Error::ImageFormat {
                    offset: start,
                    reason: format!("expected {what}"),
                });
            }
            let text = std::str::from_utf8(&bytes[start..*cursor]).expect("digits are ascii");
            text.parse::<usize>().map_err(|_| Error::ImageFormat {
                offset: start,
                reason: format!("{what} out of range"),
            })
        }

        if bytes.len() < 2 || &bytes[0..2] != b"P5" {
            return Err(Error::ImageFormat {
                offset: 0,
                reason: "missing P5 magic".into(),
            });
        }
        cursor = 2;
        let width = read_uint(bytes, &mut cursor, "width")?;
        let height = read_uint(bytes, &mut cursor, "height")?;
        let maxval_offset = {
            let mut c = cursor;
            skip_ws(bytes, &mut c);
            c
        };
        let maxval = read_uint(bytes, &mut cursor, "maxval")?;
        if maxval != 255 {
            return Err(Error::ImageFormat {
                offset: maxval_offset,
                reason: format!("maxval must be 255, got {maxval}"),
            });
        }
        if width == 0 || height == 0 {
            return Err(Error::ImageFormat {
                offset: 2,
                reason: format!("degenerate dimensions {width}x{height}"),
            });
        }
        // exactly one whitespace byte separates the header from the payload
        if cursor >= bytes.len() || !bytes[cursor].is_ascii_whitespace() {
            return Err(Error::ImageFormat {
                offset: cursor,
                reason: "expected whitespace before pixel data".into(),
            });
        }
        cursor += 1;
        let need = width * height;
        let have = bytes.len() - cursor;
        if have < need {
            return Err(Error::ImageFormat {
                offset: bytes.len(),
                reason: format!("truncated payload: need {need} bytes, have {have}"),
            });
        }
        let pixels = bytes[cursor..cursor + need]
            .iter()
            .map(|&b| b as f64 / 255.0)
            .collect();
        Ok(Raster {
            width,
            height,
            pixels,
        })
    }

    /// Encode as binary PGM (P5, maxval 255).
    pub fn save_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.pixels.iter().map(|p| (p * 255.0).round() as u8));
        out
    }

    /// Render as binary PPM (P6) with box borders drawn on top. Grayscale is
    /// replicated to RGB; out-of-bounds border pixels are clipped away.
    pub fn save_overlay(&self, boxes: &[(Rect, OverlayStyle)]) -> Vec<u8> {
        let w = self.width;
        let h = self.height;
        let mut rgb: Vec<u8> = Vec::with_capacity(w * h * 3);
        for p in &self.pixels {
            let v = (p * 255.0).round() as u8;
            rgb.extend_from_slice(&[v, v, v]);
        }
        let mut paint = |x: i64, y: i64, style: OverlayStyle, phase: i64| {
            if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
                return;
            }
            let color = match style {
                OverlayStyle::SolidRed => [255u8, 0, 0],
                OverlayStyle::DashedGray => {
                    // 2 px on, 2 px off along the border
                    if phase % 4 >= 2 {
                        return;
                    }
                    [128u8, 128, 128]
                }
            };
            let i = (y as usize * w + x as usize) * 3;
            rgb[i..i + 3].copy_from_slice(&color);
        };
        for (rect, style) in boxes {
            let x0 = rect.x0.round() as i64;
            let y0 = rect.y0.round() as i64;
            let x1 = (rect.x1.round() as i64).max(x0 + 1);
            let y1 = (rect.y1.round() as i64).max(y0 + 1);
            for x in x0..x1 {
                paint(x, y0, *style, x - x0);
                paint(x, y1 - 1, *style, x - x0);
            }
            for y in y0..y1 {
                paint(x0, y, *style, y - y0);
                paint(x1 - 1, y, *style, y - y0);
            }
        }
        let mut out = format!("P6\n{} {}\n255\n", w, h).into_bytes();
        out.extend_from_slice(&rgb);
        out
    }

    /// Copy out the intersection of `r` with the frame.
    pub fn crop(&self, r: &Rect) -> Result<Raster> {
        let inter = r.intersect(&self.frame()).ok_or(Error::EmptyIntersection)?;
        let x0 = inter.x0.floor().max(0.0) as usize;
        let y0 = inter.y0.floor().max(0.0) as usize;
        let x1 = (inter.x1.ceil() as usize).min(self.width);
        let y1 = (inter.y1.ceil() as usize).min(self.height);
        if x0 >= x1 || y0 >= y1 {
            return Err(Error::EmptyIntersection);
        }
        let (cw, ch) = (x1 - x0, y1 - y0);
        let mut pixels = Vec::with_capacity(cw * ch);
        for y in y0..y1 {
            pixels.extend_from_slice(&self.row(y)[x0..x1]);
        }
        Ok(Raster {
            width: cw,
            height: ch,
            pixels,
        })
    }

    /// Bilinear resize with corner-aligned sampling.
    pub fn resize(&self, new_w: usize, new_h: usize) -> Result<Raster> {
        if new_w == 0 || new_h == 0 {
            return Err(Error::Invalid("resize target must be at least 1x1".into()));
        }
        if new_w == self.width && new_h == self.height {
            return Ok(self.clone());
        }
        let sx = |j: usize| -> f64 {
            if new_w == 1 {
                0.0
            } else {
                j as f64 * (self.width - 1) as f64 / (new_w - 1) as f64
            }
        };
        let sy = |i: usize| -> f64 {
            if new_h == 1 {
                0.0
            } else {
                i as f64 * (self.height - 1) as f64 / (new_h - 1) as f64
            }
        };
        let mut pixels = Vec::with_capacity(new_w * new_h);
        for i in 0..new_h {
            let y = sy(i);
            let y0 = y.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let fy = y - y0 as f64;
            for j in 0..new_w {
                let x = sx(j);
                let x0 = x.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let fx = x - x0 as f64;
                let top = self.get(x0, y0) * (1.0 - fx) + self.get(x1, y0) * fx;
                let bot = self.get(x0, y1) * (1.0 - fx) + self.get(x1, y1) * fx;
                pixels.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
            }
        }
        Ok(Raster {
            width: new_w,
            height: new_h,
            pixels,
        })
    }

    /// Paste `src` with its top-left corner at (x, y); out-of-bounds parts of
    /// `src` are clipped.
    pub fn paste(&mut self, src: &Raster, x: usize, y: usize) {
        for sy in 0..src.height {
            let dy = y + sy;
            if dy >= self.height {
                break;
            }
            for sx in 0..src.width {
                let dx = x + sx;
                if dx >= self.width {
                    break;
                }
                self.pixels[dy * self.width + dx] = src.get(sx, sy);
            }
        }
    }

    /// Pointwise 1 - intensity.
    pub fn inverted(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            pixels: self.pixels.iter().map(|p| 1.0 - p).collect(),
        }
    }
}

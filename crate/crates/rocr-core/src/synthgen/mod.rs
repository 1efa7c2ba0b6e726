//! Deterministic synthetic receipts.
//!
//! Stands in for a real scanned-receipt corpus: white receipts with stacked
//! text lines (shop header, item rows, total), exact quad annotations by
//! construction, an optional dark canvas around the receipt to exercise
//! pre-processing, and a simulated handwriting style (vertical jitter plus
//! ink dropout) to train OCR verification. Generation is a pure function of
//! (seed, index).

pub mod dataset;
pub mod font;

use crate::error::Error;
use crate::raster::{Raster, Rect};
use crate::rng::Rng;
use crate::Result;

pub use dataset::{load_dataset, save_dataset, split_dataset, DatasetItem};

/// Rendering style of one text line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TextStyle {
    Printed,
    Handwriting,
}

/// One annotated text line: axis-aligned quad (clockwise from top-left),
/// transcript, style.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub quad: [i64; 8],
    pub transcript: String,
    pub style: TextStyle,
}

impl Annotation {
    /// The quad as a Rect (quads are axis-aligned in generated data).
    pub fn rect(&self) -> Rect {
        Rect::new(
            self.quad[0] as f64,
            self.quad[1] as f64,
            self.quad[4] as f64,
            self.quad[5] as f64,
        )
    }

    pub fn from_rect_i64(
        x0: i64,
        y0: i64,
        x1: i64,
        y1: i64,
        transcript: String,
        style: TextStyle,
    ) -> Self {
        Annotation {
            quad: [x0, y0, x1, y0, x1, y1, x0, y1],
            transcript,
            style,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthConfig {
    pub seed: u64,
    /// Receipt dimensions, inclusive ranges.
    pub width_range: (usize, usize),
    pub height_range: (usize, usize),
    /// Text lines per receipt (header and total included), inclusive.
    pub lines_range: (usize, usize),
    /// Integer glyph scale, inclusive.
    pub scale_range: (usize, usize),
    /// Fraction of lines rendered in handwriting style.
    pub handwriting_fraction: f64,
    /// When set, the receipt is pasted at a seeded position onto a dark
    /// canvas of these dimensions (intensity 0.1).
    pub canvas: Option<(usize, usize)>,
    /// Gaussian pixel noise sigma.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            width_range: (96, 128),
            height_range: (104, 152),
            lines_range: (4, 7),
            scale_range: (2, 2),
            handwriting_fraction: 0.0,
            canvas: None,
            noise: 0.015,
        }
    }
}

const LINE_MARGIN: usize = 2;

/// Width and height of a rendered line before any pasting.
pub fn line_dims(text: &str, scale: usize) -> (usize, usize) {
    let n = text.chars().count();
    let w = 2 * LINE_MARGIN + n * font::GLYPH_W * scale + n.saturating_sub(1) * scale;
    let h = 2 * LINE_MARGIN + font::GLYPH_H * scale;
    (w, h)
}

/// Render one text line: 5x7 glyphs at integer scale, a one-column gap
/// between glyphs, 2 px margin, ink 0.0 on paper 1.0.
///
/// Handwriting adds a per-column vertical sinusoidal shift (amplitude
/// 2*scale) and drops each ink pixel with probability 0.1, both driven by
/// `seed`; dimensions are identical to the printed rendering.
pub fn render_text_line(text: &str, scale: usize, style: TextStyle, seed: u64) -> Result<Raster> {
    if text.is_empty() {
        return Err(Error::Invalid("cannot render an empty text line".into()));
    }
    if scale == 0 {
        return Err(Error::Invalid("glyph scale must be at least 1".into()));
    }
    if let Some(bad) = text.chars().find(|c| font::glyph(*c).is_none()) {
        return Err(Error::UnsupportedChar(bad));
    }
    let (w, h) = line_dims(text, scale);
    let mut ink = vec![false; w * h];
    let mut x_cursor = LINE_MARGIN;
    for c in text.chars() {
        let rows = font::glyph(c).expect("checked above");
        for (gy, row) in rows.iter().enumerate() {
            for gx in 0..font::GLYPH_W {
                if row & (1 << (font::GLYPH_W - 1 - gx)) != 0 {
                    for dy in 0..scale {
                        for dx in 0..scale {
                            let px = x_cursor + gx * scale + dx;
                            let py = LINE_MARGIN + gy * scale + dy;
                            ink[py * w + px] = true;
                        }
                    }
                }
            }
        }
        x_cursor += (font::GLYPH_W + 1) * scale;
    }

    if style == TextStyle::Handwriting {
        let mut rng = Rng::new(seed);
        let phase = rng.range_f64(0.0, std::f64::consts::TAU);
        let wavelength = scale as f64 * rng.range_f64(8.0, 16.0);
        let amplitude = 2.0 * scale as f64;
        let mut jittered = vec![false; w * h];
        for x in 0..w {
            let shift = (amplitude
                * (std::f64::consts::TAU * x as f64 / wavelength + phase).sin())
            .round() as i64;
            for y in 0..h {
                if ink[y * w + x] {
                    let ny = y as i64 + shift;
                    if ny >= 0 && ny < h as i64 {
                        jittered[ny as usize * w + x] = true;
                    }
                }
            }
        }
        // ink dropout at rate 0.1, row-major scan order
        for cell in jittered.iter_mut() {
            if *cell && rng.next_f64() < 0.1 {
                *cell = false;
            }
        }
        ink = jittered;
    }

    let pixels = ink.iter().map(|&i| if i { 0.0 } else { 1.0 }).collect();
    Raster::new(w, h, pixels)
}

const SHOP_WORDS: &[&str] = &[
    "MART", "STORE", "KIOSK", "CAFE", "DELI", "MARKET", "BAKERY", "GRILL",
];
const ITEM_WORDS: &[&str] = &[
    "MILK", "BREAD", "EGGS", "RICE", "SOAP", "TEA", "COFFEE", "JUICE", "PASTA", "SUGAR", "SALT",
    "BUTTER", "CHEESE", "APPLE", "ONION",
];

fn pick<'a>(rng: &mut Rng, words: &[&'a str]) -> &'a str {
    words[rng.range_usize(0, words.len() - 1)]
}

/// Compose a line of receipt text that fits within `max_chars`.
fn compose_line(rng: &mut Rng, kind: usize, max_chars: usize) -> String {
    let price = |rng: &mut Rng| format!("{}.{:02}", rng.range_usize(0, 19), rng.range_usize(0, 99));
    let text = match kind {
        0 => format!("{} {}", pick(rng, SHOP_WORDS), rng.range_usize(1, 99)),
        1 => format!("TOTAL ${}", price(rng)),
        _ => {
            let name = pick(rng, ITEM_WORDS);
            format!("{} {} {}", name, rng.range_usize(1, 9), price(rng))
        }
    };
    if text.chars().count() > max_chars {
        text.chars().take(max_chars.max(1)).collect()
    } else {
        text
    }
}

/// Generate receipt `index`: a white receipt with stacked left-aligned text
/// lines and exact annotations, optionally pasted onto a dark canvas, with
/// light Gaussian noise. Fully determined by (cfg.seed, index).
pub fn generate_receipt(cfg: &SynthConfig, index: u64) -> Result<(Raster, Vec<Annotation>)> {
    let (image, annotations, _) = generate_receipt_with_paste(cfg, index)?;
    Ok((image, annotations))
}

/// [`generate_receipt`] plus the receipt's paste rect on the canvas (None
/// when no canvas is configured), for tests and the pre-processing checks.
pub fn generate_receipt_with_paste(
    cfg: &SynthConfig,
    index: u64,
) -> Result<(Raster, Vec<Annotation>, Option<Rect>)> {
    let mut rng = Rng::derive(cfg.seed, index);
    let rw = rng.range_usize(cfg.width_range.0, cfg.width_range.1);
    let rh = rng.range_usize(cfg.height_range.0, cfg.height_range.1);
    let scale = rng.range_usize(cfg.scale_range.0, cfg.scale_range.1);
    let want_lines = rng.range_usize(cfg.lines_range.0, cfg.lines_range.1);

    let x_pad = 4usize;
    // widest text that fits: 2*LINE_MARGIN + n*(5s) + (n-1)*s <= rw - 2*x_pad
    let usable = rw.saturating_sub(2 * x_pad + 2 * LINE_MARGIN);
    let max_chars = ((usable + scale) / ((font::GLYPH_W + 1) * scale)).max(3);

    let mut receipt = Raster::filled(rw, rh, 1.0)?;
    let mut annotations = Vec::new();
    let mut y_cursor = 4usize;
    for li in 0..want_lines {
        let kind = if li == 0 {
            0
        } else if li == want_lines - 1 {
            1
        } else {
            2
        };
        let text = compose_line(&mut rng, kind, max_chars);
        let style = if rng.next_f64() < cfg.handwriting_fraction {
            TextStyle::Handwriting
        } else {
            TextStyle::Printed
        };
        let line_seed = rng.next_u64();
        let gap = rng.range_usize(2, 6);
        let line = render_text_line(&text, scale, style, line_seed)?;
        if y_cursor + line.height() + 4 > rh {
            break;
        }
        receipt.paste(&line, x_pad, y_cursor);
        annotations.push(Annotation::from_rect_i64(
            x_pad as i64,
            y_cursor as i64,
            (x_pad + line.width()) as i64,
            (y_cursor + line.height()) as i64,
            text,
            style,
        ));
        y_cursor += line.height() + gap;
    }

    let (mut image, paste) = match cfg.canvas {
        Some((cw, ch)) => {
            if cw < rw || ch < rh {
                return Err(Error::Config(format!(
                    "canvas {cw}x{ch} smaller than receipt {rw}x{rh}"
                )));
            }
            let ox = rng.range_usize(0, cw - rw);
            let oy = rng.range_usize(0, ch - rh);
            let mut canvas = Raster::filled(cw, ch, 0.1)?;
            canvas.paste(&receipt, ox, oy);
            for a in &mut annotations {
                for (i, v) in a.quad.iter_mut().enumerate() {
                    *v += if i % 2 == 0 { ox as i64 } else { oy as i64 };
                }
            }
            let paste = Rect::new(ox as f64, oy as f64, (ox + rw) as f64, (oy + rh) as f64);
            (canvas, Some(paste))
        }
        None => (receipt, None),
    };

    if cfg.noise > 0.0 {
        let w = image.width();
        let h = image.height();
        for y in 0..h {
            for x in 0..w {
                let v = image.get(x, y) + cfg.noise * rng.next_gaussian();
                image.set(x, y, v);
            }
        }
    }
    // snap to the 8-bit grid so saved files reload pixel-exactly
    Ok((image.quantized(), annotations, paste))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_ab_layout_arithmetic() {
        let img = render_text_line("AB", 1, TextStyle::Printed, 0).unwrap();
        assert_eq!((img.width(), img.height()), (15, 11));
    }

    #[test]
    fn render_is_deterministic() {
        let a = render_text_line("TOTAL $9.00", 2, TextStyle::Handwriting, 77).unwrap();
        let b = render_text_line("TOTAL $9.00", 2, TextStyle::Handwriting, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn handwriting_differs_but_same_dims() {
        let p = render_text_line("MILK 2", 2, TextStyle::Printed, 5).unwrap();
        let h = render_text_line("MILK 2", 2, TextStyle::Handwriting, 5).unwrap();
        assert_eq!((p.width(), p.height()), (h.width(), h.height()));
        assert_ne!(p.pixels(), h.pixels());
    }

    #[test]
    fn render_rejects_unsupported() {
        match render_text_line("abc", 1, TextStyle::Printed, 0) {
            Err(Error::UnsupportedChar('a')) => {}
            other => panic!("expected UnsupportedChar, got {other:?}"),
        }
    }

    #[test]
    fn generate_no_handwriting_when_fraction_zero() {
        let cfg = SynthConfig::default();
        for i in 0..5 {
            let (_, anns) = generate_receipt(&cfg, i).unwrap();
            assert!(anns.iter().all(|a| a.style == TextStyle::Printed));
        }
    }

    #[test]
    fn generate_is_pure_in_seed_and_index() {
        let cfg = SynthConfig {
            handwriting_fraction: 0.3,
            ..SynthConfig::default()
        };
        let (img1, ann1) = generate_receipt(&cfg, 9).unwrap();
        let (img2, ann2) = generate_receipt(&cfg, 9).unwrap();
        assert_eq!(img1, img2);
        assert_eq!(ann1, ann2);
    }

    #[test]
    fn quads_lie_within_image() {
        let cfg = SynthConfig {
            canvas: Some((256, 320)),
            ..SynthConfig::default()
        };
        for i in 0..5 {
            let (img, anns) = generate_receipt(&cfg, i).unwrap();
            assert!(!anns.is_empty());
            for a in &anns {
                let r = a.rect();
                assert!(r.area() > 0.0);
                assert!(r.x0 >= 0.0 && r.y0 >= 0.0);
                assert!(r.x1 <= img.width() as f64 && r.y1 <= img.height() as f64);
            }
        }
    }

    #[test]
    fn quads_inside_paste_region_when_canvased() {
        let cfg = SynthConfig {
            canvas: Some((300, 400)),
            ..SynthConfig::default()
        };
        for i in 0..5 {
            let (_, anns, paste) = generate_receipt_with_paste(&cfg, i).unwrap();
            let paste = paste.unwrap();
            for a in &anns {
                let r = a.rect();
                assert!(
                    r.x0 >= paste.x0 && r.y0 >= paste.y0 && r.x1 <= paste.x1 && r.y1 <= paste.y1,
                    "annotation outside paste region"
                );
            }
        }
    }

    #[test]
    fn annotation_count_equals_rendered_lines() {
        let cfg = SynthConfig::default();
        let (_, anns) = generate_receipt(&cfg, 0).unwrap();
        assert!((cfg.lines_range.0..=cfg.lines_range.1).contains(&anns.len()));
    }
}

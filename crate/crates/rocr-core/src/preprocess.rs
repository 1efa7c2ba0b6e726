//! Histogram-based receipt area extraction.
//!
//! A receipt scanned on a dark bed occupies a small part of the frame; the
//! detector works much better when the receipt fills its input. Paper pixels
//! are counted per column and per row, and the longest sufficiently tall run
//! along each axis becomes the receipt span.

use crate::error::Error;
use crate::raster::{Raster, Rect};
use crate::Result;

/// Which intensities count as paper.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PaperPolarity {
    /// White receipt on a dark background: paper = intensity > ink_threshold.
    BrightPaper,
    /// Inverted scans: paper = intensity < ink_threshold.
    DarkPaper,
}

#[derive(Debug, Clone, Copy)]
pub struct PreprocessConfig {
    pub polarity: PaperPolarity,
    /// Intensity cut between ink and paper, in (0,1).
    pub ink_threshold: f64,
    /// A profile bin is "on" when above this fraction of the per-axis maximum.
    pub run_threshold: f64,
    /// Pixels added around the detected area.
    pub margin: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            polarity: PaperPolarity::BrightPaper,
            ink_threshold: 0.6,
            run_threshold: 0.05,
            margin: 8,
        }
    }
}

/// Histogram axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
}

/// Paper-pixel count per column (Axis::X) or per row (Axis::Y).
pub fn axis_profile(img: &Raster, axis: Axis, cfg: &PreprocessConfig) -> Vec<usize> {
    let is_paper = |p: f64| match cfg.polarity {
        PaperPolarity::BrightPaper => p > cfg.ink_threshold,
        PaperPolarity::DarkPaper => p < cfg.ink_threshold,
    };
    match axis {
        Axis::X => {
            let mut counts = vec![0usize; img.width()];
            for y in 0..img.height() {
                for (x, p) in img.row(y).iter().enumerate() {
                    if is_paper(*p) {
                        counts[x] += 1;
                    }
                }
            }
            counts
        }
        Axis::Y => (0..img.height())
            .map(|y| img.row(y).iter().filter(|p| is_paper(**p)).count())
            .collect(),
    }
}

/// Longest contiguous run of bins above run_threshold * max(profile),
/// half-open; ties broken by the smallest start.
pub fn longest_run(profile: &[usize], cfg: &PreprocessConfig) -> Result<(usize, usize)> {
    let max = *profile.iter().max().unwrap_or(&0);
    if max == 0 {
        return Err(Error::NoReceipt);
    }
    let t = cfg.run_threshold * max as f64;
    let mut best: Option<(usize, usize)> = None;
    let mut start: Option<usize> = None;
    for i in 0..=profile.len() {
        let on = i < profile.len() && profile[i] as f64 > t;
        match (on, start) {
            (true, None) => start = Some(i),
            (false, Some(s)) => {
                if best.map_or(true, |(bs, be)| i - s > be - bs) {
                    best = Some((s, i));
                }
                start = None;
            }
            _ => {}
        }
    }
    best.ok_or(Error::NoReceipt)
}

/// Receipt area: per-axis longest runs expanded by the margin and clipped to
/// the frame. The crop itself is the caller's choice.
pub fn extract_receipt_region(img: &Raster, cfg: &PreprocessConfig) -> Result<Rect> {
    let (x0, x1) = longest_run(&axis_profile(img, Axis::X, cfg), cfg)?;
    let (y0, y1) = longest_run(&axis_profile(img, Axis::Y, cfg), cfg)?;
    let m = cfg.margin;
    Ok(Rect::new(
        x0.saturating_sub(m) as f64,
        y0.saturating_sub(m) as f64,
        (x1 + m).min(img.width()) as f64,
        (y1 + m).min(img.height()) as f64,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PreprocessConfig {
        PreprocessConfig {
            margin: 0,
            ..PreprocessConfig::default()
        }
    }

    #[test]
    fn all_dark_profile_is_zero() {
        let img = Raster::filled(4, 3, 0.1).unwrap();
        assert_eq!(axis_profile(&img, Axis::X, &cfg()), vec![0, 0, 0, 0]);
        assert_eq!(axis_profile(&img, Axis::Y, &cfg()), vec![0, 0, 0]);
    }

    #[test]
    fn column_bands_counted() {
        // 3x2 image, columns (1.0, 0.0, 1.0)
        let img = Raster::new(3, 2, vec![1.0, 0.0, 1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(axis_profile(&img, Axis::X, &cfg()), vec![2, 0, 2]);
    }

    #[test]
    fn checkerboard_counts_by_hand() {
        let img = Raster::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(axis_profile(&img, Axis::X, &cfg()), vec![1, 1]);
        assert_eq!(axis_profile(&img, Axis::Y, &cfg()), vec![1, 1]);
    }

    #[test]
    fn dark_paper_polarity_inverts() {
        let img = Raster::new(2, 1, vec![0.1, 0.9]).unwrap();
        let c = PreprocessConfig {
            polarity: PaperPolarity::DarkPaper,
            ..cfg()
        };
        assert_eq!(axis_profile(&img, Axis::X, &c), vec![1, 0]);
    }

    #[test]
    fn longest_run_simple() {
        assert_eq!(longest_run(&[0, 5, 5, 5, 0], &cfg()).unwrap(), (1, 4));
    }

    #[test]
    fn longest_run_picks_longer() {
        // run enumeration oracle: runs (0,1) and (2,4); the longer wins
        assert_eq!(longest_run(&[5, 0, 5, 5], &cfg()).unwrap(), (2, 4));
    }

    #[test]
    fn longest_run_tie_breaks_to_smallest_start() {
        assert_eq!(longest_run(&[5, 5, 0, 5, 5], &cfg()).unwrap(), (0, 2));
    }

    #[test]
    fn longest_run_empty_is_no_receipt() {
        assert!(matches!(
            longest_run(&[0, 0, 0], &cfg()),
            Err(Error::NoReceipt)
        ));
    }

    #[test]
    fn run_threshold_monotonicity() {
        // a larger threshold never yields a wider run
        let profile = [1usize, 9, 9, 3, 9, 9, 9, 2, 0];
        let mut prev_width = usize::MAX;
        for t in [0.01, 0.1, 0.25, 0.5, 0.8] {
            let c = PreprocessConfig {
                run_threshold: t,
                ..cfg()
            };
            let (s, e) = longest_run(&profile, &c).unwrap();
            assert!(e - s <= prev_width, "threshold {t} widened the run");
            prev_width = e - s;
        }
    }

    #[test]
    fn extract_bright_block() {
        let mut img = Raster::filled(100, 100, 0.0).unwrap();
        for y in 10..80 {
            for x in 20..60 {
                img.set(x, y, 1.0);
            }
        }
        let r = extract_receipt_region(&img, &cfg()).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (20.0, 10.0, 60.0, 80.0));
    }

    #[test]
    fn extract_full_paper_frame() {
        let img = Raster::filled(17, 9, 1.0).unwrap();
        let r = extract_receipt_region(&img, &cfg()).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (0.0, 0.0, 17.0, 9.0));
    }

    #[test]
    fn extract_prefers_wider_band() {
        // run enumeration oracle: bands of width 10 and 30; 30 wins
        let mut img = Raster::filled(100, 20, 0.0).unwrap();
        for y in 0..20 {
            for x in 5..15 {
                img.set(x, y, 1.0);
            }
            for x in 40..70 {
                img.set(x, y, 1.0);
            }
        }
        let r = extract_receipt_region(&img, &cfg()).unwrap();
        assert_eq!((r.x0, r.x1), (40.0, 70.0));
    }

    #[test]
    fn extract_margin_clips_to_frame() {
        let mut img = Raster::filled(30, 30, 0.0).unwrap();
        for y in 2..28 {
            for x in 2..28 {
                img.set(x, y, 1.0);
            }
        }
        let c = PreprocessConfig {
            margin: 8,
            ..PreprocessConfig::default()
        };
        let r = extract_receipt_region(&img, &c).unwrap();
        assert_eq!((r.x0, r.y0, r.x1, r.y1), (0.0, 0.0, 30.0, 30.0));
    }

    #[test]
    fn extract_idempotent_on_crop() {
        let mut img = Raster::filled(60, 40, 0.05).unwrap();
        for y in 12..30 {
            for x in 9..43 {
                img.set(x, y, 0.95);
            }
        }
        let r = extract_receipt_region(&img, &cfg()).unwrap();
        let cropped = img.crop(&r).unwrap();
        let r2 = extract_receipt_region(&cropped, &cfg()).unwrap();
        assert_eq!(
            (r2.x0, r2.y0, r2.x1, r2.y1),
            (0.0, 0.0, cropped.width() as f64, cropped.height() as f64)
        );
    }
}

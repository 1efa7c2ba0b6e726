//! Detection and end-to-end evaluation.
//!
//! Detection is scored with a tightness-aware IoU: each one-to-one box match
//! contributes `iou * completeness` to recall and `iou * compactness` to
//! precision, so loose or partial boxes earn less than their count. Word-level
//! F1 matches predicted lines to ground-truth lines by IoU first, then counts
//! exact token hits against each matched line's token multiset.

use crate::raster::Rect;

/// One matched (ground truth, detection) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MatchRecord {
    pub gt: usize,
    pub det: usize,
    pub iou: f64,
    /// iou * |g ∩ d| / |g| — how completely the GT box is covered.
    pub match_gt: f64,
    /// iou * |g ∩ d| / |d| — how compact the detection is.
    pub match_dt: f64,
}

/// Evaluation summary; `hmean` is harmonic (F1 for word scoring).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub recall: f64,
    pub precision: f64,
    pub hmean: f64,
    pub num_gt: usize,
    pub num_dt: usize,
    pub records: Vec<MatchRecord>,
}

/// Intersection over union of two rects, in [0, 1].
pub fn iou(a: &Rect, b: &Rect) -> f64 {
    match a.intersect(b) {
        Some(i) => {
            let inter = i.area();
            inter / (a.area() + b.area() - inter)
        }
        None => 0.0,
    }
}

/// 2rp/(r+p); 0 when both are 0. Unit-agnostic (fractions or percent).
pub fn harmonic_mean(recall: f64, precision: f64) -> f64 {
    if recall + precision <= 0.0 {
        0.0
    } else {
        2.0 * recall * precision / (recall + precision)
    }
}

/// Greedy one-to-one matching of detections to ground truth.
///
/// Candidate pairs with iou >= threshold are sorted by iou descending (ties:
/// lower gt index, then lower det index) and taken greedily, so the result
/// does not depend on input order beyond the indices themselves.
pub fn match_boxes(gt: &[Rect], det: &[Rect], iou_threshold: f64) -> Vec<MatchRecord> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (gi, g) in gt.iter().enumerate() {
        for (di, d) in det.iter().enumerate() {
            let v = iou(g, d);
            if v >= iou_threshold {
                candidates.push((v, gi, di));
            }
        }
    }
    candidates.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("iou is finite")
            .then(a.1.cmp(&b.1))
            .then(a.2.cmp(&b.2))
    });
    let mut gt_used = vec![false; gt.len()];
    let mut det_used = vec![false; det.len()];
    let mut records = Vec::new();
    for (v, gi, di) in candidates {
        if gt_used[gi] || det_used[di] {
            continue;
        }
        gt_used[gi] = true;
        det_used[di] = true;
        let inter = gt[gi].intersect(&det[di]).map_or(0.0, |r| r.area());
        records.push(MatchRecord {
            gt: gi,
            det: di,
            iou: v,
            match_gt: v * inter / gt[gi].area(),
            match_dt: v * inter / det[di].area(),
        });
    }
    records
}

/// Tightness-aware detection report.
///
/// recall = sum(match_gt)/|gt|, precision = sum(match_dt)/|det|. Empty-side
/// conventions: an empty GT set is fully recalled (recall 1) and an empty
/// detection set is fully precise (precision 1).
pub fn tiou_report(gt: &[Rect], det: &[Rect], iou_threshold: f64) -> EvalReport {
    let records = match_boxes(gt, det, iou_threshold);
    let sum_gt: f64 = records.iter().map(|r| r.match_gt).sum();
    let sum_dt: f64 = records.iter().map(|r| r.match_dt).sum();
    let recall = if gt.is_empty() {
        1.0
    } else {
        sum_gt / gt.len() as f64
    };
    let precision = if det.is_empty() {
        1.0
    } else {
        sum_dt / det.len() as f64
    };
    EvalReport {
        recall,
        precision,
        hmean: harmonic_mean(recall, precision),
        num_gt: gt.len(),
        num_dt: det.len(),
        records,
    }
}

/// Word-level end-to-end score.
///
/// Lines are box-matched greedily at `iou_threshold`; a predicted word counts
/// as correct iff its line matched and the word is still available in that GT
/// line's token multiset (exact, case-sensitive by default). num_gt/num_dt
/// are word counts; per matched line a record carries the word fractions.
pub fn word_f1(
    gt_items: &[(Rect, String)],
    pred_items: &[(Rect, String)],
    iou_threshold: f64,
    case_sensitive: bool,
) -> EvalReport {
    let tokens = |s: &String| -> Vec<String> {
        s.split_whitespace()
            .map(|t| {
                if case_sensitive {
                    t.to_string()
                } else {
                    t.to_uppercase()
                }
            })
            .collect()
    };
    let gt_rects: Vec<Rect> = gt_items.iter().map(|(r, _)| *r).collect();
    let pred_rects: Vec<Rect> = pred_items.iter().map(|(r, _)| *r).collect();
    let matches = match_boxes(&gt_rects, &pred_rects, iou_threshold);

    let total_gt_words: usize = gt_items.iter().map(|(_, t)| tokens(t).len()).sum();
    let total_pred_words: usize = pred_items.iter().map(|(_, t)| tokens(t).len()).sum();

    let mut correct_total = 0usize;
    let mut records = Vec::new();
    for m in &matches {
        let gt_tokens = tokens(&gt_items[m.gt].1);
        let pred_tokens = tokens(&pred_items[m.det].1);
        let mut available: Vec<Option<&String>> = gt_tokens.iter().map(Some).collect();
        let mut correct = 0usize;
        for w in &pred_tokens {
            if let Some(slot) = available
                .iter_mut()
                .find(|s| s.map_or(false, |g| g == w))
            {
                *slot = None;
                correct += 1;
            }
        }
        correct_total += correct;
        records.push(MatchRecord {
            gt: m.gt,
            det: m.det,
            iou: m.iou,
            match_gt: if gt_tokens.is_empty() {
                0.0
            } else {
                correct as f64 / gt_tokens.len() as f64
            },
            match_dt: if pred_tokens.is_empty() {
                0.0
            } else {
                correct as f64 / pred_tokens.len() as f64
            },
        });
    }
    let recall = if total_gt_words == 0 {
        1.0
    } else {
        correct_total as f64 / total_gt_words as f64
    };
    let precision = if total_pred_words == 0 {
        1.0
    } else {
        correct_total as f64 / total_pred_words as f64
    };
    EvalReport {
        recall,
        precision,
        hmean: harmonic_mean(recall, precision),
        num_gt: total_gt_words,
        num_dt: total_pred_words,
        records,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(x0: f64, y0: f64, x1: f64, y1: f64) -> Rect {
        Rect::new(x0, y0, x1, y1)
    }

    #[test]
    fn iou_identical_disjoint_partial() {
        let a = r(0.0, 0.0, 2.0, 2.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &r(5.0, 5.0, 6.0, 6.0)), 0.0);
        // inter 2, union 6 -> 1/3
        let b = r(1.0, 0.0, 3.0, 2.0);
        assert!((iou(&a, &b) - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn harmonic_mean_paper_rows() {
        // detection and end-to-end tables, percent units
        let rows = [
            (45.2, 72.9, 55.8),
            (55.9, 75.1, 64.1),
            (53.9, 77.5, 63.6),
            (87.6, 84.7, 86.1),
            (60.8, 67.4, 63.9),
            (72.3, 69.5, 70.9),
            (71.3, 72.5, 71.9),
        ];
        for (rec, prec, hm) in rows {
            assert!(
                (harmonic_mean(rec, prec) - hm).abs() <= 0.05,
                "({rec}, {prec}) -> {} expected {hm}",
                harmonic_mean(rec, prec)
            );
        }
    }

    #[test]
    fn harmonic_mean_identity_and_zero() {
        assert_eq!(harmonic_mean(0.0, 0.0), 0.0);
        for x in [0.1, 0.5, 0.93] {
            assert!((harmonic_mean(x, x) - x).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_mean_symmetric_and_bounded() {
        let cases = [(0.2, 0.9), (0.5, 0.7), (0.0, 0.4)];
        for (a, b) in cases {
            let h = harmonic_mean(a, b);
            assert!((h - harmonic_mean(b, a)).abs() < 1e-15);
            assert!(h <= a.max(b) + 1e-15);
            assert!(h >= 0.0);
            if a > 0.0 && b > 0.0 {
                assert!(h >= a.min(b) * 1e-9); // positive
                assert!(h <= a.max(b));
                assert!(h >= 2.0 * a * b / (a + b) - 1e-15);
            }
        }
        // min <= hmean <= max when both positive
        let h = harmonic_mean(0.3, 0.6);
        assert!(h >= 0.3 && h <= 0.6);
    }

    #[test]
    fn match_boxes_identical_sets() {
        let boxes = vec![r(0.0, 0.0, 4.0, 2.0), r(0.0, 5.0, 4.0, 7.0)];
        let m = match_boxes(&boxes, &boxes, 0.5);
        assert_eq!(m.len(), 2);
        for rec in &m {
            assert_eq!(rec.gt, rec.det);
            assert_eq!(rec.iou, 1.0);
            assert_eq!(rec.match_gt, 1.0);
            assert_eq!(rec.match_dt, 1.0);
        }
    }

    #[test]
    fn match_boxes_disjoint_sets_empty() {
        let gt = vec![r(0.0, 0.0, 1.0, 1.0)];
        let det = vec![r(10.0, 10.0, 11.0, 11.0)];
        assert!(match_boxes(&gt, &det, 0.5).is_empty());
    }

    #[test]
    fn match_boxes_half_box_scores() {
        // area arithmetic: iou 0.5, match_gt 0.25, match_dt 0.5
        let gt = vec![r(0.0, 0.0, 10.0, 10.0)];
        let det = vec![r(0.0, 0.0, 10.0, 5.0)];
        let m = match_boxes(&gt, &det, 0.5);
        assert_eq!(m.len(), 1);
        assert!((m[0].iou - 0.5).abs() < 1e-12);
        assert!((m[0].match_gt - 0.25).abs() < 1e-12);
        assert!((m[0].match_dt - 0.5).abs() < 1e-12);
    }

    #[test]
    fn match_boxes_is_one_to_one() {
        let gt = vec![r(0.0, 0.0, 10.0, 10.0), r(1.0, 1.0, 11.0, 11.0)];
        let det = vec![r(0.0, 0.0, 10.0, 10.0)];
        let m = match_boxes(&gt, &det, 0.1);
        assert_eq!(m.len(), 1);
        assert_eq!((m[0].gt, m[0].det), (0, 0));
    }

    #[test]
    fn tiou_perfect_detection() {
        let boxes = vec![r(0.0, 0.0, 4.0, 2.0), r(0.0, 5.0, 4.0, 7.0)];
        let rep = tiou_report(&boxes, &boxes, 0.5);
        assert_eq!((rep.recall, rep.precision, rep.hmean), (1.0, 1.0, 1.0));
    }

    #[test]
    fn tiou_half_box_report() {
        let gt = vec![r(0.0, 0.0, 10.0, 10.0)];
        let det = vec![r(0.0, 0.0, 10.0, 5.0)];
        let rep = tiou_report(&gt, &det, 0.5);
        assert!((rep.recall - 0.25).abs() < 1e-12);
        assert!((rep.precision - 0.5).abs() < 1e-12);
        assert!((rep.hmean - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn tiou_empty_conventions() {
        let gt = vec![r(0.0, 0.0, 1.0, 1.0)];
        let none: Vec<Rect> = Vec::new();
        let rep = tiou_report(&gt, &none, 0.5);
        assert_eq!((rep.recall, rep.precision, rep.hmean), (0.0, 1.0, 0.0));
        let rep2 = tiou_report(&none, &none, 0.5);
        assert_eq!((rep2.recall, rep2.precision, rep2.hmean), (1.0, 1.0, 1.0));
        let rep3 = tiou_report(&none, &gt, 0.5);
        assert_eq!((rep3.recall, rep3.precision), (1.0, 0.0));
    }

    #[test]
    fn tiou_never_exceeds_plain_matching() {
        let gt = vec![r(0.0, 0.0, 10.0, 10.0), r(20.0, 0.0, 30.0, 8.0)];
        let det = vec![r(1.0, 0.0, 10.0, 9.0), r(20.0, 0.0, 31.0, 8.0)];
        let rep = tiou_report(&gt, &det, 0.5);
        let plain_recall = rep.records.len() as f64 / gt.len() as f64;
        let plain_precision = rep.records.len() as f64 / det.len() as f64;
        assert!(rep.recall <= plain_recall + 1e-12);
        assert!(rep.precision <= plain_precision + 1e-12);
    }

    #[test]
    fn word_f1_identical() {
        let items = vec![
            (r(0.0, 0.0, 50.0, 10.0), "TOTAL 5.00".to_string()),
            (r(0.0, 20.0, 50.0, 30.0), "MILK 2 1.50".to_string()),
        ];
        let rep = word_f1(&items, &items, 0.5, true);
        assert_eq!((rep.recall, rep.precision, rep.hmean), (1.0, 1.0, 1.0));
        assert_eq!(rep.num_gt, 5);
    }

    #[test]
    fn word_f1_partial_line() {
        // token counting: correct 1, precision 1, recall 0.5, F1 2/3
        let gt = vec![(r(0.0, 0.0, 50.0, 10.0), "TOTAL 5.00".to_string())];
        let pred = vec![(r(0.0, 0.0, 50.0, 10.0), "TOTAL".to_string())];
        let rep = word_f1(&gt, &pred, 0.5, true);
        assert_eq!(rep.precision, 1.0);
        assert_eq!(rep.recall, 0.5);
        assert!((rep.hmean - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn word_f1_no_predictions() {
        let gt = vec![(r(0.0, 0.0, 50.0, 10.0), "TOTAL 5.00".to_string())];
        let rep = word_f1(&gt, &[], 0.5, true);
        assert_eq!(rep.recall, 0.0);
        assert_eq!(rep.hmean, 0.0);
    }

    #[test]
    fn word_f1_multiset_consumption() {
        let gt = vec![(r(0.0, 0.0, 50.0, 10.0), "A A B".to_string())];
        let pred = vec![(r(0.0, 0.0, 50.0, 10.0), "A A A B".to_string())];
        let rep = word_f1(&gt, &pred, 0.5, true);
        // three of four predicted words consumable
        assert!((rep.precision - 0.75).abs() < 1e-12);
        assert_eq!(rep.recall, 1.0);
    }

    #[test]
    fn word_f1_case_sensitivity_flag() {
        let gt = vec![(r(0.0, 0.0, 50.0, 10.0), "Total".to_string())];
        let pred = vec![(r(0.0, 0.0, 50.0, 10.0), "TOTAL".to_string())];
        assert_eq!(word_f1(&gt, &pred, 0.5, true).recall, 0.0);
        assert_eq!(word_f1(&gt, &pred, 0.5, false).recall, 1.0);
    }

    #[test]
    fn word_f1_duplicating_predictions_halves_precision() {
        let gt = vec![
            (r(0.0, 0.0, 50.0, 10.0), "TOTAL 5.00".to_string()),
            (r(0.0, 20.0, 50.0, 30.0), "MILK 1.50".to_string()),
        ];
        let pred = gt.clone();
        let mut doubled = pred.clone();
        doubled.extend(pred.iter().cloned());
        let base = word_f1(&gt, &pred, 0.5, true);
        let dup = word_f1(&gt, &doubled, 0.5, true);
        assert!((dup.precision - base.precision / 2.0).abs() < 1e-9);
        assert!((dup.recall - base.recall).abs() < 1e-12);
    }
}

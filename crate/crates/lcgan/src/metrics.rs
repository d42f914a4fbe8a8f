//! Segmentation overlap metrics.

use crate::error::{Error, Result};
use crate::image::MaskImage;

/// Overlap between a predicted and a reference mask.
///
/// `iou` is intersection over union, `dsc` the Dice coefficient
/// 2|A∩B|/(|A|+|B|), both computed independently from the raw counts.
/// When both masks are empty there is nothing to miss; both scores are 1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SegScore {
    pub iou: f64,
    pub dsc: f64,
}

impl SegScore {
    pub const fn perfect() -> Self {
        SegScore { iou: 1.0, dsc: 1.0 }
    }
}

/// Scores `pred` against `truth` over the foreground class.
pub fn score(pred: &MaskImage, truth: &MaskImage) -> Result<SegScore> {
    if pred.width != truth.width || pred.height != truth.height {
        return Err(Error::InvalidArgument(format!(
            "mask size mismatch: pred {}x{}, truth {}x{}",
            pred.width, pred.height, truth.width, truth.height
        )));
    }
    let mut intersection = 0u64;
    let mut pred_area = 0u64;
    let mut truth_area = 0u64;
    for (&p, &t) in pred.labels.iter().zip(&truth.labels) {
        let (p, t) = (u64::from(p != 0), u64::from(t != 0));
        intersection += p & t;
        pred_area += p;
        truth_area += t;
    }
    let union = pred_area + truth_area - intersection;
    if union == 0 {
        return Ok(SegScore::perfect());
    }
    Ok(SegScore {
        iou: intersection as f64 / union as f64,
        dsc: 2.0 * intersection as f64 / (pred_area + truth_area) as f64,
    })
}

/// Arithmetic mean over per-sample scores.
pub fn mean_scores(scores: &[SegScore]) -> Result<SegScore> {
    if scores.is_empty() {
        return Err(Error::InvalidArgument("mean over zero scores".into()));
    }
    let n = scores.len() as f64;
    Ok(SegScore {
        iou: scores.iter().map(|s| s.iou).sum::<f64>() / n,
        dsc: scores.iter().map(|s| s.dsc).sum::<f64>() / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn mask(w: usize, h: usize, labels: &[u8]) -> MaskImage {
        MaskImage {
            width: w,
            height: h,
            labels: labels.to_vec(),
        }
    }

    #[test]
    fn counts_match_hand_worked_example() {
        // pred covers 3 pixels, truth covers 2, overlap 1.
        let p = mask(2, 2, &[1, 1, 1, 0]);
        let t = mask(2, 2, &[1, 0, 0, 1]);
        let s = score(&p, &t).unwrap();
        assert!((s.iou - 0.25).abs() < 1e-15);
        assert!((s.dsc - 0.4).abs() < 1e-15);
    }

    #[test]
    fn identical_masks_score_one_disjoint_score_zero() {
        let a = mask(2, 2, &[1, 0, 1, 0]);
        let s = score(&a, &a).unwrap();
        assert_eq!(s, SegScore { iou: 1.0, dsc: 1.0 });

        let b = mask(2, 2, &[0, 1, 0, 1]);
        let s = score(&a, &b).unwrap();
        assert_eq!(s, SegScore { iou: 0.0, dsc: 0.0 });
    }

    #[test]
    fn both_empty_is_perfect_one_empty_is_zero() {
        let e = mask(2, 1, &[0, 0]);
        assert_eq!(score(&e, &e).unwrap(), SegScore::perfect());
        let f = mask(2, 1, &[1, 0]);
        assert_eq!(score(&e, &f).unwrap(), SegScore { iou: 0.0, dsc: 0.0 });
        assert_eq!(score(&f, &e).unwrap(), SegScore { iou: 0.0, dsc: 0.0 });
    }

    #[test]
    fn dice_is_determined_by_iou() {
        // dsc = 2*iou/(1+iou) must hold for any mask pair.
        let mut rng = crate::rng::stream(31, "metric-prop");
        for _ in 0..50 {
            let labels_p: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let labels_t: Vec<u8> = (0..64).map(|_| rng.gen_range(0..2)).collect();
            let s = score(&mask(8, 8, &labels_p), &mask(8, 8, &labels_t)).unwrap();
            assert!((s.dsc - 2.0 * s.iou / (1.0 + s.iou)).abs() < 1e-12);
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let a = mask(2, 1, &[0, 0]);
        let b = mask(1, 2, &[0, 0]);
        assert!(score(&a, &b).is_err());
    }

    #[test]
    fn mean_is_per_component() {
        let s = mean_scores(&[
            SegScore { iou: 0.2, dsc: 0.4 },
            SegScore { iou: 0.6, dsc: 0.8 },
        ])
        .unwrap();
        assert!((s.iou - 0.4).abs() < 1e-15);
        assert!((s.dsc - 0.6).abs() < 1e-15);
        assert!(mean_scores(&[]).is_err());
    }
}

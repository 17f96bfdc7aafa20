//! Slide-level classification metrics (AUC, accuracy, F1) and tile-level
//! localization metrics (Dice, specificity).

use crate::error::{CamilError, Result};

fn check_paired(scores: &[f64], labels: &[bool]) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(CamilError::shape(
            "scores vs labels",
            (scores.len(), 1),
            (labels.len(), 1),
        ));
    }
    if let Some(bad) = scores.iter().find(|v| !v.is_finite()) {
        return Err(CamilError::InvalidArgument(format!(
            "scores must be finite, got {bad}"
        )));
    }
    Ok(())
}

/// Mann-Whitney AUC: P(score+ > score-) + half the tie probability, exact
/// over all pairs. Computed through midranks, which agrees bit for bit with
/// the pair count because both numerators are sums of halves.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    check_paired(scores, labels)?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(CamilError::UndefinedMetric(
            "AUC needs both classes present".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_pos_sum = 0.0;
    let mut lo = 0;
    while lo < idx.len() {
        let mut hi = lo;
        while hi + 1 < idx.len() && scores[idx[hi + 1]] == scores[idx[lo]] {
            hi += 1;
        }
        // 1-based midrank of the tie group [lo, hi].
        let midrank = (lo + hi) as f64 / 2.0 + 1.0;
        for &i in &idx[lo..=hi] {
            if labels[i] {
                rank_pos_sum += midrank;
            }
        }
        lo = hi + 1;
    }
    let u = rank_pos_sum - (n_pos * (n_pos + 1) / 2) as f64;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Accuracy and F1 at `threshold` on the positive-class probability.
/// F1 falls back to 0 when the confusion matrix holds no positives at all.
pub fn acc_f1(scores: &[f64], labels: &[bool], threshold: f64) -> Result<(f64, f64)> {
    check_paired(scores, labels)?;
    if scores.is_empty() {
        return Err(CamilError::InvalidArgument(
            "accuracy of an empty score list is undefined".into(),
        ));
    }
    let (mut tp, mut fp, mut fne, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fne += 1,
            (false, false) => tn += 1,
        }
    }
    let acc = (tp + tn) as f64 / scores.len() as f64;
    let f1_denom = 2 * tp + fp + fne;
    let f1 = if f1_denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / f1_denom as f64
    };
    Ok((acc, f1))
}

fn check_masks(pred: &[bool], gt: &[bool]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(CamilError::shape(
            "prediction vs ground-truth mask",
            (pred.len(), 1),
            (gt.len(), 1),
        ));
    }
    Ok(())
}

/// Dice overlap 2|P∩G| / (|P| + |G|) between binary tile masks.
pub fn dice(pred: &[bool], gt: &[bool]) -> Result<f64> {
    check_masks(pred, gt)?;
    let g: usize = gt.iter().filter(|&&v| v).count();
    if g == 0 {
        return Err(CamilError::UndefinedMetric(
            "Dice needs at least one positive ground-truth tile".into(),
        ));
    }
    let p: usize = pred.iter().filter(|&&v| v).count();
    let both = pred.iter().zip(gt).filter(|&(&a, &b)| a && b).count();
    Ok(2.0 * both as f64 / (p + g) as f64)
}

/// True-negative rate on a slide whose ground truth is entirely negative.
pub fn specificity(pred: &[bool], gt: &[bool]) -> Result<f64> {
    check_masks(pred, gt)?;
    if gt.iter().any(|&v| v) {
        return Err(CamilError::InvalidArgument(
            "specificity is defined on all-negative slides".into(),
        ));
    }
    if gt.is_empty() {
        return Err(CamilError::InvalidArgument(
            "specificity of an empty mask is undefined".into(),
        ));
    }
    let tn = pred.iter().filter(|&&v| !v).count();
    Ok(tn as f64 / gt.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn random_case(n: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        // Scores on a coarse grid so ties actually occur.
        let scores = (0..n)
            .map(|_| (rng.gen::<f64>() * 10.0).round() / 10.0)
            .collect();
        let labels = (0..n).map(|_| rng.gen::<bool>()).collect();
        (scores, labels)
    }

    /// All-pairs Mann-Whitney count, the oracle route.
    fn auc_by_pairs(scores: &[f64], labels: &[bool]) -> f64 {
        let pos: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|&(_, &l)| l)
            .map(|(&s, _)| s)
            .collect();
        let neg: Vec<f64> = scores
            .iter()
            .zip(labels)
            .filter(|&(_, &l)| !l)
            .map(|(&s, _)| s)
            .collect();
        let mut u = 0.0;
        for &p in &pos {
            for &n in &neg {
                if p > n {
                    u += 1.0;
                } else if p == n {
                    u += 0.5;
                }
            }
        }
        u / (pos.len() * neg.len()) as f64
    }

    /// Trapezoidal area under the ROC curve swept over score thresholds.
    fn auc_by_roc(scores: &[f64], labels: &[bool]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(f64::total_cmp);
        thresholds.dedup();
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let n_neg = labels.len() as f64 - n_pos;
        let mut points = vec![(0.0, 0.0)];
        for t in thresholds.iter().rev() {
            let tp = scores
                .iter()
                .zip(labels)
                .filter(|&(s, &l)| l && s >= t)
                .count() as f64;
            let fp = scores
                .iter()
                .zip(labels)
                .filter(|&(s, &l)| !l && s >= t)
                .count() as f64;
            points.push((fp / n_neg, tp / n_pos));
        }
        points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[1].1 + w[0].1) / 2.0)
            .sum()
    }

    #[test]
    fn separated_scores_give_auc_one() {
        let scores = [0.9, 0.8, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(auc(&scores, &labels).unwrap(), 1.0);
        let flipped = [false, false, true, true];
        assert_eq!(auc(&scores, &flipped).unwrap(), 0.0);
    }

    #[test]
    fn constant_scores_give_auc_half() {
        let scores = [0.4; 6];
        let labels = [true, false, true, false, false, true];
        assert_eq!(auc(&scores, &labels).unwrap(), 0.5);
    }

    #[test]
    fn auc_matches_the_all_pairs_count_bit_for_bit() {
        for seed in 0..20 {
            let (scores, mut labels) = random_case(30, seed);
            labels[0] = true;
            labels[1] = false;
            let fast = auc(&scores, &labels).unwrap();
            assert_eq!(fast, auc_by_pairs(&scores, &labels));
        }
    }

    #[test]
    fn auc_matches_trapezoidal_roc_integration() {
        let (scores, mut labels) = random_case(30, 99);
        labels[0] = true;
        labels[1] = false;
        let a = auc(&scores, &labels).unwrap();
        let b = auc_by_roc(&scores, &labels);
        assert!((a - b).abs() < 1e-12, "rank {a} vs roc {b}");
    }

    #[test]
    fn auc_survives_strictly_increasing_transforms() {
        let (scores, mut labels) = random_case(25, 7);
        labels[0] = true;
        labels[1] = false;
        let base = auc(&scores, &labels).unwrap();
        let warped: Vec<f64> = scores.iter().map(|&s| (3.0 * s).exp() - 2.0).collect();
        assert_eq!(auc(&warped, &labels).unwrap(), base);
    }

    #[test]
    fn auc_needs_both_classes() {
        assert!(matches!(
            auc(&[0.1, 0.9], &[true, true]),
            Err(CamilError::UndefinedMetric(_))
        ));
        assert!(matches!(
            auc(&[0.1, 0.9], &[false, false]),
            Err(CamilError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn auc_rejects_non_finite_scores() {
        assert!(matches!(
            auc(&[f64::NAN, 0.5], &[true, false]),
            Err(CamilError::InvalidArgument(_))
        ));
    }

    #[test]
    fn perfect_predictions_score_one_on_both() {
        let scores = [0.9, 0.7, 0.2, 0.1];
        let labels = [true, true, false, false];
        assert_eq!(acc_f1(&scores, &labels, 0.5).unwrap(), (1.0, 1.0));
    }

    #[test]
    fn all_negative_predictions_on_a_half_positive_set() {
        let scores = [0.1, 0.2, 0.3, 0.4];
        let labels = [true, true, false, false];
        assert_eq!(acc_f1(&scores, &labels, 0.5).unwrap(), (0.5, 0.0));
    }

    #[test]
    fn acc_f1_match_a_hand_counted_confusion_matrix() {
        let (scores, labels) = random_case(40, 3);
        let (acc, f1) = acc_f1(&scores, &labels, 0.5).unwrap();
        let preds: Vec<bool> = scores.iter().map(|&s| s >= 0.5).collect();
        let tp = preds.iter().zip(&labels).filter(|&(&p, &l)| p && l).count() as f64;
        let fp = preds.iter().zip(&labels).filter(|&(&p, &l)| p && !l).count() as f64;
        let fne = preds.iter().zip(&labels).filter(|&(&p, &l)| !p && l).count() as f64;
        let tn = preds.iter().zip(&labels).filter(|&(&p, &l)| !p && !l).count() as f64;
        assert_eq!(acc, (tp + tn) / 40.0);
        let precision = tp / (tp + fp);
        let recall = tp / (tp + fne);
        let expected = 2.0 * precision * recall / (precision + recall);
        assert!((f1 - expected).abs() < 1e-12);
    }

    #[test]
    fn acc_f1_reject_empty_input() {
        assert!(matches!(
            acc_f1(&[], &[], 0.5),
            Err(CamilError::InvalidArgument(_))
        ));
    }

    #[test]
    fn dice_of_identical_masks_is_one() {
        let m = [true, false, true, true];
        assert_eq!(dice(&m, &m).unwrap(), 1.0);
    }

    #[test]
    fn dice_of_disjoint_masks_is_zero() {
        let pred = [true, false, false];
        let gt = [false, true, true];
        assert_eq!(dice(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn dice_matches_set_arithmetic_and_is_symmetric() {
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        for _ in 0..20 {
            let pred: Vec<bool> = (0..30).map(|_| rng.gen::<bool>()).collect();
            let mut gt: Vec<bool> = (0..30).map(|_| rng.gen::<bool>()).collect();
            gt[0] = true;
            let p: Vec<usize> = (0..30).filter(|&i| pred[i]).collect();
            let g: Vec<usize> = (0..30).filter(|&i| gt[i]).collect();
            let inter = p.iter().filter(|i| g.contains(i)).count();
            let expected = 2.0 * inter as f64 / (p.len() + g.len()) as f64;
            assert_eq!(dice(&pred, &gt).unwrap(), expected);
            if pred.iter().any(|&v| v) {
                assert_eq!(dice(&gt, &pred).unwrap(), dice(&pred, &gt).unwrap());
            }
        }
    }

    #[test]
    fn dice_requires_a_positive_ground_truth() {
        assert!(matches!(
            dice(&[true, false], &[false, false]),
            Err(CamilError::UndefinedMetric(_))
        ));
    }

    #[test]
    fn dice_requires_matching_lengths() {
        assert!(matches!(
            dice(&[true], &[true, false]),
            Err(CamilError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn empty_prediction_has_perfect_specificity() {
        let pred = [false; 5];
        let gt = [false; 5];
        assert_eq!(specificity(&pred, &gt).unwrap(), 1.0);
    }

    #[test]
    fn all_positive_prediction_has_zero_specificity() {
        let pred = [true; 5];
        let gt = [false; 5];
        assert_eq!(specificity(&pred, &gt).unwrap(), 0.0);
    }

    #[test]
    fn specificity_matches_a_counting_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        let pred: Vec<bool> = (0..50).map(|_| rng.gen::<bool>()).collect();
        let gt = vec![false; 50];
        let tn = pred.iter().filter(|&&v| !v).count() as f64;
        assert_eq!(specificity(&pred, &gt).unwrap(), tn / 50.0);
    }

    #[test]
    fn specificity_rejects_positive_ground_truth() {
        assert!(matches!(
            specificity(&[false, false], &[false, true]),
            Err(CamilError::InvalidArgument(_))
        ));
    }
}

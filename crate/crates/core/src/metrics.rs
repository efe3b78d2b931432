//! Threshold-free ranking metrics and confusion counts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check(labels: &[bool], scores: &[f64]) -> Result<(usize, usize)> {
    if labels.len() != scores.len() {
        return Err(Error::param(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::param("scores contain NaN"));
    }
    let n_pos = labels.iter().filter(|&&l| l).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::param("ranking metrics need both classes present"));
    }
    Ok((n_pos, n_neg))
}

/// Area under the ROC curve as the Mann-Whitney statistic: tied
/// positive/negative pairs count one half (midranks).
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (n_pos, n_neg) = check(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Sum of 1-based midranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let midrank = (start + 1 + end) as f64 / 2.0;
        let positives = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += midrank * positives as f64;
        start = end;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Step-wise average precision, `sum_k (R_k - R_{k-1}) P_k` over distinct
/// score thresholds, without interpolation.
///
/// Items are ranked by descending score with ties broken by original index;
/// tied items enter together at one threshold, so the value does not depend
/// on the tie order.
pub fn average_precision(labels: &[bool], scores: &[f64]) -> Result<f64> {
    let (n_pos, _) = check(labels, scores)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut ap = 0.0;
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut prev_recall = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            if labels[order[end]] {
                tp += 1;
            } else {
                fp += 1;
            }
            end += 1;
        }
        let recall = tp as f64 / n_pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        start = end;
    }
    Ok(ap)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Counts with "predicted positive" meaning `score >= threshold`.
pub fn confusion_at(labels: &[bool], scores: &[f64], threshold: f64) -> Confusion {
    let mut c = Confusion {
        tp: 0,
        fp: 0,
        tn: 0,
        fn_: 0,
    };
    for (&l, &s) in labels.iter().zip(scores) {
        match (l, s >= threshold) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fn_ += 1,
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub auc_roc: f64,
    pub average_precision: f64,
    pub threshold: f64,
    #[serde(flatten)]
    pub confusion: Confusion,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl EvalReport {
    pub fn compute(labels: &[bool], scores: &[f64], threshold: f64) -> Result<Self> {
        let (n_pos, n_neg) = check(labels, scores)?;
        Ok(Self {
            auc_roc: roc_auc(labels, scores)?,
            average_precision: average_precision(labels, scores)?,
            threshold,
            confusion: confusion_at(labels, scores, threshold),
            n_pos,
            n_neg,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn lab(v: &[u8]) -> Vec<bool> {
        v.iter().map(|&x| x == 1).collect()
    }

    /// O(n^2) pair count.
    fn auc_oracle(labels: &[bool], scores: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if labels[i] && !labels[j] {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    /// Rescans the whole input at every distinct threshold.
    fn ap_oracle(labels: &[bool], scores: &[f64]) -> f64 {
        let mut thresholds: Vec<f64> = scores.to_vec();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let n_pos = labels.iter().filter(|&&l| l).count() as f64;
        let mut ap = 0.0;
        let mut prev = 0.0;
        for t in thresholds {
            let tp = labels.iter().zip(scores).filter(|(&l, &s)| l && s >= t).count() as f64;
            let k = scores.iter().filter(|&&s| s >= t).count() as f64;
            let r = tp / n_pos;
            ap += (r - prev) * (tp / k);
            prev = r;
        }
        ap
    }

    #[test]
    fn worked_example() {
        let labels = lab(&[0, 0, 1, 1]);
        let scores = [0.1, 0.4, 0.35, 0.8];
        assert_eq!(roc_auc(&labels, &scores).unwrap(), 0.75);
        let ap = average_precision(&labels, &scores).unwrap();
        assert!((ap - (0.5 + 0.5 * 2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn extremes() {
        let labels = lab(&[0, 0, 1, 1]);
        assert_eq!(roc_auc(&labels, &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(roc_auc(&labels, &[0.5; 4]).unwrap(), 0.5);
        assert_eq!(average_precision(&labels, &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        for k in 2..10 {
            let mut labels = vec![false; k];
            labels[k - 1] = true;
            let scores: Vec<f64> = (0..k).map(|i| (k - i) as f64).collect();
            let ap = average_precision(&labels, &scores).unwrap();
            assert!((ap - 1.0 / k as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn single_class_is_rejected() {
        assert!(roc_auc(&lab(&[1, 1]), &[0.1, 0.2]).is_err());
        assert!(average_precision(&lab(&[0, 0]), &[0.1, 0.2]).is_err());
        assert!(roc_auc(&lab(&[0, 1]), &[0.1]).is_err());
        assert!(roc_auc(&lab(&[0, 1]), &[0.1, f64::NAN]).is_err());
    }

    #[test]
    fn confusion_examples() {
        let labels = lab(&[0, 1]);
        assert_eq!(confusion_at(&labels, &[1.0, 2.0], 2.0), Confusion { tp: 1, fp: 0, tn: 1, fn_: 0 });
        assert_eq!(confusion_at(&labels, &[1.0, 2.0], 0.0), Confusion { tp: 1, fp: 1, tn: 0, fn_: 0 });
        assert_eq!(confusion_at(&labels, &[1.0, 2.0], 3.0), Confusion { tp: 0, fp: 0, tn: 1, fn_: 1 });
    }

    #[test]
    fn report_json_has_flat_confusion() {
        let r = EvalReport::compute(&lab(&[0, 1, 1]), &[0.0, 1.0, 2.0], 1.0).unwrap();
        assert_eq!(r.confusion.tp + r.confusion.fn_, r.n_pos);
        assert_eq!(r.confusion.fp + r.confusion.tn, r.n_neg);
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["fn"], 0);
        assert_eq!(v["tp"], 2);
    }

    #[test]
    fn random_scores_average_precision_tracks_prevalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let n = 500;
        let prevalence = 0.2;
        let mut total = 0.0;
        for _ in 0..1000 {
            let labels: Vec<bool> = (0..n).map(|i| (i as f64) < prevalence * n as f64).collect();
            let scores: Vec<f64> = (0..n).map(|_| rng.random()).collect();
            total += average_precision(&labels, &scores).unwrap();
        }
        let mean = total / 1000.0;
        assert!((mean - prevalence).abs() < 0.05, "{mean}");
    }

    fn instance() -> impl Strategy<Value = (Vec<bool>, Vec<f64>)> {
        (2usize..200).prop_flat_map(|n| {
            (
                prop::collection::vec(any::<bool>(), n),
                prop::collection::vec(0u8..20, n),
            )
                .prop_filter("both classes", |(l, _)| l.iter().any(|&x| x) && l.iter().any(|&x| !x))
                .prop_map(|(l, s)| (l, s.into_iter().map(|x| f64::from(x) / 7.0).collect()))
        })
    }

    proptest! {
        #[test]
        fn metrics_match_quadratic_oracles((labels, scores) in instance()) {
            let auc = roc_auc(&labels, &scores).unwrap();
            prop_assert!((auc - auc_oracle(&labels, &scores)).abs() < 1e-12);
            let ap = average_precision(&labels, &scores).unwrap();
            prop_assert!((ap - ap_oracle(&labels, &scores)).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&auc) && (0.0..=1.0).contains(&ap));
        }

        #[test]
        fn auc_is_rank_based((labels, scores) in instance()) {
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() - 2.0).collect();
            prop_assert_eq!(roc_auc(&labels, &scores).unwrap(), roc_auc(&labels, &warped).unwrap());
        }

        #[test]
        fn flipping_labels_complements_auc(
            labels in prop::collection::vec(any::<bool>(), 2..100),
            seed in any::<u64>(),
        ) {
            prop_assume!(labels.iter().any(|&x| x) && labels.iter().any(|&x| !x));
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let scores: Vec<f64> = labels.iter().map(|_| rng.random()).collect();
            let flipped: Vec<bool> = labels.iter().map(|l| !l).collect();
            let a = roc_auc(&labels, &scores).unwrap();
            let b = roc_auc(&flipped, &scores).unwrap();
            prop_assert!((a + b - 1.0).abs() < 1e-12);
        }
    }
}

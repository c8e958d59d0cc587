//! ROC curve construction, trapezoidal AUC and the Youden knee point.

use serde::{Deserialize, Serialize};

use super::EvalError;

/// One operating point: predict positive when `score >= threshold`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

/// Points ordered by decreasing threshold, from `(0, 0)` at `+inf` to
/// `(1, 1)` at the smallest score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub points: Vec<RocPoint>,
    pub positives: usize,
    pub negatives: usize,
}

pub fn roc_curve(labels: &[bool], scores: &[f64]) -> Result<RocCurve, EvalError> {
    if labels.len() != scores.len() {
        return Err(EvalError::LengthMismatch {
            expected: labels.len(),
            found: scores.len(),
        });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::NonFiniteScore);
    }
    let positives = labels.iter().filter(|&&y| y).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(EvalError::SingleClass);
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let (np, nn) = (positives as f64, negatives as f64);
    let mut points = vec![RocPoint {
        threshold: f64::INFINITY,
        tpr: 0.0,
        fpr: 0.0,
    }];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // consume the whole tie group before emitting a point
        while i < order.len() && scores[order[i]] == threshold {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            tpr: tp as f64 / np,
            fpr: fp as f64 / nn,
        });
    }
    Ok(RocCurve {
        points,
        positives,
        negatives,
    })
}

/// Trapezoidal area under the curve.
pub fn auc(curve: &RocCurve) -> f64 {
    curve
        .points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KneePoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
}

impl KneePoint {
    pub fn youden(&self) -> f64 {
        self.sensitivity + self.specificity - 1.0
    }
}

/// Point maximising Youden's `J = TPR - FPR`; ties go to the lower FPR, then
/// the lower threshold.
pub fn knee_point(curve: &RocCurve) -> KneePoint {
    let best = curve
        .points
        .iter()
        .copied()
        .reduce(|best, p| {
            let (jb, jp) = (best.tpr - best.fpr, p.tpr - p.fpr);
            let better = jp > jb
                || (jp == jb && (p.fpr < best.fpr || (p.fpr == best.fpr && p.threshold < best.threshold)));
            if better {
                p
            } else {
                best
            }
        })
        .expect("curve always holds the (0, 0) endpoint");
    KneePoint {
        threshold: best.threshold,
        sensitivity: best.tpr,
        specificity: 1.0 - best.fpr,
    }
}

pub fn write_roc_csv<W: std::io::Write>(mut out: W, curve: &RocCurve) -> std::io::Result<()> {
    writeln!(out, "threshold,tpr,fpr")?;
    for p in &curve.points {
        writeln!(out, "{},{},{}", p.threshold, p.tpr, p.fpr)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_separation() {
        let labels = [false, false, true, true];
        let scores = [0.1, 0.2, 0.8, 0.9];
        let c = roc_curve(&labels, &scores).unwrap();
        assert!(c.points.iter().any(|p| p.fpr == 0.0 && p.tpr == 1.0));
        assert_eq!(auc(&c), 1.0);
        let k = knee_point(&c);
        assert_eq!((k.sensitivity, k.specificity), (1.0, 1.0));
        assert_eq!(k.threshold, 0.8);
    }

    #[test]
    fn constant_scores() {
        let c = roc_curve(&[true, false, true, false, false], &[0.3; 5]).unwrap();
        assert_eq!(c.points.len(), 2);
        assert_eq!((c.points[0].fpr, c.points[0].tpr), (0.0, 0.0));
        assert_eq!((c.points[1].fpr, c.points[1].tpr), (1.0, 1.0));
        assert_eq!(auc(&c), 0.5);
        let k = knee_point(&c);
        assert_eq!(k.threshold, f64::INFINITY);
        assert_eq!((k.sensitivity, k.specificity), (0.0, 1.0));
    }

    #[test]
    fn hand_enumerated_six_points() {
        // scores desc: .9(P) .8(N) .7(P) .7(N) .4(P) .2(N)
        let labels = [true, false, true, false, true, false];
        let scores = [0.9, 0.8, 0.7, 0.7, 0.4, 0.2];
        let c = roc_curve(&labels, &scores).unwrap();
        let got: Vec<(f64, f64)> = c.points.iter().map(|p| (p.fpr, p.tpr)).collect();
        let third = 1.0 / 3.0;
        let want = [
            (0.0, 0.0),
            (0.0, third),
            (third, third),
            (2.0 * third, 2.0 * third),
            (2.0 * third, 1.0),
            (1.0, 1.0),
        ];
        for (g, w) in got.iter().zip(want) {
            assert!((g.0 - w.0).abs() < 1e-15 && (g.1 - w.1).abs() < 1e-15);
        }
        // pairs: 9 total; .9 wins 3, .7 wins 1 + tie 0.5, .4 wins 1
        assert!((auc(&c) - 5.5 / 9.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_single_class() {
        assert_eq!(roc_curve(&[true, true], &[0.1, 0.2]), Err(EvalError::SingleClass));
        assert!(matches!(
            roc_curve(&[true], &[0.1, 0.2]),
            Err(EvalError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn knee_tie_prefers_lower_fpr() {
        // J = 0.5 at (fpr 0, tpr .5) and at (fpr .5, tpr 1)
        let labels = [true, false, true, false];
        let scores = [0.9, 0.6, 0.5, 0.1];
        let k = knee_point(&roc_curve(&labels, &scores).unwrap());
        assert_eq!(k.threshold, 0.9);
        assert_eq!(k.sensitivity, 0.5);
        assert_eq!(k.specificity, 1.0);
    }

    #[test]
    fn roc_csv_layout() {
        let c = roc_curve(&[true, false], &[0.7, 0.2]).unwrap();
        let mut buf = Vec::new();
        write_roc_csv(&mut buf, &c).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "threshold,tpr,fpr\ninf,0,0\n0.7,1,0\n0.2,1,1\n"
        );
    }
}

//! Confusion-matrix metrics, ROC curves and AUC for binary segmentation.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{shape_str, Real, Tensor};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn scaled(&self, k: u64) -> Self {
        Self {
            tp: self.tp * k,
            fp: self.fp * k,
            tn: self.tn * k,
            fn_: self.fn_ * k,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            tn: self.tn + o.tn,
            fn_: self.fn_ + o.fn_,
        }
    }
}

fn binary_labels<T: Real>(target: &Tensor<T>) -> Result<Vec<bool>> {
    target
        .data()
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            let y = y.as_f64();
            if y == 0.0 {
                Ok(false)
            } else if y == 1.0 {
                Ok(true)
            } else {
                Err(Error::usage(format!(
                    "target value {y} at flat index {i} is not 0 or 1"
                )))
            }
        })
        .collect()
}

fn check_shapes<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "prediction {} and target {} differ in shape",
            shape_str(pred.shape()),
            shape_str(target.shape())
        )));
    }
    Ok(())
}

/// Tallies `pred >= threshold` against a binary target.
pub fn confusion<T: Real>(pred: &Tensor<T>, target: &Tensor<T>, threshold: f64) -> Result<ConfusionCounts> {
    check_shapes(pred, target)?;
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::usage(format!(
            "threshold must lie in (0,1), got {threshold}"
        )));
    }
    let labels = binary_labels(target)?;
    let mut c = ConfusionCounts::default();
    for (&p, y) in pred.data().iter().zip(labels) {
        match (p.as_f64() >= threshold, y) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, false) => c.tn += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    Ok(c)
}

/// Metric whose denominator was zero and which was therefore reported as 0.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Degenerate {
    Empty,
    Sensitivity,
    Specificity,
    Precision,
    F1,
    Jaccard,
}

impl Degenerate {
    pub fn name(self) -> &'static str {
        match self {
            Degenerate::Empty => "empty",
            Degenerate::Sensitivity => "sensitivity",
            Degenerate::Specificity => "specificity",
            Degenerate::Precision => "precision",
            Degenerate::F1 => "f1",
            Degenerate::Jaccard => "jaccard",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Metrics {
    pub accuracy: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub jaccard: f64,
    pub degenerate: Vec<Degenerate>,
}

/// Derives the rate metrics from counts. Zero denominators give 0 and a flag.
pub fn derive(c: &ConfusionCounts) -> Metrics {
    let mut flags = Vec::new();
    let mut ratio = |num: u64, den: u64, flag: Degenerate| {
        if den == 0 {
            flags.push(flag);
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let accuracy = ratio(c.tp + c.tn, c.total(), Degenerate::Empty);
    let sensitivity = ratio(c.tp, c.tp + c.fn_, Degenerate::Sensitivity);
    let specificity = ratio(c.tn, c.tn + c.fp, Degenerate::Specificity);
    let precision = ratio(c.tp, c.tp + c.fp, Degenerate::Precision);
    let jaccard = ratio(c.tp, c.tp + c.fp + c.fn_, Degenerate::Jaccard);
    // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn), which avoids compounding rounding
    let f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_, Degenerate::F1);
    Metrics {
        accuracy,
        sensitivity,
        specificity,
        precision,
        f1,
        jaccard,
        degenerate: flags,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0,0)` to `(1,1)`, one point per distinct score.
    pub points: Vec<(f64, f64)>,
    pub auc: f64,
}

impl RocCurve {
    /// Two whitespace-separated columns, `fpr tpr`, one point per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (x, y) in &self.points {
            let _ = writeln!(s, "{x} {y}");
        }
        s
    }
}

/// ROC over raw scores; thresholds sweep every distinct score from high to low.
pub fn roc_from_scores(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    if scores.len() != labels.len() {
        return Err(Error::dim(format!(
            "{} scores but {} labels",
            scores.len(),
            labels.len()
        )));
    }
    let pos = labels.iter().filter(|&&y| y).count();
    let neg = labels.len() - pos;
    if pos == 0 {
        return Err(Error::usage("ROC needs at least one positive pixel; target has none"));
    }
    if neg == 0 {
        return Err(Error::usage("ROC needs at least one negative pixel; target has none"));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

    let mut points = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut auc = 0.0;
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let (x0, y0) = *points.last().expect("non-empty");
        let p = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        auc += (p.0 - x0) * (p.1 + y0) / 2.0;
        points.push(p);
    }
    Ok(RocCurve { points, auc })
}

pub fn roc_auc<T: Real>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<RocCurve> {
    check_shapes(pred, target)?;
    let labels = binary_labels(target)?;
    roc_from_scores(&pred.to_f64_vec(), &labels)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Averaging {
    /// Pool every pixel of the set, then derive.
    #[default]
    Micro,
    /// Derive per image, then take the arithmetic mean.
    PerImage,
}

impl std::str::FromStr for Averaging {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "micro" => Ok(Averaging::Micro),
            "per-image" | "per_image" => Ok(Averaging::PerImage),
            other => Err(Error::usage(format!(
                "unknown averaging {other:?} (expected micro or per-image)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub metrics: Metrics,
    pub counts: ConfusionCounts,
    pub auc: f64,
    pub roc: RocCurve,
    pub threshold: f64,
    pub averaging: Averaging,
    pub images: usize,
}

impl MetricsReport {
    /// `key=value` block.
    pub fn to_text(&self) -> String {
        let m = &self.metrics;
        let mut s = String::new();
        let _ = writeln!(s, "accuracy={}", m.accuracy);
        let _ = writeln!(s, "sensitivity={}", m.sensitivity);
        let _ = writeln!(s, "specificity={}", m.specificity);
        let _ = writeln!(s, "precision={}", m.precision);
        let _ = writeln!(s, "f1={}", m.f1);
        let _ = writeln!(s, "jaccard={}", m.jaccard);
        let _ = writeln!(s, "auc={}", self.auc);
        let _ = writeln!(s, "tp={}", self.counts.tp);
        let _ = writeln!(s, "fp={}", self.counts.fp);
        let _ = writeln!(s, "tn={}", self.counts.tn);
        let _ = writeln!(s, "fn={}", self.counts.fn_);
        let _ = writeln!(s, "threshold={}", self.threshold);
        let avg = match self.averaging {
            Averaging::Micro => "micro",
            Averaging::PerImage => "per-image",
        };
        let _ = writeln!(s, "averaging={avg}");
        let _ = writeln!(s, "images={}", self.images);
        let flags: Vec<&str> = m.degenerate.iter().map(|d| d.name()).collect();
        let _ = writeln!(
            s,
            "degenerate={}",
            if flags.is_empty() { "none".to_string() } else { flags.join(",") }
        );
        s
    }
}

/// Metrics over a set of predictions. Counts and the ROC are always pooled;
/// `averaging` only changes how the rate metrics are combined.
pub fn evaluate_set<T: Real>(
    preds: &[Tensor<T>],
    targets: &[Tensor<T>],
    threshold: f64,
    averaging: Averaging,
) -> Result<MetricsReport> {
    if preds.is_empty() || preds.len() != targets.len() {
        return Err(Error::usage(format!(
            "need matching non-empty prediction and target lists, got {} and {}",
            preds.len(),
            targets.len()
        )));
    }
    let mut per_image = Vec::with_capacity(preds.len());
    let mut pooled = ConfusionCounts::default();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    for (p, t) in preds.iter().zip(targets) {
        let c = confusion(p, t, threshold)?;
        pooled = pooled + c;
        per_image.push(c);
        scores.extend(p.to_f64_vec());
        labels.extend(binary_labels(t)?);
    }
    let roc = roc_from_scores(&scores, &labels)?;
    let metrics = match averaging {
        Averaging::Micro => derive(&pooled),
        Averaging::PerImage => {
            let all: Vec<Metrics> = per_image.iter().map(derive).collect();
            let n = all.len() as f64;
            let mean = |f: fn(&Metrics) -> f64| all.iter().map(f).sum::<f64>() / n;
            let mut degenerate = Vec::new();
            for m in &all {
                for d in &m.degenerate {
                    if !degenerate.contains(d) {
                        degenerate.push(*d);
                    }
                }
            }
            Metrics {
                accuracy: mean(|m| m.accuracy),
                sensitivity: mean(|m| m.sensitivity),
                specificity: mean(|m| m.specificity),
                precision: mean(|m| m.precision),
                f1: mean(|m| m.f1),
                jaccard: mean(|m| m.jaccard),
                degenerate,
            }
        }
    };
    Ok(MetricsReport {
        metrics,
        counts: pooled,
        auc: roc.auc,
        roc,
        threshold,
        averaging,
        images: preds.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(&[v.len()], v).unwrap()
    }

    #[test]
    fn hand_counted_instance() {
        // tp at 0,1; fp at 2; tn at 3..7; fn at 7
        let pred = t(&[0.9, 0.5, 0.7, 0.1, 0.2, 0.49, 0.0, 0.3]);
        let target = t(&[1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        let c = confusion(&pred, &target, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 1, tn: 4, fn_: 1 });
        let m = derive(&c);
        assert_eq!(m.accuracy, 0.75);
        assert!((m.sensitivity - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.specificity - 0.8).abs() < 1e-15);
        assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.jaccard, 0.5);
        assert!(m.degenerate.is_empty());
    }

    #[test]
    fn all_positive_prediction() {
        let target = t(&[1.0, 0.0, 0.0, 1.0, 0.0]);
        let c = confusion(&t(&[1.0; 5]), &target, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts { tp: 2, fp: 3, tn: 0, fn_: 0 });
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let target = t(&[1.0, 0.0, 1.0, 0.0]);
        let m = derive(&confusion(&target, &target, 0.5).unwrap());
        for v in [m.accuracy, m.sensitivity, m.specificity, m.precision, m.f1, m.jaccard] {
            assert_eq!(v, 1.0);
        }
    }

    #[test]
    fn no_positive_predictions_flag_precision() {
        let m = derive(&ConfusionCounts { tp: 0, fp: 0, tn: 3, fn_: 2 });
        assert_eq!((m.sensitivity, m.f1, m.precision), (0.0, 0.0, 0.0));
        assert!(m.degenerate.contains(&Degenerate::Precision));
    }

    #[test]
    fn non_binary_target_rejected() {
        let err = confusion(&t(&[0.2]), &t(&[0.5]), 0.5).unwrap_err();
        assert!(matches!(err, Error::Usage(_)));
    }

    #[test]
    fn roc_tie_and_separation_conventions() {
        let labels = [true, false, true, false];
        let tied = roc_from_scores(&[0.3; 4], &labels).unwrap();
        assert_eq!(tied.auc, 0.5);
        assert_eq!(tied.points, vec![(0.0, 0.0), (1.0, 1.0)]);
        let sep = roc_from_scores(&[0.9, 0.1, 0.8, 0.2], &labels).unwrap();
        assert_eq!(sep.auc, 1.0);
        assert_eq!(*sep.points.last().unwrap(), (1.0, 1.0));
    }

    #[test]
    fn single_class_names_missing_class() {
        let err = roc_from_scores(&[0.1, 0.2], &[false, false]).unwrap_err().to_string();
        assert!(err.contains("positive"), "{err}");
        let err = roc_from_scores(&[0.1, 0.2], &[true, true]).unwrap_err().to_string();
        assert!(err.contains("negative"), "{err}");
    }

    #[test]
    fn report_and_roc_text() {
        let p = t(&[0.9, 0.1, 0.6, 0.4]);
        let y = t(&[1.0, 0.0, 1.0, 0.0]);
        let r = evaluate_set(&[p], &[y], 0.5, Averaging::Micro).unwrap();
        let text = r.to_text();
        assert!(text.contains("f1=1\n") && text.contains("auc=1\n"), "{text}");
        assert_eq!(r.roc.to_text().lines().last(), Some("1 1"));
    }

    #[test]
    fn per_image_averaging_differs_from_pooling() {
        let preds = [t(&[0.9, 0.9]), t(&[0.9, 0.1, 0.1, 0.1])];
        let targets = [t(&[1.0, 0.0]), t(&[1.0, 1.0, 1.0, 0.0])];
        let micro = evaluate_set(&preds, &targets, 0.5, Averaging::Micro).unwrap();
        let per = evaluate_set(&preds, &targets, 0.5, Averaging::PerImage).unwrap();
        assert!((micro.metrics.sensitivity - 2.0 / 4.0).abs() < 1e-15);
        assert!((per.metrics.sensitivity - (1.0 + 1.0 / 3.0) / 2.0).abs() < 1e-15);
        assert_eq!(micro.counts, per.counts);
    }
}

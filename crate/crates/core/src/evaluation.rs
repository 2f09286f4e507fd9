//! Confusion counts under a confidence threshold, per-class soundness and
//! completeness, and the τ sweep.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Prediction;

/// A prediction paired with the true class of its input.
pub type Labelled = (usize, Prediction);

/// Rounds a ratio to a percentage with two decimals.
pub fn percent(ratio: f64) -> f64 {
    (ratio * 10_000.0).round() / 100.0
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauConfusion {
    pub tau: f64,
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub total: usize,
}

impl TauConfusion {
    pub fn accuracy(&self) -> f64 {
        (self.tp + self.tn) as f64 / self.total as f64
    }

    /// Share of correct classifications discarded by the threshold,
    /// `FN / (TP + FN)`. Undefined when nothing was classified correctly.
    pub fn frr(&self) -> Option<f64> {
        let correct = self.tp + self.fn_;
        (correct > 0).then(|| self.fn_ as f64 / correct as f64)
    }

    /// Share of all samples rejected, `(FN + TN) / total`.
    pub fn rejection_rate(&self) -> f64 {
        (self.fn_ + self.tn) as f64 / self.total as f64
    }

    pub fn objective(&self) -> usize {
        self.tp + self.tn
    }
}

/// Classifies each sample as TP/FN (argmax correct, accepted/rejected) or
/// FP/TN (argmax wrong, accepted/rejected) at threshold `tau`.
pub fn confusion_with_tau(predictions: &[Labelled], tau: f64) -> Result<TauConfusion> {
    if predictions.is_empty() {
        return Err(Error::Argument("no predictions".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Argument(format!("tau {tau} not in [0, 1]")));
    }
    let mut c = TauConfusion {
        tau,
        tp: 0,
        tn: 0,
        fp: 0,
        fn_: 0,
        total: predictions.len(),
    };
    for (truth, p) in predictions {
        let accepted = p.confidence >= tau;
        match (p.class == *truth, accepted) {
            (true, true) => c.tp += 1,
            (true, false) => c.fn_ += 1,
            (false, true) => c.fp += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PerClassReport {
    pub class_id: usize,
    pub samples: usize,
    pub correct: usize,
    /// Samples of other classes predicted as this class.
    pub misattributed: usize,
    /// `None` when the class has no samples.
    pub soundness: Option<f64>,
    /// `None` when every sample belongs to this class.
    pub completeness: Option<f64>,
}

fn check_classes(predictions: &[Labelled], n_classes: usize) -> Result<()> {
    for (i, (truth, p)) in predictions.iter().enumerate() {
        if *truth >= n_classes || p.class >= n_classes {
            return Err(Error::Argument(format!(
                "sample {i}: class {truth}/{} outside [0, {n_classes})",
                p.class
            )));
        }
        if p.scores.len() != n_classes {
            return Err(Error::Dimension(format!(
                "sample {i}: {} scores for {n_classes} classes",
                p.scores.len()
            )));
        }
    }
    Ok(())
}

/// Argmax-only soundness and completeness for every class.
pub fn per_class_reports(predictions: &[Labelled], n_classes: usize) -> Result<Vec<PerClassReport>> {
    check_classes(predictions, n_classes)?;
    let mut samples = vec![0usize; n_classes];
    let mut correct = vec![0usize; n_classes];
    let mut misattributed = vec![0usize; n_classes];
    for (truth, p) in predictions {
        samples[*truth] += 1;
        if p.class == *truth {
            correct[*truth] += 1;
        } else {
            misattributed[p.class] += 1;
        }
    }
    let total = predictions.len();
    Ok((0..n_classes)
        .map(|c| {
            let others = total - samples[c];
            PerClassReport {
                class_id: c,
                samples: samples[c],
                correct: correct[c],
                misattributed: misattributed[c],
                soundness: (samples[c] > 0).then(|| correct[c] as f64 / samples[c] as f64),
                completeness: (others > 0).then(|| 1.0 - misattributed[c] as f64 / others as f64),
            }
        })
        .collect())
}

/// Evenly spaced grid `0, step, 2·step, …, 1`.
pub fn tau_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::Argument(format!("grid step {step} not in (0, 1]")));
    }
    let n = (1.0 / step).round() as usize;
    Ok((0..=n).map(|i| i as f64 / n as f64).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauSweep {
    pub curve: Vec<TauConfusion>,
    pub optimal_tau: f64,
    pub optimal: TauConfusion,
}

/// Confusion at each τ of an ascending grid; the optimum maximizes TP + TN,
/// preferring the smaller τ on ties.
pub fn sweep_tau(predictions: &[Labelled], grid: &[f64]) -> Result<TauSweep> {
    if grid.is_empty() {
        return Err(Error::Argument("empty tau grid".into()));
    }
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Argument("tau grid must be strictly ascending".into()));
    }
    let curve = grid
        .iter()
        .map(|&tau| confusion_with_tau(predictions, tau))
        .collect::<Result<Vec<_>>>()?;
    let optimal = *curve
        .iter()
        .reduce(|best, c| if c.objective() > best.objective() { c } else { best })
        .expect("non-empty");
    Ok(TauSweep {
        optimal_tau: optimal.tau,
        optimal,
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpoofRate {
    pub class_id: usize,
    /// Samples of other classes accepted as this class.
    pub accepted: usize,
    pub non_class_total: usize,
    pub rate: Option<f64>,
}

/// Per class, the share of other classes' samples accepted as that class at
/// threshold `tau`.
pub fn spoof_acceptance(
    predictions: &[Labelled],
    tau: f64,
    n_classes: usize,
) -> Result<Vec<SpoofRate>> {
    check_classes(predictions, n_classes)?;
    Ok((0..n_classes)
        .map(|c| {
            let others = predictions.iter().filter(|(t, _)| *t != c);
            let non_class_total = others.clone().count();
            let accepted = others
                .filter(|(_, p)| p.class == c && p.confidence >= tau)
                .count();
            SpoofRate {
                class_id: c,
                accepted,
                non_class_total,
                rate: (non_class_total > 0).then(|| accepted as f64 / non_class_total as f64),
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub tau: f64,
    pub confusion: TauConfusion,
    pub accuracy: f64,
    pub frr: Option<f64>,
    pub rejection_rate: f64,
    pub per_class: Vec<PerClassReport>,
    pub spoof: Vec<SpoofRate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<TauSweep>,
}

impl EvaluationReport {
    pub fn build(
        predictions: &[Labelled],
        n_classes: usize,
        tau: f64,
        grid: Option<&[f64]>,
    ) -> Result<Self> {
        let confusion = confusion_with_tau(predictions, tau)?;
        Ok(EvaluationReport {
            tau,
            accuracy: confusion.accuracy(),
            frr: confusion.frr(),
            rejection_rate: confusion.rejection_rate(),
            confusion,
            per_class: per_class_reports(predictions, n_classes)?,
            spoof: spoof_acceptance(predictions, tau, n_classes)?,
            sweep: grid.map(|g| sweep_tau(predictions, g)).transpose()?,
        })
    }
}

/// Writes the sweep curve as CSV with columns `tau,tp,tn,fp,fn,accuracy`.
pub fn write_curve_csv<W: Write>(sweep: &TauSweep, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["tau", "tp", "tn", "fp", "fn", "accuracy"])?;
    for c in &sweep.curve {
        w.write_record([
            c.tau.to_string(),
            c.tp.to_string(),
            c.tn.to_string(),
            c.fp.to_string(),
            c.fn_.to_string(),
            c.accuracy().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{ThresholdConfig, Verdict};
    use proptest::prelude::*;

    /// Two-class prediction for `class` with the given confidence.
    fn pred(class: usize, confidence: f64, n: usize) -> Prediction {
        let rest = (1.0 - confidence) / (n - 1) as f64;
        let scores = (0..n).map(|i| if i == class { confidence } else { rest }).collect();
        Prediction {
            scores,
            class,
            confidence,
            verdict: Verdict::Accept(class),
        }
    }

    fn batch(groups: &[(usize, usize, usize, f64)]) -> Vec<Labelled> {
        // (count, truth, predicted, confidence)
        groups
            .iter()
            .flat_map(|&(k, t, c, conf)| (0..k).map(move |_| (t, pred(c, conf, 4))))
            .collect()
    }

    #[test]
    fn threshold_table_accuracy() {
        let p = batch(&[(513, 0, 0, 0.9), (3, 0, 1, 0.5), (6, 0, 1, 0.9), (6, 0, 0, 0.5)]);
        let c = confusion_with_tau(&p, 0.695).unwrap();
        assert_eq!((c.tp, c.tn, c.fp, c.fn_, c.total), (513, 3, 6, 6, 528));
        assert_eq!(percent(c.accuracy()), 97.73);
        assert_eq!(percent(c.frr().unwrap()), 1.16);
        assert_eq!(percent(c.rejection_rate()), 1.70);
    }

    #[test]
    fn zero_tau_is_plain_accuracy() {
        let p = batch(&[(519, 1, 1, 0.6), (9, 1, 2, 0.4)]);
        let c = confusion_with_tau(&p, 0.0).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (519, 9, 0, 0));
        assert_eq!(percent(c.accuracy()), 98.30);
    }

    #[test]
    fn confident_and_correct() {
        let p = batch(&[(10, 2, 2, 1.0)]);
        let c = confusion_with_tau(&p, 1.0).unwrap();
        assert_eq!(c.tp, 10);
        assert_eq!(c.accuracy(), 1.0);
        assert_eq!(c.frr(), Some(0.0));
        assert!(confusion_with_tau(&[], 0.5).is_err());
    }

    #[test]
    fn soundness_and_completeness_counts() {
        // 132 class-3 samples, 8 misclassified (as class 0).
        let mut p = batch(&[(124, 3, 3, 0.9), (8, 3, 0, 0.9)]);
        let r = per_class_reports(&p, 4).unwrap();
        assert_eq!(percent(r[3].soundness.unwrap()), 93.94);
        assert_eq!(r[1].soundness, None);

        // 396 non-class-1 samples, 9 predicted as class 1.
        p = batch(&[
            (132, 1, 1, 0.9),
            (129, 0, 0, 0.9),
            (3, 0, 1, 0.9),
            (129, 2, 2, 0.9),
            (3, 2, 1, 0.9),
            (129, 3, 3, 0.9),
            (3, 3, 1, 0.9),
        ]);
        let r = per_class_reports(&p, 4).unwrap();
        assert_eq!(percent(r[1].completeness.unwrap()), 97.73);
        assert_eq!(r[1].misattributed, 9);
    }

    #[test]
    fn perfect_classifier_reports() {
        let p = batch(&[(5, 0, 0, 0.9), (5, 1, 1, 0.9), (5, 2, 2, 0.9), (5, 3, 3, 0.9)]);
        for r in per_class_reports(&p, 4).unwrap() {
            assert_eq!(r.soundness, Some(1.0));
            assert_eq!(r.completeness, Some(1.0));
        }
    }

    #[test]
    fn out_of_range_class_rejected() {
        let p = batch(&[(1, 5, 0, 0.9)]);
        assert!(per_class_reports(&p, 4).is_err());
    }

    #[test]
    fn grid_endpoints() {
        let p = batch(&[(7, 0, 0, 0.8), (3, 0, 1, 0.6), (2, 1, 1, 1.0)]);
        let s = sweep_tau(&p, &[0.0, 1.0]).unwrap();
        assert_eq!(s.curve[0].objective(), 9);
        // At τ=1 only confidence-1 samples are accepted.
        assert_eq!(s.curve[1].objective(), 3 + 2);
        assert_eq!(s.optimal_tau, 0.0);

        let p = batch(&[(2, 0, 0, 0.5), (8, 0, 1, 0.5)]);
        let s = sweep_tau(&p, &[0.0, 1.0]).unwrap();
        assert_eq!(s.optimal_tau, 1.0);
        assert_eq!(s.optimal.objective(), 8);
    }

    #[test]
    fn ties_prefer_smaller_tau() {
        let p = batch(&[(4, 0, 0, 0.9)]);
        let s = sweep_tau(&p, &tau_grid(0.1).unwrap()).unwrap();
        assert_eq!(s.optimal_tau, 0.0);
        assert!(sweep_tau(&p, &[]).is_err());
        assert!(sweep_tau(&p, &[0.5, 0.2]).is_err());
    }

    #[test]
    fn grid_has_exact_endpoints() {
        let g = tau_grid(0.01).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!((g[0], g[100]), (0.0, 1.0));
        assert_eq!(tau_grid(0.001).unwrap().len(), 1001);
        assert!(tau_grid(0.0).is_err());
    }

    #[test]
    fn spoof_rates() {
        let p = batch(&[(10, 0, 1, 0.9), (10, 0, 1, 0.3), (20, 1, 1, 0.9)]);
        let s = spoof_acceptance(&p, 0.5, 4).unwrap();
        assert_eq!((s[1].accepted, s[1].non_class_total), (10, 20));
        assert_eq!(s[3].rate, Some(0.0));
        assert_eq!(s[1].rate, Some(0.5));
        assert_eq!(s[0].accepted, 0);
    }

    #[test]
    fn curve_csv_rows() {
        let p = batch(&[(3, 0, 0, 0.8)]);
        let s = sweep_tau(&p, &[0.0, 0.9]).unwrap();
        let mut out = Vec::new();
        write_curve_csv(&s, &mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "tau,tp,tn,fp,fn,accuracy");
        assert_eq!(lines[2], "0.9,0,0,0,3,0");
    }

    #[test]
    fn report_json_has_fn_key() {
        let p = batch(&[(3, 0, 0, 0.8), (1, 1, 0, 0.8)]);
        let r = EvaluationReport::build(&p, 4, 0.5, Some(&[0.0, 0.5])).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["confusion"]["fn"], 0);
        assert_eq!(v["confusion"]["fp"], 1);
        assert_eq!(v["per_class"].as_array().unwrap().len(), 4);
    }

    fn arb_predictions() -> impl Strategy<Value = Vec<Labelled>> {
        proptest::collection::vec((0usize..4, 0usize..4, 0.25f64..=1.0), 1..80).prop_map(|v| {
            v.into_iter()
                .map(|(t, c, conf)| {
                    let thr = ThresholdConfig::new(0.0).unwrap();
                    let mut scores = vec![(1.0 - conf) / 3.0; 4];
                    scores[c] = conf;
                    let mut p = Prediction::from_scores(scores, thr).unwrap();
                    // Ties at conf = 0.25 resolve to index 0; keep the label we drew.
                    p.class = c;
                    (t, p)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn every_sample_counted_once(p in arb_predictions(), tau in 0.0f64..=1.0) {
            let c = confusion_with_tau(&p, tau).unwrap();
            prop_assert_eq!(c.tp + c.tn + c.fp + c.fn_, p.len());
        }

        #[test]
        fn sweep_is_monotone(p in arb_predictions()) {
            let s = sweep_tau(&p, &tau_grid(0.01).unwrap()).unwrap();
            for w in s.curve.windows(2) {
                prop_assert!(w[1].fp <= w[0].fp);
                prop_assert!(w[1].fn_ >= w[0].fn_);
            }
            let first = s.curve[0];
            prop_assert_eq!(first.tn + first.fn_, 0);
        }

        #[test]
        fn completeness_matches_double_loop(p in arb_predictions()) {
            let reports = per_class_reports(&p, 4).unwrap();
            for r in &reports {
                let c = r.class_id;
                let mut non_c = 0usize;
                let mut wrong = 0usize;
                for other in (0..4).filter(|&o| o != c) {
                    for (t, pr) in &p {
                        if *t == other {
                            non_c += 1;
                            if pr.class == c {
                                wrong += 1;
                            }
                        }
                    }
                }
                let expect = (non_c > 0).then(|| 1.0 - wrong as f64 / non_c as f64);
                prop_assert_eq!(r.completeness, expect);
            }
        }

        #[test]
        fn zero_tau_accuracy_is_weighted_soundness(p in arb_predictions()) {
            let c = confusion_with_tau(&p, 0.0).unwrap();
            let reports = per_class_reports(&p, 4).unwrap();
            let weighted: f64 = reports
                .iter()
                .filter_map(|r| r.soundness.map(|s| s * r.samples as f64))
                .sum::<f64>() / p.len() as f64;
            prop_assert!((c.accuracy() - weighted).abs() < 1e-12);
        }
    }
}

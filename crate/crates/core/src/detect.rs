//! Threshold calibration, the detector `g(x) = 1{s(x) > ε}`, and the
//! FNR@TNR / AUROC evaluation.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, InD, Role};
use crate::error::{Error, Result};
use crate::geometry::{score_with_class, Score, ScoreConfig};
use crate::model::Mlp;
use crate::transport::ProbVector;

pub const DEFAULT_TNR: f64 = 0.95;
pub const HISTOGRAM_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detector {
    pub epsilon: f64,
    pub score: ScoreConfig<f64>,
    pub tnr_target: f64,
}

impl Detector {
    pub fn new(epsilon: f64, score: ScoreConfig<f64>, tnr_target: f64) -> Result<Self> {
        if !epsilon.is_finite() {
            return Err(Error::Input(format!("threshold must be finite, got {epsilon}")));
        }
        check_target(tnr_target)?;
        Ok(Self {
            epsilon,
            score,
            tnr_target,
        })
    }

    /// `1` (OOD) iff `score > ε`.
    pub fn classify(&self, score: f64) -> Result<u8> {
        classify(self.epsilon, score)
    }
}

fn check_target(t: f64) -> Result<()> {
    if t > 0.0 && t < 1.0 {
        Ok(())
    } else {
        Err(Error::Input(format!("TNR target must be in (0, 1), got {t}")))
    }
}

fn check_scores(scores: &[f64], what: &str) -> Result<()> {
    if scores.is_empty() {
        return Err(Error::Input(format!("{what} score list is empty")));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(Error::Input(format!("{what} score {i} is NaN")));
    }
    Ok(())
}

pub fn classify(epsilon: f64, score: f64) -> Result<u8> {
    if score.is_nan() {
        return Err(Error::Input("cannot classify a NaN score".into()));
    }
    Ok(u8::from(score > epsilon))
}

/// The `target` quantile of `scores`, linearly interpolated between order
/// statistics, raised if needed to the smallest order statistic that keeps
/// at least `target` of the scores at or below it.
pub fn quantile_threshold(scores: &[f64], target: f64) -> Result<f64> {
    check_scores(scores, "InD")?;
    check_target(target)?;
    let mut sorted = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();

    let h = (n - 1) as f64 * target;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let interp = sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo]);

    let mut needed = ((target * n as f64).ceil() as usize).clamp(1, n);
    while needed > 1 && (needed - 1) as f64 / n as f64 >= target {
        needed -= 1;
    }
    while needed < n && (needed as f64 / n as f64) < target {
        needed += 1;
    }
    Ok(interp.max(sorted[needed - 1]))
}

pub fn calibrate(ind_scores: &[f64], tnr_target: f64, score: ScoreConfig<f64>) -> Result<Detector> {
    Detector::new(quantile_threshold(ind_scores, tnr_target)?, score, tnr_target)
}

/// `1 - max f`: the maximum-softmax comparison score, oriented so that larger
/// means more OOD.
pub fn max_softmax_score(f: &ProbVector<f64>) -> f64 {
    1.0 - f.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Model output and WOOD score of one sample.
#[derive(Debug, Clone)]
pub struct Scored {
    pub probs: ProbVector<f64>,
    pub score: Score<f64>,
}

/// Scores every row of `ds`, in order.
pub fn score_dataset<R: Role>(model: &Mlp<f64>, ds: &Dataset<R>, cfg: &ScoreConfig<f64>) -> Result<Vec<Scored>> {
    if ds.dim() != model.input_dim() {
        return Err(Error::Config(format!(
            "data has {} features, model expects {}",
            ds.dim(),
            model.input_dim()
        )));
    }
    let rows: Vec<&[f64]> = ds.rows().collect();
    rows.par_iter()
        .map(|x| {
            let probs = model.predict(x)?;
            let score = score_with_class(&probs, cfg)?;
            Ok(Scored { probs, score })
        })
        .collect()
}

/// Top-1 accuracy of `scored` against the labels of `ds`, if it has any.
pub fn accuracy(ds: &Dataset<InD>, scored: &[Scored]) -> Option<f64> {
    let labels = ds.labels()?;
    if labels.is_empty() || labels.len() != scored.len() {
        return None;
    }
    let hits = labels.iter().zip(scored).filter(|(&l, s)| s.probs.argmax() == l).count();
    Some(hits as f64 / labels.len() as f64)
}

/// Twice the Mann-Whitney statistic: for each OOD score, two points per InD
/// score strictly below it and one per tie.
fn twice_u(ind: &[f64], ood: &[f64]) -> u64 {
    let mut sorted = ind.to_vec();
    sorted.sort_by(f64::total_cmp);
    ood.iter()
        .map(|&o| {
            let below = sorted.partition_point(|&x| x < o) as u64;
            let at_most = sorted.partition_point(|&x| x <= o) as u64;
            2 * below + (at_most - below)
        })
        .sum()
}

/// Probability that a random OOD score exceeds a random InD score, ties
/// counted half.
pub fn auroc(ind_scores: &[f64], ood_scores: &[f64]) -> Result<f64> {
    check_scores(ind_scores, "InD")?;
    check_scores(ood_scores, "OOD")?;
    let u = twice_u(ind_scores, ood_scores) as f64 * 0.5;
    Ok(u / (ind_scores.len() as f64 * ood_scores.len() as f64))
}

/// Shared-range histogram of both populations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub ind: Vec<u64>,
    pub ood: Vec<u64>,
}

impl Histogram {
    pub fn new(ind: &[f64], ood: &[f64], bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::Input("histogram needs at least one bin".into()));
        }
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for &s in ind.iter().chain(ood) {
            if !s.is_finite() {
                return Err(Error::Input(format!("cannot bin score {s}")));
            }
            lo = lo.min(s);
            hi = hi.max(s);
        }
        if lo > hi {
            return Err(Error::Input("histogram of empty score lists".into()));
        }
        if hi == lo {
            hi = lo + 1.0;
        }
        let count = |scores: &[f64]| {
            let mut c = vec![0u64; bins];
            for &s in scores {
                let b = ((s - lo) / (hi - lo) * bins as f64) as usize;
                c[b.min(bins - 1)] += 1;
            }
            c
        };
        Ok(Self {
            lo,
            hi,
            ind: count(ind),
            ood: count(ood),
        })
    }

    pub fn bins(&self) -> usize {
        self.ind.len()
    }

    pub fn centers(&self) -> Vec<f64> {
        let w = (self.hi - self.lo) / self.bins() as f64;
        (0..self.bins()).map(|i| self.lo + (i as f64 + 0.5) * w).collect()
    }

    /// Two-column CSV: `bin_center,count`.
    pub fn to_csv(&self, counts: &[u64]) -> String {
        let mut out = String::from("bin_center,count\n");
        for (c, n) in self.centers().iter().zip(counts) {
            let _ = writeln!(out, "{c},{n}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub epsilon: f64,
    pub tnr_target: f64,
    /// Fraction of InD scores `<= ε`.
    pub tnr: f64,
    /// Fraction of OOD scores `<= ε`: OOD samples the detector lets through.
    pub fnr_at_tnr: f64,
    pub auroc: f64,
    pub n_ind: usize,
    pub n_ood: usize,
    pub ind_accepted: usize,
    pub ood_accepted: usize,
    /// Top-1 accuracy on labeled InD samples, when known.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub accuracy: Option<f64>,
    pub histogram: Histogram,
}

/// Calibrates on `ind_scores` themselves, then evaluates.
pub fn evaluate(ind_scores: &[f64], ood_scores: &[f64], tnr_target: f64) -> Result<EvalReport> {
    let eps = quantile_threshold(ind_scores, tnr_target)?;
    evaluate_at(eps, tnr_target, ind_scores, ood_scores)
}

/// Evaluates at a threshold fixed elsewhere, e.g. on a held-out calibration set.
pub fn evaluate_at(
    epsilon: f64,
    tnr_target: f64,
    ind_scores: &[f64],
    ood_scores: &[f64],
) -> Result<EvalReport> {
    check_scores(ind_scores, "InD")?;
    check_scores(ood_scores, "OOD")?;
    check_target(tnr_target)?;
    let ind_accepted = ind_scores.iter().filter(|&&s| s <= epsilon).count();
    let ood_accepted = ood_scores.iter().filter(|&&s| s <= epsilon).count();
    Ok(EvalReport {
        epsilon,
        tnr_target,
        tnr: ind_accepted as f64 / ind_scores.len() as f64,
        fnr_at_tnr: ood_accepted as f64 / ood_scores.len() as f64,
        auroc: auroc(ind_scores, ood_scores)?,
        n_ind: ind_scores.len(),
        n_ood: ood_scores.len(),
        ind_accepted,
        ood_accepted,
        accuracy: None,
        histogram: Histogram::new(ind_scores, ood_scores, HISTOGRAM_BINS)?,
    })
}

//! Distance matrices and the Wasserstein score of a softmax output.
//!
//! Against a one-hot target the coupling is unique (all of `f` moves into the
//! target class), so the distance has a closed form:
//!
//! - binary matrix: `W(f, y^k) = 1 - f[k]`, and the score `min_k W = 1 - max f`;
//! - dynamic matrix: `W(f, y^k) = 1 - Σ f[i]²` for every `k`, so the minimum
//!   over classes is a single evaluation.
//!
//! The Sinkhorn path solves the same problem iteratively, which is what the
//! gradient machinery and the timing comparison need.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transport::{
    sinkhorn_distance, CostMatrix, MatrixKind, ProbVector, SinkhornConfig, TransportResult,
};

/// Cost matrix used by the score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMatrix {
    Binary,
    Dynamic,
}

impl std::str::FromStr for ScoreMatrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary" => Ok(Self::Binary),
            "dynamic" => Ok(Self::Dynamic),
            other => Err(Error::Config(format!("unknown matrix kind '{other}'"))),
        }
    }
}

/// How a distance to a one-hot target is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Evaluation {
    ClosedForm,
    Sinkhorn,
}

impl std::str::FromStr for Evaluation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "closed" | "closedform" | "closed-form" => Ok(Self::ClosedForm),
            "sinkhorn" => Ok(Self::Sinkhorn),
            other => Err(Error::Config(format!("unknown evaluation path '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig<T> {
    pub matrix: ScoreMatrix,
    pub evaluation: Evaluation,
    pub sinkhorn: SinkhornConfig<T>,
}

impl<T: Scalar> Default for ScoreConfig<T> {
    fn default() -> Self {
        Self {
            matrix: ScoreMatrix::Dynamic,
            evaluation: Evaluation::ClosedForm,
            sinkhorn: SinkhornConfig::default(),
        }
    }
}

impl<T: Scalar> ScoreConfig<T> {
    pub fn new(matrix: ScoreMatrix, evaluation: Evaluation) -> Self {
        Self {
            matrix,
            evaluation,
            ..Self::default()
        }
    }
}

pub fn binary_matrix<T: Scalar>(k: usize) -> Result<CostMatrix<T>> {
    if k < 2 {
        return Err(Error::Dimension(format!("binary matrix needs K >= 2, got {k}")));
    }
    let entries = (0..k * k)
        .map(|idx| if idx / k == idx % k { T::zero() } else { T::one() })
        .collect();
    CostMatrix::new(k, entries, MatrixKind::Binary)
}

/// Column `j != class` is `f`; column `class` is `1 - f`.
pub fn dynamic_matrix<T: Scalar>(f: &ProbVector<T>, class: usize) -> Result<CostMatrix<T>> {
    let k = f.k();
    if class >= k {
        return Err(Error::Index { index: class, len: k });
    }
    let mut entries = Vec::with_capacity(k * k);
    for i in 0..k {
        for j in 0..k {
            entries.push(if j == class { T::one() - f[i] } else { f[i] });
        }
    }
    CostMatrix::new(k, entries, MatrixKind::Dynamic)
}

fn score_matrix<T: Scalar>(f: &ProbVector<T>, class: usize, matrix: ScoreMatrix) -> Result<CostMatrix<T>> {
    match matrix {
        ScoreMatrix::Binary => binary_matrix(f.k()),
        ScoreMatrix::Dynamic => dynamic_matrix(f, class),
    }
}

/// Sinkhorn solve for `W(f, y^class)` with `f` on the column (`v`) side, so
/// that [`crate::transport::sinkhorn_gradient`] differentiates with respect
/// to `f`. Returns the cost matrix in `f`-row orientation alongside.
pub fn onehot_transport<T: Scalar>(
    f: &ProbVector<T>,
    class: usize,
    matrix: ScoreMatrix,
    cfg: &SinkhornConfig<T>,
) -> Result<(CostMatrix<T>, TransportResult<T>)> {
    let m = score_matrix(f, class, matrix)?;
    let target = ProbVector::one_hot(class, f.k())?;
    let res = sinkhorn_distance(&target, f, &m.transpose(), cfg)?;
    if !res.converged {
        return Err(Error::Numeric(format!(
            "Sinkhorn did not converge after {} iterations (λ = {})",
            res.iterations, cfg.lambda
        )));
    }
    Ok((m, res))
}

/// `W(f, y^class)` under the configured matrix and evaluation path.
pub fn wasserstein_to_onehot<T: Scalar>(
    f: &ProbVector<T>,
    class: usize,
    cfg: &ScoreConfig<T>,
) -> Result<T> {
    let k = f.k();
    if class >= k {
        return Err(Error::Index { index: class, len: k });
    }
    match cfg.evaluation {
        Evaluation::ClosedForm => Ok(match cfg.matrix {
            ScoreMatrix::Binary => T::one() - f[class],
            ScoreMatrix::Dynamic => T::one() - f.iter().map(|&x| x * x).sum::<T>(),
        }),
        Evaluation::Sinkhorn => Ok(onehot_transport(f, class, cfg.matrix, &cfg.sinkhorn)?.1.value),
    }
}

/// A score together with the class attaining it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score<T> {
    pub value: T,
    pub class: usize,
}

/// `min_k W(f, y^k)` and its minimizing class (lowest index on ties).
/// The dynamic matrix is label-invariant, so it takes one evaluation at class 0.
pub fn score_with_class<T: Scalar>(f: &ProbVector<T>, cfg: &ScoreConfig<T>) -> Result<Score<T>> {
    match cfg.matrix {
        ScoreMatrix::Dynamic => Ok(Score {
            value: wasserstein_to_onehot(f, 0, cfg)?,
            class: 0,
        }),
        ScoreMatrix::Binary => {
            let mut best = Score {
                value: wasserstein_to_onehot(f, 0, cfg)?,
                class: 0,
            };
            for k in 1..f.k() {
                let w = wasserstein_to_onehot(f, k, cfg)?;
                if w < best.value {
                    best = Score { value: w, class: k };
                }
            }
            Ok(best)
        }
    }
}

pub fn wood_score<T: Scalar>(f: &ProbVector<T>, cfg: &ScoreConfig<T>) -> Result<T> {
    Ok(score_with_class(f, cfg)?.value)
}

pub fn score_argmin_class<T: Scalar>(f: &ProbVector<T>, cfg: &ScoreConfig<T>) -> Result<usize> {
    Ok(score_with_class(f, cfg)?.class)
}

/// One row of the score-path timing comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchRow {
    pub k: usize,
    /// Mean milliseconds per score, binary matrix (one Sinkhorn solve per class).
    pub binary_ms: f64,
    /// Mean milliseconds per score, dynamic matrix (a single Sinkhorn solve).
    pub dynamic_ms: f64,
    pub ratio: f64,
}

/// Times the Sinkhorn-path score for both matrices on `repeats` random
/// softmax vectors of `k` classes.
pub fn bench_score_paths(
    k: usize,
    repeats: usize,
    cfg: &ScoreConfig<f64>,
    seed: u64,
) -> Result<BenchRow> {
    if cfg.evaluation != Evaluation::Sinkhorn {
        return Err(Error::Config(
            "timing comparison needs the Sinkhorn path; both closed forms are O(K)".into(),
        ));
    }
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<ProbVector<f64>> = (0..repeats)
        .map(|_| {
            let logits: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let top = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|z| (z - top).exp()).collect();
            let s: f64 = e.iter().sum();
            ProbVector::new(e.iter().map(|x| x / s).collect())
        })
        .collect::<Result<_>>()?;

    let time = |matrix: ScoreMatrix| -> Result<f64> {
        let c = ScoreConfig { matrix, ..*cfg };
        let start = Instant::now();
        let mut sink = 0.0;
        for f in &samples {
            sink += wood_score(f, &c)?;
        }
        std::hint::black_box(sink);
        Ok(start.elapsed().as_secs_f64() * 1e3 / repeats as f64)
    };
    let dynamic_ms = time(ScoreMatrix::Dynamic)?;
    let binary_ms = time(ScoreMatrix::Binary)?;
    Ok(BenchRow {
        k,
        binary_ms,
        dynamic_ms,
        ratio: binary_ms / dynamic_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(x: &[f64]) -> ProbVector<f64> {
        ProbVector::new(x.to_vec()).unwrap()
    }

    fn closed(matrix: ScoreMatrix) -> ScoreConfig<f64> {
        ScoreConfig::new(matrix, Evaluation::ClosedForm)
    }

    fn sinkhorn(matrix: ScoreMatrix, lambda: f64) -> ScoreConfig<f64> {
        ScoreConfig {
            sinkhorn: SinkhornConfig::with_lambda(lambda),
            ..ScoreConfig::new(matrix, Evaluation::Sinkhorn)
        }
    }

    #[test]
    fn binary_matrix_shape() {
        let m = binary_matrix::<f64>(2).unwrap();
        assert_eq!(m.entries(), &[0.0, 1.0, 1.0, 0.0]);
        let m = binary_matrix::<f64>(3).unwrap();
        assert_eq!(m.entries().iter().filter(|&&x| x == 1.0).count(), 6);
        assert!((0..3).all(|i| m.get(i, i) == 0.0));
        assert!(matches!(binary_matrix::<f64>(1), Err(Error::Dimension(_))));
    }

    #[test]
    fn dynamic_matrix_columns() {
        let m = dynamic_matrix(&pv(&[0.5, 0.5]), 0).unwrap();
        assert_eq!(m.entries(), &[0.5, 0.5, 0.5, 0.5]);

        let e = ProbVector::<f64>::one_hot(0, 3).unwrap();
        let m = dynamic_matrix(&e, 0).unwrap();
        assert_eq!(m.column(0), vec![0.0, 1.0, 1.0]);
        assert_eq!(m.column(1), vec![1.0, 0.0, 0.0]);
        assert_eq!(m.column(2), vec![1.0, 0.0, 0.0]);

        let f = pv(&[0.2, 0.5, 0.3]);
        let m = dynamic_matrix(&f, 1).unwrap();
        for i in 0..3 {
            assert_eq!(m.get(i, 1) + m.get(i, 0), 1.0);
        }
        assert!(matches!(dynamic_matrix(&f, 3), Err(Error::Index { .. })));
    }

    #[test]
    fn closed_form_examples() {
        let u = ProbVector::<f64>::uniform(10).unwrap();
        assert_abs_diff_eq!(wasserstein_to_onehot(&u, 4, &closed(ScoreMatrix::Dynamic)).unwrap(), 0.9, epsilon = 1e-12);
        for kind in [ScoreMatrix::Binary, ScoreMatrix::Dynamic] {
            let e = ProbVector::<f64>::one_hot(2, 4).unwrap();
            assert_eq!(wasserstein_to_onehot(&e, 2, &closed(kind)).unwrap(), 0.0);
            assert_eq!(wood_score(&ProbVector::<f64>::one_hot(1, 3).unwrap(), &closed(kind)).unwrap(), 0.0);
        }
        let f = pv(&[0.5, 0.3, 0.2]);
        assert_abs_diff_eq!(wasserstein_to_onehot(&f, 0, &closed(ScoreMatrix::Binary)).unwrap(), 0.5);
        assert_abs_diff_eq!(wasserstein_to_onehot(&f, 0, &closed(ScoreMatrix::Dynamic)).unwrap(), 0.62, epsilon = 1e-15);
        assert!(matches!(
            wasserstein_to_onehot(&f, 5, &closed(ScoreMatrix::Binary)),
            Err(Error::Index { .. })
        ));
    }

    #[test]
    fn score_and_argmin() {
        let f = pv(&[0.5, 0.3, 0.2]);
        let s = score_with_class(&f, &closed(ScoreMatrix::Binary)).unwrap();
        assert_eq!((s.value, s.class), (0.5, 0));
        assert_eq!(score_argmin_class(&pv(&[0.2, 0.7, 0.1]), &closed(ScoreMatrix::Binary)).unwrap(), 1);
        let u = ProbVector::<f64>::uniform(4).unwrap();
        assert_eq!(score_argmin_class(&u, &closed(ScoreMatrix::Binary)).unwrap(), 0);
        assert_eq!(score_argmin_class(&pv(&[0.2, 0.7, 0.1]), &closed(ScoreMatrix::Dynamic)).unwrap(), 0);
        let u10 = ProbVector::<f64>::uniform(10).unwrap();
        assert_abs_diff_eq!(wood_score(&u10, &closed(ScoreMatrix::Dynamic)).unwrap(), 0.9, epsilon = 1e-12);
    }

    #[test]
    fn sinkhorn_path_matches_closed_form_on_examples() {
        let f = pv(&[0.5, 0.3, 0.2]);
        for kind in [ScoreMatrix::Binary, ScoreMatrix::Dynamic] {
            let a = wood_score(&f, &closed(kind)).unwrap();
            let b = wood_score(&f, &sinkhorn(kind, 100.0)).unwrap();
            assert!((a - b).abs() <= 0.02 * a.max(0.05), "{kind:?}: {a} vs {b}");
        }
        assert_eq!(score_argmin_class(&f, &sinkhorn(ScoreMatrix::Binary, 50.0)).unwrap(), 0);
    }

    #[test]
    fn bench_refuses_closed_form() {
        assert!(matches!(
            bench_score_paths(10, 5, &closed(ScoreMatrix::Dynamic), 0),
            Err(Error::Config(_))
        ));
        let row = bench_score_paths(4, 3, &sinkhorn(ScoreMatrix::Dynamic, 50.0), 0).unwrap();
        assert_eq!(row.k, 4);
        assert!(row.binary_ms > 0.0 && row.dynamic_ms > 0.0);
    }

    fn simplex(k: usize) -> impl Strategy<Value = ProbVector<f64>> {
        prop::collection::vec(0.0f64..1.0, k).prop_filter_map("degenerate", |x| {
            let s: f64 = x.iter().sum();
            (s > 1e-6).then(|| ProbVector::new(x.iter().map(|v| v / s).collect()).ok()).flatten()
        })
    }

    proptest! {
        #[test]
        fn dynamic_is_label_invariant(f in simplex(6)) {
            let c = closed(ScoreMatrix::Dynamic);
            let w0 = wasserstein_to_onehot(&f, 0, &c).unwrap();
            for k in 1..6 {
                prop_assert_eq!(w0.to_bits(), wasserstein_to_onehot(&f, k, &c).unwrap().to_bits());
            }
        }

        #[test]
        fn scores_stay_in_range(f in simplex(5)) {
            let top = 1.0 - 1.0 / 5.0 + 1e-12;
            for kind in [ScoreMatrix::Binary, ScoreMatrix::Dynamic] {
                let s = wood_score(&f, &closed(kind)).unwrap();
                prop_assert!((-1e-12..=top).contains(&s));
            }
        }

        #[test]
        fn closed_form_tracks_sinkhorn(f in simplex(4)) {
            for kind in [ScoreMatrix::Binary, ScoreMatrix::Dynamic] {
                let a = wood_score(&f, &closed(kind)).unwrap();
                let b = wood_score(&f, &sinkhorn(kind, 100.0)).unwrap();
                prop_assert!((a - b).abs() <= 0.02 * a.max(0.05));
            }
        }
    }
}

//! WOOD loss over a mixed batch and its gradients with respect to the softmax
//! outputs.
//!
//! `L = mean_InD(-log f[k]) - β · mean_OOD(score(f))`
//!
//! All gradients returned here are centered (zero mean). The softmax Jacobian
//! annihilates constant vectors, so centering changes nothing downstream and
//! makes the closed-form and Sinkhorn dual gradients directly comparable.

use crate::error::{Error, Result};
use crate::geometry::{onehot_transport, score_with_class, wood_score, Evaluation, ScoreConfig, ScoreMatrix};
use crate::scalar::Scalar;
use crate::transport::{center, sinkhorn_gradient, ProbVector};

/// Floor applied to probabilities before taking logs or reciprocals.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_BETA: f64 = 0.1;

/// Softmax outputs of one batch: labeled InD samples and unlabeled OOD samples.
#[derive(Debug, Clone)]
pub struct BatchSlices<T> {
    pub ind: Vec<(ProbVector<T>, usize)>,
    pub ood: Vec<ProbVector<T>>,
    pub beta: T,
}

impl<T: Scalar> BatchSlices<T> {
    pub fn new(ind: Vec<(ProbVector<T>, usize)>, ood: Vec<ProbVector<T>>, beta: T) -> Result<Self> {
        let batch = Self { ind, ood, beta };
        batch.validate()?;
        Ok(batch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.ind.is_empty() && self.ood.is_empty() {
            return Err(Error::Input("batch has neither InD nor OOD samples".into()));
        }
        if !(self.beta >= T::zero()) {
            return Err(Error::Config(format!("beta must be >= 0, got {}", self.beta)));
        }
        let k = self
            .ind
            .first()
            .map(|(f, _)| f.k())
            .or_else(|| self.ood.first().map(|f| f.k()))
            .unwrap_or(0);
        for (f, label) in &self.ind {
            if f.k() != k {
                return Err(Error::Dimension("mixed class counts in batch".into()));
            }
            if *label >= k {
                return Err(Error::Index { index: *label, len: k });
            }
        }
        if self.ood.iter().any(|f| f.k() != k) {
            return Err(Error::Dimension("mixed class counts in batch".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue<T> {
    pub total: T,
    /// Mean cross-entropy over InD samples (0 when there are none).
    pub ce_term: T,
    /// Mean OOD score before the `β` weight (0 when there are none).
    pub ood_term: T,
}

fn floor<T: Scalar>(p: T) -> T {
    p.max(T::lit(PROB_FLOOR))
}

pub fn wood_loss<T: Scalar>(batch: &BatchSlices<T>, cfg: &ScoreConfig<T>) -> Result<LossValue<T>> {
    batch.validate()?;
    let mut ce_term = T::zero();
    if !batch.ind.is_empty() {
        let mut sum = T::zero();
        for (f, k) in &batch.ind {
            sum += -floor(f[*k]).ln();
        }
        ce_term = sum / T::lit(batch.ind.len() as f64);
    }
    let mut ood_term = T::zero();
    if !batch.ood.is_empty() {
        let mut sum = T::zero();
        for f in &batch.ood {
            sum += wood_score(f, cfg)?;
        }
        ood_term = sum / T::lit(batch.ood.len() as f64);
    }
    Ok(LossValue {
        total: ce_term - batch.beta * ood_term,
        ce_term,
        ood_term,
    })
}

/// Gradient of the InD cross-entropy term for one sample: `-1 / (n f[k])` at
/// the label, zero elsewhere. Not centered; the softmax backward pass is
/// gauge-invariant.
pub fn grad_ind<T: Scalar>(f: &ProbVector<T>, label: usize, n_ind: usize) -> Result<Vec<T>> {
    if label >= f.k() {
        return Err(Error::Index { index: label, len: f.k() });
    }
    if n_ind == 0 {
        return Err(Error::Input("n_ind must be >= 1".into()));
    }
    let mut g = vec![T::zero(); f.k()];
    g[label] = -T::one() / (T::lit(n_ind as f64) * floor(f[label]));
    Ok(g)
}

/// Centered gradient of `-β/n · score(f)` for one OOD sample.
///
/// - Closed form, binary: `+β/n` at `k* = argmax f`.
/// - Closed form, dynamic: `β/n · (2f - 1)`.
/// - Sinkhorn: `-β/(λn) · (log v* + 1/2)`, with `v*` from the solve against
///   the minimizing class. This differentiates the regularized objective with
///   the cost matrix held fixed.
pub fn grad_ood<T: Scalar>(
    f: &ProbVector<T>,
    cfg: &ScoreConfig<T>,
    n_ood: usize,
    beta: T,
) -> Result<Vec<T>> {
    if n_ood == 0 {
        return Err(Error::Input("n_ood must be >= 1".into()));
    }
    let w = beta / T::lit(n_ood as f64);
    let raw = match (cfg.evaluation, cfg.matrix) {
        (Evaluation::ClosedForm, ScoreMatrix::Binary) => {
            let mut g = vec![T::zero(); f.k()];
            g[f.argmax()] = w;
            g
        }
        (Evaluation::ClosedForm, ScoreMatrix::Dynamic) => {
            let two = T::lit(2.0);
            f.iter().map(|&x| w * (two * x - T::one())).collect()
        }
        (Evaluation::Sinkhorn, matrix) => {
            let class = score_with_class(f, cfg)?.class;
            let (_, res) = onehot_transport(f, class, matrix, &cfg.sinkhorn)?;
            sinkhorn_gradient(&res, &cfg.sinkhorn)?
                .into_iter()
                .map(|g| -w * g)
                .collect()
        }
    };
    Ok(center(&raw))
}

/// Constants of the generalization bound, reported for logging.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundDiagnostics<T> {
    /// Largest cost-matrix entry used by this batch.
    pub alpha_m: T,
    /// Smallest clamped InD probability over samples and classes (1 if none).
    pub m: T,
}

pub fn bound_diagnostics<T: Scalar>(batch: &BatchSlices<T>, matrix: ScoreMatrix) -> BoundDiagnostics<T> {
    let alpha_m = match matrix {
        ScoreMatrix::Binary => T::one(),
        // Entries of the dynamic matrix are f[i] and 1 - f[i].
        ScoreMatrix::Dynamic => batch
            .ood
            .iter()
            .flat_map(|f| f.iter().map(|&x| x.max(T::one() - x)))
            .fold(T::zero(), T::max),
    };
    let m = batch
        .ind
        .iter()
        .flat_map(|(f, _)| f.iter().map(|&x| floor(x)))
        .fold(T::one(), T::min);
    BoundDiagnostics { alpha_m, m }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::fd_gradient;
    use crate::transport::SinkhornConfig;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn pv(x: &[f64]) -> ProbVector<f64> {
        ProbVector::new(x.to_vec()).unwrap()
    }

    fn closed(matrix: ScoreMatrix) -> ScoreConfig<f64> {
        ScoreConfig::new(matrix, Evaluation::ClosedForm)
    }

    #[test]
    fn loss_examples() {
        let b = BatchSlices::new(vec![(pv(&[0.5, 0.5]), 0)], vec![], 0.1).unwrap();
        let l = wood_loss(&b, &closed(ScoreMatrix::Dynamic)).unwrap();
        assert_abs_diff_eq!(l.total, std::f64::consts::LN_2, epsilon = 1e-12);
        assert_eq!(l.ood_term, 0.0);

        let b = BatchSlices::new(vec![], vec![ProbVector::uniform(10).unwrap()], 0.1).unwrap();
        let l = wood_loss(&b, &closed(ScoreMatrix::Dynamic)).unwrap();
        assert_abs_diff_eq!(l.total, -0.09, epsilon = 1e-12);
        assert_eq!(l.ce_term, 0.0);

        let b = BatchSlices::new(vec![(ProbVector::one_hot(2, 3).unwrap(), 2)], vec![], 0.1).unwrap();
        assert_eq!(wood_loss(&b, &closed(ScoreMatrix::Binary)).unwrap().total, 0.0);
    }

    #[test]
    fn batch_validation() {
        assert!(BatchSlices::<f64>::new(vec![], vec![], 0.1).is_err());
        assert!(matches!(
            BatchSlices::new(vec![(pv(&[0.5, 0.5]), 2)], vec![], 0.1),
            Err(Error::Index { .. })
        ));
        assert!(BatchSlices::new(vec![(pv(&[0.5, 0.5]), 0)], vec![], -1.0).is_err());
    }

    #[test]
    fn grad_ind_examples() {
        assert_eq!(grad_ind(&pv(&[0.5, 0.5]), 0, 1).unwrap(), vec![-2.0, 0.0]);
        assert_eq!(grad_ind(&ProbVector::<f64>::one_hot(0, 2).unwrap(), 0, 1).unwrap(), vec![-1.0, 0.0]);
        let g = grad_ind(&pv(&[0.25, 0.75]), 1, 2).unwrap();
        assert_eq!(g[0], 0.0);
        assert_abs_diff_eq!(g[1], -2.0 / 3.0, epsilon = 1e-15);
        // floor keeps the reciprocal finite
        assert!(grad_ind(&ProbVector::<f64>::one_hot(0, 2).unwrap(), 1, 1).unwrap()[1].is_finite());
    }

    #[test]
    fn grad_ood_closed_examples() {
        let u = ProbVector::<f64>::uniform(4).unwrap();
        let g = grad_ood(&u, &closed(ScoreMatrix::Dynamic), 1, 0.1).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-15));

        let e = ProbVector::<f64>::one_hot(0, 2).unwrap();
        let g = grad_ood(&e, &closed(ScoreMatrix::Dynamic), 1, 0.1).unwrap();
        assert_abs_diff_eq!(g[0], 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(g[1], -0.1, epsilon = 1e-15);

        let g = grad_ood(&pv(&[0.2, 0.5, 0.3]), &closed(ScoreMatrix::Binary), 2, 0.1).unwrap();
        assert_abs_diff_eq!(g[1], 0.05 * 2.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(g[0], -0.05 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn grad_ood_sinkhorn_matches_regularized_fd() {
        let f = pv(&[0.2, 0.5, 0.3]);
        let cfg = ScoreConfig {
            sinkhorn: SinkhornConfig { tol: 1e-14, ..SinkhornConfig::with_lambda(10.0) },
            ..ScoreConfig::new(ScoreMatrix::Binary, Evaluation::Sinkhorn)
        };
        let g = grad_ood(&f, &cfg, 1, 0.1).unwrap();
        let objective = |p: &[f64]| {
            let q = ProbVector::new(p.to_vec()).unwrap();
            -0.1 * onehot_transport(&q, 1, ScoreMatrix::Binary, &cfg.sinkhorn).unwrap().1.objective
        };
        let fd = fd_gradient(objective, &f, 1e-5).unwrap();
        for (a, b) in g.iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-6, "{g:?} vs {fd:?}");
        }
    }

    #[test]
    fn diagnostics() {
        let b = BatchSlices::new(vec![(pv(&[0.5, 0.3, 0.2]), 0)], vec![], 0.1).unwrap();
        let d = bound_diagnostics(&b, ScoreMatrix::Binary);
        assert_eq!(d.alpha_m, 1.0);
        assert_eq!(d.m, 0.2);
        let b = BatchSlices::new(vec![], vec![pv(&[0.9, 0.1])], 0.1).unwrap();
        let d = bound_diagnostics(&b, ScoreMatrix::Dynamic);
        assert_eq!(d.m, 1.0);
        assert_eq!(d.alpha_m, 0.9);
    }

    fn simplex(k: usize) -> impl Strategy<Value = ProbVector<f64>> {
        prop::collection::vec(0.01f64..1.0, k).prop_map(|x| {
            let s: f64 = x.iter().sum();
            ProbVector::new(x.iter().map(|v| v / s).collect()).unwrap()
        })
    }

    proptest! {
        #[test]
        fn decomposition_identity(fs in prop::collection::vec(simplex(4), 1..6), beta in 0.0f64..1.0) {
            let ind = fs.iter().enumerate().map(|(i, f)| (f.clone(), i % 4)).collect();
            let batch = BatchSlices::new(ind, fs.clone(), beta).unwrap();
            let l = wood_loss(&batch, &closed(ScoreMatrix::Binary)).unwrap();
            prop_assert!((l.total - (l.ce_term - beta * l.ood_term)).abs() <= 1e-12);
        }

        #[test]
        fn zero_beta_is_cross_entropy(fs in prop::collection::vec(simplex(3), 1..6)) {
            let ind: Vec<_> = fs.iter().enumerate().map(|(i, f)| (f.clone(), i % 3)).collect();
            let reference = ind.iter().map(|(f, k)| -f[*k].ln()).sum::<f64>() / ind.len() as f64;
            let batch = BatchSlices::new(ind, fs, 0.0).unwrap();
            let l = wood_loss(&batch, &closed(ScoreMatrix::Dynamic)).unwrap();
            prop_assert!((l.total - reference).abs() <= 1e-12);
        }

        #[test]
        fn higher_ood_score_lowers_loss(f in simplex(5)) {
            let cfg = closed(ScoreMatrix::Dynamic);
            let u = ProbVector::uniform(5).unwrap();
            prop_assume!(wood_score(&u, &cfg).unwrap() > wood_score(&f, &cfg).unwrap());
            let lf = wood_loss(&BatchSlices::new(vec![], vec![f], 0.1).unwrap(), &cfg).unwrap();
            let lu = wood_loss(&BatchSlices::new(vec![], vec![u], 0.1).unwrap(), &cfg).unwrap();
            prop_assert!(lu.total < lf.total);
        }

        #[test]
        fn closed_form_grads_match_fd(f in simplex(4)) {
            for kind in [ScoreMatrix::Binary, ScoreMatrix::Dynamic] {
                let cfg = closed(kind);
                let g = grad_ood(&f, &cfg, 1, 0.1).unwrap();
                let fd = fd_gradient(|p| {
                    -0.1 * match kind {
                        ScoreMatrix::Binary => 1.0 - p[f.argmax()],
                        ScoreMatrix::Dynamic => 1.0 - p.iter().map(|x| x * x).sum::<f64>(),
                    }
                }, &f, 1e-5).unwrap();
                for (a, b) in g.iter().zip(&fd) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }
        }
    }
}

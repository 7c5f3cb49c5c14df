//! Discrete optimal transport between distributions on `K` classes.
//!
//! A coupling `P` moves mass from `r1` (rows, `P 1 = r1`) to `r2` (columns,
//! `Pᵀ 1 = r2`); `M[i][j]` is the unit cost of moving mass from class `i` of
//! `r1` to class `j` of `r2`.
//!
//! Two routes are provided:
//!
//! - [`exact_wasserstein`]: the unregularized linear program, solved with a
//!   successive-shortest-path min-cost flow (closed form when a marginal is
//!   one-hot, since the coupling is then unique).
//! - [`sinkhorn_distance`]: the entropically regularized problem solved by
//!   Sinkhorn-Knopp scaling, in the scaled domain with an automatic fallback to
//!   log-domain iterations. The converged column scaling `v` yields the gradient
//!   of the regularized distance with respect to `r2` ([`sinkhorn_gradient`]).

use std::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest `K` accepted by the LP route of [`exact_wasserstein`].
pub const DEFAULT_LP_CAP: usize = 16;

/// Floor applied to `v` before taking logs in the gradient.
const LOG_FLOOR: f64 = 1e-300;

/// Sum tolerance for simplex membership in `f64`.
const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the probability simplex over `K >= 2` classes.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector<T> {
    values: Vec<T>,
}

impl<T: Scalar> ProbVector<T> {
    pub fn new(values: Vec<T>) -> Result<Self> {
        let k = values.len();
        if k < 2 {
            return Err(Error::Dimension(format!(
                "probability vector needs at least 2 classes, got {k}"
            )));
        }
        if let Some(bad) = values.iter().position(|x| !x.is_finite() || *x < T::zero()) {
            return Err(Error::Input(format!(
                "probability entry {bad} is {} (must be finite and >= 0)",
                values[bad]
            )));
        }
        let sum: T = values.iter().copied().sum();
        if (sum - T::one()).abs() > Self::sum_tolerance(k) {
            return Err(Error::Input(format!(
                "probability vector sums to {sum}, expected 1"
            )));
        }
        Ok(Self { values })
    }

    /// Tolerance on `|Σ - 1|`: `1e-9`, widened for low-precision scalars.
    pub fn sum_tolerance(k: usize) -> T {
        let widened = T::epsilon() * T::lit(8.0 * k as f64);
        T::lit(SIMPLEX_TOL).max(widened)
    }

    pub fn one_hot(class: usize, k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Dimension(format!("one-hot needs K >= 2, got {k}")));
        }
        if class >= k {
            return Err(Error::Index { index: class, len: k });
        }
        let mut values = vec![T::zero(); k];
        values[class] = T::one();
        Ok(Self { values })
    }

    pub fn uniform(k: usize) -> Result<Self> {
        if k < 2 {
            return Err(Error::Dimension(format!("uniform needs K >= 2, got {k}")));
        }
        let w = T::one() / T::lit(k as f64);
        Ok(Self { values: vec![w; k] })
    }

    pub fn k(&self) -> usize {
        self.values.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.values
    }

    pub fn into_vec(self) -> Vec<T> {
        self.values
    }

    /// Index of the largest entry; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &x) in self.values.iter().enumerate().skip(1) {
            if x > self.values[best] {
                best = i;
            }
        }
        best
    }

    /// `Some(k)` when the vector is exactly the one-hot vector of class `k`.
    pub fn one_hot_class(&self) -> Option<usize> {
        let mut hot = None;
        for (i, &x) in self.values.iter().enumerate() {
            if x == T::one() {
                if hot.is_some() {
                    return None;
                }
                hot = Some(i);
            } else if x != T::zero() {
                return None;
            }
        }
        hot
    }
}

impl<T> Deref for ProbVector<T> {
    type Target = [T];

    fn deref(&self) -> &[T] {
        &self.values
    }
}

/// Which construction a [`CostMatrix`] came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatrixKind {
    /// Zero diagonal, ones elsewhere. A metric.
    Binary,
    /// Built from a softmax output and a target class. Not a metric.
    Dynamic,
    /// Any nonnegative matrix supplied by the caller.
    General,
}

/// A `K x K` nonnegative cost matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix<T> {
    k: usize,
    entries: Vec<T>,
    kind: MatrixKind,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(k: usize, entries: Vec<T>, kind: MatrixKind) -> Result<Self> {
        if k < 2 {
            return Err(Error::Dimension(format!("cost matrix needs K >= 2, got {k}")));
        }
        if entries.len() != k * k {
            return Err(Error::Dimension(format!(
                "cost matrix of order {k} needs {} entries, got {}",
                k * k,
                entries.len()
            )));
        }
        if entries.iter().any(|x| !x.is_finite() || *x < T::zero()) {
            return Err(Error::Input("cost entries must be finite and >= 0".into()));
        }
        if kind == MatrixKind::Binary {
            for i in 0..k {
                for j in 0..k {
                    let want = if i == j { T::zero() } else { T::one() };
                    if entries[i * k + j] != want {
                        return Err(Error::Input(format!(
                            "binary matrix entry ({i},{j}) must be {want}"
                        )));
                    }
                }
            }
        }
        Ok(Self { k, entries, kind })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.entries[i * self.k + j]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    pub fn column(&self, j: usize) -> Vec<T> {
        (0..self.k).map(|i| self.get(i, j)).collect()
    }

    pub fn transpose(&self) -> Self {
        let k = self.k;
        let mut entries = vec![T::zero(); k * k];
        for i in 0..k {
            for j in 0..k {
                entries[j * k + i] = self.entries[i * k + j];
            }
        }
        Self {
            k,
            entries,
            kind: self.kind,
        }
    }

    pub fn max_entry(&self) -> T {
        self.entries.iter().copied().fold(T::zero(), T::max)
    }
}

/// Parameters of the Sinkhorn-Knopp iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig<T> {
    /// Inverse entropic regularization weight; larger tracks the LP more closely.
    pub lambda: T,
    pub max_iter: usize,
    /// Threshold on the max-norm relative change of `v` between iterations.
    pub tol: T,
    /// Permits falling back to log-domain iterations when the scaled domain
    /// under- or overflows.
    pub log_domain: bool,
}

impl<T: Scalar> Default for SinkhornConfig<T> {
    fn default() -> Self {
        Self {
            lambda: T::lit(50.0),
            max_iter: 1000,
            tol: T::lit(1e-9),
            log_domain: true,
        }
    }
}

impl<T: Scalar> SinkhornConfig<T> {
    pub fn with_lambda(lambda: T) -> Self {
        Self {
            lambda,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > T::zero()) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be > 0, got {}", self.lambda)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be >= 1".into()));
        }
        if !(self.tol > T::zero()) {
            return Err(Error::Config(format!("tol must be > 0, got {}", self.tol)));
        }
        Ok(())
    }
}

/// Representation of the scaling vectors held in a [`TransportResult`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// `u`, `v` are the scaling vectors themselves.
    Scaled,
    /// `u`, `v` hold `log u`, `log v` (`-inf` where the marginal is zero).
    Log,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportResult<T> {
    /// Transport term `⟨P, M⟩` of the regularized optimum.
    pub value: T,
    /// Regularized objective `⟨P, M⟩ - h(P)/λ`, with `h` the Shannon entropy.
    pub objective: T,
    pub u: Vec<T>,
    pub v: Vec<T>,
    pub domain: Domain,
    pub iterations: usize,
    pub converged: bool,
}

impl<T: Scalar> TransportResult<T> {
    /// `log v`, flooring zero entries of the scaled representation.
    pub fn log_v(&self) -> Result<Vec<T>> {
        let floor = T::lit(LOG_FLOOR).max(T::min_positive_value());
        match self.domain {
            Domain::Scaled => self
                .v
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    if x.is_nan() || x < T::zero() || x.is_infinite() {
                        Err(Error::Numeric(format!("scaling v[{j}] = {x} is not usable")))
                    } else {
                        Ok(x.max(floor).ln())
                    }
                })
                .collect(),
            Domain::Log => self
                .v
                .iter()
                .enumerate()
                .map(|(j, &x)| {
                    if x.is_nan() || x == T::infinity() {
                        Err(Error::Numeric(format!("log scaling v[{j}] = {x}")))
                    } else {
                        Ok(x.max(floor.ln()))
                    }
                })
                .collect(),
        }
    }

    /// The optimal coupling `P = diag(u) exp(-λM) diag(v)`, row-major.
    pub fn plan(&self, m: &CostMatrix<T>, lambda: T) -> Vec<T> {
        let k = m.k();
        let mut p = vec![T::zero(); k * k];
        for i in 0..k {
            for j in 0..k {
                p[i * k + j] = match self.domain {
                    Domain::Scaled => self.u[i] * (-lambda * m.get(i, j)).exp() * self.v[j],
                    Domain::Log => (self.u[i] - lambda * m.get(i, j) + self.v[j]).exp(),
                };
            }
        }
        p
    }
}

fn check_pair<T: Scalar>(r1: &ProbVector<T>, r2: &ProbVector<T>, m: &CostMatrix<T>) -> Result<usize> {
    let k = r1.k();
    if r2.k() != k || m.k() != k {
        return Err(Error::Dimension(format!(
            "marginals of length {} and {} with a cost matrix of order {}",
            r1.k(),
            r2.k(),
            m.k()
        )));
    }
    Ok(k)
}

/// Unregularized Wasserstein distance `min ⟨P, M⟩` over couplings of `r1`, `r2`.
pub fn exact_wasserstein<T: Scalar>(
    r1: &ProbVector<T>,
    r2: &ProbVector<T>,
    m: &CostMatrix<T>,
) -> Result<T> {
    exact_wasserstein_capped(r1, r2, m, DEFAULT_LP_CAP)
}

pub fn exact_wasserstein_capped<T: Scalar>(
    r1: &ProbVector<T>,
    r2: &ProbVector<T>,
    m: &CostMatrix<T>,
    cap: usize,
) -> Result<T> {
    let k = check_pair(r1, r2, m)?;
    // A one-hot marginal admits exactly one coupling.
    if let Some(c) = r2.one_hot_class() {
        return Ok((0..k).map(|i| m.get(i, c) * r1[i]).sum());
    }
    if let Some(r) = r1.one_hot_class() {
        return Ok((0..k).map(|j| m.get(r, j) * r2[j]).sum());
    }
    if k > cap {
        return Err(Error::Capacity(format!(
            "LP transport is capped at K = {cap}, got {k}"
        )));
    }
    let flow = min_cost_flow(r1, r2, m)?;
    Ok(flow
        .iter()
        .enumerate()
        .map(|(idx, &p)| p * m.entries()[idx])
        .sum())
}

struct Arc<T> {
    to: usize,
    cap: T,
    cost: T,
}

/// Successive shortest augmenting paths on the bipartite transport network.
/// Returns the optimal coupling, row-major.
fn min_cost_flow<T: Scalar>(r1: &[T], r2: &[T], m: &CostMatrix<T>) -> Result<Vec<T>> {
    let k = r1.len();
    let source = 2 * k;
    let sink = 2 * k + 1;
    let n = 2 * k + 2;
    let mut arcs: Vec<Arc<T>> = Vec::with_capacity(2 * (k * k + 2 * k));
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut add = |arcs: &mut Vec<Arc<T>>, from: usize, to: usize, cap: T, cost: T| {
        adj[from].push(arcs.len());
        arcs.push(Arc { to, cap, cost });
        adj[to].push(arcs.len());
        arcs.push(Arc {
            to: from,
            cap: T::zero(),
            cost: -cost,
        });
    };
    for i in 0..k {
        add(&mut arcs, source, i, r1[i], T::zero());
        add(&mut arcs, k + i, sink, r2[i], T::zero());
    }
    let mut middle = vec![0usize; k * k];
    for i in 0..k {
        for j in 0..k {
            middle[i * k + j] = arcs.len();
            add(&mut arcs, i, k + j, T::lit(2.0), m.get(i, j));
        }
    }

    let eps = T::epsilon() * T::lit(64.0);
    let mut remaining = T::one();
    let mut rounds = 0usize;
    while remaining > eps {
        rounds += 1;
        if rounds > 8 * k * k + 16 {
            return Err(Error::Numeric("min-cost flow failed to terminate".into()));
        }
        // Bellman-Ford: residual reverse arcs carry negative costs.
        let mut dist = vec![T::infinity(); n];
        let mut via: Vec<Option<usize>> = vec![None; n];
        dist[source] = T::zero();
        for _ in 0..n {
            let mut changed = false;
            for from in 0..n {
                if dist[from] == T::infinity() {
                    continue;
                }
                for &a in &adj[from] {
                    let arc = &arcs[a];
                    if arc.cap > eps && dist[from] + arc.cost < dist[arc.to] - eps {
                        dist[arc.to] = dist[from] + arc.cost;
                        via[arc.to] = Some(a);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        if dist[sink] == T::infinity() {
            break;
        }
        let mut push = remaining;
        let mut node = sink;
        while node != source {
            let a = via[node].expect("path recorded");
            push = push.min(arcs[a].cap);
            node = arcs[a ^ 1].to;
        }
        let mut node = sink;
        while node != source {
            let a = via[node].expect("path recorded");
            arcs[a].cap -= push;
            arcs[a ^ 1].cap += push;
            node = arcs[a ^ 1].to;
        }
        remaining -= push;
    }
    Ok(middle.iter().map(|&a| arcs[a ^ 1].cap).collect())
}

/// Entropically regularized transport by Sinkhorn-Knopp scaling.
///
/// Iterates `u = r1 / (K v)`, `v = r2 / (Kᵀ u)` with `K = exp(-λM)` and the
/// convention `0/0 = 0` so one-hot marginals propagate zeros. If the scaled
/// domain under- or overflows and `cfg.log_domain` is set, the same iteration
/// is rerun on log-scalings. A run that exhausts `max_iter` is returned with
/// `converged = false`.
pub fn sinkhorn_distance<T: Scalar>(
    r1: &ProbVector<T>,
    r2: &ProbVector<T>,
    m: &CostMatrix<T>,
    cfg: &SinkhornConfig<T>,
) -> Result<TransportResult<T>> {
    check_pair(r1, r2, m)?;
    cfg.validate()?;
    match sinkhorn_scaled(r1, r2, m, cfg) {
        Err(Error::Numeric(_)) if cfg.log_domain => sinkhorn_log(r1, r2, m, cfg),
        other => other,
    }
}

/// Scaled-domain iteration only; never falls back.
pub fn sinkhorn_scaled<T: Scalar>(
    r1: &ProbVector<T>,
    r2: &ProbVector<T>,
    m: &CostMatrix<T>,
    cfg: &SinkhornConfig<T>,
) -> Result<TransportResult<T>> {
    let k = check_pair(r1, r2, m)?;
    cfg.validate()?;
    let kernel: Vec<T> = m.entries().iter().map(|&c| (-cfg.lambda * c).exp()).collect();
    if kernel.iter().any(|&x| x == T::zero()) {
        return Err(Error::Numeric(format!(
            "kernel exp(-λM) underflows at λ = {}",
            cfg.lambda
        )));
    }

    let mut u = vec![T::zero(); k];
    let mut v = vec![T::one(); k];
    let mut next = vec![T::zero(); k];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iter {
        iterations += 1;
        scale_rows(&kernel, &v, r1, &mut u)?;
        scale_cols(&kernel, &u, r2, &mut next)?;
        let mut delta = T::zero();
        for (new, old) in next.iter().zip(&v) {
            let top = new.abs().max(old.abs());
            if top > T::zero() {
                delta = delta.max((*new - *old).abs() / top);
            }
        }
        std::mem::swap(&mut v, &mut next);
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    scale_rows(&kernel, &v, r1, &mut u)?;

    let mut value = T::zero();
    let mut neg_entropy = T::zero();
    for i in 0..k {
        for j in 0..k {
            let p = u[i] * kernel[i * k + j] * v[j];
            if p > T::zero() {
                value += p * m.get(i, j);
                neg_entropy += p * p.ln();
            }
        }
    }
    if !value.is_finite() || !neg_entropy.is_finite() {
        return Err(Error::Numeric("non-finite transport value".into()));
    }
    Ok(TransportResult {
        value,
        objective: value + neg_entropy / cfg.lambda,
        u,
        v,
        domain: Domain::Scaled,
        iterations,
        converged,
    })
}

/// `0/0 = 0`; a positive numerator over a zero (or non-finite) denominator is an error.
#[inline]
fn guarded_div<T: Scalar>(num: T, den: T) -> Result<T> {
    if num == T::zero() {
        return Ok(T::zero());
    }
    let q = num / den;
    if den == T::zero() || !q.is_finite() {
        return Err(Error::Numeric(format!("scaling division {num} / {den}")));
    }
    Ok(q)
}

fn scale_rows<T: Scalar>(kernel: &[T], v: &[T], r1: &[T], u: &mut [T]) -> Result<()> {
    let k = v.len();
    for i in 0..k {
        let kv: T = (0..k).map(|j| kernel[i * k + j] * v[j]).sum();
        u[i] = guarded_div(r1[i], kv)?;
    }
    Ok(())
}

fn scale_cols<T: Scalar>(kernel: &[T], u: &[T], r2: &[T], v: &mut [T]) -> Result<()> {
    let k = u.len();
    for j in 0..k {
        let ktu: T = (0..k).map(|i| kernel[i * k + j] * u[i]).sum();
        v[j] = guarded_div(r2[j], ktu)?;
    }
    Ok(())
}

fn log_sum_exp<T: Scalar>(terms: impl Iterator<Item = T> + Clone) -> T {
    let top = terms.clone().fold(T::neg_infinity(), T::max);
    if top == T::neg_infinity() {
        return top;
    }
    top + terms.map(|t| (t - top).exp()).sum::<T>().ln()
}

/// Log-domain iteration only. `u`, `v` of the result hold log-scalings.
pub fn sinkhorn_log<T: Scalar>(
    r1: &ProbVector<T>,
    r2: &ProbVector<T>,
    m: &CostMatrix<T>,
    cfg: &SinkhornConfig<T>,
) -> Result<TransportResult<T>> {
    let k = check_pair(r1, r2, m)?;
    cfg.validate()?;
    let log_kernel: Vec<T> = m.entries().iter().map(|&c| -cfg.lambda * c).collect();
    let log_r1: Vec<T> = r1.iter().map(|x| x.ln()).collect();
    let log_r2: Vec<T> = r2.iter().map(|x| x.ln()).collect();

    let mut f = vec![T::zero(); k];
    let mut g = vec![T::zero(); k];
    let mut next = vec![T::zero(); k];
    let mut iterations = 0;
    let mut converged = false;
    let update_f = |g: &[T], f: &mut [T]| -> Result<()> {
        for i in 0..k {
            f[i] = if r1[i] == T::zero() {
                T::neg_infinity()
            } else {
                let lse = log_sum_exp((0..k).map(|j| log_kernel[i * k + j] + g[j]));
                if lse == T::neg_infinity() {
                    return Err(Error::Numeric(format!("row {i} has no reachable mass")));
                }
                log_r1[i] - lse
            };
        }
        Ok(())
    };
    while iterations < cfg.max_iter {
        iterations += 1;
        update_f(&g, &mut f)?;
        for j in 0..k {
            next[j] = if r2[j] == T::zero() {
                T::neg_infinity()
            } else {
                let lse = log_sum_exp((0..k).map(|i| log_kernel[i * k + j] + f[i]));
                if lse == T::neg_infinity() {
                    return Err(Error::Numeric(format!("column {j} has no reachable mass")));
                }
                log_r2[j] - lse
            };
        }
        // Same criterion as the scaled domain: |Δv| / max(v_old, v_new) = 1 - exp(-|Δ log v|).
        let mut delta = T::zero();
        for (new, old) in next.iter().zip(&g) {
            let d = if *new == T::neg_infinity() && *old == T::neg_infinity() {
                T::zero()
            } else {
                -(-(*new - *old).abs()).exp_m1()
            };
            delta = delta.max(d);
        }
        std::mem::swap(&mut g, &mut next);
        if delta < cfg.tol {
            converged = true;
            break;
        }
    }
    update_f(&g, &mut f)?;

    let mut value = T::zero();
    let mut neg_entropy = T::zero();
    for i in 0..k {
        for j in 0..k {
            let log_p = f[i] + log_kernel[i * k + j] + g[j];
            if log_p > T::neg_infinity() {
                let p = log_p.exp();
                value += p * m.get(i, j);
                neg_entropy += p * log_p;
            }
        }
    }
    if !value.is_finite() || !neg_entropy.is_finite() {
        return Err(Error::Numeric("non-finite transport value".into()));
    }
    Ok(TransportResult {
        value,
        objective: value + neg_entropy / cfg.lambda,
        u: f,
        v: g,
        domain: Domain::Log,
        iterations,
        converged,
    })
}

/// Gradient of the regularized distance with respect to `r2`,
/// `(log v + 1/2) / λ`.
///
/// Dual potentials are defined only up to an additive constant; compare
/// gradients after [`center`].
pub fn sinkhorn_gradient<T: Scalar>(
    result: &TransportResult<T>,
    cfg: &SinkhornConfig<T>,
) -> Result<Vec<T>> {
    if !result.converged {
        return Err(Error::Numeric(format!(
            "Sinkhorn did not converge after {} iterations (λ = {})",
            result.iterations, cfg.lambda
        )));
    }
    let half = T::lit(0.5);
    Ok(result
        .log_v()?
        .into_iter()
        .map(|lv| (lv + half) / cfg.lambda)
        .collect())
}

/// Subtracts the mean so gradients from different gauges compare directly.
pub fn center<T: Scalar>(g: &[T]) -> Vec<T> {
    let mean = g.iter().copied().sum::<T>() / T::lit(g.len() as f64);
    g.iter().map(|&x| x - mean).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum AxiomViolation {
    Symmetry { sample: usize, gap: f64 },
    Triangle { sample: usize, excess: f64 },
    Identity { sample: usize, value: f64 },
    Separation { sample: usize, value: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AxiomReport {
    pub checked: usize,
    pub violations: Vec<AxiomViolation>,
}

/// Checks the distance axioms of the exact Wasserstein distance on the sampled
/// triples. Only binary matrices qualify.
pub fn metric_axioms_check<T: Scalar>(
    samples: &[(ProbVector<T>, ProbVector<T>, ProbVector<T>)],
    m: &CostMatrix<T>,
) -> Result<AxiomReport> {
    if m.kind() != MatrixKind::Binary {
        return Err(Error::Input(format!(
            "metric axioms hold only for the binary matrix, got {:?}",
            m.kind()
        )));
    }
    let tol = T::lit(1e-9).max(T::epsilon() * T::lit(64.0));
    let mut report = AxiomReport::default();
    for (s, (a, b, c)) in samples.iter().enumerate() {
        let ab = exact_wasserstein(a, b, m)?;
        let ba = exact_wasserstein(b, a, m)?;
        let bc = exact_wasserstein(b, c, m)?;
        let ac = exact_wasserstein(a, c, m)?;
        let aa = exact_wasserstein(a, a, m)?;
        if (ab - ba).abs() > tol {
            report.violations.push(AxiomViolation::Symmetry {
                sample: s,
                gap: (ab - ba).abs().to_f64_lossy(),
            });
        }
        if ac > ab + bc + tol {
            report.violations.push(AxiomViolation::Triangle {
                sample: s,
                excess: (ac - ab - bc).to_f64_lossy(),
            });
        }
        if aa.abs() > tol {
            report.violations.push(AxiomViolation::Identity {
                sample: s,
                value: aa.to_f64_lossy(),
            });
        }
        let differs = a.iter().zip(b.iter()).any(|(x, y)| (*x - *y).abs() > tol);
        if differs && ab <= T::zero() {
            report.violations.push(AxiomViolation::Separation {
                sample: s,
                value: ab.to_f64_lossy(),
            });
        }
        report.checked += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn pv(x: &[f64]) -> ProbVector<f64> {
        ProbVector::new(x.to_vec()).unwrap()
    }

    fn binary(k: usize) -> CostMatrix<f64> {
        let e = (0..k * k)
            .map(|idx| if idx / k == idx % k { 0.0 } else { 1.0 })
            .collect();
        CostMatrix::new(k, e, MatrixKind::Binary).unwrap()
    }

    #[test]
    fn prob_vector_rejects_bad_input() {
        assert!(matches!(ProbVector::<f64>::new(vec![1.0]), Err(Error::Dimension(_))));
        assert!(ProbVector::<f64>::new(vec![0.5, 0.6]).is_err());
        assert!(ProbVector::<f64>::new(vec![-0.1, 1.1]).is_err());
        assert!(ProbVector::<f64>::new(vec![f64::NAN, 1.0]).is_err());
        assert!(ProbVector::<f64>::new(vec![0.5, 0.5 + 5e-10]).is_ok());
    }

    #[test]
    fn binary_kind_is_checked() {
        assert!(CostMatrix::new(2, vec![0.0, 1.0, 0.5, 0.0], MatrixKind::Binary).is_err());
        assert!(CostMatrix::new(2, vec![0.0, 1.0, 1.0], MatrixKind::General).is_err());
        assert!(CostMatrix::new(2, vec![0.0, -1.0, 1.0, 0.0], MatrixKind::General).is_err());
    }

    #[test]
    fn exact_identical_one_hots_is_zero() {
        let e = ProbVector::<f64>::one_hot(0, 3).unwrap();
        assert_eq!(exact_wasserstein(&e, &e, &binary(3)).unwrap(), 0.0);
    }

    #[test]
    fn exact_singleton_coupling() {
        let r1 = pv(&[0.5, 0.3, 0.2]);
        let e = ProbVector::one_hot(0, 3).unwrap();
        assert_abs_diff_eq!(exact_wasserstein(&r1, &e, &binary(3)).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn exact_two_class_lp() {
        let w = exact_wasserstein(&pv(&[0.5, 0.5]), &pv(&[0.3, 0.7]), &binary(2)).unwrap();
        assert_abs_diff_eq!(w, 0.2, epsilon = 1e-12);
    }

    #[test]
    fn exact_errors() {
        let a = pv(&[0.5, 0.5]);
        let b = pv(&[0.2, 0.3, 0.5]);
        assert!(matches!(exact_wasserstein(&a, &b, &binary(2)), Err(Error::Dimension(_))));
        let r = ProbVector::<f64>::uniform(17).unwrap();
        let s = ProbVector::new((0..17).map(|i| if i == 0 { 0.2 } else { 0.05 }).collect()).unwrap();
        assert!(matches!(exact_wasserstein(&r, &s, &binary(17)), Err(Error::Capacity(_))));
        // one-hot marginals bypass the cap
        let e = ProbVector::one_hot(3, 17).unwrap();
        assert!(exact_wasserstein(&r, &e, &binary(17)).is_ok());
    }

    #[test]
    fn sinkhorn_identical_one_hots() {
        let e = ProbVector::<f64>::one_hot(1, 3).unwrap();
        let res = sinkhorn_distance(&e, &e, &binary(3), &SinkhornConfig::with_lambda(10.0)).unwrap();
        assert!(res.converged);
        assert!(res.value.abs() <= 1e-8);
    }

    #[test]
    fn sinkhorn_tracks_lp() {
        let res = sinkhorn_distance(
            &pv(&[0.5, 0.5]),
            &pv(&[0.3, 0.7]),
            &binary(2),
            &SinkhornConfig::with_lambda(100.0),
        )
        .unwrap();
        assert!(res.converged);
        assert!((res.value - 0.2).abs() <= 0.02 * 0.2, "{}", res.value);

        let res = sinkhorn_distance(
            &pv(&[0.5, 0.3, 0.2]),
            &ProbVector::one_hot(0, 3).unwrap(),
            &binary(3),
            &SinkhornConfig::with_lambda(50.0),
        )
        .unwrap();
        assert!((res.value - 0.5).abs() <= 0.01);
    }

    #[test]
    fn non_convergence_is_reported() {
        let cfg = SinkhornConfig {
            max_iter: 1,
            ..SinkhornConfig::with_lambda(100.0)
        };
        let res = sinkhorn_distance(&pv(&[0.5, 0.5]), &pv(&[0.3, 0.7]), &binary(2), &cfg).unwrap();
        assert!(!res.converged);
        assert!(sinkhorn_gradient(&res, &cfg).is_err());
    }

    #[test]
    fn underflow_falls_back_to_log_domain() {
        let cfg = SinkhornConfig::with_lambda(2000.0);
        let a = pv(&[0.5, 0.5]);
        let b = pv(&[0.3, 0.7]);
        let res = sinkhorn_distance(&a, &b, &binary(2), &cfg).unwrap();
        assert_eq!(res.domain, Domain::Log);
        let strict = SinkhornConfig {
            log_domain: false,
            ..cfg
        };
        assert!(matches!(
            sinkhorn_distance(&a, &b, &binary(2), &strict),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn symmetric_uniform_gradient_centers_to_zero() {
        let u = ProbVector::<f64>::uniform(2).unwrap();
        let cfg = SinkhornConfig::default();
        let res = sinkhorn_distance(&u, &u, &binary(2), &cfg).unwrap();
        let g = center(&sinkhorn_gradient(&res, &cfg).unwrap());
        assert_abs_diff_eq!(g[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(g[1], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn moving_mass_off_the_label_costs() {
        let e = ProbVector::<f64>::one_hot(0, 3).unwrap();
        let near = pv(&[0.98, 0.01, 0.01]);
        let cfg = SinkhornConfig::with_lambda(10.0);
        let res = sinkhorn_distance(&e, &near, &binary(3), &cfg).unwrap();
        let g = center(&sinkhorn_gradient(&res, &cfg).unwrap());
        assert!(g[1] > g[0] && g[2] > g[0], "{g:?}");
    }

    #[test]
    fn works_in_single_precision() {
        let m = CostMatrix::<f32>::new(2, vec![0.0, 1.0, 1.0, 0.0], MatrixKind::Binary).unwrap();
        let a = ProbVector::new(vec![0.5f32, 0.5]).unwrap();
        let b = ProbVector::new(vec![0.3f32, 0.7]).unwrap();
        let cfg = SinkhornConfig {
            tol: 1e-6,
            ..SinkhornConfig::with_lambda(20.0f32)
        };
        let res = sinkhorn_distance(&a, &b, &m, &cfg).unwrap();
        assert!(res.converged);
        assert!((res.value - 0.2).abs() < 0.01);
        assert!((exact_wasserstein(&a, &b, &m).unwrap() - 0.2).abs() < 1e-6);
    }

    #[test]
    fn axioms_require_binary() {
        let m = CostMatrix::new(2, vec![0.5, 0.5, 0.5, 0.5], MatrixKind::Dynamic).unwrap();
        assert!(metric_axioms_check::<f64>(&[], &m).is_err());
        let r = pv(&[0.3, 0.7]);
        let rep = metric_axioms_check(&[(r.clone(), r.clone(), pv(&[0.9, 0.1]))], &binary(2)).unwrap();
        assert!(rep.violations.is_empty());
    }
}

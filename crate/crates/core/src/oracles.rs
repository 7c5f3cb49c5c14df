//! Brute-force references for tests: a dense simplex solver for the transport
//! LP, simplex-tangent finite differences, and the all-pairs AUROC.
//!
//! Nothing here calls into the production modules; inputs are plain `f64`
//! slices so the oracles stay independent of the code they check.

use crate::error::{Error, Result};

pub const LP_ORACLE_CAP: usize = 16;

#[derive(Debug, Clone)]
pub struct LpSolution {
    pub value: f64,
    /// Optimal coupling, row-major: rows follow `r1`, columns follow `r2`.
    pub coupling: Vec<f64>,
}

/// Solves `min ⟨P, M⟩` s.t. `P 1 = r1`, `Pᵀ 1 = r2`, `P >= 0` with a
/// two-phase dense tableau simplex under Bland's rule.
pub fn lp_transport(r1: &[f64], r2: &[f64], m: &[f64]) -> Result<LpSolution> {
    let k = r1.len();
    if r2.len() != k || m.len() != k * k {
        return Err(Error::Dimension("lp oracle shape mismatch".into()));
    }
    if k > LP_ORACLE_CAP {
        return Err(Error::Capacity(format!(
            "lp oracle is capped at K = {LP_ORACLE_CAP}, got {k}"
        )));
    }
    let nvar = k * k;
    // Row sums for every i, column sums for all but the last j (redundant).
    let nrow = 2 * k - 1;
    let ncol = nvar + nrow + 1;
    let rhs = ncol - 1;
    let mut t = vec![vec![0.0f64; ncol]; nrow];
    for i in 0..k {
        for j in 0..k {
            t[i][i * k + j] = 1.0;
        }
        t[i][rhs] = r1[i];
    }
    for j in 0..k - 1 {
        for i in 0..k {
            t[k + j][i * k + j] = 1.0;
        }
        t[k + j][rhs] = r2[j];
    }
    let mut basis: Vec<usize> = (0..nrow).map(|r| nvar + r).collect();
    for (r, row) in t.iter_mut().enumerate() {
        row[nvar + r] = 1.0;
    }

    // Phase one: minimize the sum of artificials.
    let mut phase1 = vec![0.0; ncol];
    for a in nvar..nvar + nrow {
        phase1[a] = 1.0;
    }
    run_simplex(&mut t, &mut basis, &phase1, nvar + nrow)?;
    let infeasibility: f64 = basis
        .iter()
        .enumerate()
        .filter(|(_, &b)| b >= nvar)
        .map(|(r, _)| t[r][rhs])
        .sum();
    if infeasibility > 1e-9 {
        return Err(Error::Numeric(format!("lp oracle infeasible ({infeasibility})")));
    }
    // Drive zero-level artificials out where a structural pivot exists.
    for r in 0..nrow {
        if basis[r] >= nvar {
            if let Some(c) = (0..nvar).find(|&c| t[r][c].abs() > 1e-12) {
                pivot(&mut t, &mut basis, r, c);
            }
        }
    }

    let mut cost = vec![0.0; ncol];
    cost[..nvar].copy_from_slice(m);
    run_simplex(&mut t, &mut basis, &cost, nvar)?;

    let mut coupling = vec![0.0; nvar];
    for (r, &b) in basis.iter().enumerate() {
        if b < nvar {
            coupling[b] = t[r][rhs];
        }
    }
    let value = coupling.iter().zip(m).map(|(p, c)| p * c).sum();
    Ok(LpSolution { value, coupling })
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize) {
    let p = t[row][col];
    for x in t[row].iter_mut() {
        *x /= p;
    }
    let pivot_row = t[row].clone();
    for (r, line) in t.iter_mut().enumerate() {
        if r != row {
            let f = line[col];
            if f != 0.0 {
                for (x, y) in line.iter_mut().zip(&pivot_row) {
                    *x -= f * y;
                }
            }
        }
    }
    basis[row] = col;
}

/// Minimizes `cost · x`; only columns below `enter_limit` may enter the basis.
fn run_simplex(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    enter_limit: usize,
) -> Result<()> {
    let rhs = t[0].len() - 1;
    for _ in 0..10_000 {
        // Reduced costs from the current basis.
        let entering = (0..enter_limit).find(|&c| {
            if basis.contains(&c) {
                return false;
            }
            let reduced = cost[c]
                - basis
                    .iter()
                    .enumerate()
                    .map(|(r, &b)| cost[b] * t[r][c])
                    .sum::<f64>();
            reduced < -1e-12
        });
        let Some(col) = entering else {
            return Ok(());
        };
        let mut leave: Option<(usize, f64)> = None;
        for r in 0..t.len() {
            if t[r][col] > 1e-12 {
                let ratio = t[r][rhs] / t[r][col];
                let better = match leave {
                    None => true,
                    Some((lr, best)) => {
                        ratio < best - 1e-15 || (ratio <= best + 1e-15 && basis[r] < basis[lr])
                    }
                };
                if better {
                    leave = Some((r, ratio));
                }
            }
        }
        let Some((row, _)) = leave else {
            return Err(Error::Numeric("lp oracle unbounded".into()));
        };
        pivot(t, basis, row, col);
    }
    Err(Error::Numeric("lp oracle exceeded pivot budget".into()))
}

/// Orthonormal basis of `{t : Σ t = 0}` (Helmert vectors).
pub fn simplex_tangent_basis(k: usize) -> Vec<Vec<f64>> {
    (1..k)
        .map(|j| {
            let norm = ((j * (j + 1)) as f64).sqrt();
            let mut t = vec![0.0; k];
            for x in t.iter_mut().take(j) {
                *x = 1.0 / norm;
            }
            t[j] = -(j as f64) / norm;
            t
        })
        .collect()
}

/// Central differences of `f` along the simplex tangent basis, returned as a
/// zero-mean ambient vector (the tangent projection of the gradient).
pub fn fd_gradient(f: impl Fn(&[f64]) -> f64, point: &[f64], step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0) {
        return Err(Error::Input(format!("finite-difference step must be > 0, got {step}")));
    }
    let k = point.len();
    let mut grad = vec![0.0; k];
    for t in simplex_tangent_basis(k) {
        let plus: Vec<f64> = point.iter().zip(&t).map(|(x, d)| x + step * d).collect();
        let minus: Vec<f64> = point.iter().zip(&t).map(|(x, d)| x - step * d).collect();
        let slope = (f(&plus) - f(&minus)) / (2.0 * step);
        for (g, d) in grad.iter_mut().zip(&t) {
            *g += slope * d;
        }
    }
    Ok(grad)
}

/// `(wins + ties / 2) / (n_ind * n_ood)` by explicit double loop.
pub fn pairwise_auroc(ind: &[f64], ood: &[f64]) -> Result<f64> {
    if ind.is_empty() || ood.is_empty() {
        return Err(Error::Input("pairwise auroc needs non-empty score lists".into()));
    }
    let mut wins = 0u64;
    let mut ties = 0u64;
    for &o in ood {
        for &i in ind {
            if o > i {
                wins += 1;
            } else if o == i {
                ties += 1;
            }
        }
    }
    Ok((wins as f64 + 0.5 * ties as f64) / (ind.len() as f64 * ood.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn binary(k: usize) -> Vec<f64> {
        (0..k * k).map(|i| if i / k == i % k { 0.0 } else { 1.0 }).collect()
    }

    #[test]
    fn one_hot_forces_singleton_coupling() {
        let sol = lp_transport(&[0.5, 0.3, 0.2], &[1.0, 0.0, 0.0], &binary(3)).unwrap();
        assert!((sol.value - 0.5).abs() < 1e-12);
        for i in 0..3 {
            assert!((sol.coupling[i * 3] - [0.5, 0.3, 0.2][i]).abs() < 1e-12);
            assert!(sol.coupling[i * 3 + 1].abs() < 1e-12);
        }
    }

    #[test]
    fn two_class_is_half_l1() {
        for (a, b) in [(0.5, 0.3), (0.1, 0.9), (0.42, 0.42), (1.0, 0.0)] {
            let sol = lp_transport(&[a, 1.0 - a], &[b, 1.0 - b], &binary(2)).unwrap();
            let half_l1 = ((a - b).abs() + ((1.0 - a) - (1.0 - b)).abs()) / 2.0;
            assert!((sol.value - half_l1).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_marginals_are_diagonal() {
        let r = [0.1, 0.2, 0.3, 0.4];
        let sol = lp_transport(&r, &r, &binary(4)).unwrap();
        assert!(sol.value.abs() < 1e-12);
        for i in 0..4 {
            assert!((sol.coupling[i * 4 + i] - r[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn cap_and_step_errors() {
        let r = vec![1.0 / 17.0; 17];
        assert!(matches!(lp_transport(&r, &r, &binary(17)), Err(Error::Capacity(_))));
        assert!(fd_gradient(|x| x[0], &[0.5, 0.5], 0.0).is_err());
        assert!(pairwise_auroc(&[], &[1.0]).is_err());
    }

    #[test]
    fn tangent_basis_is_orthonormal() {
        let b = simplex_tangent_basis(5);
        for (i, s) in b.iter().enumerate() {
            assert!(s.iter().sum::<f64>().abs() < 1e-15);
            for (j, t) in b.iter().enumerate() {
                let dot: f64 = s.iter().zip(t).map(|(x, y)| x * y).sum();
                assert!((dot - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn fd_of_quadratic() {
        // f(x) = Σ c_i x_i^2, ∇f = 2 c ⊙ x, projected to zero mean.
        let c = [1.0, 3.0, -2.0, 0.5];
        let x = [0.1, 0.2, 0.3, 0.4];
        let g = fd_gradient(|p| p.iter().zip(&c).map(|(a, b)| b * a * a).sum(), &x, 1e-5).unwrap();
        let raw: Vec<f64> = x.iter().zip(&c).map(|(a, b)| 2.0 * a * b).collect();
        let mean = raw.iter().sum::<f64>() / 4.0;
        for (gi, ri) in g.iter().zip(&raw) {
            assert!((gi - (ri - mean)).abs() <= 1e-6 * (ri - mean).abs().max(1e-3));
        }
    }

    #[test]
    fn fd_of_closed_forms() {
        let f = [0.25; 4];
        let g = fd_gradient(|p| 1.0 - p.iter().map(|x| x * x).sum::<f64>(), &f, 1e-5).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-9));
        // 1 - f[k]: centered gradient of -e_k.
        let g = fd_gradient(|p| 1.0 - p[2], &[0.1, 0.2, 0.3, 0.4], 1e-5).unwrap();
        let want = [0.25, 0.25, -0.75, 0.25];
        for (a, b) in g.iter().zip(want) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(pairwise_auroc(&[0.1, 0.2], &[0.8, 0.9]).unwrap(), 1.0);
        assert_eq!(pairwise_auroc(&[1.0, 2.0, 2.0], &[1.0, 2.0, 2.0]).unwrap(), 0.5);
        assert_eq!(pairwise_auroc(&[1.0, 2.0, 3.0, 4.0], &[2.5, 5.0]).unwrap(), 0.75);
    }
}

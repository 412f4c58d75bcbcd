//! Exact type-l Wasserstein distance between small discrete distributions.

use crate::error::{Error, Result};
use crate::scenario::DiscreteDistribution;

/// Largest `n * m` accepted by [`wasserstein_distance`].
pub const MAX_PLAN_SIZE: usize = 10_000;

const EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct TransportSolution {
    /// `Σ c_ij π_ij` at the optimum.
    pub cost: f64,
    /// Row-major `n x m` plan.
    pub plan: Vec<Vec<f64>>,
}

struct Tableau {
    rows: Vec<Vec<f64>>,
    rhs: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn pivot(&mut self, r: usize, col: usize, obj: &mut [f64], obj_val: &mut f64) {
        let p = self.rows[r][col];
        for v in self.rows[r].iter_mut() {
            *v /= p;
        }
        self.rhs[r] /= p;
        let prow = self.rows[r].clone();
        let prhs = self.rhs[r];
        for i in 0..self.rows.len() {
            if i == r {
                continue;
            }
            let f = self.rows[i][col];
            if f != 0.0 {
                for (v, pv) in self.rows[i].iter_mut().zip(&prow) {
                    *v -= f * pv;
                }
                self.rhs[i] -= f * prhs;
            }
        }
        let f = obj[col];
        if f != 0.0 {
            for (v, pv) in obj.iter_mut().zip(&prow) {
                *v -= f * pv;
            }
            *obj_val -= f * prhs;
        }
        self.basis[r] = col;
    }

    /// Bland's rule iterations on reduced costs `obj` over columns `< allowed`.
    fn optimize(&mut self, obj: &mut [f64], obj_val: &mut f64, allowed: usize) -> Result<()> {
        loop {
            let Some(col) = (0..allowed).find(|&j| obj[j] < -EPS) else {
                return Ok(());
            };
            let mut leave: Option<(usize, f64)> = None;
            for (r, row) in self.rows.iter().enumerate() {
                if row[col] > EPS {
                    let ratio = self.rhs[r] / row[col];
                    let better = match leave {
                        None => true,
                        Some((lr, lv)) => {
                            ratio < lv - EPS || (ratio <= lv + EPS && self.basis[r] < self.basis[lr])
                        }
                    };
                    if better {
                        leave = Some((r, ratio));
                    }
                }
            }
            let Some((r, _)) = leave else {
                return Err(Error::Numerical("transport problem is unbounded".into()));
            };
            self.pivot(r, col, obj, obj_val);
        }
    }
}

/// Minimizes `c·x` subject to `A x = b`, `x >= 0` with `b >= 0` by the two-phase simplex method.
pub fn simplex_equality(a: &[Vec<f64>], b: &[f64], c: &[f64]) -> Result<(f64, Vec<f64>)> {
    let nr = a.len();
    let nv = c.len();
    if b.len() != nr || a.iter().any(|r| r.len() != nv) {
        return Err(Error::dim("inconsistent linear program"));
    }
    let mut t = Tableau {
        rows: a
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let mut row = r.clone();
                row.extend((0..nr).map(|j| if i == j { 1.0 } else { 0.0 }));
                row
            })
            .collect(),
        rhs: b.to_vec(),
        basis: (nv..nv + nr).collect(),
    };
    if b.iter().any(|v| *v < 0.0) {
        return Err(Error::domain("right-hand side must be nonnegative"));
    }

    // Phase 1: minimize the sum of artificials.
    let mut obj = vec![0.0; nv + nr];
    let mut val = 0.0;
    for (row, rhs) in t.rows.iter().zip(&t.rhs) {
        for j in 0..nv {
            obj[j] -= row[j];
        }
        val -= rhs;
    }
    t.optimize(&mut obj, &mut val, nv)?;
    let scale = b.iter().map(|v| v.abs()).sum::<f64>().max(1.0);
    if -val > 1e-9 * scale {
        return Err(Error::domain("transport constraints are infeasible"));
    }
    for r in 0..nr {
        if t.basis[r] >= nv {
            if let Some(col) = (0..nv).find(|&j| t.rows[r][j].abs() > 1e-9) {
                let mut dummy = vec![0.0; nv + nr];
                let mut dv = 0.0;
                t.pivot(r, col, &mut dummy, &mut dv);
            }
        }
    }

    // Phase 2.
    let mut obj: Vec<f64> = c.iter().copied().chain(std::iter::repeat_n(0.0, nr)).collect();
    let mut val = 0.0;
    for r in 0..nr {
        let cb = if t.basis[r] < nv { c[t.basis[r]] } else { 0.0 };
        if cb != 0.0 {
            for (o, v) in obj.iter_mut().zip(&t.rows[r]) {
                *o -= cb * v;
            }
            val -= cb * t.rhs[r];
        }
    }
    t.optimize(&mut obj, &mut val, nv)?;
    let mut x = vec![0.0; nv];
    for (r, bidx) in t.basis.iter().enumerate() {
        if *bidx < nv {
            x[*bidx] = t.rhs[r].max(0.0);
        }
    }
    let cost = c.iter().zip(&x).map(|(ci, xi)| ci * xi).sum();
    Ok((cost, x))
}

/// Optimal transport between `p` and `q` under cost `||ξ_i - ζ_j||^l`.
pub fn optimal_transport(p: &DiscreteDistribution, q: &DiscreteDistribution, l: f64) -> Result<TransportSolution> {
    if !(l >= 1.0) {
        return Err(Error::domain("order l must be at least 1"));
    }
    if p.dim() != q.dim() && !(p.is_empty() || q.is_empty()) {
        return Err(Error::dim("distributions live in different dimensions"));
    }
    let (n, m) = (p.len(), q.len());
    if n == 0 || m == 0 {
        return Err(Error::domain("distributions must be nonempty"));
    }
    if n * m > MAX_PLAN_SIZE {
        return Err(Error::domain(format!("{n} x {m} plan exceeds the exact-solver limit")));
    }
    if p.probabilities.iter().chain(&q.probabilities).any(|v| !(*v >= 0.0)) {
        return Err(Error::domain("probabilities must be nonnegative"));
    }
    let sp: f64 = p.probabilities.iter().sum();
    let sq: f64 = q.probabilities.iter().sum();
    if (sp - sq).abs() > 1e-9 {
        return Err(Error::domain(format!("mass mismatch: {sp} vs {sq}")));
    }

    let cost: Vec<f64> = p
        .locations
        .iter()
        .flat_map(|a| {
            q.locations.iter().map(move |b| {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                d2.sqrt().powf(l)
            })
        })
        .collect();
    // Row sums for every source, column sums for all but the last target (implied).
    let mut a = Vec::with_capacity(n + m - 1);
    let mut b = Vec::with_capacity(n + m - 1);
    for i in 0..n {
        let mut row = vec![0.0; n * m];
        row[i * m..(i + 1) * m].fill(1.0);
        a.push(row);
        b.push(p.probabilities[i]);
    }
    for j in 0..m - 1 {
        let mut row = vec![0.0; n * m];
        for i in 0..n {
            row[i * m + j] = 1.0;
        }
        a.push(row);
        b.push(q.probabilities[j]);
    }
    let (value, x) = simplex_equality(&a, &b, &cost)?;
    Ok(TransportSolution { cost: value, plan: x.chunks(m).map(|c| c.to_vec()).collect() })
}

/// Type-l Wasserstein distance: the l-th root of the optimal transport cost.
pub fn wasserstein_distance(p: &DiscreteDistribution, q: &DiscreteDistribution, l: f64) -> Result<f64> {
    let sol = optimal_transport(p, q, l)?;
    Ok(sol.cost.max(0.0).powf(1.0 / l))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[(f64, f64)]) -> DiscreteDistribution {
        DiscreteDistribution {
            locations: points.iter().map(|p| vec![p.0]).collect(),
            probabilities: points.iter().map(|p| p.1).collect(),
        }
    }

    #[test]
    fn identical_is_zero() {
        let p = line(&[(0.0, 0.3), (1.0, 0.7)]);
        assert!(wasserstein_distance(&p, &p, 2.0).unwrap().abs() < 1e-12);
    }

    #[test]
    fn split_mass() {
        let p = line(&[(0.0, 0.5), (2.0, 0.5)]);
        let q = line(&[(1.0, 1.0)]);
        assert!((wasserstein_distance(&p, &q, 2.0).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_dimensional_w1_matches_cdf_area() {
        let p = line(&[(0.0, 0.2), (1.0, 0.3), (3.0, 0.5)]);
        let q = line(&[(0.5, 0.5), (2.0, 0.5)]);
        // ∫|F - G| over the merged breakpoints.
        let expected = 0.2 * 0.5 + 0.3 * 0.5 + 0.0 * 1.0 + 0.5 * 1.0;
        assert!((wasserstein_distance(&p, &q, 1.0).unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn mass_mismatch_rejected() {
        let p = line(&[(0.0, 0.5)]);
        let q = line(&[(1.0, 1.0)]);
        assert!(matches!(wasserstein_distance(&p, &q, 2.0), Err(Error::Domain(_))));
    }
}

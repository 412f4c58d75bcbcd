//! Brute-force enumeration oracles for transport and clustering.

use crate::dense::{solve, Mat};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn combinations(n: usize, r: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(r);
    fn rec(start: usize, n: usize, r: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == r {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, r, cur, out);
            cur.pop();
        }
    }
    rec(0, n, r, &mut cur, &mut out);
    out
}

/// Minimum transport cost over all basic feasible plans of the transportation
/// polytope, found by solving every square basis system of the `n + m - 1`
/// independent marginal constraints. Only sensible for tiny `n * m`.
pub fn transport_by_vertices(p: &[f64], q: &[f64], cost: &Mat) -> f64 {
    let (n, m) = (p.len(), q.len());
    let nv = n * m;
    let r = n + m - 1;
    let mut rows: Mat = Vec::with_capacity(r);
    let mut rhs = Vec::with_capacity(r);
    for i in 0..n {
        rows.push((0..nv).map(|v| if v / m == i { 1.0 } else { 0.0 }).collect());
        rhs.push(p[i]);
    }
    for j in 0..m - 1 {
        rows.push((0..nv).map(|v| if v % m == j { 1.0 } else { 0.0 }).collect());
        rhs.push(q[j]);
    }
    let mut best = f64::INFINITY;
    for basis in combinations(nv, r) {
        let a: Mat = rows.iter().map(|row| basis.iter().map(|&c| row[c]).collect()).collect();
        let Some(x) = solve(&a, &rhs) else { continue };
        if x.iter().any(|v| !v.is_finite() || *v < -1e-12) {
            continue;
        }
        // Reject near-singular bases whose solution violates the constraints.
        let mut full = vec![0.0; nv];
        for (c, v) in basis.iter().zip(&x) {
            full[*c] = *v;
        }
        let ok = (0..n).all(|i| ((0..m).map(|j| full[i * m + j]).sum::<f64>() - p[i]).abs() < 1e-9)
            && (0..m).all(|j| ((0..n).map(|i| full[i * m + j]).sum::<f64>() - q[j]).abs() < 1e-9);
        if !ok {
            continue;
        }
        let c: f64 = (0..nv).map(|v| full[v] * cost[v / m][v % m]).sum();
        best = best.min(c);
    }
    best
}

/// Calls `visit` with every set partition of `0..n` into at most `max_blocks`
/// blocks, encoded as a restricted growth string (`labels[0] = 0`,
/// `labels[i] <= 1 + max(labels[..i])`).
pub fn for_each_partition(n: usize, max_blocks: usize, mut visit: impl FnMut(&[usize])) {
    fn rec(i: usize, n: usize, used: usize, max_blocks: usize, labels: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
        if i == n {
            visit(labels);
            return;
        }
        let top = (used + 1).min(max_blocks);
        for b in 0..top {
            labels.push(b);
            rec(i + 1, n, used.max(b + 1), max_blocks, labels, visit);
            labels.pop();
        }
    }
    let mut labels = Vec::with_capacity(n);
    rec(0, n, 0, max_blocks, &mut labels, &mut visit);
}

/// Smallest within-cluster weighted squared error over all partitions into at most
/// `max_blocks` blocks, each represented by its weighted mean.
pub fn best_partition_cost(points: &[Vec<f64>], weights: &[f64], max_blocks: usize) -> f64 {
    let d = points[0].len();
    let mut best = f64::INFINITY;
    for_each_partition(points.len(), max_blocks, |labels| {
        let nb = labels.iter().max().map_or(0, |v| v + 1);
        let mut sums = vec![vec![0.0; d]; nb];
        let mut mass = vec![0.0; nb];
        for ((p, w), l) in points.iter().zip(weights).zip(labels) {
            mass[*l] += w;
            for (s, v) in sums[*l].iter_mut().zip(p) {
                *s += w * v;
            }
        }
        let cents: Vec<Vec<f64>> = sums
            .iter()
            .zip(&mass)
            .map(|(s, m)| s.iter().map(|v| v / m).collect())
            .collect();
        let cost: f64 = points.iter().zip(weights).zip(labels).map(|((p, w), l)| w * sq_dist(p, &cents[*l])).sum();
        best = best.min(cost);
    });
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bell_numbers() {
        let mut count = 0;
        for_each_partition(5, 5, |_| count += 1);
        assert_eq!(count, 52);
        let mut two = 0;
        for_each_partition(5, 2, |_| two += 1);
        assert_eq!(two, 16);
    }

    #[test]
    fn split_mass_vertices() {
        let cost = vec![vec![1.0], vec![1.0]];
        assert!((transport_by_vertices(&[0.5, 0.5], &[1.0], &cost) - 1.0).abs() < 1e-14);
    }
}

//! Nelder–Mead simplex search with optional box constraints.

use crate::model::Interval;

#[derive(Debug, Clone)]
pub struct NelderMeadOptions {
    pub max_evals: usize,
    /// Stop when the spread of simplex values falls below this (absolute).
    pub f_tol: f64,
    /// ... and the simplex diameter falls below this.
    pub x_tol: f64,
    /// Initial simplex edge, relative to the box width when bounds are given.
    pub initial_step: f64,
    /// Number of fresh simplices rebuilt around the incumbent after convergence.
    pub restarts: usize,
}

impl Default for NelderMeadOptions {
    fn default() -> Self {
        Self { max_evals: 20_000, f_tol: 1e-12, x_tol: 1e-10, initial_step: 0.1, restarts: 3 }
    }
}

#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub evals: usize,
}

fn sanitize(v: f64) -> f64 {
    if v.is_nan() {
        f64::INFINITY
    } else {
        v
    }
}

fn project(x: &mut [f64], bounds: Option<&[Interval]>) {
    if let Some(b) = bounds {
        for (xi, bi) in x.iter_mut().zip(b) {
            *xi = bi.clamp(*xi);
        }
    }
}

/// Minimizes `f` from `x0`. Trial points are clamped into `bounds` when present.
///
/// The returned value never exceeds `f(x0)`.
pub fn nelder_mead<F>(mut f: F, x0: &[f64], bounds: Option<&[Interval]>, opts: &NelderMeadOptions) -> Minimum
where
    F: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        sanitize(f(x))
    };

    let mut best_x = x0.to_vec();
    project(&mut best_x, bounds);
    let mut best_f = eval(&best_x, &mut evals);
    if n == 0 {
        return Minimum { x: best_x, value: best_f, evals };
    }

    for _round in 0..=opts.restarts {
        let round_start = best_f;
        // Initial simplex around the incumbent.
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(best_x.clone(), best_f)];
        for i in 0..n {
            let mut p = best_x.clone();
            let step = match bounds {
                Some(b) => opts.initial_step * b[i].width().max(1e-12),
                None => opts.initial_step * best_x[i].abs().max(1.0),
            };
            p[i] += step;
            if let Some(b) = bounds {
                if p[i] > b[i].hi {
                    p[i] = best_x[i] - step;
                }
            }
            project(&mut p, bounds);
            let fp = eval(&p, &mut evals);
            simplex.push((p, fp));
        }

        while evals < opts.max_evals {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let f_lo = simplex[0].1;
            let f_hi = simplex[n].1;
            let diam = simplex[1..]
                .iter()
                .map(|(p, _)| p.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
                .fold(0.0, f64::max);
            if (f_hi - f_lo).abs() <= opts.f_tol && diam <= opts.x_tol {
                break;
            }
            if diam == 0.0 && f_hi.is_finite() {
                break;
            }

            let mut centroid = vec![0.0; n];
            for (p, _) in &simplex[..n] {
                for (c, v) in centroid.iter_mut().zip(p) {
                    *c += v / n as f64;
                }
            }
            let worst = simplex[n].0.clone();
            let along = |t: f64| {
                let mut p: Vec<f64> = centroid.iter().zip(&worst).map(|(c, w)| c + t * (c - w)).collect();
                project(&mut p, bounds);
                p
            };

            let xr = along(1.0);
            let fr = eval(&xr, &mut evals);
            if fr < simplex[0].1 {
                let xe = along(2.0);
                let fe = eval(&xe, &mut evals);
                simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (xr, fr);
            } else {
                let (xc, fc) = if fr < f_hi {
                    let xc = along(0.5);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                } else {
                    let xc = along(-0.5);
                    let fc = eval(&xc, &mut evals);
                    (xc, fc)
                };
                if fc < f_hi.min(fr) {
                    simplex[n] = (xc, fc);
                } else {
                    let x_best = simplex[0].0.clone();
                    for item in simplex.iter_mut().skip(1) {
                        let mut p: Vec<f64> = x_best.iter().zip(&item.0).map(|(b, v)| b + 0.5 * (v - b)).collect();
                        project(&mut p, bounds);
                        let fp = eval(&p, &mut evals);
                        *item = (p, fp);
                    }
                }
            }
        }

        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if simplex[0].1 < best_f {
            best_f = simplex[0].1;
            best_x = simplex[0].0.clone();
        }
        if evals >= opts.max_evals || !(best_f < round_start) {
            break;
        }
    }

    Minimum { x: best_x, value: best_f, evals }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock() {
        let f = |x: &[f64]| (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2);
        let m = nelder_mead(f, &[-1.2, 1.0], None, &NelderMeadOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn respects_bounds() {
        let b = [Interval::new(0.0, 1.0), Interval::new(0.0, 1.0)];
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + (x[1] + 2.0).powi(2);
        let m = nelder_mead(f, &[0.5, 0.5], Some(&b), &NelderMeadOptions::default());
        assert!((m.x[0] - 1.0).abs() < 1e-8 && m.x[1].abs() < 1e-8, "{m:?}");
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| if x[0] > 0.3 { f64::NAN } else { x[0].sin() };
        let m = nelder_mead(f, &[0.2], None, &NelderMeadOptions::default());
        assert!(m.value <= 0.2f64.sin());
    }
}

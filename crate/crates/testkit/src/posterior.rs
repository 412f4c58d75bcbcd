//! Gradient-matching quantities for the scalar decay model `ẋ = -θ x`, assembled by hand.

use std::f64::consts::PI;

use crate::dense::{add, dot, identity, inverse_logdet, matmul, matvec, transpose, zeros, Mat};

/// Squared-exponential kernel blocks: `(C, ∂C/∂t, ∂C/∂t', ∂²C/∂t∂t')`.
pub fn kernel_blocks(times: &[f64], sigma_f: f64, ell: f64) -> (Mat, Mat, Mat, Mat) {
    let n = times.len();
    let (mut c, mut dc, mut cd, mut ddc) = (zeros(n, n), zeros(n, n), zeros(n, n), zeros(n, n));
    let l2 = ell * ell;
    for i in 0..n {
        for j in 0..n {
            let d = times[i] - times[j];
            let k = sigma_f * sigma_f * (-d * d / (2.0 * l2)).exp();
            c[i][j] = k;
            dc[i][j] = -d / l2 * k;
            cd[i][j] = d / l2 * k;
            ddc[i][j] = (1.0 / l2 - d * d / (l2 * l2)) * k;
        }
    }
    (c, dc, cd, ddc)
}

fn jitter(a: &Mat) -> Mat {
    let n = a.len();
    let tr: f64 = (0..n).map(|i| a[i][i]).sum();
    add(a, &identity(n), 1e-10 * (tr / n as f64).abs())
}

#[derive(Debug, Clone)]
pub struct DecaySetup {
    pub times: Vec<f64>,
    pub y: Vec<f64>,
    pub sigma_f: f64,
    pub length_scale: f64,
    pub sigma_obs: f64,
    pub lambda: f64,
    pub bounds: (f64, f64),
}

struct Pieces {
    mu: f64,
    c_inv: Mat,
    c_logdet: f64,
    d: Mat,
    g_inv: Mat,
    g_logdet: f64,
}

impl DecaySetup {
    fn pieces(&self) -> Pieces {
        let n = self.times.len();
        let mu = self.y.iter().sum::<f64>() / n as f64;
        let (c, dc, cd, ddc) = kernel_blocks(&self.times, self.sigma_f, self.length_scale);
        let (c_inv, c_logdet) = inverse_logdet(&jitter(&c)).expect("C invertible");
        let d = matmul(&dc, &c_inv);
        let a = add(&ddc, &matmul(&d, &cd), -1.0);
        let a_sym = add(&a, &transpose(&a), 1.0).iter().map(|r| r.iter().map(|v| 0.5 * v).collect()).collect();
        let g = add(&jitter(&a_sym), &identity(n), self.lambda);
        let (g_inv, g_logdet) = inverse_logdet(&g).expect("A + λI invertible");
        Pieces { mu, c_inv, c_logdet, d, g_inv, g_logdet }
    }

    /// Full log density at latent path `x` and rate `theta`, including every normalizing constant.
    pub fn log_density(&self, x: &[f64], theta: f64) -> f64 {
        if theta < self.bounds.0 || theta > self.bounds.1 {
            return f64::NEG_INFINITY;
        }
        let n = x.len() as f64;
        let p = self.pieces();
        let z: Vec<f64> = x.iter().map(|v| v - p.mu).collect();
        let prior = -(self.bounds.1 - self.bounds.0).ln();
        let gp = -0.5 * dot(&z, &matvec(&p.c_inv, &z)) - 0.5 * p.c_logdet - 0.5 * n * (2.0 * PI).ln();
        let s2 = self.sigma_obs * self.sigma_obs;
        let lik = -0.5 * self.y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / s2
            - n * self.sigma_obs.ln()
            - 0.5 * n * (2.0 * PI).ln();
        let m = matvec(&p.d, &z);
        let r: Vec<f64> = x.iter().zip(&m).map(|(xi, mi)| -theta * xi - mi).collect();
        let grad = -0.5 * dot(&r, &matvec(&p.g_inv, &r)) - 0.5 * p.g_logdet - 0.5 * n * (2.0 * PI).ln();
        prior + gp + lik + grad
    }

    /// `log ∫ p(x, θ) dx` up to a θ-independent constant. All terms are Gaussian in `x`.
    pub fn log_marginal(&self, theta: f64) -> f64 {
        if theta < self.bounds.0 || theta > self.bounds.1 {
            return f64::NEG_INFINITY;
        }
        let n = self.times.len();
        let p = self.pieces();
        let s2 = self.sigma_obs * self.sigma_obs;
        let mvec = vec![p.mu; n];
        let mm = add(&p.d, &identity(n), theta);
        let mt_g = matmul(&transpose(&mm), &p.g_inv);
        let prec = add(&add(&p.c_inv, &identity(n), 1.0 / s2), &matmul(&mt_g, &mm), 1.0);
        let dmu = matvec(&p.d, &mvec);
        let b: Vec<f64> = matvec(&p.c_inv, &mvec)
            .iter()
            .zip(&self.y)
            .zip(matvec(&mt_g, &dmu))
            .map(|((a, y), c)| a + y / s2 + c)
            .collect();
        let c = dot(&mvec, &matvec(&p.c_inv, &mvec)) + dot(&self.y, &self.y) / s2 + dot(&dmu, &matvec(&p.g_inv, &dmu));
        let (pinv, plogdet) = inverse_logdet(&prec).expect("posterior precision invertible");
        -0.5 * plogdet + 0.5 * dot(&b, &matvec(&pinv, &b)) - 0.5 * c
    }

    /// Posterior mass of θ in `bins` equal bins over the bounds, by midpoint quadrature.
    pub fn binned_posterior(&self, bins: usize, points_per_bin: usize) -> Vec<f64> {
        let (lo, hi) = self.bounds;
        let w = (hi - lo) / bins as f64;
        let logs: Vec<Vec<f64>> = (0..bins)
            .map(|b| {
                (0..points_per_bin)
                    .map(|k| self.log_marginal(lo + w * (b as f64 + (k as f64 + 0.5) / points_per_bin as f64)))
                    .collect()
            })
            .collect();
        let top = logs.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let mass: Vec<f64> = logs.iter().map(|r| r.iter().map(|v| (v - top).exp()).sum()).collect();
        let total: f64 = mass.iter().sum();
        mass.iter().map(|m| m / total).collect()
    }
}

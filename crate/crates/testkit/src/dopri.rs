//! Adaptive Dormand–Prince 5(4) integrator with tight tolerances.

const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates `ẏ = f(t, y)` from `t0` to `t1` with mixed error control
/// `|err_i| <= atol + rtol |y_i|`. Lands exactly on `t1`.
pub fn integrate<F>(f: F, t0: f64, y0: &[f64], t1: f64, rtol: f64, atol: f64) -> Vec<f64>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let n = y0.len();
    let mut y = y0.to_vec();
    let mut t = t0;
    let mut h = ((t1 - t0) / 100.0).abs().max(1e-6);
    let mut k = vec![vec![0.0; n]; 7];
    let mut tmp = vec![0.0; n];
    while t < t1 {
        if t + h > t1 {
            h = t1 - t;
        }
        f(t, &y, &mut k[0]);
        for s in 1..7 {
            for i in 0..n {
                let mut acc = y[i];
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += h * A[s][j] * kj[i];
                }
                tmp[i] = acc;
            }
            f(t + C[s] * h, &tmp, &mut k[s]);
        }
        let mut err: f64 = 0.0;
        let mut y5 = vec![0.0; n];
        for i in 0..n {
            let mut a5 = y[i];
            let mut a4 = y[i];
            for s in 0..7 {
                a5 += h * B5[s] * k[s][i];
                a4 += h * B4[s] * k[s][i];
            }
            y5[i] = a5;
            let sc = atol + rtol * y[i].abs().max(a5.abs());
            err = err.max(((a5 - a4) / sc).abs());
        }
        if err <= 1.0 {
            t += h;
            y = y5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    y
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let y = integrate(|_, y, d| d[0] = -y[0], 0.0, &[1.0], 3.0, 1e-12, 1e-14);
        assert!((y[0] - (-3f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn harmonic_oscillator() {
        let y = integrate(|_, y, d| { d[0] = y[1]; d[1] = -y[0]; }, 0.0, &[1.0, 0.0], 10.0, 1e-12, 1e-14);
        assert!((y[0] - 10f64.cos()).abs() < 1e-10);
    }
}

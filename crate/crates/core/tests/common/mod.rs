//! Oracles for scalar linear-Gaussian systems shared by integration tests.
#![allow(dead_code)]

/// `x(t+1) = a x + N(0, q)`, `y = c x + N(0, r)`, `x(1) ~ N(m0, p0)`.
#[derive(Debug, Clone, Copy)]
pub struct Lg {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

/// Filtered and RTS-smoothed means.
pub fn kalman_rts(lg: &Lg, ys: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = ys.len();
    let (mut m, mut p) = (lg.m0, lg.p0);
    let (mut fm, mut fp, mut pm, mut pp) = (vec![], vec![], vec![], vec![]);
    for &y in ys {
        pm.push(m);
        pp.push(p);
        let k = p * lg.c / (lg.c * lg.c * p + lg.r);
        m += k * (y - lg.c * m);
        p *= 1.0 - k * lg.c;
        fm.push(m);
        fp.push(p);
        m *= lg.a;
        p = lg.a * lg.a * p + lg.q;
    }
    let mut sm = fm.clone();
    for t in (0..n - 1).rev() {
        let j = fp[t] * lg.a / pp[t + 1];
        sm[t] = fm[t] + j * (sm[t + 1] - pm[t + 1]);
    }
    (fm, sm)
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - mean).powi(2) / var)
}

/// Expected complete-data log-likelihood `E[log p(x, y | theta) | y, theta_k]`
/// by forward-backward recursions on a uniform grid.
pub fn grid_q(lg: &Lg, theta: &Lg, ys: &[f64], lo: f64, hi: f64, points: usize) -> f64 {
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
    let n = ys.len();
    let trans: Vec<f64> = (0..points * points).map(|k| log_normal(xs[k % points], lg.a * xs[k / points], lg.q).exp()).collect();
    let lik = |t: usize| xs.iter().map(|x| log_normal(ys[t], lg.c * x, lg.r).exp()).collect::<Vec<f64>>();
    let mut alpha = vec![vec![0.0; points]; n];
    for i in 0..points {
        alpha[0][i] = log_normal(xs[i], lg.m0, lg.p0).exp();
    }
    let l0 = lik(0);
    for i in 0..points {
        alpha[0][i] *= l0[i];
    }
    normalize(&mut alpha[0]);
    for t in 1..n {
        let l = lik(t);
        let mut next = vec![0.0; points];
        for i in 0..points {
            for j in 0..points {
                next[j] += alpha[t - 1][i] * trans[i * points + j];
            }
        }
        for j in 0..points {
            next[j] *= l[j];
        }
        normalize(&mut next);
        alpha[t] = next;
    }
    let mut beta = vec![vec![1.0; points]; n];
    for t in (0..n - 1).rev() {
        let l = lik(t + 1);
        let mut b = vec![0.0; points];
        for i in 0..points {
            b[i] = (0..points).map(|j| trans[i * points + j] * l[j] * beta[t + 1][j]).sum();
        }
        normalize(&mut b);
        beta[t] = b;
    }
    let mut q = 0.0;
    for t in 0..n {
        let mut g: Vec<f64> = (0..points).map(|i| alpha[t][i] * beta[t][i]).collect();
        normalize(&mut g);
        if t == 0 {
            q += (0..points).map(|i| g[i] * log_normal(xs[i], theta.m0, theta.p0)).sum::<f64>();
        }
        q += (0..points).map(|i| g[i] * log_normal(ys[t], theta.c * xs[i], theta.r)).sum::<f64>();
        if t + 1 < n {
            let l = lik(t + 1);
            let mut total = 0.0;
            let mut acc = 0.0;
            for i in 0..points {
                for j in 0..points {
                    let w = alpha[t][i] * trans[i * points + j] * l[j] * beta[t + 1][j];
                    total += w;
                    acc += w * log_normal(xs[j], theta.a * xs[i], theta.q);
                }
            }
            q += acc / total;
        }
    }
    q
}

fn normalize(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    v.iter_mut().for_each(|x| *x /= s);
}

//! Closed-form oracles shared by unit tests.

/// Scalar `x(t+1) = a x + N(0, q)`, `y = c x + N(0, r)`, `x(1) ~ N(m0, p0)`.
#[derive(Debug, Clone, Copy)]
pub struct LinearGaussian {
    pub a: f64,
    pub c: f64,
    pub q: f64,
    pub r: f64,
    pub m0: f64,
    pub p0: f64,
}

impl Default for LinearGaussian {
    fn default() -> Self {
        Self { a: 0.8, c: 1.0, q: 0.5, r: 0.5, m0: 0.0, p0: 1.0 }
    }
}

pub struct KalmanOutput {
    pub means: Vec<f64>,
    pub vars: Vec<f64>,
    pub pred_means: Vec<f64>,
    pub pred_vars: Vec<f64>,
}

pub fn kalman_filter(lg: &LinearGaussian, ys: &[f64]) -> KalmanOutput {
    let (mut m, mut p) = (lg.m0, lg.p0);
    let mut out = KalmanOutput { means: vec![], vars: vec![], pred_means: vec![], pred_vars: vec![] };
    for &y in ys {
        out.pred_means.push(m);
        out.pred_vars.push(p);
        let k = p * lg.c / (lg.c * lg.c * p + lg.r);
        m += k * (y - lg.c * m);
        p *= 1.0 - k * lg.c;
        out.means.push(m);
        out.vars.push(p);
        m *= lg.a;
        p = lg.a * lg.a * p + lg.q;
    }
    out
}

/// Smoothed means, variances and lag-one covariances `Cov(x(t+1), x(t))`.
pub fn rts_full(lg: &LinearGaussian, kf: &KalmanOutput) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = kf.means.len();
    let (mut ms, mut ps) = (kf.means.clone(), kf.vars.clone());
    let mut cross = vec![0.0; n.saturating_sub(1)];
    for t in (0..n - 1).rev() {
        let j = kf.vars[t] * lg.a / kf.pred_vars[t + 1];
        ms[t] = kf.means[t] + j * (ms[t + 1] - kf.pred_means[t + 1]);
        ps[t] = kf.vars[t] + j * j * (ps[t + 1] - kf.pred_vars[t + 1]);
        cross[t] = j * ps[t + 1];
    }
    (ms, ps, cross)
}

pub fn rts_smoother(lg: &LinearGaussian, kf: &KalmanOutput) -> Vec<f64> {
    rts_full(lg, kf).0
}

/// `est[r][t]` replicate estimates against `oracle[t]`. Returns whether the
/// time-averaged bias lies within 3 standard errors, and the fraction of
/// time points whose bias lies within 3 standard errors.
pub fn replicate_bias_check(est: &[Vec<f64>], oracle: &[f64]) -> (bool, f64) {
    let reps = est.len() as f64;
    let horizon = oracle.len();
    let se_of = |vals: &[f64]| {
        let mean = vals.iter().sum::<f64>() / reps;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (reps - 1.0);
        (mean, (var / reps).sqrt())
    };
    let mut inside = 0;
    for t in 0..horizon {
        let col: Vec<f64> = est.iter().map(|e| e[t] - oracle[t]).collect();
        let (bias, se) = se_of(&col);
        if bias.abs() <= 3.0 * se {
            inside += 1;
        }
    }
    let averaged: Vec<f64> = est.iter().map(|e| e.iter().zip(oracle).map(|(a, b)| a - b).sum::<f64>() / horizon as f64).collect();
    let (bias, se) = se_of(&averaged);
    (bias.abs() <= 3.0 * se, inside as f64 / horizon as f64)
}

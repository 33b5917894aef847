//! Contraction certificates and the feasible parameter set of the M-step.
//!
//! A parameter vector is accepted when some symmetric `P > 0` and
//! `kappa in (0, 2)` make
//!
//! ```text
//! [ (2 - kappa) I - P   F^T ]
//! [ F                   P   ]  >= 0
//! ```
//!
//! at every witness state, with `F` the Jacobian of the transition map.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{param_err, Error, Result};
use crate::model::ModelClass;

/// Slack on the minimum eigenvalue when testing positive semidefiniteness.
pub const PSD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCertificate {
    /// `n x n`, row-major, symmetric.
    pub p: Vec<f64>,
    pub kappa: f64,
    /// Worst minimum eigenvalue of the block matrix over the witnesses.
    pub margin: f64,
    pub witness_count: usize,
}

impl StabilityCertificate {
    pub fn state_dim(&self) -> usize {
        (self.p.len() as f64).sqrt().round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        if n * n != self.p.len() || n == 0 {
            return param_err(format!("P has {} entries, not a square", self.p.len()));
        }
        if !(self.kappa > 0.0 && self.kappa < 2.0) {
            return param_err(format!("kappa must lie in (0, 2), got {}", self.kappa));
        }
        let pm = DMatrix::from_row_slice(n, n, &self.p);
        if (&pm - pm.transpose()).abs().max() > 1e-12 {
            return param_err("P is not symmetric");
        }
        if min_eigenvalue(&pm) <= 0.0 {
            return param_err("P is not positive definite");
        }
        Ok(())
    }

    pub fn diag(&self) -> Vec<f64> {
        let n = self.state_dim();
        (0..n).map(|i| self.p[i * n + i]).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&serde_json::json!({
            "diag_p": self.diag(),
            "kappa": self.kappa,
            "margin": self.margin,
            "witness_count": self.witness_count,
        }))?)
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Minimum eigenvalue of a small symmetric row-major matrix.
fn min_eig_small(m: &[f64], n: usize) -> f64 {
    match n {
        1 => m[0],
        2 => {
            let (a, b, d) = (m[0], 0.5 * (m[1] + m[2]), m[3]);
            let half_tr = 0.5 * (a + d);
            let disc = (0.25 * (a - d) * (a - d) + b * b).sqrt();
            half_tr - disc
        }
        _ => min_eigenvalue(&DMatrix::from_row_slice(n, n, m)),
    }
}

/// Jacobian `F = d f / d x` of the transition map at `x`, row-major, by
/// forward differences with step `1e-6 (1 + |x_c|)`.
pub fn differential_jacobian(model: &ModelClass, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    jacobian_with(model, theta, x, false)
}

/// Central-difference variant used to validate the forward scheme.
pub fn differential_jacobian_central(model: &ModelClass, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    jacobian_with(model, theta, x, true)
}

fn jacobian_with(model: &ModelClass, theta: &[f64], x: &[f64], central: bool) -> Result<Vec<f64>> {
    let n = model.state_dim();
    if x.len() != n {
        return param_err(format!("state has dimension {}, model needs {n}", x.len()));
    }
    let u = vec![0.0; model.input_dim()];
    let mut base = vec![0.0; n];
    model.transition_mean(theta, x, &u, &mut base);
    let mut jac = vec![0.0; n * n];
    let (mut plus, mut minus) = (vec![0.0; n], vec![0.0; n]);
    for c in 0..n {
        let h = 1e-6 * (1.0 + x[c].abs());
        let mut xp = x.to_vec();
        xp[c] += h;
        model.transition_mean(theta, &xp, &u, &mut plus);
        if central {
            let mut xm = x.to_vec();
            xm[c] -= h;
            model.transition_mean(theta, &xm, &u, &mut minus);
        }
        for r in 0..n {
            jac[r * n + c] = if central { (plus[r] - minus[r]) / (2.0 * h) } else { (plus[r] - base[r]) / h };
        }
    }
    if let Some(i) = jac.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite Jacobian entry {i} at x = {x:?}")));
    }
    Ok(jac)
}

/// Outcome of [`check_contraction`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ContractionCheck {
    pub feasible: bool,
    /// Worst minimum eigenvalue of the block matrix.
    pub margin: f64,
    /// Worst minimum eigenvalue of the Schur complement.
    pub schur_margin: f64,
}

/// Block-form PSD test at every witness, with the Schur form as a cross-check.
pub fn check_contraction(model: &ModelClass, theta: &[f64], cert: &StabilityCertificate, witnesses: &[Vec<f64>]) -> Result<ContractionCheck> {
    cert.validate()?;
    let n = cert.state_dim();
    if n != model.state_dim() {
        return param_err(format!("certificate is {n}x{n}, model state dimension is {}", model.state_dim()));
    }
    let mut margin = f64::INFINITY;
    let mut schur_margin = f64::INFINITY;
    for x in witnesses {
        let f = differential_jacobian(model, theta, x)?;
        let (b, s) = lmi_eigenvalues(&f, &cert.p, cert.kappa, n);
        margin = margin.min(b);
        schur_margin = schur_margin.min(s);
    }
    Ok(ContractionCheck { feasible: margin >= -PSD_SLACK, margin, schur_margin })
}

/// Minimum eigenvalues of the block matrix and of its Schur complement
/// `(2 - kappa) I - P - F^T P^{-1} F` for one Jacobian.
pub fn lmi_eigenvalues(f: &[f64], p: &[f64], kappa: f64, n: usize) -> (f64, f64) {
    let fm = DMatrix::from_row_slice(n, n, f);
    let pm = DMatrix::from_row_slice(n, n, p);
    let upper = DMatrix::identity(n, n) * (2.0 - kappa) - &pm;
    let mut block = DMatrix::zeros(2 * n, 2 * n);
    block.view_mut((0, 0), (n, n)).copy_from(&upper);
    block.view_mut((0, n), (n, n)).copy_from(&fm.transpose());
    block.view_mut((n, 0), (n, n)).copy_from(&fm);
    block.view_mut((n, n), (n, n)).copy_from(&pm);
    let p_inv = pm.clone().try_inverse().unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    let schur = &upper - fm.transpose() * p_inv * &fm;
    let schur = (&schur + schur.transpose()) * 0.5;
    (min_eigenvalue(&block), min_eigenvalue(&schur))
}

/// Search grids for certificates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateGrid {
    /// Candidate diagonal entries of `P`.
    pub p_values: Vec<f64>,
    /// Candidate margins, ascending.
    pub kappa_values: Vec<f64>,
}

impl Default for CertificateGrid {
    fn default() -> Self {
        let lo: f64 = 0.05;
        let hi: f64 = 1.95;
        let count = 24;
        let mut p_values: Vec<f64> = (0..count).map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64)).collect();
        p_values.push(1.0);
        p_values.sort_by(f64::total_cmp);
        let kappa_values = (0..=24).map(|i| 10f64.powf(-6.0 + 0.25 * i as f64)).collect();
        Self { p_values, kappa_values }
    }
}

impl CertificateGrid {
    pub fn kappa_min(&self) -> f64 {
        self.kappa_values[0]
    }

    /// Every diagonal `P` in the grid (product over dimensions).
    fn diagonals(&self, n: usize) -> Vec<Vec<f64>> {
        let mut out = vec![vec![]];
        for _ in 0..n {
            out = out.into_iter().flat_map(|d| self.p_values.iter().map(move |&p| [d.clone(), vec![p]].concat())).collect();
        }
        // try P = I first; it is the typical certificate for small steps
        out.sort_by(|a, b| {
            let da: f64 = a.iter().map(|p| (p - 1.0).abs()).sum();
            let db: f64 = b.iter().map(|p| (p - 1.0).abs()).sum();
            da.total_cmp(&db)
        });
        out
    }
}

/// Witness Jacobians in affine form `F(theta) = J0 + sum_i theta_i J_i`,
/// precomputed by differencing the transition features.
#[derive(Debug, Clone)]
pub struct ContractionConstraint {
    n: usize,
    params: Vec<usize>,
    /// Per witness: `J0` followed by one `J_i` per entry of `params`.
    jacobians: Vec<Vec<f64>>,
    diagonals: Vec<Vec<f64>>,
    kappa_min: f64,
    grid: CertificateGrid,
    witnesses: Vec<Vec<f64>>,
}

impl ContractionConstraint {
    pub fn new(model: &ModelClass, witnesses: Vec<Vec<f64>>, grid: CertificateGrid) -> Result<Self> {
        if witnesses.is_empty() {
            return param_err("the witness set is empty");
        }
        let n = model.state_dim();
        let q = model.num_structural();
        let params = model.transition_params();
        let u = vec![0.0; model.input_dim()];
        let mut jacobians = Vec::with_capacity(witnesses.len());
        let (mut off_p, mut off_b) = (vec![0.0; n], vec![0.0; n]);
        let (mut phi_p, mut phi_b) = (vec![0.0; n * q], vec![0.0; n * q]);
        for x in &witnesses {
            if x.len() != n || x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!("invalid witness state {x:?}")));
            }
            let mut block = vec![0.0; n * n * (1 + params.len())];
            model.transition_features(x, &u, &mut off_b, &mut phi_b);
            for c in 0..n {
                let h = 1e-6 * (1.0 + x[c].abs());
                let mut xp = x.clone();
                xp[c] += h;
                model.transition_features(&xp, &u, &mut off_p, &mut phi_p);
                for r in 0..n {
                    block[r * n + c] = (off_p[r] - off_b[r]) / h;
                    for (k, &i) in params.iter().enumerate() {
                        block[(k + 1) * n * n + r * n + c] = (phi_p[r * q + i] - phi_b[r * q + i]) / h;
                    }
                }
            }
            jacobians.push(block);
        }
        let diagonals = grid.diagonals(n);
        Ok(Self { n, params, jacobians, diagonals, kappa_min: grid.kappa_min(), grid, witnesses })
    }

    pub fn witnesses(&self) -> &[Vec<f64>] {
        &self.witnesses
    }

    fn jacobian(&self, w: usize, theta: &[f64], out: &mut [f64]) {
        let nn = self.n * self.n;
        let block = &self.jacobians[w];
        out.copy_from_slice(&block[..nn]);
        for (k, &i) in self.params.iter().enumerate() {
            let th = theta[i];
            for (o, j) in out.iter_mut().zip(&block[(k + 1) * nn..(k + 2) * nn]) {
                *o += th * j;
            }
        }
    }

    /// `min_w lambda_min(2I - P - F_w^T P^{-1} F_w)` for diagonal `P`;
    /// stops early once the running minimum drops below `stop_below`.
    fn kappa_max(&self, theta: &[f64], diag: &[f64], stop_below: f64) -> f64 {
        let n = self.n;
        let mut f = vec![0.0; n * n];
        let mut s = vec![0.0; n * n];
        let mut worst = f64::INFINITY;
        for w in 0..self.jacobians.len() {
            self.jacobian(w, theta, &mut f);
            for r in 0..n {
                for c in 0..n {
                    let mut acc = 0.0;
                    for k in 0..n {
                        acc += f[k * n + r] * f[k * n + c] / diag[k];
                    }
                    s[r * n + c] = if r == c { 2.0 - diag[r] - acc } else { -acc };
                }
            }
            worst = worst.min(min_eig_small(&s, n));
            if worst < stop_below {
                break;
            }
        }
        worst
    }

    /// Whether some grid `P` certifies `theta` with `kappa >= kappa_min`.
    pub fn is_feasible(&self, theta: &[f64]) -> bool {
        self.diagonals.iter().any(|d| self.kappa_max(theta, d, self.kappa_min) >= self.kappa_min)
    }

    /// Grid `P` maximizing the certified margin; `kappa` is the largest grid
    /// value not exceeding it. `None` when infeasible.
    pub fn fit(&self, theta: &[f64]) -> Option<StabilityCertificate> {
        let mut best: Option<(f64, &Vec<f64>)> = None;
        for d in &self.diagonals {
            let k = self.kappa_max(theta, d, best.map_or(self.kappa_min, |b| b.0));
            if k >= self.kappa_min && best.map_or(true, |b| k > b.0) {
                best = Some((k, d));
            }
        }
        let (kmax, diag) = best?;
        let kappa = self.grid.kappa_values.iter().copied().filter(|&k| k <= kmax).fold(self.kappa_min, f64::max);
        let n = self.n;
        let mut p = vec![0.0; n * n];
        for i in 0..n {
            p[i * n + i] = diag[i];
        }
        let mut f = vec![0.0; n * n];
        let mut margin = f64::INFINITY;
        for w in 0..self.jacobians.len() {
            self.jacobian(w, theta, &mut f);
            margin = margin.min(lmi_eigenvalues(&f, &p, kappa, n).0);
        }
        Some(StabilityCertificate { p, kappa, margin, witness_count: self.jacobians.len() })
    }
}

/// Grid search for a diagonal certificate valid at all `witnesses`.
pub fn fit_certificate(model: &ModelClass, theta: &[f64], witnesses: &[Vec<f64>]) -> Result<Option<StabilityCertificate>> {
    Ok(ContractionConstraint::new(model, witnesses.to_vec(), CertificateGrid::default())?.fit(theta))
}

/// Regular grid over the box `[lo, hi]^n` with `points` per axis.
pub fn box_witnesses(n: usize, lo: f64, hi: f64, points: usize) -> Vec<Vec<f64>> {
    let axis: Vec<f64> = (0..points).map(|i| if points == 1 { 0.5 * (lo + hi) } else { lo + (hi - lo) * i as f64 / (points - 1) as f64 }).collect();
    let mut out = vec![vec![]];
    for _ in 0..n {
        out = out.into_iter().flat_map(|v: Vec<f64>| axis.iter().map(move |&a| [v.clone(), vec![a]].concat())).collect();
    }
    out
}

//! Damped Gauss-Newton (Levenberg-Marquardt) with a gain-ratio damping update.
//!
//! Models provide predictions and an analytic Jacobian with respect to their
//! external (physical) parameters. The solver works on internal coordinates
//! given by each parameter's [`Transform`], so positivity and box constraints
//! never need clipping.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Map between a physical parameter `x` and the solver coordinate `u`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transform {
    /// `x = scale * u`; the scale keeps `u` order one.
    Identity { scale: f64 },
    /// `x = exp(u)`, for strictly positive quantities.
    Log,
    /// `x = lo + (hi - lo) / (1 + exp(-u))`.
    Logistic { lo: f64, hi: f64 },
}

/// Internal coordinates this far out mean the parameter sits on a transform
/// boundary (`exp(-30)` ~ 1e-13).
const PINNED_LIMIT: f64 = 30.0;

impl Transform {
    pub fn to_internal(&self, x: f64) -> f64 {
        match *self {
            Transform::Identity { scale } => x / scale,
            Transform::Log => x.ln(),
            Transform::Logistic { lo, hi } => {
                let p = (x - lo) / (hi - lo);
                (p / (1.0 - p)).ln()
            }
        }
    }

    pub fn to_external(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity { scale } => scale * u,
            Transform::Log => u.exp(),
            Transform::Logistic { lo, hi } => lo + (hi - lo) / (1.0 + (-u).exp()),
        }
    }

    /// `dx/du`
    pub fn derivative(&self, u: f64) -> f64 {
        match *self {
            Transform::Identity { scale } => scale,
            Transform::Log => u.exp(),
            Transform::Logistic { lo, hi } => {
                let s = 1.0 / (1.0 + (-u).exp());
                (hi - lo) * s * (1.0 - s)
            }
        }
    }

    /// Typical magnitude of `x` near `x0`, for finite-difference steps.
    pub fn step_scale(&self, x0: f64) -> f64 {
        match *self {
            Transform::Identity { scale } => scale.abs().max(x0.abs()),
            Transform::Log => x0.abs(),
            Transform::Logistic { lo, hi } => (x0 - lo).abs().min((hi - x0).abs()).max(1e-3 * (hi - lo)),
        }
    }

    /// Whether `u` has run off to a boundary; log parameters are judged
    /// relative to where they started (`u0`).
    fn pinned(&self, u: f64, u0: f64) -> bool {
        match self {
            Transform::Identity { .. } => false,
            Transform::Log => u < u0 - PINNED_LIMIT,
            Transform::Logistic { .. } => u.abs() > PINNED_LIMIT,
        }
    }

    fn admits(&self, x: f64) -> bool {
        x.is_finite()
            && match *self {
                Transform::Identity { .. } => true,
                Transform::Log => x > 0.0,
                Transform::Logistic { lo, hi } => x > lo && x < hi,
            }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSpec {
    pub name: String,
    pub transform: Transform,
}

impl ParameterSpec {
    pub fn new(name: impl Into<String>, transform: Transform) -> Self {
        ParameterSpec {
            name: name.into(),
            transform,
        }
    }
}

/// A parametric curve evaluated at a fixed set of abscissae.
pub trait CurveModel {
    fn parameters(&self) -> &[ParameterSpec];

    fn n_points(&self) -> usize;

    /// Writes predictions into `values` and, if requested, `d value_i / d x_j`
    /// (external parameters) into `jacobian`.
    fn evaluate(&self, params: &[f64], values: &mut [f64], jacobian: Option<&mut DMatrix<f64>>);
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LmOptions {
    pub max_iterations: usize,
    /// Stop when `|step| <= xtol (|u| + xtol)`.
    pub xtol: f64,
    /// Stop when an accepted step lowers the cost by less than `ftol * cost`.
    pub ftol: f64,
    /// Converged only if the Gauss-Newton predicted decrease is below `gtol * cost`.
    pub gtol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iterations: 200,
            xtol: 1e-10,
            ftol: 1e-12,
            gtol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    StepTolerance,
    CostTolerance,
    ZeroResidual,
    MaxIterations,
    /// Damping grew without finding a lower cost.
    NoProgress,
}

#[derive(Debug, Clone)]
pub struct LmOutcome {
    pub params: Vec<f64>,
    /// `0.5 * sum r_i^2` with weighted residuals.
    pub cost: f64,
    pub iterations: usize,
    pub termination: Termination,
    pub gradient_ok: bool,
    /// Parameters that finished on a transform boundary.
    pub pinned: Vec<usize>,
    /// Weighted Jacobian in external parameters at the solution.
    pub jacobian: DMatrix<f64>,
    pub residuals: Vec<f64>,
}

impl LmOutcome {
    pub fn converged(&self) -> bool {
        self.gradient_ok
            && matches!(
                self.termination,
                Termination::StepTolerance | Termination::CostTolerance | Termination::ZeroResidual
            )
    }
}

struct Weighted<'a, M: CurveModel> {
    model: &'a M,
    observed: &'a [f64],
    weights: Option<&'a [f64]>,
}

impl<M: CurveModel> Weighted<'_, M> {
    fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    /// Weighted residuals and, optionally, the weighted external Jacobian.
    fn residuals(&self, x: &[f64], jac: Option<&mut DMatrix<f64>>) -> Vec<f64> {
        let m = self.model.n_points();
        let mut values = vec![0.0; m];
        match jac {
            Some(j) => {
                self.model.evaluate(x, &mut values, Some(&mut *j));
                for i in 0..m {
                    let w = self.weight(i);
                    if w != 1.0 {
                        j.row_mut(i).scale_mut(w);
                    }
                }
            }
            None => self.model.evaluate(x, &mut values, None),
        }
        values
            .iter()
            .zip(self.observed)
            .enumerate()
            .map(|(i, (v, y))| (v - y) * self.weight(i))
            .collect()
    }
}

fn half_sq(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

/// Rejects starting points where two parameters (or one alone) cannot be told
/// apart by the data.
pub fn check_identifiability(jacobian: &DMatrix<f64>, specs: &[ParameterSpec]) -> Result<()> {
    let n = jacobian.ncols();
    let norms: Vec<f64> = (0..n).map(|j| jacobian.column(j).norm()).collect();
    for (j, &norm) in norms.iter().enumerate() {
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::DegenerateParameter(specs[j].name.clone()));
        }
    }
    for a in 0..n {
        for b in a + 1..n {
            let cos = jacobian.column(a).dot(&jacobian.column(b)) / (norms[a] * norms[b]);
            if cos.abs() > 1.0 - 1e-10 {
                return Err(Error::SingularJacobian(specs[a].name.clone(), specs[b].name.clone()));
            }
        }
    }
    Ok(())
}

/// Minimises `0.5 * sum ((model_i - observed_i) * weight_i)^2`.
///
/// `weights` are `1/sigma_i` when per-point uncertainties are known.
pub fn minimize<M: CurveModel>(
    model: &M,
    observed: &[f64],
    weights: Option<&[f64]>,
    initial: &[f64],
    options: &LmOptions,
) -> Result<LmOutcome> {
    let specs = model.parameters();
    let n = specs.len();
    let m = model.n_points();
    assert_eq!(initial.len(), n, "initial guess has wrong length");
    assert_eq!(observed.len(), m, "observations have wrong length");
    if m < n {
        return Err(Error::InsufficientData(format!(
            "{m} data points for {n} free parameters"
        )));
    }
    for (spec, &x) in specs.iter().zip(initial) {
        if !spec.transform.admits(x) {
            return Err(Error::InvalidParameters(format!(
                "initial value {x} for `{}` is outside its allowed range",
                spec.name
            )));
        }
    }
    let problem = Weighted {
        model,
        observed,
        weights,
    };
    let to_external = |u: &DVector<f64>| -> Vec<f64> {
        specs
            .iter()
            .zip(u.iter())
            .map(|(s, &v)| s.transform.to_external(v))
            .collect()
    };

    let u0 = DVector::from_iterator(n, specs.iter().zip(initial).map(|(s, &x)| s.transform.to_internal(x)));
    let mut u = u0.clone();
    let mut jac_ext = DMatrix::zeros(m, n);
    let mut r = problem.residuals(&to_external(&u), Some(&mut jac_ext));
    check_identifiability(&jac_ext, specs)?;
    let mut cost = half_sq(&r);
    if !cost.is_finite() {
        return Err(Error::InvalidParameters(
            "model is not finite at the initial guess".into(),
        ));
    }
    let data_scale =
        half_sq(&(0..m).map(|i| observed[i] * problem.weight(i)).collect::<Vec<_>>()).max(f64::MIN_POSITIVE);
    let zero_cost = 1e-26 * data_scale;

    let internal_jacobian = |jac_ext: &DMatrix<f64>, u: &DVector<f64>| {
        let mut j = jac_ext.clone();
        for (k, spec) in specs.iter().enumerate() {
            j.column_mut(k).scale_mut(spec.transform.derivative(u[k]));
        }
        j
    };

    let mut jac = internal_jacobian(&jac_ext, &u);
    let mut a = jac.transpose() * &jac;
    let mut g = jac.transpose() * DVector::from_column_slice(&r);
    let mut diag: DVector<f64> = a.diagonal().map(|d| d.max(f64::MIN_POSITIVE));
    let mut mu = 1e-3;
    let mut nu = 2.0;
    let mut iterations = 0;

    let termination = loop {
        if cost <= zero_cost {
            break Termination::ZeroResidual;
        }
        if iterations >= options.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;

        let mut damped = a.clone();
        for k in 0..n {
            damped[(k, k)] += mu * diag[k];
        }
        let Some(chol) = damped.cholesky() else {
            mu *= nu;
            nu *= 2.0;
            if mu > 1e32 {
                break Termination::NoProgress;
            }
            continue;
        };
        let h = chol.solve(&(-&g));
        let u_new = &u + &h;
        let small_step = h.norm() <= options.xtol * (u.norm() + options.xtol);

        let x_new = to_external(&u_new);
        let mut jac_new = DMatrix::zeros(m, n);
        let r_new = problem.residuals(&x_new, Some(&mut jac_new));
        let cost_new = half_sq(&r_new);
        let predicted = 0.5 * h.dot(&(mu * diag.component_mul(&h) - &g));
        let rho = if predicted > 0.0 {
            (cost - cost_new) / predicted
        } else {
            -1.0
        };

        if cost_new.is_finite() && rho > 0.0 {
            let decrease = cost - cost_new;
            u = u_new;
            r = r_new;
            cost = cost_new;
            jac_ext = jac_new;
            jac = internal_jacobian(&jac_ext, &u);
            a = jac.transpose() * &jac;
            g = jac.transpose() * DVector::from_column_slice(&r);
            diag = diag.zip_map(&a.diagonal(), |d, e| d.max(e));
            mu *= (1.0 / 3.0f64).max(1.0 - (2.0 * rho - 1.0).powi(3));
            nu = 2.0;
            if small_step {
                break Termination::StepTolerance;
            }
            if decrease <= options.ftol * cost {
                break Termination::CostTolerance;
            }
        } else {
            if small_step {
                break Termination::StepTolerance;
            }
            mu *= nu;
            nu *= 2.0;
            if mu > 1e32 {
                break Termination::NoProgress;
            }
        }
    };

    let pinned: Vec<usize> = (0..n).filter(|&k| specs[k].transform.pinned(u[k], u0[k])).collect();
    let gradient_ok =
        cost <= zero_cost || newton_decrement(&a, &g, &pinned) <= options.gtol * 2.0 * cost + 1e-20 * data_scale;

    Ok(LmOutcome {
        params: to_external(&u),
        cost,
        iterations,
        termination,
        gradient_ok,
        pinned,
        jacobian: jac_ext,
        residuals: r,
    })
}

/// nalgebra's plain `svd()` iterates without limit and can spin forever on a
/// degenerate matrix.
const SVD_MAX_SWEEPS: usize = 1000;

/// `g^T A^-1 g` restricted to the free (non-pinned) parameters.
fn newton_decrement(a: &DMatrix<f64>, g: &DVector<f64>, pinned: &[usize]) -> f64 {
    let free: Vec<usize> = (0..g.len()).filter(|k| !pinned.contains(k)).collect();
    if free.is_empty() {
        return 0.0;
    }
    let sub = DMatrix::from_fn(free.len(), free.len(), |i, j| a[(free[i], free[j])]);
    let gs = DVector::from_iterator(free.len(), free.iter().map(|&k| g[k]));
    // equilibrate before solving; the decrement is invariant to column scaling
    let scale = sub.diagonal().map(|d| if d > 0.0 { 1.0 / d.sqrt() } else { 1.0 });
    let eq = DMatrix::from_fn(free.len(), free.len(), |i, j| sub[(i, j)] * scale[i] * scale[j]);
    let gq = gs.component_mul(&scale);
    if eq.iter().chain(gq.iter()).any(|v| !v.is_finite()) {
        return f64::INFINITY;
    }
    match eq.clone().cholesky() {
        Some(c) => gq.dot(&c.solve(&gq)),
        None => eq
            .try_svd(true, true, f64::EPSILON, SVD_MAX_SWEEPS)
            .and_then(|svd| svd.solve(&gq, 1e-14).ok())
            .map(|x| gq.dot(&x))
            .unwrap_or(f64::INFINITY),
    }
}

/// Parameter covariance from the weighted Jacobian, `(J^T J)^-1`.
///
/// Columns that vanish get infinite variance. When `scale_by_chi2` is set the
/// result is multiplied by `2 cost / (m - n)`.
pub fn covariance(jacobian: &DMatrix<f64>, cost: f64, scale_by_chi2: bool) -> DMatrix<f64> {
    let (m, n) = jacobian.shape();
    let norms: Vec<f64> = (0..n).map(|j| jacobian.column(j).norm()).collect();
    let live: Vec<usize> = (0..n).filter(|&j| norms[j] > 0.0 && norms[j].is_finite()).collect();
    let mut cov = DMatrix::from_element(n, n, 0.0);
    for j in 0..n {
        if !live.contains(&j) {
            cov[(j, j)] = f64::INFINITY;
        }
    }
    if live.is_empty() {
        return cov;
    }
    let k = live.len();
    let jn = DMatrix::from_fn(m, k, |i, c| jacobian[(i, live[c])] / norms[live[c]]);
    let normal = jn.transpose() * &jn;
    let inv = match normal.clone().cholesky() {
        Some(c) => c.inverse(),
        None => {
            let Some(svd) = normal.try_svd(true, true, f64::EPSILON, SVD_MAX_SWEEPS) else {
                return DMatrix::from_element(n, n, f64::INFINITY);
            };
            let tol = 1e-14 * svd.singular_values.max();
            let singular = svd.singular_values.clone();
            let v_t = svd.v_t.clone().expect("requested");
            let mut inv = svd.pseudo_inverse(tol).unwrap_or_else(|_| DMatrix::zeros(k, k));
            // directions dropped by the pseudo-inverse are unconstrained
            for (s, row) in singular.iter().zip(v_t.row_iter()) {
                if *s <= tol {
                    for c in 0..k {
                        if row[c].abs() > 1e-6 {
                            inv[(c, c)] = f64::INFINITY;
                        }
                    }
                }
            }
            inv
        }
    };
    let factor = if scale_by_chi2 && m > n {
        2.0 * cost / (m - n) as f64
    } else {
        1.0
    };
    for (a, &ja) in live.iter().enumerate() {
        for (b, &jb) in live.iter().enumerate() {
            cov[(ja, jb)] = inv[(a, b)] * factor / (norms[ja] * norms[jb]);
        }
    }
    cov
}

/// Central-difference Jacobian of `model` in external parameters.
pub fn numerical_jacobian<M: CurveModel>(model: &M, params: &[f64]) -> DMatrix<f64> {
    let specs = model.parameters();
    let m = model.n_points();
    let mut out = DMatrix::zeros(m, specs.len());
    let mut plus = vec![0.0; m];
    let mut minus = vec![0.0; m];
    for (j, spec) in specs.iter().enumerate() {
        let h = 1e-6 * spec.transform.step_scale(params[j]).max(f64::MIN_POSITIVE);
        let mut xp = params.to_vec();
        let mut xm = params.to_vec();
        xp[j] += h;
        xm[j] -= h;
        model.evaluate(&xp, &mut plus, None);
        model.evaluate(&xm, &mut minus, None);
        for i in 0..m {
            out[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    out
}

/// Largest column-wise relative difference between the analytic Jacobian and
/// central differences, `|J_a - J_fd| / |J_fd|`.
pub fn jacobian_mismatch<M: CurveModel>(model: &M, params: &[f64]) -> f64 {
    let n = model.parameters().len();
    let mut analytic = DMatrix::zeros(model.n_points(), n);
    let mut values = vec![0.0; model.n_points()];
    model.evaluate(params, &mut values, Some(&mut analytic));
    let numeric = numerical_jacobian(model, params);
    (0..n)
        .map(|j| {
            let diff = (analytic.column(j) - numeric.column(j)).norm();
            let norm = numeric.column(j).norm();
            if norm == 0.0 {
                diff
            } else {
                diff / norm
            }
        })
        .fold(0.0, f64::max)
}

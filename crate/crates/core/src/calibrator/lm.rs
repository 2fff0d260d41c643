//! A small Levenberg–Marquardt driver over finite-difference Jacobians.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Damping beyond which a step is no longer worth trying.
const DAMPING_LIMIT: f64 = 1e16;
const DAMPING_FLOOR: f64 = 1e-15;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmOptions {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_up: f64,
    pub damping_down: f64,
    /// On `‖Jᵀr‖∞`.
    pub gradient_tolerance: f64,
    /// On `‖δ‖ / (‖x‖ + tol)`.
    pub step_tolerance: f64,
    /// On the relative decrease of an accepted step.
    pub cost_tolerance: f64,
    /// Relative forward-difference step.
    pub fd_step: f64,
    /// Lower bound on the absolute forward-difference step.
    pub fd_floor: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            initial_damping: 1e-3,
            damping_up: 10.0,
            damping_down: 10.0,
            gradient_tolerance: 1e-12,
            step_tolerance: 1e-12,
            cost_tolerance: 1e-14,
            fd_step: 1e-7,
            fd_floor: 1e-9,
        }
    }
}

impl LmOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_damping,
            self.damping_up,
            self.damping_down,
            self.gradient_tolerance,
            self.step_tolerance,
            self.cost_tolerance,
            self.fd_step,
            self.fd_floor,
        ];
        if self.max_iterations == 0 || positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::InvalidInput("LM options must all be positive".into()));
        }
        if self.damping_up <= 1.0 || self.damping_down <= 1.0 {
            return Err(Error::InvalidInput("LM damping factors must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    Step,
    Cost,
    MaxIterations,
    /// Every trial step was rejected up to the damping limit.
    DampingLimit,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmDiagnostics {
    /// Jacobian evaluations.
    pub iterations: usize,
    /// Residual evaluations, Jacobian columns excluded.
    pub evaluations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// `‖Jᵀr‖∞` at the last Jacobian.
    pub gradient_norm: f64,
    pub termination: Termination,
    /// Cost at the start and after every accepted step.
    pub cost_trace: Vec<f64>,
    /// Euclidean norm of each column of the last Jacobian.
    pub column_norms: Vec<f64>,
    pub final_damping: f64,
}

/// One accepted iterate, as handed to the observer.
pub struct Iterate<'a> {
    pub iteration: usize,
    pub x: &'a DVector<f64>,
    pub cost: f64,
    pub damping: f64,
}

#[derive(Clone, Debug)]
pub struct LmOutcome {
    pub x: DVector<f64>,
    pub residuals: DVector<f64>,
    pub diagnostics: LmDiagnostics,
}

fn finite_step(x: f64, rel: f64, floor: f64) -> f64 {
    let h = (rel * x.abs()).max(floor);
    // make x + h − x exact
    (x + h) - x
}

/// Forward differences `(f(x + h eⱼ) − f(x)) / h`, columns in parallel.
pub fn forward_difference_jacobian<F>(f: &F, x: &DVector<f64>, fx: &DVector<f64>, rel: f64, floor: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    let cols: Vec<DVector<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let h = finite_step(x[j], rel, floor);
            let mut xp = x.clone();
            xp[j] += h;
            (f(&xp) - fx) / h
        })
        .collect();
    DMatrix::from_columns(&cols)
}

/// Central differences `(f(x + h eⱼ) − f(x − h eⱼ)) / 2h`, columns in parallel.
pub fn central_difference_jacobian<F>(f: &F, x: &DVector<f64>, rel: f64, floor: f64) -> DMatrix<f64>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
{
    let cols: Vec<DVector<f64>> = (0..x.len())
        .into_par_iter()
        .map(|j| {
            let h = finite_step(x[j], rel, floor);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[j] += h;
            xm[j] -= h;
            (f(&xp) - f(&xm)) / (2.0 * h)
        })
        .collect();
    DMatrix::from_columns(&cols)
}

fn is_finite(v: &DVector<f64>) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Minimizes `Σ rᵢ(x)²` from `x0`.
///
/// The observer sees the starting point (iteration 0) and every accepted
/// iterate after it.
pub fn levenberg_marquardt<F, O>(f: F, x0: DVector<f64>, opts: &LmOptions, mut observer: O) -> Result<LmOutcome>
where
    F: Fn(&DVector<f64>) -> DVector<f64> + Sync,
    O: FnMut(&Iterate<'_>),
{
    opts.validate()?;
    let mut x = x0;
    let mut r = f(&x);
    if !is_finite(&r) {
        return Err(Error::NonFiniteResidual);
    }
    if r.len() < x.len() {
        return Err(Error::InvalidInput(format!(
            "{} residuals cannot determine {} parameters",
            r.len(),
            x.len()
        )));
    }
    let mut cost = r.norm_squared();
    let initial_cost = cost;
    let mut trace = vec![cost];
    let mut lambda = opts.initial_damping;
    let mut evaluations = 1;
    let mut iterations = 0;
    let mut gradient_norm = f64::NAN;
    let mut column_norms = Vec::new();
    observer(&Iterate {
        iteration: 0,
        x: &x,
        cost,
        damping: lambda,
    });

    let termination = 'outer: loop {
        if iterations == opts.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        let jac = forward_difference_jacobian(&f, &x, &r, opts.fd_step, opts.fd_floor);
        column_norms = jac.column_iter().map(|c| c.norm()).collect();
        let g = jac.tr_mul(&r);
        gradient_norm = g.amax();
        if gradient_norm <= opts.gradient_tolerance {
            break Termination::Gradient;
        }
        let a = jac.tr_mul(&jac);
        let dmax = a.diagonal().max();
        let diag = a.diagonal().map(|d| d.max(1e-12 * dmax));

        loop {
            let mut m = a.clone();
            for i in 0..m.nrows() {
                m[(i, i)] += lambda * diag[i];
            }
            let Some(chol) = m.cholesky() else {
                lambda *= opts.damping_up;
                if lambda > DAMPING_LIMIT {
                    return Err(Error::SingularNormalEquations {
                        iteration: iterations,
                        damping: lambda,
                    });
                }
                continue;
            };
            let delta = chol.solve(&(-&g));
            if delta.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance) {
                break 'outer Termination::Step;
            }
            let x_new = &x + &delta;
            let r_new = f(&x_new);
            evaluations += 1;
            let cost_new = r_new.norm_squared();
            if is_finite(&r_new) && cost_new < cost {
                let rel = (cost - cost_new) / cost;
                x = x_new;
                r = r_new;
                cost = cost_new;
                trace.push(cost);
                lambda = (lambda / opts.damping_down).max(DAMPING_FLOOR);
                observer(&Iterate {
                    iteration: iterations,
                    x: &x,
                    cost,
                    damping: lambda,
                });
                if rel <= opts.cost_tolerance {
                    break 'outer Termination::Cost;
                }
                break;
            }
            lambda *= opts.damping_up;
            if lambda > DAMPING_LIMIT {
                break 'outer Termination::DampingLimit;
            }
        }
    };

    Ok(LmOutcome {
        x,
        residuals: r,
        diagnostics: LmDiagnostics {
            iterations,
            evaluations,
            initial_cost,
            final_cost: cost,
            gradient_norm,
            termination,
            cost_trace: trace,
            column_norms,
            final_damping: lambda,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn linear_problem_converges_fast() {
        let c = DVector::from_vec(vec![1.5, -2.0, 0.25]);
        let f = |x: &DVector<f64>| x - &c;
        let out = levenberg_marquardt(f, DVector::zeros(3), &LmOptions::default(), |_| {}).unwrap();
        assert_abs_diff_eq!(out.x, c, epsilon = 1e-9);
        // three accepted steps; a further Jacobian only confirms convergence
        assert!(out.diagnostics.cost_trace.len() - 1 <= 3, "{:?}", out.diagnostics);
    }

    #[test]
    fn rosenbrock_reaches_its_minimum() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])]);
        let out = levenberg_marquardt(f, DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default(), |_| {}).unwrap();
        assert_abs_diff_eq!(out.x[0], 1.0, epsilon = 1e-8);
        assert_abs_diff_eq!(out.x[1], 1.0, epsilon = 1e-8);
    }

    #[test]
    fn accepted_costs_never_increase() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![1.0 - x[0], 10.0 * (x[1] - x[0] * x[0])]);
        let mut seen = Vec::new();
        let out = levenberg_marquardt(f, DVector::from_vec(vec![-1.2, 1.0]), &LmOptions::default(), |it| {
            seen.push(it.cost)
        })
        .unwrap();
        assert_eq!(seen, out.diagnostics.cost_trace);
        assert!(seen.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let f = |x: &DVector<f64>| x.map(|v| v.ln());
        let err = levenberg_marquardt(f, DVector::from_vec(vec![-1.0]), &LmOptions::default(), |_| {});
        assert!(matches!(err, Err(Error::NonFiniteResidual)));
    }

    #[test]
    fn underdetermined_problem_is_rejected() {
        let f = |x: &DVector<f64>| DVector::from_vec(vec![x[0] + x[1]]);
        assert!(levenberg_marquardt(f, DVector::zeros(2), &LmOptions::default(), |_| {}).is_err());
    }

    #[test]
    fn forward_and_central_jacobians_agree() {
        let f = |x: &DVector<f64>| {
            DVector::from_vec(vec![x[0].sin() * x[1], (x[0] * x[1]).exp(), x[1].powi(3) - x[0]])
        };
        let x = DVector::from_vec(vec![0.3, -0.7]);
        let fx = f(&x);
        let jf = forward_difference_jacobian(&f, &x, &fx, 1e-7, 1e-9);
        let jc = central_difference_jacobian(&f, &x, 6e-6, 1e-9);
        assert!((&jf - &jc).amax() <= 1e-4 * jc.amax());
    }

    #[test]
    fn bad_options_are_rejected() {
        let opts = LmOptions {
            damping_up: 0.5,
            ..LmOptions::default()
        };
        assert!(opts.validate().is_err());
        assert!(LmOptions { fd_step: 0.0, ..LmOptions::default() }.validate().is_err());
    }
}

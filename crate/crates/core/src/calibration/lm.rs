//! Dense Levenberg–Marquardt for small least-squares problems.
//!
//! Jacobian columns are scaled to unit norm before each solve, so the
//! Marquardt damping `lambda * diag(J^T J)` acts on comparable units even
//! when parameters mix millimetres, radians and pixels.

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub trait LeastSquaresProblem {
    fn residuals(&self, params: &DVector<f64>) -> Result<DVector<f64>>;

    fn jacobian(&self, params: &DVector<f64>) -> Result<DMatrix<f64>> {
        numeric_jacobian(|p| self.residuals(p), params)
    }
}

/// Central-difference Jacobian with step `1e-6 * max(1, |x_j|)`.
pub fn numeric_jacobian<F>(f: F, params: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<DVector<f64>>,
{
    let base = f(params)?;
    let mut jac = DMatrix::zeros(base.len(), params.len());
    let mut probe = params.clone();
    for j in 0..params.len() {
        let h = 1e-6 * params[j].abs().max(1.0);
        probe[j] = params[j] + h;
        let plus = f(&probe)?;
        probe[j] = params[j] - h;
        let minus = f(&probe)?;
        probe[j] = params[j];
        jac.set_column(j, &((plus - minus) / (2.0 * h)));
    }
    Ok(jac)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    pub step_tolerance: f64,
    pub initial_damping: f64,
    /// Damping is multiplied by this on a rejected step and divided by it on
    /// an accepted one.
    pub damping_scale: f64,
    /// Use central differences instead of the analytic Jacobian.
    pub numeric_jacobian: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-10,
            step_tolerance: 1e-12,
            initial_damping: 1e-3,
            damping_scale: 10.0,
            numeric_jacobian: false,
        }
    }
}

impl SolverOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::InvalidInput("max_iterations must be >= 1".into()));
        }
        for (name, v) in [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("initial_damping", self.initial_damping),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidInput(format!("{name} must be positive")));
            }
        }
        if !(self.damping_scale > 1.0) {
            return Err(Error::InvalidInput("damping_scale must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    ZeroResidual,
    GradientTolerance,
    StepTolerance,
    MaxIterations,
}

impl Termination {
    pub fn as_str(&self) -> &'static str {
        match self {
            Termination::ZeroResidual => "zero_residual",
            Termination::GradientTolerance => "gradient_tolerance",
            Termination::StepTolerance => "step_tolerance",
            Termination::MaxIterations => "max_iterations",
        }
    }
}

/// One trial step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmStep {
    pub iteration: usize,
    /// Objective after the step if accepted, the trial objective otherwise.
    pub objective: f64,
    pub lambda: f64,
    pub accepted: bool,
}

impl fmt::Display for LmStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "LM it={} obj={:e} lambda={:e} accepted={}",
            self.iteration,
            self.objective,
            self.lambda,
            u8::from(self.accepted)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmReport {
    pub params: DVector<f64>,
    pub initial_objective: f64,
    /// Sum of squared residuals at `params`.
    pub objective: f64,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub termination: Termination,
    pub steps: Vec<LmStep>,
}

impl LmReport {
    pub fn converged(&self) -> bool {
        self.termination != Termination::MaxIterations
    }

    /// Objective after each accepted step, starting with the initial value.
    pub fn objective_history(&self) -> Vec<f64> {
        std::iter::once(self.initial_objective)
            .chain(self.steps.iter().filter(|s| s.accepted).map(|s| s.objective))
            .collect()
    }
}

const MAX_DAMPING: f64 = 1e32;

/// Minimizes `|r(x)|^2` from `initial`.
///
/// Returns `Error::NonConvergence` carrying the last iterate when the
/// iteration budget runs out, and `Error::LinearAlgebraFailure` when the
/// damped normal equations cannot be solved at any damping.
pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    initial: DVector<f64>,
    opts: &SolverOptions,
) -> Result<LmReport> {
    opts.validate()?;
    let mut x = initial;
    let mut r = problem.residuals(&x)?;
    let mut objective = r.norm_squared();
    if !objective.is_finite() {
        return Err(Error::InvalidInput(
            "objective is not finite at the starting point".into(),
        ));
    }
    let mut report = LmReport {
        params: x.clone(),
        initial_objective: objective,
        objective,
        iterations: 0,
        accepted_steps: 0,
        termination: Termination::MaxIterations,
        steps: Vec::new(),
    };
    if objective == 0.0 {
        report.termination = Termination::ZeroResidual;
        return Ok(report);
    }

    let n = x.len();
    let mut lambda = opts.initial_damping;
    let mut linearization: Option<(DMatrix<f64>, DVector<f64>, DVector<f64>)> = None;

    for iteration in 1..=opts.max_iterations {
        if linearization.is_none() {
            let jac = if opts.numeric_jacobian {
                numeric_jacobian(|p| problem.residuals(p), &x)?
            } else {
                problem.jacobian(&x)?
            };
            let scale = DVector::from_iterator(
                n,
                jac.column_iter().map(|c| {
                    let norm = c.norm();
                    if norm > 0.0 {
                        norm
                    } else {
                        1.0
                    }
                }),
            );
            let mut scaled = jac;
            for (j, mut col) in scaled.column_iter_mut().enumerate() {
                col /= scale[j];
            }
            let gradient = scaled.tr_mul(&r);
            if gradient.amax() < opts.gradient_tolerance {
                report.termination = Termination::GradientTolerance;
                break;
            }
            let normal = scaled.tr_mul(&scaled);
            linearization = Some((normal, gradient, scale));
        }
        let (normal, gradient, scale) = linearization.as_ref().expect("set above");
        report.iterations = iteration;

        let mut damped = normal.clone();
        for j in 0..n {
            damped[(j, j)] += lambda * normal[(j, j)].max(f64::MIN_POSITIVE);
        }
        let Some(chol) = damped.cholesky() else {
            lambda *= opts.damping_scale;
            if lambda > MAX_DAMPING {
                return Err(Error::LinearAlgebraFailure(
                    "damped normal equations are not positive definite".into(),
                ));
            }
            continue;
        };
        let scaled_step = -chol.solve(gradient);
        let step = scaled_step.component_div(scale);

        if step.norm() <= opts.step_tolerance * (x.norm() + opts.step_tolerance) {
            report.termination = Termination::StepTolerance;
            break;
        }

        let candidate = &x + &step;
        let trial = problem
            .residuals(&candidate)
            .ok()
            .map(|res| (res.norm_squared(), res))
            .filter(|(obj, _)| obj.is_finite());
        match trial {
            Some((trial_objective, trial_r)) if trial_objective < objective => {
                x = candidate;
                r = trial_r;
                objective = trial_objective;
                lambda = (lambda / opts.damping_scale).max(f64::MIN_POSITIVE);
                linearization = None;
                report.accepted_steps += 1;
                report.steps.push(LmStep {
                    iteration,
                    objective,
                    lambda,
                    accepted: true,
                });
                if objective == 0.0 {
                    report.termination = Termination::ZeroResidual;
                    break;
                }
            }
            other => {
                lambda *= opts.damping_scale;
                report.steps.push(LmStep {
                    iteration,
                    objective: other.map_or(f64::INFINITY, |t| t.0),
                    lambda,
                    accepted: false,
                });
                if lambda > MAX_DAMPING {
                    // the step is vanishingly small at this damping
                    report.termination = Termination::StepTolerance;
                    break;
                }
            }
        }
    }

    report.params = x;
    report.objective = objective;
    if report.termination == Termination::MaxIterations {
        return Err(Error::NonConvergence(Box::new(report)));
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Shift {
        target: DVector<f64>,
    }

    impl LeastSquaresProblem for Shift {
        fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(p - &self.target)
        }
        fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::identity(p.len(), p.len()))
        }
    }

    struct Rosenbrock;

    impl LeastSquaresProblem for Rosenbrock {
        fn residuals(&self, p: &DVector<f64>) -> Result<DVector<f64>> {
            Ok(DVector::from_vec(vec![10.0 * (p[1] - p[0] * p[0]), 1.0 - p[0]]))
        }
        fn jacobian(&self, p: &DVector<f64>) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_row_slice(2, 2, &[-20.0 * p[0], 10.0, -1.0, 0.0]))
        }
    }

    #[test]
    fn linear_residual_converges_in_two_steps() {
        let target = DVector::from_vec(vec![3.0, -7.5, 120.0]);
        let problem = Shift {
            target: target.clone(),
        };
        let report =
            levenberg_marquardt(&problem, DVector::zeros(3), &SolverOptions::default()).unwrap();
        assert!((&report.params - target).norm() < 1e-9);
        let history = report.objective_history();
        // two damped Gauss-Newton steps already shrink the objective by
        // the squared damping factors (~1e-14)
        assert!(history[2] < 1e-12 * history[0]);
    }

    #[test]
    fn rosenbrock_reaches_minimum() {
        let report = levenberg_marquardt(
            &Rosenbrock,
            DVector::from_vec(vec![-1.2, 1.0]),
            &SolverOptions::default(),
        )
        .unwrap();
        assert!(report.objective < 1e-12);
        assert!((report.params[0] - 1.0).abs() < 1e-6);
        assert!((report.params[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn accepted_objectives_never_increase() {
        let report = levenberg_marquardt(
            &Rosenbrock,
            DVector::from_vec(vec![-1.2, 1.0]),
            &SolverOptions::default(),
        )
        .unwrap();
        let h = report.objective_history();
        assert!(h.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn zero_residual_start_stops_immediately() {
        let target = DVector::from_vec(vec![1.0, 2.0]);
        let problem = Shift {
            target: target.clone(),
        };
        let report = levenberg_marquardt(&problem, target, &SolverOptions::default()).unwrap();
        assert_eq!(report.termination, Termination::ZeroResidual);
        assert_eq!(report.accepted_steps, 0);
        assert_eq!(report.iterations, 0);
    }

    #[test]
    fn budget_exhaustion_is_reported() {
        let opts = SolverOptions {
            max_iterations: 3,
            ..SolverOptions::default()
        };
        let err = levenberg_marquardt(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &opts)
            .unwrap_err();
        match err {
            Error::NonConvergence(report) => {
                assert_eq!(report.iterations, 3);
                assert_eq!(report.termination, Termination::MaxIterations);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn numeric_and_analytic_paths_agree() {
        let opts = SolverOptions {
            numeric_jacobian: true,
            ..SolverOptions::default()
        };
        let report =
            levenberg_marquardt(&Rosenbrock, DVector::from_vec(vec![-1.2, 1.0]), &opts).unwrap();
        assert!((report.params[0] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn log_line_format() {
        let step = LmStep {
            iteration: 4,
            objective: 0.25,
            lambda: 1e-4,
            accepted: true,
        };
        assert_eq!(step.to_string(), "LM it=4 obj=2.5e-1 lambda=1e-4 accepted=1");
    }

    #[test]
    fn invalid_options() {
        let bad = SolverOptions {
            max_iterations: 0,
            ..SolverOptions::default()
        };
        assert!(bad.validate().is_err());
        let bad = SolverOptions {
            step_tolerance: 0.0,
            ..SolverOptions::default()
        };
        assert!(bad.validate().is_err());
    }
}

//! Classic explicit RK4 time stepping over any linear state container, in two
//! flavors: adaptive step-halving with Richardson error control (used by the
//! kinetic equations) and fixed-step (used by the Fock-space oracle, which
//! pairs it with a whole-trajectory step-halving convergence check).

use thiserror::Error;

use crate::operator::CMat;

/// Linear container the stepper can combine: needs `self += c * other` and a
/// max-norm. Implemented by the (ρ, α) pair and by dense Fock matrices.
pub trait OdeState: Clone {
    fn add_scaled(&mut self, c: f64, other: &Self);
    fn max_abs(&self) -> f64;
}

impl OdeState for CMat {
    fn add_scaled(&mut self, c: f64, other: &Self) {
        for (a, b) in self.as_mut_slice().iter_mut().zip(other.as_slice()) {
            *a += *b * c;
        }
    }

    fn max_abs(&self) -> f64 {
        crate::operator::max_abs(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IntegratorOptions {
    /// First trial step; also the step ceiling after growth.
    pub initial_step: f64,
    /// Error control may not shrink the step below this.
    pub min_step: f64,
    /// Target local error per step, max-norm on the state.
    pub local_error: f64,
    /// Abort threshold on total attempted steps.
    pub max_steps: usize,
}

impl Default for IntegratorOptions {
    fn default() -> Self {
        Self {
            initial_step: 1e-2,
            min_step: 1e-12,
            local_error: 1e-9,
            max_steps: 10_000_000,
        }
    }
}

#[derive(Debug, Error)]
pub enum IntegrateError {
    #[error("step size underflow at t = {time:.6e} (needed step below min_step)")]
    StepSizeUnderflow { time: f64 },
    #[error("exceeded max_steps at t = {time:.6e}")]
    MaxStepsExceeded { time: f64 },
}

/// One RK4 step of size `h` from `(t, y)`.
pub fn rk4_step<S, F>(y: &S, t: f64, h: f64, rhs: &F) -> S
where
    S: OdeState,
    F: Fn(f64, &S) -> S + ?Sized,
{
    let k1 = rhs(t, y);
    let mut y2 = y.clone();
    y2.add_scaled(0.5 * h, &k1);
    let k2 = rhs(t + 0.5 * h, &y2);
    let mut y3 = y.clone();
    y3.add_scaled(0.5 * h, &k2);
    let k3 = rhs(t + 0.5 * h, &y3);
    let mut y4 = y.clone();
    y4.add_scaled(h, &k3);
    let k4 = rhs(t + h, &y4);

    let mut out = y.clone();
    out.add_scaled(h / 6.0, &k1);
    out.add_scaled(h / 3.0, &k2);
    out.add_scaled(h / 3.0, &k3);
    out.add_scaled(h / 6.0, &k4);
    out
}

/// Fixed-step RK4 from `t0` to `t1` in `n_steps` equal steps.
pub fn integrate_fixed<S, F>(y0: &S, t0: f64, t1: f64, n_steps: usize, rhs: &F) -> S
where
    S: OdeState,
    F: Fn(f64, &S) -> S + ?Sized,
{
    assert!(n_steps > 0, "n_steps must be positive");
    let h = (t1 - t0) / n_steps as f64;
    let mut y = y0.clone();
    for i in 0..n_steps {
        let t = t0 + h * i as f64;
        y = rk4_step(&y, t, h, rhs);
    }
    y
}

/// Adaptive RK4 stepper: compares one full step against two half steps,
/// accepts the Richardson-extrapolated half-step result when the estimated
/// local error meets the target, and rescales the step with the usual
/// fifth-order law. The current step size persists across segments so grid
/// output does not reset the controller.
pub struct AdaptiveStepper {
    opts: IntegratorOptions,
    /// Controller-owned step size (before any clipping to segment ends).
    h: f64,
    /// Total attempted steps, shared across segments.
    steps: usize,
}

impl AdaptiveStepper {
    pub fn new(opts: IntegratorOptions) -> Self {
        let h = opts.initial_step.max(opts.min_step);
        Self { opts, h, steps: 0 }
    }

    pub fn steps_taken(&self) -> usize {
        self.steps
    }

    /// Advances `y` from `t0` to exactly `t1`.
    pub fn advance<S, F>(&mut self, mut y: S, t0: f64, t1: f64, rhs: &F) -> Result<S, IntegrateError>
    where
        S: OdeState,
        F: Fn(f64, &S) -> S + ?Sized,
    {
        debug_assert!(t1 >= t0);
        let span = t1 - t0;
        if span == 0.0 {
            return Ok(y);
        }
        let mut t = t0;
        // progress guard against h underflowing the f64 resolution of t
        let t_eps = f64::EPSILON * (t1.abs().max(t0.abs()) + span);
        while t < t1 {
            self.steps += 1;
            if self.steps > self.opts.max_steps {
                return Err(IntegrateError::MaxStepsExceeded { time: t });
            }
            let clipped = self.h >= t1 - t;
            let h = if clipped { t1 - t } else { self.h };
            if h < t_eps {
                return Err(IntegrateError::StepSizeUnderflow { time: t });
            }

            let big = rk4_step(&y, t, h, rhs);
            let mid = rk4_step(&y, t, 0.5 * h, rhs);
            let half = rk4_step(&mid, t + 0.5 * h, 0.5 * h, rhs);

            // diff = half - big; local error estimate is ‖diff‖/15
            let mut diff = half.clone();
            diff.add_scaled(-1.0, &big);
            let err = diff.max_abs() / 15.0;

            if err <= self.opts.local_error {
                let mut next = half;
                next.add_scaled(1.0 / 15.0, &diff);
                y = next;
                t += h;
                // a boundary-clipped step says nothing about the controller's h
                if !clipped {
                    let grow = if err == 0.0 {
                        2.0
                    } else {
                        (0.9 * (self.opts.local_error / err).powf(0.2)).clamp(1.0, 2.0)
                    };
                    self.h = h * grow;
                }
            } else {
                let shrink = (0.9 * (self.opts.local_error / err).powf(0.2)).clamp(0.1, 0.9);
                let new_h = h * shrink;
                if new_h < self.opts.min_step {
                    return Err(IntegrateError::StepSizeUnderflow { time: t });
                }
                self.h = new_h;
            }
        }
        Ok(y)
    }
}

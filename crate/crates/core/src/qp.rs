//! Primal active-set solver for box-constrained QPs with soft rows.
//!
//! The problem solved is
//!
//! ```text
//! min  1/2 z'Hz + g'z + sum_r 1/2 h_r e_r^2
//! s.t. lower <= z <= upper
//!      a_r'z + c_r + e_r >= 0,   e_r >= 0        (one slack e_r per soft row)
//! ```
//!
//! with `H` positive definite and every `h_r > 0`. The optimal slack is
//! `e_r = max(0, -(a_r'z + c_r))`, so eliminating it leaves the box-constrained,
//! once-differentiable piecewise quadratic
//!
//! ```text
//! f(z) = 1/2 z'Hz + g'z + sum_r 1/2 h_r min(0, a_r'z + c_r)^2.
//! ```
//!
//! The working set holds the bounds that block descent and the rows whose
//! slack is positive. Each iteration solves the equality-constrained
//! subproblem on that working set, moves along the projected path with a
//! sufficient-decrease backtrack and then revises the whole working set at
//! once. Iterates stay inside the box throughout. Once the working set of
//! the optimum is found the subproblem step lands on it exactly.

use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SoftBoxQp {
    pub hessian: DMatrix<f64>,
    pub gradient: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
    /// One row per soft constraint.
    pub soft_rows: DMatrix<f64>,
    pub soft_offsets: DVector<f64>,
    /// Diagonal slack Hessian `h_r`.
    pub slack_weights: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub primal: DVector<f64>,
    pub slack: DVector<f64>,
    /// Multipliers of `z >= lower` and `z <= upper` (zero when inactive).
    pub lower_multipliers: DVector<f64>,
    pub upper_multipliers: DVector<f64>,
    pub soft_multipliers: DVector<f64>,
    pub slack_multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
    pub status: QpStatus,
    /// Infinity norm of the KKT conditions evaluated from scratch.
    pub kkt_residual: f64,
}

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 60;

impl SoftBoxQp {
    pub fn num_vars(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_soft(&self) -> usize {
        self.soft_offsets.len()
    }

    fn check(&self) -> Result<()> {
        let n = self.num_vars();
        let m = self.num_soft();
        let shapes = self.hessian.shape() == (n, n)
            && self.lower.len() == n
            && self.upper.len() == n
            && self.soft_rows.shape() == (m, n)
            && self.slack_weights.len() == m;
        if !shapes {
            return Err(Error::Qp("inconsistent problem dimensions".into()));
        }
        if self.lower.iter().zip(self.upper.iter()).any(|(l, u)| !(l <= u)) {
            return Err(Error::Qp("lower bound above upper bound".into()));
        }
        if self.slack_weights.iter().any(|h| !(*h > 0.0)) {
            return Err(Error::Qp("slack weights must be positive".into()));
        }
        let finite = |v: &DMatrix<f64>| v.iter().all(|x| x.is_finite());
        let finite_v = |v: &DVector<f64>| v.iter().all(|x| x.is_finite());
        if !(finite(&self.hessian)
            && finite_v(&self.gradient)
            && finite(&self.soft_rows)
            && finite_v(&self.soft_offsets))
        {
            return Err(Error::NonFinite("QP data"));
        }
        Ok(())
    }

    pub fn objective(&self, z: &DVector<f64>, slack: &DVector<f64>) -> f64 {
        let quad = 0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z);
        let soft: f64 = slack
            .iter()
            .zip(self.slack_weights.iter())
            .map(|(e, h)| 0.5 * h * e * e)
            .sum();
        quad + soft
    }

    fn row_values(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.soft_rows * z + &self.soft_offsets
    }

    /// Objective with the slacks eliminated.
    fn reduced_objective(&self, z: &DVector<f64>, values: &DVector<f64>) -> f64 {
        let soft: f64 = values
            .iter()
            .zip(self.slack_weights.iter())
            .map(|(v, h)| 0.5 * h * v.min(0.0).powi(2))
            .sum();
        0.5 * z.dot(&(&self.hessian * z)) + self.gradient.dot(z) + soft
    }

    fn reduced_gradient(&self, z: &DVector<f64>, values: &DVector<f64>) -> DVector<f64> {
        let weighted = DVector::from_fn(self.num_soft(), |r, _| {
            self.slack_weights[r] * values[r].min(0.0)
        });
        &self.hessian * z + &self.gradient + self.soft_rows.tr_mul(&weighted)
    }

    fn project(&self, z: &mut DVector<f64>) {
        for i in 0..z.len() {
            z[i] = z[i].clamp(self.lower[i], self.upper[i]);
        }
    }

    /// Solve from `start`, which is projected onto the box.
    pub fn solve(&self, start: &DVector<f64>, max_iterations: usize) -> Result<QpSolution> {
        self.check()?;
        let n = self.num_vars();
        let m = self.num_soft();
        if start.len() != n {
            return Err(Error::Qp("start has wrong dimension".into()));
        }

        let scale = 1.0
            + self.gradient.amax()
            + self.hessian.amax()
            + self.soft_offsets.amax() * self.slack_weights.amax();
        let tol = 1e-13 * scale;
        let range = (0..n)
            .map(|i| self.upper[i] - self.lower[i])
            .fold(0.0, f64::max);

        let mut z = start.clone();
        self.project(&mut z);
        let mut values = self.row_values(&z);
        let mut f = self.reduced_objective(&z, &values);
        let mut iterations = 0;
        let mut status = QpStatus::IterationLimit;

        while iterations < max_iterations {
            let grad = self.reduced_gradient(&z, &values);
            let mut stationarity: f64 = 0.0;
            for i in 0..n {
                let moved = (z[i] - grad[i]).clamp(self.lower[i], self.upper[i]);
                stationarity = stationarity.max((z[i] - moved).abs());
            }
            if stationarity <= tol {
                status = QpStatus::Optimal;
                break;
            }
            iterations += 1;

            // Bounds within `near` of z that the gradient pushes against.
            let near = stationarity.min(1e-3 * range);
            let blocked: Vec<bool> = (0..n)
                .map(|i| {
                    self.lower[i] == self.upper[i]
                        || (z[i] <= self.lower[i] + near && grad[i] > 0.0)
                        || (z[i] >= self.upper[i] - near && grad[i] < 0.0)
                })
                .collect();
            let free: Vec<usize> = (0..n).filter(|&i| !blocked[i]).collect();
            let violated: Vec<usize> = (0..m).filter(|&r| values[r] < 0.0).collect();

            let mut curvature = self.hessian.clone();
            for &r in &violated {
                let a = self.soft_rows.row(r);
                curvature.ger(self.slack_weights[r], &a.transpose(), &a.transpose(), 1.0);
            }

            let mut step = DVector::zeros(n);
            if !free.is_empty() {
                let nf = free.len();
                let reduced = DMatrix::from_fn(nf, nf, |a, b| curvature[(free[a], free[b])]);
                let rhs = DVector::from_fn(nf, |a, _| -grad[free[a]]);
                let local = Cholesky::new(reduced)
                    .ok_or_else(|| Error::Qp("reduced Hessian is not positive definite".into()))?
                    .solve(&rhs);
                for (a, &i) in free.iter().enumerate() {
                    step[i] = local[a];
                }
            }
            for i in 0..n {
                if blocked[i] {
                    step[i] = -grad[i] / curvature[(i, i)];
                }
            }

            let mut alpha = 1.0;
            let mut accepted = None;
            for _ in 0..MAX_BACKTRACKS {
                let mut trial = &z + &step * alpha;
                self.project(&mut trial);
                let trial_values = self.row_values(&trial);
                let trial_f = self.reduced_objective(&trial, &trial_values);
                let mut predicted = 0.0;
                for i in 0..n {
                    predicted += if blocked[i] {
                        grad[i] * (z[i] - trial[i])
                    } else {
                        -alpha * grad[i] * step[i]
                    };
                }
                if f - trial_f >= ARMIJO * predicted {
                    accepted = Some((trial, trial_values, trial_f));
                    break;
                }
                alpha *= 0.5;
            }
            let Some((trial, trial_values, trial_f)) = accepted else {
                break;
            };
            if trial == z {
                break;
            }
            z = trial;
            values = trial_values;
            f = trial_f;
        }

        Ok(self.finish(z, &values, iterations, status))
    }

    fn finish(
        &self,
        z: DVector<f64>,
        values: &DVector<f64>,
        iterations: usize,
        status: QpStatus,
    ) -> QpSolution {
        let n = self.num_vars();
        let m = self.num_soft();
        let slack = DVector::from_fn(m, |r, _| (-values[r]).max(0.0));
        let soft_mult = slack.component_mul(&self.slack_weights);
        let reduced = &self.hessian * &z + &self.gradient - self.soft_rows.tr_mul(&soft_mult);

        let mut lower_mult = DVector::zeros(n);
        let mut upper_mult = DVector::zeros(n);
        for i in 0..n {
            let at_lower = z[i] == self.lower[i];
            let at_upper = z[i] == self.upper[i];
            if at_lower && (!at_upper || reduced[i] >= 0.0) {
                lower_mult[i] = reduced[i];
            } else if at_upper {
                upper_mult[i] = -reduced[i];
            }
        }

        let mut sol = QpSolution {
            objective: self.objective(&z, &slack),
            primal: z,
            slack,
            lower_multipliers: lower_mult,
            upper_multipliers: upper_mult,
            soft_multipliers: soft_mult,
            slack_multipliers: DVector::zeros(m),
            iterations,
            status,
            kkt_residual: 0.0,
        };
        sol.kkt_residual = self.kkt_residual(&sol);
        sol
    }

    /// Infinity norm over stationarity, primal feasibility, dual feasibility
    /// and complementarity.
    pub fn kkt_residual(&self, sol: &QpSolution) -> f64 {
        let z = &sol.primal;
        let e = &sol.slack;
        let mut worst: f64 = 0.0;

        let stat_z = &self.hessian * z + &self.gradient - &sol.lower_multipliers
            + &sol.upper_multipliers
            - self.soft_rows.tr_mul(&sol.soft_multipliers);
        worst = worst.max(stat_z.amax());
        let stat_e =
            e.component_mul(&self.slack_weights) - &sol.soft_multipliers - &sol.slack_multipliers;
        worst = worst.max(stat_e.amax());

        for i in 0..self.num_vars() {
            let lo = z[i] - self.lower[i];
            let hi = self.upper[i] - z[i];
            worst = worst.max((-lo).max(0.0)).max((-hi).max(0.0));
            worst = worst.max((-sol.lower_multipliers[i]).max(0.0));
            worst = worst.max((-sol.upper_multipliers[i]).max(0.0));
            worst = worst.max((sol.lower_multipliers[i] * lo).abs());
            worst = worst.max((sol.upper_multipliers[i] * hi).abs());
        }
        let soft_values = self.row_values(z) + e;
        for r in 0..self.num_soft() {
            worst = worst.max((-soft_values[r]).max(0.0)).max((-e[r]).max(0.0));
            worst = worst.max((-sol.soft_multipliers[r]).max(0.0));
            worst = worst.max((-sol.slack_multipliers[r]).max(0.0));
            worst = worst.max((sol.soft_multipliers[r] * soft_values[r]).abs());
            worst = worst.max((sol.slack_multipliers[r] * e[r]).abs());
        }
        worst
    }
}

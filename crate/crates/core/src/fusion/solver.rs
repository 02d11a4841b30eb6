use serde::{Deserialize, Serialize};

use super::factors::{Factor, Linearized};
use super::{FusionError, State, COMPONENTS, STATE_DIM};
use crate::par;

/// Half bandwidth of the normal matrix when factors only join neighbours.
const BAND: usize = 2 * STATE_DIM - 1;
/// Relative pivot size below which a variable counts as unconstrained.
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop once the relative cost decrease falls below this.
    pub relative_tolerance: f64,
    pub initial_lambda: f64,
    /// Damping beyond which a step counts as impossible.
    pub max_lambda: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            relative_tolerance: 1e-9,
            initial_lambda: 1e-4,
            max_lambda: 1e16,
        }
    }
}

impl SolverConfig {
    pub fn check(&self) -> Vec<String> {
        let mut e = Vec::new();
        if self.max_iterations == 0 {
            e.push("solver.max_iterations: must be at least 1".into());
        }
        if !(self.relative_tolerance > 0.0) {
            e.push("solver.relative_tolerance: must be positive".into());
        }
        if !(self.initial_lambda > 0.0 && self.max_lambda > self.initial_lambda) {
            e.push("solver.initial_lambda: must be positive and below max_lambda".into());
        }
        e
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    /// Cost after every accepted step, starting with the initial cost.
    pub cost_history: Vec<f64>,
    pub converged: bool,
}

/// Lower band of a symmetric matrix; `at(i, j)` needs `j ≤ i ≤ j + BAND`.
#[derive(Debug, Clone)]
struct Banded {
    n: usize,
    data: Vec<f64>,
}

impl Banded {
    fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * (BAND + 1)],
        }
    }

    #[inline]
    fn idx(i: usize, j: usize) -> usize {
        i * (BAND + 1) + (i - j)
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[Self::idx(i, j)]
    }

    #[inline]
    fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[Self::idx(i, j)] += v;
    }

    fn diag(&self, i: usize) -> f64 {
        self.at(i, i)
    }

    /// Cholesky factor. Columns whose pivot collapses relative to the
    /// original diagonal are reported and then skipped.
    fn cholesky(&self) -> (Banded, Vec<usize>) {
        let n = self.n;
        let mut l = Banded::zeros(n);
        let mut deficient = Vec::new();
        for j in 0..n {
            let lo = j.saturating_sub(BAND);
            let mut d = self.at(j, j);
            for k in lo..j {
                d -= l.at(j, k) * l.at(j, k);
            }
            let scale = self.at(j, j).abs().max(f64::MIN_POSITIVE);
            if !(d > RANK_TOL * scale) {
                deficient.push(j);
                l.data[Banded::idx(j, j)] = 1.0;
                continue;
            }
            let pivot = d.sqrt();
            l.data[Banded::idx(j, j)] = pivot;
            for i in j + 1..(j + BAND + 1).min(n) {
                let mut s = self.at(i, j);
                for k in i.saturating_sub(BAND)..j {
                    s -= l.at(i, k) * l.at(j, k);
                }
                l.data[Banded::idx(i, j)] = s / pivot;
            }
        }
        (l, deficient)
    }

    /// Solves `L Lᵀ x = b` with `self` as the factor.
    fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(BAND)..i {
                s -= self.at(i, k) * y[k];
            }
            y[i] = s / self.at(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + BAND + 1).min(n) {
                s -= self.at(k, i) * y[k];
            }
            y[i] = s / self.at(i, i);
        }
        y
    }
}

/// States plus the factors that constrain them.
#[derive(Debug, Clone, Default)]
pub struct FactorGraph {
    pub states: Vec<State>,
    pub factors: Vec<Factor>,
}

fn variable_name(col: usize) -> String {
    format!("state {} {}", col / STATE_DIM, COMPONENTS[col % STATE_DIM])
}

impl FactorGraph {
    pub fn new(states: Vec<State>) -> Self {
        Self {
            states,
            factors: Vec::new(),
        }
    }

    pub fn add(&mut self, f: Factor) {
        self.factors.push(f);
    }

    /// Checks that every factor references existing, adjacent states.
    pub fn check_structure(&self) -> Result<(), FusionError> {
        for (i, f) in self.factors.iter().enumerate() {
            let s = f.states();
            let (a, b) = (s[0], *s.last().unwrap_or(&s[0]));
            if a >= self.states.len() || b >= self.states.len() || a.abs_diff(b) > 1 {
                return Err(FusionError::Structure { factor: i, a, b });
            }
        }
        Ok(())
    }

    fn linearize_all(&self, states: &[State]) -> Vec<Linearized> {
        par::map_slice(&self.factors, |f| f.linearize(states))
    }

    /// Half the squared norm of all whitened residuals.
    pub fn cost(&self, states: &[State]) -> f64 {
        let parts = par::map_slice(&self.factors, |f| {
            f.linearize(states).residual.iter().map(|r| r * r).sum::<f64>()
        });
        0.5 * parts.iter().sum::<f64>()
    }

    fn normal_equations(&self, states: &[State]) -> (Banded, Vec<f64>, f64) {
        let n = states.len() * STATE_DIM;
        let mut h = Banded::zeros(n);
        let mut g = vec![0.0; n];
        let mut cost = 0.0;
        let mut cols: Vec<(usize, f64)> = Vec::with_capacity(2 * STATE_DIM);
        for lin in self.linearize_all(states) {
            for (row, r) in lin.residual.iter().enumerate() {
                cost += 0.5 * r * r;
                cols.clear();
                for (state, block) in &lin.blocks {
                    for (k, &v) in block[row].iter().enumerate() {
                        if v != 0.0 {
                            cols.push((state * STATE_DIM + k, v));
                        }
                    }
                }
                for &(ci, vi) in &cols {
                    g[ci] += vi * r;
                    for &(cj, vj) in &cols {
                        if cj <= ci {
                            h.add(ci, cj, vi * vj);
                        }
                    }
                }
            }
        }
        (h, g, cost)
    }

    /// Fails with the under-constrained variables when the undamped normal
    /// equations at `states` are singular.
    pub fn check_rank(&self, states: &[State]) -> Result<(), FusionError> {
        self.check_structure()?;
        let (h, _, _) = self.normal_equations(states);
        let (_, deficient) = h.cholesky();
        if deficient.is_empty() {
            Ok(())
        } else {
            Err(FusionError::UnderConstrained(deficient.into_iter().map(variable_name).collect()))
        }
    }

    /// Levenberg-Marquardt from the current states. Accepted steps never
    /// increase the cost.
    pub fn optimize(&mut self, cfg: &SolverConfig) -> Result<SolveReport, FusionError> {
        let errs = cfg.check();
        if !errs.is_empty() {
            return Err(FusionError::Config(errs));
        }
        if self.states.is_empty() {
            return Err(FusionError::Input("graph has no states".into()));
        }
        self.check_rank(&self.states)?;
        let mut lambda = cfg.initial_lambda;
        let (mut h, mut g, mut cost) = self.normal_equations(&self.states);
        let mut report = SolveReport {
            iterations: 0,
            initial_cost: cost,
            final_cost: cost,
            cost_history: vec![cost],
            converged: false,
        };
        while report.iterations < cfg.max_iterations {
            if cost == 0.0 {
                report.converged = true;
                break;
            }
            report.iterations += 1;
            let mut accepted = None;
            while lambda <= cfg.max_lambda {
                let mut damped = h.clone();
                for i in 0..damped.n {
                    let d = damped.diag(i).max(1e-12);
                    damped.add(i, i, lambda * d);
                }
                let (l, deficient) = damped.cholesky();
                if !deficient.is_empty() {
                    lambda *= 10.0;
                    if lambda > cfg.max_lambda {
                        return Err(FusionError::UnderConstrained(deficient.into_iter().map(variable_name).collect()));
                    }
                    continue;
                }
                let step = l.solve(&g.iter().map(|v| -v).collect::<Vec<_>>());
                let trial: Vec<State> = self
                    .states
                    .iter()
                    .enumerate()
                    .map(|(i, s)| s.retract(&step[i * STATE_DIM..(i + 1) * STATE_DIM]))
                    .collect();
                let trial_cost = self.cost(&trial);
                if trial_cost.is_finite() && trial_cost <= cost {
                    accepted = Some((trial, trial_cost));
                    lambda = (lambda / 3.0).max(1e-15);
                    break;
                }
                lambda *= 4.0;
            }
            let Some((trial, trial_cost)) = accepted else {
                // No damping yields a decrease: we are at a minimum to
                // working precision.
                report.converged = true;
                break;
            };
            let decrease = (cost - trial_cost) / cost;
            self.states = trial;
            cost = trial_cost;
            report.cost_history.push(cost);
            if decrease < cfg.relative_tolerance && decrease >= 0.0 && lambda < 1.0 {
                report.converged = true;
                break;
            }
            (h, g, _) = self.normal_equations(&self.states);
        }
        report.final_cost = cost;
        Ok(report)
    }
}

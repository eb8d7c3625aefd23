//! Time per iteration as a function of column height.

use std::time::Instant;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::experiment::{Problem, ProblemConfig};
use crate::krylov::{SolverConfig, SolverKind};

/// Least-squares line `t = intercept + slope·n_r`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingModel {
    /// `(n_r, seconds per iteration)`.
    pub samples: Vec<(usize, f64)>,
    pub intercept: f64,
    pub slope: f64,
    pub r_squared: f64,
}

impl TimingModel {
    pub fn fit(samples: Vec<(usize, f64)>) -> Result<Self> {
        if samples.len() < 3 {
            return Err(Error::Config(format!("a timing fit needs at least 3 samples, got {}", samples.len())));
        }
        let n = samples.len() as f64;
        let mean_x = samples.iter().map(|s| s.0 as f64).sum::<f64>() / n;
        let mean_y = samples.iter().map(|s| s.1).sum::<f64>() / n;
        let sxx: f64 = samples.iter().map(|s| (s.0 as f64 - mean_x).powi(2)).sum();
        if sxx == 0.0 {
            return Err(Error::Config("degenerate timing fit: all column heights are equal".into()));
        }
        let sxy: f64 = samples.iter().map(|s| (s.0 as f64 - mean_x) * (s.1 - mean_y)).sum();
        let slope = sxy / sxx;
        let intercept = mean_y - slope * mean_x;
        let ss_tot: f64 = samples.iter().map(|s| (s.1 - mean_y).powi(2)).sum();
        let ss_res: f64 = samples.iter().map(|s| (s.1 - intercept - slope * s.0 as f64).powi(2)).sum();
        let r_squared = if ss_tot == 0.0 { 1.0 } else { (1.0 - ss_res / ss_tot).clamp(0.0, 1.0) };
        Ok(TimingModel { samples, intercept, slope, r_squared })
    }

    pub fn predict(&self, n_r: usize) -> f64 {
        self.intercept + self.slope * n_r as f64
    }

    /// Fraction of the predicted time at `n_r` spent in the intercept.
    pub fn intercept_share(&self, n_r: usize) -> f64 {
        self.intercept / self.predict(n_r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingProtocol {
    pub warmups: usize,
    pub repetitions: usize,
}

impl Default for TimingProtocol {
    fn default() -> Self {
        TimingProtocol { warmups: 1, repetitions: 5 }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Median wall time of one outer iteration of `solver` on `problem`.
pub fn time_iteration(problem: &Problem, solver: SolverKind, mu_cycles: usize, protocol: TimingProtocol) -> Result<f64> {
    if protocol.repetitions == 0 {
        return Err(Error::Config("at least one timed repetition is required".into()));
    }
    let config = SolverConfig { solver, tol: f64::MIN_POSITIVE, max_iter: 1 };
    let mut times = Vec::with_capacity(protocol.repetitions);
    for rep in 0..protocol.warmups + protocol.repetitions {
        let start = Instant::now();
        problem.solve(&config, mu_cycles)?;
        if rep >= protocol.warmups {
            times.push(start.elapsed().as_secs_f64());
        }
    }
    Ok(median(times))
}

/// Times one iteration for each column height and fits the linear model.
pub fn timing_sweep(
    base: &ProblemConfig,
    heights: &[usize],
    solver: SolverKind,
    protocol: TimingProtocol,
) -> Result<TimingModel> {
    let mut distinct = heights.to_vec();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Config(format!("a timing sweep needs at least 3 distinct n_r values, got {heights:?}")));
    }
    let mut samples = Vec::with_capacity(heights.len());
    for &n_r in heights {
        let problem = Problem::build(&ProblemConfig { n_r, ..base.clone() })?;
        samples.push((n_r, time_iteration(&problem, solver, base.mu_cycles, protocol)?));
    }
    TimingModel::fit(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line_is_recovered() {
        let m = TimingModel::fit(vec![(16, 0.3 + 0.02 * 16.0), (64, 0.3 + 0.02 * 64.0), (256, 0.3 + 0.02 * 256.0)]).unwrap();
        assert!((m.intercept - 0.3).abs() < 1e-12);
        assert!((m.slope - 0.02).abs() < 1e-14);
        assert!((m.r_squared - 1.0).abs() < 1e-12);
        assert!((m.intercept_share(128) - 0.3 / (0.3 + 2.56)).abs() < 1e-12);
    }

    #[test]
    fn degenerate_and_short_inputs_fail() {
        assert!(TimingModel::fit(vec![(8, 1.0), (8, 2.0), (8, 3.0)]).is_err());
        assert!(TimingModel::fit(vec![(8, 1.0), (16, 2.0)]).is_err());
    }

    #[test]
    fn noisy_line_has_r_squared_below_one() {
        let m = TimingModel::fit(vec![(1, 1.0), (2, 3.0), (3, 2.0), (4, 4.0)]).unwrap();
        assert!(m.r_squared > 0.0 && m.r_squared < 1.0);
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}

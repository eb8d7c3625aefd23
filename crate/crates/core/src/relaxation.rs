//! Vertical line relaxation: Thomas solves and block Jacobi / SOR sweeps.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::discretization::{ColumnMatrix, Field, HattedCoefficients};
use crate::error::{Error, Result};
use crate::par;

/// Solves the tridiagonal system `c_k x_{k−1} + a_k x_k + b_k x_{k+1} = rhs_k`.
///
/// `work` must hold at least `n` entries. No pivoting; a vanishing pivot is
/// reported as [`Error::SingularSystem`] with the offending row.
pub fn thomas_solve_into(a: &[f64], b: &[f64], c: &[f64], rhs: &[f64], x: &mut [f64], work: &mut [f64]) -> Result<()> {
    let n = a.len();
    let pivot_ok = |p: f64| p.is_finite() && p.abs() >= f64::MIN_POSITIVE;
    if !pivot_ok(a[0]) {
        return Err(Error::SingularSystem { row: 0 });
    }
    work[0] = b[0] / a[0];
    x[0] = rhs[0] / a[0];
    for k in 1..n {
        let m = a[k] - c[k] * work[k - 1];
        if !pivot_ok(m) {
            return Err(Error::SingularSystem { row: k });
        }
        work[k] = b[k] / m;
        x[k] = (rhs[k] - c[k] * x[k - 1]) / m;
    }
    for k in (0..n - 1).rev() {
        x[k] -= work[k] * x[k + 1];
    }
    Ok(())
}

/// Allocating wrapper around [`thomas_solve_into`].
pub fn thomas_solve(a: &[f64], b: &[f64], c: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = a.len();
    if n == 0 || b.len() != n || c.len() != n || rhs.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "tridiagonal sizes a={}, b={}, c={}, rhs={}",
            n,
            b.len(),
            c.len(),
            rhs.len()
        )));
    }
    let mut x = vec![0.0; n];
    let mut work = vec![0.0; n];
    thomas_solve_into(a, b, c, rhs, &mut x, &mut work)?;
    Ok(x)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmootherKind {
    /// Every column corrected from the same iterate; runs column-parallel.
    BlockJacobi,
    /// Columns corrected in sequence using the latest values; single-threaded.
    BlockSor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepOrder {
    Natural,
    Reversed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub kind: SmootherKind,
    /// Over-relaxation factor in `(0, 2)`.
    pub relax: f64,
    pub order: SweepOrder,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        SmootherConfig { kind: SmootherKind::BlockSor, relax: 1.0, order: SweepOrder::Natural }
    }
}

impl SmootherConfig {
    pub fn jacobi(relax: f64) -> Self {
        SmootherConfig { kind: SmootherKind::BlockJacobi, relax, order: SweepOrder::Natural }
    }

    pub fn sor(relax: f64) -> Self {
        SmootherConfig { kind: SmootherKind::BlockSor, relax, order: SweepOrder::Natural }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.relax > 0.0 && self.relax < 2.0) {
            return Err(Error::Config(format!("relaxation factor must lie in (0, 2), got {}", self.relax)));
        }
        Ok(())
    }
}

struct ColumnWork {
    matrix: ColumnMatrix,
    residual: Vec<f64>,
    correction: Vec<f64>,
    thomas: Vec<f64>,
}

impl ColumnWork {
    fn new(hatted: &HattedCoefficients) -> Self {
        let n = hatted.n_r();
        ColumnWork { matrix: hatted.column_buffer(), residual: vec![0.0; n], correction: vec![0.0; n], thomas: vec![0.0; n] }
    }

    /// Fills `correction` with `A_T⁻¹ (f_T − (A u)_T)`.
    fn correct(&mut self, hatted: &HattedCoefficients, t: usize, u: &[f64], f: &[f64]) -> Result<()> {
        let n = hatted.n_r();
        hatted.fill_column(t, &mut self.matrix);
        self.matrix.residual_into(t, u, &f[t * n..(t + 1) * n], &mut self.residual);
        let m = &self.matrix;
        thomas_solve_into(&m.a, &m.b, &m.c, &self.residual, &mut self.correction, &mut self.thomas)
            .map_err(|e| match e {
                Error::SingularSystem { row } => Error::SingularSystem { row: t * n + row },
                other => other,
            })
    }
}

/// Applies `sweeps` relaxation sweeps `u_T ← u_T + ρ A_T⁻¹ (f_T − (A u)_T)`.
pub fn smooth(hatted: &HattedCoefficients, u: &mut Field, f: &Field, config: &SmootherConfig, sweeps: usize) -> Result<()> {
    config.validate()?;
    for field in [&*u, f] {
        if field.n_r != hatted.n_r() || field.len() != hatted.n_unknowns() {
            return Err(Error::ShapeMismatch(format!(
                "smoother field has {} values, operator expects {}",
                field.len(),
                hatted.n_unknowns()
            )));
        }
        if field.level != hatted.level() {
            return Err(Error::LevelMismatch { expected: hatted.level(), found: field.level });
        }
    }
    if sweeps == 0 {
        return Ok(());
    }
    match config.kind {
        SmootherKind::BlockJacobi => jacobi(hatted, u, f, config.relax, sweeps),
        SmootherKind::BlockSor => sor(hatted, u, f, config, sweeps),
    }
}

fn jacobi(hatted: &HattedCoefficients, u: &mut Field, f: &Field, relax: f64, sweeps: usize) -> Result<()> {
    let n = hatted.n_r();
    let mut next = u.zeros_like();
    for _ in 0..sweeps {
        let failed = AtomicUsize::new(usize::MAX);
        {
            let (old, f) = (&u.values, &f.values);
            let failed = &failed;
            par::for_each_column(&mut next.values, n, || ColumnWork::new(hatted), |w, t, col| {
                match w.correct(hatted, t, old, f) {
                    Ok(()) => {
                        for ((x, o), d) in col.iter_mut().zip(&old[t * n..(t + 1) * n]).zip(&w.correction) {
                            *x = o + relax * d;
                        }
                    }
                    Err(Error::SingularSystem { row }) => {
                        failed.fetch_min(row, Ordering::Relaxed);
                    }
                    Err(_) => unreachable!("column correction only fails on a zero pivot"),
                }
            });
        }
        let row = failed.into_inner();
        if row != usize::MAX {
            return Err(Error::SingularSystem { row });
        }
        std::mem::swap(&mut u.values, &mut next.values);
    }
    Ok(())
}

fn sor(hatted: &HattedCoefficients, u: &mut Field, f: &Field, config: &SmootherConfig, sweeps: usize) -> Result<()> {
    let n = hatted.n_r();
    let mut w = ColumnWork::new(hatted);
    let cells = hatted.n_cells();
    for _ in 0..sweeps {
        for i in 0..cells {
            let t = match config.order {
                SweepOrder::Natural => i,
                SweepOrder::Reversed => cells - 1 - i,
            };
            w.correct(hatted, t, &u.values, &f.values)?;
            for (x, d) in u.values[t * n..(t + 1) * n].iter_mut().zip(&w.correction) {
                *x += config.relax * d;
            }
        }
    }
    Ok(())
}

//! Outer iterations: preconditioned Richardson and right-preconditioned BiCGStab.

use std::cell::Cell;
use std::time::Instant;

use serde::Serialize;

use crate::discretization::{apply_operator, residual, Field, HattedCoefficients};
use crate::error::{Error, Result};
use crate::multigrid::MultigridHierarchy;

/// Relative residual above which an iteration counts as diverged.
pub const DIVERGENCE_THRESHOLD: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    Richardson,
    Bicgstab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SolverConfig {
    pub solver: SolverKind,
    /// Relative residual target.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig { solver: SolverKind::Richardson, tol: 1e-5, max_iter: 100 }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) || !self.tol.is_finite() {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Converged,
    MaxIter,
    Breakdown,
    Diverged,
}

impl SolveStatus {
    pub fn exit_code(self) -> i32 {
        match self {
            SolveStatus::Converged => 0,
            SolveStatus::MaxIter => 2,
            SolveStatus::Breakdown | SolveStatus::Diverged => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HistoryEntry {
    /// Iteration number; BiCGStab half steps are reported as `k + 0.5`.
    pub iter: f64,
    pub res_norm: f64,
    pub rel_res: f64,
    /// Wall time since the solve started.
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceHistory {
    pub entries: Vec<HistoryEntry>,
    pub status: SolveStatus,
    /// Completed iterations (a final BiCGStab half step counts as one).
    pub iterations: usize,
    pub preconditioner_applications: usize,
    pub operator_applications: usize,
}

impl ConvergenceHistory {
    pub fn initial_norm(&self) -> f64 {
        self.entries.first().map_or(0.0, |e| e.res_norm)
    }

    pub fn final_entry(&self) -> Option<&HistoryEntry> {
        self.entries.last()
    }

    pub fn final_relative_residual(&self) -> f64 {
        self.final_entry().map_or(0.0, |e| e.rel_res)
    }

    /// Geometric-mean residual reduction per iteration.
    pub fn rate(&self) -> f64 {
        match self.final_entry() {
            Some(last) if last.iter > 0.0 && last.rel_res > 0.0 => last.rel_res.powf(1.0 / last.iter),
            _ => 0.0,
        }
    }

    /// `iter,res_norm,rel_res,seconds` with a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("iter,res_norm,rel_res,seconds\n");
        for e in &self.entries {
            out.push_str(&format!("{},{:e},{:e},{:e}\n", e.iter, e.res_norm, e.rel_res, e.seconds));
        }
        out
    }
}

/// Approximate inverse of the operator.
pub trait Preconditioner {
    /// `z ≈ A⁻¹ r`; `z` is overwritten.
    fn apply(&self, r: &Field, z: &mut Field) -> Result<()>;
}

/// `μ` multigrid V-cycles from a zero initial guess.
pub struct MultigridPreconditioner<'a> {
    pub hierarchy: &'a MultigridHierarchy,
    pub cycles: usize,
}

impl Preconditioner for MultigridPreconditioner<'_> {
    fn apply(&self, r: &Field, z: &mut Field) -> Result<()> {
        self.hierarchy.precondition(r, z, self.cycles)
    }
}

/// `z = r`.
pub struct IdentityPreconditioner;

impl Preconditioner for IdentityPreconditioner {
    fn apply(&self, r: &Field, z: &mut Field) -> Result<()> {
        z.values.copy_from_slice(&r.values);
        Ok(())
    }
}

/// `‖f − A u‖₂`, recomputed from scratch.
pub fn unpreconditioned_residual_norm(a: &HattedCoefficients, u: &Field, f: &Field) -> Result<f64> {
    let mut r = a.zeros();
    residual(a, u, f, &mut r)?;
    Ok(r.norm())
}

/// Operator and preconditioner applications, counted.
struct Counted<'a> {
    a: &'a HattedCoefficients,
    m: &'a dyn Preconditioner,
    ops: Cell<usize>,
    precs: Cell<usize>,
}

impl Counted<'_> {
    fn apply(&self, x: &Field, y: &mut Field) -> Result<()> {
        self.ops.set(self.ops.get() + 1);
        apply_operator(self.a, x, y)
    }

    fn residual(&self, u: &Field, f: &Field, r: &mut Field) -> Result<()> {
        self.ops.set(self.ops.get() + 1);
        residual(self.a, u, f, r)
    }

    fn precondition(&self, r: &Field, z: &mut Field) -> Result<()> {
        self.precs.set(self.precs.get() + 1);
        self.m.apply(r, z)
    }
}

struct Recorder {
    start: Instant,
    r0: f64,
    entries: Vec<HistoryEntry>,
}

impl Recorder {
    fn new(r0: f64) -> Self {
        let mut rec = Recorder { start: Instant::now(), r0, entries: Vec::new() };
        rec.push(0.0, r0);
        rec
    }

    fn push(&mut self, iter: f64, res_norm: f64) -> f64 {
        let rel = if self.r0 > 0.0 { res_norm / self.r0 } else { 0.0 };
        self.entries.push(HistoryEntry { iter, res_norm, rel_res: rel, seconds: self.start.elapsed().as_secs_f64() });
        rel
    }

    /// Replaces the last residual with a recomputed one.
    fn amend(&mut self, res_norm: f64) -> f64 {
        let rel = if self.r0 > 0.0 { res_norm / self.r0 } else { 0.0 };
        if let Some(e) = self.entries.last_mut() {
            e.res_norm = res_norm;
            e.rel_res = rel;
        }
        rel
    }

    fn finish(self, status: SolveStatus, iterations: usize, counted: &Counted) -> ConvergenceHistory {
        ConvergenceHistory {
            entries: self.entries,
            status,
            iterations,
            preconditioner_applications: counted.precs.get(),
            operator_applications: counted.ops.get(),
        }
    }
}

fn diverged(rel: f64) -> bool {
    !rel.is_finite() || rel > DIVERGENCE_THRESHOLD
}

/// `u ← u + M⁻¹(f − A u)` from `u = 0`.
pub fn richardson_solve(
    a: &HattedCoefficients,
    m: &dyn Preconditioner,
    f: &Field,
    config: &SolverConfig,
) -> Result<(Field, ConvergenceHistory)> {
    config.validate()?;
    let counted = Counted { a, m, ops: Cell::new(0), precs: Cell::new(0) };
    let mut u = a.zeros();
    let mut r = f.clone();
    let mut z = a.zeros();
    let mut rec = Recorder::new(f.norm());
    if rec.r0 == 0.0 {
        return Ok((u, rec.finish(SolveStatus::Converged, 0, &counted)));
    }
    for it in 1..=config.max_iter {
        counted.precondition(&r, &mut z)?;
        u.axpy(1.0, &z);
        counted.residual(&u, f, &mut r)?;
        let rel = rec.push(it as f64, r.norm());
        if rel <= config.tol {
            return Ok((u, rec.finish(SolveStatus::Converged, it, &counted)));
        }
        if diverged(rel) {
            return Ok((u, rec.finish(SolveStatus::Diverged, it, &counted)));
        }
    }
    Ok((u, rec.finish(SolveStatus::MaxIter, config.max_iter, &counted)))
}

/// Right-preconditioned BiCGStab from `u = 0`.
///
/// A full iteration costs two preconditioner and two operator applications.
/// Convergence is checked after the first half step as well; on convergence
/// the recursively updated residual is replaced by the true residual, and
/// iteration resumes from the true residual if that misses the target.
pub fn bicgstab_solve(
    a: &HattedCoefficients,
    m: &dyn Preconditioner,
    f: &Field,
    config: &SolverConfig,
) -> Result<(Field, ConvergenceHistory)> {
    config.validate()?;
    let counted = Counted { a, m, ops: Cell::new(0), precs: Cell::new(0) };
    let mut u = a.zeros();
    let mut rec = Recorder::new(f.norm());
    if rec.r0 == 0.0 {
        return Ok((u, rec.finish(SolveStatus::Converged, 0, &counted)));
    }
    let mut r = f.clone();
    let r_hat = f.clone();
    let mut p = a.zeros();
    let mut v = a.zeros();
    let mut p_hat = a.zeros();
    let mut s_hat = a.zeros();
    let mut t = a.zeros();
    let (mut rho_old, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let r_hat_norm = r_hat.norm();
    let breakdown_scale = 1e-30;

    let mut restart = true;
    // Checks a candidate convergence against the true residual.
    let confirm = |u: &Field, r: &mut Field, rec: &mut Recorder, counted: &Counted| -> Result<bool> {
        counted.residual(u, f, r)?;
        let rel = rec.amend(r.norm());
        Ok(rel <= config.tol)
    };

    for it in 1..=config.max_iter {
        let rho = r_hat.dot(&r);
        if !rho.is_finite() || rho.abs() < breakdown_scale * r_hat_norm * r.norm() {
            return Ok((u, rec.finish(SolveStatus::Breakdown, it - 1, &counted)));
        }
        if restart {
            p.values.copy_from_slice(&r.values);
            restart = false;
        } else {
            let beta = (rho / rho_old) * (alpha / omega);
            for ((pi, ri), vi) in p.values.iter_mut().zip(&r.values).zip(&v.values) {
                *pi = ri + beta * (*pi - omega * vi);
            }
        }
        counted.precondition(&p, &mut p_hat)?;
        counted.apply(&p_hat, &mut v)?;
        let rv = r_hat.dot(&v);
        if !rv.is_finite() || rv.abs() < breakdown_scale * r_hat_norm * v.norm() {
            return Ok((u, rec.finish(SolveStatus::Breakdown, it - 1, &counted)));
        }
        alpha = rho / rv;
        // r now holds s = r − α v.
        r.axpy(-alpha, &v);
        let rel = rec.push(it as f64 - 0.5, r.norm());
        if rel <= config.tol {
            u.axpy(alpha, &p_hat);
            if confirm(&u, &mut r, &mut rec, &counted)? {
                return Ok((u, rec.finish(SolveStatus::Converged, it, &counted)));
            }
            restart = true;
            continue;
        }
        if diverged(rel) {
            return Ok((u, rec.finish(SolveStatus::Diverged, it, &counted)));
        }
        counted.precondition(&r, &mut s_hat)?;
        counted.apply(&s_hat, &mut t)?;
        let tt = t.dot(&t);
        if !(tt > 0.0) || !tt.is_finite() {
            return Ok((u, rec.finish(SolveStatus::Breakdown, it, &counted)));
        }
        omega = t.dot(&r) / tt;
        u.axpy(alpha, &p_hat);
        u.axpy(omega, &s_hat);
        r.axpy(-omega, &t);
        // Replace the half-step entry by the full-step one.
        rec.entries.pop();
        let rel = rec.push(it as f64, r.norm());
        if rel <= config.tol && confirm(&u, &mut r, &mut rec, &counted)? {
            return Ok((u, rec.finish(SolveStatus::Converged, it, &counted)));
        }
        if diverged(rel) {
            return Ok((u, rec.finish(SolveStatus::Diverged, it, &counted)));
        }
        if omega == 0.0 {
            return Ok((u, rec.finish(SolveStatus::Breakdown, it, &counted)));
        }
        rho_old = rho;
    }
    Ok((u, rec.finish(SolveStatus::MaxIter, config.max_iter, &counted)))
}

/// Dispatches on `config.solver`.
pub fn solve(
    a: &HattedCoefficients,
    m: &dyn Preconditioner,
    f: &Field,
    config: &SolverConfig,
) -> Result<(Field, ConvergenceHistory)> {
    match config.solver {
        SolverKind::Richardson => richardson_solve(a, m, f, config),
        SolverKind::Bicgstab => bicgstab_solve(a, m, f, config),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{GridHierarchy, VerticalGrid, DEFAULT_DEPTH};
    use crate::multigrid::CycleConfig;
    use crate::profiles::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    struct Setup {
        mg: MultigridHierarchy,
        f: Field,
    }

    fn setup(n: f64) -> Setup {
        let h = Arc::new(GridHierarchy::build(3).unwrap());
        let v = VerticalGrid::uniform(8, DEFAULT_DEPTH).unwrap();
        let c = PhysicalConstants::default();
        let flow = BalancedFlow::new(n, c).unwrap();
        let params = OperatorParameters::for_courant(10.0, h.finest(), &c).unwrap();
        let full = balanced_flow_profiles(h.finest(), &v, &flow, &params);
        let mg = MultigridHierarchy::build(&full, h.clone(), &v, params.omega, CycleConfig::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let f = Field::from_fn(3, h.finest().n_cells(), 8, |_, _| rng.random_range(-1.0..1.0));
        Setup { mg, f }
    }

    #[test]
    fn zero_rhs_converges_immediately() {
        let s = setup(0.022);
        let m = MultigridPreconditioner { hierarchy: &s.mg, cycles: 1 };
        let f = s.f.zeros_like();
        for solver in [SolverKind::Richardson, SolverKind::Bicgstab] {
            let config = SolverConfig { solver, ..Default::default() };
            let (u, h) = solve(s.mg.finest(), &m, &f, &config).unwrap();
            assert_eq!(h.status, SolveStatus::Converged);
            assert_eq!(h.iterations, 0);
            assert!(u.values.iter().all(|&x| x == 0.0));
        }
    }

    #[test]
    fn richardson_counts_and_true_residual() {
        let s = setup(0.022);
        let m = MultigridPreconditioner { hierarchy: &s.mg, cycles: 1 };
        let config = SolverConfig::default();
        let (u, h) = richardson_solve(s.mg.finest(), &m, &s.f, &config).unwrap();
        assert_eq!(h.status, SolveStatus::Converged);
        assert!(h.iterations <= 12, "{}", h.iterations);
        assert_eq!(h.preconditioner_applications, h.iterations);
        assert_eq!(h.operator_applications, h.iterations);
        let true_norm = unpreconditioned_residual_norm(s.mg.finest(), &u, &s.f).unwrap();
        let last = h.final_entry().unwrap();
        assert!((true_norm - last.res_norm).abs() <= 1e-12 * true_norm);
        assert!(true_norm <= config.tol * h.initial_norm() * (1.0 + 1e-10));
        assert!(h.entries.windows(2).all(|w| w[0].seconds <= w[1].seconds));
    }

    #[test]
    fn bicgstab_counts_and_true_residual() {
        let s = setup(0.022);
        let m = MultigridPreconditioner { hierarchy: &s.mg, cycles: 1 };
        let config = SolverConfig { solver: SolverKind::Bicgstab, ..Default::default() };
        let (u, h) = bicgstab_solve(s.mg.finest(), &m, &s.f, &config).unwrap();
        assert_eq!(h.status, SolveStatus::Converged);
        let last = h.final_entry().unwrap();
        let full = last.iter.floor() as usize;
        let half = usize::from(last.iter.fract() != 0.0);
        assert_eq!(h.preconditioner_applications, 2 * full + half);
        // One extra operator application recomputes the true residual.
        assert_eq!(h.operator_applications, 2 * full + half + 1);
        let true_norm = unpreconditioned_residual_norm(s.mg.finest(), &u, &s.f).unwrap();
        assert!((true_norm - last.res_norm).abs() <= 1e-12 * true_norm);
        assert!(true_norm <= config.tol * h.initial_norm() * (1.0 + 1e-10));
    }

    #[test]
    fn unpreconditioned_bicgstab_still_converges() {
        let s = setup(0.022);
        let config = SolverConfig { solver: SolverKind::Bicgstab, tol: 1e-6, max_iter: 2000 };
        let (_, h) = bicgstab_solve(s.mg.finest(), &IdentityPreconditioner, &s.f, &config).unwrap();
        assert_eq!(h.status, SolveStatus::Converged);
    }

    #[test]
    fn loose_tolerance_stops_after_one_step() {
        let s = setup(0.022);
        let m = MultigridPreconditioner { hierarchy: &s.mg, cycles: 1 };
        let config = SolverConfig { tol: 1.0, ..Default::default() };
        let (_, h) = richardson_solve(s.mg.finest(), &m, &s.f, &config).unwrap();
        assert!(h.iterations <= 1);
    }

    #[test]
    fn max_iter_and_divergence_statuses() {
        let s = setup(0.022);
        let m = MultigridPreconditioner { hierarchy: &s.mg, cycles: 1 };
        let config = SolverConfig { tol: 1e-300, max_iter: 3, ..Default::default() };
        let (_, h) = richardson_solve(s.mg.finest(), &m, &s.f, &config).unwrap();
        assert_eq!(h.status, SolveStatus::MaxIter);
        assert_eq!(h.entries.len(), 4);

        struct Amplify;
        impl Preconditioner for Amplify {
            fn apply(&self, r: &Field, z: &mut Field) -> Result<()> {
                z.values.iter_mut().zip(&r.values).for_each(|(z, r)| *z = -1e3 * r);
                Ok(())
            }
        }
        let config = SolverConfig { max_iter: 50, ..Default::default() };
        let (_, h) = richardson_solve(s.mg.finest(), &Amplify, &s.f, &config).unwrap();
        assert_eq!(h.status, SolveStatus::Diverged);
        assert!(h.iterations < 50);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let s = setup(0.022);
        let m = MultigridPreconditioner { hierarchy: &s.mg, cycles: 1 };
        let (_, h) = richardson_solve(s.mg.finest(), &m, &s.f, &SolverConfig::default()).unwrap();
        let csv = h.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("iter,res_norm,rel_res,seconds"));
        assert_eq!(lines.count(), h.entries.len());
    }
}

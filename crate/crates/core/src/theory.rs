//! Dense verification of the convergence theory on small instances.
//!
//! Everything here builds explicit matrices and is meant for a few thousand
//! unknowns at most. Unknowns are ordered `T·n_r + k` as in
//! [`dense_assemble`].

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::discretization::{assemble_hatted, dense_assemble, Field, HattedCoefficients};
use crate::error::{Error, Result};
use crate::geometry::{GridHierarchy, VerticalGrid, DEFAULT_DEPTH};
use crate::multigrid::{CycleConfig, MultigridHierarchy};
use crate::profiles::{
    balanced_flow_profiles, factorize_balanced_flow, BalancedFlow, OperatorParameters, PhysicalConstants,
    ProfileField, ProfileSet,
};

/// Largest horizontal grid the harness accepts.
pub const MAX_CELLS: usize = 320;
/// Largest column height the harness accepts.
pub const MAX_LAYERS: usize = 16;
/// Relative asymmetry tolerated before energy norms are formed.
pub const SYMMETRY_TOLERANCE: f64 = 1e-10;
/// Additive slack on the perturbation bound.
pub const BOUND_SLACK: f64 = 0.05;

fn check_cap(n_cells: usize, n_r: usize) -> Result<()> {
    if n_cells > MAX_CELLS || n_r > MAX_LAYERS {
        return Err(Error::CapExceeded { size: n_cells * n_r, cap: MAX_CELLS * MAX_LAYERS });
    }
    Ok(())
}

/// Fails unless `max|A − Aᵀ| ≤ tol·max|A|`.
pub fn check_symmetric(a: &DMatrix<f64>) -> Result<()> {
    let scale = a.amax();
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOLERANCE * scale {
        return Err(Error::Config(format!("matrix is not symmetric: max |A − Aᵀ| = {asym:e}, scale {scale:e}")));
    }
    Ok(())
}

fn cholesky(a: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    a.clone().cholesky().ok_or_else(|| Error::NotPositiveDefinite(what.into()))
}

/// `L⁻¹ X L⁻ᵀ` for the Cholesky factor `L` of `m`.
fn congruence(chol: &Cholesky<f64, Dyn>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let l = chol.l();
    let y = l.solve_lower_triangular(x).expect("Cholesky factor has a positive diagonal");
    let z = l.solve_lower_triangular(&y.transpose()).expect("Cholesky factor has a positive diagonal");
    let z = z.transpose();
    (&z + z.transpose()) * 0.5
}

/// `‖E‖` in the energy norm of the matrix factored by `chol`.
pub fn energy_operator_norm(chol: &Cholesky<f64, Dyn>, e: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let y = l.transpose() * e;
    let z = l.solve_lower_triangular(&y.transpose()).expect("Cholesky factor has a positive diagonal");
    z.singular_values().max()
}

/// Separable vertical factors of a factorized operator.
#[derive(Debug, Clone)]
pub struct VerticalMatrices {
    /// Tridiagonal vertical diffusion, without the horizontal scale.
    pub stiffness: DMatrix<f64>,
    /// Diagonal weights of the horizontal coupling.
    pub mass: DMatrix<f64>,
    /// Diagonal weights of the reaction term.
    pub reaction: DMatrix<f64>,
    /// Ratio between the horizontal factors of vertical diffusion and reaction.
    pub stiffness_scale: f64,
    /// `stiffness_scale / ω²`; one when the two horizontal profiles coincide.
    pub normalization: f64,
}

fn separable<'a>(field: &'a ProfileField, name: &str) -> Result<(&'a [f64], &'a [f64])> {
    match field {
        ProfileField::Separable { vertical, horizontal } => Ok((vertical, horizontal)),
        ProfileField::Full { .. } => Err(Error::Config(format!("{name} is not separable"))),
    }
}

impl VerticalMatrices {
    /// Extracts the vertical factors, requiring the horizontal factors of
    /// vertical diffusion and reaction to be proportional.
    pub fn from_hatted(h: &HattedCoefficients, omega: f64) -> Result<Self> {
        let n = h.n_r();
        let (beta_v, beta_h) = separable(&h.beta, "β")?;
        let (as_v, _) = separable(&h.alpha_s, "α_S")?;
        let (ar_v, ar_h) = separable(&h.alpha_r, "α_r")?;
        let scale = ar_h[0] / beta_h[0];
        if let Some(t) = ar_h.iter().zip(beta_h).position(|(a, b)| ((a / b) - scale).abs() > 1e-10 * scale.abs()) {
            return Err(Error::Config(format!(
                "horizontal factors of α_r and β are not proportional (cell {t}: {} vs {scale})",
                ar_h[t] / beta_h[t]
            )));
        }
        let mut stiffness = DMatrix::zeros(n, n);
        for k in 0..n {
            stiffness[(k, k)] = ar_v[k] + ar_v[k + 1];
            if k + 1 < n {
                stiffness[(k, k + 1)] = -ar_v[k + 1];
                stiffness[(k + 1, k)] = -ar_v[k + 1];
            }
        }
        Ok(VerticalMatrices {
            stiffness,
            mass: DMatrix::from_diagonal(&DVector::from_column_slice(as_v)),
            reaction: DMatrix::from_diagonal(&DVector::from_column_slice(beta_v)),
            stiffness_scale: scale,
            normalization: scale / (omega * omega),
        })
    }

    /// `scale·stiffness + reaction`.
    pub fn pencil(&self) -> DMatrix<f64> {
        &self.stiffness * self.stiffness_scale + &self.reaction
    }
}

/// Horizontal factors: diagonal mass and the weighted graph Laplacian.
#[derive(Debug, Clone)]
pub struct HorizontalMatrices {
    pub mass: DMatrix<f64>,
    pub stiffness: DMatrix<f64>,
}

impl HorizontalMatrices {
    pub fn from_hatted(h: &HattedCoefficients) -> Result<Self> {
        let (_, beta_h) = separable(&h.beta, "β")?;
        let (_, as_h) = separable(&h.alpha_s, "α_S")?;
        let n = h.n_cells();
        let mut stiffness = DMatrix::zeros(n, n);
        for (e, edge) in h.grid().edges.iter().enumerate() {
            let (i, j) = edge.cells;
            let w = as_h[e];
            stiffness[(i, i)] += w;
            stiffness[(j, j)] += w;
            stiffness[(i, j)] -= w;
            stiffness[(j, i)] -= w;
        }
        Ok(HorizontalMatrices { mass: DMatrix::from_diagonal(&DVector::from_column_slice(beta_h)), stiffness })
    }
}

/// Generalized eigenpairs with mass-orthonormal eigenvectors, ascending.
#[derive(Debug, Clone)]
pub struct VerticalEigen {
    pub values: DVector<f64>,
    /// One eigenvector per column.
    pub vectors: DMatrix<f64>,
}

/// Solves `(s·A + B) e = λ M e` with `eᵀ M e = 1`.
pub fn vertical_eigendecomposition(v: &VerticalMatrices) -> Result<VerticalEigen> {
    let chol = cholesky(&v.mass, "vertical mass matrix")?;
    let sym = congruence(&chol, &v.pencil());
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(order.len(), order.iter().map(|&j| eig.eigenvalues[j]));
    let y = DMatrix::from_columns(&order.iter().map(|&j| eig.eigenvectors.column(j).into_owned()).collect::<Vec<_>>());
    let vectors = chol.l().transpose().solve_upper_triangular(&y).expect("Cholesky factor has a positive diagonal");
    if values.iter().any(|&l| !(l > 0.0)) {
        return Err(Error::NotPositiveDefinite("vertical pencil has a non-positive eigenvalue".into()));
    }
    Ok(VerticalEigen { values, vectors })
}

impl VerticalEigen {
    /// `max|Eᵀ M E − I|`.
    pub fn orthonormality_residual(&self, v: &VerticalMatrices) -> f64 {
        let g = self.vectors.transpose() * &v.mass * &self.vectors;
        (g - DMatrix::identity(self.values.len(), self.values.len())).amax()
    }

    /// `max_j ‖(s·A + B) e_j − λ_j M e_j‖ / ‖s·A + B‖`.
    pub fn residual(&self, v: &VerticalMatrices) -> f64 {
        let k = v.pencil();
        let scale = k.norm();
        (0..self.values.len())
            .map(|j| {
                let e = self.vectors.column(j);
                (&k * e - &v.mass * e * self.values[j]).norm() / scale
            })
            .fold(0.0, f64::max)
    }

    /// `max λ / min λ`.
    pub fn spread(&self) -> f64 {
        self.values.max() / self.values.min()
    }
}

/// `e_k ⊗ u` in the dense ordering.
pub fn tensor(vertical: &[f64], horizontal: &[f64]) -> DVector<f64> {
    let n_r = vertical.len();
    DVector::from_fn(n_r * horizontal.len(), |i, _| horizontal[i / n_r] * vertical[i % n_r])
}

fn max_row_sum(a: &DMatrix<f64>) -> f64 {
    a.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `⟨x, A y⟩ / (‖A‖_∞ ‖x‖ ‖y‖)`.
pub fn relative_coupling(a: &DMatrix<f64>, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
    x.dot(&(a * y)) / (max_row_sum(a) * x.norm() * y.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DecouplingReport {
    /// Largest relative coupling between distinct vertical modes.
    pub max_coupling: f64,
    pub pairs: usize,
}

/// Couples every pair of distinct vertical modes through `a` with random
/// horizontal vectors.
pub fn check_subspace_decoupling(
    a: &DMatrix<f64>,
    eig: &VerticalEigen,
    pairs: usize,
    seed: u64,
) -> Result<DecouplingReport> {
    let n_r = eig.values.len();
    if n_r == 0 || a.nrows() % n_r != 0 || a.nrows() != a.ncols() {
        return Err(Error::ShapeMismatch(format!("{}×{} matrix with {n_r} vertical modes", a.nrows(), a.ncols())));
    }
    let n_cells = a.nrows() / n_r;
    check_cap(n_cells, n_r)?;
    let row_sum = max_row_sum(a);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_coupling: f64 = 0.0;
    for _ in 0..pairs {
        let u: Vec<f64> = (0..n_cells).map(|_| rng.random_range(-1.0..1.0)).collect();
        let v: Vec<f64> = (0..n_cells).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs: Vec<_> = (0..n_r).map(|k| tensor(eig.vectors.column(k).as_slice(), &u)).collect();
        let ys: Vec<_> = (0..n_r).map(|j| tensor(eig.vectors.column(j).as_slice(), &v)).collect();
        let ays: Vec<_> = ys.iter().map(|y| a * y).collect();
        for (k, x) in xs.iter().enumerate() {
            for (j, (y, ay)) in ys.iter().zip(&ays).enumerate() {
                if j != k {
                    let c = x.dot(ay) / (row_sum * x.norm() * y.norm());
                    max_coupling = max_coupling.max(c.abs());
                }
            }
        }
    }
    Ok(DecouplingReport { max_coupling, pairs })
}

/// Dense matrix of `cycles` V-cycles from a zero guess.
pub fn preconditioner_matrix(mg: &MultigridHierarchy, cycles: usize) -> Result<DMatrix<f64>> {
    let fine = mg.finest();
    check_cap(fine.n_cells(), fine.n_r())?;
    let n = fine.n_unknowns();
    let mut out = DMatrix::zeros(n, n);
    let mut f = fine.zeros();
    let mut z = fine.zeros();
    for i in 0..n {
        f.values[i] = 1.0;
        mg.precondition(&f, &mut z, cycles)?;
        f.values[i] = 0.0;
        out.set_column(i, &DVector::from_column_slice(&z.values));
    }
    Ok(out)
}

fn is_zero(field: &ProfileField) -> bool {
    match field {
        ProfileField::Full { values, .. } => values.iter().all(|&v| v == 0.0),
        ProfileField::Separable { vertical, horizontal } => {
            vertical.iter().all(|&v| v == 0.0) || horizontal.iter().all(|&v| v == 0.0)
        }
    }
}

fn dense(h: &HattedCoefficients) -> Result<DMatrix<f64>> {
    check_cap(h.n_cells(), h.n_r())?;
    Ok(dense_assemble(h, MAX_CELLS * MAX_LAYERS)?.to_dense())
}

/// `‖A⊗⁻¹ δA‖` in the `A⊗` energy norm.
pub fn separability_defect(factorized: &DMatrix<f64>, defect: &DMatrix<f64>) -> Result<f64> {
    check_symmetric(factorized)?;
    check_symmetric(defect)?;
    let chol = cholesky(factorized, "factorized operator")?;
    let s = congruence(&chol, defect);
    Ok(SymmetricEigen::new(s).eigenvalues.amax())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub delta: f64,
    /// Energy-norm contraction of one factorized cycle on its own operator.
    pub rho_factorized: f64,
    /// Energy-norm contraction of one Richardson step on the full operator.
    pub rho_full: f64,
    pub bound: f64,
    pub cycles: usize,
    /// The bound assumes `Δ < 1`.
    pub out_of_theory: bool,
    pub pass: bool,
}

/// Compares the full-operator Richardson contraction with the bound
/// `Δ + (1 + Δ) ρ⊗^μ`, all in the energy norm of the factorized operator.
pub fn measure_perturbation(
    full: &HattedCoefficients,
    factorized: &MultigridHierarchy,
    cycles: usize,
) -> Result<PerturbationReport> {
    if cycles == 0 {
        return Err(Error::Config("at least one cycle is required".into()));
    }
    if !is_zero(&full.xi_r) || !is_zero(&factorized.finest().xi_r) {
        return Err(Error::Config("energy norms need ξ_r = 0".into()));
    }
    let a = dense(full)?;
    let a_fac = dense(factorized.finest())?;
    if a.shape() != a_fac.shape() {
        return Err(Error::ShapeMismatch("full and factorized operators differ in size".into()));
    }
    check_symmetric(&a)?;
    let delta = separability_defect(&a_fac, &(&a - &a_fac))?;
    let chol = cholesky(&a_fac, "factorized operator")?;
    let n = a.nrows();
    let identity = DMatrix::<f64>::identity(n, n);
    let one_cycle = preconditioner_matrix(factorized, 1)?;
    let rho_factorized = energy_operator_norm(&chol, &(&identity - &one_cycle * &a_fac));
    let b = if cycles == 1 { one_cycle } else { preconditioner_matrix(factorized, cycles)? };
    let rho_full = energy_operator_norm(&chol, &(&identity - b * &a));
    let bound = delta + (1.0 + delta) * rho_factorized.powi(cycles as i32);
    let out_of_theory = delta >= 1.0;
    Ok(PerturbationReport {
        delta,
        rho_factorized,
        rho_full,
        bound,
        cycles,
        out_of_theory,
        pass: rho_full <= bound + BOUND_SLACK,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmoothingReport {
    pub relax: f64,
    /// `1 / λ_max(D⁻¹A)`.
    pub relax_limit: f64,
    /// Smallest eigenvalue of `W − A` with `W = D / relax`.
    pub min_eigenvalue: f64,
    pub operator_norm: f64,
    pub satisfied: bool,
}

/// Column block diagonal of `a` for columns of height `n_r`.
pub fn column_block_diagonal(a: &DMatrix<f64>, n_r: usize) -> DMatrix<f64> {
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for start in (0..a.nrows()).step_by(n_r) {
        d.view_mut((start, start), (n_r, n_r)).copy_from(&a.view((start, start), (n_r, n_r)));
    }
    d
}

/// Checks `A ⪯ W` for the damped column Jacobi smoother; `relax = None`
/// uses the largest admissible damping.
pub fn check_smoothing_property(a: &DMatrix<f64>, n_r: usize, relax: Option<f64>) -> Result<SmoothingReport> {
    if n_r == 0 || a.nrows() % n_r != 0 {
        return Err(Error::ShapeMismatch(format!("{} rows in columns of {n_r}", a.nrows())));
    }
    check_cap(a.nrows() / n_r, n_r)?;
    check_symmetric(a)?;
    let d = column_block_diagonal(a, n_r);
    let chol = cholesky(&d, "column block diagonal")?;
    let lambda_max = SymmetricEigen::new(congruence(&chol, a)).eigenvalues.max();
    let relax_limit = 1.0 / lambda_max;
    let relax = relax.unwrap_or(relax_limit);
    let w_minus_a = d / relax - a;
    let min_eigenvalue = SymmetricEigen::new((&w_minus_a + w_minus_a.transpose()) * 0.5).eigenvalues.min();
    let operator_norm = a.norm();
    Ok(SmoothingReport {
        relax,
        relax_limit,
        min_eigenvalue,
        operator_norm,
        satisfied: min_eigenvalue >= -1e-10 * operator_norm,
    })
}

/// Balanced-flow operators on a small hierarchy, advection removed.
pub struct DeskInstance {
    pub grids: Arc<GridHierarchy>,
    pub vertical: VerticalGrid,
    pub params: OperatorParameters,
    pub full: HattedCoefficients,
    pub factorized: HattedCoefficients,
    pub factorized_profiles: ProfileSet,
}

impl DeskInstance {
    pub fn balanced_flow(level: usize, n_r: usize, epsilon: f64, courant: f64) -> Result<Self> {
        let constants = PhysicalConstants::default();
        let grids = Arc::new(GridHierarchy::build(level)?);
        check_cap(grids.finest().n_cells(), n_r)?;
        let vertical = VerticalGrid::uniform(n_r, DEFAULT_DEPTH)?;
        let grid = grids.finest();
        let params = OperatorParameters::for_courant(courant, grid, &constants)?;
        let flow = BalancedFlow::with_epsilon(epsilon, constants)?;
        let full_profiles = balanced_flow_profiles(grid, &vertical, &flow, &params).without_advection();
        let factorized_profiles = factorize_balanced_flow(grid, &vertical, &flow, &params).without_advection();
        let full = assemble_hatted(&full_profiles, grid, &vertical, params.omega)?;
        let factorized = assemble_hatted(&factorized_profiles, grid, &vertical, params.omega)?;
        Ok(DeskInstance { grids, vertical, params, full, factorized, factorized_profiles })
    }

    pub fn factorized_multigrid(&self, config: CycleConfig) -> Result<MultigridHierarchy> {
        MultigridHierarchy::build(&self.factorized_profiles, self.grids.clone(), &self.vertical, self.params.omega, config)
    }

    pub fn dense_full(&self) -> Result<DMatrix<f64>> {
        dense(&self.full)
    }

    pub fn dense_factorized(&self) -> Result<DMatrix<f64>> {
        dense(&self.factorized)
    }
}

/// Settings for [`run_theory_checks`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryConfig {
    pub decoupling_level: usize,
    pub perturbation_level: usize,
    pub n_r: usize,
    pub courant: f64,
    pub cycles: usize,
    pub perturbation_epsilons: Vec<f64>,
    /// Non-separable case where decoupling must fail.
    pub control_epsilon: f64,
    pub seed: u64,
}

impl Default for TheoryConfig {
    fn default() -> Self {
        TheoryConfig {
            decoupling_level: 2,
            perturbation_level: 1,
            n_r: 8,
            courant: 10.0,
            cycles: 1,
            perturbation_epsilons: vec![0.0, 0.1, 0.25],
            control_epsilon: 1.23,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub pass: bool,
    /// Recorded but outside the hypotheses of the theory.
    pub warning: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TheoryReport {
    pub config: TheoryConfig,
    pub checks: Vec<CheckOutcome>,
    pub perturbation: Vec<(f64, PerturbationReport)>,
    pub smoothing: SmoothingReport,
    pub eigenvalue_spread: Vec<(usize, f64)>,
    pub pass: bool,
}

impl TheoryReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckOutcome> {
        self.checks.iter().filter(|c| !c.pass)
    }
}

/// Runs the full verification matrix.
pub fn run_theory_checks(config: &TheoryConfig) -> Result<TheoryReport> {
    let mut checks = Vec::new();
    let mut push = |name: String, value: f64, threshold: f64, pass: bool, warning: bool| {
        checks.push(CheckOutcome { name, value, threshold, pass, warning })
    };

    let separable = DeskInstance::balanced_flow(config.decoupling_level, config.n_r, 0.0, config.courant)?;
    let vm = VerticalMatrices::from_hatted(&separable.factorized, separable.params.omega)?;
    let eig = vertical_eigendecomposition(&vm)?;
    let orth = eig.orthonormality_residual(&vm);
    push("vertical eigenbasis orthonormality".into(), orth, 1e-10, orth <= 1e-10, false);
    let dec = check_subspace_decoupling(&separable.dense_full()?, &eig, 20, config.seed)?;
    push("mode decoupling, separable".into(), dec.max_coupling, 1e-9, dec.max_coupling <= 1e-9, false);

    let control = DeskInstance::balanced_flow(config.decoupling_level, config.n_r, config.control_epsilon, config.courant)?;
    let vm_c = VerticalMatrices::from_hatted(&control.factorized, control.params.omega)?;
    let eig_c = vertical_eigendecomposition(&vm_c)?;
    let dec_c = check_subspace_decoupling(&control.dense_full()?, &eig_c, 20, config.seed)?;
    push("mode decoupling violated, non-separable".into(), dec_c.max_coupling, 1e-6, dec_c.max_coupling > 1e-6, false);

    let mut perturbation = Vec::new();
    let mut smoothing = None;
    for &eps in &config.perturbation_epsilons {
        let inst = DeskInstance::balanced_flow(config.perturbation_level, config.n_r, eps, config.courant)?;
        if smoothing.is_none() {
            smoothing = Some(check_smoothing_property(&inst.dense_full()?, config.n_r, None)?);
        }
        let mg = inst.factorized_multigrid(CycleConfig::default())?;
        let rep = measure_perturbation(&inst.full, &mg, config.cycles)?;
        push(
            format!("perturbation bound, epsilon {eps}"),
            rep.rho_full,
            rep.bound + BOUND_SLACK,
            rep.pass || rep.out_of_theory,
            rep.out_of_theory,
        );
        perturbation.push((eps, rep));
    }

    let smoothing = match smoothing {
        Some(s) => s,
        None => {
            let inst = DeskInstance::balanced_flow(config.perturbation_level, config.n_r, 0.0, config.courant)?;
            check_smoothing_property(&inst.dense_full()?, config.n_r, None)?
        }
    };
    push("smoothing property".into(), smoothing.min_eigenvalue, -1e-10 * smoothing.operator_norm, smoothing.satisfied, false);

    let mut eigenvalue_spread = Vec::new();
    for level in [config.decoupling_level.saturating_sub(1), config.decoupling_level] {
        let inst = DeskInstance::balanced_flow(level, config.n_r, 0.0, config.courant)?;
        let vm = VerticalMatrices::from_hatted(&inst.factorized, inst.params.omega)?;
        eigenvalue_spread.push((level, vertical_eigendecomposition(&vm)?.spread()));
    }

    let pass = checks.iter().all(|c| c.pass);
    Ok(TheoryReport { config: config.clone(), checks, perturbation, smoothing, eigenvalue_spread, pass })
}

/// Applies the full operator to `e_j ⊗ v` matrix-free; used to cross-check
/// the dense path.
pub fn apply_tensor(h: &HattedCoefficients, vertical: &[f64], horizontal: &[f64]) -> Result<DVector<f64>> {
    let x = tensor(vertical, horizontal);
    let u = Field { level: h.level(), n_r: h.n_r(), values: x.as_slice().to_vec() };
    let mut out = h.zeros();
    crate::discretization::apply_operator(h, &u, &mut out)?;
    Ok(DVector::from_vec(out.values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_layer_eigenvalue_is_the_ratio() {
        let v = VerticalMatrices {
            stiffness: DMatrix::from_element(1, 1, 0.0),
            mass: DMatrix::from_element(1, 1, 2.0),
            reaction: DMatrix::from_element(1, 1, 3.0),
            stiffness_scale: 5.0,
            normalization: 1.0,
        };
        let e = vertical_eigendecomposition(&v).unwrap();
        assert!((e.values[0] - 1.5).abs() < 1e-15);
        assert!(e.orthonormality_residual(&v) < 1e-15);
    }

    #[test]
    fn defect_of_scaled_operator_is_the_scale() {
        let inst = DeskInstance::balanced_flow(0, 4, 0.0, 10.0).unwrap();
        let a = inst.dense_factorized().unwrap();
        assert!(separability_defect(&a, &(&a * 0.0)).unwrap() == 0.0);
        assert!((separability_defect(&a, &(&a * 0.5)).unwrap() - 0.5).abs() < 1e-12);
        assert!((separability_defect(&a, &(&a * -0.25)).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn identical_matrix_smoother_has_zero_margin() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]));
        let r = check_smoothing_property(&a, 1, Some(1.0)).unwrap();
        assert!(r.min_eigenvalue.abs() < 1e-15);
        assert!(r.satisfied);
    }

    #[test]
    fn asymmetric_input_is_rejected() {
        let mut a = DMatrix::<f64>::identity(3, 3);
        a[(0, 1)] = 1e-3;
        assert!(check_symmetric(&a).is_err());
    }

    #[test]
    fn caps_are_enforced() {
        let big = DMatrix::<f64>::identity(MAX_CELLS * 2, MAX_CELLS * 2);
        assert!(matches!(check_smoothing_property(&big, 1, None), Err(Error::CapExceeded { .. })));
    }

    #[test]
    fn tensor_apply_matches_dense() {
        let inst = DeskInstance::balanced_flow(1, 4, 0.1, 10.0).unwrap();
        let a = inst.dense_full().unwrap();
        let vert = [0.3, -1.0, 0.5, 2.0];
        let hor: Vec<f64> = (0..inst.full.n_cells()).map(|i| (i as f64 * 0.37).sin()).collect();
        let y = apply_tensor(&inst.full, &vert, &hor).unwrap();
        let z = &a * tensor(&vert, &hor);
        assert!((y - &z).amax() <= 1e-12 * z.amax());
    }
}

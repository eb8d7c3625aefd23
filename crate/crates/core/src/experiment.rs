//! Problem setup shared by the command-line driver and the test suites.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::discretization::{assemble_hatted, Field, HattedCoefficients};
use crate::error::{Error, Result};
use crate::geometry::{GridHierarchy, VerticalGrid, DEFAULT_DEPTH};
use crate::krylov::{self, ConvergenceHistory, IdentityPreconditioner, MultigridPreconditioner, SolverConfig};
use crate::multigrid::{CycleConfig, MultigridHierarchy};
use crate::profile_io::load_profiles;
use crate::profiles::{
    balanced_flow_profiles, build_partial_factorization, factorize_balanced_flow, BalancedFlow, OperatorParameters,
    PhysicalConstants, ProfileSet,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preconditioning {
    /// Multigrid on the full coefficients.
    Full,
    /// Multigrid on fully separated coefficients.
    Factorized,
    /// Multigrid with `α_r` full and the rest separated.
    Partial,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TestCase {
    BalancedFlow,
    ExternalProfiles(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemConfig {
    /// Finest refinement level.
    pub levels: usize,
    pub n_r: usize,
    /// Buoyancy frequency `N`, 1/s.
    pub buoyancy: f64,
    /// `ω` as a multiple of the finest mean cell spacing.
    pub courant: f64,
    pub depth: f64,
    pub test_case: TestCase,
    pub preconditioner: Preconditioning,
    /// Profiles for the preconditioner, overriding `preconditioner`'s choice.
    pub preconditioner_profiles: Option<PathBuf>,
    pub cycle: CycleConfig,
    /// V-cycles per preconditioner application.
    pub mu_cycles: usize,
    pub seed: u64,
    pub constants: PhysicalConstants,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig {
            levels: 4,
            n_r: 64,
            buoyancy: PhysicalConstants::default().n_star(),
            courant: 10.0,
            depth: DEFAULT_DEPTH,
            test_case: TestCase::BalancedFlow,
            preconditioner: Preconditioning::Full,
            preconditioner_profiles: None,
            cycle: CycleConfig::default(),
            mu_cycles: 1,
            seed: 1,
            constants: PhysicalConstants::default(),
        }
    }
}

/// Wall time of the setup phases, seconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct SetupTimes {
    pub assembly: f64,
    pub hierarchy: f64,
}

/// Finest-level operator, preconditioner and right-hand side.
pub struct Problem {
    pub grids: Arc<GridHierarchy>,
    pub vertical: VerticalGrid,
    pub params: OperatorParameters,
    pub operator: HattedCoefficients,
    pub preconditioner: Option<MultigridHierarchy>,
    pub rhs: Field,
    pub times: SetupTimes,
}

impl Problem {
    pub fn build(config: &ProblemConfig) -> Result<Self> {
        if config.mu_cycles == 0 {
            return Err(Error::Config("at least one V-cycle per preconditioner application is required".into()));
        }
        config.cycle.smoother.validate()?;
        let start = Instant::now();
        let grids = Arc::new(GridHierarchy::build(config.levels)?);
        let vertical = VerticalGrid::uniform(config.n_r, config.depth)?;
        let grid = grids.finest();
        let params = OperatorParameters::for_courant(config.courant, grid, &config.constants)?;

        let (operator_profiles, prec_profiles) = match &config.test_case {
            TestCase::BalancedFlow => {
                let flow = BalancedFlow::new(config.buoyancy, config.constants)?;
                let full = balanced_flow_profiles(grid, &vertical, &flow, &params);
                let prec = match config.preconditioner {
                    Preconditioning::Full => Some(full.clone()),
                    Preconditioning::Factorized => Some(factorize_balanced_flow(grid, &vertical, &flow, &params)),
                    Preconditioning::Partial => {
                        let fac = factorize_balanced_flow(grid, &vertical, &flow, &params);
                        Some(build_partial_factorization(&full, &fac)?)
                    }
                    Preconditioning::None => None,
                };
                (full, prec)
            }
            TestCase::ExternalProfiles(path) => {
                let set = load_profiles(path, grid, config.n_r)?;
                let prec = match config.preconditioner {
                    Preconditioning::Full => Some(set.clone()),
                    Preconditioning::None => None,
                    other if config.preconditioner_profiles.is_none() => {
                        return Err(Error::Config(format!(
                            "preconditioner {other:?} needs a factorization; external profiles only support full or none \
                             unless separate preconditioner profiles are given"
                        )))
                    }
                    _ => None,
                };
                (set, prec)
            }
        };
        let prec_profiles = match &config.preconditioner_profiles {
            Some(path) => Some(load_profiles(path, grid, config.n_r)?),
            None => prec_profiles,
        };

        let operator = assemble_hatted(&operator_profiles, grid, &vertical, params.omega)?;
        let assembly = start.elapsed().as_secs_f64();
        let start = Instant::now();
        let preconditioner = prec_profiles
            .map(|p| MultigridHierarchy::build(&p, grids.clone(), &vertical, params.omega, config.cycle))
            .transpose()?;
        let hierarchy = start.elapsed().as_secs_f64();
        let rhs = random_field(config.levels, grid.n_cells(), config.n_r, config.seed);
        Ok(Problem { grids, vertical, params, operator, preconditioner, rhs, times: SetupTimes { assembly, hierarchy } })
    }

    /// Solves `A u = rhs` from `u = 0`.
    pub fn solve(&self, solver: &SolverConfig, mu_cycles: usize) -> Result<(Field, ConvergenceHistory)> {
        match &self.preconditioner {
            Some(mg) => {
                let m = MultigridPreconditioner { hierarchy: mg, cycles: mu_cycles };
                krylov::solve(&self.operator, &m, &self.rhs, solver)
            }
            None => krylov::solve(&self.operator, &IdentityPreconditioner, &self.rhs, solver),
        }
    }
}

/// Uniform values in `[−1, 1)` from a seeded ChaCha stream.
pub fn random_field(level: usize, n_cells: usize, n_r: usize, seed: u64) -> Field {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Field::from_fn(level, n_cells, n_r, |_, _| rng.random_range(-1.0..1.0))
}

/// Copy of `set` with `α_r` multiplied by `factor`.
pub fn scale_alpha_r(set: &ProfileSet, factor: f64) -> ProfileSet {
    use crate::profiles::ProfileField;
    let alpha_r = match &set.alpha_r {
        ProfileField::Full { values, n_vertical } => {
            ProfileField::Full { values: values.iter().map(|v| v * factor).collect(), n_vertical: *n_vertical }
        }
        ProfileField::Separable { vertical, horizontal } => ProfileField::Separable {
            vertical: vertical.iter().map(|v| v * factor).collect(),
            horizontal: horizontal.clone(),
        },
    };
    ProfileSet { alpha_r, ..set.clone() }
}

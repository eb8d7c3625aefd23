//! Tensor-product multigrid: horizontal-only coarsening with vertical line smoothing.

use std::sync::Arc;

use crate::discretization::{assemble_hatted, residual, Field, HattedCoefficients};
use crate::error::{Error, Result};
use crate::geometry::{GridHierarchy, VerticalGrid};
use crate::par;
use crate::profiles::ProfileSet;
use crate::relaxation::{smooth, SmootherConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Prolongation {
    /// Centre child takes the parent value; corner children blend the parent
    /// with the two coarse neighbours that share the corner, weights (2, 1, 1)/4.
    #[default]
    Linear,
    /// All four children take the parent value.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoarseSolve {
    /// A fixed number of smoother sweeps.
    Sweeps(usize),
    /// Banded LU factorization of the whole coarsest-level operator.
    #[default]
    Direct,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CycleConfig {
    pub pre_sweeps: usize,
    pub post_sweeps: usize,
    pub coarse: CoarseSolve,
    /// Coarsest level of the cycle; `0` is the icosahedron itself.
    pub coarsest_level: usize,
    pub smoother: SmootherConfig,
    pub prolongation: Prolongation,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            pre_sweeps: 2,
            post_sweeps: 2,
            coarse: CoarseSolve::Direct,
            coarsest_level: 0,
            smoother: SmootherConfig::default(),
            prolongation: Prolongation::Linear,
        }
    }
}

/// Transfer `fine → coarse`: each coarse value is the sum of its four children.
pub fn restrict_field(grids: &GridHierarchy, fine: &Field) -> Result<Field> {
    let level = fine.level;
    if level == 0 || level > grids.finest_level() {
        return Err(Error::LevelMismatch { expected: grids.finest_level(), found: level });
    }
    let coarse_cells = grids.grid(level - 1).n_cells();
    if fine.n_cells() != 4 * coarse_cells {
        return Err(Error::ShapeMismatch(format!("fine field has {} cells, level {level} has {}", fine.n_cells(), 4 * coarse_cells)));
    }
    let n = fine.n_r;
    let mut coarse = Field::zeros(level - 1, coarse_cells, n);
    let src = &fine.values;
    par::for_each_column(&mut coarse.values, n, || (), |_, t, col| {
        let kids = &src[4 * t * n..4 * (t + 1) * n];
        for k in 0..n {
            col[k] = kids[k] + kids[n + k] + kids[2 * n + k] + kids[3 * n + k];
        }
    });
    Ok(coarse)
}

/// `fine += P coarse`.
pub fn prolongate_add(grids: &GridHierarchy, coarse: &Field, fine: &mut Field, kind: Prolongation) -> Result<()> {
    let level = coarse.level + 1;
    if level > grids.finest_level() || fine.level != level {
        return Err(Error::LevelMismatch { expected: level, found: fine.level });
    }
    let grid = grids.grid(coarse.level);
    if coarse.n_cells() != grid.n_cells() || fine.n_cells() != 4 * grid.n_cells() || fine.n_r != coarse.n_r {
        return Err(Error::ShapeMismatch("prolongation fields do not match the grid hierarchy".into()));
    }
    let n = coarse.n_r;
    let src = &coarse.values;
    par::for_each_column(&mut fine.values, 4 * n, || (), |_, t, kids| {
        let own = &src[t * n..(t + 1) * n];
        match kind {
            Prolongation::Constant => {
                for kid in kids.chunks_mut(n) {
                    for (x, v) in kid.iter_mut().zip(own) {
                        *x += v;
                    }
                }
            }
            Prolongation::Linear => {
                let nb = &grid.neighbors[t];
                let across = |j: usize| &src[nb[j].cell * n..(nb[j].cell + 1) * n];
                // Corner child at vertex j touches coarse edges j−1 and j.
                let corner_edges = [(0, 2), (0, 1), (1, 2)];
                for (x, v) in kids[..n].iter_mut().zip(own) {
                    *x += v;
                }
                for (c, &(e1, e2)) in corner_edges.iter().enumerate() {
                    let (n1, n2) = (across(e1), across(e2));
                    let kid = &mut kids[(c + 1) * n..(c + 2) * n];
                    for k in 0..n {
                        kid[k] += 0.25 * (2.0 * own[k] + n1[k] + n2[k]);
                    }
                }
            }
        }
    });
    Ok(())
}

/// Coarse-to-fine interpolation into a fresh field.
pub fn prolongate_field(grids: &GridHierarchy, coarse: &Field, kind: Prolongation) -> Result<Field> {
    let fine_cells = 4 * coarse.n_cells();
    let mut fine = Field::zeros(coarse.level + 1, fine_cells, coarse.n_r);
    prolongate_add(grids, coarse, &mut fine, kind)?;
    Ok(fine)
}

/// Per-level rediscretized operators plus the cycle parameters.
#[derive(Debug, Clone)]
pub struct MultigridHierarchy {
    grids: Arc<GridHierarchy>,
    /// `levels[ℓ − coarsest_level]` holds level `ℓ`.
    levels: Vec<HattedCoefficients>,
    coarse_lu: Option<BandedLu>,
    config: CycleConfig,
}

impl MultigridHierarchy {
    /// Assembles every level from the finest-level profiles by repeated restriction.
    pub fn build(
        finest: &ProfileSet,
        grids: Arc<GridHierarchy>,
        vertical: &VerticalGrid,
        omega: f64,
        config: CycleConfig,
    ) -> Result<Self> {
        config.smoother.validate()?;
        let top = grids.finest_level();
        if config.coarsest_level > top {
            return Err(Error::Config(format!(
                "coarsest level {} exceeds finest level {top}",
                config.coarsest_level
            )));
        }
        let mut levels = Vec::with_capacity(top + 1 - config.coarsest_level);
        let mut profiles = finest.clone();
        for level in (config.coarsest_level..=top).rev() {
            levels.push(assemble_hatted(&profiles, grids.grid(level), vertical, omega)?);
            if level > config.coarsest_level {
                profiles = profiles.restrict(&grids, level);
            }
        }
        levels.reverse();
        let coarse_lu = match config.coarse {
            CoarseSolve::Direct => Some(BandedLu::factor(&levels[0])?),
            CoarseSolve::Sweeps(_) => None,
        };
        Ok(MultigridHierarchy { grids, levels, coarse_lu, config })
    }

    pub fn config(&self) -> &CycleConfig {
        &self.config
    }

    pub fn grids(&self) -> &Arc<GridHierarchy> {
        &self.grids
    }

    pub fn finest_level(&self) -> usize {
        self.grids.finest_level()
    }

    pub fn coarsest_level(&self) -> usize {
        self.config.coarsest_level
    }

    pub fn level(&self, level: usize) -> &HattedCoefficients {
        &self.levels[level - self.config.coarsest_level]
    }

    pub fn finest(&self) -> &HattedCoefficients {
        self.levels.last().expect("hierarchy has at least one level")
    }

    pub fn n_r(&self) -> usize {
        self.finest().n_r()
    }

    /// One V-cycle on `level`, updating `u` in place.
    pub fn v_cycle(&self, level: usize, f: &Field, u: &mut Field) -> Result<()> {
        let a = self.level(level);
        let cfg = &self.config;
        if level == cfg.coarsest_level {
            return match (&self.coarse_lu, cfg.coarse) {
                (Some(lu), _) => {
                    lu.solve(f, u);
                    Ok(())
                }
                (None, CoarseSolve::Sweeps(n)) => smooth(a, u, f, &cfg.smoother, n),
                (None, CoarseSolve::Direct) => unreachable!("direct coarse solve is factored at build time"),
            };
        }
        smooth(a, u, f, &cfg.smoother, cfg.pre_sweeps)?;
        let mut r = a.zeros();
        residual(a, u, f, &mut r)?;
        let rc = restrict_field(&self.grids, &r)?;
        drop(r);
        let mut ec = self.level(level - 1).zeros();
        self.v_cycle(level - 1, &rc, &mut ec)?;
        prolongate_add(&self.grids, &ec, u, cfg.prolongation)?;
        smooth(a, u, f, &cfg.smoother, cfg.post_sweeps)
    }

    /// `μ` V-cycles on the finest level from a zero initial guess.
    pub fn precondition(&self, f: &Field, z: &mut Field, cycles: usize) -> Result<()> {
        z.fill(0.0);
        for _ in 0..cycles {
            self.v_cycle(self.finest_level(), f, z)?;
        }
        Ok(())
    }

    /// Geometric-mean residual reduction per cycle, skipping the first cycle.
    ///
    /// Cycling stops early once the residual reaches round-off level
    /// (`1e-13 ‖f‖`); if the first cycle already gets there the reported rate
    /// is that cycle's own reduction factor.
    pub fn measure_cycle_rate(&self, f: &Field, n_cycles: usize) -> Result<f64> {
        if n_cycles < 2 {
            return Err(Error::Config("cycle-rate measurement needs at least two cycles".into()));
        }
        let a = self.finest();
        let f_norm = f.norm();
        if f_norm == 0.0 {
            return Ok(0.0);
        }
        let floor = 1e-13 * f_norm;
        let mut u = a.zeros();
        let mut r = a.zeros();
        let mut norms = Vec::with_capacity(n_cycles);
        for _ in 0..n_cycles {
            self.v_cycle(self.finest_level(), f, &mut u)?;
            residual(a, &u, f, &mut r)?;
            norms.push(r.norm());
            if norms.last().copied().unwrap_or(0.0) <= floor {
                break;
            }
        }
        if norms.len() < 2 {
            return Ok(norms[0] / f_norm);
        }
        let n = norms.len();
        Ok((norms[n - 1] / norms[0]).powf(1.0 / (n - 1) as f64))
    }

    /// Horizontal-coupling to mass ratio on every level, coarsest first.
    pub fn coupling_ratios(&self) -> Vec<f64> {
        self.levels.iter().map(HattedCoefficients::coupling_ratio).collect()
    }
}

/// LU factors of one level's operator, unknowns ordered layer by layer
/// (`k · n_cells + T`) so the bandwidth is the number of cells.
#[derive(Debug, Clone)]
struct BandedLu {
    n: usize,
    n_cells: usize,
    n_r: usize,
    bw: usize,
    /// Row `i`, column `j` at `band[i * (2 bw + 1) + j + bw − i]`.
    band: Vec<f64>,
}

impl BandedLu {
    fn factor(a: &HattedCoefficients) -> Result<Self> {
        let (n_cells, n_r) = (a.n_cells(), a.n_r());
        let n = n_cells * n_r;
        let bw = n_cells;
        let width = 2 * bw + 1;
        let mut band = vec![0.0; n * width];
        let at = |i: usize, j: usize| i * width + j + bw - i;
        let mut m = a.column_buffer();
        for t in 0..n_cells {
            a.fill_column(t, &mut m);
            for k in 0..n_r {
                let i = k * n_cells + t;
                band[at(i, i)] += m.a[k];
                if k + 1 < n_r {
                    band[at(i, i + n_cells)] += m.b[k];
                }
                if k > 0 {
                    band[at(i, i - n_cells)] += m.c[k];
                }
                for j in 0..3 {
                    band[at(i, k * n_cells + m.neighbors[j])] += m.d[j][k];
                }
            }
        }
        // Row-diagonally dominant, so no pivoting.
        for p in 0..n {
            let pivot = band[at(p, p)];
            if !pivot.is_finite() || pivot.abs() < f64::MIN_POSITIVE {
                let (k, t) = (p / n_cells, p % n_cells);
                return Err(Error::SingularSystem { row: t * n_r + k });
            }
            let last = (p + bw).min(n - 1);
            for r in p + 1..=last {
                let l = band[at(r, p)] / pivot;
                if l == 0.0 {
                    continue;
                }
                band[at(r, p)] = l;
                for c in p + 1..=last {
                    band[at(r, c)] -= l * band[at(p, c)];
                }
            }
        }
        Ok(BandedLu { n, n_cells, n_r, bw, band })
    }

    /// `u ← A⁻¹ f`; the incoming `u` is ignored.
    fn solve(&self, f: &Field, u: &mut Field) {
        let (n, bw, width) = (self.n, self.bw, 2 * self.bw + 1);
        let at = |i: usize, j: usize| i * width + j + bw - i;
        let mut x = vec![0.0; n];
        for t in 0..self.n_cells {
            for k in 0..self.n_r {
                x[k * self.n_cells + t] = f.values[t * self.n_r + k];
            }
        }
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(bw)..i {
                s -= self.band[at(i, j)] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + bw).min(n - 1) {
                s -= self.band[at(i, j)] * x[j];
            }
            x[i] = s / self.band[at(i, i)];
        }
        for t in 0..self.n_cells {
            for k in 0..self.n_r {
                u.values[t * self.n_r + k] = x[k * self.n_cells + t];
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::apply_operator;
    use crate::geometry::DEFAULT_DEPTH;
    use crate::profiles::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(level: usize, cells: usize, n_r: usize, seed: u64) -> Field {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Field::from_fn(level, cells, n_r, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn restriction_sums_children() {
        let h = GridHierarchy::build(2).unwrap();
        let mut ones = Field::zeros(2, h.grid(2).n_cells(), 3);
        ones.fill(1.0);
        assert!(restrict_field(&h, &ones).unwrap().values.iter().all(|&x| x == 4.0));

        let mut impulse = Field::zeros(2, h.grid(2).n_cells(), 3);
        impulse.values[37 * 3 + 1] = 2.5;
        let c = restrict_field(&h, &impulse).unwrap();
        let parent = h.parents[1][37];
        for (i, &x) in c.values.iter().enumerate() {
            assert_eq!(x, if i == parent * 3 + 1 { 2.5 } else { 0.0 });
        }

        let fine = random(2, h.grid(2).n_cells(), 3, 1);
        let c = restrict_field(&h, &fine).unwrap();
        for t in 0..h.grid(1).n_cells() {
            for k in 0..3 {
                let mut s = 0.0;
                for (child, &p) in h.parents[1].iter().enumerate() {
                    if p == t {
                        s += fine.values[child * 3 + k];
                    }
                }
                assert!((c.values[t * 3 + k] - s).abs() < 1e-15);
            }
        }
        let coarsest = Field::zeros(0, 20, 3);
        assert!(matches!(restrict_field(&h, &coarsest), Err(Error::LevelMismatch { .. })));
    }

    #[test]
    fn prolongation_reproduces_constants_and_is_linear() {
        let h = GridHierarchy::build(2).unwrap();
        for kind in [Prolongation::Linear, Prolongation::Constant] {
            let mut c = Field::zeros(1, h.grid(1).n_cells(), 2);
            c.fill(3.25);
            assert!(prolongate_field(&h, &c, kind).unwrap().values.iter().all(|&x| (x - 3.25).abs() < 1e-15));
        }
        let u = random(1, h.grid(1).n_cells(), 2, 2);
        let v = random(1, h.grid(1).n_cells(), 2, 3);
        let mut w = u.clone();
        w.scale(0.7);
        w.axpy(-1.3, &v);
        let pu = prolongate_field(&h, &u, Prolongation::Linear).unwrap();
        let pv = prolongate_field(&h, &v, Prolongation::Linear).unwrap();
        let pw = prolongate_field(&h, &w, Prolongation::Linear).unwrap();
        for i in 0..pw.len() {
            assert!((pw.values[i] - (0.7 * pu.values[i] - 1.3 * pv.values[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn prolongated_impulse_stencil() {
        let h = GridHierarchy::build(1).unwrap();
        let coarse_grid = h.grid(0);
        let t = 4;
        let mut c = Field::zeros(0, 20, 1);
        c.values[t] = 1.0;
        let p = prolongate_field(&h, &c, Prolongation::Linear).unwrap();
        // Hand-built expectation: own children get 1 (centre) or 1/2 (corners);
        // a neighbour's corner child gets 1/4 for each shared coarse edge.
        let mut expected = vec![0.0; 80];
        expected[4 * t] = 1.0;
        for c in 1..4 {
            expected[4 * t + c] = 0.5;
        }
        let corner_edges = [(0, 2), (0, 1), (1, 2)];
        for s in 0..20 {
            if s == t {
                continue;
            }
            for (c, &(e1, e2)) in corner_edges.iter().enumerate() {
                for e in [e1, e2] {
                    if coarse_grid.neighbors[s][e].cell == t {
                        expected[4 * s + c + 1] += 0.25;
                    }
                }
            }
        }
        let support: Vec<usize> = (0..80).filter(|&i| expected[i] != 0.0).collect();
        // 4 own children + 2 corner children in each of the 3 neighbours.
        assert_eq!(support.len(), 4 + 6);
        for i in 0..80 {
            assert!((p.values[i] - expected[i]).abs() < 1e-15, "child {i}");
        }
    }

    fn balanced(level: usize, n_r: usize, n: f64) -> (Arc<GridHierarchy>, VerticalGrid, ProfileSet, ProfileSet, f64) {
        let h = Arc::new(GridHierarchy::build(level).unwrap());
        let v = VerticalGrid::uniform(n_r, DEFAULT_DEPTH).unwrap();
        let c = PhysicalConstants::default();
        let flow = BalancedFlow::new(n, c).unwrap();
        let params = OperatorParameters::for_courant(10.0, h.finest(), &c).unwrap();
        let full = balanced_flow_profiles(h.finest(), &v, &flow, &params);
        let fac = factorize_balanced_flow(h.finest(), &v, &flow, &params);
        (h, v, full, fac, params.omega)
    }

    #[test]
    fn constant_profiles_restrict_exactly() {
        let h = Arc::new(GridHierarchy::build(2).unwrap());
        let v = VerticalGrid::uniform(3, DEFAULT_DEPTH).unwrap();
        let p = ProfileSet::constant(h.finest(), 3, 1.5, 2.0, 0.5, 0.1);
        let mg = MultigridHierarchy::build(&p, h.clone(), &v, 0.4, CycleConfig::default()).unwrap();
        for level in 0..=2 {
            let direct = assemble_hatted(&ProfileSet::constant(h.grid(level), 3, 1.5, 2.0, 0.5, 0.1), h.grid(level), &v, 0.4)
                .unwrap();
            let got = mg.level(level);
            for (a, b) in [(&got.beta, &direct.beta), (&got.alpha_s, &direct.alpha_s), (&got.alpha_r, &direct.alpha_r)] {
                for (x, y) in a.stored().zip(b.stored()) {
                    assert!((x - y).abs() <= 1e-12 * y.abs());
                }
            }
        }
    }

    #[test]
    fn factorized_hierarchy_matches_full_at_zero_epsilon() {
        let c = PhysicalConstants::default();
        let (h, v, full, fac, omega) = balanced(2, 6, c.n_star());
        let a = MultigridHierarchy::build(&full, h.clone(), &v, omega, CycleConfig::default()).unwrap();
        let b = MultigridHierarchy::build(&fac, h.clone(), &v, omega, CycleConfig::default()).unwrap();
        for level in 0..=2 {
            assert_eq!(b.level(level).kind(), ProfileKind::Factorized);
            let (x, y) = (a.level(level), b.level(level));
            for t in 0..x.n_cells() {
                let (mx, my) = (x.column_matrix(t), y.column_matrix(t));
                for k in 0..6 {
                    assert!((mx.a[k] - my.a[k]).abs() <= 1e-12 * mx.a[k].abs());
                    for j in 0..3 {
                        assert!((mx.d[j][k] - my.d[j][k]).abs() <= 1e-12 * mx.d[j][k].abs());
                    }
                }
            }
        }
    }

    #[test]
    fn v_cycle_is_linear_and_zero_preserving() {
        let (h, v, full, _, omega) = balanced(2, 4, 0.025);
        for smoother in [SmootherConfig::sor(1.0), SmootherConfig::jacobi(0.8)] {
            let config = CycleConfig { smoother, ..Default::default() };
            let mg = MultigridHierarchy::build(&full, h.clone(), &v, omega, config).unwrap();
            let cells = h.finest().n_cells();
            let f0 = Field::zeros(2, cells, 4);
            let mut z = f0.clone();
            mg.precondition(&f0, &mut z, 1).unwrap();
            assert!(z.values.iter().all(|&x| x == 0.0));

            let f1 = random(2, cells, 4, 4);
            let f2 = random(2, cells, 4, 5);
            let mut f3 = f1.clone();
            f3.scale(2.0);
            f3.axpy(-0.5, &f2);
            let run = |f: &Field| {
                let mut z = f.zeros_like();
                mg.precondition(f, &mut z, 1).unwrap();
                z
            };
            let (z1, z2, z3) = (run(&f1), run(&f2), run(&f3));
            let mut diff = z1.clone();
            diff.scale(2.0);
            diff.axpy(-0.5, &z2);
            diff.axpy(-1.0, &z3);
            assert!(diff.norm() <= 1e-12 * z3.norm());
        }
    }

    #[test]
    fn mass_only_rate_is_zero() {
        let h = Arc::new(GridHierarchy::build(2).unwrap());
        let v = VerticalGrid::uniform(4, DEFAULT_DEPTH).unwrap();
        let p = ProfileSet::constant(h.finest(), 4, 1.0, 1e-300, 1e-300, 0.0);
        let mg = MultigridHierarchy::build(&p, h.clone(), &v, 1e-3, CycleConfig::default()).unwrap();
        let f = random(2, h.finest().n_cells(), 4, 6);
        assert!(mg.measure_cycle_rate(&f, 5).unwrap() <= 1e-10);
    }

    #[test]
    fn cycles_converge_on_balanced_flow() {
        let (h, v, full, _, omega) = balanced(3, 16, 0.022);
        let mg = MultigridHierarchy::build(&full, h.clone(), &v, omega, CycleConfig::default()).unwrap();
        let f = random(3, h.finest().n_cells(), 16, 7);
        let rate = mg.measure_cycle_rate(&f, 6).unwrap();
        assert!(rate < 0.3, "{rate}");
        let ratios = mg.coupling_ratios();
        assert!(ratios.windows(2).all(|w| w[0] < w[1]), "{ratios:?}");

        let mut u = f.zeros_like();
        mg.v_cycle(3, &f, &mut u).unwrap();
        let mut au = f.zeros_like();
        apply_operator(mg.finest(), &u, &mut au).unwrap();
        au.axpy(-1.0, &f);
        assert!(au.norm() < f.norm());
    }

    #[test]
    fn direct_coarse_solve_is_exact() {
        let (h, v, full, _, omega) = balanced(1, 5, 0.028);
        let mg = MultigridHierarchy::build(&full, h.clone(), &v, omega, CycleConfig::default()).unwrap();
        let u_star = random(0, 20, 5, 8);
        let mut f = u_star.zeros_like();
        apply_operator(mg.level(0), &u_star, &mut f).unwrap();
        let mut u = u_star.zeros_like();
        mg.v_cycle(0, &f, &mut u).unwrap();
        let mut diff = u.clone();
        diff.axpy(-1.0, &u_star);
        assert!(diff.norm() < 1e-12 * u_star.norm(), "{}", diff.norm());
    }

    #[test]
    fn rejects_bad_coarsest_level() {
        let (h, v, full, _, omega) = balanced(1, 2, 0.022);
        let config = CycleConfig { coarsest_level: 2, ..Default::default() };
        assert!(matches!(MultigridHierarchy::build(&full, h, &v, omega, config), Err(Error::Config(_))));
    }
}

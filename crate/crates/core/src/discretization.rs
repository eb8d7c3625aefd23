//! Finite-volume coefficients, column matrices and the matrix-free operator.
//!
//! Row `(T, k)` of the operator reads
//! `a_k u_{T,k} + b_k u_{T,k+1} + c_k u_{T,k−1} + Σ_{T'} d_{TT',k} u_{T',k}` with
//!
//! ```text
//! d_{TT',k} = −α̂_S(TT', k)
//! b_k       = −α̂_r(k+1) − ξ̂_r(k+1)
//! c_k       = −α̂_r(k)   + ξ̂_r(k)
//! a_k       = β̂_k − (b_k + c_k + Σ d_{TT',k})
//! ```
//!
//! where `α̂_r` and `ξ̂_r` live on faces `0..=n_r` and vanish on the two
//! boundary faces.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::geometry::{HorizontalGrid, VerticalGrid};
use crate::par;
use crate::profiles::{ProfileField, ProfileKind, ProfileSet};

/// Default limit on the number of unknowns for dense assembly.
pub const DENSE_CAP: usize = 100_000;

/// One value per (cell, layer), columns contiguous with `k` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub level: usize,
    pub n_r: usize,
    pub values: Vec<f64>,
}

impl Field {
    pub fn zeros(level: usize, n_cells: usize, n_r: usize) -> Self {
        Field { level, n_r, values: vec![0.0; n_cells * n_r] }
    }

    pub fn from_fn(level: usize, n_cells: usize, n_r: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(n_cells * n_r);
        for t in 0..n_cells {
            values.extend((0..n_r).map(|k| f(t, k)));
        }
        Field { level, n_r, values }
    }

    pub fn n_cells(&self) -> usize {
        self.values.len() / self.n_r
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn column(&self, t: usize) -> &[f64] {
        &self.values[t * self.n_r..(t + 1) * self.n_r]
    }

    pub fn column_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.values[t * self.n_r..(t + 1) * self.n_r]
    }

    pub fn zeros_like(&self) -> Self {
        Field { level: self.level, n_r: self.n_r, values: vec![0.0; self.values.len()] }
    }

    pub fn fill(&mut self, v: f64) {
        self.values.iter_mut().for_each(|x| *x = v);
    }

    /// Euclidean norm, accumulated in index order.
    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    /// Inner product, accumulated in index order.
    pub fn dot(&self, other: &Field) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    /// `self += s · x`.
    pub fn axpy(&mut self, s: f64, x: &Field) {
        for (a, b) in self.values.iter_mut().zip(&x.values) {
            *a += s * b;
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|x| x.is_finite())
    }
}

/// Precomputed discrete coefficients `β̂, α̂_S, α̂_r, ξ̂_r`.
///
/// Each field is stored full or separated exactly as the profiles it was
/// assembled from; `ω²` sits inside the hatted values.
#[derive(Debug, Clone)]
pub struct HattedCoefficients {
    grid: Arc<HorizontalGrid>,
    n_r: usize,
    pub beta: ProfileField,
    pub alpha_s: ProfileField,
    pub alpha_r: ProfileField,
    pub xi_r: ProfileField,
}

impl HattedCoefficients {
    /// Wraps already-hatted fields after checking shapes and signs.
    pub fn from_parts(
        grid: Arc<HorizontalGrid>,
        n_r: usize,
        beta: ProfileField,
        alpha_s: ProfileField,
        alpha_r: ProfileField,
        xi_r: ProfileField,
    ) -> Result<Self> {
        let set = ProfileSet { beta, alpha_s, alpha_r, xi_r };
        set.validate(&grid, n_r)?;
        let ProfileSet { beta, alpha_s, alpha_r, xi_r } = set;
        Ok(HattedCoefficients { grid, n_r, beta, alpha_s, alpha_r, xi_r })
    }

    pub fn grid(&self) -> &Arc<HorizontalGrid> {
        &self.grid
    }

    pub fn level(&self) -> usize {
        self.grid.level
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_cells(&self) -> usize {
        self.grid.n_cells()
    }

    pub fn n_unknowns(&self) -> usize {
        self.n_cells() * self.n_r
    }

    pub fn kind(&self) -> ProfileKind {
        ProfileSet {
            beta: self.beta.clone(),
            alpha_s: self.alpha_s.clone(),
            alpha_r: self.alpha_r.clone(),
            xi_r: self.xi_r.clone(),
        }
        .kind()
    }

    pub fn zeros(&self) -> Field {
        Field::zeros(self.level(), self.n_cells(), self.n_r)
    }

    /// Same coefficients with `ξ̂_r = 0`.
    pub fn without_advection(&self) -> Self {
        let set = ProfileSet {
            beta: self.beta.clone(),
            alpha_s: self.alpha_s.clone(),
            alpha_r: self.alpha_r.clone(),
            xi_r: self.xi_r.clone(),
        }
        .without_advection();
        HattedCoefficients { xi_r: set.xi_r, ..self.clone() }
    }

    /// Scratch buffers for [`fill_column`](Self::fill_column).
    pub fn column_buffer(&self) -> ColumnMatrix {
        ColumnMatrix::new(self.n_r)
    }

    /// Reconstructs the column matrix of cell `t` into `m`.
    pub fn fill_column(&self, t: usize, m: &mut ColumnMatrix) {
        let n = self.n_r;
        let ColumnMatrix { a, b, c, d, neighbors, face, face2 } = m;
        let alpha_r = self.alpha_r.column(t, face);
        let xi = self.xi_r.column(t, face2);
        for k in 0..n {
            b[k] = -alpha_r[k + 1] - xi[k + 1];
            c[k] = -alpha_r[k] + xi[k];
        }
        for (j, nb) in self.grid.neighbors[t].iter().enumerate() {
            neighbors[j] = nb.cell;
            let dj = &mut d[j];
            match &self.alpha_s {
                ProfileField::Full { values, .. } => {
                    for (x, v) in dj.iter_mut().zip(&values[nb.edge * n..(nb.edge + 1) * n]) {
                        *x = -v;
                    }
                }
                ProfileField::Separable { vertical, horizontal } => {
                    let h = horizontal[nb.edge];
                    for (x, v) in dj.iter_mut().zip(vertical) {
                        *x = -(v * h);
                    }
                }
            }
        }
        let beta = self.beta.column(t, face);
        for k in 0..n {
            a[k] = beta[k] - (b[k] + c[k] + (d[0][k] + d[1][k] + d[2][k]));
        }
    }

    pub fn column_matrix(&self, t: usize) -> ColumnMatrix {
        let mut m = self.column_buffer();
        self.fill_column(t, &mut m);
        m
    }

    /// Largest ratio of summed horizontal coupling to the mass term `β̂`.
    pub fn coupling_ratio(&self) -> f64 {
        let mut m = self.column_buffer();
        let mut worst: f64 = 0.0;
        for t in 0..self.n_cells() {
            self.fill_column(t, &mut m);
            let mut beta = vec![0.0; self.n_r];
            let beta = self.beta.column(t, &mut beta);
            for k in 0..self.n_r {
                let h = -(m.d[0][k] + m.d[1][k] + m.d[2][k]);
                worst = worst.max(h / beta[k]);
            }
        }
        worst
    }

    fn check_field(&self, u: &Field, name: &str) -> Result<()> {
        if u.n_r != self.n_r || u.values.len() != self.n_unknowns() {
            return Err(Error::ShapeMismatch(format!(
                "{name}: field has {} values with n_r = {}, operator expects {} × {}",
                u.values.len(),
                u.n_r,
                self.n_cells(),
                self.n_r
            )));
        }
        if u.level != self.level() {
            return Err(Error::LevelMismatch { expected: self.level(), found: u.level });
        }
        Ok(())
    }
}

/// Tridiagonal column block `(a, b, c)` and the three neighbour diagonals.
#[derive(Debug, Clone, PartialEq)]
pub struct ColumnMatrix {
    /// Diagonal, length `n_r`.
    pub a: Vec<f64>,
    /// Coupling `k → k+1`; the last entry is zero.
    pub b: Vec<f64>,
    /// Coupling `k → k−1`; the first entry is zero.
    pub c: Vec<f64>,
    /// Diagonal couplings to the three horizontal neighbours.
    pub d: [Vec<f64>; 3],
    pub neighbors: [usize; 3],
    face: Vec<f64>,
    face2: Vec<f64>,
}

impl ColumnMatrix {
    pub fn new(n_r: usize) -> Self {
        ColumnMatrix {
            a: vec![0.0; n_r],
            b: vec![0.0; n_r],
            c: vec![0.0; n_r],
            d: [vec![0.0; n_r], vec![0.0; n_r], vec![0.0; n_r]],
            neighbors: [0; 3],
            face: vec![0.0; n_r + 1],
            face2: vec![0.0; n_r + 1],
        }
    }

    pub fn n_r(&self) -> usize {
        self.a.len()
    }

    /// `out = f − (A u)_T` restricted to this column.
    #[inline]
    pub fn residual_into(&self, t: usize, u: &[f64], f: &[f64], out: &mut [f64]) {
        let n = self.n_r();
        let col = &u[t * n..(t + 1) * n];
        let nb: [&[f64]; 3] = self.neighbors.map(|s| &u[s * n..(s + 1) * n]);
        for k in 0..n {
            let mut s = self.a[k] * col[k] + self.d[0][k] * nb[0][k] + self.d[1][k] * nb[1][k] + self.d[2][k] * nb[2][k];
            if k + 1 < n {
                s += self.b[k] * col[k + 1];
            }
            if k > 0 {
                s += self.c[k] * col[k - 1];
            }
            out[k] = f[k] - s;
        }
    }

    /// `out = (A u)_T`.
    #[inline]
    pub fn apply_into(&self, t: usize, u: &[f64], out: &mut [f64]) {
        let n = self.n_r();
        let col = &u[t * n..(t + 1) * n];
        let nb: [&[f64]; 3] = self.neighbors.map(|s| &u[s * n..(s + 1) * n]);
        for k in 0..n {
            let mut s = self.a[k] * col[k] + self.d[0][k] * nb[0][k] + self.d[1][k] * nb[1][k] + self.d[2][k] * nb[2][k];
            if k + 1 < n {
                s += self.b[k] * col[k + 1];
            }
            if k > 0 {
                s += self.c[k] * col[k - 1];
            }
            out[k] = s;
        }
    }
}

/// Hatted coefficients from profiles on `grid`.
pub fn assemble_hatted(
    profiles: &ProfileSet,
    grid: &Arc<HorizontalGrid>,
    vertical: &VerticalGrid,
    omega: f64,
) -> Result<HattedCoefficients> {
    let n_r = vertical.n_r();
    profiles.validate(grid, n_r)?;
    if !(omega > 0.0) || !omega.is_finite() {
        return Err(Error::Config(format!("ω must be positive, got {omega}")));
    }
    let w2 = omega * omega;
    let areas: Vec<f64> = grid.cells.iter().map(|c| c.area).collect();
    let fluxes: Vec<f64> = grid.edges.iter().map(|e| e.flux_weight).collect();
    let volumes: Vec<f64> = (0..n_r).map(|k| vertical.volume(k)).collect();
    let thickness: Vec<f64> = (0..n_r).map(|k| vertical.dr(k)).collect();
    let (diffusion, advection): (Vec<f64>, Vec<f64>) = (0..=n_r)
        .map(|k| {
            if vertical.sigma(k) == 0.0 {
                return (0.0, 0.0);
            }
            let (r, lo, hi) = (vertical.r(k), vertical.r(k - 1), vertical.r(k + 1));
            (2.0 * r * r / (hi - lo), r * r * (hi - r) / (hi - lo))
        })
        .unzip();

    // Full fields absorb every factor; separated fields keep the vertical
    // weight in the vertical vector and `scale` with the horizontal scalar.
    let hat = |field: &ProfileField, vertical_weight: &[f64], horizontal_weight: &[f64], scale: f64| match field {
        ProfileField::Full { values, n_vertical } => ProfileField::Full {
            values: values
                .chunks(*n_vertical)
                .zip(horizontal_weight)
                .flat_map(|(col, h)| col.iter().zip(vertical_weight).map(move |(v, w)| scale * h * w * v))
                .collect(),
            n_vertical: *n_vertical,
        },
        ProfileField::Separable { vertical, horizontal } => ProfileField::Separable {
            vertical: vertical.iter().zip(vertical_weight).map(|(v, w)| w * v).collect(),
            horizontal: horizontal.iter().zip(horizontal_weight).map(|(v, h)| scale * h * v).collect(),
        },
    };

    HattedCoefficients::from_parts(
        grid.clone(),
        n_r,
        hat(&profiles.beta, &volumes, &areas, 1.0),
        hat(&profiles.alpha_s, &thickness, &fluxes, w2),
        hat(&profiles.alpha_r, &diffusion, &areas, w2),
        hat(&profiles.xi_r, &advection, &areas, w2),
    )
}

/// `out = A u`, matrix-free and column-parallel.
pub fn apply_operator(hatted: &HattedCoefficients, u: &Field, out: &mut Field) -> Result<()> {
    hatted.check_field(u, "input")?;
    hatted.check_field(out, "output")?;
    let n_r = hatted.n_r;
    let u = &u.values;
    par::for_each_column(&mut out.values, n_r, || hatted.column_buffer(), |m, t, col| {
        hatted.fill_column(t, m);
        m.apply_into(t, u, col);
    });
    Ok(())
}

/// `r = f − A u`.
pub fn residual(hatted: &HattedCoefficients, u: &Field, f: &Field, r: &mut Field) -> Result<()> {
    hatted.check_field(u, "iterate")?;
    hatted.check_field(f, "right-hand side")?;
    hatted.check_field(r, "residual")?;
    let n_r = hatted.n_r;
    let (u, f) = (&u.values, &f.values);
    par::for_each_column(&mut r.values, n_r, || hatted.column_buffer(), |m, t, col| {
        hatted.fill_column(t, m);
        m.residual_into(t, u, &f[t * n_r..(t + 1) * n_r], col);
    });
    Ok(())
}

/// Explicit sparse matrix in row-major coordinate form.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    pub n: usize,
    /// `(row, col, value)`, sorted by row then column, no duplicates.
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
        }
        m
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().map(|e| e.2.abs()).fold(0.0, f64::max)
    }

    /// Writes one `row col value` line per entry.
    pub fn write_coordinate(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "% {} {} {}", self.n, self.n, self.entries.len())?;
        for &(i, j, v) in &self.entries {
            writeln!(out, "{i} {j} {v:e}")?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Explicit matrix with row `(T, k)` at index `T·n_r + k`.
pub fn dense_assemble(hatted: &HattedCoefficients, cap: usize) -> Result<SparseMatrix> {
    let n = hatted.n_unknowns();
    if n > cap {
        return Err(Error::CapExceeded { size: n, cap });
    }
    let n_r = hatted.n_r;
    let mut entries = Vec::with_capacity(n * 6);
    let mut m = hatted.column_buffer();
    for t in 0..hatted.n_cells() {
        hatted.fill_column(t, &mut m);
        for k in 0..n_r {
            let row = t * n_r + k;
            let mut cols = vec![(row, m.a[k])];
            if k > 0 {
                cols.push((row - 1, m.c[k]));
            }
            if k + 1 < n_r {
                cols.push((row + 1, m.b[k]));
            }
            for j in 0..3 {
                cols.push((m.neighbors[j] * n_r + k, m.d[j][k]));
            }
            cols.sort_by_key(|c| c.0);
            entries.extend(cols.into_iter().map(|(c, v)| (row, c, v)));
        }
    }
    Ok(SparseMatrix { n, entries })
}

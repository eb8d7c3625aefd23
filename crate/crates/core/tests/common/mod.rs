//! Independent reference implementations used by the integration tests.

#![allow(dead_code)]

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use shellmg::geometry::{HorizontalGrid, VerticalGrid};
use shellmg::profiles::ProfileSet;

/// Builds the operator term by term from raw profiles and geometry.
///
/// Each flux is written as a difference `(u_here − u_there)` times a face
/// coefficient, following the finite-volume derivation rather than the
/// stencil formulas of the library. Advection uses the uniform-grid form
/// `ω² |T| r_f² / 2 · ξ_f`.
pub fn finite_volume_matrix(profiles: &ProfileSet, grid: &HorizontalGrid, vertical: &VerticalGrid, omega: f64) -> DMatrix<f64> {
    let n_r = vertical.n_r();
    let n = grid.n_cells() * n_r;
    let w2 = omega * omega;
    let idx = |t: usize, k: usize| t * n_r + k;
    let mut a = DMatrix::zeros(n, n);
    for (t, cell) in grid.cells.iter().enumerate() {
        for k in 0..n_r {
            let row = idx(t, k);
            a[(row, row)] += cell.area * vertical.volume(k) * profiles.beta.value(t, k);
            for nb in &grid.neighbors[t] {
                let edge = &grid.edges[nb.edge];
                let flux = w2 * vertical.dr(k) * edge.flux_weight * profiles.alpha_s.value(nb.edge, k);
                a[(row, row)] += flux;
                a[(row, idx(nb.cell, k))] -= flux;
            }
            // Upper face k+1 and lower face k.
            for (face, other) in [(k + 1, k.checked_add(1).filter(|&j| j < n_r)), (k, k.checked_sub(1))] {
                let Some(other) = other else { continue };
                let (r, lo, hi) = (vertical.r(face), vertical.r(face - 1), vertical.r(face + 1));
                let diff = w2 * cell.area * 2.0 * r * r / (hi - lo) * profiles.alpha_r.value(t, face);
                a[(row, row)] += diff;
                a[(row, idx(t, other))] -= diff;
                let adv = w2 * cell.area * 0.5 * r * r * profiles.xi_r.value(t, face);
                let sign = if face == k + 1 { 1.0 } else { -1.0 };
                a[(row, row)] += sign * adv;
                a[(row, idx(t, other))] -= sign * adv;
            }
        }
    }
    a
}

/// Plain Gaussian elimination with partial pivoting.
pub fn gauss_solve(mut m: DMatrix<f64>, mut b: DVector<f64>) -> DVector<f64> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs())).unwrap();
        m.swap_rows(col, p);
        b.swap_rows(col, p);
        for row in col + 1..n {
            let f = m[(row, col)] / m[(col, col)];
            for j in col..n {
                m[(row, j)] -= f * m[(col, j)];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = DVector::zeros(n);
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|j| m[(row, j)] * x[j]).sum();
        x[row] = (b[row] - s) / m[(row, row)];
    }
    x
}

/// Cyclic Jacobi eigenvalues of a symmetric matrix, ascending.
pub fn jacobi_eigenvalues(mut a: DMatrix<f64>) -> Vec<f64> {
    let n = a.nrows();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[(i, j)].powi(2)).sum();
        if off.sqrt() <= 1e-15 * a.norm() {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)] == 0.0 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[(k, p)], a[(k, q)]);
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[(p, k)], a[(q, k)]);
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut d: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    d.sort_by(f64::total_cmp);
    d
}

/// Writes straight to stderr so the line survives output capture.
pub fn report(id: usize, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr().lock(), "acceptance {id}/9 {name}: {verdict} ({detail})");
}

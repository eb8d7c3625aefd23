//! Coefficient fields ("profiles") of the pressure-correction operator.
//!
//! The operator is `−ω²∇·(α∇u) − ω² ξ_r ∂_r u + βu` with `α = diag(α_r, α_S, α_S)`.
//! For a reference state `(π̄, θ̄, ρ̄)` the profiles are
//! `α_S = ρ̄θ̄`, `α_r = r²Λ̄ρ̄θ̄`, `ξ_r = Λ̄ρ̄∂_rθ̄` and `β = γρ̄/π̄`, with
//! `Λ̄ = 1/(1 + (μΔt)²N̄²)`, `r` in Earth radii and `θ̄` in units of `T_0`.
//!
//! Sample points: `β` at `(r̂_T, r_{k+1/2})`, `α_S` at `(edge midpoint, r_{k+1/2})`,
//! `α_r` on face `k` at `(r̂_T, r_k)` and `ξ_r` on face `k` at `(r̂_T, r_{k−1/2})`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{latitude, GridHierarchy, HorizontalGrid, VerticalGrid, EARTH_RADIUS};
use crate::par;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysicalConstants {
    /// Reference pressure, Pa.
    pub p0: f64,
    /// Reference surface temperature, K.
    pub t0: f64,
    /// Gas constant of dry air, J/(kg K).
    pub r_d: f64,
    /// Specific heat at constant pressure, J/(kg K).
    pub c_p: f64,
    /// Gravitational acceleration, m/s².
    pub g: f64,
    pub earth_radius: f64,
    /// Angular velocity of the Earth, 1/s.
    pub earth_omega: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        PhysicalConstants {
            p0: 10_000.0,
            t0: 273.0,
            r_d: 287.05,
            c_p: 1005.0,
            g: 9.80665,
            earth_radius: EARTH_RADIUS,
            earth_omega: 2.0 * PI / 86_400.0,
        }
    }
}

impl PhysicalConstants {
    pub fn kappa(&self) -> f64 {
        self.r_d / self.c_p
    }

    pub fn gamma(&self) -> f64 {
        (1.0 - self.kappa()) / self.kappa()
    }

    /// Speed of sound at `T_0`.
    pub fn c_s(&self) -> f64 {
        (self.c_p * self.t0 / self.gamma()).sqrt()
    }

    /// Typical horizontal velocity `c_h = √γ c_s`.
    pub fn c_h(&self) -> f64 {
        self.gamma().sqrt() * self.c_s()
    }

    /// `Γ = p_0 / R_d` in the equation of state `ρθ = Γπ^γ`.
    pub fn big_gamma(&self) -> f64 {
        self.p0 / self.r_d
    }

    /// Buoyancy frequency at which the balanced-flow profiles separate exactly.
    pub fn n_star(&self) -> f64 {
        self.g / (self.c_p * self.t0).sqrt()
    }
}

/// Time-step dependent scaling of the operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorParameters {
    /// `ω = c_h μΔt / R_earth`.
    pub omega: f64,
    /// Off-centred implicit step `μΔt`, s.
    pub mu_dt: f64,
}

impl OperatorParameters {
    pub fn from_mu_dt(mu_dt: f64, constants: &PhysicalConstants) -> Result<Self> {
        if !(mu_dt > 0.0) || !mu_dt.is_finite() {
            return Err(Error::Config(format!("μΔt must be positive, got {mu_dt}")));
        }
        Ok(OperatorParameters { omega: constants.c_h() * mu_dt / constants.earth_radius, mu_dt })
    }

    pub fn from_omega(omega: f64, constants: &PhysicalConstants) -> Result<Self> {
        if !(omega > 0.0) || !omega.is_finite() {
            return Err(Error::Config(format!("ω must be positive, got {omega}")));
        }
        Ok(OperatorParameters { omega, mu_dt: omega * constants.earth_radius / constants.c_h() })
    }

    /// Chooses `ω = courant · h` with `h` the mean edge length of `grid`.
    pub fn for_courant(courant: f64, grid: &HorizontalGrid, constants: &PhysicalConstants) -> Result<Self> {
        Self::from_omega(courant * grid.mean_spacing(), constants)
    }
}

/// Mid-latitude jets `u_S(φ) = u_0 cosφ/cosφ_M · exp(−(cosφ − cosφ_M)²/(2σ²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JetParameters {
    /// Peak velocity, m/s.
    pub u0: f64,
    pub phi_m: f64,
    pub sigma: f64,
}

impl Default for JetParameters {
    fn default() -> Self {
        JetParameters { u0: 100.0, phi_m: PI / 4.0, sigma: 0.1 }
    }
}

impl JetParameters {
    pub fn velocity(&self, phi: f64) -> f64 {
        let d = phi.cos() - self.phi_m.cos();
        self.u0 * phi.cos() / self.phi_m.cos() * (-d * d / (2.0 * self.sigma * self.sigma)).exp()
    }

    /// `dF/dφ = 2 R Ω u_S sinφ + u_S² tanφ`, with the `tanφ` pole cancelled analytically.
    pub fn jet_derivative(&self, phi: f64, constants: &PhysicalConstants) -> f64 {
        let d = phi.cos() - self.phi_m.cos();
        let envelope = (-d * d / (2.0 * self.sigma * self.sigma)).exp();
        let scale = self.u0 / self.phi_m.cos();
        let u = scale * phi.cos() * envelope;
        let u2_tan = scale * scale * envelope * envelope * phi.cos() * phi.sin();
        2.0 * constants.earth_radius * constants.earth_omega * u * phi.sin() + u2_tan
    }

    /// Absolute quadrature tolerance for [`jet_function`](Self::jet_function).
    pub fn quadrature_tolerance(&self, constants: &PhysicalConstants) -> f64 {
        1e-8 * constants.earth_radius * constants.earth_omega * self.u0
    }

    /// `F(φ) = ∫_0^φ dF/dφ'`, so `F(0) = 0`.
    pub fn jet_function(&self, phi: f64, constants: &PhysicalConstants) -> f64 {
        if phi == 0.0 {
            return 0.0;
        }
        let f = |x: f64| self.jet_derivative(x, constants);
        adaptive_simpson(&f, 0.0, phi, self.quadrature_tolerance(constants))
    }
}

fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64) -> f64 {
    fn step<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        if depth == 0 || diff.abs() <= 15.0 * tol {
            return left + right + diff / 15.0;
        }
        step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    // Seed with a fixed split so that narrow jets cannot hide between the first samples.
    let n = 8;
    let h = (b - a) / n as f64;
    (0..n)
        .map(|i| {
            let (x0, x1) = (a + h * i as f64, a + h * (i + 1) as f64);
            let (f0, fm, f1) = (f(x0), f(0.5 * (x0 + x1)), f(x1));
            let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
            step(f, x0, x1, f0, fm, f1, whole, tol / n as f64, 48)
        })
        .sum()
}

/// Reference state `(π̄, θ̄, ρ̄)` at one point; `θ̄` in K, `ρ̄` in kg/m³.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceState {
    pub exner: f64,
    pub theta: f64,
    pub rho: f64,
}

/// Balanced zonal flow with constant buoyancy frequency `N` and two jets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BalancedFlow {
    pub constants: PhysicalConstants,
    pub jet: JetParameters,
    pub buoyancy: f64,
}

impl BalancedFlow {
    pub fn new(buoyancy: f64, constants: PhysicalConstants) -> Result<Self> {
        let n_star = constants.n_star();
        if !(buoyancy >= n_star) || !buoyancy.is_finite() {
            return Err(Error::Config(format!(
                "buoyancy frequency {buoyancy} is below N* = {n_star:.6} (ε < 0 is not supported)"
            )));
        }
        Ok(BalancedFlow { constants, jet: JetParameters::default(), buoyancy })
    }

    /// The exactly separable case `N = N*`.
    pub fn separable(constants: PhysicalConstants) -> Self {
        BalancedFlow { constants, jet: JetParameters::default(), buoyancy: constants.n_star() }
    }

    /// Flow with a prescribed separability defect `ε = (N/N*)² − 1 ≥ 0`.
    pub fn with_epsilon(epsilon: f64, constants: PhysicalConstants) -> Result<Self> {
        Self::new(constants.n_star() * (1.0 + epsilon).sqrt(), constants)
    }

    pub fn epsilon(&self) -> f64 {
        (self.buoyancy / self.constants.n_star()).powi(2) - 1.0
    }

    pub fn horizontal_factor(&self, phi: f64) -> f64 {
        let c = &self.constants;
        (-self.buoyancy.powi(2) / (c.g * c.g) * self.jet.jet_function(phi, c)).exp()
    }

    pub fn vertical_factor(&self, r: f64) -> f64 {
        let c = &self.constants;
        (-self.buoyancy.powi(2) * c.earth_radius * (r - 1.0) / c.g).exp()
    }

    pub fn state(&self, phi: f64, r: f64) -> ReferenceState {
        self.state_from_factors(self.horizontal_factor(phi), self.vertical_factor(r))
    }

    fn state_from_factors(&self, es: f64, er: f64) -> ReferenceState {
        let c = &self.constants;
        let eps = self.epsilon();
        let exner = (eps + es * er) / (1.0 + eps);
        ReferenceState {
            exner,
            theta: c.t0 / (es * er),
            rho: c.p0 / (c.r_d * c.t0) * exner.powf(c.gamma()) * es * er,
        }
    }

    /// Separated Exner pressure `π^⊗ = (ε + E^r)/(1 + ε) · E^S`.
    pub fn exner_factorized(&self, phi: f64, r: f64) -> f64 {
        let eps = self.epsilon();
        (eps + self.vertical_factor(r)) / (1.0 + eps) * self.horizontal_factor(phi)
    }

    /// `Λ̄ = 1/(1 + (μΔt N)²)`.
    pub fn lambda(&self, params: &OperatorParameters) -> f64 {
        1.0 / (1.0 + (params.mu_dt * self.buoyancy).powi(2))
    }

    /// `∂_r θ̄ / θ̄` with `r` in Earth radii.
    fn log_theta_gradient(&self) -> f64 {
        self.buoyancy.powi(2) * self.constants.earth_radius / self.constants.g
    }
}

/// One coefficient field: full per-location columns or a vertical×horizontal product.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileField {
    /// `values[i * n_vertical + k]`, columns contiguous.
    Full { values: Vec<f64>, n_vertical: usize },
    /// `value(i, k) = vertical[k] * horizontal[i]`.
    Separable { vertical: Vec<f64>, horizontal: Vec<f64> },
}

impl ProfileField {
    pub fn n_vertical(&self) -> usize {
        match self {
            ProfileField::Full { n_vertical, .. } => *n_vertical,
            ProfileField::Separable { vertical, .. } => vertical.len(),
        }
    }

    pub fn n_locations(&self) -> usize {
        match self {
            ProfileField::Full { values, n_vertical } => values.len() / n_vertical,
            ProfileField::Separable { horizontal, .. } => horizontal.len(),
        }
    }

    pub fn is_separable(&self) -> bool {
        matches!(self, ProfileField::Separable { .. })
    }

    #[inline]
    pub fn value(&self, i: usize, k: usize) -> f64 {
        match self {
            ProfileField::Full { values, n_vertical } => values[i * n_vertical + k],
            ProfileField::Separable { vertical, horizontal } => vertical[k] * horizontal[i],
        }
    }

    /// Column `i`, borrowed for full storage or expanded into `scratch`.
    #[inline]
    pub fn column<'a>(&'a self, i: usize, scratch: &'a mut [f64]) -> &'a [f64] {
        match self {
            ProfileField::Full { values, n_vertical } => &values[i * n_vertical..(i + 1) * n_vertical],
            ProfileField::Separable { vertical, horizontal } => {
                let h = horizontal[i];
                let out = &mut scratch[..vertical.len()];
                for (o, v) in out.iter_mut().zip(vertical) {
                    *o = v * h;
                }
                out
            }
        }
    }

    /// Dense copy of the field.
    pub fn to_full(&self) -> ProfileField {
        match self {
            ProfileField::Full { .. } => self.clone(),
            ProfileField::Separable { vertical, horizontal } => ProfileField::Full {
                values: horizontal.iter().flat_map(|h| vertical.iter().map(move |v| v * h)).collect(),
                n_vertical: vertical.len(),
            },
        }
    }

    /// Iterator over all stored numbers.
    pub fn stored(&self) -> Box<dyn Iterator<Item = f64> + '_> {
        match self {
            ProfileField::Full { values, .. } => Box::new(values.iter().copied()),
            ProfileField::Separable { vertical, horizontal } => Box::new(vertical.iter().chain(horizontal).copied()),
        }
    }

    fn check(&self, name: &str, locations: usize, n_vertical: usize) -> Result<()> {
        if self.n_vertical() != n_vertical || self.n_locations() != locations {
            return Err(Error::ShapeMismatch(format!(
                "{name}: expected {locations} locations × {n_vertical} levels, got {} × {}",
                self.n_locations(),
                self.n_vertical()
            )));
        }
        if let ProfileField::Full { values, n_vertical } = self {
            if values.len() != locations * n_vertical {
                return Err(Error::ShapeMismatch(format!("{name}: ragged storage")));
            }
        }
        if let Some(index) = self.stored().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite { field: name.into(), index });
        }
        Ok(())
    }

    /// Coarse field on the parent level: cell fields are area-weighted child means.
    fn restrict_cells(&self, fine: &HorizontalGrid, coarse: &HorizontalGrid) -> ProfileField {
        let mean = |i: usize, get: &dyn Fn(usize) -> f64| {
            let (mut s, mut w) = (0.0, 0.0);
            for c in GridHierarchy::children(i) {
                s += fine.cells[c].area * get(c);
                w += fine.cells[c].area;
            }
            s / w
        };
        match self {
            ProfileField::Full { values, n_vertical } => {
                let nv = *n_vertical;
                let mut out = vec![0.0; coarse.n_cells() * nv];
                for (i, col) in out.chunks_mut(nv).enumerate() {
                    for (k, o) in col.iter_mut().enumerate() {
                        *o = mean(i, &|c| values[c * nv + k]);
                    }
                }
                ProfileField::Full { values: out, n_vertical: nv }
            }
            ProfileField::Separable { vertical, horizontal } => ProfileField::Separable {
                vertical: vertical.clone(),
                horizontal: (0..coarse.n_cells()).map(|i| mean(i, &|c| horizontal[c])).collect(),
            },
        }
    }

    /// Edge fields: arithmetic mean over the two fine edges on each coarse edge.
    fn restrict_edges(&self, colinear: &[[usize; 2]]) -> ProfileField {
        match self {
            ProfileField::Full { values, n_vertical } => {
                let nv = *n_vertical;
                let mut out = vec![0.0; colinear.len() * nv];
                for (col, &[e0, e1]) in out.chunks_mut(nv).zip(colinear) {
                    for (k, o) in col.iter_mut().enumerate() {
                        *o = 0.5 * (values[e0 * nv + k] + values[e1 * nv + k]);
                    }
                }
                ProfileField::Full { values: out, n_vertical: nv }
            }
            ProfileField::Separable { vertical, horizontal } => ProfileField::Separable {
                vertical: vertical.clone(),
                horizontal: colinear.iter().map(|&[e0, e1]| 0.5 * (horizontal[e0] + horizontal[e1])).collect(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProfileKind {
    /// Every field stored per cell/edge.
    Full,
    /// Every field separated into vertical vectors and horizontal scalars.
    Factorized,
    /// `α_r` full, the other three separated.
    Partial,
    /// Any other combination.
    Mixed,
}

/// The four profiles on one horizontal grid level.
///
/// `beta` and `alpha_s` have `n_r` vertical entries (layers); `alpha_r` and
/// `xi_r` have `n_r + 1` (faces). `alpha_s` is indexed by edge, the rest by cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileSet {
    pub beta: ProfileField,
    pub alpha_s: ProfileField,
    pub alpha_r: ProfileField,
    pub xi_r: ProfileField,
}

impl ProfileSet {
    pub fn n_r(&self) -> usize {
        self.beta.n_vertical()
    }

    pub fn kind(&self) -> ProfileKind {
        let sep = [&self.beta, &self.alpha_s, &self.alpha_r, &self.xi_r].map(|f| f.is_separable());
        match sep {
            [false, false, false, false] => ProfileKind::Full,
            [true, true, true, true] => ProfileKind::Factorized,
            [true, true, false, true] => ProfileKind::Partial,
            _ => ProfileKind::Mixed,
        }
    }

    /// Checks shapes against a grid level and rejects non-finite values.
    pub fn validate(&self, grid: &HorizontalGrid, n_r: usize) -> Result<()> {
        self.beta.check("beta", grid.n_cells(), n_r)?;
        self.alpha_s.check("alpha_s", grid.n_edges(), n_r)?;
        self.alpha_r.check("alpha_r", grid.n_cells(), n_r + 1)?;
        self.xi_r.check("xi_r", grid.n_cells(), n_r + 1)?;
        Ok(())
    }

    /// Profiles on level `fine_level − 1` by averaging.
    pub fn restrict(&self, hierarchy: &GridHierarchy, fine_level: usize) -> ProfileSet {
        let fine = hierarchy.grid(fine_level);
        let coarse = hierarchy.grid(fine_level - 1);
        let colinear = &hierarchy.colinear_edges[fine_level - 1];
        ProfileSet {
            beta: self.beta.restrict_cells(fine, coarse),
            alpha_s: self.alpha_s.restrict_edges(colinear),
            alpha_r: self.alpha_r.restrict_cells(fine, coarse),
            xi_r: self.xi_r.restrict_cells(fine, coarse),
        }
    }

    /// Same profiles with the advection term removed.
    pub fn without_advection(&self) -> ProfileSet {
        let xi_r = match &self.xi_r {
            ProfileField::Full { values, n_vertical } => {
                ProfileField::Full { values: vec![0.0; values.len()], n_vertical: *n_vertical }
            }
            ProfileField::Separable { vertical, horizontal } => {
                ProfileField::Separable { vertical: vec![0.0; vertical.len()], horizontal: horizontal.clone() }
            }
        };
        ProfileSet { xi_r, ..self.clone() }
    }

    /// Profiles that are constant in space.
    pub fn constant(grid: &HorizontalGrid, n_r: usize, beta: f64, alpha_s: f64, alpha_r: f64, xi_r: f64) -> ProfileSet {
        let full = |n: usize, nv: usize, v: f64| ProfileField::Full { values: vec![v; n * nv], n_vertical: nv };
        ProfileSet {
            beta: full(grid.n_cells(), n_r, beta),
            alpha_s: full(grid.n_edges(), n_r, alpha_s),
            alpha_r: full(grid.n_cells(), n_r + 1, alpha_r),
            xi_r: full(grid.n_cells(), n_r + 1, xi_r),
        }
    }
}

/// Face-`k` sample radius of `ξ_r`: the layer midpoint below the face.
fn xi_sample_radius(vertical: &VerticalGrid, k: usize) -> f64 {
    if k == 0 {
        vertical.r(0)
    } else {
        vertical.mid(k - 1)
    }
}

/// Non-separated balanced-flow profiles sampled on `grid`.
pub fn balanced_flow_profiles(
    grid: &HorizontalGrid,
    vertical: &VerticalGrid,
    flow: &BalancedFlow,
    params: &OperatorParameters,
) -> ProfileSet {
    let n_r = vertical.n_r();
    let lambda = flow.lambda(params);
    let dlog_theta = flow.log_theta_gradient();
    let gamma = flow.constants.gamma();
    let t0 = flow.constants.t0;
    let er_mid: Vec<f64> = (0..n_r).map(|k| flow.vertical_factor(vertical.mid(k))).collect();
    let er_face: Vec<f64> = (0..=n_r).map(|k| flow.vertical_factor(vertical.r(k))).collect();
    let er_xi: Vec<f64> = (0..=n_r).map(|k| flow.vertical_factor(xi_sample_radius(vertical, k))).collect();

    let es_cell = par::map_range(grid.n_cells(), |t| flow.horizontal_factor(latitude(grid.cells[t].center)));
    let es_edge = par::map_range(grid.n_edges(), |e| flow.horizontal_factor(latitude(grid.edges[e].midpoint)));

    // ρ̄θ̄ / T_0 at one point.
    let rho_theta = |es: f64, er: f64| {
        let s = flow.state_from_factors(es, er);
        s.rho * s.theta / t0
    };

    let beta = es_cell
        .iter()
        .flat_map(|&es| {
            er_mid.iter().map(move |&er| {
                let s = flow.state_from_factors(es, er);
                gamma * s.rho / s.exner
            })
        })
        .collect();
    let alpha_s = es_edge.iter().flat_map(|&es| er_mid.iter().map(move |&er| rho_theta(es, er))).collect();
    let er_face = &er_face;
    let alpha_r = es_cell
        .iter()
        .flat_map(|&es| (0..=n_r).map(move |k| vertical.r(k).powi(2) * lambda * rho_theta(es, er_face[k])))
        .collect();
    let xi_r = es_cell
        .iter()
        .flat_map(|&es| er_xi.iter().map(move |&er| lambda * rho_theta(es, er) * dlog_theta))
        .collect();

    ProfileSet {
        beta: ProfileField::Full { values: beta, n_vertical: n_r },
        alpha_s: ProfileField::Full { values: alpha_s, n_vertical: n_r },
        alpha_r: ProfileField::Full { values: alpha_r, n_vertical: n_r + 1 },
        xi_r: ProfileField::Full { values: xi_r, n_vertical: n_r + 1 },
    }
}

/// Balanced-flow profiles rebuilt from the separated Exner pressure `π^⊗`.
///
/// Every horizontal factor is `(E^S)^γ`, so `β^S = α_r^S` holds exactly.
pub fn factorize_balanced_flow(
    grid: &HorizontalGrid,
    vertical: &VerticalGrid,
    flow: &BalancedFlow,
    params: &OperatorParameters,
) -> ProfileSet {
    let c = &flow.constants;
    let n_r = vertical.n_r();
    let gamma = c.gamma();
    let eps = flow.epsilon();
    let lambda = flow.lambda(params);
    let dlog_theta = flow.log_theta_gradient();
    let rho_scale = c.p0 / (c.r_d * c.t0);
    let exner_r = |r: f64| (eps + flow.vertical_factor(r)) / (1.0 + eps);
    // ρθ/T_0 = C (π^r)^γ (E^S)^γ and β = γ C (π^r)^(γ−1) E^r (E^S)^γ.
    let rho_theta_r = |r: f64| rho_scale * exner_r(r).powf(gamma);

    let horizontal = |points: Vec<f64>| -> Vec<f64> { points.into_iter().map(|es| es.powf(gamma)).collect() };
    let h_cell = horizontal(par::map_range(grid.n_cells(), |t| flow.horizontal_factor(latitude(grid.cells[t].center))));
    let h_edge = horizontal(par::map_range(grid.n_edges(), |e| flow.horizontal_factor(latitude(grid.edges[e].midpoint))));

    let beta_r = (0..n_r)
        .map(|k| {
            let r = vertical.mid(k);
            gamma * rho_scale * exner_r(r).powf(gamma - 1.0) * flow.vertical_factor(r)
        })
        .collect();
    let alpha_s_r = (0..n_r).map(|k| rho_theta_r(vertical.mid(k))).collect();
    let alpha_r_r = (0..=n_r).map(|k| vertical.r(k).powi(2) * lambda * rho_theta_r(vertical.r(k))).collect();
    let xi_r_r = (0..=n_r).map(|k| lambda * rho_theta_r(xi_sample_radius(vertical, k)) * dlog_theta).collect();

    ProfileSet {
        beta: ProfileField::Separable { vertical: beta_r, horizontal: h_cell.clone() },
        alpha_s: ProfileField::Separable { vertical: alpha_s_r, horizontal: h_edge },
        alpha_r: ProfileField::Separable { vertical: alpha_r_r, horizontal: h_cell.clone() },
        xi_r: ProfileField::Separable { vertical: xi_r_r, horizontal: h_cell },
    }
}

/// `α_r` from `full`, everything else from `factorized`.
pub fn build_partial_factorization(full: &ProfileSet, factorized: &ProfileSet) -> Result<ProfileSet> {
    let pairs = [
        ("beta", &full.beta, &factorized.beta),
        ("alpha_s", &full.alpha_s, &factorized.alpha_s),
        ("alpha_r", &full.alpha_r, &factorized.alpha_r),
        ("xi_r", &full.xi_r, &factorized.xi_r),
    ];
    for (name, a, b) in pairs {
        if a.n_locations() != b.n_locations() || a.n_vertical() != b.n_vertical() {
            return Err(Error::GridMismatch(format!(
                "{name}: {}×{} vs {}×{}",
                a.n_locations(),
                a.n_vertical(),
                b.n_locations(),
                b.n_vertical()
            )));
        }
    }
    Ok(ProfileSet { alpha_r: full.alpha_r.clone(), ..factorized.clone() })
}

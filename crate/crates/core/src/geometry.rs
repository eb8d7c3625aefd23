//! Icosahedral horizontal grids on the unit sphere and the radial grid of the shell.
//!
//! Cells are spherical triangles obtained by repeated midpoint subdivision of a
//! fixed icosahedron (poles at ±z). All measures are spherical: cell areas are
//! spherical excesses, edge lengths are great-circle arcs, and cell centres are
//! normalised vertex centroids.

use std::collections::HashMap;
use std::hash::Hasher;
use std::ops::Range;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Finest refinement level accepted by [`GridHierarchy::build`] (20·4^9 ≈ 5.2M cells).
pub const MAX_LEVEL: usize = 9;

/// Mean Earth radius in metres.
pub const EARTH_RADIUS: f64 = 6.371229e6;

/// Default shell depth: 80 km in units of the Earth radius.
pub const DEFAULT_DEPTH: f64 = 80.0e3 / EARTH_RADIUS;

#[inline]
pub fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn normalize(a: Vec3) -> Vec3 {
    let n = norm(a);
    [a[0] / n, a[1] / n, a[2] / n]
}

/// Great-circle distance between two unit vectors.
#[inline]
pub fn arc_length(a: Vec3, b: Vec3) -> f64 {
    norm(cross(a, b)).atan2(dot(a, b))
}

/// Latitude of a point on the unit sphere.
#[inline]
pub fn latitude(p: Vec3) -> f64 {
    p[2].clamp(-1.0, 1.0).asin()
}

/// Area of the spherical triangle with unit-vector corners, by L'Huilier's formula.
pub fn spherical_triangle_area(a: Vec3, b: Vec3, c: Vec3) -> f64 {
    let ab = arc_length(a, b);
    let bc = arc_length(b, c);
    let ca = arc_length(c, a);
    let s = 0.5 * (ab + bc + ca);
    let t = (0.5 * s).tan()
        * (0.5 * (s - ab)).tan()
        * (0.5 * (s - bc)).tan()
        * (0.5 * (s - ca)).tan();
    4.0 * t.max(0.0).sqrt().atan()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub center: Vec3,
    pub area: f64,
    /// Corner vertex indices; local edge `j` joins corners `j` and `(j + 1) % 3`.
    pub vertices: [usize; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// `(T, T')` with `T < T'`; the normal points from `T` into `T'`.
    pub cells: (usize, usize),
    pub vertices: (usize, usize),
    /// Great-circle length of the edge.
    pub length: f64,
    /// Unit normal at the edge midpoint, tangent to the sphere.
    pub normal: Vec3,
    pub midpoint: Vec3,
    /// `|S| n·(r̂_T' − r̂_T) / |r̂_T' − r̂_T|²`, the two-point flux weight.
    pub flux_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Neighbor {
    pub cell: usize,
    pub edge: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizontalGrid {
    pub level: usize,
    pub vertices: Vec<Vec3>,
    pub cells: Vec<Cell>,
    pub edges: Vec<Edge>,
    /// `neighbors[t][j]` lies across local edge `j` of cell `t`.
    pub neighbors: Vec<[Neighbor; 3]>,
}

impl HorizontalGrid {
    pub fn n_cells(&self) -> usize {
        self.cells.len()
    }

    pub fn n_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn total_area(&self) -> f64 {
        self.cells.iter().map(|c| c.area).sum()
    }

    /// Mean great-circle edge length, used as the typical grid spacing.
    pub fn mean_spacing(&self) -> f64 {
        self.edges.iter().map(|e| e.length).sum::<f64>() / self.edges.len() as f64
    }

    /// FNV-1a (64-bit) hash of the cell centres in canonical order, little-endian f64 bytes.
    pub fn fingerprint(&self) -> String {
        let mut h = fnv::FnvHasher::default();
        for c in &self.cells {
            for x in c.center {
                h.write(&x.to_le_bytes());
            }
        }
        format!("{:016x}", h.finish())
    }

    fn from_triangles(level: usize, vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Self {
        let cells: Vec<Cell> = triangles
            .iter()
            .map(|&[a, b, c]| {
                let (pa, pb, pc) = (vertices[a], vertices[b], vertices[c]);
                Cell {
                    center: normalize([
                        pa[0] + pb[0] + pc[0],
                        pa[1] + pb[1] + pc[1],
                        pa[2] + pb[2] + pc[2],
                    ]),
                    area: spherical_triangle_area(pa, pb, pc),
                    vertices: [a, b, c],
                }
            })
            .collect();

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::with_capacity(cells.len() * 3 / 2);
        let mut pairs: Vec<(usize, Option<usize>, (usize, usize))> = Vec::with_capacity(cells.len() * 3 / 2);
        let mut local: Vec<[usize; 3]> = vec![[0; 3]; cells.len()];
        for (t, cell) in cells.iter().enumerate() {
            for j in 0..3 {
                let (a, b) = (cell.vertices[j], cell.vertices[(j + 1) % 3]);
                let key = (a.min(b), a.max(b));
                let e = *lookup.entry(key).or_insert_with(|| {
                    pairs.push((t, None, key));
                    pairs.len() - 1
                });
                if pairs[e].0 != t {
                    pairs[e].1 = Some(t);
                }
                local[t][j] = e;
            }
        }

        let edges: Vec<Edge> = pairs
            .iter()
            .map(|&(t, other, (a, b))| {
                let t2 = other.expect("icosahedral grid is closed: every edge has two cells");
                let (pa, pb) = (vertices[a], vertices[b]);
                let midpoint = normalize([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]);
                let mut normal = normalize(cross(midpoint, sub(pb, pa)));
                let chord = sub(cells[t2].center, cells[t].center);
                if dot(normal, chord) < 0.0 {
                    normal = [-normal[0], -normal[1], -normal[2]];
                }
                let length = arc_length(pa, pb);
                Edge {
                    cells: (t, t2),
                    vertices: (a, b),
                    length,
                    normal,
                    midpoint,
                    flux_weight: length * dot(normal, chord) / dot(chord, chord),
                }
            })
            .collect();

        let neighbors = local
            .iter()
            .enumerate()
            .map(|(t, es)| {
                es.map(|e| {
                    let (c0, c1) = edges[e].cells;
                    Neighbor { cell: if c0 == t { c1 } else { c0 }, edge: e }
                })
            })
            .collect();

        HorizontalGrid { level, vertices, cells, edges, neighbors }
    }
}

fn base_icosahedron() -> (Vec<Vec3>, Vec<[usize; 3]>) {
    use std::f64::consts::PI;
    let lat = 0.5f64.atan();
    let mut v = vec![[0.0, 0.0, 1.0]];
    for i in 0..5 {
        let lon = 2.0 * PI * i as f64 / 5.0;
        v.push([lat.cos() * lon.cos(), lat.cos() * lon.sin(), lat.sin()]);
    }
    for i in 0..5 {
        let lon = 2.0 * PI * (i as f64 + 0.5) / 5.0;
        v.push([lat.cos() * lon.cos(), lat.cos() * lon.sin(), -lat.sin()]);
    }
    v.push([0.0, 0.0, -1.0]);

    let up = |i: usize| 1 + i % 5;
    let lo = |i: usize| 6 + i % 5;
    let mut t = Vec::with_capacity(20);
    for i in 0..5 {
        t.push([0, up(i), up(i + 1)]);
    }
    for i in 0..5 {
        t.push([up(i), lo(i), up(i + 1)]);
        t.push([up(i + 1), lo(i), lo(i + 1)]);
    }
    for i in 0..5 {
        t.push([11, lo(i + 1), lo(i)]);
    }
    // Counter-clockwise seen from outside.
    for tri in &mut t {
        let [a, b, c] = *tri;
        if dot(cross(sub(v[b], v[a]), sub(v[c], v[a])), v[a]) < 0.0 {
            tri.swap(1, 2);
        }
    }
    (v, t)
}

/// Nested icosahedral grids, level 0 (20 cells) to the finest level.
///
/// The children of level-ℓ cell `i` are level-(ℓ+1) cells `4i..4i+4`: the
/// centre child first, then the corner children at vertices 0, 1, 2.
#[derive(Debug, Clone)]
pub struct GridHierarchy {
    pub grids: Vec<Arc<HorizontalGrid>>,
    /// `parents[ℓ][c]` is the level-ℓ parent of level-(ℓ+1) cell `c`.
    pub parents: Vec<Vec<usize>>,
    /// `colinear_edges[ℓ][e]` are the two level-(ℓ+1) edges lying on level-ℓ edge `e`.
    pub colinear_edges: Vec<Vec<[usize; 2]>>,
}

impl GridHierarchy {
    /// Builds levels `0..=finest_level`.
    pub fn build(finest_level: usize) -> Result<Self> {
        if finest_level > MAX_LEVEL {
            return Err(Error::Config(format!(
                "refinement level {finest_level} exceeds the limit of {MAX_LEVEL}"
            )));
        }
        let (mut vertices, mut triangles) = base_icosahedron();
        let mut grids = vec![Arc::new(HorizontalGrid::from_triangles(0, vertices.clone(), triangles.clone()))];
        let mut parents = Vec::new();
        let mut colinear_edges = Vec::new();

        for level in 1..=finest_level {
            let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
            let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Vec3>| -> usize {
                let key = (a.min(b), a.max(b));
                *midpoints.entry(key).or_insert_with(|| {
                    let (pa, pb) = (vertices[a], vertices[b]);
                    vertices.push(normalize([pa[0] + pb[0], pa[1] + pb[1], pa[2] + pb[2]]));
                    vertices.len() - 1
                })
            };
            let mut fine = Vec::with_capacity(triangles.len() * 4);
            for &[a, b, c] in &triangles {
                let ab = midpoint(a, b, &mut vertices);
                let bc = midpoint(b, c, &mut vertices);
                let ca = midpoint(c, a, &mut vertices);
                fine.push([ab, bc, ca]);
                fine.push([a, ab, ca]);
                fine.push([ab, b, bc]);
                fine.push([ca, bc, c]);
            }
            let grid = HorizontalGrid::from_triangles(level, vertices.clone(), fine.clone());

            let coarse = grids.last().expect("level 0 exists");
            let mut fine_edge: HashMap<(usize, usize), usize> = HashMap::with_capacity(grid.edges.len());
            for (e, edge) in grid.edges.iter().enumerate() {
                let (a, b) = edge.vertices;
                fine_edge.insert((a.min(b), a.max(b)), e);
            }
            let colinear = coarse
                .edges
                .iter()
                .map(|edge| {
                    let (a, b) = edge.vertices;
                    let m = midpoints[&(a.min(b), a.max(b))];
                    [fine_edge[&(a.min(m), a.max(m))], fine_edge[&(b.min(m), b.max(m))]]
                })
                .collect();

            parents.push((0..fine.len()).map(|c| c / 4).collect());
            colinear_edges.push(colinear);
            grids.push(Arc::new(grid));
            triangles = fine;
        }

        Ok(GridHierarchy { grids, parents, colinear_edges })
    }

    pub fn finest_level(&self) -> usize {
        self.grids.len() - 1
    }

    pub fn grid(&self, level: usize) -> &Arc<HorizontalGrid> {
        &self.grids[level]
    }

    pub fn finest(&self) -> &Arc<HorizontalGrid> {
        self.grids.last().expect("hierarchy is never empty")
    }

    /// Level-(ℓ+1) children of level-ℓ cell `cell`.
    pub fn children(cell: usize) -> Range<usize> {
        4 * cell..4 * cell + 4
    }

    pub fn summary(&self) -> GridSummary {
        GridSummary {
            format_version: 1,
            levels: self
                .grids
                .iter()
                .map(|g| {
                    let (min_area, max_area) = min_max(g.cells.iter().map(|c| c.area));
                    let (min_edge_length, max_edge_length) = min_max(g.edges.iter().map(|e| e.length));
                    LevelSummary {
                        level: g.level,
                        cells: g.n_cells(),
                        edges: g.n_edges(),
                        min_area,
                        max_area,
                        min_edge_length,
                        max_edge_length,
                    }
                })
                .collect(),
        }
    }
}

fn min_max(it: impl Iterator<Item = f64>) -> (f64, f64) {
    it.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)))
}

#[derive(Debug, Clone, Serialize)]
pub struct LevelSummary {
    pub level: usize,
    pub cells: usize,
    pub edges: usize,
    pub min_area: f64,
    pub max_area: f64,
    pub min_edge_length: f64,
    pub max_edge_length: f64,
}

/// Per-level quasi-uniformity report.
#[derive(Debug, Clone, Serialize)]
pub struct GridSummary {
    pub format_version: u32,
    pub levels: Vec<LevelSummary>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Grading {
    Uniform,
    /// Successive layer thicknesses grow by this ratio from the bottom.
    Geometric(f64),
}

/// Radial levels `1 = r_0 < … < r_{n_r} = 1 + H` in units of the Earth radius.
#[derive(Debug, Clone, PartialEq)]
pub struct VerticalGrid {
    levels: Vec<f64>,
    volumes: Vec<f64>,
    masks: Vec<f64>,
}

impl VerticalGrid {
    pub fn new(n_r: usize, depth: f64, grading: Grading) -> Result<Self> {
        if n_r == 0 {
            return Err(Error::Config("vertical grid needs at least one layer".into()));
        }
        if !(depth > 0.0) || !depth.is_finite() {
            return Err(Error::Config(format!("shell depth must be positive, got {depth}")));
        }
        let mut levels = Vec::with_capacity(n_r + 1);
        match grading {
            Grading::Uniform => {
                levels.extend((0..=n_r).map(|k| 1.0 + depth * k as f64 / n_r as f64));
            }
            Grading::Geometric(ratio) => {
                if !(ratio > 0.0) || !ratio.is_finite() {
                    return Err(Error::Config(format!("grading ratio must be positive, got {ratio}")));
                }
                let first = if (ratio - 1.0).abs() < 1e-14 {
                    depth / n_r as f64
                } else {
                    depth * (ratio - 1.0) / (ratio.powi(n_r as i32) - 1.0)
                };
                let mut r = 1.0;
                let mut dr = first;
                levels.push(r);
                for _ in 0..n_r {
                    r += dr;
                    dr *= ratio;
                    levels.push(r);
                }
            }
        }
        levels[0] = 1.0;
        levels[n_r] = 1.0 + depth;

        let volumes = levels.windows(2).map(|w| (w[1].powi(3) - w[0].powi(3)) / 3.0).collect();
        let masks = (0..=n_r).map(|k| if k == 0 || k == n_r { 0.0 } else { 1.0 }).collect();
        Ok(VerticalGrid { levels, volumes, masks })
    }

    pub fn uniform(n_r: usize, depth: f64) -> Result<Self> {
        Self::new(n_r, depth, Grading::Uniform)
    }

    pub fn n_r(&self) -> usize {
        self.volumes.len()
    }

    pub fn depth(&self) -> f64 {
        self.levels[self.n_r()] - 1.0
    }

    /// Face radius `r_k`, `k = 0..=n_r`.
    pub fn r(&self, k: usize) -> f64 {
        self.levels[k]
    }

    pub fn levels(&self) -> &[f64] {
        &self.levels
    }

    /// Layer midpoint `r_{k+1/2}`.
    pub fn mid(&self, k: usize) -> f64 {
        0.5 * (self.levels[k] + self.levels[k + 1])
    }

    /// Layer thickness `r_{k+1} − r_k`.
    pub fn dr(&self, k: usize) -> f64 {
        self.levels[k + 1] - self.levels[k]
    }

    /// `v_k = (r_{k+1}³ − r_k³) / 3`.
    pub fn volume(&self, k: usize) -> f64 {
        self.volumes[k]
    }

    /// Neumann mask `σ_k` on face `k`.
    pub fn sigma(&self, k: usize) -> f64 {
        self.masks[k]
    }
}

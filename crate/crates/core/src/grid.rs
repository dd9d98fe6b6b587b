//! Cell-centred grids on `(0, L)^d`, ghost-cell stencils and the discrete
//! norms and pairings used by every tracker.
//!
//! Node `k` of a 2-D grid sits at `((i + ½)h, (j + ½)h)` with `k = j·n + i`.
//! Homogeneous Neumann data is imposed with mirror ghosts (`ghost = first
//! interior value`), homogeneous Dirichlet data with odd ghosts
//! (`ghost = −first interior value`), so the boundary trace vanishes halfway
//! between the ghost and the first interior node.

use crate::algebra::SpeciesPair;
use crate::error::{Result, SktError};
use crate::linsolve;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: usize,
    n: usize,
    h: f64,
}

impl Grid {
    pub fn new(dim: usize, n: usize, length: f64) -> Result<Self> {
        if !(length.is_finite() && length > 0.0) {
            return Err(SktError::Domain(format!(
                "domain length {length} must be positive"
            )));
        }
        Grid::with_spacing(dim, n, length / n as f64)
    }

    pub fn with_spacing(dim: usize, n: usize, h: f64) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(SktError::Domain(format!(
                "grid dimension {dim} must be 1 or 2"
            )));
        }
        if n < 3 {
            return Err(SktError::Domain(format!(
                "cell count {n} must be at least 3"
            )));
        }
        if !(h.is_finite() && h > 0.0) {
            return Err(SktError::Domain(format!("spacing {h} must be positive")));
        }
        Ok(Grid { dim, n, h })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Cells per axis.
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn length(&self) -> f64 {
        self.h * self.n as f64
    }

    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.dim as i32)
    }

    pub fn domain_volume(&self) -> f64 {
        self.length().powi(self.dim as i32)
    }

    /// Node coordinates; the second entry is 0 in 1-D.
    pub fn coords(&self, k: usize) -> [f64; 2] {
        let i = k % self.n;
        let j = k / self.n;
        let x = (i as f64 + 0.5) * self.h;
        let y = if self.dim == 2 {
            (j as f64 + 0.5) * self.h
        } else {
            0.0
        };
        [x, y]
    }

    pub fn sample(&self, f: impl Fn([f64; 2]) -> f64) -> Vec<f64> {
        (0..self.len()).map(|k| f(self.coords(k))).collect()
    }

    /// Neighbour of node `k` along `axis` in direction `dir` (±1), or `None`
    /// across the boundary.
    #[inline]
    pub(crate) fn neighbor(&self, k: usize, axis: usize, forward: bool) -> Option<usize> {
        let stride = if axis == 0 { 1 } else { self.n };
        let idx = if axis == 0 { k % self.n } else { k / self.n };
        if forward {
            (idx + 1 < self.n).then(|| k + stride)
        } else {
            (idx > 0).then(|| k - stride)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundaryCondition {
    Neumann,
    Dirichlet,
}

impl BoundaryCondition {
    /// Ghost value mirrored from the adjacent interior value.
    #[inline]
    pub fn ghost(self, interior: f64) -> f64 {
        match self {
            BoundaryCondition::Neumann => interior,
            BoundaryCondition::Dirichlet => -interior,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BoundaryCondition::Neumann => "neumann",
            BoundaryCondition::Dirichlet => "dirichlet",
        }
    }
}

/// Two species (or two adjoint components) sampled on a grid.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPair {
    pub grid: Grid,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FieldPair {
    pub fn new(grid: Grid, u: Vec<f64>, v: Vec<f64>) -> Result<Self> {
        if u.len() != grid.len() || v.len() != grid.len() {
            return Err(SktError::Mismatch(format!(
                "field lengths ({}, {}) do not match grid size {}",
                u.len(),
                v.len(),
                grid.len()
            )));
        }
        let f = FieldPair { grid, u, v };
        if !f.is_finite() {
            return Err(SktError::Domain(
                "field contains non-finite values".to_string(),
            ));
        }
        Ok(f)
    }

    pub fn zeros(grid: Grid) -> Self {
        FieldPair {
            grid,
            u: vec![0.0; grid.len()],
            v: vec![0.0; grid.len()],
        }
    }

    pub fn constant(grid: Grid, u: f64, v: f64) -> Self {
        FieldPair {
            grid,
            u: vec![u; grid.len()],
            v: vec![v; grid.len()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn([f64; 2]) -> SpeciesPair) -> Self {
        let mut out = FieldPair::zeros(grid);
        for k in 0..grid.len() {
            let s = f(grid.coords(k));
            out.u[k] = s.u;
            out.v[k] = s.v;
        }
        out
    }

    #[inline]
    pub fn at(&self, k: usize) -> SpeciesPair {
        SpeciesPair::new(self.u[k], self.v[k])
    }

    #[inline]
    pub fn set(&mut self, k: usize, s: SpeciesPair) {
        self.u[k] = s.u;
        self.v[k] = s.v;
    }

    pub fn map(&self, f: impl Fn(SpeciesPair) -> SpeciesPair) -> FieldPair {
        let mut out = FieldPair::zeros(self.grid);
        for k in 0..self.grid.len() {
            out.set(k, f(self.at(k)));
        }
        out
    }

    pub fn zip_map(
        &self,
        other: &FieldPair,
        f: impl Fn(SpeciesPair, SpeciesPair) -> SpeciesPair,
    ) -> FieldPair {
        debug_assert_eq!(self.grid, other.grid);
        let mut out = FieldPair::zeros(self.grid);
        for k in 0..self.grid.len() {
            out.set(k, f(self.at(k), other.at(k)));
        }
        out
    }

    pub fn sub(&self, other: &FieldPair) -> FieldPair {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn add(&self, other: &FieldPair) -> FieldPair {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn scale(&self, k: f64) -> FieldPair {
        self.map(|s| k * s)
    }

    /// `self + k·other`
    pub fn axpy(&self, k: f64, other: &FieldPair) -> FieldPair {
        self.zip_map(other, |a, b| a + k * b)
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }

    pub fn min(&self) -> SpeciesPair {
        SpeciesPair::new(
            self.u.iter().copied().fold(f64::INFINITY, f64::min),
            self.v.iter().copied().fold(f64::INFINITY, f64::min),
        )
    }

    pub fn max(&self) -> SpeciesPair {
        SpeciesPair::new(
            self.u.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            self.v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.u
            .iter()
            .chain(&self.v)
            .fold(0.0, |m, x| m.max(x.abs()))
    }

    /// `h^d Σ u`, `h^d Σ v`.
    pub fn mass(&self) -> SpeciesPair {
        let w = self.grid.cell_volume();
        SpeciesPair::new(
            w * self.u.iter().sum::<f64>(),
            w * self.v.iter().sum::<f64>(),
        )
    }
}

/// Discrete Laplacian of one component, written into `out`.
pub fn laplacian_scalar(grid: &Grid, bc: BoundaryCondition, f: &[f64], out: &mut [f64]) {
    let inv_h2 = 1.0 / (grid.h * grid.h);
    for k in 0..grid.len() {
        let center = f[k];
        let mut acc = 0.0;
        for axis in 0..grid.dim {
            let lo = grid
                .neighbor(k, axis, false)
                .map_or(bc.ghost(center), |j| f[j]);
            let hi = grid
                .neighbor(k, axis, true)
                .map_or(bc.ghost(center), |j| f[j]);
            acc += (lo + hi) - 2.0 * center;
        }
        out[k] = acc * inv_h2;
    }
}

/// Second-order `2d+1`-point Laplacian applied to both components.
pub fn laplacian(f: &FieldPair, bc: BoundaryCondition) -> FieldPair {
    let mut out = FieldPair::zeros(f.grid);
    laplacian_scalar(&f.grid, bc, &f.u, &mut out.u);
    laplacian_scalar(&f.grid, bc, &f.v, &mut out.v);
    out
}

/// Per-node `|∇f|²` of one component: along each axis, the mean of the squared
/// one-sided differences on the two faces of the cell (boundary faces use the
/// ghost value). Summed with weight `h^d` this equals `⟨−Δ_h f, f⟩`.
pub fn gradient_sq_scalar(grid: &Grid, bc: BoundaryCondition, f: &[f64]) -> Vec<f64> {
    let inv_h = 1.0 / grid.h;
    (0..grid.len())
        .map(|k| {
            let center = f[k];
            let mut acc = 0.0;
            for axis in 0..grid.dim {
                let lo = grid
                    .neighbor(k, axis, false)
                    .map_or(bc.ghost(center), |j| f[j]);
                let hi = grid
                    .neighbor(k, axis, true)
                    .map_or(bc.ghost(center), |j| f[j]);
                let dl = (center - lo) * inv_h;
                let dr = (hi - center) * inv_h;
                acc += 0.5 * (dl * dl + dr * dr);
            }
            acc
        })
        .collect()
}

/// `|∇u|² + |∇v|²` per node.
pub fn gradient_sq(f: &FieldPair, bc: BoundaryCondition) -> Vec<f64> {
    let gu = gradient_sq_scalar(&f.grid, bc, &f.u);
    let gv = gradient_sq_scalar(&f.grid, bc, &f.v);
    gu.iter().zip(&gv).map(|(a, b)| a + b).collect()
}

/// Discrete L²(Ω)² pairing `h^d (Σ u_f u_g + Σ v_f v_g)`.
pub fn inner(f: &FieldPair, g: &FieldPair) -> f64 {
    inner_scalar(&f.grid, &f.u, &g.u) + inner_scalar(&f.grid, &f.v, &g.v)
}

pub fn inner_scalar(grid: &Grid, a: &[f64], b: &[f64]) -> f64 {
    grid.cell_volume() * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>()
}

/// `(h^d Σ |f|^p)^{1/p}` for one component; `p` may be below one.
pub fn lp_norm_scalar(grid: &Grid, f: &[f64], p: f64) -> f64 {
    (grid.cell_volume() * f.iter().map(|x| x.abs().powf(p)).sum::<f64>()).powf(1.0 / p)
}

/// `(h^d Σ (|u|^p + |v|^p))^{1/p}`.
pub fn lp_norm(f: &FieldPair, p: f64) -> f64 {
    let w = f.grid.cell_volume();
    let s: f64 = f.u.iter().chain(&f.v).map(|x| x.abs().powf(p)).sum();
    (w * s).powf(1.0 / p)
}

/// Squared discrete H¹ norm of one component, `|f|² + h^d Σ |∇f|²`.
pub fn h1_sq_scalar(grid: &Grid, bc: BoundaryCondition, f: &[f64]) -> f64 {
    let w = grid.cell_volume();
    let l2: f64 = f.iter().map(|x| x * x).sum();
    let g: f64 = gradient_sq_scalar(grid, bc, f).iter().sum();
    w * (l2 + g)
}

pub fn h1_norm(f: &FieldPair, bc: BoundaryCondition) -> f64 {
    (h1_sq_scalar(&f.grid, bc, &f.u) + h1_sq_scalar(&f.grid, bc, &f.v)).sqrt()
}

/// `⟨f, (I − Δ_h)⁻¹ f⟩` for one component.
pub fn weak_sq_scalar(grid: &Grid, bc: BoundaryCondition, f: &[f64]) -> Result<f64> {
    let z = linsolve::solve_shifted_laplacian(grid, bc, f)?;
    Ok(inner_scalar(grid, f, &z).max(0.0))
}

/// Weak norm `sup_v ⟨f, v⟩ / ‖v‖_{H¹}`, attained at `v = (I − Δ_h)⁻¹ f`.
pub fn weak_norm(f: &FieldPair, bc: BoundaryCondition) -> Result<f64> {
    Ok((weak_sq_scalar(&f.grid, bc, &f.u)? + weak_sq_scalar(&f.grid, bc, &f.v)?).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormReport {
    pub l2: f64,
    pub h1: f64,
    pub l4: f64,
    pub linf: f64,
    pub weak: f64,
}

/// Norms of the pair over L²(Ω)²; `h1² = l2² + h^d Σ(|∇u|² + |∇v|²)`.
pub fn norms(f: &FieldPair, bc: BoundaryCondition) -> Result<NormReport> {
    let l2 = lp_norm(f, 2.0);
    Ok(NormReport {
        l2,
        h1: h1_norm(f, bc).max(l2),
        l4: lp_norm(f, 4.0),
        linf: f.max_abs(),
        weak: weak_norm(f, bc)?,
    })
}

/// Space-time norm over stored levels: trapezoidal weights in time, midpoint
/// in space, `(Σ_n w_n h^d Σ (|u|^p + |v|^p))^{1/p}`.
pub fn spacetime_norm(times: &[f64], levels: &[FieldPair], p: f64) -> Result<f64> {
    if times.len() != levels.len() {
        return Err(SktError::Mismatch(format!(
            "{} times for {} levels",
            times.len(),
            levels.len()
        )));
    }
    if levels.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for (n, level) in levels.iter().enumerate() {
        let left = if n > 0 { times[n] - times[n - 1] } else { 0.0 };
        let right = if n + 1 < levels.len() {
            times[n + 1] - times[n]
        } else {
            0.0
        };
        let s: f64 = level
            .u
            .iter()
            .chain(&level.v)
            .map(|x| x.abs().powf(p))
            .sum();
        total += 0.5 * (left + right) * level.grid.cell_volume() * s;
    }
    Ok(total.powf(1.0 / p))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid1(n: usize) -> Grid {
        Grid::new(1, n, 1.0).unwrap()
    }

    #[test]
    fn grid_validation() {
        assert!(Grid::new(3, 8, 1.0).is_err());
        assert!(Grid::new(1, 2, 1.0).is_err());
        assert!(Grid::new(1, 8, 0.0).is_err());
        let g = Grid::new(2, 4, 2.0).unwrap();
        assert_eq!(g.len(), 16);
        assert_eq!(g.h(), 0.5);
        assert_eq!(g.coords(5), [0.75, 0.75]);
    }

    #[test]
    fn laplacian_of_constant_vanishes_under_neumann() {
        for g in [grid1(7), Grid::new(2, 5, 1.3).unwrap()] {
            let f = FieldPair::constant(g, 2.5, -1.0);
            let lap = laplacian(&f, BoundaryCondition::Neumann);
            assert!(lap.u.iter().chain(&lap.v).all(|&x| x == 0.0));
        }
    }

    #[test]
    fn laplacian_exact_on_quadratics() {
        let g = grid1(10);
        let f = g.sample(|x| x[0] * x[0]);
        let mut out = vec![0.0; g.len()];
        laplacian_scalar(&g, BoundaryCondition::Neumann, &f, &mut out);
        for &value in &out[1..g.len() - 1] {
            assert!((value - 2.0).abs() < 1e-10);
        }
    }

    #[test]
    fn laplacian_second_order_on_cosine() {
        let err = |n: usize| {
            let g = grid1(n);
            let f = g.sample(|x| (PI * x[0]).cos());
            let mut out = vec![0.0; g.len()];
            laplacian_scalar(&g, BoundaryCondition::Neumann, &f, &mut out);
            (0..g.len())
                .map(|k| (out[k] + PI * PI * f[k]).abs())
                .fold(0.0, f64::max)
        };
        let (e64, e128) = (err(64), err(128));
        assert!(e64 < 0.01);
        let ratio = e64 / e128;
        assert!((ratio - 4.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn gradient_examples() {
        let g = grid1(12);
        assert!(
            gradient_sq_scalar(&g, BoundaryCondition::Neumann, &[3.0; 12])
                .iter()
                .all(|&x| x == 0.0)
        );
        let f = g.sample(|x| 2.5 * x[0]);
        let gs = gradient_sq_scalar(&g, BoundaryCondition::Neumann, &f);
        for &value in &gs[1..11] {
            assert!((value - 6.25).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_converges_at_second_order() {
        let err = |n: usize| {
            let g = grid1(n);
            let f = g.sample(|x| (PI * x[0]).sin());
            let gs = gradient_sq_scalar(&g, BoundaryCondition::Dirichlet, &f);
            (0..n)
                .map(|k| {
                    let x = g.coords(k)[0];
                    (gs[k] - (PI * (PI * x).cos()).powi(2)).abs()
                })
                .fold(0.0, f64::max)
        };
        let ratio = err(64) / err(128);
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn norm_examples() {
        let g = grid1(32);
        let one = FieldPair::new(g, vec![1.0; 32], vec![0.0; 32]).unwrap();
        let r = norms(&one, BoundaryCondition::Neumann).unwrap();
        assert!((r.l2 - 1.0).abs() < 1e-14);
        assert!((r.h1 - 1.0).abs() < 1e-14);
        assert!((r.weak - 1.0).abs() < 1e-12);
        assert!((r.l4 - 1.0).abs() < 1e-14);
        assert_eq!(r.linf, 1.0);

        let zero = FieldPair::zeros(g);
        let r = norms(&zero, BoundaryCondition::Dirichlet).unwrap();
        assert_eq!(
            (r.l2, r.h1, r.l4, r.linf, r.weak),
            (0.0, 0.0, 0.0, 0.0, 0.0)
        );
    }

    #[test]
    fn sine_l2_quadrature_converges() {
        let err = |n: usize| {
            let g = grid1(n);
            let f = FieldPair::new(g, g.sample(|x| (PI * x[0]).sin()), vec![0.0; n]).unwrap();
            let r = norms(&f, BoundaryCondition::Dirichlet).unwrap();
            (r.l2 * r.l2 - 0.5).abs()
        };
        // Midpoint rule is exact here for every n; guard against regressions.
        assert!(err(16) < 1e-14 && err(64) < 1e-14);
    }

    #[test]
    fn inner_examples() {
        let g = grid1(9);
        let one = FieldPair::constant(g, 1.0, 1.0);
        assert!((inner(&one, &one) - 2.0).abs() < 1e-14);
        let f = FieldPair::from_fn(g, |x| SpeciesPair::new(x[0].sin(), x[0].cos()));
        let perp = f.map(|s| SpeciesPair::new(-s.v, s.u));
        assert!(inner(&f, &perp).abs() < 1e-15);
        let twice = f.scale(2.0);
        assert!((inner(&twice, &one) - 2.0 * inner(&f, &one)).abs() < 1e-14);
    }

    #[test]
    fn spacetime_norm_examples() {
        let g = grid1(8);
        let times: Vec<f64> = (0..=10).map(|n| n as f64 * 0.1).collect();
        let zero: Vec<FieldPair> = times.iter().map(|_| FieldPair::zeros(g)).collect();
        assert_eq!(spacetime_norm(&times, &zero, 2.0).unwrap(), 0.0);
        let one: Vec<FieldPair> = times
            .iter()
            .map(|_| FieldPair::constant(g, 1.0, 0.0))
            .collect();
        assert!((spacetime_norm(&times, &one, 2.0).unwrap() - 1.0).abs() < 1e-14);
        let c = 3.0;
        let cst: Vec<FieldPair> = times
            .iter()
            .map(|_| FieldPair::constant(g, c, 0.0))
            .collect();
        let expected = c * 1.0f64.powf(0.75);
        assert!((spacetime_norm(&times, &cst, 4.0 / 3.0).unwrap() - expected).abs() < 1e-13);
    }
}

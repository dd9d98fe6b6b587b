//! Linear solvers: tridiagonal elimination and conjugate gradients for the
//! shifted Laplacian `I − Δ_h`, and BiCGStab with a line block-tridiagonal
//! preconditioner for the coupled two-species systems.

use crate::algebra::{Matrix2, SpeciesPair};
use crate::error::{Result, SktError};
use crate::grid::{laplacian_scalar, BoundaryCondition, Grid};

/// Relative residual targeted by every iterative solve.
pub const RELATIVE_TOLERANCE: f64 = 1e-10;

/// Solves `(I − Δ_h) z = f` for one component. Tridiagonal elimination in
/// 1-D, conjugate gradients in 2-D (the operator is symmetric positive
/// definite under both boundary kinds).
pub fn solve_shifted_laplacian(grid: &Grid, bc: BoundaryCondition, f: &[f64]) -> Result<Vec<f64>> {
    if grid.dim() == 1 {
        Ok(thomas_shifted(grid, bc, f))
    } else {
        conjugate_gradient(grid, bc, f)
    }
}

fn thomas_shifted(grid: &Grid, bc: BoundaryCondition, f: &[f64]) -> Vec<f64> {
    let n = grid.n();
    let k = 1.0 / (grid.h() * grid.h());
    let boundary_diag = match bc {
        BoundaryCondition::Neumann => 1.0 + k,
        BoundaryCondition::Dirichlet => 1.0 + 3.0 * k,
    };
    let diag = |i: usize| {
        if i == 0 || i == n - 1 {
            boundary_diag
        } else {
            1.0 + 2.0 * k
        }
    };
    let off = -k;
    let mut c_prime = vec![0.0; n];
    let mut d_prime = vec![0.0; n];
    c_prime[0] = off / diag(0);
    d_prime[0] = f[0] / diag(0);
    for i in 1..n {
        let m = diag(i) - off * c_prime[i - 1];
        c_prime[i] = off / m;
        d_prime[i] = (f[i] - off * d_prime[i - 1]) / m;
    }
    let mut z = vec![0.0; n];
    z[n - 1] = d_prime[n - 1];
    for i in (0..n - 1).rev() {
        z[i] = d_prime[i] - c_prime[i] * z[i + 1];
    }
    z
}

fn conjugate_gradient(grid: &Grid, bc: BoundaryCondition, f: &[f64]) -> Result<Vec<f64>> {
    let len = grid.len();
    let apply = |x: &[f64], out: &mut [f64]| {
        laplacian_scalar(grid, bc, x, out);
        for (o, xi) in out.iter_mut().zip(x) {
            *o = xi - *o;
        }
    };
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let b_norm = dot(f, f).sqrt();
    let mut x = vec![0.0; len];
    if b_norm == 0.0 {
        return Ok(x);
    }
    let mut r = f.to_vec();
    let mut p = r.clone();
    let mut ap = vec![0.0; len];
    let mut rr = dot(&r, &r);
    let max_iter = 10 * len + 100;
    let mut history = Vec::new();
    for _ in 0..max_iter {
        apply(&p, &mut ap);
        let alpha = rr / dot(&p, &ap);
        for i in 0..len {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rr_new = dot(&r, &r);
        history.push(rr_new.sqrt() / b_norm);
        if rr_new.sqrt() <= RELATIVE_TOLERANCE * b_norm {
            return Ok(x);
        }
        let beta = rr_new / rr;
        for i in 0..len {
            p[i] = r[i] + beta * p[i];
        }
        rr = rr_new;
    }
    Err(no_convergence(max_iter, &history))
}

fn no_convergence(iterations: usize, history: &[f64]) -> SktError {
    let tail = history[history.len().saturating_sub(5)..].to_vec();
    SktError::NoConvergence { iterations, tail }
}

/// Sparse operator with one 2×2 block per node and one per neighbour.
/// Neighbour slots are `[x−, x+, y−, y+]`; boundary contributions are
/// already folded into the diagonal.
#[derive(Clone, Debug)]
pub struct BlockSystem {
    pub grid: Grid,
    pub diag: Vec<Matrix2>,
    pub off: Vec<[Matrix2; 4]>,
}

impl BlockSystem {
    pub fn new(grid: Grid) -> Self {
        BlockSystem {
            grid,
            diag: vec![Matrix2::ZERO; grid.len()],
            off: vec![[Matrix2::ZERO; 4]; grid.len()],
        }
    }

    pub fn apply(&self, x: &[SpeciesPair], out: &mut [SpeciesPair]) {
        let g = &self.grid;
        for k in 0..g.len() {
            let mut acc = self.diag[k].mul_vec(x[k]);
            for axis in 0..g.dim() {
                if let Some(j) = g.neighbor(k, axis, false) {
                    acc = acc + self.off[k][2 * axis].mul_vec(x[j]);
                }
                if let Some(j) = g.neighbor(k, axis, true) {
                    acc = acc + self.off[k][2 * axis + 1].mul_vec(x[j]);
                }
            }
            out[k] = acc;
        }
    }

    /// Iteration cap `⌈10·√(2N^d)⌉`.
    pub fn iteration_cap(&self) -> usize {
        (10.0 * ((2 * self.grid.len()) as f64).sqrt()).ceil() as usize
    }
}

/// Exact block-tridiagonal inverse along each x-line (block Thomas). In 1-D it
/// is the exact inverse of the system.
struct LinePreconditioner {
    n: usize,
    lines: usize,
    inv_diag: Vec<Matrix2>,
    lower: Vec<Matrix2>,
    upper: Vec<Matrix2>,
}

impl LinePreconditioner {
    fn new(sys: &BlockSystem) -> Result<Self> {
        let n = sys.grid.n();
        let lines = sys.grid.len() / n;
        let mut inv_diag = vec![Matrix2::ZERO; sys.grid.len()];
        let mut lower = vec![Matrix2::ZERO; sys.grid.len()];
        let mut upper = vec![Matrix2::ZERO; sys.grid.len()];
        for line in 0..lines {
            for i in 0..n {
                let k = line * n + i;
                upper[k] = sys.off[k][1];
                let mut d = sys.diag[k];
                if i > 0 {
                    // W = L_i D'_{i−1}^{-1}; D'_i = D_i − W U_{i−1}
                    let w = sys.off[k][0].mul_mat(&inv_diag[k - 1]);
                    lower[k] = w;
                    d = d.sub(&w.mul_mat(&upper[k - 1]));
                }
                inv_diag[k] = d
                    .inverse()
                    .ok_or_else(|| SktError::Singular(format!("pivot block {d:?} at node {k}")))?;
            }
        }
        Ok(LinePreconditioner {
            n,
            lines,
            inv_diag,
            lower,
            upper,
        })
    }

    fn apply(&self, b: &[SpeciesPair], out: &mut [SpeciesPair]) {
        let n = self.n;
        for line in 0..self.lines {
            let base = line * n;
            for i in 0..n {
                let k = base + i;
                out[k] = if i > 0 {
                    b[k] - self.lower[k].mul_vec(out[k - 1])
                } else {
                    b[k]
                };
            }
            for i in (0..n).rev() {
                let k = base + i;
                let y = if i + 1 < n {
                    out[k] - self.upper[k].mul_vec(out[k + 1])
                } else {
                    out[k]
                };
                out[k] = self.inv_diag[k].mul_vec(y);
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct SolveStats {
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

fn dot(a: &[SpeciesPair], b: &[SpeciesPair]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(*y)).sum()
}

fn norm(a: &[SpeciesPair]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGStab to relative residual [`RELATIVE_TOLERANCE`]
/// within [`BlockSystem::iteration_cap`] iterations.
pub fn bicgstab(
    sys: &BlockSystem,
    b: &[SpeciesPair],
    x0: &[SpeciesPair],
) -> Result<(Vec<SpeciesPair>, SolveStats)> {
    let cap = sys.iteration_cap();
    bicgstab_with(sys, b, x0, RELATIVE_TOLERANCE, cap, true)
}

pub(crate) fn bicgstab_with(
    sys: &BlockSystem,
    b: &[SpeciesPair],
    x0: &[SpeciesPair],
    tol: f64,
    max_iter: usize,
    precondition: bool,
) -> Result<(Vec<SpeciesPair>, SolveStats)> {
    let len = sys.grid.len();
    let precond = if precondition {
        Some(LinePreconditioner::new(sys)?)
    } else {
        None
    };
    let apply_m = |src: &[SpeciesPair], dst: &mut [SpeciesPair]| match &precond {
        Some(m) => m.apply(src, dst),
        None => dst.copy_from_slice(src),
    };

    let mut stats = SolveStats::default();
    let b_norm = norm(b);
    let mut x = x0.to_vec();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|s| *s = SpeciesPair::ZERO);
        return Ok((x, stats));
    }
    let mut r = vec![SpeciesPair::ZERO; len];
    sys.apply(&x, &mut r);
    for i in 0..len {
        r[i] = b[i] - r[i];
    }
    let mut rel = norm(&r) / b_norm;
    stats.residuals.push(rel);
    if rel <= tol {
        return Ok((x, stats));
    }
    let r_hat = r.clone();
    let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
    let mut v = vec![SpeciesPair::ZERO; len];
    let mut p = vec![SpeciesPair::ZERO; len];
    let mut p_hat = vec![SpeciesPair::ZERO; len];
    let mut s = vec![SpeciesPair::ZERO; len];
    let mut s_hat = vec![SpeciesPair::ZERO; len];
    let mut t = vec![SpeciesPair::ZERO; len];

    for it in 1..=max_iter {
        stats.iterations = it;
        let rho_new = dot(&r_hat, &r);
        if rho_new == 0.0 || !rho_new.is_finite() {
            break;
        }
        let beta = (rho_new / rho) * (alpha / omega);
        for i in 0..len {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        apply_m(&p, &mut p_hat);
        sys.apply(&p_hat, &mut v);
        let denom = dot(&r_hat, &v);
        if denom == 0.0 || !denom.is_finite() {
            break;
        }
        alpha = rho_new / denom;
        for i in 0..len {
            s[i] = r[i] - alpha * v[i];
        }
        rel = norm(&s) / b_norm;
        if rel <= tol {
            for i in 0..len {
                x[i] = x[i] + alpha * p_hat[i];
            }
            stats.residuals.push(rel);
            return Ok((x, stats));
        }
        apply_m(&s, &mut s_hat);
        sys.apply(&s_hat, &mut t);
        let tt = dot(&t, &t);
        omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
        for i in 0..len {
            x[i] = x[i] + alpha * p_hat[i] + omega * s_hat[i];
            r[i] = s[i] - omega * t[i];
        }
        rel = norm(&r) / b_norm;
        stats.residuals.push(rel);
        if rel <= tol {
            return Ok((x, stats));
        }
        if omega == 0.0 {
            break;
        }
        rho = rho_new;
    }
    Err(no_convergence(stats.iterations, &stats.residuals))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense_shifted(grid: &Grid, bc: BoundaryCondition, z: &[f64]) -> Vec<f64> {
        let mut lap = vec![0.0; grid.len()];
        laplacian_scalar(grid, bc, z, &mut lap);
        z.iter().zip(&lap).map(|(a, b)| a - b).collect()
    }

    #[test]
    fn shifted_solves_reproduce_rhs() {
        for (dim, bc) in [
            (1, BoundaryCondition::Neumann),
            (1, BoundaryCondition::Dirichlet),
            (2, BoundaryCondition::Neumann),
            (2, BoundaryCondition::Dirichlet),
        ] {
            let g = Grid::new(dim, 12, 1.0).unwrap();
            let f = g.sample(|x| (3.0 * x[0]).sin() + x[1] * x[1] - 0.2);
            let z = solve_shifted_laplacian(&g, bc, &f).unwrap();
            let back = dense_shifted(&g, bc, &z);
            let err = back
                .iter()
                .zip(&f)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "dim {dim} {bc:?}: {err}");
        }
    }

    fn random_system(grid: Grid) -> BlockSystem {
        // Diagonally dominant, nonsymmetric blocks.
        let mut sys = BlockSystem::new(grid);
        for k in 0..grid.len() {
            let t = k as f64;
            sys.diag[k] = Matrix2::new(6.0 + (t * 0.3).sin(), 0.7, -0.4, 5.0 + (t * 0.1).cos());
            for slot in 0..2 * grid.dim() {
                sys.off[k][slot] = Matrix2::new(-1.0, 0.2 * (t + slot as f64).sin(), 0.1, -1.2);
            }
        }
        sys
    }

    #[test]
    fn bicgstab_solves_block_systems() {
        for dim in [1, 2] {
            let g = Grid::new(dim, 10, 1.0).unwrap();
            let sys = random_system(g);
            let x_true: Vec<SpeciesPair> = (0..g.len())
                .map(|k| SpeciesPair::new((k as f64).sin(), (k as f64 * 0.5).cos()))
                .collect();
            let mut b = vec![SpeciesPair::ZERO; g.len()];
            sys.apply(&x_true, &mut b);
            let (x, stats) = bicgstab(&sys, &b, &vec![SpeciesPair::ZERO; g.len()]).unwrap();
            let err = x
                .iter()
                .zip(&x_true)
                .map(|(a, b)| (*a - *b).norm_sq().sqrt())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "dim {dim}: {err}");
            if dim == 1 {
                assert!(stats.iterations <= 1);
            }
        }
    }

    #[test]
    fn zero_rhs_returns_zero() {
        let g = Grid::new(1, 5, 1.0).unwrap();
        let sys = random_system(g);
        let (x, _) = bicgstab(
            &sys,
            &[SpeciesPair::ZERO; 5],
            &[SpeciesPair::new(1.0, 1.0); 5],
        )
        .unwrap();
        assert!(x.iter().all(|s| *s == SpeciesPair::ZERO));
    }

    #[test]
    fn non_convergence_reports_history() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let sys = random_system(g);
        let b = vec![SpeciesPair::new(1.0, -1.0); g.len()];
        let err = bicgstab_with(&sys, &b, &vec![SpeciesPair::ZERO; g.len()], 1e-30, 2, false)
            .unwrap_err();
        match err {
            SktError::NoConvergence { iterations, tail } => {
                assert_eq!(iterations, 2);
                assert!(!tail.is_empty());
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

//! Time integration of the forward system and the regularity diagnostics
//! tracked along a run.
//!
//! Two discretizations are provided:
//! * `Explicit`: forward Euler on `Δ_h p(u) − q(u) + l(u)`,
//! * `Imex`: the divergence form `∇_h·(P(uⁿ)∇_h uⁿ⁺¹)` implicit with face
//!   matrices averaged from the adjacent nodes, reactions explicit.
//!
//! Because `P` is affine in `u`, the face average equals `P` at the face
//! midpoint and `P_f (u_j − u_k) = p(u_j) − p(u_k)` exactly, so both
//! operators coincide when applied to the same state.

use crate::algebra::{Coefficients, Matrix2, SpeciesPair};
use crate::config::RunConfig;
use crate::error::{Result, SktError};
use crate::grid::{
    gradient_sq_scalar, h1_sq_scalar, laplacian, BoundaryCondition, FieldPair, Grid,
};
use crate::linsolve::{bicgstab, BlockSystem, SolveStats};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    pub t_final: f64,
    pub dt: f64,
    pub steps: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0 && dt.is_finite() && dt > 0.0) {
            return Err(SktError::Domain(format!(
                "invalid time grid T = {t_final}, dt = {dt}"
            )));
        }
        let steps = (t_final / dt).round() as usize;
        if steps == 0 || (steps as f64 * dt - t_final).abs() > 1e-12 * t_final.max(1.0) {
            return Err(SktError::Domain(format!(
                "T = {t_final} is not an integer multiple of dt = {dt}"
            )));
        }
        Ok(TimeGrid { t_final, dt, steps })
    }

    /// `steps` equal steps covering `[0, T]`.
    pub fn with_steps(t_final: f64, steps: usize) -> Result<Self> {
        TimeGrid::new(t_final, t_final / steps as f64)
    }

    pub fn time(&self, step: usize) -> f64 {
        if step == self.steps {
            self.t_final
        } else {
            step as f64 * self.dt
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    Explicit,
    Imex,
}

impl SchemeKind {
    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Explicit => "explicit",
            SchemeKind::Imex => "imex",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "explicit" => Some(SchemeKind::Explicit),
            "imex" | "imex_lagged" => Some(SchemeKind::Imex),
            _ => None,
        }
    }
}

/// Largest explicit step `h²/(2d·P_max)`, `P_max` the maximum row-sum norm
/// of `P` over the nodes of `state`.
pub fn explicit_bound(c: &Coefficients, state: &FieldPair) -> f64 {
    let g = state.grid;
    let p_max = (0..g.len())
        .map(|k| c.jac_p(state.at(k)).row_sum_norm())
        .fold(0.0, f64::max);
    if p_max == 0.0 {
        return f64::INFINITY;
    }
    g.h() * g.h() / (2.0 * g.dim() as f64 * p_max)
}

fn p_field(c: &Coefficients, state: &FieldPair) -> FieldPair {
    state.map(|s| c.p(s))
}

/// `(l − q)(u) + source` per node, grouped so that a source equal to
/// `q − l` cancels exactly.
fn reaction(c: &Coefficients, s: SpeciesPair, source: Option<SpeciesPair>) -> SpeciesPair {
    let r = c.l(s) - c.q(s);
    match source {
        Some(f) => r + f,
        None => r,
    }
}

pub(crate) fn explicit_update(
    c: &Coefficients,
    state: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
    source: Option<&FieldPair>,
) -> Result<FieldPair> {
    let bound = explicit_bound(c, state);
    if dt > bound {
        return Err(SktError::Stability { dt, bound });
    }
    let lap = laplacian(&p_field(c, state), bc);
    let mut out = FieldPair::zeros(state.grid);
    for k in 0..state.grid.len() {
        let s = state.at(k);
        let r = reaction(c, s, source.map(|f| f.at(k)));
        out.set(k, s + dt * (lap.at(k) + r));
    }
    Ok(out)
}

/// One forward Euler step `uⁿ⁺¹ = uⁿ + dt (Δ_h p(uⁿ) − q(uⁿ) + l(uⁿ))`.
pub fn step_explicit(
    c: &Coefficients,
    state: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
) -> Result<FieldPair> {
    explicit_update(c, state, bc, dt, None)
}

/// `I − dt·∇_h·(P(state)∇_h ·)` with face-averaged matrices.
pub fn imex_system(
    c: &Coefficients,
    state: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
) -> BlockSystem {
    let g = state.grid;
    let k_h = dt / (g.h() * g.h());
    let p_nodes: Vec<Matrix2> = (0..g.len()).map(|k| c.jac_p(state.at(k))).collect();
    let p_zero = Matrix2::diag(c.d1, c.d2);
    let mut sys = BlockSystem::new(g);
    for k in 0..g.len() {
        let mut diag = Matrix2::IDENTITY;
        for axis in 0..g.dim() {
            for (slot, forward) in [(2 * axis, false), (2 * axis + 1, true)] {
                match g.neighbor(k, axis, forward) {
                    Some(j) => {
                        let face = p_nodes[k].add(&p_nodes[j]).scale(0.5 * k_h);
                        sys.off[k][slot] = face.scale(-1.0);
                        diag = diag.add(&face);
                    }
                    None => {
                        if bc == BoundaryCondition::Dirichlet {
                            // Face between the node and the zero boundary trace.
                            let face = p_nodes[k].add(&p_zero).scale(0.5 * k_h);
                            diag = diag.add(&face.scale(2.0));
                        }
                    }
                }
            }
        }
        sys.diag[k] = diag;
    }
    sys
}

pub(crate) fn imex_update(
    c: &Coefficients,
    state: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
    source: Option<&FieldPair>,
) -> Result<(FieldPair, SolveStats)> {
    let g = state.grid;
    let sys = imex_system(c, state, bc, dt);
    let rhs: Vec<SpeciesPair> = (0..g.len())
        .map(|k| {
            let s = state.at(k);
            s + dt * reaction(c, s, source.map(|f| f.at(k)))
        })
        .collect();
    let x0: Vec<SpeciesPair> = (0..g.len()).map(|k| state.at(k)).collect();
    let (mut x, stats) = bicgstab(&sys, &rhs, &x0)?;
    if bc == BoundaryCondition::Neumann {
        // Columns of the Neumann operator sum to the identity, so shifting by
        // the mean residual removes the solver's mass defect.
        let mut ax = vec![SpeciesPair::ZERO; g.len()];
        sys.apply(&x, &mut ax);
        let mut defect = SpeciesPair::ZERO;
        for k in 0..g.len() {
            defect = defect + (rhs[k] - ax[k]);
        }
        let shift = (1.0 / g.len() as f64) * defect;
        x.iter_mut().for_each(|s| *s = *s + shift);
    }
    let mut out = FieldPair::zeros(g);
    for (k, s) in x.into_iter().enumerate() {
        out.set(k, s);
    }
    Ok((out, stats))
}

/// One linearly implicit step `(I − dt L_n) uⁿ⁺¹ = uⁿ + dt (−q(uⁿ) + l(uⁿ))`.
pub fn step_imex(
    c: &Coefficients,
    state: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
) -> Result<FieldPair> {
    imex_update(c, state, bc, dt, None).map(|(f, _)| f)
}

/// Scalar diagnostics recorded at every time level.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Diagnostics {
    pub step: usize,
    pub t: f64,
    pub mass_u: f64,
    pub mass_v: f64,
    pub min_u: f64,
    pub min_v: f64,
    pub l2_u: f64,
    pub l2_v: f64,
    pub h1_u: f64,
    pub h1_v: f64,
    /// `‖u‖⁴_{L⁴} + ‖v‖⁴_{L⁴}`
    pub l4_pair: f64,
    /// `‖∇_h p(u)‖_{L²}`
    pub gradp_l2: f64,
    /// `‖Δ_h p(u)‖_{L²}`
    pub lapp_l2: f64,
    /// Running `Σ dt ‖(1+|u|+|v|)^{1/2}(|∂_t u|+|∂_t v|)‖²_{L²}` up to this level.
    pub wtd_dtu_l2: f64,
}

pub const DIAGNOSTICS_HEADER: &str =
    "step,t,mass_u,mass_v,min_u,min_v,l2_u,l2_v,h1_u,h1_v,l4_pair,gradp_l2,lapp_l2,wtd_dtu_l2";

impl Diagnostics {
    pub fn measure(
        c: &Coefficients,
        bc: BoundaryCondition,
        step: usize,
        t: f64,
        f: &FieldPair,
    ) -> Self {
        let g = &f.grid;
        let w = g.cell_volume();
        let mass = f.mass();
        let min = f.min();
        let sq = |a: &[f64]| w * a.iter().map(|x| x * x).sum::<f64>();
        let p = p_field(c, f);
        let gradp: f64 = gradient_sq_scalar(g, bc, &p.u)
            .iter()
            .chain(&gradient_sq_scalar(g, bc, &p.v))
            .sum();
        let lap = laplacian(&p, bc);
        Diagnostics {
            step,
            t,
            mass_u: mass.u,
            mass_v: mass.v,
            min_u: min.u,
            min_v: min.v,
            l2_u: sq(&f.u).sqrt(),
            l2_v: sq(&f.v).sqrt(),
            h1_u: h1_sq_scalar(g, bc, &f.u).sqrt(),
            h1_v: h1_sq_scalar(g, bc, &f.v).sqrt(),
            l4_pair: w * f.u.iter().chain(&f.v).map(|x| x.powi(4)).sum::<f64>(),
            gradp_l2: (w * gradp).sqrt(),
            lapp_l2: (sq(&lap.u) + sq(&lap.v)).sqrt(),
            wtd_dtu_l2: 0.0,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e},{:e}",
            self.step,
            self.t,
            self.mass_u,
            self.mass_v,
            self.min_u,
            self.min_v,
            self.l2_u,
            self.l2_v,
            self.h1_u,
            self.h1_v,
            self.l4_pair,
            self.gradp_l2,
            self.lapp_l2,
            self.wtd_dtu_l2
        )
    }
}

fn weighted_dt_increment(prev: &FieldPair, next: &FieldPair, dt: f64) -> f64 {
    let w = prev.grid.cell_volume();
    let mut acc = 0.0;
    for k in 0..prev.grid.len() {
        let weight = 1.0 + prev.u[k].abs() + prev.v[k].abs();
        let rate = ((next.u[k] - prev.u[k]).abs() + (next.v[k] - prev.v[k]).abs()) / dt;
        acc += weight * rate * rate;
    }
    dt * w * acc
}

/// Stored levels and per-step diagnostics of one forward run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub grid: Grid,
    pub bc: BoundaryCondition,
    pub time: TimeGrid,
    pub scheme: SchemeKind,
    pub stride: usize,
    pub clamped: bool,
    /// Step index of each stored snapshot: every `stride`-th step plus the last.
    pub steps: Vec<usize>,
    pub snapshots: Vec<FieldPair>,
    /// One entry per step, `0..=M`.
    pub diagnostics: Vec<Diagnostics>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.steps.iter().map(|&s| self.time.time(s)).collect()
    }

    pub fn initial(&self) -> &FieldPair {
        &self.snapshots[0]
    }

    pub fn last(&self) -> &FieldPair {
        self.snapshots
            .last()
            .expect("trajectory has at least one level")
    }

    /// Snapshot at the latest stored step not after `step`.
    pub fn level_at_step(&self, step: usize) -> &FieldPair {
        let idx = match self.steps.binary_search(&step) {
            Ok(i) => i,
            Err(i) => i.saturating_sub(1),
        };
        &self.snapshots[idx]
    }

    /// Snapshot stored exactly at `step`, if any.
    pub fn exact_level(&self, step: usize) -> Option<&FieldPair> {
        self.steps
            .binary_search(&step)
            .ok()
            .map(|i| &self.snapshots[i])
    }

    /// `sup_t ‖u(t)‖_{H¹}` over all steps.
    pub fn sup_h1(&self) -> f64 {
        self.diagnostics
            .iter()
            .map(|d| (d.h1_u * d.h1_u + d.h1_v * d.h1_v).sqrt())
            .fold(0.0, f64::max)
    }

    /// `∫₀ᵀ ‖u‖⁴_{L⁴} dt` by the trapezoidal rule over steps.
    pub fn l4_l4_fourth(&self) -> f64 {
        let dt = self.time.dt;
        let d = &self.diagnostics;
        let n = d.len();
        (0..n)
            .map(|i| {
                let w = if i == 0 || i + 1 == n { 0.5 } else { 1.0 };
                w * dt * d[i].l4_pair
            })
            .sum()
    }

    /// `∫₀ᵀ ‖Δ_h p(u)‖² dt`, left-endpoint rule.
    pub fn lapp_l2_sq(&self) -> f64 {
        let dt = self.time.dt;
        self.diagnostics[..self.diagnostics.len() - 1]
            .iter()
            .map(|d| dt * d.lapp_l2 * d.lapp_l2)
            .sum()
    }

    pub fn min_value(&self) -> f64 {
        self.diagnostics
            .iter()
            .map(|d| d.min_u.min(d.min_v))
            .fold(f64::INFINITY, f64::min)
    }

    pub fn diagnostics_csv(&self) -> String {
        let mut out = String::from(DIAGNOSTICS_HEADER);
        out.push('\n');
        for d in &self.diagnostics {
            out.push_str(&d.csv_row());
            out.push('\n');
        }
        out
    }
}

/// Space-time source term `f(t)` added to the right-hand side.
pub type Forcing<'a> = &'a (dyn Fn(f64) -> FieldPair + Sync);

/// Integrates from `initial` over `cfg`'s time grid with `cfg`'s scheme.
pub fn integrate(
    cfg: &RunConfig,
    initial: &FieldPair,
    forcing: Option<Forcing<'_>>,
) -> Result<Trajectory> {
    integrate_with(cfg, cfg.scheme, initial, forcing)
}

pub fn integrate_with(
    cfg: &RunConfig,
    scheme: SchemeKind,
    initial: &FieldPair,
    forcing: Option<Forcing<'_>>,
) -> Result<Trajectory> {
    let time = cfg.time_grid()?;
    let grid = initial.grid;
    let c = &cfg.coeffs;
    let bc = cfg.bc;
    let stride = cfg.stride.max(1);
    if !initial.is_finite() {
        return Err(SktError::NonFinite { step: 0 });
    }

    let mut state = initial.clone();
    let mut steps = vec![0];
    let mut snapshots = vec![state.clone()];
    let mut diagnostics = Vec::with_capacity(time.steps + 1);
    diagnostics.push(Diagnostics::measure(c, bc, 0, 0.0, &state));
    let mut running = 0.0;

    for n in 0..time.steps {
        let t = time.time(n);
        let source = forcing.map(|f| f(t));
        if source.as_ref().is_some_and(|f| !f.is_finite()) {
            return Err(SktError::NonFinite { step: n + 1 });
        }
        let mut next = match scheme {
            SchemeKind::Explicit => explicit_update(c, &state, bc, time.dt, source.as_ref())?,
            SchemeKind::Imex => imex_update(c, &state, bc, time.dt, source.as_ref())?.0,
        };
        if !next.is_finite() {
            return Err(SktError::NonFinite { step: n + 1 });
        }
        if cfg.clamp {
            next.u
                .iter_mut()
                .chain(next.v.iter_mut())
                .for_each(|x| *x = x.max(0.0));
        }
        running += weighted_dt_increment(&state, &next, time.dt);
        state = next;
        let mut d = Diagnostics::measure(c, bc, n + 1, time.time(n + 1), &state);
        d.wtd_dtu_l2 = running;
        diagnostics.push(d);
        if (n + 1) % stride == 0 || n + 1 == time.steps {
            steps.push(n + 1);
            snapshots.push(state.clone());
        }
    }

    Ok(Trajectory {
        grid,
        bc,
        time,
        scheme,
        stride,
        clamped: cfg.clamp,
        steps,
        snapshots,
        diagnostics,
    })
}

/// Runs the configured problem from its initial preset.
pub fn run_forward(cfg: &RunConfig) -> Result<Trajectory> {
    cfg.validate()?;
    let initial = cfg.initial_field()?;
    if initial.min().u < 0.0 || initial.min().v < 0.0 {
        return Err(SktError::Domain(
            "initial data must be nonnegative".to_string(),
        ));
    }
    integrate(cfg, &initial, None)
}

/// Smooth exact solution used for manufactured-solution studies.
pub trait ManufacturedSolution: Sync {
    fn value(&self, x: [f64; 2], t: f64) -> SpeciesPair;
    fn time_derivative(&self, x: [f64; 2], t: f64) -> SpeciesPair;
    /// First derivative along each axis.
    fn gradient(&self, x: [f64; 2], t: f64) -> [SpeciesPair; 2];
    /// Pure second derivative along each axis.
    fn second_derivative(&self, x: [f64; 2], t: f64) -> [SpeciesPair; 2];
}

/// Residual `∂_t u − Δp(u) + q(u) − l(u)` of an exact solution, grouped as
/// `(q − l) + (∂_t u − Δp)`.
pub fn manufactured_forcing(
    c: &Coefficients,
    exact: &dyn ManufacturedSolution,
    dim: usize,
    x: [f64; 2],
    t: f64,
) -> SpeciesPair {
    let s = exact.value(x, t);
    let p = c.jac_p(s);
    let grad = exact.gradient(x, t);
    let second = exact.second_derivative(x, t);
    let mut lap_p = SpeciesPair::ZERO;
    for axis in 0..dim {
        let ga = grad[axis];
        let dp = Matrix2::new(
            2.0 * c.a11 * ga.u + c.a12 * ga.v,
            c.a12 * ga.u,
            c.a21 * ga.v,
            c.a21 * ga.u + 2.0 * c.a22 * ga.v,
        );
        lap_p = lap_p + p.mul_vec(second[axis]) + dp.mul_vec(ga);
    }
    (c.q(s) - c.l(s)) + (exact.time_derivative(x, t) - lap_p)
}

/// How the time step follows the grid in a refinement study.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DtRule {
    Fixed(f64),
    /// `dt ≤ factor·h²`, rounded down to divide `T`.
    Parabolic(f64),
    /// `dt = dt_coarsest · h/h_coarsest`.
    Linear(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub n: usize,
    pub dt: f64,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    /// `log(e_i/e_{i+1}) / log(r_i)` with `r_i` the refinement ratio of the
    /// varied parameter.
    pub orders: Vec<f64>,
}

impl ConvergenceTable {
    fn from_rows(rows: Vec<ConvergenceRow>, spatial: bool) -> Self {
        let orders = rows
            .windows(2)
            .map(|w| {
                let ratio = if spatial {
                    w[1].n as f64 / w[0].n as f64
                } else {
                    w[0].dt / w[1].dt
                };
                (w[0].error / w[1].error).ln() / ratio.ln()
            })
            .collect();
        ConvergenceTable { rows, orders }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,dt,error,order\n");
        for (i, r) in self.rows.iter().enumerate() {
            let order = if i == 0 {
                String::new()
            } else {
                format!("{:e}", self.orders[i - 1])
            };
            out.push_str(&format!("{},{:e},{:e},{}\n", r.n, r.dt, r.error, order));
        }
        out
    }
}

fn manufactured_error(cfg: &RunConfig, exact: &dyn ManufacturedSolution) -> Result<f64> {
    let grid = cfg.grid()?;
    let c = cfg.coeffs;
    let dim = grid.dim();
    let initial = FieldPair::from_fn(grid, |x| exact.value(x, 0.0));
    let forcing =
        move |t: f64| FieldPair::from_fn(grid, |x| manufactured_forcing(&c, exact, dim, x, t));
    let traj = integrate(cfg, &initial, Some(&forcing))?;
    let t_final = traj.time.t_final;
    let reference = FieldPair::from_fn(grid, |x| exact.value(x, t_final));
    Ok(traj.last().sub(&reference).max_abs())
}

/// Max-norm error at `T` on the grids `levels` (cells per axis), with the
/// step chosen by `rule`; orders are measured in `h`.
pub fn manufactured_convergence(
    cfg: &RunConfig,
    exact: &dyn ManufacturedSolution,
    levels: &[usize],
    rule: DtRule,
) -> Result<ConvergenceTable> {
    let mut rows = Vec::with_capacity(levels.len());
    for &n in levels {
        let h = cfg.length / n as f64;
        let h0 = cfg.length / levels[0] as f64;
        let steps = match rule {
            DtRule::Fixed(dt) => (cfg.t_final / dt).round() as usize,
            DtRule::Parabolic(factor) => (cfg.t_final / (factor * h * h)).ceil() as usize,
            DtRule::Linear(dt0) => (cfg.t_final / (dt0 * h / h0)).round() as usize,
        }
        .max(1);
        let mut run = cfg.clone();
        run.n = n;
        run.dt = cfg.t_final / steps as f64;
        run.stride = steps;
        let error = manufactured_error(&run, exact)?;
        rows.push(ConvergenceRow {
            n,
            dt: run.dt,
            error,
        });
    }
    Ok(ConvergenceTable::from_rows(rows, true))
}

/// Max-norm error at `T` on a fixed grid for each step count; orders in `dt`.
pub fn temporal_convergence(
    cfg: &RunConfig,
    exact: &dyn ManufacturedSolution,
    step_counts: &[usize],
) -> Result<ConvergenceTable> {
    let mut rows = Vec::with_capacity(step_counts.len());
    for &steps in step_counts {
        let mut run = cfg.clone();
        run.dt = cfg.t_final / steps as f64;
        run.stride = steps;
        let error = manufactured_error(&run, exact)?;
        rows.push(ConvergenceRow {
            n: cfg.n,
            dt: run.dt,
            error,
        });
    }
    Ok(ConvergenceTable::from_rows(rows, false))
}

/// `e^{−π² d t} cos(πx/L)` (times `cos(πy/L)` in 2-D) in both species: the
/// exact solution of the decoupled heat limit with `d1 = d2 = d` under
/// homogeneous Neumann data on `(0, L)`.
#[derive(Clone, Copy, Debug)]
pub struct HeatMode {
    pub diffusivity: f64,
    pub length: f64,
    pub dim: usize,
}

impl HeatMode {
    fn rate(&self) -> f64 {
        let k = std::f64::consts::PI / self.length;
        self.diffusivity * k * k * self.dim as f64
    }

    fn spatial(&self, x: [f64; 2]) -> ([f64; 2], [f64; 2]) {
        let k = std::f64::consts::PI / self.length;
        let mut value = [1.0, 1.0];
        let mut slope = [0.0, 0.0];
        for a in 0..self.dim {
            value[a] = (k * x[a]).cos();
            slope[a] = -k * (k * x[a]).sin();
        }
        (value, slope)
    }
}

impl ManufacturedSolution for HeatMode {
    fn value(&self, x: [f64; 2], t: f64) -> SpeciesPair {
        let (v, _) = self.spatial(x);
        let s = (-self.rate() * t).exp() * v[0] * v[1];
        SpeciesPair::new(s, s)
    }

    fn time_derivative(&self, x: [f64; 2], t: f64) -> SpeciesPair {
        let s = self.value(x, t);
        -self.rate() * s
    }

    fn gradient(&self, x: [f64; 2], t: f64) -> [SpeciesPair; 2] {
        let (v, d) = self.spatial(x);
        let e = (-self.rate() * t).exp();
        let gx = e * d[0] * v[1];
        let gy = if self.dim == 2 { e * v[0] * d[1] } else { 0.0 };
        [SpeciesPair::new(gx, gx), SpeciesPair::new(gy, gy)]
    }

    fn second_derivative(&self, x: [f64; 2], t: f64) -> [SpeciesPair; 2] {
        let k = std::f64::consts::PI / self.length;
        let s = self.value(x, t);
        let sxx = -k * k * s;
        let syy = if self.dim == 2 {
            -k * k * s
        } else {
            SpeciesPair::ZERO
        };
        [sxx, syy]
    }
}

/// Smooth positive polynomial profiles with zero normal derivative at both
/// ends of `(0, 1)`:
/// `u = (1 + x²(3 − 2x))·e^{−t}`, `v = (1 + (1 − x)²(1 + 2x))·(1 + t)`.
#[derive(Clone, Copy, Debug)]
pub struct PolynomialProfile;

impl ManufacturedSolution for PolynomialProfile {
    fn value(&self, x: [f64; 2], t: f64) -> SpeciesPair {
        let x = x[0];
        let a = 1.0 + x * x * (3.0 - 2.0 * x);
        let b = 1.0 + (1.0 - x) * (1.0 - x) * (1.0 + 2.0 * x);
        SpeciesPair::new(a * (-t).exp(), b * (1.0 + t))
    }

    fn time_derivative(&self, x: [f64; 2], t: f64) -> SpeciesPair {
        let s = self.value(x, 0.0);
        SpeciesPair::new(-s.u * (-t).exp(), s.v)
    }

    fn gradient(&self, x: [f64; 2], t: f64) -> [SpeciesPair; 2] {
        let x = x[0];
        let da = 6.0 * x * (1.0 - x);
        let db = -6.0 * x * (1.0 - x);
        [
            SpeciesPair::new(da * (-t).exp(), db * (1.0 + t)),
            SpeciesPair::ZERO,
        ]
    }

    fn second_derivative(&self, x: [f64; 2], t: f64) -> [SpeciesPair; 2] {
        let x = x[0];
        let dda = 6.0 - 12.0 * x;
        let ddb = -6.0 + 12.0 * x;
        [
            SpeciesPair::new(dda * (-t).exp(), ddb * (1.0 + t)),
            SpeciesPair::ZERO,
        ]
    }
}

/// Constant state `(cu, cv)`: zero error at every resolution.
#[derive(Clone, Copy, Debug)]
pub struct ConstantState(pub SpeciesPair);

impl ManufacturedSolution for ConstantState {
    fn value(&self, _: [f64; 2], _: f64) -> SpeciesPair {
        self.0
    }
    fn time_derivative(&self, _: [f64; 2], _: f64) -> SpeciesPair {
        SpeciesPair::ZERO
    }
    fn gradient(&self, _: [f64; 2], _: f64) -> [SpeciesPair; 2] {
        [SpeciesPair::ZERO; 2]
    }
    fn second_derivative(&self, _: [f64; 2], _: f64) -> [SpeciesPair; 2] {
        [SpeciesPair::ZERO; 2]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::grid::inner;

    fn heat_cfg(n: usize, t_final: f64, dt: f64, scheme: SchemeKind) -> RunConfig {
        let mut cfg = RunConfig::new(
            1,
            n,
            1.0,
            t_final,
            dt,
            Coefficients::heat(1.0, 1.0).unwrap(),
        );
        cfg.scheme = scheme;
        cfg
    }

    #[test]
    fn time_grid_rules() {
        let t = TimeGrid::new(1.0, 0.1).unwrap();
        assert_eq!(t.steps, 10);
        assert_eq!(t.time(10), 1.0);
        assert!(TimeGrid::new(1.0, 0.3).is_err());
        assert!(TimeGrid::new(1.0, 0.0).is_err());
    }

    #[test]
    fn zero_state_is_fixed() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let c = Coefficients::unit();
        let z = FieldPair::zeros(g);
        for bc in [BoundaryCondition::Neumann, BoundaryCondition::Dirichlet] {
            assert_eq!(step_explicit(&c, &z, bc, 1e-4).unwrap(), z);
            assert_eq!(step_imex(&c, &z, bc, 0.1).unwrap(), z);
        }
    }

    #[test]
    fn constant_state_without_reactions_is_fixed() {
        let g = Grid::new(2, 6, 1.0).unwrap();
        let mut c = Coefficients::unit();
        (c.b1, c.b2, c.c1, c.c2, c.a1, c.a2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        let s = FieldPair::constant(g, 0.7, 1.3);
        let next = step_explicit(&c, &s, BoundaryCondition::Neumann, 1e-4).unwrap();
        assert_eq!(next, s);
        let next = step_imex(&c, &s, BoundaryCondition::Neumann, 0.05).unwrap();
        assert!(next.sub(&s).max_abs() < 1e-12);
    }

    #[test]
    fn explicit_refuses_unstable_step() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let c = Coefficients::heat(1.0, 1.0).unwrap();
        let s = FieldPair::constant(g, 1.0, 1.0);
        let bound = explicit_bound(&c, &s);
        assert!((bound - 1.0 / (256.0 * 2.0)).abs() < 1e-15);
        match step_explicit(&c, &s, BoundaryCondition::Neumann, 2.0 * bound) {
            Err(SktError::Stability { bound: b, .. }) => assert_eq!(b, bound),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn operators_agree_at_a_state() {
        // (I − dt L)u = u − dt Δ_h p(u) for the same u: the discrete chain rule.
        for bc in [BoundaryCondition::Neumann, BoundaryCondition::Dirichlet] {
            for dim in [1, 2] {
                let g = Grid::new(dim, 9, 1.0).unwrap();
                let c = Coefficients::unit();
                let s = FieldPair::from_fn(g, |x| {
                    SpeciesPair::new(1.0 + x[0] * x[1] + x[0], 2.0 - x[0] * x[0] + x[1])
                });
                let dt = 0.01;
                let sys = imex_system(&c, &s, bc, dt);
                let xs: Vec<SpeciesPair> = (0..g.len()).map(|k| s.at(k)).collect();
                let mut ax = vec![SpeciesPair::ZERO; g.len()];
                sys.apply(&xs, &mut ax);
                let lap = laplacian(&s.map(|z| c.p(z)), bc);
                for (k, a) in ax.iter().enumerate() {
                    let expected = s.at(k) - dt * lap.at(k);
                    assert!(
                        (*a - expected).norm_sq().sqrt() < 1e-12,
                        "{bc:?} dim {dim} node {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn one_step_difference_is_second_order() {
        let g = Grid::new(1, 32, 1.0).unwrap();
        let c = Coefficients::unit();
        let s = FieldPair::from_fn(g, |x| {
            let a = (std::f64::consts::PI * x[0]).cos();
            SpeciesPair::new(1.0 + 0.3 * a, 1.0 - 0.2 * a)
        });
        let bc = BoundaryCondition::Neumann;
        let bound = explicit_bound(&c, &s);
        let diff = |dt: f64| {
            let e = step_explicit(&c, &s, bc, dt).unwrap();
            let i = step_imex(&c, &s, bc, dt).unwrap();
            e.sub(&i).max_abs()
        };
        let (d1, d2) = (diff(bound / 4.0), diff(bound / 8.0));
        let ratio = d1 / d2;
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn zero_initial_data_gives_zero_trajectory() {
        let cfg = RunConfig::new(1, 16, 1.0, 0.01, 0.001, Coefficients::unit());
        let traj = run_forward(&cfg).unwrap();
        assert!(traj.snapshots.iter().all(|f| f.max_abs() == 0.0));
        for d in &traj.diagnostics {
            assert_eq!(
                [
                    d.mass_u,
                    d.mass_v,
                    d.l2_u,
                    d.h1_v,
                    d.l4_pair,
                    d.gradp_l2,
                    d.lapp_l2,
                    d.wtd_dtu_l2
                ],
                [0.0; 8]
            );
        }
        assert_eq!(traj.diagnostics.len(), 11);
    }

    #[test]
    fn stride_keeps_endpoints() {
        let mut cfg = RunConfig::new(1, 16, 1.0, 0.01, 0.001, Coefficients::unit());
        cfg.initial_u = Preset::Constant(1.0);
        cfg.stride = 4;
        let traj = run_forward(&cfg).unwrap();
        assert_eq!(traj.steps, vec![0, 4, 8, 10]);
        assert_eq!(traj.level_at_step(6), &traj.snapshots[1]);
        assert!(traj.exact_level(6).is_none());
    }

    #[test]
    fn mass_is_conserved_without_reactions() {
        let mut c = Coefficients::unit();
        (c.b1, c.b2, c.c1, c.c2, c.a1, c.a2) = (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
        for scheme in [SchemeKind::Explicit, SchemeKind::Imex] {
            let mut cfg = RunConfig::new(2, 12, 1.0, 0.01, 1e-4, c);
            cfg.scheme = scheme;
            cfg.initial_u = Preset::Bump {
                center: 0.4,
                width: 0.2,
                amplitude: 1.0,
            };
            cfg.initial_v = Preset::Cosine {
                k: 1,
                amplitude: 0.5,
                offset: 1.0,
            };
            let traj = run_forward(&cfg).unwrap();
            let first = traj.diagnostics[0];
            let last = traj.diagnostics.last().unwrap();
            let drift = ((last.mass_u - first.mass_u).abs() + (last.mass_v - first.mass_v).abs())
                / cfg.t_final;
            assert!(drift < 1e-10, "{scheme:?}: {drift}");
        }
    }

    #[test]
    fn nan_aborts_with_step() {
        let cfg = RunConfig::new(1, 8, 1.0, 0.01, 0.001, Coefficients::unit());
        let mut init = FieldPair::constant(cfg.grid().unwrap(), 1.0, 1.0);
        init.u[3] = f64::NAN;
        assert!(matches!(
            integrate(&cfg, &init, None),
            Err(SktError::NonFinite { step: 0 })
        ));
        let blow_up = |_: f64| FieldPair::constant(cfg.grid().unwrap(), f64::INFINITY, 0.0);
        let init = FieldPair::constant(cfg.grid().unwrap(), 1.0, 1.0);
        assert!(matches!(
            integrate(&cfg, &init, Some(&blow_up)),
            Err(SktError::NonFinite { step: 1 })
        ));
    }

    #[test]
    fn clamp_is_opt_in() {
        let mut cfg = RunConfig::new(1, 16, 1.0, 0.001, 1e-4, Coefficients::unit());
        cfg.initial_u = Preset::Bump {
            center: 0.5,
            width: 0.05,
            amplitude: 1.0,
        };
        let traj = run_forward(&cfg).unwrap();
        assert!(!traj.clamped);
        cfg.clamp = true;
        let traj = run_forward(&cfg).unwrap();
        assert!(traj.clamped);
        assert!(traj.min_value() >= 0.0);
    }

    #[test]
    fn heat_limit_tracks_exponential_decay() {
        let mode = HeatMode {
            diffusivity: 1.0,
            length: 1.0,
            dim: 1,
        };
        let cfg = heat_cfg(32, 0.05, 0.05, SchemeKind::Explicit);
        let table =
            manufactured_convergence(&cfg, &mode, &[16, 32, 64], DtRule::Parabolic(0.2)).unwrap();
        for o in &table.orders {
            assert!((o - 2.0).abs() < 0.2, "{table:?}");
        }
    }

    #[test]
    fn imex_is_stable_beyond_the_explicit_bound() {
        let mode = HeatMode {
            diffusivity: 1.0,
            length: 1.0,
            dim: 1,
        };
        let g = Grid::new(1, 32, 1.0).unwrap();
        let bound = g.h() * g.h() / 2.0;
        let steps = 20;
        let cfg = heat_cfg(
            32,
            steps as f64 * 10.0 * bound,
            10.0 * bound,
            SchemeKind::Imex,
        );
        let init = FieldPair::from_fn(g, |x| mode.value(x, 0.0));
        let traj = integrate(&cfg, &init, None).unwrap();
        let exact = FieldPair::from_fn(g, |x| mode.value(x, cfg.t_final));
        assert!(traj.last().sub(&exact).max_abs() < 0.02);
        let mut explicit = cfg.clone();
        explicit.scheme = SchemeKind::Explicit;
        assert!(matches!(
            integrate(&explicit, &init, None),
            Err(SktError::Stability { .. })
        ));
    }

    #[test]
    fn constant_manufactured_solution_has_zero_error() {
        let exact = ConstantState(SpeciesPair::new(0.8, 1.7));
        let mut cfg = RunConfig::new(1, 16, 1.0, 0.01, 0.001, Coefficients::unit());
        cfg.scheme = SchemeKind::Explicit;
        let table =
            manufactured_convergence(&cfg, &exact, &[16, 32, 64, 128], DtRule::Parabolic(0.05))
                .unwrap();
        assert!(table.rows.iter().all(|r| r.error == 0.0), "{table:?}");
        cfg.scheme = SchemeKind::Imex;
        let table =
            manufactured_convergence(&cfg, &exact, &[16, 32], DtRule::Fixed(0.001)).unwrap();
        assert!(table.rows.iter().all(|r| r.error < 1e-13), "{table:?}");
    }

    #[test]
    fn diagnostics_csv_schema() {
        let mut cfg = RunConfig::new(1, 8, 1.0, 0.002, 0.001, Coefficients::unit());
        cfg.initial_u = Preset::Constant(1.0);
        let csv = run_forward(&cfg).unwrap().diagnostics_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), DIAGNOSTICS_HEADER);
        assert_eq!(lines.clone().count(), 3);
        assert!(lines.all(|l| l.split(',').count() == 14));
    }

    #[test]
    fn mass_of_constant_matches_inner() {
        let g = Grid::new(1, 10, 2.0).unwrap();
        let f = FieldPair::constant(g, 1.5, 0.5);
        let one = FieldPair::constant(g, 1.0, 1.0);
        let m = f.mass();
        assert!((m.u + m.v - inner(&f, &one)).abs() < 1e-14);
    }
}

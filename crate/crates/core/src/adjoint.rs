//! Backward adjoint solves linearized around `ũ = (u₁ + u₂)/2`, with the
//! smooth truncation `θ_ε` bounding the coefficient field.
//!
//! In reversed time `τ = T − t` the adjoint reads
//! `∂_τφ = P(ũ)ᵀΔφ − Q(ũ)ᵀφ + R(φ)` with `R(φ) = φ` or `R(φ) = l(φ)`.

use rayon::prelude::*;

use crate::algebra::{Coefficients, Matrix2, SpeciesPair};
use crate::config::RunConfig;
use crate::error::{Result, SktError};
use crate::forward::{TimeGrid, Trajectory};
use crate::grid::{h1_norm, inner, laplacian, BoundaryCondition, FieldPair, Grid};
use crate::linsolve::{bicgstab, BlockSystem};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TruncationParam {
    eps: f64,
}

impl TruncationParam {
    pub fn new(eps: f64) -> Result<Self> {
        if !(eps.is_finite() && eps > 0.0) {
            return Err(SktError::Domain(format!("eps must be positive, got {eps}")));
        }
        Ok(TruncationParam { eps })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// `1/ε`: below this value the truncation is the identity.
    pub fn lower(&self) -> f64 {
        1.0 / self.eps
    }

    /// `2/ε`: above this value the truncation is constant.
    pub fn upper(&self) -> f64 {
        2.0 / self.eps
    }

    pub fn apply(&self, x: f64) -> f64 {
        let a = self.lower();
        if x <= a {
            x
        } else if x >= 2.0 * a {
            a
        } else {
            let t = (x - a) / a;
            a + a * t * (1.0 - t) * (1.0 - t)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let a = self.lower();
        if x <= a {
            1.0
        } else if x >= 2.0 * a {
            0.0
        } else {
            let t = (x - a) / a;
            (1.0 - t) * (1.0 - 3.0 * t)
        }
    }

    pub fn apply_field(&self, f: &FieldPair) -> FieldPair {
        f.map(|s| SpeciesPair::new(self.apply(s.u), self.apply(s.v)))
    }
}

/// Componentwise `θ_ε`.
pub fn theta_eps(eps: f64, s: SpeciesPair) -> Result<SpeciesPair> {
    let t = TruncationParam::new(eps)?;
    Ok(SpeciesPair::new(t.apply(s.u), t.apply(s.v)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointRhsKind {
    /// `R(φ) = φ`
    Identity,
    /// `R(φ) = l(φ)`
    L,
}

impl AdjointRhsKind {
    pub fn name(self) -> &'static str {
        match self {
            AdjointRhsKind::Identity => "identity",
            AdjointRhsKind::L => "l",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" | "identity_rhs" => Some(AdjointRhsKind::Identity),
            "l" | "l_rhs" => Some(AdjointRhsKind::L),
            _ => None,
        }
    }

    pub fn apply(self, c: &Coefficients, phi: SpeciesPair) -> SpeciesPair {
        match self {
            AdjointRhsKind::Identity => phi,
            AdjointRhsKind::L => c.l(phi),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjointMode {
    /// Implicit diffusion with `P(ũ)ᵀ` frozen per step.
    Continuous,
    /// Exact transpose of the explicit forward step linearized at `ũ`.
    Transpose,
}

impl AdjointMode {
    pub fn name(self) -> &'static str {
        match self {
            AdjointMode::Continuous => "continuous",
            AdjointMode::Transpose => "transpose",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "continuous" => Some(AdjointMode::Continuous),
            "transpose" => Some(AdjointMode::Transpose),
            _ => None,
        }
    }
}

fn same_grid(a: &FieldPair, b: &FieldPair) -> Result<()> {
    if a.grid != b.grid {
        return Err(SktError::Mismatch(format!(
            "grids differ: {:?} vs {:?}",
            a.grid, b.grid
        )));
    }
    Ok(())
}

fn adjoint_system(
    c: &Coefficients,
    u_tilde: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
) -> BlockSystem {
    let g = u_tilde.grid;
    let k_h = dt / (g.h() * g.h());
    let mut sys = BlockSystem::new(g);
    for k in 0..g.len() {
        let pt = c.jac_p(u_tilde.at(k)).transpose().scale(k_h);
        let mut diag = Matrix2::IDENTITY;
        for axis in 0..g.dim() {
            for (slot, forward) in [(2 * axis, false), (2 * axis + 1, true)] {
                match g.neighbor(k, axis, forward) {
                    Some(_) => {
                        sys.off[k][slot] = pt.scale(-1.0);
                        diag = diag.add(&pt);
                    }
                    None => {
                        if bc == BoundaryCondition::Dirichlet {
                            diag = diag.add(&pt.scale(2.0));
                        }
                    }
                }
            }
        }
        sys.diag[k] = diag;
    }
    sys
}

/// One backward step of the continuous-mode adjoint:
/// `(I − dt P(ũ)ᵀΔ_h) φⁿ = φⁿ⁺¹ + dt(−Q(ũ)ᵀφⁿ⁺¹ + R(φⁿ⁺¹))`.
pub fn step_adjoint_backward(
    c: &Coefficients,
    phi: &FieldPair,
    u_tilde_eps: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
    rhs: AdjointRhsKind,
) -> Result<FieldPair> {
    same_grid(phi, u_tilde_eps)?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(SktError::Domain(format!("dt must be positive, got {dt}")));
    }
    let g = phi.grid;
    let b: Vec<SpeciesPair> = (0..g.len())
        .map(|k| {
            let p = phi.at(k);
            let qt = c.jac_q(u_tilde_eps.at(k)).transpose();
            p + dt * (rhs.apply(c, p) - qt.mul_vec(p))
        })
        .collect();
    let x0: Vec<SpeciesPair> = (0..g.len()).map(|k| phi.at(k)).collect();
    let sys = adjoint_system(c, u_tilde_eps, bc, dt);
    let (x, _) = bicgstab(&sys, &b, &x0)?;
    let mut out = FieldPair::zeros(g);
    for (k, s) in x.into_iter().enumerate() {
        out.set(k, s);
    }
    Ok(out)
}

/// One backward step of the transpose-mode adjoint:
/// `φⁿ = φⁿ⁺¹ + dt(P(ũ)ᵀΔ_hφⁿ⁺¹ − Q(ũ)ᵀφⁿ⁺¹ + R(φⁿ⁺¹))`.
pub fn step_adjoint_transpose(
    c: &Coefficients,
    phi: &FieldPair,
    u_tilde_eps: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
    rhs: AdjointRhsKind,
) -> Result<FieldPair> {
    same_grid(phi, u_tilde_eps)?;
    let lap = laplacian(phi, bc);
    let mut out = FieldPair::zeros(phi.grid);
    for k in 0..phi.grid.len() {
        let p = phi.at(k);
        let s = u_tilde_eps.at(k);
        let pt = c.jac_p(s).transpose();
        let qt = c.jac_q(s).transpose();
        out.set(
            k,
            p + dt * (pt.mul_vec(lap.at(k)) - qt.mul_vec(p) + rhs.apply(c, p)),
        );
    }
    Ok(out)
}

/// One explicit step of the forward system linearized at a frozen `ũ`:
/// `ūⁿ⁺¹ = ūⁿ + dt(Δ_h(P(ũ)ūⁿ) − Q(ũ)ūⁿ + l(ūⁿ))`.
pub fn step_linearized_forward(
    c: &Coefficients,
    u_bar: &FieldPair,
    u_tilde: &FieldPair,
    bc: BoundaryCondition,
    dt: f64,
) -> Result<FieldPair> {
    same_grid(u_bar, u_tilde)?;
    let flux = u_bar.zip_map(u_tilde, |b, s| c.jac_p(s).mul_vec(b));
    let lap = laplacian(&flux, bc);
    let mut out = FieldPair::zeros(u_bar.grid);
    for k in 0..u_bar.grid.len() {
        let b = u_bar.at(k);
        let q = c.jac_q(u_tilde.at(k)).mul_vec(b);
        out.set(k, b + dt * (lap.at(k) - q + c.l(b)));
    }
    Ok(out)
}

/// Per-step adjoint diagnostics; the partial sums run from `t` up to `T`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct AdjointDiagnostics {
    pub step: usize,
    pub t: f64,
    pub h1_phi: f64,
    /// `Σ dt ∫(1 + ũ + ṽ)|Δ_hφ|²` over the steps from this one to `T`.
    pub weighted_lap_partial: f64,
    /// `‖∂_tφ‖_{L^{4/3}}` over `(t, T)`.
    pub dt_l43_partial: f64,
}

pub const ADJOINT_HEADER: &str = "step,t,h1_phi,weighted_lap_partial,dt_l43_partial";

impl AdjointDiagnostics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{:e},{:e},{:e},{:e}",
            self.step, self.t, self.h1_phi, self.weighted_lap_partial, self.dt_l43_partial
        )
    }
}

/// Both sides of the discrete energy inequality obtained by testing one
/// backward step with `−Δ_hφⁿ`, summed with weights `e^{2(T−tₙ)}`:
///
/// `Σ w_n [E(φⁿ) − E(φⁿ⁺¹) + 2dt W_n] ≤ Σ w_n 2dt S_n`
///
/// with `E(f) = ⟨−Δ_h f, f⟩`, `W_n = ∫(d0 + α(ũ+ṽ))|Δ_hφⁿ|²` and
/// `S_n = ⟨Q(ũ)ᵀφⁿ⁺¹ − R(φⁿ⁺¹), Δ_hφⁿ⟩`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GronwallTrace {
    /// Cumulative left side after each backward step.
    pub lhs: Vec<f64>,
    /// Cumulative right side after each backward step.
    pub rhs: Vec<f64>,
    /// Largest per-step `lhs − rhs` relative to the step's magnitude.
    pub max_violation: f64,
}

impl GronwallTrace {
    /// Tolerance for the per-step check, relative to the step's magnitude.
    pub const TOLERANCE: f64 = 1e-8;

    pub fn holds(&self) -> bool {
        self.max_violation <= Self::TOLERANCE
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdjointBoundsReport {
    /// `sup_t ‖φ‖_{H¹}`
    pub sup_h1: f64,
    /// `∫₀ᵀ∫(1 + ũ + ṽ)|Δφ|²`
    pub weighted_lap: f64,
    /// `‖∂_tφ‖_{L^{4/3}(Ω_T)}`
    pub dt_l43: f64,
    /// `‖χ‖_{H¹}`
    pub chi_h1: f64,
    /// The three functionals above divided by `‖χ‖_{H¹}`; zero when `χ = 0`.
    pub kappas: [f64; 3],
    /// Present in continuous mode only.
    pub gronwall: Option<GronwallTrace>,
}

impl AdjointBoundsReport {
    pub fn lines(&self) -> Vec<String> {
        let mut out = vec![
            format!("sup_h1 = {:e}", self.sup_h1),
            format!("weighted_lap = {:e}", self.weighted_lap),
            format!("dt_l43 = {:e}", self.dt_l43),
            format!("chi_h1 = {:e}", self.chi_h1),
            format!("kappa_sup_h1 = {:e}", self.kappas[0]),
            format!("kappa_weighted_lap = {:e}", self.kappas[1]),
            format!("kappa_dt_l43 = {:e}", self.kappas[2]),
        ];
        if let Some(g) = &self.gronwall {
            out.push(format!("gronwall_max_violation = {:e}", g.max_violation));
            out.push(format!("gronwall_holds = {}", g.holds()));
        }
        out
    }
}

/// Adjoint levels in forward-time order.
#[derive(Clone, Debug)]
pub struct AdjointTrajectory {
    pub grid: Grid,
    pub bc: BoundaryCondition,
    pub time: TimeGrid,
    pub stride: usize,
    pub steps: Vec<usize>,
    pub levels: Vec<FieldPair>,
    /// One entry per step `0..=M`.
    pub diagnostics: Vec<AdjointDiagnostics>,
}

impl AdjointTrajectory {
    pub fn at_step(&self, step: usize) -> Option<&FieldPair> {
        self.steps
            .binary_search(&step)
            .ok()
            .map(|i| &self.levels[i])
    }

    pub fn initial(&self) -> &FieldPair {
        &self.levels[0]
    }

    pub fn diagnostics_csv(&self, report: &AdjointBoundsReport) -> String {
        let mut out = String::from(ADJOINT_HEADER);
        out.push('\n');
        for d in &self.diagnostics {
            out.push_str(&d.csv_row());
            out.push('\n');
        }
        for line in report.lines() {
            out.push_str(&line);
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct AdjointRun {
    pub phi: AdjointTrajectory,
    pub report: AdjointBoundsReport,
}

/// `(u₁ + u₂)/2` at every step, piecewise constant between stored levels.
pub struct MeanState<'a> {
    u1: &'a Trajectory,
    u2: &'a Trajectory,
}

impl<'a> MeanState<'a> {
    pub fn new(u1: &'a Trajectory, u2: &'a Trajectory) -> Result<Self> {
        if u1.grid != u2.grid || u1.time != u2.time || u1.bc != u2.bc {
            return Err(SktError::Mismatch(
                "forward trajectories must share grid, time grid and boundary condition"
                    .to_string(),
            ));
        }
        Ok(MeanState { u1, u2 })
    }

    pub fn at_step(&self, step: usize) -> FieldPair {
        let a = self.u1.level_at_step(step);
        let b = self.u2.level_at_step(step);
        a.zip_map(b, |x, y| 0.5 * (x + y))
    }
}

fn energy(f: &FieldPair, lap: &FieldPair) -> f64 {
    -inner(lap, f)
}

/// Marches the adjoint from `φ(T) = χ` back to `t = 0` around the mean of
/// the two forward runs, truncated with `θ_ε`.
pub fn run_adjoint(
    cfg: &RunConfig,
    u1: &Trajectory,
    u2: &Trajectory,
    eps: f64,
    rhs: AdjointRhsKind,
    mode: AdjointMode,
    chi: &FieldPair,
) -> Result<AdjointRun> {
    let mean = MeanState::new(u1, u2)?;
    let trunc = TruncationParam::new(eps)?;
    if chi.grid != u1.grid {
        return Err(SktError::Mismatch(
            "terminal data grid differs from the forward grid".to_string(),
        ));
    }
    if !chi.is_finite() {
        return Err(SktError::NonFinite {
            step: u1.time.steps,
        });
    }
    let c = &cfg.coeffs;
    let bc = u1.bc;
    let time = u1.time;
    let dt = time.dt;
    let m = time.steps;
    let stride = cfg.stride.max(1);
    let w = chi.grid.cell_volume();

    let mut phi = chi.clone();
    let mut lap_next = laplacian(&phi, bc);
    let mut stored = vec![(m, phi.clone())];
    let mut diagnostics = vec![AdjointDiagnostics {
        step: m,
        t: time.t_final,
        h1_phi: h1_norm(&phi, bc),
        ..Default::default()
    }];
    let mut sup_h1 = diagnostics[0].h1_phi;
    let mut weighted = 0.0;
    let mut l43 = 0.0;

    let track = mode == AdjointMode::Continuous;
    let mut trace = GronwallTrace::default();
    let (mut lhs_sum, mut rhs_sum) = (0.0, 0.0);

    for n in (0..m).rev() {
        let ut = trunc.apply_field(&mean.at_step(n));
        let prev = match mode {
            AdjointMode::Continuous => step_adjoint_backward(c, &phi, &ut, bc, dt, rhs)?,
            AdjointMode::Transpose => step_adjoint_transpose(c, &phi, &ut, bc, dt, rhs)?,
        };
        if !prev.is_finite() {
            return Err(SktError::NonFinite { step: n });
        }
        let lap = laplacian(&prev, bc);

        let mut wl = 0.0;
        let mut rate = 0.0;
        let (mut diss, mut src) = (0.0, 0.0);
        for k in 0..prev.grid.len() {
            let s = ut.at(k);
            let xi = lap.at(k);
            wl += (1.0 + s.u + s.v) * xi.norm_sq();
            let d = prev.at(k) - phi.at(k);
            rate += (d.u / dt).abs().powf(4.0 / 3.0) + (d.v / dt).abs().powf(4.0 / 3.0);
            if track {
                diss += (c.d0() + c.alpha * (s.u + s.v)) * xi.norm_sq();
                let p = phi.at(k);
                let forcing = c.jac_q(s).transpose().mul_vec(p) - rhs.apply(c, p);
                src += forcing.dot(xi);
            }
        }
        weighted += dt * w * wl;
        l43 += dt * w * rate;

        if track {
            let e_prev = energy(&prev, &lap);
            let e_next = energy(&phi, &lap_next);
            let weight = (2.0 * (time.t_final - time.time(n))).exp();
            let lhs = e_prev - e_next + 2.0 * dt * w * diss;
            let rhs_step = 2.0 * dt * w * src;
            // Energies are bounded by (4d/h²)‖φ‖², which sets the rounding floor.
            let h = prev.grid.h();
            let e_max =
                4.0 * prev.grid.dim() as f64 / (h * h) * (inner(&prev, &prev) + inner(&phi, &phi));
            let scale = e_prev.abs()
                + e_next.abs()
                + 2.0 * dt * w * (diss.abs() + src.abs())
                + e_max
                + f64::MIN_POSITIVE;
            trace.max_violation = trace.max_violation.max((lhs - rhs_step) / scale);
            lhs_sum += weight * lhs;
            rhs_sum += weight * rhs_step;
            trace.lhs.push(lhs_sum);
            trace.rhs.push(rhs_sum);
        }

        phi = prev;
        lap_next = lap;
        let h1 = h1_norm(&phi, bc);
        sup_h1 = sup_h1.max(h1);
        diagnostics.push(AdjointDiagnostics {
            step: n,
            t: time.time(n),
            h1_phi: h1,
            weighted_lap_partial: weighted,
            dt_l43_partial: l43.powf(0.75),
        });
        if n % stride == 0 {
            stored.push((n, phi.clone()));
        }
    }

    stored.reverse();
    diagnostics.reverse();
    let chi_h1 = h1_norm(chi, bc);
    let dt_l43 = l43.powf(0.75);
    let kappas = if chi_h1 > 0.0 {
        [sup_h1 / chi_h1, weighted / chi_h1, dt_l43 / chi_h1]
    } else {
        [0.0; 3]
    };
    let (steps, levels) = stored.into_iter().unzip();
    Ok(AdjointRun {
        phi: AdjointTrajectory {
            grid: chi.grid,
            bc,
            time,
            stride,
            steps,
            levels,
            diagnostics,
        },
        report: AdjointBoundsReport {
            sup_h1,
            weighted_lap: weighted,
            dt_l43,
            chi_h1,
            kappas,
            gronwall: track.then_some(trace),
        },
    })
}

/// `(‖θ_ε(ũ)‖_{H¹}, ‖ũ‖_{H¹})` at one time level.
pub fn truncation_bound_check(
    u_tilde: &FieldPair,
    eps: f64,
    bc: BoundaryCondition,
) -> Result<(f64, f64)> {
    let t = TruncationParam::new(eps)?;
    Ok((h1_norm(&t.apply_field(u_tilde), bc), h1_norm(u_tilde, bc)))
}

/// Differences between adjoint solutions at consecutive `ε`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpsCauchyRow {
    pub eps: f64,
    pub eps_next: f64,
    /// `sup_t ‖φ_ε − φ_ε'‖_{H¹}` over stored levels.
    pub h1_diff: f64,
    /// `‖Δ_h(φ_ε − φ_ε')‖_{L²(Ω_T)}`, left-endpoint rule over stored levels.
    pub lap_diff: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpsCauchyTable {
    pub rows: Vec<EpsCauchyRow>,
    /// Largest value of the mean state over all steps.
    pub max_u_tilde: f64,
}

impl EpsCauchyTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eps,eps_next,h1_diff,lap_diff\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{:e},{:e},{:e},{:e}\n",
                r.eps, r.eps_next, r.h1_diff, r.lap_diff
            ));
        }
        out
    }
}

/// Runs the adjoint for every `ε` (concurrently) and compares consecutive
/// solutions.
pub fn eps_cauchy_study(
    cfg: &RunConfig,
    u1: &Trajectory,
    u2: &Trajectory,
    chi: &FieldPair,
    eps_list: &[f64],
) -> Result<EpsCauchyTable> {
    let mean = MeanState::new(u1, u2)?;
    let max_u_tilde = (0..=u1.time.steps)
        .map(|n| {
            let m = mean.at_step(n).max();
            m.u.max(m.v)
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let runs: Vec<AdjointRun> = eps_list
        .par_iter()
        .map(|&eps| run_adjoint(cfg, u1, u2, eps, cfg.rhs, cfg.adjoint_mode, chi))
        .collect::<Result<_>>()?;
    let bc = u1.bc;
    let rows = runs
        .windows(2)
        .zip(eps_list.windows(2))
        .map(|(r, e)| {
            let (a, b) = (&r[0].phi, &r[1].phi);
            let mut h1_diff: f64 = 0.0;
            let mut lap_sq = 0.0;
            for i in 0..a.levels.len() {
                let d = a.levels[i].sub(&b.levels[i]);
                h1_diff = h1_diff.max(h1_norm(&d, bc));
                if i + 1 < a.levels.len() {
                    let span = (a.steps[i + 1] - a.steps[i]) as f64 * a.time.dt;
                    let l = laplacian(&d, bc);
                    lap_sq += span * inner(&l, &l);
                }
            }
            EpsCauchyRow {
                eps: e[0],
                eps_next: e[1],
                h1_diff,
                lap_diff: lap_sq.sqrt(),
            }
        })
        .collect();
    Ok(EpsCauchyTable { rows, max_u_tilde })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Preset;
    use crate::forward::{run_forward, SchemeKind};

    #[test]
    fn theta_examples() {
        let t = |x| theta_eps(0.1, SpeciesPair::new(x, 0.0)).unwrap().u;
        assert_eq!(t(5.0), 5.0);
        assert_eq!(t(25.0), 10.0);
        assert!((t(15.0) - 11.25).abs() < 1e-12);
        assert!(theta_eps(0.0, SpeciesPair::ZERO).is_err());
        assert!(theta_eps(-1.0, SpeciesPair::ZERO).is_err());
    }

    #[test]
    fn theta_is_c1_at_knots() {
        for eps in [0.05, 0.3, 1.0, 7.0] {
            let t = TruncationParam::new(eps).unwrap();
            let (a, b) = (t.lower(), t.upper());
            let h = 1e-7 * a;
            for knot in [a, b] {
                assert!((t.apply(knot - h) - t.apply(knot + h)).abs() < 3.0 * h);
                let left = (t.apply(knot) - t.apply(knot - h)) / h;
                let right = (t.apply(knot + h) - t.apply(knot)) / h;
                assert!((left - right).abs() < 1e-5, "eps {eps} knot {knot}");
            }
            assert_eq!(t.derivative(a), 1.0);
            assert_eq!(t.derivative(b), 0.0);
        }
    }

    #[test]
    fn zero_terminal_data_gives_zero_adjoint() {
        let mut cfg = RunConfig::new(1, 16, 1.0, 0.05, 0.005, Coefficients::unit());
        cfg.initial_u = Preset::Constant(1.0);
        let traj = run_forward(&cfg).unwrap();
        let chi = FieldPair::zeros(traj.grid);
        for rhs in [AdjointRhsKind::Identity, AdjointRhsKind::L] {
            for mode in [AdjointMode::Continuous, AdjointMode::Transpose] {
                let run = run_adjoint(&cfg, &traj, &traj, 1.0, rhs, mode, &chi).unwrap();
                assert!(run.phi.levels.iter().all(|f| f.max_abs() == 0.0));
                let r = &run.report;
                assert_eq!([r.sup_h1, r.weighted_lap, r.dt_l43, r.chi_h1], [0.0; 4]);
                assert_eq!(r.kappas, [0.0; 3]);
            }
        }
    }

    #[test]
    fn exponential_oracle() {
        let t_final = 0.5;
        let dt = 0.005;
        let cfg = RunConfig::new(1, 16, 1.0, t_final, dt, Coefficients::unit());
        let traj = run_forward(&cfg).unwrap();
        let chi = FieldPair::constant(traj.grid, 2.0, 2.0);
        for rhs in [AdjointRhsKind::Identity, AdjointRhsKind::L] {
            let run =
                run_adjoint(&cfg, &traj, &traj, 1.0, rhs, AdjointMode::Continuous, &chi).unwrap();
            for (i, &step) in run.phi.steps.iter().enumerate() {
                let exact = 2.0 * (t_final - step as f64 * dt).exp();
                let err = run.phi.levels[i]
                    .map(|s| s - SpeciesPair::new(exact, exact))
                    .max_abs();
                assert!(err <= 3.0 * dt * t_final.exp(), "step {step}: {err}");
            }
            let ratio = run.report.kappas[0];
            assert!((ratio / t_final.exp() - 1.0).abs() < 0.01, "{ratio}");
            assert!(run.report.gronwall.as_ref().unwrap().holds());
        }
    }

    #[test]
    fn transpose_pairing_is_exact() {
        let g = Grid::new(1, 12, 1.0).unwrap();
        let c = Coefficients::unit();
        let ut = FieldPair::from_fn(g, |x| SpeciesPair::new(1.0 + x[0], 2.0 - x[0] * x[0]));
        let ub = FieldPair::from_fn(g, |x| SpeciesPair::new((3.0 * x[0]).sin(), x[0]));
        let phi = FieldPair::from_fn(g, |x| SpeciesPair::new(x[0] * x[0], (2.0 * x[0]).cos()));
        for bc in [BoundaryCondition::Neumann, BoundaryCondition::Dirichlet] {
            let dt = 1e-3;
            let next = step_linearized_forward(&c, &ub, &ut, bc, dt).unwrap();
            let back = step_adjoint_transpose(&c, &phi, &ut, bc, dt, AdjointRhsKind::L).unwrap();
            // ⟨ū¹, φ⟩ = ⟨ū⁰, φ⁰⟩ when R = l.
            let lhs = inner(&next, &phi);
            let rhs = inner(&ub, &back);
            assert!((lhs - rhs).abs() < 1e-13, "{bc:?}: {lhs} vs {rhs}");
        }
    }

    #[test]
    fn truncation_check_examples() {
        let g = Grid::new(1, 20, 1.0).unwrap();
        let bc = BoundaryCondition::Neumann;
        let low = FieldPair::from_fn(g, |x| SpeciesPair::new(0.5 + x[0], 0.2));
        let (a, b) = truncation_bound_check(&low, 0.5, bc).unwrap();
        assert_eq!(a, b);
        let eps = 0.25;
        let high = FieldPair::constant(g, 3.0 / eps, 3.0 / eps);
        let (a, b) = truncation_bound_check(&high, eps, bc).unwrap();
        let expected = h1_norm(&FieldPair::constant(g, 1.0 / eps, 1.0 / eps), bc);
        assert_eq!(a, expected);
        assert!(a < b);
    }

    #[test]
    fn cauchy_differences_vanish_below_threshold() {
        let mut cfg = RunConfig::new(1, 16, 1.0, 0.01, 1e-4, Coefficients::unit());
        cfg.initial_u = Preset::Cosine {
            k: 1,
            amplitude: 1.0,
            offset: 3.0,
        };
        cfg.initial_v = Preset::Constant(1.0);
        let u1 = run_forward(&cfg).unwrap();
        cfg.scheme = SchemeKind::Explicit;
        let u2 = run_forward(&cfg).unwrap();
        let chi = cfg.terminal_field().unwrap();
        let table =
            eps_cauchy_study(&cfg, &u1, &u2, &chi, &[1.0, 0.5, 0.25, 0.125, 0.0625]).unwrap();
        assert!(table.max_u_tilde <= 4.0 && table.max_u_tilde > 3.5);
        assert!(table.rows[0].h1_diff > 0.0);
        for r in &table.rows[2..] {
            assert_eq!((r.h1_diff, r.lap_diff), (0.0, 0.0));
        }
    }

    #[test]
    fn mismatched_runs_are_rejected() {
        let cfg = RunConfig::new(1, 16, 1.0, 0.05, 0.005, Coefficients::unit());
        let a = run_forward(&cfg).unwrap();
        let mut other = cfg.clone();
        other.n = 8;
        let b = run_forward(&other).unwrap();
        let chi = cfg.terminal_field().unwrap();
        let r = run_adjoint(
            &cfg,
            &a,
            &b,
            1.0,
            AdjointRhsKind::Identity,
            AdjointMode::Continuous,
            &chi,
        );
        assert!(matches!(r, Err(SktError::Mismatch(_))));
    }
}
